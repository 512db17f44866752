//! Threaded client runner. Each client's step runs on its own scoped
//! thread; steps only read frozen shared targets and mutate their own
//! client, so results are identical to serial execution.

use hetfed_core::federation::{ClientRunner, ClientState};

pub struct ThreadRunner;

impl ClientRunner for ThreadRunner {
    fn for_each(&self, clients: &mut [ClientState], step: &(dyn Fn(&mut ClientState) + Sync)) {
        std::thread::scope(|scope| {
            for client in clients.iter_mut() {
                scope.spawn(move || step(client));
            }
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use hetfed_core::federation::{
        run_experiment_with, FederationConfig, SerialRunner, StrategyKind,
    };

    #[test]
    fn threaded_and_serial_runs_agree() {
        let cfg = FederationConfig {
            strategy: StrategyKind::Fcclplus,
            epochs: 2,
            local_rounds: 1,
            pretrain_epochs: 2,
            collab_batch: 32,
            local_batch: 16,
            seed: 5,
            ..FederationConfig::default()
        };
        let serial = run_experiment_with(&cfg, &SerialRunner).unwrap();
        let threaded = run_experiment_with(&cfg, &ThreadRunner).unwrap();
        for (a, b) in serial.clients.iter().zip(&threaded.clients) {
            for (x, y) in a.model.params().iter().zip(b.model.params()) {
                assert!(x.max_abs_diff(y) <= 1e-12);
            }
        }
        for (ra, rb) in serial.log.records.iter().zip(&threaded.log.records) {
            assert_eq!(ra.intra, rb.intra);
            assert_eq!(ra.inter, rb.inter);
        }
    }
}
