//! The federation engine: collaborative updating over the public pool,
//! snapshot-based local updating, and the strategy zoo.
//!
//! One communication epoch runs (1) a collaborative phase — every client
//! forwards the same public batch, the server freezes the averages `Z_avg`
//! and `S_avg`, and each client takes an Adam step against those frozen
//! targets — then (2) a local phase of `T` rounds on private data with a
//! per-strategy objective, after which the teacher snapshot is refreshed.
//! Because targets are frozen before any update, client updates within a
//! batch are order-independent: serial and parallel execution agree.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::data::{
    augment, batch_indices, generate_scenario, DomainDataset, PublicPool,
    ScenarioSpec,
};
use crate::error::{Result, SimError};
use crate::losses::{
    ce_loss, collaborative_loss, cross_correlation_matrix, fccm_loss, feddf_loss, fedmd_loss,
    instance_similarity, local_loss_fccl_conference, local_loss_fcclplus, local_loss_plain_kd,
    FntdVariant, LossWithGrad, SimilarityMatrix, GRAD_H_LOCAL, GRAD_Z_LOCAL, GRAD_Z_STUDENT,
};
use crate::metrics::{accuracy, CorrelationDump, MetricsLog, MetricsRecord, Phase};
use crate::models::{
    adam_step, backward, build_scenario_models, Activation, AdamState, ClientModel, ForwardCache,
    ParamGrads, Snapshot,
};
use crate::numerics::Matrix;
use crate::seeds;

/// Training strategy selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum StrategyKind {
    /// Cross-correlation + instance-similarity communication, non-target
    /// distillation locally.
    #[default]
    Fcclplus,
    /// Conference variant: correlation-only communication, plain KD against
    /// both the previous snapshot and the pretrained model locally.
    Fccl,
    /// Mean-squared-error logit consensus, CE-only local phase.
    Fedmd,
    /// Row-softmax KL logit consensus, CE-only local phase.
    Feddf,
    /// Same collaborative phase as fcclplus, but plain tau^2 KD locally.
    PlainKd,
    /// No communication at all; isolated training.
    Solo,
    /// Same collaborative phase as fcclplus; local phase swaps FNTD for a
    /// diagonal-Fisher EWC penalty toward the pretrained snapshot.
    Ewc,
    /// fcclplus plus parameter averaging between the phases; requires
    /// structurally identical clients.
    FedavgHomog,
}

impl StrategyKind {
    pub fn name(self) -> &'static str {
        match self {
            StrategyKind::Fcclplus => "fcclplus",
            StrategyKind::Fccl => "fccl",
            StrategyKind::Fedmd => "fedmd",
            StrategyKind::Feddf => "feddf",
            StrategyKind::PlainKd => "plain_kd",
            StrategyKind::Solo => "solo",
            StrategyKind::Ewc => "ewc",
            StrategyKind::FedavgHomog => "fedavg_homog",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        Ok(match name {
            "fcclplus" => StrategyKind::Fcclplus,
            "fccl" => StrategyKind::Fccl,
            "fedmd" => StrategyKind::Fedmd,
            "feddf" => StrategyKind::Feddf,
            "plain_kd" => StrategyKind::PlainKd,
            "solo" => StrategyKind::Solo,
            "ewc" => StrategyKind::Ewc,
            "fedavg_homog" => StrategyKind::FedavgHomog,
            other => {
                return Err(SimError::Config(format!("unknown strategy '{other}'")));
            }
        })
    }

    fn uses_collaboration(self) -> bool {
        !matches!(self, StrategyKind::Solo)
    }

    fn uses_fccm(self) -> bool {
        matches!(
            self,
            StrategyKind::Fcclplus
                | StrategyKind::Fccl
                | StrategyKind::PlainKd
                | StrategyKind::Ewc
                | StrategyKind::FedavgHomog
        )
    }

    fn uses_fisl(self) -> bool {
        self.uses_fccm() && !matches!(self, StrategyKind::Fccl)
    }

    fn needs_pretrained_snapshot(self) -> bool {
        matches!(self, StrategyKind::Fccl | StrategyKind::Ewc)
    }
}

/// Loss hyper-parameters shared by the strategies.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct LossHyper {
    /// Off-diagonal weight in the correlation loss.
    pub lambda: f64,
    /// Similarity soften factor.
    pub mu: f64,
    /// Weight of the similarity term in the collaborative objective.
    pub omega: f64,
    /// Distillation temperature.
    pub tau: f64,
    pub fntd_variant: FntdVariant,
    /// EWC penalty weight (ewc strategy only).
    pub ewc_lambda: f64,
}

impl Default for LossHyper {
    fn default() -> Self {
        Self {
            lambda: 0.0051,
            mu: 0.02,
            omega: 3.0,
            tau: 3.0,
            fntd_variant: FntdVariant::Renormalized,
            ewc_lambda: 0.1,
        }
    }
}

/// Adam settings, shared by the collaborative and local optimizers.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct OptimSpec {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for OptimSpec {
    fn default() -> Self {
        Self { learning_rate: 0.001, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

/// Per-client extractor widths plus the shared activation.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct ModelSpec {
    pub hidden: Vec<Vec<usize>>,
    pub activation: Activation,
}

impl Default for ModelSpec {
    /// Depth- and width-heterogeneous extractors, one per default domain.
    fn default() -> Self {
        Self {
            hidden: alloc::vec![
                alloc::vec![40],
                alloc::vec![32, 16],
                alloc::vec![56, 28, 14],
                alloc::vec![20, 10]
            ],
            activation: Activation::Tanh,
        }
    }
}

/// Full experiment description.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct FederationConfig {
    pub strategy: StrategyKind,
    /// Communication epochs.
    pub epochs: usize,
    /// Local rounds (full private passes) per epoch.
    pub local_rounds: usize,
    /// Full public-pool passes per collaborative phase.
    pub collab_passes: usize,
    pub collab_batch: usize,
    pub local_batch: usize,
    /// Isolated CE epochs before federation; also the SOLO initialization.
    pub pretrain_epochs: usize,
    pub seed: u64,
    /// Hint for the CLI to run client updates on threads; the engine itself
    /// is given a runner explicitly.
    pub parallel_clients: bool,
    /// Capture each client's correlation matrix after every collaborative
    /// phase.
    pub dump_correlation: bool,
    pub losses: LossHyper,
    pub optim: OptimSpec,
    pub model: ModelSpec,
    pub scenario: ScenarioSpec,
}

impl Default for FederationConfig {
    fn default() -> Self {
        Self {
            strategy: StrategyKind::Fcclplus,
            epochs: 20,
            local_rounds: 5,
            collab_passes: 6,
            collab_batch: 128,
            local_batch: 64,
            pretrain_epochs: 10,
            seed: 7,
            parallel_clients: false,
            dump_correlation: false,
            losses: LossHyper::default(),
            optim: OptimSpec::default(),
            model: ModelSpec::default(),
            scenario: ScenarioSpec::default(),
        }
    }
}

impl FederationConfig {
    /// Structural checks shared by load-time validation and the runner.
    fn check_structure(&self) -> Result<()> {
        self.scenario.validate()?;
        if self.collab_batch < 2 || self.local_batch < 2 {
            return Err(SimError::Config(String::from("batch sizes must be >= 2")));
        }
        if self.model.hidden.len() != self.scenario.domains {
            return Err(SimError::Config(format!(
                "{} model specs for {} domains",
                self.model.hidden.len(),
                self.scenario.domains
            )));
        }
        if self.model.hidden.iter().any(Vec::is_empty) {
            return Err(SimError::Config(String::from(
                "every client needs at least one extractor layer",
            )));
        }
        if !(self.losses.lambda > 0.0)
            || !(self.losses.mu > 0.0)
            || !(self.losses.tau > 0.0)
            || !(self.losses.omega >= 0.0)
            || !(self.losses.ewc_lambda >= 0.0)
        {
            return Err(SimError::Config(String::from(
                "loss hyper-parameters out of range",
            )));
        }
        if !(self.optim.learning_rate > 0.0) {
            return Err(SimError::Config(String::from("learning rate must be positive")));
        }
        if self.strategy.needs_pretrained_snapshot() && self.pretrain_epochs == 0 {
            return Err(SimError::Config(format!(
                "strategy {} needs pretrain_epochs > 0 for the pretrained snapshot",
                self.strategy.name()
            )));
        }
        if matches!(self.strategy, StrategyKind::FedavgHomog) {
            let first = &self.model.hidden[0];
            if self.model.hidden.iter().any(|h| h != first) {
                return Err(SimError::Config(String::from(
                    "fedavg_homog requires structurally identical clients",
                )));
            }
        }
        Ok(())
    }

    /// Load-time validation: everything the engine checks plus `epochs >= 1`
    /// (a zero-epoch run is only meaningful for programmatic baselines).
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(SimError::Config(String::from("epochs must be >= 1")));
        }
        self.check_structure()
    }
}

/// One client's full training state.
#[derive(Debug, Clone)]
pub struct ClientState {
    pub model: ClientModel,
    pub adam_collab: AdamState,
    pub adam_local: AdamState,
    /// Snapshot from the end of the previous epoch's local phase.
    pub teacher: Snapshot,
    /// SOLO-pretrained snapshot (conference-FCCL and EWC need it).
    pub pretrained: Option<Snapshot>,
    /// Diagonal empirical Fisher at the pretrained snapshot (EWC only).
    pub fisher: Option<ParamGrads>,
    pub domain_id: usize,
    scratch: Option<CollabScratch>,
    last_correlation: Option<Matrix>,
    pending_error: Option<SimError>,
    loss_sum: f64,
    loss_count: u64,
}

#[derive(Debug, Clone)]
struct CollabScratch {
    h: Matrix,
    z: Matrix,
    sim: Option<SimilarityMatrix>,
    cache: ForwardCache,
}

impl ClientState {
    fn begin_phase(&mut self) {
        self.loss_sum = 0.0;
        self.loss_count = 0;
        self.pending_error = None;
    }

    fn mean_phase_loss(&self) -> f64 {
        if self.loss_count == 0 {
            0.0
        } else {
            self.loss_sum / self.loss_count as f64
        }
    }

    fn record_loss(&mut self, value: f64) {
        self.loss_sum += value;
        self.loss_count += 1;
    }
}

/// Applies a step to every client; implementations may parallelize. Each
/// client's state is touched by exactly one invocation, and steps only read
/// shared frozen data, so scheduling cannot change results.
pub trait ClientRunner: Sync {
    fn for_each(&self, clients: &mut [ClientState], step: &(dyn Fn(&mut ClientState) + Sync));
}

/// In-order execution on the calling thread.
pub struct SerialRunner;

impl ClientRunner for SerialRunner {
    fn for_each(&self, clients: &mut [ClientState], step: &(dyn Fn(&mut ClientState) + Sync)) {
        for client in clients {
            step(client);
        }
    }
}

fn harvest_errors(clients: &mut [ClientState], context: &str) -> Result<()> {
    for client in clients {
        if let Some(err) = client.pending_error.take() {
            return Err(match err {
                SimError::NonFinite(msg) => SimError::NonFinite(format!("{context}: {msg}")),
                other => other,
            });
        }
    }
    Ok(())
}

fn ensure_finite(value: f64, what: &str, client: usize) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(SimError::NonFinite(format!(
            "{what} loss is {value} for client {client}"
        )))
    }
}

/// The per-client collaborative objective against the frozen averages.
fn collaborative_client_loss(
    cfg: &FederationConfig,
    scratch: &CollabScratch,
    z_avg: &Matrix,
    s_avg: Option<&SimilarityMatrix>,
) -> Result<LossWithGrad> {
    match cfg.strategy {
        StrategyKind::Fcclplus
        | StrategyKind::PlainKd
        | StrategyKind::Ewc
        | StrategyKind::FedavgHomog => {
            let s_avg = s_avg.ok_or_else(|| {
                SimError::State(String::from("missing similarity average for fcclplus phase"))
            })?;
            collaborative_loss(
                &scratch.z,
                z_avg,
                &scratch.h,
                s_avg,
                cfg.losses.lambda,
                cfg.losses.omega,
                cfg.losses.mu,
            )
        }
        StrategyKind::Fccl => {
            fccm_loss(&cross_correlation_matrix(&scratch.z, z_avg)?, cfg.losses.lambda)
        }
        StrategyKind::Feddf => feddf_loss(z_avg, &scratch.z),
        StrategyKind::Fedmd => fedmd_loss(&scratch.z, z_avg),
        StrategyKind::Solo => Err(SimError::State(String::from(
            "solo strategy has no collaborative phase",
        ))),
    }
}

/// One collaborative phase: `collab_passes` full passes over the
/// (augmented) public pool. For every batch the server freezes the averaged
/// logits and similarity distributions first; every client then takes one
/// Adam step against those constants.
pub fn run_collaborative_phase(
    clients: &mut [ClientState],
    public: &PublicPool,
    cfg: &FederationConfig,
    epoch: usize,
    runner: &dyn ClientRunner,
) -> Result<()> {
    if clients.len() < 2 {
        return Err(SimError::Config(format!(
            "collaborative updating needs >= 2 clients, got {}",
            clients.len()
        )));
    }
    if !cfg.strategy.uses_collaboration() {
        return Ok(());
    }
    let x_all = augment(
        &public.x,
        cfg.scenario.augment,
        seeds::substream(cfg.seed, "collab_augment", epoch as u64),
    );
    let batch_seed = seeds::substream(cfg.seed, "collab_batches", 0);
    for pass in 0..cfg.collab_passes {
        let plan = batch_indices(
            x_all.rows(),
            cfg.collab_batch,
            batch_seed,
            (epoch * cfg.collab_passes + pass) as u64,
        )?;
        for batch in &plan {
            let xb = x_all.gather_rows(batch);

            // Client outputs, then the frozen server averages.
            for client in clients.iter_mut() {
                let (h, z, cache) = client.model.forward(&xb)?;
                let sim = if cfg.strategy.uses_fisl() {
                    Some(instance_similarity(&h, cfg.losses.mu)?)
                } else {
                    None
                };
                client.scratch = Some(CollabScratch { h, z, sim, cache });
            }
            let mut z_avg = Matrix::zeros(xb.rows(), clients[0].model.class_count());
            for client in clients.iter() {
                z_avg.add_scaled_in_place(&client.scratch.as_ref().unwrap().z, 1.0);
            }
            let z_avg = z_avg.scaled(1.0 / clients.len() as f64);
            let s_avg = if cfg.strategy.uses_fisl() {
                let sims: Vec<&SimilarityMatrix> = clients
                    .iter()
                    .map(|c| c.scratch.as_ref().unwrap().sim.as_ref().unwrap())
                    .collect();
                Some(SimilarityMatrix::average(&sims)?)
            } else {
                None
            };

            // Order-independent updates against the frozen targets.
            let step = |client: &mut ClientState| {
                if client.pending_error.is_some() {
                    return;
                }
                let result = (|| -> Result<()> {
                    let scratch = client
                        .scratch
                        .take()
                        .ok_or_else(|| SimError::State(String::from("missing batch outputs")))?;
                    let loss =
                        collaborative_client_loss(cfg, &scratch, &z_avg, s_avg.as_ref())?;
                    ensure_finite(loss.value, "collaborative", client.domain_id)?;
                    if cfg.dump_correlation && cfg.strategy.uses_fccm() {
                        client.last_correlation = Some(
                            cross_correlation_matrix(&scratch.z, &z_avg)?.values().clone(),
                        );
                    }
                    let grad_z = loss.grad(GRAD_Z_LOCAL).ok_or_else(|| {
                        SimError::State(String::from("collaborative loss lacks logit gradient"))
                    })?;
                    let grads =
                        backward(&client.model, &scratch.cache, grad_z, loss.grad(GRAD_H_LOCAL))?;
                    adam_step(&mut client.adam_collab, &mut client.model, &grads)?;
                    client.record_loss(loss.value);
                    Ok(())
                })();
                if let Err(err) = result {
                    client.pending_error = Some(err);
                }
            };
            runner.for_each(clients, &step);
            harvest_errors(clients, "collaborative phase")?;
        }
    }
    Ok(())
}

/// Element-wise parameter mean broadcast to all clients (homogeneous mode).
pub fn average_parameters(clients: &mut [ClientState]) -> Result<()> {
    let first_shapes: Vec<(usize, usize)> =
        clients[0].model.params().iter().map(|m| m.shape()).collect();
    for client in clients.iter() {
        let shapes: Vec<(usize, usize)> = client.model.params().iter().map(|m| m.shape()).collect();
        if shapes != first_shapes {
            return Err(SimError::Config(String::from(
                "parameter averaging requires structurally identical clients",
            )));
        }
    }
    let k = clients.len() as f64;
    let mut means: Vec<Matrix> = clients[0].model.params().into_iter().cloned().collect();
    for client in clients.iter().skip(1) {
        for (mean, p) in means.iter_mut().zip(client.model.params()) {
            mean.add_scaled_in_place(p, 1.0);
        }
    }
    for mean in &mut means {
        *mean = mean.map(|v| v / k);
    }
    for client in clients.iter_mut() {
        for (p, mean) in client.model.params_mut().into_iter().zip(&means) {
            *p = mean.clone();
        }
    }
    Ok(())
}

/// EWC quadratic penalty and its parameter-space gradient.
fn ewc_penalty(
    model: &ClientModel,
    pretrained: &Snapshot,
    fisher: &ParamGrads,
    lambda: f64,
) -> (f64, ParamGrads) {
    let mut value = 0.0;
    let mut grads = ParamGrads::zeros_like(model);
    let params = model.params();
    let anchors = pretrained.model().params();
    let fishers = fisher.mats();
    for ((g, p), (a, f)) in grads
        .mats_mut()
        .into_iter()
        .zip(params)
        .zip(anchors.into_iter().zip(fishers))
    {
        for i in 0..p.data().len() {
            let diff = p.data()[i] - a.data()[i];
            let fi = f.data()[i];
            value += lambda * fi * diff * diff;
            g.data_mut()[i] = 2.0 * lambda * fi * diff;
        }
    }
    (value, grads)
}

/// Diagonal empirical Fisher of the CE loss at `snapshot`, estimated on the
/// given data: mean over samples of the squared per-sample gradient.
pub fn estimate_diag_fisher(snapshot: &Snapshot, x: &Matrix, y: &[usize]) -> Result<ParamGrads> {
    let model = snapshot.model();
    let mut fisher = ParamGrads::zeros_like(model);
    let n = x.rows();
    for r in 0..n {
        let row = x.gather_rows(&[r]);
        let (_, z, cache) = model.forward(&row)?;
        let loss = ce_loss(&z, &y[r..=r])?;
        let grads = backward(model, &cache, loss.grad(GRAD_Z_STUDENT).unwrap(), None)?;
        for (f, g) in fisher.mats_mut().into_iter().zip(grads.mats()) {
            for i in 0..f.data().len() {
                let gi = g.data()[i];
                f.data_mut()[i] += gi * gi;
            }
        }
    }
    for f in fisher.mats_mut() {
        for v in f.data_mut() {
            *v /= n as f64;
        }
    }
    Ok(fisher)
}

/// The per-strategy local objective for one private batch.
fn local_batch_loss(
    cfg: &FederationConfig,
    client: &ClientState,
    z_student: &Matrix,
    labels: &[usize],
    xb: &Matrix,
) -> Result<LossWithGrad> {
    match cfg.strategy {
        StrategyKind::Fcclplus | StrategyKind::FedavgHomog => {
            let z_teacher = client.teacher.logits(xb)?;
            local_loss_fcclplus(z_student, labels, &z_teacher, cfg.losses.tau, cfg.losses.fntd_variant)
        }
        StrategyKind::PlainKd => {
            let z_teacher = client.teacher.logits(xb)?;
            local_loss_plain_kd(z_student, labels, &z_teacher, cfg.losses.tau)
        }
        StrategyKind::Fccl => {
            let z_prev = client.teacher.logits(xb)?;
            let pretrained = client.pretrained.as_ref().ok_or_else(|| {
                SimError::Config(String::from("fccl strategy requires a pretrained snapshot"))
            })?;
            let z_star = pretrained.logits(xb)?;
            local_loss_fccl_conference(z_student, labels, &z_prev, Some(&z_star), cfg.losses.tau)
        }
        // EWC's parameter-space penalty is added after backprop.
        StrategyKind::Ewc | StrategyKind::Solo | StrategyKind::Fedmd | StrategyKind::Feddf => {
            ce_loss(z_student, labels)
        }
    }
}

/// One local phase: `local_rounds` shuffled passes over the client's private
/// data with the strategy's objective, then the teacher snapshot refresh.
pub fn run_local_phase(
    client: &mut ClientState,
    data: &DomainDataset,
    cfg: &FederationConfig,
    epoch: usize,
) -> Result<()> {
    if client.teacher.epoch_tag() + 1 != epoch {
        return Err(SimError::State(format!(
            "teacher snapshot from epoch {} used in epoch {epoch}",
            client.teacher.epoch_tag()
        )));
    }
    if cfg.strategy.needs_pretrained_snapshot() && client.pretrained.is_none() {
        return Err(SimError::Config(format!(
            "strategy {} requires a pretrained snapshot",
            cfg.strategy.name()
        )));
    }
    let batch_seed = seeds::substream(cfg.seed, "local_batches", client.domain_id as u64);
    let n = data.train_x.rows();
    for round in 0..cfg.local_rounds {
        let plan = batch_indices(
            n,
            cfg.local_batch,
            batch_seed,
            (epoch * cfg.local_rounds + round) as u64,
        )?;
        for batch in &plan {
            let xb = data.train_x.gather_rows(batch);
            let yb: Vec<usize> = batch.iter().map(|&i| data.train_y[i]).collect();
            let (_, z, cache) = client.model.forward(&xb)?;
            let loss = local_batch_loss(cfg, client, &z, &yb, &xb)?;
            let mut total = loss.value;
            let mut grads = backward(&client.model, &cache, loss.grad(GRAD_Z_STUDENT).unwrap(), None)?;
            if matches!(cfg.strategy, StrategyKind::Ewc) {
                let (penalty, penalty_grads) = ewc_penalty(
                    &client.model,
                    client.pretrained.as_ref().unwrap(),
                    client.fisher.as_ref().ok_or_else(|| {
                        SimError::Config(String::from("ewc strategy requires a Fisher estimate"))
                    })?,
                    cfg.losses.ewc_lambda,
                );
                total += penalty;
                grads.add_scaled_in_place(&penalty_grads, 1.0);
            }
            ensure_finite(total, "local", client.domain_id)?;
            adam_step(&mut client.adam_local, &mut client.model, &grads)?;
            client.record_loss(total);
        }
    }
    client.teacher = Snapshot::of(&client.model, epoch);
    Ok(())
}

/// A finished experiment: the metrics trace plus the final client states.
#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub log: MetricsLog,
    pub clients: Vec<ClientState>,
}

fn evaluate(clients: &[ClientState], domains: &[DomainDataset]) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut intra = Vec::with_capacity(clients.len());
    let mut inter = Vec::with_capacity(clients.len());
    for client in clients {
        let own = &domains[client.domain_id];
        intra.push(accuracy(&client.model, &own.test_x, &own.test_y)?);
        let mut sum = 0.0;
        for other in domains {
            if other.domain_id == client.domain_id {
                continue;
            }
            sum += accuracy(&client.model, &other.test_x, &other.test_y)?;
        }
        inter.push(sum / (domains.len() - 1) as f64);
    }
    Ok((intra, inter))
}

fn record(
    log: &mut MetricsLog,
    clients: &[ClientState],
    domains: &[DomainDataset],
    epoch: usize,
    phase: Phase,
) -> Result<()> {
    let (intra, inter) = evaluate(clients, domains)?;
    log.records.push(MetricsRecord {
        epoch,
        phase,
        intra,
        inter,
        phase_loss: clients.iter().map(ClientState::mean_phase_loss).collect(),
    });
    Ok(())
}

/// Isolated CE pretraining; returns the mean loss over all steps.
fn pretrain_client(
    model: &mut ClientModel,
    data: &DomainDataset,
    cfg: &FederationConfig,
) -> Result<f64> {
    let mut adam = AdamState::new(
        model,
        cfg.optim.learning_rate,
        cfg.optim.beta1,
        cfg.optim.beta2,
        cfg.optim.epsilon,
    );
    let batch_seed = seeds::substream(cfg.seed, "pretrain_batches", data.domain_id as u64);
    let mut loss_sum = 0.0;
    let mut steps = 0u64;
    for ep in 0..cfg.pretrain_epochs {
        let plan = batch_indices(data.train_x.rows(), cfg.local_batch, batch_seed, ep as u64)?;
        for batch in &plan {
            let xb = data.train_x.gather_rows(batch);
            let yb: Vec<usize> = batch.iter().map(|&i| data.train_y[i]).collect();
            let (_, z, cache) = model.forward(&xb)?;
            let loss = ce_loss(&z, &yb)?;
            ensure_finite(loss.value, "pretrain", data.domain_id)?;
            let grads = backward(model, &cache, loss.grad(GRAD_Z_STUDENT).unwrap(), None)?;
            adam_step(&mut adam, model, &grads)?;
            loss_sum += loss.value;
            steps += 1;
        }
    }
    Ok(if steps == 0 { 0.0 } else { loss_sum / steps as f64 })
}

/// Run a full experiment with the serial runner.
pub fn run_experiment(cfg: &FederationConfig) -> Result<ExperimentOutput> {
    run_experiment_with(cfg, &SerialRunner)
}

/// Run a full experiment: scenario generation, SOLO pretraining, then
/// `epochs` cycles of collaborative + local updating with metrics after each
/// phase. Fully deterministic given the config.
pub fn run_experiment_with(
    cfg: &FederationConfig,
    runner: &dyn ClientRunner,
) -> Result<ExperimentOutput> {
    cfg.check_structure()?;
    let (domains, public) = generate_scenario(&cfg.scenario, cfg.seed)?;
    let models = build_scenario_models(
        &cfg.model.hidden,
        cfg.scenario.input_dim,
        cfg.scenario.classes,
        cfg.model.activation,
        cfg.seed,
    )?;

    let mut clients: Vec<ClientState> = Vec::with_capacity(models.len());
    let mut pretrain_losses = Vec::with_capacity(models.len());
    for (domain_id, mut model) in models.into_iter().enumerate() {
        let mean_loss = pretrain_client(&mut model, &domains[domain_id], cfg)?;
        pretrain_losses.push(mean_loss);
        let snapshot = Snapshot::of(&model, 0);
        let fisher = if matches!(cfg.strategy, StrategyKind::Ewc) {
            Some(estimate_diag_fisher(
                &snapshot,
                &domains[domain_id].train_x,
                &domains[domain_id].train_y,
            )?)
        } else {
            None
        };
        let adam_collab = AdamState::new(
            &model,
            cfg.optim.learning_rate,
            cfg.optim.beta1,
            cfg.optim.beta2,
            cfg.optim.epsilon,
        );
        let adam_local = adam_collab.clone();
        clients.push(ClientState {
            teacher: snapshot.clone(),
            pretrained: Some(snapshot),
            fisher,
            model,
            adam_collab,
            adam_local,
            domain_id,
            scratch: None,
            last_correlation: None,
            pending_error: None,
            loss_sum: 0.0,
            loss_count: 0,
        });
    }

    let mut log = MetricsLog::default();
    let (intra, inter) = evaluate(&clients, &domains)?;
    log.records.push(MetricsRecord {
        epoch: 0,
        phase: Phase::Pretrain,
        intra,
        inter,
        phase_loss: pretrain_losses,
    });

    for epoch in 1..=cfg.epochs {
        for client in clients.iter_mut() {
            client.begin_phase();
        }
        if cfg.strategy.uses_collaboration() {
            run_collaborative_phase(&mut clients, &public, cfg, epoch, runner)
                .map_err(|e| annotate_epoch(e, epoch))?;
            if matches!(cfg.strategy, StrategyKind::FedavgHomog) {
                average_parameters(&mut clients)?;
            }
        }
        record(&mut log, &clients, &domains, epoch, Phase::PostCollab)?;
        if cfg.dump_correlation {
            for client in clients.iter_mut() {
                if let Some(values) = client.last_correlation.take() {
                    log.correlations.push(CorrelationDump {
                        epoch,
                        client: client.domain_id,
                        values,
                    });
                }
            }
        }

        for client in clients.iter_mut() {
            client.begin_phase();
        }
        let step = |client: &mut ClientState| {
            if client.pending_error.is_some() {
                return;
            }
            if let Err(err) = run_local_phase(client, &domains[client.domain_id], cfg, epoch) {
                client.pending_error = Some(err);
            }
        };
        runner.for_each(&mut clients, &step);
        harvest_errors(&mut clients, "local phase").map_err(|e| annotate_epoch(e, epoch))?;
        record(&mut log, &clients, &domains, epoch, Phase::PostLocal)?;
    }

    Ok(ExperimentOutput { log, clients })
}

fn annotate_epoch(err: SimError, epoch: usize) -> SimError {
    match err {
        SimError::NonFinite(msg) => SimError::NonFinite(format!("epoch {epoch}: {msg}")),
        other => other,
    }
}
