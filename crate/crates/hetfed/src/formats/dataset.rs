//! Dataset container: pins the exact generated data of an experiment so runs
//! can be reproduced even across generator changes.
//!
//! Layout (text, one record per line group):
//!
//! ```text
//! HETFED-DATASET v1
//! meta domains=<K> classes=<C> input_dim=<D>
//! domain id=<i> train=<N> test=<M> latent_seed=<seed>
//! rotation            # D lines of D values
//! scale               # one line
//! bias                # one line
//! train_x             # N lines
//! train_y             # one line of class indices
//! test_x              # M lines
//! test_y              # one line
//! ...                 # next domain
//! public n=<N0> provenance=<mixture|held_out>
//! <N0 lines>
//! end
//! ```
//!
//! Values use shortest round-trip `Display`, so load is bit-exact.

use std::fmt::Write as _;
use std::io;
use std::path::Path;

use hetfed_core::data::{DomainDataset, DomainTransform, PoolProvenance, PublicPool};
use hetfed_core::{Matrix, Result, SimError};

use super::write_atomic;

const MAGIC: &str = "HETFED-DATASET v1";

fn push_matrix_rows(out: &mut String, m: &Matrix) {
    for r in 0..m.rows() {
        for c in 0..m.cols() {
            if c > 0 {
                out.push(' ');
            }
            let _ = write!(out, "{}", m[(r, c)]);
        }
        out.push('\n');
    }
}

fn push_floats(out: &mut String, values: &[f64]) {
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        let _ = write!(out, "{v}");
    }
    out.push('\n');
}

fn push_labels(out: &mut String, values: &[usize]) {
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        let _ = write!(out, "{v}");
    }
    out.push('\n');
}

pub fn format_dataset(domains: &[DomainDataset], public: &PublicPool) -> String {
    let input_dim = public.x.cols();
    let classes = domains
        .iter()
        .flat_map(|d| d.train_y.iter())
        .max()
        .map_or(0, |m| m + 1);
    let mut out = String::new();
    let _ = writeln!(out, "{MAGIC}");
    let _ = writeln!(
        out,
        "meta domains={} classes={classes} input_dim={input_dim}",
        domains.len()
    );
    for d in domains {
        let _ = writeln!(
            out,
            "domain id={} train={} test={} latent_seed={}",
            d.domain_id,
            d.train_y.len(),
            d.test_y.len(),
            d.latent_seed
        );
        out.push_str("rotation\n");
        push_matrix_rows(&mut out, &d.transform.rotation);
        out.push_str("scale\n");
        push_floats(&mut out, &d.transform.scale);
        out.push_str("bias\n");
        push_floats(&mut out, &d.transform.bias);
        out.push_str("train_x\n");
        push_matrix_rows(&mut out, &d.train_x);
        out.push_str("train_y\n");
        push_labels(&mut out, &d.train_y);
        out.push_str("test_x\n");
        push_matrix_rows(&mut out, &d.test_x);
        out.push_str("test_y\n");
        push_labels(&mut out, &d.test_y);
    }
    let provenance = match public.provenance {
        PoolProvenance::Mixture => "mixture",
        PoolProvenance::HeldOut => "held_out",
    };
    let _ = writeln!(out, "public n={} provenance={provenance}", public.x.rows());
    push_matrix_rows(&mut out, &public.x);
    out.push_str("end\n");
    out
}

pub fn write_dataset(domains: &[DomainDataset], public: &PublicPool, path: &Path) -> io::Result<()> {
    write_atomic(path, &format_dataset(domains, public))
}

struct Lines<'a> {
    inner: core::str::Lines<'a>,
    number: usize,
}

impl<'a> Lines<'a> {
    fn next(&mut self) -> Result<&'a str> {
        self.number += 1;
        self.inner
            .next()
            .ok_or_else(|| SimError::Parameter(format!("dataset truncated at line {}", self.number)))
    }

    fn expect(&mut self, tag: &str) -> Result<()> {
        let line = self.next()?;
        if line != tag {
            return Err(SimError::Parameter(format!(
                "dataset line {}: expected '{tag}', found '{line}'",
                self.number
            )));
        }
        Ok(())
    }
}

fn parse_kv(pairs: &str, key: &str) -> Result<u64> {
    for part in pairs.split_whitespace() {
        if let Some(value) = part.strip_prefix(key).and_then(|s| s.strip_prefix('=')) {
            return value
                .parse()
                .map_err(|e| SimError::Parameter(format!("bad '{key}' value: {e}")));
        }
    }
    Err(SimError::Parameter(format!("missing '{key}' in '{pairs}'")))
}

fn parse_float_line(line: &str) -> Result<Vec<f64>> {
    line.split_whitespace()
        .map(|t| {
            t.parse()
                .map_err(|e| SimError::Parameter(format!("bad float '{t}': {e}")))
        })
        .collect()
}

fn parse_matrix(lines: &mut Lines<'_>, rows: usize) -> Result<Matrix> {
    let mut data: Vec<Vec<f64>> = Vec::with_capacity(rows);
    for _ in 0..rows {
        data.push(parse_float_line(lines.next()?)?);
    }
    Matrix::from_rows(&data)
}

fn parse_label_line(line: &str) -> Result<Vec<usize>> {
    line.split_whitespace()
        .map(|t| {
            t.parse()
                .map_err(|e| SimError::Parameter(format!("bad label '{t}': {e}")))
        })
        .collect()
}

pub fn parse_dataset(text: &str) -> Result<(Vec<DomainDataset>, PublicPool)> {
    let mut lines = Lines { inner: text.lines(), number: 0 };
    let magic = lines.next()?;
    if magic != MAGIC {
        return Err(SimError::Parameter(format!(
            "bad dataset magic '{magic}', expected '{MAGIC}'"
        )));
    }
    let meta = lines.next()?;
    let domain_count = parse_kv(meta, "domains")? as usize;
    let input_dim = parse_kv(meta, "input_dim")? as usize;

    let mut domains = Vec::with_capacity(domain_count);
    for _ in 0..domain_count {
        let header = lines.next()?;
        let id = parse_kv(header, "id")? as usize;
        let train = parse_kv(header, "train")? as usize;
        let test = parse_kv(header, "test")? as usize;
        let latent_seed = parse_kv(header, "latent_seed")?;
        lines.expect("rotation")?;
        let rotation = parse_matrix(&mut lines, input_dim)?;
        lines.expect("scale")?;
        let scale = parse_float_line(lines.next()?)?;
        lines.expect("bias")?;
        let bias = parse_float_line(lines.next()?)?;
        lines.expect("train_x")?;
        let train_x = parse_matrix(&mut lines, train)?;
        lines.expect("train_y")?;
        let train_y = parse_label_line(lines.next()?)?;
        lines.expect("test_x")?;
        let test_x = parse_matrix(&mut lines, test)?;
        lines.expect("test_y")?;
        let test_y = parse_label_line(lines.next()?)?;
        domains.push(DomainDataset {
            domain_id: id,
            train_x,
            train_y,
            test_x,
            test_y,
            transform: DomainTransform { rotation, scale, bias },
            latent_seed,
        });
    }
    let header = lines.next()?;
    let n = parse_kv(header, "n")? as usize;
    let provenance = if header.contains("provenance=held_out") {
        PoolProvenance::HeldOut
    } else {
        PoolProvenance::Mixture
    };
    let x = parse_matrix(&mut lines, n)?;
    lines.expect("end")?;
    Ok((domains, PublicPool { x, provenance }))
}

pub fn load_dataset(path: &Path) -> Result<(Vec<DomainDataset>, PublicPool)> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| SimError::Parameter(format!("{}: {e}", path.display())))?;
    parse_dataset(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use hetfed_core::data::{generate_scenario, AugmentMode, ScenarioSpec};

    #[test]
    fn round_trip_is_bit_exact() {
        let spec = ScenarioSpec {
            domains: 2,
            classes: 3,
            input_dim: 4,
            train_sizes: vec![12, 9],
            test_size: 5,
            shift_strength: 0.7,
            noise_sigma: 0.3,
            class_separation: 1.0,
            public_size: 15,
            public_provenance: PoolProvenance::Mixture,
            public_relevance: 1.0,
            public_shift_scale: 1.0,
            augment: AugmentMode::Off,
        };
        let (domains, public) = generate_scenario(&spec, 42).unwrap();
        let text = format_dataset(&domains, &public);
        let (domains2, public2) = parse_dataset(&text).unwrap();
        assert_eq!(public.x.data(), public2.x.data());
        for (a, b) in domains.iter().zip(&domains2) {
            assert_eq!(a.train_x.data(), b.train_x.data());
            assert_eq!(a.train_y, b.train_y);
            assert_eq!(a.test_x.data(), b.test_x.data());
            assert_eq!(a.test_y, b.test_y);
            assert_eq!(a.transform.rotation.data(), b.transform.rotation.data());
            assert_eq!(a.transform.scale, b.transform.scale);
            assert_eq!(a.transform.bias, b.transform.bias);
            assert_eq!(a.latent_seed, b.latent_seed);
        }
    }

    #[test]
    fn bad_magic_is_rejected() {
        assert!(parse_dataset("HETFED-DATASET v9\n").is_err());
    }
}
