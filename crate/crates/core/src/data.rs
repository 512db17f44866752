//! Synthetic multi-domain scenarios with controllable domain shift.
//!
//! All domains share one latent class geometry (fixed class means). Each
//! domain owns a transform — an orthogonal rotation composed with per-dim
//! scaling and a bias — whose magnitude scales with `shift_strength`, so the
//! same label has distinctive features in different domains while the task
//! stays solvable. The unlabeled public pool is drawn from the mixture of
//! those transforms (or a held-out one) using fresh latent samples.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Result, SimError};
use crate::numerics::Matrix;
use crate::seeds;

/// Where the public pool's samples come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum PoolProvenance {
    /// Equal mixture of all domain transforms.
    #[default]
    Mixture,
    /// A single extra transform no client trains on.
    HeldOut,
}

/// Augmentation applied to public batches before the collaborative phase.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum AugmentMode {
    Off,
    #[default]
    Weak,
    Strong,
}

/// Scenario description: domain count, label space, sizes, and shift knobs.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct ScenarioSpec {
    pub domains: usize,
    pub classes: usize,
    pub input_dim: usize,
    pub train_sizes: Vec<usize>,
    pub test_size: usize,
    pub shift_strength: f64,
    pub noise_sigma: f64,
    pub class_separation: f64,
    pub public_size: usize,
    pub public_provenance: PoolProvenance,
    /// How much the pool's class geometry matches the private task's, in
    /// `[0, 1]`: 1 draws pool samples around the task's own class means,
    /// 0 around an independent set (public data with unrelated semantics).
    /// Blending preserves the marginal scale of the means.
    pub public_relevance: f64,
    /// Shift multiplier for the held-out pool transform relative to
    /// `shift_strength`; 0 puts the pool at the shared latent geometry,
    /// 1 makes it as displaced as a private domain. Ignored for mixture
    /// pools, which reuse the domain transforms unchanged.
    pub public_shift_scale: f64,
    pub augment: AugmentMode,
}

impl Default for ScenarioSpec {
    /// The desk-scale default: four strongly shifted domains with
    /// imbalanced private data over five classes, communicating through a
    /// 1000-sample pool drawn from a held-out transform (public data that
    /// belongs to none of the participants).
    fn default() -> Self {
        Self {
            domains: 4,
            classes: 5,
            input_dim: 16,
            train_sizes: vec![150, 80, 500, 300],
            test_size: 150,
            shift_strength: 1.3,
            noise_sigma: 0.45,
            class_separation: 0.8,
            public_size: 1000,
            public_provenance: PoolProvenance::HeldOut,
            public_relevance: 1.0,
            public_shift_scale: 1.0,
            augment: AugmentMode::Weak,
        }
    }
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<()> {
        if self.domains < 2 {
            return Err(SimError::Parameter(format!(
                "need >= 2 domains, got {}",
                self.domains
            )));
        }
        if self.classes < 2 {
            return Err(SimError::Parameter(format!(
                "need >= 2 classes, got {}",
                self.classes
            )));
        }
        if self.input_dim < 2 {
            return Err(SimError::Parameter(String::from("input_dim must be >= 2")));
        }
        if self.train_sizes.len() != self.domains {
            return Err(SimError::Parameter(format!(
                "{} train sizes for {} domains",
                self.train_sizes.len(),
                self.domains
            )));
        }
        if self.train_sizes.contains(&0) || self.test_size == 0 {
            return Err(SimError::Parameter(String::from("dataset sizes must be positive")));
        }
        if self.public_size == 0 {
            return Err(SimError::Parameter(String::from("public pool must be non-empty")));
        }
        if !(self.noise_sigma >= 0.0) || !(self.shift_strength >= 0.0) {
            return Err(SimError::Parameter(String::from(
                "noise_sigma and shift_strength must be non-negative",
            )));
        }
        if !(0.0..=1.0).contains(&self.public_relevance) {
            return Err(SimError::Parameter(format!(
                "public_relevance must lie in [0, 1], got {}",
                self.public_relevance
            )));
        }
        if !(self.public_shift_scale >= 0.0) {
            return Err(SimError::Parameter(String::from(
                "public_shift_scale must be non-negative",
            )));
        }
        Ok(())
    }
}

/// One domain's feature transform: `x = scale . (R latent) + bias`.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainTransform {
    pub rotation: Matrix,
    pub scale: Vec<f64>,
    pub bias: Vec<f64>,
}

impl DomainTransform {
    pub fn apply(&self, latents: &Matrix) -> Matrix {
        let dim = self.scale.len();
        let mut out = Matrix::zeros(latents.rows(), dim);
        for r in 0..latents.rows() {
            let lat = latents.row(r);
            for c in 0..dim {
                let mut v = 0.0;
                for (k, &l) in lat.iter().enumerate() {
                    v += self.rotation[(c, k)] * l;
                }
                out[(r, c)] = self.scale[c] * v + self.bias[c];
            }
        }
        out
    }
}

/// Labeled private data for one domain plus its held-out test split.
#[derive(Debug, Clone)]
pub struct DomainDataset {
    pub domain_id: usize,
    pub train_x: Matrix,
    pub train_y: Vec<usize>,
    pub test_x: Matrix,
    pub test_y: Vec<usize>,
    pub transform: DomainTransform,
    /// Sub-seed of this domain's latent stream; re-drawing from it and
    /// applying `transform` reproduces the splits bit-exactly.
    pub latent_seed: u64,
}

/// Unlabeled public pool. Carries no label field by construction.
#[derive(Debug, Clone)]
pub struct PublicPool {
    pub x: Matrix,
    pub provenance: PoolProvenance,
}

/// Latent class means shared by every domain; pure function of the seed.
pub fn class_means(spec: &ScenarioSpec, seed: u64) -> Matrix {
    let mut rng = seeds::rng(seed, "data.means", 0);
    let mut means = Matrix::zeros(spec.classes, spec.input_dim);
    for i in 0..means.data().len() {
        let g: f64 = StandardNormal.sample(&mut rng);
        means.data_mut()[i] = spec.class_separation * g;
    }
    means
}

/// Per-domain transforms; index `spec.domains` (when asked for) is the
/// held-out transform used by a [`PoolProvenance::HeldOut`] pool.
pub fn domain_transforms(spec: &ScenarioSpec, seed: u64, count: usize) -> Vec<DomainTransform> {
    (0..count)
        .map(|i| {
            let mut rng = seeds::rng(seed, "data.transform", i as u64);
            // Indices beyond the private domains belong to the held-out
            // pool transform, which carries its own shift scale.
            let shift = if i < spec.domains {
                spec.shift_strength
            } else {
                spec.shift_strength * spec.public_shift_scale
            };
            let dim = spec.input_dim;
            let mut rotation = Matrix::identity(dim);
            // Product of random Givens rotations; angles scale with shift.
            for _ in 0..dim {
                let p = rng.random_range(0..dim);
                let mut q = rng.random_range(0..dim - 1);
                if q >= p {
                    q += 1;
                }
                let angle: f64 = shift
                    * rng.random_range(-core::f64::consts::FRAC_PI_4..core::f64::consts::FRAC_PI_4);
                let (sin, cos) = (Float::sin(angle), Float::cos(angle));
                for c in 0..dim {
                    let rp = rotation[(p, c)];
                    let rq = rotation[(q, c)];
                    rotation[(p, c)] = cos * rp - sin * rq;
                    rotation[(q, c)] = sin * rp + cos * rq;
                }
            }
            let scale: Vec<f64> = (0..dim)
                .map(|_| Float::exp(shift * rng.random_range(-0.35..0.35)))
                .collect();
            let bias: Vec<f64> =
                (0..dim).map(|_| shift * rng.random_range(-0.8..0.8)).collect();
            DomainTransform { rotation, scale, bias }
        })
        .collect()
}

/// Draw `count` labeled latent samples from the class-mean mixture.
pub fn draw_latent_samples(
    means: &Matrix,
    noise_sigma: f64,
    count: usize,
    rng: &mut impl Rng,
) -> (Matrix, Vec<usize>) {
    let classes = means.rows();
    let dim = means.cols();
    let mut latents = Matrix::zeros(count, dim);
    let mut labels = Vec::with_capacity(count);
    for r in 0..count {
        let class = rng.random_range(0..classes);
        labels.push(class);
        for c in 0..dim {
            let g: f64 = StandardNormal.sample(rng);
            latents[(r, c)] = means[(class, c)] + noise_sigma * g;
        }
    }
    (latents, labels)
}

/// Class means the pool samples around: the task means blended with an
/// independent draw so `public_relevance` controls semantic closeness.
pub fn public_pool_means(spec: &ScenarioSpec, seed: u64, task_means: &Matrix) -> Matrix {
    let relevance = spec.public_relevance;
    if relevance >= 1.0 {
        return task_means.clone();
    }
    let mut rng = seeds::rng(seed, "data.public_means", 0);
    let fresh_weight = Float::sqrt(1.0 - relevance * relevance);
    let mut means = task_means.clone();
    for value in means.data_mut() {
        let g: f64 = StandardNormal.sample(&mut rng);
        *value = relevance * *value + fresh_weight * spec.class_separation * g;
    }
    means
}

fn generate_public(
    spec: &ScenarioSpec,
    seed: u64,
    transforms: &[DomainTransform],
    means: &Matrix,
) -> (Matrix, Vec<usize>) {
    let means = &public_pool_means(spec, seed, means);
    let mut rng = seeds::rng(seed, "data.public", 0);
    let dim = spec.input_dim;
    let mut x = Matrix::zeros(spec.public_size, dim);
    let mut classes = Vec::with_capacity(spec.public_size);
    let mut latent = Matrix::zeros(1, dim);
    for r in 0..spec.public_size {
        let transform = match spec.public_provenance {
            PoolProvenance::Mixture => &transforms[rng.random_range(0..spec.domains)],
            PoolProvenance::HeldOut => &transforms[spec.domains],
        };
        let class = rng.random_range(0..spec.classes);
        classes.push(class);
        for c in 0..dim {
            let g: f64 = StandardNormal.sample(&mut rng);
            latent[(0, c)] = means[(class, c)] + spec.noise_sigma * g;
        }
        let row = transform.apply(&latent);
        x.row_mut(r).copy_from_slice(row.row(0));
    }
    (x, classes)
}

/// Generate every domain dataset and the public pool; bit-reproducible from
/// `(spec, seed)`.
pub fn generate_scenario(
    spec: &ScenarioSpec,
    seed: u64,
) -> Result<(Vec<DomainDataset>, PublicPool)> {
    spec.validate()?;
    let means = class_means(spec, seed);
    let transform_count = match spec.public_provenance {
        PoolProvenance::Mixture => spec.domains,
        PoolProvenance::HeldOut => spec.domains + 1,
    };
    let transforms = domain_transforms(spec, seed, transform_count);

    let mut domains = Vec::with_capacity(spec.domains);
    for (i, &train_size) in spec.train_sizes.iter().enumerate() {
        let latent_seed = seeds::substream(seed, "data.latent", i as u64);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(latent_seed);
        let (train_lat, train_y) = draw_latent_samples(&means, spec.noise_sigma, train_size, &mut rng);
        let (test_lat, test_y) = draw_latent_samples(&means, spec.noise_sigma, spec.test_size, &mut rng);
        let transform = transforms[i].clone();
        domains.push(DomainDataset {
            domain_id: i,
            train_x: transform.apply(&train_lat),
            train_y,
            test_x: transform.apply(&test_lat),
            test_y,
            transform,
            latent_seed,
        });
    }

    let (public_x, _classes) = generate_public(spec, seed, &transforms, &means);
    Ok((
        domains,
        PublicPool { x: public_x, provenance: spec.public_provenance },
    ))
}

/// Latent class of each public-pool sample, replayed from the same streams
/// that generated the pool. Diagnostic only: the pool itself never carries
/// labels.
pub fn public_pool_classes(spec: &ScenarioSpec, seed: u64) -> Result<Vec<usize>> {
    spec.validate()?;
    let means = class_means(spec, seed);
    let transform_count = match spec.public_provenance {
        PoolProvenance::Mixture => spec.domains,
        PoolProvenance::HeldOut => spec.domains + 1,
    };
    let transforms = domain_transforms(spec, seed, transform_count);
    Ok(generate_public(spec, seed, &transforms, &means).1)
}

/// Vector-space analog of image augmentation. Weak adds Gaussian jitter
/// (sigma `0.05 x` feature std) and masks coordinates to zero with p = 0.1;
/// strong additionally rescales each coordinate by `U(0.6, 1.4)` and jitters
/// at `0.2 x` feature std.
pub fn augment(x: &Matrix, mode: AugmentMode, seed: u64) -> Matrix {
    if matches!(mode, AugmentMode::Off) {
        return x.clone();
    }
    let mut rng = seeds::rng(seed, "augment", 0);
    let rows = x.rows();
    let cols = x.cols();
    // per-feature std across the batch
    let mut stds = vec![0.0; cols];
    for c in 0..cols {
        let mean = (0..rows).map(|r| x[(r, c)]).sum::<f64>() / rows as f64;
        let var = (0..rows).map(|r| (x[(r, c)] - mean) * (x[(r, c)] - mean)).sum::<f64>()
            / rows as f64;
        stds[c] = Float::sqrt(var);
    }
    let jitter_scale = match mode {
        AugmentMode::Weak => 0.05,
        AugmentMode::Strong => 0.2,
        AugmentMode::Off => unreachable!(),
    };
    let mut out = x.clone();
    for r in 0..rows {
        for c in 0..cols {
            let mut v = out[(r, c)];
            if matches!(mode, AugmentMode::Strong) {
                v *= rng.random_range(0.6..1.4);
            }
            let g: f64 = StandardNormal.sample(&mut rng);
            v += jitter_scale * stds[c] * g;
            if rng.random_range(0.0..1.0) < 0.1 {
                v = 0.0;
            }
            out[(r, c)] = v;
        }
    }
    out
}

/// Deterministic shuffled batch index plan for one epoch. The permutation is
/// a pure function of `(seed, epoch)`; a final batch shorter than 2 rows is
/// dropped (pairwise losses need at least two instances).
pub fn batch_indices(
    n_rows: usize,
    batch_size: usize,
    seed: u64,
    epoch: u64,
) -> Result<Vec<Vec<usize>>> {
    if batch_size < 2 {
        return Err(SimError::Parameter(format!(
            "batch size must be >= 2, got {batch_size}"
        )));
    }
    let mut order: Vec<usize> = (0..n_rows).collect();
    let mut rng = seeds::rng(seed, "batches", epoch);
    // Fisher-Yates, kept explicit so the permutation is pinned to this
    // implementation rather than a library detail.
    for i in (1..order.len()).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
    let mut batches: Vec<Vec<usize>> = order.chunks(batch_size).map(<[usize]>::to_vec).collect();
    if let Some(last) = batches.last() {
        if last.len() < 2 {
            batches.pop();
        }
    }
    Ok(batches)
}
