//! The associated one-dimensional random walk and its renewal machinery.
//!
//! For a boundary-case law the many-to-one formula turns sums over a
//! generation into expectations along a mean-zero walk `(S_n)` whose step has
//! law `E Σ_{|x|=1} f(V(x)) e^{-V(x)}`. This module samples that walk and
//! estimates the objects built from it: strict descending ladder heights,
//! the renewal function `R(u) = Σ_k P(|H_k| ≤ u)`, the persistence
//! probabilities `P(min_{k≤n} S_k ≥ -u)` and expectations under the walk
//! conditioned to stay above `-α` (Doob transform by `R_α(u) = R(u + α)`).

use std::fs::File;
use std::io::Write as _;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::law::{Family, Law};
use crate::rng::{self, domain, SimRng, SHARD_SIZE};
use crate::stats::{Estimate, MeanAcc};

/// Steps after which a ladder excursion is abandoned.
pub const EXCURSION_CAP: u64 = 10_000_000;

#[derive(Debug, Clone)]
enum Step {
    Gaussian { mean: f64, sd: f64 },
    Discrete { values: Vec<f64>, probs: Vec<f64>, cdf: Vec<f64> },
}

/// The walk `(S_n)` attached to a certified law.
#[derive(Debug, Clone)]
pub struct WalkModel {
    step: Step,
    sigma2: f64,
}

/// Builds the associated walk of a boundary-certified law.
pub fn derive_walk(law: &Law) -> Result<WalkModel> {
    law.require_certified("derive_walk")?;
    let sigma2 = law.exp_moments().e_v2sum;
    let step = match law.family() {
        Family::BinaryGaussian { mu, s2 } | Family::CountGaussian { mu, s2, .. } => Step::Gaussian {
            mean: mu - s2,
            sd: s2.sqrt(),
        },
        Family::Tabular { atoms } => {
            let mut pairs: Vec<(f64, f64)> = atoms
                .iter()
                .filter(|a| a.p > 0.0)
                .flat_map(|a| a.displacements.iter().map(move |&v| (v, a.p * (-v).exp())))
                .collect();
            pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut values: Vec<f64> = Vec::new();
            let mut probs: Vec<f64> = Vec::new();
            for (v, w) in pairs {
                if values.last() == Some(&v) {
                    *probs.last_mut().unwrap() += w;
                } else {
                    values.push(v);
                    probs.push(w);
                }
            }
            let total: f64 = probs.iter().sum();
            probs.iter_mut().for_each(|p| *p /= total);
            let mut acc = 0.0;
            let mut cdf: Vec<f64> = probs
                .iter()
                .map(|p| {
                    acc += p;
                    acc
                })
                .collect();
            *cdf.last_mut().unwrap() = f64::INFINITY;
            Step::Discrete { values, probs, cdf }
        }
    };
    Ok(WalkModel { step, sigma2 })
}

impl WalkModel {
    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    pub fn sigma(&self) -> f64 {
        self.sigma2.sqrt()
    }

    /// Exact mean of one step; zero up to rounding for boundary laws.
    pub fn step_mean(&self) -> f64 {
        match &self.step {
            Step::Gaussian { mean, .. } => *mean,
            Step::Discrete { values, probs, .. } => values.iter().zip(probs).map(|(v, p)| v * p).sum(),
        }
    }

    /// Support and probabilities of a discrete step, `None` for Gaussian steps.
    pub fn step_atoms(&self) -> Option<(&[f64], &[f64])> {
        match &self.step {
            Step::Discrete { values, probs, .. } => Some((values, probs)),
            Step::Gaussian { .. } => None,
        }
    }

    /// Distribution function of one step.
    pub fn step_cdf(&self, x: f64) -> f64 {
        match &self.step {
            Step::Gaussian { mean, sd } => Normal::new(*mean, *sd).map(|n| n.cdf(x)).unwrap_or(f64::NAN),
            Step::Discrete { values, probs, .. } => {
                values.iter().zip(probs).filter(|(v, _)| **v <= x).map(|(_, p)| p).sum()
            }
        }
    }

    #[inline]
    pub fn sample_step<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match &self.step {
            Step::Gaussian { mean, sd } => {
                let z: f64 = rng.sample(StandardNormal);
                mean + sd * z
            }
            Step::Discrete { values, cdf, .. } => {
                let u: f64 = rng.random();
                values[cdf.iter().position(|&c| u < c).unwrap_or(values.len() - 1)]
            }
        }
    }

    /// Runs one excursion from 0 to the first strict descent below 0 and
    /// returns `|S_τ|`, or `None` when the excursion hits `cap` steps.
    #[inline]
    fn excursion<R: Rng + ?Sized>(&self, rng: &mut R, cap: u64) -> Option<f64> {
        let mut s = 0.0;
        for _ in 0..cap {
            s += self.sample_step(rng);
            if s < 0.0 {
                return Some(-s);
            }
        }
        None
    }

    /// Index of the first step with `S_k < -u`, or `n + 1` if the walk stays above.
    #[inline]
    fn exit_time<R: Rng + ?Sized>(&self, rng: &mut R, n: u64, u: f64) -> u64 {
        let mut s = 0.0;
        for k in 1..=n {
            s += self.sample_step(rng);
            if s < -u {
                return k;
            }
        }
        n + 1
    }
}

/// Sample moments of the step: `(E S₁, E S₁²)`.
pub fn step_moments(walk: &WalkModel, n_samples: usize, seed: u64) -> (Estimate, Estimate) {
    let parts = rng::sharded(n_samples, SHARD_SIZE, seed, domain::STEP_MOMENTS, |rng, _, count| {
        let (mut a, mut b) = (MeanAcc::default(), MeanAcc::default());
        for _ in 0..count {
            let x = walk.sample_step(rng);
            a.push(x);
            b.push(x * x);
        }
        (a, b)
    });
    let a = MeanAcc::merged(parts.iter().map(|p| &p.0));
    let b = MeanAcc::merged(parts.iter().map(|p| &p.1));
    (a.estimate(), b.estimate())
}

/// Output of [`ladder_heights`].
#[derive(Debug, Clone)]
pub struct LadderSample {
    pub heights: Vec<f64>,
    pub e_abs_h1: Estimate,
    pub c0_hat: Estimate,
    pub capped: u64,
}

/// Samples `|H₁|` from `n_excursions` independent excursions.
///
/// Capped excursions are dropped and counted in `capped`.
pub fn ladder_heights(walk: &WalkModel, n_excursions: usize, seed: u64) -> Result<LadderSample> {
    if n_excursions < 2 {
        return Err(Error::config("n_excursions", "at least two excursions are required"));
    }
    let parts = rng::sharded(n_excursions, 1024, seed, domain::LADDER, |rng, _, count| {
        let mut heights = Vec::with_capacity(count);
        let mut capped = 0u64;
        for _ in 0..count {
            match walk.excursion(rng, EXCURSION_CAP) {
                Some(h) => heights.push(h),
                None => capped += 1,
            }
        }
        (heights, capped)
    });
    let capped = parts.iter().map(|p| p.1).sum();
    let heights: Vec<f64> = parts.into_iter().flat_map(|p| p.0).collect();
    let mut acc = MeanAcc::default();
    heights.iter().for_each(|&h| acc.push(h));
    let e = acc.estimate();
    if !(e.value > 0.0) {
        return Err(Error::Degenerate("every ladder excursion was capped".into()));
    }
    Ok(LadderSample {
        heights,
        e_abs_h1: e,
        c0_hat: Estimate::new(1.0 / e.value, e.se / (e.value * e.value)),
        capped,
    })
}

/// Anything usable as a renewal function, together with independent
/// replicates of it for propagating its own estimation error.
pub trait Renewal: Sync {
    /// `R(u)`; errors for negative or non-finite `u`.
    fn r(&self, u: f64) -> Result<f64>;
    /// Number of independent replicate estimates.
    fn batch_count(&self) -> usize;
    /// The replicate estimate `batch` of `R(u)`.
    fn r_batch(&self, batch: usize, u: f64) -> Result<f64>;
    /// Upper end of the directly estimated range.
    fn u_max(&self) -> f64;

    fn r_alpha(&self, alpha: f64, u: f64) -> Result<f64> {
        self.r(u + alpha)
    }
}

/// Parameters for [`renewal_table`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenewalConfig {
    /// Grid spacing; `None` means σ/4.
    pub spacing: Option<f64>,
    /// Largest grid point; `None` means 40σ.
    pub u_max: Option<f64>,
    /// Ladder-height chains; rounded up to a multiple of `batches`.
    pub chains: usize,
    pub batches: usize,
    /// Maximum ladder points per chain.
    pub k_max: usize,
    /// Time horizon of the persistence estimate behind `theta_hat`.
    pub theta_n: u64,
    pub theta_paths: usize,
}

impl Default for RenewalConfig {
    fn default() -> Self {
        Self {
            spacing: None,
            u_max: None,
            chains: 20_000,
            batches: 32,
            k_max: 5_000,
            theta_n: 10_000,
            theta_paths: 1_000_000,
        }
    }
}

/// Tail-mass threshold for chains that are still below `u_max` at `k_max`.
const TAIL_THRESHOLD: f64 = 1e-4;

/// Estimated renewal function on a grid, with the ladder and persistence
/// constants derived from the same walk.
///
/// `R` is evaluated exactly from the pooled ladder points of all chains, so
/// values between grid points carry no interpolation error. Above `u_max` it
/// is extended linearly with slope `c0_hat`.
#[derive(Debug, Clone)]
pub struct RenewalTable {
    pub grid: Vec<f64>,
    pub r_values: Vec<Estimate>,
    pub c0_hat: Estimate,
    pub e_abs_h1: Estimate,
    pub theta_hat: Estimate,
    pub theta_n: u64,
    pub ladder_sample_count: usize,
    pub persistence_sample_count: usize,
    pub capped_excursions: u64,
    pub discarded_chains: usize,
    pub u_max: f64,
    chains: usize,
    points: Vec<f64>,
    /// `bucket_start[b]` is the number of pooled points below bucket `b`.
    bucket_start: Vec<u32>,
    bucket_width: f64,
    batch_points: Vec<Vec<f64>>,
    r_at_max: f64,
    batch_r_at_max: Vec<f64>,
}

#[derive(Default)]
struct ChainShard {
    points: Vec<Vec<f64>>,
    heights: MeanAcc,
    capped: u64,
    discarded: usize,
    tails: usize,
}

/// Builds a [`RenewalTable`] by simulating ladder-height chains
/// `0 < |H₁| < |H₂| < …` until they leave `[0, u_max]`.
pub fn renewal_table(walk: &WalkModel, config: &RenewalConfig, seed: u64) -> Result<RenewalTable> {
    let sigma = walk.sigma();
    let spacing = config.spacing.unwrap_or(sigma / 4.0);
    let u_max = config.u_max.unwrap_or(40.0 * sigma);
    if !(spacing > 0.0 && spacing.is_finite()) {
        return Err(Error::config("walk.renewal.spacing", "must be positive"));
    }
    if !(u_max >= spacing && u_max.is_finite()) {
        return Err(Error::config("walk.renewal.u_max", "must be at least one grid spacing"));
    }
    if config.batches < 2 || config.chains < config.batches {
        return Err(Error::config("walk.renewal.chains", "need at least two batches and one chain per batch"));
    }
    if config.k_max == 0 {
        return Err(Error::config("walk.renewal.k_max", "must be positive"));
    }
    let per_batch = config.chains.div_ceil(config.batches);
    let chains = per_batch * config.batches;
    let k_max = config.k_max;

    let shards = rng::sharded(chains, 64, seed, domain::RENEWAL, |rng, _, count| {
        let mut out = ChainShard::default();
        'chain: for _ in 0..count {
            let mut level = 0.0;
            let mut pts = Vec::new();
            loop {
                let Some(h) = walk.excursion(rng, EXCURSION_CAP) else {
                    out.capped += 1;
                    out.discarded += 1;
                    out.points.push(Vec::new());
                    continue 'chain;
                };
                out.heights.push(h);
                level += h;
                if level > u_max {
                    break;
                }
                pts.push(level);
                if pts.len() >= k_max {
                    out.tails += 1;
                    break;
                }
            }
            out.points.push(pts);
        }
        out
    });

    let mut heights = MeanAcc::default();
    let (mut capped, mut discarded, mut tails) = (0u64, 0usize, 0usize);
    let mut batch_points = vec![Vec::new(); config.batches];
    let mut chain_idx = 0usize;
    for shard in shards {
        heights.merge(&shard.heights);
        capped += shard.capped;
        discarded += shard.discarded;
        tails += shard.tails;
        for pts in shard.points {
            batch_points[chain_idx / per_batch].extend(pts);
            chain_idx += 1;
        }
    }
    let tail_mass = tails as f64 / chains as f64;
    if tail_mass > TAIL_THRESHOLD {
        return Err(Error::Resolution { tail_mass, k_max });
    }
    // Discarded chains contribute no points; the per-batch normalisation keeps
    // every batch on the same chain count, so their bias is at most
    // discarded/chains in relative terms and is reported.
    let mut points: Vec<f64> = batch_points.iter().flatten().copied().collect();
    points.sort_by(f64::total_cmp);
    batch_points.iter_mut().for_each(|b| b.sort_by(f64::total_cmp));

    let e = heights.estimate();
    let c0_hat = Estimate::new(1.0 / e.value, e.se / (e.value * e.value));

    let theta_paths = config.theta_paths;
    let theta = if theta_paths > 0 {
        estimate_theta(walk, &[config.theta_n], theta_paths, seed)?[0].1
    } else {
        Estimate::new(f64::NAN, f64::NAN)
    };

    let mut table = RenewalTable {
        grid: Vec::new(),
        r_values: Vec::new(),
        c0_hat,
        e_abs_h1: e,
        theta_hat: theta,
        theta_n: config.theta_n,
        ladder_sample_count: heights.n as usize,
        persistence_sample_count: theta_paths,
        capped_excursions: capped,
        discarded_chains: discarded,
        u_max,
        chains,
        points,
        batch_points,
        bucket_start: Vec::new(),
        bucket_width: 0.0,
        r_at_max: 0.0,
        batch_r_at_max: Vec::new(),
    };
    let buckets = (table.points.len() / 4).clamp(1, 1 << 20);
    table.bucket_width = u_max / buckets as f64;
    table.bucket_start = (0..=buckets)
        .map(|b| {
            let edge = b as f64 * table.bucket_width;
            table.points.partition_point(|&p| p < edge) as u32
        })
        .collect();
    table.r_at_max = table.count_r(&table.points, table.chains, u_max);
    table.batch_r_at_max = (0..config.batches)
        .map(|b| table.count_r(&table.batch_points[b], per_batch, u_max))
        .collect();

    let steps = (u_max / spacing + 1e-9).floor() as usize;
    table.grid = (0..=steps).map(|i| i as f64 * spacing).collect();
    table.r_values = table
        .grid
        .iter()
        .map(|&u| table.r_estimate(u))
        .collect::<Result<_>>()?;
    Ok(table)
}

impl RenewalTable {
    #[inline]
    fn count_r(&self, points: &[f64], chains: usize, u: f64) -> f64 {
        1.0 + points.partition_point(|&p| p <= u) as f64 / chains as f64
    }

    #[inline]
    fn eval(&self, points: &[f64], chains: usize, at_max: f64, u: f64) -> Result<f64> {
        if !(u >= 0.0) || u.is_infinite() {
            return Err(Error::range(u, "renewal function argument"));
        }
        if u <= self.u_max {
            Ok(self.count_r(points, chains, u))
        } else {
            Ok(at_max + self.c0_hat.value * (u - self.u_max))
        }
    }

    /// Number of chains behind the pooled estimate.
    pub fn chain_count(&self) -> usize {
        self.chains
    }

    /// `R(u)` with the standard error from the batch replicates.
    pub fn r_estimate(&self, u: f64) -> Result<Estimate> {
        let value = self.r(u)?;
        let mut acc = MeanAcc::default();
        for b in 0..self.batch_count() {
            acc.push(self.r_batch(b, u)?);
        }
        Ok(Estimate::new(value, acc.se()))
    }

    /// Writes `u,R,SE` rows for the grid.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["u", "R", "SE"])?;
        for (u, r) in self.grid.iter().zip(&self.r_values) {
            w.write_record([u.to_string(), r.value.to_string(), r.se.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

impl Renewal for RenewalTable {
    #[inline]
    fn r(&self, u: f64) -> Result<f64> {
        if u >= 0.0 && u <= self.u_max {
            let b = ((u / self.bucket_width) as usize).min(self.bucket_start.len() - 2);
            let lo = self.bucket_start[b] as usize;
            let hi = if b + 2 == self.bucket_start.len() {
                self.points.len()
            } else {
                self.bucket_start[b + 1] as usize
            };
            let below = lo + self.points[lo..hi].partition_point(|&p| p <= u);
            return Ok(1.0 + below as f64 / self.chains as f64);
        }
        self.eval(&self.points, self.chains, self.r_at_max, u)
    }

    fn batch_count(&self) -> usize {
        self.batch_points.len()
    }

    fn r_batch(&self, batch: usize, u: f64) -> Result<f64> {
        let per_batch = self.chains / self.batch_points.len();
        self.eval(&self.batch_points[batch], per_batch, self.batch_r_at_max[batch], u)
    }

    fn u_max(&self) -> f64 {
        self.u_max
    }
}

/// Constants of a walk, as written to `walk_constants.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WalkConstants {
    pub sigma2: f64,
    pub c0_hat: Estimate,
    pub e_abs_h1: Estimate,
    pub theta_hat: Estimate,
    pub theta_n: u64,
    /// `θ̂·ĉ₀`, to be compared with `sqrt(2/(πσ²))`.
    pub theta_c0: Estimate,
    pub target: f64,
    pub ladder_sample_count: usize,
    pub persistence_sample_count: usize,
    pub capped_excursions: u64,
    pub seed: u64,
}

impl WalkConstants {
    pub fn new(walk: &WalkModel, table: &RenewalTable, seed: u64) -> Self {
        let (t, c) = (table.theta_hat, table.c0_hat);
        WalkConstants {
            sigma2: walk.sigma2(),
            c0_hat: c,
            e_abs_h1: table.e_abs_h1,
            theta_hat: t,
            theta_n: table.theta_n,
            theta_c0: Estimate::new(t.value * c.value, (t.se * c.value).hypot(c.se * t.value)),
            target: seneta_heyde_constant(walk.sigma2()),
            ladder_sample_count: table.ladder_sample_count,
            persistence_sample_count: table.persistence_sample_count,
            capped_excursions: table.capped_excursions,
            seed,
        }
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let mut f = File::create(path)?;
        serde_json::to_writer_pretty(&mut f, self)?;
        writeln!(f)?;
        Ok(())
    }
}

/// `sqrt(2/(πσ²))`.
pub fn seneta_heyde_constant(sigma2: f64) -> f64 {
    (2.0 / (std::f64::consts::PI * sigma2)).sqrt()
}

/// Estimates `P(min_{k≤n} S_k ≥ -u)` for every `n` in `n_list` from one set
/// of paths, so the estimates across `n` share their randomness.
pub fn persistence_curve(walk: &WalkModel, n_list: &[u64], u: f64, n_paths: usize, seed: u64) -> Result<Vec<Estimate>> {
    if !(u >= 0.0 && u.is_finite()) {
        return Err(Error::range(u, "persistence level"));
    }
    if n_list.is_empty() || n_list.contains(&0) {
        return Err(Error::config("n_list", "horizons must be positive"));
    }
    if n_paths < 2 {
        return Err(Error::config("n_paths", "at least two paths are required"));
    }
    let n_max = *n_list.iter().max().unwrap();
    let parts = rng::sharded(n_paths, SHARD_SIZE, seed, domain::PERSISTENCE, |rng, _, count| {
        let mut alive = vec![0u64; n_list.len()];
        for _ in 0..count {
            let t = walk.exit_time(rng, n_max, u);
            for (a, &n) in alive.iter_mut().zip(n_list) {
                if t > n {
                    *a += 1;
                }
            }
        }
        alive
    });
    let total = n_paths as f64;
    Ok((0..n_list.len())
        .map(|i| {
            let p = parts.iter().map(|a| a[i]).sum::<u64>() as f64 / total;
            Estimate::new(p, (p * (1.0 - p) / (total - 1.0)).sqrt())
        })
        .collect())
}

/// Estimates `P(min_{k≤n} S_k ≥ -u)` by direct simulation.
pub fn persistence_prob(walk: &WalkModel, n: u64, u: f64, n_paths: usize, seed: u64) -> Result<Estimate> {
    Ok(persistence_curve(walk, &[n], u, n_paths, seed)?[0])
}

/// `θ̂(n) = n^{1/2} P̂(min_{k≤n} S_k ≥ 0)` for each `n`.
pub fn estimate_theta(walk: &WalkModel, n_list: &[u64], n_paths: usize, seed: u64) -> Result<Vec<(u64, Estimate)>> {
    let curve = persistence_curve(walk, n_list, 0.0, n_paths, seed)?;
    Ok(n_list
        .iter()
        .zip(curve)
        .map(|(&n, p)| (n, p.scale((n as f64).sqrt())))
        .collect())
}

/// Accumulates `Σ c_i R(x_i)` for the pooled renewal estimate and for every
/// replicate, so that the spread of the replicates measures table noise.
struct TableWeighted {
    pooled: MeanAcc,
    batches: Vec<f64>,
}

impl TableWeighted {
    fn new(b: usize) -> Self {
        Self {
            pooled: MeanAcc::default(),
            batches: vec![0.0; b],
        }
    }

    fn push<T: Renewal + ?Sized>(&mut self, table: &T, coef: f64, x: Option<f64>) -> Result<()> {
        match x {
            Some(x) if coef != 0.0 => {
                self.pooled.push(coef * table.r(x)?);
                for (b, acc) in self.batches.iter_mut().enumerate() {
                    *acc += coef * table.r_batch(b, x)?;
                }
            }
            _ => self.pooled.push(0.0),
        }
        Ok(())
    }

    fn merge(&mut self, other: &TableWeighted) {
        self.pooled.merge(&other.pooled);
        for (a, b) in self.batches.iter_mut().zip(&other.batches) {
            *a += b;
        }
    }

    /// Per-replicate means.
    fn batch_means(&self) -> Vec<f64> {
        let n = self.pooled.n as f64;
        self.batches.iter().map(|s| s / n).collect()
    }
}

fn spread_se(values: &[f64]) -> f64 {
    let mut acc = MeanAcc::default();
    values.iter().for_each(|&v| acc.push(v));
    acc.se()
}

/// `R(u) − E[R(S₁ + u); S₁ ≥ −u]` with an SE combining sampling and table noise.
pub fn harmonic_residual<T: Renewal>(walk: &WalkModel, table: &T, u: f64, n_samples: usize, seed: u64) -> Result<Estimate> {
    let limit = table.u_max() - walk.sigma();
    if !(u >= 0.0 && u <= limit) {
        return Err(Error::range(u, format!("harmonic residual (usable range [0, {limit}])")));
    }
    let b = table.batch_count();
    let parts = rng::sharded(n_samples, SHARD_SIZE, seed, domain::HARMONIC, |rng, _, count| {
        let mut acc = TableWeighted::new(b);
        for _ in 0..count {
            let x = walk.sample_step(rng) + u;
            acc.push(table, 1.0, (x >= 0.0).then_some(x))?;
        }
        Ok::<_, Error>(acc)
    });
    let mut acc = TableWeighted::new(b);
    for p in parts {
        acc.merge(&p?);
    }
    let value = table.r(u)? - acc.pooled.mean();
    let per_batch: Vec<f64> = acc
        .batch_means()
        .iter()
        .enumerate()
        .map(|(i, m)| table.r_batch(i, u).map(|r| r - m))
        .collect::<Result<_>>()?;
    Ok(Estimate::new(value, acc.pooled.se().hypot(spread_se(&per_batch))))
}

/// `E[g(S₀..S_n) R_α(S_n); min_k S_k ≥ −α] / R_α(0)`, the expectation of `g`
/// under the walk conditioned to stay above `−α`.
///
/// `g` sees the whole path including `S₀ = 0` and is only called on paths
/// that stay above `−α`.
pub fn conditioned_expectation<T, G>(walk: &WalkModel, table: &T, alpha: f64, n: usize, g: G, n_samples: usize, seed: u64) -> Result<Estimate>
where
    T: Renewal,
    G: Fn(&[f64]) -> f64 + Sync,
{
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(Error::range(alpha, "truncation level"));
    }
    let b = table.batch_count();
    let parts = rng::sharded(n_samples, SHARD_SIZE, seed, domain::CONDITIONED, |rng, _, count| {
        let mut acc = TableWeighted::new(b);
        let mut path = vec![0.0; n + 1];
        for _ in 0..count {
            let alive = fill_path(walk, rng, &mut path, alpha);
            if alive {
                let gv = g(&path);
                acc.push(table, gv, Some(path[n] + alpha))?;
            } else {
                acc.push(table, 0.0, None)?;
            }
        }
        Ok::<_, Error>(acc)
    });
    let mut acc = TableWeighted::new(b);
    for p in parts {
        acc.merge(&p?);
    }
    let norm = table.r(alpha)?;
    let value = acc.pooled.mean() / norm;
    let ratios: Vec<f64> = acc
        .batch_means()
        .iter()
        .enumerate()
        .map(|(i, m)| table.r_batch(i, alpha).map(|r| m / r))
        .collect::<Result<_>>()?;
    Ok(Estimate::new(value, (acc.pooled.se() / norm).hypot(spread_se(&ratios))))
}

/// Fills `path[1..]` with a walk path; stops and returns `false` as soon as
/// it drops below `−alpha`.
fn fill_path(walk: &WalkModel, rng: &mut SimRng, path: &mut [f64], alpha: f64) -> bool {
    let mut s = 0.0;
    for slot in path.iter_mut().skip(1) {
        s += walk.sample_step(rng);
        if s < -alpha {
            return false;
        }
        *slot = s;
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::law::{normalize_to_boundary, validate_boundary, OffspringLawSpec};
    use crate::stats::ks_one_sample;
    use std::f64::consts::LN_2;

    fn certified(spec: OffspringLawSpec) -> Law {
        let law = Law::build(spec).unwrap();
        let cert = validate_boundary(&law, 10_000, 1e-3, 5).unwrap();
        law.certified(&cert)
    }

    fn binary_walk() -> WalkModel {
        derive_walk(&certified(OffspringLawSpec::binary_gaussian(2.0 * LN_2, 2.0 * LN_2))).unwrap()
    }

    /// A boundary tabular law with five distinct step values.
    fn tabular_walk() -> WalkModel {
        let raw = Law::build(OffspringLawSpec::tabular([
            (0.5, vec![0.0, 1.0]),
            (0.5, vec![0.3, 2.0, -0.5]),
        ]))
        .unwrap();
        let law = normalize_to_boundary(&raw).unwrap().law;
        let cert = validate_boundary(&law, 10_000, 1e-3, 5).unwrap();
        assert!(cert.certified);
        derive_walk(&law.certified(&cert)).unwrap()
    }

    fn small_table(walk: &WalkModel) -> RenewalTable {
        let cfg = RenewalConfig {
            chains: 4_000,
            theta_paths: 0,
            ..RenewalConfig::default()
        };
        renewal_table(walk, &cfg, 3).unwrap()
    }

    #[test]
    fn uncertified_law_is_refused() {
        let law = Law::build(OffspringLawSpec::binary_gaussian(2.0 * LN_2, 2.0 * LN_2)).unwrap();
        assert!(matches!(derive_walk(&law), Err(Error::Uncertified(_))));
    }

    #[test]
    fn binary_step_is_centred_gaussian() {
        let walk = binary_walk();
        assert!(walk.step_mean().abs() < 1e-15);
        let mut rng = rng::stream(1, 0, 0);
        let xs: Vec<f64> = (0..100_000).map(|_| walk.sample_step(&mut rng)).collect();
        let oracle = Normal::new(0.0, (2.0 * LN_2).sqrt()).unwrap();
        let d = ks_one_sample(&xs, |x| oracle.cdf(x));
        assert!(d < 1.628 / (xs.len() as f64).sqrt(), "KS distance {d}");
    }

    #[test]
    fn tabular_step_is_normalised_and_centred() {
        let walk = tabular_walk();
        let (values, probs) = walk.step_atoms().unwrap();
        assert_eq!(values.len(), 5);
        assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(walk.step_mean().abs() < 1e-9);
        let (m1, m2) = step_moments(&walk, 200_000, 2);
        assert!(m1.value.abs() <= 4.0 * m1.se);
        assert!((m2.value - walk.sigma2()).abs() <= 4.0 * m2.se);
    }

    fn binomial_central(n: u64) -> f64 {
        (1..=n).fold(1.0, |acc, k| acc * (n + k) as f64 / (4.0 * k as f64))
    }

    #[test]
    fn persistence_matches_sparre_andersen() {
        let walk = binary_walk();
        let ns: Vec<u64> = (1..=12).collect();
        let curve = persistence_curve(&walk, &ns, 0.0, 200_000, 4).unwrap();
        for (&n, p) in ns.iter().zip(&curve) {
            let exact = binomial_central(n);
            assert!((p.value - exact).abs() <= 4.0 * p.se, "n={n}: {} vs {exact}", p.value);
        }
    }

    /// `P(S_1 ≥ 0, …, S_n ≥ 0)` for a finitely supported step by the
    /// Baxter–Spitzer identity and exact convolution of `P(S_k ≥ 0)`.
    fn baxter_spitzer(values: &[f64], probs: &[f64], n: usize) -> Vec<f64> {
        use std::collections::HashMap;
        let m = values.len();
        let mut dist: HashMap<Vec<u8>, f64> = HashMap::from([(vec![0u8; m], 1.0)]);
        let mut a = vec![0.0; n + 1];
        for ak in a.iter_mut().skip(1) {
            let mut next: HashMap<Vec<u8>, f64> = HashMap::new();
            for (counts, p) in &dist {
                for j in 0..m {
                    let mut c = counts.clone();
                    c[j] += 1;
                    *next.entry(c).or_default() += p * probs[j];
                }
            }
            dist = next;
            *ak = dist
                .iter()
                .filter(|(c, _)| c.iter().zip(values).map(|(&c, v)| c as f64 * v).sum::<f64>() >= 0.0)
                .map(|(_, p)| p)
                .sum();
        }
        let mut u = vec![1.0; n + 1];
        for j in 1..=n {
            u[j] = (1..=j).map(|k| a[k] * u[j - k]).sum::<f64>() / j as f64;
        }
        u
    }

    #[test]
    fn lattice_persistence_matches_baxter_spitzer() {
        let walk = tabular_walk();
        let (values, probs) = walk.step_atoms().unwrap();
        let exact = baxter_spitzer(values, probs, 10);
        let ns: Vec<u64> = (1..=10).collect();
        let curve = persistence_curve(&walk, &ns, 0.0, 200_000, 8).unwrap();
        for (i, p) in curve.iter().enumerate() {
            let e = exact[i + 1];
            assert!((p.value - e).abs() <= 4.0 * p.se.max(1e-12), "n={}: {} vs {e}", i + 1, p.value);
        }
    }

    #[test]
    fn gaussian_ladder_height_mean() {
        let walk = binary_walk();
        let s = ladder_heights(&walk, 50_000, 6).unwrap();
        let oracle = LN_2.sqrt();
        assert!((s.e_abs_h1.value - oracle).abs() <= 4.0 * s.e_abs_h1.se, "{:?}", s.e_abs_h1);
        assert!((s.c0_hat.value * s.e_abs_h1.value - 1.0).abs() < 1e-15);
    }

    #[test]
    fn renewal_table_shape() {
        let walk = binary_walk();
        let t = small_table(&walk);
        assert_eq!(t.r(0.0).unwrap(), 1.0);
        assert_eq!(t.r_values[0].value, 1.0);
        assert!(t.r_values.windows(2).all(|w| w[0].value <= w[1].value));
        assert!(matches!(t.r(-0.1), Err(Error::Range { .. })));
        for i in 0..=4000 {
            let u = t.u_max * i as f64 / 4000.0;
            assert_eq!(t.r(u).unwrap(), t.count_r(&t.points, t.chains, u));
        }
        let sigma = walk.sigma();
        for u in [20.0, 20.0 * sigma, 30.0 * sigma] {
            let slope = t.r(u).unwrap() / u;
            assert!((slope / t.c0_hat.value - 1.0).abs() < 0.05, "u={u}: {slope}");
        }
        // Linear continuation above the simulated range.
        let above = t.r(t.u_max + 2.0).unwrap() - t.r(t.u_max).unwrap();
        assert!((above - 2.0 * t.c0_hat.value).abs() < 1e-9);
    }

    #[test]
    fn harmonic_identity_holds_and_detects_corruption() {
        struct Scaled<'a>(&'a RenewalTable, f64);
        impl Renewal for Scaled<'_> {
            fn r(&self, u: f64) -> Result<f64> {
                let r = self.0.r(u)?;
                Ok(if u > 0.0 { r * self.1 } else { r })
            }
            fn batch_count(&self) -> usize {
                self.0.batch_count()
            }
            fn r_batch(&self, b: usize, u: f64) -> Result<f64> {
                let r = self.0.r_batch(b, u)?;
                Ok(if u > 0.0 { r * self.1 } else { r })
            }
            fn u_max(&self) -> f64 {
                self.0.u_max
            }
        }
        let walk = binary_walk();
        let t = small_table(&walk);
        for u in [0.0, 5.0] {
            let r = harmonic_residual(&walk, &t, u, 50_000, 9).unwrap();
            assert!(r.value.abs() <= 4.0 * r.se, "u={u}: {r:?}");
        }
        let bad = harmonic_residual(&walk, &Scaled(&t, 1.1), 0.0, 50_000, 9).unwrap();
        assert!(bad.value.abs() > 10.0 * bad.se, "{bad:?}");
        assert!(harmonic_residual(&walk, &t, t.u_max, 10, 9).is_err());
    }

    #[test]
    fn conditioned_walk_normalisation_and_support() {
        let walk = binary_walk();
        let t = small_table(&walk);
        for alpha in [0.0, 2.0, 5.0] {
            let e = conditioned_expectation(&walk, &t, alpha, 30, |_| 1.0, 50_000, 10).unwrap();
            assert!((e.value - 1.0).abs() <= 4.0 * e.se, "alpha={alpha}: {e:?}");
        }
        let e = conditioned_expectation(&walk, &t, 0.0, 30, |p| if p[30] < 0.0 { 1.0 } else { 0.0 }, 20_000, 10).unwrap();
        assert_eq!(e.value, 0.0);
    }

    #[test]
    fn conditioned_reciprocal_recovers_persistence() {
        let walk = binary_walk();
        let t = small_table(&walk);
        let n = 100;
        let via = conditioned_expectation(&walk, &t, 0.0, n, |p| 1.0 / t.r(p[n]).unwrap(), 100_000, 11).unwrap();
        let direct = persistence_prob(&walk, n as u64, 0.0, 100_000, 12).unwrap();
        assert!(via.agrees_with(&direct, 4.0), "{via:?} vs {direct:?}");
    }

    #[test]
    fn resolution_error_for_small_k_max() {
        let walk = binary_walk();
        let cfg = RenewalConfig {
            chains: 64,
            batches: 2,
            k_max: 3,
            theta_paths: 0,
            ..RenewalConfig::default()
        };
        assert!(matches!(renewal_table(&walk, &cfg, 1), Err(Error::Resolution { .. })));
    }
}
