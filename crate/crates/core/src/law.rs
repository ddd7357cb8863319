//! Offspring point-process laws.
//!
//! A [`Law`] is the reproduction law Θ of the branching random walk: each
//! particle is replaced by a random, finite set of children displaced from
//! it by the points of an independent copy of Θ. Three parametric families
//! are supported:
//!
//! * `binary_gaussian`: exactly two children with i.i.d. Gaussian displacements;
//! * `count_gaussian`: a random number of children (Poisson or an explicit
//!   pmf) with i.i.d. Gaussian displacements;
//! * `tabular`: a finitely supported point process given as weighted atoms.
//!
//! Laws in the boundary case satisfy `E Σ e^{-V} = 1` and `E Σ V e^{-V} = 0`.
//! [`validate_boundary`] checks those moments and [`normalize_to_boundary`]
//! finds the affine change of coordinates that puts a supercritical law there.

use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, domain, SHARD_SIZE};
use crate::stats::{Estimate, MeanAcc};

const SUM_TOL: f64 = 1e-12;

/// Root-finding tolerance on `g(ϑ) = ϑψ'(ϑ) − ψ(ϑ)`.
pub const NORMALIZE_TOL: f64 = 1e-10;

/// Largest tilt parameter tried while bracketing the root of `g`.
const MAX_VARTHETA: f64 = 1024.0;

/// Distribution of the number of children for `count_gaussian` laws.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CountLaw {
    Poisson { lambda: f64 },
    /// `probs[k]` is the probability of exactly `k` children.
    Pmf { probs: Vec<f64> },
}

/// One atom of a tabular point process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub p: f64,
    /// Child displacements; empty means the particle has no children.
    pub displacements: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Family {
    BinaryGaussian { mu: f64, s2: f64 },
    CountGaussian { count: CountLaw, mu: f64, s2: f64 },
    Tabular { atoms: Vec<Atom> },
}

/// Parametric description of an offspring law.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OffspringLawSpec {
    #[serde(flatten)]
    pub family: Family,
    #[serde(default)]
    pub boundary_certified: bool,
}

impl OffspringLawSpec {
    pub fn new(family: Family) -> Self {
        Self {
            family,
            boundary_certified: false,
        }
    }

    pub fn binary_gaussian(mu: f64, s2: f64) -> Self {
        Self::new(Family::BinaryGaussian { mu, s2 })
    }

    pub fn count_gaussian(count: CountLaw, mu: f64, s2: f64) -> Self {
        Self::new(Family::CountGaussian { count, mu, s2 })
    }

    pub fn tabular(atoms: impl IntoIterator<Item = (f64, Vec<f64>)>) -> Self {
        Self::new(Family::Tabular {
            atoms: atoms
                .into_iter()
                .map(|(p, displacements)| Atom { p, displacements })
                .collect(),
        })
    }
}

/// Exact exponential moments `E Σ e^{-V}`, `E Σ V e^{-V}` and `E Σ V² e^{-V}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpMoments {
    pub e_sum: f64,
    pub e_vsum: f64,
    pub e_v2sum: f64,
}

#[derive(Debug, Clone)]
enum CountSampler {
    Fixed(usize),
    Poisson { lambda: f64, dist: Poisson<f64> },
    Pmf { cdf: Vec<f64>, biased_cdf: Vec<f64>, mean: f64 },
}

impl CountSampler {
    fn build(count: &CountLaw) -> Result<Self> {
        match count {
            CountLaw::Poisson { lambda } => {
                if !(lambda.is_finite() && *lambda > 0.0) {
                    return Err(Error::config("count.lambda", "must be finite and positive"));
                }
                let dist = Poisson::new(*lambda)
                    .map_err(|e| Error::config("count.lambda", e.to_string()))?;
                Ok(CountSampler::Poisson {
                    lambda: *lambda,
                    dist,
                })
            }
            CountLaw::Pmf { probs } => {
                check_probabilities(probs.iter().copied(), "count.probs")?;
                let mean: f64 = probs.iter().enumerate().map(|(k, p)| k as f64 * p).sum();
                if mean <= 0.0 {
                    return Err(Error::config("count.probs", "mean offspring count is zero"));
                }
                let cdf = cumulative(probs.iter().copied());
                let biased_cdf =
                    cumulative(probs.iter().enumerate().map(|(k, p)| k as f64 * p / mean));
                Ok(CountSampler::Pmf {
                    cdf,
                    biased_cdf,
                    mean,
                })
            }
        }
    }

    fn mean(&self) -> f64 {
        match self {
            CountSampler::Fixed(k) => *k as f64,
            CountSampler::Poisson { lambda, .. } => *lambda,
            CountSampler::Pmf { mean, .. } => *mean,
        }
    }

    #[inline]
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        match self {
            CountSampler::Fixed(k) => *k,
            CountSampler::Poisson { dist, .. } => dist.sample(rng) as usize,
            CountSampler::Pmf { cdf, .. } => pick(cdf, rng.random::<f64>()),
        }
    }

    /// Count under size-biasing `k p_k / m`.
    #[inline]
    fn sample_biased<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        match self {
            CountSampler::Fixed(k) => *k,
            CountSampler::Poisson { dist, .. } => 1 + dist.sample(rng) as usize,
            CountSampler::Pmf { biased_cdf, .. } => pick(biased_cdf, rng.random::<f64>()),
        }
    }
}

#[derive(Debug, Clone)]
enum Sampler {
    Gaussian {
        count: CountSampler,
        mu: f64,
        s2: f64,
        sd: f64,
    },
    Tabular {
        atoms: Vec<Vec<f64>>,
        cdf: Vec<f64>,
        /// Atom choice under the `Σ e^{-V}` size-biasing.
        biased_cdf: Vec<f64>,
        /// Spine choice within each atom, proportional to `e^{-v}`.
        spine_cdfs: Vec<Vec<f64>>,
    },
}

/// A samplable offspring law. Immutable once built.
#[derive(Debug, Clone)]
pub struct Law {
    spec: OffspringLawSpec,
    sampler: Sampler,
}

fn check_probabilities(probs: impl Iterator<Item = f64>, field: &str) -> Result<()> {
    let mut total = 0.0;
    for (i, p) in probs.enumerate() {
        if !(p.is_finite() && p >= 0.0) {
            return Err(Error::config(format!("{field}[{i}]"), "probability must be finite and nonnegative"));
        }
        total += p;
    }
    if (total - 1.0).abs() > SUM_TOL {
        return Err(Error::config(field, format!("probabilities sum to {total}, not 1")));
    }
    Ok(())
}

fn cumulative(weights: impl Iterator<Item = f64>) -> Vec<f64> {
    let weights: Vec<f64> = weights.collect();
    let mut acc = 0.0;
    let mut cdf: Vec<f64> = weights
        .iter()
        .map(|w| {
            acc += w;
            acc
        })
        .collect();
    // Rounding must not make the last outcome with positive weight unreachable.
    if let Some(last) = weights.iter().rposition(|&w| w > 0.0) {
        cdf[last..].iter_mut().for_each(|c| *c = f64::INFINITY);
    }
    cdf
}

#[inline]
fn pick(cdf: &[f64], u: f64) -> usize {
    if cdf.len() <= 8 {
        cdf.iter().position(|&c| u < c).unwrap_or(cdf.len() - 1)
    } else {
        cdf.partition_point(|&c| c <= u).min(cdf.len() - 1)
    }
}

fn check_gaussian(mu: f64, s2: f64) -> Result<()> {
    if !mu.is_finite() {
        return Err(Error::config("mu", "must be finite"));
    }
    if !(s2.is_finite() && s2 > 0.0) {
        return Err(Error::config("s2", "variance must be finite and positive"));
    }
    Ok(())
}

impl Law {
    /// Validates `spec` and prepares its samplers.
    pub fn build(spec: OffspringLawSpec) -> Result<Law> {
        let sampler = match &spec.family {
            Family::BinaryGaussian { mu, s2 } => {
                check_gaussian(*mu, *s2)?;
                Sampler::Gaussian {
                    count: CountSampler::Fixed(2),
                    mu: *mu,
                    s2: *s2,
                    sd: s2.sqrt(),
                }
            }
            Family::CountGaussian { count, mu, s2 } => {
                check_gaussian(*mu, *s2)?;
                Sampler::Gaussian {
                    count: CountSampler::build(count)?,
                    mu: *mu,
                    s2: *s2,
                    sd: s2.sqrt(),
                }
            }
            Family::Tabular { atoms } => {
                if atoms.is_empty() {
                    return Err(Error::config("atoms", "at least one atom is required"));
                }
                check_probabilities(atoms.iter().map(|a| a.p), "atoms.p")?;
                for (i, a) in atoms.iter().enumerate() {
                    if a.displacements.iter().any(|v| !v.is_finite()) {
                        return Err(Error::config(format!("atoms[{i}].displacements"), "must be finite"));
                    }
                }
                let masses: Vec<f64> = atoms
                    .iter()
                    .map(|a| a.p * a.displacements.iter().map(|v| (-v).exp()).sum::<f64>())
                    .collect();
                let total: f64 = masses.iter().sum();
                let biased_cdf = if total > 0.0 {
                    cumulative(masses.iter().map(|m| m / total))
                } else {
                    Vec::new()
                };
                let spine_cdfs = atoms
                    .iter()
                    .map(|a| {
                        let z: f64 = a.displacements.iter().map(|v| (-v).exp()).sum();
                        cumulative(a.displacements.iter().map(|v| (-v).exp() / z))
                    })
                    .collect();
                Sampler::Tabular {
                    atoms: atoms.iter().map(|a| a.displacements.clone()).collect(),
                    cdf: cumulative(atoms.iter().map(|a| a.p)),
                    biased_cdf,
                    spine_cdfs,
                }
            }
        };
        Ok(Law { spec, sampler })
    }

    pub fn spec(&self) -> &OffspringLawSpec {
        &self.spec
    }

    pub fn family(&self) -> &Family {
        &self.spec.family
    }

    pub fn is_certified(&self) -> bool {
        self.spec.boundary_certified
    }

    /// Returns the law with its certification flag taken from `cert`.
    pub fn certified(mut self, cert: &BoundaryCertificate) -> Law {
        self.spec.boundary_certified = cert.certified;
        self
    }

    pub(crate) fn require_certified(&self, what: &str) -> Result<()> {
        if self.is_certified() {
            Ok(())
        } else {
            Err(Error::Uncertified(format!("{what} requires a boundary-certified law")))
        }
    }

    /// Exact mean number of children.
    pub fn mean_offspring(&self) -> f64 {
        match (&self.sampler, &self.spec.family) {
            (Sampler::Gaussian { count, .. }, _) => count.mean(),
            (_, Family::Tabular { atoms }) => {
                atoms.iter().map(|a| a.p * a.displacements.len() as f64).sum()
            }
            _ => unreachable!("sampler matches family"),
        }
    }

    /// Whether some atom or count outcome has no children.
    pub fn can_go_extinct(&self) -> bool {
        match &self.spec.family {
            Family::BinaryGaussian { .. } => false,
            Family::CountGaussian { count, .. } => match count {
                CountLaw::Poisson { .. } => true,
                CountLaw::Pmf { probs } => probs.first().is_some_and(|&p| p > 0.0),
            },
            Family::Tabular { atoms } => atoms.iter().any(|a| a.p > 0.0 && a.displacements.is_empty()),
        }
    }

    /// Probability generating function of the child count.
    pub fn count_pgf(&self, s: f64) -> f64 {
        match &self.spec.family {
            Family::BinaryGaussian { .. } => s * s,
            Family::CountGaussian { count, .. } => match count {
                CountLaw::Poisson { lambda } => (lambda * (s - 1.0)).exp(),
                CountLaw::Pmf { probs } => probs.iter().rev().fold(0.0, |acc, p| acc * s + p),
            },
            Family::Tabular { atoms } => atoms
                .iter()
                .map(|a| a.p * s.powi(a.displacements.len() as i32))
                .sum(),
        }
    }

    /// Closed-form exponential moments of the first generation.
    pub fn exp_moments(&self) -> ExpMoments {
        match &self.sampler {
            Sampler::Gaussian { count, mu, s2, .. } => {
                let mass = count.mean() * (-mu + s2 / 2.0).exp();
                let tilted_mean = mu - s2;
                ExpMoments {
                    e_sum: mass,
                    e_vsum: mass * tilted_mean,
                    e_v2sum: mass * (tilted_mean * tilted_mean + s2),
                }
            }
            Sampler::Tabular { .. } => {
                let Family::Tabular { atoms } = &self.spec.family else {
                    unreachable!()
                };
                let mut m = ExpMoments {
                    e_sum: 0.0,
                    e_vsum: 0.0,
                    e_v2sum: 0.0,
                };
                for a in atoms {
                    for &v in &a.displacements {
                        let w = a.p * (-v).exp();
                        m.e_sum += w;
                        m.e_vsum += w * v;
                        m.e_v2sum += w * v * v;
                    }
                }
                m
            }
        }
    }

    /// `(ψ(ϑ), ψ'(ϑ))` for `ψ(ϑ) = log E Σ e^{-ϑV}`.
    pub fn log_laplace(&self, vartheta: f64) -> (f64, f64) {
        match &self.sampler {
            Sampler::Gaussian { count, mu, s2, .. } => (
                count.mean().ln() - vartheta * mu + vartheta * vartheta * s2 / 2.0,
                -mu + vartheta * s2,
            ),
            Sampler::Tabular { .. } => {
                let Family::Tabular { atoms } = &self.spec.family else {
                    unreachable!()
                };
                let terms: Vec<(f64, f64)> = atoms
                    .iter()
                    .filter(|a| a.p > 0.0)
                    .flat_map(|a| a.displacements.iter().map(move |&v| (a.p.ln() - vartheta * v, v)))
                    .collect();
                let top = terms.iter().map(|t| t.0).fold(f64::NEG_INFINITY, f64::max);
                if top == f64::NEG_INFINITY {
                    return (f64::NEG_INFINITY, 0.0);
                }
                let (mut z, mut zv) = (0.0, 0.0);
                for (lw, v) in terms {
                    let w = (lw - top).exp();
                    z += w;
                    zv += w * v;
                }
                (top + z.ln(), -zv / z)
            }
        }
    }

    /// Affinely transformed law with displacements `scale·V + shift`.
    pub fn affine(&self, scale: f64, shift: f64) -> Result<Law> {
        let family = match &self.spec.family {
            Family::BinaryGaussian { mu, s2 } => Family::BinaryGaussian {
                mu: scale * mu + shift,
                s2: scale * scale * s2,
            },
            Family::CountGaussian { count, mu, s2 } => Family::CountGaussian {
                count: count.clone(),
                mu: scale * mu + shift,
                s2: scale * scale * s2,
            },
            Family::Tabular { atoms } => Family::Tabular {
                atoms: atoms
                    .iter()
                    .map(|a| Atom {
                        p: a.p,
                        displacements: a.displacements.iter().map(|v| scale * v + shift).collect(),
                    })
                    .collect(),
            },
        };
        Law::build(OffspringLawSpec::new(family))
    }

    /// Appends one realisation of the first-generation displacements to `out`.
    #[inline]
    pub fn sample_children<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut Vec<f64>) {
        match &self.sampler {
            Sampler::Gaussian { count, mu, sd, .. } => {
                let k = count.sample(rng);
                for _ in 0..k {
                    let z: f64 = rng.sample(StandardNormal);
                    out.push(mu + sd * z);
                }
            }
            Sampler::Tabular { atoms, cdf, .. } => {
                let a = pick(cdf, rng.random::<f64>());
                out.extend_from_slice(&atoms[a]);
            }
        }
    }

    /// One draw of the size-biased point process Θ̂ together with the spine
    /// child chosen with probability proportional to `e^{-V}`.
    ///
    /// Returns the spine displacement and appends the brothers' displacements
    /// to `brothers`. For i.i.d.-displacement families this is: size-bias the
    /// count by `k`, tilt one child's displacement by `e^{-v}` and leave the
    /// others untouched. Only meaningful when `E Σ e^{-V} = 1`.
    pub fn sample_size_biased<R: Rng + ?Sized>(&self, rng: &mut R, brothers: &mut Vec<f64>) -> f64 {
        match &self.sampler {
            Sampler::Gaussian { count, mu, s2, sd } => {
                let k = count.sample_biased(rng);
                for _ in 1..k {
                    let z: f64 = rng.sample(StandardNormal);
                    brothers.push(mu + sd * z);
                }
                let z: f64 = rng.sample(StandardNormal);
                (mu - s2) + sd * z
            }
            Sampler::Tabular {
                atoms,
                biased_cdf,
                spine_cdfs,
                ..
            } => {
                let a = pick(biased_cdf, rng.random::<f64>());
                // Ties between equal displacements resolve to the lowest index.
                let j = pick(&spine_cdfs[a], rng.random::<f64>());
                for (i, &v) in atoms[a].iter().enumerate() {
                    if i != j {
                        brothers.push(v);
                    }
                }
                atoms[a][j]
            }
        }
    }

    pub fn ensure_supercritical(&self) -> Result<()> {
        let m = self.mean_offspring();
        if m > 1.0 {
            Ok(())
        } else {
            Err(Error::NotSupercritical { mean_offspring: m })
        }
    }
}

/// Monte Carlo estimates of the first-generation moments.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloMoments {
    pub e_sum: Estimate,
    pub e_vsum: Estimate,
    pub sigma2: Estimate,
    pub x_moment: Estimate,
    pub xtilde_moment: Estimate,
}

/// Outcome of [`validate_boundary`].
///
/// The headline fields use closed forms where the family admits them (with a
/// zero standard error) and Monte Carlo otherwise; `monte_carlo` always holds
/// the sampled values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryCertificate {
    pub e_sum: Estimate,
    pub e_vsum: Estimate,
    pub sigma2: Estimate,
    pub x_moment: Estimate,
    pub xtilde_moment: Estimate,
    pub monte_carlo: MonteCarloMoments,
    pub sample_count: usize,
    pub tolerance: f64,
    pub mean_offspring: f64,
    pub supercritical: bool,
    pub boundary: bool,
    pub certified: bool,
    pub warnings: Vec<String>,
}

fn log_plus(y: f64) -> f64 {
    if y > 1.0 {
        y.ln()
    } else {
        0.0
    }
}

/// Integrability functionals `X log₊² X` and `X̃ log₊ X̃` of one child set.
fn x_functionals(children: &[f64]) -> (f64, f64) {
    let x: f64 = children.iter().map(|v| (-v).exp()).sum();
    let xt: f64 = children.iter().map(|v| v.max(0.0) * (-v).exp()).sum();
    let lx = log_plus(x);
    (x * lx * lx, xt * log_plus(xt))
}

/// Estimates the boundary-case moments of `law` and decides certification.
///
/// A law is certified when `|E Σ e^{-V} − 1|` and `|E Σ V e^{-V}|` are both
/// within `max(tol, 3·SE)` and the mean offspring exceeds one. The
/// `X log₊² X` / `X̃ log₊ X̃` moments are reported but never enforced.
pub fn validate_boundary(law: &Law, n_samples: usize, tol: f64, seed: u64) -> Result<BoundaryCertificate> {
    if n_samples < 2 {
        return Err(Error::config("n_samples", "at least two samples are required"));
    }
    if !(tol.is_finite() && tol > 0.0) {
        return Err(Error::config("tolerance", "must be positive"));
    }
    let shards = rng::sharded(n_samples, SHARD_SIZE, seed, domain::VALIDATE, |rng, shard, count| {
        let mut accs = [MeanAcc::default(); 5];
        let mut buf = Vec::new();
        for i in 0..count {
            buf.clear();
            law.sample_children(rng, &mut buf);
            let (mut s, mut sv, mut sv2) = (0.0, 0.0, 0.0);
            for &v in &buf {
                let w = (-v).exp();
                s += w;
                sv += v * w;
                sv2 += v * v * w;
            }
            let (xm, xtm) = x_functionals(&buf);
            let row = [s, sv, sv2, xm, xtm];
            if row.iter().any(|x| !x.is_finite()) {
                return Err(Error::Numeric(format!(
                    "draw {} of shard {shard} produced children {buf:?}",
                    i
                )));
            }
            for (a, x) in accs.iter_mut().zip(row) {
                a.push(x);
            }
        }
        Ok(accs)
    });
    let mut totals = [MeanAcc::default(); 5];
    for shard in shards {
        for (t, a) in totals.iter_mut().zip(shard?.iter()) {
            t.merge(a);
        }
    }
    let mc = MonteCarloMoments {
        e_sum: totals[0].estimate(),
        e_vsum: totals[1].estimate(),
        sigma2: totals[2].estimate(),
        x_moment: totals[3].estimate(),
        xtilde_moment: totals[4].estimate(),
    };

    let exact = law.exp_moments();
    let (x_moment, xtilde_moment) = match law.family() {
        Family::Tabular { atoms } => {
            let (mut xm, mut xtm) = (0.0, 0.0);
            for a in atoms {
                let (x, xt) = x_functionals(&a.displacements);
                xm += a.p * x;
                xtm += a.p * xt;
            }
            (Estimate::exact(xm), Estimate::exact(xtm))
        }
        _ => (mc.x_moment, mc.xtilde_moment),
    };
    let cert_sigma2 = Estimate::exact(exact.e_v2sum);
    if !(cert_sigma2.value > 0.0) || !(mc.sigma2.value > 0.0) {
        return Err(Error::Degenerate(format!(
            "E Σ V² e^(-V) = {} is not positive",
            cert_sigma2.value
        )));
    }

    let e_sum = Estimate::exact(exact.e_sum);
    let e_vsum = Estimate::exact(exact.e_vsum);
    let within = |e: &Estimate, target: f64| (e.value - target).abs() <= tol.max(3.0 * e.se);
    let boundary = within(&e_sum, 1.0) && within(&e_vsum, 0.0);
    let mean_offspring = law.mean_offspring();
    let supercritical = mean_offspring > 1.0;

    let mut warnings = Vec::new();
    if !supercritical {
        warnings.push(format!("mean offspring {mean_offspring} is not above 1"));
    }
    for (name, e) in [("E[X log+^2 X]", x_moment), ("E[X~ log+ X~]", xtilde_moment)] {
        if !e.value.is_finite() || (e.se > 0.0 && e.se > 0.25 * e.value.abs().max(1e-12)) {
            warnings.push(format!("{name} estimate {} (SE {}) looks unstable", e.value, e.se));
        }
    }

    Ok(BoundaryCertificate {
        e_sum,
        e_vsum,
        sigma2: cert_sigma2,
        x_moment,
        xtilde_moment,
        monte_carlo: mc,
        sample_count: n_samples,
        tolerance: tol,
        mean_offspring,
        supercritical,
        boundary,
        certified: boundary && supercritical,
        warnings,
    })
}

/// Result of [`normalize_to_boundary`].
#[derive(Debug, Clone)]
pub struct Normalization {
    pub law: Law,
    pub vartheta: f64,
    pub shift: f64,
}

/// Finds `ϑ* > 0` with `ψ(ϑ*) = ϑ*ψ'(ϑ*)` and returns the law of
/// `ϑ*·V + ψ(ϑ*)`, which is in the boundary case.
///
/// `g(ϑ) = ϑψ'(ϑ) − ψ(ϑ)` starts at `−log m < 0` and is non-decreasing, so the
/// root is bracketed by doubling and then bisected.
pub fn normalize_to_boundary(raw: &Law) -> Result<Normalization> {
    raw.ensure_supercritical()?;
    let g = |t: f64| {
        let (psi, dpsi) = raw.log_laplace(t);
        t * dpsi - psi
    };
    let mut lo = 0.0;
    let mut hi = 1.0;
    loop {
        let gh = g(hi);
        if !gh.is_finite() {
            return Err(Error::NonBoundaryReducible(format!("g({hi}) is not finite")));
        }
        if gh > NORMALIZE_TOL {
            break;
        }
        lo = hi;
        hi *= 2.0;
        if hi > MAX_VARTHETA {
            return Err(Error::NonBoundaryReducible(format!(
                "g(ϑ) = ϑψ'(ϑ) − ψ(ϑ) has no sign change on (0, {MAX_VARTHETA}]"
            )));
        }
    }
    let mut mid = 0.5 * (lo + hi);
    for _ in 0..200 {
        mid = 0.5 * (lo + hi);
        let gm = g(mid);
        if gm.abs() <= NORMALIZE_TOL || hi - lo <= 1e-15 * hi {
            break;
        }
        if gm < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let vartheta = mid;
    let shift = raw.log_laplace(vartheta).0;
    Ok(Normalization {
        law: raw.affine(vartheta, shift)?,
        vartheta,
        shift,
    })
}
