//! JSON experiment configuration.
//!
//! A config file has four top-level keys: `law`, `walk`, `experiment` and
//! `output`. Only `law` is required. See `docs/config.md` for the schema.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::brw::DEFAULT_POP_CAP;
use crate::error::{Error, Result};
use crate::law::{normalize_to_boundary, validate_boundary, BoundaryCertificate, Law, OffspringLawSpec};
use crate::walk::RenewalConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub law: LawConfig,
    #[serde(default)]
    pub walk: RenewalConfig,
    #[serde(default)]
    pub experiment: ExperimentSection,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LawConfig {
    #[serde(flatten)]
    pub spec: OffspringLawSpec,
    /// Apply the boundary normalization before validating.
    #[serde(default)]
    pub normalize: bool,
    #[serde(default = "default_validation_samples")]
    pub validation_samples: usize,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
}

fn default_validation_samples() -> usize {
    100_000
}

fn default_tolerance() -> f64 {
    1e-3
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    SenetaHeyde,
    Limsup,
    Minpos,
    FixedPoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    pub runs: Vec<ExperimentKind>,
    pub n_schedule: Vec<usize>,
    pub replicas: usize,
    pub seed: u64,
    pub alphas: Vec<f64>,
    pub pop_cap: usize,
    /// Ratio guard `ε_D`: replicas with `D_n ≤ ε_D` are left out of ratios.
    pub ratio_guard: f64,
    /// A ratio is "far" when `|ratio/target − 1|` exceeds this.
    pub far_tolerance: f64,
    /// Multiples `t` of the per-replica target in the limsup probe.
    pub thresholds: Vec<f64>,
    pub bootstrap: usize,
    pub fixed_point: FixedPointConfig,
    pub spine: SpineConfig,
    pub assertions: AssertionConfig,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        ExperimentSection {
            runs: vec![
                ExperimentKind::SenetaHeyde,
                ExperimentKind::Limsup,
                ExperimentKind::Minpos,
                ExperimentKind::FixedPoint,
            ],
            n_schedule: vec![8, 12, 16, 20],
            replicas: 1000,
            seed: 42,
            alphas: Vec::new(),
            pop_cap: DEFAULT_POP_CAP,
            ratio_guard: 1e-6,
            far_tolerance: 0.25,
            thresholds: vec![2.0, 4.0, 8.0],
            bootstrap: 200,
            fixed_point: FixedPointConfig::default(),
            spine: SpineConfig::default(),
            assertions: AssertionConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FixedPointConfig {
    /// Generations whose `D_n` serve as `D_∞` proxies; empty means the last
    /// two entries of the schedule.
    pub ns: Vec<usize>,
    pub t_max: f64,
    pub t_points: usize,
    pub child_sets: usize,
    /// Points of the grid on which the empirical Laplace transform is tabulated.
    pub grid_points: usize,
    pub bootstrap: usize,
    pub min_survivors: usize,
}

impl Default for FixedPointConfig {
    fn default() -> Self {
        FixedPointConfig {
            ns: Vec::new(),
            t_max: 5.0,
            t_points: 51,
            child_sets: 10_000,
            grid_points: 4096,
            bootstrap: 100,
            min_survivors: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpineConfig {
    pub alpha: f64,
    pub n: usize,
    pub trees: usize,
    pub resample_every: Option<usize>,
    pub walk_paths: usize,
}

impl Default for SpineConfig {
    fn default() -> Self {
        SpineConfig {
            alpha: 0.0,
            n: 10,
            trees: 10_000,
            resample_every: None,
            walk_paths: 1_000_000,
        }
    }
}

/// Optional checks. A field left out disables its check; structural
/// checks always run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AssertionConfig {
    /// Far-ratio fraction strictly decreasing along the schedule.
    pub ratio_trend: bool,
    /// Bound on `|median ratio / target − 1|` at the largest `n`.
    pub median_tolerance: Option<f64>,
    /// Bound on the guarded-out fraction of survivors for `n ≥ 8`.
    pub guard_max_fraction: Option<f64>,
    /// Minimum number of replicas above the largest threshold at the largest `N`.
    pub limsup_min_count: Option<usize>,
    /// Band for the median of `min_v / log n` at the largest `n`.
    pub minpos_band: Option<[f64; 2]>,
    /// Median running min of `min_v − ½ log k` lower at the largest `N` than at the smallest.
    pub running_min_trend: bool,
    /// Bound on the maximal fixed-point residual at the largest `n`.
    pub fixed_point_max: Option<f64>,
    /// Residual at the largest `n` no larger than at the one before.
    pub fixed_point_shrinks: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// Also write the full per-generation trace CSV.
    pub traces: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            dir: PathBuf::from("out"),
            traces: false,
        }
    }
}

/// A law after optional normalization and validation.
#[derive(Debug, Clone)]
pub struct PreparedLaw {
    pub law: Law,
    pub certificate: BoundaryCertificate,
    /// `(ϑ*, ψ(ϑ*))` when the law was normalized.
    pub normalization: Option<(f64, f64)>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| Error::config("config", e.to_string()))?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn check(&self) -> Result<()> {
        let e = &self.experiment;
        if e.n_schedule.is_empty() {
            return Err(Error::config("experiment.n_schedule", "must not be empty"));
        }
        if e.n_schedule[0] == 0 || e.n_schedule.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::config("experiment.n_schedule", "must be positive and strictly increasing"));
        }
        if e.replicas < 2 {
            return Err(Error::config("experiment.replicas", "at least two replicas are required"));
        }
        if !(e.ratio_guard > 0.0 && e.ratio_guard.is_finite()) {
            return Err(Error::config("experiment.ratio_guard", "must be positive"));
        }
        if !(e.far_tolerance > 0.0) {
            return Err(Error::config("experiment.far_tolerance", "must be positive"));
        }
        if e.thresholds.iter().any(|&t| !(t > 0.0 && t.is_finite())) {
            return Err(Error::config("experiment.thresholds", "must be positive"));
        }
        if e.alphas.iter().any(|&a| !(a >= 0.0 && a.is_finite())) {
            return Err(Error::config("experiment.alphas", "must be non-negative"));
        }
        if e.pop_cap == 0 {
            return Err(Error::config("experiment.pop_cap", "must be positive"));
        }
        let fp = &e.fixed_point;
        if fp.ns.iter().any(|n| !e.n_schedule.contains(n)) {
            return Err(Error::config("experiment.fixed_point.ns", "entries must belong to the n schedule"));
        }
        if !(fp.t_max > 0.0) || fp.t_points < 2 || fp.child_sets == 0 || fp.grid_points < 2 {
            return Err(Error::config("experiment.fixed_point", "t_max > 0, t_points ≥ 2, child_sets ≥ 1, grid_points ≥ 2 required"));
        }
        if e.spine.resample_every == Some(0) {
            return Err(Error::config("experiment.spine.resample_every", "must be positive"));
        }
        if !(self.law.tolerance > 0.0) {
            return Err(Error::config("law.tolerance", "must be positive"));
        }
        Ok(())
    }

    /// Largest generation of the schedule.
    pub fn n_max(&self) -> usize {
        *self.experiment.n_schedule.last().unwrap()
    }

    /// Generations used by the fixed-point residual.
    pub fn fixed_point_ns(&self) -> Vec<usize> {
        let fp = &self.experiment.fixed_point;
        if fp.ns.is_empty() {
            let s = &self.experiment.n_schedule;
            s[s.len().saturating_sub(2)..].to_vec()
        } else {
            fp.ns.clone()
        }
    }
}

impl LawConfig {
    /// Builds the law, normalizes it if requested and attaches a certificate.
    pub fn prepare(&self, seed: u64) -> Result<PreparedLaw> {
        let raw = Law::build(self.spec.clone())?;
        let (law, normalization) = if self.normalize {
            let n = normalize_to_boundary(&raw)?;
            (n.law, Some((n.vartheta, n.shift)))
        } else {
            (raw, None)
        };
        let certificate = validate_boundary(&law, self.validation_samples, self.tolerance, seed)?;
        Ok(PreparedLaw {
            law: law.certified(&certificate),
            certificate,
            normalization,
        })
    }
}
