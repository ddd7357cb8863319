//! Experiments on ensembles of simulated branching random walks.
//!
//! All experiments of a config share one ensemble: `replicas` independent
//! runs to the largest generation of the schedule. Statistics labelled P*
//! use the replicas that are alive at that generation and were not
//! truncated; survival to the horizon stands in for global survival.

use std::path::{Path, PathBuf};

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::brw::{batch_simulate, write_traces_csv, MartingaleTrace, SimOptions};
use crate::config::{ExperimentConfig, ExperimentKind, PreparedLaw};
use crate::error::{Error, Result};
use crate::law::Law;
use crate::rng::{self, domain};
use crate::stats::{quantile_sorted, sorted, Summary};
use crate::walk::{derive_walk, renewal_table, Renewal, RenewalTable, WalkConstants, WalkModel};

/// Simulated ensemble plus the walk-side constants of its law.
pub struct Ensemble {
    pub config: ExperimentConfig,
    pub prepared: PreparedLaw,
    pub walk: WalkModel,
    pub table: RenewalTable,
    pub constants: WalkConstants,
    /// `sqrt(2/(πσ̂²))`.
    pub target: f64,
    pub traces: Vec<MartingaleTrace>,
}

impl Ensemble {
    pub fn prepare(config: ExperimentConfig) -> Result<Ensemble> {
        config.check()?;
        let seed = config.experiment.seed;
        let prepared = config.law.prepare(seed)?;
        let walk = derive_walk(&prepared.law)?;
        let table = renewal_table(&walk, &config.walk, seed)?;
        let constants = WalkConstants::new(&walk, &table, seed);
        let target = constants.target;
        let e = &config.experiment;
        let opts = SimOptions {
            n_max: config.n_max(),
            alphas: e.alphas.clone(),
            pop_cap: e.pop_cap,
            genealogy: false,
        };
        let alpha_table = (!e.alphas.is_empty()).then_some(&table as &dyn Renewal);
        let traces = batch_simulate(&prepared.law, &opts, alpha_table, e.replicas, seed)
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
        Ok(Ensemble {
            config,
            prepared,
            walk,
            table,
            constants,
            target,
            traces,
        })
    }

    fn survivors(&self) -> impl Iterator<Item = &MartingaleTrace> {
        self.traces.iter().filter(|t| t.in_p_star())
    }

    fn guard(&self) -> f64 {
        self.config.experiment.ratio_guard
    }

    fn summary(&self, values: &[f64], n: usize, stat: usize) -> Summary {
        let e = &self.config.experiment;
        let boot_seed = e.seed ^ ((n as u64) << 24 | stat as u64);
        Summary::of(values, boot_seed, e.bootstrap)
    }
}

/// Outcome of one assertion.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &str, passed: bool, detail: String) -> Check {
        Check {
            name: name.to_string(),
            passed,
            detail,
        }
    }

    pub fn line(&self) -> String {
        format!("{} {}: {}", if self.passed { "PASS" } else { "FAIL" }, self.name, self.detail)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CountRow {
    pub n: usize,
    pub replicas: usize,
    pub survivors: usize,
    pub extinct: usize,
    pub truncated: usize,
    /// Survivors with `D_n ≤ ε_D`.
    pub guarded: usize,
    /// Fraction of unguarded survivors with `|n^{1/2}W_n/D_n / target − 1| > far_tolerance`.
    pub far_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub n: usize,
    pub statistic: &'static str,
    pub summary: Summary,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LimsupRow {
    pub n: usize,
    pub threshold: f64,
    pub exceed: usize,
    pub eligible: usize,
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FixedPointRow {
    pub t: f64,
    pub laplace: f64,
    pub rhs: f64,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FixedPointReport {
    pub n: usize,
    pub samples: usize,
    pub survivors: usize,
    /// Survivors whose `D_n ≤ 0` was clamped to 0.
    pub clamped: usize,
    pub max_residual: f64,
    pub max_residual_ci: (f64, f64),
    pub rows: Vec<FixedPointRow>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ExperimentResult {
    pub counts: Vec<CountRow>,
    pub summaries: Vec<SummaryRow>,
    pub limsup: Vec<LimsupRow>,
    pub fixed_point: Vec<FixedPointReport>,
    pub checks: Vec<Check>,
}

impl ExperimentResult {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn summary(&self, n: usize, statistic: &str) -> Option<&Summary> {
        self.summaries
            .iter()
            .find(|r| r.n == n && r.statistic == statistic)
            .map(|r| &r.summary)
    }

    fn absorb(&mut self, other: ExperimentResult) {
        self.counts.extend(other.counts);
        self.summaries.extend(other.summaries);
        self.limsup.extend(other.limsup);
        self.fixed_point.extend(other.fixed_point);
        self.checks.extend(other.checks);
    }
}

fn sqrt_w(t: &MartingaleTrace, n: usize) -> f64 {
    (n as f64).sqrt() * t.generations[n].w
}

fn far(ratio: f64, target: f64, tol: f64) -> bool {
    (ratio / target - 1.0).abs() > tol
}

/// Replica bookkeeping for every `n` of the schedule.
pub fn count_rows(ens: &Ensemble) -> Vec<CountRow> {
    let e = &ens.config.experiment;
    let truncated = ens.traces.iter().filter(|t| t.truncated).count();
    let extinct = ens.traces.iter().filter(|t| !t.survived && !t.truncated).count();
    let survivors = ens.survivors().count();
    e.n_schedule
        .iter()
        .map(|&n| {
            let (mut guarded, mut far_count) = (0, 0);
            for t in ens.survivors() {
                let g = &t.generations[n];
                if g.d <= ens.guard() {
                    guarded += 1;
                } else if far(sqrt_w(t, n) / g.d, ens.target, e.far_tolerance) {
                    far_count += 1;
                }
            }
            let eligible = survivors - guarded;
            CountRow {
                n,
                replicas: ens.traces.len(),
                survivors,
                extinct,
                truncated,
                guarded,
                far_fraction: if eligible == 0 { f64::NAN } else { far_count as f64 / eligible as f64 },
            }
        })
        .collect()
}

/// Seneta–Heyde scaling: `n^{1/2}W_n`, the guarded ratio `n^{1/2}W_n/D_n`,
/// `D_n`, and `n^{1/2}W_n` against `target · D_terminal` of the same replica.
pub fn run_seneta_heyde(ens: &Ensemble) -> Result<ExperimentResult> {
    let e = &ens.config.experiment;
    let n_max = ens.config.n_max();
    if ens.survivors().next().is_none() {
        return Err(Error::Experiment("no replica survived to the end of the schedule".into()));
    }
    let mut out = ExperimentResult::default();
    let counts = count_rows(ens);
    for &n in &e.n_schedule {
        let sw: Vec<f64> = ens.survivors().map(|t| sqrt_w(t, n)).collect();
        let ratio: Vec<f64> = ens
            .survivors()
            .filter(|t| t.generations[n].d > ens.guard())
            .map(|t| sqrt_w(t, n) / t.generations[n].d)
            .collect();
        let d: Vec<f64> = ens.survivors().map(|t| t.generations[n].d).collect();
        let paired: Vec<f64> = ens
            .survivors()
            .filter(|t| t.generations[n_max].d > ens.guard())
            .map(|t| sqrt_w(t, n) / (ens.target * t.generations[n_max].d))
            .collect();
        for (k, (name, vals)) in [("sqrt_n_w", sw), ("ratio", ratio), ("d", d), ("sqrt_n_w_over_target_d_terminal", paired)]
            .into_iter()
            .enumerate()
        {
            out.summaries.push(SummaryRow {
                n,
                statistic: name,
                summary: ens.summary(&vals, n, k),
            });
        }
    }
    let a = &e.assertions;
    if a.ratio_trend {
        let fr: Vec<f64> = counts.iter().map(|c| c.far_fraction).collect();
        let ok = fr.windows(2).all(|w| w[1] < w[0]);
        out.checks.push(Check::new(
            "ratio_far_fraction_decreasing",
            ok,
            format!("fractions with |ratio/{:.4} - 1| > {}: {}", ens.target, e.far_tolerance, join(&fr)),
        ));
    }
    if let Some(tol) = a.median_tolerance {
        let med = out.summary(n_max, "ratio").unwrap().median();
        let rel = (med / ens.target - 1.0).abs();
        out.checks.push(Check::new(
            "ratio_median_near_target",
            rel <= tol,
            format!("median ratio at n = {n_max} is {med:.4}, target {:.4}, relative error {rel:.4} (tolerance {tol})", ens.target),
        ));
    }
    if let Some(max) = a.guard_max_fraction {
        let worst = counts
            .iter()
            .filter(|c| c.n >= 8)
            .map(|c| c.guarded as f64 / c.survivors.max(1) as f64)
            .fold(0.0, f64::max);
        out.checks.push(Check::new(
            "ratio_guard_fraction",
            worst < max,
            format!("largest guarded-out fraction for n >= 8 is {worst:.4} (limit {max})"),
        ));
    }
    out.counts = counts;
    Ok(out)
}

/// Running maxima `M_N = max_{k ≤ N} k^{1/2} W_k` against `t · target · D_terminal`.
pub fn run_limsup_probe(ens: &Ensemble) -> Result<ExperimentResult> {
    let e = &ens.config.experiment;
    let n_max = ens.config.n_max();
    let mut out = ExperimentResult::default();
    let eligible: Vec<&MartingaleTrace> = ens
        .survivors()
        .filter(|t| t.generations[n_max].d > ens.guard())
        .collect();
    // running[i][k] = max_{1 ≤ j ≤ k} j^{1/2} W_j for replica i
    let running: Vec<Vec<f64>> = eligible
        .iter()
        .map(|t| {
            let mut m = f64::NEG_INFINITY;
            (0..=n_max)
                .map(|k| {
                    if k > 0 {
                        m = m.max(sqrt_w(t, k));
                    }
                    m
                })
                .collect()
        })
        .collect();
    let mut dominated = true;
    for (t, r) in eligible.iter().zip(&running) {
        for &n in &e.n_schedule {
            dominated &= r[n] >= sqrt_w(t, n);
        }
    }
    out.checks.push(Check::new(
        "running_max_dominates",
        dominated,
        format!("M_N >= N^(1/2) W_N for {} replicas", eligible.len()),
    ));
    for &n in &e.n_schedule {
        let maxes: Vec<f64> = running.iter().map(|r| r[n]).collect();
        out.summaries.push(SummaryRow {
            n,
            statistic: "running_max_sqrt_n_w",
            summary: ens.summary(&maxes, n, 10),
        });
        // Exploratory: running min of k^{1/2} W_k / (target · D_terminal), k ≥ 1.
        let lows: Vec<f64> = eligible
            .iter()
            .map(|t| {
                let scale = ens.target * t.generations[n_max].d;
                (1..=n).map(|k| sqrt_w(t, k) / scale).fold(f64::INFINITY, f64::min)
            })
            .collect();
        out.summaries.push(SummaryRow {
            n,
            statistic: "running_min_ratio_to_target",
            summary: ens.summary(&lows, n, 11),
        });
        for &th in &e.thresholds {
            let exceed = eligible
                .iter()
                .zip(&running)
                .filter(|(t, r)| r[n] > th * ens.target * t.generations[n_max].d)
                .count();
            out.limsup.push(LimsupRow {
                n,
                threshold: th,
                exceed,
                eligible: eligible.len(),
                fraction: if eligible.is_empty() { f64::NAN } else { exceed as f64 / eligible.len() as f64 },
            });
        }
    }
    for &th in &e.thresholds {
        let fr: Vec<f64> = out.limsup.iter().filter(|r| r.threshold == th).map(|r| r.fraction).collect();
        out.checks.push(Check::new(
            &format!("limsup_fraction_nondecreasing_t{th}"),
            fr.windows(2).all(|w| w[1] >= w[0]),
            format!("fractions along the schedule: {}", join(&fr)),
        ));
    }
    if let (Some(min), Some(&top)) = (e.assertions.limsup_min_count, e.thresholds.iter().max_by(|a, b| a.total_cmp(b))) {
        let row = out.limsup.iter().rev().find(|r| r.threshold == top).unwrap();
        out.checks.push(Check::new(
            "limsup_top_threshold_reached",
            row.exceed >= min,
            format!("{} of {} replicas exceed {top} x target at N = {n_max} (need {min})", row.exceed, row.eligible),
        ));
    }
    Ok(out)
}

/// Minimal displacement: `min_v / log n`, `min_v − ½ log n` and its running min.
pub fn run_minpos(ens: &Ensemble) -> Result<ExperimentResult> {
    let e = &ens.config.experiment;
    let n_max = ens.config.n_max();
    let mut out = ExperimentResult::default();
    let shift = |t: &MartingaleTrace, k: usize| t.generations[k].min_v - 0.5 * (k as f64).ln();
    let running: Vec<Vec<f64>> = ens
        .survivors()
        .map(|t| {
            let mut m = f64::INFINITY;
            (0..=n_max)
                .map(|k| {
                    if k > 0 {
                        m = m.min(shift(t, k));
                    }
                    m
                })
                .collect()
        })
        .collect();
    let monotone = running.iter().all(|r| r[1..].windows(2).all(|w| w[1] <= w[0]));
    out.checks.push(Check::new(
        "running_min_nonincreasing",
        monotone,
        format!("checked {} replicas over k = 1..{n_max}", running.len()),
    ));
    for &n in &e.n_schedule {
        let over_log: Vec<f64> = if n >= 2 {
            ens.survivors().map(|t| t.generations[n].min_v / (n as f64).ln()).collect()
        } else {
            Vec::new()
        };
        let shifted: Vec<f64> = ens.survivors().map(|t| shift(t, n)).collect();
        let run: Vec<f64> = running.iter().map(|r| r[n]).collect();
        for (k, (name, vals)) in [("min_v_over_log_n", over_log), ("min_v_shift", shifted), ("running_min_shift", run)]
            .into_iter()
            .enumerate()
        {
            out.summaries.push(SummaryRow {
                n,
                statistic: name,
                summary: ens.summary(&vals, n, 20 + k),
            });
        }
    }
    let a = &e.assertions;
    if a.running_min_trend {
        let first = e.n_schedule[0];
        let lo = out.summary(first, "running_min_shift").unwrap().median();
        let hi = out.summary(n_max, "running_min_shift").unwrap().median();
        out.checks.push(Check::new(
            "running_min_median_decreases",
            hi < lo,
            format!("median running min {lo:.4} at N = {first}, {hi:.4} at N = {n_max}"),
        ));
    }
    if let Some([lo, hi]) = a.minpos_band {
        let med = out.summary(n_max, "min_v_over_log_n").unwrap().median();
        out.checks.push(Check::new(
            "min_v_over_log_n_in_band",
            (lo..=hi).contains(&med),
            format!("median min_v/log n at n = {n_max} is {med:.4}, band [{lo}, {hi}]"),
        ));
    }
    Ok(out)
}

/// Child sets drawn from the law, stored as `e^{-V}` weights.
struct ChildSets {
    weights: Vec<Vec<f64>>,
    max_weight: f64,
}

impl ChildSets {
    fn draw(law: &Law, count: usize, seed: u64) -> ChildSets {
        let mut rng = rng::stream(seed, domain::FIXED_POINT, 0);
        let mut buf = Vec::new();
        let weights: Vec<Vec<f64>> = (0..count)
            .map(|_| {
                buf.clear();
                law.sample_children(&mut rng, &mut buf);
                buf.iter().map(|v| (-v).exp()).collect()
            })
            .collect();
        let max_weight = weights.iter().flatten().copied().fold(0.0, f64::max);
        ChildSets { weights, max_weight }
    }
}

/// Empirical Laplace transform tabulated on `[0, s_max]`, read by linear interpolation.
struct LaplaceTable {
    step: f64,
    values: Vec<f64>,
}

impl LaplaceTable {
    fn new(d: &[f64], s_max: f64, points: usize) -> LaplaceTable {
        let step = s_max / (points - 1) as f64;
        let values = (0..points)
            .into_par_iter()
            .map(|j| {
                let s = j as f64 * step;
                d.iter().map(|&x| (-s * x).exp()).sum::<f64>() / d.len() as f64
            })
            .collect();
        LaplaceTable { step, values }
    }

    fn at(&self, s: f64) -> f64 {
        let x = s / self.step;
        let j = x.floor() as usize;
        if j + 1 >= self.values.len() {
            return *self.values.last().unwrap();
        }
        let f = x - j as f64;
        self.values[j] * (1.0 - f) + self.values[j + 1] * f
    }
}

fn residual_rows(d: &[f64], sets: &[&[f64]], ts: &[f64], s_max: f64, points: usize) -> Vec<FixedPointRow> {
    let lt = LaplaceTable::new(d, s_max, points);
    ts.iter()
        .map(|&t| {
            let laplace = lt.at(t);
            let rhs = sets.iter().map(|ws| ws.iter().map(|&w| lt.at(t * w)).product::<f64>()).sum::<f64>() / sets.len() as f64;
            FixedPointRow {
                t,
                laplace,
                rhs,
                residual: laplace - rhs,
            }
        })
        .collect()
}

fn max_abs_residual(rows: &[FixedPointRow]) -> f64 {
    rows.iter().map(|r| r.residual.abs()).fold(0.0, f64::max)
}

/// Residual of the fixed-point equation `L(t) = E[Π_{|x|=1} L(t e^{-V(x)})]`
/// for the empirical Laplace transform of `D_n`.
///
/// The `D` sample holds every non-truncated replica: extinct ones contribute
/// `D = 0`, survivors with `D_n ≤ 0` are clamped to 0. The right-hand side
/// averages over independently drawn child sets.
pub fn run_fixed_point(ens: &Ensemble) -> Result<ExperimentResult> {
    let e = &ens.config.experiment;
    let fp = &e.fixed_point;
    let survivors = ens.survivors().count();
    if survivors < fp.min_survivors {
        return Err(Error::Experiment(format!(
            "fixed-point residual needs at least {} survivors, got {survivors}",
            fp.min_survivors
        )));
    }
    let sets = ChildSets::draw(&ens.prepared.law, fp.child_sets, e.seed);
    let set_refs: Vec<&[f64]> = sets.weights.iter().map(Vec::as_slice).collect();
    let s_max = fp.t_max * sets.max_weight.max(1.0);
    let ts: Vec<f64> = (0..fp.t_points)
        .map(|k| fp.t_max * k as f64 / (fp.t_points - 1) as f64)
        .collect();
    let mut out = ExperimentResult::default();
    for n in ens.config.fixed_point_ns() {
        let mut clamped = 0;
        let d: Vec<f64> = ens
            .traces
            .iter()
            .filter(|t| !t.truncated)
            .map(|t| {
                let x = t.generations[n].d;
                if t.survived && x <= 0.0 {
                    clamped += 1;
                }
                x.max(0.0)
            })
            .collect();
        let rows = residual_rows(&d, &set_refs, &ts, s_max, fp.grid_points);
        let boot: Vec<f64> = (0..fp.bootstrap)
            .into_par_iter()
            .map(|b| {
                let mut rng = rng::stream(e.seed, domain::FIXED_POINT, 1 + ((n as u64) << 24 | b as u64));
                let rd: Vec<f64> = (0..d.len()).map(|_| d[rng.random_range(0..d.len())]).collect();
                let rs: Vec<&[f64]> = (0..set_refs.len()).map(|_| set_refs[rng.random_range(0..set_refs.len())]).collect();
                max_abs_residual(&residual_rows(&rd, &rs, &ts, s_max, fp.grid_points))
            })
            .collect();
        let bs = sorted(&boot);
        let ci = (quantile_sorted(&bs, 0.025), quantile_sorted(&bs, 0.975));
        let lap: Vec<f64> = rows.iter().map(|r| r.laplace).collect();
        out.checks.push(Check::new(
            &format!("laplace_shape_n{n}"),
            rows[0].laplace == 1.0 && rows[0].residual == 0.0 && lap.windows(2).all(|w| w[1] <= w[0]),
            format!("L(0) = {}, r(0) = {}, L non-increasing on {} points", rows[0].laplace, rows[0].residual, rows.len()),
        ));
        out.fixed_point.push(FixedPointReport {
            n,
            samples: d.len(),
            survivors,
            clamped,
            max_residual: max_abs_residual(&rows),
            max_residual_ci: ci,
            rows,
        });
    }
    let a = &e.assertions;
    let last = out.fixed_point.last().unwrap();
    if let Some(max) = a.fixed_point_max {
        out.checks.push(Check::new(
            "fixed_point_residual_small",
            last.max_residual <= max,
            format!(
                "max |r(t)| on [0, {}] at n = {} is {:.4} (95% CI {:.4}..{:.4}, limit {max})",
                fp.t_max, last.n, last.max_residual, last.max_residual_ci.0, last.max_residual_ci.1
            ),
        ));
    }
    if a.fixed_point_shrinks && out.fixed_point.len() >= 2 {
        let prev = &out.fixed_point[out.fixed_point.len() - 2];
        out.checks.push(Check::new(
            "fixed_point_residual_shrinks",
            last.max_residual <= prev.max_residual,
            format!("max |r| {:.4} at n = {}, {:.4} at n = {}", prev.max_residual, prev.n, last.max_residual, last.n),
        ));
    }
    Ok(out)
}

/// Runs every experiment listed in the config on one ensemble.
pub fn run(ens: &Ensemble) -> Result<ExperimentResult> {
    let mut out = ExperimentResult::default();
    let counts = count_rows(ens);
    let reconcile = counts
        .iter()
        .all(|c| c.survivors + c.extinct + c.truncated == c.replicas);
    out.checks.push(Check::new(
        "counts_reconcile",
        reconcile,
        format!("{} replicas per n", ens.traces.len()),
    ));
    for kind in &ens.config.experiment.runs {
        let part = match kind {
            ExperimentKind::SenetaHeyde => run_seneta_heyde(ens)?,
            ExperimentKind::Limsup => run_limsup_probe(ens)?,
            ExperimentKind::Minpos => run_minpos(ens)?,
            ExperimentKind::FixedPoint => run_fixed_point(ens)?,
        };
        out.absorb(part);
    }
    if out.counts.is_empty() {
        out.counts = counts;
    }
    let monotone = out
        .summaries
        .iter()
        .all(|r| r.summary.count == 0 || r.summary.quantiles.windows(2).all(|w| w[0] <= w[1]));
    out.checks.push(Check::new(
        "quantiles_monotone",
        monotone,
        format!("{} summary rows", out.summaries.len()),
    ));
    Ok(out)
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.4}")).collect::<Vec<_>>().join(", ")
}

fn cell(x: f64) -> String {
    if x.is_nan() {
        String::new()
    } else {
        x.to_string()
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    version: &'static str,
    seed: u64,
    config: &'a ExperimentConfig,
    certificate: &'a crate::law::BoundaryCertificate,
    normalization: Option<Normalized>,
    constants: &'a WalkConstants,
    target: f64,
    counts: &'a [CountRow],
    fixed_point: Vec<FixedPointHeadline>,
    checks: &'a [Check],
    passed: bool,
    files: Vec<String>,
}

#[derive(Serialize)]
struct Normalized {
    vartheta: f64,
    shift: f64,
}

#[derive(Serialize)]
struct FixedPointHeadline {
    n: usize,
    samples: usize,
    clamped: usize,
    max_residual: f64,
    max_residual_ci: (f64, f64),
}

/// Output file names, relative to the output directory.
pub mod files {
    pub const MANIFEST: &str = "manifest.json";
    pub const COUNTS: &str = "counts.csv";
    pub const SUMMARY: &str = "summary.csv";
    pub const LIMSUP: &str = "limsup.csv";
    pub const FIXED_POINT: &str = "fixed_point.csv";
    pub const RENEWAL: &str = "renewal.csv";
    pub const WALK_CONSTANTS: &str = "walk_constants.json";
    pub const TRACES: &str = "traces.csv";
}

/// Writes every CSV of `result` and the manifest under `dir`. Returns the
/// written paths.
pub fn write_results(ens: &Ensemble, result: &ExperimentResult, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();

    let path = dir.join(files::COUNTS);
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["n", "replicas", "survivors", "extinct", "truncated", "guarded", "far_fraction"])?;
    for c in &result.counts {
        w.write_record([
            c.n.to_string(),
            c.replicas.to_string(),
            c.survivors.to_string(),
            c.extinct.to_string(),
            c.truncated.to_string(),
            c.guarded.to_string(),
            cell(c.far_fraction),
        ])?;
    }
    w.flush()?;
    written.push(path);

    let path = dir.join(files::SUMMARY);
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["n", "statistic", "count", "mean", "q05", "q25", "q50", "q75", "q95", "median_ci_lo", "median_ci_hi"])?;
    for r in &result.summaries {
        let s = &r.summary;
        let mut rec = vec![r.n.to_string(), r.statistic.to_string(), s.count.to_string(), cell(s.mean)];
        rec.extend(s.quantiles.iter().map(|&q| cell(q)));
        rec.push(cell(s.median_ci.0));
        rec.push(cell(s.median_ci.1));
        w.write_record(&rec)?;
    }
    w.flush()?;
    written.push(path);

    if !result.limsup.is_empty() {
        let path = dir.join(files::LIMSUP);
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(["N", "t", "exceed", "eligible", "fraction"])?;
        for r in &result.limsup {
            w.write_record([r.n.to_string(), r.threshold.to_string(), r.exceed.to_string(), r.eligible.to_string(), cell(r.fraction)])?;
        }
        w.flush()?;
        written.push(path);
    }

    if !result.fixed_point.is_empty() {
        let path = dir.join(files::FIXED_POINT);
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(["n", "t", "laplace", "rhs", "residual"])?;
        for rep in &result.fixed_point {
            for r in &rep.rows {
                w.write_record([rep.n.to_string(), r.t.to_string(), r.laplace.to_string(), r.rhs.to_string(), r.residual.to_string()])?;
            }
        }
        w.flush()?;
        written.push(path);
    }

    let path = dir.join(files::RENEWAL);
    ens.table.write_csv(&path)?;
    written.push(path);
    let path = dir.join(files::WALK_CONSTANTS);
    ens.constants.write_json(&path)?;
    written.push(path);

    if ens.config.output.traces {
        let path = dir.join(files::TRACES);
        write_traces_csv(&ens.traces, &path)?;
        written.push(path);
    }

    let path = dir.join(files::MANIFEST);
    let manifest = Manifest {
        version: env!("CARGO_PKG_VERSION"),
        seed: ens.config.experiment.seed,
        config: &ens.config,
        certificate: &ens.prepared.certificate,
        normalization: ens.prepared.normalization.map(|(vartheta, shift)| Normalized { vartheta, shift }),
        constants: &ens.constants,
        target: ens.target,
        counts: &result.counts,
        fixed_point: result
            .fixed_point
            .iter()
            .map(|r| FixedPointHeadline {
                n: r.n,
                samples: r.samples,
                clamped: r.clamped,
                max_residual: r.max_residual,
                max_residual_ci: r.max_residual_ci,
            })
            .collect(),
        checks: &result.checks,
        passed: result.passed(),
        files: written
            .iter()
            .chain(std::iter::once(&path))
            .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
            .collect(),
    };
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    std::fs::write(&path, text)?;
    written.push(path);
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::OnceLock;

    const TINY: &str = r#"{
        "law": {"family": "binary_gaussian", "mu": 1.3862943611198906, "s2": 1.3862943611198906, "validation_samples": 20000},
        "walk": {"chains": 256, "batches": 8, "theta_paths": 20000, "theta_n": 1000},
        "experiment": {"n_schedule": [4, 8, 12], "replicas": 300, "seed": 7, "bootstrap": 50,
                       "fixed_point": {"child_sets": 2000, "bootstrap": 10, "grid_points": 512, "min_survivors": 50}}
    }"#;

    fn ensemble() -> &'static Ensemble {
        static ENS: OnceLock<Ensemble> = OnceLock::new();
        ENS.get_or_init(|| Ensemble::prepare(ExperimentConfig::from_json(TINY).unwrap()).unwrap())
    }

    #[test]
    fn structural_checks_pass() {
        let res = run(ensemble()).unwrap();
        for c in &res.checks {
            assert!(c.passed, "{}", c.line());
        }
        for c in &res.counts {
            assert_eq!(c.survivors + c.extinct + c.truncated, 300);
        }
        assert!(res.summary(12, "ratio").unwrap().count > 0);
        assert_eq!(res.fixed_point.len(), 2);
    }

    #[test]
    fn target_matches_sigma() {
        let t = ensemble().target;
        assert!((t - (1.0 / (std::f64::consts::PI * std::f64::consts::LN_2)).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn laplace_table_interpolates_exactly_at_nodes() {
        let d = [0.0, 0.5, 2.0];
        let lt = LaplaceTable::new(&d, 4.0, 5);
        for j in 0..5 {
            let s = j as f64;
            let direct = d.iter().map(|x| (-s * x).exp()).sum::<f64>() / 3.0;
            assert!((lt.at(s) - direct).abs() < 1e-15);
        }
        assert_eq!(lt.at(0.0), 1.0);
    }

    proptest::proptest! {
        #[test]
        fn laplace_table_is_a_laplace_transform(d in proptest::collection::vec(0.0f64..20.0, 1..50), s in 0.0f64..10.0) {
            let lt = LaplaceTable::new(&d, 10.0, 257);
            proptest::prop_assert_eq!(lt.at(0.0), 1.0);
            proptest::prop_assert!(lt.values.windows(2).all(|w| w[1] <= w[0]));
            let v = lt.at(s);
            proptest::prop_assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn fixed_point_residual_vanishes_for_exact_solution() {
        // A point mass at 0 solves the equation whatever the child sets are.
        let sets: Vec<Vec<f64>> = vec![vec![0.5, 2.0], vec![], vec![1.0]];
        let refs: Vec<&[f64]> = sets.iter().map(Vec::as_slice).collect();
        let rows = residual_rows(&[0.0; 10], &refs, &[0.0, 1.0, 5.0], 10.0, 64);
        assert!(rows.iter().all(|r| r.residual == 0.0));
    }

    #[test]
    fn results_are_reproducible() {
        let ens = ensemble();
        let res = run(ens).unwrap();
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        write_results(ens, &res, a.path()).unwrap();
        let again = run(ens).unwrap();
        let paths = write_results(ens, &again, b.path()).unwrap();
        for p in paths {
            let name = p.file_name().unwrap();
            assert_eq!(std::fs::read(a.path().join(name)).unwrap(), std::fs::read(&p).unwrap(), "{name:?}");
        }
        let manifest: serde_json::Value = serde_json::from_slice(&std::fs::read(a.path().join(files::MANIFEST)).unwrap()).unwrap();
        assert!(manifest["constants"]["c0_hat"]["se"].as_f64().unwrap() > 0.0);
        assert!(manifest["counts"][0]["guarded"].as_u64().is_some());
    }
}
