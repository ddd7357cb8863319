//! Spinal decompositions.
//!
//! Under Lyons' measure `Q` (density `W_n` on the first `n` generations) one
//! line of descent, the spine, reproduces according to the size-biased point
//! process `Θ̂` and every other particle reproduces as under `P`. The spine is
//! chosen among the children with probability `e^{-V}/Σ e^{-V}` and its
//! positions form the associated walk `(S_n)`.
//!
//! The truncated measure `Q^(α)` (density `D_n^(α)/R_α(0)`) is sampled by
//! importance weighting: trees are drawn under `Q` and carry the weight
//! `R_α(V(w_n)) 1{V̲(w_n) ≥ −α} / R_α(0)`, which is exactly `dQ^(α)/dQ`
//! on trees with a marked spine.

use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::brw::{measure, reproduce, MartingaleTrace, Population};
use crate::error::{Error, Result};
use crate::law::Law;
use crate::rng::{self, domain, SimRng};
use crate::stats::{Estimate, MeanAcc};
use crate::walk::{persistence_curve, Renewal, WalkModel};

/// Spines resampled together share a group; estimates use group means.
pub const RESAMPLE_GROUP: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Measure {
    Q,
    QAlpha(f64),
}

impl Measure {
    pub fn label(&self) -> &'static str {
        match self {
            Measure::Q => "Q",
            Measure::QAlpha(_) => "Q_alpha",
        }
    }

    pub fn alpha(&self) -> Option<f64> {
        match self {
            Measure::Q => None,
            Measure::QAlpha(a) => Some(*a),
        }
    }
}

/// A spine trajectory with the positions of the spine's brothers.
#[derive(Debug, Clone, PartialEq)]
pub struct SpinePathSample {
    /// `V(w_0) = 0, V(w_1), …`; cut short when a `Q^(α)` proposal is killed.
    pub spine_positions: Vec<f64>,
    /// `brothers[i]` holds the positions of the siblings of `w_i`; `brothers[0]` is empty.
    pub brothers: Vec<Vec<f64>>,
    pub weight: f64,
    pub measure: Measure,
}

impl SpinePathSample {
    pub fn depth(&self) -> usize {
        self.spine_positions.len() - 1
    }

    pub fn terminal(&self) -> f64 {
        *self.spine_positions.last().unwrap()
    }

    fn root() -> Self {
        SpinePathSample {
            spine_positions: vec![0.0],
            brothers: vec![Vec::new()],
            weight: 1.0,
            measure: Measure::Q,
        }
    }

    fn extend(&mut self, law: &Law, rng: &mut SimRng) {
        let here = self.terminal();
        let mut bro = Vec::new();
        let v = law.sample_size_biased(rng, &mut bro);
        bro.iter_mut().for_each(|b| *b += here);
        self.spine_positions.push(here + v);
        self.brothers.push(bro);
    }
}

/// Exact sample of the spine and its brothers under `Q` up to generation `n`.
pub fn sample_spine_q(law: &Law, n: usize, rng: &mut SimRng) -> Result<SpinePathSample> {
    law.require_certified("sample_spine_q")?;
    let mut s = SpinePathSample::root();
    for _ in 0..n {
        s.extend(law, rng);
    }
    Ok(s)
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha.is_finite() && alpha >= 0.0 {
        Ok(())
    } else {
        Err(Error::range(alpha, "truncation level"))
    }
}

/// Weighted sample under `Q^(α)`. A proposal that drops below `−α` is
/// returned at once with weight 0.
pub fn sample_spine_qalpha(law: &Law, table: &dyn Renewal, alpha: f64, n: usize, rng: &mut SimRng) -> Result<SpinePathSample> {
    law.require_certified("sample_spine_qalpha")?;
    check_alpha(alpha)?;
    let mut s = SpinePathSample::root();
    s.measure = Measure::QAlpha(alpha);
    for _ in 0..n {
        s.extend(law, rng);
        if s.terminal() < -alpha {
            s.weight = 0.0;
            return Ok(s);
        }
    }
    s.weight = table.r(s.terminal() + alpha)? / table.r(alpha)?;
    Ok(s)
}

/// A batch of weighted spines. With resampling, spines are dependent inside
/// groups of [`RESAMPLE_GROUP`] and standard errors come from group means.
#[derive(Debug, Clone)]
pub struct SpineBatch {
    pub samples: Vec<SpinePathSample>,
    pub grouped: bool,
}

impl SpineBatch {
    /// Unbiased `Ê[weight · f]`.
    pub fn estimate(&self, f: impl Fn(&SpinePathSample) -> f64) -> Estimate {
        let vals: Vec<f64> = self
            .samples
            .iter()
            .map(|s| if s.weight == 0.0 { 0.0 } else { s.weight * f(s) })
            .collect();
        weighted_mean(&vals, self.grouped)
    }
}

fn weighted_mean(vals: &[f64], grouped: bool) -> Estimate {
    let mut acc = MeanAcc::default();
    if grouped {
        let mut total = MeanAcc::default();
        for g in vals.chunks(RESAMPLE_GROUP) {
            acc.push(g.iter().sum::<f64>() / g.len() as f64);
            g.iter().for_each(|&v| total.push(v));
        }
        Estimate::new(total.mean(), acc.se())
    } else {
        vals.iter().for_each(|&v| acc.push(v));
        acc.estimate()
    }
}

/// Draws `count` weighted `Q^(α)` spines to depth `n`.
///
/// With `resample_every = Some(k)`, every `k` levels each group is
/// systematically resampled in proportion to the current weights
/// `R_α(V(w_i)) 1{…} / R_α(0)`, after which all survivors carry the group's
/// mean weight. This keeps the estimator unbiased.
pub fn sample_spine_qalpha_batch(
    law: &Law,
    table: &dyn Renewal,
    alpha: f64,
    n: usize,
    count: usize,
    resample_every: Option<usize>,
    seed: u64,
) -> Result<SpineBatch> {
    law.require_certified("sample_spine_qalpha_batch")?;
    check_alpha(alpha)?;
    if resample_every == Some(0) {
        return Err(Error::config("resample_every", "must be positive"));
    }
    let r0 = table.r(alpha)?;
    let groups = rng::sharded(count, RESAMPLE_GROUP, seed, domain::SPINE, |rng, _, size| -> Result<Vec<SpinePathSample>> {
        let Some(every) = resample_every else {
            return (0..size).map(|_| sample_spine_qalpha(law, table, alpha, n, rng)).collect();
        };
        let mut paths: Vec<SpinePathSample> = (0..size)
            .map(|_| {
                let mut s = SpinePathSample::root();
                s.measure = Measure::QAlpha(alpha);
                s
            })
            .collect();
        // Per-path multiplier: the weight is base · R_α(V(w_i)) on survival.
        let mut base = vec![1.0 / r0; size];
        let mut alive = vec![true; size];
        for level in 1..=n {
            for (p, ok) in paths.iter_mut().zip(alive.iter_mut()) {
                p.extend(law, rng);
                if p.terminal() < -alpha {
                    *ok = false;
                }
            }
            if level % every == 0 && level < n {
                let w: Vec<f64> = (0..size)
                    .map(|i| if alive[i] { Ok(base[i] * table.r(paths[i].terminal() + alpha)?) } else { Ok(0.0) })
                    .collect::<Result<_>>()?;
                let mean = w.iter().sum::<f64>() / size as f64;
                if mean == 0.0 {
                    continue;
                }
                let picks = systematic(&w, rng);
                let fresh: Vec<SpinePathSample> = picks.iter().map(|&i| paths[i].clone()).collect();
                paths = fresh;
                for (k, &i) in picks.iter().enumerate() {
                    base[k] = mean / table.r(paths[k].terminal() + alpha)?;
                    alive[k] = alive[i];
                }
            }
        }
        for i in 0..size {
            paths[i].weight = if alive[i] && paths[i].spine_positions.iter().all(|&v| v >= -alpha) {
                base[i] * table.r(paths[i].terminal() + alpha)?
            } else {
                0.0
            };
        }
        Ok(paths)
    });
    let mut samples = Vec::with_capacity(count);
    for g in groups {
        samples.extend(g?);
    }
    Ok(SpineBatch {
        samples,
        grouped: resample_every.is_some(),
    })
}

/// Systematic resampling indices proportional to `w` (not all zero).
fn systematic(w: &[f64], rng: &mut SimRng) -> Vec<usize> {
    use rand::Rng;
    let n = w.len();
    let total: f64 = w.iter().sum();
    let u0: f64 = rng.random::<f64>() / n as f64;
    let mut out = Vec::with_capacity(n);
    let mut cum = 0.0;
    let mut i = 0;
    for k in 0..n {
        let target = (u0 + k as f64 / n as f64) * total;
        while i + 1 < n && cum + w[i] <= target {
            cum += w[i];
            i += 1;
        }
        out.push(i);
    }
    out
}

/// Full population built around a spine sample.
#[derive(Debug, Clone, PartialEq)]
pub struct SpineTrace {
    pub weight: f64,
    pub trace: MartingaleTrace,
}

/// Grows independent `P`-branching random walks from every brother of the
/// spine and records the martingales of the whole population, spine
/// included. A weight-0 sample yields an empty trace.
pub fn expand_off_spine(
    sample: &SpinePathSample,
    law: &Law,
    alphas: &[f64],
    table: Option<&dyn Renewal>,
    pop_cap: usize,
    rng: &mut SimRng,
) -> Result<SpineTrace> {
    let mut trace = MartingaleTrace {
        alphas: alphas.to_vec(),
        generations: Vec::new(),
        survived: false,
        truncated: false,
        genealogy: None,
    };
    if sample.weight == 0.0 {
        return Ok(SpineTrace { weight: 0.0, trace });
    }
    if !alphas.is_empty() && table.is_none() {
        return Err(Error::Precondition("truncated martingales need a renewal table".into()));
    }
    let mut others = Population::default();
    let mut next = Population::default();
    let mut spine_min = f64::INFINITY;
    trace.generations.push(measure(0, &others, Some((0.0, spine_min)), alphas, table)?);
    for k in 1..=sample.depth() {
        next.clear();
        if !reproduce(law, rng, &others, &mut next, pop_cap.saturating_sub(1 + sample.brothers[k].len()), None) {
            trace.truncated = true;
            break;
        }
        for &b in &sample.brothers[k] {
            next.push(b, spine_min.min(b));
        }
        let v = sample.spine_positions[k];
        spine_min = spine_min.min(v);
        trace.generations.push(measure(k, &next, Some((v, spine_min)), alphas, table)?);
        std::mem::swap(&mut others, &mut next);
    }
    trace.survived = !trace.truncated;
    Ok(SpineTrace {
        weight: sample.weight,
        trace,
    })
}

/// Expands every spine of a batch; spine `i` uses expansion stream `(seed, i)`.
pub fn expand_batch(
    batch: &SpineBatch,
    law: &Law,
    alphas: &[f64],
    table: Option<&dyn Renewal>,
    pop_cap: usize,
    seed: u64,
) -> Result<Vec<SpineTrace>> {
    batch
        .samples
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let mut rng = rng::stream(seed, domain::SPINE_EXPAND, i as u64);
            expand_off_spine(s, law, alphas, table, pop_cap, &mut rng)
        })
        .collect()
}

/// Unbiased weighted mean of `f` over expanded spine traces.
pub fn weighted_trace_mean(traces: &[SpineTrace], grouped: bool, f: impl Fn(&MartingaleTrace) -> f64) -> Estimate {
    let vals: Vec<f64> = traces
        .iter()
        .map(|t| if t.weight == 0.0 { 0.0 } else { t.weight * f(&t.trace) })
        .collect();
    weighted_mean(&vals, grouped)
}

/// `E_{Q^(α)}[W_n^(α)/D_n^(α)]` from both routes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RatioMomentRow {
    pub n: usize,
    /// `P̂(min_{k≤n} S_k ≥ −α) / R_α(0)`.
    pub identity: Estimate,
    /// `n^{1/2}` times `identity`.
    pub scaled_identity: Estimate,
    /// Weighted full-tree estimate, when requested for this `n`.
    pub spine: Option<Estimate>,
}

fn truncated_ratio(t: &MartingaleTrace) -> f64 {
    let g = t.last();
    g.w_alpha[0] / g.d_alpha[0]
}

/// First moment of the truncated ratio under `Q^(α)` along `n_list`.
///
/// The identity side runs `walk_paths` walk paths shared across `n`; the
/// spine side expands `spine_trees` weighted trees for each `n` in
/// `spine_ns`.
#[allow(clippy::too_many_arguments)]
pub fn ratio_moment_first(
    law: &Law,
    walk: &WalkModel,
    table: &dyn Renewal,
    alpha: f64,
    n_list: &[usize],
    spine_ns: &[usize],
    walk_paths: usize,
    spine_trees: usize,
    pop_cap: usize,
    seed: u64,
) -> Result<Vec<RatioMomentRow>> {
    check_alpha(alpha)?;
    let ns: Vec<u64> = n_list.iter().map(|&n| n as u64).collect();
    let persist = persistence_curve(walk, &ns, alpha, walk_paths, seed)?;
    let r0 = table.r(alpha)?;
    let mut rows = Vec::new();
    for (i, (&n, p)) in n_list.iter().zip(persist).enumerate() {
        let identity = p.scale(1.0 / r0);
        let spine = if spine_ns.contains(&n) {
            let batch = sample_spine_qalpha_batch(law, table, alpha, n, spine_trees, None, seed ^ ((i as u64) << 32))?;
            let traces = expand_batch(&batch, law, &[alpha], Some(table), pop_cap, seed ^ ((i as u64) << 32))?;
            if traces.iter().any(|t| t.trace.truncated) {
                return Err(Error::Precondition(format!("population cap hit while expanding spine trees at n = {n}")));
            }
            Some(weighted_trace_mean(&traces, false, truncated_ratio))
        } else {
            None
        };
        rows.push(RatioMomentRow {
            n,
            identity,
            scaled_identity: identity.scale((n as f64).sqrt()),
            spine,
        });
    }
    Ok(rows)
}

/// Second-moment row: `n·Ê[(W/D)²]` next to `n^{1/2}·Ê[W/D]` and `n·Var`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SecondMomentRow {
    pub n: usize,
    pub first: Estimate,
    pub second: Estimate,
    pub scaled_second: Estimate,
    pub scaled_variance: f64,
}

/// Weighted second moment of the truncated ratio under `Q^(α)`.
#[allow(clippy::too_many_arguments)]
pub fn ratio_moment_second(
    law: &Law,
    table: &dyn Renewal,
    alpha: f64,
    n_list: &[usize],
    spine_trees: usize,
    resample_every: Option<usize>,
    pop_cap: usize,
    seed: u64,
) -> Result<Vec<SecondMomentRow>> {
    let mut rows = Vec::new();
    for (i, &n) in n_list.iter().enumerate() {
        let s = seed ^ ((i as u64 + 1) << 40);
        let batch = sample_spine_qalpha_batch(law, table, alpha, n, spine_trees, resample_every, s)?;
        let traces = expand_batch(&batch, law, &[alpha], Some(table), pop_cap, s)?;
        if traces.iter().any(|t| t.trace.truncated) {
            return Err(Error::Precondition(format!("population cap hit while expanding spine trees at n = {n}")));
        }
        let grouped = batch.grouped;
        let first = weighted_trace_mean(&traces, grouped, truncated_ratio);
        let second = weighted_trace_mean(&traces, grouped, |t| truncated_ratio(t).powi(2));
        let nf = n as f64;
        rows.push(SecondMomentRow {
            n,
            first,
            second,
            scaled_second: second.scale(nf),
            scaled_variance: nf * (second.value - first.value * first.value),
        });
    }
    Ok(rows)
}

/// Writes `replica,measure,alpha,n,weight,V_spine_n,W,D,W_alpha,D_alpha`
/// for the last generation of every expanded spine tree. Only the first
/// truncation level of each trace is written.
pub fn write_spine_csv(samples: &[SpinePathSample], traces: &[SpineTrace], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["replica", "measure", "alpha", "n", "weight", "V_spine_n", "W", "D", "W_alpha", "D_alpha"])?;
    for (i, (s, t)) in samples.iter().zip(traces).enumerate() {
        let alpha = s.measure.alpha().map(|a| a.to_string()).unwrap_or_default();
        let (wn, dn, wa, da) = match t.trace.generations.last() {
            Some(g) => (
                g.w.to_string(),
                g.d.to_string(),
                g.w_alpha.first().map(f64::to_string).unwrap_or_default(),
                g.d_alpha.first().map(f64::to_string).unwrap_or_default(),
            ),
            None => Default::default(),
        };
        w.write_record([
            i.to_string(),
            s.measure.label().to_string(),
            alpha,
            s.depth().to_string(),
            s.weight.to_string(),
            s.terminal().to_string(),
            wn,
            dn,
            wa,
            da,
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::brw::{batch_simulate, SimOptions, DEFAULT_POP_CAP};
    use crate::law::{validate_boundary, OffspringLawSpec};
    use crate::stats::{ks_critical_1pct, ks_two_sample};
    use crate::walk::{conditioned_expectation, derive_walk, renewal_table, RenewalConfig, RenewalTable};
    use std::f64::consts::LN_2;
    use std::sync::OnceLock;

    fn binary() -> &'static Law {
        static LAW: OnceLock<Law> = OnceLock::new();
        LAW.get_or_init(|| {
            let law = Law::build(OffspringLawSpec::binary_gaussian(2.0 * LN_2, 2.0 * LN_2)).unwrap();
            let cert = validate_boundary(&law, 10_000, 1e-3, 5).unwrap();
            law.certified(&cert)
        })
    }

    fn table() -> &'static RenewalTable {
        static TABLE: OnceLock<RenewalTable> = OnceLock::new();
        TABLE.get_or_init(|| {
            let cfg = RenewalConfig {
                chains: 2_000,
                theta_paths: 0,
                ..RenewalConfig::default()
            };
            renewal_table(&derive_walk(binary()).unwrap(), &cfg, 2).unwrap()
        })
    }

    #[test]
    fn trivial_and_binary_structure() {
        let mut rng = rng::stream(1, 0, 0);
        let s = sample_spine_q(binary(), 0, &mut rng).unwrap();
        assert_eq!(s.spine_positions, vec![0.0]);
        let s = sample_spine_q(binary(), 12, &mut rng).unwrap();
        assert!(s.brothers[0].is_empty());
        assert!(s.brothers[1..].iter().all(|b| b.len() == 1));
        assert_eq!(s.weight, 1.0);
    }

    #[test]
    fn q_spine_marginal_is_the_walk() {
        let walk = derive_walk(binary()).unwrap();
        for n in [1usize, 10] {
            let mut rng = rng::stream(2, 0, n as u64);
            let spine: Vec<f64> = (0..10_000)
                .map(|_| sample_spine_q(binary(), n, &mut rng).unwrap().terminal())
                .collect();
            let mut rng = rng::stream(3, 0, n as u64);
            let direct: Vec<f64> = (0..10_000)
                .map(|_| (0..n).map(|_| walk.sample_step(&mut rng)).sum())
                .collect();
            let d = ks_two_sample(&spine, &direct);
            assert!(d < ks_critical_1pct(10_000, 10_000), "n={n}: {d}");
        }
    }

    #[test]
    fn qalpha_weights_are_normalised() {
        for (alpha, n, resample) in [(0.0, 20, None), (2.0, 20, None), (0.0, 40, Some(10)), (2.0, 40, Some(10))] {
            let b = sample_spine_qalpha_batch(binary(), table(), alpha, n, 20_000, resample, 4).unwrap();
            let e = b.estimate(|_| 1.0);
            assert!((e.value - 1.0).abs() <= 4.0 * e.se, "alpha={alpha} n={n}: {e:?}");
            for s in b.samples.iter().filter(|s| s.weight > 0.0) {
                assert!(s.spine_positions.iter().all(|&v| v >= -alpha));
            }
        }
    }

    #[test]
    fn qalpha_marginal_matches_h_transform() {
        let walk = derive_walk(binary()).unwrap();
        let n = 50;
        let f = |v: f64| 1.0 / table().r(v).unwrap();
        let b = sample_spine_qalpha_batch(binary(), table(), 0.0, n, 40_000, None, 5).unwrap();
        let spine = b.estimate(|s| f(s.terminal()));
        let h = conditioned_expectation(&walk, table(), 0.0, n, |p| f(p[n]), 40_000, 6).unwrap();
        assert!(spine.agrees_with(&h, 4.0), "{spine:?} vs {h:?}");
        let bounded = |v: f64| (v / 3.0).tanh();
        let spine = b.estimate(|s| bounded(s.terminal()));
        let h = conditioned_expectation(&walk, table(), 0.0, n, |p| bounded(p[n]), 40_000, 7).unwrap();
        assert!(spine.agrees_with(&h, 4.0), "{spine:?} vs {h:?}");
    }

    #[test]
    fn expansion_of_killed_sample_is_empty() {
        let s = SpinePathSample {
            spine_positions: vec![0.0, -3.0],
            brothers: vec![vec![], vec![1.0]],
            weight: 0.0,
            measure: Measure::QAlpha(1.0),
        };
        let mut rng = rng::stream(1, 0, 0);
        let t = expand_off_spine(&s, binary(), &[1.0], Some(table()), 100, &mut rng).unwrap();
        assert_eq!(t.weight, 0.0);
        assert!(t.trace.generations.is_empty());
    }

    #[test]
    fn reciprocal_derivative_under_qalpha() {
        let (alpha, n) = (1.0, 6);
        let batch = sample_spine_qalpha_batch(binary(), table(), alpha, n, 20_000, None, 8).unwrap();
        let traces = expand_batch(&batch, binary(), &[alpha], Some(table()), DEFAULT_POP_CAP, 8).unwrap();
        for t in traces.iter().filter(|t| t.weight > 0.0) {
            assert!(t.trace.generations.iter().all(|g| g.pop >= 1));
        }
        let spine = weighted_trace_mean(&traces, false, |t| 1.0 / t.last().d_alpha[0]);
        let direct = batch_simulate(binary(), &SimOptions::new(n, vec![alpha]), Some(table()), 20_000, 9);
        let mut alive = MeanAcc::default();
        for t in direct {
            alive.push(if t.unwrap().last().d_alpha[0] > 0.0 { 1.0 } else { 0.0 });
        }
        let p_side = alive.estimate().scale(1.0 / table().r(alpha).unwrap());
        assert!(spine.agrees_with(&p_side, 4.0), "{spine:?} vs {p_side:?}");
    }

    #[test]
    fn first_moment_identity_and_spine_agree() {
        let walk = derive_walk(binary()).unwrap();
        let rows = ratio_moment_first(binary(), &walk, table(), 0.0, &[5, 100], &[5], 200_000, 10_000, DEFAULT_POP_CAP, 10).unwrap();
        let spine = rows[0].spine.unwrap();
        assert!(spine.agrees_with(&rows[0].identity, 4.0), "{rows:?}");
        assert!(rows[1].spine.is_none());
        assert_eq!(rows[1].scaled_identity.value, rows[1].identity.value * 10.0);
    }

    #[test]
    fn second_moment_dominates_squared_first() {
        let rows = ratio_moment_second(binary(), table(), 0.0, &[4, 8], 4_000, None, DEFAULT_POP_CAP, 11).unwrap();
        for r in rows {
            assert!(r.second.value >= r.first.value * r.first.value, "{r:?}");
        }
    }

    #[test]
    fn scaled_second_moment_near_theta_squared() {
        let raw = Law::build(OffspringLawSpec {
            family: crate::law::Family::CountGaussian {
                count: crate::law::CountLaw::Pmf { probs: vec![0.0, 0.9, 0.1] },
                mu: 0.0,
                s2: 1.0,
            },
            boundary_certified: false,
        })
        .unwrap();
        let law = crate::law::normalize_to_boundary(&raw).unwrap().law;
        let law = law.clone().certified(&validate_boundary(&law, 20_000, 1e-3, 1).unwrap());
        let cfg = RenewalConfig {
            chains: 2_000,
            theta_paths: 0,
            ..RenewalConfig::default()
        };
        let table = renewal_table(&derive_walk(&law).unwrap(), &cfg, 2).unwrap();
        let rows = ratio_moment_second(&law, &table, 0.0, &[60], 2_000, Some(10), DEFAULT_POP_CAP, 5).unwrap();
        // Gaussian walks have theta = 1/sqrt(pi).
        let theta2 = 1.0 / std::f64::consts::PI;
        let rel = (rows[0].scaled_second.value / theta2 - 1.0).abs();
        assert!(rel < 0.3, "{:?}", rows[0]);
    }

    #[test]
    fn systematic_resampling_counts() {
        let mut rng = rng::stream(1, 0, 0);
        let picks = systematic(&[0.0, 3.0, 1.0, 0.0], &mut rng);
        assert_eq!(picks.len(), 4);
        assert_eq!(picks.iter().filter(|&&i| i == 1).count(), 3);
        assert_eq!(picks.iter().filter(|&&i| i == 2).count(), 1);
    }

    proptest::proptest! {
        #[test]
        fn systematic_copies_within_one_of_expectation(w in proptest::collection::vec(0.0f64..10.0, 1..40), seed in 0u64..1000) {
            let total: f64 = w.iter().sum();
            proptest::prop_assume!(total > 0.0);
            let mut rng = rng::stream(seed, 0, 0);
            let picks = systematic(&w, &mut rng);
            proptest::prop_assert_eq!(picks.len(), w.len());
            for (i, &wi) in w.iter().enumerate() {
                let expected = wi / total * w.len() as f64;
                let got = picks.iter().filter(|&&k| k == i).count() as f64;
                proptest::prop_assert!((got - expected).abs() < 1.0 + 1e-9, "index {} got {} expected {}", i, got, expected);
            }
        }
    }
}
