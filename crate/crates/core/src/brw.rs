//! Generation-synchronous simulation of the branching random walk.
//!
//! Each generation is kept as flat arrays of positions `V(x)` and path minima
//! `V̲(x) = min_{0<i≤|x|} V(x_i)` (the root is excluded, so a first-generation
//! particle's minimum is its own position). From them every generation
//! yields the additive martingale `W_n = Σ e^{-V}`, the derivative martingale
//! `D_n = Σ V e^{-V}` and their truncated versions
//! `W_n^(α) = Σ e^{-V} 1{V̲ ≥ -α}` and `D_n^(α) = Σ R_α(V) e^{-V} 1{V̲ ≥ -α}`.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::law::Law;
use crate::rng::{self, domain, SimRng};
use crate::stats::{CompensatedSum, Estimate, MeanAcc};
use crate::walk::{derive_walk, persistence_curve, Renewal};

pub const DEFAULT_POP_CAP: usize = 10_000_000;

/// A particle of the genealogy, recorded only on request.
#[derive(Debug, Clone, PartialEq)]
pub struct Particle {
    pub id: usize,
    pub parent: Option<usize>,
    pub generation: usize,
    pub position: f64,
    pub min_prefix: f64,
}

/// Martingale values of one generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationStats {
    pub n: usize,
    pub w: f64,
    pub d: f64,
    /// Indexed like [`MartingaleTrace::alphas`].
    pub w_alpha: Vec<f64>,
    pub d_alpha: Vec<f64>,
    /// `+∞` once the population is extinct.
    pub min_v: f64,
    pub pop: usize,
}

/// Per-generation record of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct MartingaleTrace {
    pub alphas: Vec<f64>,
    /// Generations `0..=n_max`; shorter only when the population cap was hit.
    pub generations: Vec<GenerationStats>,
    /// Population alive at `n_max`.
    pub survived: bool,
    /// The population cap was hit and the run stopped early.
    pub truncated: bool,
    pub genealogy: Option<Vec<Particle>>,
}

impl MartingaleTrace {
    pub fn last(&self) -> &GenerationStats {
        self.generations.last().expect("generation 0 is always present")
    }

    pub fn at(&self, n: usize) -> Option<&GenerationStats> {
        self.generations.get(n)
    }

    /// Survived to `n_max` without hitting the population cap.
    pub fn in_p_star(&self) -> bool {
        self.survived && !self.truncated
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimOptions {
    pub n_max: usize,
    pub alphas: Vec<f64>,
    pub pop_cap: usize,
    pub genealogy: bool,
}

impl SimOptions {
    pub fn new(n_max: usize, alphas: Vec<f64>) -> Self {
        Self {
            n_max,
            alphas,
            pop_cap: DEFAULT_POP_CAP,
            genealogy: false,
        }
    }

    fn check(&self, table: Option<&dyn Renewal>) -> Result<()> {
        if self.n_max == 0 {
            return Err(Error::config("n_max", "must be positive"));
        }
        if self.pop_cap == 0 {
            return Err(Error::config("pop_cap", "must be positive"));
        }
        if let Some(a) = self.alphas.iter().find(|a| !(a.is_finite() && **a >= 0.0)) {
            return Err(Error::config("alphas", format!("truncation level {a} must be finite and nonnegative")));
        }
        if !self.alphas.is_empty() && table.is_none() {
            return Err(Error::Precondition("truncated martingales need a renewal table".into()));
        }
        Ok(())
    }
}

/// One generation as flat arrays.
#[derive(Debug, Default, Clone)]
pub(crate) struct Population {
    pub pos: Vec<f64>,
    pub min_prefix: Vec<f64>,
}

impl Population {
    pub fn len(&self) -> usize {
        self.pos.len()
    }

    pub fn clear(&mut self) {
        self.pos.clear();
        self.min_prefix.clear();
    }

    pub fn push(&mut self, pos: f64, min_prefix: f64) {
        self.pos.push(pos);
        self.min_prefix.push(min_prefix);
    }
}

/// Replaces every particle of `parents` by its children, appending to
/// `children`. Returns `false` if the population would exceed `cap`.
pub(crate) fn reproduce(
    law: &Law,
    rng: &mut SimRng,
    parents: &Population,
    children: &mut Population,
    cap: usize,
    mut parent_of: Option<&mut Vec<usize>>,
) -> bool {
    let mut buf = Vec::with_capacity(8);
    for (i, (&x, &m)) in parents.pos.iter().zip(&parents.min_prefix).enumerate() {
        buf.clear();
        law.sample_children(rng, &mut buf);
        if children.len() + buf.len() > cap {
            return false;
        }
        for &v in &buf {
            let y = x + v;
            children.push(y, m.min(y));
            if let Some(p) = parent_of.as_deref_mut() {
                p.push(i);
            }
        }
    }
    true
}

/// Martingale values of a generation made of `pop` plus the optional
/// `extra` particle `(position, min_prefix)`.
pub(crate) fn measure(
    n: usize,
    pop: &Population,
    extra: Option<(f64, f64)>,
    alphas: &[f64],
    table: Option<&dyn Renewal>,
) -> Result<GenerationStats> {
    let mut w = CompensatedSum::new();
    let mut d = CompensatedSum::new();
    let mut wa = vec![CompensatedSum::new(); alphas.len()];
    let mut da = vec![CompensatedSum::new(); alphas.len()];
    let mut min_v = f64::INFINITY;
    let it = pop.pos.iter().copied().zip(pop.min_prefix.iter().copied()).chain(extra);
    for (x, m) in it {
        let e = (-x).exp();
        w.add(e);
        d.add(x * e);
        min_v = min_v.min(x);
        for (j, &a) in alphas.iter().enumerate() {
            if m >= -a {
                wa[j].add(e);
                let r = table
                    .expect("checked by SimOptions")
                    .r(x + a)
                    .map_err(|_| Error::range(x, format!("R_α argument at position {x} (α = {a})")))?;
                da[j].add(r * e);
            }
        }
    }
    Ok(GenerationStats {
        n,
        w: w.value(),
        d: d.value(),
        w_alpha: wa.iter().map(CompensatedSum::value).collect(),
        d_alpha: da.iter().map(CompensatedSum::value).collect(),
        min_v,
        pop: pop.len() + usize::from(extra.is_some()),
    })
}

pub(crate) fn extinct_stats(n: usize, alphas: usize) -> GenerationStats {
    GenerationStats {
        n,
        w: 0.0,
        d: 0.0,
        w_alpha: vec![0.0; alphas],
        d_alpha: vec![0.0; alphas],
        min_v: f64::INFINITY,
        pop: 0,
    }
}

/// Simulates one branching random walk from a single particle at 0.
pub fn simulate(law: &Law, opts: &SimOptions, table: Option<&dyn Renewal>, rng: &mut SimRng) -> Result<MartingaleTrace> {
    law.require_certified("simulate")?;
    opts.check(table)?;
    let alphas = &opts.alphas;

    let mut current = Population::default();
    current.push(0.0, f64::INFINITY);
    let mut generations = Vec::with_capacity(opts.n_max + 1);
    generations.push(measure(0, &current, None, alphas, table)?);

    let mut genealogy = opts.genealogy.then(|| {
        vec![Particle {
            id: 0,
            parent: None,
            generation: 0,
            position: 0.0,
            min_prefix: f64::INFINITY,
        }]
    });
    let mut first_id = 0usize;
    let mut parent_of = Vec::new();
    let mut next = Population::default();
    let mut truncated = false;

    for n in 1..=opts.n_max {
        if current.len() == 0 {
            generations.push(extinct_stats(n, alphas.len()));
            continue;
        }
        next.clear();
        parent_of.clear();
        let track = genealogy.is_some().then_some(&mut parent_of);
        if !reproduce(law, rng, &current, &mut next, opts.pop_cap, track) {
            truncated = true;
            break;
        }
        if let Some(g) = genealogy.as_mut() {
            let base = g.len();
            for (k, &p) in parent_of.iter().enumerate() {
                g.push(Particle {
                    id: base + k,
                    parent: Some(first_id + p),
                    generation: n,
                    position: next.pos[k],
                    min_prefix: next.min_prefix[k],
                });
            }
            first_id = base;
        }
        generations.push(measure(n, &next, None, alphas, table)?);
        std::mem::swap(&mut current, &mut next);
    }
    Ok(MartingaleTrace {
        alphas: alphas.clone(),
        survived: !truncated && current.len() > 0,
        truncated,
        generations,
        genealogy,
    })
}

/// Runs `replicas` independent simulations; replica `i` always uses stream
/// `(seed, i)`, so the output does not depend on scheduling.
pub fn batch_simulate(
    law: &Law,
    opts: &SimOptions,
    table: Option<&dyn Renewal>,
    replicas: usize,
    seed: u64,
) -> Vec<Result<MartingaleTrace>> {
    (0..replicas)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng::stream(seed, domain::BRW, i as u64);
            simulate(law, opts, table, &mut rng)
        })
        .collect()
}

/// Writes one row per `(replica, n, α)`; runs without truncation levels get
/// a single row per `(replica, n)` with empty α columns.
pub fn write_traces_csv(traces: &[MartingaleTrace], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "replica", "n", "W", "D", "alpha", "W_alpha", "D_alpha", "min_v", "pop", "survived", "truncated",
    ])?;
    for (r, t) in traces.iter().enumerate() {
        for g in &t.generations {
            let base = [r.to_string(), g.n.to_string(), g.w.to_string(), g.d.to_string()];
            let tail = [
                g.min_v.to_string(),
                g.pop.to_string(),
                t.survived.to_string(),
                t.truncated.to_string(),
            ];
            if t.alphas.is_empty() {
                let mid = [String::new(), String::new(), String::new()];
                w.write_record(base.iter().chain(&mid).chain(&tail))?;
            }
            for (j, a) in t.alphas.iter().enumerate() {
                let mid = [a.to_string(), g.w_alpha[j].to_string(), g.d_alpha[j].to_string()];
                w.write_record(base.iter().chain(&mid).chain(&tail))?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Both sides of the many-to-one formula for one functional.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ManyToOne {
    pub lhs: Estimate,
    pub rhs: Estimate,
}

impl ManyToOne {
    pub fn agree(&self, k: f64) -> bool {
        self.lhs.agrees_with(&self.rhs, k)
    }
}

/// `E Σ_{|x|=n} g(V(x₁), …, V(x_n))` by enumerating simulated trees against
/// `E[e^{S_n} g(S₁, …, S_n)]` along the associated walk.
pub fn many_to_one_check<G>(law: &Law, n: usize, g: G, n_samples: usize, seed: u64) -> Result<ManyToOne>
where
    G: Fn(&[f64]) -> f64 + Sync,
{
    if n == 0 || n > 4 {
        return Err(Error::config("n", "many-to-one check enumerates generations 1 to 4"));
    }
    let walk = derive_walk(law)?;

    fn descend<G: Fn(&[f64]) -> f64>(law: &Law, rng: &mut SimRng, path: &mut Vec<f64>, n: usize, g: &G) -> f64 {
        if path.len() == n {
            return g(path);
        }
        let mut kids = Vec::new();
        law.sample_children(rng, &mut kids);
        let here = path.last().copied().unwrap_or(0.0);
        let mut total = 0.0;
        for v in kids {
            path.push(here + v);
            total += descend(law, rng, path, n, g);
            path.pop();
        }
        total
    }

    let lhs = rng::sharded(n_samples, 4096, seed, domain::MANY_TO_ONE_TREE, |rng, _, count| {
        let mut acc = MeanAcc::default();
        let mut path = Vec::with_capacity(n);
        for _ in 0..count {
            acc.push(descend(law, rng, &mut path, n, &g));
        }
        acc
    });
    let rhs = rng::sharded(n_samples, 4096, seed, domain::MANY_TO_ONE_WALK, |rng, _, count| {
        let mut acc = MeanAcc::default();
        let mut path = vec![0.0; n];
        for _ in 0..count {
            let mut s = 0.0;
            for slot in path.iter_mut() {
                s += walk.sample_step(rng);
                *slot = s;
            }
            acc.push(s.exp() * g(&path));
        }
        acc
    });
    Ok(ManyToOne {
        lhs: MeanAcc::merged(&lhs).estimate(),
        rhs: MeanAcc::merged(&rhs).estimate(),
    })
}

/// Means of the truncated martingales at one `(n, α)` next to the values
/// the exact identities predict.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TruncatedMeanRow {
    pub n: usize,
    pub alpha: f64,
    pub mean_w_alpha: Estimate,
    /// `P(min_{k≤n} S_k ≥ −α)`.
    pub persistence: Estimate,
    pub mean_d_alpha: Estimate,
    /// `R_α(0)` with its table standard error.
    pub r_alpha0: Estimate,
}

impl TruncatedMeanRow {
    pub fn w_agrees(&self, k: f64) -> bool {
        self.mean_w_alpha.agrees_with(&self.persistence, k)
    }

    pub fn d_agrees(&self, k: f64) -> bool {
        self.mean_d_alpha.agrees_with(&self.r_alpha0, k)
    }
}

/// Checks `E W_n^(α) = P(min_{k≤n} S_k ≥ −α)` and `E D_n^(α) = R_α(0)` over
/// a grid of horizons and truncation levels with one batch of simulations.
///
/// Replicas hitting the population cap abort the check: excluding them
/// would bias both means.
#[allow(clippy::too_many_arguments)]
pub fn truncated_mean_check(
    law: &Law,
    table: &dyn Renewal,
    ns: &[usize],
    alphas: &[f64],
    replicas: usize,
    walk_paths: usize,
    pop_cap: usize,
    seed: u64,
) -> Result<Vec<TruncatedMeanRow>> {
    let walk = derive_walk(law)?;
    let n_max = *ns.iter().max().ok_or_else(|| Error::config("ns", "empty horizon list"))?;
    let opts = SimOptions {
        n_max,
        alphas: alphas.to_vec(),
        pop_cap,
        genealogy: false,
    };
    let traces = batch_simulate(law, &opts, Some(table), replicas, seed)
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    if traces.iter().any(|t| t.truncated) {
        return Err(Error::Precondition("population cap hit during the truncated-mean check".into()));
    }
    let ns_u64: Vec<u64> = ns.iter().map(|&n| n as u64).collect();
    let mut rows = Vec::new();
    for (j, &alpha) in alphas.iter().enumerate() {
        let persist = persistence_curve(&walk, &ns_u64, alpha, walk_paths, seed)?;
        let mut r0 = MeanAcc::default();
        for b in 0..table.batch_count() {
            r0.push(table.r_batch(b, alpha)?);
        }
        let r_alpha0 = Estimate::new(table.r(alpha)?, r0.se());
        for (&n, p) in ns.iter().zip(persist) {
            let (mut wa, mut da) = (MeanAcc::default(), MeanAcc::default());
            for t in &traces {
                wa.push(t.generations[n].w_alpha[j]);
                da.push(t.generations[n].d_alpha[j]);
            }
            rows.push(TruncatedMeanRow {
                n,
                alpha,
                mean_w_alpha: wa.estimate(),
                persistence: p,
                mean_d_alpha: da.estimate(),
                r_alpha0,
            });
        }
    }
    Ok(rows)
}
