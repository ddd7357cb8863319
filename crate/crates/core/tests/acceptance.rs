//! Acceptance suite. Runs every criterion at its pinned tolerance, prints one
//! PASS/FAIL line per criterion and exits non-zero if any fails.
//!
//! `cargo test -p bramble --test acceptance` (about five minutes on one core).

use std::f64::consts::{LN_2, PI};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use bramble::brw::{many_to_one_check, truncated_mean_check, DEFAULT_POP_CAP};
use bramble::config::ExperimentConfig;
use bramble::lab::{self, Check, Ensemble, ExperimentResult};
use bramble::spine::ratio_moment_first;
use bramble::walk::{
    derive_walk, estimate_theta, harmonic_residual, ladder_heights, persistence_curve, renewal_table, RenewalConfig,
    RenewalTable, WalkModel,
};
use bramble::{validate_boundary, Estimate, Law, OffspringLawSpec};

const SEED: u64 = 20_240_601;

type PathFn<'a> = &'a (dyn Fn(&[f64]) -> f64 + Sync);

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn binary_law() -> Law {
    let law = Law::build(OffspringLawSpec::binary_gaussian(2.0 * LN_2, 2.0 * LN_2)).unwrap();
    let cert = validate_boundary(&law, 100_000, 1e-3, SEED).unwrap();
    law.certified(&cert)
}

struct Binary {
    law: Law,
    walk: WalkModel,
    table: RenewalTable,
}

fn fmt(e: &Estimate) -> String {
    format!("{:.4} ± {:.4}", e.value, e.se)
}

fn constant_chain(b: &Binary) -> Outcome {
    let ladders = ladder_heights(&b.walk, 1_000_000, SEED + 1).unwrap();
    let theta = estimate_theta(&b.walk, &[10_000], 1_000_000, SEED + 2).unwrap()[0].1;
    let target = (2.0 / (PI * b.walk.sigma2())).sqrt();
    let product = theta.value * ladders.c0_hat.value;
    let rel = (product - target).abs() / target;
    outcome(
        rel <= 0.05,
        format!(
            "theta = {} (expect 0.5642), c0 = {} (expect 1.2011), product {product:.4} vs {target:.4}, relative error {rel:.4} (tolerance 0.05), {} capped excursions",
            fmt(&theta),
            fmt(&ladders.c0_hat),
            ladders.capped
        ),
    )
}

fn truncated_identities(b: &Binary) -> Outcome {
    let rows = truncated_mean_check(&b.law, &b.table, &[5, 10, 15], &[0.0, 2.0], 10_000, 1_000_000, DEFAULT_POP_CAP, SEED + 3).unwrap();
    let mut ok = true;
    let mut worst: f64 = 0.0;
    for r in &rows {
        ok &= r.w_agrees(4.0) && r.d_agrees(4.0);
        let zw = (r.mean_w_alpha.value - r.persistence.value).abs() / r.mean_w_alpha.joint_se(&r.persistence);
        let zd = (r.mean_d_alpha.value - r.r_alpha0.value).abs() / r.mean_d_alpha.joint_se(&r.r_alpha0);
        worst = worst.max(zw).max(zd);
    }
    let r = rows.last().unwrap();
    outcome(
        ok,
        format!(
            "{} (n, alpha) cells, largest |z| = {worst:.2} (limit 4); n = 15, alpha = 2: E W = {} vs P = {}, E D = {} vs R = {}",
            rows.len(),
            fmt(&r.mean_w_alpha),
            fmt(&r.persistence),
            fmt(&r.mean_d_alpha),
            fmt(&r.r_alpha0)
        ),
    )
}

fn harmonic(walk: &WalkModel, table: &RenewalTable, seed: u64) -> (bool, f64) {
    let sigma = walk.sigma();
    let mut ok = true;
    let mut worst: f64 = 0.0;
    for k in 0..10 {
        let u = 4.0 * sigma * k as f64;
        let r = harmonic_residual(walk, table, u, 200_000, seed + k).unwrap();
        let z = r.value.abs() / r.se;
        ok &= z <= 4.0;
        worst = worst.max(z);
    }
    (ok, worst)
}

fn harmonic_identity(b: &Binary, nc: &Ensemble) -> Outcome {
    let (ok_b, zb) = harmonic(&b.walk, &b.table, SEED + 10);
    let (ok_n, zn) = harmonic(&nc.walk, &nc.table, SEED + 30);
    outcome(
        ok_b && ok_n,
        format!("10 points u = 0, 4σ, …, 36σ per model; largest |z| binary {zb:.2}, near-critical {zn:.2} (limit 4)"),
    )
}

fn ratio_first_moment(b: &Binary) -> Outcome {
    let theta = b.table.theta_hat;
    let ns = [100u64, 1_000, 10_000];
    let p = persistence_curve(&b.walk, &ns, 0.0, 1_000_000, SEED + 4).unwrap();
    let r0 = b.table.r_estimate(0.0).unwrap().value;
    let scaled: Vec<f64> = ns.iter().zip(&p).map(|(&n, e)| (n as f64).sqrt() * e.value / r0).collect();
    let gaps: Vec<f64> = scaled.iter().map(|s| (s - theta.value).abs()).collect();
    let rel = gaps[2] / theta.value;
    let monotone = gaps.windows(2).all(|w| w[1] <= w[0]);
    outcome(
        rel <= 0.10 && monotone,
        format!(
            "n^(1/2) P/R(0) = {:.4}, {:.4}, {:.4} at n = 1e2, 1e3, 1e4 against theta = {}; relative gap at 1e4 {rel:.4} (tolerance 0.10); gaps {:.4}, {:.4}, {:.4} non-increasing: {monotone}",
            scaled[0], scaled[1], scaled[2], fmt(&theta), gaps[0], gaps[1], gaps[2]
        ),
    )
}

fn spine_cross_check(b: &Binary) -> Outcome {
    let rows = ratio_moment_first(&b.law, &b.walk, &b.table, 0.0, &[10], &[10], 1_000_000, 10_000, DEFAULT_POP_CAP, SEED + 5).unwrap();
    let r = rows[0];
    let spine = r.spine.unwrap();
    let z = (spine.value - r.identity.value).abs() / spine.joint_se(&r.identity);
    outcome(
        z <= 4.0,
        format!("n = 10: spine {} vs identity {}, |z| = {z:.2} (limit 4)", fmt(&spine), fmt(&r.identity)),
    )
}

fn many_to_one(b: &Binary) -> Outcome {
    let mu = 2.0 * LN_2;
    let below_mu = move |p: &[f64]| f64::from(p[p.len() - 1] <= mu);
    let one = |_: &[f64]| 1.0;
    let deep = |p: &[f64]| f64::from(p.iter().any(|&v| v < -10.0));
    let dip = |p: &[f64]| f64::from(p.iter().any(|&v| v < -1.0));
    let mut ok = true;
    let mut lines = Vec::new();
    for n in [1usize, 2] {
        let cases: [(&str, PathFn); 4] =
            [("1{V_n<=mu}", &below_mu), ("1", &one), ("1{min<-10}", &deep), ("1{min<-1}", &dip)];
        for (k, (name, g)) in cases.into_iter().enumerate() {
            let m = many_to_one_check(&b.law, n, g, 1_000_000, SEED + 40 + (n * 10 + k) as u64).unwrap();
            ok &= m.agree(4.0);
            if n == 1 && k == 0 {
                let exact = Estimate::exact(1.0);
                ok &= m.lhs.agrees_with(&exact, 4.0) && m.rhs.agrees_with(&exact, 4.0);
            }
            lines.push(format!("n={n} g={name}: {} / {}", fmt(&m.lhs), fmt(&m.rhs)));
        }
    }
    outcome(ok, lines.join("; "))
}

fn check<'a>(res: &'a ExperimentResult, name: &str) -> &'a Check {
    res.checks
        .iter()
        .find(|c| c.name == name)
        .unwrap_or_else(|| panic!("check {name} missing"))
}

fn from_checks(res: &ExperimentResult, names: &[&str]) -> Outcome {
    let cs: Vec<&Check> = names.iter().map(|n| check(res, n)).collect();
    outcome(
        cs.iter().all(|c| c.passed),
        cs.iter().map(|c| c.line()).collect::<Vec<_>>().join("; "),
    )
}

fn fixed_point(res: &ExperimentResult) -> Outcome {
    let survivors = res.counts.last().unwrap().survivors;
    let mut o = from_checks(res, &["fixed_point_residual_small", "fixed_point_residual_shrinks", "laplace_shape_n120"]);
    o.passed &= survivors >= 2000;
    o.detail = format!("{survivors} survivors; {}", o.detail);
    o
}

fn determinism() -> Outcome {
    let mut cfg = ExperimentConfig::load(&configs().join("smoke/tiny.json")).unwrap();
    cfg.output.traces = true;
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let mut written = Vec::new();
    for (threads, dir) in [1, 4].into_iter().zip(&dirs) {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        let files = pool.install(|| {
            let ens = Ensemble::prepare(cfg.clone()).unwrap();
            let res = lab::run(&ens).unwrap();
            lab::write_results(&ens, &res, dir.path()).unwrap()
        });
        written.push(files);
    }
    let mut same = written[0].len() == written[1].len();
    for (a, b) in written[0].iter().zip(&written[1]) {
        same &= std::fs::read(a).unwrap() == std::fs::read(b).unwrap();
    }
    outcome(
        same,
        format!("{} files byte-identical with 1 and 4 worker threads", written[0].len()),
    )
}

fn main() -> ExitCode {
    let start = Instant::now();
    let mut results: Vec<(&str, Outcome, f64)> = Vec::new();
    let mut record = |name: &'static str, f: &mut dyn FnMut() -> Outcome| {
        let t = Instant::now();
        let o = f();
        let secs = t.elapsed().as_secs_f64();
        println!("{} {name}: {} [{secs:.1}s]", if o.passed { "PASS" } else { "FAIL" }, o.detail);
        results.push((name, o, secs));
    };

    let t = Instant::now();
    let law = binary_law();
    let walk = derive_walk(&law).unwrap();
    let table = renewal_table(&walk, &RenewalConfig::default(), SEED).unwrap();
    let b = Binary { law, walk, table };
    println!("binary renewal table: {} chains, c0 = {}, theta = {} [{:.1}s]", b.table.chain_count(), fmt(&b.table.c0_hat), fmt(&b.table.theta_hat), t.elapsed().as_secs_f64());

    let t = Instant::now();
    let nc_cfg = ExperimentConfig::load(&configs().join("near_critical.json")).unwrap();
    let nc = Ensemble::prepare(nc_cfg).unwrap();
    let nc_res = lab::run(&nc).unwrap();
    println!("near-critical ensemble: {} replicas to n = 120, target {:.4} [{:.1}s]", nc.traces.len(), nc.target, t.elapsed().as_secs_f64());

    record("constant_chain", &mut || constant_chain(&b));
    record("truncated_identities", &mut || truncated_identities(&b));
    record("harmonic_identity", &mut || harmonic_identity(&b, &nc));
    record("ratio_first_moment", &mut || ratio_first_moment(&b));
    record("spine_cross_check", &mut || spine_cross_check(&b));
    record("seneta_heyde_shape", &mut || from_checks(&nc_res, &["ratio_far_fraction_decreasing", "ratio_median_near_target"]));
    record("many_to_one", &mut || many_to_one(&b));
    record(
        "minimal_displacement",
        &mut || from_checks(&nc_res, &["running_min_nonincreasing", "running_min_median_decreases", "min_v_over_log_n_in_band"]),
    );
    record("fixed_point_residual", &mut || fixed_point(&nc_res));
    record("determinism", &mut || determinism());

    let failed: Vec<&str> = results.iter().filter(|r| !r.1.passed).map(|r| r.0).collect();
    println!(
        "acceptance: {} of {} criteria passed in {:.1}s{}",
        results.len() - failed.len(),
        results.len(),
        start.elapsed().as_secs_f64(),
        if failed.is_empty() { String::new() } else { format!("; failed: {}", failed.join(", ")) }
    );
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
