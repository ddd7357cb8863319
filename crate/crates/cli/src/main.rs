use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use bramble::brw::{batch_simulate, write_traces_csv, SimOptions};
use bramble::config::{ExperimentConfig, PreparedLaw};
use bramble::lab::{self, Check, Ensemble};
use bramble::law::{normalize_to_boundary, Law};
use bramble::spine::{expand_batch, ratio_moment_first, sample_spine_qalpha_batch, write_spine_csv};
use bramble::walk::{derive_walk, renewal_table, Renewal, WalkConstants};
use bramble::Error;
use clap::{Parser, Subcommand};

const EXIT_CODES: &str = "\
Exit codes:
  0  success, all assertions passed
  1  at least one assertion failed (outputs are still written)
  2  usage error
  3  configuration error (missing key, bad value, unparsable JSON)
  4  I/O error (missing config file, unwritable output)
  5  law cannot be reduced to the boundary case
  6  law not certified: off the boundary, degenerate or not supercritical
  7  numeric or simulation error";

#[derive(Parser)]
#[command(name = "bramble", version, about = "Monte Carlo laboratory for boundary-case branching random walks", after_help = EXIT_CODES)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// JSON config file with keys law, walk, experiment, output.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Overrides experiment.seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory; defaults to output.dir of the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Worker threads; defaults to the number of cores.
    #[arg(long, global = true, env = "BRAMBLE_WORKERS")]
    workers: Option<usize>,

    #[arg(long, short, global = true)]
    verbose: bool,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Certify the boundary-case conditions of the law.
    ValidateLaw,
    /// Reduce the law to the boundary case and write the normalized spec.
    Normalize,
    /// Estimate σ², ĉ₀ and θ and check θ·ĉ₀ against sqrt(2/(πσ²)).
    WalkConstants,
    /// Tabulate the renewal function of the associated walk.
    Renewal,
    /// Simulate the branching random walk and write per-generation traces.
    Simulate,
    /// Compare spine-side and walk-side estimates of E_Q(α)[W_n/D_n].
    SpineCheck,
    /// Run the experiments listed in the config.
    Experiment,
}

struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Config { .. } => 3,
            Error::Io(_) | Error::Csv(_) | Error::Json(_) => 4,
            Error::NonBoundaryReducible(_) => 5,
            Error::Uncertified(_) | Error::Degenerate(_) | Error::NotSupercritical { .. } => 6,
            _ => 7,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

type Outcome = Result<Vec<Check>, Failure>;

struct Ctx {
    cfg: ExperimentConfig,
    out: PathBuf,
    verbose: bool,
    started: Instant,
}

impl Ctx {
    fn note(&self, what: &str) {
        if self.verbose {
            eprintln!("[{:>8.2}s] {what}", self.started.elapsed().as_secs_f64());
        }
    }

    fn seed(&self) -> u64 {
        self.cfg.experiment.seed
    }

    fn prepare_law(&self) -> Result<PreparedLaw, Failure> {
        let p = self.cfg.law.prepare(self.seed())?;
        self.note("law validated");
        Ok(p)
    }

    fn create_out(&self) -> Result<&Path, Failure> {
        std::fs::create_dir_all(&self.out).map_err(Error::from)?;
        Ok(&self.out)
    }
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    let mut text = serde_json::to_string_pretty(value).map_err(Error::from)?;
    text.push('\n');
    std::fs::write(path, text).map_err(Error::from)?;
    Ok(())
}

fn validate_law(ctx: &Ctx) -> Outcome {
    let p = ctx.prepare_law()?;
    write_json(&ctx.create_out()?.join("certificate.json"), &p.certificate)?;
    let c = &p.certificate;
    println!(
        "E sum e^-V = {:.6} ± {:.1e}, E sum V e^-V = {:.6} ± {:.1e}, sigma2 = {:.6}, mean offspring = {:.4}",
        c.e_sum.value, c.e_sum.se, c.e_vsum.value, c.e_vsum.se, c.sigma2.value, c.mean_offspring
    );
    for w in &c.warnings {
        println!("warning: {w}");
    }
    if c.certified {
        println!("law is boundary-certified");
        return Ok(Vec::new());
    }
    // Off the boundary: tell whether a linear transformation would help.
    let raw = Law::build(ctx.cfg.law.spec.clone())?;
    let n = normalize_to_boundary(&raw)?;
    Err(Error::Uncertified(format!(
        "boundary conditions fail; `normalize` would apply vartheta = {:.6}, shift = {:.6}",
        n.vartheta, n.shift
    ))
    .into())
}

fn normalize(ctx: &Ctx) -> Outcome {
    let raw = Law::build(ctx.cfg.law.spec.clone())?;
    let n = normalize_to_boundary(&raw)?;
    let mut law = ctx.cfg.law.clone();
    law.spec = n.law.spec().clone();
    law.normalize = false;
    let record = serde_json::json!({
        "vartheta": n.vartheta,
        "shift": n.shift,
        "law": law,
    });
    write_json(&ctx.create_out()?.join("normalized_law.json"), &record)?;
    println!("vartheta = {:.10}, shift = {:.10}", n.vartheta, n.shift);
    Ok(Vec::new())
}

fn walk_constants(ctx: &Ctx, write_table: bool) -> Outcome {
    let p = ctx.prepare_law()?;
    let walk = derive_walk(&p.law)?;
    let table = renewal_table(&walk, &ctx.cfg.walk, ctx.seed())?;
    ctx.note("renewal table built");
    let k = WalkConstants::new(&walk, &table, ctx.seed());
    let out = ctx.create_out()?;
    k.write_json(&out.join(lab::files::WALK_CONSTANTS)).map_err(Failure::from)?;
    if write_table {
        table.write_csv(&out.join(lab::files::RENEWAL))?;
        println!("R(0) = {}, R({:.3}) = {:.4}, {} chains", table.r(0.0)?, table.u_max(), table.r(table.u_max())?, table.chain_count());
    }
    println!(
        "sigma2 = {:.4}, c0 = {:.4} ± {:.4}, theta = {:.4} ± {:.4}, theta*c0 = {:.4} ± {:.4}, sqrt(2/(pi sigma2)) = {:.4}",
        k.sigma2, k.c0_hat.value, k.c0_hat.se, k.theta_hat.value, k.theta_hat.se, k.theta_c0.value, k.theta_c0.se, k.target
    );
    if k.theta_hat.value.is_nan() {
        return Ok(Vec::new());
    }
    let rel = (k.theta_c0.value - k.target).abs() / k.target;
    Ok(vec![Check {
        name: "constant_chain".into(),
        passed: rel <= 0.05,
        detail: format!("relative error of theta*c0 is {rel:.4} (tolerance 0.05)"),
    }])
}

fn simulate(ctx: &Ctx) -> Outcome {
    let p = ctx.prepare_law()?;
    let e = &ctx.cfg.experiment;
    let table = if e.alphas.is_empty() {
        None
    } else {
        Some(renewal_table(&derive_walk(&p.law)?, &ctx.cfg.walk, ctx.seed())?)
    };
    let opts = SimOptions {
        n_max: ctx.cfg.n_max(),
        alphas: e.alphas.clone(),
        pop_cap: e.pop_cap,
        genealogy: false,
    };
    let traces = batch_simulate(&p.law, &opts, table.as_ref().map(|t| t as &dyn Renewal), e.replicas, ctx.seed())
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;
    ctx.note("simulation done");
    write_traces_csv(&traces, &ctx.create_out()?.join(lab::files::TRACES))?;
    let survived = traces.iter().filter(|t| t.in_p_star()).count();
    let truncated = traces.iter().filter(|t| t.truncated).count();
    println!("{} replicas to n = {}: {survived} survived, {truncated} truncated", traces.len(), opts.n_max);
    Ok(Vec::new())
}

fn spine_check(ctx: &Ctx) -> Outcome {
    let p = ctx.prepare_law()?;
    let walk = derive_walk(&p.law)?;
    let table = renewal_table(&walk, &ctx.cfg.walk, ctx.seed())?;
    ctx.note("renewal table built");
    let e = &ctx.cfg.experiment;
    let s = &e.spine;
    let rows = ratio_moment_first(&p.law, &walk, &table, s.alpha, &[s.n], &[s.n], s.walk_paths, s.trees, e.pop_cap, ctx.seed())?;
    let row = rows[0];
    let spine = row.spine.expect("spine side requested");
    let batch = sample_spine_qalpha_batch(&p.law, &table, s.alpha, s.n, s.trees, s.resample_every, ctx.seed())?;
    let norm = batch.estimate(|_| 1.0);
    let traces = expand_batch(&batch, &p.law, &[s.alpha], Some(&table), e.pop_cap, ctx.seed())?;
    ctx.note("spine trees expanded");
    let out = ctx.create_out()?;
    write_spine_csv(&batch.samples, &traces, &out.join("spine.csv"))?;
    write_json(&out.join("spine_check.json"), &serde_json::json!({ "seed": ctx.seed(), "alpha": s.alpha, "row": row, "weight_mean": norm }))?;
    let z = (spine.value - row.identity.value) / spine.joint_se(&row.identity);
    Ok(vec![
        Check {
            name: "spine_weights_normalized".into(),
            passed: norm.agrees_with(&bramble::Estimate::exact(1.0), 4.0),
            detail: format!("mean weight {:.4} ± {:.4}", norm.value, norm.se),
        },
        Check {
            name: "spine_vs_identity".into(),
            passed: spine.agrees_with(&row.identity, 4.0),
            detail: format!(
                "n = {}: spine {:.5} ± {:.5}, identity {:.5} ± {:.5}, z = {z:.2}",
                s.n, spine.value, spine.se, row.identity.value, row.identity.se
            ),
        },
    ])
}

fn experiment(ctx: &Ctx) -> Outcome {
    let ens = Ensemble::prepare(ctx.cfg.clone())?;
    ctx.note("ensemble simulated");
    let result = lab::run(&ens)?;
    lab::write_results(&ens, &result, &ctx.out)?;
    ctx.note("results written");
    println!(
        "target sqrt(2/(pi sigma2)) = {:.4}; {} replicas, {} survivors",
        ens.target,
        ens.traces.len(),
        result.counts.first().map_or(0, |c| c.survivors)
    );
    Ok(result.checks)
}

fn run(cli: &Cli) -> Result<bool, Failure> {
    let path = cli.config.as_ref().ok_or(Failure {
        code: 2,
        message: "--config is required".into(),
    })?;
    if !path.exists() {
        return Err(Failure {
            code: 4,
            message: format!("config file {} not found", path.display()),
        });
    }
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(seed) = cli.seed {
        cfg.experiment.seed = seed;
    }
    let ctx = Ctx {
        out: cli.out.clone().unwrap_or_else(|| cfg.output.dir.clone()),
        cfg,
        verbose: cli.verbose,
        started: Instant::now(),
    };
    let checks = match cli.command {
        Command::ValidateLaw => validate_law(&ctx),
        Command::Normalize => normalize(&ctx),
        Command::WalkConstants => walk_constants(&ctx, false),
        Command::Renewal => walk_constants(&ctx, true),
        Command::Simulate => simulate(&ctx),
        Command::SpineCheck => spine_check(&ctx),
        Command::Experiment => experiment(&ctx),
    }?;
    for c in &checks {
        println!("{}", c.line());
    }
    Ok(checks.iter().all(|c| c.passed))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.workers {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot start {n} workers: {e}");
            return ExitCode::from(2);
        }
    }
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
