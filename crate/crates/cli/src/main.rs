mod args;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use acd::em::{classify_anomalies, fit, Threshold};
use acd::graph::{load_edgelist, Network};
use acd::pipelines::{
    run_add_2step, run_injection, run_link_prediction_cv, run_remove_2step, run_synthetic_sweep, AddConfig,
    CvConfig, ExperimentReport, InjectionConfig, RemoveConfig, SweepConfig,
};
use acd::sampler::{generate, PlantedConfig};
use acd::Execution;
use anyhow::{anyhow, bail, Context, Result};
use clap::error::ErrorKind;
use clap::Parser;
use serde::Serialize;
use sha2::{Digest, Sha256};

use args::{Cli, Command, FitArgs, InputArgs, PlantedArgs};

/// Usage problems found after clap parsing; reported with exit code 1.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.is::<UsageError>() => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {}", render(&e));
            ExitCode::from(2)
        }
    }
}

/// Joins the error chain, dropping causes already quoted by their parent.
fn render(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let msg = cause.to_string();
        if out.ends_with(&msg) {
            continue;
        }
        if !out.is_empty() {
            out.push_str(": ");
        }
        out.push_str(&msg);
    }
    out
}

#[derive(Serialize)]
struct RunConfig<'a> {
    seed: u64,
    command: &'a Command,
}

/// SHA-256 over the canonical JSON of every effective flag except the
/// output location and thread count.
fn config_hash(cfg: &RunConfig) -> Result<String> {
    let canonical = serde_json::to_string(&serde_json::to_value(cfg)?)?;
    Ok(hex::encode(Sha256::digest(canonical.as_bytes())))
}

fn effective_seed(flag: u64) -> Result<u64> {
    match std::env::var("ACD_SEED") {
        Ok(s) => s
            .trim()
            .parse()
            .map_err(|_| usage(format!("ACD_SEED must be an unsigned integer, got `{s}`"))),
        Err(_) => Ok(flag),
    }
}

fn run(cli: Cli) -> Result<()> {
    let seed = effective_seed(cli.seed)?;
    let cfg = RunConfig {
        seed,
        command: &cli.command,
    };
    let hash = config_hash(&cfg)?;
    let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("runs").join(&hash[..12]));
    let execution = if cli.threads > 1 {
        Execution::Parallel
    } else {
        Execution::Sequential
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build()
        .context("building the worker pool")?;

    pool.install(|| -> Result<()> {
        validate(&cli.command)?;
        fs::create_dir_all(&out).with_context(|| format!("creating --out directory {}", out.display()))?;
        let config_json = serde_json::json!({ "hash": hash, "seed": seed, "command": cli.command });
        write(&out.join("config.json"), &serde_json::to_string_pretty(&config_json)?)?;
        let ctx = Ctx { seed, execution, out: &out };
        match &cli.command {
            Command::Generate(a) => cmd_generate(&ctx, &a.planted, a.rho_a),
            Command::Fit(a) => cmd_fit(&ctx, a),
            Command::Inject(a) => {
                let net = load_input(&a.input)?;
                let cfg = InjectionConfig {
                    rho_a: a.rho_a,
                    replicates: a.replicates,
                    seed,
                    fit: a.fit.options(seed, execution),
                    hyper: a.fit.hyper(),
                    threshold: a.threshold,
                    auc_negatives: a.auc_negatives.into(),
                };
                ctx.report(run_injection(&net, &cfg)?)
            }
            Command::Prune(a) => {
                let net = load_input(&a.input)?;
                let selection = match (a.remove, a.threshold) {
                    (Some(m), _) => Threshold::TopK(m),
                    (None, Some(t)) => t,
                    (None, None) => Threshold::RelativeToMax(0.7),
                };
                let cfg = RemoveConfig {
                    selection,
                    replicates: a.replicates,
                    fit: a.fit.options(seed, execution),
                    hyper: a.fit.hyper(),
                    cv_folds: (a.cv_folds > 0).then_some(a.cv_folds),
                };
                ctx.report(run_remove_2step(&net, &cfg)?)
            }
            Command::Augment(a) => {
                let net = load_input(&a.input)?;
                let cfg = AddConfig {
                    n_add: a.n_add,
                    replicates: a.replicates,
                    fit: a.fit.options(seed, execution),
                    hyper: a.fit.hyper(),
                };
                ctx.report(run_add_2step(&net, &cfg)?)
            }
            Command::Cv(a) => {
                let net = load_input(&a.input)?;
                let cfg = CvConfig {
                    folds: a.folds,
                    seed,
                    fit: a.fit.options(seed, execution),
                    hyper: a.fit.hyper(),
                };
                ctx.report(run_link_prediction_cv(&net, &cfg)?)
            }
            Command::Sweep(a) => {
                let fit_opts = acd::em::FitOptions {
                    n_seeds: a.seeds,
                    max_iter: a.max_iter,
                    tol: a.tol,
                    init_mu: a.init_mu,
                    single_factor_undirected: a.single_factor,
                    execution,
                    rng_seed: seed,
                    ..Default::default()
                };
                let cfg = SweepConfig {
                    planted: planted(&a.planted, 0.0, seed),
                    rho_grid: args::parse_grid(&a.rho_a).map_err(usage)?,
                    replicates: a.replicates,
                    fit: fit_opts,
                    hyper: acd::model::Hyperparams::new(a.planted.k),
                    threshold: a.threshold,
                };
                let report = run_synthetic_sweep(&cfg)?;
                write(&out.join("sweep.csv"), &sweep_table(&report))?;
                ctx.report(report)
            }
        }
    })?;
    println!("{}", out.display());
    Ok(())
}

/// Flag checks clap cannot express.
fn validate(cmd: &Command) -> Result<()> {
    let fit_args = match cmd {
        Command::Fit(a) => Some((&a.input, &a.fit)),
        Command::Inject(a) => Some((&a.input, &a.fit)),
        Command::Prune(a) => Some((&a.input, &a.fit)),
        Command::Augment(a) => Some((&a.input, &a.fit)),
        Command::Cv(a) => Some((&a.input, &a.fit)),
        Command::Generate(_) | Command::Sweep(_) => None,
    };
    if let Some((input, f)) = fit_args {
        check_fit_args(f)?;
        if input.input.is_none() {
            return Err(usage("--input is required"));
        }
    }
    match cmd {
        Command::Cv(a) if a.folds < 2 => Err(usage("--folds must be ≥ 2")),
        Command::Prune(a) if a.cv_folds == 1 => Err(usage("--cv-folds must be 0 or ≥ 2")),
        Command::Sweep(a) => args::parse_grid(&a.rho_a).map(|_| ()).map_err(usage),
        _ => Ok(()),
    }
}

fn check_fit_args(f: &FitArgs) -> Result<()> {
    if !(f.a >= 1.0) {
        return Err(usage(format!("--a must be ≥ 1, got {}", f.a)));
    }
    if !(f.b >= 0.0) {
        return Err(usage(format!("--b must be ≥ 0, got {}", f.b)));
    }
    Ok(())
}

struct Ctx<'a> {
    seed: u64,
    execution: Execution,
    out: &'a Path,
}

impl Ctx<'_> {
    fn report(&self, mut report: ExperimentReport) -> Result<()> {
        report.artifacts.push(self.out.join("report.json").display().to_string());
        report.artifacts.push(self.out.join("report.csv").display().to_string());
        report.save(self.out)?;
        Ok(())
    }
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn load_input(input: &InputArgs) -> Result<Network> {
    let path = input.input.as_ref().ok_or_else(|| usage("--input is required"))?;
    let net = load_edgelist(path, input.directed, input.weighted)
        .context("--input")?;
    match &input.attributes {
        Some(attr) => net
            .load_attributes(attr)
            .context("--attributes"),
        None => Ok(net),
    }
}

fn planted(p: &PlantedArgs, rho_a: f64, seed: u64) -> PlantedConfig {
    PlantedConfig {
        n_nodes: p.n,
        k: p.k,
        avg_degree: p.avg_degree,
        rho_a,
        pi: p.pi,
        overlapping: p.overlapping,
        directed: p.directed,
        rng_seed: seed,
    }
}

fn cmd_generate(ctx: &Ctx, p: &PlantedArgs, rho_a: f64) -> Result<()> {
    let cfg = planted(p, rho_a, ctx.seed);
    let (sample, cal) = generate(&cfg).map_err(|e| match e {
        acd::AcdError::InvalidParam(m) => usage(m),
        other => anyhow!(other),
    })?;
    sample.network.save_edgelist(ctx.out.join("network.tsv"))?;
    sample.labels.save_json(ctx.out.join("labels.json"))?;
    sample.params.save_json(ctx.out.join("params.json"))?;
    let summary = serde_json::json!({
        "config": cfg,
        "calibration": cal,
        "target_edges": cfg.target_edges(),
        "n_edges": sample.network.n_edges(),
        "n_latent_anomalous": sample.n_latent_anomalous,
        "n_realized_anomalous": sample.labels.n_anomalous(),
        "realized_rho_a": sample.realized_rho_a,
    });
    write(&ctx.out.join("report.json"), &serde_json::to_string_pretty(&summary)?)
}

fn cmd_fit(ctx: &Ctx, a: &args::FitCmd) -> Result<()> {
    let net = load_input(&a.input)?;
    let mut opts = a.fit.options(ctx.seed, ctx.execution);
    if a.cd {
        opts = opts.cd_baseline();
    }
    let res = fit(&net, &a.fit.hyper(), &opts).map_err(|e| match e {
        acd::AcdError::TooManyCommunities { k, n } => usage(format!("--k = {k} exceeds the {n} nodes of --input")),
        other => anyhow!(other),
    })?;
    res.params.save_json(ctx.out.join("params.json"))?;
    res.q.save_csv(ctx.out.join("Q.csv"))?;
    res.save_json(ctx.out.join("fit.json"))?;
    let labels = classify_anomalies(&res.q, a.threshold, a.restrict.into(), &net);
    let anomalous: Vec<[String; 2]> = labels
        .anomalous()
        .map(|p| [net.node_label(p.lo()), net.node_label(p.hi())])
        .collect();
    labels.save_json(ctx.out.join("labels.json"))?;
    let mut summary = serde_json::json!({
        "final_logpost": res.final_logpost(),
        "converged": res.converged,
        "n_iters": res.n_iters,
        "seed_used": res.seed_used,
        "seed_index": res.seed_index,
        "pi": res.params.pi,
        "mu": res.params.mu,
        "w": res.params.w,
        "threshold": a.threshold.to_string(),
        "anomalous_pairs": anomalous,
        "diagnostics": res.diagnostics,
    });
    if let Some(attrs) = net.attributes() {
        let truth = acd::metrics::one_hot(attrs).0;
        summary["cs"] = acd::metrics::cosine_similarity_matched(&res.params.u, &truth)?.into();
        summary["macro_f1"] = acd::metrics::macro_f1_matched(&res.params.u, &truth)?.into();
    }
    if !res.final_logpost().is_finite() {
        bail!("fit ended with a non-finite log-posterior");
    }
    write(&ctx.out.join("report.json"), &serde_json::to_string_pretty(&summary)?)
}

/// One row per grid value: means and standard deviations of the sweep metrics.
fn sweep_table(report: &ExperimentReport) -> String {
    let names = ["cs_acd", "cs_cd", "anomaly_f1", "anomaly_precision", "anomaly_recall", "realized_rho_a"];
    let mut params: Vec<f64> = report.metrics.iter().filter_map(|m| m.param).collect();
    params.dedup();
    let mut s = String::from("rho_a");
    for n in names {
        s.push_str(&format!(",{n}_mean,{n}_std"));
    }
    s.push('\n');
    for p in params {
        s.push_str(&p.to_string());
        for n in names {
            match report.metric(n, Some(p)) {
                Some(m) => s.push_str(&format!(",{},{}", m.mean, m.std.map(|x| x.to_string()).unwrap_or_default())),
                None => s.push_str(",,"),
            }
        }
        s.push('\n');
    }
    s
}
