use std::path::PathBuf;

use acd::em::{FitOptions, Restriction, Threshold};
use acd::model::Hyperparams;
use acd::pipelines::AucNegatives;
use acd::Execution;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

/// Joint community and edge-anomaly detection.
#[derive(Debug, Parser)]
#[command(name = "acd", version, about)]
pub struct Cli {
    /// Base RNG seed; the ACD_SEED environment variable takes precedence.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,

    /// Output directory. Defaults to runs/<config hash>.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    /// Worker threads for the data-parallel loops.
    #[arg(long, global = true, default_value_t = 1, value_parser = positive_usize("--threads"))]
    pub threads: usize,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    /// Sample a planted-community network with labeled anomalies.
    Generate(GenerateArgs),
    /// Fit the model to a network and write parameters, Q and labels.
    Fit(FitCmd),
    /// Inject anomalous edges and score their detection.
    Inject(InjectArgs),
    /// Remove flagged edges and refit the plain community model.
    Prune(PruneArgs),
    /// Add the most anomalous non-edges and refit the plain community model.
    Augment(AugmentArgs),
    /// K-fold link-prediction cross-validation.
    Cv(CvArgs),
    /// Synthetic sweep over the anomaly ratio.
    Sweep(SweepArgs),
}

pub fn positive_usize(flag: &'static str) -> impl Fn(&str) -> Result<usize, String> + Clone {
    move |s: &str| match s.parse::<usize>() {
        Ok(0) => Err(format!("{flag} must be ≥ 1")),
        Ok(v) => Ok(v),
        Err(_) => Err(format!("{flag} expects a positive integer, got `{s}`")),
    }
}

fn k_value(s: &str) -> Result<usize, String> {
    positive_usize("--k")(s)
}

fn seeds_value(s: &str) -> Result<usize, String> {
    positive_usize("--seeds")(s)
}

fn threshold_value(s: &str) -> Result<Threshold, String> {
    s.parse().map_err(|e: acd::AcdError| e.to_string())
}

fn unit_open(flag: &'static str) -> impl Fn(&str) -> Result<f64, String> + Clone {
    move |s: &str| match s.parse::<f64>() {
        Ok(x) if x > 0.0 && x < 1.0 => Ok(x),
        _ => Err(format!("{flag} must lie in (0, 1), got `{s}`")),
    }
}

fn positive_f64(flag: &'static str) -> impl Fn(&str) -> Result<f64, String> + Clone {
    move |s: &str| match s.parse::<f64>() {
        Ok(x) if x > 0.0 && x.is_finite() => Ok(x),
        _ => Err(format!("{flag} must be a positive number, got `{s}`")),
    }
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct InputArgs {
    /// Edge list: `source target [weight]`, tab, comma or space separated.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Treat the edge list as directed.
    #[arg(long)]
    pub directed: bool,
    /// Read the third column as an integer weight.
    #[arg(long)]
    pub weighted: bool,
    /// Node attribute file (`node category`) used as community ground truth.
    #[arg(long)]
    pub attributes: Option<PathBuf>,
}

/// EM and prior knobs shared by every subcommand that fits.
#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct FitArgs {
    /// Number of communities.
    #[arg(long, default_value_t = 3, value_parser = k_value)]
    pub k: usize,
    /// Random restarts; the best final log-posterior wins.
    #[arg(long, default_value_t = 5, value_parser = seeds_value)]
    pub seeds: usize,
    #[arg(long, default_value_t = 1000, value_parser = positive_usize("--max-iter"))]
    pub max_iter: usize,
    /// Absolute log-posterior change treated as no progress.
    #[arg(long, default_value_t = 1e-4, value_parser = positive_f64("--tol"))]
    pub tol: f64,
    #[arg(long, default_value_t = 10, value_parser = positive_usize("--check-every"))]
    pub check_every: usize,
    /// Consecutive sub-tolerance checks needed to stop.
    #[arg(long, default_value_t = 3, value_parser = positive_usize("--patience"))]
    pub patience: usize,
    /// Gamma shape of the membership prior (≥ 1).
    #[arg(long, default_value_t = 1.0)]
    pub a: f64,
    /// Gamma rate of the membership prior (≥ 0).
    #[arg(long, default_value_t = 1.0)]
    pub b: f64,
    /// Initial anomaly prior.
    #[arg(long, default_value_t = 0.1, value_parser = unit_open("--init-mu"))]
    pub init_mu: f64,
    /// Initial anomalous rate [default: half the mean edge weight].
    #[arg(long, value_parser = positive_f64("--init-pi"))]
    pub init_pi: Option<f64>,
    /// Keep mu at --init-mu throughout.
    #[arg(long)]
    pub pin_mu: bool,
    /// Keep pi at its initial value throughout.
    #[arg(long)]
    pub pin_pi: bool,
    /// Count each undirected pair once in the likelihood.
    #[arg(long)]
    pub single_factor: bool,
    /// Refuse networks with more nodes than this.
    #[arg(long, default_value_t = 20_000)]
    pub max_nodes: usize,
}

impl FitArgs {
    pub fn hyper(&self) -> Hyperparams {
        Hyperparams {
            a: self.a,
            b: self.b,
            k: self.k,
        }
    }

    pub fn options(&self, seed: u64, execution: Execution) -> FitOptions {
        FitOptions {
            n_seeds: self.seeds,
            max_iter: self.max_iter,
            tol: self.tol,
            check_every: self.check_every,
            patience: self.patience,
            init_mu: self.init_mu,
            init_pi: self.init_pi,
            fixed_mu_pi: false,
            pin_mu: self.pin_mu,
            pin_pi: self.pin_pi,
            single_factor_undirected: self.single_factor,
            max_nodes: self.max_nodes,
            execution,
            rng_seed: seed,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct PlantedArgs {
    #[arg(long, default_value_t = 500)]
    pub n: usize,
    #[arg(long = "k", default_value_t = 3, value_parser = k_value)]
    pub k: usize,
    #[arg(long, default_value_t = 20.0, value_parser = positive_f64("--avg-degree"))]
    pub avg_degree: f64,
    /// Anomalous Poisson mean.
    #[arg(long, default_value_t = 0.6)]
    pub pi: f64,
    /// Dirichlet mixed memberships instead of hard blocks.
    #[arg(long)]
    pub overlapping: bool,
    #[arg(long)]
    pub directed: bool,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub planted: PlantedArgs,
    /// Target fraction of anomalous edges.
    #[arg(long, default_value_t = 0.1)]
    pub rho_a: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RestrictArg {
    Edges,
    Nonedges,
    All,
}

impl From<RestrictArg> for Restriction {
    fn from(r: RestrictArg) -> Self {
        match r {
            RestrictArg::Edges => Restriction::EdgesOnly,
            RestrictArg::Nonedges => Restriction::NonEdgesOnly,
            RestrictArg::All => Restriction::AllPairs,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct FitCmd {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub fit: FitArgs,
    /// Plain community detection (mu = pi = 0, Q = 0).
    #[arg(long)]
    pub cd: bool,
    /// Anomaly cut: abs:<t>, relmax:<f> or top:<m>.
    #[arg(long, default_value = "abs:0.5", value_parser = threshold_value)]
    pub threshold: Threshold,
    /// Pairs eligible for labeling.
    #[arg(long, value_enum, default_value_t = RestrictArg::Edges)]
    pub restrict: RestrictArg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AucNegArg {
    Edges,
    AllPairs,
}

impl From<AucNegArg> for AucNegatives {
    fn from(a: AucNegArg) -> Self {
        match a {
            AucNegArg::Edges => AucNegatives::Edges,
            AucNegArg::AllPairs => AucNegatives::AllPairs,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct InjectArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub fit: FitArgs,
    /// Injected anomalies as a fraction of the existing edge count.
    #[arg(long, default_value_t = 0.1)]
    pub rho_a: f64,
    #[arg(long, default_value_t = 1, value_parser = positive_usize("--replicates"))]
    pub replicates: usize,
    #[arg(long, default_value = "abs:0.5", value_parser = threshold_value)]
    pub threshold: Threshold,
    /// Negative class of the detection AUC.
    #[arg(long, value_enum, default_value_t = AucNegArg::Edges)]
    pub auc_negatives: AucNegArg,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct PruneArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub fit: FitArgs,
    /// Remove this many top-Q edges.
    #[arg(long, conflicts_with = "threshold")]
    pub remove: Option<usize>,
    /// Remove edges clearing this cut instead (abs:, relmax: or top:).
    #[arg(long, value_parser = threshold_value)]
    pub threshold: Option<Threshold>,
    #[arg(long, default_value_t = 1, value_parser = positive_usize("--replicates"))]
    pub replicates: usize,
    /// Folds for the link-prediction check before and after; 0 skips it.
    #[arg(long, default_value_t = 5)]
    pub cv_folds: usize,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct AugmentArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub fit: FitArgs,
    /// Number of non-edges to add (at most 5% of the edge count).
    #[arg(long)]
    pub n_add: usize,
    #[arg(long, default_value_t = 1, value_parser = positive_usize("--replicates"))]
    pub replicates: usize,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct CvArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub fit: FitArgs,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SweepArgs {
    #[command(flatten)]
    pub planted: PlantedArgs,
    /// Anomaly-ratio grid as start:stop:step or a comma list.
    #[arg(long, default_value = "0.1:0.9:0.1")]
    pub rho_a: String,
    #[arg(long, default_value_t = 5, value_parser = positive_usize("--replicates"))]
    pub replicates: usize,
    #[arg(long, default_value_t = 5, value_parser = seeds_value)]
    pub seeds: usize,
    #[arg(long, default_value_t = 1000, value_parser = positive_usize("--max-iter"))]
    pub max_iter: usize,
    #[arg(long, default_value_t = 1e-4, value_parser = positive_f64("--tol"))]
    pub tol: f64,
    #[arg(long, default_value_t = 0.1, value_parser = unit_open("--init-mu"))]
    pub init_mu: f64,
    #[arg(long)]
    pub single_factor: bool,
    #[arg(long, default_value = "abs:0.5", value_parser = threshold_value)]
    pub threshold: Threshold,
}

/// Parse `start:stop:step` (inclusive, rounded to 1e-9) or `a,b,c`.
pub fn parse_grid(s: &str) -> Result<Vec<f64>, String> {
    let bad = || format!("--rho-a grid `{s}`: expected start:stop:step or a comma list");
    if s.contains(':') {
        let parts: Vec<f64> = s.split(':').map(str::parse).collect::<Result<_, _>>().map_err(|_| bad())?;
        let [start, stop, step] = parts[..] else { return Err(bad()) };
        if !(step > 0.0) || stop < start {
            return Err(bad());
        }
        let n = ((stop - start) / step + 1e-9).floor() as usize;
        Ok((0..=n).map(|i| ((start + i as f64 * step) * 1e9).round() / 1e9).collect())
    } else {
        s.split(',').map(|x| x.trim().parse().map_err(|_| bad())).collect()
    }
}
