//! Reproducible experiment procedures. Each returns an [`ExperimentReport`]
//! and is a pure function of its inputs and seeds.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use log::{info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::em::{classify_anomalies, fit, fit_observed, FitOptions, FitResult, ObservedNetwork, Restriction, Threshold};
use crate::error::{AcdError, Result};
use crate::graph::{Network, Pair};
use crate::metrics::{
    auc_ranking, confusion, cosine_similarity_matched, hard_assignment, link_score, macro_f1_matched, one_hot,
};
use crate::model::{Hyperparams, Memberships};
use crate::sampler::{generate, PlantedConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    Injection,
    Remove2step,
    Add2step,
    Cv,
    SyntheticSweep,
}

/// One named scalar aggregated over replicates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metric {
    pub name: String,
    /// Grid value the metric belongs to (e.g. the anomaly ratio of a sweep cell).
    pub param: Option<f64>,
    pub mean: f64,
    /// Sample standard deviation; absent for a single replicate.
    pub std: Option<f64>,
    pub n: usize,
    pub values: Vec<f64>,
}

impl Metric {
    pub fn new(name: impl Into<String>, param: Option<f64>, values: Vec<f64>) -> Self {
        let n = values.len();
        let mean = if n == 0 { f64::NAN } else { values.iter().sum::<f64>() / n as f64 };
        let std = (n > 1).then(|| {
            let ss: f64 = values.iter().map(|x| (x - mean).powi(2)).sum();
            (ss / (n - 1) as f64).sqrt()
        });
        Metric {
            name: name.into(),
            param,
            mean,
            std,
            n,
            values,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub experiment: Experiment,
    pub config: serde_json::Value,
    pub metrics: Vec<Metric>,
    pub artifacts: Vec<String>,
    pub warnings: Vec<String>,
    /// Experiment-specific extras such as the pairs that were removed.
    pub details: serde_json::Value,
}

impl ExperimentReport {
    fn new(experiment: Experiment, config: &impl Serialize) -> Self {
        ExperimentReport {
            experiment,
            config: serde_json::to_value(config).expect("configs serialize"),
            metrics: Vec::new(),
            artifacts: Vec::new(),
            warnings: Vec::new(),
            details: serde_json::Value::Null,
        }
    }

    fn push(&mut self, name: &str, param: Option<f64>, values: Vec<f64>) {
        self.metrics.push(Metric::new(name, param, values));
    }

    fn warn(&mut self, msg: String) {
        warn!("{msg}");
        self.warnings.push(msg);
    }

    pub fn metric(&self, name: &str, param: Option<f64>) -> Option<&Metric> {
        self.metrics
            .iter()
            .find(|m| m.name == name && m.param.map(f64::to_bits) == param.map(f64::to_bits))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// `experiment,metric,param,mean,std,n` rows.
    pub fn to_csv(&self) -> String {
        let exp = serde_json::to_value(self.experiment).unwrap();
        let exp = exp.as_str().unwrap_or_default();
        let mut s = String::from("experiment,metric,param,mean,std,n\n");
        for m in &self.metrics {
            let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
            writeln!(s, "{exp},{},{},{},{},{}", m.name, opt(m.param), m.mean, opt(m.std), m.n).unwrap();
        }
        s
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| AcdError::io(dir, e))?;
        let json = dir.join("report.json");
        fs::write(&json, self.to_json()?).map_err(|e| AcdError::io(&json, e))?;
        let csv = dir.join("report.csv");
        fs::write(&csv, self.to_csv()).map_err(|e| AcdError::io(&csv, e))
    }
}

/// Seed of replicate `r` derived from a base seed.
pub fn replicate_seed(base: u64, r: usize) -> u64 {
    base.wrapping_add((r as u64 + 1).wrapping_mul(0xD1B5_4A32_D192_ED03))
}

fn with_seed(opts: &FitOptions, seed: u64) -> FitOptions {
    FitOptions {
        rng_seed: seed,
        ..opts.clone()
    }
}

fn attribute_truth(net: &Network) -> Option<Memberships> {
    net.attributes().map(|a| one_hot(a).0)
}

/// Number of nodes whose matched hard community agrees with the truth.
fn matched_agreement(inferred: &Memberships, truth: &Memberships) -> usize {
    let pred = hard_assignment(inferred);
    let gold = hard_assignment(truth);
    let k = inferred.n_cols().max(truth.n_cols());
    let mut overlap = vec![vec![0.0; k]; k];
    let labeled: Vec<usize> = (0..truth.n_rows()).filter(|&i| truth.row(i).iter().any(|&x| x > 0.0)).collect();
    for &i in &labeled {
        overlap[pred[i]][gold[i]] += 1.0;
    }
    let perm = crate::metrics::best_assignment(&overlap);
    labeled.iter().filter(|&&i| perm[pred[i]] == gold[i]).count()
}

// ---------------------------------------------------------------- sweep

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    /// Generator settings; `rho_a` is overridden by the grid.
    pub planted: PlantedConfig,
    pub rho_grid: Vec<f64>,
    pub replicates: usize,
    pub fit: FitOptions,
    pub hyper: Hyperparams,
    pub threshold: Threshold,
}

/// Per anomaly ratio: sample, fit the full model and the baseline, and score
/// memberships and anomaly labels against the planted truth.
pub fn run_synthetic_sweep(cfg: &SweepConfig) -> Result<ExperimentReport> {
    let mut report = ExperimentReport::new(Experiment::SyntheticSweep, cfg);
    for (g, &rho) in cfg.rho_grid.iter().enumerate() {
        let mut cells: [Vec<f64>; 7] = Default::default();
        for r in 0..cfg.replicates {
            let idx = g * cfg.replicates + r;
            let planted = PlantedConfig {
                rho_a: rho,
                rng_seed: replicate_seed(cfg.planted.rng_seed, idx),
                ..cfg.planted.clone()
            };
            let fit_opts = with_seed(&cfg.fit, replicate_seed(cfg.fit.rng_seed, idx));
            let outcome = (|| -> Result<[f64; 7]> {
                let (sample, _) = generate(&planted)?;
                let net = &sample.network;
                let acd = fit(net, &cfg.hyper, &fit_opts)?;
                let cd = fit(net, &cfg.hyper, &fit_opts.cd_baseline())?;
                let truth = &sample.params.u;
                let pred = classify_anomalies(&acd.q, cfg.threshold, Restriction::EdgesOnly, net);
                let conf = confusion(&pred, &sample.labels, &sample.labels.universe())?;
                Ok([
                    cosine_similarity_matched(&acd.params.u, truth)?,
                    cosine_similarity_matched(&cd.params.u, truth)?,
                    conf.f1,
                    conf.precision,
                    conf.recall,
                    sample.realized_rho_a,
                    net.n_edges() as f64,
                ])
            })();
            match outcome {
                Ok(vals) => cells.iter_mut().zip(vals).for_each(|(c, v)| c.push(v)),
                Err(e) => report.warn(format!("rho_a = {rho}, replicate {r}: {e}")),
            }
        }
        if cells[0].is_empty() {
            return Err(AcdError::Infeasible(format!("every replicate failed at rho_a = {rho}")));
        }
        info!("sweep cell rho_a = {rho} done");
        let names = ["cs_acd", "cs_cd", "anomaly_f1", "anomaly_precision", "anomaly_recall", "realized_rho_a", "n_edges"];
        for (name, vals) in names.into_iter().zip(cells) {
            report.push(name, Some(rho), vals);
        }
    }
    Ok(report)
}

// ---------------------------------------------------------------- injection

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AucNegatives {
    /// Edges present before injection.
    Edges,
    /// Every pair that was not injected.
    AllPairs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InjectionConfig {
    pub rho_a: f64,
    pub replicates: usize,
    pub seed: u64,
    pub fit: FitOptions,
    pub hyper: Hyperparams,
    pub threshold: Threshold,
    pub auc_negatives: AucNegatives,
}

/// Inject anomalous edges, fit, and score detection of the injected pairs.
pub fn run_injection(net: &Network, cfg: &InjectionConfig) -> Result<ExperimentReport> {
    let mut report = ExperimentReport::new(Experiment::Injection, cfg);
    let truth = attribute_truth(net);
    let mut cols: [Vec<f64>; 6] = Default::default();
    for r in 0..cfg.replicates {
        let (injected, labels) = net.inject_anomalies(cfg.rho_a, replicate_seed(cfg.seed, r))?;
        let res = fit(&injected, &cfg.hyper, &with_seed(&cfg.fit, replicate_seed(cfg.fit.rng_seed, r)))?;
        let pred = classify_anomalies(&res.q, cfg.threshold, Restriction::EdgesOnly, &injected);
        let conf = confusion(&pred, &labels, &labels.universe())?;
        cols[0].push(conf.precision);
        cols[1].push(conf.recall);
        cols[2].push(conf.f1);
        let positives = labels.anomalous_set();
        let negatives: BTreeSet<Pair> = match cfg.auc_negatives {
            AucNegatives::Edges => net.edge_pairs().into_iter().collect(),
            AucNegatives::AllPairs => {
                let n = net.n_nodes();
                (0..n)
                    .flat_map(|i| (i + 1..n).map(move |j| Pair::new(i, j)))
                    .filter(|p| !positives.contains(p))
                    .collect()
            }
        };
        match auc_ranking(|p| res.q.get(p.lo(), p.hi()), &positives, &negatives) {
            Ok(a) => cols[3].push(a),
            Err(e) => report.warn(format!("replicate {r}: AUC undefined ({e})")),
        }
        cols[4].push(positives.len() as f64);
        if let Some(t) = &truth {
            cols[5].push(cosine_similarity_matched(&res.params.u, t)?);
        }
    }
    let names = ["precision", "recall", "f1", "auc", "n_injected", "cs"];
    for (name, vals) in names.into_iter().zip(cols) {
        if !vals.is_empty() {
            report.push(name, None, vals);
        }
    }
    Ok(report)
}

// ---------------------------------------------------------------- removal

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoveConfig {
    /// Rule selecting edges to remove from the full-model Q.
    pub selection: Threshold,
    pub replicates: usize,
    pub fit: FitOptions,
    pub hyper: Hyperparams,
    /// Folds of the link-prediction check before and after; `None` skips it.
    pub cv_folds: Option<usize>,
}

/// Fit the full model, drop the edges it flags, refit the baseline on the
/// pruned network and compare against the baseline on the original.
pub fn run_remove_2step(net: &Network, cfg: &RemoveConfig) -> Result<ExperimentReport> {
    let mut report = ExperimentReport::new(Experiment::Remove2step, cfg);
    let truth = attribute_truth(net);
    let mut cols: [Vec<f64>; 5] = Default::default();
    let mut auc: [Vec<f64>; 2] = Default::default();
    let mut removed_lists = Vec::new();
    for r in 0..cfg.replicates {
        let opts = with_seed(&cfg.fit, replicate_seed(cfg.fit.rng_seed, r));
        let acd = fit(net, &cfg.hyper, &opts)?;
        let flagged = classify_anomalies(&acd.q, cfg.selection, Restriction::EdgesOnly, net).anomalous_set();
        let before = fit(net, &cfg.hyper, &opts.cd_baseline())?;
        let (pruned, after) = if flagged.is_empty() {
            report.warn(format!("replicate {r}: nothing selected for removal"));
            (net.clone(), before.clone())
        } else {
            let pruned = net.remove_pairs(&flagged)?;
            let after = fit(&pruned, &cfg.hyper, &opts.cd_baseline())?;
            (pruned, after)
        };
        cols[4].push(flagged.len() as f64);
        removed_lists.push(pair_labels(net, &flagged));
        if let Some(t) = &truth {
            cols[0].push(cosine_similarity_matched(&before.params.u, t)?);
            cols[1].push(cosine_similarity_matched(&after.params.u, t)?);
            cols[2].push(matched_agreement(&before.params.u, t) as f64);
            cols[3].push(matched_agreement(&after.params.u, t) as f64);
        }
        if let Some(folds) = cfg.cv_folds {
            let seed = replicate_seed(opts.rng_seed, 7);
            auc[0].push(cv_auc_mean(net, folds, &cfg.hyper, &opts, seed)?);
            auc[1].push(cv_auc_mean(&pruned, folds, &cfg.hyper, &opts, seed)?);
        }
    }
    let names = ["cs_before", "cs_after", "agree_before", "agree_after", "n_removed"];
    for (name, vals) in names.into_iter().zip(cols) {
        if !vals.is_empty() {
            report.push(name, None, vals);
        }
    }
    for (name, vals) in ["auc_before", "auc_after"].into_iter().zip(auc) {
        if !vals.is_empty() {
            report.push(name, None, vals);
        }
    }
    report.details = serde_json::json!({ "removed": removed_lists });
    Ok(report)
}

fn pair_labels(net: &Network, pairs: &BTreeSet<Pair>) -> Vec<[String; 2]> {
    pairs.iter().map(|p| [net.node_label(p.lo()), net.node_label(p.hi())]).collect()
}

// ---------------------------------------------------------------- addition

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AddConfig {
    pub n_add: usize,
    pub replicates: usize,
    pub fit: FitOptions,
    pub hyper: Hyperparams,
}

/// Largest admissible addition: 5% of the edge count.
pub fn max_additions(net: &Network) -> usize {
    net.n_edges() / 20
}

/// Fit the full model, add the top non-edges by Q, refit the baseline and
/// compare against the baseline on the original.
pub fn run_add_2step(net: &Network, cfg: &AddConfig) -> Result<ExperimentReport> {
    let cap = max_additions(net);
    if cfg.n_add > cap {
        return Err(AcdError::InvalidParam(format!(
            "n_add = {} exceeds the cap of {cap} (5% of {} edges)",
            cfg.n_add,
            net.n_edges()
        )));
    }
    let mut report = ExperimentReport::new(Experiment::Add2step, cfg);
    let truth = attribute_truth(net);
    let mut cols: [Vec<f64>; 4] = Default::default();
    let mut added_lists = Vec::new();
    for r in 0..cfg.replicates {
        let opts = with_seed(&cfg.fit, replicate_seed(cfg.fit.rng_seed, r));
        let before = fit(net, &cfg.hyper, &opts.cd_baseline())?;
        let after = if cfg.n_add == 0 {
            added_lists.push(Vec::new());
            before.clone()
        } else {
            let acd = fit(net, &cfg.hyper, &opts)?;
            let chosen =
                classify_anomalies(&acd.q, Threshold::TopK(cfg.n_add), Restriction::NonEdgesOnly, net).anomalous_set();
            added_lists.push(pair_labels(net, &chosen));
            fit(&net.add_pairs(&chosen)?, &cfg.hyper, &opts.cd_baseline())?
        };
        if let Some(t) = &truth {
            cols[0].push(cosine_similarity_matched(&before.params.u, t)?);
            cols[1].push(cosine_similarity_matched(&after.params.u, t)?);
            cols[2].push(macro_f1_matched(&before.params.u, t)?);
            cols[3].push(macro_f1_matched(&after.params.u, t)?);
        }
    }
    if truth.is_none() {
        report.warn("no node attributes: CS and F1 skipped".into());
    }
    for (name, vals) in ["cs_before", "cs_after", "f1_before", "f1_after"].into_iter().zip(cols) {
        if !vals.is_empty() {
            report.push(name, None, vals);
        }
    }
    report.details = serde_json::json!({ "added": added_lists });
    Ok(report)
}

// ---------------------------------------------------------------- cross-validation

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvConfig {
    pub folds: usize,
    pub seed: u64,
    pub fit: FitOptions,
    pub hyper: Hyperparams,
}

/// Held-out pairs of one fold.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fold {
    pub edges: BTreeSet<Pair>,
    pub non_edges: BTreeSet<Pair>,
}

impl Fold {
    pub fn heldout(&self) -> BTreeSet<Pair> {
        self.edges.union(&self.non_edges).copied().collect()
    }
}

const MAX_REFOLDS: usize = 10;

/// Split edges into `folds` groups and pair each with an equally sized,
/// disjoint sample of non-edges.
pub fn make_folds(net: &Network, folds: usize, seed: u64) -> Result<Vec<Fold>> {
    if folds < 2 {
        return Err(AcdError::InvalidParam("cross-validation needs at least 2 folds".into()));
    }
    for attempt in 0..MAX_REFOLDS {
        let mut rng = ChaCha8Rng::seed_from_u64(replicate_seed(seed, attempt));
        let mut edges = net.edge_pairs();
        let mut non_edges = net.non_edge_pairs();
        edges.shuffle(&mut rng);
        non_edges.shuffle(&mut rng);
        let mut out: Vec<Fold> = (0..folds)
            .map(|_| Fold {
                edges: BTreeSet::new(),
                non_edges: BTreeSet::new(),
            })
            .collect();
        for (i, p) in edges.into_iter().enumerate() {
            out[i % folds].edges.insert(p);
        }
        let mut pool = non_edges.into_iter();
        for f in out.iter_mut() {
            f.non_edges.extend(pool.by_ref().take(f.edges.len()));
        }
        if out.iter().all(|f| !f.edges.is_empty() && !f.non_edges.is_empty()) {
            return Ok(out);
        }
        warn!("fold attempt {attempt} left a fold without held-out edges or non-edges; refolding");
    }
    Err(AcdError::Infeasible(format!(
        "could not build {folds} folds with held-out edges and non-edges"
    )))
}

fn fold_auc(net: &Network, fold: &Fold, hyper: &Hyperparams, opts: &FitOptions) -> Result<(f64, FitResult)> {
    let obs = ObservedNetwork::with_heldout(net, &fold.heldout());
    let res = fit_observed(&obs, hyper, opts)?;
    let auc = auc_ranking(|p| link_score(&res.params, p), &fold.edges, &fold.non_edges)?;
    Ok((auc, res))
}

fn cv_auc_mean(net: &Network, folds: usize, hyper: &Hyperparams, opts: &FitOptions, seed: u64) -> Result<f64> {
    let fs = make_folds(net, folds, seed)?;
    let mut total = 0.0;
    for f in &fs {
        total += fold_auc(net, f, hyper, opts)?.0;
    }
    Ok(total / fs.len() as f64)
}

/// K-fold link prediction: held-out pairs are hidden from inference and
/// ranked by the fitted marginal edge probability.
pub fn run_link_prediction_cv(net: &Network, cfg: &CvConfig) -> Result<ExperimentReport> {
    let mut report = ExperimentReport::new(Experiment::Cv, cfg);
    let folds = make_folds(net, cfg.folds, cfg.seed)?;
    let mut aucs = Vec::new();
    for (f, fold) in folds.iter().enumerate() {
        let opts = with_seed(&cfg.fit, replicate_seed(cfg.fit.rng_seed, f));
        aucs.push(fold_auc(net, fold, &cfg.hyper, &opts)?.0);
    }
    report.push("auc", None, aucs);
    report.push(
        "heldout_edges",
        None,
        folds.iter().map(|f| f.edges.len() as f64).collect(),
    );
    Ok(report)
}
