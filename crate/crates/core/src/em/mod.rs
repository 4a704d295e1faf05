//! EM inference: E-step (`rho`, `Q`), block M-steps, the log-posterior,
//! multi-seed restarts and anomaly classification.

mod classify;
mod data;
mod estep;
mod mstep;
mod objective;

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use log::{debug, warn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use classify::{classify_anomalies, Restriction, Threshold};
pub use data::ObservedNetwork;
pub use estep::{e_step_q, e_step_rho, rho_statistics, QStep, RhoStats};
pub use mstep::{m_step_mu, m_step_pi, m_step_u, m_step_v, m_step_w};
pub use objective::{complete_data_objective, log_posterior};

use crate::error::{AcdError, Result};
use crate::graph::Network;
use crate::model::{Hyperparams, Memberships, ModelParams};
use crate::par::Execution;

/// Symmetric `N x N` posterior anomaly probabilities with a zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct QMatrix {
    n: usize,
    values: Vec<f64>,
    known_zero: bool,
}

impl QMatrix {
    pub fn zeros(n: usize) -> Self {
        QMatrix {
            n,
            values: vec![0.0; n * n],
            known_zero: true,
        }
    }

    /// Wrap a row-major `n * n` buffer. Panics on a length mismatch.
    pub fn from_full(n: usize, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), n * n, "Q buffer must hold n * n values");
        let known_zero = values.iter().all(|&x| x == 0.0);
        QMatrix { n, values, known_zero }
    }

    pub fn n_nodes(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n..(i + 1) * self.n]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    /// True when every entry is zero, which enables the plain-factorization
    /// shortcuts in the M-step.
    pub fn is_known_zero(&self) -> bool {
        self.known_zero
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::with_capacity(self.n * self.n * 8);
        for i in 0..self.n {
            for (j, x) in self.row(i).iter().enumerate() {
                if j > 0 {
                    s.push(',');
                }
                write!(s, "{x}").unwrap();
            }
            s.push('\n');
        }
        s
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_csv()).map_err(|e| AcdError::io(path, e))
    }
}

/// Knobs of the EM loop and its initialization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitOptions {
    pub n_seeds: usize,
    pub max_iter: usize,
    /// Absolute change in the log-posterior counted as "no progress".
    pub tol: f64,
    pub check_every: usize,
    /// Consecutive sub-`tol` checks required to stop.
    pub patience: usize,
    pub init_mu: f64,
    /// `None` starts `pi` at half the mean positive edge weight.
    pub init_pi: Option<f64>,
    /// Plain community detection: `mu = pi = 0` and `Q = 0` throughout.
    pub fixed_mu_pi: bool,
    /// Keep `mu` at `init_mu` for every iteration.
    pub pin_mu: bool,
    /// Keep `pi` at its initial value for every iteration.
    pub pin_pi: bool,
    /// Count each undirected pair once: both stored orientations enter the
    /// likelihood with weight 1/2.
    pub single_factor_undirected: bool,
    pub max_nodes: usize,
    pub execution: Execution,
    pub rng_seed: u64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            n_seeds: 5,
            max_iter: 1000,
            tol: 1e-4,
            check_every: 10,
            patience: 3,
            init_mu: 0.1,
            init_pi: None,
            fixed_mu_pi: false,
            pin_mu: false,
            pin_pi: false,
            single_factor_undirected: false,
            max_nodes: 20_000,
            execution: Execution::default(),
            rng_seed: 0,
        }
    }
}

impl FitOptions {
    /// The plain community-detection baseline with otherwise identical knobs.
    pub fn cd_baseline(&self) -> Self {
        FitOptions {
            fixed_mu_pi: true,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(AcdError::InvalidParam(m.into()));
        if self.n_seeds == 0 {
            return bad("n_seeds must be at least 1");
        }
        if self.max_iter == 0 {
            return bad("max_iter must be at least 1");
        }
        if !(self.tol > 0.0) {
            return bad("tol must be positive");
        }
        if self.check_every == 0 || self.patience == 0 {
            return bad("check_every and patience must be at least 1");
        }
        if !self.fixed_mu_pi && !(self.init_mu > 0.0 && self.init_mu < 1.0) {
            return bad("init_mu must lie in (0, 1)");
        }
        if let Some(p) = self.init_pi {
            if !(p > 0.0 && p.is_finite()) {
                return bad("init_pi must be positive");
            }
        }
        Ok(())
    }

    /// Seed of restart `s`.
    pub fn seed_for(&self, s: usize) -> u64 {
        self.rng_seed.wrapping_add((s as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
    }
}

/// Counters collected along one run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Pair evaluations where both branch likelihoods vanished.
    pub degenerate_pairs: usize,
    /// Iterations where `sum Q = 0` left `pi` unchanged.
    pub pi_kept: usize,
    /// Restarts aborted on a non-finite log-posterior or update error.
    pub failed_seeds: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub params: ModelParams,
    pub q: QMatrix,
    pub logpost_trace: Vec<f64>,
    pub converged: bool,
    /// Derived RNG seed of the winning restart.
    pub seed_used: u64,
    pub seed_index: usize,
    pub n_iters: usize,
    pub diagnostics: Diagnostics,
}

impl FitResult {
    pub fn final_logpost(&self) -> f64 {
        self.logpost_trace.last().copied().unwrap_or(f64::NEG_INFINITY)
    }

    pub fn to_json_value(&self) -> serde_json::Value {
        serde_json::json!({
            "params": self.params.to_json_value(),
            "n_nodes": self.q.n_nodes(),
            "Q": self.q.as_slice(),
            "logpost_trace": self.logpost_trace,
            "converged": self.converged,
            "seed_used": self.seed_used,
            "seed_index": self.seed_index,
            "n_iters": self.n_iters,
            "diagnostics": self.diagnostics,
        })
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let s = serde_json::to_string(&self.to_json_value())?;
        fs::write(path, s).map_err(|e| AcdError::io(path, e))
    }
}

/// Random starting point: `u`, `v` uniform on (0, 1] scaled so the mean row
/// sum is 1, `w` uniform on (0, 1], `pi` and `mu` from the options.
pub fn random_init(obs: &ObservedNetwork, k: usize, opts: &FitOptions, seed: u64) -> ModelParams {
    let n = obs.n_nodes();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draw = |rng: &mut ChaCha8Rng| {
        let data: Vec<f64> = (0..n * k).map(|_| 1.0 - rng.random::<f64>()).collect();
        let scale = n as f64 / data.iter().sum::<f64>();
        Memberships::from_vec(n, k, data.into_iter().map(|x| x * scale).collect()).expect("shape")
    };
    let u = draw(&mut rng);
    let v = draw(&mut rng);
    let w = (0..k).map(|_| 1.0 - rng.random::<f64>()).collect();
    let (pi, mu) = if opts.fixed_mu_pi {
        (0.0, 0.0)
    } else {
        (opts.init_pi.unwrap_or(0.5 * obs.mean_positive_weight()), opts.init_mu)
    };
    ModelParams { u, v, w, pi, mu }
}

/// One EM trajectory. Exposes the individual steps for inspection and tests.
#[derive(Debug, Clone)]
pub struct EmRun<'a> {
    obs: &'a ObservedNetwork,
    hyper: Hyperparams,
    opts: FitOptions,
    params: ModelParams,
    q: QMatrix,
    rho: Option<RhoStats>,
    diagnostics: Diagnostics,
}

impl<'a> EmRun<'a> {
    pub fn new(obs: &'a ObservedNetwork, hyper: Hyperparams, opts: &FitOptions, mut init: ModelParams) -> Self {
        if opts.fixed_mu_pi {
            init.mu = 0.0;
            init.pi = 0.0;
        }
        EmRun {
            obs,
            hyper,
            opts: opts.clone(),
            params: init,
            q: QMatrix::zeros(obs.n_nodes()),
            rho: None,
            diagnostics: Diagnostics::default(),
        }
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn q(&self) -> &QMatrix {
        &self.q
    }

    pub fn diagnostics(&self) -> &Diagnostics {
        &self.diagnostics
    }

    /// `Q` and the `rho` statistics from the current parameters.
    pub fn e_step(&mut self) {
        let exec = self.opts.execution;
        if !self.opts.fixed_mu_pi {
            let step = e_step_q(&self.params, self.obs, exec);
            self.diagnostics.degenerate_pairs += step.degenerate_pairs;
            self.q = step.q;
        }
        self.rho = Some(rho_statistics(&self.params, self.obs, &self.q, exec));
    }

    /// Update `u`, `v`, `w`, `pi`, `mu` in that order, each block seeing the
    /// freshest others. Runs an E-step first if none is pending.
    pub fn m_step(&mut self) -> Result<()> {
        if self.rho.is_none() {
            self.e_step();
        }
        let rho = self.rho.take().expect("rho computed above");
        let exec = self.opts.execution;
        let (obs, q) = (self.obs, &self.q);
        self.params.u = m_step_u(&self.params, obs, q, &rho, &self.hyper, exec)?;
        self.params.v = m_step_v(&self.params, obs, q, &rho, &self.hyper, exec)?;
        self.params.w = m_step_w(&self.params, obs, q, &rho, exec)?;
        if !self.opts.fixed_mu_pi {
            if !self.opts.pin_pi {
                match m_step_pi(obs, q, exec) {
                    Some(pi) => self.params.pi = pi,
                    None => self.diagnostics.pi_kept += 1,
                }
            }
            if !self.opts.pin_mu {
                self.params.mu = m_step_mu(obs, q, exec);
            }
        }
        Ok(())
    }

    pub fn log_posterior(&self) -> f64 {
        log_posterior(&self.params, self.obs, &self.q, &self.hyper, self.opts.execution)
    }

    fn into_parts(self) -> (ModelParams, QMatrix, Diagnostics) {
        (self.params, self.q, self.diagnostics)
    }
}

/// Single trajectory from `init` under the convergence rule of `opts`.
/// The count weighting is taken from `obs` as given.
/// The returned `Q` is the E-step of the returned parameters, and the last
/// trace value is the log-posterior at that pair.
pub fn fit_from(
    obs: &ObservedNetwork,
    hyper: &Hyperparams,
    opts: &FitOptions,
    init: ModelParams,
) -> Result<FitResult> {
    let mut run = EmRun::new(obs, *hyper, opts, init);
    let mut trace: Vec<f64> = Vec::new();
    let mut streak = 0;
    let mut converged = false;
    let mut n_iters = 0;
    for it in 0..opts.max_iter {
        run.e_step();
        if it % opts.check_every == 0 {
            let l = run.log_posterior();
            if !l.is_finite() {
                return Err(AcdError::NonFinite { iter: it });
            }
            if let Some(&prev) = trace.last() {
                if (l - prev).abs() < opts.tol {
                    streak += 1;
                } else {
                    streak = 0;
                }
            }
            trace.push(l);
            if streak >= opts.patience {
                converged = true;
                break;
            }
        }
        run.m_step()?;
        n_iters = it + 1;
    }
    if !converged {
        run.e_step();
        let l = run.log_posterior();
        if !l.is_finite() {
            return Err(AcdError::NonFinite { iter: n_iters });
        }
        trace.push(l);
    }
    let (params, q, diagnostics) = run.into_parts();
    Ok(FitResult {
        params,
        q,
        logpost_trace: trace,
        converged,
        seed_used: opts.rng_seed,
        seed_index: 0,
        n_iters,
        diagnostics,
    })
}

fn check_sizes(n: usize, hyper: &Hyperparams, opts: &FitOptions) -> Result<()> {
    hyper.validate()?;
    opts.validate()?;
    if hyper.k > n {
        return Err(AcdError::TooManyCommunities { k: hyper.k, n });
    }
    if n > opts.max_nodes {
        return Err(AcdError::TooManyNodes { n, max: opts.max_nodes });
    }
    Ok(())
}

/// Best of `opts.n_seeds` random restarts by final log-posterior; ties go to
/// the lowest restart index.
pub fn fit_observed(obs: &ObservedNetwork, hyper: &Hyperparams, opts: &FitOptions) -> Result<FitResult> {
    check_sizes(obs.n_nodes(), hyper, opts)?;
    let reweighted;
    let wants_half = opts.single_factor_undirected && !obs.is_directed();
    let obs = if wants_half != (obs.count_weight() < 1.0) {
        reweighted = obs.clone().with_single_factor(wants_half);
        &reweighted
    } else {
        obs
    };
    if obs.n_observed_entries() == 0 {
        return Err(AcdError::NoEdges);
    }
    let mut best: Option<FitResult> = None;
    let mut failed = Vec::new();
    let mut last_err = None;
    for s in 0..opts.n_seeds {
        let seed = opts.seed_for(s);
        let init = random_init(obs, hyper.k, opts, seed);
        match fit_from(obs, hyper, opts, init) {
            Ok(mut r) => {
                debug!("restart {s}: logpost {:.6} after {} iterations", r.final_logpost(), r.n_iters);
                r.seed_used = seed;
                r.seed_index = s;
                if best.as_ref().is_none_or(|b| r.final_logpost() > b.final_logpost()) {
                    best = Some(r);
                }
            }
            Err(e) => {
                warn!("restart {s} aborted: {e}");
                failed.push(s);
                last_err = Some(e.to_string());
            }
        }
    }
    match best {
        Some(mut r) => {
            r.diagnostics.failed_seeds = failed;
            Ok(r)
        }
        None => Err(AcdError::AllSeedsFailed {
            n_seeds: opts.n_seeds,
            last: last_err.unwrap_or_default(),
        }),
    }
}

/// Fit on every pair of `net`.
pub fn fit(net: &Network, hyper: &Hyperparams, opts: &FitOptions) -> Result<FitResult> {
    check_sizes(net.n_nodes(), hyper, opts)?;
    fit_observed(&ObservedNetwork::new(net), hyper, opts)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> Network {
        let edges = [(0, 1, 1), (1, 2, 1), (0, 2, 1), (3, 4, 1), (4, 5, 1), (3, 5, 1), (2, 3, 1)];
        Network::from_edges(6, false, edges).unwrap()
    }

    #[test]
    fn cd_baseline_pins_anomaly_part() {
        let opts = FitOptions {
            n_seeds: 2,
            max_iter: 50,
            ..FitOptions::default().cd_baseline()
        };
        let r = fit(&toy(), &Hyperparams::new(2), &opts).unwrap();
        assert_eq!((r.params.mu, r.params.pi), (0.0, 0.0));
        assert!(r.q.as_slice().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn deterministic_and_execution_independent() {
        let mut opts = FitOptions {
            n_seeds: 2,
            max_iter: 40,
            rng_seed: 7,
            ..FitOptions::default()
        };
        let net = toy();
        let h = Hyperparams::new(2);
        let a = fit(&net, &h, &opts).unwrap();
        let b = fit(&net, &h, &opts).unwrap();
        assert_eq!(a, b);
        opts.execution = Execution::Sequential;
        assert_eq!(fit(&net, &h, &opts).unwrap(), a);
    }

    #[test]
    fn q_is_symmetric_with_zero_diagonal() {
        let r = fit(&toy(), &Hyperparams::new(2), &FitOptions { n_seeds: 1, ..Default::default() }).unwrap();
        let n = 6;
        for i in 0..n {
            assert_eq!(r.q.get(i, i), 0.0);
            for j in 0..n {
                assert_eq!(r.q.get(i, j), r.q.get(j, i));
                assert!((0.0..=1.0).contains(&r.q.get(i, j)));
            }
        }
        r.params.validate().unwrap();
    }

    #[test]
    fn size_errors() {
        let net = toy();
        assert!(matches!(
            fit(&net, &Hyperparams::new(7), &FitOptions::default()),
            Err(AcdError::TooManyCommunities { k: 7, n: 6 })
        ));
        let small = FitOptions { max_nodes: 5, ..Default::default() };
        assert!(matches!(fit(&net, &Hyperparams::new(2), &small), Err(AcdError::TooManyNodes { .. })));
        assert!(matches!(
            fit(&Network::new(4, false), &Hyperparams::new(2), &FitOptions::default()),
            Err(AcdError::NoEdges)
        ));
    }

    #[test]
    fn pinned_mu_stays() {
        let opts = FitOptions {
            n_seeds: 1,
            max_iter: 30,
            init_mu: 0.3,
            pin_mu: true,
            ..Default::default()
        };
        let r = fit(&toy(), &Hyperparams::new(2), &opts).unwrap();
        assert_eq!(r.params.mu, 0.3);
    }

    #[test]
    fn csv_shape() {
        let q = QMatrix::from_full(2, vec![0.0, 0.25, 0.25, 0.0]);
        assert_eq!(q.to_csv(), "0,0.25\n0.25,0\n");
        assert_eq!(q.max(), 0.25);
    }
}
