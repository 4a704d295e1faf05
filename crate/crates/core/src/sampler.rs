//! Planted-community generator with a calibrated anomaly ratio.
//!
//! Counts used for calibration are ordered adjacency entries: an undirected
//! edge contributes two. `E_target` therefore means `N <k>` entries in both
//! modes.

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{AcdError, Result};
use crate::graph::{Label, Network, Pair, PairLabeling};
use crate::model::{Memberships, ModelParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedConfig {
    pub n_nodes: usize,
    pub k: usize,
    pub avg_degree: f64,
    /// Target fraction of anomalous edges, in `[0, 1)`.
    pub rho_a: f64,
    pub pi: f64,
    /// Dirichlet mixed memberships instead of hard blocks.
    pub overlapping: bool,
    pub directed: bool,
    pub rng_seed: u64,
}

impl Default for PlantedConfig {
    fn default() -> Self {
        PlantedConfig {
            n_nodes: 500,
            k: 3,
            avg_degree: 20.0,
            rho_a: 0.1,
            pi: 0.6,
            overlapping: false,
            directed: false,
            rng_seed: 0,
        }
    }
}

impl PlantedConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(AcdError::InvalidParam(m));
        if self.k == 0 || self.n_nodes < self.k {
            return bad(format!("need 1 <= K <= N, got K = {}, N = {}", self.k, self.n_nodes));
        }
        if !(self.avg_degree > 0.0 && self.avg_degree < (self.n_nodes - 1) as f64) {
            return bad(format!("average degree {} outside (0, N - 1)", self.avg_degree));
        }
        if !(0.0..1.0).contains(&self.rho_a) {
            return bad(format!("rho_a must lie in [0, 1), got {}", self.rho_a));
        }
        if !(self.pi >= 0.0 && self.pi.is_finite()) {
            return bad(format!("pi must be nonnegative, got {}", self.pi));
        }
        Ok(())
    }

    /// Expected number of edges: `N <k> / 2` undirected, `N <k>` directed.
    pub fn target_edges(&self) -> f64 {
        let e = self.n_nodes as f64 * self.avg_degree;
        if self.directed {
            e
        } else {
            e / 2.0
        }
    }

    /// Expected number of nonzero ordered adjacency entries, `N <k>`.
    pub fn target_entries(&self) -> f64 {
        self.n_nodes as f64 * self.avg_degree
    }
}

/// Block sizes for `n` nodes in `k` groups; the first `n mod k` blocks get
/// one extra node.
pub fn block_sizes(n: usize, k: usize) -> Vec<usize> {
    (0..k).map(|b| n / k + usize::from(b < n % k)).collect()
}

/// Planted `u = v` and unit `w`. `pi` comes from the config and `mu` is 0
/// until calibration.
pub fn plant_parameters(cfg: &PlantedConfig) -> ModelParams {
    let (n, k) = (cfg.n_nodes, cfg.k);
    let mut u = Memberships::zeros(n, k);
    if cfg.overlapping {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
        rng.set_stream(1);
        for i in 0..n {
            let row = u.row_mut(i);
            for x in row.iter_mut() {
                *x = Exp1.sample(&mut rng);
            }
            let s: f64 = row.iter().sum();
            row.iter_mut().for_each(|x| *x /= s);
        }
    } else {
        let mut i = 0;
        for (b, size) in block_sizes(n, k).into_iter().enumerate() {
            for _ in 0..size {
                u.set(i, b, 1.0);
                i += 1;
            }
        }
    }
    ModelParams {
        v: u.clone(),
        u,
        w: vec![1.0; k],
        pi: cfg.pi,
        mu: 0.0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub mu: f64,
    /// Multiplier applied to every regular rate.
    pub c: f64,
    pub mu_clipped: bool,
    pub bisection_steps: usize,
}

const MAX_BISECTION: usize = 200;

/// Choose `mu` and the rate multiplier `c` so that the expected number of
/// nonzero ordered entries is `e_target` with a fraction `rho_a` anomalous.
///
/// `mu = e_target rho_a / (N^2 (1 - e^{-pi}))`, and `c` solves
/// `(1 - mu) sum_{i != j} (1 - e^{-c M_ij}) = e_target (1 - rho_a)`.
pub fn calibrate_sparsity(params: &ModelParams, e_target: f64, rho_a: f64, pi: f64) -> Result<Calibration> {
    let n = params.n_nodes();
    if rho_a > 0.0 && !(pi > 0.0) {
        return Err(AcdError::Infeasible("a positive anomaly ratio needs pi > 0".into()));
    }
    if !(e_target > 0.0) {
        return Err(AcdError::InvalidParam("target edge count must be positive".into()));
    }
    let mut mu = if rho_a > 0.0 {
        e_target * rho_a / ((n * n) as f64 * (1.0 - (-pi).exp()))
    } else {
        0.0
    };
    let mut mu_clipped = false;
    if mu >= 1.0 {
        warn!("calibrated mu = {mu} clipped below 1");
        mu = 1.0 - f64::EPSILON;
        mu_clipped = true;
    }

    let rates: Vec<f64> = (0..n)
        .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
        .map(|(i, j)| params.rate_unchecked(i, j))
        .filter(|&m| m > 0.0)
        .collect();
    if rates.is_empty() {
        return Err(AcdError::Infeasible("planted rates are all zero".into()));
    }
    let goal = e_target * (1.0 - rho_a);
    let ceiling = (1.0 - mu) * rates.len() as f64;
    if goal >= ceiling {
        return Err(AcdError::Infeasible(format!(
            "{goal:.1} regular entries requested but at most {ceiling:.1} are reachable"
        )));
    }
    let f = |c: f64| (1.0 - mu) * rates.iter().map(|&m| -(-c * m).exp_m1()).sum::<f64>() - goal;

    let mut hi = 1.0_f64;
    while f(hi) <= 0.0 {
        hi *= 2.0;
        if hi > 2f64.powi(60) {
            return Err(AcdError::Infeasible("no rate multiplier reaches the target".into()));
        }
    }
    let probes: Vec<f64> = (0..=10).map(|t| hi * t as f64 / 10.0).map(f).collect();
    assert!(
        probes.windows(2).all(|p| p[1] >= p[0]),
        "calibration residual is not monotone in c"
    );

    let mut lo = 0.0;
    let mut steps = 0;
    while steps < MAX_BISECTION && hi - lo > 1e-15 * hi {
        let mid = 0.5 * (lo + hi);
        if f(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
        steps += 1;
    }
    Ok(Calibration {
        mu,
        c: 0.5 * (lo + hi),
        mu_clipped,
        bisection_steps: steps,
    })
}

/// A sampled network with its ground truth.
#[derive(Debug, Clone)]
pub struct Sample {
    pub network: Network,
    /// Labels of the realized edges (pairs with any positive entry).
    pub labels: PairLabeling,
    /// Generating parameters, with `c` folded into `w`.
    pub params: ModelParams,
    /// Pairs with `Z = 1`, realized or not.
    pub n_latent_anomalous: usize,
    /// Fraction of nonzero ordered entries that are anomalous.
    pub realized_rho_a: f64,
}

fn draw_poisson(rng: &mut ChaCha8Rng, lambda: f64) -> u64 {
    if lambda > 0.0 {
        Poisson::new(lambda).expect("finite positive rate").sample(rng) as u64
    } else {
        0
    }
}

/// Draw `Z` and `A` pair by pair from fully specified parameters.
/// Undirected pairs use one draw at the symmetrized rate.
pub fn sample_network(params: &ModelParams, cfg: &PlantedConfig) -> Result<Sample> {
    let n = params.n_nodes();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    rng.set_stream(2);
    let mut edges = Vec::new();
    let mut labels = PairLabeling::new();
    let (mut latent, mut entries, mut anomalous_entries) = (0, 0usize, 0usize);
    for i in 0..n {
        for j in i + 1..n {
            let z = params.mu > 0.0 && rng.random_bool(params.mu);
            latent += usize::from(z);
            let (m_ij, m_ji) = (params.rate_unchecked(i, j), params.rate_unchecked(j, i));
            let (a_ij, a_ji) = if cfg.directed {
                let (r1, r2) = if z { (params.pi, params.pi) } else { (m_ij, m_ji) };
                (draw_poisson(&mut rng, r1), draw_poisson(&mut rng, r2))
            } else {
                let a = draw_poisson(&mut rng, if z { params.pi } else { 0.5 * (m_ij + m_ji) });
                (a, a)
            };
            let nnz = usize::from(a_ij > 0) + usize::from(a_ji > 0);
            if nnz == 0 {
                continue;
            }
            entries += nnz;
            if z {
                anomalous_entries += nnz;
            }
            labels.insert(Pair::new(i, j), if z { Label::Anomalous } else { Label::Regular });
            if cfg.directed {
                if a_ij > 0 {
                    edges.push((i, j, a_ij));
                }
                if a_ji > 0 {
                    edges.push((j, i, a_ji));
                }
            } else {
                edges.push((i, j, a_ij));
            }
        }
    }
    let network = Network::from_edges(n, cfg.directed, edges)?;
    Ok(Sample {
        network,
        labels,
        params: params.clone(),
        n_latent_anomalous: latent,
        realized_rho_a: if entries == 0 { 0.0 } else { anomalous_entries as f64 / entries as f64 },
    })
}

/// Plant, calibrate and sample in one go.
pub fn generate(cfg: &PlantedConfig) -> Result<(Sample, Calibration)> {
    cfg.validate()?;
    let mut params = plant_parameters(cfg);
    let cal = calibrate_sparsity(&params, cfg.target_entries(), cfg.rho_a, cfg.pi)?;
    params.mu = cal.mu;
    params.w.iter_mut().for_each(|w| *w *= cal.c);
    Ok((sample_network(&params, cfg)?, cal))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hard_blocks() {
        let cfg = PlantedConfig {
            n_nodes: 6,
            k: 3,
            ..Default::default()
        };
        let p = plant_parameters(&cfg);
        let owner: Vec<usize> = (0..6).map(|i| p.u.row(i).iter().position(|&x| x == 1.0).unwrap()).collect();
        assert_eq!(owner, vec![0, 0, 1, 1, 2, 2]);
        assert!((0..6).all(|i| p.u.row(i).iter().sum::<f64>() == 1.0));
        assert_eq!(block_sizes(500, 3), vec![167, 167, 166]);
    }

    #[test]
    fn mixed_rows_sum_to_one() {
        let cfg = PlantedConfig {
            n_nodes: 50,
            overlapping: true,
            ..Default::default()
        };
        let p = plant_parameters(&cfg);
        for i in 0..50 {
            assert!((p.u.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    fn constant_rate(n: usize, m: f64) -> ModelParams {
        let u = Memberships::from_vec(n, 1, vec![1.0; n]).unwrap();
        ModelParams {
            u: u.clone(),
            v: u,
            w: vec![m],
            pi: 0.0,
            mu: 0.0,
        }
    }

    #[test]
    fn mu_from_count_formula() {
        let p = constant_rate(100, 0.3);
        let cal = calibrate_sparsity(&p, 1000.0, 0.2, std::f64::consts::LN_2).unwrap();
        assert!((cal.mu - 200.0 / (10_000.0 * 0.5)).abs() < 1e-15);
    }

    #[test]
    fn c_matches_closed_form() {
        for (rho, m_val) in [(0.0, 0.3), (0.2, 0.3), (0.5, 2.0), (0.9, 0.01)] {
            let p = constant_rate(100, m_val);
            let cal = calibrate_sparsity(&p, 1000.0, rho, std::f64::consts::LN_2).unwrap();
            let m = (100 * 99) as f64;
            let closed = -(1.0 - 1000.0 * (1.0 - rho) / ((1.0 - cal.mu) * m)).ln() / m_val;
            assert!((cal.c - closed).abs() < 1e-9 * closed.max(1.0), "{} vs {closed}", cal.c);
            if rho == 0.0 {
                assert_eq!(cal.mu, 0.0);
            }
        }
    }

    #[test]
    fn infeasible_targets() {
        let p = constant_rate(10, 1.0);
        assert!(matches!(calibrate_sparsity(&p, 500.0, 0.0, 1.0), Err(AcdError::Infeasible(_))));
        assert!(matches!(calibrate_sparsity(&p, 10.0, 0.2, 0.0), Err(AcdError::Infeasible(_))));
    }

    #[test]
    fn same_seed_same_sample() {
        let cfg = PlantedConfig {
            n_nodes: 60,
            avg_degree: 6.0,
            rho_a: 0.3,
            rng_seed: 11,
            ..Default::default()
        };
        let (a, _) = generate(&cfg).unwrap();
        let (b, _) = generate(&cfg).unwrap();
        assert_eq!(a.network, b.network);
        assert_eq!(a.labels, b.labels);
    }

    #[test]
    fn zero_anomaly_hard_blocks_stay_inside() {
        let cfg = PlantedConfig {
            n_nodes: 90,
            avg_degree: 8.0,
            rho_a: 0.0,
            ..Default::default()
        };
        let (s, cal) = generate(&cfg).unwrap();
        assert_eq!(cal.mu, 0.0);
        assert_eq!(s.labels.n_anomalous(), 0);
        let block = |i: usize| i / 30;
        assert!(s.network.edge_pairs().iter().all(|p| block(p.lo()) == block(p.hi())));
        for i in 0..90 {
            for j in 0..90 {
                if block(i) != block(j) {
                    assert_eq!(s.params.rate_unchecked(i, j), 0.0);
                }
            }
        }
    }
}
