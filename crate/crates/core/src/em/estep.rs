use std::sync::atomic::{AtomicUsize, Ordering};

use super::data::ObservedNetwork;
use super::QMatrix;
use crate::model::{poisson_logpmf_unnormalized as logpois, Memberships, ModelParams};
use crate::par::{self, Execution};

/// Allocation weights `rho_ijk = u_ik v_jk w_k / M_ij`.
///
/// When `M_ij = 0` the weights are uniform; every use is multiplied by
/// `A_ij (1 - Q_ij)`, and a positive count with zero rate already sends the
/// log-posterior to `-inf`.
pub fn e_step_rho(params: &ModelParams, i: usize, j: usize) -> Vec<f64> {
    let k = params.k();
    let (ui, vj) = (params.u.row(i), params.v.row(j));
    let mut out: Vec<f64> = (0..k).map(|c| ui[c] * vj[c] * params.w[c]).collect();
    let m: f64 = out.iter().sum();
    if m > 0.0 {
        out.iter_mut().for_each(|x| *x /= m);
    } else {
        out.iter_mut().for_each(|x| *x = 1.0 / k as f64);
    }
    out
}

/// Posterior anomaly probability of one unordered pair given both ordered
/// counts and rates, each count term weighted by `s`. Returns `None` when
/// both branches have zero likelihood.
#[inline]
pub(crate) fn pair_posterior(mu: f64, pi: f64, s: f64, a: (f64, f64), m: (f64, f64)) -> Option<f64> {
    let ln_anom = mu.ln() + s * (logpois(a.0, pi) + logpois(a.1, pi));
    let ln_reg = (1.0 - mu).ln() + s * (logpois(a.0, m.0) + logpois(a.1, m.1));
    match (ln_anom == f64::NEG_INFINITY, ln_reg == f64::NEG_INFINITY) {
        (true, true) => None,
        (true, false) => Some(0.0),
        (false, true) => Some(1.0),
        (false, false) => {
            let d = ln_anom - ln_reg;
            Some(if d >= 0.0 {
                1.0 / (1.0 + (-d).exp())
            } else {
                let e = d.exp();
                e / (1.0 + e)
            })
        }
    }
}

/// Output of the Q pass.
#[derive(Debug, Clone)]
pub struct QStep {
    pub q: QMatrix,
    /// Pairs where both branches had zero likelihood; their Q is set to 0.
    pub degenerate_pairs: usize,
}

/// Posterior anomaly probabilities for every observed unordered pair,
/// edges and non-edges alike. Exactly symmetric with a zero diagonal;
/// held-out pairs get 0.
pub fn e_step_q(params: &ModelParams, obs: &ObservedNetwork, exec: Execution) -> QStep {
    let n = obs.n_nodes();
    let s = obs.count_weight();
    let (mu, pi) = (params.mu, params.pi);
    let degenerate = AtomicUsize::new(0);
    let mut values = vec![0.0; n * n];

    par::for_each_row_mut(exec, &mut values, n, |i, row| {
        let mut stored = obs.upper_pairs(i).iter().peekable();
        let mut bad = 0;
        for j in i + 1..n {
            let (a_ij, a_ji) = match stored.peek() {
                Some(&&(jj, a, b)) if jj == j => {
                    stored.next();
                    (a, b)
                }
                _ => (0.0, 0.0),
            };
            if obs.is_heldout(i, j) {
                continue;
            }
            let m = (params.rate_unchecked(i, j), params.rate_unchecked(j, i));
            let q = pair_posterior(mu, pi, s, (a_ij, a_ji), m);
            row[j] = q.unwrap_or_else(|| {
                bad += 1;
                0.0
            });
        }
        if bad > 0 {
            degenerate.fetch_add(bad, Ordering::Relaxed);
        }
    });
    for i in 0..n {
        for j in i + 1..n {
            values[j * n + i] = values[i * n + j];
        }
    }
    QStep {
        q: QMatrix::from_full(n, values),
        degenerate_pairs: degenerate.into_inner(),
    }
}

/// The `rho`-weighted counts consumed by the membership and affinity
/// updates, all evaluated at the parameters of the current E-step:
/// `num_u[i,k] = sum_j (1-Q_ij) A_ij rho_ijk`, `num_v[j,k]` the column
/// analogue and `num_w[k] = sum_ij (1-Q_ij) A_ij rho_ijk`.
#[derive(Debug, Clone, PartialEq)]
pub struct RhoStats {
    pub num_u: Memberships,
    pub num_v: Memberships,
    pub num_w: Vec<f64>,
}

pub fn rho_statistics(params: &ModelParams, obs: &ObservedNetwork, q: &QMatrix, exec: Execution) -> RhoStats {
    let (n, k) = (obs.n_nodes(), params.k());
    let accumulate = |row: &mut [f64], i: usize, j: usize, a: f64| {
        let f = (1.0 - q.get(i, j)) * a;
        if f == 0.0 {
            return;
        }
        let m = params.rate_unchecked(i, j);
        if m > 0.0 {
            let (ui, vj) = (params.u.row(i), params.v.row(j));
            for c in 0..k {
                row[c] += f * ui[c] * vj[c] * params.w[c] / m;
            }
        } else {
            row.iter_mut().for_each(|x| *x += f / k as f64);
        }
    };

    let mut num_u = Memberships::zeros(n, k);
    par::for_each_row_mut(exec, num_u.as_mut_slice(), k, |i, row| {
        for &(j, a) in obs.out_edges(i) {
            accumulate(row, i, j, a);
        }
    });
    let mut num_v = Memberships::zeros(n, k);
    par::for_each_row_mut(exec, num_v.as_mut_slice(), k, |j, row| {
        for &(i, a) in obs.in_edges(j) {
            accumulate(row, i, j, a);
        }
    });
    let num_w = num_u.col_sums();
    RhoStats { num_u, num_v, num_w }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Network;

    fn two_node(u: &[f64], v: &[f64], w: &[f64], pi: f64, mu: f64) -> ModelParams {
        let k = w.len();
        let mut uu = Memberships::zeros(2, k);
        let mut vv = Memberships::zeros(2, k);
        for i in 0..2 {
            uu.row_mut(i).copy_from_slice(u);
            vv.row_mut(i).copy_from_slice(v);
        }
        ModelParams {
            u: uu,
            v: vv,
            w: w.to_vec(),
            pi,
            mu,
        }
    }

    #[test]
    fn rho_examples() {
        assert_eq!(e_step_rho(&two_node(&[0.3], &[2.0], &[1.5], 1.0, 0.1), 0, 1), vec![1.0]);
        assert_eq!(
            e_step_rho(&two_node(&[1.0, 1.0], &[1.0, 1.0], &[2.0, 6.0], 1.0, 0.1), 0, 1),
            vec![0.25, 0.75]
        );
        assert_eq!(
            e_step_rho(&two_node(&[2.0, 1.0], &[1.0, 3.0], &[1.0, 2.0], 1.0, 0.1), 0, 1),
            vec![0.25, 0.75]
        );
        assert_eq!(
            e_step_rho(&two_node(&[0.0, 0.0], &[1.0, 3.0], &[1.0, 2.0], 1.0, 0.1), 0, 1),
            vec![0.5, 0.5]
        );
    }

    #[test]
    fn q_examples() {
        let empty = Network::new(2, false);
        let obs = ObservedNetwork::new(&empty);
        let p = two_node(&[1.0], &[1.0], &[2.0], 1.0, 0.5);
        let q = e_step_q(&p, &obs, Execution::Sequential).q;
        // mu=0.5, pi=1, M=2 both ways, A=0: 1 / (1 + e^{-2})
        assert!((q.get(0, 1) - 0.880_797_077_977_882_3).abs() < 1e-15);
        assert_eq!(q.get(1, 0), q.get(0, 1));
        assert_eq!(q.get(0, 0), 0.0);

        let p0 = two_node(&[1.0], &[1.0], &[2.0], 1.0, 0.0);
        assert_eq!(e_step_q(&p0, &obs, Execution::Sequential).q.get(0, 1), 0.0);
        let p1 = two_node(&[1.0], &[1.0], &[2.0], 1.0, 1.0);
        assert_eq!(e_step_q(&p1, &obs, Execution::Sequential).q.get(0, 1), 1.0);
    }

    #[test]
    fn degenerate_pairs_are_zero_and_counted() {
        let net = Network::from_edges(2, false, [(0, 1, 1)]).unwrap();
        let obs = ObservedNetwork::new(&net);
        let p = two_node(&[0.0], &[0.0], &[1.0], 0.0, 0.3);
        let step = e_step_q(&p, &obs, Execution::Sequential);
        assert_eq!(step.q.get(0, 1), 0.0);
        assert_eq!(step.degenerate_pairs, 1);
    }
}
