//! Closed-form block updates. Each one maximizes the expected complete-data
//! log-posterior in its block with `Q`, the `rho` statistics and every other
//! block held fixed.

use super::data::ObservedNetwork;
use super::estep::RhoStats;
use super::QMatrix;
use crate::error::{AcdError, Result};
use crate::model::{Hyperparams, Memberships, ModelParams};
use crate::par::{self, Execution};

/// `out[k] = sum_{j != i, observed} (1 - Q_ij) x[j,k]`.
///
/// `col_sums` enables the `Q = 0`, unmasked shortcut `sum_j x_jk - x_ik`.
#[inline]
pub(crate) fn regular_weighted_row(
    obs: &ObservedNetwork,
    q: &QMatrix,
    x: &Memberships,
    col_sums: Option<&[f64]>,
    i: usize,
    out: &mut [f64],
) {
    if let Some(cs) = col_sums {
        for (k, o) in out.iter_mut().enumerate() {
            *o = cs[k] - x.get(i, k);
        }
        return;
    }
    out.iter_mut().for_each(|o| *o = 0.0);
    let qi = q.row(i);
    for j in 0..obs.n_nodes() {
        let wt = obs.observed(i, j) * (1.0 - qi[j]);
        if wt == 0.0 {
            continue;
        }
        for (o, xj) in out.iter_mut().zip(x.row(j)) {
            *o += wt * xj;
        }
    }
}

pub(crate) fn shortcut_col_sums(obs: &ObservedNetwork, q: &QMatrix, x: &Memberships) -> Option<Vec<f64>> {
    (q.is_known_zero() && !obs.has_heldout()).then(|| x.col_sums())
}

#[inline]
fn ratio(num: f64, den: f64, block: &'static str, row: usize, col: usize) -> Result<f64> {
    if den > 0.0 {
        Ok(num / den)
    } else if num == 0.0 {
        Ok(0.0)
    } else {
        Err(AcdError::UnboundedUpdate { block, row, col })
    }
}

#[allow(clippy::too_many_arguments)]
fn update_memberships(
    block: &'static str,
    other: &Memberships,
    numerators: &Memberships,
    w: &[f64],
    obs: &ObservedNetwork,
    q: &QMatrix,
    hyper: &Hyperparams,
    exec: Execution,
) -> Result<Memberships> {
    let (n, k) = (obs.n_nodes(), w.len());
    let s_w = obs.count_weight();
    let cs = shortcut_col_sums(obs, q, other);
    let rows = par::map_indices(exec, n, |i| -> Result<Vec<f64>> {
        let mut s = vec![0.0; k];
        regular_weighted_row(obs, q, other, cs.as_deref(), i, &mut s);
        (0..k)
            .map(|c| {
                let num = hyper.a - 1.0 + s_w * numerators.get(i, c);
                let den = hyper.b + s_w * w[c] * s[c];
                ratio(num, den, block, i, c)
            })
            .collect()
    });
    let mut out = Memberships::zeros(n, k);
    for (i, row) in rows.into_iter().enumerate() {
        out.row_mut(i).copy_from_slice(&row?);
    }
    Ok(out)
}

/// `u_ik = (a - 1 + sum_j (1-Q_ij) A_ij rho_ijk) / (b + sum_j (1-Q_ij) v_jk w_k)`.
pub fn m_step_u(
    params: &ModelParams,
    obs: &ObservedNetwork,
    q: &QMatrix,
    rho: &RhoStats,
    hyper: &Hyperparams,
    exec: Execution,
) -> Result<Memberships> {
    update_memberships("u", &params.v, &rho.num_u, &params.w, obs, q, hyper, exec)
}

/// `v_jk = (a - 1 + sum_i (1-Q_ij) A_ij rho_ijk) / (b + sum_i (1-Q_ij) u_ik w_k)`,
/// using whatever `u` is in `params` (the freshest one inside the EM loop).
pub fn m_step_v(
    params: &ModelParams,
    obs: &ObservedNetwork,
    q: &QMatrix,
    rho: &RhoStats,
    hyper: &Hyperparams,
    exec: Execution,
) -> Result<Memberships> {
    update_memberships("v", &params.u, &rho.num_v, &params.w, obs, q, hyper, exec)
}

/// `w_k = sum_ij (1-Q_ij) A_ij rho_ijk / sum_ij (1-Q_ij) u_ik v_jk`.
pub fn m_step_w(
    params: &ModelParams,
    obs: &ObservedNetwork,
    q: &QMatrix,
    rho: &RhoStats,
    exec: Execution,
) -> Result<Vec<f64>> {
    let (n, k) = (obs.n_nodes(), params.k());
    let cs = shortcut_col_sums(obs, q, &params.v);
    let partial = par::map_indices(exec, n, |i| {
        let mut s = vec![0.0; k];
        regular_weighted_row(obs, q, &params.v, cs.as_deref(), i, &mut s);
        let ui = params.u.row(i);
        s.iter_mut().zip(ui).for_each(|(x, u)| *x *= u);
        s
    });
    let mut den = vec![0.0; k];
    for row in &partial {
        den.iter_mut().zip(row).for_each(|(d, x)| *d += x);
    }
    (0..k).map(|c| ratio(rho.num_w[c], den[c], "w", 0, c)).collect()
}

/// `pi = sum_ij Q_ij A_ij / sum_ij Q_ij` over observed ordered pairs;
/// `None` when `sum Q = 0`, in which case the caller keeps the old value.
pub fn m_step_pi(obs: &ObservedNetwork, q: &QMatrix, exec: Execution) -> Option<f64> {
    let n = obs.n_nodes();
    let partial = par::map_indices(exec, n, |i| {
        let num: f64 = obs.out_edges(i).iter().map(|&(j, a)| q.get(i, j) * a).sum();
        let qi = q.row(i);
        let den: f64 = (0..n).map(|j| obs.observed(i, j) * qi[j]).sum();
        (num, den)
    });
    let (mut num, mut den) = (0.0, 0.0);
    for (a, b) in partial {
        num += a;
        den += b;
    }
    (den > 0.0).then(|| num / den)
}

/// `mu = sum_{i<j} Q_ij / #pairs` over observed unordered pairs.
pub fn m_step_mu(obs: &ObservedNetwork, q: &QMatrix, exec: Execution) -> f64 {
    let n = obs.n_nodes();
    if obs.n_observed_pairs() == 0 {
        return 0.0;
    }
    let partial = par::map_indices(exec, n, |i| {
        let qi = q.row(i);
        (i + 1..n).map(|j| obs.observed(i, j) * qi[j]).sum::<f64>()
    });
    let s: f64 = partial.into_iter().sum();
    (s / obs.n_observed_pairs() as f64).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::em::estep::rho_statistics;
    use crate::graph::Network;

    const SEQ: Execution = Execution::Sequential;

    fn uniform_params(n: usize, k: usize, val: f64, w: &[f64]) -> ModelParams {
        let u = Memberships::from_vec(n, k, vec![val; n * k]).unwrap();
        ModelParams {
            u: u.clone(),
            v: u,
            w: w.to_vec(),
            pi: 1.0,
            mu: 0.2,
        }
    }

    fn q_const(n: usize, x: f64) -> QMatrix {
        let mut v = vec![x; n * n];
        for i in 0..n {
            v[i * n + i] = 0.0;
        }
        QMatrix::from_full(n, v)
    }

    #[test]
    fn q_one_kills_community_blocks() {
        let net = Network::from_edges(3, false, [(0, 1, 1), (1, 2, 2)]).unwrap();
        let obs = ObservedNetwork::new(&net);
        let p = uniform_params(3, 2, 0.7, &[1.0, 2.0]);
        let q = q_const(3, 1.0);
        let rho = rho_statistics(&p, &obs, &q, SEQ);
        let hyper = Hyperparams { a: 1.0, b: 1.0, k: 2 };
        let u = m_step_u(&p, &obs, &q, &rho, &hyper, SEQ).unwrap();
        assert!(u.as_slice().iter().all(|&x| x == 0.0));
        assert_eq!(m_step_w(&p, &obs, &q, &rho, SEQ).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn single_term_u_update() {
        // K=1, N=2, a=1, b=0, Q=0, A_12=3, v_2=1, w=2 -> u_1 = 3 / 2
        let net = Network::from_edges(2, true, [(0, 1, 3)]).unwrap();
        let obs = ObservedNetwork::new(&net);
        let mut p = uniform_params(2, 1, 1.0, &[2.0]);
        p.u.set(0, 0, 0.4);
        let q = QMatrix::zeros(2);
        let rho = rho_statistics(&p, &obs, &q, SEQ);
        let hyper = Hyperparams { a: 1.0, b: 0.0, k: 1 };
        let u = m_step_u(&p, &obs, &q, &rho, &hyper, SEQ).unwrap();
        assert!((u.get(0, 0) - 1.5).abs() < 1e-14);
        // Node 1 has no out-edges: 0/2 = 0.
        assert_eq!(u.get(1, 0), 0.0);
    }

    #[test]
    fn w_hand_sum() {
        // K=1, A_12=A_21=2, u=v=1, Q=0 -> w = 4/2
        let net = Network::from_edges(2, false, [(0, 1, 2)]).unwrap();
        let obs = ObservedNetwork::new(&net);
        let p = uniform_params(2, 1, 1.0, &[0.3]);
        let q = QMatrix::zeros(2);
        let rho = rho_statistics(&p, &obs, &q, SEQ);
        assert_eq!(m_step_w(&p, &obs, &q, &rho, SEQ).unwrap(), vec![2.0]);
    }

    #[test]
    fn unbounded_direction_is_an_error() {
        // b = 0 and the only other node has v = 0: positive numerator over zero.
        let net = Network::from_edges(2, true, [(0, 1, 1)]).unwrap();
        let obs = ObservedNetwork::new(&net);
        let mut p = uniform_params(2, 1, 1.0, &[1.0]);
        let q = QMatrix::zeros(2);
        let rho = rho_statistics(&p, &obs, &q, SEQ);
        p.v.set(1, 0, 0.0);
        let hyper = Hyperparams { a: 1.0, b: 0.0, k: 1 };
        assert!(matches!(
            m_step_u(&p, &obs, &q, &rho, &hyper, SEQ),
            Err(AcdError::UnboundedUpdate { block: "u", row: 0, col: 0 })
        ));
    }

    #[test]
    fn pi_examples() {
        let net = Network::from_edges(2, true, [(0, 1, 2), (1, 0, 4)]).unwrap();
        let obs = ObservedNetwork::new(&net);
        assert_eq!(m_step_pi(&obs, &q_const(2, 1.0), SEQ), Some(3.0));
        assert_eq!(m_step_pi(&obs, &q_const(2, 0.0), SEQ), None);

        let empty = ObservedNetwork::new(&Network::new(3, false));
        assert_eq!(m_step_pi(&empty, &q_const(3, 0.4), SEQ), Some(0.0));

        let net = Network::from_edges(3, false, [(0, 1, 2)]).unwrap();
        let obs = ObservedNetwork::new(&net);
        let mut v = vec![0.0; 9];
        v[1] = 0.5;
        v[3] = 0.5;
        v[2] = 1.0;
        v[6] = 1.0;
        let pi = m_step_pi(&obs, &QMatrix::from_full(3, v), SEQ).unwrap();
        assert!((pi - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn mu_examples() {
        let obs = ObservedNetwork::new(&Network::new(3, false));
        assert_eq!(m_step_mu(&obs, &q_const(3, 0.0), SEQ), 0.0);
        assert_eq!(m_step_mu(&obs, &q_const(3, 1.0), SEQ), 1.0);
        let mut v = vec![0.0; 9];
        for (i, j, x) in [(0, 1, 0.6), (0, 2, 0.2), (1, 2, 0.1)] {
            v[i * 3 + j] = x;
            v[j * 3 + i] = x;
        }
        let mu = m_step_mu(&obs, &QMatrix::from_full(3, v), SEQ);
        assert!((mu - 0.3).abs() < 1e-15);
    }
}
