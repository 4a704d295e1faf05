//! The log-posterior bound traced by the EM loop.
//!
//! Both functions drop `log A!` and the constants of the flat priors on `w`
//! and `pi`; values are therefore shifted by a data-only constant.

use super::data::ObservedNetwork;
use super::estep::e_step_rho;
use super::mstep::{regular_weighted_row, shortcut_col_sums};
use super::QMatrix;
use crate::model::{xlogy, Hyperparams, ModelParams};
use crate::par::{self, Execution};

/// Neumaier compensated sum; keeps the traced objective stable to a few ulp
/// so tiny EM gains are not swamped by summation error.
#[derive(Default, Clone, Copy)]
struct Sum {
    s: f64,
    c: f64,
}

impl Sum {
    #[inline]
    fn add(&mut self, x: f64) {
        let t = self.s + x;
        if self.s.abs() >= x.abs() {
            self.c += (self.s - t) + x;
        } else {
            self.c += (x - t) + self.s;
        }
        self.s = t;
    }

    fn merge(&mut self, o: Sum) {
        self.add(o.s);
        self.add(o.c);
    }

    fn value(self) -> f64 {
        self.s + self.c
    }
}

#[derive(Default, Clone, Copy)]
struct RowTerms {
    entropy: Sum,
    q_upper: Sum,
    one_minus_q_upper: Sum,
    q_ordered: Sum,
    q_weighted_counts: Sum,
    regular_rate: Sum,
    regular_log: Sum,
}

impl RowTerms {
    fn merge(&mut self, o: &RowTerms) {
        self.entropy.merge(o.entropy);
        self.q_upper.merge(o.q_upper);
        self.one_minus_q_upper.merge(o.one_minus_q_upper);
        self.q_ordered.merge(o.q_ordered);
        self.q_weighted_counts.merge(o.q_weighted_counts);
        self.regular_rate.merge(o.regular_rate);
        self.regular_log.merge(o.regular_log);
    }
}

fn prior_terms(params: &ModelParams, hyper: &Hyperparams) -> f64 {
    let am1 = hyper.a - 1.0;
    let mut acc = Sum::default();
    for &x in params.u.as_slice().iter().chain(params.v.as_slice()) {
        acc.add(xlogy(am1, x));
        acc.add(-hyper.b * x);
    }
    acc.value()
}

/// Row partials shared by both objectives. `edge_log(i, j, a, q)` supplies
/// the regular-branch count term of one training entry.
fn row_terms<F>(params: &ModelParams, obs: &ObservedNetwork, q: &QMatrix, exec: Execution, edge_log: F) -> RowTerms
where
    F: Fn(usize, usize, f64, f64) -> f64 + Sync + Send,
{
    let (n, k) = (obs.n_nodes(), params.k());
    let cs = shortcut_col_sums(obs, q, &params.v);
    let rows = par::map_indices(exec, n, |i| {
        let mut t = RowTerms::default();
        let qi = q.row(i);
        for j in 0..n {
            let o = obs.observed(i, j);
            if o == 0.0 {
                continue;
            }
            let x = qi[j];
            t.q_ordered.add(x);
            if j > i {
                t.entropy.add(-xlogy(x, x));
                t.entropy.add(-xlogy(1.0 - x, 1.0 - x));
                t.q_upper.add(x);
                t.one_minus_q_upper.add(1.0 - x);
            }
        }
        let mut s = vec![0.0; k];
        regular_weighted_row(obs, q, &params.v, cs.as_deref(), i, &mut s);
        let ui = params.u.row(i);
        for c in 0..k {
            t.regular_rate.add(ui[c] * params.w[c] * s[c]);
        }
        for &(j, a) in obs.out_edges(i) {
            let x = qi[j];
            t.q_weighted_counts.add(x * a);
            t.regular_log.add(edge_log(i, j, a, x));
        }
        t
    });

    let mut tot = RowTerms::default();
    for r in &rows {
        tot.merge(r);
    }
    tot
}

fn assemble(t: RowTerms, s: f64, params: &ModelParams, hyper: &Hyperparams) -> f64 {
    let mut acc = Sum::default();
    acc.merge(t.entropy);
    acc.add(s * -params.pi * t.q_ordered.value());
    acc.add(s * xlogy(t.q_weighted_counts.value(), params.pi));
    acc.add(s * -t.regular_rate.value());
    acc.add(s * t.regular_log.value());
    acc.add(xlogy(t.q_upper.value(), params.mu));
    acc.add(xlogy(t.one_minus_q_upper.value(), 1.0 - params.mu));
    acc.add(prior_terms(params, hyper));
    acc.value()
}

/// Evidence lower bound at `(params, q)`:
/// entropy of `q` + expected Poisson terms of both branches + Bernoulli prior
/// terms over `i < j` + Gamma prior terms on `u` and `v`. Equal to the
/// marginal log-posterior when `q` is the exact E-step output for `params`.
pub fn log_posterior(
    params: &ModelParams,
    obs: &ObservedNetwork,
    q: &QMatrix,
    hyper: &Hyperparams,
    exec: Execution,
) -> f64 {
    let t = row_terms(params, obs, q, exec, |i, j, a, x| {
        xlogy((1.0 - x) * a, params.rate_unchecked(i, j))
    });
    assemble(t, obs.count_weight(), params, hyper)
}

/// Expected complete-data log-posterior with the latent allocation weights
/// `rho` taken from `rho_params`. This is the surrogate each block update
/// maximizes exactly; it touches `log M_ij` only through
/// `sum_k rho_ijk log(u_ik v_jk w_k)` (the `rho log rho` entropy is
/// constant in the parameters and omitted).
pub fn complete_data_objective(
    params: &ModelParams,
    rho_params: &ModelParams,
    obs: &ObservedNetwork,
    q: &QMatrix,
    hyper: &Hyperparams,
    exec: Execution,
) -> f64 {
    let t = row_terms(params, obs, q, exec, |i, j, a, x| {
        let f = (1.0 - x) * a;
        if f == 0.0 {
            return 0.0;
        }
        let rho = e_step_rho(rho_params, i, j);
        let (ui, vj) = (params.u.row(i), params.v.row(j));
        rho.iter()
            .enumerate()
            .map(|(c, &r)| xlogy(f * r, ui[c] * vj[c] * params.w[c]))
            .sum()
    });
    assemble(t, obs.count_weight(), params, hyper)
}
