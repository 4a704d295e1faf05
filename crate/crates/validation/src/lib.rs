//! Independent reference computations: brute-force posteriors, a plain
//! Poisson factorization EM and small statistics helpers, written without
//! reusing the library internals they check.

use acd::graph::Network;
use acd::model::{Memberships, ModelParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_params(rng: &mut ChaCha8Rng, n: usize, k: usize) -> ModelParams {
    let mut block = || {
        let data = (0..n * k).map(|_| rng.random_range(0.05..2.0)).collect();
        Memberships::from_vec(n, k, data).unwrap()
    };
    let u = block();
    let v = block();
    ModelParams {
        u,
        v,
        w: (0..k).map(|_| rng.random_range(0.1..2.0)).collect(),
        pi: rng.random_range(0.05..2.0),
        mu: rng.random_range(0.01..0.99),
    }
}

/// Counts in {0, 1, 2}; symmetric when undirected.
pub fn random_counts(rng: &mut ChaCha8Rng, n: usize, directed: bool, p_edge: f64) -> Network {
    let mut edges = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if i == j || (!directed && j < i) {
                continue;
            }
            if rng.random_bool(p_edge) {
                edges.push((i, j, rng.random_range(1..=2u64)));
            }
        }
    }
    Network::from_edges(n, directed, edges).unwrap()
}

fn rate(p: &ModelParams, i: usize, j: usize) -> f64 {
    (0..p.w.len()).map(|k| p.u.get(i, k) * p.v.get(j, k) * p.w[k]).sum()
}

fn poisson_pmf(a: u64, lambda: f64) -> f64 {
    let fact: f64 = (1..=a).map(|x| x as f64).product();
    if a == 0 {
        (-lambda).exp()
    } else {
        lambda.powi(a as i32) * (-lambda).exp() / fact
    }
}

/// Posterior anomaly marginals by summing the joint over every assignment
/// of the pair indicators. Returns a dense row-major `n x n` matrix.
pub fn brute_force_q(p: &ModelParams, net: &Network) -> Vec<f64> {
    let n = net.n_nodes();
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
    let mut total = 0.0;
    let mut marg = vec![0.0; pairs.len()];
    for z in 0u64..(1 << pairs.len()) {
        let mut joint = 1.0;
        for (b, &(i, j)) in pairs.iter().enumerate() {
            let anom = (z >> b) & 1 == 1;
            let (prior, l_ij, l_ji) = if anom {
                (p.mu, p.pi, p.pi)
            } else {
                (1.0 - p.mu, rate(p, i, j), rate(p, j, i))
            };
            joint *= prior * poisson_pmf(net.weight(i, j), l_ij) * poisson_pmf(net.weight(j, i), l_ji);
        }
        total += joint;
        for (b, m) in marg.iter_mut().enumerate() {
            if (z >> b) & 1 == 1 {
                *m += joint;
            }
        }
    }
    let mut q = vec![0.0; n * n];
    for (b, &(i, j)) in pairs.iter().enumerate() {
        q[i * n + j] = marg[b] / total;
        q[j * n + i] = marg[b] / total;
    }
    q
}

/// One iteration of plain Poisson factorization EM on a dense count matrix:
/// allocation weights from the incoming parameters, then `u`, `v` (seeing
/// the new `u`) and `w` (seeing both).
pub fn plain_pf_step(p: &ModelParams, a_mat: &[Vec<f64>], shape: f64, rate_b: f64) -> ModelParams {
    let n = a_mat.len();
    let k = p.w.len();
    let mut rho = vec![vec![vec![0.0; k]; n]; n];
    for i in 0..n {
        for j in 0..n {
            if i == j || a_mat[i][j] == 0.0 {
                continue;
            }
            let m = rate(p, i, j);
            for c in 0..k {
                rho[i][j][c] = p.u.get(i, c) * p.v.get(j, c) * p.w[c] / m;
            }
        }
    }
    let mut u = Memberships::zeros(n, k);
    for i in 0..n {
        for c in 0..k {
            let mut num = shape - 1.0;
            let mut den = rate_b;
            for j in 0..n {
                if j != i {
                    num += a_mat[i][j] * rho[i][j][c];
                    den += p.v.get(j, c) * p.w[c];
                }
            }
            u.set(i, c, num / den);
        }
    }
    let mut v = Memberships::zeros(n, k);
    for j in 0..n {
        for c in 0..k {
            let mut num = shape - 1.0;
            let mut den = rate_b;
            for i in 0..n {
                if i != j {
                    num += a_mat[i][j] * rho[i][j][c];
                    den += u.get(i, c) * p.w[c];
                }
            }
            v.set(j, c, num / den);
        }
    }
    let mut w = vec![0.0; k];
    for (c, wc) in w.iter_mut().enumerate() {
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    num += a_mat[i][j] * rho[i][j][c];
                    den += u.get(i, c) * v.get(j, c);
                }
            }
        }
        *wc = num / den;
    }
    ModelParams { u, v, w, pi: 0.0, mu: 0.0 }
}

pub fn dense(net: &Network) -> Vec<Vec<f64>> {
    let n = net.n_nodes();
    (0..n).map(|i| (0..n).map(|j| net.weight(i, j) as f64).collect()).collect()
}

/// Largest `|x - y| / max(1, |x|)` over all parameter entries.
pub fn max_rel_diff(a: &ModelParams, b: &ModelParams) -> f64 {
    let xs = a.u.as_slice().iter().chain(a.v.as_slice()).chain(&a.w).chain([&a.pi, &a.mu]);
    let ys = b.u.as_slice().iter().chain(b.v.as_slice()).chain(&b.w).chain([&b.pi, &b.mu]);
    xs.zip(ys).map(|(x, y)| (x - y).abs() / x.abs().max(1.0)).fold(0.0, f64::max)
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let mut r = vec![0.0; v.len()];
        let mut s = 0;
        while s < idx.len() {
            let mut e = s;
            while e + 1 < idx.len() && v[idx[e + 1]] == v[idx[s]] {
                e += 1;
            }
            let avg = (s + e) as f64 / 2.0 + 1.0;
            for &k in &idx[s..=e] {
                r[k] = avg;
            }
            s = e + 1;
        }
        r
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

#[cfg(test)]
mod tests {
    use acd::em::{e_step_q, fit, m_step_mu, m_step_pi, random_init, EmRun, FitOptions, ObservedNetwork};
    use acd::graph::Network;
    use acd::model::{Hyperparams, Memberships};
    use acd::Execution;
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]

        #[test]
        fn q_matches_enumeration(seed in any::<u64>(), n in 3usize..5, directed in any::<bool>()) {
            let mut r = rng(seed);
            let p = random_params(&mut r, n, 2);
            let net = random_counts(&mut r, n, directed, 0.5);
            let obs = ObservedNetwork::new(&net);
            let got = e_step_q(&p, &obs, Execution::Sequential).q;
            let want = brute_force_q(&p, &net);
            for (g, w) in got.as_slice().iter().zip(&want) {
                prop_assert!((g - w).abs() < 1e-12, "{} vs {}", g, w);
            }
        }

        #[test]
        fn q_symmetric_bounded_zero_diagonal(seed in any::<u64>(), n in 2usize..25, directed in any::<bool>()) {
            let mut r = rng(seed);
            let p = random_params(&mut r, n, 3);
            let net = random_counts(&mut r, n, directed, 0.2);
            let q = e_step_q(&p, &ObservedNetwork::new(&net), Execution::Sequential).q;
            for i in 0..n {
                prop_assert_eq!(q.get(i, i), 0.0);
                for j in 0..n {
                    prop_assert_eq!(q.get(i, j), q.get(j, i));
                    prop_assert!((0.0..=1.0).contains(&q.get(i, j)));
                }
            }
        }
    }

    #[test]
    fn mu_and_pi_closed_forms() {
        let mut r = rng(3);
        let n = 9;
        let net = random_counts(&mut r, n, true, 0.3);
        let obs = ObservedNetwork::new(&net);
        let p = random_params(&mut r, n, 2);
        let q = e_step_q(&p, &obs, Execution::Sequential).q;
        let (mut sq, mut sqa, mut sq_ordered) = (0.0, 0.0, 0.0);
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let x = q.get(i, j);
                if i < j {
                    sq += x;
                }
                sq_ordered += x;
                sqa += x * net.weight(i, j) as f64;
            }
        }
        let mu = m_step_mu(&obs, &q, Execution::Sequential);
        let pi = m_step_pi(&obs, &q, Execution::Sequential).unwrap();
        assert!((mu - sq / (n * (n - 1) / 2) as f64).abs() < 1e-14);
        assert!((pi - sqa / sq_ordered).abs() < 1e-14);
    }

    #[test]
    fn flat_prior_gauge_is_preserved() {
        let mut r = rng(11);
        let n = 15;
        let net = random_counts(&mut r, n, true, 0.3);
        let obs = ObservedNetwork::new(&net);
        let hyper = Hyperparams { a: 1.0, b: 0.0, k: 3 };
        let opts = FitOptions { execution: Execution::Sequential, ..Default::default() };
        let base = random_params(&mut r, n, 3);
        let mut moved = base.clone();
        moved.u = base.u.scaled(2.0);
        moved.w = base.w.iter().map(|w| w / 2.0).collect();

        let mut a = EmRun::new(&obs, hyper, &opts, base);
        let mut b = EmRun::new(&obs, hyper, &opts, moved);
        for _ in 0..5 {
            a.e_step();
            b.e_step();
            let (la, lb) = (a.log_posterior(), b.log_posterior());
            assert!((la - lb).abs() < 1e-9 * la.abs().max(1.0), "{la} vs {lb}");
            a.m_step().unwrap();
            b.m_step().unwrap();
        }
        let (pa, pb) = (a.params(), b.params());
        for (x, y) in pa.u.as_slice().iter().zip(pb.u.as_slice()) {
            assert!((2.0 * x - y).abs() <= 1e-9 * y.abs().max(1e-12));
        }
        for (x, y) in pa.v.as_slice().iter().zip(pb.v.as_slice()) {
            assert!((x - y).abs() <= 1e-9 * x.abs().max(1e-12));
        }
        for (x, y) in pa.w.iter().zip(&pb.w) {
            assert!((x / 2.0 - y).abs() <= 1e-9 * y.abs());
        }
    }

    #[test]
    fn cd_iterates_match_plain_factorization() {
        let mut r = rng(5);
        for directed in [true, false] {
            let net = random_counts(&mut r, 20, directed, 0.25);
            let obs = ObservedNetwork::new(&net);
            let hyper = Hyperparams::new(3);
            let opts = FitOptions { execution: Execution::Sequential, ..Default::default() }.cd_baseline();
            let init = random_init(&obs, 3, &opts, 99);
            let mut run = EmRun::new(&obs, hyper, &opts, init.clone());
            let mut reference = init;
            reference.mu = 0.0;
            reference.pi = 0.0;
            let a = dense(&net);
            for it in 0..10 {
                run.e_step();
                run.m_step().unwrap();
                reference = plain_pf_step(&reference, &a, hyper.a, hyper.b);
                let d = max_rel_diff(run.params(), &reference);
                assert!(d < 1e-12, "iteration {it}: {d}");
            }
        }
    }

    #[test]
    fn fit_is_reproducible_across_execution_modes() {
        let mut r = rng(8);
        let net = random_counts(&mut r, 30, true, 0.15);
        let hyper = Hyperparams::new(2);
        let seq = FitOptions { n_seeds: 2, max_iter: 40, execution: Execution::Sequential, rng_seed: 4, ..Default::default() };
        let par = FitOptions { execution: Execution::Parallel, ..seq.clone() };
        let a = fit(&net, &hyper, &seq).unwrap();
        let b = fit(&net, &hyper, &seq).unwrap();
        let c = fit(&net, &hyper, &par).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.logpost_trace, b.logpost_trace);
        assert!(max_rel_diff(&a.params, &c.params) < 1e-12);
    }

    #[test]
    fn zero_rate_edges_are_degenerate() {
        let net = Network::from_edges(3, true, [(0, 1, 1), (1, 2, 1)]).unwrap();
        let obs = ObservedNetwork::new(&net);
        let mut p = random_params(&mut rng(1), 3, 1);
        p.u = Memberships::zeros(3, 1);
        p.pi = 0.0;
        let step = e_step_q(&p, &obs, Execution::Sequential);
        assert_eq!(step.degenerate_pairs, 2);
        assert_eq!(step.q.get(0, 1), 0.0);
        assert!(step.q.get(0, 2) > 0.0);
    }

    #[test]
    fn trace_is_nondecreasing_on_small_fit() {
        let mut r = rng(21);
        let net = random_counts(&mut r, 25, true, 0.2);
        let opts = FitOptions { n_seeds: 1, max_iter: 200, check_every: 1, patience: 1000, ..Default::default() };
        let res = fit(&net, &Hyperparams::new(2), &opts).unwrap();
        for w in res.logpost_trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-10, "{} -> {}", w[0], w[1]);
        }
    }
}
