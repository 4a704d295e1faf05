//! Model parameters and the Poisson likelihood kernel.
//!
//! Regular pairs have rate `M_ij = sum_k u_ik v_jk w_k`; anomalous pairs have
//! the global rate `pi`. Log-likelihoods drop the `log A!` term, which is
//! constant in the parameters and cancels in every posterior ratio.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{AcdError, Result};

/// Row-major `N x K` nonnegative matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Memberships {
    n: usize,
    k: usize,
    data: Vec<f64>,
}

impl Memberships {
    pub fn zeros(n: usize, k: usize) -> Self {
        Memberships {
            n,
            k,
            data: vec![0.0; n * k],
        }
    }

    pub fn from_vec(n: usize, k: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * k {
            return Err(AcdError::InvalidParam(format!(
                "membership buffer has {} values, expected {n} x {k}",
                data.len()
            )));
        }
        Ok(Memberships { n, k, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let k = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != k) {
            return Err(AcdError::InvalidParam("ragged membership rows".into()));
        }
        Ok(Memberships {
            n: rows.len(),
            k,
            data: rows.concat(),
        })
    }

    pub fn n_rows(&self) -> usize {
        self.n
    }

    pub fn n_cols(&self) -> usize {
        self.k
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.k..(i + 1) * self.k]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.k..(i + 1) * self.k]
    }

    #[inline]
    pub fn get(&self, i: usize, k: usize) -> f64 {
        self.data[i * self.k + k]
    }

    #[inline]
    pub fn set(&mut self, i: usize, k: usize, x: f64) {
        self.data[i * self.k + k] = x;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.data.chunks(self.k.max(1)).map(<[f64]>::to_vec).collect()
    }

    pub fn scaled(&self, c: f64) -> Self {
        Memberships {
            n: self.n,
            k: self.k,
            data: self.data.iter().map(|x| x * c).collect(),
        }
    }

    /// Column sums, accumulated in row order.
    pub fn col_sums(&self) -> Vec<f64> {
        let mut s = vec![0.0; self.k];
        for i in 0..self.n {
            for (acc, x) in s.iter_mut().zip(self.row(i)) {
                *acc += x;
            }
        }
        s
    }
}

/// Gamma prior on memberships and the number of communities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    /// Gamma shape, at least 1.
    pub a: f64,
    /// Gamma rate, nonnegative.
    pub b: f64,
    pub k: usize,
}

impl Hyperparams {
    pub fn new(k: usize) -> Self {
        Hyperparams { a: 1.0, b: 1.0, k }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(AcdError::InvalidParam("K must be at least 1".into()));
        }
        if !(self.a >= 1.0 && self.a.is_finite()) {
            return Err(AcdError::InvalidParam(format!("prior shape a must be >= 1, got {}", self.a)));
        }
        if !(self.b >= 0.0 && self.b.is_finite()) {
            return Err(AcdError::InvalidParam(format!("prior rate b must be >= 0, got {}", self.b)));
        }
        Ok(())
    }
}

/// Memberships `u` (out-going), `v` (in-coming), diagonal affinity `w`,
/// anomalous rate `pi` and anomaly prior `mu`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub u: Memberships,
    pub v: Memberships,
    pub w: Vec<f64>,
    pub pi: f64,
    pub mu: f64,
}

#[derive(Serialize, Deserialize)]
struct ParamsJson {
    u: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    w: Vec<f64>,
    pi: f64,
    mu: f64,
    #[serde(rename = "K")]
    k: usize,
}

impl ModelParams {
    pub fn n_nodes(&self) -> usize {
        self.u.n_rows()
    }

    pub fn k(&self) -> usize {
        self.w.len()
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.w.len();
        if k == 0 {
            return Err(AcdError::InvalidParam("K must be at least 1".into()));
        }
        if self.u.n_cols() != k || self.v.n_cols() != k || self.u.n_rows() != self.v.n_rows() {
            return Err(AcdError::InvalidParam(format!(
                "inconsistent shapes: u {}x{}, v {}x{}, w {}",
                self.u.n_rows(),
                self.u.n_cols(),
                self.v.n_rows(),
                self.v.n_cols(),
                k
            )));
        }
        let all = self.u.as_slice().iter().chain(self.v.as_slice()).chain(&self.w);
        if all.chain([&self.pi]).any(|x| !(*x >= 0.0) || !x.is_finite()) {
            return Err(AcdError::InvalidParam("parameters must be finite and nonnegative".into()));
        }
        if !(0.0..=1.0).contains(&self.mu) {
            return Err(AcdError::InvalidParam(format!("mu must lie in [0, 1], got {}", self.mu)));
        }
        Ok(())
    }

    /// `M_ij` without bounds or self-pair checks.
    #[inline]
    pub fn rate_unchecked(&self, i: usize, j: usize) -> f64 {
        let (ui, vj) = (self.u.row(i), self.v.row(j));
        let mut m = 0.0;
        for k in 0..self.w.len() {
            m += ui[k] * vj[k] * self.w[k];
        }
        m
    }

    pub fn to_json_value(&self) -> serde_json::Value {
        serde_json::to_value(ParamsJson {
            u: self.u.rows(),
            v: self.v.rows(),
            w: self.w.clone(),
            pi: self.pi,
            mu: self.mu,
            k: self.k(),
        })
        .expect("plain numeric struct serializes")
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&self.to_json_value())?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let raw: ParamsJson = serde_json::from_str(s)?;
        let p = ModelParams {
            u: Memberships::from_rows(&raw.u)?,
            v: Memberships::from_rows(&raw.v)?,
            w: raw.w,
            pi: raw.pi,
            mu: raw.mu,
        };
        if p.k() != raw.k {
            return Err(AcdError::InvalidParam(format!("K = {} but w has {} entries", raw.k, p.k())));
        }
        p.validate()?;
        Ok(p)
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()?).map_err(|e| AcdError::io(path, e))
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_json(&fs::read_to_string(path).map_err(|e| AcdError::io(path, e))?)
    }
}

/// `M_ij = sum_k u_ik v_jk w_k`.
pub fn rate(params: &ModelParams, i: usize, j: usize) -> Result<f64> {
    let n = params.n_nodes();
    for idx in [i, j] {
        if idx >= n {
            return Err(AcdError::NodeOutOfRange { index: idx, n_nodes: n });
        }
    }
    if i == j {
        return Err(AcdError::SelfPair(i));
    }
    Ok(params.rate_unchecked(i, j))
}

/// `x * ln(y)` with `0 * ln(anything) = 0`.
#[inline]
pub fn xlogy(x: f64, y: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * y.ln()
    }
}

/// `-lambda + a ln(lambda)`; `-inf` when `a > 0` and `lambda = 0`.
#[inline]
pub fn poisson_logpmf_unnormalized(a: f64, lambda: f64) -> f64 {
    -lambda + xlogy(a, lambda)
}

/// Branch log-likelihoods `(log Pois(a; M_ij), log Pois(a; pi))`.
pub fn edge_loglik_mixture(params: &ModelParams, i: usize, j: usize, a: f64) -> Result<(f64, f64)> {
    let m = rate(params, i, j)?;
    Ok((
        poisson_logpmf_unnormalized(a, m),
        poisson_logpmf_unnormalized(a, params.pi),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params2(ui: &[f64], vj: &[f64], w: &[f64]) -> ModelParams {
        let k = w.len();
        let mut u = Memberships::zeros(2, k);
        let mut v = Memberships::zeros(2, k);
        u.row_mut(0).copy_from_slice(ui);
        v.row_mut(1).copy_from_slice(vj);
        ModelParams {
            u,
            v,
            w: w.to_vec(),
            pi: 0.6,
            mu: 0.1,
        }
    }

    #[test]
    fn rate_examples() {
        assert_eq!(rate(&params2(&[1.0, 0.0], &[1.0, 0.0], &[2.0, 5.0]), 0, 1).unwrap(), 2.0);
        assert_eq!(rate(&params2(&[0.0, 0.0], &[3.0, 4.0], &[2.0, 5.0]), 0, 1).unwrap(), 0.0);
        assert_eq!(rate(&params2(&[1.0, 1.0], &[2.0, 3.0], &[1.0, 1.0]), 0, 1).unwrap(), 5.0);
        assert!(matches!(rate(&params2(&[1.0], &[1.0], &[1.0]), 1, 1), Err(AcdError::SelfPair(1))));
    }

    #[test]
    fn logpmf_examples() {
        assert_eq!(poisson_logpmf_unnormalized(0.0, 1.5), -1.5);
        assert_eq!(poisson_logpmf_unnormalized(2.0, 1.0), -1.0);
        let v = poisson_logpmf_unnormalized(3.0, 2.0);
        assert!((v - (-2.0 + 3.0 * std::f64::consts::LN_2)).abs() < 1e-15);
        assert!((v - 0.079_441_541_679_835_9).abs() < 1e-15);
        assert_eq!(poisson_logpmf_unnormalized(0.0, 0.0), 0.0);
        assert_eq!(poisson_logpmf_unnormalized(1.0, 0.0), f64::NEG_INFINITY);
    }

    #[test]
    fn mixture_examples() {
        let mut p = params2(&[1.0], &[2.0], &[1.0]);
        p.pi = 2.0;
        let (r, a) = edge_loglik_mixture(&p, 0, 1, 3.0).unwrap();
        assert_eq!(r, a);

        p.pi = 1.0;
        assert_eq!(edge_loglik_mixture(&p, 0, 1, 0.0).unwrap(), (-2.0, -1.0));

        p.w = vec![0.25];
        p.pi = 0.6;
        let (r, a) = edge_loglik_mixture(&p, 0, 1, 1.0).unwrap();
        assert_eq!(r, -0.5 + 0.5f64.ln());
        assert_eq!(a, -0.6 + 0.6f64.ln());
    }

    #[test]
    fn logpmf_derivative_matches_finite_difference() {
        for &(a, lam) in &[(0.0, 0.7), (1.0, 0.3), (4.0, 2.5), (7.0, 11.0)] {
            let h = 1e-6 * lam;
            let fd = (poisson_logpmf_unnormalized(a, lam + h) - poisson_logpmf_unnormalized(a, lam - h)) / (2.0 * h);
            let exact = a / lam - 1.0;
            assert!((fd - exact).abs() <= 1e-6 * exact.abs().max(1.0), "{a} {lam}: {fd} vs {exact}");
        }
    }

    #[test]
    fn json_shape_round_trips() {
        let p = params2(&[1.0, 0.5], &[0.25, 2.0], &[3.0, 4.0]);
        let s = p.to_json().unwrap();
        assert!(s.contains("\"K\":2"));
        assert_eq!(ModelParams::from_json(&s).unwrap(), p);
    }

    #[test]
    fn hyperparams_reject_small_shape() {
        let mut h = Hyperparams::new(2);
        h.validate().unwrap();
        h.a = 0.5;
        assert!(h.validate().is_err());
        h.a = 1.0;
        h.k = 0;
        assert!(h.validate().is_err());
    }
}
