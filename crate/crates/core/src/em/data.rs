use std::collections::BTreeSet;

use crate::graph::{Network, Pair};

/// Index-friendly view of a network for the EM sweeps.
///
/// Holds compressed out/in adjacency, the list of upper-triangle pairs with
/// any weight, and an optional held-out mask. Held-out pairs are invisible:
/// they are dropped from the adjacency and skipped by every pair sum.
#[derive(Debug, Clone)]
pub struct ObservedNetwork {
    n: usize,
    directed: bool,
    out_ptr: Vec<usize>,
    out_adj: Vec<(usize, f64)>,
    in_ptr: Vec<usize>,
    in_adj: Vec<(usize, f64)>,
    upper_ptr: Vec<usize>,
    upper: Vec<(usize, f64, f64)>,
    heldout: Option<Vec<bool>>,
    n_observed_pairs: usize,
    mean_positive_weight: f64,
    count_weight: f64,
}

impl ObservedNetwork {
    pub fn new(net: &Network) -> Self {
        Self::build(net, None)
    }

    /// Hide `heldout` pairs (both orientations) from inference.
    pub fn with_heldout(net: &Network, heldout: &BTreeSet<Pair>) -> Self {
        Self::build(net, Some(heldout))
    }

    fn build(net: &Network, heldout: Option<&BTreeSet<Pair>>) -> Self {
        let n = net.n_nodes();
        let mask = heldout.filter(|h| !h.is_empty()).map(|h| {
            let mut m = vec![false; n * n];
            for p in h {
                m[p.lo() * n + p.hi()] = true;
                m[p.hi() * n + p.lo()] = true;
            }
            m
        });
        let hidden = |i: usize, j: usize| mask.as_ref().is_some_and(|m| m[i * n + j]);

        let entries: Vec<(usize, usize, f64)> = net
            .entries()
            .filter(|&(i, j, _)| !hidden(i, j))
            .map(|(i, j, w)| (i, j, w as f64))
            .collect();

        let mut out_lists = vec![Vec::new(); n];
        let mut in_lists = vec![Vec::new(); n];
        let mut upper_lists: Vec<Vec<(usize, f64, f64)>> = vec![Vec::new(); n];
        for &(i, j, a) in &entries {
            out_lists[i].push((j, a));
            in_lists[j].push((i, a));
        }
        for &(i, j, a) in &entries {
            let (lo, hi) = (i.min(j), i.max(j));
            let row = &mut upper_lists[lo];
            let slot = match row.binary_search_by_key(&hi, |e| e.0) {
                Ok(k) => k,
                Err(k) => {
                    row.insert(k, (hi, 0.0, 0.0));
                    k
                }
            };
            if i < j {
                row[slot].1 = a;
            } else {
                row[slot].2 = a;
            }
        }
        for l in out_lists.iter_mut().chain(in_lists.iter_mut()) {
            l.sort_by_key(|e| e.0);
        }

        let flatten = |lists: Vec<Vec<(usize, f64)>>| {
            let mut ptr = Vec::with_capacity(n + 1);
            ptr.push(0);
            let mut flat = Vec::new();
            for l in lists {
                flat.extend(l);
                ptr.push(flat.len());
            }
            (ptr, flat)
        };
        let (out_ptr, out_adj) = flatten(out_lists);
        let (in_ptr, in_adj) = flatten(in_lists);
        let mut upper_ptr = vec![0];
        let mut upper = Vec::new();
        for l in upper_lists {
            upper.extend(l);
            upper_ptr.push(upper.len());
        }

        let n_hidden = heldout.map_or(0, BTreeSet::len);
        let mean_positive_weight = if entries.is_empty() {
            0.0
        } else {
            entries.iter().map(|e| e.2).sum::<f64>() / entries.len() as f64
        };
        ObservedNetwork {
            n,
            directed: net.is_directed(),
            out_ptr,
            out_adj,
            in_ptr,
            in_adj,
            upper_ptr,
            upper,
            heldout: mask,
            n_observed_pairs: n * n.saturating_sub(1) / 2 - n_hidden,
            mean_positive_weight,
            count_weight: 1.0,
        }
    }

    /// Treat each undirected pair as one observation: both stored
    /// orientations enter every count likelihood with weight 1/2. No effect
    /// on directed networks.
    pub fn with_single_factor(mut self, on: bool) -> Self {
        self.count_weight = if on && !self.directed { 0.5 } else { 1.0 };
        self
    }

    /// Weight of each ordered entry's Poisson log-likelihood.
    #[inline]
    pub fn count_weight(&self) -> f64 {
        self.count_weight
    }

    pub fn n_nodes(&self) -> usize {
        self.n
    }

    pub fn is_directed(&self) -> bool {
        self.directed
    }

    pub fn has_heldout(&self) -> bool {
        self.heldout.is_some()
    }

    /// Number of unordered pairs that take part in inference.
    pub fn n_observed_pairs(&self) -> usize {
        self.n_observed_pairs
    }

    pub fn n_observed_entries(&self) -> usize {
        self.out_adj.len()
    }

    pub fn mean_positive_weight(&self) -> f64 {
        self.mean_positive_weight
    }

    #[inline]
    pub fn is_heldout(&self, i: usize, j: usize) -> bool {
        self.heldout.as_ref().is_some_and(|m| m[i * self.n + j])
    }

    /// Observation weight of an ordered pair: 0 for the diagonal and
    /// held-out pairs, 1 otherwise.
    #[inline]
    pub fn observed(&self, i: usize, j: usize) -> f64 {
        if i == j || self.is_heldout(i, j) {
            0.0
        } else {
            1.0
        }
    }

    /// `(j, A_ij)` for training entries leaving `i`, sorted by `j`.
    #[inline]
    pub fn out_edges(&self, i: usize) -> &[(usize, f64)] {
        &self.out_adj[self.out_ptr[i]..self.out_ptr[i + 1]]
    }

    /// `(i, A_ij)` for training entries entering `j`, sorted by `i`.
    #[inline]
    pub fn in_edges(&self, j: usize) -> &[(usize, f64)] {
        &self.in_adj[self.in_ptr[j]..self.in_ptr[j + 1]]
    }

    /// `(j, A_ij, A_ji)` for `j > i` where either entry is positive.
    #[inline]
    pub fn upper_pairs(&self, i: usize) -> &[(usize, f64, f64)] {
        &self.upper[self.upper_ptr[i]..self.upper_ptr[i + 1]]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adjacency_and_mask() {
        let net = Network::from_edges(4, true, [(0, 1, 2), (1, 0, 1), (2, 0, 3), (2, 3, 1)]).unwrap();
        let obs = ObservedNetwork::new(&net);
        assert_eq!(obs.out_edges(0), &[(1, 2.0)]);
        assert_eq!(obs.in_edges(0), &[(1, 1.0), (2, 3.0)]);
        assert_eq!(obs.upper_pairs(0), &[(1, 2.0, 1.0), (2, 0.0, 3.0)]);
        assert_eq!(obs.n_observed_pairs(), 6);
        assert_eq!(obs.mean_positive_weight(), 7.0 / 4.0);

        let masked = ObservedNetwork::with_heldout(&net, &BTreeSet::from([Pair::new(0, 2)]));
        assert_eq!(masked.in_edges(0), &[(1, 1.0)]);
        assert_eq!(masked.upper_pairs(0), &[(1, 2.0, 1.0)]);
        assert_eq!(masked.n_observed_pairs(), 5);
        assert_eq!(masked.observed(2, 0), 0.0);
        assert_eq!(masked.observed(1, 2), 1.0);
    }
}
