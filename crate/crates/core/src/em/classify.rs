use std::fmt;
use std::str::FromStr;

use log::warn;
use serde::{Deserialize, Serialize};

use super::QMatrix;
use crate::error::AcdError;
use crate::graph::{Label, Network, Pair, PairLabeling};

/// Cut applied to Q to call a pair anomalous.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode", content = "value")]
pub enum Threshold {
    /// `Q_ij >= t`.
    Absolute(f64),
    /// `Q_ij >= f * max Q` over the restriction set (and `Q_ij > 0`).
    RelativeToMax(f64),
    /// The `m` highest-Q pairs; ties broken by pair order.
    TopK(usize),
}

impl Default for Threshold {
    fn default() -> Self {
        Threshold::Absolute(0.5)
    }
}

impl fmt::Display for Threshold {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Threshold::Absolute(t) => write!(f, "abs:{t}"),
            Threshold::RelativeToMax(x) => write!(f, "relmax:{x}"),
            Threshold::TopK(m) => write!(f, "top:{m}"),
        }
    }
}

impl FromStr for Threshold {
    type Err = AcdError;

    /// `abs:<t>`, `relmax:<f>` or `top:<m>`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || AcdError::InvalidParam(format!("threshold `{s}`: expected abs:<t>, relmax:<f> or top:<m>"));
        let (kind, val) = s.split_once(':').ok_or_else(bad)?;
        match kind {
            "abs" => val.parse().map(Threshold::Absolute).map_err(|_| bad()),
            "relmax" => val.parse().map(Threshold::RelativeToMax).map_err(|_| bad()),
            "top" => val.parse().map(Threshold::TopK).map_err(|_| bad()),
            _ => Err(bad()),
        }
    }
}

/// Which pairs are eligible for labeling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Restriction {
    EdgesOnly,
    NonEdgesOnly,
    AllPairs,
}

impl FromStr for Restriction {
    type Err = AcdError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "edges" | "edges_only" => Ok(Restriction::EdgesOnly),
            "nonedges" | "nonedges_only" => Ok(Restriction::NonEdgesOnly),
            "all" | "all_pairs" => Ok(Restriction::AllPairs),
            _ => Err(AcdError::InvalidParam(format!(
                "restriction `{s}`: expected edges, nonedges or all"
            ))),
        }
    }
}

/// Label every pair of the restriction set as anomalous or regular.
pub fn classify_anomalies(q: &QMatrix, mode: Threshold, restrict: Restriction, net: &Network) -> PairLabeling {
    let candidates: Vec<Pair> = match restrict {
        Restriction::EdgesOnly => net.edge_pairs(),
        Restriction::NonEdgesOnly => net.non_edge_pairs(),
        Restriction::AllPairs => {
            let n = net.n_nodes();
            (0..n).flat_map(|i| (i + 1..n).map(move |j| Pair::new(i, j))).collect()
        }
    };
    if candidates.is_empty() {
        warn!("classification over an empty {restrict:?} set");
        return PairLabeling::new();
    }
    let score = |p: &Pair| q.get(p.lo(), p.hi());

    let flagged: Vec<bool> = match mode {
        Threshold::Absolute(t) => candidates.iter().map(|p| score(p) >= t).collect(),
        Threshold::RelativeToMax(f) => {
            let max = candidates.iter().map(score).fold(0.0, f64::max);
            candidates.iter().map(|p| score(p) > 0.0 && score(p) >= f * max).collect()
        }
        Threshold::TopK(m) => {
            let mut order: Vec<usize> = (0..candidates.len()).collect();
            // Q descending, then pair ascending (candidates are already sorted).
            order.sort_by(|&a, &b| score(&candidates[b]).total_cmp(&score(&candidates[a])).then(a.cmp(&b)));
            let mut flags = vec![false; candidates.len()];
            for &idx in order.iter().take(m) {
                flags[idx] = true;
            }
            flags
        }
    };
    candidates
        .into_iter()
        .zip(flagged)
        .map(|(p, f)| (p, if f { Label::Anomalous } else { Label::Regular }))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup() -> (QMatrix, Network) {
        let net = Network::from_edges(4, false, [(0, 1, 1), (1, 2, 1), (2, 3, 1)]).unwrap();
        let mut v = vec![0.0; 16];
        for (i, j, x) in [(0, 1, 0.9), (1, 2, 0.3), (2, 3, 0.9), (0, 2, 0.8), (0, 3, 0.1), (1, 3, 0.6)] {
            v[i * 4 + j] = x;
            v[j * 4 + i] = x;
        }
        (QMatrix::from_full(4, v), net)
    }

    #[test]
    fn modes() {
        let (q, net) = setup();
        let l = classify_anomalies(&q, Threshold::Absolute(0.5), Restriction::EdgesOnly, &net);
        assert_eq!(l.len(), 3);
        assert_eq!(l.anomalous_set(), [Pair::new(0, 1), Pair::new(2, 3)].into());

        let l = classify_anomalies(&q, Threshold::TopK(1), Restriction::EdgesOnly, &net);
        assert_eq!(l.anomalous_set(), [Pair::new(0, 1)].into());

        let l = classify_anomalies(&q, Threshold::TopK(2), Restriction::NonEdgesOnly, &net);
        assert_eq!(l.anomalous_set(), [Pair::new(0, 2), Pair::new(1, 3)].into());

        let l = classify_anomalies(&q, Threshold::RelativeToMax(0.7), Restriction::AllPairs, &net);
        assert_eq!(l.len(), 6);
        assert_eq!(
            l.anomalous_set(),
            [Pair::new(0, 1), Pair::new(0, 2), Pair::new(2, 3)].into()
        );
    }

    #[test]
    fn empty_restriction() {
        let edges = (0..3).flat_map(|i| (i + 1..3).map(move |j| (i, j, 1)));
        let k3 = Network::from_edges(3, false, edges).unwrap();
        let q = QMatrix::zeros(3);
        assert!(classify_anomalies(&q, Threshold::TopK(2), Restriction::NonEdgesOnly, &k3).is_empty());
    }

    #[test]
    fn parse_threshold() {
        assert_eq!("abs:0.5".parse::<Threshold>().unwrap(), Threshold::Absolute(0.5));
        assert_eq!("relmax:0.7".parse::<Threshold>().unwrap(), Threshold::RelativeToMax(0.7));
        assert_eq!("top:6".parse::<Threshold>().unwrap(), Threshold::TopK(6));
        assert!("top:x".parse::<Threshold>().is_err());
        assert_eq!(Threshold::TopK(6).to_string(), "top:6");
    }
}
