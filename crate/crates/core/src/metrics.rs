//! Evaluation scores: confusion counts, permutation-matched cosine
//! similarity and F1 for memberships, ranking AUC.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{AcdError, Result};
use crate::graph::{Label, Pair, PairLabeling};
use crate::model::{Memberships, ModelParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfusionScores {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl ConfusionScores {
    /// Scores from raw counts; any zero denominator yields 0.
    pub fn from_counts(tp: usize, fp: usize, fn_: usize, tn: usize) -> Self {
        let frac = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = frac(tp, tp + fp);
        let recall = frac(tp, tp + fn_);
        ConfusionScores {
            tp,
            fp,
            fn_,
            tn,
            precision,
            recall,
            f1: f1_score(precision, recall),
        }
    }
}

pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// Confusion counts over `universe` with anomalous as the positive class.
/// Both labelings must cover exactly `universe`.
pub fn confusion(pred: &PairLabeling, truth: &PairLabeling, universe: &BTreeSet<Pair>) -> Result<ConfusionScores> {
    if pred.universe() != *universe || truth.universe() != *universe {
        return Err(AcdError::UniverseMismatch);
    }
    let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
    for &p in universe {
        match (pred.get(p), truth.get(p)) {
            (Some(Label::Anomalous), Some(Label::Anomalous)) => tp += 1,
            (Some(Label::Anomalous), _) => fp += 1,
            (_, Some(Label::Anomalous)) => fn_ += 1,
            _ => tn += 1,
        }
    }
    Ok(ConfusionScores::from_counts(tp, fp, fn_, tn))
}

/// One-hot memberships from categorical node attributes. Categories are
/// sorted; nodes without an attribute get an all-zero row.
pub fn one_hot(attrs: &[Option<String>]) -> (Memberships, Vec<String>) {
    let cats: Vec<String> = attrs.iter().flatten().cloned().collect::<BTreeSet<_>>().into_iter().collect();
    let index: BTreeMap<&str, usize> = cats.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect();
    let mut m = Memberships::zeros(attrs.len(), cats.len().max(1));
    for (i, a) in attrs.iter().enumerate() {
        if let Some(a) = a {
            m.set(i, index[a.as_str()], 1.0);
        }
    }
    (m, cats)
}

/// Largest-total assignment of rows to columns of a square score matrix.
/// Exact bitmask dynamic programming up to 20 columns, greedy beyond.
/// Returns `perm[row] = col`.
pub fn best_assignment(score: &[Vec<f64>]) -> Vec<usize> {
    let k = score.len();
    if k == 0 {
        return Vec::new();
    }
    if k > 20 {
        let mut cells: Vec<(usize, usize)> = (0..k).flat_map(|r| (0..k).map(move |c| (r, c))).collect();
        cells.sort_by(|a, b| score[b.0][b.1].total_cmp(&score[a.0][a.1]).then(a.cmp(b)));
        let mut perm = vec![usize::MAX; k];
        let mut used = vec![false; k];
        for (r, c) in cells {
            if perm[r] == usize::MAX && !used[c] {
                perm[r] = c;
                used[c] = true;
            }
        }
        return perm;
    }
    // dp[mask] = best total for the first popcount(mask) rows using columns in mask.
    let full = 1usize << k;
    let mut dp = vec![f64::NEG_INFINITY; full];
    let mut choice = vec![0u8; full];
    dp[0] = 0.0;
    for mask in 0..full {
        if dp[mask] == f64::NEG_INFINITY {
            continue;
        }
        let r = mask.count_ones() as usize;
        if r == k {
            continue;
        }
        for c in 0..k {
            if mask & (1 << c) == 0 {
                let next = mask | (1 << c);
                let v = dp[mask] + score[r][c];
                if v > dp[next] {
                    dp[next] = v;
                    choice[next] = c as u8;
                }
            }
        }
    }
    let mut perm = vec![0; k];
    let mut mask = full - 1;
    for r in (0..k).rev() {
        let c = choice[mask] as usize;
        perm[r] = c;
        mask &= !(1 << c);
    }
    perm
}

fn padded_cross(a: &Memberships, b: &Memberships, normalize: bool) -> Vec<Vec<f64>> {
    let k = a.n_cols().max(b.n_cols());
    let mut s = vec![vec![0.0; k]; k];
    for i in 0..a.n_rows() {
        let (x, y) = (a.row(i), b.row(i));
        let scale = if normalize {
            let (nx, ny) = (norm(x), norm(y));
            if nx == 0.0 || ny == 0.0 {
                continue;
            }
            1.0 / (nx * ny)
        } else {
            1.0
        };
        for (r, xr) in x.iter().enumerate() {
            if *xr == 0.0 {
                continue;
            }
            for (c, yc) in y.iter().enumerate() {
                s[r][c] += xr * yc * scale;
            }
        }
    }
    s
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn check_rows(a: &Memberships, b: &Memberships) -> Result<()> {
    if a.n_rows() != b.n_rows() || a.n_rows() == 0 {
        return Err(AcdError::InvalidParam(format!(
            "membership matrices must have the same positive row count, got {} and {}",
            a.n_rows(),
            b.n_rows()
        )));
    }
    Ok(())
}

/// Mean row-wise cosine similarity between `inferred` and `truth`,
/// maximized over column matchings. Column counts may differ; the smaller
/// side is padded with zero columns. All-zero rows contribute 0.
pub fn cosine_similarity_matched(inferred: &Memberships, truth: &Memberships) -> Result<f64> {
    check_rows(inferred, truth)?;
    let s = padded_cross(inferred, truth, true);
    let perm = best_assignment(&s);
    let total: f64 = perm.iter().enumerate().map(|(r, &c)| s[r][c]).sum();
    Ok((total / inferred.n_rows() as f64).clamp(0.0, 1.0))
}

/// Argmax community of each row (lowest index on ties).
pub fn hard_assignment(u: &Memberships) -> Vec<usize> {
    (0..u.n_rows())
        .map(|i| {
            let row = u.row(i);
            let mut best = 0;
            for (k, &x) in row.iter().enumerate() {
                if x > row[best] {
                    best = k;
                }
            }
            best
        })
        .collect()
}

/// Macro-averaged F1 over the true classes after matching inferred hard
/// communities to classes by maximum overlap. Nodes with an all-zero truth
/// row are ignored.
pub fn macro_f1_matched(inferred: &Memberships, truth: &Memberships) -> Result<f64> {
    check_rows(inferred, truth)?;
    let pred = hard_assignment(inferred);
    let labeled: Vec<usize> = (0..truth.n_rows()).filter(|&i| norm(truth.row(i)) > 0.0).collect();
    let gold = hard_assignment(truth);
    let k = inferred.n_cols().max(truth.n_cols());
    let mut overlap = vec![vec![0.0; k]; k];
    let (mut pred_size, mut gold_size) = (vec![0usize; k], vec![0usize; k]);
    for &i in &labeled {
        overlap[pred[i]][gold[i]] += 1.0;
        pred_size[pred[i]] += 1;
        gold_size[gold[i]] += 1;
    }
    let perm = best_assignment(&overlap);
    let classes: Vec<usize> = (0..truth.n_cols()).filter(|&c| gold_size[c] > 0).collect();
    if classes.is_empty() {
        return Err(AcdError::EmptyClass("ground-truth communities"));
    }
    let mut total = 0.0;
    for &c in &classes {
        let r = perm.iter().position(|&x| x == c).expect("permutation covers every column");
        let tp = overlap[r][c] as usize;
        let s = ConfusionScores::from_counts(tp, pred_size[r] - tp, gold_size[c] - tp, 0);
        total += s.f1;
    }
    Ok(total / classes.len() as f64)
}

/// Probability that a random positive outscores a random negative, ties
/// counting one half.
pub fn auc_scores(pos: &[f64], neg: &[f64]) -> Result<f64> {
    if pos.is_empty() {
        return Err(AcdError::EmptyClass("positives"));
    }
    if neg.is_empty() {
        return Err(AcdError::EmptyClass("negatives"));
    }
    if pos.len().saturating_mul(neg.len()) <= 4_000_000 {
        let mut wins = 0.0;
        for &p in pos {
            for &n in neg {
                wins += if p > n {
                    1.0
                } else if p == n {
                    0.5
                } else {
                    0.0
                };
            }
        }
        return Ok(wins / (pos.len() * neg.len()) as f64);
    }
    // Rank-sum with midranks for ties.
    let mut all: Vec<(f64, bool)> = pos.iter().map(|&x| (x, true)).chain(neg.iter().map(|&x| (x, false))).collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j + 1 < all.len() && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += mid * all[i..=j].iter().filter(|e| e.1).count() as f64;
        i = j + 1;
    }
    let (np, nn) = (pos.len() as f64, neg.len() as f64);
    Ok((rank_sum - np * (np + 1.0) / 2.0) / (np * nn))
}

/// AUC of `score` separating `positives` from `negatives` (disjoint sets).
pub fn auc_ranking<F: Fn(Pair) -> f64>(score: F, positives: &BTreeSet<Pair>, negatives: &BTreeSet<Pair>) -> Result<f64> {
    if !positives.is_disjoint(negatives) {
        return Err(AcdError::InvalidParam("positive and negative pair sets overlap".into()));
    }
    let pos: Vec<f64> = positives.iter().map(|&p| score(p)).collect();
    let neg: Vec<f64> = negatives.iter().map(|&p| score(p)).collect();
    auc_scores(&pos, &neg)
}

/// Marginal probability of a nonzero entry under the fitted mixture,
/// averaged over both orientations of the pair.
pub fn link_score(params: &ModelParams, p: Pair) -> f64 {
    let anomalous = params.mu * -(-params.pi).exp_m1();
    let one = |i, j| anomalous + (1.0 - params.mu) * -(-params.rate_unchecked(i, j)).exp_m1();
    0.5 * (one(p.lo(), p.hi()) + one(p.hi(), p.lo()))
}
