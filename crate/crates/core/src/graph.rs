//! Network container, edge-list I/O and pair-level mutations.
//!
//! A [`Network`] stores ordered entries `(i, j) -> A_ij` with `i != j`.
//! Undirected networks store both orientations with equal weight. Values are
//! immutable: every mutation returns a new network.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{AcdError, Result};

/// Unordered node pair, stored with `lo < hi`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Pair {
    lo: usize,
    hi: usize,
}

impl Pair {
    /// Panics if `a == b`.
    pub fn new(a: usize, b: usize) -> Self {
        Self::try_new(a, b).expect("a pair needs two distinct nodes")
    }

    pub fn try_new(a: usize, b: usize) -> Option<Self> {
        match a.cmp(&b) {
            std::cmp::Ordering::Less => Some(Pair { lo: a, hi: b }),
            std::cmp::Ordering::Greater => Some(Pair { lo: b, hi: a }),
            std::cmp::Ordering::Equal => None,
        }
    }

    pub fn lo(self) -> usize {
        self.lo
    }

    pub fn hi(self) -> usize {
        self.hi
    }
}

impl fmt::Display for Pair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.lo, self.hi)
    }
}

impl Serialize for Pair {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        [self.lo, self.hi].serialize(s)
    }
}

impl<'de> Deserialize<'de> for Pair {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let [a, b] = <[usize; 2]>::deserialize(d)?;
        Pair::try_new(a, b).ok_or_else(|| serde::de::Error::custom("self-pair in labeling"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Anomalous,
    Regular,
}

/// Anomalous/regular labels over a set of unordered pairs.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PairLabeling {
    labels: BTreeMap<Pair, Label>,
}

#[derive(Serialize, Deserialize)]
struct LabelingJson {
    pairs: Vec<Pair>,
    labels: Vec<Label>,
}

impl PairLabeling {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, pair: Pair, label: Label) {
        self.labels.insert(pair, label);
    }

    pub fn get(&self, pair: Pair) -> Option<Label> {
        self.labels.get(&pair).copied()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (Pair, Label)> + '_ {
        self.labels.iter().map(|(p, l)| (*p, *l))
    }

    /// All labeled pairs, anomalous or not.
    pub fn universe(&self) -> BTreeSet<Pair> {
        self.labels.keys().copied().collect()
    }

    pub fn anomalous(&self) -> impl Iterator<Item = Pair> + '_ {
        self.iter()
            .filter(|(_, l)| *l == Label::Anomalous)
            .map(|(p, _)| p)
    }

    pub fn anomalous_set(&self) -> BTreeSet<Pair> {
        self.anomalous().collect()
    }

    pub fn n_anomalous(&self) -> usize {
        self.anomalous().count()
    }

    /// Keep only pairs in `universe`; pairs of `universe` missing here are
    /// added as regular.
    pub fn restricted_to(&self, universe: &BTreeSet<Pair>) -> PairLabeling {
        PairLabeling {
            labels: universe
                .iter()
                .map(|p| (*p, self.get(*p).unwrap_or(Label::Regular)))
                .collect(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let (pairs, labels) = self.labels.iter().map(|(p, l)| (*p, *l)).unzip();
        Ok(serde_json::to_string(&LabelingJson { pairs, labels })?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let raw: LabelingJson = serde_json::from_str(s)?;
        if raw.pairs.len() != raw.labels.len() {
            return Err(AcdError::InvalidParam(format!(
                "labeling has {} pairs but {} labels",
                raw.pairs.len(),
                raw.labels.len()
            )));
        }
        Ok(PairLabeling {
            labels: raw.pairs.into_iter().zip(raw.labels).collect(),
        })
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()?).map_err(|e| AcdError::io(path, e))
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let s = fs::read_to_string(path).map_err(|e| AcdError::io(path, e))?;
        Self::from_json(&s)
    }
}

impl FromIterator<(Pair, Label)> for PairLabeling {
    fn from_iter<I: IntoIterator<Item = (Pair, Label)>>(iter: I) -> Self {
        PairLabeling {
            labels: iter.into_iter().collect(),
        }
    }
}

/// Weighted, possibly directed network without self-loops.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Network {
    n_nodes: usize,
    directed: bool,
    entries: BTreeMap<(usize, usize), u64>,
    node_labels: Option<Vec<String>>,
    attributes: Option<Vec<Option<String>>>,
}

impl Network {
    pub fn new(n_nodes: usize, directed: bool) -> Self {
        Network {
            n_nodes,
            directed,
            entries: BTreeMap::new(),
            node_labels: None,
            attributes: None,
        }
    }

    /// Build from `(src, dst, weight)` triples. Duplicates sum; undirected
    /// input merges both orientations and stores the symmetric result.
    pub fn from_edges<I>(n_nodes: usize, directed: bool, edges: I) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize, u64)>,
    {
        let mut net = Network::new(n_nodes, directed);
        for (i, j, w) in edges {
            for idx in [i, j] {
                if idx >= n_nodes {
                    return Err(AcdError::NodeOutOfRange { index: idx, n_nodes });
                }
            }
            if i == j {
                return Err(AcdError::SelfPair(i));
            }
            net.accumulate(i, j, w);
        }
        Ok(net)
    }

    fn accumulate(&mut self, i: usize, j: usize, w: u64) {
        if w == 0 {
            return;
        }
        *self.entries.entry((i, j)).or_insert(0) += w;
        if !self.directed {
            *self.entries.entry((j, i)).or_insert(0) += w;
        }
    }

    pub fn with_node_labels(mut self, labels: Vec<String>) -> Result<Self> {
        if labels.len() != self.n_nodes {
            return Err(AcdError::InvalidParam(format!(
                "{} node labels for {} nodes",
                labels.len(),
                self.n_nodes
            )));
        }
        self.node_labels = Some(labels);
        Ok(self)
    }

    pub fn with_attributes(mut self, attrs: Vec<Option<String>>) -> Result<Self> {
        if attrs.len() != self.n_nodes {
            return Err(AcdError::InvalidParam(format!(
                "{} attributes for {} nodes",
                attrs.len(),
                self.n_nodes
            )));
        }
        self.attributes = Some(attrs);
        Ok(self)
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn is_directed(&self) -> bool {
        self.directed
    }

    pub fn weight(&self, i: usize, j: usize) -> u64 {
        self.entries.get(&(i, j)).copied().unwrap_or(0)
    }

    /// Ordered entries `(i, j, A_ij)` with `A_ij > 0`, both orientations for
    /// undirected networks, sorted by `(i, j)`.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, u64)> + '_ {
        self.entries.iter().map(|(&(i, j), &w)| (i, j, w))
    }

    pub fn n_entries(&self) -> usize {
        self.entries.len()
    }

    /// True if either orientation of the pair carries weight.
    pub fn has_pair(&self, p: Pair) -> bool {
        self.entries.contains_key(&(p.lo, p.hi)) || self.entries.contains_key(&(p.hi, p.lo))
    }

    /// Present unordered pairs, sorted.
    pub fn edge_pairs(&self) -> Vec<Pair> {
        let set: BTreeSet<Pair> = self.entries.keys().map(|&(i, j)| Pair::new(i, j)).collect();
        set.into_iter().collect()
    }

    /// Number of present unordered pairs.
    pub fn n_edges(&self) -> usize {
        if self.directed {
            self.edge_pairs().len()
        } else {
            self.entries.len() / 2
        }
    }

    /// Unordered pairs with no weight in either orientation, sorted.
    pub fn non_edge_pairs(&self) -> Vec<Pair> {
        let mut out = Vec::new();
        for i in 0..self.n_nodes {
            for j in i + 1..self.n_nodes {
                let p = Pair::new(i, j);
                if !self.has_pair(p) {
                    out.push(p);
                }
            }
        }
        out
    }

    pub fn n_pairs(&self) -> usize {
        self.n_nodes * self.n_nodes.saturating_sub(1) / 2
    }

    pub fn node_labels(&self) -> Option<&[String]> {
        self.node_labels.as_deref()
    }

    pub fn node_label(&self, i: usize) -> String {
        self.node_labels
            .as_ref()
            .map(|l| l[i].clone())
            .unwrap_or_else(|| i.to_string())
    }

    pub fn attributes(&self) -> Option<&[Option<String>]> {
        self.attributes.as_deref()
    }

    /// Mean of the positive entries, 0 for an empty network.
    pub fn mean_positive_weight(&self) -> f64 {
        if self.entries.is_empty() {
            return 0.0;
        }
        self.entries.values().map(|&w| w as f64).sum::<f64>() / self.entries.len() as f64
    }

    fn check_pair(&self, p: Pair) -> Result<()> {
        if p.hi >= self.n_nodes {
            return Err(AcdError::NodeOutOfRange {
                index: p.hi,
                n_nodes: self.n_nodes,
            });
        }
        Ok(())
    }

    /// Delete both orientations of every pair. Fails on the first pair that
    /// is not an edge.
    pub fn remove_pairs(&self, pairs: &BTreeSet<Pair>) -> Result<Network> {
        let mut out = self.clone();
        for &p in pairs {
            self.check_pair(p)?;
            if !self.has_pair(p) {
                return Err(AcdError::PairAbsent(p));
            }
            out.entries.remove(&(p.lo, p.hi));
            out.entries.remove(&(p.hi, p.lo));
        }
        Ok(out)
    }

    /// Add weight-1 entries for every pair (both orientations when
    /// undirected). Fails on the first pair that is already an edge.
    pub fn add_pairs(&self, pairs: &BTreeSet<Pair>) -> Result<Network> {
        let mut out = self.clone();
        for &p in pairs {
            self.check_pair(p)?;
            if self.has_pair(p) {
                return Err(AcdError::PairPresent(p));
            }
            out.entries.insert((p.lo, p.hi), 1);
            if !self.directed {
                out.entries.insert((p.hi, p.lo), 1);
            }
        }
        Ok(out)
    }

    /// Inject `round(rho_a * E)` anomalous edges among non-adjacent pairs,
    /// sampled uniformly without replacement.
    ///
    /// Injected pairs get weight 1 in both orientations, also for directed
    /// networks. The returned labeling marks the injected pairs anomalous and
    /// every pre-existing edge regular.
    pub fn inject_anomalies(&self, rho_a: f64, seed: u64) -> Result<(Network, PairLabeling)> {
        if !(rho_a >= 0.0 && rho_a.is_finite()) {
            return Err(AcdError::InvalidParam(format!(
                "rho_a must be a nonnegative fraction, got {rho_a}"
            )));
        }
        let existing = self.edge_pairs();
        let m = (rho_a * existing.len() as f64).round() as usize;
        let free = self.non_edge_pairs();
        if free.is_empty() || m > free.len() {
            return Err(AcdError::NoFreePairs {
                requested: m,
                available: free.len(),
            });
        }

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut picked: Vec<Pair> = rand::seq::index::sample(&mut rng, free.len(), m)
            .into_iter()
            .map(|k| free[k])
            .collect();
        picked.sort();

        let mut out = self.clone();
        let mut labels: PairLabeling = existing.iter().map(|&p| (p, Label::Regular)).collect();
        for p in picked {
            out.entries.insert((p.lo, p.hi), 1);
            out.entries.insert((p.hi, p.lo), 1);
            labels.insert(p, Label::Anomalous);
        }
        Ok((out, labels))
    }

    /// Attach per-node categories from a `node <sep> category` file. Ids
    /// absent from the network are skipped with a warning.
    pub fn load_attributes(&self, path: impl AsRef<Path>) -> Result<Network> {
        let path = path.as_ref();
        let index: HashMap<String, usize> = (0..self.n_nodes).map(|i| (self.node_label(i), i)).collect();
        let mut attrs = vec![None; self.n_nodes];
        for (lineno, line) in read_lines(path)? {
            let Some((id, cat)) = split_attribute_line(&line) else {
                return Err(AcdError::Parse {
                    path: path.to_path_buf(),
                    line: lineno,
                    msg: "expected `node <sep> category`".into(),
                });
            };
            match index.get(id) {
                Some(&i) => attrs[i] = Some(cat.to_string()),
                None => log::warn!("{}:{lineno}: unknown node `{id}` ignored", path.display()),
            }
        }
        self.clone().with_attributes(attrs)
    }

    /// Write `src\tdst\tweight` lines (one per unordered edge when undirected)
    /// plus a sidecar id map at [`id_map_path`].
    pub fn save_edgelist(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut buf = String::new();
        for (i, j, w) in self.entries() {
            if !self.directed && i > j {
                continue;
            }
            buf.push_str(&format!("{}\t{}\t{}\n", self.node_label(i), self.node_label(j), w));
        }
        fs::write(path, buf).map_err(|e| AcdError::io(path, e))?;

        let ids = id_map_path(path);
        let mut f = fs::File::create(&ids).map_err(|e| AcdError::io(&ids, e))?;
        for i in 0..self.n_nodes {
            writeln!(f, "{}\t{}", i, self.node_label(i)).map_err(|e| AcdError::io(&ids, e))?;
        }
        Ok(())
    }
}

/// Sidecar file holding `index\tlabel` lines for an edge list.
pub fn id_map_path(edgelist: &Path) -> PathBuf {
    let mut s = edgelist.as_os_str().to_owned();
    s.push(".ids");
    PathBuf::from(s)
}

fn read_lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let file = fs::File::open(path).map_err(|e| AcdError::io(path, e))?;
    let mut out = Vec::new();
    for (k, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| AcdError::io(path, e))?;
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') || t.starts_with('%') {
            continue;
        }
        out.push((k + 1, t.to_string()));
    }
    Ok(out)
}

fn split_attribute_line(line: &str) -> Option<(&str, &str)> {
    let (id, rest) = line
        .split_once('\t')
        .or_else(|| line.split_once(','))
        .or_else(|| line.split_once(' '))?;
    let (id, rest) = (id.trim(), rest.trim());
    (!id.is_empty() && !rest.is_empty()).then_some((id, rest))
}

fn parse_weight(tok: &str, path: &Path, line: usize) -> Result<u64> {
    if let Ok(w) = tok.parse::<u64>() {
        return Ok(w);
    }
    match tok.parse::<f64>() {
        Ok(w) if w < 0.0 => Err(AcdError::NegativeWeight {
            path: path.to_path_buf(),
            line,
            weight: tok.to_string(),
        }),
        Ok(w) if w.is_finite() && w.fract() == 0.0 && w <= u64::MAX as f64 => Ok(w as u64),
        _ => Err(AcdError::Parse {
            path: path.to_path_buf(),
            line,
            msg: format!("weight `{tok}` is not a nonnegative integer"),
        }),
    }
}

/// Read an edge list. Lines are `src dst [weight]` separated by tabs, commas
/// or spaces; `#` and `%` start comment lines. Node ids are mapped to dense
/// indices in first-appearance order.
pub fn load_edgelist(path: impl AsRef<Path>, directed: bool, weighted: bool) -> Result<Network> {
    parse_edgelist(path.as_ref(), directed, weighted, Vec::new())
}

/// Like [`load_edgelist`], but node indices are seeded from an id map written
/// by [`Network::save_edgelist`], which preserves isolated nodes and order.
pub fn load_edgelist_with_ids(
    path: impl AsRef<Path>,
    ids_path: impl AsRef<Path>,
    directed: bool,
    weighted: bool,
) -> Result<Network> {
    let ids_path = ids_path.as_ref();
    let mut ids = Vec::new();
    for (lineno, line) in read_lines(ids_path)? {
        let (idx, label) = line.split_once('\t').ok_or_else(|| AcdError::Parse {
            path: ids_path.to_path_buf(),
            line: lineno,
            msg: "expected `index\\tlabel`".into(),
        })?;
        if idx.trim().parse::<usize>().ok() != Some(ids.len()) {
            return Err(AcdError::Parse {
                path: ids_path.to_path_buf(),
                line: lineno,
                msg: format!("expected index {}", ids.len()),
            });
        }
        ids.push(label.to_string());
    }
    parse_edgelist(path.as_ref(), directed, weighted, ids)
}

fn parse_edgelist(path: &Path, directed: bool, weighted: bool, seed_ids: Vec<String>) -> Result<Network> {
    let mut index: HashMap<String, usize> = seed_ids.iter().cloned().enumerate().map(|(i, s)| (s, i)).collect();
    let mut labels = seed_ids;
    let mut edges = Vec::new();

    let mut intern = |id: &str, labels: &mut Vec<String>| -> usize {
        if let Some(&i) = index.get(id) {
            return i;
        }
        let i = labels.len();
        labels.push(id.to_string());
        index.insert(id.to_string(), i);
        i
    };

    for (lineno, line) in read_lines(path)? {
        let toks: Vec<&str> = line
            .split(['\t', ',', ' '])
            .filter(|t| !t.is_empty())
            .collect();
        let enough = if weighted { toks.len() >= 3 } else { toks.len() >= 2 };
        if !enough {
            return Err(AcdError::Parse {
                path: path.to_path_buf(),
                line: lineno,
                msg: format!(
                    "expected `src dst{}`, found {} field(s)",
                    if weighted { " weight" } else { "" },
                    toks.len()
                ),
            });
        }
        if toks[0] == toks[1] {
            return Err(AcdError::SelfLoop {
                path: path.to_path_buf(),
                line: lineno,
                node: toks[0].to_string(),
            });
        }
        let w = if weighted { parse_weight(toks[2], path, lineno)? } else { 1 };
        let i = intern(toks[0], &mut labels);
        let j = intern(toks[1], &mut labels);
        edges.push((i, j, w));
    }

    if edges.iter().all(|e| e.2 == 0) {
        return Err(AcdError::NoEdges);
    }
    Network::from_edges(labels.len(), directed, edges)?.with_node_labels(labels)
}
