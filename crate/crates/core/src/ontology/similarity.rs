//! Intrinsic information content and Sokal semantic similarity over `ISA` edges.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;

use super::OntologyGraph;
use crate::error::{Error, Result};

/// Neighbors at or below this similarity do not take part in borrowing.
pub const DEFAULT_MIN_SSM: f64 = 0.3;

/// Seco-style intrinsic IC: `1 - ln(|descendants| + 1) / ln(N)`.
#[derive(Debug, Clone)]
pub struct IntrinsicIc {
    values: Vec<f64>,
    descendants: Vec<usize>,
}

impl IntrinsicIc {
    pub fn compute(graph: &OntologyGraph) -> Result<Self> {
        let n = graph.len();
        if n < 2 {
            return Err(Error::Validation(format!(
                "intrinsic IC needs at least 2 concepts, graph has {n}"
            )));
        }
        let log_n = (n as f64).ln();
        let mut stamp = vec![usize::MAX; n];
        let mut stack = Vec::new();
        let mut descendants = Vec::with_capacity(n);
        for start in 0..n {
            let mut count = 0usize;
            stack.clear();
            stack.push(start);
            while let Some(v) = stack.pop() {
                for &c in graph.isa_children(v) {
                    if stamp[c] != start {
                        stamp[c] = start;
                        count += 1;
                        stack.push(c);
                    }
                }
            }
            descendants.push(count);
        }
        let values = descendants
            .iter()
            .map(|&d| (1.0 - ((d + 1) as f64).ln() / log_n).clamp(0.0, 1.0))
            .collect();
        Ok(IntrinsicIc {
            values,
            descendants,
        })
    }

    pub fn concept_count(&self) -> usize {
        self.values.len()
    }

    pub fn get(&self, idx: usize) -> f64 {
        self.values[idx]
    }

    pub fn of(&self, graph: &OntologyGraph, code: &str) -> Option<f64> {
        graph.index_of(code).map(|i| self.values[i])
    }

    pub fn descendant_count(&self, idx: usize) -> usize {
        self.descendants[idx]
    }
}

/// `ISA` ancestors of a concept (the concept included), kept in two orders:
/// by index for membership tests and by decreasing IC for the MICA search.
#[derive(Debug, Clone)]
pub struct Ancestry {
    node: usize,
    by_index: Vec<usize>,
    by_ic: Vec<usize>,
}

impl Ancestry {
    pub fn new(graph: &OntologyGraph, ic: &IntrinsicIc, node: usize) -> Self {
        let mut seen = vec![false; graph.len()];
        seen[node] = true;
        let mut stack = vec![node];
        let mut by_index = vec![node];
        while let Some(v) = stack.pop() {
            for &p in graph.isa_parents(v) {
                if !seen[p] {
                    seen[p] = true;
                    by_index.push(p);
                    stack.push(p);
                }
            }
        }
        by_index.sort_unstable();
        let mut by_ic = by_index.clone();
        by_ic.sort_by(|&a, &b| ic.get(b).total_cmp(&ic.get(a)).then(a.cmp(&b)));
        Ancestry {
            node,
            by_index,
            by_ic,
        }
    }

    pub fn node(&self) -> usize {
        self.node
    }

    pub fn contains(&self, idx: usize) -> bool {
        self.by_index.binary_search(&idx).is_ok()
    }

    pub fn members(&self) -> &[usize] {
        &self.by_index
    }

    /// Maximum-IC common ancestor: the first of our ancestors, in decreasing
    /// IC order, that is also an ancestor of `other`.
    pub fn mica(&self, other: &Ancestry) -> Option<usize> {
        let (walk, probe) = if self.by_ic.len() <= other.by_ic.len() {
            (self, other)
        } else {
            (other, self)
        };
        walk.by_ic.iter().copied().find(|&a| probe.contains(a))
    }
}

/// MICA by full intersection of the two ancestor sets.
pub fn mica_brute_force(
    graph: &OntologyGraph,
    ic: &IntrinsicIc,
    a: usize,
    b: usize,
) -> Option<usize> {
    let collect = |start: usize| {
        let mut set = std::collections::BTreeSet::new();
        let mut stack = vec![start];
        set.insert(start);
        while let Some(v) = stack.pop() {
            for &p in graph.isa_parents(v) {
                if set.insert(p) {
                    stack.push(p);
                }
            }
        }
        set
    };
    let ancestors_a = collect(a);
    let ancestors_b = collect(b);
    ancestors_a.intersection(&ancestors_b).copied().fold(
        None,
        |best: Option<usize>, c| match best {
            Some(cur) if ic.get(cur) >= ic.get(c) => Some(cur),
            _ => Some(c),
        },
    )
}

/// IC form of the Sokal–Sneath coefficient: `m / (2·ia + 2·ib − 3·m)`.
pub fn sokal_from_ic(ia: f64, ib: f64, m: f64) -> f64 {
    if m <= 0.0 {
        return 0.0;
    }
    let denom = 2.0 * ia + 2.0 * ib - 3.0 * m;
    if denom <= 0.0 {
        return 1.0;
    }
    (m / denom).clamp(0.0, 1.0)
}

impl OntologyGraph {
    /// Sokal similarity of two concepts; 1 for identical codes and 0 when no
    /// common ancestor exists.
    pub fn sokal(&self, ic: &IntrinsicIc, a: &str, b: &str) -> Result<f64> {
        let ia = self
            .index_of(a)
            .ok_or_else(|| Error::UnknownCode(a.to_string()))?;
        let ib = self
            .index_of(b)
            .ok_or_else(|| Error::UnknownCode(b.to_string()))?;
        if ia == ib {
            return Ok(1.0);
        }
        let anc_a = Ancestry::new(self, ic, ia);
        let anc_b = Ancestry::new(self, ic, ib);
        Ok(pair_similarity(ic, &anc_a, &anc_b))
    }
}

fn pair_similarity(ic: &IntrinsicIc, a: &Ancestry, b: &Ancestry) -> f64 {
    if a.node == b.node {
        return 1.0;
    }
    match a.mica(b) {
        Some(m) => sokal_from_ic(ic.get(a.node), ic.get(b.node), ic.get(m)),
        None => 0.0,
    }
}

/// Sparse symmetric PT × PT similarities strictly above a threshold.
/// Self-similarity is implicit (1) and never stored.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SimilarityMatrix {
    min_ssm: f64,
    neighbors: BTreeMap<String, BTreeMap<String, f64>>,
    excluded: Vec<String>,
}

impl SimilarityMatrix {
    /// Builds a matrix from explicit unordered pairs. Pairs at or below
    /// `min_ssm`, self pairs and out-of-range values are dropped.
    pub fn from_pairs<I, S>(min_ssm: f64, pairs: I) -> Self
    where
        I: IntoIterator<Item = (S, S, f64)>,
        S: Into<String>,
    {
        let mut m = SimilarityMatrix {
            min_ssm,
            ..Default::default()
        };
        for (a, b, v) in pairs {
            m.insert(a.into(), b.into(), v);
        }
        m
    }

    fn insert(&mut self, a: String, b: String, v: f64) {
        if a == b || !(v > self.min_ssm) || v > 1.0 {
            return;
        }
        self.neighbors
            .entry(a.clone())
            .or_default()
            .insert(b.clone(), v);
        self.neighbors.entry(b).or_default().insert(a, v);
    }

    pub fn min_ssm(&self) -> f64 {
        self.min_ssm
    }

    /// PTs that were requested but absent from the ontology.
    pub fn excluded(&self) -> &[String] {
        &self.excluded
    }

    pub fn get(&self, a: &str, b: &str) -> f64 {
        if a == b {
            return 1.0;
        }
        self.neighbors
            .get(a)
            .and_then(|row| row.get(b))
            .copied()
            .unwrap_or(0.0)
    }

    /// Stored neighbors of `pt` in code order.
    pub fn neighbors(&self, pt: &str) -> impl Iterator<Item = (&str, f64)> + '_ {
        self.neighbors
            .get(pt)
            .into_iter()
            .flat_map(|row| row.iter().map(|(k, &v)| (k.as_str(), v)))
    }

    /// Unordered pairs `(a, b, ssm)` with `a < b`, sorted.
    pub fn pairs(&self) -> impl Iterator<Item = (&str, &str, f64)> + '_ {
        self.neighbors.iter().flat_map(|(a, row)| {
            row.iter()
                .filter(move |(b, _)| a.as_str() < b.as_str())
                .map(move |(b, &v)| (a.as_str(), b.as_str(), v))
        })
    }

    pub fn pair_count(&self) -> usize {
        self.pairs().count()
    }

    pub fn is_empty(&self) -> bool {
        self.neighbors.is_empty()
    }

    /// `pt_a,pt_b,ssm` with six decimals.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("pt_a,pt_b,ssm\n");
        for (a, b, v) in self.pairs() {
            writeln!(out, "{a},{b},{v:.6}").unwrap();
        }
        out
    }
}

/// All PT pairs with similarity strictly above `min_ssm`. Codes missing from
/// the ontology are excluded (similarity 0 to everything) and logged.
pub fn build_similarity_matrix<S: AsRef<str>>(
    graph: &OntologyGraph,
    ic: &IntrinsicIc,
    pt_codes: &[S],
    min_ssm: f64,
) -> Result<SimilarityMatrix> {
    if !(0.0..1.0).contains(&min_ssm) {
        return Err(Error::Validation(format!(
            "minSSM must lie in [0, 1), got {min_ssm}"
        )));
    }
    let mut codes: Vec<&str> = pt_codes.iter().map(AsRef::as_ref).collect();
    codes.sort_unstable();
    codes.dedup();

    let mut excluded = Vec::new();
    let mut known = Vec::with_capacity(codes.len());
    for code in codes {
        match graph.index_of(code) {
            Some(idx) => known.push((code, idx)),
            None => {
                log::warn!("PT {code} not in ontology; excluded from similarity");
                excluded.push(code.to_string());
            }
        }
    }
    let ancestry: Vec<Ancestry> = known
        .par_iter()
        .map(|&(_, idx)| Ancestry::new(graph, ic, idx))
        .collect();

    let pairs: Vec<(usize, usize, f64)> = (0..known.len())
        .into_par_iter()
        .flat_map_iter(|i| {
            let ancestry = &ancestry;
            (i + 1..ancestry.len()).filter_map(move |j| {
                let v = pair_similarity(ic, &ancestry[i], &ancestry[j]);
                (v > min_ssm).then_some((i, j, v))
            })
        })
        .collect();

    let mut matrix = SimilarityMatrix::from_pairs(
        min_ssm,
        pairs
            .into_iter()
            .map(|(i, j, v)| (known[i].0, known[j].0, v)),
    );
    matrix.excluded = excluded;
    Ok(matrix)
}
