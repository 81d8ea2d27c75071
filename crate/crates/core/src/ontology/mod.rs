//! Term ontology: a DAG of coded concepts carrying two edge families.
//!
//! `ISA` edges form the merged similarity DAG used for intrinsic information
//! content and semantic similarity. `MEDDRA` edges carry the PT → HLT → HLGT → SOC
//! hierarchy and are used only for grouping.
//!
//! The on-disk format is tab separated, one record per line:
//!
//! ```text
//! # comment
//! N    <code>    <level>    <label>
//! E    <child_code>    <parent_code>    <ISA|MEDDRA>
//! ```

mod similarity;

pub use similarity::{
    build_similarity_matrix, mica_brute_force, sokal_from_ic, Ancestry, IntrinsicIc,
    SimilarityMatrix, DEFAULT_MIN_SSM,
};

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Level {
    #[serde(rename = "PT")]
    Pt,
    #[serde(rename = "HLT")]
    Hlt,
    #[serde(rename = "HLGT")]
    Hlgt,
    #[serde(rename = "SOC")]
    Soc,
    #[serde(rename = "OTHER")]
    Other,
}

impl Level {
    pub fn as_str(self) -> &'static str {
        match self {
            Level::Pt => "PT",
            Level::Hlt => "HLT",
            Level::Hlgt => "HLGT",
            Level::Soc => "SOC",
            Level::Other => "OTHER",
        }
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Level {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "PT" => Ok(Level::Pt),
            "HLT" => Ok(Level::Hlt),
            "HLGT" => Ok(Level::Hlgt),
            "SOC" => Ok(Level::Soc),
            "OTHER" => Ok(Level::Other),
            other => Err(format!("unknown level `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EdgeKind {
    IsA,
    Meddra,
}

impl EdgeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EdgeKind::IsA => "ISA",
            EdgeKind::Meddra => "MEDDRA",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Concept {
    pub code: String,
    pub label: String,
    pub level: Level,
}

impl Concept {
    pub fn new(code: impl Into<String>, level: Level, label: impl Into<String>) -> Self {
        Concept {
            code: code.into(),
            label: label.into(),
            level,
        }
    }
}

/// Directed `child → parent` link.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Edge {
    pub child: String,
    pub parent: String,
    pub kind: EdgeKind,
}

impl Edge {
    pub fn isa(child: impl Into<String>, parent: impl Into<String>) -> Self {
        Edge {
            child: child.into(),
            parent: parent.into(),
            kind: EdgeKind::IsA,
        }
    }

    pub fn meddra(child: impl Into<String>, parent: impl Into<String>) -> Self {
        Edge {
            child: child.into(),
            parent: parent.into(),
            kind: EdgeKind::Meddra,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct GraphSummary {
    pub concepts: usize,
    pub isa_edges: usize,
    pub meddra_edges: usize,
    pub roots: usize,
    pub leaves: usize,
    pub preferred_terms: usize,
}

/// Validated, immutable ontology.
#[derive(Debug, Clone)]
pub struct OntologyGraph {
    concepts: Vec<Concept>,
    index: HashMap<String, usize>,
    isa_parents: Vec<Vec<usize>>,
    isa_children: Vec<Vec<usize>>,
    meddra_parents: Vec<Vec<usize>>,
    meddra_children: Vec<Vec<usize>>,
}

impl OntologyGraph {
    /// Builds and validates a graph. Duplicate edges are collapsed.
    pub fn from_parts(concepts: Vec<Concept>, edges: &[Edge]) -> Result<Self> {
        let mut index = HashMap::with_capacity(concepts.len());
        for (i, concept) in concepts.iter().enumerate() {
            if index.insert(concept.code.clone(), i).is_some() {
                return Err(Error::DuplicateCode(concept.code.clone()));
            }
        }
        let n = concepts.len();
        let mut isa_parents = vec![Vec::new(); n];
        let mut meddra_parents = vec![Vec::new(); n];
        for edge in edges {
            let child = *index
                .get(&edge.child)
                .ok_or_else(|| Error::UnknownCode(edge.child.clone()))?;
            let parent = *index
                .get(&edge.parent)
                .ok_or_else(|| Error::UnknownCode(edge.parent.clone()))?;
            let parents = match edge.kind {
                EdgeKind::IsA => &mut isa_parents[child],
                EdgeKind::Meddra => &mut meddra_parents[child],
            };
            parents.push(parent);
        }
        for list in isa_parents.iter_mut().chain(meddra_parents.iter_mut()) {
            list.sort_unstable();
            list.dedup();
        }
        let isa_children = invert(&isa_parents);
        let meddra_children = invert(&meddra_parents);

        let graph = OntologyGraph {
            concepts,
            index,
            isa_parents,
            isa_children,
            meddra_parents,
            meddra_children,
        };
        graph.check_acyclic(&graph.isa_parents)?;
        graph.check_acyclic(&graph.meddra_parents)?;
        Ok(graph)
    }

    pub fn parse(text: &str, source_name: &str) -> Result<Self> {
        let mut concepts = Vec::new();
        let mut edges = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let lineno = lineno + 1;
            let line = raw.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.splitn(4, '\t').collect();
            match fields.as_slice() {
                ["N", code, level, label] => {
                    let level = level
                        .parse::<Level>()
                        .map_err(|e| Error::parse(source_name, lineno, e))?;
                    concepts.push(Concept::new(*code, level, *label));
                }
                ["N", code, level] => {
                    let level = level
                        .parse::<Level>()
                        .map_err(|e| Error::parse(source_name, lineno, e))?;
                    concepts.push(Concept::new(*code, level, ""));
                }
                ["E", child, parent, kind] => {
                    let kind = match *kind {
                        "ISA" => EdgeKind::IsA,
                        "MEDDRA" => EdgeKind::Meddra,
                        other => {
                            return Err(Error::parse(
                                source_name,
                                lineno,
                                format!("unknown edge kind `{other}`"),
                            ))
                        }
                    };
                    edges.push(Edge {
                        child: child.to_string(),
                        parent: parent.to_string(),
                        kind,
                    });
                }
                _ => {
                    return Err(Error::parse(
                        source_name,
                        lineno,
                        "expected `N<TAB>code<TAB>level<TAB>label` or `E<TAB>child<TAB>parent<TAB>kind`",
                    ))
                }
            }
        }
        Self::from_parts(concepts, &edges)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let graph = Self::parse(&text, &path.display().to_string())?;
        let summary = graph.summary();
        log::info!(
            "loaded ontology {}: {} concepts, {} ISA edges, {} MEDDRA edges",
            path.display(),
            summary.concepts,
            summary.isa_edges,
            summary.meddra_edges
        );
        Ok(graph)
    }

    /// Serializes back to the tab-separated file format, nodes first.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for c in &self.concepts {
            out.push_str(&format!("N\t{}\t{}\t{}\n", c.code, c.level, c.label));
        }
        for (kind, parents) in [
            (EdgeKind::IsA, &self.isa_parents),
            (EdgeKind::Meddra, &self.meddra_parents),
        ] {
            for (child, ps) in parents.iter().enumerate() {
                for &p in ps {
                    out.push_str(&format!(
                        "E\t{}\t{}\t{}\n",
                        self.concepts[child].code,
                        self.concepts[p].code,
                        kind.as_str()
                    ));
                }
            }
        }
        out
    }

    fn check_acyclic(&self, parents: &[Vec<usize>]) -> Result<()> {
        #[derive(Clone, Copy, PartialEq)]
        enum Mark {
            New,
            Active,
            Done,
        }
        let n = self.concepts.len();
        let mut mark = vec![Mark::New; n];
        for start in 0..n {
            if mark[start] != Mark::New {
                continue;
            }
            // (node, next parent position)
            let mut stack = vec![(start, 0usize)];
            mark[start] = Mark::Active;
            while let Some(&mut (node, ref mut pos)) = stack.last_mut() {
                if let Some(&parent) = parents[node].get(*pos) {
                    *pos += 1;
                    match mark[parent] {
                        Mark::New => {
                            mark[parent] = Mark::Active;
                            stack.push((parent, 0));
                        }
                        Mark::Active => {
                            let from = stack.iter().position(|&(v, _)| v == parent).unwrap();
                            let mut path: Vec<String> = stack[from..]
                                .iter()
                                .map(|&(v, _)| self.concepts[v].code.clone())
                                .collect();
                            path.push(self.concepts[parent].code.clone());
                            return Err(Error::Cycle { path });
                        }
                        Mark::Done => {}
                    }
                } else {
                    mark[node] = Mark::Done;
                    stack.pop();
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.concepts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.concepts.is_empty()
    }

    pub fn concepts(&self) -> &[Concept] {
        &self.concepts
    }

    pub fn index_of(&self, code: &str) -> Option<usize> {
        self.index.get(code).copied()
    }

    pub fn concept(&self, code: &str) -> Option<&Concept> {
        self.index_of(code).map(|i| &self.concepts[i])
    }

    pub fn concept_at(&self, idx: usize) -> &Concept {
        &self.concepts[idx]
    }

    pub fn contains(&self, code: &str) -> bool {
        self.index.contains_key(code)
    }

    pub(crate) fn isa_parents(&self, idx: usize) -> &[usize] {
        &self.isa_parents[idx]
    }

    pub(crate) fn isa_children(&self, idx: usize) -> &[usize] {
        &self.isa_children[idx]
    }

    /// Concepts with no `ISA` parent.
    pub fn roots(&self) -> Vec<&str> {
        (0..self.len())
            .filter(|&i| self.isa_parents[i].is_empty())
            .map(|i| self.concepts[i].code.as_str())
            .collect()
    }

    /// Concepts with no `ISA` child.
    pub fn leaves(&self) -> Vec<&str> {
        (0..self.len())
            .filter(|&i| self.isa_children[i].is_empty())
            .map(|i| self.concepts[i].code.as_str())
            .collect()
    }

    /// PT-level codes in sorted order.
    pub fn preferred_terms(&self) -> Vec<&str> {
        let mut pts: Vec<&str> = self
            .concepts
            .iter()
            .filter(|c| c.level == Level::Pt)
            .map(|c| c.code.as_str())
            .collect();
        pts.sort_unstable();
        pts
    }

    pub fn summary(&self) -> GraphSummary {
        GraphSummary {
            concepts: self.len(),
            isa_edges: self.isa_parents.iter().map(Vec::len).sum(),
            meddra_edges: self.meddra_parents.iter().map(Vec::len).sum(),
            roots: self.roots().len(),
            leaves: self.leaves().len(),
            preferred_terms: self
                .concepts
                .iter()
                .filter(|c| c.level == Level::Pt)
                .count(),
        }
    }

    fn pt_index(&self, pt: &str) -> Result<usize> {
        let idx = self
            .index_of(pt)
            .ok_or_else(|| Error::UnknownCode(pt.to_string()))?;
        if self.concepts[idx].level != Level::Pt {
            return Err(Error::NotPreferredTerm(pt.to_string()));
        }
        Ok(idx)
    }

    /// All concepts at `level` reachable from `start` through MEDDRA edges.
    fn meddra_ancestors_at(&self, start: usize, level: Level) -> BTreeSet<usize> {
        let mut seen = vec![false; self.len()];
        let mut stack = vec![start];
        let mut found = BTreeSet::new();
        while let Some(v) = stack.pop() {
            for &p in &self.meddra_parents[v] {
                if !seen[p] {
                    seen[p] = true;
                    if self.concepts[p].level == level {
                        found.insert(p);
                    }
                    stack.push(p);
                }
            }
        }
        found
    }

    /// PT-level MEDDRA descendants of the given group concepts.
    fn meddra_pt_members(&self, groups: &BTreeSet<usize>) -> BTreeSet<String> {
        let mut seen = vec![false; self.len()];
        let mut stack: Vec<usize> = groups.iter().copied().collect();
        let mut members = BTreeSet::new();
        while let Some(v) = stack.pop() {
            for &c in &self.meddra_children[v] {
                if !seen[c] {
                    seen[c] = true;
                    if self.concepts[c].level == Level::Pt {
                        members.insert(self.concepts[c].code.clone());
                    }
                    stack.push(c);
                }
            }
        }
        members
    }

    /// HLGT codes the PT belongs to.
    pub fn hlgt_of(&self, pt: &str) -> Result<BTreeSet<String>> {
        let idx = self.pt_index(pt)?;
        Ok(self
            .meddra_ancestors_at(idx, Level::Hlgt)
            .into_iter()
            .map(|i| self.concepts[i].code.clone())
            .collect())
    }

    /// HLT codes the PT belongs to.
    pub fn hlt_of(&self, pt: &str) -> Result<BTreeSet<String>> {
        let idx = self.pt_index(pt)?;
        Ok(self
            .meddra_ancestors_at(idx, Level::Hlt)
            .into_iter()
            .map(|i| self.concepts[i].code.clone())
            .collect())
    }

    /// PTs sharing at least one HLGT with `pt`, excluding `pt` itself.
    /// A PT without any HLGT yields an empty set and a logged warning.
    pub fn hlgt_neighbors(&self, pt: &str) -> Result<BTreeSet<String>> {
        self.group_neighbors(pt, Level::Hlgt)
    }

    /// PTs sharing at least one HLT with `pt`, excluding `pt` itself.
    pub fn hlt_neighbors(&self, pt: &str) -> Result<BTreeSet<String>> {
        self.group_neighbors(pt, Level::Hlt)
    }

    fn group_neighbors(&self, pt: &str, level: Level) -> Result<BTreeSet<String>> {
        let idx = self.pt_index(pt)?;
        let groups = self.meddra_ancestors_at(idx, level);
        if groups.is_empty() {
            log::warn!("PT {pt} has no {level} ancestor; no group neighbors");
            return Ok(BTreeSet::new());
        }
        let mut members = self.meddra_pt_members(&groups);
        members.remove(pt);
        Ok(members)
    }
}

fn invert(parents: &[Vec<usize>]) -> Vec<Vec<usize>> {
    let mut children = vec![Vec::new(); parents.len()];
    for (child, ps) in parents.iter().enumerate() {
        for &p in ps {
            children[p].push(child);
        }
    }
    children
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    /// Root R with HLGT G1 containing HLTs T1 {P1, P2, P3} and T2 {P4};
    /// G2 holds T3 {P5} and P3 is also filed under T3. ISA mirrors MEDDRA.
    pub fn grouped() -> OntologyGraph {
        let concepts = vec![
            Concept::new("R", Level::Soc, "root"),
            Concept::new("G1", Level::Hlgt, "group 1"),
            Concept::new("G2", Level::Hlgt, "group 2"),
            Concept::new("T1", Level::Hlt, "term 1"),
            Concept::new("T2", Level::Hlt, "term 2"),
            Concept::new("T3", Level::Hlt, "term 3"),
            Concept::new("P1", Level::Pt, "pt 1"),
            Concept::new("P2", Level::Pt, "pt 2"),
            Concept::new("P3", Level::Pt, "pt 3"),
            Concept::new("P4", Level::Pt, "pt 4"),
            Concept::new("P5", Level::Pt, "pt 5"),
            Concept::new("P6", Level::Pt, "orphan"),
        ];
        let links = [
            ("G1", "R"),
            ("G2", "R"),
            ("T1", "G1"),
            ("T2", "G1"),
            ("T3", "G2"),
            ("P1", "T1"),
            ("P2", "T1"),
            ("P3", "T1"),
            ("P4", "T2"),
            ("P5", "T3"),
            ("P3", "T3"),
        ];
        let mut edges: Vec<Edge> = links.iter().map(|(c, p)| Edge::meddra(*c, *p)).collect();
        edges.extend(links.iter().map(|(c, p)| Edge::isa(*c, *p)));
        edges.push(Edge::isa("P6", "R"));
        OntologyGraph::from_parts(concepts, &edges).unwrap()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_dag_has_one_root_two_leaves() {
        let text =
            "# tiny\nN\tR\tOTHER\troot\nN\tA\tPT\ta\nN\tB\tPT\tb\nE\tA\tR\tISA\nE\tB\tR\tISA\n";
        let g = OntologyGraph::parse(text, "tiny").unwrap();
        assert_eq!(g.roots(), vec!["R"]);
        assert_eq!(g.leaves().len(), 2);
    }

    #[test]
    fn two_cycle_is_rejected_with_both_codes() {
        let text = "N\tA\tPT\ta\nN\tB\tPT\tb\nE\tA\tB\tISA\nE\tB\tA\tISA\n";
        match OntologyGraph::parse(text, "cyc") {
            Err(Error::Cycle { path }) => {
                assert!(path.contains(&"A".to_string()));
                assert!(path.contains(&"B".to_string()));
                assert_eq!(path.first(), path.last());
            }
            other => panic!("expected cycle error, got {other:?}"),
        }
    }

    #[test]
    fn meddra_cycle_is_rejected_too() {
        let text = "N\tA\tHLT\ta\nN\tB\tHLGT\tb\nE\tA\tB\tMEDDRA\nE\tB\tA\tMEDDRA\n";
        assert!(matches!(
            OntologyGraph::parse(text, "cyc"),
            Err(Error::Cycle { .. })
        ));
    }

    #[test]
    fn dangling_code_is_rejected() {
        let text = "N\tA\tPT\ta\nE\tA\tZZ\tISA\n";
        match OntologyGraph::parse(text, "dangling") {
            Err(Error::UnknownCode(code)) => assert_eq!(code, "ZZ"),
            other => panic!("expected unknown code, got {other:?}"),
        }
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let text = "N\tA\tPT\ta\nX\tbad\n";
        match OntologyGraph::parse(text, "bad") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
        assert!(OntologyGraph::parse("N\tA\tXYZ\ta\n", "lvl").is_err());
    }

    #[test]
    fn six_node_two_level_tree() {
        let text =
            "N\tR\tSOC\tr\nN\tH\tHLT\th\nN\tP1\tPT\t1\nN\tP2\tPT\t2\nN\tP3\tPT\t3\nN\tP4\tPT\t4\n\
                    E\tH\tR\tISA\nE\tP1\tH\tISA\nE\tP2\tH\tISA\nE\tP3\tR\tISA\nE\tP4\tR\tISA\n";
        let g = OntologyGraph::parse(text, "six").unwrap();
        assert_eq!(g.len(), 6);
        assert_eq!(g.leaves().len(), 4);
        assert_eq!(g.roots(), vec!["R"]);
    }

    #[test]
    fn text_round_trip() {
        let g = fixtures::grouped();
        let again = OntologyGraph::parse(&g.to_text(), "rt").unwrap();
        assert_eq!(again.to_text(), g.to_text());
        assert_eq!(again.summary(), g.summary());
    }

    #[test]
    fn hlgt_neighbors_cover_fixture_cases() {
        let g = fixtures::grouped();
        // P5 is alone in T3 but shares G2 with P3.
        assert_eq!(
            g.hlgt_neighbors("P5").unwrap(),
            BTreeSet::from(["P3".to_string()])
        );
        // P4 under G1 sees P1, P2, P3.
        assert_eq!(
            g.hlgt_neighbors("P4").unwrap(),
            ["P1", "P2", "P3"].iter().map(|s| s.to_string()).collect()
        );
        // P3 is under both HLGTs: union.
        assert_eq!(
            g.hlgt_neighbors("P3").unwrap(),
            ["P1", "P2", "P4", "P5"]
                .iter()
                .map(|s| s.to_string())
                .collect()
        );
        // No MEDDRA parent at all.
        assert!(g.hlgt_neighbors("P6").unwrap().is_empty());
        assert!(matches!(
            g.hlgt_neighbors("T1"),
            Err(Error::NotPreferredTerm(_))
        ));
        assert!(matches!(
            g.hlgt_neighbors("nope"),
            Err(Error::UnknownCode(_))
        ));
    }

    #[test]
    fn hlt_lookup() {
        let g = fixtures::grouped();
        assert_eq!(g.hlt_of("P4").unwrap(), BTreeSet::from(["T2".to_string()]));
        assert_eq!(
            g.hlt_of("P3").unwrap(),
            BTreeSet::from(["T1".to_string(), "T3".to_string()])
        );
        assert!(g.hlt_of("P6").unwrap().is_empty());
        assert!(g.hlt_neighbors("P4").unwrap().is_empty());
        assert_eq!(
            g.hlt_neighbors("P1").unwrap(),
            ["P2", "P3"].iter().map(|s| s.to_string()).collect()
        );
    }
}
