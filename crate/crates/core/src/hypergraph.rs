//! Syntactic hypergraphs: one hyperedge per word set of a syntactic subtree.
//!
//! Node `i` of the hypergraph is token `i + 1` of the source tree; hyperedges
//! store 1-based token indices so they read the same as the tree.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::Serialize;

use crate::deptree::DependencyTree;
use crate::error::{Error, Result};
use crate::numcore::Matrix;

/// A set of token indices, kept sorted.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(transparent)]
pub struct Hyperedge(Vec<usize>);

impl Hyperedge {
    pub fn new(nodes: impl IntoIterator<Item = usize>) -> Self {
        let set: BTreeSet<usize> = nodes.into_iter().collect();
        Hyperedge(set.into_iter().collect())
    }

    pub fn nodes(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, token: usize) -> bool {
        self.0.binary_search(&token).is_ok()
    }
}

/// Size first, then lexicographic on the sorted indices.
impl Ord for Hyperedge {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0
            .len()
            .cmp(&other.0.len())
            .then_with(|| self.0.cmp(&other.0))
    }
}

impl PartialOrd for Hyperedge {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

/// All descendants of `node`, including `node`.
pub fn get_subtree(tree: &DependencyTree, node: usize) -> Result<BTreeSet<usize>> {
    let children = tree.children(node)?;
    let mut out = BTreeSet::from([node]);
    for &c in children {
        out.extend(get_subtree(tree, c)?);
    }
    Ok(out)
}

/// Subtree node sets: leaf singletons, each branch node joined with each
/// child's subtree, and each branch node's own subtree. Duplicates collapse.
pub fn subtree_gen(tree: &DependencyTree) -> BTreeSet<BTreeSet<usize>> {
    let mut found = BTreeSet::new();
    for v in 1..=tree.len() {
        let children = tree.children(v).expect("index in range");
        if children.is_empty() {
            found.insert(BTreeSet::from([v]));
            continue;
        }
        for &c in children {
            let mut s = get_subtree(tree, c).expect("child in range");
            s.insert(v);
            found.insert(s);
        }
        found.insert(get_subtree(tree, v).expect("index in range"));
    }
    found
}

/// Incidence structure of a hypergraph over `n_nodes` words.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntacticHypergraph {
    n_nodes: usize,
    edges: Vec<Hyperedge>,
    incidence: Matrix,
    edge_degree: Vec<usize>,
    node_degree: Vec<usize>,
    gather: Matrix,
    scatter: Matrix,
}

impl SyntacticHypergraph {
    /// Hypergraph with the given edges in the given order.
    ///
    /// Every edge must be nonempty with indices in `1..=n_nodes`, edges must be
    /// distinct, and every node must lie in at least one edge.
    pub fn from_edges(n_nodes: usize, edges: Vec<Hyperedge>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for e in &edges {
            if e.is_empty() {
                return Err(Error::Data("empty hyperedge".into()));
            }
            if let Some(&bad) = e.nodes().iter().find(|&&t| t == 0 || t > n_nodes) {
                return Err(Error::InvalidNode {
                    index: bad,
                    len: n_nodes,
                });
            }
            if !seen.insert(e.nodes().to_vec()) {
                return Err(Error::Data(format!("duplicate hyperedge {:?}", e.nodes())));
            }
        }
        let mut incidence = Matrix::zeros(n_nodes, edges.len());
        for (k, e) in edges.iter().enumerate() {
            for &t in e.nodes() {
                incidence[(t - 1, k)] = 1.0;
            }
        }
        let edge_degree: Vec<usize> = edges.iter().map(Hyperedge::len).collect();
        let mut node_degree = vec![0usize; n_nodes];
        for e in &edges {
            for &t in e.nodes() {
                node_degree[t - 1] += 1;
            }
        }
        if let Some(i) = node_degree.iter().position(|&d| d == 0) {
            return Err(Error::Data(format!("node {} belongs to no hyperedge", i + 1)));
        }

        let mut gather = incidence.transpose();
        for (k, &d) in edge_degree.iter().enumerate() {
            let inv = 1.0 / d as f64;
            gather.row_mut(k).iter_mut().for_each(|x| *x *= inv);
        }
        let mut scatter = incidence.clone();
        for (i, &d) in node_degree.iter().enumerate() {
            let inv = 1.0 / d as f64;
            scatter.row_mut(i).iter_mut().for_each(|x| *x *= inv);
        }
        Ok(SyntacticHypergraph {
            n_nodes,
            edges,
            incidence,
            edge_degree,
            node_degree,
            gather,
            scatter,
        })
    }

    /// One singleton edge per word: the word-level ablation.
    pub fn identity(n_nodes: usize) -> Self {
        let edges = (1..=n_nodes).map(|i| Hyperedge(vec![i])).collect();
        Self::from_edges(n_nodes, edges).expect("identity hypergraph is valid")
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[Hyperedge] {
        &self.edges
    }

    /// `N_v × N_e` 0/1 matrix.
    pub fn incidence(&self) -> &Matrix {
        &self.incidence
    }

    pub fn edge_degree(&self) -> &[usize] {
        &self.edge_degree
    }

    pub fn node_degree(&self) -> &[usize] {
        &self.node_degree
    }

    /// `D_e⁻¹ Hᵀ`: row-normalised gathering operator (`N_e × N_v`).
    pub fn gather_operator(&self) -> &Matrix {
        &self.gather
    }

    /// `D_v⁻¹ H`: row-normalised scattering operator (`N_v × N_e`).
    pub fn scatter_operator(&self) -> &Matrix {
        &self.scatter
    }

    pub fn export(&self, tree: Option<&DependencyTree>) -> HypergraphExport {
        HypergraphExport {
            n_nodes: self.n_nodes,
            words: tree.map(|t| t.forms().into_iter().map(String::from).collect()),
            edges: self.edges.iter().map(|e| e.nodes().to_vec()).collect(),
            h: self
                .incidence
                .to_rows()
                .into_iter()
                .map(|r| r.into_iter().map(|v| v as u8).collect())
                .collect(),
            edge_degree: self.edge_degree.clone(),
            node_degree: self.node_degree.clone(),
        }
    }

    /// Incidence as CSV: a header of edge labels, then one row per word.
    pub fn incidence_csv(&self, tree: Option<&DependencyTree>) -> String {
        let mut s = String::from("node");
        for e in &self.edges {
            let label: Vec<String> = e.nodes().iter().map(ToString::to_string).collect();
            let _ = write!(s, ",{{{}}}", label.join(" "));
        }
        s.push('\n');
        for i in 0..self.n_nodes {
            match tree {
                Some(t) => s.push_str(&t.tokens()[i].form.replace(',', "\\,")),
                None => s.push_str(&(i + 1).to_string()),
            }
            for k in 0..self.edges.len() {
                let _ = write!(s, ",{}", self.incidence[(i, k)] as u8);
            }
            s.push('\n');
        }
        s
    }
}

/// JSON form written by the `build-hypergraph` command.
#[derive(Clone, Debug, Serialize)]
pub struct HypergraphExport {
    pub n_nodes: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub words: Option<Vec<String>>,
    pub edges: Vec<Vec<usize>>,
    #[serde(rename = "H")]
    pub h: Vec<Vec<u8>>,
    pub edge_degree: Vec<usize>,
    pub node_degree: Vec<usize>,
}

/// Syntactic hypergraph of `tree` with edges in canonical order.
pub fn build_hypergraph(tree: &DependencyTree) -> SyntacticHypergraph {
    let mut edges: Vec<Hyperedge> = subtree_gen(tree)
        .into_iter()
        .map(|s| Hyperedge(s.into_iter().collect()))
        .collect();
    edges.sort();
    SyntacticHypergraph::from_edges(tree.len(), edges).expect("subtrees cover every token")
}
