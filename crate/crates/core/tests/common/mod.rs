#![allow(dead_code)]

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::Rng;

use scan_core::DependencyTree;

/// Uniformly shuffled labels with each node attached to an earlier one.
pub fn random_heads<R: Rng>(n: usize, rng: &mut R) -> Vec<usize> {
    let mut order: Vec<usize> = (1..=n).collect();
    order.shuffle(rng);
    let mut heads = vec![0; n];
    for k in 1..n {
        heads[order[k] - 1] = order[rng.gen_range(0..k)];
    }
    heads
}

pub fn random_tree<R: Rng>(n: usize, rng: &mut R) -> DependencyTree {
    let heads = random_heads(n, rng);
    let forms: Vec<String> = (1..=n).map(|i| format!("w{i}")).collect();
    DependencyTree::from_heads(&forms, &heads).expect("generated heads form a tree")
}

/// Descendant sets by walking every node's head chain, so no traversal code
/// is shared with the library.
pub fn descendants(heads: &[usize]) -> Vec<BTreeSet<usize>> {
    let n = heads.len();
    let mut desc = vec![BTreeSet::new(); n + 1];
    for u in 1..=n {
        let mut v = u;
        let mut steps = 0;
        while v != 0 {
            desc[v].insert(u);
            v = heads[v - 1];
            steps += 1;
            assert!(steps <= n, "cycle in heads");
        }
    }
    desc
}

/// Every node's full subtree plus every branch node joined with the full
/// subtree of one child.
pub fn subtree_oracle(heads: &[usize]) -> BTreeSet<BTreeSet<usize>> {
    let desc = descendants(heads);
    let mut out: BTreeSet<BTreeSet<usize>> = (1..=heads.len()).map(|v| desc[v].clone()).collect();
    for (i, &h) in heads.iter().enumerate() {
        if h != 0 {
            let mut s = desc[i + 1].clone();
            s.insert(h);
            out.insert(s);
        }
    }
    out
}

pub fn heads_of(tree: &DependencyTree) -> Vec<usize> {
    tree.tokens().iter().map(|t| t.head).collect()
}
