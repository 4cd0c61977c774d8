mod common;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use scan_core::deptree::parse_conllu;
use scan_core::hypergraph::{build_hypergraph, subtree_gen};
use scan_core::otalign::{cost_matrix, ipot, CostMatrix};
use scan_core::Matrix;

use common::{descendants, heads_of, random_tree, subtree_oracle};

fn tree_strategy() -> impl Strategy<Value = scan_core::DependencyTree> {
    (1usize..=12, any::<u64>()).prop_map(|(n, seed)| random_tree(n, &mut ChaCha8Rng::seed_from_u64(seed)))
}

proptest! {
    #[test]
    fn subtrees_match_head_chain_oracle(tree in tree_strategy()) {
        prop_assert_eq!(subtree_gen(&tree), subtree_oracle(&heads_of(&tree)));
    }

    #[test]
    fn conllu_round_trip(tree in tree_strategy()) {
        let back = parse_conllu(&tree.to_conllu()).unwrap();
        prop_assert_eq!(back.len(), 1);
        prop_assert_eq!(&back[0], &tree);
    }

    #[test]
    fn incidence_degrees_and_connectivity(tree in tree_strategy()) {
        let h = build_hypergraph(&tree);
        let heads = heads_of(&tree);
        let m = h.incidence();
        prop_assert_eq!(m.shape(), (tree.len(), h.n_edges()));
        for (k, e) in h.edges().iter().enumerate() {
            let col: f64 = (0..tree.len()).map(|i| m[(i, k)]).sum();
            prop_assert_eq!(col, h.edge_degree()[k] as f64);
            prop_assert_eq!(e.len(), h.edge_degree()[k]);
            // connected: exactly one member has its head outside the edge
            let tops = e.nodes().iter().filter(|&&v| !e.contains(heads[v - 1])).count();
            prop_assert_eq!(tops, 1);
        }
        for i in 0..tree.len() {
            let row: f64 = m.row(i).iter().sum();
            prop_assert_eq!(row, h.node_degree()[i] as f64);
            prop_assert!(h.node_degree()[i] >= 1);
        }
        // canonical order: by size, then lexicographic
        for w in h.edges().windows(2) {
            let key = |e: &scan_core::Hyperedge| (e.len(), e.nodes().to_vec());
            prop_assert!(key(&w[0]) < key(&w[1]));
        }
    }

    #[test]
    fn ipot_column_marginal_is_exact(seed in any::<u64>(), ns in 1usize..8, nf in 1usize..9, iters in 1usize..15) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Matrix::randn(ns, 4, 1.0, &mut rng);
        let f = Matrix::randn(nf, 4, 1.0, &mut rng);
        let id = Matrix::identity(4);
        let plan = ipot(&cost_matrix(&x, &f, &id, &id).unwrap(), iters).unwrap();
        prop_assert!(plan.col_deviation() <= 1e-9);
        prop_assert!(plan.matrix().data().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn ipot_is_row_permutation_equivariant(seed in any::<u64>(), ns in 2usize..7, nf in 1usize..7) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = Matrix::from_vec(ns, nf, (0..ns * nf).map(|_| rand::Rng::gen_range(&mut rng, 0.0..2.0)).collect()).unwrap();
        let perm: Vec<usize> = (0..ns).rev().collect();
        let a = ipot(&CostMatrix::new(c.clone()).unwrap(), 10).unwrap();
        let b = ipot(&CostMatrix::new(c.select_rows(&perm)).unwrap(), 10).unwrap();
        prop_assert!(a.matrix().select_rows(&perm).max_abs_diff(b.matrix()) < 1e-12);
    }
}

#[test]
fn oracle_agrees_with_hand_cases() {
    // star with three leaves: 3 singletons, 3 pairs, the whole tree
    let star = subtree_oracle(&[0, 1, 1, 1]);
    assert_eq!(star.len(), 7);
    // chain 1 <- 2 <- 3: {3}, {2,3}, {1,2,3}
    let chain = subtree_oracle(&[0, 1, 2]);
    assert_eq!(chain.len(), 3);
    assert_eq!(descendants(&[0, 1, 2])[2].len(), 2);
}

#[test]
fn ipot_converges_on_two_by_two() {
    let c = CostMatrix::new(Matrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap()).unwrap();
    let p = ipot(&c, 200).unwrap();
    let m = p.matrix();
    assert!(m[(0, 1)] + m[(1, 0)] <= 1e-3);
    assert!((m[(0, 0)] - 0.5).abs() < 1e-3 && (m[(1, 1)] - 0.5).abs() < 1e-3);
}
