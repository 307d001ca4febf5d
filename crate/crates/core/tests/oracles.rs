//! Library numerics against the independent oracles in `common`.

mod common;

use common::*;
use hcpi::bench::auc;
use hcpi::cluster::{ward_cluster, DendrogramTree, Merge};
use hcpi::conservation::{conserve, indicator, Branch, ConservationConfig};
use hcpi::cpi::ImportanceTable;
use hcpi::inference::{hierarchical_adjust, infer, t_cdf, t_test_one_sided};
use hcpi::learners::{fit_logistic_fixed, fit_ridge_fixed, LearnerKind, LossKind, MlpModel};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn tree_from(p: usize, merges: &[(usize, usize, f64)]) -> DendrogramTree {
    let m: Vec<Merge> = merges.iter().map(|&(a, b, height)| Merge { a, b, height }).collect();
    DendrogramTree::from_merges(p, &m).unwrap()
}

fn random_table(tree: &DendrogramTree, folds: usize, rng: &mut SplitMix) -> ImportanceTable {
    let psi = (0..tree.n_nodes())
        .map(|_| {
            let strong = rng.uniform() < 0.5;
            (0..folds)
                .map(|_| if strong { 1.0 + 0.1 * rng.normal() } else { 0.3 * rng.normal() })
                .collect()
        })
        .collect();
    ImportanceTable {
        node_ids: (0..tree.n_nodes()).collect(),
        psi,
        psi_corrected: None,
        folds,
        n_perm: 1,
        loss: LossKind::Rmse,
        learner: LearnerKind::Ridge,
    }
}

fn matrix(n: usize, p: usize, rng: &mut SplitMix) -> DMatrix<f64> {
    // Shared factor so columns correlate and the tree is non-trivial.
    let f: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
    let load: Vec<f64> = (0..p).map(|_| rng.uniform()).collect();
    DMatrix::from_fn(n, p, |i, j| load[j] * f[i] + rng.normal())
}

fn rows_of(x: &DMatrix<f64>) -> Vec<Vec<f64>> {
    x.row_iter().map(|r| r.iter().copied().collect()).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn conservation_is_additive_and_follows_the_rule(seed in any::<u64>(), p in 2usize..40, folds in 2usize..8) {
        let mut rng = SplitMix(seed);
        let tree = tree_from(p, &random_merges(p, &mut rng));
        let table = random_table(&tree, folds, &mut rng);
        let cfg = ConservationConfig::default();
        let (out, diag) = conserve(&tree, &table, &cfg).unwrap();
        let c = out.psi_corrected.unwrap();
        prop_assert_eq!(&c[tree.root()], &table.psi[tree.root()]);
        for id in p..tree.n_nodes() {
            let (l, r) = tree.children(id).unwrap();
            let mean_sd = |row: &[f64]| {
                let k = row.len() as f64;
                let m = row.iter().sum::<f64>() / k;
                (m, (row.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (k - 1.0)).sqrt())
            };
            let (ml, sl) = mean_sd(&table.psi[l]);
            let (mr, sr) = mean_sd(&table.psi[r]);
            let (a, b) = (indicator(ml, sl, cfg.epsilon), indicator(mr, sr, cfg.epsilon));
            for k in 0..folds {
                prop_assert!((c[id][k] - c[l][k] - c[r][k]).abs() < 1e-9);
                if diag.nodes[l].branches[k] != Branch::EqualSplit {
                    let want = allocation_oracle(c[id][k], table.psi[l][k], table.psi[r][k], a, b);
                    prop_assert!((c[l][k] - want).abs() < 1e-9 * (1.0 + want.abs()));
                }
            }
        }
    }

    #[test]
    fn one_pass_adjustment_equals_enumeration(seed in any::<u64>(), p in 2usize..60) {
        let mut rng = SplitMix(seed);
        let tree = tree_from(p, &random_merges(p, &mut rng));
        let p_raw: Vec<f64> = (0..tree.n_nodes()).map(|_| rng.uniform()).collect();
        let members: Vec<Vec<usize>> = tree.nodes().iter().map(|n| n.members.clone()).collect();
        prop_assert_eq!(hierarchical_adjust(&tree, &p_raw).unwrap(), hierarchical_oracle(&members, &p_raw));
    }

    #[test]
    fn selection_matches_oracle(seed in any::<u64>(), p in 2usize..20, folds in 2usize..11) {
        let mut rng = SplitMix(seed);
        let tree = tree_from(p, &random_merges(p, &mut rng));
        let table = random_table(&tree, folds, &mut rng);
        let result = infer(&tree, &table, 0.05, false).unwrap();
        let p_raw: Vec<f64> = table.psi.iter().map(|r| t_test_oracle(r)).collect();
        let members: Vec<Vec<usize>> = tree.nodes().iter().map(|n| n.members.clone()).collect();
        let p_h = hierarchical_oracle(&members, &p_raw);
        for (node, want) in result.nodes.iter().zip(&p_raw) {
            prop_assert!((node.p_raw - want).abs() < 1e-8);
        }
        // Skip draws with a p-value within quadrature error of the cut.
        let near = p_h.iter().any(|&v| (v * p as f64 - 0.05).abs() < 1e-7);
        if !near {
            prop_assert_eq!(result.selected_nodes(), selection_oracle(&p_h, p, 0.05));
        }
    }

    #[test]
    fn auc_equals_pair_count(seed in any::<u64>(), p in 2usize..26) {
        let mut rng = SplitMix(seed);
        let mut truth: Vec<bool> = (0..p).map(|_| rng.uniform() < 0.4).collect();
        truth[0] = true;
        truth[1] = false;
        // Coarse scores so that ties occur.
        let scores: Vec<f64> = (0..p).map(|_| (rng.uniform() * 5.0).floor() / 5.0).collect();
        prop_assert_eq!(auc(&scores, &truth).unwrap(), auc_oracle(&scores, &truth));
    }

    #[test]
    fn ward_matches_rescanning_oracle(seed in any::<u64>(), p in 2usize..11, n in 5usize..40) {
        let mut rng = SplitMix(seed);
        let x = matrix(n, p, &mut rng);
        let tree = ward_cluster(&x).unwrap();
        let want = ward_oracle(&standardize_columns(&rows_of(&x), n, p));
        let got = tree.merges();
        for (m, (a, b, h)) in got.iter().zip(&want) {
            prop_assert_eq!((m.a.min(m.b), m.a.max(m.b)), (*a, *b));
            prop_assert!((m.height - h).abs() <= 1e-9 * h.max(1.0));
        }
    }

    #[test]
    fn t_cdf_matches_quadrature(t in -40.0f64..40.0, df in 1u32..60) {
        let got = t_cdf(t, df as f64);
        prop_assert!((got - t_cdf_quadrature(t, df)).abs() <= 1e-8, "t={} df={}", t, df);
    }

    #[test]
    fn ridge_solves_normal_equations(seed in any::<u64>(), p in 1usize..8, lambda in 1e-3f64..100.0) {
        let mut rng = SplitMix(seed);
        let n = 30;
        let x = matrix(n, p, &mut rng);
        let y = DVector::from_fn(n, |i, _| x[(i, 0)] + rng.normal());
        let model = fit_ridge_fixed(&x, &y, lambda).unwrap();
        let z = standardize_columns(&rows_of(&x), n, p);
        let want = ridge_oracle(&z, y.as_slice(), lambda);
        for (g, w) in model.coef_std.iter().zip(&want) {
            prop_assert!((g - w).abs() <= 1e-8);
        }
    }

    #[test]
    fn logistic_gradient_vanishes(seed in any::<u64>(), p in 1usize..6, lambda in 1e-2f64..10.0) {
        let mut rng = SplitMix(seed);
        let n = 60;
        let x = matrix(n, p, &mut rng);
        let mut y = DVector::from_fn(n, |i, _| if x[(i, 0)] + rng.normal() > 0.0 { 1.0 } else { 0.0 });
        y[0] = 0.0;
        y[1] = 1.0;
        let model = fit_logistic_fixed(&x, &y, lambda).unwrap();
        let z = standardize_columns(&rows_of(&x), n, p);
        let g = logistic_gradient_oracle(&z, y.as_slice(), model.intercept, &model.coef_std, model.penalty);
        prop_assert!(g.iter().all(|v| v.abs() <= 1e-6), "{:?}", g);
    }
}

#[test]
fn mlp_gradient_matches_central_differences() {
    let mut rng = SplitMix(11);
    let (n, p, h) = (25, 4, 6);
    for _ in 0..20 {
        let model = MlpModel {
            standardization: hcpi::data::Standardization {
                means: vec![0.0; p],
                sds: vec![1.0; p],
                constant: vec![false; p],
            },
            y_mean: 0.0,
            y_scale: 1.0,
            w1: DMatrix::from_fn(p, h, |_, _| rng.normal()),
            b1: DVector::from_fn(h, |_, _| rng.normal()),
            w2: DVector::from_fn(h, |_, _| rng.normal()),
            b2: rng.normal(),
        };
        let z = DMatrix::from_fn(n, p, |_, _| rng.normal());
        let t = DVector::from_fn(n, |_, _| rng.normal());
        let rows = rows_of(&z);
        let (loss, grad) = model.loss_and_gradient(&z, &t);
        let params = model.params();
        assert!((loss - mlp_loss_oracle(&rows, t.as_slice(), &params, p, h)).abs() < 1e-12);
        let step = 1e-6;
        let fd: Vec<f64> = (0..params.len())
            .map(|i| {
                let mut up = params.clone();
                up[i] += step;
                let mut down = params.clone();
                down[i] -= step;
                (mlp_loss_oracle(&rows, t.as_slice(), &up, p, h) - mlp_loss_oracle(&rows, t.as_slice(), &down, p, h))
                    / (2.0 * step)
            })
            .collect();
        let g = grad.flatten();
        let err = g.iter().zip(&fd).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let scale = g.iter().map(|v| v.abs()).fold(0.0, f64::max);
        assert!(err / scale <= 1e-4, "relative error {}", err / scale);
    }
}

#[test]
fn zero_spread_t_test_matches_oracle() {
    for psi in [[1.0, 1.0, 1.0], [0.0, 0.0, 0.0], [-2.0, -2.0, -2.0]] {
        assert_eq!(t_test_one_sided(&psi).unwrap(), t_test_oracle(&psi));
    }
}
