//! The weight solver against simple first-order reference methods.

use hmmc::objective::exclusive_weights;
use hmmc::objective::{hinge_grad, node_objective, RegularizerConfig, Variant};
use hmmc::optim::{prox_sparse_group, solve_w, ProxSpec, SolverConfig};
use hmmc::tree::AncestorLink;
use hmmc::{AncestorChain, ClusterModels, Dataset};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_problem(seed: u64) -> (Dataset, Vec<usize>, usize) {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let n = r.random_range(6..=30);
    let p = r.random_range(2..=8);
    let k = r.random_range(2..=3);
    let x = Array2::from_shape_fn((n, p), |_| r.random_range(-2.0..2.0));
    let labels = (0..n).map(|i| i % k).collect();
    (Dataset::new(x, None).unwrap(), labels, k)
}

fn objective(
    w: &Array2<f64>,
    ds: &Dataset,
    labels: &[usize],
    chain: &AncestorChain,
    reg: &RegularizerConfig,
) -> f64 {
    node_objective(
        &ClusterModels::new(w.clone()).unwrap(),
        labels,
        chain,
        &ds.all(),
        reg,
    )
    .unwrap()
}

/// Proximal gradient with backtracking, run for many iterations.
fn reference_minimum(
    ds: &Dataset,
    labels: &[usize],
    k: usize,
    chain: &AncestorChain,
    reg: &RegularizerConfig,
) -> f64 {
    let p = ds.dim();
    let lambda = exclusive_weights(chain, k, p).unwrap();
    let spec = ProxSpec::new(reg, &lambda, k);
    let mut w = Array2::zeros((k, p));
    let mut f = objective(&w, ds, labels, chain, reg);
    let mut step = 1.0;
    for _ in 0..20_000 {
        let g = hinge_grad(&ClusterModels::new(w.clone()).unwrap(), &ds.all(), labels).unwrap();
        loop {
            let u = prox_sparse_group(&(&w - &(&g * step)), &spec, step);
            let fu = objective(&u, ds, labels, chain, reg);
            if fu <= f || step < 1e-12 {
                if fu <= f {
                    w = u;
                    f = fu;
                }
                break;
            }
            step *= 0.5;
        }
        step *= 1.5;
    }
    f
}

fn check_against_reference(variant: Variant, alpha: f64, beta: f64, chain_seed: Option<u64>) {
    for seed in 0..6 {
        let (ds, labels, k) = random_problem(seed);
        let chain = match chain_seed {
            None => AncestorChain::empty(),
            Some(s) => {
                let mut r = ChaCha8Rng::seed_from_u64(s + seed);
                let w = Array2::from_shape_fn((2, ds.dim()), |_| r.random_range(-3.0..3.0));
                AncestorChain {
                    links: vec![AncestorLink {
                        models: ClusterModels::new(w).unwrap(),
                        chosen_child: 1,
                    }],
                }
            }
        };
        let reg = RegularizerConfig::new(alpha, beta, variant).unwrap();
        let cfg = SolverConfig {
            max_outer_iters: 500,
            rel_obj_tol: 1e-12,
            ..SolverConfig::default()
        };
        let sol = solve_w(
            &ds.all(),
            &labels,
            &chain,
            &reg,
            &cfg,
            &ClusterModels::zeros(k, ds.dim()),
        )
        .unwrap();
        let reference = reference_minimum(&ds, &labels, k, &chain, &reg);
        assert!(
            sol.objective <= reference + 1e-6 * reference.abs().max(1.0),
            "{variant} seed {seed}: solver {} vs reference {reference}",
            sol.objective
        );
        for pair in sol.history.windows(2) {
            assert!(pair[1] <= pair[0], "{variant} seed {seed}: history rose");
        }
        let recomputed = objective(sol.models.weights(), &ds, &labels, &chain, &reg);
        assert!((recomputed - sol.objective).abs() <= 1e-12 * recomputed.max(1.0));
    }
}

#[test]
fn squared_l2_matches_gradient_descent() {
    check_against_reference(Variant::SquaredL2, 1.0, 0.0, None);
}

#[test]
fn sparse_group_matches_proximal_gradient() {
    check_against_reference(Variant::SparseGroup, 0.5, 2.0, Some(100));
}

#[test]
fn other_variants_match_proximal_gradient() {
    check_against_reference(Variant::GroupOnly, 0.5, 0.0, None);
    check_against_reference(Variant::ExclusiveOnly, 0.0, 3.0, Some(200));
    check_against_reference(Variant::L1, 0.5, 0.0, None);
}

#[test]
fn warm_start_never_worsens() {
    let (ds, labels, k) = random_problem(42);
    let reg = RegularizerConfig::default();
    let cfg = SolverConfig::default();
    let first = solve_w(
        &ds.all(),
        &labels,
        &AncestorChain::empty(),
        &reg,
        &cfg,
        &ClusterModels::zeros(k, ds.dim()),
    )
    .unwrap();
    let again = solve_w(
        &ds.all(),
        &labels,
        &AncestorChain::empty(),
        &reg,
        &cfg,
        &first.models,
    )
    .unwrap();
    assert!(again.objective <= first.objective);
    assert_eq!(again.history[0], first.objective);
}
