//! Acceptance gate. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any criterion fails.

use std::process::ExitCode;
use std::time::Instant;

use hmmc::experiment::{canonical_json, run_on, ExperimentSpec, Method};
use hmmc::flow::{brute_force_assignment, solve_balanced_assignment, DEFAULT_COST_SCALE};
use hmmc::hier::StoppingCriterion;
use hmmc::io::{generate_synthetic, SyntheticSpec};
use hmmc::metrics::{rand_index, semantic_score, ClassTree, Learned, ScoreOptions, TreeMetric};
use hmmc::objective::{hinge_grad, hinge_loss, ExclusiveWeights, RegularizerConfig, Variant};
use hmmc::optim::{prox_sparse_group, ProxSpec, SolverConfig};
use hmmc::split::{balance_bounds, split_node};
use hmmc::tree::SplitRecord;
use hmmc::{AncestorChain, ClusterModels, Dataset, Hierarchy};
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// ---------------------------------------------------------------------------
// 1. Balanced assignment against exhaustive search.

fn mcf_oracle() -> Outcome {
    let start = Instant::now();
    let mut r = rng(1);
    let mut worst_gap = 0.0_f64;
    for case in 0..200 {
        let k = r.random_range(2..=3);
        let n = r.random_range(k..=8);
        let costs = Array2::from_shape_fn((n, k), |_| r.random_range(0.0..10.0));
        let b = balance_bounds(n, k).map_err(|e| e.to_string())?;
        let got = solve_balanced_assignment(costs.view(), b.lower, b.upper, DEFAULT_COST_SCALE)
            .map_err(|e| format!("case {case}: {e}"))?;
        let (_, best) = brute_force_assignment(costs.view(), b.lower, b.upper)
            .map_err(|e| format!("case {case}: {e}"))?;
        // Each rounded arc cost is off by at most half a unit of 1/scale.
        let slack = n as f64 / DEFAULT_COST_SCALE as f64;
        let gap = got.cost - best;
        worst_gap = worst_gap.max(gap.abs());
        if gap > slack || gap < -1e-12 {
            return Err(format!(
                "case {case}: solver {} vs optimum {best}",
                got.cost
            ));
        }
        let mut sizes = vec![0; k];
        got.labels.iter().for_each(|&l| sizes[l] += 1);
        if sizes.iter().any(|&s| !b.contains(s)) {
            return Err(format!("case {case}: sizes {sizes:?} outside bounds"));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        secs < 10.0,
        format!("200 instances, worst cost gap {worst_gap:.2e}, {secs:.2}s"),
    )
}

// ---------------------------------------------------------------------------
// 2. Sparse-group proximal map.

/// `1/2 ||u - w||^2 + s (g sum_p ||u_:p|| + sum_p l_p sum_k |u_kp|)`.
fn prox_objective(u: &Array2<f64>, w: &Array2<f64>, g: f64, l: &Array1<f64>, s: f64) -> f64 {
    let fit = 0.5 * (u - w).mapv(|v| v * v).sum();
    let mut pen = 0.0;
    for (p, col) in u.columns().into_iter().enumerate() {
        pen += g * col.dot(&col).sqrt() + l[p] * col.mapv(f64::abs).sum();
    }
    fit + s * pen
}

/// Subgradient descent with step `1/t` on the 1-strongly convex prox
/// objective, keeping the best iterate.
fn subgradient_minimizer(
    w: &Array2<f64>,
    g: f64,
    l: &Array1<f64>,
    s: f64,
    iters: usize,
) -> Array2<f64> {
    let mut u = w.clone();
    let mut best = u.clone();
    let mut best_val = prox_objective(&u, w, g, l, s);
    for t in 1..=iters {
        let mut sub = &u - w;
        for (p, mut col) in sub.columns_mut().into_iter().enumerate() {
            let ucol = u.column(p);
            let norm = ucol.dot(&ucol).sqrt();
            for (kk, v) in col.iter_mut().enumerate() {
                let x = ucol[kk];
                if norm > 0.0 {
                    *v += s * g * x / norm;
                }
                *v += s * l[p] * x.signum() * f64::from(x != 0.0);
            }
        }
        u = &u - &(sub / t as f64);
        let val = prox_objective(&u, w, g, l, s);
        if val < best_val {
            best_val = val;
            best = u.clone();
        }
    }
    best
}

/// Largest violation of the optimality conditions of the prox problem at `u`.
fn kkt_residual(u: &Array2<f64>, w: &Array2<f64>, g: f64, l: &Array1<f64>, s: f64) -> f64 {
    let mut worst = 0.0_f64;
    for p in 0..u.ncols() {
        let (uc, wc) = (u.column(p), w.column(p));
        let (a, b) = (s * g, s * l[p]);
        let norm = uc.dot(&uc).sqrt();
        if norm == 0.0 {
            // 0 is optimal iff w = a z + b v with ||z|| <= 1 and |v_k| <= 1.
            let outside: f64 = wc
                .iter()
                .map(|&x| (x.abs() - b).max(0.0).powi(2))
                .sum::<f64>()
                .sqrt();
            worst = worst.max(outside - a);
            continue;
        }
        for kk in 0..u.nrows() {
            let x = uc[kk];
            let r = if x != 0.0 {
                (x - wc[kk] + a * x / norm + b * x.signum()).abs()
            } else {
                wc[kk].abs() - b
            };
            worst = worst.max(r);
        }
    }
    worst
}

fn random_prox_case(r: &mut ChaCha8Rng) -> (Array2<f64>, ProxSpec, f64) {
    let k = r.random_range(2..=4);
    let p = r.random_range(1..=6);
    let w = Array2::from_shape_fn((k, p), |_| r.random_range(-3.0..3.0));
    let grid = [1e-4, 1e-3, 1e-2, 1e-1, 1.0];
    let alpha = grid[r.random_range(0..grid.len())] * r.random_range(1.0..30.0);
    let beta = grid[r.random_range(0..grid.len())] * r.random_range(1.0..30.0);
    let lambda = ExclusiveWeights(Array1::from_shape_fn(p, |_| {
        if r.random_bool(0.3) {
            0.0
        } else {
            r.random_range(0.0..2.0)
        }
    }));
    let reg = RegularizerConfig::new(alpha, beta, Variant::SparseGroup).unwrap();
    let s = r.random_range(0.1..5.0);
    (w, ProxSpec::new(&reg, &lambda, k), s)
}

fn prox_correctness() -> Outcome {
    let mut r = rng(2);
    let (mut worst_gap, mut worst_kkt) = (0.0_f64, 0.0_f64);
    for case in 0..100 {
        let (w, spec, s) = random_prox_case(&mut r);
        let u = prox_sparse_group(&w, &spec, s);
        let oracle = subgradient_minimizer(&w, spec.group_weight, &spec.l1_weights, s, 20_000);
        let f_u = prox_objective(&u, &w, spec.group_weight, &spec.l1_weights, s);
        let f_o = prox_objective(&oracle, &w, spec.group_weight, &spec.l1_weights, s);
        let kkt = kkt_residual(&u, &w, spec.group_weight, &spec.l1_weights, s);
        worst_gap = worst_gap.max(f_u - f_o);
        worst_kkt = worst_kkt.max(kkt);
        if f_u > f_o + 1e-6 || kkt > 1e-9 {
            return Err(format!(
                "case {case}: prox {f_u} vs oracle {f_o}, kkt {kkt:e}"
            ));
        }
    }
    let mut worst_ratio = 0.0_f64;
    for case in 0..100 {
        let (a, spec, s) = random_prox_case(&mut r);
        let b = a.mapv(|v| v + r.random_range(-1.0..1.0));
        let d_out = (prox_sparse_group(&a, &spec, s) - prox_sparse_group(&b, &spec, s))
            .mapv(|v| v * v)
            .sum()
            .sqrt();
        let d_in = (&a - &b).mapv(|v| v * v).sum().sqrt();
        worst_ratio = worst_ratio.max(d_out / d_in);
        if d_out > d_in * (1.0 + 1e-12) {
            return Err(format!("pair {case}: expanded {d_in} to {d_out}"));
        }
    }
    Ok(format!(
        "max f(prox) - f(oracle) {worst_gap:.2e}, max kkt residual {worst_kkt:.2e}, max Lipschitz ratio {worst_ratio:.4}"
    ))
}

// ---------------------------------------------------------------------------
// 3. Hinge gradient against central differences.

fn gradient_check() -> Outcome {
    let mut r = rng(3);
    let h = 1e-5;
    let mut worst = 0.0_f64;
    for case in 0..100 {
        let n = r.random_range(2..=20);
        let p = r.random_range(1..=10);
        let k = r.random_range(2..=4);
        let x = Array2::from_shape_fn((n, p), |_| r.random_range(-2.0..2.0));
        let ds = Dataset::new(x, None).unwrap();
        let data = ds.all();
        let labels: Vec<usize> = (0..n).map(|_| r.random_range(0..k)).collect();
        let w = Array2::from_shape_fn((k, p), |_| r.random_range(-1.0..1.0));
        let grad = hinge_grad(&ClusterModels::new(w.clone()).unwrap(), &data, &labels).unwrap();
        let mut fd = Array2::zeros((k, p));
        for i in 0..k {
            for j in 0..p {
                let mut plus = w.clone();
                plus[[i, j]] += h;
                let mut minus = w.clone();
                minus[[i, j]] -= h;
                let lp = hinge_loss(&ClusterModels::new(plus).unwrap(), &data, &labels).unwrap();
                let lm = hinge_loss(&ClusterModels::new(minus).unwrap(), &data, &labels).unwrap();
                fd[[i, j]] = (lp - lm) / (2.0 * h);
            }
        }
        let scale = grad.iter().fold(0.0_f64, |m, v| m.max(v.abs())).max(1e-8);
        let err = (&fd - &grad).iter().fold(0.0_f64, |m, v| m.max(v.abs())) / scale;
        worst = worst.max(err);
        if err > 1e-5 {
            return Err(format!("case {case}: relative error {err:e}"));
        }
    }
    Ok(format!("100 instances, max relative error {worst:.2e}"))
}

// ---------------------------------------------------------------------------
// 4. Monotone alternating descent.

fn blobs(seed: u64) -> Dataset {
    let spec = SyntheticSpec {
        depth: 1,
        branching: 3,
        per_leaf: 20,
        informative_dims: 6,
        noise_dims: 2,
        magnitudes: vec![2.0],
        noise: 1.0,
        seed,
    };
    generate_synthetic(&spec).unwrap().0
}

fn pure_noise(seed: u64) -> Dataset {
    let mut r = rng(seed);
    let normal = Normal::new(0.0, 1.0).unwrap();
    Dataset::new(
        Array2::from_shape_fn((50, 8), |_| normal.sample(&mut r)),
        None,
    )
    .unwrap()
}

fn monotone_descent() -> Outcome {
    let reg = RegularizerConfig::default();
    let mut max_rounds = 0;
    let mut half_steps = 0;
    for run in 0..20u64 {
        let ds = if run < 10 {
            blobs(run)
        } else {
            pure_noise(run)
        };
        let k = 2 + (run % 2) as usize;
        let res = split_node(
            &ds.all(),
            &AncestorChain::empty(),
            k,
            &reg,
            &SolverConfig::default(),
            run,
            50,
        )
        .map_err(|e| format!("run {run}: {e}"))?;
        for pair in res.history.windows(2) {
            if pair[1] > pair[0] {
                return Err(format!(
                    "run {run}: objective rose from {} to {}",
                    pair[0], pair[1]
                ));
            }
        }
        half_steps += res.history.len() - 1;
        max_rounds = max_rounds.max(res.iterations);
    }
    check(
        max_rounds <= 50,
        format!("20 runs, {half_steps} half-steps, all non-increasing, max {max_rounds} rounds"),
    )
}

// ---------------------------------------------------------------------------
// 5 and 6. Planted hierarchy recovery and the exclusive-sparsity effect.

struct PlantedRun {
    seed: u64,
    ri: f64,
    sp: f64,
    ps: f64,
    flat_sp: f64,
    flat_ps: f64,
    root_top_fraction: f64,
    root_second_fraction: f64,
    child_second_fractions: Vec<f64>,
}

fn planted_spec(seed: u64) -> SyntheticSpec {
    SyntheticSpec {
        seed,
        ..SyntheticSpec::default()
    }
}

fn block_fraction(models: &ClusterModels, block: std::ops::Range<usize>) -> f64 {
    let w = models.weights();
    let total: f64 = w.iter().map(|v| v.abs()).sum();
    let inside: f64 = w
        .columns()
        .into_iter()
        .enumerate()
        .filter(|(p, _)| block.contains(p))
        .map(|(_, c)| c.mapv(f64::abs).sum())
        .sum();
    if total == 0.0 {
        0.0
    } else {
        inside / total
    }
}

fn planted_run(seed: u64) -> Result<PlantedRun, String> {
    let synth = planted_spec(seed);
    let (ds, truth) = generate_synthetic(&synth).map_err(|e| e.to_string())?;
    let spec = ExperimentSpec {
        method: Method::Hmmc,
        k: 2,
        stop: StoppingCriterion::MaxLeaves(4),
        reg: RegularizerConfig::new(1e-2, 1e-2, Variant::SparseGroup).unwrap(),
        restarts: 3,
        seed,
        ..ExperimentSpec::default()
    };
    let out = run_on(&spec, &ds, Some(&truth)).map_err(|e| e.to_string())?;
    let eval = out.report.evaluation.ok_or("no evaluation")?;
    let flat = run_on(
        &ExperimentSpec {
            method: Method::KmeansFlat,
            k: 4,
            ..spec.clone()
        },
        &ds,
        Some(&truth),
    )
    .map_err(|e| e.to_string())?;
    let flat_eval = flat.report.evaluation.ok_or("no flat evaluation")?;

    let h = &out.hierarchy;
    let root_models = h.root().models.as_ref().ok_or("root has no models")?;
    let child_second_fractions = h
        .nodes()
        .iter()
        .filter(|n| n.depth == 1)
        .filter_map(|n| n.models.as_ref())
        .map(|m| block_fraction(m, synth.block(1)))
        .collect();
    Ok(PlantedRun {
        seed,
        ri: eval.ri,
        sp: eval.sp,
        ps: eval.ps,
        flat_sp: flat_eval.sp,
        flat_ps: flat_eval.ps,
        root_top_fraction: block_fraction(root_models, synth.block(0)),
        root_second_fraction: block_fraction(root_models, synth.block(1)),
        child_second_fractions,
    })
}

fn planted_recovery(runs: &[PlantedRun], secs: f64) -> Outcome {
    for r in runs {
        println!(
            "    seed {}: RI {:.4}  SP {:.4} (flat {:.4})  PS {:.4} (flat {:.4})",
            r.seed, r.ri, r.sp, r.flat_sp, r.ps, r.flat_ps
        );
    }
    let recovered = runs.iter().filter(|r| r.ri >= 0.95).count();
    let beats_flat = runs.iter().all(|r| r.sp > r.flat_sp && r.ps > r.flat_ps);
    check(
        recovered >= 4 && beats_flat && secs < 120.0,
        format!(
            "RI >= 0.95 on {recovered}/5 seeds, SP/PS above flat k-means on every seed: {beats_flat}, {secs:.1}s"
        ),
    )
}

fn exclusive_sparsity(runs: &[PlantedRun]) -> Outcome {
    let mut ok = true;
    for r in runs {
        println!(
            "    seed {}: root block-1 share {:.3}, root block-2 share {:.3}, depth-1 block-2 shares {:?}",
            r.seed,
            r.root_top_fraction,
            r.root_second_fraction,
            r.child_second_fractions
                .iter()
                .map(|f| format!("{f:.3}"))
                .collect::<Vec<_>>()
        );
        ok &= r.root_top_fraction >= 0.6;
        ok &= !r.child_second_fractions.is_empty()
            && r.child_second_fractions
                .iter()
                .all(|&f| f > r.root_second_fraction);
    }
    check(ok, format!("{} planted runs checked", runs.len()))
}

// ---------------------------------------------------------------------------
// 7. Metrics on a hand-computed example.

/// Truth: classes c1..c4 with two instances each, grouped {c1,c2} and
/// {c3,c4}. Learned: the same shape, but instance 3 (a c2) sits in the leaf
/// holding c3's instances.
fn hand_example() -> (Dataset, ClassTree, Hierarchy, Vec<usize>) {
    let labels = ["c1", "c1", "c2", "c2", "c3", "c3", "c4", "c4"];
    let ds = Dataset::new(
        Array2::from_shape_fn((8, 1), |(i, _)| i as f64),
        Some(labels.iter().map(|s| s.to_string()).collect()),
    )
    .unwrap();
    let parents = vec![None, Some(0), Some(0), Some(1), Some(1), Some(2), Some(2)];
    let classes = [("c1", 3), ("c2", 4), ("c3", 5), ("c4", 6)]
        .into_iter()
        .map(|(c, l)| (c.to_string(), l))
        .collect();
    let truth = ClassTree::new(parents, classes).unwrap();

    let mut h = Hierarchy::new(8);
    let split = |labels: Vec<usize>| SplitRecord {
        k: 2,
        labels,
        models: None,
        score: 1.0,
        objective: None,
    };
    h.split(1, split(vec![0, 0, 0, 1, 1, 1, 1, 1])).unwrap();
    h.split(2, split(vec![0, 0, 1])).unwrap();
    h.split(3, split(vec![0, 0, 0, 1, 1])).unwrap();
    let flat = vec![0, 0, 1, 2, 2, 2, 3, 3];
    (ds, truth, h, flat)
}

fn metric_correctness() -> Outcome {
    let (ds, truth, h, flat) = hand_example();
    let score = |learned, metric| {
        semantic_score(learned, &truth, &ds, &ScoreOptions::new(metric)).map_err(|e| e.to_string())
    };
    // Only the 7 pairs touching instance 3 disagree. Shortest path
    // similarities are 1 / 0.5 / 0 for same leaf / sibling / cousin, giving
    // squared errors 1/4, 1/4, 1, 1, 1, 1/4, 1/4 = 4 over 28 pairs. Path
    // sharing uses 1 / 2/3 / 1/3, giving 1/9, 1/9, 4/9, 4/9, 4/9, 1/9, 1/9.
    // The flat labels put 3 with 4 and 5; against the truth tree this costs
    // 1 (pair 2-3) + 8 * 1/4 (siblings) + 2 (pairs 3-4, 3-5) = 5 for SP and
    // 1 + 8 * 4/9 + 2 * 4/9 + 14 * 1/9 = 7 for PS.
    let part = h.leaf_partition().unwrap();
    let expected = [
        (
            "SP",
            score(Learned::Hierarchy(&h), TreeMetric::ShortestPath)?,
            1.0 - 4.0 / 28.0,
        ),
        (
            "PS",
            score(Learned::Hierarchy(&h), TreeMetric::PathSharing)?,
            1.0 - 16.0 / 9.0 / 28.0,
        ),
        (
            "RI",
            rand_index(&part, ds.labels().unwrap()).unwrap(),
            25.0 / 28.0,
        ),
        (
            "flat SP",
            score(Learned::Flat(&flat), TreeMetric::ShortestPath)?,
            1.0 - 5.0 / 28.0,
        ),
        (
            "flat PS",
            score(Learned::Flat(&flat), TreeMetric::PathSharing)?,
            1.0 - 7.0 / 28.0,
        ),
        (
            "flat RI",
            rand_index(&flat, ds.labels().unwrap()).unwrap(),
            25.0 / 28.0,
        ),
    ];
    let mut worst = 0.0_f64;
    for (name, got, want) in expected {
        worst = worst.max((got - want).abs());
        if (got - want).abs() > 1e-12 {
            return Err(format!("{name}: got {got}, expected {want}"));
        }
    }
    Ok(format!("6 hand values matched, max error {worst:.1e}"))
}

// ---------------------------------------------------------------------------
// 8. Determinism of every builder.

fn determinism() -> Outcome {
    let (ds, truth) = generate_synthetic(&SyntheticSpec {
        per_leaf: 20,
        seed: 11,
        ..SyntheticSpec::default()
    })
    .unwrap();
    let methods = [
        Method::Hmmc,
        Method::Hkm,
        Method::HkmD,
        Method::KmeansFlat,
        Method::MmcFlat,
    ];
    for method in methods {
        let spec = ExperimentSpec {
            method,
            k: if method.is_flat() { 4 } else { 2 },
            restarts: 2,
            seed: 5,
            ..ExperimentSpec::default()
        };
        let a = run_on(&spec, &ds, Some(&truth)).map_err(|e| e.to_string())?;
        let b = run_on(&spec, &ds, Some(&truth)).map_err(|e| e.to_string())?;
        let (ja, jb) = (canonical_json(&a.hierarchy), canonical_json(&b.hierarchy));
        if ja.map_err(|e| e.to_string())? != jb.map_err(|e| e.to_string())? {
            return Err(format!("{method}: exported hierarchies differ"));
        }
        if a.report.to_json_without_runtime().unwrap()
            != b.report.to_json_without_runtime().unwrap()
        {
            return Err(format!("{method}: reports differ"));
        }
    }
    Ok("hmmc, hkm, hkm_d, kmeans_flat, mmc_flat byte-identical across runs".into())
}

// ---------------------------------------------------------------------------
// 9. Regularizer variants.

fn variant_toggles() -> Outcome {
    let (ds, truth) = generate_synthetic(&planted_spec(21)).unwrap();
    let cases = [
        ("HMMC", 1e-2, 1e-2, Variant::SparseGroup),
        ("HMMC-G", 1e-2, 0.0, Variant::GroupOnly),
        ("HMMC-E", 0.0, 1e-2, Variant::ExclusiveOnly),
        ("HMMC-1", 1e-2, 0.0, Variant::L1),
        ("HMMC-2", 1e-2, 0.0, Variant::SquaredL2),
    ];
    let mut sparsity = Vec::new();
    for (name, alpha, beta, variant) in cases {
        let spec = ExperimentSpec {
            method: Method::Hmmc,
            k: 2,
            stop: StoppingCriterion::MaxLeaves(4),
            reg: RegularizerConfig::new(alpha, beta, variant).unwrap(),
            seed: 21,
            ..ExperimentSpec::default()
        };
        let out = run_on(&spec, &ds, Some(&truth)).map_err(|e| format!("{name}: {e}"))?;
        if out.hierarchy.leaf_count() != 4 {
            return Err(format!("{name}: {} leaves", out.hierarchy.leaf_count()));
        }
        sparsity.push((name, out.report.sparsity.unwrap_or(0.0)));
    }
    let get = |n: &str| sparsity.iter().find(|(m, _)| *m == n).unwrap().1;
    let ok = get("HMMC-2") == 0.0 && get("HMMC") >= get("HMMC-G").max(get("HMMC-E")) - 0.05;
    let listing: Vec<String> = sparsity
        .iter()
        .map(|(n, s)| format!("{n} {:.3}", s))
        .collect();
    check(ok, format!("sparsity {}", listing.join(", ")))
}

fn main() -> ExitCode {
    let mut failures = 0;
    let mut report = |name: &str, outcome: Outcome| match outcome {
        Ok(detail) => println!("PASS  {name}: {detail}"),
        Err(detail) => {
            failures += 1;
            println!("FAIL  {name}: {detail}");
        }
    };

    report("1 min-cost-flow oracle equivalence", mcf_oracle());
    report("2 proximal operator correctness", prox_correctness());
    report("3 hinge gradient check", gradient_check());
    report("4 monotone alternating descent", monotone_descent());

    let start = Instant::now();
    let runs: Result<Vec<PlantedRun>, String> = (0..5).map(planted_run).collect();
    let secs = start.elapsed().as_secs_f64();
    match runs {
        Ok(runs) => {
            report(
                "5 planted hierarchy recovery",
                planted_recovery(&runs, secs),
            );
            report("6 exclusive sparsity effect", exclusive_sparsity(&runs));
        }
        Err(e) => {
            report("5 planted hierarchy recovery", Err(e.clone()));
            report("6 exclusive sparsity effect", Err(e));
        }
    }

    report("7 metric correctness", metric_correctness());
    report("8 determinism", determinism());
    report("9 variant toggles", variant_toggles());

    if failures == 0 {
        println!("acceptance: all criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: {failures} criteria failed");
        ExitCode::FAILURE
    }
}
