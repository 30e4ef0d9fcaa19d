use collab_teach::dataset::{gen_synthetic, shard, Example, SyntheticSpec, Task, TeacherShard};
use collab_teach::engine::{
    apply_and_reduce, objective, run_teaching, select_subset, sweep_budgets, Coordinator, DualState, Session, Teacher,
    TeachingConfig,
};
use collab_teach::learner::{fit_primal, FitOptions};
use collab_teach::losses::conjugate;
use collab_teach::par::Execution;
use collab_teach::vecops::{dist, norm};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn one_shard(examples: Vec<Example>) -> Vec<TeacherShard> {
    let n = examples.len();
    vec![TeacherShard {
        teacher_id: 0,
        examples,
        global_offsets: (0..n).collect(),
    }]
}

fn instance(task: Task, n: usize, d: usize, k: usize, seed: u64) -> (Vec<TeacherShard>, Vec<f64>) {
    let ds = gen_synthetic(&SyntheticSpec::new(task, n, d, 2, seed)).unwrap();
    let shards = shard(&ds, k, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
    let target = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
    (shards, target)
}

fn small_cfg(task: Task) -> TeachingConfig {
    TeachingConfig {
        lambda: 1.0,
        rounds: 20,
        ..TeachingConfig::for_task(task)
    }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

#[test]
fn warm_start_orthonormal_case() {
    let shards = one_shard(vec![
        Example::new(vec![1.0, 0.0], 0.0),
        Example::new(vec![0.0, 1.0], 0.0),
    ]);
    let cfg = TeachingConfig {
        lambda: 1.0,
        ols_eps: 1e-14,
        rounds: 0,
        ..TeachingConfig::for_task(Task::Regression)
    };
    let s = Session::new(&shards, &[2.0, 0.5], Task::Regression, &cfg).unwrap();
    let w = &s.weights()[0];
    assert!((w[0] - 0.5).abs() < 1e-12);
    assert!((w[1] - 2.0).abs() < 1e-12);
}

#[test]
fn warm_start_zero_estimate_clips_to_w_max() {
    // theta_star has no component along the second example
    let shards = one_shard(vec![
        Example::new(vec![1.0, 0.0], 0.0),
        Example::new(vec![0.0, 1.0], 0.0),
    ]);
    let cfg = TeachingConfig {
        rounds: 0,
        w_max: 123.0,
        ..TeachingConfig::for_task(Task::Regression)
    };
    let s = Session::new(&shards, &[1.0, 0.0], Task::Regression, &cfg).unwrap();
    assert_eq!(s.weights()[0][1], 123.0);
    assert!(s.weights().iter().flatten().all(|&w| w > 0.0 && w <= 123.0));
}

#[test]
fn warm_start_matches_pseudoinverse() {
    let (shards, target) = instance(Task::Regression, 30, 5, 3, 7);
    let cfg = TeachingConfig {
        lambda: 0.7,
        ols_eps: 1e-12,
        w_max: 1e12,
        rounds: 0,
        ..TeachingConfig::for_task(Task::Regression)
    };
    let s = Session::new(&shards, &target, Task::Regression, &cfg).unwrap();

    // min-norm solution of (1/lambda) Z^T a = theta_star, via SVD pseudoinverse
    let rows: Vec<&Example> = shards.iter().flat_map(|s| &s.examples).collect();
    let zt = DMatrix::from_fn(5, rows.len(), |r, c| rows[c].features[r]);
    let pinv = zt.clone().pseudo_inverse(1e-12).unwrap();
    let rhs = DMatrix::from_column_slice(5, 1, &target) * cfg.lambda;
    let a_hat = pinv * rhs;
    for (j, w) in s.weights().iter().flatten().enumerate() {
        assert!(rel(1.0 / w, a_hat[j].abs()) < 1e-6, "{j}: {} vs {}", 1.0 / w, a_hat[j]);
    }
}

#[test]
fn objective_at_zero_is_target_pull() {
    for task in [Task::Classification, Task::Regression] {
        let (shards, target) = instance(task, 20, 3, 2, 1);
        let cfg = small_cfg(task);
        let alpha: Vec<Vec<f64>> = shards.iter().map(|s| vec![0.0; s.len()]).collect();
        let w: Vec<Vec<f64>> = shards.iter().map(|s| vec![1.0; s.len()]).collect();
        let v = objective(&alpha, &shards, &target, task, &cfg, &w).unwrap();
        let t2: f64 = target.iter().map(|x| x * x).sum();
        assert!(rel(v, cfg.lambda_theta * t2) < 1e-14);
    }
}

#[test]
fn objective_matches_naive_resummation() {
    for (task, seed) in [(Task::Classification, 3), (Task::Regression, 4)] {
        let (shards, target) = instance(task, 24, 4, 3, seed);
        let cfg = TeachingConfig {
            lambda: 0.8,
            lambda_alpha: 0.3,
            lambda_theta: 5.0,
            ..small_cfg(task)
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let alpha: Vec<Vec<f64>> = shards
            .iter()
            .map(|s| (0..s.len()).map(|_| rng.random_range(0.01..0.99)).collect())
            .collect();
        let w: Vec<Vec<f64>> = shards
            .iter()
            .map(|s| (0..s.len()).map(|_| rng.random_range(0.5..3.0)).collect())
            .collect();
        let got = objective(&alpha, &shards, &target, task, &cfg, &w).unwrap();

        let mut theta = vec![0.0; 4];
        let mut conj = 0.0;
        let mut l1 = 0.0;
        for ((s, a), wb) in shards.iter().zip(&alpha).zip(&w) {
            for ((e, &aj), &wj) in s.examples.iter().zip(a).zip(wb) {
                let y = e.label;
                conj += match task {
                    Task::Classification => aj * aj.ln() + (1.0 - aj) * (1.0 - aj).ln(),
                    Task::Regression => 0.5 * aj * aj - aj * y,
                };
                let zs = if task == Task::Classification { y } else { 1.0 };
                for (t, x) in theta.iter_mut().zip(&e.features) {
                    *t += aj * zs * x / cfg.lambda;
                }
                l1 += wj * aj.abs();
            }
        }
        let want = conj
            + 0.5 * cfg.lambda * norm(&theta).powi(2)
            + cfg.lambda_theta * dist(&theta, &target).powi(2)
            + cfg.lambda_alpha * l1;
        assert!(rel(got, want) < 1e-10, "{got} vs {want}");
    }
}

#[test]
fn huge_l1_weight_keeps_zero_block() {
    let (shards, target) = instance(Task::Classification, 20, 3, 1, 2);
    let cfg = TeachingConfig {
        lambda_alpha: 1e9,
        ..small_cfg(Task::Classification)
    };
    let t = Teacher::new(&shards[0], Task::Classification, 3).unwrap();
    let alpha = vec![0.0; t.len()];
    let w = vec![1.0; t.len()];
    let theta = vec![0.0; 3];
    let sol = t.surrogate(&alpha, &w, &theta, &target, &cfg, 1.0).minimize(200, 1e-8).unwrap();
    assert!(sol.delta.iter().all(|&d| d == 0.0));
}

#[test]
fn single_example_block_matches_grid_search() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..5 {
        let x: Vec<f64> = (0..2).map(|_| rng.random_range(-1.5..1.5)).collect();
        let y = rng.random_range(-2.0..2.0);
        let shards = one_shard(vec![Example::new(x, y)]);
        let target = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        let theta = [rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5)];
        let a0 = rng.random_range(-1.0..1.0);
        let cfg = TeachingConfig {
            lambda: 1.0,
            lambda_alpha: 0.2,
            lambda_theta: 0.5,
            ..TeachingConfig::for_task(Task::Regression)
        };
        let t = Teacher::new(&shards[0], Task::Regression, 2).unwrap();
        let w = [1.5];
        let alpha = [a0];
        let sur = t.surrogate(&alpha, &w, &theta, &target, &cfg, 1.0);
        let sol = sur.minimize(500, 1e-14).unwrap();

        // the optimum lies within the bracket where the quadratic dominates
        let (lo, hi) = (a0 - 20.0, a0 + 20.0);
        let mut best = (f64::INFINITY, 0.0);
        let steps = ((hi - lo) / 1e-4) as usize;
        for k in 0..=steps {
            let a = lo + k as f64 * 1e-4;
            let v = sur.value(&[a]).unwrap();
            if v < best.0 {
                best = (v, a - a0);
            }
        }
        assert!((sol.delta[0] - best.1).abs() < 1e-3, "{} vs {}", sol.delta[0], best.1);
    }
}

#[test]
fn gradient_matches_central_differences() {
    for task in [Task::Classification, Task::Regression] {
        let (shards, target) = instance(task, 12, 3, 1, 5);
        let cfg = TeachingConfig {
            lambda: 0.9,
            lambda_theta: 3.0,
            ..small_cfg(task)
        };
        let t = Teacher::new(&shards[0], task, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let w = vec![1.0; t.len()];
        let mut worst: f64 = 0.0;
        for _ in 0..10 {
            let alpha: Vec<f64> = (0..t.len()).map(|_| rng.random_range(0.05..0.95)).collect();
            let theta: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let sur = t.surrogate(&alpha, &w, &theta, &target, &cfg, 1.0);
            let point: Vec<f64> = alpha.iter().map(|a| a + rng.random_range(-0.02..0.02)).collect();
            let g = sur.smooth_grad(&point).unwrap();
            let h = 1e-6;
            for j in 0..point.len() {
                let mut p = point.clone();
                p[j] += h;
                let up = sur.smooth_value(&p).unwrap();
                p[j] -= 2.0 * h;
                let down = sur.smooth_value(&p).unwrap();
                let fd = (up - down) / (2.0 * h);
                worst = worst.max((g[j] - fd).abs() / fd.abs().max(1.0));
            }
        }
        assert!(worst <= 1e-5, "{task}: {worst}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn block_solve_never_increases_surrogate(seed in 0u64..1000, clf in any::<bool>(), la in 0.0f64..2.0, lt in 0.0f64..50.0) {
        let task = if clf { Task::Classification } else { Task::Regression };
        let (shards, target) = instance(task, 16, 3, 2, seed);
        let cfg = TeachingConfig { lambda: 0.5, lambda_alpha: la, lambda_theta: lt, ..small_cfg(task) };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = Teacher::new(&shards[0], task, 3).unwrap();
        let alpha: Vec<f64> = (0..t.len()).map(|_| if clf { rng.random_range(0.0..1.0) } else { rng.random_range(-1.0..1.0) }).collect();
        let w: Vec<f64> = (0..t.len()).map(|_| rng.random_range(0.1..5.0)).collect();
        let theta: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let sur = t.surrogate(&alpha, &w, &theta, &target, &cfg, 1.0);
        let sol = sur.minimize(50, 1e-10).unwrap();
        let zero = sur.value(&alpha).unwrap();
        let moved: Vec<f64> = alpha.iter().zip(&sol.delta).map(|(a, d)| a + d).collect();
        prop_assert!(sur.value(&moved).unwrap() <= zero);
        prop_assert_eq!(sol.value_before, zero);
    }
}

#[test]
fn zero_deltas_leave_state_but_count_traffic() {
    let (shards, target) = instance(Task::Regression, 20, 3, 2, 6);
    let cfg = small_cfg(Task::Regression);
    let s = Session::new(&shards, &target, Task::Regression, &cfg).unwrap();
    let zeros: Vec<Vec<f64>> = shards.iter().map(|s| vec![0.0; s.len()]).collect();
    let (next, up, down) = apply_and_reduce(s.state(), s.teachers(), s.coordinator(), &zeros, &cfg).unwrap();
    assert_eq!(next.alpha, s.state().alpha);
    assert_eq!(next.theta_tilde, s.state().theta_tilde);
    assert_eq!(next.round, 1);
    assert_eq!((up, down), (6, 6));
    assert!(apply_and_reduce(s.state(), s.teachers(), s.coordinator(), &zeros[..1], &cfg).is_err());
}

#[test]
fn single_teacher_moves_by_full_step() {
    let (shards, target) = instance(Task::Regression, 10, 2, 1, 8);
    let cfg = small_cfg(Task::Regression);
    let s = Session::new(&shards, &target, Task::Regression, &cfg).unwrap();
    let delta: Vec<Vec<f64>> = vec![(0..10).map(|j| j as f64 * 0.1 - 0.3).collect()];
    let (next, _, _) = apply_and_reduce(s.state(), s.teachers(), s.coordinator(), &delta, &cfg).unwrap();
    assert_eq!(next.alpha[0], delta[0]);
}

#[test]
fn aggregate_stays_consistent_and_box_holds() {
    for task in [Task::Classification, Task::Regression] {
        let (shards, target) = instance(task, 60, 4, 3, 12);
        let cfg = small_cfg(task);
        let mut s = Session::new(&shards, &target, task, &cfg).unwrap();
        let mut checked = 0;
        s.run_with(|s| {
            let fresh = s.theta_from_scratch().unwrap();
            let tilde = &s.state().theta_tilde;
            assert!(dist(&fresh, tilde) <= 1e-9 * norm(&fresh).max(1e-12));
            if task == Task::Classification {
                assert!(s.state().alpha.iter().flatten().all(|a| (0.0..=1.0).contains(a)));
            }
            checked += 1;
        })
        .unwrap();
        assert_eq!(checked, cfg.rounds);
    }
}

#[test]
fn objective_never_increases() {
    for (task, seed) in [(Task::Classification, 1), (Task::Regression, 2), (Task::Classification, 3)] {
        let (shards, target) = instance(task, 200, 5, 4, seed);
        let cfg = TeachingConfig {
            rounds: 40,
            ..TeachingConfig::for_task(task)
        };
        let run = run_teaching(&shards, &target, task, &cfg).unwrap();
        assert!(run.trace.max_increase() <= 1e-9, "{task}: {}", run.trace.max_increase());
        assert!(run.trace.final_objective() < run.trace.initial_objective);
    }
}

#[test]
fn zero_rounds_is_a_no_op() {
    let (shards, target) = instance(Task::Classification, 20, 3, 2, 1);
    let cfg = TeachingConfig {
        rounds: 0,
        ..small_cfg(Task::Classification)
    };
    let run = run_teaching(&shards, &target, Task::Classification, &cfg).unwrap();
    assert!(run.state.alpha.iter().flatten().all(|&a| a == 0.0));
    assert!(run.state.theta_tilde.iter().all(|&v| v == 0.0));
    assert_eq!(run.trace.rounds(), 0);
}

#[test]
fn serial_and_parallel_runs_are_bit_identical() {
    for task in [Task::Classification, Task::Regression] {
        let (shards, target) = instance(task, 300, 6, 5, 21);
        let base = TeachingConfig {
            rounds: 15,
            ..TeachingConfig::for_task(task)
        };
        let ser = run_teaching(
            &shards,
            &target,
            task,
            &TeachingConfig {
                execution: Execution::Serial,
                ..base.clone()
            },
        )
        .unwrap();
        let par = run_teaching(
            &shards,
            &target,
            task,
            &TeachingConfig {
                execution: Execution::Parallel,
                ..base
            },
        )
        .unwrap();
        assert_eq!(ser.state, par.state);
        assert_eq!(ser.trace, par.trace);
    }
}

#[test]
fn communication_is_two_k_d_per_round() {
    let (shards, target) = instance(Task::Classification, 90, 4, 3, 4);
    let cfg = TeachingConfig {
        rounds: 7,
        ..small_cfg(Task::Classification)
    };
    let run = run_teaching(&shards, &target, Task::Classification, &cfg).unwrap();
    for r in &run.trace.records {
        assert_eq!((r.reals_up, r.reals_down), (12, 12));
    }
    assert_eq!(run.trace.reals_communicated(), 2 * 7 * 3 * 4);
}

#[test]
fn early_stop_on_outer_tolerance() {
    let (shards, target) = instance(Task::Regression, 60, 3, 2, 4);
    let cfg = TeachingConfig {
        rounds: 500,
        outer_tol: 1e-3,
        ..small_cfg(Task::Regression)
    };
    let run = run_teaching(&shards, &target, Task::Regression, &cfg).unwrap();
    assert!(run.trace.rounds() < 500);
    assert_eq!(run.trace.reals_communicated(), 2 * run.trace.rounds() * 2 * 3);
}

#[test]
fn dual_solution_recovers_primal_fit() {
    for (task, lambda) in [(Task::Classification, 1.0), (Task::Regression, 0.5)] {
        let (shards, target) = instance(task, 150, 5, 1, 17);
        let cfg = TeachingConfig {
            lambda,
            lambda_alpha: 0.0,
            lambda_theta: 0.0,
            rounds: 300,
            inner_max_iter: 500,
            inner_tol: 1e-14,
            ..TeachingConfig::for_task(task)
        };
        let run = run_teaching(&shards, &target, task, &cfg).unwrap();
        let primal = fit_primal(task.loss(), &shards[0].examples, lambda, &FitOptions::default()).unwrap();
        let err = dist(&run.state.theta_tilde, &primal.theta) / norm(&primal.theta);
        assert!(err <= 1e-4, "{task}: {err}");
    }
}

#[test]
fn coordinator_sees_only_fixed_size_aggregates() {
    // two shards of very different sizes produce messages of identical shape
    let (shards, _) = instance(Task::Classification, 40, 3, 1, 3);
    let small = TeacherShard {
        teacher_id: 1,
        examples: shards[0].examples[..2].to_vec(),
        global_offsets: vec![0, 1],
    };
    let big = Teacher::new(&shards[0], Task::Classification, 3).unwrap();
    let little = Teacher::new(&small, Task::Classification, 3).unwrap();
    assert_eq!(big.local_gram().reals(), 9);
    assert_eq!(little.local_gram().reals(), 9);
    assert_eq!(big.aggregate(&vec![0.5; 40]).reals(), 3);
    assert_eq!(little.aggregate(&[0.5, 0.5]).reals(), 3);
    // and the coordinator API accepts nothing else
    let c = Coordinator::new(3, 1.0);
    let theta = c.assemble(&[big.aggregate(&vec![0.0; 40]), little.aggregate(&[1.0, 0.0])]).unwrap();
    let z0: Vec<f64> = small.examples[0].features.iter().map(|x| x * small.examples[0].label).collect();
    assert_eq!(theta, z0);
}

#[test]
fn selection_examples() {
    let shards = vec![
        TeacherShard {
            teacher_id: 0,
            examples: vec![Example::new(vec![1.0], 0.0); 2],
            global_offsets: vec![0, 1],
        },
        TeacherShard {
            teacher_id: 1,
            examples: vec![Example::new(vec![1.0], 0.0); 2],
            global_offsets: vec![2, 3],
        },
    ];
    let state = DualState {
        alpha: vec![vec![0.9, -0.5], vec![0.1, 0.05]],
        theta_tilde: vec![0.0],
        round: 0,
    };
    let sel = select_subset(&state, &shards, 2).unwrap();
    assert_eq!(sel.selected_global(&shards), vec![0, 1]);
    assert_eq!(sel.masks, vec![vec![true, true], vec![false, false]]);
    assert_eq!(sel.global_ranking, vec![0, 1, 2, 3]);

    let tied = DualState {
        alpha: vec![vec![0.3, 0.3], vec![0.3, 0.3]],
        ..state.clone()
    };
    assert_eq!(select_subset(&tied, &shards, 1).unwrap().selected_global(&shards), vec![0]);
    assert!(select_subset(&state, &shards, 0).is_err());
    assert!(select_subset(&state, &shards, 5).is_err());
}

#[test]
fn budget_fraction_rounding() {
    assert_eq!(collab_teach::engine::budget_for(3.7e-2, 5000), 185);
    assert_eq!(collab_teach::engine::budget_for(1e-9, 5000), 1);
    assert_eq!(collab_teach::engine::budget_for(1.0, 5000), 5000);
}

#[test]
fn full_budget_sweep_equals_full_fit() {
    let ds = gen_synthetic(&SyntheticSpec::new(Task::Classification, 80, 3, 2, 9)).unwrap();
    let shards = shard(&ds, 2, 9).unwrap();
    let target = vec![1.0, -1.0, 0.5];
    let cfg = small_cfg(Task::Classification);
    let table = sweep_budgets(&shards, &target, Task::Classification, &cfg, &[1.0]).unwrap();
    let row = &table.rows[0];
    assert_eq!(row.budget, 80);
    assert_eq!(row.metrics.teaching_ratio, 1.0);
    assert_eq!(row.metrics.risk_euclid, table.risk_full);
    assert!(sweep_budgets(&shards, &target, Task::Classification, &cfg, &[0.5, 0.1]).is_err());
    assert!(sweep_budgets(&shards, &target, Task::Classification, &cfg, &[0.0]).is_err());
}

#[test]
fn conjugate_domain_errors_surface_from_objective() {
    let (shards, target) = instance(Task::Classification, 4, 2, 1, 1);
    let cfg = small_cfg(Task::Classification);
    let alpha = vec![vec![1.5, 0.0, 0.0, 0.0]];
    let w = vec![vec![1.0; 4]];
    assert!(objective(&alpha, &shards, &target, Task::Classification, &cfg, &w).is_err());
    assert!(conjugate(collab_teach::LossKind::Logistic, 1.5, 1.0).is_err());
}

