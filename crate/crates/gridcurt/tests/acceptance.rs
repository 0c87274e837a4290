//! Acceptance suite: one test per exit criterion, each printing a
//! [PASS]/[FAIL] line with the measured numbers (visible with
//! `cargo test --test acceptance -- --nocapture`).

mod common;

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use gridcurt::eval::{bench, evaluate};
use gridcurt::grid::Grid;
use gridcurt::nn::{Mlp, OutputActivation};
use gridcurt::opf::{brute_force_opf, check_feasibility, solve_opf, OpfOptions};
use gridcurt::powerflow::{mismatch, solve_power_flow, InjectionSet, PfOptions};
use gridcurt::rl::{reward_from_terms, train, TrainConfig};
use gridcurt::scenario::{augment, generate_profiles, label_violations, Provenance, SupplyTask};
use gridcurt::synth::{build_feeder, FeederConfig};

use common::{desk_datasets, desk_feeder, gauss_seidel, verdict};

/// Closed-form receiving-end voltage of a slack--load pair: the high root
/// of U^2 + (2(Pr + Qx) - 1)U + (P^2 + Q^2)(r^2 + x^2) = 0, U = |V2|^2.
fn two_bus_voltage(p_load: f64, q_load: f64, r: f64, x: f64) -> f64 {
    let b = 2.0 * (p_load * r + q_load * x) - 1.0;
    let c = (p_load * p_load + q_load * q_load) * (r * r + x * x);
    (((-b) + (b * b - 4.0 * c).sqrt()) / 2.0).sqrt()
}

#[test]
fn criterion_power_flow_correctness() {
    let begin = Instant::now();
    let opts = PfOptions::default();

    // Analytic two-bus case.
    let two_bus = gridcurt::grid::load_grid(
        std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/two_bus.json"),
    )
    .unwrap();
    let mut worst_analytic: f64 = 0.0;
    for (p, q) in [(0.1, 0.0), (0.5, 0.1), (1.2, 0.4), (2.0, 0.0)] {
        let mut inj = InjectionSet::zeros(2);
        inj.p[1] = -p;
        inj.q[1] = -q;
        let sol = solve_power_flow(&two_bus, &inj, &opts).unwrap();
        assert!(sol.converged);
        worst_analytic = worst_analytic.max((sol.v_mag[1] - two_bus_voltage(p, q, 0.0, 0.1)).abs());
    }

    // Newton against the Gauss-Seidel oracle on 50 random feeders with
    // n <= 10 and loads far below the ratings.
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst_gap: f64 = 0.0;
    let mut worst_mismatch: f64 = 0.0;
    for trial in 0..50 {
        let config = FeederConfig {
            n_buses: rng.random_range(3..=10),
            ..FeederConfig::default()
        };
        let grid = build_feeder(&config, 1000 + trial).unwrap();
        let n = grid.bus_count();
        let mut inj = InjectionSet::zeros(n);
        for bus in 0..n {
            if bus == grid.slack_bus() {
                continue;
            }
            inj.p[bus] = rng.random_range(-0.02..0.02);
            inj.q[bus] = rng.random_range(-0.008..0.008);
        }
        let sol = solve_power_flow(&grid, &inj, &opts).unwrap();
        assert!(sol.converged, "trial {trial} did not converge");

        let (gs_mag, _, gs_ok) = gauss_seidel(&grid, &inj, 1e-10, 100_000);
        assert!(gs_ok, "oracle did not converge on trial {trial}");
        for (a, b) in sol.v_mag.iter().zip(&gs_mag) {
            worst_gap = worst_gap.max((a - b).abs());
        }

        // Convergence certificate via the independent mismatch operation.
        let (dp, dq) = mismatch(&grid, &inj, &sol.v_mag, &sol.v_ang).unwrap();
        for bus in 0..n {
            if bus == grid.slack_bus() {
                continue;
            }
            worst_mismatch = worst_mismatch.max(dp[bus].abs()).max(dq[bus].abs());
        }
    }

    let elapsed = begin.elapsed().as_secs_f64();
    verdict(
        "power-flow correctness",
        worst_analytic < 1e-6 && worst_gap < 1e-6 && worst_mismatch <= 1e-8 && elapsed < 10.0,
        &format!(
            "analytic gap {worst_analytic:.2e} (< 1e-6), oracle gap {worst_gap:.2e} (< 1e-6), \
             mismatch {worst_mismatch:.2e} (<= 1e-8), {elapsed:.1} s (< 10 s)"
        ),
    );
}

#[test]
fn criterion_reward_algebra() {
    // Straight-line transcription of the reward rule, kept independent of
    // the library implementation.
    fn reference(lv: f64, li: f64, cp: f64, s: f64) -> f64 {
        if lv + li > 0.0 {
            -f64::min(lv / s + li, 1.0)
        } else {
            1.0 - cp / s
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(555);
    let lambda = 2.0;
    let mut worst_clean: f64 = f64::INFINITY;
    let mut best_violating: f64 = f64::NEG_INFINITY;
    let mut agree = true;
    for _ in 0..10_000 {
        let s = rng.random_range(1e-3..1.0_f64);
        let cp = rng.random_range(0.0..s / lambda);
        let (lv, li) = if rng.random::<f64>() < 0.5 {
            (0.0, 0.0)
        } else {
            // At least one strictly positive excess.
            let lv = rng.random_range(0.0..0.3_f64);
            let li = rng.random_range(0.0..0.8_f64);
            if lv + li == 0.0 {
                (1e-6, 0.0)
            } else {
                (lv, li)
            }
        };
        let got = reward_from_terms(lv, li, cp, s);
        agree &= got == reference(lv, li, cp, s);
        assert!((-1.0..=1.0).contains(&got), "reward {got} out of bounds");
        if lv + li > 0.0 {
            best_violating = best_violating.max(got);
        } else {
            worst_clean = worst_clean.min(got);
        }
    }
    verdict(
        "reward algebra",
        agree && best_violating < 0.0 && 0.0 < worst_clean,
        &format!(
            "10^4 states in [-1, 1], exact match with the reference formula: {agree}, \
             separation: worst clean {worst_clean:.4} > 0 > best violating {best_violating:.4}"
        ),
    );
}

#[test]
fn criterion_gradient_correctness() {
    let begin = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut worst_rel: f64 = 0.0;
    for _ in 0..100 {
        let hidden_layers = rng.random_range(0..=2);
        let mut dims = vec![rng.random_range(1..=16)];
        for _ in 0..hidden_layers {
            dims.push(rng.random_range(1..=16));
        }
        dims.push(rng.random_range(1..=16));
        let act = if rng.random::<bool>() { OutputActivation::Tanh } else { OutputActivation::Identity };
        let net = Mlp::new(&dims, act, &mut rng);
        let input: Vec<f64> = (0..dims[0]).map(|_| rng.random_range(-1.0..1.0)).collect();
        let weights: Vec<f64> =
            (0..*dims.last().unwrap()).map(|_| rng.random_range(-1.0..1.0)).collect();

        let cache = net.forward_cached(&input).unwrap();
        let (grads, _) = net.backward(&cache, &weights).unwrap();

        let objective = |probe: &Mlp| -> f64 {
            probe
                .forward(&input)
                .unwrap()
                .iter()
                .zip(&weights)
                .map(|(o, w)| o * w)
                .sum()
        };
        let h = 1e-5;
        for layer in 0..net.layers.len() {
            let params = net.layers[layer].weights.data.len() + net.layers[layer].bias.len();
            for idx in 0..params {
                let tweak = |net: &Mlp, delta: f64| -> Mlp {
                    let mut probe = net.clone();
                    let l = &mut probe.layers[layer];
                    if idx < l.weights.data.len() {
                        l.weights.data[idx] += delta;
                    } else {
                        l.bias[idx - l.weights.data.len()] += delta;
                    }
                    probe
                };
                let expected = (objective(&tweak(&net, h)) - objective(&tweak(&net, -h))) / (2.0 * h);
                let got = if idx < grads.layers[layer].weights.data.len() {
                    grads.layers[layer].weights.data[idx]
                } else {
                    grads.layers[layer].bias[idx - grads.layers[layer].weights.data.len()]
                };
                let scale = expected.abs().max(got.abs());
                if scale > 1e-7 {
                    worst_rel = worst_rel.max((got - expected).abs() / scale);
                }
            }
        }
    }
    let elapsed = begin.elapsed().as_secs_f64();
    verdict(
        "gradient correctness",
        worst_rel < 1e-4 && elapsed < 60.0,
        &format!("100 random nets, worst relative error {worst_rel:.2e} (< 1e-4), {elapsed:.1} s (< 60 s)"),
    );
}

#[test]
fn criterion_opf_oracle_equivalence() {
    let begin = Instant::now();
    let feeder5 = gridcurt::grid::load_grid(
        std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/feeder5.json"),
    )
    .unwrap();

    // A second controllable bus (reactive boxes pinned) keeps the k = 2
    // oracle affordable: the Cartesian grid collapses to the two P axes.
    let mut feeder5_k2 = feeder5.clone();
    feeder5_k2.buses[2].controllable = true;
    feeder5_k2.buses[2].observable = true;
    feeder5_k2.buses[2].p_max = 0.06;
    feeder5_k2.buses[4].q_min = 0.0;
    feeder5_k2.buses[4].q_max = 0.0;

    let mut fixtures: Vec<(Grid, SupplyTask)> = Vec::new();
    for (i, pv) in [0.02, 0.04, 0.055, 0.07, 0.085, 0.09, 0.10, 0.11, 0.115, 0.12]
        .into_iter()
        .enumerate()
    {
        let mut p = vec![0.0; 5];
        p[4] = pv;
        p[1] = -0.004 * i as f64;
        p[3] = -0.002 * i as f64;
        let q = vec![0.0, p[1] * 0.3, 0.0, p[3] * 0.3, 0.0];
        fixtures.push((feeder5.clone(), SupplyTask::from_refs(&feeder5, i as u64, p, q).unwrap()));
    }
    for (i, (pv2, pv4)) in [
        (0.01, 0.02),
        (0.02, 0.05),
        (0.03, 0.07),
        (0.04, 0.08),
        (0.05, 0.09),
        (0.055, 0.10),
        (0.06, 0.11),
        (0.06, 0.12),
        (0.02, 0.12),
        (0.04, 0.115),
    ]
    .into_iter()
    .enumerate()
    {
        let mut p = vec![0.0; 5];
        p[2] = pv2;
        p[4] = pv4;
        p[1] = -0.003 * (i % 4) as f64;
        fixtures.push((
            feeder5_k2.clone(),
            SupplyTask::from_refs(&feeder5_k2, 100 + i as u64, p, vec![0.0; 5]).unwrap(),
        ));
    }
    assert_eq!(fixtures.len(), 20);

    let opts = OpfOptions::default();
    let mut worst_gap: f64 = f64::NEG_INFINITY;
    let mut all_feasible_pass = true;
    let mut feasible_count = 0;
    for (grid, task) in &fixtures {
        let sol = solve_opf(grid, task, &opts).unwrap();
        let oracle = brute_force_opf(grid, task, 101).unwrap();
        assert_eq!(
            sol.feasible, oracle.feasible,
            "feasibility verdicts disagree on task {}",
            task.index
        );
        if oracle.feasible {
            feasible_count += 1;
            let gap = (sol.objective - oracle.objective) / oracle.objective.abs().max(1e-12);
            worst_gap = worst_gap.max(gap);
            let report =
                check_feasibility(grid, task, &sol.p_set, &sol.q_set, 1e-4).unwrap();
            all_feasible_pass &= !report.has_violation;
        }
    }
    let elapsed = begin.elapsed().as_secs_f64();
    verdict(
        "opf oracle equivalence",
        worst_gap <= 0.02 && all_feasible_pass && elapsed < 300.0,
        &format!(
            "20 fixtures ({feasible_count} feasible), worst objective gap {:+.4} (<= +0.02), \
             independent feasibility checks pass: {all_feasible_pass}, {elapsed:.1} s (< 300 s)",
            worst_gap
        ),
    );
}

#[test]
fn criterion_end_to_end_learning() {
    let begin = Instant::now();
    let grid = desk_feeder();
    let controllable = grid.controllable_buses().len();
    let non_slack = grid.bus_count() - 1;
    let (test_data, train_data) = desk_datasets(&grid);
    assert!(
        (1_500..=3_000).contains(&train_data.len()),
        "desk-scale training set size {}",
        train_data.len()
    );

    let config = TrainConfig {
        seed: 0,
        total_steps: 50_000,
        hidden_width: 64,
        metrics_interval: 5_000,
        validation_tasks: 50,
        ..TrainConfig::default()
    };
    let output = train(&grid, &train_data, Some(&test_data), &config).unwrap();

    let (records, summary) = evaluate(&output.checkpoint, &grid, &test_data, 1e-4).unwrap();
    let violating: Vec<_> = records.iter().filter(|r| r.pre_any).collect();
    let resolved = violating.iter().filter(|r| r.resolved_all).count();
    let rate = resolved as f64 / violating.len().max(1) as f64;

    // Residual violations must still show a setpoint response: active
    // curtailment, or reactive adjustment where the active box is
    // degenerate (evening tasks with zero PV output).
    let residuals: Vec<_> = violating.iter().filter(|r| !r.resolved_all).collect();
    let responding = residuals
        .iter()
        .filter(|r| {
            r.relative_p_curtailment.unwrap_or(0.0) > 1e-6
                || r.relative_q_curtailment.unwrap_or(0.0) > 1e-6
        })
        .count();

    let elapsed = begin.elapsed().as_secs_f64();
    verdict(
        "end-to-end learning",
        rate >= 0.90 && responding == residuals.len(),
        &format!(
            "feeder {} buses / {controllable} of {non_slack} controllable, {} augmented tasks, \
             {} steps: resolved {resolved}/{} violating held-out tasks ({:.1}%, >= 90%), \
             upper {:.1}% lower {:.1}% overload {:.1}%, residuals with response {responding}/{} \
             (= 100%), {:.0} s",
            grid.bus_count(),
            train_data.len(),
            output.checkpoint.steps,
            violating.len(),
            100.0 * rate,
            summary.upper_voltage.solved_pct.unwrap_or(f64::NAN),
            summary.lower_voltage.solved_pct.unwrap_or(f64::NAN),
            summary.asset_overload.solved_pct.unwrap_or(f64::NAN),
            residuals.len(),
            elapsed
        ),
    );
}

#[test]
fn criterion_timing_direction() {
    let grid = desk_feeder();
    let (test_data, train_data) = desk_datasets(&grid);

    // Inference cost does not depend on training quality; a short run
    // provides the checkpoint.
    let config = TrainConfig {
        seed: 1,
        total_steps: 2_000,
        hidden_width: 64,
        metrics_interval: 1_000,
        ..TrainConfig::default()
    };
    let output = train(&grid, &train_data, None, &config).unwrap();
    let report = bench(&grid, &test_data, &output.checkpoint, &OpfOptions::default(), 5).unwrap();
    verdict(
        "timing direction",
        report.inference_per_task_s < report.opf_per_task_s,
        &format!(
            "agent {:.5} s/task < opf {:.5} s/task over {} tasks, {} repeats",
            report.inference_per_task_s, report.opf_per_task_s, report.tasks_used, report.repeats
        ),
    );
}

#[test]
fn criterion_augmentation_behavior() {
    let grid = desk_feeder();
    let (test_data, train_data) = desk_datasets(&grid);

    let mut references_at_max = true;
    let mut boxes_ordered = true;
    for task in &train_data.tasks {
        for f in &task.flex {
            references_at_max &= task.p_ref[f.bus] == f.p_max;
            boxes_ordered &= f.p_min <= f.p_max && f.q_min <= f.q_max;
        }
    }

    let violating = train_data
        .tasks
        .iter()
        .filter(|t| t.labels.as_ref().is_some_and(|l| l.has_violation))
        .count();
    let lower = train_data
        .tasks
        .iter()
        .filter(|t| t.labels.as_ref().is_some_and(|l| l.lower_voltage))
        .count();
    let share = lower as f64 / violating.max(1) as f64;

    let disjoint = test_data.provenance == Provenance::Original
        && train_data.provenance == Provenance::Augmented;

    verdict(
        "augmentation behavior",
        references_at_max && boxes_ordered && share >= 0.15 && disjoint,
        &format!(
            "references at box maximum: {references_at_max}, ordering preserved: {boxes_ordered}, \
             lower-band share {lower}/{violating} = {share:.3} (>= 0.15), provenance disjoint: {disjoint}"
        ),
    );
}

#[test]
fn criterion_determinism() {
    let grid = desk_feeder();

    // generate: identical bytes for identical (grid, config, seed).
    let profile = common::desk_profile(&grid);
    let gen_bytes = |seed: u64| {
        let data = generate_profiles(&grid, &profile, seed).unwrap();
        serde_json::to_string(&data).unwrap()
    };
    let generate_ok = gen_bytes(42) == gen_bytes(42) && gen_bytes(42) != gen_bytes(43);

    // train: byte-identical checkpoint and metrics at a fixed seed.
    let labeled =
        label_violations(&grid, generate_profiles(&grid, &profile, 42).unwrap(), 1e-4).unwrap();
    let train_data = augment(&grid, &labeled, &common::desk_augment(), 43).unwrap();
    let config = TrainConfig {
        seed: 9,
        total_steps: 1_500,
        hidden_width: 32,
        metrics_interval: 500,
        validation_tasks: 10,
        ..TrainConfig::default()
    };
    let train_bytes = || {
        let out = train(&grid, &train_data, Some(&labeled), &config).unwrap();
        (
            serde_json::to_string(&out.checkpoint).unwrap(),
            out.metrics.iter().map(|m| m.to_csv_row()).collect::<Vec<_>>().join("\n"),
        )
    };
    let (ckpt_a, metrics_a) = train_bytes();
    let (ckpt_b, metrics_b) = train_bytes();
    let train_ok = ckpt_a == ckpt_b && metrics_a == metrics_b;

    // eval: byte-identical records for the same checkpoint and data.
    let checkpoint: gridcurt::rl::AgentCheckpoint = serde_json::from_str(&ckpt_a).unwrap();
    let eval_bytes = || {
        let (records, summary) = evaluate(&checkpoint, &grid, &labeled, 1e-4).unwrap();
        serde_json::to_string(&records).unwrap() + &serde_json::to_string(&summary).unwrap()
    };
    let eval_ok = eval_bytes() == eval_bytes();

    verdict(
        "determinism",
        generate_ok && train_ok && eval_ok,
        &format!("generate byte-identical: {generate_ok}, train byte-identical: {train_ok}, eval byte-identical: {eval_ok}"),
    );
}
