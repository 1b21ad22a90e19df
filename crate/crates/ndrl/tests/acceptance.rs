//! End-to-end acceptance checks, one test per shipped guarantee. Each test
//! prints a single PASS line on success; a failed assertion is the FAIL line.

use ndrl::child_agent::{batch_gradient, batch_loss, QNetwork, Transition};
use ndrl::config::RunConfig;
use ndrl::crop_env::{
    calibrate, default_param_grid, generate_weather, load_treatments, run_season, Observation,
    SoilParams, YearProfile, TREATMENTS_CSV,
};
use ndrl::metrics::{iwp, npfp};
use ndrl::parent_agent::{ParentStateKey, QTable, ToyMdp};
use ndrl::policy::{gaussian_probs, mixed_probs};
use ndrl::rewards::{
    child_reward, indicator_penalty, indicator_reward, parent_reward, Budget, Resource,
    RewardWeights, StressContext, PARENT_BUDGET_PENALTY,
};
use ndrl::spaces::{child_action_space, parent_action_grid, ParentAction, CHILD_ACTIONS};
use ndrl::trainer::{train, Algorithm};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn productivity_metrics_match_field_table() {
    // (irrigation mm, nitrogen kg/ha, yield kg/ha) -> printed (IWP, NPFP).
    let rows = [
        (537.0, 250.0, 6110.0, 1.14, 24.44),
        (537.0, 250.0, 7414.0, 1.38, 29.66),
    ];
    for (i, n, y, want_iwp, want_npfp) in rows {
        let got_iwp = iwp(y, i).unwrap();
        let got_npfp = npfp(y, n).unwrap();
        assert!(
            (got_iwp - want_iwp).abs() <= 0.01,
            "IWP for yield {y}: got {got_iwp}, want {want_iwp} +- 0.01"
        );
        assert!(
            (got_npfp - want_npfp).abs() <= 0.01,
            "NPFP for yield {y}: got {got_npfp}, want {want_npfp} +- 0.01"
        );
    }
    println!("PASS productivity metrics match the field table within 0.01");
}

#[test]
fn action_space_combinatorics() {
    let grid = parent_action_grid(60.0, 20.0).unwrap();
    assert_eq!(grid.len(), 256, "parent grid size");

    // Every reachable center yields exactly 25 points.
    for ci in (0..=60).step_by(5) {
        for cn in (0..=60).step_by(5) {
            let space =
                child_action_space((ci as f64, cn as f64), (20.0, 20.0), (60.0, 60.0)).unwrap();
            assert_eq!(space.points().count(), CHILD_ACTIONS);
        }
    }

    let low = child_action_space((0.0, 0.0), (20.0, 20.0), (60.0, 60.0)).unwrap();
    assert_eq!(low.axis_i, [0.0, 5.0, 10.0, 15.0, 20.0]);
    assert_eq!(low.axis_n, [0.0, 5.0, 10.0, 15.0, 20.0]);
    let high = child_action_space((60.0, 60.0), (20.0, 20.0), (60.0, 60.0)).unwrap();
    assert_eq!(high.axis_i, [40.0, 45.0, 50.0, 55.0, 60.0]);
    assert_eq!(high.axis_n, [40.0, 45.0, 50.0, 55.0, 60.0]);
    println!("PASS action spaces: 256 parent actions, 25-point child grids, correct clipping");
}

#[test]
fn exploration_distribution_properties() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);

    // Normalization over 10,000 randomized configurations.
    for _ in 0..10_000 {
        let center = (rng.gen_range(0.0..=60.0), rng.gen_range(0.0..=60.0));
        let sigma = (rng.gen_range(1.0..=25.0), rng.gen_range(1.0..=25.0));
        let alpha = rng.gen_range(0.0..=1.0);
        let space = child_action_space(center, (20.0, 20.0), (60.0, 60.0)).unwrap();
        let dist = mixed_probs(&gaussian_probs(&space, sigma), alpha).unwrap();
        let sum: f64 = dist.probs.iter().sum();
        assert!(
            (sum - 1.0).abs() <= 1e-9,
            "probabilities sum to {sum} for center {center:?}, sigma {sigma:?}, alpha {alpha}"
        );
    }

    // Fully uniform mixture.
    let space = child_action_space((30.0, 30.0), (20.0, 20.0), (60.0, 60.0)).unwrap();
    let uniform = mixed_probs(&gaussian_probs(&space, (10.0, 10.0)), 1.0).unwrap();
    for p in uniform.probs {
        assert_eq!(p, 1.0 / CHILD_ACTIONS as f64);
    }

    // Unclipped grid at sigma 10: compare against an independent brute-force
    // normalization over the same 25 offsets.
    let got = gaussian_probs(&space, (10.0, 10.0));
    let mut brute = [0.0f64; CHILD_ACTIONS];
    let offsets = [-20.0, -10.0, 0.0, 10.0, 20.0];
    let mut total = 0.0;
    for (r, di) in offsets.iter().enumerate() {
        for (c, dn) in offsets.iter().enumerate() {
            let w = f64::exp(-(di * di + dn * dn) / (2.0 * 10.0 * 10.0));
            brute[r * 5 + c] = w;
            total += w;
        }
    }
    for b in &mut brute {
        *b /= total;
    }
    for (g, b) in got.probs.iter().zip(&brute) {
        assert!((g - b).abs() <= 1e-3, "grid prob {g} vs brute force {b}");
    }
    assert!((got.probs[12] - 0.1621).abs() <= 1e-3, "center probability");
    assert!((got.probs[0] - 0.00297).abs() <= 1e-3, "corner probability");
    println!("PASS exploration distributions: normalized, uniform at alpha=1, Gaussian weights");
}

#[test]
fn learning_correctness_gradients_and_tabular_convergence() {
    // (a) Backprop vs central finite differences on 100 random small cases.
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let hidden = rng.gen_range(3..=8);
        let out = rng.gen_range(2..=25);
        let sizes = [4, hidden, out];
        let net = QNetwork::new(&sizes, &mut rng);
        let batch: Vec<Transition> = (0..rng.gen_range(1..=4))
            .map(|_| Transition {
                s: std::array::from_fn(|_| rng.gen_range(-1.0..1.0)),
                a: rng.gen_range(0..out),
                r: rng.gen_range(-1.0..1.0),
                s_next: std::array::from_fn(|_| rng.gen_range(-1.0..1.0)),
                terminal: rng.gen_bool(0.5),
            })
            .collect();
        let targets: Vec<f64> = (0..batch.len()).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let grad = batch_gradient(&net, &batch, &targets);
        let eps = 1e-5;
        for layer in 0..sizes.len() - 1 {
            for (param, analytic) in [
                (0usize, &grad.weights[layer]),
                (1, &grad.biases[layer]),
            ] {
                for k in 0..analytic.len() {
                    let mut plus = net.clone();
                    let mut minus = net.clone();
                    if param == 0 {
                        plus.weights[layer][k] += eps;
                        minus.weights[layer][k] -= eps;
                    } else {
                        plus.biases[layer][k] += eps;
                        minus.biases[layer][k] -= eps;
                    }
                    let numeric = (batch_loss(&plus, &batch, &targets)
                        - batch_loss(&minus, &batch, &targets))
                        / (2.0 * eps);
                    let a = analytic[k];
                    let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1.0);
                    worst = worst.max(rel);
                }
            }
        }
    }
    assert!(worst <= 1e-4, "max relative gradient error {worst}");

    // (b) Tabular Q-learning vs an independent value-iteration oracle.
    let mdp = ToyMdp::shipped();
    let mut v = [0.0f64; 2];
    for _ in 0..4000 {
        let mut next = [0.0f64; 2];
        for s in 0..2 {
            next[s] = (0..4)
                .map(|a| mdp.rewards[s][a] + mdp.gamma * v[mdp.next_state(s)])
                .fold(f64::NEG_INFINITY, f64::max);
        }
        v = next;
    }
    let q_star = |s: usize, a: usize| mdp.rewards[s][a] + mdp.gamma * v[mdp.next_state(s)];

    let actions: Vec<ParentAction> = (0..4)
        .map(|a| ParentAction {
            i1: a as f64,
            n1: 0.0,
            i2: 0.0,
            n2: 0.0,
        })
        .collect();
    let key = |s: usize| ParentStateKey {
        cycle: s as u8,
        prev_action: [0; 4],
    };
    let mut table = QTable::new(0.1, mdp.gamma).unwrap();
    let mut converged_at = None;
    'sweeps: for sweep in 0..10_000 {
        for s in 0..2 {
            for (a_idx, a) in actions.iter().enumerate() {
                table.update(
                    key(s),
                    a,
                    mdp.rewards[s][a_idx],
                    Some(key(mdp.next_state(s))),
                    &actions,
                );
            }
        }
        let max_err = (0..2)
            .flat_map(|s| (0..4).map(move |a| (s, a)))
            .map(|(s, a)| (table.lookup(key(s), &actions[a]) - q_star(s, a)).abs())
            .fold(0.0f64, f64::max);
        if max_err < 1e-6 {
            converged_at = Some(sweep);
            break 'sweeps;
        }
    }
    assert!(
        converged_at.is_some(),
        "tabular Q-learning did not reach the value-iteration fixed point in 10,000 sweeps"
    );
    println!(
        "PASS learning correctness: gradient check max rel err {worst:.2e}, tabular convergence in {} sweeps",
        converged_at.unwrap() + 1
    );
}

#[test]
fn reward_semantics_truth_tables_and_budget_penalty() {
    let budget = Budget::CONTROL;
    let weights = RewardWeights {
        w_i: 100.0,
        w_n: 100.0,
    };

    // Expected indicator outputs for every (wsf, nsf, relation-to-average)
    // combination, stated as data: relation is -1 below, 0 equal, 1 above.
    // Penalty fires on over-application unless both stresses are present,
    // and on under-application under joint stress. Reward fires on
    // above-average application under any stress.
    let table = [
        // (wsf, nsf, rel, penalty, reward)
        (0u8, 0u8, -1i8, 0u8, 0u8),
        (0, 0, 0, 0, 0),
        (0, 0, 1, 1, 0),
        (0, 1, -1, 0, 0),
        (0, 1, 0, 0, 0),
        (0, 1, 1, 1, 1),
        (1, 0, -1, 0, 0),
        (1, 0, 0, 0, 0),
        (1, 0, 1, 1, 1),
        (1, 1, -1, 1, 0),
        (1, 1, 0, 0, 0),
        (1, 1, 1, 0, 1),
    ];
    for resource in [Resource::Irrigation, Resource::Nitrogen] {
        let avg = match resource {
            Resource::Irrigation => budget.avg_i(),
            Resource::Nitrogen => budget.avg_n(),
        };
        for &(wsf, nsf, rel, want_pen, want_rew) in &table {
            let amount = avg + rel as f64 * 5.0;
            let ctx = StressContext {
                wsf,
                nsf,
                applied_i: if resource == Resource::Irrigation { amount } else { avg },
                applied_n: if resource == Resource::Nitrogen { amount } else { avg },
            };
            assert_eq!(
                indicator_penalty(&ctx, resource, &budget),
                want_pen,
                "penalty for {resource:?} wsf={wsf} nsf={nsf} rel={rel}"
            );
            assert_eq!(
                indicator_reward(&ctx, resource, &budget),
                want_rew,
                "reward for {resource:?} wsf={wsf} nsf={nsf} rel={rel}"
            );
        }
    }

    // Documented composite cases, including the overlap that nets to zero.
    let over_both = StressContext {
        wsf: 0,
        nsf: 0,
        applied_i: 50.0,
        applied_n: 25.0,
    };
    assert_eq!(child_reward(6110.0, &over_both, &weights, &budget), 5910.0);
    let stressed_over = StressContext {
        wsf: 1,
        nsf: 1,
        applied_i: 50.0,
        applied_n: 25.0,
    };
    assert_eq!(child_reward(6110.0, &stressed_over, &weights, &budget), 6310.0);
    let overlap = StressContext {
        wsf: 1,
        nsf: 0,
        applied_i: 50.0,
        applied_n: 10.0,
    };
    assert_eq!(child_reward(6110.0, &overlap, &weights, &budget), 6110.0);

    // The flat penalty dominates whenever either budget is met or exceeded.
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..1000 {
        let over_i = rng.gen_bool(0.5);
        let cum_i = if over_i {
            rng.gen_range(537.0..800.0)
        } else {
            rng.gen_range(0.0..537.0)
        };
        let cum_n = if over_i && rng.gen_bool(0.5) {
            rng.gen_range(0.0..250.0)
        } else {
            rng.gen_range(250.0..400.0)
        };
        let h_c = rng.gen_range(0.0..9000.0);
        let h_p = rng.gen_range(0.0..9000.0);
        let q_cmax = rng.gen_range(-9000.0..9000.0);
        let r = parent_reward(cum_i, cum_n, h_c, h_p, q_cmax, &budget);
        assert_eq!(r, PARENT_BUDGET_PENALTY, "cum_i={cum_i} cum_n={cum_n}");
    }
    println!("PASS reward semantics: indicator truth tables, overlap netting, budget penalty");
}

#[test]
fn calibration_fits_field_treatments() {
    let treatments = load_treatments(TREATMENTS_CSV).unwrap();
    let dry = generate_weather(42, YearProfile::Dry2023);
    let wet = generate_weather(42, YearProfile::Wet2024);
    let weather_for = |p: YearProfile| match p {
        YearProfile::Dry2023 => &dry[..],
        YearProfile::Wet2024 => &wet[..],
    };
    let observations: Vec<Observation> = treatments
        .iter()
        .map(|t| Observation {
            schedule: t.schedule.clone(),
            weather: weather_for(t.profile),
            observed_yield: t.observed_yield,
        })
        .collect();
    let (params, nrmse_pct) = calibrate(&default_param_grid(), &observations).unwrap();
    assert!(nrmse_pct <= 15.0, "calibration nRMSE {nrmse_pct}% > 15%");

    let predicted = |name: &str| {
        let t = treatments.iter().find(|t| t.name == name).unwrap();
        run_season(&t.schedule, weather_for(t.profile), &params)
            .unwrap()
            .yield_kgha
    };
    let full = predicted("Tr0_23");
    let deficit = predicted("Tr3_23");
    assert!(
        full > deficit,
        "full treatment should outyield the deficit treatment: {full} vs {deficit}"
    );
    println!("PASS calibration: nRMSE {nrmse_pct:.2}% <= 15%, full vs deficit ordering preserved");
}

#[test]
fn nested_agent_beats_flat_baseline_across_seeds() {
    let params = SoilParams::default_calibrated();
    let mut wins = 0;
    let mut lines = Vec::new();
    for seed in 1..=5u64 {
        let mut cfg = RunConfig::default();
        cfg.seed = seed;
        let weather = generate_weather(cfg.weather_seed, cfg.year_profile);
        let nested = train(&cfg, Algorithm::Nested, &weather, &params).unwrap();
        let flat = train(&cfg, Algorithm::FlatDqn, &weather, &params).unwrap();
        let nb = nested.best.expect("nested run found no budget-respecting episode");
        let fb = flat.best.expect("flat run found no budget-respecting episode");
        for best in [&nb, &fb] {
            let total_i: f64 = best.schedule.events().iter().map(|e| e.irrigation).sum();
            let total_n: f64 = best.schedule.events().iter().map(|e| e.nitrogen).sum();
            assert!(
                total_i <= 537.0 && total_n <= 250.0,
                "reported best schedule exceeds a budget: {total_i} mm, {total_n} kg/ha"
            );
        }
        if nb.yield_kgha >= fb.yield_kgha {
            wins += 1;
        }
        lines.push(format!(
            "seed {seed}: nested {:.1} vs flat {:.1}",
            nb.yield_kgha, fb.yield_kgha
        ));
    }
    assert!(
        wins >= 4,
        "nested won only {wins}/5 seeds: {}",
        lines.join("; ")
    );
    println!(
        "PASS end-to-end comparison: nested >= flat in {wins}/5 seeds, all bests within budget"
    );
}

#[test]
fn training_runs_are_reproducible() {
    let params = SoilParams::default_calibrated();
    for algorithm in [Algorithm::Nested, Algorithm::FlatDqn] {
        let mut cfg = RunConfig::default();
        cfg.seed = 7;
        cfg.episodes = 200;
        let weather = generate_weather(cfg.weather_seed, cfg.year_profile);
        let a = train(&cfg, algorithm, &weather, &params).unwrap();
        let b = train(&cfg, algorithm, &weather, &params).unwrap();
        assert_eq!(a.log_csv(), b.log_csv(), "{algorithm:?} training log differs");
        let sched = |o: &ndrl::trainer::TrainingOutcome| {
            o.best.as_ref().map(|x| x.schedule.to_csv())
        };
        assert_eq!(sched(&a), sched(&b), "{algorithm:?} best schedule differs");
        assert!(a.best.is_some(), "{algorithm:?} short run found no best episode");
    }
    println!("PASS reproducibility: repeated runs are byte-identical");
}
