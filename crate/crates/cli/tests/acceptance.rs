//! Acceptance suite: one test per criterion, each printing a PASS line with
//! its measured numbers. Tolerances are pinned in code.
//!
//! Criteria:
//! 1. repair efficacy on 20 x 100 episodes, det + stoch
//! 2. solver exactness against the exhaustive oracle (500 instances)
//! 3. case-one exclusion across all benchmark runs
//! 4. predicate-count scaling (sub-quadratic)
//! 5. exact-cover comparison on the hallway fixture + small-solve speed
//! 6. contingency fixture (two loops, alternate cover)
//! 7. state-space scaling (polynomial, slope >= 1)
//! 8. property suites standalone (lives in the core crate's tests)

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::time::Instant;

use spear_cli::bench::{
    bench_episode_reward, bench_predicate_scaling, bench_state_scaling, covered_disjoint,
    log_log_slope, median, BenchConfig, ModeSel, PredSource,
};
use spear_cli::scenario::{run_single_repair, CaseLabel, Scenario};
use spear_core::bitset::BitSet;
use spear_core::evac::DomainParams;
use spear_core::predicates::{build_coverage_matrices, layout_predicates};
use spear_core::rng::SeededRng;
use spear_core::setcover::{
    brute_force_cover, qm_exact_cover, solve_spear_ip, CoverCase, IpInstance, QmOutcome,
};
use spear_core::spear::{desired_trajectory, SpearConfig};

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("fixtures")
        .join(name)
}

/// The pinned benchmark recipe: 25x25 buildings with four compact fire
/// blobs, layout plus 300 random ball predicates and their pairwise
/// conjunctions, all exits known to the agent (the divergence is pure
/// fire-ignorance).
fn acceptance_recipe() -> BenchConfig {
    BenchConfig {
        width: 25,
        height: 25,
        n_rooms: 6,
        n_hallways: 20,
        n_exits: 3,
        fire_seeds: 4,
        fire_steps: 2,
        predicate_source: PredSource::Both,
        n_ball: 300,
        max_order: 2,
        n_episodes: 100,
        n_maps: 20,
        seed: 0,
        mode: ModeSel::Both,
        k: 10,
        reward_floor: -50.0,
        epsilon: 5.0,
        observe_all_exits: true,
    }
}

#[test]
fn criterion_1_repair_efficacy() {
    let cfg = acceptance_recipe();
    let report = bench_episode_reward(&cfg).expect("benchmark failed");

    for mode in ["det", "stoch"] {
        let rows: Vec<_> = report.rows.iter().filter(|r| r.mode == mode).collect();
        assert_eq!(rows.len(), cfg.n_maps * cfg.n_episodes);
        let n = rows.len() as f64;
        let mean_pre: f64 = rows.iter().map(|r| r.reward_pre).sum::<f64>() / n;
        let mean_post: f64 = rows.iter().map(|r| r.reward_post).sum::<f64>() / n;
        assert!(
            mean_post > mean_pre,
            "criterion 1 FAIL [{mode}]: mean post {mean_post:.2} <= mean pre {mean_pre:.2}"
        );
        println!(
            "criterion 1 [{mode}]: mean pre {mean_pre:.2} -> mean post {mean_post:.2} over {} episodes",
            rows.len()
        );
    }

    // deterministic mode: every case-one map ends within epsilon of optimal
    let mut case_one = 0;
    for m in report.maps.iter().filter(|m| m.mode == "det") {
        if m.case == CaseLabel::One {
            case_one += 1;
            let gap = m.return_optimal - m.return_post;
            assert!(
                gap.abs() <= cfg.epsilon,
                "criterion 1 FAIL: map {} post {:.2} vs optimal {:.2} (gap {gap:.2} > eps {})",
                m.map_seed,
                m.return_post,
                m.return_optimal,
                cfg.epsilon
            );
        }
    }
    assert!(
        case_one >= 3,
        "criterion 1 FAIL: only {case_one} deterministic case-one maps; recipe too thin to be meaningful"
    );
    let counts = label_counts(report.maps.iter().filter(|m| m.mode == "det"));
    println!("criterion 1 PASS: det case-one maps all within eps=5.0 of optimal ({case_one} maps; labels {counts:?})");
}

fn label_counts<'a, I: Iterator<Item = &'a spear_cli::bench::MapSummary>>(
    maps: I,
) -> BTreeMap<&'static str, usize> {
    let mut out = BTreeMap::new();
    for m in maps {
        *out.entry(m.case.as_str()).or_insert(0) += 1;
    }
    out
}

/// Module invariant behind criterion 1: on at least 50 random maps, every
/// case-one repair leaves the retrained agent no worse than before and
/// within epsilon of the optimal return.
#[test]
fn repair_efficacy_on_fifty_maps() {
    let cfg = BenchConfig {
        n_maps: 50,
        n_episodes: 1,
        mode: ModeSel::Det,
        ..acceptance_recipe()
    };
    let report = bench_episode_reward(&cfg).expect("benchmark failed");
    let mut case_one = 0;
    for m in &report.maps {
        if m.case != CaseLabel::One {
            continue;
        }
        case_one += 1;
        assert!(
            m.return_post >= m.return_pre,
            "map {}: post {} < pre {}",
            m.map_seed,
            m.return_post,
            m.return_pre
        );
        assert!(
            (m.return_optimal - m.return_post).abs() <= cfg.epsilon,
            "map {}: post {} vs optimal {}",
            m.map_seed,
            m.return_post,
            m.return_optimal
        );
    }
    assert!(case_one >= 10, "only {case_one} case-one maps in 50");
    println!("repair efficacy held on all {case_one} case-one maps of 50");
}

#[test]
fn criterion_2_solver_exactness() {
    let mut rng = SeededRng::new(0xACCE97);
    let mut cases = BTreeMap::new();
    for trial in 0..500 {
        let n_cols = rng.next_range(1, 15);
        let n_rows = rng.next_below(11);
        let n_v = rng.next_below(8);
        let mut u_rows = Vec::new();
        for _ in 0..n_rows {
            let mut row = BitSet::new(n_cols);
            for j in 0..n_cols {
                if rng.next_f64() < 0.3 {
                    row.insert(j);
                }
            }
            u_rows.push(row);
        }
        let mut v_rows = Vec::new();
        for _ in 0..n_v {
            let mut row = BitSet::new(n_cols);
            for j in 0..n_cols {
                if rng.next_f64() < 0.2 {
                    row.insert(j);
                }
            }
            v_rows.push(row);
        }
        let costs: Vec<f64> = (0..n_cols).map(|_| rng.next_range(1, 9) as f64).collect();
        let l = 1.0 + costs.iter().sum::<f64>();
        let inst = IpInstance::from_rows(u_rows, v_rows, costs, l).unwrap();
        let exact = solve_spear_ip(&inst);
        let brute = brute_force_cover(&inst).unwrap();
        assert_eq!(
            exact.case, brute.case,
            "criterion 2 FAIL: case mismatch on trial {trial}"
        );
        *cases.entry(format!("{:?}", exact.case)).or_insert(0usize) += 1;
        if exact.case != CoverCase::Two {
            assert_eq!(
                exact.objective, brute.objective,
                "criterion 2 FAIL: objective mismatch on trial {trial}"
            );
        }
    }
    println!("criterion 2 PASS: 500/500 instances match the exhaustive oracle exactly ({cases:?})");
}

#[test]
fn criterion_3_case_one_exclusion() {
    // across the full reward benchmark, every communicated feedback's
    // covered set is disjoint from its final desired trajectory
    let cfg = BenchConfig {
        n_episodes: 1, // exclusion is per repair, episodes don't matter
        ..acceptance_recipe()
    };
    let report = bench_episode_reward(&cfg).expect("benchmark failed");
    let mut checked = 0usize;
    for m in &report.maps {
        assert!(
            m.covered_disjoint_from_path,
            "criterion 3 FAIL: map {} mode {} violated the exclusion invariant",
            m.map_seed, m.mode
        );
        if m.case != CaseLabel::None {
            checked += 1;
        }
    }
    // recheck directly on freshly rerun repairs, with zero tolerance
    let params = cfg.domain_params(false);
    for m in 0..cfg.n_maps {
        let map_seed = cfg.seed.wrapping_add(m as u64);
        let sc = Scenario::generate(&params, map_seed, cfg.observe_all_exits).unwrap();
        let preds = spear_cli::bench::build_predicates(&cfg, &sc, map_seed).unwrap();
        let outcome = run_single_repair(&sc, &preds, &cfg.spear_config(map_seed)).unwrap();
        assert!(
            covered_disjoint(&outcome),
            "criterion 3 FAIL: map {map_seed} single repair"
        );
        for run in &outcome.rounds {
            if let (Some(last), false) = (run.loops.last(), run.feedback.is_empty()) {
                assert_eq!(last.case, CoverCase::One);
                for s in run.feedback.covered.iter() {
                    assert!(
                        !last.desired_path.contains(&s),
                        "criterion 3 FAIL: covered state {s} on the desired path"
                    );
                }
            }
        }
    }

    // and on the scaling-bench populations (ball predicates, varied sizes)
    for size in [15usize, 40] {
        let area_scale = (size * size) as f64 / 625.0;
        let scaled = BenchConfig {
            width: size,
            height: size,
            n_rooms: ((cfg.n_rooms as f64 * area_scale).round() as usize).clamp(2, 60),
            n_hallways: ((cfg.n_hallways as f64 * area_scale).round() as usize).clamp(4, 140),
            fire_seeds: ((cfg.fire_seeds as f64 * area_scale).round() as usize).clamp(1, 60),
            ..cfg.clone()
        };
        let params = scaled.domain_params(true);
        for m in 0..5u64 {
            let map_seed = cfg.seed.wrapping_add(m);
            let sc = Scenario::generate(&params, map_seed, cfg.observe_all_exits).unwrap();
            let preds = spear_core::predicates::ball_predicates(
                &sc.clean,
                100,
                1,
                (size / 5).max(4),
                SeededRng::derived(map_seed ^ size as u64, 0x9ED5).next_u64(),
            );
            let outcome = run_single_repair(&sc, &preds, &scaled.spear_config(map_seed)).unwrap();
            assert!(
                covered_disjoint(&outcome),
                "criterion 3 FAIL: size {size} map {map_seed}"
            );
        }
    }
    println!("criterion 3 PASS: exclusion invariant held on every repaired map ({checked} repaired map-modes)");
}

#[test]
fn criterion_4_predicate_scaling() {
    let cfg = BenchConfig {
        n_maps: 6,
        ..acceptance_recipe()
    };
    let counts = [100usize, 200, 500, 1000, 2000];
    let rows = bench_predicate_scaling(&cfg, &counts).expect("benchmark failed");
    let mut medians: Vec<(f64, f64)> = Vec::new();
    for &c in &counts {
        let mut times: Vec<f64> = rows
            .iter()
            .filter(|r| r.n_base_predicates == c && r.case == "one")
            .map(|r| r.solve_ms)
            .collect();
        assert!(
            !times.is_empty(),
            "criterion 4 FAIL: no case-one maps at {c} predicates"
        );
        medians.push((c as f64, median(&mut times)));
    }
    let slope = log_log_slope(&medians);
    assert!(
        slope < 1.5,
        "criterion 4 FAIL: log-log slope {slope:.3} >= 1.5 (medians {medians:?})"
    );
    println!(
        "criterion 4 PASS: case-one solve-time slope {slope:.3} < 1.5 over counts {counts:?} (medians ms: {:?})",
        medians.iter().map(|(_, t)| (t * 1000.0).round() / 1000.0).collect::<Vec<_>>()
    );
}

#[test]
fn criterion_5_exact_cover_comparison() {
    // the bundled hallway fixture: two fires inside a larger hallway
    // predicate with nothing finer available
    let burnt = spear_cli::io::load_map(&fixture("center_hallway.map")).unwrap();
    let params = DomainParams {
        width: burnt.width,
        height: burnt.height,
        move_success_prob: 1.0,
        ..DomainParams::default()
    };
    let sc = Scenario::from_burnt_map(burnt, params, &[0], Some((1, 1)), 0).unwrap();
    let preds = layout_predicates(&sc.clean);
    let idx = sc.clean.state_index();
    let fires: Vec<usize> = sc
        .burnt
        .fire_cells()
        .iter()
        .map(|&(x, y)| idx.id(x, y).unwrap())
        .collect();
    assert_eq!(fires.len(), 2);

    // exact cover fails: no subset of predicates unions to exactly the fires
    let target = BitSet::from_indices(sc.model.n_states(), fires.iter().copied());
    let qm = qm_exact_cover(&target, &preds).unwrap();
    assert_eq!(
        qm,
        QmOutcome::NoExactSolution,
        "criterion 5 FAIL: expected no exact cover"
    );

    // the penalized relaxation answers with the hallway predicate; pad the
    // vocabulary to exactly ten predicates for the timing claim
    let mut preds10 = preds.clone();
    let balls = spear_core::predicates::ball_predicates(&sc.clean, 10 - preds.len(), 1, 2, 5);
    for b in balls.iter() {
        preds10.push_base(&b.description, b.extension.clone(), Some(b.cost));
    }
    assert_eq!(preds10.len(), 10);
    let (_, pi_star) = spear_core::mdp::value_iteration(
        &sc.world,
        &sc.r_true,
        spear_core::mdp::DEFAULT_GAMMA,
        spear_core::mdp::DEFAULT_TOL,
    )
    .unwrap();
    let desired = desired_trajectory(&sc.world, &pi_star, sc.start);
    let cm = build_coverage_matrices(&fires, &desired, &preds10);
    let inst = IpInstance::new(&cm, preds10.costs()).unwrap();
    let started = Instant::now();
    let sol = solve_spear_ip(&inst);
    let solve_time = started.elapsed();
    assert_eq!(sol.case, CoverCase::One);
    assert_eq!(sol.selected.len(), 1);
    let chosen = &preds10.get(sol.selected[0]).description;
    assert_eq!(chosen, "in the center hallway");
    assert!(
        solve_time.as_secs_f64() < 1.0,
        "criterion 5 FAIL: {} predicate solve took {solve_time:?}",
        preds10.len()
    );

    // end to end, the scenario communicates the hallway and repairs fully
    let outcome = run_single_repair(&sc, &preds, &SpearConfig::default()).unwrap();
    let run = outcome.run().unwrap();
    assert_eq!(
        run.feedback.message,
        "There is a bad reward when in the center hallway"
    );
    println!(
        "criterion 5 PASS: exact cover has no solution, penalized cover picks the hallway in {:.3} ms at {} predicates",
        solve_time.as_secs_f64() * 1e3,
        preds10.len()
    );
}

#[test]
fn criterion_6_contingency_fixture() {
    let burnt = spear_cli::io::load_map(&fixture("junction_detour.map")).unwrap();
    let params = DomainParams {
        width: burnt.width,
        height: burnt.height,
        move_success_prob: 1.0,
        ..DomainParams::default()
    };
    let sc = Scenario::from_burnt_map(burnt, params, &[0], Some((1, 1)), 0).unwrap();
    let preds =
        spear_cli::io::load_predicates(&fixture("junction_detour.preds"), &sc.clean).unwrap();
    let cfg = SpearConfig {
        reward_floor: -30.0,
        ..SpearConfig::default()
    };
    let outcome = run_single_repair(&sc, &preds, &cfg).unwrap();
    let run = outcome.run().expect("fixture must produce feedback");

    // hand-traced oracle: the fire's only cover collides with the desired
    // path at the junction; penalizing the junction reroutes everything and
    // the junction-only predicate wins the second solve
    let idx = sc.clean.state_index();
    let fire = idx.id(4, 1).unwrap();
    let junction = idx.id(3, 1).unwrap();
    assert!(
        run.loop_count() >= 2,
        "criterion 6 FAIL: expected >= 2 loops, got {}",
        run.loop_count()
    );
    assert_eq!(
        run.case_sequence(),
        vec![CoverCase::Three, CoverCase::One],
        "criterion 6 FAIL: case sequence mismatch"
    );
    assert_eq!(run.loops[0].s_bar, vec![fire]);
    assert_eq!(run.loops[0].selected, vec![0]);
    assert_eq!(run.loops[1].s_bar, vec![junction]);
    assert_eq!(run.loops[1].selected, vec![1]);
    assert!(run.reward_modified);
    assert_eq!(
        run.feedback.message,
        "There is a bad reward when at the junction"
    );

    // the feedback is feasible and reroutes the agent to the other exit
    let post =
        spear_cli::scenario::det_return(&sc.world, &outcome.post_policy, &sc.r_true, sc.start);
    let pre = spear_cli::scenario::det_return(&sc.world, &outcome.pre_policy, &sc.r_true, sc.start);
    assert!(post > pre, "criterion 6 FAIL: post {post} <= pre {pre}");
    println!(
        "criterion 6 PASS: cases [three, one] over 2 loops, alternate cover {:?}, return {pre} -> {post}",
        run.feedback.descriptions
    );
}

#[test]
fn criterion_7_state_scaling() {
    let cfg = BenchConfig {
        n_maps: 10,
        n_ball: 100,
        ..acceptance_recipe()
    };
    let sizes = [15usize, 25, 40, 60];
    let rows = bench_state_scaling(&cfg, &sizes).expect("benchmark failed");
    let mut means: Vec<(f64, f64)> = Vec::new();
    for &s in &sizes {
        let times: Vec<f64> = rows
            .iter()
            .filter(|r| r.width == s)
            .map(|r| r.total_ms)
            .collect();
        assert_eq!(times.len(), cfg.n_maps);
        let mean = times.iter().sum::<f64>() / times.len() as f64;
        assert!(mean > 0.0 && mean.is_finite());
        means.push(((s * s) as f64, mean));
    }
    for w in means.windows(2) {
        assert!(
            w[1].1 > w[0].1,
            "criterion 7 FAIL: runtime not monotone in size ({means:?})"
        );
    }
    let slope = log_log_slope(&means);
    assert!(
        slope >= 1.0,
        "criterion 7 FAIL: log-log slope {slope:.3} < 1.0 ({means:?})"
    );
    println!(
        "criterion 7 PASS: end-to-end runtime slope {slope:.3} >= 1.0 over |S| in {:?} (means ms: {:?})",
        sizes.iter().map(|s| s * s).collect::<Vec<_>>(),
        means.iter().map(|(_, t)| t.round()).collect::<Vec<_>>()
    );
}

#[test]
fn criterion_8_property_suites_standalone() {
    // the suites themselves live in the core crate (unit tests and
    // tests/properties.rs) and run with plain `cargo test -p spear-core`,
    // no benchmark execution involved; this placeholder documents the
    // mapping and asserts the suite file ships with the crate
    let core_tests = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .parent()
        .unwrap()
        .join("core/tests/properties.rs");
    let text = std::fs::read_to_string(&core_tests).expect("core property suite missing");
    for needle in [
        "bellman_residual",
        "chi_square",
        "coverage_matrices_equal_membership",
        "composite_extensions_are_member_intersections",
        "feedback_generation_is_deterministic",
    ] {
        assert!(
            text.contains(needle),
            "criterion 8 FAIL: property suite lost its {needle} check"
        );
    }
    println!("criterion 8 PASS: property suites live in spear-core and run standalone");
}
