use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use spear_cli::bench::{
    bench_episode_reward, bench_predicate_scaling, bench_state_scaling, build_predicates,
    BenchConfig, ModeSel, PredSource,
};
use spear_cli::io::{
    load_map, load_predicates, save_map, save_predicates, write_report, OutFormat,
};
use spear_cli::scenario::{
    det_return, episode_return, optimal_policy, run_record_json, run_single_repair, CaseLabel,
    Scenario,
};
use spear_core::evac::{generate_map, place_fires, DomainParams};
use spear_core::rng::SeededRng;
use spear_core::spear::SpearError;

#[derive(Parser)]
#[command(
    name = "spear",
    version,
    about = "Policy elicitation toolkit: evacuation maps, semantic reward repairs, and scaling benchmarks"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate an evacuation map (optionally with fires) and save it.
    GenMap(GenMapArgs),
    /// Run the repair procedure on a map file and print the feedback.
    RunScenario(RunScenarioArgs),
    /// Paired pre/post episode rewards across seeded maps.
    BenchReward(BenchRewardArgs),
    /// Solver scaling in the number of predicates.
    BenchPredicates(BenchPredicatesArgs),
    /// End-to-end scaling in the state-space size.
    BenchStates(BenchStatesArgs),
}

#[derive(Args, Clone)]
struct DomainArgs {
    /// Grid size, e.g. 25x25
    #[arg(long, default_value = "25x25")]
    size: String,
    #[arg(long)]
    rooms: Option<usize>,
    #[arg(long)]
    hallways: Option<usize>,
    #[arg(long)]
    exits: Option<usize>,
    #[arg(long = "fire-seeds")]
    fire_seeds: Option<usize>,
    #[arg(long = "fire-steps")]
    fire_steps: Option<usize>,
}

impl DomainArgs {
    fn parse_size(&self) -> Result<(usize, usize)> {
        let (w, h) = self
            .size
            .split_once(['x', 'X'])
            .with_context(|| format!("--size must look like 25x25, got {:?}", self.size))?;
        Ok((
            w.parse().with_context(|| format!("bad width {w:?}"))?,
            h.parse().with_context(|| format!("bad height {h:?}"))?,
        ))
    }

    /// Applies size and any explicit overrides onto a benchmark recipe.
    fn apply(&self, cfg: &mut BenchConfig) -> Result<()> {
        let (w, h) = self.parse_size()?;
        cfg.width = w;
        cfg.height = h;
        if let Some(v) = self.rooms {
            cfg.n_rooms = v;
        }
        if let Some(v) = self.hallways {
            cfg.n_hallways = v;
        }
        if let Some(v) = self.exits {
            cfg.n_exits = v;
        }
        if let Some(v) = self.fire_seeds {
            cfg.fire_seeds = v;
        }
        if let Some(v) = self.fire_steps {
            cfg.fire_steps = v;
        }
        Ok(())
    }
}

#[derive(Args, Clone)]
struct PredArgs {
    /// Predicate vocabulary
    #[arg(long = "predicates", value_enum, default_value_t = PredSource::Layout)]
    predicates: PredSource,
    /// Number of random ball predicates (ball/both sources)
    #[arg(long = "n-ball", default_value_t = 100)]
    n_ball: usize,
    /// Maximum conjunction order for composite predicates
    #[arg(long = "max-order", default_value_t = 2)]
    max_order: usize,
}

#[derive(Args, Clone)]
struct SpearArgs {
    /// Forward rollout count
    #[arg(long, default_value_t = 10)]
    k: usize,
    /// Reward floor R_L
    #[arg(long = "rl", default_value_t = -50.0, allow_negative_numbers = true)]
    rl: f64,
    /// Optimality acceptance bound
    #[arg(long, default_value_t = 5.0)]
    epsilon: f64,
}

#[derive(Args, Clone)]
struct OutArgs {
    /// Output path (stdout when omitted)
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = OutFormat::Csv)]
    format: OutFormat,
}

#[derive(Args)]
struct GenMapArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    domain: DomainArgs,
    /// Where to write the map file
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    preds: PredArgs,
    /// Also emit a predicate file for the generated map
    #[arg(long = "preds-out")]
    preds_out: Option<PathBuf>,
}

#[derive(Args)]
struct RunScenarioArgs {
    /// Map file (fires included)
    #[arg(long)]
    map: PathBuf,
    /// Predicate file; otherwise predicates come from --predicates
    #[arg(long)]
    preds: Option<PathBuf>,
    #[command(flatten)]
    pred_args: PredArgs,
    /// Start cell as x,y (random floor cell when omitted)
    #[arg(long)]
    start: Option<String>,
    /// Observed exit indices into the map's exit list, e.g. 0 or 0,2
    #[arg(long, default_value = "0")]
    observed: String,
    #[arg(long, value_enum, default_value_t = ModeSel::Det)]
    mode: ModeSel,
    #[command(flatten)]
    spear: SpearArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write the structured run record as JSON
    #[arg(long)]
    record: Option<PathBuf>,
}

/// How many exits the simulated agent has observed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, clap::ValueEnum)]
enum ObservedSel {
    /// Every exit: divergence comes from the fires alone.
    #[default]
    All,
    /// One random exit per map.
    One,
}

#[derive(Args)]
struct BenchRewardArgs {
    #[arg(long, default_value_t = 20)]
    maps: usize,
    #[arg(long, default_value_t = 100)]
    episodes: usize,
    #[arg(long, value_enum, default_value_t = ModeSel::Both)]
    mode: ModeSel,
    /// Exit knowledge of the simulated agent
    #[arg(long, value_enum, default_value_t = ObservedSel::All)]
    observed: ObservedSel,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    domain: DomainArgs,
    #[command(flatten)]
    preds: PredArgs,
    #[command(flatten)]
    spear: SpearArgs,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args)]
struct BenchPredicatesArgs {
    /// Predicate counts to sweep, comma separated
    #[arg(long, default_value = "100,200,500,1000,2000")]
    counts: String,
    /// Extend the sweep to the full published range (5000, 10000)
    #[arg(long = "full-range", default_value_t = false)]
    full_range: bool,
    #[arg(long, default_value_t = 6)]
    maps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    domain: DomainArgs,
    #[command(flatten)]
    spear: SpearArgs,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args)]
struct BenchStatesArgs {
    /// Square grid sizes to sweep, comma separated
    #[arg(long, default_value = "15,25,40,60")]
    sizes: String,
    #[arg(long, default_value_t = 10)]
    repeats: usize,
    /// Ball predicate count held fixed across sizes
    #[arg(long = "n-ball", default_value_t = 100)]
    n_ball: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    spear: SpearArgs,
    #[command(flatten)]
    out: OutArgs,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let ok = matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion);
            let _ = e.print();
            return if ok {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            };
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.cmd {
        Cmd::GenMap(a) => gen_map(a),
        Cmd::RunScenario(a) => run_scenario(a),
        Cmd::BenchReward(a) => bench_reward(a),
        Cmd::BenchPredicates(a) => bench_predicates(a),
        Cmd::BenchStates(a) => bench_states(a),
    }
}

fn parse_list(text: &str, what: &str) -> Result<Vec<usize>> {
    text.split(',')
        .map(|t| {
            t.trim()
                .parse::<usize>()
                .with_context(|| format!("bad {what} entry {t:?}"))
        })
        .collect()
}

fn gen_map(a: GenMapArgs) -> Result<ExitCode> {
    let (width, height) = a.domain.parse_size()?;
    let params = DomainParams {
        width,
        height,
        n_rooms: a.domain.rooms.unwrap_or(10),
        n_hallways: a.domain.hallways.unwrap_or(40),
        n_exits: a.domain.exits.unwrap_or(5),
        fire_seeds: a.domain.fire_seeds.unwrap_or(0),
        fire_expansion_steps: a.domain.fire_steps.unwrap_or(0),
        ..DomainParams::default()
    };
    let mut map = generate_map(&params, a.seed)?;
    if params.fire_seeds > 0 {
        let fire_seed = SeededRng::derived(a.seed, 0xF14E).next_u64();
        map = place_fires(
            &map,
            params.fire_seeds,
            params.fire_expansion_steps,
            fire_seed,
        );
    }
    save_map(&a.out, &map)?;
    eprintln!(
        "wrote {} ({}x{}, {} rooms, {} hallways, {} exits, {} fire cells)",
        a.out.display(),
        map.width,
        map.height,
        map.room_regions.len(),
        map.hallway_regions.len(),
        map.exit_cells.len(),
        map.fire_cells().len()
    );
    if let Some(preds_out) = a.preds_out {
        let cfg = BenchConfig {
            predicate_source: a.preds.predicates,
            n_ball: a.preds.n_ball,
            max_order: a.preds.max_order,
            ..BenchConfig::default()
        };
        let sc = Scenario::from_burnt_map(map.clone(), params, &[0], None, a.seed)?;
        let preds = build_predicates(&cfg, &sc, a.seed)?;
        save_predicates(&preds_out, &preds, &sc.clean)?;
        eprintln!("wrote {} ({} predicates)", preds_out.display(), preds.len());
    }
    Ok(ExitCode::SUCCESS)
}

fn run_scenario(a: RunScenarioArgs) -> Result<ExitCode> {
    let burnt = load_map(&a.map)?;
    let stochastic = a.mode == ModeSel::Stoch;
    let params = DomainParams {
        width: burnt.width,
        height: burnt.height,
        move_success_prob: if stochastic { 0.85 } else { 1.0 },
        ..DomainParams::default()
    };

    let observed = parse_list(&a.observed, "--observed")?;
    let start_cell = match &a.start {
        Some(text) => {
            let (x, y) = text
                .split_once(',')
                .with_context(|| format!("--start must look like x,y, got {text:?}"))?;
            Some((x.trim().parse()?, y.trim().parse()?))
        }
        None => None,
    };
    let sc = Scenario::from_burnt_map(burnt, params, &observed, start_cell, a.seed)?;

    let preds = match &a.preds {
        Some(path) => load_predicates(path, &sc.clean)?,
        None => {
            let cfg = BenchConfig {
                predicate_source: a.pred_args.predicates,
                n_ball: a.pred_args.n_ball,
                max_order: a.pred_args.max_order,
                ..BenchConfig::default()
            };
            build_predicates(&cfg, &sc, a.seed)?
        }
    };

    let spear_cfg = spear_core::spear::SpearConfig {
        reward_floor: a.spear.rl,
        n_rollouts: a.spear.k,
        epsilon: a.spear.epsilon,
        rng_seed: a.seed,
        ..spear_core::spear::SpearConfig::default()
    };

    let outcome = run_single_repair(&sc, &preds, &spear_cfg)?;
    let pi_star = optimal_policy(&sc)?;

    let returns = |p: &spear_core::mdp::Policy, salt: u64| -> f64 {
        if stochastic {
            let n = 100;
            (0..n)
                .map(|e| {
                    let s = SeededRng::derived(a.seed ^ salt, e).next_u64();
                    episode_return(&sc.world, p, &sc.r_true, sc.start, s)
                })
                .sum::<f64>()
                / n as f64
        } else {
            det_return(&sc.world, p, &sc.r_true, sc.start)
        }
    };
    let pre = returns(&outcome.pre_policy, 0xAAAA);
    let post = returns(&outcome.post_policy, 0xBBBB);
    let opt = returns(&pi_star, 0xCCCC);

    let idx = sc.clean.state_index();
    let (sx, sy) = idx.cell(sc.start);
    println!("map: {}", a.map.display());
    println!("start: {sx},{sy}  observed exits: {:?}", a.observed);
    println!("case: {}  loops: {}", outcome.label.as_str(), outcome.loops);
    match (outcome.run(), &outcome.error) {
        (Some(run), _) => {
            if run.feedback.is_empty() {
                println!("feedback: (none needed)");
            } else {
                println!("feedback: {}", run.feedback.message);
                println!(
                    "covered states: {}  selected predicates: {:?}",
                    run.feedback.covered.count(),
                    run.feedback.selected
                );
            }
            println!(
                "case sequence: {:?}",
                run.case_sequence()
                    .iter()
                    .map(|c| format!("{c:?}"))
                    .collect::<Vec<_>>()
            );
        }
        (None, Some(e)) => println!("no feedback: {e}"),
        _ => {}
    }
    println!("return before update: {pre:.2}");
    println!("return after update:  {post:.2}");
    println!("optimal return:       {opt:.2}");

    if let Some(path) = &a.record {
        if let Some(run) = outcome.run() {
            let record = run_record_json(a.seed, &sc, &spear_cfg, run, pre, post, opt);
            std::fs::write(path, serde_json::to_string_pretty(&record)?)
                .with_context(|| format!("writing record {}", path.display()))?;
            eprintln!("wrote {}", path.display());
        }
    }

    if matches!(outcome.error, Some(SpearError::NoSolution { .. })) {
        return Ok(ExitCode::from(2));
    }
    Ok(ExitCode::SUCCESS)
}

fn bench_reward(a: BenchRewardArgs) -> Result<ExitCode> {
    let mut cfg = BenchConfig {
        n_maps: a.maps,
        n_episodes: a.episodes,
        mode: a.mode,
        seed: a.seed,
        predicate_source: a.preds.predicates,
        n_ball: a.preds.n_ball,
        max_order: a.preds.max_order,
        k: a.spear.k,
        reward_floor: a.spear.rl,
        epsilon: a.spear.epsilon,
        observe_all_exits: a.observed == ObservedSel::All,
        ..BenchConfig::default()
    };
    a.domain.apply(&mut cfg)?;
    let report = bench_episode_reward(&cfg)?;
    for mode in ["det", "stoch"] {
        let rows: Vec<_> = report.rows.iter().filter(|r| r.mode == mode).collect();
        if rows.is_empty() {
            continue;
        }
        let n = rows.len() as f64;
        let pre: f64 = rows.iter().map(|r| r.reward_pre).sum::<f64>() / n;
        let post: f64 = rows.iter().map(|r| r.reward_post).sum::<f64>() / n;
        let repaired = report
            .maps
            .iter()
            .filter(|m| m.mode == mode && m.case != CaseLabel::None)
            .count();
        eprintln!(
            "{mode}: mean pre {pre:.2} -> mean post {post:.2} over {} episodes ({repaired} maps repaired)",
            rows.len()
        );
    }
    write_report(a.out.out.as_deref(), a.out.format, &report.rows)?;
    Ok(ExitCode::SUCCESS)
}

fn bench_predicates(a: BenchPredicatesArgs) -> Result<ExitCode> {
    let mut counts = parse_list(&a.counts, "--counts")?;
    if a.full_range {
        counts.extend([5_000, 10_000]);
    }
    let mut cfg = BenchConfig {
        n_maps: a.maps,
        seed: a.seed,
        k: a.spear.k,
        reward_floor: a.spear.rl,
        epsilon: a.spear.epsilon,
        ..BenchConfig::default()
    };
    a.domain.apply(&mut cfg)?;
    let rows = bench_predicate_scaling(&cfg, &counts)?;
    write_report(a.out.out.as_deref(), a.out.format, &rows)?;
    Ok(ExitCode::SUCCESS)
}

fn bench_states(a: BenchStatesArgs) -> Result<ExitCode> {
    let sizes = parse_list(&a.sizes, "--sizes")?;
    let cfg = BenchConfig {
        n_maps: a.repeats,
        seed: a.seed,
        n_ball: a.n_ball,
        k: a.spear.k,
        reward_floor: a.spear.rl,
        epsilon: a.spear.epsilon,
        ..BenchConfig::default()
    };
    let rows = bench_state_scaling(&cfg, &sizes)?;
    write_report(a.out.out.as_deref(), a.out.format, &rows)?;
    Ok(ExitCode::SUCCESS)
}
