use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Args, Subcommand};
use lineup_core::evolve::{run_search, OraclePanel, SearchConfig, SearchState};
use lineup_core::facespace::{sample_prior, BootstrapSampler, Decoder, ImageSampler, PriorSampler, Rescaled};
use lineup_core::imagecore::Image;
use lineup_core::turing::{
    fit_logistic, make_session_trials, write_curves_csv, CurvePoint, DetectionCurve, LogisticFit, SimulatedObserver,
    TuringConfig,
};
use lineup_service::manager::MODEL_GENERATOR;
use lineup_service::ServiceConfig;
use serde::Serialize;

use super::{create_dir, load_model, read_corpus, rng, write_json};
use crate::error::{data, runtime, usage, Result};

#[derive(Debug, Subcommand)]
pub enum SimulateCommand {
    /// Lineup searches driven by oracle rankers that know a target face.
    Evolve(EvolveArgs),
    /// 2AFC sessions answered by a simulated observer.
    Turing(TuringArgs),
}

#[derive(Debug, Args)]
pub struct EvolveArgs {
    /// Eigenface model file.
    #[arg(long)]
    pub model: PathBuf,
    /// Output directory for metrics.
    #[arg(long, short)]
    pub out: PathBuf,
    /// Independent searches, each with its own target.
    #[arg(long, default_value_t = 10)]
    pub runs: usize,
    /// Ranker noise as a fraction of the lineup's distance spread.
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    /// Render portraits at this side before ranking.
    #[arg(long)]
    pub side: Option<usize>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub rounds: Option<u32>,
    #[arg(long)]
    pub quorum: Option<usize>,
    /// Also write each run's trajectory as JSON lines.
    #[arg(long)]
    pub trajectories: bool,
}

#[derive(Debug, Args)]
pub struct TuringArgs {
    /// Directory of real portraits.
    #[arg(long)]
    pub corpus: PathBuf,
    /// Eigenface model used as a generator next to the bootstrap control.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Output directory for metrics.
    #[arg(long, short)]
    pub out: PathBuf,
    /// Simulated sessions.
    #[arg(long, default_value_t = 100)]
    pub reps: usize,
    #[arg(long)]
    pub per_size: Option<usize>,
    /// Observer accuracy: one probability, or `size=p` pairs separated by commas.
    #[arg(long, default_value = "0.5")]
    pub p: String,
    /// Fit a logistic psychometric curve per generator.
    #[arg(long)]
    pub fit: bool,
}

pub fn run(cmd: &SimulateCommand, seed: u64, config: Option<&Path>) -> Result<()> {
    let cfg = ServiceConfig::load(config).map_err(data)?;
    match cmd {
        SimulateCommand::Evolve(args) => evolve(args, seed, cfg.search.search),
        SimulateCommand::Turing(args) => turing(args, seed, cfg.turing),
    }
}

#[derive(Debug, Serialize)]
struct RunMetrics {
    run: usize,
    initial_distance: f64,
    final_distance: f64,
    ratio: f64,
    /// Latent distance from the seed to the target before and after every round.
    distances: Vec<f64>,
}

#[derive(Debug, Serialize)]
struct EvolveMetrics {
    seed: u64,
    config: SearchConfig,
    noise_level: f64,
    render_side: usize,
    runs: Vec<RunMetrics>,
    mean_ratio: f64,
    median_ratio: f64,
    halved_runs: usize,
}

fn trajectory_distances(state: &SearchState, target: &lineup_core::facespace::LatentPoint) -> Vec<f64> {
    let origin = lineup_core::facespace::LatentPoint::origin(target.dim());
    std::iter::once(origin.distance(target))
        .chain(state.history.iter().map(|r| r.theta.distance(target)))
        .collect()
}

fn evolve(args: &EvolveArgs, seed: u64, base: SearchConfig) -> Result<()> {
    if !(args.noise.is_finite() && args.noise >= 0.0) {
        return Err(usage("--noise must be finite and non-negative"));
    }
    if args.runs == 0 || args.side == Some(0) {
        return Err(usage("--runs and --side must be positive"));
    }
    let model = load_model(&args.model)?;
    let config = SearchConfig {
        n: args.n.unwrap_or(base.n),
        sigma: args.sigma.unwrap_or(base.sigma),
        alpha: args.alpha.unwrap_or(base.alpha),
        rounds: args.rounds.unwrap_or(base.rounds),
        quorum: args.quorum.unwrap_or(base.quorum),
        d: model.dim(),
        ..base
    };
    config.validate().map_err(usage)?;
    let render_side = args.side.unwrap_or(model.image_side());
    let decoder = Rescaled::new(model, render_side);
    create_dir(&args.out)?;

    let mut csv = String::from("run,round,distance\n");
    let mut runs = Vec::with_capacity(args.runs);
    for run in 0..args.runs {
        let mut search_rng = rng(seed, 2 * run as u64);
        let target = sample_prior(decoder.latent_dim(), &mut search_rng);
        let target_img = decoder.decode(&target).map_err(runtime)?;
        let mut panel = OraclePanel::new(&decoder, target_img, args.noise, rng(seed, 2 * run as u64 + 1));
        let state = run_search(config.clone(), &decoder, &mut panel, &mut search_rng).map_err(runtime)?;
        let distances = trajectory_distances(&state, &target);
        for (round, d) in distances.iter().enumerate() {
            csv.push_str(&format!("{run},{round},{d}\n"));
        }
        if args.trajectories {
            let path = args.out.join(format!("trajectory_{run:03}.jsonl"));
            let file = std::fs::File::create(&path).map_err(|e| runtime(format!("{}: {e}", path.display())))?;
            state.write_trajectory(std::io::BufWriter::new(file))?;
        }
        let (initial, last) = (distances[0], *distances.last().unwrap_or(&distances[0]));
        runs.push(RunMetrics {
            run,
            initial_distance: initial,
            final_distance: last,
            ratio: last / initial,
            distances,
        });
    }

    let mut ratios: Vec<f64> = runs.iter().map(|r| r.ratio).collect();
    ratios.sort_by(f64::total_cmp);
    let mid = ratios.len() / 2;
    let median_ratio = if ratios.len() % 2 == 1 { ratios[mid] } else { 0.5 * (ratios[mid - 1] + ratios[mid]) };
    let metrics = EvolveMetrics {
        seed,
        config,
        noise_level: args.noise,
        render_side,
        mean_ratio: ratios.iter().sum::<f64>() / ratios.len() as f64,
        median_ratio,
        halved_runs: ratios.iter().filter(|&&r| r < 0.5).count(),
        runs,
    };
    std::fs::write(args.out.join("evolve_rounds.csv"), csv)?;
    write_json(&args.out.join("evolve_metrics.json"), &metrics)?;
    println!(
        "final/initial distance ratio: mean {:.4}, median {:.4}; halved in {}/{} runs",
        metrics.mean_ratio,
        metrics.median_ratio,
        metrics.halved_runs,
        metrics.runs.len()
    );
    Ok(())
}

/// Observer accuracies keyed by size; a bare probability applies to every size.
pub fn parse_observer(spec: &str, ladder: &[usize]) -> Result<BTreeMap<usize, f64>> {
    let prob = |s: &str| -> Result<f64> {
        let p: f64 = s.trim().parse().map_err(|_| usage(format!("bad probability {s:?}")))?;
        if !(0.0..=1.0).contains(&p) {
            return Err(usage(format!("probability {p} outside [0, 1]")));
        }
        Ok(p)
    };
    if !spec.contains('=') {
        let p = prob(spec)?;
        return Ok(ladder.iter().map(|&s| (s, p)).collect());
    }
    let mut table = BTreeMap::new();
    for part in spec.split(',') {
        let (size, p) = part.split_once('=').ok_or_else(|| usage(format!("expected size=p, got {part:?}")))?;
        let size: usize = size.trim().parse().map_err(|_| usage(format!("bad size {size:?}")))?;
        if !ladder.contains(&size) {
            return Err(usage(format!("size {size} is not on the ladder {ladder:?}")));
        }
        table.insert(size, prob(p)?);
    }
    if let Some(missing) = ladder.iter().find(|s| !table.contains_key(s)) {
        return Err(usage(format!("no probability for size {missing}")));
    }
    Ok(table)
}

#[derive(Debug, Serialize)]
struct Recovery {
    size: usize,
    p: f64,
    n_trials: usize,
    accuracy: f64,
    standard_error: f64,
    z: f64,
}

#[derive(Debug, Serialize)]
struct Coverage {
    size: usize,
    p: f64,
    /// Fraction of repetitions whose 95% Wilson interval contains `p`.
    fraction: f64,
}

#[derive(Debug, Serialize)]
struct TuringMetrics {
    seed: u64,
    reps: usize,
    per_size: usize,
    ladder: Vec<usize>,
    generators: Vec<String>,
    observer: BTreeMap<usize, f64>,
    recovery: Vec<Recovery>,
    max_abs_z: f64,
    coverage: Vec<Coverage>,
    min_coverage: f64,
    curves: Vec<DetectionCurve>,
    #[serde(skip_serializing_if = "Option::is_none")]
    fits: Option<BTreeMap<String, Option<LogisticFit>>>,
}

fn turing(args: &TuringArgs, seed: u64, base: TuringConfig) -> Result<()> {
    let per_size = args.per_size.unwrap_or(base.per_size);
    if args.reps == 0 || per_size == 0 {
        return Err(usage("--reps and --per-size must be positive"));
    }
    let ladder = base.ladder().map_err(usage)?;
    let table = parse_observer(&args.p, &ladder)?;
    let observer = SimulatedObserver::from_table(table.clone()).map_err(usage)?;

    let real: Vec<Image> = read_corpus(&args.corpus)?.into_iter().map(|(_, img)| img).collect();
    if real.is_empty() {
        return Err(data(format!("no PNG files in {}", args.corpus.display())));
    }
    let mut generators: Vec<Box<dyn ImageSampler>> = Vec::new();
    if let Some(path) = &args.model {
        generators.push(Box::new(PriorSampler::new(MODEL_GENERATOR, load_model(path)?)));
    }
    generators.push(Box::new(BootstrapSampler::new(real.clone()).map_err(data)?));
    let gens: Vec<&dyn ImageSampler> = generators.iter().map(|g| g.as_ref()).collect();
    create_dir(&args.out)?;

    // (generator, size) -> (correct, total) summed over repetitions.
    let mut pooled: BTreeMap<(String, usize), (usize, usize)> = BTreeMap::new();
    let mut covered: BTreeMap<usize, usize> = BTreeMap::new();
    for rep in 0..args.reps {
        let mut r = rng(seed, rep as u64);
        let session = make_session_trials(&real, &gens, per_size, &ladder, &mut r).map_err(data)?;
        let mut by_size: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
        for trial in &session.trials {
            let correct = observer.respond(trial, "observer", &mut r).correct;
            for counts in [
                pooled.entry((trial.synth_source.clone(), trial.size)).or_default(),
                by_size.entry(trial.size).or_default(),
            ] {
                counts.0 += usize::from(correct);
                counts.1 += 1;
            }
        }
        for (size, (k, n)) in by_size {
            if CurvePoint::from_counts(size, k, n).contains(table[&size]) {
                *covered.entry(size).or_default() += 1;
            }
        }
    }

    let mut curves: Vec<DetectionCurve> = Vec::new();
    let mut totals: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    for ((generator, size), (k, n)) in &pooled {
        if curves.last().is_none_or(|c| &c.generator != generator) {
            curves.push(DetectionCurve { generator: generator.clone(), points: Vec::new() });
        }
        curves.last_mut().expect("pushed above").points.push(CurvePoint::from_counts(*size, *k, *n));
        let t = totals.entry(*size).or_default();
        t.0 += k;
        t.1 += n;
    }
    let recovery: Vec<Recovery> = totals
        .iter()
        .map(|(&size, &(k, n))| {
            let p = table[&size];
            let accuracy = k as f64 / n as f64;
            let standard_error = (p * (1.0 - p) / n as f64).sqrt();
            let z = if standard_error > 0.0 { (accuracy - p) / standard_error } else { 0.0 };
            Recovery { size, p, n_trials: n, accuracy, standard_error, z }
        })
        .collect();
    let coverage: Vec<Coverage> = ladder
        .iter()
        .map(|&size| Coverage {
            size,
            p: table[&size],
            fraction: covered.get(&size).copied().unwrap_or(0) as f64 / args.reps as f64,
        })
        .collect();
    let fits = args.fit.then(|| curves.iter().map(|c| (c.generator.clone(), fit_logistic(c))).collect());
    let metrics = TuringMetrics {
        seed,
        reps: args.reps,
        per_size,
        ladder,
        generators: gens.iter().map(|g| g.label().to_string()).collect(),
        observer: table,
        max_abs_z: recovery.iter().map(|r| r.z.abs()).fold(0.0, f64::max),
        min_coverage: coverage.iter().map(|c| c.fraction).fold(1.0, f64::min),
        recovery,
        coverage,
        curves,
        fits,
    };

    let csv = std::fs::File::create(args.out.join("turing_curves.csv"))?;
    write_curves_csv(&metrics.curves, csv).map_err(runtime)?;
    write_json(&args.out.join("turing_metrics.json"), &metrics)?;
    for r in &metrics.recovery {
        println!("size {:>4}: p {:.3} recovered {:.4} (z {:+.2})", r.size, r.p, r.accuracy, r.z);
    }
    println!("minimum Wilson coverage over sizes: {:.2}", metrics.min_coverage);
    Ok(())
}
