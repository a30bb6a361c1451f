mod render;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use manipaug::augmenter::{augment_dataset, AugmentConfig};
use manipaug::config::{apply_overrides, load_overrides};
use manipaug::datamodel::{load_dataset, load_jsonl, save_dataset, save_jsonl, Example, Scenario};
use manipaug::geometry::{EnvironmentSpec, Workspace};
use manipaug::objectives::Term;
use manipaug::report::{evaluate, flatten_batches, AugmentationRecord, RunReport, Throughput};
use manipaug::scenarios::default_bounds;
use manipaug::scenarios::planar::{
    generate_planar_dataset, planar_environment, planar_probes, PlanarGenConfig, PlanarSim, PlanarWorld,
};
use manipaug::scenarios::rope::{
    generate_rope_dataset, rope_environment, rope_probes, RopeGenConfig, RopeSim, RopeWorld,
};
use manipaug::validlearn::{learn_validity, TrainConfig, ValidityModel};

const DATASET_FILE: &str = "dataset.jsonl";
const BATCH_FILE: &str = "batch.jsonl";
const REPORT_FILE: &str = "report.json";
const ENV_FILE: &str = "env.json";
const SWEEP_K: [usize; 6] = [1, 5, 10, 15, 20, 25];

#[derive(Parser)]
#[command(
    name = "manipaug",
    version,
    about = "Physics-aware data augmentation for manipulation trajectories"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a scenario dataset and its environment file.
    GenData(GenDataArgs),
    /// Augment every example k times.
    Augment(AugmentArgs),
    /// Collect validity data by re-simulation and fit the validity model.
    LearnValid(LearnValidArgs),
    /// Recompute the report for an augmentation run.
    Eval(EvalArgs),
    /// Augment at k = 1, 5, 10, 15, 20, 25 and tabulate diversity.
    SweepK(TableArgs),
    /// Augment with each objective term removed in turn.
    Ablate(TableArgs),
    /// Draw augmentations as SVG scenes.
    Render(RenderArgs),
}

#[derive(Args)]
struct GenDataArgs {
    #[arg(long)]
    scenario: Scenario,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of examples (scenario default when omitted).
    #[arg(long)]
    examples: Option<usize>,
    /// Write an environment without obstacles whose workspace spans the grid.
    #[arg(long)]
    free_space: bool,
}

#[derive(Args, Clone)]
struct RunArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    env: PathBuf,
    /// Defaults to the dataset's scenario.
    #[arg(long)]
    scenario: Option<Scenario>,
    /// JSON file overriding objective and solver fields by name.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Trained validity model.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Objective terms to remove (occ, dmd, valid, bbox).
    #[arg(long, value_delimiter = ',')]
    drop: Vec<Term>,
}

#[derive(Args)]
struct AugmentArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Include wall-clock throughput in the report.
    #[arg(long)]
    timing: bool,
}

#[derive(Args)]
struct LearnValidArgs {
    #[arg(long)]
    scenario: Scenario,
    #[arg(long)]
    env: PathBuf,
    /// Source of probe transitions (required for planar).
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Model output path.
    #[arg(long)]
    out: PathBuf,
    /// Also write the collected examples here.
    #[arg(long)]
    data_out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long, default_value_t = 8)]
    probes: usize,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Directory written by `augment`.
    #[arg(long)]
    augmented: PathBuf,
    /// Report path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TableArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Output JSON path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RenderArgs {
    /// Source dataset.
    #[arg(long)]
    dataset: PathBuf,
    /// Directory written by `augment`.
    #[arg(long)]
    augmented: PathBuf,
    #[arg(long)]
    env: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Render at most this many scenes.
    #[arg(long)]
    limit: Option<usize>,
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn load_inputs(run: &RunArgs) -> Result<(Vec<Example>, EnvironmentSpec)> {
    let examples = load_dataset(&run.dataset).with_context(|| format!("reading {}", run.dataset.display()))?;
    if examples.is_empty() {
        bail!("{} holds no examples", run.dataset.display());
    }
    let env = EnvironmentSpec::load(&run.env).with_context(|| format!("reading {}", run.env.display()))?;
    Ok((examples, env))
}

fn resolve_config(run: &RunArgs, examples: &[Example]) -> Result<AugmentConfig> {
    let scenario = run.scenario.unwrap_or(examples[0].scenario);
    let mut cfg = AugmentConfig::new(scenario, default_bounds(scenario));
    if let Some(path) = &run.config {
        cfg = apply_overrides(&cfg, &load_overrides(path)?)?;
    }
    if let Some(k) = run.k {
        cfg.k = k;
    }
    cfg.objective.drop.extend(run.drop.iter().copied());
    cfg.validate()?;
    Ok(cfg)
}

fn load_model(run: &RunArgs) -> Result<Option<ValidityModel>> {
    run.model
        .as_ref()
        .map(|p| ValidityModel::load(p).with_context(|| format!("reading {}", p.display())))
        .transpose()
}

struct Run {
    outputs: Vec<Example>,
    records: Vec<AugmentationRecord>,
    report: RunReport,
    seconds: f64,
}

fn run_augment(run: &RunArgs, examples: &[Example], env: &EnvironmentSpec, cfg: &AugmentConfig) -> Result<Run> {
    let model = load_model(run)?;
    let start = Instant::now();
    let batches = augment_dataset(examples, env, cfg, model.as_ref(), run.seed, run.jobs)?;
    let seconds = start.elapsed().as_secs_f64();
    let (outputs, records) = flatten_batches(&batches);
    let report = evaluate(examples, &outputs, &records, env, cfg, run.seed)?;
    Ok(Run {
        outputs,
        records,
        report,
        seconds,
    })
}

fn throughput(r: &Run) -> Throughput {
    let s = r.seconds.max(1e-9);
    Throughput {
        seconds: r.seconds,
        augmentations_per_second: r.report.augmentations as f64 / s,
        accepted_per_second: r.report.accepted as f64 / s,
    }
}

fn cmd_gen_data(args: &GenDataArgs) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let (examples, mut env) = match args.scenario {
        Scenario::Planar => {
            let mut cfg = PlanarGenConfig::default();
            cfg.examples = args.examples.unwrap_or(cfg.examples);
            let env = planar_environment(&cfg);
            (generate_planar_dataset(&env, &cfg, &mut rng)?, env)
        }
        Scenario::Rope => {
            let mut cfg = RopeGenConfig::default();
            cfg.examples = args.examples.unwrap_or(cfg.examples);
            let env = rope_environment(&cfg);
            (generate_rope_dataset(&env, &cfg, &mut rng)?, env)
        }
    };
    if args.free_space {
        env.name = format!("{}-free", env.name);
        env.primitives.clear();
        let upper = (0..env.dim)
            .map(|i| env.grid.origin[i] + env.grid.resolution * (env.grid.extents[i] - 1) as f64)
            .collect();
        env.workspace = Workspace::new(env.grid.origin.clone(), upper)?;
    }
    fs::create_dir_all(&args.out)?;
    save_dataset(&examples, &args.out.join(DATASET_FILE))?;
    env.save(&args.out.join(ENV_FILE))?;
    eprintln!(
        "wrote {} {} examples to {}",
        examples.len(),
        args.scenario.name(),
        args.out.display()
    );
    Ok(())
}

fn cmd_augment(args: &AugmentArgs) -> Result<()> {
    let (examples, env) = load_inputs(&args.run)?;
    let cfg = resolve_config(&args.run, &examples)?;
    let mut r = run_augment(&args.run, &examples, &env, &cfg)?;
    let t = throughput(&r);
    eprintln!(
        "{} augmentations, {} accepted in {:.2} s ({:.2} accepted/s)",
        r.report.augmentations, r.report.accepted, t.seconds, t.accepted_per_second
    );
    if args.timing {
        r.report.throughput = Some(t);
    }
    fs::create_dir_all(&args.out)?;
    save_dataset(&r.outputs, &args.out.join(DATASET_FILE))?;
    save_jsonl(&r.records, &args.out.join(BATCH_FILE))?;
    write_json(&r.report, &args.out.join(REPORT_FILE))
}

fn planar_sim(env: &EnvironmentSpec, examples: &[Example]) -> Result<PlanarSim> {
    let first = &examples[0];
    let defaults = PlanarGenConfig::default();
    let disc_radii = first
        .objects
        .iter()
        .map(|o| o.radius.unwrap_or(defaults.disc_radius))
        .collect();
    Ok(PlanarSim {
        world: PlanarWorld {
            robot_radius: defaults.robot_radius,
            disc_radii,
            workspace: env.workspace.clone(),
            obstacles: env.primitives.clone(),
        },
    })
}

fn cmd_learn_valid(args: &LearnValidArgs) -> Result<()> {
    let env = EnvironmentSpec::load(&args.env)?;
    let mut cfg = AugmentConfig::new(args.scenario, default_bounds(args.scenario));
    if let Some(path) = &args.config {
        cfg = apply_overrides(&cfg, &load_overrides(path)?)?;
    }
    let bounds = cfg.objective.bounds;
    let mut train = TrainConfig::default();
    train.epochs = args.epochs.unwrap_or(train.epochs);
    train.weight_decay = args.weight_decay.unwrap_or(train.weight_decay);
    let (model, data) = match args.scenario {
        Scenario::Planar => {
            let Some(path) = &args.dataset else {
                bail!("planar validity learning needs --dataset for probe transitions");
            };
            let examples = load_dataset(path)?;
            if examples.is_empty() {
                bail!("{} holds no examples", path.display());
            }
            let sim = planar_sim(&env, &examples)?;
            let probes = planar_probes(&examples, args.probes);
            learn_validity(&sim, &probes, &bounds, &train, args.seed)?
        }
        Scenario::Rope => {
            let segment = match &args.dataset {
                Some(path) => load_dataset(path)?
                    .first()
                    .and_then(|ex| {
                        let p = ex.objects.first()?.positions(0, 3);
                        (p.len() > 1).then(|| (p[1] - p[0]).norm())
                    })
                    .unwrap_or(RopeGenConfig::default().segment_length),
                None => RopeGenConfig::default().segment_length,
            };
            let sim = RopeSim {
                world: RopeWorld::new(segment, env.primitives.clone(), env.workspace.clone()),
            };
            let probes = rope_probes(&sim.world)?;
            learn_validity(&sim, &probes, &bounds, &train, args.seed)?
        }
    };
    model.save(&args.out)?;
    if let Some(path) = &args.data_out {
        save_jsonl(&data, path)?;
    }
    eprintln!(
        "trained on {} examples, final loss {}",
        data.len(),
        model.final_loss().map_or("n/a".into(), |l| format!("{l:.6}"))
    );
    Ok(())
}

fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let (examples, env) = load_inputs(&args.run)?;
    let cfg = resolve_config(&args.run, &examples)?;
    let outputs = load_dataset(&args.augmented.join(DATASET_FILE))?;
    let records: Vec<AugmentationRecord> =
        load_jsonl(&args.augmented.join(BATCH_FILE), |_: &AugmentationRecord| Ok(()))?;
    let report = evaluate(&examples, &outputs, &records, &env, &cfg, args.run.seed)?;
    match &args.out {
        Some(path) => write_json(&report, path),
        None => {
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(())
        }
    }
}

#[derive(Serialize)]
struct Row {
    label: String,
    k: usize,
    augmentations: usize,
    accepted: usize,
    acceptance_rate: f64,
    raw_mismatch_rate: f64,
    occupancy_rate: f64,
    median_delta_sdf: Option<f64>,
    kl: Option<f64>,
    kl_per_dim: Option<Vec<f64>>,
    diversity: Option<f64>,
}

impl Row {
    fn new(label: String, report: &RunReport) -> Self {
        Self {
            label,
            k: report.config.k,
            augmentations: report.augmentations,
            accepted: report.accepted,
            acceptance_rate: report.acceptance_rate,
            raw_mismatch_rate: report.raw_mismatch_rate,
            occupancy_rate: report.rates.occupancy,
            median_delta_sdf: report.median_delta_sdf,
            kl: report.diversity.as_ref().map(|d| d.kl),
            kl_per_dim: report.diversity.as_ref().map(|d| d.kl_per_dim.clone()),
            diversity: report.diversity.as_ref().map(|d| d.diversity),
        }
    }
}

fn cmd_sweep_k(args: &TableArgs) -> Result<()> {
    let (examples, env) = load_inputs(&args.run)?;
    let base = resolve_config(&args.run, &examples)?;
    let mut rows = Vec::new();
    for k in SWEEP_K {
        let cfg = AugmentConfig { k, ..base.clone() };
        let r = run_augment(&args.run, &examples, &env, &cfg)?;
        rows.push(Row::new(format!("k={k}"), &r.report));
    }
    write_json(&rows, &args.out)
}

fn cmd_ablate(args: &TableArgs) -> Result<()> {
    let (examples, env) = load_inputs(&args.run)?;
    let base = resolve_config(&args.run, &examples)?;
    let mut rows = Vec::new();
    let variants = std::iter::once(None).chain(Term::ALL.into_iter().map(Some));
    for term in variants {
        let mut cfg = base.clone();
        let label = match term {
            None => "full".to_string(),
            Some(t) => {
                cfg.objective.drop.insert(t);
                format!("no {}", t.name())
            }
        };
        let r = run_augment(&args.run, &examples, &env, &cfg)?;
        rows.push(Row::new(label, &r.report));
    }
    write_json(&rows, &args.out)
}

fn cmd_render(args: &RenderArgs) -> Result<()> {
    let sources = load_dataset(&args.dataset)?;
    let env = EnvironmentSpec::load(&args.env)?;
    let outputs = load_dataset(&args.augmented.join(DATASET_FILE))?;
    let records: Vec<AugmentationRecord> =
        load_jsonl(&args.augmented.join(BATCH_FILE), |_: &AugmentationRecord| Ok(()))?;
    if outputs.len() != records.len() {
        bail!("{} outputs but {} records", outputs.len(), records.len());
    }
    fs::create_dir_all(&args.out)?;
    let limit = args.limit.unwrap_or(usize::MAX);
    for (out, rec) in outputs.iter().zip(&records).take(limit) {
        let Some(src) = sources.get(rec.source) else {
            bail!("record refers to missing source {}", rec.source);
        };
        if src.scenario != out.scenario {
            bail!("scenario tag '{}' does not match its source", out.scenario.name());
        }
        let svg = render::render_scene(&env, src, out, rec);
        fs::write(args.out.join(format!("aug_{:04}_{:03}.svg", rec.source, rec.draw)), svg)?;
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::GenData(a) => cmd_gen_data(a),
        Command::Augment(a) => cmd_augment(a),
        Command::LearnValid(a) => cmd_learn_valid(a),
        Command::Eval(a) => cmd_eval(a),
        Command::SweepK(a) => cmd_sweep_k(a),
        Command::Ablate(a) => cmd_ablate(a),
        Command::Render(a) => cmd_render(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
