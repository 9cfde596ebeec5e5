use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rigidkit_cli::pipeline::{self, FieldSet, InputPaths, Observations, PipelineConfig};
use rigidkit_cli::report::{self, EgoReport, FitReport, SceneFlowReport, SegmentationReport};
use rigidkit_cli::{CliError, CliResult};
use rigidkit_core::costmaps::CostMaps;
use rigidkit_core::io;
use rigidkit_sim::{corrupt, make_degenerate_scenario, render, write_bundle, NoiseConfig, PriorModel, ScenarioKind, SceneDescription};

#[derive(Parser, Debug)]
#[command(name = "rigidkit", version, about = "Two-frame rigid motion segmentation and scene flow")]
struct Cli {
    /// Seed for every randomized step.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Pipeline configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render a synthetic scene and write ground truth plus corrupted inputs.
    Simulate(SimulateArgs),
    /// Estimate egomotion and write the rigidity cost maps only.
    Costmaps(PipelineArgs),
    /// Egomotion, cost maps and threshold segmentation.
    Segment(PipelineArgs),
    /// Fit a rigid motion per segment and write refined depth and flow.
    Sceneflow(SceneflowArgs),
    /// Score a prediction directory against a ground-truth directory.
    Evaluate(EvaluateArgs),
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// Canonical scenario: general, coplanar, collinear, zero_translation, pure_rotation, static.
    #[arg(long, conflicts_with = "scene", required_unless_present = "scene")]
    scenario: Option<String>,
    /// Scene description (JSON).
    #[arg(long)]
    scene: Option<PathBuf>,
    #[arg(long)]
    flow_sigma: Option<f64>,
    #[arg(long)]
    expansion_sigma: Option<f64>,
    #[arg(long)]
    outlier_fraction: Option<f64>,
    /// exact | scaled:K | ramp:LO:HI | noisy:SIGMA
    #[arg(long)]
    prior: Option<String>,
    /// Seed of the noise model (default: --seed).
    #[arg(long)]
    noise_seed: Option<u64>,
    #[arg(short, long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct InputArgs {
    /// Directory with inputs under their standard names (e.g. a simulate output).
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    flow: Option<PathBuf>,
    #[arg(long)]
    expansion: Option<PathBuf>,
    /// Frame-0 depth prior.
    #[arg(long)]
    depth: Option<PathBuf>,
    #[arg(long)]
    confidence: Option<PathBuf>,
    #[arg(long)]
    k0: Option<PathBuf>,
    #[arg(long)]
    k1: Option<PathBuf>,
}

impl InputArgs {
    fn paths(&self) -> InputPaths {
        InputPaths {
            dir: self.input.clone(),
            flow: self.flow.clone(),
            expansion: self.expansion.clone(),
            depth: self.depth.clone(),
            confidence: self.confidence.clone(),
            k0: self.k0.clone(),
            k1: self.k1.clone(),
        }
    }
}

#[derive(Args, Debug)]
struct PipelineArgs {
    #[command(flatten)]
    inputs: InputArgs,
    #[arg(short, long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SceneflowArgs {
    #[command(flatten)]
    inputs: InputArgs,
    /// Segment labels (PGM16); defaults to labels.pgm in the input directory.
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(short, long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    /// Also write the CSV to this file.
    #[arg(short, long)]
    out: Option<PathBuf>,
}

fn parse_prior(spec: &str) -> CliResult<PriorModel> {
    let parts: Vec<&str> = spec.split(':').collect();
    let num = |s: &str| s.parse::<f64>().map_err(|_| CliError::input(format!("prior: bad number '{s}'")));
    match parts.as_slice() {
        ["exact"] => Ok(PriorModel::Exact),
        ["scaled", k] => Ok(PriorModel::Scaled { k: num(k)? }),
        ["ramp", lo, hi] => Ok(PriorModel::SmoothRamp { lo: num(lo)?, hi: num(hi)? }),
        ["noisy", s] => Ok(PriorModel::Noisy { sigma_log: num(s)? }),
        _ => Err(CliError::input(format!("prior: unrecognized model '{spec}'"))),
    }
}

fn create_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::input(format!("{}: {e}", dir.display())))
}

fn io_err(what: &str) -> impl Fn(rigidkit_core::Error) -> CliError + '_ {
    move |e| CliError::input(format!("{what}: {e}"))
}

fn simulate(args: &SimulateArgs, seed: u64) -> CliResult<()> {
    let mut scene = match (&args.scenario, &args.scene) {
        (Some(name), _) => make_degenerate_scenario(name.parse::<ScenarioKind>().map_err(CliError::input)?, seed),
        (None, Some(path)) => {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::input(format!("scene: {}: {e}", path.display())))?;
            SceneDescription::from_json(&text).map_err(|e| CliError::input(format!("scene: {e}")))?
        }
        (None, None) => return Err(CliError::input("either --scenario or --scene is required")),
    };
    let noise = &mut scene.noise;
    if let Some(v) = args.flow_sigma {
        noise.flow_sigma = v;
    }
    if let Some(v) = args.expansion_sigma {
        noise.expansion_sigma = v;
    }
    if let Some(v) = args.outlier_fraction {
        noise.outlier_fraction = v;
    }
    if let Some(p) = &args.prior {
        noise.prior = parse_prior(p)?;
    }
    if args.scenario.is_some() || args.noise_seed.is_some() {
        noise.seed = args.noise_seed.unwrap_or(seed);
    }
    let noise: NoiseConfig = scene.noise;
    noise.validate().map_err(|e| CliError::input(format!("noise: {e}")))?;
    scene.validate().map_err(|e| CliError::input(format!("scene: {e}")))?;

    let gt = render(&scene).map_err(|e| CliError::stage("render", e))?;
    let inputs = corrupt(&gt, &noise).map_err(|e| CliError::stage("corrupt", e))?;
    create_dir(&args.out)?;
    write_bundle(&args.out, &gt, Some(&inputs), &noise).map_err(|e| CliError::input(format!("writing bundle: {e}")))?;
    Ok(())
}

fn write_cost_maps(dir: &Path, maps: &CostMaps) -> CliResult<Vec<String>> {
    let mut names = Vec::new();
    for (name, map) in maps.available() {
        let file = format!("cost_{name}.pfm");
        io::save_pfm(dir.join(&file), map).map_err(io_err(&file))?;
        names.push(name.to_string());
    }
    Ok(names)
}

fn load_inputs(args: &InputArgs) -> CliResult<Observations> {
    args.paths().load()
}

fn costmaps(args: &PipelineArgs, cfg: &PipelineConfig, seed: u64) -> CliResult<()> {
    let obs = load_inputs(&args.inputs)?;
    let ego = pipeline::estimate_egomotion(&obs, cfg, seed)?;
    let maps = pipeline::cost_maps_for(&obs, &ego.estimate)?;
    create_dir(&args.out)?;
    let names = write_cost_maps(&args.out, &maps)?;
    report::write_json(&args.out.join("ego.json"), &EgoReport::new(&ego, maps.gamma, names))
}

fn segment(args: &PipelineArgs, cfg: &PipelineConfig, seed: u64) -> CliResult<()> {
    let obs = load_inputs(&args.inputs)?;
    let run = pipeline::run_segment(&obs, cfg, seed)?;
    create_dir(&args.out)?;
    let names = write_cost_maps(&args.out, &run.maps)?;
    let seg = &run.segmentation;
    io::save_pgm16(args.out.join("labels.pgm"), &seg.labels).map_err(io_err("labels.pgm"))?;
    report::write_json(&args.out.join("ego.json"), &EgoReport::new(&run.ego, run.maps.gamma, names))?;
    let n_invalid = (0..seg.labels.len()).filter(|&i| seg.labels.label(i).is_none()).count();
    report::write_json(
        &args.out.join("segmentation.json"),
        &SegmentationReport::new(seg.background.count(), n_invalid, &seg.instances),
    )
}

fn sceneflow(args: &SceneflowArgs, cfg: &PipelineConfig, seed: u64) -> CliResult<()> {
    let obs = load_inputs(&args.inputs)?;
    let labels_path = match (&args.labels, &args.inputs.input) {
        (Some(p), _) => p.clone(),
        (None, Some(dir)) => dir.join("labels.pgm"),
        (None, None) => return Err(CliError::input("labels: no path given")),
    };
    if !labels_path.exists() {
        return Err(CliError::input(format!("labels: {} not found", labels_path.display())));
    }
    let labels = io::load_pgm16(&labels_path).map_err(io_err("labels"))?;
    let run = pipeline::run_sceneflow(&obs, &labels, cfg, seed)?;
    create_dir(&args.out)?;
    let out = &run.output;
    io::save_pfm(args.out.join("z0.pfm"), &out.z0).map_err(io_err("z0.pfm"))?;
    io::save_pfm(args.out.join("z1.pfm"), &out.z1).map_err(io_err("z1.pfm"))?;
    io::save_flo(args.out.join("flow.flo"), &out.flow).map_err(io_err("flow.flo"))?;
    io::save_pgm16(args.out.join("labels.pgm"), &labels).map_err(io_err("labels.pgm"))?;
    report::write_json(
        &args.out.join("fits.json"),
        &SceneFlowReport { segments: run.fits.iter().map(FitReport::from).collect() },
    )
}

fn evaluate(args: &EvaluateArgs, cfg: &PipelineConfig) -> CliResult<()> {
    let gt = FieldSet::load_dir(&args.gt, "ground truth", true)?;
    let pred = FieldSet::load_dir(&args.pred, "prediction", false)?;
    let scores = pipeline::evaluate(&pred, &gt, cfg)?;
    let csv = format!("{}\n{}\n", report::CSV_HEADER, report::csv_row(&scores));
    print!("{csv}");
    if let Some(path) = &args.out {
        std::fs::write(path, &csv).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
    }
    Ok(())
}

fn run(cli: &Cli) -> CliResult<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::input("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::input(format!("thread pool: {e}")))?;
    }
    let cfg = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::input(format!("config: {}: {e}", path.display())))?;
            PipelineConfig::from_json(&text)?
        }
        None => PipelineConfig::default(),
    };
    match &cli.command {
        Command::Simulate(a) => simulate(a, cli.seed),
        Command::Costmaps(a) => costmaps(a, &cfg, cli.seed),
        Command::Segment(a) => segment(a, &cfg, cli.seed),
        Command::Sceneflow(a) => sceneflow(a, &cfg, cli.seed),
        Command::Evaluate(a) => evaluate(a, &cfg),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("RIGIDKIT_LOG", "warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("rigidkit: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
