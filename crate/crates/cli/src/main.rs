use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::json;

use densenorm::imageio::{load_image, save_image};
use densenorm::metrics::{
    ablate_granularity, bench_interpolation, bench_pipeline, seam_energy, translated_seams,
    SeamReport,
};
use densenorm::normalize::{AffineParams, StrategyConfig, StrategyKind, DEFAULT_KIN_KERNEL};
use densenorm::pipeline::{translate_image, Executor, PassOptions, StylizerSpec};
use densenorm::synthetic::{Pattern, Synthetic};
use densenorm::Error;

const EXIT_CONFIG: u8 = 2;
const EXIT_IO: u8 = 3;
const EXIT_PROTOCOL: u8 = 4;

/// Seamless patch-wise normalization and stylization of large images.
#[derive(Debug, Parser)]
#[command(name = "densenorm", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Normalize and restyle an image patch by patch.
    Translate(TranslateArgs),
    /// Time the interpolation variants and the two executors.
    Bench(BenchArgs),
    /// Seam scores of dense normalization across interpolation granularities.
    Ablate(AblateArgs),
    /// Seam score of an image.
    Seams(SeamsArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Pipeline {
    Single,
    TwoStage,
}

impl From<Pipeline> for Executor {
    fn from(p: Pipeline) -> Self {
        match p {
            Pipeline::Single => Executor::Single,
            Pipeline::TwoStage => Executor::TwoStage,
        }
    }
}

#[derive(Debug, Args)]
struct NormArgs {
    #[arg(long, default_value_t = 512, env = "DENSENORM_PATCH_SIZE")]
    patch_size: usize,
    /// in, tin, kin or dn.
    #[arg(long, default_value = "dn", env = "DENSENORM_NORM")]
    norm: StrategyKind,
    /// Box-filter width over patch moments; kin only.
    #[arg(long, env = "DENSENORM_KIN_KERNEL")]
    kin_kernel: Option<usize>,
    /// Block size of the piecewise-constant moment field; dn only.
    #[arg(long, env = "DENSENORM_GRANULARITY")]
    granularity: Option<usize>,
    #[arg(long, default_value_t = densenorm::moments::DEFAULT_EPSILON, env = "DENSENORM_EPSILON")]
    epsilon: f64,
    /// Interpolate deviations and invert afterwards instead of interpolating
    /// their reciprocals.
    #[arg(long, env = "DENSENORM_DIRECT_SIGMA")]
    direct_sigma: bool,
}

#[derive(Debug, Args)]
struct StyleArgs {
    /// JSON file with target_mean, target_std and optional gamma, beta.
    #[arg(long, env = "DENSENORM_STYLE", conflicts_with_all = ["style_from", "target_mean", "target_std"])]
    style: Option<PathBuf>,
    /// Take target moments from a reference image.
    #[arg(long, env = "DENSENORM_STYLE_FROM", conflicts_with_all = ["target_mean", "target_std"])]
    style_from: Option<PathBuf>,
    /// Comma-separated per-channel target means.
    #[arg(long, value_delimiter = ',', env = "DENSENORM_TARGET_MEAN")]
    target_mean: Option<Vec<f64>>,
    /// Comma-separated per-channel target deviations.
    #[arg(long, value_delimiter = ',', env = "DENSENORM_TARGET_STD")]
    target_std: Option<Vec<f64>>,
}

#[derive(Debug, Args)]
struct TranslateArgs {
    input: PathBuf,
    output: PathBuf,
    #[command(flatten)]
    norm: NormArgs,
    #[command(flatten)]
    style: StyleArgs,
    #[arg(long, value_enum, default_value = "single", env = "DENSENORM_PIPELINE")]
    pipeline: Pipeline,
    /// Worker threads for the single-pass executor (1 or 2).
    #[arg(long, default_value_t = 2, env = "DENSENORM_THREADS")]
    threads: usize,
    /// Write the cached patch moments as JSON.
    #[arg(long, env = "DENSENORM_DUMP_MOMENTS")]
    dump_moments: Option<PathBuf>,
    /// Print the run report as JSON.
    #[arg(long, env = "DENSENORM_JSON")]
    json: bool,
}

#[derive(Debug, Args)]
struct BenchArgs {
    #[arg(long, default_value_t = 512, env = "DENSENORM_PATCH_SIZE")]
    patch_size: usize,
    /// Random cells timed per variant.
    #[arg(long, default_value_t = 100, env = "DENSENORM_ITERATIONS")]
    iterations: usize,
    /// Synthetic image height for the executor comparison.
    #[arg(long, default_value_t = 3072)]
    height: usize,
    /// Synthetic image width for the executor comparison.
    #[arg(long, default_value_t = 4096)]
    width: usize,
    #[arg(long, default_value_t = 3)]
    repeats: usize,
    #[arg(long, default_value_t = 2, env = "DENSENORM_THREADS")]
    threads: usize,
    /// Only time the interpolation variants.
    #[arg(long)]
    skip_pipeline: bool,
    #[arg(long, default_value_t = 0, env = "DENSENORM_SEED")]
    seed: u64,
    #[arg(long, env = "DENSENORM_JSON")]
    json: bool,
}

#[derive(Debug, Args)]
struct AblateArgs {
    /// Image to score; a synthetic gradient is used when omitted.
    input: Option<PathBuf>,
    #[arg(long, default_value_t = 512, env = "DENSENORM_PATCH_SIZE")]
    patch_size: usize,
    /// Comma-separated granularities; defaults to every power of two up to
    /// the patch size.
    #[arg(long, value_delimiter = ',')]
    granularity: Option<Vec<usize>>,
    #[arg(long, default_value_t = densenorm::moments::DEFAULT_EPSILON, env = "DENSENORM_EPSILON")]
    epsilon: f64,
    #[command(flatten)]
    style: StyleArgs,
    /// Side length of the synthetic gradient.
    #[arg(long, default_value_t = 2048)]
    size: usize,
    #[arg(long, default_value_t = 0, env = "DENSENORM_SEED")]
    seed: u64,
    #[arg(long, env = "DENSENORM_JSON")]
    json: bool,
}

#[derive(Debug, Args)]
struct SeamsArgs {
    input: PathBuf,
    #[arg(long, default_value_t = 512, env = "DENSENORM_PATCH_SIZE")]
    patch_size: usize,
    #[arg(long, env = "DENSENORM_JSON")]
    json: bool,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct StyleFile {
    target_mean: Vec<f64>,
    target_std: Vec<f64>,
    #[serde(default)]
    gamma: Vec<f64>,
    #[serde(default)]
    beta: Vec<f64>,
}

#[derive(Debug)]
enum Failure {
    Config(String),
    Io(String),
    Protocol(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => EXIT_CONFIG,
            Failure::Io(_) => EXIT_IO,
            Failure::Protocol(_) => EXIT_PROTOCOL,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Config(m) | Failure::Io(m) | Failure::Protocol(m) => m,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_io() {
            Failure::Io(e.to_string())
        } else if e.is_protocol_violation() {
            Failure::Protocol(e.to_string())
        } else {
            Failure::Config(e.to_string())
        }
    }
}

type CliResult<T = ()> = Result<T, Failure>;

fn io_err(path: &Path, e: impl std::fmt::Display) -> Failure {
    Failure::Io(format!("{}: {e}", path.display()))
}

fn strategy_from(args: &NormArgs) -> CliResult<StrategyConfig> {
    if args.granularity.is_some() && args.norm != StrategyKind::Dn {
        return Err(Failure::Config(
            "--granularity only applies to --norm dn".into(),
        ));
    }
    if args.kin_kernel.is_some() && args.norm != StrategyKind::Kin {
        return Err(Failure::Config(
            "--kin-kernel only applies to --norm kin".into(),
        ));
    }
    let mut s = StrategyConfig::new(args.norm);
    s.epsilon = args.epsilon;
    s.kin_kernel = args.kin_kernel.unwrap_or(DEFAULT_KIN_KERNEL);
    s.granularity = args.granularity.unwrap_or(1);
    s.reciprocal_sigma = !args.direct_sigma;
    s.validate(args.patch_size)?;
    Ok(s)
}

/// Stylizer and affine parameters from whichever style source was given.
fn style_from(args: &StyleArgs, epsilon: f64) -> CliResult<(StylizerSpec, AffineParams)> {
    if let Some(path) = &args.style {
        let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        let f: StyleFile = serde_json::from_str(&text)
            .map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
        return Ok((
            StylizerSpec::new(f.target_mean, f.target_std),
            AffineParams::new(f.gamma, f.beta),
        ));
    }
    if let Some(path) = &args.style_from {
        let reference = load_image(path)?;
        return Ok((
            StylizerSpec::from_reference(&reference, epsilon)?,
            AffineParams::identity(),
        ));
    }
    let default = StylizerSpec::default();
    Ok((
        StylizerSpec::new(
            args.target_mean.clone().unwrap_or(default.target_mean),
            args.target_std.clone().unwrap_or(default.target_std),
        ),
        AffineParams::identity(),
    ))
}

fn print_json(value: &impl Serialize) {
    println!(
        "{}",
        serde_json::to_string_pretty(value).expect("reports serialize")
    );
}

fn translate(args: TranslateArgs) -> CliResult {
    if !(1..=2).contains(&args.threads) {
        return Err(Failure::Config("--threads must be 1 or 2".into()));
    }
    let mut strategy = strategy_from(&args.norm)?;
    let (stylizer, affine) = style_from(&args.style, strategy.epsilon)?;
    strategy.affine = affine;
    let image = load_image(&args.input)?;
    let options = PassOptions {
        threads: args.threads,
        instrument: false,
    };
    let (out, pass) = translate_image(
        &image,
        args.norm.patch_size,
        args.pipeline.into(),
        &strategy,
        &stylizer,
        options,
    )?;
    save_image(&out, &args.output)?;
    if let Some(path) = &args.dump_moments {
        let dump = pass
            .table
            .as_ref()
            .map(|t| t.to_json())
            .unwrap_or_else(|| json!({}));
        let text = serde_json::to_string_pretty(&dump).expect("moments serialize");
        fs::write(path, text).map_err(|e| io_err(path, e))?;
    }
    if args.json {
        print_json(&pass.report);
    } else {
        let r = &pass.report;
        println!(
            "{} -> {}: {}x{} px, {} patches, {} steps, {:.1} ms ({} norm)",
            args.input.display(),
            args.output.display(),
            image.width(),
            image.height(),
            r.patches_translated,
            r.steps_executed,
            r.total_ms,
            strategy.kind
        );
    }
    Ok(())
}

fn bench(args: BenchArgs) -> CliResult {
    if !(1..=2).contains(&args.threads) {
        return Err(Failure::Config("--threads must be 1 or 2".into()));
    }
    let n = args.patch_size;
    let patches = (args.height.div_ceil(n) * args.width.div_ceil(n)).max(1);
    let interp = bench_interpolation(n, args.iterations, patches)?;
    let pipeline = if args.skip_pipeline {
        None
    } else {
        let image = Synthetic::texture(args.height, args.width, args.seed);
        Some(bench_pipeline(
            &image,
            n,
            &StrategyConfig::dn(1),
            &StylizerSpec::default(),
            args.threads,
            args.repeats,
        )?)
    };
    if args.json {
        print_json(&json!({
            "schema": 1,
            "interpolation": interp,
            "pipeline": pipeline,
        }));
        return Ok(());
    }
    println!(
        "interpolation, N={n}, {} cells per variant",
        args.iterations
    );
    println!(
        "{:<14}{:>14}{:>16}{:>18}{:>10}",
        "variant", "per_cell_ms", "per_patch_ms", "whole_image_ms", "speedup"
    );
    for row in &interp.rows {
        let name = serde_json::to_value(row.variant).expect("variant serializes");
        println!(
            "{:<14}{:>14.4}{:>16.4}{:>18.2}{:>9.1}x",
            name.as_str().unwrap_or_default(),
            row.per_cell_ms,
            row.per_patch_ms,
            row.whole_image_ms,
            row.speedup
        );
    }
    if let Some(p) = pipeline {
        println!(
            "pipeline, {}x{} px, N={}, {} thread(s): single-pass {:.1} ms, two-stage {:.1} ms, outputs {}",
            p.width,
            p.height,
            p.patch_size,
            p.threads,
            p.single_pass_ms,
            p.two_stage_ms,
            if p.outputs_match { "identical" } else { "DIFFER" }
        );
    }
    Ok(())
}

fn powers_of_two_up_to(n: usize) -> Vec<usize> {
    let mut gs: Vec<usize> = std::iter::successors(Some(1usize), |g| Some(g * 2))
        .take_while(|&g| g <= n && n.is_multiple_of(g))
        .collect();
    gs.reverse();
    gs
}

fn ablate(args: AblateArgs) -> CliResult {
    let (stylizer, affine) = style_from(&args.style, args.epsilon)?;
    let image = match &args.input {
        Some(path) => load_image(path)?,
        None => Synthetic::new(Pattern::Gradient, args.size, args.size, 3, args.seed).render(),
    };
    let gs = args
        .granularity
        .clone()
        .unwrap_or_else(|| powers_of_two_up_to(args.patch_size));
    let mut base = StrategyConfig::dn(1);
    base.epsilon = args.epsilon;
    base.affine = affine.clone();
    let rows = ablate_granularity(&image, args.patch_size, &stylizer, &gs, &base)?;
    let mut pin = StrategyConfig::patch_in();
    pin.epsilon = args.epsilon;
    pin.affine = affine;
    let baseline = translated_seams(&image, args.patch_size, &stylizer, &pin)?;
    if args.json {
        print_json(&json!({
            "schema": 1,
            "patch_size": args.patch_size,
            "patch_in": baseline,
            "rows": rows,
        }));
        return Ok(());
    }
    println!(
        "{:<12}{:>14}{:>14}{:>14}",
        "granularity", "boundary", "interior", "seam_ratio"
    );
    let line = |label: String, r: &SeamReport| {
        println!(
            "{:<12}{:>14.6}{:>14.6}{:>14.4}",
            label, r.boundary_mean_absdiff, r.interior_mean_absdiff, r.seam_ratio
        )
    };
    line("in".into(), &baseline);
    for row in &rows {
        line(row.granularity.to_string(), &row.report);
    }
    Ok(())
}

fn seams(args: SeamsArgs) -> CliResult {
    let image = load_image(&args.input)?;
    let report = seam_energy(&image, args.patch_size)?;
    if args.json {
        print_json(&json!({ "schema": 1, "report": report }));
    } else {
        println!(
            "boundary {:.6}  interior {:.6}  seam_ratio {:.4}",
            report.boundary_mean_absdiff, report.interior_mean_absdiff, report.seam_ratio
        );
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Translate(a) => translate(a),
        Command::Bench(a) => bench(a),
        Command::Ablate(a) => ablate(a),
        Command::Seams(a) => seams(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("densenorm: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
