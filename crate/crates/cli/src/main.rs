use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use prostfuse::bvol;
use prostfuse::phantom::{self, PhantomConfig};
use prostfuse::registration::{register_iconic, RegistrationConfig};
use prostfuse::session::{self, FusionSession, SessionConfig, SessionTruth, SyntheticSession};
use prostfuse::similarity::SimilarityKind;
use prostfuse::validation::mean_max;

const RESULTS_FILE: &str = "results.json";

#[derive(Parser)]
#[command(name = "prostfuse", version, about = "Rigid fusion of 3D prostate ultrasound volumes and biopsy mapping")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthetic ultrasound phantoms.
    #[command(subcommand)]
    Phantom(PhantomCommand),
    /// Register one volume onto another.
    Register(RegisterArgs),
    /// Fusion sessions.
    #[command(subcommand)]
    Session(SessionCommand),
    /// Compare a session run with phantom ground truth.
    Validate(ValidateArgs),
    /// Rebuild the report of a finished session run.
    Report(ReportArgs),
}

#[derive(Subcommand)]
enum PhantomCommand {
    /// Write one phantom volume plus its ground truth.
    Generate(GenerateArgs),
    /// Write R0, perturbed biopsy volumes, a session file and ground truth.
    Session(SynthArgs),
}

#[derive(Subcommand)]
enum SessionCommand {
    /// Fuse every biopsy volume to R0 and score the needles.
    Run(RunArgs),
}

#[derive(Args)]
struct RegistrationFlags {
    /// Similarity measure: ssd, ncc or nmi.
    #[arg(long)]
    metric: Option<String>,
    /// Histogram bins for nmi.
    #[arg(long)]
    bins: Option<usize>,
    /// Pyramid levels.
    #[arg(long)]
    levels: Option<usize>,
}

impl RegistrationFlags {
    fn apply(&self, cfg: &mut RegistrationConfig) -> Result<()> {
        if self.metric.is_some() || self.bins.is_some() {
            let metric = match (&self.metric, cfg.metric) {
                (Some(m), _) => m.clone(),
                (None, SimilarityKind::Nmi { .. }) => "nmi".into(),
                (None, other) => other.to_string(),
            };
            let bins = match (self.bins, cfg.metric) {
                (Some(b), _) => b,
                (None, SimilarityKind::Nmi { bins }) => bins,
                (None, _) => prostfuse::similarity::DEFAULT_BINS,
            };
            cfg.metric = SimilarityKind::from_flags(&metric, bins)?;
        }
        if let Some(levels) = self.levels {
            cfg.pyramid_levels = levels;
        }
        cfg.validate()?;
        Ok(())
    }
}

#[derive(Args)]
struct GenerateArgs {
    /// Phantom settings as JSON; defaults apply to missing fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output volume; ground truth goes next to it as `<name>.truth.json`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    /// Synthetic session settings as JSON; defaults apply to missing fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Number of biopsies (1 to 12).
    #[arg(long)]
    count: Option<usize>,
    #[command(flatten)]
    registration: RegistrationFlags,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RegisterArgs {
    /// Reference volume (BVOL1).
    #[arg(long)]
    fixed: PathBuf,
    /// Volume to align onto the reference (BVOL1).
    #[arg(long)]
    moving: PathBuf,
    #[command(flatten)]
    registration: RegistrationFlags,
    /// Start from a 180° probe turn.
    #[arg(long)]
    left_lobe: bool,
    /// Write the result as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    session: PathBuf,
    #[command(flatten)]
    registration: RegistrationFlags,
    /// Worker threads; all logical cores by default.
    #[arg(long)]
    jobs: Option<usize>,
    /// Override the target box: x0,x1,y0,y1,z0,z1 (mm).
    #[arg(long, value_parser = parse_bbox, allow_hyphen_values = true)]
    bbox: Option<[f64; 6]>,
    /// Output directory for results.json, report.csv and summary.txt.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ValidateArgs {
    /// results.json from `session run`.
    results: PathBuf,
    /// truth.json from `phantom session`.
    #[arg(long)]
    truth: PathBuf,
    /// Write per-biopsy checks as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// results.json from `session run`.
    results: PathBuf,
    /// Override the target box: x0,x1,y0,y1,z0,z1 (mm).
    #[arg(long, value_parser = parse_bbox, allow_hyphen_values = true)]
    bbox: Option<[f64; 6]>,
    #[arg(long)]
    out: PathBuf,
}

fn parse_bbox(s: &str) -> Result<[f64; 6], String> {
    let values: Vec<f64> = s
        .split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|e| format!("`{v}`: {e}")))
        .collect::<Result<_, _>>()?;
    values
        .try_into()
        .map_err(|v: Vec<f64>| format!("expected 6 comma-separated values, got {}", v.len()))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn write_json<T: serde::Serialize>(value: &T, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn phantom_generate(args: &GenerateArgs) -> Result<()> {
    let mut cfg: PhantomConfig = match &args.config {
        Some(p) => read_json(p)?,
        None => PhantomConfig::default(),
    };
    cfg.seed = args.seed;
    let (vol, truth) = phantom::generate(&cfg)?;
    bvol::write_volume(&vol, &args.out)?;
    let truth_path = args.out.with_extension("truth.json");
    write_json(&truth, &truth_path)?;
    println!(
        "wrote {} ({}x{}x{}) and {}",
        args.out.display(),
        vol.dims()[0],
        vol.dims()[1],
        vol.dims()[2],
        truth_path.display()
    );
    Ok(())
}

fn phantom_session(args: &SynthArgs) -> Result<()> {
    let mut spec: SyntheticSession = match &args.config {
        Some(p) => read_json(p)?,
        None => SyntheticSession::default(),
    };
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    if let Some(count) = args.count {
        spec.count = count;
    }
    args.registration.apply(&mut spec.registration)?;
    let (cfg, _) = session::synthesize_session(&spec, &args.out)?;
    println!(
        "wrote R0 and {} biopsy volumes to {}",
        cfg.biopsies.len(),
        args.out.display()
    );
    Ok(())
}

fn register(args: &RegisterArgs) -> Result<ExitCode> {
    let fixed = bvol::read_volume(&args.fixed)?;
    let moving = bvol::read_volume(&args.moving)?;
    let mut cfg = RegistrationConfig {
        left_lobe_mode: args.left_lobe,
        ..RegistrationConfig::default()
    };
    args.registration.apply(&mut cfg)?;
    let result = register_iconic(&fixed, &moving, &cfg)?;
    let [rx, ry, rz] = result.transform.euler_deg();
    let t = result.transform.translation();
    println!(
        "{} in {:.2} s: {} {:.4}, rotation ({rx:.3}, {ry:.3}, {rz:.3}) deg, translation ({:.3}, {:.3}, {:.3}) mm",
        if result.succeeded { "succeeded" } else { "failed" },
        result.elapsed,
        cfg.metric,
        result.final_score,
        t.x,
        t.y,
        t.z
    );
    if let Some(out) = &args.out {
        write_json(&result, out)?;
    }
    Ok(if result.succeeded { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn session_run(args: &RunArgs) -> Result<ExitCode> {
    let mut cfg = SessionConfig::load(&args.session)?;
    args.registration.apply(&mut cfg.registration)?;
    if let Some(bbox) = args.bbox {
        cfg.bbox = bbox;
    }
    if args.jobs == Some(0) {
        bail!("--jobs must be at least 1");
    }
    let fused = session::run_session(&cfg, args.jobs)?;
    std::fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    fused.save(args.out.join(RESULTS_FILE))?;
    session::emit_report(&fused, &args.out)?;
    let summary = fused.summary();
    print!("{}", summary.to_text());
    Ok(if summary.n_succeeded > 0 { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn validate(args: &ValidateArgs) -> Result<()> {
    let fused = FusionSession::load(&args.results)?;
    let truth = SessionTruth::load(&args.truth)?;
    let checks = session::check_against_truth(&fused, &truth);
    println!("index,succeeded,rotation_error_deg,translation_error_mm,fre_mean_mm,fre_max_mm,needle_angle_deg");
    let opt = |v: Option<f64>| v.map_or_else(String::new, |v| format!("{v:.3}"));
    for c in &checks {
        println!(
            "{},{},{:.3},{:.3},{},{},{}",
            c.index,
            c.succeeded,
            c.rotation_error_deg,
            c.translation_error_mm,
            opt(c.fiducial_error.as_ref().map(|f| f.mean)),
            opt(c.fiducial_error.as_ref().map(|f| f.max)),
            opt(c.needle_angle_deg)
        );
    }
    let ok: Vec<_> = checks.iter().filter(|c| c.succeeded).collect();
    let fre: Vec<f64> = ok
        .iter()
        .filter_map(|c| c.fiducial_error.as_ref())
        .flat_map(|f| f.per_pair.iter().map(|(_, d)| *d))
        .collect();
    let angles: Vec<f64> = ok.iter().filter_map(|c| c.needle_angle_deg).collect();
    if let Some((mean, max)) = mean_max(&fre) {
        eprintln!("fiducial error over successful fusions: mean {mean:.3} mm, max {max:.3} mm");
    }
    if let Some((mean, max)) = mean_max(&angles) {
        eprintln!("needle direction error: mean {mean:.3} deg, max {max:.3} deg");
    }
    if let Some(out) = &args.out {
        write_json(&checks, out)?;
    }
    Ok(())
}

fn report(args: &ReportArgs) -> Result<()> {
    let mut fused = FusionSession::load(&args.results)?;
    if let Some(bbox) = args.bbox {
        fused.config.bbox = bbox;
    }
    let report = session::emit_report(&fused, &args.out)?;
    print!("{}", report.to_csv());
    Ok(())
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Phantom(PhantomCommand::Generate(a)) => phantom_generate(&a).map(|_| ExitCode::SUCCESS),
        Command::Phantom(PhantomCommand::Session(a)) => phantom_session(&a).map(|_| ExitCode::SUCCESS),
        Command::Register(a) => register(&a),
        Command::Session(SessionCommand::Run(a)) => session_run(&a),
        Command::Validate(a) => validate(&a).map(|_| ExitCode::SUCCESS),
        Command::Report(a) => report(&a).map(|_| ExitCode::SUCCESS),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
