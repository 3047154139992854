//! Command-line front end. [`run`] parses arguments, dispatches the
//! subcommand and maps failures to exit codes.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use ssnaps::config::{RunConfig, SCHEMA_VERSION};
use ssnaps::mixkit::{bench_case, run_benchmark, si_sdr, Estimator};
use ssnaps::priors::PriorDocument;
use ssnaps::sampler::{ssnaps_offscreen, ssnaps_separate, NfeReport, OffscreenConfig, TraceEntry};
use ssnaps::schedules::karras_schedule;
use ssnaps::wav::{read_wav, write_wav, SampleFormat, Signal};

pub mod checks;

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_NUMERICAL: i32 = 2;

/// Rate written by `synth`; `separate` keeps the rate of its input.
pub const DEFAULT_SAMPLE_RATE: u32 = 16_000;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] ssnaps::Error),
    #[error("{0}")]
    Usage(String),
    #[error("{0} oracle check(s) failed")]
    ChecksFailed(usize),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(e) if e.is_numerical() => EXIT_NUMERICAL,
            _ => EXIT_INVALID,
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn io_error(path: &Path, source: std::io::Error) -> CliError {
    CliError::Core(ssnaps::Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

#[derive(Debug, Parser)]
#[command(
    name = "ssnaps",
    version,
    about = "Annealed posterior sampling for source separation"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// JSON run configuration.
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the seed stored in the configuration.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory (created if missing).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum EstimatorArg {
    Ssnaps,
    Mixture,
    Truth,
}

impl From<EstimatorArg> for Estimator {
    fn from(e: EstimatorArg) -> Self {
        match e {
            EstimatorArg::Ssnaps => Estimator::Ssnaps,
            EstimatorArg::Mixture => Estimator::MixtureCopy,
            EstimatorArg::Truth => Estimator::GroundTruth,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the annealing schedule of a configuration as CSV.
    Schedule {
        /// JSON run configuration.
        #[arg(long)]
        config: PathBuf,
        /// CSV file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Draw sources from the priors and write a mixture with its references.
    Synth(RunArgs),
    /// Separate a mixture into conditioned speakers and noise.
    Separate {
        /// Mono WAV mixture.
        input: PathBuf,
        #[command(flatten)]
        run: RunArgs,
        /// Record the likelihood loss per annealing level.
        #[arg(long)]
        trace: bool,
    },
    /// Separate with the last speaker off-screen and crosstalk suppression on.
    OffscreenSeparate {
        input: PathBuf,
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        trace: bool,
    },
    /// Run the oracle agreement suite.
    OracleCheck,
    /// Run the seeded benchmark described by a configuration.
    Bench {
        /// JSON benchmark configuration.
        #[arg(long)]
        config: PathBuf,
        /// Directory for report.csv and report.md.
        #[arg(long)]
        out: PathBuf,
        /// Worker threads; defaults to the available parallelism.
        #[arg(long)]
        workers: Option<usize>,
        /// `mixture` and `truth` are baseline estimators.
        #[arg(long, value_enum, default_value = "ssnaps")]
        estimator: EstimatorArg,
    },
    /// SI-SDR of estimates against references, given as `REF EST` pairs.
    Eval {
        /// Reference and estimate WAV files, alternating.
        #[arg(required = true, num_args = 2.., value_name = "FILE")]
        files: Vec<PathBuf>,
    },
}

/// Parses `argv` (including the program name), runs it and returns the
/// process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INVALID } else { EXIT_OK };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Schedule { config, out } => schedule(&config, out.as_deref()),
        Command::Synth(args) => synth(&args),
        Command::Separate { input, run, trace } => separate(&input, &run, trace, false),
        Command::OffscreenSeparate { input, run, trace } => separate(&input, &run, trace, true),
        Command::OracleCheck => oracle_check(),
        Command::Bench {
            config,
            out,
            workers,
            estimator,
        } => bench(&config, &out, workers, estimator.into()),
        Command::Eval { files } => eval(&files),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| io_error(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| io_error(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(ssnaps::Error::from)?;
    text.push('\n');
    write_text(path, &text)
}

fn schedule(config: &Path, out: Option<&Path>) -> Result<()> {
    let cfg = RunConfig::load(config)?;
    let s = &cfg.sampler;
    let schedule = karras_schedule(s.sigma_max, s.sigma_min, s.n_annealing, s.schedule_rho)?;
    match out {
        Some(path) => {
            let file = fs::File::create(path).map_err(|e| io_error(path, e))?;
            schedule.write_csv(file)?;
        }
        None => schedule.write_csv(std::io::stdout().lock())?,
    }
    Ok(())
}

#[derive(Serialize)]
struct SynthManifest<'a> {
    schema_version: u32,
    seed: u64,
    sample_rate: u32,
    sir_db: &'a [f64],
    snr_db: f64,
    sigma_z: f64,
    files: Vec<String>,
}

fn synth(args: &RunArgs) -> Result<()> {
    let cfg = RunConfig::load(&args.config)?;
    let seed = args.seed.unwrap_or(cfg.seed);
    let (speech, noise) = cfg.load_priors()?;
    let case = bench_case(&cfg, &speech, &noise, seed)?;
    let mix = &case.mixture;
    create_dir(&args.out)?;

    let float = |samples: &[f64]| Signal::new(DEFAULT_SAMPLE_RATE, SampleFormat::Float32, samples.to_vec());
    let mut files = vec!["mixture.wav".to_string()];
    write_wav(args.out.join("mixture.wav"), &float(&mix.y))?;
    for (i, s) in mix.sources.iter().enumerate() {
        let name = format!("speech_{}.wav", i + 1);
        write_wav(args.out.join(&name), &float(s))?;
        files.push(name);
    }
    write_wav(args.out.join("noise.wav"), &float(&mix.noise))?;
    files.push("noise.wav".into());
    write_json(
        &args.out.join("synth.json"),
        &SynthManifest {
            schema_version: SCHEMA_VERSION,
            seed,
            sample_rate: DEFAULT_SAMPLE_RATE,
            sir_db: &mix.sir_db,
            snr_db: mix.snr_db,
            sigma_z: mix.sigma_z,
            files,
        },
    )
}

#[derive(Serialize)]
struct PriorEcho {
    speech: PriorDocument,
    noise: PriorDocument,
}

/// Everything needed to repeat a run bit for bit. Wall time is kept out so
/// that identical runs give identical manifests.
#[derive(Serialize)]
struct RunManifest<'a> {
    schema_version: u32,
    command: &'static str,
    input: String,
    input_sample_rate: u32,
    seed: u64,
    config: &'a RunConfig,
    priors: PriorEcho,
    nfe: &'a NfeReport,
    outputs: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    trace: Option<&'a [TraceEntry]>,
}

#[derive(Serialize)]
struct Timing {
    wall_seconds: f64,
}

fn separate(input: &Path, args: &RunArgs, trace: bool, offscreen: bool) -> Result<()> {
    let cfg = RunConfig::load(&args.config)?;
    let off: Option<&OffscreenConfig> = match (offscreen, cfg.offscreen.as_ref()) {
        (true, None) => {
            return Err(CliError::Usage(
                "offscreen-separate needs an `offscreen` block in the configuration".into(),
            ))
        }
        (false, Some(_)) => {
            return Err(CliError::Usage(
                "configuration has an `offscreen` block; use offscreen-separate".into(),
            ))
        }
        (_, off) => off,
    };
    let seed = args.seed.unwrap_or(cfg.seed);
    let (speech, noise) = cfg.load_priors()?;
    let docs = PriorEcho {
        speech: speech.to_document(),
        noise: noise.to_document(),
    };
    let mixture = read_wav(input)?;
    let sampler = cfg.sampler_config(speech, noise, seed, trace)?;

    let start = Instant::now();
    let out = match off {
        Some(off) => ssnaps_offscreen(&mixture.samples, &sampler, off)?,
        None => ssnaps_separate(&mixture.samples, &sampler)?,
    };
    let wall_seconds = start.elapsed().as_secs_f64();

    create_dir(&args.out)?;
    let rate = mixture.sample_rate;
    let mut outputs = Vec::with_capacity(out.state.k() + 1);
    for (i, s) in out.state.speech.iter().enumerate() {
        let name = format!("speech_{}.wav", i + 1);
        write_wav(
            args.out.join(&name),
            &Signal::new(rate, SampleFormat::Float32, s.clone()),
        )?;
        outputs.push(name);
    }
    write_wav(
        args.out.join("noise.wav"),
        &Signal::new(rate, SampleFormat::Float32, out.state.noise.clone()),
    )?;
    outputs.push("noise.wav".into());

    let input_name = input
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    write_json(
        &args.out.join("manifest.json"),
        &RunManifest {
            schema_version: SCHEMA_VERSION,
            command: if offscreen { "offscreen-separate" } else { "separate" },
            input: input_name,
            input_sample_rate: rate,
            seed,
            config: &cfg,
            priors: docs,
            nfe: &out.nfe,
            outputs,
            trace: trace.then_some(out.trace.as_slice()),
        },
    )?;
    write_json(&args.out.join("timing.json"), &Timing { wall_seconds })?;
    println!(
        "separated {} sources, speech NFE {:?}, noise NFE {}",
        out.state.k() + 1,
        out.nfe.speech_per_source,
        out.nfe.noise
    );
    Ok(())
}

fn oracle_check() -> Result<()> {
    let results = checks::run_all()?;
    let mut failed = 0;
    for r in &results {
        println!("{r}");
        failed += usize::from(!r.passed);
    }
    if failed > 0 {
        return Err(CliError::ChecksFailed(failed));
    }
    Ok(())
}

fn bench(config: &Path, out: &Path, workers: Option<usize>, estimator: Estimator) -> Result<()> {
    let cfg = RunConfig::load(config)?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = workers {
        if n == 0 {
            return Err(CliError::Usage("--workers must be at least 1".into()));
        }
        pool = pool.num_threads(n);
    }
    let pool = pool
        .build()
        .map_err(|e| CliError::Usage(format!("cannot start worker pool: {e}")))?;
    let report = pool.install(|| run_benchmark(&cfg, estimator))?;

    create_dir(out)?;
    let csv_path = out.join("report.csv");
    let file = fs::File::create(&csv_path).map_err(|e| io_error(&csv_path, e))?;
    report.write_csv(file)?;
    let table = report.to_markdown();
    write_text(&out.join("report.md"), &table)?;
    print!("{table}");
    Ok(())
}

fn eval(files: &[PathBuf]) -> Result<()> {
    if !files.len().is_multiple_of(2) {
        return Err(CliError::Usage(format!(
            "eval takes reference/estimate pairs, got {} files",
            files.len()
        )));
    }
    for pair in files.chunks(2) {
        let reference = read_wav(&pair[0])?;
        let estimate = read_wav(&pair[1])?;
        let score = si_sdr(&estimate.samples, &reference.samples)?;
        println!("{}\t{}\t{score:.4}", pair[0].display(), pair[1].display());
    }
    Ok(())
}
