//! `fareanon` command-line driver.

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fareanon::audit::{self, AuditReport, TruthResolver};
use fareanon::model::config_digest;
use fareanon::pipeline::io::read_anonymized;
use fareanon::pipeline::manifest::{manifest_path, RunManifest};
use fareanon::pipeline::validate::validate_output_with;
use fareanon::synth::{write_month_csv, GroundTruth};
use fareanon::{anonymize, AnonymizeOptions, CsvSource, Error, Execution, PseudonymKey, WeekdayKeep};
use log::info;

use crate::config::FileConfig;

/// Anonymize smart-card fare transactions for open release.
#[derive(Debug, Parser)]
#[command(name = "fareanon", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic month of raw transactions plus its ground truth.
    Generate(GenerateArgs),
    /// Anonymize a raw transaction CSV into monthly release files.
    Anonymize(AnonymizeArgs),
    /// Measure re-identification risk of a release.
    Audit(AuditArgs),
    /// Check anonymized CSVs against the published schema.
    Validate(ValidateArgs),
    /// Create a new random pseudonym key file.
    Keygen(KeygenArgs),
}

#[derive(Debug, Args)]
struct Common {
    /// Flat TOML configuration file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Debug, Args)]
struct GenerateArgs {
    #[command(flatten)]
    common: Common,
    /// Directory for raw_<year>_<month>.csv and ground_truth.json.
    #[arg(long)]
    output_dir: PathBuf,
    /// Population seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Multiplier on the configured card count.
    #[arg(long)]
    scale: Option<f64>,
    /// Year to generate (default 2013).
    #[arg(long)]
    year: Option<i32>,
    /// Month to generate (default 10).
    #[arg(long)]
    month: Option<u32>,
    /// Replace existing files.
    #[arg(long)]
    overwrite: bool,
}

#[derive(Debug, Args)]
struct AnonymizeArgs {
    #[command(flatten)]
    common: Common,
    /// Raw transaction CSV.
    #[arg(long)]
    input: PathBuf,
    /// Directory for anon_<year>_<month>.csv files and private/manifest.json.
    #[arg(long)]
    output_dir: PathBuf,
    /// Secret pseudonym key (see `keygen`).
    #[arg(long)]
    key_file: PathBuf,
    /// Run seed for day and card sampling and date IDs.
    #[arg(long)]
    seed: Option<u64>,
    /// Drop and count invalid rows instead of failing.
    #[arg(long)]
    skip_invalid: bool,
    /// Replace existing files.
    #[arg(long)]
    overwrite: bool,
}

#[derive(Debug, Args)]
struct AuditArgs {
    #[command(flatten)]
    common: Common,
    /// Anonymized monthly CSV(s) of one release.
    #[arg(long, required = true, num_args = 1..)]
    input: Vec<PathBuf>,
    /// Directory for audit_report.json and audit_report.csv.
    #[arg(long)]
    output_dir: PathBuf,
    /// Ground truth written by `generate`; enables the linkage attack.
    #[arg(long)]
    ground_truth: Option<PathBuf>,
    /// Key the release was made with; required with --ground-truth.
    #[arg(long)]
    key_file: Option<PathBuf>,
    /// Release manifest (default: private/manifest.json beside the first input).
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Raw input of the release; enables the sampling-off comparison.
    #[arg(long)]
    raw_input: Option<PathBuf>,
    /// Seed for the Monte Carlo trials.
    #[arg(long)]
    seed: Option<u64>,
    /// Monte Carlo trials per weekday-occurrence case.
    #[arg(long, default_value_t = 100_000)]
    trials: u64,
    /// Drop invalid rows of --raw-input instead of failing.
    #[arg(long)]
    skip_invalid: bool,
    /// Replace existing report files.
    #[arg(long)]
    overwrite: bool,
}

#[derive(Debug, Args)]
struct ValidateArgs {
    /// Configuration file; only time_granularity_minutes is used.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Anonymized CSV(s) to check.
    #[arg(long, required = true, num_args = 1..)]
    input: Vec<PathBuf>,
}

#[derive(Debug, Args)]
struct KeygenArgs {
    /// Where to write the 32-byte key; must not exist.
    #[arg(long)]
    key_file: PathBuf,
}

/// Failure categories, each with its own exit status.
#[derive(Debug)]
enum Failure {
    Config(String),
    MissingFile(String),
    KeyMissing(PathBuf),
    InvalidData(String),
    OutputExists(String),
    GroundTruth(String),
    Violations(u64),
    Other(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Other(_) => 1,
            Failure::Config(_) => 3,
            Failure::MissingFile(_) => 4,
            Failure::KeyMissing(_) => 5,
            Failure::InvalidData(_) => 6,
            Failure::OutputExists(_) => 7,
            Failure::GroundTruth(_) => 8,
            Failure::Violations(_) => 9,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Config(m) => write!(f, "configuration error: {m}"),
            Failure::MissingFile(m) => write!(f, "missing file: {m}"),
            Failure::KeyMissing(p) => write!(f, "key file not found: {}", p.display()),
            Failure::InvalidData(m) => write!(f, "invalid data: {m}"),
            Failure::OutputExists(m) => write!(f, "output exists: {m}"),
            Failure::GroundTruth(m) => write!(f, "ground truth mismatch: {m}"),
            Failure::Violations(n) => write!(f, "{n} schema violation(s) found"),
            Failure::Other(m) => write!(f, "{m}"),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let msg = e.to_string();
        match e {
            Error::Config(_) | Error::Domain(_) => Failure::Config(msg),
            Error::Io { ref source, .. } if source.kind() == std::io::ErrorKind::NotFound => {
                Failure::MissingFile(msg)
            }
            Error::InvalidRow { .. } | Error::Csv { .. } | Error::Json { .. } | Error::Format(_) => {
                Failure::InvalidData(msg)
            }
            Error::OutputExists(_) => Failure::OutputExists(msg),
            Error::GroundTruthMismatch(_) => Failure::GroundTruth(msg),
            _ => Failure::Other(msg),
        }
    }
}

type Outcome = Result<(), Failure>;

fn load_config(path: Option<&Path>) -> Result<FileConfig, Failure> {
    if let Some(p) = path {
        if !p.exists() {
            return Err(Failure::MissingFile(p.display().to_string()));
        }
    }
    FileConfig::load(path).map_err(Failure::Config)
}

fn execution(threads: Option<usize>) -> Result<Execution, Failure> {
    Ok(Execution::with_threads(threads)?)
}

fn read_key(path: &Path) -> Result<PseudonymKey, Failure> {
    if !path.exists() {
        return Err(Failure::KeyMissing(path.to_path_buf()));
    }
    Ok(PseudonymKey::read(path)?)
}

fn require_file(path: &Path) -> Outcome {
    if path.is_file() {
        Ok(())
    } else {
        Err(Failure::MissingFile(path.display().to_string()))
    }
}

fn generate(args: GenerateArgs) -> Outcome {
    let file = load_config(args.common.config.as_deref())?;
    let mut spec = file.population(args.seed);
    if let Some(scale) = args.scale {
        spec = spec.scaled(scale)?;
    }
    spec.validate()?;
    let year = args.year.or(file.year).unwrap_or(2013);
    let month = args.month.or(file.month).unwrap_or(10);
    let exec = execution(args.common.threads)?;
    info!("generate: population config digest {}", config_digest(&spec));
    info!("generate: {} cards for {year}-{month:02} on {} thread(s)", spec.card_count, exec.threads());

    std::fs::create_dir_all(&args.output_dir)
        .map_err(|e| Failure::Other(format!("{}: {e}", args.output_dir.display())))?;
    let raw = args.output_dir.join(format!("raw_{year}_{month:02}.csv"));
    let truth_path = args.output_dir.join("ground_truth.json");
    if !args.overwrite && truth_path.exists() {
        return Err(Failure::OutputExists(truth_path.display().to_string()));
    }
    let (truth, digest) = write_month_csv(&spec, year, month, &exec, &raw, args.overwrite)?;
    truth.write(&truth_path, args.overwrite)?;
    info!("generate: {} rows", truth.total_rows);
    println!("raw\t{}\t{}\t{} rows", raw.display(), digest, truth.total_rows);
    println!("ground_truth\t{}", truth_path.display());
    Ok(())
}

fn run_anonymize(args: AnonymizeArgs) -> Outcome {
    let file = load_config(args.common.config.as_deref())?;
    let config = file.anonymization(args.seed).map_err(Failure::Config)?;
    config.validate()?;
    require_file(&args.input)?;
    let key = read_key(&args.key_file)?;
    let exec = execution(args.common.threads)?;
    info!("anonymize: config digest {}", config_digest(&config));
    info!("anonymize: {} thread(s)", exec.threads());
    let opts = AnonymizeOptions {
        skip_invalid: args.skip_invalid,
        execution: exec,
    };
    let mut release = anonymize(&CsvSource(args.input.clone()), &config, &key, &opts)?;
    let manifest = release.write(&args.output_dir, args.overwrite)?;
    for m in &manifest.months {
        println!(
            "{}\t{}\t{} rows",
            args.output_dir.join(&m.file).display(),
            m.sha256.as_deref().unwrap_or(""),
            m.output_rows
        );
    }
    println!("manifest\t{}", manifest_path(&args.output_dir).display());
    Ok(())
}

fn run_audit(args: AuditArgs) -> Outcome {
    let file = load_config(args.common.config.as_deref())?;
    for p in &args.input {
        require_file(p)?;
    }
    let exec = execution(args.common.threads)?;
    let manifest_file = args.manifest.clone().unwrap_or_else(|| {
        manifest_path(args.input[0].parent().unwrap_or_else(|| Path::new(".")))
    });
    let manifest = if manifest_file.is_file() {
        Some(RunManifest::read(&manifest_file)?)
    } else if args.manifest.is_some() {
        return Err(Failure::MissingFile(manifest_file.display().to_string()));
    } else {
        None
    };
    let mut config = match &manifest {
        Some(m) => m.config.clone(),
        None => file.anonymization(None).map_err(Failure::Config)?,
    };
    if let Some(seed) = args.seed {
        config.run_seed = seed;
    }
    config.validate()?;
    info!("audit: config digest {}", config_digest(&config));

    let mut records = Vec::new();
    for p in &args.input {
        records.extend(read_anonymized(p)?);
    }
    info!("audit: {} published rows", records.len());

    let mut inclusion = Vec::new();
    for occ in [4u32, 5] {
        if let WeekdayKeep::Count(k) = config.weekday_keep_count {
            if k > occ {
                continue;
            }
        }
        inclusion.push(audit::monte_carlo_inclusion(&config, occ, args.trials, &exec)?);
    }
    let uniqueness = audit::trajectory_uniqueness(&records);

    let (mut linkage, mut linkage_without_sampling) = (None, None);
    if let Some(truth_path) = &args.ground_truth {
        require_file(truth_path)?;
        let key_path = args
            .key_file
            .as_deref()
            .ok_or_else(|| Failure::Config("--ground-truth needs --key-file".into()))?;
        let key = read_key(key_path)?;
        let manifest = manifest
            .as_ref()
            .ok_or_else(|| Failure::MissingFile(manifest_file.display().to_string()))?;
        let truth = GroundTruth::read(truth_path)?;
        let resolver = TruthResolver::new(&truth, &key, manifest, &exec)?;
        linkage = Some(audit::linkage_attack(&records, &resolver, &exec)?);
        if let Some(raw) = &args.raw_input {
            require_file(raw)?;
            let off = config.without_sampling();
            info!("audit: sampling-off config digest {}", config_digest(&off));
            let opts = AnonymizeOptions {
                skip_invalid: args.skip_invalid,
                execution: exec.clone(),
            };
            let release = anonymize(&CsvSource(raw.clone()), &off, &key, &opts)?;
            let resolver = TruthResolver::new(&truth, &key, &release.manifest, &exec)?;
            let all: Vec<_> = release.months.into_iter().flat_map(|m| m.records).collect();
            linkage_without_sampling = Some(audit::linkage_attack(&all, &resolver, &exec)?);
        }
    } else if args.raw_input.is_some() {
        return Err(Failure::Config("--raw-input needs --ground-truth".into()));
    }

    let report = AuditReport {
        config,
        inclusion,
        uniqueness,
        linkage,
        linkage_without_sampling,
        daily_volumes: audit::daily_volumes(&records),
        date_reversal_note: audit::DATE_REVERSAL_NOTE.to_string(),
    };
    let (json, csv) = report.write(&args.output_dir, args.overwrite)?;
    for e in &report.inclusion {
        println!(
            "inclusion occ={}\tanalytic {:.6}\tempirical {:.6} ± {:.6}\tstreak {:.6} vs {:.6} ± {:.6}",
            e.weekday_occurrences,
            e.analytic_per_day,
            e.empirical_per_day,
            e.per_day_standard_error,
            e.analytic_streak,
            e.empirical_streak,
            e.streak_standard_error
        );
    }
    let buckets: Vec<String> = report
        .uniqueness
        .buckets
        .iter()
        .map(|b| format!("k={}:{}", b.label, b.card_days))
        .collect();
    println!("uniqueness\t{} card-days\t{}", report.uniqueness.card_days, buckets.join(" "));
    for (label, l) in [("linkage", &report.linkage), ("linkage_without_sampling", &report.linkage_without_sampling)] {
        if let Some(l) = l {
            println!(
                "{label}\taccuracy {:.6}\tchance {:.6}\t{} links",
                l.accuracy, l.chance_baseline, l.proposed_links
            );
        }
    }
    println!("report\t{}\t{}", json.display(), csv.display());
    Ok(())
}

fn run_validate(args: ValidateArgs) -> Outcome {
    let file = load_config(args.config.as_deref())?;
    let config = file.anonymization(None).map_err(Failure::Config)?;
    config.validate()?;
    info!("validate: config digest {}", config_digest(&config));
    let mut total = 0u64;
    for p in &args.input {
        require_file(p)?;
        let report = validate_output_with(p, config.time_granularity_minutes)?;
        print!("{report}");
        total += report.violation_count;
    }
    if total > 0 {
        return Err(Failure::Violations(total));
    }
    Ok(())
}

fn keygen(args: KeygenArgs) -> Outcome {
    let key = PseudonymKey::generate();
    key.write(&args.key_file)?;
    println!("{}\t{}", args.key_file.display(), key.fingerprint());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Generate(a) => generate(a),
        Command::Anonymize(a) => run_anonymize(a),
        Command::Audit(a) => run_audit(a),
        Command::Validate(a) => run_validate(a),
        Command::Keygen(a) => keygen(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("fareanon: {f}");
            ExitCode::from(f.code())
        }
    }
}
