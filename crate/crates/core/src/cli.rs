//! Command-line front end: one subcommand per pipeline stage.
//!
//! Every flag may also be given in a `key = value` config file passed with
//! `--config`; flags win over the file. Exit codes: 0 success, 1 runtime or
//! I/O failure, 2 usage or validation error.

use std::collections::HashMap;
use std::ffi::OsString;
use std::fmt;
use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, CommandFactory, Parser, Subcommand};

use crate::evaluation::{compare_report, AttackConfig, PrivacySummary};
use crate::meterdata::{
    generate_synthetic_meter, load_csv, load_truth_csv, standard_profiles, write_csv, write_truth_csv,
    ApplianceProfile, MeterDataError, ReadingBatch, SyntheticData, DEFAULT_BATCH_LEN, SYNTHETIC_METER_ID,
};
use crate::pipeline::{composed_budget, read_sidecar, write_sidecar, Obfuscator, PipelineError};
use crate::randomized_response::{sparsity_epsilon, mechanism_epsilon, PrivacyError, PrivacyParams};
use crate::sparse_coding::{train_dictionary, Dictionary, InitMode, Lambda, SparseCodingError, TrainingConfig};

#[derive(Debug, Parser)]
#[command(name = "loadveil", version, about = "Differentially private obfuscation of smart-meter load profiles")]
pub struct Cli {
    /// `key = value` file supplying defaults for any flag (`#` starts a comment).
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate appliance-level household readings and their ON/OFF truth.
    Synth(SynthArgs),
    /// Learn a nonnegative over-complete dictionary from readings.
    Train(TrainArgs),
    /// Perturb readings through the dictionary and randomized response.
    Obfuscate(ObfuscateArgs),
    /// Attack original and obfuscated readings and write a JSON report.
    Evaluate(EvaluateArgs),
    /// Print privacy budgets for given mechanism parameters.
    Epsilon(EpsilonArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Appliances as `name:rated_watts:mean_on:mean_off[:jitter]`, comma
    /// separated or repeated; defaults to the reference four-appliance house.
    #[arg(long, value_delimiter = ',')]
    pub appliances: Vec<String>,
    /// Readings per batch.
    #[arg(long)]
    pub t: Option<usize>,
    #[arg(long)]
    pub batches: Option<usize>,
    /// Number of simulated households sharing one timeline.
    #[arg(long)]
    pub meters: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long)]
    pub truth: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct LambdaArgs {
    /// Absolute sparsity weight.
    #[arg(long, conflicts_with = "lambda_relative")]
    pub lambda: Option<f64>,
    /// Sparsity weight as a fraction of the largest data-atom correlation.
    #[arg(long)]
    pub lambda_relative: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Training readings CSV.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Readings per batch (dictionary rows).
    #[arg(long)]
    pub t: Option<usize>,
    /// Dictionary columns; must exceed `t`.
    #[arg(long)]
    pub n: Option<usize>,
    #[command(flatten)]
    pub lambda: LambdaArgs,
    #[arg(long)]
    pub max_iters: Option<usize>,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// `data-segments` or `random`.
    #[arg(long)]
    pub init: Option<String>,
    /// Dictionary file to write.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ObfuscateArgs {
    #[arg(long)]
    pub dictionary: Option<PathBuf>,
    /// Readings CSV to obfuscate.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Batch length of the input; defaults to the dictionary's row count.
    #[arg(long)]
    pub t: Option<usize>,
    /// Randomized-response flip probability in [0, 1).
    #[arg(long)]
    pub f: Option<f64>,
    /// Overrides the measured activation sparsity in the reported budget.
    #[arg(long)]
    pub delta0: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub lambda: LambdaArgs,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Per-batch JSON metadata; defaults to the output path with `.json`.
    #[arg(long)]
    pub sidecar: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub original: Option<PathBuf>,
    #[arg(long)]
    pub obfuscated: Option<PathBuf>,
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Same syntax as `synth --appliances`; must match the truth columns.
    #[arg(long, value_delimiter = ',')]
    pub appliances: Vec<String>,
    #[arg(long)]
    pub t: Option<usize>,
    /// Sidecar from `obfuscate`, used to fill the privacy block.
    #[arg(long)]
    pub sidecar: Option<PathBuf>,
    /// Flip probability recorded in the privacy block.
    #[arg(long)]
    pub f: Option<f64>,
    /// Attack thresholds in watts, one per appliance in order.
    #[arg(long, value_delimiter = ',')]
    pub thresholds: Vec<f64>,
    #[arg(long)]
    pub hysteresis: Option<usize>,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EpsilonArgs {
    #[arg(long)]
    pub f: Option<f64>,
    #[arg(long)]
    pub delta0: Option<f64>,
    /// Activation length for the mechanism's own budget.
    #[arg(long)]
    pub n: Option<usize>,
}

/// Failure with its exit code.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Runtime(m) => f.write_str(m),
        }
    }
}

impl From<MeterDataError> for CliError {
    fn from(e: MeterDataError) -> Self {
        match e {
            MeterDataError::InvalidProfile { .. }
            | MeterDataError::NoProfiles
            | MeterDataError::InvalidBatch(_) => CliError::Usage(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<SparseCodingError> for CliError {
    fn from(e: SparseCodingError) -> Self {
        match e {
            SparseCodingError::InvalidConfig(_) | SparseCodingError::DimensionMismatch { .. } => {
                CliError::Usage(e.to_string())
            }
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<PrivacyError> for CliError {
    fn from(e: PrivacyError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::LengthMismatch { .. } | PipelineError::Privacy(_) => CliError::Usage(e.to_string()),
            PipelineError::SparseCoding(inner) => inner.into(),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

fn io_err(path: &Path, e: impl fmt::Display) -> CliError {
    CliError::Runtime(format!("{}: {e}", path.display()))
}

type CliResult<T> = Result<T, CliError>;

/// Values from `--config`; looked up by flag name with `-` or `_`.
#[derive(Debug, Default)]
struct ConfigFile {
    values: HashMap<String, String>,
}

impl ConfigFile {
    fn load(path: Option<&Path>) -> CliResult<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        Self::parse(&text).map_err(|m| CliError::Usage(format!("{}: {m}", path.display())))
    }

    fn parse(text: &str) -> Result<Self, String> {
        let mut values = HashMap::new();
        for (k, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| format!("line {}: expected `key = value`", k + 1))?;
            values.insert(key.trim().replace('-', "_"), value.trim().to_string());
        }
        Ok(Self { values })
    }

    fn get<T: FromStr>(&self, key: &str) -> CliResult<Option<T>>
    where
        T::Err: fmt::Display,
    {
        match self.values.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|e| CliError::Usage(format!("config key {key}: {e}"))),
        }
    }

    fn pick<T: FromStr>(&self, flag: Option<T>, key: &str) -> CliResult<Option<T>>
    where
        T::Err: fmt::Display,
    {
        match flag {
            Some(v) => Ok(Some(v)),
            None => self.get(key),
        }
    }

    fn list(&self, flag: &[String], key: &str) -> Vec<String> {
        if !flag.is_empty() {
            return flag.to_vec();
        }
        self.values
            .get(key)
            .map(|v| v.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect())
            .unwrap_or_default()
    }
}

fn missing(subcommand: &str, flag: &str) -> CliError {
    let mut cmd = Cli::command();
    cmd.build();
    let usage = cmd
        .find_subcommand_mut(subcommand)
        .map(|c| c.render_usage().to_string())
        .unwrap_or_default();
    CliError::Usage(format!("--{flag} is required\n\n{usage}"))
}

fn parse_appliance(spec: &str) -> CliResult<ApplianceProfile> {
    let parts: Vec<&str> = spec.split(':').collect();
    if !(4..=5).contains(&parts.len()) {
        return Err(CliError::Usage(format!(
            "appliance {spec:?}: expected name:rated_watts:mean_on:mean_off[:jitter]"
        )));
    }
    let num = |s: &str, what: &str| {
        s.parse::<f64>()
            .map_err(|_| CliError::Usage(format!("appliance {spec:?}: bad {what} {s:?}")))
    };
    let jitter = match parts.get(4) {
        Some(j) => num(j, "jitter")?,
        None => 0.0,
    };
    Ok(ApplianceProfile::new(
        parts[0],
        num(parts[1], "rated power")?,
        num(parts[2], "mean ON duration")?,
        num(parts[3], "mean OFF duration")?,
        jitter,
    )?)
}

fn profiles(specs: &[String]) -> CliResult<Vec<ApplianceProfile>> {
    if specs.is_empty() {
        Ok(standard_profiles())
    } else {
        specs.iter().map(|s| parse_appliance(s)).collect()
    }
}

fn lambda(cfg: &ConfigFile, args: &LambdaArgs) -> CliResult<Lambda> {
    let fixed = cfg.pick(args.lambda, "lambda")?;
    let relative = cfg.pick(args.lambda_relative, "lambda_relative")?;
    let l = match (args.lambda, args.lambda_relative, fixed, relative) {
        (Some(v), _, _, _) => Lambda::Fixed(v),
        (None, Some(r), _, _) => Lambda::Relative(r),
        (None, None, Some(v), _) => Lambda::Fixed(v),
        (None, None, None, Some(r)) => Lambda::Relative(r),
        (None, None, None, None) => Lambda::default(),
    };
    l.validate()?;
    Ok(l)
}

fn load_batches(path: &Path, t: usize) -> CliResult<Vec<ReadingBatch>> {
    match load_csv(path, t) {
        Err(MeterDataError::Io(e)) => Err(io_err(path, e)),
        other => other.map_err(|e| CliError::Runtime(format!("{}: {e}", path.display()))),
    }
}

fn cmd_synth(cfg: &ConfigFile, args: &SynthArgs) -> CliResult<()> {
    let t = cfg.pick(args.t, "t")?.ok_or_else(|| missing("synth", "t"))?;
    let batches = cfg.pick(args.batches, "batches")?.unwrap_or(1);
    let meters = cfg.pick(args.meters, "meters")?.unwrap_or(1);
    let seed = cfg.pick(args.seed, "seed")?.unwrap_or(0);
    let output = cfg.pick(args.output.clone(), "output")?.unwrap_or_else(|| "readings.csv".into());
    let truth_path = cfg.pick(args.truth.clone(), "truth")?.unwrap_or_else(|| "truth.csv".into());
    let profiles = profiles(&cfg.list(&args.appliances, "appliances"))?;
    if batches == 0 || meters == 0 {
        return Err(CliError::Usage("--batches and --meters must be positive".into()));
    }

    let mut all = SyntheticData {
        batches: Vec::new(),
        truth: Vec::new(),
    };
    for m in 0..meters {
        let (id, meter_seed) = if meters == 1 {
            (SYNTHETIC_METER_ID.to_string(), seed)
        } else {
            (format!("{SYNTHETIC_METER_ID}-{m:03}"), seed.wrapping_add(m as u64))
        };
        let data = generate_synthetic_meter(&id, &profiles, t, batches, meter_seed)?;
        all.batches.extend(data.batches);
        all.truth.extend(data.truth);
    }
    write_csv(&all.batches, &output).map_err(|e| io_err(&output, e))?;
    write_truth_csv(&all.batches, &all.truth, &truth_path).map_err(|e| io_err(&truth_path, e))?;
    eprintln!(
        "wrote {} batches of {t} readings to {} and truth to {}",
        all.batches.len(),
        output.display(),
        truth_path.display()
    );
    Ok(())
}

fn cmd_train(cfg: &ConfigFile, args: &TrainArgs) -> CliResult<()> {
    let input = cfg.pick(args.input.clone(), "input")?.ok_or_else(|| missing("train", "input"))?;
    let t = cfg.pick(args.t, "t")?.unwrap_or(DEFAULT_BATCH_LEN);
    let n = cfg.pick(args.n, "n")?.ok_or_else(|| missing("train", "n"))?;
    let output = cfg.pick(args.output.clone(), "output")?.unwrap_or_else(|| "dictionary.txt".into());
    let mut config = TrainingConfig::new(n);
    config.lambda = lambda(cfg, &args.lambda)?;
    if let Some(v) = cfg.pick(args.max_iters, "max_iters")? {
        config.max_outer_iters = v;
    }
    if let Some(v) = cfg.pick(args.tol, "tol")? {
        config.tol = v;
    }
    config.sigma = cfg.pick(args.sigma, "sigma")?;
    config.seed = cfg.pick(args.seed, "seed")?.unwrap_or(0);
    if let Some(mode) = cfg.pick(args.init.clone(), "init")? {
        config.init_mode = match mode.as_str() {
            "data-segments" => InitMode::DataSegments,
            "random" => InitMode::Random,
            other => {
                return Err(CliError::Usage(format!(
                    "--init must be data-segments or random, got {other:?}"
                )))
            }
        };
    }
    if n <= t {
        return Err(CliError::Usage(format!(
            "training needs an over-complete dictionary: --n {n} must exceed --t {t}"
        )));
    }
    config.validate()?;

    let batches = load_batches(&input, t)?;
    let (full, partial): (Vec<_>, Vec<_>) = batches.into_iter().partition(|b| b.len() == t);
    if !partial.is_empty() {
        eprintln!("warning: skipping {} batch(es) shorter than t={t}", partial.len());
    }
    if full.is_empty() {
        return Err(CliError::Runtime(format!(
            "{}: no complete batch of {t} readings",
            input.display()
        )));
    }
    let outcome = train_dictionary(&full, &config)?;
    outcome.dictionary.save(&output).map_err(|e| io_err(&output, e))?;
    eprintln!(
        "final objective {:.6e} after {} iteration(s){}",
        outcome.final_objective(),
        outcome.iterations,
        if outcome.converged { "" } else { " (not converged)" }
    );
    if !outcome.sigma_violations.is_empty() {
        eprintln!(
            "warning: {} batch(es) exceed the sigma reconstruction bound",
            outcome.sigma_violations.len()
        );
    }
    Ok(())
}

fn fmt_eps(e: Option<f64>) -> String {
    e.map_or_else(|| "n/a".to_string(), |v| format!("{v:.6}"))
}

fn cmd_obfuscate(cfg: &ConfigFile, args: &ObfuscateArgs) -> CliResult<()> {
    let dict_path = cfg
        .pick(args.dictionary.clone(), "dictionary")?
        .ok_or_else(|| missing("obfuscate", "dictionary"))?;
    let input = cfg.pick(args.input.clone(), "input")?.ok_or_else(|| missing("obfuscate", "input"))?;
    let f = cfg.pick(args.f, "f")?.ok_or_else(|| missing("obfuscate", "f"))?;
    let delta0 = cfg.pick(args.delta0, "delta0")?;
    let seed = cfg.pick(args.seed, "seed")?.unwrap_or(0);
    let sigma = cfg.pick(args.sigma, "sigma")?;
    let output = cfg.pick(args.output.clone(), "output")?.unwrap_or_else(|| "obfuscated.csv".into());
    let sidecar = cfg
        .pick(args.sidecar.clone(), "sidecar")?
        .unwrap_or_else(|| output.with_extension("json"));
    let lambda = lambda(cfg, &args.lambda)?;

    let params = if f == 0.0 {
        PrivacyParams::identity(seed)
    } else {
        PrivacyParams::new(f, delta0, seed)?
    };
    let dict = match Dictionary::load(&dict_path) {
        Err(SparseCodingError::Io(e)) => return Err(io_err(&dict_path, e)),
        Err(e) => return Err(CliError::Runtime(format!("{}: {e}", dict_path.display()))),
        Ok(d) => d,
    };
    let t = cfg.pick(args.t, "t")?.unwrap_or(dict.t());
    if t != dict.t() {
        return Err(CliError::Usage(format!(
            "dictionary has t={} rows but the data batches have t={t} readings",
            dict.t()
        )));
    }
    let batches = load_batches(&input, t)?;
    if batches.is_empty() {
        return Err(CliError::Runtime(format!("{}: no readings", input.display())));
    }
    let results = Obfuscator::new(&dict, params, lambda)?
        .with_sigma(sigma)
        .process_stream(&batches)?;

    let obfuscated: Vec<ReadingBatch> = results.iter().map(|r| r.obfuscated.clone()).collect();
    write_csv(&obfuscated, &output).map_err(|e| io_err(&output, e))?;
    write_sidecar(&results, &sidecar).map_err(|e| io_err(&sidecar, e))?;

    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "batch\tmeter\tepsilon_paper\tepsilon_mechanism\tdelta0");
    for r in &results {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{:.6}",
            r.batch_index,
            r.original.meter_id(),
            fmt_eps(r.epsilon_paper),
            fmt_eps(r.epsilon_mechanism),
            r.delta0
        );
    }
    let summaries: Vec<_> = results.iter().map(|r| r.summary()).collect();
    let budget = composed_budget(&summaries);
    let _ = writeln!(
        out,
        "max over batches: epsilon_paper {} epsilon_mechanism {} (per-batch bound; batches of one meter are not disjoint)",
        fmt_eps(budget.epsilon_paper),
        fmt_eps(budget.epsilon_mechanism)
    );
    let warned = results.iter().filter(|r| !r.warnings.is_empty()).count();
    if warned > 0 {
        eprintln!("{warned} batch(es) carry warnings; see {}", sidecar.display());
    }
    Ok(())
}

fn cmd_evaluate(cfg: &ConfigFile, args: &EvaluateArgs) -> CliResult<()> {
    let original = cfg
        .pick(args.original.clone(), "original")?
        .ok_or_else(|| missing("evaluate", "original"))?;
    let obfuscated = cfg
        .pick(args.obfuscated.clone(), "obfuscated")?
        .ok_or_else(|| missing("evaluate", "obfuscated"))?;
    let truth_path = cfg.pick(args.truth.clone(), "truth")?.ok_or_else(|| missing("evaluate", "truth"))?;
    let t = cfg.pick(args.t, "t")?.unwrap_or(DEFAULT_BATCH_LEN);
    let report_path = cfg.pick(args.report.clone(), "report")?.unwrap_or_else(|| "report.json".into());
    let profiles = profiles(&cfg.list(&args.appliances, "appliances"))?;
    let thresholds: Vec<f64> = if args.thresholds.is_empty() {
        cfg.list(&[], "thresholds")
            .iter()
            .map(|s| s.parse().map_err(|_| CliError::Usage(format!("bad threshold {s:?}"))))
            .collect::<CliResult<_>>()?
    } else {
        args.thresholds.clone()
    };
    let attack = AttackConfig {
        thresholds: (!thresholds.is_empty()).then_some(thresholds),
        hysteresis_slots: cfg.pick(args.hysteresis, "hysteresis")?.unwrap_or(1),
    };

    let orig = load_batches(&original, t)?;
    let obf = load_batches(&obfuscated, t)?;
    if orig.len() != obf.len() {
        return Err(CliError::Usage(format!(
            "{} has {} batches but {} has {}",
            original.display(),
            orig.len(),
            obfuscated.display(),
            obf.len()
        )));
    }
    let truth = match load_truth_csv(&truth_path, &orig) {
        Err(MeterDataError::Io(e)) => return Err(io_err(&truth_path, e)),
        other => other.map_err(|e| CliError::Runtime(format!("{}: {e}", truth_path.display())))?,
    };

    let mut privacy = PrivacySummary {
        f: cfg.pick(args.f, "f")?.unwrap_or(0.0),
        ..PrivacySummary::default()
    };
    if let Some(path) = cfg.pick(args.sidecar.clone(), "sidecar")? {
        let file = File::open(&path).map_err(|e| io_err(&path, e))?;
        let summaries = read_sidecar(file).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
        let budget = composed_budget(&summaries);
        privacy.epsilon_paper = budget.epsilon_paper;
        privacy.epsilon_mechanism = budget.epsilon_mechanism;
        if !summaries.is_empty() {
            privacy.delta0 = Some(summaries.iter().map(|s| s.delta0).sum::<f64>() / summaries.len() as f64);
        }
    }

    let report = compare_report(&orig, &truth, &obf, &profiles, privacy, &attack)
        .map_err(|e| CliError::Usage(e.to_string()))?;
    fs::write(&report_path, report.to_json() + "\n").map_err(|e| io_err(&report_path, e))?;
    for row in &report.appliances {
        eprintln!(
            "{:<16} F1 original {:.3}  obfuscated {:.3}",
            row.name, row.original.f1, row.obfuscated.f1
        );
    }
    eprintln!("report written to {}", report_path.display());
    Ok(())
}

fn cmd_epsilon(cfg: &ConfigFile, args: &EpsilonArgs) -> CliResult<()> {
    let f = cfg.pick(args.f, "f")?.ok_or_else(|| missing("epsilon", "f"))?;
    let delta0 = cfg.pick(args.delta0, "delta0")?;
    let n = cfg.pick(args.n, "n")?;
    if !(f > 0.0 && f < 1.0) {
        return Err(CliError::Usage(format!("--f must lie in (0, 1), got {f}")));
    }
    if delta0.is_none() && n.is_none() {
        return Err(CliError::Usage("give --delta0, --n or both".into()));
    }
    let mut out = std::io::stdout().lock();
    if let Some(d) = delta0 {
        let e = sparsity_epsilon(f, d)?;
        let _ = writeln!(out, "epsilon_paper {e:.6}");
    }
    if let Some(n) = n {
        let e = mechanism_epsilon(n, f)?;
        let _ = writeln!(out, "epsilon_mechanism {e:.6}");
    }
    Ok(())
}

pub fn execute(cli: &Cli) -> CliResult<()> {
    let cfg = ConfigFile::load(cli.config.as_deref())?;
    match &cli.command {
        Command::Synth(a) => cmd_synth(&cfg, a),
        Command::Train(a) => cmd_train(&cfg, a),
        Command::Obfuscate(a) => cmd_obfuscate(&cfg, a),
        Command::Evaluate(a) => cmd_evaluate(&cfg, a),
        Command::Epsilon(a) => cmd_epsilon(&cfg, a),
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
