use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use wholescan::biometric::{Biometric, GestationalAge};
use wholescan::calibration::{pixel_size, CalibrationError, ScanLine, TickSpec};
use wholescan::estimator::{empirical_cdf_distance, fit_mixture_batch, GrowthChart};
use wholescan::pipeline::{
    ci_coverage, compare, ingest, run, test_retest, write_jsonl, write_timeseries_csv, Payload,
    PipelineError, RunConfig, RunReport, SubjectKey,
};
use wholescan::simulator::{simulate_stream, ScanScenario};

#[derive(Parser)]
#[command(name = "wholescan", version, about = "Whole-scan fetal biometry estimation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic examination stream.
    Simulate {
        #[arg(long)]
        scenario: PathBuf,
        /// Overrides the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the gate chain and estimators over a stream.
    Run(RunArgs),
    /// Fit the Gaussian + uniform mixture to a pool of measurements.
    FitDist {
        /// JSONL stream or a CSV/text file with one value per line.
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, value_parser = parse_bounds)]
        bounds: (f64, f64),
        /// Biometric to pool when reading a stream.
        #[arg(long, default_value = "fl")]
        biometric: Biometric,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Estimate mm/px from a scale-bar scan line.
    Calibrate {
        #[arg(long)]
        scanline: PathBuf,
        #[arg(long, default_value = "50,10,5")]
        ticks: TickSpec,
    },
    /// Agreement and calibration statistics over run reports.
    #[command(subcommand)]
    Evaluate(Evaluate),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long = "in")]
    input: PathBuf,
    /// Growth chart CSV; the bundled synthetic chart when omitted.
    #[arg(long)]
    chart: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Gestational age, e.g. 20w3d; overrides the config file.
    #[arg(long)]
    ga: Option<GestationalAge>,
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long)]
    timeseries: Option<PathBuf>,
    /// Abort on the first malformed line.
    #[arg(long)]
    strict: bool,
}

#[derive(Subcommand)]
enum Evaluate {
    /// Agreement of final estimates with reference values.
    Compare {
        /// Report files; the file stem is the subject id.
        #[arg(long, num_args = 1.., required = true)]
        reports: Vec<PathBuf>,
        /// CSV with columns subject,biometric,value_mm.
        #[arg(long)]
        reference: PathBuf,
        /// Optional CSV with columns biometric,limit_mm.
        #[arg(long)]
        limits: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Inter-scan agreement over pairs of reports.
    TestRetest {
        /// Pairs written as first.json,second.json.
        #[arg(long = "pair", num_args = 1.., required = true, value_parser = parse_pair)]
        pairs: Vec<(PathBuf, PathBuf)>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Share of credible intervals containing the true value.
    CiCoverage {
        #[arg(long, num_args = 1.., required = true)]
        reports: Vec<PathBuf>,
        /// CSV with columns subject,biometric,value_mm.
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_bounds(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = s.split_once(',').ok_or("expected a,b")?;
    let a: f64 = a.trim().parse().map_err(|e| format!("{e}"))?;
    let b: f64 = b.trim().parse().map_err(|e| format!("{e}"))?;
    if !(a < b) {
        return Err(format!("empty bounds [{a}, {b}]"));
    }
    Ok((a, b))
}

fn parse_pair(s: &str) -> Result<(PathBuf, PathBuf), String> {
    let (a, b) = s.split_once(',').ok_or("expected first,second")?;
    Ok((PathBuf::from(a), PathBuf::from(b)))
}

/// Exit 1 for unreadable or malformed data, 2 for configuration problems.
enum CliError {
    Data(String),
    Config(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Data(_) => 1,
            CliError::Config(_) => 2,
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Config(_) => CliError::Config(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

type CliResult = Result<(), CliError>;

fn data_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Data(format!("{}: {e}", path.display()))
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| data_err(path, e))
}

fn write_json<T: Serialize>(out: Option<&Path>, value: &T) -> CliResult {
    let text = serde_json::to_string_pretty(value).expect("serialisable output");
    match out {
        Some(p) => {
            let mut w = create(p)?;
            writeln!(w, "{text}").map_err(|e| data_err(p, e))?;
            w.flush().map_err(|e| data_err(p, e))
        }
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn simulate(scenario: &Path, seed: Option<u64>, out: &Path) -> CliResult {
    let mut sc = ScanScenario::from_path(scenario).map_err(|e| CliError::Config(e.to_string()))?;
    if let Some(s) = seed {
        sc.seed = s;
    }
    let stream = simulate_stream(&sc).map_err(|e| CliError::Config(e.to_string()))?;
    write_jsonl(create(out)?, &stream.records)?;
    eprintln!("wrote {} frames to {}", stream.records.len(), out.display());
    Ok(())
}

fn run_cmd(a: &RunArgs) -> CliResult {
    let chart = match &a.chart {
        Some(p) => GrowthChart::from_path(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?,
        None => GrowthChart::synthetic(),
    };
    let mut cfg = match (&a.config, a.ga) {
        (Some(p), _) => RunConfig::from_path(p)?,
        (None, Some(ga)) => RunConfig::new(ga),
        (None, None) => return Err(CliError::Config("either --config or --ga is required".into())),
    };
    if let Some(ga) = a.ga {
        cfg.ga = ga;
    }
    let file = File::open(&a.input).map_err(|e| data_err(&a.input, e))?;
    let (report, skipped) = run(BufReader::new(file), &chart, &cfg, a.strict)?;
    for s in &skipped {
        eprintln!("skipped line {}: {}", s.line, s.message);
    }
    if let Some(p) = &a.timeseries {
        write_timeseries_csv(create(p)?, &report)?;
    }
    write_json(a.report.as_deref(), &report)?;
    for (b, r) in &report.biometrics {
        let s = &r.final_estimate;
        eprintln!(
            "{b}: {:.2} mm [{:.2}, {:.2}] from {} accepted of {} routed",
            s.mu, s.ci_low, s.ci_high, s.n_accepted, r.routed
        );
    }
    Ok(())
}

fn read_values(path: &Path, biometric: Biometric) -> Result<Vec<f64>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| data_err(path, e))?;
    let is_jsonl = text.trim_start().starts_with('{');
    if is_jsonl {
        let ing = ingest(text.as_bytes(), true)?;
        Ok(ing
            .records
            .iter()
            .filter_map(|r| match &r.payload {
                Payload::Measurement { values } => values.get(&biometric).copied(),
                _ => None,
            })
            .collect())
    } else {
        let mut out = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let field = line.split(',').next_back().unwrap_or("").trim();
            if field.is_empty() {
                continue;
            }
            match field.parse::<f64>() {
                Ok(v) => out.push(v),
                // tolerate a header row
                Err(_) if i == 0 => {}
                Err(e) => return Err(data_err(path, format!("line {}: {e}", i + 1))),
            }
        }
        Ok(out)
    }
}

#[derive(Serialize)]
struct FitOutput {
    biometric: Biometric,
    n: usize,
    dropped_outside_bounds: usize,
    p_t: f64,
    mu: f64,
    sigma: f64,
    lower: f64,
    upper: f64,
    log_likelihood: f64,
    iterations: usize,
    converged: bool,
    ks_statistic: f64,
}

fn fit_dist(input: &Path, bounds: (f64, f64), biometric: Biometric, out: Option<&Path>) -> CliResult {
    let all = read_values(input, biometric)?;
    let inside: Vec<f64> = all
        .iter()
        .copied()
        .filter(|x| *x >= bounds.0 && *x <= bounds.1)
        .collect();
    let fit = fit_mixture_batch(&inside, bounds.0, bounds.1).map_err(|e| CliError::Data(e.to_string()))?;
    let ks = empirical_cdf_distance(&inside, &fit.model).map_err(|e| CliError::Data(e.to_string()))?;
    let m = fit.model;
    write_json(
        out,
        &FitOutput {
            biometric,
            n: inside.len(),
            dropped_outside_bounds: all.len() - inside.len(),
            p_t: m.p_t,
            mu: m.mu,
            sigma: m.sigma,
            lower: m.lower,
            upper: m.upper,
            log_likelihood: fit.log_likelihood,
            iterations: fit.iterations,
            converged: fit.converged,
            ks_statistic: ks,
        },
    )
}

fn calibrate(scanline: &Path, ticks: &TickSpec) -> CliResult {
    let text = std::fs::read_to_string(scanline).map_err(|e| data_err(scanline, e))?;
    let values = text
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .map(str::parse::<f64>)
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| data_err(scanline, e))?;
    let line = ScanLine::new(values).map_err(|e| data_err(scanline, e))?;
    match pixel_size(&line, ticks) {
        Ok(s) => {
            #[derive(Serialize)]
            struct Out {
                mm_per_px: f64,
            }
            write_json(None, &Out { mm_per_px: s.mm_per_px() })
        }
        Err(e @ CalibrationError::NoPeriodicity) => Err(data_err(scanline, e)),
        Err(e) => Err(CliError::Config(e.to_string())),
    }
}

fn load_report(path: &Path) -> Result<RunReport, CliError> {
    let file = File::open(path).map_err(|e| data_err(path, e))?;
    serde_json::from_reader(BufReader::new(file)).map_err(|e| data_err(path, e))
}

fn subject_of(path: &Path) -> SubjectKey {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn load_reports(paths: &[PathBuf]) -> Result<BTreeMap<SubjectKey, RunReport>, CliError> {
    paths.iter().map(|p| Ok((subject_of(p), load_report(p)?))).collect()
}

fn load_reference(path: &Path) -> Result<BTreeMap<SubjectKey, BTreeMap<Biometric, f64>>, CliError> {
    #[derive(serde::Deserialize)]
    struct Row {
        subject: String,
        biometric: Biometric,
        value_mm: f64,
    }
    let mut rd = csv::Reader::from_path(path).map_err(|e| data_err(path, e))?;
    let mut out: BTreeMap<SubjectKey, BTreeMap<Biometric, f64>> = BTreeMap::new();
    for row in rd.deserialize::<Row>() {
        let r = row.map_err(|e| data_err(path, e))?;
        out.entry(r.subject).or_default().insert(r.biometric, r.value_mm);
    }
    Ok(out)
}

fn load_limits(path: &Path) -> Result<BTreeMap<Biometric, f64>, CliError> {
    #[derive(serde::Deserialize)]
    struct Row {
        biometric: Biometric,
        limit_mm: f64,
    }
    let mut rd = csv::Reader::from_path(path).map_err(|e| data_err(path, e))?;
    rd.deserialize::<Row>()
        .map(|r| r.map(|r| (r.biometric, r.limit_mm)).map_err(|e| data_err(path, e)))
        .collect()
}

fn evaluate(e: &Evaluate) -> CliResult {
    match e {
        Evaluate::Compare {
            reports,
            reference,
            limits,
            out,
        } => {
            let est = load_reports(reports)?;
            let refs = load_reference(reference)?;
            let limits = match limits {
                Some(p) => load_limits(p)?,
                None => BTreeMap::new(),
            };
            write_json(out.as_deref(), &compare(&est, &refs, &limits)?)
        }
        Evaluate::TestRetest { pairs, out } => {
            let loaded = pairs
                .iter()
                .map(|(a, b)| Ok((load_report(a)?, load_report(b)?)))
                .collect::<Result<Vec<_>, CliError>>()?;
            write_json(out.as_deref(), &test_retest(&loaded)?)
        }
        Evaluate::CiCoverage { reports, truth, out } => {
            let est = load_reports(reports)?;
            let truth = load_reference(truth)?;
            let mut per = BTreeMap::new();
            for b in Biometric::ALL {
                let pairs: Vec<_> = est
                    .iter()
                    .filter_map(|(subject, r)| {
                        let t = truth.get(subject)?.get(&b)?;
                        Some((r.estimate(b)?, *t))
                    })
                    .collect();
                if !pairs.is_empty() {
                    per.insert(b, ci_coverage(pairs));
                }
            }
            if per.is_empty() {
                return Err(PipelineError::EmptyIntersection("no report matches a true value".into()).into());
            }
            write_json(out.as_deref(), &per)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate { scenario, seed, out } => simulate(scenario, *seed, out),
        Command::Run(a) => run_cmd(a),
        Command::FitDist {
            input,
            bounds,
            biometric,
            out,
        } => fit_dist(input, *bounds, *biometric, out.as_deref()),
        Command::Calibrate { scanline, ticks } => calibrate(scanline, ticks),
        Command::Evaluate(e) => evaluate(e),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = match &e {
                CliError::Data(m) | CliError::Config(m) => m,
            };
            eprintln!("error: {msg}");
            ExitCode::from(e.code())
        }
    }
}
