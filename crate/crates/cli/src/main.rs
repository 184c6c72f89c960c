use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use bernoulli_factory::spb::{search_bounding_params, spb_sample, verify_spb, SearchConfig, SpbCertificate, SpbChain};
use bernoulli_factory::verify::closed_form::closed_form_named;
use bernoulli_factory::verify::{estimate_with, exact_prob_enum, ReportRow, SimulationReport, SIGMA};
use bernoulli_factory::{FactoryError, HiddenBias, Protocol};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

const EXIT_CONFIG: u8 = 1;
const EXIT_EXHAUSTED: u8 = 2;
const EXIT_CERTIFICATION: u8 = 3;
const EXIT_UNSUPPORTED: u8 = 4;

#[derive(Parser)]
#[command(name = "bfactory", version, about = "Simulate classical and quantum Bernoulli factories")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate the output bias of a protocol or a compiled certificate over a set of p values.
    Simulate(SimulateArgs),
    /// Verify a certificate and search bounding parameters for its first level.
    CompileSpb(CompileArgs),
    /// Exact output probabilities of a bounded protocol.
    Enumerate(EnumerateArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Args)]
struct PSelection {
    /// Comma-separated bias values.
    #[arg(long, value_delimiter = ',', conflicts_with = "p_grid")]
    p: Vec<f64>,
    /// `start:stop:count`, evenly spaced and inclusive.
    #[arg(long)]
    p_grid: Option<String>,
}

#[derive(Args)]
struct Output {
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
    /// Write here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    /// Protocol tree as inline JSON or a file path.
    #[arg(long, required_unless_present = "certificate", conflicts_with = "certificate")]
    protocol: Option<String>,
    /// SPB certificate as inline JSON or a file path.
    #[arg(long)]
    certificate: Option<String>,
    /// Closed-form target to report next to each estimate.
    #[arg(long)]
    target: Option<String>,
    /// JSON object of target parameters.
    #[arg(long, default_value = "{}")]
    target_params: String,
    #[command(flatten)]
    ps: PSelection,
    #[arg(long, default_value_t = 10_000)]
    trials: u64,
    /// Master seed, decimal or 0x-prefixed hex.
    #[arg(long, env = "BFACTORY_SEED", default_value = "0")]
    seed: String,
    /// Raw samples allowed per trial.
    #[arg(long, default_value_t = 10_000_000)]
    budget: u64,
    #[command(flatten)]
    output: Output,
}

#[derive(Args)]
struct CompileArgs {
    #[arg(long)]
    certificate: String,
    /// Where to write the parameters and verification report.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EnumerateArgs {
    #[arg(long)]
    protocol: String,
    #[command(flatten)]
    ps: PSelection,
    #[command(flatten)]
    output: Output,
}

/// A failure with the exit code it maps to.
struct Failure {
    code: u8,
    message: String,
}

impl From<FactoryError> for Failure {
    fn from(e: FactoryError) -> Self {
        let code = match e {
            FactoryError::Certification(_) => EXIT_CERTIFICATION,
            FactoryError::Unsupported(_) => EXIT_UNSUPPORTED,
            _ => EXIT_CONFIG,
        };
        Failure { code, message: e.to_string() }
    }
}

fn config(message: impl Into<String>) -> Failure {
    Failure { code: EXIT_CONFIG, message: message.into() }
}

/// Inline JSON when the text starts with `{`, otherwise a path.
fn inline_or_file(text: &str) -> Result<String, Failure> {
    if text.trim_start().starts_with('{') {
        Ok(text.to_string())
    } else {
        fs::read_to_string(text).map_err(|e| config(format!("reading {text}: {e}")))
    }
}

fn p_values(sel: &PSelection) -> Result<Vec<f64>, Failure> {
    let mut ps = if let Some(grid) = &sel.p_grid {
        let parts: Vec<&str> = grid.split(':').collect();
        let [a, b, n] = parts.as_slice() else {
            return Err(config("--p-grid expects start:stop:count"));
        };
        let parse = |s: &str| s.trim().parse::<f64>().map_err(|e| config(format!("--p-grid value `{s}`: {e}")));
        let (a, b) = (parse(a)?, parse(b)?);
        let n: usize = n.trim().parse().map_err(|e| config(format!("--p-grid count `{n}`: {e}")))?;
        match n {
            0 => vec![],
            1 => vec![a],
            _ => (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect(),
        }
    } else {
        sel.p.clone()
    };
    if ps.is_empty() {
        return Err(config("give at least one bias with --p or --p-grid"));
    }
    if let Some(bad) = ps.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(config(format!("bias {bad} outside [0, 1]")));
    }
    ps.sort_by(f64::total_cmp);
    ps.dedup();
    Ok(ps)
}

fn emit(text: &str, out: &Option<PathBuf>) -> Result<(), Failure> {
    match out {
        Some(path) => write_file(path, text),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(text.as_bytes()).map_err(|e| config(format!("writing output: {e}")))
        }
    }
}

fn write_file(path: &Path, text: &str) -> Result<(), Failure> {
    fs::write(path, text).map_err(|e| config(format!("writing {}: {e}", path.display())))
}

fn csv_text<T: Serialize>(rows: impl IntoIterator<Item = T>) -> Result<String, Failure> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.serialize(row).map_err(|e| config(format!("csv: {e}")))?;
    }
    let bytes = w.into_inner().map_err(|e| config(format!("csv: {e}")))?;
    String::from_utf8(bytes).map_err(|e| config(format!("csv: {e}")))
}

enum Sampler {
    Protocol(Protocol),
    Spb(Box<SpbChain>),
}

fn simulate(args: &SimulateArgs) -> Result<u8, Failure> {
    if args.trials == 0 {
        return Err(config("--trials must be at least 1"));
    }
    if args.budget == 0 {
        return Err(config("--budget must be at least 1"));
    }
    let seed = bernoulli_factory::rng::parse_seed(&args.seed)?;
    let ps = p_values(&args.ps)?;
    let target_params: serde_json::Value =
        serde_json::from_str(&args.target_params).map_err(|e| config(format!("--target-params: {e}")))?;

    let (sampler, source, subject) = match (&args.protocol, &args.certificate) {
        (Some(text), _) => {
            let proto = Protocol::from_json(&inline_or_file(text)?)?;
            let subject = proto.to_json();
            (Sampler::Protocol(proto), "protocol", subject)
        }
        (None, Some(text)) => {
            let cert = SpbCertificate::from_json(&inline_or_file(text)?)?;
            let chain = SpbChain::compile(&cert, &SearchConfig::default())?;
            (Sampler::Spb(Box::new(chain)), "spb", cert.hash_hex())
        }
        (None, None) => return Err(config("give --protocol or --certificate")),
    };

    let mut rows = Vec::with_capacity(ps.len());
    for (i, &p) in ps.iter().enumerate() {
        let bias = HiddenBias::new(p)?;
        let stream_base = (i as u64) << 32;
        let stats = match &sampler {
            Sampler::Protocol(proto) => {
                estimate_with(bias, args.trials, seed, stream_base, args.budget, |src| proto.run(src))?
            }
            Sampler::Spb(chain) => {
                estimate_with(bias, args.trials, seed, stream_base, args.budget, |src| spb_sample(chain, src, None))?
            }
        };
        let target = match (&args.target, &sampler) {
            (Some(name), _) => Some(closed_form_named(name, &target_params, p)?),
            (None, Sampler::Spb(chain)) => Some(chain.certificate().target()?.eval(p)?),
            (None, Sampler::Protocol(_)) => None,
        };
        rows.push(ReportRow::new(p, target, &stats));
    }
    let report = SimulationReport {
        source: source.into(),
        subject,
        master_seed: seed,
        budget: args.budget,
        sigma: SIGMA,
        rows,
    };
    let text = match args.output.format {
        Format::Json => report.to_json() + "\n",
        Format::Csv => csv_text(report.rows.iter().map(|r| &r.csv))?,
    };
    emit(&text, &args.output.out)?;
    if report.exhausted() > 0 || report.failed() > 0 {
        eprintln!(
            "{} trials exhausted their budget, {} failed otherwise",
            report.exhausted(),
            report.failed()
        );
        return Ok(EXIT_EXHAUSTED);
    }
    Ok(0)
}

#[derive(Serialize)]
struct CompileOutput {
    certificate_hash: String,
    verification: bernoulli_factory::spb::SpbReport,
    params: bernoulli_factory::spb::BoundingParams,
    node_values: Vec<f64>,
    search: bernoulli_factory::spb::SearchReport,
}

fn compile_spb(args: &CompileArgs) -> Result<u8, Failure> {
    let cert = SpbCertificate::from_json(&inline_or_file(&args.certificate)?)?;
    let verification = verify_spb(&cert, bernoulli_factory::spb::chain::CERTIFICATE_GRID)?;
    if !verification.pass {
        let lines: Vec<String> = verification
            .violations
            .iter()
            .map(|v| format!("condition {} violated at p = {}: {}", v.condition, v.p, v.detail))
            .collect();
        return Err(Failure { code: EXIT_CERTIFICATION, message: lines.join("\n") });
    }
    let (level, search) = search_bounding_params(&cert, &SearchConfig::default())?;
    let out = CompileOutput {
        certificate_hash: cert.hash_hex(),
        verification,
        params: level.params.clone(),
        node_values: level.node_values.clone(),
        search,
    };
    let text = serde_json::to_string_pretty(&out).expect("compile output serializes") + "\n";
    emit(&text, &args.out)?;
    Ok(0)
}

#[derive(Serialize)]
struct ExactRow {
    p: f64,
    probability: f64,
}

fn enumerate(args: &EnumerateArgs) -> Result<u8, Failure> {
    let proto = Protocol::from_json(&inline_or_file(&args.protocol)?)?;
    let ps = p_values(&args.ps)?;
    let rows = ps
        .iter()
        .map(|&p| Ok(ExactRow { p, probability: exact_prob_enum(&proto, p)? }))
        .collect::<Result<Vec<_>, FactoryError>>()?;
    let text = match args.output.format {
        Format::Json => serde_json::to_string_pretty(&rows).expect("rows serialize") + "\n",
        Format::Csv => csv_text(&rows)?,
    };
    emit(&text, &args.output.out)?;
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate(a) => simulate(a),
        Command::CompileSpb(a) => compile_spb(a),
        Command::Enumerate(a) => enumerate(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
