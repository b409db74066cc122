use std::fs::File;
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use hecnn::netcompile::{
    builtin_json, execute, execute_random, lower, published, random_input, read_input, write_rows, LowerOptions, ModelSpec,
    ModelWeights, OpReport,
};
use hecnn::sweep::{evaluate, grid, parse_range, to_csv};
use hecnn::verify::{verify_all, VerifyOptions};
use hecnn::{HeError, Kernel, MeterContext};

const MODEL_DIR_VAR: &str = "HECNN_MODEL_DIR";

#[derive(Parser)]
#[command(name = "hecnn", version, about = "Lower CNNs to metered packed-ciphertext programs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Table,
    Csv,
}

#[derive(clap::Args)]
struct ModelArgs {
    /// Builtin name (cryptonets-hs, me, ce) or path to a model JSON file.
    #[arg(long)]
    model: String,
    /// Override the slot count of the model.
    #[arg(long)]
    n_slots: Option<usize>,
    /// Kernel for every linear stage: hs, lola-dense or lola-stacked.
    #[arg(long)]
    policy: Option<Kernel>,
    #[arg(long, value_enum, default_value = "table")]
    report: Format,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write the report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Run one encrypted inference and print the logits and report.
    Run {
        #[command(flatten)]
        model: ModelArgs,
        /// Little-endian f32 weights; random when omitted.
        #[arg(long)]
        weights: Option<PathBuf>,
        /// Little-endian f32 input, channel-major; random when omitted.
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Print per-stage operation counts.
    Count {
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Predicted (and optionally measured) kernel costs over a shape grid.
    Sweep {
        #[arg(long, default_value = "16:4096")]
        n_range: String,
        #[arg(long, default_value = "4:512")]
        m_range: String,
        #[arg(long, value_delimiter = ',', default_value = "4096,16384")]
        n_slots: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "hs,lola-dense,lola-stacked")]
        methods: Vec<Kernel>,
        #[arg(long)]
        measure: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Randomized checks of every kernel and builtin model against the reference.
    Verify {
        #[arg(long, default_value_t = 500)]
        cases: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Corrupt one kernel result to exercise the failure path.
        #[arg(long, hide = true)]
        inject_fault: bool,
    },
}

enum Failure {
    He(HeError),
    Verification,
}

impl From<HeError> for Failure {
    fn from(e: HeError) -> Self {
        Failure::He(e)
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::He(e.into())
    }
}

fn resolve_model(name: &str) -> Result<ModelSpec, HeError> {
    let path = Path::new(name);
    if path.is_file() {
        return ModelSpec::load(path);
    }
    if let Some(dir) = std::env::var_os(MODEL_DIR_VAR) {
        for candidate in [Path::new(&dir).join(name), Path::new(&dir).join(format!("{name}.json"))] {
            if candidate.is_file() {
                return ModelSpec::load(&candidate);
            }
        }
    }
    match builtin_json(name) {
        Some(text) => ModelSpec::from_json(text),
        None => Err(HeError::Io(io::Error::new(
            io::ErrorKind::NotFound,
            format!("model {name:?} is neither a file, in ${MODEL_DIR_VAR}, nor a builtin"),
        ))),
    }
}

fn load_model(args: &ModelArgs) -> Result<ModelSpec, HeError> {
    let mut model = resolve_model(&args.model)?;
    if let Some(n) = args.n_slots {
        model.n_slots = n;
        model.validate()?;
    }
    Ok(model)
}

fn options(args: &ModelArgs) -> LowerOptions {
    LowerOptions { policy: args.policy, ..Default::default() }
}

fn render(report: &OpReport, format: Format) -> String {
    match format {
        Format::Csv => report.to_csv(),
        Format::Table => report.to_table(),
    }
}

fn emit(text: &str, out: Option<&Path>) -> Result<(), Failure> {
    match out {
        Some(p) => std::fs::write(p, text)?,
        None => io::stdout().lock().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn published_tables(name: &str) -> String {
    let mut s = String::new();
    for (caption, rows) in published(name) {
        s.push_str(&format!("\n{caption}:\n"));
        write_rows(&mut s, rows);
    }
    s
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Run { model: args, weights, input } => {
            let model = load_model(&args)?;
            let program = lower(&model, &options(&args))?;
            let w = match &weights {
                Some(p) => ModelWeights::<f64>::read_f32(&model, &mut BufReader::new(File::open(p)?))?,
                None => ModelWeights::random(&model, args.seed)?,
            };
            let x = match &input {
                Some(p) => read_input(&model, &mut BufReader::new(File::open(p)?))?,
                None => random_input(&model, args.seed.wrapping_add(1)),
            };
            let (logits, report) = execute(&program, &w, &x, &mut MeterContext::new())?;
            let mut text = String::from("logits:\n");
            for (i, v) in logits.iter().enumerate() {
                text.push_str(&format!("  {i}: {v:+.12e}\n"));
            }
            let body = render(&report, args.report);
            match &args.out {
                Some(p) => {
                    std::fs::write(p, body)?;
                    emit(&text, None)?;
                }
                None => emit(&format!("{text}\n{body}"), None)?,
            }
        }
        Command::Count { model: args } => {
            let model = load_model(&args)?;
            let program = lower(&model, &options(&args))?;
            let (_, report) = execute_random(&program, args.seed)?;
            let mut text = render(&report, args.report);
            if matches!(args.report, Format::Table) && args.n_slots.is_none() {
                text.push_str(&published_tables(&model.name));
            }
            emit(&text, args.out.as_deref())?;
        }
        Command::Sweep { n_range, m_range, n_slots, methods, measure, seed, out } => {
            let ns = parse_range(&n_range)?;
            let ms = parse_range(&m_range)?;
            let points = grid(&methods, &ns, &ms, &n_slots);
            let results: Vec<_> = points.par_iter().map(|&p| (p, evaluate(p, measure, seed))).collect();
            let mut rows = Vec::with_capacity(results.len());
            for (p, r) in results {
                match r {
                    Ok(row) => rows.push(row),
                    Err(e) => eprintln!("skipped {} n={} m={} N={}: {e}", p.kernel, p.n, p.m, p.n_slots),
                }
            }
            eprintln!(
                "note: for (m, n, N) = (64, 4096, 16384) reference figures are {} (hs) and {} (lola-stacked) rotations; the closed forms give 70 and 255",
                hecnn::netcompile::REFERENCE_HS_ROTATIONS,
                hecnn::netcompile::REFERENCE_LOLA_STACKED_ROTATIONS
            );
            emit(&to_csv(&rows, measure), out.as_deref())?;
        }
        Command::Verify { cases, seed, inject_fault } => {
            let opts = VerifyOptions { cases, model_draws: cases.min(20), seed, inject_fault };
            let report = verify_all(&opts)?;
            emit(&format!("{report}\n"), None)?;
            if !report.passed() {
                return Err(Failure::Verification);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Verification) => ExitCode::from(3),
        Err(Failure::He(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_io() { 1 } else { 2 })
        }
    }
}
