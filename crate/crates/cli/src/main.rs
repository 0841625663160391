mod published;

use std::fs::{self, OpenOptions};
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::error::ErrorKind;
use clap::{CommandFactory, Parser, Subcommand, ValueEnum};
use flate2::read::GzDecoder;
use scnn_core::harness::{mse_adder_with, mse_multiplier_with, CSV_HEADER};
use scnn_core::nn::Layer;
use scnn_core::{
    evaluate, load_weights, parse_idx_images, parse_idx_labels, table_sweep, tff_add, AdderConfig,
    Bitstream, InferenceConfig, MultiplierScheme, SchemeSettings, Table,
};
use serde::Serialize;

/// Stochastic computing simulator: error sweeps, adder demo and hybrid
/// stochastic-binary CNN inference on MNIST.
///
/// Exit codes: 0 success, 1 runtime failure (including failed table checks),
/// 2 usage error.
#[derive(Parser, Debug)]
#[command(name = "scnn", version)]
struct Cli {
    /// Worker threads [default: available hardware concurrency]. Results
    /// are identical at any thread count.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run a full MSE table sweep, write CSV and compare against the
    /// published cells.
    Tables {
        /// Which table to sweep.
        #[arg(long, value_enum)]
        which: WhichTable,
        /// Write the CSV here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        /// TOML file with source settings (seeds, shift offset, LFSR
        /// polynomials).
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Replay the 20-bit TFF adder example and the two rounding cases.
    AdderDemo,
    /// Classify MNIST images with a weights file and report accuracy.
    Infer {
        /// SBNN weights file.
        #[arg(long)]
        weights: PathBuf,
        /// IDX image file, optionally gzip-compressed.
        #[arg(long)]
        images: PathBuf,
        /// IDX label file, optionally gzip-compressed.
        #[arg(long)]
        labels: PathBuf,
        /// Requantize the stochastic layer to this precision [default: from
        /// the weights file].
        #[arg(long, value_parser = clap::value_parser!(u32).range(2..=8))]
        bits: Option<u32>,
        /// Bit-stream length [default: 2^bits].
        #[arg(long)]
        stream_len: Option<usize>,
        /// Soft threshold in counts [default: from the weights file].
        #[arg(long)]
        threshold: Option<u32>,
        /// Evaluate only the first LIMIT images [default: all].
        #[arg(long)]
        limit: Option<usize>,
        /// Print the report as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Compute one MSE cell.
    Mse {
        /// Operator under test.
        #[arg(long, value_enum)]
        op: Op,
        /// mul: one-lfsr-shifted, two-lfsr, ld-ld, ramp-ld.
        /// add: mux-random-lfsr, mux-random-tff, mux-lfsr-tff, tff-new.
        #[arg(long)]
        scheme: String,
        /// Precision in bits.
        #[arg(long, value_parser = clap::value_parser!(u32).range(2..=8))]
        bits: u32,
        /// Append the CSV row to this file (header written if empty).
        #[arg(long)]
        out: Option<PathBuf>,
        /// TOML file with source settings.
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum WhichTable {
    Table1,
    Table2,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Op {
    Add,
    Mul,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        if threads == 0 {
            Cli::command()
                .error(ErrorKind::InvalidValue, "--threads must be at least 1")
                .exit();
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
        {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    }
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(command: Command) -> Result<ExitCode> {
    match command {
        Command::Tables { which, out, config } => cmd_tables(which, out, config),
        Command::AdderDemo => cmd_adder_demo(),
        Command::Infer {
            weights,
            images,
            labels,
            bits,
            stream_len,
            threshold,
            limit,
            json,
        } => {
            let cfg = InferenceConfig {
                stream_len,
                threshold,
            };
            cmd_infer(&weights, &images, &labels, bits, cfg, limit, json)
        }
        Command::Mse {
            op,
            scheme,
            bits,
            out,
            config,
        } => cmd_mse(op, &scheme, bits, out, config),
    }
}

fn load_settings(path: Option<PathBuf>) -> Result<SchemeSettings> {
    let Some(path) = path else {
        return Ok(SchemeSettings::default());
    };
    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn cmd_tables(
    which: WhichTable,
    out: Option<PathBuf>,
    config: Option<PathBuf>,
) -> Result<ExitCode> {
    let settings = load_settings(config)?;
    let table = match which {
        WhichTable::Table1 => Table::Table1,
        WhichTable::Table2 => Table::Table2,
    };
    let mut csv = Vec::new();
    let rows = table_sweep(table, &settings, &mut csv)?;
    match &out {
        Some(path) => {
            fs::write(path, &csv).with_context(|| format!("writing {}", path.display()))?
        }
        None => io::stdout().write_all(&csv)?,
    }
    let comparison = published::compare(table, &rows);
    eprint!("{}", comparison.render());
    if comparison.passed() {
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!("error: table checks failed");
        Ok(ExitCode::FAILURE)
    }
}

fn cmd_adder_demo() -> Result<ExitCode> {
    let x: Bitstream = "0110 0011 0101 0111 1000".parse()?;
    let y: Bitstream = "1011 1111 0101 0111 1111".parse()?;
    let z = tff_add(&x, &y, false)?;
    println!("TFF adder, S0 = 0");
    println!("  X = {x:#}  ({})", x.unipolar_value());
    println!("  Y = {y:#}  ({})", y.unipolar_value());
    println!("  Z = {z:#}  ({})", z.unipolar_value());
    let expected: Bitstream = "0110 1011 0101 0111 1101".parse()?;

    let a: Bitstream = "0110 0100".parse()?;
    let b: Bitstream = "1000 0001".parse()?;
    println!("Rounding of an odd count, N = 8");
    println!("  X = {a:#}  ({})", a.unipolar_value());
    println!("  Y = {b:#}  ({})", b.unipolar_value());
    let mut rounded = Vec::new();
    for s0 in [false, true] {
        let z = tff_add(&a, &b, s0)?;
        println!(
            "  S0 = {}: Z = {z:#}  ({})",
            u8::from(s0),
            z.unipolar_value()
        );
        rounded.push(z.unipolar_value());
    }

    if z != expected {
        bail!("20-bit example produced {z:#}, expected {expected:#}");
    }
    if rounded
        != [
            num_rational::Ratio::new(1, 4),
            num_rational::Ratio::new(3, 8),
        ]
    {
        bail!(
            "rounding example produced {} and {}",
            rounded[0],
            rounded[1]
        );
    }
    println!("all outputs match");
    Ok(ExitCode::SUCCESS)
}

/// Reads a file, decompressing it if it starts with the gzip magic.
fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let raw = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .with_context(|| format!("decompressing {}", path.display()))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

#[derive(Serialize)]
struct InferReport<'a> {
    schema: u32,
    bits: u32,
    stream_len: usize,
    threshold: u32,
    /// Clock cycles per first-layer evaluation.
    cycles_per_image: usize,
    #[serde(flatten)]
    report: &'a scnn_core::EvalReport,
}

fn cmd_infer(
    weights: &Path,
    images: &Path,
    labels: &Path,
    bits: Option<u32>,
    cfg: InferenceConfig,
    limit: Option<usize>,
    json: bool,
) -> Result<ExitCode> {
    let bytes = fs::read(weights).with_context(|| format!("reading {}", weights.display()))?;
    let mut spec =
        load_weights(&bytes).with_context(|| format!("loading {}", weights.display()))?;
    if let Some(bits) = bits {
        if let Some(Layer::ScFirstConv(first)) = spec.layers.first_mut() {
            for k in &mut first.kernels {
                *k = k.requantize(bits)?;
            }
        }
        spec.bits = bits;
    }
    let images = parse_idx_images(&read_maybe_gz(images)?)
        .with_context(|| format!("parsing {}", images.display()))?;
    let labels = parse_idx_labels(&read_maybe_gz(labels)?)
        .with_context(|| format!("parsing {}", labels.display()))?;

    let conv = cfg.conv_config(&spec)?;
    let report = evaluate(&images, &labels, &spec, &cfg, limit)?;
    let full = InferReport {
        schema: 1,
        bits: spec.bits,
        stream_len: conv.precision.stream_len(),
        threshold: conv.threshold,
        cycles_per_image: conv.precision.stream_len(),
        report: &report,
    };
    if json {
        println!("{}", serde_json::to_string_pretty(&full)?);
        return Ok(ExitCode::SUCCESS);
    }
    println!(
        "bits {}  stream length {}  threshold {}",
        full.bits, full.stream_len, full.threshold
    );
    println!("images evaluated      {}", report.total);
    println!("misclassified         {}", report.errors);
    println!(
        "misclassification     {:.4}%",
        report.misclassification_rate * 100.0
    );
    println!("cycles per image      {}", full.cycles_per_image);
    println!("confusion (rows: label, columns: predicted)");
    print!("     ");
    for p in 0..report.confusion.len() {
        print!("{p:>6}");
    }
    println!();
    for (label, row) in report.confusion.iter().enumerate() {
        print!("{label:>5}");
        for count in row {
            print!("{count:>6}");
        }
        println!();
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_mse(
    op: Op,
    scheme: &str,
    bits: u32,
    out: Option<PathBuf>,
    config: Option<PathBuf>,
) -> Result<ExitCode> {
    let settings = load_settings(config)?;
    let report = match op {
        Op::Mul => match scheme.parse::<MultiplierScheme>() {
            Ok(s) => mse_multiplier_with(s, bits, &settings)?,
            Err(_) => usage(&format!(
                "unknown multiplier scheme '{scheme}' (expected one of: {})",
                names(MultiplierScheme::ALL.iter().map(|s| s.name()))
            )),
        },
        Op::Add => match scheme.parse::<AdderConfig>() {
            Ok(c) => mse_adder_with(c, bits, &settings)?,
            Err(_) => usage(&format!(
                "unknown adder scheme '{scheme}' (expected one of: {})",
                names(AdderConfig::ALL.iter().map(|c| c.name()))
            )),
        },
    };
    println!(
        "{} bits={} N={} mse={:.2e} ({})",
        report.scheme,
        report.bits,
        report.stream_len,
        report.mse_f64(),
        report.mse
    );
    if let Some(path) = out {
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .with_context(|| format!("opening {}", path.display()))?;
        if file.metadata()?.len() == 0 {
            writeln!(file, "{CSV_HEADER}")?;
        }
        writeln!(file, "{}", report.csv_row())?;
    }
    Ok(ExitCode::SUCCESS)
}

fn names<'a>(it: impl Iterator<Item = &'a str>) -> String {
    it.collect::<Vec<_>>().join(", ")
}

fn usage(msg: &str) -> ! {
    Cli::command().error(ErrorKind::InvalidValue, msg).exit()
}
