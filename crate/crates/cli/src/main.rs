//! Command-line front end for the slimd codec.
//!
//! Subcommands: `train`, `encode`, `decode`, `inspect`, `bench`, `gen`.
//! Exit codes: 0 success, 2 bad input, 3 dictionary mismatch, 4 corruption.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};

use slimd_core::{
    corpus_from_tensors, decode_image, encode_global_baseline, encode_image_with_plan,
    gen_synthetic, rate_report, rate_report_with_plan, read_tensor, train_dictionary, write_tensor,
    Alphabet, Bitstream, CodeTensor, Dictionary, Error as CoreError, GeneratorSpec, SourceSpec,
    TrainConfig, DEFAULT_EPSILON,
};

const EXIT_BAD_INPUT: i32 = 2;
const EXIT_DICT_MISMATCH: i32 = 3;
const EXIT_CORRUPTION: i32 = 4;

#[derive(Parser)]
#[command(
    name = "slimd",
    about = "Lossless entropy codec for quantized code tensors",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a dictionary of entropy models from a directory of tensor files
    Train(TrainArgs),
    /// Encode a tensor file into a bitstream
    Encode(EncodeArgs),
    /// Decode a bitstream back into a tensor file
    Decode(DecodeArgs),
    /// Print the rate breakdown of a bitstream (no dictionary needed)
    Inspect(InspectArgs),
    /// Compare tile-adaptive coding against a single global model
    Bench(BenchArgs),
    /// Generate a synthetic tensor file
    Gen(GenArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// Directory holding .sltn training tensors (shared alphabet)
    corpus_dir: PathBuf,
    /// Number of dictionary entries (1..=255)
    #[arg(long, default_value_t = 255)]
    clusters: usize,
    #[arg(long, default_value_t = 16)]
    tile_size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Maximum refinement iterations
    #[arg(long, default_value_t = 50)]
    iters: usize,
    #[arg(long, short)]
    output: PathBuf,
}

#[derive(Args)]
struct EncodeArgs {
    tensor: PathBuf,
    #[arg(long, short)]
    dictionary: PathBuf,
    #[arg(long, default_value_t = 16)]
    tile_size: usize,
    /// Relative code-length gap admitting a tile into the custom average
    /// (0.005 = 0.5%)
    #[arg(long, default_value_t = 0.005)]
    threshold: f64,
    #[arg(long, short)]
    output: PathBuf,
}

#[derive(Args)]
struct DecodeArgs {
    bitstream: PathBuf,
    #[arg(long, short)]
    dictionary: PathBuf,
    #[arg(long, short)]
    output: PathBuf,
}

#[derive(Args)]
struct InspectArgs {
    bitstream: PathBuf,
    /// Pixel count for the bits-per-pixel figure; defaults to height * width
    #[arg(long)]
    pixels: Option<u64>,
}

#[derive(Args)]
struct BenchArgs {
    /// Tensor files to measure
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    #[arg(long, short)]
    dictionary: PathBuf,
    #[arg(long, default_value_t = 16)]
    tile_size: usize,
    #[arg(long, default_value_t = 0.005)]
    threshold: f64,
    /// Dictionary entry used as the global baseline model
    #[arg(long, default_value_t = 0)]
    global_model_index: usize,
}

#[derive(Args)]
struct GenArgs {
    /// Generator, e.g. "constant(0)", "laplacian(0,1.5)",
    /// "iid(0.25,0.25,0.25,0.25)" or
    /// "patchwork(laplacian(0,1)|laplacian(4,1))" (vertical stripes)
    spec: String,
    /// Dimensions as HxWxC, e.g. 64x64x8
    #[arg(long)]
    dims: String,
    /// Inclusive symbol range as LO:HI, e.g. -8:8
    #[arg(long, allow_hyphen_values = true)]
    alphabet: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, short)]
    output: PathBuf,
}

/// An error that already knows its process exit code.
struct Failure {
    code: i32,
    err: anyhow::Error,
}

type CliResult<T> = Result<T, Failure>;

trait WithCode<T> {
    fn code(self, code: i32) -> CliResult<T>;
}

impl<T, E: Into<anyhow::Error>> WithCode<T> for Result<T, E> {
    fn code(self, code: i32) -> CliResult<T> {
        self.map_err(|e| Failure {
            code,
            err: e.into(),
        })
    }
}

fn bad_input(msg: impl Into<String>) -> Failure {
    Failure {
        code: EXIT_BAD_INPUT,
        err: anyhow!(msg.into()),
    }
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(args) => cmd_train(args),
        Command::Encode(args) => cmd_encode(args),
        Command::Decode(args) => cmd_decode(args),
        Command::Inspect(args) => cmd_inspect(args),
        Command::Bench(args) => cmd_bench(args),
        Command::Gen(args) => cmd_gen(args),
    };
    if let Err(f) = result {
        eprintln!("error: {:#}", f.err);
        std::process::exit(f.code);
    }
}

fn read_file(path: &Path) -> CliResult<Vec<u8>> {
    fs::read(path)
        .with_context(|| format!("reading {}", path.display()))
        .code(EXIT_BAD_INPUT)
}

fn write_file(path: &Path, bytes: &[u8]) -> CliResult<()> {
    fs::write(path, bytes)
        .with_context(|| format!("writing {}", path.display()))
        .code(EXIT_BAD_INPUT)
}

fn load_tensor(path: &Path) -> CliResult<CodeTensor> {
    let bytes = read_file(path)?;
    read_tensor(&bytes)
        .with_context(|| format!("parsing tensor {}", path.display()))
        .code(EXIT_BAD_INPUT)
}

fn load_dictionary(path: &Path) -> CliResult<Dictionary> {
    let bytes = read_file(path)?;
    Dictionary::deserialize(&bytes)
        .with_context(|| format!("parsing dictionary {}", path.display()))
        .code(EXIT_BAD_INPUT)
}

fn load_bitstream(path: &Path) -> CliResult<Bitstream> {
    let bytes = read_file(path)?;
    Bitstream::from_bytes(&bytes)
        .with_context(|| format!("parsing bitstream {}", path.display()))
        .code(EXIT_CORRUPTION)
}

fn cmd_train(args: TrainArgs) -> CliResult<()> {
    let mut paths: Vec<PathBuf> = fs::read_dir(&args.corpus_dir)
        .with_context(|| format!("reading corpus dir {}", args.corpus_dir.display()))
        .code(EXIT_BAD_INPUT)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "sltn"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(bad_input(format!(
            "no .sltn tensors under {}",
            args.corpus_dir.display()
        )));
    }
    let tensors: Vec<CodeTensor> = paths
        .iter()
        .map(|p| load_tensor(p))
        .collect::<CliResult<_>>()?;
    let alphabet = tensors[0].alphabet();
    let refs: Vec<&CodeTensor> = tensors.iter().collect();
    let corpus = corpus_from_tensors(&refs, args.tile_size).code(EXIT_BAD_INPUT)?;
    println!(
        "corpus: {} tensors, {} tile histograms, alphabet [{}, {}]",
        tensors.len(),
        corpus.len(),
        alphabet.lo,
        alphabet.hi
    );
    let dict = train_dictionary(
        &corpus,
        alphabet,
        &TrainConfig {
            k: args.clusters,
            seed: args.seed,
            max_iters: args.iters,
            epsilon: DEFAULT_EPSILON,
        },
    )
    .code(EXIT_BAD_INPUT)?;
    for (i, loss) in dict.loss_trace().iter().enumerate() {
        println!("iter {i:>3}: loss {loss:.6} bits");
    }
    write_file(&args.output, &dict.serialize())?;
    println!(
        "wrote dictionary: K = {}, digest = {:#018x} -> {}",
        dict.k(),
        dict.digest(),
        args.output.display()
    );
    Ok(())
}

fn cmd_encode(args: EncodeArgs) -> CliResult<()> {
    let tensor = load_tensor(&args.tensor)?;
    let dict = load_dictionary(&args.dictionary)?;
    let (bs, plan) = encode_image_with_plan(&tensor, &dict, args.tile_size, args.threshold)
        .code(EXIT_BAD_INPUT)?;
    let bytes = bs.to_bytes();
    write_file(&args.output, &bytes)?;
    let customs = plan.custom.iter().filter(|c| c.is_some()).count();
    println!(
        "encoded {} cells into {} bytes ({} custom channels) -> {}",
        tensor.cell_count(),
        bytes.len(),
        customs,
        args.output.display()
    );
    Ok(())
}

fn cmd_decode(args: DecodeArgs) -> CliResult<()> {
    let bs = load_bitstream(&args.bitstream)?;
    let dict = load_dictionary(&args.dictionary)?;
    let tensor = decode_image(&bs, &dict).map_err(|e| {
        let code = match &e {
            CoreError::DictionaryMismatch { .. } => EXIT_DICT_MISMATCH,
            CoreError::Corruption(_) | CoreError::Format { .. } => EXIT_CORRUPTION,
            _ => EXIT_BAD_INPUT,
        };
        Failure {
            code,
            err: anyhow::Error::from(e).context("decoding bitstream"),
        }
    })?;
    write_file(&args.output, &write_tensor(&tensor))?;
    println!(
        "decoded {}x{}x{} tensor -> {}",
        tensor.height(),
        tensor.width(),
        tensor.channels(),
        args.output.display()
    );
    Ok(())
}

fn cmd_inspect(args: InspectArgs) -> CliResult<()> {
    let bs = load_bitstream(&args.bitstream)?;
    let pixels = args
        .pixels
        .unwrap_or(bs.header.height as u64 * bs.header.width as u64);
    let report = rate_report(&bs, pixels).code(EXIT_BAD_INPUT)?;
    println!(
        "{}x{}x{} alphabet [{}, {}] tile_size {} threshold {:.4}%",
        bs.header.height,
        bs.header.width,
        bs.header.channels,
        bs.header.alphabet.lo,
        bs.header.alphabet.hi,
        bs.header.tile_size,
        bs.header.threshold_micro as f64 / 1e4,
    );
    println!("dictionary digest {:#018x}", bs.header.dict_digest);
    println!("section        bytes        bits");
    println!(
        "header    {:>10}  {:>10}",
        report.header_bits / 8,
        report.header_bits
    );
    println!(
        "indices   {:>10}  {:>10}",
        report.index_bits / 8,
        report.index_bits
    );
    println!(
        "customs   {:>10}  {:>10}",
        report.custom_bits / 8,
        report.custom_bits
    );
    println!(
        "payload   {:>10}  {:>10}",
        report.payload_bits / 8,
        report.payload_bits
    );
    println!(
        "checksum  {:>10}  {:>10}",
        report.checksum_bits / 8,
        report.checksum_bits
    );
    println!(
        "total     {:>10}  {:>10}",
        report.total_bits / 8,
        report.total_bits
    );
    println!("bpp over {} pixels: {:.6}", report.pixel_count, report.bpp);
    Ok(())
}

/// Savings of one input against the global baseline.
struct BenchRow {
    input: String,
    baseline_bits: u64,
    slimd_bits: u64,
    savings_pct: f64,
    side_info_bits: u64,
    side_info_share_pct: f64,
    custom_channels: usize,
    channels: usize,
}

fn cmd_bench(args: BenchArgs) -> CliResult<()> {
    let dict = load_dictionary(&args.dictionary)?;
    if args.global_model_index >= dict.k() {
        return Err(bad_input(format!(
            "global model index {} out of range for dictionary of {}",
            args.global_model_index,
            dict.k()
        )));
    }
    let global = dict.model(args.global_model_index).clone();
    let mut rows = Vec::new();
    for path in &args.inputs {
        let tensor = load_tensor(path)?;
        let (slimd, plan) = encode_image_with_plan(&tensor, &dict, args.tile_size, args.threshold)
            .code(EXIT_BAD_INPUT)?;
        let baseline = encode_global_baseline(&tensor, &global).code(EXIT_BAD_INPUT)?;
        let slimd_bits = slimd.to_bytes().len() as u64 * 8;
        let baseline_bits = baseline.to_bytes().len() as u64 * 8;
        let report = rate_report_with_plan(&slimd, 1, &plan).code(EXIT_BAD_INPUT)?;
        let side_info_bits = report.side_info_bits();
        rows.push(BenchRow {
            input: path.display().to_string(),
            baseline_bits,
            slimd_bits,
            savings_pct: (1.0 - slimd_bits as f64 / baseline_bits as f64) * 100.0,
            side_info_bits,
            side_info_share_pct: side_info_bits as f64 / slimd_bits as f64 * 100.0,
            custom_channels: plan.custom.iter().filter(|c| c.is_some()).count(),
            channels: plan.channels,
        });
    }

    let mut table = String::new();
    writeln!(
        table,
        "{:<32} {:>14} {:>14} {:>9} {:>11} {:>10}",
        "input", "baseline_bits", "slimd_bits", "savings%", "side_info%", "custom_ch"
    )
    .unwrap();
    for r in &rows {
        writeln!(
            table,
            "{:<32} {:>14} {:>14} {:>9.2} {:>11.2} {:>7}/{}",
            r.input,
            r.baseline_bits,
            r.slimd_bits,
            r.savings_pct,
            r.side_info_share_pct,
            r.custom_channels,
            r.channels
        )
        .unwrap();
    }
    let mean_savings = rows.iter().map(|r| r.savings_pct).sum::<f64>() / rows.len() as f64;
    writeln!(
        table,
        "mean savings over {} inputs: {mean_savings:.2}%",
        rows.len()
    )
    .unwrap();
    writeln!(
        table,
        "baseline arm: one global model, header-only overhead; model parameters travel out of band"
    )
    .unwrap();
    print!("{table}");

    for r in &rows {
        println!(
            "RECORD input={} baseline_bits={} slimd_bits={} savings_pct={:.4} side_info_bits={} side_info_share_pct={:.4} custom_channels={}/{}",
            r.input,
            r.baseline_bits,
            r.slimd_bits,
            r.savings_pct,
            r.side_info_bits,
            r.side_info_share_pct,
            r.custom_channels,
            r.channels
        );
    }
    println!(
        "AGGREGATE inputs={} mean_savings_pct={mean_savings:.4}",
        rows.len()
    );
    Ok(())
}

fn cmd_gen(args: GenArgs) -> CliResult<()> {
    let (height, width, channels) = parse_dims(&args.dims)?;
    let alphabet = parse_alphabet(&args.alphabet)?;
    let spec = parse_generator(&args.spec, height, width)?;
    let tensor =
        gen_synthetic(&spec, height, width, channels, alphabet, args.seed).code(EXIT_BAD_INPUT)?;
    write_file(&args.output, &write_tensor(&tensor))?;
    println!(
        "generated {height}x{width}x{channels} tensor (seed {}) -> {}",
        args.seed,
        args.output.display()
    );
    Ok(())
}

fn parse_dims(s: &str) -> CliResult<(usize, usize, usize)> {
    let parts: Vec<&str> = s.split('x').collect();
    if parts.len() != 3 {
        return Err(bad_input(format!("dims must look like HxWxC, got {s:?}")));
    }
    let dim = |p: &str| -> CliResult<usize> {
        p.parse::<usize>()
            .map_err(|_| bad_input(format!("bad dimension {p:?} in {s:?}")))
    };
    Ok((dim(parts[0])?, dim(parts[1])?, dim(parts[2])?))
}

fn parse_alphabet(s: &str) -> CliResult<Alphabet> {
    let (lo, hi) = s
        .split_once(':')
        .ok_or_else(|| bad_input(format!("alphabet must look like LO:HI, got {s:?}")))?;
    let lo = lo
        .parse::<i32>()
        .map_err(|_| bad_input(format!("bad alphabet lo {lo:?}")))?;
    let hi = hi
        .parse::<i32>()
        .map_err(|_| bad_input(format!("bad alphabet hi {hi:?}")))?;
    Alphabet::new(lo, hi).code(EXIT_BAD_INPUT)
}

/// Parse "name(args)" with balanced parentheses.
fn parse_call(s: &str) -> CliResult<(&str, &str)> {
    let s = s.trim();
    let open = s
        .find('(')
        .ok_or_else(|| bad_input(format!("expected NAME(...), got {s:?}")))?;
    if !s.ends_with(')') {
        return Err(bad_input(format!("unbalanced parentheses in {s:?}")));
    }
    Ok((s[..open].trim(), &s[open + 1..s.len() - 1]))
}

fn parse_source(s: &str) -> CliResult<SourceSpec> {
    let (name, body) = parse_call(s)?;
    match name {
        "constant" => {
            let value = body
                .trim()
                .parse::<i32>()
                .map_err(|_| bad_input(format!("constant takes one integer, got {body:?}")))?;
            Ok(SourceSpec::Constant { value })
        }
        "laplacian" => {
            let parts: Vec<&str> = body.split(',').map(str::trim).collect();
            if parts.len() != 2 {
                return Err(bad_input("laplacian takes (mu, scale)"));
            }
            let mu = parts[0]
                .parse::<f64>()
                .map_err(|_| bad_input(format!("bad mu {:?}", parts[0])))?;
            let scale = parts[1]
                .parse::<f64>()
                .map_err(|_| bad_input(format!("bad scale {:?}", parts[1])))?;
            Ok(SourceSpec::Laplacian { mu, scale })
        }
        "iid" => {
            let probs = body
                .split(',')
                .map(|p| {
                    p.trim()
                        .parse::<f64>()
                        .map_err(|_| bad_input(format!("bad probability {p:?}")))
                })
                .collect::<CliResult<Vec<f64>>>()?;
            Ok(SourceSpec::IidMultinomial { probs })
        }
        other => Err(bad_input(format!(
            "unknown source {other:?}; expected constant, laplacian or iid"
        ))),
    }
}

fn parse_generator(s: &str, height: usize, width: usize) -> CliResult<GeneratorSpec> {
    let (name, body) = parse_call(s)?;
    if name != "patchwork" {
        return Ok(GeneratorSpec::Source(parse_source(s)?));
    }
    // Split on '|' at parenthesis depth zero.
    let mut sources = Vec::new();
    let mut depth = 0usize;
    let mut start = 0usize;
    for (i, c) in body.char_indices() {
        match c {
            '(' => depth += 1,
            ')' => depth = depth.saturating_sub(1),
            '|' if depth == 0 => {
                sources.push(parse_source(&body[start..i])?);
                start = i + 1;
            }
            _ => {}
        }
    }
    sources.push(parse_source(&body[start..])?);
    GeneratorSpec::striped(sources, height, width).code(EXIT_BAD_INPUT)
}
