use std::process::ExitCode;

use clap::builder::{PossibleValuesParser, TypedValueParser};
use clap::Parser;

use vmsort::bench::{self, exit, parse_stride, Algo, BenchSpec, OutputFormat};
use vmsort::keygen::Distribution;
use vmsort::StridePolicy;

/// Generate inputs, sort them, verify the result and report throughput.
#[derive(Parser, Debug)]
#[command(name = "vmsort-bench", version)]
struct Args {
    /// Number of items.
    #[arg(long, default_value_t = bench::DEFAULT_N)]
    n: usize,
    /// Payload width: 0 (keys only) or 32.
    #[arg(long, default_value_t = 0, value_parser = PossibleValuesParser::new(["0", "32"]).map(|s| s.parse::<u32>().unwrap()))]
    values: u32,
    /// vm, vmwc or ref.
    #[arg(long, default_value = "vmwc")]
    algo: Algo,
    /// Worker threads (defaults to the available parallelism).
    #[arg(long)]
    threads: Option<usize>,
    /// uniform, all-equal, sorted, reverse, msd-skew[:p] or duplicates[:k].
    #[arg(long, default_value = "uniform")]
    dist: Distribution,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Measured repetitions (one extra warm-up run precedes them).
    #[arg(long, default_value_t = 1)]
    reps: usize,
    /// human, json or csv.
    #[arg(long, default_value = "human")]
    format: OutputFormat,
    #[arg(long)]
    no_verify: bool,
    /// full or uniform:<slack>.
    #[arg(long, default_value = "full", value_parser = parse_stride)]
    stride: StridePolicy,
    #[arg(long)]
    no_large_pages: bool,
    #[arg(long)]
    no_streaming: bool,
    /// Include the warm-up run in the summary statistics.
    #[arg(long)]
    include_warmup: bool,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args = Args::parse();
    let spec = BenchSpec {
        n: args.n,
        value_bits: args.values,
        algo: args.algo,
        threads: args.threads.unwrap_or_else(bench::default_threads),
        dist: args.dist,
        seed: args.seed,
        repetitions: args.reps,
        format: args.format,
        verify: !args.no_verify,
        stride: args.stride,
        large_pages: !args.no_large_pages,
        streaming: !args.no_streaming,
        include_warmup: args.include_warmup,
    };
    let outcome = match bench::run(&spec) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("vmsort-bench: {e}");
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    match outcome.render() {
        Ok(text) => println!("{}", text.trim_end()),
        Err(e) => {
            eprintln!("vmsort-bench: {e}");
            return ExitCode::from(exit::CONFIG_ERROR as u8);
        }
    }
    if let Some((rep, verdict)) = outcome.failure() {
        eprintln!("vmsort-bench: verification failed in run {rep}: {verdict}");
    }
    ExitCode::from(outcome.exit_code() as u8)
}
