use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use nwtopk::experiment::{run_experiment, verify_trace, ExperimentConfig, Interleave, TraceSource};
use nwtopk::transport::DeliveryOrder;
use nwtopk::workload::{gen_zipf, read_trace, write_trace};
use nwtopk::Error;

#[derive(Parser)]
#[command(
    name = "nwtopk",
    version,
    about = "Network-wide top-k flow detection simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write a CSV report.
    Run(RunArgs),
    /// Generate a Zipfian trace file.
    GenTrace(GenTraceArgs),
    /// Run the invariant suite on small random networks fed from a trace.
    Verify(VerifyArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum OrderArg {
    Fifo,
    Random,
}

#[derive(Clone, Copy, ValueEnum)]
enum InterleaveArg {
    RoundRobin,
    Random,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long, default_value_t = 10)]
    switches: usize,
    /// 1 runs without clustering.
    #[arg(long, default_value_t = 1)]
    clusters: usize,
    #[arg(long, default_value_t = 2)]
    vectors: usize,
    #[arg(long, default_value_t = 4096)]
    slots: usize,
    #[arg(long, default_value_t = 128)]
    k: usize,
    /// Zipf exponent of a generated trace.
    #[arg(long, default_value_t = 1.0, conflicts_with = "trace")]
    zipf: f64,
    #[arg(long, default_value_t = 2_000_000, conflicts_with = "trace")]
    packets: usize,
    #[arg(long, default_value_t = 200_000, conflicts_with = "trace")]
    flows: u32,
    /// Read packets from a trace file instead of generating them.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Probability that a non-top-k packet goes to its flow's home switch.
    #[arg(long, default_value_t = 1.0)]
    affinity: f64,
    #[arg(long, default_value_t = 0.0)]
    drop: f64,
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5")]
    seeds: Vec<u64>,
    #[arg(long, default_value_t = 1)]
    cycles: usize,
    #[arg(long, value_enum, default_value_t = OrderArg::Fifo)]
    order: OrderArg,
    #[arg(long, value_enum, default_value_t = InterleaveArg::RoundRobin)]
    interleave: InterleaveArg,
    /// Include dropped transmissions in the message count.
    #[arg(long)]
    count_dropped: bool,
    /// Run seeds one after another instead of in parallel.
    #[arg(long)]
    sequential: bool,
    /// Report path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GenTraceArgs {
    #[arg(long)]
    zipf: f64,
    #[arg(long)]
    packets: usize,
    #[arg(long)]
    flows: u32,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long)]
    trace: PathBuf,
    #[arg(long, default_value_t = 20)]
    trials: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

fn run(args: RunArgs) -> Result<(), Error> {
    let source = match args.trace {
        Some(path) => TraceSource::File(path),
        None => TraceSource::Zipf {
            exponent: args.zipf,
            packets: args.packets,
            flows: args.flows,
        },
    };
    let config = ExperimentConfig {
        switches: args.switches,
        clusters: args.clusters,
        vectors: args.vectors,
        slots: args.slots,
        k: args.k,
        source,
        affinity: args.affinity,
        drop_probability: args.drop,
        seeds: args.seeds,
        cycles: args.cycles,
        delivery_order: match args.order {
            OrderArg::Fifo => DeliveryOrder::FifoPerPair,
            OrderArg::Random => DeliveryOrder::Random,
        },
        interleave: match args.interleave {
            InterleaveArg::RoundRobin => Interleave::RoundRobin,
            InterleaveArg::Random => Interleave::Random,
        },
        count_dropped: args.count_dropped,
        parallel: !args.sequential,
    };
    let report = run_experiment(&config)?;
    match &args.out {
        Some(path) => {
            let file = File::create(path).map_err(|e| Error::io(path, e))?;
            report.write_csv(BufWriter::new(file))?;
        }
        None => report.write_csv(io::stdout().lock())?,
    }
    eprintln!(
        "recall {:.4}, messages {:.0}, recirculations {:.0} (mean of {} seeds)",
        report.mean_recall(),
        report.mean_messages(),
        report.mean_recirculations(),
        report.rows.len()
    );
    Ok(())
}

fn gen(args: GenTraceArgs) -> Result<(), Error> {
    let trace = gen_zipf(args.zipf, args.packets, args.flows, args.seed)?;
    write_trace(&trace, &args.out)?;
    eprintln!("wrote {} packets to {}", trace.len(), args.out.display());
    Ok(())
}

fn verify(args: VerifyArgs) -> Result<(), Error> {
    let trace = read_trace(&args.trace)?;
    let summary = verify_trace(&trace, args.trials, args.seed)?;
    let mut out = io::stdout().lock();
    writeln!(
        out,
        "ok: {} trials, {} messages, {} drops recovered",
        summary.trials, summary.messages, summary.dropped
    )
    .map_err(|e| Error::io("<stdout>", e))?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => run(args),
        Command::GenTrace(args) => gen(args),
        Command::Verify(args) => verify(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
