use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use num_rational::BigRational;

use hetrade::ckks::DEFAULT_FLOOD_BITS;
use hetrade::cli::demo::DEFAULT_DEMO_TOLERANCE;
use hetrade::cli::{
    buyer_main, extract_main, run_demo, seller_main, BuyerOptions, CliError, DemoOptions, ExtractOptions,
    SellerOptions, TransportSpec, EXIT_CONFIG, EXIT_OK,
};
use hetrade::protocol::{parse_amount, BudgetTerms, SecurityPolicy, DEFAULT_TOLERANCE};

#[derive(Parser)]
#[command(name = "hetm", version, about = "Model trading over homomorphic encryption")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Replay the full walkthrough in one process
    Demo(DemoArgs),
    /// Run the model owner's side of a trade
    Seller(SellerArgs),
    /// Run the model buyer's side of a trade
    Buyer(BuyerArgs),
    /// Extract the reference model through the protocol and measure the defense
    Extract(ExtractArgs),
}

#[derive(Args)]
struct DemoArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Largest accepted gap between decrypted and plaintext scores
    #[arg(long, default_value_t = DEFAULT_DEMO_TOLERANCE)]
    tolerance: f64,
    #[arg(long, default_value_t = DEFAULT_FLOOD_BITS)]
    flood_bits: u32,
    /// Do not wait for Enter between steps
    #[arg(long)]
    no_pause: bool,
    /// Where test.galk and test.ct are written
    #[arg(long, default_value = ".")]
    dir: PathBuf,
}

#[derive(Args)]
#[group(id = "transport", required = true, multiple = false)]
struct TransportArgs {
    /// Exchange message files in a shared directory
    #[arg(long)]
    dir: Option<PathBuf>,
    /// Wait for the peer on HOST:PORT
    #[arg(long)]
    listen: Option<String>,
    /// Connect to the peer at HOST:PORT
    #[arg(long)]
    connect: Option<String>,
}

#[derive(Args)]
struct LinkArgs {
    /// Seconds to wait for the peer
    #[arg(long, default_value_t = 30)]
    timeout: u64,
    /// Copy every envelope sent or received into this directory
    #[arg(long)]
    transcript: Option<PathBuf>,
}

impl TransportArgs {
    fn spec(&self) -> TransportSpec {
        match (&self.dir, &self.listen, &self.connect) {
            (Some(d), _, _) => TransportSpec::Dir(d.clone()),
            (_, Some(a), _) => TransportSpec::Listen(a.clone()),
            (_, _, Some(a)) => TransportSpec::Connect(a.clone()),
            _ => unreachable!("clap requires one transport"),
        }
    }
}

#[derive(Args)]
struct SellerArgs {
    #[command(flatten)]
    transport: TransportArgs,
    #[command(flatten)]
    link: LinkArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Queries the buyer may make (k)
    #[arg(long, default_value_t = 4)]
    queries: u32,
    /// Records allowed in one query
    #[arg(long, default_value_t = 256)]
    record_cap: usize,
    #[arg(long, default_value_t = DEFAULT_FLOOD_BITS)]
    flood_bits: u32,
    /// Shift the first delivered weight by this amount
    #[arg(long, allow_negative_numbers = true)]
    cheat: Option<f64>,
    /// Model file with `feature NAME WEIGHT` and `bias VALUE` lines
    #[arg(long)]
    model: Option<PathBuf>,
    /// Price of the first query
    #[arg(long, value_parser = amount, default_value = "1")]
    price_base: BigRational,
    /// Factor by which each further query is dearer
    #[arg(long, value_parser = amount, default_value = "2")]
    price_growth: BigRational,
    #[arg(long, value_parser = amount, default_value = "100")]
    model_price: BigRational,
}

#[derive(Clone, Copy, ValueEnum)]
enum Security {
    Standard,
    ReducedOk,
}

#[derive(Args)]
struct BuyerArgs {
    #[command(flatten)]
    transport: TransportArgs,
    #[command(flatten)]
    link: LinkArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Test queries to send before paying
    #[arg(long, default_value_t = 1)]
    queries: u32,
    /// Largest accepted gap between retained scores and the delivered model
    #[arg(long, default_value_t = DEFAULT_TOLERANCE)]
    tolerance: f64,
    #[arg(long, value_enum, default_value = "standard")]
    security: Security,
    /// Highest price the buyer pays for one query
    #[arg(long, value_parser = amount)]
    max_price: Option<BigRational>,
}

#[derive(Args)]
struct ExtractArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 4)]
    queries: u32,
    #[arg(long, default_value_t = 256)]
    record_cap: usize,
    /// Random models attacked when measuring the defense
    #[arg(long, default_value_t = 10)]
    trials: usize,
    /// Also write the key=value report here
    #[arg(long)]
    summary: Option<PathBuf>,
}

fn amount(s: &str) -> Result<BigRational, String> {
    parse_amount(s).ok_or_else(|| format!("{s:?} is not an amount"))
}

fn run(command: Command, out: &mut dyn Write) -> Result<i32, CliError> {
    match command {
        Command::Demo(a) => {
            let opts = DemoOptions {
                seed: a.seed,
                tolerance: a.tolerance,
                flood_bits: a.flood_bits,
                pause: !a.no_pause,
                work_dir: a.dir,
            };
            run_demo(&opts, out, &mut io::stdin().lock())?;
            Ok(EXIT_OK)
        }
        Command::Seller(a) => {
            let mut opts = SellerOptions::new(a.transport.spec());
            opts.seed = a.seed;
            opts.terms = BudgetTerms {
                max_queries: a.queries,
                record_cap: a.record_cap,
                price_base: a.price_base,
                price_growth: a.price_growth,
                model_price: a.model_price,
            };
            opts.flood_bits = a.flood_bits;
            opts.cheat = a.cheat;
            opts.model = a.model;
            opts.timeout = Duration::from_secs(a.link.timeout);
            opts.transcript = a.link.transcript;
            seller_main(&opts, out)
        }
        Command::Buyer(a) => {
            let mut opts = BuyerOptions::new(a.transport.spec());
            opts.seed = a.seed;
            opts.queries = a.queries;
            opts.tolerance = a.tolerance;
            opts.security = match a.security {
                Security::Standard => SecurityPolicy::Standard,
                Security::ReducedOk => SecurityPolicy::ReducedOk,
            };
            opts.max_price = a.max_price;
            opts.timeout = Duration::from_secs(a.link.timeout);
            opts.transcript = a.link.transcript;
            buyer_main(&opts, out)
        }
        Command::Extract(a) => {
            let opts = ExtractOptions {
                seed: a.seed,
                queries: a.queries,
                record_cap: a.record_cap,
                trials: a.trials,
                summary: a.summary,
            };
            extract_main(&opts, out)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let first = e.to_string();
            let first = first.lines().next().unwrap_or("bad arguments").trim_start_matches("error: ");
            eprintln!("error[config]: {first}");
            return ExitCode::from(EXIT_CONFIG as u8);
        }
    };
    let stdout = io::stdout();
    let mut out = stdout.lock();
    let code = match run(cli.command, &mut out) {
        Ok(code) => code,
        Err(e) => {
            let _ = out.flush();
            eprintln!("{e}");
            e.exit_code()
        }
    };
    let _ = out.flush();
    ExitCode::from(code as u8)
}
