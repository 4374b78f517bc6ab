use std::ffi::OsString;
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use nin_dsm::sim::{load_scenario_file, Scenario};
use nin_dsm::testbed::{Command, Testbed};

use crate::kernel::{self, KernelOptions};

pub const EXIT_OK: i32 = 0;
pub const EXIT_SCENARIO: i32 = 1;
pub const EXIT_INVARIANT: i32 = 2;
pub const EXIT_USAGE: i32 = 64;

#[derive(Debug, Parser)]
#[command(
    name = "dsm-gateway",
    version,
    about = "Run nin-dsm scenarios headless or behind the operator API"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: CliCommand,
}

#[derive(Debug, Subcommand)]
pub enum CliCommand {
    /// Run a scenario file.
    Run(RunArgs),
}

#[derive(Debug, Args)]
#[command(group = clap::ArgGroup::new("mode").args(["headless", "serve"]))]
pub struct RunArgs {
    /// Scenario file (TOML).
    #[arg(long)]
    pub scenario: PathBuf,
    /// Overrides the scenario's seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the scenario's duration, in virtual milliseconds.
    #[arg(long = "duration-ms")]
    pub duration_ms: Option<u64>,
    /// Run to the end without the API (the default).
    #[arg(long)]
    pub headless: bool,
    /// Serve the HTTP API on this address while running.
    #[arg(long, value_name = "ADDR")]
    pub serve: Option<SocketAddr>,
    /// Pace the virtual clock to the wall clock (1 ms per ms).
    #[arg(long, requires = "serve")]
    pub realtime: bool,
    /// Write per-period subnet metrics as CSV.
    #[arg(long = "metrics-out", value_name = "PATH")]
    pub metrics_out: Option<PathBuf>,
    /// Write the event log here instead of standard output.
    #[arg(long = "log-out", value_name = "PATH")]
    pub log_out: Option<PathBuf>,
}

/// Parses `args` (program name first) and runs; returns the process exit
/// code.
pub fn main<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match cli.command {
        CliCommand::Run(args) => run(&args),
    }
}

pub fn load(args: &RunArgs) -> Result<Scenario, String> {
    let mut scenario = load_scenario_file(&args.scenario).map_err(|e| match e {
        nin_dsm::sim::ScenarioError::Io { .. } => e.to_string(),
        other => format!("{}: {other}", args.scenario.display()),
    })?;
    if let Some(seed) = args.seed {
        scenario.seed = seed;
    }
    if let Some(d) = args.duration_ms {
        scenario.duration_ms = d;
    }
    Ok(scenario)
}

pub fn run(args: &RunArgs) -> i32 {
    let scenario = match load(args) {
        Ok(s) => s,
        Err(msg) => {
            eprintln!("error: {msg}");
            return EXIT_SCENARIO;
        }
    };
    let testbed = Testbed::new(&scenario);
    let testbed = match args.serve {
        None => {
            let mut tb = testbed;
            tb.run_to_end();
            tb
        }
        Some(addr) => {
            let options = if args.realtime {
                KernelOptions::REALTIME
            } else {
                KernelOptions::AS_FAST_AS_POSSIBLE
            };
            match serve(testbed, addr, options) {
                Ok(tb) => tb,
                Err(e) => {
                    eprintln!("error: cannot serve on {addr}: {e}");
                    return EXIT_SCENARIO;
                }
            }
        }
    };
    if let Err(e) = write_outputs(
        &testbed,
        args.log_out.as_deref(),
        args.metrics_out.as_deref(),
    ) {
        eprintln!("error: {e}");
        return EXIT_SCENARIO;
    }
    finish(&testbed)
}

fn serve(testbed: Testbed, addr: SocketAddr, options: KernelOptions) -> std::io::Result<Testbed> {
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr).await?;
        // Tests and scripts read the bound address from this line.
        println!("listening on http://{}", listener.local_addr()?);
        std::io::stdout().flush()?;
        let handle = kernel::spawn(testbed, options);
        let link = handle.link.clone();
        let app = crate::api::router(handle.link.clone());
        let stopped = handle.stopped();
        let shutdown = async move {
            tokio::select! {
                _ = stopped => {}
                _ = tokio::signal::ctrl_c() => {
                    let _ = link.command(Command::Shutdown).await;
                }
            }
        };
        axum::serve(listener, app)
            .with_graceful_shutdown(shutdown)
            .await?;
        Ok(tokio::task::spawn_blocking(move || handle.join())
            .await
            .expect("join kernel"))
    })
}

pub fn write_outputs(
    tb: &Testbed,
    log_out: Option<&Path>,
    metrics_out: Option<&Path>,
) -> Result<(), String> {
    let log = tb.log().render();
    match log_out {
        Some(path) => std::fs::write(path, log)
            .map_err(|e| format!("cannot write {}: {e}", path.display()))?,
        None => print!("{log}"),
    }
    if let Some(path) = metrics_out {
        let mut w = csv::Writer::from_path(path)
            .map_err(|e| format!("cannot write {}: {e}", path.display()))?;
        for row in tb.metrics() {
            w.serialize(row)
                .map_err(|e| format!("cannot write {}: {e}", path.display()))?;
        }
        w.flush()
            .map_err(|e| format!("cannot write {}: {e}", path.display()))?;
    }
    Ok(())
}

fn finish(tb: &Testbed) -> i32 {
    let widths: Vec<String> = tb
        .applied_widths()
        .iter()
        .map(|(id, w)| format!("{id}={w}MHz"))
        .collect();
    eprintln!(
        "finished at {} ms: plan v{}, {}, {} log records",
        tb.now(),
        tb.plan().version,
        widths.join(" "),
        tb.log().len()
    );
    if tb.violations().is_empty() {
        EXIT_OK
    } else {
        for v in tb.violations() {
            eprintln!("invariant violation: {v}");
        }
        EXIT_INVARIANT
    }
}
