use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;
use tokio::io::AsyncReadExt;

use met_core::dispatcher::{self, DispatcherConfig};
use met_core::event::Event;
use met_core::harness::bench::{self, BenchSettings};
use met_core::harness::cluster::ReadyLine;
use met_core::harness::report::{self, ReportError, ReportInput, TriggerRecord};
use met_core::harness::run::{self, RunOptions};
use met_core::harness::sink::{self, SinkConfig};
use met_core::harness::{generate, GenerateOptions, Scenario, ScheduleMode};
use met_core::invoker::{self, InvokerConfig, PeerConfig};
use met_core::logs::{read_json_lines, write_json_lines, ArrivalLogRecord, EventLogRecord, FiringLogRecord};
use met_core::oracle;
use met_core::wire::InvocationPayload;

type CliResult<T> = Result<T, Box<dyn std::error::Error + Send + Sync>>;

#[derive(Parser)]
#[command(name = "met", version, about = "Multi-event triggers for FaaS functions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a dispatcher.
    Dispatcher(DispatcherArgs),
    /// Run an invoker.
    Invoker(InvokerArgs),
    /// Run the mock function sink.
    Sink(SinkArgs),
    /// Send a scenario's events to running dispatchers.
    Generate(GenerateArgs),
    /// Compute metrics and the oracle diff from logs.
    Report(ReportArgs),
    /// Launch sink and SUT processes, generate, report.
    Run(RunArgs),
    /// Closed-loop throughput benchmarks.
    Bench(BenchArgs),
    /// Replay an event log through the oracle for one rule.
    Replay(ReplayArgs),
}

#[derive(Args)]
struct Managed {
    /// Shut down cleanly when stdin closes.
    #[arg(long)]
    managed: bool,
}

#[derive(Args)]
struct DispatcherArgs {
    #[arg(long, default_value = "dispatcher")]
    name: String,
    #[arg(long, default_value = "127.0.0.1:8080")]
    addr: SocketAddr,
    /// JSON-lines log of every (event, trigger, replica) delivery.
    #[arg(long)]
    delivery_log: Option<PathBuf>,
    #[command(flatten)]
    managed: Managed,
}

#[derive(Args)]
struct InvokerArgs {
    /// JSON config file; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    name: Option<String>,
    #[arg(long)]
    admin_addr: Option<SocketAddr>,
    #[arg(long)]
    frame_addr: Option<SocketAddr>,
    #[arg(long)]
    advertise_frames: Option<String>,
    /// Dispatcher base URL (repeatable).
    #[arg(long = "dispatcher")]
    dispatchers: Vec<String>,
    /// Peer as `name,adminUrl,frameHost:port` (repeatable).
    #[arg(long = "peer", value_parser = parse_peer)]
    peers: Vec<PeerConfig>,
    #[arg(long)]
    high_water_mark: Option<usize>,
    #[arg(long)]
    max_concurrent_deliveries: Option<usize>,
    /// JSON-lines log of every event in handler arrival order.
    #[arg(long)]
    arrival_log: Option<PathBuf>,
    #[command(flatten)]
    managed: Managed,
}

fn parse_peer(s: &str) -> Result<PeerConfig, String> {
    let parts: Vec<&str> = s.split(',').collect();
    match parts.as_slice() {
        [name, admin, frames] if !name.is_empty() && !admin.is_empty() && !frames.is_empty() => {
            Ok(PeerConfig {
                name: name.to_string(),
                admin_url: admin.to_string(),
                frame_endpoint: frames.to_string(),
            })
        }
        _ => Err("expected name,adminUrl,frameHost:port".into()),
    }
}

#[derive(Args)]
struct SinkArgs {
    #[arg(long, default_value = "127.0.0.1:9000")]
    addr: SocketAddr,
    #[arg(long, default_value_t = 0)]
    delay_ms: u64,
    #[arg(long, default_value_t = 0.0)]
    failure_rate: f64,
    #[arg(long)]
    firing_log: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Incident,
    Requests,
    Triggers,
}

#[derive(Args)]
struct ScenarioArgs {
    /// Scenario JSON file.
    #[arg(long, conflicts_with = "preset")]
    scenario: Option<PathBuf>,
    #[arg(long, value_enum)]
    preset: Option<Preset>,
    /// Overrides the scenario duration.
    #[arg(long)]
    duration: Option<f64>,
    #[arg(long, value_enum, default_value = "deterministic")]
    mode: Mode,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Simulated seconds per wall-clock second.
    #[arg(long, default_value_t = 1.0)]
    time_scale: f64,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Deterministic,
    Stochastic,
}

impl From<Mode> for ScheduleMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Deterministic => ScheduleMode::Deterministic,
            Mode::Stochastic => ScheduleMode::Stochastic,
        }
    }
}

impl ScenarioArgs {
    fn load(&self) -> CliResult<Scenario> {
        let mut s = match (&self.scenario, self.preset) {
            (Some(p), _) => Scenario::from_json(&std::fs::read_to_string(p)?)?,
            (None, Some(Preset::Incident)) => Scenario::incident_detection(600.0),
            (None, Some(Preset::Requests)) => {
                let mut s = Scenario::concurrent_requests(60.0, 16, 1);
                s.event_streams[0].rate_per_minute = 6000.0;
                s
            }
            (None, Some(Preset::Triggers)) => {
                let mut s = Scenario::concurrent_triggers(60.0, 8, 16);
                for st in &mut s.event_streams {
                    st.rate_per_minute = 3000.0;
                }
                s
            }
            (None, None) => return Err("either --scenario or --preset is required".into()),
        };
        if let Some(d) = self.duration {
            s.duration_seconds = d;
        }
        s.validate()?;
        Ok(s)
    }
}

#[derive(Args)]
struct GenerateArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Dispatcher base URL (repeatable).
    #[arg(long = "dispatcher", required = true)]
    dispatchers: Vec<String>,
    /// Event log output.
    #[arg(long, default_value = "events.jsonl")]
    out: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    events: PathBuf,
    #[arg(long)]
    firings: PathBuf,
    /// JSON array of `{triggerId, rule}`.
    #[arg(long)]
    triggers: PathBuf,
    /// Per-replica arrival logs (repeatable); without them the event log
    /// order is replayed.
    #[arg(long = "arrivals")]
    arrivals: Vec<PathBuf>,
    #[arg(long)]
    duration: Option<f64>,
    /// Also write the latency CDF as CSV.
    #[arg(long)]
    cdf_csv: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[arg(long, default_value = "met-run")]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 0)]
    sink_delay_ms: u64,
    #[arg(long, default_value_t = 0.0)]
    sink_failure_rate: f64,
}

#[derive(Args)]
struct BenchArgs {
    #[command(subcommand)]
    which: BenchKind,
    /// Measured seconds per step (env `MET_BENCH_STEP_SECS` otherwise).
    #[arg(long, global = true)]
    step_secs: Option<f64>,
    #[arg(long, global = true)]
    cooldown_secs: Option<f64>,
}

#[derive(Subcommand)]
enum BenchKind {
    /// Throughput of `3:a` versus concurrent clients.
    Sweep {
        #[arg(long, value_delimiter = ',', default_value = "1,2,4,8,16,32,64")]
        clients: Vec<usize>,
    },
    /// One replica versus a trigger partitioned over two invokers.
    Partition {
        #[arg(long, default_value_t = 64)]
        clients: usize,
        #[arg(long, default_value_t = 2)]
        dispatchers: usize,
    },
    /// Throughput with n copies of `AND(2:a,2:b)`.
    Copies {
        #[arg(long, value_delimiter = ',', default_value = "1,8,16,1024")]
        copies: Vec<usize>,
        #[arg(long, default_value_t = 32)]
        clients: usize,
    },
}

#[derive(Args)]
struct ReplayArgs {
    #[arg(long)]
    rule: String,
    /// Event log (or arrival log with `--arrival-log`).
    #[arg(long)]
    events: PathBuf,
    #[arg(long)]
    arrival_log: bool,
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("warn")),
        )
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .expect("tokio runtime");
    match rt.block_on(dispatch(cli.command)) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("met: {e}");
            ExitCode::FAILURE
        }
    }
}

async fn dispatch(command: Command) -> CliResult<ExitCode> {
    match command {
        Command::Dispatcher(a) => run_dispatcher(a).await,
        Command::Invoker(a) => run_invoker(a).await,
        Command::Sink(a) => run_sink(a).await,
        Command::Generate(a) => run_generate(a).await,
        Command::Report(a) => run_report(a),
        Command::Run(a) => run_run(a).await,
        Command::Bench(a) => run_bench(a).await,
        Command::Replay(a) => run_replay(a),
    }
}

fn print_json(value: &impl serde::Serialize) {
    println!("{}", serde_json::to_string(value).expect("serializable"));
}

/// Resolves on ctrl-c, or on stdin EOF when managed.
async fn stop_signal(managed: bool) {
    let stdin_closed = async {
        if managed {
            let mut buf = [0u8; 256];
            let mut stdin = tokio::io::stdin();
            while let Ok(n) = stdin.read(&mut buf).await {
                if n == 0 {
                    break;
                }
            }
        } else {
            std::future::pending::<()>().await;
        }
    };
    tokio::select! {
        _ = tokio::signal::ctrl_c() => {}
        _ = stdin_closed => {}
    }
}

async fn run_dispatcher(a: DispatcherArgs) -> CliResult<ExitCode> {
    let running = dispatcher::serve(DispatcherConfig {
        name: a.name.clone(),
        addr: a.addr,
        delivery_log: a.delivery_log,
    })
    .await?;
    print_json(&ReadyLine::Dispatcher {
        name: a.name,
        addr: running.addr.to_string(),
    });
    stop_signal(a.managed.managed).await;
    let d = running.dispatcher.clone();
    running.shutdown().await;
    d.sync_logs().await;
    Ok(ExitCode::SUCCESS)
}

async fn run_invoker(a: InvokerArgs) -> CliResult<ExitCode> {
    let mut config = match &a.config {
        Some(p) => serde_json::from_str::<InvokerConfig>(&std::fs::read_to_string(p)?)?,
        None => InvokerConfig::default(),
    };
    if let Some(v) = a.name {
        config.name = v;
    }
    if let Some(v) = a.admin_addr {
        config.admin_addr = v;
    }
    if let Some(v) = a.frame_addr {
        config.frame_addr = v;
    }
    if a.advertise_frames.is_some() {
        config.advertise_frames = a.advertise_frames;
    }
    config.dispatchers.extend(a.dispatchers);
    config.peers.extend(a.peers);
    if let Some(v) = a.high_water_mark {
        config.high_water_mark = v;
    }
    if let Some(v) = a.max_concurrent_deliveries {
        config.max_concurrent_deliveries = v;
    }
    if a.arrival_log.is_some() {
        config.arrival_log = a.arrival_log;
    }
    let running = invoker::serve(config.clone()).await?;
    print_json(&ReadyLine::Invoker {
        name: config.name,
        admin_addr: running.admin_addr.to_string(),
        frame_addr: running.frame_addr.to_string(),
    });
    stop_signal(a.managed.managed).await;
    let inv = running.invoker.clone();
    running.shutdown().await;
    inv.drain_deliveries().await;
    inv.sync_logs().await;
    Ok(ExitCode::SUCCESS)
}

async fn run_sink(a: SinkArgs) -> CliResult<ExitCode> {
    let running = sink::serve(SinkConfig {
        addr: a.addr,
        delay: Duration::from_millis(a.delay_ms),
        failure_rate: a.failure_rate,
        firing_log: a.firing_log,
        seed: a.seed,
    })
    .await?;
    print_json(&json!({ "ready": "sink", "addr": running.addr.to_string() }));
    stop_signal(false).await;
    let s = running.sink.clone();
    running.shutdown().await;
    s.sync_logs().await;
    print_json(&s.stats());
    Ok(ExitCode::SUCCESS)
}

async fn run_generate(a: GenerateArgs) -> CliResult<ExitCode> {
    let scenario = a.scenario.load()?;
    let outcome = generate(
        &scenario,
        &GenerateOptions {
            dispatchers: a.dispatchers,
            mode: a.scenario.mode.into(),
            seed: a.scenario.seed,
            time_scale: a.scenario.time_scale,
        },
    )
    .await;
    write_json_lines(&a.out, &outcome.records)?;
    print_json(&outcome);
    Ok(if outcome.partial {
        ExitCode::from(2)
    } else {
        ExitCode::SUCCESS
    })
}

fn run_report(a: ReportArgs) -> CliResult<ExitCode> {
    let events: Vec<EventLogRecord> = read_json_lines(&a.events)?;
    let firings: Vec<FiringLogRecord> = read_json_lines(&a.firings)?;
    let triggers: Vec<TriggerRecord> = serde_json::from_str(&std::fs::read_to_string(&a.triggers)?)?;
    let mut arrivals: Vec<ArrivalLogRecord> = Vec::new();
    for p in &a.arrivals {
        arrivals.extend(read_json_lines::<ArrivalLogRecord>(p)?);
    }
    let result = report::build(&ReportInput {
        events: &events,
        firings: &firings,
        triggers: &triggers,
        arrivals: (!a.arrivals.is_empty()).then_some(arrivals.as_slice()),
        duration_seconds: a.duration,
    });
    let (report, code) = match result {
        Ok(r) => (r, ExitCode::SUCCESS),
        Err(ReportError::Mismatch(r)) => {
            eprintln!("met: {}", ReportError::Mismatch(r.clone()));
            (*r, ExitCode::from(2))
        }
        Err(e) => return Err(e.into()),
    };
    if let Some(p) = &a.cdf_csv {
        let mut csv = String::from("latency_ms,fraction\n");
        for (ms, q) in &report.latency.cdf {
            csv.push_str(&format!("{ms},{q}\n"));
        }
        std::fs::write(p, csv)?;
    }
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(code)
}

async fn run_run(a: RunArgs) -> CliResult<ExitCode> {
    let scenario = a.scenario.load()?;
    let outcome = run::run(
        &scenario,
        &RunOptions {
            bin: std::env::current_exe()?,
            out_dir: a.out_dir,
            mode: a.scenario.mode.into(),
            seed: a.scenario.seed,
            time_scale: a.scenario.time_scale,
            sink: SinkConfig {
                delay: Duration::from_millis(a.sink_delay_ms),
                failure_rate: a.sink_failure_rate,
                seed: a.scenario.seed,
                ..SinkConfig::default()
            },
        },
    )
    .await?;
    println!("{}", serde_json::to_string_pretty(&outcome)?);
    Ok(if outcome.passed() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(2)
    })
}

async fn run_bench(a: BenchArgs) -> CliResult<ExitCode> {
    let mut settings = BenchSettings::from_env(std::env::current_exe()?);
    if let Some(s) = a.step_secs {
        settings.step = Duration::from_secs_f64(s);
    }
    if let Some(s) = a.cooldown_secs {
        settings.cooldown = Duration::from_secs_f64(s);
    }
    match a.which {
        BenchKind::Sweep { clients } => {
            for step in bench::client_sweep(&settings, &clients).await? {
                print_json(&step);
            }
        }
        BenchKind::Partition {
            clients,
            dispatchers,
        } => {
            let (one, two) = bench::partition_pair(&settings, dispatchers, clients).await?;
            print_json(&one);
            print_json(&two);
            print_json(&json!({ "speedup": two.throughput_eps / one.throughput_eps }));
        }
        BenchKind::Copies { copies, clients } => {
            for step in bench::trigger_copies(&settings, &copies, clients).await? {
                print_json(&step);
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn run_replay(a: ReplayArgs) -> CliResult<ExitCode> {
    let events: Vec<Event> = if a.arrival_log {
        let mut recs: Vec<ArrivalLogRecord> = read_json_lines(&a.events)?;
        recs.sort_by_key(|r| r.arrival_seq);
        recs.iter().map(ArrivalLogRecord::to_event).collect()
    } else {
        let recs: Vec<EventLogRecord> = read_json_lines(&a.events)?;
        recs.iter().map(EventLogRecord::to_event).collect()
    };
    for firing in oracle::replay(&a.rule, &events)? {
        print_json(&InvocationPayload::from(&firing));
    }
    Ok(ExitCode::SUCCESS)
}
