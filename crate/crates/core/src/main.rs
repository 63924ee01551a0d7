// SPDX-License-Identifier: Apache-2.0

use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tokio::io::{AsyncWriteExt, BufReader};

use bpa_dispatch::bdm::{self, driver, ContactDispatcher, Dispatcher, FloodMode, OpportunisticDispatcher, StaticDispatcher};
use bpa_dispatch::bpa::{self, NodeConfig};
use bpa_dispatch::bundle::now_ms;
use bpa_dispatch::client::DispatchClient;
use bpa_dispatch::protocol::{Role, Topic};
use bpa_dispatch::conformance;
use bpa_dispatch::scenario::{self, RunOptions, Scenario};

#[derive(Parser)]
#[command(name = "bpa-dispatch", version, about = "DTN node with external bundle dispatching")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a node.
    Node {
        #[command(subcommand)]
        command: NodeCmd,
    },
    /// Run a reference dispatcher module against a node.
    Bdm {
        #[command(subcommand)]
        kind: BdmCmd,
    },
    /// Run scenario files.
    Scenario {
        #[command(subcommand)]
        command: ScenarioCmd,
    },
    /// Watch a node's event bus.
    Events {
        #[command(subcommand)]
        command: EventsCmd,
    },
    /// Contact plan tools.
    Plan {
        #[command(subcommand)]
        command: PlanCmd,
    },
    /// Golden wire transcripts for client implementations.
    Conformance {
        #[command(subcommand)]
        command: ConformanceCmd,
    },
}

#[derive(Subcommand)]
enum ConformanceCmd {
    /// Record the scripted dispatch session against a fresh node.
    Record {
        /// Output file (default: stdout).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum NodeCmd {
    /// Start a node and serve until shut down.
    Run(NodeRunArgs),
}

#[derive(Args)]
struct NodeRunArgs {
    /// TOML configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Node name (overrides the config file).
    #[arg(long)]
    name: Option<String>,
    #[arg(long)]
    dispatch: Option<SocketAddr>,
    #[arg(long)]
    app: Option<SocketAddr>,
    #[arg(long)]
    cla: Option<SocketAddr>,
    /// Listen on 127.0.0.1 ports BASE, BASE+1, BASE+2 for dispatch, app and cla.
    #[arg(long, conflicts_with_all = ["dispatch", "app", "cla"])]
    port_base: Option<u16>,
    /// Also serve the dispatch protocol on this Unix socket path.
    #[arg(long)]
    dispatch_socket: Option<PathBuf>,
    /// CLA address to dial at startup; repeatable.
    #[arg(long = "peer")]
    peers: Vec<String>,
    #[arg(long)]
    wire_log: Option<PathBuf>,
    /// Accept `dial ADDR`, `close PEER` and `shutdown` on stdin.
    #[arg(long)]
    control_stdin: bool,
}

#[derive(Subcommand)]
enum BdmCmd {
    /// Fixed next-hop table.
    Static {
        #[arg(long)]
        node: String,
        /// File of `destination next-hop` lines; `*` is the fallback.
        #[arg(long)]
        routes: PathBuf,
    },
    /// Forward over whichever links are up.
    Opportunistic {
        #[arg(long)]
        node: String,
        /// `single-copy` or `flood`.
        #[arg(long, default_value = "single-copy")]
        mode: FloodMode,
    },
    /// Earliest-arrival routing over a contact plan.
    Contact {
        #[arg(long)]
        node: String,
        /// File of `from to start-ms end-ms [owlt-ms]` lines, epoch milliseconds.
        #[arg(long)]
        plan: PathBuf,
    },
}

#[derive(Subcommand)]
enum ScenarioCmd {
    Run {
        file: PathBuf,
        /// Directory for configs and wire logs (default: a fresh temp dir).
        #[arg(long)]
        work_dir: Option<PathBuf>,
        /// Executable for child processes (default: this one).
        #[arg(long)]
        binary: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum EventsCmd {
    /// Print events as JSON lines.
    Tail {
        #[arg(long)]
        node: String,
        /// Comma-separated topics (default: all).
        #[arg(long, value_delimiter = ',')]
        topics: Vec<Topic>,
    },
}

#[derive(Subcommand)]
enum PlanCmd {
    /// Print the earliest-arrival route.
    Route {
        #[arg(long)]
        plan: PathBuf,
        #[arg(long)]
        from: String,
        #[arg(long)]
        to: String,
        /// Start time in ms (default: now).
        #[arg(long)]
        at: Option<u64>,
    },
}

#[tokio::main]
async fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Cmd::Node {
            command: NodeCmd::Run(args),
        } => run_node(args).await,
        Cmd::Bdm { kind } => run_bdm(kind).await,
        Cmd::Scenario {
            command: ScenarioCmd::Run { file, work_dir, binary },
        } => run_scenario(file, work_dir, binary).await,
        Cmd::Events {
            command: EventsCmd::Tail { node, topics },
        } => tail_events(&node, topics).await,
        Cmd::Plan {
            command: PlanCmd::Route { plan, from, to, at },
        } => print_route(&plan, &from, &to, at),
        Cmd::Conformance {
            command: ConformanceCmd::Record { out },
        } => record_conformance(out).await,
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

type CliResult = Result<ExitCode, Box<dyn std::error::Error>>;

async fn run_node(args: NodeRunArgs) -> CliResult {
    let mut cfg = match (&args.config, &args.name) {
        (Some(path), _) => NodeConfig::load(path)?,
        (None, Some(name)) => NodeConfig::new(name),
        (None, None) => return Err("either --config or --name is required".into()),
    };
    if let Some(name) = args.name {
        cfg.node_name = name;
    }
    if let Some(base) = args.port_base {
        let at = |off: u16| SocketAddr::from(([127, 0, 0, 1], base + off));
        cfg.dispatch_listen = at(0);
        cfg.app_listen = at(1);
        cfg.cla_listen = at(2);
    }
    if let Some(a) = args.dispatch {
        cfg.dispatch_listen = a;
    }
    if let Some(a) = args.app {
        cfg.app_listen = a;
    }
    if let Some(a) = args.cla {
        cfg.cla_listen = a;
    }
    cfg.peers.extend(args.peers);
    if args.dispatch_socket.is_some() {
        cfg.dispatch_socket = args.dispatch_socket;
    }
    if args.wire_log.is_some() {
        cfg.wire_log = args.wire_log;
    }
    let mut node = bpa::start(cfg).await?;
    let mut stdout = tokio::io::stdout();
    stdout.write_all(format!("{}\n", node.readiness_line()).as_bytes()).await?;
    stdout.flush().await?;

    if args.control_stdin {
        // end of input also stops the node, so it never outlives its parent
        let stdin = BufReader::new(tokio::io::stdin());
        bpa::control::serve(&node, stdin, tokio::io::stdout()).await?;
        node.shutdown().await;
    } else {
        tokio::select! {
            _ = tokio::signal::ctrl_c() => node.shutdown().await,
            _ = node.stopped() => {}
        }
    }
    Ok(ExitCode::SUCCESS)
}

async fn run_bdm(kind: BdmCmd) -> CliResult {
    match kind {
        BdmCmd::Static { node, routes } => {
            let table = bdm::StaticRouteTable::load(&routes)?;
            attach(&node, StaticDispatcher::new(table)).await
        }
        BdmCmd::Opportunistic { node, mode } => attach(&node, OpportunisticDispatcher::new(mode)).await,
        BdmCmd::Contact { node, plan } => {
            let plan = bdm::load_plan(&plan)?;
            attach(&node, ContactDispatcher::new(plan)).await
        }
    }
}

async fn attach<D: Dispatcher>(addr: &str, mut dispatcher: D) -> CliResult {
    let name = format!("bdm-{}", dispatcher.name());
    let client = DispatchClient::connect(addr, Role::Bdm, &name).await?;
    let kind = dispatcher.name();
    let r = driver::run(&client, &mut dispatcher, |node| {
        println!("ready bdm={kind} node={node}");
    })
    .await;
    match r {
        Ok(()) => Ok(ExitCode::SUCCESS),
        Err(e) => {
            log::info!("dispatcher stopped: {e}");
            Ok(ExitCode::SUCCESS)
        }
    }
}

async fn run_scenario(file: PathBuf, work_dir: Option<PathBuf>, binary: Option<PathBuf>) -> CliResult {
    let s = Scenario::load(&file)?;
    let binary = match binary {
        Some(b) => b,
        None => std::env::current_exe()?,
    };
    let work_dir = work_dir.unwrap_or_else(|| {
        std::env::temp_dir().join(format!("bpa-scenario-{}-{}-{}", s.name, std::process::id(), now_ms()))
    });
    let outcome = scenario::run(&s, &RunOptions::new(binary, &work_dir)).await?;
    println!("scenario {} (logs in {})", outcome.scenario, work_dir.display());
    for c in &outcome.checks {
        println!("{c}");
    }
    for line in outcome.trace.control.iter().filter(|l| l.contains(": err")) {
        println!("control: {line}");
    }
    Ok(if outcome.passed() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}

async fn tail_events(addr: &str, topics: Vec<Topic>) -> CliResult {
    let topics = if topics.is_empty() { Topic::BUS.to_vec() } else { topics };
    let client = DispatchClient::connect(addr, Role::Monitor, "events-tail").await?;
    client.subscribe(&topics).await?;
    loop {
        match client.next_event(None).await {
            Ok(ev) => println!("{}", serde_json::to_string(&ev)?),
            Err(e) => {
                log::info!("{e}");
                return Ok(ExitCode::SUCCESS);
            }
        }
    }
}

fn print_route(plan: &std::path::Path, from: &str, to: &str, at: Option<u64>) -> CliResult {
    let plan = bdm::load_plan(plan)?;
    match bdm::earliest_arrival(&plan, from, to, at.unwrap_or_else(now_ms)) {
        Some(r) => {
            println!(
                "next-hop={} arrival={} departure={} hops={}",
                r.next_hop, r.arrival, r.departure, r.hops
            );
            Ok(ExitCode::SUCCESS)
        }
        None => {
            println!("unreachable");
            Ok(ExitCode::from(2))
        }
    }
}

async fn record_conformance(out: Option<PathBuf>) -> CliResult {
    let text = conformance::to_jsonl(&conformance::record_dispatch_session().await?);
    match out {
        Some(path) => std::fs::write(path, text)?,
        None => print!("{text}"),
    }
    Ok(ExitCode::SUCCESS)
}
