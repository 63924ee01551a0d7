// SPDX-License-Identifier: Apache-2.0

//! Launches a scenario's nodes and dispatchers as child processes, drives
//! links and traffic on a timeline, and collects the resulting trace.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::process::Stdio;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use tokio::io::{AsyncBufReadExt, AsyncWriteExt, BufReader};
use tokio::process::{Child, ChildStdin, Command};
use tokio::task::JoinHandle;

use super::check::{evaluate, Check};
use super::trace::{DeliveryRecord, SentRecord, Trace};
use super::{BdmSpec, Scenario, ScenarioError};
use crate::bdm::plan::format_plan;
use crate::bpa::NodeConfig;
use crate::bundle::now_ms;
use crate::client::AppClient;
use crate::wirelog::read_log;

const READY_TIMEOUT: Duration = Duration::from_secs(10);
const STOP_TIMEOUT: Duration = Duration::from_secs(3);

#[derive(Debug, Clone)]
pub struct RunOptions {
    /// The `bpa-dispatch` executable used for child processes.
    pub binary: PathBuf,
    /// Where configs, plans and wire logs are written.
    pub work_dir: PathBuf,
    /// Time between launching the nodes and the scenario start.
    pub lead: Duration,
}

impl RunOptions {
    pub fn new(binary: impl Into<PathBuf>, work_dir: impl Into<PathBuf>) -> Self {
        RunOptions {
            binary: binary.into(),
            work_dir: work_dir.into(),
            lead: Duration::from_millis(1000),
        }
    }
}

#[derive(Debug)]
pub struct Outcome {
    pub scenario: String,
    pub trace: Trace,
    pub checks: Vec<Check>,
}

impl Outcome {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

struct Process {
    label: String,
    child: Child,
    stdin: Option<ChildStdin>,
    ready: HashMap<String, String>,
    stdout_task: JoinHandle<()>,
}

impl Process {
    async fn spawn(
        opts: &RunOptions,
        label: &str,
        args: &[String],
        replies: Arc<Mutex<Vec<String>>>,
    ) -> Result<Process, ScenarioError> {
        let stderr = std::fs::File::create(opts.work_dir.join(format!("{label}.stderr.log")))
            .map_err(|e| ScenarioError::Io(e.to_string()))?;
        let mut child = Command::new(&opts.binary)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::from(stderr))
            .kill_on_drop(true)
            .spawn()
            .map_err(|e| ScenarioError::Spawn(format!("{label}: {}: {e}", opts.binary.display())))?;
        let stdout = child.stdout.take().expect("piped");
        let stdin = child.stdin.take();
        let mut lines = BufReader::new(stdout).lines();
        let ready = tokio::time::timeout(READY_TIMEOUT, async {
            while let Some(line) = lines.next_line().await? {
                if let Some(rest) = line.strip_prefix("ready ") {
                    return Ok(Some(parse_pairs(rest)));
                }
            }
            Ok::<_, std::io::Error>(None)
        })
        .await
        .map_err(|_| ScenarioError::Spawn(format!("{label}: no readiness line within {READY_TIMEOUT:?}")))?
        .map_err(|e| ScenarioError::Io(e.to_string()))?
        .ok_or_else(|| ScenarioError::Spawn(format!("{label}: exited before becoming ready")))?;
        let prefix = label.to_string();
        let stdout_task = tokio::spawn(async move {
            while let Ok(Some(line)) = lines.next_line().await {
                replies.lock().unwrap().push(format!("{prefix}: {line}"));
            }
        });
        Ok(Process {
            label: label.to_string(),
            child,
            stdin,
            ready,
            stdout_task,
        })
    }

    fn addr(&self, key: &str) -> Result<String, ScenarioError> {
        self.ready
            .get(key)
            .cloned()
            .ok_or_else(|| ScenarioError::Spawn(format!("{}: readiness line lacks {key}", self.label)))
    }

    async fn command(&mut self, line: &str) -> Result<(), ScenarioError> {
        let stdin = self
            .stdin
            .as_mut()
            .ok_or_else(|| ScenarioError::Spawn(format!("{}: no control input", self.label)))?;
        stdin
            .write_all(format!("{line}\n").as_bytes())
            .await
            .map_err(|e| ScenarioError::Io(format!("{}: {e}", self.label)))
    }

    async fn stop(mut self, graceful: bool) {
        if graceful && self.command("shutdown").await.is_ok() {
            if tokio::time::timeout(STOP_TIMEOUT, self.child.wait()).await.is_ok() {
                let _ = self.stdout_task.await;
                return;
            }
            log::warn!("{} did not stop in time", self.label);
        }
        self.stdin = None;
        let _ = self.child.kill().await;
        self.stdout_task.abort();
    }
}

fn parse_pairs(text: &str) -> HashMap<String, String> {
    text.split_whitespace()
        .filter_map(|kv| kv.split_once('='))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}

fn write_file(path: &Path, text: &str) -> Result<(), ScenarioError> {
    std::fs::write(path, text).map_err(|e| ScenarioError::Io(format!("{}: {e}", path.display())))
}

fn payload_for(scenario: &str, from: &str, n: u64, size: usize) -> Vec<u8> {
    let mut p = format!("{scenario}/{from}/{n}/").into_bytes();
    p.resize(size.max(p.len()), b'.');
    p.truncate(size.max(1));
    p
}

enum Step {
    Dial { from: String, to: String },
    Close { from: String, to: String },
    Send { spec: usize },
}

/// Runs a scenario to completion and evaluates its expectations.
pub async fn run(scenario: &Scenario, opts: &RunOptions) -> Result<Outcome, ScenarioError> {
    scenario.validate()?;
    std::fs::create_dir_all(&opts.work_dir).map_err(|e| ScenarioError::Io(e.to_string()))?;
    let replies: Arc<Mutex<Vec<String>>> = Arc::default();

    let mut nodes: BTreeMap<String, Process> = BTreeMap::new();
    let mut logs = BTreeMap::new();
    let result = async {
        for spec in &scenario.nodes {
            let log_path = opts.work_dir.join(format!("{}.wire.jsonl", spec.name));
            let mut cfg = NodeConfig::ephemeral(&spec.name);
            cfg.default_actions = spec.default_actions.clone();
            if let Some(p) = spec.expiry_scan_period_ms {
                cfg.expiry_scan_period_ms = p;
            }
            cfg.wire_log = Some(log_path.clone());
            let cfg_path = opts.work_dir.join(format!("{}.toml", spec.name));
            let text = toml::to_string(&cfg).map_err(|e| ScenarioError::Invalid(e.to_string()))?;
            write_file(&cfg_path, &text)?;
            let args = vec![
                "node".into(),
                "run".into(),
                "--config".into(),
                cfg_path.display().to_string(),
                "--control-stdin".into(),
            ];
            let p = Process::spawn(opts, &format!("node-{}", spec.name), &args, replies.clone()).await?;
            logs.insert(spec.name.clone(), log_path);
            nodes.insert(spec.name.clone(), p);
        }
        let t0 = now_ms() + opts.lead.as_millis() as u64;

        let mut bdms = Vec::new();
        for (i, spec) in scenario.bdms.iter().enumerate() {
            let dispatch = nodes[spec.node()].addr("dispatch")?;
            let mut args = vec!["bdm".to_string(), spec.kind().to_string(), "--node".into(), dispatch];
            match spec {
                BdmSpec::Static { routes, .. } => {
                    let path = opts.work_dir.join(format!("bdm{i}.routes"));
                    let text: String = routes.iter().map(|(d, h)| format!("{d} {h}\n")).collect();
                    write_file(&path, &text)?;
                    args.extend(["--routes".into(), path.display().to_string()]);
                }
                BdmSpec::Opportunistic { mode, .. } => args.extend(["--mode".into(), mode.clone()]),
                BdmSpec::Contact { contacts, .. } => {
                    let plan = contacts.iter().map(|c| c.absolute(t0)).collect::<Result<Vec<_>, _>>()?;
                    let path = opts.work_dir.join(format!("bdm{i}.plan"));
                    write_file(&path, &format_plan(&plan))?;
                    args.extend(["--plan".into(), path.display().to_string()]);
                }
            }
            let label = format!("bdm{i}-{}-{}", spec.kind(), spec.node());
            bdms.push(Process::spawn(opts, &label, &args, replies.clone()).await?);
        }

        let deliveries: Arc<Mutex<Vec<DeliveryRecord>>> = Arc::default();
        let mut receivers = Vec::new();
        for app in &scenario.apps {
            let addr = nodes[&app.node].addr("app")?;
            let client = AppClient::connect(&addr, "scenario")
                .await
                .map_err(|e| ScenarioError::Client(format!("app on {}: {e}", app.node)))?;
            client
                .register(&app.demux)
                .await
                .map_err(|e| ScenarioError::Client(format!("register {}/{}: {e}", app.node, app.demux)))?;
            let sink = deliveries.clone();
            let (node, demux) = (app.node.clone(), app.demux.clone());
            receivers.push(tokio::spawn(async move {
                while let Ok(bundle) = client.recv(None).await {
                    sink.lock().unwrap().push(DeliveryRecord {
                        node: node.clone(),
                        demux: demux.clone(),
                        t: now_ms(),
                        id: bundle.id,
                        payload: bundle.payload,
                    });
                }
            }));
        }
        let mut senders: HashMap<String, AppClient> = HashMap::new();
        for s in &scenario.sends {
            if senders.contains_key(&s.from) {
                continue;
            }
            let addr = nodes[&s.from].addr("app")?;
            let client = AppClient::connect(&addr, "scenario-source")
                .await
                .map_err(|e| ScenarioError::Client(format!("source on {}: {e}", s.from)))?;
            client
                .register("scenario-source")
                .await
                .map_err(|e| ScenarioError::Client(format!("register source on {}: {e}", s.from)))?;
            senders.insert(s.from.clone(), client);
        }

        let mut steps: Vec<(u64, Step)> = Vec::new();
        for l in &scenario.links {
            steps.push((l.at_ms, Step::Dial { from: l.from.clone(), to: l.to.clone() }));
            if let Some(c) = l.close_ms {
                steps.push((c, Step::Close { from: l.from.clone(), to: l.to.clone() }));
            }
        }
        for (i, s) in scenario.sends.iter().enumerate() {
            for n in 0..s.count {
                steps.push((s.at_ms + n * s.interval_ms, Step::Send { spec: i }));
            }
        }
        steps.sort_by_key(|(at, _)| *at);

        if now_ms() > t0 {
            log::warn!("setup overran the scenario start by {} ms", now_ms() - t0);
        }
        let mut sent = Vec::new();
        for (at, step) in steps {
            sleep_until(t0 + at).await;
            match step {
                Step::Dial { from, to } => {
                    let cla = nodes[&to].addr("cla")?;
                    nodes.get_mut(&from).expect("validated").command(&format!("dial {cla}")).await?;
                }
                Step::Close { from, to } => {
                    nodes.get_mut(&from).expect("validated").command(&format!("close {to}")).await?;
                }
                Step::Send { spec } => {
                    let s = &scenario.sends[spec];
                    let payload = payload_for(&scenario.name, &s.from, sent.len() as u64, s.payload_size);
                    let t = now_ms();
                    let id = senders[&s.from]
                        .send(&s.destination, payload.clone(), s.lifetime_ms, vec![])
                        .await
                        .map_err(|e| ScenarioError::Client(format!("send on {}: {e}", s.from)))?;
                    sent.push(SentRecord {
                        node: s.from.clone(),
                        id,
                        t,
                        lifetime: s.lifetime_ms,
                        payload,
                    });
                }
            }
        }
        sleep_until(t0 + scenario.duration_ms).await;

        drop(senders);
        for r in receivers {
            r.abort();
        }
        for b in bdms {
            b.stop(false).await;
        }
        let deliveries = std::mem::take(&mut *deliveries.lock().unwrap());
        Ok::<_, ScenarioError>((t0, sent, deliveries))
    }
    .await;

    for (_, p) in std::mem::take(&mut nodes) {
        p.stop(true).await;
    }
    let (t0, sent, deliveries) = result?;

    let mut records = BTreeMap::new();
    for (name, path) in logs {
        let r = read_log(&path).map_err(|e| ScenarioError::Io(format!("{}: {e}", path.display())))?;
        records.insert(name, r);
    }
    let trace = Trace {
        t0,
        records,
        sent,
        deliveries,
        control: std::mem::take(&mut *replies.lock().unwrap()),
    };
    let checks = scenario.expects.iter().map(|e| evaluate(e, &trace)).collect();
    Ok(Outcome {
        scenario: scenario.name.clone(),
        trace,
        checks,
    })
}

async fn sleep_until(t: u64) {
    let now = now_ms();
    if t > now {
        tokio::time::sleep(Duration::from_millis(t - now)).await;
    }
}
