//! Runs dispatchers and invokers as separate `met` processes on localhost.
//!
//! Each process prints one JSON ready line with its bound addresses on
//! stdout and is started with `--managed`, so closing its stdin shuts it down
//! cleanly (deliveries drained, logs flushed).

use std::path::{Path, PathBuf};
use std::process::Stdio;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use tokio::io::{AsyncBufReadExt, BufReader};
use tokio::process::{Child, Command};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", rename_all_fields = "camelCase", tag = "ready")]
pub enum ReadyLine {
    Dispatcher {
        name: String,
        addr: String,
    },
    Invoker {
        name: String,
        admin_addr: String,
        frame_addr: String,
    },
}

#[derive(Debug, Clone)]
pub struct ClusterSpec {
    /// Path of the `met` executable.
    pub bin: PathBuf,
    pub dispatchers: usize,
    pub invokers: usize,
    /// Directory for per-process logs; `None` disables arrival and delivery
    /// logs.
    pub log_dir: Option<PathBuf>,
    pub high_water_mark: Option<usize>,
}

struct Proc {
    child: Child,
}

pub struct InvokerProc {
    pub name: String,
    pub admin_url: String,
    pub frame_endpoint: String,
    pub arrival_log: Option<PathBuf>,
}

pub struct DispatcherProc {
    pub name: String,
    pub url: String,
    pub delivery_log: Option<PathBuf>,
}

pub struct Cluster {
    pub dispatchers: Vec<DispatcherProc>,
    pub invokers: Vec<InvokerProc>,
    dispatcher_procs: Vec<Proc>,
    invoker_procs: Vec<Proc>,
}

const READY_TIMEOUT: Duration = Duration::from_secs(20);
const STOP_TIMEOUT: Duration = Duration::from_secs(30);

fn free_port() -> std::io::Result<u16> {
    Ok(std::net::TcpListener::bind("127.0.0.1:0")?.local_addr()?.port())
}

async fn spawn(bin: &Path, args: &[String], stderr_log: Option<PathBuf>) -> std::io::Result<(Proc, ReadyLine)> {
    let stderr = match stderr_log {
        Some(p) => Stdio::from(std::fs::File::create(p)?),
        None => Stdio::null(),
    };
    let mut child = Command::new(bin)
        .args(args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(stderr)
        .kill_on_drop(true)
        .spawn()?;
    let stdout = child.stdout.take().expect("stdout piped");
    let mut lines = BufReader::new(stdout).lines();
    let line = tokio::time::timeout(READY_TIMEOUT, lines.next_line())
        .await
        .map_err(|_| std::io::Error::new(std::io::ErrorKind::TimedOut, format!("{args:?}: no ready line")))??;
    let Some(line) = line else {
        let status = child.wait().await?;
        return Err(std::io::Error::other(format!("{args:?} exited early: {status}")));
    };
    let ready: ReadyLine = serde_json::from_str(&line)
        .map_err(|e| std::io::Error::other(format!("bad ready line {line:?}: {e}")))?;
    // keep draining stdout so the child never blocks on a full pipe
    tokio::spawn(async move { while let Ok(Some(_)) = lines.next_line().await {} });
    Ok((Proc { child }, ready))
}

impl Cluster {
    pub async fn launch(spec: &ClusterSpec) -> std::io::Result<Cluster> {
        let log = |name: &str| spec.log_dir.as_ref().map(|d| d.join(name));
        if let Some(d) = &spec.log_dir {
            std::fs::create_dir_all(d)?;
        }

        let mut dispatchers = Vec::new();
        let mut dispatcher_procs = Vec::new();
        for i in 0..spec.dispatchers {
            let name = format!("d{i}");
            let delivery_log = log(&format!("deliveries-{name}.jsonl"));
            let mut args = vec![
                "dispatcher".into(),
                "--managed".into(),
                "--name".into(),
                name.clone(),
                "--addr".into(),
                "127.0.0.1:0".into(),
            ];
            if let Some(p) = &delivery_log {
                args.extend(["--delivery-log".into(), p.display().to_string()]);
            }
            let (proc, ready) = spawn(&spec.bin, &args, log(&format!("{name}.stderr"))).await?;
            let ReadyLine::Dispatcher { addr, .. } = ready else {
                return Err(std::io::Error::other("dispatcher printed an invoker ready line"));
            };
            dispatchers.push(DispatcherProc {
                name,
                url: format!("http://{addr}"),
                delivery_log,
            });
            dispatcher_procs.push(proc);
        }

        // ports are fixed up front so every invoker can list its peers
        let mut planned = Vec::new();
        for i in 0..spec.invokers {
            planned.push((format!("i{i}"), free_port()?, free_port()?));
        }
        let mut invokers = Vec::new();
        let mut invoker_procs = Vec::new();
        for (i, (name, admin, frame)) in planned.iter().enumerate() {
            let arrival_log = log(&format!("arrivals-{name}.jsonl"));
            let mut args = vec![
                "invoker".into(),
                "--managed".into(),
                "--name".into(),
                name.clone(),
                "--admin-addr".into(),
                format!("127.0.0.1:{admin}"),
                "--frame-addr".into(),
                format!("127.0.0.1:{frame}"),
            ];
            for d in &dispatchers {
                args.extend(["--dispatcher".into(), d.url.clone()]);
            }
            // peers in ring order starting after self
            for k in 1..planned.len() {
                let (pname, padmin, pframe) = &planned[(i + k) % planned.len()];
                args.extend([
                    "--peer".into(),
                    format!("{pname},http://127.0.0.1:{padmin},127.0.0.1:{pframe}"),
                ]);
            }
            if let Some(p) = &arrival_log {
                args.extend(["--arrival-log".into(), p.display().to_string()]);
            }
            if let Some(h) = spec.high_water_mark {
                args.extend(["--high-water-mark".into(), h.to_string()]);
            }
            let (proc, ready) = spawn(&spec.bin, &args, log(&format!("{name}.stderr"))).await?;
            let ReadyLine::Invoker {
                admin_addr,
                frame_addr,
                ..
            } = ready
            else {
                return Err(std::io::Error::other("invoker printed a dispatcher ready line"));
            };
            invokers.push(InvokerProc {
                name: name.clone(),
                admin_url: format!("http://{admin_addr}"),
                frame_endpoint: frame_addr,
                arrival_log,
            });
            invoker_procs.push(proc);
        }

        Ok(Cluster {
            dispatchers,
            invokers,
            dispatcher_procs,
            invoker_procs,
        })
    }

    pub fn dispatcher_urls(&self) -> Vec<String> {
        self.dispatchers.iter().map(|d| d.url.clone()).collect()
    }

    /// Stops dispatchers first, then invokers, so in-flight function calls
    /// finish and every log is flushed before this returns.
    pub async fn shutdown(self) -> std::io::Result<()> {
        for group in [self.dispatcher_procs, self.invoker_procs] {
            let mut waits = Vec::new();
            for mut p in group {
                drop(p.child.stdin.take());
                waits.push(async move {
                    match tokio::time::timeout(STOP_TIMEOUT, p.child.wait()).await {
                        Ok(r) => r.map(|_| ()),
                        Err(_) => p.child.kill().await,
                    }
                });
            }
            for r in futures::future::join_all(waits).await {
                r?;
            }
        }
        Ok(())
    }
}
