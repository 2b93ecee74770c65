//! Client/server orchestration of the readiness phase.
//!
//! The server distributes the task, coordinates the PCA moment exchange
//! and collects report payloads; clients run the readiness loop on their
//! own data. Networked and in-process runs share the same server core and
//! exchange identical lines, so they produce identical reports.

mod client;
mod frame;
mod server;
mod transport;

use std::fs;
use std::net::TcpListener;
use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use std::collections::BTreeMap;

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::readiness::ModuleRegistry;
use crate::report::DrReport;
use crate::table::DataTable;

pub use client::{run_session, ClientRun, MAX_HISTOGRAM_COLUMNS};
pub use frame::*;
pub use server::{Action, ConnId, LogEvent, Phase, ServerCore, ServerSpec};
pub use transport::{
    read_line_limited, Capture, ChannelSink, ChannelTransport, Event, LineSink, ReadLine, TcpSink,
    TcpTransport, Transport,
};

pub const RUN_LOG: &str = "run.log";
/// Upper bound on one wait of the server loop, so deadlines are noticed.
const POLL: Duration = Duration::from_millis(100);

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Report timestamp; the current UTC time when unset.
    pub generated_at: Option<String>,
}

impl RunOptions {
    pub fn at(timestamp: impl Into<String>) -> Self {
        RunOptions {
            generated_at: Some(timestamp.into()),
        }
    }

    fn timestamp(&self) -> String {
        self.generated_at.clone().unwrap_or_else(|| {
            chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AggregatedRun {
    pub report: DrReport,
    pub events: Vec<LogEvent>,
}

impl AggregatedRun {
    pub fn experiment_id(&self) -> &str {
        &self.report.experiment_id
    }

    pub fn run_log(&self) -> Result<String> {
        let mut out = String::new();
        for e in &self.events {
            out.push_str(&serde_json::to_string(e)?);
            out.push('\n');
        }
        Ok(out)
    }

    /// Writes report.json, report.html and run.log into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        self.report.write(dir)?;
        fs::write(dir.join(RUN_LOG), self.run_log()?)?;
        Ok(())
    }
}

/// Single aggregation point: applies events to the core in arrival order
/// and executes its actions until every client is done or absent.
fn drive(
    mut core: ServerCore,
    events: Receiver<Event>,
    opts: &RunOptions,
) -> Result<AggregatedRun> {
    let clock = Instant::now();
    let mut sinks: BTreeMap<ConnId, Box<dyn LineSink>> = BTreeMap::new();
    let mut pending: Vec<Action> = Vec::new();
    while !core.is_finished() {
        let now = clock.elapsed().as_secs_f64();
        let wait = core.next_deadline().map_or(POLL, |d| {
            Duration::from_secs_f64((d - now).max(0.0)).min(POLL)
        });
        match events.recv_timeout(wait) {
            Ok(ev) => {
                let now = clock.elapsed().as_secs_f64();
                match ev {
                    Event::Connected(conn, sink) => {
                        sinks.insert(conn, sink);
                        core.connect(conn, now);
                    }
                    Event::Line(conn, line) => pending.extend(core.handle_line(conn, &line, now)),
                    Event::TooLong(conn) => {
                        if let Some(s) = sinks.get_mut(&conn) {
                            let err = Frame::new(Message::error("frame exceeds the size limit"));
                            let _ = s.send_line(&err.encode()?);
                        }
                        pending.push(Action::Close(conn));
                        pending.extend(core.disconnect(conn, now));
                    }
                    Event::Closed(conn) => {
                        sinks.remove(&conn);
                        pending.extend(core.disconnect(conn, now));
                    }
                }
            }
            Err(RecvTimeoutError::Timeout) => {}
            Err(RecvTimeoutError::Disconnected) => core.abandon("no connection remained"),
        }
        pending.extend(core.tick(clock.elapsed().as_secs_f64()));
        execute(&mut core, &mut sinks, &mut pending, &clock);
    }
    pending.extend(core.close_all());
    execute(&mut core, &mut sinks, &mut pending, &clock);
    let report = core.report(&opts.timestamp())?;
    Ok(AggregatedRun {
        report,
        events: core.events().to_vec(),
    })
}

fn execute(
    core: &mut ServerCore,
    sinks: &mut BTreeMap<ConnId, Box<dyn LineSink>>,
    pending: &mut Vec<Action>,
    clock: &Instant,
) {
    while !pending.is_empty() {
        let batch = std::mem::take(pending);
        for action in batch {
            match action {
                Action::Send(conn, line) => {
                    let failed = match sinks.get_mut(&conn) {
                        Some(s) => s.send_line(&line).is_err(),
                        None => false,
                    };
                    if failed {
                        sinks.remove(&conn);
                        pending.extend(core.disconnect(conn, clock.elapsed().as_secs_f64()));
                    }
                }
                Action::Close(conn) => {
                    if let Some(mut s) = sinks.remove(&conn) {
                        s.close();
                    }
                }
            }
        }
    }
}

/// Runs the server on `addr` until every configured client has finished or
/// timed out.
pub fn serve(config: &ExperimentConfig, addr: &str, opts: &RunOptions) -> Result<AggregatedRun> {
    let listener = TcpListener::bind(addr).map_err(|source| Error::Bind {
        addr: addr.to_string(),
        source,
    })?;
    serve_on(listener, config, opts)
}

/// As [`serve`], on an already bound listener.
pub fn serve_on(
    listener: TcpListener,
    config: &ExperimentConfig,
    opts: &RunOptions,
) -> Result<AggregatedRun> {
    listener.set_nonblocking(true)?;
    let (tx, rx) = mpsc::channel();
    let stop = Arc::new(AtomicBool::new(false));
    let acceptor = {
        let stop = Arc::clone(&stop);
        thread::spawn(move || {
            let mut next: ConnId = 1;
            while !stop.load(Ordering::Relaxed) {
                match listener.accept() {
                    Ok((stream, _)) => {
                        let conn = next;
                        next += 1;
                        let setup = stream
                            .set_nonblocking(false)
                            .and_then(|_| stream.set_nodelay(true))
                            .and_then(|_| stream.try_clone());
                        let Ok(reader) = setup else { continue };
                        if tx
                            .send(Event::Connected(conn, Box::new(TcpSink(stream))))
                            .is_err()
                        {
                            return;
                        }
                        let events = tx.clone();
                        thread::spawn(move || transport::pump_tcp(conn, reader, events));
                    }
                    Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                        thread::sleep(Duration::from_millis(5));
                    }
                    Err(_) => thread::sleep(Duration::from_millis(5)),
                }
            }
        })
    };
    let result = drive(ServerCore::new(ServerSpec::from_config(config)), rx, opts);
    stop.store(true, Ordering::Relaxed);
    let _ = acceptor.join();
    result
}

/// Connects to a server and runs one client session over TCP. `load` runs
/// after registration, as in [`run_session`].
pub fn run_client<F>(
    client_id: &str,
    load: F,
    server_addr: &str,
    registry: &ModuleRegistry,
) -> Result<ClientRun>
where
    F: FnOnce() -> Result<DataTable>,
{
    let mut t = TcpTransport::connect(server_addr)?;
    run_session(&mut t, client_id, load, registry)
}

/// The same experiment without sockets: each client runs on its own thread
/// and talks to the server core over in-memory channels.
pub fn run_in_process(
    config: &ExperimentConfig,
    registry: &ModuleRegistry,
    opts: &RunOptions,
) -> Result<AggregatedRun> {
    let (tx, rx) = mpsc::channel();
    let mut handles = Vec::new();
    for (i, id) in config.client_ids().into_iter().enumerate() {
        let conn = i as ConnId + 1;
        let (stx, srx) = mpsc::channel();
        tx.send(Event::Connected(conn, Box::new(ChannelSink::new(stx))))
            .expect("receiver alive");
        let events = tx.clone();
        let cfg = config.clone();
        let registry = registry.clone();
        handles.push(thread::spawn(move || {
            let mut t = ChannelTransport::new(conn, events, srx);
            run_session(&mut t, &id, || cfg.client_table(&id), &registry)
        }));
    }
    drop(tx);
    let run = drive(ServerCore::new(ServerSpec::from_config(config)), rx, opts);
    for h in handles {
        // client failures already show up as absent clients in the report
        let _ = h.join();
    }
    run
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_config_str;
    use crate::report::ClientStatus;

    const TWO: &str = "
experiment_id: fed
seeds: { global: 7 }
deadlines: { client_seconds: 5 }
clients:
  - client_id: a
    data: { synth: { type: tabular, n_rows: 80, n_features: 3, n_groups: 2, n_classes: 2 } }
  - client_id: b
    data: { synth: { type: tabular, n_rows: 60, n_features: 3, n_groups: 2, n_classes: 2 } }
pollution:
  - { type: duplicate_rows, fraction: 0.25, clients: [b] }
cadre_modules:
  - name: duplicate_management
";

    fn config(text: &str) -> ExperimentConfig {
        parse_config_str(text, &ModuleRegistry::builtin()).unwrap()
    }

    #[test]
    fn in_process_run_reports_every_client() {
        let cfg = config(TWO);
        let run = run_in_process(&cfg, &ModuleRegistry::builtin(), &RunOptions::at("t0")).unwrap();
        let r = &run.report;
        assert_eq!(
            r.clients
                .iter()
                .map(|c| c.client_id.as_str())
                .collect::<Vec<_>>(),
            ["a", "b"]
        );
        assert!(r.clients.iter().all(|c| c.status == ClientStatus::Reported));
        assert!(r.combined_pca.model.is_some());
        let b = r.clients[1].payload.as_ref().unwrap();
        assert_eq!(b.n_rows, 75);
        assert_eq!(b.outcomes[0].remedies_applied(), 1);
        assert_eq!(b.pca_points.as_ref().unwrap().len(), 75);
        let again =
            run_in_process(&cfg, &ModuleRegistry::builtin(), &RunOptions::at("t0")).unwrap();
        assert_eq!(again.report.to_json().unwrap(), r.to_json().unwrap());
        assert!(run.run_log().unwrap().lines().count() >= 6);
    }

    #[test]
    fn tcp_run_matches_in_process_run() {
        let cfg = config(TWO);
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap().to_string();
        let server = {
            let cfg = cfg.clone();
            thread::spawn(move || serve_on(listener, &cfg, &RunOptions::at("t0")))
        };
        let clients: Vec<_> = cfg
            .client_ids()
            .into_iter()
            .map(|id| {
                let (cfg, addr) = (cfg.clone(), addr.clone());
                thread::spawn(move || {
                    run_client(
                        &id,
                        || cfg.client_table(&id),
                        &addr,
                        &ModuleRegistry::builtin(),
                    )
                })
            })
            .collect();
        for c in clients {
            c.join().unwrap().unwrap();
        }
        let net = server.join().unwrap().unwrap();
        let local =
            run_in_process(&cfg, &ModuleRegistry::builtin(), &RunOptions::at("t0")).unwrap();
        assert_eq!(
            net.report.to_json().unwrap(),
            local.report.to_json().unwrap()
        );
    }

    #[test]
    fn silent_client_is_marked_absent_after_deadline() {
        let cfg = config(&TWO.replace("client_seconds: 5", "client_seconds: 0.3"));
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap().to_string();
        let server = {
            let cfg = cfg.clone();
            thread::spawn(move || serve_on(listener, &cfg, &RunOptions::at("t0")))
        };
        run_client(
            "a",
            || cfg.client_table("a"),
            &addr,
            &ModuleRegistry::builtin(),
        )
        .unwrap();
        let run = server.join().unwrap().unwrap();
        assert_eq!(run.report.clients[0].status, ClientStatus::Reported);
        assert_eq!(run.report.clients[1].status, ClientStatus::Absent);
        assert_eq!(run.report.verdicts.absent_clients, 1);
    }

    #[test]
    fn failing_load_marks_client_absent() {
        let cfg = config(TWO);
        let (tx, rx) = mpsc::channel();
        let mut handles = Vec::new();
        for (i, id) in ["a", "b"].into_iter().enumerate() {
            let conn = i as ConnId + 1;
            let (stx, srx) = mpsc::channel();
            tx.send(Event::Connected(conn, Box::new(ChannelSink::new(stx))))
                .unwrap();
            let events = tx.clone();
            let cfg = cfg.clone();
            handles.push(thread::spawn(move || {
                let mut t = ChannelTransport::new(conn, events, srx);
                let load = || {
                    if id == "b" {
                        Err(Error::EmptyInput("no data".into()))
                    } else {
                        cfg.client_table(id)
                    }
                };
                run_session(&mut t, id, load, &ModuleRegistry::builtin()).is_ok()
            }));
        }
        drop(tx);
        let run = drive(
            ServerCore::new(ServerSpec::from_config(&cfg)),
            rx,
            &RunOptions::at("t"),
        )
        .unwrap();
        let ok: Vec<bool> = handles.into_iter().map(|h| h.join().unwrap()).collect();
        assert_eq!(ok, [true, false]);
        assert_eq!(run.report.clients[1].status, ClientStatus::Absent);
        assert!(run.report.clients[1]
            .reason
            .as_deref()
            .unwrap()
            .contains("no data"));
    }
}
