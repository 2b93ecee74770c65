//! Transport-independent server: a per-client phase machine fed one line at
//! a time. Every input either advances a session or produces an Error
//! frame; nothing a peer sends can make it panic.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::frame::{
    AckBody, Frame, Message, MomentsUpBody, PcaModelDownBody, ShutdownBody, TaskConfigBody,
    PROTOCOL_VERSION,
};
use crate::config::{ExperimentConfig, ModuleConfig, PcaConfig};
use crate::report::{
    fit_pca, render_report, ClientEntry, ClientReportPayload, CombinedPca, DrReport, Moments,
};

pub type ConnId = u64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Registered,
    ConfigSent,
    MomentsReceived,
    ModelSent,
    ReportReceived,
    Done,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Action {
    Send(ConnId, String),
    Close(ConnId),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogEvent {
    pub seq: u64,
    pub elapsed_ms: u64,
    pub event: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub conn: Option<ConnId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub client_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

/// What the server needs to know about an experiment.
#[derive(Clone, Debug, PartialEq)]
pub struct ServerSpec {
    pub experiment_id: String,
    pub client_ids: Vec<String>,
    pub global_seed: u64,
    pub modules: Vec<ModuleConfig>,
    pub pca: PcaConfig,
    pub deadline_seconds: f64,
}

impl ServerSpec {
    pub fn from_config(cfg: &ExperimentConfig) -> Self {
        ServerSpec {
            experiment_id: cfg.experiment_id.clone(),
            client_ids: cfg.client_ids(),
            global_seed: cfg.seeds.global,
            modules: cfg.cadre_modules.clone(),
            pca: cfg.pca.clone(),
            deadline_seconds: cfg.deadlines.client_seconds,
        }
    }
}

#[derive(Debug, Default)]
struct Session {
    conn: Option<ConnId>,
    phase: Option<Phase>,
    absent: Option<String>,
    /// When the server started waiting on this client.
    since: f64,
    moments: Option<Moments>,
    payload: Option<ClientReportPayload>,
}

impl Session {
    fn settled(&self) -> bool {
        self.absent.is_some() || self.phase == Some(Phase::Done)
    }

    /// Phases in which the client owes the server a frame.
    fn awaiting(&self) -> Option<&'static str> {
        if self.settled() {
            return None;
        }
        match self.phase {
            None => Some("register"),
            Some(Phase::ConfigSent) => Some("moments_up"),
            Some(Phase::ModelSent) => Some("report_up"),
            _ => None,
        }
    }
}

#[derive(Debug)]
pub struct ServerCore {
    spec: ServerSpec,
    sessions: BTreeMap<String, Session>,
    /// Open connections and the client each registered as.
    conns: BTreeMap<ConnId, Option<String>>,
    pca: Option<CombinedPca>,
    log: Vec<LogEvent>,
    now: f64,
}

fn send(conn: ConnId, message: Message) -> Action {
    let line = Frame::new(message).encode().unwrap_or_else(|e| {
        format!(
            r#"{{"protocol_version":1,"type":"error","body":{{"message":"encode failed: {e}"}}}}"#
        )
    });
    Action::Send(conn, line)
}

impl ServerCore {
    pub fn new(spec: ServerSpec) -> Self {
        let sessions = spec
            .client_ids
            .iter()
            .map(|id| (id.clone(), Session::default()))
            .collect();
        ServerCore {
            spec,
            sessions,
            conns: BTreeMap::new(),
            pca: None,
            log: Vec::new(),
            now: 0.0,
        }
    }

    pub fn spec(&self) -> &ServerSpec {
        &self.spec
    }

    pub fn events(&self) -> &[LogEvent] {
        &self.log
    }

    pub fn phase_of(&self, client_id: &str) -> Option<Phase> {
        self.sessions.get(client_id).and_then(|s| s.phase)
    }

    pub fn is_absent(&self, client_id: &str) -> bool {
        self.sessions
            .get(client_id)
            .is_some_and(|s| s.absent.is_some())
    }

    pub fn is_finished(&self) -> bool {
        self.sessions.values().all(Session::settled)
    }

    fn record(
        &mut self,
        event: &str,
        conn: Option<ConnId>,
        client_id: Option<&str>,
        detail: Option<String>,
    ) {
        self.log.push(LogEvent {
            seq: self.log.len() as u64,
            elapsed_ms: (self.now * 1000.0) as u64,
            event: event.to_string(),
            conn,
            client_id: client_id.map(str::to_string),
            detail,
        });
    }

    fn reject(&mut self, conn: ConnId, reason: String) -> Vec<Action> {
        let client = self.conns.get(&conn).cloned().flatten();
        self.record(
            "rejected",
            Some(conn),
            client.as_deref(),
            Some(reason.clone()),
        );
        vec![send(conn, Message::error(reason))]
    }

    fn set_now(&mut self, now: f64) {
        if now > self.now {
            self.now = now;
        }
    }

    pub fn connect(&mut self, conn: ConnId, now: f64) {
        self.set_now(now);
        if let std::collections::btree_map::Entry::Vacant(e) = self.conns.entry(conn) {
            e.insert(None);
            self.record("connected", Some(conn), None, None);
        }
    }

    /// Earliest time at which a waiting client times out.
    pub fn next_deadline(&self) -> Option<f64> {
        self.sessions
            .values()
            .filter(|s| s.awaiting().is_some())
            .map(|s| s.since + self.spec.deadline_seconds)
            .min_by(f64::total_cmp)
    }

    pub fn handle_line(&mut self, conn: ConnId, line: &str, now: f64) -> Vec<Action> {
        self.connect(conn, now);
        let frame = match Frame::decode(line) {
            Ok(f) => f,
            Err(e) => return self.reject(conn, e.to_string()),
        };
        if frame.protocol_version != PROTOCOL_VERSION {
            let mut out = self.reject(
                conn,
                format!(
                    "protocol version {} not supported, expected {PROTOCOL_VERSION}",
                    frame.protocol_version
                ),
            );
            out.push(Action::Close(conn));
            out.extend(self.disconnect(conn, now));
            return out;
        }
        if self.is_finished() {
            return self.reject(conn, "run already finished".into());
        }
        let kind = frame.message.kind();
        let bound = self.conns.get(&conn).cloned().flatten();
        if let Some(id) = &bound {
            if self.sessions[id].settled() {
                return self.reject(conn, format!("session for `{id}` is closed"));
            }
        }
        let mut out = match (frame.message, bound) {
            (Message::Register(body), None) => self.on_register(conn, body.client_id),
            (Message::Register(_), Some(id)) => {
                self.reject(conn, format!("connection already registered as `{id}`"))
            }
            (_, None) => self.reject(conn, format!("`{kind}` before register")),
            (Message::MomentsUp(body), Some(id)) => self.on_moments(conn, id, body),
            (Message::ReportUp(body), Some(id)) => self.on_report(conn, id, body.payload),
            (Message::Error(body), Some(id)) => self.on_client_error(conn, id, body.message),
            (_, Some(_)) => self.reject(conn, format!("`{kind}` is not a client frame")),
        };
        out.extend(self.advance());
        out
    }

    fn on_register(&mut self, conn: ConnId, client_id: String) -> Vec<Action> {
        let Some(session) = self.sessions.get(&client_id) else {
            return self.reject(conn, format!("unknown client `{client_id}`"));
        };
        if let Some(reason) = &session.absent {
            let reason = format!("client `{client_id}` was marked absent: {reason}");
            return self.reject(conn, reason);
        }
        if session.phase.is_some() {
            return self.reject(conn, format!("client `{client_id}` is already registered"));
        }
        let task = Message::TaskConfig(TaskConfigBody {
            experiment_id: self.spec.experiment_id.clone(),
            client_id: client_id.clone(),
            global_seed: self.spec.global_seed,
            modules: self.spec.modules.clone(),
            pca: self.spec.pca.clone(),
        });
        let now = self.now;
        let s = self.sessions.get_mut(&client_id).expect("checked");
        s.conn = Some(conn);
        s.phase = Some(Phase::Registered);
        self.conns.insert(conn, Some(client_id.clone()));
        self.record("registered", Some(conn), Some(&client_id), None);
        let s = self.sessions.get_mut(&client_id).expect("checked");
        s.phase = Some(Phase::ConfigSent);
        s.since = now;
        self.record("task_config_sent", Some(conn), Some(&client_id), None);
        vec![send(conn, task)]
    }

    fn wrong_phase(&mut self, conn: ConnId, id: &str, kind: &str) -> Vec<Action> {
        let phase = self.sessions[id].phase;
        self.reject(
            conn,
            format!("`{kind}` not expected from `{id}` in phase {phase:?}"),
        )
    }

    fn on_moments(&mut self, conn: ConnId, id: String, body: MomentsUpBody) -> Vec<Action> {
        if self.sessions[&id].phase != Some(Phase::ConfigSent) {
            return self.wrong_phase(conn, &id, "moments_up");
        }
        if let Some(m) = &body.moments {
            let d = m.columns.len();
            if m.sum.len() != d || m.outer.len() != d * (d + 1) / 2 {
                return self.reject(conn, "moments shape does not match their columns".into());
            }
        }
        let count = body.moments.as_ref().map_or(0, |m| m.count);
        self.record(
            "moments_received",
            Some(conn),
            Some(&id),
            Some(format!("count {count}")),
        );
        let s = self.sessions.get_mut(&id).expect("bound");
        s.moments = body.moments;
        s.phase = Some(Phase::MomentsReceived);
        Vec::new()
    }

    fn on_report(&mut self, conn: ConnId, id: String, payload: ClientReportPayload) -> Vec<Action> {
        if self.sessions[&id].phase != Some(Phase::ModelSent) {
            return self.wrong_phase(conn, &id, "report_up");
        }
        if let Err(reason) = payload.check(&id, self.spec.pca.sample_size) {
            return self.reject(conn, format!("invalid report: {reason}"));
        }
        let s = self.sessions.get_mut(&id).expect("bound");
        s.payload = Some(payload);
        s.phase = Some(Phase::ReportReceived);
        self.record("report_received", Some(conn), Some(&id), None);
        let s = self.sessions.get_mut(&id).expect("bound");
        s.phase = Some(Phase::Done);
        self.record("done", Some(conn), Some(&id), None);
        vec![
            send(
                conn,
                Message::Ack(AckBody {
                    of: "report_up".into(),
                }),
            ),
            send(
                conn,
                Message::Shutdown(ShutdownBody {
                    reason: "report received".into(),
                }),
            ),
            Action::Close(conn),
        ]
    }

    fn on_client_error(&mut self, conn: ConnId, id: String, message: String) -> Vec<Action> {
        if self.sessions[&id].settled() {
            return self.reject(conn, format!("session for `{id}` already complete"));
        }
        self.mark_absent(&id, format!("client error: {message}"));
        vec![Action::Close(conn)]
    }

    fn mark_absent(&mut self, id: &str, reason: String) {
        let s = self.sessions.get_mut(id).expect("known client");
        s.absent = Some(reason.clone());
        s.payload = None;
        let conn = s.conn;
        self.record("absent", conn, Some(id), Some(reason));
    }

    /// A connection went away. A client that had not finished is absent.
    pub fn disconnect(&mut self, conn: ConnId, now: f64) -> Vec<Action> {
        self.set_now(now);
        let Some(bound) = self.conns.remove(&conn) else {
            return Vec::new();
        };
        self.record("disconnected", Some(conn), bound.as_deref(), None);
        if let Some(id) = bound {
            if !self.sessions[&id].settled() {
                let phase = self.sessions[&id].phase;
                self.mark_absent(&id, format!("connection closed in phase {phase:?}"));
            }
        }
        self.advance()
    }

    /// Applies deadlines at time `now`.
    pub fn tick(&mut self, now: f64) -> Vec<Action> {
        self.set_now(now);
        let limit = self.spec.deadline_seconds;
        let late: Vec<(String, &'static str, Option<ConnId>)> = self
            .sessions
            .iter()
            .filter_map(|(id, s)| {
                let what = s.awaiting()?;
                (now - s.since > limit).then(|| (id.clone(), what, s.conn))
            })
            .collect();
        let mut out = Vec::new();
        for (id, what, conn) in late {
            self.mark_absent(&id, format!("timed out after {limit} s waiting for {what}"));
            if let Some(c) = conn {
                self.conns.remove(&c);
                out.push(send(c, Message::error("deadline exceeded")));
                out.push(Action::Close(c));
            }
        }
        out.extend(self.advance());
        out
    }

    /// Marks every unsettled client absent, for when no more input can arrive.
    pub fn abandon(&mut self, reason: &str) {
        let open: Vec<String> = self
            .sessions
            .iter()
            .filter(|(_, s)| !s.settled())
            .map(|(id, _)| id.clone())
            .collect();
        for id in open {
            self.mark_absent(&id, reason.to_string());
        }
    }

    /// Fits the global model once every client has sent moments or is
    /// absent, then sends it to every client waiting for it.
    fn advance(&mut self) -> Vec<Action> {
        if self.pca.is_none() {
            let ready = self
                .sessions
                .values()
                .all(|s| s.absent.is_some() || s.phase >= Some(Phase::MomentsReceived));
            if !ready {
                return Vec::new();
            }
            let combined = self.fit_combined();
            let detail = combined
                .unavailable
                .clone()
                .unwrap_or_else(|| "fitted".to_string());
            self.record("pca_resolved", None, None, Some(detail));
            self.pca = Some(combined);
        }
        let combined = self.pca.as_ref().expect("resolved");
        let down = PcaModelDownBody {
            model: combined.model.clone(),
            unavailable: combined.unavailable.clone(),
        };
        let now = self.now;
        let mut out = Vec::new();
        let waiting: Vec<(String, ConnId)> = self
            .sessions
            .iter()
            .filter(|(_, s)| s.absent.is_none() && s.phase == Some(Phase::MomentsReceived))
            .filter_map(|(id, s)| s.conn.map(|c| (id.clone(), c)))
            .collect();
        for (id, conn) in waiting {
            out.push(send(conn, Message::PcaModelDown(down.clone())));
            let s = self.sessions.get_mut(&id).expect("known");
            s.phase = Some(Phase::ModelSent);
            s.since = now;
            self.record("model_sent", Some(conn), Some(&id), None);
        }
        out
    }

    fn fit_combined(&self) -> CombinedPca {
        let mut total: Option<Moments> = None;
        for id in &self.spec.client_ids {
            let s = &self.sessions[id];
            let Some(m) = s.moments.as_ref().filter(|_| s.absent.is_none()) else {
                continue;
            };
            match &mut total {
                None => total = Some(m.clone()),
                Some(t) => {
                    if let Err(e) = t.merge(m) {
                        return CombinedPca {
                            model: None,
                            unavailable: Some(e.to_string()),
                        };
                    }
                }
            }
        }
        let Some(total) = total else {
            return CombinedPca {
                model: None,
                unavailable: Some("no client sent moments".into()),
            };
        };
        match fit_pca(&total) {
            Ok(model) => CombinedPca {
                model: Some(model),
                unavailable: None,
            },
            Err(e) => CombinedPca {
                model: None,
                unavailable: Some(e.to_string()),
            },
        }
    }

    /// Shutdown frames for connections still open after the run.
    pub fn close_all(&mut self) -> Vec<Action> {
        let open: Vec<ConnId> = self.conns.keys().copied().collect();
        let mut out = Vec::new();
        for c in open {
            out.push(send(
                c,
                Message::Shutdown(ShutdownBody {
                    reason: "run finished".into(),
                }),
            ));
            out.push(Action::Close(c));
            self.conns.remove(&c);
        }
        out
    }

    /// Report over every configured client: payloads for finished clients,
    /// absence reasons for the rest.
    pub fn report(&self, generated_at: &str) -> crate::Result<DrReport> {
        let clients = self
            .spec
            .client_ids
            .iter()
            .map(|id| {
                let s = &self.sessions[id];
                match (&s.payload, &s.absent) {
                    (Some(p), None) if s.phase == Some(Phase::Done) => {
                        ClientEntry::reported(p.clone())
                    }
                    (_, Some(reason)) => ClientEntry::absent(id.clone(), reason.clone()),
                    _ => ClientEntry::absent(id.clone(), "no report received"),
                }
            })
            .collect();
        let pca = self.pca.clone().unwrap_or(CombinedPca {
            model: None,
            unavailable: Some("no client sent moments".into()),
        });
        render_report(self.spec.experiment_id.clone(), generated_at, clients, pca)
    }
}
