//! Client session: register, receive the task, share moments, receive the
//! global PCA model, run the readiness modules locally and upload the
//! aggregate payload. Remediated data never leaves this function's caller.

use super::frame::{
    Frame, Message, MomentsUpBody, PcaModelDownBody, RegisterBody, ReportUpBody, TaskConfigBody,
};
use super::transport::Transport;
use crate::config::build_modules;
use crate::error::{Error, Result};
use crate::readiness::{run_all_modules, ModuleRegistry, ReadinessOutcome};
use crate::report::{build_payload, local_moments, project_sample, ClientReportPayload};
use crate::seed::derive_seed;
use crate::table::DataTable;

/// Distribution histograms shown per client, at most.
pub const MAX_HISTOGRAM_COLUMNS: usize = 12;

#[derive(Debug)]
pub struct ClientRun {
    pub client_id: String,
    pub outcomes: Vec<ReadinessOutcome>,
    pub payload: ClientReportPayload,
}

fn send<T: Transport>(t: &mut T, message: Message) -> Result<()> {
    t.send(&Frame::new(message).encode()?)
}

fn recv<T: Transport>(t: &mut T, expecting: &str) -> Result<Message> {
    let line = t.recv()?.ok_or_else(|| {
        Error::Protocol(format!(
            "server closed the connection while we waited for {expecting}"
        ))
    })?;
    let frame = Frame::decode(&line)?;
    match frame.message {
        Message::Error(e) => Err(Error::Protocol(format!("server error: {}", e.message))),
        Message::Shutdown(s) if expecting != "shutdown" => {
            Err(Error::Protocol(format!("server shut down: {}", s.reason)))
        }
        m => Ok(m),
    }
}

/// Runs one client session. `load` is called after registration so a
/// client whose data cannot be read still reports the failure.
pub fn run_session<T, F>(
    t: &mut T,
    client_id: &str,
    load: F,
    registry: &ModuleRegistry,
) -> Result<ClientRun>
where
    T: Transport,
    F: FnOnce() -> Result<DataTable>,
{
    send(
        t,
        Message::Register(RegisterBody {
            client_id: client_id.to_string(),
        }),
    )?;
    let task = match recv(t, "task_config")? {
        Message::TaskConfig(task) => task,
        other => {
            return Err(Error::Protocol(format!(
                "expected task_config, got {}",
                other.kind()
            )))
        }
    };
    if task.client_id != client_id {
        return Err(Error::Protocol(format!(
            "task addressed to `{}`",
            task.client_id
        )));
    }
    match local_work(t, client_id, load, registry, &task) {
        Ok(run) => Ok(run),
        Err(e) => {
            // the connection may already be gone; the local error matters more
            let _ = send(t, Message::error(e.to_string()));
            Err(e)
        }
    }
}

fn local_work<T, F>(
    t: &mut T,
    client_id: &str,
    load: F,
    registry: &ModuleRegistry,
    task: &TaskConfigBody,
) -> Result<ClientRun>
where
    T: Transport,
    F: FnOnce() -> Result<DataTable>,
{
    let mut table = load()?;
    if table.meta().client_id != client_id {
        let mut meta = table.meta().clone();
        meta.client_id = client_id.to_string();
        table = table.with_meta(meta)?;
    }
    let modules = build_modules(&task.modules, registry, task.global_seed, client_id)?;
    let features: Vec<String> = if task.pca.feature_columns.is_empty() {
        table
            .feature_columns()
            .iter()
            .map(|c| c.name().to_string())
            .collect()
    } else {
        task.pca.feature_columns.clone()
    };
    let (moments, note) = match local_moments(&table, &features) {
        Ok(m) => (Some(m), None),
        Err(e) => (None, Some(e.to_string())),
    };
    send(t, Message::MomentsUp(MomentsUpBody { moments, note }))?;
    let down: PcaModelDownBody = match recv(t, "pca_model_down")? {
        Message::PcaModelDown(d) => d,
        other => {
            return Err(Error::Protocol(format!(
                "expected pca_model_down, got {}",
                other.kind()
            )))
        }
    };

    let outcomes = if modules.is_empty() {
        Vec::new()
    } else {
        run_all_modules(&table, &modules)?
    };
    let points = down.model.as_ref().and_then(|m| {
        let seed = derive_seed(task.global_seed, &format!("pca-sample/{client_id}"));
        project_sample(&table, m, task.pca.sample_size, seed).ok()
    });
    let histogram_columns: Vec<String> = features
        .iter()
        .filter(|f| table.column(f).is_some_and(|c| c.is_numeric()))
        .take(MAX_HISTOGRAM_COLUMNS)
        .cloned()
        .collect();
    let payload = build_payload(
        &table,
        outcomes.iter().map(|o| o.summary.clone()).collect(),
        &histogram_columns,
        points,
    )?;
    send(
        t,
        Message::ReportUp(ReportUpBody {
            payload: payload.clone(),
        }),
    )?;
    match recv(t, "ack")? {
        Message::Ack(_) => {}
        other => {
            return Err(Error::Protocol(format!(
                "expected ack, got {}",
                other.kind()
            )))
        }
    }
    // a closed connection is as good as a shutdown frame here
    let _ = recv(t, "shutdown");
    Ok(ClientRun {
        client_id: client_id.to_string(),
        outcomes,
        payload,
    })
}
