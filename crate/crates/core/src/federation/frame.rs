//! Wire frames: one JSON object per line,
//! `{"protocol_version":1,"type":"...","body":{...}}`.

use serde::{Deserialize, Serialize};

use crate::config::{ModuleConfig, PcaConfig};
use crate::error::{Error, Result};
use crate::report::{ClientReportPayload, Moments, PcaModel};

pub const PROTOCOL_VERSION: u32 = 1;
/// Longest accepted line, newline excluded.
pub const MAX_FRAME_BYTES: usize = 16 * 1024 * 1024;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegisterBody {
    pub client_id: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskConfigBody {
    pub experiment_id: String,
    pub client_id: String,
    pub global_seed: u64,
    pub modules: Vec<ModuleConfig>,
    pub pca: PcaConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentsUpBody {
    /// Absent when the client could not compute moments.
    #[serde(default)]
    pub moments: Option<Moments>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PcaModelDownBody {
    #[serde(default)]
    pub model: Option<PcaModel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unavailable: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportUpBody {
    pub payload: ClientReportPayload,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AckBody {
    pub of: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub message: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShutdownBody {
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "body", rename_all = "snake_case")]
pub enum Message {
    Register(RegisterBody),
    TaskConfig(TaskConfigBody),
    MomentsUp(MomentsUpBody),
    PcaModelDown(PcaModelDownBody),
    ReportUp(ReportUpBody),
    Ack(AckBody),
    Error(ErrorBody),
    Shutdown(ShutdownBody),
}

impl Message {
    pub fn kind(&self) -> &'static str {
        match self {
            Message::Register(_) => "register",
            Message::TaskConfig(_) => "task_config",
            Message::MomentsUp(_) => "moments_up",
            Message::PcaModelDown(_) => "pca_model_down",
            Message::ReportUp(_) => "report_up",
            Message::Ack(_) => "ack",
            Message::Error(_) => "error",
            Message::Shutdown(_) => "shutdown",
        }
    }

    pub fn error(message: impl Into<String>) -> Message {
        Message::Error(ErrorBody {
            message: message.into(),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub protocol_version: u32,
    #[serde(flatten)]
    pub message: Message,
}

impl Frame {
    pub fn new(message: Message) -> Frame {
        Frame {
            protocol_version: PROTOCOL_VERSION,
            message,
        }
    }

    /// Serialized line without the trailing newline.
    pub fn encode(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn decode(line: &str) -> Result<Frame> {
        if line.len() > MAX_FRAME_BYTES {
            return Err(Error::Protocol(format!(
                "frame of {} bytes exceeds the limit",
                line.len()
            )));
        }
        serde_json::from_str(line).map_err(|e| Error::Protocol(format!("malformed frame: {e}")))
    }
}
