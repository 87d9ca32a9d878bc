use maskloop_core::MessageKind;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HubError {
    #[error("unknown session {0}")]
    UnknownSession(String),
    #[error("session {0} is closed")]
    SessionClosed(String),
    #[error("session {0} is still live")]
    SessionLive(String),
    #[error("no device attached to session {0}")]
    DeviceUnreachable(String),
    #[error("{0:?} cannot be relayed to a device")]
    NotACommand(MessageKind),
    #[error("bad request: {0}")]
    BadRequest(String),
    #[error("corrupt store at {path}: {message}")]
    Corrupt { path: String, message: String },
    #[error("i/o on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl HubError {
    pub(crate) fn io(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> HubError + '_ {
        move |source| HubError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}
