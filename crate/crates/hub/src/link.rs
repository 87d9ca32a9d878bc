use std::sync::Arc;

use maskloop_core::sim::{Link, SimError};
use maskloop_core::Message;

use crate::error::HubError;
use crate::row::{IngestReply, SessionMeta};
use crate::store::Hub;

/// Simulated device attached to a hub session in the same process.
pub struct HubLink {
    hub: Arc<Hub>,
    session_id: String,
}

impl HubLink {
    /// Open a session for `device_id` and attach to it.
    pub fn open(hub: Arc<Hub>, device_id: &str) -> Result<Self, HubError> {
        let meta = hub.open_session(device_id)?;
        hub.attach_device(&meta.session_id)?;
        Ok(Self {
            hub,
            session_id: meta.session_id,
        })
    }

    pub fn session_id(&self) -> &str {
        &self.session_id
    }

    pub fn hub(&self) -> &Arc<Hub> {
        &self.hub
    }

    /// Detach and close the session.
    pub fn close(self) -> Result<SessionMeta, HubError> {
        self.hub.detach_device(&self.session_id)?;
        self.hub.close_session(&self.session_id)
    }
}

fn link_err(e: HubError) -> SimError {
    SimError::Link(e.to_string())
}

impl Link for HubLink {
    fn uplink(&mut self, frame: &[u8]) -> Result<(), SimError> {
        for reply in self.hub.ingest(&self.session_id, frame).map_err(link_err)? {
            if let IngestReply::Nack { reason, .. } = reply {
                return Err(SimError::Link(format!("hub rejected frame: {reason:?}")));
            }
        }
        Ok(())
    }

    fn send_command(&mut self, msg: Message) -> Result<(), SimError> {
        self.hub.relay_command(&self.session_id, msg).map(|_| ()).map_err(link_err)
    }

    fn downlink(&mut self) -> Vec<Vec<u8>> {
        self.hub.take_downlink(&self.session_id).unwrap_or_default()
    }
}
