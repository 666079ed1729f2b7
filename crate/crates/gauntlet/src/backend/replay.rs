//! Transcript replay provider: answers only requests whose content digest
//! was recorded earlier; anything else is a replay miss naming the digest.

use std::collections::HashMap;

use super::{AgentRequest, AgentResponse, Provenance, Provider, TranscriptEntry};
use crate::error::{Error, Result};

pub struct ReplayProvider {
    by_digest: HashMap<String, AgentResponse>,
}

impl ReplayProvider {
    pub fn from_transcript(entries: &[TranscriptEntry]) -> Self {
        let mut by_digest = HashMap::new();
        for entry in entries {
            by_digest.insert(entry.digest.clone(), entry.response.clone());
        }
        ReplayProvider { by_digest }
    }
}

impl Provider for ReplayProvider {
    fn complete(&self, request: &AgentRequest) -> Result<AgentResponse> {
        let digest = request.digest();
        match self.by_digest.get(&digest) {
            Some(recorded) => {
                let mut response = recorded.clone();
                response.provenance = Provenance::Replay;
                response.latency_ms = 0;
                Ok(response)
            }
            None => Err(Error::ReplayMiss { digest }),
        }
    }
}
