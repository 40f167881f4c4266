use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::prompt::ConversationContext;

/// One completed call: what was sent and what came back.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exchange {
    pub context: ConversationContext,
    pub reply: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixtureStep {
    pub step: usize,
    pub context_digest: String,
    /// Kept for humans reading the fixture and for mismatch messages.
    pub prompt: String,
    pub reply: String,
}

/// A recorded sequence of replies, looked up by the digest of the context that produced them.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Fixture {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    #[serde(default, rename = "step")]
    pub steps: Vec<FixtureStep>,
}

#[derive(Debug, Error)]
pub enum FixtureError {
    #[error("fixture has no steps")]
    Empty,
    #[error("step {0} appears more than once")]
    DuplicateStep(usize),
    #[error("cannot read fixture {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("fixture is not valid TOML: {0}")]
    Parse(String),
    #[error("fixture cannot be written as TOML: {0}")]
    Serialize(String),
}

/// The replay fixture has no reply for this context. `step` is the first
/// step whose recorded context differs from what the session sent.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("replay diverged at step {step}: expected prompt {expected_prompt:?}, found {found_prompt:?}")]
pub struct ReplayMismatch {
    pub step: usize,
    pub expected_prompt: Option<String>,
    pub found_prompt: String,
}

/// Hex sha256 of the context's canonical JSON.
pub fn context_digest(context: &ConversationContext) -> String {
    let json = serde_json::to_vec(context).expect("context serializes");
    hex::encode(Sha256::digest(json))
}

pub fn record_fixture(exchanges: &[Exchange]) -> Result<Fixture, FixtureError> {
    if exchanges.is_empty() {
        return Err(FixtureError::Empty);
    }
    let steps = exchanges
        .iter()
        .enumerate()
        .map(|(i, ex)| FixtureStep {
            step: i + 1,
            context_digest: context_digest(&ex.context),
            prompt: ex.context.new_prompt.clone(),
            reply: ex.reply.clone(),
        })
        .collect();
    Ok(Fixture { model: None, steps })
}

impl Fixture {
    pub fn from_toml_str(text: &str) -> Result<Self, FixtureError> {
        let fixture: Fixture = toml::from_str(text).map_err(|e| FixtureError::Parse(e.to_string()))?;
        fixture.check()?;
        Ok(fixture)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, FixtureError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| FixtureError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String, FixtureError> {
        toml::to_string(self).map_err(|e| FixtureError::Serialize(e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), FixtureError> {
        let path = path.as_ref();
        let text = self.to_toml_string()?;
        std::fs::write(path, text).map_err(|source| FixtureError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    fn check(&self) -> Result<(), FixtureError> {
        if self.steps.is_empty() {
            return Err(FixtureError::Empty);
        }
        let mut seen = BTreeSet::new();
        for s in &self.steps {
            if !seen.insert(s.step) {
                return Err(FixtureError::DuplicateStep(s.step));
            }
        }
        Ok(())
    }

    /// The first step recorded for exactly this context.
    pub fn lookup(&self, context: &ConversationContext) -> Result<&FixtureStep, ReplayMismatch> {
        let digest = context_digest(context);
        if let Some(step) = self.steps.iter().find(|s| s.context_digest == digest) {
            return Ok(step);
        }
        let step = match &context.previous_reply {
            None => 1,
            Some(prev) => self
                .steps
                .iter()
                .position(|s| &s.reply == prev)
                .map_or(self.steps.len() + 1, |i| i + 2),
        };
        let expected_prompt = self.steps.iter().find(|s| s.step == step).map(|s| s.prompt.clone());
        Err(ReplayMismatch {
            step,
            expected_prompt,
            found_prompt: context.new_prompt.clone(),
        })
    }
}
