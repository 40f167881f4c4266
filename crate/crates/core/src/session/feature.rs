use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// One named input of the feature, with its literal value kept as written.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureInput {
    pub name: String,
    pub value: String,
}

impl FeatureInput {
    pub fn new(name: impl Into<String>, value: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            value: value.into(),
        }
    }
}

/// The feature under development.
///
/// `description`, `inputs` and `expected_outputs` fill the first-iteration
/// prompt. `target_class_hint` names the class the feature should produce and
/// drives the default workspace file names; `target_functions` lists the
/// functions the finished feature must expose and seeds the completion
/// checklist.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub description: String,
    #[serde(default)]
    pub inputs: Vec<FeatureInput>,
    #[serde(default)]
    pub expected_outputs: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_class_hint: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub target_functions: Vec<String>,
}

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("feature description is empty")]
    EmptyDescription,
    #[error("feature input #{position} has an empty name")]
    UnnamedInput { position: usize },
    #[error("cannot read feature file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("feature file is not valid: {0}")]
    Parse(#[from] toml::de::Error),
}

impl FeatureSpec {
    pub fn new(description: impl Into<String>) -> Self {
        Self {
            description: description.into(),
            inputs: Vec::new(),
            expected_outputs: Vec::new(),
            target_class_hint: None,
            target_functions: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<(), FeatureError> {
        if self.description.trim().is_empty() {
            return Err(FeatureError::EmptyDescription);
        }
        if let Some(position) = self.inputs.iter().position(|i| i.name.trim().is_empty()) {
            return Err(FeatureError::UnnamedInput {
                position: position + 1,
            });
        }
        Ok(())
    }

    /// Parses and validates a feature file (TOML).
    pub fn from_toml_str(text: &str) -> Result<Self, FeatureError> {
        let spec: FeatureSpec = toml::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self, FeatureError> {
        let text = std::fs::read_to_string(path).map_err(|source| FeatureError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("feature spec always serializes")
    }
}

/// Converts `TextFormatter` or `HTTPServer` into `text_formatter` / `http_server`.
pub fn snake_case(identifier: &str) -> String {
    let chars: Vec<char> = identifier.chars().collect();
    let mut out = String::with_capacity(identifier.len() + 4);
    for (i, &c) in chars.iter().enumerate() {
        if c.is_uppercase() {
            let prev = i.checked_sub(1).map(|p| chars[p]);
            let next = chars.get(i + 1).copied();
            let boundary = match prev {
                Some(p) if p.is_lowercase() || p.is_ascii_digit() => true,
                Some(p) if p.is_uppercase() => next.is_some_and(|n| n.is_lowercase()),
                _ => false,
            };
            if boundary && !out.ends_with('_') {
                out.push('_');
            }
            out.extend(c.to_lowercase());
        } else if c.is_alphanumeric() || c == '_' {
            out.push(c);
        } else if !out.is_empty() && !out.ends_with('_') {
            out.push('_');
        }
    }
    out.trim_matches('_').to_string()
}
