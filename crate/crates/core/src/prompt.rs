//! Prompt text for each iteration phase and the context sent with it.
//!
//! Only the reply immediately preceding a prompt travels with it. Earlier
//! turns are never resent.

use serde::{Deserialize, Serialize};

use crate::session::{FeatureError, FeatureSpec, Phase};

pub const INTERMEDIATE_PROMPT: &str =
    "Keep the existing tests and run the next iteration of TDD to develop the barely minimal test and production code";

pub const REFACTOR_PROMPT: &str = "Refactor the code.";

const FIRST_PROMPT_LEAD: &str = "Use the Assertion First pattern in TDD and stubs and drivers to develop the first barely minimal test and production code for the feature";

/// Which template a prompt was built from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptKind {
    FirstIteration,
    IntermediateIteration,
    FinalRefactor,
}

impl From<Phase> for PromptKind {
    fn from(phase: Phase) -> Self {
        match phase {
            Phase::First => PromptKind::FirstIteration,
            Phase::Intermediate => PromptKind::IntermediateIteration,
            Phase::Refactor => PromptKind::FinalRefactor,
        }
    }
}

/// What one provider call carries: at most the previous reply and the new prompt.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConversationContext {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub previous_reply: Option<String>,
    pub new_prompt: String,
}

impl ConversationContext {
    pub fn turns(&self) -> usize {
        usize::from(self.previous_reply.is_some()) + 1
    }

    /// Characters across both turns, counted as Unicode scalar values.
    pub fn char_count(&self) -> usize {
        self.previous_reply
            .as_deref()
            .map_or(0, |r| r.chars().count())
            + self.new_prompt.chars().count()
    }
}

/// Fills the first-iteration template. Slots are joined with ", " and inserted verbatim.
pub fn build_first_prompt(feature: &FeatureSpec) -> Result<String, FeatureError> {
    feature.validate()?;
    let names = feature
        .inputs
        .iter()
        .map(|i| i.name.as_str())
        .collect::<Vec<_>>()
        .join(", ");
    let values = feature
        .inputs
        .iter()
        .map(|i| i.value.as_str())
        .collect::<Vec<_>>()
        .join(", ");
    let outputs = feature.expected_outputs.join(", ");
    Ok(format!(
        "{FIRST_PROMPT_LEAD} {} with input {names} and {values} and expected output {outputs}",
        feature.description
    ))
}

pub fn build_intermediate_prompt() -> String {
    INTERMEDIATE_PROMPT.to_string()
}

pub fn build_refactor_prompt() -> String {
    REFACTOR_PROMPT.to_string()
}

pub fn build_prompt(phase: Phase, feature: &FeatureSpec) -> Result<String, FeatureError> {
    match phase {
        Phase::First => build_first_prompt(feature),
        Phase::Intermediate => Ok(build_intermediate_prompt()),
        Phase::Refactor => Ok(build_refactor_prompt()),
    }
}

/// # Panics
///
/// Panics when `prompt` is empty.
pub fn assemble_context(previous_reply: Option<&str>, prompt: &str) -> ConversationContext {
    assert!(!prompt.is_empty(), "a context needs a non-empty prompt");
    ConversationContext {
        previous_reply: previous_reply.map(str::to_owned),
        new_prompt: prompt.to_owned(),
    }
}

/// The prompt resent after a failed attempt: the same prompt, a blank line, then the execution log.
pub fn retry_prompt(prompt: &str, execution_log: &str) -> String {
    format!("{prompt}\n\n{execution_log}")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::session::FeatureInput;

    fn feature() -> FeatureSpec {
        let mut f = FeatureSpec::new("center a word");
        f.inputs.push(FeatureInput::new("width", "10"));
        f.expected_outputs.push("'  ab  '".into());
        f
    }

    #[test]
    fn single_input_slots_fill_in_order() {
        assert_eq!(
            build_first_prompt(&feature()).unwrap(),
            "Use the Assertion First pattern in TDD and stubs and drivers to develop the first \
             barely minimal test and production code for the feature center a word with input \
             width and 10 and expected output '  ab  '"
        );
    }

    #[test]
    fn multiple_inputs_are_comma_joined() {
        let mut f = feature();
        f.inputs.push(FeatureInput::new("word", "\"ab\""));
        f.expected_outputs.push("'x'".into());
        let p = build_first_prompt(&f).unwrap();
        assert!(p.ends_with("with input width, word and 10, \"ab\" and expected output '  ab  ', 'x'"));
    }

    #[test]
    fn empty_description_is_rejected() {
        let mut f = feature();
        f.description.clear();
        assert!(matches!(build_first_prompt(&f), Err(FeatureError::EmptyDescription)));
    }

    #[test]
    fn refactor_prompt_has_eighteen_chars() {
        assert_eq!(build_refactor_prompt().chars().count(), 18);
        assert_eq!(build_refactor_prompt(), build_refactor_prompt());
    }

    #[test]
    fn context_holds_previous_reply_only_when_given() {
        let first = assemble_context(None, "p1");
        assert_eq!(first.turns(), 1);
        let next = assemble_context(Some("r1"), INTERMEDIATE_PROMPT);
        assert_eq!(next.previous_reply.as_deref(), Some("r1"));
        assert_eq!(next.turns(), 2);
    }

    #[test]
    #[should_panic]
    fn empty_prompt_panics() {
        assemble_context(None, "");
    }

    #[test]
    fn retry_prompt_appends_log_after_blank_line() {
        assert_eq!(retry_prompt("Refactor the code.", "FAILED"), "Refactor the code.\n\nFAILED");
    }
}
