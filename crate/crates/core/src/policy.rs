//! Augmentation policies and their instruction templates.
//!
//! A policy names one way of rewriting a prompt (make it harder, shorter,
//! misspell it, ...). Each policy carries an instruction template that a
//! text-generation model can follow; the template must reference the original
//! prompt exactly once through the `{prompt}` placeholder.

use alloc::borrow::ToOwned;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;
use serde::{Deserialize, Serialize};

/// Placeholder that marks where the original prompt is substituted into an
/// instruction template.
pub const PROMPT_PLACEHOLDER: &str = "{prompt}";

/// The seven prompt augmentation policies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyKind {
    /// Rewrite the prompt so it is harder to understand.
    Hard,
    /// Rewrite the prompt so it is easier to understand.
    Easy,
    /// Shorten the prompt.
    Short,
    /// Lengthen the prompt.
    Long,
    /// Rewrite the prompt with synonyms.
    Rewrite,
    /// Introduce up to two spelling errors.
    Spell,
    /// Append words at the beginning or end.
    Append,
}

impl PolicyKind {
    /// All policies, in canonical report order.
    pub const ALL: [PolicyKind; 7] = [
        PolicyKind::Hard,
        PolicyKind::Easy,
        PolicyKind::Short,
        PolicyKind::Long,
        PolicyKind::Rewrite,
        PolicyKind::Spell,
        PolicyKind::Append,
    ];

    /// Lowercase wire name, identical to the serialized form.
    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::Hard => "hard",
            PolicyKind::Easy => "easy",
            PolicyKind::Short => "short",
            PolicyKind::Long => "long",
            PolicyKind::Rewrite => "rewrite",
            PolicyKind::Spell => "spell",
            PolicyKind::Append => "append",
        }
    }

    /// Capitalized name used for report table headers.
    pub fn header(self) -> &'static str {
        match self {
            PolicyKind::Hard => "Hard",
            PolicyKind::Easy => "Easy",
            PolicyKind::Short => "Short",
            PolicyKind::Long => "Long",
            PolicyKind::Rewrite => "Rewrite",
            PolicyKind::Spell => "Spell",
            PolicyKind::Append => "Append",
        }
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Error for unknown policy names.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown policy `{0}`; expected one of hard, easy, short, long, rewrite, spell, append")]
pub struct PolicyParseError(pub String);

impl FromStr for PolicyKind {
    type Err = PolicyParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PolicyKind::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| PolicyParseError(s.to_owned()))
    }
}

/// Template problems.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TemplateError {
    #[error("template for `{policy}` must contain `{{prompt}}` exactly once, found {count}")]
    PlaceholderCount { policy: PolicyKind, count: usize },
    #[error("prompt must not be empty")]
    EmptyPrompt,
}

/// An instruction template for one policy.
///
/// The instruction text is validated on construction and on deserialization,
/// so a held `PolicyTemplate` always contains the placeholder exactly once.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawTemplate")]
pub struct PolicyTemplate {
    policy: PolicyKind,
    instruction_text: String,
}

#[derive(Deserialize)]
struct RawTemplate {
    policy: PolicyKind,
    instruction_text: String,
}

impl TryFrom<RawTemplate> for PolicyTemplate {
    type Error = TemplateError;

    fn try_from(raw: RawTemplate) -> Result<Self, Self::Error> {
        PolicyTemplate::new(raw.policy, raw.instruction_text)
    }
}

impl PolicyTemplate {
    /// Builds a template, rejecting text that does not mention the prompt
    /// placeholder exactly once.
    pub fn new(policy: PolicyKind, instruction_text: impl Into<String>) -> Result<Self, TemplateError> {
        let instruction_text = instruction_text.into();
        let count = instruction_text.matches(PROMPT_PLACEHOLDER).count();
        if count != 1 {
            return Err(TemplateError::PlaceholderCount { policy, count });
        }
        Ok(PolicyTemplate { policy, instruction_text })
    }

    pub fn policy(&self) -> PolicyKind {
        self.policy
    }

    pub fn instruction_text(&self) -> &str {
        &self.instruction_text
    }

    /// Substitutes the prompt into the template.
    pub fn render(&self, prompt: &str) -> Result<String, TemplateError> {
        if prompt.is_empty() {
            return Err(TemplateError::EmptyPrompt);
        }
        Ok(self.instruction_text.replacen(PROMPT_PLACEHOLDER, prompt, 1))
    }
}

fn default_instruction(policy: PolicyKind) -> &'static str {
    match policy {
        PolicyKind::Hard => {
            "Rewrite this question so it is harder to understand, without changing its meaning. Reply with the rewritten question only: \"{prompt}\""
        }
        PolicyKind::Easy => {
            "Rewrite this question so it is easier to understand, without changing its meaning. Reply with the rewritten question only: \"{prompt}\""
        }
        PolicyKind::Short => {
            "Shorten this question without changing its meaning. Reply with the shortened question only: \"{prompt}\""
        }
        PolicyKind::Long => {
            "Lengthen this question without changing its meaning. Reply with the lengthened question only: \"{prompt}\""
        }
        PolicyKind::Rewrite => {
            "Rewrite this question by replacing some of its words with synonyms, without changing its meaning. Reply with the rewritten question only: \"{prompt}\""
        }
        PolicyKind::Spell => {
            "Introduce spelling errors (up to two) into this question. Reply with the misspelled question only: \"{prompt}\""
        }
        PolicyKind::Append => {
            "Append some words at the beginning or end of this question without changing its meaning. Reply with the modified question only: \"{prompt}\""
        }
    }
}

/// A full set of templates, one per policy.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<PolicyTemplate>", into = "Vec<PolicyTemplate>")]
pub struct TemplateSet {
    templates: [PolicyTemplate; 7],
}

impl Default for TemplateSet {
    fn default() -> Self {
        let templates = PolicyKind::ALL.map(|p| {
            PolicyTemplate::new(p, default_instruction(p)).expect("default templates are valid")
        });
        TemplateSet { templates }
    }
}

impl TemplateSet {
    pub fn get(&self, policy: PolicyKind) -> &PolicyTemplate {
        &self.templates[PolicyKind::ALL.iter().position(|p| *p == policy).expect("all policies present")]
    }

    /// Replaces the template for the given policy.
    pub fn set(&mut self, template: PolicyTemplate) {
        let idx = PolicyKind::ALL
            .iter()
            .position(|p| *p == template.policy())
            .expect("all policies present");
        self.templates[idx] = template;
    }

    pub fn iter(&self) -> impl Iterator<Item = &PolicyTemplate> {
        self.templates.iter()
    }
}

/// Error for template set documents that are not exactly one template per
/// policy.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("template set must define each policy exactly once; `{0}` is missing or repeated")]
pub struct TemplateSetError(pub PolicyKind);

impl TryFrom<Vec<PolicyTemplate>> for TemplateSet {
    type Error = TemplateSetError;

    fn try_from(list: Vec<PolicyTemplate>) -> Result<Self, Self::Error> {
        let mut set = TemplateSet::default();
        for policy in PolicyKind::ALL {
            let mut matches = list.iter().filter(|t| t.policy() == policy);
            let first = matches.next().ok_or(TemplateSetError(policy))?;
            if matches.next().is_some() {
                return Err(TemplateSetError(policy));
            }
            set.set(first.clone());
        }
        Ok(set)
    }
}

impl From<TemplateSet> for Vec<PolicyTemplate> {
    fn from(set: TemplateSet) -> Self {
        set.templates.to_vec()
    }
}

/// Renders the default instruction template for a policy.
pub fn render_policy_template(policy: PolicyKind, prompt: &str) -> Result<String, TemplateError> {
    PolicyTemplate::new(policy, default_instruction(policy))
        .expect("default templates are valid")
        .render(prompt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;
    use alloc::vec;

    #[test]
    fn policy_names_round_trip() {
        for policy in PolicyKind::ALL {
            let name = policy.to_string();
            assert_eq!(name, name.to_lowercase());
            assert_eq!(name.parse::<PolicyKind>().unwrap(), policy);
        }
        assert!("harder".parse::<PolicyKind>().is_err());
        assert!("Hard".parse::<PolicyKind>().is_err());
    }

    #[test]
    fn serde_names_match_display_names() {
        for policy in PolicyKind::ALL {
            let json = serde_json::to_string(&policy).unwrap();
            assert_eq!(json, alloc::format!("\"{policy}\""));
            assert_eq!(serde_json::from_str::<PolicyKind>(&json).unwrap(), policy);
        }
    }

    #[test]
    fn spell_template_quotes_prompt_and_states_budget() {
        let rendered = render_policy_template(PolicyKind::Spell, "Is there a dog?").unwrap();
        assert_eq!(rendered.matches("Is there a dog?").count(), 1);
        assert!(rendered.contains("spelling errors (up to two)"));
    }

    #[test]
    fn append_template_mentions_both_ends() {
        let rendered = render_policy_template(PolicyKind::Append, "Is there a dog?").unwrap();
        assert_eq!(rendered.matches("Is there a dog?").count(), 1);
        assert!(rendered.contains("beginning or end"));
    }

    #[test]
    fn every_default_template_mentions_prompt_exactly_once() {
        let prompt = "How many sheep are visible?";
        for policy in PolicyKind::ALL {
            let rendered = render_policy_template(policy, prompt).unwrap();
            assert_eq!(rendered.matches(prompt).count(), 1, "{policy}");
            assert!(!rendered.contains(PROMPT_PLACEHOLDER), "{policy}");
        }
    }

    #[test]
    fn empty_prompt_is_rejected() {
        assert_eq!(
            render_policy_template(PolicyKind::Hard, ""),
            Err(TemplateError::EmptyPrompt)
        );
    }

    #[test]
    fn template_requires_placeholder_exactly_once() {
        let err = PolicyTemplate::new(PolicyKind::Long, "no placeholder here").unwrap_err();
        assert_eq!(err, TemplateError::PlaceholderCount { policy: PolicyKind::Long, count: 0 });
        let err = PolicyTemplate::new(PolicyKind::Long, "{prompt} and {prompt}").unwrap_err();
        assert_eq!(err, TemplateError::PlaceholderCount { policy: PolicyKind::Long, count: 2 });
    }

    #[test]
    fn template_set_overrides_one_policy() {
        let mut set = TemplateSet::default();
        let custom = PolicyTemplate::new(PolicyKind::Spell, "Misspell: {prompt}").unwrap();
        set.set(custom.clone());
        assert_eq!(set.get(PolicyKind::Spell), &custom);
        assert_eq!(
            set.get(PolicyKind::Hard).instruction_text(),
            default_instruction(PolicyKind::Hard)
        );
    }

    #[test]
    fn template_set_deserialization_requires_all_policies_once() {
        let one = PolicyTemplate::new(PolicyKind::Spell, "Misspell: {prompt}").unwrap();
        let err = TemplateSet::try_from(vec![one.clone()]).unwrap_err();
        assert_eq!(err, TemplateSetError(PolicyKind::Hard));
        let mut all: Vec<PolicyTemplate> = TemplateSet::default().into();
        all.push(one);
        assert_eq!(TemplateSet::try_from(all).unwrap_err(), TemplateSetError(PolicyKind::Spell));
    }

    #[test]
    fn template_rejects_unvalidated_json() {
        let err = serde_json::from_str::<PolicyTemplate>(
            r#"{"policy":"hard","instruction_text":"no placeholder"}"#,
        )
        .unwrap_err();
        assert!(err.to_string().contains("exactly once"));
    }
}
