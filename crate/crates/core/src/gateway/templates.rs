//! Versioned prompt templates with declared slots.
//!
//! A template file is a small header (`key: value` lines) followed by `---`
//! and the prompt body. `{{slot}}` placeholders in the body are filled from a
//! [`Payload`]; the payload's keys must equal the declared slots exactly.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::ledger::Stage;
use super::GatewayError;

pub mod ids {
    pub const ATOMIC_EXTRACTION: &str = "atomic_extraction";
    pub const VALIDITY_FILTER: &str = "validity_filter";
    pub const RANK_ATOM_VALIDITY: &str = "rank_atom_validity";
    pub const RANK_ATOM_COMPLETENESS: &str = "rank_atom_completeness";
    pub const RANK_ATOM_SPECIFICITY: &str = "rank_atom_specificity";
    pub const RANK_ATOM_CLARITY: &str = "rank_atom_clarity";
    pub const RANK_ATOM_QUESTIONABILITY: &str = "rank_atom_questionability";
    pub const RANK_VANILLA: &str = "rank_vanilla";
    pub const RANK_COMBINED: &str = "rank_combined";
    pub const REDUNDANCY_JUDGE: &str = "redundancy_judge";
    pub const SELECT_CONNECTED: &str = "select_connected";
    pub const QUESTION_GENERATION: &str = "question_generation";
    pub const FILTER_CONTEXTUAL_INDEPENDENCE: &str = "filter_contextual_independence";
    pub const FILTER_ANSWER_EXCLUSION: &str = "filter_answer_exclusion";
    pub const FILTER_INFORMATION_EQUIVALENCE: &str = "filter_information_equivalence";
    pub const FILTER_QUESTION_CLARITY: &str = "filter_question_clarity";
    pub const FILTER_ANSWERABILITY: &str = "filter_answerability";
    pub const RANK_QUESTION_CONNECTIVITY: &str = "rank_question_connectivity";
    pub const RANK_QUESTION_FLUENCY: &str = "rank_question_fluency";
    pub const RANK_QUESTION_ESSENTIALITY: &str = "rank_question_essentiality";
    pub const RANK_QUESTION_VALIDITY: &str = "rank_question_validity";
    pub const E2E_ANSWER: &str = "e2e_answer";
    pub const E2E_JUDGE: &str = "e2e_judge";
}

const BUILTIN: &[(&str, &str)] = &[
    ("atomic_extraction", include_str!("../../templates/atomic_extraction.tmpl")),
    ("validity_filter", include_str!("../../templates/validity_filter.tmpl")),
    ("rank_atom_validity", include_str!("../../templates/rank_atom_validity.tmpl")),
    ("rank_atom_completeness", include_str!("../../templates/rank_atom_completeness.tmpl")),
    ("rank_atom_specificity", include_str!("../../templates/rank_atom_specificity.tmpl")),
    ("rank_atom_clarity", include_str!("../../templates/rank_atom_clarity.tmpl")),
    ("rank_atom_questionability", include_str!("../../templates/rank_atom_questionability.tmpl")),
    ("rank_vanilla", include_str!("../../templates/rank_vanilla.tmpl")),
    ("rank_combined", include_str!("../../templates/rank_combined.tmpl")),
    ("redundancy_judge", include_str!("../../templates/redundancy_judge.tmpl")),
    ("select_connected", include_str!("../../templates/select_connected.tmpl")),
    ("question_generation", include_str!("../../templates/question_generation.tmpl")),
    ("filter_contextual_independence", include_str!("../../templates/filter_contextual_independence.tmpl")),
    ("filter_answer_exclusion", include_str!("../../templates/filter_answer_exclusion.tmpl")),
    ("filter_information_equivalence", include_str!("../../templates/filter_information_equivalence.tmpl")),
    ("filter_question_clarity", include_str!("../../templates/filter_question_clarity.tmpl")),
    ("filter_answerability", include_str!("../../templates/filter_answerability.tmpl")),
    ("rank_question_connectivity", include_str!("../../templates/rank_question_connectivity.tmpl")),
    ("rank_question_fluency", include_str!("../../templates/rank_question_fluency.tmpl")),
    ("rank_question_essentiality", include_str!("../../templates/rank_question_essentiality.tmpl")),
    ("rank_question_validity", include_str!("../../templates/rank_question_validity.tmpl")),
    ("e2e_answer", include_str!("../../templates/e2e_answer.tmpl")),
    ("e2e_judge", include_str!("../../templates/e2e_judge.tmpl")),
];

/// Which configured model serves a template.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelRole {
    Judge,
    Generator,
    Answerer,
}

impl FromStr for ModelRole {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "judge" => Ok(Self::Judge),
            "generator" => Ok(Self::Generator),
            "answerer" => Ok(Self::Answerer),
            other => Err(format!("unknown role {other:?}")),
        }
    }
}

/// Structured template input. Strings render verbatim; arrays render one
/// element per line (`{"id","text"}` objects as `[id] text`).
pub type Payload = BTreeMap<String, Value>;

#[derive(Debug, Clone, PartialEq)]
pub struct Template {
    pub id: String,
    pub version: u32,
    pub stage: Stage,
    pub role: ModelRole,
    pub slots: Vec<String>,
    pub body: String,
}

impl Template {
    pub fn parse(source: &str) -> Result<Self, String> {
        let (header, body) = source.split_once("\n---\n").ok_or("missing `---` separator")?;
        let mut fields = BTreeMap::new();
        for line in header.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line.split_once(':').ok_or_else(|| format!("bad header line {line:?}"))?;
            fields.insert(k.trim().to_string(), v.trim().to_string());
        }
        let get = |k: &str| fields.get(k).cloned().ok_or_else(|| format!("missing header field {k:?}"));
        let slots: Vec<String> = get("slots")?
            .split(',')
            .map(|s| s.trim().to_string())
            .filter(|s| !s.is_empty())
            .collect();
        let body = body.trim_end().to_string();
        for slot in &slots {
            if !body.contains(&format!("{{{{{slot}}}}}")) {
                return Err(format!("declared slot {slot:?} not used in body"));
            }
        }
        Ok(Self {
            id: get("id")?,
            version: get("version")?.parse().map_err(|e| format!("bad version: {e}"))?,
            stage: get("stage")?.parse()?,
            role: get("role")?.parse()?,
            slots,
            body,
        })
    }

    pub fn render(&self, payload: &Payload) -> Result<String, GatewayError> {
        let got: Vec<String> = payload.keys().cloned().collect();
        let mut expected = self.slots.clone();
        expected.sort();
        if got != expected {
            return Err(GatewayError::SlotMismatch {
                template: self.id.clone(),
                expected,
                got,
            });
        }
        let mut out = self.body.clone();
        for (slot, value) in payload {
            out = out.replace(&format!("{{{{{slot}}}}}"), &render_value(value));
        }
        Ok(out)
    }
}

fn render_value(value: &Value) -> String {
    match value {
        Value::String(s) => s.clone(),
        Value::Array(items) => items
            .iter()
            .map(|item| match item {
                Value::Object(o) => {
                    let id = o.get("id").and_then(Value::as_str).unwrap_or("?");
                    let text = o.get("text").and_then(Value::as_str).unwrap_or("");
                    format!("[{id}] {text}")
                }
                Value::String(s) => format!("- {s}"),
                other => format!("- {other}"),
            })
            .collect::<Vec<_>>()
            .join("\n"),
        other => other.to_string(),
    }
}

#[derive(Debug, Clone)]
pub struct TemplateRegistry {
    templates: BTreeMap<String, Template>,
}

impl TemplateRegistry {
    pub fn builtin() -> Self {
        let templates = BUILTIN
            .iter()
            .map(|(id, src)| {
                let t = Template::parse(src).unwrap_or_else(|e| panic!("builtin template {id} is malformed: {e}"));
                assert_eq!(&t.id, id, "builtin template id mismatch");
                (t.id.clone(), t)
            })
            .collect();
        Self { templates }
    }

    /// Builtins overridden by any `*.tmpl` files in `dir`.
    pub fn with_overrides(dir: &Path) -> Result<Self, GatewayError> {
        let mut reg = Self::builtin();
        let entries = fs::read_dir(dir).map_err(|e| GatewayError::Config(format!("{}: {e}", dir.display())))?;
        let mut paths: Vec<_> = entries.filter_map(Result::ok).map(|e| e.path()).collect();
        paths.sort();
        for path in paths.into_iter().filter(|p| p.extension().is_some_and(|e| e == "tmpl")) {
            let src = fs::read_to_string(&path).map_err(|e| GatewayError::Config(format!("{}: {e}", path.display())))?;
            let t = Template::parse(&src).map_err(|e| GatewayError::Config(format!("{}: {e}", path.display())))?;
            reg.templates.insert(t.id.clone(), t);
        }
        Ok(reg)
    }

    pub fn get(&self, id: &str) -> Result<&Template, GatewayError> {
        self.templates.get(id).ok_or_else(|| GatewayError::UnknownTemplate(id.to_string()))
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.templates.keys().map(String::as_str)
    }

    /// `id@version` for every template, for run manifests.
    pub fn versions(&self) -> BTreeMap<String, u32> {
        self.templates.values().map(|t| (t.id.clone(), t.version)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn all_builtins_parse() {
        let reg = TemplateRegistry::builtin();
        assert_eq!(reg.ids().count(), BUILTIN.len());
        assert_eq!(reg.get(ids::VALIDITY_FILTER).unwrap().slots, vec!["atom"]);
        assert_eq!(reg.get(ids::REDUNDANCY_JUDGE).unwrap().stage, Stage::RedundancyTracking);
    }

    #[test]
    fn render_fills_slots_and_lists() {
        let reg = TemplateRegistry::builtin();
        let t = reg.get(ids::REDUNDANCY_JUDGE).unwrap();
        let payload: Payload = [
            ("target".to_string(), json!("A fact.")),
            ("candidates".to_string(), json!([{"id": "C1", "text": "Other fact."}])),
        ]
        .into();
        let prompt = t.render(&payload).unwrap();
        assert!(prompt.contains("A fact."));
        assert!(prompt.contains("[C1] Other fact."));
        assert!(!prompt.contains("{{"));
    }

    #[test]
    fn slot_mismatch_is_an_error() {
        let reg = TemplateRegistry::builtin();
        let t = reg.get(ids::VALIDITY_FILTER).unwrap();
        let payload: Payload = [("text".to_string(), json!("x"))].into();
        assert!(matches!(t.render(&payload), Err(GatewayError::SlotMismatch { .. })));
    }

    #[test]
    fn unknown_template() {
        assert!(matches!(TemplateRegistry::builtin().get("nope"), Err(GatewayError::UnknownTemplate(_))));
    }

    #[test]
    fn parse_rejects_unused_slot() {
        let src = "id: x\nversion: 1\nstage: e2e\nrole: judge\nslots: a, b\n---\nonly {{a}}\n";
        assert!(Template::parse(src).unwrap_err().contains("\"b\""));
    }
}
