use serde::{Deserialize, Serialize};
use serde_json::Value;

/// Literal used for an empty concept.
pub const NONE_TEXT: &str = "None";

pub const FREEFORM_MARKER: &str = "Final evaluation of the current state:";

/// The five-concept evaluation document. Serialized keys use the canonical
/// concept names.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConceptEvaluation {
    #[serde(rename = "Important state")]
    pub important_states: String,
    #[serde(rename = "Immediate risk")]
    pub immediate_risk: String,
    #[serde(rename = "Future risk")]
    pub future_risk: String,
    #[serde(rename = "Safest path")]
    pub safest_path: String,
    #[serde(rename = "Final evaluation")]
    pub final_evaluation: String,
}

impl ConceptEvaluation {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("string fields always serialize")
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("string fields always serialize")
    }
}

/// True for the literal "None" (any case) or blank text.
pub fn is_none_text(s: &str) -> bool {
    let t = s.trim().trim_end_matches('.').trim();
    t.is_empty() || t.eq_ignore_ascii_case("none")
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ParseError {
    #[error("no JSON object found in response")]
    NoObject,
    #[error("concept '{0}' is missing from the response")]
    MissingConcept(&'static str),
}

const CONCEPT_KEYS: [(&str, &[&str]); 5] = [
    ("Important state", &["important state", "important states"]),
    ("Immediate risk", &["immediate risk", "immediate risks"]),
    ("Future risk", &["future risk", "future risks"]),
    ("Safest path", &["safest path", "safest", "safest paths"]),
    ("Final evaluation", &["final evaluation"]),
];

fn normalize_key(k: &str) -> String {
    k.trim()
        .trim_start_matches(|c: char| c.is_ascii_digit() || c == '.' || c == ' ')
        .split(|c: char| c.is_whitespace() || c == '_' || c == '-')
        .filter(|w| !w.is_empty())
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

fn value_text(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        Value::Null => NONE_TEXT.to_string(),
        Value::Array(items) if items.is_empty() => NONE_TEXT.to_string(),
        Value::Array(items) => items.iter().map(value_text).collect::<Vec<_>>().join("; "),
        other => other.to_string(),
    }
}

fn first_object(text: &str) -> Option<serde_json::Map<String, Value>> {
    text.match_indices('{').find_map(|(i, _)| {
        let mut stream = serde_json::Deserializer::from_str(&text[i..]).into_iter::<Value>();
        match stream.next() {
            Some(Ok(Value::Object(map))) => Some(map),
            _ => None,
        }
    })
}

/// Extracts the first JSON object in `text` and maps its keys onto the five
/// concepts, tolerating common spelling variants. Extra keys are ignored.
pub fn parse_concept_document(text: &str) -> Result<ConceptEvaluation, ParseError> {
    let map = first_object(text).ok_or(ParseError::NoObject)?;
    let mut fields: [Option<String>; 5] = Default::default();
    for (key, value) in &map {
        let k = normalize_key(key);
        if let Some(i) = CONCEPT_KEYS.iter().position(|(_, spellings)| spellings.contains(&k.as_str())) {
            if fields[i].is_none() {
                fields[i] = Some(value_text(value));
            }
        }
    }
    let mut take = |i: usize| fields[i].take().ok_or(ParseError::MissingConcept(CONCEPT_KEYS[i].0));
    Ok(ConceptEvaluation {
        important_states: take(0)?,
        immediate_risk: take(1)?,
        future_risk: take(2)?,
        safest_path: take(3)?,
        final_evaluation: take(4)?,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FreeformEvaluation {
    pub text: String,
    /// The response did not contain the requested opening sentence.
    pub non_conforming: bool,
}

/// Keeps the response from the marker sentence onwards; without the marker the
/// whole response is kept and flagged.
pub fn parse_freeform_evaluation(text: &str) -> FreeformEvaluation {
    match text.find(FREEFORM_MARKER) {
        Some(i) => FreeformEvaluation { text: text[i..].to_string(), non_conforming: false },
        None => FreeformEvaluation { text: text.to_string(), non_conforming: true },
    }
}
