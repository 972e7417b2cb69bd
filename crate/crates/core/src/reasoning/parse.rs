//! Extraction of the structured reasoning object from free-form model output.

use std::collections::BTreeMap;

use serde_json::{Map, Value};

use super::{AestheticProfile, AttributeThought, ParseError};
use crate::attribute::AestheticAttribute;

/// The fields pulled out of a response, before provenance is attached.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedReasoning {
    pub identification_summary: String,
    pub target_description: String,
    pub profile: AestheticProfile,
}

/// Byte ranges of balanced `{...}` spans in `text`, in order of their opening
/// brace. String literals (with escapes) are skipped when matching braces.
fn balanced_objects(text: &str) -> impl Iterator<Item = &str> {
    let bytes = text.as_bytes();
    let mut start = 0usize;
    std::iter::from_fn(move || {
        while start < bytes.len() {
            let open = start + bytes[start..].iter().position(|&b| b == b'{')?;
            start = open + 1;
            let mut depth = 0usize;
            let mut in_string = false;
            let mut escaped = false;
            for (off, &b) in bytes[open..].iter().enumerate() {
                if in_string {
                    match b {
                        _ if escaped => escaped = false,
                        b'\\' => escaped = true,
                        b'"' => in_string = false,
                        _ => {}
                    }
                    continue;
                }
                match b {
                    b'"' => in_string = true,
                    b'{' => depth += 1,
                    b'}' => {
                        depth -= 1;
                        if depth == 0 {
                            let end = open + off + 1;
                            start = end;
                            return Some(&text[open..end]);
                        }
                    }
                    _ => {}
                }
            }
        }
        None
    })
}

/// First balanced top-level JSON object in `raw`. Prose, code fences and
/// trailing text around it are ignored.
pub fn extract_object(raw: &str) -> Option<Map<String, Value>> {
    balanced_objects(raw).find_map(|span| match serde_json::from_str::<Value>(span) {
        Ok(Value::Object(map)) => Some(map),
        _ => None,
    })
}

fn text_of(v: &Value) -> Option<String> {
    match v {
        Value::String(s) => Some(s.trim().to_string()),
        Value::Null => None,
        Value::Array(items) => {
            let parts: Vec<String> = items.iter().filter_map(text_of).filter(|s| !s.is_empty()).collect();
            Some(parts.join(" "))
        }
        other => Some(other.to_string()),
    }
}

fn field<'a>(obj: &'a Map<String, Value>, names: &[&str]) -> Option<&'a Value> {
    names.iter().find_map(|n| {
        obj.iter().find(|(k, _)| k.trim().eq_ignore_ascii_case(n)).map(|(_, v)| v)
    })
}

fn thought_of(v: &Value) -> Option<AttributeThought> {
    let (keyword, reason) = match v {
        Value::Object(o) => (
            field(o, &["keyword", "key_word", "value"]).and_then(text_of).unwrap_or_default(),
            field(o, &["reason", "rationale", "explanation"]).and_then(text_of).unwrap_or_default(),
        ),
        Value::String(s) => match s.split_once(':') {
            Some((k, r)) => (k.trim().to_string(), r.trim().to_string()),
            None => (s.trim().to_string(), String::new()),
        },
        _ => return None,
    };
    AttributeThought::new(keyword, reason)
}

fn parse_attributes(v: &Value) -> BTreeMap<AestheticAttribute, AttributeThought> {
    let mut out = BTreeMap::new();
    let mut add = |name: &str, value: &Value| match name.parse::<AestheticAttribute>() {
        Ok(attr) => {
            if let Some(t) = thought_of(value) {
                out.entry(attr).or_insert(t);
            }
        }
        Err(_) => tracing::debug!(key = name, "dropping unknown attribute"),
    };
    match v {
        Value::Object(map) => {
            for (k, val) in map {
                add(k, val);
            }
        }
        // [{"attribute": "color", "keyword": ..., "reason": ...}, ...]
        Value::Array(items) => {
            for item in items {
                if let Some(name) = item.as_object().and_then(|o| field(o, &["attribute", "name"])).and_then(Value::as_str) {
                    add(name, item);
                }
            }
        }
        _ => {}
    }
    out
}

/// Parses a raw model response.
///
/// Only the target description is mandatory; attributes that are absent or
/// have an empty keyword are recorded as incomplete.
pub fn parse_reasoning(raw: &str) -> Result<ParsedReasoning, ParseError> {
    if raw.trim().is_empty() {
        return Err(ParseError::EmptyResponse);
    }
    let obj = extract_object(raw).ok_or(ParseError::NoParsableObject)?;
    let target_description = field(&obj, &["target_description", "target_item_description", "target"])
        .and_then(text_of)
        .filter(|s| !s.is_empty())
        .ok_or(ParseError::MissingTargetDescription)?;
    let identification_summary = field(&obj, &["identification", "identify", "identification_summary"])
        .and_then(text_of)
        .unwrap_or_default();
    let thoughts = field(&obj, &["attributes", "aesthetic_thoughts", "aesthetics"])
        .map(parse_attributes)
        .unwrap_or_default();
    Ok(ParsedReasoning {
        identification_summary,
        target_description,
        profile: AestheticProfile::from_thoughts(thoughts),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const WELL_FORMED: &str = r#"{
  "identification": "A white blouse (top) and navy trousers (bottom).",
  "attributes": {
    "color": {"keyword": "tan", "reason": "warm neutral bridges white and navy"},
    "style": {"keyword": "smart casual", "reason": "matches the tailored trousers"},
    "occasion": {"keyword": "office", "reason": "work-appropriate pieces"},
    "season": {"keyword": "autumn", "reason": "long sleeves and wool"},
    "material": {"keyword": "leather", "reason": "adds texture"},
    "balance": {"keyword": "low profile", "reason": "keeps the silhouette clean"}
  },
  "target_description": "Tan leather loafers with a low profile."
}"#;

    #[test]
    fn happy_path() {
        let p = parse_reasoning(WELL_FORMED).unwrap();
        assert_eq!(p.target_description, "Tan leather loafers with a low profile.");
        assert!(p.profile.is_complete());
        assert_eq!(p.profile.thoughts[&AestheticAttribute::Material].keyword, "leather");
    }

    #[test]
    fn fenced_with_prose_matches_unwrapped() {
        let wrapped = format!("Sure! Here is my analysis:\n```json\n{WELL_FORMED}\n```\nHope this helps {{smile}}.");
        assert_eq!(parse_reasoning(&wrapped).unwrap(), parse_reasoning(WELL_FORMED).unwrap());
    }

    #[test]
    fn missing_attribute_marked_incomplete() {
        let mut v: Value = serde_json::from_str(WELL_FORMED).unwrap();
        v["attributes"].as_object_mut().unwrap().remove("season");
        let p = parse_reasoning(&v.to_string()).unwrap();
        assert_eq!(p.profile.thoughts.len(), 5);
        assert_eq!(p.profile.incomplete, vec![AestheticAttribute::Season]);
        assert!(!p.profile.is_complete());
    }

    #[test]
    fn unknown_attributes_dropped_and_blank_keywords_incomplete() {
        let raw = r#"{"attributes": {"texture": {"keyword": "x", "reason": "y"}, "Color": {"keyword": "  ", "reason": "r"}, "STYLE": "boho: free"}, "target_description": "d"}"#;
        let p = parse_reasoning(raw).unwrap();
        assert_eq!(p.profile.thoughts.keys().copied().collect::<Vec<_>>(), vec![AestheticAttribute::Style]);
        assert_eq!(p.profile.thoughts[&AestheticAttribute::Style].reason, "free");
        assert!(p.profile.incomplete.contains(&AestheticAttribute::Color));
    }

    #[test]
    fn braces_inside_strings_do_not_confuse_extraction() {
        let raw = r#"prefix "}" {"target_description": "a {curly} \"quoted\" bag"} tail }"#;
        assert_eq!(parse_reasoning(raw).unwrap().target_description, "a {curly} \"quoted\" bag");
    }

    #[test]
    fn skips_non_json_braces() {
        let raw = r#"Consider {this} first. {"target_description": "red scarf"}"#;
        assert_eq!(parse_reasoning(raw).unwrap().target_description, "red scarf");
    }

    #[test]
    fn array_form_attributes() {
        let raw = r#"{"attributes": [{"attribute": "balance", "keyword": "long", "reason": "r"}], "target_description": "coat"}"#;
        let p = parse_reasoning(raw).unwrap();
        assert_eq!(p.profile.thoughts[&AestheticAttribute::Balance].keyword, "long");
    }

    #[test]
    fn typed_errors() {
        assert_eq!(parse_reasoning("   "), Err(ParseError::EmptyResponse));
        assert_eq!(parse_reasoning("no json here"), Err(ParseError::NoParsableObject));
        assert_eq!(parse_reasoning("{\"broken\": "), Err(ParseError::NoParsableObject));
        assert_eq!(
            parse_reasoning(r#"{"identification": "x"}"#),
            Err(ParseError::MissingTargetDescription)
        );
        assert_eq!(
            parse_reasoning(r#"{"target_description": "  "}"#),
            Err(ParseError::MissingTargetDescription)
        );
    }
}
