//! Extraction of keypoint records from free-form model replies, and their
//! validation into pixel-space keypoints.

use std::collections::HashMap;
use std::fmt;

use serde_json::{Map, Value};
use thiserror::Error;

use super::{Category, Keypoint, ProposalResult};
use crate::Point;

/// One keypoint as the model reported it, coordinates still normalized.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRecord {
    pub label: String,
    pub category: Category,
    pub x: f64,
    pub y: f64,
    pub confidence: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ParseReason {
    NoStructuredBlock,
    NotAnArray,
    RecordNotObject { index: usize },
    MissingField { index: usize, field: &'static str },
    NonNumeric { index: usize, field: &'static str },
    NonString { index: usize, field: &'static str },
    UnknownCategory { index: usize, value: String },
    HandAnswer { reply: String },
}

impl fmt::Display for ParseReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::NoStructuredBlock => write!(f, "no keypoint block found"),
            Self::NotAnArray => write!(f, "`keypoints` is not an array"),
            Self::RecordNotObject { index } => write!(f, "record {index} is not an object"),
            Self::MissingField { index, field } => write!(f, "record {index} lacks `{field}`"),
            Self::NonNumeric { index, field } => write!(f, "record {index}: `{field}` is non-numeric"),
            Self::NonString { index, field } => write!(f, "record {index}: `{field}` is not a string"),
            Self::UnknownCategory { index, value } => write!(f, "record {index}: unknown category {value:?}"),
            Self::HandAnswer { reply } => write!(f, "expected yes/no, got {reply:?}"),
        }
    }
}

#[derive(Debug, Clone, Error, PartialEq)]
#[error("parse error at byte {offset}: {reason}")]
pub struct ParseError {
    pub offset: usize,
    pub reason: ParseReason,
}

fn is_block(v: &Value) -> bool {
    match v {
        Value::Object(m) => m.contains_key("keypoints"),
        Value::Array(items) => {
            !items.is_empty() && items.iter().all(|i| i.as_object().is_some_and(|o| o.contains_key("label")))
        }
        _ => false,
    }
}

/// Depth-first search for the first keypoint block inside a JSON value.
fn find_block(v: &Value) -> Option<&Value> {
    if is_block(v) {
        return Some(v);
    }
    match v {
        Value::Object(m) => m.values().find_map(find_block),
        Value::Array(items) => items.iter().find_map(find_block),
        _ => None,
    }
}

fn field<'a>(obj: &'a Map<String, Value>, index: usize, name: &'static str) -> Result<&'a Value, ParseReason> {
    obj.get(name).ok_or(ParseReason::MissingField { index, field: name })
}

fn number(obj: &Map<String, Value>, index: usize, name: &'static str) -> Result<f64, ParseReason> {
    field(obj, index, name)?.as_f64().filter(|v| v.is_finite()).ok_or(ParseReason::NonNumeric { index, field: name })
}

fn record(v: &Value, index: usize) -> Result<RawRecord, ParseReason> {
    let obj = v.as_object().ok_or(ParseReason::RecordNotObject { index })?;
    let label =
        field(obj, index, "label")?.as_str().ok_or(ParseReason::NonString { index, field: "label" })?.to_string();
    let cat = field(obj, index, "category")?.as_str().ok_or(ParseReason::NonString { index, field: "category" })?;
    let category = Category::parse(cat).ok_or_else(|| ParseReason::UnknownCategory { index, value: cat.into() })?;
    let x = number(obj, index, "x")?;
    let y = number(obj, index, "y")?;
    let confidence = match obj.get("confidence") {
        None | Some(Value::Null) => None,
        Some(_) => Some(number(obj, index, "confidence")?),
    };
    Ok(RawRecord { label, category, x, y, confidence })
}

fn records_of(block: &Value) -> Result<Vec<RawRecord>, ParseReason> {
    let items = match block {
        Value::Object(m) => m["keypoints"].as_array().ok_or(ParseReason::NotAnArray)?,
        Value::Array(items) => items,
        _ => return Err(ParseReason::NotAnArray),
    };
    items.iter().enumerate().map(|(i, v)| record(v, i)).collect()
}

/// Extracts the first keypoint block from `text`.
///
/// A block is a JSON object with a `keypoints` member or a non-empty JSON
/// array of objects carrying a `label`; it may be nested in other JSON or
/// surrounded by prose and code fences. Field types and the category enum are
/// checked here; numeric ranges are left to [`validate_proposal`].
pub fn parse_response(text: &str) -> Result<Vec<RawRecord>, ParseError> {
    let bytes = text.as_bytes();
    let mut pos = 0;
    while pos < bytes.len() {
        if bytes[pos] != b'{' && bytes[pos] != b'[' {
            pos += 1;
            continue;
        }
        let mut stream = serde_json::Deserializer::from_str(&text[pos..]).into_iter::<Value>();
        match stream.next() {
            Some(Ok(value)) => {
                if let Some(block) = find_block(&value) {
                    return records_of(block).map_err(|reason| ParseError { offset: pos, reason });
                }
                pos += stream.byte_offset().max(1);
            }
            _ => pos += 1,
        }
    }
    Err(ParseError { offset: text.len(), reason: ParseReason::NoStructuredBlock })
}

/// Serializes records in the reply format `parse_response` expects.
pub fn serialize_records(records: &[RawRecord]) -> String {
    let items: Vec<Value> = records
        .iter()
        .map(|r| {
            let mut m = Map::new();
            m.insert("label".into(), Value::from(r.label.clone()));
            m.insert("category".into(), Value::from(r.category.as_str()));
            m.insert("x".into(), Value::from(r.x));
            m.insert("y".into(), Value::from(r.y));
            m.insert("confidence".into(), r.confidence.map_or(Value::Null, Value::from));
            Value::Object(m)
        })
        .collect();
    serde_json::json!({ "keypoints": items }).to_string()
}

/// Interprets a yes/no reply: the first alphabetic word decides.
pub fn parse_yes_no(text: &str) -> Result<bool, ParseError> {
    let word = text.split(|c: char| !c.is_alphabetic()).find(|w| !w.is_empty()).map(|w| w.to_ascii_lowercase());
    match word.as_deref() {
        Some("yes") | Some("true") => Ok(true),
        Some("no") | Some("false") => Ok(false),
        _ => Err(ParseError { offset: 0, reason: ParseReason::HandAnswer { reply: text.chars().take(40).collect() } }),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    Empty,
    EmptyLabel { index: usize },
    OutOfRange { index: usize, field: &'static str, value: f64 },
    DuplicateLabel { label: String, first: usize, second: usize },
    MissingRequiredLabel { label: String },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Empty => write!(f, "no keypoints"),
            Self::EmptyLabel { index } => write!(f, "record {index} has an empty label"),
            Self::OutOfRange { index, field, value } => {
                write!(f, "record {index}: {field} = {value} outside [0,1]")
            }
            Self::DuplicateLabel { label, first, second } => {
                write!(f, "label {label:?} repeated at records {first} and {second}")
            }
            Self::MissingRequiredLabel { label } => write!(f, "required label {label:?} missing"),
        }
    }
}

#[derive(Debug, Clone, Error, PartialEq)]
#[error("invalid proposal: {}", .violations.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
pub struct ValidationError {
    pub violations: Vec<Violation>,
}

/// Provenance and policy for turning records into a [`ProposalResult`].
#[derive(Debug, Clone)]
pub struct ProposalContext {
    pub frame_index: usize,
    pub model_id: String,
    pub prompt_id: String,
    pub raw_response: String,
    /// Label that must appear exactly once (the wrist when hands are requested).
    pub required_label: Option<String>,
    pub max_keypoints: usize,
}

/// Range-checks records, converts to pixel coordinates
/// (`x_px = x * (w - 1)`, `y_px = y * (h - 1)`) and reports every violation.
pub fn validate_proposal(
    records: &[RawRecord],
    dims: (usize, usize),
    ctx: ProposalContext,
) -> Result<ProposalResult, ValidationError> {
    let records = if records.len() > ctx.max_keypoints {
        log::warn!("backend proposed {} keypoints, keeping the first {}", records.len(), ctx.max_keypoints);
        &records[..ctx.max_keypoints]
    } else {
        records
    };
    let mut violations = Vec::new();
    if records.is_empty() {
        violations.push(Violation::Empty);
    }
    let mut seen: HashMap<&str, usize> = HashMap::new();
    for (index, r) in records.iter().enumerate() {
        if r.label.trim().is_empty() {
            violations.push(Violation::EmptyLabel { index });
        }
        for (field, value) in [("x", r.x), ("y", r.y), ("confidence", r.confidence.unwrap_or(1.0))] {
            if !(0.0..=1.0).contains(&value) {
                violations.push(Violation::OutOfRange { index, field, value });
            }
        }
        if let Some(&first) = seen.get(r.label.as_str()) {
            violations.push(Violation::DuplicateLabel { label: r.label.clone(), first, second: index });
        } else {
            seen.insert(&r.label, index);
        }
    }
    if let Some(required) = &ctx.required_label {
        if !records.is_empty() && !seen.contains_key(required.as_str()) {
            violations.push(Violation::MissingRequiredLabel { label: required.clone() });
        }
    }
    if !violations.is_empty() {
        return Err(ValidationError { violations });
    }

    let (w, h) = dims;
    let keypoints = records
        .iter()
        .map(|r| Keypoint {
            label: r.label.clone(),
            category: r.category,
            pos: Point::new(r.x * (w - 1) as f64, r.y * (h - 1) as f64),
            confidence: r.confidence.unwrap_or(1.0),
        })
        .collect();
    Ok(ProposalResult {
        frame_index: ctx.frame_index,
        keypoints,
        model_id: ctx.model_id,
        raw_response: ctx.raw_response,
        prompt_id: ctx.prompt_id,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ctx() -> ProposalContext {
        ProposalContext {
            frame_index: 0,
            model_id: "m".into(),
            prompt_id: "grasp_v1".into(),
            raw_response: String::new(),
            required_label: None,
            max_keypoints: 32,
        }
    }

    fn rec(label: &str, x: f64, y: f64) -> RawRecord {
        RawRecord { label: label.into(), category: Category::Hand, x, y, confidence: None }
    }

    #[test]
    fn single_block_exact_values() {
        let r = parse_response(r#"{"keypoints":[{"label":"wrist","category":"hand","x":0.5,"y":0.25}]}"#).unwrap();
        assert_eq!(r, vec![rec("wrist", 0.5, 0.25)]);
    }

    #[test]
    fn non_numeric_coordinate() {
        let e =
            parse_response(r#"{"keypoints":[{"label":"wrist","category":"hand","x":"half","y":0.25}]}"#).unwrap_err();
        assert_eq!(e.reason, ParseReason::NonNumeric { index: 0, field: "x" });
        assert_eq!(e.offset, 0);
    }

    #[test]
    fn prose_wrapped_block() {
        let text = "Sure! Here are the keypoints [as requested]:\n```json\n{\"keypoints\": [{\"label\": \"wrist\", \"category\": \"Hand\", \"x\": 0.1, \"y\": 0.9, \"confidence\": 0.8}]}\n```\nLet me know {if} you need more.";
        let r = parse_response(text).unwrap();
        assert_eq!(r.len(), 1);
        assert_eq!(r[0].confidence, Some(0.8));
        assert_eq!(r[0].category, Category::Hand);
    }

    #[test]
    fn nested_and_bare_array_blocks() {
        let nested = r#"{"result": {"keypoints": [{"label":"a","category":"tool","x":0,"y":1}]}}"#;
        assert_eq!(parse_response(nested).unwrap()[0].category, Category::Tool);
        let bare = r#"[{"label":"a","category":"object","x":0.2,"y":0.3}]"#;
        assert_eq!(parse_response(bare).unwrap()[0].x, 0.2);
    }

    #[test]
    fn malformed_records() {
        assert_eq!(parse_response("no json here").unwrap_err().reason, ParseReason::NoStructuredBlock);
        assert_eq!(parse_response(r#"{"keypoints": 3}"#).unwrap_err().reason, ParseReason::NotAnArray);
        assert_eq!(
            parse_response(r#"{"keypoints": [{"label":"a","category":"foot","x":0,"y":0}]}"#).unwrap_err().reason,
            ParseReason::UnknownCategory { index: 0, value: "foot".into() }
        );
        assert_eq!(
            parse_response(r#"xx {"keypoints": [{"label":"a","category":"hand","y":0}]}"#).unwrap_err(),
            ParseError { offset: 3, reason: ParseReason::MissingField { index: 0, field: "x" } }
        );
        assert_eq!(
            parse_response(r#"{"keypoints": [5]}"#).unwrap_err().reason,
            ParseReason::RecordNotObject { index: 0 }
        );
    }

    #[test]
    fn yes_no() {
        assert!(parse_yes_no("Yes.").unwrap());
        assert!(!parse_yes_no("  no, the hand is hidden").unwrap());
        assert!(parse_yes_no("maybe").is_err());
        assert!(parse_yes_no("").is_err());
    }

    #[test]
    fn corners_map_to_pixel_centers() {
        let p = validate_proposal(&[rec("a", 0.0, 0.0), rec("b", 1.0, 1.0), rec("wrist", 0.5, 0.5)], (256, 256), ctx())
            .unwrap();
        assert_eq!(p.keypoints[0].pos, Point::new(0.0, 0.0));
        assert_eq!(p.keypoints[1].pos, Point::new(255.0, 255.0));
        assert_eq!(p.keypoints[2].pos, Point::new(127.5, 127.5));
        assert_eq!(p.keypoints[0].confidence, 1.0);
    }

    #[test]
    fn reports_every_violation() {
        let e = validate_proposal(&[rec("a", 1.2, 0.5), rec("a", 0.5, -0.1)], (256, 256), ctx()).unwrap_err();
        assert_eq!(
            e.violations,
            vec![
                Violation::OutOfRange { index: 0, field: "x", value: 1.2 },
                Violation::OutOfRange { index: 1, field: "y", value: -0.1 },
                Violation::DuplicateLabel { label: "a".into(), first: 0, second: 1 },
            ]
        );
        assert_eq!(validate_proposal(&[], (8, 8), ctx()).unwrap_err().violations, vec![Violation::Empty]);
    }

    #[test]
    fn required_label_and_cap() {
        let mut c = ctx();
        c.required_label = Some("wrist".into());
        let e = validate_proposal(&[rec("thumb", 0.1, 0.1)], (16, 16), c.clone()).unwrap_err();
        assert_eq!(e.violations, vec![Violation::MissingRequiredLabel { label: "wrist".into() }]);
        c.max_keypoints = 1;
        let ok = validate_proposal(&[rec("wrist", 0.1, 0.1), rec("x", 2.0, 2.0)], (16, 16), c).unwrap();
        assert_eq!(ok.keypoints.len(), 1);
    }

    fn arb_record() -> impl Strategy<Value = RawRecord> {
        (
            "[a-z_]{1,12}",
            prop_oneof![Just(Category::Hand), Just(Category::Tool), Just(Category::Object)],
            0.0..=1.0f64,
            0.0..=1.0f64,
            proptest::option::of(0.0..=1.0f64),
        )
            .prop_map(|(label, category, x, y, confidence)| RawRecord { label, category, x, y, confidence })
    }

    proptest! {
        #[test]
        fn parse_inverts_serialize(records in proptest::collection::vec(arb_record(), 1..8), prefix in "[a-zA-Z .,!]{0,30}") {
            let text = format!("{prefix}\n{}\ntrailing words", serialize_records(&records));
            prop_assert_eq!(parse_response(&text).unwrap(), records);
        }

        #[test]
        fn validated_keypoints_inside_frame(records in proptest::collection::vec(arb_record(), 1..8), w in 2usize..600, h in 2usize..600) {
            if let Ok(p) = validate_proposal(&records, (w, h), ctx()) {
                for k in &p.keypoints {
                    prop_assert!(k.pos.x >= 0.0 && k.pos.x < w as f64);
                    prop_assert!(k.pos.y >= 0.0 && k.pos.y < h as f64);
                }
            }
        }

        #[test]
        fn arbitrary_text_never_panics(text in "\\PC{0,200}") {
            let _ = parse_response(&text);
            let _ = parse_yes_no(&text);
        }
    }
}
