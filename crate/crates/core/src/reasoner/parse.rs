//! Lenient extraction and strict validation of diagnoses.

use serde_json::{Map, Value};

use super::{Diagnosis, ParseError, ReasoningStep};

/// Extracts and validates a diagnosis from model output.
///
/// Accepts a JSON object anywhere in the text (prose and code fences around
/// it are ignored), or the labeled layout
///
/// ```text
/// component: cartservice
/// reason: response timeout
/// reasoning trace: [ {"step":1, ...} {"step":2, ...} ]
/// ```
pub fn parse_diagnosis(raw: &str) -> Result<Diagnosis, ParseError> {
    if let Some(obj) = first_object(raw) {
        if obj.contains_key("component") || !has_labeled_component(raw) {
            return from_object(&obj);
        }
    }
    if has_labeled_component(raw) {
        return from_labeled(raw);
    }
    Err(ParseError::MalformedOutput("no JSON object found".into()))
}

/// Objects in sequence after an optional `[`, separated by whitespace or
/// commas; stops at anything else, such as the closing `]`.
fn step_list(text: &str) -> Vec<Value> {
    let mut rest = text.trim_start();
    rest = rest.strip_prefix('[').unwrap_or(rest);
    let mut steps = Vec::new();
    loop {
        rest = rest.trim_start_matches(|c: char| c.is_whitespace() || c == ',');
        if !rest.starts_with('{') {
            break;
        }
        let mut stream = serde_json::Deserializer::from_str(rest).into_iter::<Value>();
        match stream.next() {
            Some(Ok(v @ Value::Object(_))) => {
                steps.push(v);
                rest = &rest[stream.byte_offset()..];
            }
            _ => break,
        }
    }
    steps
}

fn first_object(text: &str) -> Option<Map<String, Value>> {
    let mut from = 0;
    while let Some(off) = text[from..].find('{') {
        let start = from + off;
        let mut stream = serde_json::Deserializer::from_str(&text[start..]).into_iter::<Value>();
        if let Some(Ok(Value::Object(map))) = stream.next() {
            return Some(map);
        }
        from = start + 1;
    }
    None
}

fn label_value<'a>(raw: &'a str, label: &str) -> Option<(usize, &'a str)> {
    let mut offset = 0;
    for line in raw.split_inclusive('\n') {
        let trimmed = line.trim_start();
        let lead = line.len() - trimmed.len();
        if trimmed.len() >= label.len()
            && trimmed.is_char_boundary(label.len())
            && trimmed[..label.len()].eq_ignore_ascii_case(label)
        {
            let rest = trimmed[label.len()..].trim_start();
            if let Some(value) = rest.strip_prefix(':') {
                let value_start = offset + lead + (trimmed.len() - value.len());
                return Some((value_start, value.trim()));
            }
        }
        offset += line.len();
    }
    None
}

fn has_labeled_component(raw: &str) -> bool {
    label_value(raw, "component").is_some()
}

fn from_labeled(raw: &str) -> Result<Diagnosis, ParseError> {
    let (_, component) = label_value(raw, "component").expect("checked by caller");
    let reason = label_value(raw, "reason")
        .map(|(_, v)| v.to_string())
        .ok_or_else(|| ParseError::SchemaViolation("missing field `reason`".into()))?;
    let (trace_at, _) = label_value(raw, "reasoning trace")
        .or_else(|| label_value(raw, "reasoning_trace"))
        .ok_or_else(|| ParseError::SchemaViolation("missing field `reasoning_trace`".into()))?;
    let steps = step_list(&raw[trace_at..]);
    let mut obj = Map::new();
    obj.insert("component".into(), Value::String(component.to_string()));
    obj.insert("reason".into(), Value::String(reason));
    obj.insert("reasoning_trace".into(), Value::Array(steps));
    from_object(&obj)
}

fn text_field(obj: &Map<String, Value>, key: &str) -> Result<String, ParseError> {
    match obj.get(key) {
        None => Err(ParseError::SchemaViolation(format!("missing field `{key}`"))),
        Some(Value::String(s)) if !s.trim().is_empty() => Ok(s.clone()),
        Some(Value::String(_)) => Err(ParseError::SchemaViolation(format!("field `{key}` is empty"))),
        Some(_) => Err(ParseError::SchemaViolation(format!("field `{key}` must be a string"))),
    }
}

/// Lowercased, trimmed; must be one identifier token.
pub fn normalize_component(raw: &str) -> Result<String, ParseError> {
    let name = raw.trim().to_lowercase();
    let valid = !name.is_empty()
        && name
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'));
    if valid {
        Ok(name)
    } else {
        Err(ParseError::SchemaViolation(format!(
            "component {raw:?} is not a single component name"
        )))
    }
}

fn from_object(obj: &Map<String, Value>) -> Result<Diagnosis, ParseError> {
    let component = normalize_component(&text_field(obj, "component")?)?;
    let reason = text_field(obj, "reason")?;
    let trace = match obj.get("reasoning_trace") {
        None => return Err(ParseError::SchemaViolation("missing field `reasoning_trace`".into())),
        Some(Value::Array(a)) => a,
        Some(_) => return Err(ParseError::SchemaViolation("`reasoning_trace` must be a list".into())),
    };
    if trace.is_empty() {
        return Err(ParseError::SchemaViolation("`reasoning_trace` is empty".into()));
    }
    let mut steps = Vec::with_capacity(trace.len());
    for (i, item) in trace.iter().enumerate() {
        let Value::Object(step) = item else {
            return Err(ParseError::SchemaViolation(format!("step {} is not an object", i + 1)));
        };
        let number = step
            .get("step")
            .and_then(Value::as_u64)
            .ok_or_else(|| ParseError::SchemaViolation(format!("step {} has no integer `step`", i + 1)))?;
        if number != i as u64 + 1 {
            return Err(ParseError::SchemaViolation(format!(
                "steps must be numbered 1..n in order; found {number} at position {}",
                i + 1
            )));
        }
        steps.push(ReasoningStep {
            step: number as u32,
            action: text_field(step, "action")?,
            observation: text_field(step, "observation")?,
        });
    }
    Ok(Diagnosis {
        component,
        reason,
        reasoning_trace: steps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const REFERENCE_CASE: &str = r#"component: cartservice
reason: response timeout with RRT spike to 97k ms
reasoning trace:[
{"step":1,"action": "TraceAnalysis(Tracedata)", "observation": "3 cartservice pods showing errors"}
{"step":2,"action":"MetricsAnalysis(cartservice)","observation":"RRT spike to 97246ms at fault time"}
{"step":3,"action": "LogSearch(cartservice)", "observation": "40 errors detected at faultpeak"}
{"step":4,"action": "AnalyzeAPM(cartservice)", "observation": "23.12% error ratio at 18:10"}]"#;

    #[test]
    fn labeled_case_block() {
        let d = parse_diagnosis(REFERENCE_CASE).unwrap();
        assert_eq!(d.component, "cartservice");
        assert_eq!(d.reason, "response timeout with RRT spike to 97k ms");
        assert_eq!(d.reasoning_trace.len(), 4);
        assert_eq!(d.reasoning_trace[3].observation, "23.12% error ratio at 18:10");
    }

    #[test]
    fn fenced_json_in_prose() {
        let raw = "Here is my answer:\n```json\n{\"component\": \" CartService \", \"reason\": \"r\", \"reasoning_trace\": [{\"step\": 1, \"action\": \"A()\", \"observation\": \"o\"}]}\n```\nthanks";
        let d = parse_diagnosis(raw).unwrap();
        assert_eq!(d.component, "cartservice");
    }

    #[test]
    fn schema_errors() {
        assert!(matches!(parse_diagnosis("{}"), Err(ParseError::SchemaViolation(_))));
        assert!(matches!(
            parse_diagnosis("no json here"),
            Err(ParseError::MalformedOutput(_))
        ));
        let gap = r#"{"component":"a","reason":"r","reasoning_trace":[{"step":1,"action":"x","observation":"y"},{"step":3,"action":"x","observation":"y"}]}"#;
        assert!(matches!(parse_diagnosis(gap), Err(ParseError::SchemaViolation(_))));
        let prose = r#"{"component":"the cart service","reason":"r","reasoning_trace":[{"step":1,"action":"x","observation":"y"}]}"#;
        assert!(matches!(parse_diagnosis(prose), Err(ParseError::SchemaViolation(_))));
    }
}
