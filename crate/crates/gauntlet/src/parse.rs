//! Small parsers for the structured text formats the agent prompts demand.

use std::collections::BTreeMap;

/// Splits text into blocks labeled `[NAME]`, returning label -> body.
/// Labels are matched case-insensitively at line starts.
pub fn bracket_sections(text: &str, labels: &[&str]) -> BTreeMap<String, String> {
    labeled_sections(text, labels, |line, label| {
        let trimmed = line.trim();
        trimmed.to_ascii_uppercase().starts_with(&format!("[{}]", label.to_ascii_uppercase()))
            .then(|| {
                let after = &trimmed[label.len() + 2..];
                after.trim_start_matches(':').trim().to_string()
            })
    })
}

/// Splits text into blocks labeled `Label:` at line starts.
pub fn colon_sections(text: &str, labels: &[&str]) -> BTreeMap<String, String> {
    labeled_sections(text, labels, |line, label| {
        let trimmed = line.trim();
        let lower = trimmed.to_ascii_lowercase();
        lower
            .starts_with(&format!("{}:", label.to_ascii_lowercase()))
            .then(|| trimmed[label.len() + 1..].trim().to_string())
    })
}

/// Splits markdown into `## Heading` sections, returning heading -> body in
/// document order.
pub fn markdown_sections(text: &str) -> Vec<(String, String)> {
    let mut sections: Vec<(String, String)> = Vec::new();
    for line in text.lines() {
        if let Some(heading) = line.trim().strip_prefix("## ") {
            sections.push((heading.trim().to_string(), String::new()));
        } else if let Some((_, body)) = sections.last_mut() {
            body.push_str(line);
            body.push('\n');
        }
    }
    for (_, body) in sections.iter_mut() {
        *body = body.trim().to_string();
    }
    sections
}

fn labeled_sections<F>(text: &str, labels: &[&str], matcher: F) -> BTreeMap<String, String>
where
    F: Fn(&str, &str) -> Option<String>,
{
    let mut out: BTreeMap<String, String> = BTreeMap::new();
    let mut current: Option<String> = None;
    for line in text.lines() {
        let mut matched = false;
        for label in labels {
            if let Some(inline) = matcher(line, label) {
                let key = label.to_ascii_lowercase();
                out.insert(key.clone(), inline);
                current = Some(key);
                matched = true;
                break;
            }
        }
        if !matched {
            if let Some(key) = &current {
                let body = out.get_mut(key).unwrap();
                if !body.is_empty() {
                    body.push('\n');
                }
                body.push_str(line.trim_end());
            }
        }
    }
    for (_, body) in out.iter_mut() {
        *body = body.trim().to_string();
    }
    out
}

/// Extracts the first fenced code block, ignoring any language tag; falls
/// back to the whole text when no fence exists.
pub fn code_block(text: &str) -> String {
    if let Some(start) = text.find("```") {
        let after = &text[start + 3..];
        let body_start = after.find('\n').map(|i| i + 1).unwrap_or(0);
        let body = &after[body_start..];
        if let Some(end) = body.find("```") {
            return body[..end].trim_end().to_string();
        }
    }
    text.trim().to_string()
}

/// Finds `KEY: value` anywhere in the text (first hit), case-insensitive key.
pub fn keyed_value(text: &str, key: &str) -> Option<String> {
    let needle = format!("{}:", key.to_ascii_lowercase());
    for line in text.lines() {
        let lower = line.trim().to_ascii_lowercase();
        if lower.starts_with(&needle) {
            return Some(line.trim()[needle.len()..].trim().to_string());
        }
    }
    None
}

/// Extracts the first JSON object from text that may wrap it in a code fence.
pub fn embedded_json(text: &str) -> Option<serde_json::Value> {
    let candidate = code_block(text);
    if let Ok(v) = serde_json::from_str(&candidate) {
        return Some(v);
    }
    let start = text.find('{')?;
    let end = text.rfind('}')?;
    serde_json::from_str(&text[start..=end]).ok()
}
