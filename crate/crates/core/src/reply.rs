//! Parsers for the line-oriented reply formats the prompts ask for.
//!
//! Structured replies are `key: value` lines. A line that does not start a
//! new key continues the previous value. Markdown code fences are ignored.

use crate::state::ChecklistItem;

fn is_key(candidate: &str) -> bool {
    let mut chars = candidate.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && candidate.len() <= 32
        && candidate
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == ' ' || c == '-')
}

fn strip_bullet(line: &str) -> &str {
    let t = line.trim_start();
    for prefix in ["- ", "* ", "• "] {
        if let Some(rest) = t.strip_prefix(prefix) {
            return rest.trim_start();
        }
    }
    t
}

/// Splits a reply into `(lowercased key, value)` pairs in order.
pub fn key_values(text: &str) -> Vec<(String, String)> {
    let mut out: Vec<(String, String)> = Vec::new();
    for raw in text.lines() {
        if raw.trim_start().starts_with("```") {
            continue;
        }
        let line = strip_bullet(raw);
        let line = line.trim_start_matches(['*', '_']);
        if let Some((k, v)) = line.split_once(':') {
            let key = k.trim().trim_end_matches(['*', '_']).trim();
            if is_key(key) {
                let norm = key.to_ascii_lowercase().replace([' ', '-'], "_");
                out.push((norm, v.trim().trim_start_matches(['*', '_']).trim().to_string()));
                continue;
            }
        }
        if let Some(last) = out.last_mut() {
            if !raw.trim().is_empty() {
                if !last.1.is_empty() {
                    last.1.push('\n');
                }
                last.1.push_str(raw.trim());
            }
        }
    }
    out
}

pub fn first_value(pairs: &[(String, String)], key: &str) -> Option<String> {
    pairs.iter().find(|(k, _)| k == key).map(|(_, v)| v.clone())
}

pub fn all_values(pairs: &[(String, String)], key: &str) -> Vec<String> {
    pairs
        .iter()
        .filter(|(k, _)| k == key)
        .map(|(_, v)| v.clone())
        .collect()
}

/// Parses a real in [0, 1]; accepts a trailing `%`.
pub fn parse_unit(value: &str) -> Result<f64, String> {
    let v = value.trim();
    let token = v.split_whitespace().next().unwrap_or("");
    let (num, scale) = match token.strip_suffix('%') {
        Some(n) => (n, 100.0),
        None => (token, 1.0),
    };
    let parsed: f64 = num
        .trim_end_matches([',', ';', '.'])
        .parse()
        .map_err(|_| format!("{v:?} is not a number"))?;
    let x = parsed / scale;
    if !x.is_finite() || !(0.0..=1.0).contains(&x) {
        return Err(format!("{v} is outside [0, 1]"));
    }
    Ok(x)
}

#[derive(Debug, Clone, PartialEq)]
pub struct UncertaintyNote {
    pub level: f64,
    pub description: String,
    pub addresses: Vec<String>,
}

/// `<level> | <description> [| addresses: id, id]`
pub fn parse_uncertainty(value: &str) -> Result<UncertaintyNote, String> {
    let mut parts = value.split('|').map(str::trim);
    let level = parse_unit(parts.next().unwrap_or(""))?;
    let description = parts.next().unwrap_or("").to_string();
    let mut addresses = Vec::new();
    for extra in parts {
        let ids = extra
            .split_once(':')
            .filter(|(k, _)| k.trim().eq_ignore_ascii_case("addresses"))
            .map(|(_, ids)| ids)
            .ok_or_else(|| format!("unexpected uncertainty field {extra:?}"))?;
        addresses.extend(split_ids(ids));
    }
    Ok(UncertaintyNote {
        level,
        description,
        addresses,
    })
}

fn split_ids(list: &str) -> impl Iterator<Item = String> + '_ {
    list.split([',', ' '])
        .map(str::trim)
        .filter(|s| !s.is_empty() && !s.eq_ignore_ascii_case("none"))
        .map(str::to_string)
}

pub fn parse_uncertainties(pairs: &[(String, String)]) -> Result<Vec<UncertaintyNote>, String> {
    let mut notes: Vec<UncertaintyNote> = all_values(pairs, "uncertainty")
        .iter()
        .map(|v| parse_uncertainty(v))
        .collect::<Result<_, _>>()?;
    // A bare `addresses:` line applies to the preceding uncertainty.
    let mut current: Option<usize> = None;
    let mut seen = 0;
    for (k, v) in pairs {
        if k == "uncertainty" {
            current = Some(seen);
            seen += 1;
        } else if k == "addresses" {
            let idx = current.ok_or("addresses line before any uncertainty")?;
            notes[idx].addresses.extend(split_ids(v));
        }
    }
    Ok(notes)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceReply {
    pub confidence: f64,
    pub uncertainties: Vec<UncertaintyNote>,
}

pub fn parse_confidence(text: &str) -> Result<ConfidenceReply, String> {
    let pairs = key_values(text);
    let raw = first_value(&pairs, "confidence").ok_or("missing `confidence:` line")?;
    Ok(ConfidenceReply {
        confidence: parse_unit(&raw)?,
        uncertainties: parse_uncertainties(&pairs)?,
    })
}

/// Checklist lines `- [x] sub-question` / `- [ ] sub-question`.
pub fn parse_checklist(text: &str) -> Result<Vec<ChecklistItem>, String> {
    let mut items = Vec::new();
    for raw in text.lines() {
        let mut line = strip_bullet(raw);
        let digits = line.chars().take_while(|c| c.is_ascii_digit()).count();
        if digits > 0 {
            if let Some(rest) = line[digits..].strip_prefix('.').or_else(|| line[digits..].strip_prefix(')')) {
                line = rest.trim_start();
            }
        }
        let (addressed, rest) = if let Some(r) = line.strip_prefix("[x]").or_else(|| line.strip_prefix("[X]")) {
            (true, r)
        } else if let Some(r) = line.strip_prefix("[ ]") {
            (false, r)
        } else {
            continue;
        };
        let description = rest.trim();
        if description.is_empty() {
            return Err("checklist item without text".into());
        }
        items.push(ChecklistItem {
            description: description.to_string(),
            addressed,
        });
    }
    if items.is_empty() {
        return Err("no `- [x]` / `- [ ]` checklist lines".into());
    }
    Ok(items)
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamProposal {
    pub persona: Option<String>,
    pub focus: Option<String>,
    pub temperature: Option<f64>,
    pub branching_factor_b: Option<u32>,
    pub max_depth_d: Option<u32>,
    pub confidence_threshold_tau: Option<f64>,
}

impl ParamProposal {
    pub fn is_empty(&self) -> bool {
        *self == Self::default()
    }
}

pub fn parse_param_proposal(text: &str) -> Result<ParamProposal, String> {
    let pairs = key_values(text);
    let mut p = ParamProposal::default();
    let mut recognized = false;
    for (k, v) in &pairs {
        let number = |v: &str| -> Result<f64, String> {
            v.trim().parse::<f64>().map_err(|_| format!("{k}: {v:?} is not a number"))
        };
        match k.as_str() {
            "persona" => p.persona = Some(v.clone()),
            "focus" => p.focus = Some(v.clone()),
            "temperature" => p.temperature = Some(number(v)?),
            "branching_factor_b" | "b" => p.branching_factor_b = Some(number(v)? as u32),
            "max_depth_d" | "d" => p.max_depth_d = Some(number(v)? as u32),
            "confidence_threshold_tau" | "tau" => p.confidence_threshold_tau = Some(number(v)?),
            "no_change" | "unchanged" => {}
            _ => continue,
        }
        recognized = true;
    }
    let bare = text.trim().to_ascii_lowercase();
    if !recognized && !(bare.starts_with("no change") || bare.starts_with("unchanged")) {
        return Err("expected persona/focus/temperature lines or `no change`".into());
    }
    if p.temperature.is_some_and(|t| !t.is_finite()) {
        return Err("temperature must be finite".into());
    }
    Ok(p)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DriftReply {
    pub answer: String,
    pub follow_ups: Vec<String>,
}

/// `answer: ...` plus any number of `follow_up: ...` lines.
pub fn parse_drift(text: &str) -> Result<DriftReply, String> {
    let pairs = key_values(text);
    let answer = first_value(&pairs, "answer").ok_or("missing `answer:` line")?;
    let follow_ups = all_values(&pairs, "follow_up")
        .into_iter()
        .chain(all_values(&pairs, "followup"))
        .filter(|q| !q.trim().is_empty())
        .collect();
    Ok(DriftReply { answer, follow_ups })
}

/// The value of the first `answer:` line, or the whole trimmed text.
pub fn extract_answer(text: &str) -> String {
    let pairs = key_values(text);
    first_value(&pairs, "final_answer")
        .or_else(|| first_value(&pairs, "answer"))
        .map(|a| a.lines().next().unwrap_or("").trim().to_string())
        .unwrap_or_else(|| text.trim().to_string())
}
