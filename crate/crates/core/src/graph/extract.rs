//! Entity and relation extraction from thought text.

use crate::gateway::{structured_call, Message, ModelRequest, Purpose};
use crate::prompts;
use crate::reply;

use super::{CallFn, Entity, GraphError, GraphFragment, Relation};

fn fields(value: &str) -> Vec<String> {
    value.split('|').map(|s| s.trim().to_string()).collect()
}

/// Parses `entity:` and `relation:` lines. `none` is an empty fragment.
pub fn parse_fragment(text: &str) -> Result<GraphFragment, String> {
    let pairs = reply::key_values(text);
    let mut fragment = GraphFragment::default();
    for (k, v) in &pairs {
        match k.as_str() {
            "entity" => {
                let f = fields(v);
                let name = f.first().cloned().unwrap_or_default();
                if name.is_empty() {
                    return Err(format!("entity line without a name: {v:?}"));
                }
                fragment.entities.push(Entity {
                    name,
                    type_label: f.get(1).cloned().unwrap_or_default(),
                    description: f.get(2..).map(|d| d.join(" | ")).unwrap_or_default(),
                });
            }
            "relation" => {
                let f = fields(v);
                if f.len() < 2 || f[0].is_empty() || f[1].is_empty() {
                    return Err(format!("relation needs source and target: {v:?}"));
                }
                let strength = match f.get(3).filter(|s| !s.is_empty()) {
                    None => 1.0,
                    Some(s) => {
                        let x: f64 = s.parse().map_err(|_| format!("strength {s:?} is not a number"))?;
                        if !(x > 0.0 && x <= 1.0) {
                            return Err(format!("strength {x} is outside (0, 1]"));
                        }
                        x
                    }
                };
                fragment.relations.push(Relation {
                    source: f[0].clone(),
                    target: f[1].clone(),
                    description: f.get(2).cloned().unwrap_or_default(),
                    strength,
                });
            }
            _ => {}
        }
    }
    if fragment.is_empty() && !text.trim().eq_ignore_ascii_case("none") {
        return Err("expected `entity:` / `relation:` lines or `none`".into());
    }
    fragment.close_over_relations();
    Ok(fragment)
}

/// One extraction call per non-empty thought of a chain; the fragments are
/// concatenated.
pub fn extract_graph_fragments<S: AsRef<str>>(
    chain: &[S],
    channel: &str,
    call: &CallFn<'_>,
) -> Result<GraphFragment, GraphError> {
    if chain.is_empty() {
        return Err(GraphError::InvalidArgument("chain is empty".into()));
    }
    let mut out = GraphFragment::default();
    for thought in chain {
        let thought = thought.as_ref();
        if thought.trim().is_empty() {
            continue;
        }
        let req = ModelRequest::new(
            vec![
                Message::system(prompts::EXTRACTION_SYSTEM),
                Message::user(prompts::extraction(thought)),
            ],
            0.0,
        )
        .structured()
        .tagged(Purpose::Extraction, channel);
        let fragment = structured_call(&req, call, |r| parse_fragment(&r.text))?;
        out.extend(fragment);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_lines() {
        let f = parse_fragment("entity: IgA | antibody | mucosal\nentity: pIgR | receptor | transports\nrelation: IgA | pIgR | binds | 0.9").unwrap();
        assert_eq!(f.entities.len(), 2);
        assert_eq!(f.relations[0].description, "binds");
        assert_eq!(f.relations[0].strength, 0.9);
    }

    #[test]
    fn none_is_empty() {
        assert!(parse_fragment("none").unwrap().is_empty());
        assert!(parse_fragment("just prose").is_err());
        assert!(parse_fragment("relation: a | b | x | 1.5").is_err());
    }
}
