//! Prompt templates for every model call the engine makes.
//!
//! Each template renders one user message; the matching `*_SYSTEM` constant
//! is the system message. The reply formats here are what [`crate::reply`]
//! parses.

use crate::state::{ChecklistItem, ChannelParams, SemanticState};

pub const SAMPLE_SYSTEM: &str = "You are one independent thought channel working on a hard question. \
You see only the question, your own framing and a summary of the channel that spawned you. \
Advance the reasoning by one substantial step: propose a refined hypothesis, test it, and state what you now believe.";

pub const CONFIDENCE_SYSTEM: &str = "You assess reasoning. Reply with `confidence: <0..1>` for how likely the \
reasoning below reaches a correct final answer. Then list each remaining uncertainty as \
`uncertainty: <level 0..1> | <description>` and, when a line resolves an uncertainty listed as open, \
append `| addresses: <id>, <id>`.";

pub const COVERAGE_SYSTEM: &str = "You maintain a checklist of the sub-questions a complete answer must settle. \
Reply only with checklist lines `- [x] <sub-question>` (addressed by the reasoning) or `- [ ] <sub-question>` (not yet).";

pub const COMPLETION_SYSTEM: &str = "Decide whether this thought channel has finished. \
If the reasoning fully answers the question, call the `complete` function with a short rationale. \
Otherwise reply in plain text with what is still missing.";

pub const SELF_OPTIMIZE_SYSTEM: &str = "You tune the strategy of a reasoning channel before it runs. \
Reply with any of `persona: ...`, `focus: ...`, `temperature: <0..2>` lines that would help resolve the open \
uncertainties, or `no change`.";

pub const SYNTHESIS_SYSTEM: &str = "Several independent channels explored the question. Merge their findings \
into one answer. Weigh disagreements explicitly. End with a line `answer: <final answer>`.";

pub const EXTRACTION_SYSTEM: &str = "Extract a knowledge graph from the reasoning. Reply with lines \
`entity: <name> | <type> | <description>` and `relation: <source> | <target> | <description> | <strength 0..1>`, \
or `none` if there is nothing to extract.";

pub const SUMMARIZE_SYSTEM: &str = "Summarize what this community of entities and relations says about the question \
in a short paragraph. Keep every concrete claim.";

pub const DRIFT_SYSTEM: &str = "Answer the question from the retrieved graph context. Reply with `answer: <answer>` \
and one `follow_up: <query>` line per follow-up query that would sharpen the answer.";

pub const DRIFT_REDUCE_SYSTEM: &str = "Combine the intermediate answers into the final one. \
Reply with `answer: <final answer>` followed by a short justification.";

pub const TRACE_EXTRACTION_SYSTEM: &str = "Read one step of a reasoning transcript. For every uncertainty the step \
expresses, reply `uncertainty: <level 0..1> | <description>`, appending `| addresses: <id>, ...` when the step resolves \
earlier uncertainties listed below. Reply `none` if the step expresses no uncertainty.";

pub const COMPLETE_TOOL: &str = "complete";

fn push_guidance(out: &mut String, guidance: &[String]) {
    if guidance.is_empty() {
        return;
    }
    out.push_str("\n\nGuidance from the supervising scientist:\n");
    for g in guidance {
        out.push_str("- ");
        out.push_str(g.trim());
        out.push('\n');
    }
}

fn push_framing(out: &mut String, params: &ChannelParams) {
    if !params.persona.trim().is_empty() {
        out.push_str(&format!("Persona: {}\n", params.persona.trim()));
    }
    if !params.focus.trim().is_empty() {
        out.push_str(&format!("Focus: {}\n", params.focus.trim()));
    }
}

/// Context of a freshly spawned child: no ancestor transcript, no sibling text.
pub fn sample(
    question: &str,
    params: &ChannelParams,
    parent_summary: &str,
    open_uncertainties: &[String],
    guidance: &[String],
) -> String {
    let mut out = format!("Question: {question}\n");
    push_framing(&mut out, params);
    out.push_str("\nParent channel summary:\n");
    out.push_str(parent_summary);
    if !open_uncertainties.is_empty() {
        out.push_str("\n\nOpen uncertainties:\n");
        for u in open_uncertainties {
            out.push_str(&format!("- {u}\n"));
        }
    }
    push_guidance(&mut out, guidance);
    out
}

fn state_block(state: &SemanticState) -> String {
    let mut out = format!("Question: {}\n", state.question);
    push_framing(&mut out, &state.params);
    out.push_str("\nReasoning:\n");
    out.push_str(state.thought.trim());
    out
}

pub fn confidence(state: &SemanticState, guidance: &[String]) -> String {
    let mut out = state_block(state);
    if !state.open_uncertainties.is_empty() {
        out.push_str("\n\nOpen uncertainties:\n");
        for u in &state.open_uncertainties {
            out.push_str(&format!("- {}: {} (level {})\n", u.id, u.description, u.level));
        }
    }
    push_guidance(&mut out, guidance);
    out
}

pub fn coverage(state: &SemanticState, existing: Option<&[ChecklistItem]>, guidance: &[String]) -> String {
    let mut out = state_block(state);
    match existing {
        Some(items) => {
            out.push_str("\n\nUpdate this checklist against the reasoning (keep the items, re-mark them):\n");
            for i in items {
                out.push_str(&format!("- [{}] {}\n", if i.addressed { "x" } else { " " }, i.description));
            }
        }
        None => out.push_str("\n\nWrite the checklist of sub-questions and mark each one.\n"),
    }
    push_guidance(&mut out, guidance);
    out
}

pub fn completion(state: &SemanticState, guidance: &[String]) -> String {
    let mut out = state_block(state);
    push_guidance(&mut out, guidance);
    out
}

pub fn self_optimize(state: &SemanticState, unresolved: &[String], guidance: &[String]) -> String {
    let p = &state.params;
    let mut out = format!(
        "Question: {}\n\nCurrent strategy:\npersona: {}\nfocus: {}\ntemperature: {}\n",
        state.question,
        if p.persona.is_empty() { "(none)" } else { p.persona.as_str() },
        if p.focus.is_empty() { "(none)" } else { p.focus.as_str() },
        p.temperature
    );
    out.push_str("\nUnresolved uncertainties:\n");
    if unresolved.is_empty() {
        out.push_str("(none)\n");
    }
    for u in unresolved {
        out.push_str(&format!("- {u}\n"));
    }
    out.push_str("\nParent channel summary:\n");
    out.push_str(state.thought.trim());
    push_guidance(&mut out, guidance);
    out
}

pub fn synthesis(parent: &SemanticState, inputs: &[&SemanticState], guidance: &[String]) -> String {
    let mut out = state_block(parent);
    out.push_str("\n\nFindings:\n");
    for (i, s) in inputs.iter().enumerate() {
        out.push_str(&format!(
            "\n[{}] (confidence {})\n{}\n",
            i + 1,
            s.confidence_c.map_or("unknown".to_string(), |c| format!("{c}")),
            s.thought.trim()
        ));
    }
    push_guidance(&mut out, guidance);
    out
}

pub fn extraction(thought: &str) -> String {
    format!("Reasoning:\n{}", thought.trim())
}

pub fn summarize(question: &str, entities: &[String], relations: &[String]) -> String {
    let mut out = format!("Question: {question}\n\nEntities:\n");
    for e in entities {
        out.push_str(&format!("- {e}\n"));
    }
    out.push_str("\nRelations:\n");
    if relations.is_empty() {
        out.push_str("(none)\n");
    }
    for r in relations {
        out.push_str(&format!("- {r}\n"));
    }
    out
}

pub fn drift_primer(question: &str, summaries: &[String], follow_ups: usize) -> String {
    let mut out = format!("Question: {question}\n\nCommunity summaries:\n");
    for (i, s) in summaries.iter().enumerate() {
        out.push_str(&format!("[{}] {}\n", i + 1, s.trim()));
    }
    out.push_str(&format!("\nGive a primer answer and {follow_ups} follow-up queries."));
    out
}

pub fn drift_refine(
    question: &str,
    current_answer: &str,
    follow_up: &str,
    nodes: &[String],
    follow_ups: usize,
) -> String {
    let mut out = format!(
        "Question: {question}\nCurrent answer: {current_answer}\nFollow-up query: {follow_up}\n\nRetrieved entities:\n"
    );
    for n in nodes {
        out.push_str(&format!("- {}\n", n.trim()));
    }
    out.push_str(&format!("\nRefine the answer for this query and give {follow_ups} new follow-up queries."));
    out
}

pub fn drift_reduce(question: &str, primer: &str, findings: &[String]) -> String {
    let mut out = format!("Question: {question}\n\nPrimer answer: {primer}\n\nFindings:\n");
    for (i, f) in findings.iter().enumerate() {
        out.push_str(&format!("[{}] {}\n", i + 1, f.trim()));
    }
    out
}

pub fn trace_extraction(step: &str, prior: &[(String, String, f64)]) -> String {
    let mut out = String::from("Earlier uncertainties:\n");
    if prior.is_empty() {
        out.push_str("(none)\n");
    }
    for (id, desc, level) in prior {
        out.push_str(&format!("- {id}: {desc} (level {level})\n"));
    }
    out.push_str("\nStep:\n");
    out.push_str(step.trim());
    out
}
