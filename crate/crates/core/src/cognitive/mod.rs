//! The recursive, confidence-gated exploration loop.
//!
//! Channel ids encode lineage: the root is `c0`, its children `c0.1 .. c0.b`,
//! flat samples below a leaf `c0.1.1 ..`. Ids are therefore stable no matter
//! how concurrent children interleave. A synthesized state lives on its
//! parent's channel and carries the id `<channel>#syn`.

mod bound;

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::LoopConfig;
use crate::event::{ChannelRole, EventBody};
use crate::gateway::{Message, ModelRequest, Purpose, ToolDescriptor};
use crate::prompts;
use crate::reply::{self, ParamProposal};
use crate::run::{RunContext, RunError};
use crate::state::{init_state, ChannelParams, ChannelResult, CoverageChecklist, OpenUncertainty, SemanticState, MAX_TEMPERATURE};

pub use bound::{call_bound, spawn_bound, CallBound};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionStatus {
    pub terminal: bool,
    pub rationale: String,
}

/// The channel a state belongs to.
pub fn channel_of(state_id: &str) -> &str {
    state_id.split('#').next().unwrap_or(state_id)
}

fn completion_tool() -> ToolDescriptor {
    ToolDescriptor {
        name: prompts::COMPLETE_TOOL.into(),
        description: "Mark this thought channel as finished.".into(),
        parameters: serde_json::json!({
            "type": "object",
            "properties": {"rationale": {"type": "string"}},
            "required": ["rationale"]
        }),
    }
}

/// Runs the loop for one run context.
pub struct Engine {
    ctx: Arc<RunContext>,
    cfg: LoopConfig,
    pool: Option<rayon::ThreadPool>,
}

impl Engine {
    pub fn new(ctx: Arc<RunContext>) -> Result<Self, RunError> {
        let cfg = ctx.config().loop_cfg.clone();
        let pool = if cfg.max_parallel_channels > 1 {
            Some(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(cfg.max_parallel_channels)
                    .thread_name(|i| format!("clio-channel-{i}"))
                    .build()
                    .map_err(|e| RunError::Other(format!("worker pool: {e}")))?,
            )
        } else {
            None
        };
        Ok(Self { ctx, cfg, pool })
    }

    pub fn ctx(&self) -> &Arc<RunContext> {
        &self.ctx
    }

    pub fn loop_config(&self) -> &LoopConfig {
        &self.cfg
    }

    /// Maps `f` over `items` on the worker pool, or in order when parallelism is 1.
    pub fn for_each_par<T, R, F>(&self, items: Vec<T>, f: F) -> Vec<R>
    where
        T: Send,
        R: Send,
        F: Fn(T) -> R + Send + Sync,
    {
        match &self.pool {
            Some(pool) => pool.install(|| items.into_par_iter().map(&f).collect()),
            None => items.into_iter().map(f).collect(),
        }
    }

    fn eval_request(&self, purpose: Purpose, system: &str, user: String, channel: &str) -> ModelRequest {
        ModelRequest::new(vec![Message::system(system), Message::user(user)], 0.0)
            .structured()
            .tagged(purpose, channel)
    }

    /// Asks the model for its confidence in the state and records the
    /// uncertainties it reports.
    pub fn assess_confidence(&self, state: &mut SemanticState) -> Result<f64, RunError> {
        let channel = channel_of(&state.id).to_string();
        let guidance = self.ctx.guidance_for(&channel);
        let req = self.eval_request(
            Purpose::Confidence,
            prompts::CONFIDENCE_SYSTEM,
            prompts::confidence(state, &guidance),
            &channel,
        );
        let parsed = self.ctx.call_structured(&channel, &req, |r| reply::parse_confidence(&r.text))?;
        state.confidence_c = Some(parsed.confidence);
        self.ctx.emit(
            Some(&channel),
            EventBody::Confidence {
                state_id: state.id.clone(),
                confidence: parsed.confidence,
            },
        );
        for note in parsed.uncertainties {
            let id = self
                .ctx
                .record_uncertainty(&channel, note.level, &note.description, &note.addresses)?;
            state.open_uncertainties.retain(|u| !note.addresses.contains(&u.id));
            state.open_uncertainties.push(OpenUncertainty {
                id,
                description: note.description,
                level: note.level,
            });
        }
        Ok(parsed.confidence)
    }

    /// Generates or updates the coverage checklist and opens the completion
    /// gate once the threshold is met. The gate stays open for the channel.
    pub fn compute_coverage(&self, state: &mut SemanticState) -> Result<f64, RunError> {
        let channel = channel_of(&state.id).to_string();
        let guidance = self.ctx.guidance_for(&channel);
        let existing = state.checklist.as_ref().map(|c| c.items.as_slice());
        let req = self.eval_request(
            Purpose::Coverage,
            prompts::COVERAGE_SYSTEM,
            prompts::coverage(state, existing, &guidance),
            &channel,
        );
        let items = self.ctx.call_structured(&channel, &req, |r| reply::parse_checklist(&r.text))?;
        let generated_at_depth = state.checklist.as_ref().map_or(state.depth_d, |c| c.generated_at_depth);
        let checklist = CoverageChecklist {
            items,
            generated_at_depth,
        };
        let coverage = checklist.coverage();
        let addressed = checklist.items.iter().filter(|i| i.addressed).count();
        let total = checklist.items.len();
        state.checklist = Some(checklist);
        state.coverage = Some(coverage);
        state.completion_registered |= coverage >= state.params.coverage_threshold;
        self.ctx.emit(
            Some(&channel),
            EventBody::Coverage {
                state_id: state.id.clone(),
                coverage,
                addressed,
                total,
                registered: state.completion_registered,
            },
        );
        Ok(coverage)
    }

    /// Offers the completion tool when it is registered; terminal iff the model invokes it.
    pub fn check_completion(&self, state: &mut SemanticState) -> Result<CompletionStatus, RunError> {
        if !state.completion_registered {
            return Ok(CompletionStatus {
                terminal: false,
                rationale: "completion not registered".into(),
            });
        }
        let channel = channel_of(&state.id).to_string();
        let guidance = self.ctx.guidance_for(&channel);
        let req = ModelRequest::new(
            vec![
                Message::system(prompts::COMPLETION_SYSTEM),
                Message::user(prompts::completion(state, &guidance)),
            ],
            0.0,
        )
        .with_tools(vec![completion_tool()])
        .tagged(Purpose::Completion, &channel);
        let resp = self.ctx.call(&channel, &req)?;
        let status = match &resp.tool_invocation {
            Some(t) if t.name == prompts::COMPLETE_TOOL => CompletionStatus {
                terminal: true,
                rationale: t
                    .arguments
                    .get("rationale")
                    .and_then(|v| v.as_str())
                    .unwrap_or_default()
                    .to_string(),
            },
            _ => CompletionStatus {
                terminal: false,
                rationale: resp.text.trim().to_string(),
            },
        };
        state.terminal = status.terminal;
        self.ctx.emit(
            Some(&channel),
            EventBody::Completion {
                state_id: state.id.clone(),
                terminal: status.terminal,
                rationale: status.rationale.clone(),
            },
        );
        Ok(status)
    }

    /// Proposes a new strategy for a channel about to run. Persona, focus and
    /// temperature may change; `b`, `D` and `tau` can only shrink.
    pub fn self_optimize(&self, state: &SemanticState, unresolved: &[String]) -> Result<ChannelParams, RunError> {
        let channel = channel_of(&state.id).to_string();
        let guidance = self.ctx.guidance_for(&channel);
        let req = self.eval_request(
            Purpose::SelfOptimize,
            prompts::SELF_OPTIMIZE_SYSTEM,
            prompts::self_optimize(state, unresolved, &guidance),
            &channel,
        );
        let proposal = self
            .ctx
            .call_structured(&channel, &req, |r| reply::parse_param_proposal(&r.text))?;
        let new = apply_proposal(&state.params, &proposal);
        self.ctx.emit(
            Some(&channel),
            EventBody::SelfOptimize {
                old: state.params.clone(),
                new: new.clone(),
            },
        );
        Ok(new)
    }

    /// Spawns, self-optimizes and samples one child with a fresh context.
    fn sample_child(&self, parent: &SemanticState, index: u32, role: ChannelRole) -> Result<SemanticState, RunError> {
        let parent_channel = channel_of(&parent.id);
        let id = format!("{parent_channel}.{index}");
        let depth = parent.depth_d + 1;
        let base = ChannelParams {
            temperature: self.cfg.child_temperature,
            ..parent.params.clone()
        };
        self.ctx.spawn(&id, Some(parent_channel), depth, role, Some(base.clone()))?;
        let summary = parent.summary(self.cfg.summary_chars);
        let unresolved: Vec<String> = parent.open_uncertainties.iter().map(|u| u.description.clone()).collect();
        let seed = SemanticState {
            id: id.clone(),
            question: parent.question.clone(),
            thought: summary.clone(),
            params: base,
            depth_d: depth,
            confidence_c: None,
            coverage: None,
            completion_registered: false,
            parent_id: Some(parent.id.clone()),
            created_at: self.ctx.now(),
            checklist: parent.checklist.clone(),
            open_uncertainties: parent.open_uncertainties.clone(),
            terminal: false,
        };
        let params = self.self_optimize(&seed, &unresolved)?;
        let guidance = self.ctx.guidance_for(&id);
        let req = ModelRequest::new(
            vec![
                Message::system(prompts::SAMPLE_SYSTEM),
                Message::user(prompts::sample(&parent.question, &params, &summary, &unresolved, &guidance)),
            ],
            params.temperature,
        )
        .tagged(Purpose::Sample, &id);
        let resp = self.ctx.call(&id, &req)?;
        let thought = resp.text.trim().to_string();
        self.ctx.emit(
            Some(&id),
            EventBody::Sample {
                state_id: id.clone(),
                parent_id: parent.id.clone(),
                depth,
                thought: thought.clone(),
            },
        );
        Ok(SemanticState {
            thought,
            params,
            created_at: self.ctx.now(),
            ..seed
        })
    }

    /// Samples `n` children of `state`, each with its own context.
    pub fn sample_next(&self, state: &SemanticState, n: u32) -> Result<Vec<SemanticState>, RunError> {
        if n == 0 {
            return Err(RunError::IllegalState("sample_next needs n >= 1".into()));
        }
        self.for_each_par((1..=n).collect(), |i| self.sample_child(state, i, ChannelRole::Child))
            .into_iter()
            .collect()
    }

    /// Merges child findings into one state at the parent's depth.
    pub fn synthesize(&self, results: &[SemanticState], parent: &SemanticState) -> Result<SemanticState, RunError> {
        let channel = channel_of(&parent.id).to_string();
        if results.is_empty() {
            let mut s = parent.clone();
            s.confidence_c = Some(0.0);
            s.thought = format!("{}\n\n[no confident findings]", parent.thought.trim());
            self.ctx.emit(
                Some(&channel),
                EventBody::Synthesis {
                    state_id: s.id.clone(),
                    inputs: Vec::new(),
                    thought: s.thought.clone(),
                    confidence: 0.0,
                    fallback: true,
                },
            );
            return Ok(s);
        }
        let guidance = self.ctx.guidance_for(&channel);
        let inputs: Vec<&SemanticState> = results.iter().collect();
        let req = ModelRequest::new(
            vec![
                Message::system(prompts::SYNTHESIS_SYSTEM),
                Message::user(prompts::synthesis(parent, &inputs, &guidance)),
            ],
            parent.params.temperature,
        )
        .tagged(Purpose::Synthesis, &channel);
        let resp = self.ctx.call(&channel, &req)?;
        let mut s = SemanticState {
            id: format!("{channel}#syn"),
            thought: resp.text.trim().to_string(),
            confidence_c: None,
            coverage: None,
            completion_registered: false,
            terminal: false,
            created_at: self.ctx.now(),
            ..parent.clone()
        };
        let confidence = self.assess_confidence(&mut s)?;
        self.ctx.emit(
            Some(&channel),
            EventBody::Synthesis {
                state_id: s.id.clone(),
                inputs: results.iter().map(|r| r.id.clone()).collect(),
                thought: s.thought.clone(),
                confidence,
                fallback: false,
            },
        );
        Ok(s)
    }

    /// Coverage, then completion (only when registered), then confidence;
    /// stops at the first that qualifies the state.
    fn evaluate(&self, state: &mut SemanticState) -> Result<bool, RunError> {
        self.compute_coverage(state)?;
        if self.check_completion(state)?.terminal {
            return Ok(true);
        }
        let c = self.assess_confidence(state)?;
        Ok(c >= state.params.confidence_threshold_tau)
    }

    /// One level of the loop. `depth` must equal `state.depth_d`.
    ///
    /// A cancelled child subtree contributes nothing; cancellation of this
    /// channel propagates. An exhausted budget makes the channel return what
    /// it has.
    pub fn clio(&self, mut state: SemanticState, depth: u32) -> Result<ChannelResult, RunError> {
        let channel = channel_of(&state.id).to_string();
        debug_assert_eq!(depth, state.depth_d);
        let result = |ctx: &RunContext, states, synthesized| ChannelResult {
            states,
            synthesized,
            call_count: ctx.calls_in_scope(&channel),
        };
        match self.evaluate(&mut state) {
            Ok(true) => return Ok(result(&self.ctx, vec![state], None)),
            Ok(false) => {}
            Err(RunError::BudgetExceeded(_)) => return Ok(result(&self.ctx, Vec::new(), None)),
            Err(e) => return Err(e),
        }

        let b = state.params.branching_factor_b;
        if depth >= state.params.max_depth_D {
            for i in 1..=b {
                let attempt = self
                    .sample_child(&state, i, ChannelRole::Flat)
                    .and_then(|mut child| self.evaluate(&mut child).map(|ok| (ok, child)));
                match attempt {
                    Ok((true, child)) => return Ok(result(&self.ctx, vec![child], None)),
                    Ok((false, _)) => {}
                    Err(RunError::BudgetExceeded(_)) => break,
                    Err(RunError::Cancelled) if !self.ctx.is_cancelled(&channel) => {}
                    Err(e) => return Err(e),
                }
            }
            return Ok(result(&self.ctx, Vec::new(), None));
        }

        let spawned: Vec<Result<SemanticState, RunError>> =
            self.for_each_par((1..=b).collect(), |i| self.sample_child(&state, i, ChannelRole::Child));
        let mut children = Vec::new();
        let mut budget_hit = false;
        for r in spawned {
            match r {
                Ok(c) => children.push(c),
                Err(RunError::BudgetExceeded(_)) => budget_hit = true,
                Err(RunError::Cancelled) if !self.ctx.is_cancelled(&channel) => {}
                Err(e) => return Err(e),
            }
        }
        let child_results = self.for_each_par(children, |c| self.clio(c.clone(), depth + 1));
        let mut union = Vec::new();
        for r in child_results {
            match r {
                Ok(r) => union.extend(contribution(r)),
                Err(RunError::Cancelled) if !self.ctx.is_cancelled(&channel) => {}
                Err(RunError::BudgetExceeded(_)) => budget_hit = true,
                Err(e) => return Err(e),
            }
        }
        if budget_hit && union.is_empty() {
            return Ok(result(&self.ctx, union, None));
        }
        match self.synthesize(&union, &state) {
            Ok(s) => Ok(result(&self.ctx, union, Some(s))),
            Err(RunError::BudgetExceeded(_)) => Ok(result(&self.ctx, union, None)),
            Err(e) => Err(e),
        }
    }

    /// Runs a root channel `root_id` for `question` and returns its result
    /// and answer state, without logging a run-level answer.
    pub fn explore(
        &self,
        question: &str,
        params: ChannelParams,
        root_id: &str,
        role: ChannelRole,
    ) -> Result<(SemanticState, ChannelResult), RunError> {
        let root = init_state(question, params.clone(), root_id, self.ctx.now())?;
        self.ctx.spawn(root_id, None, 0, role, Some(params))?;
        let result = self.clio(root.clone(), 0)?;
        let answer = match result.answer() {
            Some(a) => a.clone(),
            None => {
                let mut fallback = root;
                fallback.confidence_c = Some(0.0);
                fallback
            }
        };
        Ok((answer, result))
    }

    /// Top-level driver: explores from the question and logs the answer.
    pub fn run_channel(&self, question: &str, params: ChannelParams) -> Result<SemanticState, RunError> {
        let root_id = format!("{}c0", crate::run::attempt_prefix(self.ctx.attempt()));
        let (answer, _) = self.explore(question, params, &root_id, ChannelRole::Root)?;
        self.ctx.complete(
            Some(answer.id.clone()),
            &reply::extract_answer(&answer.thought),
            answer.confidence_c,
        )?;
        Ok(answer)
    }
}

/// What a finished child hands to its parent's union: its synthesized state
/// when that is confident, otherwise the states that qualified below it.
fn contribution(r: ChannelResult) -> Vec<SemanticState> {
    match r.synthesized {
        Some(s) if s.qualifies() => vec![s],
        _ => r.states,
    }
}

/// Applies a self-optimization proposal under the safety rail.
pub fn apply_proposal(current: &ChannelParams, p: &ParamProposal) -> ChannelParams {
    let mut next = current.clone();
    if let Some(persona) = &p.persona {
        next.persona = persona.trim().to_string();
    }
    if let Some(focus) = &p.focus {
        next.focus = focus.trim().to_string();
    }
    if let Some(t) = p.temperature {
        next.temperature = t.clamp(0.0, MAX_TEMPERATURE);
    }
    if let Some(b) = p.branching_factor_b {
        next.branching_factor_b = b.clamp(1, current.branching_factor_b);
    }
    if let Some(d) = p.max_depth_d {
        next.max_depth_D = d.min(current.max_depth_D);
    }
    if let Some(tau) = p.confidence_threshold_tau {
        if tau.is_finite() {
            next.confidence_threshold_tau = tau.clamp(0.0, current.confidence_threshold_tau);
        }
    }
    next
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn safety_rail() {
        let cur = ChannelParams::default();
        let p = ParamProposal {
            max_depth_d: Some(99),
            branching_factor_b: Some(0),
            confidence_threshold_tau: Some(0.99),
            temperature: Some(5.0),
            focus: Some("statistical power analysis".into()),
            ..Default::default()
        };
        let next = apply_proposal(&cur, &p);
        assert_eq!(next.max_depth_D, cur.max_depth_D);
        assert_eq!(next.branching_factor_b, 1);
        assert_eq!(next.confidence_threshold_tau, cur.confidence_threshold_tau);
        assert_eq!(next.temperature, MAX_TEMPERATURE);
        assert_eq!(next.focus, "statistical power analysis");
        assert_eq!(apply_proposal(&cur, &ParamProposal::default()), cur);
    }

    #[test]
    fn channel_of_strips_state_suffix() {
        assert_eq!(channel_of("c0.1#syn"), "c0.1");
        assert_eq!(channel_of("c0.1"), "c0.1");
    }
}
