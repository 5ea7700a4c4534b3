//! Worst-case call counts for a loop configuration.

use serde::{Deserialize, Serialize};

/// Calls spent on one evaluated state: coverage, completion, confidence.
pub const CALLS_PER_STATE: u64 = 3;
/// Calls spent creating a child: self-optimization and the sample itself.
pub const CALLS_PER_SPAWN: u64 = 2;
/// Calls spent on a synthesis: the merge and its confidence check.
pub const CALLS_PER_SYNTHESIS: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallBound {
    pub evaluated_states: u64,
    pub spawned_states: u64,
    pub syntheses: u64,
    pub calls: u64,
}

fn geometric(b: u64, from: u32, to: u32) -> u64 {
    (from..=to).map(|k| b.saturating_pow(k)).fold(0u64, u64::saturating_add)
}

/// States created by sampling for branching `b` and depth `d`: the full
/// tree below the root plus `b` flat samples under every leaf.
pub fn spawn_bound(b: u32, d: u32) -> u64 {
    let b = b as u64;
    geometric(b, 1, d).saturating_add(b.saturating_pow(d + 1))
}

/// Upper bound on model calls for one root channel, assuming every
/// structured reply parses on the first ask.
pub fn call_bound(b: u32, d: u32) -> CallBound {
    let bb = b as u64;
    let internal = if d == 0 { 0 } else { geometric(bb, 0, d - 1) };
    let leaves = bb.saturating_pow(d);
    let flat = bb.saturating_pow(d + 1);
    let spawned = spawn_bound(b, d);
    let evaluated = internal + leaves + flat;
    CallBound {
        evaluated_states: evaluated,
        spawned_states: spawned,
        syntheses: internal,
        calls: CALLS_PER_STATE * evaluated + CALLS_PER_SPAWN * spawned + CALLS_PER_SYNTHESIS * internal,
    }
}
