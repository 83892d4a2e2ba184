//! Exhaustive linearizability check for small client histories.
//!
//! Depth-first search over linearization orders that respect real time,
//! pruned by simulating the sequential specification, with memoization
//! of failed `(linearized set, state)` pairs.

use std::collections::{BTreeMap, HashSet};

use crate::model::{Action, CommandId, History, ProcessId};
use crate::replication::{Command, Reply, ServiceState, StateMachine};

pub const MAX_OPS: usize = 12;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Operation {
    pub id: CommandId,
    pub client: ProcessId,
    pub command: Command,
    /// `None` for calls that never returned.
    pub reply: Option<Reply>,
    pub invoked: usize,
    pub returned: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Linearization {
    /// Operation ids in a legal sequential order.
    Witness(Vec<CommandId>),
    NotLinearizable,
    NotEvaluated(String),
}

/// Client operations recorded as `invoke`/`respond` pairs.
pub fn operations(h: &History) -> Vec<Operation> {
    let mut ops: BTreeMap<CommandId, Operation> = BTreeMap::new();
    for e in h.entries() {
        match &e.action {
            Action::Invoke { id, command } => {
                ops.entry(*id).or_insert(Operation {
                    id: *id,
                    client: e.process,
                    command: *command,
                    reply: None,
                    invoked: e.index,
                    returned: None,
                });
            }
            Action::Respond { id, reply } => {
                if let Some(op) = ops.get_mut(id) {
                    if op.returned.is_none() {
                        op.reply = Some(*reply);
                        op.returned = Some(e.index);
                    }
                }
            }
            _ => {}
        }
    }
    let mut v: Vec<Operation> = ops.into_values().collect();
    v.sort_by_key(|o| o.invoked);
    v
}

/// Completed operations must all be linearized; pending ones may take
/// effect or not.
pub fn check(ops: &[Operation], machine: &dyn StateMachine, initial: ServiceState) -> Linearization {
    if ops.len() > MAX_OPS {
        return Linearization::NotEvaluated(format!("{} operations exceed the limit of {MAX_OPS}", ops.len()));
    }
    let n = ops.len();
    let completed: u32 = (0..n).filter(|i| ops[*i].returned.is_some()).fold(0, |m, i| m | (1 << i));
    // must_precede[i]: completed ops that returned before op i was invoked
    let must_precede: Vec<u32> = (0..n)
        .map(|i| {
            (0..n)
                .filter(|j| matches!(ops[*j].returned, Some(r) if r < ops[i].invoked))
                .fold(0, |m, j| m | (1 << j))
        })
        .collect();
    let mut failed: HashSet<(u32, ServiceState)> = HashSet::new();
    let mut order = Vec::new();
    if search(ops, machine, completed, &must_precede, 0, initial, &mut failed, &mut order) {
        Linearization::Witness(order.into_iter().map(|i| ops[i].id).collect())
    } else {
        Linearization::NotLinearizable
    }
}

#[allow(clippy::too_many_arguments)]
fn search(
    ops: &[Operation],
    machine: &dyn StateMachine,
    completed: u32,
    must_precede: &[u32],
    done: u32,
    state: ServiceState,
    failed: &mut HashSet<(u32, ServiceState)>,
    order: &mut Vec<usize>,
) -> bool {
    if done & completed == completed {
        return true;
    }
    if failed.contains(&(done, state)) {
        return false;
    }
    for i in 0..ops.len() {
        let bit = 1 << i;
        if done & bit != 0 || must_precede[i] & !done != 0 {
            continue;
        }
        let next_states = match ops[i].reply {
            Some(r) => machine.check_step(state, ops[i].command, r).into_iter().collect(),
            None => machine.outcomes(state, ops[i].command),
        };
        for s in next_states {
            order.push(i);
            if search(ops, machine, completed, must_precede, done | bit, s, failed, order) {
                return true;
            }
            order.pop();
        }
    }
    failed.insert((done, state));
    false
}
