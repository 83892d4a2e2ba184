//! Passive replication on top of the broadcast layer.
//!
//! The leader executes client commands against a speculative state `Θ`,
//! ships the resulting state update through `broadcast`, and every replica
//! applies delivered updates to its committed state `Σ`. Service states
//! are plain `i64` registers.

use std::collections::VecDeque;
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::model::{AppMessage, CommandId, Configuration, Epoch, ProcessId};

pub type ServiceState = i64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Increment,
    Read,
    /// Overwrite the register with a value chosen by the executing leader.
    Assign,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reply {
    Ack,
    Value(i64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StateUpdate {
    Set(i64),
    Nop,
}

impl fmt::Display for StateUpdate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StateUpdate::Set(v) => write!(f, "x<-{v}"),
            StateUpdate::Nop => f.write_str("nop"),
        }
    }
}

pub fn apply(state: ServiceState, delta: StateUpdate) -> ServiceState {
    match delta {
        StateUpdate::Set(v) => v,
        StateUpdate::Nop => state,
    }
}

/// A replicated service: `execute` may consult the injected rng, `apply` is
/// total and deterministic.
pub trait StateMachine {
    fn execute(&self, state: ServiceState, cmd: Command, rng: &mut dyn rand::RngCore)
        -> (Reply, StateUpdate);

    fn apply(&self, state: ServiceState, delta: StateUpdate) -> ServiceState {
        apply(state, delta)
    }

    /// Sequential specification: the post-state if `reply` is a legal
    /// outcome of `cmd` in `state`.
    fn check_step(&self, state: ServiceState, cmd: Command, reply: Reply) -> Option<ServiceState>;

    /// Every post-state reachable by `cmd` from `state`, whatever the reply.
    fn outcomes(&self, state: ServiceState, cmd: Command) -> Vec<ServiceState>;
}

/// Deterministic counter. `Assign` resets to zero.
#[derive(Clone, Copy, Debug, Default)]
pub struct Counter;

impl StateMachine for Counter {
    fn execute(&self, state: ServiceState, cmd: Command, _: &mut dyn rand::RngCore) -> (Reply, StateUpdate) {
        match cmd {
            Command::Increment => (Reply::Ack, StateUpdate::Set(state + 1)),
            Command::Read => (Reply::Value(state), StateUpdate::Nop),
            Command::Assign => (Reply::Value(0), StateUpdate::Set(0)),
        }
    }

    fn check_step(&self, state: ServiceState, cmd: Command, reply: Reply) -> Option<ServiceState> {
        match (cmd, reply) {
            (Command::Increment, Reply::Ack) => Some(state + 1),
            (Command::Read, Reply::Value(v)) if v == state => Some(state),
            (Command::Assign, Reply::Value(0)) => Some(0),
            _ => None,
        }
    }

    fn outcomes(&self, state: ServiceState, cmd: Command) -> Vec<ServiceState> {
        match cmd {
            Command::Increment => vec![state + 1],
            Command::Read => vec![state],
            Command::Assign => vec![0],
        }
    }
}

/// Register whose `Assign` picks a value in `0..RANGE` nondeterministically.
#[derive(Clone, Copy, Debug, Default)]
pub struct RandomRegister;

impl RandomRegister {
    pub const RANGE: i64 = 100;
}

impl StateMachine for RandomRegister {
    fn execute(&self, state: ServiceState, cmd: Command, rng: &mut dyn rand::RngCore) -> (Reply, StateUpdate) {
        match cmd {
            Command::Assign => {
                let v = rng.gen_range(0..Self::RANGE);
                (Reply::Value(v), StateUpdate::Set(v))
            }
            other => Counter.execute(state, other, rng),
        }
    }

    fn check_step(&self, state: ServiceState, cmd: Command, reply: Reply) -> Option<ServiceState> {
        match (cmd, reply) {
            (Command::Assign, Reply::Value(v)) if (0..Self::RANGE).contains(&v) => Some(v),
            (Command::Assign, _) => None,
            (other, r) => Counter.check_step(state, other, r),
        }
    }

    fn outcomes(&self, state: ServiceState, cmd: Command) -> Vec<ServiceState> {
        match cmd {
            Command::Assign => (0..Self::RANGE).collect(),
            other => Counter.outcomes(state, other),
        }
    }
}

/// Scenario-level choice of state machine.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MachineKind {
    #[default]
    Counter,
    RandomRegister,
}

impl MachineKind {
    pub fn machine(self) -> &'static dyn StateMachine {
        match self {
            MachineKind::Counter => &Counter,
            MachineKind::RandomRegister => &RandomRegister,
        }
    }
}

/// The broadcast payload `⟨id, r, δ⟩`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UpdateRecord {
    pub id: CommandId,
    pub reply: Reply,
    pub update: StateUpdate,
}

impl UpdateRecord {
    pub fn encode(&self) -> String {
        serde_json::to_string(self).expect("update records always serialize")
    }

    pub fn decode(payload: &str) -> Option<UpdateRecord> {
        serde_json::from_str(payload).ok()
    }
}

/// What the leader hands to the broadcast layer after executing a command.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LeaderStep {
    pub record: UpdateRecord,
    /// `Θ` right before the command ran.
    pub theta_before: ServiceState,
}

/// Effect of a delivered update: answer the client.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Applied {
    pub id: CommandId,
    pub reply: Reply,
    pub sigma_before: ServiceState,
}

#[derive(Clone, Debug)]
pub struct Replica {
    pub id: ProcessId,
    pub cur_epoch: Option<Epoch>,
    pub cur_leader: Option<ProcessId>,
    pub committed: ServiceState,
    pub speculative: ServiceState,
    machine: MachineKind,
    pending: VecDeque<(CommandId, Command)>,
}

impl Replica {
    pub fn new(id: ProcessId, machine: MachineKind) -> Replica {
        Replica {
            id,
            cur_epoch: None,
            cur_leader: None,
            committed: 0,
            speculative: 0,
            machine,
            pending: VecDeque::new(),
        }
    }

    pub fn is_leader(&self) -> bool {
        self.cur_leader == Some(self.id)
    }

    /// Commands waiting for this replica to become leader.
    pub fn pending(&self) -> usize {
        self.pending.len()
    }

    /// Handles `EXECUTE`. Buffers the command unless this replica is leader.
    pub fn on_execute(
        &mut self,
        id: CommandId,
        cmd: Command,
        rng: &mut dyn rand::RngCore,
    ) -> Option<LeaderStep> {
        if !self.is_leader() {
            self.pending.push_back((id, cmd));
            return None;
        }
        Some(self.execute_now(id, cmd, rng))
    }

    fn execute_now(&mut self, id: CommandId, cmd: Command, rng: &mut dyn rand::RngCore) -> LeaderStep {
        let machine = self.machine.machine();
        let theta_before = self.speculative;
        let (reply, update) = machine.execute(self.speculative, cmd, rng);
        self.speculative = machine.apply(self.speculative, update);
        LeaderStep {
            record: UpdateRecord { id, reply, update },
            theta_before,
        }
    }

    /// Re-evaluates buffered commands after a leadership change.
    pub fn drain_pending(&mut self, rng: &mut dyn rand::RngCore) -> Vec<LeaderStep> {
        if !self.is_leader() {
            return Vec::new();
        }
        let queued: Vec<_> = self.pending.drain(..).collect();
        queued
            .into_iter()
            .map(|(id, cmd)| self.execute_now(id, cmd, rng))
            .collect()
    }

    /// The `deliver` upcall. Payloads that are not update records are
    /// ignored.
    pub fn on_deliver(&mut self, m: &AppMessage) -> Option<Applied> {
        let record = UpdateRecord::decode(&m.payload)?;
        let sigma_before = self.committed;
        self.committed = self.machine.machine().apply(self.committed, record.update);
        Some(Applied {
            id: record.id,
            reply: record.reply,
            sigma_before,
        })
    }

    /// The `conf_changed` upcall.
    pub fn on_conf_changed(&mut self, config: &Configuration, speculative: Option<&[AppMessage]>) {
        self.cur_epoch = Some(config.epoch);
        self.cur_leader = Some(config.leader);
        if config.leader != self.id {
            return;
        }
        let machine = self.machine.machine();
        self.speculative = self.committed;
        for m in speculative.unwrap_or_default() {
            if let Some(record) = UpdateRecord::decode(&m.payload) {
                self.speculative = machine.apply(self.speculative, record.update);
            }
        }
    }
}
