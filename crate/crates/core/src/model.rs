//! Shared domain vocabulary: process identifiers, epochs, configurations,
//! application and wire messages, and the global history of externally
//! visible actions.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

/// A process in the universe of processes. Never reused within a run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ProcessId(pub u32);

impl fmt::Display for ProcessId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "p{}", self.0)
    }
}

/// Configuration epoch. Configurations carry epochs `>= 0`; node-local
/// counters may hold `-1` before initialization.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Epoch(pub i64);

impl Epoch {
    pub const ZERO: Epoch = Epoch(0);
    pub const NONE: Epoch = Epoch(-1);

    pub fn next(self) -> Epoch {
        Epoch(self.0 + 1)
    }

    pub fn prev(self) -> Epoch {
        Epoch(self.0 - 1)
    }
}

impl fmt::Display for Epoch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// `⟨epoch, members, leader⟩`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Configuration {
    pub epoch: Epoch,
    pub members: BTreeSet<ProcessId>,
    pub leader: ProcessId,
}

impl Configuration {
    pub fn new(
        epoch: Epoch,
        members: impl IntoIterator<Item = ProcessId>,
        leader: ProcessId,
    ) -> Configuration {
        Configuration {
            epoch,
            members: members.into_iter().collect(),
            leader,
        }
    }

    /// Checks the structural invariants: leader is a member, the member set
    /// is non-empty and the epoch is non-negative.
    pub fn is_well_formed(&self) -> bool {
        self.epoch.0 >= 0 && !self.members.is_empty() && self.members.contains(&self.leader)
    }

    pub fn followers(&self) -> impl Iterator<Item = ProcessId> + '_ {
        let leader = self.leader;
        self.members.iter().copied().filter(move |p| *p != leader)
    }
}

impl fmt::Display for Configuration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "<{}, {{", self.epoch)?;
        for (i, p) in self.members.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{p}")?;
        }
        write!(f, "}}, {}>", self.leader)
    }
}

/// Identity of an application message: the broadcasting origin and its
/// per-origin counter.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct MsgId {
    pub origin: ProcessId,
    pub seq: u64,
}

impl fmt::Display for MsgId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}#{}", self.origin, self.seq)
    }
}

/// An application message. Identity is `(origin, seq)`; payloads may repeat.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AppMessage {
    pub origin: ProcessId,
    pub seq: u64,
    pub payload: String,
}

impl AppMessage {
    pub fn id(&self) -> MsgId {
        MsgId {
            origin: self.origin,
            seq: self.seq,
        }
    }
}

/// Per-origin counters realizing the uniqueness of broadcast messages.
#[derive(Clone, Debug, Default)]
pub struct MessageFactory {
    counters: BTreeMap<ProcessId, u64>,
}

impl MessageFactory {
    pub fn new() -> MessageFactory {
        MessageFactory::default()
    }

    pub fn fresh_message(&mut self, origin: ProcessId, payload: impl Into<String>) -> AppMessage {
        let counter = self.counters.entry(origin).or_insert(0);
        let seq = *counter;
        *counter += 1;
        AppMessage {
            origin,
            seq,
            payload: payload.into(),
        }
    }
}

/// A message log: positions are 0-based, holes are `None`.
pub type Log = Vec<Option<AppMessage>>;

/// Unique identifier of a replicated-service command.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CommandId {
    pub origin: ProcessId,
    pub seq: u64,
}

impl fmt::Display for CommandId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "c{}#{}", self.origin.0, self.seq)
    }
}

/// Wire messages exchanged between processes.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProtocolMessage {
    Forward(AppMessage),
    Accept {
        epoch: Epoch,
        pos: u64,
        msg: AppMessage,
    },
    AcceptAck {
        epoch: Epoch,
        pos: u64,
    },
    Commit {
        epoch: Epoch,
        pos: u64,
    },
    Probe {
        new_epoch: Epoch,
        epoch: Epoch,
    },
    ProbeAck {
        initialized: bool,
        new_epoch: Epoch,
    },
    NewConfig {
        epoch: Epoch,
        members: BTreeSet<ProcessId>,
    },
    NewState {
        epoch: Epoch,
        log: Log,
        members: BTreeSet<ProcessId>,
    },
    NewStateAck {
        epoch: Epoch,
    },
    Execute {
        id: CommandId,
        command: crate::replication::Command,
    },
    Result {
        id: CommandId,
        reply: crate::replication::Reply,
    },
}

/// Discriminant of a [`ProtocolMessage`], used by crash triggers and logs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum MessageKind {
    Forward,
    Accept,
    AcceptAck,
    Commit,
    Probe,
    ProbeAck,
    NewConfig,
    NewState,
    NewStateAck,
    Execute,
    Result,
}

impl MessageKind {
    pub fn name(self) -> &'static str {
        match self {
            MessageKind::Forward => "FORWARD",
            MessageKind::Accept => "ACCEPT",
            MessageKind::AcceptAck => "ACCEPT_ACK",
            MessageKind::Commit => "COMMIT",
            MessageKind::Probe => "PROBE",
            MessageKind::ProbeAck => "PROBE_ACK",
            MessageKind::NewConfig => "NEW_CONFIG",
            MessageKind::NewState => "NEW_STATE",
            MessageKind::NewStateAck => "NEW_STATE_ACK",
            MessageKind::Execute => "EXECUTE",
            MessageKind::Result => "RESULT",
        }
    }
}

impl ProtocolMessage {
    pub fn kind(&self) -> MessageKind {
        match self {
            ProtocolMessage::Forward(_) => MessageKind::Forward,
            ProtocolMessage::Accept { .. } => MessageKind::Accept,
            ProtocolMessage::AcceptAck { .. } => MessageKind::AcceptAck,
            ProtocolMessage::Commit { .. } => MessageKind::Commit,
            ProtocolMessage::Probe { .. } => MessageKind::Probe,
            ProtocolMessage::ProbeAck { .. } => MessageKind::ProbeAck,
            ProtocolMessage::NewConfig { .. } => MessageKind::NewConfig,
            ProtocolMessage::NewState { .. } => MessageKind::NewState,
            ProtocolMessage::NewStateAck { .. } => MessageKind::NewStateAck,
            ProtocolMessage::Execute { .. } => MessageKind::Execute,
            ProtocolMessage::Result { .. } => MessageKind::Result,
        }
    }
}

/// Compact rendering used in message-flow logs, e.g. `PROBE_ACK(false,3)`.
impl fmt::Display for ProtocolMessage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ProtocolMessage::Forward(m) => write!(f, "FORWARD({})", m.id()),
            ProtocolMessage::Accept { epoch, pos, msg } => {
                write!(f, "ACCEPT({epoch},{pos},{})", msg.id())
            }
            ProtocolMessage::AcceptAck { epoch, pos } => write!(f, "ACCEPT_ACK({epoch},{pos})"),
            ProtocolMessage::Commit { epoch, pos } => write!(f, "COMMIT({epoch},{pos})"),
            ProtocolMessage::Probe { new_epoch, epoch } => write!(f, "PROBE({new_epoch},{epoch})"),
            ProtocolMessage::ProbeAck {
                initialized,
                new_epoch,
            } => write!(f, "PROBE_ACK({initialized},{new_epoch})"),
            ProtocolMessage::NewConfig { epoch, members } => {
                write!(f, "NEW_CONFIG({epoch},{})", render_set(members))
            }
            ProtocolMessage::NewState {
                epoch,
                log,
                members,
            } => {
                write!(f, "NEW_STATE({epoch},[")?;
                for (i, slot) in log.iter().enumerate() {
                    if i > 0 {
                        write!(f, ",")?;
                    }
                    match slot {
                        Some(m) => write!(f, "{}", m.id())?,
                        None => write!(f, "_")?,
                    }
                }
                write!(f, "],{})", render_set(members))
            }
            ProtocolMessage::NewStateAck { epoch } => write!(f, "NEW_STATE_ACK({epoch})"),
            ProtocolMessage::Execute { id, command } => write!(f, "EXECUTE({id},{command:?})"),
            ProtocolMessage::Result { id, reply } => write!(f, "RESULT({id},{reply:?})"),
        }
    }
}

fn render_set(members: &BTreeSet<ProcessId>) -> String {
    let inner: Vec<String> = members.iter().map(|p| p.to_string()).collect();
    format!("{{{}}}", inner.join(","))
}

/// An externally visible event recorded in the history.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Action {
    Broadcast(AppMessage),
    Deliver(AppMessage),
    /// `speculative` is present only for speculative primary-order runs.
    ConfChanged {
        config: Configuration,
        speculative: Option<Vec<AppMessage>>,
    },
    ReconfigReq,
    ReconfigResp(Option<Configuration>),
    Introduction(Configuration),
    /// A client submitted a command to the replicated service.
    Invoke {
        id: CommandId,
        command: crate::replication::Command,
    },
    /// A client received the first result for a command.
    Respond {
        id: CommandId,
        reply: crate::replication::Reply,
    },
}

impl Action {
    pub fn name(&self) -> &'static str {
        match self {
            Action::Broadcast(_) => "broadcast",
            Action::Deliver(_) => "deliver",
            Action::ConfChanged { .. } => "conf_changed",
            Action::ReconfigReq => "reconfig_req",
            Action::ReconfigResp(_) => "reconfig_resp",
            Action::Introduction(_) => "introduction",
            Action::Invoke { .. } => "invoke",
            Action::Respond { .. } => "respond",
        }
    }
}

/// One history entry. `index` is 1-based and dense.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Entry {
    pub index: usize,
    pub process: ProcessId,
    pub time: u64,
    pub action: Action,
}

/// Global, append-only sequence of actions in the simulator's commit order.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct History {
    entries: Vec<Entry>,
}

impl History {
    pub fn new() -> History {
        History::default()
    }

    /// Appends an action and returns its 1-based index.
    pub fn push(&mut self, process: ProcessId, time: u64, action: Action) -> usize {
        let index = self.entries.len() + 1;
        self.entries.push(Entry {
            index,
            process,
            time,
            action,
        });
        index
    }

    /// Builds a history from raw entries, re-checking index density.
    pub fn from_entries(entries: Vec<Entry>) -> Result<History, crate::Error> {
        for (i, e) in entries.iter().enumerate() {
            if e.index != i + 1 {
                return Err(crate::Error::Trace(format!(
                    "history index {} at position {} (indices must be dense from 1)",
                    e.index,
                    i + 1
                )));
            }
        }
        Ok(History { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[Entry] {
        &self.entries
    }

    /// The 1-based `k`-th entry.
    pub fn get(&self, k: usize) -> Option<&Entry> {
        k.checked_sub(1).and_then(|i| self.entries.get(i))
    }

    /// Epoch of the latest `conf_changed` at the same process strictly before
    /// index `k`; `None` when there is none or `k` is out of range.
    pub fn epoch_of(&self, k: usize) -> Option<Epoch> {
        let target = self.get(k)?;
        self.entries[..k - 1]
            .iter()
            .rev()
            .filter(|e| e.process == target.process)
            .find_map(|e| match &e.action {
                Action::ConfChanged { config, .. } => Some(config.epoch),
                _ => None,
            })
    }

    /// `epoch_of` for every index in one pass (slot 0 unused).
    pub fn epochs(&self) -> Vec<Option<Epoch>> {
        let mut current: BTreeMap<ProcessId, Epoch> = BTreeMap::new();
        let mut out = Vec::with_capacity(self.entries.len() + 1);
        out.push(None);
        for e in &self.entries {
            out.push(current.get(&e.process).copied());
            if let Action::ConfChanged { config, .. } = &e.action {
                current.insert(e.process, config.epoch);
            }
        }
        out
    }
}
