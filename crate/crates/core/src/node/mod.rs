//! The per-process protocol state machine.
//!
//! Every handler is a guard plus a body. A received message whose guard is
//! false is buffered and retried after each local transition; it is dropped
//! once its guard can never become true again.

pub mod reconfig;

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::Serialize;

use crate::model::{Action, AppMessage, Configuration, Epoch, Log, MsgId, ProcessId, ProtocolMessage};
use crate::modes::{self, FollowerActivation, LeaderActivation, Mode, Mutant};
use crate::{Error, Result};

pub use reconfig::{CsCall, CsReply, ReconfigRequest, ReconfigTask, TaskEffect};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Status {
    Leader,
    Follower,
    Fresh,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NodeState {
    pub epoch: Epoch,
    pub new_epoch: Epoch,
    pub next: u64,
    pub init_len: i64,
    pub last_delivered: i64,
    pub members: BTreeSet<ProcessId>,
    pub leader: Option<ProcessId>,
    pub msg: Log,
    pub status: Status,
}

impl NodeState {
    pub fn fresh() -> NodeState {
        NodeState {
            epoch: Epoch::ZERO,
            new_epoch: Epoch::ZERO,
            next: 0,
            init_len: -1,
            last_delivered: -1,
            members: BTreeSet::new(),
            leader: None,
            msg: Vec::new(),
            status: Status::Fresh,
        }
    }

    /// Highest non-empty position, or -1.
    pub fn highest_filled(&self) -> i64 {
        self.msg.iter().rposition(Option::is_some).map_or(-1, |i| i as i64)
    }

    fn store(&mut self, k: u64, m: AppMessage) {
        let k = k as usize;
        if self.msg.len() <= k {
            self.msg.resize(k + 1, None);
        }
        self.msg[k] = Some(m);
    }

    pub fn ids(&self, upto: usize) -> Vec<Option<MsgId>> {
        self.msg
            .iter()
            .take(upto)
            .map(|s| s.as_ref().map(AppMessage::id))
            .collect()
    }
}

/// Acknowledgements collected by a leader for its current epoch.
#[derive(Clone, Debug, Default)]
pub struct AckTracker {
    epoch: Option<Epoch>,
    accept: BTreeMap<u64, BTreeSet<ProcessId>>,
    committed: BTreeSet<u64>,
    new_state: BTreeSet<ProcessId>,
    replayed: bool,
}

impl AckTracker {
    fn sync(&mut self, epoch: Epoch) {
        if self.epoch != Some(epoch) {
            *self = AckTracker {
                epoch: Some(epoch),
                ..AckTracker::default()
            };
        }
    }
}

/// Facts about protocol-internal steps, consumed by monitors and metrics.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Observation {
    /// The leader took a message into its log (FORWARD or leader broadcast).
    Appended { epoch: Epoch, pos: u64, msg: MsgId },
    /// ACCEPT sent; `prefix` is `msg[0..=pos]` at that moment.
    AcceptSent { epoch: Epoch, pos: u64, msg: MsgId, prefix: Vec<Option<MsgId>> },
    AcceptHandled { epoch: Epoch, pos: u64 },
    CommitSent { epoch: Epoch, pos: u64, msg: Option<MsgId> },
    Delivered { epoch: Epoch, pos: u64, msg: MsgId },
    /// About to handle NEW_CONFIG; `prior_epoch` is the epoch right before.
    NewConfigHandled { epoch: Epoch, prior_epoch: Epoch },
    NewStateSent { epoch: Epoch, log: Vec<Option<MsgId>> },
    NewStateHandled { epoch: Epoch },
    /// The leader of `epoch` may broadcast from now on.
    Ready { epoch: Epoch },
    ProbingStarted { new_epoch: Epoch },
    /// A reconfiguration task took a step.
    TaskStep,
    ProbeUnderflow,
    /// COMMIT for an empty slot reached the delivery guard.
    HoleCommitted { epoch: Epoch, pos: u64 },
}

/// Everything a node asks its host to do after a step.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Output {
    Send(ProcessId, ProtocolMessage),
    Emit(Action),
    Call(CsCall),
    Note(Observation),
}

enum Step {
    Done,
    Blocked(ProtocolMessage),
    Dropped,
}

#[derive(Clone, Debug)]
enum Pending {
    Leader(Configuration),
    Follower(Configuration, i64),
}

#[derive(Clone, Debug)]
pub struct Node {
    pub id: ProcessId,
    pub mode: Mode,
    pub mutant: Option<Mutant>,
    pub state: NodeState,
    ready: bool,
    acks: AckTracker,
    buffer: VecDeque<(ProcessId, ProtocolMessage)>,
    activation: Option<Pending>,
    task: Option<ReconfigTask>,
    queued: VecDeque<ReconfigRequest>,
}

impl Node {
    /// A process that belongs to the bootstrap configuration or starts FRESH.
    pub fn new(id: ProcessId, mode: Mode, mutant: Option<Mutant>, initial: &Configuration) -> Node {
        let mut state = NodeState::fresh();
        let mut ready = false;
        if initial.members.contains(&id) {
            state.epoch = initial.epoch;
            state.new_epoch = initial.epoch;
            state.members = initial.members.clone();
            state.leader = Some(initial.leader);
            state.status = if initial.leader == id {
                ready = true;
                Status::Leader
            } else {
                Status::Follower
            };
        }
        Node {
            id,
            mode,
            mutant,
            state,
            ready,
            acks: AckTracker::default(),
            buffer: VecDeque::new(),
            activation: None,
            task: None,
            queued: VecDeque::new(),
        }
    }

    /// Whether this node can broadcast in its mode.
    pub fn is_ready_leader(&self) -> bool {
        self.state.status == Status::Leader && self.ready
    }

    pub fn buffered(&self) -> usize {
        self.buffer.len()
    }

    pub fn has_active_task(&self) -> bool {
        self.task.is_some()
    }

    /// Reconfiguration requests waiting behind the active one.
    pub fn queued_requests(&self) -> usize {
        self.queued.len()
    }

    /// The application's `broadcast(m)`.
    pub fn broadcast(&mut self, m: AppMessage, out: &mut Vec<Output>) -> Result<()> {
        if self.mode.leader_only_broadcast() {
            if !self.is_ready_leader() {
                return Err(Error::NotLeader(self.id));
            }
            out.push(Output::Emit(Action::Broadcast(m.clone())));
            self.append(m, out);
        } else {
            let leader = self.state.leader.ok_or(Error::NoLeader(self.id))?;
            out.push(Output::Emit(Action::Broadcast(m.clone())));
            out.push(Output::Send(leader, ProtocolMessage::Forward(m)));
            return Ok(());
        }
        self.settle(out);
        Ok(())
    }

    /// Handles one incoming message, then retries buffered ones.
    pub fn receive(&mut self, from: ProcessId, msg: ProtocolMessage, out: &mut Vec<Output>) {
        match self.step(from, msg, out) {
            Step::Done => self.settle(out),
            Step::Blocked(msg) => self.buffer.push_back((from, msg)),
            Step::Dropped => {}
        }
    }

    /// The application's `reconfigure`. Calls from one process run one at
    /// a time; later ones wait for the active call to return.
    pub fn reconfigure(&mut self, request: ReconfigRequest, out: &mut Vec<Output>) {
        if self.task.is_some() {
            self.queued.push_back(request);
            return;
        }
        self.start_task(request, out);
    }

    pub fn on_cs_reply(&mut self, reply: CsReply, out: &mut Vec<Output>) {
        let Some(task) = self.task.as_mut() else { return };
        let fx = task.on_cs_reply(reply);
        self.apply_task_effects(fx, out);
        self.settle(out);
    }

    fn start_task(&mut self, request: ReconfigRequest, out: &mut Vec<Output>) {
        out.push(Output::Emit(Action::ReconfigReq));
        let (task, fx) = ReconfigTask::start(request, self.mutant);
        self.task = Some(task);
        self.apply_task_effects(fx, out);
    }

    fn apply_task_effects(&mut self, fx: Vec<TaskEffect>, out: &mut Vec<Output>) {
        out.push(Output::Note(Observation::TaskStep));
        for f in fx {
            match f {
                TaskEffect::Send(to, m) => out.push(Output::Send(to, m)),
                TaskEffect::Call(c) => out.push(Output::Call(c)),
                TaskEffect::ProbingStarted(e) => {
                    out.push(Output::Note(Observation::ProbingStarted { new_epoch: e }))
                }
                TaskEffect::Underflow => out.push(Output::Note(Observation::ProbeUnderflow)),
                TaskEffect::Finished(result) => {
                    out.push(Output::Emit(Action::ReconfigResp(result)));
                    self.task = None;
                    if let Some(next) = self.queued.pop_front() {
                        self.start_task(next, out);
                    }
                    return;
                }
            }
        }
    }

    fn step(&mut self, from: ProcessId, msg: ProtocolMessage, out: &mut Vec<Output>) -> Step {
        let s = &self.state;
        match msg {
            ProtocolMessage::Forward(m) => {
                if self.mode.leader_only_broadcast() {
                    return Step::Dropped;
                }
                if s.leader != Some(self.id) {
                    return Step::Blocked(ProtocolMessage::Forward(m));
                }
                self.append(m, out);
                Step::Done
            }
            ProtocolMessage::Accept { epoch, pos, msg } => {
                if epoch < s.epoch {
                    return Step::Dropped;
                }
                if s.status != Status::Follower || s.epoch != epoch {
                    return Step::Blocked(ProtocolMessage::Accept { epoch, pos, msg });
                }
                self.state.store(pos, msg);
                out.push(Output::Send(from, ProtocolMessage::AcceptAck { epoch, pos }));
                out.push(Output::Note(Observation::AcceptHandled { epoch, pos }));
                Step::Done
            }
            ProtocolMessage::AcceptAck { epoch, pos } => {
                if epoch != s.epoch || s.status != Status::Leader {
                    return Step::Dropped;
                }
                self.acks.sync(epoch);
                self.acks.accept.entry(pos).or_default().insert(from);
                Step::Done
            }
            ProtocolMessage::Commit { epoch, pos } => {
                if epoch < s.epoch || (epoch == s.epoch && (pos as i64) <= s.last_delivered) {
                    return Step::Dropped;
                }
                let enabled = matches!(s.status, Status::Leader | Status::Follower)
                    && epoch == s.epoch
                    && pos as i64 == s.last_delivered + 1;
                if !enabled {
                    return Step::Blocked(ProtocolMessage::Commit { epoch, pos });
                }
                match s.msg.get(pos as usize).cloned().flatten() {
                    Some(m) => {
                        self.state.last_delivered = pos as i64;
                        out.push(Output::Note(Observation::Delivered { epoch, pos, msg: m.id() }));
                        out.push(Output::Emit(Action::Deliver(m)));
                        Step::Done
                    }
                    None => {
                        out.push(Output::Note(Observation::HoleCommitted { epoch, pos }));
                        Step::Dropped
                    }
                }
            }
            ProtocolMessage::Probe { new_epoch, epoch } => {
                if new_epoch < s.new_epoch {
                    return Step::Dropped;
                }
                self.state.new_epoch = new_epoch;
                let initialized = self.state.epoch >= epoch;
                out.push(Output::Send(
                    from,
                    ProtocolMessage::ProbeAck {
                        initialized,
                        new_epoch,
                    },
                ));
                Step::Done
            }
            ProtocolMessage::ProbeAck {
                initialized,
                new_epoch,
            } => {
                let Some(task) = self.task.as_mut() else {
                    return Step::Dropped;
                };
                let fx = task.on_probe_ack(from, initialized, new_epoch);
                if !fx.is_empty() {
                    self.apply_task_effects(fx, out);
                }
                Step::Done
            }
            ProtocolMessage::NewConfig { epoch, members } => {
                if s.new_epoch > epoch {
                    return Step::Dropped;
                }
                if s.new_epoch < epoch {
                    return Step::Blocked(ProtocolMessage::NewConfig { epoch, members });
                }
                self.on_new_config(epoch, members, out);
                Step::Done
            }
            ProtocolMessage::NewState {
                epoch,
                log,
                members,
            } => {
                if s.new_epoch > epoch {
                    return Step::Dropped;
                }
                self.on_new_state(from, epoch, log, members, out);
                Step::Done
            }
            ProtocolMessage::NewStateAck { epoch } => {
                if epoch != s.epoch || s.status != Status::Leader {
                    return Step::Dropped;
                }
                self.acks.sync(epoch);
                self.acks.new_state.insert(from);
                Step::Done
            }
            // Application-level messages are routed to the replica by the host.
            ProtocolMessage::Execute { .. } | ProtocolMessage::Result { .. } => Step::Dropped,
        }
    }

    fn append(&mut self, m: AppMessage, out: &mut Vec<Output>) {
        let epoch = self.state.epoch;
        let pos = self.state.next;
        let id = m.id();
        self.state.store(pos, m.clone());
        out.push(Output::Note(Observation::Appended { epoch, pos, msg: id }));
        out.push(Output::Note(Observation::AcceptSent {
            epoch,
            pos,
            msg: id,
            prefix: self.state.ids(pos as usize + 1),
        }));
        for q in self.state.members.iter().filter(|q| **q != self.id) {
            out.push(Output::Send(
                *q,
                ProtocolMessage::Accept {
                    epoch,
                    pos,
                    msg: m.clone(),
                },
            ));
        }
        self.state.next += 1;
        self.acks.sync(epoch);
        self.acks.accept.entry(pos).or_default();
    }

    fn on_new_config(&mut self, epoch: Epoch, members: BTreeSet<ProcessId>, out: &mut Vec<Output>) {
        out.push(Output::Note(Observation::NewConfigHandled {
            epoch,
            prior_epoch: self.state.epoch,
        }));
        let s = &mut self.state;
        s.status = Status::Leader;
        s.epoch = epoch;
        s.members = members.clone();
        s.leader = Some(self.id);
        let top = s.highest_filled();
        s.next = (top + 1) as u64;
        s.init_len = top;
        s.msg.truncate(s.next as usize);
        self.acks.sync(epoch);
        let config = Configuration {
            epoch,
            members: members.clone(),
            leader: self.id,
        };
        match modes::leader_activation(self.mode, &config, &s.msg, s.last_delivered, s.init_len) {
            LeaderActivation::Immediate(action) => {
                self.activation = None;
                self.ready = true;
                out.push(Output::Emit(action));
                out.push(Output::Note(Observation::Ready { epoch }));
            }
            LeaderActivation::Deferred => {
                self.ready = false;
                self.activation = Some(Pending::Leader(config));
            }
        }
        out.push(Output::Note(Observation::NewStateSent {
            epoch,
            log: self.state.ids(self.state.msg.len()),
        }));
        for q in members.iter().filter(|q| **q != self.id) {
            out.push(Output::Send(
                *q,
                ProtocolMessage::NewState {
                    epoch,
                    log: self.state.msg.clone(),
                    members: members.clone(),
                },
            ));
        }
    }

    fn on_new_state(
        &mut self,
        from: ProcessId,
        epoch: Epoch,
        log: Log,
        members: BTreeSet<ProcessId>,
        out: &mut Vec<Output>,
    ) {
        let s = &mut self.state;
        s.status = Status::Follower;
        s.epoch = epoch;
        s.new_epoch = epoch;
        s.msg = log;
        s.leader = Some(from);
        s.members = members.clone();
        self.ready = false;
        self.acks.sync(epoch);
        let inherited = s.highest_filled();
        let config = Configuration {
            epoch,
            members,
            leader: from,
        };
        match modes::follower_activation(self.mode, &config, inherited, self.mutant) {
            FollowerActivation::Immediate(action) => {
                self.activation = None;
                out.push(Output::Emit(action));
            }
            FollowerActivation::DeliverUpTo(target) => {
                self.activation = Some(Pending::Follower(config, target));
            }
        }
        out.push(Output::Send(from, ProtocolMessage::NewStateAck { epoch }));
        out.push(Output::Note(Observation::NewStateHandled { epoch }));
    }

    /// Fires aggregate guards (commit, replay, deferred activation), then
    /// retries buffered messages until nothing changes.
    fn settle(&mut self, out: &mut Vec<Output>) {
        loop {
            self.fire_aggregates(out);
            let mut progressed = false;
            let mut i = 0;
            while i < self.buffer.len() {
                let (from, msg) = self.buffer.remove(i).expect("index in range");
                match self.step(from, msg, out) {
                    Step::Done => {
                        progressed = true;
                        self.fire_aggregates(out);
                        i = 0;
                    }
                    Step::Blocked(msg) => {
                        self.buffer.insert(i, (from, msg));
                        i += 1;
                    }
                    Step::Dropped => {}
                }
            }
            if !progressed {
                break;
            }
        }
    }

    fn fire_aggregates(&mut self, out: &mut Vec<Output>) {
        let id = self.id;
        let s = &self.state;
        if s.status == Status::Leader {
            self.acks.sync(s.epoch);
            let followers: BTreeSet<ProcessId> = s.members.iter().copied().filter(|q| *q != id).collect();
            let ready: Vec<u64> = self
                .acks
                .accept
                .iter()
                .filter(|(k, acks)| !self.acks.committed.contains(k) && followers.is_subset(acks))
                .map(|(k, _)| *k)
                .collect();
            for k in ready {
                self.acks.committed.insert(k);
                self.send_commit(k, out);
            }
            let s = &self.state;
            let init_len = s.init_len;
            if !self.acks.replayed && s.new_epoch == s.epoch && followers.is_subset(&self.acks.new_state) {
                self.acks.replayed = true;
                if self.mutant != Some(Mutant::NoCommitReplay) {
                    for k in 0..=init_len {
                        self.send_commit(k as u64, out);
                    }
                }
            }
        }
        self.check_activation(out);
    }

    fn send_commit(&mut self, k: u64, out: &mut Vec<Output>) {
        let s = &self.state;
        let epoch = s.epoch;
        out.push(Output::Note(Observation::CommitSent {
            epoch,
            pos: k,
            msg: s.msg.get(k as usize).cloned().flatten().map(|m| m.id()),
        }));
        for q in &s.members {
            out.push(Output::Send(*q, ProtocolMessage::Commit { epoch, pos: k }));
        }
    }

    fn check_activation(&mut self, out: &mut Vec<Output>) {
        let fire = match &self.activation {
            None => return,
            Some(Pending::Leader(c)) => {
                c.epoch == self.state.epoch
                    && self.acks.replayed
                    && (self.mutant == Some(Mutant::NoCommitReplay)
                        || self.state.last_delivered >= self.state.init_len)
            }
            Some(Pending::Follower(c, target)) => {
                c.epoch == self.state.epoch && self.state.last_delivered >= *target
            }
        };
        if !fire {
            return;
        }
        let (config, leader) = match self.activation.take() {
            Some(Pending::Leader(c)) => (c, true),
            Some(Pending::Follower(c, _)) => (c, false),
            None => unreachable!(),
        };
        let epoch = config.epoch;
        out.push(Output::Emit(Action::ConfChanged {
            config,
            speculative: None,
        }));
        if leader {
            self.ready = true;
            out.push(Output::Note(Observation::Ready { epoch }));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(i: u32) -> ProcessId {
        ProcessId(i)
    }

    fn m(seq: u64) -> AppMessage {
        AppMessage {
            origin: p(9),
            seq,
            payload: format!("m{seq}"),
        }
    }

    fn c0() -> Configuration {
        Configuration::new(Epoch(0), [p(1), p(2), p(3)], p(3))
    }

    fn sends(out: &[Output]) -> Vec<(ProcessId, String)> {
        out.iter()
            .filter_map(|o| match o {
                Output::Send(q, msg) => Some((*q, msg.to_string())),
                _ => None,
            })
            .collect()
    }

    fn emits(out: &[Output]) -> Vec<&Action> {
        out.iter()
            .filter_map(|o| match o {
                Output::Emit(a) => Some(a),
                _ => None,
            })
            .collect()
    }

    #[test]
    fn follower_forwards_to_leader() {
        let mut n = Node::new(p(2), Mode::Vab, None, &c0());
        let mut out = Vec::new();
        n.broadcast(m(0), &mut out).unwrap();
        assert_eq!(sends(&out), vec![(p(3), "FORWARD(p9#0)".to_string())]);
    }

    #[test]
    fn fresh_node_cannot_broadcast() {
        let mut n = Node::new(p(4), Mode::Vab, None, &c0());
        assert!(matches!(n.broadcast(m(0), &mut Vec::new()), Err(Error::NoLeader(_))));
    }

    #[test]
    fn leader_commits_after_all_acks() {
        let mut n = Node::new(p(3), Mode::Vab, None, &c0());
        let mut out = Vec::new();
        n.receive(p(1), ProtocolMessage::Forward(m(0)), &mut out);
        assert_eq!(
            sends(&out),
            vec![(p(1), "ACCEPT(0,0,p9#0)".into()), (p(2), "ACCEPT(0,0,p9#0)".into())]
        );
        assert_eq!(n.state.next, 1);
        let mut out = Vec::new();
        n.receive(p(1), ProtocolMessage::AcceptAck { epoch: Epoch(0), pos: 0 }, &mut out);
        assert!(sends(&out).is_empty());
        n.receive(p(2), ProtocolMessage::AcceptAck { epoch: Epoch(0), pos: 0 }, &mut out);
        assert_eq!(sends(&out).len(), 3);
        assert!(sends(&out).iter().all(|(_, s)| s == "COMMIT(0,0)"));
    }

    #[test]
    fn singleton_commits_immediately() {
        let c = Configuration::new(Epoch(0), [p(1)], p(1));
        let mut n = Node::new(p(1), Mode::Vab, None, &c);
        let mut out = Vec::new();
        n.receive(p(1), ProtocolMessage::Forward(m(0)), &mut out);
        assert_eq!(sends(&out), vec![(p(1), "COMMIT(0,0)".into())]);
    }

    #[test]
    fn commits_are_buffered_until_in_order() {
        let mut n = Node::new(p(1), Mode::Vab, None, &c0());
        let mut out = Vec::new();
        for k in 0..2 {
            n.receive(p(3), ProtocolMessage::Accept { epoch: Epoch(0), pos: k, msg: m(k) }, &mut out);
        }
        n.receive(p(3), ProtocolMessage::Commit { epoch: Epoch(0), pos: 1 }, &mut out);
        assert_eq!(n.state.last_delivered, -1);
        assert_eq!(n.buffered(), 1);
        let mut out = Vec::new();
        n.receive(p(3), ProtocolMessage::Commit { epoch: Epoch(0), pos: 0 }, &mut out);
        assert_eq!(n.state.last_delivered, 1);
        let delivered: Vec<_> = emits(&out)
            .into_iter()
            .filter_map(|a| match a {
                Action::Deliver(x) => Some(x.seq),
                _ => None,
            })
            .collect();
        assert_eq!(delivered, vec![0, 1]);
    }

    #[test]
    fn stale_commit_discarded() {
        let mut n = Node::new(p(1), Mode::Vab, None, &c0());
        n.state.epoch = Epoch(1);
        n.state.new_epoch = Epoch(1);
        n.receive(p(3), ProtocolMessage::Commit { epoch: Epoch(0), pos: 0 }, &mut Vec::new());
        assert_eq!(n.buffered(), 0);
    }

    #[test]
    fn probe_answers_and_raises_new_epoch() {
        let mut n = Node::new(p(1), Mode::Vab, None, &Configuration::new(Epoch(1), [p(1)], p(1)));
        let mut out = Vec::new();
        n.receive(p(6), ProtocolMessage::Probe { new_epoch: Epoch(2), epoch: Epoch(1) }, &mut out);
        assert_eq!(sends(&out), vec![(p(6), "PROBE_ACK(true,2)".into())]);
        assert_eq!(n.state.new_epoch, Epoch(2));
        let mut out = Vec::new();
        n.receive(p(6), ProtocolMessage::Probe { new_epoch: Epoch(1), epoch: Epoch(0) }, &mut out);
        assert!(out.is_empty());

        let mut fresh = Node::new(p(4), Mode::Vab, None, &c0());
        let mut out = Vec::new();
        fresh.receive(p(6), ProtocolMessage::Probe { new_epoch: Epoch(3), epoch: Epoch(2) }, &mut out);
        assert_eq!(sends(&out), vec![(p(6), "PROBE_ACK(false,3)".into())]);
    }

    #[test]
    fn new_config_takes_over_log() {
        let mut n = Node::new(p(2), Mode::Vab, None, &c0());
        n.state.msg = vec![Some(m(0)), Some(m(1))];
        n.state.new_epoch = Epoch(2);
        let mut out = Vec::new();
        let members: BTreeSet<_> = [p(1), p(2), p(4)].into();
        n.receive(p(6), ProtocolMessage::NewConfig { epoch: Epoch(2), members }, &mut out);
        assert_eq!(n.state.status, Status::Leader);
        assert_eq!((n.state.next, n.state.init_len), (2, 1));
        let s = sends(&out);
        assert_eq!(s.len(), 2);
        assert!(s.iter().all(|(_, x)| x == "NEW_STATE(2,[p9#0,p9#1],{p1,p2,p4})"));
    }

    #[test]
    fn new_config_waits_for_matching_probe() {
        let mut n = Node::new(p(2), Mode::Vab, None, &c0());
        let members: BTreeSet<_> = [p(2)].into();
        n.receive(p(6), ProtocolMessage::NewConfig { epoch: Epoch(1), members }, &mut Vec::new());
        assert_eq!(n.buffered(), 1);
        let mut out = Vec::new();
        n.receive(p(6), ProtocolMessage::Probe { new_epoch: Epoch(1), epoch: Epoch(0) }, &mut out);
        assert_eq!(n.state.status, Status::Leader);
        assert_eq!(n.state.epoch, Epoch(1));
    }

    #[test]
    fn follower_replaces_log_on_new_state() {
        let mut n = Node::new(p(4), Mode::Vab, None, &c0());
        n.state.msg = vec![Some(m(7)), Some(m(8)), Some(m(9))];
        let mut out = Vec::new();
        let members: BTreeSet<_> = [p(1), p(2), p(4)].into();
        n.receive(
            p(2),
            ProtocolMessage::NewState { epoch: Epoch(2), log: vec![Some(m(0)), Some(m(1))], members },
            &mut out,
        );
        assert_eq!(n.state.status, Status::Follower);
        assert_eq!(n.state.msg, vec![Some(m(0)), Some(m(1))]);
        assert_eq!(sends(&out), vec![(p(2), "NEW_STATE_ACK(2)".into())]);
    }

    #[test]
    fn replay_commits_whole_inherited_prefix() {
        let mut n = Node::new(p(1), Mode::Vab, None, &c0());
        n.state.msg = vec![Some(m(0)), Some(m(1))];
        n.state.new_epoch = Epoch(3);
        let members: BTreeSet<_> = [p(1), p(4), p(5)].into();
        n.receive(p(6), ProtocolMessage::NewConfig { epoch: Epoch(3), members }, &mut Vec::new());
        let mut out = Vec::new();
        n.receive(p(4), ProtocolMessage::NewStateAck { epoch: Epoch(3) }, &mut out);
        assert!(sends(&out).is_empty());
        n.receive(p(5), ProtocolMessage::NewStateAck { epoch: Epoch(3) }, &mut out);
        let commits: Vec<_> = sends(&out).into_iter().map(|(_, s)| s).collect();
        assert_eq!(commits.iter().filter(|s| *s == "COMMIT(3,0)").count(), 3);
        assert_eq!(commits.iter().filter(|s| *s == "COMMIT(3,1)").count(), 3);
    }

    #[test]
    fn po_leader_defers_and_rejects_broadcast() {
        let mut n = Node::new(p(1), Mode::Po, None, &c0());
        assert!(matches!(n.broadcast(m(0), &mut Vec::new()), Err(Error::NotLeader(_))));
        n.state.new_epoch = Epoch(1);
        let members: BTreeSet<_> = [p(1), p(2)].into();
        let mut out = Vec::new();
        n.receive(p(6), ProtocolMessage::NewConfig { epoch: Epoch(1), members }, &mut out);
        assert!(emits(&out).is_empty());
        assert!(!n.is_ready_leader());
        let mut out = Vec::new();
        n.receive(p(2), ProtocolMessage::NewStateAck { epoch: Epoch(1) }, &mut out);
        assert_eq!(emits(&out).len(), 1);
        assert!(n.is_ready_leader());
    }
}
