//! The resumable `reconfigure` task: find the latest activated epoch by
//! probing backwards, pick a leader that was initialized there, and
//! introduce the new configuration through the configuration service.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::model::{Configuration, Epoch, ProcessId, ProtocolMessage};
use crate::modes::Mutant;

/// Parameters of one `reconfigure` call.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReconfigRequest {
    pub desired_members: BTreeSet<ProcessId>,
    #[serde(default)]
    pub desired_leader: Option<ProcessId>,
}

impl ReconfigRequest {
    /// `compute_membership`: the desired set plus the chosen leader.
    pub fn membership(&self, leader: ProcessId) -> BTreeSet<ProcessId> {
        let mut m = self.desired_members.clone();
        m.insert(leader);
        m
    }
}

/// A call into the configuration service issued by a task.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum CsCall {
    GetLastEpoch,
    GetMembers(Epoch),
    CompareAndSwap { expected: Epoch, config: Configuration },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum CsReply {
    LastEpoch(Epoch),
    Members(Option<BTreeSet<ProcessId>>),
    Swapped(bool),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Phase {
    FetchEpoch,
    FetchMembers,
    Probing,
    AwaitCas,
    Done(Option<Configuration>),
}

/// Side effects requested by a task step.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TaskEffect {
    Send(ProcessId, ProtocolMessage),
    Call(CsCall),
    /// First PROBE of this task went out.
    ProbingStarted(Epoch),
    /// The call finished with the given result.
    Finished(Option<Configuration>),
    /// Probing ran past epoch 0 without finding an initialized process.
    Underflow,
}

#[derive(Clone, Debug)]
pub struct ReconfigTask {
    pub request: ReconfigRequest,
    pub phase: Phase,
    pub e: Epoch,
    pub e_new: Epoch,
    pub members: BTreeSet<ProcessId>,
    pub true_acks: Vec<ProcessId>,
    outstanding: BTreeMap<ProcessId, VecDeque<Epoch>>,
    /// Repliers to the current round, in arrival order, with their flag.
    round_replies: Vec<(ProcessId, bool)>,
    chosen: Option<ProcessId>,
    new_members: BTreeSet<ProcessId>,
    mutant: Option<Mutant>,
    probing_started: bool,
}

impl ReconfigTask {
    pub fn start(request: ReconfigRequest, mutant: Option<Mutant>) -> (ReconfigTask, Vec<TaskEffect>) {
        let task = ReconfigTask {
            request,
            phase: Phase::FetchEpoch,
            e: Epoch::NONE,
            e_new: Epoch::NONE,
            members: BTreeSet::new(),
            true_acks: Vec::new(),
            outstanding: BTreeMap::new(),
            round_replies: Vec::new(),
            chosen: None,
            new_members: BTreeSet::new(),
            mutant,
            probing_started: false,
        };
        (task, vec![TaskEffect::Call(CsCall::GetLastEpoch)])
    }

    pub fn is_done(&self) -> bool {
        matches!(self.phase, Phase::Done(_))
    }

    pub fn chosen_leader(&self) -> Option<ProcessId> {
        self.chosen
    }

    pub fn on_cs_reply(&mut self, reply: CsReply) -> Vec<TaskEffect> {
        let mut fx = Vec::new();
        match (&self.phase, reply) {
            (Phase::FetchEpoch, CsReply::LastEpoch(e)) => {
                self.e = e;
                self.e_new = e.next();
                if self.mutant == Some(Mutant::SkipProbing) {
                    let target = self
                        .request
                        .desired_leader
                        .or_else(|| self.request.desired_members.iter().next().copied());
                    match target {
                        Some(q) => {
                            self.members = [q].into();
                            self.phase = Phase::Probing;
                            self.send_probes(&mut fx);
                        }
                        None => self.finish(None, &mut fx),
                    }
                } else {
                    self.begin_round(&mut fx);
                }
            }
            (Phase::FetchMembers, CsReply::Members(Some(m))) => {
                self.members = m;
                self.phase = Phase::Probing;
                self.send_probes(&mut fx);
            }
            (Phase::FetchMembers, CsReply::Members(None)) => {
                // Epochs below the bootstrap epoch are not stored.
                fx.push(TaskEffect::Underflow);
                self.finish(None, &mut fx);
            }
            (Phase::AwaitCas, CsReply::Swapped(ok)) => {
                if ok {
                    let leader = self.chosen.expect("leader chosen before swap");
                    let config = Configuration {
                        epoch: self.e_new,
                        members: self.new_members.clone(),
                        leader,
                    };
                    fx.push(TaskEffect::Send(
                        leader,
                        ProtocolMessage::NewConfig {
                            epoch: self.e_new,
                            members: self.new_members.clone(),
                        },
                    ));
                    self.finish(Some(config), &mut fx);
                } else {
                    self.finish(None, &mut fx);
                }
            }
            _ => {}
        }
        fx
    }

    /// Handles `PROBE_ACK(initialized, new_epoch)` from `from`.
    pub fn on_probe_ack(&mut self, from: ProcessId, initialized: bool, new_epoch: Epoch) -> Vec<TaskEffect> {
        let mut fx = Vec::new();
        if new_epoch != self.e_new {
            return fx;
        }
        let Some(round) = self.outstanding.get_mut(&from).and_then(|q| q.pop_front()) else {
            return fx;
        };
        if initialized && !self.true_acks.contains(&from) {
            self.true_acks.push(from);
        }
        if self.phase != Phase::Probing || round != self.e {
            return fx;
        }
        self.round_replies.push((from, initialized));

        match self.mutant {
            Some(Mutant::SkipProbing) => {
                self.choose(from, &mut fx);
                return fx;
            }
            Some(Mutant::LeaderAny) => {
                self.choose(from, &mut fx);
                return fx;
            }
            _ => {}
        }

        if let Some(d) = self.request.desired_leader {
            // Hold the round open until the preferred leader answers.
            if self.members.contains(&d) && !self.round_replies.iter().any(|(q, _)| *q == d) {
                return fx;
            }
        }
        if self.true_acks.is_empty() {
            if self.e.0 == 0 || self.e.prev() < Epoch::ZERO {
                fx.push(TaskEffect::Underflow);
                self.finish(None, &mut fx);
                return fx;
            }
            self.e = self.e.prev();
            self.begin_round(&mut fx);
            return fx;
        }
        let leader = match self.request.desired_leader {
            Some(d) if self.true_acks.contains(&d) => d,
            _ => self.true_acks[0],
        };
        self.choose(leader, &mut fx);
        fx
    }

    fn begin_round(&mut self, fx: &mut Vec<TaskEffect>) {
        self.round_replies.clear();
        self.phase = Phase::FetchMembers;
        fx.push(TaskEffect::Call(CsCall::GetMembers(self.e)));
    }

    fn send_probes(&mut self, fx: &mut Vec<TaskEffect>) {
        self.round_replies.clear();
        if !self.probing_started {
            self.probing_started = true;
            fx.push(TaskEffect::ProbingStarted(self.e_new));
        }
        for q in &self.members {
            self.outstanding.entry(*q).or_default().push_back(self.e);
            fx.push(TaskEffect::Send(
                *q,
                ProtocolMessage::Probe {
                    new_epoch: self.e_new,
                    epoch: self.e,
                },
            ));
        }
    }

    fn choose(&mut self, leader: ProcessId, fx: &mut Vec<TaskEffect>) {
        self.chosen = Some(leader);
        self.new_members = self.request.membership(leader);
        self.phase = Phase::AwaitCas;
        fx.push(TaskEffect::Call(CsCall::CompareAndSwap {
            expected: self.e_new.prev(),
            config: Configuration {
                epoch: self.e_new,
                members: self.new_members.clone(),
                leader,
            },
        }));
    }

    fn finish(&mut self, result: Option<Configuration>, fx: &mut Vec<TaskEffect>) {
        self.phase = Phase::Done(result.clone());
        fx.push(TaskEffect::Finished(result));
    }
}
