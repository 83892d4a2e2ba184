//! Deterministic discrete-event simulator.
//!
//! Events run in `(time, seq)` order. Channels are reliable and FIFO with
//! delays drawn from a seeded generator; self-addressed messages are
//! handled within the sending step. After every step the online monitors
//! inspect all node states.

pub mod fuzz;
pub mod metrics;
pub mod scenario;

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, VecDeque};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::checker::linearizability::{self, Linearization};
use crate::checker::liveness::check_liveness;
use crate::checker::{check_history, LivenessPremise, Monitor, PropertyId, VerdictReport, Violation};
use crate::config_service::ConfigStore;
use crate::model::{Action, CommandId, History, MessageFactory, MessageKind, ProcessId, ProtocolMessage};
use crate::modes::Mode;
use crate::node::{CsCall, CsReply, Node, NodeState, Observation, Output};
use crate::replication::{LeaderStep, Replica, ServiceState};
use crate::{trace, Result};

pub use metrics::{Metrics, ReconfigMetrics};
pub use scenario::{bundled, CrashTrigger, Delays, Directive, Scenario, BUNDLED};

/// One line of the message-flow log.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(untagged)]
pub enum NetRecord {
    Sent {
        sent: u64,
        arrives: u64,
        from: ProcessId,
        to: ProcessId,
        msg: String,
    },
    Crash {
        t: u64,
        crash: ProcessId,
    },
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub mode: Mode,
    pub history: History,
    pub messages: Vec<NetRecord>,
    pub metrics: Metrics,
    pub report: VerdictReport,
    pub premise: LivenessPremise,
    pub final_states: BTreeMap<ProcessId, NodeState>,
    /// Committed service state `Σ` of every replica.
    pub services: BTreeMap<ProcessId, ServiceState>,
    pub crashed: BTreeSet<ProcessId>,
}

impl RunOutput {
    pub fn trace_jsonl(&self) -> String {
        trace::to_jsonl(&self.history)
    }

    pub fn messages_jsonl(&self) -> String {
        let mut s = String::new();
        for r in &self.messages {
            s.push_str(&serde_json::to_string(r).expect("records serialize"));
            s.push('\n');
        }
        s
    }

    pub fn metrics_json(&self) -> String {
        serde_json::to_string_pretty(&self.metrics).expect("metrics serialize")
    }

    pub fn verdicts_json(&self) -> String {
        serde_json::to_string_pretty(&self.report).expect("verdicts serialize")
    }

    pub fn premise_json(&self) -> String {
        serde_json::to_string_pretty(&self.premise).expect("premise serializes")
    }

    /// Writes trace, message log, metrics, verdicts and premise into `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("trace.jsonl"), self.trace_jsonl())?;
        std::fs::write(dir.join("messages.jsonl"), self.messages_jsonl())?;
        std::fs::write(dir.join("metrics.json"), self.metrics_json() + "\n")?;
        std::fs::write(dir.join("verdicts.json"), self.verdicts_json() + "\n")?;
        std::fs::write(dir.join("premise.json"), self.premise_json() + "\n")?;
        Ok(())
    }
}

#[derive(Clone, Debug)]
enum EventKind {
    Deliver {
        from: ProcessId,
        to: ProcessId,
        msg: ProtocolMessage,
        chan_seq: u64,
    },
    CsExec {
        by: ProcessId,
        call: CsCall,
    },
    Directive(usize),
}

#[derive(Debug)]
struct Event {
    time: u64,
    seq: u64,
    kind: EventKind,
}

impl PartialEq for Event {
    fn eq(&self, other: &Event) -> bool {
        (self.time, self.seq) == (other.time, other.seq)
    }
}

impl Eq for Event {}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Event) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Event {
    // Reversed: BinaryHeap is a max-heap.
    fn cmp(&self, other: &Event) -> Ordering {
        (other.time, other.seq).cmp(&(self.time, self.seq))
    }
}

struct Sim<'a> {
    sc: &'a Scenario,
    now: u64,
    seq: u64,
    steps: u64,
    tick: u64,
    queue: BinaryHeap<Event>,
    net_rng: ChaCha8Rng,
    machine_rng: ChaCha8Rng,
    nodes: BTreeMap<ProcessId, Node>,
    replicas: BTreeMap<ProcessId, Replica>,
    crashed: BTreeSet<ProcessId>,
    crash_on: BTreeMap<ProcessId, MessageKind>,
    floors: BTreeMap<(ProcessId, ProcessId), u64>,
    sent: BTreeMap<(ProcessId, ProcessId), u64>,
    received: BTreeMap<(ProcessId, ProcessId), u64>,
    store: ConfigStore,
    history: History,
    messages: Vec<NetRecord>,
    monitor: Monitor,
    factory: MessageFactory,
    probes: metrics::Probes,
    rejected: u64,
    commands: BTreeMap<ProcessId, u64>,
    responded: BTreeSet<CommandId>,
    /// (process, history index, tick) of each started reconfiguration.
    /// (requester, history index, tick, preferred leader)
    requests: Vec<(ProcessId, usize, u64, Option<ProcessId>)>,
    preferred: BTreeMap<ProcessId, VecDeque<Option<ProcessId>>>,
    task_steps: Vec<(ProcessId, u64)>,
}

/// Runs a scenario to quiescence or its step cap.
pub fn run(sc: &Scenario) -> Result<RunOutput> {
    sc.validate()?;
    let mut sim = Sim::new(sc);
    sim.bootstrap();
    let quiescent = sim.run_loop();
    Ok(sim.finish(quiescent))
}

impl<'a> Sim<'a> {
    fn new(sc: &'a Scenario) -> Sim<'a> {
        let c0 = &sc.initial_config;
        let nodes = sc
            .processes
            .iter()
            .map(|p| (*p, Node::new(*p, sc.mode, sc.mutant, c0)))
            .collect();
        let replicas = match sc.machine {
            Some(kind) => sc.processes.iter().map(|p| (*p, Replica::new(*p, kind))).collect(),
            None => BTreeMap::new(),
        };
        let mut monitor = Monitor::new();
        if sc.machine.is_some() {
            monitor.enable_replication();
        }
        Sim {
            sc,
            now: 0,
            seq: 0,
            steps: 0,
            tick: 0,
            queue: BinaryHeap::new(),
            net_rng: ChaCha8Rng::seed_from_u64(sc.seed),
            machine_rng: ChaCha8Rng::seed_from_u64(sc.seed ^ 0x5eed_cafe_f00d_0001),
            nodes,
            replicas,
            crashed: BTreeSet::new(),
            crash_on: BTreeMap::new(),
            floors: BTreeMap::new(),
            sent: BTreeMap::new(),
            received: BTreeMap::new(),
            store: ConfigStore::new(c0.clone()),
            history: History::new(),
            messages: Vec::new(),
            monitor,
            factory: MessageFactory::new(),
            probes: metrics::Probes::default(),
            rejected: 0,
            commands: BTreeMap::new(),
            responded: BTreeSet::new(),
            requests: Vec::new(),
            preferred: BTreeMap::new(),
            task_steps: Vec::new(),
        }
    }

    fn schedule(&mut self, time: u64, kind: EventKind) {
        self.queue.push(Event { time, seq: self.seq, kind });
        self.seq += 1;
    }

    fn states(nodes: &BTreeMap<ProcessId, Node>) -> BTreeMap<ProcessId, &NodeState> {
        nodes.iter().map(|(p, n)| (*p, &n.state)).collect()
    }

    fn bootstrap(&mut self) {
        let c0 = self.sc.initial_config.clone();
        self.history.push(c0.leader, 0, Action::Introduction(c0.clone()));
        self.probes.configs.insert(c0.epoch, (c0.clone(), 0));
        self.monitor.register_config(&c0, &Self::states(&self.nodes));
        for p in c0.members.clone() {
            let speculative = (self.sc.mode == Mode::Spo && p == c0.leader).then(Vec::new);
            let mut work = VecDeque::new();
            self.emit(p, Action::ConfChanged { config: c0.clone(), speculative }, &mut work);
            self.process(p, work);
        }
        for (i, d) in self.sc.schedule.iter().enumerate() {
            match d.time() {
                Some(t) => self.schedule(t, EventKind::Directive(i)),
                None => {
                    if let Directive::Crash { proc, when } = d {
                        if let Some(kind) = when.on_receive {
                            self.crash_on.insert(*proc, kind);
                        }
                    }
                }
            }
        }
        self.monitor.end_step(&Self::states(&self.nodes));
    }

    /// Returns whether the run reached quiescence.
    fn run_loop(&mut self) -> bool {
        while let Some(ev) = self.queue.pop() {
            if self.steps >= self.sc.step_cap {
                return false;
            }
            self.steps += 1;
            self.now = ev.time;
            match ev.kind {
                EventKind::Deliver { from, to, msg, chan_seq } => self.on_deliver(from, to, msg, chan_seq),
                EventKind::CsExec { by, call } => self.on_cs(by, call),
                EventKind::Directive(i) => self.on_directive(i),
            }
            self.monitor.end_step(&Self::states(&self.nodes));
        }
        true
    }

    fn crash(&mut self, p: ProcessId) {
        if self.crashed.insert(p) {
            self.probes.crashes.insert(p, self.now);
            self.messages.push(NetRecord::Crash { t: self.now, crash: p });
        }
    }

    fn on_deliver(&mut self, from: ProcessId, to: ProcessId, msg: ProtocolMessage, chan_seq: u64) {
        if self.crashed.contains(&to) {
            return;
        }
        if self.crash_on.get(&to) == Some(&msg.kind()) {
            self.crash_on.remove(&to);
            self.crash(to);
            return;
        }
        let expected = self.received.entry((from, to)).or_default();
        if chan_seq != *expected {
            self.monitor.report_violation(Violation::new(
                PropertyId::Fifo,
                vec![],
                vec![from, to],
                format!("{from}->{to} delivered message {chan_seq} when {expected} was next"),
            ));
        }
        *expected = chan_seq + 1;
        let mut work = VecDeque::new();
        self.handle(to, from, msg, &mut work);
        self.process(to, work);
    }

    fn on_cs(&mut self, by: ProcessId, call: CsCall) {
        if self.crashed.contains(&by) {
            return;
        }
        let reply = match call {
            CsCall::GetLastEpoch => CsReply::LastEpoch(self.store.get_last_epoch()),
            CsCall::GetMembers(e) => CsReply::Members(self.store.get_members(e).ok()),
            CsCall::CompareAndSwap { expected, config } => {
                let ok = self.store.compare_and_swap(expected, config.clone()).unwrap_or(false);
                if ok {
                    self.history.push(by, self.now, Action::Introduction(config.clone()));
                    self.probes.configs.insert(config.epoch, (config.clone(), self.now));
                    self.monitor.register_config(&config, &Self::states(&self.nodes));
                }
                CsReply::Swapped(ok)
            }
        };
        let mut out = Vec::new();
        if let Some(n) = self.nodes.get_mut(&by) {
            n.on_cs_reply(reply, &mut out);
        }
        self.process(by, out.into());
    }

    fn on_directive(&mut self, i: usize) {
        let d = self.sc.schedule[i].clone();
        match d {
            Directive::Broadcast { proc, payload, .. } => {
                let target = proc.or_else(|| self.ready_leader());
                match target.filter(|p| !self.crashed.contains(p)) {
                    Some(p) => {
                        let m = self.factory.fresh_message(p, payload);
                        let mut out = Vec::new();
                        let res = self.nodes.get_mut(&p).expect("declared").broadcast(m, &mut out);
                        if res.is_err() {
                            self.rejected += 1;
                        }
                        self.process(p, out.into());
                    }
                    None => self.rejected += 1,
                }
            }
            Directive::Execute { client, command, .. } => {
                if self.crashed.contains(&client) {
                    return;
                }
                let seq = self.commands.entry(client).or_default();
                let id = CommandId { origin: client, seq: *seq };
                *seq += 1;
                let mut work = VecDeque::new();
                self.emit(client, Action::Invoke { id, command }, &mut work);
                let last = self.store.get_last_epoch();
                let leader = self.store.get(last).expect("last epoch stored").leader;
                work.push_back(Output::Send(leader, ProtocolMessage::Execute { id, command }));
                self.process(client, work);
            }
            Directive::Crash { proc, .. } => self.crash(proc),
            Directive::Reconfigure { by, .. } => {
                if self.crashed.contains(&by) {
                    return;
                }
                let req = d.request().expect("reconfigure directive");
                self.preferred.entry(by).or_default().push_back(req.desired_leader);
                let mut out = Vec::new();
                self.nodes.get_mut(&by).expect("declared").reconfigure(req, &mut out);
                self.process(by, out.into());
            }
        }
    }

    /// The correct ready leader with the highest epoch.
    fn ready_leader(&self) -> Option<ProcessId> {
        self.nodes
            .values()
            .filter(|n| !self.crashed.contains(&n.id) && n.is_ready_leader())
            .max_by_key(|n| (n.state.epoch, std::cmp::Reverse(n.id)))
            .map(|n| n.id)
    }

    /// Drains the outputs of a step at `p`, including everything triggered
    /// by self-addressed messages and upcalls.
    fn process(&mut self, p: ProcessId, mut work: VecDeque<Output>) {
        while let Some(o) = work.pop_front() {
            match o {
                Output::Send(to, msg) => self.send(p, to, msg, &mut work),
                Output::Emit(a) => self.emit(p, a, &mut work),
                Output::Call(call) => {
                    let t = self.now + self.sc.cs_latency;
                    self.schedule(t, EventKind::CsExec { by: p, call });
                }
                Output::Note(obs) => {
                    self.note(p, &obs);
                    self.monitor.observe(p, obs);
                }
            }
        }
    }

    fn send(&mut self, from: ProcessId, to: ProcessId, msg: ProtocolMessage, work: &mut VecDeque<Output>) {
        if to == from {
            self.handle(from, from, msg, work);
            return;
        }
        if self.crashed.contains(&to) || !self.nodes.contains_key(&to) {
            return;
        }
        let delay = self.net_rng.gen_range(self.sc.delays.min..=self.sc.delays.max);
        let floor = self.floors.entry((from, to)).or_default();
        let arrives = (*floor).max(self.now + delay);
        *floor = arrives;
        let seq = self.sent.entry((from, to)).or_default();
        let chan_seq = *seq;
        *seq += 1;
        self.messages.push(NetRecord::Sent {
            sent: self.now,
            arrives,
            from,
            to,
            msg: msg.to_string(),
        });
        self.schedule(arrives, EventKind::Deliver { from, to, msg, chan_seq });
    }

    /// Handles `msg` at `to`, appending the resulting outputs to `work`.
    fn handle(&mut self, to: ProcessId, from: ProcessId, msg: ProtocolMessage, work: &mut VecDeque<Output>) {
        match msg {
            ProtocolMessage::Execute { id, command } => {
                let Some(r) = self.replicas.get_mut(&to) else { return };
                if let Some(step) = r.on_execute(id, command, &mut self.machine_rng) {
                    self.leader_broadcast(to, step, work);
                }
            }
            ProtocolMessage::Result { id, reply } => {
                if self.responded.insert(id) {
                    work.push_back(Output::Emit(Action::Respond { id, reply }));
                }
            }
            msg => {
                let mut out = Vec::new();
                self.nodes.get_mut(&to).expect("declared").receive(from, msg, &mut out);
                work.extend(out);
            }
        }
    }

    fn leader_broadcast(&mut self, p: ProcessId, step: LeaderStep, work: &mut VecDeque<Output>) {
        let m = self.factory.fresh_message(p, step.record.encode());
        self.monitor.record_theta(m.id(), step.theta_before);
        let mut out = Vec::new();
        match self.nodes.get_mut(&p).expect("declared").broadcast(m, &mut out) {
            Ok(()) => work.extend(out),
            Err(_) => self.rejected += 1,
        }
    }

    fn emit(&mut self, p: ProcessId, action: Action, work: &mut VecDeque<Output>) {
        let idx = self.history.push(p, self.now, action.clone());
        match action {
            Action::Broadcast(m) => {
                self.probes.broadcast_at.entry(m.id()).or_insert(self.now);
            }
            Action::Deliver(m) => {
                self.probes.delivered.entry((p, m.id())).or_insert(self.now);
                let applied = self.replicas.get_mut(&p).and_then(|r| r.on_deliver(&m));
                if let Some(a) = applied {
                    self.monitor.check_sigma(p, m.id(), a.sigma_before, idx);
                    work.push_back(Output::Send(
                        a.id.origin,
                        ProtocolMessage::Result { id: a.id, reply: a.reply },
                    ));
                }
            }
            Action::ConfChanged { config, speculative } => {
                self.probes.joined.entry(config.epoch).or_default().insert(p, self.now);
                if let Some(r) = self.replicas.get_mut(&p) {
                    r.on_conf_changed(&config, speculative.as_deref());
                    let steps = r.drain_pending(&mut self.machine_rng);
                    for s in steps {
                        self.leader_broadcast(p, s, work);
                    }
                }
            }
            Action::ReconfigReq => {
                self.tick += 1;
                let preferred = self.preferred.get_mut(&p).and_then(VecDeque::pop_front).flatten();
                self.requests.push((p, idx, self.tick, preferred));
            }
            _ => {}
        }
    }

    fn note(&mut self, p: ProcessId, obs: &Observation) {
        let now = self.now;
        match obs {
            Observation::Appended { epoch, msg, .. } => self.probes.appended.push((p, *epoch, *msg, now)),
            Observation::CommitSent { epoch, msg, .. } => self.probes.commits.push((*epoch, *msg)),
            Observation::NewConfigHandled { epoch, prior_epoch } => {
                self.probes.new_config.push((p, *epoch, *prior_epoch, now))
            }
            Observation::Ready { epoch } => {
                self.probes.ready.entry(*epoch).or_insert(now);
            }
            Observation::ProbingStarted { new_epoch } => {
                self.probes.probe_started.entry(*new_epoch).or_insert(now);
            }
            Observation::TaskStep => {
                self.tick += 1;
                self.task_steps.push((p, self.tick));
            }
            _ => {}
        }
    }

    fn premise(&self, quiescent: bool) -> LivenessPremise {
        let Some(&(requester, req, tick, preferred)) = self.requests.last() else {
            return LivenessPremise { quiescent, ..LivenessPremise::default() };
        };
        let isolated = !self.task_steps.iter().any(|(q, t)| *q != requester && *t > tick)
            && self.nodes.values().all(|n| n.queued_requests() == 0);
        let response = self.history.entries()[req..]
            .iter()
            .filter(|e| e.process == requester)
            .find_map(|e| match &e.action {
                Action::ReconfigResp(c) => Some(c.clone()),
                _ => None,
            });
        let all_members_correct = match response {
            Some(Some(c)) => c.members.is_disjoint(&self.crashed),
            _ => false,
        };
        LivenessPremise {
            last_request: Some(req),
            requester: Some(requester),
            requester_correct: !self.crashed.contains(&requester),
            preferred_leader_correct: preferred.map_or(true, |d| !self.crashed.contains(&d)),
            isolated,
            all_members_correct,
            quiescent,
        }
    }

    fn finish(self, quiescent: bool) -> RunOutput {
        let premise = self.premise(quiescent);
        let mut report = check_history(&self.history, self.sc.mode);
        report.merge(check_liveness(&self.history, &premise));
        if let Some(kind) = self.sc.machine {
            let ops = linearizability::operations(&self.history);
            let mut r = VerdictReport::default();
            match linearizability::check(&ops, kind.machine(), 0) {
                Linearization::Witness(_) => r.record(&[PropertyId::Linearizability], vec![]),
                Linearization::NotLinearizable => r.record(
                    &[PropertyId::Linearizability],
                    vec![Violation::new(
                        PropertyId::Linearizability,
                        ops.iter().map(|o| o.invoked).collect(),
                        vec![],
                        "no sequential order of the client operations matches their results",
                    )],
                ),
                Linearization::NotEvaluated(reason) => r.not_evaluated(&[PropertyId::Linearizability], &reason),
            }
            report.merge(r);
        }
        report.merge(self.monitor.into_report());

        let mut metrics = metrics::compute(&self.probes);
        metrics.quiescent = quiescent;
        metrics.steps = self.steps;
        metrics.end_time = self.now;
        metrics.rejected_broadcasts = self.rejected;
        RunOutput {
            mode: self.sc.mode,
            history: self.history,
            messages: self.messages,
            metrics,
            report,
            premise,
            final_states: self.nodes.into_iter().map(|(p, n)| (p, n.state)).collect(),
            services: self.replicas.into_iter().map(|(p, r)| (p, r.committed)).collect(),
            crashed: self.crashed,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Configuration, Epoch};

    fn p(i: u32) -> ProcessId {
        ProcessId(i)
    }

    fn three() -> Scenario {
        Scenario::empty(Mode::Vab, Configuration::new(Epoch(0), [p(1), p(2), p(3)], p(1)))
    }

    #[test]
    fn empty_scenario_has_only_bootstrap_and_no_violations() {
        let out = run(&three()).unwrap();
        assert_eq!(out.history.len(), 4);
        assert!(out.report.is_clean(), "{}", out.report.render());
        assert!(out.metrics.quiescent);
    }

    #[test]
    fn broadcast_reaches_every_member() {
        let mut sc = three();
        sc.schedule.push(Directive::Broadcast { at: 1, proc: Some(p(2)), payload: "x".into() });
        let out = run(&sc).unwrap();
        let delivers = out.history.entries().iter().filter(|e| e.action.name() == "deliver").count();
        assert_eq!(delivers, 3);
        assert!(out.report.is_clean(), "{}", out.report.render());
    }

    #[test]
    fn crash_on_receive_replaces_handling() {
        let mut sc = three();
        sc.schedule.push(Directive::Crash { proc: p(3), when: CrashTrigger { at: None, on_receive: Some(MessageKind::Accept) } });
        sc.schedule.push(Directive::Broadcast { at: 1, proc: Some(p(1)), payload: "x".into() });
        let out = run(&sc).unwrap();
        assert!(out.crashed.contains(&p(3)));
        assert_eq!(out.final_states[&p(1)].last_delivered, -1);
    }
}
