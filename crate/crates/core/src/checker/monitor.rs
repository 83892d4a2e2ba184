//! Online monitors over node states and protocol-internal events. The
//! simulator feeds every observation of a scheduler step, then calls
//! [`Monitor::end_step`] with read access to all node states.

use std::collections::{BTreeMap, BTreeSet};

use super::{PropertyId, VerdictReport, Violation};
use crate::model::{Configuration, Epoch, MsgId, ProcessId};
use crate::node::{NodeState, Observation, Status};
use crate::replication::ServiceState;

const MAX_PER_PROPERTY: usize = 10;

struct AcceptRecord {
    epoch: Epoch,
    msg: MsgId,
    prefix: Vec<Option<MsgId>>,
}

#[derive(Default)]
pub struct Monitor {
    violations: Vec<Violation>,
    counts: BTreeMap<PropertyId, usize>,
    step: Vec<(ProcessId, Observation)>,

    accepts: BTreeMap<(Epoch, u64), MsgId>,
    accepts_by_pos: BTreeMap<u64, Vec<AcceptRecord>>,
    accepts_by_msg: BTreeMap<MsgId, Vec<(Epoch, u64)>>,
    /// position -> (lowest commit epoch, message)
    committed: BTreeMap<u64, (Epoch, Option<MsgId>)>,
    commit_pos: BTreeMap<MsgId, u64>,

    members: BTreeMap<Epoch, BTreeSet<ProcessId>>,
    initialized: BTreeMap<Epoch, BTreeSet<ProcessId>>,
    fully_initialized: BTreeSet<Epoch>,

    last_epochs: BTreeMap<ProcessId, (Epoch, Epoch)>,
    delivered: BTreeMap<ProcessId, Vec<MsgId>>,
    thetas: BTreeMap<MsgId, ServiceState>,
    replication: bool,
}

impl Monitor {
    pub fn new() -> Monitor {
        Monitor::default()
    }

    pub fn enable_replication(&mut self) {
        self.replication = true;
    }

    pub fn report_violation(&mut self, v: Violation) {
        let n = self.counts.entry(v.property).or_default();
        *n += 1;
        if *n <= MAX_PER_PROPERTY {
            self.violations.push(v);
        }
    }

    fn fail(&mut self, property: PropertyId, processes: Vec<ProcessId>, message: String) {
        self.report_violation(Violation::new(property, vec![], processes, message));
    }

    /// A configuration was introduced (or bootstrapped).
    pub fn register_config(&mut self, config: &Configuration, states: &BTreeMap<ProcessId, &NodeState>) {
        self.members.insert(config.epoch, config.members.clone());
        for (p, s) in states {
            self.note_epoch(*p, s.epoch);
        }
    }

    pub fn observe(&mut self, p: ProcessId, obs: Observation) {
        self.step.push((p, obs));
    }

    /// `Θ` at the leader right before it produced the update carried by `m`.
    pub fn record_theta(&mut self, m: MsgId, theta: ServiceState) {
        self.thetas.insert(m, theta);
    }

    /// Checks that `Σ` at delivery equals the `Θ` the update came from.
    pub fn check_sigma(&mut self, p: ProcessId, m: MsgId, sigma: ServiceState, index: usize) {
        match self.thetas.get(&m) {
            Some(theta) if *theta == sigma => {}
            Some(theta) => self.report_violation(Violation::new(
                PropertyId::Inv2,
                vec![index],
                vec![p],
                format!("{p} applied {m} to state {sigma}, but it was derived from state {theta}"),
            )),
            None => self.report_violation(Violation::new(
                PropertyId::Inv2,
                vec![index],
                vec![p],
                format!("{p} applied {m}, which no leader produced"),
            )),
        }
    }

    fn note_epoch(&mut self, p: ProcessId, e: Epoch) {
        let Some(members) = self.members.get(&e) else { return };
        if !members.contains(&p) {
            return;
        }
        let set = self.initialized.entry(e).or_default();
        set.insert(p);
        if set.len() == members.len() {
            self.fully_initialized.insert(e);
        }
    }

    pub fn end_step(&mut self, states: &BTreeMap<ProcessId, &NodeState>) {
        let notes = std::mem::take(&mut self.step);
        let mut new_commits = Vec::new();
        let mut after_accept = Vec::new();
        let mut after_transfer = BTreeSet::new();
        let mut stepped = BTreeSet::new();

        for (p, obs) in notes {
            stepped.insert(p);
            match obs {
                Observation::AcceptSent { epoch, pos, msg, prefix } => {
                    if let Some(prev) = self.accepts.insert((epoch, pos), msg) {
                        if prev != msg {
                            self.fail(
                                PropertyId::Inv7,
                                vec![p],
                                format!("ACCEPT({epoch},{pos}) sent for both {prev} and {msg}"),
                            );
                        }
                    }
                    self.accepts_by_pos.entry(pos).or_default().push(AcceptRecord { epoch, msg, prefix });
                    self.accepts_by_msg.entry(msg).or_default().push((epoch, pos));
                }
                Observation::AcceptHandled { epoch, pos } => after_accept.push((p, epoch, pos)),
                Observation::CommitSent { epoch, pos, msg } => {
                    match self.committed.get(&pos) {
                        Some((_, m0)) if *m0 != msg => self.fail(
                            PropertyId::LemCommitMsg,
                            vec![p],
                            format!("position {pos} committed with {m0:?} and {msg:?}"),
                        ),
                        Some((e0, _)) if *e0 <= epoch => {}
                        _ => {
                            self.committed.insert(pos, (epoch, msg));
                        }
                    }
                    if let Some(m) = msg {
                        if let Some(k0) = self.commit_pos.insert(m, pos) {
                            if k0 != pos {
                                self.fail(
                                    PropertyId::LemCommitPos,
                                    vec![p],
                                    format!("{m} committed at positions {k0} and {pos}"),
                                );
                            }
                        }
                    }
                    new_commits.push((epoch, pos, msg));
                }
                Observation::Delivered { epoch, pos, msg } => {
                    let bad: Vec<(Epoch, u64)> = self
                        .accepts_by_msg
                        .get(&msg)
                        .into_iter()
                        .flatten()
                        .filter(|(e0, k0)| *e0 <= epoch && *k0 != pos)
                        .copied()
                        .collect();
                    for (e0, k0) in bad {
                        self.fail(
                            PropertyId::Inv8,
                            vec![p],
                            format!("{p} delivered {msg} at position {pos} in epoch {epoch}, but it was accepted at {k0} in epoch {e0}"),
                        );
                    }
                    self.delivered.entry(p).or_default().push(msg);
                }
                Observation::NewConfigHandled { epoch, prior_epoch } => {
                    if let Some(e) = self.fully_initialized.range(..epoch).next_back().copied() {
                        if prior_epoch < e {
                            self.fail(
                                PropertyId::Inv3,
                                vec![p],
                                format!("{p} took over epoch {epoch} from epoch {prior_epoch}, below initialized epoch {e}"),
                            );
                        }
                    }
                    after_transfer.insert(p);
                }
                Observation::NewStateSent { epoch, log } => {
                    for (k, slot) in log.iter().enumerate() {
                        let Some(m) = slot else { continue };
                        let traced = self
                            .accepts_by_pos
                            .get(&(k as u64))
                            .is_some_and(|rs| rs.iter().any(|r| r.epoch < epoch && r.msg == *m));
                        if !traced {
                            self.fail(
                                PropertyId::Inv4,
                                vec![p],
                                format!("NEW_STATE({epoch}) carries {m} at {k} without an earlier ACCEPT"),
                            );
                        }
                    }
                }
                Observation::NewStateHandled { .. } => {
                    after_transfer.insert(p);
                }
                Observation::ProbeUnderflow => self.fail(
                    PropertyId::ProbeUnderflow,
                    vec![p],
                    format!("{p} probed below the lowest stored epoch without finding an initialized process"),
                ),
                Observation::HoleCommitted { epoch, pos } => self.fail(
                    PropertyId::DeliverySeq,
                    vec![p],
                    format!("{p} reached COMMIT({epoch},{pos}) for an empty slot"),
                ),
                Observation::Appended { .. }
                | Observation::Ready { .. }
                | Observation::ProbingStarted { .. }
                | Observation::TaskStep => {}
            }
        }

        for p in stepped {
            let Some(s) = states.get(&p) else { continue };
            self.check_node(p, s);
            if after_transfer.contains(&p) {
                self.check_inv5(p, s);
            }
        }
        for (p, e, k) in after_accept {
            let Some(s) = states.get(&p) else { continue };
            if s.epoch != e {
                continue;
            }
            let expected = self.accepts_by_pos.get(&k).and_then(|rs| rs.iter().find(|r| r.epoch == e));
            if let Some(r) = expected {
                if s.ids(k as usize + 1) != r.prefix {
                    self.fail(
                        PropertyId::Inv6,
                        vec![p],
                        format!("{p} acknowledged ACCEPT({e},{k}) with a log prefix differing from the leader's"),
                    );
                }
            }
        }
        for (e, k, m) in new_commits {
            for (q, s) in states {
                if s.epoch > e && s.msg.get(k as usize).cloned().flatten().map(|x| x.id()) != m {
                    self.fail(
                        PropertyId::Inv1,
                        vec![*q],
                        format!("COMMIT({e},{k}) sent while {q} at epoch {} holds a different entry", s.epoch),
                    );
                }
            }
        }
    }

    fn check_node(&mut self, p: ProcessId, s: &NodeState) {
        if s.epoch > s.new_epoch {
            self.fail(PropertyId::Epochs, vec![p], format!("{p} has epoch {} > new_epoch {}", s.epoch, s.new_epoch));
        }
        if let Some((e0, n0)) = self.last_epochs.insert(p, (s.epoch, s.new_epoch)) {
            if s.epoch < e0 || s.new_epoch < n0 {
                self.fail(PropertyId::Epochs, vec![p], format!("{p} epoch counters decreased"));
            }
        }
        if s.status == Status::Leader && s.last_delivered >= s.next as i64 {
            self.fail(
                PropertyId::LeaderNext,
                vec![p],
                format!("{p} leads with last_delivered {} >= next {}", s.last_delivered, s.next),
            );
        }
        let delivered = self.delivered.get(&p).map(Vec::as_slice).unwrap_or_default();
        let upto = (s.last_delivered + 1) as usize;
        let log = s.ids(upto);
        let matches = log.len() == upto
            && delivered.len() == upto
            && log.iter().zip(delivered).all(|(a, b)| *a == Some(*b));
        if !matches {
            self.fail(
                PropertyId::DeliverySeq,
                vec![p],
                format!("{p} delivery sequence differs from msg[0..={}]", s.last_delivered),
            );
        }
        self.note_epoch(p, s.epoch);
        let bad: Vec<u64> = self
            .committed
            .iter()
            .filter(|(k, (e, m))| {
                s.epoch > *e && s.msg.get(**k as usize).cloned().flatten().map(|x| x.id()) != *m
            })
            .map(|(k, _)| *k)
            .collect();
        for k in bad {
            self.fail(
                PropertyId::Inv1,
                vec![p],
                format!("{p} at epoch {} lost committed position {k}", s.epoch),
            );
        }
    }

    fn check_inv5(&mut self, p: ProcessId, s: &NodeState) {
        let mut bad = Vec::new();
        for (k, slot) in s.msg.iter().enumerate() {
            let Some(m) = slot else { continue };
            let Some(records) = self.accepts_by_pos.get(&(k as u64)) else { continue };
            for r in records.iter().filter(|r| r.epoch < s.epoch && r.msg == m.id()) {
                if s.ids(k + 1) != r.prefix {
                    bad.push((k, r.epoch));
                }
            }
        }
        for (k, e) in bad {
            self.fail(
                PropertyId::Inv5,
                vec![p],
                format!("{p} at epoch {} holds ACCEPT({e},{k})'s message with a different prefix", s.epoch),
            );
        }
    }

    pub fn violations(&self) -> &[Violation] {
        &self.violations
    }

    pub fn into_report(self) -> VerdictReport {
        let mut ids = PropertyId::monitor_properties();
        if self.replication {
            ids.push(PropertyId::Inv2);
        }
        let mut report = VerdictReport::default();
        report.record(&ids, self.violations);
        report
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::AppMessage;

    fn p(i: u32) -> ProcessId {
        ProcessId(i)
    }

    fn id(seq: u64) -> MsgId {
        MsgId { origin: p(9), seq }
    }

    fn ids(m: &Monitor) -> Vec<PropertyId> {
        m.violations().iter().map(|v| v.property).collect()
    }

    #[test]
    fn conflicting_accepts_flag_inv7() {
        let mut m = Monitor::new();
        let states = BTreeMap::new();
        for seq in [0, 1] {
            m.observe(p(1), Observation::AcceptSent { epoch: Epoch(0), pos: 0, msg: id(seq), prefix: vec![Some(id(seq))] });
        }
        m.end_step(&states);
        assert_eq!(ids(&m), vec![PropertyId::Inv7]);
    }

    #[test]
    fn later_epoch_without_committed_entry_flags_inv1() {
        let mut m = Monitor::new();
        let mut s = NodeState::fresh();
        s.epoch = Epoch(2);
        s.new_epoch = Epoch(2);
        s.status = Status::Follower;
        s.msg = vec![Some(AppMessage { origin: p(9), seq: 5, payload: String::new() })];
        let states: BTreeMap<ProcessId, &NodeState> = [(p(2), &s)].into();
        m.observe(p(1), Observation::CommitSent { epoch: Epoch(1), pos: 0, msg: Some(id(0)) });
        m.end_step(&states);
        assert!(ids(&m).contains(&PropertyId::Inv1));
    }

    #[test]
    fn commit_lemmas() {
        let mut m = Monitor::new();
        m.observe(p(1), Observation::CommitSent { epoch: Epoch(0), pos: 0, msg: Some(id(0)) });
        m.observe(p(1), Observation::CommitSent { epoch: Epoch(1), pos: 0, msg: Some(id(1)) });
        m.observe(p(1), Observation::CommitSent { epoch: Epoch(1), pos: 1, msg: Some(id(0)) });
        m.end_step(&BTreeMap::new());
        let v = ids(&m);
        assert!(v.contains(&PropertyId::LemCommitMsg));
        assert!(v.contains(&PropertyId::LemCommitPos));
    }

    #[test]
    fn sigma_mismatch_flags_inv2() {
        let mut m = Monitor::new();
        m.enable_replication();
        m.record_theta(id(0), 1);
        m.check_sigma(p(2), id(0), 1, 7);
        assert!(m.violations().is_empty());
        m.check_sigma(p(3), id(0), 0, 9);
        assert_eq!(ids(&m), vec![PropertyId::Inv2]);
        assert!(m.into_report().verdicts[&PropertyId::Inv2].is_fail());
    }
}
