//! Liveness of the last reconfiguration request. "Eventually" is read as
//! "by the end of a quiescent run".

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{PropertyId, VerdictReport, Violation};
use crate::model::{Action, History, MsgId, ProcessId};

/// Facts about the run supplied by the harness, never inferred from the
/// history.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LivenessPremise {
    /// History index of the last `reconfig_req`.
    pub last_request: Option<usize>,
    pub requester: Option<ProcessId>,
    pub requester_correct: bool,
    /// The leader named by the last request, if any, never crashed.
    pub preferred_leader_correct: bool,
    /// No other reconfiguration call took a step after the last request.
    pub isolated: bool,
    /// Every member of the configuration the request introduced is correct.
    pub all_members_correct: bool,
    pub quiescent: bool,
}

pub fn check_liveness(h: &History, premise: &LivenessPremise) -> VerdictReport {
    let mut report = VerdictReport::default();
    let all = PropertyId::liveness_properties();
    if !premise.quiescent {
        report.not_evaluated(&all, "run not quiescent");
        return report;
    }
    let (Some(req), Some(requester)) = (premise.last_request, premise.requester) else {
        report.not_evaluated(&all, "no reconfiguration request");
        return report;
    };
    if !premise.requester_correct || !premise.preferred_leader_correct || !premise.isolated {
        report.not_evaluated(&all, "premise does not hold");
        return report;
    }

    let response = h.entries()[req..]
        .iter()
        .filter(|e| e.process == requester)
        .find_map(|e| match &e.action {
            Action::ReconfigResp(c) => Some((e.index, c.clone())),
            _ => None,
        });
    let config = match response {
        Some((k, Some(c))) => {
            if !h.entries().iter().any(|e| e.action == Action::Introduction(c.clone())) {
                report.record(
                    &all[..1],
                    vec![Violation::new(PropertyId::P5, vec![k], vec![requester], format!("{c} returned but never introduced"))],
                );
                report.not_evaluated(&all[1..], "last request did not introduce a configuration");
                return report;
            }
            report.record(&all[..1], vec![]);
            c
        }
        Some((k, None)) => {
            report.record(
                &all[..1],
                vec![Violation::new(PropertyId::P5, vec![req, k], vec![requester], "isolated reconfiguration returned bottom")],
            );
            report.not_evaluated(&all[1..], "last request did not introduce a configuration");
            return report;
        }
        None => {
            report.record(
                &all[..1],
                vec![Violation::new(PropertyId::P5, vec![req], vec![requester], "last reconfiguration never returned")],
            );
            report.not_evaluated(&all[1..], "last request did not introduce a configuration");
            return report;
        }
    };
    if !premise.all_members_correct {
        report.not_evaluated(&all[1..], "a member of the new configuration crashed");
        return report;
    }

    let epochs = h.epochs();
    let mut joined: BTreeSet<ProcessId> = BTreeSet::new();
    let mut delivered: std::collections::BTreeMap<ProcessId, BTreeSet<MsgId>> = Default::default();
    let mut in_epoch: Vec<(usize, ProcessId, MsgId)> = Vec::new();
    let mut anywhere: BTreeSet<MsgId> = BTreeSet::new();
    for e in h.entries() {
        match &e.action {
            Action::ConfChanged { config: c, .. } if *c == config => {
                joined.insert(e.process);
            }
            Action::Broadcast(m) if config.members.contains(&e.process) && epochs[e.index] == Some(config.epoch) => {
                in_epoch.push((e.index, e.process, m.id()));
            }
            Action::Deliver(m) => {
                delivered.entry(e.process).or_default().insert(m.id());
                anywhere.insert(m.id());
            }
            _ => {}
        }
    }

    let mut a = Vec::new();
    for q in &config.members {
        if !joined.contains(q) {
            a.push(Violation::new(PropertyId::P5a, vec![], vec![*q], format!("{q} never joined {config}")));
        }
    }
    let has = |q: &ProcessId, m: &MsgId| delivered.get(q).is_some_and(|s| s.contains(m));
    let mut b = Vec::new();
    for (k, sender, m) in &in_epoch {
        for q in config.members.iter().filter(|q| !has(q, m)) {
            b.push(Violation::new(
                PropertyId::P5b,
                vec![*k],
                vec![*sender, *q],
                format!("{m} broadcast by {sender} in epoch {} never delivered by {q}", config.epoch),
            ));
        }
    }
    let mut c = Vec::new();
    for m in &anywhere {
        for q in config.members.iter().filter(|q| !has(q, m)) {
            c.push(Violation::new(PropertyId::P5c, vec![], vec![*q], format!("{m} delivered somewhere but never by {q}")));
        }
    }
    report.record(&[PropertyId::P5a], a);
    report.record(&[PropertyId::P5b], b);
    report.record(&[PropertyId::P5c], c);
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::checker::Verdict;
    use crate::model::{AppMessage, Configuration, Epoch};

    fn p(i: u32) -> ProcessId {
        ProcessId(i)
    }

    fn premise(req: usize) -> LivenessPremise {
        LivenessPremise {
            last_request: Some(req),
            requester: Some(p(9)),
            requester_correct: true,
            preferred_leader_correct: true,
            isolated: true,
            all_members_correct: true,
            quiescent: true,
        }
    }

    #[test]
    fn non_quiescent_runs_are_not_evaluated() {
        let r = check_liveness(&History::new(), &LivenessPremise::default());
        assert!(matches!(r.verdicts[&PropertyId::P5], Verdict::NotEvaluated { .. }));
    }

    #[test]
    fn member_missing_delivery_fails_5c() {
        let c = Configuration::new(Epoch(1), [p(1), p(2)], p(1));
        let m = AppMessage { origin: p(1), seq: 0, payload: String::new() };
        let mut h = History::new();
        let req = h.push(p(9), 0, Action::ReconfigReq);
        h.push(p(9), 0, Action::Introduction(c.clone()));
        h.push(p(9), 0, Action::ReconfigResp(Some(c.clone())));
        h.push(p(1), 0, Action::ConfChanged { config: c.clone(), speculative: None });
        h.push(p(2), 0, Action::ConfChanged { config: c.clone(), speculative: None });
        h.push(p(1), 0, Action::Broadcast(m.clone()));
        h.push(p(1), 0, Action::Deliver(m));
        let r = check_liveness(&h, &premise(req));
        assert_eq!(r.verdicts[&PropertyId::P5], Verdict::Pass);
        assert_eq!(r.verdicts[&PropertyId::P5a], Verdict::Pass);
        assert!(r.verdicts[&PropertyId::P5b].is_fail());
        assert!(r.verdicts[&PropertyId::P5c].is_fail());
    }

    #[test]
    fn bottom_response_fails_head() {
        let mut h = History::new();
        let req = h.push(p(9), 0, Action::ReconfigReq);
        h.push(p(9), 0, Action::ReconfigResp(None));
        let r = check_liveness(&h, &premise(req));
        assert!(r.verdicts[&PropertyId::P5].is_fail());
    }
}
