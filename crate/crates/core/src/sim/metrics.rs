//! Latency and downtime probes, measured in simulated clock units.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::model::{Configuration, Epoch, MsgId, ProcessId};

/// Timestamps recorded while the simulation runs.
#[derive(Clone, Debug, Default)]
pub(crate) struct Probes {
    pub configs: BTreeMap<Epoch, (Configuration, u64)>,
    pub joined: BTreeMap<Epoch, BTreeMap<ProcessId, u64>>,
    pub crashes: BTreeMap<ProcessId, u64>,
    pub broadcast_at: BTreeMap<MsgId, u64>,
    /// (leader, epoch, message, time)
    pub appended: Vec<(ProcessId, Epoch, MsgId, u64)>,
    pub delivered: BTreeMap<(ProcessId, MsgId), u64>,
    pub commits: Vec<(Epoch, Option<MsgId>)>,
    /// (new leader, new epoch, prior epoch, time)
    pub new_config: Vec<(ProcessId, Epoch, Epoch, u64)>,
    pub ready: BTreeMap<Epoch, u64>,
    pub probe_started: BTreeMap<Epoch, u64>,
}

impl Probes {
    pub fn activated_at(&self, e: Epoch) -> Option<u64> {
        let (c, _) = self.configs.get(&e)?;
        let joined = self.joined.get(&e)?;
        c.members.iter().map(|p| joined.get(p).copied()).collect::<Option<Vec<u64>>>()?.into_iter().max()
    }

    fn crashed_by(&self, c: &Configuration, t: u64) -> bool {
        c.members.iter().any(|p| self.crashes.get(p).is_some_and(|ct| *ct <= t))
    }

    fn functional_at(&self, e: Epoch, t: u64) -> bool {
        let Some((c, _)) = self.configs.get(&e) else { return false };
        self.activated_at(e).is_some_and(|a| a <= t) && !self.crashed_by(c, t)
    }

    fn stable_between(&self, e: Epoch, t0: u64, t1: u64) -> bool {
        let Some((c, _)) = self.configs.get(&e) else { return false };
        self.activated_at(e).is_some_and(|a| a <= t0)
            && !self.crashed_by(c, t1)
            && !self.configs.range(e.next()..).any(|(_, (_, intro))| *intro <= t1)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReconfigMetrics {
    pub epoch: Epoch,
    pub leader: ProcessId,
    pub prior_epoch: Epoch,
    pub probe_started: Option<u64>,
    pub new_config_at: u64,
    pub ready_at: Option<u64>,
    /// Whether the configuration being replaced was functional when the
    /// new leader took over.
    pub old_functional: bool,
    pub downtime: Option<u64>,
    /// Messages broadcast between the first PROBE and NEW_CONFIG handling
    /// that the old configuration committed.
    pub committed_in_old_during_probe: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Metrics {
    /// Maximum over the latency samples.
    pub steady_latency: Option<u64>,
    pub latency_samples: Vec<u64>,
    /// One entry per reconfiguration from a functional configuration.
    pub downtime: Vec<u64>,
    pub reconfigurations: Vec<ReconfigMetrics>,
    /// Epoch -> time at which every member had joined.
    pub activation: BTreeMap<Epoch, u64>,
    pub quiescent: bool,
    pub steps: u64,
    pub end_time: u64,
    pub rejected_broadcasts: u64,
}

pub(crate) fn compute(p: &Probes) -> Metrics {
    let mut m = Metrics::default();
    for (leader, e, msg, t0) in &p.appended {
        let Some(t1) = p.delivered.get(&(*leader, *msg)) else { continue };
        if p.stable_between(*e, *t0, *t1) {
            m.latency_samples.push(t1 - t0);
        }
    }
    m.steady_latency = m.latency_samples.iter().max().copied();

    for (leader, e, prior, t0) in &p.new_config {
        let old_functional = p.functional_at(*prior, *t0);
        let ready_at = p.ready.get(e).copied();
        let downtime = match ready_at {
            Some(t1) if old_functional => Some(t1 - t0),
            _ => None,
        };
        let probe_started = p.probe_started.get(e).copied();
        let committed_in_old_during_probe = match probe_started {
            Some(ts) => p
                .commits
                .iter()
                .filter(|(ce, cm)| {
                    *ce == *prior
                        && cm.and_then(|id| p.broadcast_at.get(&id)).is_some_and(|b| *b >= ts && b < t0)
                })
                .count(),
            None => 0,
        };
        m.downtime.extend(downtime);
        m.reconfigurations.push(ReconfigMetrics {
            epoch: *e,
            leader: *leader,
            prior_epoch: *prior,
            probe_started,
            new_config_at: *t0,
            ready_at,
            old_functional,
            downtime,
            committed_in_old_during_probe,
        });
    }
    for e in p.configs.keys() {
        if let Some(t) = p.activated_at(*e) {
            m.activation.insert(*e, t);
        }
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(i: u32) -> ProcessId {
        ProcessId(i)
    }

    fn id(seq: u64) -> MsgId {
        MsgId { origin: p(1), seq }
    }

    fn base() -> Probes {
        let mut pr = Probes::default();
        pr.configs.insert(Epoch(0), (Configuration::new(Epoch(0), [p(1), p(2)], p(1)), 0));
        pr.joined.insert(Epoch(0), [(p(1), 0), (p(2), 0)].into());
        pr
    }

    #[test]
    fn latency_sampled_only_while_stable() {
        let mut pr = base();
        pr.appended.push((p(1), Epoch(0), id(0), 3));
        pr.delivered.insert((p(1), id(0)), 5);
        pr.appended.push((p(1), Epoch(0), id(1), 10));
        pr.delivered.insert((p(1), id(1)), 14);
        pr.crashes.insert(p(2), 12);
        let m = compute(&pr);
        assert_eq!(m.latency_samples, vec![2]);
        assert_eq!(m.steady_latency, Some(2));
    }

    #[test]
    fn downtime_only_from_functional_configuration() {
        let mut pr = base();
        pr.configs.insert(Epoch(1), (Configuration::new(Epoch(1), [p(1), p(2)], p(2)), 7));
        pr.new_config.push((p(2), Epoch(1), Epoch(0), 8));
        pr.ready.insert(Epoch(1), 10);
        assert_eq!(compute(&pr).downtime, vec![2]);
        pr.crashes.insert(p(1), 8);
        let m = compute(&pr);
        assert!(m.downtime.is_empty());
        assert!(!m.reconfigurations[0].old_functional);
    }
}
