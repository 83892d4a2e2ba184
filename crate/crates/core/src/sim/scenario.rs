//! Scenario files: who exists, how the system starts, and what happens when.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::model::{Configuration, MessageKind, ProcessId};
use crate::modes::{Mode, Mutant};
use crate::node::ReconfigRequest;
use crate::replication::{Command, MachineKind};
use crate::{Error, Result};

/// Inclusive range of per-message network delays.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Delays {
    pub min: u64,
    pub max: u64,
}

impl Default for Delays {
    fn default() -> Delays {
        Delays { min: 1, max: 1 }
    }
}

/// When a scheduled crash fires. Exactly one of the two is set.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CrashTrigger {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub at: Option<u64>,
    /// Crash instead of handling the first message of this kind.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub on_receive: Option<MessageKind>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Directive {
    /// `proc: null` picks the ready leader with the highest epoch.
    Broadcast {
        at: u64,
        #[serde(default)]
        proc: Option<ProcessId>,
        #[serde(default)]
        payload: String,
    },
    Execute {
        at: u64,
        client: ProcessId,
        command: Command,
    },
    Crash {
        proc: ProcessId,
        #[serde(flatten)]
        when: CrashTrigger,
    },
    Reconfigure {
        at: u64,
        by: ProcessId,
        desired_members: BTreeSet<ProcessId>,
        #[serde(default)]
        desired_leader: Option<ProcessId>,
    },
}

impl Directive {
    /// Scheduled firing time; `None` for event-triggered crashes.
    pub fn time(&self) -> Option<u64> {
        match self {
            Directive::Broadcast { at, .. }
            | Directive::Execute { at, .. }
            | Directive::Reconfigure { at, .. } => Some(*at),
            Directive::Crash { when, .. } => when.at,
        }
    }

    pub fn request(&self) -> Option<ReconfigRequest> {
        match self {
            Directive::Reconfigure {
                desired_members,
                desired_leader,
                ..
            } => Some(ReconfigRequest {
                desired_members: desired_members.clone(),
                desired_leader: *desired_leader,
            }),
            _ => None,
        }
    }
}

fn default_cs_latency() -> u64 {
    1
}

fn default_step_cap() -> u64 {
    200_000
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scenario {
    #[serde(default)]
    pub name: String,
    pub mode: Mode,
    pub processes: Vec<ProcessId>,
    pub initial_config: Configuration,
    /// Enables the passive-replication layer.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub machine: Option<MachineKind>,
    #[serde(default)]
    pub schedule: Vec<Directive>,
    #[serde(default)]
    pub delays: Delays,
    #[serde(default = "default_cs_latency")]
    pub cs_latency: u64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_step_cap")]
    pub step_cap: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mutant: Option<Mutant>,
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Scenario> {
        let s: Scenario = serde_json::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenarios always serialize")
    }

    /// A scenario with a single configuration and no directives.
    pub fn empty(mode: Mode, initial_config: Configuration) -> Scenario {
        Scenario {
            name: String::new(),
            mode,
            processes: initial_config.members.iter().copied().collect(),
            initial_config,
            machine: None,
            schedule: Vec::new(),
            delays: Delays::default(),
            cs_latency: default_cs_latency(),
            seed: 0,
            step_cap: default_step_cap(),
            mutant: None,
        }
    }

    /// Processes no directive ever crashes.
    pub fn survivors(&self) -> BTreeSet<ProcessId> {
        let crashed: BTreeSet<ProcessId> = self
            .schedule
            .iter()
            .filter_map(|d| match d {
                Directive::Crash { proc, .. } => Some(*proc),
                _ => None,
            })
            .collect();
        self.processes.iter().copied().filter(|p| !crashed.contains(p)).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Scenario(m));
        let declared: BTreeSet<ProcessId> = self.processes.iter().copied().collect();
        if declared.len() != self.processes.len() {
            return bad("duplicate process ids".into());
        }
        let c = &self.initial_config;
        if c.epoch.0 < 0 {
            return bad(format!("initial epoch {} is negative", c.epoch));
        }
        if !c.is_well_formed() {
            return bad(format!("initial configuration {c} is not well formed"));
        }
        if !c.members.is_subset(&declared) {
            return bad(format!("initial configuration {c} names undeclared processes"));
        }
        if self.delays.min == 0 || self.delays.min > self.delays.max {
            return bad(format!("delay range [{}, {}] must satisfy 1 <= min <= max", self.delays.min, self.delays.max));
        }
        let known = |p: &ProcessId| declared.contains(p);
        for (i, d) in self.schedule.iter().enumerate() {
            let ok = match d {
                Directive::Broadcast { proc, .. } => proc.as_ref().map_or(true, known),
                Directive::Execute { client, .. } => {
                    if self.machine.is_none() {
                        return bad(format!("directive {i}: execute requires a machine"));
                    }
                    known(client)
                }
                Directive::Crash { proc, when } => {
                    if when.at.is_some() == when.on_receive.is_some() {
                        return bad(format!("directive {i}: crash needs exactly one of at, on_receive"));
                    }
                    known(proc)
                }
                Directive::Reconfigure {
                    by,
                    desired_members,
                    desired_leader,
                    ..
                } => {
                    if desired_members.is_empty() {
                        return bad(format!("directive {i}: empty desired membership"));
                    }
                    known(by) && desired_members.iter().all(known) && desired_leader.as_ref().map_or(true, known)
                }
            };
            if !ok {
                return bad(format!("directive {i} references an undeclared process"));
            }
        }
        self.check_availability()
    }

    /// Conservative static check of the availability assumption: every
    /// configuration that can be introduced contains a process that never
    /// crashes. A reconfiguration introduces the desired members plus a
    /// leader, so it suffices that each desired set contains a survivor.
    fn check_availability(&self) -> Result<()> {
        let survivors = self.survivors();
        if self.initial_config.members.is_disjoint(&survivors) {
            return Err(Error::Scenario(format!(
                "fault plan crashes every member of {}",
                self.initial_config
            )));
        }
        for d in &self.schedule {
            if let Directive::Reconfigure { desired_members, .. } = d {
                if desired_members.is_disjoint(&survivors) {
                    return Err(Error::Scenario(format!(
                        "fault plan crashes every desired member of {desired_members:?}"
                    )));
                }
            }
        }
        Ok(())
    }
}

pub const BUNDLED: [(&str, &str); 7] = [
    ("fig4_reconfig", include_str!("../../scenarios/fig4_reconfig.json")),
    ("steady_latency", include_str!("../../scenarios/steady_latency.json")),
    ("functional_reconfig", include_str!("../../scenarios/functional_reconfig.json")),
    ("passive_counter", include_str!("../../scenarios/passive_counter.json")),
    ("stale_read_anomaly", include_str!("../../scenarios/stale_read_anomaly.json")),
    ("singleton", include_str!("../../scenarios/singleton.json")),
    ("five_member", include_str!("../../scenarios/five_member.json")),
];

pub fn bundled(name: &str) -> Option<Scenario> {
    BUNDLED
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, text)| Scenario::from_json(text).expect("bundled scenarios are valid"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Epoch;

    fn p(i: u32) -> ProcessId {
        ProcessId(i)
    }

    #[test]
    fn every_bundled_scenario_parses() {
        for (name, _) in BUNDLED {
            assert!(bundled(name).is_some(), "{name}");
        }
    }

    #[test]
    fn rejects_plan_killing_a_whole_configuration() {
        let mut s = Scenario::empty(Mode::Vab, Configuration::new(Epoch(0), [p(1), p(2)], p(1)));
        for q in [1, 2] {
            s.schedule.push(Directive::Crash {
                proc: p(q),
                when: CrashTrigger { at: Some(5), on_receive: None },
            });
        }
        assert!(matches!(s.validate(), Err(Error::Scenario(_))));
        s.schedule.pop();
        assert!(s.validate().is_ok());
    }

    #[test]
    fn rejects_undeclared_references() {
        let mut s = Scenario::empty(Mode::Vab, Configuration::new(Epoch(0), [p(1)], p(1)));
        s.schedule.push(Directive::Broadcast { at: 1, proc: Some(p(7)), payload: String::new() });
        assert!(s.validate().is_err());
    }

    #[test]
    fn directive_json_shape() {
        let d: Directive = serde_json::from_str(r#"{"op":"crash","proc":2,"on_receive":"NEW_CONFIG"}"#).unwrap();
        assert_eq!(
            d,
            Directive::Crash { proc: p(2), when: CrashTrigger { at: None, on_receive: Some(MessageKind::NewConfig) } }
        );
        assert_eq!(d.time(), None);
    }
}
