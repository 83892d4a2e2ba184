//! Offline history checkers, online state monitors and the
//! linearizability oracle.

pub mod brute;
pub mod linearizability;
pub mod liveness;
pub mod monitor;
pub mod order;
pub mod safety;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::model::{Action, History, MsgId, ProcessId};
use crate::modes::Mode;

pub use liveness::LivenessPremise;
pub use monitor::Monitor;

/// Every checked property or invariant.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PropertyId {
    #[serde(rename = "P1a")]
    P1a,
    #[serde(rename = "P1b")]
    P1b,
    #[serde(rename = "P1c")]
    P1c,
    #[serde(rename = "P1d")]
    P1d,
    #[serde(rename = "Uniqueness")]
    Uniqueness,
    #[serde(rename = "P2-Integrity")]
    P2Integrity,
    #[serde(rename = "P3-TotalOrder")]
    P3TotalOrder,
    #[serde(rename = "P4-Agreement")]
    P4Agreement,
    #[serde(rename = "P5")]
    P5,
    #[serde(rename = "P5a")]
    P5a,
    #[serde(rename = "P5b")]
    P5b,
    #[serde(rename = "P5c")]
    P5c,
    #[serde(rename = "P6-LocalOrder")]
    P6LocalOrder,
    #[serde(rename = "P7-GlobalOrder")]
    P7GlobalOrder,
    #[serde(rename = "P8-PrimaryIntegrity")]
    P8PrimaryIntegrity,
    #[serde(rename = "P9")]
    P9,
    #[serde(rename = "P10a")]
    P10a,
    #[serde(rename = "P10b")]
    P10b,
    #[serde(rename = "Inv1")]
    Inv1,
    #[serde(rename = "Inv2")]
    Inv2,
    #[serde(rename = "Inv3")]
    Inv3,
    #[serde(rename = "Inv4")]
    Inv4,
    #[serde(rename = "Inv5")]
    Inv5,
    #[serde(rename = "Inv6")]
    Inv6,
    #[serde(rename = "Inv7")]
    Inv7,
    #[serde(rename = "Inv8")]
    Inv8,
    #[serde(rename = "LemCommitMsg")]
    LemCommitMsg,
    #[serde(rename = "LemCommitPos")]
    LemCommitPos,
    #[serde(rename = "Epochs")]
    Epochs,
    #[serde(rename = "LeaderNext")]
    LeaderNext,
    #[serde(rename = "DeliverySeq")]
    DeliverySeq,
    #[serde(rename = "FIFO")]
    Fifo,
    #[serde(rename = "ProbeUnderflow")]
    ProbeUnderflow,
    #[serde(rename = "Linearizability")]
    Linearizability,
}

impl PropertyId {
    pub fn as_str(self) -> &'static str {
        use PropertyId::*;
        match self {
            P1a => "P1a",
            P1b => "P1b",
            P1c => "P1c",
            P1d => "P1d",
            Uniqueness => "Uniqueness",
            P2Integrity => "P2-Integrity",
            P3TotalOrder => "P3-TotalOrder",
            P4Agreement => "P4-Agreement",
            P5 => "P5",
            P5a => "P5a",
            P5b => "P5b",
            P5c => "P5c",
            P6LocalOrder => "P6-LocalOrder",
            P7GlobalOrder => "P7-GlobalOrder",
            P8PrimaryIntegrity => "P8-PrimaryIntegrity",
            P9 => "P9",
            P10a => "P10a",
            P10b => "P10b",
            Inv1 => "Inv1",
            Inv2 => "Inv2",
            Inv3 => "Inv3",
            Inv4 => "Inv4",
            Inv5 => "Inv5",
            Inv6 => "Inv6",
            Inv7 => "Inv7",
            Inv8 => "Inv8",
            LemCommitMsg => "LemCommitMsg",
            LemCommitPos => "LemCommitPos",
            Epochs => "Epochs",
            LeaderNext => "LeaderNext",
            DeliverySeq => "DeliverySeq",
            Fifo => "FIFO",
            ProbeUnderflow => "ProbeUnderflow",
            Linearizability => "Linearizability",
        }
    }

    /// Properties evaluated offline on a history.
    pub fn history_properties(mode: Mode) -> Vec<PropertyId> {
        use PropertyId::*;
        let mut v = vec![P1a, P1b, P1c, P1d, Uniqueness, P2Integrity, P3TotalOrder, P4Agreement];
        if mode != Mode::Vab {
            v.extend([P6LocalOrder, P7GlobalOrder]);
        }
        match mode {
            Mode::Po => v.push(P8PrimaryIntegrity),
            Mode::Spo => v.extend([P9, P10a, P10b]),
            Mode::Vab => {}
        }
        v
    }

    pub fn liveness_properties() -> [PropertyId; 4] {
        [PropertyId::P5, PropertyId::P5a, PropertyId::P5b, PropertyId::P5c]
    }

    /// Online monitors.
    pub fn monitor_properties() -> Vec<PropertyId> {
        use PropertyId::*;
        vec![
            Inv1, Inv3, Inv4, Inv5, Inv6, Inv7, Inv8, LemCommitMsg, LemCommitPos, Epochs, LeaderNext,
            DeliverySeq, Fifo, ProbeUnderflow,
        ]
    }
}

impl fmt::Display for PropertyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for PropertyId {
    type Err = String;

    fn from_str(s: &str) -> Result<PropertyId, String> {
        serde_json::from_value(serde_json::Value::String(s.to_string()))
            .map_err(|_| format!("unknown property id {s:?}"))
    }
}

/// A failed check with a witness small enough to re-derive by hand.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub property: PropertyId,
    /// History indices involved (1-based). Empty for state monitors.
    pub indices: Vec<usize>,
    pub processes: Vec<ProcessId>,
    pub message: String,
}

impl Violation {
    pub fn new(property: PropertyId, indices: Vec<usize>, processes: Vec<ProcessId>, message: impl Into<String>) -> Violation {
        Violation {
            property,
            indices,
            processes,
            message: message.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.property, self.message)?;
        if !self.indices.is_empty() {
            write!(f, " (indices {:?})", self.indices)?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "SCREAMING-KEBAB-CASE")]
pub enum Verdict {
    Pass,
    Fail { violations: Vec<Violation> },
    NotEvaluated { reason: String },
}

impl Verdict {
    pub fn is_fail(&self) -> bool {
        matches!(self, Verdict::Fail { .. })
    }
}

/// One verdict per property.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerdictReport {
    pub verdicts: BTreeMap<PropertyId, Verdict>,
}

impl VerdictReport {
    /// Records `ids` as passing unless a violation names them.
    pub fn record(&mut self, ids: &[PropertyId], violations: Vec<Violation>) {
        let mut by_id: BTreeMap<PropertyId, Vec<Violation>> = BTreeMap::new();
        for v in violations {
            by_id.entry(v.property).or_default().push(v);
        }
        for id in ids {
            let verdict = match by_id.remove(id) {
                Some(vs) => Verdict::Fail { violations: vs },
                None => Verdict::Pass,
            };
            self.verdicts.insert(*id, verdict);
        }
        for (id, vs) in by_id {
            self.verdicts.insert(id, Verdict::Fail { violations: vs });
        }
    }

    pub fn not_evaluated(&mut self, ids: &[PropertyId], reason: &str) {
        for id in ids {
            self.verdicts.insert(
                *id,
                Verdict::NotEvaluated {
                    reason: reason.to_string(),
                },
            );
        }
    }

    pub fn merge(&mut self, other: VerdictReport) {
        self.verdicts.extend(other.verdicts);
    }

    pub fn violations(&self) -> impl Iterator<Item = &Violation> {
        self.verdicts.values().flat_map(|v| match v {
            Verdict::Fail { violations } => violations.as_slice(),
            _ => &[],
        })
    }

    pub fn failed(&self) -> Vec<PropertyId> {
        self.verdicts
            .iter()
            .filter(|(_, v)| v.is_fail())
            .map(|(k, _)| *k)
            .collect()
    }

    pub fn is_clean(&self) -> bool {
        self.failed().is_empty()
    }

    /// Plain-text table, one property per line.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for (id, v) in &self.verdicts {
            match v {
                Verdict::Pass => out.push_str(&format!("{id:<22} PASS\n")),
                Verdict::NotEvaluated { reason } => {
                    out.push_str(&format!("{id:<22} NOT-EVALUATED ({reason})\n"))
                }
                Verdict::Fail { violations } => {
                    out.push_str(&format!("{id:<22} FAIL ({} violation(s))\n", violations.len()));
                    for w in violations.iter().take(3) {
                        out.push_str(&format!("    {w}\n"));
                    }
                }
            }
        }
        out
    }
}

/// Safety and mode-specific order properties of a history.
pub fn check_history(h: &History, mode: Mode) -> VerdictReport {
    let mut report = VerdictReport::default();
    let mut violations = safety::check_basic_config(h);
    violations.extend(safety::check_safety(h));
    if mode != Mode::Vab {
        violations.extend(order::check_primary_order(h, mode));
    }
    if mode == Mode::Spo {
        violations.extend(order::check_speculative(h));
    }
    report.record(&PropertyId::history_properties(mode), violations);
    report
}

/// Per-history indexes shared by the checkers.
pub(crate) struct Index<'a> {
    pub h: &'a History,
    pub epochs: Vec<Option<crate::model::Epoch>>,
    /// First broadcast of each message.
    pub broadcast_at: BTreeMap<MsgId, usize>,
    /// Deliveries per process, in history order: (index, message).
    pub deliveries: BTreeMap<ProcessId, Vec<(usize, MsgId)>>,
}

impl<'a> Index<'a> {
    pub fn new(h: &'a History) -> Index<'a> {
        let mut broadcast_at = BTreeMap::new();
        let mut deliveries: BTreeMap<ProcessId, Vec<(usize, MsgId)>> = BTreeMap::new();
        for e in h.entries() {
            match &e.action {
                Action::Broadcast(m) => {
                    broadcast_at.entry(m.id()).or_insert(e.index);
                }
                Action::Deliver(m) => deliveries.entry(e.process).or_default().push((e.index, m.id())),
                _ => {}
            }
        }
        Index {
            h,
            epochs: h.epochs(),
            broadcast_at,
            deliveries,
        }
    }

    /// Epoch in which `m` was broadcast.
    pub fn broadcast_epoch(&self, m: &MsgId) -> Option<crate::model::Epoch> {
        self.broadcast_at.get(m).and_then(|k| self.epochs[*k])
    }

    /// First delivery index of each message at `p`.
    pub fn first_deliveries(&self, p: ProcessId) -> BTreeMap<MsgId, usize> {
        let mut out = BTreeMap::new();
        for (k, m) in self.deliveries.get(&p).map(Vec::as_slice).unwrap_or_default() {
            out.entry(*m).or_insert(*k);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn property_ids_round_trip_through_strings() {
        for id in PropertyId::monitor_properties()
            .into_iter()
            .chain(PropertyId::history_properties(Mode::Spo))
            .chain(PropertyId::history_properties(Mode::Po))
            .chain(PropertyId::liveness_properties())
        {
            assert_eq!(id.as_str().parse::<PropertyId>().unwrap(), id);
            assert_eq!(serde_json::to_string(&id).unwrap(), format!("\"{}\"", id.as_str()));
        }
    }

    #[test]
    fn report_marks_unnamed_properties_as_passing() {
        let mut r = VerdictReport::default();
        r.record(
            &[PropertyId::P1a, PropertyId::P2Integrity],
            vec![Violation::new(PropertyId::P1a, vec![1], vec![], "x")],
        );
        assert!(r.verdicts[&PropertyId::P1a].is_fail());
        assert_eq!(r.verdicts[&PropertyId::P2Integrity], Verdict::Pass);
        assert_eq!(r.failed(), vec![PropertyId::P1a]);
    }

    #[test]
    fn empty_history_is_clean_in_every_mode() {
        for mode in Mode::ALL {
            assert!(check_history(&History::new(), mode).is_clean());
        }
    }
}
