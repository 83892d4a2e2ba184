//! Basic configuration properties, Integrity, Total Order and Agreement.

use std::collections::{BTreeMap, BTreeSet};

use super::{Index, PropertyId, Violation};
use crate::model::{Action, Configuration, Epoch, History, MsgId, ProcessId};

pub fn check_basic_config(h: &History) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut by_epoch: BTreeMap<Epoch, (usize, &Configuration)> = BTreeMap::new();
    let mut last_epoch: BTreeMap<ProcessId, (usize, Epoch)> = BTreeMap::new();
    let mut introduced: BTreeMap<&Configuration, usize> = BTreeMap::new();
    let mut joins: Vec<(usize, ProcessId, &Configuration)> = Vec::new();

    for e in h.entries() {
        match &e.action {
            Action::ConfChanged { config, .. } => {
                match by_epoch.get(&config.epoch) {
                    Some((k, c)) if c.members != config.members || c.leader != config.leader => {
                        out.push(Violation::new(
                            PropertyId::P1a,
                            vec![*k, e.index],
                            vec![],
                            format!("epoch {} joined as {} and as {}", config.epoch, c, config),
                        ));
                    }
                    Some(_) => {}
                    None => {
                        by_epoch.insert(config.epoch, (e.index, config));
                    }
                }
                if !config.members.contains(&e.process) {
                    out.push(Violation::new(
                        PropertyId::P1b,
                        vec![e.index],
                        vec![e.process],
                        format!("{} joined {} without being a member", e.process, config),
                    ));
                }
                if let Some((k, prev)) = last_epoch.get(&e.process) {
                    if *prev >= config.epoch {
                        out.push(Violation::new(
                            PropertyId::P1c,
                            vec![*k, e.index],
                            vec![e.process],
                            format!("{} joined epoch {} after epoch {}", e.process, config.epoch, prev),
                        ));
                    }
                }
                last_epoch.insert(e.process, (e.index, config.epoch));
                joins.push((e.index, e.process, config));
            }
            Action::Introduction(config) => {
                if let Some(k) = introduced.get(config) {
                    out.push(Violation::new(
                        PropertyId::P1d,
                        vec![*k, e.index],
                        vec![e.process],
                        format!("{config} introduced twice"),
                    ));
                } else {
                    introduced.insert(config, e.index);
                }
            }
            _ => {}
        }
    }
    for (k, p, config) in joins {
        if !introduced.contains_key(config) {
            out.push(Violation::new(
                PropertyId::P1d,
                vec![k],
                vec![p],
                format!("{p} joined {config}, which was never introduced"),
            ));
        }
    }
    out
}

pub fn check_safety(h: &History) -> Vec<Violation> {
    let idx = Index::new(h);
    let mut out = check_uniqueness(h);
    out.extend(check_integrity(&idx));
    out.extend(check_total_order(&idx));
    out.extend(check_agreement(&idx));
    out
}

fn check_uniqueness(h: &History) -> Vec<Violation> {
    let mut seen: BTreeMap<MsgId, usize> = BTreeMap::new();
    let mut out = Vec::new();
    for e in h.entries() {
        if let Action::Broadcast(m) = &e.action {
            if let Some(k) = seen.insert(m.id(), e.index) {
                out.push(Violation::new(
                    PropertyId::Uniqueness,
                    vec![k, e.index],
                    vec![e.process],
                    format!("{} broadcast twice", m.id()),
                ));
            }
        }
    }
    out
}

fn check_integrity(idx: &Index) -> Vec<Violation> {
    let mut out = Vec::new();
    for (p, ds) in &idx.deliveries {
        let mut seen: BTreeMap<MsgId, usize> = BTreeMap::new();
        for (k, m) in ds {
            if let Some(first) = seen.insert(*m, *k) {
                out.push(Violation::new(
                    PropertyId::P2Integrity,
                    vec![first, *k],
                    vec![*p],
                    format!("{p} delivered {m} twice"),
                ));
            }
            match idx.broadcast_at.get(m) {
                Some(b) if b < k => {}
                _ => out.push(Violation::new(
                    PropertyId::P2Integrity,
                    vec![*k],
                    vec![*p],
                    format!("{p} delivered {m} without a prior broadcast"),
                )),
            }
        }
    }
    out
}

/// Without duplicate deliveries, Total Order holds iff every deliverer of
/// a message delivers it at the same position after the same predecessor.
/// Processes with duplicates fall back to the pairwise definition.
fn check_total_order(idx: &Index) -> Vec<Violation> {
    let has_dups = idx.deliveries.values().any(|ds| {
        let set: BTreeSet<&MsgId> = ds.iter().map(|(_, m)| m).collect();
        set.len() != ds.len()
    });
    if has_dups {
        return total_order_pairwise(idx);
    }
    let mut out = Vec::new();
    // message -> (position, predecessor, index, process) of the first deliverer seen
    let mut slot: BTreeMap<MsgId, (usize, Option<MsgId>, usize, ProcessId)> = BTreeMap::new();
    for (p, ds) in &idx.deliveries {
        for (pos, (k, m)) in ds.iter().enumerate() {
            let pred = pos.checked_sub(1).map(|q| ds[q].1);
            match slot.get(m) {
                None => {
                    slot.insert(*m, (pos, pred, *k, *p));
                }
                Some((pos0, pred0, k0, p0)) if (*pos0, *pred0) != (pos, pred) => {
                    out.push(Violation::new(
                        PropertyId::P3TotalOrder,
                        vec![*k0, *k],
                        vec![*p0, *p],
                        format!(
                            "{m} delivered by {p0} at position {pos0} and by {p} at position {pos} with different predecessors"
                        ),
                    ));
                }
                Some(_) => {}
            }
        }
    }
    out
}

fn total_order_pairwise(idx: &Index) -> Vec<Violation> {
    let mut out = Vec::new();
    let first: BTreeMap<ProcessId, BTreeMap<MsgId, usize>> =
        idx.deliveries.keys().map(|p| (*p, idx.first_deliveries(*p))).collect();
    for (i, ds) in &idx.deliveries {
        let mut last: BTreeMap<MsgId, usize> = BTreeMap::new();
        for (k, m) in ds {
            last.insert(*m, *k);
        }
        for (m1, k) in &first[i] {
            for (m2, l) in &last {
                if k >= l {
                    continue;
                }
                for (j, fj) in &first {
                    let Some(l2) = fj.get(m2) else { continue };
                    if !matches!(fj.get(m1), Some(k2) if k2 < l2) {
                        out.push(Violation::new(
                            PropertyId::P3TotalOrder,
                            vec![*k, *l, *l2],
                            vec![*i, *j],
                            format!("{i} delivered {m1} before {m2}, {j} delivered {m2} without {m1} first"),
                        ));
                    }
                }
            }
        }
    }
    out
}

/// Agreement holds iff delivered sets form a chain under inclusion.
fn check_agreement(idx: &Index) -> Vec<Violation> {
    let mut sets: Vec<(ProcessId, BTreeSet<MsgId>)> = idx
        .deliveries
        .iter()
        .map(|(p, ds)| (*p, ds.iter().map(|(_, m)| *m).collect()))
        .collect();
    sets.sort_by_key(|(p, s)| (s.len(), *p));
    let mut out = Vec::new();
    for w in sets.windows(2) {
        let (pa, a) = &w[0];
        let (pb, b) = &w[1];
        if let Some(m1) = a.difference(b).next() {
            let m2 = b.difference(a).next().expect("larger set has an extra element");
            out.push(Violation::new(
                PropertyId::P4Agreement,
                vec![],
                vec![*pa, *pb],
                format!("{pa} delivered {m1} but not {m2}; {pb} delivered {m2} but not {m1}"),
            ));
        }
    }
    out
}
