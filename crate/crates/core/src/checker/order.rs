//! Primary-order properties (Local Order, Global Order, Primary Integrity)
//! and the speculative-delivery properties.

use std::collections::{BTreeMap, BTreeSet};

use super::{Index, PropertyId, Violation};
use crate::model::{Action, Epoch, History, MsgId, ProcessId};
use crate::modes::Mode;

pub fn check_primary_order(h: &History, mode: Mode) -> Vec<Violation> {
    let idx = Index::new(h);
    let mut out = local_order(&idx);
    out.extend(global_order(&idx));
    if mode == Mode::Po {
        out.extend(primary_integrity(&idx));
    }
    out
}

pub fn check_speculative(h: &History) -> Vec<Violation> {
    let idx = Index::new(h);
    let mut out = basic_speculative(&idx);
    out.extend(prefix_consistency(&idx));
    out
}

fn local_order(idx: &Index) -> Vec<Violation> {
    // (broadcaster, epoch) -> messages in broadcast order
    let mut streams: BTreeMap<(ProcessId, Epoch), Vec<(usize, MsgId)>> = BTreeMap::new();
    for e in idx.h.entries() {
        if let Action::Broadcast(m) = &e.action {
            if let Some(ep) = idx.epochs[e.index] {
                streams.entry((e.process, ep)).or_default().push((e.index, m.id()));
            }
        }
    }
    let mut out = Vec::new();
    for j in idx.deliveries.keys() {
        let first = idx.first_deliveries(*j);
        for ((bp, ep), stream) in &streams {
            // Latest first-delivery among the broadcasts so far; None = some not delivered.
            let mut horizon: Option<(usize, MsgId)> = Some((0, stream[0].1));
            for (pos, (_, m2)) in stream.iter().enumerate() {
                if let Some(l2) = first.get(m2) {
                    if pos > 0 {
                        let ok = matches!(horizon, Some((hk, _)) if hk < *l2);
                        if !ok {
                            let m1 = match horizon {
                                Some((_, m)) => m,
                                None => stream[..pos]
                                    .iter()
                                    .find(|(_, x)| !first.contains_key(x))
                                    .map(|(_, x)| *x)
                                    .expect("an undelivered predecessor"),
                            };
                            out.push(Violation::new(
                                PropertyId::P6LocalOrder,
                                vec![*l2],
                                vec![*bp, *j],
                                format!("{j} delivered {m2} without first delivering {m1} (both broadcast by {bp} in epoch {ep})"),
                            ));
                        }
                    }
                }
                horizon = match (horizon, first.get(m2)) {
                    (Some((hk, hm)), Some(k)) => Some(if *k > hk { (*k, *m2) } else { (hk, hm) }),
                    _ => None,
                };
            }
        }
    }
    out
}

/// Per process, broadcast epochs of delivered messages must be non-decreasing.
fn global_order(idx: &Index) -> Vec<Violation> {
    let mut out = Vec::new();
    for (p, ds) in &idx.deliveries {
        let mut high: Option<(Epoch, usize, MsgId)> = None;
        for (k, m) in ds {
            let Some(e) = idx.broadcast_epoch(m) else { continue };
            match high {
                Some((he, hk, hm)) if e < he => out.push(Violation::new(
                    PropertyId::P7GlobalOrder,
                    vec![hk, *k],
                    vec![*p],
                    format!("{p} delivered {hm} (epoch {he}) before {m} (epoch {e})"),
                )),
                Some((he, _, _)) if he >= e => {}
                _ => high = Some((e, *k, *m)),
            }
        }
    }
    out
}

fn primary_integrity(idx: &Index) -> Vec<Violation> {
    let delivered_anywhere: BTreeSet<MsgId> = idx.deliveries.values().flatten().map(|(_, m)| *m).collect();
    let mut by_epoch: Vec<(Epoch, MsgId)> = delivered_anywhere
        .iter()
        .filter_map(|m| idx.broadcast_epoch(m).map(|e| (e, *m)))
        .collect();
    by_epoch.sort();
    let mut out = Vec::new();
    let mut firsts: BTreeMap<ProcessId, BTreeMap<MsgId, usize>> = BTreeMap::new();
    for e in idx.h.entries() {
        let Action::ConfChanged { config, .. } = &e.action else { continue };
        let first = firsts.entry(e.process).or_insert_with(|| idx.first_deliveries(e.process));
        for (be, m) in by_epoch.iter().take_while(|(be, _)| *be < config.epoch) {
            if !matches!(first.get(m), Some(k) if *k < e.index) {
                out.push(Violation::new(
                    PropertyId::P8PrimaryIntegrity,
                    vec![idx.broadcast_at[m], e.index],
                    vec![e.process],
                    format!(
                        "{} joined epoch {} without delivering {m} (broadcast in epoch {be})",
                        e.process, config.epoch
                    ),
                ));
            }
        }
    }
    out
}

fn basic_speculative(idx: &Index) -> Vec<Violation> {
    let mut out = Vec::new();
    for e in idx.h.entries() {
        let Action::ConfChanged { config, speculative: Some(sigma) } = &e.action else { continue };
        let p = e.process;
        let v = |msg: String| Violation::new(PropertyId::P9, vec![e.index], vec![p], msg);
        if config.leader != p {
            out.push(v(format!("{p} speculatively delivered while joining {config} as a follower")));
        }
        let mut seen = BTreeSet::new();
        let first = idx.first_deliveries(p);
        for m in sigma {
            let id = m.id();
            if !seen.insert(id) {
                out.push(v(format!("{id} speculatively delivered twice by {p}")));
            }
            if !matches!(idx.broadcast_at.get(&id), Some(b) if *b < e.index) {
                out.push(v(format!("{id} speculatively delivered by {p} before being broadcast")));
            }
            if matches!(first.get(&id), Some(k) if *k < e.index) {
                out.push(v(format!("{id} speculatively delivered by {p} after delivering it")));
            }
        }
    }
    out
}

struct Join {
    index: usize,
    sigma: Vec<MsgId>,
}

fn prefix_consistency(idx: &Index) -> Vec<Violation> {
    // (process, epoch) -> that process's join of the epoch as its leader
    let mut joins: BTreeMap<(ProcessId, Epoch), Join> = BTreeMap::new();
    for e in idx.h.entries() {
        if let Action::ConfChanged { config, speculative } = &e.action {
            if config.leader == e.process {
                let sigma = speculative.iter().flatten().map(|m| m.id()).collect();
                joins.entry((e.process, config.epoch)).or_insert(Join { index: e.index, sigma });
            }
        }
    }
    let firsts: BTreeMap<ProcessId, BTreeMap<MsgId, usize>> =
        idx.deliveries.keys().map(|p| (*p, idx.first_deliveries(*p))).collect();
    let empty = BTreeMap::new();
    let first_of = |p: &ProcessId| firsts.get(p).unwrap_or(&empty);
    let epoch_of_msg: BTreeMap<MsgId, Epoch> = idx
        .broadcast_at
        .keys()
        .filter_map(|m| idx.broadcast_epoch(m).map(|e| (*m, e)))
        .collect();

    let mut out = Vec::new();
    let mut compare = |prop: PropertyId,
                       m2: MsgId,
                       expected: &BTreeSet<MsgId>,
                       anchor: usize,
                       leader: ProcessId| {
        let e2 = epoch_of_msg[&m2];
        for (i, ds) in &idx.deliveries {
            let mut before: BTreeSet<MsgId> = BTreeSet::new();
            for (k, m) in ds {
                if *m == m2 {
                    let others = |s: &BTreeSet<MsgId>| -> BTreeSet<MsgId> {
                        s.iter().copied().filter(|x| epoch_of_msg.get(x).is_some_and(|e| *e != e2)).collect()
                    };
                    let lhs = others(&before);
                    let rhs = others(expected);
                    if lhs != rhs {
                        let m1 = lhs.symmetric_difference(&rhs).next().copied().expect("sets differ");
                        let side = if lhs.contains(&m1) { "delivered" } else { "did not deliver" };
                        out.push(Violation::new(
                            prop,
                            vec![*k, anchor],
                            vec![*i, leader],
                            format!("{i} {side} {m1} before {m2}, disagreeing with {leader}'s view when joining epoch {e2}"),
                        ));
                    }
                }
                before.insert(*m);
            }
        }
    };

    // Part (a): m2 broadcast by the leader of its epoch.
    for e in idx.h.entries() {
        let Action::Broadcast(m) = &e.action else { continue };
        let Some(ep) = idx.epochs[e.index] else { continue };
        if idx.broadcast_at[&m.id()] != e.index {
            continue;
        }
        let Some(join) = joins.get(&(e.process, ep)) else { continue };
        let mut expected: BTreeSet<MsgId> = first_of(&e.process)
            .iter()
            .filter(|(_, k)| **k < join.index)
            .map(|(m, _)| *m)
            .collect();
        expected.extend(join.sigma.iter().copied());
        compare(PropertyId::P10a, m.id(), &expected, e.index, e.process);
    }

    // Part (b): m2 speculatively delivered when joining.
    for ((p, _), join) in &joins {
        let delivered_before: BTreeSet<MsgId> = first_of(p)
            .iter()
            .filter(|(_, k)| **k < join.index)
            .map(|(m, _)| *m)
            .collect();
        for (pos, m2) in join.sigma.iter().enumerate() {
            if !epoch_of_msg.contains_key(m2) {
                continue;
            }
            let mut expected = delivered_before.clone();
            expected.extend(join.sigma[..pos].iter().copied());
            compare(PropertyId::P10b, *m2, &expected, join.index, *p);
        }
    }
    out
}
