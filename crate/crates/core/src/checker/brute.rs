//! Direct quantifier enumeration over history indices. Exponentially
//! slower than the optimized checkers; used as an oracle on small
//! histories.

use std::collections::BTreeSet;

use super::PropertyId;
use crate::model::{Action, History, MsgId, ProcessId};

fn deliver(h: &History, k: usize) -> Option<(ProcessId, MsgId)> {
    let e = h.get(k)?;
    match &e.action {
        Action::Deliver(m) => Some((e.process, m.id())),
        _ => None,
    }
}

fn broadcast(h: &History, k: usize) -> Option<MsgId> {
    match &h.get(k)?.action {
        Action::Broadcast(m) => Some(m.id()),
        _ => None,
    }
}

/// Failing properties among P1a-P1d, Uniqueness, P2-P4.
pub fn failing_properties(h: &History) -> BTreeSet<PropertyId> {
    let n = h.len();
    let idx: Vec<usize> = (1..=n).collect();
    let mut out = BTreeSet::new();

    let joins: Vec<(usize, ProcessId, &crate::model::Configuration)> = h
        .entries()
        .iter()
        .filter_map(|e| match &e.action {
            Action::ConfChanged { config, .. } => Some((e.index, e.process, config)),
            _ => None,
        })
        .collect();
    let intros: Vec<(usize, &crate::model::Configuration)> = h
        .entries()
        .iter()
        .filter_map(|e| match &e.action {
            Action::Introduction(c) => Some((e.index, c)),
            _ => None,
        })
        .collect();

    // 1a
    for (_, _, c1) in &joins {
        for (_, _, c2) in &joins {
            if c1.epoch == c2.epoch && (c1.leader != c2.leader || c1.members != c2.members) {
                out.insert(PropertyId::P1a);
            }
        }
    }
    // 1b
    for (_, i, c) in &joins {
        if !c.members.contains(i) {
            out.insert(PropertyId::P1b);
        }
    }
    // 1c
    for (k, i, c1) in &joins {
        for (l, j, c2) in &joins {
            if i == j && k < l && c1.epoch >= c2.epoch {
                out.insert(PropertyId::P1c);
            }
        }
    }
    // 1d
    for (_, _, c) in &joins {
        if !intros.iter().any(|(_, ic)| ic == c) {
            out.insert(PropertyId::P1d);
        }
    }
    for (k, c1) in &intros {
        for (l, c2) in &intros {
            if c1 == c2 && k != l {
                out.insert(PropertyId::P1d);
            }
        }
    }
    // broadcast uniqueness
    for &k in &idx {
        for &l in &idx {
            if let (Some(a), Some(b)) = (broadcast(h, k), broadcast(h, l)) {
                if a == b && k != l {
                    out.insert(PropertyId::Uniqueness);
                }
            }
        }
    }
    // 2: forall m, i, k, l. h_k = deliver_i(m) & h_l = deliver_i(m) => k = l & exists j < k. h_j = broadcast(m)
    for &k in &idx {
        for &l in &idx {
            let (Some(a), Some(b)) = (deliver(h, k), deliver(h, l)) else { continue };
            if a != b {
                continue;
            }
            let broadcast_before = (1..k).any(|j| broadcast(h, j) == Some(a.1));
            if k != l || !broadcast_before {
                out.insert(PropertyId::P2Integrity);
            }
        }
    }
    // 3: forall m1, m2, i, j, k, l, l'. deliver_i(m1)@k & deliver_i(m2)@l & k < l & deliver_j(m2)@l'
    //      => exists k' < l'. deliver_j(m1)@k'
    for &k in &idx {
        let Some((i, m1)) = deliver(h, k) else { continue };
        for &l in &idx {
            let Some((i2, m2)) = deliver(h, l) else { continue };
            if i2 != i || k >= l {
                continue;
            }
            for &l2 in &idx {
                let Some((j, m2b)) = deliver(h, l2) else { continue };
                if m2b != m2 {
                    continue;
                }
                if !(1..l2).any(|k2| deliver(h, k2) == Some((j, m1))) {
                    out.insert(PropertyId::P3TotalOrder);
                }
            }
        }
    }
    // 4: forall m1, m2, i, j. deliver_i(m1) in h & deliver_j(m2) in h
    //      => deliver_i(m2) in h | deliver_j(m1) in h
    let delivered: Vec<(ProcessId, MsgId)> = idx.iter().filter_map(|k| deliver(h, *k)).collect();
    for (i, m1) in &delivered {
        for (j, m2) in &delivered {
            if !delivered.contains(&(*i, *m2)) && !delivered.contains(&(*j, *m1)) {
                out.insert(PropertyId::P4Agreement);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::AppMessage;

    fn m(s: u64) -> AppMessage {
        AppMessage { origin: ProcessId(1), seq: s, payload: String::new() }
    }

    #[test]
    fn flags_swapped_order_and_disagreement() {
        let mut h = History::new();
        h.push(ProcessId(1), 0, Action::Broadcast(m(0)));
        h.push(ProcessId(1), 0, Action::Broadcast(m(1)));
        h.push(ProcessId(1), 0, Action::Deliver(m(0)));
        h.push(ProcessId(1), 0, Action::Deliver(m(1)));
        h.push(ProcessId(2), 0, Action::Deliver(m(1)));
        let f = failing_properties(&h);
        assert!(f.contains(&PropertyId::P3TotalOrder));
        assert!(!f.contains(&PropertyId::P4Agreement));
        assert!(!f.contains(&PropertyId::P2Integrity));
    }
}
