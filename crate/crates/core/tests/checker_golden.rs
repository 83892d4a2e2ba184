use vab_core::checker::linearizability::{self, Linearization};
use vab_core::checker::liveness::check_liveness;
use vab_core::checker::{check_history, Verdict};
use vab_core::replication::{Command, MachineKind, Reply};
use vab_core::sim::bundled;
use vab_core::{run, Action, AppMessage, CommandId, Configuration, Epoch, History, Mode, ProcessId, PropertyId};

fn p(i: u32) -> ProcessId {
    ProcessId(i)
}

fn msg(seq: u64) -> AppMessage {
    AppMessage { origin: p(1), seq, payload: format!("m{seq}") }
}

fn base() -> (History, Configuration) {
    let mut h = History::new();
    let c = Configuration::new(Epoch(0), [p(1), p(2)], p(1));
    h.push(p(1), 0, Action::Introduction(c.clone()));
    h.push(p(1), 0, Action::ConfChanged { config: c.clone(), speculative: None });
    h.push(p(2), 0, Action::ConfChanged { config: c.clone(), speculative: None });
    (h, c)
}

fn fails(h: &History, mode: Mode, id: PropertyId) -> bool {
    check_history(h, mode).verdicts.get(&id).is_some_and(Verdict::is_fail)
}

#[test]
fn conflicting_configurations_for_one_epoch() {
    let (mut h, _) = base();
    let other = Configuration::new(Epoch(0), [p(1), p(2)], p(2));
    h.push(p(2), 1, Action::ConfChanged { config: other, speculative: None });
    assert!(fails(&h, Mode::Vab, PropertyId::P1a));
}

#[test]
fn joiner_outside_membership() {
    let (mut h, c) = base();
    h.push(p(3), 1, Action::ConfChanged { config: c, speculative: None });
    assert!(fails(&h, Mode::Vab, PropertyId::P1b));
}

#[test]
fn prefix_deliveries_are_fine() {
    let (mut h, _) = base();
    h.push(p(1), 1, Action::Broadcast(msg(0)));
    h.push(p(1), 1, Action::Broadcast(msg(1)));
    h.push(p(1), 2, Action::Deliver(msg(0)));
    h.push(p(1), 2, Action::Deliver(msg(1)));
    h.push(p(2), 2, Action::Deliver(msg(0)));
    assert!(check_history(&h, Mode::Vab).is_clean());
}

#[test]
fn swapped_deliveries_break_total_order() {
    let (mut h, _) = base();
    h.push(p(1), 1, Action::Broadcast(msg(0)));
    h.push(p(1), 1, Action::Broadcast(msg(1)));
    h.push(p(1), 2, Action::Deliver(msg(0)));
    h.push(p(1), 2, Action::Deliver(msg(1)));
    h.push(p(2), 2, Action::Deliver(msg(1)));
    h.push(p(2), 2, Action::Deliver(msg(0)));
    assert!(fails(&h, Mode::Vab, PropertyId::P3TotalOrder));
}

#[test]
fn disjoint_deliveries_break_agreement() {
    let (mut h, _) = base();
    h.push(p(1), 1, Action::Broadcast(msg(0)));
    h.push(p(1), 1, Action::Broadcast(msg(1)));
    h.push(p(1), 2, Action::Deliver(msg(0)));
    h.push(p(2), 2, Action::Deliver(msg(1)));
    assert!(fails(&h, Mode::Vab, PropertyId::P4Agreement));
}

#[test]
fn delivery_without_broadcast_breaks_integrity() {
    let (mut h, _) = base();
    h.push(p(2), 2, Action::Deliver(msg(0)));
    assert!(fails(&h, Mode::Vab, PropertyId::P2Integrity));
}

#[test]
fn simulated_runs_are_clean_in_every_mode() {
    for name in ["fig4_reconfig", "steady_latency", "functional_reconfig", "five_member", "singleton"] {
        for mode in Mode::ALL {
            let mut sc = bundled(name).unwrap();
            sc.mode = mode;
            let out = run(&sc).unwrap();
            assert!(out.report.is_clean(), "{name}/{mode}: {}", out.report.render());
        }
    }
}

#[test]
fn walkthrough_tail_delivers_to_the_final_members() {
    let out = run(&bundled("fig4_reconfig").unwrap()).unwrap();
    assert!(out.premise.quiescent && out.premise.isolated && out.premise.requester_correct);
    let live = check_liveness(&out.history, &out.premise);
    for id in PropertyId::liveness_properties() {
        assert_eq!(live.verdicts[&id], Verdict::Pass, "{id}");
    }
    for q in [4, 5] {
        assert!(out.history.entries().iter().any(|e| e.process == p(q)
            && matches!(&e.action, Action::ConfChanged { config, .. } if config.epoch == Epoch(3))));
    }
}

#[test]
fn empty_history_leaves_liveness_unevaluated() {
    let h = History::new();
    let r = check_liveness(&h, &Default::default());
    assert!(matches!(r.verdicts[&PropertyId::P5], Verdict::NotEvaluated { .. }));
}

#[test]
fn stale_read_after_two_increments_is_not_linearizable() {
    let mut h = History::new();
    let id = |seq| CommandId { origin: p(9), seq };
    h.push(p(9), 0, Action::Invoke { id: id(0), command: Command::Increment });
    h.push(p(9), 1, Action::Respond { id: id(0), reply: Reply::Ack });
    h.push(p(9), 2, Action::Invoke { id: id(1), command: Command::Increment });
    h.push(p(9), 3, Action::Respond { id: id(1), reply: Reply::Ack });
    h.push(p(9), 4, Action::Invoke { id: id(2), command: Command::Read });
    h.push(p(9), 5, Action::Respond { id: id(2), reply: Reply::Value(1) });
    let ops = linearizability::operations(&h);
    assert_eq!(linearizability::check(&ops, MachineKind::Counter.machine(), 0), Linearization::NotLinearizable);

    h.push(p(9), 6, Action::Invoke { id: id(3), command: Command::Read });
    let ops = linearizability::operations(&h);
    assert_eq!(linearizability::check(&ops, MachineKind::Counter.machine(), 0), Linearization::NotLinearizable);
}

#[test]
fn vab_replication_exhibits_the_anomaly_but_primary_order_does_not() {
    let mut sc = bundled("stale_read_anomaly").unwrap();
    let out = run(&sc).unwrap();
    assert!(out.report.verdicts[&PropertyId::Linearizability].is_fail());
    assert!(out.report.verdicts[&PropertyId::Inv2].is_fail());
    for mode in [Mode::Po, Mode::Spo] {
        sc.mode = mode;
        let out = run(&sc).unwrap();
        assert_eq!(out.report.verdicts[&PropertyId::Linearizability], Verdict::Pass, "{mode}");
        assert!(out.report.is_clean(), "{mode}: {}", out.report.render());
    }
}
