use std::collections::BTreeMap;

use proptest::prelude::*;
use vab_core::checker::brute;
use vab_core::checker::safety::{check_basic_config, check_safety};
use vab_core::sim::fuzz::{self, Bounds, Workload};
use vab_core::sim::NetRecord;
use vab_core::{run, trace, Action, AppMessage, Configuration, Epoch, History, Mode, ProcessId, PropertyId};

fn mode() -> impl Strategy<Value = Mode> {
    prop::sample::select(Mode::ALL.to_vec())
}

fn small() -> Bounds {
    Bounds { max_processes: 5, max_reconfigs: 3, max_broadcasts: 10, horizon: 120 }
}

/// Histories built from a few broadcasts and arbitrary, possibly bad,
/// delivery sequences over a fixed configuration.
fn synthetic() -> impl Strategy<Value = History> {
    let deliveries = prop::collection::vec((1u32..=3, 0u64..4), 0..=8);
    (1usize..=4, deliveries, any::<bool>()).prop_map(|(nmsgs, ds, skip_join)| {
        let mut h = History::new();
        let c = Configuration::new(Epoch(0), [ProcessId(1), ProcessId(2), ProcessId(3)], ProcessId(1));
        h.push(ProcessId(1), 0, Action::Introduction(c.clone()));
        for p in 1..=3 {
            if !(skip_join && p == 3) {
                h.push(ProcessId(p), 0, Action::ConfChanged { config: c.clone(), speculative: None });
            }
        }
        let msgs: Vec<AppMessage> =
            (0..nmsgs as u64).map(|seq| AppMessage { origin: ProcessId(1), seq, payload: format!("m{seq}") }).collect();
        for m in &msgs {
            h.push(ProcessId(1), 1, Action::Broadcast(m.clone()));
        }
        for (p, k) in ds {
            let m = AppMessage { origin: ProcessId(1), seq: k, payload: format!("m{k}") };
            h.push(ProcessId(p), 2, Action::Deliver(m));
        }
        h
    })
}

fn optimized(h: &History) -> std::collections::BTreeSet<PropertyId> {
    check_basic_config(h).into_iter().chain(check_safety(h)).map(|v| v.property).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn simulated_traces_round_trip(seed in 0u64..10_000, m in mode()) {
        let out = run(&fuzz::scenario(Workload::Safety, m, seed, &small())).unwrap();
        let text = out.trace_jsonl();
        let back = trace::from_jsonl(&text).unwrap();
        prop_assert_eq!(&back, &out.history);
        prop_assert_eq!(trace::to_jsonl(&back), text);
    }

    #[test]
    fn synthetic_traces_round_trip(h in synthetic()) {
        prop_assert_eq!(trace::from_jsonl(&trace::to_jsonl(&h)).unwrap(), h);
    }

    #[test]
    fn channels_are_fifo(seed in 0u64..10_000, m in mode()) {
        let out = run(&fuzz::scenario(Workload::Safety, m, seed, &small())).unwrap();
        let mut last: BTreeMap<(ProcessId, ProcessId), u64> = BTreeMap::new();
        for r in &out.messages {
            if let NetRecord::Sent { arrives, from, to, .. } = r {
                let prev = last.insert((*from, *to), *arrives).unwrap_or(0);
                prop_assert!(prev <= *arrives);
            }
        }
    }

    #[test]
    fn same_seed_same_bytes(seed in 0u64..10_000, m in mode()) {
        let sc = fuzz::scenario(Workload::Safety, m, seed, &small());
        let (a, b) = (run(&sc).unwrap(), run(&sc).unwrap());
        prop_assert_eq!(a.trace_jsonl(), b.trace_jsonl());
        prop_assert_eq!(a.messages_jsonl(), b.messages_jsonl());
        prop_assert_eq!(a.metrics_json(), b.metrics_json());
    }

    #[test]
    fn admissible_runs_are_safe(seed in 0u64..10_000, m in mode()) {
        let out = run(&fuzz::scenario(Workload::Safety, m, seed, &small())).unwrap();
        let safety: Vec<PropertyId> = PropertyId::history_properties(m)
            .into_iter()
            .chain(PropertyId::monitor_properties())
            .collect();
        let bad: Vec<PropertyId> = out.report.failed().into_iter().filter(|p| safety.contains(p)).collect();
        prop_assert!(bad.is_empty(), "{:?}", bad);
    }

    #[test]
    fn checker_agrees_with_brute_force(h in synthetic()) {
        prop_assert_eq!(optimized(&h), brute::failing_properties(&h));
    }
}
