//! Random admissible scenarios and witness minimization.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::scenario::{CrashTrigger, Delays, Directive, Scenario};
use super::run;
use crate::checker::PropertyId;
use crate::model::{Configuration, Epoch, MessageKind, ProcessId};
use crate::modes::{Mode, Mutant};
use crate::replication::{Command, MachineKind};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Bounds {
    pub max_processes: u32,
    pub max_reconfigs: usize,
    pub max_broadcasts: usize,
    pub horizon: u64,
}

impl Default for Bounds {
    fn default() -> Bounds {
        Bounds {
            max_processes: 7,
            max_reconfigs: 5,
            max_broadcasts: 30,
            horizon: 250,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Workload {
    /// Arbitrary admissible crashes and overlapping reconfigurations.
    Safety,
    /// Like `Safety`, but ends with one isolated reconfiguration by a
    /// dedicated correct process after every crash.
    Liveness,
    /// Client commands against the replicated service.
    Replication(MachineKind),
}

const TRIGGERS: [MessageKind; 5] = [
    MessageKind::Accept,
    MessageKind::Commit,
    MessageKind::Probe,
    MessageKind::NewConfig,
    MessageKind::NewState,
];

fn pick<T: Copy>(rng: &mut ChaCha8Rng, xs: &[T]) -> T {
    *xs.choose(rng).expect("non-empty choice")
}

fn subset(rng: &mut ChaCha8Rng, from: &[ProcessId], max: usize) -> BTreeSet<ProcessId> {
    let k = rng.gen_range(1..=max.min(from.len()));
    from.choose_multiple(rng, k).copied().collect()
}

/// Ensures `set` contains a survivor.
fn cover(rng: &mut ChaCha8Rng, set: &mut BTreeSet<ProcessId>, survivors: &[ProcessId]) {
    if survivors.iter().all(|s| !set.contains(s)) {
        set.insert(pick(rng, survivors));
    }
}

pub fn scenario(workload: Workload, mode: Mode, seed: u64, bounds: &Bounds) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(3..=bounds.max_processes.max(3));
    let liveness = workload == Workload::Liveness;
    let replication = matches!(workload, Workload::Replication(_));
    // Liveness reserves the last process as a dedicated reconfigurer;
    // replication reserves it as a client.
    let members_pool: Vec<ProcessId> = (1..=n - u32::from(liveness || replication)).map(ProcessId).collect();
    let all: Vec<ProcessId> = (1..=n).map(ProcessId).collect();
    let extra = ProcessId(n);

    let k0 = rng.gen_range(1..=3.min(members_pool.len()));
    let c0_members: BTreeSet<ProcessId> = members_pool.choose_multiple(&mut rng, k0).copied().collect();
    let leader = pick(&mut rng, &c0_members.iter().copied().collect::<Vec<_>>());

    let mut survivors: Vec<ProcessId> = members_pool.iter().copied().filter(|_| rng.gen_bool(0.5)).collect();
    if !survivors.iter().any(|s| c0_members.contains(s)) {
        survivors.push(pick(&mut rng, &c0_members.iter().copied().collect::<Vec<_>>()));
        survivors.sort();
    }
    let horizon = bounds.horizon;
    let quiet = horizon * 3 / 5;
    let mut schedule = Vec::new();

    let reconfigs = rng.gen_range(0..=bounds.max_reconfigs);
    let last_at = horizon + 150;
    let early = if liveness { reconfigs.saturating_sub(1) } else { reconfigs };
    for _ in 0..early {
        let mut desired = subset(&mut rng, &members_pool, 4);
        cover(&mut rng, &mut desired, &survivors);
        let desired_leader = match workload {
            Workload::Safety if rng.gen_bool(0.3) => Some(pick(&mut rng, &desired.iter().copied().collect::<Vec<_>>())),
            _ => None,
        };
        let span = if liveness { quiet } else { horizon };
        schedule.push(Directive::Reconfigure {
            at: rng.gen_range(5..span),
            by: pick(&mut rng, &members_pool),
            desired_members: desired,
            desired_leader,
        });
    }
    if liveness {
        let desired = subset(&mut rng, &survivors, 3);
        schedule.push(Directive::Reconfigure {
            at: last_at,
            by: extra,
            desired_members: desired,
            desired_leader: None,
        });
    }

    for q in members_pool.iter().filter(|q| !survivors.contains(q)) {
        if !rng.gen_bool(0.7) {
            continue;
        }
        let when = if workload == Workload::Safety && rng.gen_bool(0.2) {
            CrashTrigger { at: None, on_receive: Some(pick(&mut rng, &TRIGGERS)) }
        } else {
            let span = if liveness { quiet } else { horizon };
            CrashTrigger { at: Some(rng.gen_range(1..span)), on_receive: None }
        };
        schedule.push(Directive::Crash { proc: *q, when });
    }

    match workload {
        Workload::Replication(_) => {
            let ops = rng.gen_range(1..=12);
            for _ in 0..ops {
                let command = pick(&mut rng, &[Command::Increment, Command::Increment, Command::Read, Command::Assign]);
                schedule.push(Directive::Execute { at: rng.gen_range(1..horizon), client: extra, command });
            }
        }
        _ => {
            let b = rng.gen_range(5..=bounds.max_broadcasts.max(5));
            for i in 0..b {
                let at = if liveness && i % 3 == 0 {
                    rng.gen_range(last_at + 50..last_at + 150)
                } else {
                    rng.gen_range(1..horizon)
                };
                let proc = if mode == Mode::Vab && rng.gen_bool(0.7) { Some(pick(&mut rng, &all)) } else { None };
                schedule.push(Directive::Broadcast { at, proc, payload: format!("b{i}") });
            }
        }
    }
    schedule.sort_by_key(|d| d.time().unwrap_or(0));

    Scenario {
        name: format!("fuzz-{seed}"),
        mode,
        processes: all,
        initial_config: Configuration {
            epoch: Epoch::ZERO,
            members: c0_members,
            leader,
        },
        machine: match workload {
            Workload::Replication(m) => Some(m),
            _ => None,
        },
        schedule,
        delays: Delays { min: 1, max: rng.gen_range(1..=6) },
        cs_latency: rng.gen_range(1..=3),
        seed,
        step_cap: 200_000,
        mutant: None,
    }
}

pub fn with_mutant(mut sc: Scenario, mutant: Option<Mutant>) -> Scenario {
    sc.mutant = mutant;
    sc
}

/// Greedily drops directives while the run still violates `property`.
pub fn minimize(sc: &Scenario, property: PropertyId) -> Scenario {
    let fails = |s: &Scenario| run(s).map(|o| o.report.failed().contains(&property)).unwrap_or(false);
    let mut best = sc.clone();
    let mut i = 0;
    while i < best.schedule.len() {
        let mut candidate = best.clone();
        candidate.schedule.remove(i);
        if candidate.validate().is_ok() && fails(&candidate) {
            best = candidate;
        } else {
            i += 1;
        }
    }
    best
}
