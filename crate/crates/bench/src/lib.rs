//! Workloads shared by the benchmarks.

use vab_core::model::{Configuration, Epoch, ProcessId};
use vab_core::sim::{Delays, Directive, Scenario};
use vab_core::Mode;

/// A stable configuration of `members` processes receiving `broadcasts`
/// messages from rotating senders.
pub fn steady_state(mode: Mode, members: u32, broadcasts: u64) -> Scenario {
    let procs: Vec<ProcessId> = (1..=members).map(ProcessId).collect();
    let mut sc = Scenario::empty(mode, Configuration::new(Epoch(0), procs.clone(), ProcessId(1)));
    sc.delays = Delays { min: 1, max: 3 };
    for i in 0..broadcasts {
        let proc = match mode {
            Mode::Vab => Some(procs[i as usize % procs.len()]),
            _ => None,
        };
        sc.schedule.push(Directive::Broadcast { at: 1 + i, proc, payload: format!("m{i}") });
    }
    sc
}

/// Steady load with a reconfiguration to a rotated leader every
/// `period` time units.
pub fn rolling_reconfig(mode: Mode, members: u32, rounds: u64, period: u64) -> Scenario {
    let mut sc = steady_state(mode, members, rounds * period);
    let reconfigurer = ProcessId(members + 1);
    sc.processes.push(reconfigurer);
    let all: Vec<ProcessId> = (1..=members).map(ProcessId).collect();
    for r in 0..rounds {
        sc.schedule.push(Directive::Reconfigure {
            at: r * period + period / 2,
            by: reconfigurer,
            desired_members: all.iter().copied().collect(),
            desired_leader: Some(all[(r as usize + 1) % all.len()]),
        });
    }
    sc
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn workloads_run_clean() {
        for mode in Mode::ALL {
            let out = vab_core::run(&rolling_reconfig(mode, 3, 2, 20)).unwrap();
            assert!(out.report.is_clean(), "{}", out.report.render());
        }
    }
}
