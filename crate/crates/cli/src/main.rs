use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use vab_core::checker::liveness::check_liveness;
use vab_core::checker::{check_history, linearizability, LivenessPremise, PropertyId, VerdictReport};
use vab_core::replication::MachineKind;
use vab_core::sim::fuzz::{self, Bounds, Workload};
use vab_core::sim::{bundled, Scenario};
use vab_core::{trace, Action, Mode, Mutant};

#[derive(Parser)]
#[command(name = "vab", version, about = "Vertical atomic broadcast simulator and checker")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one scenario and write trace, metrics and verdicts.
    Run(RunArgs),
    /// Re-check a trace file offline.
    Check(CheckArgs),
    /// Run a campaign of random scenarios.
    Fuzz(FuzzArgs),
    /// Run one scenario and print its metrics.
    Metrics(ScenarioArgs),
}

#[derive(Args)]
struct ScenarioArgs {
    /// Scenario file, or the name of a bundled scenario.
    #[arg(long)]
    scenario: String,
    #[arg(long)]
    mode: Option<Mode>,
    #[arg(long)]
    seed: Option<u64>,
    /// Deliberately broken protocol variant (unsafe, for checker testing).
    #[arg(long)]
    mutant: Option<Mutant>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct CheckArgs {
    /// Trace file (JSON lines).
    #[arg(long)]
    trace: PathBuf,
    /// Mode the trace was produced in; inferred from `conf_changed` records
    /// carrying a speculative sequence when absent.
    #[arg(long)]
    mode: Option<Mode>,
    /// Liveness premise written next to the trace by `run`.
    #[arg(long)]
    premise: Option<PathBuf>,
    /// State machine for the linearizability check of client records.
    #[arg(long)]
    machine: Option<Machine>,
    /// Print verdicts as JSON instead of a table.
    #[arg(long)]
    json: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Machine {
    Counter,
    RandomRegister,
}

impl From<Machine> for MachineKind {
    fn from(m: Machine) -> MachineKind {
        match m {
            Machine::Counter => MachineKind::Counter,
            Machine::RandomRegister => MachineKind::RandomRegister,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum WorkloadArg {
    Safety,
    Liveness,
    Counter,
    RandomRegister,
}

#[derive(Args)]
struct FuzzArgs {
    #[arg(long, default_value_t = 1000)]
    seeds: u64,
    /// Mode to fuzz; all three when absent.
    #[arg(long)]
    mode: Option<Mode>,
    #[arg(long)]
    mutant: Option<Mutant>,
    #[arg(long, value_enum, default_value = "safety")]
    workload: WorkloadArg,
    #[arg(long, default_value_t = 7)]
    max_processes: u32,
    #[arg(long, default_value_t = 5)]
    max_reconfigs: usize,
    /// First seed of the campaign.
    #[arg(long, default_value_t = 0)]
    start: u64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::Run(a) => cmd_run(a),
        Cmd::Check(a) => cmd_check(a),
        Cmd::Fuzz(a) => cmd_fuzz(a),
        Cmd::Metrics(a) => cmd_metrics(a),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn load_scenario(a: &ScenarioArgs) -> anyhow::Result<Scenario> {
    let mut sc = if Path::new(&a.scenario).exists() {
        let text = std::fs::read_to_string(&a.scenario).with_context(|| format!("reading {}", a.scenario))?;
        Scenario::from_json(&text).with_context(|| format!("parsing {}", a.scenario))?
    } else {
        match bundled(&a.scenario) {
            Some(s) => s,
            None => bail!("no scenario file or bundled scenario named {:?}", a.scenario),
        }
    };
    if let Some(m) = a.mode {
        sc.mode = m;
    }
    if let Some(s) = a.seed {
        sc.seed = s;
    }
    if a.mutant.is_some() {
        sc.mutant = a.mutant;
    }
    Ok(sc)
}

fn cmd_run(a: RunArgs) -> anyhow::Result<bool> {
    let sc = load_scenario(&a.scenario)?;
    let out = vab_core::run(&sc)?;
    out.write_to(&a.out).with_context(|| format!("writing {}", a.out.display()))?;
    print!("{}", out.report.render());
    println!("downtime: {:?}  steady latency: {:?}", out.metrics.downtime, out.metrics.steady_latency);
    Ok(out.report.is_clean())
}

fn cmd_metrics(a: ScenarioArgs) -> anyhow::Result<bool> {
    let sc = load_scenario(&a)?;
    let out = vab_core::run(&sc)?;
    println!("{}", out.metrics_json());
    Ok(true)
}

fn cmd_check(a: CheckArgs) -> anyhow::Result<bool> {
    let text = std::fs::read_to_string(&a.trace).with_context(|| format!("reading {}", a.trace.display()))?;
    let h = trace::from_jsonl(&text)?;
    let mode = a.mode.unwrap_or_else(|| {
        let speculative = h
            .entries()
            .iter()
            .any(|e| matches!(&e.action, Action::ConfChanged { speculative: Some(_), .. }));
        if speculative {
            Mode::Spo
        } else {
            Mode::Vab
        }
    });
    let mut report = check_history(&h, mode);
    let premise = match &a.premise {
        Some(p) => serde_json::from_str(&std::fs::read_to_string(p)?)?,
        None => LivenessPremise::default(),
    };
    report.merge(check_liveness(&h, &premise));
    if let Some(m) = a.machine {
        let kind: MachineKind = m.into();
        let ops = linearizability::operations(&h);
        let mut r = VerdictReport::default();
        match linearizability::check(&ops, kind.machine(), 0) {
            linearizability::Linearization::Witness(_) => r.record(&[PropertyId::Linearizability], vec![]),
            linearizability::Linearization::NotLinearizable => r.record(
                &[PropertyId::Linearizability],
                vec![vab_core::Violation::new(PropertyId::Linearizability, vec![], vec![], "not linearizable")],
            ),
            linearizability::Linearization::NotEvaluated(why) => r.not_evaluated(&[PropertyId::Linearizability], &why),
        }
        report.merge(r);
    }
    if a.json {
        println!("{}", serde_json::to_string_pretty(&report)?);
    } else {
        print!("{}", report.render());
    }
    Ok(report.is_clean())
}

fn cmd_fuzz(a: FuzzArgs) -> anyhow::Result<bool> {
    let bounds = Bounds {
        max_processes: a.max_processes,
        max_reconfigs: a.max_reconfigs,
        ..Bounds::default()
    };
    let workload = match a.workload {
        WorkloadArg::Safety => Workload::Safety,
        WorkloadArg::Liveness => Workload::Liveness,
        WorkloadArg::Counter => Workload::Replication(MachineKind::Counter),
        WorkloadArg::RandomRegister => Workload::Replication(MachineKind::RandomRegister),
    };
    let modes: Vec<Mode> = match a.mode {
        Some(m) => vec![m],
        None => Mode::ALL.to_vec(),
    };
    let mut clean = true;
    for mode in modes {
        let failures: Vec<(u64, Vec<PropertyId>)> = (a.start..a.start + a.seeds)
            .into_par_iter()
            .filter_map(|seed| {
                let sc = fuzz::with_mutant(fuzz::scenario(workload, mode, seed, &bounds), a.mutant);
                let out = vab_core::run(&sc).expect("generated scenarios are valid");
                let failed = out.report.failed();
                (!failed.is_empty()).then_some((seed, failed))
            })
            .collect();
        println!("{mode}: {} runs, {} with violations", a.seeds, failures.len());
        let mut tally: BTreeMap<PropertyId, usize> = BTreeMap::new();
        for (_, props) in &failures {
            for p in props {
                *tally.entry(*p).or_default() += 1;
            }
        }
        if !tally.is_empty() {
            let parts: Vec<String> = tally.iter().map(|(p, n)| format!("{p}={n}")).collect();
            println!("  by property: {}", parts.join(" "));
        }
        if let Some((seed, props)) = failures.first() {
            clean = false;
            let ids: Vec<&str> = props.iter().map(|p| p.as_str()).collect();
            println!("  first failing seed {seed}: {}", ids.join(", "));
            let sc = fuzz::with_mutant(fuzz::scenario(workload, mode, *seed, &bounds), a.mutant);
            let small = fuzz::minimize(&sc, props[0]);
            println!("  minimized witness for {}:\n{}", props[0], small.to_json());
        }
    }
    Ok(clean)
}
