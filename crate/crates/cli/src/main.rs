use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use prism_core::comms::{CommsConfig, Protocol, Range};
use prism_core::harness::{run_batch, run_once, RunConfig, Solver};

/// Multi-agent pickup-and-delivery under limited communication.
#[derive(Debug, Parser)]
#[command(name = "prism", version)]
struct Args {
    /// `.map` file, or gen:maze-W-H-C[:seed] / gen:random-W-H-P[:seed]
    #[arg(long, env = "PRISM_MAP")]
    map: String,
    /// `.scen` file; random endpoints when omitted
    #[arg(long, env = "PRISM_SCEN")]
    scen: Option<PathBuf>,
    /// prism, cbs or tpts
    #[arg(long, env = "PRISM_SOLVER", default_value = "prism")]
    solver: Solver,
    /// prox, los or full
    #[arg(long, env = "PRISM_PROTOCOL", default_value = "prox")]
    protocol: Protocol,
    /// `min` or a fraction of the larger map side, e.g. 0.2
    #[arg(long, env = "PRISM_RANGE", default_value = "min")]
    range: Range,
    #[arg(long, env = "PRISM_AGENTS", default_value_t = 4)]
    agents: usize,
    #[arg(long, env = "PRISM_TASKS", default_value_t = 8)]
    tasks: usize,
    #[arg(long, env = "PRISM_SEED", default_value_t = 0)]
    seed: u64,
    /// Seconds per run; 0 disables
    #[arg(long, env = "PRISM_TIME_LIMIT", default_value_t = 120.0)]
    time_limit: f64,
    #[arg(long, env = "PRISM_MAX_TICKS", default_value_t = 10_000)]
    max_ticks: u32,
    /// One task per agent starting at its position
    #[arg(long, env = "PRISM_ONE_SHOT")]
    one_shot: bool,
    /// Run this many seeds and write batch.csv and summary.json
    #[arg(long, env = "PRISM_SCENARIOS")]
    scenarios: Option<usize>,
    /// Output directory
    #[arg(long, env = "PRISM_OUT")]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let args = Args::parse();
    let comms = match args.protocol {
        Protocol::Full => CommsConfig::full(),
        p => CommsConfig::new(p, args.range),
    };
    let config = RunConfig {
        map: args.map,
        scen: args.scen,
        solver: args.solver,
        comms,
        agents: args.agents,
        tasks: args.tasks,
        seed: args.seed,
        time_limit: args.time_limit,
        max_ticks: args.max_ticks,
        one_shot: args.one_shot,
        out: args.out,
    };
    if let Some(count) = args.scenarios {
        return match run_batch(&config, count) {
            Ok(report) => {
                let s = &report.summary;
                println!(
                    "{} scenarios, success {:.3}, runtime {:.4}±{:.4}s, cost {}",
                    s.scenarios,
                    s.success_rate,
                    s.runtime_mean,
                    s.runtime_std,
                    match (s.cost_mean, s.cost_std) {
                        (Some(m), Some(d)) => format!("{m:.2}±{d:.2}"),
                        _ => "n/a".to_owned(),
                    }
                );
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::FAILURE
            }
        };
    }
    match run_once(&config) {
        Ok((record, result)) => {
            println!(
                "{} {:?}: sum of costs {}, {} ticks, {}/{} tasks, planning {:.4}s",
                record.solver,
                record.status,
                record.sum_of_costs,
                record.ticks,
                record.tasks_done,
                record.tasks_total,
                result.timing.planning.as_secs_f64()
            );
            for v in &record.violations {
                eprintln!("violation: {v}");
            }
            if record.success {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(2)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
