use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use polycbf::distance::min_distance_dual;
use polycbf::geometry::place;
use polycbf::scenario::{BodyKind, ScenarioConfig, ScenarioKind};
use polycbf::sim::{self, FleetRun, Outcome, SofaState, SofaWorld};
use polycbf::{Error, Execution};

#[derive(Parser)]
#[command(name = "polycbf", version, about = "Polytope obstacle avoidance with dual-distance barrier functions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write its trace as CSV.
    Simulate {
        #[arg(long)]
        scenario: PathBuf,
        /// Override the step size in seconds.
        #[arg(long)]
        dt: Option<f64>,
        /// Override the duration in seconds.
        #[arg(long)]
        duration: Option<f64>,
        #[arg(long)]
        out: PathBuf,
        /// Solve pair distances on the calling thread only.
        #[arg(long)]
        sequential: bool,
    },
    /// Print the distance and dual multipliers of one body pair as JSON.
    Distance {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, num_args = 2, value_names = ["I", "J"])]
        pair: Vec<usize>,
    },
    /// Run a centralized fleet scenario with the braking supervisor.
    BrakeSim {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn code(err: &Error) -> (&'static str, u8) {
    match err {
        Error::Config(_) => ("config", 1),
        Error::SafetyViolated { .. } => ("safety", 2),
        _ => ("solver", 3),
    }
}

fn fail(err: Error) -> ExitCode {
    let (name, exit) = code(&err);
    eprintln!("ERROR:{name}: {err}");
    ExitCode::from(exit)
}

fn load(path: &PathBuf) -> Result<ScenarioConfig, Error> {
    ScenarioConfig::from_file(path)
}

fn write_csv(outcome: &Outcome, out: &PathBuf) -> Result<(), Error> {
    outcome.trace().write_csv(out).map_err(|e| Error::Config(format!("cannot write {}: {e}", out.display())))
}

fn simulate(
    scenario: PathBuf,
    dt: Option<f64>,
    duration: Option<f64>,
    out: PathBuf,
    sequential: bool,
) -> Result<(), Error> {
    let mut cfg = load(&scenario)?;
    if let Some(dt) = dt {
        cfg.sim.dt = dt;
    }
    if let Some(d) = duration {
        cfg.sim.duration = d;
    }
    cfg.validate()?;
    let exec = if sequential { Execution::Sequential } else { Execution::default() };
    let outcome = sim::run(&cfg, exec)?;
    write_csv(&outcome, &out)?;
    match &outcome {
        Outcome::Sofa(o) => {
            println!(
                "rows={} min_h={:.6e} V0={:.6e} V_final={:.6e} mean_step_ms={:.3}{}",
                o.trace.rows.len(),
                o.min_h,
                o.v_initial,
                o.v_final,
                o.mean_step_ms,
                if o.deadlock { " DeadlockDetected" } else { "" }
            );
        }
        Outcome::Fleet(o) => print_fleet(o),
    }
    Ok(())
}

fn print_fleet(o: &sim::FleetOutcome) {
    println!(
        "rows={} min_sqrt_rho={:.6e} min_h={:.6e} latches={} infeasible_steps={}",
        o.trace.rows.len(),
        o.min_sqrt_rho,
        o.min_h,
        o.latch_count,
        o.infeasible_steps
    );
}

fn distance(scenario: PathBuf, pair: Vec<usize>) -> Result<(), Error> {
    let cfg = load(&scenario)?;
    let (i, j) = (pair[0], pair[1]);
    let n = cfg.bodies.len();
    if i >= n || j >= n || i == j {
        return Err(Error::Config(format!("pair ({i}, {j}) is not two distinct bodies out of {n}")));
    }
    let bodies = cfg.bodies()?;
    if bodies[i].poly.dim() != bodies[j].poly.dim() {
        return Err(Error::Config("pair bodies differ in dimension".into()));
    }
    let placed = |k: usize| {
        if cfg.kind == ScenarioKind::Sofa && bodies[k].kind == BodyKind::SofaArm {
            let s = cfg.sofa.as_ref().expect("validated sofa section");
            let world = SofaWorld::new(bodies.clone());
            let pose = world.arm_pose(k, &SofaState { z1: s.z1, z2: s.z2, theta: s.theta });
            place(&bodies[k].poly, &pose)
        } else {
            place(&bodies[k].poly, &bodies[k].pose)
        }
    };
    let result = min_distance_dual(&placed(i), &placed(j))?;
    println!("{}", serde_json::to_string_pretty(&result.to_json()).expect("json"));
    Ok(())
}

fn brake_sim(scenario: PathBuf, out: PathBuf) -> Result<(), Error> {
    let cfg = load(&scenario)?;
    if cfg.kind != ScenarioKind::Centralized {
        return Err(Error::Config("brake-sim needs a centralized scenario".into()));
    }
    let run = FleetRun::from_config(&cfg)?;
    let outcome = Outcome::Fleet(run.run(Execution::default())?);
    write_csv(&outcome, &out)?;
    if let Outcome::Fleet(o) = &outcome {
        print_fleet(o);
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate { scenario, dt, duration, out, sequential } => {
            simulate(scenario, dt, duration, out, sequential)
        }
        Command::Distance { scenario, pair } => distance(scenario, pair),
        Command::BrakeSim { scenario, out } => brake_sim(scenario, out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(e),
    }
}
