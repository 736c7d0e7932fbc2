use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use flmip::harness::{
    self, abort_error, Scenario, Workspace, NETWORK_LP_FILE, REPORT_FILE, STEP_LP_FILE,
    TRAJECTORY_FILE,
};

#[derive(Parser)]
#[command(
    name = "flmip",
    version,
    about = "Mixed-integer input constraints for feedback-linearized control"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Scenario TOML file.
    #[arg(long)]
    scenario: PathBuf,
    /// Overrides every seed in the scenario.
    #[arg(long)]
    seed: Option<u64>,
    /// Artifact directory.
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    /// Accepted for compatibility; every stage already runs on one thread.
    #[arg(long)]
    single_thread: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the surrogate network and write network.json.
    Train(Common),
    /// Node bounds and the validated error bound (bounds.json, epsilon.json).
    Bound(Common),
    /// Check the input budget and summarize the encoded programs.
    Encode(Common),
    /// Run the closed loop and write trajectory.csv and report.json.
    Simulate(Common),
    /// All stages in order.
    Pipeline(Common),
    /// Write network.lp and controller_step0.lp.
    ExportLp(Common),
}

fn load(c: &Common) -> flmip::Result<(Scenario, Workspace)> {
    let mut s = Scenario::load(&c.scenario)?;
    if let Some(seed) = c.seed {
        s.reseed(seed);
    }
    Ok((s, Workspace::new(&c.out_dir)?))
}

fn encode_stage(c: &Common, write_lp: bool) -> flmip::Result<()> {
    let (s, ws) = load(c)?;
    let net = ws.network(&s)?;
    let eps = ws.epsilon()?;
    let bounds = ws.bounds()?;
    let u_eff = harness::effective_budget(&s, &eps.epsilon)?;
    let controller = harness::build_controller(&s, &net, u_eff.clone())?;
    let (net_sys, step_sys) = harness::encoded_systems(&s, &net, &bounds, &controller, &u_eff)?;
    if write_lp {
        harness::write_lp_files(&net_sys, &step_sys, &ws.out_dir)?;
        println!(
            "wrote {} and {}",
            ws.path(NETWORK_LP_FILE).display(),
            ws.path(STEP_LP_FILE).display()
        );
    } else {
        let summary = harness::summarize_encoding(&u_eff, &net_sys, &step_sys);
        ws.save_encoding(&summary)?;
        println!(
            "u_max - eps = {:?}; controller program: {} variables, {} rows, {} binaries ({} free)",
            summary.u_max_eff,
            summary.step_variables,
            summary.step_rows,
            summary.step_binaries,
            summary.step_free_binaries
        );
    }
    Ok(())
}

fn run(cli: Cli) -> flmip::Result<()> {
    match cli.command {
        Command::Train(c) => {
            let (s, ws) = load(&c)?;
            let (net, fit) = harness::train(&s)?;
            ws.save_training(&net, fit.as_ref())?;
            match fit {
                Some(f) => println!(
                    "trained on {} samples, grid MSE {:.3e}",
                    f.samples, f.final_mse
                ),
                None => println!("using pre-trained network"),
            }
        }
        Command::Bound(c) => {
            let (s, ws) = load(&c)?;
            let net = ws.network(&s)?;
            let (bounds, eps) = harness::bound(&s, &net)?;
            ws.save_bound(&bounds, &eps)?;
            println!("eps = {:?} (validated)", eps.epsilon);
        }
        Command::Encode(c) => encode_stage(&c, false)?,
        Command::ExportLp(c) => encode_stage(&c, true)?,
        Command::Simulate(c) => {
            let (s, ws) = load(&c)?;
            let net = ws.network(&s)?;
            let eps = ws.epsilon()?;
            let u_eff = harness::effective_budget(&s, &eps.epsilon)?;
            let controller = harness::build_controller(&s, &net, u_eff)?;
            let log = harness::simulate(&s.plant, &controller, &harness::loop_settings(&s)?)?;
            let report = harness::build_report(&s, &log, &eps.epsilon);
            harness::write_run(&s, &log, &report, &ws.out_dir)?;
            println!(
                "{} steps, solve ms min/max/mean {:.2}/{:.2}/{:.2}; wrote {}",
                report.steps,
                report.solve_ms.min,
                report.solve_ms.max,
                report.solve_ms.mean,
                ws.path(TRAJECTORY_FILE).display()
            );
            if let Some(e) = abort_error(&log) {
                return Err(e);
            }
        }
        Command::Pipeline(c) => {
            let (s, ws) = load(&c)?;
            let run = harness::run_pipeline(&s, &ws.out_dir)?;
            println!(
                "eps = {:?}; {} steps; report in {}",
                run.epsilon.epsilon,
                run.report.steps,
                ws.path(REPORT_FILE).display()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
