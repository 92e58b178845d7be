//! Command-line front end: run scenario files, list the bundled plants,
//! run the acceptance checks, and generate plot scripts for trace CSVs.

use std::env;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use homctl::scenario::{emit_csv, plot_script, read_csv};
use homctl::{plants, RunError, Scenario, SimTrace};

const USAGE: &str = "\
homctl — setpoint tracking for affine nonlinear systems by homotopy continuation

USAGE:
  homctl simulate <scenario> [--out <dir>] [--seed N]
  homctl list-plants
  homctl check
  homctl plot <trace.csv>

SUBCOMMANDS:
  simulate     run a scenario file, write the trace to <stem>.csv inside
               --out (default: current directory), and print a convergence
               summary; a failed run leaves <stem>.partial.csv for diagnosis
  list-plants  list the bundled plant models
  check        run the built-in acceptance checks and print the pass/fail
               table (the CI entry point)
  plot         validate a trace CSV and write a gnuplot script <stem>.gp
               that renders it to <stem>.png

SEED:
  the scenario file's seed is overridden by the HOMOTOPY_FBLIN_SEED
  environment variable, which is overridden by --seed

EXIT CODES:
  0  success
  1  simulation failure or failed acceptance check
  2  usage, scenario, or configuration error
";

/// A subcommand failure carrying the process exit code it maps to.
struct Failure {
    code: u8,
    message: String,
}

/// Exit 2: bad invocation, bad scenario, bad input file.
fn config_err(message: impl Into<String>) -> Failure {
    Failure {
        code: 2,
        message: message.into(),
    }
}

/// Exit 1: the run itself failed.
fn run_err(message: impl Into<String>) -> Failure {
    Failure {
        code: 1,
        message: message.into(),
    }
}

fn main() -> ExitCode {
    let args: Vec<String> = env::args().skip(1).collect();
    let result = match args.first().map(String::as_str) {
        None | Some("help") | Some("--help") | Some("-h") => {
            print!("{USAGE}");
            Ok(())
        }
        Some("simulate") => cmd_simulate(&args[1..]),
        Some("list-plants") => cmd_list_plants(&args[1..]),
        Some("check") => cmd_check(&args[1..]),
        Some("plot") => cmd_plot(&args[1..]),
        Some(other) => Err(config_err(format!(
            "unknown subcommand `{other}` (run `homctl help` for usage)"
        ))),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {}", failure.message);
            ExitCode::from(failure.code)
        }
    }
}

fn no_extra_args(args: &[String], what: &str) -> Result<(), Failure> {
    match args.first() {
        None => Ok(()),
        Some(extra) => Err(config_err(format!(
            "{what} takes no arguments (got `{extra}`)"
        ))),
    }
}

fn cmd_list_plants(args: &[String]) -> Result<(), Failure> {
    no_extra_args(args, "list-plants")?;
    for (name, blurb) in plants::catalog() {
        println!("{name:<16} {blurb}");
    }
    Ok(())
}

fn cmd_check(args: &[String]) -> Result<(), Failure> {
    no_extra_args(args, "check")?;
    let reports = homctl::run_all();
    print!("{}", homctl::render(&reports));
    if homctl::all_passed(&reports) {
        Ok(())
    } else {
        let failed = reports.iter().filter(|r| !r.passed).count();
        Err(run_err(format!("{failed} acceptance check(s) failed")))
    }
}

/// The seed the run uses: scenario file < environment < --seed flag.
fn effective_seed(file_seed: u64, flag: Option<u64>) -> Result<u64, Failure> {
    let mut seed = file_seed;
    if let Ok(raw) = env::var("HOMOTOPY_FBLIN_SEED") {
        if !raw.is_empty() {
            seed = raw.parse().map_err(|_| {
                config_err(format!("HOMOTOPY_FBLIN_SEED=`{raw}` is not a valid seed"))
            })?;
        }
    }
    Ok(flag.unwrap_or(seed))
}

fn cmd_simulate(args: &[String]) -> Result<(), Failure> {
    let mut scenario_path: Option<PathBuf> = None;
    let mut out_dir = PathBuf::from(".");
    let mut seed_flag: Option<u64> = None;
    let mut it = args.iter();
    while let Some(arg) = it.next() {
        match arg.as_str() {
            "--out" => {
                let dir = it
                    .next()
                    .ok_or_else(|| config_err("--out needs a directory"))?;
                out_dir = PathBuf::from(dir);
            }
            "--seed" => {
                let raw = it
                    .next()
                    .ok_or_else(|| config_err("--seed needs a value"))?;
                let seed = raw
                    .parse()
                    .map_err(|_| config_err(format!("--seed `{raw}` is not a valid seed")))?;
                seed_flag = Some(seed);
            }
            flag if flag.starts_with('-') => {
                return Err(config_err(format!("unknown flag `{flag}`")));
            }
            path => {
                if scenario_path.is_some() {
                    return Err(config_err("more than one scenario file given"));
                }
                scenario_path = Some(PathBuf::from(path));
            }
        }
    }
    let path = scenario_path.ok_or_else(|| config_err("simulate needs a scenario file"))?;
    let mut sc =
        Scenario::parse_file(&path).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
    sc.cfg.seed = effective_seed(sc.cfg.seed, seed_flag)?;

    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("trace")
        .to_string();
    fs::create_dir_all(&out_dir)
        .map_err(|e| config_err(format!("cannot create {}: {e}", out_dir.display())))?;

    let outcome = match sc.run() {
        Ok(outcome) => outcome,
        Err(RunError::Config(msg)) => return Err(config_err(msg)),
        Err(RunError::Failed(failure)) => {
            let mut message = failure.error.to_string();
            if !failure.partial.is_empty() {
                let partial_path = out_dir.join(format!("{stem}.partial.csv"));
                match emit_csv(&failure.partial, &partial_path) {
                    Ok(()) => {
                        message.push_str(&format!(
                            " (partial trace: {}, {} rows)",
                            partial_path.display(),
                            failure.partial.len()
                        ));
                    }
                    Err(e) => message.push_str(&format!(" (partial trace not written: {e})")),
                }
            }
            return Err(run_err(message));
        }
    };

    let csv_path = out_dir.join(format!("{stem}.csv"));
    emit_csv(&outcome.trace, &csv_path)
        .map_err(|e| run_err(format!("cannot write {}: {e}", csv_path.display())))?;
    print!("{}", summary(&sc, &path, &outcome.trace, &csv_path));
    Ok(())
}

/// Human-readable convergence summary of a finished run.
fn summary(sc: &Scenario, scenario_path: &Path, trace: &SimTrace, csv_path: &Path) -> String {
    const TRACK_TOL: f64 = 1e-2;
    let cfg = &sc.cfg;
    let last = trace.final_row();
    let mut out = format!(
        "scenario     {} ({}, {} controller)\n",
        scenario_path.display(),
        sc.plant,
        cfg.controller
    );
    out.push_str(&format!(
        "run          {} steps (dt = {} s, t_end = {} s, seed = {})\n",
        trace.len() - 1,
        cfg.dt,
        cfg.t_end,
        cfg.seed
    ));
    let mut worst = 0.0f64;
    for (j, profile) in cfg.setpoints.iter().enumerate() {
        let target = profile.value_at(cfg.t_end);
        let err = (last.y[j] - target).abs();
        worst = worst.max(err);
        out.push_str(&format!(
            "output y{}    {:.6} at t_end (setpoint {}, |error| = {:.3e})\n",
            j + 1,
            last.y[j],
            target,
            err
        ));
    }
    out.push_str(&format!(
        "deformation  lambda = {:.6}, rate = {:.3e}, mode switches = {}\n",
        last.lambda,
        last.lambda_dot,
        trace.mode_switches()
    ));
    let sat_rows = trace.rows.iter().filter(|r| r.saturated).count();
    out.push_str(&format!(
        "inputs       peak |u| = {:.6}, {} of {} rows saturated (u_max = {})\n",
        trace.max_input(),
        sat_rows,
        trace.len(),
        cfg.u_max
    ));
    out.push_str(&format!(
        "residual     max |H| = {:.3e} over the run\n",
        trace.max_residual()
    ));
    let verdict = if worst < TRACK_TOL { "yes" } else { "no" };
    out.push_str(&format!(
        "converged    {verdict} (worst terminal tracking error {worst:.3e} vs {TRACK_TOL:.0e})\n",
    ));
    out.push_str(&format!(
        "wrote        {} ({} rows)\n",
        csv_path.display(),
        trace.len()
    ));
    out
}

fn cmd_plot(args: &[String]) -> Result<(), Failure> {
    let [csv_arg] = args else {
        return Err(config_err("plot needs exactly one trace CSV path"));
    };
    let csv_path = PathBuf::from(csv_arg);
    let stem = csv_path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("trace")
        .to_string();
    // The plant name is not part of the CSV schema; the stem is only a
    // plot label, so any name works.
    let trace = read_csv(&csv_path, &stem)
        .map_err(|e| config_err(format!("{}: {e}", csv_path.display())))?;
    let csv_name = csv_path
        .file_name()
        .and_then(|s| s.to_str())
        .unwrap_or(csv_arg);
    let script = plot_script(&trace, csv_name, &format!("{stem}.png"));
    let gp_path = csv_path.with_extension("gp");
    fs::write(&gp_path, script)
        .map_err(|e| run_err(format!("cannot write {}: {e}", gp_path.display())))?;
    println!(
        "wrote {} ({} rows validated); render with: gnuplot {}",
        gp_path.display(),
        trace.len(),
        gp_path.display()
    );
    Ok(())
}
