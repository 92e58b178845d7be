//! Scenario files, trace serialization, and plot-script generation.
//!
//! A scenario is a flat INI-style text file binding a bundled plant to a
//! simulation configuration and per-output setpoint profiles.  Parsing is
//! strict: unknown sections, unknown keys, duplicate keys, and malformed
//! values are rejected with the offending line number.  Every scenario can
//! be re-emitted in canonical form, and `parse(emit(s)) == s` holds exactly
//! (floats are printed in shortest round-trip form).
//!
//! Traces are serialized as CSV with the fixed header
//! `t,x1..xn,y1..ym,u1..um,lambda,lambda_dot,H1..Hm,mode,sat`, every number
//! carrying 17 significant digits so re-reading a file reproduces the trace
//! bit-exactly.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::Path;

use crate::homotopy::Mode;
use crate::motor::MotorParams;
use crate::plants;
use crate::sim::{
    run_closed_loop, ControllerKind, Eta0, PlantSetup, Profile, RegulatorGains, RunError,
    SimConfig, SimOutcome, SimTrace, TraceRow,
};

/// Scenario-file default step (finer than the library default because the
/// bundled benchmark is a stiff electrical drive).
pub const SCENARIO_DEFAULT_DT: f64 = 1e-4;

// ---------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------

/// Why a scenario file was rejected.
#[derive(Debug)]
pub enum ScenarioError {
    /// Syntax or vocabulary problem, pinned to a line of the file.
    Parse { line: usize, message: String },
    /// The file parsed but violates scenario invariants; every detected
    /// violation is listed.
    Validation(Vec<String>),
    /// Filesystem failure, surfaced verbatim.
    Io(std::io::Error),
}

impl fmt::Display for ScenarioError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScenarioError::Parse { line, message } => {
                write!(f, "parse error at line {line}: {message}")
            }
            ScenarioError::Validation(problems) => {
                write!(f, "invalid scenario: {}", problems.join("; "))
            }
            ScenarioError::Io(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for ScenarioError {}

impl From<std::io::Error> for ScenarioError {
    fn from(e: std::io::Error) -> Self {
        ScenarioError::Io(e)
    }
}

fn perr<T>(line: usize, message: impl Into<String>) -> Result<T, ScenarioError> {
    Err(ScenarioError::Parse {
        line,
        message: message.into(),
    })
}

// ---------------------------------------------------------------------
// Scenario model
// ---------------------------------------------------------------------

/// Motor-specific scenario knobs (only present when the plant is the
/// induction motor).
#[derive(Debug, Clone, PartialEq)]
pub struct MotorScenario {
    pub params: MotorParams,
    /// Drop the load-torque feedthrough from the homotopy drift row.
    pub drop_load_term: bool,
    /// Time the load torque engages (0 = loaded from the start).
    pub load_start: f64,
    pub gains: RegulatorGains,
}

impl Default for MotorScenario {
    fn default() -> Self {
        MotorScenario {
            params: MotorParams::table(),
            drop_load_term: false,
            load_start: 0.0,
            gains: RegulatorGains::default(),
        }
    }
}

/// A validated simulation request: plant, configuration, and (for the
/// motor) drive-specific parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    /// Bundled plant id (`scalar_cubic`, `mimo_toy`, `induction_motor`).
    pub plant: String,
    pub cfg: SimConfig,
    pub motor: Option<MotorScenario>,
}

impl Scenario {
    /// Parses and validates scenario text.
    pub fn parse_str(text: &str) -> Result<Scenario, ScenarioError> {
        RawScenario::parse(text)?.finish()
    }

    /// Reads, parses, and validates a scenario file.
    pub fn parse_file(path: impl AsRef<Path>) -> Result<Scenario, ScenarioError> {
        Scenario::parse_str(&fs::read_to_string(path)?)
    }

    /// The plant/loop pairing this scenario simulates.
    pub fn setup(&self) -> PlantSetup {
        match &self.motor {
            Some(ms) => PlantSetup::Motor {
                params: ms.params,
                drop_load_term: ms.drop_load_term,
                load_start: ms.load_start,
                gains: ms.gains,
            },
            None => {
                let mp = MotorParams::table();
                PlantSetup::Direct(plants::by_name(&self.plant, &mp).expect("validated plant id"))
            }
        }
    }

    /// Runs the scenario to `t_end`.
    pub fn run(&self) -> Result<SimOutcome, RunError> {
        run_closed_loop(self.setup(), &self.cfg)
    }

    /// Canonical scenario text: every key explicit, floats in shortest
    /// round-trip form, sections in fixed order.
    pub fn emit(&self) -> String {
        let cfg = &self.cfg;
        let mut out = String::new();
        out.push_str("[scenario]\n");
        out.push_str(&format!("plant = {}\n", self.plant));
        out.push_str(&format!("controller = {}\n", cfg.controller));
        out.push_str("\n[sim]\n");
        out.push_str(&format!("dt = {}\n", cfg.dt));
        out.push_str(&format!("t_end = {}\n", cfg.t_end));
        out.push_str(&format!("seed = {}\n", cfg.seed));
        out.push_str(&format!("noise_variance = {}\n", cfg.noise_variance));
        out.push_str(&format!("u_max = {}\n", cfg.u_max));
        out.push_str(&format!("alpha = {}\n", cfg.alpha));
        out.push_str(&format!("rank_tol = {}\n", cfg.rank_tol));
        out.push_str(&format!("lambda_dot0 = {}\n", cfg.lambda_dot0));
        out.push_str(&format!("lambda_slack = {}\n", cfg.lambda_slack));
        out.push_str(&format!("outer_gain = {}\n", cfg.outer_gain));
        let eta0 = match cfg.eta0 {
            Eta0::Zero => "zero",
            Eta0::MatchOutput => "match_output",
        };
        out.push_str(&format!("eta0 = {eta0}\n"));
        let x0: Vec<String> = cfg.x0.iter().map(|v| format!("{v}")).collect();
        out.push_str(&format!("x0 = {}\n", x0.join(", ")));
        out.push_str("\n[setpoints]\n");
        for (j, profile) in cfg.setpoints.iter().enumerate() {
            let knots: Vec<String> = profile
                .knots()
                .iter()
                .map(|(t, v)| format!("{t}:{v}"))
                .collect();
            out.push_str(&format!("y{} = {}\n", j + 1, knots.join(", ")));
        }
        if let Some(ms) = &self.motor {
            let p = &ms.params;
            out.push_str("\n[plant.params]\n");
            out.push_str(&format!("rated_power = {}\n", p.rated_power));
            out.push_str(&format!("msr = {}\n", p.msr));
            out.push_str(&format!("rs = {}\n", p.rs));
            out.push_str(&format!("rr = {}\n", p.rr));
            out.push_str(&format!("ls = {}\n", p.ls));
            out.push_str(&format!("lr = {}\n", p.lr));
            out.push_str(&format!("inertia = {}\n", p.inertia));
            out.push_str(&format!("pole_pairs = {}\n", p.pole_pairs));
            out.push_str(&format!("load_torque = {}\n", p.load_torque));
            out.push_str(&format!("phi_floor = {}\n", p.phi_floor));
            out.push_str(&format!("load_start = {}\n", ms.load_start));
            out.push_str(&format!("drop_load_term = {}\n", ms.drop_load_term));
            let g = &ms.gains;
            out.push_str("\n[regulators]\n");
            out.push_str(&format!("current_kp = {}\n", g.current_kp));
            out.push_str(&format!("current_ki = {}\n", g.current_ki));
            out.push_str(&format!("flux_kp = {}\n", g.flux_kp));
            out.push_str(&format!("flux_ki = {}\n", g.flux_ki));
            out.push_str(&format!("speed_kp = {}\n", g.speed_kp));
            out.push_str(&format!("speed_ki = {}\n", g.speed_ki));
        }
        out
    }
}

/// Parses and validates a scenario file (free-function form of
/// [`Scenario::parse_file`]).
pub fn parse_scenario(path: impl AsRef<Path>) -> Result<Scenario, ScenarioError> {
    Scenario::parse_file(path)
}

// ---------------------------------------------------------------------
// Parser
// ---------------------------------------------------------------------

const SECTIONS: [&str; 5] = ["scenario", "sim", "setpoints", "plant.params", "regulators"];

/// A `[setpoints]` assignment held raw: 1-based output index, knots, and
/// source line — profile construction is deferred to validation so bad
/// knot ordering reports as an invariant violation.
type SetpointEntry = (usize, Vec<(f64, f64)>, usize);

/// Collected key/value assignments before defaulting and validation.
#[derive(Default)]
struct RawScenario {
    plant: Option<String>,
    controller: Option<ControllerKind>,
    dt: Option<f64>,
    t_end: Option<f64>,
    seed: Option<u64>,
    noise_variance: Option<f64>,
    u_max: Option<f64>,
    alpha: Option<f64>,
    rank_tol: Option<f64>,
    lambda_dot0: Option<f64>,
    lambda_slack: Option<f64>,
    outer_gain: Option<f64>,
    eta0: Option<Eta0>,
    x0: Option<Vec<f64>>,
    setpoints: Vec<SetpointEntry>,
    motor_keys: Vec<(String, f64, usize)>,
    drop_load_term: Option<bool>,
    regulator_keys: Vec<(String, f64, usize)>,
    saw_motor_section: bool,
    saw_regulator_section: bool,
}

fn parse_f64(line: usize, key: &str, value: &str) -> Result<f64, ScenarioError> {
    match value.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        Ok(v) => perr(line, format!("{key} = {v} is not finite")),
        Err(_) => perr(line, format!("{key}: cannot parse `{value}` as a number")),
    }
}

fn parse_bool(line: usize, key: &str, value: &str) -> Result<bool, ScenarioError> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        other => perr(
            line,
            format!("{key}: expected true or false, got `{other}`"),
        ),
    }
}

fn parse_knots(line: usize, key: &str, value: &str) -> Result<Vec<(f64, f64)>, ScenarioError> {
    if !value.contains(':') {
        // A bare number is shorthand for a constant profile.
        return Ok(vec![(0.0, parse_f64(line, key, value)?)]);
    }
    let mut knots = Vec::new();
    for part in value.split(',') {
        let part = part.trim();
        let Some((t, v)) = part.split_once(':') else {
            return perr(line, format!("{key}: knot `{part}` is not `time:value`"));
        };
        knots.push((
            parse_f64(line, key, t.trim())?,
            parse_f64(line, key, v.trim())?,
        ));
    }
    Ok(knots)
}

impl RawScenario {
    fn parse(text: &str) -> Result<RawScenario, ScenarioError> {
        let mut raw = RawScenario::default();
        let mut section: Option<&str> = None;
        let mut seen: BTreeSet<String> = BTreeSet::new();
        for (idx, full_line) in text.lines().enumerate() {
            let lineno = idx + 1;
            let line = full_line.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
                continue;
            }
            if line.starts_with('[') {
                if !line.ends_with(']') {
                    return perr(lineno, format!("malformed section header `{line}`"));
                }
                let name = &line[1..line.len() - 1];
                let Some(known) = SECTIONS.iter().find(|s| **s == name) else {
                    return perr(lineno, format!("unknown section `[{name}]`"));
                };
                if !seen.insert(format!("[{known}]")) {
                    return perr(lineno, format!("duplicate section `[{known}]`"));
                }
                match *known {
                    "plant.params" => raw.saw_motor_section = true,
                    "regulators" => raw.saw_regulator_section = true,
                    _ => {}
                }
                section = Some(known);
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return perr(lineno, format!("expected `key = value`, got `{line}`"));
            };
            let (key, value) = (key.trim(), value.trim());
            if key.is_empty() {
                return perr(lineno, "empty key");
            }
            let Some(section) = section else {
                return perr(lineno, format!("key `{key}` appears before any section"));
            };
            if !seen.insert(format!("{section}.{key}")) {
                return perr(lineno, format!("duplicate key `{key}` in [{section}]"));
            }
            raw.assign(section, key, value, lineno)?;
        }
        Ok(raw)
    }

    fn assign(
        &mut self,
        section: &str,
        key: &str,
        value: &str,
        line: usize,
    ) -> Result<(), ScenarioError> {
        match section {
            "scenario" => match key {
                "plant" => self.plant = Some(value.to_string()),
                "controller" => {
                    self.controller = Some(match value {
                        "fblin" => ControllerKind::Fblin,
                        "continuation" => ControllerKind::Continuation,
                        "hybrid" => ControllerKind::Hybrid,
                        other => {
                            return perr(
                                line,
                                format!(
                                    "controller `{other}` is not fblin, continuation, or hybrid"
                                ),
                            )
                        }
                    })
                }
                other => return perr(line, format!("unknown key `{other}` in [scenario]")),
            },
            "sim" => match key {
                "dt" => self.dt = Some(parse_f64(line, key, value)?),
                "t_end" => self.t_end = Some(parse_f64(line, key, value)?),
                "seed" => {
                    self.seed = Some(value.parse::<u64>().map_err(|_| ScenarioError::Parse {
                        line,
                        message: format!("seed: cannot parse `{value}` as an unsigned integer"),
                    })?)
                }
                "noise_variance" => self.noise_variance = Some(parse_f64(line, key, value)?),
                "u_max" => self.u_max = Some(parse_f64(line, key, value)?),
                "alpha" => self.alpha = Some(parse_f64(line, key, value)?),
                "rank_tol" => self.rank_tol = Some(parse_f64(line, key, value)?),
                "lambda_dot0" => self.lambda_dot0 = Some(parse_f64(line, key, value)?),
                "lambda_slack" => self.lambda_slack = Some(parse_f64(line, key, value)?),
                "outer_gain" => self.outer_gain = Some(parse_f64(line, key, value)?),
                "eta0" => {
                    self.eta0 = Some(match value {
                        "zero" => Eta0::Zero,
                        "match_output" => Eta0::MatchOutput,
                        other => {
                            return perr(
                                line,
                                format!("eta0 `{other}` is not zero or match_output"),
                            )
                        }
                    })
                }
                "x0" => {
                    let mut entries = Vec::new();
                    for part in value.split(',') {
                        entries.push(parse_f64(line, key, part.trim())?);
                    }
                    self.x0 = Some(entries);
                }
                other => return perr(line, format!("unknown key `{other}` in [sim]")),
            },
            "setpoints" => {
                let Some(index) = key
                    .strip_prefix('y')
                    .and_then(|d| d.parse::<usize>().ok())
                    .filter(|i| *i >= 1)
                else {
                    return perr(line, format!("setpoint key `{key}` is not y<output index>"));
                };
                let knots = parse_knots(line, key, value)?;
                self.setpoints.push((index, knots, line));
            }
            "plant.params" => match key {
                "rated_power" | "msr" | "rs" | "rr" | "ls" | "lr" | "inertia" | "pole_pairs"
                | "load_torque" | "phi_floor" | "load_start" => {
                    let v = parse_f64(line, key, value)?;
                    self.motor_keys.push((key.to_string(), v, line));
                }
                "drop_load_term" => self.drop_load_term = Some(parse_bool(line, key, value)?),
                other => return perr(line, format!("unknown key `{other}` in [plant.params]")),
            },
            "regulators" => match key {
                "current_kp" | "current_ki" | "flux_kp" | "flux_ki" | "speed_kp" | "speed_ki" => {
                    let v = parse_f64(line, key, value)?;
                    self.regulator_keys.push((key.to_string(), v, line));
                }
                other => return perr(line, format!("unknown key `{other}` in [regulators]")),
            },
            _ => unreachable!("section vetted above"),
        }
        Ok(())
    }

    /// Applies defaults, builds the typed scenario, and collects every
    /// invariant violation.
    fn finish(self) -> Result<Scenario, ScenarioError> {
        let mut problems: Vec<String> = Vec::new();
        let plant = match self.plant {
            Some(p) => p,
            None => {
                return Err(ScenarioError::Validation(vec![
                    "[scenario] plant is required".into(),
                ]))
            }
        };
        let known = plants::catalog().iter().any(|(name, _)| *name == plant);
        if !known {
            let names: Vec<&str> = plants::catalog().iter().map(|(n, _)| *n).collect();
            return Err(ScenarioError::Validation(vec![format!(
                "unknown plant `{plant}` (bundled: {})",
                names.join(", ")
            )]));
        }
        let is_motor = plant == "induction_motor";
        if !is_motor && self.saw_motor_section {
            problems.push(format!("plant `{plant}` takes no [plant.params] section"));
        }
        if !is_motor && self.saw_regulator_section {
            problems.push(format!("plant `{plant}` takes no [regulators] section"));
        }

        let motor = if is_motor {
            let mut ms = MotorScenario::default();
            for (key, v, _line) in &self.motor_keys {
                match key.as_str() {
                    "rated_power" => ms.params.rated_power = *v,
                    "msr" => ms.params.msr = *v,
                    "rs" => ms.params.rs = *v,
                    "rr" => ms.params.rr = *v,
                    "ls" => ms.params.ls = *v,
                    "lr" => ms.params.lr = *v,
                    "inertia" => ms.params.inertia = *v,
                    "pole_pairs" => ms.params.pole_pairs = *v,
                    "load_torque" => ms.params.load_torque = *v,
                    "phi_floor" => ms.params.phi_floor = *v,
                    "load_start" => ms.load_start = *v,
                    _ => unreachable!("key vetted during assignment"),
                }
            }
            if let Some(flag) = self.drop_load_term {
                ms.drop_load_term = flag;
            }
            for (key, v, _line) in &self.regulator_keys {
                match key.as_str() {
                    "current_kp" => ms.gains.current_kp = *v,
                    "current_ki" => ms.gains.current_ki = *v,
                    "flux_kp" => ms.gains.flux_kp = *v,
                    "flux_ki" => ms.gains.flux_ki = *v,
                    "speed_kp" => ms.gains.speed_kp = *v,
                    "speed_ki" => ms.gains.speed_ki = *v,
                    _ => unreachable!("key vetted during assignment"),
                }
            }
            let p = &ms.params;
            for (name, v) in [
                ("msr", p.msr),
                ("rs", p.rs),
                ("rr", p.rr),
                ("ls", p.ls),
                ("lr", p.lr),
                ("inertia", p.inertia),
                ("pole_pairs", p.pole_pairs),
                ("phi_floor", p.phi_floor),
            ] {
                if !(v > 0.0) {
                    problems.push(format!("motor parameter {name} = {v} must be positive"));
                }
            }
            if !(p.load_torque >= 0.0) {
                problems.push(format!(
                    "load_torque = {} must be non-negative",
                    p.load_torque
                ));
            }
            if !(ms.load_start >= 0.0) {
                problems.push(format!(
                    "load_start = {} must be non-negative",
                    ms.load_start
                ));
            }
            Some(ms)
        } else {
            None
        };

        // The plant fixes the state/output dimensions the config must match.
        let sys = plants::by_name(
            &plant,
            motor
                .as_ref()
                .map(|ms| &ms.params)
                .unwrap_or(&MotorParams::table()),
        )
        .expect("plant id vetted above");
        let (n, m) = (sys.state_dim(), sys.channels());

        let mut setpoints: Vec<Profile> = (0..m).map(|_| Profile::constant(0.0)).collect();
        let mut given: BTreeSet<usize> = BTreeSet::new();
        for (index, knots, line) in self.setpoints {
            if index > m {
                problems.push(format!(
                    "line {line}: setpoint y{index} but `{plant}` has {m} output(s)"
                ));
                continue;
            }
            if !given.insert(index) {
                problems.push(format!("line {line}: setpoint y{index} given twice"));
                continue;
            }
            match Profile::new(knots) {
                Ok(p) => setpoints[index - 1] = p,
                Err(e) => problems.push(format!("line {line}: y{index}: {e}")),
            }
        }

        let cfg = SimConfig {
            dt: self.dt.unwrap_or(SCENARIO_DEFAULT_DT),
            t_end: self.t_end.unwrap_or(1.0),
            seed: self.seed.unwrap_or(0),
            noise_variance: self.noise_variance.unwrap_or(0.0),
            u_max: self.u_max.unwrap_or(20.0),
            alpha: self.alpha.unwrap_or(crate::homotopy::DEFAULT_ALPHA),
            rank_tol: self.rank_tol.unwrap_or(crate::tangent::DEFAULT_RANK_TOL),
            lambda_dot0: self.lambda_dot0.unwrap_or(1.0),
            lambda_slack: self
                .lambda_slack
                .unwrap_or(crate::homotopy::DEFAULT_LAMBDA_SLACK),
            outer_gain: self.outer_gain.unwrap_or(2.0),
            eta0: self.eta0.unwrap_or(Eta0::Zero),
            controller: self.controller.unwrap_or(ControllerKind::Hybrid),
            x0: self.x0.unwrap_or_else(|| vec![0.0; n]),
            setpoints,
        };
        if let Err(e) = cfg.validate(n, m) {
            problems.push(e);
        }
        if problems.is_empty() {
            Ok(Scenario { plant, cfg, motor })
        } else {
            Err(ScenarioError::Validation(problems))
        }
    }
}

// ---------------------------------------------------------------------
// CSV traces
// ---------------------------------------------------------------------

/// The exact header for a trace of `n` states and `m` outputs.
pub fn csv_header(n: usize, m: usize) -> String {
    let mut head = String::from("t");
    for i in 1..=n {
        head.push_str(&format!(",x{i}"));
    }
    for j in 1..=m {
        head.push_str(&format!(",y{j}"));
    }
    for j in 1..=m {
        head.push_str(&format!(",u{j}"));
    }
    head.push_str(",lambda,lambda_dot");
    for j in 1..=m {
        head.push_str(&format!(",H{j}"));
    }
    head.push_str(",mode,sat");
    head
}

fn push_num(out: &mut String, v: f64) {
    // 17 significant digits: enough for f64 -> text -> f64 to be exact.
    out.push_str(&format!(",{v:.16e}"));
}

/// Serializes a trace to CSV text (header + one row per step).
pub fn csv_string(trace: &SimTrace) -> String {
    let mut out = csv_header(trace.state_dim, trace.channels);
    out.push('\n');
    for row in &trace.rows {
        out.push_str(&format!("{:.16e}", row.t));
        for v in row.x.iter().chain(&row.y).chain(&row.u) {
            push_num(&mut out, *v);
        }
        push_num(&mut out, row.lambda);
        push_num(&mut out, row.lambda_dot);
        for v in &row.h {
            push_num(&mut out, *v);
        }
        out.push_str(&format!(",{},{}\n", row.mode, u8::from(row.saturated)));
    }
    out
}

/// Writes a trace as CSV.
pub fn emit_csv(trace: &SimTrace, path: impl AsRef<Path>) -> std::io::Result<()> {
    fs::write(path, csv_string(trace))
}

/// Parses CSV text produced by [`csv_string`] back into a trace.  The
/// plant name is not part of the schema, so the caller supplies it.
pub fn parse_csv(text: &str, plant: &str) -> Result<SimTrace, ScenarioError> {
    let mut lines = text.lines().enumerate();
    let Some((_, header)) = lines.next() else {
        return perr(1, "empty file".to_string());
    };
    let n = header.split(',').filter(|c| c.starts_with('x')).count();
    let m = header.split(',').filter(|c| c.starts_with('y')).count();
    if header != csv_header(n, m) {
        return perr(1, format!("unrecognized header `{header}`"));
    }
    let cols = 1 + n + 2 * m + 2 + m + 2;
    let mut rows = Vec::new();
    for (idx, line) in lines {
        let lineno = idx + 1;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != cols {
            return perr(
                lineno,
                format!("expected {cols} columns, found {}", fields.len()),
            );
        }
        let mut nums = Vec::with_capacity(cols - 2);
        for field in &fields[..cols - 2] {
            match field.parse::<f64>() {
                Ok(v) => nums.push(v),
                Err(_) => return perr(lineno, format!("cannot parse `{field}` as a number")),
            }
        }
        let mode = match fields[cols - 2] {
            "F" => Mode::Fblin,
            "C" => Mode::Continuation,
            other => return perr(lineno, format!("mode `{other}` is not F or C")),
        };
        let saturated = match fields[cols - 1] {
            "0" => false,
            "1" => true,
            other => return perr(lineno, format!("sat `{other}` is not 0 or 1")),
        };
        let base = 1;
        rows.push(TraceRow {
            t: nums[0],
            x: nums[base..base + n].to_vec(),
            y: nums[base + n..base + n + m].to_vec(),
            u: nums[base + n + m..base + n + 2 * m].to_vec(),
            lambda: nums[base + n + 2 * m],
            lambda_dot: nums[base + n + 2 * m + 1],
            h: nums[base + n + 2 * m + 2..base + n + 3 * m + 2].to_vec(),
            mode,
            saturated,
        });
    }
    Ok(SimTrace {
        plant: plant.to_string(),
        state_dim: n,
        channels: m,
        rows,
    })
}

/// Reads a CSV trace file.
pub fn read_csv(path: impl AsRef<Path>, plant: &str) -> Result<SimTrace, ScenarioError> {
    parse_csv(&fs::read_to_string(path)?, plant)
}

// ---------------------------------------------------------------------
// Plot scripts
// ---------------------------------------------------------------------

/// A gnuplot script that renders the trace CSV to a four-panel PNG
/// (outputs, inputs, deformation parameter, residual channels).
pub fn plot_script(trace: &SimTrace, csv_name: &str, png_name: &str) -> String {
    let (n, m) = (trace.state_dim, trace.channels);
    let y0 = 1 + n; // 0-based column offsets; gnuplot columns are 1-based
    let u0 = y0 + m;
    let lam = u0 + m;
    let h0 = lam + 2;
    let series = |base: usize, tag: &str| -> String {
        (0..m)
            .map(|j| {
                format!(
                    "\"{csv_name}\" using 1:{} with lines title \"{tag}{}\"",
                    base + j + 1,
                    j + 1
                )
            })
            .collect::<Vec<_>>()
            .join(", \\\n     ")
    };
    format!(
        "# Trace plots for `{plant}` ({rows} rows).\n\
         set datafile separator \",\"\n\
         set terminal pngcairo size 1100,1200\n\
         set output \"{png_name}\"\n\
         set multiplot layout 4,1 title \"{plant}\"\n\
         set grid\n\
         set xlabel \"t [s]\"\n\
         set ylabel \"outputs\"\n\
         plot {youts}\n\
         set ylabel \"inputs\"\n\
         plot {uins}\n\
         set ylabel \"deformation\"\n\
         plot \"{csv_name}\" using 1:{lam_col} with lines title \"lambda\", \\\n     \
         \"{csv_name}\" using 1:{rate_col} with lines title \"lambda rate\"\n\
         set ylabel \"residual\"\n\
         plot {hseries}\n\
         unset multiplot\n",
        plant = trace.plant,
        rows = trace.rows.len(),
        youts = series(y0, "y"),
        uins = series(u0, "u"),
        lam_col = lam + 1,
        rate_col = lam + 2,
        hseries = series(h0, "H"),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal(plant: &str) -> String {
        format!("[scenario]\nplant = {plant}\n")
    }

    #[test]
    fn minimal_file_applies_defaults() {
        let sc = Scenario::parse_str(&minimal("scalar_cubic")).unwrap();
        assert_eq!(sc.plant, "scalar_cubic");
        assert_eq!(sc.cfg.dt, 1e-4);
        assert_eq!(sc.cfg.alpha, 10.0);
        assert_eq!(sc.cfg.controller, ControllerKind::Hybrid);
        assert_eq!(sc.cfg.x0, vec![0.0]);
        assert_eq!(sc.cfg.setpoints.len(), 1);
        assert_eq!(sc.cfg.setpoints[0].value_at(3.0), 0.0);
        assert!(sc.motor.is_none());
    }

    #[test]
    fn negative_dt_is_a_validation_error() {
        let text = format!("{}\n[sim]\ndt = -1\n", minimal("scalar_cubic"));
        match Scenario::parse_str(&text) {
            Err(ScenarioError::Validation(problems)) => {
                assert!(problems.iter().any(|p| p.contains("dt")), "{problems:?}");
            }
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_key_reports_line_and_key() {
        let text = "[scenario]\nplant = mimo_toy\n\n[sim]\nstep = 0.1\n";
        match Scenario::parse_str(text) {
            Err(ScenarioError::Parse { line, message }) => {
                assert_eq!(line, 5);
                assert!(message.contains("step"), "{message}");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_section_rejected() {
        let text = "[scenario]\nplant = mimo_toy\n[plotting]\ncolor = red\n";
        match Scenario::parse_str(text) {
            Err(ScenarioError::Parse { line, message }) => {
                assert_eq!(line, 3);
                assert!(message.contains("plotting"), "{message}");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn duplicate_key_rejected() {
        let text = "[scenario]\nplant = mimo_toy\nplant = scalar_cubic\n";
        match Scenario::parse_str(text) {
            Err(ScenarioError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn key_outside_section_rejected() {
        match Scenario::parse_str("plant = mimo_toy\n") {
            Err(ScenarioError::Parse { line, .. }) => assert_eq!(line, 1),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn malformed_number_reports_line() {
        let text = "[scenario]\nplant = mimo_toy\n[sim]\ndt = fast\n";
        match Scenario::parse_str(text) {
            Err(ScenarioError::Parse { line, message }) => {
                assert_eq!(line, 4);
                assert!(message.contains("fast"), "{message}");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn nonfinite_number_rejected() {
        let text = "[scenario]\nplant = mimo_toy\n[sim]\nu_max = inf\n";
        assert!(matches!(
            Scenario::parse_str(text),
            Err(ScenarioError::Parse { line: 4, .. })
        ));
    }

    #[test]
    fn unknown_plant_lists_bundled_names() {
        match Scenario::parse_str(&minimal("pendulum")) {
            Err(ScenarioError::Validation(problems)) => {
                assert!(problems[0].contains("pendulum"));
                assert!(problems[0].contains("induction_motor"));
            }
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn setpoint_profiles_parse_and_interpolate() {
        let text =
            "[scenario]\nplant = mimo_toy\n\n[setpoints]\ny1 = 0:0, 2:100, 6:100\ny2 = 0.5\n";
        let sc = Scenario::parse_str(text).unwrap();
        assert_eq!(sc.cfg.setpoints[0].value_at(1.0), 50.0);
        assert_eq!(sc.cfg.setpoints[0].value_at(9.0), 100.0);
        assert_eq!(sc.cfg.setpoints[1].value_at(9.0), 0.5);
    }

    #[test]
    fn decreasing_profile_times_fail_validation() {
        let text = "[scenario]\nplant = scalar_cubic\n\n[setpoints]\ny1 = 0:0, 2:1, 1:2\n";
        match Scenario::parse_str(text) {
            Err(ScenarioError::Validation(problems)) => {
                assert!(problems[0].contains("increase"), "{problems:?}");
            }
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn setpoint_index_beyond_outputs_fails() {
        let text = "[scenario]\nplant = scalar_cubic\n\n[setpoints]\ny2 = 1\n";
        match Scenario::parse_str(text) {
            Err(ScenarioError::Validation(problems)) => {
                assert!(problems[0].contains("y2"), "{problems:?}");
            }
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn x0_length_mismatch_fails() {
        let text = "[scenario]\nplant = mimo_toy\n\n[sim]\nx0 = 1\n";
        match Scenario::parse_str(text) {
            Err(ScenarioError::Validation(problems)) => {
                assert!(problems[0].contains("x0"), "{problems:?}");
            }
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn motor_sections_rejected_for_direct_plants() {
        let text = "[scenario]\nplant = mimo_toy\n\n[plant.params]\nmsr = 0.2\n";
        match Scenario::parse_str(text) {
            Err(ScenarioError::Validation(problems)) => {
                assert!(problems[0].contains("plant.params"), "{problems:?}");
            }
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn validation_collects_multiple_problems() {
        let text =
            "[scenario]\nplant = scalar_cubic\n\n[sim]\ndt = -1\n\n[setpoints]\ny1 = 0:0, 0:1\ny3 = 2\n";
        match Scenario::parse_str(text) {
            Err(ScenarioError::Validation(problems)) => {
                assert!(problems.len() >= 3, "{problems:?}");
            }
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn motor_scenario_round_trips_through_emit() {
        let text = "\
[scenario]
plant = induction_motor
controller = hybrid

[sim]
dt = 1e-4
t_end = 6
seed = 42
noise_variance = 0.005
u_max = 20
x0 = 0, 0, 0, 0

[setpoints]
y1 = 0.0961
y2 = 0:0, 2:100, 6:100

[plant.params]
load_start = 3
drop_load_term = false

[regulators]
current_kp = 350
";
        let sc = Scenario::parse_str(text).unwrap();
        let motor = sc.motor.as_ref().unwrap();
        assert_eq!(motor.load_start, 3.0);
        assert_eq!(motor.params.msr, 0.175);
        assert_eq!(motor.gains.current_kp, 350.0);
        let round = Scenario::parse_str(&sc.emit()).unwrap();
        assert_eq!(round, sc);
    }

    #[test]
    fn direct_scenario_round_trips_through_emit() {
        let text = "\
[scenario]
plant = mimo_toy
controller = continuation

[sim]
dt = 0.001
t_end = 10
alpha = 7.5
eta0 = match_output
x0 = 1, 1

[setpoints]
y1 = 0:0.1, 3:0.30000000000000004
";
        let sc = Scenario::parse_str(text).unwrap();
        let round = Scenario::parse_str(&sc.emit()).unwrap();
        assert_eq!(round, sc);
    }

    fn tiny_trace() -> SimTrace {
        SimTrace {
            plant: "mimo_toy".into(),
            state_dim: 2,
            channels: 2,
            rows: vec![
                TraceRow {
                    t: 0.0,
                    x: vec![1.0, 1.0],
                    y: vec![1.0 / 3.0, std::f64::consts::PI],
                    u: vec![-1.234567890123456e-7, 2.0_f64.sqrt()],
                    lambda: 0.0,
                    lambda_dot: 1.0,
                    h: vec![0.1, -0.2],
                    mode: Mode::Fblin,
                    saturated: false,
                },
                TraceRow {
                    t: 1e-3,
                    x: vec![0.9, 1.1],
                    y: vec![0.3, 3.2],
                    u: vec![20.0, -20.0],
                    lambda: 0.001,
                    lambda_dot: 1.0,
                    h: vec![0.1, -0.2],
                    mode: Mode::Continuation,
                    saturated: true,
                },
            ],
        }
    }

    #[test]
    fn csv_header_matches_contract() {
        assert_eq!(
            csv_header(2, 2),
            "t,x1,x2,y1,y2,u1,u2,lambda,lambda_dot,H1,H2,mode,sat"
        );
        assert_eq!(csv_header(1, 1), "t,x1,y1,u1,lambda,lambda_dot,H1,mode,sat");
    }

    #[test]
    fn one_row_trace_gives_two_lines() {
        let mut trace = tiny_trace();
        trace.rows.truncate(1);
        let text = csv_string(&trace);
        assert_eq!(text.trim_end().lines().count(), 2);
        assert!(text.starts_with("t,x1,x2,"));
    }

    #[test]
    fn csv_round_trip_is_bit_exact() {
        let trace = tiny_trace();
        let text = csv_string(&trace);
        let back = parse_csv(&text, "mimo_toy").unwrap();
        assert_eq!(back.state_dim, trace.state_dim);
        assert_eq!(back.channels, trace.channels);
        assert_eq!(back.rows.len(), trace.rows.len());
        for (a, b) in trace.rows.iter().zip(&back.rows) {
            assert_eq!(a.t.to_bits(), b.t.to_bits());
            for (p, q) in a.x.iter().zip(&b.x) {
                assert_eq!(p.to_bits(), q.to_bits());
            }
            for (p, q) in a.u.iter().zip(&b.u) {
                assert_eq!(p.to_bits(), q.to_bits());
            }
            for (p, q) in a.h.iter().zip(&b.h) {
                assert_eq!(p.to_bits(), q.to_bits());
            }
            assert_eq!(a.lambda.to_bits(), b.lambda.to_bits());
            assert_eq!(a.mode, b.mode);
            assert_eq!(a.saturated, b.saturated);
        }
        assert_eq!(trace, back);
    }

    #[test]
    fn csv_rejects_wrong_column_count() {
        let trace = tiny_trace();
        let mut text = csv_string(&trace);
        text.push_str("1.0,2.0\n");
        assert!(matches!(
            parse_csv(&text, "x"),
            Err(ScenarioError::Parse { line: 4, .. })
        ));
    }

    #[test]
    fn plot_script_points_at_right_columns() {
        let trace = tiny_trace();
        let script = plot_script(&trace, "run.csv", "run.png");
        // 2 states: y1 at column 4, u1 at 6, lambda at 8, H1 at 10.
        assert!(
            script.contains("using 1:4 with lines title \"y1\""),
            "{script}"
        );
        assert!(
            script.contains("using 1:6 with lines title \"u1\""),
            "{script}"
        );
        assert!(
            script.contains("using 1:8 with lines title \"lambda\""),
            "{script}"
        );
        assert!(
            script.contains("using 1:10 with lines title \"H1\""),
            "{script}"
        );
        assert!(script.contains("set output \"run.png\""));
    }
}
