//! Command-line front end: reads program files, runs a mode, a solver, an
//! integrator or the validation suite, and serializes the result.

pub mod args;
pub mod error;
pub mod format;

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::Path;

use adtool_core::checks::{invariant_report, structural_sparsity};
use adtool_core::lumpify::{
    brute_force_schedule, greedy_schedule, lump_shapes, plan_lumps, schedule_stats, Dag, LumpSchedule, Objective,
    BRUTE_FORCE_NODE_LIMIT,
};
use adtool_core::modes::{self, Mode};
use adtool_core::ode::{self, convergence_report, InverseStep, OdeProblem, OdeQuantity, VectorField};
use adtool_core::oracle::{compare_modes, finite_difference_discrepancy};
use adtool_core::solvers::{newton_solve, NewtonConfig};
use adtool_core::{Differentiable, Program};
use clap::Parser;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};

pub use args::Cli;
use args::{CheckArgs, Command, EvalArgs, LumpArgs, ModeArgs, NewtonArgs, OdeArgs};
pub use error::CliError;

/// What a command printed and how it exits.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Outcome {
    pub stdout: String,
    pub stderr: String,
    pub code: i32,
}

type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Format {
    Json,
    Csv,
}

/// Parses `args` (including the program name) and runs the command.
pub fn run_args<I, T>(args: I) -> Outcome
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => run(&cli),
        Err(e) if !e.use_stderr() => Outcome {
            stdout: e.to_string(),
            stderr: String::new(),
            code: 0,
        },
        Err(e) => {
            let rendered = e.to_string();
            let first = rendered.lines().next().unwrap_or_default();
            let err = CliError::Usage(first.trim_start_matches("error: ").to_string());
            Outcome {
                stdout: format!("{}\n", err.to_json()),
                stderr: e.to_string(),
                code: err.exit_code(),
            }
        }
    }
}

pub fn run(cli: &Cli) -> Outcome {
    let mut stderr = String::new();
    match dispatch(cli, &mut stderr) {
        Ok((stdout, code)) => Outcome { stdout, stderr, code },
        Err(e) => Outcome {
            stdout: format!("{}\n", e.to_json()),
            stderr,
            code: e.exit_code(),
        },
    }
}

fn dispatch(cli: &Cli, stderr: &mut String) -> Result<(String, i32)> {
    let requested = if cli.csv {
        Some(Format::Csv)
    } else if cli.json {
        Some(Format::Json)
    } else {
        None
    };
    let name = cli.command.name();
    let json_only = |value: Value| match requested {
        Some(Format::Csv) => Err(CliError::Usage(format!("`{name}` has no CSV output"))),
        _ => Ok(json_line(&value)),
    };
    let vector = |v: Vec<f64>| match requested.unwrap_or(Format::Json) {
        Format::Json => json_line(&json!({ "result": v })),
        Format::Csv => vector_csv(&v),
    };
    match &cli.command {
        Command::Eval(a) => Ok((vector(eval(a)?), 0)),
        Command::Jvp(a) => Ok((vector(apply_mode(a, Mode::Forward)?), 0)),
        Command::Vjp(a) => Ok((vector(apply_mode(a, Mode::Reverse)?), 0)),
        Command::JvpInv(a) => Ok((vector(apply_mode(a, Mode::ReverseInverse)?), 0)),
        Command::VjpInv(a) => Ok((vector(apply_mode(a, Mode::ForwardInverse)?), 0)),
        Command::Lump(a) => Ok((json_only(lump(a)?)?, 0)),
        Command::Newton(a) => Ok((json_only(newton(a)?)?, 0)),
        Command::Ode(a) => ode_command(a, requested),
        Command::Check(a) => {
            if requested == Some(Format::Csv) {
                return Err(CliError::Usage("`check` has no CSV output".to_string()));
            }
            let (report, passed) = check(a, stderr)?;
            Ok((json_line(&report), if passed { 0 } else { 1 }))
        }
    }
}

fn json_line<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string(value).expect("serializable output");
    s.push('\n');
    s
}

/// Shortest round-trip decimal, as in the JSON output.
fn number(x: f64) -> String {
    serde_json::to_string(&x).expect("f64 serializes")
}

fn csv_table(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for row in rows {
        w.write_record(&row).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 fields")
}

fn vector_csv(v: &[f64]) -> String {
    csv_table(&["index", "value"], v.iter().enumerate().map(|(i, x)| vec![i.to_string(), number(*x)]))
}

pub fn read_program(path: &Path) -> Result<Program> {
    let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    format::parse_program(&text).map_err(|source| CliError::Format {
        path: path.to_path_buf(),
        source,
    })
}

fn finite(what: &str, v: &[f64]) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(CliError::Usage(format!("`--{what}` values must be finite")))
    }
}

fn eval(a: &EvalArgs) -> Result<Vec<f64>> {
    finite("at", &a.at)?;
    Ok(read_program(&a.program)?.eval(&a.at)?)
}

fn apply_mode(a: &ModeArgs, mode: Mode) -> Result<Vec<f64>> {
    finite("at", &a.at)?;
    finite("vec", &a.vector)?;
    let program = read_program(&a.program)?;
    if !a.tapeless {
        return Ok(program.apply_mode_tol(&a.at, &a.vector, mode, a.tol)?);
    }
    match (&program, mode) {
        (Program::Trace(t), Mode::Reverse) => Ok(modes::vjp_tapeless(t, &a.at, &a.vector)?),
        (Program::Trace(t), Mode::ReverseInverse) => Ok(modes::jvp_inverse_tapeless(t, &a.at, &a.vector)?),
        (Program::Trace(_), _) => Err(CliError::Usage("`--tapeless` applies to `vjp` and `jvp-inv` only".to_string())),
        (Program::Dag(_), _) => Err(CliError::Usage("`--tapeless` requires a trace, not a graph".to_string())),
    }
}

fn schedule_json(dag: &Dag, schedule: &LumpSchedule) -> Value {
    json!({
        "order": schedule.order,
        "cuts": schedule.cuts,
        "widths": schedule.widths,
        "stats": schedule_stats(dag, schedule),
        "shapes": lump_shapes(dag, schedule),
        "lumps": plan_lumps(dag, schedule).lumps,
    })
}

fn lump(a: &LumpArgs) -> Result<Value> {
    let dag = match read_program(&a.program)? {
        Program::Dag(d) => d,
        Program::Trace(t) => Dag::from_trace(&t)?,
    };
    let greedy = greedy_schedule(&dag)?;
    let mut out = json!({
        "n": dag.n_inputs(),
        "nodes": dag.nodes().len(),
        "greedy": schedule_json(&dag, &greedy),
    });
    let objective = match a.objective {
        Some(o) => Some(Objective::from(o)),
        None if dag.nodes().len() <= BRUTE_FORCE_NODE_LIMIT => Some(Objective::Size),
        None => None,
    };
    if let Some(objective) = objective {
        let best = brute_force_schedule(&dag, objective)?;
        let greedy_score = objective.score(&schedule_stats(&dag, &greedy));
        let best_score = objective.score(&schedule_stats(&dag, &best));
        out["brute_force"] = json!({
            "objective": objective,
            "schedule": schedule_json(&dag, &best),
            "greedy_optimal": greedy_score <= best_score,
        });
    }
    Ok(out)
}

fn newton(a: &NewtonArgs) -> Result<Value> {
    finite("at", &a.at)?;
    let program = read_program(&a.program)?;
    let cfg = NewtonConfig {
        max_iters: a.max_iters,
        abs_tol: a.tol,
        ..NewtonConfig::default()
    };
    Ok(serde_json::to_value(newton_solve(&program, &a.at, &cfg)?).expect("serializable"))
}

fn ode_command(a: &OdeArgs, requested: Option<Format>) -> Result<(String, i32)> {
    let field = VectorField::from_program(read_program(&a.field)?)?;
    let dim = field.input_dim();
    let x0 = a.at.clone().unwrap_or_else(|| vec![0.0; dim]);
    finite("at", &x0)?;
    let how = if a.exact { InverseStep::ExactSolve } else { InverseStep::FirstOrder };
    let mode = a.mode.mode();
    let v = match (&a.vector, mode) {
        (Some(v), _) => v.clone(),
        (None, None) => vec![0.0; dim],
        (None, Some(m)) => return Err(CliError::Usage(format!("`--mode {}` needs `--vec`", m.cli_name()))),
    };
    finite("vec", &v)?;
    let dt = match (a.dt, &a.dts) {
        (Some(dt), _) => dt,
        (None, Some(dts)) if !dts.is_empty() => dts[0],
        _ => return Err(CliError::Usage("`ode` needs `--dt` or `--dts`".to_string())),
    };
    let problem = OdeProblem::new(field, a.t0, a.t1, dt, x0)?;

    let Some(dts) = &a.dts else {
        let result = match mode {
            None => ode::final_state(&problem)?,
            Some(m) => ode::ode_mode(&problem, m, &v, how)?,
        };
        let out = match requested.unwrap_or(Format::Json) {
            Format::Json => json_line(&json!({ "result": result })),
            Format::Csv => vector_csv(&result),
        };
        return Ok((out, 0));
    };
    let quantity = mode.map_or(OdeQuantity::Primal, OdeQuantity::Derivative);
    let report = convergence_report(&problem, quantity, &v, dts, a.reference.clone(), how)?;
    let out = match requested.unwrap_or(Format::Csv) {
        Format::Json => json_line(&report),
        Format::Csv => csv_table(
            &["dt", "error", "order"],
            report
                .rows
                .iter()
                .map(|row| vec![number(row.dt), number(row.error), row.order.map(number).unwrap_or_default()]),
        ),
    };
    Ok((out, 0))
}

#[derive(Serialize)]
#[serde(untagged)]
enum Section<T> {
    Report(T),
    Failed { error: Value },
}

fn check(a: &CheckArgs, stderr: &mut String) -> Result<(Value, bool)> {
    let program = read_program(&a.program)?;
    let _ = writeln!(stderr, "seed: {}", a.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let x = match &a.at {
        Some(x) => x.clone(),
        None => (0..program.input_dim()).map(|_| rng.gen_range(0.5..=1.5)).collect(),
    };
    finite("at", &x)?;
    let modes = compare_modes(&program, &x, a.trials, &mut rng);
    let mut passed = modes.passed;

    let invariants = match invariant_report(&program, &x, a.trials, &mut rng) {
        Ok(r) => {
            passed &= r.passed;
            Section::Report(r)
        }
        Err(e) => {
            passed &= modes.oracle_singular && modes.singular_consistent;
            Section::Failed {
                error: CliError::Core(e).to_json()["error"].clone(),
            }
        }
    };
    let sparsity = match &program {
        Program::Trace(t) => match structural_sparsity(t, &x, &mut rng) {
            Ok(r) => {
                passed &= r.passed();
                Some(Section::Report(r))
            }
            Err(e) => {
                passed = false;
                Some(Section::Failed {
                    error: CliError::Core(e).to_json()["error"].clone(),
                })
            }
        },
        Program::Dag(_) => None,
    };
    let fd = finite_difference_discrepancy(&program, &x).ok();
    let report = json!({
        "seed": a.seed,
        "x": x,
        "modes": modes,
        "invariants": invariants,
        "sparsity": sparsity,
        "finite_difference_discrepancy": fd,
        "passed": passed,
    });
    Ok((report, passed))
}
