//! Command-line driver. The `exactcond` binary forwards to [`main_with`].

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::cond::{probe_priors, StateResult};
use crate::denot::denote;
use crate::eqnf::{alg_equiv_tol, normalize_closed_tol, normalize_effect_tol, to_alg};
use crate::error::{Error, Result};
use crate::finprob::{self, normalize_dist, FinProgram, Mode, Rat};
use crate::gauss::{fmt_num, GaussState};
use crate::lang::{parse_with_inputs, typecheck, Ctx, Term, Ty};
use crate::numlin::DEFAULT_TOL;
use crate::opsem::{run_with, RunOptions};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_BOTTOM: i32 = 2;
pub const EXIT_DISTINGUISHED: i32 = 3;

pub const TOL_ENV: &str = "GAUSS_COND_TOL";

#[derive(Parser, Debug)]
#[command(name = "exactcond", version, about = "Exact conditioning for Gaussian and finite programs")]
pub struct Cli {
    /// Relative tolerance for float comparisons (default 1e-8, or $GAUSS_COND_TOL).
    #[arg(long, global = true)]
    pub tol: Option<f64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Run a closed `.gauss` program and print its posterior as JSON.
    Run {
        file: PathBuf,
        /// Evaluate through the denotational semantics.
        #[arg(long, conflicts_with = "both")]
        denot: bool,
        /// Evaluate both ways and check that they agree.
        #[arg(long)]
        both: bool,
        /// Print one JSON line per reduction step before the report.
        #[arg(long)]
        trace: bool,
    },
    /// Decide whether two programs are contextually equivalent.
    Equiv {
        first: PathBuf,
        second: PathBuf,
        /// Semantics for `.fin` programs.
        #[arg(long, value_enum, default_value_t = FinMode::Psl)]
        mode: FinMode,
        /// Decision procedure for `.gauss` programs.
        #[arg(long, value_enum, default_value_t = Method::Canonical)]
        method: Method,
        /// Seed for the probe priors of `--method probe`.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Print the hoisted form and normal form of a `.gauss` program.
    Normalize { file: PathBuf },
    /// Random walk with exact observations, written as CSV `i,mean,variance`.
    Walk {
        /// Number of points y[0], ..., y[n-1].
        #[arg(long, default_value_t = 100)]
        n: usize,
        /// Observation `INDEX=VALUE`; repeatable.
        #[arg(long = "obs", value_parser = parse_obs)]
        obs: Vec<(usize, f64)>,
        /// Condition right after each observed point instead of at the end.
        #[arg(long)]
        interleaved: bool,
        /// Output path; standard output if omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a `.fin` program exactly and print its (sub)distributions as JSON.
    FinRun {
        file: PathBuf,
        #[arg(long, value_enum, default_value_t = FinMode::P)]
        mode: FinMode,
    },
    /// Equivalence of two `.fin` programs.
    FinEquiv {
        first: PathBuf,
        second: PathBuf,
        #[arg(long, value_enum, default_value_t = FinMode::Psl)]
        mode: FinMode,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum FinMode {
    /// Straight-line programs, equivalence up to a positive scalar.
    Psl,
    /// Branching programs, exact equality.
    P,
}

impl From<FinMode> for Mode {
    fn from(m: FinMode) -> Mode {
        match m {
            FinMode::Psl => Mode::Psl,
            FinMode::P => Mode::P,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Method {
    /// Canonical forms of the denoted channels.
    Canonical,
    /// Normal forms of the equational theory.
    Algebraic,
    /// Canonical forms, cross-checked against a battery of input priors.
    Probe,
}

fn parse_obs(s: &str) -> std::result::Result<(usize, f64), String> {
    let (i, v) = s.split_once('=').ok_or("expected INDEX=VALUE")?;
    let i = i.trim().parse().map_err(|_| format!("bad index `{i}`"))?;
    let v: f64 = v.trim().parse().map_err(|_| format!("bad value `{v}`"))?;
    if !v.is_finite() {
        return Err(format!("value `{v}` is not finite"));
    }
    Ok((i, v))
}

/// Tolerance from the flag, then the environment, then the default.
pub fn resolve_tol(flag: Option<f64>) -> Result<f64> {
    let tol = match flag {
        Some(t) => t,
        None => match std::env::var(TOL_ENV) {
            Ok(s) => s.trim().parse().map_err(|_| Error::Invalid(format!("{TOL_ENV}={s} is not a number")))?,
            Err(_) => DEFAULT_TOL,
        },
    };
    if !(tol.is_finite() && tol > 0.0) {
        return Err(Error::Invalid(format!("tolerance {tol} must be positive")));
    }
    Ok(tol)
}

/// Parses arguments (including the program name) and runs; returns the
/// exit code. Reports go to `out`, diagnostics to standard error.
pub fn main_with<I, S>(args: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_ERROR } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli, out) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_ERROR
        }
    }
}

pub fn execute(cli: &Cli, out: &mut dyn Write) -> Result<i32> {
    let tol = resolve_tol(cli.tol)?;
    match &cli.command {
        Command::Run { file, denot, both, trace } => {
            let route = if *both {
                Route::Both
            } else if *denot {
                Route::Denotational
            } else {
                Route::Operational
            };
            cmd_run(file, route, *trace, tol, out)
        }
        Command::Equiv { first, second, mode, method, seed } => {
            if is_fin(first) || is_fin(second) {
                cmd_fin_equiv(first, second, (*mode).into(), out)
            } else {
                cmd_equiv(first, second, *method, *seed, tol, out)
            }
        }
        Command::Normalize { file } => cmd_normalize(file, tol, out),
        Command::Walk { n, obs, interleaved, out: path } => {
            let obs: BTreeMap<usize, f64> = obs.iter().cloned().collect();
            let rows = walk_posterior(*n, &obs, *interleaved, tol)?;
            let csv = walk_csv(&rows);
            match path {
                Some(p) => std::fs::write(p, csv).map_err(|e| io_error(p, e))?,
                None => out.write_all(csv.as_bytes()).map_err(|e| Error::Invalid(e.to_string()))?,
            }
            Ok(EXIT_OK)
        }
        Command::FinRun { file, mode } => cmd_fin_run(file, (*mode).into(), out),
        Command::FinEquiv { first, second, mode } => cmd_fin_equiv(first, second, (*mode).into(), out),
    }
}

fn is_fin(p: &Path) -> bool {
    p.extension().is_some_and(|e| e == "fin")
}

fn io_error(p: &Path, e: std::io::Error) -> Error {
    Error::Invalid(format!("{}: {e}", p.display()))
}

fn read(p: &Path) -> Result<String> {
    std::fs::read_to_string(p).map_err(|e| io_error(p, e))
}

fn emit(out: &mut dyn Write, line: &str) -> Result<()> {
    writeln!(out, "{line}").map_err(|e| Error::Invalid(e.to_string()))
}

pub fn load_gauss(p: &Path) -> Result<(Ctx, Term)> {
    Ok(parse_with_inputs(&read(p)?)?)
}

pub fn load_fin(p: &Path) -> Result<FinProgram> {
    finprob::parse_program(&read(p)?)
}

// ---------------------------------------------------------------------------
// run

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Route {
    Operational,
    Denotational,
    Both,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Posterior,
    Bottom,
    Error,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunReport {
    pub status: Status,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cov: Option<Vec<Vec<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl RunReport {
    fn of(result: &StateResult) -> RunReport {
        match result {
            StateResult::Posterior(s) => RunReport {
                status: Status::Posterior,
                mean: Some(s.mean().iter().map(|v| clean(*v)).collect()),
                cov: Some(s.cov().as_matrix().row_iter().map(|r| r.iter().map(|v| clean(*v)).collect()).collect()),
                steps: None,
                error: None,
            },
            StateResult::Bottom => {
                RunReport { status: Status::Bottom, mean: None, cov: None, steps: None, error: None }
            }
        }
    }

    fn error(msg: String) -> RunReport {
        RunReport { status: Status::Error, mean: None, cov: None, steps: None, error: Some(msg) }
    }

    pub fn exit_code(&self) -> i32 {
        match self.status {
            Status::Posterior => EXIT_OK,
            Status::Bottom => EXIT_BOTTOM,
            Status::Error => EXIT_ERROR,
        }
    }
}

/// Rounds away representation noise so reports are stable across routes.
fn clean(v: f64) -> f64 {
    let r: f64 = fmt_num(v).parse().expect("formatted number");
    if r == 0.0 {
        0.0
    } else {
        r
    }
}

/// Evaluates a closed program by the chosen route. `Both` fails if the
/// routes disagree.
pub fn evaluate(t: &Term, route: Route, trace: bool, tol: f64) -> Result<(StateResult, Option<usize>, Vec<String>)> {
    let mut lines = Vec::new();
    let mut steps = None;
    let op = if route != Route::Denotational {
        let r = run_with(t, &RunOptions { tol, trace })?;
        for s in &r.trace {
            lines.push(serde_json::to_string(s).expect("serializable"));
        }
        steps = Some(r.steps);
        Some(match r.observable()? {
            Some(s) => StateResult::Posterior(s),
            None => StateResult::Bottom,
        })
    } else {
        None
    };
    let den = if route != Route::Operational {
        Some(denote(&Ctx::new(), t)?.channel.eval_state_tol(tol)?)
    } else {
        None
    };
    let result = match (op, den) {
        (Some(a), Some(b)) => {
            if !a.approx_eq(&b, tol) {
                return Err(Error::Invalid(format!(
                    "operational result {} disagrees with denotational result {}",
                    describe(&a),
                    describe(&b)
                )));
            }
            a
        }
        (Some(a), None) | (None, Some(a)) => a,
        (None, None) => unreachable!("some route runs"),
    };
    Ok((result, steps, lines))
}

fn describe(r: &StateResult) -> String {
    match r {
        StateResult::Posterior(s) => s.to_string(),
        StateResult::Bottom => "⊥".into(),
    }
}

pub fn cmd_run(file: &Path, route: Route, trace: bool, tol: f64, out: &mut dyn Write) -> Result<i32> {
    let report = match run_report(file, route, trace, tol) {
        Ok((report, lines)) => {
            for l in lines {
                emit(out, &l)?;
            }
            report
        }
        Err(e) => {
            eprintln!("error: {e}");
            RunReport::error(e.to_string())
        }
    };
    emit(out, &serde_json::to_string(&report).expect("serializable"))?;
    Ok(report.exit_code())
}

fn run_report(file: &Path, route: Route, trace: bool, tol: f64) -> Result<(RunReport, Vec<String>)> {
    let (ctx, t) = load_gauss(file)?;
    if !ctx.0.is_empty() {
        return Err(Error::Invalid("`run` needs a closed program (no inputs)".into()));
    }
    let (result, steps, lines) = evaluate(&t, route, trace, tol)?;
    let mut report = RunReport::of(&result);
    report.steps = steps;
    Ok((report, lines))
}

// ---------------------------------------------------------------------------
// equiv / normalize

fn load_pair(first: &Path, second: &Path) -> Result<(Ctx, Term, Term, Ty)> {
    let (c1, t1) = load_gauss(first)?;
    let (c2, t2) = load_gauss(second)?;
    let d1: Vec<&Ty> = c1.0.iter().map(|(_, t)| t).collect();
    let d2: Vec<&Ty> = c2.0.iter().map(|(_, t)| t).collect();
    if d1 != d2 {
        return Err(Error::Type("the programs have different inputs".into()));
    }
    let ty1 = typecheck(&c1, &t1)?;
    let ty2 = typecheck(&c2, &t2)?;
    if ty1 != ty2 {
        return Err(Error::Type(format!("the programs have types {ty1} and {ty2}")));
    }
    // Rebind the second program's input names from the first's, through
    // fresh names so that no binding captures another.
    let names1: Vec<&String> = c1.0.iter().map(|(x, _)| x).collect();
    let names2: Vec<&String> = c2.0.iter().map(|(x, _)| x).collect();
    let t2 = if names1 == names2 {
        t2
    } else {
        let fresh: Vec<String> = (0..names1.len()).map(|i| format!("__in{i}")).collect();
        let inner = names2.iter().zip(&fresh).rev().fold(t2, |t, (b, f)| Term::let_(b, Term::var(f), t));
        names1.iter().zip(&fresh).rev().fold(inner, |t, (a, f)| Term::let_(f, Term::var(a), t))
    };
    Ok((c1, t1, t2, ty1))
}

pub fn cmd_equiv(first: &Path, second: &Path, method: Method, seed: u64, tol: f64, out: &mut dyn Write) -> Result<i32> {
    let (ctx, t1, t2, _) = load_pair(first, second)?;
    let c1 = denote(&ctx, &t1)?.channel;
    let c2 = denote(&ctx, &t2)?.channel;
    let verdict = match method {
        Method::Canonical => c1.equiv_tol(&c2, tol)?,
        Method::Algebraic => alg_equiv_tol(&ctx, &t1, &t2, tol)?,
        Method::Probe => {
            let canonical = c1.equiv_tol(&c2, tol)?;
            let probed = c1.probe_equiv_tol(&c2, &probe_priors(ctx.dim(), seed), tol)?;
            if canonical != probed {
                return Err(Error::Invalid(format!(
                    "canonical forms say {canonical}, probes say {probed}"
                )));
            }
            canonical
        }
    };
    emit(out, if verdict { "EQUIVALENT" } else { "DISTINGUISHED" })?;
    emit(out, &format!("first: {}", c1.canonicalize_tol(tol)))?;
    emit(out, &format!("second: {}", c2.canonicalize_tol(tol)))?;
    Ok(if verdict { EXIT_OK } else { EXIT_DISTINGUISHED })
}

pub fn normal_form_text(ctx: &Ctx, t: &Term, tol: f64) -> Result<String> {
    let ty = typecheck(ctx, t)?;
    let alg = to_alg(ctx, t)?;
    let mut s = String::new();
    let inputs: Vec<String> = ctx.0.iter().map(|(x, ty)| format!("{x} : {ty}")).collect();
    let _ = writeln!(s, "inputs: {}", if inputs.is_empty() { "none".into() } else { inputs.join(", ") });
    let _ = writeln!(s, "type: {ty}");
    let _ = writeln!(s, "hoisted: {alg}");
    if ctx.dim() == 0 {
        let _ = write!(s, "{}", normalize_closed_tol(&alg, tol)?);
    } else if ty.dim() == 0 {
        let _ = write!(s, "{}", normalize_effect_tol(&alg, tol)?);
    } else {
        let _ = write!(s, "channel {}", denote(ctx, t)?.channel.canonicalize_tol(tol));
    }
    Ok(s)
}

pub fn cmd_normalize(file: &Path, tol: f64, out: &mut dyn Write) -> Result<i32> {
    let (ctx, t) = load_gauss(file)?;
    emit(out, &normal_form_text(&ctx, &t, tol)?)?;
    Ok(EXIT_OK)
}

// ---------------------------------------------------------------------------
// walk

/// `y0 = 0; y[i] = y[i-1] + normal()` for `i < n`, conditions `y[j] =:= v`,
/// returning all points as a tuple. With `interleaved`, each condition comes
/// right after its point; otherwise all conditions come at the end.
pub fn random_walk_term(n: usize, obs: &BTreeMap<usize, f64>, interleaved: bool) -> Result<Term> {
    if n == 0 {
        return Err(Error::Invalid("a walk needs at least one point".into()));
    }
    if let Some((&j, _)) = obs.iter().find(|(&j, _)| j == 0 || j >= n) {
        return Err(Error::IndexOutOfRange { index: j, dim: n });
    }
    let name = |i: usize| format!("y{i}");
    let observe = |j: usize| Term::cond(Term::var(&name(j)), Term::Const(obs[&j]));
    let mut body = Term::tuple((0..n).map(|i| Term::var(&name(i))).collect());
    if !interleaved {
        for &j in obs.keys().rev() {
            body = Term::seq(observe(j), body);
        }
    }
    for i in (1..n).rev() {
        if interleaved && obs.contains_key(&i) {
            body = Term::seq(observe(i), body);
        }
        body = Term::let_(&name(i), Term::add(Term::var(&name(i - 1)), Term::Normal), body);
    }
    Ok(Term::let_(&name(0), Term::Const(0.0), body))
}

#[derive(Clone, Debug, PartialEq)]
pub struct WalkRow {
    pub i: usize,
    pub mean: f64,
    pub variance: f64,
}

/// Posterior marginals of the walk, evaluated operationally.
pub fn walk_posterior(n: usize, obs: &BTreeMap<usize, f64>, interleaved: bool, tol: f64) -> Result<Vec<WalkRow>> {
    let t = random_walk_term(n, obs, interleaved)?;
    let run = run_with(&t, &RunOptions { tol, trace: false })?;
    let post: GaussState = run
        .observable()?
        .ok_or_else(|| Error::Invalid("the observations are inconsistent".into()))?;
    Ok((0..n)
        .map(|i| WalkRow { i, mean: post.mean()[i], variance: post.cov().as_matrix()[(i, i)] })
        .collect())
}

pub fn walk_csv(rows: &[WalkRow]) -> String {
    let mut s = String::from("i,mean,variance\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{}", r.i, fmt_num(r.mean), fmt_num(r.variance.max(0.0)));
    }
    s
}

// ---------------------------------------------------------------------------
// finite programs

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Mass {
    pub value: String,
    pub mass: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FinColumn {
    pub input: String,
    pub total: String,
    pub masses: Vec<Mass>,
    /// Absent when the column has no mass (normalization fails).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub normalized: Option<Vec<Mass>>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FinReport {
    pub status: Status,
    #[serde(rename = "type")]
    pub ty: String,
    pub columns: Vec<FinColumn>,
}

fn masses(d: &finprob::SubDist) -> Vec<Mass> {
    d.space().iter().zip(d.masses()).map(|(v, m)| Mass { value: v.to_string(), mass: m.to_string() }).collect()
}

pub fn fin_report(p: &FinProgram, mode: Mode) -> Result<FinReport> {
    let ty = p.ty()?;
    let k = p.eval(mode)?;
    let columns: Vec<FinColumn> = (0..k.dom().len())
        .map(|x| {
            let d = k.column(x);
            let total: Rat = d.total();
            FinColumn {
                input: k.dom()[x].to_string(),
                total: total.to_string(),
                masses: masses(&d),
                normalized: (!d.is_zero()).then(|| masses(&normalize_dist(&d))),
            }
        })
        .collect();
    let status = if columns.iter().all(|c| c.normalized.is_none()) { Status::Bottom } else { Status::Posterior };
    Ok(FinReport { status, ty: ty.to_string(), columns })
}

pub fn cmd_fin_run(file: &Path, mode: Mode, out: &mut dyn Write) -> Result<i32> {
    let report = fin_report(&load_fin(file)?, mode)?;
    emit(out, &serde_json::to_string(&report).expect("serializable"))?;
    Ok(if report.status == Status::Bottom { EXIT_BOTTOM } else { EXIT_OK })
}

pub fn cmd_fin_equiv(first: &Path, second: &Path, mode: Mode, out: &mut dyn Write) -> Result<i32> {
    let p1 = load_fin(first)?;
    let p2 = load_fin(second)?;
    let (t1, t2) = (p1.ty()?, p2.ty()?);
    if t1 != t2 {
        return Err(Error::Type(format!("the programs have types {t1} and {t2}")));
    }
    let in1: Vec<_> = p1.inputs.iter().map(|(_, t)| t).collect();
    let in2: Vec<_> = p2.inputs.iter().map(|(_, t)| t).collect();
    if in1 != in2 {
        return Err(Error::Type("the programs have different inputs".into()));
    }
    let k1 = p1.eval(mode)?;
    let k2 = p2.eval(mode)?;
    if k1.dom() != k2.dom() || k1.cod() != k2.cod() {
        return Err(Error::Type("the programs declare different outcome spaces".into()));
    }
    let verdict = match mode {
        Mode::Psl => finprob::proportional(&k1, &k2)?,
        Mode::P => k1 == k2,
    };
    emit(out, if verdict { "EQUIVALENT" } else { "DISTINGUISHED" })?;
    emit(out, &format!("first:\n{k1}"))?;
    emit(out, &format!("second:\n{k2}"))?;
    Ok(if verdict { EXIT_OK } else { EXIT_DISTINGUISHED })
}
