//! Command-line front end: `solve`, `check`, `reduce` and `gadget` over
//! problem files (see [`schema`]), with canonical run reports (see
//! [`report`]).
//!
//! Exit codes: 0 solved or accepted, 1 unsolved or runtime error, 2 rejected,
//! 3 violation certificate, 4 emptiness certificate, 64 usage, 65 schema.

pub mod report;
pub mod schema;

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Instant;

use clap::{Parser, Subcommand};
use nalgebra::DMatrix;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::circuits::Operator;
use crate::ellipsoid;
use crate::error::{Error, Result};
use crate::games::{
    check_sv_equilibrium, nash_to_vi, resilient_to_mvi, verify_resilient, Cnf3,
};
use crate::geometry::{BoxRegion, ConvexBody, Correspondence, Vector};
use crate::mlf::{Leader, MlfGame, RemedialVerdict};
use crate::vi::{
    point_valued, solve_gqvi, solve_vi_extragradient, GQVIProblem, GqviOptions, GqviOutcome, MVIProblem, Problem,
    SolutionCertificate, SolveOutcome, VIProblem, Verdict, ViolationCertificate,
};
use report::{emit_report, Certificate, Format, RunReport, Status};
use schema::{parse_problem, GameInstance, Instance, Kind, ProblemFile, Tolerances};

pub const EXIT_USAGE: i32 = 64;
pub const EXIT_SCHEMA: i32 = 65;

#[derive(Parser, Debug)]
#[command(name = "varineq", version, about = "Solve and certify variational inequalities, games and bilevel games")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Compute a solution and its certificate
    Solve(Flags),
    /// Validate a candidate or a certificate (--candidate)
    Check(Flags),
    /// Write the VI (or, with --t, the coalition MVI) of a game
    Reduce(Flags),
    /// Write the gadget game of a 3-CNF formula
    Gadget(Flags),
}

impl Command {
    pub fn flags(&self) -> &Flags {
        match self {
            Command::Solve(f) | Command::Check(f) | Command::Reduce(f) | Command::Gadget(f) => f,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Command::Solve(_) => "solve",
            Command::Check(_) => "check",
            Command::Reduce(_) => "reduce",
            Command::Gadget(_) => "gadget",
        }
    }
}

#[derive(clap::Args, Clone, Debug, Default)]
pub struct Flags {
    /// Problem file (JSON, or DIMACS for formulas)
    pub problem: PathBuf,
    /// Accuracy; overrides the file's tolerances (default 1e-3)
    #[arg(long)]
    pub beta: Option<f64>,
    /// Emptiness margin (default 1e-4)
    #[arg(long)]
    pub delta: Option<f64>,
    /// Weak-oracle margin applied to every body (default 0)
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub max_iters: Option<usize>,
    /// Verifier grid resolution (default 0.05)
    #[arg(long)]
    pub grid: Option<f64>,
    /// Output path (report for solve/check, problem file for reduce/gadget)
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    pub format: Format,
    /// Candidate or certificate to check: a bare candidate, a certificate, or a report
    #[arg(long)]
    pub candidate: Option<PathBuf>,
    /// Coalition size for resilience
    #[arg(long)]
    pub t: Option<usize>,
    /// Warn about unknown fields instead of failing
    #[arg(long)]
    pub lenient: bool,
    /// Build the three-player gadget
    #[arg(long)]
    pub third_player: bool,
    /// Where reduce/gadget write their run report
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Omit wall time so reports are byte-reproducible
    #[arg(long)]
    pub no_timing: bool,
}

/// Effective settings: flags override the file, which overrides defaults.
#[derive(Clone, Debug)]
pub struct Settings {
    pub tolerances: Tolerances,
    pub seed: u64,
    pub max_iters: Option<usize>,
    pub grid: f64,
    pub t: Option<usize>,
    pub third_player: bool,
    pub timing: bool,
}

impl Settings {
    pub fn new(file: &ProblemFile, flags: &Flags) -> Result<Self> {
        let t = file.tolerances;
        let tolerances = Tolerances {
            beta: flags.beta.unwrap_or(t.beta),
            eps: t.eps,
            delta: flags.delta.unwrap_or(t.delta),
            eta: flags.eta.unwrap_or(t.eta),
        };
        if !(tolerances.beta > 0.0) || !(tolerances.delta > 0.0) || !(tolerances.eta >= 0.0) {
            return Err(Error::invalid("beta and delta must be positive and eta nonnegative"));
        }
        let grid = flags.grid.unwrap_or(0.05);
        if !(grid > 0.0) {
            return Err(Error::invalid("grid resolution must be positive"));
        }
        Ok(Settings {
            tolerances,
            seed: flags.seed,
            max_iters: flags.max_iters,
            grid,
            t: flags.t,
            third_player: flags.third_player,
            timing: !flags.no_timing,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Action {
    Solve,
    Check,
    Reduce,
    Gadget,
}

impl Action {
    fn name(self) -> &'static str {
        match self {
            Action::Solve => "solve",
            Action::Check => "check",
            Action::Reduce => "reduce",
            Action::Gadget => "gadget",
        }
    }
}

/// A report plus, for `reduce` and `gadget`, the produced problem file.
pub struct Outcome {
    pub report: RunReport,
    pub output: Option<ProblemFile>,
}

/// Command kind incompatible with the problem, or a missing input.
#[derive(Debug)]
pub struct Usage(pub String);

pub fn digest(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

struct Counter(Arc<AtomicUsize>);

impl Counter {
    fn new() -> Self {
        Counter(Arc::new(AtomicUsize::new(0)))
    }

    fn get(&self) -> usize {
        self.0.load(Ordering::Relaxed)
    }
}

struct Counting {
    inner: Arc<dyn Operator>,
    calls: Arc<AtomicUsize>,
}

impl Operator for Counting {
    fn input_dim(&self) -> usize {
        self.inner.input_dim()
    }

    fn output_dim(&self) -> usize {
        self.inner.output_dim()
    }

    fn eval(&self, x: &Vector) -> Result<Vector> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        self.inner.eval(x)
    }

    fn jacobian(&self, x: &Vector) -> Result<DMatrix<f64>> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        self.inner.jacobian(x)
    }

    fn lipschitz_bound(&self, region: &BoxRegion) -> f64 {
        self.inner.lipschitz_bound(region)
    }
}

fn counted(op: Arc<dyn Operator>, c: &Counter) -> Arc<dyn Operator> {
    Arc::new(Counting {
        inner: op,
        calls: c.0.clone(),
    })
}

fn counted_corr(corr: &Correspondence, c: &Counter) -> Result<Correspondence> {
    let inner = corr.clone();
    let calls = c.0.clone();
    Correspondence::new(
        corr.domain().clone(),
        corr.range().clone(),
        corr.lipschitz(),
        Arc::new(move |x: &Vector| {
            calls.fetch_add(1, Ordering::Relaxed);
            inner.at(x)
        }),
    )
}

/// Runs one command. `candidate` is required for `check`.
pub fn run(action: Action, file: &ProblemFile, input_digest: &str, settings: &Settings, candidate: Option<&Value>) -> Result<std::result::Result<Outcome, Usage>> {
    let start = Instant::now();
    let tol = settings.tolerances;
    let instance = file.instance(tol.beta, tol.eta)?;
    let mut calls = BTreeMap::new();
    let mut iterations = None;
    let mut output = None;
    let (status, certificate) = match action {
        Action::Solve => match solve(instance, settings, &mut calls, &mut iterations)? {
            Ok(x) => x,
            Err(u) => return Ok(Err(u)),
        },
        Action::Check => {
            let Some(c) = candidate else {
                return Ok(Err(Usage("check needs --candidate".into())));
            };
            let cert = match read_candidate(file.kind, &instance, c) {
                Ok(cert) => cert,
                Err(Error::Json(e)) => return Err(Error::schema("", format!("candidate: {e}"))),
                Err(e) => return Err(e),
            };
            match check(&instance, cert, settings)? {
                Ok(x) => x,
                Err(u) => return Ok(Err(u)),
            }
        }
        Action::Reduce => {
            let produced = match (&instance, settings.t) {
                (Instance::Game(GameInstance::Concave(g)), None) => schema::vi_file(&nash_to_vi(g, tol.beta)?, tol),
                (Instance::Game(GameInstance::Concave(g)), Some(t)) => schema::mvi_file(&resilient_to_mvi(g, t, tol.beta)?, tol),
                _ => return Ok(Err(Usage(format!("reduce needs a concave game, got {}", file.kind.name())))),
            };
            let produced = produced.map_err(|e| Error::invalid(format!("{e}; reduce writes affine operators and needs quadratic utilities")))?;
            let bytes = report::canonical_json(&produced.to_json());
            let cert = Certificate::Reduction {
                kind: produced.kind,
                output_digest: digest(bytes.as_bytes()),
            };
            output = Some(produced);
            (Status::Written, cert)
        }
        Action::Gadget => {
            let Instance::Cnf(phi) = &instance else {
                return Ok(Err(Usage(format!("gadget needs a cnf file, got {}", file.kind.name()))));
            };
            let produced = schema::sv_file(phi, settings.third_player, tol)?;
            let bytes = report::canonical_json(&produced.to_json());
            let cert = Certificate::Reduction {
                kind: Kind::Game,
                output_digest: digest(bytes.as_bytes()),
            };
            output = Some(produced);
            (Status::Written, cert)
        }
    };
    let report = RunReport {
        command: action.name().into(),
        kind: file.kind,
        input_digest: input_digest.into(),
        status,
        certificate,
        iterations,
        oracle_calls: calls,
        wall_time_ms: settings.timing.then(|| start.elapsed().as_secs_f64() * 1e3),
        seed: settings.seed,
        tolerances: tol,
        warnings: vec![],
    };
    Ok(Ok(Outcome { report, output }))
}

type Solved = std::result::Result<(Status, Certificate), Usage>;

fn emptiness(which: &str, x: &Vector, e: Error) -> Result<(Status, Certificate)> {
    match e {
        Error::Empty(c) => Ok((
            Status::Empty,
            Certificate::Violation(ViolationCertificate::Emptiness {
                which: which.into(),
                x: x.iter().copied().collect(),
                certificate: *c,
            }),
        )),
        other => Err(other),
    }
}

/// `Ok(None)` when `body` is nonempty at margin `delta`.
fn empty_at(body: &ConvexBody, tol: &Tolerances) -> Result<Option<(Status, Certificate)>> {
    let center = body.bbox().center();
    if body.projection(&center).is_some() {
        return Ok(None);
    }
    match ellipsoid::project_with_delta(body, &center, tol.eps, tol.delta) {
        Ok(_) => Ok(None),
        Err(e) => emptiness("R", &center, e).map(Some),
    }
}

fn solve(instance: Instance, s: &Settings, calls: &mut BTreeMap<String, usize>, iterations: &mut Option<usize>) -> Result<Solved> {
    let tol = s.tolerances;
    Ok(Ok(match instance {
        Instance::Vi(p) => solve_vi(p, s, calls, iterations)?,
        Instance::Qvi(p) => {
            let c = Counter::new();
            let op = counted(p.operator.clone(), &c);
            let g = GQVIProblem::new(point_valued(op, p.constraint.domain().clone())?, p.constraint.clone(), tol.beta, 0.0)?;
            let out = gqvi(&g, s)?;
            calls.insert("F".into(), c.get());
            match out {
                (Status::Solved, Certificate::Solution(cert)) => {
                    if Problem::Qvi(p).check_solution(&cert)?.is_accept() {
                        (Status::Solved, Certificate::Solution(cert))
                    } else {
                        (Status::Unsolved, Certificate::Solution(cert))
                    }
                }
                other => other,
            }
        }
        Instance::Gqvi(p) => {
            let (cf, cr) = (Counter::new(), Counter::new());
            let g = GQVIProblem::new(counted_corr(&p.operator, &cf)?, counted_corr(&p.constraint, &cr)?, p.beta, p.gamma)?;
            let out = gqvi(&g, s)?;
            calls.insert("F".into(), cf.get());
            calls.insert("R".into(), cr.get());
            out
        }
        Instance::Mvi(p) => solve_mvi(p, s, calls, iterations)?,
        Instance::Game(GameInstance::Concave(g)) => {
            let (status, cert) = solve_vi(nash_to_vi(&g, tol.beta)?, s, calls, iterations)?;
            match (s.t, status, cert) {
                (Some(t), Status::Solved, Certificate::Solution(c)) => {
                    let verdict = Problem::Mvi(resilient_to_mvi(&g, t, tol.beta)?).check_solution(&c)?;
                    let status = if verdict.is_accept() { Status::Accepted } else { Status::Rejected };
                    (status, Certificate::Resilience { candidate: c, t, verdict })
                }
                (_, status, cert) => (status, cert),
            }
        }
        Instance::Game(GameInstance::Sv { formula, game }) => match formula.brute_force() {
            Some(assignment) => {
                let verdict = check_sv_equilibrium(&game, &formula, &assignment)?;
                let status = if verdict.is_accept() { Status::Solved } else { Status::Unsolved };
                (status, Certificate::Gadget { assignment, verdict })
            }
            None => (Status::Unsolved, unsat(&formula)),
        },
        Instance::Mlf(g) => solve_mlf(&g, s, iterations)?,
        Instance::Cnf(phi) => match phi.brute_force() {
            Some(assignment) => (Status::Solved, Certificate::Assignment { assignment, satisfied: true }),
            None => (Status::Rejected, unsat(&phi)),
        },
    }))
}

fn unsat(phi: &Cnf3) -> Certificate {
    Certificate::Unsatisfiable {
        variables: phi.n,
        clauses: phi.clauses.len(),
    }
}

fn solve_vi(p: VIProblem, s: &Settings, calls: &mut BTreeMap<String, usize>, iterations: &mut Option<usize>) -> Result<(Status, Certificate)> {
    if let Some(e) = empty_at(&p.set, &s.tolerances)? {
        return Ok(e);
    }
    let c = Counter::new();
    let lipschitz = p.operator.lipschitz_bound(p.set.bbox());
    let step = if lipschitz.is_finite() && lipschitz > 0.0 { 0.5 / lipschitz } else { 0.1 };
    let q = VIProblem::new(counted(p.operator.clone(), &c), p.set.clone(), p.beta)?;
    let out = solve_vi_extragradient(&q, p.beta, step, s.max_iters.unwrap_or(20_000));
    calls.insert("F".into(), c.get());
    Ok(match out {
        Ok(SolveOutcome::Solved(cert)) => (Status::Solved, Certificate::Solution(cert)),
        Ok(SolveOutcome::Failure { best, iterations: n }) => {
            *iterations = Some(n);
            (Status::Unsolved, Certificate::Solution(best))
        }
        Err(e) => emptiness("R", &p.set.bbox().center(), e)?,
    })
}

fn gqvi(p: &GQVIProblem, s: &Settings) -> Result<(Status, Certificate)> {
    let mut opts = GqviOptions::default();
    if let Some(n) = s.max_iters {
        opts.max_iters = n;
    }
    match solve_gqvi(p, &opts) {
        Ok(GqviOutcome::Solved(c)) => Ok((Status::Solved, Certificate::Solution(c))),
        Ok(GqviOutcome::Violation(v)) => {
            let status = if matches!(v, ViolationCertificate::Emptiness { .. }) { Status::Empty } else { Status::Violation };
            Ok((status, Certificate::Violation(v)))
        }
        Err(Error::NotConverged(_)) => {
            let x = p.constraint.domain().center();
            Ok((Status::Unsolved, Certificate::Solution(SolutionCertificate::at_point(&x))))
        }
        Err(e) => Err(e),
    }
}

/// Grid search over the set's bounding box, projected onto the set.
fn solve_mvi(p: MVIProblem, s: &Settings, calls: &mut BTreeMap<String, usize>, iterations: &mut Option<usize>) -> Result<(Status, Certificate)> {
    if let Some(e) = empty_at(&p.set, &s.tolerances)? {
        return Ok(e);
    }
    let c = Counter::new();
    let columns: Vec<Arc<dyn Operator>> = p.columns.iter().map(|op| counted(op.clone(), &c)).collect();
    let q = Problem::Mvi(MVIProblem::new(columns, p.set.clone(), p.beta)?);
    let mut candidates = p.set.vertices().unwrap_or_default();
    candidates.extend(grid_points(p.set.bbox(), s.grid, 20_000)?);
    let limit = s.max_iters.unwrap_or(usize::MAX);
    let mut best: Option<(f64, SolutionCertificate)> = None;
    let mut tried = 0;
    for z in candidates.into_iter().take(limit) {
        tried += 1;
        let x = p.set.try_projection(&z)?;
        let residual = q.residual(&x, None)?;
        let worst = residual.iter().copied().fold(f64::INFINITY, f64::min);
        let cert = SolutionCertificate {
            residual,
            ..SolutionCertificate::at_point(&x)
        };
        if best.as_ref().is_none_or(|(b, _)| worst > *b) {
            best = Some((worst, cert));
        }
        if worst >= -p.beta {
            break;
        }
    }
    calls.insert("F".into(), c.get());
    *iterations = Some(tried);
    let (worst, cert) = best.ok_or_else(|| Error::invalid("no candidates"))?;
    let status = if worst >= -p.beta { Status::Solved } else { Status::Unsolved };
    Ok((status, Certificate::Solution(cert)))
}

fn grid_points(region: &BoxRegion, step: f64, cap: usize) -> Result<Vec<Vector>> {
    let counts: Vec<usize> = (0..region.dim())
        .map(|j| ((region.hi()[j] - region.lo()[j]) / step).floor() as usize + 1)
        .collect();
    let total = counts.iter().try_fold(1usize, |acc, &c| acc.checked_mul(c)).unwrap_or(usize::MAX);
    if total > cap {
        return Err(Error::invalid(format!("grid of {total} points exceeds {cap}; raise --grid")));
    }
    let mut out = Vec::with_capacity(total);
    let mut idx = vec![0usize; region.dim()];
    for _ in 0..total {
        out.push(Vector::from_fn(region.dim(), |j, _| (region.lo()[j] + idx[j] as f64 * step).min(region.hi()[j])));
        for j in 0..idx.len() {
            idx[j] += 1;
            if idx[j] < counts[j] {
                break;
            }
            idx[j] = 0;
        }
    }
    Ok(out)
}

/// Alternating surrogate best responses, then the remedial check.
fn solve_mlf(g: &MlfGame, s: &Settings, iterations: &mut Option<usize>) -> Result<(Status, Certificate)> {
    let tol = s.tolerances;
    let inner = tol.eps.min(tol.beta / 4.0);
    let mut x_i = g.leader_set(Leader::I).bbox().center();
    let mut x_ii = g.leader_set(Leader::II).bbox().center();
    let n = g.n();
    let rounds = s.max_iters.unwrap_or(50);
    let mut done = 0;
    for _ in 0..rounds {
        done += 1;
        let (z, _) = match g.leader_surrogate(Leader::I, &x_ii)?.solve(inner) {
            Ok(v) => v,
            Err(e) => return emptiness("G_I", &x_ii, e),
        };
        let next_i = z.rows(0, x_i.len()).into_owned();
        let (z, _) = match g.leader_surrogate(Leader::II, &next_i)?.solve(inner) {
            Ok(v) => v,
            Err(e) => return emptiness("G_II", &next_i, e),
        };
        let next_ii = z.rows(0, x_ii.len()).into_owned();
        let moved = (&next_i - &x_i).amax().max((&next_ii - &x_ii).amax());
        x_i = next_i;
        x_ii = next_ii;
        if moved <= tol.beta / 10.0 {
            break;
        }
    }
    *iterations = Some(done);
    let y = match g.follower_equilibrium(&x_i, &x_ii) {
        Ok(eq) => Vector::from_vec(eq.y),
        Err(_) => {
            let (z, _) = g.leader_surrogate(Leader::I, &x_ii)?.solve(inner)?;
            z.rows(x_i.len(), n).into_owned()
        }
    };
    let verdict = g.check_remedial(&x_i, &y, &x_ii, &y, tol.beta)?;
    let status = if verdict.is_accept() { Status::Solved } else { Status::Unsolved };
    Ok((status, remedial_cert(&x_i, &y, &x_ii, &y, verdict)))
}

fn remedial_cert(x_i: &Vector, y_i: &Vector, x_ii: &Vector, y_ii: &Vector, verdict: RemedialVerdict) -> Certificate {
    let v = |x: &Vector| x.iter().copied().collect::<Vec<f64>>();
    Certificate::Remedial {
        x_i: v(x_i),
        y_i: v(y_i),
        x_ii: v(x_ii),
        y_ii: v(y_ii),
        verdict,
    }
}

/// Interprets a candidate file: a report (its certificate), a tagged
/// certificate, or a bare candidate for the problem kind.
fn read_candidate(kind: Kind, instance: &Instance, v: &Value) -> Result<Certificate> {
    let v = match v.get("certificate") {
        Some(c) if v.get("command").is_some() => c,
        _ => v,
    };
    if v.get("type").is_some() {
        return Ok(serde_json::from_value(v.clone())?);
    }
    let vec = |key: &str| -> Result<Vec<f64>> {
        let x = v.get(key).ok_or_else(|| Error::schema(format!("/{key}"), "missing required field"))?;
        Ok(serde_json::from_value(x.clone())?)
    };
    Ok(match (kind, instance) {
        (Kind::Vi | Kind::Qvi | Kind::Gqvi | Kind::Mvi, _) => {
            if v.get("kind").is_some() {
                Certificate::Violation(serde_json::from_value(v.clone())?)
            } else {
                Certificate::Solution(serde_json::from_value(v.clone())?)
            }
        }
        (Kind::Game, Instance::Game(GameInstance::Concave(_))) => {
            if v.get("x").is_some() {
                Certificate::Solution(serde_json::from_value(v.clone())?)
            } else {
                Certificate::Solution(SolutionCertificate::at_point(&Vector::from_vec(vec("profile")?)))
            }
        }
        (Kind::Mlf, _) => Certificate::Remedial {
            x_i: vec("x_i")?,
            y_i: vec("y_i")?,
            x_ii: vec("x_ii")?,
            y_ii: vec("y_ii")?,
            verdict: RemedialVerdict::Infeasible { leader: Leader::I },
        },
        (Kind::Game | Kind::Cnf, _) => {
            let a = v.get("assignment").ok_or_else(|| Error::schema("/assignment", "missing required field"))?;
            let assignment: Vec<bool> = serde_json::from_value(a.clone())?;
            if kind == Kind::Cnf {
                Certificate::Assignment { assignment, satisfied: false }
            } else {
                Certificate::Gadget {
                    assignment,
                    verdict: crate::games::SvVerdict::Unsatisfied { clause: 0 },
                }
            }
        }
    })
}

fn verdict_status(v: &Verdict) -> Status {
    if v.is_accept() {
        Status::Accepted
    } else {
        Status::Rejected
    }
}

fn vi_problem(instance: &Instance, beta: f64) -> Option<Result<Problem>> {
    Some(match instance {
        Instance::Vi(p) => Ok(Problem::Vi(p.clone())),
        Instance::Qvi(p) => Ok(Problem::Qvi(p.clone())),
        Instance::Gqvi(p) => Ok(Problem::Gqvi(p.clone())),
        Instance::Mvi(p) => Ok(Problem::Mvi(p.clone())),
        Instance::Game(GameInstance::Concave(g)) => nash_to_vi(g, beta).map(Problem::Vi),
        _ => return None,
    })
}

/// Recomputes the verdict behind a certificate; stored verdicts are ignored.
fn check(instance: &Instance, cert: Certificate, s: &Settings) -> Result<Solved> {
    let beta = s.tolerances.beta;
    let mismatch = |what: &str| Ok(Err(Usage(format!("{what} certificate does not apply to this problem"))));
    Ok(Ok(match cert {
        Certificate::Solution(c) | Certificate::Checked { candidate: c, .. } => {
            let problem = match vi_problem(instance, beta) {
                Some(p) => p?,
                None => return mismatch("solution"),
            };
            let verdict = problem.check_solution(&c)?;
            (verdict_status(&verdict), Certificate::Checked { candidate: c, verdict })
        }
        Certificate::Violation(v) => {
            let problem = match vi_problem(instance, beta) {
                Some(p) => p?,
                None => return mismatch("violation"),
            };
            let holds = v.verify(&problem)?;
            let status = match (&v, holds) {
                (_, false) => Status::Rejected,
                (ViolationCertificate::Emptiness { .. }, true) => Status::Empty,
                (_, true) => Status::Violation,
            };
            (status, Certificate::Violation(v))
        }
        Certificate::Resilience { candidate, t, .. } => {
            let Instance::Game(GameInstance::Concave(g)) = instance else {
                return mismatch("resilience");
            };
            let verdict = Problem::Mvi(resilient_to_mvi(g, t, beta)?).check_solution(&candidate)?;
            (verdict_status(&verdict), Certificate::Resilience { candidate, t, verdict })
        }
        Certificate::Deviation { profile, t, eps, resolution, .. } => {
            let Instance::Game(GameInstance::Concave(g)) = instance else {
                return mismatch("deviation");
            };
            let verdict = verify_resilient(g, &Vector::from_vec(profile.clone()), t, eps, resolution)?;
            let status = if verdict.is_accept() { Status::Accepted } else { Status::Rejected };
            (status, Certificate::Deviation { profile, t, eps, resolution, verdict })
        }
        Certificate::Remedial { x_i, y_i, x_ii, y_ii, .. } => {
            let Instance::Mlf(g) = instance else {
                return mismatch("remedial");
            };
            let v = |x: &[f64]| Vector::from_column_slice(x);
            let verdict = g.check_remedial(&v(&x_i), &v(&y_i), &v(&x_ii), &v(&y_ii), beta)?;
            let status = if verdict.is_accept() { Status::Accepted } else { Status::Rejected };
            (status, Certificate::Remedial { x_i, y_i, x_ii, y_ii, verdict })
        }
        Certificate::Gadget { assignment, .. } => {
            let Instance::Game(GameInstance::Sv { formula, game }) = instance else {
                return mismatch("gadget");
            };
            let verdict = check_sv_equilibrium(game, formula, &assignment)?;
            let status = if verdict.is_accept() { Status::Accepted } else { Status::Rejected };
            (status, Certificate::Gadget { assignment, verdict })
        }
        Certificate::Assignment { assignment, .. } => {
            let Instance::Cnf(phi) = instance else {
                return mismatch("assignment");
            };
            if assignment.len() != phi.n {
                return Err(Error::schema("/assignment", format!("expected {} values", phi.n)));
            }
            let satisfied = phi.satisfied_by(&assignment);
            let status = if satisfied { Status::Accepted } else { Status::Rejected };
            (status, Certificate::Assignment { assignment, satisfied })
        }
        Certificate::Unsatisfiable { .. } => {
            let phi = match instance {
                Instance::Cnf(phi) | Instance::Game(GameInstance::Sv { formula: phi, .. }) => phi,
                _ => return mismatch("unsatisfiability"),
            };
            let status = if phi.brute_force().is_none() { Status::Accepted } else { Status::Rejected };
            (status, unsat(phi))
        }
        Certificate::Reduction { .. } => return mismatch("reduction"),
    }))
}

/// Re-checks a report's certificate against its problem file. A report
/// re-validates when the recomputed status agrees with the stored one, or,
/// for an unsatisfiability claim, when the claim is confirmed.
pub fn revalidate(file: &ProblemFile, report: &RunReport) -> Result<bool> {
    if report.status == Status::Written {
        return Ok(true);
    }
    let settings = Settings {
        tolerances: report.tolerances,
        seed: report.seed,
        max_iters: None,
        grid: 0.05,
        t: None,
        third_player: false,
        timing: false,
    };
    let instance = file.instance(report.tolerances.beta, report.tolerances.eta)?;
    let (status, _) = match check(&instance, report.certificate.clone(), &settings)? {
        Ok(x) => x,
        Err(Usage(m)) => return Err(Error::invalid(m)),
    };
    if matches!(report.certificate, Certificate::Unsatisfiable { .. }) {
        return Ok(status == Status::Accepted);
    }
    let expected = match report.status {
        Status::Solved | Status::Accepted => Status::Accepted,
        Status::Unsolved | Status::Rejected => Status::Rejected,
        other => other,
    };
    Ok(status == expected)
}

fn exit_for(e: &Error) -> i32 {
    match e {
        Error::Schema { .. } | Error::Json(_) => EXIT_SCHEMA,
        _ => 1,
    }
}

fn write_out(path: Option<&PathBuf>, bytes: &[u8]) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, bytes)?,
        None => std::io::stdout().write_all(bytes)?,
    }
    Ok(())
}

/// Parses arguments, runs the command and writes its outputs; returns the
/// process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let action = match cli.command {
        Command::Solve(_) => Action::Solve,
        Command::Check(_) => Action::Check,
        Command::Reduce(_) => Action::Reduce,
        Command::Gadget(_) => Action::Gadget,
    };
    let flags = cli.command.flags().clone();
    match execute(action, &flags) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_for(&e)
        }
    }
}

fn execute(action: Action, flags: &Flags) -> Result<i32> {
    let bytes = std::fs::read(&flags.problem)?;
    let (file, warnings) = schema::parse_problem(&flags.problem, flags.lenient)?;
    for w in &warnings {
        eprintln!("warning: {w}");
    }
    let settings = Settings::new(&file, flags).map_err(|e| {
        eprintln!("error: {e}");
        e
    });
    let settings = match settings {
        Ok(s) => s,
        Err(_) => return Ok(EXIT_USAGE),
    };
    let candidate = match &flags.candidate {
        Some(p) => {
            let text = std::fs::read(p)?;
            Some(serde_json::from_slice::<Value>(&text).map_err(|e| Error::schema("", format!("candidate: {e}")))?)
        }
        None => None,
    };
    let outcome = match run(action, &file, &digest(&bytes), &settings, candidate.as_ref())? {
        Ok(o) => o,
        Err(Usage(m)) => {
            eprintln!("usage: {m}");
            return Ok(EXIT_USAGE);
        }
    };
    let mut report = outcome.report;
    report.warnings = warnings;
    let rendered = emit_report(&report, flags.format)?;
    match outcome.output {
        Some(produced) => {
            write_out(flags.out.as_ref(), &canonical_write(&produced))?;
            if let Some(p) = &flags.report {
                std::fs::write(p, &rendered)?;
            }
        }
        None => write_out(flags.out.as_ref(), &rendered)?,
    }
    Ok(report.status.exit_code())
}

/// Canonical bytes of a problem file, newline-terminated.
pub fn canonical_write(file: &ProblemFile) -> Vec<u8> {
    let mut text = report::canonical_json(&file.to_json());
    text.push('\n');
    text.into_bytes()
}

/// Convenience for tests and embedding: parse, run and return the report.
pub fn run_file(action: Action, path: &std::path::Path, settings_flags: &Flags, candidate: Option<&Value>) -> Result<std::result::Result<Outcome, Usage>> {
    let bytes = std::fs::read(path)?;
    let (file, warnings) = parse_problem(path, settings_flags.lenient)?;
    let settings = Settings::new(&file, settings_flags)?;
    let mut out = run(action, &file, &digest(&bytes), &settings, candidate)?;
    if let Ok(o) = &mut out {
        o.report.warnings = warnings;
    }
    Ok(out)
}

/// Bimatrix games as problem files.
pub fn bimatrix_file(a: &DMatrix<f64>, b: &DMatrix<f64>, beta: f64) -> ProblemFile {
    let rows = |m: &DMatrix<f64>| (0..m.nrows()).map(|r| m.row(r).iter().copied().collect::<Vec<f64>>()).collect::<Vec<_>>();
    ProblemFile {
        version: schema::VERSION.into(),
        kind: Kind::Game,
        payload: serde_json::json!({"bimatrix": {"a": rows(a), "b": rows(b)}}),
        tolerances: Tolerances {
            beta,
            eps: beta,
            ..Tolerances::default()
        },
    }
}
