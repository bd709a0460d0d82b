//! VI, QVI, GQVI and MVI problems: residuals, verification, certificates and
//! solvers.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::circuits::Operator;
use crate::ellipsoid::{self, EmptinessCertificate};
use crate::error::{check_dim, Error, Result};
use crate::geometry::{BoxRegion, ConvexBody, Correspondence, Vector};

fn vec_of(v: &Vector) -> Vec<f64> {
    v.iter().copied().collect()
}

fn vector(v: &[f64]) -> Vector {
    Vector::from_column_slice(v)
}

/// `min_{y ∈ body} cᵀy`, exact where the body allows it.
pub fn linear_min(body: &ConvexBody, c: &Vector) -> Result<(Vector, f64)> {
    check_dim(body.dim(), c.len())?;
    if let Some(r) = body.linear_min_exact(c) {
        return Ok(r);
    }
    let scale = body.bbox().diameter().max(1.0) * c.norm().max(1.0);
    ellipsoid::minimize_linear(body, c, 1e-9 * scale)
}

/// `min_{y ∈ body} (y − x)ᵀw`.
pub fn linear_residual(body: &ConvexBody, x: &Vector, w: &Vector) -> Result<f64> {
    let (_, v) = linear_min(body, w)?;
    Ok(v - w.dot(x))
}

/// Find `x* ∈ R` with `(y − x*)ᵀF(x*) + β ≥ 0` for all `y ∈ R`.
#[derive(Clone)]
pub struct VIProblem {
    pub operator: Arc<dyn Operator>,
    pub set: ConvexBody,
    pub beta: f64,
}

impl fmt::Debug for VIProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("VIProblem")
            .field("dim", &self.set.dim())
            .field("set", &self.set)
            .field("beta", &self.beta)
            .finish()
    }
}

impl VIProblem {
    pub fn new(operator: Arc<dyn Operator>, set: ConvexBody, beta: f64) -> Result<Self> {
        check_dim(set.dim(), operator.input_dim())?;
        check_dim(set.dim(), operator.output_dim())?;
        check_beta(beta)?;
        Ok(VIProblem { operator, set, beta })
    }

    pub fn dim(&self) -> usize {
        self.set.dim()
    }
}

fn check_beta(beta: f64) -> Result<()> {
    if beta > 0.0 && beta.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("beta must be positive, got {beta}")))
    }
}

/// VI whose feasible set moves with the point: `y ∈ R(x)`.
#[derive(Clone)]
pub struct QVIProblem {
    pub operator: Arc<dyn Operator>,
    pub constraint: Correspondence,
    pub beta: f64,
}

impl QVIProblem {
    pub fn new(operator: Arc<dyn Operator>, constraint: Correspondence, beta: f64) -> Result<Self> {
        let m = constraint.dim_out();
        check_dim(m, constraint.dim_in())?;
        check_dim(m, operator.input_dim())?;
        check_dim(m, operator.output_dim())?;
        check_beta(beta)?;
        Ok(QVIProblem {
            operator,
            constraint,
            beta,
        })
    }
}

/// QVI with a set-valued operator `ℱ`; `gamma` is its declared strong
/// convexity modulus (only consulted by explicit probes).
#[derive(Clone)]
pub struct GQVIProblem {
    pub operator: Correspondence,
    pub constraint: Correspondence,
    pub beta: f64,
    pub gamma: f64,
}

impl GQVIProblem {
    pub fn new(operator: Correspondence, constraint: Correspondence, beta: f64, gamma: f64) -> Result<Self> {
        let m = constraint.dim_out();
        check_dim(m, constraint.dim_in())?;
        check_dim(m, operator.dim_in())?;
        check_dim(m, operator.dim_out())?;
        check_beta(beta)?;
        if gamma < 0.0 {
            return Err(Error::invalid("gamma must be nonnegative"));
        }
        Ok(GQVIProblem {
            operator,
            constraint,
            beta,
            gamma,
        })
    }

    pub fn dim(&self) -> usize {
        self.constraint.dim_out()
    }
}

/// One VI condition per operator column, all at the same point.
#[derive(Clone)]
pub struct MVIProblem {
    pub columns: Vec<Arc<dyn Operator>>,
    pub set: ConvexBody,
    pub beta: f64,
}

impl MVIProblem {
    pub fn new(columns: Vec<Arc<dyn Operator>>, set: ConvexBody, beta: f64) -> Result<Self> {
        if columns.is_empty() {
            return Err(Error::invalid("MVI needs at least one operator column"));
        }
        for c in &columns {
            check_dim(set.dim(), c.input_dim())?;
            check_dim(set.dim(), c.output_dim())?;
        }
        check_beta(beta)?;
        Ok(MVIProblem { columns, set, beta })
    }
}

#[derive(Clone)]
pub enum Problem {
    Vi(VIProblem),
    Qvi(QVIProblem),
    Gqvi(GQVIProblem),
    Mvi(MVIProblem),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolutionCertificate {
    pub x: Vec<f64>,
    pub x_star: Vec<f64>,
    #[serde(default)]
    pub w: Option<Vec<f64>>,
    #[serde(default)]
    pub w_star: Option<Vec<f64>>,
    pub residual: Vec<f64>,
    pub closeness: f64,
}

impl SolutionCertificate {
    /// Candidate with `x = x*` and no operator values.
    pub fn at_point(x: &Vector) -> Self {
        SolutionCertificate {
            x: vec_of(x),
            x_star: vec_of(x),
            w: None,
            w_star: None,
            residual: vec![],
            closeness: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    Membership { point: String, set: String },
    Closeness { value: f64, bound: f64 },
    Residual { index: usize, value: f64, bound: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "verdict", content = "violations", rename_all = "snake_case")]
pub enum Verdict {
    Accept,
    Reject(Vec<Violation>),
}

impl Verdict {
    pub fn is_accept(&self) -> bool {
        matches!(self, Verdict::Accept)
    }

    fn from(violations: Vec<Violation>) -> Self {
        if violations.is_empty() {
            Verdict::Accept
        } else {
            Verdict::Reject(violations)
        }
    }
}

impl Problem {
    pub fn beta(&self) -> f64 {
        match self {
            Problem::Vi(p) => p.beta,
            Problem::Qvi(p) => p.beta,
            Problem::Gqvi(p) => p.beta,
            Problem::Mvi(p) => p.beta,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Problem::Vi(p) => p.set.dim(),
            Problem::Qvi(p) => p.constraint.dim_out(),
            Problem::Gqvi(p) => p.dim(),
            Problem::Mvi(p) => p.set.dim(),
        }
    }

    /// `ρ_j = min_{y ∈ R} (y − x)ᵀ w_j` with `R` the problem's set at `x`.
    /// Columns default to the operator values at `x`; GQVI requires them.
    pub fn residual(&self, x: &Vector, w: Option<&DMatrix<f64>>) -> Result<Vec<f64>> {
        check_dim(self.dim(), x.len())?;
        let (body, cols) = match self {
            Problem::Vi(p) => (p.set.clone(), column_matrix(w, || Ok(vec![p.operator.eval(x)?]))?),
            Problem::Qvi(p) => (p.constraint.at(x)?, column_matrix(w, || Ok(vec![p.operator.eval(x)?]))?),
            Problem::Gqvi(p) => (
                p.constraint.at(x)?,
                column_matrix(w, || Err(Error::invalid("GQVI residual needs an operator value w")))?,
            ),
            Problem::Mvi(p) => (
                p.set.clone(),
                column_matrix(w, || p.columns.iter().map(|c| c.eval(x)).collect())?,
            ),
        };
        check_dim(self.dim(), cols.nrows())?;
        (0..cols.ncols())
            .map(|j| linear_residual(&body, x, &cols.column(j).into_owned()))
            .collect()
    }

    /// Checks membership, closeness and residual conditions of a candidate.
    pub fn check_solution(&self, cand: &SolutionCertificate) -> Result<Verdict> {
        let m = self.dim();
        check_dim(m, cand.x.len())?;
        check_dim(m, cand.x_star.len())?;
        let x = vector(&cand.x);
        let xs = vector(&cand.x_star);
        let beta = self.beta();
        let mut out = Vec::new();
        let residual_violations = |body: &ConvexBody, base: &Vector, cols: Vec<Vector>, out: &mut Vec<Violation>| -> Result<()> {
            for (index, w) in cols.iter().enumerate() {
                let value = linear_residual(body, base, w)?;
                if value < -beta {
                    out.push(Violation::Residual {
                        index,
                        value,
                        bound: -beta,
                    });
                }
            }
            Ok(())
        };
        match self {
            Problem::Vi(p) => {
                if !p.set.contains(&xs)? {
                    out.push(membership("x_star", "R"));
                } else {
                    residual_violations(&p.set, &xs, vec![p.operator.eval(&xs)?], &mut out)?;
                }
            }
            Problem::Mvi(p) => {
                if !p.set.contains(&xs)? {
                    out.push(membership("x_star", "R"));
                } else {
                    let cols = p.columns.iter().map(|c| c.eval(&xs)).collect::<Result<Vec<_>>>()?;
                    residual_violations(&p.set, &xs, cols, &mut out)?;
                }
            }
            Problem::Qvi(p) => {
                let closeness = (&x - &xs).norm();
                if closeness > beta {
                    out.push(Violation::Closeness { value: closeness, bound: beta });
                }
                let body = p.constraint.at(&x)?;
                if !body.contains(&xs)? {
                    out.push(membership("x_star", "R(x)"));
                } else {
                    residual_violations(&body, &x, vec![p.operator.eval(&xs)?], &mut out)?;
                }
            }
            Problem::Gqvi(p) => {
                let (Some(w), Some(ws)) = (&cand.w, &cand.w_star) else {
                    return Err(Error::invalid("GQVI candidate needs w and w_star"));
                };
                check_dim(m, w.len())?;
                check_dim(m, ws.len())?;
                let (w, ws) = (vector(w), vector(ws));
                let closeness = ((&x - &xs).norm_squared() + (&w - &ws).norm_squared()).sqrt();
                if closeness > beta {
                    out.push(Violation::Closeness { value: closeness, bound: beta });
                }
                let f_body = p.operator.at(&x)?;
                if !f_body.contains(&ws)? {
                    out.push(membership("w_star", "F(x)"));
                }
                let body = p.constraint.at(&x)?;
                if !body.contains(&xs)? {
                    out.push(membership("x_star", "R(x)"));
                } else {
                    residual_violations(&body, &x, vec![ws], &mut out)?;
                }
            }
        }
        Ok(Verdict::from(out))
    }
}

fn membership(point: &str, set: &str) -> Violation {
    Violation::Membership {
        point: point.to_string(),
        set: set.to_string(),
    }
}

fn column_matrix(
    w: Option<&DMatrix<f64>>,
    default: impl FnOnce() -> Result<Vec<Vector>>,
) -> Result<DMatrix<f64>> {
    match w {
        Some(w) => Ok(w.clone()),
        None => {
            let cols = default()?;
            Ok(DMatrix::from_columns(&cols))
        }
    }
}

/// Evidence that an input assumption fails, re-checkable from its fields.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ViolationCertificate {
    /// The inner parallel body of `R(x)` (`which = "R"`) or `ℱ(x)`
    /// (`which = "F"`) is empty.
    Emptiness {
        which: String,
        x: Vec<f64>,
        certificate: EmptinessCertificate,
    },
    /// `w = Π̃_{C(q)}(q)`, `z = Π̃_{C(p)}(w)` but `‖z − w‖ > L‖p − q‖ + 3ε`.
    HausdorffLipschitz {
        which: String,
        p: Vec<f64>,
        q: Vec<f64>,
        z: Vec<f64>,
        w: Vec<f64>,
        eps: f64,
        lipschitz: f64,
    },
    /// `‖F(p) − F(q)‖∞ > L‖p − q‖∞` for a point-valued operator.
    OperatorLipschitz { p: Vec<f64>, q: Vec<f64>, lipschitz: f64 },
    /// The squared-distance profile of `ℱ(x)` breaks the strong convexity
    /// inequality at `λp + (1 − λ)q`.
    StrongConvexity {
        x: Vec<f64>,
        p: Vec<f64>,
        q: Vec<f64>,
        lambda: f64,
        eps: f64,
        gamma: f64,
    },
}

impl ViolationCertificate {
    /// Re-validates the witness against the problem it was emitted for.
    pub fn verify(&self, problem: &Problem) -> Result<bool> {
        match self {
            ViolationCertificate::Emptiness { which, x, certificate } => {
                let body = resolve_body(problem, which, &vector(x))?;
                certificate.verify(&body)
            }
            ViolationCertificate::HausdorffLipschitz {
                which,
                p,
                q,
                z,
                w,
                eps,
                lipschitz,
            } => {
                let (p, q) = (vector(p), vector(q));
                let cq = resolve_body(problem, which, &q)?;
                let cp = resolve_body(problem, which, &p)?;
                let w2 = cq.try_projection(&q)?;
                let z2 = cp.try_projection(&w2)?;
                let tol = eps.max(1e-12);
                let reproduced = (&w2 - vector(w)).norm() <= tol && (&z2 - vector(z)).norm() <= tol;
                Ok(reproduced && (z2 - w2).norm() > lipschitz * (p - q).norm() + 3.0 * eps)
            }
            ViolationCertificate::OperatorLipschitz { p, q, lipschitz } => {
                let op = match problem {
                    Problem::Vi(v) => v.operator.clone(),
                    Problem::Qvi(v) => v.operator.clone(),
                    _ => return Ok(false),
                };
                let (p, q) = (vector(p), vector(q));
                let lhs = (op.eval(&p)? - op.eval(&q)?).amax();
                Ok(lhs > lipschitz * (p - q).amax())
            }
            ViolationCertificate::StrongConvexity {
                x,
                p,
                q,
                lambda,
                eps,
                gamma,
            } => {
                let body = resolve_body(problem, "F", &vector(x))?;
                strong_convexity_gap(&body, &vector(p), &vector(q), *lambda, *gamma)
                    .map(|gap| gap > *eps)
            }
        }
    }
}

fn resolve_body(problem: &Problem, which: &str, x: &Vector) -> Result<ConvexBody> {
    match (problem, which) {
        (Problem::Vi(p), "R") => Ok(p.set.clone()),
        (Problem::Mvi(p), "R") => Ok(p.set.clone()),
        (Problem::Qvi(p), "R") => p.constraint.at(x),
        (Problem::Gqvi(p), "R") => p.constraint.at(x),
        (Problem::Gqvi(p), "F") => p.operator.at(x),
        _ => Err(Error::invalid(format!("certificate refers to unknown set {which:?}"))),
    }
}

/// Tests the Hausdorff-Lipschitz contract of `corr` between `p` and `q`.
pub fn audit_hausdorff(
    corr: &Correspondence,
    which: &str,
    p: &Vector,
    q: &Vector,
    eps: f64,
) -> Result<Option<ViolationCertificate>> {
    let w = corr.at(q)?.try_projection(q)?;
    let z = corr.at(p)?.try_projection(&w)?;
    let lipschitz = corr.lipschitz();
    if (&z - &w).norm() > lipschitz * (p - q).norm() + 3.0 * eps {
        Ok(Some(ViolationCertificate::HausdorffLipschitz {
            which: which.to_string(),
            p: vec_of(p),
            q: vec_of(q),
            z: vec_of(&z),
            w: vec_of(&w),
            eps,
            lipschitz,
        }))
    } else {
        Ok(None)
    }
}

/// `λ·v(p) + (1−λ)·v(q) − λ(1−λ)γ/2·‖p−q‖²` subtracted from `v(λp+(1−λ)q)`,
/// where `v` is the squared distance to `body`.
fn strong_convexity_gap(body: &ConvexBody, p: &Vector, q: &Vector, lambda: f64, gamma: f64) -> Result<f64> {
    let v = |z: &Vector| -> Result<f64> { Ok((z - body.try_projection(z)?).norm_squared()) };
    let mid = p * lambda + q * (1.0 - lambda);
    let rhs = lambda * v(p)? + (1.0 - lambda) * v(q)? - 0.5 * lambda * (1.0 - lambda) * gamma * (p - q).norm_squared();
    Ok(v(&mid)? - rhs)
}

/// Random search for a strong-convexity violation of `ℱ(x)`.
pub fn probe_strong_convexity(
    problem: &GQVIProblem,
    x: &Vector,
    eps: f64,
    trials: usize,
    seed: u64,
) -> Result<Option<ViolationCertificate>> {
    let body = problem.operator.at(x)?;
    let region = problem.operator.range().inflate(1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..trials {
        let p = sample_box(&region, &mut rng);
        let q = sample_box(&region, &mut rng);
        let lambda = rng.gen_range(0.05..0.95);
        if strong_convexity_gap(&body, &p, &q, lambda, problem.gamma)? > eps {
            return Ok(Some(ViolationCertificate::StrongConvexity {
                x: vec_of(x),
                p: vec_of(&p),
                q: vec_of(&q),
                lambda,
                eps,
                gamma: problem.gamma,
            }));
        }
    }
    Ok(None)
}

fn sample_box(b: &BoxRegion, rng: &mut ChaCha8Rng) -> Vector {
    Vector::from_iterator(
        b.dim(),
        (0..b.dim()).map(|j| {
            let (l, h) = (b.lo()[j], b.hi()[j]);
            if h > l {
                rng.gen_range(l..=h)
            } else {
                l
            }
        }),
    )
}

/// The point-valued correspondence `x ↦ {F(x)}` on `domain`.
pub fn point_valued(op: Arc<dyn Operator>, domain: BoxRegion) -> Result<Correspondence> {
    check_dim(op.input_dim(), domain.dim())?;
    let lipschitz = op.lipschitz_bound(&domain).max(1e-12);
    let center = op.eval(&domain.center())?;
    let spread = lipschitz * domain.half_widths().amax() + 1e-9;
    let range = BoxRegion::new(center.add_scalar(-spread), center.add_scalar(spread))?;
    // ∞-norm bound per output becomes a Euclidean bound after scaling by √n.
    let euclid = lipschitz * (op.output_dim() as f64).sqrt() * (op.input_dim() as f64).sqrt();
    Correspondence::new(
        domain,
        range,
        euclid,
        Arc::new(move |x| Ok(ConvexBody::point(op.eval(x)?))),
    )
}

#[derive(Clone, Debug, PartialEq)]
pub enum SolveOutcome {
    Solved(SolutionCertificate),
    /// The iteration budget ran out; the best iterate is attached.
    Failure { best: SolutionCertificate, iterations: usize },
}

/// Extragradient: `y = Π(x − ηF(x))`, `x⁺ = Π(x − ηF(y))`.
///
/// Converges for monotone Lipschitz operators with `η < 1/L`; other operators
/// may cycle. The residual is checked every few iterations.
pub fn solve_vi_extragradient(problem: &VIProblem, eps: f64, step: f64, max_iters: usize) -> Result<SolveOutcome> {
    if !(step > 0.0) {
        return Err(Error::invalid("step must be positive"));
    }
    let body = &problem.set;
    let op = &problem.operator;
    let mut x = body.try_projection(&body.bbox().center())?;
    let vi = Problem::Vi(problem.clone());
    let certify = |x: &Vector| -> Result<SolutionCertificate> {
        let residual = vi.residual(x, None)?;
        Ok(SolutionCertificate {
            residual,
            ..SolutionCertificate::at_point(x)
        })
    };
    let mut best = certify(&x)?;
    if best.residual[0] >= -eps {
        return Ok(SolveOutcome::Solved(best));
    }
    for t in 1..=max_iters {
        let y = body.try_projection(&(&x - op.eval(&x)? * step))?;
        let next = body.try_projection(&(&x - op.eval(&y)? * step))?;
        let moved = (&next - &x).amax();
        x = next;
        if t % 5 == 0 || t == max_iters || moved < 1e-14 {
            let cert = certify(&x)?;
            if cert.residual[0] > best.residual[0] {
                best = cert.clone();
            }
            if cert.residual[0] >= -eps {
                return Ok(SolveOutcome::Solved(cert));
            }
        }
    }
    Ok(SolveOutcome::Failure {
        best,
        iterations: max_iters,
    })
}

/// Ψ(x, w) = (Π(x, w), ℱ(x)) over stacked `(x, w)`, where `Π(x, w)` is the
/// set of `eps`-maximizers over `R(x)` of
/// `Φ(y) = −(y − x)ᵀw − γ‖y − o‖²` with `o` the center of `R`'s range box.
///
/// Since Φ is a concave quadratic, its near-maximizers form `R(x)` intersected
/// with the ball around `c = o − w/(2γ)` of radius `√(d² + eps/γ)`, where `d`
/// is the distance from `c` to `R(x)`.
pub fn build_psi(problem: &GQVIProblem, gamma: f64, eps: f64) -> Result<Correspondence> {
    if !(gamma > 0.0) || !(eps > 0.0) {
        return Err(Error::invalid("gamma and eps must be positive"));
    }
    let m = problem.dim();
    let origin = problem.constraint.range().center();
    let r = problem.constraint.clone();
    let f = problem.operator.clone();
    let domain = BoxRegion::concat(&[r.domain(), f.range()]);
    let range = BoxRegion::concat(&[r.range(), f.range()]);
    let map = move |xw: &Vector| -> Result<ConvexBody> {
        let x = xw.rows(0, m).into_owned();
        let w = xw.rows(m, m).into_owned();
        let pi = pi_body(&r.at(&x)?, &origin, &w, gamma, eps)?;
        ConvexBody::product(vec![pi, f.at(&x)?])
    };
    Correspondence::new(domain, range, f64::INFINITY, Arc::new(map))
}

fn pi_body(r_body: &ConvexBody, origin: &Vector, w: &Vector, gamma: f64, eps: f64) -> Result<ConvexBody> {
    let c = origin - w / (2.0 * gamma);
    let p = r_body.try_projection(&c)?;
    let d = (&c - p).norm();
    let radius = (d * d + eps / gamma).sqrt();
    ConvexBody::intersection(vec![r_body.clone(), ConvexBody::ball(c, radius)?])
}

#[derive(Clone, Debug, PartialEq)]
pub enum KakutaniOutcome {
    /// `‖x − z‖ ≤ α` with `z` the nearest point of the image of `x`.
    Fixed { x: Vector, z: Vector, iterations: usize },
    Empty { x: Vector, certificate: EmptinessCertificate },
    Violation(ViolationCertificate),
}

pub type Audit<'a> = dyn FnMut(&Vector, &Vector) -> Result<Option<ViolationCertificate>> + 'a;

/// Damped Mann iteration `x ← (1 − η_t)x + η_t·z` with `z` the nearest point
/// of `corr(x)` and `η_t = damping / (1 + t/100)`. For inputs of dimension at
/// most 3 a grid search (resolution α/2, capped at 20000 points) follows a
/// failed iteration. `audit` sees consecutive iterates `(x_t, x_{t−1})`.
pub fn kakutani_iterate(
    corr: &Correspondence,
    start: &Vector,
    alpha: f64,
    max_iters: usize,
    damping: f64,
    audit: Option<&mut Audit<'_>>,
) -> Result<KakutaniOutcome> {
    check_dim(corr.dim_in(), start.len())?;
    if !(damping > 0.0 && damping <= 1.0) {
        return Err(Error::invalid("damping must lie in (0, 1]"));
    }
    let mut audit = audit;
    let select = |x: &Vector| -> Result<std::result::Result<Vector, EmptinessCertificate>> {
        let body = match corr.at(x) {
            Ok(b) => b,
            Err(Error::Empty(c)) => return Ok(Err(*c)),
            Err(e) => return Err(e),
        };
        match body.try_projection(x) {
            Ok(z) => Ok(Ok(z)),
            Err(Error::Empty(c)) => Ok(Err(*c)),
            Err(e) => Err(e),
        }
    };
    let mut x = start.clone();
    let mut prev: Option<Vector> = None;
    let mut best_gap = f64::INFINITY;
    for t in 0..max_iters {
        let z = match select(&x)? {
            Ok(z) => z,
            Err(certificate) => return Ok(KakutaniOutcome::Empty { x, certificate }),
        };
        let gap = (&x - &z).norm();
        best_gap = best_gap.min(gap);
        if gap <= alpha {
            return Ok(KakutaniOutcome::Fixed { x, z, iterations: t });
        }
        if let (Some(a), Some(p)) = (audit.as_deref_mut(), prev.as_ref()) {
            if let Some(v) = a(&x, p)? {
                return Ok(KakutaniOutcome::Violation(v));
            }
        }
        let eta = damping / (1.0 + t as f64 / 100.0);
        prev = Some(x.clone());
        x = &x * (1.0 - eta) + z * eta;
    }
    if corr.dim_in() <= 3 {
        let dom = corr.domain();
        let d = dom.dim();
        let cap = 20_000f64;
        let mut steps: Vec<usize> = Vec::with_capacity(d);
        let per_axis = cap.powf(1.0 / d as f64).floor().max(2.0);
        for j in 0..d {
            let width = dom.hi()[j] - dom.lo()[j];
            let n = ((width / (alpha / 2.0)).ceil() as usize + 1).min(per_axis as usize).max(1);
            steps.push(n);
        }
        let total: usize = steps.iter().product();
        for idx in 0..total {
            let mut rem = idx;
            let p = Vector::from_iterator(
                d,
                (0..d).map(|j| {
                    let k = rem % steps[j];
                    rem /= steps[j];
                    if steps[j] == 1 {
                        0.5 * (dom.lo()[j] + dom.hi()[j])
                    } else {
                        dom.lo()[j] + (dom.hi()[j] - dom.lo()[j]) * k as f64 / (steps[j] - 1) as f64
                    }
                }),
            );
            if let Ok(z) = select(&p)? {
                let gap = (&p - &z).norm();
                best_gap = best_gap.min(gap);
                if gap <= alpha {
                    return Ok(KakutaniOutcome::Fixed {
                        x: p,
                        z,
                        iterations: max_iters + idx + 1,
                    });
                }
            }
        }
    }
    Err(Error::NotConverged(format!(
        "fixed-point search ended with best gap {best_gap:.3e} > alpha {alpha:.3e}"
    )))
}

#[derive(Clone, Debug)]
pub struct GqviOptions {
    /// Regularizer weight; defaults to `β/(8m·diam²)`.
    pub gamma: Option<f64>,
    /// Accuracy split `ε′ = β·h`.
    pub h: f64,
    /// Fixed-point accuracy; defaults to `min(βh, β/(4(1 + diam + W)))`.
    pub alpha: Option<f64>,
    pub max_iters: usize,
    pub damping: f64,
    /// Number of times α is halved after a candidate fails verification.
    pub retries: usize,
    /// Audit the declared Hausdorff-Lipschitz constants along the iteration.
    pub audit: bool,
}

impl Default for GqviOptions {
    fn default() -> Self {
        GqviOptions {
            gamma: None,
            h: 0.25,
            alpha: None,
            max_iters: 20_000,
            damping: 0.5,
            retries: 4,
            audit: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum GqviOutcome {
    Solved(SolutionCertificate),
    Violation(ViolationCertificate),
}

/// Solves a GQVI through a fixed point of Ψ and validates the result with
/// [`Problem::check_solution`].
pub fn solve_gqvi(problem: &GQVIProblem, opts: &GqviOptions) -> Result<GqviOutcome> {
    let m = problem.dim();
    let beta = problem.beta;
    let diam = problem.constraint.range().diameter().max(1e-12);
    let frange = problem.operator.range();
    let wbound = Vector::from_iterator(m, (0..m).map(|j| frange.lo()[j].abs().max(frange.hi()[j].abs()))).norm();
    let gamma = opts.gamma.unwrap_or(beta / (8.0 * m as f64 * diam * diam));
    let eps_pi = beta * opts.h;
    let mut alpha = opts
        .alpha
        .unwrap_or((beta * opts.h).min(beta / (4.0 * (1.0 + diam + wbound))));
    let psi = build_psi(problem, gamma, eps_pi)?;
    let whole = Problem::Gqvi(problem.clone());

    let x0 = problem.constraint.domain().center();
    let w0 = match problem.operator.at(&x0).and_then(|b| b.try_projection(&frange.center())) {
        Ok(w) => w,
        Err(Error::Empty(c)) => {
            return Ok(GqviOutcome::Violation(ViolationCertificate::Emptiness {
                which: "F".into(),
                x: vec_of(&x0),
                certificate: *c,
            }))
        }
        Err(e) => return Err(e),
    };
    let mut start = Vector::zeros(2 * m);
    start.rows_mut(0, m).copy_from(&x0);
    start.rows_mut(m, m).copy_from(&w0);

    let audit_eps = 1e-6 * diam.max(1.0);
    let mut calls = 0usize;
    let mut audit = |p: &Vector, q: &Vector| -> Result<Option<ViolationCertificate>> {
        calls += 1;
        if calls % 10 != 0 {
            return Ok(None);
        }
        let (px, qx) = (p.rows(0, m).into_owned(), q.rows(0, m).into_owned());
        if let Some(v) = audit_hausdorff(&problem.constraint, "R", &px, &qx, audit_eps)? {
            return Ok(Some(v));
        }
        audit_hausdorff(&problem.operator, "F", &px, &qx, audit_eps)
    };

    let mut last_err = None;
    for _ in 0..=opts.retries {
        let outcome = if opts.audit {
            kakutani_iterate(&psi, &start, alpha, opts.max_iters, opts.damping, Some(&mut audit))
        } else {
            kakutani_iterate(&psi, &start, alpha, opts.max_iters, opts.damping, None)
        };
        match outcome {
            Ok(KakutaniOutcome::Fixed { x: xw, z, .. }) => {
                let x = xw.rows(0, m).into_owned();
                let w = xw.rows(m, m).into_owned();
                let xs = z.rows(0, m).into_owned();
                let ws = z.rows(m, m).into_owned();
                let body = problem.constraint.at(&x)?;
                let residual = vec![linear_residual(&body, &x, &ws)?];
                let cert = SolutionCertificate {
                    x: vec_of(&x),
                    x_star: vec_of(&xs),
                    w: Some(vec_of(&w)),
                    w_star: Some(vec_of(&ws)),
                    residual,
                    closeness: ((&x - &xs).norm_squared() + (&w - &ws).norm_squared()).sqrt(),
                };
                if whole.check_solution(&cert)?.is_accept() {
                    return Ok(GqviOutcome::Solved(cert));
                }
                start = xw;
                alpha /= 2.0;
            }
            Ok(KakutaniOutcome::Empty { x: xw, certificate }) => {
                let x = xw.rows(0, m).into_owned();
                let which = match problem.constraint.at(&x).and_then(|b| b.try_projection(&x)) {
                    Err(Error::Empty(c)) => {
                        return Ok(GqviOutcome::Violation(ViolationCertificate::Emptiness {
                            which: "R".into(),
                            x: vec_of(&x),
                            certificate: *c,
                        }))
                    }
                    _ => "F",
                };
                let certificate = match problem.operator.at(&x).and_then(|b| b.try_projection(&x)) {
                    Err(Error::Empty(c)) => *c,
                    _ => certificate,
                };
                return Ok(GqviOutcome::Violation(ViolationCertificate::Emptiness {
                    which: which.into(),
                    x: vec_of(&x),
                    certificate,
                }));
            }
            Ok(KakutaniOutcome::Violation(v)) => return Ok(GqviOutcome::Violation(v)),
            Err(e @ Error::NotConverged(_)) => {
                last_err = Some(e);
                alpha /= 2.0;
            }
            Err(e) => return Err(e),
        }
    }
    Err(last_err.unwrap_or_else(|| Error::NotConverged("no verified GQVI candidate".into())))
}
