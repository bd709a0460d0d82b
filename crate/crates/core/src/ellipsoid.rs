//! Subgradient central-cut ellipsoid method over products of convex bodies.
//!
//! Flat bodies are handled in coordinates of their affine hull, so "interior"
//! and the inner parallel body are always meant relative to that hull.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::circuits::{Operator, QuadraticOperator};
use crate::error::{check_dim, Error, Result};
use crate::geometry::{BoxRegion, ConvexBody, Parametrization, Vector};

/// Implementation constant of the iteration budget.
pub const C0: f64 = 2.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Budget {
    pub t_ellipsoid: usize,
    pub t_emptiness: usize,
    pub g_threshold: f64,
    pub eps_grad: f64,
    pub eps_val: f64,
}

/// `T = max(C0, 10)·m²·⌈ln(m / (2·min(δ, ε/L)))⌉`, at least 10.
pub fn iteration_budget(m: usize, eps: f64, delta: f64, lipschitz: f64) -> Result<Budget> {
    if m == 0 {
        return Err(Error::invalid("budget dimension must be positive"));
    }
    for (name, v) in [("eps", eps), ("delta", delta), ("lipschitz", lipschitz)] {
        if !(v > 0.0) || !v.is_finite() {
            return Err(Error::invalid(format!("{name} must be positive and finite, got {v}")));
        }
    }
    let r = delta.min(eps / lipschitz);
    let mf = m as f64;
    let logs = (mf / (2.0 * r)).ln().ceil().max(1.0);
    let t = ((C0.max(10.0) * mf * mf * logs) as usize).max(10);
    let eps_grad = eps / mf.sqrt();
    Ok(Budget {
        t_ellipsoid: t,
        t_emptiness: t,
        g_threshold: eps / mf.sqrt() + eps_grad,
        eps_grad,
        eps_val: eps / 4.0,
    })
}

/// `ln Γ(m/2 + 1)` for integer `m`.
fn ln_gamma_half_plus_one(m: usize) -> f64 {
    if m % 2 == 0 {
        (1..=m / 2).map(|i| (i as f64).ln()).sum()
    } else {
        let n = (m + 1) / 2;
        0.5 * std::f64::consts::PI.ln() + (0..n).map(|i| (i as f64 + 0.5).ln()).sum::<f64>()
    }
}

/// Log-volume of the `m`-dimensional ball of radius `r`.
pub fn log_ball_volume(m: usize, r: f64) -> f64 {
    let mf = m as f64;
    0.5 * mf * std::f64::consts::PI.ln() - ln_gamma_half_plus_one(m) + mf * r.ln()
}

/// `{x : (x − c)ᵀ P⁻¹ (x − c) ≤ 1}`.
#[derive(Clone, Debug, PartialEq)]
pub struct EllipsoidState {
    pub center: Vector,
    pub shape: DMatrix<f64>,
    pub iteration: usize,
}

impl EllipsoidState {
    pub fn ball(center: Vector, radius: f64) -> Self {
        let m = center.len();
        EllipsoidState {
            center,
            shape: DMatrix::identity(m, m) * (radius * radius),
            iteration: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn log_volume(&self) -> Result<f64> {
        let chol = self.shape.clone().cholesky().ok_or(Error::NotPositiveDefinite)?;
        let half_logdet: f64 = chol.l().diagonal().iter().map(|d| d.ln()).sum();
        Ok(half_logdet + log_ball_volume(self.dim(), 1.0))
    }

    /// `√(gᵀ P g)`: half the extent of the ellipsoid along `g`.
    pub fn width(&self, g: &Vector) -> f64 {
        g.dot(&(&self.shape * g)).max(0.0).sqrt()
    }

    /// Minimum-volume ellipsoid containing `{x ∈ E : wᵀ(x − c) ≤ 0}`.
    pub fn central_cut_step(&self, w: &Vector) -> Result<EllipsoidState> {
        check_dim(self.dim(), w.len())?;
        if w.amax() == 0.0 {
            return Err(Error::invalid("cut direction must be nonzero"));
        }
        let pw = &self.shape * w;
        let wpw = w.dot(&pw);
        if !(wpw > 0.0) || !wpw.is_finite() {
            return Err(Error::NotPositiveDefinite);
        }
        let b = pw / wpw.sqrt();
        let m = self.dim() as f64;
        let (center, shape) = if self.dim() == 1 {
            (&self.center - &b * 0.5, &self.shape * 0.25)
        } else {
            let center = &self.center - &b * (1.0 / (m + 1.0));
            let mut shape = (&self.shape - (&b * b.transpose()) * (2.0 / (m + 1.0))) * (m * m / (m * m - 1.0));
            shape = (&shape + shape.transpose()) * 0.5;
            (center, shape)
        };
        Ok(EllipsoidState {
            center,
            shape,
            iteration: self.iteration + 1,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sense {
    Minimize,
    Maximize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "index", rename_all = "snake_case")]
pub enum OptStatus {
    Solved,
    Empty(usize),
    GradBelowThreshold,
}

/// Replayable proof that the inner parallel body `B̄(X, −delta)` of a set,
/// taken relative to its affine hull, is empty.
///
/// Each probe code names the point whose rejection produced a cut: `0` is the
/// current center, `±(j+1)` the center moved by `±delta/2` along reduced axis
/// `j`. Every such cut is valid for `B̄(X, −delta/2)`; once the ellipsoid is
/// smaller than a ball of radius `delta/2`, no ball of radius `delta` fits in
/// `X`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmptinessCertificate {
    pub set_index: usize,
    pub delta: f64,
    pub reduced_dim: usize,
    pub probes: Vec<i64>,
    pub final_log_volume: f64,
    pub threshold_log_volume: f64,
    /// The body's declared affine hull has no solution.
    pub inconsistent_hull: bool,
}

struct Phase1Setup {
    param: Parametrization,
    start: EllipsoidState,
    rho: f64,
    threshold: f64,
}

fn phase1_setup(body: &ConvexBody, delta: f64) -> Option<Phase1Setup> {
    let param = body.affine_hull().parametrize(body.dim())?;
    let k = param.reduced_dim();
    let bbox = body.bbox();
    let center = param.reduce(&bbox.center());
    let radius = reduced_radius(bbox);
    let rho = 0.5 * delta;
    Some(Phase1Setup {
        param,
        start: EllipsoidState::ball(center, radius),
        rho,
        threshold: if k == 0 { 0.0 } else { log_ball_volume(k, rho) },
    })
}

fn reduced_radius(bbox: &BoxRegion) -> f64 {
    let r = bbox.circumradius();
    r * (1.0 + 1e-9) + 1e-12
}

impl Phase1Setup {
    fn probe_point(&self, state: &EllipsoidState, code: i64) -> Vector {
        let mut z = state.center.clone();
        if code != 0 {
            let j = (code.unsigned_abs() - 1) as usize;
            z[j] += self.rho * code.signum() as f64;
        }
        self.param.lift(&z)
    }

    fn reduced_normal(&self, a: &Vector) -> Result<Vector> {
        let w = self.param.basis.transpose() * a;
        if w.amax() <= 1e-12 * a.amax() {
            return Err(Error::NotConverged(
                "separating normal is orthogonal to the body's affine hull".into(),
            ));
        }
        Ok(w)
    }
}

enum Phase1Outcome {
    Deep(Vector),
    Empty(EmptinessCertificate),
}

fn run_phase1(
    body: &ConvexBody,
    set_index: usize,
    delta: f64,
    calls: &mut usize,
    iterations: &mut usize,
) -> Result<(Phase1Outcome, Option<Parametrization>)> {
    let Some(setup) = phase1_setup(body, delta) else {
        return Ok((
            Phase1Outcome::Empty(EmptinessCertificate {
                set_index,
                delta,
                reduced_dim: 0,
                probes: vec![],
                final_log_volume: 0.0,
                threshold_log_volume: 0.0,
                inconsistent_hull: true,
            }),
            None,
        ));
    };
    let k = setup.param.reduced_dim();
    let empty = |probes: Vec<i64>, final_log_volume: f64| EmptinessCertificate {
        set_index,
        delta,
        reduced_dim: k,
        probes,
        final_log_volume,
        threshold_log_volume: setup.threshold,
        inconsistent_hull: false,
    };
    if k == 0 {
        let p = setup.param.origin.clone();
        *calls += 1;
        let outcome = if body.query(&p).is_member() {
            Phase1Outcome::Deep(p)
        } else {
            Phase1Outcome::Empty(empty(vec![0], 0.0))
        };
        return Ok((outcome, Some(setup.param)));
    }
    let mut state = setup.start.clone();
    let mut probes = Vec::new();
    loop {
        let logv = state.log_volume()?;
        if logv < setup.threshold {
            return Ok((Phase1Outcome::Empty(empty(probes, logv)), Some(setup.param)));
        }
        let mut cut: Option<(i64, Vector)> = None;
        let codes = std::iter::once(0i64).chain((1..=k as i64).flat_map(|j| [j, -j]));
        for code in codes {
            let q = setup.probe_point(&state, code);
            *calls += 1;
            if let Some(a) = body.query(&q).a {
                cut = Some((code, a));
                break;
            }
        }
        match cut {
            None => {
                let deep = setup.param.lift(&state.center);
                return Ok((Phase1Outcome::Deep(deep), Some(setup.param)));
            }
            Some((code, a)) => {
                let w = setup.reduced_normal(&a)?;
                state = state.central_cut_step(&w)?;
                probes.push(code);
                *iterations += 1;
            }
        }
    }
}

impl EmptinessCertificate {
    /// Replays the recorded cuts against `body`. Returns `Ok(false)` when any
    /// step fails to reproduce.
    pub fn verify(&self, body: &ConvexBody) -> Result<bool> {
        let Some(setup) = phase1_setup(body, self.delta) else {
            return Ok(self.inconsistent_hull);
        };
        if self.inconsistent_hull || setup.param.reduced_dim() != self.reduced_dim {
            return Ok(false);
        }
        let k = self.reduced_dim;
        if k == 0 {
            return Ok(self.probes == [0] && !body.query(&setup.param.origin).is_member());
        }
        let mut state = setup.start.clone();
        for &code in &self.probes {
            if code.unsigned_abs() as usize > k {
                return Ok(false);
            }
            let q = setup.probe_point(&state, code);
            let Some(a) = body.query(&q).a else {
                return Ok(false);
            };
            let Ok(w) = setup.reduced_normal(&a) else {
                return Ok(false);
            };
            state = state.central_cut_step(&w)?;
        }
        Ok(state.log_volume()? < setup.threshold)
    }
}

#[derive(Clone, Debug)]
pub struct OptReport {
    pub status: OptStatus,
    pub argmin: Option<Vector>,
    /// Objective value at `argmin`, in the caller's sense.
    pub value: Option<Vector>,
    pub iterations: usize,
    pub phase1_iterations: usize,
    pub oracle_calls: Vec<usize>,
    /// Largest `√(gᵀPg)` at the last objective cut; bounds the remaining gap
    /// for convex objectives.
    pub width: f64,
    pub certificate: Option<EmptinessCertificate>,
    pub budget: Budget,
}

impl OptReport {
    /// `(argmin, value)`, or the emptiness certificate as an error.
    pub fn into_solution(self) -> Result<(Vector, Vector)> {
        match (self.status, self.argmin, self.value, self.certificate) {
            (OptStatus::Empty(_), _, _, Some(c)) => Err(Error::Empty(Box::new(c))),
            (_, Some(x), Some(v), _) => Ok((x, v)),
            _ => Err(Error::NotConverged("optimizer returned no point".into())),
        }
    }
}

/// Minimizes (or maximizes) `objective` over the product of `sets`.
///
/// The objective must be convex per output for minimization and concave for
/// maximization. Vector objectives cut on the output with the widest
/// ellipsoid extent along its subgradient; the returned point minimizes the
/// largest per-output excess over the best value seen.
pub fn optimize(
    objective: &dyn Operator,
    sets: &[ConvexBody],
    sense: Sense,
    eps: f64,
    delta: f64,
    budget: Option<Budget>,
) -> Result<OptReport> {
    if sets.is_empty() {
        return Err(Error::invalid("optimize needs at least one set"));
    }
    let n: usize = sets.iter().map(|s| s.dim()).sum();
    check_dim(objective.input_dim(), n)?;
    if !(eps > 0.0) || !(delta > 0.0) {
        return Err(Error::invalid("eps and delta must be positive"));
    }
    let sign = match sense {
        Sense::Minimize => 1.0,
        Sense::Maximize => -1.0,
    };
    let boxes: Vec<&BoxRegion> = sets.iter().map(|s| s.bbox()).collect();
    let full_box = BoxRegion::concat(&boxes);

    let mut calls = vec![0usize; sets.len()];
    let mut phase1_iterations = 0;
    let mut params = Vec::with_capacity(sets.len());
    let mut deep = Vec::with_capacity(sets.len());
    for (i, s) in sets.iter().enumerate() {
        let (outcome, param) = run_phase1(s, i, delta, &mut calls[i], &mut phase1_iterations)?;
        match outcome {
            Phase1Outcome::Empty(cert) => {
                let budget = match budget {
                    Some(b) => b,
                    None => iteration_budget(n.max(1), eps, delta, 1.0)?,
                };
                return Ok(OptReport {
                    status: OptStatus::Empty(i),
                    argmin: None,
                    value: None,
                    iterations: 0,
                    phase1_iterations,
                    oracle_calls: calls,
                    width: f64::INFINITY,
                    certificate: Some(cert),
                    budget,
                });
            }
            Phase1Outcome::Deep(p) => {
                deep.push(p);
                params.push(param.expect("parametrization exists for nonempty sets"));
            }
        }
    }
    let param = Parametrization::block_diagonal(&params);
    let nred = param.reduced_dim();
    let lipschitz = objective.lipschitz_bound(&full_box).max(1e-12);
    let budget = match budget {
        Some(b) => b,
        None => iteration_budget(nred.max(1), eps, delta, lipschitz)?,
    };

    let mut seed = Vector::zeros(n);
    let mut offset = 0;
    for p in &deep {
        seed.rows_mut(offset, p.len()).copy_from(p);
        offset += p.len();
    }
    let mut candidates: Vec<(Vector, Vector)> = Vec::new();
    candidates.push((seed.clone(), objective.eval(&seed)? * sign));

    let mut status = OptStatus::Solved;
    let mut iterations = 0;
    let mut width = f64::INFINITY;
    if nred > 0 {
        let mut center = Vector::zeros(nred);
        let mut radius_sq = 0.0;
        let mut col = 0;
        for (s, p) in sets.iter().zip(&params) {
            let k = p.reduced_dim();
            center.rows_mut(col, k).copy_from(&p.reduce(&s.bbox().center()));
            radius_sq += reduced_radius(s.bbox()).powi(2);
            col += k;
        }
        let radius = radius_sq.sqrt();
        let grad_threshold = budget.g_threshold.min(eps / (2.0 * radius));
        let mut state = EllipsoidState::ball(center, radius);
        while iterations < budget.t_ellipsoid {
            let x = param.lift(&state.center);
            let mut cut: Option<Vector> = None;
            let (mut row, mut col) = (0, 0);
            for (i, (s, p)) in sets.iter().zip(&params).enumerate() {
                let xi = x.rows(row, s.dim()).into_owned();
                calls[i] += 1;
                if let Some(a) = s.query(&xi).a {
                    let wi = p.basis.transpose() * &a;
                    if wi.amax() <= 1e-12 * a.amax() {
                        return Err(Error::NotConverged(
                            "separating normal is orthogonal to the body's affine hull".into(),
                        ));
                    }
                    let mut w = Vector::zeros(nred);
                    w.rows_mut(col, p.reduced_dim()).copy_from(&wi);
                    cut = Some(w);
                    break;
                }
                row += s.dim();
                col += p.reduced_dim();
            }
            let w = match cut {
                Some(w) => w,
                None => {
                    let f = objective.eval(&x)? * sign;
                    let jac = objective.jacobian(&x)? * sign;
                    candidates.push((x.clone(), f));
                    let g = jac * &param.basis;
                    let norms: Vec<f64> = (0..g.nrows()).map(|j| g.row(j).norm()).collect();
                    if norms.iter().all(|&v| v <= grad_threshold) {
                        status = OptStatus::GradBelowThreshold;
                        width = 0.0;
                        break;
                    }
                    let mut best = (0usize, f64::NEG_INFINITY);
                    for j in 0..g.nrows() {
                        let s = state.width(&g.row(j).transpose());
                        if s > best.1 {
                            best = (j, s);
                        }
                    }
                    width = best.1;
                    if width <= eps {
                        break;
                    }
                    g.row(best.0).transpose()
                }
            };
            match state.central_cut_step(&w) {
                Ok(next) => state = next,
                Err(Error::NotPositiveDefinite) => break,
                Err(e) => return Err(e),
            }
            iterations += 1;
        }
    }

    let (x, f) = select_best(&candidates);
    Ok(OptReport {
        status,
        argmin: Some(x),
        value: Some(f * sign),
        iterations,
        phase1_iterations,
        oracle_calls: calls,
        width,
        certificate: None,
        budget,
    })
}

/// Earliest candidate minimizing `max_j (f_j − min f_j)`.
fn select_best(candidates: &[(Vector, Vector)]) -> (Vector, Vector) {
    let k = candidates[0].1.len();
    let best: Vec<f64> = (0..k)
        .map(|j| candidates.iter().map(|c| c.1[j]).fold(f64::INFINITY, f64::min))
        .collect();
    let mut chosen = 0;
    let mut chosen_excess = f64::INFINITY;
    for (i, (_, f)) in candidates.iter().enumerate() {
        let excess = (0..k).map(|j| f[j] - best[j]).fold(f64::NEG_INFINITY, f64::max);
        if excess < chosen_excess {
            chosen = i;
            chosen_excess = excess;
        }
    }
    candidates[chosen].clone()
}

/// Default inner margin for projections and linear minimizations.
pub fn default_delta(body: &ConvexBody) -> f64 {
    1e-8 * body.bbox().diameter().max(1.0)
}

/// Approximate Euclidean projection: `z ∈ body` with
/// `‖z − x‖² ≤ min_y ‖y − x‖² + eps`.
pub fn project(body: &ConvexBody, x: &Vector, eps: f64) -> Result<Vector> {
    project_with_delta(body, x, eps, default_delta(body))
}

pub fn project_with_delta(body: &ConvexBody, x: &Vector, eps: f64, delta: f64) -> Result<Vector> {
    check_dim(body.dim(), x.len())?;
    let objective = QuadraticOperator::squared_distance(x, 1.0);
    let report = optimize(&objective, std::slice::from_ref(body), Sense::Minimize, eps, delta, None)?;
    Ok(report.into_solution()?.0)
}

/// `argmin_{y ∈ body} cᵀy` within `eps`, returned with its value.
pub fn minimize_linear(body: &ConvexBody, c: &Vector, eps: f64) -> Result<(Vector, f64)> {
    check_dim(body.dim(), c.len())?;
    if c.amax() == 0.0 {
        let p = project(body, &body.bbox().center(), eps.max(1e-12))?;
        return Ok((p, 0.0));
    }
    let objective = crate::circuits::AffineOperator::new(
        DMatrix::from_row_slice(1, c.len(), c.as_slice()),
        Vector::zeros(1),
    )?;
    let report = optimize(&objective, std::slice::from_ref(body), Sense::Minimize, eps, default_delta(body), None)?;
    let (y, v) = report.into_solution()?;
    Ok((y, v[0]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::BoxRegion;
    use proptest::prelude::*;

    fn v(xs: &[f64]) -> Vector {
        Vector::from_column_slice(xs)
    }

    fn triangle() -> ConvexBody {
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 1.0, -1.0, 0.0, 0.0, -1.0]);
        ConvexBody::polyhedron(a, v(&[1.0, 0.0, 0.0]), BoxRegion::new(v(&[0.0, 0.0]), v(&[1.0, 1.0])).unwrap())
            .unwrap()
    }

    #[test]
    fn budget_example() {
        let b = iteration_budget(2, 0.01, 0.01, 1.0).unwrap();
        assert_eq!(b.t_ellipsoid, 10 * 4 * (100f64.ln().ceil() as usize));
        assert_eq!(b.t_ellipsoid, 200);
        assert!(iteration_budget(1, 10.0, 10.0, 1.0).unwrap().t_ellipsoid >= 10);
        assert!(iteration_budget(2, 0.0, 0.01, 1.0).is_err());
    }

    #[test]
    fn central_cut_examples() {
        let s = EllipsoidState::ball(Vector::zeros(2), 1.0);
        let next = s.central_cut_step(&v(&[1.0, 0.0])).unwrap();
        assert!((&next.center - v(&[-1.0 / 3.0, 0.0])).amax() < 1e-15);
        let interval = EllipsoidState::ball(Vector::zeros(1), 1.0);
        let half = interval.central_cut_step(&v(&[1.0])).unwrap();
        assert!((half.center[0] + 0.5).abs() < 1e-15);
        assert!((half.shape[(0, 0)].sqrt() - 0.5).abs() < 1e-15);
        assert!(s.central_cut_step(&v(&[0.0, 0.0])).is_err());
        let back = next.central_cut_step(&v(&[-1.0, 0.0])).unwrap();
        assert!(back.log_volume().unwrap() < next.log_volume().unwrap());
        assert!(next.log_volume().unwrap() < s.log_volume().unwrap());
    }

    #[test]
    fn interior_quadratic_optimum() {
        let f = QuadraticOperator::squared_distance(&v(&[0.3, 0.4]), 1.0);
        let body = ConvexBody::box_body(BoxRegion::cube(2, 1.0));
        let r = optimize(&f, &[body], Sense::Minimize, 1e-3, 1e-4, None).unwrap();
        let (x, val) = r.into_solution().unwrap();
        assert!((x - v(&[0.3, 0.4])).norm() < 0.05);
        assert!(val[0] <= 1e-3);
    }

    #[test]
    fn vertex_optimum_of_linear_objective() {
        let (y, val) = minimize_linear(&triangle(), &v(&[1.0, 1.0]), 1e-3).unwrap();
        assert!(val <= 1e-3);
        assert!(triangle().contains(&y).unwrap());
    }

    #[test]
    fn thin_slab_is_certified_empty() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, -1.0, 0.0]);
        let slab = ConvexBody::polyhedron(a, v(&[1e-6, 0.0]), BoxRegion::cube(2, 1.0)).unwrap();
        let f = QuadraticOperator::squared_distance(&v(&[0.0, 0.0]), 1.0);
        let r = optimize(&f, &[slab.clone()], Sense::Minimize, 1e-3, 0.01, None).unwrap();
        assert_eq!(r.status, OptStatus::Empty(0));
        let cert = r.certificate.unwrap();
        assert!(cert.verify(&slab).unwrap());
        // closed form: the slab has width 1e-6 < 2·0.01, so no 0.01-ball fits
        assert!(1e-6 < 2.0 * 0.01);
        let json = serde_json::to_string(&cert).unwrap();
        let back: EmptinessCertificate = serde_json::from_str(&json).unwrap();
        assert!(back.verify(&slab).unwrap());
        let mut forged = back.clone();
        forged.probes.truncate(forged.probes.len() / 2);
        assert!(!forged.verify(&slab).unwrap());
    }

    #[test]
    fn projection_examples() {
        let unit = ConvexBody::box_body(BoxRegion::cube(2, 1.0));
        let z = project(&unit, &v(&[2.0, 2.0]), 1e-8).unwrap();
        assert!((z - v(&[1.0, 1.0])).norm_squared() <= 1e-8);
        let inside = v(&[0.2, -0.3]);
        let z = project(&unit, &inside, 1e-8).unwrap();
        assert!((z - inside).norm_squared() <= 1e-8);
        let z = project(&ConvexBody::simplex(2), &v(&[1.0, 1.0]), 1e-8).unwrap();
        assert!((z - v(&[0.5, 0.5])).norm() < 1e-3);
    }

    #[test]
    fn point_bodies_need_no_iterations() {
        let p = ConvexBody::point(v(&[0.25, -0.5]));
        let z = project(&p, &v(&[1.0, 1.0]), 1e-6).unwrap();
        assert_eq!(z, v(&[0.25, -0.5]));
    }

    #[test]
    fn product_of_sets_optimizes_jointly() {
        let f = QuadraticOperator::squared_distance(&v(&[2.0, 0.5, 0.5]), 1.0);
        let sets = vec![ConvexBody::box_body(BoxRegion::cube(1, 1.0)), ConvexBody::simplex(2)];
        let (x, val) = optimize(&f, &sets, Sense::Minimize, 1e-6, 1e-6, None)
            .unwrap()
            .into_solution()
            .unwrap();
        assert!((x - v(&[1.0, 0.5, 0.5])).norm() < 1e-2);
        assert!((val[0] - 1.0).abs() < 1e-5);
    }

    #[test]
    fn maximization_of_concave_objective() {
        let f = QuadraticOperator::squared_distance(&v(&[0.2, 0.1]), -1.0);
        let body = ConvexBody::ball(Vector::zeros(2), 1.0).unwrap();
        let (x, val) = optimize(&f, &[body], Sense::Maximize, 1e-6, 1e-6, None)
            .unwrap()
            .into_solution()
            .unwrap();
        assert!((x - v(&[0.2, 0.1])).norm() < 1e-2);
        assert!(val[0] >= -1e-6);
    }

    proptest! {
        #[test]
        fn volume_decays_geometrically(seed in 0u64..50, m in 1usize..5) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut state = EllipsoidState::ball(Vector::zeros(m), 1.0);
            let v0 = state.log_volume().unwrap();
            for t in 1..=40 {
                let w = Vector::from_iterator(m, (0..m).map(|_| rng.gen_range(-1.0..1.0)));
                state = state.central_cut_step(&w).unwrap();
                let lv = state.log_volume().unwrap();
                prop_assert!(lv - v0 <= -(t as f64) / (4.0 * (m as f64 + 1.0)) + 1e-9);
            }
        }

        #[test]
        fn projection_variational_residual(x in -2.0f64..2.0, y in -2.0f64..2.0, a in 0.0f64..1.0, b in 0.0f64..1.0) {
            let eps = 1e-8;
            let body = triangle();
            let p = v(&[x, y]);
            let z = project(&body, &p, eps).unwrap();
            prop_assert!(body.contains(&z).unwrap());
            let (a, b) = if a + b > 1.0 { (1.0 - a, 1.0 - b) } else { (a, b) };
            let yv = v(&[a, b]);
            let diam = 2f64.sqrt();
            prop_assert!((&p - &z).dot(&(yv - &z)) <= eps.sqrt() * diam);
        }
    }
}
