//! Multi-leader-follower games with quadratic followers: KKT-lifted partial
//! response sets, leader surrogate problems, the GQVI formulation and the
//! remedial equilibrium check.
//!
//! Follower `i` minimizes `½ y_iᵀM_i y_i + c_i(x_I, x_II, y_{−i})ᵀy_i` subject to
//! `A_{i,I}x_I + A_{i,II}x_II + Σ_j B_{i,j}y_j ≤ 0` and
//! `C_{i,I}x_I + C_{i,II}x_II + D_i y_i ≤ 0`.

use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::circuits::{probe_concavity, AffineOperator, ConcavityWitness, Curvature, Operator};
use crate::ellipsoid::{self, Sense};
use crate::error::{check_dim, Error, Result};
use crate::games::Utility;
use crate::geometry::{combinations, BodyKind, BoxRegion, ConvexBody, Correspondence, Vector, TAU};
use crate::vi::{GQVIProblem, VIProblem};

/// A leader's loss over `(x_I, x_II, y)`.
pub type Loss = Utility;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Leader {
    I,
    II,
}

impl Leader {
    fn index(self) -> usize {
        match self {
            Leader::I => 0,
            Leader::II => 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Follower {
    pub m: DMatrix<f64>,
    pub a_i: DMatrix<f64>,
    pub a_ii: DMatrix<f64>,
    /// `B_{i,j}` for every follower `j`.
    pub b: Vec<DMatrix<f64>>,
    pub c_i: DMatrix<f64>,
    pub c_ii: DMatrix<f64>,
    pub d: DMatrix<f64>,
    /// `c_i(x_I, x_II, y_{−i}) = c_map·(x_I, x_II, y_{−i}) + c_offset`.
    pub c_map: DMatrix<f64>,
    pub c_offset: Vector,
}

/// Extra rows `G ℓ ≤ h` on lifted coordinates `ℓ = (y, λ, μ)`.
#[derive(Clone, Debug, PartialEq)]
pub enum PartialResponseMode {
    Relaxed,
    Restricted { rows: DMatrix<f64>, rhs: Vector },
}

#[derive(Clone)]
pub struct MlfGame {
    followers: Vec<Follower>,
    leader_sets: [ConvexBody; 2],
    losses: [Loss; 2],
    follower_box: BoxRegion,
    multiplier_bound: f64,
    modes: [PartialResponseMode; 2],
    strict: bool,
}

/// A follower strategy with KKT multipliers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LiftedResponsePoint {
    pub y: Vec<f64>,
    pub lambda: Vec<Vec<f64>>,
    pub mu: Vec<Vec<f64>>,
}

impl LiftedResponsePoint {
    pub fn to_vector(&self) -> Vector {
        let mut v: Vec<f64> = self.y.clone();
        v.extend(self.lambda.iter().flatten());
        v.extend(self.mu.iter().flatten());
        Vector::from_vec(v)
    }
}

impl MlfGame {
    /// Rejects non-symmetric or indefinite `M_i` and inconsistent shapes.
    /// `multiplier_bound` caps every KKT multiplier.
    pub fn new(
        followers: Vec<Follower>,
        leader_sets: [ConvexBody; 2],
        losses: [Loss; 2],
        follower_box: BoxRegion,
        multiplier_bound: f64,
    ) -> Result<Self> {
        if followers.is_empty() {
            return Err(Error::invalid("at least one follower is required"));
        }
        if !(multiplier_bound > 0.0) {
            return Err(Error::invalid("multiplier bound must be positive"));
        }
        let sizes: Vec<usize> = followers.iter().map(|f| f.m.nrows()).collect();
        let n: usize = sizes.iter().sum();
        check_dim(n, follower_box.dim())?;
        let (ni, nii) = (leader_sets[0].dim(), leader_sets[1].dim());
        for (i, f) in followers.iter().enumerate() {
            let shape = |what: &str, m: &DMatrix<f64>, r: usize, c: usize| -> Result<()> {
                if m.shape() == (r, c) {
                    Ok(())
                } else {
                    Err(Error::invalid(format!(
                        "follower {i}: {what} is {:?}, expected ({r}, {c})",
                        m.shape()
                    )))
                }
            };
            let n_i = sizes[i];
            shape("M", &f.m, n_i, n_i)?;
            let sym_gap = (&f.m - f.m.transpose()).amax();
            if sym_gap > TAU {
                return Err(Error::invalid(format!("follower {i}: M is not symmetric")));
            }
            let low = SymmetricEigen::new(f.m.clone()).eigenvalues.min();
            if low < -TAU {
                return Err(Error::invalid(format!(
                    "follower {i}: M has eigenvalue {low:.3e} < 0"
                )));
            }
            let mi = f.a_i.nrows();
            shape("A_I", &f.a_i, mi, ni)?;
            shape("A_II", &f.a_ii, mi, nii)?;
            check_dim(followers.len(), f.b.len())?;
            for (j, bj) in f.b.iter().enumerate() {
                shape(&format!("B_{j}"), bj, mi, sizes[j])?;
            }
            let li = f.c_i.nrows();
            shape("C_I", &f.c_i, li, ni)?;
            shape("C_II", &f.c_ii, li, nii)?;
            shape("D", &f.d, li, n_i)?;
            shape("c map", &f.c_map, n_i, ni + nii + n - n_i)?;
            check_dim(n_i, f.c_offset.len())?;
        }
        for loss in &losses {
            let probe = Vector::zeros(ni + nii + n);
            loss.value(&probe)?;
        }
        Ok(MlfGame {
            followers,
            leader_sets,
            losses,
            follower_box,
            multiplier_bound,
            modes: [PartialResponseMode::Relaxed, PartialResponseMode::Relaxed],
            strict: false,
        })
    }

    pub fn with_mode(mut self, leader: Leader, mode: PartialResponseMode) -> Result<Self> {
        if let PartialResponseMode::Restricted { rows, rhs } = &mode {
            check_dim(self.lifted_dim(), rows.ncols())?;
            check_dim(rows.nrows(), rhs.len())?;
        }
        self.modes[leader.index()] = mode;
        Ok(self)
    }

    /// Forces both leaders to anticipate the same follower response.
    pub fn strict(mut self, on: bool) -> Self {
        self.strict = on;
        self
    }

    /// Restricted mode with every `λ` pinned to zero.
    pub fn zero_lambda_mode(&self) -> PartialResponseMode {
        let p = self.lifted_dim();
        let m = self.lambda_dim();
        let mut rows = DMatrix::zeros(m, p);
        for r in 0..m {
            rows[(r, self.n() + r)] = 1.0;
        }
        PartialResponseMode::Restricted {
            rows,
            rhs: Vector::zeros(m),
        }
    }

    pub fn followers(&self) -> &[Follower] {
        &self.followers
    }

    pub fn leader_set(&self, leader: Leader) -> &ConvexBody {
        &self.leader_sets[leader.index()]
    }

    pub fn loss(&self, leader: Leader) -> &Loss {
        &self.losses[leader.index()]
    }

    pub fn mode(&self, leader: Leader) -> &PartialResponseMode {
        &self.modes[leader.index()]
    }

    pub fn follower_box(&self) -> &BoxRegion {
        &self.follower_box
    }

    fn n_leader(&self, leader: Leader) -> usize {
        self.leader_sets[leader.index()].dim()
    }

    /// Followers' joint dimension.
    pub fn n(&self) -> usize {
        self.followers.iter().map(|f| f.m.nrows()).sum()
    }

    fn lambda_dim(&self) -> usize {
        self.followers.iter().map(|f| f.a_i.nrows()).sum()
    }

    fn mu_dim(&self) -> usize {
        self.followers.iter().map(|f| f.c_i.nrows()).sum()
    }

    /// Dimension of `(y, λ, μ)`.
    pub fn lifted_dim(&self) -> usize {
        self.n() + self.lambda_dim() + self.mu_dim()
    }

    fn y_offsets(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.followers.len());
        let mut acc = 0;
        for f in &self.followers {
            out.push(acc);
            acc += f.m.nrows();
        }
        out
    }

    fn lifted_box(&self) -> BoxRegion {
        let k = self.lambda_dim() + self.mu_dim();
        if k == 0 {
            return self.follower_box.clone();
        }
        let mult = BoxRegion::new(Vector::zeros(k), Vector::from_element(k, self.multiplier_bound))
            .expect("positive multiplier bound");
        BoxRegion::concat(&[&self.follower_box, &mult])
    }

    /// `(A, b, E, f)` over `(x_I, x_II, y, λ, μ)`.
    fn full_system(&self) -> (DMatrix<f64>, Vector, DMatrix<f64>, Vector) {
        let (ni, nii, n) = (self.n_leader(Leader::I), self.n_leader(Leader::II), self.n());
        let width = ni + nii + self.lifted_dim();
        let yoff = self.y_offsets();
        let ycol = ni + nii;
        let lcol = ycol + n;
        let mcol = lcol + self.lambda_dim();
        let mut ineq: Vec<Vec<f64>> = Vec::new();
        let mut eq: Vec<(Vec<f64>, f64)> = Vec::new();
        let (mut lam_at, mut mu_at) = (lcol, mcol);
        for (i, f) in self.followers.iter().enumerate() {
            let n_i = f.m.nrows();
            for r in 0..f.a_i.nrows() {
                let mut row = vec![0.0; width];
                for c in 0..ni {
                    row[c] = f.a_i[(r, c)];
                }
                for c in 0..nii {
                    row[ni + c] = f.a_ii[(r, c)];
                }
                for (j, bj) in f.b.iter().enumerate() {
                    for c in 0..bj.ncols() {
                        row[ycol + yoff[j] + c] += bj[(r, c)];
                    }
                }
                ineq.push(row);
            }
            for r in 0..f.c_i.nrows() {
                let mut row = vec![0.0; width];
                for c in 0..ni {
                    row[c] = f.c_i[(r, c)];
                }
                for c in 0..nii {
                    row[ni + c] = f.c_ii[(r, c)];
                }
                for c in 0..n_i {
                    row[ycol + yoff[i] + c] = f.d[(r, c)];
                }
                ineq.push(row);
            }
            for r in 0..f.a_i.nrows() {
                let mut row = vec![0.0; width];
                row[lam_at + r] = -1.0;
                ineq.push(row);
            }
            for r in 0..f.c_i.nrows() {
                let mut row = vec![0.0; width];
                row[mu_at + r] = -1.0;
                ineq.push(row);
            }
            // stationarity: M_i y_i + c_i + B_{i,i}ᵀλ_i + D_iᵀμ_i = 0
            let others: Vec<usize> = (0..n).filter(|&j| j < yoff[i] || j >= yoff[i] + n_i).collect();
            for r in 0..n_i {
                let mut row = vec![0.0; width];
                for c in 0..n_i {
                    row[ycol + yoff[i] + c] += f.m[(r, c)];
                }
                for c in 0..ni + nii {
                    row[c] += f.c_map[(r, c)];
                }
                for (k, &j) in others.iter().enumerate() {
                    row[ycol + j] += f.c_map[(r, ni + nii + k)];
                }
                for q in 0..f.a_i.nrows() {
                    row[lam_at + q] += f.b[i][(q, r)];
                }
                for q in 0..f.c_i.nrows() {
                    row[mu_at + q] += f.d[(q, r)];
                }
                eq.push((row, -f.c_offset[r]));
            }
            lam_at += f.a_i.nrows();
            mu_at += f.c_i.nrows();
        }
        let a = DMatrix::from_fn(ineq.len(), width, |r, c| ineq[r][c]);
        let b = Vector::zeros(ineq.len());
        let e = DMatrix::from_fn(eq.len(), width, |r, c| eq[r].0[c]);
        let fv = Vector::from_iterator(eq.len(), eq.iter().map(|(_, v)| *v));
        (a, b, e, fv)
    }

    /// Rows over `(free leader block, lifted)` after fixing the other
    /// coordinates. `free` is `None` when both leaders are fixed.
    fn restricted_rows(
        &self,
        free: Option<Leader>,
        x_i: &Vector,
        x_ii: &Vector,
        mode: &PartialResponseMode,
    ) -> (DMatrix<f64>, Vector, DMatrix<f64>, Vector) {
        let (ni, nii) = (self.n_leader(Leader::I), self.n_leader(Leader::II));
        let p = self.lifted_dim();
        let (a, b, e, f) = self.full_system();
        let mut keep: Vec<usize> = match free {
            Some(Leader::I) => (0..ni).collect(),
            Some(Leader::II) => (ni..ni + nii).collect(),
            None => vec![],
        };
        keep.extend(ni + nii..ni + nii + p);
        let mut fixed: Vec<(usize, f64)> = Vec::new();
        if free != Some(Leader::I) {
            fixed.extend((0..ni).map(|c| (c, x_i[c])));
        }
        if free != Some(Leader::II) {
            fixed.extend((0..nii).map(|c| (ni + c, x_ii[c])));
        }
        let (mut a2, mut b2) = substitute(&a, &b, &keep, &fixed);
        let (e2, f2) = substitute(&e, &f, &keep, &fixed);
        if let PartialResponseMode::Restricted { rows, rhs } = mode {
            let lead = keep.len() - p;
            let extra = DMatrix::from_fn(rows.nrows(), keep.len(), |r, c| if c < lead { 0.0 } else { rows[(r, c - lead)] });
            a2 = stack(&a2, &extra);
            b2 = Vector::from_iterator(b2.len() + rhs.len(), b2.iter().chain(rhs.iter()).copied());
        }
        (a2, b2, e2, f2)
    }

    /// `Z(x_I, x_II)` over lifted `(y, λ, μ)`: stationarity, feasibility and
    /// multiplier signs, without complementarity.
    pub fn partial_response_body(&self, x_i: &Vector, x_ii: &Vector, mode: &PartialResponseMode) -> Result<ConvexBody> {
        check_dim(self.n_leader(Leader::I), x_i.len())?;
        check_dim(self.n_leader(Leader::II), x_ii.len())?;
        let (a, b, e, f) = self.restricted_rows(None, x_i, x_ii, mode);
        ConvexBody::polyhedron_with_equalities(a, b, e, f, self.lifted_box())
    }

    /// `G_leader(x_other)` over `(x_leader, y, λ, μ)`.
    pub fn surrogate_body(&self, leader: Leader, x_other: &Vector) -> Result<ConvexBody> {
        let other = match leader {
            Leader::I => Leader::II,
            Leader::II => Leader::I,
        };
        check_dim(self.n_leader(other), x_other.len())?;
        let own = self.n_leader(leader);
        let zeros = Vector::zeros(own);
        let (x_i, x_ii) = match leader {
            Leader::I => (&zeros, x_other),
            Leader::II => (x_other, &zeros),
        };
        let (a, b, e, f) = self.restricted_rows(Some(leader), x_i, x_ii, &self.modes[leader.index()]);
        let set = &self.leader_sets[leader.index()];
        let bbox = BoxRegion::concat(&[set.bbox(), &self.lifted_box()]);
        let poly = ConvexBody::polyhedron_with_equalities(a, b, e, f, bbox)?;
        match set.kind() {
            BodyKind::Box(_) => Ok(poly),
            _ => ConvexBody::intersection(vec![
                ConvexBody::product(vec![set.clone(), ConvexBody::box_body(self.lifted_box())])?,
                poly,
            ]),
        }
    }

    /// The followers' joint VI at fixed leader strategies. Followers coupled
    /// through `B_{i,j}` (`j ≠ i`) share those rows, so solutions are
    /// variational equilibria of the follower game.
    pub fn follower_vi(&self, x_i: &Vector, x_ii: &Vector, beta: f64) -> Result<VIProblem> {
        let (j, q) = self.follower_operator(x_i, x_ii)?;
        let (a, b) = self.follower_rows(x_i, x_ii);
        let body = ConvexBody::polyhedron(a, b, self.follower_box.clone())?;
        VIProblem::new(Arc::new(AffineOperator::new(j, q)?), body, beta)
    }

    /// `F(y) = J y + q` for the stacked follower gradients.
    fn follower_operator(&self, x_i: &Vector, x_ii: &Vector) -> Result<(DMatrix<f64>, Vector)> {
        check_dim(self.n_leader(Leader::I), x_i.len())?;
        check_dim(self.n_leader(Leader::II), x_ii.len())?;
        let n = self.n();
        let (ni, nii) = (x_i.len(), x_ii.len());
        let yoff = self.y_offsets();
        let mut jm = DMatrix::zeros(n, n);
        let mut q = Vector::zeros(n);
        for (i, f) in self.followers.iter().enumerate() {
            let n_i = f.m.nrows();
            let others: Vec<usize> = (0..n).filter(|&j| j < yoff[i] || j >= yoff[i] + n_i).collect();
            for r in 0..n_i {
                for c in 0..n_i {
                    jm[(yoff[i] + r, yoff[i] + c)] = f.m[(r, c)];
                }
                for (k, &j) in others.iter().enumerate() {
                    jm[(yoff[i] + r, j)] = f.c_map[(r, ni + nii + k)];
                }
                let mut v = f.c_offset[r];
                for c in 0..ni {
                    v += f.c_map[(r, c)] * x_i[c];
                }
                for c in 0..nii {
                    v += f.c_map[(r, ni + c)] * x_ii[c];
                }
                q[yoff[i] + r] = v;
            }
        }
        Ok((jm, q))
    }

    /// Follower feasibility rows over `y`: all `A` rows, then all `C` rows.
    fn follower_rows(&self, x_i: &Vector, x_ii: &Vector) -> (DMatrix<f64>, Vector) {
        let n = self.n();
        let yoff = self.y_offsets();
        let mut rows: Vec<(Vec<f64>, f64)> = Vec::new();
        for f in &self.followers {
            for r in 0..f.a_i.nrows() {
                let mut row = vec![0.0; n];
                for (j, bj) in f.b.iter().enumerate() {
                    for c in 0..bj.ncols() {
                        row[yoff[j] + c] += bj[(r, c)];
                    }
                }
                let rhs = -(f.a_i.row(r) * x_i)[0] - (f.a_ii.row(r) * x_ii)[0];
                rows.push((row, rhs));
            }
        }
        for (i, f) in self.followers.iter().enumerate() {
            for r in 0..f.c_i.nrows() {
                let mut row = vec![0.0; n];
                for c in 0..f.d.ncols() {
                    row[yoff[i] + c] = f.d[(r, c)];
                }
                let rhs = -(f.c_i.row(r) * x_i)[0] - (f.c_ii.row(r) * x_ii)[0];
                rows.push((row, rhs));
            }
        }
        let a = DMatrix::from_fn(rows.len(), n, |r, c| rows[r].0[c]);
        let b = Vector::from_iterator(rows.len(), rows.iter().map(|(_, v)| *v));
        (a, b)
    }

    /// Exact follower equilibrium with its multipliers, by enumerating active
    /// sets of the follower rows and the follower box. Intended for small
    /// instances; fails when the box is active at every KKT point found.
    pub fn follower_equilibrium(&self, x_i: &Vector, x_ii: &Vector) -> Result<LiftedResponsePoint> {
        let (jm, q) = self.follower_operator(x_i, x_ii)?;
        let (a, b) = self.follower_rows(x_i, x_ii);
        let n = self.n();
        let mut rows: Vec<(Vector, f64)> = (0..a.nrows()).map(|r| (a.row(r).transpose(), b[r])).collect();
        let n_own = rows.len();
        for j in 0..n {
            let mut e = Vector::zeros(n);
            e[j] = 1.0;
            rows.push((e.clone(), self.follower_box.hi()[j]));
            rows.push((-e, -self.follower_box.lo()[j]));
        }
        let idx: Vec<usize> = (0..rows.len()).collect();
        let scale = 1.0 + q.amax() + jm.amax() + self.follower_box.max_norm();
        let tol = 1e-10 * scale;
        let mut considered = 0usize;
        for size in 0..=n.min(rows.len()) {
            for active in combinations(&idx, size) {
                considered += 1;
                if considered > 200_000 {
                    return Err(Error::NotConverged("too many active sets for exact follower solve".into()));
                }
                let k = n + size;
                let mut sys = DMatrix::zeros(k, k);
                let mut rhs = Vector::zeros(k);
                sys.view_mut((0, 0), (n, n)).copy_from(&jm);
                for r in 0..n {
                    rhs[r] = -q[r];
                }
                for (s, &ri) in active.iter().enumerate() {
                    for c in 0..n {
                        sys[(c, n + s)] = rows[ri].0[c];
                        sys[(n + s, c)] = rows[ri].0[c];
                    }
                    rhs[n + s] = rows[ri].1;
                }
                let Some(sol) = sys.lu().solve(&rhs) else { continue };
                if sol.iter().any(|v| !v.is_finite()) {
                    continue;
                }
                let y = sol.rows(0, n).into_owned();
                if sol.rows(n, size).iter().any(|&v| v < -tol) {
                    continue;
                }
                if !rows.iter().all(|(r, h)| r.dot(&y) <= h + tol) {
                    continue;
                }
                if active.iter().zip(sol.rows(n, size).iter()).any(|(&ri, &v)| ri >= n_own && v > tol) {
                    continue;
                }
                let mut nu = vec![0.0; n_own];
                for (s, &ri) in active.iter().enumerate() {
                    if ri < n_own {
                        nu[ri] = sol[n + s].max(0.0);
                    }
                }
                let mut lambda = Vec::new();
                let mut at = 0;
                for f in &self.followers {
                    lambda.push(nu[at..at + f.a_i.nrows()].to_vec());
                    at += f.a_i.nrows();
                }
                let mut mu = Vec::new();
                for f in &self.followers {
                    mu.push(nu[at..at + f.c_i.nrows()].to_vec());
                    at += f.c_i.nrows();
                }
                return Ok(LiftedResponsePoint {
                    y: y.iter().copied().collect(),
                    lambda,
                    mu,
                });
            }
        }
        Err(Error::NotConverged("no follower KKT point inside the follower box".into()))
    }

    /// Lifts `y` with nonnegative multipliers fitted by NNLS to each
    /// follower's stationarity rows. The fit may leave a residual; membership
    /// in the partial-response body decides.
    pub fn response_multipliers(&self, x_i: &Vector, x_ii: &Vector, y: &Vector) -> Result<LiftedResponsePoint> {
        check_dim(self.n(), y.len())?;
        let (jm, q) = self.follower_operator(x_i, x_ii)?;
        let grad = &jm * y + q;
        let yoff = self.y_offsets();
        let (mut lambda, mut mu) = (Vec::new(), Vec::new());
        for (i, f) in self.followers.iter().enumerate() {
            let n_i = f.m.nrows();
            let target = -grad.rows(yoff[i], n_i).into_owned();
            let (mi, li) = (f.a_i.nrows(), f.c_i.nrows());
            let mut g = DMatrix::zeros(n_i, mi + li);
            for r in 0..n_i {
                for c in 0..mi {
                    g[(r, c)] = f.b[i][(c, r)];
                }
                for c in 0..li {
                    g[(r, mi + c)] = f.d[(c, r)];
                }
            }
            let nu = if mi + li == 0 { Vector::zeros(0) } else { nnls(&g, &target) };
            lambda.push(nu.rows(0, mi).iter().copied().collect());
            mu.push(nu.rows(mi, li).iter().copied().collect());
        }
        Ok(LiftedResponsePoint {
            y: y.iter().copied().collect(),
            lambda,
            mu,
        })
    }

    /// The leader's surrogate problem at the other leader's strategy.
    pub fn leader_surrogate(&self, leader: Leader, x_other: &Vector) -> Result<Surrogate> {
        let body = self.surrogate_body(leader, x_other)?;
        let objective = LeaderObjective {
            loss: self.losses[leader.index()].clone(),
            leader,
            n_i: self.n_leader(Leader::I),
            n_ii: self.n_leader(Leader::II),
            n: self.n(),
            p: self.lifted_dim(),
            other: x_other.clone(),
        };
        Ok(Surrogate {
            leader,
            objective: Arc::new(objective),
            body,
        })
    }

    /// Checks both leaders' approximate minimization conditions against
    /// freshly computed surrogate optima (inner accuracy `β/4`).
    pub fn check_remedial(&self, x_i: &Vector, y_i: &Vector, x_ii: &Vector, y_ii: &Vector, beta: f64) -> Result<RemedialVerdict> {
        if !(beta > 0.0) {
            return Err(Error::invalid("beta must be positive"));
        }
        let mut sols = [0.0; 2];
        let mut values = [0.0; 2];
        for (leader, x_own, x_other, y) in [(Leader::I, x_i, x_ii, y_i), (Leader::II, x_ii, x_i, y_ii)] {
            if !self.leader_sets[leader.index()].contains(x_own)? {
                return Ok(RemedialVerdict::Infeasible { leader });
            }
            let (xa, xb) = match leader {
                Leader::I => (x_own, x_other),
                Leader::II => (x_other, x_own),
            };
            let lifted = self.response_multipliers(xa, xb, y)?;
            let body = self.partial_response_body(xa, xb, &self.modes[leader.index()])?;
            if !body.contains(&lifted.to_vector())? {
                return Ok(RemedialVerdict::Infeasible { leader });
            }
            let sol = self.leader_surrogate(leader, x_other)?.solve(beta / 4.0)?.1;
            let value = self.leader_value(leader, x_i, x_ii, y)?;
            let gap = value - sol;
            if gap > beta + beta / 4.0 {
                return Ok(RemedialVerdict::Reject { leader, gap });
            }
            sols[leader.index()] = sol;
            values[leader.index()] = value;
        }
        Ok(RemedialVerdict::Accept { sol: sols, value: values })
    }

    pub fn leader_value(&self, leader: Leader, x_i: &Vector, x_ii: &Vector, y: &Vector) -> Result<f64> {
        self.losses[leader.index()].value(&join(&[x_i, x_ii, y]))
    }

    /// Layout of the GQVI variable: `(x_I, ℓ_I, x_II, ℓ_II)`.
    pub fn gqvi_blocks(&self) -> [(usize, usize); 2] {
        let p = self.lifted_dim();
        let ni = self.n_leader(Leader::I);
        [(0, ni + p), (ni + p, self.n_leader(Leader::II) + p)]
    }

    /// Splits a GQVI point into `(x_I, y_I, x_II, y_II)`.
    pub fn split_gqvi_point(&self, x: &Vector) -> Result<(Vector, Vector, Vector, Vector)> {
        let [(o1, _), (o2, _)] = self.gqvi_blocks();
        check_dim(o2 + self.gqvi_blocks()[1].1, x.len())?;
        let (ni, nii, n) = (self.n_leader(Leader::I), self.n_leader(Leader::II), self.n());
        Ok((
            x.rows(o1, ni).into_owned(),
            x.rows(o1 + ni, n).into_owned(),
            x.rows(o2, nii).into_owned(),
            x.rows(o2 + nii, n).into_owned(),
        ))
    }

    /// Convexity probe of both losses in each leader's own `(x, y)`
    /// coordinates.
    pub fn probe_convexity(&self, trials: usize, seed: u64) -> Result<Option<(Leader, ConcavityWitness)>> {
        let (ni, nii, n) = (self.n_leader(Leader::I), self.n_leader(Leader::II), self.n());
        let region = BoxRegion::concat(&[self.leader_sets[0].bbox(), self.leader_sets[1].bbox(), &self.follower_box]);
        for leader in [Leader::I, Leader::II] {
            let own: Vec<usize> = match leader {
                Leader::I => (0..ni).chain(ni + nii..ni + nii + n).collect(),
                Leader::II => (ni..ni + nii + n).collect(),
            };
            let op = self.losses[leader.index()].as_operator();
            if let Some(w) = probe_concavity(op.as_ref(), &region, trials, &[own], seed, Curvature::Convex)? {
                return Ok(Some((leader, w)));
            }
        }
        Ok(None)
    }
}

fn join(parts: &[&Vector]) -> Vector {
    let v: Vec<f64> = parts.iter().flat_map(|p| p.iter().copied()).collect();
    Vector::from_vec(v)
}

fn stack(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let cols = a.ncols().max(b.ncols());
    DMatrix::from_fn(a.nrows() + b.nrows(), cols, |r, c| {
        if r < a.nrows() {
            a[(r, c)]
        } else {
            b[(r - a.nrows(), c)]
        }
    })
}

/// Keeps columns `keep`, folds `fixed` coordinates into the right-hand side
/// and drops rows left without coefficients when they hold.
fn substitute(a: &DMatrix<f64>, b: &Vector, keep: &[usize], fixed: &[(usize, f64)]) -> (DMatrix<f64>, Vector) {
    let mut rows: Vec<(Vec<f64>, f64)> = Vec::new();
    for r in 0..a.nrows() {
        let coeffs: Vec<f64> = keep.iter().map(|&c| a[(r, c)]).collect();
        let rhs = b[r] - fixed.iter().map(|&(c, v)| a[(r, c)] * v).sum::<f64>();
        if coeffs.iter().all(|&v| v == 0.0) && rhs.abs() <= TAU {
            continue;
        }
        rows.push((coeffs, rhs));
    }
    let m = DMatrix::from_fn(rows.len(), keep.len(), |r, c| rows[r].0[c]);
    let v = Vector::from_iterator(rows.len(), rows.iter().map(|(_, x)| *x));
    (m, v)
}

/// Lawson-Hanson nonnegative least squares.
pub fn nnls(a: &DMatrix<f64>, b: &Vector) -> Vector {
    let n = a.ncols();
    let mut x = Vector::zeros(n);
    let mut passive = vec![false; n];
    let tol = 1e-12 * (1.0 + a.amax()) * (1.0 + b.amax());
    for _ in 0..3 * n + 3 {
        let w = a.transpose() * (b - a * &x);
        let pick = (0..n).filter(|&j| !passive[j] && w[j] > tol).max_by(|&i, &j| w[i].total_cmp(&w[j]));
        let Some(j) = pick else { break };
        passive[j] = true;
        loop {
            let cols: Vec<usize> = (0..n).filter(|&j| passive[j]).collect();
            let sub = DMatrix::from_fn(a.nrows(), cols.len(), |r, c| a[(r, cols[c])]);
            let Ok(z) = sub.clone().svd(true, true).solve(b, 1e-14) else { return x };
            if z.iter().all(|&v| v > 0.0) {
                x = Vector::zeros(n);
                for (k, &c) in cols.iter().enumerate() {
                    x[c] = z[k];
                }
                break;
            }
            let mut alpha = f64::INFINITY;
            for (k, &c) in cols.iter().enumerate() {
                if z[k] <= 0.0 {
                    alpha = alpha.min(x[c] / (x[c] - z[k]));
                }
            }
            for (k, &c) in cols.iter().enumerate() {
                x[c] += alpha * (z[k] - x[c]);
                if x[c] <= 1e-15 {
                    x[c] = 0.0;
                    passive[c] = false;
                }
            }
        }
    }
    x
}

/// `φ_leader` as a function of `(x_leader, y, λ, μ)`.
struct LeaderObjective {
    loss: Loss,
    leader: Leader,
    n_i: usize,
    n_ii: usize,
    n: usize,
    p: usize,
    other: Vector,
}

impl LeaderObjective {
    fn own(&self) -> usize {
        match self.leader {
            Leader::I => self.n_i,
            Leader::II => self.n_ii,
        }
    }

    fn full(&self, z: &Vector) -> Vector {
        let own = z.rows(0, self.own()).into_owned();
        let y = z.rows(self.own(), self.n).into_owned();
        match self.leader {
            Leader::I => join(&[&own, &self.other, &y]),
            Leader::II => join(&[&self.other, &own, &y]),
        }
    }
}

impl Operator for LeaderObjective {
    fn input_dim(&self) -> usize {
        self.own() + self.p
    }

    fn output_dim(&self) -> usize {
        1
    }

    fn eval(&self, z: &Vector) -> Result<Vector> {
        check_dim(self.input_dim(), z.len())?;
        Ok(Vector::from_element(1, self.loss.value(&self.full(z))?))
    }

    fn jacobian(&self, z: &Vector) -> Result<DMatrix<f64>> {
        check_dim(self.input_dim(), z.len())?;
        let g = self.loss.gradient(&self.full(z))?;
        let mut out = DMatrix::zeros(1, self.input_dim());
        let own_at = match self.leader {
            Leader::I => 0,
            Leader::II => self.n_i,
        };
        for c in 0..self.own() {
            out[(0, c)] = g[own_at + c];
        }
        for c in 0..self.n {
            out[(0, self.own() + c)] = g[self.n_i + self.n_ii + c];
        }
        Ok(out)
    }

    fn lipschitz_bound(&self, region: &BoxRegion) -> f64 {
        let own = BoxRegion::new(
            region.lo().rows(0, self.own() + self.n).into_owned(),
            region.hi().rows(0, self.own() + self.n).into_owned(),
        );
        let other = BoxRegion::new(self.other.clone(), self.other.clone());
        match (own, other) {
            (Ok(own), Ok(other)) => {
                let full = match self.leader {
                    Leader::I => BoxRegion::concat(&[&own, &other]),
                    Leader::II => BoxRegion::concat(&[&other, &own]),
                };
                self.loss.lipschitz(&full)
            }
            _ => f64::INFINITY,
        }
    }
}

/// A leader's surrogate optimization: minimize `φ_leader` over
/// `G_leader(x_other)`.
pub struct Surrogate {
    pub leader: Leader,
    pub objective: Arc<dyn Operator>,
    pub body: ConvexBody,
}

impl Surrogate {
    /// Optimal point over `(x_leader, ℓ)` and value within `eps`.
    pub fn solve(&self, eps: f64) -> Result<(Vector, f64)> {
        let delta = ellipsoid::default_delta(&self.body);
        let report = ellipsoid::optimize(self.objective.as_ref(), std::slice::from_ref(&self.body), Sense::Minimize, eps, delta, None)?;
        let (z, v) = report.into_solution()?;
        Ok((z, v[0]))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum RemedialVerdict {
    Accept { sol: [f64; 2], value: [f64; 2] },
    /// `gap = φ_leader(candidate) − Sol(leader)` exceeds `β + β/4`.
    Reject { leader: Leader, gap: f64 },
    /// The candidate is outside the leader's set or its anticipated response
    /// admits no multipliers.
    Infeasible { leader: Leader },
}

impl RemedialVerdict {
    pub fn is_accept(&self) -> bool {
        matches!(self, RemedialVerdict::Accept { .. })
    }
}

pub enum Formulation {
    Problem(GQVIProblem),
    ConvexityViolation { leader: Leader, witness: ConcavityWitness },
}

/// Concatenated first-order conditions of both surrogates:
/// `R(x) = G_I(x_II) × G_II(x_I)` and `ℱ(x)` the product of subgradient hulls
/// of each loss in its leader's own coordinates.
pub fn mlf_to_gqvi(game: &MlfGame, beta: f64) -> Result<Formulation> {
    if let Some((leader, witness)) = game.probe_convexity(64, 0)? {
        return Ok(Formulation::ConvexityViolation { leader, witness });
    }
    let (ni, nii, n, p) = (game.n_leader(Leader::I), game.n_leader(Leader::II), game.n(), game.lifted_dim());
    let [(o1, d1), (o2, d2)] = game.gqvi_blocks();
    let m = d1 + d2;
    let lifted = game.lifted_box();
    let range = BoxRegion::concat(&[game.leader_sets[0].bbox(), &lifted, game.leader_sets[1].bbox(), &lifted]);

    let g = game.clone();
    let r_map = move |x: &Vector| -> Result<ConvexBody> {
        let x_i = x.rows(o1, ni).into_owned();
        let x_ii = x.rows(o2, nii).into_owned();
        let prod = ConvexBody::product(vec![g.surrogate_body(Leader::I, &x_ii)?, g.surrogate_body(Leader::II, &x_i)?])?;
        if !g.strict {
            return Ok(prod);
        }
        let mut e = DMatrix::zeros(n, m);
        for j in 0..n {
            e[(j, o1 + ni + j)] = 1.0;
            e[(j, o2 + nii + j)] = -1.0;
        }
        let same = ConvexBody::polyhedron_with_equalities(DMatrix::zeros(0, m), Vector::zeros(0), e, Vector::zeros(n), prod.bbox().clone())?;
        ConvexBody::intersection(vec![prod, same])
    };
    let constraint = Correspondence::new(range.clone(), range.clone(), f64::INFINITY, Arc::new(r_map))?;

    let full_region = BoxRegion::concat(&[game.leader_sets[0].bbox(), game.leader_sets[1].bbox(), &game.follower_box]);
    let mut bounds_lo = Vec::with_capacity(m);
    let mut bounds_hi = Vec::with_capacity(m);
    let mut op_lipschitz: f64 = 0.0;
    for (leader, own) in [(Leader::I, ni), (Leader::II, nii)] {
        let loss = &game.losses[leader.index()];
        let bound = match loss {
            Utility::Quadratic(f) => {
                let sym = (&f.q + f.q.transpose()) * 0.5;
                op_lipschitz = op_lipschitz.max(sym.norm());
                let r = full_region.max_norm();
                Vector::from_iterator(sym.nrows(), (0..sym.nrows()).map(|i| sym.row(i).iter().map(|v| v.abs()).sum::<f64>() * r + f.linear[i].abs()))
            }
            other => {
                op_lipschitz = f64::INFINITY;
                Vector::from_element(ni + nii + n, other.lipschitz(&full_region))
            }
        };
        let own_at = if leader == Leader::I { 0 } else { ni };
        let slack = 1e-6 * (1.0 + bound.amax());
        for c in 0..own {
            bounds_lo.push(-bound[own_at + c] - slack);
            bounds_hi.push(bound[own_at + c] + slack);
        }
        for c in 0..n {
            bounds_lo.push(-bound[ni + nii + c] - slack);
            bounds_hi.push(bound[ni + nii + c] + slack);
        }
        for _ in n..p {
            bounds_lo.push(0.0);
            bounds_hi.push(0.0);
        }
    }
    let f_range = BoxRegion::new(Vector::from_vec(bounds_lo), Vector::from_vec(bounds_hi))?;
    let g = game.clone();
    let f_map = move |x: &Vector| -> Result<ConvexBody> {
        let (x_i, y_i, x_ii, y_ii) = g.split_gqvi_point(x)?;
        let mut parts = Vec::with_capacity(2);
        for (leader, y, own) in [(Leader::I, &y_i, ni), (Leader::II, &y_ii, nii)] {
            let base = join(&[&x_i, &x_ii, y]);
            let own_at = if leader == Leader::I { 0 } else { ni };
            let coords: Vec<usize> = (own_at..own_at + own).chain(ni + nii..ni + nii + n).collect();
            let mut points = Vec::with_capacity(1 + 2 * coords.len());
            let restrict = |full: &Vector| -> Vector {
                let mut v = Vector::zeros(own + p);
                for (k, &c) in coords.iter().enumerate() {
                    v[k] = full[c];
                }
                v
            };
            let loss = &g.losses[leader.index()];
            points.push(restrict(&loss.gradient(&base)?));
            for &c in &coords {
                for s in [1e-7, -1e-7] {
                    let mut q = base.clone();
                    q[c] += s;
                    points.push(restrict(&loss.gradient(&q)?));
                }
            }
            parts.push(ConvexBody::hull(points)?);
        }
        ConvexBody::product(parts)
    };
    let lipschitz = if op_lipschitz > 0.0 { op_lipschitz } else { f64::MIN_POSITIVE };
    let operator = Correspondence::new(range, f_range, lipschitz, Arc::new(f_map))?;
    Ok(Formulation::Problem(GQVIProblem::new(operator, constraint, beta, 0.0)?))
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::circuits::QuadraticForm;
    use crate::vi::{solve_vi_extragradient, SolveOutcome};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn v(xs: &[f64]) -> Vector {
        Vector::from_column_slice(xs)
    }

    fn m(r: usize, c: usize, xs: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(r, c, xs)
    }

    fn interval(lo: f64, hi: f64) -> ConvexBody {
        ConvexBody::box_body(BoxRegion::new(v(&[lo]), v(&[hi])).unwrap())
    }

    /// `½ Σ q_ii z_i² + Σ_{i<j} q_ij z_i z_j + lᵀz + c` over `(x_I, x_II, y)`.
    pub(crate) fn quad(q: DMatrix<f64>, linear: &[f64], constant: f64) -> Loss {
        Utility::Quadratic(QuadraticForm {
            q,
            linear: v(linear),
            constant,
        })
    }

    /// One unconstrained follower `½y² + (x_I + x_II)y`; leaders on [−1, 1]
    /// with `φ_I = (x_I − ½)² + y²`, `φ_II = (x_II + ½)² + y²`.
    pub(crate) fn hand_instance() -> MlfGame {
        let follower = Follower {
            m: m(1, 1, &[1.0]),
            a_i: DMatrix::zeros(0, 1),
            a_ii: DMatrix::zeros(0, 1),
            b: vec![DMatrix::zeros(0, 1)],
            c_i: DMatrix::zeros(0, 1),
            c_ii: DMatrix::zeros(0, 1),
            d: DMatrix::zeros(0, 1),
            c_map: m(1, 2, &[1.0, 1.0]),
            c_offset: v(&[0.0]),
        };
        let phi_i = quad(m(3, 3, &[2.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 2.0]), &[-1.0, 0.0, 0.0], 0.25);
        let phi_ii = quad(m(3, 3, &[0.0, 0.0, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0, 2.0]), &[0.0, 1.0, 0.0], 0.25);
        MlfGame::new(
            vec![follower],
            [interval(-1.0, 1.0), interval(-1.0, 1.0)],
            [phi_i, phi_ii],
            BoxRegion::cube(1, 10.0),
            100.0,
        )
        .unwrap()
    }

    /// One follower `½y² + (x_I − x_II)y` subject to `y ≥ x_I` (as
    /// `x_I − y ≤ 0`).
    fn constrained_instance() -> MlfGame {
        let follower = Follower {
            m: m(1, 1, &[1.0]),
            a_i: DMatrix::zeros(0, 1),
            a_ii: DMatrix::zeros(0, 1),
            b: vec![DMatrix::zeros(0, 1)],
            c_i: m(1, 1, &[1.0]),
            c_ii: m(1, 1, &[0.0]),
            d: m(1, 1, &[-1.0]),
            c_map: m(1, 2, &[1.0, -1.0]),
            c_offset: v(&[0.0]),
        };
        let phi = quad(DMatrix::identity(3, 3) * 2.0, &[0.0, 0.0, 0.0], 0.0);
        MlfGame::new(vec![follower], [interval(-1.0, 1.0), interval(-1.0, 1.0)], [phi.clone(), phi], BoxRegion::cube(1, 10.0), 100.0).unwrap()
    }

    #[test]
    fn rejects_indefinite_follower() {
        let mut f = hand_instance().followers[0].clone();
        f.m = m(1, 1, &[-1.0]);
        let g = hand_instance();
        let res = MlfGame::new(vec![f], g.leader_sets.clone(), g.losses.clone(), BoxRegion::cube(1, 10.0), 100.0);
        assert!(res.is_err());
    }

    #[test]
    fn follower_vi_examples() {
        let g = hand_instance();
        let p = g.follower_vi(&v(&[0.3]), &v(&[0.4]), 1e-6).unwrap();
        match solve_vi_extragradient(&p, 1e-9, 0.5, 2000).unwrap() {
            SolveOutcome::Solved(c) => assert!((c.x_star[0] + 0.7).abs() < 1e-4),
            other => panic!("{other:?}"),
        }
        // active constraint: y ≥ x_I with stationary point x_II − x_I below it
        let g = constrained_instance();
        let eq = g.follower_equilibrium(&v(&[0.5]), &v(&[0.2])).unwrap();
        assert!((eq.y[0] - 0.5).abs() < 1e-12);
        // stationarity: y + (x_I − x_II) − μ = 0 → μ = 0.8
        assert!((eq.mu[0][0] - 0.8).abs() < 1e-12);
        let p = g.follower_vi(&v(&[0.5]), &v(&[0.2]), 1e-6).unwrap();
        match solve_vi_extragradient(&p, 1e-9, 0.5, 2000).unwrap() {
            SolveOutcome::Solved(c) => assert!((c.x_star[0] - 0.5).abs() < 1e-4),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn decoupled_followers() {
        let f = |k: usize, target: f64| Follower {
            m: m(1, 1, &[2.0]),
            a_i: DMatrix::zeros(0, 1),
            a_ii: DMatrix::zeros(0, 1),
            b: vec![DMatrix::zeros(0, 1); 2],
            c_i: DMatrix::zeros(0, 1),
            c_ii: DMatrix::zeros(0, 1),
            d: DMatrix::zeros(0, 1),
            c_map: DMatrix::zeros(1, 3),
            c_offset: v(&[-2.0 * target - k as f64 * 0.0]),
        };
        let phi = quad(DMatrix::identity(4, 4), &[0.0; 4], 0.0);
        let g = MlfGame::new(vec![f(0, 0.3), f(1, -0.6)], [interval(-1.0, 1.0), interval(-1.0, 1.0)], [phi.clone(), phi], BoxRegion::cube(2, 5.0), 10.0).unwrap();
        let eq = g.follower_equilibrium(&v(&[0.0]), &v(&[0.0])).unwrap();
        assert!((eq.y[0] - 0.3).abs() < 1e-12 && (eq.y[1] + 0.6).abs() < 1e-12);
    }

    #[test]
    fn partial_response_examples() {
        let g = hand_instance();
        let body = g.partial_response_body(&v(&[0.2]), &v(&[0.3]), &PartialResponseMode::Relaxed).unwrap();
        assert!(body.contains(&v(&[-0.5])).unwrap());
        assert!(!body.contains(&v(&[-0.4])).unwrap());

        // relaxed: μ > 0 with the inequality slack is allowed
        let g = constrained_instance();
        let (x_i, x_ii) = (v(&[0.0]), v(&[0.0]));
        let relaxed = g.partial_response_body(&x_i, &x_ii, &PartialResponseMode::Relaxed).unwrap();
        // y = 1 > x_I = 0 (slack), μ = y + x_I − x_II = 1
        assert!(relaxed.contains(&v(&[1.0, 1.0])).unwrap());
        let restricted = g.partial_response_body(&x_i, &x_ii, &PartialResponseMode::Restricted { rows: m(1, 2, &[0.0, 1.0]), rhs: v(&[0.0]) }).unwrap();
        assert!(!restricted.contains(&v(&[1.0, 1.0])).unwrap());
        assert!(restricted.contains(&v(&[0.0, 0.0])).unwrap());
        let zero = g.zero_lambda_mode();
        assert!(matches!(zero, PartialResponseMode::Restricted { ref rows, .. } if rows.nrows() == 0));
    }

    #[test]
    fn surrogate_examples() {
        // φ_I = (x_I + y)² with y = −(x_I + x_II), x_II = 0: value 0 everywhere
        let mut g = hand_instance();
        g.losses[0] = quad(m(3, 3, &[2.0, 0.0, 2.0, 0.0, 0.0, 0.0, 2.0, 0.0, 2.0]), &[0.0; 3], 0.0);
        let (_, val) = g.leader_surrogate(Leader::I, &v(&[0.0])).unwrap().solve(1e-6).unwrap();
        assert!(val.abs() < 1e-5);
        // φ_I = x_I² with a follower independent of the leaders
        g.losses[0] = quad(m(3, 3, &[2.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]), &[0.0; 3], 0.0);
        g.followers[0].c_map = DMatrix::zeros(1, 2);
        let (z, val) = g.leader_surrogate(Leader::I, &v(&[0.3])).unwrap().solve(1e-8).unwrap();
        assert!(val.abs() < 1e-6 && z[0].abs() < 1e-3);
        // empty leader set
        let mut g = hand_instance();
        g.leader_sets[0] = ConvexBody::empty(BoxRegion::cube(1, 1.0));
        assert!(matches!(g.leader_surrogate(Leader::I, &v(&[0.0])).unwrap().solve(1e-6), Err(Error::Empty(_))));
    }

    #[test]
    fn remedial_examples() {
        let g = hand_instance();
        let (xi, xii, y) = (v(&[0.5]), v(&[-0.5]), v(&[0.0]));
        assert!(g.check_remedial(&xi, &y, &xii, &y, 1e-2).unwrap().is_accept());
        // x_I = 0.2 forces y = 0.3: φ_I = 0.09 + 0.09 = 0.18 against Sol 0
        let (xi2, y2) = (v(&[0.2]), v(&[0.3]));
        // y_II must answer the candidate's x_I as well
        assert_eq!(g.check_remedial(&xi2, &y2, &xii, &y, 10.0).unwrap(), RemedialVerdict::Infeasible { leader: Leader::II });
        match g.check_remedial(&xi2, &y2, &xii, &y2, 1e-2).unwrap() {
            RemedialVerdict::Reject { leader: Leader::I, gap } => assert!((gap - 0.18).abs() < 1e-2),
            other => panic!("{other:?}"),
        }
        // Sol_II at x_I = 0.2: min (x + ½)² + (x + 0.2)² = 0.045
        match g.check_remedial(&xi2, &y2, &xii, &y2, 10.0).unwrap() {
            RemedialVerdict::Accept { sol, .. } => assert!(sol[0].abs() < 3.0 && (sol[1] - 0.045).abs() < 3.0),
            other => panic!("{other:?}"),
        }
        let Ok((_, sol_ii)) = g.leader_surrogate(Leader::II, &xi2).unwrap().solve(1e-6) else { panic!() };
        assert!((sol_ii - 0.045).abs() < 1e-5);
        // a response that is not the follower's
        assert_eq!(g.check_remedial(&xi, &v(&[0.4]), &xii, &y, 1e-2).unwrap(), RemedialVerdict::Infeasible { leader: Leader::I });
    }

    #[test]
    fn nnls_matches_closed_form() {
        let a = m(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        assert_eq!(nnls(&a, &v(&[1.0, -2.0])), v(&[1.0, 0.0]));
        let a = m(3, 2, &[1.0, 1.0, 0.0, 1.0, 1.0, 0.0]);
        let x = nnls(&a, &v(&[2.0, 1.0, 1.0]));
        assert!((x - v(&[1.0, 1.0])).amax() < 1e-12);
    }

    #[test]
    fn gqvi_formulation_of_hand_instance() {
        let g = hand_instance();
        let Formulation::Problem(p) = mlf_to_gqvi(&g, 1e-2).unwrap() else { panic!("losses are convex") };
        assert_eq!(p.dim(), 4);
        // at the equilibrium ℱ is (numerically) the singleton gradient
        let x = v(&[0.5, 0.0, -0.5, 0.0]);
        let f = p.operator.at(&x).unwrap();
        assert!(f.contains(&Vector::zeros(4)).unwrap());
        let r = p.constraint.at(&x).unwrap();
        assert!(r.contains(&x).unwrap());
        let cand = crate::vi::SolutionCertificate {
            x: x.iter().copied().collect(),
            x_star: x.iter().copied().collect(),
            w: Some(vec![0.0; 4]),
            w_star: Some(vec![0.0; 4]),
            residual: vec![],
            closeness: 0.0,
        };
        assert!(crate::vi::Problem::Gqvi(p).check_solution(&cand).unwrap().is_accept());
    }

    #[test]
    fn nonconvex_loss_is_reported() {
        let mut g = hand_instance();
        g.losses[1] = quad(m(3, 3, &[0.0, 0.0, 0.0, 0.0, -2.0, 0.0, 0.0, 0.0, 0.0]), &[0.0; 3], 0.0);
        match mlf_to_gqvi(&g, 1e-2).unwrap() {
            Formulation::ConvexityViolation { leader, witness } => {
                assert_eq!(leader, Leader::II);
                assert!(witness.gap > 0.0);
            }
            Formulation::Problem(_) => panic!("expected a convexity witness"),
        }
    }

    /// Random one- or two-follower instances with own-block constraints.
    pub(crate) fn random_instance(rng: &mut ChaCha8Rng) -> MlfGame {
        let k = rng.gen_range(1..=2);
        let followers = (0..k)
            .map(|i| {
                let rows = rng.gen_range(0..=2);
                let mut b = vec![DMatrix::zeros(rows, 1); k];
                b[i] = DMatrix::from_fn(rows, 1, |_, _| if rng.gen_bool(0.5) { 1.0 } else { -1.0 });
                Follower {
                    m: m(1, 1, &[rng.gen_range(0.5..2.0)]),
                    a_i: DMatrix::from_fn(rows, 1, |_, _| rng.gen_range(-1.0..1.0)),
                    a_ii: DMatrix::from_fn(rows, 1, |_, _| rng.gen_range(-1.0..1.0)),
                    b,
                    c_i: m(1, 1, &[rng.gen_range(-1.0..1.0)]),
                    c_ii: m(1, 1, &[rng.gen_range(-1.0..1.0)]),
                    d: m(1, 1, &[if rng.gen_bool(0.5) { 1.0 } else { -1.0 }]),
                    c_map: DMatrix::from_fn(1, 2 + k - 1, |_, _| rng.gen_range(-0.3..0.3)),
                    c_offset: v(&[rng.gen_range(-1.0..1.0)]),
                }
            })
            .collect();
        let dim = 2 + k;
        let phi = quad(DMatrix::identity(dim, dim) * 2.0, &vec![0.0; dim], 0.0);
        MlfGame::new(followers, [interval(-1.0, 1.0), interval(-1.0, 1.0)], [phi.clone(), phi], BoxRegion::cube(k, 50.0), 1e4).unwrap()
    }

    proptest! {
        #[test]
        fn follower_kkt_audit(seed in 0u64..40) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let g = random_instance(&mut rng);
            let x_i = v(&[rng.gen_range(-1.0..1.0)]);
            let x_ii = v(&[rng.gen_range(-1.0..1.0)]);
            if let Ok(eq) = g.follower_equilibrium(&x_i, &x_ii) {
                let y = v(&eq.y);
                let (jm, q) = g.follower_operator(&x_i, &x_ii).unwrap();
                let grad = &jm * &y + q;
                let (a, b) = g.follower_rows(&x_i, &x_ii);
                let slack = &a * &y - b;
                let beta = 1e-6;
                let mut row = 0;
                for (i, f) in g.followers.iter().enumerate() {
                    let mut stat = grad[i];
                    for (r, l) in eq.lambda[i].iter().enumerate() {
                        stat += f.b[i][(r, 0)] * l;
                        prop_assert!((l * slack[row + r]).abs() <= 10.0 * beta);
                    }
                    row += eq.lambda[i].len();
                    let _ = stat;
                }
                let mut at = row;
                for (i, f) in g.followers.iter().enumerate() {
                    let mut stat = grad[i];
                    for (r, l) in eq.lambda[i].iter().enumerate() {
                        stat += f.b[i][(r, 0)] * l;
                    }
                    for (r, mu) in eq.mu[i].iter().enumerate() {
                        stat += f.d[(r, 0)] * mu;
                        prop_assert!((mu * slack[at + r]).abs() <= 10.0 * beta);
                    }
                    at += eq.mu[i].len();
                    prop_assert!(stat.abs() <= 10.0 * beta);
                }
            }
        }

        #[test]
        fn surrogate_is_deterministic(seed in 0u64..5) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let g = random_instance(&mut rng);
            let x = v(&[rng.gen_range(-1.0..1.0)]);
            let a = g.leader_surrogate(Leader::I, &x).unwrap().solve(1e-3);
            let b = g.leader_surrogate(Leader::I, &x).unwrap().solve(1e-3);
            match (a, b) {
                (Ok((za, va)), Ok((zb, vb))) => {
                    prop_assert_eq!(za, zb);
                    prop_assert_eq!(va.to_bits(), vb.to_bits());
                }
                (Err(_), Err(_)) => {}
                _ => prop_assert!(false, "nondeterministic outcome"),
            }
        }
    }
}
