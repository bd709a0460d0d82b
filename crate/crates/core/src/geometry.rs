//! Convex bodies and correspondences given by separation oracles.
//!
//! Every body answers membership queries with an [`OracleAnswer`]: either a
//! membership flag (`b = 1`) or a separating normal `a` with `‖a‖∞ = 1` such
//! that `⟨a, y − z⟩ ≤ 0` for every `y` in the body (`b = 0`). Closed-form
//! bodies (boxes, balls, polyhedra, points, finite hulls) are answered exactly;
//! bodies known only through a user oracle fall back to approximate routines.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{check_dim, Error, Result};

pub type Vector = DVector<f64>;

/// Absolute tolerance for membership comparisons.
pub const TAU: f64 = 1e-9;
/// Half-width of the slab that realizes an equality row.
pub const TAU_EQ: f64 = 1e-7;

/// Rescales `v` to unit infinity norm. Zero vectors are returned unchanged.
pub fn normalize_inf(v: Vector) -> Vector {
    let m = v.amax();
    if m > 0.0 {
        v / m
    } else {
        v
    }
}

/// An axis-aligned box `[lo, hi]`.
#[derive(Clone, Debug, PartialEq)]
pub struct BoxRegion {
    lo: Vector,
    hi: Vector,
}

impl BoxRegion {
    pub fn new(lo: Vector, hi: Vector) -> Result<Self> {
        check_dim(lo.len(), hi.len())?;
        if lo.is_empty() {
            return Err(Error::invalid("box dimension must be positive"));
        }
        for (l, h) in lo.iter().zip(hi.iter()) {
            if !l.is_finite() || !h.is_finite() {
                return Err(Error::invalid("box bounds must be finite"));
            }
            if l > h {
                return Err(Error::invalid(format!("box bound lo {l} exceeds hi {h}")));
            }
        }
        Ok(BoxRegion { lo, hi })
    }

    /// `[-half, half]^dim`.
    pub fn cube(dim: usize, half: f64) -> Self {
        BoxRegion {
            lo: Vector::from_element(dim, -half),
            hi: Vector::from_element(dim, half),
        }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn lo(&self) -> &Vector {
        &self.lo
    }

    pub fn hi(&self) -> &Vector {
        &self.hi
    }

    pub fn center(&self) -> Vector {
        (&self.lo + &self.hi) * 0.5
    }

    pub fn half_widths(&self) -> Vector {
        (&self.hi - &self.lo) * 0.5
    }

    /// Radius of the smallest ball around the center containing the box.
    pub fn circumradius(&self) -> f64 {
        self.half_widths().norm()
    }

    pub fn diameter(&self) -> f64 {
        2.0 * self.circumradius()
    }

    /// Largest absolute coordinate of any point in the box.
    pub fn max_norm(&self) -> f64 {
        self.lo.iter().chain(self.hi.iter()).fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn contains(&self, z: &Vector, tol: f64) -> bool {
        z.len() == self.dim()
            && z
                .iter()
                .zip(self.lo.iter().zip(self.hi.iter()))
                .all(|(v, (l, h))| *v >= l - tol && *v <= h + tol)
    }

    pub fn clamp(&self, z: &Vector) -> Vector {
        Vector::from_iterator(
            z.len(),
            z.iter()
                .zip(self.lo.iter().zip(self.hi.iter()))
                .map(|(v, (l, h))| v.clamp(*l, *h)),
        )
    }

    /// Grows (or, for negative `eps`, shrinks) every side by `eps`. Sides that
    /// would cross collapse to their midpoint.
    pub fn inflate(&self, eps: f64) -> BoxRegion {
        let mut lo = self.lo.clone();
        let mut hi = self.hi.clone();
        for j in 0..lo.len() {
            let (l, h) = (lo[j] - eps, hi[j] + eps);
            if l > h {
                let mid = 0.5 * (lo[j] + hi[j]);
                lo[j] = mid;
                hi[j] = mid;
            } else {
                lo[j] = l;
                hi[j] = h;
            }
        }
        BoxRegion { lo, hi }
    }

    /// Cartesian product of boxes.
    pub fn concat(boxes: &[&BoxRegion]) -> BoxRegion {
        let lo: Vec<f64> = boxes.iter().flat_map(|b| b.lo.iter().copied()).collect();
        let hi: Vec<f64> = boxes.iter().flat_map(|b| b.hi.iter().copied()).collect();
        BoxRegion {
            lo: Vector::from_vec(lo),
            hi: Vector::from_vec(hi),
        }
    }

    /// Most violated coordinate normal for a point outside the box; ties go to
    /// the lowest index.
    pub fn separating_normal(&self, z: &Vector) -> Option<Vector> {
        let mut best: Option<(usize, f64, f64)> = None;
        for j in 0..self.dim() {
            let above = z[j] - self.hi[j];
            let below = self.lo[j] - z[j];
            let (v, sign) = if above >= below { (above, 1.0) } else { (below, -1.0) };
            if v > TAU && best.map_or(true, |(_, bv, _)| v > bv) {
                best = Some((j, v, sign));
            }
        }
        best.map(|(j, _, sign)| {
            let mut a = Vector::zeros(self.dim());
            a[j] = sign;
            a
        })
    }

    pub fn distance(&self, z: &Vector) -> f64 {
        (z - self.clamp(z)).norm()
    }
}

/// Output of a separation oracle.
#[derive(Clone, Debug, PartialEq)]
pub struct OracleAnswer {
    /// Membership threshold; `b > 1/2` means member.
    pub b: f64,
    /// Separating normal, present exactly when `b ≤ 1/2`.
    pub a: Option<Vector>,
}

impl OracleAnswer {
    pub fn member() -> Self {
        OracleAnswer { b: 1.0, a: None }
    }

    /// Rejection with normal `a`, rescaled to unit infinity norm.
    pub fn reject(a: Vector) -> Self {
        OracleAnswer {
            b: 0.0,
            a: Some(normalize_inf(a)),
        }
    }

    pub fn is_member(&self) -> bool {
        self.b > 0.5
    }
}

/// A polyhedron `{x : A x ≤ b, E x = f}`; equalities hold within [`TAU_EQ`].
#[derive(Clone, Debug, PartialEq)]
pub struct Polyhedron {
    pub a: DMatrix<f64>,
    pub b: Vector,
    pub eq_a: DMatrix<f64>,
    pub eq_b: Vector,
}

impl Polyhedron {
    pub fn new(a: DMatrix<f64>, b: Vector, eq_a: DMatrix<f64>, eq_b: Vector) -> Result<Self> {
        if a.nrows() != b.len() {
            return Err(Error::invalid(format!(
                "polyhedron has {} rows but {} right-hand sides",
                a.nrows(),
                b.len()
            )));
        }
        if eq_a.nrows() != eq_b.len() {
            return Err(Error::invalid(format!(
                "polyhedron has {} equality rows but {} right-hand sides",
                eq_a.nrows(),
                eq_b.len()
            )));
        }
        if a.nrows() > 0 && eq_a.nrows() > 0 && a.ncols() != eq_a.ncols() {
            return Err(Error::invalid("inequality and equality rows disagree on dimension"));
        }
        Ok(Polyhedron { a, b, eq_a, eq_b })
    }

    pub fn dim(&self) -> usize {
        if self.a.nrows() > 0 {
            self.a.ncols()
        } else {
            self.eq_a.ncols()
        }
    }

    fn answer(&self, z: &Vector, shrink: f64) -> OracleAnswer {
        // (normalized violation, normal); lowest row wins ties.
        let mut best: Option<(f64, Vector)> = None;
        let mut consider = |raw: f64, tol: f64, row: Vector| {
            let norm = row.norm();
            if raw > tol {
                let v = if norm > 0.0 { (raw - tol) / norm } else { f64::INFINITY };
                if best.as_ref().map_or(true, |(bv, _)| v > *bv) {
                    let normal = if norm > 0.0 { row } else { unit(z.len(), 0) };
                    best = Some((v, normal));
                }
            }
        };
        for i in 0..self.a.nrows() {
            let row = self.a.row(i).transpose();
            let raw = row.dot(z) - self.b[i] + shrink * row.norm();
            consider(raw, TAU, row);
        }
        for i in 0..self.eq_a.nrows() {
            let row = self.eq_a.row(i).transpose();
            let r = row.dot(z) - self.eq_b[i];
            let tol = TAU_EQ + TAU - shrink * row.norm();
            if tol < 0.0 {
                // the shrunk slab is empty
                consider(f64::INFINITY, 0.0, if r >= 0.0 { row.clone() } else { -row.clone() });
                continue;
            }
            if r >= 0.0 {
                consider(r, tol, row);
            } else {
                consider(-r, tol, -row);
            }
        }
        match best {
            None => OracleAnswer::member(),
            Some((_, a)) => OracleAnswer::reject(a),
        }
    }

    /// `Some(s)` when this is exactly `{x ≥ 0, Σx = s}` in the canonical
    /// row layout produced by [`ConvexBody::simplex`].
    fn simplex_mass(&self) -> Option<f64> {
        let n = self.dim();
        let canonical = self.a.nrows() == n
            && self.a == -DMatrix::<f64>::identity(n, n)
            && self.b.iter().all(|v| *v == 0.0)
            && self.eq_a.nrows() == 1
            && self.eq_a.iter().all(|v| *v == 1.0);
        if canonical && self.eq_b[0] >= 0.0 {
            Some(self.eq_b[0])
        } else {
            None
        }
    }

    /// Implicit equalities: explicit equality rows plus pairs of opposite
    /// inequality rows.
    fn equality_system(&self) -> Option<(DMatrix<f64>, Vector)> {
        let dim = self.dim();
        let mut rows: Vec<Vector> = (0..self.eq_a.nrows()).map(|i| self.eq_a.row(i).transpose()).collect();
        let mut rhs: Vec<f64> = self.eq_b.iter().copied().collect();
        for i in 0..self.a.nrows() {
            for j in (i + 1)..self.a.nrows() {
                let ri = self.a.row(i);
                let rj = self.a.row(j);
                let scale = ri.amax().max(1.0);
                if (ri + rj).amax() <= 1e-12 * scale && (self.b[i] + self.b[j]).abs() <= TAU * scale {
                    rows.push(ri.transpose());
                    rhs.push(self.b[i]);
                }
            }
        }
        if rows.is_empty() {
            return None;
        }
        let mut e = DMatrix::zeros(rows.len(), dim);
        for (i, r) in rows.iter().enumerate() {
            e.set_row(i, &r.transpose());
        }
        Some((e, Vector::from_vec(rhs)))
    }

    /// Exact projection onto `{A x ≤ b, E x = f} ∩ bbox` by enumerating active
    /// sets in order of size; the first KKT point found is the projection.
    /// `None` when there are too many subsets or no KKT point exists.
    fn project_active_set(&self, z: &Vector, bbox: &BoxRegion) -> Option<Vector> {
        let dim = z.len();
        let mut rows: Vec<(Vector, f64)> = (0..self.a.nrows()).map(|i| (self.a.row(i).transpose(), self.b[i])).collect();
        for j in 0..dim {
            rows.push((unit(dim, j), bbox.hi[j]));
            rows.push((-unit(dim, j), -bbox.lo[j]));
        }
        let n_eq = self.eq_a.nrows();
        let eq_rank = if n_eq > 0 { self.eq_a.clone().svd(false, false).rank(1e-12) } else { 0 };
        let need = dim.saturating_sub(eq_rank);
        let total: u128 = (0..=need.min(rows.len())).map(|s| binomial(rows.len(), s)).sum();
        if total > 20_000 {
            return None;
        }
        let scale = 1.0 + z.amax() + bbox.max_norm();
        let tol = 1e-11 * scale;
        let indices: Vec<usize> = (0..rows.len()).collect();
        for size in 0..=need.min(rows.len()) {
            for active in combinations(&indices, size) {
                let k = n_eq + size;
                let mut g = DMatrix::zeros(k, dim);
                let mut h = Vector::zeros(k);
                for i in 0..n_eq {
                    g.set_row(i, &self.eq_a.row(i));
                    h[i] = self.eq_b[i];
                }
                for (r, &i) in active.iter().enumerate() {
                    g.set_row(n_eq + r, &rows[i].0.transpose());
                    h[n_eq + r] = rows[i].1;
                }
                let y = if k == 0 {
                    z.clone()
                } else {
                    let ggt = &g * g.transpose();
                    let Ok(omega) = ggt.svd(true, true).solve(&(&g * z - &h), 1e-12) else { continue };
                    if omega.rows(n_eq, size).iter().any(|&w| w < -tol) {
                        continue;
                    }
                    z - g.transpose() * omega
                };
                if k > 0 && (&g * &y - &h).amax() > tol {
                    continue;
                }
                if rows.iter().all(|(a, b)| a.dot(&y) <= b + tol) {
                    return Some(y);
                }
            }
        }
        None
    }

    /// Vertices by brute-force enumeration of active row subsets. Intended for
    /// small instances only.
    pub fn vertices(&self) -> Vec<Vector> {
        self.vertices_within(None)
    }

    /// Vertices of the polyhedron intersected with `bbox`.
    pub fn vertices_within(&self, bbox: Option<&BoxRegion>) -> Vec<Vector> {
        let dim = self.dim();
        let mut rows: Vec<(Vector, f64)> = Vec::new();
        for i in 0..self.eq_a.nrows() {
            rows.push((self.eq_a.row(i).transpose(), self.eq_b[i]));
        }
        let n_eq = rows.len();
        for i in 0..self.a.nrows() {
            rows.push((self.a.row(i).transpose(), self.b[i]));
        }
        if let Some(b) = bbox {
            for j in 0..dim {
                rows.push((unit(dim, j), b.hi[j]));
                rows.push((-unit(dim, j), -b.lo[j]));
            }
        }
        let mut out: Vec<Vector> = Vec::new();
        if dim == 0 || rows.len() < dim {
            return out;
        }
        let ineq: Vec<usize> = (n_eq..rows.len()).collect();
        let need = dim.saturating_sub(n_eq.min(dim));
        for subset in combinations(&ineq, need) {
            let mut chosen: Vec<usize> = (0..n_eq).collect();
            chosen.extend(subset);
            let k = chosen.len();
            let mut m = DMatrix::zeros(k, dim);
            let mut r = Vector::zeros(k);
            for (i, &c) in chosen.iter().enumerate() {
                m.set_row(i, &rows[c].0.transpose());
                r[i] = rows[c].1;
            }
            let svd = m.clone().svd(true, true);
            if svd.rank(1e-10) < dim {
                continue;
            }
            let Ok(x) = svd.solve(&r, 1e-12) else { continue };
            if (&m * &x - &r).amax() > 1e-8 {
                continue;
            }
            let in_box = bbox.map_or(true, |b| b.contains(&x, TAU));
            if in_box && self.answer(&x, 0.0).is_member() && !out.iter().any(|v| (v - &x).amax() < 1e-9) {
                out.push(x);
            }
        }
        out
    }
}

/// Euclidean projection onto `{x ≥ 0, Σx = mass}` by the sorting method.
pub fn project_onto_simplex(z: &Vector, mass: f64) -> Vector {
    let mut u: Vec<f64> = z.iter().copied().collect();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (i, ui) in u.iter().enumerate() {
        cumsum += ui;
        let t = (cumsum - mass) / (i as f64 + 1.0);
        if ui - t > 0.0 {
            theta = t;
        }
    }
    z.map(|v| (v - theta).max(0.0))
}

pub(crate) fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut r: u128 = 1;
    for i in 0..k {
        r = r * (n - i) as u128 / (i + 1) as u128;
    }
    r
}

fn unit(dim: usize, j: usize) -> Vector {
    let mut e = Vector::zeros(dim);
    if dim > 0 {
        e[j] = 1.0;
    }
    e
}

pub(crate) fn combinations(items: &[usize], k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = Vec::with_capacity(k);
    fn rec(items: &[usize], k: usize, start: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..items.len() {
            if items.len() - i < k - cur.len() {
                break;
            }
            cur.push(items[i]);
            rec(items, k, i + 1, cur, out);
            cur.pop();
        }
    }
    rec(items, k, 0, &mut cur, &mut out);
    out
}

pub type OracleFn = Arc<dyn Fn(&Vector) -> OracleAnswer + Send + Sync>;

#[derive(Clone)]
pub enum BodyKind {
    Box(BoxRegion),
    Ball { center: Vector, radius: f64 },
    Polyhedron(Polyhedron),
    Point(Vector),
    /// Convex hull of finitely many points.
    Hull(Vec<Vector>),
    Product(Vec<ConvexBody>),
    Intersection(Vec<ConvexBody>),
    Parallel { base: Box<ConvexBody>, eps: f64 },
    Empty,
    Oracle {
        oracle: OracleFn,
        equalities: Option<(DMatrix<f64>, Vector)>,
    },
}

impl fmt::Debug for BodyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BodyKind::Box(b) => f.debug_tuple("Box").field(b).finish(),
            BodyKind::Ball { center, radius } => f
                .debug_struct("Ball")
                .field("center", &center.as_slice())
                .field("radius", radius)
                .finish(),
            BodyKind::Polyhedron(p) => f.debug_tuple("Polyhedron").field(p).finish(),
            BodyKind::Point(p) => f.debug_tuple("Point").field(&p.as_slice()).finish(),
            BodyKind::Hull(ps) => f.debug_tuple("Hull").field(&ps.len()).finish(),
            BodyKind::Product(bs) => f.debug_tuple("Product").field(bs).finish(),
            BodyKind::Intersection(bs) => f.debug_tuple("Intersection").field(bs).finish(),
            BodyKind::Parallel { base, eps } => {
                f.debug_struct("Parallel").field("base", base).field("eps", eps).finish()
            }
            BodyKind::Empty => f.write_str("Empty"),
            BodyKind::Oracle { .. } => f.write_str("Oracle"),
        }
    }
}

/// Affine hull information used to run the ellipsoid inside flat bodies.
#[derive(Clone, Debug)]
pub enum AffineHull {
    Full,
    Flat { eq_a: DMatrix<f64>, eq_b: Vector },
    Empty,
}

/// Explicit parametrization `x = origin + basis · z` of an affine subspace.
#[derive(Clone, Debug)]
pub struct Parametrization {
    pub origin: Vector,
    /// Orthonormal columns spanning the subspace (possibly zero columns).
    pub basis: DMatrix<f64>,
}

impl Parametrization {
    pub fn identity(dim: usize) -> Self {
        Parametrization {
            origin: Vector::zeros(dim),
            basis: DMatrix::identity(dim, dim),
        }
    }

    pub fn reduced_dim(&self) -> usize {
        self.basis.ncols()
    }

    pub fn lift(&self, z: &Vector) -> Vector {
        &self.origin + &self.basis * z
    }

    pub fn reduce(&self, x: &Vector) -> Vector {
        self.basis.transpose() * (x - &self.origin)
    }

    /// Block-diagonal combination of per-block parametrizations.
    pub fn block_diagonal(parts: &[Parametrization]) -> Parametrization {
        let rows: usize = parts.iter().map(|p| p.origin.len()).sum();
        let cols: usize = parts.iter().map(|p| p.reduced_dim()).sum();
        let mut origin = Vector::zeros(rows);
        let mut basis = DMatrix::zeros(rows, cols);
        let (mut r, mut c) = (0, 0);
        for p in parts {
            let (n, k) = (p.origin.len(), p.reduced_dim());
            origin.rows_mut(r, n).copy_from(&p.origin);
            basis.view_mut((r, c), (n, k)).copy_from(&p.basis);
            r += n;
            c += k;
        }
        Parametrization { origin, basis }
    }
}

impl AffineHull {
    /// Solves the equality system. `None` means the system is inconsistent.
    pub fn parametrize(&self, dim: usize) -> Option<Parametrization> {
        match self {
            AffineHull::Full => Some(Parametrization::identity(dim)),
            AffineHull::Empty => None,
            AffineHull::Flat { eq_a, eq_b } => {
                let svd = eq_a.clone().svd(true, true);
                let origin = svd.solve(eq_b, 1e-12).ok()?;
                let scale = eq_b.amax().max(1.0);
                if (eq_a * &origin - eq_b).amax() > 1e-8 * scale {
                    return None;
                }
                let gram = eq_a.transpose() * eq_a;
                let eig = SymmetricEigen::new(gram);
                let top = eig.eigenvalues.amax().max(1e-300);
                let keep: Vec<usize> = (0..dim).filter(|&i| eig.eigenvalues[i] <= 1e-10 * top).collect();
                let mut basis = DMatrix::zeros(dim, keep.len());
                for (c, &i) in keep.iter().enumerate() {
                    basis.set_column(c, &eig.eigenvectors.column(i));
                }
                Some(Parametrization { origin, basis })
            }
        }
    }
}

/// A bounded convex set represented by its separation oracle.
#[derive(Clone, Debug)]
pub struct ConvexBody {
    dim: usize,
    bbox: BoxRegion,
    inner_radius: f64,
    margin: f64,
    kind: BodyKind,
}

impl ConvexBody {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn bbox(&self) -> &BoxRegion {
        &self.bbox
    }

    pub fn inner_radius(&self) -> f64 {
        self.inner_radius
    }

    pub fn margin(&self) -> f64 {
        self.margin
    }

    pub fn kind(&self) -> &BodyKind {
        &self.kind
    }

    pub fn with_inner_radius(mut self, r: f64) -> Self {
        self.inner_radius = r.max(0.0);
        self
    }

    /// Declares the oracle weak with margin `delta`.
    pub fn with_margin(mut self, delta: f64) -> Self {
        self.margin = delta.max(0.0);
        self
    }

    pub fn box_body(bbox: BoxRegion) -> Self {
        let r = bbox.half_widths().min();
        ConvexBody {
            dim: bbox.dim(),
            inner_radius: r,
            margin: 0.0,
            kind: BodyKind::Box(bbox.clone()),
            bbox,
        }
    }

    pub fn ball(center: Vector, radius: f64) -> Result<Self> {
        if !(radius > 0.0) || !radius.is_finite() {
            return Err(Error::invalid(format!("ball radius must be positive, got {radius}")));
        }
        Ok(Self::ball_unchecked(center, radius))
    }

    fn ball_unchecked(center: Vector, radius: f64) -> Self {
        let dim = center.len();
        let bbox = BoxRegion {
            lo: center.add_scalar(-radius),
            hi: center.add_scalar(radius),
        };
        ConvexBody {
            dim,
            bbox,
            inner_radius: radius,
            margin: 0.0,
            kind: BodyKind::Ball { center, radius },
        }
    }

    /// `{x : A x ≤ b}`, assumed to lie inside `bbox`.
    pub fn polyhedron(a: DMatrix<f64>, b: Vector, bbox: BoxRegion) -> Result<Self> {
        let eq_a = DMatrix::zeros(0, a.ncols());
        Self::polyhedron_with_equalities(a, b, eq_a, Vector::zeros(0), bbox)
    }

    /// `{x : A x ≤ b, E x = f}` with equalities realized as paired rows of
    /// half-width [`TAU_EQ`].
    pub fn polyhedron_with_equalities(
        a: DMatrix<f64>,
        b: Vector,
        eq_a: DMatrix<f64>,
        eq_b: Vector,
        bbox: BoxRegion,
    ) -> Result<Self> {
        let p = Polyhedron::new(a, b, eq_a, eq_b)?;
        check_dim(bbox.dim(), p.dim())?;
        Ok(ConvexBody {
            dim: bbox.dim(),
            bbox,
            inner_radius: 0.0,
            margin: 0.0,
            kind: BodyKind::Polyhedron(p),
        })
    }

    /// The standard simplex `{x ≥ 0, Σx = 1}`.
    pub fn simplex(dim: usize) -> Self {
        let a = -DMatrix::identity(dim, dim);
        let b = Vector::zeros(dim);
        let eq_a = DMatrix::from_element(1, dim, 1.0);
        let eq_b = Vector::from_element(1, 1.0);
        let bbox = BoxRegion::new(Vector::zeros(dim), Vector::from_element(dim, 1.0)).expect("unit box");
        Self::polyhedron_with_equalities(a, b, eq_a, eq_b, bbox).expect("simplex shapes agree")
    }

    pub fn point(p: Vector) -> Self {
        let bbox = BoxRegion {
            lo: p.clone(),
            hi: p.clone(),
        };
        ConvexBody {
            dim: p.len(),
            bbox,
            inner_radius: 0.0,
            margin: 0.0,
            kind: BodyKind::Point(p),
        }
    }

    /// Convex hull of a nonempty list of points.
    pub fn hull(points: Vec<Vector>) -> Result<Self> {
        let first = points.first().ok_or_else(|| Error::invalid("hull of no points"))?;
        let dim = first.len();
        let mut lo = first.clone();
        let mut hi = first.clone();
        for p in &points {
            check_dim(dim, p.len())?;
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        Ok(ConvexBody {
            dim,
            bbox: BoxRegion { lo, hi },
            inner_radius: 0.0,
            margin: 0.0,
            kind: BodyKind::Hull(points),
        })
    }

    pub fn empty(bbox: BoxRegion) -> Self {
        ConvexBody {
            dim: bbox.dim(),
            bbox,
            inner_radius: 0.0,
            margin: 0.0,
            kind: BodyKind::Empty,
        }
    }

    /// A body known only through `oracle`.
    pub fn from_oracle(bbox: BoxRegion, inner_radius: f64, oracle: OracleFn) -> Self {
        ConvexBody {
            dim: bbox.dim(),
            bbox,
            inner_radius,
            margin: 0.0,
            kind: BodyKind::Oracle {
                oracle,
                equalities: None,
            },
        }
    }

    /// Declares that an oracle body lies in `{x : E x = f}`.
    pub fn with_equalities(mut self, eq_a: DMatrix<f64>, eq_b: Vector) -> Result<Self> {
        check_dim(self.dim, eq_a.ncols())?;
        match &mut self.kind {
            BodyKind::Oracle { equalities, .. } => {
                *equalities = Some((eq_a, eq_b));
                Ok(self)
            }
            _ => Err(Error::invalid("equalities can only be declared on oracle bodies")),
        }
    }

    /// Cartesian product; coordinates are concatenated in order.
    pub fn product(bodies: Vec<ConvexBody>) -> Result<Self> {
        if bodies.is_empty() {
            return Err(Error::invalid("product of an empty list of bodies"));
        }
        let boxes: Vec<&BoxRegion> = bodies.iter().map(|b| &b.bbox).collect();
        let bbox = BoxRegion::concat(&boxes);
        let inner_radius = bodies.iter().map(|b| b.inner_radius).fold(f64::INFINITY, f64::min);
        let margin = bodies.iter().map(|b| b.margin).fold(0.0, f64::max);
        Ok(ConvexBody {
            dim: bbox.dim(),
            bbox,
            inner_radius,
            margin,
            kind: BodyKind::Product(bodies),
        })
    }

    pub fn intersection(bodies: Vec<ConvexBody>) -> Result<Self> {
        let first = bodies.first().ok_or_else(|| Error::invalid("intersection of no bodies"))?;
        let dim = first.dim;
        let mut lo = first.bbox.lo.clone();
        let mut hi = first.bbox.hi.clone();
        for b in &bodies {
            check_dim(dim, b.dim)?;
            lo = lo.sup(&b.bbox.lo);
            hi = hi.inf(&b.bbox.hi);
        }
        if lo.iter().zip(hi.iter()).any(|(l, h)| l > h) {
            let bbox = BoxRegion::new(first.bbox.lo.clone(), first.bbox.hi.clone())?;
            return Ok(ConvexBody::empty(bbox));
        }
        let margin = bodies.iter().map(|b| b.margin).fold(0.0, f64::max);
        Ok(ConvexBody {
            dim,
            bbox: BoxRegion { lo, hi },
            inner_radius: 0.0,
            margin,
            kind: BodyKind::Intersection(bodies),
        })
    }

    /// The closed parallel body `B̄(X, eps)`; negative `eps` shrinks.
    pub fn parallel(&self, eps: f64) -> ConvexBody {
        if eps == 0.0 {
            return self.clone();
        }
        ConvexBody {
            dim: self.dim,
            bbox: self.bbox.inflate(eps),
            inner_radius: (self.inner_radius + eps).max(0.0),
            margin: self.margin,
            kind: BodyKind::Parallel {
                base: Box::new(self.clone()),
                eps,
            },
        }
    }

    /// Answers the separation query for `z`.
    ///
    /// Points outside the bounding box are rejected with the box's normal.
    pub fn separate(&self, z: &Vector) -> Result<OracleAnswer> {
        check_dim(self.dim, z.len())?;
        Ok(self.query(z))
    }

    pub fn contains(&self, z: &Vector) -> Result<bool> {
        Ok(self.separate(z)?.is_member())
    }

    pub(crate) fn query(&self, z: &Vector) -> OracleAnswer {
        if let Some(a) = self.bbox.separating_normal(z) {
            return OracleAnswer::reject(a);
        }
        self.answer(z)
    }

    fn answer(&self, z: &Vector) -> OracleAnswer {
        match &self.kind {
            BodyKind::Box(b) => match b.separating_normal(z) {
                None => OracleAnswer::member(),
                Some(a) => OracleAnswer::reject(a),
            },
            BodyKind::Ball { center, radius } => ball_answer(center, *radius, z),
            BodyKind::Polyhedron(p) => p.answer(z, 0.0),
            BodyKind::Point(p) => ball_answer(p, 0.0, z),
            BodyKind::Hull(points) => {
                let proj = project_onto_hull(points, z);
                let d = z - proj;
                if d.norm() <= TAU * (1.0 + z.amax()) {
                    OracleAnswer::member()
                } else {
                    OracleAnswer::reject(d)
                }
            }
            BodyKind::Product(factors) => {
                let mut offset = 0;
                for f in factors {
                    let sub = z.rows(offset, f.dim).into_owned();
                    let ans = f.query(&sub);
                    if let Some(a) = ans.a {
                        let mut lifted = Vector::zeros(self.dim);
                        lifted.rows_mut(offset, f.dim).copy_from(&a);
                        return OracleAnswer::reject(lifted);
                    }
                    offset += f.dim;
                }
                OracleAnswer::member()
            }
            BodyKind::Intersection(parts) => {
                for p in parts {
                    let ans = p.query(z);
                    if !ans.is_member() {
                        return ans;
                    }
                }
                OracleAnswer::member()
            }
            BodyKind::Parallel { base, eps } => base.answer_at_offset(z, *eps),
            BodyKind::Empty => empty_answer(&self.bbox, z),
            BodyKind::Oracle { oracle, .. } => {
                let ans = oracle(z);
                match ans.a {
                    Some(a) if !ans.is_member() => OracleAnswer::reject(a),
                    _ if ans.is_member() => OracleAnswer::member(),
                    _ => empty_answer(&self.bbox, z),
                }
            }
        }
    }

    /// Membership in `B̄(self, eps)` for either sign of `eps`.
    fn answer_at_offset(&self, z: &Vector, eps: f64) -> OracleAnswer {
        if eps == 0.0 {
            return self.query(z);
        }
        if eps < 0.0 {
            return self.answer_shrunk(z, -eps);
        }
        let proj = self.projection(z);
        match proj {
            None => empty_answer(&self.bbox, z),
            Some(p) => {
                let d = z - p;
                if d.norm() <= eps + TAU {
                    OracleAnswer::member()
                } else {
                    OracleAnswer::reject(d)
                }
            }
        }
    }

    /// Membership in the inner parallel body `B̄(self, −s)`, `s > 0`.
    fn answer_shrunk(&self, z: &Vector, s: f64) -> OracleAnswer {
        match &self.kind {
            BodyKind::Box(b) => {
                let inner = BoxRegion {
                    lo: b.lo.add_scalar(s),
                    hi: b.hi.add_scalar(-s),
                };
                if inner.lo.iter().zip(inner.hi.iter()).any(|(l, h)| *l > h + TAU) {
                    return empty_answer(b, z);
                }
                match inner.separating_normal(z) {
                    None => OracleAnswer::member(),
                    Some(a) => OracleAnswer::reject(a),
                }
            }
            BodyKind::Ball { center, radius } => {
                if *radius - s < -TAU {
                    empty_answer(&self.bbox, z)
                } else {
                    ball_answer(center, (*radius - s).max(0.0), z)
                }
            }
            BodyKind::Polyhedron(p) => p.answer(z, s),
            BodyKind::Point(_) | BodyKind::Empty => empty_answer(&self.bbox, z),
            BodyKind::Product(factors) => {
                let mut offset = 0;
                for f in factors {
                    let sub = z.rows(offset, f.dim).into_owned();
                    let ans = f.answer_shrunk(&sub, s);
                    if let Some(a) = ans.a {
                        let mut lifted = Vector::zeros(self.dim);
                        lifted.rows_mut(offset, f.dim).copy_from(&a);
                        return OracleAnswer::reject(lifted);
                    }
                    offset += f.dim;
                }
                OracleAnswer::member()
            }
            BodyKind::Intersection(parts) => {
                for p in parts {
                    let ans = p.answer_shrunk(z, s);
                    if !ans.is_member() {
                        return ans;
                    }
                }
                OracleAnswer::member()
            }
            BodyKind::Parallel { base, eps } => base.answer_at_offset(z, eps - s),
            BodyKind::Hull(_) | BodyKind::Oracle { .. } => self.answer_shrunk_probing(z, s),
        }
    }

    /// Inner-body test for oracle-only bodies. Rejections from probes within
    /// distance `s` of `z` are exact cuts; membership is claimed only when the
    /// cross-polytope of radius `s·√m`, which contains the `s`-ball, is inside.
    fn answer_shrunk_probing(&self, z: &Vector, s: f64) -> OracleAnswer {
        let base = self.query(z);
        if !base.is_member() {
            return base;
        }
        let m = self.dim;
        let mut far_failure: Option<Vector> = None;
        for radius in [s, s * (m as f64).sqrt()] {
            for j in 0..m {
                for sign in [1.0, -1.0] {
                    let mut q = z.clone();
                    q[j] += sign * radius;
                    let ans = self.query(&q);
                    if let Some(a) = ans.a {
                        if radius <= s {
                            return OracleAnswer::reject(a);
                        }
                        far_failure.get_or_insert(a);
                    }
                }
            }
        }
        match far_failure {
            None => OracleAnswer::member(),
            Some(a) => OracleAnswer::reject(a),
        }
    }

    /// Exact Euclidean projection where a closed form exists.
    pub fn closed_form_projection(&self, z: &Vector) -> Option<Vector> {
        match &self.kind {
            BodyKind::Box(b) => Some(b.clamp(z)),
            BodyKind::Ball { center, radius } => Some(ball_projection(center, *radius, z)),
            BodyKind::Point(p) => Some(p.clone()),
            BodyKind::Hull(points) => Some(project_onto_hull(points, z)),
            BodyKind::Product(factors) => {
                let mut out = Vector::zeros(self.dim);
                let mut offset = 0;
                for f in factors {
                    let sub = z.rows(offset, f.dim).into_owned();
                    out.rows_mut(offset, f.dim).copy_from(&f.closed_form_projection(&sub)?);
                    offset += f.dim;
                }
                Some(out)
            }
            BodyKind::Parallel { base, eps } if *eps > 0.0 => {
                let p = base.closed_form_projection(z)?;
                let d = (z - &p).norm();
                if d <= *eps {
                    Some(z.clone())
                } else {
                    Some(&p + (z - &p) * (*eps / d))
                }
            }
            BodyKind::Polyhedron(p) => p.simplex_mass().map(|mass| project_onto_simplex(z, mass)),
            BodyKind::Intersection(_) => match self.interval() {
                Some((lo, hi)) if lo <= hi + TAU => Some(Vector::from_element(1, z[0].clamp(lo, hi.max(lo)))),
                _ => None,
            },
            BodyKind::Parallel { base, eps } => match &base.kind {
                BodyKind::Box(b) => {
                    let inner = b.inflate(*eps);
                    Some(inner.clamp(z))
                }
                BodyKind::Ball { center, radius } if *radius + *eps >= 0.0 => {
                    Some(ball_projection(center, *radius + *eps, z))
                }
                _ => None,
            },
            _ => None,
        }
    }

    /// Closed forms, active-set enumeration for small polyhedra, and Dykstra's
    /// alternating projections for intersections of such bodies.
    fn exact_projection(&self, z: &Vector) -> Option<Vector> {
        if let Some(p) = self.closed_form_projection(z) {
            return Some(p);
        }
        match &self.kind {
            BodyKind::Polyhedron(p) => p.project_active_set(z, &self.bbox),
            BodyKind::Product(factors) => {
                let mut out = Vector::zeros(self.dim);
                let mut offset = 0;
                for f in factors {
                    let sub = z.rows(offset, f.dim).into_owned();
                    out.rows_mut(offset, f.dim).copy_from(&f.exact_projection(&sub)?);
                    offset += f.dim;
                }
                Some(out)
            }
            BodyKind::Intersection(parts) => {
                let parts: Vec<&ConvexBody> = parts.iter().collect();
                let mut x = self.bbox.clamp(z);
                let mut incr = vec![Vector::zeros(self.dim); parts.len()];
                let scale = 1.0 + z.amax() + self.bbox.max_norm();
                for _ in 0..5_000 {
                    let start = x.clone();
                    for (part, p) in parts.iter().zip(incr.iter_mut()) {
                        let y = part.exact_projection(&(&x + &*p))?;
                        *p = &x + &*p - &y;
                        x = y;
                    }
                    if (&x - &start).amax() <= 1e-14 * scale {
                        break;
                    }
                }
                let inside = parts.iter().all(|p| p.query(&x).is_member()) && self.bbox.contains(&x, TAU);
                inside.then_some(x)
            }
            _ => None,
        }
    }

    /// Euclidean projection: exact when a closed form exists, otherwise
    /// approximated with the ellipsoid engine. `None` when the body is empty.
    pub fn projection(&self, z: &Vector) -> Option<Vector> {
        self.try_projection(z).ok()
    }

    /// Like [`ConvexBody::projection`], but emptiness surfaces as
    /// [`Error::Empty`] with its certificate. Products are projected factor by
    /// factor.
    pub fn try_projection(&self, z: &Vector) -> Result<Vector> {
        check_dim(self.dim, z.len())?;
        if let Some(p) = self.exact_projection(z) {
            return Ok(p);
        }
        if let BodyKind::Product(factors) = &self.kind {
            let mut out = Vector::zeros(self.dim);
            let mut offset = 0;
            for f in factors {
                let sub = z.rows(offset, f.dim).into_owned();
                out.rows_mut(offset, f.dim).copy_from(&f.try_projection(&sub)?);
                offset += f.dim;
            }
            return Ok(out);
        }
        let scale = self.bbox.diameter().max(1.0);
        let eps = (1e-12 * scale * scale).max(1e-16);
        crate::ellipsoid::project(self, z, eps)
    }

    /// Exact `argmin_{y ∈ body} cᵀy` for bodies with a closed-form answer or a
    /// small vertex set. `None` when unavailable or the body is empty.
    pub fn linear_min_exact(&self, c: &Vector) -> Option<(Vector, f64)> {
        match &self.kind {
            BodyKind::Box(b) => {
                let y = Vector::from_iterator(
                    self.dim,
                    (0..self.dim).map(|j| if c[j] >= 0.0 { b.lo[j] } else { b.hi[j] }),
                );
                let v = c.dot(&y);
                Some((y, v))
            }
            BodyKind::Ball { center, radius } => {
                let n = c.norm();
                let y = if n > 0.0 { center - c * (*radius / n) } else { center.clone() };
                let v = c.dot(&y);
                Some((y, v))
            }
            BodyKind::Point(p) => Some((p.clone(), c.dot(p))),
            BodyKind::Hull(points) => points
                .iter()
                .map(|p| (p.clone(), c.dot(p)))
                .min_by(|a, b| a.1.total_cmp(&b.1)),
            BodyKind::Polyhedron(p) => {
                let need = p.dim().saturating_sub(p.eq_a.nrows());
                if binomial(p.a.nrows() + 2 * p.dim(), need) > 20_000 {
                    return None;
                }
                p.vertices_within(Some(&self.bbox))
                    .into_iter()
                    .map(|v| {
                        let val = c.dot(&v);
                        (v, val)
                    })
                    .min_by(|a, b| a.1.total_cmp(&b.1))
            }
            BodyKind::Product(factors) => {
                let mut y = Vector::zeros(self.dim);
                let mut total = 0.0;
                let mut offset = 0;
                for f in factors {
                    let sub = c.rows(offset, f.dim).into_owned();
                    let (yi, vi) = f.linear_min_exact(&sub)?;
                    y.rows_mut(offset, f.dim).copy_from(&yi);
                    total += vi;
                    offset += f.dim;
                }
                Some((y, total))
            }
            _ => None,
        }
    }

    /// The interval `[lo, hi]` of a one-dimensional body whose parts all have
    /// closed-form projections.
    fn interval(&self) -> Option<(f64, f64)> {
        if self.dim != 1 {
            return None;
        }
        match &self.kind {
            BodyKind::Intersection(parts) => {
                let mut lo = f64::NEG_INFINITY;
                let mut hi = f64::INFINITY;
                for p in parts {
                    let (l, h) = p.interval()?;
                    lo = lo.max(l);
                    hi = hi.min(h);
                }
                Some((lo, hi))
            }
            _ => {
                let far = self.bbox.max_norm() + 1.0;
                let lo = self.closed_form_projection(&Vector::from_element(1, -far))?[0];
                let hi = self.closed_form_projection(&Vector::from_element(1, far))?[0];
                Some((lo, hi))
            }
        }
    }

    pub fn distance(&self, z: &Vector) -> Option<f64> {
        self.projection(z).map(|p| (z - p).norm())
    }

    /// Affine hull as an equality system.
    pub fn affine_hull(&self) -> AffineHull {
        match &self.kind {
            BodyKind::Box(b) => {
                let fixed: Vec<usize> = (0..b.dim()).filter(|&j| b.hi[j] - b.lo[j] <= TAU).collect();
                if fixed.is_empty() {
                    return AffineHull::Full;
                }
                let mut e = DMatrix::zeros(fixed.len(), b.dim());
                let mut f = Vector::zeros(fixed.len());
                for (i, &j) in fixed.iter().enumerate() {
                    e[(i, j)] = 1.0;
                    f[i] = 0.5 * (b.lo[j] + b.hi[j]);
                }
                AffineHull::Flat { eq_a: e, eq_b: f }
            }
            BodyKind::Ball { center, radius } if *radius <= TAU => AffineHull::Flat {
                eq_a: DMatrix::identity(self.dim, self.dim),
                eq_b: center.clone(),
            },
            BodyKind::Ball { .. } => AffineHull::Full,
            BodyKind::Polyhedron(p) => match p.equality_system() {
                None => AffineHull::Full,
                Some((e, f)) => AffineHull::Flat { eq_a: e, eq_b: f },
            },
            BodyKind::Point(p) => AffineHull::Flat {
                eq_a: DMatrix::identity(self.dim, self.dim),
                eq_b: p.clone(),
            },
            BodyKind::Hull(points) => hull_equalities(points),
            BodyKind::Product(factors) => {
                let mut rows: Vec<(Vector, f64)> = Vec::new();
                let mut offset = 0;
                for f in factors {
                    match f.affine_hull() {
                        AffineHull::Empty => return AffineHull::Empty,
                        AffineHull::Full => {}
                        AffineHull::Flat { eq_a, eq_b } => {
                            for i in 0..eq_a.nrows() {
                                let mut r = Vector::zeros(self.dim);
                                r.rows_mut(offset, f.dim).copy_from(&eq_a.row(i).transpose());
                                rows.push((r, eq_b[i]));
                            }
                        }
                    }
                    offset += f.dim;
                }
                stack_rows(self.dim, rows)
            }
            BodyKind::Intersection(parts) => {
                let mut rows: Vec<(Vector, f64)> = Vec::new();
                for p in parts {
                    match p.affine_hull() {
                        AffineHull::Empty => return AffineHull::Empty,
                        AffineHull::Full => {}
                        AffineHull::Flat { eq_a, eq_b } => {
                            for i in 0..eq_a.nrows() {
                                rows.push((eq_a.row(i).transpose(), eq_b[i]));
                            }
                        }
                    }
                }
                stack_rows(self.dim, rows)
            }
            BodyKind::Parallel { base, eps } => {
                if *eps > 0.0 {
                    AffineHull::Full
                } else {
                    match base.affine_hull() {
                        AffineHull::Full => AffineHull::Full,
                        _ => AffineHull::Empty,
                    }
                }
            }
            BodyKind::Empty => AffineHull::Empty,
            BodyKind::Oracle { equalities, .. } => match equalities {
                None => AffineHull::Full,
                Some((e, f)) => AffineHull::Flat {
                    eq_a: e.clone(),
                    eq_b: f.clone(),
                },
            },
        }
    }

    /// Vertices for polyhedral bodies (box, polyhedron, point, hull, and
    /// products of those). `None` for curved or oracle bodies.
    pub fn vertices(&self) -> Option<Vec<Vector>> {
        match &self.kind {
            BodyKind::Box(b) => {
                let m = b.dim();
                if m > 16 {
                    return None;
                }
                Some(
                    (0..(1usize << m))
                        .map(|mask| {
                            Vector::from_iterator(
                                m,
                                (0..m).map(|j| if mask >> j & 1 == 1 { b.hi[j] } else { b.lo[j] }),
                            )
                        })
                        .collect(),
                )
            }
            BodyKind::Polyhedron(p) => Some(p.vertices_within(Some(&self.bbox))),
            BodyKind::Point(p) => Some(vec![p.clone()]),
            BodyKind::Hull(points) => Some(points.clone()),
            BodyKind::Product(factors) => {
                let mut acc: Vec<Vector> = vec![Vector::zeros(0)];
                for f in factors {
                    let vs = f.vertices()?;
                    let mut next = Vec::with_capacity(acc.len() * vs.len());
                    for a in &acc {
                        for v in &vs {
                            let mut c = Vector::zeros(a.len() + v.len());
                            c.rows_mut(0, a.len()).copy_from(a);
                            c.rows_mut(a.len(), v.len()).copy_from(v);
                            next.push(c);
                        }
                    }
                    acc = next;
                }
                Some(acc)
            }
            _ => None,
        }
    }
}

fn stack_rows(dim: usize, rows: Vec<(Vector, f64)>) -> AffineHull {
    if rows.is_empty() {
        return AffineHull::Full;
    }
    let mut e = DMatrix::zeros(rows.len(), dim);
    let mut f = Vector::zeros(rows.len());
    for (i, (r, v)) in rows.into_iter().enumerate() {
        e.set_row(i, &r.transpose());
        f[i] = v;
    }
    AffineHull::Flat { eq_a: e, eq_b: f }
}

fn hull_equalities(points: &[Vector]) -> AffineHull {
    let dim = points[0].len();
    let base = &points[0];
    let mut span = DMatrix::zeros(dim, points.len().saturating_sub(1).max(1));
    for (i, p) in points.iter().skip(1).enumerate() {
        span.set_column(i, &(p - base));
    }
    let gram = &span * span.transpose();
    let eig = SymmetricEigen::new(gram);
    let top = eig.eigenvalues.amax();
    let normals: Vec<usize> = (0..dim)
        .filter(|&i| top <= 0.0 || eig.eigenvalues[i] <= 1e-12 * top)
        .collect();
    if normals.is_empty() {
        return AffineHull::Full;
    }
    let mut e = DMatrix::zeros(normals.len(), dim);
    let mut f = Vector::zeros(normals.len());
    for (r, &i) in normals.iter().enumerate() {
        let n = eig.eigenvectors.column(i).into_owned();
        f[r] = n.dot(base);
        e.set_row(r, &n.transpose());
    }
    AffineHull::Flat { eq_a: e, eq_b: f }
}

fn ball_answer(center: &Vector, radius: f64, z: &Vector) -> OracleAnswer {
    let d = z - center;
    if d.norm() <= radius + TAU {
        OracleAnswer::member()
    } else {
        OracleAnswer::reject(d)
    }
}

fn ball_projection(center: &Vector, radius: f64, z: &Vector) -> Vector {
    let d = z - center;
    let n = d.norm();
    if n <= radius {
        z.clone()
    } else {
        center + d * (radius / n)
    }
}

/// Any normal is a valid answer for an empty set; use the direction away from
/// the box center so repeated queries are deterministic.
fn empty_answer(bbox: &BoxRegion, z: &Vector) -> OracleAnswer {
    let d = z - bbox.center();
    if d.amax() > 0.0 {
        OracleAnswer::reject(d)
    } else {
        OracleAnswer::reject(unit(z.len(), 0))
    }
}

/// Nearest point of `conv(points)` to `z` by Wolfe's minimum-norm-point
/// algorithm.
pub fn project_onto_hull(points: &[Vector], z: &Vector) -> Vector {
    let q: Vec<Vector> = points.iter().map(|p| p - z).collect();
    let scale = q.iter().map(|v| v.norm_squared()).fold(0.0, f64::max).max(1e-300);
    let tol = 1e-12 * scale;
    let start = (0..q.len())
        .min_by(|&i, &j| q[i].norm_squared().total_cmp(&q[j].norm_squared()))
        .expect("nonempty hull");
    let mut support = vec![start];
    let mut weights = vec![1.0];
    let mut x = q[start].clone();
    for _ in 0..(50 * q.len() + 50) {
        let (j, dot) = (0..q.len())
            .map(|i| (i, x.dot(&q[i])))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .expect("nonempty hull");
        if x.norm_squared() - dot <= tol || support.contains(&j) {
            break;
        }
        support.push(j);
        weights.push(0.0);
        loop {
            let mu = affine_min_norm(&q, &support);
            if mu.iter().all(|&m| m > 1e-14) {
                weights = mu;
                break;
            }
            let mut theta = 1.0_f64;
            for (w, m) in weights.iter().zip(mu.iter()) {
                if *m <= 1e-14 && w - m > 0.0 {
                    theta = theta.min(w / (w - m));
                }
            }
            for (w, m) in weights.iter_mut().zip(mu.iter()) {
                *w = (1.0 - theta) * *w + theta * m;
            }
            let mut k = 0;
            while k < support.len() {
                if weights[k] <= 1e-14 {
                    support.remove(k);
                    weights.remove(k);
                } else {
                    k += 1;
                }
            }
            let total: f64 = weights.iter().sum();
            for w in weights.iter_mut() {
                *w /= total;
            }
            if support.len() <= 1 {
                break;
            }
        }
        x = support
            .iter()
            .zip(weights.iter())
            .fold(Vector::zeros(z.len()), |acc, (&i, &w)| acc + &q[i] * w);
    }
    x + z
}

/// Minimum-norm point of the affine hull of `q[support]`, as weights.
fn affine_min_norm(q: &[Vector], support: &[usize]) -> Vec<f64> {
    let k = support.len();
    let mut m = DMatrix::zeros(k + 1, k + 1);
    let mut rhs = Vector::zeros(k + 1);
    for (a, &i) in support.iter().enumerate() {
        for (b, &j) in support.iter().enumerate() {
            m[(a, b)] = q[i].dot(&q[j]);
        }
        m[(a, k)] = 1.0;
        m[(k, a)] = 1.0;
    }
    rhs[k] = 1.0;
    let sol = m
        .clone()
        .lu()
        .solve(&rhs)
        .or_else(|| m.svd(true, true).solve(&rhs, 1e-14).ok())
        .unwrap_or_else(|| {
            let mut v = Vector::zeros(k + 1);
            v[0] = 1.0;
            v
        });
    sol.rows(0, k).iter().copied().collect()
}

pub type CorrespondenceFn = Arc<dyn Fn(&Vector) -> Result<ConvexBody> + Send + Sync>;

/// A convex-valued set-valued map `x ↦ R(x)`.
#[derive(Clone)]
pub struct Correspondence {
    dim_in: usize,
    dim_out: usize,
    domain: BoxRegion,
    range: BoxRegion,
    lipschitz: f64,
    map: CorrespondenceFn,
}

impl fmt::Debug for Correspondence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Correspondence")
            .field("dim_in", &self.dim_in)
            .field("dim_out", &self.dim_out)
            .field("lipschitz", &self.lipschitz)
            .finish()
    }
}

impl Correspondence {
    /// `domain` bounds admissible inputs, `range` bounds every image.
    pub fn new(domain: BoxRegion, range: BoxRegion, lipschitz: f64, map: CorrespondenceFn) -> Result<Self> {
        if !(lipschitz > 0.0) {
            return Err(Error::invalid("Lipschitz constant must be positive"));
        }
        Ok(Correspondence {
            dim_in: domain.dim(),
            dim_out: range.dim(),
            domain,
            range,
            lipschitz,
            map,
        })
    }

    /// The constant map `x ↦ body`.
    pub fn constant(domain: BoxRegion, body: ConvexBody) -> Self {
        let range = body.bbox().clone();
        Correspondence {
            dim_in: domain.dim(),
            dim_out: body.dim(),
            domain,
            range,
            lipschitz: f64::MIN_POSITIVE,
            map: Arc::new(move |_| Ok(body.clone())),
        }
    }

    pub fn dim_in(&self) -> usize {
        self.dim_in
    }

    pub fn dim_out(&self) -> usize {
        self.dim_out
    }

    pub fn domain(&self) -> &BoxRegion {
        &self.domain
    }

    pub fn range(&self) -> &BoxRegion {
        &self.range
    }

    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    pub fn at(&self, x: &Vector) -> Result<ConvexBody> {
        check_dim(self.dim_in, x.len())?;
        let body = (self.map)(x)?;
        check_dim(self.dim_out, body.dim())?;
        Ok(body)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn v(xs: &[f64]) -> Vector {
        Vector::from_column_slice(xs)
    }

    fn unit_ball(dim: usize) -> ConvexBody {
        ConvexBody::ball(Vector::zeros(dim), 1.0).unwrap()
    }

    fn unit_box(dim: usize) -> ConvexBody {
        ConvexBody::box_body(BoxRegion::cube(dim, 1.0))
    }

    fn triangle() -> ConvexBody {
        // {x1 + x2 ≤ 1, x ≥ 0}
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 1.0, -1.0, 0.0, 0.0, -1.0]);
        let b = v(&[1.0, 0.0, 0.0]);
        ConvexBody::polyhedron(a, b, BoxRegion::new(v(&[0.0, 0.0]), v(&[1.0, 1.0])).unwrap()).unwrap()
    }

    #[test]
    fn box_interior_point_is_member() {
        let ans = unit_box(2).separate(&v(&[0.0, 0.0])).unwrap();
        assert_eq!(ans.b, 1.0);
        assert!(ans.a.is_none());
    }

    #[test]
    fn ball_rejects_with_axis_normal() {
        let ball = ConvexBody::ball(Vector::zeros(2), 1.0).unwrap().parallel(0.0);
        // (2,0) is outside the bbox as well; both paths give the axis normal
        let ans = ball.separate(&v(&[2.0, 0.0])).unwrap();
        assert_eq!(ans.b, 0.0);
        assert_eq!(ans.a.unwrap(), v(&[1.0, 0.0]));
        let inside_bbox = ball.separate(&v(&[0.9, 0.9])).unwrap();
        let a = inside_bbox.a.unwrap();
        assert!((a - v(&[1.0, 1.0])).amax() < 1e-12);
    }

    #[test]
    fn triangle_rejects_corner_with_valid_hyperplane() {
        let body = triangle();
        let z = v(&[1.0, 1.0]);
        let ans = body.separate(&z).unwrap();
        assert!(!ans.is_member());
        let a = ans.a.unwrap();
        for vert in [v(&[0.0, 0.0]), v(&[1.0, 0.0]), v(&[0.0, 1.0])] {
            assert!(a.dot(&(vert - &z)) <= 0.0);
        }
    }

    #[test]
    fn polyhedron_halfspace_examples() {
        let a = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        let body = ConvexBody::polyhedron(a, v(&[0.0]), BoxRegion::cube(2, 2.0)).unwrap();
        let ans = body.separate(&v(&[1.0, 0.0])).unwrap();
        assert!(ans.b <= 0.5);
        assert_eq!(ans.a.unwrap(), v(&[1.0, 0.0]));
        assert!(body.separate(&v(&[-1.0, 0.0])).unwrap().b > 0.5);
    }

    #[test]
    fn simplex_separated_by_sum_row() {
        let ans = triangle().separate(&v(&[0.6, 0.6])).unwrap();
        assert_eq!(ans.a.unwrap(), v(&[1.0, 1.0]));
    }

    #[test]
    fn most_violated_row_ties_go_to_lowest_index() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let body = ConvexBody::polyhedron(a, v(&[0.0, 0.0]), BoxRegion::cube(2, 1.0)).unwrap();
        assert_eq!(body.separate(&v(&[0.5, 0.5])).unwrap().a.unwrap(), v(&[1.0, 0.0]));
    }

    #[test]
    fn ball_examples() {
        let ball = unit_ball(2);
        assert!(ball.contains(&v(&[0.5, 0.0])).unwrap());
        let big = ConvexBody::ball(Vector::zeros(2), 4.0).unwrap();
        let ball_in_big = ConvexBody::intersection(vec![big, unit_ball(2)]).unwrap();
        assert_eq!(ball_in_big.separate(&v(&[0.0, 3.0])).unwrap().a.unwrap(), v(&[0.0, 1.0]));
        let shifted = ConvexBody::ball(v(&[1.0, 1.0]), 0.5).unwrap();
        let roomy = ConvexBody::intersection(vec![
            ConvexBody::box_body(BoxRegion::cube(2, 3.0)),
            shifted,
        ])
        .unwrap();
        // bbox of the intersection is the ball's; query from inside a wider box
        let ans = roomy.separate(&v(&[1.5 + 1e-3, 1.0])).unwrap();
        assert_eq!(ans.a.unwrap(), v(&[1.0, 0.0]));
        assert!(ConvexBody::ball(Vector::zeros(2), 0.0).is_err());
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        assert!(matches!(
            unit_box(2).separate(&v(&[0.0])),
            Err(Error::DimensionMismatch { expected: 2, got: 1 })
        ));
    }

    #[test]
    fn parallel_box_examples() {
        let grown = unit_box(2).parallel(0.5);
        assert!(grown.contains(&v(&[1.4, 0.0])).unwrap());
        assert!(!grown.contains(&v(&[1.6, 0.0])).unwrap());
        let shrunk = unit_box(2).parallel(-0.5);
        assert!(shrunk.contains(&v(&[0.4, 0.0])).unwrap());
        assert!(!shrunk.contains(&v(&[0.8, 0.0])).unwrap());
        // (0.6, 0) lies in the shrunk box's bbox slack only through tolerance; it
        // is outside [−0.5, 0.5]
        assert!(!shrunk.contains(&v(&[0.6, 0.0])).unwrap());
    }

    #[test]
    fn ball_shrunk_to_its_center() {
        let point = unit_ball(2).parallel(-1.0);
        assert!(point.contains(&v(&[0.0, 0.0])).unwrap());
        assert!(point.separate(&v(&[0.1, 0.0])).unwrap().b <= 0.5);
    }

    #[test]
    fn product_lifts_factor_normal() {
        let prod = ConvexBody::product(vec![unit_box(1), unit_box(1)]).unwrap();
        let inner = ConvexBody::product(vec![unit_box(1), unit_box(1).parallel(-0.5)]).unwrap();
        assert_eq!(inner.separate(&v(&[0.5, 0.9])).unwrap().a.unwrap(), v(&[0.0, 1.0]));
        // outside the bbox the bbox normal is used, which agrees here
        assert_eq!(prod.separate(&v(&[0.5, 2.0])).unwrap().a.unwrap(), v(&[0.0, 1.0]));
        assert!(ConvexBody::product(vec![]).is_err());
        let balls = ConvexBody::product(vec![unit_ball(2), unit_ball(2)]).unwrap();
        assert!(balls.contains(&v(&[0.1, 0.2, -0.3, 0.4])).unwrap());
    }

    #[test]
    fn product_of_simplices_contains_boundary_points() {
        let prod = ConvexBody::product(vec![
            ConvexBody::simplex(2),
            ConvexBody::simplex(3),
            ConvexBody::simplex(2),
        ])
        .unwrap();
        let z = v(&[1.0, 0.0, 0.2, 0.3, 0.5, 0.5, 0.5]);
        assert!(prod.contains(&z).unwrap());
        let off = v(&[1.0, 0.1, 0.2, 0.3, 0.5, 0.5, 0.5]);
        assert!(!prod.contains(&off).unwrap());
    }

    #[test]
    fn shrunk_simplex_is_empty() {
        let s = ConvexBody::simplex(2).parallel(-0.01);
        assert!(!s.contains(&v(&[0.5, 0.5])).unwrap());
        assert!(matches!(s.affine_hull(), AffineHull::Empty));
    }

    #[test]
    fn simplex_affine_hull_parametrizes_the_plane() {
        let hull = ConvexBody::simplex(3).affine_hull();
        let p = hull.parametrize(3).unwrap();
        assert_eq!(p.reduced_dim(), 2);
        let x = p.lift(&v(&[0.3, -0.2]));
        assert!((x.sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn opposite_rows_are_detected_as_equalities() {
        let a = DMatrix::from_row_slice(4, 2, &[1.0, 1.0, -1.0, -1.0, -1.0, 0.0, 0.0, -1.0]);
        let body = ConvexBody::polyhedron(a, v(&[1.0, -1.0, 0.0, 0.0]), BoxRegion::cube(2, 1.0)).unwrap();
        let p = body.affine_hull().parametrize(2).unwrap();
        assert_eq!(p.reduced_dim(), 1);
    }

    #[test]
    fn hull_projection_matches_segment_formula() {
        let seg = ConvexBody::hull(vec![v(&[0.0, 0.0]), v(&[2.0, 0.0])]).unwrap();
        let p = seg.closed_form_projection(&v(&[1.0, 3.0])).unwrap();
        assert!((p - v(&[1.0, 0.0])).amax() < 1e-12);
        let tri = ConvexBody::hull(vec![v(&[0.0, 0.0]), v(&[1.0, 0.0]), v(&[0.0, 1.0])]).unwrap();
        let p = tri.closed_form_projection(&v(&[1.0, 1.0])).unwrap();
        assert!((p - v(&[0.5, 0.5])).amax() < 1e-12);
        assert!(tri.contains(&v(&[0.2, 0.2])).unwrap());
        assert!(!tri.contains(&v(&[0.6, 0.6])).unwrap());
    }

    #[test]
    fn polyhedron_vertices_of_triangle() {
        let vs = triangle().vertices().unwrap();
        assert_eq!(vs.len(), 3);
        for expected in [v(&[0.0, 0.0]), v(&[0.0, 1.0]), v(&[1.0, 0.0])] {
            assert!(vs.iter().any(|p| (p - &expected).amax() < 1e-12));
        }
        assert_eq!(ConvexBody::simplex(3).vertices().unwrap().len(), 3);
    }

    #[test]
    fn oracle_body_inner_probe() {
        let ball = unit_ball(2);
        let oracle: OracleFn = Arc::new(move |z| ball.separate(z).unwrap());
        let body = ConvexBody::from_oracle(BoxRegion::cube(2, 1.0), 1.0, oracle);
        let inner = body.parallel(-0.5);
        assert!(inner.contains(&v(&[0.1, 0.0])).unwrap());
        assert!(!inner.contains(&v(&[0.7, 0.0])).unwrap());
    }

    fn random_point_in(body_kind: u8, rng: &mut impl rand::Rng) -> Vector {
        match body_kind {
            0 => v(&[rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)]).map(|x| x * 0.5),
            _ => {
                let r: f64 = rng.gen_range(0.0..1.0_f64).sqrt() * 0.8;
                let t: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
                v(&[0.2 + r * t.cos(), -0.1 + r * t.sin()])
            }
        }
    }

    #[test]
    fn active_set_projection_examples() {
        let tri = ConvexBody::polyhedron(
            DMatrix::from_row_slice(3, 2, &[1.0, 1.0, -1.0, 0.0, 0.0, -1.0]),
            v(&[1.0, 0.0, 0.0]),
            BoxRegion::new(v(&[0.0, 0.0]), v(&[1.0, 1.0])).unwrap(),
        )
        .unwrap();
        for (z, want) in [([1.0, 1.0], [0.5, 0.5]), ([-1.0, 0.5], [0.0, 0.5]), ([2.0, -1.0], [1.0, 0.0]), ([0.2, 0.3], [0.2, 0.3])] {
            let p = tri.try_projection(&v(&z)).unwrap();
            assert!((p - v(&want)).amax() < 1e-12);
        }
        let plane = ConvexBody::polyhedron_with_equalities(
            DMatrix::zeros(0, 3),
            Vector::zeros(0),
            DMatrix::from_row_slice(1, 3, &[1.0, 1.0, 1.0]),
            v(&[1.0]),
            BoxRegion::cube(3, 5.0),
        )
        .unwrap();
        let p = plane.try_projection(&Vector::zeros(3)).unwrap();
        assert!((p - Vector::from_element(3, 1.0 / 3.0)).amax() < 1e-12);
    }

    #[test]
    fn dykstra_projection_onto_intersection() {
        let half = ConvexBody::polyhedron(
            DMatrix::from_row_slice(1, 2, &[-1.0, 0.0]),
            v(&[-0.5]),
            BoxRegion::cube(2, 2.0),
        )
        .unwrap();
        let cap = ConvexBody::intersection(vec![unit_ball(2), half]).unwrap();
        let p = cap.try_projection(&v(&[0.0, 2.0])).unwrap();
        assert!((&p - v(&[0.5, 0.75f64.sqrt()])).amax() < 1e-6);
        assert!(cap.contains(&p).unwrap());
    }

    proptest! {
        #[test]
        fn polyhedral_projection_is_variational(
            rows in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0, 0.1f64..1.0), 1..5),
            z in prop::array::uniform2(-3.0f64..3.0),
        ) {
            let mut a = DMatrix::zeros(rows.len(), 2);
            let mut b = Vector::zeros(rows.len());
            for (i, (p, q, r)) in rows.iter().enumerate() {
                a[(i, 0)] = *p;
                a[(i, 1)] = *q;
                b[i] = *r;
            }
            // b > 0 keeps the origin inside
            let body = ConvexBody::polyhedron(a, b, BoxRegion::cube(2, 2.0)).unwrap();
            let z = v(&z);
            let p = body.try_projection(&z).unwrap();
            prop_assert!(body.contains(&p).unwrap());
            for y in body.vertices().unwrap() {
                prop_assert!((&z - &p).dot(&(y - &p)) <= 1e-9);
            }
        }

        #[test]
        fn rejection_normals_are_sound(x in -1.5f64..1.5, y in -1.5f64..1.5, seed in 0u64..1000) {
            use rand::SeedableRng;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let bodies = [triangle(), ConvexBody::ball(v(&[0.2, -0.1]), 0.8).unwrap()];
            let z = v(&[x, y]);
            for (k, body) in bodies.iter().enumerate() {
                let ans = body.separate(&z).unwrap();
                if let Some(a) = ans.a {
                    prop_assert!((a.amax() - 1.0).abs() < 1e-12);
                    for _ in 0..1000 {
                        let mut y = random_point_in(k as u8, &mut rng);
                        if k == 0 {
                            // map the unit square's lower triangle onto the body
                            if y[0] + y[1] > 0.5 { y = v(&[0.5 - y[0], 0.5 - y[1]]); }
                            y *= 2.0;
                        }
                        prop_assert!(body.contains(&y).unwrap());
                        prop_assert!(a.dot(&(y - &z)) <= 0.0);
                    }
                }
            }
        }

        #[test]
        fn parallel_body_is_monotone(e1 in -0.9f64..0.9, e2 in -0.9f64..0.9, x in -2.0f64..2.0, y in -2.0f64..2.0) {
            let (lo, hi) = if e1 <= e2 { (e1, e2) } else { (e2, e1) };
            let z = v(&[x, y]);
            for body in [unit_box(2), unit_ball(2), triangle()] {
                let small = body.parallel(lo).contains(&z).unwrap();
                let large = body.parallel(hi).contains(&z).unwrap();
                prop_assert!(!small || large);
            }
        }

        #[test]
        fn zero_offset_is_identity(x in -2.0f64..2.0, y in -2.0f64..2.0) {
            let z = v(&[x, y]);
            for body in [unit_box(2), unit_ball(2), triangle()] {
                prop_assert_eq!(body.separate(&z).unwrap(), body.parallel(0.0).separate(&z).unwrap());
            }
        }

        #[test]
        fn product_never_claims_membership_when_a_factor_rejects(a in -1.5f64..1.5, b in -1.5f64..1.5, c in -1.5f64..1.5) {
            let factors = vec![unit_box(1), unit_ball(2)];
            let prod = ConvexBody::product(factors.clone()).unwrap();
            let z = v(&[a, b, c]);
            let first = factors[0].contains(&v(&[a])).unwrap();
            let second = factors[1].contains(&v(&[b, c])).unwrap();
            prop_assert_eq!(prod.contains(&z).unwrap(), first && second);
        }
    }
}
