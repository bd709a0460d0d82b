//! Problem files.
//!
//! ```text
//! {"version": "1", "kind": "vi", "payload": {...},
//!  "tolerances": {"beta": 1e-3, "eps": 1e-3, "delta": 1e-4, "eta": 0}}
//! ```
//!
//! Only `tolerances.beta` is required; `eps` defaults to `beta`, `delta` to
//! `1e-4` and `eta` to `0`.
//!
//! Bodies carry a `kind`:
//! - `box`: `lo`, `hi`
//! - `ball`: `center`, `radius`
//! - `polyhedron`: `a`, `b`, optional `eq_a`, `eq_b`, and `bbox` (`{lo, hi}`)
//! - `simplex`: `dim`
//! - `point`: `at`
//! - `hull`: `points`
//! - `product`, `intersection`: `parts`
//! - `parallel`: `base`, `eps`
//! - `empty`: `bbox`
//!
//! Every body also accepts `inner_radius`.
//!
//! Operators: `{"kind": "affine", "matrix", "offset"}` or
//! `{"kind": "circuit", "circuit": {"inputs", "nodes", "outputs"}}`.
//! Utilities and losses: `{"kind": "quadratic", "q", "linear", "constant"}`
//! (value `½xᵀqx + linearᵀx + constant`) or a one-output circuit.
//!
//! Payloads by kind:
//! - `vi`: `set`, `operator`
//! - `qvi`: `operator`, `base`, `domain`, optional `shift`; `R(x) = base + shift·x`
//! - `gqvi`: `operators`, `base`, `domain`, optional `shift`, `gamma`;
//!   `ℱ(x)` is the hull of the operators' values
//! - `mvi`: `set`, `columns`
//! - `game`: `blocks`, `utilities`, `strategy_sets`, optional
//!   `common_constraint`; or `bimatrix: {a, b}`; or `sv: {formula, third_player}`
//! - `mlf`: `followers`, `leader_sets`, `losses`, `follower_box`,
//!   `multiplier_bound`, optional `strict` and `modes` (`"relaxed"`,
//!   `"zero_lambda"` or `{rows, rhs}` per leader)
//! - `cnf`: `n`, `clauses`
//!
//! DIMACS files (`.cnf`, or text starting with `c` or `p`) load as `cnf`.

use std::path::Path;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::circuits::{AffineOperator, CircuitSpec, LinCircuit, Operator, QuadraticForm};
use crate::error::{Error, Result};
use crate::games::{build_sv_game, Cnf3, ConcaveGame, SvGame, Utility};
use crate::geometry::{BodyKind, BoxRegion, ConvexBody, Correspondence, Vector};
use crate::mlf::{Follower, Leader, MlfGame, PartialResponseMode};
use crate::vi::{point_valued, GQVIProblem, MVIProblem, QVIProblem, VIProblem};

pub const VERSION: &str = "1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    Vi,
    Qvi,
    Gqvi,
    Mvi,
    Game,
    Mlf,
    Cnf,
}

impl Kind {
    pub fn name(self) -> &'static str {
        match self {
            Kind::Vi => "vi",
            Kind::Qvi => "qvi",
            Kind::Gqvi => "gqvi",
            Kind::Mvi => "mvi",
            Kind::Game => "game",
            Kind::Mlf => "mlf",
            Kind::Cnf => "cnf",
        }
    }

    fn parse(s: &str) -> Option<Kind> {
        [Kind::Vi, Kind::Qvi, Kind::Gqvi, Kind::Mvi, Kind::Game, Kind::Mlf, Kind::Cnf]
            .into_iter()
            .find(|k| k.name() == s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    pub beta: f64,
    pub eps: f64,
    pub delta: f64,
    pub eta: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            beta: 1e-3,
            eps: 1e-3,
            delta: 1e-4,
            eta: 0.0,
        }
    }
}

/// A validated problem file. The payload is kept as JSON so files round-trip
/// unchanged; [`ProblemFile::instance`] builds the in-memory problem.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProblemFile {
    pub version: String,
    pub kind: Kind,
    pub payload: Value,
    pub tolerances: Tolerances,
}

pub enum GameInstance {
    Concave(ConcaveGame),
    Sv { formula: Cnf3, game: SvGame },
}

pub enum Instance {
    Vi(VIProblem),
    Qvi(QVIProblem),
    Gqvi(GQVIProblem),
    Mvi(MVIProblem),
    Game(GameInstance),
    Mlf(MlfGame),
    Cnf(Cnf3),
}

/// Reads and validates a problem file. Unknown fields are errors unless
/// `lenient`, in which case they are returned as warnings.
pub fn parse_problem(path: &Path, lenient: bool) -> Result<(ProblemFile, Vec<String>)> {
    let bytes = std::fs::read(path)?;
    parse_problem_bytes(&bytes, path.extension().is_some_and(|e| e == "cnf"), lenient)
}

pub fn parse_problem_bytes(bytes: &[u8], dimacs_hint: bool, lenient: bool) -> Result<(ProblemFile, Vec<String>)> {
    let text = std::str::from_utf8(bytes).map_err(|e| Error::schema("", format!("not UTF-8: {e}")))?;
    let head = text.trim_start();
    if dimacs_hint || head.starts_with('c') || head.starts_with('p') {
        let cnf = Cnf3::from_dimacs(text).map_err(|e| Error::schema("", e.to_string()))?;
        let file = ProblemFile {
            version: VERSION.into(),
            kind: Kind::Cnf,
            payload: serde_json::to_value(&cnf)?,
            tolerances: Tolerances::default(),
        };
        return Ok((file, vec![]));
    }
    let value: Value = serde_json::from_str(text).map_err(|e| Error::schema("", format!("invalid JSON: {e}")))?;
    parse_problem_value(&value, lenient)
}

pub fn parse_problem_value(value: &Value, lenient: bool) -> Result<(ProblemFile, Vec<String>)> {
    let mut r = Reader::new(!lenient);
    let top = r.object(value, "", &["version", "kind", "payload", "tolerances"])?;
    let version = string(req(top, "", "version")?, "/version")?;
    if version != VERSION {
        return Err(Error::schema("/version", format!("unsupported version {version:?}")));
    }
    let kind_s = string(req(top, "", "kind")?, "/kind")?;
    let kind = Kind::parse(&kind_s).ok_or_else(|| Error::schema("/kind", format!("unknown kind {kind_s:?}")))?;
    let tol_v = req(top, "", "tolerances")?;
    let tol = r.object(tol_v, "/tolerances", &["beta", "eps", "delta", "eta"])?;
    let beta = positive(req(tol, "/tolerances", "beta")?, "/tolerances/beta")?;
    let eps = match tol.get("eps") {
        Some(v) => positive(v, "/tolerances/eps")?,
        None => beta,
    };
    let delta = match tol.get("delta") {
        Some(v) => positive(v, "/tolerances/delta")?,
        None => 1e-4,
    };
    let eta = match tol.get("eta") {
        Some(v) => nonnegative(v, "/tolerances/eta")?,
        None => 0.0,
    };
    let payload = req(top, "", "payload")?.clone();
    let file = ProblemFile {
        version,
        kind,
        payload,
        tolerances: Tolerances { beta, eps, delta, eta },
    };
    r.instance(&file, beta, eta)?;
    Ok((file, r.warnings))
}

impl ProblemFile {
    /// Builds the problem at accuracy `beta`, applying weak-oracle margin
    /// `eta` to every body read from the file.
    pub fn instance(&self, beta: f64, eta: f64) -> Result<Instance> {
        Reader::new(false).instance(self, beta, eta)
    }

    pub fn to_json(&self) -> Value {
        json!({
            "version": self.version,
            "kind": self.kind.name(),
            "payload": self.payload,
            "tolerances": {
                "beta": self.tolerances.beta,
                "eps": self.tolerances.eps,
                "delta": self.tolerances.delta,
                "eta": self.tolerances.eta,
            },
        })
    }
}

fn ptr(path: &str, key: &str) -> String {
    format!("{path}/{}", key.replace('~', "~0").replace('/', "~1"))
}

fn idx(path: &str, i: usize) -> String {
    format!("{path}/{i}")
}

fn req<'v>(m: &'v Map<String, Value>, path: &str, key: &str) -> Result<&'v Value> {
    m.get(key).ok_or_else(|| Error::schema(ptr(path, key), "missing required field"))
}

fn num(v: &Value, path: &str) -> Result<f64> {
    v.as_f64().ok_or_else(|| Error::schema(path, "expected a number"))
}

fn positive(v: &Value, path: &str) -> Result<f64> {
    let x = num(v, path)?;
    if x > 0.0 && x.is_finite() {
        Ok(x)
    } else {
        Err(Error::schema(path, "expected a positive number"))
    }
}

fn nonnegative(v: &Value, path: &str) -> Result<f64> {
    let x = num(v, path)?;
    if x >= 0.0 && x.is_finite() {
        Ok(x)
    } else {
        Err(Error::schema(path, "expected a nonnegative number"))
    }
}

fn uint(v: &Value, path: &str) -> Result<usize> {
    v.as_u64()
        .map(|x| x as usize)
        .ok_or_else(|| Error::schema(path, "expected a nonnegative integer"))
}

fn boolean(v: &Value, path: &str) -> Result<bool> {
    v.as_bool().ok_or_else(|| Error::schema(path, "expected a boolean"))
}

fn string(v: &Value, path: &str) -> Result<String> {
    v.as_str()
        .map(str::to_string)
        .ok_or_else(|| Error::schema(path, "expected a string"))
}

fn array<'v>(v: &'v Value, path: &str) -> Result<&'v Vec<Value>> {
    v.as_array().ok_or_else(|| Error::schema(path, "expected an array"))
}

fn vector(v: &Value, path: &str) -> Result<Vector> {
    let items = array(v, path)?;
    let xs = items
        .iter()
        .enumerate()
        .map(|(i, x)| num(x, &idx(path, i)))
        .collect::<Result<Vec<f64>>>()?;
    Ok(Vector::from_vec(xs))
}

/// Row-major matrix; an empty list is a `0 × cols` matrix.
fn matrix(v: &Value, path: &str, cols: Option<usize>) -> Result<DMatrix<f64>> {
    let rows = array(v, path)?;
    if rows.is_empty() {
        return Ok(DMatrix::zeros(0, cols.unwrap_or(0)));
    }
    let parsed = rows
        .iter()
        .enumerate()
        .map(|(i, r)| vector(r, &idx(path, i)))
        .collect::<Result<Vec<Vector>>>()?;
    let width = parsed[0].len();
    if let Some(c) = cols {
        if c != width {
            return Err(Error::schema(idx(path, 0), format!("expected {c} columns, got {width}")));
        }
    }
    for (i, r) in parsed.iter().enumerate() {
        if r.len() != width {
            return Err(Error::schema(idx(path, i), format!("expected {width} columns, got {}", r.len())));
        }
    }
    Ok(DMatrix::from_fn(parsed.len(), width, |r, c| parsed[r][c]))
}

/// Attaches `path` to errors raised while assembling a value.
fn at<T>(path: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Schema { .. } => e,
        other => Error::schema(path, other.to_string()),
    })
}

struct Reader {
    strict: bool,
    warnings: Vec<String>,
}

impl Reader {
    fn new(strict: bool) -> Self {
        Reader {
            strict,
            warnings: vec![],
        }
    }

    fn object<'v>(&mut self, v: &'v Value, path: &str, allowed: &[&str]) -> Result<&'v Map<String, Value>> {
        let m = v.as_object().ok_or_else(|| Error::schema(path, "expected an object"))?;
        for key in m.keys() {
            if !allowed.contains(&key.as_str()) {
                let p = ptr(path, key);
                if self.strict {
                    return Err(Error::schema(p, "unknown field"));
                }
                self.warnings.push(format!("ignoring unknown field {p}"));
            }
        }
        Ok(m)
    }

    fn instance(&mut self, file: &ProblemFile, beta: f64, eta: f64) -> Result<Instance> {
        let p = "/payload";
        let v = &file.payload;
        Ok(match file.kind {
            Kind::Vi => {
                let m = self.object(v, p, &["set", "operator"])?;
                let set = self.body(req(m, p, "set")?, &ptr(p, "set"), eta)?;
                let op = self.operator(req(m, p, "operator")?, &ptr(p, "operator"))?;
                Instance::Vi(at(p, VIProblem::new(op, set, beta))?)
            }
            Kind::Qvi => {
                let m = self.object(v, p, &["operator", "base", "shift", "domain"])?;
                let op = self.operator(req(m, p, "operator")?, &ptr(p, "operator"))?;
                let constraint = self.moving_set(m, p, eta)?;
                Instance::Qvi(at(p, QVIProblem::new(op, constraint, beta))?)
            }
            Kind::Gqvi => {
                let m = self.object(v, p, &["operators", "base", "shift", "domain", "gamma"])?;
                let constraint = self.moving_set(m, p, eta)?;
                let ops_path = ptr(p, "operators");
                let ops = array(req(m, p, "operators")?, &ops_path)?
                    .iter()
                    .enumerate()
                    .map(|(i, o)| self.operator(o, &idx(&ops_path, i)))
                    .collect::<Result<Vec<_>>>()?;
                let operator = at(&ops_path, hull_of_operators(ops, constraint.domain().clone()))?;
                let gamma = match m.get("gamma") {
                    Some(g) => nonnegative(g, &ptr(p, "gamma"))?,
                    None => 0.0,
                };
                Instance::Gqvi(at(p, GQVIProblem::new(operator, constraint, beta, gamma))?)
            }
            Kind::Mvi => {
                let m = self.object(v, p, &["set", "columns"])?;
                let set = self.body(req(m, p, "set")?, &ptr(p, "set"), eta)?;
                let cp = ptr(p, "columns");
                let columns = array(req(m, p, "columns")?, &cp)?
                    .iter()
                    .enumerate()
                    .map(|(i, o)| self.operator(o, &idx(&cp, i)))
                    .collect::<Result<Vec<_>>>()?;
                Instance::Mvi(at(p, MVIProblem::new(columns, set, beta))?)
            }
            Kind::Game => Instance::Game(self.game(v, p, eta)?),
            Kind::Mlf => Instance::Mlf(self.mlf(v, p, eta)?),
            Kind::Cnf => Instance::Cnf(self.cnf(v, p)?),
        })
    }

    fn box_region(&mut self, v: &Value, path: &str) -> Result<BoxRegion> {
        let m = self.object(v, path, &["lo", "hi"])?;
        let lo = vector(req(m, path, "lo")?, &ptr(path, "lo"))?;
        let hi = vector(req(m, path, "hi")?, &ptr(path, "hi"))?;
        at(path, BoxRegion::new(lo, hi))
    }

    fn body(&mut self, v: &Value, path: &str, eta: f64) -> Result<ConvexBody> {
        let kind = {
            let m = v.as_object().ok_or_else(|| Error::schema(path, "expected an object"))?;
            string(req(m, path, "kind")?, &ptr(path, "kind"))?
        };
        let fields: &[&str] = match kind.as_str() {
            "box" => &["lo", "hi"],
            "ball" => &["center", "radius"],
            "polyhedron" => &["a", "b", "eq_a", "eq_b", "bbox"],
            "simplex" => &["dim"],
            "point" => &["at"],
            "hull" => &["points"],
            "product" | "intersection" => &["parts"],
            "parallel" => &["base", "eps"],
            "empty" => &["bbox"],
            other => return Err(Error::schema(ptr(path, "kind"), format!("unknown body kind {other:?}"))),
        };
        let mut allowed = vec!["kind", "inner_radius"];
        allowed.extend_from_slice(fields);
        let m = self.object(v, path, &allowed)?;
        let body = match kind.as_str() {
            "box" => {
                let lo = vector(req(m, path, "lo")?, &ptr(path, "lo"))?;
                let hi = vector(req(m, path, "hi")?, &ptr(path, "hi"))?;
                ConvexBody::box_body(at(path, BoxRegion::new(lo, hi))?)
            }
            "ball" => {
                let c = vector(req(m, path, "center")?, &ptr(path, "center"))?;
                let r = num(req(m, path, "radius")?, &ptr(path, "radius"))?;
                at(path, ConvexBody::ball(c, r))?
            }
            "polyhedron" => {
                let bbox = self.box_region(req(m, path, "bbox")?, &ptr(path, "bbox"))?;
                let n = bbox.dim();
                let a = matrix(req(m, path, "a")?, &ptr(path, "a"), Some(n))?;
                let b = vector(req(m, path, "b")?, &ptr(path, "b"))?;
                let (ea, eb) = match (m.get("eq_a"), m.get("eq_b")) {
                    (None, None) => (DMatrix::zeros(0, n), Vector::zeros(0)),
                    (Some(ea), Some(eb)) => (matrix(ea, &ptr(path, "eq_a"), Some(n))?, vector(eb, &ptr(path, "eq_b"))?),
                    (None, Some(_)) => return Err(Error::schema(ptr(path, "eq_a"), "missing required field")),
                    (Some(_), None) => return Err(Error::schema(ptr(path, "eq_b"), "missing required field")),
                };
                at(path, ConvexBody::polyhedron_with_equalities(a, b, ea, eb, bbox))?
            }
            "simplex" => {
                let d = uint(req(m, path, "dim")?, &ptr(path, "dim"))?;
                if d == 0 {
                    return Err(Error::schema(ptr(path, "dim"), "dimension must be positive"));
                }
                ConvexBody::simplex(d)
            }
            "point" => ConvexBody::point(vector(req(m, path, "at")?, &ptr(path, "at"))?),
            "hull" => {
                let pp = ptr(path, "points");
                let pts = array(req(m, path, "points")?, &pp)?
                    .iter()
                    .enumerate()
                    .map(|(i, x)| vector(x, &idx(&pp, i)))
                    .collect::<Result<Vec<_>>>()?;
                at(path, ConvexBody::hull(pts))?
            }
            "product" | "intersection" => {
                let pp = ptr(path, "parts");
                let parts = array(req(m, path, "parts")?, &pp)?
                    .iter()
                    .enumerate()
                    .map(|(i, x)| self.body(x, &idx(&pp, i), 0.0))
                    .collect::<Result<Vec<_>>>()?;
                if kind == "product" {
                    at(path, ConvexBody::product(parts))?
                } else {
                    at(path, ConvexBody::intersection(parts))?
                }
            }
            "parallel" => {
                let base = self.body(req(m, path, "base")?, &ptr(path, "base"), 0.0)?;
                let eps = num(req(m, path, "eps")?, &ptr(path, "eps"))?;
                base.parallel(eps)
            }
            "empty" => ConvexBody::empty(self.box_region(req(m, path, "bbox")?, &ptr(path, "bbox"))?),
            _ => unreachable!(),
        };
        let body = match m.get("inner_radius") {
            Some(r) => body.with_inner_radius(nonnegative(r, &ptr(path, "inner_radius"))?),
            None => body,
        };
        Ok(if eta > 0.0 { body.with_margin(eta) } else { body })
    }

    fn operator(&mut self, v: &Value, path: &str) -> Result<Arc<dyn Operator>> {
        let kind = {
            let m = v.as_object().ok_or_else(|| Error::schema(path, "expected an object"))?;
            string(req(m, path, "kind")?, &ptr(path, "kind"))?
        };
        match kind.as_str() {
            "affine" => {
                let m = self.object(v, path, &["kind", "matrix", "offset"])?;
                let matrix = matrix(req(m, path, "matrix")?, &ptr(path, "matrix"), None)?;
                let offset = vector(req(m, path, "offset")?, &ptr(path, "offset"))?;
                Ok(Arc::new(at(path, AffineOperator::new(matrix, offset))?))
            }
            "circuit" => {
                let m = self.object(v, path, &["kind", "circuit"])?;
                Ok(Arc::new(self.circuit(req(m, path, "circuit")?, &ptr(path, "circuit"))?))
            }
            other => Err(Error::schema(ptr(path, "kind"), format!("unknown operator kind {other:?}"))),
        }
    }

    fn circuit(&mut self, v: &Value, path: &str) -> Result<LinCircuit> {
        let spec: CircuitSpec = serde_json::from_value(v.clone()).map_err(|e| Error::schema(path, e.to_string()))?;
        at(path, LinCircuit::from_spec(&spec))
    }

    fn utility(&mut self, v: &Value, path: &str) -> Result<Utility> {
        let kind = {
            let m = v.as_object().ok_or_else(|| Error::schema(path, "expected an object"))?;
            string(req(m, path, "kind")?, &ptr(path, "kind"))?
        };
        match kind.as_str() {
            "quadratic" => {
                let m = self.object(v, path, &["kind", "q", "linear", "constant"])?;
                let linear = vector(req(m, path, "linear")?, &ptr(path, "linear"))?;
                let q = matrix(req(m, path, "q")?, &ptr(path, "q"), Some(linear.len()))?;
                if q.nrows() != linear.len() {
                    return Err(Error::schema(ptr(path, "q"), "q must be square and match linear"));
                }
                let constant = match m.get("constant") {
                    Some(c) => num(c, &ptr(path, "constant"))?,
                    None => 0.0,
                };
                Ok(Utility::Quadratic(QuadraticForm { q, linear, constant }))
            }
            "circuit" => {
                let m = self.object(v, path, &["kind", "circuit"])?;
                let c = self.circuit(req(m, path, "circuit")?, &ptr(path, "circuit"))?;
                if c.outputs().len() != 1 {
                    return Err(Error::schema(ptr(path, "circuit"), "utility circuits have one output"));
                }
                Ok(Utility::Circuit(c))
            }
            other => Err(Error::schema(ptr(path, "kind"), format!("unknown utility kind {other:?}"))),
        }
    }

    /// `R(x) = base + shift·x` over `domain`.
    fn moving_set(&mut self, m: &Map<String, Value>, p: &str, eta: f64) -> Result<Correspondence> {
        let base = self.body(req(m, p, "base")?, &ptr(p, "base"), eta)?;
        let domain = self.box_region(req(m, p, "domain")?, &ptr(p, "domain"))?;
        let shift = match m.get("shift") {
            Some(s) => matrix(s, &ptr(p, "shift"), Some(domain.dim()))?,
            None => DMatrix::zeros(base.dim(), domain.dim()),
        };
        if shift.nrows() != base.dim() {
            return Err(Error::schema(ptr(p, "shift"), format!("expected {} rows", base.dim())));
        }
        at(p, translated_family(base, shift, domain))
    }

    fn game(&mut self, v: &Value, p: &str, eta: f64) -> Result<GameInstance> {
        let m = v.as_object().ok_or_else(|| Error::schema(p, "expected an object"))?;
        if m.contains_key("bimatrix") {
            let m = self.object(v, p, &["bimatrix"])?;
            let bp = ptr(p, "bimatrix");
            let bm = self.object(req(m, p, "bimatrix")?, &bp, &["a", "b"])?;
            let a = matrix(req(bm, &bp, "a")?, &ptr(&bp, "a"), None)?;
            let b = matrix(req(bm, &bp, "b")?, &ptr(&bp, "b"), Some(a.ncols()))?;
            return Ok(GameInstance::Concave(at(&bp, ConcaveGame::bimatrix(&a, &b))?));
        }
        if m.contains_key("sv") {
            let m = self.object(v, p, &["sv"])?;
            let sp = ptr(p, "sv");
            let sm = self.object(req(m, p, "sv")?, &sp, &["formula", "third_player", "table"])?;
            let formula = self.cnf(req(sm, &sp, "formula")?, &ptr(&sp, "formula"))?;
            let third = match sm.get("third_player") {
                Some(b) => boolean(b, &ptr(&sp, "third_player"))?,
                None => false,
            };
            let game = build_sv_game(&formula, third);
            if let Some(t) = sm.get("table") {
                let stored: SvGame = serde_json::from_value(t.clone()).map_err(|e| Error::schema(ptr(&sp, "table"), e.to_string()))?;
                if stored != game {
                    return Err(Error::schema(ptr(&sp, "table"), "table disagrees with the formula"));
                }
            }
            return Ok(GameInstance::Sv { formula, game });
        }
        let m = self.object(v, p, &["blocks", "utilities", "strategy_sets", "common_constraint"])?;
        let bp = ptr(p, "blocks");
        let blocks = array(req(m, p, "blocks")?, &bp)?
            .iter()
            .enumerate()
            .map(|(i, b)| uint(b, &idx(&bp, i)))
            .collect::<Result<Vec<_>>>()?;
        let up = ptr(p, "utilities");
        let utilities = array(req(m, p, "utilities")?, &up)?
            .iter()
            .enumerate()
            .map(|(i, u)| self.utility(u, &idx(&up, i)))
            .collect::<Result<Vec<_>>>()?;
        let sp = ptr(p, "strategy_sets");
        let sets = array(req(m, p, "strategy_sets")?, &sp)?
            .iter()
            .enumerate()
            .map(|(i, s)| self.body(s, &idx(&sp, i), eta))
            .collect::<Result<Vec<_>>>()?;
        let mut game = at(p, ConcaveGame::new(blocks, utilities, sets))?;
        if let Some(c) = m.get("common_constraint") {
            let cp = ptr(p, "common_constraint");
            let body = self.body(c, &cp, eta)?;
            game = at(&cp, game.with_common_constraint(body))?;
        }
        Ok(GameInstance::Concave(game))
    }

    fn mlf(&mut self, v: &Value, p: &str, eta: f64) -> Result<MlfGame> {
        let m = self.object(
            v,
            p,
            &["followers", "leader_sets", "losses", "follower_box", "multiplier_bound", "strict", "modes"],
        )?;
        let lp = ptr(p, "leader_sets");
        let ls = array(req(m, p, "leader_sets")?, &lp)?;
        if ls.len() != 2 {
            return Err(Error::schema(lp, "expected two leader sets"));
        }
        let set_i = self.body(&ls[0], &idx(&lp, 0), eta)?;
        let set_ii = self.body(&ls[1], &idx(&lp, 1), eta)?;
        let (ni, nii) = (set_i.dim(), set_ii.dim());
        let op = ptr(p, "losses");
        let ls = array(req(m, p, "losses")?, &op)?;
        if ls.len() != 2 {
            return Err(Error::schema(op, "expected two losses"));
        }
        let loss_i = self.utility(&ls[0], &idx(&op, 0))?;
        let loss_ii = self.utility(&ls[1], &idx(&op, 1))?;
        let fp = ptr(p, "followers");
        let raw = array(req(m, p, "followers")?, &fp)?;
        let mut sizes = Vec::with_capacity(raw.len());
        for (i, f) in raw.iter().enumerate() {
            let path = idx(&fp, i);
            let fm = f.as_object().ok_or_else(|| Error::schema(&path, "expected an object"))?;
            sizes.push(matrix(req(fm, &path, "m")?, &ptr(&path, "m"), None)?.nrows());
        }
        let n: usize = sizes.iter().sum();
        let mut followers = Vec::with_capacity(raw.len());
        for (i, f) in raw.iter().enumerate() {
            let path = idx(&fp, i);
            let fm = self.object(f, &path, &["m", "a_i", "a_ii", "b", "c_i", "c_ii", "d", "c_map", "c_offset"])?;
            let mat = |key: &str, cols: usize| matrix(req(fm, &path, key)?, &ptr(&path, key), Some(cols));
            let bp = ptr(&path, "b");
            let b = array(req(fm, &path, "b")?, &bp)?
                .iter()
                .enumerate()
                .map(|(j, x)| matrix(x, &idx(&bp, j), sizes.get(j).copied()))
                .collect::<Result<Vec<_>>>()?;
            followers.push(Follower {
                m: mat("m", sizes[i])?,
                a_i: mat("a_i", ni)?,
                a_ii: mat("a_ii", nii)?,
                b,
                c_i: mat("c_i", ni)?,
                c_ii: mat("c_ii", nii)?,
                d: mat("d", sizes[i])?,
                c_map: mat("c_map", ni + nii + n - sizes[i])?,
                c_offset: vector(req(fm, &path, "c_offset")?, &ptr(&path, "c_offset"))?,
            });
        }
        let follower_box = self.box_region(req(m, p, "follower_box")?, &ptr(p, "follower_box"))?;
        let bound = positive(req(m, p, "multiplier_bound")?, &ptr(p, "multiplier_bound"))?;
        let mut game = at(p, MlfGame::new(followers, [set_i, set_ii], [loss_i, loss_ii], follower_box, bound))?;
        if let Some(s) = m.get("strict") {
            game = game.strict(boolean(s, &ptr(p, "strict"))?);
        }
        if let Some(modes) = m.get("modes") {
            let mp = ptr(p, "modes");
            let list = array(modes, &mp)?;
            if list.len() != 2 {
                return Err(Error::schema(mp, "expected one mode per leader"));
            }
            for (i, leader) in [Leader::I, Leader::II].into_iter().enumerate() {
                let path = idx(&mp, i);
                let mode = match &list[i] {
                    Value::String(s) if s == "relaxed" => PartialResponseMode::Relaxed,
                    Value::String(s) if s == "zero_lambda" => game.zero_lambda_mode(),
                    Value::Object(_) => {
                        let mm = self.object(&list[i], &path, &["rows", "rhs"])?;
                        PartialResponseMode::Restricted {
                            rows: matrix(req(mm, &path, "rows")?, &ptr(&path, "rows"), Some(game.lifted_dim()))?,
                            rhs: vector(req(mm, &path, "rhs")?, &ptr(&path, "rhs"))?,
                        }
                    }
                    _ => return Err(Error::schema(path, "expected \"relaxed\", \"zero_lambda\" or {rows, rhs}")),
                };
                game = at(&path, game.with_mode(leader, mode))?;
            }
        }
        Ok(game)
    }

    fn cnf(&mut self, v: &Value, p: &str) -> Result<Cnf3> {
        let m = self.object(v, p, &["n", "clauses"])?;
        let n = uint(req(m, p, "n")?, &ptr(p, "n"))?;
        let cp = ptr(p, "clauses");
        let clauses = array(req(m, p, "clauses")?, &cp)?
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let path = idx(&cp, i);
                let lits = array(c, &path)?;
                if lits.len() != 3 {
                    return Err(Error::schema(&path, "clauses have exactly three literals"));
                }
                let mut out = [0i64; 3];
                for (k, l) in lits.iter().enumerate() {
                    out[k] = l.as_i64().ok_or_else(|| Error::schema(idx(&path, k), "expected an integer literal"))?;
                }
                Ok(out)
            })
            .collect::<Result<Vec<_>>>()?;
        at(p, Cnf3::new(n, clauses))
    }
}

/// `x ↦ base + S x` with Hausdorff constant `‖S‖₂`.
pub fn translated_family(base: ConvexBody, shift: DMatrix<f64>, domain: BoxRegion) -> Result<Correspondence> {
    let n = base.dim();
    let mut lo = base.bbox().lo().clone();
    let mut hi = base.bbox().hi().clone();
    for r in 0..n {
        for c in 0..domain.dim() {
            let (a, b) = (shift[(r, c)] * domain.lo()[c], shift[(r, c)] * domain.hi()[c]);
            lo[r] += a.min(b);
            hi[r] += a.max(b);
        }
    }
    let range = BoxRegion::new(lo, hi)?;
    let lipschitz = if shift.nrows() * shift.ncols() == 0 {
        0.0
    } else {
        shift.clone().svd(false, false).singular_values.max()
    };
    let lipschitz = if lipschitz > 0.0 { lipschitz } else { f64::MIN_POSITIVE };
    Correspondence::new(
        domain,
        range,
        lipschitz,
        Arc::new(move |x: &Vector| translate(&base, &(&shift * x))),
    )
}

/// `body + t`.
pub fn translate(body: &ConvexBody, t: &Vector) -> Result<ConvexBody> {
    if t.iter().all(|&v| v == 0.0) {
        return Ok(body.clone());
    }
    let shift_box = |b: &BoxRegion| BoxRegion::new(b.lo() + t, b.hi() + t);
    let out = match body.kind() {
        BodyKind::Box(b) => ConvexBody::box_body(shift_box(b)?),
        BodyKind::Ball { center, radius } => ConvexBody::ball(center + t, *radius)?,
        BodyKind::Polyhedron(p) => ConvexBody::polyhedron_with_equalities(
            p.a.clone(),
            &p.b + &p.a * t,
            p.eq_a.clone(),
            &p.eq_b + &p.eq_a * t,
            shift_box(body.bbox())?,
        )?,
        BodyKind::Point(x) => ConvexBody::point(x + t),
        BodyKind::Hull(ps) => ConvexBody::hull(ps.iter().map(|p| p + t).collect())?,
        BodyKind::Product(parts) => {
            let mut at = 0;
            let mut out = Vec::with_capacity(parts.len());
            for f in parts {
                out.push(translate(f, &t.rows(at, f.dim()).into_owned())?);
                at += f.dim();
            }
            ConvexBody::product(out)?
        }
        BodyKind::Intersection(parts) => {
            ConvexBody::intersection(parts.iter().map(|f| translate(f, t)).collect::<Result<_>>()?)?
        }
        BodyKind::Parallel { base, eps } => translate(base, t)?.parallel(*eps),
        BodyKind::Empty => ConvexBody::empty(shift_box(body.bbox())?),
        BodyKind::Oracle { .. } => return Err(Error::invalid("oracle bodies cannot be translated")),
    };
    Ok(out.with_inner_radius(body.inner_radius()).with_margin(body.margin()))
}

/// `x ↦ conv{F_k(x)}`.
pub fn hull_of_operators(ops: Vec<Arc<dyn Operator>>, domain: BoxRegion) -> Result<Correspondence> {
    if ops.is_empty() {
        return Err(Error::invalid("at least one operator is required"));
    }
    let mut range: Option<BoxRegion> = None;
    let mut lipschitz: f64 = f64::MIN_POSITIVE;
    for op in &ops {
        let c = point_valued(op.clone(), domain.clone())?;
        lipschitz = lipschitz.max(c.lipschitz());
        range = Some(match range {
            None => c.range().clone(),
            Some(r) => BoxRegion::new(r.lo().inf(c.range().lo()), r.hi().sup(c.range().hi()))?,
        });
    }
    let range = range.expect("nonempty operator list");
    Correspondence::new(
        domain,
        range,
        lipschitz,
        Arc::new(move |x: &Vector| {
            let pts = ops.iter().map(|o| o.eval(x)).collect::<Result<Vec<_>>>()?;
            if pts.len() == 1 {
                Ok(ConvexBody::point(pts.into_iter().next().expect("one point")))
            } else {
                ConvexBody::hull(pts)
            }
        }),
    )
}

fn vec_json(v: &Vector) -> Value {
    Value::from(v.iter().copied().collect::<Vec<f64>>())
}

fn mat_json(m: &DMatrix<f64>) -> Value {
    Value::from((0..m.nrows()).map(|r| m.row(r).iter().copied().collect::<Vec<f64>>()).collect::<Vec<_>>())
}

fn box_json(b: &BoxRegion) -> Value {
    json!({"lo": vec_json(b.lo()), "hi": vec_json(b.hi())})
}

/// Serialized form of a body; oracle bodies have none.
pub fn body_to_json(body: &ConvexBody) -> Result<Value> {
    let mut v = match body.kind() {
        BodyKind::Box(b) => json!({"kind": "box", "lo": vec_json(b.lo()), "hi": vec_json(b.hi())}),
        BodyKind::Ball { center, radius } => json!({"kind": "ball", "center": vec_json(center), "radius": radius}),
        BodyKind::Polyhedron(p) => {
            let mut m = json!({"kind": "polyhedron", "a": mat_json(&p.a), "b": vec_json(&p.b), "bbox": box_json(body.bbox())});
            if p.eq_a.nrows() > 0 {
                m["eq_a"] = mat_json(&p.eq_a);
                m["eq_b"] = vec_json(&p.eq_b);
            }
            m
        }
        BodyKind::Point(x) => json!({"kind": "point", "at": vec_json(x)}),
        BodyKind::Hull(ps) => json!({"kind": "hull", "points": ps.iter().map(vec_json).collect::<Vec<_>>()}),
        BodyKind::Product(parts) => json!({"kind": "product", "parts": parts.iter().map(body_to_json).collect::<Result<Vec<_>>>()?}),
        BodyKind::Intersection(parts) => {
            json!({"kind": "intersection", "parts": parts.iter().map(body_to_json).collect::<Result<Vec<_>>>()?})
        }
        BodyKind::Parallel { base, eps } => json!({"kind": "parallel", "base": body_to_json(base)?, "eps": eps}),
        BodyKind::Empty => json!({"kind": "empty", "bbox": box_json(body.bbox())}),
        BodyKind::Oracle { .. } => return Err(Error::invalid("oracle bodies have no serialized form")),
    };
    let default_radius = match body.kind() {
        BodyKind::Box(b) => b.half_widths().min(),
        BodyKind::Ball { radius, .. } => *radius,
        BodyKind::Product(parts) => parts.iter().map(|b| b.inner_radius()).fold(f64::INFINITY, f64::min),
        _ => 0.0,
    };
    if body.inner_radius() != default_radius {
        v["inner_radius"] = Value::from(body.inner_radius());
    }
    Ok(v)
}

/// Recovers `F(x) = Jx + c` for an operator that is affine on `region`,
/// confirmed at the box corners, its center and a few random points.
pub fn affine_of(op: &dyn Operator, region: &BoxRegion) -> Result<AffineOperator> {
    let n = op.input_dim();
    let zero = Vector::zeros(n);
    let offset = op.eval(&zero)?;
    let mut jm = DMatrix::zeros(op.output_dim(), n);
    for j in 0..n {
        let mut e = zero.clone();
        e[j] = 1.0;
        jm.set_column(j, &(op.eval(&e)? - &offset));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut probes = vec![region.lo().clone(), region.hi().clone(), region.center()];
    probes.extend((0..4).map(|_| Vector::from_fn(n, |i, _| rng.gen_range(region.lo()[i]..=region.hi()[i]))));
    for x in probes {
        let fx = op.eval(&x)?;
        let scale = 1.0 + fx.amax() + jm.amax() * x.amax();
        if (&jm * &x + &offset - fx).amax() > 1e-9 * scale {
            return Err(Error::invalid("operator is not affine"));
        }
    }
    AffineOperator::new(jm, offset)
}

pub fn affine_to_json(op: &AffineOperator) -> Value {
    json!({"kind": "affine", "matrix": mat_json(&op.matrix), "offset": vec_json(&op.offset)})
}

/// Problem file for a VI.
pub fn vi_file(problem: &VIProblem, tolerances: Tolerances) -> Result<ProblemFile> {
    let op = affine_of(problem.operator.as_ref(), problem.set.bbox())?;
    Ok(ProblemFile {
        version: VERSION.into(),
        kind: Kind::Vi,
        payload: json!({"set": body_to_json(&problem.set)?, "operator": affine_to_json(&op)}),
        tolerances,
    })
}

/// Problem file for an MVI.
pub fn mvi_file(problem: &MVIProblem, tolerances: Tolerances) -> Result<ProblemFile> {
    let cols = problem
        .columns
        .iter()
        .map(|c| affine_of(c.as_ref(), problem.set.bbox()).map(|a| affine_to_json(&a)))
        .collect::<Result<Vec<_>>>()?;
    Ok(ProblemFile {
        version: VERSION.into(),
        kind: Kind::Mvi,
        payload: json!({"set": body_to_json(&problem.set)?, "columns": cols}),
        tolerances,
    })
}

/// Problem file for the gadget game of `formula`.
pub fn sv_file(formula: &Cnf3, third_player: bool, tolerances: Tolerances) -> Result<ProblemFile> {
    let table = build_sv_game(formula, third_player);
    Ok(ProblemFile {
        version: VERSION.into(),
        kind: Kind::Game,
        payload: json!({"sv": {"formula": formula, "third_player": third_player, "table": serde_json::to_value(&table)?}}),
        tolerances,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circuits::CircuitBuilder;

    fn minimal_vi() -> Value {
        json!({
            "version": "1",
            "kind": "vi",
            "payload": {
                "set": {"kind": "box", "lo": [0.0], "hi": [1.0]},
                "operator": {"kind": "circuit", "circuit": {
                    "inputs": 1,
                    "nodes": [{"op": "input", "value": 0.0}, {"op": "const", "value": 1.0}, {"op": "add", "args": [0, 1]}],
                    "outputs": [2]
                }}
            },
            "tolerances": {"beta": 1e-3}
        })
    }

    #[test]
    fn minimal_vi_parses() {
        let (file, warnings) = parse_problem_value(&minimal_vi(), false).unwrap();
        assert!(warnings.is_empty());
        assert_eq!(file.kind, Kind::Vi);
        assert_eq!(file.tolerances.eps, 1e-3);
        let Instance::Vi(p) = file.instance(1e-3, 0.0).unwrap() else { panic!() };
        assert_eq!(p.operator.eval(&Vector::from_element(1, 2.0)).unwrap()[0], 3.0);
    }

    #[test]
    fn missing_beta_names_pointer() {
        let mut v = minimal_vi();
        v["tolerances"] = json!({"eps": 1e-3});
        match parse_problem_value(&v, false) {
            Err(Error::Schema { pointer, .. }) => assert_eq!(pointer, "/tolerances/beta"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_fields_strict_and_lenient() {
        let mut v = minimal_vi();
        v["payload"]["set"]["colour"] = json!("red");
        match parse_problem_value(&v, false) {
            Err(Error::Schema { pointer, .. }) => assert_eq!(pointer, "/payload/set/colour"),
            other => panic!("{other:?}"),
        }
        let (_, warnings) = parse_problem_value(&v, true).unwrap();
        assert_eq!(warnings.len(), 1);
        assert!(warnings[0].contains("/payload/set/colour"));
    }

    #[test]
    fn nested_errors_carry_paths() {
        let mut v = minimal_vi();
        v["payload"]["set"] = json!({"kind": "ball", "center": [0.0, "x"], "radius": 1.0});
        match parse_problem_value(&v, false) {
            Err(Error::Schema { pointer, .. }) => assert_eq!(pointer, "/payload/set/center/1"),
            other => panic!("{other:?}"),
        }
        v["payload"]["set"] = json!({"kind": "ball", "center": [0.0], "radius": -1.0});
        match parse_problem_value(&v, false) {
            Err(Error::Schema { pointer, .. }) => assert_eq!(pointer, "/payload/set"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn dimacs_clause_count() {
        let text = "c example\np cnf 3 4\n1 -2 3 0\n-1 2 0\n2 3 -1 0\n3 0\n";
        let header: usize = text.lines().find(|l| l.starts_with('p')).unwrap().split_whitespace().nth(3).unwrap().parse().unwrap();
        let (file, _) = parse_problem_bytes(text.as_bytes(), true, false).unwrap();
        assert_eq!(file.kind, Kind::Cnf);
        let Instance::Cnf(c) = file.instance(1e-3, 0.0).unwrap() else { panic!() };
        assert_eq!(c.clauses.len(), header);
        assert_eq!(c.clauses[1], [-1, 2, 2]);
    }

    #[test]
    fn problem_file_round_trips() {
        let (file, _) = parse_problem_value(&minimal_vi(), false).unwrap();
        let again = parse_problem_value(&file.to_json(), false).unwrap().0;
        assert_eq!(file, again);
    }

    #[test]
    fn bodies_round_trip() {
        let bodies = vec![
            ConvexBody::box_body(BoxRegion::cube(2, 1.0)),
            ConvexBody::ball(Vector::from_vec(vec![1.0, 2.0]), 0.5).unwrap(),
            ConvexBody::simplex(3),
            ConvexBody::hull(vec![Vector::zeros(2), Vector::from_element(2, 1.0)]).unwrap(),
            ConvexBody::product(vec![ConvexBody::simplex(2), ConvexBody::box_body(BoxRegion::cube(1, 2.0))]).unwrap(),
            ConvexBody::box_body(BoxRegion::cube(2, 1.0)).parallel(0.1),
        ];
        let mut r = Reader::new(true);
        for b in bodies {
            let v = body_to_json(&b).unwrap();
            let back = r.body(&v, "", 0.0).unwrap();
            assert_eq!(body_to_json(&back).unwrap(), v);
            assert_eq!(back.inner_radius(), b.inner_radius());
        }
    }

    #[test]
    fn translated_family_moves_the_base() {
        let base = ConvexBody::box_body(BoxRegion::cube(1, 0.5));
        let corr = translated_family(base, DMatrix::from_element(1, 1, 0.5), BoxRegion::cube(1, 1.0)).unwrap();
        let at = corr.at(&Vector::from_element(1, 1.0)).unwrap();
        assert!(at.contains(&Vector::from_element(1, 0.9)).unwrap());
        assert!(!at.contains(&Vector::from_element(1, -0.1)).unwrap());
        assert_eq!(corr.lipschitz(), 0.5);
        assert_eq!(corr.range().lo()[0], -1.0);
    }

    #[test]
    fn affine_recovery() {
        let op = AffineOperator::new(DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]), Vector::from_vec(vec![5.0, 6.0])).unwrap();
        let back = affine_of(&op, &BoxRegion::cube(2, 1.0)).unwrap();
        assert_eq!(back.matrix, op.matrix);
        assert_eq!(back.offset, op.offset);
        let mut b = CircuitBuilder::new();
        let x = b.input(0);
        let z = b.constant(0.0);
        let m = b.max(x, z);
        let relu = b.build(1, vec![m]).unwrap();
        assert!(affine_of(&relu, &BoxRegion::cube(1, 1.0)).is_err());
    }

}
