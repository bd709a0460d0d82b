//! Linear arithmetic circuits and the operator abstraction shared by solvers.

use std::collections::VecDeque;
use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::geometry::{BoxRegion, Vector, TAU};

/// A vector-valued map with a (sub)gradient.
pub trait Operator: Send + Sync {
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    fn eval(&self, x: &Vector) -> Result<Vector>;
    /// One element of the Clarke generalized Jacobian, `output_dim × input_dim`.
    fn jacobian(&self, x: &Vector) -> Result<DMatrix<f64>>;
    /// Upper bound on the ∞-norm Lipschitz constant of each output over `region`.
    fn lipschitz_bound(&self, region: &BoxRegion) -> f64;
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Gate {
    Input(usize),
    Const(f64),
    Add(usize, usize),
    Sub(usize, usize),
    Min(usize, usize),
    Max(usize, usize),
    Scale(usize, f64),
}

impl Gate {
    fn args(&self) -> Vec<usize> {
        match *self {
            Gate::Input(_) | Gate::Const(_) => vec![],
            Gate::Add(a, b) | Gate::Sub(a, b) | Gate::Min(a, b) | Gate::Max(a, b) => vec![a, b],
            Gate::Scale(a, _) => vec![a],
        }
    }
}

/// On-disk node: `{"op": "...", "args": [ids], "value": q}`. Input gates carry
/// their input index in `value`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeSpec {
    pub op: String,
    #[serde(default)]
    pub args: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CircuitSpec {
    pub inputs: usize,
    pub nodes: Vec<NodeSpec>,
    pub outputs: Vec<usize>,
}

/// A DAG over `{input, const, +, −, min, max, ×ζ}`.
#[derive(Clone, PartialEq)]
pub struct LinCircuit {
    inputs: usize,
    gates: Vec<Gate>,
    outputs: Vec<usize>,
    order: Vec<usize>,
}

impl fmt::Debug for LinCircuit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LinCircuit")
            .field("inputs", &self.inputs)
            .field("gates", &self.gates)
            .field("outputs", &self.outputs)
            .finish()
    }
}

impl LinCircuit {
    pub fn new(inputs: usize, gates: Vec<Gate>, outputs: Vec<usize>) -> Result<Self> {
        let n = gates.len();
        if outputs.is_empty() {
            return Err(Error::Circuit("circuit has no outputs".into()));
        }
        for (id, g) in gates.iter().enumerate() {
            match *g {
                Gate::Input(i) if i >= inputs => {
                    return Err(Error::Circuit(format!("node {id} reads input {i} of {inputs}")))
                }
                Gate::Const(q) | Gate::Scale(_, q) if !q.is_finite() => {
                    return Err(Error::Circuit(format!("node {id} has a non-finite constant")))
                }
                _ => {}
            }
            for a in g.args() {
                if a >= n {
                    return Err(Error::Circuit(format!("node {id} references missing node {a}")));
                }
            }
        }
        for &o in &outputs {
            if o >= n {
                return Err(Error::Circuit(format!("output references missing node {o}")));
            }
        }
        // Kahn's algorithm; children before parents.
        let mut indegree = vec![0usize; n];
        let mut users: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (id, g) in gates.iter().enumerate() {
            for a in g.args() {
                indegree[id] += 1;
                users[a].push(id);
            }
        }
        let mut queue: VecDeque<usize> = (0..n).filter(|&i| indegree[i] == 0).collect();
        let mut order = Vec::with_capacity(n);
        while let Some(id) = queue.pop_front() {
            order.push(id);
            for &u in &users[id] {
                indegree[u] -= 1;
                if indegree[u] == 0 {
                    queue.push_back(u);
                }
            }
        }
        if order.len() != n {
            return Err(Error::Circuit("circuit contains a cycle".into()));
        }
        Ok(LinCircuit {
            inputs,
            gates,
            outputs,
            order,
        })
    }

    pub fn from_spec(spec: &CircuitSpec) -> Result<Self> {
        let mut gates = Vec::with_capacity(spec.nodes.len());
        for (id, node) in spec.nodes.iter().enumerate() {
            let arity = |k: usize| -> Result<()> {
                if node.args.len() == k {
                    Ok(())
                } else {
                    Err(Error::Circuit(format!(
                        "node {id} ({}) needs {k} args, got {}",
                        node.op,
                        node.args.len()
                    )))
                }
            };
            let value = || -> Result<f64> {
                node.value
                    .ok_or_else(|| Error::Circuit(format!("node {id} ({}) needs a value", node.op)))
            };
            let g = match node.op.as_str() {
                "input" => {
                    arity(0)?;
                    let v = value()?;
                    if v < 0.0 || v.fract() != 0.0 {
                        return Err(Error::Circuit(format!("node {id} has invalid input index {v}")));
                    }
                    Gate::Input(v as usize)
                }
                "const" => {
                    arity(0)?;
                    Gate::Const(value()?)
                }
                "add" => {
                    arity(2)?;
                    Gate::Add(node.args[0], node.args[1])
                }
                "sub" => {
                    arity(2)?;
                    Gate::Sub(node.args[0], node.args[1])
                }
                "min" => {
                    arity(2)?;
                    Gate::Min(node.args[0], node.args[1])
                }
                "max" => {
                    arity(2)?;
                    Gate::Max(node.args[0], node.args[1])
                }
                "scale" => {
                    arity(1)?;
                    Gate::Scale(node.args[0], value()?)
                }
                other => return Err(Error::Circuit(format!("node {id} has unknown op {other:?}"))),
            };
            gates.push(g);
        }
        LinCircuit::new(spec.inputs, gates, spec.outputs.clone())
    }

    pub fn to_spec(&self) -> CircuitSpec {
        let nodes = self
            .gates
            .iter()
            .map(|g| {
                let (op, value) = match *g {
                    Gate::Input(i) => ("input", Some(i as f64)),
                    Gate::Const(q) => ("const", Some(q)),
                    Gate::Add(..) => ("add", None),
                    Gate::Sub(..) => ("sub", None),
                    Gate::Min(..) => ("min", None),
                    Gate::Max(..) => ("max", None),
                    Gate::Scale(_, z) => ("scale", Some(z)),
                };
                NodeSpec {
                    op: op.to_string(),
                    args: g.args(),
                    value,
                }
            })
            .collect();
        CircuitSpec {
            inputs: self.inputs,
            nodes,
            outputs: self.outputs.clone(),
        }
    }

    pub fn gates(&self) -> &[Gate] {
        &self.gates
    }

    pub fn outputs(&self) -> &[usize] {
        &self.outputs
    }

    fn node_values(&self, x: &Vector) -> Result<Vec<f64>> {
        check_dim(self.inputs, x.len())?;
        let mut val = vec![0.0; self.gates.len()];
        for &id in &self.order {
            val[id] = match self.gates[id] {
                Gate::Input(i) => x[i],
                Gate::Const(q) => q,
                Gate::Add(a, b) => val[a] + val[b],
                Gate::Sub(a, b) => val[a] - val[b],
                Gate::Min(a, b) => val[a].min(val[b]),
                Gate::Max(a, b) => val[a].max(val[b]),
                Gate::Scale(a, z) => z * val[a],
            };
        }
        Ok(val)
    }

    pub fn eval(&self, x: &Vector) -> Result<Vector> {
        let val = self.node_values(x)?;
        Ok(Vector::from_iterator(self.outputs.len(), self.outputs.iter().map(|&o| val[o])))
    }

    /// Reverse-mode subgradient; min/max route through the attaining child,
    /// the left child on ties.
    pub fn subgrad(&self, x: &Vector) -> Result<DMatrix<f64>> {
        let val = self.node_values(x)?;
        let mut out = DMatrix::zeros(self.outputs.len(), self.inputs);
        let mut adj = vec![0.0; self.gates.len()];
        for (row, &o) in self.outputs.iter().enumerate() {
            adj.iter_mut().for_each(|a| *a = 0.0);
            adj[o] = 1.0;
            for &id in self.order.iter().rev() {
                let g = adj[id];
                if g == 0.0 {
                    continue;
                }
                match self.gates[id] {
                    Gate::Input(i) => out[(row, i)] += g,
                    Gate::Const(_) => {}
                    Gate::Add(a, b) => {
                        adj[a] += g;
                        adj[b] += g;
                    }
                    Gate::Sub(a, b) => {
                        adj[a] += g;
                        adj[b] -= g;
                    }
                    Gate::Min(a, b) => {
                        if val[a] <= val[b] {
                            adj[a] += g
                        } else {
                            adj[b] += g
                        }
                    }
                    Gate::Max(a, b) => {
                        if val[a] >= val[b] {
                            adj[a] += g
                        } else {
                            adj[b] += g
                        }
                    }
                    Gate::Scale(a, z) => adj[a] += z * g,
                }
            }
        }
        Ok(out)
    }

    /// Sound ∞-norm Lipschitz bound, propagated through the DAG: sums add the
    /// children's bounds, min/max take the larger one, scales multiply by |ζ|.
    pub fn lipschitz(&self) -> f64 {
        let mut bound = vec![0.0_f64; self.gates.len()];
        for &id in &self.order {
            bound[id] = match self.gates[id] {
                Gate::Input(_) => 1.0,
                Gate::Const(_) => 0.0,
                Gate::Add(a, b) | Gate::Sub(a, b) => bound[a] + bound[b],
                Gate::Min(a, b) | Gate::Max(a, b) => bound[a].max(bound[b]),
                Gate::Scale(a, z) => z.abs() * bound[a],
            };
        }
        self.outputs.iter().map(|&o| bound[o]).fold(0.0, f64::max)
    }

    /// Distance to the nearest min/max tie among the gates reached by `x`.
    pub fn kink_margin(&self, x: &Vector) -> Result<f64> {
        let val = self.node_values(x)?;
        Ok(self
            .gates
            .iter()
            .filter_map(|g| match *g {
                Gate::Min(a, b) | Gate::Max(a, b) => Some((val[a] - val[b]).abs()),
                _ => None,
            })
            .fold(f64::INFINITY, f64::min))
    }
}

impl Operator for LinCircuit {
    fn input_dim(&self) -> usize {
        self.inputs
    }

    fn output_dim(&self) -> usize {
        self.outputs.len()
    }

    fn eval(&self, x: &Vector) -> Result<Vector> {
        LinCircuit::eval(self, x)
    }

    fn jacobian(&self, x: &Vector) -> Result<DMatrix<f64>> {
        self.subgrad(x)
    }

    fn lipschitz_bound(&self, _region: &BoxRegion) -> f64 {
        self.lipschitz()
    }
}

/// Incremental circuit construction; every method returns the new node id.
#[derive(Default)]
pub struct CircuitBuilder {
    gates: Vec<Gate>,
}

impl CircuitBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, g: Gate) -> usize {
        self.gates.push(g);
        self.gates.len() - 1
    }

    pub fn input(&mut self, i: usize) -> usize {
        self.push(Gate::Input(i))
    }

    pub fn constant(&mut self, q: f64) -> usize {
        self.push(Gate::Const(q))
    }

    pub fn add(&mut self, a: usize, b: usize) -> usize {
        self.push(Gate::Add(a, b))
    }

    pub fn sub(&mut self, a: usize, b: usize) -> usize {
        self.push(Gate::Sub(a, b))
    }

    pub fn min(&mut self, a: usize, b: usize) -> usize {
        self.push(Gate::Min(a, b))
    }

    pub fn max(&mut self, a: usize, b: usize) -> usize {
        self.push(Gate::Max(a, b))
    }

    pub fn scale(&mut self, a: usize, z: f64) -> usize {
        self.push(Gate::Scale(a, z))
    }

    pub fn build(self, inputs: usize, outputs: Vec<usize>) -> Result<LinCircuit> {
        LinCircuit::new(inputs, self.gates, outputs)
    }
}

/// `x ↦ A x + b`.
#[derive(Clone, Debug, PartialEq)]
pub struct AffineOperator {
    pub matrix: DMatrix<f64>,
    pub offset: Vector,
}

impl AffineOperator {
    pub fn new(matrix: DMatrix<f64>, offset: Vector) -> Result<Self> {
        check_dim(matrix.nrows(), offset.len())?;
        Ok(AffineOperator { matrix, offset })
    }
}

impl Operator for AffineOperator {
    fn input_dim(&self) -> usize {
        self.matrix.ncols()
    }

    fn output_dim(&self) -> usize {
        self.matrix.nrows()
    }

    fn eval(&self, x: &Vector) -> Result<Vector> {
        check_dim(self.input_dim(), x.len())?;
        Ok(&self.matrix * x + &self.offset)
    }

    fn jacobian(&self, x: &Vector) -> Result<DMatrix<f64>> {
        check_dim(self.input_dim(), x.len())?;
        Ok(self.matrix.clone())
    }

    fn lipschitz_bound(&self, _region: &BoxRegion) -> f64 {
        (0..self.matrix.nrows())
            .map(|i| self.matrix.row(i).iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }
}

/// One quadratic output `½ xᵀQx + qᵀx + c`.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadraticForm {
    pub q: DMatrix<f64>,
    pub linear: Vector,
    pub constant: f64,
}

impl QuadraticForm {
    pub fn eval(&self, x: &Vector) -> f64 {
        0.5 * x.dot(&(&self.q * x)) + self.linear.dot(x) + self.constant
    }

    /// Gradient of the symmetric part.
    pub fn gradient(&self, x: &Vector) -> Vector {
        (&self.q + self.q.transpose()) * x * 0.5 + &self.linear
    }
}

/// Vector of quadratic forms sharing one input.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadraticOperator {
    dim: usize,
    forms: Vec<QuadraticForm>,
}

impl QuadraticOperator {
    pub fn new(dim: usize, forms: Vec<QuadraticForm>) -> Result<Self> {
        if forms.is_empty() {
            return Err(Error::invalid("quadratic operator needs at least one output"));
        }
        for f in &forms {
            check_dim(dim, f.q.nrows())?;
            check_dim(dim, f.q.ncols())?;
            check_dim(dim, f.linear.len())?;
        }
        Ok(QuadraticOperator { dim, forms })
    }

    /// `‖x − c‖²` scaled by `weight`.
    pub fn squared_distance(c: &Vector, weight: f64) -> Self {
        let n = c.len();
        QuadraticOperator {
            dim: n,
            forms: vec![QuadraticForm {
                q: DMatrix::identity(n, n) * (2.0 * weight),
                linear: c * (-2.0 * weight),
                constant: weight * c.norm_squared(),
            }],
        }
    }

    pub fn forms(&self) -> &[QuadraticForm] {
        &self.forms
    }
}

impl Operator for QuadraticOperator {
    fn input_dim(&self) -> usize {
        self.dim
    }

    fn output_dim(&self) -> usize {
        self.forms.len()
    }

    fn eval(&self, x: &Vector) -> Result<Vector> {
        check_dim(self.dim, x.len())?;
        Ok(Vector::from_iterator(self.forms.len(), self.forms.iter().map(|f| f.eval(x))))
    }

    fn jacobian(&self, x: &Vector) -> Result<DMatrix<f64>> {
        check_dim(self.dim, x.len())?;
        let mut j = DMatrix::zeros(self.forms.len(), self.dim);
        for (i, f) in self.forms.iter().enumerate() {
            j.set_row(i, &f.gradient(x).transpose());
        }
        Ok(j)
    }

    fn lipschitz_bound(&self, region: &BoxRegion) -> f64 {
        let r = region.max_norm();
        self.forms
            .iter()
            .map(|f| {
                let sym = (&f.q + f.q.transpose()) * 0.5;
                let quad: f64 = sym.iter().map(|v| v.abs()).sum::<f64>() * r;
                quad + f.linear.iter().map(|v| v.abs()).sum::<f64>()
            })
            .fold(0.0, f64::max)
    }
}

pub type EvalFn = Arc<dyn Fn(&Vector) -> Vector + Send + Sync>;
pub type JacobianFn = Arc<dyn Fn(&Vector) -> DMatrix<f64> + Send + Sync>;

/// An operator given by closures.
#[derive(Clone)]
pub struct FnOperator {
    input_dim: usize,
    output_dim: usize,
    f: EvalFn,
    jac: JacobianFn,
    lipschitz: f64,
}

impl FnOperator {
    pub fn new(input_dim: usize, output_dim: usize, lipschitz: f64, f: EvalFn, jac: JacobianFn) -> Self {
        FnOperator {
            input_dim,
            output_dim,
            f,
            jac,
            lipschitz,
        }
    }
}

impl Operator for FnOperator {
    fn input_dim(&self) -> usize {
        self.input_dim
    }

    fn output_dim(&self) -> usize {
        self.output_dim
    }

    fn eval(&self, x: &Vector) -> Result<Vector> {
        check_dim(self.input_dim, x.len())?;
        let y = (self.f)(x);
        check_dim(self.output_dim, y.len())?;
        Ok(y)
    }

    fn jacobian(&self, x: &Vector) -> Result<DMatrix<f64>> {
        check_dim(self.input_dim, x.len())?;
        Ok((self.jac)(x))
    }

    fn lipschitz_bound(&self, _region: &BoxRegion) -> f64 {
        self.lipschitz
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Curvature {
    Concave,
    Convex,
}

/// A sampled failure of the concavity (or convexity) inequality.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConcavityWitness {
    pub index: usize,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub lambda: f64,
    pub gap: f64,
}

impl ConcavityWitness {
    /// Recomputes the gap from scratch.
    pub fn recompute(&self, op: &dyn Operator, curvature: Curvature) -> Result<f64> {
        let x = Vector::from_column_slice(&self.x);
        let y = Vector::from_column_slice(&self.y);
        concavity_gap(op, &x, &y, self.lambda, self.index, curvature)
    }
}

fn concavity_gap(
    op: &dyn Operator,
    x: &Vector,
    y: &Vector,
    lambda: f64,
    index: usize,
    curvature: Curvature,
) -> Result<f64> {
    let z = x * lambda + y * (1.0 - lambda);
    let (fx, fy, fz) = (op.eval(x)?[index], op.eval(y)?[index], op.eval(&z)?[index]);
    let chord = lambda * fx + (1.0 - lambda) * fy;
    Ok(match curvature {
        Curvature::Concave => chord - fz,
        Curvature::Convex => fz - chord,
    })
}

/// Searches for a violation of concavity (or convexity) of each output along
/// segments whose endpoints differ only on one of `blocks`.
///
/// Deterministic probes come first: for each block, the segment from the
/// block's lower corner to its upper corner with the other coordinates at the
/// region's center, and the same segment per single coordinate. `trials`
/// random segments follow. Finding nothing does not prove concavity.
pub fn probe_concavity(
    op: &dyn Operator,
    region: &BoxRegion,
    trials: usize,
    blocks: &[Vec<usize>],
    seed: u64,
    curvature: Curvature,
) -> Result<Option<ConcavityWitness>> {
    check_dim(op.input_dim(), region.dim())?;
    for b in blocks {
        if b.iter().any(|&j| j >= region.dim()) {
            return Err(Error::invalid("block index outside the region"));
        }
    }
    let center = region.center();
    let check = |x: &Vector, y: &Vector, lambda: f64| -> Result<Option<ConcavityWitness>> {
        for index in 0..op.output_dim() {
            let gap = concavity_gap(op, x, y, lambda, index, curvature)?;
            let scale = op.eval(x)?[index].abs().max(op.eval(y)?[index].abs()).max(1.0);
            if gap > TAU * scale {
                return Ok(Some(ConcavityWitness {
                    index,
                    x: x.iter().copied().collect(),
                    y: y.iter().copied().collect(),
                    lambda,
                    gap,
                }));
            }
        }
        Ok(None)
    };
    for block in blocks {
        let mut groups: Vec<Vec<usize>> = vec![block.clone()];
        if block.len() > 1 {
            groups.extend(block.iter().map(|&j| vec![j]));
        }
        for g in groups {
            let mut x = center.clone();
            let mut y = center.clone();
            for &j in &g {
                x[j] = region.lo()[j];
                y[j] = region.hi()[j];
            }
            if let Some(w) = check(&x, &y, 0.5)? {
                return Ok(Some(w));
            }
        }
    }
    if blocks.is_empty() {
        return Ok(None);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sample = |rng: &mut ChaCha8Rng, j: usize| -> f64 {
        let (l, h) = (region.lo()[j], region.hi()[j]);
        if h > l {
            rng.gen_range(l..=h)
        } else {
            l
        }
    };
    for _ in 0..trials {
        let block = &blocks[rng.gen_range(0..blocks.len())];
        let x = Vector::from_iterator(region.dim(), (0..region.dim()).map(|j| sample(&mut rng, j)));
        let mut y = x.clone();
        for &j in block {
            y[j] = sample(&mut rng, j);
        }
        let lambda: f64 = rng.gen_range(0.01..0.99);
        if let Some(w) = check(&x, &y, lambda)? {
            return Ok(Some(w));
        }
    }
    Ok(None)
}
