//! Reverse-mode automatic differentiation over a Wengert tape.
//!
//! Operations append nodes to an arena in topological order (a node's id is
//! always greater than its inputs'), values are computed eagerly, and
//! [`Tape::backward`] replays the tape in reverse to accumulate adjoints.
//!
//! Two backward passes exist:
//! - [`Tape::backward`] produces numeric gradients ([`GradientMap`]).
//! - [`Tape::grad_nodes`] records the backward pass *as tape operations*, so
//!   gradients become first-class differentiable values. Chaining a gradient
//!   node into further computation and calling `backward` on the result yields
//!   exact second-order derivatives — the path used by the meta-optimizer.

mod builders;
mod kernels;

pub use builders::{elu, segment_softmax};

use std::collections::BTreeMap;
use std::rc::Rc;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Index of a node on the tape.
#[derive(Copy, Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    /// Differentiable input (parameter or variable).
    Leaf,
    /// Non-differentiable value; absorbs gradient silently.
    Constant,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    Neg(NodeId),
    Scale(NodeId, f64),
    Exp(NodeId),
    Log(NodeId),
    LeakyRelu(NodeId, f64),
    Relu(NodeId),
    /// min(x, 0); the building block for numerically safe ELU.
    MinZero(NodeId),
    Matmul(NodeId, NodeId),
    Transpose(NodeId),
    /// Sum of all elements, producing a scalar.
    Sum(NodeId),
    /// Row sums of a 2-D tensor, producing a column vector.
    SumCols(NodeId),
    /// Broadcast a scalar node to a fixed shape.
    Fill(NodeId),
    GatherRows(NodeId, Rc<Vec<usize>>),
    ScatterAddRows(NodeId, Rc<Vec<usize>>),
    /// Slice entries of `axis` starting at `start` (length is recorded by
    /// the output shape).
    Narrow(NodeId, usize, usize),
    /// Embed into zeros along `axis` at `start` (total size is recorded by
    /// the output shape).
    Pad(NodeId, usize, usize),
}

impl Op {
    fn inputs(&self) -> [Option<NodeId>; 2] {
        use Op::*;
        match *self {
            Leaf | Constant => [None, None],
            Add(a, b) | Sub(a, b) | Mul(a, b) | Div(a, b) | Matmul(a, b) => {
                [Some(a), Some(b)]
            }
            Neg(a)
            | Scale(a, _)
            | Exp(a)
            | Log(a)
            | LeakyRelu(a, _)
            | Relu(a)
            | MinZero(a)
            | Transpose(a)
            | Sum(a)
            | SumCols(a)
            | Fill(a)
            | GatherRows(a, _)
            | ScatterAddRows(a, _)
            | Narrow(a, _, _)
            | Pad(a, _, _) => [Some(a), None],
        }
    }
}

struct Node {
    op: Op,
    value: Tensor,
}

/// Gradients keyed by tape node id, shapes matching the forward values.
#[derive(Debug, Default)]
pub struct GradientMap {
    grads: BTreeMap<usize, Tensor>,
}

impl GradientMap {
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(&id.0)
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    fn push(&mut self, op: Op, value: Tensor) -> NodeId {
        self.nodes.push(Node { op, value });
        NodeId(self.nodes.len() - 1)
    }

    // ── leaves ───────────────────────────────────────────────────────

    /// Differentiable leaf: gradients are reported for these nodes.
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf, value)
    }

    /// Non-differentiable value; gradient flow stops here.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Constant, value)
    }

    pub fn constant_scalar(&mut self, v: f64) -> Result<NodeId> {
        Ok(self.constant(Tensor::scalar(v)?))
    }

    /// Detached copy of a node's value (stops gradients; used by the
    /// first-order meta approximation).
    pub fn detach(&mut self, id: NodeId) -> NodeId {
        let v = self.value(id).clone();
        self.constant(v)
    }

    // ── elementwise ──────────────────────────────────────────────────

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = kernels::map2(self.value(a), self.value(b), |x, y| x + y)?;
        Ok(self.push(Op::Add(a, b), v))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = kernels::map2(self.value(a), self.value(b), |x, y| x - y)?;
        Ok(self.push(Op::Sub(a, b), v))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = kernels::map2(self.value(a), self.value(b), |x, y| x * y)?;
        Ok(self.push(Op::Mul(a, b), v))
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = kernels::map2(self.value(a), self.value(b), |x, y| x / y)?;
        Ok(self.push(Op::Div(a, b), v))
    }

    pub fn neg(&mut self, a: NodeId) -> Result<NodeId> {
        let v = kernels::map1(self.value(a), |x| -x)?;
        Ok(self.push(Op::Neg(a), v))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> Result<NodeId> {
        let v = kernels::map1(self.value(a), |x| c * x)?;
        Ok(self.push(Op::Scale(a, c), v))
    }

    pub fn exp(&mut self, a: NodeId) -> Result<NodeId> {
        let v = kernels::map1(self.value(a), f64::exp)?;
        Ok(self.push(Op::Exp(a), v))
    }

    pub fn log(&mut self, a: NodeId) -> Result<NodeId> {
        let v = kernels::map1(self.value(a), f64::ln)?;
        Ok(self.push(Op::Log(a), v))
    }

    /// max(x, slope·x) with slope in (0, 1).
    pub fn leaky_relu(&mut self, a: NodeId, slope: f64) -> Result<NodeId> {
        if !(0.0..1.0).contains(&slope) || slope == 0.0 {
            return Err(Error::Parameter(format!(
                "leaky_relu slope must lie in (0,1), got {}",
                slope
            )));
        }
        let v = kernels::map1(self.value(a), |x| if x > 0.0 { x } else { slope * x })?;
        Ok(self.push(Op::LeakyRelu(a, slope), v))
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        let v = kernels::map1(self.value(a), |x| x.max(0.0))?;
        Ok(self.push(Op::Relu(a), v))
    }

    /// min(x, 0).
    pub fn min_zero(&mut self, a: NodeId) -> Result<NodeId> {
        let v = kernels::map1(self.value(a), |x| x.min(0.0))?;
        Ok(self.push(Op::MinZero(a), v))
    }

    // ── linear algebra & reductions ──────────────────────────────────

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = kernels::matmul(self.value(a), self.value(b))?;
        Ok(self.push(Op::Matmul(a, b), v))
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId> {
        let v = kernels::transpose(self.value(a))?;
        Ok(self.push(Op::Transpose(a), v))
    }

    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        let v = kernels::sum_all(self.value(a))?;
        Ok(self.push(Op::Sum(a), v))
    }

    pub fn sum_cols(&mut self, a: NodeId) -> Result<NodeId> {
        let v = kernels::sum_cols(self.value(a))?;
        Ok(self.push(Op::SumCols(a), v))
    }

    pub fn fill(&mut self, scalar: NodeId, shape: Vec<usize>) -> Result<NodeId> {
        let v = kernels::fill(self.value(scalar), &shape)?;
        Ok(self.push(Op::Fill(scalar), v))
    }

    // ── indexing ─────────────────────────────────────────────────────

    pub fn gather_rows(&mut self, a: NodeId, idx: Rc<Vec<usize>>) -> Result<NodeId> {
        let v = kernels::gather_rows(self.value(a), &idx)?;
        Ok(self.push(Op::GatherRows(a, idx), v))
    }

    pub fn scatter_add_rows(
        &mut self,
        a: NodeId,
        idx: Rc<Vec<usize>>,
        n_rows: usize,
    ) -> Result<NodeId> {
        let v = kernels::scatter_add_rows(self.value(a), &idx, n_rows)?;
        Ok(self.push(Op::ScatterAddRows(a, idx), v))
    }

    pub fn narrow(&mut self, a: NodeId, axis: usize, start: usize, len: usize) -> Result<NodeId> {
        let v = kernels::narrow(self.value(a), axis, start, len)?;
        Ok(self.push(Op::Narrow(a, axis, start), v))
    }

    pub fn pad(&mut self, a: NodeId, axis: usize, start: usize, total: usize) -> Result<NodeId> {
        let v = kernels::pad(self.value(a), axis, start, total)?;
        Ok(self.push(Op::Pad(a, axis, start), v))
    }

    // ── backward passes ──────────────────────────────────────────────

    /// Numeric reverse sweep from a scalar output. Returns gradients for
    /// every `Leaf` node that influences the output.
    pub fn backward(&self, output: NodeId) -> Result<GradientMap> {
        if !self.value(output).is_scalar() {
            return Err(Error::Contract(format!(
                "backward requires a scalar output, got shape {:?}",
                self.shape(output)
            )));
        }
        let mut adjoints: Vec<Option<Tensor>> = vec![None; output.0 + 1];
        adjoints[output.0] = Some(Tensor::scalar(1.0)?);

        for id in (0..=output.0).rev() {
            let adj = match adjoints[id].take() {
                Some(a) => a,
                None => continue,
            };
            let op = self.nodes[id].op.clone();
            self.propagate_numeric(id, &op, &adj, &mut adjoints)?;
            if matches!(op, Op::Leaf) {
                adjoints[id] = Some(adj);
            }
        }

        let mut grads = BTreeMap::new();
        for (id, adj) in adjoints.into_iter().enumerate() {
            if let (Op::Leaf, Some(a)) = (&self.nodes[id].op, adj) {
                debug_assert_eq!(a.shape(), self.nodes[id].value.shape());
                grads.insert(id, a);
            }
        }
        Ok(GradientMap { grads })
    }

    fn accumulate(
        &self,
        adjoints: &mut [Option<Tensor>],
        target: NodeId,
        contrib: Tensor,
    ) -> Result<()> {
        if matches!(self.nodes[target.0].op, Op::Constant) {
            return Ok(());
        }
        adjoints[target.0] = Some(match adjoints[target.0].take() {
            Some(prev) => kernels::map2(&prev, &contrib, |x, y| x + y)?,
            None => contrib,
        });
        Ok(())
    }

    fn propagate_numeric(
        &self,
        id: usize,
        op: &Op,
        adj: &Tensor,
        adjoints: &mut [Option<Tensor>],
    ) -> Result<()> {
        use Op::*;
        match op {
            Leaf | Constant => {}
            Add(a, b) => {
                self.accumulate(adjoints, *a, adj.clone())?;
                self.accumulate(adjoints, *b, adj.clone())?;
            }
            Sub(a, b) => {
                self.accumulate(adjoints, *a, adj.clone())?;
                self.accumulate(adjoints, *b, kernels::map1(adj, |x| -x)?)?;
            }
            Mul(a, b) => {
                self.accumulate(adjoints, *a, kernels::map2(adj, self.value(*b), |g, y| g * y)?)?;
                self.accumulate(adjoints, *b, kernels::map2(adj, self.value(*a), |g, x| g * x)?)?;
            }
            Div(a, b) => {
                let bv = self.value(*b);
                self.accumulate(adjoints, *a, kernels::map2(adj, bv, |g, y| g / y)?)?;
                let num = kernels::map2(adj, self.value(*a), |g, x| g * x)?;
                let db = kernels::map2(&num, bv, |n, y| -n / (y * y))?;
                self.accumulate(adjoints, *b, db)?;
            }
            Neg(a) => self.accumulate(adjoints, *a, kernels::map1(adj, |x| -x)?)?,
            Scale(a, c) => {
                let c = *c;
                self.accumulate(adjoints, *a, kernels::map1(adj, |x| c * x)?)?
            }
            Exp(a) => {
                let out = &self.nodes[id].value;
                self.accumulate(adjoints, *a, kernels::map2(adj, out, |g, y| g * y)?)?;
            }
            Log(a) => {
                self.accumulate(adjoints, *a, kernels::map2(adj, self.value(*a), |g, x| g / x)?)?;
            }
            LeakyRelu(a, slope) => {
                let slope = *slope;
                let d = kernels::map2(adj, self.value(*a), |g, x| {
                    if x > 0.0 {
                        g
                    } else {
                        slope * g
                    }
                })?;
                self.accumulate(adjoints, *a, d)?;
            }
            Relu(a) => {
                let d = kernels::map2(adj, self.value(*a), |g, x| if x > 0.0 { g } else { 0.0 })?;
                self.accumulate(adjoints, *a, d)?;
            }
            MinZero(a) => {
                let d = kernels::map2(adj, self.value(*a), |g, x| if x < 0.0 { g } else { 0.0 })?;
                self.accumulate(adjoints, *a, d)?;
            }
            Matmul(a, b) => {
                let bt = kernels::transpose(self.value(*b))?;
                self.accumulate(adjoints, *a, kernels::matmul(adj, &bt)?)?;
                let at = kernels::transpose(self.value(*a))?;
                self.accumulate(adjoints, *b, kernels::matmul(&at, adj)?)?;
            }
            Transpose(a) => self.accumulate(adjoints, *a, kernels::transpose(adj)?)?,
            Sum(a) => {
                let shape = self.shape(*a).to_vec();
                self.accumulate(adjoints, *a, kernels::fill(adj, &shape)?)?;
            }
            SumCols(a) => {
                let cols = self.value(*a).cols();
                let ones = Tensor::filled(vec![1, cols], 1.0)?;
                self.accumulate(adjoints, *a, kernels::matmul(adj, &ones)?)?;
            }
            Fill(a) => self.accumulate(adjoints, *a, kernels::sum_all(adj)?)?,
            GatherRows(a, idx) => {
                let n = self.value(*a).rows();
                self.accumulate(adjoints, *a, kernels::scatter_add_rows(adj, idx, n)?)?;
            }
            ScatterAddRows(a, idx) => {
                self.accumulate(adjoints, *a, kernels::gather_rows(adj, idx)?)?;
            }
            Narrow(a, axis, start) => {
                let total = self.shape(*a)[*axis];
                self.accumulate(adjoints, *a, kernels::pad(adj, *axis, *start, total)?)?;
            }
            Pad(a, axis, start) => {
                let len = self.shape(*a)[*axis];
                self.accumulate(adjoints, *a, kernels::narrow(adj, *axis, *start, len)?)?;
            }
        }
        Ok(())
    }

    /// Reverse sweep that records the backward pass as new tape nodes.
    ///
    /// Returns, for each node in `wrt`, a node whose value is the gradient of
    /// `output` with respect to it. Because these gradients live on the tape,
    /// later computation built from them (an adapted-parameter update, a
    /// second loss) remains differentiable with respect to the original
    /// leaves — a subsequent `backward` yields the exact second-order
    /// derivative.
    pub fn grad_nodes(&mut self, output: NodeId, wrt: &[NodeId]) -> Result<Vec<NodeId>> {
        if !self.value(output).is_scalar() {
            return Err(Error::Contract(format!(
                "grad_nodes requires a scalar output, got shape {:?}",
                self.shape(output)
            )));
        }

        // A node needs a gradient when it transitively consumes any wrt node.
        let mut needs = vec![false; output.0 + 1];
        for w in wrt {
            if w.0 <= output.0 {
                needs[w.0] = true;
            }
        }
        for id in 0..=output.0 {
            if needs[id] {
                continue;
            }
            let inputs = self.nodes[id].op.inputs();
            needs[id] = inputs
                .iter()
                .flatten()
                .any(|i| needs[i.0]);
        }

        let mut adjoints: Vec<Option<NodeId>> = vec![None; output.0 + 1];
        adjoints[output.0] = Some(self.constant_scalar(1.0)?);

        for id in (0..=output.0).rev() {
            if !needs[id] {
                continue;
            }
            let adj = match adjoints[id] {
                Some(a) => a,
                None => continue,
            };
            let op = self.nodes[id].op.clone();
            self.propagate_nodes(id, &op, adj, &needs, &mut adjoints)?;
        }

        wrt.iter()
            .map(|w| match adjoints.get(w.0).copied().flatten() {
                Some(a) => Ok(a),
                None => {
                    let z = Tensor::zeros(self.shape(*w).to_vec());
                    Ok(self.constant(z))
                }
            })
            .collect()
    }

    fn accumulate_node(
        &mut self,
        adjoints: &mut [Option<NodeId>],
        needs: &[bool],
        target: NodeId,
        contrib: NodeId,
    ) -> Result<()> {
        if target.0 >= needs.len() || !needs[target.0] {
            return Ok(());
        }
        adjoints[target.0] = Some(match adjoints[target.0] {
            Some(prev) => self.add(prev, contrib)?,
            None => contrib,
        });
        Ok(())
    }

    fn propagate_nodes(
        &mut self,
        id: usize,
        op: &Op,
        adj: NodeId,
        needs: &[bool],
        adjoints: &mut [Option<NodeId>],
    ) -> Result<()> {
        use Op::*;
        match op {
            Leaf | Constant => {}
            Add(a, b) => {
                self.accumulate_node(adjoints, needs, *a, adj)?;
                self.accumulate_node(adjoints, needs, *b, adj)?;
            }
            Sub(a, b) => {
                self.accumulate_node(adjoints, needs, *a, adj)?;
                let n = self.neg(adj)?;
                self.accumulate_node(adjoints, needs, *b, n)?;
            }
            Mul(a, b) => {
                if needs[a.0] {
                    let da = self.mul(adj, *b)?;
                    self.accumulate_node(adjoints, needs, *a, da)?;
                }
                if needs[b.0] {
                    let db = self.mul(adj, *a)?;
                    self.accumulate_node(adjoints, needs, *b, db)?;
                }
            }
            Div(a, b) => {
                if needs[a.0] {
                    let da = self.div(adj, *b)?;
                    self.accumulate_node(adjoints, needs, *a, da)?;
                }
                if needs[b.0] {
                    let ga = self.mul(adj, *a)?;
                    let bb = self.mul(*b, *b)?;
                    let frac = self.div(ga, bb)?;
                    let db = self.neg(frac)?;
                    self.accumulate_node(adjoints, needs, *b, db)?;
                }
            }
            Neg(a) => {
                let d = self.neg(adj)?;
                self.accumulate_node(adjoints, needs, *a, d)?;
            }
            Scale(a, c) => {
                let d = self.scale(adj, *c)?;
                self.accumulate_node(adjoints, needs, *a, d)?;
            }
            Exp(a) => {
                let d = self.mul(adj, NodeId(id))?;
                self.accumulate_node(adjoints, needs, *a, d)?;
            }
            Log(a) => {
                let d = self.div(adj, *a)?;
                self.accumulate_node(adjoints, needs, *a, d)?;
            }
            LeakyRelu(a, slope) => {
                // Piecewise-linear: the slope mask is locally constant, so a
                // constant-tensor mask gives exact higher-order derivatives
                // almost everywhere.
                let slope = *slope;
                let mask = kernels::map1(self.value(*a), |x| if x > 0.0 { 1.0 } else { slope })?;
                let m = self.constant(mask);
                let d = self.mul(adj, m)?;
                self.accumulate_node(adjoints, needs, *a, d)?;
            }
            Relu(a) => {
                let mask = kernels::map1(self.value(*a), |x| if x > 0.0 { 1.0 } else { 0.0 })?;
                let m = self.constant(mask);
                let d = self.mul(adj, m)?;
                self.accumulate_node(adjoints, needs, *a, d)?;
            }
            MinZero(a) => {
                let mask = kernels::map1(self.value(*a), |x| if x < 0.0 { 1.0 } else { 0.0 })?;
                let m = self.constant(mask);
                let d = self.mul(adj, m)?;
                self.accumulate_node(adjoints, needs, *a, d)?;
            }
            Matmul(a, b) => {
                if needs[a.0] {
                    let bt = self.transpose(*b)?;
                    let da = self.matmul(adj, bt)?;
                    self.accumulate_node(adjoints, needs, *a, da)?;
                }
                if needs[b.0] {
                    let at = self.transpose(*a)?;
                    let db = self.matmul(at, adj)?;
                    self.accumulate_node(adjoints, needs, *b, db)?;
                }
            }
            Transpose(a) => {
                let d = self.transpose(adj)?;
                self.accumulate_node(adjoints, needs, *a, d)?;
            }
            Sum(a) => {
                let shape = self.shape(*a).to_vec();
                let d = self.fill(adj, shape)?;
                self.accumulate_node(adjoints, needs, *a, d)?;
            }
            SumCols(a) => {
                let cols = self.value(*a).cols();
                let ones = self.constant(Tensor::filled(vec![1, cols], 1.0)?);
                let d = self.matmul(adj, ones)?;
                self.accumulate_node(adjoints, needs, *a, d)?;
            }
            Fill(a) => {
                let d = self.sum(adj)?;
                self.accumulate_node(adjoints, needs, *a, d)?;
            }
            GatherRows(a, idx) => {
                let n = self.value(*a).rows();
                let d = self.scatter_add_rows(adj, idx.clone(), n)?;
                self.accumulate_node(adjoints, needs, *a, d)?;
            }
            ScatterAddRows(a, idx) => {
                let d = self.gather_rows(adj, idx.clone())?;
                self.accumulate_node(adjoints, needs, *a, d)?;
            }
            Narrow(a, axis, start) => {
                let total = self.shape(*a)[*axis];
                let d = self.pad(adj, *axis, *start, total)?;
                self.accumulate_node(adjoints, needs, *a, d)?;
            }
            Pad(a, axis, start) => {
                let len = self.shape(*a)[*axis];
                let d = self.narrow(adj, *axis, *start, len)?;
                self.accumulate_node(adjoints, needs, *a, d)?;
            }
        }
        Ok(())
    }
}

/// Compare the analytic gradient of `f` against central finite differences.
///
/// `f` builds a scalar from leaves created at `points`. Returns the maximum
/// relative error over all coordinates, with the denominator floored at
/// `max(|analytic|, |numeric|, 1e-8)`.
pub fn finite_diff_check<F>(f: F, points: &[Tensor], epsilon: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[NodeId]) -> Result<NodeId>,
{
    if epsilon <= 0.0 {
        return Err(Error::Parameter("epsilon must be positive".into()));
    }

    let eval = |pts: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let ids: Vec<NodeId> = pts.iter().map(|p| tape.leaf(p.clone())).collect();
        let out = f(&mut tape, &ids)?;
        tape.value(out).item()
    };

    let mut tape = Tape::new();
    let ids: Vec<NodeId> = points.iter().map(|p| tape.leaf(p.clone())).collect();
    let out = f(&mut tape, &ids)?;
    let grads = tape.backward(out)?;

    let mut worst: f64 = 0.0;
    for (t, id) in ids.iter().enumerate() {
        let analytic = grads
            .get(*id)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(points[t].shape().to_vec()));
        for i in 0..points[t].len() {
            let mut plus = points.to_vec();
            plus[t].values_mut()[i] += epsilon;
            let mut minus = points.to_vec();
            minus[t].values_mut()[i] -= epsilon;
            let numeric = (eval(&plus)? - eval(&minus)?) / (2.0 * epsilon);
            let a = analytic.values()[i];
            let denom = a.abs().max(numeric.abs()).max(1e-8);
            worst = worst.max((a - numeric).abs() / denom);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests;
