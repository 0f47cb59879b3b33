//! Wengert-list reverse-mode differentiation over whole matrices.
//!
//! Every primitive appends one node holding its forward value; `backward`
//! walks the list in reverse and accumulates adjoints. Nodes are only ever
//! appended, so parents always precede children.

use crate::error::{Error, Result};
use crate::nd::tensor::Tensor2;

/// Offset added under square roots so the derivative stays finite at zero.
pub const SQRT_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ValueId(usize);

impl ValueId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(ValueId, ValueId),
    Add(ValueId, ValueId),
    Sub(ValueId, ValueId),
    Mul(ValueId, ValueId),
    Div(ValueId, ValueId),
    Scale(ValueId, f64),
    Relu(ValueId),
    Concat(Vec<ValueId>),
    Slice { src: ValueId, start: usize },
    ColMeans(ValueId),
    RowMeans(ValueId),
    Sum(ValueId),
    Mean(ValueId),
    SqrtEps(ValueId),
    Sqrt(ValueId),
    PairwiseSqDist(ValueId),
    PairwiseDist { src: ValueId, sq: Tensor2 },
    SoftmaxCe { logits: ValueId, labels: Vec<usize>, probs: Tensor2 },
    Mse { pred: ValueId, target: Tensor2 },
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor2,
    op: Op,
}

/// How the right operand of an elementwise op is stretched to the left's shape.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Broadcast {
    Same,
    Row,
    Col,
    Scalar,
}

fn broadcast_kind(a: &Tensor2, b: &Tensor2, op: &str) -> Result<Broadcast> {
    if a.shape() == b.shape() {
        Ok(Broadcast::Same)
    } else if b.shape() == (1, 1) {
        Ok(Broadcast::Scalar)
    } else if b.rows() == 1 && b.cols() == a.cols() {
        Ok(Broadcast::Row)
    } else if b.cols() == 1 && b.rows() == a.rows() {
        Ok(Broadcast::Col)
    } else {
        Err(Error::dim(
            op,
            format!("{}x{} or a broadcastable row/column/scalar", a.rows(), a.cols()),
            format!("{}x{}", b.rows(), b.cols()),
        ))
    }
}

#[inline]
fn bidx(kind: Broadcast, cols: usize, r: usize, c: usize) -> usize {
    match kind {
        Broadcast::Same => r * cols + c,
        Broadcast::Row => c,
        Broadcast::Col => r,
        Broadcast::Scalar => 0,
    }
}

fn elementwise(a: &Tensor2, b: &Tensor2, kind: Broadcast, f: impl Fn(f64, f64) -> f64) -> Tensor2 {
    let cols = a.cols();
    let bd = b.data();
    Tensor2::from_fn(a.rows(), cols, |r, c| f(a.get(r, c), bd[bidx(kind, cols, r, c)]))
}

/// Sums a full-shape gradient down to the broadcast operand's shape.
fn reduce_to(g: &Tensor2, kind: Broadcast, shape: (usize, usize)) -> Tensor2 {
    match kind {
        Broadcast::Same => g.clone(),
        Broadcast::Scalar => Tensor2::scalar(g.sum()),
        Broadcast::Row => {
            let mut out = Tensor2::zeros(1, shape.1);
            for r in 0..g.rows() {
                for (o, v) in out.data_mut().iter_mut().zip(g.row(r)) {
                    *o += v;
                }
            }
            out
        }
        Broadcast::Col => Tensor2::column(&(0..g.rows()).map(|r| g.row(r).iter().sum()).collect::<Vec<_>>()),
    }
}

fn pairwise_sq(x: &Tensor2) -> Tensor2 {
    let n = x.rows();
    let mut out = Tensor2::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let d: f64 = x.row(i).iter().zip(x.row(j)).map(|(a, b)| (a - b) * (a - b)).sum();
            out.set(i, j, d);
            out.set(j, i, d);
        }
    }
    out
}

/// Adjoint of `S_ij = |x_i - x_j|^2` given `G = dL/dS`.
fn pairwise_sq_adjoint(x: &Tensor2, g: &Tensor2) -> Tensor2 {
    let (n, p) = x.shape();
    let mut out = Tensor2::zeros(n, p);
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let w = 2.0 * (g.get(i, j) + g.get(j, i));
            if w == 0.0 {
                continue;
            }
            for k in 0..p {
                let d = x.get(i, k) - x.get(j, k);
                let o = out.get(i, k);
                out.set(i, k, o + w * d);
            }
        }
    }
    out
}

/// Recorded computation. Create one per forward/backward pass.
#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: ValueId) -> &Tensor2 {
        &self.nodes[id.0].value
    }

    fn push(&mut self, value: Tensor2, op: Op) -> ValueId {
        self.nodes.push(Node { value, op });
        ValueId(self.nodes.len() - 1)
    }

    /// Inputs, parameters and constants all enter as leaves.
    pub fn leaf(&mut self, value: Tensor2) -> ValueId {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let v = self.value(a).matmul(self.value(b))?;
        Ok(self.push(v, Op::MatMul(a, b)))
    }

    fn binary(&mut self, a: ValueId, b: ValueId, name: &str) -> Result<(Broadcast, Tensor2)> {
        let kind = broadcast_kind(self.value(a), self.value(b), name)?;
        let f: fn(f64, f64) -> f64 = match name {
            "add" => |x, y| x + y,
            "sub" => |x, y| x - y,
            "mul" => |x, y| x * y,
            _ => |x, y| x / y,
        };
        Ok((kind, elementwise(self.value(a), self.value(b), kind, f)))
    }

    /// `a + b`, with `b` broadcast from a row, column or scalar.
    pub fn add(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let (_, v) = self.binary(a, b, "add")?;
        Ok(self.push(v, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let (_, v) = self.binary(a, b, "sub")?;
        Ok(self.push(v, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let (_, v) = self.binary(a, b, "mul")?;
        Ok(self.push(v, Op::Mul(a, b)))
    }

    pub fn div(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let (_, v) = self.binary(a, b, "div")?;
        if !v.is_finite() {
            return Err(Error::Numeric("division produced a non-finite value".into()));
        }
        Ok(self.push(v, Op::Div(a, b)))
    }

    pub fn scale(&mut self, a: ValueId, k: f64) -> ValueId {
        let v = self.value(a).scale(k);
        self.push(v, Op::Scale(a, k))
    }

    pub fn relu(&mut self, a: ValueId) -> ValueId {
        let v = self.value(a).relu();
        self.push(v, Op::Relu(a))
    }

    pub fn concat_cols(&mut self, parts: &[ValueId]) -> Result<ValueId> {
        let v = {
            let refs: Vec<&Tensor2> = parts.iter().map(|&p| self.value(p)).collect();
            Tensor2::hcat(&refs)?
        };
        Ok(self.push(v, Op::Concat(parts.to_vec())))
    }

    pub fn slice_cols(&mut self, src: ValueId, start: usize, end: usize) -> Result<ValueId> {
        let v = self.value(src).slice_cols(start, end)?;
        Ok(self.push(v, Op::Slice { src, start }))
    }

    /// Mean over rows: `r x c -> 1 x c`.
    pub fn col_means(&mut self, a: ValueId) -> ValueId {
        let v = self.value(a).col_means();
        self.push(v, Op::ColMeans(a))
    }

    /// Mean over columns: `r x c -> r x 1`.
    pub fn row_means(&mut self, a: ValueId) -> ValueId {
        let v = self.value(a).row_means();
        self.push(v, Op::RowMeans(a))
    }

    pub fn sum(&mut self, a: ValueId) -> ValueId {
        let v = Tensor2::scalar(self.value(a).sum());
        self.push(v, Op::Sum(a))
    }

    pub fn mean(&mut self, a: ValueId) -> ValueId {
        let v = Tensor2::scalar(self.value(a).mean());
        self.push(v, Op::Mean(a))
    }

    /// `sqrt(x + 1e-12)`, elementwise.
    pub fn sqrt_eps(&mut self, a: ValueId) -> Result<ValueId> {
        let x = self.value(a);
        if let Some(bad) = x.data().iter().find(|&&v| v + SQRT_EPS < 0.0) {
            return Err(Error::Numeric(format!("sqrt of negative value {bad}")));
        }
        let v = x.map(|v| (v + SQRT_EPS).sqrt());
        Ok(self.push(v, Op::SqrtEps(a)))
    }

    /// Exact elementwise square root; the adjoint uses `sqrt(x + 1e-12)` in
    /// the denominator so it stays finite at zero.
    pub fn sqrt(&mut self, a: ValueId) -> Result<ValueId> {
        let x = self.value(a);
        if let Some(bad) = x.data().iter().find(|&&v| v < -SQRT_EPS) {
            return Err(Error::Numeric(format!("sqrt of negative value {bad}")));
        }
        let v = x.map(|v| v.max(0.0).sqrt());
        Ok(self.push(v, Op::Sqrt(a)))
    }

    /// Squared Euclidean distances between the rows of `x`: `n x p -> n x n`.
    pub fn pairwise_sq_dist(&mut self, x: ValueId) -> ValueId {
        let v = pairwise_sq(self.value(x));
        self.push(v, Op::PairwiseSqDist(x))
    }

    /// Euclidean distances between the rows of `x`.
    ///
    /// Values are exact (`0` on the diagonal and for coincident rows); the
    /// adjoint divides by `sqrt(d^2 + 1e-12)` so it stays finite there.
    pub fn pairwise_dist(&mut self, x: ValueId) -> ValueId {
        let sq = pairwise_sq(self.value(x));
        let v = sq.map(f64::sqrt);
        self.push(v, Op::PairwiseDist { src: x, sq })
    }

    /// Mean softmax cross-entropy of `logits` (`n x C`) against class indices.
    pub fn softmax_cross_entropy(&mut self, logits: ValueId, labels: &[usize]) -> Result<ValueId> {
        let z = self.value(logits);
        let (n, c) = z.shape();
        if labels.len() != n {
            return Err(Error::dim("softmax_cross_entropy labels", n, labels.len()));
        }
        if n == 0 {
            return Err(Error::contract("softmax_cross_entropy on an empty batch"));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= c) {
            return Err(Error::contract(format!("label {bad} out of range for {c} logits")));
        }
        let mut probs = Tensor2::zeros(n, c);
        let mut loss = 0.0;
        for (r, &y) in labels.iter().enumerate() {
            let row = z.row(r);
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let denom: f64 = row.iter().map(|v| (v - m).exp()).sum();
            for (j, v) in row.iter().enumerate() {
                probs.set(r, j, (v - m).exp() / denom);
            }
            loss += denom.ln() + m - row[y];
        }
        let v = Tensor2::scalar(loss / n as f64);
        Ok(self.push(v, Op::SoftmaxCe { logits, labels: labels.to_vec(), probs }))
    }

    /// Mean squared error against a constant target of the same shape.
    pub fn mse(&mut self, pred: ValueId, target: &Tensor2) -> Result<ValueId> {
        let p = self.value(pred);
        if !p.same_shape(target) {
            return Err(Error::dim(
                "mse target",
                format!("{}x{}", p.rows(), p.cols()),
                format!("{}x{}", target.rows(), target.cols()),
            ));
        }
        let v = Tensor2::scalar(p.zip_map(target, |a, b| (a - b) * (a - b)).mean());
        Ok(self.push(v, Op::Mse { pred, target: target.clone() }))
    }

    /// Gradients of a scalar (`1 x 1`) value with respect to everything it depends on.
    pub fn backward(&self, loss: ValueId) -> Result<Gradients> {
        let shape = self.value(loss).shape();
        if shape != (1, 1) {
            return Err(Error::contract(format!("backward needs a 1x1 loss, got {}x{}", shape.0, shape.1)));
        }
        self.backward_with(loss, Tensor2::scalar(1.0))
    }

    /// Vector-Jacobian product: propagates `seed = dL/d(output)` back through the tape.
    pub fn backward_with(&self, output: ValueId, seed: Tensor2) -> Result<Gradients> {
        if !seed.same_shape(self.value(output)) {
            return Err(Error::dim(
                "backward seed",
                format!("{:?}", self.value(output).shape()),
                format!("{:?}", seed.shape()),
            ));
        }
        let mut grads: Vec<Option<Tensor2>> = vec![None; output.0 + 1];
        grads[output.0] = Some(seed);

        fn acc(grads: &mut [Option<Tensor2>], id: ValueId, g: Tensor2) {
            match &mut grads[id.0] {
                Some(existing) => existing.add_assign(&g),
                slot @ None => *slot = Some(g),
            }
        }

        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    acc(&mut grads, *a, g.matmul_t(bv)?);
                    acc(&mut grads, *b, av.t_matmul(&g)?);
                }
                Op::Add(a, b) | Op::Sub(a, b) => {
                    let bv = self.value(*b);
                    let kind = broadcast_kind(self.value(*a), bv, "add")?;
                    let mut gb = reduce_to(&g, kind, bv.shape());
                    if matches!(node.op, Op::Sub(..)) {
                        gb = gb.scale(-1.0);
                    }
                    acc(&mut grads, *b, gb);
                    acc(&mut grads, *a, g.clone());
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let kind = broadcast_kind(av, bv, "mul")?;
                    let ga = elementwise(&g, bv, kind, |x, y| x * y);
                    let gb = reduce_to(&g.zip_map(av, |x, y| x * y), kind, bv.shape());
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::Div(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let kind = broadcast_kind(av, bv, "div")?;
                    let ga = elementwise(&g, bv, kind, |x, y| x / y);
                    // d(a/b)/db = -a/b^2 = -(a/b)/b
                    let gb_full = elementwise(&g.zip_map(&node.value, |x, q| -x * q), bv, kind, |x, y| x / y);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, reduce_to(&gb_full, kind, bv.shape()));
                }
                Op::Scale(a, k) => acc(&mut grads, *a, g.scale(*k)),
                Op::Relu(a) => {
                    let ga = g.zip_map(&node.value, |x, y| if y > 0.0 { x } else { 0.0 });
                    acc(&mut grads, *a, ga);
                }
                Op::Concat(parts) => {
                    let mut start = 0;
                    for p in parts {
                        let w = self.value(*p).cols();
                        acc(&mut grads, *p, g.slice_cols(start, start + w)?);
                        start += w;
                    }
                }
                Op::Slice { src, start } => {
                    let sv = self.value(*src);
                    let mut ga = Tensor2::zeros(sv.rows(), sv.cols());
                    for r in 0..g.rows() {
                        for c in 0..g.cols() {
                            ga.set(r, start + c, g.get(r, c));
                        }
                    }
                    acc(&mut grads, *src, ga);
                }
                Op::ColMeans(a) => {
                    let (rows, cols) = self.value(*a).shape();
                    let inv = 1.0 / rows as f64;
                    acc(&mut grads, *a, Tensor2::from_fn(rows, cols, |_, c| g.get(0, c) * inv));
                }
                Op::RowMeans(a) => {
                    let (rows, cols) = self.value(*a).shape();
                    let inv = 1.0 / cols as f64;
                    acc(&mut grads, *a, Tensor2::from_fn(rows, cols, |r, _| g.get(r, 0) * inv));
                }
                Op::Sum(a) => {
                    let (rows, cols) = self.value(*a).shape();
                    acc(&mut grads, *a, Tensor2::filled(rows, cols, g.get(0, 0)));
                }
                Op::Mean(a) => {
                    let (rows, cols) = self.value(*a).shape();
                    let k = g.get(0, 0) / (rows * cols) as f64;
                    acc(&mut grads, *a, Tensor2::filled(rows, cols, k));
                }
                Op::SqrtEps(a) => {
                    acc(&mut grads, *a, g.zip_map(&node.value, |x, y| x / (2.0 * y)));
                }
                Op::Sqrt(a) => {
                    let ga = g.zip_map(self.value(*a), |x, v| x / (2.0 * (v.max(0.0) + SQRT_EPS).sqrt()));
                    acc(&mut grads, *a, ga);
                }
                Op::PairwiseSqDist(a) => {
                    acc(&mut grads, *a, pairwise_sq_adjoint(self.value(*a), &g));
                }
                Op::PairwiseDist { src, sq } => {
                    let gs = g.zip_map(sq, |x, s| x / (2.0 * (s + SQRT_EPS).sqrt()));
                    acc(&mut grads, *src, pairwise_sq_adjoint(self.value(*src), &gs));
                }
                Op::SoftmaxCe { logits, labels, probs } => {
                    let n = labels.len() as f64;
                    let k = g.get(0, 0) / n;
                    let mut gl = probs.scale(k);
                    for (r, &y) in labels.iter().enumerate() {
                        let v = gl.get(r, y);
                        gl.set(r, y, v - k);
                    }
                    acc(&mut grads, *logits, gl);
                }
                Op::Mse { pred, target } => {
                    let k = 2.0 * g.get(0, 0) / target.len() as f64;
                    acc(&mut grads, *pred, self.value(*pred).zip_map(target, |p, t| k * (p - t)));
                }
            }
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }
}

/// Result of a backward pass. Values the output does not depend on have no entry.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor2>>,
}

impl Gradients {
    pub fn get(&self, id: ValueId) -> Option<&Tensor2> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    /// Gradient for `id`, or zeros of `like`'s shape if it was unreachable.
    pub fn get_or_zeros(&self, id: ValueId, like: &Tensor2) -> Tensor2 {
        self.get(id).cloned().unwrap_or_else(|| Tensor2::zeros(like.rows(), like.cols()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gradient_is_ones() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor2::from_vec(2, 2, vec![1.0, -2.0, 3.0, 0.5]).unwrap());
        let s = tape.sum(x);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap(), &Tensor2::filled(2, 2, 1.0));
    }

    #[test]
    fn mse_of_linear_map_matches_closed_form() {
        // loss = (w x - y)^2, dloss/dw = 2 (w x - y) x
        let (w0, x0, y0) = (0.7, 1.3, -0.4);
        let mut tape = Tape::new();
        let w = tape.leaf(Tensor2::scalar(w0));
        let x = tape.leaf(Tensor2::scalar(x0));
        let wx = tape.matmul(x, w).unwrap();
        let loss = tape.mse(wx, &Tensor2::scalar(y0)).unwrap();
        let g = tape.backward(loss).unwrap();
        let expected = 2.0 * (w0 * x0 - y0) * x0;
        assert!((g.get(w).unwrap().get(0, 0) - expected).abs() < 1e-12);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor2::zeros(2, 1));
        assert!(matches!(tape.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn broadcast_shapes() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor2::zeros(3, 2));
        let row = tape.leaf(Tensor2::filled(1, 2, 1.0));
        let col = tape.leaf(Tensor2::filled(3, 1, 2.0));
        let bad = tape.leaf(Tensor2::zeros(2, 2));
        let s = tape.add(a, row).unwrap();
        let s = tape.add(s, col).unwrap();
        assert_eq!(tape.value(s), &Tensor2::filled(3, 2, 3.0));
        assert!(tape.add(a, bad).is_err());
        let total = tape.sum(s);
        let g = tape.backward(total).unwrap();
        assert_eq!(g.get(row).unwrap(), &Tensor2::filled(1, 2, 3.0));
        assert_eq!(g.get(col).unwrap(), &Tensor2::filled(3, 1, 2.0));
    }

    #[test]
    fn pairwise_dist_is_exact_and_zero_on_diagonal() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor2::from_vec(2, 2, vec![0.0, 0.0, 3.0, 4.0]).unwrap());
        let d = tape.pairwise_dist(x);
        assert_eq!(tape.value(d).data(), &[0.0, 5.0, 5.0, 0.0]);
        let s = tape.sum(d);
        let g = tape.backward(s).unwrap();
        assert!(g.get(x).unwrap().is_finite());
    }

    #[test]
    fn softmax_ce_rejects_bad_labels() {
        let mut tape = Tape::new();
        let z = tape.leaf(Tensor2::zeros(2, 3));
        assert!(tape.softmax_cross_entropy(z, &[0, 3]).is_err());
        assert!(tape.softmax_cross_entropy(z, &[0]).is_err());
        let l = tape.softmax_cross_entropy(z, &[0, 2]).unwrap();
        assert!((tape.value(l).get(0, 0) - 3f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn unreachable_values_have_no_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor2::scalar(1.0));
        let y = tape.leaf(Tensor2::scalar(2.0));
        let l = tape.scale(x, 3.0);
        let g = tape.backward(l).unwrap();
        assert!(g.get(y).is_none());
        assert_eq!(g.get(x).unwrap().get(0, 0), 3.0);
    }
}
