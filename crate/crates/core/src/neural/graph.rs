//! Tape-based reverse-mode differentiation over dense matrices.
//!
//! Only the operations the mixture-weight networks need are provided. Nodes
//! are appended in evaluation order; `backward` walks them in reverse and
//! accumulates parameter gradients into the [`ParamSet`].

use super::params::{ParamId, ParamSet};
use super::tensor::{matmul_into, Tensor};
use crate::corpus::WordId;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub type NodeId = usize;

/// Per-row targets of the mixture output layer.
///
/// Row `r` predicts `targets[r]` from logits over `count_columns` count
/// columns followed (when `identity`) by one logit per vocabulary word.
#[derive(Debug, Clone, Default)]
pub struct MixtureTargets<T> {
    pub count_columns: usize,
    pub identity: bool,
    /// Count-column values at the target word, `count_columns` per row.
    pub column_values: Vec<T>,
    /// Whether each count column may receive weight, `count_columns` per row.
    pub valid: Vec<bool>,
    pub targets: Vec<WordId>,
    /// Rows that contribute to the loss; empty means every row.
    pub active: Vec<bool>,
}

impl<T: Scalar> MixtureTargets<T> {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    fn values(&self, r: usize) -> &[T] {
        &self.column_values[r * self.count_columns..(r + 1) * self.count_columns]
    }

    pub fn is_active(&self, r: usize) -> bool {
        self.active.is_empty() || self.active[r]
    }

    fn valid_row(&self, r: usize) -> &[bool] {
        &self.valid[r * self.count_columns..(r + 1) * self.count_columns]
    }
}

/// Forward results of the mixture output layer.
#[derive(Debug, Clone)]
pub struct MixtureOutput<T> {
    /// Mixture weights per row (masked softmax of the logits).
    pub lambda: Tensor<T>,
    /// Probability of each row's target.
    pub probs: Vec<T>,
    weight: T,
}

impl<T: Scalar> MixtureOutput<T> {
    /// Weight placed on the count columns in row `r`.
    pub fn dense_mass(&self, r: usize, count_columns: usize) -> T {
        self.lambda.row(r)[..count_columns].iter().copied().sum()
    }
}

#[derive(Debug, Clone)]
enum Op<T> {
    Input,
    Affine {
        x: NodeId,
        w: ParamId,
        b: Option<ParamId>,
    },
    Embed {
        table: ParamId,
        ids: Vec<WordId>,
    },
    Add(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Tanh(NodeId),
    Sigmoid(NodeId),
    Cols {
        x: NodeId,
        start: usize,
    },
    ConcatCols(Vec<NodeId>),
    ConcatRows(Vec<NodeId>),
    Prefix {
        x: NodeId,
    },
    Scale {
        x: NodeId,
        factors: Vec<T>,
    },
    Mixture {
        logits: NodeId,
        targets: MixtureTargets<T>,
        out: MixtureOutput<T>,
    },
}

#[derive(Debug, Clone)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
}

/// A computation graph for one forward/backward pass.
#[derive(Debug, Clone, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id].value
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> NodeId {
        self.nodes.push(Node { value, op });
        self.nodes.len() - 1
    }

    pub fn input(&mut self, value: Tensor<T>) -> NodeId {
        self.push(value, Op::Input)
    }

    /// `x·W (+ b)`.
    pub fn affine(
        &mut self,
        params: &ParamSet<T>,
        x: NodeId,
        w: ParamId,
        b: Option<ParamId>,
    ) -> Result<NodeId> {
        let xv = &self.nodes[x].value;
        let wv = params.value(w);
        if xv.cols() != wv.rows() {
            return Err(Error::Shape(format!(
                "input width {} does not match weight `{}` of shape {:?}",
                xv.cols(),
                params.name(w),
                wv.shape()
            )));
        }
        let mut y = Tensor::zeros(xv.rows(), wv.cols());
        if let Some(b) = b {
            let bv = params.value(b);
            if bv.shape() != (1, wv.cols()) {
                return Err(Error::Shape(format!(
                    "bias `{}` has shape {:?}",
                    params.name(b),
                    bv.shape()
                )));
            }
            for r in 0..y.rows() {
                y.row_mut(r).copy_from_slice(bv.data());
            }
            matmul_into(xv, false, wv, false, T::one(), &mut y);
        } else {
            matmul_into(xv, false, wv, false, T::zero(), &mut y);
        }
        Ok(self.push(y, Op::Affine { x, w, b }))
    }

    /// Rows of an embedding table.
    pub fn embed(
        &mut self,
        params: &ParamSet<T>,
        table: ParamId,
        ids: Vec<WordId>,
    ) -> Result<NodeId> {
        let tv = params.value(table);
        let mut y = Tensor::zeros(ids.len(), tv.cols());
        for (r, &id) in ids.iter().enumerate() {
            if id as usize >= tv.rows() {
                return Err(Error::WordOutOfRange {
                    id: id as usize,
                    size: tv.rows(),
                });
            }
            y.row_mut(r).copy_from_slice(tv.row(id as usize));
        }
        Ok(self.push(y, Op::Embed { table, ids }))
    }

    fn same_shape(&self, a: NodeId, b: NodeId) -> Result<()> {
        let (sa, sb) = (self.nodes[a].value.shape(), self.nodes[b].value.shape());
        if sa != sb {
            return Err(Error::Shape(format!(
                "elementwise operands of shapes {sa:?} and {sb:?}"
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape(a, b)?;
        let mut y = self.nodes[a].value.clone();
        y.add_assign(&self.nodes[b].value);
        Ok(self.push(y, Op::Add(a, b)))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape(a, b)?;
        let mut y = self.nodes[a].value.clone();
        for (v, &o) in y.data_mut().iter_mut().zip(self.nodes[b].value.data()) {
            *v *= o;
        }
        Ok(self.push(y, Op::Mul(a, b)))
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        let mut y = self.nodes[x].value.clone();
        y.data_mut().iter_mut().for_each(|v| *v = v.tanh());
        self.push(y, Op::Tanh(x))
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let mut y = self.nodes[x].value.clone();
        y.data_mut().iter_mut().for_each(|v| *v = sigmoid(*v));
        self.push(y, Op::Sigmoid(x))
    }

    /// Columns `start..start + len`.
    pub fn cols(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let xv = &self.nodes[x].value;
        if start + len > xv.cols() {
            return Err(Error::Shape(format!(
                "column slice {start}..{} of width {}",
                start + len,
                xv.cols()
            )));
        }
        let mut y = Tensor::zeros(xv.rows(), len);
        for r in 0..xv.rows() {
            y.row_mut(r).copy_from_slice(&xv.row(r)[start..start + len]);
        }
        Ok(self.push(y, Op::Cols { x, start }))
    }

    pub fn concat_cols(&mut self, parts: Vec<NodeId>) -> Result<NodeId> {
        let rows = parts.first().map_or(0, |&p| self.nodes[p].value.rows());
        if parts.iter().any(|&p| self.nodes[p].value.rows() != rows) {
            return Err(Error::Shape(
                "column concatenation of tensors with different row counts".into(),
            ));
        }
        let width: usize = parts.iter().map(|&p| self.nodes[p].value.cols()).sum();
        let mut y = Tensor::zeros(rows, width);
        for r in 0..rows {
            let mut off = 0;
            for &p in &parts {
                let src = self.nodes[p].value.row(r);
                y.row_mut(r)[off..off + src.len()].copy_from_slice(src);
                off += src.len();
            }
        }
        Ok(self.push(y, Op::ConcatCols(parts)))
    }

    pub fn concat_rows(&mut self, parts: Vec<NodeId>) -> Result<NodeId> {
        let cols = parts.first().map_or(0, |&p| self.nodes[p].value.cols());
        if parts.iter().any(|&p| self.nodes[p].value.cols() != cols) {
            return Err(Error::Shape(
                "row concatenation of tensors with different widths".into(),
            ));
        }
        let mut data = Vec::new();
        for &p in &parts {
            data.extend_from_slice(self.nodes[p].value.data());
        }
        let rows = data.len() / cols.max(1);
        Ok(self.push(Tensor::from_vec(rows, cols, data), Op::ConcatRows(parts)))
    }

    /// The first `rows` rows.
    pub fn prefix(&mut self, x: NodeId, rows: usize) -> Result<NodeId> {
        let xv = &self.nodes[x].value;
        if rows > xv.rows() {
            return Err(Error::Shape(format!(
                "row prefix {rows} of {} rows",
                xv.rows()
            )));
        }
        if rows == xv.rows() {
            return Ok(x);
        }
        let y = Tensor::from_vec(rows, xv.cols(), xv.data()[..rows * xv.cols()].to_vec());
        Ok(self.push(y, Op::Prefix { x }))
    }

    /// Elementwise product with constant factors (dropout masks).
    pub fn scale(&mut self, x: NodeId, factors: Vec<T>) -> Result<NodeId> {
        let xv = &self.nodes[x].value;
        if factors.len() != xv.len() {
            return Err(Error::Shape(
                "scale factors do not match tensor size".into(),
            ));
        }
        let mut y = xv.clone();
        for (v, &f) in y.data_mut().iter_mut().zip(&factors) {
            *v *= f;
        }
        Ok(self.push(y, Op::Scale { x, factors }))
    }

    /// Mixture output layer: masked softmax of `logits` into mixture
    /// weights, then `weight * sum_r -ln p_r` where `p_r` mixes the row's
    /// count-column values and identity entry.
    pub fn mixture_nll(
        &mut self,
        logits: NodeId,
        targets: MixtureTargets<T>,
        weight: T,
    ) -> Result<NodeId> {
        let z = &self.nodes[logits].value;
        let k = targets.count_columns;
        let width = k + if targets.identity {
            z.cols().saturating_sub(k)
        } else {
            0
        };
        if z.cols() != width || z.rows() != targets.len() || (!targets.identity && z.cols() != k) {
            return Err(Error::Shape(format!(
                "logits of shape {:?} for {} rows over {k} count columns",
                z.shape(),
                targets.len()
            )));
        }
        if targets.column_values.len() != k * targets.len()
            || targets.valid.len() != k * targets.len()
            || !(targets.active.is_empty() || targets.active.len() == targets.len())
        {
            return Err(Error::Shape(
                "mixture targets have inconsistent lengths".into(),
            ));
        }
        let mut lambda = Tensor::zeros(z.rows(), z.cols());
        let mut probs = Vec::with_capacity(z.rows());
        let mut loss = T::zero();
        for r in 0..z.rows() {
            let zr = z.row(r);
            let valid = targets.valid_row(r);
            let ok = |i: usize| i >= k || valid[i];
            let mut max = T::neg_infinity();
            for (i, &v) in zr.iter().enumerate() {
                if ok(i) && v > max {
                    max = v;
                }
            }
            let active = targets.is_active(r);
            if max == T::neg_infinity() {
                if active {
                    return Err(Error::InvalidArgument(
                        "no mixture weight left after masking".into(),
                    ));
                }
                probs.push(T::one());
                continue;
            }
            let lr = lambda.row_mut(r);
            let mut sum = T::zero();
            for (i, &v) in zr.iter().enumerate() {
                if ok(i) {
                    let e = (v - max).exp();
                    lr[i] = e;
                    sum += e;
                }
            }
            for x in lr.iter_mut() {
                *x /= sum;
            }
            let target = targets.targets[r];
            if targets.identity && target as usize + k >= z.cols() {
                return Err(Error::WordOutOfRange {
                    id: target as usize,
                    size: z.cols() - k,
                });
            }
            let p =
                crate::mixture::row_probability(targets.values(r), targets.identity, lr, target);
            if !active {
                probs.push(p);
                continue;
            }
            if !(p > T::zero()) {
                return Err(Error::ZeroProbability {
                    context: Vec::new(),
                    word: target,
                });
            }
            loss -= p.ln();
            probs.push(p);
        }
        let out = MixtureOutput {
            lambda,
            probs,
            weight,
        };
        Ok(self.push(
            Tensor::from_vec(1, 1, vec![loss * weight]),
            Op::Mixture {
                logits,
                targets,
                out,
            },
        ))
    }

    /// Forward results of a mixture node.
    pub fn mixture_output(&self, id: NodeId) -> Option<&MixtureOutput<T>> {
        match &self.nodes[id].op {
            Op::Mixture { out, .. } => Some(out),
            _ => None,
        }
    }

    /// Back-propagates from the scalar node `loss` (seed gradient 1),
    /// accumulating into the parameter gradients.
    pub fn backward(&self, loss: NodeId, params: &mut ParamSet<T>) -> Result<()> {
        if self.nodes[loss].value.shape() != (1, 1) {
            return Err(Error::Shape("backward from a non-scalar node".into()));
        }
        let (pvals, pgrads) = params.split_mut();
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; loss + 1];
        grads[loss] = Some(Tensor::from_vec(1, 1, vec![T::one()]));

        fn acc<T: Scalar>(
            grads: &mut [Option<Tensor<T>>],
            id: NodeId,
            shape: (usize, usize),
        ) -> &mut Tensor<T> {
            grads[id].get_or_insert_with(|| Tensor::zeros(shape.0, shape.1))
        }

        for id in (0..=loss).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            match &node.op {
                Op::Input => {}
                Op::Affine { x, w, b } => {
                    let xv = &self.nodes[*x].value;
                    matmul_into(xv, true, &g, false, T::one(), &mut pgrads[*w]);
                    if let Some(b) = b {
                        let gb = pgrads[*b].data_mut();
                        for r in 0..g.rows() {
                            for (a, &v) in gb.iter_mut().zip(g.row(r)) {
                                *a += v;
                            }
                        }
                    }
                    if needs_grad(&self.nodes, *x) {
                        let gx = acc(&mut grads, *x, xv.shape());
                        matmul_into(&g, false, &pvals[*w], true, T::one(), gx);
                    }
                }
                Op::Embed { table, ids } => {
                    let gt = &mut pgrads[*table];
                    for (r, &i) in ids.iter().enumerate() {
                        for (a, &v) in gt.row_mut(i as usize).iter_mut().zip(g.row(r)) {
                            *a += v;
                        }
                    }
                }
                Op::Add(a, b) => {
                    for &p in [a, b] {
                        if needs_grad(&self.nodes, p) {
                            acc(&mut grads, p, g.shape()).add_assign(&g);
                        }
                    }
                }
                Op::Mul(a, b) => {
                    for (p, o) in [(*a, *b), (*b, *a)] {
                        if needs_grad(&self.nodes, p) {
                            let ov = &self.nodes[o].value;
                            let gp = acc(&mut grads, p, g.shape());
                            for ((d, &gv), &v) in
                                gp.data_mut().iter_mut().zip(g.data()).zip(ov.data())
                            {
                                *d += gv * v;
                            }
                        }
                    }
                }
                Op::Tanh(x) => {
                    let y = &node.value;
                    let gx = acc(&mut grads, *x, g.shape());
                    for ((d, &gv), &yv) in gx.data_mut().iter_mut().zip(g.data()).zip(y.data()) {
                        *d += gv * (T::one() - yv * yv);
                    }
                }
                Op::Sigmoid(x) => {
                    let y = &node.value;
                    let gx = acc(&mut grads, *x, g.shape());
                    for ((d, &gv), &yv) in gx.data_mut().iter_mut().zip(g.data()).zip(y.data()) {
                        *d += gv * yv * (T::one() - yv);
                    }
                }
                Op::Cols { x, start } => {
                    if needs_grad(&self.nodes, *x) {
                        let shape = self.nodes[*x].value.shape();
                        let gx = acc(&mut grads, *x, shape);
                        for r in 0..g.rows() {
                            for (d, &v) in gx.row_mut(r)[*start..*start + g.cols()]
                                .iter_mut()
                                .zip(g.row(r))
                            {
                                *d += v;
                            }
                        }
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let shape = self.nodes[p].value.shape();
                        if needs_grad(&self.nodes, p) {
                            let gp = acc(&mut grads, p, shape);
                            for r in 0..g.rows() {
                                for (d, &v) in
                                    gp.row_mut(r).iter_mut().zip(&g.row(r)[off..off + shape.1])
                                {
                                    *d += v;
                                }
                            }
                        }
                        off += shape.1;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let shape = self.nodes[p].value.shape();
                        let n = shape.0 * shape.1;
                        if needs_grad(&self.nodes, p) {
                            let gp = acc(&mut grads, p, shape);
                            for (d, &v) in gp.data_mut().iter_mut().zip(&g.data()[off..off + n]) {
                                *d += v;
                            }
                        }
                        off += n;
                    }
                }
                Op::Prefix { x } => {
                    if needs_grad(&self.nodes, *x) {
                        let shape = self.nodes[*x].value.shape();
                        let gx = acc(&mut grads, *x, shape);
                        for (d, &v) in gx.data_mut().iter_mut().zip(g.data()) {
                            *d += v;
                        }
                    }
                }
                Op::Scale { x, factors } => {
                    if needs_grad(&self.nodes, *x) {
                        let gx = acc(&mut grads, *x, g.shape());
                        for ((d, &gv), &f) in gx.data_mut().iter_mut().zip(g.data()).zip(factors) {
                            *d += gv * f;
                        }
                    }
                }
                Op::Mixture {
                    logits,
                    targets,
                    out,
                } => {
                    // d(-ln p)/dz_i = λ_i (g_i + 1) with g_i = dL/dλ_i.
                    let seed = g.data()[0] * out.weight;
                    let k = targets.count_columns;
                    let shape = self.nodes[*logits].value.shape();
                    let gz = acc(&mut grads, *logits, shape);
                    for r in 0..shape.0 {
                        if !targets.is_active(r) {
                            continue;
                        }
                        let p = out.probs[r];
                        let lr = out.lambda.row(r);
                        let vals = targets.values(r);
                        let gr = gz.row_mut(r);
                        for i in 0..shape.1 {
                            let dl = if i < k {
                                -vals[i] / p
                            } else if i - k == targets.targets[r] as usize {
                                -T::one() / p
                            } else {
                                T::zero()
                            };
                            gr[i] += seed * lr[i] * (dl + T::one());
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

/// Whether gradients need to flow into node `id` (constant inputs do not).
fn needs_grad<T>(nodes: &[Node<T>], id: NodeId) -> bool {
    !matches!(nodes[id].op, Op::Input)
}

#[inline]
pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Softmax of `logits` restricted to the valid positions (others get 0).
pub fn masked_softmax<T: Scalar>(logits: &[T], valid: &[bool]) -> Vec<T> {
    let max = logits
        .iter()
        .zip(valid)
        .filter(|(_, &v)| v)
        .map(|(&x, _)| x)
        .fold(T::neg_infinity(), T::max);
    let mut out: Vec<T> = logits
        .iter()
        .zip(valid)
        .map(|(&x, &v)| if v { (x - max).exp() } else { T::zero() })
        .collect();
    let s: T = out.iter().copied().sum();
    out.iter_mut().for_each(|x| *x /= s);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_examples() {
        let u = masked_softmax(&[0.0f64; 4], &[true; 4]);
        assert_eq!(u, vec![0.25; 4]);
        let s = masked_softmax(&[2f64.ln(), 0.0], &[true, true]);
        assert!((s[0] - 2.0 / 3.0).abs() < 1e-15 && (s[1] - 1.0 / 3.0).abs() < 1e-15);
        let m = masked_softmax(&[5.0f64, -3.0], &[false, true]);
        assert_eq!(m, vec![0.0, 1.0]);
    }

    #[test]
    fn affine_shape_mismatch_is_an_error() {
        let mut p = ParamSet::<f64>::new();
        let w = p.add("w", Tensor::zeros(3, 2));
        let mut g = Graph::new();
        let x = g.input(Tensor::zeros(1, 2));
        assert!(matches!(g.affine(&p, x, w, None), Err(Error::Shape(_))));
    }

    #[test]
    fn mixture_head_matches_hand_computation() {
        // one row, two count columns (0.5, 0.25 at the target), no identity
        let mut g = Graph::new();
        let z = g.input(Tensor::row_vector(vec![0.0f64, 0.0]));
        let t = MixtureTargets {
            count_columns: 2,
            identity: false,
            column_values: vec![0.5, 0.25],
            valid: vec![true, true],
            targets: vec![0],
            active: Vec::new(),
        };
        let loss = g.mixture_nll(z, t, 1.0).unwrap();
        assert!((g.value(loss).data()[0] + 0.375f64.ln()).abs() < 1e-15);
        assert_eq!(g.mixture_output(loss).unwrap().probs, vec![0.375]);
    }
}
