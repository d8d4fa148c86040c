use std::collections::HashMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::kernels;
use crate::autodiff::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Handle of a tracked tensor on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

/// Gradients keyed by tape node, as produced by [`Tape::backward`].
#[derive(Debug)]
pub struct GradientMap<S: Scalar>(HashMap<usize, Tensor<S>>);

impl<S: Scalar> GradientMap<S> {
    pub fn get(&self, id: NodeId) -> Option<&Tensor<S>> {
        self.0.get(&id.0)
    }

    /// Gradient of a tracked tensor, or zeros if no gradient flowed to it.
    pub fn grad_of(&self, t: &Tensor<S>) -> Result<Tensor<S>> {
        let id = t
            .node_id()
            .ok_or_else(|| Error::Internal("gradient requested for an untracked tensor".into()))?;
        Ok(self
            .get(id)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(t.shape())))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

enum Record<S: Scalar> {
    MatMul { a: Tensor<S>, b: Tensor<S>, out: NodeId },
    MatMulNt { a: Tensor<S>, b: Tensor<S>, out: NodeId },
    Add { a: Option<NodeId>, b: Option<NodeId>, out: NodeId },
    Sub { a: Option<NodeId>, b: Option<NodeId>, out: NodeId },
    Hadamard { a: Tensor<S>, b: Tensor<S>, out: NodeId },
    AddBiasRow { mat: Option<NodeId>, bias: Option<NodeId>, cols: usize, out: NodeId },
    Scale { x: Option<NodeId>, c: S, out: NodeId },
    LeakyRelu { x: Option<NodeId>, y: Tensor<S>, slope: S, out: NodeId },
    Elu { x: Option<NodeId>, y: Tensor<S>, out: NodeId },
    Dropout { x: Option<NodeId>, mask: Arc<Vec<S>>, out: NodeId },
    SegmentSoftmax { x: Option<NodeId>, alpha: Tensor<S>, offsets: Arc<Vec<usize>>, out: NodeId },
    SegmentWeightedSum {
        alpha: Tensor<S>,
        messages: Tensor<S>,
        offsets: Arc<Vec<usize>>,
        out: NodeId,
    },
    ConcatColumns { parts: Vec<(Option<NodeId>, usize)>, out: NodeId },
    GatherRows { x: Option<NodeId>, indices: Arc<Vec<usize>>, out: NodeId },
    SliceRows { x: Option<NodeId>, start: usize, out: NodeId },
    Sum { x: Option<NodeId>, out: NodeId },
    Mean { x: Option<NodeId>, out: NodeId },
}

/// Append-only record of a forward pass, replayed in reverse for gradients.
///
/// One training step owns one tape. Records keep whatever the reverse pass
/// needs (inputs, activation outputs, dropout masks); clearing happens in
/// [`Tape::backward`].
pub struct Tape<S: Scalar> {
    records: Vec<Record<S>>,
    shapes: Vec<Vec<usize>>,
    tracking: bool,
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Tape {
            records: Vec::new(),
            shapes: Vec::new(),
            tracking: true,
        }
    }

    /// While off, ops run as pure kernels: nothing is recorded and outputs
    /// stay untracked.
    pub fn set_tracking(&mut self, on: bool) {
        self.tracking = on;
    }

    pub fn is_tracking(&self) -> bool {
        self.tracking
    }

    pub fn record_count(&self) -> usize {
        self.records.len()
    }

    fn fresh_id(&mut self, shape: &[usize]) -> NodeId {
        self.shapes.push(shape.to_vec());
        NodeId(self.shapes.len() - 1)
    }

    /// Register a tensor (typically a parameter) so gradients accumulate
    /// into it during [`Tape::backward`].
    pub fn leaf(&mut self, t: &Tensor<S>) -> Tensor<S> {
        let id = self.fresh_id(t.shape());
        t.detached().with_node(id)
    }

    fn track(&mut self, out: Tensor<S>, make: impl FnOnce(NodeId) -> Record<S>) -> Tensor<S> {
        let id = self.fresh_id(out.shape());
        let out = out.with_node(id);
        self.records.push(make(id));
        out
    }

    fn any_tracked(inputs: &[&Tensor<S>]) -> bool {
        inputs.iter().any(|t| t.node_id().is_some())
    }

    pub fn matmul(&mut self, a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
        let out = kernels::matmul(a, b)?;
        if self.tracking && Self::any_tracked(&[a, b]) {
            return Ok(self.track(out, |id| Record::MatMul {
                a: a.clone(),
                b: b.clone(),
                out: id,
            }));
        }
        Ok(out)
    }

    /// `a · bᵀ` with `b` stored row-major as `n×k`.
    pub fn matmul_nt(&mut self, a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
        let out = kernels::matmul_nt(a, b)?;
        if self.tracking && Self::any_tracked(&[a, b]) {
            return Ok(self.track(out, |id| Record::MatMulNt {
                a: a.clone(),
                b: b.clone(),
                out: id,
            }));
        }
        Ok(out)
    }

    pub fn add(&mut self, a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
        let out = kernels::add(a, b)?;
        if self.tracking && Self::any_tracked(&[a, b]) {
            return Ok(self.track(out, |id| Record::Add {
                a: a.node_id(),
                b: b.node_id(),
                out: id,
            }));
        }
        Ok(out)
    }

    pub fn sub(&mut self, a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
        let out = kernels::sub(a, b)?;
        if self.tracking && Self::any_tracked(&[a, b]) {
            return Ok(self.track(out, |id| Record::Sub {
                a: a.node_id(),
                b: b.node_id(),
                out: id,
            }));
        }
        Ok(out)
    }

    pub fn hadamard(&mut self, a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
        let out = kernels::hadamard(a, b)?;
        if self.tracking && Self::any_tracked(&[a, b]) {
            return Ok(self.track(out, |id| Record::Hadamard {
                a: a.clone(),
                b: b.clone(),
                out: id,
            }));
        }
        Ok(out)
    }

    pub fn add_bias_row(&mut self, mat: &Tensor<S>, bias: &Tensor<S>) -> Result<Tensor<S>> {
        let out = kernels::add_bias_row(mat, bias)?;
        if self.tracking && Self::any_tracked(&[mat, bias]) {
            let cols = out.cols();
            return Ok(self.track(out, |id| Record::AddBiasRow {
                mat: mat.node_id(),
                bias: bias.node_id(),
                cols,
                out: id,
            }));
        }
        Ok(out)
    }

    pub fn scale(&mut self, x: &Tensor<S>, c: S) -> Tensor<S> {
        let out = kernels::scale(x, c);
        if self.tracking && x.node_id().is_some() {
            return self.track(out, |id| Record::Scale {
                x: x.node_id(),
                c,
                out: id,
            });
        }
        out
    }

    /// Elementwise `max(x, slope·x)`; the subgradient at 0 is `slope`.
    pub fn leaky_relu(&mut self, x: &Tensor<S>, slope: S) -> Tensor<S> {
        let out = kernels::leaky_relu(x, slope);
        if self.tracking && x.node_id().is_some() {
            let y = out.clone();
            return self.track(out, |id| Record::LeakyRelu {
                x: x.node_id(),
                y,
                slope,
                out: id,
            });
        }
        out
    }

    pub fn elu(&mut self, x: &Tensor<S>) -> Tensor<S> {
        let out = kernels::elu(x);
        if self.tracking && x.node_id().is_some() {
            let y = out.clone();
            return self.track(out, |id| Record::Elu {
                x: x.node_id(),
                y,
                out: id,
            });
        }
        out
    }

    /// Inverted dropout: while training, zero each element with probability
    /// `rate` and scale survivors by `1/(1−rate)`; at inference this is the
    /// identity. Deterministic per `seed`.
    pub fn dropout(
        &mut self,
        x: &Tensor<S>,
        rate: f64,
        seed: u64,
        training: bool,
    ) -> Result<Tensor<S>> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Config(format!("dropout rate {rate} outside [0, 1)")));
        }
        if !training || rate == 0.0 {
            return Ok(x.clone());
        }
        let keep_scale = S::from_f64_lossy(1.0 / (1.0 - rate));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mask: Vec<S> = (0..x.len())
            .map(|_| {
                if rng.gen::<f64>() < rate {
                    S::zero()
                } else {
                    keep_scale
                }
            })
            .collect();
        let values = x
            .values()
            .iter()
            .zip(&mask)
            .map(|(&v, &m)| v * m)
            .collect();
        let out = Tensor::from_parts(x.shape().to_vec(), values);
        if self.tracking && x.node_id().is_some() {
            let mask = Arc::new(mask);
            return Ok(self.track(out, |id| Record::Dropout {
                x: x.node_id(),
                mask,
                out: id,
            }));
        }
        Ok(out)
    }

    /// Exp-normalize scores within each CSR segment (max-subtracted).
    pub fn segment_softmax(
        &mut self,
        scores: &Tensor<S>,
        offsets: &Arc<Vec<usize>>,
    ) -> Result<Tensor<S>> {
        let out = kernels::segment_softmax(scores, offsets)?;
        if self.tracking && scores.node_id().is_some() {
            let alpha = out.clone();
            let offsets = Arc::clone(offsets);
            return Ok(self.track(out, |id| Record::SegmentSoftmax {
                x: scores.node_id(),
                alpha,
                offsets,
                out: id,
            }));
        }
        Ok(out)
    }

    /// Per-destination weighted aggregation of edge messages.
    pub fn segment_weighted_sum(
        &mut self,
        alpha: &Tensor<S>,
        messages: &Tensor<S>,
        offsets: &Arc<Vec<usize>>,
    ) -> Result<Tensor<S>> {
        let out = kernels::segment_weighted_sum(alpha, messages, offsets)?;
        if self.tracking && Self::any_tracked(&[alpha, messages]) {
            let offsets = Arc::clone(offsets);
            return Ok(self.track(out, |id| Record::SegmentWeightedSum {
                alpha: alpha.clone(),
                messages: messages.clone(),
                offsets,
                out: id,
            }));
        }
        Ok(out)
    }

    /// Column-wise concatenation in the given (head) order.
    pub fn concat_columns(&mut self, parts: &[Tensor<S>]) -> Result<Tensor<S>> {
        let refs: Vec<&Tensor<S>> = parts.iter().collect();
        let out = kernels::concat_columns(&refs)?;
        if self.tracking && parts.iter().any(|t| t.node_id().is_some()) {
            let meta: Vec<(Option<NodeId>, usize)> =
                parts.iter().map(|p| (p.node_id(), p.cols())).collect();
            return Ok(self.track(out, |id| Record::ConcatColumns { parts: meta, out: id }));
        }
        Ok(out)
    }

    pub fn gather_rows(&mut self, x: &Tensor<S>, indices: &Arc<Vec<usize>>) -> Result<Tensor<S>> {
        let out = kernels::gather_rows(x, indices)?;
        if self.tracking && x.node_id().is_some() {
            // scatter-add needs the source row count, recovered from the shape
            // registry of the input node at backward time
            let indices = Arc::clone(indices);
            return Ok(self.track(out, |id| Record::GatherRows {
                x: x.node_id(),
                indices,
                out: id,
            }));
        }
        Ok(out)
    }

    pub fn slice_rows(&mut self, x: &Tensor<S>, start: usize, len: usize) -> Result<Tensor<S>> {
        let out = kernels::slice_rows(x, start, len)?;
        if self.tracking && x.node_id().is_some() {
            return Ok(self.track(out, |id| Record::SliceRows {
                x: x.node_id(),
                start,
                out: id,
            }));
        }
        Ok(out)
    }

    pub fn sum(&mut self, x: &Tensor<S>) -> Tensor<S> {
        let out = kernels::sum_all(x);
        if self.tracking && x.node_id().is_some() {
            return self.track(out, |id| Record::Sum {
                x: x.node_id(),
                out: id,
            });
        }
        out
    }

    pub fn mean(&mut self, x: &Tensor<S>) -> Result<Tensor<S>> {
        let out = kernels::mean_all(x)?;
        if self.tracking && x.node_id().is_some() {
            return Ok(self.track(out, |id| Record::Mean {
                x: x.node_id(),
                out: id,
            }));
        }
        Ok(out)
    }

    /// Reverse-topological gradient accumulation from a tracked scalar loss.
    /// The tape is cleared afterwards and can be reused for the next step.
    pub fn backward(&mut self, loss: &Tensor<S>) -> Result<GradientMap<S>> {
        let loss_id = loss.node_id().ok_or_else(|| {
            Error::Internal("backward called on a tensor not tracked by this tape".into())
        })?;
        if loss.len() != 1 {
            return Err(Error::Shape(format!(
                "backward needs a scalar loss, got shape {:?}",
                loss.shape()
            )));
        }
        let mut slots: Vec<Option<Vec<S>>> = vec![None; self.shapes.len()];
        slots[loss_id.0] = Some(vec![S::one()]);

        for rec in self.records.iter().rev() {
            self.step_backward(rec, &mut slots);
        }

        let mut map = HashMap::new();
        for (i, slot) in slots.into_iter().enumerate() {
            if let Some(values) = slot {
                map.insert(i, Tensor::from_parts(self.shapes[i].clone(), values));
            }
        }
        self.records.clear();
        self.shapes.clear();
        Ok(GradientMap(map))
    }

    fn slot_len(&self, id: NodeId) -> usize {
        self.shapes[id.0].iter().product()
    }

    fn step_backward(&self, rec: &Record<S>, slots: &mut [Option<Vec<S>>]) {
        // Helper closures cannot borrow `slots` twice, so gradients of the
        // output are cloned out before accumulation into inputs.
        macro_rules! out_grad {
            ($out:expr) => {
                match &slots[$out.0] {
                    Some(g) => g.clone(),
                    None => return,
                }
            };
        }
        fn ensure<'a, S: Scalar>(
            slots: &'a mut [Option<Vec<S>>],
            id: NodeId,
            len: usize,
        ) -> &'a mut Vec<S> {
            slots[id.0].get_or_insert_with(|| vec![S::zero(); len])
        }
        fn axpy<S: Scalar>(dst: &mut [S], src: &[S], scale: S) {
            for (d, &s) in dst.iter_mut().zip(src) {
                *d += s * scale;
            }
        }

        match rec {
            Record::MatMul { a, b, out } => {
                let d_out = out_grad!(out);
                let (m, k) = (a.rows(), a.cols());
                let n = b.cols();
                if let Some(id) = a.node_id() {
                    // dA += dC · Bᵀ
                    let slot = ensure(slots, id, m * k);
                    S::gemm_strided(
                        m, n, k,
                        &d_out, n as isize, 1,
                        b.values(), 1, n as isize,
                        S::one(), slot,
                    );
                }
                if let Some(id) = b.node_id() {
                    // dB += Aᵀ · dC
                    let slot = ensure(slots, id, k * n);
                    S::gemm_strided(
                        k, m, n,
                        a.values(), 1, k as isize,
                        &d_out, n as isize, 1,
                        S::one(), slot,
                    );
                }
            }
            Record::MatMulNt { a, b, out } => {
                // C = A (m×k) · Bᵀ with B stored n×k
                let d_out = out_grad!(out);
                let (m, k) = (a.rows(), a.cols());
                let n = b.rows();
                if let Some(id) = a.node_id() {
                    // dA += dC · B
                    let slot = ensure(slots, id, m * k);
                    S::gemm_strided(
                        m, n, k,
                        &d_out, n as isize, 1,
                        b.values(), k as isize, 1,
                        S::one(), slot,
                    );
                }
                if let Some(id) = b.node_id() {
                    // dB += dCᵀ · A
                    let slot = ensure(slots, id, n * k);
                    S::gemm_strided(
                        n, m, k,
                        &d_out, 1, n as isize,
                        a.values(), k as isize, 1,
                        S::one(), slot,
                    );
                }
            }
            Record::Add { a, b, out } => {
                let d_out = out_grad!(out);
                for id in [a, b].into_iter().flatten() {
                    let slot = ensure(slots, *id, d_out.len());
                    axpy(slot, &d_out, S::one());
                }
            }
            Record::Sub { a, b, out } => {
                let d_out = out_grad!(out);
                if let Some(id) = a {
                    axpy(ensure(slots, *id, d_out.len()), &d_out, S::one());
                }
                if let Some(id) = b {
                    axpy(ensure(slots, *id, d_out.len()), &d_out, -S::one());
                }
            }
            Record::Hadamard { a, b, out } => {
                let d_out = out_grad!(out);
                if let Some(id) = a.node_id() {
                    let slot = ensure(slots, id, d_out.len());
                    for ((d, &g), &bv) in slot.iter_mut().zip(&d_out).zip(b.values()) {
                        *d += g * bv;
                    }
                }
                if let Some(id) = b.node_id() {
                    let slot = ensure(slots, id, d_out.len());
                    for ((d, &g), &av) in slot.iter_mut().zip(&d_out).zip(a.values()) {
                        *d += g * av;
                    }
                }
            }
            Record::AddBiasRow { mat, bias, cols, out } => {
                let d_out = out_grad!(out);
                if let Some(id) = mat {
                    axpy(ensure(slots, *id, d_out.len()), &d_out, S::one());
                }
                if let Some(id) = bias {
                    let slot = ensure(slots, *id, *cols);
                    for row in d_out.chunks_exact(*cols) {
                        for (d, &g) in slot.iter_mut().zip(row) {
                            *d += g;
                        }
                    }
                }
            }
            Record::Scale { x, c, out } => {
                let d_out = out_grad!(out);
                if let Some(id) = x {
                    axpy(ensure(slots, *id, d_out.len()), &d_out, *c);
                }
            }
            Record::LeakyRelu { x, y, slope, out } => {
                let d_out = out_grad!(out);
                if let Some(id) = x {
                    let slot = ensure(slots, *id, d_out.len());
                    for ((d, &g), &yv) in slot.iter_mut().zip(&d_out).zip(y.values()) {
                        let f = if yv > S::zero() { S::one() } else { *slope };
                        *d += g * f;
                    }
                }
            }
            Record::Elu { x, y, out } => {
                let d_out = out_grad!(out);
                if let Some(id) = x {
                    let slot = ensure(slots, *id, d_out.len());
                    for ((d, &g), &yv) in slot.iter_mut().zip(&d_out).zip(y.values()) {
                        let f = if yv < S::zero() { yv + S::one() } else { S::one() };
                        *d += g * f;
                    }
                }
            }
            Record::Dropout { x, mask, out } => {
                let d_out = out_grad!(out);
                if let Some(id) = x {
                    let slot = ensure(slots, *id, d_out.len());
                    for ((d, &g), &m) in slot.iter_mut().zip(&d_out).zip(mask.iter()) {
                        *d += g * m;
                    }
                }
            }
            Record::SegmentSoftmax { x, alpha, offsets, out } => {
                let d_out = out_grad!(out);
                if let Some(id) = x {
                    let a = alpha.values();
                    let slot = ensure(slots, *id, d_out.len());
                    for w in offsets.windows(2) {
                        let mut dot = S::zero();
                        for e in w[0]..w[1] {
                            dot += d_out[e] * a[e];
                        }
                        for e in w[0]..w[1] {
                            slot[e] += a[e] * (d_out[e] - dot);
                        }
                    }
                }
            }
            Record::SegmentWeightedSum { alpha, messages, offsets, out } => {
                let d_out = out_grad!(out);
                let f = messages.cols();
                if let Some(id) = alpha.node_id() {
                    let slot = ensure(slots, id, alpha.len());
                    let msg = messages.values();
                    for (i, w) in offsets.windows(2).enumerate() {
                        let d_row = &d_out[i * f..(i + 1) * f];
                        for e in w[0]..w[1] {
                            let mut dot = S::zero();
                            for (x, &m) in d_row.iter().zip(&msg[e * f..(e + 1) * f]) {
                                dot += *x * m;
                            }
                            slot[e] += dot;
                        }
                    }
                }
                if let Some(id) = messages.node_id() {
                    let slot = ensure(slots, id, messages.len());
                    let a = alpha.values();
                    for (i, w) in offsets.windows(2).enumerate() {
                        let d_row = &d_out[i * f..(i + 1) * f];
                        for e in w[0]..w[1] {
                            axpy(&mut slot[e * f..(e + 1) * f], d_row, a[e]);
                        }
                    }
                }
            }
            Record::ConcatColumns { parts, out } => {
                let d_out = out_grad!(out);
                let total: usize = parts.iter().map(|(_, w)| *w).sum();
                let rows = d_out.len() / total;
                let mut col = 0;
                for (id, w) in parts {
                    if let Some(id) = id {
                        let slot = ensure(slots, *id, rows * w);
                        for r in 0..rows {
                            let src = &d_out[r * total + col..r * total + col + w];
                            for (d, &g) in slot[r * w..(r + 1) * w].iter_mut().zip(src) {
                                *d += g;
                            }
                        }
                    }
                    col += w;
                }
            }
            Record::GatherRows { x, indices, out } => {
                let d_out = out_grad!(out);
                if let Some(id) = x {
                    let len = self.slot_len(*id);
                    let f = d_out.len() / indices.len();
                    let slot = ensure(slots, *id, len);
                    for (e, &i) in indices.iter().enumerate() {
                        for (d, &g) in slot[i * f..(i + 1) * f]
                            .iter_mut()
                            .zip(&d_out[e * f..(e + 1) * f])
                        {
                            *d += g;
                        }
                    }
                }
            }
            Record::SliceRows { x, start, out } => {
                let d_out = out_grad!(out);
                if let Some(id) = x {
                    let len = self.slot_len(*id);
                    let f = len / self.shapes[id.0][0];
                    let slot = ensure(slots, *id, len);
                    let off = start * f;
                    for (d, &g) in slot[off..off + d_out.len()].iter_mut().zip(&d_out) {
                        *d += g;
                    }
                }
            }
            Record::Sum { x, out } => {
                let d_out = out_grad!(out);
                if let Some(id) = x {
                    let len = self.slot_len(*id);
                    let slot = ensure(slots, *id, len);
                    for d in slot.iter_mut() {
                        *d += d_out[0];
                    }
                }
            }
            Record::Mean { x, out } => {
                let d_out = out_grad!(out);
                if let Some(id) = x {
                    let len = self.slot_len(*id);
                    let g = d_out[0] / S::from_usize(len).expect("length fits scalar");
                    let slot = ensure(slots, *id, len);
                    for d in slot.iter_mut() {
                        *d += g;
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::new(shape, v.to_vec()).unwrap()
    }

    /// Central finite difference of `f` around `x`.
    fn finite_diff(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
        let mut grad = vec![0.0; x.len()];
        let mut probe = x.to_vec();
        for i in 0..x.len() {
            probe[i] = x[i] + h;
            let up = f(&probe);
            probe[i] = x[i] - h;
            let down = f(&probe);
            probe[i] = x[i];
            grad[i] = (up - down) / (2.0 * h);
        }
        grad
    }

    fn assert_close_rel(actual: &[f64], expected: &[f64], tol: f64) {
        assert_eq!(actual.len(), expected.len());
        for (i, (a, e)) in actual.iter().zip(expected).enumerate() {
            // absolute floor covers truly-zero gradients, where the central
            // difference only reaches its ~1e-11 noise level
            let diff = (a - e).abs();
            let ok = diff < 1e-9 || diff / a.abs().max(e.abs()) < tol;
            assert!(ok, "grad[{i}] = {a}, finite difference {e}");
        }
    }

    #[test]
    fn backward_of_sum_is_ones() {
        let mut tape = Tape::new();
        let x = tape.leaf(&t(&[3], &[5.0, -2.0, 0.5]));
        let loss = tape.sum(&x);
        let grads = tape.backward(&loss).unwrap();
        assert_eq!(grads.grad_of(&x).unwrap().values(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn backward_of_half_square_sum_is_x() {
        let mut tape = Tape::new();
        let x = tape.leaf(&t(&[3], &[1.5, -3.0, 2.0]));
        let sq = tape.hadamard(&x, &x).unwrap();
        let s = tape.sum(&sq);
        let loss = tape.scale(&s, 0.5);
        let grads = tape.backward(&loss).unwrap();
        assert_eq!(grads.grad_of(&x).unwrap().values(), &[1.5, -3.0, 2.0]);
    }

    #[test]
    fn backward_on_untracked_tensor_errors() {
        let mut tape = Tape::<f64>::new();
        let loss = Tensor::scalar(1.0);
        assert!(tape.backward(&loss).is_err());
    }

    #[test]
    fn backward_over_empty_tape_is_noop() {
        let mut tape = Tape::new();
        let x = tape.leaf(&Tensor::scalar(4.0));
        let grads = tape.backward(&x).unwrap();
        assert_eq!(grads.grad_of(&x).unwrap().values(), &[1.0]);
        assert_eq!(tape.record_count(), 0);
    }

    #[test]
    fn tape_cleared_after_backward() {
        let mut tape = Tape::new();
        let x = tape.leaf(&t(&[2], &[1.0, 2.0]));
        let s = tape.sum(&x);
        assert_eq!(tape.record_count(), 1);
        tape.backward(&s).unwrap();
        assert_eq!(tape.record_count(), 0);
    }

    #[test]
    fn tracking_off_records_nothing() {
        let mut tape = Tape::new();
        let x = tape.leaf(&t(&[2], &[1.0, 2.0]));
        tape.set_tracking(false);
        let y = tape.scale(&x, 3.0);
        assert!(y.node_id().is_none());
        assert_eq!(tape.record_count(), 0);
    }

    #[test]
    fn matmul_gradient_matches_finite_difference() {
        // d/dA of sum(A·B), checked at rel. err 1e-6 with h = 1e-5
        let a0 = [0.3, -1.2, 0.7, 2.1, -0.4, 0.9];
        let b = t(&[3, 2], &[1.0, -2.0, 0.5, 0.25, -1.5, 3.0]);
        let f = |av: &[f64]| {
            let a = t(&[2, 3], av);
            kernels::sum_all(&kernels::matmul(&a, &b).unwrap()).item()
        };
        let expected = finite_diff(f, &a0, 1e-5);

        let mut tape = Tape::new();
        let a = tape.leaf(&t(&[2, 3], &a0));
        let prod = tape.matmul(&a, &b).unwrap();
        let loss = tape.sum(&prod);
        let grads = tape.backward(&loss).unwrap();
        assert_close_rel(grads.grad_of(&a).unwrap().values(), &expected, 1e-6);
    }

    #[test]
    fn matmul_nt_gradients_match_finite_difference() {
        let a0 = [0.3, -1.2, 0.7, 2.1];
        let b0 = [1.0, -2.0, 0.5, 0.25, -1.5, 3.0];
        let f = |av: &[f64], bv: &[f64]| {
            let a = t(&[2, 2], av);
            let b = t(&[3, 2], bv);
            kernels::sum_all(&kernels::matmul_nt(&a, &b).unwrap()).item()
        };
        let ea = finite_diff(|av| f(av, &b0), &a0, 1e-5);
        let eb = finite_diff(|bv| f(&a0, bv), &b0, 1e-5);

        let mut tape = Tape::new();
        let a = tape.leaf(&t(&[2, 2], &a0));
        let b = tape.leaf(&t(&[3, 2], &b0));
        let prod = tape.matmul_nt(&a, &b).unwrap();
        let loss = tape.sum(&prod);
        let grads = tape.backward(&loss).unwrap();
        assert_close_rel(grads.grad_of(&a).unwrap().values(), &ea, 1e-6);
        assert_close_rel(grads.grad_of(&b).unwrap().values(), &eb, 1e-6);
    }

    #[test]
    fn leaky_relu_gradient_is_slope_on_negative_side() {
        let mut tape = Tape::new();
        let x = tape.leaf(&t(&[1], &[-2.0]));
        let y = tape.leaky_relu(&x, 0.2);
        let loss = tape.sum(&y);
        let grads = tape.backward(&loss).unwrap();
        assert_eq!(grads.grad_of(&x).unwrap().values(), &[0.2]);
    }

    #[test]
    fn elu_gradient_matches_finite_difference_at_negative_input() {
        let x0 = [-0.5];
        let f = |xv: &[f64]| kernels::sum_all(&kernels::elu(&t(&[1], xv))).item();
        let expected = finite_diff(f, &x0, 1e-5);

        let mut tape = Tape::new();
        let x = tape.leaf(&t(&[1], &x0));
        let y = tape.elu(&x);
        let loss = tape.sum(&y);
        let grads = tape.backward(&loss).unwrap();
        assert_close_rel(grads.grad_of(&x).unwrap().values(), &expected, 1e-6);
    }

    #[test]
    fn segment_softmax_gradient_matches_finite_difference() {
        let offsets = Arc::new(vec![0usize, 2, 5]);
        let x0 = [0.3, -0.2, 1.0, 0.1, -0.7];
        // weight the outputs so the gradient is not in softmax's null space
        let w = [0.9, -0.3, 0.4, 1.2, -0.8];
        let f = |xv: &[f64]| {
            let sm = kernels::segment_softmax(&t(&[5], xv), &offsets).unwrap();
            sm.values().iter().zip(&w).map(|(a, b)| a * b).sum()
        };
        let expected = finite_diff(f, &x0, 1e-5);

        let mut tape = Tape::new();
        let x = tape.leaf(&t(&[5], &x0));
        let sm = tape.segment_softmax(&x, &offsets).unwrap();
        let weighted = tape.hadamard(&sm, &t(&[5], &w)).unwrap();
        let loss = tape.sum(&weighted);
        let grads = tape.backward(&loss).unwrap();
        assert_close_rel(grads.grad_of(&x).unwrap().values(), &expected, 1e-6);
    }

    #[test]
    fn segment_weighted_sum_gradients_match_finite_difference() {
        let offsets = Arc::new(vec![0usize, 2, 3]);
        let alpha0 = [0.25, 0.75, 1.0];
        let msg0 = [4.0, 0.0, 0.0, 4.0, 1.0, -2.0];
        let w = [0.5, -1.0, 2.0, 0.25];
        let f = |av: &[f64], mv: &[f64]| {
            let out = kernels::segment_weighted_sum(
                &t(&[3], av),
                &t(&[3, 2], mv),
                &offsets,
            )
            .unwrap();
            out.values().iter().zip(&w).map(|(a, b)| a * b).sum()
        };
        let ea = finite_diff(|av| f(av, &msg0), &alpha0, 1e-5);
        let em = finite_diff(|mv| f(&alpha0, mv), &msg0, 1e-5);

        let mut tape = Tape::new();
        let alpha = tape.leaf(&t(&[3], &alpha0));
        let msg = tape.leaf(&t(&[3, 2], &msg0));
        let out = tape.segment_weighted_sum(&alpha, &msg, &offsets).unwrap();
        let weighted = tape.hadamard(&out, &t(&[2, 2], &w)).unwrap();
        let loss = tape.sum(&weighted);
        let grads = tape.backward(&loss).unwrap();
        assert_close_rel(grads.grad_of(&alpha).unwrap().values(), &ea, 1e-6);
        assert_close_rel(grads.grad_of(&msg).unwrap().values(), &em, 1e-6);
    }

    #[test]
    fn concat_backward_splits_by_width() {
        let a0 = [1.0, 2.0, 3.0, 4.0];
        let b0 = [5.0, 6.0];
        let w = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6];
        let f = |av: &[f64], bv: &[f64]| {
            let parts = [t(&[2, 2], av), t(&[2, 1], bv)];
            let refs: Vec<&Tensor<f64>> = parts.iter().collect();
            let out = kernels::concat_columns(&refs).unwrap();
            out.values().iter().zip(&w).map(|(x, y)| x * y).sum()
        };
        let ea = finite_diff(|av| f(av, &b0), &a0, 1e-5);
        let eb = finite_diff(|bv| f(&a0, bv), &b0, 1e-5);

        let mut tape = Tape::new();
        let a = tape.leaf(&t(&[2, 2], &a0));
        let b = tape.leaf(&t(&[2, 1], &b0));
        let out = tape.concat_columns(&[a.clone(), b.clone()]).unwrap();
        let weighted = tape.hadamard(&out, &t(&[2, 3], &w)).unwrap();
        let loss = tape.sum(&weighted);
        let grads = tape.backward(&loss).unwrap();
        assert_close_rel(grads.grad_of(&a).unwrap().values(), &ea, 1e-6);
        assert_close_rel(grads.grad_of(&b).unwrap().values(), &eb, 1e-6);
    }

    #[test]
    fn dropout_identity_cases() {
        let mut tape = Tape::new();
        let x = tape.leaf(&t(&[4], &[1.0, 2.0, 3.0, 4.0]));
        let y = tape.dropout(&x, 0.0, 7, true).unwrap();
        assert_eq!(y.values(), x.values());
        let y = tape.dropout(&x, 0.5, 7, false).unwrap();
        assert_eq!(y.values(), x.values());
    }

    #[test]
    fn dropout_preserves_mean_at_scale() {
        // law of large numbers: inverted dropout keeps E[x] = 1
        let n = 100_000;
        let mut tape = Tape::<f64>::new();
        let x = Tensor::full(&[n], 1.0);
        let y = tape.dropout(&x, 0.2, 123, true).unwrap();
        let mean = y.values().iter().sum::<f64>() / n as f64;
        assert!((mean - 1.0).abs() < 0.01, "mean = {mean}");
    }

    #[test]
    fn dropout_deterministic_per_seed() {
        let mut tape = Tape::<f64>::new();
        let x = Tensor::full(&[64], 2.0);
        let y1 = tape.dropout(&x, 0.3, 99, true).unwrap();
        let y2 = tape.dropout(&x, 0.3, 99, true).unwrap();
        let y3 = tape.dropout(&x, 0.3, 100, true).unwrap();
        assert_eq!(y1.values(), y2.values());
        assert_ne!(y1.values(), y3.values());
    }

    #[test]
    fn gather_rows_gradient_scatters() {
        let mut tape = Tape::new();
        let x = tape.leaf(&t(&[3, 2], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let idx = Arc::new(vec![2usize, 0, 2]);
        let g = tape.gather_rows(&x, &idx).unwrap();
        let loss = tape.sum(&g);
        let grads = tape.backward(&loss).unwrap();
        assert_eq!(
            grads.grad_of(&x).unwrap().values(),
            &[1.0, 1.0, 0.0, 0.0, 2.0, 2.0]
        );
    }

    #[test]
    fn gradient_accumulates_across_consumers() {
        // y = x·2 + x·3 => dy/dx = 5
        let mut tape = Tape::new();
        let x = tape.leaf(&Tensor::scalar(1.0));
        let a = tape.scale(&x, 2.0);
        let b = tape.scale(&x, 3.0);
        let y = tape.add(&a, &b).unwrap();
        let grads = tape.backward(&y).unwrap();
        assert_eq!(grads.grad_of(&x).unwrap().values(), &[5.0]);
    }
}
