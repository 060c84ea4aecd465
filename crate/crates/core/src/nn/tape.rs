//! Reverse-mode differentiation over a tape of primitive operations.
//!
//! A [`Tape`] is built fresh for every forward pass. Each primitive pushes a
//! node holding its output value and whatever it needs for the backward
//! sweep; [`Tape::backward`] then walks the nodes in reverse, accumulating
//! gradients for every node and adding parameter gradients into the owning
//! [`ParamStore`].

use std::rc::Rc;

use super::param::{BatchNormState, Mode, ParamId, ParamStore};
use super::tensor::{matmul_at_into, matmul_bt_into, matmul_into, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Sparse linear map between row spaces in compressed-row form.
///
/// Output row `i` is `Σ weight · input_row[j]` over the entries of row `i`.
/// Rows with no entries produce zeros.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SparseRows {
    input_rows: usize,
    offsets: Vec<usize>,
    entries: Vec<(usize, f64)>,
}

impl SparseRows {
    pub fn new(input_rows: usize) -> Self {
        Self {
            input_rows,
            offsets: vec![0],
            entries: Vec::new(),
        }
    }

    /// Plain row gather: output row `i` copies input row `indices[i]`.
    pub fn gather(input_rows: usize, indices: &[usize]) -> Self {
        let mut s = Self::new(input_rows);
        for &i in indices {
            s.push_row([(i, 1.0)]);
        }
        s
    }

    pub fn push_row(&mut self, entries: impl IntoIterator<Item = (usize, f64)>) {
        for (j, w) in entries {
            debug_assert!(j < self.input_rows);
            self.entries.push((j, w));
        }
        self.offsets.push(self.entries.len());
    }

    pub fn output_rows(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn input_rows(&self) -> usize {
        self.input_rows
    }

    pub fn row(&self, i: usize) -> &[(usize, f64)] {
        &self.entries[self.offsets[i]..self.offsets[i + 1]]
    }

    /// Applies the map to a plain tensor.
    pub fn apply(&self, x: &Tensor) -> Tensor {
        let c = x.cols();
        let mut out = Tensor::zeros(&[self.output_rows(), c]);
        for i in 0..self.output_rows() {
            let dst = out.row_mut(i);
            for &(j, w) in self.row(i) {
                for (d, s) in dst.iter_mut().zip(x.row(j)) {
                    *d += w * s;
                }
            }
        }
        out
    }
}

/// One block of a masked score matrix for [`Tape::masked_softmax_xent`].
///
/// The block occupies `rows·cols` consecutive entries of the score column
/// starting at `offset`, row-major. `target[r]` is the ground-truth column of
/// row `r`; it must be a bijection when the column term is used.
#[derive(Clone, Debug)]
pub struct XentBlock {
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
    pub mask: Vec<bool>,
    pub target: Vec<usize>,
}

enum Op {
    Leaf,
    Param(ParamId),
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    SliceRows {
        x: Var,
        start: usize,
    },
    PRelu {
        x: Var,
        slope: Var,
    },
    BatchNorm {
        x: Var,
        scale: Var,
        shift: Var,
        normalized: Tensor,
        inv_std: Vec<f64>,
        train: bool,
    },
    SegmentMax {
        x: Var,
        argmax: Vec<usize>,
    },
    Sparse {
        x: Var,
        map: Rc<SparseRows>,
    },
    Concat {
        parts: Vec<Var>,
    },
    Add {
        a: Var,
        b: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    Scale {
        x: Var,
        factor: f64,
    },
    Sum {
        x: Var,
    },
    InverseDistance {
        x: Var,
        pairs: Rc<Vec<(usize, usize)>>,
        distances: Vec<f64>,
        epsilon: f64,
    },
    MaskedXent {
        scores: Var,
        blocks: Rc<Vec<XentBlock>>,
        symmetric: bool,
    },
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Recorded forward pass.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
    track_kinks: bool,
    kink_signature: u64,
}

fn mix(h: u64, v: u64) -> u64 {
    (h ^ v).wrapping_mul(0x0100_0000_01b3).rotate_left(5)
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records which side of every non-differentiable point (pReLU sign,
    /// max-pool winner) the forward pass landed on. Used by the gradient
    /// checker to skip coordinates whose finite-difference stencil straddles
    /// a kink.
    pub fn with_kink_tracking() -> Self {
        Self {
            track_kinks: true,
            kink_signature: 0xcbf2_9ce4_8422_2325,
            ..Self::default()
        }
    }

    pub fn kink_signature(&self) -> u64 {
        self.kink_signature
    }

    /// Folds a discrete decision made outside the tape (such as a candidate
    /// selection) into the kink signature.
    pub fn note_discrete(&mut self, values: impl IntoIterator<Item = u64>) {
        if self.track_kinks {
            for v in values {
                self.kink_signature = mix(self.kink_signature, v);
            }
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Gradient of the last `backward` loss with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Leaf node. Its gradient is available after `backward` but it is
    /// otherwise treated as a constant.
    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push(store.get(id).value.clone(), Op::Param(id))
    }

    /// `x·W + b` with `x: E×Din`, `W: Din×Dout`, `b: Dout`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        self.affine(x, w, Some(b))
    }

    /// `x · w` without a bias.
    pub fn matmul(&mut self, x: Var, w: Var) -> Result<Var> {
        self.affine(x, w, None)
    }

    fn affine(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (xv, wv) = (self.value(x), self.value(w));
        if xv.cols() != wv.rows() || wv.shape().len() != 2 {
            return Err(Error::shape("linear", xv.shape(), wv.shape()));
        }
        let (e, din, dout) = (xv.rows(), xv.cols(), wv.cols());
        let mut out = match b {
            Some(b) => {
                let bv = self.value(b);
                if bv.len() != dout {
                    return Err(Error::shape("linear bias", wv.shape(), bv.shape()));
                }
                let mut out = Vec::with_capacity(e * dout);
                for _ in 0..e {
                    out.extend_from_slice(bv.data());
                }
                out
            }
            None => vec![0.0; e * dout],
        };
        matmul_into(xv.data(), wv.data(), &mut out, e, din, dout);
        let value = Tensor::new(&[e, dout], out)?;
        Ok(self.push(value, Op::Linear { x, w, b }))
    }

    /// Rows `start..start + len` of a matrix.
    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xv = self.value(x);
        if start + len > xv.rows() || xv.shape().len() != 2 {
            return Err(Error::shape("slice_rows", xv.shape(), &[start + len, xv.cols()]));
        }
        let c = xv.cols();
        let value = Tensor::new(&[len, c], xv.data()[start * c..(start + len) * c].to_vec())?;
        Ok(self.push(value, Op::SliceRows { x, start }))
    }

    /// Parametric ReLU with one slope per column.
    pub fn prelu(&mut self, x: Var, slope: Var) -> Result<Var> {
        let (xv, sv) = (self.value(x), self.value(slope));
        if sv.len() != xv.cols() {
            return Err(Error::shape("prelu", xv.shape(), sv.shape()));
        }
        let c = xv.cols();
        let mut out = xv.clone();
        let mut sig = self.kink_signature;
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            if self.track_kinks {
                let class = if *v > 0.0 {
                    1
                } else if *v < 0.0 {
                    2
                } else {
                    3 + i as u64
                };
                sig = mix(sig, class);
            }
            if *v < 0.0 {
                *v *= sv.data()[i % c];
            }
        }
        self.kink_signature = sig;
        Ok(self.push(out, Op::PRelu { x, slope }))
    }

    /// Per-column batch normalization followed by `scale · x̂ + shift`.
    ///
    /// Train mode normalizes with the batch statistics (biased variance) and
    /// folds them into `state` with its momentum (unbiased variance); eval
    /// mode normalizes with the running statistics.
    pub fn batchnorm(
        &mut self,
        x: Var,
        scale: Var,
        shift: Var,
        state: &mut BatchNormState,
        mode: Mode,
    ) -> Result<Var> {
        let xv = self.value(x);
        let (e, c) = (xv.rows(), xv.cols());
        if self.value(scale).len() != c || self.value(shift).len() != c || state.channels() != c {
            return Err(Error::shape("batchnorm", xv.shape(), self.value(scale).shape()));
        }
        let (mean, inv_std) = match mode {
            Mode::Train => {
                if e < 2 {
                    return Err(Error::DegenerateBatch { rows: e });
                }
                let mut mean = vec![0.0; c];
                for r in 0..e {
                    for (m, v) in mean.iter_mut().zip(xv.row(r)) {
                        *m += v;
                    }
                }
                mean.iter_mut().for_each(|m| *m /= e as f64);
                let mut var = vec![0.0; c];
                for r in 0..e {
                    for ((s, v), m) in var.iter_mut().zip(xv.row(r)).zip(&mean) {
                        *s += (v - m) * (v - m);
                    }
                }
                let momentum = state.momentum;
                for ch in 0..c {
                    let biased = var[ch] / e as f64;
                    let unbiased = var[ch] / (e - 1) as f64;
                    let rm = &mut state.running_mean.data_mut()[ch];
                    *rm = (1.0 - momentum) * *rm + momentum * mean[ch];
                    let rv = &mut state.running_var.data_mut()[ch];
                    *rv = (1.0 - momentum) * *rv + momentum * unbiased;
                    var[ch] = biased;
                }
                let inv: Vec<f64> = var.iter().map(|v| 1.0 / (v + state.epsilon).sqrt()).collect();
                (mean, inv)
            }
            Mode::Eval => {
                let mean = state.running_mean.data().to_vec();
                let inv = state
                    .running_var
                    .data()
                    .iter()
                    .map(|v| 1.0 / (v + state.epsilon).sqrt())
                    .collect();
                (mean, inv)
            }
        };
        let xv = self.value(x);
        let mut normalized = xv.clone();
        for r in 0..e {
            for (ch, v) in normalized.row_mut(r).iter_mut().enumerate() {
                *v = (*v - mean[ch]) * inv_std[ch];
            }
        }
        let (sv, hv) = (self.value(scale).data(), self.value(shift).data());
        let mut out = normalized.clone();
        for r in 0..e {
            for (ch, v) in out.row_mut(r).iter_mut().enumerate() {
                *v = sv[ch] * *v + hv[ch];
            }
        }
        Ok(self.push(
            out,
            Op::BatchNorm {
                x,
                scale,
                shift,
                normalized,
                inv_std,
                train: mode == Mode::Train,
            },
        ))
    }

    /// Per-segment, per-column maximum over rows. Ties go to the lowest row.
    ///
    /// Returns the pooled `S×C` node and the winning row for each
    /// `(segment, column)` in row-major order.
    pub fn segment_max(
        &mut self,
        x: Var,
        segment_of_row: &[usize],
        segment_count: usize,
    ) -> Result<(Var, Vec<usize>)> {
        let (out, argmax) = segment_max_values(self.value(x), segment_of_row, segment_count)?;
        if self.track_kinks {
            let mut sig = self.kink_signature;
            for &a in &argmax {
                sig = mix(sig, a as u64);
            }
            self.kink_signature = sig;
        }
        let var = self.push(
            out,
            Op::SegmentMax {
                x,
                argmax: argmax.clone(),
            },
        );
        Ok((var, argmax))
    }

    pub fn sparse(&mut self, x: Var, map: Rc<SparseRows>) -> Result<Var> {
        let xv = self.value(x);
        if xv.rows() != map.input_rows() {
            return Err(Error::shape("sparse", xv.shape(), &[map.input_rows()]));
        }
        let out = map.apply(xv);
        Ok(self.push(out, Op::Sparse { x, map }))
    }

    pub fn gather_rows(&mut self, x: Var, indices: &[usize]) -> Result<Var> {
        let map = SparseRows::gather(self.value(x).rows(), indices);
        self.sparse(x, Rc::new(map))
    }

    /// Column-wise concatenation of matrices with equal row counts.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = self.value(parts[0]).rows();
        for p in parts {
            if self.value(*p).rows() != rows {
                return Err(Error::shape(
                    "concat_cols",
                    self.value(parts[0]).shape(),
                    self.value(*p).shape(),
                ));
            }
        }
        let width: usize = parts.iter().map(|p| self.value(*p).cols()).sum();
        let mut data = Vec::with_capacity(rows * width);
        for r in 0..rows {
            for p in parts {
                data.extend_from_slice(self.value(*p).row(r));
            }
        }
        let value = Tensor::new(&[rows, width], data)?;
        Ok(self.push(
            value,
            Op::Concat {
                parts: parts.to_vec(),
            },
        ))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(Error::shape("add", av.shape(), bv.shape()));
        }
        let mut out = av.clone();
        out.add_assign(bv);
        Ok(self.push(out, Op::Add { a, b }))
    }

    /// Element-wise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(Error::shape("mul", av.shape(), bv.shape()));
        }
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| x * y).collect();
        let out = Tensor::new(av.shape(), data)?;
        Ok(self.push(out, Op::Mul { a, b }))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let out = self.value(x).map(|v| v * factor);
        self.push(out, Op::Scale { x, factor })
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        self.push(Tensor::scalar(s), Op::Sum { x })
    }

    /// `Σ x²`, built from primitives.
    pub fn square_sum(&mut self, x: Var) -> Result<Var> {
        let sq = self.mul(x, x)?;
        Ok(self.sum(sq))
    }

    /// `1 / (‖x_i − x_j‖₂ + ε)` for each listed row pair, as an `E×1` column.
    pub fn inverse_distance(
        &mut self,
        x: Var,
        pairs: Rc<Vec<(usize, usize)>>,
        epsilon: f64,
    ) -> Result<Var> {
        let xv = self.value(x);
        let mut distances = Vec::with_capacity(pairs.len());
        let mut out = Vec::with_capacity(pairs.len());
        for &(i, j) in pairs.iter() {
            if i >= xv.rows() || j >= xv.rows() {
                return Err(Error::Structure(format!(
                    "pair ({i}, {j}) out of range for {} rows",
                    xv.rows()
                )));
            }
            let d = euclidean(xv.row(i), xv.row(j));
            distances.push(d);
            out.push(1.0 / (d + epsilon));
        }
        let value = Tensor::new(&[pairs.len(), 1], out)?;
        Ok(self.push(
            value,
            Op::InverseDistance {
                x,
                pairs,
                distances,
                epsilon,
            },
        ))
    }

    /// Mean over blocks of the masked row-wise softmax cross-entropy, plus the
    /// column-wise term when `symmetric`.
    ///
    /// A row whose target cell is masked contributes the constant
    /// `ln(valid cells in that row)` and no gradient; a row with no valid
    /// cell at all contributes `ln(cols)`.
    pub fn masked_softmax_xent(
        &mut self,
        scores: Var,
        blocks: Rc<Vec<XentBlock>>,
        symmetric: bool,
    ) -> Result<Var> {
        let sv = self.value(scores);
        if blocks.is_empty() {
            return Err(Error::Contract("cross-entropy over zero blocks".into()));
        }
        for b in blocks.iter() {
            if b.offset + b.rows * b.cols > sv.len()
                || b.mask.len() != b.rows * b.cols
                || b.target.len() != b.rows
            {
                return Err(Error::Structure("cross-entropy block out of range".into()));
            }
        }
        let mut total = 0.0;
        for b in blocks.iter() {
            let cells = &sv.data()[b.offset..b.offset + b.rows * b.cols];
            total += xent_terms(cells, b, symmetric, None);
        }
        let loss = total / blocks.len() as f64;
        Ok(self.push(
            Tensor::scalar(loss),
            Op::MaskedXent {
                scores,
                blocks,
                symmetric,
            },
        ))
    }

    /// Back-propagates from the scalar `loss`, filling node gradients and
    /// adding parameter gradients into `store`.
    pub fn backward(&mut self, loss: Var, store: &mut ParamStore) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::ones(self.value(loss).shape()));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads, store);
            grads[i] = Some(g);
        }
        self.grads = grads;
        Ok(())
    }

    fn propagate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>], store: &mut ParamStore) {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => {}
            Op::Param(id) => store.get_mut(*id).grad.add_assign(g),
            Op::Linear { x, w, b } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let (e, din, dout) = (xv.rows(), xv.cols(), wv.cols());
                let mut dx = vec![0.0; e * din];
                matmul_bt_into(g.data(), wv.data(), &mut dx, e, dout, din);
                let mut dw = vec![0.0; din * dout];
                matmul_at_into(xv.data(), g.data(), &mut dw, e, din, dout);
                accumulate(grads, *x, Tensor::new(xv.shape(), dx).unwrap());
                accumulate(grads, *w, Tensor::new(wv.shape(), dw).unwrap());
                if let Some(b) = b {
                    let mut db = vec![0.0; dout];
                    for r in 0..e {
                        for (d, v) in db.iter_mut().zip(g.row(r)) {
                            *d += v;
                        }
                    }
                    accumulate(grads, *b, Tensor::new(self.value(*b).shape(), db).unwrap());
                }
            }
            Op::SliceRows { x, start } => {
                let xv = self.value(*x);
                let c = xv.cols();
                let mut dx = Tensor::zeros(xv.shape());
                dx.data_mut()[start * c..start * c + g.len()].copy_from_slice(g.data());
                accumulate(grads, *x, dx);
            }
            Op::PRelu { x, slope } => {
                let (xv, sv) = (self.value(*x), self.value(*slope));
                let c = xv.cols();
                let mut dx = g.clone();
                let mut ds = vec![0.0; c];
                for (idx, (d, &xval)) in dx.data_mut().iter_mut().zip(xv.data()).enumerate() {
                    if xval < 0.0 {
                        ds[idx % c] += *d * xval;
                        *d *= sv.data()[idx % c];
                    }
                }
                accumulate(grads, *x, dx);
                accumulate(grads, *slope, Tensor::new(sv.shape(), ds).unwrap());
            }
            Op::BatchNorm {
                x,
                scale,
                shift,
                normalized,
                inv_std,
                train,
            } => {
                let (e, c) = (normalized.rows(), normalized.cols());
                let sv = self.value(*scale);
                let mut dscale = vec![0.0; c];
                let mut dshift = vec![0.0; c];
                for r in 0..e {
                    for ch in 0..c {
                        let gv = g.get(r, ch);
                        dscale[ch] += gv * normalized.get(r, ch);
                        dshift[ch] += gv;
                    }
                }
                let mut dx = Tensor::zeros(normalized.shape());
                for r in 0..e {
                    for ch in 0..c {
                        let k = sv.data()[ch] * inv_std[ch];
                        let v = if *train {
                            let en = e as f64;
                            k / en * (en * g.get(r, ch) - dshift[ch] - normalized.get(r, ch) * dscale[ch])
                        } else {
                            k * g.get(r, ch)
                        };
                        dx.set(r, ch, v);
                    }
                }
                accumulate(grads, *x, dx);
                accumulate(grads, *scale, Tensor::new(sv.shape(), dscale).unwrap());
                accumulate(grads, *shift, Tensor::new(self.value(*shift).shape(), dshift).unwrap());
            }
            Op::SegmentMax { x, argmax } => {
                let xv = self.value(*x);
                let c = xv.cols();
                let mut dx = Tensor::zeros(xv.shape());
                for (k, &row) in argmax.iter().enumerate() {
                    let ch = k % c;
                    dx.data_mut()[row * c + ch] += g.data()[k];
                }
                accumulate(grads, *x, dx);
            }
            Op::Sparse { x, map } => {
                let xv = self.value(*x);
                let c = xv.cols();
                let mut dx = Tensor::zeros(xv.shape());
                for r in 0..map.output_rows() {
                    let gr = g.row(r);
                    for &(j, w) in map.row(r) {
                        let dst = &mut dx.data_mut()[j * c..(j + 1) * c];
                        for (d, v) in dst.iter_mut().zip(gr) {
                            *d += w * v;
                        }
                    }
                }
                accumulate(grads, *x, dx);
            }
            Op::Concat { parts } => {
                let rows = g.rows();
                let mut start = 0;
                for p in parts {
                    let shape = self.value(*p).shape().to_vec();
                    let w = self.value(*p).cols();
                    let mut d = Vec::with_capacity(rows * w);
                    for r in 0..rows {
                        d.extend_from_slice(&g.row(r)[start..start + w]);
                    }
                    accumulate(grads, *p, Tensor::new(&shape, d).unwrap());
                    start += w;
                }
            }
            Op::Add { a, b } => {
                accumulate(grads, *a, g.clone());
                accumulate(grads, *b, g.clone());
            }
            Op::Mul { a, b } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let da = g.data().iter().zip(bv.data()).map(|(x, y)| x * y).collect();
                let db = g.data().iter().zip(av.data()).map(|(x, y)| x * y).collect();
                accumulate(grads, *a, Tensor::new(av.shape(), da).unwrap());
                accumulate(grads, *b, Tensor::new(bv.shape(), db).unwrap());
            }
            Op::Scale { x, factor } => accumulate(grads, *x, g.map(|v| v * factor)),
            Op::Sum { x } => {
                let shape = self.value(*x).shape();
                accumulate(grads, *x, Tensor::filled(shape, g.data()[0]));
            }
            Op::InverseDistance {
                x,
                pairs,
                distances,
                epsilon,
            } => {
                let xv = self.value(*x);
                let c = xv.cols();
                let mut dx = Tensor::zeros(xv.shape());
                for (k, &(i, j)) in pairs.iter().enumerate() {
                    let d = distances[k];
                    if d == 0.0 {
                        // Coincident rows: the distance has no gradient there.
                        continue;
                    }
                    let s = 1.0 / (d + epsilon);
                    let coef = -g.data()[k] * s * s / d;
                    for ch in 0..c {
                        let diff = xv.get(i, ch) - xv.get(j, ch);
                        dx.data_mut()[i * c + ch] += coef * diff;
                        dx.data_mut()[j * c + ch] -= coef * diff;
                    }
                }
                accumulate(grads, *x, dx);
            }
            Op::MaskedXent {
                scores,
                blocks,
                symmetric,
            } => {
                let sv = self.value(*scores);
                let mut ds = Tensor::zeros(sv.shape());
                let scale = g.data()[0] / blocks.len() as f64;
                for b in blocks.iter() {
                    let cells = &sv.data()[b.offset..b.offset + b.rows * b.cols];
                    let mut local = vec![0.0; cells.len()];
                    xent_terms(cells, b, *symmetric, Some(&mut local));
                    for (d, l) in ds.data_mut()[b.offset..].iter_mut().zip(&local) {
                        *d += scale * l;
                    }
                }
                accumulate(grads, *scores, ds);
            }
        }
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

pub(crate) fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Plain segment max, shared by the tape op and non-differentiable callers.
pub fn segment_max_values(
    x: &Tensor,
    segment_of_row: &[usize],
    segment_count: usize,
) -> Result<(Tensor, Vec<usize>)> {
    let (e, c) = (x.rows(), x.cols());
    if segment_of_row.len() != e {
        return Err(Error::shape("segment_max", x.shape(), &[segment_of_row.len()]));
    }
    let mut argmax = vec![usize::MAX; segment_count * c];
    for (r, &s) in segment_of_row.iter().enumerate() {
        if s >= segment_count {
            return Err(Error::Structure(format!(
                "segment id {s} out of range (segment count {segment_count})"
            )));
        }
        let row = x.row(r);
        for ch in 0..c {
            let slot = &mut argmax[s * c + ch];
            if *slot == usize::MAX || row[ch] > x.get(*slot, ch) {
                *slot = r;
            }
        }
    }
    if let Some(k) = argmax.iter().position(|&a| a == usize::MAX) {
        return Err(Error::Structure(format!("segment {} is empty", k / c.max(1))));
    }
    let mut out = Tensor::zeros(&[segment_count, c]);
    for (k, &r) in argmax.iter().enumerate() {
        out.data_mut()[k] = x.get(r, k % c);
    }
    Ok((out, argmax))
}

/// Loss contribution of one block (row term plus optional column term, each
/// averaged over its own axis). When `grad` is given, writes the derivative
/// with respect to each cell.
fn xent_terms(cells: &[f64], b: &XentBlock, symmetric: bool, mut grad: Option<&mut Vec<f64>>) -> f64 {
    let (rows, cols) = (b.rows, b.cols);
    let mut loss = 0.0;

    // Row term.
    for r in 0..rows {
        let idx: Vec<usize> = (0..cols).map(|c| r * cols + c).filter(|&k| b.mask[k]).collect();
        let t = r * cols + b.target[r];
        loss += softmax_xent_line(cells, &idx, t, cols, rows, grad.as_deref_mut());
    }
    if symmetric {
        let mut inverse = vec![usize::MAX; cols];
        for (r, &c) in b.target.iter().enumerate() {
            if c < cols {
                inverse[c] = r;
            }
        }
        for c in 0..cols {
            let idx: Vec<usize> = (0..rows).map(|r| r * cols + c).filter(|&k| b.mask[k]).collect();
            if inverse[c] == usize::MAX {
                // Column without a ground-truth partner (rows < cols).
                continue;
            }
            let t = inverse[c] * cols + c;
            loss += softmax_xent_line(cells, &idx, t, rows, cols, grad.as_deref_mut());
        }
    }
    loss
}

/// `−log softmax(cells[idx])[target] / norm` for one line of the matrix.
fn softmax_xent_line(
    cells: &[f64],
    idx: &[usize],
    target: usize,
    line_len: usize,
    norm: usize,
    grad: Option<&mut Vec<f64>>,
) -> f64 {
    let norm = norm as f64;
    if idx.is_empty() {
        return (line_len as f64).ln() / norm;
    }
    if !idx.contains(&target) {
        return (idx.len() as f64).ln() / norm;
    }
    let max = idx.iter().map(|&k| cells[k]).fold(f64::NEG_INFINITY, f64::max);
    let denom: f64 = idx.iter().map(|&k| (cells[k] - max).exp()).sum();
    let lse = max + denom.ln();
    if let Some(grad) = grad {
        for &k in idx {
            let p = (cells[k] - lse).exp();
            grad[k] += p / norm;
        }
        grad[target] -= 1.0 / norm;
    }
    (lse - cells[target]) / norm
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_parameter_has_unit_gradient() {
        let mut store = ParamStore::new();
        let id = store.add("p", Tensor::from_rows(&[vec![1.0, -2.0], vec![0.5, 3.0]]));
        let mut tape = Tape::new();
        let p = tape.param(&store, id);
        let s = tape.sum(p);
        tape.backward(s, &mut store).unwrap();
        assert!(store.get(id).grad.data().iter().all(|&g| g == 1.0));
    }

    #[test]
    fn zero_times_anything_gives_zero_gradients() {
        let mut store = ParamStore::new();
        let a = store.add("a", Tensor::from_rows(&[vec![1.0, 2.0]]));
        let w = store.add("w", Tensor::from_rows(&[vec![1.0], vec![4.0]]));
        let b = store.add("b", Tensor::zeros(&[1]));
        let mut tape = Tape::new();
        let (av, wv, bv) = (tape.param(&store, a), tape.param(&store, w), tape.param(&store, b));
        let y = tape.linear(av, wv, bv).unwrap();
        let y = tape.scale(y, 0.0);
        let loss = tape.sum(y);
        tape.backward(loss, &mut store).unwrap();
        assert!(store.iter().all(|p| p.grad.data().iter().all(|&g| g == 0.0)));
    }

    #[test]
    fn unreachable_parameter_keeps_zero_grad() {
        let mut store = ParamStore::new();
        let used = store.add("used", Tensor::ones(&[2]));
        let unused = store.add("unused", Tensor::ones(&[2]));
        let mut tape = Tape::new();
        let u = tape.param(&store, used);
        let _ = tape.param(&store, unused);
        let s = tape.sum(u);
        tape.backward(s, &mut store).unwrap();
        assert_eq!(store.get(unused).grad.data(), &[0.0, 0.0]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut store = ParamStore::new();
        let mut tape = Tape::new();
        let x = tape.input(Tensor::ones(&[2, 2]));
        assert!(matches!(tape.backward(x, &mut store), Err(Error::Contract(_))));
    }

    #[test]
    fn sparse_gather_and_mean() {
        let x = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]);
        let mut map = SparseRows::new(3);
        map.push_row([(2, 1.0)]);
        map.push_row([(0, 0.5), (1, 0.5)]);
        map.push_row([]);
        let y = map.apply(&x);
        assert_eq!(y.data(), &[5.0, 6.0, 2.0, 3.0, 0.0, 0.0]);
    }

    #[test]
    fn uniform_scores_cost_log_k_per_row() {
        let k = 4usize;
        let (rows, cols) = (3, 6);
        let mut mask = vec![false; rows * cols];
        for r in 0..rows {
            for c in r..r + k {
                mask[r * cols + c] = true;
            }
        }
        let block = XentBlock {
            offset: 0,
            rows,
            cols,
            mask,
            target: vec![1, 2, 3],
        };
        let mut store = ParamStore::new();
        let mut tape = Tape::new();
        let s = tape.input(Tensor::filled(&[rows * cols, 1], 0.7));
        let loss = tape.masked_softmax_xent(s, Rc::new(vec![block]), false).unwrap();
        assert!((tape.value(loss).data()[0] - (k as f64).ln()).abs() < 1e-12);
        tape.backward(loss, &mut store).unwrap();
    }
}
