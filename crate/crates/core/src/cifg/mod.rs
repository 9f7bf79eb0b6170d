//! Coupled input-forget gate (CIFG) recurrent language model.
//!
//! One layer, no peepholes. The forget gate is tied to the input gate
//! (`f = 1 - i`), so each cell carries three gates: input `i`, candidate
//! `c~` and output `o`. The hidden state `h` (H units) is projected down to
//! `r = P h` (D dims). That projected state feeds both the recurrence and the
//! output layer, and the output layer reuses the embedding matrix:
//! `logits = W^T r`.
//!
//! Parameter count: `V*D + 3*(2*H*D + H) + D*H`. Gates read the D-dim
//! projected state, so each gate has two `H x D` matrices and a bias; a
//! recurrence over the full H-dim state would need `3*H*H` more weights.
//! With `V = 10000, D = 96, H = 670` this gives 1,412,250 parameters, of
//! which the 960,000 embedding entries are more than two thirds.

mod checkpoint;
mod quant;

pub use checkpoint::{
    checkpoint_bytes, checkpoint_from_bytes, load_checkpoint, load_model, save_checkpoint,
    CHECKPOINT_MAGIC, FORMAT_VERSION,
};
pub use quant::{
    dequantize, load_quantized, quantize, quantize_tensor, quantized_from_bytes, save_quantized, QuantizedModel,
    QuantizedTensor, QUANTIZED_MAGIC,
};

use crate::corpus::{TokenId, TokenSeq, BOS, NUM_SPECIALS};
use crate::error::{Error, Result};
use crate::eval::{top_k_candidates, NextWordPredictor};
use crate::nn::{derive_seed, init_uniform, sigmoid, Matrix, Real};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CifgConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub hidden: usize,
}

impl CifgConfig {
    /// The deployed keyboard model: 10k words, 96-dim embedding, 670 units.
    pub const PAPER: CifgConfig = CifgConfig {
        vocab_size: 10_000,
        embed_dim: 96,
        hidden: 670,
    };

    pub fn new(vocab_size: usize, embed_dim: usize, hidden: usize) -> Result<Self> {
        let c = Self {
            vocab_size,
            embed_dim,
            hidden,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab_size < NUM_SPECIALS + 1 || self.embed_dim == 0 || self.hidden == 0 {
            return Err(Error::invalid(format!("invalid model config {self:?}")));
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        param_count(self)
    }

    /// Shapes of the parameter tensors in checkpoint order.
    pub fn tensor_shapes(&self) -> [(usize, usize); 11] {
        let (v, d, h) = (self.vocab_size, self.embed_dim, self.hidden);
        [
            (d, v),
            (h, d),
            (h, d),
            (h, 1),
            (h, d),
            (h, d),
            (h, 1),
            (h, d),
            (h, d),
            (h, 1),
            (d, h),
        ]
    }
}

pub fn param_count(config: &CifgConfig) -> usize {
    let (v, d, h) = (config.vocab_size, config.embed_dim, config.hidden);
    v * d + 3 * (2 * h * d + h) + d * h
}

/// Weights of one gate: `act(input * x + recurrent * r_prev + bias)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Gate<T> {
    pub input: Matrix<T>,
    pub recurrent: Matrix<T>,
    pub bias: Matrix<T>,
}

impl<T: Real> Gate<T> {
    fn zeros(h: usize, d: usize) -> Self {
        Self {
            input: Matrix::zeros(h, d),
            recurrent: Matrix::zeros(h, d),
            bias: Matrix::zeros(h, 1),
        }
    }

    fn init(h: usize, d: usize, seed: u64, gate: u64) -> Self {
        Self {
            input: init_uniform(h, d, derive_seed(seed, "init-gate-input", gate)),
            recurrent: init_uniform(h, d, derive_seed(seed, "init-gate-recurrent", gate)),
            bias: init_uniform(h, 1, derive_seed(seed, "init-gate-bias", gate)),
        }
    }

    #[inline]
    fn preactivation(&self, x: &[T], r_prev: &[T], out: &mut [T]) {
        out.copy_from_slice(self.bias.as_slice());
        self.input.matvec_acc(x, out);
        self.recurrent.matvec_acc(r_prev, out);
    }
}

/// All trainable parameters. Also used as the gradient container.
#[derive(Clone, Debug, PartialEq)]
pub struct CifgModel<T> {
    config: CifgConfig,
    /// Tied `D x V` matrix: column `v` embeds word `v`, and `W^T r` gives
    /// the output logits.
    pub embedding: Matrix<T>,
    pub input_gate: Gate<T>,
    pub candidate: Gate<T>,
    pub output_gate: Gate<T>,
    /// `D x H` projection of the hidden state, no bias.
    pub projection: Matrix<T>,
}

pub type Gradients<T> = CifgModel<T>;

/// State after one cell step. Gate activations are kept for inspection.
#[derive(Clone, Debug, PartialEq)]
pub struct CellState<T> {
    pub c: Vec<T>,
    pub r: Vec<T>,
    pub i: Vec<T>,
    pub f: Vec<T>,
    pub o: Vec<T>,
}

impl<T: Real> CellState<T> {
    pub fn zeros(config: &CifgConfig) -> Self {
        let h = config.hidden;
        Self {
            c: vec![T::zero(); h],
            r: vec![T::zero(); config.embed_dim],
            i: vec![T::zero(); h],
            f: vec![T::zero(); h],
            o: vec![T::zero(); h],
        }
    }
}

/// Per-timestep values kept for backpropagation.
struct StepTrace<T> {
    token: usize,
    x: Vec<T>,
    i: Vec<T>,
    g: Vec<T>,
    o: Vec<T>,
    c: Vec<T>,
    tanh_c: Vec<T>,
    h: Vec<T>,
    r: Vec<T>,
}

impl<T: Real> CifgModel<T> {
    pub fn zeros(config: CifgConfig) -> Self {
        let (v, d, h) = (config.vocab_size, config.embed_dim, config.hidden);
        Self {
            config,
            embedding: Matrix::zeros(d, v),
            input_gate: Gate::zeros(h, d),
            candidate: Gate::zeros(h, d),
            output_gate: Gate::zeros(h, d),
            projection: Matrix::zeros(d, h),
        }
    }

    /// Glorot-uniform initialization of every tensor, seeded per tensor.
    pub fn init(config: CifgConfig, seed: u64) -> Self {
        let (v, d, h) = (config.vocab_size, config.embed_dim, config.hidden);
        Self {
            config,
            embedding: init_uniform(d, v, derive_seed(seed, "init-embedding", 0)),
            input_gate: Gate::init(h, d, seed, 0),
            candidate: Gate::init(h, d, seed, 1),
            output_gate: Gate::init(h, d, seed, 2),
            projection: init_uniform(d, h, derive_seed(seed, "init-projection", 0)),
        }
    }

    pub fn config(&self) -> &CifgConfig {
        &self.config
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// Tensors in checkpoint order: W, Wi, Ui, bi, Wc, Uc, bc, Wo, Uo, bo, P.
    pub fn tensors(&self) -> [&Matrix<T>; 11] {
        [
            &self.embedding,
            &self.input_gate.input,
            &self.input_gate.recurrent,
            &self.input_gate.bias,
            &self.candidate.input,
            &self.candidate.recurrent,
            &self.candidate.bias,
            &self.output_gate.input,
            &self.output_gate.recurrent,
            &self.output_gate.bias,
            &self.projection,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Matrix<T>; 11] {
        [
            &mut self.embedding,
            &mut self.input_gate.input,
            &mut self.input_gate.recurrent,
            &mut self.input_gate.bias,
            &mut self.candidate.input,
            &mut self.candidate.recurrent,
            &mut self.candidate.bias,
            &mut self.output_gate.input,
            &mut self.output_gate.recurrent,
            &mut self.output_gate.bias,
            &mut self.projection,
        ]
    }

    pub fn tensor_names() -> [&'static str; 11] {
        ["W", "Wi", "Ui", "bi", "Wc", "Uc", "bc", "Wo", "Uo", "bo", "P"]
    }

    pub fn from_tensors(config: CifgConfig, tensors: Vec<Matrix<T>>) -> Result<Self> {
        let shapes = config.tensor_shapes();
        if tensors.len() != shapes.len() {
            return Err(Error::ShapeMismatch {
                expected: shapes.len(),
                actual: tensors.len(),
            });
        }
        for (t, &(r, c)) in tensors.iter().zip(&shapes) {
            if t.rows() != r || t.cols() != c {
                return Err(Error::ShapeMismatch {
                    expected: r * c,
                    actual: t.len(),
                });
            }
        }
        let mut model = Self::zeros(config);
        for (dst, src) in model.tensors_mut().into_iter().zip(tensors) {
            *dst = src;
        }
        Ok(model)
    }

    /// Concatenation of all tensors in checkpoint order.
    pub fn to_flat(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.num_params());
        for t in self.tensors() {
            out.extend_from_slice(t.as_slice());
        }
        out
    }

    pub fn from_flat(config: CifgConfig, flat: &[T]) -> Result<Self> {
        let mut model = Self::zeros(config);
        model.assign_flat(flat)?;
        Ok(model)
    }

    pub fn assign_flat(&mut self, flat: &[T]) -> Result<()> {
        let n = self.num_params();
        if flat.len() != n {
            return Err(Error::ShapeMismatch {
                expected: n,
                actual: flat.len(),
            });
        }
        let mut offset = 0;
        for t in self.tensors_mut() {
            let len = t.len();
            t.as_mut_slice().copy_from_slice(&flat[offset..offset + len]);
            offset += len;
        }
        Ok(())
    }

    /// `self -= lr * grads`, elementwise as in [`crate::nn::sgd_step`].
    pub fn apply_sgd(&mut self, grads: &Gradients<T>, lr: f64) {
        let lr = T::from_f64(lr);
        for (p, g) in self.tensors_mut().into_iter().zip(grads.tensors()) {
            for (pv, &gv) in p.as_mut_slice().iter_mut().zip(g.as_slice()) {
                *pv -= lr * gv;
            }
        }
    }

    /// Treats all tensors as one vector and rescales it to at most
    /// `max_norm`. Returns the norm before clipping.
    pub fn clip_global_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self
            .tensors()
            .iter()
            .flat_map(|t| t.as_slice())
            .map(|g| g.as_f64() * g.as_f64())
            .sum::<f64>()
            .sqrt();
        if norm > max_norm && norm > 0.0 {
            let scale = T::from_f64(max_norm / norm);
            for t in self.tensors_mut() {
                t.as_mut_slice().iter_mut().for_each(|g| *g *= scale);
            }
        }
        norm
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.is_finite())
    }

    pub fn cast<U: Real>(&self) -> CifgModel<U> {
        CifgModel {
            config: self.config,
            embedding: self.embedding.cast(),
            input_gate: Gate {
                input: self.input_gate.input.cast(),
                recurrent: self.input_gate.recurrent.cast(),
                bias: self.input_gate.bias.cast(),
            },
            candidate: Gate {
                input: self.candidate.input.cast(),
                recurrent: self.candidate.recurrent.cast(),
                bias: self.candidate.bias.cast(),
            },
            output_gate: Gate {
                input: self.output_gate.input.cast(),
                recurrent: self.output_gate.recurrent.cast(),
                bias: self.output_gate.bias.cast(),
            },
            projection: self.projection.cast(),
        }
    }

    /// Embedding of `token`: column `token` of `W`.
    pub fn embed(&self, token: TokenId) -> Result<Vec<T>> {
        self.check_token(token)?;
        let mut x = vec![T::zero(); self.config.embed_dim];
        self.embedding.column_into(token as usize, &mut x);
        Ok(x)
    }

    fn check_token(&self, id: TokenId) -> Result<()> {
        if id as usize >= self.config.vocab_size {
            return Err(Error::TokenOutOfRange {
                id,
                vocab_size: self.config.vocab_size,
            });
        }
        Ok(())
    }

    /// One CIFG step on an embedded input.
    pub fn cell_step(&self, x: &[T], prev: &CellState<T>) -> Result<CellState<T>> {
        let (d, h) = (self.config.embed_dim, self.config.hidden);
        if x.len() != d || prev.r.len() != d || prev.c.len() != h {
            return Err(Error::ShapeMismatch {
                expected: d,
                actual: x.len(),
            });
        }
        if !x.iter().chain(&prev.r).chain(&prev.c).all(|v| v.is_finite()) {
            return Err(Error::NumericOverflow("non-finite cell input".into()));
        }
        let mut i = vec![T::zero(); h];
        let mut g = vec![T::zero(); h];
        let mut o = vec![T::zero(); h];
        let mut c = vec![T::zero(); h];
        let mut hid = vec![T::zero(); h];
        self.gates(x, &prev.r, &prev.c, &mut i, &mut g, &mut o, &mut c, &mut hid, None);
        let f = i.iter().map(|&iv| T::one() - iv).collect();
        let mut r = vec![T::zero(); d];
        self.projection.matvec_acc(&hid, &mut r);
        if !c.iter().chain(&r).all(|v| v.is_finite()) {
            return Err(Error::NumericOverflow("non-finite cell state".into()));
        }
        Ok(CellState { c, r, i, f, o })
    }

    /// Gate arithmetic shared by inference and training. Fills the gate
    /// activations, the new cell state and the hidden output.
    #[allow(clippy::too_many_arguments)]
    #[inline]
    fn gates(
        &self,
        x: &[T],
        r_prev: &[T],
        c_prev: &[T],
        i: &mut [T],
        g: &mut [T],
        o: &mut [T],
        c: &mut [T],
        h: &mut [T],
        mut tanh_c: Option<&mut [T]>,
    ) {
        self.input_gate.preactivation(x, r_prev, i);
        self.candidate.preactivation(x, r_prev, g);
        self.output_gate.preactivation(x, r_prev, o);
        for j in 0..i.len() {
            let iv = sigmoid(i[j]);
            let gv = g[j].tanh();
            let ov = sigmoid(o[j]);
            let cv = (T::one() - iv) * c_prev[j] + iv * gv;
            let tc = cv.tanh();
            i[j] = iv;
            g[j] = gv;
            o[j] = ov;
            c[j] = cv;
            h[j] = ov * tc;
            if let Some(t) = tanh_c.as_deref_mut() {
                t[j] = tc;
            }
        }
    }

    /// Runs the cell over `ids`, returning the state after each token.
    pub fn states(&self, ids: &[TokenId]) -> Result<Vec<CellState<T>>> {
        let mut state = CellState::zeros(&self.config);
        let mut out = Vec::with_capacity(ids.len());
        for &id in ids {
            let x = self.embed(id)?;
            state = self.cell_step(&x, &state)?;
            out.push(state.clone());
        }
        Ok(out)
    }

    /// Logits `W^T r` after each token except the last: row `t` predicts
    /// token `t + 1`.
    pub fn forward(&self, seq: &TokenSeq) -> Result<Vec<Vec<T>>> {
        let ids = seq.ids();
        if ids.len() < 2 {
            return Err(Error::invalid("forward needs at least two tokens"));
        }
        self.context_logits(&ids[..ids.len() - 1])
    }

    /// Logits after each token of `ids`.
    pub fn context_logits(&self, ids: &[TokenId]) -> Result<Vec<Vec<T>>> {
        let (d, h, v) = (
            self.config.embed_dim,
            self.config.hidden,
            self.config.vocab_size,
        );
        let mut r = vec![T::zero(); d];
        let mut c_prev = vec![T::zero(); h];
        let mut x = vec![T::zero(); d];
        let (mut i, mut g, mut o, mut c, mut hid) = (
            vec![T::zero(); h],
            vec![T::zero(); h],
            vec![T::zero(); h],
            vec![T::zero(); h],
            vec![T::zero(); h],
        );
        let mut out = Vec::with_capacity(ids.len());
        for &id in ids {
            self.check_token(id)?;
            self.embedding.column_into(id as usize, &mut x);
            self.gates(&x, &r, &c_prev, &mut i, &mut g, &mut o, &mut c, &mut hid, None);
            r.iter_mut().for_each(|v| *v = T::zero());
            self.projection.matvec_acc(&hid, &mut r);
            std::mem::swap(&mut c, &mut c_prev);
            let mut logits = vec![T::zero(); v];
            self.embedding.matvec_t_acc(&r, &mut logits);
            if !logits.iter().all(|z| z.is_finite()) {
                return Err(Error::NumericOverflow("non-finite logits".into()));
            }
            out.push(logits);
        }
        Ok(out)
    }

    /// Mean cross-entropy over all prediction positions in `batch`.
    pub fn mean_loss(&self, batch: &[TokenSeq]) -> Result<f64> {
        let mut total = 0.0;
        let mut count = 0usize;
        for seq in batch {
            let logits = self.forward(seq)?;
            for (z, &target) in logits.iter().zip(&seq.ids()[1..]) {
                total += cross_entropy(z, target as usize);
                count += 1;
            }
        }
        if count == 0 {
            return Err(Error::invalid("empty batch"));
        }
        Ok(total / count as f64)
    }

    /// Mean cross-entropy over every prediction position of the batch and its
    /// gradient, by full backpropagation through time.
    pub fn loss_and_grads(&self, batch: &[TokenSeq]) -> Result<(f64, Gradients<T>)> {
        let positions: usize = batch.iter().map(TokenSeq::num_predictions).sum();
        if batch.is_empty() || positions == 0 {
            return Err(Error::invalid("empty batch"));
        }
        let scale = T::from_f64(1.0 / positions as f64);
        let mut grads = Gradients::zeros(self.config);
        let mut total = 0.0;
        for seq in batch {
            total += self.accumulate_sequence(seq.ids(), scale, &mut grads)?;
        }
        let loss = total / positions as f64;
        if !loss.is_finite() {
            return Err(Error::NumericOverflow(format!("loss is {loss}")));
        }
        Ok((loss, grads))
    }

    /// Forward and backward over one sentence. Adds `scale`-weighted
    /// gradients into `grads` and returns the summed (unscaled) loss.
    fn accumulate_sequence(&self, ids: &[TokenId], scale: T, grads: &mut Gradients<T>) -> Result<f64> {
        let (d, h, v) = (
            self.config.embed_dim,
            self.config.hidden,
            self.config.vocab_size,
        );
        let steps_len = ids.len() - 1;
        let mut steps: Vec<StepTrace<T>> = Vec::with_capacity(steps_len);
        let mut dlogits: Vec<Vec<T>> = Vec::with_capacity(steps_len);
        let mut loss = 0.0;
        let zeros_d = vec![T::zero(); d];
        let zeros_h = vec![T::zero(); h];
        let mut logits = vec![T::zero(); v];

        for t in 0..steps_len {
            let (token, target) = (ids[t], ids[t + 1]);
            self.check_token(token)?;
            self.check_token(target)?;
            let (r_prev, c_prev) = match steps.last() {
                Some(s) => (&s.r, &s.c),
                None => (&zeros_d, &zeros_h),
            };
            let mut st = StepTrace {
                token: token as usize,
                x: vec![T::zero(); d],
                i: vec![T::zero(); h],
                g: vec![T::zero(); h],
                o: vec![T::zero(); h],
                c: vec![T::zero(); h],
                tanh_c: vec![T::zero(); h],
                h: vec![T::zero(); h],
                r: vec![T::zero(); d],
            };
            self.embedding.column_into(st.token, &mut st.x);
            self.gates(
                &st.x,
                r_prev,
                c_prev,
                &mut st.i,
                &mut st.g,
                &mut st.o,
                &mut st.c,
                &mut st.h,
                Some(&mut st.tanh_c),
            );
            self.projection.matvec_acc(&st.h, &mut st.r);

            logits.iter_mut().for_each(|z| *z = T::zero());
            self.embedding.matvec_t_acc(&st.r, &mut logits);
            let max = logits.iter().fold(T::neg_infinity(), |m, &z| m.max(z));
            let mut sum = T::zero();
            let mut dz = vec![T::zero(); v];
            for (p, &z) in dz.iter_mut().zip(&logits) {
                *p = (z - max).exp();
                sum += *p;
            }
            let target = target as usize;
            loss += (max + sum.ln() - logits[target]).as_f64();
            let norm = scale / sum;
            for p in dz.iter_mut() {
                *p *= norm;
            }
            dz[target] -= scale;
            steps.push(st);
            dlogits.push(dz);
        }
        if !loss.is_finite() {
            return Err(Error::NumericOverflow(format!("sequence loss is {loss}")));
        }

        let mut dr_next = vec![T::zero(); d];
        let mut dc_next = vec![T::zero(); h];
        let mut dh = vec![T::zero(); h];
        let mut da_i = vec![T::zero(); h];
        let mut da_g = vec![T::zero(); h];
        let mut da_o = vec![T::zero(); h];
        let mut de = vec![T::zero(); d];
        for t in (0..steps_len).rev() {
            let st = &steps[t];
            let dz = &dlogits[t];
            let (r_prev, c_prev) = if t > 0 {
                (&steps[t - 1].r, &steps[t - 1].c)
            } else {
                (&zeros_d, &zeros_h)
            };

            // output path through the tied matrix
            grads.embedding.add_outer(&st.r, dz);
            let mut dr = std::mem::replace(&mut dr_next, vec![T::zero(); d]);
            self.embedding.matvec_acc(dz, &mut dr);

            grads.projection.add_outer(&dr, &st.h);
            dh.iter_mut().for_each(|v| *v = T::zero());
            self.projection.matvec_t_acc(&dr, &mut dh);

            for j in 0..h {
                let (iv, gv, ov, tc) = (st.i[j], st.g[j], st.o[j], st.tanh_c[j]);
                let one = T::one();
                let d_o = dh[j] * tc;
                let dc = dh[j] * ov * (one - tc * tc) + dc_next[j];
                da_o[j] = d_o * ov * (one - ov);
                da_i[j] = dc * (gv - c_prev[j]) * iv * (one - iv);
                da_g[j] = dc * iv * (one - gv * gv);
                dc_next[j] = dc * (one - iv);
            }

            de.iter_mut().for_each(|v| *v = T::zero());
            for (gate, ggrad, da) in [
                (&self.input_gate, &mut grads.input_gate, &da_i),
                (&self.candidate, &mut grads.candidate, &da_g),
                (&self.output_gate, &mut grads.output_gate, &da_o),
            ] {
                ggrad.input.add_outer(da, &st.x);
                if t > 0 {
                    ggrad.recurrent.add_outer(da, r_prev);
                    gate.recurrent.matvec_t_acc(da, &mut dr_next);
                }
                for (b, &a) in ggrad.bias.as_mut_slice().iter_mut().zip(da.iter()) {
                    *b += a;
                }
                gate.input.matvec_t_acc(da, &mut de);
            }
            // input path through the tied matrix
            grads.embedding.add_to_column(st.token, &de);
        }
        Ok(loss)
    }

    /// Next-word candidates after `context`, specials masked, ties broken
    /// by lower id.
    pub fn predict_topk(&self, context: &[TokenId], k: usize) -> Result<Vec<(TokenId, f64)>> {
        if context.is_empty() {
            return Err(Error::invalid("context must not be empty"));
        }
        if context[0] != BOS {
            return Err(Error::invalid("context must begin with BOS"));
        }
        self.check_k(k)?;
        let logits = self.context_logits(context)?;
        Ok(top_k_from_logits(logits.last().unwrap(), k))
    }

    fn check_k(&self, k: usize) -> Result<()> {
        if k == 0 || k > self.config.vocab_size - NUM_SPECIALS {
            return Err(Error::invalid(format!(
                "k must lie in [1, {}], got {k}",
                self.config.vocab_size - NUM_SPECIALS
            )));
        }
        Ok(())
    }
}

/// `-log softmax(z)[target]`
pub fn cross_entropy<T: Real>(z: &[T], target: usize) -> f64 {
    let max = z.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v.as_f64()));
    let sum: f64 = z.iter().map(|&v| (v.as_f64() - max).exp()).sum();
    max + sum.ln() - z[target].as_f64()
}

fn top_k_from_logits<T: Real>(logits: &[T], k: usize) -> Vec<(TokenId, f64)> {
    let max = logits.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v.as_f64()));
    let sum: f64 = logits.iter().map(|&v| (v.as_f64() - max).exp()).sum();
    // ranking on logits directly keeps ties exact
    let top = top_k_candidates(
        logits.iter().enumerate().map(|(id, &z)| (id as TokenId, z.as_f64())),
        k,
    );
    top.into_iter()
        .map(|(id, z)| (id, (z - max).exp() / sum))
        .collect()
}

impl<T: Real> NextWordPredictor for CifgModel<T> {
    fn predict_topk(&self, context: &[TokenId], k: usize) -> Result<Vec<(TokenId, f64)>> {
        CifgModel::predict_topk(self, context, k)
    }

    fn predict_positions(&self, seq: &TokenSeq, k: usize) -> Result<Vec<Vec<(TokenId, f64)>>> {
        self.check_k(k)?;
        Ok(self
            .forward(seq)?
            .iter()
            .map(|z| top_k_from_logits(z, k))
            .collect())
    }
}
