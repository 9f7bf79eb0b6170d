//! Dense numerical kernel shared by the model and the training loops.
//!
//! Everything here is generic over [`Real`] so the same code runs in `f32`
//! for training and in `f64` when gradients are checked against finite
//! differences. Nothing reads a global RNG: every random draw comes from a
//! [`ChaCha8Rng`] seeded through [`derive_seed`].

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, NumAssign};
use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Floating point element type used by matrices and models.
pub trait Real:
    Float + NumAssign + Sum + Default + Debug + Display + Send + Sync + 'static
{
    const BYTES: usize;

    fn from_f64(v: f64) -> Self;

    fn as_f64(self) -> f64;
}

impl Real for f32 {
    const BYTES: usize = 4;

    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    const BYTES: usize = 8;

    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}

/// Mixes a base seed with a component tag and an index into an independent
/// sub-seed (FNV-1a over the tag, then two splitmix64 rounds).
pub fn derive_seed(seed: u64, tag: &str, index: u64) -> u64 {
    let mut tag_hash: u64 = 0xcbf2_9ce4_8422_2325;
    for b in tag.bytes() {
        tag_hash ^= b as u64;
        tag_hash = tag_hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    let a = splitmix64(seed ^ tag_hash);
    splitmix64(a ^ index.wrapping_mul(0x9e37_79b9_7f4a_7c15))
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn rng_from(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Row-major dense matrix. Vectors are `n x 1` matrices or plain slices.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Real> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: T) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::ShapeMismatch {
                expected: rows * cols,
                actual: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: T) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Copies column `c` into `out`.
    pub fn column_into(&self, c: usize, out: &mut [T]) {
        debug_assert_eq!(out.len(), self.rows);
        for (r, o) in out.iter_mut().enumerate() {
            *o = self.data[r * self.cols + c];
        }
    }

    /// Adds `v` to column `c`.
    pub fn add_to_column(&mut self, c: usize, v: &[T]) {
        debug_assert_eq!(v.len(), self.rows);
        for (r, &x) in v.iter().enumerate() {
            self.data[r * self.cols + c] += x;
        }
    }

    /// `out += self * x`
    pub fn matvec_acc(&self, x: &[T], out: &mut [T]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(out.len(), self.rows);
        for (o, row) in out.iter_mut().zip(self.data.chunks_exact(self.cols)) {
            *o += dot(row, x);
        }
    }

    /// `out += self^T * x`
    pub fn matvec_t_acc(&self, x: &[T], out: &mut [T]) {
        debug_assert_eq!(x.len(), self.rows);
        debug_assert_eq!(out.len(), self.cols);
        for (&xr, row) in x.iter().zip(self.data.chunks_exact(self.cols)) {
            if xr != T::zero() {
                axpy(xr, row, out);
            }
        }
    }

    /// `self += a * b^T`
    pub fn add_outer(&mut self, a: &[T], b: &[T]) {
        debug_assert_eq!(a.len(), self.rows);
        debug_assert_eq!(b.len(), self.cols);
        for (&ar, row) in a.iter().zip(self.data.chunks_exact_mut(self.cols)) {
            if ar != T::zero() {
                axpy(ar, b, row);
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }

    pub fn cast<U: Real>(&self) -> Matrix<U> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| U::from_f64(v.as_f64())).collect(),
        }
    }
}

#[inline]
pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

/// `y += a * x`
#[inline]
pub fn axpy<T: Real>(a: T, x: &[T], y: &mut [T]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

#[inline]
pub fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

/// Softmax of `logits` into `out`, shifted by the max for stability.
pub fn softmax_into<T: Real>(logits: &[T], out: &mut [T]) {
    debug_assert_eq!(logits.len(), out.len());
    let max = logits.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
    let mut sum = T::zero();
    for (o, &z) in out.iter_mut().zip(logits) {
        *o = (z - max).exp();
        sum += *o;
    }
    let inv = T::one() / sum;
    for o in out.iter_mut() {
        *o *= inv;
    }
}

pub fn softmax<T: Real>(logits: &[T]) -> Vec<T> {
    let mut out = vec![T::zero(); logits.len()];
    softmax_into(logits, &mut out);
    out
}

/// Glorot-uniform initialization: entries i.i.d. in `[-s, s]` with
/// `s = sqrt(6 / (rows + cols))`.
pub fn init_uniform<T: Real>(rows: usize, cols: usize, seed: u64) -> Matrix<T> {
    assert!(rows > 0 && cols > 0, "init_uniform needs positive dims");
    let s = glorot_bound(rows, cols);
    let dist = Uniform::new_inclusive(-s, s).expect("finite bound");
    let mut rng = rng_from(seed);
    let data = (0..rows * cols)
        .map(|_| T::from_f64(dist.sample(&mut rng)))
        .collect();
    Matrix { rows, cols, data }
}

pub fn glorot_bound(rows: usize, cols: usize) -> f64 {
    (6.0 / (rows + cols) as f64).sqrt()
}

fn check_len(expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::ShapeMismatch { expected, actual });
    }
    Ok(())
}

/// `params - lr * grads`
pub fn sgd_step<T: Real>(params: &[T], grads: &[T], lr: f64) -> Result<Vec<T>> {
    check_len(params.len(), grads.len())?;
    let lr = T::from_f64(lr);
    Ok(params.iter().zip(grads).map(|(&p, &g)| p - lr * g).collect())
}

/// In-place form of [`sgd_step`] with identical arithmetic.
pub fn sgd_step_in_place<T: Real>(params: &mut [T], grads: &[T], lr: f64) -> Result<()> {
    check_len(params.len(), grads.len())?;
    let lr = T::from_f64(lr);
    for (p, &g) in params.iter_mut().zip(grads) {
        *p -= lr * g;
    }
    Ok(())
}

/// Rescales `grads` so its L2 norm is at most `max_norm`. Returns the norm
/// before clipping.
pub fn clip_global_norm<T: Real>(grads: &mut [T], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .map(|g| g.as_f64() * g.as_f64())
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = T::from_f64(max_norm / norm);
        for g in grads.iter_mut() {
            *g *= scale;
        }
    }
    norm
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OptimizerKind {
    PlainSgd,
    Nesterov,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState<T> {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub momentum: f64,
    pub velocity: Vec<T>,
}

impl<T: Real> OptimizerState<T> {
    pub fn plain_sgd(lr: f64, num_params: usize) -> Self {
        Self {
            kind: OptimizerKind::PlainSgd,
            lr,
            momentum: 0.0,
            velocity: vec![T::zero(); num_params],
        }
    }

    pub fn nesterov(lr: f64, momentum: f64, num_params: usize) -> Result<Self> {
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::invalid(format!(
                "momentum must lie in [0, 1), got {momentum}"
            )));
        }
        Ok(Self {
            kind: OptimizerKind::Nesterov,
            lr,
            momentum,
            velocity: vec![T::zero(); num_params],
        })
    }

    /// Applies one update to `params` in place.
    ///
    /// Nesterov uses the applied form: `v' = mu*v + g`, then
    /// `params -= lr * (mu*v' + g)`. With `mu = 0` this is exactly `sgd_step`.
    pub fn step(&mut self, params: &mut [T], grad: &[T]) -> Result<()> {
        check_len(params.len(), grad.len())?;
        check_len(self.velocity.len(), grad.len())?;
        let lr = T::from_f64(self.lr);
        match self.kind {
            OptimizerKind::PlainSgd => {
                for (p, &g) in params.iter_mut().zip(grad) {
                    *p -= lr * g;
                }
            }
            OptimizerKind::Nesterov => {
                let mu = T::from_f64(self.momentum);
                for ((p, v), &g) in params.iter_mut().zip(self.velocity.iter_mut()).zip(grad) {
                    *v = mu * *v + g;
                    *p -= lr * (mu * *v + g);
                }
            }
        }
        Ok(())
    }
}

/// Pure form of the Nesterov update: returns the new parameters and state.
pub fn nesterov_step<T: Real>(
    state: &OptimizerState<T>,
    pseudo_grad: &[T],
    params: &[T],
) -> Result<(Vec<T>, OptimizerState<T>)> {
    let mut next = state.clone();
    next.kind = OptimizerKind::Nesterov;
    let mut out = params.to_vec();
    next.step(&mut out, pseudo_grad)?;
    Ok((out, next))
}

/// Central finite differences of `loss` at `params`, one coordinate at a time.
pub fn finite_diff_grad<F>(loss: F, params: &[f64], h: f64) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64,
{
    assert!(h > 0.0);
    let mut probe = params.to_vec();
    let mut grad = Vec::with_capacity(params.len());
    for i in 0..params.len() {
        probe[i] = params[i] + h;
        let plus = loss(&probe);
        probe[i] = params[i] - h;
        let minus = loss(&probe);
        probe[i] = params[i];
        grad.push((plus - minus) / (2.0 * h));
    }
    grad
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_deterministic_and_bounded() {
        let a: Matrix<f64> = init_uniform(2, 3, 11);
        let b: Matrix<f64> = init_uniform(2, 3, 11);
        assert_eq!(a, b);
        let c: Matrix<f64> = init_uniform(2, 3, 12);
        assert_ne!(a, c);
        let s = glorot_bound(2, 3);
        assert!(a.as_slice().iter().all(|v| v.abs() <= s));
    }

    #[test]
    fn init_mean_is_centered() {
        let m: Matrix<f64> = init_uniform(100, 1000, 3);
        let n = m.len() as f64;
        let mean = m.as_slice().iter().sum::<f64>() / n;
        // std of a U(-s, s) draw is s/sqrt(3)
        let sigma_mean = glorot_bound(100, 1000) / 3f64.sqrt() / n.sqrt();
        assert!(mean.abs() < 3.0 * sigma_mean, "mean {mean}");
    }

    #[test]
    fn sgd_step_arithmetic() {
        let out = sgd_step(&[1.0f64, 2.0], &[0.5, -1.0], 0.1).unwrap();
        assert!((out[0] - 0.95).abs() < 1e-15);
        assert!((out[1] - 2.1).abs() < 1e-15);
        let same = sgd_step(&[1.0f64, 2.0], &[0.0, 0.0], 0.1).unwrap();
        assert_eq!(same, vec![1.0, 2.0]);
        assert!(matches!(
            sgd_step(&[1.0f64], &[1.0, 2.0], 0.1),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn nesterov_without_momentum_is_plain_sgd() {
        let state = OptimizerState::<f64>::nesterov(1.0, 0.0, 1).unwrap();
        let (p, _) = nesterov_step(&state, &[2.0], &[5.0]).unwrap();
        assert_eq!(p, vec![3.0]);

        let params = [0.3f32, -1.7, 2.25];
        let grads = [0.011f32, 0.5, -3.0];
        let state = OptimizerState::<f32>::nesterov(0.37, 0.0, 3).unwrap();
        let (a, _) = nesterov_step(&state, &grads, &params).unwrap();
        let b = sgd_step(&params, &grads, 0.37).unwrap();
        assert_eq!(
            a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn nesterov_constant_gradient_recurrence() {
        let g = 0.7;
        let mut state = OptimizerState::<f64>::nesterov(1.0, 0.9, 1).unwrap();
        let mut p = vec![0.0];
        state.step(&mut p, &[g]).unwrap();
        assert!((p[0] + 1.9 * g).abs() < 1e-12);
        state.step(&mut p, &[g]).unwrap();
        assert!((p[0] + (1.9 + 2.71) * g).abs() < 1e-12);

        // zero gradient with velocity v still moves by lr * mu^2 * v
        let v = state.velocity[0];
        let before = p[0];
        state.step(&mut p, &[0.0]).unwrap();
        assert!((before - p[0] - 0.81 * v).abs() < 1e-12);
    }

    #[test]
    fn momentum_out_of_range_rejected() {
        assert!(OptimizerState::<f64>::nesterov(1.0, 1.0, 1).is_err());
        assert!(OptimizerState::<f64>::nesterov(1.0, -0.1, 1).is_err());
    }

    #[test]
    fn finite_diff_quadratic_and_constant() {
        let p = [0.5, -2.0, 3.25];
        let g = finite_diff_grad(|x| x.iter().map(|v| v * v).sum::<f64>() / 2.0, &p, 1e-5);
        for (a, b) in g.iter().zip(&p) {
            assert!((a - b).abs() < 1e-8);
        }
        let z = finite_diff_grad(|_| 4.0, &p, 1e-5);
        assert!(z.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn softmax_normalizes() {
        let p = softmax(&[1.0f64, 2.0, 3.0, -50.0]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let q = softmax(&[1.0f32, 2.0, 3.0, -50.0]);
        assert!((q.iter().sum::<f32>() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn clip_rescales_only_above_threshold() {
        let mut g = vec![3.0f64, 4.0];
        assert_eq!(clip_global_norm(&mut g, 10.0), 5.0);
        assert_eq!(g, vec![3.0, 4.0]);
        clip_global_norm(&mut g, 1.0);
        assert!((g[0] - 0.6).abs() < 1e-12 && (g[1] - 0.8).abs() < 1e-12);
    }

    #[test]
    fn derived_seeds_differ_by_tag_and_index() {
        let a = derive_seed(1, "client", 0);
        assert_eq!(a, derive_seed(1, "client", 0));
        assert_ne!(a, derive_seed(1, "client", 1));
        assert_ne!(a, derive_seed(1, "server", 0));
        assert_ne!(a, derive_seed(2, "client", 0));
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn sgd_is_linear_in_gradient(
                p in proptest::collection::vec(-10.0f64..10.0, 4),
                g in proptest::collection::vec(-10.0f64..10.0, 4),
                a in -3.0f64..3.0,
            ) {
                let zero = vec![0.0; 4];
                let base = sgd_step(&p, &zero, 0.1).unwrap();
                let one = sgd_step(&p, &g, 0.1).unwrap();
                let scaled: Vec<f64> = g.iter().map(|v| a * v).collect();
                let two = sgd_step(&p, &scaled, 0.1).unwrap();
                for i in 0..4 {
                    let d1 = one[i] - base[i];
                    let d2 = two[i] - base[i];
                    prop_assert!((d2 - a * d1).abs() < 1e-9);
                }
            }
        }
    }
}
