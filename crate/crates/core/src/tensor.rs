//! Frequency-indexed vectors and tensors, the real/Fourier basis change,
//! flattenings and the symmetric leading-eigenpair solver.
//!
//! Storage order for a frequency axis of length p is
//! `(-p/2, ..., -1, 1, ..., p/2)`, so index `k` and `p - 1 - k` are negatives
//! of each other.

use crate::{rng, Error, Result, C64};
use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};
use std::f64::consts::FRAC_1_SQRT_2;

/// The frequency set `±[p/2]` for an even p.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct FreqSpace {
    p: usize,
}

/// Marker in difference tables for a frequency that falls outside `±[p/2]`.
pub const NONE: u8 = u8::MAX;

impl FreqSpace {
    pub fn new(p: usize) -> Result<Self> {
        if p == 0 || p % 2 == 1 || p >= NONE as usize {
            return Err(Error::InvalidLength(p));
        }
        Ok(FreqSpace { p })
    }

    pub fn p(self) -> usize {
        self.p
    }

    pub fn half(self) -> i32 {
        (self.p / 2) as i32
    }

    pub fn contains(self, f: i32) -> bool {
        f != 0 && f.abs() <= self.half()
    }

    pub fn index(self, f: i32) -> Option<usize> {
        if !self.contains(f) {
            return None;
        }
        let h = self.half();
        Some(if f < 0 { f + h } else { f + h - 1 } as usize)
    }

    pub fn freq(self, k: usize) -> i32 {
        let h = self.half();
        let k = k as i32;
        if k < h {
            k - h
        } else {
            k - h + 1
        }
    }

    pub fn neg(self, k: usize) -> usize {
        self.p - 1 - k
    }

    pub fn freqs(self) -> impl Iterator<Item = i32> {
        (0..self.p).map(move |k| self.freq(k))
    }

    /// Row-major table `t[k * p + x]` holding the index of `freq(k) - freq(x)`,
    /// or [`NONE`] when that difference is 0 or out of range.
    pub fn difference_table(self) -> Vec<u8> {
        let p = self.p;
        let mut t = vec![NONE; p * p];
        for k in 0..p {
            for x in 0..p {
                if let Some(d) = self.index(self.freq(k) - self.freq(x)) {
                    t[k * p + x] = d as u8;
                }
            }
        }
        t
    }
}

/// A single frequency in `±[p/2]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FreqIndex(i32);

impl FreqIndex {
    pub fn new(value: i32, p: usize) -> Result<Self> {
        if FreqSpace::new(p)?.contains(value) {
            Ok(FreqIndex(value))
        } else {
            Err(Error::InvalidArgument(format!("frequency {value} not in ±[{}]", p / 2)))
        }
    }

    pub fn value(self) -> i32 {
        self.0
    }

    pub fn neg(self) -> Self {
        FreqIndex(-self.0)
    }
}

/// Real signal entries `θ_j`, `j ∈ ±[p/2]`, in canonical order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RealVector(pub Vec<f64>);

impl RealVector {
    pub fn p(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &RealVector) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }

    pub fn normalized(&self) -> RealVector {
        let n = self.norm();
        RealVector(self.0.iter().map(|x| x / n).collect())
    }
}

/// Fourier coefficients `θ̂_j` with `θ̂_{-j} = conj(θ̂_j)`.
#[derive(Clone, Debug, PartialEq)]
pub struct FourierVector {
    coeffs: Vec<C64>,
}

const SYMMETRY_TOL: f64 = 1e-9;

impl FourierVector {
    /// Checks conjugate symmetry to a relative tolerance of 1e-9.
    pub fn new(coeffs: Vec<C64>) -> Result<Self> {
        let fs = FreqSpace::new(coeffs.len())?;
        let scale = coeffs.iter().map(|c| c.norm()).fold(1.0, f64::max);
        for k in fs.p() / 2..fs.p() {
            let r = (coeffs[fs.neg(k)] - coeffs[k].conj()).norm();
            if r > SYMMETRY_TOL * scale {
                return Err(Error::ConjugateSymmetry { freq: fs.freq(k), residual: r });
            }
        }
        Ok(FourierVector { coeffs })
    }

    pub fn zeros(p: usize) -> Result<Self> {
        FreqSpace::new(p)?;
        Ok(FourierVector { coeffs: vec![C64::new(0.0, 0.0); p] })
    }

    pub fn p(&self) -> usize {
        self.coeffs.len()
    }

    pub fn space(&self) -> FreqSpace {
        FreqSpace { p: self.coeffs.len() }
    }

    pub fn coeffs(&self) -> &[C64] {
        &self.coeffs
    }

    pub fn get(&self, f: i32) -> C64 {
        match self.space().index(f) {
            Some(k) => self.coeffs[k],
            None => C64::new(0.0, 0.0),
        }
    }

    pub fn norm(&self) -> f64 {
        self.coeffs.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
    }
}

pub fn to_fourier(v: &RealVector) -> Result<FourierVector> {
    let fs = FreqSpace::new(v.p())?;
    let mut c: Vec<C64> = v.0.iter().map(|&x| C64::new(x, 0.0)).collect();
    delta_inverse_mode(&mut c, &[fs.p()], 0);
    Ok(FourierVector { coeffs: c })
}

pub fn from_fourier(v: &FourierVector) -> Result<RealVector> {
    let checked = FourierVector::new(v.coeffs.clone())?;
    let mut c = checked.coeffs;
    delta_mode(&mut c, &[v.p()], 0);
    Ok(RealVector(c.into_iter().map(|z| z.re).collect()))
}

/// `v̂_j ↦ e^{ijg} v̂_j`.
pub fn apply_rotation(v: &FourierVector, g: f64) -> FourierVector {
    let fs = v.space();
    let coeffs = v
        .coeffs
        .iter()
        .enumerate()
        .map(|(k, c)| c * C64::from_polar(1.0, fs.freq(k) as f64 * g))
        .collect();
    FourierVector { coeffs }
}

/// Dense row-major tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

pub type ComplexTensor = Tensor<C64>;
pub type RealTensor = Tensor<f64>;

impl<T: Copy + Default> Tensor<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![T::default(); n] }
    }

    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Shape(format!("shape {shape:?} needs {n} entries, got {}", data.len())));
        }
        Ok(Tensor { shape: shape.to_vec(), data })
    }

    pub fn scalar(x: T) -> Self {
        Tensor { shape: vec![], data: vec![x] }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn order(&self) -> usize {
        self.shape.len()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn strides(&self) -> Vec<usize> {
        strides(&self.shape)
    }

    pub fn offset(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.shape).fold(0, |acc, (&i, &n)| acc * n + i)
    }

    pub fn get(&self, idx: &[usize]) -> T {
        self.data[self.offset(idx)]
    }

    pub fn set(&mut self, idx: &[usize], x: T) {
        let o = self.offset(idx);
        self.data[o] = x;
    }

    /// Output mode `m` is input mode `perm[m]`.
    pub fn permute(&self, perm: &[usize]) -> Result<Self> {
        let d = self.order();
        let mut seen = vec![false; d];
        if perm.len() != d || perm.iter().any(|&m| m >= d || std::mem::replace(&mut seen[m], true)) {
            return Err(Error::Shape(format!("{perm:?} is not a permutation of {d} modes")));
        }
        if perm.iter().enumerate().all(|(i, &m)| i == m) {
            return Ok(self.clone());
        }
        let shape: Vec<usize> = perm.iter().map(|&m| self.shape[m]).collect();
        let src = self.strides();
        let src_strides: Vec<usize> = perm.iter().map(|&m| src[m]).collect();
        let mut data = Vec::with_capacity(self.data.len());
        let mut idx = vec![0usize; d];
        let mut off = 0usize;
        for _ in 0..self.data.len() {
            data.push(self.data[off]);
            for m in (0..d).rev() {
                idx[m] += 1;
                off += src_strides[m];
                if idx[m] < shape[m] {
                    break;
                }
                off -= src_strides[m] * shape[m];
                idx[m] = 0;
            }
        }
        Ok(Tensor { shape, data })
    }

    pub fn map<U, F: Fn(T) -> U>(&self, f: F) -> Tensor<U> {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|&x| f(x)).collect() }
    }
}

pub fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1usize; shape.len()];
    for m in (0..shape.len().saturating_sub(1)).rev() {
        s[m] = s[m + 1] * shape[m + 1];
    }
    s
}

impl RealTensor {
    pub fn to_complex(&self) -> ComplexTensor {
        self.map(|x| C64::new(x, 0.0))
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }
}

impl ComplexTensor {
    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.norm()))
    }

    pub fn max_imag(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.im.abs()))
    }

    pub fn real_part(&self) -> RealTensor {
        self.map(|z| z.re)
    }

    /// Largest `|T[-idx] - conj(T[idx])|`; zero for a tensor of a real object in
    /// the Fourier basis.
    pub fn conjugate_symmetry_residual(&self) -> f64 {
        let n = self.data.len();
        // With every axis stored symmetrically, negating all indices reverses
        // the flat buffer.
        (0..n).fold(0.0, |m, i| m.max((self.data[n - 1 - i] - self.data[i].conj()).norm()))
    }

    /// Real basis to Fourier basis on every mode.
    pub fn to_fourier_modes(&self) -> ComplexTensor {
        let mut t = self.clone();
        for m in 0..t.order() {
            delta_inverse_mode(&mut t.data, &t.shape, m);
        }
        t
    }

    /// Fourier basis to real basis on every mode.
    pub fn to_real_modes(&self) -> ComplexTensor {
        let mut t = self.clone();
        for m in 0..t.order() {
            delta_mode(&mut t.data, &t.shape, m);
        }
        t
    }
}

fn for_each_pair(data: &mut [C64], shape: &[usize], mode: usize, f: impl Fn(C64, C64) -> (C64, C64)) {
    let p = shape[mode];
    let inner: usize = shape[mode + 1..].iter().product();
    let outer: usize = shape[..mode].iter().product();
    let h = p / 2;
    for o in 0..outer {
        let base = o * p * inner;
        for s in 0..inner {
            for j in 1..=h {
                let kp = base + (h + j - 1) * inner + s;
                let kn = base + (h - j) * inner + s;
                let (a, b) = f(data[kp], data[kn]);
                data[kp] = a;
                data[kn] = b;
            }
        }
    }
}

/// Fourier → real along one mode: `x_j = (x̂_j + x̂_{-j})/√2`,
/// `x_{-j} = -i(x̂_j - x̂_{-j})/√2`.
pub fn delta_mode(data: &mut [C64], shape: &[usize], mode: usize) {
    let mi = C64::new(0.0, -FRAC_1_SQRT_2);
    for_each_pair(data, shape, mode, |pos, neg| ((pos + neg) * FRAC_1_SQRT_2, (pos - neg) * mi));
}

/// Real → Fourier along one mode: `x̂_j = (x_j + i x_{-j})/√2`,
/// `x̂_{-j} = (x_j - i x_{-j})/√2`.
pub fn delta_inverse_mode(data: &mut [C64], shape: &[usize], mode: usize) {
    let i = C64::new(0.0, 1.0);
    for_each_pair(data, shape, mode, |pos, neg| {
        ((pos + i * neg) * FRAC_1_SQRT_2, (pos - i * neg) * FRAC_1_SQRT_2)
    });
}

/// Dense row-major matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

pub type RealMatrix = Matrix<f64>;
pub type ComplexMatrix = Matrix<C64>;

impl<T: Copy + Default> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![T::default(); rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!("{rows}x{cols} matrix needs {} entries, got {}", rows * cols, data.len())));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, f: impl Fn(usize, usize) -> T) -> Self {
        let data = (0..rows * cols).map(|k| f(k / cols, k % cols)).collect();
        Matrix { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, x: T) {
        self.data[r * self.cols + c] = x;
    }

    pub fn transpose(&self) -> Self {
        Matrix::from_fn(self.cols, self.rows, |r, c| self.get(c, r))
    }

    pub fn map<U, F: Fn(T) -> U>(&self, f: F) -> Matrix<U> {
        Matrix { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&x| f(x)).collect() }
    }
}

impl RealMatrix {
    pub fn identity(n: usize) -> Self {
        Matrix::from_fn(n, n, |r, c| if r == c { 1.0 } else { 0.0 })
    }

    pub fn outer(x: &[f64], y: &[f64]) -> Self {
        Matrix::from_fn(x.len(), y.len(), |r, c| x[r] * y[c])
    }

    pub fn matvec(&self, v: &[f64]) -> Vec<f64> {
        self.data.chunks(self.cols).map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum()).collect()
    }

    pub fn matmul(&self, other: &RealMatrix) -> Result<RealMatrix> {
        if self.cols != other.rows {
            return Err(Error::Shape(format!("cannot multiply {}x{} by {}x{}", self.rows, self.cols, other.rows, other.cols)));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for r in 0..self.rows {
            let dst = &mut out.data[r * other.cols..(r + 1) * other.cols];
            for k in 0..self.cols {
                let a = self.data[r * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                let src = &other.data[k * other.cols..(k + 1) * other.cols];
                dst.iter_mut().zip(src).for_each(|(d, s)| *d += a * s);
            }
        }
        Ok(out)
    }

    pub fn frobenius(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn sub(&self, other: &RealMatrix) -> Result<RealMatrix> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::Shape("matrix dimensions differ".into()));
        }
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect();
        Ok(Matrix { rows: self.rows, cols: self.cols, data })
    }

    pub fn scale(&self, s: f64) -> RealMatrix {
        self.map(|x| x * s)
    }

    /// Largest absolute column sum.
    pub fn norm1(&self) -> f64 {
        let mut sums = vec![0.0; self.cols];
        for row in self.data.chunks(self.cols) {
            sums.iter_mut().zip(row).for_each(|(s, x)| *s += x.abs());
        }
        sums.into_iter().fold(0.0, f64::max)
    }

    pub fn max_asymmetry(&self) -> f64 {
        let mut m: f64 = 0.0;
        for r in 0..self.rows {
            for c in r + 1..self.cols {
                m = m.max((self.get(r, c) - self.get(c, r)).abs());
            }
        }
        m
    }
}

impl ComplexMatrix {
    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.norm()))
    }
}

fn check_partition(order: usize, rows: [usize; 2], cols: [usize; 2]) -> Result<[usize; 4]> {
    let perm = [rows[0], rows[1], cols[0], cols[1]];
    let mut seen = [false; 4];
    if order != 4 {
        return Err(Error::Shape(format!("flattening needs an order-4 tensor, got order {order}")));
    }
    for &m in &perm {
        if m >= 4 || std::mem::replace(&mut seen[m], true) {
            return Err(Error::Shape(format!("{perm:?} is not a partition of the four modes")));
        }
    }
    Ok(perm)
}

/// The `(rows, cols)` flattening of an order-4 tensor: row index
/// `x * n1 + y` over modes `rows`, column index likewise over `cols`.
pub fn flatten4<T: Copy + Default>(t: &Tensor<T>, rows: [usize; 2], cols: [usize; 2]) -> Result<Matrix<T>> {
    let perm = check_partition(t.order(), rows, cols)?;
    let s = t.shape();
    let r = s[perm[0]] * s[perm[1]];
    let c = s[perm[2]] * s[perm[3]];
    let permuted = t.permute(&perm)?;
    Matrix::from_vec(r, c, permuted.data)
}

/// Inverse of [`flatten4`] for a tensor of shape `shape`.
pub fn unflatten4<T: Copy + Default>(
    m: &Matrix<T>,
    shape: [usize; 4],
    rows: [usize; 2],
    cols: [usize; 2],
) -> Result<Tensor<T>> {
    let perm = check_partition(4, rows, cols)?;
    let pshape: Vec<usize> = perm.iter().map(|&k| shape[k]).collect();
    if m.rows != pshape[0] * pshape[1] || m.cols != pshape[2] * pshape[3] {
        return Err(Error::Shape(format!("{}x{} matrix does not reshape to {shape:?}", m.rows, m.cols)));
    }
    let t = Tensor::from_vec(&pshape, m.data.clone())?;
    let mut inv = [0usize; 4];
    for (i, &k) in perm.iter().enumerate() {
        inv[k] = i;
    }
    t.permute(&inv)
}

pub fn symmetrize(m: &RealMatrix) -> Result<RealMatrix> {
    if m.rows != m.cols {
        return Err(Error::Shape(format!("cannot symmetrize a {}x{} matrix", m.rows, m.cols)));
    }
    let mut out = m.clone();
    for r in 0..m.rows {
        for c in r..m.cols {
            let v = 0.5 * (m.get(r, c) + m.get(c, r));
            out.set(r, c, v);
            out.set(c, r, v);
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EigenMode {
    LargestAlgebraic,
    LargestAbsolute,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EigenMethod {
    PowerIteration,
    Dense,
}

#[derive(Clone, Copy, Debug)]
pub struct EigenOptions {
    pub max_iter: usize,
    /// Relative change of the eigenvalue estimate between iterations.
    pub value_tol: f64,
    /// Residual `‖Mv − λv‖` relative to `max(|λ|, ‖M‖_F/√n)`.
    pub residual_tol: f64,
    /// Largest tolerated `|M_ij − M_ji|` relative to `max |M_ij|`.
    pub symmetry_tol: f64,
    /// Fall back to a dense symmetric decomposition when power iteration
    /// stalls; otherwise stalling is an error.
    pub dense_fallback: bool,
}

impl Default for EigenOptions {
    fn default() -> Self {
        EigenOptions { max_iter: 10_000, value_tol: 1e-10, residual_tol: 1e-8, symmetry_tol: 1e-9, dense_fallback: true }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EigenPair {
    pub value: f64,
    /// Unit vector, sign fixed so its largest-magnitude entry is positive.
    pub vector: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
    pub method: EigenMethod,
}

pub fn leading_eigenvector(m: &RealMatrix, mode: EigenMode, opts: &EigenOptions) -> Result<EigenPair> {
    let n = m.rows;
    if n != m.cols || n == 0 {
        return Err(Error::Shape(format!("eigensolver needs a nonempty square matrix, got {}x{}", m.rows, m.cols)));
    }
    if m.data.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidArgument("matrix has non-finite entries".into()));
    }
    let scale = m.max_abs();
    let asym = m.max_asymmetry();
    if asym > opts.symmetry_tol * scale.max(f64::MIN_POSITIVE) {
        return Err(Error::NotSymmetric(asym));
    }
    let mut v = start_vector(n);
    if scale == 0.0 {
        fix_sign(&mut v);
        return Ok(EigenPair { value: 0.0, vector: v, iterations: 0, residual: 0.0, method: EigenMethod::PowerIteration });
    }
    let shift = match mode {
        EigenMode::LargestAlgebraic => m.norm1(),
        EigenMode::LargestAbsolute => 0.0,
    };
    let floor = m.frobenius() / (n as f64).sqrt();
    let mut mv = m.matvec(&v);
    let mut prev = f64::NAN;
    let mut residual = f64::INFINITY;
    for it in 1..=opts.max_iter {
        let lambda = dot(&v, &mv);
        residual = mv.iter().zip(&v).map(|(a, b)| (a - lambda * b).powi(2)).sum::<f64>().sqrt();
        let reference = lambda.abs().max(floor);
        let settled = (lambda - prev).abs() <= opts.value_tol * reference;
        if residual <= opts.residual_tol * reference && (settled || residual == 0.0) {
            fix_sign(&mut v);
            return Ok(EigenPair { value: lambda, vector: v, iterations: it, residual, method: EigenMethod::PowerIteration });
        }
        prev = lambda;
        let mut w: Vec<f64> = mv.iter().zip(&v).map(|(a, b)| a + shift * b).collect();
        let nw = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        if nw == 0.0 {
            // v lies in the kernel and no shift was applied: eigenvalue 0.
            fix_sign(&mut v);
            return Ok(EigenPair { value: 0.0, vector: v, iterations: it, residual: 0.0, method: EigenMethod::PowerIteration });
        }
        w.iter_mut().for_each(|x| *x /= nw);
        v = w;
        mv = m.matvec(&v);
    }
    if opts.dense_fallback {
        dense_leading(m, mode)
    } else {
        Err(Error::NoConvergence { iterations: opts.max_iter, residual })
    }
}

fn dense_leading(m: &RealMatrix, mode: EigenMode) -> Result<EigenPair> {
    let n = m.rows;
    let eig = SymmetricEigen::new(DMatrix::from_row_slice(n, n, &m.data));
    let key = |x: f64| match mode {
        EigenMode::LargestAlgebraic => x,
        EigenMode::LargestAbsolute => x.abs(),
    };
    let mut best = 0;
    for k in 1..n {
        if key(eig.eigenvalues[k]) > key(eig.eigenvalues[best]) {
            best = k;
        }
    }
    let value = eig.eigenvalues[best];
    let mut v: Vec<f64> = eig.eigenvectors.column(best).iter().copied().collect();
    let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= nv);
    fix_sign(&mut v);
    let mv = m.matvec(&v);
    let residual = mv.iter().zip(&v).map(|(a, b)| (a - value * b).powi(2)).sum::<f64>().sqrt();
    Ok(EigenPair { value, vector: v, iterations: 0, residual, method: EigenMethod::Dense })
}

/// Largest singular value, from the leading eigenvalue of `MᵀM`.
pub fn spectral_norm(m: &RealMatrix) -> Result<f64> {
    let gram = m.transpose().matmul(m)?;
    let sym = symmetrize(&gram)?;
    let e = leading_eigenvector(&sym, EigenMode::LargestAlgebraic, &EigenOptions::default())?;
    Ok(e.value.max(0.0).sqrt())
}

fn start_vector(n: usize) -> Vec<f64> {
    let mut rng = rng::stream(0x5eed_0f_e16e, "eigen-start", n as u64);
    let mut v = rng::gaussian_vec(&mut rng, n, 1.0);
    let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= nv);
    v
}

/// Makes the first largest-magnitude entry positive.
pub fn fix_sign(v: &mut [f64]) {
    let mut best = 0;
    for k in 1..v.len() {
        if v[k].abs() > v[best].abs() {
            best = k;
        }
    }
    if v.get(best).is_some_and(|&x| x < 0.0) {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn frequency_order() {
        let fs = FreqSpace::new(6).unwrap();
        assert_eq!(fs.freqs().collect::<Vec<_>>(), vec![-3, -2, -1, 1, 2, 3]);
        for k in 0..6 {
            assert_eq!(fs.index(fs.freq(k)), Some(k));
            assert_eq!(fs.freq(fs.neg(k)), -fs.freq(k));
        }
        assert_eq!(fs.index(0), None);
        assert_eq!(fs.index(4), None);
        assert!(FreqSpace::new(5).is_err());
        assert!(FreqIndex::new(0, 4).is_err());
        assert_eq!(FreqIndex::new(-2, 4).unwrap().neg().value(), 2);
    }

    #[test]
    fn basis_change_examples() {
        let f = to_fourier(&RealVector(vec![0.0, 1.0])).unwrap();
        assert!((f.get(1) - c(FRAC_1_SQRT_2, 0.0)).norm() < 1e-15);
        assert!((f.get(-1) - c(FRAC_1_SQRT_2, 0.0)).norm() < 1e-15);
        let back = from_fourier(&f).unwrap();
        assert!((back.0[1] - 1.0).abs() < 1e-15 && back.0[0].abs() < 1e-15);

        let zero = to_fourier(&RealVector(vec![0.0; 4])).unwrap();
        assert_eq!(zero.norm(), 0.0);
        assert!(to_fourier(&RealVector(vec![1.0; 3])).is_err());

        let bad = FourierVector { coeffs: vec![c(1.0, 0.0), c(0.5, 0.0)] };
        assert!(matches!(from_fourier(&bad), Err(Error::ConjugateSymmetry { .. })));
    }

    #[test]
    fn basis_change_is_unitary() {
        let mut rng = rng::stream(1, "test", 0);
        for p in [2, 4, 8, 16] {
            let v = RealVector(rng::gaussian_vec(&mut rng, p, 1.0));
            let f = to_fourier(&v).unwrap();
            assert!((f.norm() - v.norm()).abs() < 1e-12);
            let back = from_fourier(&f).unwrap();
            for (a, b) in back.0.iter().zip(&v.0) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rotation_group_law() {
        let mut rng = rng::stream(2, "test", 0);
        let v = to_fourier(&RealVector(rng::gaussian_vec(&mut rng, 8, 1.0))).unwrap();
        let close = |a: &FourierVector, b: &FourierVector| {
            a.coeffs().iter().zip(b.coeffs()).all(|(x, y)| (x - y).norm() < 1e-12)
        };
        assert!(close(&apply_rotation(&v, 0.0), &v));
        assert!(close(&apply_rotation(&v, 2.0 * std::f64::consts::PI), &v));
        let (g1, g2) = (0.3, 2.9);
        assert!(close(&apply_rotation(&apply_rotation(&v, g1), g2), &apply_rotation(&v, g1 + g2)));
        let r = apply_rotation(&v, 1.234);
        assert!(FourierVector::new(r.coeffs().to_vec()).is_ok());
        assert!((r.norm() - v.norm()).abs() < 1e-12);
    }

    #[test]
    fn tensor_mode_transforms_invert() {
        let mut rng = rng::stream(3, "test", 0);
        let data: Vec<C64> = (0..4 * 6 * 4).map(|_| c(rng.random::<f64>(), rng.random::<f64>())).collect();
        let t = Tensor::from_vec(&[4, 6, 4], data).unwrap();
        let back = t.to_fourier_modes().to_real_modes();
        for (a, b) in back.data().iter().zip(t.data()) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn real_tensor_has_symmetric_fourier_transform() {
        let mut rng = rng::stream(4, "test", 0);
        let t = Tensor::from_vec(&[4, 4, 4], rng::gaussian_vec(&mut rng, 64, 1.0)).unwrap();
        assert!(t.to_complex().to_fourier_modes().conjugate_symmetry_residual() < 1e-12);
    }

    #[test]
    fn permute_moves_entries() {
        let t = Tensor::from_vec(&[2, 3, 4], (0..24).map(|x| x as f64).collect()).unwrap();
        let q = t.permute(&[2, 0, 1]).unwrap();
        assert_eq!(q.shape(), &[4, 2, 3]);
        for i in 0..2 {
            for j in 0..3 {
                for k in 0..4 {
                    assert_eq!(q.get(&[k, i, j]), t.get(&[i, j, k]));
                }
            }
        }
        assert!(t.permute(&[0, 0, 1]).is_err());
    }

    #[test]
    fn flatten_rank_one() {
        let x = [1.0, -2.0, 0.5];
        let y = [3.0, 0.25, -1.0];
        let mut t = RealTensor::zeros(&[3, 3, 3, 3]);
        for a in 0..3 {
            for b in 0..3 {
                for cc in 0..3 {
                    for d in 0..3 {
                        t.set(&[a, b, cc, d], x[a] * y[b] * x[cc] * y[d]);
                    }
                }
            }
        }
        let w: Vec<f64> = (0..9).map(|k| x[k / 3] * y[k % 3]).collect();
        let m = flatten4(&t, [0, 1], [2, 3]).unwrap();
        assert_eq!(m, RealMatrix::outer(&w, &w));
        assert!(flatten4(&RealTensor::zeros(&[3, 3, 3]), [0, 1], [2, 3]).is_err());
        assert_eq!(flatten4(&RealTensor::zeros(&[2, 2, 2, 2]), [0, 1], [2, 3]).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn flatten_roundtrip_every_partition() {
        let t = Tensor::from_vec(&[4, 4, 4, 4], (0..256).map(|x| x as f64).collect()).unwrap();
        for (rows, cols) in [([0, 1], [2, 3]), ([0, 2], [1, 3]), ([3, 1], [0, 2])] {
            let m = flatten4(&t, rows, cols).unwrap();
            assert_eq!(unflatten4(&m, [4, 4, 4, 4], rows, cols).unwrap(), t);
        }
        let m = flatten4(&t, [0, 2], [1, 3]).unwrap();
        assert_eq!(m.get(1 * 4 + 3, 2 * 4 + 0), t.get(&[1, 2, 3, 0]));
    }

    #[test]
    fn symmetrize_examples() {
        let s = Matrix::from_vec(2, 2, vec![1.0, 2.0, 2.0, 5.0]).unwrap();
        assert_eq!(symmetrize(&s).unwrap(), s);
        let a = Matrix::from_vec(2, 2, vec![0.0, 2.0, -2.0, 0.0]).unwrap();
        assert_eq!(symmetrize(&a).unwrap().max_abs(), 0.0);
        let m = Matrix::from_vec(2, 2, vec![1.0, 4.0, -1.0, 2.0]).unwrap();
        let d = symmetrize(&m).unwrap().sub(&m).unwrap().frobenius();
        assert!(d <= m.sub(&m.transpose()).unwrap().frobenius() / 2.0 + 1e-15);
    }

    #[test]
    fn eigen_examples() {
        let opts = EigenOptions::default();
        let id = RealMatrix::identity(5);
        let e = leading_eigenvector(&id, EigenMode::LargestAlgebraic, &opts).unwrap();
        assert!((e.value - 1.0).abs() < 1e-12);

        let d = Matrix::from_vec(2, 2, vec![3.0, 0.0, 0.0, -5.0]).unwrap();
        let abs = leading_eigenvector(&d, EigenMode::LargestAbsolute, &opts).unwrap();
        assert!((abs.value + 5.0).abs() < 1e-9 && (abs.vector[1] - 1.0).abs() < 1e-8);
        let alg = leading_eigenvector(&d, EigenMode::LargestAlgebraic, &opts).unwrap();
        assert!((alg.value - 3.0).abs() < 1e-9 && (alg.vector[0] - 1.0).abs() < 1e-8);

        let mut rng = rng::stream(5, "test", 0);
        let v = rng::unit_vec(&mut rng, 30);
        let r1 = RealMatrix::outer(&v, &v);
        let e = leading_eigenvector(&r1, EigenMode::LargestAlgebraic, &opts).unwrap();
        assert!((e.value - 1.0).abs() < 1e-8);
        assert!((dot(&e.vector, &v).abs() - 1.0).abs() < 1e-8);

        let ns = Matrix::from_vec(2, 2, vec![1.0, 1.0, 0.0, 1.0]).unwrap();
        assert!(matches!(leading_eigenvector(&ns, EigenMode::LargestAbsolute, &opts), Err(Error::NotSymmetric(_))));
    }

    #[test]
    fn eigen_stall_without_fallback_is_an_error() {
        // ±1 spectrum: power iteration on |λ| cannot settle.
        let d = Matrix::from_vec(2, 2, vec![1.0, 0.0, 0.0, -1.0]).unwrap();
        let opts = EigenOptions { max_iter: 50, dense_fallback: false, ..Default::default() };
        match leading_eigenvector(&d, EigenMode::LargestAbsolute, &opts) {
            Err(Error::NoConvergence { iterations, .. }) => assert_eq!(iterations, 50),
            other => panic!("expected non-convergence, got {other:?}"),
        }
        let e = leading_eigenvector(&d, EigenMode::LargestAbsolute, &EigenOptions { max_iter: 50, ..Default::default() }).unwrap();
        assert_eq!(e.method, EigenMethod::Dense);
        assert!((e.value.abs() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn eigen_residual_on_random_symmetric() {
        let mut rng = rng::stream(6, "test", 0);
        for n in [4, 64, 256] {
            let g = Matrix::from_vec(n, n, rng::gaussian_vec(&mut rng, n * n, 1.0)).unwrap();
            let m = symmetrize(&g).unwrap();
            for mode in [EigenMode::LargestAlgebraic, EigenMode::LargestAbsolute] {
                let e = leading_eigenvector(&m, mode, &EigenOptions::default()).unwrap();
                let mv = m.matvec(&e.vector);
                let r: f64 = mv.iter().zip(&e.vector).map(|(a, b)| (a - e.value * b).powi(2)).sum::<f64>().sqrt();
                assert!(r <= 1e-8 * m.frobenius(), "n={n} {mode:?} residual {r}");
                let dense = dense_leading(&m, mode).unwrap();
                assert!((dense.value - e.value).abs() < 1e-6 * m.frobenius());
            }
        }
    }

    #[test]
    fn spectral_norm_of_diagonal() {
        let d = Matrix::from_vec(3, 3, vec![2.0, 0.0, 0.0, 0.0, -7.0, 0.0, 0.0, 0.0, 1.0]).unwrap();
        assert!((spectral_norm(&d).unwrap() - 7.0).abs() < 1e-9);
    }
}
