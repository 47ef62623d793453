//! Moment tensors in the Fourier basis, the observation model and empirical
//! moment estimation.
//!
//! Third moments are stored as a sum over the K signals, not a mean; see
//! [`Normalization`].

use crate::tensor::{apply_rotation, from_fourier, to_fourier, ComplexTensor, FourierVector, FreqSpace, RealTensor, RealVector};
use crate::{rng, Error, Exec, Result, C64};
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    MeanOverK,
    SumOverK,
}

/// The K true signals, in the Fourier basis.
#[derive(Clone, Debug, PartialEq)]
pub struct SignalSet {
    fs: FreqSpace,
    signals: Vec<FourierVector>,
}

impl SignalSet {
    pub fn new(signals: Vec<FourierVector>) -> Result<Self> {
        let first = signals.first().ok_or_else(|| Error::InvalidArgument("signal set is empty".into()))?;
        let fs = first.space();
        if signals.iter().any(|s| s.p() != fs.p()) {
            return Err(Error::Shape("signals have different lengths".into()));
        }
        Ok(SignalSet { fs, signals })
    }

    pub fn from_real(signals: &[RealVector]) -> Result<Self> {
        SignalSet::new(signals.iter().map(to_fourier).collect::<Result<_>>()?)
    }

    /// K independent draws of `θ ~ N(0, I/p)` in the real basis.
    pub fn random_gaussian(p: usize, k: usize, seed: u64) -> Result<Self> {
        FreqSpace::new(p)?;
        let std = 1.0 / (p as f64).sqrt();
        let real: Vec<RealVector> = (0..k)
            .map(|i| RealVector(rng::gaussian_vec(&mut rng::stream(seed, "signal", i as u64), p, std)))
            .collect();
        SignalSet::from_real(&real)
    }

    pub fn p(&self) -> usize {
        self.fs.p()
    }

    pub fn k(&self) -> usize {
        self.signals.len()
    }

    pub fn space(&self) -> FreqSpace {
        self.fs
    }

    pub fn signals(&self) -> &[FourierVector] {
        &self.signals
    }

    pub fn real(&self) -> Result<Vec<RealVector>> {
        self.signals.iter().map(from_fourier).collect()
    }

    pub fn single(&self, k: usize) -> SignalSet {
        SignalSet { fs: self.fs, signals: vec![self.signals[k].clone()] }
    }
}

/// Order-3 Fourier tensor supported on `j1 + j2 + j3 = 0`, stored as a p×p
/// table over `(j1, j2)` with `j3 = -j1 - j2` implied.
#[derive(Clone, Debug, PartialEq)]
pub struct ZeroSumTensor3 {
    fs: FreqSpace,
    data: Vec<C64>,
}

impl ZeroSumTensor3 {
    pub fn zeros(p: usize) -> Result<Self> {
        let fs = FreqSpace::new(p)?;
        Ok(ZeroSumTensor3 { fs, data: vec![C64::new(0.0, 0.0); p * p] })
    }

    /// `Σ_k θ̂ᵏ_{j1} θ̂ᵏ_{j2} θ̂ᵏ_{j3}` on the support, scaled by `1/K` for
    /// [`Normalization::MeanOverK`].
    pub fn from_signals(signals: &SignalSet, norm: Normalization) -> Self {
        let fs = signals.space();
        let p = fs.p();
        let scale = match norm {
            Normalization::SumOverK => 1.0,
            Normalization::MeanOverK => 1.0 / signals.k() as f64,
        };
        let mut data = vec![C64::new(0.0, 0.0); p * p];
        for k1 in 0..p {
            for k2 in 0..p {
                let Some(k3) = fs.index(-fs.freq(k1) - fs.freq(k2)) else { continue };
                let s: C64 = signals.signals.iter().map(|t| t.coeffs()[k1] * t.coeffs()[k2] * t.coeffs()[k3]).sum();
                data[k1 * p + k2] = s * scale;
            }
        }
        ZeroSumTensor3 { fs, data }
    }

    /// Restriction of a dense order-3 Fourier tensor to the zero-sum support,
    /// together with the largest magnitude it discards.
    pub fn from_dense(t: &ComplexTensor) -> Result<(Self, f64)> {
        let p = t.shape().first().copied().unwrap_or(0);
        if t.shape() != [p, p, p] {
            return Err(Error::Shape(format!("expected a cubic order-3 tensor, got {:?}", t.shape())));
        }
        let mut z = ZeroSumTensor3::zeros(p)?;
        let fs = z.fs;
        let mut off: f64 = 0.0;
        for k1 in 0..p {
            for k2 in 0..p {
                for k3 in 0..p {
                    let v = t.data()[(k1 * p + k2) * p + k3];
                    if fs.freq(k1) + fs.freq(k2) + fs.freq(k3) == 0 {
                        z.data[k1 * p + k2] = v;
                    } else {
                        off = off.max(v.norm());
                    }
                }
            }
        }
        Ok((z, off))
    }

    pub fn p(&self) -> usize {
        self.fs.p()
    }

    pub fn space(&self) -> FreqSpace {
        self.fs
    }

    /// Entry at frequencies `(j1, j2, j3)`; zero off the support.
    pub fn get(&self, j1: i32, j2: i32, j3: i32) -> C64 {
        if j1 + j2 + j3 != 0 || !self.fs.contains(j3) {
            return C64::new(0.0, 0.0);
        }
        match (self.fs.index(j1), self.fs.index(j2)) {
            (Some(a), Some(b)) => self.data[a * self.p() + b],
            _ => C64::new(0.0, 0.0),
        }
    }

    /// Entry at storage indices `(k1, k2)` with the third frequency implied.
    pub fn pair(&self, k1: usize, k2: usize) -> C64 {
        self.data[k1 * self.p() + k2]
    }

    pub fn raw(&self) -> &[C64] {
        &self.data
    }

    pub fn to_dense(&self) -> ComplexTensor {
        let p = self.p();
        let mut t = ComplexTensor::zeros(&[p, p, p]);
        for k1 in 0..p {
            for k2 in 0..p {
                if let Some(k3) = self.fs.index(-self.fs.freq(k1) - self.fs.freq(k2)) {
                    t.data_mut()[(k1 * p + k2) * p + k3] = self.data[k1 * p + k2];
                }
            }
        }
        t
    }

    pub fn add(&self, other: &ZeroSumTensor3) -> Result<Self> {
        if self.p() != other.p() {
            return Err(Error::Shape("tensors have different p".into()));
        }
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect();
        Ok(ZeroSumTensor3 { fs: self.fs, data })
    }

    pub fn scale(&self, s: f64) -> Self {
        ZeroSumTensor3 { fs: self.fs, data: self.data.iter().map(|z| z * s).collect() }
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, z| m.max(z.norm()))
    }

    /// Largest deviation from permutation symmetry and from
    /// `T[-j] = conj(T[j])`.
    pub fn symmetry_residual(&self) -> f64 {
        let fs = self.fs;
        let mut r: f64 = 0.0;
        for a in fs.freqs() {
            for b in fs.freqs() {
                let c = -a - b;
                if !fs.contains(c) {
                    continue;
                }
                let v = self.get(a, b, c);
                for w in [self.get(b, a, c), self.get(a, c, b), self.get(c, b, a), self.get(b, c, a), self.get(c, a, b)] {
                    r = r.max((w - v).norm());
                }
                r = r.max((self.get(-a, -b, -c) - v.conj()).norm());
            }
        }
        r
    }
}

/// Dense exact moment of order `d ≤ 3` in the Fourier basis.
pub fn exact_moment(signals: &SignalSet, d: usize, norm: Normalization) -> Result<ComplexTensor> {
    if !(1..=3).contains(&d) {
        return Err(Error::InvalidArgument(format!("moment order {d} not supported")));
    }
    let fs = signals.space();
    let p = fs.p();
    let scale = match norm {
        Normalization::SumOverK => 1.0,
        Normalization::MeanOverK => 1.0 / signals.k() as f64,
    };
    let shape = vec![p; d];
    let mut t = ComplexTensor::zeros(&shape);
    let mut idx = vec![0usize; d];
    for flat in 0..t.data().len() {
        let mut rem = flat;
        for m in (0..d).rev() {
            idx[m] = rem % p;
            rem /= p;
        }
        if idx.iter().map(|&k| fs.freq(k)).sum::<i32>() != 0 {
            continue;
        }
        let s: C64 = signals.signals.iter().map(|th| idx.iter().map(|&k| th.coeffs()[k]).product::<C64>()).sum();
        t.data_mut()[flat] = s * scale;
    }
    Ok(t)
}

/// Noisy rotated samples `y_i = g_i·θ^{k_i} + ξ_i` in the real basis.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservationBatch {
    pub p: usize,
    pub sigma: f64,
    pub seed: u64,
    /// Row-major n×p.
    pub samples: Vec<f64>,
    pub rotations: Vec<f64>,
    pub labels: Vec<usize>,
}

impl ObservationBatch {
    pub fn len(&self) -> usize {
        self.rotations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rotations.is_empty()
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        &self.samples[i * self.p..(i + 1) * self.p]
    }
}

/// Samples drawn per random stream; fixes the block structure used for
/// reproducible parallel generation and reduction.
pub const BLOCK: usize = 1024;

pub fn sample_observations(signals: &SignalSet, sigma: f64, n: usize, seed: u64, exec: Exec) -> Result<ObservationBatch> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidArgument(format!("noise level {sigma} must be finite and nonnegative")));
    }
    let p = signals.p();
    let blocks = n.div_ceil(BLOCK);
    let parts = exec.map(blocks, |b| -> Result<(Vec<f64>, Vec<f64>, Vec<usize>)> {
        let count = BLOCK.min(n - b * BLOCK);
        let mut rng = rng::stream(seed, "observations", b as u64);
        let mut ys = Vec::with_capacity(count * p);
        let mut gs = Vec::with_capacity(count);
        let mut ks = Vec::with_capacity(count);
        for _ in 0..count {
            let g = rng.random::<f64>() * std::f64::consts::TAU;
            let k = rng.random_range(0..signals.k());
            let y = from_fourier(&apply_rotation(&signals.signals[k], g))?;
            let noise = rng::gaussian_vec(&mut rng, p, sigma);
            ys.extend(y.0.iter().zip(&noise).map(|(a, b)| a + b));
            gs.push(g);
            ks.push(k);
        }
        Ok((ys, gs, ks))
    });
    let mut batch = ObservationBatch { p, sigma, seed, samples: Vec::with_capacity(n * p), rotations: Vec::with_capacity(n), labels: Vec::with_capacity(n) };
    for part in parts {
        let (ys, gs, ks) = part?;
        batch.samples.extend(ys);
        batch.rotations.extend(gs);
        batch.labels.extend(ks);
    }
    Ok(batch)
}

/// Sample third moment `(1/n) Σ y^⊗3` in both bases.
#[derive(Clone, Debug)]
pub struct EmpiricalMoment {
    /// Real basis, dense p×p×p.
    pub real: RealTensor,
    /// Fourier basis, dense p×p×p.
    pub fourier: ComplexTensor,
    /// Fourier entries on the zero-sum support.
    pub zero_sum: ZeroSumTensor3,
    /// Largest Fourier entry off the support; tends to 0 as n grows.
    pub off_support: f64,
}

pub fn empirical_third_moment(batch: &ObservationBatch, exec: Exec) -> Result<EmpiricalMoment> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty observation batch".into()));
    }
    let p = batch.p;
    let n = batch.len();
    let blocks = n.div_ceil(BLOCK);
    let partial = exec.map(blocks, |b| {
        let mut acc = vec![0.0; p * p * p];
        for i in b * BLOCK..(b * BLOCK + BLOCK).min(n) {
            let y = batch.sample(i);
            for a in 0..p {
                for c in 0..p {
                    let yac = y[a] * y[c];
                    let row = &mut acc[(a * p + c) * p..(a * p + c + 1) * p];
                    row.iter_mut().zip(y).for_each(|(r, yd)| *r += yac * yd);
                }
            }
        }
        acc
    });
    let sum = tree_sum(partial);
    let real = RealTensor::from_vec(&[p, p, p], sum.into_iter().map(|x| x / n as f64).collect())?;
    let fourier = real.to_complex().to_fourier_modes();
    let (zero_sum, off_support) = ZeroSumTensor3::from_dense(&fourier)?;
    Ok(EmpiricalMoment { real, fourier, zero_sum, off_support })
}

/// Pairwise sum in a fixed tree shape over the input order.
fn tree_sum(mut parts: Vec<Vec<f64>>) -> Vec<f64> {
    while parts.len() > 1 {
        let mut next = Vec::with_capacity(parts.len().div_ceil(2));
        let mut it = parts.into_iter();
        while let Some(mut a) = it.next() {
            if let Some(b) = it.next() {
                a.iter_mut().zip(&b).for_each(|(x, y)| *x += y);
            }
            next.push(a);
        }
        parts = next;
    }
    parts.pop().unwrap_or_default()
}

/// `‖est − exact‖_∞` for two tensors given in the real basis.
pub fn moment_error(est: &ComplexTensor, exact: &ComplexTensor) -> Result<f64> {
    if est.shape() != exact.shape() {
        return Err(Error::Shape(format!("{:?} vs {:?}", est.shape(), exact.shape())));
    }
    Ok(est.data().iter().zip(exact.data()).fold(0.0, |m, (a, b)| m.max((a - b).norm())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::orbit_correlation;

    #[test]
    fn third_moment_vanishes_at_p2() {
        let s = SignalSet::random_gaussian(2, 3, 1).unwrap();
        let t = exact_moment(&s, 3, Normalization::SumOverK).unwrap();
        assert_eq!(t.max_abs(), 0.0);
        assert_eq!(ZeroSumTensor3::from_signals(&s, Normalization::SumOverK).max_abs(), 0.0);
    }

    #[test]
    fn second_moment_is_power_spectrum() {
        let s = SignalSet::random_gaussian(6, 1, 2).unwrap();
        let fs = s.space();
        let t = exact_moment(&s, 2, Normalization::SumOverK).unwrap();
        for a in 0..6 {
            for b in 0..6 {
                let v = t.get(&[a, b]);
                if fs.freq(a) == -fs.freq(b) {
                    assert!((v.re - s.signals()[0].coeffs()[a].norm_sqr()).abs() < 1e-15 && v.im.abs() < 1e-15);
                } else {
                    assert_eq!(v, C64::new(0.0, 0.0));
                }
            }
        }
        assert_eq!(exact_moment(&s, 1, Normalization::SumOverK).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn third_moment_product_form() {
        let s = SignalSet::random_gaussian(4, 1, 3).unwrap();
        let th = &s.signals()[0];
        let z = ZeroSumTensor3::from_signals(&s, Normalization::SumOverK);
        let want = th.get(1) * th.get(1) * th.get(-2);
        assert!((z.get(1, 1, -2) - want).norm() < 1e-15);
        let dense = exact_moment(&s, 3, Normalization::SumOverK).unwrap();
        let fs = s.space();
        assert_eq!(dense.get(&[fs.index(1).unwrap(), fs.index(1).unwrap(), fs.index(-2).unwrap()]), z.get(1, 1, -2));
        assert_eq!(z.to_dense(), dense);
        assert!(z.symmetry_residual() < 1e-15);
    }

    #[test]
    fn normalization_flag() {
        let s = SignalSet::random_gaussian(8, 3, 4).unwrap();
        let sum = ZeroSumTensor3::from_signals(&s, Normalization::SumOverK);
        let mean = ZeroSumTensor3::from_signals(&s, Normalization::MeanOverK);
        assert!(sum.scale(1.0 / 3.0).raw().iter().zip(mean.raw()).all(|(a, b)| (a - b).norm() < 1e-15));
    }

    #[test]
    fn noiseless_samples_stay_on_orbit() {
        let s = SignalSet::random_gaussian(8, 1, 5).unwrap();
        let theta = &s.real().unwrap()[0];
        let batch = sample_observations(&s, 0.0, 50, 9, Exec::Parallel).unwrap();
        for i in 0..batch.len() {
            let y = RealVector(batch.sample(i).to_vec());
            assert!((y.norm() - theta.norm()).abs() < 1e-12);
            let oc = orbit_correlation(&y.normalized(), theta).unwrap();
            assert!((oc.orbit_max - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        let s = SignalSet::random_gaussian(4, 2, 6).unwrap();
        let a = sample_observations(&s, 0.3, 3000, 11, Exec::Parallel).unwrap();
        let b = sample_observations(&s, 0.3, 3000, 11, Exec::Sequential).unwrap();
        assert_eq!(a, b);
        assert!(sample_observations(&s, -1.0, 3, 11, Exec::Sequential).is_err());
    }

    #[test]
    fn single_noiseless_sample_moment() {
        let s = SignalSet::random_gaussian(4, 1, 7).unwrap();
        let batch = sample_observations(&s, 0.0, 1, 3, Exec::Sequential).unwrap();
        let m = empirical_third_moment(&batch, Exec::Sequential).unwrap();
        let g = apply_rotation(&s.signals()[0], batch.rotations[0]);
        let rotated = SignalSet::new(vec![g]).unwrap();
        let want = exact_moment(&rotated, 3, Normalization::SumOverK).unwrap();
        // A single sample has off-support mass; compare the full cube.
        let p = 4;
        for k1 in 0..p {
            for k2 in 0..p {
                for k3 in 0..p {
                    let c = rotated.signals()[0].coeffs();
                    let full = c[k1] * c[k2] * c[k3];
                    assert!((m.fourier.get(&[k1, k2, k3]) - full).norm() < 1e-12);
                }
            }
        }
        assert!((m.zero_sum.to_dense().data().iter().zip(want.data()).fold(0.0f64, |a, (x, y)| a.max((x - y).norm()))) < 1e-12);
        assert!(empirical_third_moment(&ObservationBatch { p, sigma: 0.0, seed: 0, samples: vec![], rotations: vec![], labels: vec![] }, Exec::Sequential).is_err());
    }

    #[test]
    fn moment_error_examples() {
        let a = ComplexTensor::zeros(&[2, 2, 2]);
        assert_eq!(moment_error(&a, &a).unwrap(), 0.0);
        let mut b = a.clone();
        b.set(&[1, 0, 1], C64::new(0.25, 0.0));
        assert_eq!(moment_error(&b, &a).unwrap(), 0.25);
        assert!(moment_error(&a, &ComplexTensor::zeros(&[2, 2])).is_err());
    }
}
