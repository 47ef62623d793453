//! Closed-form and comparison methods: frequency marching for the one-signal
//! problem, four tensor-PCA spectral estimators, and the overcomplete
//! decomposition matrix `Σ T_acj T_bdk T_ijk u_i`.

use crate::network::{builtin, contract};
use crate::tensor::{
    dot, flatten4, leading_eigenvector, symmetrize, ComplexTensor, EigenMode, EigenOptions, FourierVector, FreqSpace,
    Matrix, RealMatrix, RealTensor, RealVector,
};
use crate::{rng, Error, Result, C64};
use std::collections::HashMap;

/// Power-spectrum entries below this magnitude stop frequency marching.
pub const VANISHING_TOL: f64 = 1e-10;

/// Recovers `θ̂` (up to rotation) from its second and third moments in the
/// Fourier basis, pinning the phase of `θ̂_1` to zero.
///
/// Phase of frequency `j ≥ 3` comes from the entry at `(−1, −(j−1), j)`. The
/// text only spells out `j = 2, 3`; the general pattern is the obvious one.
pub fn frequency_marching(t2: &ComplexTensor, t3: &ComplexTensor) -> Result<FourierVector> {
    let p = t2.shape().first().copied().unwrap_or(0);
    if t2.shape() != [p, p] || t3.shape() != [p, p, p] {
        return Err(Error::Shape(format!("expected p×p and p×p×p moments, got {:?} and {:?}", t2.shape(), t3.shape())));
    }
    let fs = FreqSpace::new(p)?;
    let h = fs.half();
    let ix = |f: i32| fs.index(f).expect("frequency in range");
    let mut mag = vec![0.0; h as usize + 1];
    for j in 1..=h {
        let power = t2.get(&[ix(j), ix(-j)]).re;
        let m = power.max(0.0).sqrt();
        if m < VANISHING_TOL {
            return Err(Error::VanishingSpectrum { freq: j, magnitude: m });
        }
        mag[j as usize] = m;
    }
    let mut phase = vec![0.0; h as usize + 1];
    if h >= 2 {
        phase[2] = t3.get(&[ix(-1), ix(-1), ix(2)]).arg() + 2.0 * phase[1];
    }
    for j in 3..=h {
        let ju = j as usize;
        phase[ju] = t3.get(&[ix(-1), ix(-(j - 1)), ix(j)]).arg() + phase[1] + phase[ju - 1];
    }
    let mut coeffs = vec![C64::new(0.0, 0.0); p];
    for j in 1..=h {
        let z = C64::from_polar(mag[j as usize], phase[j as usize]);
        coeffs[ix(j)] = z;
        coeffs[ix(-j)] = z.conj();
    }
    FourierVector::new(coeffs)
}

/// `T = λ x^⊗3 + W` with `‖x‖ = 1` and `W` i.i.d. standard Gaussian.
#[derive(Clone, Debug, PartialEq)]
pub struct PcaInstance {
    pub p: usize,
    pub lambda: f64,
    pub x: RealVector,
    pub t: RealTensor,
}

impl PcaInstance {
    pub fn random(p: usize, lambda: f64, seed: u64, draw: u64) -> Result<Self> {
        if p == 0 {
            return Err(Error::InvalidArgument("p must be positive".into()));
        }
        let x = RealVector(rng::unit_vec(&mut rng::stream(seed, "pca-signal", draw), p));
        let w = rng::gaussian_vec(&mut rng::stream(seed, "pca-noise", draw), p * p * p, 1.0);
        Self::with_noise(x, lambda, w)
    }

    pub fn noiseless(x: RealVector, lambda: f64) -> Result<Self> {
        let p = x.p();
        Self::with_noise(x, lambda, vec![0.0; p * p * p])
    }

    fn with_noise(x: RealVector, lambda: f64, mut w: Vec<f64>) -> Result<Self> {
        let p = x.p();
        if (x.norm() - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument("planted vector must be a unit vector".into()));
        }
        for a in 0..p {
            for b in 0..p {
                for c in 0..p {
                    w[(a * p + b) * p + c] += lambda * x.0[a] * x.0[b] * x.0[c];
                }
            }
        }
        Ok(PcaInstance { p, lambda, x, t: RealTensor::from_vec(&[p; 3], w)? })
    }

    /// `⟨est, x⟩²` for a unit estimate.
    pub fn correlation(&self, est: &RealVector) -> f64 {
        let n = est.norm();
        if n == 0.0 {
            return 0.0;
        }
        (dot(&est.0, &self.x.0) / n).powi(2)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PcaMethod {
    Unfolding,
    SpectralSos,
    PartialTrace,
    HomotopyInit,
}

impl PcaMethod {
    pub const ALL: [PcaMethod; 4] = [PcaMethod::Unfolding, PcaMethod::SpectralSos, PcaMethod::PartialTrace, PcaMethod::HomotopyInit];

    pub fn name(self) -> &'static str {
        match self {
            PcaMethod::Unfolding => "unfolding",
            PcaMethod::SpectralSos => "spectral_sos",
            PcaMethod::PartialTrace => "partial_trace",
            PcaMethod::HomotopyInit => "homotopy_init",
        }
    }
}

/// Which evaluator builds the matrices.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Path {
    Loops,
    Network,
}

fn cube(t: &RealTensor) -> Result<usize> {
    let p = t.shape().first().copied().unwrap_or(0);
    if t.shape() != [p; 3] || p == 0 {
        return Err(Error::Shape(format!("expected an order-3 cube, got {:?}", t.shape())));
    }
    Ok(p)
}

fn run_network(text: &str, slots: &[(&str, ComplexTensor)]) -> Result<ComplexTensor> {
    let net = builtin::load(text);
    let map: HashMap<String, ComplexTensor> = slots.iter().map(|(k, v)| (k.to_string(), v.clone())).collect();
    contract(&net, &map)
}

fn real_matrix(t: &ComplexTensor, rows: usize, cols: usize) -> Result<RealMatrix> {
    Matrix::from_vec(rows, cols, t.data().iter().map(|z| z.re).collect())
}

/// `T̃T̃ᵀ` where `T̃` is the p × p² flattening.
pub fn unfolding_matrix(t: &RealTensor, path: Path) -> Result<RealMatrix> {
    let p = cube(t)?;
    match path {
        Path::Loops => {
            let d = t.data();
            let p2 = p * p;
            Ok(Matrix::from_fn(p, p, |a, b| dot(&d[a * p2..(a + 1) * p2], &d[b * p2..(b + 1) * p2])))
        }
        Path::Network => real_matrix(&run_network(builtin::UNFOLDING, &[("T", t.to_complex())])?, p, p),
    }
}

/// `Σ_i T_i ⊗ T_i` as a p² × p² matrix with rows `(a, c)` and columns `(b, d)`.
pub fn spectral_sos_matrix(t: &RealTensor, path: Path) -> Result<RealMatrix> {
    let p = cube(t)?;
    match path {
        Path::Loops => {
            let d = t.data();
            let mut m = RealMatrix::zeros(p * p, p * p);
            for i in 0..p {
                let slice = &d[i * p * p..(i + 1) * p * p];
                for a in 0..p {
                    for c in 0..p {
                        for b in 0..p {
                            let x = slice[a * p + b];
                            if x == 0.0 {
                                continue;
                            }
                            let row = a * p + c;
                            for dd in 0..p {
                                let v = m.get(row, b * p + dd) + x * slice[c * p + dd];
                                m.set(row, b * p + dd, v);
                            }
                        }
                    }
                }
            }
            Ok(m)
        }
        Path::Network => {
            let c = run_network(builtin::SPECTRAL_SOS, &[("T", t.to_complex())])?;
            let m = flatten4(&c, [0, 1], [2, 3])?;
            Ok(m.map(|z| z.re))
        }
    }
}

/// `Σ_i Tr(T_i) T_i`.
pub fn partial_trace_matrix(t: &RealTensor, path: Path) -> Result<RealMatrix> {
    let p = cube(t)?;
    match path {
        Path::Loops => {
            let d = t.data();
            let mut m = RealMatrix::zeros(p, p);
            for i in 0..p {
                let slice = &d[i * p * p..(i + 1) * p * p];
                let tr: f64 = (0..p).map(|l| slice[l * p + l]).sum();
                m.data_mut().iter_mut().zip(slice).for_each(|(a, b)| *a += tr * b);
            }
            Ok(m)
        }
        Path::Network => real_matrix(&run_network(builtin::PARTIAL_TRACE, &[("T", t.to_complex())])?, p, p),
    }
}

/// `z_j = Σ_i T_iij`.
pub fn homotopy_vector(t: &RealTensor, path: Path) -> Result<Vec<f64>> {
    let p = cube(t)?;
    match path {
        Path::Loops => Ok((0..p).map(|j| (0..p).map(|i| t.get(&[i, i, j])).sum()).collect()),
        Path::Network => Ok(run_network(builtin::HOMOTOPY_INIT, &[("T", t.to_complex())])?.data().iter().map(|z| z.re).collect()),
    }
}

pub fn pca_unfolding(t: &RealTensor, path: Path) -> Result<RealVector> {
    let m = unfolding_matrix(t, path)?;
    Ok(RealVector(leading_eigenvector(&symmetrize(&m)?, EigenMode::LargestAlgebraic, &EigenOptions::default())?.vector))
}

/// Top eigenvector of `Σ_i T_i ⊗ T_i`, reshaped to p × p, then its leading
/// eigenvector by magnitude.
pub fn pca_spectral_sos(t: &RealTensor, path: Path) -> Result<RealVector> {
    let p = cube(t)?;
    let opts = EigenOptions::default();
    let m = spectral_sos_matrix(t, path)?;
    let v = leading_eigenvector(&symmetrize(&m)?, EigenMode::LargestAlgebraic, &opts)?.vector;
    // v is indexed by (a, c); the planted part is x_a x_c.
    let vm = Matrix::from_vec(p, p, v)?;
    Ok(RealVector(leading_eigenvector(&symmetrize(&vm)?, EigenMode::LargestAbsolute, &opts)?.vector))
}

pub fn pca_partial_trace(t: &RealTensor, path: Path) -> Result<RealVector> {
    let m = partial_trace_matrix(t, path)?;
    Ok(RealVector(leading_eigenvector(&symmetrize(&m)?, EigenMode::LargestAbsolute, &EigenOptions::default())?.vector))
}

/// Returns `(z, z/‖z‖)`; the normalized copy is zero when `z` is.
pub fn pca_homotopy_init(t: &RealTensor, path: Path) -> Result<(Vec<f64>, RealVector)> {
    let z = homotopy_vector(t, path)?;
    let n = dot(&z, &z).sqrt();
    let unit = if n > 0.0 { z.iter().map(|x| x / n).collect() } else { vec![0.0; z.len()] };
    Ok((z, RealVector(unit)))
}

pub fn pca_estimate(method: PcaMethod, t: &RealTensor, path: Path) -> Result<RealVector> {
    match method {
        PcaMethod::Unfolding => pca_unfolding(t, path),
        PcaMethod::SpectralSos => pca_spectral_sos(t, path),
        PcaMethod::PartialTrace => pca_partial_trace(t, path),
        PcaMethod::HomotopyInit => Ok(pca_homotopy_init(t, path)?.1),
    }
}

/// `M_{ab,cd} = Σ_{ijk} T_acj T_bdk T_ijk u_i` by direct loops.
pub fn hsss_matrix(t: &RealTensor, u: &[f64]) -> Result<RealMatrix> {
    let p = cube(t)?;
    if u.len() != p {
        return Err(Error::Shape(format!("u has length {}, expected {p}", u.len())));
    }
    let d = t.data();
    let at = |a: usize, b: usize, c: usize| d[(a * p + b) * p + c];
    // y_jk = Σ_i u_i T_ijk
    let mut y = vec![0.0; p * p];
    for (i, &ui) in u.iter().enumerate() {
        for (yy, tt) in y.iter_mut().zip(&d[i * p * p..(i + 1) * p * p]) {
            *yy += ui * tt;
        }
    }
    // z_ack = Σ_j T_acj y_jk
    let mut z = vec![0.0; p * p * p];
    for ac in 0..p * p {
        for j in 0..p {
            let x = d[ac * p + j];
            for k in 0..p {
                z[ac * p + k] += x * y[j * p + k];
            }
        }
    }
    let mut m = RealMatrix::zeros(p * p, p * p);
    for a in 0..p {
        for c in 0..p {
            for b in 0..p {
                for dd in 0..p {
                    let v: f64 = (0..p).map(|k| z[(a * p + c) * p + k] * at(b, dd, k)).sum();
                    m.set(a * p + b, c * p + dd, v);
                }
            }
        }
    }
    Ok(m)
}

/// The same matrix through the generic network executor.
pub fn hsss_matrix_network(t: &RealTensor, u: &[f64]) -> Result<RealMatrix> {
    let p = cube(t)?;
    if u.len() != p {
        return Err(Error::Shape(format!("u has length {}, expected {p}", u.len())));
    }
    let uc = RealTensor::from_vec(&[p], u.to_vec())?.to_complex();
    let c = run_network(builtin::HSSS, &[("T", t.to_complex()), ("u", uc)])?;
    Ok(flatten4(&c, [0, 1], [2, 3])?.map(|z| z.re))
}

/// `Σ_{l,m} ⟨u, T̃(a_l ⊗ a_m)⟩ (a_l ⊗ a_m)(a_l ⊗ a_m)ᵀ` for `T = Σ_n a_n^⊗3`,
/// where `⟨u, T̃(a_l ⊗ a_m)⟩ = Σ_n ⟨u, a_n⟩⟨a_n, a_l⟩⟨a_n, a_m⟩`.
pub fn hsss_from_components(components: &[Vec<f64>], u: &[f64]) -> Result<RealMatrix> {
    let p = u.len();
    if components.iter().any(|a| a.len() != p) {
        return Err(Error::Shape("component length differs from u".into()));
    }
    let r = components.len();
    let ua: Vec<f64> = components.iter().map(|a| dot(u, a)).collect();
    let gram: Vec<f64> = (0..r * r).map(|k| dot(&components[k / r], &components[k % r])).collect();
    let mut m = RealMatrix::zeros(p * p, p * p);
    for l in 0..r {
        for mm in 0..r {
            let coef: f64 = (0..r).map(|n| ua[n] * gram[n * r + l] * gram[n * r + mm]).sum();
            let w: Vec<f64> = (0..p * p).map(|k| components[l][k / p] * components[mm][k % p]).collect();
            for (row, &wr) in w.iter().enumerate() {
                if wr == 0.0 {
                    continue;
                }
                for (col, &wc) in w.iter().enumerate() {
                    let v = m.get(row, col) + coef * wr * wc;
                    m.set(row, col, v);
                }
            }
        }
    }
    Ok(m)
}

/// `Σ_n a_n^⊗3`.
pub fn tensor_from_components(components: &[Vec<f64>]) -> Result<RealTensor> {
    let p = components.first().map_or(0, |a| a.len());
    let mut t = RealTensor::zeros(&[p; 3]);
    for a in components {
        if a.len() != p {
            return Err(Error::Shape("components differ in length".into()));
        }
        for i in 0..p {
            for j in 0..p {
                for k in 0..p {
                    t.data_mut()[(i * p + j) * p + k] += a[i] * a[j] * a[k];
                }
            }
        }
    }
    Ok(t)
}
