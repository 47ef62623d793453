//! Assembly of `M(T, u)`, two-stage eigenvector extraction, list recovery and
//! the diagnostics around them.

use crate::correction::CorrectionTable;
use crate::moments::{SignalSet, ZeroSumTensor3};
use crate::ring::{precompute_G, ring_contract, ring_contract_separable, GTable, VertexWeightTable};
use crate::tensor::{
    dot, fix_sign, from_fourier, leading_eigenvector, spectral_norm, symmetrize, ComplexMatrix, ComplexTensor, EigenMethod,
    EigenMode, EigenOptions, FourierVector, Matrix, RealMatrix, RealTensor, RealVector,
};
use crate::{rng, Error, Exec, Result, C64};
use serde::{Deserialize, Serialize};
use std::time::Instant;

/// Relative tolerance on the imaginary part of `M` after the basis change.
pub const IMAGINARY_TOL: f64 = 1e-9;

/// The order-5 tensor `u` in the Fourier basis.
#[derive(Clone, Debug)]
pub enum UInput {
    Dense(ComplexTensor),
    /// `û = φ1 ⊗ φ2 ⊗ φ3 ⊗ φ4 ⊗ φ5`.
    Separable([FourierVector; 5]),
}

impl UInput {
    pub fn from_real(u: &RealTensor) -> Result<Self> {
        Ok(UInput::Dense(fourier_u(u)?))
    }

    /// `û = θ̂^⊗5`, i.e. `u = θ^⊗5`.
    pub fn planted(theta: &FourierVector) -> Self {
        UInput::Separable(std::array::from_fn(|_| theta.clone()))
    }
}

/// Per-mode basis change of a real order-5 tensor.
pub fn fourier_u(u: &RealTensor) -> Result<ComplexTensor> {
    let p = u.shape().first().copied().unwrap_or(0);
    if u.shape() != [p; 5] || p == 0 {
        return Err(Error::Shape(format!("u must be an order-5 cube, got {:?}", u.shape())));
    }
    Ok(u.to_complex().to_fourier_modes())
}

/// `M̂(T, u)` in the Fourier basis.
pub fn build_m_hat(t: &ZeroSumTensor3, u: &UInput, s: &CorrectionTable, exec: Exec) -> Result<ComplexMatrix> {
    let wt = VertexWeightTable::new(t);
    match u {
        UInput::Dense(u_hat) => ring_contract(&wt, u_hat, s, exec),
        UInput::Separable(f) => {
            if f.iter().any(|x| x.p() != t.p()) {
                return Err(Error::Shape("factor length differs from p".into()));
            }
            ring_contract_separable(&wt, std::array::from_fn(|k| f[k].coeffs()), s, exec)
        }
    }
}

/// `(Δ⊗Δ) M̂ (Δ⊗Δ)ᵀ`, failing if the result has an imaginary part above
/// [`IMAGINARY_TOL`] relative to its largest entry.
pub fn to_real_basis(m_hat: &ComplexMatrix) -> Result<RealMatrix> {
    let n = m_hat.rows();
    let p = (n as f64).sqrt().round() as usize;
    if p * p != n || m_hat.cols() != n {
        return Err(Error::Shape(format!("expected a p²×p² matrix, got {}x{}", m_hat.rows(), m_hat.cols())));
    }
    let t = ComplexTensor::from_vec(&[p; 4], m_hat.data().to_vec())?.to_real_modes();
    let scale = t.max_abs();
    let residue = t.max_imag();
    if residue > IMAGINARY_TOL * scale {
        return Err(Error::ImaginaryResidue { residue: residue / scale });
    }
    Matrix::from_vec(n, n, t.data().iter().map(|z| z.re).collect())
}

/// `M(T, u)` for a real order-5 `u`.
pub fn build_m(t: &ZeroSumTensor3, u: &RealTensor, s: &CorrectionTable, exec: Exec) -> Result<RealMatrix> {
    build_m_from(t, &UInput::from_real(u)?, s, exec)
}

pub fn build_m_from(t: &ZeroSumTensor3, u: &UInput, s: &CorrectionTable, exec: Exec) -> Result<RealMatrix> {
    to_real_basis(&build_m_hat(t, u, s, exec)?)
}

/// `(θ⊗θ)(θ⊗θ)ᵀ` in the real basis.
pub fn rank_one_target(theta: &RealVector) -> RealMatrix {
    let p = theta.p();
    let w: Vec<f64> = (0..p * p).map(|k| theta.0[k / p] * theta.0[k % p]).collect();
    RealMatrix::outer(&w, &w)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Stage {
    pub mode: EigenMode,
    pub value: f64,
    pub method: EigenMethod,
    pub iterations: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Candidate {
    pub tau: RealVector,
    /// Leading eigenvector of the symmetrized `M`, length p².
    pub v: Vec<f64>,
    pub stage1: Stage,
    pub stage2: Stage,
    /// `M` had no nonzero entries; `tau` is an arbitrary unit vector.
    pub zero_matrix: bool,
    /// The two extreme eigenvalues of `½(V + Vᵀ)` have equal magnitude to 1e-12.
    pub degenerate: bool,
    /// The candidate not returned when `degenerate`.
    pub alternate: Option<RealVector>,
}

pub fn extract_candidate(m: &RealMatrix, opts: &EigenOptions) -> Result<Candidate> {
    let n = m.rows();
    let p = (n as f64).sqrt().round() as usize;
    if p * p != n || m.cols() != n {
        return Err(Error::Shape(format!("expected a p²×p² matrix, got {}x{}", m.rows(), m.cols())));
    }
    if m.data().iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidArgument("matrix has non-finite entries".into()));
    }
    let zero_matrix = m.max_abs() == 0.0;
    let e1 = leading_eigenvector(&symmetrize(m)?, EigenMode::LargestAlgebraic, opts)?;
    let v_mat = Matrix::from_vec(p, p, e1.vector.clone())?;
    let vs = symmetrize(&v_mat)?;
    let e2 = leading_eigenvector(&vs, EigenMode::LargestAbsolute, opts)?;
    let top = leading_eigenvector(&vs, EigenMode::LargestAlgebraic, opts)?;
    let bottom = leading_eigenvector(&vs.scale(-1.0), EigenMode::LargestAlgebraic, opts)?;
    let degenerate = (top.value.abs() - bottom.value.abs()).abs() <= 1e-12;
    let (tau, alternate, value) = if degenerate {
        let (x, y) = (top.vector, bottom.vector);
        if lexicographic_ge(&x, &y) {
            (x, Some(y), top.value)
        } else {
            (y, Some(x), -bottom.value)
        }
    } else {
        (e2.vector, None, e2.value)
    };
    Ok(Candidate {
        tau: RealVector(tau),
        v: e1.vector,
        stage1: Stage { mode: EigenMode::LargestAlgebraic, value: e1.value, method: e1.method, iterations: e1.iterations },
        stage2: Stage { mode: EigenMode::LargestAbsolute, value, method: e2.method, iterations: e2.iterations },
        zero_matrix,
        degenerate,
        alternate: alternate.map(RealVector),
    })
}

fn lexicographic_ge(x: &[f64], y: &[f64]) -> bool {
    for (a, b) in x.iter().zip(y) {
        if a != b {
            return a > b;
        }
    }
    true
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct OrbitCorrelation {
    /// `max_g ⟨τ, g·θ⟩² / (‖τ‖²‖θ‖²)`.
    pub orbit_max: f64,
    /// `⟨τ, θ⟩² / (‖τ‖²‖θ‖²)`.
    pub raw: f64,
    /// Maximizing rotation angle in `[0, 2π)`.
    pub angle: f64,
}

const GRID: usize = 1024;

pub fn orbit_correlation(tau: &RealVector, theta: &RealVector) -> Result<OrbitCorrelation> {
    if tau.p() != theta.p() {
        return Err(Error::Shape(format!("lengths {} and {} differ", tau.p(), theta.p())));
    }
    let (nt, nth) = (tau.norm(), theta.norm());
    if nth == 0.0 {
        return Err(Error::InvalidArgument("cannot correlate against a zero signal".into()));
    }
    if nt == 0.0 {
        return Err(Error::InvalidArgument("cannot correlate a zero candidate".into()));
    }
    let ft = crate::tensor::to_fourier(tau)?;
    let fth = crate::tensor::to_fourier(theta)?;
    let fs = ft.space();
    // ⟨τ, gθ⟩ = Σ_j conj(τ̂_j) e^{ijg} θ̂_j, a real trigonometric polynomial.
    let terms: Vec<(f64, C64)> = (0..fs.p()).map(|k| (fs.freq(k) as f64, ft.coeffs()[k].conj() * fth.coeffs()[k])).collect();
    let f2 = |g: f64| {
        let s: C64 = terms.iter().map(|(j, c)| c * C64::from_polar(1.0, j * g)).sum();
        s.re * s.re
    };
    let step = std::f64::consts::TAU / GRID as f64;
    let mut best = 0;
    let mut best_val = f64::NEG_INFINITY;
    for k in 0..GRID {
        let v = f2(k as f64 * step);
        if v > best_val {
            best_val = v;
            best = k;
        }
    }
    let (mut lo, mut hi) = ((best as f64 - 1.0) * step, (best as f64 + 1.0) * step);
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - phi * (hi - lo);
    let mut x2 = lo + phi * (hi - lo);
    let (mut f1, mut fx2) = (f2(x1), f2(x2));
    while hi - lo > 1e-8 {
        if f1 >= fx2 {
            hi = x2;
            x2 = x1;
            fx2 = f1;
            x1 = hi - phi * (hi - lo);
            f1 = f2(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = fx2;
            x2 = lo + phi * (hi - lo);
            fx2 = f2(x2);
        }
    }
    let g = 0.5 * (lo + hi);
    let (val, angle) = if f2(g) >= best_val { (f2(g), g) } else { (best_val, best as f64 * step) };
    let denom = nt * nt * nth * nth;
    let raw = dot(&tau.0, &theta.0).powi(2) / denom;
    Ok(OrbitCorrelation { orbit_max: (val / denom).min(1.0), raw, angle: angle.rem_euclid(std::f64::consts::TAU) })
}

/// How `u` is chosen per trial.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum UMode {
    /// `u ~ N(0, I_{p⁵})`.
    Gaussian,
    /// `u = alpha·(θᵏ)^⊗5 + noise·N(0, I_{p⁵})` for `k = signal`.
    Planted { signal: usize, alpha: f64, noise: f64 },
}

#[derive(Clone, Debug)]
pub struct RecoveryConfig {
    pub trials: usize,
    pub seed: u64,
    pub u_mode: UMode,
    /// Byte cap for the cached `u`-independent table; `0` disables it.
    pub mem_cap: u64,
    pub eigen: EigenOptions,
}

impl Default for RecoveryConfig {
    fn default() -> Self {
        RecoveryConfig { trials: 1, seed: 0, u_mode: UMode::Gaussian, mem_cap: 1 << 30, eigen: EigenOptions::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrialDiagnostics {
    pub trial: usize,
    pub seed: u64,
    /// `⟨u, (θᵏ)^⊗5⟩ / ‖θᵏ‖⁵` per true signal, when signals are known.
    pub alpha_tilde: Vec<f64>,
    pub stage1: Stage,
    pub stage2: Stage,
    pub zero_matrix: bool,
    pub degenerate: bool,
    pub raw_correlation: Vec<f64>,
    pub orbit_correlation: Vec<f64>,
    pub millis: f64,
}

#[derive(Clone, Debug)]
pub struct RecoveryResult {
    pub candidates: Vec<RealVector>,
    pub diagnostics: Vec<TrialDiagnostics>,
    /// Whether the cached table path was used.
    pub cached_table: bool,
}

fn gaussian_u(p: usize, seed: u64, trial: u64) -> Result<RealTensor> {
    let mut r = rng::stream(seed, "u", trial);
    RealTensor::from_vec(&[p; 5], rng::gaussian_vec(&mut r, p.pow(5), 1.0))
}

/// `⟨u, θ^⊗5⟩` for real `u` and `θ`.
fn contract_five(u: &RealTensor, theta: &[f64]) -> f64 {
    let mut cur = u.data().to_vec();
    for _ in 0..5 {
        cur = cur.chunks(theta.len()).map(|c| dot(c, theta)).collect();
    }
    cur[0]
}

/// Draws `trials` independent `u`, builds `M`, and extracts one candidate
/// from each. Output order is by trial index.
pub fn list_recovery(
    t: &ZeroSumTensor3,
    s: &CorrectionTable,
    config: &RecoveryConfig,
    truth: Option<&SignalSet>,
    exec: Exec,
) -> Result<RecoveryResult> {
    let p = t.p();
    if config.trials == 0 {
        return Err(Error::InvalidArgument("need at least one trial".into()));
    }
    let truth_real: Option<Vec<RealVector>> = truth.map(|sg| sg.real()).transpose()?;
    let planted = match config.u_mode {
        UMode::Gaussian => None,
        UMode::Planted { signal, alpha, noise } => {
            let sg = truth.ok_or_else(|| Error::InvalidArgument("planted u needs the true signals".into()))?;
            let th = sg
                .signals()
                .get(signal)
                .ok_or_else(|| Error::InvalidArgument(format!("no signal {signal} to plant")))?;
            Some((build_m_from(t, &UInput::planted(th), s, exec)?, signal, alpha, noise))
        }
    };
    let needs_dense = match config.u_mode {
        UMode::Gaussian => true,
        UMode::Planted { noise, .. } => noise != 0.0,
    };
    let g: Option<GTable> = if needs_dense && config.trials > 1 && config.mem_cap > 0 {
        match precompute_G(&VertexWeightTable::new(t), s, config.mem_cap, exec) {
            Ok(g) => Some(g),
            Err(Error::OverBudget { .. }) => None,
            Err(e) => return Err(e),
        }
    } else {
        None
    };
    let wt = VertexWeightTable::new(t);

    let run = |trial: usize, inner: Exec| -> Result<(RealVector, TrialDiagnostics)> {
        let start = Instant::now();
        let u = if needs_dense { Some(gaussian_u(p, config.seed, trial as u64)?) } else { None };
        let dense_m = match &u {
            Some(u) => {
                let u_hat = fourier_u(u)?;
                let m_hat = match &g {
                    Some(g) => g.apply(&u_hat, inner)?,
                    None => ring_contract(&wt, &u_hat, s, inner)?,
                };
                Some(to_real_basis(&m_hat)?)
            }
            None => None,
        };
        let m = match (&planted, dense_m) {
            (None, Some(m)) => m,
            (Some((mp, _, alpha, noise)), dm) => {
                let mut m = mp.scale(*alpha);
                if let Some(dm) = dm {
                    m.data_mut().iter_mut().zip(dm.data()).for_each(|(a, b)| *a += noise * b);
                }
                m
            }
            (None, None) => unreachable!("gaussian mode always draws u"),
        };
        let cand = extract_candidate(&m, &config.eigen)?;
        let mut alpha_tilde = Vec::new();
        let mut raw_correlation = Vec::new();
        let mut orbit = Vec::new();
        if let Some(ths) = &truth_real {
            for th in ths {
                let n5 = th.norm().powi(5);
                let from_noise = u.as_ref().map_or(0.0, |u| contract_five(u, &th.0) / n5);
                alpha_tilde.push(match planted {
                    None => from_noise,
                    // ⟨θˢ^⊗5, θᵏ^⊗5⟩ = ⟨θˢ, θᵏ⟩⁵
                    Some((_, sig, alpha, noise)) => alpha * dot(&ths[sig].0, &th.0).powi(5) / n5 + noise * from_noise,
                });
                let oc = orbit_correlation(&cand.tau, th)?;
                raw_correlation.push(oc.raw);
                orbit.push(oc.orbit_max);
            }
        }
        let diag = TrialDiagnostics {
            trial,
            seed: config.seed,
            alpha_tilde,
            stage1: cand.stage1.clone(),
            stage2: cand.stage2.clone(),
            zero_matrix: cand.zero_matrix,
            degenerate: cand.degenerate,
            raw_correlation,
            orbit_correlation: orbit,
            millis: start.elapsed().as_secs_f64() * 1e3,
        };
        Ok((cand.tau, diag))
    };

    // Parallelize across trials; each trial then runs its kernels sequentially.
    let results = if config.trials > 1 {
        exec.map(config.trials, |i| run(i, Exec::Sequential))
    } else {
        vec![run(0, exec)]
    };
    let mut candidates = Vec::with_capacity(config.trials);
    let mut diagnostics = Vec::with_capacity(config.trials);
    for (trial, r) in results.into_iter().enumerate() {
        let (c, d) = r.map_err(|e| Error::Trial { trial, source: Box::new(e) })?;
        candidates.push(c);
        diagnostics.push(d);
    }
    Ok(RecoveryResult { candidates, diagnostics, cached_table: g.is_some() })
}

/// `‖M(T, (θᵏ)^⊗5) − M(Tᵏ, (θᵏ)^⊗5)‖_F`.
pub fn het_signal_gap(t: &ZeroSumTensor3, t_k: &ZeroSumTensor3, theta_k: &FourierVector, s: &CorrectionTable, exec: Exec) -> Result<f64> {
    let u = UInput::planted(theta_k);
    let a = build_m_from(t, &u, s, exec)?;
    let b = build_m_from(t_k, &u, s, exec)?;
    Ok(a.sub(&b)?.frobenius())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScalingReport {
    pub magnitudes: Vec<f64>,
    /// `‖M(T + E, u) − M(T, u)‖` (spectral norm) per magnitude.
    pub differences: Vec<f64>,
    /// Least-squares slope of log difference against log magnitude.
    pub slope: f64,
    pub intercept: f64,
    /// Largest `difference / (K⁸ p⁴ ‖E‖_∞)`.
    pub constant: f64,
}

/// A symmetric real order-3 tensor of random signs.
pub fn sign_perturbation(p: usize, seed: u64) -> RealTensor {
    use rand::Rng;
    let mut r = rng::stream(seed, "perturbation", 0);
    let mut t = RealTensor::zeros(&[p, p, p]);
    for i in 0..p {
        for j in i..p {
            for k in j..p {
                let s = if r.random::<bool>() { 1.0 } else { -1.0 };
                for [a, b, c] in [[i, j, k], [i, k, j], [j, i, k], [j, k, i], [k, i, j], [k, j, i]] {
                    t.set(&[a, b, c], s);
                }
            }
        }
    }
    t
}

/// Adds `mag·E` (E a real-basis sign tensor) to `T` in the Fourier basis,
/// keeping the zero-sum part.
pub fn perturb(t: &ZeroSumTensor3, e: &RealTensor, mag: f64) -> Result<ZeroSumTensor3> {
    let e_hat = e.to_complex().to_fourier_modes();
    let (proj, _) = ZeroSumTensor3::from_dense(&e_hat)?;
    t.add(&proj.scale(mag))
}

pub fn error_term_scaling(
    t: &ZeroSumTensor3,
    magnitudes: &[f64],
    u: &UInput,
    s: &CorrectionTable,
    k: usize,
    seed: u64,
    exec: Exec,
) -> Result<ScalingReport> {
    let p = t.p();
    let base = build_m_from(t, u, s, exec)?;
    let e = sign_perturbation(p, seed);
    let mut differences = Vec::with_capacity(magnitudes.len());
    for &mag in magnitudes {
        let m = build_m_from(&perturb(t, &e, mag)?, u, s, exec)?;
        differences.push(spectral_norm(&m.sub(&base)?)?);
    }
    let pts: Vec<(f64, f64)> = magnitudes
        .iter()
        .zip(&differences)
        .filter(|(m, d)| **m > 0.0 && **d > 0.0)
        .map(|(m, d)| (m.ln(), d.ln()))
        .collect();
    let (slope, intercept) = fit_line(&pts);
    let scale = (k as f64).powi(8) * (p as f64).powi(4);
    let constant = magnitudes
        .iter()
        .zip(&differences)
        .filter(|(m, _)| **m > 0.0)
        .fold(0.0, |c: f64, (m, d)| c.max(d / (scale * m)));
    Ok(ScalingReport { magnitudes: magnitudes.to_vec(), differences, slope, intercept, constant })
}

/// Least-squares line through `(x, y)` points; NaN with fewer than two.
pub fn fit_line(pts: &[(f64, f64)]) -> (f64, f64) {
    let n = pts.len() as f64;
    if pts.len() < 2 {
        return (f64::NAN, f64::NAN);
    }
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

/// Checkable parts of the "good signals" event for each signal.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SignalReport {
    pub norm: f64,
    /// `√p·|‖θ‖ − 1|`; stays O(polylog p) for typical draws.
    pub norm_deviation: f64,
    /// `max_j |θ̂_j|·√(p / log p)`.
    pub max_coefficient: f64,
    /// `min_j |θ̂_j|·√p`.
    pub min_coefficient: f64,
}

pub fn signal_reports(signals: &SignalSet) -> Vec<SignalReport> {
    let p = signals.p() as f64;
    signals
        .signals()
        .iter()
        .map(|th| {
            let norm = th.norm();
            let mags = th.coeffs().iter().map(|c| c.norm());
            let max = mags.clone().fold(0.0, f64::max);
            let min = mags.fold(f64::INFINITY, f64::min);
            SignalReport {
                norm,
                norm_deviation: p.sqrt() * (norm - 1.0).abs(),
                max_coefficient: max * (p / p.ln().max(1.0)).sqrt(),
                min_coefficient: min * p.sqrt(),
            }
        })
        .collect()
}

/// Real signal from Fourier coefficients, normalized.
pub fn unit_real(theta: &FourierVector) -> Result<RealVector> {
    Ok(from_fourier(theta)?.normalized())
}

/// Sign-normalized copy (largest-magnitude entry positive).
pub fn canonical_sign(v: &RealVector) -> RealVector {
    let mut x = v.0.clone();
    fix_sign(&mut x);
    RealVector(x)
}
