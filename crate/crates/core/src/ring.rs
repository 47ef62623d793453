//! Specialised contraction of the nine-vertex ring network.
//!
//! For legs `(a, b, c, d)` the ring visits spokes in the order
//! `x = (a, j1, c, j2, b, j3, d, j4, j5)`. Vertex `m` contributes
//! `W[x_m][i_m] = T̂_{-i_m, x_m, i_m - x_m}` and passes `i_{m+1} = i_m - x_m`
//! on, closing with `i_10 = i_1`. The five `j` spokes are contracted against
//! `û_{-j1,…,-j5}`.

use crate::correction::CorrectionTable;
use crate::moments::{SignalSet, ZeroSumTensor3};
use crate::tensor::{ComplexMatrix, ComplexTensor, FreqSpace, Matrix, NONE};
use crate::{Error, Exec, Result, C64};

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

/// `W[x][i] = T̂_{-i, x, i-x}`, zero when `i - x ∉ ±[p/2]`.
#[derive(Clone, Debug, PartialEq)]
pub struct VertexWeightTable {
    fs: FreqSpace,
    data: Vec<C64>,
}

impl VertexWeightTable {
    pub fn new(t: &ZeroSumTensor3) -> Self {
        let fs = t.space();
        let p = fs.p();
        let sub = fs.difference_table();
        let mut data = vec![ZERO; p * p];
        for x in 0..p {
            for i in 0..p {
                if sub[i * p + x] != NONE {
                    data[x * p + i] = t.pair(fs.neg(i), x);
                }
            }
        }
        VertexWeightTable { fs, data }
    }

    /// Builds the table from exact moments and checks it against the product
    /// form `Σ_k θ̂ᵏ_{-i} θ̂ᵏ_x θ̂ᵏ_{i-x}`.
    pub fn from_signals(signals: &SignalSet) -> Result<Self> {
        let t = ZeroSumTensor3::from_signals(signals, crate::moments::Normalization::SumOverK);
        let w = VertexWeightTable::new(&t);
        let r = w.residual_against(signals);
        let scale = w.data.iter().fold(1e-300, |m: f64, z| m.max(z.norm()));
        if r > 1e-12 * scale {
            return Err(Error::InvalidArgument(format!("vertex table disagrees with signals by {r:.3e}")));
        }
        Ok(w)
    }

    pub fn residual_against(&self, signals: &SignalSet) -> f64 {
        let fs = self.fs;
        let p = fs.p();
        let mut r: f64 = 0.0;
        for x in 0..p {
            for i in 0..p {
                let want: C64 = match fs.index(fs.freq(i) - fs.freq(x)) {
                    Some(ix) => signals.signals().iter().map(|th| th.coeffs()[fs.neg(i)] * th.coeffs()[x] * th.coeffs()[ix]).sum(),
                    None => ZERO,
                };
                r = r.max((self.data[x * p + i] - want).norm());
            }
        }
        r
    }

    pub fn p(&self) -> usize {
        self.fs.p()
    }

    pub fn space(&self) -> FreqSpace {
        self.fs
    }

    /// Row-major `[x * p + i]`.
    pub fn raw(&self) -> &[C64] {
        &self.data
    }

    pub fn get(&self, x: usize, i: usize) -> C64 {
        self.data[x * self.p() + i]
    }
}

/// Visits every admissible `(j1..j5)` of entry `(a, b, c, d)` summed over `i1`:
/// `f(j1234, j5, value)` where `j1234 = ((j1·p + j2)·p + j3)·p + j4`.
/// Values for the same `j1234` arrive once per `i1`.
#[inline(always)]
pub(crate) fn ring_paths<F: FnMut(usize, usize, C64)>(w: &[C64], sub: &[u8], p: usize, a: usize, b: usize, c: usize, d: usize, mut f: F) {
    for i1 in 0..p {
        let i2 = sub[i1 * p + a];
        if i2 == NONE {
            continue;
        }
        let i2 = i2 as usize;
        let w1 = w[a * p + i1];
        if w1 == ZERO {
            continue;
        }
        for j1 in 0..p {
            let i3 = sub[i2 * p + j1];
            if i3 == NONE {
                continue;
            }
            let i3 = i3 as usize;
            let i4 = sub[i3 * p + c];
            if i4 == NONE {
                continue;
            }
            let i4 = i4 as usize;
            let w3 = w1 * w[j1 * p + i2] * w[c * p + i3];
            if w3 == ZERO {
                continue;
            }
            for j2 in 0..p {
                let i5 = sub[i4 * p + j2];
                if i5 == NONE {
                    continue;
                }
                let i5 = i5 as usize;
                let i6 = sub[i5 * p + b];
                if i6 == NONE {
                    continue;
                }
                let i6 = i6 as usize;
                let w5 = w3 * w[j2 * p + i4] * w[b * p + i5];
                if w5 == ZERO {
                    continue;
                }
                let j12 = j1 * p + j2;
                for j3 in 0..p {
                    let i7 = sub[i6 * p + j3];
                    if i7 == NONE {
                        continue;
                    }
                    let i7 = i7 as usize;
                    let i8 = sub[i7 * p + d];
                    if i8 == NONE {
                        continue;
                    }
                    let i8 = i8 as usize;
                    let w7 = w5 * w[j3 * p + i6] * w[d * p + i7];
                    if w7 == ZERO {
                        continue;
                    }
                    let j123 = (j12 * p + j3) * p;
                    for j4 in 0..p {
                        let i9 = sub[i8 * p + j4];
                        if i9 == NONE {
                            continue;
                        }
                        let i9 = i9 as usize;
                        let j5 = sub[i9 * p + i1];
                        if j5 == NONE {
                            continue;
                        }
                        let j5 = j5 as usize;
                        f(j123 + j4, j5, w7 * w[j4 * p + i8] * w[j5 * p + i9]);
                    }
                }
            }
        }
    }
}

fn check_inputs(wt: &VertexWeightTable, s: &CorrectionTable) -> Result<()> {
    if s.p() != wt.p() {
        return Err(Error::Shape(format!("correction table has p={}, vertex table p={}", s.p(), wt.p())));
    }
    Ok(())
}

/// `M̂_{ab,cd} = S_abcd Σ û_{-j1…-j5} ∏ W[x_m][i_m]` as a p²×p² matrix with
/// row `a·p + b` and column `c·p + d`.
pub fn ring_contract(wt: &VertexWeightTable, u_hat: &ComplexTensor, s: &CorrectionTable, exec: Exec) -> Result<ComplexMatrix> {
    check_inputs(wt, s)?;
    let p = wt.p();
    if u_hat.shape() != [p; 5] {
        return Err(Error::Shape(format!("u must have shape {:?}, got {:?}", [p; 5], u_hat.shape())));
    }
    let sub = wt.fs.difference_table();
    let w = wt.raw();
    let u = u_hat.data();
    let last = u.len() - 1;
    let mut out = vec![ZERO; p * p * p * p];
    exec.fill(&mut out, |e| {
        let sv = s.raw()[e];
        if sv == 0.0 {
            return ZERO;
        }
        let (a, b, c, d) = (e / (p * p * p), (e / (p * p)) % p, (e / p) % p, e % p);
        let mut acc = ZERO;
        ring_paths(w, &sub, p, a, b, c, d, |j1234, j5, v| {
            // Negating every index of a flat multi-index reverses it.
            acc += v * u[last - (j1234 * p + j5)];
        });
        acc * sv
    });
    Matrix::from_vec(p * p, p * p, out)
}

/// The `u`-independent part of [`ring_contract`]: per entry, the list of
/// `(flat index into û, coefficient)` with `S` already applied.
#[derive(Clone, Debug)]
pub struct GTable {
    p: usize,
    entries: Vec<Vec<(u32, C64)>>,
}

impl GTable {
    /// Bytes a dense table would take, `p⁸` complex entries.
    pub fn dense_bytes(p: usize) -> u64 {
        (p as u64).pow(8) * 16
    }

    pub fn nonzeros(&self) -> usize {
        self.entries.iter().map(Vec::len).sum()
    }

    pub fn apply(&self, u_hat: &ComplexTensor, exec: Exec) -> Result<ComplexMatrix> {
        let p = self.p;
        if u_hat.shape() != [p; 5] {
            return Err(Error::Shape(format!("u must have shape {:?}, got {:?}", [p; 5], u_hat.shape())));
        }
        let u = u_hat.data();
        let mut out = vec![ZERO; p * p * p * p];
        exec.fill(&mut out, |e| self.entries[e].iter().map(|&(k, g)| g * u[k as usize]).sum());
        Matrix::from_vec(p * p, p * p, out)
    }
}

/// Refuses with [`Error::OverBudget`] when `p⁸` complex entries exceed `mem_cap` bytes.
#[allow(non_snake_case)]
pub fn precompute_G(wt: &VertexWeightTable, s: &CorrectionTable, mem_cap: u64, exec: Exec) -> Result<GTable> {
    check_inputs(wt, s)?;
    let p = wt.p();
    let needed = GTable::dense_bytes(p);
    if needed > mem_cap {
        return Err(Error::OverBudget { needed, cap: mem_cap });
    }
    let sub = wt.fs.difference_table();
    let w = wt.raw();
    let last = p.pow(5) - 1;
    let entries = exec.map(p * p * p * p, |e| {
        let sv = s.raw()[e];
        if sv == 0.0 {
            return Vec::new();
        }
        let (a, b, c, d) = (e / (p * p * p), (e / (p * p)) % p, (e / p) % p, e % p);
        let mut buf = vec![ZERO; p * p * p * p];
        let mut j5_of = vec![u8::MAX; p * p * p * p];
        ring_paths(w, &sub, p, a, b, c, d, |j1234, j5, v| {
            buf[j1234] += v;
            j5_of[j1234] = j5 as u8;
        });
        buf.iter()
            .zip(&j5_of)
            .enumerate()
            .filter(|(_, (v, _))| **v != ZERO)
            .map(|(j, (v, &j5))| ((last - (j * p + j5 as usize)) as u32, v * sv))
            .collect()
    });
    Ok(GTable { p, entries })
}

/// Same as [`ring_contract`] for a product `û = φ1 ⊗ … ⊗ φ5` (each factor a
/// length-p Fourier vector), evaluated as a trace of p×p transfer matrices.
/// Cost is about `2p⁶` instead of `p⁹`.
pub fn ring_contract_separable(wt: &VertexWeightTable, factors: [&[C64]; 5], s: &CorrectionTable, exec: Exec) -> Result<ComplexMatrix> {
    check_inputs(wt, s)?;
    let p = wt.p();
    if factors.iter().any(|f| f.len() != p) {
        return Err(Error::Shape("every factor of u must have length p".into()));
    }
    let raw = transfer_ring(wt.fs, wt.raw(), factors, exec);
    let out = raw.iter().zip(s.raw()).map(|(m, &sv)| if sv == 0.0 { ZERO } else { m * sv }).collect();
    Matrix::from_vec(p * p, p * p, out)
}

type Dense = Vec<C64>;

fn matmul(x: &[C64], y: &[C64], p: usize) -> Dense {
    let mut out = vec![ZERO; p * p];
    for r in 0..p {
        let row = &mut out[r * p..(r + 1) * p];
        for k in 0..p {
            let a = x[r * p + k];
            if a == ZERO {
                continue;
            }
            row.iter_mut().zip(&y[k * p..(k + 1) * p]).for_each(|(o, b)| *o += a * b);
        }
    }
    out
}

/// Raw (uncorrected) ring values for a vertex table `w[x * p + i]` and
/// product spokes; entry order `(a, b, c, d)`.
pub(crate) fn transfer_ring(fs: FreqSpace, w: &[C64], factors: [&[C64]; 5], exec: Exec) -> Vec<C64> {
    let p = fs.p();
    let sub = fs.difference_table();
    // Spoke k: G[i][i'] = φ_k(-j) W[j][i] with j = i - i'.
    let spoke = |phi: &[C64]| -> Dense {
        let mut g = vec![ZERO; p * p];
        for i in 0..p {
            for i2 in 0..p {
                if let Some(j) = fs.index(fs.freq(i) - fs.freq(i2)) {
                    g[i * p + i2] = phi[fs.neg(j)] * w[j * p + i];
                }
            }
        }
        g
    };
    let g: Vec<Dense> = factors.iter().map(|f| spoke(f)).collect();
    let g45 = matmul(&g[3], &g[4], p);
    // Leg x on the left: (F_x X)[i][·] = W[x][i] X[i - x][·].
    let left = |x: usize, m: &[C64]| -> Dense {
        let mut out = vec![ZERO; p * p];
        for i in 0..p {
            let t = sub[i * p + x];
            if t != NONE {
                let wv = w[x * p + i];
                let src = &m[t as usize * p..(t as usize + 1) * p];
                out[i * p..(i + 1) * p].iter_mut().zip(src).for_each(|(o, v)| *o = wv * v);
            }
        }
        out
    };
    // Leg x on the right: (X F_x)[·][k] = X[·][k + x] W[x][k + x].
    let right = |m: &[C64], x: usize| -> Dense {
        let mut out = vec![ZERO; p * p];
        for k in 0..p {
            if let Some(src) = fs.index(fs.freq(k) + fs.freq(x)) {
                let wv = w[x * p + src];
                for r in 0..p {
                    out[r * p + k] = m[r * p + src] * wv;
                }
            }
        }
        out
    };
    let q: Vec<Dense> = (0..p).map(|d| left(d, &g45)).collect();
    let blocks = exec.map(p * p, |ac| {
        let (a, c) = (ac / p, ac % p);
        let pa = left(a, &g[0]);
        let pac = matmul(&right(&pa, c), &g[1], p);
        let mut vals = vec![ZERO; p * p];
        for b in 0..p {
            let pacb = matmul(&right(&pac, b), &g[2], p);
            for d in 0..p {
                let qd = &q[d];
                let mut tr = ZERO;
                for i in 0..p {
                    for k in 0..p {
                        tr += pacb[i * p + k] * qd[k * p + i];
                    }
                }
                vals[b * p + d] = tr;
            }
        }
        vals
    });
    let mut out = vec![ZERO; p * p * p * p];
    for (ac, vals) in blocks.into_iter().enumerate() {
        let (a, c) = (ac / p, ac % p);
        for b in 0..p {
            for d in 0..p {
                out[((a * p + b) * p + c) * p + d] = vals[b * p + d];
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::moments::Normalization;
    use crate::rng;

    fn random_u(p: usize, seed: u64) -> ComplexTensor {
        let n = p.pow(5);
        let mut r = rng::stream(seed, "ring-test", 0);
        let re = rng::gaussian_vec(&mut r, n, 1.0);
        let im = rng::gaussian_vec(&mut r, n, 1.0);
        ComplexTensor::from_vec(&[p; 5], re.into_iter().zip(im).map(|(a, b)| C64::new(a, b)).collect()).unwrap()
    }

    fn naive_entry(t: &ZeroSumTensor3, u: &ComplexTensor, a: i32, b: i32, c: i32, d: i32) -> C64 {
        // Every i1..i9 and j1..j5 is summed over all of ±[p/2]; nothing is
        // derived from the zero-sum constraints.
        fn walk(t: &ZeroSumTensor3, x: &[i32; 9], is: &mut [i32; 9], m: usize, prod: C64) -> C64 {
            if m == 9 {
                return prod * t.get(-is[8], x[8], is[0]);
            }
            let mut acc = ZERO;
            for f in t.space().freqs() {
                is[m] = f;
                let v = if m == 0 { prod } else { prod * t.get(-is[m - 1], x[m - 1], f) };
                if v != ZERO {
                    acc += walk(t, x, is, m + 1, v);
                }
            }
            acc
        }
        let fs = t.space();
        let fr: Vec<i32> = fs.freqs().collect();
        let p = fs.p();
        let mut acc = ZERO;
        for jf in 0..p.pow(5) {
            let mut js = [0usize; 5];
            let mut r = jf;
            for k in (0..5).rev() {
                js[k] = r % p;
                r /= p;
            }
            let x = [a, fr[js[0]], c, fr[js[1]], b, fr[js[2]], d, fr[js[3]], fr[js[4]]];
            let uidx: Vec<usize> = js.iter().map(|&j| fs.neg(j)).collect();
            acc += walk(t, &x, &mut [0; 9], 0, u.get(&uidx));
        }
        acc
    }

    #[test]
    fn matches_unpruned_sum() {
        let p = 6;
        let mut t = ZeroSumTensor3::zeros(p).unwrap();
        let mut r = rng::stream(1, "ring-test", 1);
        let vals = rng::gaussian_vec(&mut r, 2 * p * p, 1.0);
        let dense = {
            let mut d = t.to_dense();
            let fs = t.space();
            for k1 in 0..p {
                for k2 in 0..p {
                    if let Some(k3) = fs.index(-fs.freq(k1) - fs.freq(k2)) {
                        d.set(&[k1, k2, k3], C64::new(vals[2 * (k1 * p + k2)], vals[2 * (k1 * p + k2) + 1]));
                    }
                }
            }
            d
        };
        t = ZeroSumTensor3::from_dense(&dense).unwrap().0;
        let u = random_u(p, 2);
        let s = CorrectionTable::ones(p).unwrap();
        let m = ring_contract(&VertexWeightTable::new(&t), &u, &s, Exec::Parallel).unwrap();
        let fs = t.space();
        for (a, b, c, d) in [(1, 2, -1, 1), (-2, -2, 1, 2)] {
            let want = naive_entry(&t, &u, a, b, c, d);
            let (ka, kb, kc, kd) = (fs.index(a).unwrap(), fs.index(b).unwrap(), fs.index(c).unwrap(), fs.index(d).unwrap());
            let got = m.get(ka * p + kb, kc * p + kd);
            assert!(want.norm() > 0.0);
            assert!((got - want).norm() < 1e-10 * want.norm().max(1.0), "{got} vs {want}");
        }
    }

    #[test]
    fn zero_table_gives_zero() {
        let t = ZeroSumTensor3::zeros(4).unwrap();
        let m = ring_contract(&VertexWeightTable::new(&t), &random_u(4, 3), &CorrectionTable::ones(4).unwrap(), Exec::Sequential).unwrap();
        assert_eq!(m.max_abs(), 0.0);
    }

    #[test]
    fn policies_and_paths_agree() {
        let p = 6;
        let sig = SignalSet::random_gaussian(p, 2, 4).unwrap();
        let wt = VertexWeightTable::from_signals(&sig).unwrap();
        let s = CorrectionTable::ones(p).unwrap();
        let u = random_u(p, 5);
        let seq = ring_contract(&wt, &u, &s, Exec::Sequential).unwrap();
        let par = ring_contract(&wt, &u, &s, Exec::Parallel).unwrap();
        assert_eq!(seq, par);
        let g = precompute_G(&wt, &s, 1 << 30, Exec::Parallel).unwrap();
        let via_g = g.apply(&u, Exec::Parallel).unwrap();
        let scale = seq.max_abs();
        for (x, y) in seq.data().iter().zip(via_g.data()) {
            assert!((x - y).norm() <= 1e-12 * scale);
        }
    }

    #[test]
    fn separable_matches_direct() {
        let p = 6;
        let sig = SignalSet::random_gaussian(p, 1, 6).unwrap();
        let wt = VertexWeightTable::from_signals(&sig).unwrap();
        let s = CorrectionTable::ones(p).unwrap();
        let mut r = rng::stream(7, "ring-test", 0);
        let factors: Vec<Vec<C64>> =
            (0..5).map(|_| rng::gaussian_vec(&mut r, 2 * p, 1.0).chunks(2).map(|z| C64::new(z[0], z[1])).collect()).collect();
        let mut u = ComplexTensor::zeros(&[p; 5]);
        for (flat, x) in u.data_mut().iter_mut().enumerate() {
            let mut rem = flat;
            let mut prod = C64::new(1.0, 0.0);
            for k in (0..5).rev() {
                prod *= factors[k][rem % p];
                rem /= p;
            }
            *x = prod;
        }
        let direct = ring_contract(&wt, &u, &s, Exec::Parallel).unwrap();
        let refs: [&[C64]; 5] = std::array::from_fn(|k| factors[k].as_slice());
        let fast = ring_contract_separable(&wt, refs, &s, Exec::Parallel).unwrap();
        let scale = direct.max_abs();
        for (x, y) in direct.data().iter().zip(fast.data()) {
            assert!((x - y).norm() <= 1e-11 * scale, "{x} vs {y}");
        }
    }

    #[test]
    fn g_table_bounds_and_refusal() {
        let sig = SignalSet::random_gaussian(2, 1, 8).unwrap();
        let wt = VertexWeightTable::from_signals(&sig).unwrap();
        let g = precompute_G(&wt, &CorrectionTable::ones(2).unwrap(), 1 << 20, Exec::Sequential).unwrap();
        assert!(g.nonzeros() <= 5 * 2usize.pow(8));
        assert!(g.entries.iter().flatten().all(|(_, v)| v.re.is_finite() && v.im.is_finite()));

        let wt16 = VertexWeightTable::new(&ZeroSumTensor3::zeros(16).unwrap());
        let s16 = CorrectionTable::ones(16).unwrap();
        assert!(matches!(precompute_G(&wt16, &s16, 1 << 20, Exec::Sequential), Err(Error::OverBudget { .. })));
    }

    #[test]
    fn linear_in_u() {
        let p = 6;
        let sig = SignalSet::random_gaussian(p, 1, 9).unwrap();
        let wt = VertexWeightTable::new(&ZeroSumTensor3::from_signals(&sig, Normalization::SumOverK));
        let s = CorrectionTable::ones(p).unwrap();
        let (u1, u2) = (random_u(p, 10), random_u(p, 11));
        let sum = ComplexTensor::from_vec(&[p; 5], u1.data().iter().zip(u2.data()).map(|(a, b)| a + b).collect()).unwrap();
        let m1 = ring_contract(&wt, &u1, &s, Exec::Parallel).unwrap();
        let m2 = ring_contract(&wt, &u2, &s, Exec::Parallel).unwrap();
        let m12 = ring_contract(&wt, &sum, &s, Exec::Parallel).unwrap();
        let scale = m12.max_abs();
        for ((x, y), z) in m1.data().iter().zip(m2.data()).zip(m12.data()) {
            assert!((x + y - z).norm() <= 1e-12 * scale);
        }
    }
}
