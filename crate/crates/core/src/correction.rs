//! The correction multipliers `S_abcd`.
//!
//! For a single signal with `w_i = |θ̂_i|²`, the ring contraction with
//! `u = θ^⊗5` equals `s_abcd(θ) θ̂_a θ̂_b θ̂_c θ̂_d`, where
//! `s_abcd = Σ ∏_{m=1}^{9} w(i_m) ∏_{k=1}^{5} w(j_k)` runs over the same
//! index chains as the ring. `S_abcd = 1 / E[s_abcd]` for `θ ~ N(0, I/p)`,
//! and 0 when `a = -b` or `c = -d`.
//!
//! Under that law the `w` of distinct `|frequency|` are independent
//! exponentials with `E[w^k] = k! p^{-k}`, so `E[s_abcd]` is `p^{-14}` times an
//! integer that [`expected_s`] counts exactly.

use crate::ring::transfer_ring;
use crate::tensor::{FourierVector, FreqSpace, NONE};
use crate::{rng, Error, Exec, Result, C64};
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum CorrectionMode {
    Exact,
    MonteCarlo { samples: u64, seed: u64 },
    /// All multipliers 1 except the zeroed slices.
    Unit,
}

/// `S_abcd` in canonical `(a, b, c, d)` order.
#[derive(Clone, Debug, PartialEq)]
pub struct CorrectionTable {
    fs: FreqSpace,
    mode: CorrectionMode,
    data: Vec<f64>,
}

impl CorrectionTable {
    /// 1 everywhere, including the `a = -b`, `c = -d` slices.
    pub fn ones(p: usize) -> Result<Self> {
        let fs = FreqSpace::new(p)?;
        Ok(CorrectionTable { fs, mode: CorrectionMode::Unit, data: vec![1.0; p.pow(4)] })
    }

    /// 1 except on the zeroed slices.
    pub fn unit(p: usize) -> Result<Self> {
        let fs = FreqSpace::new(p)?;
        let data = (0..p.pow(4)).map(|e| if zeroed(fs, e) { 0.0 } else { 1.0 }).collect();
        Ok(CorrectionTable { fs, mode: CorrectionMode::Unit, data })
    }

    /// Reciprocals of `expected` (in canonical order), zeroed on the slices.
    pub fn from_expected(p: usize, expected: &[f64], mode: CorrectionMode) -> Result<Self> {
        let fs = FreqSpace::new(p)?;
        if expected.len() != p.pow(4) {
            return Err(Error::Shape(format!("expected {} values, got {}", p.pow(4), expected.len())));
        }
        let data = expected
            .iter()
            .enumerate()
            .map(|(e, &x)| if zeroed(fs, e) || x == 0.0 { 0.0 } else { 1.0 / x })
            .collect();
        Ok(CorrectionTable { fs, mode, data })
    }

    pub fn p(&self) -> usize {
        self.fs.p()
    }

    pub fn mode(&self) -> CorrectionMode {
        self.mode
    }

    pub fn raw(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, a: i32, b: i32, c: i32, d: i32) -> f64 {
        let fs = self.fs;
        match (fs.index(a), fs.index(b), fs.index(c), fs.index(d)) {
            (Some(a), Some(b), Some(c), Some(d)) => self.data[flat(fs.p(), a, b, c, d)],
            _ => 0.0,
        }
    }

    pub fn get_idx(&self, a: usize, b: usize, c: usize, d: usize) -> f64 {
        self.data[flat(self.p(), a, b, c, d)]
    }

    /// Checks the table's structural invariants and reports the range of
    /// `E[s]·p⁹ = 1/(S·p⁹)` over nonzero entries.
    pub fn invariants(&self) -> InvariantReport {
        let fs = self.fs;
        let p = fs.p();
        let n = self.data.len();
        let mut zero_slices = true;
        let mut negation = true;
        let mut lo = f64::INFINITY;
        let mut hi: f64 = 0.0;
        let mut nonnegative = true;
        for e in 0..n {
            let v = self.data[e];
            nonnegative &= v >= 0.0 && v.is_finite();
            if zeroed(fs, e) {
                zero_slices &= v == 0.0;
            } else if v > 0.0 {
                let scaled = 1.0 / (v * (p as f64).powi(9));
                lo = lo.min(scaled);
                hi = hi.max(scaled);
            }
            // Negating all four indices reverses the flat index.
            negation &= self.data[n - 1 - e] == v;
        }
        let fact14 = (1..=14u64).product::<u64>() as f64;
        InvariantReport { zero_slices, negation_symmetric: negation, nonnegative, c1: lo, c2: hi, within_bounds: lo.is_finite() && lo > 0.0 && hi <= fact14 }
    }

    /// Index permutations of `(a, b, c, d)` (beyond joint negation) under
    /// which this table is numerically invariant, as strings like `"dcba"`.
    pub fn discovered_symmetries(&self, rel_tol: f64) -> Vec<String> {
        let p = self.p();
        let candidates: [[usize; 4]; 5] = [[1, 0, 3, 2], [2, 3, 0, 1], [3, 2, 1, 0], [1, 0, 2, 3], [0, 1, 3, 2]];
        let letters = ['a', 'b', 'c', 'd'];
        candidates
            .iter()
            .filter(|perm| {
                (0..self.data.len()).all(|e| {
                    let idx = [e / (p * p * p), (e / (p * p)) % p, (e / p) % p, e % p];
                    let q = flat(p, idx[perm[0]], idx[perm[1]], idx[perm[2]], idx[perm[3]]);
                    let (x, y) = (self.data[e], self.data[q]);
                    (x - y).abs() <= rel_tol * x.abs().max(y.abs())
                })
            })
            .map(|perm| perm.iter().map(|&k| letters[k]).collect())
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        f.write_all(CACHE_MAGIC)?;
        f.write_all(&CACHE_VERSION.to_le_bytes())?;
        f.write_all(&(self.p() as u32).to_le_bytes())?;
        let (tag, samples, seed) = match self.mode {
            CorrectionMode::Exact => (0u32, 0u64, 0u64),
            CorrectionMode::MonteCarlo { samples, seed } => (1, samples, seed),
            CorrectionMode::Unit => (2, 0, 0),
        };
        f.write_all(&tag.to_le_bytes())?;
        f.write_all(&samples.to_le_bytes())?;
        f.write_all(&seed.to_le_bytes())?;
        for x in &self.data {
            f.write_all(&x.to_le_bytes())?;
        }
        f.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        let bad = |m: &str| Error::Format(format!("{}: {m}", path.display()));
        if bytes.len() < 32 || &bytes[..4] != CACHE_MAGIC {
            return Err(bad("not a correction table"));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
        if u32_at(4) != CACHE_VERSION {
            return Err(bad("unsupported version"));
        }
        let p = u32_at(8) as usize;
        let fs = FreqSpace::new(p)?;
        let mode = match u32_at(12) {
            0 => CorrectionMode::Exact,
            1 => CorrectionMode::MonteCarlo { samples: u64_at(16), seed: u64_at(24) },
            2 => CorrectionMode::Unit,
            _ => return Err(bad("unknown mode")),
        };
        let body = &bytes[32..];
        if body.len() != p.pow(4) * 8 {
            return Err(bad("truncated payload"));
        }
        let data = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        Ok(CorrectionTable { fs, mode, data })
    }

    /// Loads `dir/correction-p{p}-{mode}.bin` if present, else computes and
    /// stores it.
    pub fn cached(dir: &Path, p: usize, mode: CorrectionMode, exec: Exec) -> Result<Self> {
        let name = match mode {
            CorrectionMode::Exact => format!("correction-p{p}-exact.bin"),
            CorrectionMode::MonteCarlo { samples, seed } => format!("correction-p{p}-mc{samples}-s{seed}.bin"),
            CorrectionMode::Unit => format!("correction-p{p}-unit.bin"),
        };
        let path = dir.join(name);
        if path.exists() {
            let t = CorrectionTable::load(&path)?;
            if t.p() == p && t.mode == mode {
                return Ok(t);
            }
        }
        let t = correction_table(p, mode, exec)?;
        std::fs::create_dir_all(dir)?;
        t.save(&path)?;
        Ok(t)
    }
}

const CACHE_MAGIC: &[u8; 4] = b"CMRS";
const CACHE_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct InvariantReport {
    pub zero_slices: bool,
    pub negation_symmetric: bool,
    pub nonnegative: bool,
    /// Smallest `E[s]·p⁹` over nonzero entries.
    pub c1: f64,
    /// Largest `E[s]·p⁹` over nonzero entries.
    pub c2: f64,
    /// `0 < c1 < ∞` and `c2 ≤ 14!`; fails on an empty table (p ≤ 4).
    pub within_bounds: bool,
}

impl InvariantReport {
    pub fn ok(&self) -> bool {
        self.zero_slices && self.negation_symmetric && self.nonnegative && self.within_bounds
    }
}

fn flat(p: usize, a: usize, b: usize, c: usize, d: usize) -> usize {
    ((a * p + b) * p + c) * p + d
}

fn zeroed(fs: FreqSpace, e: usize) -> bool {
    let p = fs.p();
    let (a, b, c, d) = (e / (p * p * p), (e / (p * p)) % p, (e / p) % p, e % p);
    b == fs.neg(a) || d == fs.neg(c)
}

/// Running product of `k_m!` over the multiplicities of `|frequency|`.
struct Tally {
    count: Vec<u64>,
    weight: u64,
}

impl Tally {
    #[inline(always)]
    fn push(&mut self, m: usize) {
        self.count[m] += 1;
        self.weight *= self.count[m];
    }

    #[inline(always)]
    fn pop(&mut self, m: usize, saved: u64) {
        self.count[m] -= 1;
        self.weight = saved;
    }
}

/// `p^{14}·E[s_abcd]` as an exact integer, indices given in storage order.
pub fn expected_s_count(fs: FreqSpace, sub: &[u8], a: usize, b: usize, c: usize, d: usize) -> u128 {
    let p = fs.p();
    let m: Vec<usize> = (0..p).map(|k| fs.freq(k).unsigned_abs() as usize).collect();
    let mut t = Tally { count: vec![0; p / 2 + 1], weight: 1 };
    let mut total: u128 = 0;
    for i1 in 0..p {
        let i2 = sub[i1 * p + a];
        if i2 == NONE {
            continue;
        }
        let i2 = i2 as usize;
        let w0 = t.weight;
        t.push(m[i1]);
        t.push(m[i2]);
        for j1 in 0..p {
            let i3 = sub[i2 * p + j1];
            if i3 == NONE {
                continue;
            }
            let i4 = sub[i3 as usize * p + c];
            if i4 == NONE {
                continue;
            }
            let (i3, i4) = (i3 as usize, i4 as usize);
            let w1 = t.weight;
            t.push(m[j1]);
            t.push(m[i3]);
            t.push(m[i4]);
            for j2 in 0..p {
                let i5 = sub[i4 * p + j2];
                if i5 == NONE {
                    continue;
                }
                let i6 = sub[i5 as usize * p + b];
                if i6 == NONE {
                    continue;
                }
                let (i5, i6) = (i5 as usize, i6 as usize);
                let w2 = t.weight;
                t.push(m[j2]);
                t.push(m[i5]);
                t.push(m[i6]);
                for j3 in 0..p {
                    let i7 = sub[i6 * p + j3];
                    if i7 == NONE {
                        continue;
                    }
                    let i8 = sub[i7 as usize * p + d];
                    if i8 == NONE {
                        continue;
                    }
                    let (i7, i8) = (i7 as usize, i8 as usize);
                    let w3 = t.weight;
                    t.push(m[j3]);
                    t.push(m[i7]);
                    t.push(m[i8]);
                    let mut leaf: u64 = 0;
                    for j4 in 0..p {
                        let i9 = sub[i8 * p + j4];
                        if i9 == NONE {
                            continue;
                        }
                        let j5 = sub[i9 as usize * p + i1];
                        if j5 == NONE {
                            continue;
                        }
                        // Multiplicity factors for adding j4, i9, j5 without
                        // touching the tally.
                        let (x, y, z) = (m[j4], m[i9 as usize], m[j5 as usize]);
                        let fx = t.count[x] + 1;
                        let fy = t.count[y] + 1 + (y == x) as u64;
                        let fz = t.count[z] + 1 + (z == x) as u64 + (z == y) as u64;
                        leaf += fx * fy * fz;
                    }
                    total += leaf as u128 * t.weight as u128;
                    t.pop(m[i8], w3);
                    t.count[m[i7]] -= 1;
                    t.count[m[j3]] -= 1;
                }
                t.pop(m[i6], w2);
                t.count[m[i5]] -= 1;
                t.count[m[j2]] -= 1;
            }
            t.pop(m[i4], w1);
            t.count[m[i3]] -= 1;
            t.count[m[j1]] -= 1;
        }
        t.pop(m[i2], w0);
        t.count[m[i1]] -= 1;
    }
    total
}

/// `E[s_abcd]` for frequencies `a, b, c, d` under `θ ~ N(0, I/p)`.
pub fn expected_s(a: i32, b: i32, c: i32, d: i32, p: usize) -> Result<f64> {
    let fs = FreqSpace::new(p)?;
    let idx = |f: i32| fs.index(f).ok_or_else(|| Error::InvalidArgument(format!("frequency {f} not in ±[{}]", p / 2)));
    let count = expected_s_count(fs, &fs.difference_table(), idx(a)?, idx(b)?, idx(c)?, idx(d)?);
    Ok(count as f64 / (p as f64).powi(14))
}

/// `E[s_abcd]` for every entry, in canonical order. Entries on the zeroed
/// slices are computed too.
pub fn expected_s_table(p: usize, exec: Exec) -> Result<Vec<f64>> {
    let fs = FreqSpace::new(p)?;
    let sub = fs.difference_table();
    let n = p.pow(4);
    let scale = (p as f64).powi(14);
    // Joint negation reverses the flat index; compute the first half only.
    let half = exec.map(n / 2, |e| {
        let (a, b, c, d) = (e / (p * p * p), (e / (p * p)) % p, (e / p) % p, e % p);
        expected_s_count(fs, &sub, a, b, c, d) as f64 / scale
    });
    let mut out = vec![0.0; n];
    for (e, v) in half.into_iter().enumerate() {
        out[e] = v;
        out[n - 1 - e] = v;
    }
    Ok(out)
}

/// `s_abcd(θ)` for every entry given `w_i = |θ̂_i|²` in storage order.
pub fn sampled_s_table(w: &[f64], exec: Exec) -> Result<Vec<f64>> {
    let fs = FreqSpace::new(w.len())?;
    let p = fs.p();
    // s is a ring contraction with vertex weights w(i) and spokes w(j).
    let mut table = vec![C64::new(0.0, 0.0); p * p];
    for x in 0..p {
        for i in 0..p {
            if fs.index(fs.freq(i) - fs.freq(x)).is_some() {
                table[x * p + i] = C64::new(w[i], 0.0);
            }
        }
    }
    let spoke: Vec<C64> = w.iter().map(|&x| C64::new(x, 0.0)).collect();
    let raw = transfer_ring(fs, &table, [&spoke, &spoke, &spoke, &spoke, &spoke], exec);
    Ok(raw.into_iter().map(|z| z.re).collect())
}

/// `s_abcd(θ)` for one entry by direct enumeration of the index chains.
pub fn sampled_s_entry(w: &[f64], a: i32, b: i32, c: i32, d: i32) -> Result<f64> {
    let fs = FreqSpace::new(w.len())?;
    let p = fs.p();
    let idx = |f: i32| fs.index(f).ok_or_else(|| Error::InvalidArgument(format!("frequency {f} out of range")));
    let (a, b, c, d) = (idx(a)?, idx(b)?, idx(c)?, idx(d)?);
    let next = |i: usize, x: usize| fs.index(fs.freq(i) - fs.freq(x));
    let mut total = 0.0;
    for i1 in 0..p {
        for j in 0..p.pow(4) {
            let js = [j / (p * p * p), (j / (p * p)) % p, (j / p) % p, j % p];
            let legs = [a, js[0], c, js[1], b, js[2], d, js[3]];
            let mut i = i1;
            let mut prod = w[i1];
            let mut ok = true;
            for &x in &legs {
                match next(i, x) {
                    Some(n) => {
                        i = n;
                        prod *= w[i];
                    }
                    None => {
                        ok = false;
                        break;
                    }
                }
            }
            if !ok {
                continue;
            }
            let Some(j5) = next(i, i1) else { continue };
            total += prod * js.iter().map(|&k| w[k]).product::<f64>() * w[j5];
        }
    }
    Ok(total)
}

/// `|θ̂_i|²` in storage order.
pub fn power_spectrum(theta: &FourierVector) -> Vec<f64> {
    theta.coeffs().iter().map(|z| z.norm_sqr()).collect()
}

/// Draws `w` as for `θ ~ N(0, I/p)`: one exponential of mean `1/p` per
/// `|frequency|`, shared by `±j`.
pub fn draw_power_spectrum(p: usize, seed: u64, index: u64) -> Vec<f64> {
    let mut r = rng::stream(seed, "power-spectrum", index);
    let h = p / 2;
    let half: Vec<f64> = (0..h).map(|_| <Exp1 as Distribution<f64>>::sample(&Exp1, &mut r) / p as f64).collect();
    // Storage order: -h..-1 then 1..h.
    (0..h).map(|k| half[h - 1 - k]).chain(half.iter().copied()).collect()
}

/// Monte Carlo estimate of `E[s]` with per-entry standard errors.
///
/// `s` is homogeneous of degree 14 in `w`, and for exponential `w` the total
/// `R = Σ w` is independent of the direction `w / R`. So each draw is
/// evaluated on the simplex and scaled by the exact `E[R¹⁴]`; sampling `w`
/// directly leaves the mean dominated by rare large-norm draws.
pub fn monte_carlo_expected_s(p: usize, samples: u64, seed: u64, exec: Exec) -> Result<(Vec<f64>, Vec<f64>)> {
    if samples == 0 {
        return Err(Error::InvalidArgument("Monte Carlo correction needs at least one sample".into()));
    }
    FreqSpace::new(p)?;
    let n = p.pow(4);
    // Chunks of draws keep memory flat; each chunk is reduced in order.
    let chunk = 256u64;
    let chunks = samples.div_ceil(chunk);
    let parts = exec.map(chunks as usize, |ci| {
        let mut sum = vec![0.0; n];
        let mut sq = vec![0.0; n];
        let lo = ci as u64 * chunk;
        for draw in lo..(lo + chunk).min(samples) {
            let w = draw_power_spectrum(p, seed, draw);
            let r: f64 = w.iter().sum();
            let dir: Vec<f64> = w.iter().map(|x| x / r).collect();
            let s = sampled_s_table(&dir, Exec::Sequential).expect("valid p");
            for (k, v) in s.iter().enumerate() {
                sum[k] += v;
                sq[k] += v * v;
            }
        }
        (sum, sq)
    });
    let mut sum = vec![0.0; n];
    let mut sq = vec![0.0; n];
    for (s, q) in parts {
        sum.iter_mut().zip(&s).for_each(|(a, b)| *a += b);
        sq.iter_mut().zip(&q).for_each(|(a, b)| *a += b);
    }
    let ns = samples as f64;
    // Σ w over ±j counts each exponential twice, so R = 2·Gamma(h, 1/p).
    let h = (p / 2) as f64;
    let radial: f64 = (0..14).map(|i| 2.0 * (h + i as f64) / p as f64).product();
    let mean: Vec<f64> = sum.iter().map(|s| s / ns).collect();
    let se = sq
        .iter()
        .zip(&mean)
        .map(|(q, m)| if samples > 1 { radial * ((q / ns - m * m).max(0.0) / (ns - 1.0)).sqrt() } else { f64::INFINITY })
        .collect();
    let mean = mean.into_iter().map(|m| m * radial).collect();
    Ok((mean, se))
}

pub fn correction_table(p: usize, mode: CorrectionMode, exec: Exec) -> Result<CorrectionTable> {
    match mode {
        CorrectionMode::Exact => CorrectionTable::from_expected(p, &expected_s_table(p, exec)?, mode),
        CorrectionMode::MonteCarlo { samples, seed } => {
            let (mean, _) = monte_carlo_expected_s(p, samples, seed, exec)?;
            CorrectionTable::from_expected(p, &mean, mode)
        }
        CorrectionMode::Unit => CorrectionTable::unit(p),
    }
}

/// Largest relative disagreement between two tables over entries nonzero in either.
pub fn max_relative_disagreement(x: &CorrectionTable, y: &CorrectionTable) -> Result<f64> {
    if x.p() != y.p() {
        return Err(Error::Shape("tables have different p".into()));
    }
    Ok(x.data.iter().zip(&y.data).filter(|(a, b)| **a != 0.0 || **b != 0.0).fold(0.0, |m, (a, b)| {
        m.max((a - b).abs() / a.abs().max(b.abs()))
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::moments::SignalSet;

    #[test]
    fn zeroed_slices() {
        let t = correction_table(6, CorrectionMode::Exact, Exec::Parallel).unwrap();
        for a in [-3, -2, -1, 1, 2, 3] {
            for c in [-3, -2, -1, 1, 2, 3] {
                for d in [-3, -2, -1, 1, 2, 3] {
                    assert_eq!(t.get(a, -a, c, d), 0.0);
                    assert_eq!(t.get(c, d, a, -a), 0.0);
                }
            }
        }
        let rep = t.invariants();
        assert!(rep.ok(), "{rep:?}");
        assert!(rep.c1 > 0.0);
    }

    #[test]
    fn negation_symmetry_exact() {
        for (a, b, c, d) in [(1, 2, -1, 1), (3, 2, 1, -2), (-1, -1, -1, -1)] {
            assert_eq!(expected_s(a, b, c, d, 6).unwrap(), expected_s(-a, -b, -c, -d, 6).unwrap());
        }
        assert!(expected_s(1, 2, -1, 1, 6).unwrap() > 0.0);
        assert!(expected_s(3, 1, 1, 1, 4).is_err());
        // no closed walk of odd length exists at p=4
        assert_eq!(expected_s(1, 1, 1, 1, 4).unwrap(), 0.0);
    }

    #[test]
    fn count_matches_direct_enumeration_of_moments() {
        // Oracle: expand E[∏ w] over explicit tuples with a hash of
        // multiplicities, at p=4 and p=6.
        for p in [4usize, 6] {
            let fs = FreqSpace::new(p).unwrap();
            let fact = |k: u64| (1..=k).product::<u64>() as f64;
            for (a, b, c, d) in [(1i32, 1, 1, 1), (1, 2, -1, 2), (-2, 1, 2, 2)] {
                let mut total = 0.0;
                let idx: Vec<usize> = [a, b, c, d].iter().map(|&f| fs.index(f).unwrap()).collect();
                let next = |i: i32, x: i32| if fs.contains(i - x) { Some(i - x) } else { None };
                for i1 in fs.freqs() {
                    for js in 0..p.pow(4) {
                        let j: Vec<i32> = (0..4).map(|k| fs.freq((js / p.pow(3 - k as u32)) % p)).collect();
                        let legs = [a, j[0], c, j[1], b, j[2], d, j[3]];
                        let mut chain = vec![i1];
                        let mut cur = i1;
                        let mut ok = true;
                        for &x in &legs {
                            match next(cur, x) {
                                Some(n) => {
                                    cur = n;
                                    chain.push(n);
                                }
                                None => {
                                    ok = false;
                                    break;
                                }
                            }
                        }
                        let Some(j5) = (if ok { next(cur, i1) } else { None }) else { continue };
                        let mut mult = std::collections::HashMap::new();
                        for f in chain.iter().chain(&j).chain(std::iter::once(&j5)) {
                            *mult.entry(f.abs()).or_insert(0u64) += 1;
                        }
                        total += mult.values().map(|&k| fact(k) * (p as f64).powi(-(k as i32))).product::<f64>();
                    }
                }
                let got = expected_s_count(fs, &fs.difference_table(), idx[0], idx[1], idx[2], idx[3]) as f64 / (p as f64).powi(14);
                assert!((got - total).abs() <= 1e-12 * total, "p={p} {got} vs {total}");
            }
        }
    }

    #[test]
    fn sampled_table_matches_direct_entries() {
        let sig = SignalSet::random_gaussian(6, 1, 3).unwrap();
        let w = power_spectrum(&sig.signals()[0]);
        let table = sampled_s_table(&w, Exec::Parallel).unwrap();
        let fs = FreqSpace::new(6).unwrap();
        for (a, b, c, d) in [(1, 1, 1, 1), (3, -2, 1, 2), (-1, 2, 2, -3)] {
            let e = flat(6, fs.index(a).unwrap(), fs.index(b).unwrap(), fs.index(c).unwrap(), fs.index(d).unwrap());
            let direct = sampled_s_entry(&w, a, b, c, d).unwrap();
            assert!((table[e] - direct).abs() <= 1e-12 * direct.abs());
        }
    }

    #[test]
    fn power_spectrum_draws_are_symmetric() {
        let w = draw_power_spectrum(8, 1, 0);
        for k in 0..8 {
            assert_eq!(w[k], w[7 - k]);
            assert!(w[k] > 0.0);
        }
    }

    #[test]
    fn monte_carlo_needs_samples() {
        assert!(correction_table(4, CorrectionMode::MonteCarlo { samples: 0, seed: 1 }, Exec::Sequential).is_err());
    }

    #[test]
    fn cache_roundtrip() {
        let dir = std::env::temp_dir().join(format!("cmra-cache-test-{}", std::process::id()));
        let t = CorrectionTable::cached(&dir, 6, CorrectionMode::Exact, Exec::Parallel).unwrap();
        let again = CorrectionTable::cached(&dir, 6, CorrectionMode::Exact, Exec::Parallel).unwrap();
        assert_eq!(t, again);
        let mc = CorrectionMode::MonteCarlo { samples: 10, seed: 3 };
        let m = correction_table(4, mc, Exec::Parallel).unwrap();
        let path = dir.join("mc.bin");
        m.save(&path).unwrap();
        assert_eq!(CorrectionTable::load(&path).unwrap(), m);
        std::fs::write(&path, b"nope").unwrap();
        assert!(CorrectionTable::load(&path).is_err());
        std::fs::remove_dir_all(&dir).ok();
    }
}
