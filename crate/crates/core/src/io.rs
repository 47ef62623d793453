//! Binary container and CSV export for signals, observations and moment tensors.
//!
//! Container layout, all integers and floats little-endian:
//!
//! ```text
//! offset  size  field
//! 0       4     magic "CMRA"
//! 4       4     version (u32, currently 1)
//! 8       4     kind    (u32: 1 signals, 2 observations, 3 tensor)
//! 12      4     p       (u32)
//! 16      4     K       (u32, number of signals; 0 if unknown)
//! 20      4     d       (u32, tensor order; 1 for signals and observations)
//! 24      4     layout  (u32: 0 Fourier storage order, 1 real basis)
//! 28      8     records (u64)
//! 36      8     sigma   (f64, observations only, else 0)
//! 44      8     seed    (u64, observations only, else 0)
//! 52      ...   payload: records × pairs of f64
//! ```
//!
//! A signals record is p pairs (re, im) in Fourier storage order. A tensor has
//! one record of p^d pairs, row-major. An observation record is one pair
//! (rotation, label) followed by the p real samples packed two per pair.

use crate::moments::{ObservationBatch, SignalSet};
use crate::tensor::{ComplexTensor, FourierVector};
use crate::{Error, Result, C64};
use std::io::{Read, Write};
use std::path::Path;

pub const MAGIC: &[u8; 4] = b"CMRA";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 52;

/// Largest entry count written to CSV; bigger tensors only go to the container.
pub const CSV_MAX_ENTRIES: usize = 1 << 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Kind {
    Signals = 1,
    Observations = 2,
    Tensor = 3,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Layout {
    Fourier = 0,
    Real = 1,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Header {
    pub kind: Kind,
    pub p: usize,
    pub k: usize,
    pub d: usize,
    pub layout: Layout,
    pub records: u64,
    pub sigma: f64,
    pub seed: u64,
}

impl Header {
    fn pairs_per_record(&self) -> usize {
        match self.kind {
            Kind::Signals => self.p,
            Kind::Observations => 1 + self.p / 2,
            Kind::Tensor => self.p.pow(self.d as u32),
        }
    }

    fn write(&self, out: &mut impl Write) -> Result<()> {
        out.write_all(MAGIC)?;
        for x in [VERSION, self.kind as u32, self.p as u32, self.k as u32, self.d as u32, self.layout as u32] {
            out.write_all(&x.to_le_bytes())?;
        }
        out.write_all(&self.records.to_le_bytes())?;
        out.write_all(&self.sigma.to_le_bytes())?;
        out.write_all(&self.seed.to_le_bytes())?;
        Ok(())
    }

    fn parse(b: &[u8]) -> Result<Self> {
        if b.len() < HEADER_LEN || &b[..4] != MAGIC {
            return Err(Error::Format("not a CMRA container".into()));
        }
        let u32_at = |o: usize| u32::from_le_bytes(b[o..o + 4].try_into().unwrap());
        let u64_at = |o: usize| u64::from_le_bytes(b[o..o + 8].try_into().unwrap());
        if u32_at(4) != VERSION {
            return Err(Error::Format(format!("unsupported container version {}", u32_at(4))));
        }
        let kind = match u32_at(8) {
            1 => Kind::Signals,
            2 => Kind::Observations,
            3 => Kind::Tensor,
            k => return Err(Error::Format(format!("unknown record kind {k}"))),
        };
        let layout = match u32_at(24) {
            0 => Layout::Fourier,
            1 => Layout::Real,
            l => return Err(Error::Format(format!("unknown layout {l}"))),
        };
        let h = Header {
            kind,
            p: u32_at(12) as usize,
            k: u32_at(16) as usize,
            d: u32_at(20) as usize,
            layout,
            records: u64_at(28),
            sigma: f64::from_le_bytes(b[36..44].try_into().unwrap()),
            seed: u64_at(44),
        };
        if h.p == 0 || h.p % 2 == 1 || h.d == 0 || h.d > 8 {
            return Err(Error::Format(format!("bad dimensions p={} d={}", h.p, h.d)));
        }
        Ok(h)
    }
}

fn write_pairs(out: &mut impl Write, pairs: impl Iterator<Item = (f64, f64)>) -> Result<()> {
    for (a, b) in pairs {
        out.write_all(&a.to_le_bytes())?;
        out.write_all(&b.to_le_bytes())?;
    }
    Ok(())
}

fn create(path: &Path) -> Result<std::io::BufWriter<std::fs::File>> {
    Ok(std::io::BufWriter::new(std::fs::File::create(path)?))
}

/// Reads a container, checking that the payload length matches the header.
pub fn read_container(path: &Path) -> Result<(Header, Vec<f64>)> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let h = Header::parse(&bytes)?;
    let want = (h.records as usize)
        .checked_mul(h.pairs_per_record() * 16)
        .ok_or_else(|| Error::Format("payload size overflows".into()))?;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() != want {
        return Err(Error::Format(format!("payload is {} bytes, header implies {want}", payload.len())));
    }
    let vals = payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    Ok((h, vals))
}

pub fn write_signals(path: &Path, s: &SignalSet) -> Result<()> {
    let h = Header { kind: Kind::Signals, p: s.p(), k: s.k(), d: 1, layout: Layout::Fourier, records: s.k() as u64, sigma: 0.0, seed: 0 };
    let mut f = create(path)?;
    h.write(&mut f)?;
    for v in s.signals() {
        write_pairs(&mut f, v.coeffs().iter().map(|c| (c.re, c.im)))?;
    }
    f.flush()?;
    Ok(())
}

pub fn read_signals(path: &Path) -> Result<SignalSet> {
    let (h, vals) = read_container(path)?;
    if h.kind != Kind::Signals {
        return Err(Error::Format(format!("expected signals, found {:?}", h.kind)));
    }
    let sigs = vals
        .chunks_exact(2 * h.p)
        .map(|r| FourierVector::new(r.chunks_exact(2).map(|z| C64::new(z[0], z[1])).collect()))
        .collect::<Result<Vec<_>>>()?;
    SignalSet::new(sigs)
}

pub fn write_observations(path: &Path, b: &ObservationBatch, k: usize) -> Result<()> {
    let h = Header {
        kind: Kind::Observations,
        p: b.p,
        k,
        d: 1,
        layout: Layout::Real,
        records: b.len() as u64,
        sigma: b.sigma,
        seed: b.seed,
    };
    let mut f = create(path)?;
    h.write(&mut f)?;
    for i in 0..b.len() {
        write_pairs(&mut f, std::iter::once((b.rotations[i], b.labels[i] as f64)))?;
        write_pairs(&mut f, b.sample(i).chunks_exact(2).map(|z| (z[0], z[1])))?;
    }
    f.flush()?;
    Ok(())
}

pub fn read_observations(path: &Path) -> Result<ObservationBatch> {
    let (h, vals) = read_container(path)?;
    if h.kind != Kind::Observations {
        return Err(Error::Format(format!("expected observations, found {:?}", h.kind)));
    }
    let n = h.records as usize;
    let mut b = ObservationBatch {
        p: h.p,
        sigma: h.sigma,
        seed: h.seed,
        samples: Vec::with_capacity(n * h.p),
        rotations: Vec::with_capacity(n),
        labels: Vec::with_capacity(n),
    };
    for r in vals.chunks_exact(2 + h.p) {
        b.rotations.push(r[0]);
        b.labels.push(r[1] as usize);
        b.samples.extend_from_slice(&r[2..]);
    }
    Ok(b)
}

/// `k` is the number of signals a moment tensor averages over, 0 otherwise.
pub fn write_tensor(path: &Path, t: &ComplexTensor, layout: Layout, k: usize) -> Result<()> {
    let shape = t.shape();
    let p = *shape.first().ok_or_else(|| Error::Shape("cannot store a scalar".into()))?;
    if shape.iter().any(|&n| n != p) {
        return Err(Error::Shape(format!("container stores cubical tensors, got {shape:?}")));
    }
    let h = Header { kind: Kind::Tensor, p, k, d: shape.len(), layout, records: 1, sigma: 0.0, seed: 0 };
    let mut f = create(path)?;
    h.write(&mut f)?;
    write_pairs(&mut f, t.data().iter().map(|c| (c.re, c.im)))?;
    f.flush()?;
    Ok(())
}

pub fn read_tensor(path: &Path) -> Result<(ComplexTensor, Layout)> {
    let (h, vals) = read_container(path)?;
    if h.kind != Kind::Tensor {
        return Err(Error::Format(format!("expected tensor, found {:?}", h.kind)));
    }
    let data = vals.chunks_exact(2).map(|z| C64::new(z[0], z[1])).collect();
    Ok((ComplexTensor::from_vec(&vec![h.p; h.d], data)?, h.layout))
}

fn csv_err(e: csv::Error) -> Error {
    Error::Format(e.to_string())
}

/// Columns `signal,freq,re,im`.
pub fn signals_csv(path: &Path, s: &SignalSet) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["signal", "freq", "re", "im"]).map_err(csv_err)?;
    let fs = s.space();
    for (k, v) in s.signals().iter().enumerate() {
        for (i, c) in v.coeffs().iter().enumerate() {
            w.write_record([k.to_string(), fs.freq(i).to_string(), c.re.to_string(), c.im.to_string()]).map_err(csv_err)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Columns `sample,label,rotation,y0..y{p-1}`.
pub fn observations_csv(path: &Path, b: &ObservationBatch) -> Result<()> {
    if b.len() * b.p > CSV_MAX_ENTRIES {
        return Err(Error::InvalidArgument(format!("{} values is too many for CSV", b.len() * b.p)));
    }
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    let mut head = vec!["sample".to_string(), "label".into(), "rotation".into()];
    head.extend((0..b.p).map(|i| format!("y{i}")));
    w.write_record(&head).map_err(csv_err)?;
    for i in 0..b.len() {
        let mut row = vec![i.to_string(), b.labels[i].to_string(), b.rotations[i].to_string()];
        row.extend(b.sample(i).iter().map(|y| y.to_string()));
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Columns `i1..id,re,im`; indices are frequencies for the Fourier layout and
/// positions 0..p-1 for the real one. Zero entries are skipped.
pub fn tensor_csv(path: &Path, t: &ComplexTensor, layout: Layout) -> Result<()> {
    if t.data().len() > CSV_MAX_ENTRIES {
        return Err(Error::InvalidArgument(format!("{} entries is too many for CSV", t.data().len())));
    }
    let d = t.order();
    let p = t.shape()[0];
    let fs = crate::tensor::FreqSpace::new(p)?;
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    let mut head: Vec<String> = (1..=d).map(|i| format!("i{i}")).collect();
    head.extend(["re".into(), "im".into()]);
    w.write_record(&head).map_err(csv_err)?;
    for (flat, c) in t.data().iter().enumerate() {
        if *c == C64::new(0.0, 0.0) {
            continue;
        }
        let mut idx = vec![0usize; d];
        let mut r = flat;
        for k in (0..d).rev() {
            idx[k] = r % p;
            r /= p;
        }
        let mut row: Vec<String> = idx
            .iter()
            .map(|&i| match layout {
                Layout::Fourier => fs.freq(i).to_string(),
                Layout::Real => i.to_string(),
            })
            .collect();
        row.push(c.re.to_string());
        row.push(c.im.to_string());
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}
