//! Counting checks on the expanded trace network: `2q` copies of the
//! order-9 network for `W̃` joined so that contracting everything gives
//! `Tr((W̃W̃ᵀ)^q)`.
//!
//! Layer `ℓ` holds two rings of nine vertices. Ring 0 is `Ŵ_{r_ℓ, y_ℓ}` and
//! ring 1 is `Ŵ_{-r_{ℓ+1}, -y_ℓ}`, so `c, d, j1..j5` run between the rings of
//! one layer and `a, b` run from ring 1 of layer `ℓ` to ring 0 of layer `ℓ+1`.
//! Every edge carries `x` at its plus end and `-x` at its minus end.

use crate::correction::CorrectionTable;
use crate::moments::{Normalization, SignalSet, ZeroSumTensor3};
use crate::network::{contract, EdgeKind, NetworkGraph};
use crate::ring::{ring_paths, VertexWeightTable};
use crate::tensor::{ComplexTensor, FreqSpace, Matrix, RealMatrix, RealVector};
use crate::{rng, Error, Exec, Result, C64};
use rand::Rng;
use serde::Serialize;
use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicU64, Ordering};

pub const RING_LEN: usize = 9;
pub const VERTICES_PER_LAYER: usize = 18;
pub const EDGES_PER_LAYER: usize = 27;
/// Exhaustive enumeration refuses anything larger.
pub const MAX_EXHAUSTIVE_P: usize = 4;
pub const MAX_EXHAUSTIVE_Q: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeRole {
    A,
    B,
    C,
    D,
    J(u8),
    I(u8),
    ITilde(u8),
}

impl EdgeRole {
    /// In the `{ab}` class (the rest form the 25-edge class).
    pub fn in_ab_class(self) -> bool {
        matches!(self, EdgeRole::A | EdgeRole::B)
    }

    fn offset(self) -> usize {
        match self {
            EdgeRole::A => 0,
            EdgeRole::B => 1,
            EdgeRole::C => 2,
            EdgeRole::D => 3,
            EdgeRole::J(k) => 3 + k as usize,
            EdgeRole::I(m) => 8 + m as usize,
            EdgeRole::ITilde(m) => 17 + m as usize,
        }
    }

    fn from_offset(o: usize) -> Self {
        match o {
            0 => EdgeRole::A,
            1 => EdgeRole::B,
            2 => EdgeRole::C,
            3 => EdgeRole::D,
            4..=8 => EdgeRole::J((o - 3) as u8),
            9..=17 => EdgeRole::I((o - 8) as u8),
            _ => EdgeRole::ITilde((o - 17) as u8),
        }
    }

    /// Ring position (1-based) of a spoke role.
    fn spoke_position(self) -> Option<usize> {
        Some(match self {
            EdgeRole::A => 1,
            EdgeRole::J(1) => 2,
            EdgeRole::C => 3,
            EdgeRole::J(2) => 4,
            EdgeRole::B => 5,
            EdgeRole::J(3) => 6,
            EdgeRole::D => 7,
            EdgeRole::J(4) => 8,
            EdgeRole::J(5) => 9,
            _ => return None,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct End {
    pub vertex: usize,
    pub port: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct ExpandedEdge {
    pub layer: usize,
    pub role: EdgeRole,
    pub plus: End,
    pub minus: End,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExpandedNetwork {
    q: usize,
    edges: Vec<ExpandedEdge>,
    /// Per vertex and port: `(edge, +1)` at a plus end, `(edge, -1)` at a minus end.
    incidence: Vec<[(usize, i8); 3]>,
}

/// Vertex id of position `m` (1-based) in `ring` of `layer`.
pub fn vertex_id(layer: usize, ring: usize, m: usize) -> usize {
    layer * VERTICES_PER_LAYER + ring * RING_LEN + (m - 1)
}

pub fn build_expanded(q: usize) -> Result<ExpandedNetwork> {
    if q == 0 {
        return Err(Error::InvalidArgument("q must be at least 1".into()));
    }
    let mut edges = Vec::with_capacity(EDGES_PER_LAYER * q);
    for layer in 0..q {
        let prev_layer = (layer + q - 1) % q;
        for o in 0..EDGES_PER_LAYER {
            let role = EdgeRole::from_offset(o);
            let (plus, minus) = match role {
                EdgeRole::A | EdgeRole::B => {
                    let m = role.spoke_position().unwrap();
                    (End { vertex: vertex_id(layer, 0, m), port: 1 }, End { vertex: vertex_id(prev_layer, 1, m), port: 1 })
                }
                EdgeRole::I(m) | EdgeRole::ITilde(m) => {
                    let ring = usize::from(matches!(role, EdgeRole::ITilde(_)));
                    let m = m as usize;
                    let before = if m == 1 { RING_LEN } else { m - 1 };
                    (End { vertex: vertex_id(layer, ring, before), port: 2 }, End { vertex: vertex_id(layer, ring, m), port: 0 })
                }
                _ => {
                    let m = role.spoke_position().unwrap();
                    (End { vertex: vertex_id(layer, 0, m), port: 1 }, End { vertex: vertex_id(layer, 1, m), port: 1 })
                }
            };
            edges.push(ExpandedEdge { layer, role, plus, minus });
        }
    }
    let mut incidence = vec![[(usize::MAX, 0i8); 3]; VERTICES_PER_LAYER * q];
    for (e, edge) in edges.iter().enumerate() {
        for (end, sign) in [(edge.plus, 1i8), (edge.minus, -1i8)] {
            let slot = &mut incidence[end.vertex][end.port];
            debug_assert_eq!(slot.0, usize::MAX, "port wired twice");
            *slot = (e, sign);
        }
    }
    if incidence.iter().flatten().any(|s| s.0 == usize::MAX) {
        return Err(Error::Network("expanded network has an unwired port".into()));
    }
    Ok(ExpandedNetwork { q, edges, incidence })
}

impl ExpandedNetwork {
    pub fn q(&self) -> usize {
        self.q
    }

    pub fn vertex_count(&self) -> usize {
        self.incidence.len()
    }

    pub fn edges(&self) -> &[ExpandedEdge] {
        &self.edges
    }

    pub fn incidence(&self, v: usize) -> &[(usize, i8); 3] {
        &self.incidence[v]
    }

    pub fn edge_id(&self, layer: usize, role: EdgeRole) -> usize {
        layer * EDGES_PER_LAYER + role.offset()
    }

    /// Edge counts of the `{ab}` and 25-edge classes.
    pub fn class_sizes(&self) -> (usize, usize) {
        let ab = self.edges.iter().filter(|e| e.role.in_ab_class()).count();
        (ab, self.edges.len() - ab)
    }

    /// The same wiring as a generic network with every node in slot `T`.
    /// All edges are dotted, plus end first.
    pub fn to_network_graph(&self) -> NetworkGraph {
        let mut g = NetworkGraph::new();
        for v in 0..self.vertex_count() {
            let (layer, rest) = (v / VERTICES_PER_LAYER, v % VERTICES_PER_LAYER);
            g.add_node(&format!("L{}R{}V{}", layer + 1, rest / RING_LEN, rest % RING_LEN + 1), "T", 3);
        }
        for e in &self.edges {
            g.connect((e.plus.vertex, e.plus.port), (e.minus.vertex, e.minus.port), EdgeKind::Dotted);
        }
        g
    }

    /// Every vertex sees three labels summing to zero.
    pub fn zero_sums(&self, labels: &[i8]) -> bool {
        self.incidence.iter().all(|inc| inc.iter().map(|&(e, s)| s as i32 * labels[e] as i32).sum::<i32>() == 0)
    }

    /// `a ≠ -b` and `c ≠ -d` in every layer.
    pub fn cancel_ok(&self, labels: &[i8]) -> bool {
        (0..self.q).all(|l| {
            let g = |r| labels[self.edge_id(l, r)];
            g(EdgeRole::A) != -g(EdgeRole::B) && g(EdgeRole::C) != -g(EdgeRole::D)
        })
    }

    /// `a + b = -(c + d + Σj) = a' + b'` with primes on the next layer.
    pub fn ring_sums_ok(&self, labels: &[i8]) -> bool {
        let q = self.q;
        (0..q).all(|l| {
            let g = |layer: usize, r| labels[self.edge_id(layer, r)] as i32;
            let ab = g(l, EdgeRole::A) + g(l, EdgeRole::B);
            let rest = g(l, EdgeRole::C) + g(l, EdgeRole::D) + (1..=5).map(|k| g(l, EdgeRole::J(k))).sum::<i32>();
            let next = (l + 1) % q;
            ab == -rest && ab == g(next, EdgeRole::A) + g(next, EdgeRole::B)
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum VariableOrder {
    /// All `{ab}` edges layer by layer, then the rest layer by layer.
    Classes,
    Reversed,
    /// Ring edges first, then spokes, then `a, b`.
    RingsFirst,
}

impl VariableOrder {
    pub const ALL: [VariableOrder; 3] = [VariableOrder::Classes, VariableOrder::Reversed, VariableOrder::RingsFirst];

    fn edges(self, net: &ExpandedNetwork) -> Vec<usize> {
        let n = net.edges.len();
        let classes: Vec<usize> = (0..n)
            .filter(|&e| net.edges[e].role.in_ab_class())
            .chain((0..n).filter(|&e| !net.edges[e].role.in_ab_class()))
            .collect();
        match self {
            VariableOrder::Classes => classes,
            VariableOrder::Reversed => classes.into_iter().rev().collect(),
            VariableOrder::RingsFirst => {
                let rank = |e: usize| match net.edges[e].role {
                    EdgeRole::I(_) | EdgeRole::ITilde(_) => 0,
                    EdgeRole::A | EdgeRole::B => 2,
                    _ => 1,
                };
                let mut v: Vec<usize> = (0..n).collect();
                v.sort_by_key(|&e| (rank(e), e));
                v
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnumOptions {
    pub order: VariableOrder,
    /// Refuse after this many complete labelings.
    pub budget: u64,
    /// Enforce `a ≠ -b`, `c ≠ -d`.
    pub cancel_rule: bool,
}

impl Default for EnumOptions {
    fn default() -> Self {
        EnumOptions { order: VariableOrder::Classes, budget: 50_000_000, cancel_rule: true }
    }
}

struct Search<'a> {
    net: &'a ExpandedNetwork,
    half: i32,
    labels: Vec<i8>,
    trail: Vec<usize>,
    queue: Vec<usize>,
    partner: Vec<Option<usize>>,
}

impl<'a> Search<'a> {
    fn new(net: &'a ExpandedNetwork, p: usize, cancel_rule: bool) -> Self {
        let n = net.edges.len();
        let mut partner = vec![None; n];
        if cancel_rule {
            for l in 0..net.q {
                for (x, y) in [(EdgeRole::A, EdgeRole::B), (EdgeRole::C, EdgeRole::D)] {
                    let (ex, ey) = (net.edge_id(l, x), net.edge_id(l, y));
                    partner[ex] = Some(ey);
                    partner[ey] = Some(ex);
                }
            }
        }
        Search { net, half: (p / 2) as i32, labels: vec![0; n], trail: Vec::with_capacity(n), queue: Vec::new(), partner }
    }

    fn set(&mut self, e: usize, x: i8) -> bool {
        self.labels[e] = x;
        self.trail.push(e);
        if let Some(o) = self.partner[e] {
            if self.labels[o] != 0 && self.labels[o] == -x {
                return false;
            }
        }
        let edge = self.net.edges[e];
        self.queue.push(edge.plus.vertex);
        self.queue.push(edge.minus.vertex);
        true
    }

    /// Assigns `x` to `e` and forces every label that becomes determined.
    fn assign(&mut self, e: usize, x: i8) -> bool {
        self.queue.clear();
        if !self.set(e, x) {
            return false;
        }
        while let Some(v) = self.queue.pop() {
            let mut sum = 0i32;
            let mut free = None;
            let mut nfree = 0;
            for &(edge, sign) in &self.net.incidence[v] {
                let l = self.labels[edge];
                if l == 0 {
                    nfree += 1;
                    free = Some((edge, sign));
                } else {
                    sum += sign as i32 * l as i32;
                }
            }
            match (nfree, free) {
                (0, _) if sum != 0 => return false,
                (1, Some((edge, sign))) => {
                    let x = -sum * sign as i32;
                    if x == 0 || x.abs() > self.half || !self.set(edge, x as i8) {
                        return false;
                    }
                }
                _ => {}
            }
        }
        true
    }

    fn undo(&mut self, len: usize) {
        while self.trail.len() > len {
            let e = self.trail.pop().unwrap();
            self.labels[e] = 0;
        }
    }

    fn dfs<A>(
        &mut self,
        order: &[usize],
        pos: usize,
        domain: &[i8],
        acc: &mut A,
        visit: &(impl Fn(&mut A, &[i8]) -> Result<()> + ?Sized),
        counter: &AtomicU64,
        budget: u64,
    ) -> Result<()> {
        let mut pos = pos;
        while pos < order.len() && self.labels[order[pos]] != 0 {
            pos += 1;
        }
        if pos == order.len() {
            let n = counter.fetch_add(1, Ordering::Relaxed) + 1;
            if n > budget {
                return Err(Error::EnumerationBudget { count: n - 1 });
            }
            return visit(acc, &self.labels);
        }
        let e = order[pos];
        for &x in domain {
            let save = self.trail.len();
            if self.assign(e, x) {
                self.dfs(order, pos + 1, domain, acc, visit, counter, budget)?;
            }
            self.undo(save);
        }
        Ok(())
    }
}

fn check_exhaustive(net: &ExpandedNetwork, p: usize) -> Result<FreqSpace> {
    let fs = FreqSpace::new(p)?;
    if !((p <= MAX_EXHAUSTIVE_P && net.q <= MAX_EXHAUSTIVE_Q) || (p <= 6 && net.q == 1)) {
        return Err(Error::InvalidArgument(format!(
            "exhaustive enumeration is limited to p ≤ {MAX_EXHAUSTIVE_P} with q ≤ {MAX_EXHAUSTIVE_Q}, or p ≤ 6 with q = 1"
        )));
    }
    Ok(fs)
}

/// Depth-first enumeration of edge labelings with zero sums at every vertex
/// (and, if enabled, `a ≠ -b`, `c ≠ -d`). Work is split over the values of
/// the first two variables; one accumulator per split is returned in split
/// order along with the total count.
pub fn fold_labelings<A, M, V>(net: &ExpandedNetwork, p: usize, opts: &EnumOptions, exec: Exec, make: M, visit: V) -> Result<(Vec<A>, u64)>
where
    A: Send,
    M: Fn() -> A + Sync,
    V: Fn(&mut A, &[i8]) -> Result<()> + Sync,
{
    let fs = check_exhaustive(net, p)?;
    let domain: Vec<i8> = fs.freqs().map(|f| f as i8).collect();
    let order = opts.order.edges(net);
    let counter = AtomicU64::new(0);
    let np = domain.len();
    let parts = exec.map(np * np, |k| -> Result<A> {
        let mut acc = make();
        let mut s = Search::new(net, p, opts.cancel_rule);
        let (x0, x1) = (domain[k / np], domain[k % np]);
        if !s.assign(order[0], x0) {
            return Ok(acc);
        }
        let forced = s.labels[order[1]];
        if forced != 0 {
            if forced != x1 {
                return Ok(acc);
            }
        } else if !s.assign(order[1], x1) {
            return Ok(acc);
        }
        s.dfs(&order, 2, &domain, &mut acc, &visit, &counter, opts.budget)?;
        Ok(acc)
    });
    let mut out = Vec::with_capacity(parts.len());
    for part in parts {
        out.push(part?);
    }
    let total = counter.load(Ordering::Relaxed);
    Ok((out, total))
}

/// Every labeling collected, flattened `27q` labels at a time.
pub fn collect_labelings(net: &ExpandedNetwork, p: usize, opts: &EnumOptions, exec: Exec) -> Result<Vec<i8>> {
    let (parts, _) = fold_labelings(net, p, opts, exec, Vec::new, |acc: &mut Vec<i8>, l| {
        acc.extend_from_slice(l);
        Ok(())
    })?;
    Ok(parts.concat())
}

/// Reference count: every assignment of `±[p/2]` to every edge, filtered by
/// the same rules, with no pruning at all.
pub fn brute_force_count(net: &ExpandedNetwork, p: usize, cancel_rule: bool, budget: u64) -> Result<u64> {
    let fs = FreqSpace::new(p)?;
    let domain: Vec<i8> = fs.freqs().map(|f| f as i8).collect();
    let n = net.edges.len();
    let total = (p as f64).powi(n as i32);
    if total > budget as f64 {
        return Err(Error::EnumerationBudget { count: 0 });
    }
    let mut digits = vec![0usize; n];
    let mut labels = vec![domain[0]; n];
    let mut count = 0u64;
    loop {
        if net.zero_sums(&labels) && (!cancel_rule || net.cancel_ok(&labels)) {
            count += 1;
        }
        let mut k = 0;
        loop {
            if k == n {
                return Ok(count);
            }
            digits[k] += 1;
            if digits[k] < p {
                labels[k] = domain[digits[k]];
                break;
            }
            digits[k] = 0;
            labels[k] = domain[0];
            k += 1;
        }
    }
}

/// `Σ_{i>0} max(0, #{edges labeled ±i} − 1)`.
pub fn repeated_labels(labels: &[i8], p: usize) -> u32 {
    let mut n = vec![0u32; p / 2 + 1];
    for &x in labels {
        n[x.unsigned_abs() as usize] += 1;
    }
    n.iter().skip(1).map(|&k| k.saturating_sub(1)).sum()
}

/// Number of distinct vertex labels.
pub fn region_count(vertex_labels: &[u8]) -> usize {
    let mut seen = [false; 256];
    vertex_labels.iter().filter(|&&k| !std::mem::replace(&mut seen[k as usize], true)).count()
}

/// Each region sees as many `i` as `-i` labels across its boundary, for
/// every `i`. Interior edges contribute one of each, so only boundary edges
/// are counted.
pub fn regions_balanced(net: &ExpandedNetwork, labels: &[i8], vertex_labels: &[u8], p: usize) -> bool {
    let h = p / 2 + 1;
    let regions = vertex_labels.iter().copied().max().map_or(0, |m| m as usize + 1);
    let mut bal = vec![0i32; regions * h];
    for (e, edge) in net.edges.iter().enumerate() {
        let (kp, km) = (vertex_labels[edge.plus.vertex] as usize, vertex_labels[edge.minus.vertex] as usize);
        if kp == km {
            continue;
        }
        let x = labels[e] as i32;
        let i = x.unsigned_abs() as usize;
        bal[kp * h + i] += x.signum();
        bal[km * h + i] -= x.signum();
    }
    bal.iter().all(|&b| b == 0)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LabelingStats {
    pub edge_labels: Vec<i8>,
    pub vertex_labels: Vec<u8>,
    pub c: u32,
    pub r: usize,
    pub zero_sums: bool,
    pub cancel_ok: bool,
    pub balanced: bool,
}

impl LabelingStats {
    pub fn compute(net: &ExpandedNetwork, p: usize, edge_labels: &[i8], vertex_labels: &[u8]) -> Self {
        LabelingStats {
            edge_labels: edge_labels.to_vec(),
            vertex_labels: vertex_labels.to_vec(),
            c: repeated_labels(edge_labels, p),
            r: region_count(vertex_labels),
            zero_sums: net.zero_sums(edge_labels),
            cancel_ok: net.cancel_ok(edge_labels),
            balanced: regions_balanced(net, edge_labels, vertex_labels, p),
        }
    }

    pub fn valid(&self) -> bool {
        self.zero_sums && self.cancel_ok && self.balanced
    }
}

/// `ln(3 [2(27q)²]^c p^{1 + 9q − c/25})`.
pub fn ln_count_bound(c: u32, p: usize, q: usize) -> f64 {
    let n = (EDGES_PER_LAYER * q) as f64;
    let c = c as f64;
    3f64.ln() + c * (2.0 * n * n).ln() + (1.0 + 9.0 * q as f64 - c / 25.0) * (p as f64).ln()
}

/// `(2p + 1) p^{9q}`: labelings with nothing but the ring sums imposed.
pub fn free_label_bound(p: usize, q: usize) -> f64 {
    (2 * p + 1) as f64 * (p as f64).powi(9 * q as i32)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct CountReport {
    pub total: u64,
    /// Count of labelings per repeated-label count `c`.
    pub by_c: BTreeMap<u32, u64>,
    pub ring_sums_ok: bool,
}

pub fn count_labelings(net: &ExpandedNetwork, p: usize, opts: &EnumOptions, exec: Exec) -> Result<CountReport> {
    let (parts, total) = fold_labelings(
        net,
        p,
        opts,
        exec,
        || (BTreeMap::<u32, u64>::new(), true),
        |acc, l| {
            *acc.0.entry(repeated_labels(l, p)).or_default() += 1;
            acc.1 &= net.ring_sums_ok(l);
            Ok(())
        },
    )?;
    let mut rep = CountReport { total, by_c: BTreeMap::new(), ring_sums_ok: true };
    for (m, ok) in parts {
        rep.ring_sums_ok &= ok;
        for (c, n) in m {
            *rep.by_c.entry(c).or_default() += n;
        }
    }
    Ok(rep)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum RegionMode {
    Exhaustive,
    Sampled { samples: u64, seed: u64 },
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RegionReport {
    pub p: usize,
    pub q: usize,
    pub k: usize,
    pub mode: RegionMode,
    pub edge_labelings: u64,
    /// Full labelings examined, counted before any symmetry reduction.
    pub examined: u64,
    pub valid: u64,
    pub valid_multi_region: u64,
    /// Smallest `c − r/2` over valid labelings with `r > 1`.
    pub min_margin: Option<f64>,
    pub violations: Vec<LabelingStats>,
}

/// Cap on full labelings visited by the exhaustive region check.
pub const REGION_BUDGET: f64 = 2e9;

/// Checks `c ≥ r/2` on valid full labelings with more than one region. A
/// counterexample is returned as [`Error::RegionViolation`].
pub fn verify_region_lemma(net: &ExpandedNetwork, p: usize, k: usize, mode: RegionMode, opts: &EnumOptions, exec: Exec) -> Result<RegionReport> {
    if !(1..=255).contains(&k) {
        return Err(Error::InvalidArgument("K must be in 1..=255".into()));
    }
    let nv = net.vertex_count();
    let mut rep = RegionReport {
        p,
        q: net.q,
        k,
        mode,
        edge_labelings: 0,
        examined: 0,
        valid: 0,
        valid_multi_region: 0,
        min_margin: None,
        violations: Vec::new(),
    };
    #[derive(Default)]
    struct Acc {
        examined: u64,
        valid: u64,
        multi: u64,
        margin: Option<f64>,
    }
    let check = |acc: &mut Acc, labels: &[i8], vl: &[u8], weight: u64| -> Result<()> {
        acc.examined += weight;
        if !regions_balanced(net, labels, vl, p) {
            return Ok(());
        }
        acc.valid += weight;
        let r = region_count(vl);
        if r > 1 {
            acc.multi += weight;
            let c = repeated_labels(labels, p);
            let margin = c as f64 - r as f64 / 2.0;
            acc.margin = Some(acc.margin.map_or(margin, |m| m.min(margin)));
            if margin < 0.0 {
                return Err(Error::RegionViolation { c: c as usize, r, edges: labels.iter().map(|&x| x as i32).collect(), vertices: vl.to_vec() });
            }
        }
        Ok(())
    };
    let merge = |rep: &mut RegionReport, a: Acc| {
        rep.examined += a.examined;
        rep.valid += a.valid;
        rep.valid_multi_region += a.multi;
        if let Some(m) = a.margin {
            rep.min_margin = Some(rep.min_margin.map_or(m, |x| x.min(m)));
        }
    };
    match mode {
        RegionMode::Exhaustive => {
            let counts = count_labelings(net, p, opts, exec)?;
            rep.edge_labelings = counts.total;
            let per = (k as f64).powi(nv as i32);
            if counts.total as f64 * per > REGION_BUDGET {
                return Err(Error::EnumerationBudget { count: counts.total });
            }
            // With two labels, fixing vertex 0 to label 0 covers every
            // labeling up to the swap, which leaves c, r and validity alone.
            let (first_free, weight) = if k == 2 { (1, 2) } else { (0, 1) };
            let (parts, _) = fold_labelings(net, p, opts, exec, Acc::default, |acc, labels| {
                let mut vl = vec![0u8; nv];
                loop {
                    check(acc, labels, &vl, weight)?;
                    let mut i = first_free;
                    loop {
                        if i == nv {
                            return Ok(());
                        }
                        vl[i] += 1;
                        if (vl[i] as usize) < k {
                            break;
                        }
                        vl[i] = 0;
                        i += 1;
                    }
                }
            })?;
            for a in parts {
                merge(&mut rep, a);
            }
        }
        RegionMode::Sampled { samples, seed } => {
            let all = collect_labelings(net, p, opts, exec)?;
            let ne = net.edges.len();
            let count = all.len() / ne;
            rep.edge_labelings = count as u64;
            if count > 0 {
                const CHUNK: u64 = 1 << 16;
                let chunks = samples.div_ceil(CHUNK) as usize;
                let parts = exec.map(chunks, |ci| -> Result<Acc> {
                    let mut r = rng::stream(seed, "region-sample", ci as u64);
                    let mut acc = Acc::default();
                    let n = CHUNK.min(samples - ci as u64 * CHUNK);
                    let mut vl = vec![0u8; nv];
                    for _ in 0..n {
                        let li = r.random_range(0..count);
                        vl.iter_mut().for_each(|x| *x = r.random_range(0..k) as u8);
                        check(&mut acc, &all[li * ne..(li + 1) * ne], &vl, 1)?;
                    }
                    Ok(acc)
                });
                for a in parts {
                    merge(&mut rep, a?);
                }
            }
        }
    }
    Ok(rep)
}

/// `Σ_{edge labelings} S_𝓛 Σ_{vertex labelings} E ∏_v 𝓛(v)` for `θ ~ N(0, I/p)`,
/// using `E ∏ |θ̂_i|^{2n_i} = ∏ n_i! p^{-n_i}` per region.
fn region_moment(net: &ExpandedNetwork, labels: &[i8], vl: &[u8], p: usize, fact: &[f64]) -> f64 {
    let h = p / 2 + 1;
    let regions = vl.iter().copied().max().map_or(0, |m| m as usize + 1);
    let mut plus = vec![0u32; regions * h];
    let mut minus = vec![0u32; regions * h];
    for (v, inc) in net.incidence.iter().enumerate() {
        let base = vl[v] as usize * h;
        for &(e, s) in inc {
            let x = s as i32 * labels[e] as i32;
            let i = x.unsigned_abs() as usize;
            if x > 0 {
                plus[base + i] += 1;
            } else {
                minus[base + i] += 1;
            }
        }
    }
    let lp = (p as f64).ln();
    let mut ln = 0.0;
    for (a, b) in plus.iter().zip(&minus) {
        if a != b {
            return 0.0;
        }
        ln += fact[*a as usize] - *a as f64 * lp;
    }
    ln.exp()
}

fn s_weight(net: &ExpandedNetwork, labels: &[i8], s: &CorrectionTable) -> f64 {
    let q = net.q;
    let mut w = 1.0;
    for l in 0..q {
        let g = |layer: usize, r| labels[net.edge_id(layer, r)] as i32;
        let (a, b, c, d) = (g(l, EdgeRole::A), g(l, EdgeRole::B), g(l, EdgeRole::C), g(l, EdgeRole::D));
        let next = (l + 1) % q;
        w *= s.get(a, b, c, d) * s.get(-g(next, EdgeRole::A), -g(next, EdgeRole::B), -c, -d);
        if w == 0.0 {
            break;
        }
    }
    w
}

/// `ln n!` for `n ≤ len`.
fn ln_factorials(len: usize) -> Vec<f64> {
    let mut f = vec![0.0; len + 1];
    for n in 1..=len {
        f[n] = f[n - 1] + (n as f64).ln();
    }
    f
}

/// Exact expected trace over signals `θ^1..θ^K ~ N(0, I/p)`.
pub fn expected_trace(net: &ExpandedNetwork, p: usize, k: usize, s: &CorrectionTable, exec: Exec) -> Result<f64> {
    if s.p() != p {
        return Err(Error::Shape(format!("correction table has p={}, expected {p}", s.p())));
    }
    let nv = net.vertex_count();
    if (k as f64).powi(nv as i32) > 1e6 {
        return Err(Error::InvalidArgument(format!("{k}^{nv} vertex labelings is too many")));
    }
    let fact = ln_factorials(3 * nv);
    let opts = EnumOptions { cancel_rule: false, ..Default::default() };
    let (parts, _) = fold_labelings(net, p, &opts, exec, || 0.0f64, |acc, labels| {
        let w = s_weight(net, labels, s);
        if w == 0.0 {
            return Ok(());
        }
        let mut vl = vec![0u8; nv];
        let mut sum = 0.0;
        loop {
            sum += region_moment(net, labels, &vl, p, &fact);
            let mut i = 0;
            loop {
                if i == nv {
                    *acc += w * sum;
                    return Ok(());
                }
                vl[i] += 1;
                if (vl[i] as usize) < k {
                    break;
                }
                vl[i] = 0;
                i += 1;
            }
        }
    })?;
    Ok(parts.iter().sum())
}

/// `Σ_𝓛 S_𝓛 ∏_v T̂(labels at v)` for fixed signals at `q = 1`; equals
/// `‖Ŵ‖_F²` labeling by labeling, with no expectation taken.
pub fn labeling_sum(p: usize, signals: &SignalSet, s: &CorrectionTable, exec: Exec) -> Result<f64> {
    let net = build_expanded(1)?;
    let t = ZeroSumTensor3::from_signals(signals, Normalization::SumOverK);
    let fs = t.space();
    let opts = EnumOptions { cancel_rule: false, ..Default::default() };
    let (parts, _) = fold_labelings(&net, p, &opts, exec, || C64::new(0.0, 0.0), |acc, labels| {
        let w = s_weight(&net, labels, s);
        if w == 0.0 {
            return Ok(());
        }
        let mut prod = C64::new(w, 0.0);
        for inc in &net.incidence {
            let ix = |k: usize| fs.index(inc[k].1 as i32 * labels[inc[k].0] as i32).expect("label in range");
            prod *= t.pair(ix(0), ix(1));
        }
        *acc += prod;
        Ok(())
    })?;
    let total: C64 = parts.iter().sum();
    Ok(total.re)
}

/// `‖Ŵ‖_F² = Σ |S_abcd Σ_{i} ∏ T̂|²` straight from the entry formula.
pub fn w_hat_frobenius_sq(wt: &VertexWeightTable, s: &CorrectionTable) -> f64 {
    let fs = wt.space();
    let p = fs.p();
    let sub = fs.difference_table();
    let mut buf = vec![C64::new(0.0, 0.0); p.pow(5)];
    let mut total = 0.0;
    for a in 0..p {
        for b in 0..p {
            for c in 0..p {
                for d in 0..p {
                    let sv = s.get_idx(a, b, c, d);
                    if sv == 0.0 {
                        continue;
                    }
                    buf.iter_mut().for_each(|x| *x = C64::new(0.0, 0.0));
                    ring_paths(wt.raw(), &sub, p, a, b, c, d, |j1234, j5, v| buf[j1234 * p + j5] += v);
                    total += sv * sv * buf.iter().map(|z| z.norm_sqr()).sum::<f64>();
                }
            }
        }
    }
    total
}

/// Real `W̃` as a p² × p⁷ matrix, rows `(a, b)`, columns `(c, d, j1..j5)`.
pub fn w_tilde(wt: &VertexWeightTable, s: &CorrectionTable) -> Result<RealMatrix> {
    let p = wt.p();
    let sub = wt.space().difference_table();
    let p5 = p.pow(5);
    let mut data = vec![C64::new(0.0, 0.0); p.pow(9)];
    for a in 0..p {
        for b in 0..p {
            for c in 0..p {
                for d in 0..p {
                    let sv = s.get_idx(a, b, c, d);
                    if sv == 0.0 {
                        continue;
                    }
                    let base = (((a * p + b) * p + c) * p + d) * p5;
                    ring_paths(wt.raw(), &sub, p, a, b, c, d, |j1234, j5, v| data[base + j1234 * p + j5] += v * sv);
                }
            }
        }
    }
    let t = ComplexTensor::from_vec(&[p; 9], data)?.to_real_modes();
    let scale = t.max_abs();
    if t.max_imag() > 1e-9 * scale {
        return Err(Error::ImaginaryResidue { residue: t.max_imag() / scale });
    }
    Matrix::from_vec(p * p, p.pow(7), t.data().iter().map(|z| z.re).collect())
}

/// `Tr((W̃W̃ᵀ)^q)` from the explicit matrix.
pub fn trace_power(w: &RealMatrix, q: usize) -> Result<f64> {
    let g = w.matmul(&w.transpose())?;
    let mut acc = g.clone();
    for _ in 1..q {
        acc = acc.matmul(&g)?;
    }
    Ok((0..acc.rows()).map(|i| acc.get(i, i)).sum())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct NetworkCheck {
    pub p: usize,
    pub q: usize,
    /// Generic contraction of the expanded network.
    pub network: f64,
    /// `Tr((W̃W̃ᵀ)^q)` from the explicit matrix.
    pub matrix: f64,
    pub agree: bool,
}

/// Contracts the expanded network on `T̂` of `signals` with `S ≡ 1` and
/// compares with the explicit matrix.
pub fn network_check(p: usize, q: usize, signals: &SignalSet) -> Result<NetworkCheck> {
    if signals.p() != p {
        return Err(Error::Shape("signal length differs from p".into()));
    }
    let net = build_expanded(q)?;
    let t = ZeroSumTensor3::from_signals(signals, Normalization::SumOverK);
    let mut m = HashMap::new();
    m.insert("T".to_string(), t.to_dense());
    let value = contract(&net.to_network_graph(), &m)?;
    let network = value.data()[0].re;
    let w = w_tilde(&VertexWeightTable::new(&t), &CorrectionTable::ones(p)?)?;
    let matrix = trace_power(&w, q)?;
    let agree = (network - matrix).abs() <= 1e-9 * matrix.abs().max(1.0);
    Ok(NetworkCheck { p, q, network, matrix, agree })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CrossCheck {
    pub p: usize,
    pub k: usize,
    pub samples: u64,
    /// Monte Carlo mean of `‖W̃‖_F²`.
    pub lhs: f64,
    pub stderr: f64,
    /// Exact labeling sum.
    pub rhs: f64,
    pub agree: bool,
}

/// Two-sided check of `E‖W̃‖_F² = Σ_𝓛 S_𝓛 E ∏_v 𝓛(v)` at `q = 1`.
///
/// `‖W̃‖_F²` is homogeneous of degree 54 in the stacked signals `g`, and for
/// Gaussian `g` the norm `ρ = ‖g‖` is independent of `g/ρ`. Each draw is
/// evaluated on the unit sphere and scaled by the exact `E[ρ⁵⁴]`, the same
/// trick as the correction-table estimator; the plain mean is hopeless.
pub fn trace_crosscheck(p: usize, k: usize, samples: u64, seed: u64, s: &CorrectionTable, exec: Exec) -> Result<CrossCheck> {
    if samples < 2 {
        return Err(Error::InvalidArgument("need at least two draws".into()));
    }
    let net = build_expanded(1)?;
    let rhs = expected_trace(&net, p, k, s, exec)?;
    // ρ² = χ²_{pK} / p
    let dims = (p * k) as f64;
    let radial: f64 = (0..27).map(|i| (dims + 2.0 * i as f64) / p as f64).product();
    const CHUNK: u64 = 1024;
    let chunks = samples.div_ceil(CHUNK) as usize;
    let parts = exec.map(chunks, |ci| -> Result<(f64, f64)> {
        let mut r = rng::stream(seed, "trace-crosscheck", ci as u64);
        let n = CHUNK.min(samples - ci as u64 * CHUNK);
        let (mut s1, mut s2) = (0.0, 0.0);
        for _ in 0..n {
            let mut sig: Vec<RealVector> = (0..k).map(|_| RealVector(rng::gaussian_vec(&mut r, p, 1.0))).collect();
            let rho = sig.iter().map(|v| v.norm().powi(2)).sum::<f64>().sqrt();
            sig.iter_mut().for_each(|v| v.0.iter_mut().for_each(|x| *x /= rho));
            let t = ZeroSumTensor3::from_signals(&SignalSet::from_real(&sig)?, Normalization::SumOverK);
            let x = w_hat_frobenius_sq(&VertexWeightTable::new(&t), s);
            s1 += x;
            s2 += x * x;
        }
        Ok((s1, s2))
    });
    let (mut s1, mut s2) = (0.0, 0.0);
    for part in parts {
        let (a, b) = part?;
        s1 += a;
        s2 += b;
    }
    let n = samples as f64;
    let mean = s1 / n;
    let var = ((s2 - n * mean * mean) / (n - 1.0)).max(0.0);
    let lhs = radial * mean;
    let stderr = radial * (var / n).sqrt();
    let agree = (lhs - rhs).abs() <= 3.0 * stderr || (lhs - rhs).abs() <= 1e-12 * rhs.abs().max(1e-300);
    Ok(CrossCheck { p, k, samples, lhs, stderr, rhs, agree })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CountBin {
    pub c: u32,
    pub count: u64,
    pub ln_bound: f64,
    pub within: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TraceReport {
    pub p: usize,
    pub q: usize,
    pub k: usize,
    pub vertices: usize,
    pub edges: usize,
    pub edge_labelings: u64,
    pub by_c: Vec<CountBin>,
    pub free_label_bound: f64,
    pub free_label_ok: bool,
    pub ring_sums_ok: bool,
    pub region: RegionReport,
    pub crosscheck: Option<CrossCheck>,
    pub network_check: Option<NetworkCheck>,
}

impl TraceReport {
    pub fn passed(&self) -> bool {
        self.free_label_ok
            && self.ring_sums_ok
            && self.by_c.iter().all(|b| b.within)
            && self.region.violations.is_empty()
            && self.crosscheck.as_ref().is_none_or(|c| c.agree)
            && self.network_check.as_ref().is_none_or(|c| c.agree)
    }
}

#[derive(Clone, Debug)]
pub struct VerifyOptions {
    pub region: RegionMode,
    /// Draws for the `q = 1` trace cross-check; 0 skips it.
    pub crosscheck_samples: u64,
    pub seed: u64,
    pub network_check: bool,
    pub enumeration: EnumOptions,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            region: RegionMode::Exhaustive,
            crosscheck_samples: 0,
            seed: 0,
            network_check: false,
            enumeration: EnumOptions::default(),
        }
    }
}

/// Runs the counting checks at `(p, q, K)`. The cross-check and network
/// check use `S` from `s` and `S ≡ 1` respectively, and only run at `q = 1`
/// and `K = 1` for the latter.
pub fn verify(p: usize, q: usize, k: usize, s: &CorrectionTable, opts: &VerifyOptions, exec: Exec) -> Result<TraceReport> {
    let net = build_expanded(q)?;
    let counts = count_labelings(&net, p, &opts.enumeration, exec)?;
    let by_c = counts
        .by_c
        .iter()
        .map(|(&c, &count)| {
            let ln_bound = ln_count_bound(c, p, q);
            CountBin { c, count, ln_bound, within: (count as f64).ln() <= ln_bound }
        })
        .collect();
    let free = free_label_bound(p, q);
    let region = verify_region_lemma(&net, p, k, opts.region, &opts.enumeration, exec)?;
    let crosscheck = if opts.crosscheck_samples > 0 && q == 1 {
        Some(trace_crosscheck(p, k, opts.crosscheck_samples, opts.seed, s, exec)?)
    } else {
        None
    };
    let network_check = if opts.network_check {
        Some(network_check(p, q, &SignalSet::random_gaussian(p, k, opts.seed)?)?)
    } else {
        None
    };
    Ok(TraceReport {
        p,
        q,
        k,
        vertices: net.vertex_count(),
        edges: net.edges.len(),
        edge_labelings: counts.total,
        by_c,
        free_label_bound: free,
        free_label_ok: counts.total as f64 <= free,
        ring_sums_ok: counts.ring_sums_ok,
        region,
        crosscheck,
        network_check,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sizes() {
        for q in 1..=3 {
            let net = build_expanded(q).unwrap();
            assert_eq!(net.vertex_count(), 18 * q);
            assert_eq!(net.edges().len(), 27 * q);
            assert_eq!(net.class_sizes(), (2 * q, 25 * q));
            assert!(net.to_network_graph().validate().is_ok());
        }
        assert!(build_expanded(0).is_err());
    }

    #[test]
    fn nothing_balances_at_p2() {
        let net = build_expanded(1).unwrap();
        let rep = count_labelings(&net, 2, &EnumOptions::default(), Exec::Parallel).unwrap();
        assert_eq!(rep.total, 0);
    }

    #[test]
    fn odd_rings_vanish_at_p4() {
        // Ring steps at p = 4 form a path graph, so no closed walk of length 9.
        let net = build_expanded(1).unwrap();
        let opts = EnumOptions { cancel_rule: false, ..Default::default() };
        assert_eq!(count_labelings(&net, 4, &opts, Exec::Parallel).unwrap().total, 0);
    }

    #[test]
    fn orders_agree_at_p6() {
        let net = build_expanded(1).unwrap();
        let counts: Vec<CountReport> = VariableOrder::ALL
            .iter()
            .map(|&order| count_labelings(&net, 6, &EnumOptions { order, ..Default::default() }, Exec::Parallel).unwrap())
            .collect();
        assert!(counts[0].total > 0);
        assert!(counts[0].ring_sums_ok);
        assert!(counts.iter().all(|c| *c == counts[0]));
    }

    #[test]
    fn budget_refusal() {
        let net = build_expanded(1).unwrap();
        let opts = EnumOptions { budget: 10, ..Default::default() };
        match count_labelings(&net, 6, &opts, Exec::Sequential) {
            Err(Error::EnumerationBudget { count }) => assert_eq!(count, 10),
            other => panic!("expected refusal, got {other:?}"),
        }
        assert!(count_labelings(&build_expanded(3).unwrap(), 2, &EnumOptions::default(), Exec::Sequential).is_err());
    }

    #[test]
    fn single_region_is_vacuous() {
        let net = build_expanded(1).unwrap();
        let labels = vec![1i8; 27];
        let st = LabelingStats::compute(&net, 4, &labels, &[0; 18]);
        assert_eq!(st.r, 1);
        assert!(st.balanced);
        assert_eq!(st.c, 26);
    }

    #[test]
    fn fixed_signal_identity_at_p6() {
        let sig = SignalSet::random_gaussian(6, 2, 21).unwrap();
        let t = ZeroSumTensor3::from_signals(&sig, Normalization::SumOverK);
        let wt = VertexWeightTable::new(&t);
        for s in [CorrectionTable::unit(6).unwrap(), CorrectionTable::ones(6).unwrap()] {
            let lhs = w_hat_frobenius_sq(&wt, &s);
            let rhs = labeling_sum(6, &sig, &s, Exec::Parallel).unwrap();
            assert!(lhs > 0.0);
            assert!((lhs - rhs).abs() <= 1e-10 * lhs, "{lhs} vs {rhs}");
        }
    }
}
