//! Tensor networks: a graph of tensor slots joined by contraction edges, and a
//! generic executor.
//!
//! A plain edge sums `Σ_i A[..i..] B[..i..]`. A dotted edge pairs index `i` on
//! its first end with `-i` on its second, which in the storage order is the
//! reversed axis. Open ports are external legs, returned in declaration order.
//!
//! Text format, one item per line, `#` starts a comment:
//!
//! ```text
//! node <name> <slot> <arity>
//! edge <node>.<port> <node>.<port>
//! dotted <node>.<port> <node>.<port>
//! leg <name> <node>.<port>
//! ```

use crate::tensor::ComplexTensor;
use crate::{Error, Result, C64};
use std::collections::HashMap;
use std::fmt::Write as _;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Port {
    pub node: usize,
    pub port: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EdgeKind {
    Plain,
    Dotted,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Edge {
    pub a: Port,
    pub b: Port,
    pub kind: EdgeKind,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Node {
    pub name: String,
    pub slot: String,
    pub arity: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Leg {
    pub name: String,
    pub port: Port,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct NetworkGraph {
    pub nodes: Vec<Node>,
    pub edges: Vec<Edge>,
    pub legs: Vec<Leg>,
}

impl NetworkGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_node(&mut self, name: &str, slot: &str, arity: usize) -> usize {
        self.nodes.push(Node { name: name.into(), slot: slot.into(), arity });
        self.nodes.len() - 1
    }

    pub fn connect(&mut self, a: (usize, usize), b: (usize, usize), kind: EdgeKind) {
        self.edges.push(Edge { a: Port { node: a.0, port: a.1 }, b: Port { node: b.0, port: b.1 }, kind });
    }

    pub fn add_leg(&mut self, name: &str, at: (usize, usize)) {
        self.legs.push(Leg { name: name.into(), port: Port { node: at.0, port: at.1 } });
    }

    pub fn node_id(&self, name: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n.name == name)
    }

    /// Every port of every node is used by exactly one edge end or leg.
    pub fn validate(&self) -> Result<()> {
        let mut used: Vec<Vec<u32>> = self.nodes.iter().map(|n| vec![0; n.arity]).collect();
        let mut mark = |p: Port| -> Result<()> {
            let slot = used
                .get_mut(p.node)
                .and_then(|v| v.get_mut(p.port))
                .ok_or_else(|| Error::Network(format!("port {}.{} does not exist", p.node, p.port)))?;
            *slot += 1;
            Ok(())
        };
        for e in &self.edges {
            mark(e.a)?;
            mark(e.b)?;
        }
        for l in &self.legs {
            mark(l.port)?;
        }
        for (n, ports) in used.iter().enumerate() {
            for (k, &c) in ports.iter().enumerate() {
                match c {
                    1 => {}
                    0 => return Err(Error::Network(format!("dangling port {}.{k}", self.nodes[n].name))),
                    _ => return Err(Error::Network(format!("port {}.{k} used {c} times", self.nodes[n].name))),
                }
            }
        }
        let mut names = std::collections::HashSet::new();
        for n in &self.nodes {
            if !names.insert(n.name.as_str()) {
                return Err(Error::Network(format!("duplicate node name {}", n.name)));
            }
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut g = NetworkGraph::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: &str| Error::Network(format!("line {}: {msg}: {raw:?}", lineno + 1));
            let words: Vec<&str> = line.split_whitespace().collect();
            match words.as_slice() {
                ["node", name, slot, arity] => {
                    let arity = arity.parse().map_err(|_| err("bad arity"))?;
                    if g.node_id(name).is_some() {
                        return Err(err("duplicate node"));
                    }
                    g.add_node(name, slot, arity);
                }
                [kind @ ("edge" | "dotted"), a, b] => {
                    let a = g.parse_port(a).ok_or_else(|| err("bad port"))?;
                    let b = g.parse_port(b).ok_or_else(|| err("bad port"))?;
                    let kind = if *kind == "edge" { EdgeKind::Plain } else { EdgeKind::Dotted };
                    g.edges.push(Edge { a, b, kind });
                }
                ["leg", name, at] => {
                    let port = g.parse_port(at).ok_or_else(|| err("bad port"))?;
                    g.legs.push(Leg { name: name.to_string(), port });
                }
                _ => return Err(err("unrecognised line")),
            }
        }
        g.validate()?;
        Ok(g)
    }

    fn parse_port(&self, s: &str) -> Option<Port> {
        let (name, port) = s.rsplit_once('.')?;
        Some(Port { node: self.node_id(name)?, port: port.parse().ok()? })
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let port = |p: Port| format!("{}.{}", self.nodes[p.node].name, p.port);
        for n in &self.nodes {
            let _ = writeln!(out, "node {} {} {}", n.name, n.slot, n.arity);
        }
        for e in &self.edges {
            let kind = match e.kind {
                EdgeKind::Plain => "edge",
                EdgeKind::Dotted => "dotted",
            };
            let _ = writeln!(out, "{kind} {} {}", port(e.a), port(e.b));
        }
        for l in &self.legs {
            let _ = writeln!(out, "leg {} {}", l.name, port(l.port));
        }
        out
    }
}

/// Networks used by the library and its tests, in the text format.
pub mod builtin {
    use super::NetworkGraph;

    /// `B_abcd = Σ_i T_abi T_cdi`.
    pub const PAIR_CONTRACTION: &str = include_str!("../networks/pair_contraction.tn");
    /// `C_abcd = Σ_ijk T_acj T_bdk T_ijk u_i`.
    pub const HSSS: &str = include_str!("../networks/hsss.tn");
    /// Ring of nine order-3 tensors with five legs closed by an order-5 `u`;
    /// open legs `a, b, c, d`.
    pub const RING: &str = include_str!("../networks/ring.tn");
    /// `M_ab = Σ_jk T_ajk T_bjk`.
    pub const UNFOLDING: &str = include_str!("../networks/unfolding.tn");
    /// `C_acbd = Σ_i T_iab T_icd`, legs ordered `a, c, b, d`.
    pub const SPECTRAL_SOS: &str = include_str!("../networks/spectral_sos.tn");
    /// `M_jk = Σ_il T_ill T_ijk`.
    pub const PARTIAL_TRACE: &str = include_str!("../networks/partial_trace.tn");
    /// `z_j = Σ_i T_iij`.
    pub const HOMOTOPY_INIT: &str = include_str!("../networks/homotopy_init.tn");

    pub fn load(text: &str) -> NetworkGraph {
        NetworkGraph::parse(text).expect("built-in network is well formed")
    }

    pub fn all() -> Vec<(&'static str, &'static str)> {
        vec![
            ("pair_contraction", PAIR_CONTRACTION),
            ("hsss", HSSS),
            ("ring", RING),
            ("unfolding", UNFOLDING),
            ("spectral_sos", SPECTRAL_SOS),
            ("partial_trace", PARTIAL_TRACE),
            ("homotopy_init", HOMOTOPY_INIT),
        ]
    }
}

struct Work {
    labels: Vec<usize>,
    t: ComplexTensor,
    id: usize,
}

/// Contracts `net` with `tensors[slot]` placed at every node of that slot.
///
/// Pairs are eliminated greedily by smallest intermediate size, ties going to
/// the lowest node ids, so the summation order is deterministic. Zero entries
/// of the left operand are skipped, so sparse inputs cost only their support.
pub fn contract(net: &NetworkGraph, tensors: &HashMap<String, ComplexTensor>) -> Result<ComplexTensor> {
    net.validate()?;
    let n_edges = net.edges.len();
    let mut port_label: Vec<Vec<usize>> = net.nodes.iter().map(|n| vec![usize::MAX; n.arity]).collect();
    let mut flips: Vec<Vec<bool>> = net.nodes.iter().map(|n| vec![false; n.arity]).collect();
    for (e, edge) in net.edges.iter().enumerate() {
        port_label[edge.a.node][edge.a.port] = e;
        port_label[edge.b.node][edge.b.port] = e;
        if edge.kind == EdgeKind::Dotted {
            flips[edge.b.node][edge.b.port] = true;
        }
    }
    for (k, leg) in net.legs.iter().enumerate() {
        port_label[leg.port.node][leg.port.port] = n_edges + k;
    }

    let mut dims: HashMap<usize, usize> = HashMap::new();
    let mut work = Vec::with_capacity(net.nodes.len());
    for (id, node) in net.nodes.iter().enumerate() {
        let t = tensors
            .get(&node.slot)
            .ok_or_else(|| Error::Network(format!("no tensor for slot {}", node.slot)))?;
        if t.order() != node.arity {
            return Err(Error::Network(format!(
                "node {} has arity {} but slot {} holds an order-{} tensor",
                node.name,
                node.arity,
                node.slot,
                t.order()
            )));
        }
        for (port, &label) in port_label[id].iter().enumerate() {
            let d = t.shape()[port];
            if *dims.entry(label).or_insert(d) != d {
                return Err(Error::Network(format!("inconsistent dimension at {}.{port}", node.name)));
            }
        }
        let mut t = t.clone();
        for (port, &f) in flips[id].iter().enumerate() {
            if f {
                t = reverse_axis(&t, port);
            }
        }
        let mut w = Work { labels: port_label[id].clone(), t, id };
        trace_repeated(&mut w)?;
        work.push(w);
    }

    while work.len() > 1 {
        let mut best: Option<(usize, usize, usize, usize, usize)> = None;
        for i in 0..work.len() {
            for j in i + 1..work.len() {
                if !work[i].labels.iter().any(|l| work[j].labels.contains(l)) {
                    continue;
                }
                let size: usize = work[i]
                    .labels
                    .iter()
                    .chain(&work[j].labels)
                    .filter(|l| !(work[i].labels.contains(l) && work[j].labels.contains(l)))
                    .map(|l| dims[l])
                    .product();
                let (lo, hi) = (work[i].id.min(work[j].id), work[i].id.max(work[j].id));
                let key = (size, lo, hi, i, j);
                if best.is_none_or(|b| (key.0, key.1, key.2) < (b.0, b.1, b.2)) {
                    best = Some(key);
                }
            }
        }
        // Disconnected pieces are joined by an outer product of the two
        // lowest-id remaining tensors.
        let (i, j) = match best {
            Some((_, _, _, i, j)) => (i, j),
            None => {
                let mut order: Vec<usize> = (0..work.len()).collect();
                order.sort_by_key(|&k| work[k].id);
                (order[0].min(order[1]), order[0].max(order[1]))
            }
        };
        let b = work.remove(j);
        let a = work.remove(i);
        let mut merged = pair_contract(&a, &b)?;
        trace_repeated(&mut merged)?;
        work.push(merged);
    }

    let last = work.pop().ok_or_else(|| Error::Network("empty network".into()))?;
    let perm: Vec<usize> = (0..net.legs.len())
        .map(|k| last.labels.iter().position(|&l| l == n_edges + k).expect("every leg survives"))
        .collect();
    if perm.is_empty() {
        return Ok(ComplexTensor::scalar(last.t.data()[0]));
    }
    last.t.permute(&perm)
}

fn reverse_axis(t: &ComplexTensor, axis: usize) -> ComplexTensor {
    let shape = t.shape().to_vec();
    let inner: usize = shape[axis + 1..].iter().product();
    let n = shape[axis];
    let mut out = t.clone();
    let src = t.data();
    let dst = out.data_mut();
    for (o, block) in dst.chunks_mut(n * inner).enumerate() {
        let base = o * n * inner;
        for k in 0..n {
            block[k * inner..(k + 1) * inner].copy_from_slice(&src[base + (n - 1 - k) * inner..base + (n - k) * inner]);
        }
    }
    out
}

/// Sums out any label that occurs twice on one tensor (a self-loop).
fn trace_repeated(w: &mut Work) -> Result<()> {
    loop {
        let mut pair = None;
        'find: for i in 0..w.labels.len() {
            for j in i + 1..w.labels.len() {
                if w.labels[i] == w.labels[j] {
                    pair = Some((i, j));
                    break 'find;
                }
            }
        }
        let Some((i, j)) = pair else { return Ok(()) };
        let rest: Vec<usize> = (0..w.labels.len()).filter(|&k| k != i && k != j).collect();
        let mut perm = rest.clone();
        perm.push(i);
        perm.push(j);
        let t = w.t.permute(&perm)?;
        let n = w.t.shape()[i];
        let outer: usize = rest.iter().map(|&k| w.t.shape()[k]).product();
        let data: Vec<C64> = (0..outer).map(|o| (0..n).map(|k| t.data()[o * n * n + k * n + k]).sum()).collect();
        let shape: Vec<usize> = rest.iter().map(|&k| w.t.shape()[k]).collect();
        w.t = ComplexTensor::from_vec(&shape, data)?;
        w.labels = rest.iter().map(|&k| w.labels[k]).collect();
    }
}

fn pair_contract(a: &Work, b: &Work) -> Result<Work> {
    let shared: Vec<usize> = a.labels.iter().copied().filter(|l| b.labels.contains(l)).collect();
    let fa: Vec<usize> = (0..a.labels.len()).filter(|&k| !shared.contains(&a.labels[k])).collect();
    let fb: Vec<usize> = (0..b.labels.len()).filter(|&k| !shared.contains(&b.labels[k])).collect();
    let sa: Vec<usize> = shared.iter().map(|l| a.labels.iter().position(|x| x == l).unwrap()).collect();
    let sb: Vec<usize> = shared.iter().map(|l| b.labels.iter().position(|x| x == l).unwrap()).collect();

    let pa: Vec<usize> = fa.iter().chain(&sa).copied().collect();
    let pb: Vec<usize> = sb.iter().chain(&fb).copied().collect();
    let ta = a.t.permute(&pa)?;
    let tb = b.t.permute(&pb)?;
    let m: usize = fa.iter().map(|&k| a.t.shape()[k]).product();
    let s: usize = sa.iter().map(|&k| a.t.shape()[k]).product();
    let n: usize = fb.iter().map(|&k| b.t.shape()[k]).product();
    let mut out = vec![C64::new(0.0, 0.0); m * n];
    let (da, db) = (ta.data(), tb.data());
    for r in 0..m {
        let row = &mut out[r * n..(r + 1) * n];
        for k in 0..s {
            let x = da[r * s + k];
            if x.re == 0.0 && x.im == 0.0 {
                continue;
            }
            row.iter_mut().zip(&db[k * n..(k + 1) * n]).for_each(|(o, y)| *o += x * y);
        }
    }
    let shape: Vec<usize> = fa.iter().map(|&k| a.t.shape()[k]).chain(fb.iter().map(|&k| b.t.shape()[k])).collect();
    let labels = fa.iter().map(|&k| a.labels[k]).chain(fb.iter().map(|&k| b.labels[k])).collect();
    Ok(Work { labels, t: ComplexTensor::from_vec(&shape, out)?, id: a.id.min(b.id) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn random(shape: &[usize], seed: u64) -> ComplexTensor {
        let n: usize = shape.iter().product();
        let mut r = rng::stream(seed, "net-test", 0);
        let re = rng::gaussian_vec(&mut r, n, 1.0);
        let im = rng::gaussian_vec(&mut r, n, 1.0);
        ComplexTensor::from_vec(shape, re.into_iter().zip(im).map(|(a, b)| C64::new(a, b)).collect()).unwrap()
    }

    #[test]
    fn builtins_parse_and_roundtrip() {
        for (name, text) in builtin::all() {
            let g = NetworkGraph::parse(text).unwrap_or_else(|e| panic!("{name}: {e}"));
            assert_eq!(NetworkGraph::parse(&g.to_text()).unwrap(), g, "{name}");
        }
    }

    #[test]
    fn validation_errors() {
        assert!(NetworkGraph::parse("node A T 2\nleg x A.0").is_err());
        assert!(NetworkGraph::parse("node A T 1\nleg x A.0\nleg y A.0").is_err());
        assert!(NetworkGraph::parse("node A T 1\nleg x A.1").is_err());
        assert!(NetworkGraph::parse("node A T 1\nnode A T 1").is_err());
        assert!(NetworkGraph::parse("bogus").is_err());
        let g = NetworkGraph::parse("node A T 2\nleg x A.0\nleg y A.1").unwrap();
        let mut m = HashMap::new();
        m.insert("T".to_string(), random(&[2, 2, 2], 1));
        assert!(contract(&g, &m).is_err());
        assert!(contract(&g, &HashMap::new()).is_err());
        let mismatch = NetworkGraph::parse("node A T 2\nnode B T 2\nedge A.0 B.1\nedge A.1 B.0").unwrap();
        m.insert("T".to_string(), random(&[2, 3], 1));
        assert!(contract(&mismatch, &m).is_err());
    }

    #[test]
    fn identity_network() {
        let g = NetworkGraph::parse("node A T 3\nleg x A.0\nleg y A.1\nleg z A.2").unwrap();
        let t = random(&[2, 3, 4], 2);
        let mut m = HashMap::new();
        m.insert("T".to_string(), t.clone());
        assert_eq!(contract(&g, &m).unwrap(), t);
        let swapped = NetworkGraph::parse("node A T 3\nleg z A.2\nleg x A.0\nleg y A.1").unwrap();
        assert_eq!(contract(&swapped, &m).unwrap(), t.permute(&[2, 0, 1]).unwrap());
    }

    #[test]
    fn dotted_edge_pairs_negated_indices() {
        let g = NetworkGraph::parse("node A a 1\nnode B b 1\ndotted A.0 B.0").unwrap();
        let a = random(&[4], 3);
        let b = random(&[4], 4);
        let mut m = HashMap::new();
        m.insert("a".to_string(), a.clone());
        m.insert("b".to_string(), b.clone());
        let got = contract(&g, &m).unwrap().data()[0];
        let want: C64 = (0..4).map(|k| a.data()[k] * b.data()[3 - k]).sum();
        assert!((got - want).norm() < 1e-14);
    }

    #[test]
    fn self_loop_and_disconnected() {
        let g = NetworkGraph::parse("node A T 2\nnode B v 1\nedge A.0 A.1\nleg x B.0").unwrap();
        let t = random(&[3, 3], 5);
        let v = random(&[2], 6);
        let mut m = HashMap::new();
        m.insert("T".to_string(), t.clone());
        m.insert("v".to_string(), v.clone());
        let tr: C64 = (0..3).map(|k| t.get(&[k, k])).sum();
        let got = contract(&g, &m).unwrap();
        for k in 0..2 {
            assert!((got.data()[k] - tr * v.data()[k]).norm() < 1e-14);
        }
    }
}
