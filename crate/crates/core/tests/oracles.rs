// Independent oracles: every fast path against a slower route that shares
// none of its indexing code.

use cmra::baselines::*;
use cmra::correction::*;
use cmra::moments::*;
use cmra::network::{builtin, contract};
use cmra::ring::*;
use cmra::tensor::*;
use cmra::trace::*;
use cmra::{rng, Exec, C64};
use std::collections::HashMap;

fn random_c(shape: &[usize], seed: u64) -> ComplexTensor {
    let n: usize = shape.iter().product();
    let mut r = rng::stream(seed, "oracle", 0);
    let v = rng::gaussian_vec(&mut r, 2 * n, 1.0);
    ComplexTensor::from_vec(shape, v.chunks(2).map(|z| C64::new(z[0], z[1])).collect()).unwrap()
}

fn slots(t: &ComplexTensor, u: Option<&ComplexTensor>) -> HashMap<String, ComplexTensor> {
    let mut m = HashMap::new();
    m.insert("T".to_string(), t.clone());
    if let Some(u) = u {
        m.insert("u".to_string(), u.clone());
    }
    m
}

fn close(a: &[C64], b: &[C64], tol: f64) {
    assert_eq!(a.len(), b.len());
    let scale = b.iter().fold(1.0f64, |m, z| m.max(z.norm()));
    for (x, y) in a.iter().zip(b) {
        assert!((x - y).norm() <= tol * scale, "{x} vs {y}");
    }
}

const Z: C64 = C64 { re: 0.0, im: 0.0 };

#[test]
fn small_networks_match_nested_loops() {
    for p in [2usize, 3, 4] {
        let t = random_c(&[p; 3], p as u64);
        let u = random_c(&[p], 10 + p as u64);
        let g = |i: usize, j: usize, k: usize| t.get(&[i, j, k]);

        let mut pair = vec![Z; p.pow(4)];
        let mut hsss = vec![Z; p.pow(4)];
        let mut sos = vec![Z; p.pow(4)];
        for a in 0..p {
            for b in 0..p {
                for c in 0..p {
                    for d in 0..p {
                        let e = ((a * p + b) * p + c) * p + d;
                        for i in 0..p {
                            pair[e] += g(a, b, i) * g(c, d, i);
                            // legs are declared a, c, b, d
                            sos[e] += g(i, a, c) * g(i, b, d);
                            for j in 0..p {
                                for k in 0..p {
                                    hsss[e] += g(a, c, j) * g(b, d, k) * g(i, j, k) * u.data()[i];
                                }
                            }
                        }
                    }
                }
            }
        }
        let mut unf = vec![Z; p * p];
        let mut pt = vec![Z; p * p];
        let mut hom = vec![Z; p];
        for a in 0..p {
            for b in 0..p {
                for j in 0..p {
                    for k in 0..p {
                        unf[a * p + b] += g(a, j, k) * g(b, j, k);
                        pt[a * p + b] += g(j, k, k) * g(j, a, b);
                    }
                }
            }
            for i in 0..p {
                hom[a] += g(i, i, a);
            }
        }
        let run = |text: &str, with_u: bool| contract(&builtin::load(text), &slots(&t, with_u.then_some(&u))).unwrap();
        close(run(builtin::PAIR_CONTRACTION, false).data(), &pair, 1e-10);
        close(run(builtin::HSSS, true).data(), &hsss, 1e-10);
        close(run(builtin::SPECTRAL_SOS, false).data(), &sos, 1e-10);
        close(run(builtin::UNFOLDING, false).data(), &unf, 1e-10);
        close(run(builtin::PARTIAL_TRACE, false).data(), &pt, 1e-10);
        close(run(builtin::HOMOTOPY_INIT, false).data(), &hom, 1e-10);
    }
}

/// Ring entry as `Σ_j û_{-j} Tr(A_{x1} ⋯ A_{x9})` with
/// `A_x[r][c] = T[-r, x, c]`; dotted pairings become the row negation.
fn ring_by_traces(t: &ComplexTensor, u: &ComplexTensor) -> Vec<C64> {
    let p = t.shape()[0];
    let neg = |k: usize| p - 1 - k;
    let mats: Vec<Vec<C64>> = (0..p)
        .map(|x| {
            let mut m = vec![Z; p * p];
            for r in 0..p {
                for c in 0..p {
                    m[r * p + c] = t.get(&[neg(r), x, c]);
                }
            }
            m
        })
        .collect();
    let mul = |a: &[C64], b: &[C64]| {
        let mut out = vec![Z; p * p];
        for i in 0..p {
            for k in 0..p {
                for j in 0..p {
                    out[i * p + j] += a[i * p + k] * b[k * p + j];
                }
            }
        }
        out
    };
    let mut out = vec![Z; p.pow(4)];
    for (e, slot) in out.iter_mut().enumerate() {
        let (a, b, c, d) = (e / p.pow(3), (e / (p * p)) % p, (e / p) % p, e % p);
        for jf in 0..p.pow(5) {
            let js: Vec<usize> = (0..5).map(|k| (jf / p.pow(4 - k as u32)) % p).collect();
            let xs = [a, js[0], c, js[1], b, js[2], d, js[3], js[4]];
            let mut acc = mats[xs[0]].clone();
            for &x in &xs[1..] {
                acc = mul(&acc, &mats[x]);
            }
            let tr: C64 = (0..p).map(|i| acc[i * p + i]).sum();
            let ui: Vec<usize> = js.iter().map(|&j| neg(j)).collect();
            *slot += tr * u.get(&ui);
        }
    }
    out
}

#[test]
fn ring_network_matches_matrix_traces() {
    for p in [2usize, 4] {
        let t = random_c(&[p; 3], 20 + p as u64);
        let u = random_c(&[p; 5], 30 + p as u64);
        let got = contract(&builtin::load(builtin::RING), &slots(&t, Some(&u))).unwrap();
        close(got.data(), &ring_by_traces(&t, &u), 1e-10);
    }
}

fn ring_vs_network(p: usize, seed: u64) -> (f64, f64) {
    let sig = SignalSet::random_gaussian(p, 2, seed).unwrap();
    let t = ZeroSumTensor3::from_signals(&sig, Normalization::SumOverK);
    let u = random_c(&[p; 5], seed + 1);
    let fast = ring_contract(&VertexWeightTable::new(&t), &u, &CorrectionTable::ones(p).unwrap(), Exec::Parallel).unwrap();
    let generic = contract(&builtin::load(builtin::RING), &slots(&t.to_dense(), Some(&u))).unwrap();
    let diff = fast.data().iter().zip(generic.data()).fold(0.0f64, |m, (x, y)| m.max((x - y).norm()));
    (diff, generic.data().iter().fold(0.0f64, |m, z| m.max(z.norm())))
}

#[test]
fn ring_contract_matches_generic_network() {
    // p=4 only compares zeros: no closed walk of length nine exists there.
    let (diff, scale) = ring_vs_network(4, 40);
    assert_eq!(scale, 0.0);
    assert_eq!(diff, 0.0);
    let (diff, scale) = ring_vs_network(6, 41);
    assert!(scale > 0.0);
    assert!(diff <= 1e-10 * scale, "{diff} vs {scale}");
}

#[test]
fn global_frequency_constraint() {
    let p = 6;
    let sig = SignalSet::random_gaussian(p, 1, 42).unwrap();
    let t = ZeroSumTensor3::from_signals(&sig, Normalization::SumOverK);
    let u = random_c(&[p; 5], 43);
    let m = ring_contract(&VertexWeightTable::new(&t), &u, &CorrectionTable::ones(p).unwrap(), Exec::Parallel).unwrap();
    let fs = FreqSpace::new(p).unwrap();
    let h = fs.half();
    for e in 0..p.pow(4) {
        let f = |k: usize| fs.freq(k);
        let total = f(e / p.pow(3)) + f((e / (p * p)) % p) + f((e / p) % p) + f(e % p);
        // five nonzero frequencies in ±[h] reach every sum in [-5h, 5h] when h ≥ 2
        if total.abs() > 5 * h {
            assert_eq!(m.data()[e], Z);
        }
    }
}

#[test]
fn expected_s_matches_monte_carlo() {
    for (p, samples) in [(4usize, 2000u64), (6, 20000)] {
        let (mean, se) = monte_carlo_expected_s(p, samples, 7, Exec::Parallel).unwrap();
        let exact = expected_s_table(p, Exec::Parallel).unwrap();
        let mut worst: f64 = 0.0;
        for e in 0..exact.len() {
            if se[e] > 0.0 {
                worst = worst.max((mean[e] - exact[e]).abs() / se[e]);
            } else {
                assert_eq!(mean[e], exact[e]);
            }
        }
        assert!(worst <= 3.0, "p={p}: worst z {worst}");
    }
}

#[test]
fn brute_force_counts_match_enumeration() {
    // 2^27 assignments at q=1; q=2 is out of reach for the odometer.
    for q in [1usize] {
        let net = build_expanded(q).unwrap();
        for cancel in [false, true] {
            let opts = EnumOptions { cancel_rule: cancel, ..Default::default() };
            let n = count_labelings(&net, 2, &opts, Exec::Parallel).unwrap().total;
            assert_eq!(n, brute_force_count(&net, 2, cancel, 1 << 30).unwrap());
        }
    }
}

#[test]
fn indicator_contraction_counts_labelings() {
    // Contracting the expanded network on the zero-sum indicator counts
    // exactly the labelings with every vertex balanced.
    for p in [4usize, 6] {
        let fs = FreqSpace::new(p).unwrap();
        let mut ind = ComplexTensor::zeros(&[p; 3]);
        for i in 0..p {
            for j in 0..p {
                for k in 0..p {
                    if fs.freq(i) + fs.freq(j) + fs.freq(k) == 0 {
                        ind.set(&[i, j, k], C64::new(1.0, 0.0));
                    }
                }
            }
        }
        let net = build_expanded(1).unwrap();
        let want = contract(&net.to_network_graph(), &slots(&ind, None)).unwrap().data()[0].re;
        let opts = EnumOptions { cancel_rule: false, ..Default::default() };
        let got = count_labelings(&net, p, &opts, Exec::Parallel).unwrap().total;
        assert_eq!(got as f64, want, "p={p}");
    }
}

#[test]
fn expanded_network_reproduces_trace_power() {
    for (p, q) in [(2usize, 1usize), (2, 2), (6, 1)] {
        let sig = SignalSet::random_gaussian(p, 1, 50 + p as u64).unwrap();
        let c = network_check(p, q, &sig).unwrap();
        assert!(c.agree, "{c:?}");
        if p == 6 {
            assert!(c.matrix.abs() > 0.0);
        }
    }
}

#[test]
fn frequency_marching_recovers_orbit() {
    for p in [4usize, 8] {
        for seed in 0..5 {
            let sig = SignalSet::random_gaussian(p, 1, 60 + seed).unwrap();
            let t2 = exact_moment(&sig, 2, Normalization::SumOverK).unwrap();
            let t3 = exact_moment(&sig, 3, Normalization::SumOverK).unwrap();
            let est = frequency_marching(&t2, &t3).unwrap();
            let a = cmra::spectral::unit_real(&est).unwrap();
            let b = cmra::spectral::unit_real(&sig.signals()[0]).unwrap();
            let oc = cmra::spectral::orbit_correlation(&a, &b).unwrap();
            assert!((oc.orbit_max - 1.0).abs() < 1e-9, "{oc:?}");
        }
    }
}

#[test]
fn pca_networks_match_loops() {
    for p in [5usize, 20] {
        let inst = PcaInstance::random(p, 2.0, 70, p as u64).unwrap();
        for (l, n) in [
            (unfolding_matrix(&inst.t, Path::Loops).unwrap(), unfolding_matrix(&inst.t, Path::Network).unwrap()),
            (spectral_sos_matrix(&inst.t, Path::Loops).unwrap(), spectral_sos_matrix(&inst.t, Path::Network).unwrap()),
            (partial_trace_matrix(&inst.t, Path::Loops).unwrap(), partial_trace_matrix(&inst.t, Path::Network).unwrap()),
        ] {
            assert!(l.sub(&n).unwrap().max_abs() <= 1e-10 * l.max_abs().max(1.0));
        }
        let (a, b) = (homotopy_vector(&inst.t, Path::Loops).unwrap(), homotopy_vector(&inst.t, Path::Network).unwrap());
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() <= 1e-10);
        }
    }
}

#[test]
fn hsss_three_routes_agree() {
    let p = 5;
    let mut r = rng::stream(80, "oracle", 1);
    let comps: Vec<Vec<f64>> = (0..3).map(|_| rng::gaussian_vec(&mut r, p, 1.0)).collect();
    let u = rng::gaussian_vec(&mut r, p, 1.0);
    let t = tensor_from_components(&comps).unwrap();
    let a = hsss_matrix(&t, &u).unwrap();
    let b = hsss_matrix_network(&t, &u).unwrap();
    let c = hsss_from_components(&comps, &u).unwrap();
    assert!(a.sub(&b).unwrap().max_abs() <= 1e-10);
    assert!(a.sub(&c).unwrap().max_abs() <= 1e-10);
}

#[test]
fn trace_crosscheck_agrees_where_labelings_exist() {
    let s = correction_table(6, CorrectionMode::Exact, Exec::Parallel).unwrap();
    let c = trace_crosscheck(6, 1, 300, 5, &s, Exec::Parallel).unwrap();
    assert!(c.rhs > 0.0);
    assert!(c.agree, "{c:?}");
}
