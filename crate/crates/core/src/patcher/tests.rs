use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::numcore::{check_params, finite_diff_check, Probe, Tape};
use crate::structgraph::{batch_graphs, Atom, AtomGraph, Modality};

fn cloud(n: usize, rng: &mut ChaCha8Rng) -> AtomGraph {
    let mut g = AtomGraph::new(Modality::Molecule, vec![Atom::molecular(6, false); n]);
    g.coords = Some((0..n).map(|_| [0; 3].map(|_| rng.random_range(-2.0..2.0))).collect());
    g
}

fn random(r: usize, c: usize, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
}

fn coords_of(b: &BatchedGraph) -> Tensor {
    Tensor::new(b.len(), 3, b.coords.iter().flatten().copied().collect()).unwrap()
}

#[test]
fn selection_examples() {
    assert_eq!(select_anchors(&[0.0; 100], 0.1, 2048).len(), 10);
    assert_eq!(select_anchors(&[2.0, 1.0, 0.0], 0.7, 2048), vec![0, 1]);
    assert_eq!(select_anchors(&[0.0; 10], 1.0, 3), vec![0, 1, 2]);
    assert_eq!(select_anchors(&[0.5], 0.1, 5), vec![0]);
    assert_eq!(select_anchors(&[1.0, 3.0, 3.0, 0.0], 0.5, 9), vec![1, 2]);
}

#[test]
fn uniform_count_is_ceiling_of_rho_n() {
    for n in [1usize, 10, 100, 40960] {
        for rho in [0.1, 0.5, 1.0] {
            let expect = ((rho * n as f64).ceil() as usize).min(2048);
            assert_eq!(select_anchors(&vec![0.0; n], rho, 2048).len(), expect, "n={n} rho={rho}");
        }
    }
}

#[test]
fn soft_assignment_examples() {
    let tape = Tape::new();
    let cfg = PatchConfig {
        temperature: 1.0,
        ..PatchConfig::default()
    };
    let p = tape.constant(Tensor::from_rows(&[[0.0, 0.0, 0.0], [2.0, 0.0, 0.0], [1.0, 0.0, 0.0]]).unwrap());
    let l = tape.constant(Tensor::zeros(3, 1));
    let w = soft_assign(p, &[0], l, &cfg).unwrap().value();
    assert_eq!(w.data(), &[1.0, 1.0, 1.0]);
    let w = soft_assign(p, &[0, 1], l, &cfg).unwrap().value();
    assert!((w.get(2, 0) - 0.5).abs() < 1e-15);
    let p = tape.constant(Tensor::from_rows(&[[0.0, 0.0, 0.0], [2.0, 0.0, 0.0]]).unwrap());
    let w = soft_assign(p, &[0, 1], tape.constant(Tensor::zeros(2, 1)), &cfg).unwrap().value();
    let oracle = 1.0 / (1.0 + (-4.0f64).exp());
    assert!((w.get(0, 0) - 0.982_013_790_037_908_4).abs() < 1e-12);
    assert!((w.get(0, 0) - oracle).abs() < 1e-15);
    assert!((w.get(0, 1) - 0.017_986_209_962_091_56).abs() < 1e-12);
}

#[test]
fn raising_an_anchor_logit_grows_its_patch() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let tape = Tape::new();
    let cfg = PatchConfig::default();
    let p = tape.constant(random(6, 3, &mut rng));
    let base = random(6, 1, &mut rng);
    let mut raised = base.clone();
    raised.set(2, 0, base.get(2, 0) + 0.3);
    let w0 = soft_assign(p, &[2, 4], tape.constant(base), &cfg).unwrap().value();
    let w1 = soft_assign(p, &[2, 4], tape.constant(raised), &cfg).unwrap().value();
    for i in 0..6 {
        assert!(w1.get(i, 0) > w0.get(i, 0));
    }
}

#[test]
fn pooling_examples() {
    let tape = Tape::new();
    let x = tape.constant(Tensor::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap());
    let w = tape.constant(Tensor::from_rows(&[[0.5], [0.5]]).unwrap());
    let t = pool_patches(w, x, 1e-8).unwrap().value();
    assert!((t.get(0, 0) - 2.0).abs() < 1e-7 && (t.get(0, 1) - 3.0).abs() < 1e-7);
    let one = pool_patches(tape.constant(Tensor::scalar(1.0)), tape.constant(Tensor::row_vector(vec![4.0, -2.0])), 1e-8)
        .unwrap()
        .value();
    assert_eq!(one.data(), &[4.0 / (1.0 + 1e-8), -2.0 / (1.0 + 1e-8)]);
}

#[test]
fn pooling_gradient_closed_form_matches_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let w = random(5, 3, &mut rng).map(|v| v.abs() + 0.1);
    let x = random(5, 4, &mut rng);
    let report = finite_diff_check(
        |_, v| Ok(Probe::smooth(pool_patches(v[0], v[1], 1e-8)?.square().sum())),
        &[w, x],
        1e-6,
    )
    .unwrap();
    assert!(report.passes(1e-7), "{}", report.max_rel_error());
}

#[test]
fn two_graph_uniform_batch() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let b = batch_graphs(&[cloud(40, &mut rng), cloud(400, &mut rng)]).unwrap();
    let tape = Tape::new();
    let patched = patch_from_logits(
        tape.constant(Tensor::zeros(440, 1)),
        tape.constant(random(440, 4, &mut rng)),
        tape.constant(coords_of(&b)),
        &b,
        &PatchConfig::default(),
    )
    .unwrap();
    let r = patched.result();
    assert_eq!(r.counts, vec![4, 40]);
    assert_eq!(r.max_count(), 40);
    assert!(r.mask[0][..4].iter().all(|&m| m) && r.mask[0][4..].iter().all(|&m| !m));
    assert!(r.anchors[0][4..].iter().all(|&a| a == -1));
    assert!(r.anchors[1].iter().all(|&a| (40..440).contains(&a)));
    assert!(r.tokens[0].row(10).iter().all(|&v| v == 0.0));
    for w in &r.membership {
        for i in 0..w.rows() {
            assert!((w.row(i).iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
    }
}

#[test]
fn doubling_a_graph_doubles_uniform_count() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let g = cloud(30, &mut rng);
    let mut doubled = AtomGraph::new(g.modality, [g.atoms.clone(), g.atoms.clone()].concat());
    let shifted: Vec<[f64; 3]> = g.coords.as_ref().unwrap().iter().map(|p| [p[0] + 50.0, p[1], p[2]]).collect();
    doubled.coords = Some([g.coords.clone().unwrap(), shifted].concat());
    let cfg = PatchConfig::default();
    let count = |g: &AtomGraph| {
        let b = batch_graphs(std::slice::from_ref(g)).unwrap();
        let tape = Tape::new();
        let n = b.len();
        let patched = patch_from_logits(
            tape.constant(Tensor::zeros(n, 1)),
            tape.constant(Tensor::zeros(n, 2)),
            tape.constant(coords_of(&b)),
            &b,
            &cfg,
        )
        .unwrap();
        patched.counts()[0]
    };
    let (single, double) = (count(&g), count(&doubled));
    assert_eq!(plan_counts(&[0.0; 60], &[60], &cfg).unwrap(), vec![double]);
    assert_eq!((single, double), (3, 6));
}

#[test]
fn shifted_logits_leave_patching_unchanged() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let b = batch_graphs(&[cloud(12, &mut rng)]).unwrap();
    let tape = Tape::new();
    let logits = random(12, 1, &mut rng).map(|v| 3.0 * v);
    let x = tape.constant(random(12, 3, &mut rng));
    let p = tape.constant(coords_of(&b));
    let cfg = PatchConfig {
        rho: 0.5,
        ..PatchConfig::default()
    };
    let a = patch_from_logits(tape.constant(logits.clone()), x, p, &b, &cfg).unwrap();
    let c = patch_from_logits(tape.constant(logits.map(|v| v + 7.25)), x, p, &b, &cfg).unwrap();
    assert_eq!(a.anchors, c.anchors);
    assert!(a.membership[0].value().max_abs_diff(&c.membership[0].value()) <= 1e-12);
}

#[test]
fn gate_is_pointwise() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut params = ParamSet::new();
    let gate = AnchorGate::init(&mut params, 4, 3, 8, 0.0, &mut rng);
    let tape = Tape::new();
    let p = params.bind(&tape, |_| false);
    let mut xv = random(5, 4, &mut rng);
    for k in 0..4 {
        let v = xv.get(0, k);
        xv.set(3, k, v);
    }
    let z = tape.constant(random(2, 3, &mut rng));
    let l = gate_logits(&p, &gate, z, tape.constant(xv.clone()), &[0, 0, 1, 0, 1], None).unwrap().value();
    assert_eq!(l.get(0, 0), l.get(3, 0));
    let perm = [4usize, 2, 0, 1, 3];
    let xp = Tensor::from_fn(5, 4, |r, c| xv.get(perm[r], c));
    let graph_of = [0, 0, 1, 0, 1];
    let bp: Vec<usize> = perm.iter().map(|&r| graph_of[r]).collect();
    let lp = gate_logits(&p, &gate, z, tape.constant(xp), &bp, None).unwrap().value();
    for (r, &o) in perm.iter().enumerate() {
        assert_eq!(lp.get(r, 0), l.get(o, 0));
    }
    let missing = gate_logits(&p, &gate, z, tape.constant(xv), &[0, 0, 2, 0, 1], None);
    assert!(missing.is_err());

    gate.zero(&mut params).unwrap();
    params.get_mut("gate.1.bias").unwrap().set(0, 0, 0.75);
    let tape = Tape::new();
    let p = params.bind(&tape, |_| false);
    let l = gate_logits(&p, &gate, tape.constant(random(1, 3, &mut rng)), tape.constant(random(4, 4, &mut rng)), &[0; 4], None)
        .unwrap()
        .value();
    assert!(l.data().iter().all(|&v| v == 0.75));
}

#[test]
fn monotone_in_rho_and_k_max() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..100 {
        let n = rng.random_range(1..60);
        let logits: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
        let (r1, r2): (f64, f64) = (rng.random_range(0.01..1.0), rng.random_range(0.01..1.0));
        let (lo, hi) = (r1.min(r2), r1.max(r2));
        assert!(select_anchors(&logits, lo, 2048).len() <= select_anchors(&logits, hi, 2048).len());
        let (k1, k2) = (rng.random_range(1..10), rng.random_range(1..10));
        let (klo, khi) = (k1.min(k2), k1.max(k2));
        assert!(select_anchors(&logits, hi, klo).len() <= select_anchors(&logits, hi, khi).len());
    }
}

#[test]
fn gradients_through_frozen_selection() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let b = batch_graphs(&[cloud(6, &mut rng), cloud(5, &mut rng)]).unwrap();
    let mut params = ParamSet::new();
    let gate = AnchorGate::init(&mut params, 4, 3, 6, 0.0, &mut rng);
    let cfg = PatchConfig {
        rho: 0.5,
        temperature: 0.5,
        ..PatchConfig::default()
    };
    let z = random(2, 3, &mut rng);
    let x = random(11, 4, &mut rng);
    let p = coords_of(&b);
    let target = random(11, 4, &mut rng);
    let report = check_params(&params, &[z, x, p], 1e-5, |tape, bound, v| {
        let patched = run_patching(bound, &gate, v[0], v[1], v[2], &b, &cfg, None)?;
        let mut loss = tape.scalar(0.0);
        for (g, t) in patched.tokens.iter().enumerate() {
            let rows = t.rows();
            let w = tape.constant(Tensor::from_fn(rows, 4, |r, c| target.get(g * 5 + r, c)));
            loss = loss.add(t.mul(w)?.sum())?.add(t.square().sum())?;
        }
        Ok(Probe {
            loss,
            selection: patched.selection(),
        })
    })
    .unwrap();
    assert!(report.passes(1e-5), "{:?}", report.worst().map(|w| (&w.label, w.max_rel_error)));
}

#[test]
fn non_anchor_logits_receive_no_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let b = batch_graphs(&[cloud(8, &mut rng)]).unwrap();
    let tape = Tape::new();
    let logits = tape.leaf(random(8, 1, &mut rng));
    let x = tape.constant(random(8, 3, &mut rng));
    let cfg = PatchConfig {
        rho: 0.6,
        ..PatchConfig::default()
    };
    let patched = patch_from_logits(logits, x, tape.constant(coords_of(&b)), &b, &cfg).unwrap();
    assert!(patched.anchors[0].len() >= 2);
    let loss = patched.tokens[0].square().sum();
    let grads = tape.backward(loss).unwrap();
    let g = grads.wrt(logits);
    let anchors = &patched.anchors[0];
    for i in 0..8 {
        if !anchors.contains(&i) {
            assert_eq!(g.get(i, 0), 0.0);
        }
    }
    assert!(anchors.iter().any(|&i| g.get(i, 0) != 0.0));
}
