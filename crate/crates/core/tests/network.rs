mod common;

use common::*;
use lsta_core::cells::{CellKind, CellParams, LstaParams};
use lsta_core::linalg::{Matrix, ParamBlocks, Rng, Vector};
use lsta_core::network::*;
use proptest::prelude::*;

fn rand_model(kind: CellKind, dir: Direction, h: usize, d: usize, k: usize, seed: u64) -> SequenceModel {
    let mut rng = Rng::new(seed);
    let mut m = SequenceModel::init(kind, dir, h, d, k, &mut rng, false).unwrap();
    // nonzero biases everywhere so every block sees a generic gradient
    for cell in &mut m.cells {
        let mut blocks = cell.blocks_mut();
        for b in blocks.iter_mut().filter(|b| b.len() == h) {
            for v in b.iter_mut() {
                *v += rng.uniform(-0.5, 0.5);
            }
        }
    }
    m.head_b = rand_vec(&mut rng, k, 0.5);
    m
}

fn rand_seq(rng: &mut Rng, t: usize, d: usize) -> Matrix {
    rand_mat(rng, t, d, 1.0)
}

#[test]
fn zero_model_gives_uniform_probabilities() {
    for kind in CellKind::ALL {
        let m = SequenceModel::zeros(kind, Direction::Forward, 3, 2, 4).unwrap();
        let trace = unroll_forward(&m, &Matrix::from_rows(&[&[0.3, -0.7]]).unwrap()).unwrap();
        for p in trace.probs.iter() {
            assert!((p - 0.25).abs() < 1e-15);
        }
        assert_eq!(predict(&m, &Matrix::from_rows(&[&[1.0, 1.0]]).unwrap()).unwrap(), 0);
    }
}

#[test]
fn unroll_rejects_empty_and_misshapen_sequences() {
    let m = SequenceModel::zeros(CellKind::Lstm, Direction::Forward, 3, 2, 2).unwrap();
    assert!(matches!(
        unroll_forward(&m, &Matrix::zeros(0, 2)),
        Err(lsta_core::Error::EmptySequence)
    ));
    assert!(unroll_forward(&m, &Matrix::zeros(4, 3)).is_err());
}

#[test]
fn bidirectional_palindrome_with_shared_params_is_symmetric() {
    for kind in CellKind::ALL {
        let mut m = rand_model(kind, Direction::Bidirectional, 3, 2, 2, 5);
        m.cells[1] = m.cells[0].clone();
        let rows: [&[f64]; 5] = [&[0.1, 0.9], &[-0.4, 0.2], &[0.7, -0.3], &[-0.4, 0.2], &[0.1, 0.9]];
        let seq = Matrix::from_rows(&rows).unwrap();
        let trace = unroll_forward(&m, &seq).unwrap();
        for k in 0..3 {
            assert!((trace.feature[k] - trace.feature[3 + k]).abs() <= 1e-12);
        }
    }
}

#[test]
fn unroll_matches_manual_composition() {
    let (t, h, d, k) = (4, 3, 2, 2);
    let mut rng = Rng::new(77);
    let seq = rand_seq(&mut rng, t, d);
    for dir in [Direction::Forward, Direction::Bidirectional] {
        for kind in CellKind::ALL {
            let m = rand_model(kind, dir, h, d, k, 40);
            let trace = unroll_forward(&m, &seq).unwrap();

            let mut feature = Vec::new();
            for (pass, cell) in m.cells.iter().enumerate() {
                let order: Vec<usize> = if pass == 0 { (0..t).collect() } else { (0..t).rev().collect() };
                let (mut hs, mut cs) = (vec![0.0; h], vec![0.0; h]);
                for r in order {
                    let x = seq.row(r);
                    match cell {
                        CellParams::Lstm(p) => {
                            let o = ref_lstm(p, x, &hs, &cs);
                            hs = o.h;
                            cs = o.c;
                        }
                        CellParams::Lsta(p) => {
                            let o = ref_lsta(p, x, &hs, &cs);
                            hs = o.h;
                            cs = o.chat;
                        }
                        CellParams::Gru(p) => hs = ref_gru(p, x, &hs),
                    }
                }
                feature.extend(hs);
            }
            let logits: Vec<f64> = (0..k)
                .map(|c| m.head_b[c] + dot(m.head_w.row(c), &feature))
                .collect();
            let z: f64 = logits.iter().map(|l| l.exp()).sum();
            for (c, l) in logits.iter().enumerate() {
                assert!((trace.logits[c] - l).abs() < 1e-12, "{kind} {dir}");
                assert!((trace.probs[c] - l.exp() / z).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn cross_entropy_gradient_matches_finite_differences() {
    let mut rng = Rng::new(8);
    for _ in 0..5 {
        let logits = rand_vec(&mut rng, 5, 3.0);
        let target = (rng.next_f64() * 5.0) as usize;
        let (_, d) = softmax_cross_entropy(&logits, target).unwrap();
        let fd = fd_vec_grad(&logits, |z| softmax_cross_entropy(z, target).unwrap().0);
        for (a, n) in d.iter().zip(&fd) {
            assert!((a - n).abs() < 1e-6);
        }
    }
}

#[test]
fn zero_model_head_bias_gradient() {
    let m = SequenceModel::zeros(CellKind::Lsta, Direction::Forward, 3, 2, 3).unwrap();
    let trace = unroll_forward(&m, &Matrix::zeros(6, 2)).unwrap();
    let g = bptt_backward(&m, &trace, 2).unwrap();
    let expect = [1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0 - 1.0];
    for (got, want) in g.head_b.iter().zip(expect) {
        assert!((got - want).abs() < 1e-15);
    }
    for cell in &g.cells {
        assert_eq!(cell.global_norm(), 0.0);
    }
    assert_eq!(g.head_w.as_slice().iter().map(|v| v.abs()).sum::<f64>(), 0.0);
}

#[test]
fn single_step_bptt_is_step_backward_composed_with_head() {
    let m = rand_model(CellKind::Lsta, Direction::Forward, 3, 2, 3, 9);
    let seq = rand_seq(&mut Rng::new(10), 1, 2);
    let trace = unroll_forward(&m, &seq).unwrap();
    let g = bptt_backward(&m, &trace, 1).unwrap();

    let (_, d_logits) = softmax_cross_entropy(&trace.logits, 1).unwrap();
    let d_h = m.head_w.tr_matvec(&d_logits).unwrap();
    let CellParams::Lsta(p) = &m.cells[0] else { unreachable!() };
    let lsta_core::cells::StepCache::Lstm(cache) = &trace.caches[0][0] else { unreachable!() };
    let (cell_g, _) = lsta_core::cells::lsta_step_backward(p, cache, &d_h, &Vector::zeros(3)).unwrap();
    assert_eq!(g.cells[0], CellParams::Lsta(cell_g));
    assert_eq!(g.head_b, d_logits);
}

#[test]
fn bptt_matches_finite_differences_for_every_cell_and_direction() {
    let (t, h, d, k) = (5, 4, 3, 3);
    for dir in [Direction::Forward, Direction::Bidirectional] {
        for kind in CellKind::ALL {
            let m = rand_model(kind, dir, h, d, k, 1000);
            let seq = rand_seq(&mut Rng::new(1001), t, d);
            let target = 2;
            let (_, g) = loss_and_grads(&m, &seq, target).unwrap();
            let numeric = fd_param_grads(&m, |p| loss(p, &seq, target).unwrap());
            for ((name, a), n) in g.blocks().iter().zip(&numeric) {
                let e = max_rel(a, n);
                assert!(e < REL_TOL, "{kind} {dir} {name}: {e}");
            }
        }
    }
}

#[test]
fn grad_check_passes_on_small_models() {
    let seq = rand_seq(&mut Rng::new(3), 4, 3);
    for kind in [CellKind::Lstm, CellKind::Lsta] {
        let m = rand_model(kind, Direction::Forward, 4, 3, 2, 2);
        let report = grad_check(&m, &seq, 1, 1e-6, 1e-4).unwrap();
        assert!(report.passed, "{kind}: {report:?}");
        assert_eq!(report.blocks.len(), m.blocks().len());
    }
}

#[test]
fn grad_check_flags_corrupted_gradient() {
    let seq = rand_seq(&mut Rng::new(3), 4, 3);
    let m = rand_model(CellKind::Lsta, Direction::Forward, 4, 3, 2, 2);
    let report = grad_check_with(&m, &seq, 1, 1e-6, 1e-4, |g| {
        let CellParams::Lsta(p) = &mut g.cells[0] else { unreachable!() };
        p.w_ahat.as_mut_slice()[5] *= 2.0;
    })
    .unwrap();
    assert!(!report.passed);
    assert_eq!(report.worst_block().unwrap().name, "fwd.w_ahat");
    let bad: Vec<&str> = report
        .blocks
        .iter()
        .filter(|b| b.max_rel_err >= 1e-4)
        .map(|b| b.name.as_str())
        .collect();
    assert_eq!(bad, ["fwd.w_ahat"]);
}

#[test]
fn grad_check_rejects_nonpositive_step() {
    let m = SequenceModel::zeros(CellKind::Gru, Direction::Forward, 2, 2, 2).unwrap();
    assert!(grad_check(&m, &Matrix::zeros(2, 2), 0, 0.0, 1e-4).is_err());
}

#[test]
fn bptt_rejects_foreign_trace() {
    let a = rand_model(CellKind::Lstm, Direction::Forward, 3, 2, 2, 1);
    let b = rand_model(CellKind::Lstm, Direction::Bidirectional, 3, 2, 2, 1);
    let trace = unroll_forward(&a, &Matrix::zeros(3, 2)).unwrap();
    assert!(bptt_backward(&b, &trace, 0).is_err());
    let c = rand_model(CellKind::Gru, Direction::Forward, 3, 2, 2, 1);
    assert!(bptt_backward(&c, &trace, 0).is_err());
}

#[test]
fn predict_agrees_with_independent_argmax() {
    let mut rng = Rng::new(12);
    let m = rand_model(CellKind::Gru, Direction::Bidirectional, 4, 3, 5, 13);
    for _ in 0..20 {
        let seq = rand_seq(&mut rng, 6, 3);
        let trace = unroll_forward(&m, &seq).unwrap();
        let p = trace.probs.as_slice();
        let mut best = 0;
        for c in 1..p.len() {
            if p[c] > p[best] {
                best = c;
            }
        }
        assert_eq!(predict(&m, &seq).unwrap(), best);
    }
}

#[test]
fn batch_reduction_is_schedule_independent() {
    let mut rng = Rng::new(14);
    let m = rand_model(CellKind::Lsta, Direction::Forward, 5, 3, 3, 15);
    let seqs: Vec<Matrix> = (0..9).map(|_| rand_seq(&mut rng, 4, 3)).collect();
    let batch: Vec<(&Matrix, usize)> = seqs.iter().enumerate().map(|(i, s)| (s, i % 3)).collect();
    let a = batch_gradients(&m, &batch, false).unwrap();
    let b = batch_gradients(&m, &batch, true).unwrap();
    assert_eq!(a.grads, b.grads);
    assert_eq!(a.loss.to_bits(), b.loss.to_bits());
    assert_eq!(a.correct, b.correct);

    let mut mean = m.zeros_like();
    let mut loss_sum = 0.0;
    for &(s, t) in &batch {
        let (l, g) = loss_and_grads(&m, s, t).unwrap();
        loss_sum += l;
        lsta_core::linalg::add_blocks(&mut mean, &g).unwrap();
    }
    mean.scale_all(1.0 / 9.0);
    assert_eq!(mean, a.grads);
    assert!((loss_sum / 9.0 - a.loss).abs() < 1e-15);
}

#[test]
fn evaluate_rejects_empty_dataset() {
    let m = SequenceModel::zeros(CellKind::Lstm, Direction::Forward, 2, 2, 2).unwrap();
    assert!(evaluate(&m, &[], false).is_err());
}

fn lsta_twin(lstm: &SequenceModel, rng: &mut Rng) -> SequenceModel {
    let h = lstm.hidden();
    let cells = lstm
        .cells
        .iter()
        .map(|c| {
            let CellParams::Lstm(p) = c else { unreachable!() };
            CellParams::Lsta(LstaParams::from_lstm(p.clone(), rand_mat(rng, h, 2 * h, 1.0), rand_vec(rng, h, 1.0)))
        })
        .collect();
    SequenceModel {
        direction: lstm.direction,
        cells,
        head_w: lstm.head_w.clone(),
        head_b: lstm.head_b.clone(),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn probabilities_normalize_and_loss_is_nonnegative(seed in any::<u64>(), t in 1usize..6) {
        let mut rng = Rng::new(seed);
        let kind = CellKind::ALL[(seed % 3) as usize];
        let m = rand_model(kind, Direction::Forward, 3, 2, 4, seed);
        let seq = rand_seq(&mut rng, t, 2);
        let trace = unroll_forward(&m, &seq).unwrap();
        prop_assert!((trace.probs.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        for target in 0..4 {
            prop_assert!(softmax_cross_entropy(&trace.logits, target).unwrap().0 >= 0.0);
        }
        prop_assert_eq!(trace.caches[0].len(), t);
    }

    #[test]
    fn whole_model_lsta_reduces_to_lstm(seed in any::<u64>(), bidi in any::<bool>()) {
        let dir = if bidi { Direction::Bidirectional } else { Direction::Forward };
        let mut rng = Rng::new(seed);
        let lstm = rand_model(CellKind::Lstm, dir, 4, 3, 3, seed);
        let lsta = lsta_twin(&lstm, &mut rng);
        let seq = rand_seq(&mut rng, 5, 3);
        let a = unroll_forward(&lstm, &seq).unwrap();
        let b = unroll_forward(&lsta, &seq).unwrap();
        for c in 0..3 {
            prop_assert!((a.logits[c] - b.logits[c]).abs() <= 1e-12);
            prop_assert!((a.probs[c] - b.probs[c]).abs() <= 1e-12);
        }
        let target = (seed % 3) as usize;
        prop_assert!((loss(&lstm, &seq, target).unwrap() - loss(&lsta, &seq, target).unwrap()).abs() <= 1e-12);
        prop_assert_eq!(predict(&lstm, &seq).unwrap(), predict(&lsta, &seq).unwrap());
    }

    #[test]
    fn prediction_ignores_constant_logit_shift(seed in any::<u64>(), shift in -50.0f64..50.0) {
        let mut rng = Rng::new(seed);
        let m = rand_model(CellKind::Lstm, Direction::Forward, 3, 2, 4, seed);
        let seq = rand_seq(&mut rng, 3, 2);
        let mut shifted = m.clone();
        shifted.head_b = shifted.head_b.map(|b| b + shift);
        prop_assert_eq!(predict(&m, &seq).unwrap(), predict(&shifted, &seq).unwrap());
    }
}
