mod common;

use common::*;
use midl::encoders::{lstm_step, BiLstmEncoder, LstmParams};
use midl::evaluation::{confusion, metrics};
use midl::mil_ntn::{ntn_classic, score_bag, ClassicNtnParams, NtnParams};
use midl::numerics::{bilinear_slice, matmul, maxpool_rows, meanpool_cols, Tensor};
use midl::embeddings::EmbeddingTable;
use rand::Rng;

#[test]
fn matmul_matches_loops_exactly() {
    let mut r = rng(11);
    for _ in 0..100 {
        let (m, k, n) = (r.gen_range(1..6), r.gen_range(1..6), r.gen_range(1..6));
        let a = rand_tensor(&[m, k], &mut r);
        let b = rand_tensor(&[k, n], &mut r);
        assert_eq!(matmul(&a, &b).unwrap().data(), common::matmul(&a, &b).as_slice());
    }
}

#[test]
fn pooling_matches_loops_exactly() {
    let mut r = rng(12);
    for _ in 0..100 {
        let (z, n) = (r.gen_range(1..6), r.gen_range(1..6));
        let mut h = rand_tensor(&[z, n], &mut r);
        if n > 1 && r.gen_bool(0.3) {
            // force a tie
            let v = h.get(0, 0);
            h.row_mut(0)[n - 1] = v;
        }
        let pooled = maxpool_rows(&h).unwrap();
        for i in 0..z {
            let (v, j) = row_max(h.row(i));
            assert_eq!(pooled.values.data()[i], v);
            assert_eq!(pooled.argmax[i], j);
        }
        assert_eq!(meanpool_cols(&h).unwrap().data(), row_means(&h).as_slice());
    }
}

#[test]
fn bilinear_and_classic_ntn_match_loops() {
    let mut r = rng(13);
    for _ in 0..100 {
        let (z, d1, d2) = (r.gen_range(1..4), r.gen_range(1..5), r.gen_range(1..5));
        let e1 = rand_tensor(&[d1], &mut r);
        let e2 = rand_tensor(&[d2], &mut r);
        let w = rand_tensor(&[d1, d2], &mut r);
        let b = bilinear_slice(&e1, &w, &e2).unwrap();
        assert!((b - bilinear(e1.data(), w.data(), e2.data())).abs() < 1e-12);
        let p = ClassicNtnParams {
            w: rand_tensor(&[z, d1, d2], &mut r),
            v: rand_tensor(&[z, d1 + d2], &mut r),
            b: rand_tensor(&[z], &mut r),
            mu: rand_tensor(&[z], &mut r),
        };
        let got = ntn_classic(&e1, &e2, &p).unwrap();
        assert!((got - common::ntn_classic(e1.data(), e2.data(), &p)).abs() < 1e-12);
    }
}

#[test]
fn bag_score_matches_loops() {
    let mut r = rng(14);
    for _ in 0..100 {
        let (z, dq, da, n) = (r.gen_range(1..4), r.gen_range(1..6), r.gen_range(1..6), r.gen_range(1..5));
        let p = NtnParams::uniform(dq, da, z, 1.0, &mut r);
        let qu = rand_tensor(&[dq], &mut r);
        let answers: Vec<Tensor> = (0..n).map(|_| rand_tensor(&[da], &mut r)).collect();
        let got = score_bag(&qu, &answers, &p).unwrap();
        let raw: Vec<Vec<f64>> = answers.iter().map(|a| a.data().to_vec()).collect();
        let want = common::score_bag(qu.data(), &raw, &p);
        for i in 0..z {
            for j in 0..n {
                assert!((got.activations.get(i, j) - want.h[i][j]).abs() < 1e-12);
            }
            assert!((got.v()[i] - want.v[i]).abs() < 1e-12);
        }
        assert!((got.logit - want.logit).abs() < 1e-12);
        assert!((got.prob - want.prob).abs() < 1e-12);
    }
}

#[test]
fn lstm_step_matches_scalar_recomputation() {
    let mut r = rng(15);
    for _ in 0..50 {
        let (d, h) = (r.gen_range(1..5), r.gen_range(1..5));
        let p = LstmParams::uniform(d, h, 0.7, &mut r);
        let x = rand_tensor(&[d], &mut r);
        let h0 = rand_tensor(&[h], &mut r);
        let c0 = rand_tensor(&[h], &mut r);
        let (h1, c1) = lstm_step(&p, &x, &h0, &c0).unwrap();
        let (wh, wc) = common::lstm_step(&p, x.data(), h0.data(), c0.data());
        for k in 0..h {
            assert!((h1.data()[k] - wh[k]).abs() < 1e-12);
            assert!((c1.data()[k] - wc[k]).abs() < 1e-12);
        }
    }
}

#[test]
fn encoders_match_unrolled_steps() {
    let mut r = rng(16);
    for _ in 0..30 {
        let (d, h, vocab) = (r.gen_range(1..5), r.gen_range(1..5), 9);
        let enc = BiLstmEncoder::uniform(d, h, 0.7, &mut r);
        let table = EmbeddingTable::new(rand_tensor(&[vocab, d], &mut r));
        let tokens = random_text(&mut r, vocab, 7);
        let q = enc.encode_question(&tokens, &table).unwrap();
        let a = enc.encode_answer(&tokens, &table).unwrap();
        let (wq, wa) = (encode_question(&enc, &tokens, &table), encode_answer(&enc, &tokens, &table));
        for k in 0..2 * h {
            assert!((q.data()[k] - wq[k]).abs() < 1e-12);
            assert!((a.data()[k] - wa[k]).abs() < 1e-12);
        }
    }
}

#[test]
fn metrics_match_brute_force() {
    let mut r = rng(17);
    for _ in 0..200 {
        let n = r.gen_range(0..40);
        let preds = random_labels(n, &mut r);
        let truths = random_labels(n, &mut r);
        let c = confusion(&preds, &truths).unwrap();
        assert_eq!(c, common::confusion(&preds, &truths));
        let m = metrics(c);
        let (p, rc, f1, acc) = metric_values(&c);
        assert!((m.precision - p).abs() < 1e-12);
        assert!((m.recall - rc).abs() < 1e-12);
        assert!((m.f1 - f1).abs() < 1e-12);
        assert!((m.accuracy - acc).abs() < 1e-12);
    }
}

#[test]
fn precision_and_recall_are_not_relabeling_invariant() {
    let mut r = rng(18);
    let mut moved = 0;
    for _ in 0..100 {
        let n = r.gen_range(5..30);
        let preds = random_labels(n, &mut r);
        let truths = random_labels(n, &mut r);
        let flip = |v: &[midl::ingest::Label]| v.iter().map(|l| l.flipped()).collect::<Vec<_>>();
        let a = metrics(confusion(&preds, &truths).unwrap());
        let b = metrics(confusion(&flip(&preds), &flip(&truths)).unwrap());
        assert_eq!(a.accuracy, b.accuracy);
        if a.precision != b.precision || a.recall != b.recall {
            moved += 1;
        }
    }
    assert!(moved > 50, "{moved}");
}
