//! End-to-end acceptance criteria. Prints one PASS/FAIL line per criterion
//! and exits nonzero if any fails.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod common;

use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use common::*;
use midl::baselines::{bow_max_baseline, bow_mean_baseline};
use midl::evaluation::{confusion, learning_curve, metrics, user_activity_breakdown, ConfusionCounts};
use midl::ingest::{ingest_dump, split, stats, Bag, DatasetSplit, Label, Tokenizer};
use midl::mil_ntn::{ntn_classic, predict, score_bag, ClassicNtnParams, NtnParams};
use midl::numerics::{matmul, maxpool_rows, meanpool_cols, Tensor};
use midl::synthdata::{generate, SynthConfig};
use midl::training::checkpoint::{load_checkpoint_file, save_checkpoint};
use midl::training::gradcheck::{model_gradcheck, GradCheckSetup};
use midl::training::{train, AdaGrad, Dims, ModelParams, TrainConfig};
use rand::seq::SliceRandom;
use rand::Rng;

type Outcome = Result<String, String>;

macro_rules! check {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let report = model_gradcheck(&GradCheckSetup::default()).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let required = [
        "embeddings.word",
        "users.table",
        "ntn.w",
        "ntn.mu",
        "question.forward.v_o",
        "question.backward.v_o",
        "answer.forward.v_o",
        "answer.backward.v_o",
    ];
    for required in required {
        check!(
            report.groups.iter().any(|g| g.name == required),
            "no gradient group named like {required}"
        );
    }
    for g in &report.groups {
        check!(g.max_rel_error < 1e-4, "{} rel err {:.3e}", g.name, g.max_rel_error);
    }
    check!(elapsed < Duration::from_secs(60), "took {elapsed:?}");
    Ok(format!(
        "{} groups, max rel err {:.2e}, {:.2?}",
        report.groups.len(),
        report.max_rel_error(),
        elapsed
    ))
}

fn synth_split() -> (DatasetSplit, usize) {
    let cfg = SynthConfig::default();
    let bags = generate(&cfg).unwrap();
    (split(&bags, 7).unwrap(), cfg.vocab_size)
}

fn criterion_2() -> (Outcome, Option<(DatasetSplit, ModelParams)>) {
    let (data, vocab) = synth_split();
    let config = TrainConfig::default();
    let start = Instant::now();
    let outcome = match train(&data, &config, vocab) {
        Ok(o) => o,
        Err(e) => return (Err(e.to_string()), None),
    };
    let elapsed = start.elapsed();
    let m = midl::evaluation::evaluate(&outcome.params, &data.test, config.threshold).unwrap();
    let mean = bow_mean_baseline(&data, &config, vocab).unwrap().metrics.accuracy;
    let max = bow_max_baseline(&data, &config, vocab).unwrap().metrics.accuracy;
    let result = (|| {
        check!(outcome.log.len() <= 30, "{} epochs", outcome.log.len());
        check!(m.accuracy >= 0.95, "accuracy {:.4}", m.accuracy);
        check!(m.precision >= 0.90, "precision {:.4}", m.precision);
        check!(m.recall >= 0.90, "recall {:.4}", m.recall);
        check!(elapsed < Duration::from_secs(300), "took {elapsed:?}");
        check!(max > mean, "bow_max {max:.4} vs bow_mean {mean:.4}");
        Ok(format!(
            "acc {:.4} P {:.4} R {:.4} in {} epochs, {:.1?}; bow_max {max:.4} > bow_mean {mean:.4}",
            m.accuracy,
            m.precision,
            m.recall,
            outcome.log.len(),
            elapsed
        ))
    })();
    (result, Some((data, outcome.params)))
}

fn random_inputs<R: Rng>(r: &mut R) -> (Tensor, Vec<Tensor>, NtnParams) {
    let (z, dq, da, n) = (r.gen_range(1..6), r.gen_range(1..8), r.gen_range(1..8), r.gen_range(1..8));
    let p = NtnParams::uniform(dq, da, z, 1.0, r);
    let qu = rand_tensor(&[dq], r);
    let answers = (0..n).map(|_| rand_tensor(&[da], r)).collect();
    (qu, answers, p)
}

fn bits(xs: &[f64]) -> Vec<u64> {
    xs.iter().map(|x| x.to_bits()).collect()
}

fn criterion_3() -> Outcome {
    let mut r = rng(103);
    let dims = Dims {
        word: 5,
        hidden: 4,
        user: 3,
        slices: 4,
    };
    for k in 0..100 {
        let (qu, mut answers, p) = random_inputs(&mut r);
        let base = score_bag(&qu, &answers, &p).unwrap();
        answers.shuffle(&mut r);
        let moved = score_bag(&qu, &answers, &p).unwrap();
        check!(bits(base.v()) == bits(moved.v()), "bag {k}: v changed");
        check!(base.logit.to_bits() == moved.logit.to_bits(), "bag {k}: logit changed");
        check!(base.prob.to_bits() == moved.prob.to_bits(), "bag {k}: probability changed");

        let model = random_model(dims, 12, 4, 0.5, &mut r);
        let mut bag = random_bag(k, 12, 4, &mut r);
        let a = model.score(&bag).unwrap().prob;
        bag.answers.shuffle(&mut r);
        let b = model.score(&bag).unwrap().prob;
        check!(a.to_bits() == b.to_bits(), "model bag {k}: {a} vs {b}");
    }
    Ok("100 bags, bitwise identical at the NTN and full-model level".into())
}

fn criterion_4() -> Outcome {
    let mut r = rng(104);
    for k in 0..100 {
        let (qu, mut answers, p) = random_inputs(&mut r);
        let before = score_bag(&qu, &answers, &p).unwrap().v().to_vec();
        answers.push(rand_tensor(&[p.answer_dim()], &mut r));
        let after = score_bag(&qu, &answers, &p).unwrap().v().to_vec();
        for (i, (b, a)) in before.iter().zip(&after).enumerate() {
            check!(a >= b, "bag {k} slice {i}: {b} -> {a}");
        }
    }
    Ok("100 bags, no component of v decreased".into())
}

fn criterion_5() -> Outcome {
    let mut r = rng(105);
    let mut worst: f64 = 0.0;
    for k in 0..100 {
        let (z, d1, d2) = (r.gen_range(1..5), r.gen_range(1..6), r.gen_range(1..6));
        let e1 = rand_tensor(&[d1], &mut r);
        let e2 = rand_tensor(&[d2], &mut r);
        let cp = ClassicNtnParams {
            w: rand_tensor(&[z, d1, d2], &mut r),
            v: rand_tensor(&[z, d1 + d2], &mut r),
            b: rand_tensor(&[z], &mut r),
            mu: rand_tensor(&[z], &mut r),
        };
        let err = (ntn_classic(&e1, &e2, &cp).unwrap() - common::ntn_classic(e1.data(), e2.data(), &cp)).abs();
        check!(err < 1e-12, "ntn_classic {k}: {err:e}");
        worst = worst.max(err);

        let (qu, answers, p) = random_inputs(&mut r);
        let got = score_bag(&qu, &answers, &p).unwrap();
        let raw: Vec<Vec<f64>> = answers.iter().map(|a| a.data().to_vec()).collect();
        let want = common::score_bag(qu.data(), &raw, &p);
        let err = (got.logit - want.logit).abs().max((got.prob - want.prob).abs());
        check!(err < 1e-12, "score_bag {k}: {err:e}");
        worst = worst.max(err);

        let (m, kk, n) = (r.gen_range(1..7), r.gen_range(1..7), r.gen_range(1..7));
        let a = rand_tensor(&[m, kk], &mut r);
        let b = rand_tensor(&[kk, n], &mut r);
        check!(matmul(&a, &b).unwrap().data() == common::matmul(&a, &b).as_slice(), "matmul {k}");
        let h = rand_tensor(&[m, n], &mut r);
        let pooled = maxpool_rows(&h).unwrap();
        for i in 0..m {
            let (v, j) = row_max(h.row(i));
            check!(pooled.values.data()[i] == v && pooled.argmax[i] == j, "maxpool {k} row {i}");
        }
        check!(meanpool_cols(&h).unwrap().data() == row_means(&h).as_slice(), "meanpool {k}");
    }

    let mut theta = Tensor::vector(vec![0.0]);
    let mut opt = AdaGrad::new(&theta, 1.0);
    opt.epsilon = 0.0;
    for _ in 0..3 {
        opt.update(&mut theta, &Tensor::vector(vec![1.0])).unwrap();
    }
    let exact = -(1.0 + 1.0 / 2f64.sqrt() + 1.0 / 3f64.sqrt());
    let err = (theta.data()[0] - exact).abs();
    check!(err < 1e-12, "AdaGrad trace off by {err:e}");
    Ok(format!("max loop deviation {worst:.1e}; AdaGrad trace off by {err:.1e}"))
}

fn criterion_6() -> Outcome {
    let mut r = rng(106);
    for k in 0..1000 {
        let n = r.gen_range(0..60);
        let preds = random_labels(n, &mut r);
        let truths = random_labels(n, &mut r);
        let c = confusion(&preds, &truths).map_err(|e| e.to_string())?;
        check!(c == common::confusion(&preds, &truths), "counts {k}");
        let m = metrics(c);
        let (p, rc, f1, acc) = metric_values(&c);
        check!(
            m.precision == p && m.recall == rc && m.f1 == f1 && m.accuracy == acc,
            "metrics {k}: {m:?}"
        );
    }
    let m = metrics(ConfusionCounts {
        tp: 3,
        tn: 5,
        fp: 1,
        fn_: 1,
    });
    check!(
        m.precision == 0.75 && m.recall == 0.75 && m.f1 == 0.75 && m.accuracy == 0.8,
        "worked example gave {m:?}"
    );
    Ok("1000 vectors exact; worked example 0.75/0.75/0.75/0.8".into())
}

fn criterion_7() -> Outcome {
    let xml = include_str!("fixtures/posts.xml");
    let out = ingest_dump(xml.as_bytes(), &Tokenizer::default(), 1).map_err(|e| e.to_string())?;
    let bags = &out.report.bags;
    check!(bags.len() == 2, "{} bags", bags.len());
    let labels: Vec<Label> = bags.iter().map(|b| b.label).collect();
    check!(labels == [Label::Satisfied, Label::Unsatisfied], "labels {labels:?}");
    check!(out.report.dropped_unanswered == 1, "dropped {}", out.report.dropped_unanswered);
    check!(out.tally.skipped == 1, "skipped {}", out.tally.skipped);
    let s = stats(bags);
    check!(
        (s.question_count, s.answer_count, s.user_count, s.satisfied_fraction) == (2, 5, 2, 0.5),
        "stats {s:?}"
    );
    Ok("2 bags (+1, -1), 1 dropped question, 1 skipped row, stats 2/5/2/50%".into())
}

fn midl(args: &[&str]) -> i32 {
    midl::cli::run(std::iter::once("midl").chain(args.iter().copied()))
}

fn pipeline(dir: &Path) -> Result<Vec<Vec<u8>>, String> {
    let path = |n: &str| dir.join(n).to_string_lossy().into_owned();
    let (bags, vocab, model, metrics, log) = (
        path("bags.jsonl"),
        path("vocab.tsv"),
        path("model.ckpt"),
        path("metrics.tsv"),
        path("log.tsv"),
    );
    let steps: [Vec<&str>; 3] = [
        vec!["synth", "--bags", "400", "--seed", "7", "--out", &bags, "--vocab", &vocab],
        vec!["train", &bags, "--vocab", &vocab, "--model", &model, "--log", &log, "--seed", "3", "--epochs", "5"],
        vec!["eval", &bags, "--model", &model, "--vocab", &vocab, "--out", &metrics],
    ];
    for step in &steps {
        check!(midl(step) == 0, "`{}` failed", step.join(" "));
    }
    [bags, vocab, model, log, metrics]
        .iter()
        .map(|p| fs::read(p).map_err(|e| e.to_string()))
        .collect()
}

fn criterion_8() -> Outcome {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let (fa, fb) = (pipeline(a.path())?, pipeline(b.path())?);
    let names = ["bags", "vocab", "checkpoint", "log", "metrics"];
    for (i, name) in names.iter().enumerate() {
        check!(fa[i] == fb[i], "{name} differs between runs");
    }
    let file = a.path().join("model.ckpt");
    let cp = load_checkpoint_file(&file).map_err(|e| e.to_string())?;
    let mut again = Vec::new();
    save_checkpoint(&cp, &mut again).map_err(|e| e.to_string())?;
    check!(again == fa[2], "checkpoint re-save differs");
    check!(
        load_checkpoint_file(&b.path().join("model.ckpt")).map_err(|e| e.to_string())? == cp,
        "loaded checkpoints differ"
    );
    Ok(format!("5 artifacts byte-identical; {}-byte checkpoint round-trips", again.len()))
}

fn criterion_9(trained: Option<(DatasetSplit, ModelParams)>) -> Outcome {
    let (data, vocab) = synth_split();
    let config = TrainConfig::default();
    let rows = learning_curve(&[0.1, 0.25, 0.5, 1.0], &data, &config, vocab).map_err(|e| e.to_string())?;
    let acc: Vec<f64> = rows.iter().map(|r| r.metrics.accuracy).collect();
    check!(acc[3] >= acc[0] - 0.02, "accuracy at 1.0 {:.4} vs at 0.1 {:.4}", acc[3], acc[0]);

    let (data, params) = trained.ok_or("no trained model from criterion 2")?;
    let preds: Vec<Label> = midl::evaluation::probabilities(&params, &data.test)
        .map_err(|e| e.to_string())?
        .into_iter()
        .map(|p| predict(p, config.threshold))
        .collect();
    let table = user_activity_breakdown(&data.train, &data.test, &preds).map_err(|e| e.to_string())?;
    check!(table.len() >= 2, "only {} populated buckets", table.len());
    let activity = |b: &Bag| data.train.iter().filter(|t| t.user_id == b.user_id).count();
    let mut covered = 0;
    for row in &table {
        let (p, t): (Vec<Label>, Vec<Label>) = data
            .test
            .iter()
            .zip(&preds)
            .filter(|(b, _)| midl::evaluation::ActivityBucket::from_count(activity(b)) == row.bucket)
            .map(|(b, p)| (*p, b.label))
            .unzip();
        check!(!p.is_empty() && row.bags == p.len(), "bucket {} size", row.bucket.label());
        check!(row.metrics == metrics(confusion(&p, &t).unwrap()), "bucket {} metrics", row.bucket.label());
        covered += p.len();
    }
    check!(covered == data.test.len(), "buckets cover {covered} of {} bags", data.test.len());
    let curve: Vec<String> = acc.iter().map(|a| format!("{a:.3}")).collect();
    Ok(format!(
        "curve accuracy [{}]; {} buckets match filtered metrics",
        curve.join(", "),
        table.len()
    ))
}

fn guarded<F: FnOnce() -> Outcome>(f: F) -> Outcome {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
        let msg = e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        Err(format!("panicked: {msg}"))
    })
}

fn main() {
    let results: Vec<(usize, Outcome)> = std::thread::scope(|s| {
        let heavy = s.spawn(|| {
            let (two, trained) = catch_unwind(criterion_2).unwrap_or_else(|_| (Err("panicked".into()), None));
            let nine = guarded(|| criterion_9(trained));
            (two, nine)
        });
        let one = s.spawn(|| guarded(criterion_1));
        let eight = s.spawn(|| guarded(criterion_8));
        let light: Vec<Outcome> = [criterion_3, criterion_4, criterion_5, criterion_6, criterion_7]
            .into_iter()
            .map(guarded)
            .collect();
        let (two, nine) = heavy.join().unwrap();
        let mut all = vec![(1, one.join().unwrap()), (2, two)];
        all.extend(light.into_iter().enumerate().map(|(i, o)| (i + 3, o)));
        all.push((8, eight.join().unwrap()));
        all.push((9, nine));
        all
    });
    let mut failed = 0;
    for (n, outcome) in &results {
        match outcome {
            Ok(detail) => println!("criterion {n}: PASS  {detail}"),
            Err(detail) => {
                failed += 1;
                println!("criterion {n}: FAIL  {detail}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
