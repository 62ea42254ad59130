//! Acceptance gate. Runs every criterion, prints one PASS/FAIL line each and
//! exits nonzero if any fails.

mod common;

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use common::*;
use layer_specialty::harness::{self, CollapseProfile, SweepConfig};
use layer_specialty::linalg::{self, default_rtol};
use layer_specialty::metrics::{
    cca_cv, cca_score, class_stats, effective_rank, smoothness_zeta, variability_ratio,
    variability_ratio_strict, CcaOptions, CurveOptions,
};
use layer_specialty::probe::{self, score, HeadKind, LogRegConfig, ScoreKind};
use layer_specialty::strategy::{cost_model, enumerate_strategies};
use layer_specialty::{metrics, LayerView, MetricCurve, MetricId, PoolingMode, StrategyKind, StrategyTriple};
use nalgebra::{DMatrix, DVector};
use rand::Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn nu(view: &LayerView) -> f64 {
    let part = view.group_by_label().unwrap();
    variability_ratio(&class_stats(view, &part).unwrap(), default_rtol(view.dim())).unwrap()
}

fn ac01_nu_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = rng(101);
    let mut worst = 0.0f64;
    let mut bad = 0;
    for _ in 0..200 {
        let v = small_instance(&mut rng);
        let (ours, oracle) = (nu(&v), naive_nu(&v, false));
        if !rel_close(ours, oracle, 1e-8) {
            bad += 1;
        }
        worst = worst.max((ours - oracle).abs() / oracle.abs().max(1e-300));
    }
    let elapsed = start.elapsed();
    outcome(
        bad == 0 && elapsed < Duration::from_secs(5),
        format!("{bad}/200 mismatches, worst rel err {worst:.2e}, {elapsed:.2?}"),
    )
}

fn ac02_fixtures() -> Outcome {
    let two = LayerView::from_rows(
        &[vec![-1.0, 0.0], vec![1.0, 0.0], vec![1.0, 2.0], vec![3.0, 2.0]],
        &[0, 0, 1, 1],
        2,
    )
    .unwrap();
    let ortho = LayerView::from_rows(
        &[vec![0.0, 0.0], vec![2.0, 0.0], vec![0.0, 2.0], vec![2.0, 2.0]],
        &[0, 0, 1, 1],
        2,
    )
    .unwrap();
    let (a, b) = (nu(&two), nu(&ortho));
    outcome(
        (a - 0.125).abs() <= 1e-12 && b.abs() <= 1e-12,
        format!("two-class nu = {a}, orthogonal-spread nu = {b:.2e}"),
    )
}

fn ac03_invariance() -> Outcome {
    let mut rng = rng(103);
    let (mut scale_bad, mut rot_bad) = (0, 0);
    for _ in 0..50 {
        let v = small_instance(&mut rng);
        let base = nu(&v);
        let c: f64 = rng.random_range(0.01..100.0);
        let scaled = LayerView::new(1, &v.vectors * c, v.labels.clone(), v.n_classes).unwrap();
        if !rel_close(nu(&scaled), base, 1e-8) {
            scale_bad += 1;
        }
        let q = random_orthogonal(&mut rng, v.dim());
        let rotated = LayerView::new(1, &v.vectors * q, v.labels.clone(), v.n_classes).unwrap();
        if !rel_close(nu(&rotated), base, 1e-8) {
            rot_bad += 1;
        }
    }
    outcome(
        scale_bad == 0 && rot_bad == 0,
        format!("scaling failures {scale_bad}/50, rotation failures {rot_bad}/50"),
    )
}

fn ac04_balanced_equivalence() -> Outcome {
    let mut rng = rng(104);
    let mut balanced_bad = 0;
    let mut differ = 0;
    for _ in 0..50 {
        let k = rng.random_range(2..=3);
        let d = rng.random_range(2..=5);
        let n = rng.random_range(3..=15);
        let v = random_view(&mut rng, &vec![n; k], d);
        let part = v.group_by_label().unwrap();
        let rtol = default_rtol(d);
        let (a, b) = (nu(&v), variability_ratio_strict(&v, &part, rtol).unwrap());
        if !rel_close(a, b, 1e-10) {
            balanced_bad += 1;
        }
        let v = random_view(&mut rng, &[9 * n, n], d);
        let part = v.group_by_label().unwrap();
        let (a, b) = (nu(&v), variability_ratio_strict(&v, &part, rtol).unwrap());
        if !rel_close(a, b, 1e-10) {
            differ += 1;
        }
    }
    outcome(
        balanced_bad == 0 && differ >= 45,
        format!("balanced disagreements {balanced_bad}/50, 9:1 instances that differ {differ}/50"),
    )
}

fn ac05_correlation() -> Outcome {
    let start = Instant::now();
    let mut hits = 0;
    let mut rhos = Vec::new();
    for seed in 0..20u64 {
        let ds = harness::synth_generate(&CollapseProfile::standard(2, seed), &[500, 500]).unwrap();
        let opts = CurveOptions { seed, ..Default::default() };
        let nu = metrics::curve(&ds, MetricId::Nu, PoolingMode::Mean, &opts).unwrap();
        let acc = probe::probe_curve(&ds, HeadKind::Lda, ScoreKind::Acc, PoolingMode::Mean, seed, &LogRegConfig::default())
            .unwrap();
        let rho = linalg::pearson(nu.values(), acc.values()).unwrap();
        if rho <= -0.85 {
            hits += 1;
        }
        rhos.push(rho);
    }
    let elapsed = start.elapsed();
    let worst = rhos.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    outcome(
        hits >= 18 && elapsed < Duration::from_secs(60),
        format!("rho <= -0.85 in {hits}/20 seeds (weakest {worst:.3}), {elapsed:.2?}"),
    )
}

fn ac06_zeta() -> Outcome {
    let linear = smoothness_zeta(&MetricCurve::new(vec![1.0, 3.0, 5.0, 7.0, 9.0]), false).unwrap();
    let zigzag = smoothness_zeta(&MetricCurve::new(vec![0.0, 1.0, 0.0, 1.0]), true).unwrap();
    let mut rng = rng(106);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let v: Vec<f64> = (0..12).map(|_| gaussian(&mut rng)).collect();
        let (a, b) = (rng.random_range(0.1..10.0), gaussian(&mut rng) * 5.0);
        let w: Vec<f64> = v.iter().map(|x| a * x + b).collect();
        let z0 = smoothness_zeta(&MetricCurve::new(v), true).unwrap();
        let z1 = smoothness_zeta(&MetricCurve::new(w), true).unwrap();
        worst = worst.max((z0 - z1).abs() / z0);
    }
    outcome(
        linear == 0.0 && (zigzag - 32.0).abs() <= 1e-9 && worst <= 1e-10,
        format!("linear {linear}, zigzag {zigzag}, affine worst rel {worst:.1e}"),
    )
}

fn ac07_rank() -> Outcome {
    let mut rng = rng(107);
    let u = gaussian_matrix(&mut rng, 6, 1);
    let w = gaussian_matrix(&mut rng, 1, 4);
    let r1 = effective_rank(&(u * w));
    let orth = effective_rank(&random_orthogonal(&mut rng, 5));
    let diag = effective_rank(&DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0])));
    let mut out_of_bounds = 0;
    for _ in 0..100 {
        let n = rng.random_range(1..=20);
        let d = rng.random_range(1..=8);
        let r = effective_rank(&gaussian_matrix(&mut rng, n, d));
        if !(r >= 1.0 - 1e-12 && r <= n.min(d) as f64 + 1e-12) {
            out_of_bounds += 1;
        }
    }
    let pass = (r1 - 1.0).abs() <= 1e-10
        && (orth - 5.0).abs() <= 1e-10
        && (diag - 1.8).abs() <= 1e-10
        && out_of_bounds == 0;
    outcome(
        pass,
        format!("rank-1 {r1}, orthogonal(5) {orth}, diag(1,2) {diag}, out of bounds {out_of_bounds}/100"),
    )
}

fn ac08_cca() -> Outcome {
    let opts = CcaOptions::default();
    let mut rng = rng(108);
    let labels = labels_for(&[1000, 1000]);

    let onehot = DMatrix::from_fn(2000, 3, |i, j| match j {
        0 => (labels[i] == 0) as u8 as f64,
        1 => (labels[i] == 1) as u8 as f64,
        _ => gaussian(&mut rng),
    });
    let v = LayerView::new(1, onehot, labels.clone(), 2).unwrap();
    let perfect = cca_cv(&v, &v.group_by_label().unwrap(), &opts, 1).unwrap();

    let h = gaussian_matrix(&mut rng, 2000, 8);
    let v = LayerView::new(1, h.clone(), labels.clone(), 2).unwrap();
    let independent = cca_cv(&v, &v.group_by_label().unwrap(), &opts, 1).unwrap();
    // null distribution: the same features against shuffled labels
    let mut null = Vec::new();
    for s in 0..20 {
        let mut perm = labels.clone();
        rand::seq::SliceRandom::shuffle(perm.as_mut_slice(), &mut common::rng(1000 + s));
        let pv = LayerView::new(1, h.clone(), perm, 2).unwrap();
        null.push(cca_cv(&pv, &pv.group_by_label().unwrap(), &opts, 1).unwrap());
    }
    let null_max = null.iter().cloned().fold(0.0, f64::max);

    let small = random_view(&mut rng, &[30, 30, 30], 4);
    let dup_rows: Vec<usize> = (0..small.n_rows()).chain(0..small.n_rows()).collect();
    let dup = small.select_rows(&dup_rows);
    let a = cca_score(&small, &small.group_by_label().unwrap(), 1e-4, 1e-4).unwrap();
    let b = cca_score(&dup, &dup.group_by_label().unwrap(), 1e-4, 1e-4).unwrap();

    let pass = perfect >= 0.999 && independent < 0.1 && null_max < 0.1 && (a - b).abs() <= 1e-8;
    outcome(
        pass,
        format!(
            "one-hot {perfect:.6}, independent {independent:.4} (permutation max {null_max:.4}), duplication diff {:.1e}",
            (a - b).abs()
        ),
    )
}

fn ac09_strategy() -> Outcome {
    let t = |b, top, h| StrategyTriple { bottom: b, top, head: h };
    let mut down = vec![
        t(1, 14, 14),
        t(12, 14, 14),
        t(13, 14, 14),
        t(14, 14, 14),
        t(1, 14, 24),
        t(12, 14, 24),
        t(13, 14, 24),
        t(14, 14, 24),
    ];
    let mut got_down = enumerate_strategies(14, 24, StrategyKind::Down).unwrap();
    down.sort_by_key(|s| (s.bottom, s.head));
    got_down.sort_by_key(|s| (s.bottom, s.head));
    let up = enumerate_strategies(14, 24, StrategyKind::Up).unwrap();
    let mut base = enumerate_strategies(14, 24, StrategyKind::Baseline).unwrap();
    base.sort_by_key(|s| s.bottom);
    let want_base = vec![t(1, 24, 24), t(22, 24, 24), t(23, 24, 24), t(24, 24, 24)];

    let drop = cost_model(&t(1, 14, 14), 24).unwrap();
    let tune = cost_model(&t(12, 14, 24), 24).unwrap();
    let pass = got_down == down
        && up == vec![t(15, 24, 24)]
        && base == want_base
        && (drop.dropped_fraction - 10.0 / 24.0).abs() < 1e-15
        && drop.large_saving()
        && (tune.tuned_fraction - 0.125).abs() < 1e-15;
    outcome(
        pass,
        format!(
            "down {} triples, up {:?}, baseline {} triples, dropped {:.4}, tuned {:.4}",
            got_down.len(),
            up.iter().map(|s| s.to_string()).collect::<Vec<_>>(),
            base.len(),
            drop.dropped_fraction,
            tune.tuned_fraction
        ),
    )
}

fn ac10_gradient() -> Outcome {
    let mut rng = rng(110);
    let x = gaussian_matrix(&mut rng, 5, 3);
    let labels = [0u32, 1, 2, 1, 0];
    let w = gaussian_matrix(&mut rng, 3, 3) * 0.5;
    let b = DVector::from_fn(3, |_, _| gaussian(&mut rng) * 0.5);
    let l2 = 0.1;
    let (_, gw, gb) = probe::softmax_loss_and_grad(&w, &b, &x, &labels, l2);
    let h = 1e-6;
    let mut worst = 0.0f64;
    for i in 0..3 {
        for j in 0..3 {
            let (mut wp, mut wm) = (w.clone(), w.clone());
            wp[(i, j)] += h;
            wm[(i, j)] -= h;
            let fd = (probe::softmax_loss_and_grad(&wp, &b, &x, &labels, l2).0
                - probe::softmax_loss_and_grad(&wm, &b, &x, &labels, l2).0)
                / (2.0 * h);
            worst = worst.max((fd - gw[(i, j)]).abs());
        }
        let (mut bp, mut bm) = (b.clone(), b.clone());
        bp[i] += h;
        bm[i] -= h;
        let fd = (probe::softmax_loss_and_grad(&w, &bp, &x, &labels, l2).0
            - probe::softmax_loss_and_grad(&w, &bm, &x, &labels, l2).0)
            / (2.0 * h);
        worst = worst.max((fd - gb[i]).abs());
    }
    outcome(worst <= 1e-5, format!("max abs gradient error {worst:.2e}"))
}

fn ac11_scores() -> Outcome {
    let mcc = score(&[0, 1, 0, 1], &[0, 0, 1, 1], ScoreKind::Mcc).unwrap();
    // TP = 1, FP = 1, FN = 1, TN = 0
    let f1 = score(&[1, 1, 0], &[1, 0, 1], ScoreKind::F1).unwrap();
    let y = [0u32, 1, 1, 0, 1];
    let perfect: Vec<f64> = [ScoreKind::Acc, ScoreKind::F1, ScoreKind::Mcc]
        .into_iter()
        .map(|k| score(&y, &y, k).unwrap())
        .collect();
    let y3 = [0u32, 1, 2, 2, 1];
    let perfect3 = [ScoreKind::Acc, ScoreKind::Mcc].map(|k| score(&y3, &y3, k).unwrap());
    let pass = mcc == 0.0
        && (f1 - 0.5).abs() < 1e-15
        && perfect.iter().chain(&perfect3).all(|&s| s == 1.0);
    outcome(pass, format!("symmetric mcc {mcc}, f1 {f1}, perfect {perfect:?} {perfect3:?}"))
}

fn ac12_sweeps() -> Outcome {
    let cfg = SweepConfig::default();
    let ps = [0.5, 0.25, 0.1];
    // a larger pool than the standard suite so that p = 0.1 still leaves a
    // usable minority class in the held-out split
    let mut per_p = [0usize; 3];
    let mut weakest = 1.0f64;
    for seed in 0..20u64 {
        let ds = harness::synth_generate(&CollapseProfile::standard(2, seed), &[2000, 2000]).unwrap();
        let rows = harness::sweep_imbalance(&ds, &ps, 2000, seed, &cfg).unwrap();
        for (i, r) in rows.iter().enumerate() {
            let rho = r.abs_rho.unwrap_or(0.0);
            weakest = weakest.min(rho);
            if rho >= 0.85 {
                per_p[i] += 1;
            }
        }
    }
    let mut scarcity_ok = 0;
    let mut small_ok = 0;
    for seed in 0..20u64 {
        let ds = harness::synth_generate(&CollapseProfile::standard(2, 100 + seed), &[4000, 4000]).unwrap();
        let rows = harness::sweep_scarcity(&ds, &[8000, 4000, 400], seed, &cfg).unwrap();
        let arg: Vec<usize> = rows.iter().map(|r| argmin(r.nu.values())).collect();
        if arg[0] == arg[1] {
            scarcity_ok += 1;
        }
        if arg[2] == arg[0] {
            small_ok += 1;
        }
    }
    outcome(
        per_p.iter().all(|&c| c >= 18) && scarcity_ok >= 18,
        format!(
            "imbalance |rho| >= 0.85 in {per_p:?}/20 seeds for p = {ps:?} (weakest {weakest:.3}); \
             argmin agreement N=4000 vs 8000 in {scarcity_ok}/20 (N=400: {small_ok}/20)"
        ),
    )
}

fn cli(args: &[&str]) -> bool {
    Command::new(env!("CARGO_BIN_EXE_layerspec"))
        .args(args)
        .status()
        .map(|s| s.success())
        .unwrap_or(false)
}

fn ac13_determinism(dir: &Path) -> Outcome {
    let p = |name: &str| dir.join(name).to_string_lossy().into_owned();
    let data = p("det.hsd");
    if !cli(&["synth", "--out", &data, "--classes", "3", "--per-class", "120", "--seed", "7"]) {
        return outcome(false, "synth failed");
    }
    let mut mismatched = Vec::new();
    let jobs: Vec<(&str, Vec<String>)> = vec![
        ("nu", vec!["analyze".into(), "--input".into(), data.clone(), "--metric".into(), "nu".into()]),
        ("cca", vec!["analyze".into(), "--input".into(), data.clone(), "--metric".into(), "cca".into(), "--seed".into(), "3".into()]),
        ("mi", vec!["analyze".into(), "--input".into(), data.clone(), "--metric".into(), "mi".into(), "--seed".into(), "3".into()]),
        ("probe", vec!["probe".into(), "--input".into(), data.clone(), "--head".into(), "logreg".into(), "--score".into(), "mcc".into(), "--seed".into(), "3".into()]),
        ("sweep", vec!["sweep".into(), "--input".into(), data.clone(), "--kind".into(), "scarcity".into(), "--n".into(), "360,120".into(), "--seed".into(), "3".into()]),
    ];
    for (name, args) in &jobs {
        let mut outputs = Vec::new();
        for (run, threads) in ["1", "4", "4"].iter().enumerate() {
            let out = p(&format!("{name}-{run}.csv"));
            let mut full: Vec<&str> = args.iter().map(String::as_str).collect();
            full.extend(["--out", &out, "--threads", threads]);
            if !cli(&full) {
                return outcome(false, format!("{name} run failed"));
            }
            outputs.push(std::fs::read(&out).unwrap());
        }
        if outputs.windows(2).any(|w| w[0] != w[1]) {
            mismatched.push(*name);
        }
    }
    outcome(
        mismatched.is_empty(),
        format!("{} report kinds x 3 runs (threads 1/4/4), mismatched: {mismatched:?}", jobs.len()),
    )
}

fn ac14_performance(dir: &Path) -> Outcome {
    let data = dir.join("big.hsd").to_string_lossy().into_owned();
    let out = dir.join("big.csv").to_string_lossy().into_owned();
    if !cli(&["synth", "--out", &data, "--dim", "64", "--layers", "12", "--per-class", "5000", "--seed", "1"]) {
        return outcome(false, "synth failed");
    }
    let start = Instant::now();
    let ok = cli(&["analyze", "--input", &data, "--metric", "nu", "--out", &out]);
    let elapsed = start.elapsed();
    outcome(
        ok && elapsed < Duration::from_secs(10),
        format!("N=10000 L=12 D=64 analyze in {elapsed:.2?}"),
    )
}

type Criterion<'a> = (&'a str, Box<dyn Fn() -> Outcome + 'a>);

fn main() {
    let dir = tempfile::tempdir().unwrap();
    let criteria: Vec<Criterion> = vec![
        ("nu matches naive oracle", Box::new(ac01_nu_oracle)),
        ("hand-computed fixtures", Box::new(ac02_fixtures)),
        ("scale and rotation invariance", Box::new(ac03_invariance)),
        ("balanced strict equivalence", Box::new(ac04_balanced_equivalence)),
        ("nu vs probe correlation", Box::new(ac05_correlation)),
        ("smoothness fixtures", Box::new(ac06_zeta)),
        ("rank metric", Box::new(ac07_rank)),
        ("cca score", Box::new(ac08_cca)),
        ("strategy planner", Box::new(ac09_strategy)),
        ("probe gradient check", Box::new(ac10_gradient)),
        ("scoring fixtures", Box::new(ac11_scores)),
        ("robustness sweeps", Box::new(ac12_sweeps)),
        ("cli determinism", Box::new(|| ac13_determinism(dir.path()))),
        ("end-to-end performance", Box::new(|| ac14_performance(dir.path()))),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let o = run();
        if !o.pass {
            failed += 1;
        }
        println!("{:>2} {} {:<32} {}", i + 1, if o.pass { "PASS" } else { "FAIL" }, name, o.detail);
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
