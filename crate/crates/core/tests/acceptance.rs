//! Acceptance criteria, one line per criterion. Each check also returns a
//! textual record of what it measured; the last criterion re-runs the
//! others and compares those records byte for byte.

mod common;

use std::fmt::Write;
use std::time::{Duration, Instant};

use common::*;
use fusekit::bea::*;
use fusekit::diff::{self, StepRule};
use fusekit::fusion::*;
use fusekit::harness::presets::{fuse_point_sweep, OffsetPreset};
use fusekit::net::*;

struct Outcome {
    pass: bool,
    summary: String,
    record: String,
}

fn outcome(pass: bool, summary: String, record: String) -> Outcome {
    Outcome { pass, summary, record }
}

fn max_abs(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
}

fn fusion_property() -> Outcome {
    let (mut worst, mut spread) = (0.0f64, f64::INFINITY);
    let mut rec = String::new();
    for pair in 0..50u64 {
        let (norm, attn) = (pair % 2 == 0, pair % 3 != 0);
        let (a, b) = (random_feature_net(pair, norm, attn), random_feature_net(pair + 500, norm, attn));
        let (pa, pb) = (a.init_params(pair).unwrap(), b.init_params(pair + 1).unwrap());
        let fused = deep_fuse((&a, &pa), (&b, &pb), Strategy::Property, 0.0, pair).unwrap();
        let x = Input::Features { x: random_features(8, 3, pair + 9), seq_len: 4 };
        let (ya, yb, y) = (forward(&a, &pa, &x).unwrap(), forward(&b, &pb, &x).unwrap(), fused.forward(&x).unwrap());
        let avg: Vec<f64> = ya.data().iter().zip(yb.data()).map(|(p, q)| (p + q) / 2.0).collect();
        let err = max_abs(y.data(), &avg);
        worst = worst.max(err);
        spread = spread.min(max_abs(ya.data(), yb.data()));
        writeln!(rec, "{pair} {err:e}").unwrap();
    }
    outcome(
        worst <= 1e-12 && spread > 0.0,
        format!("50 pairs, max |DF − avg| = {worst:.3e} (≤ 1e-12), sources differ by ≥ {spread:.3e}"),
        rec,
    )
}

fn loss_preservation() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut rec = String::new();
    for seed in 0..10u64 {
        let net = random_feature_net(seed, seed % 2 == 0, true);
        let p = net.init_params(seed).unwrap();
        let batch = Batch {
            input: Input::Features { x: random_features(6, 3, seed), seq_len: 3 },
            target: Target::Regression(random_features(6, 2, seed + 1)),
        };
        let ls = batch_loss(&net, &p, &batch).unwrap();
        for n in 2..=4 {
            let fused = self_deep_fuse((&net, &p), n, Strategy::Property, 0.0, 0).unwrap();
            let err = (fused.loss(&batch).unwrap() - ls).abs();
            worst = worst.max(err);
            writeln!(rec, "{seed} {n} {err:e}").unwrap();
        }
    }
    outcome(worst <= 1e-12, format!("n = 2,3,4 on 10 nets, max |L_B − L_S| = {worst:.3e} (≤ 1e-12)"), rec)
}

fn self_fused(seed: u64, n: usize) -> (FusedNetwork, Batch) {
    let net = smooth_mlp(&[3, 5, 4, 2]);
    let p = net.init_params(seed).unwrap();
    let fused = self_deep_fuse((&net, &p), n, Strategy::Property, 0.0, 0).unwrap();
    (fused, regression_batch(6, 3, 2, seed + 77))
}

fn scaled_gradient() -> Outcome {
    let (mut worst, mut worst_fd): (f64, f64) = (0.0, 0.0);
    let mut rec = String::new();
    for seed in 0..20u64 {
        let n = 2 + (seed % 3) as usize;
        let (fused, batch) = self_fused(seed, n);
        let prob = BeaProblem::new(&fused, &batch).unwrap();
        let r = prob.verify_lemma_scaled_gradient().unwrap();
        let theta = fused.partition.theta_values(prob.w0(), 0);
        let gs = diff::finite_difference_grad_flat(&prob.source_loss(0), &theta, StepRule::default()).unwrap();
        let gb = diff::finite_difference_grad_flat(&prob.l2(), prob.w0(), StepRule::default()).unwrap();
        let mut fd: f64 = 0.0;
        for block in &fused.partition.theta_blocks {
            for (k, &j) in block.iter().enumerate() {
                fd = fd.max((gb[j] - gs[k] / n as f64).abs());
            }
        }
        worst = worst.max(r);
        worst_fd = worst_fd.max(fd);
        writeln!(rec, "{seed} {n} {r:e} {fd:e}").unwrap();
    }
    outcome(
        worst <= 1e-10 && worst_fd <= 1e-5,
        format!("20 nets, residual {worst:.3e} (≤ 1e-10), finite-difference residual {worst_fd:.3e} (≤ 1e-5)"),
        rec,
    )
}

fn same_gradient() -> Outcome {
    let (mut worst, mut worst_block, mut weakest_control) = (0.0f64, 0.0f64, f64::INFINITY);
    let mut rec = String::new();
    for seed in 0..20u64 {
        let n = 2 + (seed % 3) as usize;
        let (fused, batch) = self_fused(seed, n);
        let prob = BeaProblem::new(&fused, &batch).unwrap();
        let s = prob.verify_lemma_same_gradient().unwrap();
        let mut w = prob.w0().to_vec();
        for (i, &j) in fused.partition.eta_indices.iter().enumerate() {
            w[j] = 0.2 * ((i as f64 + seed as f64) * 0.9).sin();
        }
        let control = prob.same_gradient_residual(&w).unwrap().residual;
        worst = worst.max(s.residual);
        worst_block = worst_block.max(s.block_residual.unwrap_or(0.0));
        weakest_control = weakest_control.min(control);
        writeln!(rec, "{seed} {n} {:e} {:?} {control:e}", s.residual, s.block_residual).unwrap();
    }
    outcome(
        worst <= 1e-10 && worst_block <= 1e-10 && weakest_control > 1e-4,
        format!(
            "residual {worst:.3e}, equal-block residual {worst_block:.3e} (≤ 1e-10), control min {weakest_control:.3e} (> 1e-4)"
        ),
        rec,
    )
}

fn bracket_structure() -> Outcome {
    let (mut theta_max, mut eta_min, mut shrink_min) = (0.0f64, f64::INFINITY, f64::INFINITY);
    let mut rec = String::new();
    for seed in 0..10u64 {
        let (fused, batch) = self_fused(seed, 2 + (seed % 2) as usize);
        let prob = BeaProblem::new(&fused, &batch).unwrap();
        let (theta, eta) = prob.verify_lemma_bracket_structure().unwrap();
        let shrunk = prob.shrink_residuals(0.1).unwrap();
        let small = BeaProblem::new(&fused, &shrunk).unwrap();
        let th = fused.partition.theta_values(prob.w0(), 0);
        let g = fusekit::params::norm2(&diff::grad_flat(&prob.source_loss(0), &th).unwrap());
        let gs = fusekit::params::norm2(&diff::grad_flat(&small.source_loss(0), &th).unwrap());
        let (_, eta_small) = small.verify_lemma_bracket_structure().unwrap();
        let shrink = eta / eta_small;
        assert!((g / gs - 10.0).abs() <= 1e-8, "gradient shrink {}", g / gs);
        theta_max = theta_max.max(theta);
        eta_min = eta_min.min(eta);
        shrink_min = shrink_min.min(shrink);
        writeln!(rec, "{seed} {theta:e} {eta:e} {shrink:e}").unwrap();
    }
    outcome(
        theta_max <= 1e-6 && eta_min > 1e-6 && shrink_min >= 5.0,
        format!("θ part {theta_max:.3e} (≤ 1e-6), η part min {eta_min:.3e} (> 1e-6), 10× gradient shrink → η shrink ≥ {shrink_min:.2}× (≥ 5)"),
        rec,
    )
}

fn modified_equation() -> Outcome {
    let net = toy_mlp();
    let p = net.init_params(7).unwrap();
    let fused = self_deep_fuse((&net, &p), 2, Strategy::Property, 0.0, 0).unwrap();
    let batch = regression_batch(8, 3, 2, 7);
    let prob = BeaProblem::new(&fused, &batch).unwrap();
    let o = order_of_accuracy(&prob.l1(), &prob.l2(), prob.w0(), &DEFAULT_LADDER, 1.0, 64).unwrap();
    let ordered = o.points.iter().all(|pt| pt.modified_error < pt.plain_error);
    let mut rec = format!("{} {:e} {:e}\n", fused.params.len(), o.slope_plain, o.slope_modified);
    for pt in &o.points {
        writeln!(rec, "{:e} {:e} {:e} {:e}", pt.h, pt.plain_error, pt.modified_error, pt.loss_change).unwrap();
    }
    let pass = (30..=100).contains(&fused.params.len())
        && (1.7..=2.3).contains(&o.slope_plain)
        && (2.6..=3.4).contains(&o.slope_modified)
        && ordered;
    outcome(
        pass,
        format!(
            "{} params, slope plain {:.3} (1.7 to 2.3), with bracket {:.3} (2.6 to 3.4), bracket flow closer at every h: {ordered}",
            fused.params.len(),
            o.slope_plain,
            o.slope_modified
        ),
        rec,
    )
}

fn jensen_bound() -> Outcome {
    let mut worst = f64::INFINITY;
    let mut rec = String::new();
    for seed in 0..100u64 {
        let n = 2 + (seed % 3) as usize;
        let net = smooth_mlp(&[3, 4, 2]);
        let ps: Vec<_> = (0..n as u64).map(|i| net.init_params(seed * 10 + i).unwrap()).collect();
        let pairs: Vec<_> = ps.iter().map(|p| (&net, p)).collect();
        let fused = deep_fuse_many(&pairs, Strategy::Property, 1e-2, seed).unwrap();
        let batch = regression_batch(6, 3, 2, seed + 7);
        let b = BeaProblem::new(&fused, &batch).unwrap().modified_loss_bound(fused.params.flat(), 1e-2, 1.0).unwrap();
        worst = worst.min(b.gap);
        writeln!(rec, "{seed} {:e} {:e} {:e}", b.gap, b.jensen_gap, b.penalty_gap).unwrap();
    }
    outcome(worst >= -1e-10, format!("100 states, min bound_gap = {worst:.3e} (≥ −1e-10)"), rec)
}

fn alpha_monotonicity() -> Outcome {
    let (fused, batch) = self_fused(7, 2);
    let prob = BeaProblem::new(&fused, &batch).unwrap();
    let rows = prob.bracket_vs_alpha(1e-2, &[0.5, 1.0, 2.0, 4.0]).unwrap();
    let increasing = rows.windows(2).all(|w| w[1].ratio > w[0].ratio);
    let ratios: Vec<String> = rows.iter().map(|r| format!("{:.3e}", r.ratio)).collect();
    outcome(increasing, format!("ratios {}", ratios.join(" < ")), alpha_table_csv(&rows).unwrap())
}

fn dimension_arithmetic() -> Outcome {
    let d = ToyDims::small();
    let net = toy_transformer(d);
    let (pa, pb) = (net.init_params(1).unwrap(), net.init_params(2).unwrap());
    let fused = deep_fuse((&net, &pa), (&net, &pb), Strategy::Property, 0.0, 0).unwrap();
    let (mut emb, mut heads, mut mlp) = (0, 0, 0);
    for l in &fused.spec.layers {
        match *l {
            LayerSpec::Embedding { dim, .. } => emb = dim,
            LayerSpec::MultiHeadAttention { heads: h, .. } => heads = h,
            LayerSpec::Dense { out_dim, activation: Activation::Gelu, .. } => mlp = out_dim,
            _ => {}
        }
    }
    let rec = format!("{emb} {heads} {mlp}\n");
    outcome(
        (emb, heads, mlp) == (2 * d.embedding, 2 * d.heads, 2 * d.mlp) && (emb, heads, mlp) == (64, 4, 128),
        format!("embedding {} → {emb}, heads {} → {heads}, mlp {} → {mlp}", d.embedding, d.heads, d.mlp),
        rec,
    )
}

fn dynamics() -> Outcome {
    let preset = OffsetPreset::new(7);
    let (fused, data) = preset.prepare().unwrap();
    let rows = preset.sweep.run(&fused, &data, None).unwrap();
    let at_end = |offset: i64| rows.iter().find(|r| r.offset == offset && r.step == preset.sweep.steps).unwrap().ratio;
    let (neg, pos) = (at_end(-500), at_end(500));

    let sweep = fuse_point_sweep(7);
    let fp = sweep.run().unwrap();
    let baseline = fp.iter().find(|r| r.baseline).unwrap().final_eval_loss;
    let best = fp
        .iter()
        .filter(|r| !r.baseline && r.post_steps > 0)
        .min_by(|a, b| a.final_eval_loss.total_cmp(&b.final_eval_loss))
        .unwrap();
    let rec = fusekit::harness::offset_csv(&rows).unwrap() + &fusekit::harness::fuse_point_csv(&fp).unwrap();
    outcome(
        neg > pos && best.final_eval_loss < baseline,
        format!(
            "η/θ after {} steps: offset −500 {neg:.4} > +500 {pos:.4}; fuse at {} → {:.4} < random-init baseline {baseline:.4}",
            preset.sweep.steps, best.fuse_step, best.final_eval_loss
        ),
        rec,
    )
}

type Check = (&'static str, Duration, fn() -> Outcome);

fn checks() -> Vec<Check> {
    let s = Duration::from_secs;
    vec![
        ("fusion property", s(10), fusion_property),
        ("loss preservation", s(5), loss_preservation),
        ("scaled gradient", s(30), scaled_gradient),
        ("same gradient", s(30), same_gradient),
        ("bracket structure", s(60), bracket_structure),
        ("modified equation", s(120), modified_equation),
        ("modified-loss bound", s(30), jensen_bound),
        ("bracket share vs alpha", s(10), alpha_monotonicity),
        ("dimension arithmetic", s(1), dimension_arithmetic),
        ("growth dynamics fixtures", s(300), dynamics),
    ]
}

fn main() {
    let mut failures = 0;
    let mut first = Vec::new();
    for (i, (name, limit, check)) in checks().into_iter().enumerate() {
        let t = Instant::now();
        let o = check();
        let took = t.elapsed();
        let pass = o.pass && took < limit;
        failures += usize::from(!pass);
        println!(
            "criterion {:>2} {:<26} {}  {} [{:.2}s < {}s]",
            i + 1,
            name,
            if pass { "PASS" } else { "FAIL" },
            o.summary,
            took.as_secs_f64(),
            limit.as_secs()
        );
        first.push(o.record);
    }
    let t = Instant::now();
    let second: Vec<String> = checks().into_iter().map(|(_, _, check)| check().record).collect();
    let same = second == first;
    failures += usize::from(!same);
    println!(
        "criterion 11 {:<26} {}  re-run of 1 to 10 reproduces {} report bytes [{:.2}s]",
        "determinism",
        if same { "PASS" } else { "FAIL" },
        first.iter().map(String::len).sum::<usize>(),
        t.elapsed().as_secs_f64()
    );
    if failures > 0 {
        println!("{failures} acceptance criteria failed");
        std::process::exit(1);
    }
}
