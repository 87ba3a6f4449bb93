mod common;

use common::*;
use fusekit::bea::composite_update;
use fusekit::diff::{Graph, Var};
use fusekit::fusion::*;
use fusekit::harness::presets::*;
use fusekit::harness::*;
use fusekit::net::*;
use fusekit::{Result, Tensor};
use proptest::prelude::{prop_assert, proptest};

fn bowl(g: &mut Graph, w: Var) -> Result<Var> {
    let c = g.constant(Tensor::vector(vec![1.0, 4.0, 0.5]));
    let sq = g.mul(w, w)?;
    let p = g.mul(sq, c)?;
    let s = g.sum(p);
    Ok(g.scale(s, 0.5))
}

#[test]
fn sgd_on_a_quadratic_bowl_decreases_monotonically() {
    let mut w = vec![1.0, -2.0, 3.0];
    let mut last = fusekit::diff::value(&bowl, &w).unwrap();
    for _ in 0..50 {
        w = sgd_step(&bowl, &w, 0.4).unwrap();
        let v = fusekit::diff::value(&bowl, &w).unwrap();
        assert!(v < last);
        last = v;
    }
    assert_eq!(sgd_step(&bowl, &w, 0.0).unwrap(), w);
}

#[test]
fn composite_update_is_two_sgd_steps() {
    let net = smooth_mlp(&[3, 4, 2]);
    let p = net.init_params(2).unwrap();
    let fused = self_deep_fuse((&net, &p), 2, Strategy::Property, 0.0, 0).unwrap();
    let batch = regression_batch(6, 3, 2, 5);
    let prob = fusekit::bea::BeaProblem::new(&fused, &batch).unwrap();
    let (h, alpha) = (0.03, 2.0);
    let (w1, w2) = composite_update(&prob.l1(), &prob.l2(), prob.w0(), h, alpha).unwrap();
    let s1 = sgd_step(&prob.l1(), prob.w0(), h).unwrap();
    let s2 = sgd_step(&prob.l2(), &s1, alpha * h).unwrap();
    assert_eq!((w1, w2), (s1, s2));
}

#[test]
fn fused_step_with_zero_rate_is_a_no_op() {
    let net = smooth_mlp(&[3, 4, 2]);
    let p = net.init_params(2).unwrap();
    let fused = self_deep_fuse((&net, &p), 3, Strategy::Rule, 0.0, 0).unwrap();
    let batch = regression_batch(6, 3, 2, 5);
    let obj = NetLoss::new(&fused.spec, &fused.params, &batch);
    assert_eq!(sgd_step(&obj, fused.params.flat(), 0.0).unwrap(), fused.params.flat());
}

#[test]
fn teacher_regression_fixture_drops_tenfold() {
    let cfg = teacher_train_config(7);
    let data = make_task(&cfg.task).unwrap();
    let net = small_student();
    let mut p = net.init_params(7).unwrap();
    let out = sgd_train(&net, &mut p, None, &data, &cfg).unwrap();
    assert_eq!(out.status, Status::Completed);
    let recs = &out.trajectory.records;
    assert!(recs.windows(2).all(|w| w[0].step < w[1].step));
    assert_eq!((recs[0].step, recs.last().unwrap().step, recs.len()), (0, 5000, 11));
    assert!(recs[0].train_loss >= 10.0 * recs.last().unwrap().train_loss);
}

#[test]
fn training_is_deterministic_and_diverges_cleanly() {
    let cfg = TrainConfig { steps: 200, eval_every: 50, ..teacher_train_config(3) };
    let data = make_task(&cfg.task).unwrap();
    let net = small_student();
    let run = |c: &TrainConfig| {
        let mut p = net.init_params(1).unwrap();
        let out = sgd_train(&net, &mut p, None, &data, c).unwrap();
        (out, p)
    };
    let (a, pa) = run(&cfg);
    let (b, pb) = run(&cfg);
    assert_eq!(a.trajectory.to_csv().unwrap(), b.trajectory.to_csv().unwrap());
    assert_eq!(pa, pb);

    let wild = TrainConfig { schedule: Schedule { peak: 1e6, warmup: 1, offset: 0 }, ..cfg.clone() };
    let (out, p) = run(&wild);
    assert!(matches!(out.status, Status::Diverged { .. }));
    assert!(p.flat().iter().all(|v| v.is_finite()));
    assert!(TrainConfig { eval_every: 500, ..cfg }.validate().is_err());
}

#[test]
fn fusing_mid_training_preserves_the_loss() {
    let small = TrainConfig { steps: 300, eval_every: 100, ..teacher_train_config(7) };
    let big = TrainConfig { steps: 100, ..small.clone() };
    let data = make_task(&small.task).unwrap();
    let net = small_student();
    let growth = Growth { zero_block_sigma: 0.0, ..Growth::default() };
    let run = grow_and_train(&net, net.init_params(7).unwrap(), &data, &small, &growth, &big).unwrap();
    assert!((run.eval_before - run.eval_after).abs() <= 1e-10);
    assert_eq!(run.big.records[0].eta_mean_abs, Some(0.0));
    assert_eq!(run.big.records[0].lr, small.schedule.lr(0));
    assert!(run.big.last().unwrap().eta_mean_abs.unwrap() > 0.0);
}

#[test]
fn budget_accounting() {
    let b = BudgetModel { small_step_cost: 1.0, big_step_cost: 3.6, total_budget: 1000.0 };
    for s in [0, 1, 125, 999, 1000] {
        let k = b.post_steps(s).unwrap();
        assert!(b.spent(s, k) <= 1000.0 && 1000.0 < b.spent(s, k + 1));
    }
    assert_eq!(b.post_steps(1000).unwrap(), 0);
    assert!(matches!(b.post_steps(1001), Err(fusekit::Error::InfeasibleBudget(_))));
    assert!(BudgetModel { small_step_cost: 5.0, ..b }.validate().is_err());
    let p = BudgetModel::proportional(30, 108, 10.0);
    assert_eq!(p.big_step_cost, 3.6);
}

proptest! {
    #[test]
    fn budget_rows_fit(cs in 0.1f64..5.0, ratio in 1.0f64..10.0, budget in 1.0f64..1e4, frac in 0.0f64..1.0) {
        let b = BudgetModel { small_step_cost: cs, big_step_cost: cs * ratio, total_budget: budget };
        let s = ((budget / cs) * frac).floor() as usize;
        let k = b.post_steps(s).unwrap();
        prop_assert!(b.spent(s, k) <= budget);
        prop_assert!(budget < b.spent(s, k + 1));
    }
}

#[test]
fn degenerate_budget_reports_the_fused_metric() {
    let mut sweep = fuse_point_sweep(7);
    sweep.total_budget = 200.0;
    sweep.fuse_steps = vec![200];
    let rows = sweep.run().unwrap();
    assert_eq!(rows.len(), 2);
    assert!(rows[0].baseline && !rows[1].baseline);
    assert_eq!(rows[1].post_steps, 0);
    assert_eq!(rows[1].final_eval_loss, rows[1].eval_at_fusion);
    sweep.fuse_steps = vec![201];
    assert!(matches!(sweep.run(), Err(fusekit::Error::InfeasibleBudget(_))));
}

#[test]
fn fuse_point_sweep_is_reproducible() {
    let mut sweep = fuse_point_sweep(2);
    sweep.total_budget = 300.0;
    sweep.fuse_steps = vec![50, 150];
    let a = fuse_point_csv(&sweep.run().unwrap()).unwrap();
    let b = fuse_point_csv(&sweep.run().unwrap()).unwrap();
    assert_eq!(a, b);
    assert!(a.starts_with(&format!("{FUSE_POINT_HEADER}\n")));
    assert_eq!(a.lines().count(), 4);
}

#[test]
fn offset_heatmaps_match_the_kernel() {
    let mut preset = OffsetPreset::new(7);
    preset.pretrain.steps = 50;
    preset.pretrain.eval_every = 50;
    preset.growth.zero_block_sigma = 0.0;
    preset.sweep.steps = 20;
    preset.sweep.dump_every = 10;
    let (fused, data) = preset.prepare().unwrap();
    let dir = tempfile::tempdir().unwrap();
    let rows = preset.sweep.run(&fused, &data, Some(dir.path())).unwrap();
    assert_eq!(rows.len(), 2 * 3);
    let kernel = first_dense_kernel(&fused.spec).unwrap();
    let t = fused.params.tensor(&kernel).unwrap();
    let (h, w) = t.dims2().unwrap();
    let e = fused.params.entry(&kernel).unwrap().clone();
    for row in &rows {
        let bytes = std::fs::read(dir.path().join(row.heatmap.as_ref().unwrap())).unwrap();
        let img = read_pgm(&bytes).unwrap();
        assert_eq!((img.height, img.width), (h, w));
        if row.step == 0 {
            assert_eq!(row.eta_mean_abs, 0.0);
            for j in e.range() {
                if fused.partition.is_eta(j) {
                    assert_eq!(img.pixels[j - e.offset], 0);
                }
            }
        }
    }
    // rows for each offset share the initial state
    assert_eq!(rows[0].eval_loss, rows[3].eval_loss);
    assert!(rows[0].lr >= rows[3].lr);
    let csv = offset_csv(&rows).unwrap();
    assert!(csv.starts_with(&format!("{OFFSET_HEADER}\n")));
}

#[test]
fn csv_headers_match_the_row_fields() {
    fn serde_header<T: serde::Serialize>(row: &T) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.serialize(row).unwrap();
        String::from_utf8(w.into_inner().unwrap()).unwrap().lines().next().unwrap().to_string()
    }
    let r = Record { step: 0, train_loss: 0.0, eval_loss: 0.0, eval_accuracy: None, lr: 0.0, eta_mean_abs: None, theta_mean_abs: None };
    assert_eq!(serde_header(&r), TRAJECTORY_HEADER);
    let f = FusePointRow { fuse_step: 0, baseline: true, post_steps: 0, spent: 0.0, eval_at_fusion: 0.0, final_eval_loss: 0.0, final_eval_accuracy: None, diverged: false };
    assert_eq!(serde_header(&f), FUSE_POINT_HEADER);
    let o = OffsetRow { offset: 0, step: 0, lr: 0.0, eval_loss: 0.0, eta_mean_abs: 0.0, theta_mean_abs: 0.0, ratio: 0.0, heatmap: None };
    assert_eq!(serde_header(&o), OFFSET_HEADER);
}

#[test]
fn parallel_map_keeps_order() {
    let items: Vec<u64> = (0..64).collect();
    let out = par_map(&items, |&i| i * i).unwrap();
    assert_eq!(out, items.iter().map(|i| i * i).collect::<Vec<_>>());
}

#[test]
fn manifest_and_collation() {
    let dir = tempfile::tempdir().unwrap();
    assert!(collate(dir.path()).unwrap().is_empty());
    let m = Manifest::new("train", 7, &teacher_train_config(7)).unwrap();
    m.write(dir.path()).unwrap();
    let back: Manifest = serde_json::from_str(&std::fs::read_to_string(dir.path().join(MANIFEST_FILE)).unwrap()).unwrap();
    assert_eq!(back, m);
    assert!(!m.git_describe.is_empty());

    std::fs::write(dir.path().join("a.csv"), "x,y\n1,2\n").unwrap();
    std::fs::create_dir(dir.path().join("sub")).unwrap();
    std::fs::write(dir.path().join("sub/b.csv"), "x,y\n3,4\n5,6\n").unwrap();
    std::fs::write(dir.path().join("c.csv"), "z\n9\n").unwrap();
    let c = collate(dir.path()).unwrap();
    assert_eq!(c.files.len(), 3);
    assert_eq!(c.tables.len(), 2);
    assert_eq!(c.tables[0].rows.len(), 3);
    let text = c.to_csv().unwrap();
    assert!(text.starts_with("file,x,y\na.csv,1,2\n"));
    assert!(text.contains("\n\nfile,z\nc.csv,9\n"));
}
