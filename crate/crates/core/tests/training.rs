mod common;

use common::{max_abs_diff, tiny_config};
use hazemeta::evaluate::ablation::{run_ablation, Variant};
use hazemeta::evaluate::{eval_cases, evaluate_model};
use hazemeta::trainer::{
    fit, init_params, satisfies_pairing, train_step, Dehazer, TrainState, Trainer, FINAL_CHECKPOINT, METRICS_FILE,
};
use hazemeta::Image;
use hazemeta_grad::total_backward_nodes_recorded;

#[test]
fn zero_steps_write_only_the_initial_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny_config();
    cfg.train.max_steps = 0;
    cfg.train.checkpoint_every = 1;
    let path = fit(&cfg, dir.path()).unwrap();
    assert_eq!(path, dir.path().join(FINAL_CHECKPOINT));
    let ckpts: Vec<_> = std::fs::read_dir(dir.path())
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| e.path().extension().is_some_and(|x| x == "safetensors"))
        .collect();
    assert_eq!(ckpts.len(), 1);
    assert_eq!(std::fs::read_to_string(dir.path().join(METRICS_FILE)).unwrap(), "");
    let (state, loaded) = TrainState::load(&path).unwrap();
    assert_eq!(state.step, 0);
    assert_eq!(state.params, init_params(&cfg));
    assert_eq!(loaded, cfg);
}

#[test]
fn every_parameter_moves_within_a_few_steps() {
    let cfg = tiny_config();
    let mut t = Trainer::new(cfg.clone()).unwrap();
    let before = t.state.params.clone();
    for _ in 0..3 {
        let out = t.step().unwrap();
        assert!(satisfies_pairing(&out.domains));
        assert!(out.grad_norm.is_finite());
    }
    for (name, p) in t.state.params.params() {
        assert_ne!(before.param(name), Some(p), "{name} never received a gradient");
    }
    let prefixes = ["adapt.", "backbone.", "classifier."];
    assert!(prefixes.iter().all(|p| t.state.params.params().any(|(k, _)| k.starts_with(p))));
}

#[test]
fn repeated_batch_lowers_pixel_loss() {
    let mut wins = 0;
    for seed in 0..10 {
        let mut cfg = tiny_config();
        cfg.train.seed = seed;
        let mut t = Trainer::new(cfg.clone()).unwrap();
        let batch = t.next_batch().unwrap();
        let first = train_step(&mut t.state, &batch, &cfg, &t.extractor).unwrap();
        let second = train_step(&mut t.state, &batch, &cfg, &t.extractor).unwrap();
        if second.losses.pixel <= first.losses.pixel {
            wins += 1;
        }
    }
    assert!(wins >= 8, "pixel loss fell in only {wins}/10 trials");
}

#[test]
fn resumed_run_matches_uninterrupted_run() {
    let mut cfg = tiny_config();
    cfg.train.max_steps = 4;
    let whole = tempfile::tempdir().unwrap();
    fit(&cfg, whole.path()).unwrap();

    let split = tempfile::tempdir().unwrap();
    let mut half = cfg.clone();
    half.train.max_steps = 2;
    let mid = fit(&half, split.path()).unwrap();
    let mut resumed = Trainer::resume(&mid).unwrap();
    assert_eq!(resumed.state.step, 2);
    resumed.cfg.train.max_steps = 4;
    let last = resumed.run(split.path()).unwrap();

    let read = |d: &std::path::Path| std::fs::read_to_string(d.join(METRICS_FILE)).unwrap();
    assert_eq!(read(whole.path()), read(split.path()));
    let (a, _) = TrainState::load(&whole.path().join(FINAL_CHECKPOINT)).unwrap();
    let (b, _) = TrainState::load(&last).unwrap();
    assert_eq!(a.params, b.params);
}

fn trained(steps: u64) -> (tempfile::TempDir, Dehazer) {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny_config();
    cfg.train.max_steps = steps;
    let path = fit(&cfg, dir.path()).unwrap();
    let d = Dehazer::from_checkpoint(&path).unwrap();
    (dir, d)
}

fn sample_hazy(d: &Dehazer) -> Vec<Image> {
    let domain = &d.cfg.data.held_out_domains[0];
    let mut ecfg = d.cfg.eval.clone();
    ecfg.context_size = 0;
    ecfg.n_images = 3;
    eval_cases(domain, &d.cfg.data.scene, &ecfg).unwrap().into_iter().map(|c| c.hazy).collect()
}

#[test]
fn inference_context_contract() {
    let (_dir, d) = trained(2);
    let imgs = sample_hazy(&d);
    let x = &imgs[0];
    let before = total_backward_nodes_recorded();
    let alone = d.dehaze(x, &[]).unwrap();
    let dup = d.dehaze(x, &[x.clone(), x.clone()]).unwrap();
    assert!(max_abs_diff(alone.data(), dup.data()) < 1e-6);
    let other = d.dehaze(x, &imgs[1..]).unwrap();
    assert_eq!(other.dims(), x.dims());
    assert_eq!(total_backward_nodes_recorded(), before, "inference recorded backward nodes");
}

#[test]
fn odd_sizes_and_mismatched_context_are_handled() {
    let (_dir, d) = trained(1);
    let x = Image::from_fn(21, 19, |c, y, xx| 0.2 + 0.1 * c as f64 + 0.01 * ((y + xx) % 7) as f64).unwrap();
    let ctx = Image::filled(24, 24, 0.6).unwrap();
    let y = d.dehaze(&x, &[ctx]).unwrap();
    assert_eq!(y.dims(), (21, 19));
}

#[test]
fn checkpoint_round_trip_is_bitwise() {
    let (dir, d) = trained(2);
    let again = dir.path().join("copy.safetensors");
    let state = TrainState::load(&dir.path().join(FINAL_CHECKPOINT)).unwrap().0;
    state.save(&again, &d.cfg).unwrap();
    let d2 = Dehazer::from_checkpoint(&again).unwrap();
    assert_eq!(d.params, d2.params);
    for x in sample_hazy(&d) {
        let (a, b) = (d.dehaze(&x, &[]).unwrap(), d2.dehaze(&x, &[]).unwrap());
        assert!(a.data().iter().zip(b.data()).all(|(p, q)| p.to_bits() == q.to_bits()));
    }
}

#[test]
fn untrained_model_scores_like_the_hazy_input() {
    let (_dir, d) = trained(0);
    let domains = d.cfg.data.held_out_domains.clone();
    let report = evaluate_model(&d, &domains, &d.cfg.eval, "init").unwrap();
    for m in &report.domains {
        assert_eq!(m.psnr_mean, m.hazy_psnr_mean);
        assert_eq!(m.dark_channel_mean, m.hazy_dark_channel_mean);
    }
}

#[test]
fn evaluation_is_deterministic_and_covers_each_domain_once() {
    let (_dir, d) = trained(1);
    let mut domains = d.cfg.data.train_domains.clone();
    domains.extend(d.cfg.data.held_out_domains.clone());
    let a = evaluate_model(&d, &domains, &d.cfg.eval, "x").unwrap();
    let b = evaluate_model(&d, &domains, &d.cfg.eval, "x").unwrap();
    assert_eq!(a, b);
    assert_eq!(a.to_csv(), b.to_csv());
    let ids: Vec<usize> = a.domains.iter().map(|m| m.domain_id).collect();
    assert_eq!(ids, domains.iter().map(|d| d.id).collect::<Vec<_>>());
    assert!(a.domains.iter().all(|m| m.n_images == d.cfg.eval.n_images));
    let mut other = d.cfg.eval.clone();
    other.seed += 1;
    assert_ne!(evaluate_model(&d, &domains, &other, "x").unwrap(), a);
}

#[test]
fn ablation_variants_share_data_streams() {
    let base = tiny_config();
    let batches: Vec<_> = Variant::ALL
        .iter()
        .map(|v| Trainer::new(v.apply(&base)).unwrap().next_batch().unwrap())
        .collect();
    assert!(batches.windows(2).all(|w| w[0] == w[1]));

    let dir = tempfile::tempdir().unwrap();
    let mut cfg = base;
    cfg.ablation.seeds = vec![0];
    cfg.ablation.steps = 1;
    let table = run_ablation(&cfg, dir.path()).unwrap();
    assert_eq!(table.rows.len(), 5);
    assert!(table.rows.iter().all(|r| r.failures.is_empty() && r.median_psnr.is_some()));
    let mut ranks: Vec<usize> = table.rows.iter().filter_map(|r| r.rank).collect();
    ranks.sort();
    assert_eq!(ranks, vec![1, 2, 3, 4, 5]);
    for f in ["ablation.csv", "ablation.json", "ablation_psnr.svg"] {
        assert!(dir.path().join(f).is_file(), "{f}");
    }
    assert!(dir.path().join("full/seed-0/eval.json").is_file());
}
