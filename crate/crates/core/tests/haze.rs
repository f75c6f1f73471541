mod common;

use hazemeta::datagen::{
    ingest_image_folder, make_task, procedural_clear_and_depth, read_manifest, synthesize_hazy, transmission_map,
    write_manifest, DomainSpec, FolderDataset, ManifestEntry, PairingRule, SceneBank, SceneConfig,
};
use hazemeta::evaluate::{dark_channel_mean, psnr, ssim_metric, PSNR_CAP};
use hazemeta::{DepthMap, Error, Image};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn depth_from(values: &[f64], h: usize, w: usize) -> DepthMap {
    DepthMap::new(h, w, values.to_vec()).unwrap()
}

#[test]
fn haze_raises_the_dark_channel() {
    let cfg = SceneConfig::small();
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (clear, depth) = procedural_clear_and_depth(&cfg, &mut rng);
        for domain in DomainSpec::desk_domains() {
            assert!(domain.a_range[0] >= 0.7);
            let (beta, a) = domain.draw_haze(&mut rng);
            let hazy = synthesize_hazy(&clear, &depth.scaled(domain.depth_bias).unwrap(), beta, a).unwrap();
            let (dh, dc) = (dark_channel_mean(&hazy, 15).unwrap(), dark_channel_mean(&clear, 15).unwrap());
            assert!(dh >= dc, "seed {seed} domain {}: {dh} < {dc}", domain.id);
        }
    }
}

#[test]
fn dark_channel_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (img, _) = procedural_clear_and_depth(&SceneConfig::small(), &mut rng);
    let (h, w) = img.dims();
    let r = 2isize;
    let mut total = 0.0;
    for y in 0..h as isize {
        for x in 0..w as isize {
            let mut m = f64::INFINITY;
            for yy in (y - r).max(0)..=(y + r).min(h as isize - 1) {
                for xx in (x - r).max(0)..=(x + r).min(w as isize - 1) {
                    for c in 0..3 {
                        m = m.min(img.get(c, yy as usize, xx as usize));
                    }
                }
            }
            total += m;
        }
    }
    let expect = total / (h * w) as f64;
    assert!((dark_channel_mean(&img, 5).unwrap() - expect).abs() < 1e-12);
    assert!(matches!(dark_channel_mean(&img, 4), Err(Error::InvalidInput(_))));
}

#[test]
fn psnr_reference_values() {
    let a = Image::filled(16, 16, 0.5).unwrap();
    assert_eq!(psnr(&a, &a).unwrap(), PSNR_CAP);
    assert!((psnr(&a, &Image::filled(16, 16, 0.6).unwrap()).unwrap() - 20.0).abs() < 1e-9);
    let black = Image::filled(16, 16, 0.0).unwrap();
    let white = Image::filled(16, 16, 1.0).unwrap();
    assert!(psnr(&black, &white).unwrap().abs() < 1e-12);
    assert!((ssim_metric(&a, &a).unwrap() - 1.0).abs() < 1e-12);
    assert!(psnr(&a, &Image::filled(16, 17, 0.5).unwrap()).is_err());
}

#[test]
fn tasks_stay_in_their_domain() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let bank = SceneBank::generate(&SceneConfig::small(), 4, &mut rng);
    for domain in DomainSpec::desk_domains() {
        let task = make_task(&domain, &bank, 4, &mut rng).unwrap();
        assert_eq!(task.len(), 4);
        assert!(task.pairs.iter().all(|p| p.domain_id == domain.id && p.hazy.dims() == p.clear.dims()));
        assert!(task.pairs.iter().any(|p| p.hazy != p.clear));
    }
    assert!(make_task(&DomainSpec::desk_domains()[0], &bank, 0, &mut rng).is_err());
    assert!(make_task(&DomainSpec::desk_domains()[0], &SceneBank::default(), 2, &mut rng).is_err());
}

#[test]
fn task_generation_is_seeded() {
    let gen = |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bank = SceneBank::generate(&SceneConfig::small(), 3, &mut rng);
        make_task(&DomainSpec::desk_domains()[1], &bank, 2, &mut rng).unwrap()
    };
    assert_eq!(gen(9), gen(9));
    assert_ne!(gen(9), gen(10));
}

#[test]
fn folder_and_manifest_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (clear, depth) = procedural_clear_and_depth(&SceneConfig::small(), &mut rng);
    let hazy = synthesize_hazy(&clear, &depth, 1.0, 0.9).unwrap();
    for sub in ["hazy", "clear"] {
        std::fs::create_dir_all(dir.path().join(sub)).unwrap();
    }
    hazy.save_png(&dir.path().join("hazy/0000.png")).unwrap();
    clear.save_png(&dir.path().join("clear/0000.png")).unwrap();
    // Unpaired and undecodable files are skipped.
    hazy.save_png(&dir.path().join("hazy/0001.png")).unwrap();
    std::fs::write(dir.path().join("hazy/0002.png"), b"not a png").unwrap();
    std::fs::write(dir.path().join("clear/0002.png"), b"not a png").unwrap();

    let FolderDataset::Pairs(pairs) = ingest_image_folder(dir.path(), &PairingRule::paired(4)).unwrap() else {
        panic!("expected pairs");
    };
    assert_eq!(pairs.len(), 1);
    assert_eq!(pairs[0].domain_id, 4);
    assert!(psnr(&pairs[0].clear, &clear).unwrap() > 45.0);

    let hazy_only = ingest_image_folder(&dir.path().join("hazy"), &PairingRule::HazyOnly).unwrap();
    assert_eq!(hazy_only.len(), 2);

    let empty = tempfile::tempdir().unwrap();
    assert!(ingest_image_folder(empty.path(), &PairingRule::HazyOnly).is_err());

    let entries = vec![ManifestEntry {
        hazy_path: "hazy/0000.png".into(),
        clear_path: "clear/0000.png".into(),
        domain_id: 4,
    }];
    let m = dir.path().join("manifest.jsonl");
    write_manifest(&m, &entries).unwrap();
    assert_eq!(read_manifest(&m).unwrap(), entries);
    std::fs::write(&m, "{\"hazy_path\": 3}\n").unwrap();
    assert!(matches!(read_manifest(&m), Err(Error::InvalidInput(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn transmission_is_a_decreasing_unit_map(depths in prop::collection::vec(0.0f64..5.0, 16), beta in 0.0f64..4.0) {
        let t = transmission_map(&depth_from(&depths, 4, 4), beta).unwrap();
        for (i, &ti) in t.data.iter().enumerate() {
            prop_assert!(ti > 0.0 && ti <= 1.0);
            for (j, &tj) in t.data.iter().enumerate() {
                if depths[i] < depths[j] {
                    prop_assert!(ti >= tj);
                }
            }
        }
    }

    #[test]
    fn hazy_stays_in_range_and_between_scene_and_airlight(
        seed in 0u64..500,
        beta in 0.0f64..3.0,
        a in 0.05f64..1.0,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (clear, depth) = procedural_clear_and_depth(&SceneConfig::small(), &mut rng);
        let hazy = synthesize_hazy(&clear, &depth, beta, a).unwrap();
        for (h, c) in hazy.data().iter().zip(clear.data()) {
            prop_assert!((0.0..=1.0).contains(h));
            prop_assert!(*h >= c.min(a) - 1e-12 && *h <= c.max(a) + 1e-12);
        }
    }

    #[test]
    fn zero_beta_leaves_the_scene_clear(seed in 0u64..500, a in 0.05f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (clear, depth) = procedural_clear_and_depth(&SceneConfig::small(), &mut rng);
        prop_assert_eq!(synthesize_hazy(&clear, &depth, 0.0, a).unwrap(), clear);
    }

    #[test]
    fn psnr_is_symmetric_and_capped(sa in 0u64..500, sb in 0u64..500) {
        let cfg = SceneConfig::small();
        let (a, _) = procedural_clear_and_depth(&cfg, &mut ChaCha8Rng::seed_from_u64(sa));
        let (b, _) = procedural_clear_and_depth(&cfg, &mut ChaCha8Rng::seed_from_u64(sb + 500));
        let p = psnr(&a, &b).unwrap();
        prop_assert_eq!(p, psnr(&b, &a).unwrap());
        prop_assert!(p <= PSNR_CAP && p >= 0.0);
    }
}
