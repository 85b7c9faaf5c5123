use std::path::Path;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use srgan3d::data::manifest::{split_assignment, Manifest};
use srgan3d::data::{read_volume, write_volume, Split};
use srgan3d::degrade::{degrade, DegradationConfig};
use srgan3d::interp::cubic_interpolate;
use srgan3d::losses::{d_loss, g_adv_loss, gdl_loss, mse_loss, LossConfig};
use srgan3d::metrics::{aggregate, psnr, ssim3d, EvalReport, Method, SsimParams, VolumeScore};
use srgan3d::patch::{extract_patches, stitch_patches, PatchGrid};
use srgan3d::upsampling::{voxel_shuffle, voxel_unshuffle};
use srgan3d::{normalize, Shape, Volume};

fn random(shape: Shape, seed: u64) -> Volume<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Volume::from_fn(shape, |_, _, _, _| rng.gen::<f64>())
}

fn sorted_bits(v: &[f64]) -> Vec<u64> {
    let mut b: Vec<u64> = v.iter().map(|x| x.to_bits()).collect();
    b.sort_unstable();
    b
}

fn shape_strategy(max: usize) -> impl Strategy<Value = Shape> {
    (1..=max, 1..=max, 1..=max, 1..=3usize).prop_map(|(h, w, d, c)| Shape::new(h, w, d, c))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn unshuffle_inverts_shuffle(s in shape_strategy(4), r in 1..=3usize, seed: u64) {
        let v = random(s.with_channels(s.c * r.pow(3)), seed);
        let up = voxel_shuffle(&v, r).unwrap();
        prop_assert_eq!(up.shape(), s.scaled(r));
        prop_assert_eq!(sorted_bits(up.data()), sorted_bits(v.data()));
        let back = voxel_unshuffle(&up, r).unwrap();
        prop_assert_eq!(back.data(), v.data());
    }

    #[test]
    fn patch_round_trip_is_exact(
        dims in prop::array::uniform3(4..=14usize),
        frac in prop::array::uniform3(0.2..1.0f64),
        sfrac in prop::array::uniform3(0.1..1.0f64),
        seed: u64,
    ) {
        let patch = [0, 1, 2].map(|a| ((dims[a] as f64 * frac[a]) as usize).max(1));
        let step = [0, 1, 2].map(|a| ((patch[a] as f64 * sfrac[a]) as usize).max(1));
        let grid = PatchGrid::new(dims, patch, step).unwrap();
        prop_assert!(grid.coverage().iter().all(|&c| c >= 1));
        let v = random(Shape::new(dims[0], dims[1], dims[2], 1), seed);
        let patches = extract_patches(&v, &grid).unwrap();
        let back = stitch_patches(&patches, &grid, v.shape()).unwrap();
        prop_assert_eq!(back.data(), v.data());
    }

    #[test]
    fn content_losses_are_non_negative_and_vanish_on_equality(s in shape_strategy(5).prop_filter("gdl needs 2 voxels per axis", |s| s.h.min(s.w).min(s.d) >= 2), seed: u64) {
        let a = random(s, seed);
        let b = random(s, seed ^ 1);
        for f in [mse_loss::<f64>, gdl_loss::<f64>] {
            prop_assert!(f(&a, &b).unwrap() >= 0.0);
            prop_assert_eq!(f(&a, &a).unwrap(), 0.0);
            prop_assert_eq!(f(&a, &b).unwrap(), f(&b, &a).unwrap());
        }
    }

    #[test]
    fn adversarial_losses_are_non_negative(real in -3.0..3.0f64, fake in -3.0..3.0f64) {
        let cfg = LossConfig::default();
        prop_assert!(d_loss(real, fake, &cfg) >= 0.0);
        prop_assert!(g_adv_loss(fake) >= 0.0);
        prop_assert_eq!(g_adv_loss(1.0), 0.0);
    }

    #[test]
    fn ssim_is_bounded_and_symmetric(n in 7..=9usize, seed: u64) {
        let a = random(Shape::cube(n), seed);
        let b = random(Shape::cube(n), seed ^ 7);
        let p = SsimParams::default();
        let ab = ssim3d(&a, &b, &p).unwrap();
        prop_assert!(ab <= 1.0 + 1e-12 && ab >= -1.0 - 1e-12);
        prop_assert!((ab - ssim3d(&b, &a, &p).unwrap()).abs() < 1e-12);
        prop_assert!((ssim3d(&a, &a, &p).unwrap() - 1.0).abs() < 1e-12);
        prop_assert!(psnr(&a, &b, 1.0).unwrap() == psnr(&b, &a, 1.0).unwrap());
    }

    #[test]
    fn degrade_divides_the_grid(n in 1..=4usize, r in 1..=3usize, c in 1..=2usize, seed: u64) {
        let v = random(Shape::new(n * r, (n + 1) * r, n * r, c), seed);
        let lr = degrade(&v, &DegradationConfig::for_factor(r)).unwrap();
        prop_assert_eq!(lr.shape(), Shape::new(n, n + 1, n, c));
        // a normalized blur keeps values inside the input range
        prop_assert!(lr.min() >= v.min() - 1e-12 && lr.max() <= v.max() + 1e-12);
    }

    #[test]
    fn cubic_interpolation_keeps_constants(s in shape_strategy(5), r in 2..=3usize, value in 0.0..1.0f64) {
        let v = Volume::filled(s, value);
        let up = cubic_interpolate(&v, r).unwrap();
        prop_assert_eq!(up.shape(), s.scaled(r));
        prop_assert!(up.data().iter().all(|x| (x - value).abs() < 1e-12));
    }

    #[test]
    fn normalize_spans_the_unit_interval(s in shape_strategy(4), seed: u64, scale in 0.5..100.0f64) {
        prop_assume!(s.len() > 1);
        let v = random(s, seed).map(|x| x * scale - 3.0);
        let n = normalize(&v).unwrap();
        prop_assert_eq!(n.min(), 0.0);
        prop_assert!((n.max() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn vol1_round_trip(s in shape_strategy(5), seed: u64) {
        let v = random(s, seed).cast::<f32>();
        let mut bytes = Vec::new();
        write_volume(&v, &mut bytes).unwrap();
        let back = read_volume(&bytes, Path::new("mem")).unwrap();
        prop_assert_eq!(back, v);
    }

    #[test]
    fn manifest_split_counts(n in 0..200usize, seed: u64) {
        let splits = split_assignment(n, seed);
        let train = splits.iter().filter(|&&s| s == Split::Train).count();
        let expected = if n >= 2 { ((n as f64 * 0.8).floor() as usize).clamp(1, n - 1) } else { 0 };
        prop_assert_eq!(train, expected);
        prop_assert_eq!(split_assignment(n, seed), splits);
        let m = Manifest::from_paths((0..n).map(|i| format!("v{i}.vol")).collect(), seed);
        prop_assert_eq!(Manifest::parse(&m.render(), Path::new("m")).unwrap(), m);
    }

    #[test]
    fn score_csv_round_trip_is_lossless(
        vals in prop::collection::vec((0.0..1e3f64, -1.0..1.0f64), 1..12),
    ) {
        let mut scores = Vec::new();
        for (i, &(p, s)) in vals.iter().enumerate() {
            for method in [Method::Cubic, Method::Subpixel] {
                let psnr = if i == 0 && method == Method::Cubic { f64::INFINITY } else { p };
                scores.push(VolumeScore { volume_id: format!("v{i}"), method, factor: 2, psnr, ssim: s });
            }
        }
        let report = aggregate(scores).unwrap();
        let mut csv = Vec::new();
        report.write_scores_csv(&mut csv).unwrap();
        let back = EvalReport::read_scores_csv(csv.as_slice()).unwrap();
        prop_assert_eq!(&back, &report);
        prop_assert_eq!(EvalReport::from_json(&report.to_json()).unwrap(), report);
    }
}
