use proptest::prelude::*;

use super::*;
use crate::error::Error;
use crate::simgel::{ContactState, IndenterSpec, NutClass, Simulator, TactileImage};

fn pattern(h: usize, w: usize, fr: f64, fc: f64) -> TactileImage<f64> {
    TactileImage::from_fn(h, w, |r, c, ch| {
        let (r, c) = (r as f64, c as f64);
        0.5 + 0.2 * (fr * r + 0.5 * fc * c + ch as f64).sin() + 0.1 * (fc * c).cos() + 0.002 * r
    })
}

fn rendered() -> TactileImage<f64> {
    let s = Simulator::default();
    let spec = IndenterSpec::nut(s.params(), NutClass::Pecan, 2);
    s.render(&ContactState::new(27.0, 15.0).with_angle(30.0), &spec, 0.01, 4).unwrap()
}

#[test]
fn identity_unwarp_reproduces_input() {
    let img = rendered();
    let out = unwarp(&img, &UnwarpCalibration::identity(img.height(), img.width())).unwrap();
    for (a, b) in img.pixels().iter().zip(out.pixels()) {
        assert!((a - b).abs() <= 1e-6);
    }
}

#[test]
fn singular_homography_is_rejected() {
    let mut cal = UnwarpCalibration::identity(10, 10);
    cal.homography = [1.0, 2.0, 0.0, 2.0, 4.0, 0.0, 0.0, 0.0, 1.0];
    let img = TactileImage::<f64>::from_fn(10, 10, |_, _, _| 0.5);
    assert!(matches!(unwarp(&img, &cal), Err(Error::InvalidCalibration(_))));
}

#[test]
fn quarter_turn_round_trips() {
    let (h, w) = (40, 60);
    let raw = pattern(h, w, 0.17, 0.09);
    let rot = UnwarpCalibration {
        homography: [0.0, -1.0, (w - 1) as f64, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0],
        radial_k1: 0.0,
        radial_k2: 0.0,
        output_size: (w, h),
    };
    let turned = unwarp(&raw, &rot).unwrap();
    assert_eq!((turned.height(), turned.width()), (w, h));
    for r in 0..w {
        for c in 0..h {
            assert_eq!(turned.get(r, c, 1), raw.get(c, w - 1 - r, 1));
        }
    }
    let back = UnwarpCalibration {
        homography: rot.inverse_homography().unwrap(),
        radial_k1: 0.0,
        radial_k2: 0.0,
        output_size: (h, w),
    };
    let restored = unwarp(&turned, &back).unwrap();
    let mae =
        raw.pixels().iter().zip(restored.pixels()).map(|(a, b)| (a - b).abs()).sum::<f64>() / raw.pixels().len() as f64;
    assert!(mae < 0.5 / 255.0, "mae {mae}");
}

fn centroid(img: &TactileImage<f64>, r0: usize, c0: usize, half: usize) -> (f64, f64) {
    let (mut m, mut sr, mut sc) = (0.0, 0.0, 0.0);
    for r in r0 - half..=r0 + half {
        for c in c0 - half..=c0 + half {
            let v = img.get(r, c, 0);
            m += v;
            sr += v * r as f64;
            sc += v * c as f64;
        }
    }
    (sr / m, sc / m)
}

#[test]
fn radial_warp_markers_are_recovered() {
    let n = 80;
    let markers = [(14.0, 14.0), (14.0, 65.0), (65.0, 14.0), (65.0, 65.0)];
    let rect = TactileImage::<f64>::from_fn(n, n, |r, c, _| {
        markers
            .iter()
            .map(|&(mr, mc)| {
                let d2 = (r as f64 - mr).powi(2) + (c as f64 - mc).powi(2);
                0.9 * (-d2 / (2.0 * 1.5f64.powi(2))).exp()
            })
            .sum::<f64>()
    });
    let mut cal = UnwarpCalibration::identity(n, n);
    cal.radial_k1 = 0.1;
    let raw = warp(&rect, &cal, n, n).unwrap();
    let restored = unwarp(&raw, &cal).unwrap();
    for &(mr, mc) in &markers {
        let (r0, c0) = (mr as usize, mc as usize);
        let truth = centroid(&rect, r0, c0, 6);
        // the distortion pushes markers outward: locate them in the raw frame first
        let (sr, sc) = cal.source_point(truth.0, truth.1, n, n);
        let moved = centroid(&raw, sr.round() as usize, sc.round() as usize, 6);
        assert!((moved.0 - truth.0).abs() > 1.0 && (moved.1 - truth.1).abs() > 1.0, "{moved:?}");
        let got = centroid(&restored, r0, c0, 6);
        let err = ((got.0 - truth.0).powi(2) + (got.1 - truth.1).powi(2)).sqrt();
        assert!(err < 0.5, "marker {mr},{mc}: error {err}");
    }
}

#[test]
fn calibration_block_round_trips() {
    let cal = UnwarpCalibration {
        homography: [1.01, 0.02, -3.0, -0.01, 0.99, 2.5, 1e-5, 0.0, 1.0],
        radial_k1: 0.08,
        radial_k2: -0.01,
        output_size: (160, 120),
    };
    let text = cal.to_toml();
    assert!(text.starts_with("[calibration]"));
    assert_eq!(UnwarpCalibration::from_toml(&text).unwrap(), cal);
}

#[test]
fn null_policy_is_identity() {
    let img = rendered();
    let out = augment(&img, &AugmentPolicy::default(), 17).unwrap();
    assert_eq!(out, img);
}

#[test]
fn forced_flip_is_an_involution() {
    let img = rendered();
    let flip = Augmentation { flip: true, ..Augmentation::IDENTITY };
    let once = flip.apply(&img);
    assert_ne!(once.pixels(), img.pixels());
    assert_eq!(once.get(3, 0, 2), img.get(3, img.width() - 1, 2));
    assert_eq!(flip.apply(&once).pixels(), img.pixels());
}

#[test]
fn brightness_shifts_mean_by_sampled_delta() {
    let img = TactileImage::<f64>::from_fn(30, 20, |r, c, ch| 0.4 + 0.005 * (r + c + ch) as f64);
    let policy = AugmentPolicy::photometric(0.1, 0.0);
    let a = augment(&img, &policy, 3).unwrap();
    assert_eq!(a, augment(&img, &policy, 3).unwrap());
    let draw = policy.sample(3);
    assert!(draw.brightness != 0.0 && draw.brightness.abs() <= 0.1);
    let raw = draw.apply_unclamped(&img);
    let mean = raw.iter().sum::<f64>() / raw.len() as f64;
    assert!((mean - img.mean() - draw.brightness).abs() < 1e-12);
    assert!((a.mean() - img.mean() - draw.brightness).abs() < 1e-12);
}

#[test]
fn flip_requires_geometric_permission() {
    let policy = AugmentPolicy { flip_lr: true, ..AugmentPolicy::default() };
    assert!(matches!(policy.validate(), Err(Error::InvalidArgument(_))));
    assert!(AugmentPolicy { geometric_allowed: true, ..policy }.validate().is_ok());
    assert!(AugmentPolicy::photometric(-0.1, 0.0).validate().is_err());
}

#[test]
fn uniform_image_gives_constant_features() {
    let img = TactileImage::<f64>::from_fn(160, 120, |_, _, _| 0.5);
    let f = raw_pixel_features(&img, DEFAULT_FEATURE_SIZE).unwrap();
    assert_eq!(f.len(), 32 * 24 * 3);
    assert!(f.iter().all(|&v| (v - 0.5).abs() < 1e-12));
    assert!(raw_pixel_features(&img, (3, 8)).is_err());
}

#[test]
fn block_average() {
    let img = TactileImage::<f64>::from_fn(2, 2, |r, _, _| r as f64);
    assert_eq!(resample_area(&img, 1, 1).unwrap().get(0, 0, 0), 0.5);
    let img = TactileImage::<f64>::from_fn(8, 8, |r, c, _| ((r / 2) * 4 + c / 2) as f64 / 16.0);
    let small = resample_area(&img, 4, 4).unwrap();
    for r in 0..4 {
        for c in 0..4 {
            assert!((small.get(r, c, 0) - (r * 4 + c) as f64 / 16.0).abs() < 1e-12);
        }
    }
}

#[test]
fn features_are_channel_planar() {
    let img = TactileImage::<f64>::from_fn(8, 4, |_, _, ch| 0.25 * ch as f64);
    let f = raw_pixel_features(&img, (4, 4)).unwrap();
    assert!(f[..16].iter().all(|&v| v == 0.0));
    assert!(f[16..32].iter().all(|&v| v == 0.25));
    assert!(f[32..].iter().all(|&v| v == 0.5));
}

fn matrix(n: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| (0..dim).map(|j| j as f64 + (j + 1) as f64 * rng.random::<f64>()).collect()).collect()
}

fn column_stats(rows: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let n = rows.len() as f64;
    let dim = rows[0].len();
    let mean: Vec<f64> = (0..dim).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n).collect();
    let std = (0..dim).map(|j| (rows.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / n).sqrt()).collect();
    (mean, std)
}

#[test]
fn standardizer_uses_training_statistics_only() {
    let train = matrix(200, 12, 1);
    let val = matrix(50, 12, 2);
    let st = Standardizer::fit(&train).unwrap();
    let (mean, std) = column_stats(&st.transform_all(&train).unwrap());
    assert!(mean.iter().all(|m| m.abs() < 1e-9));
    assert!(std.iter().all(|s| (s - 1.0).abs() < 1e-6));
    let (tm, ts) = column_stats(&train);
    assert_eq!(st.mean, tm);
    for (a, b) in st.std.iter().zip(&ts) {
        assert!((a - b).abs() < 1e-12);
    }
    let other = Standardizer::fit(&val).unwrap();
    assert_ne!(other, st);
}

#[test]
fn constant_columns_keep_unit_scale() {
    let rows = vec![vec![1.0, 2.0], vec![1.0, 4.0]];
    let st = Standardizer::fit(&rows).unwrap();
    assert_eq!(st.std[0], 1.0);
    assert_eq!(st.transform(&[1.0, 3.0]).unwrap(), vec![0.0, 0.0]);
    assert!(st.transform(&[1.0]).is_err());
    assert!(Standardizer::fit::<f64>(&[]).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn warp_then_unwarp_is_near_identity(
        angle in -0.15..0.15f64,
        scale in 0.9..1.1f64,
        tx in -3.0..3.0f64,
        ty in -3.0..3.0f64,
        k1 in -0.1..0.1f64,
        fr in 0.02..0.12f64,
        fc in 0.02..0.12f64,
    ) {
        let (h, w) = (48, 64);
        let rect = pattern(h, w, fr, fc);
        let (cs, sn) = (scale * angle.cos(), scale * angle.sin());
        let cal = UnwarpCalibration {
            homography: [cs, -sn, tx + 4.0, sn, cs, ty + 4.0, 0.0, 0.0, 1.0],
            radial_k1: k1,
            radial_k2: 0.0,
            output_size: (h, w),
        };
        let (rh, rw) = (h + 8, w + 8);
        let raw = warp(&rect, &cal, rh, rw).unwrap();
        let back = unwarp(&raw, &cal).unwrap();
        let (mut err, mut n) = (0.0, 0usize);
        for r in 4..h - 4 {
            for c in 4..w - 4 {
                let (sr, sc) = cal.source_point(r as f64, c as f64, rh, rw);
                if sr < 1.0 || sc < 1.0 || sr > (rh - 2) as f64 || sc > (rw - 2) as f64 {
                    continue;
                }
                for ch in 0..3 {
                    err += (rect.get(r, c, ch) - back.get(r, c, ch)).abs();
                    n += 1;
                }
            }
        }
        prop_assert!(n > 0);
        prop_assert!(err / (n as f64) < 0.5 / 255.0, "mae {}", err / n as f64);
    }

    #[test]
    fn augmented_pixels_stay_in_unit_interval(
        b in 0.0..0.5f64,
        k in 0.0..0.9f64,
        flip in any::<bool>(),
        seed in any::<u64>(),
    ) {
        let img = pattern(12, 9, 0.4, 0.3);
        let policy = AugmentPolicy { flip_lr: flip, brightness_jitter: b, contrast_jitter: k, geometric_allowed: true };
        let out = augment(&img, &policy, seed).unwrap();
        prop_assert!(out.pixels().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn area_resample_preserves_mean(h in 4usize..40, w in 4usize..40, th in 1usize..20, tw in 1usize..20) {
        let img = pattern(h, w, 0.3, 0.7);
        let small = resample_area(&img, th, tw).unwrap();
        prop_assert!((small.mean() - img.mean()).abs() < 1e-9);
    }
}
