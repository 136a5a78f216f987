use proptest::prelude::*;

use nicenet::eval::{dsc, union_labels};
use nicenet::field_ops::{add_fields, jacobian_determinants, njd_percent, upsample_field_2x, warp_nearest, warp_trilinear};
use nicenet::losses::{grad_l2, level_weights, local_ncc, neg_jac_penalty};
use nicenet::training::sample_indices;
use nicenet::volumes::{
    build_pyramid, crop, downsample_half, load_volume, pad_replicate, padded_shape, save_volume, FileFormat,
};
use nicenet::{DisplacementField, LabelMap, Shape, Volume};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn shape() -> impl Strategy<Value = Shape> {
    [2usize..7, 2usize..7, 2usize..7]
}

fn volume() -> impl Strategy<Value = Volume> {
    shape().prop_flat_map(|s| {
        let n: usize = s.iter().product();
        prop::collection::vec(-1.0f32..1.0, n).prop_map(move |d| Volume::new(s, d).unwrap())
    })
}

fn volume_and_field(max: f32) -> impl Strategy<Value = (Volume, DisplacementField)> {
    shape().prop_flat_map(move |s| {
        let n: usize = s.iter().product();
        (
            prop::collection::vec(-1.0f32..1.0, n),
            prop::collection::vec(-max..max, 3 * n),
        )
            .prop_map(move |(v, f)| (Volume::new(s, v).unwrap(), DisplacementField::new(s, f).unwrap()))
    })
}

fn label_pair() -> impl Strategy<Value = (LabelMap, LabelMap)> {
    shape().prop_flat_map(|s| {
        let n: usize = s.iter().product();
        (prop::collection::vec(0u32..4, n), prop::collection::vec(0u32..4, n))
            .prop_map(move |(a, b)| (LabelMap::new(s, a).unwrap(), LabelMap::new(s, b).unwrap()))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn trilinear_warp_stays_within_source_range((v, f) in volume_and_field(4.0)) {
        let w = warp_trilinear(&v, &f).unwrap();
        let (lo, hi) = v.min_max();
        prop_assert!(w.data().iter().all(|&x| x >= lo - 1e-6 && x <= hi + 1e-6));
    }

    #[test]
    fn constant_volume_is_invariant((v, f) in volume_and_field(6.0), c in -3.0f32..3.0) {
        let k = Volume::filled(v.shape(), c);
        let w = warp_trilinear(&k, &f).unwrap();
        prop_assert!(w.data().iter().all(|&x| (x - c).abs() <= 1e-5 * c.abs().max(1.0)));
    }

    #[test]
    fn zero_field_is_identity(v in volume()) {
        let w = warp_trilinear(&v, &DisplacementField::zeros(v.shape())).unwrap();
        prop_assert_eq!(w, v);
    }

    #[test]
    fn nearest_warp_only_produces_existing_labels((l, _) in label_pair(), seed in any::<u64>()) {
        let n = l.data().len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f = DisplacementField::new(
            l.shape(),
            (0..3 * n).map(|_| rand::Rng::random_range(&mut rng, -3.0f32..3.0)).collect(),
        )
        .unwrap();
        let w = warp_nearest(&l, &f).unwrap();
        let src = l.label_set();
        prop_assert!(w.label_set().iter().all(|x| src.contains(x)));
    }

    #[test]
    fn field_addition_commutes_and_zero_is_neutral((_, a) in volume_and_field(2.0), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b = DisplacementField::new(
            a.shape(),
            a.data().iter().map(|_| rand::Rng::random_range(&mut rng, -2.0f32..2.0)).collect(),
        )
        .unwrap();
        prop_assert_eq!(add_fields(&a, &b).unwrap(), add_fields(&b, &a).unwrap());
        prop_assert_eq!(add_fields(&a, &DisplacementField::zeros(a.shape())).unwrap(), a);
    }

    #[test]
    fn upsampling_constants_doubles_them(s in shape(), c in prop::array::uniform3(-5.0f32..5.0)) {
        let up = upsample_field_2x(&DisplacementField::from_fn(s, |_, _, _| c));
        prop_assert_eq!(up.shape(), s.map(|n| 2 * n));
        for k in 0..3 {
            prop_assert!(up.component(k).iter().all(|&v| (v - 2.0 * c[k]).abs() <= 1e-5));
        }
    }

    #[test]
    fn translations_have_unit_jacobian_and_no_folds(s in shape(), c in prop::array::uniform3(-5.0f32..5.0)) {
        let f = DisplacementField::from_fn(s, |_, _, _| c);
        prop_assert!(jacobian_determinants(&f).unwrap().data().iter().all(|&d| d == 1.0));
        prop_assert_eq!(njd_percent(&f).unwrap(), 0.0);
        prop_assert_eq!(grad_l2(&f).unwrap(), 0.0);
        prop_assert_eq!(neg_jac_penalty(&f).unwrap(), 0.0);
    }

    #[test]
    fn regularisers_are_non_negative((_, f) in volume_and_field(3.0)) {
        prop_assert!(grad_l2(&f).unwrap() >= 0.0);
        prop_assert!(neg_jac_penalty(&f).unwrap() >= 0.0);
        let njd = njd_percent(&f).unwrap();
        prop_assert!((0.0..=100.0).contains(&njd));
    }

    #[test]
    fn squared_ncc_is_symmetric_and_bounded(a in volume(), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b = Volume::new(
            a.shape(),
            a.data().iter().map(|_| rand::Rng::random_range(&mut rng, -1.0f32..1.0)).collect(),
        )
        .unwrap();
        let ab = local_ncc(&a, &b, 3).unwrap();
        let ba = local_ncc(&b, &a, 3).unwrap();
        prop_assert!((ab - ba).abs() <= 1e-5);
        prop_assert!((-1e-6..=1.0 + 1e-5).contains(&ab));
    }

    #[test]
    fn dice_is_symmetric_and_bounded((a, b) in label_pair()) {
        let labels = union_labels(&a, &b);
        prop_assume!(!labels.is_empty());
        let ab = dsc(&a, &b, &labels).unwrap().mean;
        let ba = dsc(&b, &a, &labels).unwrap().mean;
        prop_assert!((ab - ba).abs() <= 1e-12);
        prop_assert!((0.0..=1.0).contains(&ab));
        let own = a.foreground_labels();
        if !own.is_empty() {
            prop_assert_eq!(dsc(&a, &a, &own).unwrap().mean, 1.0);
        }
    }

    #[test]
    fn pad_then_crop_round_trips(v in volume(), m in 1usize..6) {
        let to = padded_shape(v.shape(), m);
        prop_assert!(to.iter().all(|&n| n % m == 0));
        prop_assert_eq!(crop(&pad_replicate(&v, to).unwrap(), v.shape()).unwrap(), v);
    }

    #[test]
    fn downsampling_halves_and_preserves_constants(h in prop::array::uniform3(1usize..5), c in -2.0f32..2.0) {
        let s = h.map(|n| 2 * n);
        let d = downsample_half(&Volume::filled(s, c)).unwrap();
        prop_assert_eq!(d.shape(), h);
        prop_assert!(d.data().iter().all(|&x| (x - c).abs() <= 1e-6));
    }

    #[test]
    fn pyramid_levels_halve(levels in 1usize..5, k in prop::array::uniform3(1usize..3)) {
        let s = k.map(|n| n << (levels - 1));
        let p = build_pyramid(&Volume::filled(s, 0.5f32), levels).unwrap();
        for i in 0..levels {
            prop_assert_eq!(p.level(i).shape(), s.map(|n| n >> (levels - 1 - i)));
        }
    }

    #[test]
    fn level_weights_halve_towards_coarse(levels in 1usize..6) {
        let w = level_weights(levels);
        prop_assert_eq!(w.len(), levels);
        prop_assert_eq!(*w.last().unwrap(), 1.0);
        prop_assert!(w.windows(2).all(|p| p[1] == 2.0 * p[0]));
    }

    #[test]
    fn sampled_pairs_are_distinct(n in 2usize..50, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..20 {
            let p = sample_indices(n, &mut rng).unwrap();
            prop_assert!(p.fixed != p.moving && p.fixed < n && p.moving < n);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn volume_files_round_trip(v in volume(), nifti in any::<bool>()) {
        let dir = tempfile::tempdir().unwrap();
        let (name, format) = if nifti { ("v.nii", FileFormat::Nifti1) } else { ("v.raw", FileFormat::Raw) };
        let path = dir.path().join(name);
        save_volume(&v, &path, format).unwrap();
        prop_assert_eq!(load_volume(&path, format).unwrap(), v);
    }
}
