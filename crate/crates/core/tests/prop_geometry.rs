//! Randomized checks of reorientation, resampling and the preprocessing
//! primitives.

use l3sma::geometry::{
    interpolators, orientation_of, reorient, resample, voxel_spacing, AxisLabel, Nearest,
    OrientationCode, Spacing, Trilinear,
};
use l3sma::preprocess::{
    apply_plan, clip_hu, crop, flip, normalize_unit, pad, rotate_inplane, sample_plan,
    AugmentConfig, HuWindow,
};
use l3sma::sma::compute_sma;
use l3sma::{AffineTransform, CtVolume, MaskVolume, Volume};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const CASES: u32 = 256;

fn orientation() -> impl Strategy<Value = OrientationCode> {
    (
        Just([0usize, 1, 2]).prop_shuffle(),
        prop::array::uniform3(any::<bool>()),
    )
        .prop_map(|(perm, pos)| {
            OrientationCode::new([0, 1, 2].map(|t| AxisLabel::from_axis(perm[t], pos[t]))).unwrap()
        })
}

/// Affines with dyadic entries (exact in binary floating point) whose
/// dominant-axis orientation is `code`.
fn dyadic_affine(code: OrientationCode) -> impl Strategy<Value = AffineTransform> {
    let dyadic = prop::sample::select(vec![0.5f64, 1.0, 1.5, 2.0, 3.0]);
    let skew = prop::sample::select(vec![-0.125f64, 0.0, 0.125]);
    (
        prop::array::uniform3(dyadic),
        prop::array::uniform3(prop::array::uniform3(skew)),
        prop::array::uniform3((-512i32..512).prop_map(|t| t as f64 / 4.0)),
    )
        .prop_map(move |(scale, skews, t)| {
            let mut cols = [[0.0; 3]; 3];
            for (c, label) in code.axes().iter().enumerate() {
                let phys = label.physical_axis();
                let sign = if label.is_positive() { 1.0 } else { -1.0 };
                for r in 0..3 {
                    cols[c][r] = if r == phys {
                        sign * scale[c]
                    } else {
                        skews[c][r] * scale[c]
                    };
                }
            }
            AffineTransform::from_columns(cols, t).unwrap()
        })
}

fn oriented_volume() -> impl Strategy<Value = (CtVolume, OrientationCode)> {
    (
        orientation(),
        orientation(),
        [1usize..6, 1usize..6, 1usize..5],
    )
        .prop_flat_map(|(from, to, dims)| {
            let n = dims.iter().product::<usize>();
            (
                dyadic_affine(from),
                prop::collection::vec(-1024.0f32..3071.0, n),
            )
                .prop_map(move |(a, data)| (Volume::new(dims, data, a).unwrap(), to))
        })
}

fn ct_volume(max: usize) -> impl Strategy<Value = CtVolume> {
    (
        [1usize..max, 1usize..max, 1usize..4],
        prop::array::uniform3(0.3f64..3.0),
    )
        .prop_flat_map(|(dims, sp)| {
            let n = dims.iter().product::<usize>();
            prop::collection::vec(-1024.0f32..3071.0, n).prop_map(move |data| {
                Volume::new(
                    dims,
                    data,
                    AffineTransform::diagonal(sp, [1.0, -2.0, 3.0]).unwrap(),
                )
                .unwrap()
            })
        })
}

fn mask_volume(max: usize) -> impl Strategy<Value = MaskVolume> {
    (
        [1usize..max, 1usize..max, 1usize..4],
        prop::array::uniform3(0.3f64..3.0),
    )
        .prop_flat_map(|(dims, sp)| {
            let n = dims.iter().product::<usize>();
            prop::collection::vec(0u8..=1, n).prop_map(move |data| {
                Volume::new(dims, data, AffineTransform::diagonal(sp, [0.0; 3]).unwrap()).unwrap()
            })
        })
}

fn interpolator() -> impl Strategy<Value = &'static str> {
    prop::sample::select(vec!["nearest", "trilinear"])
}

fn binary<T: Copy + Into<f64>>(data: &[T]) -> bool {
    data.iter().all(|&v| {
        let v: f64 = v.into();
        v == 0.0 || v == 1.0
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(CASES))]

    #[test]
    fn reorient_keeps_every_voxel_in_place((v, target) in oriented_volume()) {
        let r = reorient(&v, target).unwrap();
        prop_assert_eq!(orientation_of(r.affine()).unwrap(), target);
        // every output voxel maps to some input voxel at exactly the same point
        let inv = reorient(&r, orientation_of(v.affine()).unwrap()).unwrap();
        prop_assert_eq!(&inv, &v);
        let d = v.dims();
        let mut seen = 0;
        for k in 0..d[2] {
            for j in 0..d[1] {
                for i in 0..d[0] {
                    let p = v.affine().apply_index([i, j, k]);
                    let rd = r.dims();
                    let mut hit = false;
                    for kk in 0..rd[2] {
                        for jj in 0..rd[1] {
                            for ii in 0..rd[0] {
                                if r.affine().apply_index([ii, jj, kk]) == p {
                                    prop_assert_eq!(r.get([ii, jj, kk]), v.get([i, j, k]));
                                    hit = true;
                                }
                            }
                        }
                    }
                    prop_assert!(hit);
                    seen += 1;
                }
            }
        }
        prop_assert_eq!(seen, r.len());
    }

    #[test]
    fn reorient_preserves_area((v, target) in oriented_volume(), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let labels: Vec<u8> = (0..v.len()).map(|_| rand::Rng::random_range(&mut rng, 0..=1u8)).collect();
        let m = v.with_data(labels).unwrap();
        let r = reorient(&m, target).unwrap();
        let axis_old = l3sma::sma::axial_axis(&m).unwrap();
        let axis_new = l3sma::sma::axial_axis(&r).unwrap();
        let k = rand::Rng::random_range(&mut rng, 0..m.dims()[axis_old]);
        // locate the voxel holding the same physical point after reorientation
        let mut idx = [0usize; 3];
        idx[axis_old] = k;
        let p = m.affine().apply_index(idx);
        let rd = r.dims();
        let kn = (0..r.len())
            .map(|li| [li % rd[0], (li / rd[0]) % rd[1], li / (rd[0] * rd[1])])
            .find(|&ni| r.affine().apply_index(ni) == p)
            .map(|ni| ni[axis_new])
            .unwrap();
        let a = compute_sma(&m, k).unwrap();
        let b = compute_sma(&r, kn).unwrap();
        prop_assert_eq!(a.pixel_count, b.pixel_count);
        prop_assert!((a.area_cm2 - b.area_cm2).abs() <= 1e-9 * a.area_cm2.max(1.0));
    }

    #[test]
    fn resample_to_same_spacing_is_identity(v in ct_volume(8), name in interpolator()) {
        let interp = interpolators().build(name, &()).unwrap();
        let r = resample(&v, voxel_spacing(v.affine()), interp.as_ref()).unwrap();
        prop_assert_eq!(r.dims(), v.dims());
        prop_assert!(r.affine().max_abs_diff(v.affine()) < 1e-9);
        for (a, b) in r.data().iter().zip(v.data()) {
            prop_assert!((a - b).abs() <= 1e-6);
        }
    }

    #[test]
    fn nearest_resample_keeps_masks_binary(m in mask_volume(8), target in prop::array::uniform3(0.25f64..4.0)) {
        let r = resample(&m, Spacing::new(target).unwrap(), &Nearest).unwrap();
        prop_assert!(binary(r.data()));
    }

    #[test]
    fn trilinear_resample_keeps_masks_binary(m in mask_volume(8), target in prop::array::uniform3(0.25f64..4.0)) {
        let r = resample(&m, Spacing::new(target).unwrap(), &Trilinear).unwrap();
        prop_assert!(binary(r.data()));
    }

    #[test]
    fn nearest_same_spacing_preserves_area(m in mask_volume(10)) {
        let r = resample(&m, voxel_spacing(m.affine()), &Nearest).unwrap();
        for k in 0..m.dims()[2] {
            prop_assert_eq!(compute_sma(&r, k).unwrap(), compute_sma(&m, k).unwrap());
        }
    }

    #[test]
    fn clip_is_idempotent_and_normalize_in_unit(v in ct_volume(6), lo in -500.0f64..0.0, width in 1.0f64..800.0) {
        let w = HuWindow::new(lo, lo + width).unwrap();
        let once = clip_hu(&v, w);
        prop_assert_eq!(&clip_hu(&once, w), &once);
        let n = normalize_unit(&clip_hu(&v, w), w);
        prop_assert!(n.data().iter().all(|x| (0.0..=1.0).contains(x)));
        prop_assert_eq!(normalize_unit(&v, w), n);
    }

    #[test]
    fn normalize_is_monotone(a in -175.0f32..250.0, gap in 1e-3f32..425.0) {
        let b = a + gap;
        prop_assume!(b <= 250.0);
        let v = Volume::new([2, 1, 1], vec![a, b], AffineTransform::identity()).unwrap();
        let n = normalize_unit(&v, HuWindow::default());
        prop_assert!(n.data()[0] < n.data()[1]);
    }

    #[test]
    fn crop_undoes_pad(v in ct_volume(6), extra in prop::array::uniform3(0usize..5), fill in -1000.0f32..0.0) {
        let d = v.dims();
        let target = [d[0] + extra[0], d[1] + extra[1], d[2] + extra[2]];
        let p = pad(&v, target, fill).unwrap();
        let c = crop(&p, d, true).unwrap();
        prop_assert_eq!(c.data(), v.data());
        prop_assert!(c.affine().max_abs_diff(v.affine()) < 1e-9);
        prop_assert_eq!(p.data().iter().filter(|&&x| x == fill).count() >= p.len() - v.len(), true);
    }

    #[test]
    fn flip_twice_is_identity(v in ct_volume(6), axis in 0usize..3) {
        let back = flip(&flip(&v, axis).unwrap(), axis).unwrap();
        prop_assert_eq!(back.data(), v.data());
        prop_assert!(back.affine().max_abs_diff(v.affine()) < 1e-9);
    }

    #[test]
    fn quarter_turn_is_an_index_shuffle(n in 1usize..9, nz in 1usize..3, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<f32> = (0..n * n * nz).map(|_| rand::Rng::random_range(&mut rng, -1000.0..1000.0)).collect();
        let v = Volume::new([n, n, nz], data, AffineTransform::identity()).unwrap();
        let r = rotate_inplane(&v, 90.0, &Trilinear, -2000.0).unwrap();
        for k in 0..nz {
            for j in 0..n {
                for i in 0..n {
                    prop_assert!((r.get([i, j, k]) - v.get([j, n - 1 - i, k])).abs() <= 1e-6 * 1000.0);
                }
            }
        }
    }

    #[test]
    fn augmentation_keeps_masks_binary(m in mask_volume(24), seed in any::<u64>(), crop_size in [1usize..30, 1usize..30], max_rot in 0.0f64..45.0) {
        let img = m.with_data(m.data().iter().map(|&b| if b == 1 { 50.0f32 } else { -1000.0 }).collect()).unwrap();
        let cfg = AugmentConfig { crop: crop_size, max_rotation_deg: max_rot, ..AugmentConfig::default() };
        let plan = sample_plan(&cfg, m.dims(), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let (i, out) = apply_plan(&img, Some(&m), &plan, &Trilinear).unwrap();
        let out = out.unwrap();
        prop_assert!(binary(out.data()));
        prop_assert_eq!(out.dims(), i.dims());
        prop_assert_eq!(out.dims(), [crop_size[0], crop_size[1], m.dims()[2]]);
        for angle in [plan.angle_deg, -33.0, 90.0] {
            prop_assert!(binary(rotate_inplane(&m, angle, &Nearest, 0).unwrap().data()));
        }
    }
}
