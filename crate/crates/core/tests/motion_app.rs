use polyreg_core::datagen::polygon_mask;
use polyreg_core::estimators::fit_lse;
use polyreg_core::motion::{
    fit_dominant_motion, field_to_flow, flow_to_field, read_flo, read_pnm, resample_flow, rescale_theta,
    stabilize_sequence, warp_backward, write_flo, write_pnm, BorderPolicy, FlowMap, Image, StabilizationParams,
};
use polyreg_core::{Classical, CoefficientVector, DomainGrid, FixedDecoder, ModelSpec, RansacConfig, Regressor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn smooth_image(w: usize, h: usize) -> Image {
    let data = (0..h)
        .flat_map(|y| {
            (0..w).map(move |x| {
                let v = 128.0 + 60.0 * (x as f64 * 0.21).sin() + 50.0 * (y as f64 * 0.17).cos();
                v.round() as u8
            })
        })
        .collect();
    Image::new(w, h, 1, data).unwrap()
}

fn translation(tx: f64, ty: f64) -> CoefficientVector {
    let mut t = vec![0.0; 12];
    t[0] = tx;
    t[1] = ty;
    t.into()
}

fn decode_flow(theta: &CoefficientVector, w: usize, h: usize) -> FlowMap {
    let dec = FixedDecoder::new(ModelSpec::quadratic_motion(), DomainGrid::lattice(h, w).unwrap()).unwrap();
    field_to_flow(&dec.decode(theta).unwrap(), w, h).unwrap()
}

proptest! {
    #[test]
    fn flo_round_trip_is_bit_exact(w in 1usize..8, h in 1usize..8, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let map = FlowMap::new(w, h, (0..2 * w * h).map(|_| rng.random_range(-50.0f32..50.0)).collect()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.flo");
        write_flo(&map, &p).unwrap();
        let back = read_flo(&p).unwrap();
        prop_assert_eq!(back.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), map.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        prop_assert_eq!((back.width, back.height), (w, h));
    }

    #[test]
    fn pnm_round_trip_is_bit_exact(w in 1usize..9, h in 1usize..9, rgb in any::<bool>(), seed in any::<u64>()) {
        let c = if rgb { 3 } else { 1 };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let img = Image::new(w, h, c, (0..w * h * c).map(|_| rng.random()).collect()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.pnm");
        write_pnm(&img, &p).unwrap();
        prop_assert_eq!(read_pnm(&p).unwrap(), img);
    }
}

#[test]
fn lse_dominant_motion_recovers_in_model_flow() {
    let theta: CoefficientVector = vec![1.5, -0.5, 2.0, -1.0, 0.5, 1.0, 0.3, -0.2, 0.1, -0.4, 0.25, 0.6].into();
    let flow = decode_flow(&theta, 40, 30);
    let lse = Classical::lse(ModelSpec::quadratic_motion());
    let d = fit_dominant_motion(&flow, &lse).unwrap();
    assert!(d.theta.distance(&theta) < 1e-6);
    // no drift against the plain estimator composition
    let grid = DomainGrid::lattice(30, 40).unwrap();
    let direct = fit_lse(&ModelSpec::quadratic_motion(), &grid, &flow_to_field(&flow)).unwrap();
    assert_eq!(d.theta, direct);
    assert_eq!(d.parametric, decode_flow(&d.theta, 40, 30));
    let recomputed: Vec<f32> = flow
        .data
        .chunks(2)
        .zip(d.parametric.data.chunks(2))
        .map(|(a, b)| ((a[0] as f64 - b[0] as f64).powi(2) + (a[1] as f64 - b[1] as f64).powi(2)).sqrt() as f32)
        .collect();
    assert_eq!(d.residual, recomputed);
}

/// A regressor bound to a small grid, as a trained network would be.
struct Downsampled(usize, usize);

impl Regressor for Downsampled {
    fn name(&self) -> String {
        "down".into()
    }
    fn spec(&self) -> ModelSpec {
        ModelSpec::quadratic_motion()
    }
    fn native_grid(&self) -> Option<polyreg_core::GridShape> {
        Some(DomainGrid::lattice(self.1, self.0).unwrap().shape())
    }
    fn regress(&self, grid: &DomainGrid, field: &polyreg_core::RangeField) -> polyreg_core::Result<CoefficientVector> {
        assert_eq!(grid.len(), self.0 * self.1);
        fit_lse(&self.spec(), grid, field)
    }
}

#[test]
fn resampling_rule_recovers_affine_and_translation_terms() {
    // Area averaging is exact for affine fields; quadratic terms pick up a
    // small constant bias, so the check is on an affine motion.
    let theta: CoefficientVector = vec![3.0, -2.0, 4.0, 1.0, -1.5, 2.5, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0].into();
    let flow = decode_flow(&theta, 64, 48);
    let d = fit_dominant_motion(&flow, &Downsampled(32, 16)).unwrap();
    assert!(d.theta.distance(&theta) < 1e-4, "{:?}", d.theta);

    let (field, (sx, sy)) = resample_flow(&flow, 32, 16);
    assert_eq!((sx, sy), (2.0, 3.0));
    assert!((field.point(0)[0] * sx - flow.at(0, 0).0 as f64).abs() < 0.5);
    let back = rescale_theta(&vec![1.0; 12].into(), sx, sy);
    assert_eq!(back.as_slice()[0], 2.0);
    assert_eq!(back.as_slice()[1], 3.0);
    assert_eq!(back.as_slice()[8], 2.0);
    assert_eq!(back.as_slice()[11], 3.0);
}

#[test]
fn ransac_residual_concentrates_on_outlier_region() {
    let spec = ModelSpec::quadratic_motion();
    let (w, h) = (48, 48);
    let grid = DomainGrid::lattice(h, w).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let theta: CoefficientVector = vec![1.0, 0.5, 0.8, -0.3, 0.2, 0.6, 0.1, 0.0, -0.2, 0.1, 0.2, 0.0].into();
    let mut flow = decode_flow(&theta, w, h);
    let mask = polygon_mask(&grid, 0.4, &mut rng);
    for (i, _) in mask.iter().enumerate().filter(|(_, &m)| m) {
        flow.data[2 * i] += 6.0;
        flow.data[2 * i + 1] -= 4.0;
    }
    let ransac = Classical::ransac(spec, RansacConfig::for_noise(&spec, 0.05));
    let d = fit_dominant_motion(&flow, &ransac).unwrap();
    let inside = d.mean_residual(Some(&mask), true);
    let outside = d.mean_residual(Some(&mask), false);
    assert!(inside >= 5.0 * outside.max(1e-9), "inside {inside}, outside {outside}");
}

#[test]
fn constant_flow_has_only_translation() {
    let flow = FlowMap::new(16, 12, [0.7f32, -1.25].repeat(16 * 12)).unwrap();
    let d = fit_dominant_motion(&flow, &Classical::lse(ModelSpec::quadratic_motion())).unwrap();
    assert!(d.theta.as_slice()[2..].iter().all(|v| v.abs() < 1e-8));
}

#[test]
fn warp_round_trip_is_near_identity() {
    let img = smooth_image(48, 40);
    let there = warp_backward(&img, &translation(1.3, -0.7), BorderPolicy::Clamp).unwrap();
    let back = warp_backward(&there, &translation(-1.3, 0.7), BorderPolicy::Clamp).unwrap();
    for y in 4..36 {
        for x in 4..44 {
            let diff = (back.get(x, y, 0) as i32 - img.get(x, y, 0) as i32).abs();
            assert!(diff <= 2, "({x},{y}) differs by {diff}");
        }
    }
}

#[test]
fn jitter_sequence_locks_to_first_frame() {
    let (w, h) = (64, 48);
    let base = smooth_image(w + 16, h + 16);
    let offsets = [(0i64, 0i64), (3, -2), (-2, 1), (4, 3), (-1, -3), (2, 2)];
    let crop = |dx: i64, dy: i64| {
        let data = (0..h)
            .flat_map(|y| (0..w).map(move |x| (x as i64 + 8 + dx, y as i64 + 8 + dy)))
            .map(|(x, y)| base.get(x as usize, y as usize, 0))
            .collect();
        Image::new(w, h, 1, data).unwrap()
    };
    let frames: Vec<Image> = offsets.iter().map(|&(dx, dy)| crop(dx, dy)).collect();
    // flow from frame t to t+1: pixel x of frame t sits at x - Δ in frame t+1
    let flows: Vec<FlowMap> = offsets
        .windows(2)
        .map(|p| {
            let (du, dv) = ((p[0].0 - p[1].0) as f32, (p[0].1 - p[1].1) as f32);
            FlowMap::new(w, h, [du, dv].repeat(w * h)).unwrap()
        })
        .collect();
    let lse = Classical::lse(ModelSpec::quadratic_motion());
    let out = stabilize_sequence(&frames, &flows, &lse, &StabilizationParams::default()).unwrap();
    assert_eq!(out.thetas.len(), frames.len() - 1);
    for f in &out.frames {
        let mut sum = 0.0;
        let mut n = 0.0;
        for y in 6..h - 6 {
            for x in 6..w - 6 {
                sum += (f.get(x, y, 0) as f64 - frames[0].get(x, y, 0) as f64).abs();
                n += 1.0;
            }
        }
        assert!(sum / n <= 2.0, "mean abs diff {}", sum / n);
    }
}

#[test]
fn zero_flows_leave_frames_unchanged() {
    let frames = vec![smooth_image(20, 16); 4];
    let flows = vec![FlowMap::zeros(20, 16); 3];
    let lse = Classical::lse(ModelSpec::quadratic_motion());
    for window in [1, 3] {
        let params = StabilizationParams {
            smoothing_window: window,
            border_policy: BorderPolicy::Black,
        };
        assert_eq!(stabilize_sequence(&frames, &flows, &lse, &params).unwrap().frames, frames);
    }
}
