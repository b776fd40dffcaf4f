use polyreg_core::datagen::{
    coefficient_scales, connected_components, derive_seed, generate_pair, polygon_mask, read_pairs,
    sample_coefficients, write_pairs, GenScheme, PairGenerator, Precision,
};
use polyreg_core::estimators::fit_lse;
use polyreg_core::{DomainGrid, FixedDecoder, ModelSpec};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn both() -> Vec<(ModelSpec, DomainGrid)> {
    vec![
        (ModelSpec::scalar(4), DomainGrid::line(64).unwrap()),
        (ModelSpec::quadratic_motion(), DomainGrid::lattice(32, 32).unwrap()),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn pair_invariants(seed in any::<u64>(), which in 0usize..2, scheme in 0usize..3) {
        let (spec, grid) = both().swap_remove(which);
        let dec = FixedDecoder::new(spec, grid.clone()).unwrap();
        let scheme = [GenScheme::data1(&spec), GenScheme::data2(&spec), GenScheme::mixed(&spec)][scheme].clone();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = generate_pair(&dec, &scheme, &mut rng);
        prop_assert_eq!(&p.target, &dec.decode(&p.theta_true).unwrap());
        let count = p.outlier_mask.iter().filter(|&&b| b).count();
        prop_assert_eq!(p.realized_outlier_ratio, count as f64 / grid.len() as f64);
        prop_assert!(p.realized_outlier_ratio <= scheme.max_outlier_ratio + 0.05);
        let fit = fit_lse(&spec, &grid, &p.target).unwrap();
        let scale = p.theta_true.as_slice().iter().fold(1.0f64, |m, v| m.max(v.abs()));
        prop_assert!(fit.distance(&p.theta_true) < 1e-9 * scale);
        if spec.domain_dim() == 2 && count > 0 {
            prop_assert_eq!(connected_components(&p.outlier_mask, 32, 32).len(), 1);
        }
    }

    #[test]
    fn same_seed_same_pair(seed in any::<u64>(), which in 0usize..2) {
        let (spec, grid) = both().swap_remove(which);
        let mut a = PairGenerator::new(spec, grid.clone(), GenScheme::mixed(&spec), seed).unwrap();
        let mut b = PairGenerator::new(spec, grid, GenScheme::mixed(&spec), seed).unwrap();
        for _ in 0..3 {
            prop_assert_eq!(a.next_pair(), b.next_pair());
        }
    }

    #[test]
    fn decoded_sample_is_bounded(seed in any::<u64>()) {
        let spec = ModelSpec::scalar(4);
        let dec = FixedDecoder::new(spec, DomainGrid::line(64).unwrap()).unwrap();
        let scheme = GenScheme::data2(&spec);
        let bound: f64 = coefficient_scales(&spec, scheme.coefficient_scale).iter().sum();
        let theta = sample_coefficients(&spec, &scheme, &mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert!(dec.decode(&theta).unwrap().values().iter().all(|v| v.abs() <= bound));
    }
}

#[test]
fn zero_scale_gives_zero_coefficients() {
    let spec = ModelSpec::quadratic_motion();
    let mut scheme = GenScheme::data1(&spec);
    scheme.coefficient_scale = 0.0;
    let t = sample_coefficients(&spec, &scheme, &mut ChaCha8Rng::seed_from_u64(1));
    assert!(t.as_slice().iter().all(|&v| v == 0.0));
}

#[test]
fn coefficient_means_are_centred() {
    let spec = ModelSpec::scalar(4);
    let scheme = GenScheme::data2(&spec);
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let n = 10_000;
    let draws: Vec<_> = (0..n).map(|_| sample_coefficients(&spec, &scheme, &mut rng)).collect();
    for (k, s) in coefficient_scales(&spec, scheme.coefficient_scale).into_iter().enumerate() {
        let mean = draws.iter().map(|t| t.as_slice()[k]).sum::<f64>() / n as f64;
        let se = s / 3f64.sqrt() / (n as f64).sqrt();
        assert!(mean.abs() < 3.0 * se, "coefficient {k}: mean {mean}, se {se}");
    }
}

#[test]
fn noise_off_mask_has_requested_std() {
    let spec = ModelSpec::scalar(4);
    let dec = FixedDecoder::new(spec, DomainGrid::line(64).unwrap()).unwrap();
    let scheme = GenScheme::evaluation(&spec, 0.3, 0.5);
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let mut diffs = Vec::new();
    while diffs.len() < 100_000 {
        let p = generate_pair(&dec, &scheme, &mut rng);
        for i in (0..64).filter(|&i| !p.outlier_mask[i]) {
            diffs.push(p.input.values()[i] - p.target.values()[i]);
        }
    }
    let mean = diffs.iter().sum::<f64>() / diffs.len() as f64;
    let std = (diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / diffs.len() as f64).sqrt();
    assert!((std - 0.5).abs() < 0.05, "std {std}");
}

#[test]
fn clean_scheme_gives_identical_input() {
    let spec = ModelSpec::quadratic_motion();
    let dec = FixedDecoder::new(spec, DomainGrid::lattice(8, 8).unwrap()).unwrap();
    let p = generate_pair(&dec, &GenScheme::evaluation(&spec, 0.0, 0.0), &mut ChaCha8Rng::seed_from_u64(2));
    assert_eq!(p.input, p.target);
}

#[test]
fn polygon_masks_hit_target_on_large_lattice() {
    let grid = DomainGrid::lattice(64, 64).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..50 {
        let m = polygon_mask(&grid, 0.3, &mut rng);
        let f = m.iter().filter(|&&b| b).count() as f64 / m.len() as f64;
        assert!((0.25..=0.35).contains(&f), "fraction {f}");
        assert_eq!(connected_components(&m, 64, 64).len(), 1);
    }
    assert!(polygon_mask(&grid, 0.0, &mut rng).iter().all(|&b| !b));
}

#[test]
fn line_masks_are_contiguous_intervals() {
    let grid = DomainGrid::line(64).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for ratio in [0.1, 0.25, 0.5] {
        let m = polygon_mask(&grid, ratio, &mut rng);
        let idx: Vec<usize> = (0..64).filter(|&i| m[i]).collect();
        assert_eq!(idx.len(), (ratio * 64.0f64).round() as usize);
        assert!(idx.windows(2).all(|w| w[1] == w[0] + 1));
    }
}

#[test]
fn worker_streams_differ_and_replay() {
    let spec = ModelSpec::scalar(4);
    let grid = DomainGrid::line(64).unwrap();
    let mk = |s| PairGenerator::with_stream(spec, grid.clone(), GenScheme::data1(&spec), 5, s).unwrap();
    assert_ne!(mk(0).next_pair(), mk(1).next_pair());
    assert_eq!(mk(1).next_pair(), mk(1).next_pair());
    assert_ne!(derive_seed(5, 0), derive_seed(5, 1));
}

#[test]
fn dump_round_trip_in_both_precisions() {
    for (spec, grid) in both() {
        let pairs: Vec<_> = PairGenerator::new(spec, grid.clone(), GenScheme::data2(&spec), 11)
            .unwrap()
            .take(3)
            .collect();
        let mut buf = Vec::new();
        write_pairs(&mut buf, &spec, &grid, Precision::F64, &pairs).unwrap();
        let (hdr, back) = read_pairs(buf.as_slice()).unwrap();
        assert_eq!((hdr.spec, hdr.grid, hdr.count), (spec, grid.shape(), 3));
        for (a, b) in pairs.iter().zip(&back) {
            assert_eq!(a.theta_true, b.theta_true);
            assert_eq!(a.input, b.input);
            assert_eq!(a.outlier_mask, b.outlier_mask);
        }
        let mut buf = Vec::new();
        write_pairs(&mut buf, &spec, &grid, Precision::F32, &pairs).unwrap();
        assert_eq!(&buf[..4], b"PRGN");
        let (hdr, back) = read_pairs(buf.as_slice()).unwrap();
        assert_eq!(hdr.precision, Precision::F32);
        assert!(back[0].input.values().iter().zip(pairs[0].input.values()).all(|(a, b)| (*a as f32) == (*b as f32)));
        assert!(read_pairs(&buf[..buf.len() - 1]).is_err());
    }
}
