use polyreg_core::poly::{build_design_matrix, decode, decode_adjoint, design_block};
use polyreg_core::{CoefficientVector, DomainGrid, FixedDecoder, ModelSpec};
use proptest::prelude::*;

fn specs() -> impl Strategy<Value = (ModelSpec, DomainGrid)> {
    prop_oneof![
        (1usize..7, 8usize..40).prop_map(|(deg, n)| (ModelSpec::scalar(deg), DomainGrid::line(n).unwrap())),
        (2usize..7, 2usize..7).prop_map(|(h, w)| (ModelSpec::quadratic_motion(), DomainGrid::lattice(h, w).unwrap())),
    ]
}

fn coeffs(m: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-10.0f64..10.0, m)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

proptest! {
    #[test]
    fn decode_is_linear((spec, grid) in specs(), seed in any::<u64>(), a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let m = spec.num_coeffs();
        let mk = |k: u64| -> Vec<f64> { (0..m).map(|i| (((seed ^ k).wrapping_mul(2654435761) >> (i % 32)) % 1000) as f64 / 100.0 - 5.0).collect() };
        let (t1, t2) = (mk(1), mk(2));
        let mix: Vec<f64> = t1.iter().zip(&t2).map(|(x, y)| a * x + b * y).collect();
        let lhs = decode(&spec, &mix.into(), &grid).unwrap();
        let d1 = decode(&spec, &t1.into(), &grid).unwrap();
        let d2 = decode(&spec, &t2.into(), &grid).unwrap();
        for ((l, x), y) in lhs.values().iter().zip(d1.values()).zip(d2.values()) {
            let r = a * x + b * y;
            prop_assert!((l - r).abs() <= 1e-12 * (1.0 + r.abs()));
        }
    }

    #[test]
    fn decode_matches_per_point_blocks((spec, grid) in specs(), theta in coeffs(12)) {
        let theta = &theta[..spec.num_coeffs()];
        let field = decode(&spec, &theta.to_vec().into(), &grid).unwrap();
        let (r, m) = (spec.range_dim(), spec.num_coeffs());
        for i in 0..grid.len() {
            let block = design_block(&spec, grid.point(i)).unwrap();
            for c in 0..r {
                prop_assert_eq!(field.point(i)[c], dot(&block[c * m..(c + 1) * m], theta));
            }
        }
    }

    #[test]
    fn adjoint_is_transpose((spec, grid) in specs(), theta in coeffs(12), gseed in any::<u64>()) {
        let theta = theta[..spec.num_coeffs()].to_vec();
        let n = spec.range_dim() * grid.len();
        let g: Vec<f64> = (0..n).map(|i| ((gseed.rotate_left(i as u32 % 64) % 2001) as f64 - 1000.0) / 250.0).collect();
        let fwd = decode(&spec, &theta.clone().into(), &grid).unwrap();
        let adj = decode_adjoint(&spec, &grid, &g).unwrap();
        let (lhs, rhs) = (dot(fwd.values(), &g), dot(&theta, &adj));
        prop_assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + lhs.abs()));
    }
}

#[test]
fn stacked_matrix_blocks_match_design_block() {
    let spec = ModelSpec::quadratic_motion();
    let grid = DomainGrid::lattice(2, 2).unwrap();
    let dm = build_design_matrix(&spec, &grid).unwrap();
    assert_eq!((dm.rows(), dm.cols()), (8, 12));
    for i in 0..4 {
        assert_eq!(dm.block(i), design_block(&spec, grid.point(i)).unwrap().as_slice());
    }
}

#[test]
fn adjoint_matches_central_differences() {
    let spec = ModelSpec::scalar(4);
    let grid = DomainGrid::line(16).unwrap();
    let g: Vec<f64> = (0..16).map(|i| (i as f64 * 0.37).sin()).collect();
    let adj = decode_adjoint(&spec, &grid, &g).unwrap();
    let theta = vec![0.3, -1.2, 0.5, 2.0, -0.7];
    let objective = |t: &[f64]| dot(decode(&spec, &t.to_vec().into(), &grid).unwrap().values(), &g);
    let h = 1e-5;
    for k in 0..5 {
        let (mut p, mut q) = (theta.clone(), theta.clone());
        p[k] += h;
        q[k] -= h;
        let fd = (objective(&p) - objective(&q)) / (2.0 * h);
        assert!((fd - adj[k]).abs() <= 1e-6 * adj[k].abs().max(1e-8), "coef {k}: {fd} vs {}", adj[k]);
    }
}

#[test]
fn single_point_adjoint_is_block_transpose() {
    let spec = ModelSpec::quadratic_motion();
    let grid = DomainGrid::from_points(2, vec![0.25, -0.5]).unwrap();
    let block = design_block(&spec, grid.point(0)).unwrap();
    let adj = decode_adjoint(&spec, &grid, &[2.0, -3.0]).unwrap();
    for k in 0..12 {
        assert_eq!(adj[k], 2.0 * block[k] - 3.0 * block[12 + k]);
    }
}

#[test]
fn decoder_has_no_parameters_and_rejects_bad_lengths() {
    let dec = FixedDecoder::new(ModelSpec::scalar(4), DomainGrid::line(8).unwrap()).unwrap();
    assert_eq!(dec.trainable_parameter_count(), 0);
    assert!(dec.decode(&CoefficientVector(vec![0.0; 4])).is_err());
    assert!(dec.adjoint(&[0.0; 7]).is_err());
    assert!(dec.adjoint(&[0.0; 8]).unwrap().iter().all(|&v| v == 0.0));
}
