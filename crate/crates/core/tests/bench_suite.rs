use polyreg_core::bench::{emit_report, read_report, run_suite, BenchSuite};
use polyreg_core::{Classical, DomainGrid, Error, IrwlsConfig, ModelSpec, RansacConfig, Regressor};

fn scalar_suite(trials: usize) -> BenchSuite {
    let mut s = BenchSuite::new(ModelSpec::scalar(4)).unwrap();
    s.trials = trials;
    s.seed = 7;
    s
}

fn classical(spec: ModelSpec, sigma: f64) -> Vec<Classical> {
    vec![
        Classical::lse(spec),
        Classical::ransac(spec, RansacConfig::for_noise(&spec, sigma)),
        Classical::irwls(spec, IrwlsConfig::default()),
    ]
}

#[test]
fn lse_is_exact_without_noise_or_outliers() {
    let mut s = scalar_suite(5);
    s.ratios = vec![0.0];
    s.noise_sigma = 0.0;
    let lse = Classical::lse(s.spec);
    let r = run_suite(&s, &[&lse]).unwrap();
    assert!(r.cell(0, 0).mean < 1e-20);
}

#[test]
fn runs_are_bit_reproducible_and_thread_independent() {
    let s = scalar_suite(20);
    let methods = classical(s.spec, s.noise_sigma);
    let refs: Vec<&dyn Regressor> = methods.iter().map(|m| m as &dyn Regressor).collect();
    let a = run_suite(&s, &refs).unwrap();
    let mut single = s.clone();
    single.jobs = 1;
    let b = run_suite(&single, &refs).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.to_csv(), b.to_csv());
}

#[test]
fn lse_row_grows_with_contamination() {
    let s = scalar_suite(200);
    let lse = Classical::lse(s.spec);
    let r = run_suite(&s, &[&lse]).unwrap();
    let means: Vec<f64> = (0..s.ratios.len()).map(|k| r.cell(0, k).mean).collect();
    assert!(means.windows(2).all(|w| w[0] <= w[1]), "{means:?}");
}

#[test]
fn report_round_trips_and_marks_best() {
    let s = scalar_suite(10);
    let methods = classical(s.spec, s.noise_sigma);
    let refs: Vec<&dyn Regressor> = methods.iter().map(|m| m as &dyn Regressor).collect();
    let r = run_suite(&s, &refs).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bench.csv");
    emit_report(&r, &path).unwrap();
    let back = read_report(&path).unwrap();
    assert_eq!(back.len(), r.cells.len());
    for (a, b) in back.iter().zip(&r.cells) {
        assert_eq!((&a.method, a.ratio, a.mean, a.std, a.trials), (&b.method, b.ratio, b.mean, b.std, b.trials));
    }
    let best = r.best_per_column();
    for k in 0..s.ratios.len() {
        let argmin = (0..3).min_by(|&a, &b| r.cell(a, k).mean.total_cmp(&r.cell(b, k).mean));
        assert_eq!(best[k], argmin);
    }
    let table = std::fs::read_to_string(path.with_extension("txt")).unwrap();
    assert!(table.contains("Average") && table.contains('*'));
}

#[test]
fn empty_suite_gives_header_only_csv() {
    let s = scalar_suite(1);
    let r = run_suite(&s, &[]).unwrap();
    assert_eq!(r.to_csv(), "method,ratio,mean,std,trials\n");
}

#[test]
fn incompatible_methods_are_config_errors() {
    let s = scalar_suite(1);
    let wrong = Classical::lse(ModelSpec::quadratic_motion());
    assert!(matches!(run_suite(&s, &[&wrong]), Err(Error::Config(_))));

    struct Bound;
    impl Regressor for Bound {
        fn name(&self) -> String {
            "bound".into()
        }
        fn spec(&self) -> ModelSpec {
            ModelSpec::scalar(4)
        }
        fn native_grid(&self) -> Option<polyreg_core::GridShape> {
            Some(DomainGrid::line(32).unwrap().shape())
        }
        fn regress(&self, _: &DomainGrid, _: &polyreg_core::RangeField) -> polyreg_core::Result<polyreg_core::CoefficientVector> {
            unreachable!()
        }
    }
    assert!(matches!(run_suite(&s, &[&Bound]), Err(Error::Config(_))));
}

#[test]
fn failures_are_counted() {
    struct Failing;
    impl Regressor for Failing {
        fn name(&self) -> String {
            "failing".into()
        }
        fn spec(&self) -> ModelSpec {
            ModelSpec::scalar(4)
        }
        fn regress(&self, _: &DomainGrid, _: &polyreg_core::RangeField) -> polyreg_core::Result<polyreg_core::CoefficientVector> {
            Err(Error::EstimationFailed("always".into()))
        }
    }
    let r = run_suite(&scalar_suite(3), &[&Failing]).unwrap();
    assert!(r.any_failures());
    assert_eq!(r.cell(0, 0).failures, 3);
}
