use smoothcert::config::{DatasetKind, MethodTag, Profile, RunConfig};
use smoothcert::harness::{build_curve, compare_methods, radius_grid, run_certification, strictly_dominates, CertRecord, MethodCurve};
use smoothcert_core::nalgebra::{DMatrix, DVector};
use smoothcert_core::stats::std_normal_quantile;
use smoothcert_core::{Activation, Certificate, LabeledDataset, Method, Mlp, Sample, SmoothingSpec};

/// Zero weights and a bias favouring `class` by a wide margin: every input,
/// noisy or not, goes to `class`.
fn constant_mlp(d: usize, k: usize, class: usize) -> Mlp {
    let mut b = DVector::zeros(k);
    b[class] = 50.0;
    Mlp::from_parts(vec![d, k], vec![DMatrix::zeros(k, d)], vec![b], Activation::Tanh).unwrap()
}

fn quick(kind: DatasetKind) -> RunConfig {
    let mut cfg = RunConfig::defaults(Profile::Desk, kind);
    cfg.confidence.n = 2000;
    cfg.ddrs.iter_grid = vec![20, 40];
    cfg.ddrs.n_eval = 400;
    cfg.ancer.iterations = 10;
    cfg.rddrs.iterations = 20;
    cfg.rddrs.n_samples = 300;
    cfg
}

#[test]
fn constant_classifier_certifies_every_input_at_the_bound_limit() {
    let d = 3;
    let net = constant_mlp(d, 4, 1);
    let samples = (0..6).map(|i| Sample { x: vec![i as f64 * 0.3; d], label: if i < 4 { 1 } else { 2 } }).collect();
    let test = LabeledDataset::new("const", d, 4, samples).unwrap();
    let mut cfg = quick(DatasetKind::Toy2d);
    cfg.subset = 6;
    let res = run_certification(&cfg, &net, &test).unwrap();
    assert_eq!(res.len(), 6);

    let pa = cfg.confidence.alpha.powf(1.0 / cfg.confidence.n as f64);
    let gap = 2.0 * std_normal_quantile(pa).unwrap();
    for r in &res {
        assert_eq!(r.records.len(), 4);
        for rec in &r.records {
            assert_eq!(rec.cert.predicted_class, Some(1), "{:?}", rec.cert.method);
            assert!((rec.cert.pa_lower - pa).abs() < 1e-12);
            assert!((rec.cert.radius_gap - gap).abs() < 1e-9);
        }
        // RS keeps the training σ
        let rs = r.records.iter().find(|x| x.cert.method == Method::Rs).unwrap();
        assert!((rs.cert.proxy_radius - 0.5 * gap * cfg.sigma).abs() < 1e-9);
    }

    let grid = radius_grid(6.0, 0.05).unwrap();
    let rs: Vec<CertRecord> = res.iter().flat_map(|r| r.records.iter().filter(|x| x.cert.method == Method::Rs).cloned()).collect();
    let curve = build_curve(&rs, &grid, cfg.sigma).unwrap();
    // four of six inputs are labelled 1, all certified at the same radius
    let limit = 0.5 * gap * cfg.sigma;
    for p in &curve {
        let want = if p.radius <= limit { 4.0 / 6.0 } else { 0.0 };
        assert_eq!(p.certified_accuracy, want, "radius {}", p.radius);
    }
}

#[test]
fn method_subset_is_respected_in_canonical_order() {
    let net = constant_mlp(2, 3, 0);
    let test = LabeledDataset::new("t", 2, 3, vec![Sample { x: vec![0.0, 0.0], label: 0 }]).unwrap();
    let mut cfg = quick(DatasetKind::Toy2d);
    cfg.methods = vec![MethodTag::Rddrs, MethodTag::Rs];
    let res = run_certification(&cfg, &net, &test).unwrap();
    let got: Vec<Method> = res[0].records.iter().map(|r| r.cert.method).collect();
    assert_eq!(got, vec![Method::Rs, Method::Rddrs]);
}

fn fake(method: Method, proxies: &[Option<f64>]) -> Vec<CertRecord> {
    proxies
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let mut cert = Certificate::abstain(i, method, SmoothingSpec::Isotropic(1.0), None);
            if let Some(p) = p {
                cert.predicted_class = Some(0);
                cert.proxy_radius = *p;
                cert.radius_gap = 2.0 * p;
            }
            CertRecord { cert, true_label: 0, opt: None, trace: Vec::new() }
        })
        .collect()
}

#[test]
fn curves_from_fixture_certificates() {
    let grid = radius_grid(3.0, 0.5).unwrap();
    assert_eq!(grid, vec![0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0]);
    let a = MethodCurve::new(&fake(Method::Rddrs, &[Some(2.2), Some(1.6), None, Some(0.4)]), &grid, 0.25).unwrap();
    let b = MethodCurve::new(&fake(Method::Ancer, &[Some(1.2), Some(1.6), None, Some(0.4)]), &grid, 0.25).unwrap();
    let acc: Vec<f64> = a.points.iter().map(|p| p.certified_accuracy).collect();
    assert_eq!(acc, vec![0.75, 0.5, 0.5, 0.5, 0.25, 0.0, 0.0]);
    assert!(strictly_dominates(&a, &b, 1.5));
    assert!(!strictly_dominates(&b, &a, 1.5));
    // equal curves do not strictly dominate each other
    assert!(!strictly_dominates(&b, &b, 0.0));

    let cmp = compare_methods(&[a, b]).unwrap();
    let sa = cmp.summary(Method::Rddrs).unwrap();
    assert!((sa.mean_proxy - (2.2 + 1.6 + 0.4) / 4.0).abs() < 1e-12);
    assert_eq!(sa.clean_accuracy, 0.75);
    assert_eq!(cmp.dominance(Method::Rddrs, Method::Ancer), Some(1.0));
}

#[test]
fn curves_on_disjoint_grids_do_not_compare() {
    let a = MethodCurve::new(&fake(Method::Rs, &[Some(1.0)]), &[0.1, 0.2], 0.25).unwrap();
    let b = MethodCurve::new(&fake(Method::Ddrs, &[Some(1.0)]), &[0.15, 0.25], 0.25).unwrap();
    assert_eq!(compare_methods(&[a, b]).unwrap_err().exit_code(), 2);
}
