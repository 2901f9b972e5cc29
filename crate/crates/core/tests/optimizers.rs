use smoothcert_core::analytic::{ProbitClassifier, RadialClassifier};
use smoothcert_core::nalgebra::{DMatrix, DVector};
use smoothcert_core::optimizers::{ancer_optimize, ddrs_optimize, rddrs_optimize, AncerConfig, DdrsConfig, InitialCovariance, RddrsConfig};
use smoothcert_core::sampling::{random_orthogonal, stream_rng};
use smoothcert_core::SmoothingSpec;

fn small_ddrs(frame: Option<DMatrix<f64>>) -> DdrsConfig {
    DdrsConfig { iter_grid: vec![100, 200, 300], noise_frame: frame, ..DdrsConfig::paper(0.25) }
}

fn small_rddrs() -> RddrsConfig {
    RddrsConfig { lr_grid: vec![0.05, 0.25], iterations: 60, n_samples: 500, ..RddrsConfig::desk() }
}

fn probit(d: usize) -> ProbitClassifier {
    let mut w = vec![0.0; d];
    w[0] = 1.0;
    ProbitClassifier { direction: w, boundary: 0.6, softness: 0.1 }
}

#[test]
fn chain_respects_floor_and_enclosure() {
    let cases: Vec<(Box<dyn smoothcert_core::SoftClassifier>, Vec<f64>)> = vec![
        (Box::new(probit(3)), vec![0.0, 0.2, -0.1]),
        (Box::new(probit(5)), vec![0.1; 5]),
        (Box::new(RadialClassifier { dim: 4, radius: 1.0, softness: 0.2 }), vec![0.2, 0.0, 0.1, 0.0]),
    ];
    for (i, (f, x)) in cases.iter().enumerate() {
        let d = x.len();
        let dd = ddrs_optimize(f.as_ref(), x, &small_ddrs(None), i as u64).unwrap();
        let s = dd.sigma_star;
        assert!(s > 0.0);
        assert_eq!(dd.spec, SmoothingSpec::Isotropic(s));

        let an = ancer_optimize(f.as_ref(), x, &AncerConfig { iterations: 40, ..AncerConfig::paper() }, &dd, 10 + i as u64).unwrap();
        let SmoothingSpec::Diagonal(theta) = &an.spec else { panic!("ANCER returns a diagonal") };
        assert!(theta.iter().all(|&t| t >= s), "theta {theta:?} below {s}");

        for init in [InitialCovariance::FloorIdentity, InitialCovariance::From(an.spec.clone())] {
            let cfg = RddrsConfig { init, ..small_rddrs() };
            let rd = rddrs_optimize(f.as_ref(), x, &cfg, &dd, 20 + i as u64).unwrap();
            assert!(rd.spec.lambda_min(d).unwrap() >= s, "case {i}");
            if !rd.fallback {
                assert!(rd.enclosure >= rd.r_iso_star, "case {i}: {} < {}", rd.enclosure, rd.r_iso_star);
            }
        }
    }
}

#[test]
fn rotated_problem_in_rotated_frame_gives_rotated_region() {
    let d = 3;
    let q = random_orthogonal(&mut stream_rng(77, 0), d);
    let f = probit(d);
    let x = DVector::from_vec(vec![0.0, 0.3, -0.2]);
    let wq = &q * DVector::from_vec(f.direction.clone());
    let fq = ProbitClassifier { direction: wq.iter().copied().collect(), ..f.clone() };
    let xq = &q * &x;
    let x: Vec<f64> = x.iter().copied().collect();
    let xq: Vec<f64> = xq.iter().copied().collect();

    let dd = ddrs_optimize(&f, &x, &small_ddrs(None), 5).unwrap();
    let ddq = ddrs_optimize(&fq, &xq, &small_ddrs(Some(q.clone())), 5).unwrap();
    assert!((dd.sigma_star - ddq.sigma_star).abs() <= 1e-9 * dd.sigma_star);

    let rd = rddrs_optimize(&f, &x, &small_rddrs(), &dd, 6).unwrap();
    let rdq = rddrs_optimize(&fq, &xq, &small_rddrs(), &ddq, 6).unwrap();
    assert!(!rd.fallback && !rdq.fallback, "the comparison needs a non-trivial region");
    let c = rd.spec.sqrt_cov_matrix(d).unwrap();
    let cq = rdq.spec.sqrt_cov_matrix(d).unwrap();
    let err = (&cq - &q * &c * q.transpose()).norm() / c.norm();
    assert!(err <= 1e-6, "relative error {err}");
}

#[test]
fn frame_must_be_orthogonal() {
    let f = probit(2);
    let bad = DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 1.0]);
    assert!(ddrs_optimize(&f, &[0.0, 0.0], &small_ddrs(Some(bad)), 1).is_err());
}
