mod common;

use common::{gaussian, uniform};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use scatter_breakdown::breakdown::{self, bias, bias_between};
use scatter_breakdown::contamination::ContaminationSpec;
use scatter_breakdown::estimator::{solve_scatter, verify_fixed_point, Init, SolverOptions};
use scatter_breakdown::geometry::{self, check_existence};
use scatter_breakdown::model::{Dataset, Status, WeightSpec};

fn solver() -> SolverOptions {
    SolverOptions::default().with_max_iter(20_000)
}

#[test]
fn seeded_gaussian_converges() {
    let x = gaussian(40, 2, 7);
    let spec = WeightSpec::t(2, 2.0).unwrap();
    let est = solve_scatter(&x, &spec, &SolverOptions::default()).unwrap();
    assert_eq!(est.status, Status::Converged);
    let (res, gap) = verify_fixed_point(&est.v, &x, &spec).unwrap();
    assert!(res < 1e-9 && gap < 1e-8, "res={res} gap={gap}");
    assert_eq!(est.residual, res);
}

#[test]
fn center_mass_beyond_half_is_nonexistent() {
    let x = gaussian(30, 2, 3);
    let spec = WeightSpec::t(2, 2.0).unwrap();
    let y = scatter_breakdown::contamination::generate(&ContaminationSpec::center_mass(31), &x).unwrap();
    let z = x.union(&y).unwrap();
    let est = solve_scatter(&z, &spec, &SolverOptions::default()).unwrap();
    assert_eq!(est.status, Status::Nonexistent);
    let report = est.existence.expect("existence consulted");
    assert!(!report.necessary);

    let y = scatter_breakdown::contamination::generate(&ContaminationSpec::center_mass(61), &x).unwrap();
    let b = bias(&x, &x.union(&y).unwrap(), &spec, &SolverOptions::default()).unwrap();
    assert!(b.is_infinite());
}

/// Bias from two independent solves and explicit inverses.
#[test]
fn bias_matches_two_solve_evaluation() {
    let x = Dataset::from_rows(
        &[
            vec![1.0, 0.2],
            vec![-0.7, 0.9],
            vec![0.3, -1.1],
            vec![-1.2, -0.4],
            vec![0.8, 1.3],
            vec![0.1, -0.6],
        ],
        &[0.0, 0.0],
    )
    .unwrap();
    let y = Dataset::from_rows(&[vec![2.0, 1.5]], &[0.0, 0.0]).unwrap();
    let z = x.union(&y).unwrap();
    let spec = WeightSpec::t(2, 2.0).unwrap();
    let opts = SolverOptions::default();
    let vx = solve_scatter(&x, &spec, &opts).unwrap().v.to_matrix();
    let vz = solve_scatter(&z, &spec, &opts).unwrap().v.to_matrix();
    let expected = (&vz * vx.clone().try_inverse().unwrap()).trace() + (&vx * vz.try_inverse().unwrap()).trace();
    let got = bias(&x, &z, &spec, &opts).unwrap();
    assert!((got - expected).abs() < 1e-10 * expected, "{got} vs {expected}");
    assert_eq!(bias(&x, &x, &spec, &opts).unwrap(), 4.0);
}

fn bisection_scale(data: &[f64], spec: &WeightSpec) -> f64 {
    // ave psi(x^2 / v) is decreasing in v; find where it equals 1
    let f = |v: f64| data.iter().map(|x| spec.psi(x * x / v)).sum::<f64>() / data.len() as f64 - 1.0;
    let (mut lo, mut hi) = (1e-12f64, 1e12f64);
    for _ in 0..200 {
        let mid = (lo * hi).sqrt();
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    (lo * hi).sqrt()
}

#[test]
fn univariate_matches_bisection() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for case in 0..50 {
        let n = rng.random_range(3..30);
        let data: Vec<f64> = (0..n).map(|_| uniform(&mut rng, -3.0, 3.0)).collect();
        let spec = if case % 2 == 0 {
            WeightSpec::t(1, uniform(&mut rng, 0.5, 5.0)).unwrap()
        } else {
            WeightSpec::huber(1, uniform(&mut rng, 1.0, 2.0), uniform(&mut rng, 1.0, 3.0)).unwrap()
        };
        let x = Dataset::from_rows(&data.iter().map(|v| vec![*v]).collect::<Vec<_>>(), &[0.0]).unwrap();
        let est = solve_scatter(&x, &spec, &solver()).unwrap();
        assert_eq!(est.status, Status::Converged, "case {case}");
        let v = est.v.get(0, 0);
        let oracle = bisection_scale(&data, &spec);
        assert!((v - oracle).abs() <= 1e-9 * oracle, "case {case}: {v} vs {oracle}");
    }
}

/// Minimum over `p`-subsets of the smallest eigenvalue of the summed outer
/// products of unit directions.
fn rho_brute(data: &Dataset) -> f64 {
    let p = data.dim();
    let dirs: Vec<DVector<f64>> = data
        .centered()
        .into_iter()
        .filter(|z| z.norm() > 0.0)
        .map(|z| z.normalize())
        .collect();
    let mut best = f64::INFINITY;
    let mut idx: Vec<usize> = Vec::new();
    fn rec(dirs: &[DVector<f64>], p: usize, start: usize, idx: &mut Vec<usize>, best: &mut f64) {
        if idx.len() == p {
            let mut m = DMatrix::zeros(p, p);
            for &i in idx.iter() {
                m += &dirs[i] * dirs[i].transpose();
            }
            *best = best.min(m.symmetric_eigenvalues().min().max(0.0));
            return;
        }
        for i in start..dirs.len() {
            idx.push(i);
            rec(dirs, p, i + 1, idx, best);
            idx.pop();
        }
    }
    rec(&dirs, p, 0, &mut idx, &mut best);
    best
}

fn small_instance(rng: &mut ChaCha8Rng, p: usize, total: usize) -> Dataset {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    while rows.len() < total {
        let kind = rng.random_range(0..4);
        if kind == 0 && !rows.is_empty() {
            // exact replicate direction
            let j = rng.random_range(0..rows.len());
            rows.push(rows[j].iter().map(|v| v * 2.0).collect());
        } else if kind == 1 && rows.len() >= 2 && p == 3 {
            // exactly in the plane of two earlier points
            let (a, b) = (rows[0].clone(), rows[1].clone());
            rows.push(a.iter().zip(&b).map(|(x, y)| x + y).collect());
        } else {
            rows.push((0..p).map(|_| uniform(rng, -2.0, 2.0)).collect());
        }
    }
    Dataset::from_rows(&rows, &vec![0.0; p]).unwrap()
}

#[test]
fn rho_matches_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for p in 2..=3 {
        for total in p..=8 {
            for _ in 0..10 {
                let d = small_instance(&mut rng, p, total);
                let got = geometry::rho_m(&d).unwrap();
                let want = rho_brute(&d);
                assert!((got - want).abs() < 1e-12, "p={p} n={total}: {got} vs {want}");
            }
        }
    }
}

fn subset_in_general_position(pts: &[DVector<f64>], p: usize) -> bool {
    if pts.len() < p {
        return false;
    }
    let mut ok = true;
    let mut idx = Vec::new();
    fn rec(pts: &[DVector<f64>], p: usize, start: usize, idx: &mut Vec<usize>, ok: &mut bool) {
        if !*ok {
            return;
        }
        if idx.len() == p {
            let m = DMatrix::from_columns(&idx.iter().map(|&i| pts[i].normalize()).collect::<Vec<_>>());
            if m.determinant().abs() < 1e-8 {
                *ok = false;
            }
            return;
        }
        for i in start..pts.len() {
            idx.push(i);
            rec(pts, p, i + 1, idx, ok);
            idx.pop();
        }
    }
    rec(pts, p, 0, &mut idx, &mut ok);
    ok
}

fn n0_brute(d: &Dataset) -> usize {
    let p = d.dim();
    let pts: Vec<DVector<f64>> = d.centered().into_iter().filter(|z| z.norm() > 0.0).collect();
    let n = pts.len();
    let mut best = 0;
    for mask in 1u32..(1 << n) {
        let size = mask.count_ones() as usize;
        if size <= best {
            continue;
        }
        let subset: Vec<DVector<f64>> = (0..n).filter(|i| mask & (1 << i) != 0).map(|i| pts[i].clone()).collect();
        if subset_in_general_position(&subset, p) {
            best = size;
        }
    }
    if best < p {
        0
    } else {
        best
    }
}

#[test]
fn n0_matches_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for p in 2..=3 {
        for total in p..=9 {
            for _ in 0..8 {
                let d = small_instance(&mut rng, p, total);
                assert_eq!(geometry::n0_general_position(&d).unwrap(), n0_brute(&d), "p={p} n={total}");
            }
        }
    }
}

#[test]
fn converged_implies_necessary_condition() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let spec = WeightSpec::t(2, 2.0).unwrap();
    for _ in 0..20 {
        let x = gaussian(12, 2, rng.random());
        let m = rng.random_range(1..20);
        let y = scatter_breakdown::contamination::generate(
            &ContaminationSpec::coplanar_point_mass(&[uniform(&mut rng, -1.0, 1.0), 1.0], uniform(&mut rng, 0.1, 10.0), m),
            &x,
        )
        .unwrap();
        let z = x.union(&y).unwrap();
        let est = solve_scatter(&z, &spec, &solver()).unwrap();
        if est.status == Status::Converged {
            assert!(check_existence(&z, &spec).unwrap().necessary);
        }
    }
}

#[test]
fn sufficient_margin_rows_never_nonexistent() {
    let x = gaussian(20, 2, 4);
    let spec = WeightSpec::t(2, 2.0).unwrap();
    let opts = solver();
    let templates = [
        ContaminationSpec::center_mass(1),
        ContaminationSpec::coplanar_point_mass(&[1.0, 0.0], 1.0, 1),
        ContaminationSpec::general_position_cloud(1.0, 2, 1),
        ContaminationSpec::coplanar_bounded(vec![], 1.0, 100.0, 3, 1),
    ];
    for t in &templates {
        let sweep = breakdown::run_sweep(&x, &spec, t, &breakdown::default_m_grid(20), &[1e2, 1e6], &[0], &opts).unwrap();
        for row in &sweep.rows {
            if breakdown::sufficient_existence_margin(2, spec.k(), 20, row.m, row.center_in_z) {
                assert_ne!(row.status, Status::Nonexistent, "{t:?} m={}", row.m);
            }
        }
    }
}

#[test]
fn inits_agree() {
    let spec = WeightSpec::t(3, 1.5).unwrap();
    for seed in 0..5 {
        let x = gaussian(25, 3, seed);
        let a = solve_scatter(&x, &spec, &SolverOptions::default()).unwrap();
        let b = solve_scatter(&x, &spec, &SolverOptions::default().with_init(Init::SecondMoment)).unwrap();
        assert_eq!((a.status, b.status), (Status::Converged, Status::Converged));
        let rel = (a.v.to_matrix() - b.v.to_matrix()).norm() / a.v.frobenius_norm();
        assert!(rel < 1e-7, "{rel}");
        assert!(bias_between(&a.v, &b.v).unwrap() - 6.0 < 1e-12);
    }
}
