mod common;

use common::gaussian;
use scatter_breakdown::contamination::{self, ContaminationSpec};
use scatter_breakdown::estimator::{solve_scatter, SolverOptions};
use scatter_breakdown::model::{Status, WeightSpec};
use scatter_breakdown::spectral::{self, coplanarity_report, PlaneSource, ReportOptions};

fn solver() -> SolverOptions {
    SolverOptions::default().with_max_iter(20_000).with_cond_limit(1e14)
}

#[test]
fn report_flags_far_point_mass() {
    let x = gaussian(30, 2, 7);
    let y = contamination::generate(&ContaminationSpec::coplanar_point_mass(&[1.0, 0.0], 1e6, 15), &x).unwrap();
    let z = x.union(&y).unwrap();
    let spec = WeightSpec::t(2, 2.0).unwrap();
    let opts = ReportOptions { solver: solver(), ..ReportOptions::default() };
    let report = coplanarity_report(&z, &spec, &opts);
    assert_eq!(report.status, Status::Converged);
    assert_eq!(report.plane_source, Some(PlaneSource::Inflated));
    assert_eq!(report.suspects, (30..45).collect::<Vec<_>>());
    assert!(report.plane[0][0].abs() > 0.999);
}

#[test]
fn clean_data_has_no_suspects() {
    let x = gaussian(40, 3, 1);
    let report = coplanarity_report(&x, &WeightSpec::t(3, 3.0).unwrap(), &ReportOptions::default());
    assert_eq!(report.status, Status::Converged);
    assert!(report.suspects.is_empty());
    assert!(report.plane.is_empty());
}

#[test]
fn near_replicates_collapse_p_minus_one_directions() {
    let x = gaussian(12, 2, 7);
    let spec = WeightSpec::t(2, 2.0).unwrap();
    let y = contamination::generate(&ContaminationSpec::near_point_replicates(0, 1e-4, 0, 40), &x).unwrap();
    let z = x.union(&y).unwrap();
    let est = solve_scatter(&z, &spec, &solver()).unwrap();
    assert_eq!(est.status, Status::Converged);
    let eig = spectral::eigen_report(&est.v, spectral::DEFAULT_COLLAPSE_RATIO);
    assert_eq!(eig.collapse_indices.len(), 1);
    // the surviving direction is the anchor's
    let anchor = z.centered()[0].normalize();
    let top = nalgebra::DVector::from_column_slice(&eig.eigenvectors[0]);
    assert!(top.dot(&anchor).abs() > 0.999);
}

#[test]
fn report_finds_line_of_near_replicates() {
    let x = gaussian(12, 2, 7);
    let spec = WeightSpec::t(2, 2.0).unwrap();
    let y = contamination::generate(&ContaminationSpec::near_point_replicates(0, 1e-3, 0, 40), &x).unwrap();
    let z = x.union(&y).unwrap();
    let opts = ReportOptions { solver: solver(), collapse_ratio: 1e-5, ..ReportOptions::default() };
    let report = coplanarity_report(&z, &spec, &opts);
    // in two dimensions the inflated and range planes are the same line
    assert_eq!(report.plane.len(), 1);
    let anchor = z.centered()[0].normalize();
    assert!(nalgebra::DVector::from_column_slice(&report.plane[0]).dot(&anchor).abs() > 0.999);
    assert!(report.suspects.contains(&0));
    assert!(report.suspects.iter().filter(|&&i| i >= 12).count() >= 35, "{:?}", report.suspects);
}
