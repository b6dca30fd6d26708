//! Eigen-structure of `V` under coplanar contamination.
//!
//! Two curves follow a contaminated estimate along a sequence of samples: a
//! point mass running off to infinity along `theta`, which drives
//! `theta' V^-1 theta` to zero, and replicates shrinking onto a good point
//! `x1`, which drives `V` toward the rank-one matrix along `x1`. The report
//! turns the same signatures into a list of suspected contaminants.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::Serialize;

use crate::contamination::{self, ContaminationSpec};
use crate::error::{Error, Result};
use crate::estimator::{solve_scatter, SolverOptions};
use crate::geometry::{self, ExistenceReport};
use crate::model::{Dataset, ScatterMatrix, Status, WeightSpec};

pub const DEFAULT_COLLAPSE_RATIO: f64 = 1e-6;
pub const DEFAULT_ANGLE_TOL_DEG: f64 = 5.0;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EigenReport {
    /// Descending.
    pub eigenvalues: Vec<f64>,
    /// Unit eigenvectors, matched to `eigenvalues`.
    pub eigenvectors: Vec<Vec<f64>>,
    pub condition_number: f64,
    /// Indices of eigenvalues whose ratio to the largest is below the threshold.
    pub collapse_indices: Vec<usize>,
    pub collapse_directions: Vec<Vec<f64>>,
    /// `||V - Q L Q'||_F / ||V||_F`.
    pub reconstruction_error: f64,
}

pub fn eigen_report(v: &ScatterMatrix, collapse_ratio: f64) -> EigenReport {
    eigen_report_of(&v.to_matrix(), collapse_ratio)
}

fn eigen_report_of(m: &DMatrix<f64>, collapse_ratio: f64) -> EigenReport {
    let eig = SymmetricEigen::new(m.clone());
    let mut order: Vec<usize> = (0..m.nrows()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let eigenvalues: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let eigenvectors: Vec<Vec<f64>> = order
        .iter()
        .map(|&i| eig.eigenvectors.column(i).iter().copied().collect())
        .collect();
    let lmax = eigenvalues.first().copied().unwrap_or(0.0);
    let lmin = eigenvalues.last().copied().unwrap_or(0.0);
    let condition_number = if lmin > 0.0 { lmax / lmin } else { f64::INFINITY };
    let collapse_indices: Vec<usize> = eigenvalues
        .iter()
        .enumerate()
        .filter(|(_, l)| !(**l / lmax >= collapse_ratio))
        .map(|(i, _)| i)
        .collect();
    let collapse_directions = collapse_indices.iter().map(|&i| eigenvectors[i].clone()).collect();
    let rebuilt = &eig.eigenvectors * DMatrix::from_diagonal(&eig.eigenvalues) * eig.eigenvectors.transpose();
    let norm = m.norm();
    let reconstruction_error = if norm > 0.0 { (m - rebuilt).norm() / norm } else { 0.0 };
    EigenReport {
        eigenvalues,
        eigenvectors,
        condition_number,
        collapse_indices,
        collapse_directions,
        reconstruction_error,
    }
}

/// Contamination window of a curve, and whether `eps_m` falls inside it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Window {
    pub lower: f64,
    pub upper: f64,
    pub epsilon: f64,
    pub upper_enforced: bool,
    pub window_violation: bool,
}

fn check_common(p: usize, k: f64, n: usize) -> Result<()> {
    if p < 2 {
        return Err(Error::BadParams("spectral curves need p >= 2".into()));
    }
    if !(k > p as f64) {
        return Err(Error::BadParams(format!("need K > p, got K = {k}")));
    }
    if n < 3 {
        return Err(Error::BadParams("need at least three good points".into()));
    }
    Ok(())
}

/// `min(1/K, 1 - p/K) < eps < min(p/K, 1 - p/K)` together with `n + 1 > K`.
pub fn collapse_window(p: usize, k: f64, n: usize, m: usize) -> Result<Window> {
    check_common(p, k, n)?;
    let pf = p as f64;
    let lower = (1.0 / k).min(1.0 - pf / k);
    let upper = (pf / k).min(1.0 - pf / k);
    let epsilon = m as f64 / (n + m) as f64;
    let inside = lower < epsilon && epsilon < upper && n as f64 + 1.0 > k;
    Ok(Window {
        lower,
        upper,
        epsilon,
        upper_enforced: true,
        window_violation: !inside,
    })
}

/// `1 - n(p-1)/(K(n-1)) < eps < 1 - n(p-2)/(K(n-2))`; the upper side is
/// checked only when `enforce_upper` is set.
pub fn range_window(p: usize, k: f64, n: usize, m: usize, enforce_upper: bool) -> Result<Window> {
    check_common(p, k, n)?;
    let (pf, nf) = (p as f64, n as f64);
    let lower = 1.0 - nf * (pf - 1.0) / (k * (nf - 1.0));
    let upper = 1.0 - nf * (pf - 2.0) / (k * (nf - 2.0));
    let epsilon = m as f64 / (n + m) as f64;
    let inside = lower < epsilon && (!enforce_upper || epsilon < upper);
    Ok(Window {
        lower,
        upper,
        epsilon,
        upper_enforced: enforce_upper,
        window_violation: !inside,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CollapseRow {
    pub r: f64,
    pub theta_form: f64,
    pub probe_form: f64,
    pub status: Status,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CollapseCurve {
    pub window: Window,
    /// `probe' V^-1 probe` of the uncontaminated estimate.
    pub baseline_probe: f64,
    pub baseline_theta: f64,
    pub rows: Vec<CollapseRow>,
}

fn inverse_forms(v: &ScatterMatrix, a: &DVector<f64>, b: &DVector<f64>) -> (f64, f64) {
    (
        v.inverse_quadratic_form(a).unwrap_or(f64::NAN),
        v.inverse_quadratic_form(b).unwrap_or(f64::NAN),
    )
}

fn unit_vector(v: &[f64], p: usize) -> Result<DVector<f64>> {
    if v.len() != p {
        return Err(Error::DimensionMismatch {
            expected: p,
            actual: v.len(),
        });
    }
    let d = DVector::from_column_slice(v);
    let norm = d.norm();
    if !(norm > 0.0 && norm.is_finite()) {
        return Err(Error::BadParams("direction must be non-zero".into()));
    }
    Ok(d / norm)
}

/// `theta' V^-1 theta` and `probe' V^-1 probe` for `m` copies of
/// `t + r theta` at each radius.
pub fn direction_collapse_curve(
    x: &Dataset,
    spec: &WeightSpec,
    theta: &[f64],
    m: usize,
    radii: &[f64],
    probe: &[f64],
    opts: &SolverOptions,
) -> Result<CollapseCurve> {
    let p = x.dim();
    let th = unit_vector(theta, p)?;
    let pr = unit_vector(probe, p)?;
    if (1.0 - th.dot(&pr).abs()) < 1e-12 {
        return Err(Error::BadParams("probe must not be proportional to theta".into()));
    }
    let window = collapse_window(p, spec.k(), x.len(), m)?;
    let base = solve_scatter(x, spec, opts)?;
    let (baseline_theta, baseline_probe) = inverse_forms(&base.v, &th, &pr);
    let mut rows = Vec::with_capacity(radii.len());
    for &r in radii {
        let est = if m == 0 {
            base.clone()
        } else {
            let y = contamination::generate(&ContaminationSpec::coplanar_point_mass(theta, r, m), x)?;
            solve_scatter(&x.union(&y)?, spec, opts)?
        };
        let (theta_form, probe_form) = inverse_forms(&est.v, &th, &pr);
        rows.push(CollapseRow {
            r,
            theta_form,
            probe_form,
            status: est.status,
        });
    }
    Ok(CollapseCurve {
        window,
        baseline_probe,
        baseline_theta,
        rows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RangeRow {
    pub w: f64,
    pub seed: u64,
    /// `x1' V x1` with `x1` measured from the center.
    pub anchor_form: f64,
    /// Largest `a' V a` over unit `a` orthogonal to `x1`.
    pub orthogonal_max: f64,
    pub status: Status,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RangeCurve {
    pub window: Window,
    pub anchor_index: usize,
    pub rows: Vec<RangeRow>,
}

fn range_forms(v: &ScatterMatrix, z1: &DVector<f64>) -> (f64, f64) {
    let vm = v.to_matrix();
    let u = z1.normalize();
    let proj = DMatrix::identity(u.len(), u.len()) - &u * u.transpose();
    let pvp = &proj * vm * &proj;
    let top = pvp.symmetric_eigenvalues().max();
    (v.quadratic_form(z1), top)
}

/// `x1' V x1` and the largest orthogonal quadratic form for `m` points
/// `x1 + w_i`, `|w_i| = w`, at each offset and seed.
#[allow(clippy::too_many_arguments)]
pub fn range_alignment_curve(
    x: &Dataset,
    spec: &WeightSpec,
    anchor_index: usize,
    m: usize,
    offsets: &[f64],
    seeds: &[u64],
    opts: &SolverOptions,
    enforce_upper: bool,
) -> Result<RangeCurve> {
    let p = x.dim();
    let window = range_window(p, spec.k(), x.len(), m, enforce_upper)?;
    let anchor = x
        .points()
        .get(anchor_index)
        .ok_or_else(|| Error::BadParams(format!("anchor index {anchor_index} out of range")))?;
    let z1 = anchor - x.center();
    if z1.norm() == 0.0 {
        return Err(Error::BadParams("anchor point sits at the center".into()));
    }
    if seeds.is_empty() {
        return Err(Error::BadParams("seed list must be non-empty".into()));
    }
    let base = if m == 0 { Some(solve_scatter(x, spec, opts)?) } else { None };
    let mut rows = Vec::with_capacity(offsets.len() * seeds.len());
    for &w in offsets {
        for &seed in seeds {
            let est = match &base {
                Some(b) => b.clone(),
                None => {
                    let y = contamination::generate(
                        &ContaminationSpec::near_point_replicates(anchor_index, w, seed, m),
                        x,
                    )?;
                    solve_scatter(&x.union(&y)?, spec, opts)?
                }
            };
            let (anchor_form, orthogonal_max) = range_forms(&est.v, &z1);
            rows.push(RangeRow {
                w,
                seed,
                anchor_form,
                orthogonal_max,
                status: est.status,
            });
        }
    }
    Ok(RangeCurve {
        window,
        anchor_index,
        rows,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReportOptions {
    pub solver: SolverOptions,
    pub collapse_ratio: f64,
    pub angle_tol_deg: f64,
}

impl Default for ReportOptions {
    fn default() -> Self {
        Self {
            solver: SolverOptions::default(),
            collapse_ratio: DEFAULT_COLLAPSE_RATIO,
            angle_tol_deg: DEFAULT_ANGLE_TOL_DEG,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PlaneSource {
    /// Spanned by the directions in which `V` blows up.
    Inflated,
    /// The range of a nearly singular `V`.
    Range,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoplanarityReport {
    pub status: Status,
    pub v: Option<Vec<Vec<f64>>>,
    pub eigen_v: Option<EigenReport>,
    pub eigen_v_inverse: Option<EigenReport>,
    pub plane_source: Option<PlaneSource>,
    /// Orthonormal basis of the suspected contaminating plane through `t`.
    pub plane: Vec<Vec<f64>>,
    /// Indices of points lying near the plane and carrying its weight.
    pub suspects: Vec<usize>,
    pub existence: Option<ExistenceReport>,
    pub existence_error: Option<String>,
}

/// Solves, decomposes, and lists points that look like systematic
/// contamination.
///
/// A point is a suspect when its direction from `t` is within the angular
/// tolerance of the plane and its weighted leverage in the plane,
/// `u(s_i) sum_j (phi_j' z_i)^2 / lambda_j`, is at least the plane dimension,
/// the average leverage per point.
pub fn coplanarity_report(z: &Dataset, spec: &WeightSpec, opts: &ReportOptions) -> CoplanarityReport {
    let (existence, existence_error) = match geometry::check_existence(z, spec) {
        Ok(r) => (Some(r), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let est = match solve_scatter(z, spec, &opts.solver) {
        Ok(est) => est,
        Err(_) => {
            return CoplanarityReport {
                status: Status::DegenerateInput,
                v: None,
                eigen_v: None,
                eigen_v_inverse: None,
                plane_source: None,
                plane: vec![],
                suspects: vec![],
                existence,
                existence_error,
            }
        }
    };
    let vm = est.v.to_matrix();
    let eig = eigen_report_of(&vm, opts.collapse_ratio);
    let inverse = vm.clone().cholesky().map(|c| c.inverse());
    let eig_inv = inverse.as_ref().map(|vi| eigen_report_of(vi, opts.collapse_ratio));

    let p = z.dim();
    let mut plane_idx: Vec<usize> = Vec::new();
    let mut plane_source = None;
    if let Some(ei) = &eig_inv {
        if !ei.collapse_indices.is_empty() && ei.collapse_indices.len() < p {
            // collapsed directions of V^-1 are the top eigenvectors of V
            plane_idx = (0..ei.collapse_indices.len()).collect();
            plane_source = Some(PlaneSource::Inflated);
        }
    }
    if plane_source.is_none() && !eig.collapse_indices.is_empty() && eig.collapse_indices.len() < p {
        plane_idx = (0..p).filter(|i| !eig.collapse_indices.contains(i)).collect();
        plane_source = Some(PlaneSource::Range);
    }
    let plane: Vec<DVector<f64>> = plane_idx
        .iter()
        .map(|&i| DVector::from_column_slice(&eig.eigenvectors[i]))
        .collect();

    let mut suspects = Vec::new();
    if !plane.is_empty() {
        let cos_tol = opts.angle_tol_deg.to_radians().cos();
        let q = plane.len() as f64;
        for (i, zi) in z.centered().iter().enumerate() {
            let norm = zi.norm();
            if norm == 0.0 {
                continue;
            }
            let coords: Vec<f64> = plane.iter().map(|phi| phi.dot(zi)).collect();
            let in_plane = coords.iter().map(|c| c * c).sum::<f64>().sqrt();
            if in_plane / norm < cos_tol {
                continue;
            }
            let leverage: f64 = coords
                .iter()
                .zip(&plane_idx)
                .map(|(c, &j)| c * c / eig.eigenvalues[j])
                .sum::<f64>()
                * est.weights[i];
            if leverage >= q {
                suspects.push(i);
            }
        }
    }
    CoplanarityReport {
        status: est.status,
        v: Some(est.v.to_rows()),
        eigen_v: Some(eig),
        eigen_v_inverse: eig_inv,
        plane_source,
        plane: plane.iter().map(|v| v.iter().copied().collect()).collect(),
        suspects,
        existence,
        existence_error,
    }
}
