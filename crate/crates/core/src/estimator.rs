//! Fixed-point solver for the M-estimator of scatter about a known center.
//!
//! The iteration is the plain map `V <- F(V) = ave{u(s_i)(x_i-t)(x_i-t)'}`.
//! Distances are obtained from Cholesky solves, never from an explicit
//! inverse. A returned `CONVERGED` estimate is always verified: its residual
//! `||F(V) - V||_F / ||V||_F` and its trace-identity gap `|ave psi(s_i) - p|`
//! are evaluated at exactly the matrix that is returned.
//!
//! Nonexistence can only be observed in the limit, as the iterates drift
//! toward a singular matrix. The solver watches the condition-like ratio
//! `g_k = log(lambda_ref / lambda_min(V_k))`, where `lambda_ref` is the
//! smallest eigenvalue of the second-moment matrix about the center, so that
//! `V` growing without bound in a few directions (an exploding but existing
//! estimate) is not mistaken for collapse. When `g_k` passes `log(cond_limit)`
//! while still rising over the trend window, or when the iteration runs out
//! with a steadily shrinking smallest eigenvalue, the existence conditions
//! are consulted: if the sufficient condition certifies a solution the solver
//! keeps going (and at worst reports `MAX_ITER`); otherwise the outcome is
//! `NONEXISTENT`.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::geometry::{self, ExistenceReport, GeometryOptions};
use crate::model::{Dataset, ScatterEstimate, ScatterMatrix, Status, WeightSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Init {
    Identity,
    SecondMoment,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub tol_rel_change: f64,
    pub tol_residual: f64,
    pub max_iter: usize,
    pub init: Init,
    pub cond_limit: f64,
    /// Bound on `|ave psi(s_i) - p|` for a converged estimate.
    pub trace_gap_tol: f64,
    /// Number of trailing iterations used to judge a degeneracy trend.
    pub trend_window: usize,
    pub geometry: GeometryOptions,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol_rel_change: 1e-11,
            tol_residual: 1e-9,
            max_iter: 500,
            init: Init::Identity,
            cond_limit: 1e12,
            trace_gap_tol: 1e-8,
            trend_window: 20,
            geometry: GeometryOptions::default(),
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.tol_rel_change, self.tol_residual, self.cond_limit, self.trace_gap_tol];
        if positive.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::Config("solver tolerances must be positive".into()));
        }
        if self.max_iter == 0 {
            return Err(Error::Config("max_iter must be at least 1".into()));
        }
        if self.trend_window < 4 {
            return Err(Error::Config("trend_window must be at least 4".into()));
        }
        Ok(())
    }

    pub fn with_max_iter(mut self, max_iter: usize) -> Self {
        self.max_iter = max_iter;
        self
    }

    pub fn with_init(mut self, init: Init) -> Self {
        self.init = init;
        self
    }

    pub fn with_cond_limit(mut self, cond_limit: f64) -> Self {
        self.cond_limit = cond_limit;
        self
    }
}

/// One application of the fixed-point map.
struct MapEval {
    next: DMatrix<f64>,
    distances: Vec<f64>,
}

fn apply_map(v: &DMatrix<f64>, z: &DMatrix<f64>, spec: &WeightSpec) -> Option<MapEval> {
    let chol = v.clone().cholesky()?;
    let w = chol.l().solve_lower_triangular(z)?;
    let n = z.ncols();
    let mut distances = Vec::with_capacity(n);
    let mut scaled = z.clone();
    for j in 0..n {
        let s = w.column(j).norm_squared();
        if !s.is_finite() {
            return None;
        }
        distances.push(s);
        let u = spec.u(s);
        scaled.column_mut(j).scale_mut(u);
    }
    let mut next = &scaled * z.transpose() / n as f64;
    symmetrize(&mut next);
    Some(MapEval { next, distances })
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let p = m.nrows();
    for i in 0..p {
        for j in i + 1..p {
            let a = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = a;
            m[(j, i)] = a;
        }
    }
}

fn trace_gap(distances: &[f64], spec: &WeightSpec) -> f64 {
    let ave = distances.iter().map(|&s| spec.psi(s)).sum::<f64>() / distances.len() as f64;
    (ave - spec.dim() as f64).abs()
}

fn extreme_eigenvalues(m: &DMatrix<f64>) -> (f64, f64) {
    let ev = m.symmetric_eigenvalues();
    (ev.min(), ev.max())
}

/// Least-squares slope of the trailing window, required positive together with
/// a net rise from first to last.
fn rising(values: &[f64]) -> bool {
    let n = values.len();
    if n < 2 || values.iter().any(|v| !v.is_finite()) {
        return values.last().is_some_and(|v| v.is_infinite());
    }
    let mean_x = (n - 1) as f64 / 2.0;
    let mean_y = values.iter().sum::<f64>() / n as f64;
    let mut num = 0.0;
    let mut den = 0.0;
    for (i, y) in values.iter().enumerate() {
        let dx = i as f64 - mean_x;
        num += dx * (y - mean_y);
        den += dx * dx;
    }
    num / den > 0.0 && values[n - 1] > values[0]
}

/// Strictly decreasing values whose decline is not dying out: the drop over
/// the second half of the window is at least half the drop over the first.
fn steadily_shrinking(log_values: &[f64]) -> bool {
    let n = log_values.len();
    if n < 4 || log_values.iter().any(|v| !v.is_finite()) {
        return false;
    }
    if log_values.windows(2).any(|w| w[1] >= w[0]) {
        return false;
    }
    let h = n / 2;
    let first = log_values[0] - log_values[h];
    let second = log_values[h] - log_values[n - 1];
    second >= 0.5 * first * ((n - 1 - h) as f64 / h as f64)
}

fn tail(values: &[f64], window: usize) -> &[f64] {
    &values[values.len().saturating_sub(window)..]
}

/// Solves the defining equation for `V`.
pub fn solve_scatter(data: &Dataset, spec: &WeightSpec, opts: &SolverOptions) -> Result<ScatterEstimate> {
    opts.validate()?;
    let p = data.dim();
    if spec.dim() != p {
        return Err(Error::DimensionMismatch {
            expected: spec.dim(),
            actual: p,
        });
    }
    let n = data.len();
    let z = data.centered_matrix();
    let second_moment = &z * z.transpose() / n as f64;
    let sv = z.singular_values();
    let sv_max = sv.max();
    let rank = sv.iter().filter(|&&s| s > opts.geometry.rank_tol * sv_max).count();
    if !(sv_max > 0.0) || rank < p {
        return Err(Error::DegenerateInput(format!("centered data has rank {rank} < p = {p}")));
    }
    let (lambda_ref, _) = extreme_eigenvalues(&second_moment);

    let mut v = match opts.init {
        Init::Identity => DMatrix::identity(p, p),
        Init::SecondMoment => second_moment.clone(),
    };
    let log_cond_limit = opts.cond_limit.ln();
    let mut degeneracy: Vec<f64> = Vec::new();
    let mut log_min: Vec<f64> = Vec::new();
    let mut existence: Option<Result<ExistenceReport>> = None;
    let mut certified = false;

    let consult = |existence: &mut Option<Result<ExistenceReport>>| -> bool {
        let report = existence.get_or_insert_with(|| geometry::check_existence_with(data, spec, &opts.geometry));
        matches!(report, Ok(r) if r.sufficient)
    };

    for iter in 0..opts.max_iter {
        let Some(eval) = apply_map(&v, &z, spec) else {
            // lost positive definiteness numerically
            let status = if certified || consult(&mut existence) {
                Status::MaxIter
            } else {
                Status::Nonexistent
            };
            return Ok(finish(v, status, iter, &z, data, spec, existence));
        };
        let residual = (&eval.next - &v).norm() / v.norm();
        let gap = trace_gap(&eval.distances, spec);
        if residual < opts.tol_rel_change && residual <= opts.tol_residual && gap <= opts.trace_gap_tol {
            let weights = eval.distances.iter().map(|&s| spec.u(s)).collect();
            return Ok(ScatterEstimate {
                v: ScatterMatrix::from_matrix(&v),
                status: Status::Converged,
                iterations: iter,
                residual,
                trace_gap: gap,
                distances: eval.distances,
                weights,
                existence: existence.and_then(|r| r.ok()),
            });
        }
        let next = eval.next;
        let (lmin, _) = extreme_eigenvalues(&next);
        let g = if lmin > 0.0 {
            (lambda_ref / lmin).ln()
        } else {
            f64::INFINITY
        };
        degeneracy.push(g);
        log_min.push(if lmin > 0.0 { lmin.ln() } else { f64::NEG_INFINITY });
        v = next;

        if !certified
            && g > log_cond_limit
            && degeneracy.len() >= opts.trend_window
            && rising(tail(&degeneracy, opts.trend_window))
        {
            if consult(&mut existence) {
                certified = true;
            } else {
                return Ok(finish(v, Status::Nonexistent, iter + 1, &z, data, spec, existence));
            }
        }
    }

    let collapsing = steadily_shrinking(tail(&log_min, opts.trend_window))
        || (degeneracy.last().is_some_and(|&g| g > log_cond_limit) && rising(tail(&degeneracy, opts.trend_window)));
    let status = if collapsing && !certified && !consult(&mut existence) {
        Status::Nonexistent
    } else {
        Status::MaxIter
    };
    Ok(finish(v, status, opts.max_iter, &z, data, spec, existence))
}

fn finish(
    v: DMatrix<f64>,
    status: Status,
    iterations: usize,
    z: &DMatrix<f64>,
    data: &Dataset,
    spec: &WeightSpec,
    existence: Option<Result<ExistenceReport>>,
) -> ScatterEstimate {
    let (residual, trace_gap, distances) = match apply_map(&v, z, spec) {
        Some(eval) => (
            (&eval.next - &v).norm() / v.norm(),
            trace_gap(&eval.distances, spec),
            eval.distances,
        ),
        None => (f64::INFINITY, f64::INFINITY, vec![f64::INFINITY; data.len()]),
    };
    let weights = distances.iter().map(|&s| spec.u(s)).collect();
    ScatterEstimate {
        v: ScatterMatrix::from_matrix(&v),
        status,
        iterations,
        residual,
        trace_gap,
        distances,
        weights,
        existence: existence.and_then(|r| r.ok()),
    }
}

/// Relative Frobenius residual of the defining equation at `v`, and the
/// trace-identity gap `|ave psi(s_i) - p|`.
pub fn verify_fixed_point(v: &ScatterMatrix, data: &Dataset, spec: &WeightSpec) -> Result<(f64, f64)> {
    if v.dim() != data.dim() || spec.dim() != data.dim() {
        return Err(Error::DimensionMismatch {
            expected: data.dim(),
            actual: v.dim(),
        });
    }
    let vm = v.to_matrix();
    let z = data.centered_matrix();
    let eval = apply_map(&vm, &z, spec).ok_or(Error::NotPositiveDefinite)?;
    Ok(((&eval.next - &vm).norm() / vm.norm(), trace_gap(&eval.distances, spec)))
}
