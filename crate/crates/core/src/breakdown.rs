//! The bias functional, closed-form breakdown values and empirical sweeps.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::contamination::{self, ContaminationKind, ContaminationSpec};
use crate::error::{Error, Result};
use crate::estimator::{solve_scatter, SolverOptions};
use crate::geometry;
use crate::model::{Dataset, ScatterEstimate, ScatterMatrix, Status, WeightSpec};

/// Default bias level above which a sweep cell counts as diverged.
pub const DEFAULT_DIVERGENCE_THRESHOLD: f64 = 1e6;

/// Relative slack allowed when checking that bias grows along the magnitude grid.
const TREND_SLACK: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ClassId {
    Unrestricted,
    /// Contamination keeping joint general position and staying far from `t`.
    C1C2,
    /// Contamination with bounded minimum distance from `t`.
    C3Only,
    /// Contamination keeping joint general position.
    C1Only,
    /// Contamination that is neither near `t` nor far away.
    C2C3,
}

impl ClassId {
    pub const ALL: [ClassId; 5] = [
        ClassId::Unrestricted,
        ClassId::C1C2,
        ClassId::C3Only,
        ClassId::C1Only,
        ClassId::C2C3,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ClassId::Unrestricted => "UNRESTRICTED",
            ClassId::C1C2 => "C1_C2",
            ClassId::C3Only => "C3_ONLY",
            ClassId::C1Only => "C1_ONLY",
            ClassId::C2C3 => "C2_C3",
        }
    }
}

impl fmt::Display for ClassId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Regime {
    Exact,
    Bounds,
    Zero,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BreakdownTheory {
    pub class_id: ClassId,
    pub delta_star_lower: f64,
    pub delta_star_upper: f64,
    pub regime: Regime,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl BreakdownTheory {
    fn new(class_id: ClassId, lower: f64, upper: f64) -> Self {
        let lower = lower.clamp(0.0, 1.0);
        let upper = upper.clamp(lower, 1.0);
        let regime = if upper == 0.0 {
            Regime::Zero
        } else if lower == upper {
            Regime::Exact
        } else {
            Regime::Bounds
        };
        Self {
            class_id,
            delta_star_lower: lower,
            delta_star_upper: upper,
            regime,
            note: None,
        }
    }

    fn exact(class_id: ClassId, value: f64) -> Self {
        Self::new(class_id, value, value)
    }
}

/// The four constants bounding breakdown under bounded coplanar contamination.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundedConstants {
    pub a1: f64,
    pub a2: f64,
    pub a3: f64,
    pub a4: f64,
}

pub fn bounded_constants(p: usize, k: f64, n: usize) -> BoundedConstants {
    let (pf, nf) = (p as f64, n as f64);
    BoundedConstants {
        a1: 1.0 - nf * pf / (nf * k - (k - nf) * (pf - 1.0)),
        a2: 1.0 - nf * pf / (nf * k + nf - k),
        a3: 1.0 - nf * (pf - 1.0) / ((nf - pf + 1.0) * k),
        a4: 1.0 - nf * (pf - 1.0) / ((nf - 1.0) * k),
    }
}

pub fn theoretical_delta_star(p: usize, k: f64, n: usize, class_id: ClassId) -> Result<BreakdownTheory> {
    let pf = p as f64;
    if p == 0 || !(k.is_finite() && k > pf) {
        return Err(Error::BadParams(format!("need K > p, got K = {k}, p = {p}")));
    }
    if n == 0 {
        return Err(Error::BadParams("n must be positive".into()));
    }
    let nf = n as f64;
    let large_n = nf + 1.0 > k;
    let theory = match class_id {
        ClassId::Unrestricted => BreakdownTheory::exact(class_id, if large_n { (1.0 / k).min(1.0 - pf / k) } else { 0.0 }),
        ClassId::C1C2 => BreakdownTheory::exact(class_id, if large_n { pf / k } else { 0.0 }),
        ClassId::C1Only => {
            BreakdownTheory::exact(class_id, if large_n { (pf / k).min(1.0 - pf / k) } else { 0.0 })
        }
        ClassId::C3Only => {
            let mut th = if nf >= k {
                BreakdownTheory::exact(class_id, 1.0 - pf / k)
            } else {
                BreakdownTheory::new(class_id, bounded_constants(p, k, n).a1, 1.0 - pf / k)
            };
            th.note = Some("applies to contamination within squared radius B of the center".into());
            th
        }
        ClassId::C2C3 => {
            let a = bounded_constants(p, k, n);
            if nf > k {
                BreakdownTheory::new(class_id, a.a2.min(a.a3), a.a4)
            } else {
                BreakdownTheory::new(class_id, a.a1, a.a4)
            }
        }
    };
    Ok(theory)
}

/// Interval `[lower, upper)` containing the finite-sample breakdown point.
pub fn epsilon_star_bounds(delta_star: f64, n: usize) -> (f64, f64) {
    if delta_star == 0.0 {
        return (0.0, 0.0);
    }
    let nf = n as f64;
    (delta_star, (delta_star + delta_star / nf) / (1.0 + (1.0 - delta_star) / nf))
}

/// Whether the closed-form sufficient conditions guarantee that the estimate
/// exists after adding `m` points to `n` good points. Inequalities in
/// `eps = m / (n + m)` are compared after multiplying through by `n + m`.
pub fn sufficient_existence_margin(p: usize, k: f64, n: usize, m: usize, center_in_z: bool) -> bool {
    if m == 0 {
        return true;
    }
    let (pf, nf, mf) = (p as f64, n as f64, m as f64);
    let total = nf + mf;
    // eps < 1 - p/K  <=>  m K < (n + m)(K - p)
    if nf >= k && mf * k < total * (k - pf) {
        return true;
    }
    // eps < 1 - np/D  <=>  D > p (n + m), with D = nK - (K - n)(p - 1) > 0
    if nf < k {
        let d = nf * k - (k - nf) * (pf - 1.0);
        if d > 0.0 && d > pf * total {
            return true;
        }
    }
    if nf > k && !center_in_z {
        let first = nf * k + nf - k > pf * total;
        let second = (nf - pf + 1.0) * k > (pf - 1.0) * total;
        if first && second {
            return true;
        }
    }
    false
}

/// `tr(V_Z V_X^-1 + V_X V_Z^-1)` for two estimates; infinite when `V_Z` is
/// not positive definite.
pub fn bias_between(vx: &ScatterMatrix, vz: &ScatterMatrix) -> Result<f64> {
    if vx.dim() != vz.dim() {
        return Err(Error::DimensionMismatch {
            expected: vx.dim(),
            actual: vz.dim(),
        });
    }
    let p = vx.dim();
    if vx == vz {
        return Ok(2.0 * p as f64);
    }
    // With V = L L', the eigenvalues of V_X^-1 V_Z are the squared singular
    // values of L_X^-1 L_Z; each contributes sigma^2 + sigma^-2 = 2 + (sigma - 1/sigma)^2.
    let lx = vx.to_matrix().cholesky().ok_or(Error::NotPositiveDefinite)?.l();
    let Some(lz) = vz.to_matrix().cholesky().map(|c| c.l()) else {
        return Ok(f64::INFINITY);
    };
    let a = lx.solve_lower_triangular(&lz).ok_or(Error::NotPositiveDefinite)?;
    let mut total = 0.0;
    for sigma in a.singular_values().iter() {
        if !(*sigma > 0.0) || !sigma.is_finite() {
            return Ok(f64::INFINITY);
        }
        total += 2.0 + (sigma - 1.0 / sigma).powi(2);
    }
    Ok(total)
}

/// Bias of the contaminated sample `z` relative to the good sample `x`.
pub fn bias(x: &Dataset, z: &Dataset, spec: &WeightSpec, opts: &SolverOptions) -> Result<f64> {
    let vx = reference_estimate(x, spec, opts)?;
    let ez = solve_scatter(z, spec, opts)?;
    bias_of_estimate(&vx.v, &ez)
}

/// Estimate of the good data, required to have converged.
pub fn reference_estimate(x: &Dataset, spec: &WeightSpec, opts: &SolverOptions) -> Result<ScatterEstimate> {
    let est = solve_scatter(x, spec, opts).map_err(|e| Error::GoodDataDegenerate(e.to_string()))?;
    if est.status != Status::Converged {
        return Err(Error::GoodDataDegenerate(format!("solver status {}", est.status)));
    }
    Ok(est)
}

/// Bias of an already computed contaminated estimate; a nonexistent estimate
/// has infinite bias and an unconverged one is judged by its last iterate.
pub fn bias_of_estimate(vx: &ScatterMatrix, ez: &ScatterEstimate) -> Result<f64> {
    match ez.status {
        Status::Nonexistent | Status::DegenerateInput => Ok(f64::INFINITY),
        Status::Converged | Status::MaxIter => bias_between(vx, &ez.v),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub m: usize,
    pub epsilon: f64,
    pub magnitude: f64,
    pub seed: u64,
    pub bias: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub status: Status,
    pub center_in_z: bool,
    pub iterations: usize,
}

/// Which end of the magnitude grid drives the contamination to its limit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Extreme {
    Largest,
    Smallest,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepResult {
    pub n: usize,
    pub extreme: Extreme,
    pub rows: Vec<SweepRow>,
}

/// All `m` from 0 to `3n`.
pub fn default_m_grid(n: usize) -> Vec<usize> {
    (0..=3 * n).collect()
}

/// Runs every `(m, magnitude, seed)` cell of the grid in a deterministic order.
pub fn run_sweep(
    x: &Dataset,
    spec: &WeightSpec,
    template: &ContaminationSpec,
    m_values: &[usize],
    magnitudes: &[f64],
    seeds: &[u64],
    opts: &SolverOptions,
) -> Result<SweepResult> {
    if m_values.is_empty() {
        return Err(Error::BadParams("empty m grid".into()));
    }
    if magnitudes.is_empty() || seeds.is_empty() {
        return Err(Error::BadParams("magnitude and seed grids must be non-empty".into()));
    }
    let p = x.dim();
    if x.len() <= p * (p - 1) {
        return Err(Error::BadParams(format!("n = {} must exceed p(p-1)", x.len())));
    }
    template.clone().with_m(1).validate(p)?;
    let reference = reference_estimate(x, spec, opts)?;
    let n = x.len();
    let mut ms = m_values.to_vec();
    ms.sort_unstable();
    ms.dedup();
    let mut mags = magnitudes.to_vec();
    mags.sort_by(f64::total_cmp);
    mags.dedup();
    let extreme = match template.kind {
        ContaminationKind::NearPointReplicates { .. } => Extreme::Smallest,
        _ => Extreme::Largest,
    };
    let (ref_min, ref_max) = extremes(&reference.v);

    let mut rows = Vec::with_capacity(ms.len() * mags.len() * seeds.len());
    for &m in &ms {
        let epsilon = m as f64 / (n + m) as f64;
        for &magnitude in &mags {
            for &seed in seeds {
                let row = if m == 0 {
                    SweepRow {
                        m,
                        epsilon,
                        magnitude,
                        seed,
                        bias: 2.0 * p as f64,
                        lambda_min: ref_min,
                        lambda_max: ref_max,
                        status: reference.status,
                        center_in_z: x.center_count() > 0,
                        iterations: reference.iterations,
                    }
                } else {
                    let cell = template.clone().with_m(m).with_magnitude(magnitude).with_seed(seed);
                    let y = contamination::generate(&cell, x)?;
                    let z = x.union(&y)?;
                    let center_in_z = z.center_count() > 0;
                    match solve_scatter(&z, spec, opts) {
                        Ok(est) => {
                            let b = bias_of_estimate(&reference.v, &est)?;
                            let (lambda_min, lambda_max) = extremes(&est.v);
                            SweepRow {
                                m,
                                epsilon,
                                magnitude,
                                seed,
                                bias: b,
                                lambda_min,
                                lambda_max,
                                status: est.status,
                                center_in_z,
                                iterations: est.iterations,
                            }
                        }
                        Err(Error::DegenerateInput(_)) => SweepRow {
                            m,
                            epsilon,
                            magnitude,
                            seed,
                            bias: f64::INFINITY,
                            lambda_min: f64::NAN,
                            lambda_max: f64::NAN,
                            status: Status::DegenerateInput,
                            center_in_z,
                            iterations: 0,
                        },
                        Err(e) => return Err(e),
                    }
                };
                rows.push(row);
            }
        }
    }
    Ok(SweepResult { n, extreme, rows })
}

fn extremes(v: &ScatterMatrix) -> (f64, f64) {
    let ev = v.eigenvalues();
    (*ev.last().unwrap_or(&f64::NAN), *ev.first().unwrap_or(&f64::NAN))
}

/// Whether the cells of one `m` show breakdown.
fn diverged(rows: &[&SweepRow], extreme: Extreme, threshold: f64) -> bool {
    if rows.iter().any(|r| matches!(r.status, Status::Nonexistent | Status::DegenerateInput)) {
        return true;
    }
    let mut by_seed: BTreeMap<u64, Vec<&SweepRow>> = BTreeMap::new();
    for r in rows {
        by_seed.entry(r.seed).or_default().push(r);
    }
    by_seed.values_mut().any(|cells| {
        cells.sort_by(|a, b| a.magnitude.total_cmp(&b.magnitude));
        if extreme == Extreme::Smallest {
            cells.reverse();
        }
        let last = cells.last().map_or(0.0, |r| r.bias);
        let growing = cells
            .windows(2)
            .all(|w| w[1].bias >= w[0].bias * (1.0 - TREND_SLACK));
        last > threshold && growing
    })
}

/// Smallest grid `eps` at which the sweep shows breakdown, together with the
/// gap to the previous grid point.
pub fn estimate_delta_star(sweep: &SweepResult, divergence_threshold: f64) -> Result<(f64, f64)> {
    let mut by_m: BTreeMap<usize, Vec<&SweepRow>> = BTreeMap::new();
    for r in &sweep.rows {
        by_m.entry(r.m).or_default().push(r);
    }
    let mut previous = None;
    for (m, rows) in &by_m {
        let eps = *m as f64 / (sweep.n + m) as f64;
        if diverged(rows, sweep.extreme, divergence_threshold) {
            let resolution = eps - previous.unwrap_or(0.0);
            return Ok((eps, resolution));
        }
        previous = Some(eps);
    }
    Err(Error::NoBreakdownObserved)
}

/// Checks the standing assumptions on the good data of a sweep.
pub fn check_sweep_data(x: &Dataset) -> Result<()> {
    let p = x.dim();
    if x.len() <= p * (p - 1) || !geometry::is_general_position(x) {
        return Err(Error::GoodDataDegenerate(
            "good data must be in general position with n > p(p-1)".into(),
        ));
    }
    Ok(())
}
