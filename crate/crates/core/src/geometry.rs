//! Positional combinatorics about the center.
//!
//! Everything here depends only on the directions `theta = (z - t)/|z - t|`
//! of the points, plus the count of points sitting exactly at `t`. Rank
//! decisions use a singular-value threshold relative to the largest singular
//! value of the direction block being tested.

use std::ops::ControlFlow;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{Dataset, WeightSpec};

/// Tolerances and budgets for the combinatorial checks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeometryOptions {
    /// Relative singular-value threshold for rank decisions.
    pub rank_tol: f64,
    /// Maximum number of subsets an exact search may visit.
    pub subset_budget: u64,
}

impl Default for GeometryOptions {
    fn default() -> Self {
        Self {
            rank_tol: 1e-9,
            subset_budget: 1_000_000,
        }
    }
}

/// Unit directions of the non-center points.
#[derive(Debug, Clone)]
pub struct DirectionSet {
    pub directions: Vec<DVector<f64>>,
    /// Index into the dataset for each direction.
    pub source: Vec<usize>,
    /// Number of points equal to the center.
    pub omitted_count: usize,
}

pub fn directions(data: &Dataset) -> DirectionSet {
    let mut directions = Vec::with_capacity(data.len());
    let mut source = Vec::with_capacity(data.len());
    let mut omitted_count = 0;
    for (i, z) in data.centered().into_iter().enumerate() {
        let r = z.norm();
        if r == 0.0 {
            omitted_count += 1;
        } else {
            directions.push(z / r);
            source.push(i);
        }
    }
    DirectionSet {
        directions,
        source,
        omitted_count,
    }
}

/// Calls `f` on every `k`-subset of `0..n` in lexicographic order.
pub(crate) fn for_each_combination<F>(n: usize, k: usize, mut f: F) -> ControlFlow<()>
where
    F: FnMut(&[usize]) -> ControlFlow<()>,
{
    if k > n {
        return ControlFlow::Continue(());
    }
    if k == 0 {
        return f(&[]);
    }
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        f(&idx)?;
        let mut i = k;
        while i > 0 && idx[i - 1] == n - k + i - 1 {
            i -= 1;
        }
        if i == 0 {
            return ControlFlow::Continue(());
        }
        idx[i - 1] += 1;
        for j in i..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

pub(crate) fn binomial(n: usize, k: usize) -> u64 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
        if acc > u64::MAX as u128 {
            return u64::MAX;
        }
    }
    acc as u64
}

fn block(dirs: &[DVector<f64>], subset: &[usize]) -> DMatrix<f64> {
    let p = dirs[subset[0]].len();
    DMatrix::from_fn(p, subset.len(), |i, j| dirs[subset[j]][i])
}

/// Full column rank of the direction block, judged by `sigma_min > tol * sigma_max`.
fn independent(dirs: &[DVector<f64>], subset: &[usize], tol: f64) -> bool {
    let sv = block(dirs, subset).singular_values();
    let max = sv.max();
    let min = sv.min();
    max > 0.0 && min > tol * max
}

/// Angle in `[0, pi)` of the line spanned by a planar direction.
fn line_angle(d: &DVector<f64>) -> f64 {
    let a = d[1].atan2(d[0]);
    let a = if a < 0.0 { a + std::f64::consts::PI } else { a };
    if a >= std::f64::consts::PI {
        0.0
    } else {
        a
    }
}

/// Minimum line separation at which two planar directions count as independent.
///
/// For unit vectors at line angle `phi` the singular values are
/// `sqrt(1 +- cos phi)`, whose ratio is `tan(phi/2)`.
fn min_line_gap(tol: f64) -> f64 {
    2.0 * tol.atan()
}

/// Groups directions into lines through the center (directions that are
/// pairwise dependent). Returns the member indices of each line.
fn group_lines(dirs: &[DVector<f64>], tol: f64) -> Vec<Vec<usize>> {
    if dirs.is_empty() {
        return Vec::new();
    }
    let p = dirs[0].len();
    if p == 2 {
        let mut order: Vec<(f64, usize)> = dirs.iter().enumerate().map(|(i, d)| (line_angle(d), i)).collect();
        order.sort_by(|a, b| a.0.total_cmp(&b.0));
        let gap = min_line_gap(tol);
        let mut lines: Vec<Vec<usize>> = Vec::new();
        let mut prev = f64::NEG_INFINITY;
        for (a, i) in order {
            if a - prev <= gap {
                lines.last_mut().expect("non-empty after first").push(i);
            } else {
                lines.push(vec![i]);
            }
            prev = a;
        }
        // wrap-around at pi
        if lines.len() > 1 {
            let first_angle = line_angle(&dirs[lines[0][0]]);
            let last_angle = line_angle(&dirs[*lines.last().unwrap().last().unwrap()]);
            if first_angle + std::f64::consts::PI - last_angle <= gap {
                let last = lines.pop().unwrap();
                lines[0].extend(last);
            }
        }
        return lines;
    }
    let mut lines: Vec<Vec<usize>> = Vec::new();
    'outer: for i in 0..dirs.len() {
        for line in lines.iter_mut() {
            if !independent(dirs, &[line[0], i], tol) {
                line.push(i);
                continue 'outer;
            }
        }
        lines.push(vec![i]);
    }
    lines
}

pub fn is_general_position(data: &Dataset) -> bool {
    is_general_position_with(data, &GeometryOptions::default())
}

/// True iff every `p`-subset of the centered points is linearly independent.
pub fn is_general_position_with(data: &Dataset, opts: &GeometryOptions) -> bool {
    let p = data.dim();
    if data.len() < p {
        return false;
    }
    let ds = directions(data);
    if ds.omitted_count > 0 {
        return false;
    }
    directions_in_general_position(&ds.directions, p, opts.rank_tol)
}

fn directions_in_general_position(dirs: &[DVector<f64>], p: usize, tol: f64) -> bool {
    if dirs.len() < p {
        return false;
    }
    match p {
        1 => true,
        2 => group_lines(dirs, tol).len() == dirs.len(),
        _ => for_each_combination(dirs.len(), p, |s| {
            if independent(dirs, s, tol) {
                ControlFlow::Continue(())
            } else {
                ControlFlow::Break(())
            }
        })
        .is_continue(),
    }
}

pub fn n0_general_position(data: &Dataset) -> Result<usize> {
    n0_general_position_with(data, &GeometryOptions::default())
}

/// Size of the largest subset in general position about the center.
///
/// Returns 0 when no subset of size at least `p` qualifies.
pub fn n0_general_position_with(data: &Dataset, opts: &GeometryOptions) -> Result<usize> {
    let p = data.dim();
    let ds = directions(data);
    let dirs = &ds.directions;
    if dirs.len() < p {
        return Ok(0);
    }
    if ds.omitted_count == 0 && directions_in_general_position(dirs, p, opts.rank_tol) {
        return Ok(data.len());
    }
    match p {
        1 => return Ok(dirs.len()),
        2 => {
            let lines = group_lines(dirs, opts.rank_tol).len();
            return Ok(if lines >= 2 { lines } else { 0 });
        }
        _ => {}
    }
    // One representative per line: two points on a common line can never both
    // belong to a general-position subset.
    let lines = group_lines(dirs, opts.rank_tol);
    let reps: Vec<DVector<f64>> = lines.iter().map(|l| dirs[l[0]].clone()).collect();
    if directions_in_general_position(&reps, p, opts.rank_tol) {
        return Ok(reps.len());
    }
    let mut search = MaxSubsetSearch {
        dirs: &reps,
        p,
        tol: opts.rank_tol,
        budget: opts.subset_budget,
        visited: 0,
        best: 0,
    };
    let mut chosen = Vec::new();
    search.descend(0, &mut chosen)?;
    Ok(if search.best >= p { search.best } else { 0 })
}

struct MaxSubsetSearch<'a> {
    dirs: &'a [DVector<f64>],
    p: usize,
    tol: f64,
    budget: u64,
    visited: u64,
    best: usize,
}

impl MaxSubsetSearch<'_> {
    fn compatible(&mut self, chosen: &[usize], j: usize) -> Result<bool> {
        if chosen.len() + 1 < self.p {
            // only pairs need checking below p points: distinct lines already
            return Ok(true);
        }
        let mut ok = true;
        let mut over = false;
        let _ = for_each_combination(chosen.len(), self.p - 1, |s| {
            self.visited += 1;
            if self.visited > self.budget {
                over = true;
                return ControlFlow::Break(());
            }
            let mut subset: Vec<usize> = s.iter().map(|&i| chosen[i]).collect();
            subset.push(j);
            if independent(self.dirs, &subset, self.tol) {
                ControlFlow::Continue(())
            } else {
                ok = false;
                ControlFlow::Break(())
            }
        });
        if over {
            return Err(Error::ExponentialLimit {
                budget: self.budget,
            });
        }
        Ok(ok)
    }

    fn descend(&mut self, next: usize, chosen: &mut Vec<usize>) -> Result<()> {
        if chosen.len() > self.best {
            self.best = chosen.len();
        }
        let remaining = self.dirs.len() - next;
        if chosen.len() + remaining <= self.best {
            return Ok(());
        }
        for j in next..self.dirs.len() {
            if chosen.len() + (self.dirs.len() - j) <= self.best {
                break;
            }
            if self.compatible(chosen, j)? {
                chosen.push(j);
                self.descend(j + 1, chosen)?;
                chosen.pop();
            }
        }
        Ok(())
    }
}

/// Orthonormal basis of the column span, or `None` if the columns are dependent.
fn orthonormal_basis(cols: &DMatrix<f64>, tol: f64) -> Option<DMatrix<f64>> {
    let q = cols.ncols();
    if q == 0 {
        return Some(DMatrix::zeros(cols.nrows(), 0));
    }
    let svd = cols.clone().svd(true, false);
    let max = svd.singular_values.max();
    if !(max > 0.0) || svd.singular_values.min() <= tol * max {
        return None;
    }
    let u = svd.u?;
    Some(u.columns(0, q).into_owned())
}

/// Whether the unit direction `d` lies in the span of the orthonormal `basis`.
fn in_span(basis: &DMatrix<f64>, d: &DVector<f64>, tol: f64) -> bool {
    if basis.ncols() == 0 {
        return false;
    }
    let proj = basis * (basis.transpose() * d);
    (d - proj).norm() <= tol
}

pub fn subspace_mass(data: &Dataset, basis: &[DVector<f64>]) -> Result<f64> {
    subspace_mass_with(data, basis, &GeometryOptions::default())
}

/// Empirical mass `P_n(S)` of the centered points in `S = span(basis)`.
///
/// Points at the center belong to every subspace, including `{0}`.
pub fn subspace_mass_with(data: &Dataset, basis: &[DVector<f64>], opts: &GeometryOptions) -> Result<f64> {
    let p = data.dim();
    if basis.len() >= p {
        return Err(Error::BadSubspace);
    }
    if basis.iter().any(|b| b.len() != p) {
        return Err(Error::BadSubspace);
    }
    let cols = DMatrix::from_fn(p, basis.len(), |i, j| basis[j][i]);
    let q = orthonormal_basis(&cols, opts.rank_tol).ok_or(Error::BadSubspace)?;
    let ds = directions(data);
    let inside = ds
        .directions
        .iter()
        .filter(|d| in_span(&q, d, opts.rank_tol))
        .count();
    Ok((ds.omitted_count + inside) as f64 / data.len() as f64)
}

/// Evaluation of the existence conditions for the defining equation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExistenceReport {
    /// Sufficient condition for a unique solution.
    pub sufficient: bool,
    /// Necessary condition for any solution.
    pub necessary: bool,
    pub n0: usize,
    /// Rank of the subspace with the least slack in the sufficient condition.
    pub worst_subspace_rank: usize,
    pub worst_subspace_mass: f64,
    /// Slack `bound - P_n(S)` of the sufficient condition at the worst subspace.
    pub margin: f64,
    /// Slack of the necessary condition at its worst subspace.
    pub margin_necessary: f64,
    pub subspaces_examined: usize,
    pub sufficient_formula: &'static str,
    pub necessary_formula: &'static str,
}

pub const SUFFICIENT_FORMULA: &str =
    "P_n(S) < 1 - p/K + min(1, n0*rank(S)/n)/K for all S with 0 <= rank(S) <= p-1, and n0 > p(p-1)";
pub const NECESSARY_FORMULA: &str = "P_n(S) <= 1 - (p - rank(S))/K for all S with 0 <= rank(S) <= p-1";

pub fn check_existence(data: &Dataset, spec: &WeightSpec) -> Result<ExistenceReport> {
    check_existence_with(data, spec, &GeometryOptions::default())
}

/// Checks the sufficient and necessary existence conditions over every
/// subspace spanned by data directions.
///
/// Only spans of data points can carry the maximal mass at a given rank, so
/// the candidate subspaces are the spans of `q`-subsets of distinct lines,
/// `q = 0..p-1`, each counted once.
pub fn check_existence_with(data: &Dataset, spec: &WeightSpec, opts: &GeometryOptions) -> Result<ExistenceReport> {
    let p = data.dim();
    if spec.dim() != p {
        return Err(Error::DimensionMismatch {
            expected: spec.dim(),
            actual: p,
        });
    }
    let n = data.len();
    let nf = n as f64;
    let k = spec.k();
    let pf = p as f64;
    let ds = directions(data);
    let lines = group_lines(&ds.directions, opts.rank_tol);
    let reps: Vec<DVector<f64>> = lines.iter().map(|l| ds.directions[l[0]].clone()).collect();
    let line_sizes: Vec<usize> = lines.iter().map(|l| l.len()).collect();

    let total: u64 = (1..p).map(|q| binomial(reps.len(), q)).fold(0u64, |a, b| a.saturating_add(b));
    if total > opts.subset_budget {
        return Err(Error::ExponentialLimit {
            budget: opts.subset_budget,
        });
    }

    let n0 = n0_general_position_with(data, opts)?;
    let n0f = n0 as f64;

    let mut eval = ConditionTracker::new();
    // rank 0
    eval.observe(0, ds.omitted_count, nf, n0f, pf, k);

    for q in 1..p {
        let _ = for_each_combination(reps.len(), q, |subset| {
            let cols = block(&reps, subset);
            let Some(basis) = orthonormal_basis(&cols, opts.rank_tol) else {
                return ControlFlow::Continue(());
            };
            // canonical representation: the greedy basis of the member lines
            let members: Vec<usize> = (0..reps.len()).filter(|&j| in_span(&basis, &reps[j], opts.rank_tol)).collect();
            let mut greedy: Vec<usize> = Vec::with_capacity(q);
            for &j in &members {
                if greedy.len() == q {
                    break;
                }
                let mut trial = greedy.clone();
                trial.push(j);
                if independent(&reps, &trial, opts.rank_tol) {
                    greedy = trial;
                }
            }
            if greedy.as_slice() != subset {
                return ControlFlow::Continue(());
            }
            let count = ds.omitted_count + members.iter().map(|&j| line_sizes[j]).sum::<usize>();
            eval.observe(q, count, nf, n0f, pf, k);
            ControlFlow::Continue(())
        });
    }

    let n0_ok = n0 > p * (p - 1);
    Ok(ExistenceReport {
        sufficient: eval.sufficient_ok && n0_ok,
        necessary: eval.necessary_ok,
        n0,
        worst_subspace_rank: eval.worst_rank,
        worst_subspace_mass: eval.worst_mass,
        margin: eval.worst_margin,
        margin_necessary: eval.worst_margin_necessary,
        subspaces_examined: eval.examined,
        sufficient_formula: SUFFICIENT_FORMULA,
        necessary_formula: NECESSARY_FORMULA,
    })
}

struct ConditionTracker {
    sufficient_ok: bool,
    necessary_ok: bool,
    worst_rank: usize,
    worst_mass: f64,
    worst_margin: f64,
    worst_margin_necessary: f64,
    examined: usize,
}

impl ConditionTracker {
    fn new() -> Self {
        Self {
            sufficient_ok: true,
            necessary_ok: true,
            worst_rank: 0,
            worst_mass: 0.0,
            worst_margin: f64::INFINITY,
            worst_margin_necessary: f64::INFINITY,
            examined: 0,
        }
    }

    /// Both inequalities are compared after multiplying through by `n K`,
    /// which keeps integer-valued cases exact.
    fn observe(&mut self, rank: usize, count: usize, n: f64, n0: f64, p: f64, k: f64) {
        self.examined += 1;
        let q = rank as f64;
        let c = count as f64;
        let lifted = n.min(n0 * q);
        if !(c * k < n * k - p * n + lifted) {
            self.sufficient_ok = false;
        }
        if !(c * k <= n * k - (p - q) * n) {
            self.necessary_ok = false;
        }
        let mass = c / n;
        let margin = 1.0 - p / k + lifted / (n * k) - mass;
        if margin < self.worst_margin {
            self.worst_margin = margin;
            self.worst_rank = rank;
            self.worst_mass = mass;
        }
        let margin_nec = 1.0 - (p - q) / k - mass;
        self.worst_margin_necessary = self.worst_margin_necessary.min(margin_nec);
    }
}

/// Smallest eigenvalue of `sum_j theta_j theta_j'` over a direction subset.
fn subset_min_eigen(dirs: &[DVector<f64>], subset: &[usize]) -> f64 {
    if subset.len() == 2 && dirs[subset[0]].len() == 2 {
        let c = dirs[subset[0]].dot(&dirs[subset[1]]).abs().min(1.0);
        return 1.0 - c;
    }
    let b = block(dirs, subset);
    let gram = b.transpose() * &b;
    gram.symmetric_eigenvalues().min().max(0.0)
}

/// Minimum over `p`-subsets of non-center points of the smallest eigenvalue of
/// the sum of their direction outer products.
pub fn rho_m(data: &Dataset) -> Result<f64> {
    let p = data.dim();
    let ds = directions(data);
    if ds.directions.len() < p {
        return Err(Error::TooFewPoints {
            required: p,
            actual: ds.directions.len(),
        });
    }
    let dirs = &ds.directions;
    let mut best = f64::INFINITY;
    let _ = for_each_combination(dirs.len(), p, |s| {
        let v = subset_min_eigen(dirs, s);
        if v < best {
            best = v;
        }
        if best == 0.0 {
            ControlFlow::Break(())
        } else {
            ControlFlow::Continue(())
        }
    });
    Ok(best)
}

/// Smallest eigenvalue contributed by adding one new direction to an existing
/// set: the minimum over `p`-subsets that contain `extra`.
pub(crate) fn rho_with_new_direction(existing: &[DVector<f64>], extra: &DVector<f64>) -> f64 {
    let p = extra.len();
    if existing.len() + 1 < p {
        return f64::INFINITY;
    }
    let mut all: Vec<DVector<f64>> = existing.to_vec();
    all.push(extra.clone());
    let last = existing.len();
    let mut best = f64::INFINITY;
    let _ = for_each_combination(existing.len(), p - 1, |s| {
        let mut subset = s.to_vec();
        subset.push(last);
        best = best.min(subset_min_eigen(&all, &subset));
        ControlFlow::Continue(())
    });
    best
}

/// Minimum squared distance of the contaminating points from the center.
pub fn r_m(contamination: &Dataset) -> Result<f64> {
    contamination
        .centered()
        .iter()
        .map(|z| z.norm_squared())
        .reduce(f64::min)
        .ok_or(Error::EmptyContamination)
}
