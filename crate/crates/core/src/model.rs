//! Core value types: datasets about a fixed center, weight functions, and
//! symmetric matrices.
//!
//! The estimator solves
//!
//! ```text
//! V = ave{ u(s_i) (x_i - t)(x_i - t)' },   s_i = (x_i - t)' V^{-1} (x_i - t)
//! ```
//!
//! for a weight function `u`. With `psi(s) = s u(s)` and `K = sup psi`,
//! every supported weight family satisfies: `u` non-negative, non-increasing
//! and continuous; `psi` bounded, non-decreasing and strictly increasing
//! wherever `psi(s) < K`; and `K > p`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `n` points in `R^p` together with the fixed center `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    points: Vec<DVector<f64>>,
    center: DVector<f64>,
    label: Option<String>,
}

impl Dataset {
    pub fn new(points: Vec<DVector<f64>>, center: DVector<f64>) -> Result<Self> {
        let p = center.len();
        if p == 0 {
            return Err(Error::InvalidDataset("dimension must be at least 1".into()));
        }
        if points.is_empty() {
            return Err(Error::EmptyDataset);
        }
        for x in &points {
            if x.len() != p {
                return Err(Error::DimensionMismatch {
                    expected: p,
                    actual: x.len(),
                });
            }
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidDataset("non-finite coordinate".into()));
            }
        }
        if center.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidDataset("non-finite center".into()));
        }
        Ok(Self {
            points,
            center,
            label: None,
        })
    }

    /// Dataset about the origin.
    pub fn about_origin(points: Vec<DVector<f64>>) -> Result<Self> {
        let p = points.first().map(|x| x.len()).ok_or(Error::EmptyDataset)?;
        Self::new(points, DVector::zeros(p))
    }

    /// Convenience constructor from plain rows.
    pub fn from_rows(rows: &[Vec<f64>], center: &[f64]) -> Result<Self> {
        let points = rows
            .iter()
            .map(|r| DVector::from_column_slice(r))
            .collect();
        Self::new(points, DVector::from_column_slice(center))
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = Some(label.into());
        self
    }

    pub fn label(&self) -> Option<&str> {
        self.label.as_deref()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn points(&self) -> &[DVector<f64>] {
        &self.points
    }

    pub fn center(&self) -> &DVector<f64> {
        &self.center
    }

    /// Points relative to the center, `x_i - t`.
    pub fn centered(&self) -> Vec<DVector<f64>> {
        self.points.iter().map(|x| x - &self.center).collect()
    }

    /// Centered points as the columns of a `p x n` matrix.
    pub fn centered_matrix(&self) -> DMatrix<f64> {
        let p = self.dim();
        let mut m = DMatrix::zeros(p, self.len());
        for (j, x) in self.points.iter().enumerate() {
            for i in 0..p {
                m[(i, j)] = x[i] - self.center[i];
            }
        }
        m
    }

    /// `Z = X ∪ Y`; both sets must share dimension and center.
    pub fn union(&self, other: &Dataset) -> Result<Dataset> {
        if other.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: other.dim(),
            });
        }
        if other.center != self.center {
            return Err(Error::InvalidDataset(
                "contamination must share the center of the good data".into(),
            ));
        }
        let mut points = self.points.clone();
        points.extend(other.points.iter().cloned());
        Ok(Dataset {
            points,
            center: self.center.clone(),
            label: self.label.clone(),
        })
    }

    /// Number of points exactly equal to the center.
    pub fn center_count(&self) -> usize {
        self.points.iter().filter(|x| **x == self.center).count()
    }

    /// Image under `x -> A (x - t)`, about the origin.
    pub fn transformed(&self, a: &DMatrix<f64>) -> Result<Dataset> {
        if a.nrows() != self.dim() || a.ncols() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: a.nrows(),
            });
        }
        let points = self.centered().iter().map(|z| a * z).collect();
        Dataset::new(points, DVector::zeros(self.dim()))
    }
}

/// Weight function family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum WeightFamily {
    /// `u(s) = (p + nu)/(nu + s)`, the multivariate-t weights.
    T { nu: f64 },
    /// `u(s) = c min(1, s0/s)`.
    Huber { c: f64, s0: f64 },
}

/// A weight function `u` for dimension `p`, with its derived constant `K`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WeightSpec {
    family: WeightFamily,
    dim: usize,
    k: f64,
}

impl WeightSpec {
    pub fn new(family: WeightFamily, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidWeight("dimension must be at least 1".into()));
        }
        let p = dim as f64;
        let k = match family {
            WeightFamily::T { nu } => {
                if !(nu > 0.0 && nu.is_finite()) {
                    return Err(Error::InvalidWeight(format!("nu must be positive, got {nu}")));
                }
                p + nu
            }
            WeightFamily::Huber { c, s0 } => {
                if !(c > 0.0 && c.is_finite() && s0 > 0.0 && s0.is_finite()) {
                    return Err(Error::InvalidWeight(format!(
                        "c and s0 must be positive, got c={c}, s0={s0}"
                    )));
                }
                c * s0
            }
        };
        if k <= p {
            return Err(Error::InvalidWeight(format!("K = {k} must exceed p = {dim}")));
        }
        Ok(Self { family, dim, k })
    }

    pub fn t(dim: usize, nu: f64) -> Result<Self> {
        Self::new(WeightFamily::T { nu }, dim)
    }

    pub fn huber(dim: usize, c: f64, s0: f64) -> Result<Self> {
        Self::new(WeightFamily::Huber { c, s0 }, dim)
    }

    /// The experiment default: t weights with `nu = p`, so `K = 2p`.
    pub fn default_for(dim: usize) -> Self {
        Self::t(dim, dim as f64).expect("nu = p > 0 always gives K = 2p > p")
    }

    pub fn family(&self) -> WeightFamily {
        self.family
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `K = sup_{s>0} psi(s)`.
    pub fn k(&self) -> f64 {
        self.k
    }

    /// `u(0)`, the largest weight.
    pub fn u_max(&self) -> f64 {
        self.u(0.0)
    }

    pub fn u(&self, s: f64) -> f64 {
        debug_assert!(s >= 0.0);
        match self.family {
            WeightFamily::T { nu } => (self.dim as f64 + nu) / (nu + s),
            WeightFamily::Huber { c, s0 } => {
                if s <= s0 {
                    c
                } else {
                    c * s0 / s
                }
            }
        }
    }

    pub fn psi(&self, s: f64) -> f64 {
        debug_assert!(s >= 0.0);
        match self.family {
            WeightFamily::T { nu } => {
                if s.is_infinite() {
                    self.k
                } else {
                    (self.dim as f64 + nu) * s / (nu + s)
                }
            }
            WeightFamily::Huber { c, s0 } => c * s.min(s0),
        }
    }

    /// Whether `psi` reaches `K` at a finite distance.
    pub fn attains_k(&self) -> bool {
        matches!(self.family, WeightFamily::Huber { .. })
    }
}

/// Weight `u(s)`.
pub fn weight_u(spec: &WeightSpec, s: f64) -> f64 {
    spec.u(s)
}

/// Score `psi(s) = s u(s)`.
pub fn psi(spec: &WeightSpec, s: f64) -> f64 {
    spec.psi(s)
}

/// A symmetric `p x p` matrix stored as its packed upper triangle.
#[derive(Debug, Clone, PartialEq)]
pub struct ScatterMatrix {
    dim: usize,
    upper: Vec<f64>,
}

impl ScatterMatrix {
    /// Packs the symmetric part `(M + M')/2`.
    pub fn from_matrix(m: &DMatrix<f64>) -> Self {
        assert_eq!(m.nrows(), m.ncols(), "scatter matrix must be square");
        let dim = m.nrows();
        let mut upper = Vec::with_capacity(dim * (dim + 1) / 2);
        for i in 0..dim {
            for j in i..dim {
                upper.push(0.5 * (m[(i, j)] + m[(j, i)]));
            }
        }
        Self { dim, upper }
    }

    pub fn identity(dim: usize) -> Self {
        Self::from_matrix(&DMatrix::identity(dim, dim))
    }

    pub fn scaled_identity(dim: usize, c: f64) -> Self {
        Self::from_matrix(&(DMatrix::identity(dim, dim) * c))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn index(&self, i: usize, j: usize) -> usize {
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        i * self.dim - i * (i + 1) / 2 + j
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.upper[self.index(i, j)]
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.dim, self.dim, |i, j| self.get(i, j))
    }

    /// Row-major entries of the full matrix.
    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.dim)
            .map(|i| (0..self.dim).map(|j| self.get(i, j)).collect())
            .collect()
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim).map(|i| self.get(i, i)).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.to_matrix().norm()
    }

    pub fn is_positive_definite(&self) -> bool {
        self.to_matrix().cholesky().is_some()
    }

    /// Eigenvalues in descending order.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut ev: Vec<f64> = self.to_matrix().symmetric_eigenvalues().iter().copied().collect();
        ev.sort_by(|a, b| b.total_cmp(a));
        ev
    }

    /// `a' V a`.
    pub fn quadratic_form(&self, a: &DVector<f64>) -> f64 {
        (a.transpose() * self.to_matrix() * a)[(0, 0)]
    }

    /// `a' V^{-1} a` via a Cholesky solve.
    pub fn inverse_quadratic_form(&self, a: &DVector<f64>) -> Result<f64> {
        let chol = self.to_matrix().cholesky().ok_or(Error::NotPositiveDefinite)?;
        let w = chol
            .l()
            .solve_lower_triangular(a)
            .ok_or(Error::NotPositiveDefinite)?;
        Ok(w.norm_squared())
    }
}

/// Outcome of the fixed-point solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Status {
    Converged,
    Nonexistent,
    MaxIter,
    DegenerateInput,
}

impl Status {
    pub fn as_str(&self) -> &'static str {
        match self {
            Status::Converged => "CONVERGED",
            Status::Nonexistent => "NONEXISTENT",
            Status::MaxIter => "MAX_ITER",
            Status::DegenerateInput => "DEGENERATE_INPUT",
        }
    }
}

impl std::fmt::Display for Status {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Solution of the defining equation together with the per-point distances.
#[derive(Debug, Clone)]
pub struct ScatterEstimate {
    pub v: ScatterMatrix,
    pub status: Status,
    pub iterations: usize,
    /// Relative Frobenius residual `||V - F(V)|| / ||V||` at the returned `V`.
    pub residual: f64,
    /// `|ave psi(s_i) - p|` at the returned `V`.
    pub trace_gap: f64,
    pub distances: Vec<f64>,
    pub weights: Vec<f64>,
    /// Set when the solver consulted the existence conditions.
    pub existence: Option<crate::geometry::ExistenceReport>,
}
