//! Contaminating sets `Y` and the restricted contamination classes.
//!
//! Every stochastic generator draws from `ChaCha8Rng::seed_from_u64(seed)`.
//! Directions are normalized vectors of `StandardNormal` draws and uniform
//! variates come from `Rng::random::<f64>()`, so a seed fixes the output.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{self, GeometryOptions};
use crate::model::Dataset;

/// Maximum number of candidate draws per point of a general-position cloud.
pub const REJECTION_ATTEMPTS: usize = 1000;

/// Smallest `rho` accepted for a newly drawn cloud direction.
const CLOUD_RHO_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ContaminationKind {
    /// `m` copies of the center.
    CenterMass,
    /// `m` copies of `t + r theta`.
    CoplanarPointMass { direction: Vec<f64>, radius: f64 },
    /// `t + r_i theta_i` with `r_i` in `[r_min, 2 r_min)`, jointly in general
    /// position with the good data.
    GeneralPositionCloud { r_min: f64, seed: u64 },
    /// Points of the plane `t + span(basis)` with squared distance from `t`
    /// uniform in `[r_min, bound]`. An empty basis means the line through the
    /// first good point.
    CoplanarBounded {
        basis: Vec<Vec<f64>>,
        r_min: f64,
        bound: f64,
        seed: u64,
    },
    /// `x_anchor + w_i` with `|w_i| = offset`.
    NearPointReplicates { anchor: usize, offset: f64, seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContaminationSpec {
    #[serde(flatten)]
    pub kind: ContaminationKind,
    pub m: usize,
}

impl ContaminationSpec {
    pub fn new(kind: ContaminationKind, m: usize) -> Self {
        Self { kind, m }
    }

    pub fn center_mass(m: usize) -> Self {
        Self::new(ContaminationKind::CenterMass, m)
    }

    pub fn coplanar_point_mass(direction: &[f64], radius: f64, m: usize) -> Self {
        Self::new(
            ContaminationKind::CoplanarPointMass {
                direction: direction.to_vec(),
                radius,
            },
            m,
        )
    }

    pub fn general_position_cloud(r_min: f64, seed: u64, m: usize) -> Self {
        Self::new(ContaminationKind::GeneralPositionCloud { r_min, seed }, m)
    }

    pub fn coplanar_bounded(basis: Vec<Vec<f64>>, r_min: f64, bound: f64, seed: u64, m: usize) -> Self {
        Self::new(
            ContaminationKind::CoplanarBounded {
                basis,
                r_min,
                bound,
                seed,
            },
            m,
        )
    }

    pub fn near_point_replicates(anchor: usize, offset: f64, seed: u64, m: usize) -> Self {
        Self::new(ContaminationKind::NearPointReplicates { anchor, offset, seed }, m)
    }

    pub fn with_m(mut self, m: usize) -> Self {
        self.m = m;
        self
    }

    /// Replaces the size parameter that a sweep drives toward infinity (or
    /// zero): the radius of a point mass, `r_min` of a cloud, the bound `B` of
    /// bounded coplanar contamination and the offset of near replicates.
    /// Center mass has no magnitude.
    pub fn with_magnitude(mut self, magnitude: f64) -> Self {
        match &mut self.kind {
            ContaminationKind::CenterMass => {}
            ContaminationKind::CoplanarPointMass { radius, .. } => *radius = magnitude,
            ContaminationKind::GeneralPositionCloud { r_min, .. } => *r_min = magnitude,
            ContaminationKind::CoplanarBounded { bound, .. } => *bound = magnitude,
            ContaminationKind::NearPointReplicates { offset, .. } => *offset = magnitude,
        }
        self
    }

    pub fn with_seed(mut self, new_seed: u64) -> Self {
        match &mut self.kind {
            ContaminationKind::GeneralPositionCloud { seed, .. }
            | ContaminationKind::CoplanarBounded { seed, .. }
            | ContaminationKind::NearPointReplicates { seed, .. } => *seed = new_seed,
            _ => {}
        }
        self
    }

    pub fn magnitude(&self) -> Option<f64> {
        match &self.kind {
            ContaminationKind::CenterMass => None,
            ContaminationKind::CoplanarPointMass { radius, .. } => Some(*radius),
            ContaminationKind::GeneralPositionCloud { r_min, .. } => Some(*r_min),
            ContaminationKind::CoplanarBounded { bound, .. } => Some(*bound),
            ContaminationKind::NearPointReplicates { offset, .. } => Some(*offset),
        }
    }

    /// Whether the generated points may include the center itself.
    pub fn may_contain_center(&self) -> bool {
        matches!(self.kind, ContaminationKind::CenterMass)
    }

    pub fn validate(&self, p: usize) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidContamination(msg.into()));
        if self.m == 0 {
            return bad("m must be at least 1");
        }
        let positive = |v: f64| v.is_finite() && v > 0.0;
        match &self.kind {
            ContaminationKind::CenterMass => Ok(()),
            ContaminationKind::CoplanarPointMass { direction, radius } => {
                unit(direction, p)?;
                if !radius.is_finite() {
                    return bad("radius must be finite");
                }
                Ok(())
            }
            ContaminationKind::GeneralPositionCloud { r_min, .. } => {
                if !positive(*r_min) {
                    return bad("r_min must be positive");
                }
                Ok(())
            }
            ContaminationKind::CoplanarBounded { basis, r_min, bound, .. } => {
                if !positive(*r_min) || !positive(*bound) || r_min > bound {
                    return bad("need 0 < r_min <= B");
                }
                if !basis.is_empty() {
                    orthonormal_basis(basis, p)?;
                }
                Ok(())
            }
            ContaminationKind::NearPointReplicates { offset, .. } => {
                if !(offset.is_finite() && *offset >= 0.0) {
                    return bad("offset must be finite and non-negative");
                }
                Ok(())
            }
        }
    }
}

fn unit(v: &[f64], p: usize) -> Result<DVector<f64>> {
    if v.len() != p {
        return Err(Error::DimensionMismatch {
            expected: p,
            actual: v.len(),
        });
    }
    let d = DVector::from_column_slice(v);
    let norm = d.norm();
    if !(norm > 0.0 && norm.is_finite()) {
        return Err(Error::InvalidContamination("direction must be non-zero".into()));
    }
    Ok(d / norm)
}

/// Gram-Schmidt on the supplied plane basis; the plane must be proper.
fn orthonormal_basis(basis: &[Vec<f64>], p: usize) -> Result<Vec<DVector<f64>>> {
    if basis.len() >= p {
        return Err(Error::InvalidContamination("plane basis must have fewer than p vectors".into()));
    }
    let mut out: Vec<DVector<f64>> = Vec::with_capacity(basis.len());
    for b in basis {
        let mut v = unit(b, p)?;
        for q in &out {
            let c = q.dot(&v);
            v -= q * c;
        }
        let norm = v.norm();
        if norm < 1e-9 {
            return Err(Error::InvalidContamination("plane basis is dependent".into()));
        }
        out.push(v / norm);
    }
    Ok(out)
}

fn random_direction(rng: &mut ChaCha8Rng, p: usize) -> DVector<f64> {
    loop {
        let v = DVector::from_fn(p, |_, _| rng.sample::<f64, _>(StandardNormal));
        let norm = v.norm();
        if norm > 1e-12 {
            return v / norm;
        }
    }
}

/// The `m` contaminating points described by `spec`, about the center of `x`.
pub fn generate(spec: &ContaminationSpec, x: &Dataset) -> Result<Dataset> {
    let p = x.dim();
    spec.validate(p)?;
    let t = x.center().clone();
    let m = spec.m;
    let points = match &spec.kind {
        ContaminationKind::CenterMass => vec![t.clone(); m],
        ContaminationKind::CoplanarPointMass { direction, radius } => {
            let y = &t + unit(direction, p)? * *radius;
            vec![y; m]
        }
        ContaminationKind::GeneralPositionCloud { r_min, seed } => general_position_cloud(x, *r_min, *seed, m)?,
        ContaminationKind::CoplanarBounded {
            basis,
            r_min,
            bound,
            seed,
        } => {
            let basis = if basis.is_empty() {
                let z = &x.points()[0] - &t;
                if z.norm() == 0.0 {
                    return Err(Error::InvalidContamination(
                        "first good point sits at the center; supply a basis".into(),
                    ));
                }
                vec![z.normalize()]
            } else {
                orthonormal_basis(basis, p)?
            };
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            (0..m)
                .map(|_| {
                    let coef = random_direction(&mut rng, basis.len());
                    let sq = r_min + (bound - r_min) * rng.random::<f64>();
                    let mut y = t.clone();
                    for (c, b) in coef.iter().zip(&basis) {
                        y += b * (c * sq.sqrt());
                    }
                    y
                })
                .collect()
        }
        ContaminationKind::NearPointReplicates { anchor, offset, seed } => {
            let anchor_point = x.points().get(*anchor).ok_or_else(|| {
                Error::InvalidContamination(format!("anchor index {anchor} out of range"))
            })?;
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            (0..m)
                .map(|_| anchor_point + random_direction(&mut rng, p) * *offset)
                .collect()
        }
    };
    Dataset::new(points, t)
}

fn general_position_cloud(x: &Dataset, r_min: f64, seed: u64, m: usize) -> Result<Vec<DVector<f64>>> {
    let p = x.dim();
    let t = x.center();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut dirs = geometry::directions(x).directions;
    let mut out = Vec::with_capacity(m);
    for _ in 0..m {
        let mut accepted = false;
        for _ in 0..REJECTION_ATTEMPTS {
            let theta = random_direction(&mut rng, p);
            let r = r_min * (1.0 + rng.random::<f64>());
            if p == 1 || geometry::rho_with_new_direction(&dirs, &theta) > CLOUD_RHO_FLOOR {
                out.push(t + &theta * r);
                dirs.push(theta);
                accepted = true;
                break;
            }
        }
        if !accepted {
            return Err(Error::RejectionFailed {
                attempts: REJECTION_ATTEMPTS,
            });
        }
    }
    Ok(out)
}

/// Membership of `Y` in the restricted classes, with the quantities used.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Membership {
    pub in_c1: bool,
    pub in_c2: bool,
    /// Literal class: `r_m(Y) < B`.
    pub in_c3: bool,
    /// Variant bounding every point: `max |y - t|^2 < B`.
    pub in_c3_max: bool,
    pub rho_m: f64,
    pub r_m: f64,
    pub max_sq_distance: f64,
}

pub fn class_membership(y: &Dataset, x: &Dataset, rho: f64, r: f64, b: f64) -> Result<Membership> {
    let z = x.union(y)?;
    let rho_m = geometry::rho_m(&z).unwrap_or(0.0);
    let r_m = geometry::r_m(y)?;
    let max_sq_distance = y
        .centered()
        .iter()
        .map(|v| v.norm_squared())
        .fold(0.0, f64::max);
    Ok(Membership {
        in_c1: rho_m > rho,
        in_c2: r_m > r,
        in_c3: r_m < b,
        in_c3_max: max_sq_distance < b,
        rho_m,
        r_m,
        max_sq_distance,
    })
}

/// General-position check of `X ∪ Y` with default tolerances.
pub fn jointly_general(y: &Dataset, x: &Dataset) -> Result<bool> {
    Ok(geometry::is_general_position_with(&x.union(y)?, &GeometryOptions::default()))
}
