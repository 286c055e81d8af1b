//! Closed convex constraint sets and their projections.
//!
//! Two families are supported: Euclidean balls and the unit simplex. The
//! simplex comes with two projection rules. `Exact` is the Euclidean
//! projection (nonexpansive, which the regret bounds rely on), while
//! `RenormalizeHeuristic` clips negative entries to zero and rescales to unit
//! mass, the rule used for long-only portfolios.

use nalgebra::DVector;

use crate::error::{check_dim, Error, Result};

/// Default tolerance for [`ConstraintSet::contains`].
pub const MEMBERSHIP_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SimplexProjection {
    Exact,
    RenormalizeHeuristic,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ConstraintSet {
    Ball { center: DVector<f64>, radius: f64 },
    Simplex { dim: usize, mode: SimplexProjection },
}

impl ConstraintSet {
    pub fn ball(center: DVector<f64>, radius: f64) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::invalid(format!(
                "ball radius must be positive, got {radius}"
            )));
        }
        if center.is_empty() || center.iter().any(|c| !c.is_finite()) {
            return Err(Error::invalid(
                "ball center must be a nonempty finite vector",
            ));
        }
        Ok(ConstraintSet::Ball { center, radius })
    }

    /// Ball of the given radius centered at the origin of R^dim.
    pub fn origin_ball(dim: usize, radius: f64) -> Result<Self> {
        Self::ball(DVector::zeros(dim), radius)
    }

    pub fn simplex(dim: usize, mode: SimplexProjection) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("simplex dimension must be at least 1"));
        }
        Ok(ConstraintSet::Simplex { dim, mode })
    }

    pub fn dim(&self) -> usize {
        match self {
            ConstraintSet::Ball { center, .. } => center.len(),
            ConstraintSet::Simplex { dim, .. } => *dim,
        }
    }

    /// True when the projection is the Euclidean nearest-point map.
    pub fn is_exact(&self) -> bool {
        !matches!(
            self,
            ConstraintSet::Simplex {
                mode: SimplexProjection::RenormalizeHeuristic,
                ..
            }
        )
    }

    /// Euclidean projection (or the renormalization rule for heuristic simplices).
    ///
    /// A heuristic projection of a vector with no positive entry returns
    /// [`Error::DegenerateProjection`] carrying the uniform point.
    pub fn project(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim(self.dim(), v.len())?;
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("projection input".into()));
        }
        match self {
            ConstraintSet::Ball { center, radius } => Ok(project_ball(center, *radius, v)),
            ConstraintSet::Simplex {
                mode: SimplexProjection::Exact,
                ..
            } => Ok(project_simplex_exact(v)),
            ConstraintSet::Simplex {
                mode: SimplexProjection::RenormalizeHeuristic,
                ..
            } => project_simplex_renormalize(v),
        }
    }

    /// Like [`project`](Self::project), but substitutes the fallback point for
    /// degenerate heuristic inputs and bumps `fallbacks`.
    pub fn project_lenient(&self, v: &DVector<f64>, fallbacks: &mut usize) -> Result<DVector<f64>> {
        match self.project(v) {
            Err(Error::DegenerateProjection { fallback }) => {
                log::warn!("degenerate renormalization input, using the uniform point");
                *fallbacks += 1;
                Ok(fallback)
            }
            other => other,
        }
    }

    pub fn contains(&self, v: &DVector<f64>, tol: f64) -> Result<bool> {
        check_dim(self.dim(), v.len())?;
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("membership input".into()));
        }
        Ok(match self {
            ConstraintSet::Ball { center, radius } => (v - center).norm() <= radius + tol,
            ConstraintSet::Simplex { .. } => {
                v.iter().all(|&x| x >= -tol) && (v.sum() - 1.0).abs() <= tol
            }
        })
    }

    /// Per-coordinate bounding box of the set.
    pub fn coordinate_bounds(&self) -> Vec<(f64, f64)> {
        match self {
            ConstraintSet::Ball { center, radius } => {
                center.iter().map(|c| (c - radius, c + radius)).collect()
            }
            ConstraintSet::Simplex { dim, .. } => vec![(0.0, 1.0); *dim],
        }
    }

    /// Upper bound on ||x|| over the set.
    pub fn max_norm(&self) -> f64 {
        match self {
            ConstraintSet::Ball { center, radius } => center.norm() + radius,
            ConstraintSet::Simplex { .. } => 1.0,
        }
    }

    /// A canonical interior-ish point: the center of a ball, the barycenter of a simplex.
    pub fn center_point(&self) -> DVector<f64> {
        match self {
            ConstraintSet::Ball { center, .. } => center.clone(),
            ConstraintSet::Simplex { dim, .. } => uniform(*dim),
        }
    }
}

fn uniform(n: usize) -> DVector<f64> {
    DVector::from_element(n, 1.0 / n as f64)
}

fn project_ball(center: &DVector<f64>, radius: f64, v: &DVector<f64>) -> DVector<f64> {
    let offset = v - center;
    let dist = offset.norm();
    if dist <= radius {
        v.clone()
    } else {
        center + offset * (radius / dist)
    }
}

/// Sort-and-threshold Euclidean projection onto the unit simplex.
pub fn project_simplex_exact(v: &DVector<f64>) -> DVector<f64> {
    let mut sorted: Vec<f64> = v.iter().copied().collect();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut tau = 0.0;
    for (j, &u) in sorted.iter().enumerate() {
        cumsum += u;
        let candidate = (cumsum - 1.0) / (j + 1) as f64;
        if u - candidate > 0.0 {
            tau = candidate;
        }
    }
    v.map(|x| (x - tau).max(0.0))
}

fn project_simplex_renormalize(v: &DVector<f64>) -> Result<DVector<f64>> {
    let clipped = v.map(|x| x.max(0.0));
    let mass = clipped.sum();
    if mass <= 0.0 {
        return Err(Error::DegenerateProjection {
            fallback: uniform(v.len()),
        });
    }
    Ok(clipped / mass)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dvector;

    fn close(a: &DVector<f64>, b: &DVector<f64>, tol: f64) -> bool {
        (a - b).amax() <= tol
    }

    #[test]
    fn ball_fixes_interior_and_scales_exterior() {
        let disc = ConstraintSet::origin_ball(2, 50.0).unwrap();
        assert_eq!(
            disc.project(&dvector![0.0, 0.0]).unwrap(),
            dvector![0.0, 0.0]
        );
        assert!(close(
            &disc.project(&dvector![100.0, 0.0]).unwrap(),
            &dvector![50.0, 0.0],
            1e-12
        ));
    }

    #[test]
    fn simplex_exact_vertex() {
        let s = ConstraintSet::simplex(3, SimplexProjection::Exact).unwrap();
        assert!(close(
            &s.project(&dvector![2.0, 0.0, 0.0]).unwrap(),
            &dvector![1.0, 0.0, 0.0],
            1e-12
        ));
    }

    #[test]
    fn simplex_heuristic_clips_then_normalizes() {
        let s = ConstraintSet::simplex(3, SimplexProjection::RenormalizeHeuristic).unwrap();
        let p = s.project(&dvector![-1.0, 1.0, 1.0]).unwrap();
        assert!(close(&p, &dvector![0.0, 0.5, 0.5], 1e-15));
    }

    #[test]
    fn heuristic_degenerate_carries_uniform_fallback() {
        let s = ConstraintSet::simplex(4, SimplexProjection::RenormalizeHeuristic).unwrap();
        match s.project(&dvector![-1.0, 0.0, -3.0, 0.0]) {
            Err(Error::DegenerateProjection { fallback }) => {
                assert!(close(&fallback, &DVector::from_element(4, 0.25), 0.0))
            }
            other => panic!("expected degenerate error, got {other:?}"),
        }
        let mut count = 0;
        let p = s
            .project_lenient(&dvector![-1.0, 0.0, -3.0, 0.0], &mut count)
            .unwrap();
        assert_eq!(count, 1);
        assert!((p.sum() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn membership() {
        let disc = ConstraintSet::origin_ball(2, 50.0).unwrap();
        assert!(disc.contains(&dvector![30.0, 40.0], 1e-9).unwrap());
        let s = ConstraintSet::simplex(2, SimplexProjection::Exact).unwrap();
        assert!(s.contains(&dvector![0.5, 0.5], 1e-9).unwrap());
        assert!(!s.contains(&dvector![0.6, 0.6], 1e-9).unwrap());
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let disc = ConstraintSet::origin_ball(2, 1.0).unwrap();
        assert!(matches!(
            disc.project(&dvector![1.0, 2.0, 3.0]),
            Err(Error::DimensionMismatch {
                expected: 2,
                found: 3
            })
        ));
        assert!(disc.contains(&dvector![1.0], 1e-9).is_err());
    }

    #[test]
    fn invalid_sets_are_rejected() {
        assert!(ConstraintSet::origin_ball(2, 0.0).is_err());
        assert!(ConstraintSet::origin_ball(2, -1.0).is_err());
        assert!(ConstraintSet::simplex(0, SimplexProjection::Exact).is_err());
    }
}
