use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::sym_eigen;

/// Quantile of the χ² distribution with two degrees of freedom.
pub fn chi2_2_quantile(level: f64) -> f64 {
    -2.0 * (1.0 - level).ln()
}

/// Level set `{x : (x - c)ᵀ C⁻¹ (x - c) ≤ q}` of a 2×2 covariance `C`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ellipse {
    pub params: [String; 2],
    pub center: [f64; 2],
    /// Major then minor semi-axis.
    pub semi_axes: [f64; 2],
    /// Angle of the major axis from the first parameter's axis (radians).
    pub angle: f64,
    pub level: f64,
    /// Correlation of the marginal covariance.
    pub correlation: f64,
}

impl Ellipse {
    /// `cov` is the 2×2 marginal, row-major.
    pub fn from_covariance(params: [String; 2], center: [f64; 2], cov: [f64; 4], level: f64) -> Result<Self> {
        if !(level > 0.0 && level < 1.0) {
            return Err(Error::InvalidArgument(format!("confidence level {level} not in (0, 1)")));
        }
        let scale = cov[0].abs().max(cov[3].abs()).max(f64::MIN_POSITIVE);
        let (vals, vecs) = sym_eigen(&cov, 2);
        if vals[0] < -1e-10 * scale || !vals.iter().all(|v| v.is_finite()) {
            return Err(Error::NotPsd { min_pivot: vals[0] });
        }
        let q = chi2_2_quantile(level);
        // Eigenvalues ascending, eigenvectors in columns.
        let major = (vals[1].max(0.0) * q).sqrt();
        let minor = (vals[0].max(0.0) * q).sqrt();
        // Major axis is the eigenvector of the larger eigenvalue (column 1),
        // reported in (-π/2, π/2].
        let mut angle = vecs[3].atan2(vecs[1]);
        if angle > PI / 2.0 {
            angle -= PI;
        } else if angle <= -PI / 2.0 {
            angle += PI;
        }
        Ok(Self {
            params,
            center,
            semi_axes: [major, minor],
            angle,
            level,
            correlation: cov[1] / (cov[0] * cov[3]).sqrt(),
        })
    }

    pub fn area(&self) -> f64 {
        PI * self.semi_axes[0] * self.semi_axes[1]
    }

    /// `points` vertices around the ellipse (the first is not repeated).
    pub fn polyline(&self, points: usize, center: [f64; 2]) -> Vec<[f64; 2]> {
        let (c, s) = (self.angle.cos(), self.angle.sin());
        (0..points)
            .map(|k| {
                let phi = 2.0 * PI * k as f64 / points as f64;
                let (u, v) = (self.semi_axes[0] * phi.cos(), self.semi_axes[1] * phi.sin());
                [center[0] + c * u - s * v, center[1] + s * u + c * v]
            })
            .collect()
    }
}
