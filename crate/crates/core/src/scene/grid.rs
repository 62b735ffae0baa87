use nalgebra::Vector3;

use crate::error::{DipError, Result};

/// Regular lattice of signed distances, x-fastest row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SdfGrid {
    pub dims: [usize; 3],
    pub origin: Vector3<f64>,
    pub spacing: f64,
    pub values: Vec<f32>,
}

/// SDF grid plus floor height and the walkable mask over the grid's xy lattice.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneField {
    pub sdf: SdfGrid,
    pub floor_height: f64,
    /// `nx * ny` flags, x fastest. `None` means every cell is walkable.
    pub walkable: Option<Vec<bool>>,
}

impl SdfGrid {
    pub fn new(
        dims: [usize; 3],
        origin: Vector3<f64>,
        spacing: f64,
        values: Vec<f32>,
    ) -> Result<Self> {
        if dims.iter().any(|&d| d < 2) {
            return Err(DipError::Validation(format!(
                "grid dims {dims:?} must be >= 2 per axis"
            )));
        }
        if !(spacing > 0.0 && spacing.is_finite()) {
            return Err(DipError::Validation(format!(
                "grid spacing {spacing} must be positive"
            )));
        }
        let n = dims[0] * dims[1] * dims[2];
        if values.len() != n {
            return Err(DipError::Shape {
                what: "sdf values",
                expected: n,
                actual: values.len(),
            });
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(DipError::Validation(
                "sdf contains non-finite values".into(),
            ));
        }
        Ok(SdfGrid {
            dims,
            origin,
            spacing,
            values,
        })
    }

    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    pub fn node(&self, i: usize, j: usize, k: usize) -> Vector3<f64> {
        self.origin + Vector3::new(i as f64, j as f64, k as f64) * self.spacing
    }

    pub fn at(&self, i: usize, j: usize, k: usize) -> f64 {
        self.values[self.index(i, j, k)] as f64
    }

    /// Cell used by [`SdfGrid::query`] and the fractional position inside it.
    pub fn locate(&self, p: &Vector3<f64>) -> ([usize; 3], [f64; 3]) {
        let mut cell = [0usize; 3];
        let mut frac = [0.0f64; 3];
        for a in 0..3 {
            let u = (p[a] - self.origin[a]) / self.spacing;
            let max = (self.dims[a] - 1) as f64;
            let u = if u.is_nan() { 0.0 } else { u.clamp(0.0, max) };
            let c = (u.floor() as usize).min(self.dims[a] - 2);
            cell[a] = c;
            frac[a] = u - c as f64;
        }
        (cell, frac)
    }

    /// Trilinear value and its analytic gradient. Points outside the lattice
    /// are clamped onto the boundary; the gradient is that of the boundary cell.
    pub fn query(&self, p: &Vector3<f64>) -> (f64, Vector3<f64>) {
        let ([i, j, k], frac) = self.locate(p);
        let [fx, fy, fz] = frac;
        let c000 = self.at(i, j, k);
        let c100 = self.at(i + 1, j, k);
        let c010 = self.at(i, j + 1, k);
        let c110 = self.at(i + 1, j + 1, k);
        let c001 = self.at(i, j, k + 1);
        let c101 = self.at(i + 1, j, k + 1);
        let c011 = self.at(i, j + 1, k + 1);
        let c111 = self.at(i + 1, j + 1, k + 1);

        // this lerp form is exact at both ends, so nodes return stored values
        let lerp = |a: f64, b: f64, t: f64| a * (1.0 - t) + b * t;
        let c00 = lerp(c000, c100, fx);
        let c10 = lerp(c010, c110, fx);
        let c01 = lerp(c001, c101, fx);
        let c11 = lerp(c011, c111, fx);
        let c0 = lerp(c00, c10, fy);
        let c1 = lerp(c01, c11, fy);
        let value = lerp(c0, c1, fz);

        let dx0 = (c100 - c000) + ((c110 - c010) - (c100 - c000)) * fy;
        let dx1 = (c101 - c001) + ((c111 - c011) - (c101 - c001)) * fy;
        let dx = dx0 + (dx1 - dx0) * fz;
        let dy = (c10 - c00) + ((c11 - c01) - (c10 - c00)) * fz;
        let dz = c1 - c0;
        (value, Vector3::new(dx, dy, dz) / self.spacing)
    }
}

impl SceneField {
    pub fn new(sdf: SdfGrid, floor_height: f64, walkable: Option<Vec<bool>>) -> Result<Self> {
        if let Some(w) = &walkable {
            let n = sdf.dims[0] * sdf.dims[1];
            if w.len() != n {
                return Err(DipError::Shape {
                    what: "walkable mask",
                    expected: n,
                    actual: w.len(),
                });
            }
        }
        if !floor_height.is_finite() {
            return Err(DipError::Validation("floor height must be finite".into()));
        }
        Ok(SceneField {
            sdf,
            floor_height,
            walkable,
        })
    }

    pub fn sdf_query(&self, p: &Vector3<f64>) -> (f64, Vector3<f64>) {
        self.sdf.query(p)
    }

    /// Walkability of the lattice column nearest to `p`; false off the grid.
    pub fn is_walkable(&self, p: &Vector3<f64>) -> bool {
        let g = &self.sdf;
        let mut ij = [0usize; 2];
        for a in 0..2 {
            let u = ((p[a] - g.origin[a]) / g.spacing).round();
            if !(u >= 0.0 && u <= (g.dims[a] - 1) as f64) {
                return false;
            }
            ij[a] = u as usize;
        }
        match &self.walkable {
            Some(w) => w[ij[0] + g.dims[0] * ij[1]],
            None => true,
        }
    }
}
