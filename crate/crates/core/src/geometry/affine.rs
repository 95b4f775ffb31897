use serde::{Deserialize, Serialize};

use super::GeometryError;

/// Smallest admissible |det| of the 3x3 block.
pub const MIN_DETERMINANT: f64 = 1e-9;

/// 4x4 voxel-to-world transform, row-major, mapping `(i, j, k, 1)` to
/// physical `(x, y, z, 1)` in millimetres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineTransform {
    m: [[f64; 4]; 4],
}

impl AffineTransform {
    /// Validates and normalizes a raw matrix; the last row is forced to
    /// `(0, 0, 0, 1)`.
    pub fn new(mut m: [[f64; 4]; 4]) -> Result<Self, GeometryError> {
        m[3] = [0.0, 0.0, 0.0, 1.0];
        if m.iter().flatten().any(|v| !v.is_finite()) {
            return Err(GeometryError::NonFiniteAffine);
        }
        let a = Self { m };
        let det = a.det3();
        if det.abs() < MIN_DETERMINANT {
            return Err(GeometryError::DegenerateAffine { det });
        }
        Ok(a)
    }

    /// Builds an affine from three direction columns and a translation.
    pub fn from_columns(cols: [[f64; 3]; 3], translation: [f64; 3]) -> Result<Self, GeometryError> {
        let mut m = [[0.0; 4]; 4];
        for r in 0..3 {
            for (c, col) in cols.iter().enumerate() {
                m[r][c] = col[r];
            }
            m[r][3] = translation[r];
        }
        Self::new(m)
    }

    pub fn identity() -> Self {
        Self::diagonal([1.0; 3], [0.0; 3]).expect("identity is valid")
    }

    pub fn diagonal(scales: [f64; 3], translation: [f64; 3]) -> Result<Self, GeometryError> {
        let mut cols = [[0.0; 3]; 3];
        for (i, s) in scales.iter().enumerate() {
            cols[i][i] = *s;
        }
        Self::from_columns(cols, translation)
    }

    pub fn matrix(&self) -> &[[f64; 4]; 4] {
        &self.m
    }

    /// Column `c` (0..3) of the 3x3 block.
    pub fn column(&self, c: usize) -> [f64; 3] {
        [self.m[0][c], self.m[1][c], self.m[2][c]]
    }

    pub fn columns(&self) -> [[f64; 3]; 3] {
        [self.column(0), self.column(1), self.column(2)]
    }

    pub fn translation(&self) -> [f64; 3] {
        [self.m[0][3], self.m[1][3], self.m[2][3]]
    }

    pub fn det3(&self) -> f64 {
        let m = &self.m;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    /// Physical position of a (possibly fractional) voxel index.
    pub fn apply(&self, idx: [f64; 3]) -> [f64; 3] {
        let mut out = [0.0; 3];
        for (r, o) in out.iter_mut().enumerate() {
            let row = &self.m[r];
            *o = row[0] * idx[0] + row[1] * idx[1] + row[2] * idx[2] + row[3];
        }
        out
    }

    pub fn apply_index(&self, idx: [usize; 3]) -> [f64; 3] {
        self.apply([idx[0] as f64, idx[1] as f64, idx[2] as f64])
    }

    /// Maximum absolute element difference against `other`.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.m
            .iter()
            .flatten()
            .zip(other.m.iter().flatten())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn approx_eq(&self, other: &Self, tol: f64) -> bool {
        self.max_abs_diff(other) <= tol
    }
}

impl Default for AffineTransform {
    fn default() -> Self {
        Self::identity()
    }
}

pub(crate) fn norm(v: [f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

pub(crate) fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub(crate) fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}
