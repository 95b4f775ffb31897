use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{AffineTransform, GeometryError};

/// Anatomical direction of increasing voxel index along one axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AxisLabel {
    R,
    L,
    A,
    P,
    S,
    I,
}

impl AxisLabel {
    /// Physical axis: 0 for R/L (x), 1 for A/P (y), 2 for S/I (z).
    pub fn physical_axis(self) -> usize {
        match self {
            AxisLabel::R | AxisLabel::L => 0,
            AxisLabel::A | AxisLabel::P => 1,
            AxisLabel::S | AxisLabel::I => 2,
        }
    }

    /// True for the +x, +y, +z labels (R, A, S).
    pub fn is_positive(self) -> bool {
        matches!(self, AxisLabel::R | AxisLabel::A | AxisLabel::S)
    }

    pub fn from_axis(axis: usize, positive: bool) -> Self {
        match (axis, positive) {
            (0, true) => AxisLabel::R,
            (0, false) => AxisLabel::L,
            (1, true) => AxisLabel::A,
            (1, false) => AxisLabel::P,
            (2, true) => AxisLabel::S,
            _ => AxisLabel::I,
        }
    }

    pub fn as_char(self) -> char {
        match self {
            AxisLabel::R => 'R',
            AxisLabel::L => 'L',
            AxisLabel::A => 'A',
            AxisLabel::P => 'P',
            AxisLabel::S => 'S',
            AxisLabel::I => 'I',
        }
    }

    fn from_char(c: char) -> Option<Self> {
        Some(match c.to_ascii_uppercase() {
            'R' => AxisLabel::R,
            'L' => AxisLabel::L,
            'A' => AxisLabel::A,
            'P' => AxisLabel::P,
            'S' => AxisLabel::S,
            'I' => AxisLabel::I,
            _ => return None,
        })
    }
}

/// Ordered anatomical labels of the three volume axes, e.g. `RAS`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct OrientationCode {
    axes: [AxisLabel; 3],
}

impl OrientationCode {
    pub const RAS: OrientationCode = OrientationCode {
        axes: [AxisLabel::R, AxisLabel::A, AxisLabel::S],
    };

    pub fn new(axes: [AxisLabel; 3]) -> Result<Self, GeometryError> {
        let mut seen = [false; 3];
        for a in axes {
            let p = a.physical_axis();
            if seen[p] {
                return Err(GeometryError::InvalidOrientationCode(
                    axes.iter().map(|a| a.as_char()).collect(),
                ));
            }
            seen[p] = true;
        }
        Ok(Self { axes })
    }

    pub fn axes(&self) -> [AxisLabel; 3] {
        self.axes
    }

    /// Volume axis whose label lies on physical axis `physical`.
    pub fn volume_axis_of(&self, physical: usize) -> usize {
        self.axes
            .iter()
            .position(|a| a.physical_axis() == physical)
            .expect("orientation codes cover all three physical axes")
    }
}

impl Default for OrientationCode {
    fn default() -> Self {
        Self::RAS
    }
}

impl fmt::Display for OrientationCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for a in self.axes {
            write!(f, "{}", a.as_char())?;
        }
        Ok(())
    }
}

impl FromStr for OrientationCode {
    type Err = GeometryError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || GeometryError::InvalidOrientationCode(s.to_string());
        let labels: Vec<AxisLabel> = s
            .trim()
            .chars()
            .map(AxisLabel::from_char)
            .collect::<Option<_>>()
            .ok_or_else(bad)?;
        let axes: [AxisLabel; 3] = labels.try_into().map_err(|_| bad())?;
        Self::new(axes).map_err(|_| bad())
    }
}

impl Serialize for OrientationCode {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for OrientationCode {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Labels each voxel axis by the physical axis its column points along most.
///
/// Ties for the dominant component, or two columns landing on the same
/// physical axis, are reported as [`GeometryError::AmbiguousOrientation`].
pub fn orientation_of(affine: &AffineTransform) -> Result<OrientationCode, GeometryError> {
    let mut labels = [AxisLabel::R; 3];
    for (c, label) in labels.iter_mut().enumerate() {
        let col = affine.column(c);
        let mags = col.map(f64::abs);
        let mut best = 0;
        for p in 1..3 {
            if mags[p] > mags[best] {
                best = p;
            }
        }
        let tied = (0..3).any(|p| p != best && mags[p] == mags[best]);
        if tied {
            return Err(GeometryError::AmbiguousOrientation { column: c });
        }
        *label = AxisLabel::from_axis(best, col[best] > 0.0);
    }
    OrientationCode::new(labels).map_err(|_| GeometryError::AmbiguousOrientation { column: 2 })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn code(s: &str) -> OrientationCode {
        s.parse().unwrap()
    }

    #[test]
    fn identity_is_ras() {
        assert_eq!(
            orientation_of(&AffineTransform::identity()).unwrap(),
            code("RAS")
        );
    }

    #[test]
    fn negative_first_axis_is_las() {
        let a = AffineTransform::diagonal([-0.8, 0.8, 3.0], [0.0; 3]).unwrap();
        assert_eq!(orientation_of(&a).unwrap().to_string(), "LAS");
    }

    #[test]
    fn permuted_columns() {
        // columns (0,0,2), (0.7,0,0), (0,-0.7,0)
        let a = AffineTransform::from_columns(
            [[0.0, 0.0, 2.0], [0.7, 0.0, 0.0], [0.0, -0.7, 0.0]],
            [0.0; 3],
        )
        .unwrap();
        assert_eq!(orientation_of(&a).unwrap().to_string(), "SRP");
    }

    #[test]
    fn exact_45_degrees_is_ambiguous() {
        let a = AffineTransform::from_columns(
            [[1.0, 1.0, 0.0], [-1.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            [0.0; 3],
        )
        .unwrap();
        assert!(matches!(
            orientation_of(&a),
            Err(GeometryError::AmbiguousOrientation { column: 0 })
        ));
    }

    #[test]
    fn parse_rejects_repeated_axes() {
        assert!("RLS".parse::<OrientationCode>().is_err());
        assert!("RA".parse::<OrientationCode>().is_err());
        assert!("RAX".parse::<OrientationCode>().is_err());
        assert_eq!(code("las").to_string(), "LAS");
    }
}
