use crate::registry::{no_argument, Registry};
use crate::volume::{Volume, Voxel};

/// Up to eight `(voxel index, weight)` taps whose weighted sum is the
/// interpolated value.
#[derive(Debug, Clone, Copy)]
pub struct Stencil {
    taps: [([usize; 3], f64); 8],
    len: usize,
}

impl Stencil {
    fn new() -> Self {
        Self {
            taps: [([0; 3], 0.0); 8],
            len: 0,
        }
    }

    fn push(&mut self, idx: [usize; 3], w: f64) {
        self.taps[self.len] = (idx, w);
        self.len += 1;
    }

    pub fn taps(&self) -> &[([usize; 3], f64)] {
        &self.taps[..self.len]
    }

    /// Weighted sum of `volume` at the taps.
    pub fn eval<T: Voxel>(&self, volume: &Volume<T>) -> f64 {
        self.taps()
            .iter()
            .map(|&(idx, w)| w * volume.get(idx).to_f64())
            .sum()
    }
}

/// Samples a grid at fractional voxel positions. Positions outside the grid
/// are clamped to the nearest edge.
pub trait Interpolator: Send + Sync {
    fn name(&self) -> &'static str;
    fn stencil(&self, pos: [f64; 3], dims: [usize; 3]) -> Stencil;

    fn sample<T: Voxel>(&self, volume: &Volume<T>, pos: [f64; 3]) -> f64
    where
        Self: Sized,
    {
        self.stencil(pos, volume.dims()).eval(volume)
    }
}

fn clamp_pos(p: f64, n: usize) -> f64 {
    p.clamp(0.0, (n - 1) as f64)
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Nearest;

impl Interpolator for Nearest {
    fn name(&self) -> &'static str {
        "nearest"
    }

    fn stencil(&self, pos: [f64; 3], dims: [usize; 3]) -> Stencil {
        let mut idx = [0usize; 3];
        for a in 0..3 {
            // round half up
            idx[a] = (clamp_pos(pos[a], dims[a]) + 0.5).floor() as usize;
            idx[a] = idx[a].min(dims[a] - 1);
        }
        let mut s = Stencil::new();
        s.push(idx, 1.0);
        s
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Trilinear;

impl Interpolator for Trilinear {
    fn name(&self) -> &'static str {
        "trilinear"
    }

    fn stencil(&self, pos: [f64; 3], dims: [usize; 3]) -> Stencil {
        let mut lo = [0usize; 3];
        let mut hi = [0usize; 3];
        let mut frac = [0.0f64; 3];
        for a in 0..3 {
            let p = clamp_pos(pos[a], dims[a]);
            let f = p.floor();
            lo[a] = (f as usize).min(dims[a] - 1);
            hi[a] = (lo[a] + 1).min(dims[a] - 1);
            frac[a] = p - lo[a] as f64;
        }
        let mut s = Stencil::new();
        for corner in 0..8 {
            let mut w = 1.0;
            let mut idx = [0usize; 3];
            for a in 0..3 {
                if corner >> a & 1 == 1 {
                    w *= frac[a];
                    idx[a] = hi[a];
                } else {
                    w *= 1.0 - frac[a];
                    idx[a] = lo[a];
                }
            }
            if w != 0.0 {
                s.push(idx, w);
            }
        }
        s
    }
}

/// Built-in interpolators: `nearest` and `trilinear`.
pub fn interpolators() -> Registry<dyn Interpolator> {
    let mut r: Registry<dyn Interpolator> = Registry::new("interpolator");
    r.register("nearest", |_, arg| {
        no_argument("interpolator", "nearest", arg)?;
        Ok(Box::new(Nearest))
    });
    r.register("trilinear", |_, arg| {
        no_argument("interpolator", "trilinear", arg)?;
        Ok(Box::new(Trilinear))
    });
    r
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::AffineTransform;

    fn ramp() -> Volume<f32> {
        let data = (0..8).map(|v| v as f32).collect();
        Volume::new([2, 2, 2], data, AffineTransform::identity()).unwrap()
    }

    #[test]
    fn trilinear_reproduces_linear_field() {
        // value = x + 2y + 4z
        let v = ramp();
        let got = Trilinear.sample(&v, [0.25, 0.5, 0.75]);
        assert!((got - (0.25 + 1.0 + 3.0)).abs() < 1e-12);
    }

    #[test]
    fn weights_sum_to_one() {
        let s = Trilinear.stencil([0.3, 1.7, 0.1], [3, 3, 3]);
        let total: f64 = s.taps().iter().map(|t| t.1).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn lattice_points_use_a_single_tap() {
        let s = Trilinear.stencil([1.0, 0.0, 1.0], [2, 2, 2]);
        assert_eq!(s.taps().len(), 1);
        assert_eq!(s.taps()[0], ([1, 0, 1], 1.0));
    }

    #[test]
    fn out_of_grid_clamps_to_edge() {
        let v = ramp();
        assert_eq!(Trilinear.sample(&v, [-3.0, 0.0, 0.0]), 0.0);
        assert_eq!(Trilinear.sample(&v, [9.0, 9.0, 9.0]), 7.0);
        assert_eq!(Nearest.sample(&v, [5.0, -1.0, 0.4]), 1.0);
    }

    #[test]
    fn nearest_rounds_half_up() {
        let v = ramp();
        assert_eq!(Nearest.sample(&v, [0.5, 0.0, 0.0]), 1.0);
        assert_eq!(Nearest.sample(&v, [0.49, 0.0, 0.0]), 0.0);
    }

    #[test]
    fn registry_names() {
        let r = interpolators();
        assert_eq!(r.names(), vec!["nearest", "trilinear"]);
        assert_eq!(r.build("trilinear", &()).unwrap().name(), "trilinear");
    }
}
