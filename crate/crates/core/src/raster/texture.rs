//! Bilinear texture lookup with clamp-to-edge addressing.
//!
//! UV `(u, v)` maps to the continuous texel position
//! `(row, col) = (u, v) · (N_t - 1)`, so UV 0 and 1 land on edge texel
//! centers. Texel values are clamped to [0, 1] when read.

use crate::image::Planar;

/// Integer cell and weights of one bilinear lookup; reused by the backward
/// pass so the selected cell stays fixed.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BilinearTap {
    pub row: usize,
    pub col: usize,
    pub fy: f64,
    pub fx: f64,
    /// dRow/du and dCol/dv: `N_t - 1`, or 0 where the coordinate was clamped.
    pub dy_du: f64,
    pub dx_dv: f64,
}

impl BilinearTap {
    pub fn new(side: usize, uv: [f64; 2]) -> Self {
        let scale = (side - 1) as f64;
        let axis = |c: f64| {
            let raw = c * scale;
            let clamped = raw.clamp(0.0, scale);
            let i0 = (clamped.floor() as usize).min(side.saturating_sub(2));
            let slope = if raw == clamped { scale } else { 0.0 };
            (i0, clamped - i0 as f64, slope)
        };
        let (row, fy, dy_du) = axis(uv[0]);
        let (col, fx, dx_dv) = axis(uv[1]);
        Self { row, col, fy, fx, dy_du, dx_dv }
    }

    #[inline]
    fn weights(&self) -> [(usize, usize, f64); 4] {
        let (fy, fx) = (self.fy, self.fx);
        [
            (self.row, self.col, (1.0 - fy) * (1.0 - fx)),
            (self.row, self.col + 1, (1.0 - fy) * fx),
            (self.row + 1, self.col, fy * (1.0 - fx)),
            (self.row + 1, self.col + 1, fy * fx),
        ]
    }

    pub fn sample(&self, tex: &Planar) -> [f64; 3] {
        let mut out = [0.0; 3];
        for (r, c, w) in self.weights() {
            for (ch, o) in out.iter_mut().enumerate() {
                *o += w * tex.at(ch, r, c).clamp(0.0, 1.0);
            }
        }
        out
    }

    /// Scatters `grad` (per color channel) back onto the texels; texels
    /// outside [0, 1] were clamped on read and receive nothing.
    pub fn scatter(&self, tex: &Planar, grad: [f64; 3], out: &mut Planar) {
        for (r, c, w) in self.weights() {
            for (ch, g) in grad.iter().enumerate() {
                let t = tex.at(ch, r, c);
                if (0.0..=1.0).contains(&t) {
                    *out.at_mut(ch, r, c) += w * g;
                }
            }
        }
    }

    /// Gradient with respect to `(u, v)` of `grad · sample`.
    pub fn uv_gradient(&self, tex: &Planar, grad: [f64; 3]) -> [f64; 2] {
        let (fy, fx) = (self.fy, self.fx);
        let (r, c) = (self.row, self.col);
        let mut du = 0.0;
        let mut dv = 0.0;
        for (ch, g) in grad.iter().enumerate() {
            let t = |rr, cc| tex.at(ch, rr, cc).clamp(0.0, 1.0);
            let (t00, t01, t10, t11) = (t(r, c), t(r, c + 1), t(r + 1, c), t(r + 1, c + 1));
            du += g * ((1.0 - fx) * (t10 - t00) + fx * (t11 - t01));
            dv += g * ((1.0 - fy) * (t01 - t00) + fy * (t11 - t10));
        }
        [du * self.dy_du, dv * self.dx_dv]
    }
}

pub fn sample(tex: &Planar, uv: [f64; 2]) -> [f64; 3] {
    BilinearTap::new(tex.side, uv).sample(tex)
}
