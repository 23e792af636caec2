//! Scene parametrization: shape image, texture and background, the fixed
//! disc-shaped grid topology, and the generator-side shaping transforms
//! (blur pyramid, tanh size constraint, sphere prior, background crop).

use std::f64::consts::PI;

use nalgebra::Vector3;

use crate::error::{invalid, Error, Result};
use crate::image::{Image, Planar};

/// Default bound on vertex norm produced by [`size_constraint`].
pub const DEFAULT_S_MAX: f64 = 1.3;
/// Default multiplier on the raw generator shape output.
pub const DEFAULT_SHAPE_SCALE: f64 = 0.002;
/// Radius of the sphere prior added to the generator output.
pub const DEFAULT_SPHERE_RADIUS: f64 = 0.5;
/// Fraction of the polar angle left open at the back pole.
pub const SPHERE_BACK_GAP: f64 = 0.05;
const SERIES_THRESHOLD: f64 = 1e-4;

/// 3 × N × N array of vertex coordinates; pixel (row, col) is a mesh vertex.
#[derive(Clone, Debug, PartialEq)]
pub struct ShapeImage(pub Planar);

impl ShapeImage {
    pub fn zeros(n: usize) -> Self {
        Self(Planar::zeros(n))
    }

    pub fn n(&self) -> usize {
        self.0.side
    }

    pub fn vertex_count(&self) -> usize {
        self.n() * self.n()
    }

    #[inline]
    pub fn vertex(&self, v: usize) -> Vector3<f64> {
        let nn = self.vertex_count();
        let d = &self.0.data;
        Vector3::new(d[v], d[nn + v], d[2 * nn + v])
    }

    #[inline]
    pub fn set_vertex(&mut self, v: usize, p: Vector3<f64>) {
        let nn = self.vertex_count();
        let d = &mut self.0.data;
        d[v] = p.x;
        d[nn + v] = p.y;
        d[2 * nn + v] = p.z;
    }

    pub fn is_finite(&self) -> bool {
        self.0.data.iter().all(|v| v.is_finite())
    }
}

/// 3 × N_t × N_t color texture, N_t = 2N.
#[derive(Clone, Debug, PartialEq)]
pub struct TextureImage(pub Planar);

/// 3 × 2N × 2N background from which an N × N window is cropped.
#[derive(Clone, Debug, PartialEq)]
pub struct Background(pub Planar);

#[derive(Clone, Debug, PartialEq)]
pub struct SceneRepresentation {
    pub shape: ShapeImage,
    pub texture: TextureImage,
    pub background: Background,
}

impl SceneRepresentation {
    pub fn n(&self) -> usize {
        self.shape.n()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n();
        if n < 4 {
            return invalid(format!("grid side {n} < 4"));
        }
        if self.texture.0.side != 2 * n || self.background.0.side != 2 * n {
            return invalid(format!(
                "inconsistent sides: shape {n}, texture {}, background {}",
                self.texture.0.side, self.background.0.side
            ));
        }
        if !self.shape.is_finite() {
            return invalid("shape image has non-finite entries");
        }
        Ok(())
    }

    /// Sphere prior with constant-color texture and background.
    pub fn sphere(n: usize, radius: f64, color: [f64; 3], background: [f64; 3]) -> Result<Self> {
        Ok(Self {
            shape: initial_sphere(n, radius)?,
            texture: TextureImage(Planar::constant(2 * n, color)),
            background: Background(Planar::constant(2 * n, background)),
        })
    }

    pub fn quantize_f32(&mut self) {
        self.shape.0.quantize_f32();
        self.texture.0.quantize_f32();
        self.background.0.quantize_f32();
    }
}

/// Triangles of the circular region of the N × N grid plus per-vertex UVs.
#[derive(Clone, Debug, PartialEq)]
pub struct MeshTopology {
    pub n: usize,
    pub triangles: Vec<[u32; 3]>,
    /// Indexed by grid vertex `row * n + col`, including unreferenced ones.
    pub uv: Vec<[f64; 2]>,
    pub referenced: Vec<bool>,
}

#[inline]
fn in_disc(n: usize, row: usize, col: usize) -> bool {
    let c = (n as f64 - 1.0) / 2.0;
    let (dr, dc) = (row as f64 - c, col as f64 - c);
    dr * dr + dc * dc <= c * c
}

pub fn build_topology(n: usize) -> Result<MeshTopology> {
    if n < 4 {
        return invalid(format!("grid side {n} < 4"));
    }
    let idx = |row: usize, col: usize| (row * n + col) as u32;
    let mut triangles = Vec::new();
    for row in 0..n - 1 {
        for col in 0..n - 1 {
            // Both triangles share the same winding in (col, row) space.
            let cell = [
                [(row, col), (row + 1, col), (row, col + 1)],
                [(row, col + 1), (row + 1, col), (row + 1, col + 1)],
            ];
            for tri in cell {
                if tri.iter().all(|&(r, c)| in_disc(n, r, c)) {
                    triangles.push(tri.map(|(r, c)| idx(r, c)));
                }
            }
        }
    }
    let mut referenced = vec![false; n * n];
    for t in &triangles {
        for &v in t {
            referenced[v as usize] = true;
        }
    }
    let denom = (n - 1) as f64;
    let uv = (0..n * n).map(|v| [(v / n) as f64 / denom, (v % n) as f64 / denom]).collect();
    Ok(MeshTopology { n, triangles, uv, referenced })
}

/// Wraps the grid disc onto a sphere of radius `r`: the disc center lands on
/// the +Z pole (facing the camera) and the disc rim near the back pole, with
/// polar angle proportional to the normalized grid radius.
pub fn initial_sphere(n: usize, r: f64) -> Result<ShapeImage> {
    if n < 4 {
        return invalid(format!("grid side {n} < 4"));
    }
    if !(r > 0.0) {
        return invalid(format!("sphere radius must be positive, got {r}"));
    }
    let c = (n as f64 - 1.0) / 2.0;
    let mut s = ShapeImage::zeros(n);
    for row in 0..n {
        for col in 0..n {
            let dx = col as f64 - c;
            let dy = c - row as f64;
            let rho = ((dx * dx + dy * dy).sqrt() / c).min(1.0);
            let theta = rho * PI * (1.0 - SPHERE_BACK_GAP);
            let phi = dy.atan2(dx);
            let p = Vector3::new(theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos()) * r;
            s.set_vertex(row * n + col, p);
        }
    }
    Ok(s)
}

/// Normalized Gaussian taps for offsets `-radius..=radius`, radius = ⌈3σ⌉.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as i64;
    let taps: Vec<f64> = (-radius..=radius).map(|x| (-(x * x) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let sum: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / sum).collect()
}

#[inline]
fn clamp_index(i: i64, n: usize) -> usize {
    i.clamp(0, n as i64 - 1) as usize
}

/// One separable pass over a square plane; `horizontal` picks the axis.
fn blur_pass(src: &[f64], n: usize, kernel: &[f64], horizontal: bool) -> Vec<f64> {
    let radius = (kernel.len() / 2) as i64;
    let mut out = vec![0.0; n * n];
    for row in 0..n {
        for col in 0..n {
            let mut acc = 0.0;
            for (k, w) in kernel.iter().enumerate() {
                let off = k as i64 - radius;
                let (r, c) = if horizontal {
                    (row, clamp_index(col as i64 + off, n))
                } else {
                    (clamp_index(row as i64 + off, n), col)
                };
                acc += w * src[r * n + c];
            }
            out[row * n + col] = acc;
        }
    }
    out
}

/// Transpose of [`blur_pass`]: scatters each output back through the taps.
fn blur_pass_adjoint(grad: &[f64], n: usize, kernel: &[f64], horizontal: bool) -> Vec<f64> {
    let radius = (kernel.len() / 2) as i64;
    let mut out = vec![0.0; n * n];
    for row in 0..n {
        for col in 0..n {
            let g = grad[row * n + col];
            for (k, w) in kernel.iter().enumerate() {
                let off = k as i64 - radius;
                let (r, c) = if horizontal {
                    (row, clamp_index(col as i64 + off, n))
                } else {
                    (clamp_index(row as i64 + off, n), col)
                };
                out[r * n + c] += w * g;
            }
        }
    }
    out
}

/// Channelwise Gaussian blur with replicate-edge padding.
pub fn blur(p: &Planar, sigma: f64) -> Planar {
    let kernel = gaussian_kernel(sigma);
    let n = p.side;
    let mut out = Planar::zeros(n);
    for c in 0..3 {
        let h = blur_pass(p.plane(c), n, &kernel, true);
        out.plane_mut(c).copy_from_slice(&blur_pass(&h, n, &kernel, false));
    }
    out
}

pub fn blur_adjoint(grad: &Planar, sigma: f64) -> Planar {
    let kernel = gaussian_kernel(sigma);
    let n = grad.side;
    let mut out = Planar::zeros(n);
    for c in 0..3 {
        let v = blur_pass_adjoint(grad.plane(c), n, &kernel, false);
        out.plane_mut(c).copy_from_slice(&blur_pass_adjoint(&v, n, &kernel, true));
    }
    out
}

/// Σ_k blur(s_k, σ = 2^k) / 2^k.
pub fn shape_pyramid(levels: &[ShapeImage]) -> Result<ShapeImage> {
    let Some(first) = levels.first() else {
        return invalid("shape pyramid needs at least one level");
    };
    let n = first.n();
    if levels.iter().any(|l| l.n() != n) {
        return invalid("shape pyramid levels have mismatched sides");
    }
    let mut out = Planar::zeros(n);
    for (k, level) in levels.iter().enumerate() {
        let scale = 0.5f64.powi(k as i32);
        out.axpy(scale, &blur(&level.0, 2f64.powi(k as i32)));
    }
    Ok(ShapeImage(out))
}

/// Gradient of [`shape_pyramid`] with respect to each of its `k` levels.
pub fn shape_pyramid_backward(grad: &ShapeImage, k: usize) -> Vec<ShapeImage> {
    (0..k)
        .map(|level| {
            let mut g = blur_adjoint(&grad.0, 2f64.powi(level as i32));
            let scale = 0.5f64.powi(level as i32);
            g.data.iter_mut().for_each(|v| *v *= scale);
            ShapeImage(g)
        })
        .collect()
}

/// tanh(r)/r, extended by continuity at the origin.
#[inline]
fn tanh_ratio(r: f64) -> f64 {
    if r < SERIES_THRESHOLD {
        1.0 - r * r / 3.0
    } else {
        r.tanh() / r
    }
}

/// d/dr[tanh(r)/r] / r, the coefficient of the rank-one Jacobian term.
#[inline]
fn tanh_ratio_slope_over_r(r: f64) -> f64 {
    if r < 1e-3 {
        -2.0 / 3.0 + 8.0 * r * r / 15.0
    } else {
        let sech2 = 1.0 - r.tanh().powi(2);
        (r * sech2 - r.tanh()) / (r * r * r)
    }
}

/// Per-vertex `s · tanh(|s|)/|s| · s_max`; every output norm is below `s_max`.
pub fn size_constraint(s: &ShapeImage, s_max: f64) -> ShapeImage {
    let mut out = s.clone();
    for v in 0..s.vertex_count() {
        let p = s.vertex(v);
        out.set_vertex(v, p * (tanh_ratio(p.norm()) * s_max));
    }
    out
}

/// Jacobian of the per-vertex size constraint at `p` (symmetric 3×3).
pub fn size_constraint_jacobian(p: Vector3<f64>, s_max: f64) -> nalgebra::Matrix3<f64> {
    let r = p.norm();
    (nalgebra::Matrix3::identity() * tanh_ratio(r) + p * p.transpose() * tanh_ratio_slope_over_r(r)) * s_max
}

pub fn size_constraint_backward(s: &ShapeImage, s_max: f64, grad: &ShapeImage) -> ShapeImage {
    let mut out = ShapeImage::zeros(s.n());
    for v in 0..s.vertex_count() {
        // the Jacobian is symmetric, so J^T g = J g
        out.set_vertex(v, size_constraint_jacobian(s.vertex(v), s_max) * grad.vertex(v));
    }
    out
}

/// Settings for the generator-side shape head.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ShapeHead {
    pub scale: f64,
    pub s_max: f64,
    /// When false the tanh size constraint is bypassed (ablation only).
    pub constrain: bool,
}

impl Default for ShapeHead {
    fn default() -> Self {
        Self { scale: DEFAULT_SHAPE_SCALE, s_max: DEFAULT_S_MAX, constrain: true }
    }
}

impl ShapeHead {
    /// Pre-constraint shape `s0 + scale · pyramid(raw)`.
    pub fn offset_shape(&self, raw: &[ShapeImage], s0: &ShapeImage) -> Result<ShapeImage> {
        let pyr = shape_pyramid(raw)?;
        if pyr.n() != s0.n() {
            return invalid("sphere prior side differs from generator output");
        }
        let mut pre = s0.clone();
        pre.0.axpy(self.scale, &pyr.0);
        Ok(pre)
    }

    pub fn apply(&self, raw: &[ShapeImage], s0: &ShapeImage) -> Result<ShapeImage> {
        let pre = self.offset_shape(raw, s0)?;
        Ok(if self.constrain { size_constraint(&pre, self.s_max) } else { pre })
    }

    /// Gradient with respect to the raw levels given the gradient on the output.
    pub fn backward(&self, raw: &[ShapeImage], s0: &ShapeImage, grad: &ShapeImage) -> Result<Vec<ShapeImage>> {
        let g_pre = if self.constrain {
            size_constraint_backward(&self.offset_shape(raw, s0)?, self.s_max, grad)
        } else {
            grad.clone()
        };
        let mut levels = shape_pyramid_backward(&g_pre, raw.len());
        for l in &mut levels {
            l.0.data.iter_mut().for_each(|v| *v *= self.scale);
        }
        Ok(levels)
    }
}

/// `size_constraint(s0 + scale · shape_pyramid(raw), s_max)`.
pub fn apply_generator_head(raw: &[ShapeImage], scale: f64, s0: &ShapeImage, s_max: f64) -> Result<ShapeImage> {
    ShapeHead { scale, s_max, constrain: true }.apply(raw, s0)
}

/// The n × n window of the background at `offset = (x, y)`; pure slice.
pub fn crop_background(b: &Background, offset: (usize, usize), n: usize) -> Result<Image> {
    let side = b.0.side;
    let (ox, oy) = offset;
    if n > side || ox > side - n || oy > side - n {
        return invalid(format!("crop offset {offset:?} with side {n} exceeds background side {side}"));
    }
    let mut out = Image::new(n, n, 3);
    for row in 0..n {
        for col in 0..n {
            let px = out.pixel_mut(col, row);
            for (c, v) in px.iter_mut().enumerate() {
                *v = b.0.at(c, oy + row, ox + col);
            }
        }
    }
    Ok(out)
}

const SCN1_MAGIC: &[u8; 4] = b"SCN1";

pub fn encode_scn1(scene: &SceneRepresentation) -> Result<Vec<u8>> {
    scene.validate()?;
    let n = scene.n();
    let mut out = Vec::new();
    out.extend_from_slice(SCN1_MAGIC);
    out.extend_from_slice(&(n as u32).to_le_bytes());
    out.extend_from_slice(&(scene.texture.0.side as u32).to_le_bytes());
    for arr in [&scene.shape.0, &scene.texture.0, &scene.background.0] {
        for &v in &arr.data {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_scn1(bytes: &[u8]) -> Result<SceneRepresentation> {
    if bytes.len() < 12 || &bytes[..4] != SCN1_MAGIC {
        return Err(Error::Parse("missing SCN1 magic".into()));
    }
    let n = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let nt = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    if n < 4 || nt != 2 * n {
        return Err(Error::Parse(format!("SCN1 header has N={n}, N_t={nt}; need N >= 4 and N_t = 2N")));
    }
    let counts = [3 * n * n, 3 * nt * nt, 3 * 4 * n * n];
    let total: usize = counts.iter().sum();
    if bytes.len() != 12 + 4 * total {
        return Err(Error::Parse(format!("SCN1 payload is {} bytes, expected {}", bytes.len() - 12, 4 * total)));
    }
    let mut floats = bytes[12..].chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64);
    let mut take = |count: usize, side: usize| Planar { side, data: floats.by_ref().take(count).collect() };
    let scene = SceneRepresentation {
        shape: ShapeImage(take(counts[0], n)),
        texture: TextureImage(take(counts[1], nt)),
        background: Background(take(counts[2], 2 * n)),
    };
    scene.validate().map_err(|e| Error::Parse(e.to_string()))?;
    Ok(scene)
}

pub fn read_scene(path: &std::path::Path) -> Result<SceneRepresentation> {
    decode_scn1(&std::fs::read(path)?)
}

pub fn write_scene(path: &std::path::Path, scene: &SceneRepresentation) -> Result<()> {
    crate::image::write_atomic(path, &encode_scn1(scene)?)
}
