//! Forward renderer: a crisp z-buffer pass, a soft pass that rasterizes a
//! band of width `B` around every triangle, and a convex blend of the two
//! over the cropped background. Every buffer the backward pass needs is
//! kept in [`RenderOutput`].
//!
//! Work is split into fixed row tiles. Inside a tile, triangles are visited
//! in index order, so each pixel sees exactly the same sequence of
//! operations as a brute-force loop over all triangles, whatever the
//! thread count.

pub mod distance;
pub mod texture;

use nalgebra::Vector3;
use rayon::prelude::*;

pub use distance::{point_triangle_distance, Point, Region, TriangleHit};

use crate::camera::{rotate_scene, CameraIntrinsics, ViewPose};
use crate::error::{invalid, Error, Result};
use crate::image::Image;
use crate::scene::{crop_background, MeshTopology, SceneRepresentation};
use distance::barycentric_inside;

/// Depth of "no surface".
pub const Z_FAR: f64 = 1e6;
pub const DEFAULT_BAND: f64 = 2.0;
pub const DEFAULT_LAMBDA_SLOPE: f64 = 1.0;
const TILE_ROWS: usize = 8;
pub(crate) const NONE: u32 = u32::MAX;

/// Screen-space mesh ready for rasterization.
#[derive(Clone, Debug)]
pub struct ProjectedMesh {
    pub positions: Vec<Point>,
    pub depths: Vec<f64>,
    pub triangles: Vec<[u32; 3]>,
    /// `channels` values per vertex.
    pub attributes: Vec<f64>,
    pub channels: usize,
}

impl ProjectedMesh {
    #[inline]
    pub fn triangle(&self, t: usize) -> [Point; 3] {
        self.triangles[t].map(|v| self.positions[v as usize])
    }

    #[inline]
    pub fn attribute(&self, v: u32) -> &[f64] {
        let i = v as usize * self.channels;
        &self.attributes[i..i + self.channels]
    }

    /// Interpolates vertex attributes of triangle `t` with weights `bary`.
    fn interpolate(&self, t: usize, bary: &[f64; 3], out: &mut [f64]) {
        out.fill(0.0);
        for (k, &v) in self.triangles[t].iter().enumerate() {
            for (o, a) in out.iter_mut().zip(self.attribute(v)) {
                *o += bary[k] * a;
            }
        }
    }

    fn interpolate_depth(&self, t: usize, bary: &[f64; 3]) -> f64 {
        let tri = self.triangles[t];
        bary[0] * self.depths[tri[0] as usize] + bary[1] * self.depths[tri[1] as usize] + bary[2] * self.depths[tri[2] as usize]
    }
}

#[derive(Clone, Copy)]
struct Bounds {
    min: Point,
    max: Point,
}

fn triangle_bounds(mesh: &ProjectedMesh) -> Vec<Option<Bounds>> {
    (0..mesh.triangles.len())
        .map(|t| {
            let tri = mesh.triangle(t);
            if distance::is_degenerate(&tri) {
                return None;
            }
            let min = Point::new(tri[0].x.min(tri[1].x).min(tri[2].x), tri[0].y.min(tri[1].y).min(tri[2].y));
            let max = Point::new(tri[0].x.max(tri[1].x).max(tri[2].x), tri[0].y.max(tri[1].y).max(tri[2].y));
            Some(Bounds { min, max })
        })
        .collect()
}

/// Pixel index range whose centers fall in `[lo - margin, hi + margin]`.
fn pixel_span(lo: f64, hi: f64, margin: f64, limit: usize) -> std::ops::Range<usize> {
    let first = (lo - margin - 0.5).ceil().max(0.0);
    let last = (hi + margin - 0.5).floor().min(limit as f64 - 1.0);
    if !(first <= last) {
        return 0..0;
    }
    first as usize..last as usize + 1
}

#[inline]
pub fn pixel_center(col: usize, row: usize) -> Point {
    Point::new(col as f64 + 0.5, row as f64 + 0.5)
}

fn tiles(side: usize) -> Vec<std::ops::Range<usize>> {
    (0..side).step_by(TILE_ROWS).map(|r| r..(r + TILE_ROWS).min(side)).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct CrispBuffers {
    pub side: usize,
    pub channels: usize,
    pub depth: Vec<f64>,
    /// Winning triangle per pixel, `u32::MAX` for none.
    pub winner: Vec<u32>,
    pub bary: Vec<[f64; 3]>,
    pub alpha: Vec<f64>,
    pub attr: Vec<f64>,
}

impl CrispBuffers {
    pub fn winner_at(&self, pix: usize) -> Option<usize> {
        (self.winner[pix] != NONE).then_some(self.winner[pix] as usize)
    }
}

pub fn render_crisp(mesh: &ProjectedMesh, side: usize) -> CrispBuffers {
    let bounds = triangle_bounds(mesh);
    let parts: Vec<_> = tiles(side)
        .into_par_iter()
        .map(|rows| {
            let len = rows.len() * side;
            let mut depth = vec![Z_FAR; len];
            let mut winner = vec![NONE; len];
            let mut bary = vec![[0.0; 3]; len];
            for (t, b) in bounds.iter().enumerate() {
                let Some(b) = b else { continue };
                let tri = mesh.triangle(t);
                let ys = pixel_span(b.min.y, b.max.y, 0.0, side);
                let ys = ys.start.max(rows.start)..ys.end.min(rows.end);
                for row in ys {
                    for col in pixel_span(b.min.x, b.max.x, 0.0, side) {
                        if let Some(w) = barycentric_inside(pixel_center(col, row), &tri) {
                            let z = mesh.interpolate_depth(t, &w);
                            let i = (row - rows.start) * side + col;
                            if z < depth[i] {
                                depth[i] = z;
                                winner[i] = t as u32;
                                bary[i] = w;
                            }
                        }
                    }
                }
            }
            (depth, winner, bary)
        })
        .collect();
    let mut out = CrispBuffers {
        side,
        channels: mesh.channels,
        depth: Vec::with_capacity(side * side),
        winner: Vec::with_capacity(side * side),
        bary: Vec::with_capacity(side * side),
        alpha: Vec::with_capacity(side * side),
        attr: vec![0.0; side * side * mesh.channels],
    };
    for (d, w, b) in parts {
        out.depth.extend(d);
        out.winner.extend(w);
        out.bary.extend(b);
    }
    let c = mesh.channels;
    for pix in 0..side * side {
        let covered = out.winner[pix] != NONE && out.depth[pix] < Z_FAR;
        out.alpha.push(if covered { 1.0 } else { 0.0 });
        if covered {
            mesh.interpolate(out.winner[pix] as usize, &out.bary[pix], &mut out.attr[pix * c..(pix + 1) * c]);
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SoftHit {
    pub triangle: u32,
    pub hit: TriangleHit,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SoftBuffers {
    pub side: usize,
    pub channels: usize,
    pub alpha: Vec<f64>,
    pub attr: Vec<f64>,
    /// Contributors of pixel `p` are `hits[offsets[p]..offsets[p + 1]]`.
    pub offsets: Vec<usize>,
    pub hits: Vec<SoftHit>,
    /// Index into `hits` of the contributor defining `alpha`, or `u32::MAX`.
    pub argmax: Vec<u32>,
}

impl SoftBuffers {
    pub fn empty(side: usize, channels: usize) -> Self {
        Self {
            side,
            channels,
            alpha: vec![0.0; side * side],
            attr: vec![0.0; side * side * channels],
            offsets: vec![0; side * side + 1],
            hits: Vec::new(),
            argmax: vec![NONE; side * side],
        }
    }

    pub fn contributors(&self, pix: usize) -> &[SoftHit] {
        &self.hits[self.offsets[pix]..self.offsets[pix + 1]]
    }

    pub fn count(&self, pix: usize) -> usize {
        self.offsets[pix + 1] - self.offsets[pix]
    }
}

/// Soft extension pass. A triangle contributes to a pixel when the pixel
/// lies strictly inside its band (`0 < d < band`) and the extension depth
/// (closest-point depth plus `lambda_slope · d`) beats the crisp depth.
pub fn render_soft(mesh: &ProjectedMesh, crisp: &CrispBuffers, band: f64, lambda_slope: f64) -> Result<SoftBuffers> {
    if !(band > 0.0) || !(lambda_slope > 0.0) {
        return invalid(format!("band {band} and lambda_slope {lambda_slope} must be positive"));
    }
    let side = crisp.side;
    let bounds = triangle_bounds(mesh);
    let parts: Vec<Vec<Vec<SoftHit>>> = tiles(side)
        .into_par_iter()
        .map(|rows| {
            let mut lists = vec![Vec::new(); rows.len() * side];
            for (t, b) in bounds.iter().enumerate() {
                let Some(b) = b else { continue };
                let tri = mesh.triangle(t);
                let ys = pixel_span(b.min.y, b.max.y, band, side);
                let ys = ys.start.max(rows.start)..ys.end.min(rows.end);
                for row in ys {
                    for col in pixel_span(b.min.x, b.max.x, band, side) {
                        let Some(hit) = point_triangle_distance(pixel_center(col, row), &tri) else { continue };
                        if !(hit.distance > 0.0 && hit.distance < band) {
                            continue;
                        }
                        let z_soft = mesh.interpolate_depth(t, &hit.bary) + lambda_slope * hit.distance;
                        if z_soft < crisp.depth[row * side + col] {
                            lists[(row - rows.start) * side + col].push(SoftHit { triangle: t as u32, hit });
                        }
                    }
                }
            }
            lists
        })
        .collect();

    let c = mesh.channels;
    let mut out = SoftBuffers::empty(side, c);
    out.offsets.clear();
    out.offsets.push(0);
    let mut scratch = vec![0.0; c];
    for (pix, list) in parts.into_iter().flatten().enumerate() {
        let start = out.hits.len();
        let mut best = -1.0;
        for (k, h) in list.iter().enumerate() {
            let a = 1.0 - h.hit.distance / band;
            if a > best {
                best = a;
                out.argmax[pix] = (start + k) as u32;
            }
            mesh.interpolate(h.triangle as usize, &h.hit.bary, &mut scratch);
            for (o, s) in out.attr[pix * c..(pix + 1) * c].iter_mut().zip(&scratch) {
                *o += s;
            }
        }
        if !list.is_empty() {
            out.alpha[pix] = best;
            let m = list.len() as f64;
            out.attr[pix * c..(pix + 1) * c].iter_mut().for_each(|v| *v /= m);
        }
        out.hits.extend(list);
        out.offsets.push(out.hits.len());
    }
    Ok(out)
}

/// How the soft, crisp and background layers are combined.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ComposeMode {
    /// `α_s a_s + (1 − α_s)(α_c a_c + (1 − α_c) bcg)`: a partition of unity.
    #[default]
    Nested,
    /// `α_s a_s + (1 − α_s) α_c a_c + (1 − α_c) bcg`, kept for comparison;
    /// its weights exceed 1 where `α_c = 0 < α_s`.
    Literal,
}

/// Weights of (soft, crisp, background) for one pixel.
#[inline]
pub fn blend_weights(alpha_s: f64, alpha_c: f64, mode: ComposeMode) -> [f64; 3] {
    match mode {
        ComposeMode::Nested => [alpha_s, (1.0 - alpha_s) * alpha_c, (1.0 - alpha_s) * (1.0 - alpha_c)],
        ComposeMode::Literal => [alpha_s, (1.0 - alpha_s) * alpha_c, 1.0 - alpha_c],
    }
}

pub struct Layer<'a> {
    pub alpha: &'a [f64],
    pub color: &'a Image,
}

pub fn compose(crisp: Layer<'_>, soft: Layer<'_>, background: &Image, mode: ComposeMode) -> Result<Image> {
    let n = background.width * background.height;
    if crisp.alpha.len() != n || soft.alpha.len() != n || crisp.color.data.len() != 3 * n || soft.color.data.len() != 3 * n {
        return invalid("compose buffers have mismatched sizes");
    }
    let mut out = Image::new(background.width, background.height, 3);
    for pix in 0..n {
        let w = blend_weights(soft.alpha[pix], crisp.alpha[pix], mode);
        for c in 0..3 {
            let i = 3 * pix + c;
            out.data[i] = w[0] * soft.color.data[i] + w[1] * crisp.color.data[i] + w[2] * background.data[i];
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum AttributeMode {
    /// Rasterize UV coordinates, then sample the texture per pass.
    #[default]
    Uv,
    /// Rasterize per-vertex colors (the texture sampled at each vertex UV).
    Direct,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RenderSettings {
    pub band: f64,
    pub lambda_slope: f64,
    pub attributes: AttributeMode,
    /// Disabling the soft pass yields the plain z-buffer renderer.
    pub soft: bool,
    pub compose: ComposeMode,
}

impl Default for RenderSettings {
    fn default() -> Self {
        Self {
            band: DEFAULT_BAND,
            lambda_slope: DEFAULT_LAMBDA_SLOPE,
            attributes: AttributeMode::Uv,
            soft: true,
            compose: ComposeMode::Nested,
        }
    }
}

#[derive(Clone, Debug)]
pub struct RenderOutput {
    pub color: Image,
    pub crisp: CrispBuffers,
    pub soft: SoftBuffers,
    /// Colors of each layer before blending (`a_c`, `a_s`).
    pub crisp_color: Image,
    pub soft_color: Image,
    /// Cropped background after clamping to [0, 1].
    pub background: Image,
    pub mesh: ProjectedMesh,
    /// Rotated vertex positions.
    pub world: Vec<Vector3<f64>>,
    pub pose: ViewPose,
    pub crop_offset: (usize, usize),
    pub intrinsics: CameraIntrinsics,
    pub settings: RenderSettings,
}

impl RenderOutput {
    pub fn side(&self) -> usize {
        self.intrinsics.image_side
    }

    fn attr_image(&self, data: &[f64], channels: usize) -> Image {
        Image { width: self.side(), height: self.side(), channels, data: data.to_vec() }
    }

    pub fn uv_crisp(&self) -> Option<Image> {
        (self.settings.attributes == AttributeMode::Uv).then(|| self.attr_image(&self.crisp.attr, 2))
    }

    pub fn uv_soft(&self) -> Option<Image> {
        (self.settings.attributes == AttributeMode::Uv).then(|| self.attr_image(&self.soft.attr, 2))
    }

    pub fn depth_image(&self) -> Image {
        self.attr_image(&self.crisp.depth, 1)
    }

    pub fn crisp_alpha_image(&self) -> Image {
        self.attr_image(&self.crisp.alpha, 1)
    }

    pub fn soft_alpha_image(&self) -> Image {
        self.attr_image(&self.soft.alpha, 1)
    }
}

/// Rotates, projects and rasterizes the scene, then blends it over the
/// background window at `crop_offset`.
pub fn render(
    scene: &SceneRepresentation,
    topology: &MeshTopology,
    pose: &ViewPose,
    crop_offset: (usize, usize),
    intrinsics: &CameraIntrinsics,
    settings: &RenderSettings,
) -> Result<RenderOutput> {
    scene.validate()?;
    if topology.n != scene.n() {
        return invalid(format!("topology side {} does not match scene side {}", topology.n, scene.n()));
    }
    let side = intrinsics.image_side;
    let background: Image = {
        let mut b = crop_background(&scene.background, crop_offset, side)?;
        b.data.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
        b
    };

    let rotated = rotate_scene(&scene.shape, pose);
    let nv = rotated.vertex_count();
    let mut world = Vec::with_capacity(nv);
    let mut positions = vec![Point::zeros(); nv];
    let mut depths = vec![0.0; nv];
    for v in 0..nv {
        let p = rotated.vertex(v);
        if topology.referenced[v] {
            let (q, z) = intrinsics.project(&p)?;
            positions[v] = q;
            depths[v] = z;
        }
        world.push(p);
    }

    let tex = &scene.texture.0;
    let (channels, attributes) = match settings.attributes {
        AttributeMode::Uv => (2, topology.uv.iter().flat_map(|uv| uv.iter().copied()).collect()),
        AttributeMode::Direct => (3, topology.uv.iter().flat_map(|&uv| texture::sample(tex, uv)).collect()),
    };
    let mesh = ProjectedMesh { positions, depths, triangles: topology.triangles.clone(), attributes, channels };

    let crisp = render_crisp(&mesh, side);
    let soft = if settings.soft {
        render_soft(&mesh, &crisp, settings.band, settings.lambda_slope)?
    } else {
        SoftBuffers::empty(side, channels)
    };

    let mut crisp_color = Image::new(side, side, 3);
    let mut soft_color = Image::new(side, side, 3);
    for pix in 0..side * side {
        let layers = [(&crisp.attr, crisp.alpha[pix] > 0.0, &mut crisp_color), (&soft.attr, soft.count(pix) > 0, &mut soft_color)];
        for (attr, active, out) in layers {
            if !active {
                continue;
            }
            let a = &attr[pix * channels..(pix + 1) * channels];
            let rgb = match settings.attributes {
                AttributeMode::Uv => texture::sample(tex, [a[0], a[1]]),
                AttributeMode::Direct => [a[0], a[1], a[2]],
            };
            out.data[3 * pix..3 * pix + 3].copy_from_slice(&rgb);
        }
    }

    let color = compose(
        Layer { alpha: &crisp.alpha, color: &crisp_color },
        Layer { alpha: &soft.alpha, color: &soft_color },
        &background,
        settings.compose,
    )?;
    if color.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::DegenerateInput("render produced non-finite colors".into()));
    }
    Ok(RenderOutput {
        color,
        crisp,
        soft,
        crisp_color,
        soft_color,
        background,
        mesh,
        world,
        pose: *pose,
        crop_offset,
        intrinsics: *intrinsics,
        settings: *settings,
    })
}
