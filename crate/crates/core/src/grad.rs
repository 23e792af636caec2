//! Exact backward pass of [`render`](crate::raster::render).
//!
//! The discrete choices made by the forward pass (crisp winner, soft
//! contributor sets, the triangle defining `α_s`, closest-point regions,
//! bilinear texel cells) are held fixed, and the gradient of the resulting
//! smooth piece is returned. A central-difference oracle with detection of
//! selection changes is provided for verification.

use std::hash::{Hash, Hasher};

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::camera::{CameraIntrinsics, ViewPose};
use crate::error::{invalid, Result};
use crate::image::{Image, Planar};
use crate::raster::distance::{barycentric_gradient, distance_gradient, edge_param_gradient};
use crate::raster::texture::BilinearTap;
use crate::raster::{blend_weights, pixel_center, render, AttributeMode, ComposeMode, Point, Region, RenderOutput, RenderSettings, NONE};
use crate::scene::{build_topology, initial_sphere, shape_pyramid, MeshTopology, SceneRepresentation, ShapeImage};

/// Co-tangents with respect to the scene representation.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientSet {
    pub d_shape: ShapeImage,
    pub d_texture: Planar,
    pub d_background: Planar,
}

impl GradientSet {
    pub fn zeros(n: usize) -> Self {
        Self { d_shape: ShapeImage::zeros(n), d_texture: Planar::zeros(2 * n), d_background: Planar::zeros(2 * n) }
    }

    pub fn dot(&self, dir: &Perturbation) -> f64 {
        self.d_shape.0.dot(&dir.shape) + self.d_texture.dot(&dir.texture) + self.d_background.dot(&dir.background)
    }
}

struct Accum {
    dq: Vec<Point>,
    dcolor: Vec<[f64; 3]>,
    dtex: Planar,
    dbg: Planar,
}

impl Accum {
    fn new(nv: usize, tex_side: usize, bg_side: usize) -> Self {
        Self { dq: vec![Point::zeros(); nv], dcolor: vec![[0.0; 3]; nv], dtex: Planar::zeros(tex_side), dbg: Planar::zeros(bg_side) }
    }

    fn merge(&mut self, other: &Accum) {
        for (a, b) in self.dq.iter_mut().zip(&other.dq) {
            *a += b;
        }
        for (a, b) in self.dcolor.iter_mut().zip(&other.dcolor) {
            for k in 0..3 {
                a[k] += b[k];
            }
        }
        self.dtex.axpy(1.0, &other.dtex);
        self.dbg.axpy(1.0, &other.dbg);
    }
}

const TILE_ROWS: usize = 8;

/// Jacobian-transpose product of the composed image with `upstream`.
/// `scene` and `topology` must be the ones `output` was rendered from.
pub fn backward(output: &RenderOutput, upstream: &Image, scene: &SceneRepresentation, topology: &MeshTopology) -> Result<GradientSet> {
    let side = output.side();
    if upstream.width != side || upstream.height != side || upstream.channels != 3 {
        return invalid(format!("upstream is {}x{}x{}, expected {side}x{side}x3", upstream.width, upstream.height, upstream.channels));
    }
    let n = scene.n();
    if topology.n != n || output.mesh.positions.len() != n * n || output.crisp.side != side || output.soft.side != side {
        return invalid("render buffers do not match the scene");
    }
    let tex = &scene.texture.0;
    let bg = &scene.background.0;
    let mesh = &output.mesh;
    let settings = &output.settings;
    let uv_mode = settings.attributes == AttributeMode::Uv;
    let c = mesh.channels;

    let tiles: Vec<_> = (0..side).step_by(TILE_ROWS).map(|r| r..(r + TILE_ROWS).min(side)).collect();
    let partials: Vec<Accum> = tiles
        .into_par_iter()
        .map(|rows| {
            let mut acc = Accum::new(n * n, tex.side, bg.side);
            let mut d_attr = vec![0.0; c];
            for row in rows {
                for col in 0..side {
                    let pix = row * side + col;
                    let g = upstream.pixel(col, row);
                    let g = [g[0], g[1], g[2]];
                    if g == [0.0; 3] {
                        continue;
                    }
                    let p = pixel_center(col, row);
                    let alpha_s = output.soft.alpha[pix];
                    let alpha_c = output.crisp.alpha[pix];
                    let w = blend_weights(alpha_s, alpha_c, settings.compose);

                    let (by, bx) = (output.crop_offset.1 + row, output.crop_offset.0 + col);
                    for (ch, gv) in g.iter().enumerate() {
                        if (0.0..=1.0).contains(&bg.at(ch, by, bx)) {
                            *acc.dbg.at_mut(ch, by, bx) += w[2] * gv;
                        }
                    }

                    let a_s = output.soft_color.pixel(col, row);
                    let a_c = output.crisp_color.pixel(col, row);
                    let b = output.background.pixel(col, row);

                    let contributors = output.soft.contributors(pix);
                    if !contributors.is_empty() {
                        let d_alpha_s: f64 = (0..3)
                            .map(|k| {
                                let under = match settings.compose {
                                    ComposeMode::Nested => alpha_c * a_c[k] + (1.0 - alpha_c) * b[k],
                                    ComposeMode::Literal => alpha_c * a_c[k],
                                };
                                g[k] * (a_s[k] - under)
                            })
                            .sum();
                        let g_color = g.map(|v| v * w[0]);
                        layer_attr_gradient(uv_mode, tex, &output.soft.attr[pix * c..(pix + 1) * c], g_color, &mut acc.dtex, &mut d_attr);
                        let m = contributors.len() as f64;
                        for sh in contributors {
                            let t = sh.triangle as usize;
                            let verts = mesh.triangles[t];
                            let tri = mesh.triangle(t);
                            if !uv_mode {
                                for (k, &v) in verts.iter().enumerate() {
                                    for ch in 0..3 {
                                        acc.dcolor[v as usize][ch] += sh.hit.bary[k] * d_attr[ch] / m;
                                    }
                                }
                            }
                            if let Region::Edge(e) = sh.hit.region {
                                let (ia, ib) = (e as usize, (e as usize + 1) % 3);
                                let (va, vb) = (mesh.attribute(verts[ia]), mesh.attribute(verts[ib]));
                                let dt: f64 = (0..c).map(|k| d_attr[k] / m * (vb[k] - va[k])).sum();
                                let gt = edge_param_gradient(p, &tri, &sh.hit);
                                for k in 0..3 {
                                    acc.dq[verts[k] as usize] += gt[k] * dt;
                                }
                            }
                        }
                        let arg = output.soft.argmax[pix];
                        debug_assert_ne!(arg, NONE);
                        let sh = &output.soft.hits[arg as usize];
                        let verts = mesh.triangles[sh.triangle as usize];
                        let gd = distance_gradient(p, &sh.hit);
                        let dd = -d_alpha_s / settings.band;
                        for k in 0..3 {
                            acc.dq[verts[k] as usize] += gd[k] * dd;
                        }
                    }

                    if let Some(t) = output.crisp.winner_at(pix) {
                        let g_color = g.map(|v| v * w[1]);
                        layer_attr_gradient(uv_mode, tex, &output.crisp.attr[pix * c..(pix + 1) * c], g_color, &mut acc.dtex, &mut d_attr);
                        let verts = mesh.triangles[t];
                        let bary = output.crisp.bary[pix];
                        if !uv_mode {
                            for (k, &v) in verts.iter().enumerate() {
                                for ch in 0..3 {
                                    acc.dcolor[v as usize][ch] += bary[k] * d_attr[ch];
                                }
                            }
                        }
                        let gb = barycentric_gradient(p, &mesh.triangle(t));
                        for (i, &vi) in verts.iter().enumerate() {
                            let db: f64 = mesh.attribute(vi).iter().zip(&d_attr).map(|(a, d)| a * d).sum();
                            for j in 0..3 {
                                acc.dq[verts[j] as usize] += gb[i][j] * db;
                            }
                        }
                    }
                }
            }
            acc
        })
        .collect();

    let mut total = Accum::new(n * n, tex.side, bg.side);
    for part in &partials {
        total.merge(part);
    }

    if !uv_mode {
        for v in 0..n * n {
            if topology.referenced[v] && total.dcolor[v] != [0.0; 3] {
                BilinearTap::new(tex.side, topology.uv[v]).scatter(tex, total.dcolor[v], &mut total.dtex);
            }
        }
    }

    let rt = output.pose.rotation().transpose();
    let mut d_shape = ShapeImage::zeros(n);
    for v in 0..n * n {
        if !topology.referenced[v] {
            continue;
        }
        let dq = total.dq[v];
        let d_world = output.intrinsics.project_jacobian(&output.world[v]).transpose() * dq;
        d_shape.set_vertex(v, rt * d_world);
    }
    Ok(GradientSet { d_shape, d_texture: total.dtex, d_background: total.dbg })
}

/// Gradient of one layer's color with respect to its rasterized attribute;
/// in UV mode also scatters the texture gradient.
fn layer_attr_gradient(uv_mode: bool, tex: &Planar, attr: &[f64], g_color: [f64; 3], dtex: &mut Planar, out: &mut [f64]) {
    if uv_mode {
        let tap = BilinearTap::new(tex.side, [attr[0], attr[1]]);
        tap.scatter(tex, g_color, dtex);
        let duv = tap.uv_gradient(tex, g_color);
        out[..2].copy_from_slice(&duv);
    } else {
        out[..3].copy_from_slice(&g_color);
    }
}

/// A direction in scene space.
#[derive(Clone, Debug, PartialEq)]
pub struct Perturbation {
    pub shape: Planar,
    pub texture: Planar,
    pub background: Planar,
}

impl Perturbation {
    pub fn zeros(n: usize) -> Self {
        Self { shape: Planar::zeros(n), texture: Planar::zeros(2 * n), background: Planar::zeros(2 * n) }
    }

    fn applied(&self, scene: &SceneRepresentation, step: f64) -> SceneRepresentation {
        let mut s = scene.clone();
        s.shape.0.axpy(step, &self.shape);
        s.texture.0.axpy(step, &self.texture);
        s.background.0.axpy(step, &self.background);
        s
    }
}

/// Everything [`render`] consumes, borrowed.
#[derive(Clone, Copy)]
pub struct RenderInputs<'a> {
    pub scene: &'a SceneRepresentation,
    pub topology: &'a MeshTopology,
    pub pose: ViewPose,
    pub crop_offset: (usize, usize),
    pub intrinsics: CameraIntrinsics,
    pub settings: RenderSettings,
}

impl RenderInputs<'_> {
    pub fn render(&self) -> Result<RenderOutput> {
        render(self.scene, self.topology, &self.pose, self.crop_offset, &self.intrinsics, &self.settings)
    }

    fn render_scene(&self, scene: &SceneRepresentation) -> Result<RenderOutput> {
        render(scene, self.topology, &self.pose, self.crop_offset, &self.intrinsics, &self.settings)
    }
}

/// Per-pixel digest of every discrete choice the forward pass made.
pub fn selection_fingerprint(out: &RenderOutput, texture_side: usize) -> Vec<u64> {
    let side = out.side();
    let c = out.mesh.channels;
    let uv_mode = out.settings.attributes == AttributeMode::Uv;
    (0..side * side)
        .map(|pix| {
            let mut h = std::collections::hash_map::DefaultHasher::new();
            out.crisp.winner[pix].hash(&mut h);
            let arg = out.soft.argmax[pix];
            (if arg == NONE { NONE } else { arg - out.soft.offsets[pix] as u32 }).hash(&mut h);
            for sh in out.soft.contributors(pix) {
                sh.triangle.hash(&mut h);
                sh.hit.region.hash(&mut h);
            }
            if uv_mode {
                for (active, attr) in [(out.crisp.alpha[pix] > 0.0, &out.crisp.attr), (out.soft.count(pix) > 0, &out.soft.attr)] {
                    if active {
                        let tap = BilinearTap::new(texture_side, [attr[pix * c], attr[pix * c + 1]]);
                        (tap.row, tap.col, tap.dy_du == 0.0, tap.dx_dv == 0.0).hash(&mut h);
                    }
                }
            }
            h.finish()
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FiniteDifference {
    pub derivative: f64,
    /// Some pixel's discrete selection differed between `x + h·dir` and `x - h·dir`.
    pub selection_changed: bool,
}

/// Central difference of `functional(render(x + h·dir))` at `h`.
pub fn finite_difference_oracle<F>(inputs: &RenderInputs<'_>, direction: &Perturbation, h: f64, functional: F) -> Result<FiniteDifference>
where
    F: Fn(&Image) -> f64,
{
    if !(h > 0.0) {
        return invalid(format!("finite-difference step must be positive, got {h}"));
    }
    let plus = inputs.render_scene(&direction.applied(inputs.scene, h))?;
    let minus = inputs.render_scene(&direction.applied(inputs.scene, -h))?;
    let tex_side = inputs.scene.texture.0.side;
    Ok(FiniteDifference {
        derivative: (functional(&plus.color) - functional(&minus.color)) / (2.0 * h),
        selection_changed: selection_fingerprint(&plus, tex_side) != selection_fingerprint(&minus, tex_side),
    })
}

/// `Σ upstream · image`, the functional whose gradient `backward` returns.
pub fn linear_functional(upstream: &Image) -> impl Fn(&Image) -> f64 + '_ {
    move |img: &Image| img.data.iter().zip(&upstream.data).map(|(a, b)| a * b).sum()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradcheckConfig {
    pub seed: u64,
    pub trials: usize,
    pub res: usize,
    /// Step for vertex directions; color directions use a tenth of it.
    pub eps: f64,
    pub tolerance: f64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self { seed: 0, trials: 200, res: 32, eps: 1e-3, tolerance: 1e-4 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrialOutcome {
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
    pub selection_change: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckReport {
    pub trials: Vec<TrialOutcome>,
    pub tolerance: f64,
}

impl GradcheckReport {
    pub fn accepted(&self) -> impl Iterator<Item = &TrialOutcome> {
        self.trials.iter().filter(|t| !t.selection_change)
    }

    pub fn passed(&self) -> usize {
        self.accepted().filter(|t| t.rel_err <= self.tolerance).count()
    }

    pub fn max_rel_err(&self) -> f64 {
        self.accepted().map(|t| t.rel_err).fold(0.0, f64::max)
    }

    pub fn rejected_fraction(&self) -> f64 {
        self.trials.iter().filter(|t| t.selection_change).count() as f64 / self.trials.len().max(1) as f64
    }

    pub fn ok(&self) -> bool {
        self.accepted().all(|t| t.rel_err <= self.tolerance)
    }

    /// `trial <k> rel_err <e> selection_change <0|1>` per trial, then
    /// `pass <n>/<m> max_rel_err <e>` over the accepted trials.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, t) in self.trials.iter().enumerate() {
            s.push_str(&format!("trial {k} rel_err {:.6e} selection_change {}\n", t.rel_err, t.selection_change as u8));
        }
        s.push_str(&format!("pass {}/{} max_rel_err {:.6e}\n", self.passed(), self.accepted().count(), self.max_rel_err()));
        s
    }
}

fn normal_planar(rng: &mut ChaCha8Rng, side: usize) -> Planar {
    Planar { side, data: (0..3 * side * side).map(|_| rng.sample(StandardNormal)).collect() }
}

fn normalized(mut p: Planar) -> Planar {
    let norm = p.dot(&p).sqrt();
    if norm > 0.0 {
        p.data.iter_mut().for_each(|v| *v /= norm);
    }
    p
}

/// A smooth random blob with random colors, pose and crop.
fn random_trial_scene(rng: &mut ChaCha8Rng, n: usize) -> Result<SceneRepresentation> {
    let mut shape = initial_sphere(n, rng.gen_range(0.5..0.9))?;
    let bumps: Vec<ShapeImage> = (0..3).map(|_| ShapeImage(normal_planar(rng, n))).collect();
    shape.0.axpy(0.08, &shape_pyramid(&bumps)?.0);
    let mut texture = Planar::zeros(2 * n);
    texture.data.iter_mut().for_each(|v| *v = rng.gen_range(0.05..0.95));
    let mut background = Planar::zeros(2 * n);
    background.data.iter_mut().for_each(|v| *v = rng.gen_range(0.05..0.95));
    Ok(SceneRepresentation {
        shape,
        texture: crate::scene::TextureImage(texture),
        background: crate::scene::Background(background),
    })
}

/// Vertices of triangles that win at least one pixel of the crisp pass, ascending.
pub fn visible_vertices(out: &RenderOutput) -> Vec<usize> {
    let mut used = vec![false; out.mesh.positions.len()];
    for pix in 0..out.side() * out.side() {
        if let Some(t) = out.crisp.winner_at(pix) {
            out.mesh.triangles[t].iter().for_each(|&v| used[v as usize] = true);
        }
    }
    (0..used.len()).filter(|&v| used[v]).collect()
}

/// Compares `backward` against central differences on random scenes. Trials
/// cycle through shape, texture and background directions, and through UV
/// and direct attribute modes. Shape directions move a single vertex, so
/// that selection changes stay rare at `eps`.
pub fn run_gradcheck(cfg: &GradcheckConfig) -> Result<GradcheckReport> {
    if cfg.trials == 0 {
        return invalid("gradcheck needs at least one trial");
    }
    if !(cfg.eps > 0.0) {
        return invalid(format!("eps must be positive, got {}", cfg.eps));
    }
    let n = cfg.res;
    let topology = build_topology(n)?;
    let intrinsics = CameraIntrinsics::for_side(n);
    let mut trials = Vec::with_capacity(cfg.trials);
    for k in 0..cfg.trials {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(k as u64);
        let scene = random_trial_scene(&mut rng, n)?;
        let pose = ViewPose::from_degrees(rng.gen_range(-45.0..45.0), rng.gen_range(-15.0..15.0))?;
        let crop_offset = (rng.gen_range(0..=n), rng.gen_range(0..=n));
        let attributes = if k % 6 < 3 { AttributeMode::Uv } else { AttributeMode::Direct };
        let settings = RenderSettings { attributes, ..Default::default() };
        let inputs = RenderInputs { scene: &scene, topology: &topology, pose, crop_offset, intrinsics, settings };
        let upstream = Image { width: n, height: n, channels: 3, data: (0..3 * n * n).map(|_| rng.sample(StandardNormal)).collect() };

        let out = inputs.render()?;
        let mut dir = Perturbation::zeros(n);
        let h = match k % 3 {
            0 => {
                // one visible vertex, random unit direction
                let visible = visible_vertices(&out);
                if visible.is_empty() {
                    return invalid("trial scene rendered no geometry");
                }
                let v = visible[rng.gen_range(0..visible.len())];
                let d: Vector3<f64> = Vector3::from_fn(|_, _| rng.sample(StandardNormal));
                let d = d / d.norm();
                for ch in 0..3 {
                    dir.shape.data[ch * n * n + v] = d[ch];
                }
                cfg.eps
            }
            1 => {
                dir.texture = normalized(normal_planar(&mut rng, 2 * n));
                cfg.eps / 10.0
            }
            _ => {
                dir.background = normalized(normal_planar(&mut rng, 2 * n));
                cfg.eps / 10.0
            }
        };

        let analytic = backward(&out, &upstream, &scene, &topology)?.dot(&dir);
        let fd = finite_difference_oracle(&inputs, &dir, h, linear_functional(&upstream))?;
        let scale = analytic.abs().max(fd.derivative.abs()).max(1e-12);
        trials.push(TrialOutcome {
            analytic,
            numeric: fd.derivative,
            rel_err: (analytic - fd.derivative).abs() / scale,
            selection_change: fd.selection_changed,
        });
    }
    Ok(GradcheckReport { trials, tolerance: cfg.tolerance })
}

/// Shape-only gradient in world coordinates before undoing the rotation;
/// exposed for checking the rotation adjoint.
pub fn world_gradient(output: &RenderOutput, grads: &GradientSet) -> Vec<Vector3<f64>> {
    let r = output.pose.rotation();
    (0..grads.d_shape.vertex_count()).map(|v| r * grads.d_shape.vertex(v)).collect()
}
