//! Inverse rendering of a single scene from posed target images.

use std::io::Write;

use rayon::prelude::*;

use crate::camera::{CameraIntrinsics, ViewPose};
use crate::error::{invalid, Error, Result};
use crate::grad::{backward, GradientSet};
use crate::image::Image;
use crate::raster::{render, RenderSettings};
use crate::scene::{build_topology, shape_pyramid, shape_pyramid_backward, SceneRepresentation, ShapeImage};

use super::nn::{Optimizer, OptimizerKind};

#[derive(Clone, Debug, PartialEq)]
pub struct FitView {
    pub pose: ViewPose,
    pub crop_offset: (usize, usize),
    pub target: Image,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitOptions {
    pub steps: usize,
    pub lr_shape: f64,
    pub lr_color: f64,
    /// Shape updates go through a blur pyramid with this many levels, which
    /// keeps the mesh smooth; 1 updates vertices directly.
    pub levels: usize,
    pub optimizer: OptimizerKind,
    pub settings: RenderSettings,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { steps: 500, lr_shape: 2e-3, lr_color: 1e-2, levels: 4, optimizer: OptimizerKind::Adam, settings: RenderSettings::default() }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitResult {
    pub scene: SceneRepresentation,
    /// Loss before each step, then the final loss; `steps + 1` entries.
    pub losses: Vec<f64>,
}

fn loss_and_grad(scene: &SceneRepresentation, views: &[FitView], topo: &crate::scene::MeshTopology, settings: &RenderSettings) -> Result<(f64, GradientSet)> {
    let n = scene.n();
    let intrinsics = CameraIntrinsics::for_side(n);
    let count = (views.len() * 3 * n * n) as f64;
    let parts: Vec<(f64, GradientSet)> = views
        .par_iter()
        .map(|v| {
            let out = render(scene, topo, &v.pose, v.crop_offset, &intrinsics, settings)?;
            let mut up = out.color.clone();
            let mut loss = 0.0;
            for (u, t) in up.data.iter_mut().zip(&v.target.data) {
                let r = *u - t;
                loss += r * r;
                *u = 2.0 * r / count;
            }
            Ok((loss / count, backward(&out, &up, scene, topo)?))
        })
        .collect::<Result<_>>()?;
    let mut total = GradientSet::zeros(n);
    let mut loss = 0.0;
    for (l, g) in parts {
        loss += l;
        total.d_shape.0.axpy(1.0, &g.d_shape.0);
        total.d_texture.axpy(1.0, &g.d_texture);
        total.d_background.axpy(1.0, &g.d_background);
    }
    Ok((loss, total))
}

/// Gradient descent on mean squared pixel error over all views, updating
/// shape, texture and background. Optional per-step log lines
/// `step <i> loss <f>`.
pub fn fit_scene(views: &[FitView], init: &SceneRepresentation, opts: &FitOptions, mut log: Option<&mut dyn Write>) -> Result<FitResult> {
    if views.is_empty() {
        return invalid("fit needs at least one target view");
    }
    if opts.levels == 0 {
        return invalid("fit needs at least one shape level");
    }
    init.validate()?;
    let n = init.n();
    if views.iter().any(|v| v.target.width != n || v.target.height != n || v.target.channels != 3) {
        return invalid(format!("targets must be {n}x{n}x3"));
    }
    let topo = build_topology(n)?;
    let mut levels = vec![ShapeImage::zeros(n); opts.levels];
    let mut scene = init.clone();
    let mut shape_opt = Optimizer::new(opts.optimizer, opts.lr_shape, &vec![3 * n * n; opts.levels]);
    let mut color_opt = Optimizer::new(opts.optimizer, opts.lr_color, &[3 * 4 * n * n, 3 * 4 * n * n]);
    let mut losses = Vec::with_capacity(opts.steps + 1);
    for step in 0..=opts.steps {
        scene.shape = init.shape.clone();
        scene.shape.0.axpy(1.0, &shape_pyramid(&levels)?.0);
        let (loss, grad) = loss_and_grad(&scene, views, &topo, &opts.settings)?;
        if !loss.is_finite() {
            return Err(Error::Divergence(format!("fit loss became {loss} at step {step}")));
        }
        losses.push(loss);
        if let Some(w) = log.as_deref_mut() {
            writeln!(w, "step {step} loss {loss:.9e}")?;
        }
        if step == opts.steps {
            break;
        }
        let d_levels = shape_pyramid_backward(&grad.d_shape, opts.levels);
        shape_opt.step(levels.iter_mut().map(|l| l.0.data.as_mut_slice()).collect(), &d_levels.iter().map(|l| l.0.data.as_slice()).collect::<Vec<_>>());
        color_opt.step(
            vec![scene.texture.0.data.as_mut_slice(), scene.background.0.data.as_mut_slice()],
            &[grad.d_texture.data.as_slice(), grad.d_background.data.as_slice()],
        );
    }
    Ok(FitResult { scene, losses })
}
