//! Toy generator and discriminator and the alternating training loop.

use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;

use crate::camera::{CameraIntrinsics, ViewPose};
use crate::error::{invalid, Error, Result};
use crate::grad::{backward, GradientSet};
use crate::image::{Image, Planar};
use crate::raster::{render, RenderOutput};
use crate::scene::{build_topology, initial_sphere, Background, MeshTopology, SceneRepresentation, ShapeImage, TextureImage};

use super::checkpoint::{write_checkpoint, Checkpoint};
use super::data::{silhouette_iou, Dataset};
use super::nn::{leaky_relu, leaky_relu_backward, Dense, Optimizer};
use super::{gan_losses, sample_crop, sample_viewpoint, stream_rng, LatentSample, Stream, TrainConfig, LATENT_DIM};

/// Output-layer gain; keeps the initial shape close to the sphere prior.
const OUTPUT_GAIN: f32 = 0.5;

fn latent_matrix(latents: &[LatentSample], pick: impl Fn(&LatentSample) -> &[f32]) -> DMatrix<f32> {
    DMatrix::from_fn(LATENT_DIM, latents.len(), |r, c| pick(&latents[c])[r])
}

fn sigmoid(x: f32) -> f64 {
    1.0 / (1.0 + (-(x as f64)).exp())
}

/// Two dense branches: `z_o` to raw shape levels and texture logits, `z_b`
/// to background logits. Colors go through a sigmoid, shape through the
/// generator head.
#[derive(Clone, Debug, PartialEq)]
pub struct ToyGenerator {
    pub config: TrainConfig,
    pub obj_hidden: Dense,
    pub obj_out: Dense,
    pub bg_hidden: Dense,
    pub bg_out: Dense,
    s0: ShapeImage,
}

/// Scenes plus the activations needed to backpropagate into the generator.
pub struct GeneratedBatch {
    pub scenes: Vec<SceneRepresentation>,
    z_o: DMatrix<f32>,
    z_b: DMatrix<f32>,
    obj_pre: DMatrix<f32>,
    obj_act: DMatrix<f32>,
    bg_pre: DMatrix<f32>,
    bg_act: DMatrix<f32>,
    raw: Vec<Vec<ShapeImage>>,
}

const GENERATOR_ARRAYS: [&str; 8] =
    ["g.obj_hidden.w", "g.obj_hidden.b", "g.obj_out.w", "g.obj_out.b", "g.bg_hidden.w", "g.bg_hidden.b", "g.bg_out.w", "g.bg_out.b"];
const DISCRIMINATOR_ARRAYS: [&str; 4] = ["d.hidden.w", "d.hidden.b", "d.out.w", "d.out.b"];

fn layer_slices(layers: [&Dense; 4]) -> Vec<&[f32]> {
    layers.into_iter().flat_map(|l| [l.w.as_slice(), l.b.as_slice()]).collect()
}

fn layer_slices_mut(layers: [&mut Dense; 4]) -> Vec<&mut [f32]> {
    layers.into_iter().flat_map(|l| [l.w.as_mut_slice(), l.b.as_mut_slice()]).collect()
}

fn load_layer(ckpt: &Checkpoint, prefix: &str, layer: &mut Dense) -> Result<()> {
    let w = ckpt.array(&format!("{prefix}.w"))?;
    let b = ckpt.array(&format!("{prefix}.b"))?;
    if w.len() != layer.w.len() || b.len() != layer.b.len() {
        return Err(Error::Parse(format!("array sizes for {prefix} do not match the config")));
    }
    layer.w.as_mut_slice().copy_from_slice(w);
    layer.b.as_mut_slice().copy_from_slice(b);
    Ok(())
}

impl ToyGenerator {
    pub fn new<R: Rng>(config: &TrainConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let n = config.n;
        let color = 3 * 4 * n * n;
        let h = config.hidden;
        Ok(Self {
            config: config.clone(),
            obj_hidden: Dense::init(LATENT_DIM, h, 2f32.sqrt(), rng),
            obj_out: Dense::init(h, config.k_pyramid * 3 * n * n + color, OUTPUT_GAIN, rng),
            bg_hidden: Dense::init(LATENT_DIM, h, 2f32.sqrt(), rng),
            bg_out: Dense::init(h, color, OUTPUT_GAIN, rng),
            s0: initial_sphere(n, config.sphere_radius)?,
        })
    }

    pub fn topology(&self) -> Result<MeshTopology> {
        build_topology(self.config.n)
    }

    pub fn generate(&self, latents: &[LatentSample]) -> Result<GeneratedBatch> {
        if latents.is_empty() {
            return invalid("no latents to generate from");
        }
        let n = self.config.n;
        let k = self.config.k_pyramid;
        let level = 3 * n * n;
        let head = self.config.shape_head();
        let z_o = latent_matrix(latents, |l| &l.z_o);
        let z_b = latent_matrix(latents, |l| &l.z_b);
        let obj_pre = self.obj_hidden.forward(&z_o);
        let obj_act = leaky_relu(&obj_pre);
        let obj = self.obj_out.forward(&obj_act);
        let bg_pre = self.bg_hidden.forward(&z_b);
        let bg_act = leaky_relu(&bg_pre);
        let bg = self.bg_out.forward(&bg_act);

        let mut scenes = Vec::with_capacity(latents.len());
        let mut raw = Vec::with_capacity(latents.len());
        for j in 0..latents.len() {
            let col = obj.column(j);
            let levels: Vec<ShapeImage> = (0..k)
                .map(|l| ShapeImage(Planar { side: n, data: col.rows(l * level, level).iter().map(|&v| v as f64).collect() }))
                .collect();
            let shape = head.apply(&levels, &self.s0)?;
            let texture = Planar { side: 2 * n, data: col.rows(k * level, 4 * level).iter().map(|&v| sigmoid(v)).collect() };
            let background = Planar { side: 2 * n, data: bg.column(j).iter().map(|&v| sigmoid(v)).collect() };
            scenes.push(SceneRepresentation { shape, texture: TextureImage(texture), background: Background(background) });
            raw.push(levels);
        }
        Ok(GeneratedBatch { scenes, z_o, z_b, obj_pre, obj_act, bg_pre, bg_act, raw })
    }

    /// Parameter gradients, in [`Self::arrays`] order, given per-scene gradients.
    pub fn backward(&self, batch: &GeneratedBatch, grads: &[GradientSet]) -> Result<Vec<Vec<f32>>> {
        if grads.len() != batch.scenes.len() {
            return invalid("one gradient per generated scene expected");
        }
        let n = self.config.n;
        let k = self.config.k_pyramid;
        let level = 3 * n * n;
        let head = self.config.shape_head();
        let m = grads.len();
        let mut d_obj = DMatrix::<f32>::zeros(self.obj_out.outputs(), m);
        let mut d_bg = DMatrix::<f32>::zeros(self.bg_out.outputs(), m);
        for (j, g) in grads.iter().enumerate() {
            let scene = &batch.scenes[j];
            let d_levels = head.backward(&batch.raw[j], &self.s0, &g.d_shape)?;
            let mut col = d_obj.column_mut(j);
            for (l, d) in d_levels.iter().enumerate() {
                for (i, v) in d.0.data.iter().enumerate() {
                    col[l * level + i] = *v as f32;
                }
            }
            for (i, (t, d)) in scene.texture.0.data.iter().zip(&g.d_texture.data).enumerate() {
                col[k * level + i] = (d * t * (1.0 - t)) as f32;
            }
            for (i, (t, d)) in scene.background.0.data.iter().zip(&g.d_background.data).enumerate() {
                d_bg[(i, j)] = (d * t * (1.0 - t)) as f32;
            }
        }
        let (g_obj_out, d_obj_act) = self.obj_out.backward(&batch.obj_act, &d_obj, true);
        let (g_obj_hidden, _) = self.obj_hidden.backward(&batch.z_o, &leaky_relu_backward(&batch.obj_pre, &d_obj_act.unwrap()), false);
        let (g_bg_out, d_bg_act) = self.bg_out.backward(&batch.bg_act, &d_bg, true);
        let (g_bg_hidden, _) = self.bg_hidden.backward(&batch.z_b, &leaky_relu_backward(&batch.bg_pre, &d_bg_act.unwrap()), false);
        Ok([g_obj_hidden, g_obj_out, g_bg_hidden, g_bg_out]
            .into_iter()
            .flat_map(|g| [g.w.as_slice().to_vec(), g.b.as_slice().to_vec()])
            .collect())
    }

    pub fn arrays(&self) -> Vec<(&'static str, &[f32])> {
        GENERATOR_ARRAYS.into_iter().zip(layer_slices([&self.obj_hidden, &self.obj_out, &self.bg_hidden, &self.bg_out])).collect()
    }

    pub fn arrays_mut(&mut self) -> Vec<&mut [f32]> {
        layer_slices_mut([&mut self.obj_hidden, &mut self.obj_out, &mut self.bg_hidden, &mut self.bg_out])
    }

    /// Restores a generator from a checkpoint's config and arrays.
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let mut rng = stream_rng(0, Stream::Init);
        let mut g = Self::new(&ckpt.config, &mut rng)?;
        load_layer(ckpt, "g.obj_hidden", &mut g.obj_hidden)?;
        load_layer(ckpt, "g.obj_out", &mut g.obj_out)?;
        load_layer(ckpt, "g.bg_hidden", &mut g.bg_hidden)?;
        load_layer(ckpt, "g.bg_out", &mut g.bg_out)?;
        Ok(g)
    }
}

/// Dense image classifier producing one logit per image.
#[derive(Clone, Debug, PartialEq)]
pub struct ToyDiscriminator {
    pub n: usize,
    pub hidden: Dense,
    pub out: Dense,
}

pub struct DiscriminatorTape {
    x: DMatrix<f32>,
    pre: DMatrix<f32>,
    act: DMatrix<f32>,
}

impl ToyDiscriminator {
    pub fn new<R: Rng>(config: &TrainConfig, rng: &mut R) -> Self {
        let inputs = 3 * config.n * config.n;
        Self { n: config.n, hidden: Dense::init(inputs, config.hidden, 2f32.sqrt(), rng), out: Dense::init(config.hidden, 1, 1.0, rng) }
    }

    pub fn forward(&self, images: &[&Image]) -> Result<(Vec<f64>, DiscriminatorTape)> {
        let len = 3 * self.n * self.n;
        if images.iter().any(|im| im.width != self.n || im.height != self.n || im.channels != 3) {
            return invalid(format!("discriminator expects {0}x{0}x3 images", self.n));
        }
        let x = DMatrix::from_fn(len, images.len(), |r, c| (2.0 * images[c].data[r] - 1.0) as f32);
        let pre = self.hidden.forward(&x);
        let act = leaky_relu(&pre);
        let logits = self.out.forward(&act).iter().map(|&v| v as f64).collect();
        Ok((logits, DiscriminatorTape { x, pre, act }))
    }

    /// Parameter gradients in [`Self::arrays`] order and, if requested, the
    /// gradient with respect to each input image.
    pub fn backward(&self, tape: &DiscriminatorTape, d_logits: &[f64], need_input: bool) -> (Vec<Vec<f32>>, Option<Vec<Image>>) {
        let dy = DMatrix::from_fn(1, d_logits.len(), |_, c| d_logits[c] as f32);
        let (g_out, d_act) = self.out.backward(&tape.act, &dy, true);
        let d_pre = leaky_relu_backward(&tape.pre, &d_act.unwrap());
        let (g_hidden, dx) = self.hidden.backward(&tape.x, &d_pre, need_input);
        let images = dx.map(|dx| {
            (0..dx.ncols())
                .map(|c| Image { width: self.n, height: self.n, channels: 3, data: dx.column(c).iter().map(|&v| 2.0 * v as f64).collect() })
                .collect()
        });
        let grads = vec![g_hidden.w.as_slice().to_vec(), g_hidden.b.as_slice().to_vec(), g_out.w.as_slice().to_vec(), g_out.b.as_slice().to_vec()];
        (grads, images)
    }

    pub fn arrays(&self) -> Vec<(&'static str, &[f32])> {
        DISCRIMINATOR_ARRAYS.into_iter().zip([self.hidden.w.as_slice(), self.hidden.b.as_slice(), self.out.w.as_slice(), self.out.b.as_slice()]).collect()
    }

    pub fn arrays_mut(&mut self) -> Vec<&mut [f32]> {
        vec![self.hidden.w.as_mut_slice(), self.hidden.b.as_mut_slice(), self.out.w.as_mut_slice(), self.out.b.as_mut_slice()]
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let mut rng = stream_rng(0, Stream::Init);
        let mut d = Self::new(&ckpt.config, &mut rng);
        load_layer(ckpt, "d.hidden", &mut d.hidden)?;
        load_layer(ckpt, "d.out", &mut d.out)?;
        Ok(d)
    }
}

fn sizes(arrays: &[(&'static str, &[f32])]) -> Vec<usize> {
    arrays.iter().map(|(_, a)| a.len()).collect()
}

pub fn make_checkpoint(g: &ToyGenerator, d: &ToyDiscriminator) -> Checkpoint {
    let arrays = g.arrays().into_iter().chain(d.arrays()).map(|(n, a)| (n.to_string(), a.to_vec())).collect();
    Checkpoint { config: g.config.clone(), arrays }
}

/// Renders generated scenes at the given poses and crops, in parallel over
/// the batch; output order follows input order.
pub fn render_batch(scenes: &[SceneRepresentation], topology: &MeshTopology, views: &[(ViewPose, (usize, usize))], config: &TrainConfig) -> Result<Vec<RenderOutput>> {
    let intrinsics = CameraIntrinsics::for_side(config.n);
    let settings = config.render_settings();
    scenes
        .par_iter()
        .zip(views)
        .map(|(s, (pose, crop))| render(s, topology, pose, *crop, &intrinsics, &settings))
        .collect()
}

pub struct TrainOutcome {
    pub generator: ToyGenerator,
    pub discriminator: ToyDiscriminator,
    pub final_loss_d: f64,
    pub final_loss_g: f64,
}

/// Alternating discriminator and generator updates with a fresh random pose
/// and background crop per generated sample. One log line per step.
pub fn train_toy_gan(dataset: &Dataset, config: &TrainConfig, log: &mut dyn Write, checkpoint: Option<&Path>) -> Result<TrainOutcome> {
    config.validate()?;
    if dataset.images.is_empty() {
        return invalid("training dataset is empty");
    }
    if dataset.n != config.n {
        return invalid(format!("dataset images are {0}x{0}, config expects n={1}", dataset.n, config.n));
    }
    let mut init = stream_rng(config.seed, Stream::Init);
    let mut g = ToyGenerator::new(config, &mut init)?;
    let mut d = ToyDiscriminator::new(config, &mut init);
    let mut opt_g = Optimizer::new(config.optimizer, config.lr_g, &sizes(&g.arrays()));
    let mut opt_d = Optimizer::new(config.optimizer, config.lr_d, &sizes(&d.arrays()));
    let mut latent_rng = stream_rng(config.seed, Stream::Latent);
    let mut view_rng = stream_rng(config.seed, Stream::Viewpoint);
    let mut crop_rng = stream_rng(config.seed, Stream::Crop);
    let mut batch_rng = stream_rng(config.seed, Stream::Batch);
    let topology = g.topology()?;
    let dist = config.viewpoints();
    let (mut last_d, mut last_g) = (f64::NAN, f64::NAN);

    for step in 0..config.steps {
        let latents: Vec<_> = (0..config.batch).map(|_| LatentSample::sample(&mut latent_rng)).collect();
        let views: Vec<_> = (0..config.batch).map(|_| (sample_viewpoint(&dist, &mut view_rng), sample_crop(config.n, &mut crop_rng))).collect();
        let real: Vec<&Image> = (0..config.batch).map(|_| &dataset.images[batch_rng.gen_range(0..dataset.images.len())]).collect();

        let generated = g.generate(&latents)?;
        let outputs = render_batch(&generated.scenes, &topology, &views, config)?;
        let fake: Vec<&Image> = outputs.iter().map(|o| &o.color).collect();

        let (d_real, tape_real) = d.forward(&real)?;
        let (d_fake, tape_fake) = d.forward(&fake)?;
        let losses = gan_losses(&d_real, &d_fake, config.mode).map_err(|e| diverged(step, e))?;
        let (mut grads_d, _) = d.backward(&tape_real, &losses.d_loss_d_real, false);
        let (grads_fake, _) = d.backward(&tape_fake, &losses.d_loss_d_fake, false);
        for (a, b) in grads_d.iter_mut().zip(&grads_fake) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
        opt_d.step(d.arrays_mut(), &grads_d.iter().map(Vec::as_slice).collect::<Vec<_>>());

        let (d_fake, tape_fake) = d.forward(&fake)?;
        let g_losses = gan_losses(&d_real, &d_fake, config.mode).map_err(|e| diverged(step, e))?;
        let (_, image_grads) = d.backward(&tape_fake, &g_losses.d_loss_g_fake, true);
        let image_grads = image_grads.expect("input gradient requested");
        let scene_grads: Vec<GradientSet> = outputs
            .par_iter()
            .zip(&image_grads)
            .zip(&generated.scenes)
            .map(|((o, up), s)| backward(o, up, s, &topology))
            .collect::<Result<_>>()?;
        let grads_g = g.backward(&generated, &scene_grads)?;
        let grad_norm = grads_g.iter().flatten().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt();

        last_d = losses.loss_d;
        last_g = g_losses.loss_g;
        writeln!(log, "step {step} loss_d {last_d:.6} loss_g {last_g:.6} grad_norm_g {grad_norm:.6e}")?;
        if !(last_d.is_finite() && last_g.is_finite() && grad_norm.is_finite()) {
            return Err(Error::Divergence(format!("step {step}: loss_d {last_d} loss_g {last_g} grad_norm_g {grad_norm}")));
        }
        opt_g.step(g.arrays_mut(), &grads_g.iter().map(Vec::as_slice).collect::<Vec<_>>());

        if let Some(path) = checkpoint {
            if config.checkpoint_every > 0 && (step + 1) % config.checkpoint_every == 0 {
                write_checkpoint(path, &make_checkpoint(&g, &d))?;
            }
        }
    }
    if let Some(path) = checkpoint {
        write_checkpoint(path, &make_checkpoint(&g, &d))?;
    }
    Ok(TrainOutcome { generator: g, discriminator: d, final_loss_d: last_d, final_loss_g: last_g })
}

fn diverged(step: usize, e: Error) -> Error {
    Error::Divergence(format!("step {step}: {e}"))
}

/// Draws `count` samples at random poses and scores each crisp silhouette
/// by its best IoU over `masks`.
pub fn evaluate_iou(g: &ToyGenerator, masks: &[Vec<bool>], count: usize, seed: u64) -> Result<Vec<f64>> {
    if masks.is_empty() {
        return invalid("no reference silhouettes");
    }
    let mut rng = stream_rng(seed, Stream::Eval);
    let dist = g.config.viewpoints();
    let latents: Vec<_> = (0..count).map(|_| LatentSample::sample(&mut rng)).collect();
    let views: Vec<_> = (0..count).map(|_| (sample_viewpoint(&dist, &mut rng), sample_crop(g.config.n, &mut rng))).collect();
    let topology = g.topology()?;
    let generated = g.generate(&latents)?;
    let outputs = render_batch(&generated.scenes, &topology, &views, &g.config)?;
    Ok(outputs
        .par_iter()
        .map(|o| {
            let mask: Vec<bool> = o.crisp.alpha.iter().map(|&a| a > 0.0).collect();
            masks.iter().map(|m| silhouette_iou(&mask, m)).fold(0.0, f64::max)
        })
        .collect())
}

/// Fraction of correct real/fake calls (logit sign) on `real` and as many
/// fresh generated samples.
pub fn discriminator_accuracy(g: &ToyGenerator, d: &ToyDiscriminator, real: &[Image], seed: u64) -> Result<f64> {
    if real.is_empty() {
        return invalid("no held-out real images");
    }
    let mut rng = stream_rng(seed, Stream::Eval);
    let dist = g.config.viewpoints();
    let latents: Vec<_> = (0..real.len()).map(|_| LatentSample::sample(&mut rng)).collect();
    let views: Vec<_> = (0..real.len()).map(|_| (sample_viewpoint(&dist, &mut rng), sample_crop(g.config.n, &mut rng))).collect();
    let generated = g.generate(&latents)?;
    let outputs = render_batch(&generated.scenes, &g.topology()?, &views, &g.config)?;
    let (lr, _) = d.forward(&real.iter().collect::<Vec<_>>())?;
    let (lf, _) = d.forward(&outputs.iter().map(|o| &o.color).collect::<Vec<_>>())?;
    let correct = lr.iter().filter(|&&v| v > 0.0).count() + lf.iter().filter(|&&v| v < 0.0).count();
    Ok(correct as f64 / (2 * real.len()) as f64)
}
