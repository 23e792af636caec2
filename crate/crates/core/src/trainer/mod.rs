//! Scene fitting and toy adversarial training.

mod checkpoint;
mod config;
mod data;
mod fit;
mod gan;
pub mod nn;
mod sample;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::camera::ViewPose;
use crate::error::{invalid, Result};

pub use checkpoint::{decode_ckpt1, encode_ckpt1, read_checkpoint, write_checkpoint, Checkpoint};
pub use config::{LossMode, TrainConfig};
pub use data::{
    load_dataset, make_synthetic, read_manifest, silhouette_iou, synthetic_scene, Dataset, ManifestEntry, SyntheticOptions, MANIFEST_NAME,
};
pub use fit::{fit_scene, FitOptions, FitResult, FitView};
pub use gan::{
    discriminator_accuracy, evaluate_iou, make_checkpoint, render_batch, train_toy_gan, GeneratedBatch, ToyDiscriminator, ToyGenerator, TrainOutcome,
};
pub use sample::{normal_map, sample_generator, SampleGrid, CANONICAL_YAWS};

/// Width of each latent code.
pub const LATENT_DIM: usize = 512;

/// Independent random streams derived from one seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Latent = 1,
    Viewpoint = 2,
    Crop = 3,
    Data = 4,
    Init = 5,
    Batch = 6,
    Eval = 7,
}

pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

/// Uniform yaw and pitch ranges in degrees.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ViewpointDistribution {
    pub yaw_range: f64,
    pub pitch_range: f64,
}

impl ViewpointDistribution {
    pub fn new(yaw_range: f64, pitch_range: f64) -> Result<Self> {
        if !(0.0..=180.0).contains(&yaw_range) || !(0.0..=90.0).contains(&pitch_range) {
            return invalid(format!("viewpoint ranges ({yaw_range}, {pitch_range}) out of bounds"));
        }
        Ok(Self { yaw_range, pitch_range })
    }
}

impl Default for ViewpointDistribution {
    fn default() -> Self {
        Self { yaw_range: 45.0, pitch_range: 15.0 }
    }
}

pub fn sample_viewpoint<R: Rng>(dist: &ViewpointDistribution, rng: &mut R) -> ViewPose {
    let mut draw = |range: f64| if range > 0.0 { rng.gen_range(-range..=range) } else { 0.0 };
    let yaw = draw(dist.yaw_range);
    let pitch = draw(dist.pitch_range);
    ViewPose::from_degrees(yaw, pitch).expect("ranges validated on construction")
}

/// Uniform crop offset for an `n`-pixel window into a `2n` background.
pub fn sample_crop<R: Rng>(n: usize, rng: &mut R) -> (usize, usize) {
    (rng.gen_range(0..=n), rng.gen_range(0..=n))
}

/// Object and background codes, standard normal and independent.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentSample {
    pub z_o: Vec<f32>,
    pub z_b: Vec<f32>,
}

impl LatentSample {
    pub fn sample<R: Rng>(rng: &mut R) -> Self {
        let mut draw = || (0..LATENT_DIM).map(|_| rng.sample::<f32, _>(StandardNormal)).collect();
        let z_o = draw();
        let z_b = draw();
        Self { z_o, z_b }
    }
}

const LOG_FLOOR: f64 = 1e-7;

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Clamped `log σ(x)` and its derivative (zero where the clamp is active).
fn log_sigmoid(x: f64) -> (f64, f64) {
    let p = sigmoid(x);
    if p < LOG_FLOOR {
        (LOG_FLOOR.ln(), 0.0)
    } else {
        (p.ln(), 1.0 - p)
    }
}

/// Clamped `log(1 - σ(x))` and its derivative.
fn log_one_minus_sigmoid(x: f64) -> (f64, f64) {
    let q = sigmoid(-x);
    if q < LOG_FLOOR {
        (LOG_FLOOR.ln(), 0.0)
    } else {
        (q.ln(), -(1.0 - q))
    }
}

/// Discriminator and generator losses with their logit gradients.
#[derive(Clone, Debug, PartialEq)]
pub struct GanLosses {
    pub loss_d: f64,
    pub loss_g: f64,
    pub d_loss_d_real: Vec<f64>,
    pub d_loss_d_fake: Vec<f64>,
    pub d_loss_g_fake: Vec<f64>,
}

pub fn gan_losses(d_real: &[f64], d_fake: &[f64], mode: LossMode) -> Result<GanLosses> {
    if d_real.is_empty() || d_fake.is_empty() {
        return invalid("gan_losses needs at least one real and one fake logit");
    }
    if d_real.iter().chain(d_fake).any(|v| !v.is_finite()) {
        return invalid("non-finite discriminator logit");
    }
    let (mr, mf) = (d_real.len() as f64, d_fake.len() as f64);
    let real: Vec<_> = d_real.iter().map(|&x| log_sigmoid(x)).collect();
    let fake_neg: Vec<_> = d_fake.iter().map(|&x| log_one_minus_sigmoid(x)).collect();
    let loss_d = -(real.iter().map(|r| r.0).sum::<f64>() / mr + fake_neg.iter().map(|f| f.0).sum::<f64>() / mf);
    let d_loss_d_real = real.iter().map(|r| -r.1 / mr).collect();
    let d_loss_d_fake = fake_neg.iter().map(|f| -f.1 / mf).collect();
    let (loss_g, d_loss_g_fake) = match mode {
        LossMode::Minimax => (fake_neg.iter().map(|f| f.0).sum::<f64>() / mf, fake_neg.iter().map(|f| f.1 / mf).collect()),
        LossMode::NonSaturating => {
            let fake: Vec<_> = d_fake.iter().map(|&x| log_sigmoid(x)).collect();
            (-fake.iter().map(|f| f.0).sum::<f64>() / mf, fake.iter().map(|f| -f.1 / mf).collect())
        }
    };
    Ok(GanLosses { loss_d, loss_g, d_loss_d_real, d_loss_d_fake, d_loss_g_fake })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::LN_2;

    #[test]
    fn zero_ranges_give_frontal_pose() {
        let dist = ViewpointDistribution::new(0.0, 0.0).unwrap();
        let mut rng = stream_rng(3, Stream::Viewpoint);
        for _ in 0..20 {
            assert_eq!(sample_viewpoint(&dist, &mut rng), ViewPose::frontal());
        }
    }

    #[test]
    fn viewpoint_statistics() {
        let dist = ViewpointDistribution::default();
        let mut rng = stream_rng(11, Stream::Viewpoint);
        let poses: Vec<_> = (0..10_000).map(|_| sample_viewpoint(&dist, &mut rng)).collect();
        let yaw: Vec<f64> = poses.iter().map(|p| p.yaw.to_degrees()).collect();
        let pitch: Vec<f64> = poses.iter().map(|p| p.pitch.to_degrees()).collect();
        assert!(yaw.iter().all(|y| y.abs() <= 45.0 + 1e-9));
        assert!(pitch.iter().all(|p| p.abs() <= 15.0 + 1e-9));
        for (vals, range) in [(&yaw, 45.0), (&pitch, 15.0)] {
            let m = vals.len() as f64;
            let mean = vals.iter().sum::<f64>() / m;
            // standard error of the mean of U(-a, a) is a / sqrt(3m)
            assert!(mean.abs() < 3.0 * range / (3.0 * m).sqrt());
            let var = vals.iter().map(|v| v * v).sum::<f64>() / m;
            assert!((var / (range * range / 3.0) - 1.0).abs() < 0.05);
        }
    }

    #[test]
    fn viewpoints_are_reproducible() {
        let dist = ViewpointDistribution::default();
        let a: Vec<_> = {
            let mut rng = stream_rng(5, Stream::Viewpoint);
            (0..50).map(|_| sample_viewpoint(&dist, &mut rng)).collect()
        };
        let mut rng = stream_rng(5, Stream::Viewpoint);
        let b: Vec<_> = (0..50).map(|_| sample_viewpoint(&dist, &mut rng)).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn latent_and_viewpoint_streams_are_uncorrelated() {
        let dist = ViewpointDistribution::default();
        let mut lat = stream_rng(2, Stream::Latent);
        let mut view = stream_rng(2, Stream::Viewpoint);
        let m = 10_000;
        let pairs: Vec<(f64, f64)> = (0..m)
            .map(|_| (LatentSample::sample(&mut lat).z_o[0] as f64, sample_viewpoint(&dist, &mut view).yaw))
            .collect();
        let (mx, my) = (pairs.iter().map(|p| p.0).sum::<f64>() / m as f64, pairs.iter().map(|p| p.1).sum::<f64>() / m as f64);
        let cov = pairs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>();
        let vx = pairs.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>();
        let vy = pairs.iter().map(|p| (p.1 - my).powi(2)).sum::<f64>();
        let corr = cov / (vx * vy).sqrt();
        assert!(corr.abs() < 3.0 / (m as f64).sqrt(), "corr {corr}");
    }

    #[test]
    fn latent_shape_and_moments() {
        let mut rng = stream_rng(1, Stream::Latent);
        let z = LatentSample::sample(&mut rng);
        assert_eq!((z.z_o.len(), z.z_b.len()), (LATENT_DIM, LATENT_DIM));
        assert_ne!(z.z_o, z.z_b);
        let all: Vec<f64> = (0..20).flat_map(|_| LatentSample::sample(&mut rng).z_o).map(f64::from).collect();
        let mean = all.iter().sum::<f64>() / all.len() as f64;
        let var = all.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / all.len() as f64;
        assert!(mean.abs() < 0.05 && (var - 1.0).abs() < 0.05);
    }

    #[test]
    fn losses_at_zero_logits() {
        let l = gan_losses(&[0.0], &[0.0], LossMode::Minimax).unwrap();
        assert!((l.loss_d - 2.0 * LN_2).abs() < 1e-15);
        assert!((l.loss_g + LN_2).abs() < 1e-15);
        let ns = gan_losses(&[0.0], &[0.0], LossMode::NonSaturating).unwrap();
        assert!((ns.loss_g - LN_2).abs() < 1e-15);
    }

    #[test]
    fn nonsaturating_loss_is_clamped() {
        let l = gan_losses(&[0.0], &[-1e3], LossMode::NonSaturating).unwrap();
        assert!((l.loss_g + LOG_FLOOR.ln()).abs() < 1e-12);
        assert!(l.loss_g.is_finite());
    }

    #[test]
    fn loss_gradients_match_finite_differences() {
        let real = [0.3, -1.2, 2.0];
        let fake = [-0.7, 0.1, 1.5, -3.0];
        for mode in [LossMode::Minimax, LossMode::NonSaturating] {
            let base = gan_losses(&real, &fake, mode).unwrap();
            let h = 1e-6;
            for i in 0..fake.len() {
                let (mut p, mut m) = (fake, fake);
                p[i] += h;
                m[i] -= h;
                let lp = gan_losses(&real, &p, mode).unwrap();
                let lm = gan_losses(&real, &m, mode).unwrap();
                assert!(((lp.loss_g - lm.loss_g) / (2.0 * h) - base.d_loss_g_fake[i]).abs() < 1e-6);
                assert!(((lp.loss_d - lm.loss_d) / (2.0 * h) - base.d_loss_d_fake[i]).abs() < 1e-6);
            }
            for i in 0..real.len() {
                let (mut p, mut m) = (real, real);
                p[i] += h;
                m[i] -= h;
                let lp = gan_losses(&p, &fake, mode).unwrap();
                let lm = gan_losses(&m, &fake, mode).unwrap();
                assert!(((lp.loss_d - lm.loss_d) / (2.0 * h) - base.d_loss_d_real[i]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn non_finite_logits_rejected() {
        assert!(gan_losses(&[f64::NAN], &[0.0], LossMode::Minimax).is_err());
        assert!(gan_losses(&[], &[0.0], LossMode::Minimax).is_err());
    }

    proptest! {
        #[test]
        fn minimax_fake_terms_cancel(real in prop::collection::vec(-8.0..8.0f64, 1..6), fake in prop::collection::vec(-8.0..8.0f64, 1..6)) {
            let l = gan_losses(&real, &fake, LossMode::Minimax).unwrap();
            let only_real = -real.iter().map(|&x| log_sigmoid(x).0).sum::<f64>() / real.len() as f64;
            let fake_term_of_d = l.loss_d - only_real;
            prop_assert!((fake_term_of_d + l.loss_g).abs() < 1e-12);
        }
    }
}
