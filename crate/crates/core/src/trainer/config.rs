//! Flat `key=value` training configuration.

use std::fmt::Write as _;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::raster::{RenderSettings, DEFAULT_BAND, DEFAULT_LAMBDA_SLOPE};
use crate::scene::{ShapeHead, DEFAULT_SHAPE_SCALE, DEFAULT_SPHERE_RADIUS, DEFAULT_S_MAX};

use super::nn::OptimizerKind;
use super::ViewpointDistribution;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossMode {
    Minimax,
    NonSaturating,
}

impl FromStr for LossMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "minimax" => Ok(Self::Minimax),
            "nonsaturating" => Ok(Self::NonSaturating),
            _ => Err(Error::Parse(format!("unknown loss mode {s:?}"))),
        }
    }
}

impl LossMode {
    fn as_str(self) -> &'static str {
        match self {
            Self::Minimax => "minimax",
            Self::NonSaturating => "nonsaturating",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub seed: u64,
    pub n: usize,
    pub k_pyramid: usize,
    pub s_max: f64,
    pub scale: f64,
    pub yaw_range: f64,
    pub pitch_range: f64,
    pub b: f64,
    pub lambda_slope: f64,
    pub lr_g: f64,
    pub lr_d: f64,
    pub steps: usize,
    pub mode: LossMode,
    pub hidden: usize,
    pub batch: usize,
    pub optimizer: OptimizerKind,
    /// Soft pass on; false gives the crisp-only ablation.
    pub soft: bool,
    /// Size constraint on; false gives the unconstrained ablation.
    pub constrain: bool,
    pub sphere_radius: f64,
    /// Write a checkpoint every this many steps; 0 writes only the final one.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n: 16,
            k_pyramid: 4,
            s_max: DEFAULT_S_MAX,
            scale: DEFAULT_SHAPE_SCALE,
            yaw_range: 45.0,
            pitch_range: 15.0,
            b: DEFAULT_BAND,
            lambda_slope: DEFAULT_LAMBDA_SLOPE,
            lr_g: 1e-3,
            lr_d: 1e-3,
            steps: 1000,
            mode: LossMode::NonSaturating,
            hidden: 1024,
            batch: 8,
            optimizer: OptimizerKind::Sgd,
            soft: true,
            constrain: true,
            sphere_radius: DEFAULT_SPHERE_RADIUS,
            checkpoint_every: 0,
        }
    }
}

fn parse_value<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Parse(format!("bad value {v:?} for {key}")))
}

impl TrainConfig {
    /// Parses `key=value` lines; blank lines and `#` comments are skipped and
    /// unknown keys are errors. Unset keys keep their defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut c = Self::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("line {}: expected key=value, got {raw:?}", lineno + 1)))?;
            c.set(key.trim(), value.trim())?;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "seed" => self.seed = parse_value(key, v)?,
            "n" => self.n = parse_value(key, v)?,
            "k_pyramid" => self.k_pyramid = parse_value(key, v)?,
            "s_max" => self.s_max = parse_value(key, v)?,
            "scale" => self.scale = parse_value(key, v)?,
            "yaw_range" => self.yaw_range = parse_value(key, v)?,
            "pitch_range" => self.pitch_range = parse_value(key, v)?,
            "b" => self.b = parse_value(key, v)?,
            "lambda_slope" => self.lambda_slope = parse_value(key, v)?,
            "lr_g" => self.lr_g = parse_value(key, v)?,
            "lr_d" => self.lr_d = parse_value(key, v)?,
            "steps" => self.steps = parse_value(key, v)?,
            "mode" => self.mode = v.parse()?,
            "hidden" => self.hidden = parse_value(key, v)?,
            "batch" => self.batch = parse_value(key, v)?,
            "optimizer" => self.optimizer = v.parse()?,
            "soft" => self.soft = parse_value(key, v)?,
            "constrain" => self.constrain = parse_value(key, v)?,
            "sphere_radius" => self.sphere_radius = parse_value(key, v)?,
            "checkpoint_every" => self.checkpoint_every = parse_value(key, v)?,
            _ => return Err(Error::Parse(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.n < 4 {
            return bad(format!("n must be at least 4, got {}", self.n));
        }
        if self.k_pyramid == 0 || self.hidden == 0 || self.batch == 0 {
            return bad("k_pyramid, hidden and batch must be positive".into());
        }
        for (name, v) in [("s_max", self.s_max), ("b", self.b), ("lambda_slope", self.lambda_slope), ("sphere_radius", self.sphere_radius)] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        for (name, v) in [("scale", self.scale), ("lr_g", self.lr_g), ("lr_d", self.lr_d)] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be nonnegative, got {v}"));
            }
        }
        ViewpointDistribution::new(self.yaw_range, self.pitch_range)?;
        Ok(())
    }

    /// Canonical text form; `parse(to_text())` reproduces the config.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut put = |k: &str, v: String| writeln!(s, "{k}={v}").unwrap();
        put("seed", self.seed.to_string());
        put("n", self.n.to_string());
        put("k_pyramid", self.k_pyramid.to_string());
        put("s_max", self.s_max.to_string());
        put("scale", self.scale.to_string());
        put("yaw_range", self.yaw_range.to_string());
        put("pitch_range", self.pitch_range.to_string());
        put("b", self.b.to_string());
        put("lambda_slope", self.lambda_slope.to_string());
        put("lr_g", self.lr_g.to_string());
        put("lr_d", self.lr_d.to_string());
        put("steps", self.steps.to_string());
        put("mode", self.mode.as_str().to_string());
        put("hidden", self.hidden.to_string());
        put("batch", self.batch.to_string());
        put("optimizer", self.optimizer.as_str().to_string());
        put("soft", self.soft.to_string());
        put("constrain", self.constrain.to_string());
        put("sphere_radius", self.sphere_radius.to_string());
        put("checkpoint_every", self.checkpoint_every.to_string());
        s
    }

    pub fn viewpoints(&self) -> ViewpointDistribution {
        ViewpointDistribution { yaw_range: self.yaw_range, pitch_range: self.pitch_range }
    }

    pub fn render_settings(&self) -> RenderSettings {
        RenderSettings { band: self.b, lambda_slope: self.lambda_slope, soft: self.soft, ..Default::default() }
    }

    pub fn shape_head(&self) -> ShapeHead {
        ShapeHead { scale: self.scale, s_max: self.s_max, constrain: self.constrain }
    }
}
