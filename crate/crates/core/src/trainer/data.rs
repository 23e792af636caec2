//! Self-rendered synthetic datasets and silhouette scoring.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;

use crate::camera::{CameraIntrinsics, ViewPose};
use crate::error::{invalid, Error, Result};
use crate::image::{read_image, write_atomic, write_image, Image, Planar};
use crate::raster::{render, RenderSettings};
use crate::scene::{build_topology, initial_sphere, write_scene, Background, SceneRepresentation, TextureImage};

use super::{sample_crop, stream_rng, Stream, ViewpointDistribution};

pub const MANIFEST_NAME: &str = "manifest.txt";

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticOptions {
    pub count: usize,
    pub n: usize,
    pub seed: u64,
    /// Range of each ellipsoid semi-axis.
    pub semi_axes: (f64, f64),
    pub viewpoints: ViewpointDistribution,
}

impl Default for SyntheticOptions {
    fn default() -> Self {
        Self { count: 16, n: 16, seed: 0, semi_axes: (0.8, 1.1), viewpoints: ViewpointDistribution::default() }
    }
}

/// Smooth random colors: a base color, linear ramps and one sinusoid per channel.
fn smooth_planar<R: Rng>(rng: &mut R, side: usize, base: (f64, f64), ramp: f64, wave: f64) -> Planar {
    let mut p = Planar::zeros(side);
    let s = (side - 1) as f64;
    for c in 0..3 {
        let b = rng.gen_range(base.0..base.1);
        let (gu, gv) = (rng.gen_range(-ramp..=ramp), rng.gen_range(-ramp..=ramp));
        let (fu, fv, phase) = (rng.gen_range(0.5..2.5), rng.gen_range(0.5..2.5), rng.gen_range(0.0..std::f64::consts::TAU));
        for r in 0..side {
            for col in 0..side {
                let (u, v) = (r as f64 / s, col as f64 / s);
                let t = std::f64::consts::TAU * (fu * u + fv * v) + phase;
                *p.at_mut(c, r, col) = (b + gu * (u - 0.5) + gv * (v - 0.5) + wave * t.sin()).clamp(0.0, 1.0);
            }
        }
    }
    p
}

/// A random axis-aligned ellipsoid with a smooth random texture and background.
pub fn synthetic_scene<R: Rng>(rng: &mut R, n: usize, semi_axes: (f64, f64)) -> Result<SceneRepresentation> {
    if !(0.0 < semi_axes.0 && semi_axes.0 <= semi_axes.1) {
        return invalid(format!("bad semi-axis range {semi_axes:?}"));
    }
    let mut shape = initial_sphere(n, 1.0)?;
    let axes = nalgebra::Vector3::from_fn(|_, _| rng.gen_range(semi_axes.0..=semi_axes.1));
    for v in 0..shape.vertex_count() {
        let p = shape.vertex(v);
        shape.set_vertex(v, p.component_mul(&axes));
    }
    let texture = smooth_planar(rng, 2 * n, (0.15, 0.85), 0.3, 0.12);
    let background = smooth_planar(rng, 2 * n, (0.1, 0.9), 0.4, 0.08);
    let mut scene = SceneRepresentation { shape, texture: TextureImage(texture), background: Background(background) };
    scene.quantize_f32();
    Ok(scene)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ManifestEntry {
    pub image: String,
    pub scene: String,
    pub yaw_deg: f64,
    pub pitch_deg: f64,
    pub crop: (usize, usize),
    /// Crisp coverage, row-major.
    pub mask: Vec<bool>,
}

impl ManifestEntry {
    fn to_line(&self) -> String {
        let mask: String = self.mask.iter().map(|&m| if m { '1' } else { '0' }).collect();
        format!(
            "{} scene={} yaw={} pitch={} crop={},{} mask={}",
            self.image, self.scene, self.yaw_deg, self.pitch_deg, self.crop.0, self.crop.1, mask
        )
    }

    fn parse(line: &str) -> Result<Self> {
        let bad = || Error::Parse(format!("bad manifest line {line:?}"));
        let mut parts = line.split_whitespace();
        let image = parts.next().ok_or_else(bad)?.to_string();
        let mut e = ManifestEntry { image, scene: String::new(), yaw_deg: 0.0, pitch_deg: 0.0, crop: (0, 0), mask: Vec::new() };
        for part in parts {
            let (k, v) = part.split_once('=').ok_or_else(bad)?;
            match k {
                "scene" => e.scene = v.to_string(),
                "yaw" => e.yaw_deg = v.parse().map_err(|_| bad())?,
                "pitch" => e.pitch_deg = v.parse().map_err(|_| bad())?,
                "crop" => {
                    let (x, y) = v.split_once(',').ok_or_else(bad)?;
                    e.crop = (x.parse().map_err(|_| bad())?, y.parse().map_err(|_| bad())?);
                }
                "mask" => e.mask = v.chars().map(|c| c == '1').collect(),
                _ => return Err(bad()),
            }
        }
        Ok(e)
    }
}

/// Writes `count` rendered ellipsoids as PPM images, their SCN1 scenes and a
/// manifest with pose, crop and crisp silhouette. The masks are for
/// evaluation only.
pub fn make_synthetic(dir: &Path, opts: &SyntheticOptions) -> Result<Vec<ManifestEntry>> {
    if opts.count == 0 {
        return invalid("count must be positive");
    }
    let n = opts.n;
    let topology = build_topology(n)?;
    let intrinsics = CameraIntrinsics::for_side(n);
    std::fs::create_dir_all(dir.join("scenes"))?;
    let mut scene_rng = stream_rng(opts.seed, Stream::Data);
    let mut view_rng = stream_rng(opts.seed, Stream::Viewpoint);
    let mut crop_rng = stream_rng(opts.seed, Stream::Crop);
    let (yr, pr) = (opts.viewpoints.yaw_range, opts.viewpoints.pitch_range);
    let mut entries = Vec::with_capacity(opts.count);
    let mut manifest = String::new();
    for i in 0..opts.count {
        let scene = synthetic_scene(&mut scene_rng, n, opts.semi_axes)?;
        let yaw_deg = if yr > 0.0 { view_rng.gen_range(-yr..=yr) } else { 0.0 };
        let pitch_deg = if pr > 0.0 { view_rng.gen_range(-pr..=pr) } else { 0.0 };
        let crop = sample_crop(n, &mut crop_rng);
        let out = render(&scene, &topology, &ViewPose::from_degrees(yaw_deg, pitch_deg)?, crop, &intrinsics, &RenderSettings::default())?;
        let entry = ManifestEntry {
            image: format!("img_{i:05}.ppm"),
            scene: format!("scenes/img_{i:05}.scn"),
            yaw_deg,
            pitch_deg,
            crop,
            mask: out.crisp.alpha.iter().map(|&a| a > 0.0).collect(),
        };
        write_image(&dir.join(&entry.image), &out.color)?;
        write_scene(&dir.join(&entry.scene), &scene)?;
        writeln!(manifest, "{}", entry.to_line()).unwrap();
        entries.push(entry);
    }
    write_atomic(&dir.join(MANIFEST_NAME), manifest.as_bytes())?;
    Ok(entries)
}

pub fn read_manifest(dir: &Path) -> Result<Vec<ManifestEntry>> {
    let text = std::fs::read_to_string(dir.join(MANIFEST_NAME))?;
    text.lines().filter(|l| !l.trim().is_empty()).map(ManifestEntry::parse).collect()
}

/// Training images: every `.ppm`/`.png` directly inside a directory, sorted by name.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub n: usize,
    pub images: Vec<Image>,
    pub names: Vec<String>,
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let mut names: Vec<String> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|name| {
            let lower = name.to_ascii_lowercase();
            lower.ends_with(".ppm") || lower.ends_with(".png")
        })
        .collect();
    names.sort();
    if names.is_empty() {
        return invalid(format!("no PPM or PNG images in {}", dir.display()));
    }
    let mut images = Vec::with_capacity(names.len());
    for name in &names {
        let img = read_image(&dir.join(name))?;
        if img.width != img.height {
            return invalid(format!("{name} is not square"));
        }
        if let Some(first) = images.first().map(|i: &Image| i.width) {
            if img.width != first {
                return invalid(format!("{name} is {}x{}, expected {first}x{first}", img.width, img.height));
            }
        }
        images.push(img);
    }
    Ok(Dataset { n: images[0].width, images, names })
}

/// Intersection over union; two empty masks score 1.
pub fn silhouette_iou(a: &[bool], b: &[bool]) -> f64 {
    let (mut inter, mut union) = (0usize, 0usize);
    for (&x, &y) in a.iter().zip(b) {
        inter += (x && y) as usize;
        union += (x || y) as usize;
    }
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}
