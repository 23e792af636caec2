//! Rendering generator samples from fixed viewpoints, with normal-map,
//! texture and background panels.

use nalgebra::Vector3;

use crate::camera::{CameraIntrinsics, ViewPose};
use crate::error::{invalid, Result};
use crate::image::Image;
use crate::raster::{render, render_crisp, AttributeMode, RenderSettings};
use crate::scene::{MeshTopology, SceneRepresentation};

use super::gan::{render_batch, ToyGenerator};
use super::{stream_rng, LatentSample, Stream};

/// Yaw angles in degrees of the canonical sample viewpoints.
pub const CANONICAL_YAWS: [f64; 5] = [-90.0, -45.0, 0.0, 45.0, 90.0];

/// Camera-space unit normals (3 channels in [-1, 1]) and coverage. Vertex
/// normals are area-weighted averages of adjacent face normals; with the
/// grid winding they point out of the sphere prior.
pub fn normal_map(scene: &SceneRepresentation, topology: &MeshTopology, pose: &ViewPose) -> Result<(Image, Vec<bool>)> {
    let n = scene.n();
    let settings = RenderSettings { soft: false, attributes: AttributeMode::Direct, ..Default::default() };
    let out = render(scene, topology, pose, (0, 0), &CameraIntrinsics::for_side(n), &settings)?;
    let mut normals = vec![Vector3::zeros(); out.world.len()];
    for tri in &topology.triangles {
        let [a, b, c] = tri.map(|v| out.world[v as usize]);
        let face = (b - a).cross(&(c - a));
        for &v in tri {
            normals[v as usize] += face;
        }
    }
    let mut mesh = out.mesh.clone();
    mesh.channels = 3;
    mesh.attributes = normals.iter().flat_map(|nv| nv.try_normalize(1e-300).unwrap_or_else(Vector3::zeros).data.0[0]).collect();
    let crisp = render_crisp(&mesh, n);
    let mut img = Image::new(n, n, 3);
    let mut mask = vec![false; n * n];
    for pix in 0..n * n {
        if crisp.alpha[pix] > 0.0 {
            let a = &crisp.attr[3 * pix..3 * pix + 3];
            let v = Vector3::new(a[0], a[1], a[2]);
            if let Some(u) = v.try_normalize(1e-300) {
                img.data[3 * pix..3 * pix + 3].copy_from_slice(u.as_slice());
                mask[pix] = true;
            }
        }
    }
    Ok((img, mask))
}

#[derive(Clone, Debug)]
pub struct SampleGrid {
    /// One row per sample: the views, then (with panels) normal map,
    /// texture and background.
    pub image: Image,
    pub renders: Vec<Vec<Image>>,
    pub normals: Vec<Image>,
    pub textures: Vec<Image>,
    pub backgrounds: Vec<Image>,
}

/// Renders `count` latent samples at each yaw in `yaws_deg` (pitch 0,
/// centered crop).
pub fn sample_generator(g: &ToyGenerator, count: usize, yaws_deg: &[f64], panels: bool, seed: u64) -> Result<SampleGrid> {
    if count == 0 || yaws_deg.is_empty() {
        return invalid("need at least one sample and one viewpoint");
    }
    let n = g.config.n;
    let poses: Vec<ViewPose> = yaws_deg.iter().map(|&y| ViewPose::from_degrees(y, 0.0)).collect::<Result<_>>()?;
    let mut rng = stream_rng(seed, Stream::Latent);
    let latents: Vec<_> = (0..count).map(|_| LatentSample::sample(&mut rng)).collect();
    let generated = g.generate(&latents)?;
    let topology = g.topology()?;

    let cell_h = if panels { 2 * n } else { n };
    let width = yaws_deg.len() * n + if panels { 5 * n } else { 0 };
    let mut grid = SampleGrid { image: Image::new(width, count * cell_h, 3), renders: vec![], normals: vec![], textures: vec![], backgrounds: vec![] };
    for (i, scene) in generated.scenes.iter().enumerate() {
        let scenes = vec![scene.clone(); poses.len()];
        let views: Vec<_> = poses.iter().map(|&p| (p, (n / 2, n / 2))).collect();
        let renders: Vec<Image> = render_batch(&scenes, &topology, &views, &g.config)?.into_iter().map(|o| o.color).collect();
        let y = i * cell_h;
        for (j, r) in renders.iter().enumerate() {
            grid.image.blit(r, j * n, y);
        }
        if panels {
            let (normals, _) = normal_map(scene, &topology, &ViewPose::frontal())?;
            let mut shown = normals.clone();
            shown.data.iter_mut().for_each(|v| *v = 0.5 * (*v + 1.0));
            let x = yaws_deg.len() * n;
            grid.image.blit(&shown, x, y);
            let texture = scene.texture.0.to_image();
            let background = scene.background.0.to_image();
            grid.image.blit(&texture, x + n, y);
            grid.image.blit(&background, x + 3 * n, y);
            grid.normals.push(normals);
            grid.textures.push(texture);
            grid.backgrounds.push(background);
        }
        grid.renders.push(renders);
    }
    Ok(grid)
}
