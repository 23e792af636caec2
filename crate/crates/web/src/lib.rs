//! Browser demo: renders a random textured blob and shows its soft/crisp
//! coverage and the per-vertex gradient of mean image brightness.

use softmesh::camera::{CameraIntrinsics, ViewPose};
use softmesh::grad::{backward, world_gradient};
use softmesh::image::{to_u8, Image};
use softmesh::raster::{render, render_crisp, AttributeMode, RenderOutput, RenderSettings};
use softmesh::scene::{build_topology, MeshTopology, SceneRepresentation};
use softmesh::trainer::{stream_rng, synthetic_scene, Stream};
use wasm_bindgen::prelude::*;

/// Scene plus topology; all views are rendered at `2 * n` pixels.
pub struct DemoScene {
    scene: SceneRepresentation,
    topology: MeshTopology,
}

fn rgba(img: &Image) -> Vec<u8> {
    let mut out = Vec::with_capacity(img.width * img.height * 4);
    for px in img.data.chunks_exact(img.channels) {
        out.extend(px.iter().map(|&v| to_u8(v)));
        out.push(255);
    }
    out
}

/// Cold-to-hot ramp for values in [0, 1].
fn heat(t: f64) -> [f64; 3] {
    let t = t.clamp(0.0, 1.0);
    [t.sqrt(), t * t, 0.6 * (1.0 - t) + 0.2 * t]
}

impl DemoScene {
    pub fn new(n: usize, seed: u64) -> softmesh::Result<Self> {
        let scene = synthetic_scene(&mut stream_rng(seed, Stream::Data), n, (0.7, 1.0))?;
        Ok(Self { topology: build_topology(n)?, scene })
    }

    pub fn side(&self) -> usize {
        2 * self.scene.n()
    }

    fn output(&self, yaw: f64, pitch: f64, band: f64, soft: bool) -> softmesh::Result<RenderOutput> {
        let settings = RenderSettings { band, soft, attributes: AttributeMode::Uv, ..Default::default() };
        let pose = ViewPose::from_degrees(yaw, pitch)?;
        render(&self.scene, &self.topology, &pose, (0, 0), &CameraIntrinsics::for_side(self.side()), &settings)
    }

    /// Composed color image.
    pub fn color(&self, yaw: f64, pitch: f64, band: f64, soft: bool) -> softmesh::Result<Image> {
        Ok(self.output(yaw, pitch, band, soft)?.color)
    }

    /// Crisp coverage in red, soft alpha in green.
    pub fn alpha(&self, yaw: f64, pitch: f64, band: f64) -> softmesh::Result<Image> {
        let out = self.output(yaw, pitch, band, true)?;
        let side = self.side();
        let mut img = Image::new(side, side, 3);
        for pix in 0..side * side {
            img.data[3 * pix] = out.crisp.alpha[pix];
            img.data[3 * pix + 1] = out.soft.alpha[pix];
        }
        Ok(img)
    }

    /// Mesh colored by the norm of d(mean brightness)/d(vertex), scaled to
    /// the largest vertex; uncovered pixels are dark gray.
    pub fn gradient(&self, yaw: f64, pitch: f64, band: f64) -> softmesh::Result<Image> {
        let out = self.output(yaw, pitch, band, true)?;
        let side = self.side();
        let upstream = Image::filled(side, side, &[1.0 / (3 * side * side) as f64; 3]);
        let grads = backward(&out, &upstream, &self.scene, &self.topology)?;
        let norms: Vec<f64> = world_gradient(&out, &grads).iter().map(|g| g.norm()).collect();
        let max = norms.iter().copied().fold(0.0, f64::max);
        let mut mesh = out.mesh.clone();
        mesh.channels = 3;
        mesh.attributes = norms.iter().flat_map(|&g| heat(if max > 0.0 { g / max } else { 0.0 })).collect();
        let crisp = render_crisp(&mesh, side);
        let mut img = Image::filled(side, side, &[0.12; 3]);
        for pix in 0..side * side {
            if crisp.alpha[pix] > 0.0 {
                img.data[3 * pix..3 * pix + 3].copy_from_slice(&crisp.attr[3 * pix..3 * pix + 3]);
            }
        }
        Ok(img)
    }
}

fn js(e: softmesh::Error) -> JsError {
    JsError::new(&e.to_string())
}

/// JavaScript handle around [`DemoScene`]; images are RGBA bytes of
/// `side() × side()` pixels.
#[wasm_bindgen]
pub struct Demo(DemoScene);

#[wasm_bindgen]
impl Demo {
    #[wasm_bindgen(constructor)]
    pub fn new(n: usize, seed: u32) -> Result<Demo, JsError> {
        DemoScene::new(n, seed as u64).map(Demo).map_err(js)
    }

    pub fn side(&self) -> usize {
        self.0.side()
    }

    pub fn render_rgba(&self, yaw: f64, pitch: f64, band: f64, soft: bool) -> Result<Vec<u8>, JsError> {
        self.0.color(yaw, pitch, band, soft).map(|i| rgba(&i)).map_err(js)
    }

    pub fn alpha_rgba(&self, yaw: f64, pitch: f64, band: f64) -> Result<Vec<u8>, JsError> {
        self.0.alpha(yaw, pitch, band).map(|i| rgba(&i)).map_err(js)
    }

    pub fn gradient_rgba(&self, yaw: f64, pitch: f64, band: f64) -> Result<Vec<u8>, JsError> {
        self.0.gradient(yaw, pitch, band).map(|i| rgba(&i)).map_err(js)
    }
}
