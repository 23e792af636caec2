//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any fails. `ACCEPTANCE_ONLY=1,2,9` restricts the run.

mod common;

use std::collections::BTreeMap;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use softmesh::camera::{CameraIntrinsics, ViewPose};
use softmesh::grad::{run_gradcheck, GradcheckConfig};
use softmesh::image::{encode_ppm, Image};
use softmesh::raster::{blend_weights, compose, render, render_crisp, render_soft, AttributeMode, ComposeMode, Layer, Point, ProjectedMesh, RenderSettings};
use softmesh::scene::{
    build_topology, decode_scn1, encode_scn1, initial_sphere, read_scene, shape_pyramid, size_constraint, Background, SceneRepresentation, ShapeImage,
    TextureImage,
};
use softmesh::trainer::{
    decode_ckpt1, encode_ckpt1, evaluate_iou, fit_scene, load_dataset, make_synthetic, read_manifest, stream_rng, synthetic_scene, train_toy_gan, FitOptions,
    FitView, LatentSample, Stream, SyntheticOptions, ToyDiscriminator, ToyGenerator, TrainConfig,
};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

fn minutes(d: Duration) -> f64 {
    d.as_secs_f64() / 60.0
}

fn gradient_exactness() -> Verdict {
    let start = Instant::now();
    let cfg = GradcheckConfig { seed: 0, trials: 500, res: 32, eps: 1e-3, tolerance: 1e-4 };
    let report = run_gradcheck(&cfg).expect("gradcheck runs");
    let elapsed = start.elapsed();
    let rejected = report.rejected_fraction();
    let accepted = report.accepted().count();
    let pass = report.ok() && rejected < 0.10 && minutes(elapsed) < 5.0;
    verdict(
        pass,
        format!(
            "pass {}/{} accepted, max_rel_err {:.3e} (limit 1e-4), rejected {:.1}% (limit 10%), {:.1}s",
            report.passed(),
            accepted,
            report.max_rel_err(),
            100.0 * rejected,
            elapsed.as_secs_f64()
        ),
    )
}

fn crisp_oracle_equivalence() -> Verdict {
    let start = Instant::now();
    let side = 64;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut mismatches = 0usize;
    let mut covered = 0usize;
    for _ in 0..50 {
        let mesh = common::random_mesh(&mut rng, 200, side);
        let fast = render_crisp(&mesh, side);
        let slow = common::brute_force_crisp(&mesh, side);
        for pix in 0..side * side {
            let winner = fast.winner_at(pix);
            covered += winner.is_some() as usize;
            let same = winner == slow.winner[pix]
                && fast.depth[pix].to_bits() == slow.depth[pix].to_bits()
                && fast.alpha[pix] == if slow.winner[pix].is_some() { 1.0 } else { 0.0 }
                && (0..3).all(|c| fast.attr[3 * pix + c].to_bits() == slow.attr[3 * pix + c].to_bits());
            mismatches += !same as usize;
        }
    }
    let elapsed = start.elapsed();
    verdict(
        mismatches == 0 && minutes(elapsed) < 1.0,
        format!("{mismatches} mismatching pixels over 50 meshes ({covered} covered pixels), {:.1}s", elapsed.as_secs_f64()),
    )
}

fn random_scene(rng: &mut ChaCha8Rng, n: usize) -> SceneRepresentation {
    let mut scene = synthetic_scene(rng, n, (0.4, 1.2)).unwrap();
    let noise: Vec<ShapeImage> = (0..3)
        .map(|_| ShapeImage(softmesh::image::Planar::from_data(n, (0..3 * n * n).map(|_| rng.gen_range(-0.2..0.2)).collect()).unwrap()))
        .collect();
    scene.shape.0.axpy(1.0, &shape_pyramid(&noise).unwrap().0);
    scene
}

fn partition_of_unity() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (n, side) = (32, 64);
    let topology = build_topology(n).unwrap();
    let intrinsics = CameraIntrinsics::for_side(side);
    let mut pixels = 0usize;
    let mut negative = 0usize;
    let mut worst = 0.0f64;
    let mut soft_pixels = 0usize;
    while pixels < 1_000_000 {
        let scene = random_scene(&mut rng, n);
        let pose = ViewPose::from_degrees(rng.gen_range(-180.0..180.0), rng.gen_range(-90.0..90.0)).unwrap();
        let settings = RenderSettings { band: rng.gen_range(0.5..4.0), lambda_slope: rng.gen_range(0.2..3.0), ..Default::default() };
        let out = render(&scene, &topology, &pose, (0, 0), &intrinsics, &settings).unwrap();
        for pix in 0..side * side {
            let w = blend_weights(out.soft.alpha[pix], out.crisp.alpha[pix], ComposeMode::Nested);
            negative += w.iter().any(|&x| x < 0.0) as usize;
            worst = worst.max((w[0] + w[1] + w[2] - 1.0).abs());
            soft_pixels += (out.soft.alpha[pix] > 0.0) as usize;
        }
        pixels += side * side;
    }
    verdict(
        negative == 0 && worst <= f64::EPSILON,
        format!("{pixels} pixels ({soft_pixels} with soft coverage): {negative} negative, max |sum-1| = {:.1} ulp", worst / f64::EPSILON),
    )
}

/// Composed image of one constant-color white triangle over black, shifted
/// right by `dx` pixels.
fn shifted_triangle(dx: f64, soft: bool, band: f64) -> Image {
    let side = 16;
    let positions = [Point::new(3.3, 4.1), Point::new(12.7, 6.2), Point::new(6.9, 13.4)].map(|p| p + Point::new(dx, 0.0)).to_vec();
    let mesh = ProjectedMesh { positions, depths: vec![10.0, 10.5, 9.5], triangles: vec![[0, 1, 2]], attributes: vec![1.0; 9], channels: 3 };
    let crisp = render_crisp(&mesh, side);
    let soft_buf = if soft { render_soft(&mesh, &crisp, band, 1.0).unwrap() } else { softmesh::raster::SoftBuffers::empty(side, 3) };
    let to_image = |data: &[f64]| Image { width: side, height: side, channels: 3, data: data.to_vec() };
    let (crisp_color, soft_color) = (to_image(&crisp.attr), to_image(&soft_buf.attr));
    compose(
        Layer { alpha: &crisp.alpha, color: &crisp_color },
        Layer { alpha: &soft_buf.alpha, color: &soft_color },
        &Image::new(side, side, 3),
        ComposeMode::Nested,
    )
    .unwrap()
}

fn boundary_continuity() -> Verdict {
    let band = 2.0;
    let step = 1.0 / 64.0;
    // Soft alpha is 1 - d/B and d is 1-Lipschitz under translation; with a
    // constant color of contrast 1 each step changes a pixel by at most step/B.
    let bound = step / band + 1e-12;
    let sweep = |soft: bool| -> f64 {
        let frames: Vec<Image> = (0..=64).map(|k| shifted_triangle(k as f64 * step, soft, band)).collect();
        frames.windows(2).map(|w| w[0].max_abs_diff(&w[1])).fold(0.0, f64::max)
    };
    let (soft, crisp) = (sweep(true), sweep(false));
    verdict(
        soft <= bound && crisp >= 0.5,
        format!("max per-step change: soft {soft:.5} (bound {:.5}), crisp-only {crisp:.3} (needs >= 0.5)", bound),
    )
}

fn shape_head_examples() -> Verdict {
    let mut failures = Vec::new();
    let c = [0.3, -0.7, 1.1];
    let constant = ShapeImage(softmesh::image::Planar::constant(8, c));
    let pyr = shape_pyramid(&vec![constant.clone(); 4]).unwrap();
    let err = pyr.0.data.iter().zip(&constant.0.data).map(|(p, v)| (p - 1.875 * v).abs()).fold(0.0, f64::max);
    if err > 1e-12 {
        failures.push(format!("pyramid of constants off by {err:.2e}"));
    }
    let mut s = ShapeImage::zeros(4);
    s.set_vertex(0, [0.1, 0.0, 0.0].into());
    s.set_vertex(1, [1e6, -2e6, 3e5].into());
    s.set_vertex(2, [0.0, 0.0, 0.0].into());
    let out = size_constraint(&s, 1.3);
    let scalar = out.vertex(0).x;
    if (scalar - 1.3 * 0.1f64.tanh()).abs() > 1e-12 || (scalar - 0.12957).abs() > 5e-6 || out.vertex(0).y != 0.0 {
        failures.push(format!("tanh scalar case gave {scalar}"));
    }
    let far = out.vertex(1).norm();
    if (far - 1.3).abs() > 1e-9 {
        failures.push(format!("asymptote {far}"));
    }
    if out.vertex(2).norm() != 0.0 {
        failures.push("origin not fixed".into());
    }
    let detail = if failures.is_empty() { format!("1.875 factor err {err:.1e}, tanh case {scalar:.7}, asymptote {far:.12}") } else { failures.join("; ") };
    verdict(failures.is_empty(), detail)
}

fn ellipsoid_target(n: usize) -> SceneRepresentation {
    let mut shape = initial_sphere(n, 1.0).unwrap();
    let axes = nalgebra::Vector3::new(0.9, 0.65, 0.8);
    for v in 0..shape.vertex_count() {
        let p = shape.vertex(v);
        shape.set_vertex(v, p.component_mul(&axes));
    }
    let mut texture = softmesh::image::Planar::zeros(2 * n);
    for r in 0..2 * n {
        for col in 0..2 * n {
            let (u, v) = (r as f64 / (2 * n - 1) as f64, col as f64 / (2 * n - 1) as f64);
            *texture.at_mut(0, r, col) = 0.2 + 0.6 * u;
            *texture.at_mut(1, r, col) = 0.3 + 0.4 * (6.0 * v).sin().abs();
            *texture.at_mut(2, r, col) = 0.7 - 0.5 * u * v;
        }
    }
    SceneRepresentation { shape, texture: TextureImage(texture), background: Background(softmesh::image::Planar::constant(2 * n, [0.15, 0.2, 0.25])) }
}

fn inverse_rendering() -> Verdict {
    let start = Instant::now();
    let n = 32;
    let target = ellipsoid_target(n);
    let topology = build_topology(n).unwrap();
    let views: Vec<FitView> = [(0.0, 0.0), (35.0, 10.0), (-35.0, -10.0)]
        .iter()
        .map(|&(y, p)| {
            let pose = ViewPose::from_degrees(y, p).unwrap();
            let crop = (n / 2, n / 2);
            let img = render(&target, &topology, &pose, crop, &CameraIntrinsics::for_side(n), &RenderSettings::default()).unwrap().color;
            FitView { pose, crop_offset: crop, target: img }
        })
        .collect();
    let init = SceneRepresentation { shape: initial_sphere(n, 0.6).unwrap(), ..SceneRepresentation::sphere(n, 0.6, [0.5; 3], [0.15, 0.2, 0.25]).unwrap() };
    let opts = FitOptions { steps: 500, ..Default::default() };
    let a = fit_scene(&views, &init, &opts, None).unwrap();
    let elapsed = start.elapsed();
    let b = fit_scene(&views, &init, &opts, None).unwrap();
    let ratio = a.losses.last().unwrap() / a.losses[0];
    let deterministic = a == b;
    verdict(
        ratio <= 0.1 && deterministic && minutes(elapsed) < 2.0,
        format!("final/initial loss {ratio:.4} (limit 0.1), deterministic {deterministic}, {:.1}s per fit", elapsed.as_secs_f64()),
    )
}

/// Training configuration shared by the toy adversarial criteria.
const TOY_GAN_CONFIG: &str = "\
seed=0
n=16
steps=20000
hidden=64
batch=8
optimizer=adam
scale=0.02
lr_g=1e-4
lr_d=1e-4
";

const EVAL_SAMPLES: usize = 64;
const EVAL_SEED: u64 = 1;

struct ToyRun {
    median_iou: f64,
    mean_vertex_norm: f64,
    finite: bool,
    seconds: f64,
}

fn toy_dataset() -> &'static (tempfile::TempDir, Vec<Vec<bool>>) {
    static DATA: OnceLock<(tempfile::TempDir, Vec<Vec<bool>>)> = OnceLock::new();
    DATA.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        make_synthetic(dir.path(), &SyntheticOptions { count: 2000, n: 16, seed: 0, ..Default::default() }).unwrap();
        let masks = read_manifest(dir.path()).unwrap().into_iter().map(|e| e.mask).collect();
        (dir, masks)
    })
}

fn mean_vertex_norm(g: &ToyGenerator) -> f64 {
    let topology = g.topology().unwrap();
    let mut rng = stream_rng(EVAL_SEED, Stream::Eval);
    let latents: Vec<_> = (0..EVAL_SAMPLES).map(|_| LatentSample::sample(&mut rng)).collect();
    let batch = g.generate(&latents).unwrap();
    let (mut sum, mut count) = (0.0, 0usize);
    for s in &batch.scenes {
        for v in (0..s.shape.vertex_count()).filter(|&v| topology.referenced[v]) {
            sum += s.shape.vertex(v).norm();
            count += 1;
        }
    }
    sum / count as f64
}

fn toy_run(overrides: &[(&str, &str)]) -> ToyRun {
    let (dir, masks) = toy_dataset();
    let mut config = TrainConfig::parse(TOY_GAN_CONFIG).unwrap();
    for (k, v) in overrides {
        config.set(k, v).unwrap();
    }
    let dataset = load_dataset(dir.path()).unwrap();
    let start = Instant::now();
    let mut log = Vec::new();
    let out = train_toy_gan(&dataset, &config, &mut log, None);
    let seconds = start.elapsed().as_secs_f64();
    match out {
        Ok(o) => {
            let mut ious = evaluate_iou(&o.generator, masks, EVAL_SAMPLES, EVAL_SEED).unwrap();
            ious.sort_by(f64::total_cmp);
            ToyRun { median_iou: 0.5 * (ious[31] + ious[32]), mean_vertex_norm: mean_vertex_norm(&o.generator), finite: true, seconds }
        }
        Err(e) => {
            eprintln!("toy training failed: {e}");
            ToyRun { median_iou: 0.0, mean_vertex_norm: f64::NAN, finite: false, seconds }
        }
    }
}

fn soft_run() -> &'static ToyRun {
    static RUN: OnceLock<ToyRun> = OnceLock::new();
    RUN.get_or_init(|| toy_run(&[]))
}

fn toy_adversarial_training() -> Verdict {
    let run = soft_run();
    verdict(
        run.finite && run.median_iou >= 0.6 && run.seconds <= 1800.0,
        format!("median IoU {:.3} over {EVAL_SAMPLES} samples (threshold 0.6), finite {}, {:.0}s", run.median_iou, run.finite, run.seconds),
    )
}

fn ablations() -> Verdict {
    let soft = soft_run();
    let crisp = toy_run(&[("soft", "false")]);
    let free = toy_run(&[("constrain", "false")]);
    let gap = soft.median_iou - crisp.median_iou;
    let growth = free.mean_vertex_norm / soft.mean_vertex_norm;
    let pass = gap >= 0.15 && growth >= 1.5 && crisp.finite && free.finite;
    verdict(
        pass,
        format!(
            "crisp-only median IoU {:.3} vs soft {:.3} (gap {gap:.3}, needs >= 0.15); unconstrained mean vertex norm {:.3} vs {:.3} (x{growth:.2}, needs >= 1.5)",
            crisp.median_iou, soft.median_iou, free.mean_vertex_norm, soft.mean_vertex_norm
        ),
    )
}

fn format_round_trips() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut scn_ok = true;
    for n in [4, 7, 16, 32] {
        let mut scene = random_scene(&mut rng, n);
        scene.quantize_f32();
        let bytes = encode_scn1(&scene).unwrap();
        let back = decode_scn1(&bytes).unwrap();
        scn_ok &= back == scene && encode_scn1(&back).unwrap() == bytes;
    }
    let config = TrainConfig { n: 8, hidden: 8, ..Default::default() };
    let mut init = stream_rng(4, Stream::Init);
    let g = ToyGenerator::new(&config, &mut init).unwrap();
    let d = ToyDiscriminator::new(&config, &mut init);
    let ckpt = softmesh::trainer::make_checkpoint(&g, &d);
    let bytes = encode_ckpt1(&ckpt);
    let back = decode_ckpt1(&bytes).unwrap();
    let ckpt_ok = back == ckpt && encode_ckpt1(&back) == bytes && ToyGenerator::from_checkpoint(&back).unwrap() == g;

    let scene = read_scene(&common::example_scene()).unwrap();
    let settings = RenderSettings { attributes: AttributeMode::Uv, ..Default::default() };
    let img = render(&scene, &build_topology(scene.n()).unwrap(), &ViewPose::from_degrees(30.0, 10.0).unwrap(), (5, 9), &CameraIntrinsics::for_side(scene.n()), &settings)
        .unwrap()
        .color;
    let golden_ok = encode_ppm(&img).unwrap() == std::fs::read(common::golden_render()).unwrap();
    verdict(scn_ok && ckpt_ok && golden_ok, format!("SCN1 bit-exact {scn_ok}, CKPT1 bit-exact {ckpt_ok}, golden PPM byte-identical {golden_ok}"))
}

fn main() {
    let only: Option<Vec<u32>> = std::env::var("ACCEPTANCE_ONLY").ok().map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect());
    let criteria: [(u32, &str, fn() -> Verdict); 9] = [
        (1, "gradient exactness", gradient_exactness),
        (2, "crisp oracle equivalence", crisp_oracle_equivalence),
        (3, "compositing partition of unity", partition_of_unity),
        (4, "boundary continuity", boundary_continuity),
        (5, "shape head examples", shape_head_examples),
        (6, "inverse rendering", inverse_rendering),
        (7, "toy adversarial training", toy_adversarial_training),
        (8, "ablations", ablations),
        (9, "file format round trips", format_round_trips),
    ];
    let mut results = BTreeMap::new();
    for (id, name, check) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let start = Instant::now();
        let v = check();
        let status = if v.pass { "PASS" } else { "FAIL" };
        println!("acceptance {id} {name}: {status} ({}) [{:.1}s]", v.detail, start.elapsed().as_secs_f64());
        results.insert(id, v.pass);
    }
    let failed: Vec<_> = results.iter().filter(|(_, &p)| !p).map(|(id, _)| id.to_string()).collect();
    println!("acceptance summary: {}/{} passed{}", results.len() - failed.len(), results.len(), if failed.is_empty() { String::new() } else { format!(", failed: {}", failed.join(",")) });
    if !failed.is_empty() {
        std::process::exit(1);
    }
}
