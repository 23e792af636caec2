mod common;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use softmesh::camera::{CameraIntrinsics, ViewPose};
use softmesh::image::{Image, Planar};
use softmesh::raster::{blend_weights, compose, render, render_crisp, render_soft, ComposeMode, Layer, Point, ProjectedMesh, RenderSettings, SoftBuffers, Z_FAR};
use softmesh::scene::{build_topology, shape_pyramid, SceneRepresentation, ShapeImage};
use softmesh::trainer::synthetic_scene;

fn random_scene(seed: u64, n: usize) -> SceneRepresentation {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut scene = synthetic_scene(&mut rng, n, (0.4, 1.2)).unwrap();
    let noise: Vec<ShapeImage> =
        (0..2).map(|_| ShapeImage(Planar::from_data(n, (0..3 * n * n).map(|_| rng.gen_range(-0.3..0.3)).collect()).unwrap())).collect();
    scene.shape.0.axpy(1.0, &shape_pyramid(&noise).unwrap().0);
    scene
}

fn composed(mesh: &ProjectedMesh, side: usize, band: f64, lambda: f64) -> Image {
    let crisp = render_crisp(mesh, side);
    let soft = render_soft(mesh, &crisp, band, lambda).unwrap();
    let img = |d: &[f64]| Image { width: side, height: side, channels: 3, data: d.to_vec() };
    let (cc, sc) = (img(&crisp.attr), img(&soft.attr));
    compose(Layer { alpha: &crisp.alpha, color: &cc }, Layer { alpha: &soft.alpha, color: &sc }, &Image::filled(side, side, &[0.2, 0.4, 0.6]), ComposeMode::Nested)
        .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn buffers_respect_their_ranges(seed in 0u64..10_000, yaw in -180.0f64..180.0, pitch in -90.0f64..90.0, band in 0.3f64..4.0) {
        let n = 12;
        let scene = random_scene(seed, n);
        let topo = build_topology(n).unwrap();
        let settings = RenderSettings { band, ..Default::default() };
        let out = render(&scene, &topo, &ViewPose::from_degrees(yaw, pitch).unwrap(), (3, 5), &CameraIntrinsics::for_side(n), &settings).unwrap();
        for pix in 0..n * n {
            let covered = out.crisp.winner_at(pix).is_some();
            prop_assert_eq!(covered, out.crisp.alpha[pix] == 1.0);
            prop_assert_eq!(covered, out.crisp.depth[pix] < Z_FAR);
            prop_assert!(out.crisp.depth[pix] > 0.0 && out.crisp.depth[pix] <= Z_FAR);
            prop_assert!((0.0..=1.0).contains(&out.soft.alpha[pix]));
            if out.soft.count(pix) == 0 {
                prop_assert_eq!(out.soft.alpha[pix], 0.0);
            }
            for hit in out.soft.contributors(pix) {
                prop_assert!(hit.hit.distance > 0.0 && hit.hit.distance < band);
            }
            let w = blend_weights(out.soft.alpha[pix], out.crisp.alpha[pix], ComposeMode::Nested);
            prop_assert!(w.iter().all(|&x| x >= 0.0));
            prop_assert_eq!(w[0] + w[1] + w[2], 1.0);
        }
        prop_assert!(out.color.data.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn crisp_pass_matches_brute_force(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mesh = common::random_mesh(&mut rng, 40, 24);
        let fast = render_crisp(&mesh, 24);
        let slow = common::brute_force_crisp(&mesh, 24);
        for pix in 0..24 * 24 {
            prop_assert_eq!(fast.winner_at(pix), slow.winner[pix]);
            prop_assert_eq!(fast.depth[pix].to_bits(), slow.depth[pix].to_bits());
            for c in 0..3 {
                prop_assert_eq!(fast.attr[3 * pix + c].to_bits(), slow.attr[3 * pix + c].to_bits());
            }
        }
    }

    #[test]
    fn translation_changes_soft_image_linearly(dx in 0.0f64..4.0, delta in 1e-4f64..0.25) {
        // one constant-color triangle: every pixel moves by at most delta / band
        let tri = |shift: f64| ProjectedMesh {
            positions: vec![Point::new(2.2 + shift, 3.1), Point::new(11.4 + shift, 5.3), Point::new(5.6 + shift, 12.2)],
            depths: vec![10.0, 10.3, 9.8],
            triangles: vec![[0, 1, 2]],
            attributes: vec![0.9; 9],
            channels: 3,
        };
        let band = 2.0;
        let a = composed(&tri(dx), 16, band, 1.0);
        let b = composed(&tri(dx + delta), 16, band, 1.0);
        // color contrast against the background is at most 0.7
        prop_assert!(a.max_abs_diff(&b) <= 0.7 * delta / band + 1e-12);
    }

    #[test]
    fn pushing_an_occluded_triangle_back_is_invisible(seed in 0u64..10_000, push in 0.1f64..50.0) {
        // a big near quad hides a far triangle placed well inside it
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = Point::new(rng.gen_range(7.0..9.0), rng.gen_range(7.0..9.0));
        let far = [c + Point::new(-2.0, -1.5), c + Point::new(2.5, -1.0), c + Point::new(0.3, 2.2)];
        let mut mesh = ProjectedMesh {
            positions: vec![Point::new(-4.0, -4.0), Point::new(20.0, -4.0), Point::new(20.0, 20.0), Point::new(-4.0, 20.0), far[0], far[1], far[2]],
            depths: vec![9.0, 9.0, 9.0, 9.0, 10.0, 10.5, 10.2],
            triangles: vec![[0, 1, 2], [0, 2, 3], [4, 5, 6]],
            attributes: (0..21).map(|_| rng.gen_range(0.0..1.0)).collect(),
            channels: 3,
        };
        let before = composed(&mesh, 16, 2.0, 1.0);
        for d in &mut mesh.depths[4..] {
            *d += push;
        }
        prop_assert_eq!(before, composed(&mesh, 16, 2.0, 1.0));
    }
}

#[test]
fn crisp_only_image_jumps_across_an_edge() {
    let tri = |shift: f64| ProjectedMesh {
        positions: vec![Point::new(2.0 + shift, 2.0), Point::new(12.0 + shift, 2.6), Point::new(4.0 + shift, 12.0)],
        depths: vec![10.0; 3],
        triangles: vec![[0, 1, 2]],
        attributes: vec![1.0; 9],
        channels: 3,
    };
    let image = |m: &ProjectedMesh| {
        let crisp = render_crisp(m, 16);
        let soft = SoftBuffers::empty(16, 3);
        let img = |d: &[f64]| Image { width: 16, height: 16, channels: 3, data: d.to_vec() };
        let (cc, sc) = (img(&crisp.attr), img(&soft.attr));
        compose(Layer { alpha: &crisp.alpha, color: &cc }, Layer { alpha: &soft.alpha, color: &sc }, &Image::new(16, 16, 3), ComposeMode::Nested).unwrap()
    };
    let jumps = (0..64).map(|k| image(&tri(k as f64 / 64.0)).max_abs_diff(&image(&tri((k + 1) as f64 / 64.0)))).fold(0.0, f64::max);
    assert!(jumps >= 1.0 - 1e-12, "{jumps}");
}

#[test]
fn render_is_identical_across_thread_counts() {
    let scene = random_scene(5, 16);
    let topo = build_topology(16).unwrap();
    let go = || render(&scene, &topo, &ViewPose::from_degrees(20.0, -7.0).unwrap(), (4, 8), &CameraIntrinsics::for_side(24), &RenderSettings::default()).unwrap();
    let pools: Vec<_> = [1, 2, 5].iter().map(|&t| rayon::ThreadPoolBuilder::new().num_threads(t).build().unwrap()).collect();
    let outs: Vec<_> = pools.iter().map(|p| p.install(go)).collect();
    for o in &outs[1..] {
        assert_eq!(o.color, outs[0].color);
        assert_eq!(o.crisp, outs[0].crisp);
        assert_eq!(o.soft, outs[0].soft);
    }
}
