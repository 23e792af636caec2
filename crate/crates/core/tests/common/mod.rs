#![allow(dead_code)]

use std::path::{Path, PathBuf};

use rand::Rng;
use softmesh::raster::distance::MIN_TRIANGLE_AREA;
use softmesh::raster::{Point, ProjectedMesh, Z_FAR};

/// Per-pixel crisp reference: depth, winner (`None` for background),
/// interpolated attributes.
pub struct CrispReference {
    pub depth: Vec<f64>,
    pub winner: Vec<Option<usize>>,
    pub attr: Vec<f64>,
}

fn edge(a: Point, b: Point, p: Point) -> f64 {
    let (u, v) = (a - p, b - p);
    u.x * v.y - u.y * v.x
}

/// Tests every triangle at every pixel center, in triangle order, keeping the
/// strictly nearest; edges count as inside and ties keep the lower index.
pub fn brute_force_crisp(mesh: &ProjectedMesh, side: usize) -> CrispReference {
    let c = mesh.channels;
    let mut out = CrispReference { depth: vec![Z_FAR; side * side], winner: vec![None; side * side], attr: vec![0.0; side * side * c] };
    for row in 0..side {
        for col in 0..side {
            let p = Point::new(col as f64 + 0.5, row as f64 + 0.5);
            let pix = row * side + col;
            let mut best: Option<(usize, [f64; 3])> = None;
            for (t, tri) in mesh.triangles.iter().enumerate() {
                let [a, b, q] = tri.map(|v| mesh.positions[v as usize]);
                let (u, v) = (b - a, q - a);
                let area = u.x * v.y - u.y * v.x;
                if !(0.5 * area.abs() > MIN_TRIANGLE_AREA) {
                    continue;
                }
                let w = [edge(b, q, p) / area, edge(q, a, p) / area, edge(a, b, p) / area];
                if w.iter().any(|&x| x < 0.0) {
                    continue;
                }
                let z = w[0] * mesh.depths[tri[0] as usize] + w[1] * mesh.depths[tri[1] as usize] + w[2] * mesh.depths[tri[2] as usize];
                if z < out.depth[pix] {
                    out.depth[pix] = z;
                    best = Some((t, w));
                }
            }
            if let Some((t, w)) = best {
                out.winner[pix] = Some(t);
                for ch in 0..c {
                    let mut acc = 0.0;
                    for k in 0..3 {
                        acc += w[k] * mesh.attributes[mesh.triangles[t][k] as usize * c + ch];
                    }
                    out.attr[pix * c + ch] = acc;
                }
            }
        }
    }
    out
}

/// Random screen-space mesh with up to `max_triangles` triangles on a
/// `side`×`side` image. Some vertices sit exactly on pixel centers or pixel
/// edges, some triangles repeat at equal depth and a few are degenerate, so
/// edge-inclusion and tie rules are exercised.
pub fn random_mesh<R: Rng>(rng: &mut R, max_triangles: usize, side: usize) -> ProjectedMesh {
    let count = rng.gen_range(1..=max_triangles);
    let s = side as f64;
    let mut mesh = ProjectedMesh { positions: vec![], depths: vec![], triangles: vec![], attributes: vec![], channels: 3 };
    fn push<R: Rng>(rng: &mut R, mesh: &mut ProjectedMesh, p: Point) -> u32 {
        mesh.positions.push(p);
        mesh.depths.push(rng.gen_range(8.0..12.0));
        mesh.attributes.extend((0..mesh.channels).map(|_| rng.gen_range(0.0..1.0)));
        (mesh.positions.len() - 1) as u32
    }
    let random_point = |rng: &mut R| match rng.gen_range(0..4) {
        0 => Point::new(rng.gen_range(0..side) as f64 + 0.5, rng.gen_range(0..side) as f64 + 0.5),
        1 => Point::new(rng.gen_range(0..=side) as f64, rng.gen_range(0..=side) as f64),
        _ => Point::new(rng.gen_range(-0.1 * s..1.1 * s), rng.gen_range(-0.1 * s..1.1 * s)),
    };
    while mesh.triangles.len() < count {
        let t = match rng.gen_range(0..10) {
            0 if !mesh.triangles.is_empty() => mesh.triangles[rng.gen_range(0..mesh.triangles.len())],
            1 => {
                let (pa, pb) = (random_point(rng), random_point(rng));
                let a = push(rng, &mut mesh, pa);
                let b = push(rng, &mut mesh, pb);
                [a, b, b]
            }
            2 => {
                // small triangle near a pixel center
                let c = Point::new(rng.gen_range(0..side) as f64 + 0.5, rng.gen_range(0..side) as f64 + 0.5);
                let mut t = [0; 3];
                for v in &mut t {
                    let p = c + Point::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
                    *v = push(rng, &mut mesh, p);
                }
                t
            }
            _ => {
                let mut t = [0; 3];
                for v in &mut t {
                    let p = random_point(rng);
                    *v = push(rng, &mut mesh, p);
                }
                t
            }
        };
        mesh.triangles.push(t);
    }
    mesh
}

/// Path of the built `softmesh` binary.
pub fn binary() -> PathBuf {
    PathBuf::from(env!("CARGO_BIN_EXE_softmesh"))
}

pub fn manifest_dir() -> &'static Path {
    Path::new(env!("CARGO_MANIFEST_DIR"))
}

pub fn example_scene() -> PathBuf {
    manifest_dir().join("assets/example.scn")
}

pub fn golden_render() -> PathBuf {
    manifest_dir().join("tests/golden/example_yaw30_pitch10.ppm")
}

/// Flags used to produce the golden render from the example scene.
pub const GOLDEN_FLAGS: [&str; 6] = ["--yaw", "30", "--pitch", "10", "--crop", "5,9"];
