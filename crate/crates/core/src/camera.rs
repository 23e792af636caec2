//! Object rotation and the fixed perspective camera.
//!
//! The camera sits on +Z looking at the origin. The field of view is chosen
//! so the unit sphere's silhouette is inscribed in the N × N image. Pixel
//! `(col, row)` has its center at `(col + 0.5, row + 0.5)` and image Y points
//! down.

use nalgebra::{Matrix2x3, Matrix3, Vector2, Vector3};

use crate::error::{invalid, Error, Result};
use crate::scene::ShapeImage;

pub const DEFAULT_CAMERA_DISTANCE: f64 = 10.0;

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ViewPose {
    /// Radians about the vertical (Y) axis.
    pub yaw: f64,
    /// Radians about the horizontal (X) axis.
    pub pitch: f64,
}

impl ViewPose {
    pub fn new(yaw: f64, pitch: f64) -> Result<Self> {
        if !(yaw.abs() <= std::f64::consts::PI) || !(pitch.abs() <= std::f64::consts::FRAC_PI_2) {
            return invalid(format!("pose out of range: yaw {yaw}, pitch {pitch}"));
        }
        Ok(Self { yaw, pitch })
    }

    pub fn from_degrees(yaw: f64, pitch: f64) -> Result<Self> {
        Self::new(yaw.to_radians(), pitch.to_radians())
    }

    pub fn frontal() -> Self {
        Self::default()
    }

    fn yaw_matrix(angle: f64) -> Matrix3<f64> {
        let (s, c) = angle.sin_cos();
        Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
    }

    fn pitch_matrix(angle: f64) -> Matrix3<f64> {
        let (s, c) = angle.sin_cos();
        Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
    }

    /// `R_pitch · R_yaw`: yaw is applied first.
    pub fn rotation(&self) -> Matrix3<f64> {
        Self::pitch_matrix(self.pitch) * Self::yaw_matrix(self.yaw)
    }

    /// Undoes [`rotation`](Self::rotation): `R_yaw(-yaw) · R_pitch(-pitch)`.
    pub fn inverse_rotation(&self) -> Matrix3<f64> {
        Self::yaw_matrix(-self.yaw) * Self::pitch_matrix(-self.pitch)
    }
}

pub fn rotate_scene(s: &ShapeImage, pose: &ViewPose) -> ShapeImage {
    rotate_with(s, &pose.rotation())
}

pub(crate) fn rotate_with(s: &ShapeImage, r: &Matrix3<f64>) -> ShapeImage {
    let mut out = s.clone();
    for v in 0..s.vertex_count() {
        out.set_vertex(v, r * s.vertex(v));
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraIntrinsics {
    /// Distance from the origin along +Z, world units.
    pub distance: f64,
    /// Image side N in pixels.
    pub image_side: usize,
}

impl CameraIntrinsics {
    pub fn new(distance: f64, image_side: usize) -> Result<Self> {
        if !(distance > 1.0) {
            return invalid(format!("camera distance must exceed 1, got {distance}"));
        }
        if image_side == 0 {
            return invalid("image side must be positive");
        }
        Ok(Self { distance, image_side })
    }

    pub fn for_side(image_side: usize) -> Self {
        Self { distance: DEFAULT_CAMERA_DISTANCE, image_side }
    }

    /// Half field of view, `asin(1 / distance)`.
    pub fn half_angle(&self) -> f64 {
        (1.0 / self.distance).asin()
    }

    /// Focal length in pixels.
    pub fn focal(&self) -> f64 {
        0.5 * self.image_side as f64 / self.half_angle().tan()
    }

    /// Pixel coordinates and camera-space depth of a world point.
    pub fn project(&self, p: &Vector3<f64>) -> Result<(Vector2<f64>, f64)> {
        let depth = self.distance - p.z;
        if !(depth > 0.0) {
            return Err(Error::DegenerateInput(format!("point {p:?} is not in front of the camera")));
        }
        let f = self.focal();
        let c = 0.5 * self.image_side as f64;
        Ok((Vector2::new(c + f * p.x / depth, c - f * p.y / depth), depth))
    }

    /// Jacobian of the pixel coordinates with respect to the world point.
    pub fn project_jacobian(&self, p: &Vector3<f64>) -> Matrix2x3<f64> {
        let depth = self.distance - p.z;
        let f = self.focal();
        Matrix2x3::new(
            f / depth,
            0.0,
            f * p.x / (depth * depth),
            0.0,
            -f / depth,
            -f * p.y / (depth * depth),
        )
    }
}
