//! Pinhole cameras, orbital and random viewpoints, per-pixel rays and
//! Plücker ray embeddings.
//!
//! Camera frame convention: `+x` right, `+y` up, the camera looks down `-z`.
//! Image rows grow downward; pixel `(i, j)` has its center at
//! `(u, v) = (j + 0.5, i + 0.5)`.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, TAU};

use nalgebra::{Matrix3, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const ORTHO_TOL: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct CameraPose {
    position: Vector3<f64>,
    /// World-from-camera rotation; columns are the camera's right, up and
    /// back axes expressed in world coordinates.
    rotation: Matrix3<f64>,
    focal: f64,
    principal_point: [f64; 2],
    resolution: (usize, usize),
}

impl CameraPose {
    pub fn new(
        position: Vector3<f64>,
        rotation: Matrix3<f64>,
        focal: f64,
        principal_point: [f64; 2],
        resolution: (usize, usize),
    ) -> Result<Self> {
        let pose = CameraPose {
            position,
            rotation,
            focal,
            principal_point,
            resolution,
        };
        pose.validate()?;
        Ok(pose)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.focal > 0.0) || !self.focal.is_finite() {
            return Err(Error::InvalidArgument(format!("focal {} must be > 0", self.focal)));
        }
        if self.resolution.0 == 0 || self.resolution.1 == 0 {
            return Err(Error::InvalidArgument("resolution must be at least 1x1".into()));
        }
        let gram = self.rotation.transpose() * self.rotation;
        let ortho_err = (gram - Matrix3::identity()).abs().max();
        if !(ortho_err <= ORTHO_TOL) || (self.rotation.determinant() - 1.0).abs() > ORTHO_TOL {
            return Err(Error::InvalidArgument(
                "rotation must be orthonormal with determinant +1".into(),
            ));
        }
        if !self.position.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidArgument("camera position is not finite".into()));
        }
        Ok(())
    }

    pub fn position(&self) -> Vector3<f64> {
        self.position
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        self.rotation
    }

    pub fn focal(&self) -> f64 {
        self.focal
    }

    pub fn principal_point(&self) -> [f64; 2] {
        self.principal_point
    }

    /// `(H, W)`.
    pub fn resolution(&self) -> (usize, usize) {
        self.resolution
    }

    pub fn right(&self) -> Vector3<f64> {
        self.rotation.column(0).into()
    }

    pub fn up(&self) -> Vector3<f64> {
        self.rotation.column(1).into()
    }

    /// Viewing direction (the camera's `-z` axis in world coordinates).
    pub fn forward(&self) -> Vector3<f64> {
        -Vector3::from(self.rotation.column(2))
    }

    /// Same extrinsics re-targeted at another resolution, with focal length
    /// and principal point scaled so the field of view is unchanged.
    pub fn rescaled(&self, height: usize, width: usize) -> Result<CameraPose> {
        let sx = width as f64 / self.resolution.1 as f64;
        let sy = height as f64 / self.resolution.0 as f64;
        if (sx - sy).abs() > 1e-12 {
            return Err(Error::InvalidArgument("rescaling must preserve aspect ratio".into()));
        }
        CameraPose::new(
            self.position,
            self.rotation,
            self.focal * sx,
            [self.principal_point[0] * sx, self.principal_point[1] * sy],
            (height, width),
        )
    }

    /// Projects a world point to continuous pixel coordinates `(u, v)`;
    /// `None` for points at or behind the camera plane.
    pub fn project(&self, point: &Vector3<f64>) -> Option<(f64, f64)> {
        let c = self.rotation.transpose() * (point - self.position);
        if c.z >= 0.0 {
            return None;
        }
        let depth = -c.z;
        Some((
            self.principal_point[0] + self.focal * c.x / depth,
            self.principal_point[1] - self.focal * c.y / depth,
        ))
    }

    pub fn to_record(&self) -> PoseRecord {
        let r = &self.rotation;
        PoseRecord {
            position: [self.position.x, self.position.y, self.position.z],
            rotation: [
                [r[(0, 0)], r[(0, 1)], r[(0, 2)]],
                [r[(1, 0)], r[(1, 1)], r[(1, 2)]],
                [r[(2, 0)], r[(2, 1)], r[(2, 2)]],
            ],
            focal: self.focal,
            principal_point: self.principal_point,
            resolution: [self.resolution.0, self.resolution.1],
        }
    }

    pub fn from_record(rec: &PoseRecord) -> Result<Self> {
        let r = &rec.rotation;
        CameraPose::new(
            Vector3::from(rec.position),
            Matrix3::new(
                r[0][0], r[0][1], r[0][2], r[1][0], r[1][1], r[1][2], r[2][0], r[2][1], r[2][2],
            ),
            rec.focal,
            rec.principal_point,
            (rec.resolution[0], rec.resolution[1]),
        )
    }
}

/// Serializable form of a [`CameraPose`]; `rotation` is row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseRecord {
    pub position: [f64; 3],
    pub rotation: [[f64; 3]; 3],
    pub focal: f64,
    pub principal_point: [f64; 2],
    pub resolution: [usize; 2],
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ray {
    pub origin: Vector3<f64>,
    pub direction: Vector3<f64>,
}

impl Ray {
    pub fn at(&self, s: f64) -> Vector3<f64> {
        self.origin + s * self.direction
    }

    pub fn moment(&self) -> Vector3<f64> {
        self.origin.cross(&self.direction)
    }
}

/// Distance and elevation bounds for random viewpoints.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewpointRange {
    pub distance_min: f64,
    pub distance_max: f64,
    pub elevation_min: f64,
    pub elevation_max: f64,
}

impl Default for ViewpointRange {
    fn default() -> Self {
        ViewpointRange {
            distance_min: 4.0,
            distance_max: 7.0,
            elevation_min: -FRAC_PI_4,
            elevation_max: FRAC_PI_4,
        }
    }
}

impl ViewpointRange {
    pub fn validate(&self) -> Result<()> {
        let ok = self.distance_min > 0.0
            && self.distance_min <= self.distance_max
            && self.elevation_min <= self.elevation_max
            && self.elevation_min > -FRAC_PI_2
            && self.elevation_max < FRAC_PI_2;
        if !ok {
            return Err(Error::InvalidArgument(format!("invalid viewpoint range {self:?}")));
        }
        Ok(())
    }
}

/// Default pinhole intrinsics: focal length equal to the image width
/// (about 53 degrees of horizontal field of view).
pub fn default_focal(resolution: (usize, usize)) -> f64 {
    resolution.1 as f64
}

pub fn look_at(
    position: Vector3<f64>,
    target: Vector3<f64>,
    up: Vector3<f64>,
    focal: f64,
    resolution: (usize, usize),
) -> Result<CameraPose> {
    let view = target - position;
    let dist = view.norm();
    if !(dist > 1e-12) {
        return Err(Error::DegenerateCamera("position coincides with target".into()));
    }
    let forward = view / dist;
    let side = forward.cross(&up);
    // Relative test so that `up` need not be unit length.
    if side.norm() <= 1e-9 * up.norm().max(1e-300) {
        return Err(Error::DegenerateCamera("up vector parallel to view direction".into()));
    }
    let right = side.normalize();
    let true_up = right.cross(&forward);
    let rotation = Matrix3::from_columns(&[right, true_up, -forward]);
    CameraPose::new(
        position,
        rotation,
        focal,
        [resolution.1 as f64 / 2.0, resolution.0 as f64 / 2.0],
        resolution,
    )
}

/// World position of a camera at the given spherical coordinates around the
/// origin. Azimuth 0 sits on the `+z` axis; azimuth pi/2 on `+x`.
pub fn orbit_position(distance: f64, elevation: f64, azimuth: f64) -> Vector3<f64> {
    Vector3::new(
        distance * elevation.cos() * azimuth.sin(),
        distance * elevation.sin(),
        distance * elevation.cos() * azimuth.cos(),
    )
}

/// A single origin-facing camera at the given spherical coordinates.
pub fn orbit_pose(
    distance: f64,
    elevation: f64,
    azimuth: f64,
    focal: f64,
    resolution: (usize, usize),
) -> Result<CameraPose> {
    look_at(
        orbit_position(distance, elevation, azimuth),
        Vector3::zeros(),
        Vector3::y(),
        focal,
        resolution,
    )
}

pub fn orbit_trajectory(
    n_frames: usize,
    distance: f64,
    elevation: f64,
    start_azimuth: f64,
    focal: f64,
    resolution: (usize, usize),
) -> Result<Vec<CameraPose>> {
    if n_frames < 2 {
        return Err(Error::InvalidArgument("an orbit needs at least 2 frames".into()));
    }
    if !(distance > 0.0) {
        return Err(Error::InvalidArgument("orbit distance must be positive".into()));
    }
    (0..n_frames)
        .map(|i| {
            let azimuth = start_azimuth + TAU * i as f64 / n_frames as f64;
            orbit_pose(distance, elevation, azimuth, focal, resolution)
        })
        .collect()
}

/// Spherical coordinates of a sampled viewpoint.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Viewpoint {
    pub distance: f64,
    pub elevation: f64,
    pub azimuth: f64,
}

impl Viewpoint {
    pub fn pose(&self, focal: f64, resolution: (usize, usize)) -> Result<CameraPose> {
        orbit_pose(self.distance, self.elevation, self.azimuth, focal, resolution)
    }
}

pub fn sample_viewpoint<R: Rng + ?Sized>(rng: &mut R, range: &ViewpointRange) -> Result<Viewpoint> {
    range.validate()?;
    let distance = uniform(rng, range.distance_min, range.distance_max);
    let elevation = uniform(rng, range.elevation_min, range.elevation_max);
    let azimuth = rng.gen_range(0.0..TAU);
    Ok(Viewpoint {
        distance,
        elevation,
        azimuth,
    })
}

pub fn sample_random_viewpoint<R: Rng + ?Sized>(
    rng: &mut R,
    range: &ViewpointRange,
    focal: f64,
    resolution: (usize, usize),
) -> Result<CameraPose> {
    sample_viewpoint(rng, range)?.pose(focal, resolution)
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    if lo == hi {
        lo
    } else {
        lo + (hi - lo) * rng.gen::<f64>()
    }
}

pub fn pixel_ray(pose: &CameraPose, pixel: (usize, usize)) -> Result<Ray> {
    let (h, w) = pose.resolution;
    let (i, j) = pixel;
    if i >= h || j >= w {
        return Err(Error::OutOfBounds {
            i,
            j,
            height: h,
            width: w,
        });
    }
    Ok(pixel_ray_unchecked(pose, i as f64 + 0.5, j as f64 + 0.5))
}

/// Ray through continuous pixel coordinates (`v` down the rows, `u` across).
pub(crate) fn pixel_ray_unchecked(pose: &CameraPose, v: f64, u: f64) -> Ray {
    let [cx, cy] = pose.principal_point;
    let cam = Vector3::new((u - cx) / pose.focal, -(v - cy) / pose.focal, -1.0);
    Ray {
        origin: pose.position,
        direction: (pose.rotation * cam).normalize(),
    }
}

/// Per-pixel Plücker coordinates, `H x W x 6` with channels
/// `[d_x, d_y, d_z, m_x, m_y, m_z]` and `m = origin x direction`.
#[derive(Clone, Debug, PartialEq)]
pub struct PluckerGrid(Tensor);

impl PluckerGrid {
    pub fn from_tensor(t: Tensor) -> Result<Self> {
        let s = t.shape();
        if s.len() != 3 || s[2] != 6 {
            return Err(Error::shape(&[0, 0, 6], s));
        }
        Ok(PluckerGrid(t))
    }

    pub fn height(&self) -> usize {
        self.0.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.0.shape()[1]
    }

    pub fn at(&self, i: usize, j: usize) -> &[f64] {
        let k = (i * self.width() + j) * 6;
        &self.0.data()[k..k + 6]
    }

    pub fn data(&self) -> &[f64] {
        self.0.data()
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }
}

pub fn plucker_embedding(pose: &CameraPose) -> Result<PluckerGrid> {
    pose.validate()?;
    let (h, w) = pose.resolution;
    let mut data = Vec::with_capacity(h * w * 6);
    for i in 0..h {
        for j in 0..w {
            let ray = pixel_ray_unchecked(pose, i as f64 + 0.5, j as f64 + 0.5);
            let m = ray.moment();
            data.extend_from_slice(&[
                ray.direction.x,
                ray.direction.y,
                ray.direction.z,
                m.x,
                m.y,
                m.z,
            ]);
        }
    }
    PluckerGrid::from_tensor(Tensor::from_vec(&[h, w, 6], data)?)
}
