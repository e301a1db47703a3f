//! Deterministic voxel raycaster.
//!
//! Each body part is a rigid sub-lattice. A pixel ray is carried into every
//! part's rest frame and marched cell by cell (Amanatides-Woo 3D DDA); the
//! nearest hit over all parts wins. Shading is Lambertian against a single
//! directional light anchored to the character frame, so rotating the
//! character and counter-rotating the camera render identical images.

use nalgebra::{Rotation3, Vector3};

use crate::camera::{pixel_ray_unchecked, CameraPose, Ray};
use crate::error::{Error, Result};
use crate::scene::character::{part_transforms, CharacterSpec, Part, PartTransform, PoseParams, EXTENT};
use crate::tensor::Frame;

pub const AMBIENT: f64 = 0.4;
pub const DIFFUSE: f64 = 0.6;

/// Light direction in the character frame, `(1, 1, 1)` normalized.
pub fn light_direction() -> Vector3<f64> {
    Vector3::new(1.0, 1.0, 1.0).normalize()
}

pub fn shade_factor(normal: &Vector3<f64>) -> f64 {
    AMBIENT + DIFFUSE * normal.dot(&light_direction()).max(0.0)
}

#[derive(Clone, Debug, PartialEq)]
pub enum Background {
    Flat([f64; 3]),
    Image(Frame),
}

#[derive(Clone, Copy, Debug)]
struct Hit {
    t: f64,
    normal: Vector3<f64>,
    color: [f64; 3],
}

struct PartGrid {
    transform: PartTransform,
    lo: [usize; 3],
    hi: [usize; 3],
}

/// Posed character prepared for ray queries.
pub struct Scene<'a> {
    spec: &'a CharacterSpec,
    labels: Vec<u8>,
    parts: Vec<(Part, PartGrid)>,
    /// World-from-character rotation about the up axis.
    yaw: Rotation3<f64>,
}

const EMPTY: u8 = u8::MAX;

impl<'a> Scene<'a> {
    pub fn new(spec: &'a CharacterSpec, pose: &PoseParams, yaw: f64) -> Result<Self> {
        let transforms = part_transforms(spec, pose)?;
        let n = spec.lattice_size();
        let mut labels = vec![EMPTY; n * n * n];
        let mut bounds = [([usize::MAX; 3], [0usize; 3]); 6];
        for x in 0..n {
            for y in 0..n {
                for z in 0..n {
                    if let Some(v) = spec.cell(x, y, z) {
                        let p = v.part.index();
                        labels[spec.index(x, y, z)] = p as u8;
                        let (lo, hi) = &mut bounds[p];
                        for (k, c) in [x, y, z].into_iter().enumerate() {
                            lo[k] = lo[k].min(c);
                            hi[k] = hi[k].max(c);
                        }
                    }
                }
            }
        }
        let parts = Part::ALL
            .iter()
            .filter(|p| bounds[p.index()].0[0] != usize::MAX)
            .map(|&p| {
                let (lo, hi) = bounds[p.index()];
                (
                    p,
                    PartGrid {
                        transform: transforms[p.index()],
                        lo,
                        hi,
                    },
                )
            })
            .collect();
        Ok(Scene {
            spec,
            labels,
            parts,
            yaw: Rotation3::from_axis_angle(&Vector3::y_axis(), yaw),
        })
    }

    fn trace(&self, world_ray: &Ray) -> Option<Hit> {
        let inv = self.yaw.inverse();
        let ray = Ray {
            origin: inv * world_ray.origin,
            direction: inv * world_ray.direction,
        };
        let mut best: Option<Hit> = None;
        for (part, grid) in &self.parts {
            let local = Ray {
                origin: grid.transform.inverse_point(&ray.origin),
                direction: grid.transform.inverse_vector(&ray.direction),
            };
            let limit = best.map_or(f64::INFINITY, |h| h.t);
            if let Some(mut hit) = self.march(&local, *part, grid, limit) {
                hit.normal = grid.transform.rotation * hit.normal;
                best = Some(hit);
            }
        }
        best
    }

    /// DDA through one part's cell bounding box; only hits closer than `limit`.
    fn march(&self, ray: &Ray, part: Part, grid: &PartGrid, limit: f64) -> Option<Hit> {
        let spec = self.spec;
        let s = spec.voxel_size();
        let n = spec.lattice_size();
        let o = ray.origin;
        let d = ray.direction;

        // Slab test against the part's box.
        let mut t0 = 0.0f64;
        let mut t1 = f64::INFINITY;
        let mut entry_axis = None;
        for k in 0..3 {
            let lo = -EXTENT + grid.lo[k] as f64 * s;
            let hi = -EXTENT + (grid.hi[k] + 1) as f64 * s;
            if d[k] == 0.0 {
                if o[k] < lo || o[k] > hi {
                    return None;
                }
                continue;
            }
            let (mut a, mut b) = ((lo - o[k]) / d[k], (hi - o[k]) / d[k]);
            if a > b {
                std::mem::swap(&mut a, &mut b);
            }
            if a > t0 {
                t0 = a;
                entry_axis = Some(k);
            }
            t1 = t1.min(b);
        }
        if t0 > t1 || t0 >= limit {
            return None;
        }

        let p = o + t0 * d;
        let mut cell = [0usize; 3];
        let mut step = [0isize; 3];
        let mut t_max = [f64::INFINITY; 3];
        let mut t_delta = [f64::INFINITY; 3];
        for k in 0..3 {
            let f = ((p[k] + EXTENT) / s).floor();
            let c = (f.max(grid.lo[k] as f64) as usize).min(grid.hi[k]);
            // On the entry face, floor may land one cell outside in the
            // negative direction of travel; the clamp above handles it.
            cell[k] = c;
            if d[k] > 0.0 {
                step[k] = 1;
                t_max[k] = (-EXTENT + (c + 1) as f64 * s - o[k]) / d[k];
                t_delta[k] = s / d[k];
            } else if d[k] < 0.0 {
                step[k] = -1;
                t_max[k] = (-EXTENT + c as f64 * s - o[k]) / d[k];
                t_delta[k] = -s / d[k];
            }
        }

        let mut t_enter = t0;
        let mut axis = entry_axis;
        let target = part.index() as u8;
        loop {
            if t_enter >= limit {
                return None;
            }
            let idx = (cell[0] * n + cell[1]) * n + cell[2];
            if self.labels[idx] == target {
                let mut normal = Vector3::zeros();
                match axis {
                    Some(k) => normal[k] = -(step[k] as f64),
                    // Origin inside the box: face the ray back toward its origin.
                    None => {
                        let k = (0..3).max_by(|&a, &b| d[a].abs().total_cmp(&d[b].abs())).unwrap();
                        normal[k] = -d[k].signum();
                    }
                }
                let color = spec.cell(cell[0], cell[1], cell[2]).map(|v| v.color)?;
                return Some(Hit {
                    t: t_enter,
                    normal,
                    color,
                });
            }
            let k = (0..3).min_by(|&a, &b| t_max[a].total_cmp(&t_max[b])).unwrap();
            if !t_max[k].is_finite() || t_max[k] > t1 {
                return None;
            }
            t_enter = t_max[k];
            axis = Some(k);
            let next = cell[k] as isize + step[k];
            if next < grid.lo[k] as isize || next > grid.hi[k] as isize {
                return None;
            }
            cell[k] = next as usize;
            t_max[k] += t_delta[k];
        }
    }
}

pub fn render(
    spec: &CharacterSpec,
    pose: &PoseParams,
    camera: &CameraPose,
    background: &Background,
) -> Result<Frame> {
    render_rotated(spec, pose, 0.0, camera, background)
}

/// Renders the character turned by `yaw` radians about the world up axis.
pub fn render_rotated(
    spec: &CharacterSpec,
    pose: &PoseParams,
    yaw: f64,
    camera: &CameraPose,
    background: &Background,
) -> Result<Frame> {
    camera.validate()?;
    let (h, w) = camera.resolution();
    let mut frame = match background {
        Background::Flat(rgb) => Frame::filled(h, w, *rgb),
        Background::Image(img) => {
            if img.height() != h || img.width() != w {
                return Err(Error::shape(&[h, w], &[img.height(), img.width()]));
            }
            img.clone()
        }
    };
    frame.alpha_mut().iter_mut().for_each(|a| *a = 0.0);
    let scene = Scene::new(spec, pose, yaw)?;
    for i in 0..h {
        for j in 0..w {
            let ray = pixel_ray_unchecked(camera, i as f64 + 0.5, j as f64 + 0.5);
            if let Some(hit) = scene.trace(&ray) {
                let shade = shade_factor(&hit.normal);
                frame.set_rgb(i, j, hit.color.map(|c| c * shade));
                frame.alpha_mut()[i * w + j] = 1.0;
            }
        }
    }
    Ok(frame)
}

pub fn composite_background(fg: &Frame, bg: &Frame) -> Result<Frame> {
    fg.same_shape(bg)?;
    let mut out = bg.clone();
    let w = fg.width();
    for i in 0..fg.height() {
        for j in 0..w {
            let a = fg.alpha()[i * w + j];
            let (f, b) = (fg.rgb(i, j), bg.rgb(i, j));
            out.set_rgb(i, j, [0, 1, 2].map(|k| a * f[k] + (1.0 - a) * b[k]));
        }
    }
    out.alpha_mut().iter_mut().for_each(|a| *a = 1.0);
    Ok(out)
}
