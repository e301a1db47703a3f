//! Procedural articulated voxel characters.
//!
//! A character lives on an `N x N x N` lattice spanning `[-EXTENT, EXTENT]^3`
//! in its own frame: `+y` up, facing `+z`, its left side on `+x`. Every
//! occupied cell belongs to one rigid body part; arms hinge at the shoulders
//! and legs at the hips, both about the `x` axis.

use std::f64::consts::FRAC_PI_2;

use nalgebra::{Rotation3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Half side length of the character lattice in world units.
pub const EXTENT: f64 = 0.85;
pub const DEFAULT_LATTICE: usize = 24;
pub const MAX_RETRIES: u32 = 64;

pub const OCCUPANCY_MIN: f64 = 0.02;
pub const OCCUPANCY_MAX: f64 = 0.35;
pub const MIN_PALETTE_SPREAD: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Part {
    Torso,
    Head,
    ArmL,
    ArmR,
    LegL,
    LegR,
}

impl Part {
    pub const ALL: [Part; 6] = [
        Part::Torso,
        Part::Head,
        Part::ArmL,
        Part::ArmR,
        Part::LegL,
        Part::LegR,
    ];

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StyleFamily {
    #[default]
    Realistic,
    Cartoon,
    Other,
}

/// Shape and palette family. `loose` widens every generator range so that
/// many draws fail the quality filter; it exists to exercise rejection.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Style {
    pub family: StyleFamily,
    pub loose: bool,
    pub lattice: Option<usize>,
}

impl Style {
    pub fn lattice(&self) -> usize {
        self.lattice.unwrap_or(DEFAULT_LATTICE)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Voxel {
    pub color: [f64; 3],
    pub part: Part,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrontMarker {
    pub color: [f64; 3],
    pub cells: Vec<[usize; 3]>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CharacterSpec {
    pub seed: u64,
    pub style: Style,
    n: usize,
    cells: Vec<Option<Voxel>>,
    pub palette: Vec<[f64; 3]>,
    pub front_marker: FrontMarker,
    /// Joint pivots in the character frame: shoulder_l, shoulder_r, hip_l, hip_r.
    pub pivots: [Vector3<f64>; 4],
}

/// Six joint angles in radians: shoulder_l, shoulder_r, hip_l, hip_r and two
/// spare slots that are range-checked but carry no geometry (the limbs have
/// no elbows or knees). All zeros is the canonical A-pose.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PoseParams {
    pub joint_angles: [f64; 6],
}

impl PoseParams {
    pub fn canonical() -> Self {
        PoseParams::default()
    }

    pub fn validate(&self) -> Result<()> {
        for (joint, &angle) in self.joint_angles.iter().enumerate() {
            if !(angle.abs() <= FRAC_PI_2) {
                return Err(Error::JointLimit { joint, angle });
            }
        }
        Ok(())
    }

    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let mut joint_angles = [0.0; 6];
        for a in &mut joint_angles {
            *a = rng.gen_range(-FRAC_PI_2..=FRAC_PI_2);
        }
        PoseParams { joint_angles }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    Occupancy,
    Asymmetry,
    PaletteContrast,
}

impl CharacterSpec {
    pub fn from_parts(
        seed: u64,
        style: Style,
        n: usize,
        cells: Vec<Option<Voxel>>,
        palette: Vec<[f64; 3]>,
        front_marker: FrontMarker,
        pivots: [Vector3<f64>; 4],
    ) -> Result<Self> {
        if n == 0 || cells.len() != n * n * n {
            return Err(Error::shape(&[n, n, n], &[cells.len()]));
        }
        Ok(CharacterSpec {
            seed,
            style,
            n,
            cells,
            palette,
            front_marker,
            pivots,
        })
    }

    pub fn lattice_size(&self) -> usize {
        self.n
    }

    pub fn voxel_size(&self) -> f64 {
        2.0 * EXTENT / self.n as f64
    }

    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        (x * self.n + y) * self.n + z
    }

    pub fn cell(&self, x: usize, y: usize, z: usize) -> Option<&Voxel> {
        self.cells[self.index(x, y, z)].as_ref()
    }

    pub fn cells(&self) -> &[Option<Voxel>] {
        &self.cells
    }

    pub fn cell_center(&self, x: usize, y: usize, z: usize) -> Vector3<f64> {
        let s = self.voxel_size();
        Vector3::new(
            -EXTENT + (x as f64 + 0.5) * s,
            -EXTENT + (y as f64 + 0.5) * s,
            -EXTENT + (z as f64 + 0.5) * s,
        )
    }

    pub fn occupied_count(&self) -> usize {
        self.cells.iter().filter(|c| c.is_some()).count()
    }

    pub fn occupancy(&self) -> f64 {
        self.occupied_count() as f64 / self.cells.len() as f64
    }

    /// Copy with every voxel removed.
    pub fn cleared(&self) -> Self {
        let mut c = self.clone();
        c.cells.iter_mut().for_each(|v| *v = None);
        c
    }

    /// Copy with every cell filled by a torso voxel of the first palette color.
    pub fn solid(&self) -> Self {
        let mut c = self.clone();
        let color = self.palette.first().copied().unwrap_or([0.5; 3]);
        c.cells.iter_mut().for_each(|v| {
            *v = Some(Voxel {
                color,
                part: Part::Torso,
            })
        });
        c
    }

    /// Mean color of the first occupied cell met along each `(x, y)` column
    /// from the front (`+z`) and from the back (`-z`).
    pub fn face_means(&self) -> Option<([f64; 3], [f64; 3])> {
        let (mut front, mut back, mut count) = ([0.0; 3], [0.0; 3], 0usize);
        for x in 0..self.n {
            for y in 0..self.n {
                let f = (0..self.n).rev().find_map(|z| self.cell(x, y, z));
                let b = (0..self.n).find_map(|z| self.cell(x, y, z));
                if let (Some(f), Some(b)) = (f, b) {
                    for k in 0..3 {
                        front[k] += f.color[k];
                        back[k] += b.color[k];
                    }
                    count += 1;
                }
            }
        }
        if count == 0 {
            return None;
        }
        let c = count as f64;
        Some((front.map(|v| v / c), back.map(|v| v / c)))
    }
}

pub fn quality_filter(spec: &CharacterSpec) -> Result<(), RejectReason> {
    let occ = spec.occupancy();
    if !(OCCUPANCY_MIN..=OCCUPANCY_MAX).contains(&occ) {
        return Err(RejectReason::Occupancy);
    }
    match spec.face_means() {
        Some((f, b)) if f.iter().zip(&b).any(|(x, y)| (x - y).abs() > 1e-3) => {}
        _ => return Err(RejectReason::Asymmetry),
    }
    let spread = (0..3)
        .map(|k| {
            let (lo, hi) = spec
                .palette
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), c| {
                    (lo.min(c[k]), hi.max(c[k]))
                });
            hi - lo
        })
        .fold(0.0, f64::max);
    if !(spread >= MIN_PALETTE_SPREAD) {
        return Err(RejectReason::PaletteContrast);
    }
    Ok(())
}

/// Seed of retry `attempt` for a character seed (splitmix64 finalizer).
pub fn derived_seed(seed: u64, attempt: u32) -> u64 {
    if attempt == 0 {
        return seed;
    }
    let mut z = seed ^ (attempt as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn make_character(seed: u64, style: Style) -> Result<CharacterSpec> {
    make_character_with_stats(seed, style).map(|(spec, _)| spec)
}

/// Like [`make_character`], also returning the reasons of every rejected attempt.
pub fn make_character_with_stats(
    seed: u64,
    style: Style,
) -> Result<(CharacterSpec, Vec<RejectReason>)> {
    let mut rejected = Vec::new();
    for attempt in 0..=MAX_RETRIES {
        let spec = generate(seed, derived_seed(seed, attempt), style);
        match quality_filter(&spec) {
            Ok(()) => return Ok((spec, rejected)),
            Err(reason) => rejected.push(reason),
        }
    }
    Err(Error::GenerationExhausted {
        seed,
        retries: MAX_RETRIES,
    })
}

fn hsv(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h6 = (h.rem_euclid(1.0)) * 6.0;
    let c = v * s;
    let x = c * (1.0 - ((h6 % 2.0) - 1.0).abs());
    let (r, g, b) = match h6 as usize {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r + m, g + m, b + m]
}

fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    (0..3).map(|k| (a[k] - b[k]).powi(2)).sum()
}

struct Body {
    torso: ([f64; 3], [f64; 3]),
    head: ([f64; 3], [f64; 3]),
    round_head: bool,
    legs: [([f64; 3], [f64; 3]); 2],
    arms: [(Vector3<f64>, Vector3<f64>); 2],
    arm_radius: f64,
    hair_depth: f64,
    foot_height: f64,
}

fn generate(seed: u64, draw_seed: u64, style: Style) -> CharacterSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(draw_seed);
    let n = style.lattice();
    let loose = style.loose;
    let mut u = |lo: f64, hi: f64| lo + (hi - lo) * rng.gen::<f64>();

    let height = if loose { u(0.2, 1.62) } else { u(1.4, 1.6) };
    let (leg_frac, torso_frac) = match style.family {
        StyleFamily::Cartoon => (u(0.30, 0.36), u(0.28, 0.32)),
        StyleFamily::Realistic => (u(0.42, 0.47), u(0.32, 0.36)),
        StyleFamily::Other => (u(0.32, 0.46), u(0.28, 0.36)),
    };
    let width_scale = if loose { u(0.2, 4.0) } else { 1.0 };
    let torso_hw = (u(0.17, 0.24) * width_scale).min(0.8);
    let torso_hd = (u(0.11, 0.16) * width_scale).min(0.8);
    let leg_hw = (u(0.07, 0.095) * width_scale).min(torso_hw);
    let arm_r = (u(0.055, 0.075) * width_scale).min(0.3);
    let arm_len = u(0.28, 0.38);

    let bottom = -height / 2.0;
    let hip_y = bottom + leg_frac * height;
    let neck_y = hip_y + torso_frac * height;
    let top = height / 2.0;
    let head_h = top - neck_y;
    let head_hw = (head_h / 2.0).min(0.2 * width_scale.max(1.0)).min(0.8);
    let head_hd = head_hw.min(0.8);

    let shoulder_y = neck_y - arm_r;
    let shoulders = [
        Vector3::new(torso_hw + arm_r, shoulder_y, 0.0),
        Vector3::new(-(torso_hw + arm_r), shoulder_y, 0.0),
    ];
    let diag = std::f64::consts::FRAC_1_SQRT_2;
    let arm_ends = [
        shoulders[0] + arm_len * Vector3::new(diag, -diag, 0.0),
        shoulders[1] + arm_len * Vector3::new(-diag, -diag, 0.0),
    ];
    let leg_x = torso_hw - leg_hw;
    let hips = [
        Vector3::new(leg_x, hip_y, 0.0),
        Vector3::new(-leg_x, hip_y, 0.0),
    ];
    let body = Body {
        torso: ([-torso_hw, hip_y, -torso_hd], [torso_hw, neck_y, torso_hd]),
        head: ([-head_hw, neck_y, -head_hd], [head_hw, top, head_hd]),
        round_head: style.family == StyleFamily::Cartoon,
        legs: [
            ([leg_x - leg_hw, bottom, -leg_hw], [leg_x + leg_hw, hip_y, leg_hw]),
            ([-leg_x - leg_hw, bottom, -leg_hw], [-leg_x + leg_hw, hip_y, leg_hw]),
        ],
        arms: [(shoulders[0], arm_ends[0]), (shoulders[1], arm_ends[1])],
        arm_radius: arm_r,
        hair_depth: u(0.3, 0.6),
        foot_height: u(0.08, 0.14),
    };

    // Palette: skin, top, bottom, accent.
    let (sat, val) = match style.family {
        StyleFamily::Realistic => ((0.2, 0.55), (0.35, 0.85)),
        StyleFamily::Cartoon => ((0.6, 1.0), (0.7, 1.0)),
        StyleFamily::Other => ((0.0, 1.0), (0.2, 1.0)),
    };
    let grey = loose && u(0.0, 1.0) < 0.3;
    let mut palette = Vec::with_capacity(4);
    for _ in 0..4 {
        let c = if grey {
            let g = u(0.45, 0.5);
            [g, g, g]
        } else {
            hsv(u(0.0, 1.0), u(sat.0, sat.1), u(val.0, val.1))
        };
        palette.push(c);
    }
    let skin = if style.family == StyleFamily::Realistic && !grey {
        hsv(u(0.03, 0.1), u(0.25, 0.5), u(0.5, 0.95))
    } else {
        palette[0]
    };
    palette[0] = skin;

    let candidates = [
        [1.0, 0.0, 0.0],
        [0.0, 1.0, 0.0],
        [0.0, 0.0, 1.0],
        [1.0, 1.0, 0.0],
        [1.0, 0.0, 1.0],
        [0.0, 1.0, 1.0],
    ];
    let marker_color = candidates
        .iter()
        .copied()
        .max_by(|a, b| {
            let da = palette.iter().map(|p| dist2(a, p)).fold(f64::INFINITY, f64::min);
            let db = palette.iter().map(|p| dist2(b, p)).fold(f64::INFINITY, f64::min);
            da.total_cmp(&db)
        })
        .unwrap();
    let with_marker = !(loose && u(0.0, 1.0) < 0.3);

    let inside = |p: &Vector3<f64>, (lo, hi): &([f64; 3], [f64; 3])| {
        (0..3).all(|k| p[k] >= lo[k] && p[k] <= hi[k])
    };
    let seg_dist = |p: &Vector3<f64>, a: &Vector3<f64>, b: &Vector3<f64>| {
        let ab = b - a;
        let s = ((p - a).dot(&ab) / ab.norm_squared()).clamp(0.0, 1.0);
        (p - (a + s * ab)).norm()
    };

    let s = 2.0 * EXTENT / n as f64;
    let center = |k: usize| -EXTENT + (k as f64 + 0.5) * s;
    let mut cells = vec![None; n * n * n];
    for x in 0..n {
        for y in 0..n {
            for z in 0..n {
                let p = Vector3::new(center(x), center(y), center(z));
                let part = if inside(&p, &body.head) && {
                    if body.round_head {
                        let c = Vector3::new(0.0, (body.head.0[1] + body.head.1[1]) / 2.0, 0.0);
                        let r = (body.head.1[1] - body.head.0[1]) / 2.0;
                        (p - c).norm() <= r.max(s)
                    } else {
                        true
                    }
                } {
                    Some(Part::Head)
                } else if inside(&p, &body.torso) {
                    Some(Part::Torso)
                } else if seg_dist(&p, &body.arms[0].0, &body.arms[0].1) <= body.arm_radius {
                    Some(Part::ArmL)
                } else if seg_dist(&p, &body.arms[1].0, &body.arms[1].1) <= body.arm_radius {
                    Some(Part::ArmR)
                } else if inside(&p, &body.legs[0]) {
                    Some(Part::LegL)
                } else if inside(&p, &body.legs[1]) {
                    Some(Part::LegR)
                } else {
                    None
                };
                let Some(part) = part else { continue };
                let color = match part {
                    Part::Head => {
                        let hair_line = body.head.1[1] - body.hair_depth * head_h;
                        // Hair covers the crown and the back of the head.
                        if p.y >= hair_line || p.z < 0.0 {
                            palette[3]
                        } else {
                            palette[0]
                        }
                    }
                    Part::Torso => palette[1],
                    Part::ArmL | Part::ArmR => palette[0],
                    Part::LegL | Part::LegR => {
                        if p.y <= bottom + body.foot_height {
                            palette[3]
                        } else {
                            palette[2]
                        }
                    }
                };
                cells[(x * n + y) * n + z] = Some(Voxel { color, part });
            }
        }
    }

    // Marker: a patch on the torso's front layer.
    let mut marker_cells = Vec::new();
    if with_marker {
        let chest_y = hip_y + 0.55 * (neck_y - hip_y);
        let half = 0.45 * torso_hw;
        for x in 0..n {
            for y in 0..n {
                let (px, py) = (center(x), center(y));
                if px.abs() > half || (py - chest_y).abs() > half {
                    continue;
                }
                let front = (0..n).rev().find(|&z| cells[(x * n + y) * n + z].is_some());
                if let Some(z) = front {
                    if let Some(v) = cells[(x * n + y) * n + z].as_mut() {
                        if v.part == Part::Torso {
                            v.color = marker_color;
                            marker_cells.push([x, y, z]);
                        }
                    }
                }
            }
        }
    }

    CharacterSpec {
        seed,
        style,
        n,
        cells,
        palette,
        front_marker: FrontMarker {
            color: marker_color,
            cells: marker_cells,
        },
        pivots: [shoulders[0], shoulders[1], hips[0], hips[1]],
    }
}

/// A rigid transform `p -> rotation * (p - pivot) + pivot`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PartTransform {
    pub rotation: Rotation3<f64>,
    pub pivot: Vector3<f64>,
}

impl PartTransform {
    pub fn identity() -> Self {
        PartTransform {
            rotation: Rotation3::identity(),
            pivot: Vector3::zeros(),
        }
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * (p - self.pivot) + self.pivot
    }

    pub fn inverse_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.inverse() * (p - self.pivot) + self.pivot
    }

    pub fn inverse_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.inverse() * v
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PosedVoxel {
    pub center: Vector3<f64>,
    pub color: [f64; 3],
    pub part: Part,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PosedCharacter {
    pub voxels: Vec<PosedVoxel>,
    /// Indexed by [`Part::index`].
    pub transforms: [PartTransform; 6],
}

/// Transforms of every body part for a pose. Positive angles swing a limb
/// forward (toward `+z`).
pub fn part_transforms(spec: &CharacterSpec, pose: &PoseParams) -> Result<[PartTransform; 6]> {
    pose.validate()?;
    let mut t = [PartTransform::identity(); 6];
    let limbs = [Part::ArmL, Part::ArmR, Part::LegL, Part::LegR];
    for (joint, part) in limbs.into_iter().enumerate() {
        t[part.index()] = PartTransform {
            rotation: Rotation3::from_axis_angle(&Vector3::x_axis(), -pose.joint_angles[joint]),
            pivot: spec.pivots[joint],
        };
    }
    Ok(t)
}

pub fn apply_pose(spec: &CharacterSpec, pose: &PoseParams) -> Result<PosedCharacter> {
    let transforms = part_transforms(spec, pose)?;
    let n = spec.n;
    let mut voxels = Vec::with_capacity(spec.occupied_count());
    for x in 0..n {
        for y in 0..n {
            for z in 0..n {
                if let Some(v) = spec.cell(x, y, z) {
                    voxels.push(PosedVoxel {
                        center: transforms[v.part.index()].apply(&spec.cell_center(x, y, z)),
                        color: v.color,
                        part: v.part,
                    });
                }
            }
        }
    }
    Ok(PosedCharacter { voxels, transforms })
}
