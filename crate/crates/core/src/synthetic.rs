//! Labeled synthetic car-park scenes for tests, demos and benchmarks.
//!
//! A scene is a rectangular bay with a floor, a ceiling, one back wall and
//! two pillars. The wall carries three kinds of detail objects (doors,
//! electrical boxes and wall lights) whose shape only shows at full
//! resolution. Every object is kept inside its own band of voxels of the
//! configured grid, so each voxel holds points of a single merged class.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::classifier::TrainParams;
use crate::cloud::{ClassDef, ClassId, PointCloud, Resolution};
use crate::io::{ConfigDocument, MergeEntry, PipelineConfig};

pub const GROUND: ClassId = ClassId(0);
pub const WALL: ClassId = ClassId(1);
pub const CEILING: ClassId = ClassId(2);
pub const PILLAR: ClassId = ClassId(3);
pub const DOOR: ClassId = ClassId(4);
pub const ELEC_BOX: ClassId = ClassId(5);
pub const LIGHT: ClassId = ClassId(6);

pub const CLASS_NAMES: [&str; 7] = [
    "ground", "wall", "ceiling", "pillar", "door", "elec_box", "light",
];
pub const HIGH_CLASSES: [&str; 3] = ["door", "elec_box", "light"];

#[derive(Debug, Clone, PartialEq)]
pub struct SceneParams {
    /// Voxel edge of the grid the scene is laid out on (meters).
    pub voxel_size: f64,
    /// Bay size along x and y (meters).
    pub length: f64,
    pub depth: f64,
    /// Voxel layers between floor and ceiling, both included.
    pub layers: usize,
    /// Points per square meter of surface.
    pub density: f64,
    pub seed: u64,
}

impl Default for SceneParams {
    fn default() -> Self {
        SceneParams {
            voxel_size: 0.08,
            length: 8.0,
            depth: 5.0,
            layers: 31,
            density: 2200.0,
            seed: 0,
        }
    }
}

/// Schema, merge map and hyperparameters matching [`generate_scene`].
pub fn scene_config(voxel_size: f64) -> PipelineConfig {
    let classes = CLASS_NAMES
        .iter()
        .map(|&name| ClassDef {
            name: name.to_string(),
            resolution: if HIGH_CLASSES.contains(&name) {
                Resolution::High
            } else {
                Resolution::Low
            },
        })
        .collect();
    let merge = HIGH_CLASSES
        .iter()
        .map(|h| MergeEntry {
            from: h.to_string(),
            into: "wall".to_string(),
        })
        .collect();
    PipelineConfig::from_document(ConfigDocument {
        classes,
        merge,
        voxel_size,
        k: 14,
        classifier: TrainParams::default(),
        folds: BTreeMap::new(),
    })
    .expect("scene config is valid")
}

struct Builder {
    rng: ChaCha8Rng,
    noise: Normal<f64>,
    positions: Vec<[f64; 3]>,
    colors: Vec<[u8; 3]>,
    labels: Vec<ClassId>,
    density: f64,
}

impl Builder {
    fn count(&mut self, area: f64) -> usize {
        let n = area * self.density;
        let whole = n.floor();
        whole as usize + usize::from(self.rng.gen::<f64>() < n - whole)
    }

    fn push(&mut self, p: [f64; 3], base: [u8; 3], label: ClassId) {
        let jitter = self.rng.gen_range(-12i32..=12);
        let color = base.map(|c| (c as i32 + jitter).clamp(0, 255) as u8);
        self.positions.push(p);
        self.colors.push(color);
        self.labels.push(label);
    }

    fn eps(&mut self) -> f64 {
        self.noise.sample(&mut self.rng)
    }

    /// `n` uniform samples of a parametric patch `(u, v) in [0,1)^2`.
    fn patch(
        &mut self,
        area: f64,
        base: [u8; 3],
        label: ClassId,
        f: impl Fn(f64, f64, f64) -> [f64; 3],
    ) {
        for _ in 0..self.count(area) {
            let (u, v) = (self.rng.gen::<f64>(), self.rng.gen::<f64>());
            let e = self.eps();
            self.push(f(u, v, e), base, label);
        }
    }
}

/// Generates a labeled scene. Same params, same cloud.
pub fn generate_scene(params: &SceneParams) -> PointCloud {
    let v = params.voxel_size;
    let margin = 0.1 * v;
    let (lx, ly) = (params.length, params.depth);
    let top = params.layers as f64 * v;
    // wall-band height range; ground and ceiling own the first and last layer
    let (z0, z1) = (v + margin, top - v - margin);
    let wall_y = ly - 0.3;

    let mut b = Builder {
        rng: ChaCha8Rng::seed_from_u64(params.seed),
        noise: Normal::new(0.0, 0.002).unwrap(),
        positions: Vec::new(),
        colors: Vec::new(),
        labels: Vec::new(),
        density: params.density,
    };
    let clamp = |x: f64, lo: f64, hi: f64| x.clamp(lo, hi);

    // anchor so the grid origin is (0, 0, 0)
    b.push([0.0, 0.0, 0.0], [90, 90, 95], GROUND);
    let floor_z = 0.4 * v;
    b.patch(lx * wall_y, [90, 90, 95], GROUND, |u, w, e| {
        [u * lx, w * wall_y, clamp(floor_z + e, margin, v - margin)]
    });
    let ceil_z = top - 0.5 * v;
    b.patch(lx * wall_y, [205, 205, 200], CEILING, |u, w, e| {
        [
            u * lx,
            w * wall_y,
            clamp(ceil_z + e, top - v + margin, top - margin),
        ]
    });

    // detail layout along the wall, varied by seed
    let shift = b.rng.gen_range(0.0..0.6);
    let door = (0.8 + shift, 1.8 + shift, 2.05_f64.min(z1));
    let boxes = [(3.5 + shift, 1.0), (5.6 - shift, 1.2)];
    let box_size = (0.5, 0.6, 0.14);
    let light = (1.2, 6.8, top - 5.0 * v, 0.025);

    let in_door = |x: f64, z: f64| x >= door.0 && x < door.1 && z < door.2;
    let in_box = |x: f64, z: f64| {
        boxes
            .iter()
            .any(|&(bx, bz)| x >= bx && x < bx + box_size.0 && z >= bz && z < bz + box_size.1)
    };

    // back wall, minus what the door and boxes hide
    let wall_h = z1 - z0;
    for _ in 0..b.count(lx * wall_h) {
        let (x, z) = (b.rng.gen::<f64>() * lx, z0 + b.rng.gen::<f64>() * wall_h);
        if in_door(x, z) || in_box(x, z) {
            continue;
        }
        let e = b.eps();
        b.push([x, wall_y + e, z], [178, 176, 170], WALL);
    }

    // door: horizontal ribs 8 cm apart, slightly proud of the wall
    let (dw, dh) = (door.1 - door.0, door.2 - z0);
    b.patch(dw * dh * 1.3, [170, 168, 160], DOOR, |u, w, e| {
        let z = z0 + w * dh;
        let rib = 0.012 * (std::f64::consts::TAU * z / 0.08).sin();
        [door.0 + u * dw, wall_y - 0.025 - rib + e, z]
    });

    // electrical boxes: bumpy front face plus four sides
    for &(bx, bz) in &boxes {
        let (w, h, d) = box_size;
        b.patch(w * h, [172, 172, 165], ELEC_BOX, |u, s, e| {
            let bump = 0.006 * ((u * 37.0).sin() * (s * 29.0).sin());
            [bx + u * w, wall_y - d + bump + e, bz + s * h]
        });
        for &x in &[bx, bx + w] {
            b.patch(h * d, [172, 172, 165], ELEC_BOX, |u, s, e| {
                [x + e, wall_y - s * d, bz + u * h]
            });
        }
        for &z in &[bz, bz + h] {
            b.patch(w * d, [172, 172, 165], ELEC_BOX, |u, s, e| {
                [bx + u * w, wall_y - s * d, z + e]
            });
        }
    }

    // wall light: thin horizontal tube near the top of the wall
    let (x0, x1, lz, r) = light;
    let circumference = std::f64::consts::TAU * r;
    b.patch(
        (x1 - x0) * circumference * 2.0,
        [200, 200, 196],
        LIGHT,
        |u, s, e| {
            let a = std::f64::consts::TAU * s;
            [
                x0 + u * (x1 - x0),
                wall_y - 0.06 + (r + e) * a.cos(),
                lz + (r + e) * a.sin(),
            ]
        },
    );

    // pillars, well clear of the wall band
    for &(px, py) in &[(lx * 0.3, wall_y * 0.4), (lx * 0.7, wall_y * 0.4)] {
        let s = 0.4;
        for face in 0..4 {
            b.patch(s * wall_h, [185, 170, 70], PILLAR, |u, w, e| {
                let z = z0 + w * wall_h;
                match face {
                    0 => [px + u * s, py + e, z],
                    1 => [px + u * s, py + s + e, z],
                    2 => [px + e, py + u * s, z],
                    _ => [px + s + e, py + u * s, z],
                }
            });
        }
    }

    PointCloud::new(b.positions)
        .and_then(|c| c.with_colors(b.colors))
        .and_then(|c| c.with_labels(b.labels))
        .expect("generated cloud is valid")
}

/// Random points on a flat square patch, `density` points per square meter.
pub fn planar_patch(side: f64, density: f64, seed: u64) -> PointCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = (side * side * density).round() as usize;
    let positions = (0..n)
        .map(|_| [rng.gen::<f64>() * side, rng.gen::<f64>() * side, 0.0])
        .collect();
    PointCloud::new(positions).expect("finite")
}
