//! Room model: perturbed-hexahedron geometry, per-band wall absorption,
//! Sabine inversion, and the tetrahedral cardioid receiver array.

pub mod ism;
pub mod render;

pub use ism::{image_sources, shoebox_lattice, visibility_test, ImageSource};
pub use render::{diffuse_tail, simulate_srir, SimConfig, Srir};

use crate::error::{Error, Result};
use crate::geom::{
    intersect_planes, order_convex_polygon, polygon_area, vec3, Plane, Vec3,
};
use crate::rng::Stream;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Canonical octave-band centers in Hz. Simulation and analysis agree on
/// this set; bands whose upper edge exceeds Nyquist are skipped per rate.
pub const OCTAVE_CENTERS: [f64; 6] = [125.0, 250.0, 500.0, 1000.0, 2000.0, 4000.0];
pub const NBANDS: usize = 6;

pub const ROOM_GENERATOR_VERSION: &str = "hexroom/v1";

/// Octave band indices usable at sample rate `fs` (upper edge below Nyquist).
pub fn feasible_band_indices(fs: f64) -> Vec<usize> {
    OCTAVE_CENTERS
        .iter()
        .enumerate()
        .filter(|(_, &c)| c * std::f64::consts::SQRT_2 < fs / 2.0)
        .map(|(i, _)| i)
        .collect()
}

/// Six planar walls of a (possibly perturbed) hexahedron with per-wall,
/// per-octave-band absorption. Vertices, volume, and surface area are
/// derived from the planes.
#[derive(Clone, Debug)]
pub struct RoomSpec {
    pub walls: [Plane; 6],
    /// Ordered quad of each wall (counter-clockwise seen from inside).
    pub wall_vertices: [[Vec3; 4]; 6],
    pub vertices: [Vec3; 8],
    /// absorption[wall][band] in (0, 1].
    pub absorption: [[f64; NBANDS]; 6],
    pub volume: f64,
    pub surface_area: f64,
    pub nominal_dims: [f64; 3],
    pub perturbation: f64,
    pub seed: u64,
}

#[derive(Serialize, Deserialize)]
struct RoomSpecFile {
    version: String,
    seed: u64,
    perturbation: f64,
    nominal_dims: [f64; 3],
    band_centers_hz: [f64; NBANDS],
    wall_normals: [[f64; 3]; 6],
    wall_offsets: [f64; 6],
    absorption: [[f64; NBANDS]; 6],
}

impl RoomSpec {
    /// Build the room from wall planes, deriving vertices and checking
    /// convexity. Wall order: x-lo, x-hi, y-lo, y-hi, z-lo, z-hi.
    pub fn from_planes(
        walls: [Plane; 6],
        absorption: [[f64; NBANDS]; 6],
        nominal_dims: [f64; 3],
        perturbation: f64,
        seed: u64,
    ) -> Result<RoomSpec> {
        for (w, a) in absorption.iter().enumerate() {
            for &alpha in a {
                if !(alpha > 0.0 && alpha <= 1.0) {
                    return Err(Error::Geometry(format!(
                        "wall {w} absorption {alpha} outside (0, 1]"
                    )));
                }
            }
        }
        // Vertex (i,j,k) = intersection of the chosen x/y/z walls.
        let mut vertices = [Vec3::ZERO; 8];
        for i in 0..2 {
            for j in 0..2 {
                for k in 0..2 {
                    let p = intersect_planes(&walls[i], &walls[2 + j], &walls[4 + k]).ok_or_else(
                        || Error::Geometry(format!("degenerate corner ({i},{j},{k})")),
                    )?;
                    vertices[(i << 2) | (j << 1) | k] = p;
                }
            }
        }
        // Convexity: every vertex on the interior side of every wall.
        for v in &vertices {
            for (wi, w) in walls.iter().enumerate() {
                if w.signed(*v) < -1e-9 {
                    return Err(Error::Geometry(format!(
                        "non-convex hexahedron: vertex {v:?} behind wall {wi}"
                    )));
                }
            }
        }
        // Wall quads. Wall (axis, side) owns the 4 vertices whose index bit
        // for that axis matches the side.
        let mut wall_vertices = [[Vec3::ZERO; 4]; 6];
        for axis in 0..3 {
            for side in 0..2 {
                let wall_idx = 2 * axis + side;
                let bit = 2 - axis;
                let quad: Vec<Vec3> = (0..8usize)
                    .filter(|idx| (idx >> bit) & 1 == side)
                    .map(|idx| vertices[idx])
                    .collect();
                let ordered = order_convex_polygon(&quad, walls[wall_idx].normal);
                wall_vertices[wall_idx] = [ordered[0], ordered[1], ordered[2], ordered[3]];
            }
        }
        // Divergence theorem over planar faces: V = Σ A_f (n_out·x_f) / 3,
        // and n_out·x = -offset on each wall plane.
        let mut volume = 0.0;
        let mut surface_area = 0.0;
        for (wi, quad) in wall_vertices.iter().enumerate() {
            let area = polygon_area(quad);
            surface_area += area;
            volume += area * (-walls[wi].offset) / 3.0;
        }
        if volume <= 0.0 {
            return Err(Error::Geometry(format!("non-positive volume {volume}")));
        }
        Ok(RoomSpec {
            walls,
            wall_vertices,
            vertices,
            absorption,
            volume,
            surface_area,
            nominal_dims,
            perturbation,
            seed,
        })
    }

    /// True if `p` lies at least `margin` inside every wall.
    pub fn contains(&self, p: Vec3, margin: f64) -> bool {
        self.walls.iter().all(|w| w.signed(p) >= margin)
    }

    pub fn set_uniform_absorption(&mut self, alpha_per_band: &[f64; NBANDS]) {
        for wall in &mut self.absorption {
            *wall = *alpha_per_band;
        }
    }

    /// Area-weighted mean absorption per band.
    pub fn mean_absorption(&self) -> [f64; NBANDS] {
        let mut mean = [0.0; NBANDS];
        for (wi, quad) in self.wall_vertices.iter().enumerate() {
            let area = polygon_area(quad);
            for b in 0..NBANDS {
                mean[b] += area * self.absorption[wi][b];
            }
        }
        for m in &mut mean {
            *m /= self.surface_area;
        }
        mean
    }

    /// Sabine reverberation time per band implied by the current absorption.
    pub fn sabine_rt(&self) -> [f64; NBANDS] {
        let mean = self.mean_absorption();
        let mut rt = [0.0; NBANDS];
        for b in 0..NBANDS {
            rt[b] = 0.161 * self.volume / (self.surface_area * mean[b]);
        }
        rt
    }

    /// Mean free path 4V/S in meters.
    pub fn mean_free_path(&self) -> f64 {
        4.0 * self.volume / self.surface_area
    }

    pub fn to_json(&self) -> Result<String> {
        let file = RoomSpecFile {
            version: ROOM_GENERATOR_VERSION.to_string(),
            seed: self.seed,
            perturbation: self.perturbation,
            nominal_dims: self.nominal_dims,
            band_centers_hz: OCTAVE_CENTERS,
            wall_normals: self.walls.map(|w| w.normal.as_array()),
            wall_offsets: self.walls.map(|w| w.offset),
            absorption: self.absorption,
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(text: &str) -> Result<RoomSpec> {
        let file: RoomSpecFile = serde_json::from_str(text)?;
        let mut walls = [Plane::new(Vec3::ZERO, 0.0); 6];
        for i in 0..6 {
            walls[i] = Plane::new(Vec3::from(file.wall_normals[i]).normalized(), file.wall_offsets[i]);
        }
        RoomSpec::from_planes(
            walls,
            file.absorption,
            file.nominal_dims,
            file.perturbation,
            file.seed,
        )
    }
}

/// Axis-aligned shoebox planes for the given dimensions.
fn shoebox_planes(dims: [f64; 3]) -> [Plane; 6] {
    [
        Plane::through(Vec3::ZERO, vec3(1.0, 0.0, 0.0)),
        Plane::through(vec3(dims[0], 0.0, 0.0), vec3(-1.0, 0.0, 0.0)),
        Plane::through(Vec3::ZERO, vec3(0.0, 1.0, 0.0)),
        Plane::through(vec3(0.0, dims[1], 0.0), vec3(0.0, -1.0, 0.0)),
        Plane::through(Vec3::ZERO, vec3(0.0, 0.0, 1.0)),
        Plane::through(vec3(0.0, 0.0, dims[2]), vec3(0.0, 0.0, -1.0)),
    ]
}

fn rotate_about(v: Vec3, axis: Vec3, angle: f64) -> Vec3 {
    // Rodrigues rotation; axis must be unit.
    let (s, c) = angle.sin_cos();
    v * c + axis.cross(v) * s + axis * (axis.dot(v) * (1.0 - c))
}

const DEFAULT_ALPHA: f64 = 0.2;

/// Perturbed hexahedron: start from the axis-aligned shoebox, tilt each
/// wall's normal by angles in [-perturbation, +perturbation] radians about
/// its two tangent axes, and jitter the wall along its axis by up to
/// perturbation·dim. Redraws until the result is convex with volume within
/// 20% of the shoebox.
pub fn make_room(nominal_dims: [f64; 3], perturbation: f64, seed: u64) -> Result<RoomSpec> {
    if !(0.0..=0.05).contains(&perturbation) {
        return Err(Error::InvalidArg(format!(
            "perturbation {perturbation} outside [0, 0.05] rad"
        )));
    }
    if nominal_dims.iter().any(|&d| d <= 0.0) {
        return Err(Error::InvalidArg(format!(
            "non-positive room dimension in {nominal_dims:?}"
        )));
    }
    let mut rng = crate::rng::substream(seed, "make-room");
    let shoebox_volume = nominal_dims.iter().product::<f64>();
    let axes = [vec3(1.0, 0.0, 0.0), vec3(0.0, 1.0, 0.0), vec3(0.0, 0.0, 1.0)];

    for _attempt in 0..64 {
        let base = shoebox_planes(nominal_dims);
        let mut walls = [Plane::new(Vec3::ZERO, 0.0); 6];
        for axis in 0..3 {
            for side in 0..2 {
                let wi = 2 * axis + side;
                let t1 = axes[(axis + 1) % 3];
                let t2 = axes[(axis + 2) % 3];
                let mut draw = |lo: f64, hi: f64| -> f64 {
                    if perturbation == 0.0 {
                        0.0
                    } else {
                        rng.gen_range(lo..=hi)
                    }
                };
                let a1 = draw(-perturbation, perturbation);
                let a2 = draw(-perturbation, perturbation);
                let shift = draw(-perturbation, perturbation) * nominal_dims[axis];
                let normal = rotate_about(rotate_about(base[wi].normal, t1, a1), t2, a2);
                // Anchor at the (possibly shifted) face center.
                let mut anchor = vec3(
                    nominal_dims[0] / 2.0,
                    nominal_dims[1] / 2.0,
                    nominal_dims[2] / 2.0,
                );
                let coord = (if side == 0 { 0.0 } else { nominal_dims[axis] }) + shift;
                match axis {
                    0 => anchor.x = coord,
                    1 => anchor.y = coord,
                    _ => anchor.z = coord,
                }
                walls[wi] = Plane::through(anchor, normal);
            }
        }
        match RoomSpec::from_planes(
            walls,
            [[DEFAULT_ALPHA; NBANDS]; 6],
            nominal_dims,
            perturbation,
            seed,
        ) {
            Ok(room) => {
                if (room.volume - shoebox_volume).abs() <= 0.20 * shoebox_volume {
                    return Ok(room);
                }
            }
            Err(_) => {}
        }
    }
    Err(Error::Geometry(format!(
        "no valid hexahedron after 64 draws (dims {nominal_dims:?}, perturbation {perturbation})"
    )))
}

/// Outcome of Sabine inversion; infeasible combinations are a value so
/// dataset generation can reject and redraw.
#[derive(Clone, Debug, PartialEq)]
pub enum SabineResult {
    Feasible([f64; NBANDS]),
    Infeasible { band_hz: f64, alpha: f64 },
}

/// Uniform-per-wall absorption matching a per-band RT target via Sabine's
/// equation: α(b) = 0.161·V / (S·RT(b)).
pub fn sabine_absorption(rt_profile: &[f64; NBANDS], room: &RoomSpec) -> Result<SabineResult> {
    let mut alphas = [0.0; NBANDS];
    for b in 0..NBANDS {
        if rt_profile[b] <= 0.0 {
            return Err(Error::InvalidArg(format!(
                "RT profile must be positive, got {} s at {} Hz",
                rt_profile[b], OCTAVE_CENTERS[b]
            )));
        }
        let alpha = 0.161 * room.volume / (room.surface_area * rt_profile[b]);
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Ok(SabineResult::Infeasible {
                band_hz: OCTAVE_CENTERS[b],
                alpha,
            });
        }
        alphas[b] = alpha;
    }
    Ok(SabineResult::Feasible(alphas))
}

/// Tetrahedral cardioid receiver array. Canonical orientation: capsule 0
/// looks toward +z, capsules 1..3 look downward at azimuths 0°, 120°, 240°.
#[derive(Clone, Debug)]
pub struct MicArray {
    pub center: Vec3,
    pub capsule_offsets: [Vec3; 4],
    pub look_directions: [Vec3; 4],
    pub radius: f64,
}

impl MicArray {
    pub fn capsule_positions(&self) -> [Vec3; 4] {
        self.capsule_offsets.map(|o| self.center + o)
    }
}

/// Regular-tetrahedron capsule layout scaled to `radius`, look directions
/// radially outward.
pub fn array_geometry(center: Vec3, radius: f64) -> Result<MicArray> {
    if radius <= 0.0 {
        return Err(Error::InvalidArg(format!("array radius {radius} <= 0")));
    }
    let r23 = 2.0 * std::f64::consts::SQRT_2 / 3.0;
    let mut dirs = [vec3(0.0, 0.0, 1.0); 4];
    for k in 0..3 {
        let az = 2.0 * std::f64::consts::PI * k as f64 / 3.0;
        dirs[k + 1] = vec3(r23 * az.cos(), r23 * az.sin(), -1.0 / 3.0);
    }
    Ok(MicArray {
        center,
        capsule_offsets: dirs.map(|d| d * radius),
        look_directions: dirs,
        radius,
    })
}

/// First-order cardioid: 0.5·(1 + look·incident), `incident` pointing from
/// the capsule toward the arrival.
pub fn cardioid_gain(look: Vec3, incident: Vec3) -> Result<f64> {
    for (name, v) in [("look", look), ("incident", incident)] {
        if (v.norm() - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidArg(format!(
                "{name} direction not unit-norm: |v| = {}",
                v.norm()
            )));
        }
    }
    Ok(0.5 * (1.0 + look.dot(incident)))
}

/// Rejection-sample a room's dimensions until a Sabine-feasible absorption
/// exists for the RT profile.
pub fn draw_feasible_room(
    rt_profile: &[f64; NBANDS],
    dims_lo: [f64; 3],
    dims_hi: [f64; 3],
    perturbation: f64,
    rng: &mut Stream,
    max_tries: usize,
) -> Result<RoomSpec> {
    if max_tries == 0 {
        return Err(Error::InvalidArg("max_tries must be >= 1".into()));
    }
    for _ in 0..max_tries {
        let dims = [
            rng.gen_range(dims_lo[0]..=dims_hi[0]),
            rng.gen_range(dims_lo[1]..=dims_hi[1]),
            rng.gen_range(dims_lo[2]..=dims_hi[2]),
        ];
        let room_seed: u64 = rng.gen();
        let mut room = make_room(dims, perturbation, room_seed)?;
        if let SabineResult::Feasible(alphas) = sabine_absorption(rt_profile, &room)? {
            room.set_uniform_absorption(&alphas);
            return Ok(room);
        }
    }
    Err(Error::Dataset(format!(
        "no Sabine-feasible room in {max_tries} draws for RT profile {rt_profile:?}"
    )))
}
