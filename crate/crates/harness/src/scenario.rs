//! Built-in scenes and particle spawning.

use std::fmt::Write as _;

use apbf_core::{
    Camera, DVec3, IterationRange, LodModel, LodModelConfig, ParticleSet, SdfPrimitive, SdfScene,
    Solver, SolverConfig, SolverMode,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{HarnessError, Result};

pub const BUILTIN_SCENARIOS: [&str; 3] = ["dam_break", "double_dam_break", "multi_dam_break"];

/// Lattice spacing of the built-in scenes.
pub const DEFAULT_SPACING: f64 = 0.1;

/// Largest allowed jitter, as a fraction of the spacing.
/// Depth below the visible surface, in smoothing lengths, at which DTVS
/// reaches the lowest level.
pub const DTVS_DEPTH_IN_H: f64 = 5.0;
pub const MAX_JITTER: f64 = 0.01;

/// Axis-aligned block of fluid particles.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FluidBlock {
    /// Position of the first particle.
    pub origin: DVec3,
    pub counts: [u32; 3],
}

impl FluidBlock {
    pub fn len(&self) -> usize {
        self.counts.iter().map(|&c| c as usize).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Zero-gravity relaxation of the spawned lattice before the first frame.
///
/// Each settling frame runs the solver with gravity off and a fixed
/// iteration count, then clears all velocities. It stops once no particle
/// moved more than `tolerance·h` during a frame, or after `max_frames`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Settle {
    pub max_frames: u32,
    pub iterations: u32,
    pub tolerance: f64,
}

impl Settle {
    pub const NONE: Settle = Settle {
        max_frames: 0,
        iterations: 1,
        tolerance: 0.0,
    };
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioSpec {
    pub name: String,
    pub blocks: Vec<FluidBlock>,
    pub spacing: f64,
    /// Per-axis jitter amplitude as a fraction of `spacing`.
    pub jitter: f64,
    pub scene: SdfScene,
    pub cameras: Vec<Camera>,
    pub solver: SolverConfig,
    pub lod: LodModelConfig,
    pub frames: u32,
    pub scale: f64,
    pub seed: u64,
    pub settle: Settle,
}

/// Lattice positions `origin + spacing·(i, j, k)`, x fastest.
///
/// `jitter` is `Some((fraction, rng))` to displace every coordinate by a
/// uniform offset of at most `fraction·spacing`.
pub fn spawn_block(
    origin: DVec3,
    counts: [u32; 3],
    spacing: f64,
    jitter: Option<(f64, &mut ChaCha8Rng)>,
) -> Result<Vec<DVec3>> {
    if counts.contains(&0) {
        return Err(HarnessError::Usage(format!(
            "block counts must be >= 1, got {counts:?}"
        )));
    }
    if !(spacing > 0.0) || !spacing.is_finite() {
        return Err(HarnessError::Usage(format!(
            "spacing must be > 0, got {spacing}"
        )));
    }
    let [nx, ny, nz] = counts;
    let mut out = Vec::with_capacity(nx as usize * ny as usize * nz as usize);
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                out.push(origin + DVec3::new(i as f64, j as f64, k as f64) * spacing);
            }
        }
    }
    if let Some((fraction, rng)) = jitter {
        if !(0.0..=MAX_JITTER).contains(&fraction) {
            return Err(HarnessError::Usage(format!(
                "jitter must be within [0, {MAX_JITTER}] of the spacing, got {fraction}"
            )));
        }
        let amp = fraction * spacing;
        if amp > 0.0 {
            for p in &mut out {
                *p += DVec3::new(
                    rng.gen_range(-amp..=amp),
                    rng.gen_range(-amp..=amp),
                    rng.gen_range(-amp..=amp),
                );
            }
        }
    }
    Ok(out)
}

/// Per-axis count at a given volume scale.
pub fn scaled_count(count: u32, scale: f64) -> u32 {
    ((count as f64 * scale.cbrt()).round() as u32).max(1)
}

fn camera(eye: DVec3, look_at: DVec3) -> Camera {
    Camera {
        eye,
        look_at,
        up: DVec3::Y,
        vertical_fov: 50f64.to_radians(),
        width: 256,
        height: 256,
        near: 0.01,
    }
}

/// Camera at `(0, 0, 5)` looking at the origin.
pub fn default_camera() -> Camera {
    camera(DVec3::new(0.0, 0.0, 5.0), DVec3::ZERO)
}

/// Shared defaults; the builders fill in geometry and the iteration range.
fn base_spec(name: &str, scale: f64, range: IterationRange) -> ScenarioSpec {
    let s = DEFAULT_SPACING;
    let h = 2.0 * s;
    let solver = SolverConfig {
        range,
        h,
        particle_radius: 0.5 * s,
        stab_threshold: range.n_max(),
        mode: SolverMode::Apbf,
        ..SolverConfig::default()
    };
    ScenarioSpec {
        name: name.to_string(),
        blocks: Vec::new(),
        spacing: s,
        jitter: MAX_JITTER,
        scene: SdfScene::new(Vec::new(), 1e-4 * h),
        cameras: Vec::new(),
        solver,
        lod: LodModelConfig {
            model: LodModel::Dtvs,
            d_min: 0.0,
            d_max: DTVS_DEPTH_IN_H * h,
            range,
            auto_range: false,
        },
        frames: 300,
        scale,
        seed: 0,
        settle: Settle {
            max_frames: 200,
            iterations: range.n_max(),
            tolerance: 1e-6,
        },
    }
}

fn dam_break(scale: f64) -> ScenarioSpec {
    let mut spec = base_spec("dam_break", scale, IterationRange::new(3, 6).unwrap());
    let s = spec.spacing;
    let n = scaled_count(60, scale);
    let l = n as f64 * s;
    let r = spec.solver.particle_radius;
    spec.blocks.push(FluidBlock {
        origin: DVec3::splat(r),
        counts: [n; 3],
    });
    spec.scene.primitives.push(SdfPrimitive::Container {
        min: DVec3::ZERO,
        max: DVec3::new(3.0 * l, 2.0 * l, 1.5 * l),
    });
    spec.cameras.push(camera(
        DVec3::new(1.5 * l, 1.5 * l, 5.0 * l),
        DVec3::new(1.5 * l, 0.3 * l, 0.75 * l),
    ));
    spec
}

fn double_dam_break(scale: f64) -> ScenarioSpec {
    let mut spec = base_spec(
        "double_dam_break",
        scale,
        IterationRange::new(5, 10).unwrap(),
    );
    let s = spec.spacing;
    let (nw, nh) = (scaled_count(58, scale), scaled_count(100, scale));
    let (l, hgt) = (nw as f64 * s, nh as f64 * s);
    let r = spec.solver.particle_radius;
    let side = 4.0 * l;
    spec.blocks.push(FluidBlock {
        origin: DVec3::splat(r),
        counts: [nw, nh, nw],
    });
    spec.blocks.push(FluidBlock {
        origin: DVec3::new(side - l + r, r, side - l + r),
        counts: [nw, nh, nw],
    });
    spec.scene.primitives.push(SdfPrimitive::Container {
        min: DVec3::ZERO,
        max: DVec3::new(side, 1.5 * hgt, side),
    });
    spec.cameras.push(camera(
        DVec3::new(0.5 * side, 1.2 * hgt, 2.2 * side),
        DVec3::new(0.5 * side, 0.1 * hgt, 0.5 * side),
    ));
    spec
}

fn multi_dam_break(scale: f64) -> ScenarioSpec {
    let mut spec = base_spec("multi_dam_break", scale, IterationRange::new(4, 8).unwrap());
    let s = spec.spacing;
    let (nw, nh) = (scaled_count(35, scale), scaled_count(46, scale));
    let (l, hgt) = (nw as f64 * s, nh as f64 * s);
    let r = spec.solver.particle_radius;
    let side = 4.0 * l;
    for (cx, cz) in [(0.0, 0.0), (1.0, 0.0), (0.0, 1.0), (1.0, 1.0)] {
        spec.blocks.push(FluidBlock {
            origin: DVec3::new(cx * (side - l) + r, r, cz * (side - l) + r),
            counts: [nw, nh, nw],
        });
    }
    spec.scene.primitives.push(SdfPrimitive::Container {
        min: DVec3::ZERO,
        max: DVec3::new(side, 1.6 * hgt, side),
    });
    spec.scene.primitives.push(SdfPrimitive::Cone {
        base_center: DVec3::new(0.5 * side, 0.0, 0.5 * side),
        radius: 0.8 * l,
        height: hgt,
    });
    spec.cameras.push(camera(
        DVec3::new(0.5 * side, 1.5 * hgt, 2.3 * side),
        DVec3::new(0.5 * side, 0.2 * hgt, 0.5 * side),
    ));
    spec
}

/// One of the built-in scenes at the given volume scale.
pub fn builtin_scenario(name: &str, scale: f64) -> Result<ScenarioSpec> {
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(HarnessError::Usage(format!(
            "scale must be > 0, got {scale}"
        )));
    }
    match name {
        "dam_break" => Ok(dam_break(scale)),
        "double_dam_break" => Ok(double_dam_break(scale)),
        "multi_dam_break" => Ok(multi_dam_break(scale)),
        _ => Err(HarnessError::UnknownScenario(name.to_string())),
    }
}

/// Command-line level adjustments applied on top of a scenario.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Overrides {
    pub frames: Option<u32>,
    pub seed: Option<u64>,
    pub mode: Option<SolverMode>,
    /// PBF iteration count; defaults to the scenario's `n_max`.
    pub iterations: Option<u32>,
    pub lod_model: Option<LodModel>,
}

/// A built-in name or a config file path, with overrides applied.
pub fn build_scenario(name: &str, scale: f64, overrides: &Overrides) -> Result<ScenarioSpec> {
    let mut spec = if BUILTIN_SCENARIOS.contains(&name) {
        builtin_scenario(name, scale)?
    } else if std::path::Path::new(name).is_file() {
        crate::config::load_scenario(std::path::Path::new(name), scale)?
    } else {
        return Err(HarnessError::UnknownScenario(name.to_string()));
    };
    spec.apply(overrides)?;
    spec.validate()?;
    Ok(spec)
}

impl ScenarioSpec {
    pub fn apply(&mut self, o: &Overrides) -> Result<()> {
        if let Some(f) = o.frames {
            self.frames = f;
        }
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(m) = o.lod_model {
            self.set_lod_model(m);
        }
        if let Some(mode) = o.mode {
            self.set_mode(mode, o.iterations)?;
        } else if o.iterations.is_some() {
            self.set_mode(self.solver.mode, o.iterations)?;
        }
        Ok(())
    }

    /// Switches solver mode. PBF runs `iterations` (default `n_max`) everywhere.
    pub fn set_mode(&mut self, mode: SolverMode, iterations: Option<u32>) -> Result<()> {
        let old_max = self.solver.range.n_max();
        let range = match (mode, iterations) {
            (SolverMode::Pbf, n) => IterationRange::uniform(n.unwrap_or(old_max))?,
            (SolverMode::Apbf, None) => self.solver.range,
            (SolverMode::Apbf, Some(n)) => {
                return Err(HarnessError::Usage(format!(
                    "a fixed iteration count ({n}) only applies to pbf mode"
                )))
            }
        };
        self.solver.mode = mode;
        self.set_range(range);
        Ok(())
    }

    /// Switches the level model together with its default distance range:
    /// a fixed `[0, DTVS_DEPTH_IN_H·h]` band below the visible surface for
    /// DTVS, per-frame percentiles of the eye distance for DTC.
    pub fn set_lod_model(&mut self, model: LodModel) {
        self.lod.model = model;
        match model {
            LodModel::Dtvs => {
                self.lod.auto_range = false;
                self.lod.d_min = 0.0;
                self.lod.d_max = DTVS_DEPTH_IN_H * self.solver.h;
            }
            LodModel::Dtc => self.lod.auto_range = true,
        }
    }

    pub fn set_range(&mut self, range: IterationRange) {
        let old_max = self.solver.range.n_max();
        if self.solver.stab_threshold == old_max || self.solver.stab_threshold > range.n_max() {
            self.solver.stab_threshold = range.n_max();
        }
        self.solver.range = range;
        self.lod.range = range;
    }

    pub fn particle_count(&self) -> usize {
        self.blocks.iter().map(FluidBlock::len).sum()
    }

    /// Mass per particle, chosen so the lattice is at rest density.
    pub fn particle_mass(&self) -> f64 {
        self.solver.rest_density * self.spacing.powi(3)
    }

    pub fn validate(&self) -> Result<()> {
        self.solver.validate()?;
        self.lod.validate()?;
        for c in &self.cameras {
            c.validate()?;
        }
        if self.blocks.is_empty() {
            return Err(HarnessError::Usage(format!(
                "scenario `{}` has no fluid",
                self.name
            )));
        }
        if self.cameras.is_empty() && self.solver.mode == SolverMode::Apbf {
            return Err(HarnessError::Usage(format!(
                "scenario `{}` needs a camera in apbf mode",
                self.name
            )));
        }
        if self.settle.iterations == 0 || !(self.settle.tolerance >= 0.0) {
            return Err(HarnessError::Usage(format!(
                "settle needs iterations >= 1 and tolerance >= 0, got {:?}",
                self.settle
            )));
        }
        if !(0.0..=MAX_JITTER).contains(&self.jitter) {
            return Err(HarnessError::Usage(format!(
                "jitter must be within [0, {MAX_JITTER}], got {}",
                self.jitter
            )));
        }
        Ok(())
    }

    /// Spawned and settled particles, ready for frame 0.
    pub fn initial_state(&self) -> Result<ParticleSet> {
        let mut state = self.spawn()?;
        self.settle_state(&mut state)?;
        Ok(state)
    }

    /// Runs the settling phase on `state`; returns the number of frames used.
    pub fn settle_state(&self, state: &mut ParticleSet) -> Result<u32> {
        let st = self.settle;
        if st.max_frames == 0 || state.is_empty() {
            return Ok(0);
        }
        let range = IterationRange::uniform(st.iterations)?;
        let cfg = SolverConfig {
            gravity: DVec3::ZERO,
            mode: SolverMode::Pbf,
            range,
            stab_threshold: st.iterations,
            ..self.solver.clone()
        };
        let mut solver = Solver::new(cfg)?;
        state.set_uniform_level(st.iterations);
        let limit = st.tolerance * self.solver.h;
        let mut before = vec![DVec3::ZERO; state.len()];
        for frame in 1..=st.max_frames {
            for (&id, &p) in state.id.iter().zip(&state.position) {
                before[id as usize] = p;
            }
            solver.step_frame(state, &self.scene, None)?;
            state.velocity.iter_mut().for_each(|v| *v = DVec3::ZERO);
            let moved = state
                .id
                .iter()
                .zip(&state.position)
                .map(|(&id, &p)| (p - before[id as usize]).length())
                .fold(0.0, f64::max);
            if moved <= limit {
                return Ok(frame);
            }
        }
        Ok(st.max_frames)
    }

    /// Lattice particles before settling; jitter is drawn from `seed`.
    pub fn spawn(&self) -> Result<ParticleSet> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut positions = Vec::with_capacity(self.particle_count());
        for b in &self.blocks {
            positions.extend(spawn_block(
                b.origin,
                b.counts,
                self.spacing,
                Some((self.jitter, &mut rng)),
            )?);
        }
        Ok(ParticleSet::new(
            positions,
            self.particle_mass(),
            self.solver.range,
        )?)
    }

    /// Identifies the physical setup. Mode, iteration range, level model and
    /// cameras are left out so that PBF and APBF runs of one scene share it.
    pub fn hash(&self) -> String {
        let c = &self.solver;
        let mut text = String::new();
        let _ = write!(
            text,
            "{}|{:?}|{:?}|{:?}|{:?}|{}|{}|{}|{:?}|{:?}|{:?}|{:?}|{:?}|{}|{:?}|{:?}|{:?}|{:?}",
            self.name,
            self.blocks,
            self.spacing,
            self.jitter,
            self.scene,
            self.frames,
            self.scale,
            self.seed,
            c.dt_frame,
            c.substeps,
            c.rest_density,
            c.h,
            c.epsilon,
            c.stab_iterations,
            c.gravity,
            c.particle_radius,
            (c.velocity_cap, c.inactive_lambda, c.gradient),
            self.settle,
        );
        Sha256::digest(text.as_bytes())
            .iter()
            .fold(String::with_capacity(64), |mut s, b| {
                let _ = write!(s, "{b:02x}");
                s
            })
    }
}
