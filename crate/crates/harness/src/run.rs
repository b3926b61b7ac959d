//! Driving a scenario frame by frame and writing its outputs.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use apbf_core::{splat::render_levels, FrameStats, LodSetup, ParticleSet, Solver, SolverMode};

use crate::error::{HarnessError, Result};
use crate::metrics::{write_header, MetricsRow};
use crate::scenario::ScenarioSpec;

/// A scenario together with its evolving state.
pub struct Simulation {
    pub spec: ScenarioSpec,
    pub state: ParticleSet,
    pub solver: Solver,
    lod: Option<LodSetup>,
}

impl Simulation {
    pub fn new(spec: ScenarioSpec) -> Result<Self> {
        spec.validate()?;
        let state = spec.initial_state()?;
        Self::with_state(spec, state)
    }

    /// Starts from a given state instead of spawning the scenario's blocks.
    pub fn with_state(spec: ScenarioSpec, state: ParticleSet) -> Result<Self> {
        let solver = Solver::new(spec.solver.clone())?;
        let lod =
            (spec.solver.mode == SolverMode::Apbf && !spec.cameras.is_empty()).then(|| LodSetup {
                cameras: spec.cameras.clone(),
                config: spec.lod,
            });
        Ok(Self {
            spec,
            state,
            solver,
            lod,
        })
    }

    pub fn step(&mut self) -> Result<FrameStats> {
        Ok(self
            .solver
            .step_frame(&mut self.state, &self.spec.scene, self.lod.as_ref())?)
    }

    /// Largest particle speed.
    pub fn max_speed(&self) -> f64 {
        self.state
            .velocity
            .iter()
            .map(|v| v.length())
            .fold(0.0, f64::max)
    }
}

/// Runs `f` on a single-thread pool when `deterministic` is set, otherwise
/// on the global pool.
pub fn with_threads<T: Send>(deterministic: bool, f: impl FnOnce() -> T + Send) -> Result<T> {
    if deterministic {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .map_err(|e| HarnessError::Usage(format!("cannot build thread pool: {e}")))?;
        Ok(pool.install(f))
    } else {
        Ok(f())
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunOptions {
    pub out: Option<PathBuf>,
    pub deterministic: bool,
    /// Write a level-coloured PPM every k frames.
    pub dump_images: Option<u32>,
    /// Write a particle CSV every k frames.
    pub dump_particles: Option<u32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunReport {
    pub header: Vec<(String, String)>,
    pub stats: Vec<FrameStats>,
    pub median_frame_ms: f64,
    pub total_iterations: u64,
    pub max_speed: f64,
}

/// Median of `values`; zero for an empty slice.
pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Config echo written at the top of the metrics file.
pub fn header(spec: &ScenarioSpec, particles: usize, deterministic: bool) -> Vec<(String, String)> {
    let c = &spec.solver;
    let mut h = vec![
        ("scenario", spec.name.clone()),
        ("scenario_hash", spec.hash()),
        ("mode", c.mode.to_string()),
        ("range", c.range.to_string()),
    ];
    if c.mode == SolverMode::Apbf {
        h.push(("lod_model", spec.lod.model.to_string()));
        h.push(("lod_auto_range", spec.lod.auto_range.to_string()));
    }
    h.extend([
        ("particles", particles.to_string()),
        ("frames", spec.frames.to_string()),
        ("scale", spec.scale.to_string()),
        ("seed", spec.seed.to_string()),
        ("dt_frame", c.dt_frame.to_string()),
        ("substeps", c.substeps.to_string()),
        ("h", c.h.to_string()),
        ("rest_density", c.rest_density.to_string()),
        ("epsilon", c.epsilon.to_string()),
        ("stab_iterations", c.stab_iterations.to_string()),
        ("stab_threshold", c.stab_threshold.to_string()),
        ("velocity_cap", c.effective_velocity_cap().to_string()),
        ("deterministic", deterministic.to_string()),
    ]);
    h.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).map_err(|e| HarnessError::io(path, e))?,
    ))
}

fn due(every: Option<u32>, frame: u64) -> bool {
    matches!(every, Some(k) if k > 0 && frame.is_multiple_of(k as u64))
}

fn dump(sim: &Simulation, dir: &Path, frame: u64, opts: &RunOptions) -> Result<()> {
    if due(opts.dump_particles, frame) {
        let path = dir.join(format!("particles_{frame:05}.csv"));
        let mut w = create(&path)?;
        sim.state
            .write_snapshot_csv(&mut w)
            .map_err(|e| HarnessError::io(&path, e))?;
        w.flush().map_err(|e| HarnessError::io(&path, e))?;
    }
    if due(opts.dump_images, frame) {
        if let Some(cam) = sim.spec.cameras.first() {
            let img = render_levels(
                &sim.state.position,
                &sim.state.level,
                sim.spec.solver.range,
                sim.spec.solver.particle_radius,
                cam,
            )?;
            img.write_ppm(&dir.join(format!("frame_{frame:05}.ppm")))?;
        }
    }
    Ok(())
}

/// Simulates `spec.frames` frames. With an output directory the metrics
/// CSV is written row by row, so an aborted run leaves the frames before
/// the failure on disk.
pub fn run(spec: ScenarioSpec, opts: &RunOptions) -> Result<RunReport> {
    let deterministic = opts.deterministic;
    with_threads(deterministic, move || run_inner(spec, opts))?
}

fn run_inner(spec: ScenarioSpec, opts: &RunOptions) -> Result<RunReport> {
    let mut sim = Simulation::new(spec)?;
    let head = header(&sim.spec, sim.state.len(), opts.deterministic);
    let mut csv = match &opts.out {
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
            let path = dir.join("metrics.csv");
            let mut w = create(&path)?;
            write_header(&mut w, &head).map_err(|e| HarnessError::io(&path, e))?;
            Some((w, path))
        }
        None => None,
    };

    let mut stats = Vec::with_capacity(sim.spec.frames as usize);
    let mut max_speed = 0.0f64;
    for _ in 0..sim.spec.frames {
        let s = match sim.step() {
            Ok(s) => s,
            Err(e) => {
                if let Some((w, path)) = csv.as_mut() {
                    w.flush().map_err(|io| HarnessError::io(&*path, io))?;
                }
                return Err(e);
            }
        };
        max_speed = max_speed.max(sim.max_speed());
        if let Some((w, path)) = csv.as_mut() {
            MetricsRow::from_stats(&s, opts.deterministic)
                .write(&mut *w)
                .map_err(|e| HarnessError::io(&*path, e))?;
        }
        if let Some(dir) = &opts.out {
            dump(&sim, dir, s.frame, opts)?;
        }
        stats.push(s);
    }
    if let Some((mut w, path)) = csv {
        w.flush().map_err(|e| HarnessError::io(&path, e))?;
    }

    let times: Vec<f64> = stats
        .iter()
        .map(|s| s.wall_time.as_secs_f64() * 1e3)
        .collect();
    Ok(RunReport {
        header: head,
        median_frame_ms: median(&times),
        total_iterations: stats.iter().map(|s| s.total_iterations).sum(),
        max_speed,
        stats,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::builtin_scenario;

    #[test]
    fn median_of_odd_and_even() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert_eq!(median(&[]), 0.0);
    }

    #[test]
    fn short_run_writes_outputs() {
        let dir = std::env::temp_dir().join(format!("apbf-run-{}", std::process::id()));
        let mut spec = builtin_scenario("dam_break", 1.0 / 216.0).unwrap();
        spec.frames = 3;
        let opts = RunOptions {
            out: Some(dir.clone()),
            deterministic: true,
            dump_images: Some(2),
            dump_particles: Some(2),
        };
        let report = run(spec.clone(), &opts).unwrap();
        assert_eq!(report.stats.len(), 3);
        let n = spec.particle_count() as u64;
        let per_frame = spec.solver.substeps as u64;
        assert!(report.total_iterations >= 3 * n * 3 * per_frame);
        assert!(report.total_iterations <= 6 * n * 3 * per_frame);
        let text = std::fs::read_to_string(dir.join("metrics.csv")).unwrap();
        assert_eq!(text.lines().filter(|l| !l.starts_with('#')).count(), 4);
        assert!(dir.join("frame_00000.ppm").is_file());
        assert!(dir.join("frame_00002.ppm").is_file());
        assert!(!dir.join("frame_00001.ppm").exists());
        assert!(dir.join("particles_00002.csv").is_file());
        std::fs::remove_dir_all(dir).unwrap();
    }
}
