//! Density-constraint solver and the adaptive frame loop.
//!
//! Every substep runs:
//!
//! 1. external forces and position prediction for all particles,
//! 2. grid rebuild (reordering the particle arrays), neighbor lists and contacts,
//! 3. contact pre-stabilisation for particles below level `S`,
//! 4. Jacobi iterations `1..=n_max`; iteration `l` only touches particles
//!    with `level >= l`, the others keep their position and their last `λ`,
//! 5. velocity update from the corrected prediction.
//!
//! Plain PBF is the special case where every particle has level `n_max`.

use std::time::{Duration, Instant};

use glam::DVec3;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{NeighborLists, UniformGrid};
use crate::kernels::{GradientKernel, KernelParams};
use crate::lod::{compute_levels, LodModelConfig};
use crate::particles::{finished_set, IterationRange, ParticleSet};
use crate::sdf::{find_contacts, prestabilize, Contact, SdfScene};
use crate::splat::Camera;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SolverMode {
    Pbf,
    Apbf,
}

impl std::fmt::Display for SolverMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Pbf => "pbf",
            Self::Apbf => "apbf",
        })
    }
}

/// What an active particle reads as `λ_j` for a neighbor that already finished.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum InactiveLambda {
    /// The value from the neighbor's last active iteration.
    Frozen,
    Zero,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolverConfig {
    /// Frame length in seconds.
    pub dt_frame: f64,
    pub substeps: u32,
    pub range: IterationRange,
    pub rest_density: f64,
    /// Smoothing length, also the neighbor radius.
    pub h: f64,
    /// Regulariser added to the λ denominator.
    pub epsilon: f64,
    pub gravity: DVec3,
    pub stab_iterations: u32,
    /// Particles with a level below this take part in pre-stabilisation.
    pub stab_threshold: u32,
    pub particle_radius: f64,
    pub mode: SolverMode,
    /// Speed clamp; `None` means one smoothing length per substep.
    pub velocity_cap: Option<f64>,
    pub inactive_lambda: InactiveLambda,
    /// Kernel differentiated for the constraint gradients.
    pub gradient: GradientKernel,
}

impl Default for SolverConfig {
    fn default() -> Self {
        let range = IterationRange::new(3, 6).unwrap();
        Self {
            dt_frame: 0.0016,
            substeps: 2,
            range,
            rest_density: 1000.0,
            h: 0.2,
            epsilon: 100.0,
            gravity: DVec3::new(0.0, -9.81, 0.0),
            stab_iterations: 2,
            stab_threshold: range.n_max(),
            particle_radius: 0.05,
            mode: SolverMode::Apbf,
            velocity_cap: None,
            inactive_lambda: InactiveLambda::Frozen,
            gradient: GradientKernel::Poly6,
        }
    }
}

impl SolverConfig {
    pub fn substep_dt(&self) -> f64 {
        self.dt_frame / self.substeps as f64
    }

    pub fn effective_velocity_cap(&self) -> f64 {
        self.velocity_cap.unwrap_or(self.h / self.substep_dt())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if !(self.dt_frame > 0.0) || !self.dt_frame.is_finite() {
            return bad(format!("dt_frame must be > 0, got {}", self.dt_frame));
        }
        if self.substeps == 0 {
            return bad("substeps must be >= 1".into());
        }
        if !(self.rest_density > 0.0) || !self.rest_density.is_finite() {
            return bad(format!(
                "rest_density must be > 0, got {}",
                self.rest_density
            ));
        }
        if !(self.h > 0.0) || !self.h.is_finite() {
            return bad(format!("h must be > 0, got {}", self.h));
        }
        if !(self.epsilon >= 0.0) {
            return bad(format!("epsilon must be >= 0, got {}", self.epsilon));
        }
        if !self.gravity.is_finite() {
            return bad("gravity must be finite".into());
        }
        if !(1..=self.range.n_max()).contains(&self.stab_threshold) {
            return bad(format!(
                "stab_threshold must lie in [1, {}], got {}",
                self.range.n_max(),
                self.stab_threshold
            ));
        }
        if !(self.particle_radius > 0.0) {
            return bad(format!(
                "particle_radius must be > 0, got {}",
                self.particle_radius
            ));
        }
        if let Some(cap) = self.velocity_cap {
            if !(cap > 0.0) {
                return bad(format!("velocity_cap must be > 0, got {cap}"));
            }
        }
        Ok(())
    }
}

/// Camera setup driving the levels in adaptive mode.
#[derive(Clone, Debug, PartialEq)]
pub struct LodSetup {
    pub cameras: Vec<Camera>,
    pub config: LodModelConfig,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct FrameStats {
    pub frame: u64,
    /// Time spent in level assignment and the substeps.
    pub wall_time: Duration,
    /// Density statistics at the end of the frame, in percent of the rest density.
    pub avg_density_pct: f64,
    pub min_density_pct: f64,
    pub max_density_pct: f64,
    /// Sum over substeps and particles of the iterations each particle took part in.
    pub total_iterations: u64,
    /// Contacts found at prediction time, summed over substeps.
    pub contacts: u64,
    pub prestabilized: u64,
}

/// `ρ_i = Σ_j m_j W(x_i − x_j)` over `neighbors` (which include `i`).
#[inline]
pub fn compute_density(
    i: usize,
    neighbors: &[u32],
    masses: &[f64],
    positions: &[DVec3],
    kernel: &KernelParams,
) -> f64 {
    let xi = positions[i];
    neighbors
        .iter()
        .map(|&j| masses[j as usize] * kernel.density(xi - positions[j as usize]))
        .sum()
}

/// Everything the constraint projection needs besides particle data.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConstraintParams {
    pub kernel: KernelParams,
    pub gradient: GradientKernel,
    pub rest_density: f64,
    pub epsilon: f64,
}

impl ConstraintParams {
    pub fn from_config(cfg: &SolverConfig) -> Result<Self> {
        Ok(Self {
            kernel: KernelParams::new(cfg.h)?,
            gradient: cfg.gradient,
            rest_density: cfg.rest_density,
            epsilon: cfg.epsilon,
        })
    }

    #[inline]
    fn grad(&self, r: DVec3) -> DVec3 {
        self.kernel.constraint_gradient(self.gradient, r)
    }
}

/// `λ_i = −C_i / (Σ_k w_k |∇_k C_i|² + ε)` with `C_i = ρ_i/ρ0 − 1`.
#[inline]
pub fn compute_lambda(
    i: usize,
    density: f64,
    neighbors: &[u32],
    inv_mass: &[f64],
    positions: &[DVec3],
    params: &ConstraintParams,
) -> f64 {
    let c = density / params.rest_density - 1.0;
    let xi = positions[i];
    let inv_rho0 = 1.0 / params.rest_density;
    let mut grad_i = DVec3::ZERO;
    let mut sum_sq = 0.0;
    for &j in neighbors {
        let j = j as usize;
        if j == i {
            continue;
        }
        let g = params.grad(xi - positions[j]) * inv_rho0;
        grad_i += g;
        sum_sq += inv_mass[j] * g.length_squared();
    }
    sum_sq += inv_mass[i] * grad_i.length_squared();
    -c / (sum_sq + params.epsilon)
}

/// `Δp_i = w_i / ρ0 · Σ_j (λ_i + λ_j) ∇W(x_i − x_j)`.
#[inline]
pub fn compute_delta_p(
    i: usize,
    neighbors: &[u32],
    lambda: &[f64],
    inv_mass: &[f64],
    positions: &[DVec3],
    params: &ConstraintParams,
) -> DVec3 {
    let xi = positions[i];
    let li = lambda[i];
    let sum: DVec3 = neighbors
        .iter()
        .map(|&j| params.grad(xi - positions[j as usize]) * (li + lambda[j as usize]))
        .fold(DVec3::ZERO, |a, b| a + b);
    sum * (inv_mass[i] / params.rest_density)
}

/// Densities at the current positions, in the caller's particle order.
pub fn compute_densities(positions: &[DVec3], masses: &[f64], h: f64) -> Result<Vec<f64>> {
    let kernel = KernelParams::new(h)?;
    let grid = UniformGrid::build(positions, h, h)?;
    Ok(positions
        .par_iter()
        .map(|&p| {
            let mut rho = 0.0;
            grid.for_each_neighbor(positions, p, |j| {
                rho += masses[j] * kernel.density(p - positions[j])
            });
            rho
        })
        .collect())
}

/// Mean, minimum and maximum of `densities` in percent of `rest_density`.
/// The mean is summed in index order.
pub fn density_summary(densities: &[f64], rest_density: f64) -> (f64, f64, f64) {
    if densities.is_empty() {
        return (0.0, 0.0, 0.0);
    }
    let sum: f64 = densities.iter().sum();
    let (lo, hi) = densities
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &d| {
            (lo.min(d), hi.max(d))
        });
    let pct = 100.0 / rest_density;
    (sum / densities.len() as f64 * pct, lo * pct, hi * pct)
}

fn check_finite(state: &ParticleSet, pass: &'static str) -> Result<()> {
    let bad = |i: usize| {
        if !state.position[i].is_finite() {
            Some("position")
        } else if !state.predicted[i].is_finite() {
            Some("predicted position")
        } else if !state.velocity[i].is_finite() {
            Some("velocity")
        } else if !state.lambda[i].is_finite() {
            Some("lambda")
        } else {
            None
        }
    };
    let all_finite = state
        .position
        .par_iter()
        .zip(&state.predicted)
        .zip(&state.velocity)
        .zip(&state.lambda)
        .all(|(((x, p), v), l)| (x.dot(*x) + p.dot(*p) + v.dot(*v) + l).is_finite());
    if all_finite {
        return Ok(());
    }
    // The fast sum can overflow for huge but finite values.
    match (0..state.len()).find_map(|i| bad(i).map(|f| (state.id[i], f))) {
        Some((particle, field)) => Err(Error::NumericalAbort {
            pass,
            particle,
            field,
        }),
        None => Ok(()),
    }
}

/// Per-substep outcome.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SubstepStats {
    pub iterations: u64,
    pub contacts: u64,
    pub prestabilized: u64,
}

pub struct Solver {
    config: SolverConfig,
    params: ConstraintParams,
    neighbors: NeighborLists,
    contacts: Vec<Contact>,
    frame: u64,
}

impl Solver {
    pub fn new(config: SolverConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            params: ConstraintParams::from_config(&config)?,
            config,
            neighbors: NeighborLists::default(),
            contacts: Vec::new(),
            frame: 0,
        })
    }

    pub fn config(&self) -> &SolverConfig {
        &self.config
    }

    pub fn params(&self) -> &ConstraintParams {
        &self.params
    }

    pub fn neighbors(&self) -> &NeighborLists {
        &self.neighbors
    }

    pub fn contacts(&self) -> &[Contact] {
        &self.contacts
    }

    pub fn frame(&self) -> u64 {
        self.frame
    }

    /// Assigns this frame's levels: `n_max` everywhere in PBF mode, the
    /// camera-driven levels in APBF mode. Without a LOD setup the existing
    /// levels are kept (clamped into the range).
    pub fn assign_levels(&self, state: &mut ParticleSet, lod: Option<&LodSetup>) -> Result<()> {
        let range = self.config.range;
        match (self.config.mode, lod) {
            (SolverMode::Pbf, _) => state.set_uniform_level(range.n_max()),
            (SolverMode::Apbf, Some(setup)) => {
                let mut cfg = setup.config;
                cfg.range = range;
                state.level = compute_levels(
                    &state.position,
                    &setup.cameras,
                    &cfg,
                    self.config.particle_radius,
                )?;
            }
            (SolverMode::Apbf, None) => state.level.iter_mut().for_each(|l| *l = range.clamp(*l)),
        }
        Ok(())
    }

    /// Applies gravity and predicts positions.
    pub fn predict(&self, state: &mut ParticleSet) {
        let dt = self.config.substep_dt();
        let g = self.config.gravity;
        state
            .velocity
            .par_iter_mut()
            .zip(state.predicted.par_iter_mut())
            .zip(state.position.par_iter())
            .for_each(|((v, xs), &x)| {
                *v += g * dt;
                *xs = x + *v * dt;
            });
    }

    /// Rebuilds the grid over the predicted positions (reordering `state`),
    /// the neighbor lists and the contact list.
    pub fn find_neighbors_and_contacts(
        &mut self,
        state: &mut ParticleSet,
        scene: &SdfScene,
    ) -> Result<()> {
        let h = self.config.h;
        let grid = UniformGrid::build_and_reorder(state, h, h)?;
        self.neighbors = NeighborLists::build(&grid, &state.predicted);
        self.contacts = find_contacts(scene, &state.predicted, self.config.particle_radius);
        Ok(())
    }

    /// Contact projection for the particles that leave the solver before
    /// iteration `stab_threshold`. Returns the number of corrections.
    pub fn prestabilize(&self, state: &mut ParticleSet, scene: &SdfScene) -> usize {
        let subset = finished_set(&state.level, self.config.stab_threshold);
        prestabilize(
            state,
            scene,
            &self.contacts,
            &subset,
            self.config.particle_radius,
            self.config.stab_iterations,
        )
    }

    /// The adaptive Jacobi loop. Returns the number of per-particle iterations.
    pub fn solve(&self, state: &mut ParticleSet, scene: &SdfScene) -> Result<u64> {
        let cfg = &self.config;
        let params = &self.params;
        let radius = cfg.particle_radius;
        let mut active: Vec<usize> = (0..state.len()).collect();
        let mut total = 0u64;

        for iter in 1..=cfg.range.n_max() {
            active.retain(|&i| state.level[i] >= iter);
            if active.is_empty() {
                break;
            }
            if cfg.inactive_lambda == InactiveLambda::Zero && iter > 1 {
                for (l, &lv) in state.lambda.iter_mut().zip(&state.level) {
                    if lv == iter - 1 {
                        *l = 0.0;
                    }
                }
            }
            total += active.len() as u64;

            let lambdas: Vec<f64> = active
                .par_iter()
                .map(|&i| {
                    let nb = self.neighbors.of(i);
                    let rho = compute_density(i, nb, &state.mass, &state.predicted, &params.kernel);
                    compute_lambda(i, rho, nb, &state.inv_mass, &state.predicted, params)
                })
                .collect();
            for (&i, l) in active.iter().zip(lambdas) {
                state.lambda[i] = l;
            }

            let corrected: Vec<DVec3> = active
                .par_iter()
                .map(|&i| {
                    let nb = self.neighbors.of(i);
                    let dp = compute_delta_p(
                        i,
                        nb,
                        &state.lambda,
                        &state.inv_mass,
                        &state.predicted,
                        params,
                    );
                    scene.project(state.predicted[i] + dp, radius)
                })
                .collect();
            for (&i, p) in active.iter().zip(corrected) {
                state.predicted[i] = p;
            }
        }
        check_finite(state, "solve")?;
        Ok(total)
    }

    /// Velocity from the corrected prediction, clamped, and position commit.
    pub fn finalize(&self, state: &mut ParticleSet) -> Result<()> {
        let inv_dt = 1.0 / self.config.substep_dt();
        let cap = self.config.effective_velocity_cap();
        state
            .velocity
            .par_iter_mut()
            .zip(state.position.par_iter_mut())
            .zip(state.predicted.par_iter())
            .for_each(|((v, x), &xs)| {
                let mut nv = (xs - *x) * inv_dt;
                let speed = nv.length();
                if speed > cap {
                    nv *= cap / speed;
                }
                *v = nv;
                *x = xs;
            });
        check_finite(state, "finalize")
    }

    pub fn substep(&mut self, state: &mut ParticleSet, scene: &SdfScene) -> Result<SubstepStats> {
        self.predict(state);
        check_finite(state, "predict")?;
        self.find_neighbors_and_contacts(state, scene)?;
        let prestabilized = self.prestabilize(state, scene);
        check_finite(state, "prestabilize")?;
        let iterations = self.solve(state, scene)?;
        self.finalize(state)?;
        Ok(SubstepStats {
            iterations,
            contacts: self.contacts.len() as u64,
            prestabilized: prestabilized as u64,
        })
    }

    /// Advances one frame: level assignment, then every substep.
    /// Density statistics are computed afterwards and are not part of `wall_time`.
    pub fn step_frame(
        &mut self,
        state: &mut ParticleSet,
        scene: &SdfScene,
        lod: Option<&LodSetup>,
    ) -> Result<FrameStats> {
        let start = Instant::now();
        self.assign_levels(state, lod)?;
        let mut stats = FrameStats {
            frame: self.frame,
            ..Default::default()
        };
        for _ in 0..self.config.substeps {
            let s = self.substep(state, scene)?;
            stats.total_iterations += s.iterations;
            stats.contacts += s.contacts;
            stats.prestabilized += s.prestabilized;
        }
        stats.wall_time = start.elapsed();
        self.frame += 1;

        let densities = compute_densities(&state.position, &state.mass, self.config.h)?;
        let (avg, lo, hi) = density_summary(&densities, self.config.rest_density);
        stats.avg_density_pct = avg;
        stats.min_density_pct = lo;
        stats.max_density_pct = hi;
        Ok(stats)
    }
}
