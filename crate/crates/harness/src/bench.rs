//! Timing several solver configurations on one scene.

use std::fmt;
use std::str::FromStr;

use apbf_core::{LodModel, SolverMode};

use crate::error::{HarnessError, Result};
use crate::run::{median, Simulation};
use crate::scenario::ScenarioSpec;

/// `pbf`, `pbf:N`, `apbf`, `apbf:dtc` or `apbf:dtvs`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BenchMode {
    /// Fixed iteration count; `None` uses the scenario's `n_max`.
    Pbf(Option<u32>),
    /// Adaptive; `None` uses the scenario's level model.
    Apbf(Option<LodModel>),
}

impl FromStr for BenchMode {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        let (kind, arg) = match s.trim().split_once(':') {
            Some((k, a)) => (k, Some(a)),
            None => (s.trim(), None),
        };
        match (kind, arg) {
            ("pbf", None) => Ok(Self::Pbf(None)),
            ("pbf", Some(n)) => match n.parse::<u32>() {
                Ok(n) if n >= 1 => Ok(Self::Pbf(Some(n))),
                _ => Err(HarnessError::Usage(format!("bad iteration count in `{s}`"))),
            },
            ("apbf", None) => Ok(Self::Apbf(None)),
            ("apbf", Some(m)) => Ok(Self::Apbf(Some(m.parse().map_err(HarnessError::Core)?))),
            _ => Err(HarnessError::Usage(format!(
                "unknown mode `{s}` (expected pbf, pbf:N, apbf, apbf:dtc or apbf:dtvs)"
            ))),
        }
    }
}

impl fmt::Display for BenchMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Pbf(None) => f.write_str("pbf"),
            Self::Pbf(Some(n)) => write!(f, "pbf:{n}"),
            Self::Apbf(None) => f.write_str("apbf"),
            Self::Apbf(Some(m)) => write!(f, "apbf:{m}"),
        }
    }
}

pub fn parse_modes(list: &str) -> Result<Vec<BenchMode>> {
    let modes = list
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(str::parse)
        .collect::<Result<Vec<_>>>()?;
    if modes.is_empty() {
        return Err(HarnessError::Usage("no modes given".into()));
    }
    Ok(modes)
}

impl BenchMode {
    pub fn configure(&self, spec: &mut ScenarioSpec) -> Result<()> {
        match *self {
            Self::Pbf(n) => spec.set_mode(SolverMode::Pbf, n),
            Self::Apbf(m) => {
                if let Some(m) = m {
                    spec.set_lod_model(m);
                }
                spec.set_mode(SolverMode::Apbf, None)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchRow {
    pub mode: BenchMode,
    /// Iteration count of a PBF row (`None` for adaptive rows).
    pub pbf_iterations: Option<u32>,
    pub median_frame_ms: f64,
    /// Per-particle solver iterations of one repetition.
    pub total_iterations: u64,
    /// `(t_ref − t)/t` against the PBF row at the scenario's `n_max`.
    pub improvement_over_self: Option<f64>,
    /// `(t_ref − t)/t_ref` against the same reference.
    pub improvement_over_ref: Option<f64>,
}

/// Runs every mode `reps` times over `spec.frames` frames, all starting
/// from the same settled state. The modes advance in lockstep, one frame
/// each in turn, so slow drifts in machine load hit all of them alike.
pub fn bench(spec: &ScenarioSpec, modes: &[BenchMode], reps: u32) -> Result<Vec<BenchRow>> {
    if reps == 0 {
        return Err(HarnessError::Usage("reps must be >= 1".into()));
    }
    let n_max = spec.solver.range.n_max();
    spec.validate()?;
    let initial = spec.initial_state()?;
    let specs = modes
        .iter()
        .map(|m| {
            let mut s = spec.clone();
            m.configure(&mut s)?;
            Ok(s)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut times = vec![Vec::new(); modes.len()];
    let mut totals = vec![0u64; modes.len()];
    for rep in 0..reps {
        let mut sims = specs
            .iter()
            .map(|s| Simulation::with_state(s.clone(), initial.clone()))
            .collect::<Result<Vec<_>>>()?;
        for _ in 0..spec.frames {
            for (k, sim) in sims.iter_mut().enumerate() {
                let st = sim.step()?;
                times[k].push(st.wall_time.as_secs_f64() * 1e3);
                if rep == 0 {
                    totals[k] += st.total_iterations;
                }
            }
        }
    }
    let mut rows: Vec<BenchRow> = modes
        .iter()
        .zip(&specs)
        .zip(times.iter().zip(totals))
        .map(|((&mode, s), (t, total))| BenchRow {
            mode,
            pbf_iterations: (s.solver.mode == SolverMode::Pbf).then(|| s.solver.range.n_max()),
            median_frame_ms: median(t),
            total_iterations: total,
            improvement_over_self: None,
            improvement_over_ref: None,
        })
        .collect();
    let reference = rows
        .iter()
        .find(|r| r.pbf_iterations == Some(n_max))
        .map(|r| r.median_frame_ms);
    if let Some(t_ref) = reference {
        for r in rows.iter_mut().filter(|r| r.pbf_iterations != Some(n_max)) {
            let t = r.median_frame_ms;
            if t > 0.0 && t_ref > 0.0 {
                r.improvement_over_self = Some((t_ref - t) / t);
                r.improvement_over_ref = Some((t_ref - t) / t_ref);
            }
        }
    }
    Ok(rows)
}

/// Plain-text table of bench results.
pub fn format_table(rows: &[BenchRow], n_max: u32) -> String {
    let mut out = format!(
        "{:<12} {:>14} {:>18} {:>16} {:>16}\n",
        "mode", "median_ms", "total_iterations", "impr_vs_t_mode", "impr_vs_t_pbf"
    );
    let pct = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{:.1}%", 100.0 * x));
    for r in rows {
        out.push_str(&format!(
            "{:<12} {:>14.3} {:>18} {:>16} {:>16}\n",
            r.mode.to_string(),
            r.median_frame_ms,
            r.total_iterations,
            pct(r.improvement_over_self),
            pct(r.improvement_over_ref)
        ));
    }
    out.push_str(&format!(
        "improvements are relative to pbf:{n_max}; impr_vs_t_mode = (t_pbf - t)/t, impr_vs_t_pbf = (t_pbf - t)/t_pbf\n"
    ));
    out
}
