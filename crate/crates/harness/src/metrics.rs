//! Per-frame metrics CSV and run comparison.

use std::io::{BufRead, Write};
use std::path::Path;

use apbf_core::{solver::density_summary, FrameStats, ParticleSet, SolverConfig};

use crate::error::{HarnessError, Result};

pub const COLUMNS: &str =
    "frame,time_ms,avg_density_pct,min_density_pct,max_density_pct,total_iterations,contacts";

/// Default tolerance for `compare`, in percentage points of the rest density.
pub const DEFAULT_TOLERANCE_PCT: f64 = 4.0;

/// `100·Σρ_i / (n·ρ0)` at the current positions.
pub fn avg_density_pct(state: &ParticleSet, config: &SolverConfig) -> Result<f64> {
    let rho = apbf_core::compute_densities(&state.position, &state.mass, config.h)?;
    Ok(avg_density_pct_of(&rho, config.rest_density))
}

pub fn avg_density_pct_of(densities: &[f64], rest_density: f64) -> f64 {
    density_summary(densities, rest_density).0
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub frame: u64,
    pub time_ms: f64,
    pub avg_density_pct: f64,
    pub min_density_pct: f64,
    pub max_density_pct: f64,
    pub total_iterations: u64,
    pub contacts: u64,
}

impl MetricsRow {
    /// `time_ms` is zeroed when `zero_time` is set, which keeps repeated
    /// deterministic runs byte-identical.
    pub fn from_stats(s: &FrameStats, zero_time: bool) -> Self {
        Self {
            frame: s.frame,
            time_ms: if zero_time {
                0.0
            } else {
                s.wall_time.as_secs_f64() * 1e3
            },
            avg_density_pct: s.avg_density_pct,
            min_density_pct: s.min_density_pct,
            max_density_pct: s.max_density_pct,
            total_iterations: s.total_iterations,
            contacts: s.contacts,
        }
    }

    pub fn write<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(
            out,
            "{},{:.3},{:.9},{:.9},{:.9},{},{}",
            self.frame,
            self.time_ms,
            self.avg_density_pct,
            self.min_density_pct,
            self.max_density_pct,
            self.total_iterations,
            self.contacts
        )
    }
}

/// Writes the `#` header block followed by the column line.
pub fn write_header<W: Write>(mut out: W, header: &[(String, String)]) -> std::io::Result<()> {
    for (k, v) in header {
        writeln!(out, "# {k} = {v}")?;
    }
    writeln!(out, "{COLUMNS}")
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsFile {
    pub header: Vec<(String, String)>,
    pub rows: Vec<MetricsRow>,
}

impl MetricsFile {
    pub fn header_value(&self, key: &str) -> Option<&str> {
        self.header
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| HarnessError::io(path, e))?;
        Self::parse(std::io::BufReader::new(file), &path.display().to_string())
    }

    pub fn parse<R: BufRead>(input: R, path: &str) -> Result<Self> {
        let bad = |line: usize, message: String| HarnessError::Metrics {
            path: path.to_string(),
            message: format!("line {line}: {message}"),
        };
        let mut header = Vec::new();
        let mut rows = Vec::new();
        let mut seen_columns = false;
        for (idx, line) in input.lines().enumerate() {
            let line_no = idx + 1;
            let line = line.map_err(|e| HarnessError::io(path, e))?;
            if let Some(rest) = line.strip_prefix('#') {
                if let Some((k, v)) = rest.split_once('=') {
                    header.push((k.trim().to_string(), v.trim().to_string()));
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            if !seen_columns {
                if line.trim() != COLUMNS {
                    return Err(bad(line_no, format!("expected column line `{COLUMNS}`")));
                }
                seen_columns = true;
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 7 {
                return Err(bad(line_no, format!("expected 7 fields, got {}", f.len())));
            }
            let num = |i: usize| -> Result<f64> {
                f[i].trim()
                    .parse()
                    .map_err(|_| bad(line_no, format!("bad number `{}`", f[i])))
            };
            let int = |i: usize| -> Result<u64> {
                f[i].trim()
                    .parse()
                    .map_err(|_| bad(line_no, format!("bad integer `{}`", f[i])))
            };
            rows.push(MetricsRow {
                frame: int(0)?,
                time_ms: num(1)?,
                avg_density_pct: num(2)?,
                min_density_pct: num(3)?,
                max_density_pct: num(4)?,
                total_iterations: int(5)?,
                contacts: int(6)?,
            });
        }
        if !seen_columns {
            return Err(bad(0, "no column line".into()));
        }
        Ok(Self { header, rows })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Comparison {
    /// `|avg_ref − avg_test|` per frame.
    pub differences: Vec<f64>,
    pub max_difference: f64,
    /// Frame of the largest difference.
    pub worst_frame: u64,
    pub tolerance: f64,
    pub pass: bool,
}

/// Compares the average-density series of two runs of the same scene.
pub fn compare_runs(
    reference: &MetricsFile,
    test: &MetricsFile,
    tolerance: f64,
) -> Result<Comparison> {
    if !(tolerance >= 0.0) {
        return Err(HarnessError::Usage(format!(
            "tolerance must be >= 0, got {tolerance}"
        )));
    }
    let (hr, ht) = (
        reference.header_value("scenario_hash"),
        test.header_value("scenario_hash"),
    );
    if hr != ht {
        return Err(HarnessError::Mismatch(format!(
            "scenario hash {} vs {}",
            hr.unwrap_or("<missing>"),
            ht.unwrap_or("<missing>")
        )));
    }
    if reference.rows.len() != test.rows.len() {
        return Err(HarnessError::Mismatch(format!(
            "{} frames vs {} frames",
            reference.rows.len(),
            test.rows.len()
        )));
    }
    let differences: Vec<f64> = reference
        .rows
        .iter()
        .zip(&test.rows)
        .map(|(a, b)| (a.avg_density_pct - b.avg_density_pct).abs())
        .collect();
    let (worst, max) =
        differences.iter().enumerate().fold(
            (0, 0.0f64),
            |(wi, wm), (i, &d)| if d > wm { (i, d) } else { (wi, wm) },
        );
    Ok(Comparison {
        worst_frame: reference.rows.get(worst).map_or(0, |r| r.frame),
        max_difference: max,
        pass: max < tolerance,
        tolerance,
        differences,
    })
}
