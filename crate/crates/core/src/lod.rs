//! Per-particle level of detail from camera information.
//!
//! Two distance measures are supported: the distance to the camera eye (DTC)
//! and the depth gap between a particle and the visible surface in front of
//! it along its camera ray (DTVS). Distances map linearly onto the iteration
//! range, near/visible particles getting the highest level.

use glam::DVec3;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::particles::IterationRange;
use crate::splat::{splat, Camera, DepthBuffer};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LodModel {
    /// Distance to camera.
    Dtc,
    /// Distance to the visible surface.
    Dtvs,
}

impl std::str::FromStr for LodModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "dtc" => Ok(Self::Dtc),
            "dtvs" => Ok(Self::Dtvs),
            other => Err(Error::InvalidParameter(format!(
                "unknown LOD model `{other}` (expected dtc or dtvs)"
            ))),
        }
    }
}

impl std::fmt::Display for LodModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Dtc => "dtc",
            Self::Dtvs => "dtvs",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LodModelConfig {
    pub model: LodModel,
    pub d_min: f64,
    pub d_max: f64,
    pub range: IterationRange,
    /// Take `d_min`/`d_max` from the 5th/95th percentile of each frame's distances.
    pub auto_range: bool,
}

/// Percentiles used when the distance range is resolved per frame.
pub const AUTO_RANGE_PERCENTILES: (f64, f64) = (0.05, 0.95);

impl LodModelConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.auto_range && !(self.d_min < self.d_max) {
            return Err(Error::InvalidParameter(format!(
                "LOD distance range requires d_min < d_max, got [{}, {}]",
                self.d_min, self.d_max
            )));
        }
        if !self.auto_range && !(self.d_min.is_finite() && self.d_max.is_finite()) {
            return Err(Error::InvalidParameter(
                "LOD distance range must be finite".into(),
            ));
        }
        Ok(())
    }

    #[inline]
    pub fn level_for(&self, d: f64) -> u32 {
        map_distance_to_level(d, self.d_min, self.d_max, self.range)
    }
}

/// Linear interpolation from `n_max` at `d <= d_min` to `n_min` at `d >= d_max`,
/// rounded half away from zero.
///
/// A collapsed range (`d_max <= d_min`, only reachable through automatic
/// ranges) degenerates to a step at `d_min`.
pub fn map_distance_to_level(d: f64, d_min: f64, d_max: f64, range: IterationRange) -> u32 {
    let (lo, hi) = (range.n_min() as f64, range.n_max() as f64);
    if !(d_max > d_min) {
        return if d <= d_min {
            range.n_max()
        } else {
            range.n_min()
        };
    }
    let t = ((d - d_min) / (d_max - d_min)).clamp(0.0, 1.0);
    let level = (hi + t * (lo - hi)).round();
    range.clamp(level as u32)
}

fn percentile_range(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let mut sorted = values.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    let at = |q: f64| sorted[((sorted.len() - 1) as f64 * q).round() as usize];
    (at(AUTO_RANGE_PERCENTILES.0), at(AUTO_RANGE_PERCENTILES.1))
}

fn resolve_range(cfg: &LodModelConfig, distances: &[f64]) -> (f64, f64) {
    if cfg.auto_range {
        percentile_range(distances)
    } else {
        (cfg.d_min, cfg.d_max)
    }
}

/// Levels from the Euclidean distance of each particle to the eye.
pub fn lod_dtc(positions: &[DVec3], camera: &Camera, cfg: &LodModelConfig) -> Result<Vec<u32>> {
    cfg.validate()?;
    let distances: Vec<f64> = positions
        .par_iter()
        .map(|p| p.distance(camera.eye))
        .collect();
    let (d_min, d_max) = resolve_range(cfg, &distances);
    Ok(distances
        .par_iter()
        .map(|&d| map_distance_to_level(d, d_min, d_max, cfg.range))
        .collect())
}

/// Depth gap of every particle behind the visible surface at its own pixel.
/// `None` marks particles that are off screen or behind the camera.
pub fn visible_surface_distances(
    positions: &[DVec3],
    camera: &Camera,
    radius: f64,
) -> Result<(Vec<Option<f64>>, DepthBuffer)> {
    let buffer = splat(positions, radius, camera)?;
    let view = camera.view();
    let gaps = positions
        .par_iter()
        .map(|&p| {
            let proj = view.project(p)?;
            let (x, y) = proj.pixel(camera.width, camera.height)?;
            let surface = buffer.depth[y as usize * camera.width as usize + x as usize];
            let d = (proj.distance - surface).max(0.0);
            // A particle always sees its own splat up to `radius` in front.
            Some(if d < radius { 0.0 } else { d })
        })
        .collect();
    Ok((gaps, buffer))
}

/// Levels from the distance to the visible surface. Off-screen particles get `n_min`.
pub fn lod_dtvs(
    positions: &[DVec3],
    camera: &Camera,
    cfg: &LodModelConfig,
    radius: f64,
) -> Result<Vec<u32>> {
    cfg.validate()?;
    let (gaps, _) = visible_surface_distances(positions, camera, radius)?;
    let on_screen: Vec<f64> = gaps.iter().flatten().copied().collect();
    let (d_min, d_max) = resolve_range(cfg, &on_screen);
    Ok(gaps
        .iter()
        .map(|g| match g {
            Some(d) => map_distance_to_level(*d, d_min, d_max, cfg.range),
            None => cfg.range.n_min(),
        })
        .collect())
}

/// Elementwise maximum over the per-camera level arrays.
pub fn blend_lod(levels: &[Vec<u32>]) -> Result<Vec<u32>> {
    let (first, rest) = levels.split_first().ok_or_else(|| {
        Error::InvalidParameter("blend_lod needs at least one level array".into())
    })?;
    let mut out = first.clone();
    for other in rest {
        if other.len() != out.len() {
            return Err(Error::InvalidParameter(format!(
                "level arrays differ in length: {} vs {}",
                out.len(),
                other.len()
            )));
        }
        out.iter_mut()
            .zip(other)
            .for_each(|(a, &b)| *a = (*a).max(b));
    }
    Ok(out)
}

/// Levels for every camera, blended.
pub fn compute_levels(
    positions: &[DVec3],
    cameras: &[Camera],
    cfg: &LodModelConfig,
    radius: f64,
) -> Result<Vec<u32>> {
    let per_camera = cameras
        .iter()
        .map(|cam| match cfg.model {
            LodModel::Dtc => lod_dtc(positions, cam, cfg),
            LodModel::Dtvs => lod_dtvs(positions, cam, cfg, radius),
        })
        .collect::<Result<Vec<_>>>()?;
    blend_lod(&per_camera)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn range() -> IterationRange {
        IterationRange::new(3, 6).unwrap()
    }

    fn cfg(model: LodModel, d_min: f64, d_max: f64) -> LodModelConfig {
        LodModelConfig {
            model,
            d_min,
            d_max,
            range: range(),
            auto_range: false,
        }
    }

    fn camera() -> Camera {
        Camera {
            eye: DVec3::ZERO,
            look_at: DVec3::new(0.0, 0.0, -1.0),
            up: DVec3::Y,
            vertical_fov: 60f64.to_radians(),
            width: 128,
            height: 128,
            near: 0.01,
        }
    }

    #[test]
    fn interpolation_examples() {
        let c = cfg(LodModel::Dtc, 1.0, 10.0);
        assert_eq!(c.level_for(1.0), 6);
        assert_eq!(c.level_for(10.0), 3);
        assert_eq!(c.level_for(5.5), 5);
        assert_eq!(c.level_for(-3.0), 6);
        assert_eq!(c.level_for(1e9), 3);
    }

    #[test]
    fn degenerate_fixed_range_is_rejected() {
        assert!(cfg(LodModel::Dtc, 2.0, 2.0).validate().is_err());
        assert!(cfg(LodModel::Dtc, 3.0, 2.0).validate().is_err());
        let mut auto = cfg(LodModel::Dtc, 0.0, 0.0);
        auto.auto_range = true;
        assert!(auto.validate().is_ok());
    }

    #[test]
    fn dtc_examples() {
        let c = cfg(LodModel::Dtc, 1.0, 10.0);
        let cam = camera();
        let levels = lod_dtc(&[cam.eye, DVec3::new(0.0, 0.0, -110.0)], &cam, &c).unwrap();
        assert_eq!(levels, vec![6, 3]);
    }

    #[test]
    fn dtc_is_monotone_along_a_line() {
        let c = cfg(LodModel::Dtc, 2.0, 30.0);
        let cam = camera();
        let p: Vec<DVec3> = (0..1000)
            .map(|i| DVec3::new(0.0, 0.0, -0.04 * i as f64))
            .collect();
        let levels = lod_dtc(&p, &cam, &c).unwrap();
        assert!(levels.windows(2).all(|w| w[0] >= w[1]));
        assert_eq!(levels[0], 6);
        assert_eq!(*levels.last().unwrap(), 3);
    }

    #[test]
    fn dtvs_visible_and_occluded() {
        let cam = camera();
        let c = cfg(LodModel::Dtvs, 0.0, 2.0);
        let r = 0.1;
        // Slab of particles 3 units in front of the probe particle.
        let mut p = Vec::new();
        for i in -10..=10 {
            for j in -10..=10 {
                p.push(DVec3::new(i as f64 * 0.1, j as f64 * 0.1, -5.0));
            }
        }
        p.push(DVec3::new(0.0, 0.0, -8.0));
        let levels = lod_dtvs(&p, &cam, &c, r).unwrap();
        let centre = 10 * 21 + 10;
        assert_eq!(levels[centre], 6);
        assert_eq!(*levels.last().unwrap(), 3);
    }

    #[test]
    fn dtvs_offscreen_gets_lowest_level() {
        let cam = camera();
        let c = cfg(LodModel::Dtvs, 0.0, 2.0);
        let levels = lod_dtvs(
            &[DVec3::new(0.0, 0.0, 5.0), DVec3::new(100.0, 0.0, -1.0)],
            &cam,
            &c,
            0.1,
        )
        .unwrap();
        assert_eq!(levels, vec![3, 3]);
    }

    #[test]
    fn auto_range_spreads_levels() {
        let mut c = cfg(LodModel::Dtc, 0.0, 0.0);
        c.auto_range = true;
        let cam = camera();
        let p: Vec<DVec3> = (0..200)
            .map(|i| DVec3::new(0.0, 0.0, -1.0 - i as f64 * 0.1))
            .collect();
        let levels = lod_dtc(&p, &cam, &c).unwrap();
        assert_eq!(levels[0], 6);
        assert_eq!(levels[199], 3);
        assert!(levels.contains(&4) && levels.contains(&5));
    }

    #[test]
    fn blending() {
        assert_eq!(blend_lod(&[vec![3, 6]]).unwrap(), vec![3, 6]);
        assert_eq!(blend_lod(&[vec![3, 6], vec![5, 4]]).unwrap(), vec![5, 6]);
        let a = vec![3, 4, 5, 6];
        assert_eq!(blend_lod(&[a.clone(), a.clone()]).unwrap(), a);
        assert!(blend_lod(&[vec![3], vec![3, 4]]).is_err());
        assert!(blend_lod(&[]).is_err());
    }

    #[test]
    fn model_parsing() {
        assert_eq!("DTVS".parse::<LodModel>().unwrap(), LodModel::Dtvs);
        assert_eq!("dtc".parse::<LodModel>().unwrap(), LodModel::Dtc);
        assert!("depth".parse::<LodModel>().is_err());
    }

    proptest! {
        #[test]
        fn levels_in_range_and_monotone(
            d in -10.0f64..50.0,
            step in 0.0f64..10.0,
            d_min in 0.0f64..5.0,
            spread in 0.01f64..20.0,
            n_min in 1u32..6,
            extra in 0u32..6,
        ) {
            let r = IterationRange::new(n_min, n_min + extra).unwrap();
            let a = map_distance_to_level(d, d_min, d_min + spread, r);
            let b = map_distance_to_level(d + step, d_min, d_min + spread, r);
            prop_assert!(r.contains(a) && r.contains(b));
            prop_assert!(b <= a);
        }
    }
}
