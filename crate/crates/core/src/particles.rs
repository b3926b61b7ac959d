//! Structure-of-arrays particle storage and the per-particle LOD set algebra.
//!
//! A particle's level is its iteration budget: it takes part in solver
//! iterations `1..=level` and is frozen afterwards. `P_l` is the set of
//! particles still active in iteration `l`, `P̂_l` the ones that already
//! finished.

use std::io::{self, Write};

use glam::DVec3;
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Closed range of solver iterations `[n_min, n_max]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct IterationRange {
    n_min: u32,
    n_max: u32,
}

impl IterationRange {
    pub fn new(n_min: u32, n_max: u32) -> Result<Self> {
        if n_min < 1 || n_max < n_min {
            return Err(Error::InvalidParameter(format!(
                "iteration range requires 1 <= n_min <= n_max, got {{{n_min}..{n_max}}}"
            )));
        }
        Ok(Self { n_min, n_max })
    }

    /// `{n..n}`, the plain PBF configuration.
    pub fn uniform(n: u32) -> Result<Self> {
        Self::new(n, n)
    }

    #[inline]
    pub fn n_min(&self) -> u32 {
        self.n_min
    }

    #[inline]
    pub fn n_max(&self) -> u32 {
        self.n_max
    }

    #[inline]
    pub fn clamp(&self, level: u32) -> u32 {
        level.clamp(self.n_min, self.n_max)
    }

    #[inline]
    pub fn contains(&self, level: u32) -> bool {
        (self.n_min..=self.n_max).contains(&level)
    }
}

impl std::fmt::Display for IterationRange {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{{{}..{}}}", self.n_min, self.n_max)
    }
}

/// Whether a particle with `level` takes part in iteration `l` (1-based).
#[inline]
pub fn is_active(level: u32, l: u32) -> bool {
    level >= l
}

/// `P_l`: indices with `level >= l`, ascending.
pub fn active_set(levels: &[u32], l: u32) -> Vec<usize> {
    levels
        .iter()
        .enumerate()
        .filter(|&(_, &lv)| is_active(lv, l))
        .map(|(i, _)| i)
        .collect()
}

/// `P̂_l`: empty for `l <= 1`, otherwise `P_1 \ P_l`.
pub fn finished_set(levels: &[u32], l: u32) -> Vec<usize> {
    if l <= 1 {
        return Vec::new();
    }
    levels
        .iter()
        .enumerate()
        .filter(|&(_, &lv)| is_active(lv, 1) && !is_active(lv, l))
        .map(|(i, _)| i)
        .collect()
}

/// Fluid state. All arrays share the same length.
///
/// `id` holds each particle's spawn index; the solver reorders the arrays
/// every substep so that particles sharing a grid cell are contiguous.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParticleSet {
    pub position: Vec<DVec3>,
    pub predicted: Vec<DVec3>,
    pub velocity: Vec<DVec3>,
    pub mass: Vec<f64>,
    pub inv_mass: Vec<f64>,
    pub lambda: Vec<f64>,
    pub level: Vec<u32>,
    pub id: Vec<u32>,
}

impl ParticleSet {
    /// Particles at rest with uniform `mass`, all at level `range.n_max()`.
    pub fn new(positions: Vec<DVec3>, mass: f64, range: IterationRange) -> Result<Self> {
        if !(mass > 0.0) || !mass.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "mass must be > 0, got {mass}"
            )));
        }
        if let Some(i) = positions.iter().position(|p| !p.is_finite()) {
            return Err(Error::NonFinitePosition {
                particle: i,
                value: format!("{}", positions[i]),
            });
        }
        let n = positions.len();
        if n > u32::MAX as usize {
            return Err(Error::InvalidParameter(format!("too many particles: {n}")));
        }
        Ok(Self {
            predicted: positions.clone(),
            position: positions,
            velocity: vec![DVec3::ZERO; n],
            mass: vec![mass; n],
            inv_mass: vec![1.0 / mass; n],
            lambda: vec![0.0; n],
            level: vec![range.n_max(); n],
            id: (0..n as u32).collect(),
        })
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.position.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.position.is_empty()
    }

    /// Current array index of the particle spawned as `id`.
    pub fn index_of(&self, id: u32) -> Option<usize> {
        self.id.iter().position(|&x| x == id)
    }

    /// Gathers every array through `perm`: new slot `k` takes old index `perm[k]`.
    pub fn apply_permutation(&mut self, perm: &[u32]) {
        debug_assert_eq!(perm.len(), self.len());
        fn gather<T: Copy + Send + Sync>(src: &mut Vec<T>, perm: &[u32]) {
            let out: Vec<T> = perm.par_iter().map(|&k| src[k as usize]).collect();
            *src = out;
        }
        gather(&mut self.position, perm);
        gather(&mut self.predicted, perm);
        gather(&mut self.velocity, perm);
        gather(&mut self.mass, perm);
        gather(&mut self.inv_mass, perm);
        gather(&mut self.lambda, perm);
        gather(&mut self.level, perm);
        gather(&mut self.id, perm);
    }

    pub fn set_uniform_level(&mut self, level: u32) {
        self.level.iter_mut().for_each(|l| *l = level);
    }

    /// Checks the array-length, mass and level invariants.
    pub fn validate(&self, range: IterationRange) -> Result<()> {
        let n = self.len();
        let lens = [
            self.predicted.len(),
            self.velocity.len(),
            self.mass.len(),
            self.inv_mass.len(),
            self.lambda.len(),
            self.level.len(),
            self.id.len(),
        ];
        if lens.iter().any(|&l| l != n) {
            return Err(Error::InvalidParameter(
                "particle arrays differ in length".into(),
            ));
        }
        for i in 0..n {
            if !(self.mass[i] > 0.0) || self.inv_mass[i] != 1.0 / self.mass[i] {
                return Err(Error::InvalidParameter(format!("bad mass at particle {i}")));
            }
            if !range.contains(self.level[i]) {
                return Err(Error::InvalidParameter(format!(
                    "level {} of particle {i} outside {range}",
                    self.level[i]
                )));
            }
        }
        Ok(())
    }

    /// Writes one `x,y,z,level` record per particle, ordered by spawn id.
    pub fn write_snapshot_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.sort_unstable_by_key(|&i| self.id[i]);
        writeln!(out, "x,y,z,level")?;
        for i in order {
            let p = self.position[i];
            writeln!(out, "{},{},{},{}", p.x, p.y, p.z, self.level[i])?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn activity_examples() {
        assert!(is_active(3, 3));
        assert!(!is_active(3, 4));
        assert!(is_active(6, 1));
    }

    #[test]
    fn set_examples() {
        let levels = [3, 4, 6];
        assert_eq!(active_set(&levels, 4), vec![1, 2]);
        assert_eq!(active_set(&levels, 1), vec![0, 1, 2]);
        assert!(active_set(&levels, 7).is_empty());

        assert!(finished_set(&levels, 1).is_empty());
        assert_eq!(finished_set(&levels, 4), vec![0]);
        assert_eq!(finished_set(&levels, 7), vec![0, 1, 2]);
    }

    #[test]
    fn iteration_range_rejects_bad_bounds() {
        assert!(IterationRange::new(0, 3).is_err());
        assert!(IterationRange::new(4, 3).is_err());
        let r = IterationRange::new(3, 6).unwrap();
        assert_eq!(r.clamp(9), 6);
        assert_eq!(r.clamp(1), 3);
    }

    #[test]
    fn permutation_moves_every_array() {
        let range = IterationRange::new(1, 3).unwrap();
        let mut set = ParticleSet::new(vec![DVec3::X, DVec3::Y, DVec3::Z], 2.0, range).unwrap();
        set.level = vec![1, 2, 3];
        set.lambda = vec![0.1, 0.2, 0.3];
        set.apply_permutation(&[2, 0, 1]);
        assert_eq!(set.position, vec![DVec3::Z, DVec3::X, DVec3::Y]);
        assert_eq!(set.level, vec![3, 1, 2]);
        assert_eq!(set.lambda, vec![0.3, 0.1, 0.2]);
        assert_eq!(set.id, vec![2, 0, 1]);
        assert_eq!(set.index_of(0), Some(1));
        set.validate(range).unwrap();
    }

    #[test]
    fn rejects_non_finite_spawn() {
        let range = IterationRange::uniform(2).unwrap();
        let err = ParticleSet::new(vec![DVec3::ZERO, DVec3::splat(f64::NAN)], 1.0, range);
        assert!(matches!(
            err,
            Err(Error::NonFinitePosition { particle: 1, .. })
        ));
        assert!(ParticleSet::new(vec![DVec3::ZERO], 0.0, range).is_err());
    }

    #[test]
    fn snapshot_is_sorted_by_id() {
        let range = IterationRange::uniform(2).unwrap();
        let mut set =
            ParticleSet::new(vec![DVec3::new(1.0, 2.0, 3.0), DVec3::ZERO], 1.0, range).unwrap();
        set.apply_permutation(&[1, 0]);
        let mut buf = Vec::new();
        set.write_snapshot_csv(&mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "x,y,z,level\n1,2,3,2\n0,0,0,2\n"
        );
    }

    proptest! {
        #[test]
        fn active_sets_are_nested(levels in prop::collection::vec(1u32..12, 0..64), l in 1u32..14) {
            let outer = active_set(&levels, l);
            for i in active_set(&levels, l + 1) {
                prop_assert!(outer.binary_search(&i).is_ok());
            }
        }

        #[test]
        fn active_and_finished_partition_everything(levels in prop::collection::vec(1u32..12, 0..64), l in 1u32..14) {
            let active = active_set(&levels, l);
            let finished = finished_set(&levels, l);
            let mut union: Vec<usize> = active.iter().chain(finished.iter()).copied().collect();
            union.sort_unstable();
            prop_assert_eq!(union.len(), active.len() + finished.len());
            prop_assert_eq!(union, active_set(&levels, 1));
        }

        #[test]
        fn exit_is_monotone(level in 1u32..20, l in 1u32..20, extra in 0u32..10) {
            if !is_active(level, l) {
                prop_assert!(!is_active(level, l + extra));
            }
        }
    }
}
