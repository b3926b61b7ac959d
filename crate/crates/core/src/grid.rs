//! Fixed-radius neighbor search on a uniform grid built by counting sort.
//!
//! The cell size equals the query radius, so the neighbors of a particle are
//! always within the 27 cells around its own. Cells are linearised x-fastest,
//! which makes the three x-adjacent cells of a row one contiguous slot range.

use glam::DVec3;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::particles::ParticleSet;

const MAX_CELLS: usize = 1 << 27;

#[derive(Clone, Debug, PartialEq)]
pub struct UniformGrid {
    cell_size: f64,
    inv_cell_size: f64,
    domain_min: DVec3,
    domain_max: DVec3,
    dims: [usize; 3],
    cell_counts: Vec<u32>,
    cell_starts: Vec<u32>,
    sorted_permutation: Vec<u32>,
    // After the particle arrays have been reordered, slot k holds particle k.
    reordered: bool,
}

impl UniformGrid {
    /// Bins `positions` into cells of size `h`. The grid spans the particle
    /// AABB grown by `padding` on every side.
    pub fn build(positions: &[DVec3], h: f64, padding: f64) -> Result<Self> {
        if !(h > 0.0) || !h.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "cell size must be > 0, got {h}"
            )));
        }
        if !(padding >= 0.0) || !padding.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "padding must be >= 0, got {padding}"
            )));
        }
        if let Some(i) = positions.iter().position(|p| !p.is_finite()) {
            return Err(Error::NonFinitePosition {
                particle: i,
                value: format!("{}", positions[i]),
            });
        }

        let (lo, hi) = if positions.is_empty() {
            (DVec3::ZERO, DVec3::ZERO)
        } else {
            positions
                .iter()
                .fold((DVec3::INFINITY, DVec3::NEG_INFINITY), |(lo, hi), &p| {
                    (lo.min(p), hi.max(p))
                })
        };
        let domain_min = lo - DVec3::splat(padding);
        let domain_max = hi + DVec3::splat(padding);
        let inv = 1.0 / h;
        let extent = (domain_max - domain_min) * inv;
        let dims = [
            extent.x.floor() as usize + 1,
            extent.y.floor() as usize + 1,
            extent.z.floor() as usize + 1,
        ];
        let cells = dims[0]
            .checked_mul(dims[1])
            .and_then(|v| v.checked_mul(dims[2]))
            .filter(|&c| c <= MAX_CELLS)
            .ok_or_else(|| {
                Error::InvalidParameter(format!(
                    "grid of {dims:?} cells is too large; check for runaway particles"
                ))
            })?;

        let mut grid = Self {
            cell_size: h,
            inv_cell_size: inv,
            domain_min,
            domain_max,
            dims,
            cell_counts: vec![0; cells],
            cell_starts: vec![0; cells + 1],
            sorted_permutation: vec![0; positions.len()],
            reordered: false,
        };

        let cell_of: Vec<u32> = positions
            .par_iter()
            .map(|&p| grid.linear_cell(grid.cell_coords(p)) as u32)
            .collect();
        for &c in &cell_of {
            grid.cell_counts[c as usize] += 1;
        }
        let mut acc = 0u32;
        for (c, &count) in grid.cell_counts.iter().enumerate() {
            grid.cell_starts[c] = acc;
            acc += count;
        }
        grid.cell_starts[cells] = acc;

        let mut cursor = grid.cell_starts[..cells].to_vec();
        for (i, &c) in cell_of.iter().enumerate() {
            let slot = &mut cursor[c as usize];
            grid.sorted_permutation[*slot as usize] = i as u32;
            *slot += 1;
        }
        Ok(grid)
    }

    /// Builds over the predicted positions and reorders every particle array
    /// so that particles in the same cell are stored contiguously.
    pub fn build_and_reorder(set: &mut ParticleSet, h: f64, padding: f64) -> Result<Self> {
        let mut grid = Self::build(&set.predicted, h, padding)?;
        set.apply_permutation(&grid.sorted_permutation);
        grid.reordered = true;
        Ok(grid)
    }

    #[inline]
    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    pub fn domain(&self) -> (DVec3, DVec3) {
        (self.domain_min, self.domain_max)
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn cell_counts(&self) -> &[u32] {
        &self.cell_counts
    }

    /// Exclusive prefix sum of `cell_counts`, with the particle count appended.
    pub fn cell_starts(&self) -> &[u32] {
        &self.cell_starts
    }

    /// `sorted_permutation()[k]` is the original index of the particle in slot `k`.
    pub fn sorted_permutation(&self) -> &[u32] {
        &self.sorted_permutation
    }

    pub fn len(&self) -> usize {
        self.sorted_permutation.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted_permutation.is_empty()
    }

    /// Integer cell coordinates of `p`, clamped into the grid.
    pub fn cell_coords(&self, p: DVec3) -> [usize; 3] {
        let c = ((p - self.domain_min) * self.inv_cell_size).floor();
        let clamp = |v: f64, d: usize| (v.max(0.0) as usize).min(d - 1);
        [
            clamp(c.x, self.dims[0]),
            clamp(c.y, self.dims[1]),
            clamp(c.z, self.dims[2]),
        ]
    }

    #[inline]
    fn linear_cell(&self, c: [usize; 3]) -> usize {
        c[0] + self.dims[0] * (c[1] + self.dims[1] * c[2])
    }

    #[inline]
    fn slot_index(&self, slot: usize) -> usize {
        if self.reordered {
            slot
        } else {
            self.sorted_permutation[slot] as usize
        }
    }

    /// Calls `f(j)` for every particle with `|positions[j] - p| < h`.
    /// `positions` must be the array the grid was built over (after reordering,
    /// the reordered one).
    #[inline]
    pub fn for_each_neighbor(&self, positions: &[DVec3], p: DVec3, mut f: impl FnMut(usize)) {
        let r2 = self.cell_size * self.cell_size;
        let c = ((p - self.domain_min) * self.inv_cell_size).floor();
        let range = |v: f64, d: usize| -> Option<(usize, usize)> {
            let lo = v - 1.0;
            let hi = v + 1.0;
            if hi < 0.0 || lo > (d - 1) as f64 {
                return None;
            }
            Some((lo.max(0.0) as usize, (hi as usize).min(d - 1)))
        };
        let (Some((x0, x1)), Some((y0, y1)), Some((z0, z1))) = (
            range(c.x, self.dims[0]),
            range(c.y, self.dims[1]),
            range(c.z, self.dims[2]),
        ) else {
            return;
        };
        for z in z0..=z1 {
            for y in y0..=y1 {
                let row = self.dims[0] * (y + self.dims[1] * z);
                let start = self.cell_starts[row + x0] as usize;
                let end = self.cell_starts[row + x1 + 1] as usize;
                for slot in start..end {
                    let j = self.slot_index(slot);
                    if (positions[j] - p).length_squared() < r2 {
                        f(j);
                    }
                }
            }
        }
    }

    /// Neighbor lists of the particles in cell layer `z` of a reordered grid,
    /// in slot order. Candidates of a cell are gathered once and shared by
    /// every particle in it.
    fn layer_lists(&self, positions: &[DVec3], z: usize) -> (Vec<u32>, Vec<u32>) {
        let [dx, dy, dz] = self.dims;
        let r2 = self.cell_size * self.cell_size;
        let first = self.cell_starts[dx * dy * z] as usize;
        let last = self.cell_starts[dx * dy * (z + 1)] as usize;
        let mut counts = Vec::with_capacity(last - first);
        let mut idx = Vec::with_capacity((last - first) * 40);
        let (mut cx, mut cy, mut cz, mut cj) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        let mut buf = Vec::new();
        for y in 0..dy {
            for x in 0..dx {
                let cell = x + dx * (y + dy * z);
                let (start, end) = (
                    self.cell_starts[cell] as usize,
                    self.cell_starts[cell + 1] as usize,
                );
                if start == end {
                    continue;
                }
                cx.clear();
                cy.clear();
                cz.clear();
                cj.clear();
                let (x0, x1) = (x.saturating_sub(1), (x + 1).min(dx - 1));
                for zz in z.saturating_sub(1)..=(z + 1).min(dz - 1) {
                    for yy in y.saturating_sub(1)..=(y + 1).min(dy - 1) {
                        let row = dx * (yy + dy * zz);
                        let lo = self.cell_starts[row + x0] as usize;
                        let hi = self.cell_starts[row + x1 + 1] as usize;
                        for (j, q) in positions[lo..hi].iter().enumerate() {
                            cx.push(q.x);
                            cy.push(q.y);
                            cz.push(q.z);
                            cj.push((lo + j) as u32);
                        }
                    }
                }
                buf.resize(cj.len(), 0);
                for p in &positions[start..end] {
                    let mut n = 0;
                    for k in 0..cj.len() {
                        let (ex, ey, ez) = (cx[k] - p.x, cy[k] - p.y, cz[k] - p.z);
                        buf[n] = cj[k];
                        n += (ex * ex + ey * ey + ez * ez < r2) as usize;
                    }
                    idx.extend_from_slice(&buf[..n]);
                    counts.push(n as u32);
                }
            }
        }
        (counts, idx)
    }

    /// `N_i`: all `j` with `|x_i - x_j| < h`, including `i` itself.
    pub fn neighbors(&self, positions: &[DVec3], i: usize) -> Result<Vec<usize>> {
        if i >= positions.len() || i >= self.len() {
            return Err(Error::InvalidIndex {
                index: i,
                len: self.len().min(positions.len()),
            });
        }
        let mut out = Vec::new();
        self.for_each_neighbor(positions, positions[i], |j| out.push(j));
        Ok(out)
    }
}

/// Neighbor lists of every particle in compressed-row form.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct NeighborLists {
    offsets: Vec<u32>,
    indices: Vec<u32>,
}

const BLOCK: usize = 256;

impl NeighborLists {
    pub fn build(grid: &UniformGrid, positions: &[DVec3]) -> Self {
        let blocks: Vec<(Vec<u32>, Vec<u32>)> = if grid.reordered {
            (0..grid.dims[2])
                .into_par_iter()
                .map(|z| grid.layer_lists(positions, z))
                .collect()
        } else {
            (0..positions.len().div_ceil(BLOCK))
                .into_par_iter()
                .map(|b| {
                    let lo = b * BLOCK;
                    let hi = (lo + BLOCK).min(positions.len());
                    let mut counts = Vec::with_capacity(hi - lo);
                    let mut idx = Vec::with_capacity((hi - lo) * 40);
                    for &p in &positions[lo..hi] {
                        let before = idx.len();
                        grid.for_each_neighbor(positions, p, |j| idx.push(j as u32));
                        counts.push((idx.len() - before) as u32);
                    }
                    (counts, idx)
                })
                .collect()
        };

        let total: usize = blocks.iter().map(|(_, idx)| idx.len()).sum();
        let mut offsets = Vec::with_capacity(positions.len() + 1);
        let mut indices = Vec::with_capacity(total);
        offsets.push(0u32);
        for (counts, idx) in blocks {
            for c in counts {
                let last = *offsets.last().unwrap();
                offsets.push(last + c);
            }
            indices.extend_from_slice(&idx);
        }
        Self { offsets, indices }
    }

    #[inline]
    pub fn of(&self, i: usize) -> &[u32] {
        &self.indices[self.offsets[i] as usize..self.offsets[i + 1] as usize]
    }

    pub fn len(&self) -> usize {
        self.offsets.len().saturating_sub(1)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn total_pairs(&self) -> usize {
        self.indices.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::particles::IterationRange;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute_force(positions: &[DVec3], i: usize, h: f64) -> Vec<usize> {
        (0..positions.len())
            .filter(|&j| (positions[i] - positions[j]).length_squared() < h * h)
            .collect()
    }

    fn random_positions(n: usize, extent: f64, seed: u64) -> Vec<DVec3> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                DVec3::new(
                    rng.gen::<f64>() * extent,
                    rng.gen::<f64>() * extent,
                    rng.gen::<f64>() * extent,
                )
            })
            .collect()
    }

    #[test]
    fn singleton() {
        let grid = UniformGrid::build(&[DVec3::ZERO], 1.0, 1.0).unwrap();
        assert_eq!(grid.cell_counts().iter().filter(|&&c| c > 0).count(), 1);
        assert_eq!(grid.sorted_permutation(), &[0]);
        assert_eq!(grid.neighbors(&[DVec3::ZERO], 0).unwrap(), vec![0]);
    }

    #[test]
    fn integer_binning() {
        let p = [DVec3::ZERO, DVec3::new(2.5, 0.0, 0.0)];
        let grid = UniformGrid::build(&p, 1.0, 0.0).unwrap();
        assert_eq!(grid.cell_coords(p[0])[0], 0);
        assert_eq!(grid.cell_coords(p[1])[0], 2);
    }

    #[test]
    fn counts_are_conserved() {
        let p = random_positions(1000, 1.0, 7);
        let grid = UniformGrid::build(&p, 0.1, 0.1).unwrap();
        let sum: u32 = grid.cell_counts().iter().sum();
        assert_eq!(sum, 1000);
        assert_eq!(*grid.cell_starts().last().unwrap(), 1000);
        assert!(grid.cell_starts().windows(2).all(|w| w[0] <= w[1]));
        let mut perm = grid.sorted_permutation().to_vec();
        perm.sort_unstable();
        assert_eq!(perm, (0..1000).collect::<Vec<u32>>());
    }

    #[test]
    fn small_neighbor_example() {
        let p = [
            DVec3::ZERO,
            DVec3::new(0.5, 0.0, 0.0),
            DVec3::new(2.0, 0.0, 0.0),
        ];
        let grid = UniformGrid::build(&p, 1.0, 1.0).unwrap();
        let mut n = grid.neighbors(&p, 0).unwrap();
        n.sort_unstable();
        assert_eq!(n, vec![0, 1]);
        assert!(matches!(
            grid.neighbors(&p, 3),
            Err(Error::InvalidIndex { .. })
        ));
    }

    #[test]
    fn exact_radius_is_excluded() {
        let p = [DVec3::ZERO, DVec3::new(0.0, 1.0, 0.0)];
        let grid = UniformGrid::build(&p, 1.0, 1.0).unwrap();
        assert_eq!(grid.neighbors(&p, 0).unwrap(), vec![0]);
    }

    #[test]
    fn matches_brute_force() {
        let p: Vec<DVec3> = random_positions(500, 2.0, 11);
        let grid = UniformGrid::build(&p, 0.3, 0.3).unwrap();
        for i in 0..p.len() {
            let mut n = grid.neighbors(&p, i).unwrap();
            n.sort_unstable();
            assert_eq!(n, brute_force(&p, i, 0.3), "particle {i}");
        }
    }

    #[test]
    fn neighbor_lists_after_reorder_match_brute_force() {
        let p = random_positions(800, 1.5, 3);
        let range = IterationRange::uniform(1).unwrap();
        let mut set = ParticleSet::new(p, 1.0, range).unwrap();
        let grid = UniformGrid::build_and_reorder(&mut set, 0.2, 0.2).unwrap();
        let lists = NeighborLists::build(&grid, &set.predicted);
        assert_eq!(lists.len(), set.len());
        for i in 0..set.len() {
            let mut n: Vec<usize> = lists.of(i).iter().map(|&j| j as usize).collect();
            n.sort_unstable();
            assert_eq!(n, brute_force(&set.predicted, i, 0.2));
        }
        // Same cell ⇒ contiguous storage.
        let cells: Vec<usize> = set
            .predicted
            .iter()
            .map(|&q| grid.linear_cell(grid.cell_coords(q)))
            .collect();
        assert!(cells.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn rebuild_is_idempotent() {
        let p = random_positions(300, 1.0, 5);
        let a = UniformGrid::build(&p, 0.15, 0.15).unwrap();
        let b = UniformGrid::build(&p, 0.15, 0.15).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_non_finite() {
        let p = [DVec3::ZERO, DVec3::new(f64::INFINITY, 0.0, 0.0)];
        match UniformGrid::build(&p, 1.0, 1.0) {
            Err(Error::NonFinitePosition { particle, .. }) => assert_eq!(particle, 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_input() {
        let grid = UniformGrid::build(&[], 1.0, 1.0).unwrap();
        assert!(grid.is_empty());
        let lists = NeighborLists::build(&grid, &[]);
        assert!(lists.is_empty());
    }

    #[test]
    fn queries_outside_domain_are_empty() {
        let p = [DVec3::ZERO];
        let grid = UniformGrid::build(&p, 1.0, 0.0).unwrap();
        let mut hits = 0;
        grid.for_each_neighbor(&p, DVec3::splat(50.0), |_| hits += 1);
        assert_eq!(hits, 0);
    }
}
