//! Static obstacles as signed distance functions, plus contact handling.
//!
//! Distances are negative inside solid material and positive in free space.
//! A particle of radius `r` is in contact when `φ(x) < r`.

use glam::{DVec2, DVec3};
use rayon::prelude::*;

use crate::particles::ParticleSet;

/// One obstacle shape.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SdfPrimitive {
    /// Free space is `normal · p >= offset`.
    HalfSpace {
        normal: DVec3,
        offset: f64,
    },
    /// Solid axis-aligned box.
    Box {
        min: DVec3,
        max: DVec3,
    },
    /// Axis-aligned container: free space is the inside of the box.
    Container {
        min: DVec3,
        max: DVec3,
    },
    Sphere {
        center: DVec3,
        radius: f64,
    },
    /// Solid upright cone standing on `base_center`, apex `height` above it (+y).
    Cone {
        base_center: DVec3,
        radius: f64,
        height: f64,
    },
}

impl SdfPrimitive {
    pub fn half_space(normal: DVec3, offset: f64) -> Self {
        Self::HalfSpace {
            normal: normal.normalize(),
            offset,
        }
    }

    pub fn distance(&self, p: DVec3) -> f64 {
        match *self {
            Self::HalfSpace { normal, offset } => normal.dot(p) - offset,
            Self::Box { min, max } => box_distance(p, min, max),
            Self::Container { min, max } => -box_distance(p, min, max),
            Self::Sphere { center, radius } => (p - center).length() - radius,
            Self::Cone {
                base_center,
                radius,
                height,
            } => {
                let d = p - base_center;
                let q = DVec2::new(DVec2::new(d.x, d.z).length(), d.y);
                triangle_distance(q, radius, height)
            }
        }
    }

    /// Unit outward gradient where a closed form exists.
    fn analytic_gradient(&self, p: DVec3) -> Option<DVec3> {
        match *self {
            Self::HalfSpace { normal, .. } => Some(normal),
            Self::Box { min, max } => Some(box_gradient(p, min, max)),
            Self::Container { min, max } => Some(-box_gradient(p, min, max)),
            Self::Sphere { center, .. } => Some((p - center).try_normalize().unwrap_or(DVec3::Y)),
            Self::Cone { .. } => None,
        }
    }
}

fn box_distance(p: DVec3, min: DVec3, max: DVec3) -> f64 {
    let center = (min + max) * 0.5;
    let half = (max - min) * 0.5;
    let q = (p - center).abs() - half;
    q.max(DVec3::ZERO).length() + q.max_element().min(0.0)
}

fn box_gradient(p: DVec3, min: DVec3, max: DVec3) -> DVec3 {
    let center = (min + max) * 0.5;
    let half = (max - min) * 0.5;
    let local = p - center;
    let q = local.abs() - half;
    let sign = DVec3::new(local.x.signum(), local.y.signum(), local.z.signum());
    let outside = q.max(DVec3::ZERO);
    if outside.length_squared() > 0.0 {
        return (outside * sign).normalize();
    }
    // Inside: the nearest face wins; ties go to the lowest axis.
    let axis = if q.x >= q.y && q.x >= q.z {
        0
    } else if q.y >= q.z {
        1
    } else {
        2
    };
    let mut g = DVec3::ZERO;
    g[axis] = sign[axis];
    g
}

/// Signed distance to the triangle (−r,0), (r,0), (0,h) in the (radial, y) plane.
fn triangle_distance(p: DVec2, r: f64, h: f64) -> f64 {
    let v = [DVec2::new(-r, 0.0), DVec2::new(r, 0.0), DVec2::new(0.0, h)];
    let mut d = (p - v[0]).length_squared();
    let mut s = 1.0;
    let mut j = 2;
    for i in 0..3 {
        let e = v[j] - v[i];
        let w = p - v[i];
        let b = w - e * (w.dot(e) / e.length_squared()).clamp(0.0, 1.0);
        d = d.min(b.length_squared());
        let c0 = p.y >= v[i].y;
        let c1 = p.y < v[j].y;
        let c2 = e.x * w.y > e.y * w.x;
        if (c0 && c1 && c2) || (!c0 && !c1 && !c2) {
            s = -s;
        }
        j = i;
    }
    s * d.sqrt()
}

/// The static obstacle set.
#[derive(Clone, Debug, PartialEq)]
pub struct SdfScene {
    pub primitives: Vec<SdfPrimitive>,
    /// Central-difference step for primitives without an analytic gradient.
    pub gradient_step: f64,
}

impl Default for SdfScene {
    fn default() -> Self {
        Self {
            primitives: Vec::new(),
            gradient_step: 1e-5,
        }
    }
}

impl SdfScene {
    pub fn new(primitives: Vec<SdfPrimitive>, gradient_step: f64) -> Self {
        Self {
            primitives,
            gradient_step,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.primitives.is_empty()
    }

    /// Minimum signed distance over all primitives and the unit gradient of
    /// the minimising one. An empty scene is infinitely far away.
    pub fn distance(&self, p: DVec3) -> (f64, DVec3) {
        let mut best = f64::INFINITY;
        let mut which = None;
        for prim in &self.primitives {
            let d = prim.distance(p);
            if d < best {
                best = d;
                which = Some(prim);
            }
        }
        let Some(prim) = which else {
            return (f64::INFINITY, DVec3::ZERO);
        };
        let grad = prim
            .analytic_gradient(p)
            .unwrap_or_else(|| self.central_difference(prim, p));
        (best, grad)
    }

    fn central_difference(&self, prim: &SdfPrimitive, p: DVec3) -> DVec3 {
        let e = self.gradient_step;
        let g = DVec3::new(
            prim.distance(p + DVec3::X * e) - prim.distance(p - DVec3::X * e),
            prim.distance(p + DVec3::Y * e) - prim.distance(p - DVec3::Y * e),
            prim.distance(p + DVec3::Z * e) - prim.distance(p - DVec3::Z * e),
        );
        g.try_normalize().unwrap_or(DVec3::Y)
    }

    /// Contact of a sphere of radius `radius` at `p`, if it penetrates.
    #[inline]
    pub fn contact_at(&self, p: DVec3, radius: f64) -> Option<(f64, DVec3)> {
        let (phi, normal) = self.distance(p);
        (phi < radius).then_some((radius - phi, normal))
    }

    /// Moves `p` out of every obstacle it penetrates (one projection).
    #[inline]
    pub fn project(&self, p: DVec3, radius: f64) -> DVec3 {
        match self.contact_at(p, radius) {
            Some((depth, normal)) => p + normal * depth,
            None => p,
        }
    }
}

/// Penetration of one particle into the scene.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Contact {
    pub particle: usize,
    /// `r − φ(x*)`, strictly positive.
    pub depth: f64,
    pub normal: DVec3,
}

/// One contact per particle whose predicted position lies closer than `radius`.
pub fn find_contacts(scene: &SdfScene, predicted: &[DVec3], radius: f64) -> Vec<Contact> {
    if scene.is_empty() {
        return Vec::new();
    }
    predicted
        .par_iter()
        .enumerate()
        .filter_map(|(i, &p)| {
            scene.contact_at(p, radius).map(|(depth, normal)| Contact {
                particle: i,
                depth,
                normal,
            })
        })
        .collect()
}

/// `p + depth · normal`. Non-positive depths leave `p` unchanged.
#[inline]
pub fn resolve_contact(p: DVec3, contact: &Contact) -> DVec3 {
    if contact.depth > 0.0 {
        p + contact.normal * contact.depth
    } else {
        p
    }
}

/// Pushes the contacted particles of `subset` out of the obstacles, moving
/// the current and the predicted position by the same amount so the implied
/// velocity is left untouched. Contacts are re-evaluated every iteration.
///
/// `subset` must be sorted ascending. Returns the number of corrections applied.
pub fn prestabilize(
    state: &mut ParticleSet,
    scene: &SdfScene,
    contacts: &[Contact],
    subset: &[usize],
    radius: f64,
    iterations: u32,
) -> usize {
    if iterations == 0 || subset.is_empty() {
        return 0;
    }
    let targets: Vec<usize> = contacts
        .iter()
        .map(|c| c.particle)
        .filter(|i| subset.binary_search(i).is_ok())
        .collect();
    let mut applied = 0;
    for _ in 0..iterations {
        for &i in &targets {
            if let Some((depth, normal)) = scene.contact_at(state.predicted[i], radius) {
                let delta = normal * depth;
                state.predicted[i] += delta;
                state.position[i] += delta;
                applied += 1;
            }
        }
    }
    applied
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::particles::IterationRange;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn floor() -> SdfScene {
        SdfScene::new(vec![SdfPrimitive::half_space(DVec3::Y, 0.0)], 1e-5)
    }

    #[test]
    fn sphere_distance() {
        let s = SdfScene::new(
            vec![SdfPrimitive::Sphere {
                center: DVec3::ZERO,
                radius: 1.0,
            }],
            1e-5,
        );
        let (d, g) = s.distance(DVec3::new(2.0, 0.0, 0.0));
        assert_eq!(d, 1.0);
        assert_eq!(g, DVec3::X);
    }

    #[test]
    fn container_distance() {
        let s = SdfScene::new(
            vec![SdfPrimitive::Container {
                min: DVec3::splat(-1.0),
                max: DVec3::splat(1.0),
            }],
            1e-5,
        );
        let (d, g) = s.distance(DVec3::ZERO);
        assert_eq!(d, 1.0);
        assert!((g.length() - 1.0).abs() < 1e-12);
        let (d, g) = s.distance(DVec3::new(0.0, -0.9, 0.0));
        assert!((d - 0.1).abs() < 1e-12);
        assert_eq!(g, DVec3::Y);
        // Outside the container is solid.
        assert!(s.distance(DVec3::new(3.0, 0.0, 0.0)).0 < 0.0);
    }

    #[test]
    fn plane_distance() {
        let (d, g) = floor().distance(DVec3::new(5.0, -0.2, 3.0));
        assert!((d + 0.2).abs() < 1e-15);
        assert_eq!(g, DVec3::Y);
    }

    #[test]
    fn solid_box_distance() {
        let b = SdfPrimitive::Box {
            min: DVec3::ZERO,
            max: DVec3::ONE,
        };
        assert!((b.distance(DVec3::new(2.0, 0.5, 0.5)) - 1.0).abs() < 1e-12);
        assert!((b.distance(DVec3::splat(0.5)) + 0.5).abs() < 1e-12);
        assert!((b.distance(DVec3::new(2.0, 2.0, 0.5)) - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn cone_distance() {
        let c = SdfPrimitive::Cone {
            base_center: DVec3::ZERO,
            radius: 1.0,
            height: 1.0,
        };
        // Above the apex.
        assert!((c.distance(DVec3::new(0.0, 3.0, 0.0)) - 2.0).abs() < 1e-12);
        // Inside, near the base.
        assert!(c.distance(DVec3::new(0.0, 0.1, 0.0)) < 0.0);
        assert!((c.distance(DVec3::new(0.0, 0.1, 0.0)) + 0.1).abs() < 1e-12);
        // Beside the slanted face: distance to the line x + y = 1.
        let p = DVec3::new(1.0, 1.0, 0.0);
        assert!((c.distance(p) - 1.0 / 2f64.sqrt()).abs() < 1e-12);
        let scene = SdfScene::new(vec![c], 1e-5);
        let (_, g) = scene.distance(p);
        let expected = DVec3::new(1.0, 1.0, 0.0).normalize();
        assert!((g - expected).length() < 1e-6, "{g}");
    }

    #[test]
    fn lipschitz_on_sampled_pairs() {
        let prims = [
            SdfPrimitive::half_space(DVec3::new(1.0, 2.0, 0.5), 0.3),
            SdfPrimitive::Box {
                min: DVec3::splat(-0.5),
                max: DVec3::new(0.5, 1.0, 0.2),
            },
            SdfPrimitive::Container {
                min: DVec3::splat(-1.0),
                max: DVec3::splat(1.0),
            },
            SdfPrimitive::Sphere {
                center: DVec3::new(0.2, 0.1, 0.0),
                radius: 0.7,
            },
            SdfPrimitive::Cone {
                base_center: DVec3::new(0.0, -1.0, 0.0),
                radius: 0.8,
                height: 1.5,
            },
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut sample = || {
            DVec3::new(
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
            )
        };
        for prim in prims {
            for _ in 0..2000 {
                let a = sample();
                let b = sample();
                let lhs = (prim.distance(a) - prim.distance(b)).abs();
                assert!(lhs <= a.distance(b) + 1e-3, "{prim:?} {a} {b}");
            }
        }
    }

    #[test]
    fn contact_detection() {
        let s = floor();
        let c = find_contacts(
            &s,
            &[DVec3::new(0.0, 0.4, 0.0), DVec3::new(0.0, 0.6, 0.0)],
            0.5,
        );
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].particle, 0);
        assert!((c[0].depth - 0.1).abs() < 1e-12);
        assert!((c[0].normal.length() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn plane_penetration_depths() {
        let s = floor();
        let r = 0.05;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p: Vec<DVec3> = (0..100)
            .map(|_| {
                DVec3::new(
                    rng.gen_range(-1.0..1.0),
                    -rng.gen_range(0.0..1.0),
                    rng.gen_range(-1.0..1.0),
                )
            })
            .collect();
        let contacts = find_contacts(&s, &p, r);
        assert_eq!(contacts.len(), 100);
        for c in contacts {
            let expected = r - p[c.particle].y;
            assert!((c.depth - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn resolve_onto_plane() {
        let s = floor();
        let p = DVec3::new(0.0, -0.2, 0.0);
        let c = find_contacts(&s, &[p], 0.5)[0];
        assert!((c.depth - 0.7).abs() < 1e-12);
        let q = resolve_contact(p, &c);
        assert!((q - DVec3::new(0.0, 0.5, 0.0)).length() < 1e-12);
        assert!(s.distance(q).0 >= 0.5 - 1e-6);
        // Idempotent against half-spaces up to rounding.
        assert!((s.project(q, 0.5) - q).length() < 1e-12);
    }

    #[test]
    fn zero_depth_is_identity() {
        let p = DVec3::new(1.0, 2.0, 3.0);
        let c = Contact {
            particle: 0,
            depth: 0.0,
            normal: DVec3::Y,
        };
        assert_eq!(resolve_contact(p, &c), p);
    }

    #[test]
    fn resolve_out_of_sphere() {
        let s = SdfScene::new(
            vec![SdfPrimitive::Sphere {
                center: DVec3::ZERO,
                radius: 1.0,
            }],
            1e-5,
        );
        let p = DVec3::new(0.5, 0.0, 0.0);
        let c = find_contacts(&s, &[p], 0.1)[0];
        let q = resolve_contact(p, &c);
        assert!((q - DVec3::new(1.1, 0.0, 0.0)).length() < 1e-12);
        assert!(s.distance(q).0 >= s.distance(p).0);
    }

    fn embedded_set(depth: f64) -> ParticleSet {
        let range = IterationRange::new(1, 3).unwrap();
        let p = vec![DVec3::new(0.0, -depth, 0.0), DVec3::new(5.0, -depth, 0.0)];
        ParticleSet::new(p, 1.0, range).unwrap()
    }

    #[test]
    fn prestabilize_moves_both_positions() {
        let r = 0.5;
        let s = floor();
        let mut set = embedded_set(0.3 * r);
        let contacts = find_contacts(&s, &set.predicted, r);
        let n = prestabilize(&mut set, &s, &contacts, &[0], r, 1);
        assert_eq!(n, 1);
        assert!(s.distance(set.predicted[0]).0 >= r - 1e-12);
        assert!(s.distance(set.position[0]).0 >= r - 1e-12);
        // Outside the subset: untouched.
        assert_eq!(set.position[1], DVec3::new(5.0, -0.3 * r, 0.0));
    }

    #[test]
    fn prestabilize_keeps_implied_velocity() {
        let r = 0.1;
        let s = floor();
        let mut set = embedded_set(0.05);
        set.predicted[0] += DVec3::new(0.01, -0.02, 0.0);
        let before = set.predicted[0] - set.position[0];
        let contacts = find_contacts(&s, &set.predicted, r);
        prestabilize(&mut set, &s, &contacts, &[0, 1], r, 2);
        let after = set.predicted[0] - set.position[0];
        assert!((after - before).length() < 1e-12);
    }

    #[test]
    fn zero_iterations_is_noop() {
        let s = floor();
        let mut set = embedded_set(0.2);
        let before = set.clone();
        let contacts = find_contacts(&s, &set.predicted, 0.5);
        assert_eq!(prestabilize(&mut set, &s, &contacts, &[0, 1], 0.5, 0), 0);
        assert_eq!(set, before);
    }

    #[test]
    fn empty_scene_has_no_contacts() {
        let s = SdfScene::default();
        assert!(find_contacts(&s, &[DVec3::ZERO], 1.0).is_empty());
        assert_eq!(s.distance(DVec3::ZERO).0, f64::INFINITY);
    }
}
