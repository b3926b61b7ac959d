//! Software sphere splatting into a view-depth buffer, and PPM export.
//!
//! Each particle covers the pixels whose primary ray hits its sphere; the
//! stored depth is the distance from the eye to the nearer ray–sphere
//! intersection. Compositing keeps the minimum, so the result does not depend
//! on particle order. Parallel splatting uses an atomic min on the f64 bit
//! pattern, which orders like the value for non-negative floats.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use glam::DVec3;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::particles::IterationRange;

/// Pinhole camera.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Camera {
    pub eye: DVec3,
    pub look_at: DVec3,
    pub up: DVec3,
    /// Vertical field of view in radians.
    pub vertical_fov: f64,
    pub width: u32,
    pub height: u32,
    pub near: f64,
}

impl Camera {
    pub fn validate(&self) -> Result<()> {
        if !((self.look_at - self.eye).length() > 0.0) {
            return Err(Error::InvalidParameter(
                "camera eye and look_at coincide".into(),
            ));
        }
        if !(self.vertical_fov > 0.0 && self.vertical_fov < std::f64::consts::PI) {
            return Err(Error::InvalidParameter(format!(
                "vertical fov must be in (0, pi), got {}",
                self.vertical_fov
            )));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidParameter(format!(
                "zero-area resolution {}x{}",
                self.width, self.height
            )));
        }
        if !(self.near > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "near must be > 0, got {}",
                self.near
            )));
        }
        let forward = (self.look_at - self.eye).normalize();
        if forward.cross(self.up).length_squared() < 1e-24 {
            return Err(Error::InvalidParameter(
                "camera up is parallel to the view direction".into(),
            ));
        }
        Ok(())
    }

    /// Precomputed view basis. Call [`Camera::validate`] first.
    pub fn view(&self) -> View {
        let forward = (self.look_at - self.eye).normalize();
        let right = forward.cross(self.up).normalize();
        let up = right.cross(forward);
        let tan_half = (self.vertical_fov * 0.5).tan();
        let aspect = self.width as f64 / self.height as f64;
        View {
            eye: self.eye,
            forward,
            right,
            up,
            tan_half,
            aspect,
            width: self.width,
            height: self.height,
            near: self.near,
            focal_px: self.height as f64 * 0.5 / tan_half,
        }
    }
}

/// Where a point lands on screen.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Projection {
    /// Continuous pixel coordinates; pixel `(i, j)` covers `[i, i+1) x [j, j+1)`.
    pub sx: f64,
    pub sy: f64,
    /// Depth along the view axis.
    pub view_z: f64,
    /// Euclidean distance from the eye.
    pub distance: f64,
}

impl Projection {
    /// Integer pixel, if on screen.
    pub fn pixel(&self, width: u32, height: u32) -> Option<(u32, u32)> {
        let (x, y) = (self.sx.floor(), self.sy.floor());
        (x >= 0.0 && y >= 0.0 && x < width as f64 && y < height as f64)
            .then_some((x as u32, y as u32))
    }
}

#[derive(Clone, Copy, Debug)]
pub struct View {
    eye: DVec3,
    forward: DVec3,
    right: DVec3,
    up: DVec3,
    tan_half: f64,
    aspect: f64,
    width: u32,
    height: u32,
    near: f64,
    focal_px: f64,
}

impl View {
    /// `None` for points not in front of the near plane.
    #[inline]
    pub fn project(&self, p: DVec3) -> Option<Projection> {
        let v = p - self.eye;
        let z = v.dot(self.forward);
        if !(z > self.near) {
            return None;
        }
        let ndc_x = v.dot(self.right) / (z * self.tan_half * self.aspect);
        let ndc_y = v.dot(self.up) / (z * self.tan_half);
        Some(Projection {
            sx: (ndc_x + 1.0) * 0.5 * self.width as f64,
            sy: (1.0 - ndc_y) * 0.5 * self.height as f64,
            view_z: z,
            distance: v.length(),
        })
    }

    /// Unit direction of the ray through the centre of pixel `(x, y)`.
    #[inline]
    pub fn pixel_ray(&self, x: u32, y: u32) -> DVec3 {
        let ndc_x = (x as f64 + 0.5) / self.width as f64 * 2.0 - 1.0;
        let ndc_y = 1.0 - (y as f64 + 0.5) / self.height as f64 * 2.0;
        (self.forward
            + self.right * (ndc_x * self.tan_half * self.aspect)
            + self.up * (ndc_y * self.tan_half))
            .normalize()
    }

    pub fn eye(&self) -> DVec3 {
        self.eye
    }

    /// Conservative pixel bounding box of a sphere, clipped to the screen.
    fn footprint(&self, radius: f64, proj: &Projection) -> Option<(u32, u32, u32, u32)> {
        let z = proj.view_z;
        let ndc_x = proj.sx / self.width as f64 * 2.0 - 1.0;
        let ndc_y = 1.0 - proj.sy / self.height as f64 * 2.0;
        let off_axis =
            1.0 + (ndc_x * self.tan_half * self.aspect).powi(2) + (ndc_y * self.tan_half).powi(2);
        let denom = (z * z - radius * radius).max(0.0).sqrt();
        let r_px = if denom > 0.0 && z > radius {
            self.focal_px * radius / denom * off_axis + 1.0
        } else {
            // The sphere reaches the eye plane; cover the whole screen.
            f64::INFINITY
        };
        let x0 = (proj.sx - r_px).floor().max(0.0);
        let y0 = (proj.sy - r_px).floor().max(0.0);
        let x1 = (proj.sx + r_px).ceil().min(self.width as f64 - 1.0);
        let y1 = (proj.sy + r_px).ceil().min(self.height as f64 - 1.0);
        (x0 <= x1 && y0 <= y1).then_some((x0 as u32, y0 as u32, x1 as u32, y1 as u32))
    }

    /// Calls `f(pixel, t)` for every pixel whose centre ray hits the sphere
    /// beyond the near plane, `t` being the nearer hit distance.
    fn for_each_covered(&self, center: DVec3, radius: f64, mut f: impl FnMut(usize, f64)) {
        let Some(proj) = self.project(center) else {
            return;
        };
        let Some((x0, y0, x1, y1)) = self.footprint(radius, &proj) else {
            return;
        };
        // Ray through a pixel: d = forward + ax·right + ay·up, |d|² = 1 + ax² + ay².
        let sx = 2.0 * self.tan_half * self.aspect / self.width as f64;
        let sy = 2.0 * self.tan_half / self.height as f64;
        let oc = self.eye - center;
        let (bf, br, bu) = (oc.dot(self.forward), oc.dot(self.right), oc.dot(self.up));
        let c = oc.length_squared() - radius * radius;
        for y in y0..=y1 {
            let ay = self.tan_half - (y as f64 + 0.5) * sy;
            let by = bf + ay * bu;
            let row = y as usize * self.width as usize;
            for x in x0..=x1 {
                let ax = (x as f64 + 0.5) * sx - self.tan_half * self.aspect;
                let a = 1.0 + ax * ax + ay * ay;
                let b = by + ax * br;
                let disc = b * b - a * c;
                if disc < 0.0 {
                    continue;
                }
                let t = (-b - disc.sqrt()) / a.sqrt();
                if t > self.near {
                    f(row + x as usize, t);
                }
            }
        }
    }
}

/// Per-pixel distance from the eye to the nearest splatted sphere.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthBuffer {
    pub width: u32,
    pub height: u32,
    pub depth: Vec<f64>,
}

impl DepthBuffer {
    pub fn new(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            depth: vec![f64::INFINITY; width as usize * height as usize],
        }
    }

    /// Stored depth at `(x, y)`; `+inf` where nothing was drawn.
    pub fn sample_depth(&self, x: u32, y: u32) -> Result<f64> {
        if x >= self.width || y >= self.height {
            return Err(Error::InvalidIndex {
                index: y as usize * self.width as usize + x as usize,
                len: self.depth.len(),
            });
        }
        Ok(self.depth[y as usize * self.width as usize + x as usize])
    }

    pub fn covered_pixels(&self) -> usize {
        self.depth.iter().filter(|d| d.is_finite()).count()
    }

    /// Near = bright, far = dark, background black.
    pub fn to_image(&self) -> Image {
        let (lo, hi) = self
            .depth
            .iter()
            .filter(|d| d.is_finite())
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &d| {
                (lo.min(d), hi.max(d))
            });
        let mut img = Image::new(self.width, self.height);
        for (px, &d) in img.rgb.chunks_exact_mut(3).zip(&self.depth) {
            if d.is_finite() {
                let t = if hi > lo { (d - lo) / (hi - lo) } else { 0.0 };
                let g = (255.0 - 200.0 * t).round() as u8;
                px.copy_from_slice(&[g, g, g]);
            }
        }
        img
    }
}

/// Splats every particle as a sphere of radius `radius`.
pub fn splat(positions: &[DVec3], radius: f64, camera: &Camera) -> Result<DepthBuffer> {
    camera.validate()?;
    if !(radius > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "splat radius must be > 0, got {radius}"
        )));
    }
    let view = camera.view();
    let pixels = camera.width as usize * camera.height as usize;
    let depth: Vec<AtomicU64> = (0..pixels)
        .map(|_| AtomicU64::new(f64::INFINITY.to_bits()))
        .collect();
    positions.par_iter().for_each(|&c| {
        view.for_each_covered(c, radius, |idx, t| {
            // Positive doubles order like their bit patterns.
            let bits = t.to_bits();
            if bits < depth[idx].load(Ordering::Relaxed) {
                depth[idx].fetch_min(bits, Ordering::Relaxed);
            }
        });
    });
    Ok(DepthBuffer {
        width: camera.width,
        height: camera.height,
        depth: depth
            .into_iter()
            .map(|a| f64::from_bits(a.into_inner()))
            .collect(),
    })
}

/// 8-bit RGB raster.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Image {
    pub width: u32,
    pub height: u32,
    pub rgb: Vec<u8>,
}

impl Image {
    pub fn new(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            rgb: vec![0; 3 * width as usize * height as usize],
        }
    }

    pub fn to_ppm_bytes(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.rgb);
        out
    }

    /// Binary PPM (P6).
    pub fn write_ppm(&self, path: &Path) -> Result<()> {
        let io_err = |e: std::io::Error| Error::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        };
        let mut w = BufWriter::new(File::create(path).map_err(io_err)?);
        w.write_all(&self.to_ppm_bytes()).map_err(io_err)?;
        w.flush().map_err(io_err)
    }
}

/// Green for the highest level, yellow in between, red for the lowest.
pub fn level_color(level: u32, range: IterationRange) -> [u8; 3] {
    let span = (range.n_max() - range.n_min()) as f64;
    let t = if span > 0.0 {
        (range.clamp(level) - range.n_min()) as f64 / span
    } else {
        1.0
    };
    if t >= 0.5 {
        [(255.0 * (1.0 - t) * 2.0).round() as u8, 255, 0]
    } else {
        [255, (255.0 * t * 2.0).round() as u8, 0]
    }
}

/// Opaque splat image coloured by particle level.
pub fn render_levels(
    positions: &[DVec3],
    levels: &[u32],
    range: IterationRange,
    radius: f64,
    camera: &Camera,
) -> Result<Image> {
    camera.validate()?;
    if positions.len() != levels.len() {
        return Err(Error::InvalidParameter(
            "positions and levels differ in length".into(),
        ));
    }
    let view = camera.view();
    let mut depth = vec![f64::INFINITY; camera.width as usize * camera.height as usize];
    let mut owner = vec![usize::MAX; depth.len()];
    for (i, &c) in positions.iter().enumerate() {
        view.for_each_covered(c, radius, |idx, t| {
            if t < depth[idx] {
                depth[idx] = t;
                owner[idx] = i;
            }
        });
    }
    let mut img = Image::new(camera.width, camera.height);
    for (px, &o) in img.rgb.chunks_exact_mut(3).zip(&owner) {
        if o != usize::MAX {
            px.copy_from_slice(&level_color(levels[o], range));
        }
    }
    Ok(img)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn axis_camera(size: u32) -> Camera {
        Camera {
            eye: DVec3::ZERO,
            look_at: DVec3::new(0.0, 0.0, -1.0),
            up: DVec3::Y,
            vertical_fov: 60f64.to_radians(),
            width: size,
            height: size,
            near: 0.01,
        }
    }

    #[test]
    fn on_axis_particle_depth() {
        let cam = axis_camera(101);
        let buf = splat(&[DVec3::new(0.0, 0.0, -5.0)], 0.5, &cam).unwrap();
        assert!((buf.sample_depth(50, 50).unwrap() - 4.5).abs() < 1e-12);
    }

    #[test]
    fn empty_buffer_is_infinite() {
        let cam = axis_camera(16);
        let buf = splat(&[], 0.5, &cam).unwrap();
        assert!(buf.depth.iter().all(|d| *d == f64::INFINITY));
        assert_eq!(buf.sample_depth(3, 4).unwrap(), f64::INFINITY);
    }

    #[test]
    fn nearer_particle_wins() {
        let cam = axis_camera(101);
        let p = [DVec3::new(0.0, 0.0, -8.0), DVec3::new(0.0, 0.0, -5.0)];
        let buf = splat(&p, 0.5, &cam).unwrap();
        assert!((buf.sample_depth(50, 50).unwrap() - 4.5).abs() < 1e-12);
    }

    #[test]
    fn behind_camera_is_skipped() {
        let cam = axis_camera(32);
        let buf = splat(&[DVec3::new(0.0, 0.0, 5.0)], 0.5, &cam).unwrap();
        assert_eq!(buf.covered_pixels(), 0);
    }

    #[test]
    fn coverage_matches_projected_disc() {
        let cam = axis_camera(256);
        let (d, r) = (5.0, 0.5);
        let buf = splat(&[DVec3::new(0.0, 0.0, -d)], r, &cam).unwrap();
        let focal = 128.0 / (30f64.to_radians()).tan();
        let r_px = focal * r / (d * d - r * r).sqrt();
        let area = std::f64::consts::PI * r_px * r_px;
        let covered = buf.covered_pixels() as f64;
        assert!(covered > 0.0);
        assert!((covered - area).abs() / area < 0.2, "{covered} vs {area}");
        let written: f64 = buf.depth.iter().filter(|d| d.is_finite()).sum();
        assert!(written > 0.0);
    }

    #[test]
    fn order_independent() {
        let cam = axis_camera(64);
        let p: Vec<DVec3> = (0..40)
            .map(|i| {
                DVec3::new(
                    (i as f64 * 0.37).sin(),
                    (i as f64 * 0.91).cos(),
                    -4.0 - (i % 7) as f64 * 0.3,
                )
            })
            .collect();
        let a = splat(&p, 0.3, &cam).unwrap();
        let mut rev = p.clone();
        rev.reverse();
        let b = splat(&rev, 0.3, &cam).unwrap();
        assert_eq!(a, b);
        // Every finite depth is at least the distance to the nearest centre minus r.
        let nearest = p.iter().map(|q| q.length()).fold(f64::INFINITY, f64::min);
        assert!(a
            .depth
            .iter()
            .filter(|d| d.is_finite())
            .all(|&d| d >= nearest - 0.3 - 1e-12));
    }

    #[test]
    fn rejects_invalid_inputs() {
        let mut cam = axis_camera(0);
        assert!(splat(&[], 0.5, &cam).is_err());
        cam = axis_camera(8);
        assert!(splat(&[], 0.0, &cam).is_err());
        cam.look_at = cam.eye;
        assert!(cam.validate().is_err());
        let buf = DepthBuffer::new(4, 4);
        assert!(matches!(
            buf.sample_depth(4, 0),
            Err(Error::InvalidIndex { .. })
        ));
    }

    #[test]
    fn ppm_header_is_exact() {
        let img = DepthBuffer::new(2, 2).to_image();
        let bytes = img.to_ppm_bytes();
        assert!(bytes.starts_with(b"P6\n2 2\n255\n"));
        assert_eq!(bytes.len(), "P6\n2 2\n255\n".len() + 12);
        assert!(bytes[11..].iter().all(|&b| b == 0));
    }

    #[test]
    fn ppm_file_size_and_io_error() {
        let dir = std::env::temp_dir().join(format!("apbf-splat-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("d.ppm");
        let mut buf = DepthBuffer::new(7, 3);
        buf.depth[4] = 2.0;
        buf.to_image().write_ppm(&path).unwrap();
        let len = std::fs::metadata(&path).unwrap().len() as usize;
        assert_eq!(len, "P6\n7 3\n255\n".len() + 3 * 7 * 3);
        std::fs::remove_dir_all(&dir).unwrap();

        let bad = Path::new("/nonexistent-dir/x.ppm");
        match buf.to_image().write_ppm(bad) {
            Err(Error::Io { path, .. }) => assert!(path.contains("nonexistent-dir")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn depth_gradient_gives_monotone_gray() {
        let mut buf = DepthBuffer::new(16, 2);
        for y in 0..2 {
            for x in 0..16 {
                buf.depth[y * 16 + x] = 1.0 + x as f64 * 0.25;
            }
        }
        let img = buf.to_image();
        let row: Vec<u8> = img.rgb.chunks_exact(3).take(16).map(|p| p[0]).collect();
        assert_eq!(row[0], 255);
        assert!(row.windows(2).all(|w| w[0] > w[1]), "{row:?}");
    }

    #[test]
    fn level_colors() {
        let range = IterationRange::new(3, 6).unwrap();
        assert_eq!(level_color(6, range), [0, 255, 0]);
        assert_eq!(level_color(3, range), [255, 0, 0]);
        let mid = level_color(5, range);
        assert_eq!(mid[1], 255);
        assert!(mid[0] > 0);
    }

    #[test]
    fn level_image_uses_nearest_particle() {
        let cam = axis_camera(33);
        let range = IterationRange::new(3, 6).unwrap();
        let p = [DVec3::new(0.0, 0.0, -8.0), DVec3::new(0.0, 0.0, -5.0)];
        let img = render_levels(&p, &[3, 6], range, 0.5, &cam).unwrap();
        let c = (16 * 33 + 16) * 3;
        assert_eq!(&img.rgb[c..c + 3], &[0, 255, 0]);
    }
}
