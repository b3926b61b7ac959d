//! SPH smoothing kernels.
//!
//! Density uses the poly6 kernel. The constraint gradient is either the
//! analytic poly6 gradient or the spiky gradient (see [`GradientKernel`]).
//! All have compact support of radius `h`.
//!
//! ```text
//! W(r, h)  = 315 / (64 pi h^9) (h^2 - |r|^2)^3          |r| < h
//! dW(r, h) = -6 315 / (64 pi h^9) (h^2 - |r|^2)^2 r     |r| < h   (poly6)
//! dW(r, h) = -45 / (pi h^6) (h - |r|)^2 r / |r|          0 < |r| < h   (spiky)
//! ```

use std::f64::consts::PI;

use glam::DVec3;

use crate::error::{Error, Result};

/// Smoothing length with the kernel normalisation constants folded in.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KernelParams {
    h: f64,
    h2: f64,
    poly6: f64,
    spiky_grad: f64,
}

impl KernelParams {
    pub fn new(h: f64) -> Result<Self> {
        if !(h > 0.0) || !h.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "smoothing length must be finite and > 0, got {h}"
            )));
        }
        let h3 = h * h * h;
        let h6 = h3 * h3;
        Ok(Self {
            h,
            h2: h * h,
            poly6: 315.0 / (64.0 * PI * h6 * h3),
            spiky_grad: 45.0 / (PI * h6),
        })
    }

    #[inline]
    pub fn h(&self) -> f64 {
        self.h
    }

    /// Poly6 density kernel.
    #[inline]
    pub fn density(&self, r: DVec3) -> f64 {
        let r2 = r.length_squared();
        if r2 >= self.h2 {
            return 0.0;
        }
        let d = self.h2 - r2;
        self.poly6 * d * d * d
    }

    /// Spiky kernel gradient. Zero at the origin and outside the support.
    #[inline]
    pub fn gradient(&self, r: DVec3) -> DVec3 {
        let r2 = r.length_squared();
        if r2 >= self.h2 || r2 == 0.0 {
            return DVec3::ZERO;
        }
        let len = r2.sqrt();
        let d = self.h - len;
        r * (-self.spiky_grad * d * d / len)
    }

    /// Analytic gradient of the poly6 kernel.
    #[inline]
    pub fn density_gradient(&self, r: DVec3) -> DVec3 {
        let r2 = r.length_squared();
        if r2 >= self.h2 {
            return DVec3::ZERO;
        }
        let d = self.h2 - r2;
        r * (-6.0 * self.poly6 * d * d)
    }
}

/// Kernel whose gradient drives the density constraint.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum GradientKernel {
    /// Gradient of the poly6 density kernel itself.
    #[default]
    Poly6,
    Spiky,
}

impl std::str::FromStr for GradientKernel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "poly6" => Ok(Self::Poly6),
            "spiky" => Ok(Self::Spiky),
            other => Err(Error::InvalidParameter(format!(
                "unknown gradient kernel `{other}` (expected poly6 or spiky)"
            ))),
        }
    }
}

impl std::fmt::Display for GradientKernel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Poly6 => "poly6",
            Self::Spiky => "spiky",
        })
    }
}

impl KernelParams {
    #[inline]
    pub fn constraint_gradient(&self, kind: GradientKernel, r: DVec3) -> DVec3 {
        match kind {
            GradientKernel::Poly6 => self.density_gradient(r),
            GradientKernel::Spiky => self.gradient(r),
        }
    }
}

/// `W(r, h)` for a one-off evaluation.
pub fn density_kernel(r: DVec3, h: f64) -> Result<f64> {
    Ok(KernelParams::new(h)?.density(r))
}

/// `∇W(r, h)` for a one-off evaluation.
pub fn gradient_kernel(r: DVec3, h: f64) -> Result<DVec3> {
    Ok(KernelParams::new(h)?.gradient(r))
}
