//! Three-scale, two-orientation Gabor bank with 10×10 kernels.
//!
//! Each scale folds its 0° and 90° responses into one energy plane,
//! `√(r₀² + r₉₀²)`, on which the texture operators run.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::texture::Plane;

pub const KERNEL_SIZE: usize = 10;
pub const SCALES: usize = 3;
pub const ORIENTATIONS: [f64; 2] = [0.0, 90.0];
/// Kernel index of the output pixel: taps span `-ANCHOR..KERNEL_SIZE-ANCHOR`.
const ANCHOR: isize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaborParams {
    /// Carrier wavelength per scale in pixels, strictly increasing.
    pub wavelengths: [f64; SCALES],
    /// Envelope sigma as a multiple of the wavelength.
    pub sigma_ratio: f64,
    /// Spatial aspect ratio of the envelope.
    pub gamma: f64,
    /// Carrier phase offset in radians.
    pub psi: f64,
}

impl Default for GaborParams {
    fn default() -> Self {
        Self {
            wavelengths: [2.0, 4.0, 8.0],
            sigma_ratio: 0.56,
            gamma: 0.5,
            psi: 0.0,
        }
    }
}

impl GaborParams {
    pub fn validate(&self) -> Result<()> {
        if self.wavelengths.iter().any(|&l| !(l > 0.0) || !l.is_finite()) {
            return Err(Error::param("gabor.wavelengths", "must be positive"));
        }
        if self.wavelengths.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::param(
                "gabor.wavelengths",
                format!("{:?} must be strictly increasing", self.wavelengths),
            ));
        }
        if !(self.sigma_ratio > 0.0) || !(self.gamma > 0.0) || !self.psi.is_finite() {
            return Err(Error::param(
                "gabor",
                "sigma_ratio and gamma must be positive, psi finite",
            ));
        }
        Ok(())
    }
}

/// Row-major `KERNEL_SIZE`×`KERNEL_SIZE` taps.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    pub taps: [[f64; KERNEL_SIZE]; KERNEL_SIZE],
}

impl Kernel {
    pub fn sum(&self) -> f64 {
        self.taps.iter().flatten().sum()
    }
}

/// Unadjusted Gabor value at grid position `(row, col)`.
pub fn gabor_value(row: usize, col: usize, wavelength: f64, sigma: f64, gamma: f64, psi: f64, theta_deg: f64) -> f64 {
    let c = (KERNEL_SIZE as f64 - 1.0) / 2.0;
    let (xt, yt) = (col as f64 - c, row as f64 - c);
    let theta = theta_deg.to_radians();
    let xr = xt * theta.cos() + yt * theta.sin();
    let yr = -xt * theta.sin() + yt * theta.cos();
    (-(xr * xr + gamma * gamma * yr * yr) / (2.0 * sigma * sigma)).exp()
        * (2.0 * std::f64::consts::PI * xr / wavelength + psi).cos()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaborBank {
    params: GaborParams,
    /// `kernels[scale][orientation]`, zero-mean.
    kernels: Vec<[Kernel; 2]>,
}

impl GaborBank {
    pub fn params(&self) -> &GaborParams {
        &self.params
    }

    pub fn kernel(&self, scale: usize, orientation: usize) -> &Kernel {
        &self.kernels[scale][orientation]
    }

    pub fn len(&self) -> usize {
        self.kernels.len() * 2
    }

    pub fn is_empty(&self) -> bool {
        self.kernels.is_empty()
    }
}

pub fn build_bank(params: &GaborParams) -> Result<GaborBank> {
    params.validate()?;
    let kernels = params
        .wavelengths
        .iter()
        .map(|&lambda| {
            let sigma = params.sigma_ratio * lambda;
            ORIENTATIONS.map(|theta| {
                let mut taps = [[0.0; KERNEL_SIZE]; KERNEL_SIZE];
                for (r, row) in taps.iter_mut().enumerate() {
                    for (c, t) in row.iter_mut().enumerate() {
                        *t = gabor_value(r, c, lambda, sigma, params.gamma, params.psi, theta);
                    }
                }
                let mean = taps.iter().flatten().sum::<f64>() / (KERNEL_SIZE * KERNEL_SIZE) as f64;
                taps.iter_mut().flatten().for_each(|t| *t -= mean);
                Kernel { taps }
            })
        })
        .collect();
    Ok(GaborBank {
        params: params.clone(),
        kernels,
    })
}

/// Filters `plane` with `kernel`, clamping coordinates at the borders.
///
/// Each tap multiplies the difference between the sampled pixel and the
/// output pixel. With zero-mean taps this equals plain filtering, and it makes
/// constant regions yield exactly zero regardless of rounding in the taps.
pub fn filter(plane: &Plane, kernel: &Kernel) -> Plane {
    let (w, h) = (plane.width() as isize, plane.height() as isize);
    let mut out = Vec::with_capacity((w * h) as usize);
    for y in 0..h {
        for x in 0..w {
            let center = plane.get(x as usize, y as usize);
            let mut acc = 0.0;
            for (j, row) in kernel.taps.iter().enumerate() {
                let sy = (y + j as isize - ANCHOR).clamp(0, h - 1) as usize;
                for (i, &k) in row.iter().enumerate() {
                    let sx = (x + i as isize - ANCHOR).clamp(0, w - 1) as usize;
                    acc += k * (plane.get(sx, sy) - center);
                }
            }
            out.push(acc);
        }
    }
    Plane::new(w as usize, h as usize, out).expect("dimensions preserved")
}

/// Orientation-energy response of one scale.
pub fn scale_response(plane: &Plane, bank: &GaborBank, scale: usize) -> Result<Plane> {
    if plane.width() < KERNEL_SIZE || plane.height() < KERNEL_SIZE {
        return Err(Error::param(
            "plane",
            format!(
                "{}x{} is smaller than the {KERNEL_SIZE}x{KERNEL_SIZE} kernel",
                plane.width(),
                plane.height()
            ),
        ));
    }
    if scale >= bank.kernels.len() {
        return Err(Error::param("scale", format!("{scale} out of range")));
    }
    let a = filter(plane, bank.kernel(scale, 0));
    let b = filter(plane, bank.kernel(scale, 1));
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(p, q)| (p * p + q * q).sqrt())
        .collect();
    Plane::new(plane.width(), plane.height(), data)
}

/// All scale responses in scale order.
pub fn responses(plane: &Plane, bank: &GaborBank) -> Result<Vec<Plane>> {
    (0..bank.kernels.len())
        .map(|s| scale_response(plane, bank, s))
        .collect()
}
