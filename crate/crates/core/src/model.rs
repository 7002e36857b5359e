//! Units, model parameters and the grid path type.
//!
//! Lengths are measured in units of the thermal wavelength `λ_β` and times in
//! units of `β` by default. The free propagator over time `t` is the Gaussian
//! `λ_t^{-ν} exp(-π |x|² / λ_t²)` with `λ_t = λ_β √(t/β)`, which makes every
//! coordinate diffuse with variance `σ² t` where `σ² = λ_β² / (2π β)`.

use std::f64::consts::PI;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParameter { field: &'static str, reason: String },
    #[error("time span must be positive, got {0}")]
    NonPositiveTime(f64),
    #[error("vector has dimension {got}, expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },
}

/// Validated model parameters shared by every estimator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelParams {
    dim: usize,
    beta: f64,
    legs: usize,
    slices: usize,
    lambda: f64,
}

impl ModelParams {
    /// `dim` is the spatial dimension ν, `legs` the number n of β-intervals,
    /// `slices` the number J of quadrature slices per leg and `lambda` the
    /// thermal wavelength at inverse temperature `beta`.
    pub fn new(dim: usize, beta: f64, legs: usize, slices: usize, lambda: f64) -> Result<Self, ModelError> {
        fn positive_int(field: &'static str, v: usize) -> Result<(), ModelError> {
            if v == 0 {
                return Err(ModelError::InvalidParameter { field, reason: "must be a positive integer".into() });
            }
            Ok(())
        }
        fn positive_real(field: &'static str, v: f64) -> Result<(), ModelError> {
            if !(v.is_finite() && v > 0.0) {
                return Err(ModelError::InvalidParameter { field, reason: format!("must be a positive finite real, got {v}") });
            }
            Ok(())
        }
        positive_int("nu", dim)?;
        positive_real("beta", beta)?;
        positive_int("n", legs)?;
        positive_int("j", slices)?;
        positive_real("lambda", lambda)?;
        Ok(Self { dim, beta, legs, slices, lambda })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn legs(&self) -> usize {
        self.legs
    }

    pub fn slices(&self) -> usize {
        self.slices
    }

    /// Thermal wavelength λ_β.
    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Time step h = β/J.
    pub fn step(&self) -> f64 {
        self.beta / self.slices as f64
    }

    /// Grid steps spanned by the full bridge, nJ.
    pub fn bridge_steps(&self) -> usize {
        self.legs * self.slices
    }

    /// Total time span nβ.
    pub fn total_time(&self) -> f64 {
        self.legs as f64 * self.beta
    }

    /// Per-coordinate diffusion rate σ² = λ_β²/(2πβ).
    pub fn diffusion(&self) -> f64 {
        self.lambda * self.lambda / (2.0 * PI * self.beta)
    }

    /// λ_t = λ_β √(t/β).
    pub fn lambda_at(&self, t: f64) -> f64 {
        self.lambda * (t / self.beta).sqrt()
    }

    /// λ_{nβ}, the wavelength over the whole bridge.
    pub fn lambda_total(&self) -> f64 {
        self.lambda_at(self.total_time())
    }

    /// Gaussian endpoint factor exp(-π|x|²/(n λ_β²)).
    pub fn endpoint_factor(&self, x: &[f64]) -> f64 {
        let l2 = self.legs as f64 * self.lambda * self.lambda;
        (-PI * norm2(x) / l2).exp()
    }

    pub fn check_vector(&self, v: &[f64]) -> Result<(), ModelError> {
        if v.len() != self.dim {
            return Err(ModelError::DimensionMismatch { expected: self.dim, got: v.len() });
        }
        Ok(())
    }
}

/// Total mass `λ_t^{-ν} exp(-π|end-start|²/λ_t²)` of the unnormalized bridge
/// measure from `start` to `end` over time `t`.
pub fn measure_mass(params: &ModelParams, start: &[f64], end: &[f64], t: f64) -> Result<f64, ModelError> {
    if !(t > 0.0) {
        return Err(ModelError::NonPositiveTime(t));
    }
    params.check_vector(start)?;
    params.check_vector(end)?;
    let lt = params.lambda_at(t);
    let d2: f64 = start.iter().zip(end).map(|(a, b)| (b - a) * (b - a)).sum();
    Ok(lt.powi(-(params.dim() as i32)) * (-PI * d2 / (lt * lt)).exp())
}

/// A trajectory sampled on the uniform grid `t_j = j h`, `j = 0..=steps`.
///
/// Positions are stored flat, `dim` coordinates per grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct Path {
    dim: usize,
    step: f64,
    positions: Vec<f64>,
}

impl Path {
    /// Builds a path from flat coordinates. `positions.len()` must be a
    /// positive multiple of `dim` with at least two grid points.
    pub fn from_flat(dim: usize, step: f64, positions: Vec<f64>) -> Result<Self, ModelError> {
        if dim == 0 || !positions.len().is_multiple_of(dim) || positions.len() < 2 * dim {
            return Err(ModelError::InvalidParameter {
                field: "positions",
                reason: format!("{} coordinates do not form at least two {dim}-vectors", positions.len()),
            });
        }
        Ok(Self { dim, step, positions })
    }

    /// A constant path sitting at `point` for `steps` steps.
    pub fn constant(point: &[f64], steps: usize, step: f64) -> Self {
        let positions = point.iter().copied().cycle().take(point.len() * (steps + 1)).collect();
        Self { dim: point.len(), step, positions }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    /// Number of grid steps; the path has `steps() + 1` points.
    pub fn steps(&self) -> usize {
        self.positions.len() / self.dim - 1
    }

    pub fn total_time(&self) -> f64 {
        self.steps() as f64 * self.step
    }

    #[inline]
    pub fn point(&self, j: usize) -> &[f64] {
        &self.positions[j * self.dim..(j + 1) * self.dim]
    }

    #[inline]
    pub fn point_mut(&mut self, j: usize) -> &mut [f64] {
        &mut self.positions[j * self.dim..(j + 1) * self.dim]
    }

    pub fn start(&self) -> &[f64] {
        self.point(0)
    }

    pub fn end(&self) -> &[f64] {
        self.point(self.steps())
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.positions
    }

    /// Applies `f` to every grid point.
    pub fn map_points(&self, mut f: impl FnMut(&[f64], &mut [f64])) -> Path {
        let mut out = self.clone();
        for j in 0..=self.steps() {
            f(self.point(j), out.point_mut(j));
        }
        out
    }
}

#[inline]
pub(crate) fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|c| c * c).sum()
}
