//! Interaction functionals of a grid path and their derivatives in the
//! endpoint shift `x`.
//!
//! All integrals over `[0, β]` use the left-endpoint rectangle rule with the
//! same offsets `j` on every leg, so the quadrature of the self-interaction
//! pairs `ω(lβ + t_j)` with `ω(kβ + t_j)` exactly. Values are the exponents of
//! the Feynman-Kac weight `e^{-E}` and are dimensionless.

use thiserror::Error;

use crate::model::{ModelError, ModelParams, Path};
use crate::potentials::RadialPotential;

/// Grid location of a coincidence where a singular potential was hit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HitSite {
    /// Legs `k < l` of ω₀ at offset `j`.
    SelfPair { k: usize, l: usize, j: usize },
    /// Leg `k` of ω₀ against external particle `i` at offset `j`.
    External { k: usize, i: usize, j: usize },
    /// External particles `i < i2` at offset `j`.
    World { i: usize, i2: usize, j: usize },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnergyError {
    /// `u` was infinite or undefined at a grid coincidence. `repulsive` is
    /// true when the value was `+∞`, which only zeroes the weight.
    #[error("singular configuration at {site:?} (repulsive: {repulsive})")]
    Singular { site: HitSite, repulsive: bool },
    #[error("operation requires quantum external trajectories")]
    ClassicalWorld,
    #[error("path has {got} steps, expected {expected}")]
    StepMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// `(E, ∇ₓE, ΔₓE)` for one configuration and shift.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyTerms {
    pub value: f64,
    pub gradient: Vec<f64>,
    pub laplacian: f64,
}

impl EnergyTerms {
    pub fn zero(dim: usize) -> Self {
        Self { value: 0.0, gradient: vec![0.0; dim], laplacian: 0.0 }
    }

    pub fn add(&mut self, other: &EnergyTerms) {
        self.value += other.value;
        for (g, o) in self.gradient.iter_mut().zip(&other.gradient) {
            *g += o;
        }
        self.laplacian += other.laplacian;
    }

    pub fn gradient_norm2(&self) -> f64 {
        self.gradient.iter().map(|g| g * g).sum()
    }
}

/// Accumulates `weight · u(y)`, `weight · coef · ∇u(y)` and
/// `weight · coef² · Δu(y)`.
#[inline]
fn accumulate(acc: &mut EnergyTerms, pot: &RadialPotential, y: &[f64], coef: f64, weight: f64, site: HitSite) -> Result<(), EnergyError> {
    let s: f64 = y.iter().map(|c| c * c).sum();
    let t = pot.terms(y.len(), s);
    if !t.value.is_finite() || !t.slope.is_finite() || !t.laplacian.is_finite() {
        return Err(EnergyError::Singular { site, repulsive: t.value == f64::INFINITY });
    }
    acc.value += weight * t.value;
    let g = 2.0 * weight * coef * t.slope;
    for (a, yc) in acc.gradient.iter_mut().zip(y) {
        *a += g * yc;
    }
    acc.laplacian += weight * coef * coef * t.laplacian;
    Ok(())
}

fn check_bridge(params: &ModelParams, path: &Path) -> Result<(), EnergyError> {
    if path.steps() != params.bridge_steps() {
        return Err(EnergyError::StepMismatch { expected: params.bridge_steps(), got: path.steps() });
    }
    params.check_vector(path.start())?;
    Ok(())
}

/// `E_ω(x) = Σ_{k<l} ∫₀^β u(ω(lβ+t) - ω(kβ+t) + ((l-k)/n) x) dt` with its
/// gradient and Laplacian in `x`. At `x = 0` the value is `βU(ω)`.
pub fn self_energy(params: &ModelParams, path: &Path, pot: &RadialPotential, x: &[f64]) -> Result<EnergyTerms, EnergyError> {
    check_bridge(params, path)?;
    params.check_vector(x)?;
    let dim = params.dim();
    let mut acc = EnergyTerms::zero(dim);
    if pot.is_zero() {
        return Ok(acc);
    }
    let (n, slices) = (params.legs(), params.slices());
    let weight = params.step();
    let mut y = vec![0.0; dim];
    for k in 0..n {
        for l in k + 1..n {
            let coef = (l - k) as f64 / n as f64;
            for j in 0..slices {
                let a = path.point(k * slices + j);
                let b = path.point(l * slices + j);
                for c in 0..dim {
                    y[c] = b[c] - a[c] + coef * x[c];
                }
                accumulate(&mut acc, pot, &y, coef, weight, HitSite::SelfPair { k, l, j })?;
            }
        }
    }
    Ok(acc)
}

/// The configuration producing the external field on ω₀.
#[derive(Debug, Clone)]
pub enum WorldKind {
    /// Infinitely heavy particles fixed at the given positions.
    Classical(Vec<Vec<f64>>),
    /// Trajectories over `[0, β]` on the `J`-step grid, interacting among
    /// themselves through `u2`.
    Quantum { paths: Vec<Path>, u2: RadialPotential },
}

#[derive(Debug, Clone)]
pub struct ExternalWorld {
    kind: WorldKind,
    u3: RadialPotential,
}

impl ExternalWorld {
    pub fn classical(params: &ModelParams, ions: Vec<Vec<f64>>, u3: RadialPotential) -> Result<Self, EnergyError> {
        for ion in &ions {
            params.check_vector(ion)?;
        }
        Ok(Self { kind: WorldKind::Classical(ions), u3 })
    }

    pub fn quantum(params: &ModelParams, paths: Vec<Path>, u2: RadialPotential, u3: RadialPotential) -> Result<Self, EnergyError> {
        for p in &paths {
            if p.steps() != params.slices() {
                return Err(EnergyError::StepMismatch { expected: params.slices(), got: p.steps() });
            }
            params.check_vector(p.start())?;
        }
        Ok(Self { kind: WorldKind::Quantum { paths, u2 }, u3 })
    }

    pub fn empty(u3: RadialPotential) -> Self {
        Self { kind: WorldKind::Classical(Vec::new()), u3 }
    }

    pub fn kind(&self) -> &WorldKind {
        &self.kind
    }

    pub fn u3(&self) -> &RadialPotential {
        &self.u3
    }

    /// Number M of external particles.
    pub fn len(&self) -> usize {
        match &self.kind {
            WorldKind::Classical(ions) => ions.len(),
            WorldKind::Quantum { paths, .. } => paths.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    fn position(&self, i: usize, j: usize) -> &[f64] {
        match &self.kind {
            WorldKind::Classical(ions) => &ions[i],
            WorldKind::Quantum { paths, .. } => paths[i].point(j),
        }
    }
}

/// `E_{ω₀,ω^M}(x) = Σ_k Σ_i ∫₀^β u₃(ω₀(kβ+t) - ω_i(t) + ((kβ+t)/(nβ)) x) dt`,
/// with the shift fraction taken on the grid as `(kJ+j)/(nJ)`.
pub fn external_energy(params: &ModelParams, path0: &Path, world: &ExternalWorld, x: &[f64]) -> Result<EnergyTerms, EnergyError> {
    check_bridge(params, path0)?;
    params.check_vector(x)?;
    let dim = params.dim();
    let mut acc = EnergyTerms::zero(dim);
    if world.is_empty() || world.u3.is_zero() {
        return Ok(acc);
    }
    let (n, slices) = (params.legs(), params.slices());
    let total = (n * slices) as f64;
    let weight = params.step();
    let mut y = vec![0.0; dim];
    for k in 0..n {
        for j in 0..slices {
            let coef = (k * slices + j) as f64 / total;
            let p = path0.point(k * slices + j);
            for i in 0..world.len() {
                let q = world.position(i, j);
                for c in 0..dim {
                    y[c] = p[c] - q[c] + coef * x[c];
                }
                accumulate(&mut acc, &world.u3, &y, coef, weight, HitSite::External { k, i, j })?;
            }
        }
    }
    Ok(acc)
}

/// `βU₂ = Σ_{i<i'} ∫₀^β u₂(ω_i(t) - ω_{i'}(t)) dt` for quantum worlds.
pub fn pair_energy_u2(params: &ModelParams, world: &ExternalWorld) -> Result<f64, EnergyError> {
    let (paths, u2) = match &world.kind {
        WorldKind::Quantum { paths, u2 } => (paths, u2),
        WorldKind::Classical(_) => return Err(EnergyError::ClassicalWorld),
    };
    let dim = params.dim();
    let mut acc = EnergyTerms::zero(dim);
    if u2.is_zero() {
        return Ok(0.0);
    }
    let mut y = vec![0.0; dim];
    for i in 0..paths.len() {
        for i2 in i + 1..paths.len() {
            for j in 0..params.slices() {
                let (a, b) = (paths[i].point(j), paths[i2].point(j));
                for c in 0..dim {
                    y[c] = a[c] - b[c];
                }
                accumulate(&mut acc, u2, &y, 0.0, params.step(), HitSite::World { i, i2, j })?;
            }
        }
    }
    Ok(acc.value)
}
