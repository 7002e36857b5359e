//! Radial pair potentials `u(y) = f(|y|²)`.
//!
//! A potential is superharmonic (`Δu ≤ 0` away from the origin) exactly when
//! `ν f'(s) + 2 s f''(s) ≤ 0` for all `s > 0`; this combination is called the
//! radial operator below and `Δu(y) = 2 [ν f'(s) + 2 s f''(s)]` at `s = |y|²`.
//!
//! Besides the closed-form catalog (Coulomb, power laws, induced dipole) the
//! module solves `ν f' + 2 s f'' = -g` for an arbitrary nonnegative source `g`
//! with boundary data `f(a) = c₁`, `f'(b) = c₂ b^{-ν/2}`.

use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::quadrature::{integrate_bounds, Bound, QuadError, Tolerance};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PotentialError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("{which} integral diverges: {source}")]
    Divergent { which: OdeIntegral, source: QuadError },
    #[error("evaluator failed at s = {s}")]
    EvaluationFailed { s: f64 },
}

/// Names the integral of the radial ODE solution that failed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OdeIntegral {
    Inner,
    Outer,
    Homogeneous,
}

impl fmt::Display for OdeIntegral {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OdeIntegral::Inner => "inner",
            OdeIntegral::Outer => "outer",
            OdeIntegral::Homogeneous => "homogeneous (c2)",
        })
    }
}

pub type Source = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Source term and boundary data of the radial equation `ν f' + 2 s f'' = -g`.
#[derive(Clone)]
pub struct PotentialSpec {
    g: Source,
    a: Bound,
    b: Bound,
    c1: f64,
    c2: f64,
    dim: usize,
}

impl fmt::Debug for PotentialSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PotentialSpec")
            .field("a", &self.a)
            .field("b", &self.b)
            .field("c1", &self.c1)
            .field("c2", &self.c2)
            .field("dim", &self.dim)
            .finish_non_exhaustive()
    }
}

impl PotentialSpec {
    /// `a` and `b` are positive reals or `f64::INFINITY`. The source must be
    /// nonnegative on the default certification grid.
    pub fn new(g: Source, a: f64, b: f64, c1: f64, c2: f64, dim: usize) -> Result<Self, PotentialError> {
        if dim == 0 {
            return Err(PotentialError::Domain("dimension must be at least 1".into()));
        }
        for (name, v) in [("a", a), ("b", b)] {
            if !(v > 0.0) || v.is_nan() {
                return Err(PotentialError::Domain(format!("{name} must be positive or +inf, got {v}")));
            }
        }
        if !c1.is_finite() || !c2.is_finite() {
            return Err(PotentialError::Domain("c1 and c2 must be finite".into()));
        }
        for s in default_grid() {
            let v = g(s);
            if !(v >= 0.0) {
                return Err(PotentialError::Domain(format!("source g({s}) = {v} is not nonnegative")));
            }
        }
        Ok(Self { g, a: Bound::from_f64(a), b: Bound::from_f64(b), c1, c2, dim })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn source(&self, s: f64) -> f64 {
        (self.g)(s)
    }

    fn half_dim(&self) -> f64 {
        self.dim as f64 / 2.0
    }

    /// `∫_b^x g(t) t^{ν/2-1} dt`.
    fn inner(&self, x: f64, tol: Tolerance) -> Result<f64, PotentialError> {
        let p = self.half_dim() - 1.0;
        let g = &self.g;
        let integrand = |t: f64| g(t) * t.powf(p);
        // Far from b, split through infinity when the tail converges.
        if let Bound::Finite(b) = self.b {
            if x > 64.0 * b {
                let from_b = integrate_bounds(integrand, Bound::Finite(b), Bound::Infinity, tol);
                let from_x = integrate_bounds(integrand, Bound::Finite(x), Bound::Infinity, tol);
                if let (Ok(fb), Ok(fx)) = (from_b, from_x) {
                    return Ok(fb - fx);
                }
            }
        }
        integrate_bounds(integrand, self.b, Bound::Finite(x), tol)
            .map_err(|source| PotentialError::Divergent { which: OdeIntegral::Inner, source })
    }

    /// Homogeneous part multiplying c₂.
    fn homogeneous(&self, s: f64) -> Result<f64, PotentialError> {
        let diverges = || PotentialError::Divergent {
            which: OdeIntegral::Homogeneous,
            source: QuadError::NoConvergence { estimate: f64::INFINITY, error: f64::INFINITY, intervals: 0 },
        };
        if self.dim == 2 {
            return match self.a {
                Bound::Finite(a) => Ok(s.ln() - a.ln()),
                Bound::Infinity => Err(diverges()),
            };
        }
        let e = 1.0 - self.half_dim();
        match self.a {
            Bound::Finite(a) => Ok((s.powf(e) - a.powf(e)) / e),
            Bound::Infinity if e < 0.0 => Ok(s.powf(e) / e),
            Bound::Infinity => Err(diverges()),
        }
    }

    /// First and second derivative of the solution at `s`.
    fn derivatives(&self, s: f64, tol: Tolerance) -> Result<(f64, f64), PotentialError> {
        let d1 = s.powf(-self.half_dim()) * (self.c2 - 0.5 * self.inner(s, tol)?);
        let d2 = -(self.half_dim() / s) * d1 - self.source(s) / (2.0 * s);
        Ok((d1, d2))
    }
}

/// `f(s) = c₁ - ½ ∫_a^s dx x^{-ν/2} ∫_b^x dt g(t) t^{ν/2-1} + c₂ h(s)` with
/// `h` the homogeneous solution vanishing at `a`. Infinite limits are mapped
/// to finite ranges by `x -> 1/x`.
pub fn solve_radial_ode(spec: &PotentialSpec, s: f64, tol: Tolerance) -> Result<f64, PotentialError> {
    if !(s > 0.0) {
        return Err(PotentialError::Domain(format!("s must be positive, got {s}")));
    }
    let inner_tol = Tolerance { abs: tol.abs * 1e-2, rel: tol.rel.min(1e-13), ..tol };
    let half = spec.half_dim();
    let mut inner_failure: Option<PotentialError> = None;
    let outer = integrate_bounds(
        |x: f64| {
            if inner_failure.is_some() {
                return f64::NAN;
            }
            match spec.inner(x, inner_tol) {
                Ok(v) => x.powf(-half) * v,
                Err(e) => {
                    inner_failure = Some(e);
                    f64::NAN
                }
            }
        },
        spec.a,
        Bound::Finite(s),
        tol,
    );
    if let Some(e) = inner_failure {
        return Err(e);
    }
    let outer = outer.map_err(|source| PotentialError::Divergent { which: OdeIntegral::Outer, source })?;
    let homogeneous = if spec.c2 == 0.0 { 0.0 } else { spec.c2 * spec.homogeneous(s)? };
    Ok(spec.c1 - 0.5 * outer + homogeneous)
}

/// Closed-form or tabulated profile before scaling and softening.
#[derive(Clone)]
enum Shape {
    Zero,
    /// `s^p`
    Power(f64),
    /// `ln s`
    Log,
    Ode {
        spec: PotentialSpec,
        tol: Tolerance,
    },
}

/// A radial potential `u(y) = f(|y|²)` with `f(s) = scale · shape(s + shift)`.
#[derive(Clone)]
pub struct RadialPotential {
    label: String,
    shape: Shape,
    scale: f64,
    shift: f64,
    claims_superharmonic: bool,
}

impl fmt::Debug for RadialPotential {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RadialPotential")
            .field("label", &self.label)
            .field("scale", &self.scale)
            .field("shift", &self.shift)
            .field("claims_superharmonic", &self.claims_superharmonic)
            .finish_non_exhaustive()
    }
}

/// Values of `f`, `f'` and `Δu` at one squared distance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadialTerms {
    pub value: f64,
    pub slope: f64,
    pub laplacian: f64,
}

impl RadialPotential {
    /// `u ≡ 0`.
    pub fn zero() -> Self {
        Self { label: "zero".into(), shape: Shape::Zero, scale: 0.0, shift: 0.0, claims_superharmonic: true }
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn claims_superharmonic(&self) -> bool {
        self.claims_superharmonic
    }

    pub fn is_zero(&self) -> bool {
        matches!(self.shape, Shape::Zero) || self.scale == 0.0
    }

    /// Softening ε² added to the argument.
    pub fn shift(&self) -> f64 {
        self.shift
    }

    /// `c · u`. A negative factor drops the superharmonicity claim.
    pub fn scaled(&self, c: f64) -> Self {
        let mut out = self.clone();
        out.scale *= c;
        out.claims_superharmonic = if c == 0.0 { true } else { self.claims_superharmonic && c > 0.0 };
        out.label = format!("{}*{}", c, self.label);
        out
    }

    pub fn f(&self, s: f64) -> f64 {
        if self.is_zero() {
            return 0.0;
        }
        let q = s + self.shift;
        self.scale
            * match &self.shape {
                Shape::Zero => 0.0,
                Shape::Power(p) => power(q, *p),
                Shape::Log => q.ln(),
                Shape::Ode { spec, tol } => solve_radial_ode(spec, q, *tol).unwrap_or(f64::NAN),
            }
    }

    pub fn df(&self, s: f64) -> f64 {
        self.derivatives(s).0
    }

    pub fn d2f(&self, s: f64) -> f64 {
        self.derivatives(s).1
    }

    fn derivatives(&self, s: f64) -> (f64, f64) {
        if self.is_zero() {
            return (0.0, 0.0);
        }
        let q = s + self.shift;
        let (d1, d2) = match &self.shape {
            Shape::Zero => (0.0, 0.0),
            Shape::Power(p) => {
                if *p == 0.0 {
                    (0.0, 0.0)
                } else {
                    let qp = power(q, p - 2.0);
                    (p * qp * q, p * (p - 1.0) * qp)
                }
            }
            Shape::Log => (1.0 / q, -1.0 / (q * q)),
            Shape::Ode { spec, tol } => spec.derivatives(q, *tol).unwrap_or((f64::NAN, f64::NAN)),
        };
        (self.scale * d1, self.scale * d2)
    }

    /// `ν f'(s) + 2 s f''(s)`, evaluated in factored form for the closed-form
    /// shapes so that harmonic cases come out as exact zeros and the soft-core
    /// term carries no cancellation.
    pub fn radial_operator(&self, dim: usize, s: f64) -> f64 {
        if self.is_zero() {
            return 0.0;
        }
        let nu = dim as f64;
        let q = s + self.shift;
        match &self.shape {
            Shape::Zero => 0.0,
            Shape::Power(p) => {
                if *p == 0.0 {
                    0.0
                } else {
                    self.scale * p * power(q, p - 2.0) * ((nu + 2.0 * (p - 1.0)) * s + nu * self.shift)
                }
            }
            Shape::Log => self.scale * ((nu - 2.0) * s + nu * self.shift) / (q * q),
            Shape::Ode { .. } => {
                let (d1, d2) = self.derivatives(s);
                nu * d1 + 2.0 * s * d2
            }
        }
    }

    /// `f`, `f'` and `Δu = 2 (ν f' + 2 s f'')` at `s`, sharing the power
    /// evaluation between the three.
    #[inline]
    pub fn terms(&self, dim: usize, s: f64) -> RadialTerms {
        if self.is_zero() {
            return RadialTerms { value: 0.0, slope: 0.0, laplacian: 0.0 };
        }
        let q = s + self.shift;
        match &self.shape {
            Shape::Power(p) if *p != 0.0 => {
                let qp = power(q, *p);
                let value = self.scale * qp;
                let slope = self.scale * p * qp / q;
                let nu = dim as f64;
                let laplacian = 2.0 * slope / q * ((nu + 2.0 * (p - 1.0)) * s + nu * self.shift);
                RadialTerms { value, slope, laplacian }
            }
            _ => RadialTerms { value: self.f(s), slope: self.df(s), laplacian: 2.0 * self.radial_operator(dim, s) },
        }
    }

    /// `f(0)` is infinite or undefined.
    pub fn singular_at_origin(&self) -> bool {
        !self.f(0.0).is_finite()
    }
}

#[inline]
fn power(q: f64, p: f64) -> f64 {
    if p == -0.5 {
        1.0 / q.sqrt()
    } else if p == -1.0 {
        1.0 / q
    } else if p == 1.0 {
        q
    } else if p == p.trunc() && p.abs() < 16.0 {
        q.powi(p as i32)
    } else {
        q.powf(p)
    }
}

/// Coulomb potential in ν dimensions with the given sign (+1 repulsive).
///
/// ν = 2 gives `u = -sign · ln|y|`, ν ≥ 3 gives `sign · |y|^{2-ν}`, and
/// ν = 1 gives `-sign · |y|`, so that +1 is repulsive in every dimension.
pub fn make_coulomb(dim: usize, sign: f64) -> Result<RadialPotential, PotentialError> {
    if dim < 1 {
        return Err(PotentialError::Domain("dimension must be at least 1".into()));
    }
    if sign != 1.0 && sign != -1.0 {
        return Err(PotentialError::Domain(format!("sign must be +1 or -1, got {sign}")));
    }
    let (shape, scale) = match dim {
        1 => (Shape::Power(0.5), -sign),
        2 => (Shape::Log, -sign / 2.0),
        _ => (Shape::Power(1.0 - dim as f64 / 2.0), sign),
    };
    let label = if sign > 0.0 { "coulomb" } else { "-coulomb" };
    // Harmonic away from the origin for either sign.
    Ok(RadialPotential { label: label.into(), shape, scale, shift: 0.0, claims_superharmonic: true })
}

/// `f(s) = coefficient · s^{-α}`. Superharmonic iff the induced source
/// `g(s) = coefficient · α (ν - 2 - 2α) s^{-α-1}` is nonnegative.
pub fn make_power_law(alpha: f64, dim: usize, coefficient: f64) -> Result<RadialPotential, PotentialError> {
    if dim < 1 || !alpha.is_finite() || !coefficient.is_finite() {
        return Err(PotentialError::Domain("power law needs ν ≥ 1 and finite α, coefficient".into()));
    }
    let claims = coefficient * alpha * (dim as f64 - 2.0 - 2.0 * alpha) >= 0.0;
    Ok(RadialPotential {
        label: format!("power-law(alpha={alpha})"),
        shape: Shape::Power(-alpha),
        scale: coefficient,
        shift: 0.0,
        claims_superharmonic: claims,
    })
}

/// `f(s) = -s^{1-α} / ((α-1)(2α-ν))`, the solution for `g(s) = s^{-α}` with
/// both boundary points at infinity. ν = 3, α = 4 is the induced
/// dipole-dipole (van der Waals) attraction `-|y|^{-6}/15`.
pub fn make_dipole(alpha: f64, dim: usize) -> Result<RadialPotential, PotentialError> {
    let nu = dim as f64;
    if dim < 3 || !(alpha > nu / 2.0) || !alpha.is_finite() {
        return Err(PotentialError::Domain(format!("dipole needs ν ≥ 3 and α > ν/2, got ν={dim}, α={alpha}")));
    }
    Ok(RadialPotential {
        label: format!("dipole(alpha={alpha})"),
        shape: Shape::Power(1.0 - alpha),
        scale: -1.0 / ((alpha - 1.0) * (2.0 * alpha - nu)),
        shift: 0.0,
        claims_superharmonic: true,
    })
}

/// The radial ODE solution as a potential. Every evaluation runs the nested
/// quadrature, so this is meant for certification rather than hot loops.
pub fn make_ode(spec: PotentialSpec, tol: Tolerance) -> RadialPotential {
    RadialPotential { label: "ode".into(), shape: Shape::Ode { spec, tol }, scale: 1.0, shift: 0.0, claims_superharmonic: true }
}

/// `f_ε(s) = f(s + ε²)`. The result must be recertified.
pub fn soft_core(pot: &RadialPotential, epsilon: f64) -> Result<RadialPotential, PotentialError> {
    if !(epsilon >= 0.0) || !epsilon.is_finite() {
        return Err(PotentialError::Domain(format!("soft-core epsilon must be nonnegative, got {epsilon}")));
    }
    if epsilon == 0.0 {
        return Ok(pot.clone());
    }
    let mut out = pot.clone();
    out.shift += epsilon * epsilon;
    out.claims_superharmonic = false;
    out.label = format!("{}[eps={}]", pot.label, epsilon);
    Ok(out)
}

/// `Δu(y) = 2 [ν f'(s) + 2 s f''(s)]` at `s = |y|²`.
pub fn laplacian_u(pot: &RadialPotential, dim: usize, s: f64) -> Result<f64, PotentialError> {
    if !(s > 0.0) {
        return Err(PotentialError::Domain(format!("squared norm must be positive, got {s}")));
    }
    Ok(2.0 * pot.radial_operator(dim, s))
}

/// 200 log-spaced points on `[1e-3, 1e3]`.
pub fn default_grid() -> Vec<f64> {
    log_grid(1e-3, 1e3, 200)
}

pub fn log_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![lo];
    }
    let (l0, l1) = (lo.ln(), hi.ln());
    let mut grid: Vec<f64> = (0..count).map(|i| (l0 + (l1 - l0) * i as f64 / (count - 1) as f64).exp()).collect();
    grid[0] = lo;
    grid[count - 1] = hi;
    grid
}

/// Outcome of a grid certification.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SuperharmonicReport {
    pub holds: bool,
    /// Largest value of `ν f' + 2 s f''` on the grid.
    pub worst_value: f64,
    pub worst_s: f64,
}

/// Checks `ν f'(s) + 2 s f''(s) ≤ 1e-12 · max(1, |f'(s)| s)` at every grid
/// point and reports the largest value of the radial operator.
pub fn verify_superharmonic(pot: &RadialPotential, dim: usize, grid: &[f64]) -> Result<SuperharmonicReport, PotentialError> {
    if grid.is_empty() {
        return Err(PotentialError::Domain("empty certification grid".into()));
    }
    let mut report = SuperharmonicReport { holds: true, worst_value: f64::NEG_INFINITY, worst_s: grid[0] };
    for &s in grid {
        if !(s > 0.0) {
            return Err(PotentialError::Domain(format!("grid point {s} is not positive")));
        }
        let value = pot.radial_operator(dim, s);
        let slope = pot.df(s);
        if !value.is_finite() || !slope.is_finite() {
            return Err(PotentialError::EvaluationFailed { s });
        }
        if value > 1e-12 * (slope.abs() * s).max(1.0) {
            report.holds = false;
        }
        if value > report.worst_value {
            report.worst_value = value;
            report.worst_s = s;
        }
    }
    Ok(report)
}
