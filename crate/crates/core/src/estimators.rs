//! Monte Carlo estimators for the isolated bridge.
//!
//! All estimands are built on the normalized 0→0 bridge law over `nβ`:
//! `I(x) = E[e^{-E_ω(x)}]` up to the common mass `λ_{nβ}^{-ν}`, which cancels
//! in every ratio reported here. The same bridges serve every shift `x` of a
//! run (common random numbers) and errors come from a delete-one jackknife
//! over samples.

use rayon::prelude::*;
use thiserror::Error;

use crate::bridges::{sample_bridge, tilt_path};
use crate::energy::{self_energy, EnergyError, EnergyTerms};
use crate::model::{ModelError, ModelParams};
use crate::potentials::{default_grid, verify_superharmonic, PotentialError, RadialPotential};
use crate::rng::{stream, Lane};
use crate::stats::{Columns, Diagnostics, Estimate};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimateError {
    #[error("degenerate estimate: all denominator weights vanish ({diagnostics:?})")]
    Degenerate { diagnostics: Diagnostics },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Potential(#[from] PotentialError),
    #[error(transparent)]
    Energy(#[from] EnergyError),
}

/// Sampling controls shared by every estimator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunConfig {
    pub samples: usize,
    pub seed: u64,
    /// Worker threads; 0 uses the global pool. Never changes results.
    pub workers: usize,
    /// Exponents below `-e_max` are clamped.
    pub e_max: f64,
}

impl RunConfig {
    pub fn new(samples: usize, seed: u64) -> Self {
        Self { samples, seed, workers: 0, e_max: 700.0 }
    }

    pub fn with_workers(mut self, workers: usize) -> Self {
        self.workers = workers;
        self
    }

    pub(crate) fn validate(&self) -> Result<(), EstimateError> {
        if self.samples < 2 {
            return Err(EstimateError::InvalidInput(format!("need at least 2 samples, got {}", self.samples)));
        }
        if !(self.e_max > 0.0) {
            return Err(EstimateError::InvalidInput("e_max must be positive".into()));
        }
        Ok(())
    }
}

/// Evaluates `f` for every sample index in order, in parallel.
pub(crate) fn map_samples<T, F>(run: &RunConfig, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(u64) -> T + Sync + Send,
{
    let work = || (0..run.samples as u64).into_par_iter().map(&f).collect::<Vec<T>>();
    if run.workers == 0 {
        work()
    } else {
        match rayon::ThreadPoolBuilder::new().num_threads(run.workers).build() {
            Ok(pool) => pool.install(work),
            Err(_) => work(),
        }
    }
}

/// One energy evaluation after the singular-hit policy.
#[derive(Debug, Clone)]
pub(crate) enum Eval {
    Finite(EnergyTerms),
    /// Repulsive coincidence: the weight is exactly zero.
    Vanishing,
    /// Attractive coincidence: the whole sample is dropped.
    Reject,
}

impl Eval {
    pub(crate) fn from_result(r: Result<EnergyTerms, EnergyError>) -> Result<Self, EstimateError> {
        match r {
            Ok(t) => Ok(Eval::Finite(t)),
            Err(EnergyError::Singular { repulsive: true, .. }) => Ok(Eval::Vanishing),
            Err(EnergyError::Singular { repulsive: false, .. }) => Ok(Eval::Reject),
            Err(e) => Err(e.into()),
        }
    }
}

/// Per-sample exponents for several columns, with rejected samples removed.
#[derive(Debug, Clone, Default)]
pub(crate) struct ExponentTable {
    /// `exponents[c][i]`; `+∞` encodes a vanishing weight.
    pub exponents: Vec<Vec<f64>>,
    /// Extra per-sample quantities carried along with the weights.
    pub extras: Vec<Vec<f64>>,
    pub diagnostics: Diagnostics,
}

/// A sample contributes `columns` exponents and `extras` side values, or is
/// rejected; `hits` counts singular coincidences met while evaluating it.
pub(crate) struct SampleRow {
    pub exponents: Vec<f64>,
    pub extras: Vec<f64>,
    pub hits: u64,
    pub rejected: bool,
    pub sign_violation: bool,
}

impl ExponentTable {
    pub(crate) fn collect(rows: Vec<SampleRow>, columns: usize, extras: usize, e_max: f64) -> Self {
        let mut table = ExponentTable {
            exponents: vec![Vec::with_capacity(rows.len()); columns],
            extras: vec![Vec::with_capacity(rows.len()); extras],
            diagnostics: Diagnostics::default(),
        };
        for row in rows {
            table.diagnostics.singular_hits += row.hits;
            if row.rejected {
                table.diagnostics.rejected += 1;
                continue;
            }
            if row.sign_violation {
                table.diagnostics.sign_violations += 1;
            }
            for (col, mut e) in table.exponents.iter_mut().zip(row.exponents) {
                if e < -e_max {
                    e = -e_max;
                    table.diagnostics.clamp_hits += 1;
                }
                col.push(e);
            }
            for (col, v) in table.extras.iter_mut().zip(row.extras) {
                col.push(v);
            }
        }
        table
    }

    pub(crate) fn len(&self) -> usize {
        self.exponents.first().map_or(0, Vec::len)
    }

    /// Smallest finite exponent over all columns; weights are reported
    /// relative to it so that none overflows.
    pub(crate) fn reference(&self) -> f64 {
        let r = self.exponents.iter().flatten().copied().filter(|e| e.is_finite()).fold(f64::INFINITY, f64::min);
        if r.is_finite() {
            r
        } else {
            0.0
        }
    }

    pub(crate) fn weights(&self, reference: f64) -> Vec<Vec<f64>> {
        self.exponents.iter().map(|col| col.iter().map(|e| (reference - e).exp()).collect()).collect()
    }
}

/// Samples 0→0 bridges and evaluates the self-energy at every shift.
/// Extras per shift are `|∇E|²` and `ΔE`, in that order.
pub(crate) fn isolated_table(
    params: &ModelParams,
    pot: &RadialPotential,
    shifts: &[Vec<f64>],
    run: &RunConfig,
) -> Result<ExponentTable, EstimateError> {
    run.validate()?;
    for x in shifts {
        params.check_vector(x)?;
    }
    let origin = vec![0.0; params.dim()];
    let rows = map_samples(run, |i| -> Result<SampleRow, EstimateError> {
        let mut rng = stream(run.seed, Lane::Bridge, i);
        let path = sample_bridge(params, &origin, &origin, params.bridge_steps(), &mut rng);
        let mut row = SampleRow {
            exponents: Vec::with_capacity(shifts.len()),
            extras: Vec::with_capacity(2 * shifts.len()),
            hits: 0,
            rejected: false,
            sign_violation: false,
        };
        for x in shifts {
            match Eval::from_result(self_energy(params, &path, pot, x))? {
                Eval::Finite(t) => {
                    row.sign_violation |= t.laplacian > 0.0;
                    row.exponents.push(t.value);
                    row.extras.push(t.gradient_norm2());
                    row.extras.push(t.laplacian);
                }
                Eval::Vanishing => {
                    row.hits += 1;
                    row.exponents.push(f64::INFINITY);
                    row.extras.extend([0.0, 0.0]);
                }
                Eval::Reject => {
                    row.hits += 1;
                    row.rejected = true;
                    break;
                }
            }
        }
        Ok(row)
    });
    let rows = rows.into_iter().collect::<Result<Vec<_>, _>>()?;
    Ok(ExponentTable::collect(rows, shifts.len(), 2 * shifts.len(), run.e_max))
}

fn finish(
    table: &ExponentTable,
    columns: &Columns,
    denominator: usize,
    stat: impl Fn(&[f64]) -> f64,
    run: &RunConfig,
) -> Result<Estimate, EstimateError> {
    if columns.len() < 2 || columns.sum(denominator) == 0.0 {
        return Err(EstimateError::Degenerate { diagnostics: table.diagnostics });
    }
    let (mean, stderr) = columns.jackknife(stat);
    Ok(Estimate { mean, stderr, n_samples: columns.len(), seed: run.seed, diagnostics: table.diagnostics })
}

/// The unnormalized estimand `I(x) = E[e^{-E_ω(x)}]` over normalized 0→0
/// bridges, with the plain `s/√N` error.
pub fn estimate_weight(params: &ModelParams, pot: &RadialPotential, x: &[f64], run: &RunConfig) -> Result<Estimate, EstimateError> {
    let table = isolated_table(params, pot, &[x.to_vec()], run)?;
    let reference = table.reference();
    let columns = Columns::new(table.weights(reference));
    if columns.len() < 2 {
        return Err(EstimateError::Degenerate { diagnostics: table.diagnostics });
    }
    let (mean, stderr) = columns.mean_stderr(0);
    let estimate = Estimate { mean, stderr, n_samples: columns.len(), seed: run.seed, diagnostics: table.diagnostics };
    Ok(estimate.scaled((-reference).exp()))
}

/// `I(x)/I(0)` from paired weights `e^{-E_ω(x)}`, `e^{-E_ω(0)}`.
pub fn estimate_ratio(params: &ModelParams, pot: &RadialPotential, x: &[f64], run: &RunConfig) -> Result<Estimate, EstimateError> {
    Ok(estimate_ratios(params, pot, &[x.to_vec()], run)?.remove(0))
}

/// `I(x)/I(0)` for every shift from one set of bridges.
pub fn estimate_ratios(
    params: &ModelParams,
    pot: &RadialPotential,
    shifts: &[Vec<f64>],
    run: &RunConfig,
) -> Result<Vec<Estimate>, EstimateError> {
    let mut all = shifts.to_vec();
    all.push(vec![0.0; params.dim()]);
    let table = isolated_table(params, pot, &all, run)?;
    let columns = Columns::new(table.weights(table.reference()));
    let base = shifts.len();
    (0..shifts.len()).map(|c| finish(&table, &columns, base, |m| m[c] / m[base], run)).collect()
}

/// The endpoint ratio `∫P_{0x} e^{-βU} / ∫P_{00} e^{-βU}`, i.e. the ratio
/// `I(x)/I(0)` times the free Gaussian factor `e^{-π x²/(n λ_β²)}`.
pub fn estimate_full_ratio(params: &ModelParams, pot: &RadialPotential, x: &[f64], run: &RunConfig) -> Result<Estimate, EstimateError> {
    Ok(estimate_ratio(params, pot, x, run)?.scaled(params.endpoint_factor(x)))
}

/// `ΔI(x)/I(0)` from the per-sample integrand
/// `e^{-E_ω(x)} (|∇E_ω(x)|² - ΔE_ω(x))`. The diagnostics report the fraction
/// of samples with a nonnegative integrand and flag uncertified potentials.
pub fn estimate_laplacian_i(params: &ModelParams, pot: &RadialPotential, x: &[f64], run: &RunConfig) -> Result<Estimate, EstimateError> {
    let certified = verify_superharmonic(pot, params.dim(), &default_grid()).map(|r| r.holds).unwrap_or(false);
    let mut table = isolated_table(params, pot, &[x.to_vec(), vec![0.0; params.dim()]], run)?;
    let w = table.weights(table.reference());
    let integrand: Vec<f64> = w[0]
        .iter()
        .zip(table.extras[0].iter().zip(&table.extras[1]))
        .map(|(wx, (g2, lap))| if *wx == 0.0 { 0.0 } else { wx * (g2 - lap) })
        .collect();
    let nonneg = integrand.iter().filter(|v| **v >= 0.0).count();
    table.diagnostics.nonnegative_fraction = Some(if integrand.is_empty() { 0.0 } else { nonneg as f64 / integrand.len() as f64 });
    table.diagnostics.uncertified = !certified;
    let denominator = w[1].clone();
    finish(&table, &Columns::new(vec![integrand, denominator]), 1, |m| m[0] / m[1], run)
}

/// One radius of a convexity scan.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanRow {
    pub radius: f64,
    pub ratio: Estimate,
    /// Three-point second divided difference of the ratio at this radius;
    /// absent at the ends of the scan.
    pub second_difference: Option<Estimate>,
    /// `ratio(r) - ratio(-r)` when `-r` is also scanned.
    pub even_gap: Option<Estimate>,
}

/// `I(r ê)/I(0)` along `axis` for every radius, from a single bridge
/// ensemble, with second differences and evenness gaps.
pub fn convexity_scan(
    params: &ModelParams,
    pot: &RadialPotential,
    axis: &[f64],
    radii: &[f64],
    run: &RunConfig,
) -> Result<Vec<ScanRow>, EstimateError> {
    params.check_vector(axis)?;
    let norm = axis.iter().map(|c| c * c).sum::<f64>().sqrt();
    if !(norm > 0.0) {
        return Err(EstimateError::InvalidInput("scan axis must be nonzero".into()));
    }
    if radii.is_empty() || !radii.windows(2).all(|w| w[0] < w[1]) {
        return Err(EstimateError::InvalidInput("radii must be strictly increasing".into()));
    }
    if !radii.contains(&0.0) || radii.iter().any(|r| !radii.contains(&-r)) {
        return Err(EstimateError::InvalidInput("radii must be symmetric around 0 and include 0".into()));
    }
    let unit: Vec<f64> = axis.iter().map(|c| c / norm).collect();
    let mut shifts: Vec<Vec<f64>> = radii.iter().map(|r| unit.iter().map(|c| r * c).collect()).collect();
    let zero = radii.iter().position(|r| *r == 0.0).unwrap_or(0);
    shifts[zero] = vec![0.0; params.dim()];
    let table = isolated_table(params, pot, &shifts, run)?;
    let columns = Columns::new(table.weights(table.reference()));
    if columns.len() < 2 || columns.sum(zero) == 0.0 {
        return Err(EstimateError::Degenerate { diagnostics: table.diagnostics });
    }
    let make =
        |(mean, stderr): (f64, f64)| Estimate { mean, stderr, n_samples: columns.len(), seed: run.seed, diagnostics: table.diagnostics };
    let mut rows = Vec::with_capacity(radii.len());
    for (c, &r) in radii.iter().enumerate() {
        let ratio = make(columns.jackknife(|m| m[c] / m[zero]));
        let second_difference = (c > 0 && c + 1 < radii.len()).then(|| {
            let (h0, h1) = (r - radii[c - 1], radii[c + 1] - r);
            make(columns.jackknife(|m| {
                let (lo, mid, hi) = (m[c - 1] / m[zero], m[c] / m[zero], m[c + 1] / m[zero]);
                2.0 * ((hi - mid) / h1 - (mid - lo) / h0) / (h0 + h1)
            }))
        });
        let mirror = radii.iter().position(|q| *q == -r).unwrap_or(c);
        let even_gap = Some(make(columns.jackknife(|m| (m[c] - m[mirror]) / m[zero])));
        rows.push(ScanRow { radius: r, ratio, second_difference, even_gap });
    }
    Ok(rows)
}

/// Result of the tilt-identity check.
#[derive(Debug, Clone, PartialEq)]
pub struct TiltCheck {
    /// `D` with its standard error.
    pub difference: Estimate,
    /// `e^{-πx²/(nλ_β²)} · mean e^{-βU(ω̃)}` over tilted 0→0 bridges.
    pub tilted_mean: f64,
    /// The same factor times `mean e^{-βU(ω')}` over direct 0→x bridges.
    pub direct_mean: f64,
}

/// Compares `e^{-πx²/(nλ_β²)} E_{00}[e^{-βU(ω̃)}]` with the same functional on
/// bridges sampled directly to `x`, both normalized by the mass of `P_{00}`.
/// Sample `i` of each side uses stream `i` of its own lane.
pub fn check_tilt_identity(params: &ModelParams, pot: &RadialPotential, x: &[f64], run: &RunConfig) -> Result<TiltCheck, EstimateError> {
    run.validate()?;
    params.check_vector(x)?;
    let origin = vec![0.0; params.dim()];
    // Free mass ratio P_{0x}(1)/P_{00}(1), which is also the tilt factor.
    let gauss = params.endpoint_factor(x);
    let steps = params.bridge_steps();
    let rows = map_samples(run, |i| -> Result<SampleRow, EstimateError> {
        let base = sample_bridge(params, &origin, &origin, steps, &mut stream(run.seed, Lane::Bridge, i));
        let tilted = tilt_path(&base, x);
        let direct = sample_bridge(params, &origin, x, steps, &mut stream(run.seed, Lane::Direct, i));
        let mut row = SampleRow { exponents: Vec::with_capacity(2), extras: Vec::new(), hits: 0, rejected: false, sign_violation: false };
        for path in [&tilted, &direct] {
            match Eval::from_result(self_energy(params, path, pot, &origin))? {
                Eval::Finite(t) => row.exponents.push(t.value),
                Eval::Vanishing => {
                    row.hits += 1;
                    row.exponents.push(f64::INFINITY);
                }
                Eval::Reject => {
                    row.hits += 1;
                    row.rejected = true;
                    break;
                }
            }
        }
        Ok(row)
    });
    let rows = rows.into_iter().collect::<Result<Vec<_>, _>>()?;
    let table = ExponentTable::collect(rows, 2, 0, run.e_max);
    if table.len() < 2 {
        return Err(EstimateError::Degenerate { diagnostics: table.diagnostics });
    }
    let reference = table.reference();
    let scale = (-reference).exp();
    let w = table.weights(reference);
    let diffs: Vec<f64> = w[0].iter().zip(&w[1]).map(|(a, b)| scale * gauss * (a - b)).collect();
    let columns = Columns::new(vec![diffs]);
    let (mean, stderr) = columns.mean_stderr(0);
    let n = table.len() as f64;
    let tilted_mean = scale * gauss * w[0].iter().sum::<f64>() / n;
    let direct_mean = scale * gauss * w[1].iter().sum::<f64>() / n;
    Ok(TiltCheck {
        difference: Estimate { mean, stderr, n_samples: table.len(), seed: run.seed, diagnostics: table.diagnostics },
        tilted_mean,
        direct_mean,
    })
}
