//! Batch experiment runner.
//!
//! Settings resolve from built-in defaults, then an optional config file,
//! then command-line flags. Each run writes `<command>.csv`,
//! `<command>.dat` and `<command>.manifest.toml` into the output directory;
//! the manifest is itself a config file that reproduces the run. The exit
//! code is 0 iff every row passes, 1 on a contract failure and 2 on a usage
//! or configuration error.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs;
use std::path::{Path as FsPath, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use crate::bridges::{sample_bridge, tilt_path};
use crate::energy::{external_energy, pair_energy_u2, self_energy, EnergyError, ExternalWorld};
use crate::estimators::{
    check_tilt_identity, convexity_scan, estimate_full_ratio, estimate_laplacian_i, estimate_ratio, estimate_ratios, estimate_weight,
    EstimateError, RunConfig,
};
use crate::model::{measure_mass, ModelError, ModelParams, Path};
use crate::potentials::{
    default_grid, laplacian_u, make_coulomb, make_dipole, make_ode, make_power_law, soft_core, solve_radial_ode, verify_superharmonic,
    PotentialError, PotentialSpec, RadialPotential, Source,
};
use crate::quadrature::Tolerance;
use crate::rng::{stream, Lane};
use crate::stats::{mean_stderr, Estimate};
use crate::symmetrize::{
    ball_volume, estimate_s_bosonic, estimate_s_classical, external_field_check, haar_rotation, ExternalCheckConfig, IonMeasure,
    SymmetrizationMode, SymmetrizeError,
};

/// Environment variable supplying the default seed.
pub const SEED_ENV: &str = "SELFBRIDGE_SEED";

const COMMANDS: [&str; 7] =
    ["verify-potential", "ratio-scan", "laplacian-check", "convexity-scan", "tilt-check", "external-scan", "selftest"];

/// Every accepted settings key with its default.
const DEFAULTS: [(&str, &str); 30] = [
    ("nu", "3"),
    ("beta", "1"),
    ("n", "4"),
    ("j", "8"),
    ("lambda", "1"),
    ("potential", "coulomb"),
    ("sign", "1"),
    ("alpha", "4"),
    ("coef", "1"),
    ("soft_core_epsilon", "0"),
    ("g_coefficient", "1"),
    ("g_exponent", "4"),
    ("ode_a", "inf"),
    ("ode_b", "inf"),
    ("ode_c1", "0"),
    ("ode_c2", "0"),
    ("x", "0,0.5,1,2"),
    ("direction", ""),
    ("samples", "10000"),
    ("seed", "1"),
    ("workers", "0"),
    ("e_max", "700"),
    ("mode", "classical"),
    ("ions", "1,0,0;-1,0,0"),
    ("rotations", "64"),
    ("particles", "2"),
    ("radius", "2"),
    ("ion_measure", "ball"),
    ("u2_scale", "1"),
    ("u3_scale", "-1"),
];

/// Accepted in addition to [`DEFAULTS`], with default `false`.
const FLAG_KEYS: [&str; 1] = ["allow_uncertified"];

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Potential(#[from] PotentialError),
    #[error(transparent)]
    Energy(#[from] EnergyError),
    #[error(transparent)]
    Estimate(#[from] EstimateError),
    #[error(transparent)]
    Symmetrize(#[from] SymmetrizeError),
}

#[derive(Parser, Debug)]
#[command(name = "selfbridge", version, about = "Monte Carlo checks for self-interacting Brownian bridges")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Grid certification of ν f' + 2 s f'' ≤ 0.
    VerifyPotential(Flags),
    /// I(x)/I(0) along a direction.
    RatioScan(Flags),
    /// ΔI(x)/I(0) with per-sample sign diagnostics.
    LaplacianCheck(Flags),
    /// Second differences and evenness of I(x)/I(0) on a symmetric grid.
    ConvexityScan(Flags),
    /// Tilted 0→0 bridges against directly sampled 0→x bridges.
    TiltCheck(Flags),
    /// Symmetrized ratios in an external field (classical or bosonic).
    ExternalScan(Flags),
    /// Runs the built-in identity checks.
    Selftest(Flags),
}

impl Command {
    fn parts(&self) -> (&'static str, &Flags) {
        match self {
            Command::VerifyPotential(f) => ("verify-potential", f),
            Command::RatioScan(f) => ("ratio-scan", f),
            Command::LaplacianCheck(f) => ("laplacian-check", f),
            Command::ConvexityScan(f) => ("convexity-scan", f),
            Command::TiltCheck(f) => ("tilt-check", f),
            Command::ExternalScan(f) => ("external-scan", f),
            Command::Selftest(f) => ("selftest", f),
        }
    }
}

#[derive(Args, Debug, Default)]
struct Flags {
    /// Config file: top-level keys plus an optional section per subcommand.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (default: current directory).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    nu: Option<String>,
    #[arg(long)]
    beta: Option<String>,
    #[arg(long)]
    n: Option<String>,
    #[arg(long)]
    j: Option<String>,
    #[arg(long)]
    lambda: Option<String>,
    /// coulomb, power-law, dipole, ode or zero.
    #[arg(long)]
    potential: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    sign: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    alpha: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    coef: Option<String>,
    #[arg(long = "soft-core")]
    soft_core: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    g_coefficient: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    g_exponent: Option<String>,
    #[arg(long)]
    ode_a: Option<String>,
    #[arg(long)]
    ode_b: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    ode_c1: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    ode_c2: Option<String>,
    /// Comma-separated radii along `direction`.
    #[arg(long, allow_hyphen_values = true)]
    x: Option<String>,
    /// Comma-separated direction vector (default ê₁).
    #[arg(long, allow_hyphen_values = true)]
    direction: Option<String>,
    #[arg(long)]
    samples: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    /// Worker threads (0 = all cores). Does not change results.
    #[arg(long)]
    workers: Option<String>,
    #[arg(long)]
    e_max: Option<String>,
    /// classical or bosonic.
    #[arg(long)]
    mode: Option<String>,
    /// Ion positions, `;`-separated vectors of `,`-separated coordinates.
    #[arg(long, allow_hyphen_values = true)]
    ions: Option<String>,
    #[arg(long)]
    rotations: Option<String>,
    #[arg(long)]
    particles: Option<String>,
    #[arg(long)]
    radius: Option<String>,
    /// ball or grid.
    #[arg(long)]
    ion_measure: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    u2_scale: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    u3_scale: Option<String>,
    /// Run external-scan even if u₁ or u₃ fails certification.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    allow_uncertified: Option<String>,
}

impl Flags {
    fn overrides(&self) -> [(&'static str, &Option<String>); 31] {
        [
            ("nu", &self.nu),
            ("beta", &self.beta),
            ("n", &self.n),
            ("j", &self.j),
            ("lambda", &self.lambda),
            ("potential", &self.potential),
            ("sign", &self.sign),
            ("alpha", &self.alpha),
            ("coef", &self.coef),
            ("soft_core_epsilon", &self.soft_core),
            ("g_coefficient", &self.g_coefficient),
            ("g_exponent", &self.g_exponent),
            ("ode_a", &self.ode_a),
            ("ode_b", &self.ode_b),
            ("ode_c1", &self.ode_c1),
            ("ode_c2", &self.ode_c2),
            ("x", &self.x),
            ("direction", &self.direction),
            ("samples", &self.samples),
            ("seed", &self.seed),
            ("workers", &self.workers),
            ("e_max", &self.e_max),
            ("mode", &self.mode),
            ("ions", &self.ions),
            ("rotations", &self.rotations),
            ("particles", &self.particles),
            ("radius", &self.radius),
            ("ion_measure", &self.ion_measure),
            ("u2_scale", &self.u2_scale),
            ("u3_scale", &self.u3_scale),
            ("allow_uncertified", &self.allow_uncertified),
        ]
    }
}

fn valid_keys() -> Vec<&'static str> {
    DEFAULTS.iter().map(|(k, _)| *k).chain(FLAG_KEYS).collect()
}

fn check_key(key: &str) -> Result<(), CliError> {
    if valid_keys().contains(&key) {
        Ok(())
    } else {
        Err(CliError::Config(format!("unknown key `{key}`; valid keys: {}", valid_keys().join(", "))))
    }
}

/// Resolved settings for one subcommand.
#[derive(Debug, Clone)]
pub struct Settings {
    command: String,
    values: BTreeMap<String, String>,
}

fn toml_text(value: &toml::Value) -> Result<String, CliError> {
    Ok(match value {
        toml::Value::String(s) => s.clone(),
        toml::Value::Integer(i) => i.to_string(),
        toml::Value::Float(f) => f.to_string(),
        toml::Value::Boolean(b) => b.to_string(),
        toml::Value::Array(items) => {
            let nested = items.iter().any(|v| v.is_array());
            let parts = items.iter().map(toml_text).collect::<Result<Vec<_>, _>>()?;
            parts.join(if nested { ";" } else { "," })
        }
        other => return Err(CliError::Config(format!("unsupported value {other}"))),
    })
}

impl Settings {
    /// Defaults, then the file (top level, then its `[command]` section), then flags.
    fn resolve(command: &str, flags: &Flags) -> Result<Self, CliError> {
        let mut values: BTreeMap<String, String> = DEFAULTS.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
        values.insert("allow_uncertified".into(), "false".into());
        if let Ok(seed) = std::env::var(SEED_ENV) {
            values.insert("seed".into(), seed);
        }
        if let Some(path) = &flags.config {
            let text = fs::read_to_string(path).map_err(|source| CliError::Io { path: path.clone(), source })?;
            let table: toml::Table = text.parse().map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            let mut section = None;
            for (key, value) in &table {
                match value {
                    toml::Value::Table(t) if key == command => section = Some(t),
                    toml::Value::Table(_) if COMMANDS.contains(&key.as_str()) => {}
                    toml::Value::Table(_) => {
                        return Err(CliError::Config(format!("unknown section `[{key}]`; valid sections: {}", COMMANDS.join(", "))))
                    }
                    v => {
                        check_key(key)?;
                        values.insert(key.clone(), toml_text(v)?);
                    }
                }
            }
            for (key, value) in section.into_iter().flatten() {
                check_key(key)?;
                values.insert(key.clone(), toml_text(value)?);
            }
        }
        for (key, value) in flags.overrides() {
            if let Some(v) = value {
                values.insert(key.to_string(), v.clone());
            }
        }
        Ok(Self { command: command.to_string(), values })
    }

    fn text(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).unwrap_or("")
    }

    fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<T, CliError> {
        self.text(key).trim().parse().map_err(|_| CliError::Config(format!("cannot parse `{key}` = `{}`", self.text(key))))
    }

    fn real(&self, key: &str) -> Result<f64, CliError> {
        self.parse(key)
    }

    fn list(&self, key: &str) -> Result<Vec<f64>, CliError> {
        parse_list(self.text(key)).ok_or_else(|| CliError::Config(format!("cannot parse `{key}` = `{}` as a list", self.text(key))))
    }

    fn vectors(&self, key: &str) -> Result<Vec<Vec<f64>>, CliError> {
        let text = self.text(key).trim();
        if text.is_empty() {
            return Ok(Vec::new());
        }
        text.split(';')
            .map(|v| parse_list(v).ok_or_else(|| CliError::Config(format!("cannot parse `{key}` = `{text}` as vectors"))))
            .collect()
    }

    fn flag(&self, key: &str) -> Result<bool, CliError> {
        self.parse(key)
    }

    /// The manifest: a config file holding every resolved key.
    pub fn manifest(&self) -> String {
        let mut out = format!("# version {} {}\n[{}]\n", env!("CARGO_PKG_NAME"), env!("CARGO_PKG_VERSION"), self.command);
        for (k, v) in &self.values {
            out.push_str(&format!("{k} = {}\n", toml::Value::String(v.clone())));
        }
        out
    }
}

fn parse_list(text: &str) -> Option<Vec<f64>> {
    let text = text.trim();
    if text.is_empty() {
        return Some(Vec::new());
    }
    text.split(',').map(|p| p.trim().parse().ok()).collect()
}

fn params_of(s: &Settings) -> Result<ModelParams, CliError> {
    Ok(ModelParams::new(s.parse("nu")?, s.real("beta")?, s.parse("n")?, s.parse("j")?, s.real("lambda")?)?)
}

fn run_of(s: &Settings) -> Result<RunConfig, CliError> {
    let mut run = RunConfig::new(s.parse("samples")?, s.parse("seed")?).with_workers(s.parse("workers")?);
    run.e_max = s.real("e_max")?;
    Ok(run)
}

/// The named potential with its soft core applied.
fn potential_of(s: &Settings, dim: usize) -> Result<RadialPotential, CliError> {
    let base = match s.text("potential") {
        "coulomb" => make_coulomb(dim, s.real("sign")?)?,
        "power-law" => make_power_law(s.real("alpha")?, dim, s.real("coef")?)?,
        "dipole" => make_dipole(s.real("alpha")?, dim)?,
        "ode" => {
            let (c, e) = (s.real("g_coefficient")?, s.real("g_exponent")?);
            let g: Source = Arc::new(move |t: f64| c * t.powf(-e));
            let spec = PotentialSpec::new(g, s.real("ode_a")?, s.real("ode_b")?, s.real("ode_c1")?, s.real("ode_c2")?, dim)?;
            make_ode(spec, Tolerance::default())
        }
        "zero" => RadialPotential::zero(),
        other => return Err(CliError::Config(format!("unknown potential `{other}`; valid: coulomb, power-law, dipole, ode, zero"))),
    };
    Ok(soft_core(&base, s.real("soft_core_epsilon")?)?)
}

/// Radii from `x` placed along the unit `direction`.
fn shifts_of(s: &Settings, dim: usize) -> Result<(Vec<f64>, Vec<Vec<f64>>), CliError> {
    let radii = s.list("x")?;
    let axis = direction_of(s, dim)?;
    let shifts = radii.iter().map(|r| axis.iter().map(|a| a * r).collect()).collect();
    Ok((radii, shifts))
}

fn direction_of(s: &Settings, dim: usize) -> Result<Vec<f64>, CliError> {
    let mut axis = s.list("direction")?;
    if axis.is_empty() {
        axis = vec![0.0; dim];
        axis[0] = 1.0;
    }
    if axis.len() != dim {
        return Err(ModelError::DimensionMismatch { expected: dim, got: axis.len() }.into());
    }
    let norm = axis.iter().map(|a| a * a).sum::<f64>().sqrt();
    if !(norm > 0.0) {
        return Err(CliError::Config("direction must be nonzero".into()));
    }
    Ok(axis.iter().map(|a| a / norm).collect())
}

/// A result table: one row per grid point, a final `pass` column, and the
/// `(x, value, stderr)` triple for the plot file.
#[derive(Debug, Clone)]
pub struct Table {
    header: Vec<&'static str>,
    rows: Vec<Row>,
}

#[derive(Debug, Clone)]
struct Row {
    cells: Vec<String>,
    plot: (f64, f64, f64),
    pass: bool,
}

/// Floats carry 17 significant digits.
pub fn format_real(v: f64) -> String {
    format!("{v:.16e}")
}

impl Table {
    fn new(header: Vec<&'static str>) -> Self {
        Self { header, rows: Vec::new() }
    }

    fn push(&mut self, values: &[f64], plot: (f64, f64, f64), pass: bool) {
        self.rows.push(Row { cells: values.iter().map(|v| format_real(*v)).collect(), plot, pass });
    }

    fn push_cells(&mut self, cells: Vec<String>, plot: (f64, f64, f64), pass: bool) {
        self.rows.push(Row { cells, plot, pass });
    }

    pub fn all_pass(&self) -> bool {
        self.rows.iter().all(|r| r.pass)
    }

    pub fn csv(&self) -> String {
        let mut out = self.header.join(",");
        out.push_str(",pass\n");
        for r in &self.rows {
            out.push_str(&r.cells.join(","));
            out.push_str(if r.pass { ",1\n" } else { ",0\n" });
        }
        out
    }

    pub fn dat(&self) -> String {
        let mut out = String::from("# x value stderr\n");
        for r in &self.rows {
            let (x, v, e) = r.plot;
            out.push_str(&format!("{} {} {}\n", format_real(x), format_real(v), format_real(e)));
        }
        out
    }
}

fn verify_potential(s: &Settings) -> Result<Table, CliError> {
    let dim: usize = s.parse("nu")?;
    let pot = potential_of(s, dim)?;
    let grid = default_grid();
    let report = verify_superharmonic(&pot, dim, &grid)?;
    println!(
        "{}: certified = {}, worst nu f' + 2 s f'' = {} at s = {}",
        pot.label(),
        report.holds,
        format_real(report.worst_value),
        format_real(report.worst_s)
    );
    let mut table = Table::new(vec!["s", "radial_operator"]);
    for &x in &grid {
        let value = pot.radial_operator(dim, x);
        let holds = verify_superharmonic(&pot, dim, &[x])?.holds;
        table.push(&[x, value], (x, value, 0.0), holds);
    }
    Ok(table)
}

fn report_diagnostics(label: &str, e: &Estimate) {
    let d = &e.diagnostics;
    println!(
        "{label}: samples = {}, singular hits = {}, rejected = {}, clamped = {}, sign violations = {}{}",
        e.n_samples,
        d.singular_hits,
        d.rejected,
        d.clamp_hits,
        d.sign_violations,
        if d.uncertified { ", potential NOT certified superharmonic" } else { "" }
    );
}

fn ratio_scan(s: &Settings) -> Result<Table, CliError> {
    let params = params_of(s)?;
    let pot = potential_of(s, params.dim())?;
    let (radii, shifts) = shifts_of(s, params.dim())?;
    let mut estimates = estimate_ratios(&params, &pot, &shifts, &run_of(s)?)?;
    let certified = verify_superharmonic(&pot, params.dim(), &default_grid())?.holds;
    let mut table = Table::new(vec!["x", "ratio", "stderr", "full_ratio"]);
    for ((r, x), e) in radii.iter().zip(&shifts).zip(estimates.iter_mut()) {
        e.diagnostics.uncertified = !certified;
        let full = e.scaled(params.endpoint_factor(x));
        table.push(&[*r, e.mean, e.stderr, full.mean], (*r, e.mean, e.stderr), e.at_least(1.0, 3.0));
    }
    if let Some(e) = estimates.first() {
        report_diagnostics("ratio-scan", e);
    }
    Ok(table)
}

fn laplacian_check(s: &Settings) -> Result<Table, CliError> {
    let params = params_of(s)?;
    let pot = potential_of(s, params.dim())?;
    let (radii, shifts) = shifts_of(s, params.dim())?;
    let run = run_of(s)?;
    let mut table = Table::new(vec!["x", "laplacian", "stderr", "nonnegative_fraction"]);
    for (r, x) in radii.iter().zip(&shifts) {
        let e = estimate_laplacian_i(&params, &pot, x, &run)?;
        let fraction = e.diagnostics.nonnegative_fraction.unwrap_or(f64::NAN);
        let pass = e.at_least(0.0, 3.0) && (e.diagnostics.uncertified || fraction == 1.0);
        report_diagnostics(&format!("laplacian-check x={r}"), &e);
        table.push(&[*r, e.mean, e.stderr, fraction], (*r, e.mean, e.stderr), pass);
    }
    Ok(table)
}

fn convexity(s: &Settings) -> Result<Table, CliError> {
    let params = params_of(s)?;
    let pot = potential_of(s, params.dim())?;
    let radii = s.list("x")?;
    let axis = direction_of(s, params.dim())?;
    let rows = convexity_scan(&params, &pot, &axis, &radii, &run_of(s)?)?;
    let mut table =
        Table::new(vec!["x", "ratio", "stderr", "second_difference", "second_difference_stderr", "even_gap", "even_gap_stderr"]);
    let split = |e: &Option<Estimate>| e.map_or((f64::NAN, f64::NAN), |e| (e.mean, e.stderr));
    for row in &rows {
        let (d, de) = split(&row.second_difference);
        let (g, ge) = split(&row.even_gap);
        let pass = row.second_difference.is_none_or(|d| d.at_least(0.0, 3.0)) && row.even_gap.is_none_or(|g| g.consistent_with(0.0, 3.0));
        table.push(&[row.radius, row.ratio.mean, row.ratio.stderr, d, de, g, ge], (row.radius, row.ratio.mean, row.ratio.stderr), pass);
    }
    Ok(table)
}

fn tilt_check(s: &Settings) -> Result<Table, CliError> {
    let params = params_of(s)?;
    let pot = potential_of(s, params.dim())?;
    let (radii, shifts) = shifts_of(s, params.dim())?;
    let run = run_of(s)?;
    let mut table = Table::new(vec!["x", "difference", "stderr", "tilted_mean", "direct_mean"]);
    for (r, x) in radii.iter().zip(&shifts) {
        let t = check_tilt_identity(&params, &pot, x, &run)?;
        let d = t.difference;
        table.push(&[*r, d.mean, d.stderr, t.tilted_mean, t.direct_mean], (*r, d.mean, d.stderr), d.consistent_with(0.0, 4.0));
    }
    Ok(table)
}

/// The 3^ν tensor grid `{-L/2, 0, L/2}^ν` carrying the ball volume in equal weights.
pub fn tensor_ion_grid(dim: usize, radius: f64) -> IonMeasure {
    let count = 3usize.pow(dim as u32);
    let points = (0..count)
        .map(|mut k| {
            (0..dim)
                .map(|_| {
                    let c = (k % 3) as f64 - 1.0;
                    k /= 3;
                    c * radius / 2.0
                })
                .collect()
        })
        .collect();
    IonMeasure::Grid { points, weights: vec![ball_volume(dim, radius) / count as f64; count] }
}

fn external_scan(s: &Settings) -> Result<Table, CliError> {
    let params = params_of(s)?;
    let base = potential_of(s, params.dim())?;
    let (radii, shifts) = shifts_of(s, params.dim())?;
    let mode = match s.text("mode") {
        "classical" => SymmetrizationMode::Classical { ions: s.vectors("ions")?, rotations: s.parse("rotations")? },
        "bosonic" => {
            let radius = s.real("radius")?;
            let measure = match s.text("ion_measure") {
                "ball" => IonMeasure::UniformBall { radius },
                "grid" => tensor_ion_grid(params.dim(), radius),
                other => return Err(CliError::Config(format!("unknown ion_measure `{other}`; valid: ball, grid"))),
            };
            SymmetrizationMode::Bosonic { u2: base.scaled(s.real("u2_scale")?), particles: s.parse("particles")?, measure }
        }
        other => return Err(CliError::Config(format!("unknown mode `{other}`; valid: classical, bosonic"))),
    };
    let config = ExternalCheckConfig {
        params,
        u3: base.scaled(s.real("u3_scale")?),
        u1: base,
        mode,
        require_certified: !s.flag("allow_uncertified")?,
    };
    let report = external_field_check(&config, &shifts, &run_of(s)?)?;
    println!(
        "external-scan: u1 certified = {} (worst {}), u3 certified = {} (worst {})",
        report.u1.holds,
        format_real(report.u1.worst_value),
        report.u3.holds,
        format_real(report.u3.worst_value)
    );
    if let Some(row) = report.rows.first() {
        report_diagnostics("external-scan", &row.ratio);
    }
    let mut table = Table::new(vec!["x", "ratio", "stderr", "full_ratio", "form_gap", "form_gap_stderr"]);
    for (r, row) in radii.iter().zip(&report.rows) {
        let (g, ge) = row.form_gap.map_or((f64::NAN, f64::NAN), |g| (g.mean, g.stderr));
        table.push(&[*r, row.ratio.mean, row.ratio.stderr, row.full_ratio.mean, g, ge], (*r, row.ratio.mean, row.ratio.stderr), row.pass);
    }
    Ok(table)
}

type Check = (&'static str, fn(&RunConfig) -> Result<bool, CliError>);

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * b.abs().max(1.0)
}

fn p3(n: usize, j: usize) -> ModelParams {
    ModelParams::new(3, 1.0, n, j, 1.0).expect("valid parameters")
}

fn soft(eps: f64) -> RadialPotential {
    soft_core(&make_coulomb(3, 1.0).expect("coulomb"), eps).expect("soft core")
}

/// Identity checks with known exact or distributional answers.
const SELFTESTS: [Check; 36] = [
    ("wavelength over bridge", |_| Ok(p3(4, 8).lambda_total() == 2.0)),
    ("diffusion rate", |_| Ok(close(p3(1, 1).diffusion(), 1.0 / (2.0 * PI), 1e-15))),
    ("zero dimension rejected", |_| Ok(ModelParams::new(0, 1.0, 1, 1, 1.0).is_err())),
    ("mass over beta", |_| Ok(close(measure_mass(&p3(1, 1), &[0.0; 3], &[1.0, 0.0, 0.0], 1.0)?, (-PI).exp(), 1e-15))),
    ("mass over four beta", |_| Ok(close(measure_mass(&p3(1, 1), &[0.0; 3], &[1.0, 0.0, 0.0], 4.0)?, (-PI / 4.0).exp() / 8.0, 1e-15))),
    ("coulomb value", |_| Ok(close(make_coulomb(3, 1.0)?.f(4.0), 0.5, 1e-15))),
    ("dipole alpha 2", |_| Ok(close(make_dipole(2.0, 3)?.f(4.0), -0.25, 1e-15))),
    ("ode constant solution", |_| {
        let g: Source = Arc::new(|_| 0.0);
        let spec = PotentialSpec::new(g, 1.0, 1.0, 5.0, 0.0, 3)?;
        Ok([0.1, 1.0, 7.0].iter().all(|&x| solve_radial_ode(&spec, x, Tolerance::default()).is_ok_and(|v| close(v, 5.0, 1e-12))))
    }),
    ("laplacian of |y|^2", |_| {
        let trap = make_power_law(-1.0, 3, 1.0)?;
        Ok([0.01, 1.0, 50.0].iter().all(|&x| laplacian_u(&trap, 3, x).is_ok_and(|v| close(v, 6.0, 1e-12))))
    }),
    ("soft core zero is identity", |_| {
        let c = make_coulomb(3, 1.0)?;
        let z = soft_core(&c, 0.0)?;
        Ok([0.01, 1.0, 9.0].iter().all(|&x| z.f(x) == c.f(x) && z.df(x) == c.df(x) && z.d2f(x) == c.d2f(x)))
    }),
    ("soft core finite at origin", |_| Ok(soft(1.0).f(0.0) == 1.0)),
    ("bridge mean vanishes", |run| {
        let p = p3(2, 4);
        let paths: Vec<Path> = (0..run.samples as u64)
            .map(|i| sample_bridge(&p, &[0.0; 3], &[0.0; 3], p.bridge_steps(), &mut stream(run.seed, Lane::Aux, i)))
            .collect();
        Ok((1..p.bridge_steps()).all(|j| {
            (0..3).all(|c| {
                let v: Vec<f64> = paths.iter().map(|w| w.point(j)[c]).collect();
                let (m, e) = mean_stderr(&v);
                m.abs() <= 4.0 * e
            })
        }))
    }),
    ("bridge endpoints pinned", |run| {
        let p = p3(2, 4);
        let (a, b) = ([0.3, -1.0, 2.0], [1.0, 0.5, -0.25]);
        Ok((0..run.samples as u64).all(|i| {
            let w = sample_bridge(&p, &a, &b, 8, &mut stream(run.seed, Lane::Aux, i));
            w.start() == a && w.end() == b
        }))
    }),
    ("tilt identity cases", |run| {
        let p = p3(2, 4);
        let w = sample_bridge(&p, &[0.0; 3], &[0.0; 3], 8, &mut stream(run.seed, Lane::Aux, 0));
        let e1 = [1.0, 0.0, 0.0];
        let t = tilt_path(&w, &e1);
        Ok(tilt_path(&w, &[0.0; 3]) == w && t.end() == e1 && t.point(4)[0] == w.point(4)[0] + 0.5 && t.point(4)[1] == w.point(4)[1])
    }),
    ("self energy of zero potential", |run| {
        let p = p3(4, 2);
        let w = sample_bridge(&p, &[0.0; 3], &[0.0; 3], 8, &mut stream(run.seed, Lane::Aux, 1));
        let t = self_energy(&p, &w, &RadialPotential::zero(), &[0.3, 0.0, 0.1])?;
        Ok(t.value == 0.0 && t.laplacian == 0.0 && t.gradient.iter().all(|g| *g == 0.0))
    }),
    ("self energy at zero shift", |run| {
        let p = p3(3, 2);
        let w = sample_bridge(&p, &[0.0; 3], &[0.0; 3], 6, &mut stream(run.seed, Lane::Aux, 2));
        let u = soft(0.2);
        let mut direct = 0.0;
        for k in 0..3 {
            for l in k + 1..3 {
                for j in 0..2 {
                    let d2: f64 = (0..3).map(|c| (w.point(l * 2 + j)[c] - w.point(k * 2 + j)[c]).powi(2)).sum();
                    direct += 0.5 * u.f(d2);
                }
            }
        }
        Ok(close(self_energy(&p, &w, &u, &[0.0; 3])?.value, direct, 1e-13))
    }),
    ("external energy without particles", |run| {
        let p = p3(2, 2);
        let w = sample_bridge(&p, &[0.0; 3], &[0.0; 3], 4, &mut stream(run.seed, Lane::Aux, 3));
        let t = external_energy(&p, &w, &ExternalWorld::empty(soft(0.1)), &[0.5, 0.0, 0.0])?;
        Ok(t.value == 0.0 && t.laplacian == 0.0)
    }),
    ("pair energy of one particle", |run| {
        let p = p3(2, 2);
        let w = sample_bridge(&p, &[0.0; 3], &[0.0; 3], 2, &mut stream(run.seed, Lane::Aux, 4));
        Ok(pair_energy_u2(&p, &ExternalWorld::quantum(&p, vec![w], soft(0.1), soft(0.1))?)? == 0.0)
    }),
    ("pair energy of zero u2", |run| {
        let p = p3(2, 2);
        let paths = (0..3).map(|i| sample_bridge(&p, &[0.0; 3], &[0.0; 3], 2, &mut stream(run.seed, Lane::Aux, 10 + i))).collect();
        Ok(pair_energy_u2(&p, &ExternalWorld::quantum(&p, paths, RadialPotential::zero(), soft(0.1))?)? == 0.0)
    }),
    ("free gas ratio", |run| {
        let e = estimate_ratio(&p3(4, 4), &RadialPotential::zero(), &[1.0, 0.5, 0.0], run)?;
        Ok(e.mean == 1.0 && e.stderr == 0.0)
    }),
    ("ratio at origin", |run| Ok(estimate_ratio(&p3(2, 4), &soft(0.1), &[0.0; 3], run)?.mean == 1.0)),
    ("free gas full ratio", |run| {
        let e = estimate_full_ratio(&p3(4, 4), &RadialPotential::zero(), &[1.0, 0.0, 0.0], run)?;
        Ok(close(e.mean, (-PI / 4.0).exp(), 1e-15))
    }),
    ("full ratio at origin", |run| Ok(estimate_full_ratio(&p3(2, 4), &soft(0.1), &[0.0; 3], run)?.mean == 1.0)),
    ("free gas laplacian", |run| Ok(estimate_laplacian_i(&p3(2, 4), &RadialPotential::zero(), &[0.7, 0.0, 0.0], run)?.mean == 0.0)),
    ("free gas convexity", |run| {
        let rows = convexity_scan(&p3(2, 4), &RadialPotential::zero(), &[1.0, 0.0, 0.0], &[-1.0, 0.0, 1.0], run)?;
        Ok(rows.iter().all(|r| r.ratio.mean == 1.0 && r.second_difference.is_none_or(|d| d.mean == 0.0)))
    }),
    ("free gas tilt", |run| Ok(check_tilt_identity(&p3(2, 4), &RadialPotential::zero(), &[1.0, 0.0, 0.0], run)?.difference.mean == 0.0)),
    ("tilt at origin", |run| Ok(check_tilt_identity(&p3(2, 4), &soft(0.1), &[0.0; 3], run)?.difference.consistent_with(0.0, 4.0))),
    ("haar determinant", |run| {
        let mut rng = stream(run.seed, Lane::Aux, 20);
        Ok((0..1000).all(|_| haar_rotation(3, &mut rng).is_ok_and(|r| (r.determinant() - 1.0).abs() < 1e-12)))
    }),
    ("haar orthogonality", |run| {
        let mut rng = stream(run.seed, Lane::Aux, 21);
        Ok((0..1000).all(|_| {
            haar_rotation(3, &mut rng).is_ok_and(|r| {
                (0..3).all(|a| (0..3).all(|b| close((0..3).map(|k| r.entry(a, k) * r.entry(b, k)).sum(), f64::from(a == b), 1e-12)))
            })
        }))
    }),
    ("classical without particles", |run| {
        let (p, u, x) = (p3(2, 4), soft(0.1), vec![0.8, 0.0, 0.0]);
        let sym = estimate_s_classical(&p, &u, &u, &[], std::slice::from_ref(&x), 4, run)?;
        let iso = estimate_weight(&p, &u, &x, run)?;
        Ok(close(sym.value(0, 0).mean, iso.mean, 1e-12))
    }),
    ("classical with zero u3", |run| {
        let (p, u, x) = (p3(2, 4), soft(0.1), vec![0.8, 0.0, 0.0]);
        let sym = estimate_s_classical(&p, &u, &RadialPotential::zero(), &[vec![1.0, 0.0, 0.0]], std::slice::from_ref(&x), 4, run)?;
        let (s, iso) = (sym.value(0, 0), estimate_weight(&p, &u, &x, run)?);
        Ok((s.mean - iso.mean).abs() <= 4.0 * s.stderr.hypot(iso.stderr))
    }),
    ("bosonic single free particle", |run| {
        let (p, u, z, x) = (p3(2, 4), soft(0.1), RadialPotential::zero(), vec![0.8, 0.0, 0.0]);
        let sym = estimate_s_bosonic(&p, &u, &z, &z, 1, &IonMeasure::UniformBall { radius: 2.0 }, std::slice::from_ref(&x), run)?;
        let scale = ball_volume(3, 2.0) * p.lambda().powi(-3);
        let (s, iso) = (sym.value(0, 0), estimate_weight(&p, &u, &x, run)?.scaled(scale));
        Ok((s.mean - iso.mean).abs() <= 4.0 * s.stderr.hypot(iso.stderr))
    }),
    ("symmetrized ratio at origin", |run| {
        let u = soft(0.1);
        let config = ExternalCheckConfig {
            params: p3(2, 4),
            u1: u.clone(),
            u3: u,
            mode: SymmetrizationMode::Classical { ions: vec![vec![1.0, 0.0, 0.0]], rotations: 4 },
            require_certified: true,
        };
        let rows = external_field_check(&config, &[vec![0.0; 3]], run)?.rows;
        Ok(rows[0].ratio.mean == 1.0 && rows[0].ratio.stderr == 0.0)
    }),
    ("coulomb harmonic", |_| {
        let (c2, c3) = (make_coulomb(2, 1.0)?, make_coulomb(3, 1.0)?);
        Ok(c3.radial_operator(3, 1.0) == 0.0 && c2.radial_operator(2, 4.0) == 0.0)
    }),
    ("soft coulomb certified", |_| Ok(verify_superharmonic(&soft(0.05), 3, &default_grid())?.holds)),
    ("power law alpha 2 rejected", |_| Ok(!verify_superharmonic(&make_power_law(2.0, 3, 1.0)?, 3, &default_grid())?.holds)),
];

fn selftest(s: &Settings) -> Result<Table, CliError> {
    let run = RunConfig::new(2000, s.parse("seed")?).with_workers(s.parse("workers")?);
    let mut table = Table::new(vec!["check"]);
    for (k, (name, check)) in SELFTESTS.iter().enumerate() {
        let pass = match check(&run) {
            Ok(pass) => pass,
            Err(e) => {
                eprintln!("selftest `{name}` errored: {e}");
                false
            }
        };
        println!("{} {name}", if pass { "ok  " } else { "FAIL" });
        table.push_cells(vec![name.replace(' ', "_")], (k as f64, f64::from(u8::from(pass)), 0.0), pass);
    }
    Ok(table)
}

fn write(path: &FsPath, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|source| CliError::Io { path: path.to_path_buf(), source })
}

/// Runs one subcommand and writes its outputs; returns whether every row passed.
fn execute(command: &str, flags: &Flags) -> Result<bool, CliError> {
    let settings = Settings::resolve(command, flags)?;
    let table = match command {
        "verify-potential" => verify_potential(&settings)?,
        "ratio-scan" => ratio_scan(&settings)?,
        "laplacian-check" => laplacian_check(&settings)?,
        "convexity-scan" => convexity(&settings)?,
        "tilt-check" => tilt_check(&settings)?,
        "external-scan" => external_scan(&settings)?,
        _ => selftest(&settings)?,
    };
    let dir = flags.out.clone().unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&dir).map_err(|source| CliError::Io { path: dir.clone(), source })?;
    write(&dir.join(format!("{command}.csv")), &table.csv())?;
    write(&dir.join(format!("{command}.dat")), &table.dat())?;
    write(&dir.join(format!("{command}.manifest.toml")), &settings.manifest())?;
    let failed = table.rows.iter().filter(|r| !r.pass).count();
    println!("{command}: {} rows, {failed} failed; outputs in {}", table.rows.len(), dir.display());
    Ok(table.all_pass())
}

/// Parses `argv` (including the program name) and runs the subcommand.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let (command, flags) = cli.command.parts();
    match execute(command, flags) {
        Ok(true) => 0,
        Ok(false) => 1,
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}
