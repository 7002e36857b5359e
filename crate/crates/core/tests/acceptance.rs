//! Exit criteria for the library and the CLI. Every criterion prints one
//! `PASS`/`FAIL` line (written straight to stdout so it survives output
//! capture) and then asserts. Criteria run one at a time so the wall-clock
//! limits are measured on an otherwise idle machine.

use std::f64::consts::PI;
use std::io::Write;
use std::path::Path as FsPath;
use std::sync::{Arc, Mutex, OnceLock};
use std::time::{Duration, Instant};

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use selfbridge::bridges::sample_bridge;
use selfbridge::energy::{external_energy, self_energy, ExternalWorld};
use selfbridge::estimators::{
    check_tilt_identity, convexity_scan, estimate_full_ratio, estimate_laplacian_i, estimate_ratio, estimate_ratios, RunConfig,
};
use selfbridge::potentials::{
    default_grid, log_grid, make_coulomb, make_dipole, make_power_law, soft_core, solve_radial_ode, verify_superharmonic, PotentialSpec,
    RadialPotential, Source,
};
use selfbridge::quadrature::Tolerance;
use selfbridge::rng::{stream, Lane};
use selfbridge::stats::mean_stderr;
use selfbridge::symmetrize::{estimate_s_bosonic, IonMeasure};
use selfbridge::ModelParams;

const N: usize = 100_000;
const EPS: f64 = 0.05;
const SLICES: usize = 8;
const LEGS: [usize; 3] = [2, 4, 8];
const RADII: [f64; 4] = [0.0, 0.5, 1.0, 2.0];
const CONVEXITY_RADII: [f64; 7] = [-2.0, -1.0, -0.5, 0.0, 0.5, 1.0, 2.0];
const SEED: u64 = 20_240_601;

static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> std::sync::MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

fn report(id: u32, title: &str, pass: bool, detail: &str) {
    let line = format!("criterion {id:>2} {} {title}: {detail}\n", if pass { "PASS" } else { "FAIL" });
    let mut out = std::io::stdout().lock();
    out.write_all(line.as_bytes()).unwrap();
    out.flush().unwrap();
}

fn note(text: &str) {
    let mut out = std::io::stdout().lock();
    out.write_all(format!("    {text}\n").as_bytes()).unwrap();
    out.flush().unwrap();
}

fn within(elapsed: Duration, limit_secs: f64) -> bool {
    elapsed.as_secs_f64() < limit_secs
}

fn soft_coulomb() -> RadialPotential {
    soft_core(&make_coulomb(3, 1.0).unwrap(), EPS).unwrap()
}

fn params(n: usize, j: usize) -> ModelParams {
    ModelParams::new(3, 1.0, n, j, 1.0).unwrap()
}

fn along_axis(radii: &[f64]) -> Vec<Vec<f64>> {
    radii.iter().map(|&r| vec![r, 0.0, 0.0]).collect()
}

fn run(seed: u64) -> RunConfig {
    RunConfig::new(N, seed).with_workers(1)
}

#[test]
fn criterion_01_potential_certification() {
    let _guard = serial();
    let start = Instant::now();
    let mut worst_coulomb: f64 = 0.0;
    for dim in [2usize, 3] {
        let pot = make_coulomb(dim, 1.0).unwrap();
        for &s in &default_grid() {
            let scale = (dim as f64 * pot.df(s)).abs().max((2.0 * s * pot.d2f(s)).abs());
            worst_coulomb = worst_coulomb.max(pot.radial_operator(dim, s).abs() / scale);
        }
    }
    let dipole = make_dipole(4.0, 3).unwrap();
    let worst_dipole = default_grid().iter().map(|&s| (dipole.radial_operator(3, s) / -s.powi(-4) - 1.0).abs()).fold(0.0, f64::max);
    let power = verify_superharmonic(&make_power_law(2.0, 3, 1.0).unwrap(), 3, &default_grid()).unwrap();
    let elapsed = start.elapsed();
    let pass = worst_coulomb <= 1e-10 && worst_dipole <= 1e-8 && !power.holds && within(elapsed, 1.0);
    report(
        1,
        "potential certification",
        pass,
        &format!(
            "coulomb rel {worst_coulomb:.2e} (≤1e-10), dipole rel {worst_dipole:.2e} (≤1e-8), power-law α=2 rejected = {} (worst {:.3e} at s={:.3e}), {:.3}s (<1s)",
            !power.holds,
            power.worst_value,
            power.worst_s,
            elapsed.as_secs_f64()
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_02_ode_reconstruction() {
    let _guard = serial();
    let start = Instant::now();
    let g: Source = Arc::new(|s: f64| s.powi(-4));
    let spec = PotentialSpec::new(g, f64::INFINITY, f64::INFINITY, 0.0, 0.0, 3).unwrap();
    let mut worst: f64 = 0.0;
    for s in log_grid(0.5, 50.0, 60) {
        let exact = -s.powi(-3) / 15.0;
        worst = worst.max((solve_radial_ode(&spec, s, Tolerance::default()).unwrap() / exact - 1.0).abs());
    }
    let elapsed = start.elapsed();
    let pass = worst <= 1e-6 && within(elapsed, 5.0);
    report(
        2,
        "radial ODE reconstruction",
        pass,
        &format!("worst rel {worst:.2e} (≤1e-6) on [0.5, 50], {:.3}s (<5s)", elapsed.as_secs_f64()),
    );
    assert!(pass);
}

#[test]
fn criterion_03_free_gas_exactness() {
    let _guard = serial();
    let start = Instant::now();
    let free = RadialPotential::zero();
    let mut failures = Vec::new();
    for n in LEGS {
        let p = params(n, SLICES);
        for &r in &[0.5, 1.0, 2.0] {
            let x = [r, 0.0, 0.0];
            let ratio = estimate_ratio(&p, &free, &x, &run(SEED)).unwrap();
            let full = estimate_full_ratio(&p, &free, &x, &run(SEED)).unwrap();
            let gaussian = (-PI * r * r / n as f64).exp();
            if ratio.mean != 1.0
                || ratio.stderr != 0.0
                || full.stderr != 0.0
                || (full.mean - gaussian).abs() > 2.0 * f64::EPSILON * gaussian
            {
                failures.push(format!("n={n} |x|={r}: ratio {} ± {}, full {} vs {gaussian}", ratio.mean, ratio.stderr, full.mean));
            }
        }
    }
    let elapsed = start.elapsed();
    let pass = failures.is_empty() && within(elapsed, 30.0);
    report(
        3,
        "free-gas exactness",
        pass,
        &format!("{} mismatches over 9 cases, {:.1}s (<30s) {}", failures.len(), elapsed.as_secs_f64(), failures.join("; ")),
    );
    assert!(pass);
}

#[test]
fn criterion_04_tilt_identity() {
    let _guard = serial();
    let start = Instant::now();
    let t = check_tilt_identity(&params(2, SLICES), &soft_coulomb(), &[1.0, 0.0, 0.0], &run(SEED + 4)).unwrap();
    let elapsed = start.elapsed();
    let d = t.difference;
    let relative = d.stderr / t.tilted_mean.abs();
    let pass = d.consistent_with(0.0, 4.0) && relative < 0.02 && within(elapsed, 120.0);
    report(
        4,
        "tilt identity",
        pass,
        &format!(
            "D = {:.3e} ± {:.3e} (|D| ≤ 4σ), stderr/|mean| = {:.3e} (<2%), tilted {:.6e} direct {:.6e}, {:.1}s (<120s)",
            d.mean,
            d.stderr,
            relative,
            t.tilted_mean,
            t.direct_mean,
            elapsed.as_secs_f64()
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_05_isolated_ratio_battery() {
    let _guard = serial();
    let start = Instant::now();
    let pot = soft_coulomb();
    let (mut below, mut noisy) = (Vec::new(), Vec::new());
    for n in LEGS {
        let estimates = estimate_ratios(&params(n, SLICES), &pot, &along_axis(&RADII), &run(SEED + n as u64)).unwrap();
        for (r, e) in RADII.iter().zip(&estimates) {
            note(&format!("n={n} |x|={r}: ratio {:.6} ± {:.3e} (rel {:.3e})", e.mean, e.stderr, e.stderr / e.mean));
            if !e.at_least(1.0, 3.0) {
                below.push(format!("n={n} |x|={r}"));
            }
            if e.stderr >= 0.01 * e.mean {
                noisy.push(format!("n={n} |x|={r} ({:.2}%)", 100.0 * e.stderr / e.mean));
            }
        }
    }
    let elapsed = start.elapsed();
    let pass = below.is_empty() && noisy.is_empty() && within(elapsed, 600.0);
    report(
        5,
        "isolated ratio ≥ 1 − 3σ with relative stderr < 1%",
        pass,
        &format!("below bound: [{}]; stderr ≥ 1%: [{}]; {:.1}s (<600s)", below.join(", "), noisy.join(", "), elapsed.as_secs_f64()),
    );
    assert!(pass);
}

#[test]
fn criterion_06_sign_invariants() {
    let _guard = serial();
    let pot = soft_coulomb();
    let mut violations = 0;
    let mut failures = Vec::new();
    for n in LEGS {
        let p = params(n, SLICES);
        let seed = SEED + n as u64;
        for e in estimate_ratios(&p, &pot, &along_axis(&RADII), &run(seed)).unwrap() {
            violations += e.diagnostics.sign_violations;
        }
        for x in along_axis(&RADII) {
            let lap = estimate_laplacian_i(&p, &pot, &x, &run(seed)).unwrap();
            let fraction = lap.diagnostics.nonnegative_fraction.unwrap();
            if !(lap.mean >= 0.0 && fraction == 1.0) {
                failures.push(format!("n={n} |x|={}: ΔI/I(0) = {} fraction {fraction}", x[0], lap.mean));
            }
        }
    }
    let pass = violations == 0 && failures.is_empty();
    report(
        6,
        "per-sample sign invariants",
        pass,
        &format!("self-energy Laplacian > 0 on {violations} samples; ΔI failures [{}]", failures.join(", ")),
    );
    assert!(pass);
}

#[test]
fn criterion_07_convexity_scan() {
    let _guard = serial();
    let pot = soft_coulomb();
    let mut failures = Vec::new();
    for n in LEGS {
        let rows = convexity_scan(&params(n, SLICES), &pot, &[1.0, 0.0, 0.0], &CONVEXITY_RADII, &run(SEED + 70 + n as u64)).unwrap();
        for row in rows {
            if let Some(d) = row.second_difference {
                if !d.at_least(0.0, 3.0) {
                    failures.push(format!("n={n} r={}: second difference {:.3e} ± {:.3e}", row.radius, d.mean, d.stderr));
                }
            }
            if let Some(g) = row.even_gap {
                if !g.consistent_with(0.0, 3.0) {
                    failures.push(format!("n={n} r={}: even gap {:.3e} ± {:.3e}", row.radius, g.mean, g.stderr));
                }
            }
        }
    }
    let pass = failures.is_empty();
    report(7, "convexity and evenness along ê₁", pass, &format!("n ∈ {{2,4,8}}, failures [{}]", failures.join("; ")));
    assert!(pass);
}

// ---------------------------------------------------------------------------
// CLI runs shared by criteria 8, 9 and 11.

struct CliRun {
    name: &'static str,
    args: Vec<String>,
}

fn cli_runs() -> Vec<CliRun> {
    let mut runs = Vec::new();
    let mut add = |name: &'static str, args: &[&str]| runs.push(CliRun { name, args: args.iter().map(|s| s.to_string()).collect() });
    let n = N.to_string();
    for legs in ["2", "4", "8"] {
        add("free-gas", &["ratio-scan", "--potential", "zero", "--n", legs, "--x", "0.5,1,2", "--samples", &n, "--seed", "3"]);
    }
    add("tilt", &["tilt-check", "--n", "2", "--x", "1", "--soft-core", "0.05", "--samples", &n, "--seed", "4"]);
    for legs in ["2", "4", "8"] {
        add("ratio", &["ratio-scan", "--n", legs, "--x", "0,0.5,1,2", "--soft-core", "0.05", "--samples", &n, "--seed", "5"]);
        add("laplacian", &["laplacian-check", "--n", legs, "--x", "0,0.5,1,2", "--soft-core", "0.05", "--samples", &n, "--seed", "6"]);
        add(
            "convexity",
            &["convexity-scan", "--n", legs, "--x=-2,-1,-0.5,0,0.5,1,2", "--soft-core", "0.05", "--samples", &n, "--seed", "7"],
        );
    }
    let external = [
        "external-scan",
        "--n",
        "4",
        "--x",
        "0,0.5,1,2",
        "--soft-core",
        "0.05",
        "--samples",
        &n,
        "--u3-scale",
        "-1",
        "--allow-uncertified",
    ];
    add("classical", &[&external[..], &["--mode", "classical", "--ions", "1,0,0;-1,0,0", "--rotations", "64", "--seed", "8"]].concat());
    add(
        "bosonic",
        &[&external[..], &["--mode", "bosonic", "--particles", "2", "--radius", "2", "--u2-scale", "1", "--seed", "9"]].concat(),
    );
    add(
        "bosonic-grid",
        &[
            &external[..],
            &["--mode", "bosonic", "--particles", "2", "--radius", "2", "--u2-scale", "1", "--ion-measure", "grid", "--seed", "10"],
        ]
        .concat(),
    );
    runs
}

struct CliOutput {
    name: &'static str,
    code: i32,
    csv: String,
    seconds: f64,
}

fn run_cli(spec: &CliRun, workers: usize, dir: &FsPath) -> CliOutput {
    let mut argv = vec!["selfbridge".to_string()];
    argv.extend(spec.args.iter().cloned());
    argv.extend(["--workers".into(), workers.to_string(), "--out".into(), dir.display().to_string()]);
    let start = Instant::now();
    let code = selfbridge::cli::run(argv);
    let seconds = start.elapsed().as_secs_f64();
    let csv = std::fs::read_to_string(dir.join(format!("{}.csv", spec.args[0]))).unwrap_or_default();
    CliOutput { name: spec.name, code, csv, seconds }
}

/// Each CLI run with one worker and with four workers.
fn cli_outputs() -> &'static Vec<(CliOutput, CliOutput)> {
    static OUTPUTS: OnceLock<Vec<(CliOutput, CliOutput)>> = OnceLock::new();
    OUTPUTS.get_or_init(|| {
        cli_runs()
            .iter()
            .map(|spec| {
                let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
                (run_cli(spec, 1, a.path()), run_cli(spec, 4, b.path()))
            })
            .collect()
    })
}

fn cli_output(name: &str) -> &'static CliOutput {
    &cli_outputs().iter().find(|(a, _)| a.name == name).unwrap().0
}

/// Parses a CLI CSV into a header and numeric rows.
fn parse_csv(text: &str) -> (Vec<String>, Vec<Vec<f64>>) {
    let mut lines = text.lines();
    let header = lines.next().unwrap_or("").split(',').map(str::to_string).collect();
    let rows = lines.map(|l| l.split(',').map(|c| c.parse().unwrap_or(f64::NAN)).collect()).collect();
    (header, rows)
}

fn column(header: &[String], name: &str) -> usize {
    header.iter().position(|h| h == name).unwrap()
}

#[test]
fn criterion_08_classical_ions() {
    let _guard = serial();
    let out = cli_output("classical");
    let (header, rows) = parse_csv(&out.csv);
    let (x, r, e, g, ge) = (
        column(&header, "x"),
        column(&header, "ratio"),
        column(&header, "stderr"),
        column(&header, "form_gap"),
        column(&header, "form_gap_stderr"),
    );
    let mut failures = Vec::new();
    for row in &rows {
        note(&format!("|x|={}: ratio {:.6} ± {:.3e}, form gap {:.3e} ± {:.3e}", row[x], row[r], row[e], row[g], row[ge]));
        if row[r] < 1.0 - 3.0 * row[e] {
            failures.push(format!("|x|={} ratio below bound", row[x]));
        }
        if (row[g]).abs() > 4.0 * row[ge] {
            failures.push(format!("|x|={} forms differ", row[x]));
        }
    }
    raw_ion_diagnostic();
    let pass = rows.len() == 4 && failures.is_empty() && within(Duration::from_secs_f64(out.seconds), 900.0);
    report(
        8,
        "symmetrized ratio, classical ions",
        pass,
        &format!("{} rows, failures [{}], {:.1}s (<900s)", rows.len(), failures.join("; "), out.seconds),
    );
    assert!(pass);
}

/// Unsymmetrized `I_ions(x)/I_ions(0)` with x approaching an ion. Reported
/// only: without the rotation average the minimum need not sit at x = 0.
fn raw_ion_diagnostic() {
    let p = params(4, SLICES);
    let u1 = soft_coulomb();
    let world = ExternalWorld::classical(&p, vec![vec![1.0, 0.0, 0.0], vec![-1.0, 0.0, 0.0]], u1.scaled(-1.0)).unwrap();
    let shifts = along_axis(&[0.0, 0.5, 1.0]);
    let samples = 20_000;
    let mut energies = vec![Vec::with_capacity(samples); shifts.len()];
    for i in 0..samples as u64 {
        let path = sample_bridge(&p, &[0.0; 3], &[0.0; 3], p.bridge_steps(), &mut stream(SEED + 80, Lane::Bridge, i));
        for (c, x) in shifts.iter().enumerate() {
            let e = self_energy(&p, &path, &u1, x).unwrap().value + external_energy(&p, &path, &world, x).unwrap().value;
            energies[c].push(e);
        }
    }
    let reference = energies.iter().flatten().copied().fold(f64::INFINITY, f64::min);
    let means: Vec<f64> =
        energies.iter().map(|col| mean_stderr(&col.iter().map(|e| (reference - e).exp()).collect::<Vec<_>>()).0).collect();
    note(&format!(
        "unsymmetrized diagnostic (not asserted): I(x)/I(0) toward the ion at ê₁: |x|=0.5 → {:.4}, |x|=1 → {:.4}",
        means[1] / means[0],
        means[2] / means[0]
    ));
}

// ---------------------------------------------------------------------------
// Brute-force bosonic oracle: both permutations of M = 2 start points over the
// 3³ grid {-1, 0, 1}³ (radius L = 2), all 729 pairs enumerated, with its own
// sequential bridge sampler and energy sums.

fn oracle_bridge(rng: &mut StdRng, start: &[f64], end: &[f64], steps: usize, total: f64) -> Vec<[f64; 3]> {
    let h = total / steps as f64;
    let sigma2 = 1.0 / (2.0 * PI);
    let mut out = vec![[start[0], start[1], start[2]]];
    for j in 0..steps {
        let remaining = total - h * j as f64;
        let prev = out[j];
        let mut next = [0.0; 3];
        for c in 0..3 {
            let mean = prev[c] + h * (end[c] - prev[c]) / remaining;
            let var = sigma2 * h * (remaining - h) / remaining;
            let z: f64 = rng.sample(StandardNormal);
            next[c] = mean + var.max(0.0).sqrt() * z;
        }
        out.push(next);
    }
    out
}

fn soft_u(d: [f64; 3]) -> f64 {
    1.0 / (d[0] * d[0] + d[1] * d[1] + d[2] * d[2] + EPS * EPS).sqrt()
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

struct OracleRatio {
    mean: f64,
    stderr: f64,
}

/// `S(x)/S(0)` for every shift along ê₁, with delta-method errors across
/// independent grid configurations.
fn bosonic_oracle(radii: &[f64], per_config: usize, seed: u64) -> Vec<OracleRatio> {
    let (n, j) = (4usize, SLICES);
    let tau = 1.0 / j as f64;
    let steps = n * j;
    let grid: Vec<[f64; 3]> = (0..27).map(|k| [(k % 3) as f64 - 1.0, ((k / 3) % 3) as f64 - 1.0, (k / 9) as f64 - 1.0]).collect();
    let mut rng = StdRng::seed_from_u64(seed);
    // samples[config][k][shift]: Σ_π mass_π e^{-E}.
    let mut samples: Vec<Vec<Vec<f64>>> = Vec::with_capacity(grid.len() * grid.len());
    for a in &grid {
        for b in &grid {
            let ends = [[*a, *b], [*b, *a]];
            let masses: Vec<f64> = ends.iter().map(|e| (-PI * (norm2(sub(e[0], *a)) + norm2(sub(e[1], *b)))).exp()).collect();
            let mut config = Vec::with_capacity(per_config);
            for _ in 0..per_config {
                let w0 = oracle_bridge(&mut rng, &[0.0; 3], &[0.0; 3], steps, n as f64);
                let worlds: Vec<Vec<Vec<[f64; 3]>>> = ends
                    .iter()
                    .map(|e| vec![oracle_bridge(&mut rng, a, &e[0], j, 1.0), oracle_bridge(&mut rng, b, &e[1], j, 1.0)])
                    .collect();
                let mut row = Vec::with_capacity(radii.len());
                for &r in radii {
                    let tilted: Vec<[f64; 3]> =
                        w0.iter().enumerate().map(|(m, p)| [p[0] + r * m as f64 / steps as f64, p[1], p[2]]).collect();
                    let mut self_e = 0.0;
                    for k in 0..n {
                        for l in k + 1..n {
                            for s in 0..j {
                                self_e += tau * soft_u(sub(tilted[l * j + s], tilted[k * j + s]));
                            }
                        }
                    }
                    let mut total = 0.0;
                    for (world, mass) in worlds.iter().zip(&masses) {
                        let mut e = self_e;
                        for s in 0..j {
                            e += tau * soft_u(sub(world[0][s], world[1][s]));
                            for k in 0..n {
                                for ion in world {
                                    e -= tau * soft_u(sub(tilted[k * j + s], ion[s]));
                                }
                            }
                        }
                        total += mass * (-e).exp();
                    }
                    row.push(total);
                }
                config.push(row);
            }
            samples.push(config);
        }
    }
    let per_config_means: Vec<Vec<f64>> = samples
        .iter()
        .map(|config| (0..radii.len()).map(|c| config.iter().map(|row| row[c]).sum::<f64>() / per_config as f64).collect())
        .collect();
    let totals: Vec<f64> = (0..radii.len()).map(|c| per_config_means.iter().map(|m| m[c]).sum()).collect();
    (0..radii.len())
        .map(|c| {
            let ratio = totals[c] / totals[0];
            let mut var = 0.0;
            for config in &samples {
                let d: Vec<f64> = config.iter().map(|row| row[c] - ratio * row[0]).collect();
                let m = d.iter().sum::<f64>() / d.len() as f64;
                var += d.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / ((d.len() - 1) * d.len()) as f64;
            }
            OracleRatio { mean: ratio, stderr: var.sqrt() / totals[0] }
        })
        .collect()
}

fn norm2(v: [f64; 3]) -> f64 {
    v[0] * v[0] + v[1] * v[1] + v[2] * v[2]
}

#[test]
fn criterion_09_bosonic() {
    let _guard = serial();
    let ball = cli_output("bosonic");
    let start = Instant::now();
    let (header, rows) = parse_csv(&ball.csv);
    let (x, r, e) = (column(&header, "x"), column(&header, "ratio"), column(&header, "stderr"));
    let mut failures = Vec::new();
    for row in &rows {
        note(&format!("ball |x|={}: ratio {:.6} ± {:.3e}", row[x], row[r], row[e]));
        if row[r] < 1.0 - 3.0 * row[e] {
            failures.push(format!("|x|={} ratio below bound", row[x]));
        }
    }
    let radii = [0.0, 0.5, 1.0, 2.0];
    let shifts = along_axis(&radii);
    let u = soft_coulomb();
    let grid = IonMeasure::Grid {
        points: (0..27).map(|k| vec![(k % 3) as f64 - 1.0, ((k / 3) % 3) as f64 - 1.0, (k / 9) as f64 - 1.0]).collect(),
        weights: vec![1.0; 27],
    };
    let cross_check = RunConfig::new(4 * N, SEED + 90).with_workers(1);
    let estimator = estimate_s_bosonic(&params(4, SLICES), &u, &u, &u.scaled(-1.0), 2, &grid, &shifts, &cross_check).unwrap();
    let oracle = bosonic_oracle(&radii, 1024, SEED + 91);
    for c in 1..radii.len() {
        let est = estimator.ratio(0, c, 0).unwrap();
        let orc = &oracle[c];
        let combined = est.stderr.hypot(orc.stderr);
        note(&format!(
            "grid |x|={}: estimator {:.6} ± {:.3e}, oracle {:.6} ± {:.3e}",
            radii[c], est.mean, est.stderr, orc.mean, orc.stderr
        ));
        if (est.mean - orc.mean).abs() > 3.0 * combined {
            failures.push(format!("|x|={} estimator and oracle differ by {:.2}σ", radii[c], (est.mean - orc.mean).abs() / combined));
        }
    }
    let elapsed = start.elapsed().as_secs_f64() + ball.seconds;
    let pass = rows.len() == 4 && failures.is_empty() && elapsed < 1200.0;
    report(
        9,
        "symmetrized ratio, bosonic M = 2",
        pass,
        &format!("ball ratios and grid-oracle agreement (3σ combined), failures [{}], {:.1}s (<1200s)", failures.join("; "), elapsed),
    );
    assert!(pass);
}

// ---------------------------------------------------------------------------
// Gauss–Hermite oracle for n = 2, J = 1, ν = 3. The bridge has one interior
// point Z ~ N(0, σ²·(1/2)·I₃) with σ² = 1/(2π), and the only pair term is
// u(Z + x/2), so I(x) = E[exp(-u(Z + x/2))].

/// Nodes and weights for ∫ e^{-t²} f(t) dt by Newton iteration on the
/// orthonormal Hermite recurrence.
fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    let pim4 = PI.powf(-0.25);
    let (mut nodes, mut weights) = (vec![0.0; n], vec![0.0; n]);
    let mut z = 0.0;
    for i in 0..n.div_ceil(2) {
        z = match i {
            0 => (2.0 * n as f64 + 1.0).sqrt() - 1.85575 * (2.0 * n as f64 + 1.0).powf(-1.0 / 6.0),
            1 => z - 1.14 * (n as f64).powf(0.426) / z,
            2 => 1.86 * z - 0.86 * nodes[0],
            3 => 1.91 * z - 0.91 * nodes[1],
            _ => 2.0 * z - nodes[i - 2],
        };
        let mut pp = 0.0;
        for _ in 0..100 {
            let (mut p1, mut p2) = (pim4, 0.0);
            for k in 1..=n {
                let p3 = p2;
                p2 = p1;
                p1 = z * (2.0 / k as f64).sqrt() * p2 - ((k - 1) as f64 / k as f64).sqrt() * p3;
            }
            pp = (2.0 * n as f64).sqrt() * p2;
            let dz = p1 / pp;
            z -= dz;
            if dz.abs() <= 1e-15 * z.abs().max(1.0) {
                break;
            }
        }
        nodes[i] = z;
        nodes[n - 1 - i] = -z;
        weights[i] = 2.0 / (pp * pp);
        weights[n - 1 - i] = weights[i];
    }
    (nodes, weights)
}

fn gh_expectation(order: usize, shift: f64) -> f64 {
    let (t, w) = gauss_hermite(order);
    let scale = (2.0 * 0.25 / PI).sqrt();
    let mut sum = 0.0;
    for a in 0..order {
        for b in 0..order {
            let partial = w[a] * w[b];
            let (ya, yb) = (scale * t[a] + shift, scale * t[b]);
            for c in 0..order {
                let yc = scale * t[c];
                sum += partial * w[c] * (-1.0 / (ya * ya + yb * yb + yc * yc + EPS * EPS).sqrt()).exp();
            }
        }
    }
    sum / PI.powf(1.5)
}

/// The same expectation as a one-dimensional integral over |Z + a| (Simpson).
fn radial_expectation(shift: f64) -> f64 {
    let s2 = 0.25 / PI;
    let s = s2.sqrt();
    let density = |r: f64| {
        if shift == 0.0 {
            (2.0 / PI).sqrt() * r * r * (-r * r / (2.0 * s2)).exp() / (s2 * s)
        } else {
            r / (shift * s * (2.0 * PI).sqrt()) * ((-(r - shift).powi(2) / (2.0 * s2)).exp() - (-(r + shift).powi(2) / (2.0 * s2)).exp())
        }
    };
    let f = |r: f64| density(r) * (-1.0 / (r * r + EPS * EPS).sqrt()).exp();
    let (hi, m) = (shift + 14.0 * s, 200_000);
    let h = hi / m as f64;
    let mut sum = f(0.0) + f(hi);
    for k in 1..m {
        sum += f(k as f64 * h) * if k % 2 == 1 { 4.0 } else { 2.0 };
    }
    sum * h / 3.0
}

#[test]
fn criterion_10_quadrature_oracle() {
    let _guard = serial();
    let radii = [0.5, 1.0, 2.0];
    let p = params(2, 1);
    let mc = estimate_ratios(&p, &soft_coulomb(), &along_axis(&radii), &RunConfig::new(1_000_000, SEED + 100).with_workers(1)).unwrap();
    let order = 120;
    let base = gh_expectation(order, 0.0);
    let coarse_base = gh_expectation(80, 0.0);
    let mut failures = Vec::new();
    for (r, e) in radii.iter().zip(&mc) {
        let gh = gh_expectation(order, r / 2.0) / base;
        let coarse = gh_expectation(80, r / 2.0) / coarse_base;
        let radial = radial_expectation(r / 2.0) / radial_expectation(0.0);
        note(&format!(
            "|x|={r}: quadrature {gh:.8} (80 nodes {coarse:.8}, radial {radial:.8}), Monte Carlo {:.8} ± {:.3e}",
            e.mean, e.stderr
        ));
        if (gh - radial).abs() > 0.1 * e.stderr {
            failures.push(format!("|x|={r}: quadrature not converged ({:.2e} from the radial integral)", (gh - radial).abs()));
        }
        if !e.consistent_with(gh, 3.0) {
            failures.push(format!("|x|={r}: {:.2}σ", (e.mean - gh).abs() / e.stderr));
        }
    }
    let pass = failures.is_empty();
    report(10, "Gauss–Hermite oracle vs Monte Carlo (N = 10⁶)", pass, &format!("3σ, failures [{}]", failures.join("; ")));
    assert!(pass);
}

#[test]
fn criterion_11_worker_count_reproducibility() {
    let _guard = serial();
    let outputs = cli_outputs();
    let mut failures = Vec::new();
    for (one, four) in outputs {
        if one.csv.is_empty() || one.code == 2 {
            failures.push(format!("{} did not run (exit {})", one.name, one.code));
        } else if one.csv != four.csv {
            failures.push(format!("{} differs", one.name));
        }
    }
    let pass = failures.is_empty();
    report(
        11,
        "byte-identical CSVs for 1 and 4 workers",
        pass,
        &format!("{} commands compared, failures [{}]", outputs.len(), failures.join(", ")),
    );
    assert!(pass);
}
