use rand::Rng;
use rand_distr::StandardNormal;
use selfbridge::bridges::{sample_bridge, tilt_path};
use selfbridge::estimators::{estimate_ratio, estimate_ratios, RunConfig};
use selfbridge::potentials::{make_coulomb, soft_core};
use selfbridge::rng::{stream, Lane};
use selfbridge::stats::mean_stderr;
use selfbridge::ModelParams;

/// Sequential conditional-Gaussian bridge in one dimension: given the point
/// at `t`, the next one has mean `p + h (end - p)/(T - t)` and variance
/// `σ² h (T - t - h)/(T - t)`.
fn conditional_bridge<R: Rng>(sigma2: f64, h: f64, steps: usize, end: f64, rng: &mut R) -> Vec<f64> {
    let total = h * steps as f64;
    let mut out = vec![0.0];
    for j in 0..steps {
        let t = h * j as f64;
        let p = out[j];
        let remaining = total - t;
        let mean = p + h * (end - p) / remaining;
        let var = sigma2 * h * (remaining - h) / remaining;
        let z: f64 = rng.sample(StandardNormal);
        out.push(mean + var.sqrt() * z);
    }
    out
}

/// Sample variance and its standard error.
fn variance_stderr(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let (mean, _) = mean_stderr(v);
    let m2 = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let m4 = v.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / n;
    (m2, ((m4 - m2 * m2) / n).sqrt())
}

#[test]
fn midpoint_variance_matches_covariance_and_conditional_sampler() {
    let p = ModelParams::new(1, 1.0, 2, 2, 1.0).unwrap();
    let steps = p.bridge_steps();
    let n = 100_000;
    let mut rng = stream(4, Lane::Aux, u64::MAX);
    let mut ramp = vec![Vec::with_capacity(n); steps + 1];
    let mut seq = vec![Vec::with_capacity(n); steps + 1];
    for i in 0..n as u64 {
        let w = sample_bridge(&p, &[0.0], &[0.0], steps, &mut stream(4, Lane::Bridge, i));
        let c = conditional_bridge(p.diffusion(), p.step(), steps, 0.0, &mut rng);
        for j in 0..=steps {
            ramp[j].push(w.point(j)[0]);
            seq[j].push(c[j]);
        }
    }
    let total = p.total_time();
    for j in 1..steps {
        let t = p.step() * j as f64;
        let exact = p.diffusion() * t * (1.0 - t / total);
        let (a, ea) = variance_stderr(&ramp[j]);
        let (b, eb) = variance_stderr(&seq[j]);
        assert!((a - exact).abs() <= 4.0 * ea, "j={j}: {a} vs {exact}");
        assert!((a - b).abs() <= 4.0 * ea.hypot(eb), "j={j}: {a} vs conditional {b}");
        let (m, e) = mean_stderr(&ramp[j]);
        assert!(m.abs() <= 4.0 * e);
    }
    let t = total / 2.0;
    assert!((p.diffusion() * t * (1.0 - t / total) - 0.0795775).abs() < 1e-7);
}

#[test]
fn tilt_preserves_linear_functional() {
    let p = ModelParams::new(3, 1.0, 2, 4, 1.0).unwrap();
    let steps = p.bridge_steps();
    let x = [1.0, -0.5, 0.25];
    let v = [0.3, 1.0, -2.0];
    let j = 3;
    let s = p.step() * j as f64;
    let dot = |a: &[f64]| a.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>();
    let (mut tilted, mut direct) = (Vec::new(), Vec::new());
    for i in 0..50_000u64 {
        let base = sample_bridge(&p, &[0.0; 3], &[0.0; 3], steps, &mut stream(8, Lane::Bridge, i));
        tilted.push(dot(tilt_path(&base, &x).point(j)));
        let w = sample_bridge(&p, &[0.0; 3], &x, steps, &mut stream(8, Lane::Direct, i));
        direct.push(dot(w.point(j)));
    }
    let expected = s / p.total_time() * dot(&x);
    let (a, ea) = mean_stderr(&tilted);
    let (b, eb) = mean_stderr(&direct);
    assert!((a - b).abs() <= 4.0 * ea.hypot(eb));
    assert!((a - expected).abs() <= 4.0 * ea && (b - expected).abs() <= 4.0 * eb);
}

#[test]
fn tilt_preserves_gaussian_functional() {
    let p = ModelParams::new(3, 1.0, 2, 4, 1.0).unwrap();
    let steps = p.bridge_steps();
    let x = [1.0, 0.0, 0.0];
    let phi = |q: &[f64]| (-0.3 * q.iter().map(|c| c * c).sum::<f64>()).exp();
    let (mut tilted, mut direct) = (Vec::new(), Vec::new());
    for i in 0..50_000u64 {
        let base = sample_bridge(&p, &[0.0; 3], &[0.0; 3], steps, &mut stream(9, Lane::Bridge, i));
        tilted.push(phi(tilt_path(&base, &x).point(steps / 2)));
        direct.push(phi(sample_bridge(&p, &[0.0; 3], &x, steps, &mut stream(9, Lane::Direct, i)).point(steps / 2)));
    }
    let (a, ea) = mean_stderr(&tilted);
    let (b, eb) = mean_stderr(&direct);
    assert!((a - b).abs() <= 4.0 * ea.hypot(eb), "{a} vs {b}");
}

#[test]
fn estimates_are_independent_of_worker_count() {
    let p = ModelParams::new(3, 1.0, 4, 4, 1.0).unwrap();
    let pot = soft_core(&make_coulomb(3, 1.0).unwrap(), 0.05).unwrap();
    let shifts = vec![vec![0.5, 0.0, 0.0], vec![1.0, 1.0, 0.0]];
    let one = estimate_ratios(&p, &pot, &shifts, &RunConfig::new(3000, 21).with_workers(1)).unwrap();
    let many = estimate_ratios(&p, &pot, &shifts, &RunConfig::new(3000, 21).with_workers(3)).unwrap();
    let global = estimate_ratios(&p, &pot, &shifts, &RunConfig::new(3000, 21)).unwrap();
    assert_eq!(one, many);
    assert_eq!(one, global);
}

/// Stderr scales like `N^{-1/2}`: doubling N divides it by √2 within 20%.
/// Free-gas errors vanish identically, so a weakly coupled gas stands in.
#[test]
fn jackknife_error_scales_as_inverse_root_n() {
    let p = ModelParams::new(3, 1.0, 4, 4, 1.0).unwrap();
    let pot = soft_core(&make_coulomb(3, 1.0).unwrap(), 0.5).unwrap().scaled(0.2);
    let x = [1.0, 0.0, 0.0];
    let small = estimate_ratio(&p, &pot, &x, &RunConfig::new(20_000, 31)).unwrap();
    let large = estimate_ratio(&p, &pot, &x, &RunConfig::new(40_000, 32)).unwrap();
    let ratio = small.stderr / large.stderr;
    assert!((ratio / std::f64::consts::SQRT_2 - 1.0).abs() <= 0.2, "stderr ratio {ratio}");
}
