//! Grid sampling of Brownian bridges and the linear endpoint tilt.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::model::{ModelParams, Path};

/// Samples a normalized Brownian bridge from `start` to `end` over
/// `total_steps` grid steps of size `h = β/J`.
///
/// A free walk `W` with per-coordinate increment variance `σ² h` is drawn and
/// pinned by the ramp `start + W_j - (t_j/T)(W_N - (end - start))`, which has
/// exactly the bridge law at the grid times.
pub fn sample_bridge<R: Rng + ?Sized>(params: &ModelParams, start: &[f64], end: &[f64], total_steps: usize, rng: &mut R) -> Path {
    let dim = params.dim();
    debug_assert_eq!(start.len(), dim);
    debug_assert_eq!(end.len(), dim);
    let steps = total_steps.max(1);
    let sd = (params.diffusion() * params.step()).sqrt();

    let mut walk = vec![0.0; dim * (steps + 1)];
    for j in 1..=steps {
        for c in 0..dim {
            let z: f64 = rng.sample(StandardNormal);
            walk[j * dim + c] = walk[(j - 1) * dim + c] + sd * z;
        }
    }
    let mut positions = vec![0.0; dim * (steps + 1)];
    positions[..dim].copy_from_slice(start);
    for j in 1..steps {
        let frac = j as f64 / steps as f64;
        for c in 0..dim {
            let pin = walk[steps * dim + c] - (end[c] - start[c]);
            positions[j * dim + c] = start[c] + walk[j * dim + c] - frac * pin;
        }
    }
    positions[steps * dim..].copy_from_slice(end);
    Path::from_flat(dim, params.step(), positions).expect("bridge has at least two points")
}

/// Adds the ramp `(t_j / T) x` to every grid point; the start is unchanged
/// and the end moves by `x`.
pub fn tilt_path(path: &Path, x: &[f64]) -> Path {
    let steps = path.steps();
    let mut out = path.clone();
    for j in 1..=steps {
        let frac = j as f64 / steps as f64;
        for (p, xc) in out.point_mut(j).iter_mut().zip(x) {
            *p += frac * xc;
        }
    }
    out
}
