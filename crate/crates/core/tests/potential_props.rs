use std::sync::Arc;

use proptest::prelude::*;
use selfbridge::potentials::{
    laplacian_u, make_coulomb, make_dipole, make_ode, make_power_law, soft_core, solve_radial_ode, PotentialSpec, RadialPotential, Source,
};
use selfbridge::quadrature::Tolerance;

fn u_at(pot: &RadialPotential, y: &[f64]) -> f64 {
    pot.f(y.iter().map(|c| c * c).sum())
}

/// Fourth-order central second differences summed over coordinates.
fn fd_laplacian(pot: &RadialPotential, y: &[f64], h: f64) -> f64 {
    let centre = u_at(pot, y);
    (0..y.len())
        .map(|c| {
            let at = |k: f64| {
                let mut p = y.to_vec();
                p[c] += k * h;
                u_at(pot, &p)
            };
            (-at(-2.0) + 16.0 * at(-1.0) - 30.0 * centre + 16.0 * at(1.0) - at(2.0)) / (12.0 * h * h)
        })
        .sum()
}

fn point(dim: usize, radius: f64, angles: (f64, f64)) -> Vec<f64> {
    let (theta, phi) = angles;
    let dir = match dim {
        1 => vec![if theta < 1.5 { 1.0 } else { -1.0 }],
        2 => vec![phi.cos(), phi.sin()],
        _ => vec![theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos()],
    };
    dir.iter().map(|d| d * radius).collect()
}

fn check_laplacian(pot: &RadialPotential, dim: usize, y: &[f64]) -> Result<(), TestCaseError> {
    let s: f64 = y.iter().map(|c| c * c).sum();
    let exact = laplacian_u(pot, dim, s).unwrap();
    let h = 1e-3 * s.sqrt();
    let fd = fd_laplacian(pot, y, h);
    let scale = exact.abs().max(2.0 * dim as f64 * pot.df(s).abs()).max(4.0 * s * pot.d2f(s).abs());
    prop_assert!((fd - exact).abs() <= 1e-5 * scale, "{}: fd {fd} vs {exact} at |y|² = {s}", pot.label());
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn coulomb_laplacian_matches_differences(dim in 1usize..=3, sign in prop::sample::select(vec![1.0, -1.0]),
                                             radius in 0.1f64..10.0, theta in 0.0f64..3.1, phi in 0.0f64..6.2) {
        let pot = make_coulomb(dim, sign).unwrap();
        check_laplacian(&pot, dim, &point(dim, radius, (theta, phi)))?;
    }

    #[test]
    fn dipole_laplacian_matches_differences(alpha in 1.6f64..6.0, radius in 0.1f64..10.0, theta in 0.0f64..3.1, phi in 0.0f64..6.2) {
        let pot = make_dipole(alpha, 3).unwrap();
        check_laplacian(&pot, 3, &point(3, radius, (theta, phi)))?;
    }

    #[test]
    fn power_law_laplacian_matches_differences(dim in 1usize..=3, alpha in -1.0f64..3.0, coef in -2.0f64..2.0,
                                               radius in 0.1f64..10.0, theta in 0.0f64..3.1, phi in 0.0f64..6.2) {
        let pot = make_power_law(alpha, dim, coef).unwrap();
        check_laplacian(&pot, dim, &point(dim, radius, (theta, phi)))?;
    }

    #[test]
    fn soft_core_laplacian_matches_differences(eps in 0.01f64..1.0, radius in 0.1f64..10.0, theta in 0.0f64..3.1, phi in 0.0f64..6.2) {
        let pot = soft_core(&make_coulomb(3, 1.0).unwrap(), eps).unwrap();
        let y = point(3, radius, (theta, phi));
        check_laplacian(&pot, 3, &y)?;
        let q = radius * radius + eps * eps;
        let analytic = -1.5 * eps * eps * q.powf(-2.5);
        prop_assert!((pot.radial_operator(3, radius * radius) - analytic).abs() <= 1e-12 * analytic.abs());
    }

    #[test]
    fn scaling_is_linear(c in -3.0f64..3.0, s in 0.01f64..100.0, alpha in 1.6f64..5.0) {
        let pot = make_dipole(alpha, 3).unwrap();
        let scaled = pot.scaled(c);
        prop_assert!((scaled.f(s) - c * pot.f(s)).abs() <= 1e-14 * pot.f(s).abs().max(1e-300) * c.abs().max(1.0));
        prop_assert!((scaled.radial_operator(3, s) - c * pot.radial_operator(3, s)).abs()
            <= 1e-13 * pot.radial_operator(3, s).abs() * c.abs().max(1.0));
    }
}

/// `ν f' + 2 s f''` of the reconstructed solution by five-point differences
/// of its values must return `-g`.
#[test]
fn ode_solution_satisfies_equation() {
    let tol = Tolerance { abs: 1e-13, rel: 1e-13, max_intervals: 4000 };
    for &(dim, power) in &[(3usize, 4.0f64), (3, 3.0), (4, 3.5)] {
        let g: Source = Arc::new(move |t: f64| t.powf(-power));
        let spec = PotentialSpec::new(g, f64::INFINITY, f64::INFINITY, 0.0, 0.0, dim).unwrap();
        for &s in &[0.7, 1.3, 4.0] {
            let h = 0.02 * s;
            let f = |t: f64| solve_radial_ode(&spec, t, tol).unwrap();
            let (m2, m1, c, p1, p2) = (f(s - 2.0 * h), f(s - h), f(s), f(s + h), f(s + 2.0 * h));
            let d1 = (m2 - 8.0 * m1 + 8.0 * p1 - p2) / (12.0 * h);
            let d2 = (-m2 + 16.0 * m1 - 30.0 * c + 16.0 * p1 - p2) / (12.0 * h * h);
            let residual = dim as f64 * d1 + 2.0 * s * d2;
            let expected = -s.powf(-power);
            assert!((residual - expected).abs() <= 1e-4 * expected.abs(), "ν={dim} p={power} s={s}: {residual} vs {expected}");
        }
    }
}

#[test]
fn ode_potential_agrees_with_closed_form_dipole() {
    let g: Source = Arc::new(|t: f64| t.powi(-4));
    let spec = PotentialSpec::new(g, f64::INFINITY, f64::INFINITY, 0.0, 0.0, 3).unwrap();
    let ode = make_ode(spec, Tolerance::default());
    let dipole = make_dipole(4.0, 3).unwrap();
    for &s in &[0.5, 1.0, 2.0, 9.0] {
        assert!((ode.f(s) / dipole.f(s) - 1.0).abs() < 1e-6);
        assert!((ode.df(s) / dipole.df(s) - 1.0).abs() < 1e-6);
        assert!((ode.radial_operator(3, s) / dipole.radial_operator(3, s) - 1.0).abs() < 1e-6);
    }
}
