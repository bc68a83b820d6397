use std::sync::Arc;

use fourth_nls::evolution::orbital_distance;
use fourth_nls::functionals::{gn_ratio, GnForm};
use fourth_nls::linearization::{apply_linearized, Linearization};
use fourth_nls::spectral::integrate;
use fourth_nls::{make_grid, ComplexField, Field, Grid, Params, Sampled};
use num_complex::Complex64;
use proptest::prelude::*;

fn exact(grid: &Arc<Grid>) -> Field {
    let a = 30f64.sqrt() / 2.0;
    Field::from_fn(Arc::clone(grid), |x| a / (x[0] / 2.0).cosh().powi(2))
}

fn exact_params() -> Params {
    Params::new(1.0, 5.0, 4.0, 1.0, 1).unwrap()
}

/// Smooth localized field from a few Gaussian-windowed cosines.
fn smooth(grid: &Arc<Grid>, coeffs: &[f64]) -> Field {
    Field::from_fn(Arc::clone(grid), |x| {
        let w = (-x[0] * x[0] / 16.0).exp();
        coeffs.iter().enumerate().map(|(j, c)| c * ((j as f64) * 0.4 * x[0] + j as f64).cos()).sum::<f64>() * w
    })
}

fn inner(a: &Field, b: &Field) -> f64 {
    integrate(&Field::new(Arc::clone(a.grid()), a.values().iter().zip(b.values()).map(|(x, y)| x * y).collect()).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn transform_round_trip_and_parseval(vals in prop::collection::vec(-1.0f64..1.0, 64)) {
        let g = make_grid(1, 64, 10.0).unwrap();
        let mut data: Vec<Complex64> = vals.iter().map(|&v| Complex64::new(v, 0.5 * v * v)).collect();
        let orig = data.clone();
        g.forward(&mut data);
        let spec_energy: f64 = data.iter().map(|c| c.norm_sqr()).sum::<f64>() * g.parseval_weight();
        let phys_energy: f64 = orig.iter().map(|c| c.norm_sqr()).sum::<f64>() * g.cell_volume();
        prop_assert!((spec_energy - phys_energy).abs() <= 1e-12 * phys_energy.max(1.0));
        g.inverse(&mut data);
        let err = data.iter().zip(&orig).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        prop_assert!(err < 1e-14);
    }

    #[test]
    fn gn_ratio_is_scale_invariant(coeffs in prop::collection::vec(-1.0f64..1.0, 1..5), c in 0.1f64..10.0) {
        let g = make_grid(1, 256, 60.0).unwrap();
        let mut coeffs = coeffs;
        coeffs[0] += 2.0;
        let u = smooth(&g, &coeffs);
        for form in [GnForm::H1, GnForm::H2] {
            let a = gn_ratio(&u, 1.0, form).unwrap();
            let b = gn_ratio(&u.scaled(c), 1.0, form).unwrap();
            prop_assert!((a - b).abs() <= 1e-12 * a.abs(), "{form:?}: {a} vs {b}");
        }
    }

    #[test]
    fn linearized_operators_are_symmetric(a in prop::collection::vec(-1.0f64..1.0, 4), b in prop::collection::vec(-1.0f64..1.0, 4)) {
        let g = make_grid(1, 256, 60.0).unwrap();
        let u = exact(&g);
        let p = exact_params();
        let v = smooth(&g, &a);
        let w = smooth(&g, &b);
        for which in [Linearization::L1, Linearization::L2] {
            let lv = apply_linearized(&u, &v, &p, which).unwrap();
            let lw = apply_linearized(&u, &w, &p, which).unwrap();
            let (x, y) = (inner(&lv, &w), inner(&v, &lw));
            prop_assert!((x - y).abs() <= 1e-10 * (1.0 + x.abs()), "{which:?}: {x} vs {y}");
        }
    }

    #[test]
    fn l2_is_nonnegative_off_the_profile(a in prop::collection::vec(-1.0f64..1.0, 4)) {
        let g = make_grid(1, 256, 60.0).unwrap();
        let u = exact(&g);
        let p = exact_params();
        let v = smooth(&g, &a);
        let uu = inner(&u, &u);
        let v = v.axpy(-inner(&v, &u) / uu, &u).unwrap();
        let q = inner(&apply_linearized(&u, &v, &p, Linearization::L2).unwrap(), &v);
        prop_assert!(q >= -1e-10 * inner(&v, &v).max(1e-30), "quadratic form {q}");
    }

    #[test]
    fn orbital_distance_ignores_gauge_and_grid_shifts(theta in 0.0f64..std::f64::consts::TAU, shift in -20i64..20, eps in 0.0f64..0.05) {
        let g = make_grid(1, 256, 60.0).unwrap();
        let u = exact(&g);
        let n = g.n() as i64;
        let bump = Field::from_fn(Arc::clone(&g), |x| (-(x[0] - 1.0).powi(2)).exp());
        let psi = u.axpy(eps, &bump).unwrap();
        let base = orbital_distance(&psi, &u).unwrap();
        let moved: Vec<Complex64> = (0..n)
            .map(|i| {
                let src = (i - shift).rem_euclid(n) as usize;
                Complex64::from_polar(1.0, theta) * psi.values()[src]
            })
            .collect();
        let moved = ComplexField::new(Arc::clone(psi.grid()), moved).unwrap();
        let d = orbital_distance(&moved, &u).unwrap();
        prop_assert!((d - base).abs() <= 1e-9 + 1e-6 * base, "{d} vs {base}");
    }
}
