//! Periodic-box spectral discretization.
//!
//! Fields live on `[-L/2, L/2)^N` with `n` points per axis. Differential
//! operators act by multiplication with their Fourier symbols; integrals use
//! the trapezoid rule, which is spectrally accurate for decayed or periodic
//! integrands. The box stands in for all of space, so fields are expected to
//! have decayed well below working precision at the boundary.

mod field;
mod grid;
mod params;

use std::sync::Arc;

use num_complex::Complex64;

pub use field::{ComplexField, Field, Sampled};
pub use grid::{frequency, make_grid, Grid, MIN_POINTS};
pub use params::Params;

use crate::error::{Error, Result};

/// Even-order differential operators with diagonal Fourier symbols.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DiffOp {
    Laplacian,
    Bilaplacian,
}

impl DiffOp {
    fn symbol(self, k2: f64) -> f64 {
        match self {
            DiffOp::Laplacian => -k2,
            DiffOp::Bilaplacian => k2 * k2,
        }
    }
}

/// Apply `Δ` or `Δ²` spectrally.
pub fn apply_diff(f: &Field, op: DiffOp) -> Result<Field> {
    f.check_finite()?;
    let grid = f.grid();
    let mut spec = f.spectrum();
    for (c, &k2) in spec.iter_mut().zip(grid.k2()) {
        *c *= op.symbol(k2);
    }
    Ok(Field::from_spectrum(Arc::clone(grid), spec))
}

/// Spectral first derivative along `axis`; the Nyquist mode is dropped.
pub fn partial(f: &Field, axis: usize) -> Result<Field> {
    let grid = f.grid();
    if axis >= grid.dim() {
        return Err(Error::InvalidInput(format!("axis {axis} out of range")));
    }
    f.check_finite()?;
    let mut spec = f.spectrum();
    multiply_derivative(grid, &mut spec, axis);
    Ok(Field::from_spectrum(Arc::clone(grid), spec))
}

pub(crate) fn multiply_derivative(grid: &Grid, spec: &mut [Complex64], axis: usize) {
    let n = grid.n();
    let stride = n.pow((grid.dim() - 1 - axis) as u32);
    let k = grid.wavenumbers();
    for (idx, c) in spec.iter_mut().enumerate() {
        let j = (idx / stride) % n;
        if j == n / 2 {
            *c = Complex64::new(0.0, 0.0);
        } else {
            *c *= Complex64::new(0.0, k[j]);
        }
    }
}

/// Trapezoid rule: `h^N * sum f`.
pub fn integrate(f: &Field) -> f64 {
    f.grid().cell_volume() * f.values().iter().sum::<f64>()
}

/// `h^N * sum values` for raw samples on `grid`.
pub fn integrate_values(grid: &Grid, values: &[f64]) -> f64 {
    grid.cell_volume() * values.iter().sum::<f64>()
}

/// Squared Sobolev quantities of a field.
///
/// The H² norm is `Σ (1 + |k|² + |k|⁴) |f̂|²` with the Parseval weight, which
/// is equivalent to the usual one and diagonal in Fourier space.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SobolevProducts {
    /// `∫|f|²`
    pub l2: f64,
    /// `∫|∇f|²`
    pub grad: f64,
    /// `∫|Δf|²`
    pub lap: f64,
    /// `l2 + grad + lap`
    pub h2: f64,
}

pub fn sobolev_products<F: Sampled>(f: &F) -> Result<SobolevProducts> {
    f.check_finite()?;
    Ok(sobolev_from_spectrum(f.grid(), &f.spectrum()))
}

pub(crate) fn sobolev_from_spectrum(grid: &Grid, spec: &[Complex64]) -> SobolevProducts {
    let (mut l2, mut grad, mut lap) = (0.0, 0.0, 0.0);
    for (c, &k2) in spec.iter().zip(grid.k2()) {
        let a = c.norm_sqr();
        l2 += a;
        grad += k2 * a;
        lap += k2 * k2 * a;
    }
    let w = grid.parseval_weight();
    let (l2, grad, lap) = (w * l2, w * grad, w * lap);
    SobolevProducts { l2, grad, lap, h2: l2 + grad + lap }
}

/// H² weight `1 + |k|² + |k|⁴` used by norms and the orbital distance.
pub fn h2_weight(k2: f64) -> f64 {
    1.0 + k2 + k2 * k2
}

/// Apply `γΔ² - βΔ + α`.
pub fn apply_linear(params: &Params, f: &Field) -> Result<Field> {
    f.check_finite()?;
    let grid = f.grid();
    let mut spec = f.spectrum();
    for (c, &k2) in spec.iter_mut().zip(grid.k2()) {
        *c *= params.symbol(k2);
    }
    Ok(Field::from_spectrum(Arc::clone(grid), spec))
}

/// Solve `(γΔ² - βΔ + α) u = rhs` by division by the symbol.
pub fn invert_linear(params: &Params, rhs: &Field) -> Result<Field> {
    rhs.check_finite()?;
    let grid = rhs.grid();
    params.check_symbol(grid)?;
    let mut spec = rhs.spectrum();
    for (c, &k2) in spec.iter_mut().zip(grid.k2()) {
        *c /= params.symbol(k2);
    }
    Ok(Field::from_spectrum(Arc::clone(grid), spec))
}

/// Treatment of interpolation targets outside the source box.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Outside {
    /// Periodic continuation.
    Wrap,
    /// The field is taken to vanish outside the box.
    Zero,
}

/// Evaluate the trigonometric interpolant of `f` at arbitrary points.
///
/// Uses separable per-axis interpolation matrices, so the cost is
/// `O(n^{N+1})` for a full grid of targets. `outside` decides what targets
/// beyond `[-L/2, L/2)` of the source box receive.
pub fn interpolate_onto(f: &Field, target: &Arc<Grid>, map: impl Fn(f64) -> f64, outside: Outside) -> Result<Field> {
    let src = f.grid();
    if src.dim() != target.dim() {
        return Err(Error::GridMismatch);
    }
    let n = src.n();
    let m = target.n();
    // coefficient per axis: c_j = sum over source samples; build m x n matrix
    let mut matrix = vec![0.0; m * n];
    for (t, row) in matrix.chunks_mut(n).enumerate() {
        let x = map(target.coordinate(t));
        let half = 0.5 * src.length();
        if outside == Outside::Zero && !(-half..half).contains(&x) {
            continue;
        }
        for (j, slot) in row.iter_mut().enumerate() {
            *slot = periodic_cardinal(x - src.coordinate(j), src);
        }
    }
    let dim = src.dim();
    let mut data = f.values().to_vec();
    let mut shape = vec![n; dim];
    for axis in 0..dim {
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let mut next = vec![0.0; outer * m * inner];
        for o in 0..outer {
            for t in 0..m {
                let row = &matrix[t * n..(t + 1) * n];
                for i in 0..inner {
                    let mut acc = 0.0;
                    for (j, w) in row.iter().enumerate() {
                        acc += w * data[(o * n + j) * inner + i];
                    }
                    next[(o * m + t) * inner + i] = acc;
                }
            }
        }
        data = next;
        shape[axis] = m;
    }
    Field::new(Arc::clone(target), data)
}

/// Periodic cardinal function of the even-length trigonometric interpolant,
/// with the Nyquist mode split symmetrically.
fn periodic_cardinal(dx: f64, grid: &Grid) -> f64 {
    let n = grid.n() as f64;
    let h = grid.spacing();
    let t = std::f64::consts::PI * dx / h;
    let s = (t / n).sin();
    if s.abs() < 1e-14 {
        // dx is a multiple of the period or of n*h: value 1 at coincident samples
        let k = (dx / (n * h)).round();
        return if (dx - k * n * h).abs() < 1e-12 * h { 1.0 } else { 0.0 };
    }
    t.sin() * (t / n).cos() / (n * s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn rel_l2(a: &[f64], b: &[f64]) -> f64 {
        let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
        let den: f64 = b.iter().map(|y| y * y).sum();
        (num / den).sqrt()
    }

    #[test]
    fn laplacian_of_plane_wave() {
        let g = make_grid(1, 128, 40.0).unwrap();
        let q = 2.0 * PI / 40.0;
        let f = Field::from_fn(g.clone(), |x| (q * x[0]).sin());
        let lap = apply_diff(&f, DiffOp::Laplacian).unwrap();
        for (a, b) in lap.values().iter().zip(f.values()) {
            assert!((a + q * q * b).abs() < 1e-13);
        }
    }

    #[test]
    fn constants_are_annihilated() {
        let g = make_grid(2, 32, 10.0).unwrap();
        let f = Field::from_fn(g, |_| 3.5);
        for op in [DiffOp::Laplacian, DiffOp::Bilaplacian] {
            assert!(apply_diff(&f, op).unwrap().max_abs() < 1e-13);
        }
    }

    #[test]
    fn gaussian_matches_finite_differences() {
        // fourth-order central differences of the analytic samples on a much
        // finer grid, compared at the coarse grid points
        let g = make_grid(1, 256, 40.0).unwrap();
        let f = Field::from_fn(g.clone(), |x| (-x[0] * x[0]).exp());
        let lap = apply_diff(&f, DiffOp::Laplacian).unwrap();
        let bil = apply_diff(&f, DiffOp::Bilaplacian).unwrap();
        let e = 1e-3;
        let u = |x: f64| (-x * x).exp();
        let mut worst_lap: f64 = 0.0;
        let mut worst_bil: f64 = 0.0;
        for i in 0..g.n() {
            let x = g.coordinate(i);
            let d2 = (-u(x + 2.0 * e) + 16.0 * u(x + e) - 30.0 * u(x) + 16.0 * u(x - e) - u(x - 2.0 * e))
                / (12.0 * e * e);
            // second difference of the (exact) second derivative
            let uxx = |y: f64| (4.0 * y * y - 2.0) * u(y);
            let d4 = (-uxx(x + 2.0 * e) + 16.0 * uxx(x + e) - 30.0 * uxx(x) + 16.0 * uxx(x - e)
                - uxx(x - 2.0 * e))
                / (12.0 * e * e);
            worst_lap = worst_lap.max((lap.values()[i] - d2).abs());
            worst_bil = worst_bil.max((bil.values()[i] - d4).abs());
        }
        assert!(worst_lap < 1e-8, "laplacian {worst_lap:e}");
        assert!(worst_bil < 1e-8, "bilaplacian {worst_bil:e}");
    }

    #[test]
    fn bilaplacian_is_laplacian_squared() {
        let g = make_grid(2, 32, 12.0).unwrap();
        let f = Field::from_fn(g, |x| (-(x[0] * x[0] + 0.5 * x[1] * x[1])).exp() * (1.0 + x[0]));
        let a = apply_diff(&f, DiffOp::Bilaplacian).unwrap();
        let b = apply_diff(&apply_diff(&f, DiffOp::Laplacian).unwrap(), DiffOp::Laplacian).unwrap();
        assert!(rel_l2(a.values(), b.values()) < 1e-12);
    }

    #[test]
    fn rejects_nonfinite() {
        let g = make_grid(1, 16, 1.0).unwrap();
        let mut f = Field::zeros(g);
        f.values_mut()[3] = f64::NAN;
        assert!(matches!(apply_diff(&f, DiffOp::Laplacian), Err(Error::NonFinite(3))));
    }

    #[test]
    fn integrals_of_simple_fields() {
        let g = make_grid(2, 16, 3.0).unwrap();
        let c = Field::from_fn(g, |_| 2.0);
        assert!((integrate(&c) - 2.0 * 9.0).abs() < 1e-12);

        let g = make_grid(1, 64, 40.0).unwrap();
        let s = Field::from_fn(g, |x| (2.0 * PI * x[0] / 40.0).sin());
        assert!(integrate(&s).abs() < 1e-13);
    }

    #[test]
    fn sech_squared_mass() {
        // ∫ (30/4) sech^4(x/2) dx = 7.5 * 2 * 4/3 = 20
        let g = make_grid(1, 512, 80.0).unwrap();
        let a = 30f64.sqrt() / 2.0;
        let u = Field::from_fn(g, |x| a / (0.5 * x[0]).cosh().powi(2));
        let m = integrate(&u.map(|v| v * v));
        assert!((m - 20.0).abs() < 1e-10, "{m}");
    }

    #[test]
    fn sobolev_products_of_single_mode() {
        let g = make_grid(1, 64, 20.0).unwrap();
        let q = 3.0 * 2.0 * PI / 20.0;
        let f = ComplexField::from_fn(g, |x| Complex64::from_polar(1.0, q * x[0]));
        let s = sobolev_products(&f).unwrap();
        assert!((s.l2 - 20.0).abs() < 1e-12);
        assert!((s.grad - q * q * 20.0).abs() < 1e-10);
        assert!((s.lap - q.powi(4) * 20.0).abs() < 1e-9);
    }

    #[test]
    fn sobolev_products_of_exact_profile() {
        let g = make_grid(1, 512, 80.0).unwrap();
        let a = 30f64.sqrt() / 2.0;
        let u = Field::from_fn(g, |x| a / (0.5 * x[0]).cosh().powi(2));
        let s = sobolev_products(&u).unwrap();
        assert!((s.l2 - 20.0).abs() < 1e-8);
        assert!((s.grad - 4.0).abs() < 1e-8, "{}", s.grad);
        assert!((s.lap - 20.0 / 7.0).abs() < 1e-8, "{}", s.lap);
        assert!((s.h2 - (20.0 + 4.0 + 20.0 / 7.0)).abs() < 1e-8);
    }

    #[test]
    fn sobolev_of_zero() {
        let g = make_grid(3, 16, 1.0).unwrap();
        assert_eq!(sobolev_products(&Field::zeros(g)).unwrap(), SobolevProducts::default());
    }

    #[test]
    fn invert_linear_diagonal_and_zero_mode() {
        let g = make_grid(1, 64, 20.0).unwrap();
        let p = Params::new(1.0, 5.0, 4.0, 1.0, 1).unwrap();
        let q = 2.0 * 2.0 * PI / 20.0;
        let s = p.symbol(q * q);
        let rhs = Field::from_fn(g.clone(), |x| s * (q * x[0]).cos());
        let u = invert_linear(&p, &rhs).unwrap();
        for (i, v) in u.values().iter().enumerate() {
            assert!((v - (q * g.coordinate(i)).cos()).abs() < 1e-13);
        }
        let c = Field::from_fn(g, |_| 3.0);
        let u = invert_linear(&p, &c).unwrap();
        assert!(u.values().iter().all(|v| (v - 0.75).abs() < 1e-14));
    }

    #[test]
    fn invert_linear_rejects_indefinite_symbol() {
        let g = make_grid(1, 256, 40.0).unwrap();
        let p = Params::new(1.0, -2.5, 1.0, 1.0, 1).unwrap();
        let rhs = Field::from_fn(g, |x| (-x[0] * x[0]).exp());
        assert!(matches!(invert_linear(&p, &rhs), Err(Error::SymbolNotPositive { .. })));
    }

    #[test]
    fn interpolation_reproduces_shifted_samples() {
        let g = make_grid(1, 128, 30.0).unwrap();
        let f = Field::from_fn(g.clone(), |x| (-(x[0] * x[0])).exp());
        let shifted = interpolate_onto(&f, &g, |x| x - 0.37, Outside::Wrap).unwrap();
        for (i, v) in shifted.values().iter().enumerate() {
            let x = g.coordinate(i) - 0.37;
            assert!((v - (-x * x).exp()).abs() < 1e-12);
        }
        let same = interpolate_onto(&f, &g, |x| x, Outside::Wrap).unwrap();
        assert!(rel_l2(same.values(), f.values()) < 1e-14);
    }

    #[test]
    fn partial_derivative_of_sine() {
        let g = make_grid(2, 32, 2.0 * PI).unwrap();
        let f = Field::from_fn(g, |x| (x[0]).sin() * (2.0 * x[1]).cos());
        let d0 = partial(&f, 0).unwrap();
        let d1 = partial(&f, 1).unwrap();
        for idx in 0..f.len() {
            let p = f.grid().point(idx);
            assert!((d0.values()[idx] - p[0].cos() * (2.0 * p[1]).cos()).abs() < 1e-12);
            assert!((d1.values()[idx] + 2.0 * p[0].sin() * (2.0 * p[1]).sin()).abs() < 1e-12);
        }
    }
}
