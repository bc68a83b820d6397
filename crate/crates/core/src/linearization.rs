//! Linearized operators around a stationary profile `u*`:
//!
//! * `L1 v = γΔ²v - βΔv + αv - (2σ+1)|u*|^{2σ} v` (real perturbations),
//! * `L2 v = γΔ²v - βΔv + αv - |u*|^{2σ} v` (imaginary perturbations).
//!
//! Both are self-adjoint for the L² pairing. The smallest eigenpairs come from
//! a block preconditioned eigensolver whose preconditioner is the inverse of
//! the constant-coefficient part; the stability integral `∫ v u*` with
//! `L1 v = u*` is computed by preconditioned MINRES after projecting out the
//! numerically computed kernel.

use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::functionals::el_residual;
use crate::spectral::{partial, Field, Grid, Params, Sampled};

/// Which linearization to build.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Linearization {
    L1,
    L2,
}

impl Linearization {
    fn coefficient(self, sigma: f64) -> f64 {
        match self {
            Linearization::L1 => 2.0 * sigma + 1.0,
            Linearization::L2 => 1.0,
        }
    }
}

/// Profiles whose Euler–Lagrange residual exceeds this get a warning.
pub const PROFILE_RESIDUAL_WARNING: f64 = 1e-6;
/// Every reported eigenpair satisfies `‖Lx - λx‖₂ < EIGEN_RESIDUAL_MAX ‖x‖₂`.
pub const EIGEN_RESIDUAL_MAX: f64 = 1e-8;
/// Largest number of eigenpairs one call may request.
pub const MAX_EIGENPAIRS: usize = 10;

/// Discretized operator on raw sample vectors.
struct Operator {
    grid: Arc<Grid>,
    symbol: Vec<f64>,
    potential: Vec<f64>,
}

impl Operator {
    fn new(u_star: &Field, params: &Params, which: Linearization) -> Result<Self> {
        params.validate()?;
        u_star.check_finite()?;
        let grid = Arc::clone(u_star.grid());
        if grid.dim() != params.dim {
            return Err(Error::InvalidInput("params dimension differs from grid dimension".into()));
        }
        let c = which.coefficient(params.sigma);
        let potential = u_star
            .values()
            .iter()
            .map(|&u| {
                let m2 = u * u;
                if m2 < 1e-300 {
                    0.0
                } else {
                    c * (params.sigma * m2.ln()).exp()
                }
            })
            .collect();
        let symbol = grid.k2().iter().map(|&k2| params.symbol(k2)).collect();
        Ok(Operator { grid, symbol, potential })
    }

    fn len(&self) -> usize {
        self.symbol.len()
    }

    fn spectral_multiply(&self, v: &[f64], f: impl Fn(f64) -> f64) -> Vec<f64> {
        let mut data: Vec<Complex64> = v.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        self.grid.forward(&mut data);
        for (c, &s) in data.iter_mut().zip(&self.symbol) {
            *c *= f(s);
        }
        self.grid.inverse(&mut data);
        data.into_iter().map(|c| c.re).collect()
    }

    fn apply(&self, v: &[f64]) -> Vec<f64> {
        let mut out = self.spectral_multiply(v, |s| s);
        for ((o, &p), &x) in out.iter_mut().zip(&self.potential).zip(v) {
            *o -= p * x;
        }
        out
    }

    /// `(γΔ² - βΔ + α)^{-1}`; requires a positive symbol.
    fn precondition(&self, r: &[f64]) -> Vec<f64> {
        self.spectral_multiply(r, |s| 1.0 / s)
    }

    fn dot(&self, a: &[f64], b: &[f64]) -> f64 {
        self.grid.cell_volume() * a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>()
    }

    fn norm(&self, a: &[f64]) -> f64 {
        self.dot(a, a).sqrt()
    }
}

fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Apply `L1` or `L2` built around `u_star` to `v`.
pub fn apply_linearized(u_star: &Field, v: &Field, params: &Params, which: Linearization) -> Result<Field> {
    u_star.same_grid(v)?;
    v.check_finite()?;
    let op = Operator::new(u_star, params, which)?;
    Field::new(Arc::clone(u_star.grid()), op.apply(v.values()))
}

/// Smallest eigenpairs of a linearized operator.
#[derive(Clone, Debug, Serialize)]
pub struct SpectrumReport {
    pub operator: Linearization,
    /// Ascending.
    pub eigenvalues: Vec<f64>,
    /// `‖Lx - λx‖₂` for L²-normalized `x`.
    pub eigen_residuals: Vec<f64>,
    pub n_negative: usize,
    /// Eigenvalues with `|λ| < kernel_tol`.
    pub kernel_dim_est: usize,
    pub kernel_tol: f64,
    pub iterations: usize,
    pub profile_residual: f64,
    pub warnings: Vec<String>,
    /// L²-normalized, in the order of `eigenvalues`.
    #[serde(skip)]
    pub eigenvectors: Vec<Field>,
}

impl SpectrumReport {
    /// Indices of eigenvalues inside the kernel tolerance.
    pub fn kernel_indices(&self) -> Vec<usize> {
        (0..self.eigenvalues.len()).filter(|&i| self.eigenvalues[i].abs() < self.kernel_tol).collect()
    }

    /// Smallest `|λ|` outside the kernel tolerance, if any was computed.
    pub fn smallest_nonkernel(&self) -> Option<f64> {
        self.eigenvalues
            .iter()
            .map(|l| l.abs())
            .filter(|&a| a >= self.kernel_tol)
            .fold(None, |m: Option<f64>, a| Some(m.map_or(a, |m| m.min(a))))
    }
}

#[derive(Clone, Copy, Debug)]
pub struct EigenOptions {
    pub max_iter: usize,
    /// Target residual; convergence is declared below it.
    pub tol: f64,
    /// Explicit kernel tolerance; by default `1e-6` times the smallest
    /// eigenvalue magnitude that is clearly away from zero.
    pub kernel_tol: Option<f64>,
    pub seed: u64,
}

impl Default for EigenOptions {
    fn default() -> Self {
        EigenOptions { max_iter: 20_000, tol: 1e-10, kernel_tol: None, seed: 7 }
    }
}

pub fn smallest_eigenpairs(u_star: &Field, params: &Params, which: Linearization, k: usize) -> Result<SpectrumReport> {
    smallest_eigenpairs_with(u_star, params, which, k, EigenOptions::default())
}

pub fn smallest_eigenpairs_with(
    u_star: &Field,
    params: &Params,
    which: Linearization,
    k: usize,
    opts: EigenOptions,
) -> Result<SpectrumReport> {
    if k == 0 || k > MAX_EIGENPAIRS {
        return Err(Error::InvalidInput(format!("k must be in 1..={MAX_EIGENPAIRS}, got {k}")));
    }
    let op = Operator::new(u_star, params, which)?;
    params.check_symbol(&op.grid)?;
    let block = (k + 4).min(op.len());
    if k > op.len() {
        return Err(Error::InvalidInput("k exceeds the number of grid points".into()));
    }
    let init = initial_block(&op, u_star, block, opts.seed)?;
    let (values, vectors, residuals, iterations) = lobpcg(&op, init, k, opts.tol, opts.max_iter)?;

    let floor = essential_floor(params);
    let kernel_tol = opts.kernel_tol.unwrap_or_else(|| default_kernel_tol(&values, floor));
    let profile_residual = el_residual(u_star, params)?;
    let mut warnings = Vec::new();
    if !(profile_residual < PROFILE_RESIDUAL_WARNING) {
        warnings.push(format!("u_star residual too large ({profile_residual:.3e})"));
    }
    let eigenvectors = vectors
        .into_iter()
        .map(|v| Field::new(Arc::clone(&op.grid), v))
        .collect::<Result<Vec<_>>>()?;
    Ok(SpectrumReport {
        operator: which,
        n_negative: values.iter().filter(|&&l| l < -kernel_tol).count(),
        kernel_dim_est: values.iter().filter(|l| l.abs() < kernel_tol).count(),
        eigenvalues: values,
        eigen_residuals: residuals,
        kernel_tol,
        iterations,
        profile_residual,
        warnings,
        eigenvectors,
    })
}

/// Bottom of the constant-coefficient symbol; sets the scale that separates
/// genuine eigenvalues from numerical zeros.
fn essential_floor(params: &Params) -> f64 {
    if params.beta < 0.0 && params.gamma > 0.0 {
        params.alpha - params.beta * params.beta / (4.0 * params.gamma)
    } else {
        params.alpha
    }
}

fn default_kernel_tol(values: &[f64], floor: f64) -> f64 {
    let cut = 1e-3 * floor.abs().max(f64::MIN_POSITIVE);
    let reference = values.iter().map(|l| l.abs()).filter(|&a| a > cut).fold(f64::INFINITY, f64::min);
    if reference.is_finite() {
        1e-6 * reference
    } else {
        1e-6 * floor
    }
}

fn initial_block(op: &Operator, u_star: &Field, block: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    let mut cols = vec![u_star.values().to_vec()];
    for axis in 0..op.grid.dim() {
        cols.push(partial(u_star, axis)?.into_values());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    while cols.len() < block + 2 {
        let noise: Vec<f64> = (0..op.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        // smooth random start, weighted toward the profile's support
        let shaped: Vec<f64> = noise.iter().zip(u_star.values()).map(|(r, u)| r * (u.abs() + 1e-3)).collect();
        cols.push(op.precondition(&shaped));
    }
    let mut basis = Vec::new();
    orthonormalize_into(op, &mut basis, cols);
    if basis.len() < block {
        return Err(Error::Numerical("could not build an independent starting block".into()));
    }
    basis.truncate(block);
    Ok(basis)
}

/// Appends the parts of `cols` orthogonal to `basis` (two Gram–Schmidt passes),
/// dropping numerically dependent columns. Returns how many were kept.
fn orthonormalize_into(op: &Operator, basis: &mut Vec<Vec<f64>>, cols: Vec<Vec<f64>>) -> usize {
    let start = basis.len();
    for mut c in cols {
        let before = op.norm(&c);
        if !(before > 0.0) || !before.is_finite() {
            continue;
        }
        for _ in 0..2 {
            for b in basis.iter() {
                let p = op.dot(b, &c);
                axpy(&mut c, -p, b);
            }
        }
        let after = op.norm(&c);
        if after > 1e-10 * before {
            let s = 1.0 / after;
            c.iter_mut().for_each(|x| *x *= s);
            basis.push(c);
        }
    }
    basis.len() - start
}

type EigenOutput = (Vec<f64>, Vec<Vec<f64>>, Vec<f64>, usize);

/// Locally optimal block preconditioned conjugate gradient for the `k`
/// smallest eigenpairs, with Rayleigh–Ritz on `[X, W, P]` every step.
fn lobpcg(op: &Operator, x0: Vec<Vec<f64>>, k: usize, tol: f64, max_iter: usize) -> Result<EigenOutput> {
    let m = x0.len();
    let (mut lambda, mut x, mut ax) = rayleigh_ritz(op, &x0, None, m);
    let mut p: Vec<Vec<f64>> = Vec::new();
    let mut best = f64::INFINITY;
    let mut stall = 0usize;
    for it in 0..max_iter {
        let residuals: Vec<Vec<f64>> = (0..m)
            .map(|i| {
                let mut r = ax[i].clone();
                axpy(&mut r, -lambda[i], &x[i]);
                r
            })
            .collect();
        let norms: Vec<f64> = residuals.iter().map(|r| op.norm(r)).collect();
        let worst = norms[..k].iter().cloned().fold(0.0, f64::max);
        if worst < tol {
            return Ok((lambda[..k].to_vec(), x[..k].to_vec(), norms[..k].to_vec(), it));
        }
        if worst < 0.5 * best {
            best = worst;
            stall = 0;
        } else {
            stall += 1;
            if stall > 200 && worst < EIGEN_RESIDUAL_MAX {
                // roundoff floor reached
                return Ok((lambda[..k].to_vec(), x[..k].to_vec(), norms[..k].to_vec(), it));
            }
        }

        let w: Vec<Vec<f64>> = (0..m)
            .filter(|&i| norms[i] >= tol)
            .map(|i| op.precondition(&residuals[i]))
            .collect();
        let mut basis = x.clone();
        orthonormalize_into(op, &mut basis, w);
        orthonormalize_into(op, &mut basis, std::mem::take(&mut p));
        let (l, c, s, as_) = rayleigh_ritz_full(op, &basis, &x, &ax, m);
        lambda = l;
        let new_x = combine(&s, &c, 0..s.len(), m);
        let new_ax = combine(&as_, &c, 0..s.len(), m);
        p = combine(&s, &c, m..s.len(), m);
        x = new_x;
        ax = new_ax;
    }
    let residuals: Vec<f64> = (0..k)
        .map(|i| {
            let mut r = ax[i].clone();
            axpy(&mut r, -lambda[i], &x[i]);
            op.norm(&r)
        })
        .collect();
    let worst = residuals.iter().cloned().fold(0.0, f64::max);
    if worst < EIGEN_RESIDUAL_MAX {
        Ok((lambda[..k].to_vec(), x[..k].to_vec(), residuals, max_iter))
    } else {
        Err(Error::NotConverged { iterations: max_iter, residual: worst })
    }
}

/// Columns `Σ_{j in rows} s_j c[j, i]` for `i < m`.
fn combine(s: &[Vec<f64>], c: &DMatrix<f64>, rows: std::ops::Range<usize>, m: usize) -> Vec<Vec<f64>> {
    let len = s[0].len();
    (0..m)
        .map(|i| {
            let mut out = vec![0.0; len];
            for j in rows.clone() {
                axpy(&mut out, c[(j, i)], &s[j]);
            }
            out
        })
        .collect()
}

fn sorted_eigen(g: DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(g);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(eig.eigenvectors.nrows(), order.len(), |r, c| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

fn gram(op: &Operator, s: &[Vec<f64>], as_: &[Vec<f64>]) -> DMatrix<f64> {
    let d = s.len();
    let mut g = DMatrix::zeros(d, d);
    for i in 0..d {
        for j in 0..=i {
            let v = 0.5 * (op.dot(&s[i], &as_[j]) + op.dot(&s[j], &as_[i]));
            g[(i, j)] = v;
            g[(j, i)] = v;
        }
    }
    g
}

fn rayleigh_ritz(
    op: &Operator,
    s: &[Vec<f64>],
    known: Option<&[Vec<f64>]>,
    m: usize,
) -> (Vec<f64>, Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let as_: Vec<Vec<f64>> = match known {
        Some(a) => a.to_vec(),
        None => s.iter().map(|v| op.apply(v)).collect(),
    };
    let (values, c) = sorted_eigen(gram(op, s, &as_));
    let x = combine(s, &c, 0..s.len(), m);
    let ax = combine(&as_, &c, 0..s.len(), m);
    (values[..m].to_vec(), x, ax)
}

/// Rayleigh–Ritz on an orthonormal basis whose first `m` columns are `x`
/// with known images `ax`.
fn rayleigh_ritz_full(
    op: &Operator,
    basis: &[Vec<f64>],
    x: &[Vec<f64>],
    ax: &[Vec<f64>],
    m: usize,
) -> (Vec<f64>, DMatrix<f64>, Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let mut as_: Vec<Vec<f64>> = ax.to_vec();
    as_.extend(basis[x.len()..].iter().map(|v| op.apply(v)));
    let (values, c) = sorted_eigen(gram(op, basis, &as_));
    (values[..m].to_vec(), c, basis.to_vec(), as_)
}

/// Kernel count of `L1` beyond the `N` translation modes.
#[derive(Clone, Debug, Serialize)]
pub struct NondegeneracyReport {
    pub kernel_dim_beyond_translations: i64,
    pub kernel_dim: usize,
    pub kernel_tol: f64,
    /// Smallest eigenvalue magnitude outside the kernel tolerance.
    pub gap: f64,
    pub verdict: String,
    pub spectrum: SpectrumReport,
}

pub fn nondegeneracy_report(u_star: &Field, params: &Params, kernel_tol: Option<f64>) -> Result<NondegeneracyReport> {
    let dim = params.dim;
    let k = (dim + 3).min(MAX_EIGENPAIRS);
    let opts = EigenOptions { kernel_tol, ..EigenOptions::default() };
    let spectrum = smallest_eigenpairs_with(u_star, params, Linearization::L1, k, opts)?;
    let gap = spectrum.smallest_nonkernel().ok_or_else(|| {
        Error::Numerical(format!(
            "all {k} computed eigenvalues lie inside kernel_tol {:.3e}; tolerance coarser than the eigenvalue gap",
            spectrum.kernel_tol
        ))
    })?;
    let largest_kernel = spectrum.kernel_indices().iter().map(|&i| spectrum.eigenvalues[i].abs()).fold(0.0, f64::max);
    if spectrum.kernel_tol >= gap || largest_kernel * 10.0 > gap {
        return Err(Error::Numerical(format!(
            "kernel_tol {:.3e} is not separated from the eigenvalue gap {gap:.3e}",
            spectrum.kernel_tol
        )));
    }
    let kernel_dim = spectrum.kernel_dim_est;
    let extra = kernel_dim as i64 - dim as i64;
    let verdict = match extra {
        0 => "nondegenerate at tolerance".to_string(),
        e if e > 0 => format!("degenerate: {e} kernel direction(s) beyond translations"),
        e => format!("kernel smaller than expected by {}: translations not resolved", -e),
    };
    Ok(NondegeneracyReport { kernel_dim_beyond_translations: extra, kernel_dim, kernel_tol: spectrum.kernel_tol, gap, verdict, spectrum })
}

/// Outcome of solving `L1 v = u*` on the complement of the kernel.
#[derive(Clone, Debug, Serialize)]
pub struct StabilityCondition {
    /// `∫ v u*`; negative values satisfy the sign condition.
    pub integral: f64,
    /// `‖P(L1 v - u*)‖₂ / ‖u*‖₂` with `P` the kernel-complement projector.
    pub solve_residual: f64,
    pub kernel_dim: usize,
    /// Largest `|⟨q, u*⟩| / ‖u*‖₂` over unit kernel vectors `q`.
    pub kernel_component: f64,
    pub iterations: usize,
    pub kernel_tol: f64,
}

/// Largest kernel component of the right-hand side that is still accepted.
pub const KERNEL_COMPONENT_MAX: f64 = 1e-6;
/// Required deflated solve residual.
pub const SOLVE_RESIDUAL_MAX: f64 = 1e-8;

pub fn stability_condition(u_star: &Field, params: &Params) -> Result<StabilityCondition> {
    if u_star.is_zero() {
        return Err(Error::InvalidInput("zero right-hand side: u_star vanishes".into()));
    }
    let k = (params.dim + 2).min(MAX_EIGENPAIRS);
    let spectrum = smallest_eigenpairs(u_star, params, Linearization::L1, k)?;
    let op = Operator::new(u_star, params, Linearization::L1)?;
    let kernel: Vec<Vec<f64>> =
        spectrum.kernel_indices().into_iter().map(|i| spectrum.eigenvectors[i].values().to_vec()).collect();

    let u = u_star.values();
    let unorm = op.norm(u);
    let kernel_component = kernel.iter().map(|q| op.dot(q, u).abs() / unorm).fold(0.0, f64::max);
    if kernel_component > KERNEL_COMPONENT_MAX {
        return Err(Error::Numerical(format!(
            "right-hand side has kernel component {kernel_component:.3e} > {KERNEL_COMPONENT_MAX:e}"
        )));
    }
    let project = |v: &[f64]| -> Vec<f64> {
        let mut out = v.to_vec();
        for _ in 0..2 {
            for q in &kernel {
                let c = op.dot(q, &out);
                axpy(&mut out, -c, q);
            }
        }
        out
    };
    let b = project(u);
    let apply = |v: &[f64]| project(&op.apply(&project(v)));
    let precond = |r: &[f64]| project(&op.precondition(&project(r)));

    let mut v = vec![0.0; u.len()];
    let mut iterations = 0;
    let mut residual = f64::INFINITY;
    for _ in 0..4 {
        let mut r = b.clone();
        axpy(&mut r, -1.0, &apply(&v));
        residual = op.norm(&r) / unorm;
        if residual < 1e-3 * SOLVE_RESIDUAL_MAX {
            break;
        }
        let (dv, its) = minres(&op, &apply, &precond, &r, 1e-12, 5000);
        iterations += its;
        axpy(&mut v, 1.0, &dv);
    }
    let mut r = b.clone();
    axpy(&mut r, -1.0, &apply(&v));
    residual = residual.min(op.norm(&r) / unorm);
    if !(residual < SOLVE_RESIDUAL_MAX) {
        return Err(Error::NotConverged { iterations, residual });
    }
    let v = project(&v);
    Ok(StabilityCondition {
        integral: op.dot(&v, u),
        solve_residual: residual,
        kernel_dim: kernel.len(),
        kernel_component,
        iterations,
        kernel_tol: spectrum.kernel_tol,
    })
}

/// Preconditioned MINRES for symmetric `A` with symmetric positive
/// definite preconditioner `M`; returns the iterate and iteration count.
fn minres(
    op: &Operator,
    a: &dyn Fn(&[f64]) -> Vec<f64>,
    m: &dyn Fn(&[f64]) -> Vec<f64>,
    b: &[f64],
    rtol: f64,
    max_iter: usize,
) -> (Vec<f64>, usize) {
    let len = b.len();
    let mut x = vec![0.0; len];
    let mut r1 = b.to_vec();
    let mut y = m(&r1);
    let beta1 = op.dot(&r1, &y);
    if !(beta1 > 0.0) {
        return (x, 0);
    }
    let beta1 = beta1.sqrt();
    let (mut oldb, mut beta, mut dbar, mut epsln, mut phibar) = (0.0, beta1, 0.0, 0.0, beta1);
    let (mut cs, mut sn) = (-1.0, 0.0);
    let mut w = vec![0.0; len];
    let mut w2 = vec![0.0; len];
    let mut r2 = r1.clone();
    for itn in 1..=max_iter {
        let s = 1.0 / beta;
        let v: Vec<f64> = y.iter().map(|t| s * t).collect();
        y = a(&v);
        if itn >= 2 {
            axpy(&mut y, -beta / oldb, &r1);
        }
        let alfa = op.dot(&v, &y);
        axpy(&mut y, -alfa / beta, &r2);
        r1 = std::mem::replace(&mut r2, y);
        y = m(&r2);
        oldb = beta;
        let b2 = op.dot(&r2, &y);
        beta = if b2 > 0.0 { b2.sqrt() } else { 0.0 };
        let oldeps = epsln;
        let delta = cs * dbar + sn * alfa;
        let gbar = sn * dbar - cs * alfa;
        epsln = sn * beta;
        dbar = -cs * beta;
        let gamma = (gbar * gbar + beta * beta).sqrt().max(f64::EPSILON);
        cs = gbar / gamma;
        sn = beta / gamma;
        let phi = cs * phibar;
        phibar *= sn;
        let w1 = std::mem::replace(&mut w2, w);
        w = (0..len).map(|i| (v[i] - oldeps * w1[i] - delta * w2[i]) / gamma).collect();
        axpy(&mut x, phi, &w);
        if phibar < rtol * beta1 || beta == 0.0 {
            return (x, itn);
        }
    }
    (x, max_iter)
}

/// Dense cross-check of [`stability_condition`]: full eigendecomposition of
/// the `L1` matrix and a pseudo-inverse that skips eigenvalues below
/// `kernel_tol`. Limited to small grids.
#[derive(Clone, Debug, Serialize)]
pub struct DenseCondition {
    pub integral: f64,
    pub kernel_dim: usize,
    pub smallest_eigenvalues: Vec<f64>,
}

pub const DENSE_MAX_POINTS: usize = 2048;

pub fn dense_stability_condition(u_star: &Field, params: &Params, kernel_tol: f64) -> Result<DenseCondition> {
    let op = Operator::new(u_star, params, Linearization::L1)?;
    let len = op.len();
    if len > DENSE_MAX_POINTS {
        return Err(Error::InvalidInput(format!("dense oracle limited to {DENSE_MAX_POINTS} points, grid has {len}")));
    }
    if u_star.is_zero() {
        return Err(Error::InvalidInput("zero right-hand side: u_star vanishes".into()));
    }
    let mut mat = DMatrix::zeros(len, len);
    let mut e = vec![0.0; len];
    for j in 0..len {
        e[j] = 1.0;
        let col = op.apply(&e);
        e[j] = 0.0;
        for (i, v) in col.into_iter().enumerate() {
            mat[(i, j)] = v;
        }
    }
    let mat = 0.5 * (&mat + mat.transpose());
    let (values, vectors) = sorted_eigen(mat);
    let u = nalgebra::DVector::from_column_slice(u_star.values());
    let mut v = nalgebra::DVector::zeros(len);
    let mut kernel_dim = 0;
    for (i, &l) in values.iter().enumerate() {
        if l.abs() < kernel_tol {
            kernel_dim += 1;
            continue;
        }
        let q = vectors.column(i);
        v += q * (q.dot(&u) / l);
    }
    Ok(DenseCondition {
        integral: op.grid.cell_volume() * v.dot(&u),
        kernel_dim,
        smallest_eigenvalues: values.iter().take(4).cloned().collect(),
    })
}
