//! Studies built on the solvers: decay rates, sign structure, critical
//! mass, the vanishing-γ limit and one-dimensional shooting.

use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::functionals::evaluate;
use crate::solvers::{
    align_peak, nls_soliton, normalized_gradient_flow, petviashvili_solve, FlowOptions, PetviashviliOptions,
    SolveStatus,
};
use crate::spectral::{interpolate_onto, make_grid, sobolev_products, Field, Grid, Outside, Params, Sampled};

/// Which branch of the decay-rate formula applies.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    BetaGt,
    BetaEq,
    BetaLt,
}

/// Relative width of the `β = 2√α` seam.
const SEAM_TOL: f64 = 1e-12;

/// Exponential decay rate of solutions of `Δ²u - βΔu + αu = |u|^{2σ}u`.
pub fn theoretical_rate(alpha: f64, beta: f64) -> Result<(f64, Regime)> {
    if !(alpha > 0.0) || !beta.is_finite() {
        return Err(Error::InvalidInput(format!("need alpha > 0, got alpha = {alpha}, beta = {beta}")));
    }
    let edge = 2.0 * alpha.sqrt();
    if !(beta > -edge) {
        return Err(Error::InvalidInput(format!("beta = {beta} outside the admissible wedge beta > -2 sqrt(alpha)")));
    }
    if (beta - edge).abs() <= SEAM_TOL * edge {
        Ok((beta.sqrt(), Regime::BetaEq))
    } else if beta > edge {
        let inner = beta - (beta * beta - 4.0 * alpha).sqrt();
        Ok(((inner / 2.0).sqrt(), Regime::BetaGt))
    } else {
        Ok(((edge - beta).sqrt() / 2.0, Regime::BetaLt))
    }
}

/// Rate predicted for general `γ > 0`: the `γ = 1` rate at `β/√γ`,
/// divided by `γ^{1/4}`.
pub fn theoretical_rate_for(params: &Params) -> Result<(f64, Regime)> {
    if !(params.gamma > 0.0) {
        return Err(Error::InvalidInput("decay rates need gamma > 0".into()));
    }
    let s = params.gamma.powf(0.25);
    let (rate, regime) = theoretical_rate(params.alpha, params.beta / params.gamma.sqrt())?;
    Ok((rate / s, regime))
}

/// Least-squares exponential fit of a profile tail.
#[derive(Clone, Debug, Serialize)]
pub struct DecayFit {
    /// Per unit length, in the units of the field's grid.
    pub fitted_rate: f64,
    pub window: (f64, f64),
    pub r_squared: f64,
    pub samples: usize,
    /// Fit ran on the local maxima of `|u|` (sign-changing tail).
    pub envelope: bool,
    pub theoretical_rate: Option<f64>,
    pub regime: Option<Regime>,
    pub flags: Vec<String>,
}

pub const NON_EXPONENTIAL: &str = "non-exponential";
/// Samples below this fraction of the peak are excluded from the fit.
pub const FIT_FLOOR: f64 = 1e-12;
/// A field counts as decayed when its edge value is below this fraction of the peak.
pub const EDGE_LIMIT: f64 = 1e-8;

/// Samples of `u` along axis 0 starting at its peak: `(r, u)`, `r = j h`
/// for `j = 0..=n/2`.
fn radial_line(u: &Field) -> Vec<(f64, f64)> {
    let grid = u.grid();
    let (imax, _) = u
        .values()
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v.abs() > best.1 { (i, v.abs()) } else { best });
    let m = grid.unravel(imax);
    let n = grid.n();
    (0..=n / 2)
        .map(|j| {
            let mut q = m;
            q[0] = (m[0] + j) % n;
            (j as f64 * grid.spacing(), u.values()[grid.ravel(&q)])
        })
        .collect()
}

fn linear_fit(points: &[(f64, f64)]) -> (f64, f64, f64) {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = points.iter().map(|p| (p.1 - my).powi(2)).sum();
    let slope = sxy / sxx;
    let r2 = if syy > 0.0 { (sxy * sxy / (sxx * syy)).clamp(0.0, 1.0) } else { 1.0 };
    (slope, my - slope * mx, r2)
}

/// Fit `log|u| ≈ c - rate r` over the outer `window_fraction` of the
/// resolved tail along the line through the peak. Sign-changing tails use
/// the local maxima of `|u|`. With `params` the prediction is attached.
pub fn fit_decay_rate(u: &Field, params: Option<&Params>, window_fraction: f64) -> Result<DecayFit> {
    if !(window_fraction > 0.0 && window_fraction <= 1.0) {
        return Err(Error::InvalidInput(format!("window_fraction must be in (0, 1], got {window_fraction}")));
    }
    u.check_finite()?;
    let peak = u.max_abs();
    if peak == 0.0 {
        return Err(Error::InvalidInput("zero field".into()));
    }
    let line = radial_line(u);
    let edge = line.last().map(|p| p.1.abs()).unwrap_or(0.0);
    if edge >= EDGE_LIMIT * peak {
        return Err(Error::InvalidInput(format!(
            "field has not decayed: edge/peak = {:.3e} >= {EDGE_LIMIT:e}",
            edge / peak
        )));
    }
    let floor = FIT_FLOOR * peak;
    let r_edge = line.iter().filter(|p| p.1.abs() >= floor).map(|p| p.0).fold(0.0, f64::max);
    let r_min = (1.0 - window_fraction) * r_edge;
    let inside: Vec<usize> = (0..line.len()).filter(|&j| line[j].0 >= r_min && line[j].0 <= r_edge).collect();
    let sign_changes = inside
        .windows(2)
        .filter(|w| line[w[0]].1.abs() >= floor && line[w[1]].1.abs() >= floor && line[w[0]].1 * line[w[1]].1 < 0.0)
        .count();
    let envelope = sign_changes > 0;
    let points: Vec<(f64, f64)> = inside
        .iter()
        .filter(|&&j| {
            let a = line[j].1.abs();
            if a < floor {
                return false;
            }
            if !envelope {
                return true;
            }
            let prev = if j > 0 { line[j - 1].1.abs() } else { 0.0 };
            let next = if j + 1 < line.len() { line[j + 1].1.abs() } else { 0.0 };
            j > 0 && a >= prev && a >= next
        })
        .map(|&j| (line[j].0, line[j].1.abs().ln()))
        .collect();
    if points.len() < 3 {
        return Err(Error::InvalidInput(format!("fit window [{r_min}, {r_edge}] holds {} usable samples", points.len())));
    }
    let (slope, _, r_squared) = linear_fit(&points);
    let mut flags = Vec::new();
    if r_squared < 0.99 {
        flags.push(NON_EXPONENTIAL.to_string());
    }
    let (theoretical_rate, regime) = match params {
        Some(p) => {
            let (r, g) = theoretical_rate_for(p)?;
            (Some(r), Some(g))
        }
        None => (None, None),
    };
    Ok(DecayFit {
        fitted_rate: -slope,
        window: (points[0].0, points[points.len() - 1].0),
        r_squared,
        samples: points.len(),
        envelope,
        theoretical_rate,
        regime,
        flags,
    })
}

/// Sign structure along the line through the peak.
#[derive(Clone, Debug, Serialize)]
pub struct SignReport {
    pub n_sign_changes_radial: usize,
    /// `min u / max u` after making the peak positive.
    pub min_over_max: f64,
    pub classification: String,
    /// Prediction from `β² ≥ 4γα` (single-signed) or `β² < 4γα` (sign-changing).
    pub expected: String,
    pub consistent: bool,
}

/// Samples below this fraction of the peak do not count toward sign changes.
const SIGN_FLOOR: f64 = 1e-10;

pub fn sign_report(u: &Field, params: &Params) -> Result<SignReport> {
    u.check_finite()?;
    let peak = u.max_abs();
    if peak == 0.0 {
        return Err(Error::InvalidInput("zero field".into()));
    }
    let line = radial_line(u);
    let s = line[0].1.signum();
    let significant: Vec<f64> = line.iter().map(|p| s * p.1).filter(|v| v.abs() >= SIGN_FLOOR * peak).collect();
    let n_sign_changes_radial = significant.windows(2).filter(|w| w[0] * w[1] < 0.0).count();
    let min = u.values().iter().map(|v| s * v).fold(f64::INFINITY, f64::min);
    let min_over_max = min / peak;
    let classification = if n_sign_changes_radial == 0 { "positive" } else { "sign-changing" };
    let single_signed = params.beta >= 0.0 && params.beta * params.beta >= 4.0 * params.gamma * params.alpha;
    let expected = if single_signed { "positive" } else { "sign-changing" };
    Ok(SignReport {
        n_sign_changes_radial,
        min_over_max,
        classification: classification.into(),
        expected: expected.into(),
        consistent: classification == expected,
    })
}

/// Run `f` on every input using up to `threads` scoped workers; results
/// come back in input order.
pub fn parallel_map<I, T, F>(inputs: &[I], threads: usize, f: F) -> Vec<T>
where
    I: Sync,
    T: Send,
    F: Fn(&I) -> T + Sync,
{
    let threads = threads.max(1).min(inputs.len().max(1));
    if threads == 1 {
        return inputs.iter().map(&f).collect();
    }
    let chunk = inputs.len().div_ceil(threads);
    std::thread::scope(|scope| {
        let handles: Vec<_> = inputs
            .chunks(chunk)
            .map(|part| {
                let f = &f;
                scope.spawn(move || part.iter().map(f).collect::<Vec<T>>())
            })
            .collect();
        handles.into_iter().flat_map(|h| h.join().expect("worker panicked")).collect()
    })
}

/// Dilation `a φ(x/ℓ)` of a Gaussian with mass `mu` and the lowest
/// energy over a logarithmic scan of `ℓ`.
pub fn best_dilation_guess(params: &Params, mu: f64, grid: &Arc<Grid>) -> Result<(Field, f64)> {
    let h = grid.spacing();
    let (lo, hi) = ((2.0 * h).ln(), (grid.length() / 10.0).ln());
    let mut best: Option<(Field, f64)> = None;
    for i in 0..=60 {
        let ell = (lo + (hi - lo) * i as f64 / 60.0).exp();
        let phi = Field::from_fn(Arc::clone(grid), |x| {
            let r2: f64 = x.iter().map(|v| v * v).sum();
            (-0.5 * r2 / (ell * ell)).exp()
        });
        let m = phi.dot(&phi)?;
        let u = phi.scaled((mu / m).sqrt());
        let e = evaluate(&u, params, None)?.energy;
        if best.as_ref().map_or(true, |b| e < b.1) {
            best = Some((u, e));
        }
    }
    best.ok_or_else(|| Error::Numerical("empty dilation scan".into()))
}

/// One probe of the existence indicator.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct MassProbe {
    pub mu: f64,
    pub energy: f64,
    /// Fraction of the mass farther than `L/4` from the peak along some axis.
    pub outer_fraction: f64,
    pub negative: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct CriticalMass {
    pub mu_c_est: f64,
    pub bracket: (f64, f64),
    pub probes: Vec<MassProbe>,
    pub note: Option<String>,
}

/// Energy below which a mass counts as carrying a negative-energy minimizer.
pub const INDICATOR_LEVEL: f64 = -1e-9;
/// Largest outer mass fraction of a state that counts as localized. On a
/// periodic box spreading states approach the constant mode, whose energy is
/// negative; those must not count.
pub const LOCALIZATION_LIMIT: f64 = 1e-2;

/// Mass fraction at periodic distance greater than `L/4` from the peak on
/// at least one axis.
pub fn outer_mass_fraction(u: &Field) -> f64 {
    let grid = u.grid();
    let n = grid.n();
    let dim = grid.dim();
    let vals = u.values();
    let (imax, _) = vals
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v.abs() > best.1 { (i, v.abs()) } else { best });
    let peak = grid.unravel(imax);
    let (mut outer, mut total) = (0.0, 0.0);
    for (i, v) in vals.iter().enumerate() {
        let m = grid.unravel(i);
        let far = (0..dim).any(|a| {
            let d = (m[a] + n - peak[a]) % n;
            d.min(n - d) > n / 4
        });
        total += v * v;
        if far {
            outer += v * v;
        }
    }
    if total > 0.0 {
        outer / total
    } else {
        0.0
    }
}

#[derive(Clone, Debug)]
pub struct CriticalMassOptions {
    pub dim: usize,
    pub n: usize,
    pub length: f64,
    pub flow: FlowOptions,
    pub max_probes: usize,
}

/// Bisection on `μ ↦ [flow reaches E < -1e-9]`. `bisect_tol` bounds the
/// final bracket width relative to its upper end.
pub fn critical_mass_search(
    params: &Params,
    mu_lo: f64,
    mu_hi: f64,
    bisect_tol: f64,
    opts: &CriticalMassOptions,
) -> Result<CriticalMass> {
    params.validate()?;
    let sn = params.sigma_n();
    if sn < 2.0 - 1e-12 {
        return Ok(CriticalMass {
            mu_c_est: 0.0,
            bracket: (0.0, 0.0),
            probes: Vec::new(),
            note: Some(format!("sigma N = {sn} < 2: minimizers exist for every positive mass")),
        });
    }
    if sn >= 4.0 {
        return Err(Error::InvalidInput(format!("sigma N = {sn} >= 4: no critical mass regime")));
    }
    if !(0.0 < mu_lo && mu_lo < mu_hi) {
        return Err(Error::InvalidInput(format!("need 0 < mu_lo < mu_hi, got [{mu_lo}, {mu_hi}]")));
    }
    if !(bisect_tol > 0.0) {
        return Err(Error::InvalidInput("bisect_tol must be positive".into()));
    }
    let grid = make_grid(opts.dim, opts.n, opts.length)?;
    let flow = FlowOptions { stop_below: Some(INDICATOR_LEVEL), ..opts.flow };
    let probe = |mu: f64| -> Result<MassProbe> {
        let (init, e0) = best_dilation_guess(params, mu, &grid)?;
        let outer0 = outer_mass_fraction(&init);
        if e0 < INDICATOR_LEVEL && outer0 < LOCALIZATION_LIMIT {
            return Ok(MassProbe { mu, energy: e0, outer_fraction: outer0, negative: true });
        }
        let r = normalized_gradient_flow(params, mu, &init, flow)?;
        let energy = r.functionals.energy;
        let outer_fraction = outer_mass_fraction(&r.profile);
        let negative = r.status != SolveStatus::NoNegativeMinimizer
            && energy < INDICATOR_LEVEL
            && outer_fraction < LOCALIZATION_LIMIT;
        Ok(MassProbe { mu, energy, outer_fraction, negative })
    };
    let mut probes = vec![probe(mu_lo)?, probe(mu_hi)?];
    if probes[0].negative {
        return Err(Error::InvalidInput(format!("mu_lo = {mu_lo} already has negative energy")));
    }
    if !probes[1].negative {
        return Err(Error::InvalidInput(format!("mu_hi = {mu_hi} does not reach negative energy")));
    }
    let (mut lo, mut hi) = (mu_lo, mu_hi);
    while hi - lo >= bisect_tol * hi {
        if probes.len() >= opts.max_probes {
            return Err(Error::NotConverged { iterations: probes.len(), residual: (hi - lo) / hi });
        }
        let mid = 0.5 * (lo + hi);
        let p = probe(mid)?;
        probes.push(p);
        if p.negative {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let mut sorted = probes.clone();
    sorted.sort_by(|a, b| a.mu.total_cmp(&b.mu));
    if sorted.windows(2).any(|w| w[0].negative && !w[1].negative) {
        return Err(Error::Numerical("existence indicator is not monotone in mu across the probes".into()));
    }
    Ok(CriticalMass { mu_c_est: 0.5 * (lo + hi), bracket: (lo, hi), probes, note: None })
}

/// One row of the vanishing-γ study.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct GammaLimitRow {
    pub gamma: f64,
    pub alpha: f64,
    pub err_l2: f64,
    pub err_h1: f64,
    pub err_h2: f64,
    /// `γ ∫|Δu_γ|²`.
    pub gamma_lap: f64,
    pub el_residual: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct GammaLimitStudy {
    /// Frequency of the limit profile.
    pub alpha0: f64,
    pub rows: Vec<GammaLimitRow>,
}

#[derive(Clone, Copy, Debug)]
pub struct GammaLimitOptions {
    pub dim: usize,
    pub n: usize,
    pub length: f64,
    pub flow: FlowOptions,
    pub threads: usize,
}

/// Ground state of `-βΔw + α₀w = |w|^{2σ}w` with mass `mu`, and `α₀`.
pub fn limit_profile(beta: f64, mu: f64, sigma: f64, grid: &Arc<Grid>) -> Result<(Field, f64)> {
    let dim = grid.dim();
    let expo = 1.0 / sigma - dim as f64 / 2.0;
    if !(expo > 0.0) {
        return Err(Error::InvalidInput(format!("sigma = {sigma} must be below 2/N")));
    }
    let sb = beta.sqrt();
    if dim == 1 {
        let q1 = nls_soliton(1.0, sigma, grid)?;
        let m1 = q1.dot(&q1)?;
        let alpha0 = (mu / (sb * m1)).powf(1.0 / expo);
        // w(x) = Q_{α₀}(x/√β)
        let w = nls_soliton(alpha0, sigma, &make_grid(1, grid.n(), grid.length() / sb)?)?;
        return Ok((Field::new(Arc::clone(grid), w.into_values())?, alpha0));
    }
    let unit = Params::new(0.0, 1.0, 1.0, sigma, dim)?;
    let init = crate::solvers::default_initial_guess(&unit, 1.0, grid);
    let q1 = petviashvili_solve(&unit, &init, PetviashviliOptions::default())?.profile;
    let m1 = q1.dot(&q1)?;
    let alpha0 = (mu / (sb.powi(dim as i32) * m1)).powf(1.0 / expo);
    let k = alpha0.sqrt() / sb;
    let w = interpolate_onto(&q1, grid, |x| k * x, Outside::Zero)?.scaled(alpha0.powf(0.5 / sigma));
    Ok((w, alpha0))
}

/// Mass-constrained ground states for decreasing `γ` compared with the
/// second-order limit profile.
pub fn gamma_limit_study(beta: f64, mu: f64, sigma: f64, gammas: &[f64], opts: &GammaLimitOptions) -> Result<GammaLimitStudy> {
    let dim = opts.dim;
    if sigma * dim as f64 >= 2.0 {
        return Err(Error::InvalidInput(format!("sigma N = {} must be below 2", sigma * dim as f64)));
    }
    if !(beta > 0.0) || !(mu > 0.0) {
        return Err(Error::InvalidInput("beta and mu must be positive".into()));
    }
    if gammas.iter().any(|g| !(*g >= 0.0)) {
        return Err(Error::InvalidInput("gamma values must be non-negative".into()));
    }
    let grid = make_grid(dim, opts.n, opts.length)?;
    let (w, alpha0) = limit_profile(beta, mu, sigma, &grid)?;
    let rows = parallel_map(gammas, opts.threads, |&gamma| -> Result<GammaLimitRow> {
        let p = Params::new(gamma, beta, alpha0, sigma, dim)?;
        let r = normalized_gradient_flow(&p, mu, &w, opts.flow)?;
        if r.status != SolveStatus::Converged {
            return Err(Error::Numerical(format!("gradient flow at gamma = {gamma} ended with {:?}", r.status)));
        }
        let u = align_peak(&r.profile);
        let diff = u.axpy(-1.0, &w)?;
        let s = sobolev_products(&diff)?;
        Ok(GammaLimitRow {
            gamma,
            alpha: r.alpha,
            err_l2: s.l2.sqrt(),
            err_h1: (s.l2 + s.grad).sqrt(),
            err_h2: s.h2.sqrt(),
            gamma_lap: gamma * r.functionals.lap,
            el_residual: r.el_residual,
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    Ok(GammaLimitStudy { alpha0, rows })
}

/// Point on a shooting trajectory.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct ShootState {
    pub x: f64,
    pub u: f64,
    pub up: f64,
    pub upp: f64,
    pub uppp: f64,
    pub hamiltonian: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ShootOutcome {
    /// Entered the decay ball before diverging.
    Decayed,
    Diverged,
    /// Neither event before `x_max`.
    Undecided,
}

#[derive(Clone, Copy, Debug)]
pub struct ShootOptions {
    /// `|u|` above this counts as divergence.
    pub diverge_threshold: f64,
    /// Euclidean norm of `(u, u', u'', u''')` below this counts as decay.
    pub decay_radius: f64,
    /// Keep integrating after the decay event.
    pub continue_after_decay: bool,
}

impl Default for ShootOptions {
    fn default() -> Self {
        ShootOptions { diverge_threshold: 1e3, decay_radius: 1e-3, continue_after_decay: false }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ShootResult {
    pub trajectory: Vec<ShootState>,
    pub outcome: ShootOutcome,
    /// Where the outcome was decided (or `x_max`).
    pub x_event: f64,
    /// `max |H(x) - H(0)|` up to `x_event`.
    pub h_drift: f64,
    /// `max |H(x) - H(0)|` over the whole integrated trajectory.
    pub h_drift_total: f64,
    pub lambda: (f64, f64),
}

impl ShootResult {
    /// `max |H(x) - H(0)|` over `[0, x]`.
    pub fn drift_until(&self, x: f64) -> f64 {
        let h0 = self.trajectory[0].hamiltonian;
        self.trajectory.iter().take_while(|s| s.x <= x + 1e-12).map(|s| (s.hamiltonian - h0).abs()).fold(0.0, f64::max)
    }
}

/// `γ(u'u''' - u''²/2) - βu'²/2 + αu²/2 - |u|^{2σ+2}/(2σ+2)`, constant along solutions.
pub fn hamiltonian(params: &Params, u: f64, up: f64, upp: f64, uppp: f64) -> f64 {
    let s = params.sigma;
    params.gamma * (up * uppp - 0.5 * upp * upp) - 0.5 * params.beta * up * up + 0.5 * params.alpha * u * u
        - u.abs().powf(2.0 * s + 2.0) / (2.0 * s + 2.0)
}

/// Even-data shooting for `γu'''' - βu'' + αu = |u|^{2σ}u` in the factored
/// form `u'' - λ₁u = w`, `w'' - λ₂w = |u|^{2σ}u/γ` with classical RK4.
pub fn shoot_1d(params: &Params, u0: f64, upp0: f64, x_max: f64, step: f64, opts: ShootOptions) -> Result<ShootResult> {
    params.validate()?;
    if params.dim != 1 {
        return Err(Error::InvalidInput("shooting is one-dimensional".into()));
    }
    if !(params.gamma > 0.0) {
        return Err(Error::InvalidInput("shooting needs gamma > 0".into()));
    }
    if !(step > 0.0 && x_max > 0.0) {
        return Err(Error::InvalidInput("step and x_max must be positive".into()));
    }
    let (b, a) = (params.beta / params.gamma, params.alpha / params.gamma);
    let disc = b * b - 4.0 * a;
    if !(a > 0.0) || b < 0.0 || disc < 0.0 {
        return Err(Error::InvalidInput(format!(
            "beta = {} < 2 sqrt(gamma alpha): the factorization has complex roots",
            params.beta
        )));
    }
    let l1 = 0.5 * (b - disc.sqrt());
    let l2 = 0.5 * (b + disc.sqrt());
    let s = params.sigma;
    let g = params.gamma;
    let rhs = |y: [f64; 4]| -> [f64; 4] {
        let f = y[0].abs().powf(2.0 * s) * y[0] / g;
        [y[1], y[2] + l1 * y[0], y[3], l2 * y[2] + f]
    };
    let state = |x: f64, y: [f64; 4]| -> ShootState {
        let upp = y[2] + l1 * y[0];
        let uppp = y[3] + l1 * y[1];
        ShootState { x, u: y[0], up: y[1], upp, uppp, hamiltonian: hamiltonian(params, y[0], y[1], upp, uppp) }
    };
    let mut y = [u0, 0.0, upp0 - l1 * u0, 0.0];
    let steps = (x_max / step).round() as usize;
    let first = state(0.0, y);
    let h0 = first.hamiltonian;
    let mut trajectory = vec![first];
    let mut outcome = ShootOutcome::Undecided;
    let mut x_event = x_max;
    let mut h_drift = 0.0f64;
    let mut h_drift_total = 0.0f64;
    let norm = |st: &ShootState| (st.u * st.u + st.up * st.up + st.upp * st.upp + st.uppp * st.uppp).sqrt();
    if norm(&first) < opts.decay_radius {
        outcome = ShootOutcome::Decayed;
        x_event = 0.0;
    }
    for i in 1..=steps {
        if outcome == ShootOutcome::Decayed && !opts.continue_after_decay {
            break;
        }
        let k1 = rhs(y);
        let k2 = rhs(std::array::from_fn(|j| y[j] + 0.5 * step * k1[j]));
        let k3 = rhs(std::array::from_fn(|j| y[j] + 0.5 * step * k2[j]));
        let k4 = rhs(std::array::from_fn(|j| y[j] + step * k3[j]));
        for j in 0..4 {
            y[j] += step / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
        }
        let x = i as f64 * step;
        let st = state(x, y);
        if !st.u.is_finite() || !st.hamiltonian.is_finite() {
            if outcome == ShootOutcome::Undecided {
                outcome = ShootOutcome::Diverged;
                x_event = x;
            }
            break;
        }
        let drift = (st.hamiltonian - h0).abs();
        h_drift_total = h_drift_total.max(drift);
        if outcome == ShootOutcome::Undecided {
            h_drift = h_drift.max(drift);
        }
        trajectory.push(st);
        if st.u.abs() > opts.diverge_threshold {
            if outcome == ShootOutcome::Undecided {
                outcome = ShootOutcome::Diverged;
                x_event = x;
            }
            break;
        }
        if outcome == ShootOutcome::Undecided && norm(&st) < opts.decay_radius {
            outcome = ShootOutcome::Decayed;
            x_event = x;
        }
    }
    Ok(ShootResult { trajectory, outcome, x_event, h_drift, h_drift_total, lambda: (l1, l2) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solvers::default_initial_guess;

    fn exact(n: usize, l: f64) -> Field {
        let g = make_grid(1, n, l).unwrap();
        let a = 30f64.sqrt() / 2.0;
        Field::from_fn(g, |x| a / (x[0] / 2.0).cosh().powi(2))
    }

    #[test]
    fn rates_per_regime() {
        let (r, g) = theoretical_rate(4.0, 5.0).unwrap();
        assert!((r - 1.0).abs() < 1e-14 && g == Regime::BetaGt);
        let (r, g) = theoretical_rate(1.0, 0.0).unwrap();
        assert!((r - 0.5f64.sqrt()).abs() < 1e-14 && g == Regime::BetaLt);
        let (r, g) = theoretical_rate(1.0, 2.0).unwrap();
        assert!((r - 2f64.sqrt()).abs() < 1e-14 && g == Regime::BetaEq);
        // the two formulas disagree at the seam
        let (above, _) = theoretical_rate(1.0, 2.0 + 1e-9).unwrap();
        assert!((above - 1.0).abs() < 1e-3);
        assert!(theoretical_rate(1.0, -2.0).is_err());
        assert!(theoretical_rate(0.0, 1.0).is_err());
    }

    #[test]
    fn exact_tail_fit() {
        let u = exact(1024, 80.0);
        let p = Params::new(1.0, 5.0, 4.0, 1.0, 1).unwrap();
        let fit = fit_decay_rate(&u, Some(&p), 0.5).unwrap();
        assert!((fit.fitted_rate - 1.0).abs() < 0.02, "{fit:?}");
        assert!(!fit.envelope && fit.flags.is_empty());
        assert_eq!(fit.regime, Some(Regime::BetaGt));
    }

    #[test]
    fn gaussian_is_not_exponential() {
        let g = make_grid(1, 512, 40.0).unwrap();
        let u = Field::from_fn(g, |x| (-x[0] * x[0] / 4.0).exp());
        let fit = fit_decay_rate(&u, None, 1.0).unwrap();
        assert!(fit.r_squared < 0.99 && fit.flags.iter().any(|f| f == NON_EXPONENTIAL), "{fit:?}");
    }

    #[test]
    fn undecayed_field_rejected() {
        let g = make_grid(1, 128, 10.0).unwrap();
        let u = Field::from_fn(g, |x| 1.0 / (x[0] / 2.0).cosh());
        assert!(fit_decay_rate(&u, None, 0.5).is_err());
    }

    #[test]
    fn sign_structure() {
        let u = exact(512, 80.0);
        let p = Params::new(1.0, 5.0, 4.0, 1.0, 1).unwrap();
        let r = sign_report(&u, &p).unwrap();
        assert_eq!(r.n_sign_changes_radial, 0);
        assert!(r.consistent);
        let g = make_grid(1, 512, 100.0).unwrap();
        let q = Params::new(1.0, 0.0, 1.0, 1.0, 1).unwrap();
        let v = petviashvili_solve(&q, &default_initial_guess(&q, 1.0, &g), PetviashviliOptions::default()).unwrap();
        let r = sign_report(&v.profile, &q).unwrap();
        assert!(r.n_sign_changes_radial >= 1 && r.consistent, "{r:?}");
        let fit = fit_decay_rate(&v.profile, Some(&q), 0.5).unwrap();
        assert!(fit.envelope);
        assert!((fit.fitted_rate / 0.5f64.sqrt() - 1.0).abs() < 0.1, "{fit:?}");
        assert!(sign_report(&Field::zeros(g), &q).is_err());
    }

    #[test]
    fn subcritical_power_has_zero_critical_mass() {
        let p = Params::new(1.0, 1.0, 0.0, 1.0, 1).unwrap();
        let opts = CriticalMassOptions { dim: 1, n: 64, length: 20.0, flow: FlowOptions::default(), max_probes: 10 };
        let r = critical_mass_search(&p, 1.0, 2.0, 0.05, &opts).unwrap();
        assert_eq!(r.mu_c_est, 0.0);
        assert!(r.note.is_some());
    }

    #[test]
    fn limit_profile_is_the_soliton() {
        let g = make_grid(1, 512, 60.0).unwrap();
        let (w, a0) = limit_profile(1.0, 4.0, 1.0, &g).unwrap();
        assert!((a0 - 1.0).abs() < 1e-12);
        let s = nls_soliton(1.0, 1.0, &g).unwrap();
        assert!(crate::solvers::relative_linf(&w, &s) < 1e-14);
        // sech(x/4): needs a wider box
        let g = make_grid(1, 1024, 300.0).unwrap();
        let (w, a0) = limit_profile(4.0, 4.0, 1.0, &g).unwrap();
        assert!((w.dot(&w).unwrap() - 4.0).abs() < 1e-10, "{a0}");
    }

    #[test]
    fn parallel_map_keeps_order() {
        let xs: Vec<u64> = (0..37).collect();
        let ys = parallel_map(&xs, 4, |x| x * x);
        assert_eq!(ys, xs.iter().map(|x| x * x).collect::<Vec<_>>());
    }

    #[test]
    fn shooting_basics() {
        let p = Params::new(1.0, 5.0, 4.0, 1.0, 1).unwrap();
        let a = 30f64.sqrt() / 2.0;
        let r = shoot_1d(&p, a, -a / 2.0, 30.0, 1e-3, ShootOptions::default()).unwrap();
        assert_eq!(r.outcome, ShootOutcome::Decayed);
        assert!(r.h_drift < 1e-8, "{}", r.h_drift);
        assert_eq!((r.lambda.0, r.lambda.1), (1.0, 4.0));
        let z = shoot_1d(&p, 0.0, 0.0, 30.0, 1e-3, ShootOptions { continue_after_decay: true, ..Default::default() }).unwrap();
        assert!(z.trajectory.iter().all(|s| s.hamiltonian == 0.0));
        let d = shoot_1d(&p, a * (1.0 + 1e-3), -a / 2.0, 30.0, 1e-3, ShootOptions::default()).unwrap();
        assert_eq!(d.outcome, ShootOutcome::Diverged);
        assert!(shoot_1d(&Params::new(1.0, 1.0, 1.0, 1.0, 1).unwrap(), 1.0, 0.0, 1.0, 1e-3, ShootOptions::default()).is_err());
    }
}
