//! Time evolution of `i ψ_t - γΔ²ψ + βΔψ + |ψ|^{2σ}ψ = 0` and orbital
//! stability experiments.

use std::sync::Arc;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::functionals::evaluate;
use crate::spectral::{h2_weight, ComplexField, Field, Grid, Params, Sampled};

/// `|ψ|^{2σ}` from `|ψ|²`, with `|ψ|² < 1e-300` mapped to zero.
fn modulus_power(m2: f64, sigma: f64) -> f64 {
    if m2 < 1e-300 {
        0.0
    } else {
        (sigma * m2.ln()).exp()
    }
}

/// Strang split-step integrator. Both sub-flows are solved exactly, so
/// the step is unitary and time-reversible.
#[derive(Clone, Debug)]
pub struct Propagator {
    grid: Arc<Grid>,
    params: Params,
    state: Vec<Complex64>,
    dispersion: Vec<f64>,
    time: f64,
}

impl Propagator {
    /// `params.alpha` is ignored.
    pub fn new(psi0: &ComplexField, params: &Params) -> Result<Self> {
        params.validate()?;
        psi0.check_finite()?;
        let grid = Arc::clone(psi0.grid());
        if grid.dim() != params.dim {
            return Err(Error::InvalidInput("params dimension differs from grid dimension".into()));
        }
        let dispersion = grid.k2().iter().map(|&k2| params.dispersion(k2)).collect();
        Ok(Propagator { grid, params: *params, state: psi0.values().to_vec(), dispersion, time: 0.0 })
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn state(&self) -> ComplexField {
        ComplexField::new(Arc::clone(&self.grid), self.state.clone()).expect("state length matches grid")
    }

    fn linear(&mut self, tau: f64) {
        self.grid.forward(&mut self.state);
        for (c, &d) in self.state.iter_mut().zip(&self.dispersion) {
            *c *= Complex64::from_polar(1.0, -d * tau);
        }
        self.grid.inverse(&mut self.state);
    }

    fn nonlinear(&mut self, tau: f64) {
        let sigma = self.params.sigma;
        for c in self.state.iter_mut() {
            *c *= Complex64::from_polar(1.0, modulus_power(c.norm_sqr(), sigma) * tau);
        }
    }

    /// One step of size `dt` (negative steps run backward). On a non-finite
    /// result the previous state is restored and an error returned.
    pub fn step(&mut self, dt: f64) -> Result<()> {
        let saved = self.state.clone();
        self.linear(0.5 * dt);
        self.nonlinear(dt);
        self.linear(0.5 * dt);
        if let Some(i) = self.state.iter().position(|c| !(c.re.is_finite() && c.im.is_finite())) {
            self.state = saved;
            return Err(Error::NonFinite(i));
        }
        self.time += dt;
        Ok(())
    }
}

/// Recorded history of a run.
#[derive(Clone, Debug, Serialize)]
pub struct StabilityTrace {
    pub times: Vec<f64>,
    pub mass: Vec<f64>,
    pub energy: Vec<f64>,
    /// Distance to the reference orbit; empty when no reference was given.
    pub orbital_distance: Vec<f64>,
    pub params: Params,
    pub perturbation: String,
    pub flags: Vec<String>,
}

impl StabilityTrace {
    pub fn relative_mass_drift(&self) -> f64 {
        relative_drift(&self.mass)
    }

    pub fn relative_energy_drift(&self) -> f64 {
        relative_drift(&self.energy)
    }

    pub fn sup_distance(&self) -> Option<f64> {
        self.orbital_distance.iter().cloned().reduce(f64::max)
    }
}

fn relative_drift(series: &[f64]) -> f64 {
    match series.first() {
        Some(&first) => {
            let scale = first.abs().max(f64::MIN_POSITIVE);
            series.iter().map(|v| (v - first).abs()).fold(0.0, f64::max) / scale
        }
        None => 0.0,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum RunStatus {
    Completed,
    /// Non-finite values appeared; the final state is the last good one.
    Aborted,
}

#[derive(Clone, Debug)]
pub struct Evolution {
    pub trace: StabilityTrace,
    pub state: ComplexField,
    pub status: RunStatus,
}

pub const BLOW_UP_FLAG: &str = "blow-up possible";

/// Integrate from `psi0` for `t_end` with Strang steps of (about) `dt`,
/// recording every `record_every` steps. The step is shrunk so that an
/// integer number of steps lands on `t_end`.
pub fn split_step_evolve(
    psi0: &ComplexField,
    params: &Params,
    dt: f64,
    t_end: f64,
    record_every: usize,
    reference: Option<&Field>,
) -> Result<Evolution> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::InvalidInput(format!("dt must be positive, got {dt}")));
    }
    if !(t_end > 0.0) || !t_end.is_finite() {
        return Err(Error::InvalidInput(format!("t_end must be positive, got {t_end}")));
    }
    if record_every == 0 {
        return Err(Error::InvalidInput("record_every must be at least 1".into()));
    }
    if let Some(u) = reference {
        psi0.same_grid(u)?;
    }
    let steps = (t_end / dt - 1e-9).ceil().max(1.0) as usize;
    let h = t_end / steps as f64;
    let mut prop = Propagator::new(psi0, params)?;
    let mut flags = Vec::new();
    if params.sigma_n() >= 4.0 {
        log::warn!("sigma N = {} >= 4: {BLOW_UP_FLAG}", params.sigma_n());
        flags.push(BLOW_UP_FLAG.to_string());
    }
    let mut trace = StabilityTrace {
        times: Vec::new(),
        mass: Vec::new(),
        energy: Vec::new(),
        orbital_distance: Vec::new(),
        params: *params,
        perturbation: "none".into(),
        flags,
    };
    let record = |prop: &Propagator, trace: &mut StabilityTrace| -> Result<()> {
        let state = prop.state();
        let f = evaluate(&state, params, None)?;
        trace.times.push(prop.time());
        trace.mass.push(f.mass);
        trace.energy.push(f.energy);
        if let Some(u) = reference {
            trace.orbital_distance.push(orbital_distance(&state, u)?);
        }
        Ok(())
    };
    record(&prop, &mut trace)?;
    let mut status = RunStatus::Completed;
    for s in 1..=steps {
        if let Err(e) = prop.step(h) {
            log::warn!("aborting at t = {}: {e}", prop.time());
            trace.flags.push(format!("aborted at t = {:.6e}: non-finite state", prop.time()));
            status = RunStatus::Aborted;
            break;
        }
        if s % record_every == 0 || s == steps {
            record(&prop, &mut trace)?;
        }
    }
    if status == RunStatus::Aborted && trace.times.last() != Some(&prop.time()) {
        record(&prop, &mut trace)?;
    }
    Ok(Evolution { trace, state: prop.state(), status })
}

/// Minimizer of `‖ψ - e^{iθ} U(· - r)‖_{H²}` over phase and translation.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct OrbitalFit {
    pub distance: f64,
    pub phase: f64,
    pub shift: [f64; 3],
}

pub fn orbital_distance<F: Sampled>(psi: &F, u: &Field) -> Result<f64> {
    Ok(orbital_fit(psi, u)?.distance)
}

/// Weighted cross-spectrum `w(k) conj(Û) ψ̂`; `c(r) = Σ X_k e^{ik·r}` is
/// the H² pairing of `ψ` with `U(· - r)` up to the Parseval weight.
struct Correlation<'a> {
    grid: &'a Grid,
    x: Vec<Complex64>,
    kvec: Vec<[f64; 3]>,
}

impl Correlation<'_> {
    /// `c`, `∇c`, and the Hessian of `c` at `r`.
    fn eval(&self, r: &[f64; 3], derivs: bool) -> (Complex64, [Complex64; 3], [[Complex64; 3]; 3]) {
        let dim = self.grid.dim();
        let mut c = Complex64::new(0.0, 0.0);
        let mut g = [Complex64::new(0.0, 0.0); 3];
        let mut h = [[Complex64::new(0.0, 0.0); 3]; 3];
        for (x, k) in self.x.iter().zip(&self.kvec) {
            let phase: f64 = (0..dim).map(|a| k[a] * r[a]).sum();
            let t = x * Complex64::from_polar(1.0, phase);
            c += t;
            if derivs {
                for a in 0..dim {
                    g[a] += Complex64::new(0.0, k[a]) * t;
                    for b in 0..dim {
                        h[a][b] -= k[a] * k[b] * t;
                    }
                }
            }
        }
        (c, g, h)
    }

    fn objective(&self, r: &[f64; 3]) -> f64 {
        self.eval(r, false).0.norm_sqr()
    }
}

pub fn orbital_fit<F: Sampled>(psi: &F, u: &Field) -> Result<OrbitalFit> {
    u.same_grid(psi)?;
    psi.check_finite()?;
    u.check_finite()?;
    let grid = Arc::clone(u.grid());
    let dim = grid.dim();
    let n = grid.n();
    let h = grid.spacing();
    let ps = psi.spectrum();
    let us = u.spectrum();
    let x: Vec<Complex64> = ps.iter().zip(&us).zip(grid.k2()).map(|((p, q), &k2)| h2_weight(k2) * q.conj() * p).collect();
    let kvec = (0..grid.len()).map(|i| grid.wavevector(i)).collect();
    let corr = Correlation { grid: &grid, x, kvec };

    // grid shifts r_j = j h: c(r_j) = n^N ifft(X)_j
    let mut coarse = corr.x.clone();
    grid.inverse(&mut coarse);
    let shift_of = |idx: usize| -> [f64; 3] {
        let m = grid.unravel(idx);
        let mut r = [0.0; 3];
        for a in 0..dim {
            let j = if m[a] < n / 2 { m[a] as f64 } else { m[a] as f64 - n as f64 };
            r[a] = j * h;
        }
        r
    };
    let norm2 = |r: &[f64; 3]| r.iter().map(|v| v * v).sum::<f64>();
    let mut best = 0usize;
    let mut best_val = coarse[0].norm();
    for (idx, c) in coarse.iter().enumerate().skip(1) {
        let v = c.norm();
        let tie = (v - best_val).abs() <= 1e-14 * best_val;
        if (v > best_val && !tie) || (tie && norm2(&shift_of(idx)) < norm2(&shift_of(best))) {
            best = idx;
            best_val = v;
        }
    }
    let mut r = shift_of(best);

    if best_val > 0.0 {
        // golden-section refinement over one cell per axis
        let phi = 0.5 * (5f64.sqrt() - 1.0);
        for a in 0..dim {
            let f = |t: f64| {
                let mut q = r;
                q[a] = t;
                -corr.objective(&q)
            };
            let (mut lo, mut hi) = (r[a] - h, r[a] + h);
            let mut x1 = hi - phi * (hi - lo);
            let mut x2 = lo + phi * (hi - lo);
            let (mut f1, mut f2) = (f(x1), f(x2));
            while hi - lo > 1e-4 * h {
                if f1 < f2 {
                    hi = x2;
                    x2 = x1;
                    f2 = f1;
                    x1 = hi - phi * (hi - lo);
                    f1 = f(x1);
                } else {
                    lo = x1;
                    x1 = x2;
                    f1 = f2;
                    x2 = lo + phi * (hi - lo);
                    f2 = f(x2);
                }
            }
            r[a] = 0.5 * (lo + hi);
        }
        r = newton_polish(&corr, r, dim, h);
    }

    let (c, _, _) = corr.eval(&r, false);
    let rot = if c.norm() > 0.0 { c / c.norm() } else { Complex64::new(1.0, 0.0) };
    let mut acc = 0.0;
    for (i, (p, q)) in ps.iter().zip(&us).enumerate() {
        let k = grid.wavevector(i);
        let phase: f64 = (0..dim).map(|a| k[a] * r[a]).sum();
        let d = p - rot * q * Complex64::from_polar(1.0, -phase);
        acc += h2_weight(grid.k2()[i]) * d.norm_sqr();
    }
    // map the shift into the fundamental box
    let len = grid.length();
    for v in r.iter_mut().take(dim) {
        *v -= len * (*v / len).round();
    }
    Ok(OrbitalFit { distance: (grid.parseval_weight() * acc).sqrt(), phase: rot.arg(), shift: r })
}

/// Newton iterations on `|c(r)|²`, accepted only while they increase it.
fn newton_polish(corr: &Correlation<'_>, mut r: [f64; 3], dim: usize, h: f64) -> [f64; 3] {
    let mut f_cur = corr.objective(&r);
    for _ in 0..20 {
        let (c, g, hc) = corr.eval(&r, true);
        let mut grad = nalgebra::DVector::zeros(dim);
        let mut hess = nalgebra::DMatrix::zeros(dim, dim);
        for a in 0..dim {
            grad[a] = 2.0 * (c.conj() * g[a]).re;
            for b in 0..dim {
                hess[(a, b)] = 2.0 * (g[a].conj() * g[b] + c.conj() * hc[a][b]).re;
            }
        }
        let Some(step) = hess.clone().lu().solve(&(-&grad)) else { break };
        if step.iter().any(|s| !s.is_finite() || s.abs() > h) {
            break;
        }
        let mut trial = r;
        for a in 0..dim {
            trial[a] += step[a];
        }
        let f_trial = corr.objective(&trial);
        if f_trial < f_cur {
            break;
        }
        r = trial;
        let done = step.amax() < 1e-15 * h.max(1.0);
        f_cur = f_trial;
        if done {
            break;
        }
    }
    r
}

/// Initial-data perturbations of a standing wave.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum Perturbation {
    /// `(1 + ε) U`.
    Scale(f64),
    /// `U + ε ‖U‖_{H²} η` with a smooth seeded random `η`, `‖η‖_{H²} = 1`.
    Noise { epsilon: f64, seed: u64 },
    /// `U (1 + ε cos κx₁) e^{iε sin κx₁}` with `κ` the grid wavenumber closest to 1.
    Modulated(f64),
}

impl Perturbation {
    pub fn epsilon(&self) -> f64 {
        match *self {
            Perturbation::Scale(e) | Perturbation::Modulated(e) => e,
            Perturbation::Noise { epsilon, .. } => epsilon,
        }
    }

    pub fn describe(&self) -> String {
        match *self {
            Perturbation::Scale(e) => format!("scale epsilon={e:e}"),
            Perturbation::Noise { epsilon, seed } => format!("noise epsilon={epsilon:e} seed={seed}"),
            Perturbation::Modulated(e) => format!("modulated epsilon={e:e}"),
        }
    }

    pub fn apply(&self, u: &Field) -> Result<ComplexField> {
        let eps = self.epsilon();
        if !(eps >= 0.0) || !eps.is_finite() {
            return Err(Error::InvalidInput(format!("epsilon must be non-negative, got {eps}")));
        }
        let grid = Arc::clone(u.grid());
        match *self {
            Perturbation::Scale(e) => Ok(u.scaled(1.0 + e).to_complex()),
            Perturbation::Modulated(e) => {
                let kappa = 2.0 * std::f64::consts::PI * (grid.length() / (2.0 * std::f64::consts::PI)).round().max(1.0) / grid.length();
                let vals = u
                    .values()
                    .iter()
                    .enumerate()
                    .map(|(i, &v)| {
                        let x = grid.point(i)[0];
                        v * (1.0 + e * (kappa * x).cos()) * Complex64::from_polar(1.0, e * (kappa * x).sin())
                    })
                    .collect();
                ComplexField::new(grid, vals)
            }
            Perturbation::Noise { epsilon, seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut spec: Vec<Complex64> =
                    (0..grid.len()).map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
                // decay like |k|^-6 so the field is smooth
                for (c, &k2) in spec.iter_mut().zip(grid.k2()) {
                    *c /= h2_weight(k2) * (1.0 + k2);
                }
                let eta = ComplexField::from_spectrum(Arc::clone(&grid), spec);
                let eta_h2 = crate::spectral::sobolev_products(&eta)?.h2.sqrt();
                let u_h2 = crate::spectral::sobolev_products(u)?.h2.sqrt();
                let s = epsilon * u_h2 / eta_h2;
                let vals = u.values().iter().zip(eta.values()).map(|(&a, &b)| a + s * b).collect();
                ComplexField::new(grid, vals)
            }
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ExperimentOptions {
    pub t_end: f64,
    pub dt: f64,
    pub record_every: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct ExperimentResult {
    pub trace: StabilityTrace,
    pub sup_distance: f64,
    pub initial_distance: f64,
    /// `sup_distance / ε`; absent for `ε = 0`.
    pub fitted_constant: Option<f64>,
    pub verdict: String,
    pub status: RunStatus,
}

/// Perturb `u` and track its distance to the orbit of `u`.
pub fn stability_experiment(
    u: &Field,
    params: &Params,
    perturbation: Perturbation,
    opts: ExperimentOptions,
) -> Result<ExperimentResult> {
    let psi0 = perturbation.apply(u)?;
    let run = split_step_evolve(&psi0, params, opts.dt, opts.t_end, opts.record_every, Some(u))?;
    let mut trace = run.trace;
    trace.perturbation = perturbation.describe();
    let sup_distance = trace.sup_distance().unwrap_or(0.0);
    let initial_distance = trace.orbital_distance.first().cloned().unwrap_or(0.0);
    let eps = perturbation.epsilon();
    let fitted_constant = (eps > 0.0).then(|| sup_distance / eps);
    let verdict = match (run.status, fitted_constant) {
        (RunStatus::Aborted, _) => "aborted: non-finite state".to_string(),
        (_, Some(c)) => format!("bounded by C*epsilon with C = {c:.4}"),
        (_, None) => format!("unperturbed drift {sup_distance:.3e}"),
    };
    Ok(ExperimentResult { trace, sup_distance, initial_distance, fitted_constant, verdict, status: run.status })
}
