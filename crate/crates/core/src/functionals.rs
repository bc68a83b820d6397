//! Functionals, integral identities and Gagliardo–Nirenberg ratios.
//!
//! Notation for the three integrals that everything reduces to:
//! `D = ∫|Δu|²`, `G = ∫|∇u|²`, `P = ∫|u|^{2σ+2}`, and `M = ∫|u|²`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::spectral::{apply_linear, integrate_values, sobolev_products, Field, Params, Sampled, SobolevProducts};

/// Values of the functionals at one field.
#[derive(Clone, Copy, Debug, Serialize, PartialEq)]
pub struct FunctionalRecord {
    /// `E = (γ/2) D + (β/2) G - P/(2σ+2)`
    pub energy: f64,
    pub mass: f64,
    /// `J = γ D + β G + α M`, present when a frequency was supplied.
    pub quadratic: Option<f64>,
    /// `A = J/2 - P/(2σ+2)`, present when a frequency was supplied.
    pub action: Option<f64>,
    pub lp_power: f64,
    pub lap: f64,
    pub grad: f64,
}

impl FunctionalRecord {
    pub fn quadratic(&self) -> Result<f64> {
        self.quadratic
            .ok_or_else(|| Error::InvalidInput("J requires a frequency alpha".into()))
    }

    pub fn action(&self) -> Result<f64> {
        self.action
            .ok_or_else(|| Error::InvalidInput("action requires a frequency alpha".into()))
    }
}

/// `∫|u|^{2σ+2}` for real or complex fields.
pub fn lp_power<F: Sampled>(u: &F, sigma: f64) -> f64 {
    let vals: Vec<f64> = u.modulus_squared().into_iter().map(|a| a.powf(sigma + 1.0)).collect();
    integrate_values(u.grid(), &vals)
}

/// Evaluate the functionals; `alpha` enables `J` and `A`.
pub fn evaluate<F: Sampled>(u: &F, params: &Params, alpha: Option<f64>) -> Result<FunctionalRecord> {
    let s = sobolev_products(u)?;
    Ok(record_from_parts(&s, lp_power(u, params.sigma), params, alpha))
}

pub(crate) fn record_from_parts(s: &SobolevProducts, lp: f64, params: &Params, alpha: Option<f64>) -> FunctionalRecord {
    let p = 2.0 * params.sigma + 2.0;
    let energy = 0.5 * params.gamma * s.lap + 0.5 * params.beta * s.grad - lp / p;
    let quadratic = alpha.map(|a| params.gamma * s.lap + params.beta * s.grad + a * s.l2);
    FunctionalRecord {
        energy,
        mass: s.l2,
        quadratic,
        action: quadratic.map(|j| 0.5 * j - lp / p),
        lp_power: lp,
        lap: s.lap,
        grad: s.grad,
    }
}

/// Signed and relative Pohozaev defect
/// `2γD + βG - σN/(2σ+2) P`.
#[derive(Clone, Copy, Debug, Serialize, PartialEq)]
pub struct PohozaevDefect {
    pub defect: f64,
    pub relative: f64,
}

pub fn pohozaev_residual(u: &Field, params: &Params) -> Result<PohozaevDefect> {
    let s = sobolev_products(u)?;
    let lp = lp_power(u, params.sigma);
    Ok(pohozaev_from_parts(s.lap, s.grad, lp, params))
}

fn pohozaev_from_parts(lap: f64, grad: f64, lp: f64, params: &Params) -> PohozaevDefect {
    let a = 2.0 * params.gamma * lap;
    let b = params.beta * grad;
    let c = params.sigma_n() / (2.0 * params.sigma + 2.0) * lp;
    let defect = a + b - c;
    let scale = a.abs() + b.abs() + c.abs();
    PohozaevDefect {
        defect,
        relative: if scale > 0.0 { defect / scale } else { 0.0 },
    }
}

/// Lagrange multiplier of the mass constraint, by three routes.
#[derive(Clone, Copy, Debug, Serialize, PartialEq)]
pub struct LagrangeMultiplier {
    /// `(P - γD - βG)/μ`, from testing the equation against `u`.
    pub alpha: f64,
    /// `(-2E + σ/(σ+1) P)/μ`; algebraically the same as `alpha`.
    pub alpha_energy: f64,
    /// `(γD + (1 - σN/(2σ+2)) P)/μ`, which also uses the Pohozaev identity
    /// and therefore differs from `alpha` off solutions.
    pub alpha_pohozaev: f64,
    /// Largest pairwise relative difference of the three values.
    pub mismatch: f64,
}

pub fn lagrange_multiplier(u: &Field, params: &Params, mu: f64) -> Result<LagrangeMultiplier> {
    if !(mu > 0.0) {
        return Err(Error::InvalidInput(format!("mass mu must be positive, got {mu}")));
    }
    let rec = evaluate(u, params, None)?;
    let (g, d, p) = (params.gamma, rec.lap, rec.lp_power);
    let s = params.sigma;
    let alpha = (p - g * d - params.beta * rec.grad) / mu;
    let alpha_energy = (-2.0 * rec.energy + s / (s + 1.0) * p) / mu;
    let alpha_pohozaev = (g * d + (1.0 - params.sigma_n() / (2.0 * s + 2.0)) * p) / mu;
    let vals = [alpha, alpha_energy, alpha_pohozaev];
    let scale = vals.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let spread = vals.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v))
        - vals.iter().fold(f64::INFINITY, |m, &v| m.min(v));
    Ok(LagrangeMultiplier {
        alpha,
        alpha_energy,
        alpha_pohozaev,
        mismatch: if scale > 0.0 { spread / scale } else { 0.0 },
    })
}

/// Relative residual of the stationary equation,
/// `‖γΔ²u - βΔu + αu - |u|^{2σ}u‖₂ / ‖u‖_{H²}`.
pub fn el_residual(u: &Field, params: &Params) -> Result<f64> {
    let lin = apply_linear(params, u)?;
    let mut acc = 0.0;
    for (l, &v) in lin.values().iter().zip(u.values()) {
        let r = l - nonlinearity(v, params.sigma);
        acc += r * r;
    }
    let norm = sobolev_products(u)?.h2.sqrt();
    let res = (u.grid().cell_volume() * acc).sqrt();
    Ok(if norm > 0.0 { res / norm } else { res })
}

/// `|v|^{2σ} v`.
pub fn nonlinearity(v: f64, sigma: f64) -> f64 {
    let a = v * v;
    if a < 1e-300 {
        0.0
    } else {
        a.powf(sigma) * v
    }
}

/// The three integrals recovered from `(E, α, μ)`.
#[derive(Clone, Copy, Debug, Serialize, PartialEq)]
pub struct RecoveredIntegrals {
    pub lap: f64,
    pub grad: f64,
    pub lp_power: f64,
}

/// Solve the linear system formed by the equation tested against `u`,
/// the Pohozaev identity and `E(u) = energy` for `(D, G, P)`.
///
/// With `γβσ ≠ 0` the system is regular. When `σN = 2` only the
/// zero-energy level is accepted, where the relations reduce to
/// `P = (σ+1)βG = (σ+1)αμ/σ`.
pub fn recover_integrals(energy: f64, alpha: f64, mu: f64, params: &Params) -> Result<RecoveredIntegrals> {
    let (g, b, s) = (params.gamma, params.beta, params.sigma);
    if g <= 0.0 || b == 0.0 {
        return Err(Error::InvalidInput("recovery needs gamma > 0 and beta != 0".into()));
    }
    let am = alpha * mu;
    if (params.sigma_n() - 2.0).abs() < 1e-12 && energy.abs() > 1e-12 * am.abs().max(1e-300) {
        return Err(Error::InvalidInput(format!(
            "sigma N = 2 branch only defined at zero energy, got E = {energy:e}"
        )));
    }
    let p = (s + 1.0) / s * (2.0 * energy + am);
    let d = (am - p * (2.0 * s + 2.0 - params.sigma_n()) / (2.0 * s + 2.0)) / g;
    let grad = (p - am - g * d) / b;
    Ok(RecoveredIntegrals { lap: d, grad, lp_power: p })
}

/// Which Gagliardo–Nirenberg quotient to evaluate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum GnForm {
    /// `P / (D^{σN/4} M^{1+σ-σN/4})`
    H2,
    /// `P / (G^{σN/2} M^{1+σ(2-N)/2})`
    H1,
    /// `P / (M^σ G^{(4-σN)/2} D^{σN/2-1})`, for `2/N < σ < 4/N`.
    Mixed,
}

/// Scale-invariant Gagliardo–Nirenberg quotient; any admissible field gives
/// a lower bound for the sharp constant.
pub fn gn_ratio(u: &Field, sigma: f64, form: GnForm) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(Error::InvalidInput("sigma must be positive".into()));
    }
    let n = u.grid().dim() as f64;
    let sn = sigma * n;
    match form {
        GnForm::H2 => {}
        GnForm::H1 => {
            if n > 2.0 && sigma > 2.0 / (n - 2.0) {
                return Err(Error::InvalidInput(format!("H1 form needs sigma <= {}", 2.0 / (n - 2.0))));
            }
        }
        GnForm::Mixed => {
            if !(sn > 2.0 && sn < 4.0) {
                return Err(Error::InvalidInput(format!(
                    "mixed form needs 2/N < sigma < 4/N, got sigma N = {sn}"
                )));
            }
        }
    }
    if u.is_zero() {
        return Err(Error::InvalidInput("gn_ratio of the zero field".into()));
    }
    let s = sobolev_products(u)?;
    let p = lp_power(u, sigma);
    let denom = match form {
        GnForm::H2 => s.lap.powf(sn / 4.0) * s.l2.powf(1.0 + sigma - sn / 4.0),
        GnForm::H1 => s.grad.powf(sn / 2.0) * s.l2.powf(1.0 + sigma * (2.0 - n) / 2.0),
        GnForm::Mixed => s.l2.powf(sigma) * s.grad.powf((4.0 - sn) / 2.0) * s.lap.powf(sn / 2.0 - 1.0),
    };
    if !(denom > 0.0) {
        return Err(Error::InvalidInput("degenerate field for gn_ratio".into()));
    }
    Ok(p / denom)
}

/// Critical mass from an estimate `c_est` of the relevant GN constant:
/// the mixed constant `C_{σ,N}` when `2/N < σ < 4/N`, the H¹ constant
/// `C_N(2/N)` when `σ = 2/N`.
pub fn critical_mass_formula(gamma: f64, sigma: f64, dim: usize, c_est: f64) -> Result<f64> {
    if !(c_est > 0.0) {
        return Err(Error::InvalidInput("constant estimate must be positive".into()));
    }
    if !(gamma > 0.0) {
        return Err(Error::InvalidInput("gamma must be positive".into()));
    }
    let n = dim as f64;
    let sn = sigma * n;
    if (sn - 2.0).abs() < 1e-12 {
        return Ok((1.0 / (2.0 * c_est)).powf(n / 2.0));
    }
    if !(sn > 2.0 && sn < 4.0) {
        return Err(Error::InvalidInput(format!(
            "critical mass needs 2/N <= sigma < 4/N, got sigma N = {sn}"
        )));
    }
    let v = gamma
        * (1.0 / (sn - 2.0) - 0.5)
        * c_est.powf(2.0 / (4.0 - sn))
        * (gamma * (2.0 * sigma + 2.0) / (sn - 2.0)).powf(2.0 / (sn - 4.0));
    Ok((1.0 / (2.0 * v)).powf((4.0 - sn) / (2.0 * sigma)))
}

/// Upper bound on the multiplier of a mass-`μ` minimizer (γ = 1 frame),
/// `B^{1/(1-σN/4)} (2 - σN/(2σ+2)) μ^{σ/(1-σN/4)}` with `B` an estimate of
/// the H² GN constant.
pub fn alpha_upper_bound(b_est: f64, sigma: f64, dim: usize, mu: f64) -> f64 {
    let sn = sigma * dim as f64;
    let e = 1.0 - sn / 4.0;
    b_est.powf(1.0 / e) * (2.0 - sn / (2.0 * sigma + 2.0)) * mu.powf(sigma / e)
}

/// Everything the identity checks report for a candidate solution.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct IdentityReport {
    pub pohozaev: PohozaevDefect,
    pub el_residual: f64,
    pub multiplier: LagrangeMultiplier,
    pub recovered: Option<RecoveredIntegrals>,
    /// Relative errors of the recovered integrals against the direct ones
    /// (`D`, `G`, `P`); zero when recovery is not applicable.
    pub consistency_defects: [f64; 3],
    pub functionals: FunctionalRecord,
}

/// Run all identities on `u`; the frequency is `params.alpha`.
pub fn identity_report(u: &Field, params: &Params) -> Result<IdentityReport> {
    let functionals = evaluate(u, params, Some(params.alpha))?;
    let mu = functionals.mass;
    let multiplier = lagrange_multiplier(u, params, mu)?;
    let pohozaev = pohozaev_from_parts(functionals.lap, functionals.grad, functionals.lp_power, params);
    let el = el_residual(u, params)?;
    let recovered = recover_integrals(functionals.energy, params.alpha, mu, params).ok();
    let consistency_defects = match recovered {
        Some(r) => [
            rel(r.lap, functionals.lap),
            rel(r.grad, functionals.grad),
            rel(r.lp_power, functionals.lp_power),
        ],
        None => [0.0; 3],
    };
    Ok(IdentityReport {
        pohozaev,
        el_residual: el,
        multiplier,
        recovered,
        consistency_defects,
        functionals,
    })
}

fn rel(a: f64, b: f64) -> f64 {
    let s = a.abs().max(b.abs());
    if s > 0.0 {
        (a - b).abs() / s
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::make_grid;

    fn exact_profile() -> (Field, Params) {
        let g = make_grid(1, 512, 80.0).unwrap();
        let a = 30f64.sqrt() / 2.0;
        let u = Field::from_fn(g, |x| a / (0.5 * x[0]).cosh().powi(2));
        (u, Params::new(1.0, 5.0, 4.0, 1.0, 1).unwrap())
    }

    fn soliton() -> Field {
        let g = make_grid(1, 512, 60.0).unwrap();
        Field::from_fn(g, |x| 2f64.sqrt() / x[0].cosh())
    }

    #[test]
    fn exact_profile_functionals() {
        let (u, p) = exact_profile();
        let r = evaluate(&u, &p, Some(4.0)).unwrap();
        assert!((r.energy + 100.0 / 7.0).abs() < 1e-9, "{}", r.energy);
        assert!((r.mass - 20.0).abs() < 1e-10);
        assert!((r.lp_power - 720.0 / 7.0).abs() < 1e-9);
        let j = r.quadratic().unwrap();
        assert!((r.action().unwrap() - (0.5 * j - r.lp_power / 4.0)).abs() < 1e-12);
        let no_alpha = evaluate(&u, &p, None).unwrap();
        assert!(no_alpha.action().is_err());
    }

    #[test]
    fn zero_field_functionals() {
        let g = make_grid(1, 64, 10.0).unwrap();
        let p = Params::new(1.0, 1.0, 1.0, 1.0, 1).unwrap();
        let r = evaluate(&Field::zeros(g.clone()), &p, Some(1.0)).unwrap();
        assert_eq!((r.energy, r.mass, r.lp_power, r.action.unwrap()), (0.0, 0.0, 0.0, 0.0));
        assert_eq!(pohozaev_residual(&Field::zeros(g.clone()), &p).unwrap().defect, 0.0);
        assert_eq!(lagrange_multiplier(&Field::zeros(g), &p, 1.0).unwrap().alpha, 0.0);
    }

    #[test]
    fn soliton_integrals() {
        let u = soliton();
        let p = Params::new(0.0, 1.0, 1.0, 1.0, 1).unwrap();
        let r = evaluate(&u, &p, None).unwrap();
        assert!((r.mass - 4.0).abs() < 1e-10);
        assert!((r.lp_power - 16.0 / 3.0).abs() < 1e-10);
        let lm = lagrange_multiplier(&u, &p, 4.0).unwrap();
        assert!((lm.alpha - 1.0).abs() < 1e-10);
        assert!(lm.mismatch < 1e-10);
    }

    #[test]
    fn pohozaev_on_exact_and_scaled() {
        let (u, p) = exact_profile();
        let d = pohozaev_residual(&u, &p).unwrap();
        assert!(d.relative.abs() < 1e-8, "{:?}", d);
        let d = pohozaev_residual(&u.scaled(1.1), &p).unwrap();
        // scaling by 1.1: 1.21 (40/7 + 20) - 1.4641 * 180/7 < 0 ... sign follows the terms
        let expected = 1.21 * (40.0 / 7.0 + 20.0) - 1.4641 * 180.0 / 7.0;
        assert!((d.defect - expected).abs() < 1e-8);
        assert!(d.defect.abs() > 1.0);
    }

    #[test]
    fn multiplier_of_exact_profile() {
        let (u, p) = exact_profile();
        let lm = lagrange_multiplier(&u, &p, 20.0).unwrap();
        assert!((lm.alpha - 4.0).abs() < 1e-9);
        assert!((lm.alpha_pohozaev - 4.0).abs() < 1e-9);
        assert!(lm.mismatch < 1e-10);
        assert!(lagrange_multiplier(&u, &p, 0.0).is_err());
    }

    #[test]
    fn recovered_integrals_of_exact_profile() {
        let p = Params::new(1.0, 5.0, 4.0, 1.0, 1).unwrap();
        let r = recover_integrals(-100.0 / 7.0, 4.0, 20.0, &p).unwrap();
        assert!((r.lap - 20.0 / 7.0).abs() < 1e-12);
        assert!((r.grad - 4.0).abs() < 1e-12);
        assert!((r.lp_power - 720.0 / 7.0).abs() < 1e-12);
    }

    /// Closed forms printed for β = 1, used as an independent oracle.
    fn printed_formulas(e: f64, alpha: f64, mu: f64, gamma: f64, sigma: f64, n: f64) -> [f64; 3] {
        let sn = sigma * n;
        let i2 = 2.0 * e;
        [
            (sn - 2.0 * sigma - 2.0) / (2.0 * sigma * gamma) * i2 + (sn - 2.0) / (2.0 * sigma * gamma) * alpha * mu,
            (4.0 * sigma + 4.0 - sn) / (2.0 * sigma) * i2 + alpha * mu * (4.0 - sn) / (2.0 * sigma),
            (sigma + 1.0) / sigma * (i2 + alpha * mu),
        ]
    }

    #[test]
    fn beta_one_matches_printed_formulas() {
        for &(e, alpha, mu, gamma, sigma, dim) in &[
            (-0.3, 0.7, 2.0, 1.0, 2.5, 1usize),
            (-1.2, 2.0, 5.0, 0.3, 1.5, 2),
            (0.4, 1.1, 0.9, 2.0, 1.0, 3),
        ] {
            let p = Params::new(gamma, 1.0, alpha, sigma, dim).unwrap();
            let r = recover_integrals(e, alpha, mu, &p).unwrap();
            let want = printed_formulas(e, alpha, mu, gamma, sigma, dim as f64);
            for (got, want) in [r.lap, r.grad, r.lp_power].iter().zip(want) {
                assert!((got - want).abs() < 1e-12 * want.abs().max(1.0), "{got} vs {want}");
            }
        }
    }

    #[test]
    fn mass_critical_branch() {
        let p = Params::new(1.0, 1.0, 0.8, 2.0, 1).unwrap();
        let r = recover_integrals(0.0, 0.8, 3.0, &p).unwrap();
        assert!((r.lp_power - 1.5 * 0.8 * 3.0).abs() < 1e-12);
        assert!((r.lp_power - 3.0 * r.grad).abs() < 1e-12);
        assert!(recover_integrals(-0.1, 0.8, 3.0, &p).is_err());
    }

    #[test]
    fn gn_h1_at_soliton() {
        let u = soliton();
        let r = gn_ratio(&u, 1.0, GnForm::H1).unwrap();
        assert!((r - 1.0 / 3f64.sqrt()).abs() < 1e-8, "{r}");
    }

    #[test]
    fn gn_errors() {
        let g = make_grid(1, 64, 10.0).unwrap();
        assert!(gn_ratio(&Field::zeros(g.clone()), 1.0, GnForm::H1).is_err());
        let u = Field::from_fn(g, |x| (-x[0] * x[0]).exp());
        assert!(gn_ratio(&u, 1.0, GnForm::Mixed).is_err());
        assert!(gn_ratio(&u, 3.0, GnForm::Mixed).is_ok());
        let g3 = make_grid(3, 16, 10.0).unwrap();
        let u3 = Field::from_fn(g3, |x| (-(x[0] * x[0] + x[1] * x[1] + x[2] * x[2])).exp());
        assert!(gn_ratio(&u3, 2.5, GnForm::H1).is_err());
    }

    #[test]
    fn critical_mass_formula_behaviour() {
        // decreasing gamma drives the critical mass to zero
        let mut last = f64::INFINITY;
        for &g in &[1.0, 0.1, 0.01, 1e-3, 1e-4] {
            let m = critical_mass_formula(g, 3.0, 1, 0.5).unwrap();
            assert!(m > 0.0 && m < last);
            last = m;
        }
        let m = critical_mass_formula(1.0, 2.0 + 1e-6, 1, 0.5).unwrap();
        assert!(m.is_finite() && m > 0.0);
        let c = 1.0 / 3f64.sqrt();
        let m = critical_mass_formula(1.0, 2.0, 1, c).unwrap();
        assert!((m - (1.0 / (2.0 * c)).sqrt()).abs() < 1e-15);
        assert!(critical_mass_formula(1.0, 1.0, 1, c).is_err());
        assert!(critical_mass_formula(1.0, 4.0, 1, c).is_err());
    }

    #[test]
    fn identity_report_on_exact_profile() {
        let (u, p) = exact_profile();
        let r = identity_report(&u, &p).unwrap();
        assert!(r.el_residual < 1e-10, "{}", r.el_residual);
        assert!(r.consistency_defects.iter().all(|d| *d < 1e-8));
    }
}
