use serde::{Deserialize, Serialize};

use super::grid::Grid;
use crate::error::{Error, Result};

/// Coefficients of `gamma Δ²u - beta Δu + alpha u = |u|^{2 sigma} u` in `dim` dimensions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Params {
    pub gamma: f64,
    pub beta: f64,
    pub alpha: f64,
    pub sigma: f64,
    pub dim: usize,
}

impl Params {
    pub fn new(gamma: f64, beta: f64, alpha: f64, sigma: f64, dim: usize) -> Result<Self> {
        let p = Params { gamma, beta, alpha, sigma, dim };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("gamma", self.gamma), ("beta", self.beta), ("alpha", self.alpha), ("sigma", self.sigma)] {
            if !v.is_finite() {
                return Err(Error::InvalidInput(format!("{name} must be finite")));
            }
        }
        if self.gamma < 0.0 {
            return Err(Error::InvalidInput(format!("gamma must be >= 0, got {}", self.gamma)));
        }
        if self.sigma <= 0.0 {
            return Err(Error::InvalidInput(format!("sigma must be > 0, got {}", self.sigma)));
        }
        if !(1..=3).contains(&self.dim) {
            return Err(Error::InvalidInput(format!("dim must be 1, 2 or 3, got {}", self.dim)));
        }
        Ok(())
    }

    /// Same coefficients with a different frequency.
    pub fn with_alpha(&self, alpha: f64) -> Params {
        Params { alpha, ..*self }
    }

    /// `sigma N`, the exponent that separates the mass regimes.
    pub fn sigma_n(&self) -> f64 {
        self.sigma * self.dim as f64
    }

    /// `gamma |k|^4 + beta |k|^2 + alpha` at `|k|^2 = k2`.
    pub fn symbol(&self, k2: f64) -> f64 {
        (self.gamma * k2 + self.beta) * k2 + self.alpha
    }

    /// Dispersive part `gamma |k|^4 + beta |k|^2` only.
    pub fn dispersion(&self, k2: f64) -> f64 {
        (self.gamma * k2 + self.beta) * k2
    }

    /// Whether the symbol is positive for every real `k`.
    pub fn symbol_positive_everywhere(&self) -> bool {
        if self.alpha <= 0.0 {
            return false;
        }
        if self.gamma == 0.0 {
            return self.beta >= 0.0;
        }
        self.beta > -2.0 * (self.gamma * self.alpha).sqrt()
    }

    /// Checks positivity at every wavenumber of `grid`, reporting the
    /// worst mode on failure.
    pub fn check_symbol(&self, grid: &Grid) -> Result<()> {
        let (k2, value) = grid
            .k2()
            .iter()
            .map(|&k2| (k2, self.symbol(k2)))
            .fold((0.0, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best });
        if value > 0.0 {
            Ok(())
        } else {
            Err(Error::SymbolNotPositive { k: k2.sqrt(), value })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::make_grid;

    #[test]
    fn rejects_nonpositive_sigma() {
        assert!(Params::new(1.0, 1.0, 1.0, 0.0, 1).is_err());
        assert!(Params::new(1.0, 1.0, 1.0, -1.0, 1).is_err());
        assert!(Params::new(-1.0, 1.0, 1.0, 1.0, 1).is_err());
    }

    #[test]
    fn positivity_wedge_matches_grid_scan() {
        let g = make_grid(1, 512, 60.0).unwrap();
        for &(beta, alpha) in &[(5.0, 4.0), (0.0, 1.0), (-1.9, 1.0), (-2.5, 1.0), (-3.0, 1.0)] {
            let p = Params::new(1.0, beta, alpha, 1.0, 1).unwrap();
            if p.symbol_positive_everywhere() {
                assert!(p.check_symbol(&g).is_ok(), "beta={beta}");
            } else {
                assert!(p.check_symbol(&g).is_err(), "beta={beta}");
            }
        }
    }

    #[test]
    fn violation_reports_offending_mode() {
        let g = make_grid(1, 256, 40.0).unwrap();
        let p = Params::new(1.0, -2.5, 1.0, 1.0, 1).unwrap();
        match p.check_symbol(&g) {
            Err(Error::SymbolNotPositive { k, value }) => {
                // minimum of k^4 - 2.5 k^2 + 1 sits at k^2 = 1.25
                assert!((k * k - 1.25).abs() < 0.2, "k={k}");
                assert!(value <= 0.0 && value > -0.5625 - 1e-12);
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
