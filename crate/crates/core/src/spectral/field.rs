use std::sync::Arc;

use num_complex::Complex64;

use super::grid::Grid;
use crate::error::{Error, Result};

/// Common view over real and complex sampled fields.
pub trait Sampled {
    fn grid(&self) -> &Arc<Grid>;

    /// Unnormalized forward transform of the samples.
    fn spectrum(&self) -> Vec<Complex64>;

    /// `|f|^2` at every sample.
    fn modulus_squared(&self) -> Vec<f64>;

    fn check_finite(&self) -> Result<()>;
}

/// Real field sampled on a [`Grid`].
#[derive(Clone, Debug)]
pub struct Field {
    grid: Arc<Grid>,
    values: Vec<f64>,
}

impl Field {
    pub fn new(grid: Arc<Grid>, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::InvalidInput(format!(
                "field has {} samples, grid expects {}",
                values.len(),
                grid.len()
            )));
        }
        Ok(Field { grid, values })
    }

    pub fn zeros(grid: Arc<Grid>) -> Self {
        let len = grid.len();
        Field { grid, values: vec![0.0; len] }
    }

    /// Sample `f(x)` at every grid point; `x` has `dim` entries.
    pub fn from_fn(grid: Arc<Grid>, f: impl Fn(&[f64]) -> f64) -> Self {
        let dim = grid.dim();
        let values = (0..grid.len())
            .map(|idx| {
                let p = grid.point(idx);
                f(&p[..dim])
            })
            .collect();
        Field { grid, values }
    }

    /// Real part of the inverse transform of `spectrum`.
    pub fn from_spectrum(grid: Arc<Grid>, mut spectrum: Vec<Complex64>) -> Self {
        grid.inverse(&mut spectrum);
        let values = spectrum.into_iter().map(|c| c.re).collect();
        Field { grid, values }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }

    pub fn scaled(&self, factor: f64) -> Field {
        self.map(|v| v * factor)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Field {
        Field {
            grid: Arc::clone(&self.grid),
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    /// `self + factor * other`.
    pub fn axpy(&self, factor: f64, other: &Field) -> Result<Field> {
        self.same_grid(other)?;
        Ok(Field {
            grid: Arc::clone(&self.grid),
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a + factor * b)
                .collect(),
        })
    }

    /// `h^N sum f g`.
    pub fn dot(&self, other: &Field) -> Result<f64> {
        self.same_grid(other)?;
        Ok(self.grid.cell_volume() * self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum::<f64>())
    }

    pub fn same_grid<T: Sampled>(&self, other: &T) -> Result<()> {
        if Arc::ptr_eq(&self.grid, other.grid()) || *self.grid == **other.grid() {
            Ok(())
        } else {
            Err(Error::GridMismatch)
        }
    }

    pub fn to_complex(&self) -> ComplexField {
        ComplexField {
            grid: Arc::clone(&self.grid),
            values: self.values.iter().map(|&v| Complex64::new(v, 0.0)).collect(),
        }
    }
}

impl Sampled for Field {
    fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    fn spectrum(&self) -> Vec<Complex64> {
        let mut data: Vec<Complex64> = self.values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.grid.forward(&mut data);
        data
    }

    fn modulus_squared(&self) -> Vec<f64> {
        self.values.iter().map(|v| v * v).collect()
    }

    fn check_finite(&self) -> Result<()> {
        match self.values.iter().position(|v| !v.is_finite()) {
            Some(i) => Err(Error::NonFinite(i)),
            None => Ok(()),
        }
    }
}

/// Complex field sampled on a [`Grid`] (time-dependent states).
#[derive(Clone, Debug)]
pub struct ComplexField {
    grid: Arc<Grid>,
    values: Vec<Complex64>,
}

impl ComplexField {
    pub fn new(grid: Arc<Grid>, values: Vec<Complex64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::InvalidInput(format!(
                "field has {} samples, grid expects {}",
                values.len(),
                grid.len()
            )));
        }
        Ok(ComplexField { grid, values })
    }

    pub fn from_fn(grid: Arc<Grid>, f: impl Fn(&[f64]) -> Complex64) -> Self {
        let dim = grid.dim();
        let values = (0..grid.len())
            .map(|idx| {
                let p = grid.point(idx);
                f(&p[..dim])
            })
            .collect();
        ComplexField { grid, values }
    }

    pub fn from_spectrum(grid: Arc<Grid>, mut spectrum: Vec<Complex64>) -> Self {
        grid.inverse(&mut spectrum);
        ComplexField { grid, values: spectrum }
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Complex64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn modulus(&self) -> Field {
        Field {
            grid: Arc::clone(&self.grid),
            values: self.values.iter().map(|c| c.norm()).collect(),
        }
    }

    pub fn real_part(&self) -> Field {
        Field {
            grid: Arc::clone(&self.grid),
            values: self.values.iter().map(|c| c.re).collect(),
        }
    }

    pub fn same_grid<T: Sampled>(&self, other: &T) -> Result<()> {
        if Arc::ptr_eq(&self.grid, other.grid()) || *self.grid == **other.grid() {
            Ok(())
        } else {
            Err(Error::GridMismatch)
        }
    }
}

impl Sampled for ComplexField {
    fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    fn spectrum(&self) -> Vec<Complex64> {
        let mut data = self.values.clone();
        self.grid.forward(&mut data);
        data
    }

    fn modulus_squared(&self) -> Vec<f64> {
        self.values.iter().map(|c| c.norm_sqr()).collect()
    }

    fn check_finite(&self) -> Result<()> {
        match self.values.iter().position(|c| !(c.re.is_finite() && c.im.is_finite())) {
            Some(i) => Err(Error::NonFinite(i)),
            None => Ok(()),
        }
    }
}
