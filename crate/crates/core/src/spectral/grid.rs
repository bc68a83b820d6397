use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

/// Smallest accepted number of points per axis.
pub const MIN_POINTS: usize = 16;

/// Uniform periodic discretization of the cube `[-L/2, L/2)^N`.
///
/// Spectral arrays use the usual FFT ordering on every axis: frequencies
/// `0, 1, ..., n/2 - 1, -n/2, ..., -1`. Field samples are row-major with
/// axis 0 varying slowest.
pub struct Grid {
    dim: usize,
    n: usize,
    length: f64,
    spacing: f64,
    wavenumbers: Vec<f64>,
    k2: Vec<f64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Grid")
            .field("dim", &self.dim)
            .field("n", &self.n)
            .field("length", &self.length)
            .finish()
    }
}

impl PartialEq for Grid {
    fn eq(&self, other: &Self) -> bool {
        self.dim == other.dim && self.n == other.n && self.length == other.length
    }
}

/// Build a shared grid. `n` must be even and at least [`MIN_POINTS`].
pub fn make_grid(dim: usize, n: usize, length: f64) -> Result<Arc<Grid>> {
    Grid::new(dim, n, length).map(Arc::new)
}

impl Grid {
    pub fn new(dim: usize, n: usize, length: f64) -> Result<Self> {
        if !(1..=3).contains(&dim) {
            return Err(Error::InvalidGrid(format!("dimension must be 1, 2 or 3, got {dim}")));
        }
        if n % 2 != 0 {
            return Err(Error::InvalidGrid(format!("n must be even, got {n}")));
        }
        if n < MIN_POINTS {
            return Err(Error::InvalidGrid(format!("n must be at least {MIN_POINTS}, got {n}")));
        }
        if !(length.is_finite() && length > 0.0) {
            return Err(Error::InvalidGrid(format!("box length must be positive, got {length}")));
        }
        let wavenumbers: Vec<f64> = (0..n)
            .map(|j| 2.0 * PI * frequency(j, n) as f64 / length)
            .collect();
        let total = n.pow(dim as u32);
        let mut k2 = vec![0.0; total];
        for (idx, slot) in k2.iter_mut().enumerate() {
            let mut rem = idx;
            let mut acc = 0.0;
            for _ in 0..dim {
                let k = wavenumbers[rem % n];
                acc += k * k;
                rem /= n;
            }
            *slot = acc;
        }
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(n);
        let inverse = planner.plan_fft_inverse(n);
        Ok(Grid {
            dim,
            n,
            length,
            spacing: length / n as f64,
            wavenumbers,
            k2,
            forward,
            inverse,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Points per axis.
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    /// Total number of samples, `n^N`.
    pub fn len(&self) -> usize {
        self.k2.len()
    }

    pub fn is_empty(&self) -> bool {
        self.k2.is_empty()
    }

    /// Per-axis wavenumber table in FFT order.
    pub fn wavenumbers(&self) -> &[f64] {
        &self.wavenumbers
    }

    /// `|k|^2` for every spectral index.
    pub fn k2(&self) -> &[f64] {
        &self.k2
    }

    /// Largest resolved `|k|` along one axis (the Nyquist wavenumber).
    pub fn k_max(&self) -> f64 {
        PI * self.n as f64 / self.length
    }

    /// Quadrature weight `h^N`.
    pub fn cell_volume(&self) -> f64 {
        self.spacing.powi(self.dim as i32)
    }

    /// Weight turning `sum |f_hat|^2` into `integral |f|^2` for the
    /// unnormalized forward transform.
    pub fn parseval_weight(&self) -> f64 {
        self.cell_volume() / self.len() as f64
    }

    /// Physical coordinate of sample `i` along any axis.
    pub fn coordinate(&self, i: usize) -> f64 {
        -0.5 * self.length + i as f64 * self.spacing
    }

    /// Axis coordinates `x_0, ..., x_{n-1}`.
    pub fn coordinates(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.coordinate(i)).collect()
    }

    /// Split a flat index into per-axis indices (axis 0 first).
    pub fn unravel(&self, idx: usize) -> [usize; 3] {
        let mut out = [0; 3];
        let mut rem = idx;
        for axis in (0..self.dim).rev() {
            out[axis] = rem % self.n;
            rem /= self.n;
        }
        out
    }

    pub fn ravel(&self, multi: &[usize]) -> usize {
        multi[..self.dim].iter().fold(0, |acc, &i| acc * self.n + i)
    }

    /// Physical point of a flat index; unused trailing axes are zero.
    pub fn point(&self, idx: usize) -> [f64; 3] {
        let m = self.unravel(idx);
        let mut x = [0.0; 3];
        for axis in 0..self.dim {
            x[axis] = self.coordinate(m[axis]);
        }
        x
    }

    /// Wavevector of a flat spectral index.
    pub fn wavevector(&self, idx: usize) -> [f64; 3] {
        let m = self.unravel(idx);
        let mut k = [0.0; 3];
        for axis in 0..self.dim {
            k[axis] = self.wavenumbers[m[axis]];
        }
        k
    }

    /// True when the spectral index sits on the Nyquist plane of `axis`.
    pub fn is_nyquist(&self, idx: usize, axis: usize) -> bool {
        self.unravel(idx)[axis] == self.n / 2
    }

    /// Unnormalized forward DFT in place.
    pub fn forward(&self, data: &mut [Complex64]) {
        self.transform(data, &self.forward);
    }

    /// Inverse DFT in place, normalized so `inverse(forward(f)) = f`.
    pub fn inverse(&self, data: &mut [Complex64]) {
        self.transform(data, &self.inverse);
        let scale = 1.0 / self.len() as f64;
        for v in data.iter_mut() {
            *v *= scale;
        }
    }

    fn transform(&self, data: &mut [Complex64], fft: &Arc<dyn Fft<f64>>) {
        assert_eq!(data.len(), self.len(), "transform buffer length");
        let n = self.n;
        let mut scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
        let mut line = vec![Complex64::new(0.0, 0.0); n];
        for axis in 0..self.dim {
            let stride = n.pow((self.dim - 1 - axis) as u32);
            if stride == 1 {
                fft.process_with_scratch(data, &mut scratch);
                continue;
            }
            let block = stride * n;
            for base in (0..data.len()).step_by(block) {
                for s in 0..stride {
                    for (j, slot) in line.iter_mut().enumerate() {
                        *slot = data[base + s + j * stride];
                    }
                    fft.process_with_scratch(&mut line, &mut scratch);
                    for (j, v) in line.iter().enumerate() {
                        data[base + s + j * stride] = *v;
                    }
                }
            }
        }
    }
}

/// Signed integer frequency of FFT slot `j` on an axis of `n` points.
pub fn frequency(j: usize, n: usize) -> i64 {
    if j < n / 2 {
        j as i64
    } else {
        j as i64 - n as i64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_dimensional_spacing_and_wavenumbers() {
        let g = make_grid(1, 256, 40.0).unwrap();
        assert_eq!(g.spacing(), 0.15625);
        assert_eq!(g.len(), 256);
        assert!((g.wavenumbers()[1] - 2.0 * PI / 40.0).abs() < 1e-15);
        assert!((g.wavenumbers()[255] + 2.0 * PI / 40.0).abs() < 1e-15);
        assert!((g.spacing() * g.n() as f64 - g.length()).abs() < 1e-15);
    }

    #[test]
    fn two_dimensional_point_count() {
        let g = make_grid(2, 64, 20.0).unwrap();
        assert_eq!(g.len(), 4096);
    }

    #[test]
    fn rejects_bad_sizes() {
        let err = make_grid(1, 15, 40.0).unwrap_err().to_string();
        assert!(err.contains("n must be even"), "{err}");
        assert!(make_grid(1, 14, 40.0).is_err());
        assert!(make_grid(1, 64, 0.0).is_err());
        assert!(make_grid(1, 64, -3.0).is_err());
        assert!(make_grid(4, 64, 1.0).is_err());
    }

    #[test]
    fn wavenumbers_odd_symmetric_except_nyquist() {
        let g = make_grid(1, 32, 7.0).unwrap();
        let k = g.wavenumbers();
        for j in 1..16 {
            assert_eq!(k[j], -k[32 - j]);
        }
        assert!(k[16] < 0.0);
        assert!((k[16].abs() - g.k_max()).abs() < 1e-12);
    }

    #[test]
    fn ravel_roundtrip() {
        let g = make_grid(3, 16, 1.0).unwrap();
        for idx in [0, 1, 17, 300, 4095] {
            let m = g.unravel(idx);
            assert_eq!(g.ravel(&m), idx);
        }
    }
}
