//! Uniform grids, the `F f(u) = ∫ e^{iux} f(x) dx` transform, FFT-based
//! linear convolution and quadrature against mixed (atom + density) measures.
//!
//! The transform uses the `+iux` sign. rustfft's inverse transform computes
//! `Σ x_j e^{+2πi jk/N}`, so the forward transform here is the unnormalized
//! inverse FFT of `(-1)^j f_j` multiplied by `dx e^{iu x0}`. The inverse
//! transform uses the forward FFT in the same way. Spectra are stored in
//! ascending frequency order, `u_k = (k - n/2) du`.

use std::cell::RefCell;
use std::f64::consts::PI;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{EffError, Result};

/// Complex scalar used throughout.
pub type C64 = Complex64;

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

/// In-place unnormalized FFT, `Σ x_j e^{-2πi jk/N}`.
pub(crate) fn fft_forward(buf: &mut [C64]) {
    PLANNER.with(|p| p.borrow_mut().plan_fft_forward(buf.len()).process(buf));
}

/// In-place unnormalized inverse FFT, `Σ x_j e^{+2πi jk/N}`.
pub(crate) fn fft_inverse(buf: &mut [C64]) {
    PLANNER.with(|p| p.borrow_mut().plan_fft_inverse(buf.len()).process(buf));
}

/// Uniform grid `x_j = x0 + j dx`, `j = 0..n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UniformGrid {
    pub x0: f64,
    pub dx: f64,
    pub n: usize,
}

impl UniformGrid {
    pub fn new(x0: f64, dx: f64, n: usize) -> Result<Self> {
        if !(dx > 0.0) || !dx.is_finite() || !x0.is_finite() {
            return Err(EffError::InvalidGrid(format!("dx = {dx}, x0 = {x0}")));
        }
        if n < 4 || !n.is_power_of_two() {
            return Err(EffError::InvalidGrid(format!(
                "n = {n} is not a power of two >= 4"
            )));
        }
        Ok(Self { x0, dx, n })
    }

    /// Grid on `[-half_span, half_span)` with `n` points.
    pub fn symmetric(half_span: f64, n: usize) -> Result<Self> {
        if !(half_span > 0.0) {
            return Err(EffError::InvalidGrid(format!("half span {half_span}")));
        }
        Self::new(-half_span, 2.0 * half_span / n as f64, n)
    }

    #[inline]
    pub fn x(&self, j: usize) -> f64 {
        self.x0 + j as f64 * self.dx
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.n).map(|j| self.x(j)).collect()
    }

    pub fn x_max(&self) -> f64 {
        self.x(self.n - 1)
    }

    /// Frequency spacing of the dual grid, `2π / (n dx)`.
    pub fn du(&self) -> f64 {
        2.0 * PI / (self.n as f64 * self.dx)
    }

    /// Largest frequency magnitude on the dual grid.
    pub fn nyquist(&self) -> f64 {
        PI / self.dx
    }

    /// Dual frequency grid, ascending from `-(n/2) du`.
    pub fn dual(&self) -> UniformGrid {
        let du = self.du();
        UniformGrid {
            x0: -((self.n / 2) as f64) * du,
            dx: du,
            n: self.n,
        }
    }

    /// Index of the node equal to `x` up to `1e-9 dx`, if any.
    pub fn node_index(&self, x: f64) -> Option<usize> {
        let s = (x - self.x0) / self.dx;
        let r = s.round();
        if (s - r).abs() < 1e-9 && r >= 0.0 && (r as usize) < self.n {
            Some(r as usize)
        } else {
            None
        }
    }

    /// Integer offset `x0 / dx`; errors when the origin is off-lattice.
    pub fn origin_offset(&self) -> Result<i64> {
        let s = self.x0 / self.dx;
        let r = s.round();
        if (s - r).abs() > 1e-9 {
            return Err(EffError::GridMismatch(format!(
                "x0/dx = {s} is not an integer; linear convolution needs an on-lattice origin"
            )));
        }
        Ok(r as i64)
    }

    /// Trapezoid quadrature weight of node `j`.
    #[inline]
    pub fn weight(&self, j: usize) -> f64 {
        if j == 0 || j + 1 == self.n {
            0.5 * self.dx
        } else {
            self.dx
        }
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.x0 - 1e-12 * self.dx && x <= self.x_max() + 1e-12 * self.dx
    }

    pub fn compatible(&self, other: &UniformGrid) -> bool {
        self.n == other.n
            && (self.dx - other.dx).abs() <= 1e-12 * self.dx
            && (self.x0 - other.x0).abs() <= 1e-9 * self.dx
    }

    pub(crate) fn require_compatible(&self, other: &UniformGrid, what: &str) -> Result<()> {
        if self.compatible(other) {
            Ok(())
        } else {
            Err(EffError::GridMismatch(format!(
                "{what}: {self:?} vs {other:?}"
            )))
        }
    }
}

/// Real function sampled on a uniform grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridFunction {
    #[serde(flatten)]
    pub grid: UniformGrid,
    pub values: Vec<f64>,
}

impl GridFunction {
    pub fn new(grid: UniformGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.n {
            return Err(EffError::InvalidInput(format!(
                "{} values for a grid of {} points",
                values.len(),
                grid.n
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(EffError::NonFinite("grid function".into()));
        }
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: UniformGrid) -> Self {
        Self {
            grid,
            values: vec![0.0; grid.n],
        }
    }

    pub fn from_fn(grid: UniformGrid, f: impl Fn(f64) -> f64) -> Self {
        Self {
            grid,
            values: (0..grid.n).map(|j| f(grid.x(j))).collect(),
        }
    }

    /// Linear interpolation; `None` outside the grid span.
    pub fn interp(&self, x: f64) -> Option<f64> {
        let g = &self.grid;
        if !g.contains(x) {
            return None;
        }
        let s = ((x - g.x0) / g.dx).max(0.0);
        let j = (s.floor() as usize).min(g.n - 1);
        if j + 1 >= g.n {
            return Some(self.values[g.n - 1]);
        }
        let w = s - j as f64;
        Some(self.values[j] * (1.0 - w) + self.values[j + 1] * w)
    }

    /// Linear interpolation with zero extension outside the grid.
    pub fn interp_or_zero(&self, x: f64) -> f64 {
        self.interp(x).unwrap_or(0.0)
    }

    pub fn map(&self, f: impl Fn(f64, f64) -> f64) -> Self {
        let g = self.grid;
        Self {
            grid: g,
            values: self
                .values
                .iter()
                .enumerate()
                .map(|(j, &v)| f(g.x(j), v))
                .collect(),
        }
    }

    pub fn scale(&self, c: f64) -> Self {
        Self {
            grid: self.grid,
            values: self.values.iter().map(|v| v * c).collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.grid.require_compatible(&other.grid, "add")?;
        Ok(Self {
            grid: self.grid,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a + b)
                .collect(),
        })
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.grid.require_compatible(&other.grid, "mul")?;
        Ok(Self {
            grid: self.grid,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a * b)
                .collect(),
        })
    }

    /// Trapezoid integral over the grid.
    pub fn integral(&self) -> f64 {
        let g = &self.grid;
        kahan_sum(self.values.iter().enumerate().map(|(j, v)| v * g.weight(j)))
    }

    /// Unweighted Riemann sum `Σ f_j dx`; this is the transform at `u = 0`.
    pub fn riemann_sum(&self) -> f64 {
        kahan_sum(self.values.iter().copied()) * self.grid.dx
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Copy of `f` evaluated at `-x` (reflection about the origin).
    pub fn reflect(&self) -> Self {
        let g = self.grid;
        if let Ok(o) = g.origin_offset() {
            // x_j = (o + j) dx, -x_j = x_k with k = -2o - j
            let values = (0..g.n)
                .map(|j| {
                    let k = -2 * o - j as i64;
                    if k >= 0 && (k as usize) < g.n {
                        self.values[k as usize]
                    } else {
                        0.0
                    }
                })
                .collect();
            Self { grid: g, values }
        } else {
            Self::from_fn(g, |x| self.interp_or_zero(-x))
        }
    }
}

/// Complex function on a dual frequency grid, ascending order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralFunction {
    pub ugrid: UniformGrid,
    /// Left endpoint of the spatial grid this spectrum belongs to.
    pub space_x0: f64,
    #[serde(with = "complex_pairs")]
    pub values: Vec<C64>,
}

impl SpectralFunction {
    pub fn from_fn(grid: &UniformGrid, f: impl Fn(f64) -> C64) -> Self {
        let ug = grid.dual();
        Self {
            ugrid: ug,
            space_x0: grid.x0,
            values: (0..ug.n).map(|k| f(ug.x(k))).collect(),
        }
    }

    #[inline]
    pub fn u(&self, k: usize) -> f64 {
        self.ugrid.x(k)
    }

    /// Index of `u = 0`.
    pub fn zero_index(&self) -> usize {
        self.ugrid.n / 2
    }

    pub fn spatial_grid(&self) -> UniformGrid {
        let n = self.ugrid.n;
        UniformGrid {
            x0: self.space_x0,
            dx: 2.0 * PI / (n as f64 * self.ugrid.dx),
            n,
        }
    }

    pub fn pointwise(&self, other: &Self, f: impl Fn(C64, C64) -> C64) -> Result<Self> {
        self.ugrid
            .require_compatible(&other.ugrid, "spectral product")?;
        Ok(Self {
            ugrid: self.ugrid,
            space_x0: self.space_x0,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| f(*a, *b))
                .collect(),
        })
    }

    pub fn map(&self, f: impl Fn(f64, C64) -> C64) -> Self {
        Self {
            ugrid: self.ugrid,
            space_x0: self.space_x0,
            values: self
                .values
                .iter()
                .enumerate()
                .map(|(k, v)| f(self.u(k), *v))
                .collect(),
        }
    }
}

mod complex_pairs {
    use super::C64;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &[C64], s: S) -> Result<S::Ok, S::Error> {
        let pairs: Vec<[f64; 2]> = v.iter().map(|c| [c.re, c.im]).collect();
        pairs.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<C64>, D::Error> {
        let pairs: Vec<[f64; 2]> = Vec::deserialize(d)?;
        Ok(pairs.into_iter().map(|[re, im]| C64::new(re, im)).collect())
    }
}

/// Finite list of point atoms plus an optional grid density.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixedMeasure {
    pub atoms: Vec<(f64, f64)>,
    pub density: Option<GridFunction>,
    pub total_mass: f64,
}

impl MixedMeasure {
    pub fn new(atoms: Vec<(f64, f64)>, density: Option<GridFunction>) -> Result<Self> {
        if atoms.iter().any(|(a, m)| !a.is_finite() || !m.is_finite()) {
            return Err(EffError::NonFinite("atoms".into()));
        }
        let total_mass =
            atoms.iter().map(|a| a.1).sum::<f64>() + density.as_ref().map_or(0.0, |d| d.integral());
        Ok(Self {
            atoms,
            density,
            total_mass,
        })
    }

    pub fn dirac(at: f64) -> Self {
        Self {
            atoms: vec![(at, 1.0)],
            density: None,
            total_mass: 1.0,
        }
    }

    pub fn from_density(density: GridFunction) -> Self {
        let total_mass = density.integral();
        Self {
            atoms: vec![],
            density: Some(density),
            total_mass,
        }
    }

    pub fn atom_mass(&self) -> f64 {
        self.atoms.iter().map(|a| a.1).sum()
    }

    pub fn scale(&self, c: f64) -> Self {
        Self {
            atoms: self.atoms.iter().map(|&(a, m)| (a, m * c)).collect(),
            density: self.density.as_ref().map(|d| d.scale(c)),
            total_mass: self.total_mass * c,
        }
    }

    pub fn is_probability(&self, tol: f64) -> bool {
        (self.total_mass - 1.0).abs() <= tol
    }

    /// Recompute the stored total mass after in-place edits.
    pub fn refresh_mass(&mut self) {
        self.total_mass = self.atom_mass() + self.density.as_ref().map_or(0.0, |d| d.integral());
    }
}

/// Neumaier-compensated sum.
pub fn kahan_sum(it: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut c = 0.0;
    for v in it {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            c += (sum - t) + v;
        } else {
            c += (v - t) + sum;
        }
        sum = t;
    }
    sum + c
}

fn check_finite(values: &[f64], what: &str) -> Result<()> {
    if values.iter().any(|v| !v.is_finite()) {
        Err(EffError::NonFinite(what.into()))
    } else {
        Ok(())
    }
}

/// Riemann-sum transform of arbitrary complex node values on `grid`,
/// `Σ_j f_j e^{iu x_j} dx`, returned on the dual grid in ascending order.
pub(crate) fn dft_sum(grid: &UniformGrid, values: impl Fn(usize) -> C64) -> Vec<C64> {
    let n = grid.n;
    let mut buf: Vec<C64> = (0..n)
        .map(|j| if j % 2 == 0 { values(j) } else { -values(j) })
        .collect();
    fft_inverse(&mut buf);
    let ug = grid.dual();
    (0..n)
        .map(|k| {
            let u = ug.x(k);
            buf[k] * C64::from_polar(grid.dx, u * grid.x0)
        })
        .collect()
}

/// `F f(u) = ∫ e^{iux} f(x) dx` by the trapezoid rule on the dual grid.
///
/// For functions that vanish at the grid ends the trapezoid rule is the
/// Riemann sum, and the result is exact up to aliasing.
pub fn fourier_transform(f: &GridFunction) -> Result<SpectralFunction> {
    check_finite(&f.values, "fourier_transform input")?;
    let g = f.grid;
    let mut vals = dft_sum(&g, |j| C64::new(f.values[j], 0.0));
    // trapezoid end corrections
    let ug = g.dual();
    let (a, b) = (f.values[0], f.values[g.n - 1]);
    if a != 0.0 || b != 0.0 {
        let xa = g.x0;
        let xb = g.x_max();
        for (k, v) in vals.iter_mut().enumerate() {
            let u = ug.x(k);
            *v -=
                0.5 * g.dx * (a * C64::from_polar(1.0, u * xa) + b * C64::from_polar(1.0, u * xb));
        }
    }
    Ok(SpectralFunction {
        ugrid: ug,
        space_x0: g.x0,
        values: vals,
    })
}

/// Transform of a mixed measure: exact phases for atoms plus the trapezoid
/// transform of the density.
pub fn measure_transform(m: &MixedMeasure, grid: &UniformGrid) -> Result<SpectralFunction> {
    let mut s = match &m.density {
        Some(d) => {
            grid.require_compatible(&d.grid, "measure transform")?;
            fourier_transform(d)?
        }
        None => SpectralFunction::from_fn(grid, |_| C64::new(0.0, 0.0)),
    };
    for (k, v) in s.values.iter_mut().enumerate() {
        let u = s.ugrid.x(k);
        for &(a, mass) in &m.atoms {
            *v += C64::from_polar(mass, u * a);
        }
    }
    Ok(s)
}

/// Complex inverse transform `(2π)^{-1} ∫ e^{-iux} F(u) du` on the spatial grid.
pub fn inverse_fourier_complex(f: &SpectralFunction) -> Result<Vec<C64>> {
    if f.values.len() != f.ugrid.n || !f.ugrid.n.is_power_of_two() {
        return Err(EffError::GridMismatch("spectral function length".into()));
    }
    if f.values
        .iter()
        .any(|v| !v.re.is_finite() || !v.im.is_finite())
    {
        return Err(EffError::NonFinite("inverse_fourier input".into()));
    }
    let g = f.spatial_grid();
    let n = g.n;
    let ug = f.ugrid;
    let expected = g.dual();
    if (expected.x0 - ug.x0).abs() > 1e-9 * ug.dx {
        return Err(EffError::GridMismatch(
            "frequency grid is not the dual of a spatial grid".into(),
        ));
    }
    let mut buf: Vec<C64> = (0..n)
        .map(|k| f.values[k] * C64::from_polar(1.0, -ug.x(k) * g.x0))
        .collect();
    fft_forward(&mut buf);
    let scale = ug.dx / (2.0 * PI);
    // sum over k of e^{-i u_k x_j} with u_k = (k - n/2) du contributes (-1)^j
    Ok(buf
        .into_iter()
        .enumerate()
        .map(|(j, v)| if j % 2 == 0 { v * scale } else { -v * scale })
        .collect())
}

/// Real part of the inverse transform.
pub fn inverse_fourier(f: &SpectralFunction) -> Result<GridFunction> {
    let g = f.spatial_grid();
    let vals = inverse_fourier_complex(f)?;
    GridFunction::new(g, vals.into_iter().map(|c| c.re).collect())
}

/// Full linear convolution of two node sequences, `c_m = Σ_i a_i b_{m-i}`,
/// zero-padded to a power of two at least `a.len() + b.len()`.
pub(crate) fn linear_convolution(a: &[f64], b: &[f64]) -> Vec<f64> {
    let len = a.len() + b.len() - 1;
    let m = (a.len() + b.len()).next_power_of_two();
    let mut fa: Vec<C64> = (0..m)
        .map(|i| C64::new(a.get(i).copied().unwrap_or(0.0), 0.0))
        .collect();
    let mut fb: Vec<C64> = (0..m)
        .map(|i| C64::new(b.get(i).copied().unwrap_or(0.0), 0.0))
        .collect();
    fft_forward(&mut fa);
    fft_forward(&mut fb);
    for (x, y) in fa.iter_mut().zip(&fb) {
        *x *= *y;
    }
    fft_inverse(&mut fa);
    let s = 1.0 / m as f64;
    fa.truncate(len);
    fa.into_iter().map(|c| c.re * s).collect()
}

/// Linear convolution `(f*g)(x) = ∫ f(x - y) g(y) dy` on the common grid.
///
/// Both inputs are zero-extended outside the grid and padded to at least
/// `2n` points, so there is no circular aliasing.
pub fn convolve(f: &GridFunction, g: &GridFunction) -> Result<GridFunction> {
    f.grid.require_compatible(&g.grid, "convolve")?;
    check_finite(&f.values, "convolve input")?;
    check_finite(&g.values, "convolve input")?;
    let grid = f.grid;
    let off = grid.origin_offset()?;
    let full = linear_convolution(&f.values, &g.values);
    // full[m] sits at 2 x0 + m dx and node k at x0 + k dx, so m = k - x0/dx
    let values = (0..grid.n)
        .map(|k| {
            let m = k as i64 - off;
            if m >= 0 && (m as usize) < full.len() {
                full[m as usize] * grid.dx
            } else {
                0.0
            }
        })
        .collect();
    GridFunction::new(grid, values)
}

/// Cross-correlation `c(x) = ∫ g(x + y) d(y) dy`, the density part of
/// `d(-·) * g`. Values of `g` outside the grid are taken as zero.
pub fn correlate(d: &GridFunction, g: &GridFunction) -> Result<GridFunction> {
    d.grid.require_compatible(&g.grid, "correlate")?;
    let grid = g.grid;
    let n = grid.n;
    let off = grid.origin_offset()?;
    let rev: Vec<f64> = d.values.iter().rev().copied().collect();
    let full = linear_convolution(&g.values, &rev);
    // c_k = Σ_j g[k + j + off] d[j] = full[k + off + n - 1]
    let values = (0..n)
        .map(|k| {
            let m = k as i64 + off + n as i64 - 1;
            if m >= 0 && (m as usize) < full.len() {
                full[m as usize] * grid.dx
            } else {
                0.0
            }
        })
        .collect();
    GridFunction::new(grid, values)
}

/// `x ↦ f(x - a)`: exact index shift for on-lattice `a`, otherwise a
/// band-limited phase shift on a zero-padded grid. Zero fill at the edges.
pub fn shift(f: &GridFunction, a: f64) -> GridFunction {
    let g = f.grid;
    let s = a / g.dx;
    let r = s.round();
    if (s - r).abs() < 1e-9 {
        let k = r as i64;
        let values = (0..g.n as i64)
            .map(|j| {
                let src = j - k;
                if src >= 0 && (src as usize) < g.n {
                    f.values[src as usize]
                } else {
                    0.0
                }
            })
            .collect();
        return GridFunction { grid: g, values };
    }
    let m = 2 * g.n;
    let mut buf: Vec<C64> = (0..m)
        .map(|j| C64::new(if j < g.n { f.values[j] } else { 0.0 }, 0.0))
        .collect();
    fft_forward(&mut buf);
    for (k, v) in buf.iter_mut().enumerate() {
        // frequency index in FFT order
        let kk = if k < m / 2 {
            k as f64
        } else {
            k as f64 - m as f64
        };
        if k == m / 2 {
            // Nyquist bin: keep the real part of the shifted phase
            *v *= (PI * s).cos();
            continue;
        }
        *v *= C64::from_polar(1.0, -2.0 * PI * kk * s / m as f64);
    }
    fft_inverse(&mut buf);
    let values = (0..g.n).map(|j| buf[j].re / m as f64).collect();
    GridFunction { grid: g, values }
}

/// Convolution of two mixed measures.
///
/// Atoms combine pairwise, an atom shifts the other density, and densities
/// convolve on the common grid.
pub fn convolve_measure(m1: &MixedMeasure, m2: &MixedMeasure) -> Result<MixedMeasure> {
    let mut atoms: Vec<(f64, f64)> = Vec::new();
    for &(a, ma) in &m1.atoms {
        for &(b, mb) in &m2.atoms {
            let loc = a + b;
            if let Some(e) = atoms
                .iter_mut()
                .find(|e| (e.0 - loc).abs() <= 1e-12 * (1.0 + loc.abs()))
            {
                e.1 += ma * mb;
            } else {
                atoms.push((loc, ma * mb));
            }
        }
    }
    let grid = match (&m1.density, &m2.density) {
        (Some(d1), Some(d2)) => {
            d1.grid.require_compatible(&d2.grid, "convolve_measure")?;
            Some(d1.grid)
        }
        (Some(d), None) | (None, Some(d)) => Some(d.grid),
        (None, None) => None,
    };
    let density = match grid {
        None => None,
        Some(grid) => {
            let mut acc = GridFunction::zeros(grid);
            for (atoms_of, dens_of) in [(&m1.atoms, &m2.density), (&m2.atoms, &m1.density)] {
                if let Some(d) = dens_of {
                    for &(a, ma) in atoms_of.iter() {
                        acc = acc.add(&shift(d, a).scale(ma))?;
                    }
                }
            }
            if let (Some(d1), Some(d2)) = (&m1.density, &m2.density) {
                acc = acc.add(&convolve(d1, d2)?)?;
            }
            Some(acc)
        }
    };
    MixedMeasure::new(atoms, density)
}

/// `∫ f dm`: atoms by linear interpolation of `f`, density by the trapezoid rule.
pub fn integrate(f: &GridFunction, m: &MixedMeasure) -> Result<f64> {
    let mut terms = Vec::with_capacity(m.atoms.len() + 1);
    for &(a, mass) in &m.atoms {
        let v = f.interp(a).ok_or(EffError::OutsideGrid {
            x: a,
            lo: f.grid.x0,
            hi: f.grid.x_max(),
        })?;
        terms.push(v * mass);
    }
    if let Some(d) = &m.density {
        f.grid.require_compatible(&d.grid, "integrate")?;
        let g = f.grid;
        terms.push(kahan_sum(
            (0..g.n).map(|j| f.values[j] * d.values[j] * g.weight(j)),
        ));
    }
    Ok(kahan_sum(terms))
}

/// Filon-type transform of the piecewise-linear interpolant of node values,
/// allowing one jump at node `jump.0` with one-sided limits `(left, right)`.
///
/// The grid is zero-padded by `pad` (a power of two), so the returned
/// spectrum has spacing `du / pad` and `pad * n` entries in FFT order
/// (index `m` is frequency `m du/pad` for `m < pad n / 2`).
pub(crate) fn filon_transform(
    grid: &UniformGrid,
    values: &[f64],
    jump: Option<(usize, f64, f64)>,
    pad: usize,
) -> Vec<C64> {
    let n = grid.n;
    let big = n * pad;
    let mut buf = vec![C64::new(0.0, 0.0); big];
    for j in 0..n {
        buf[j] = C64::new(values[j], 0.0);
    }
    if let Some((i0, l, r)) = jump {
        buf[i0] = C64::new(l + r, 0.0);
    }
    fft_inverse(&mut buf);
    let du = 2.0 * PI / (big as f64 * grid.dx);
    let xj = jump.map(|(i0, _, _)| grid.x(i0));
    (0..big)
        .map(|m| {
            let kk = if m < big / 2 {
                m as f64
            } else {
                m as f64 - big as f64
            };
            let u = kk * du;
            let th = u * grid.dx;
            let mut v = buf[m] * C64::from_polar(grid.dx * hat_factor(th), u * grid.x0);
            if let (Some((_, l, r)), Some(x)) = (jump, xj) {
                let i = half_hat(th);
                let ph = C64::from_polar(grid.dx, u * x);
                v -= ph * (r * i + l * i.conj());
            }
            v
        })
        .collect()
}

/// Transform of the unit hat function divided by `dx`: `2(1 - cos θ)/θ²`.
#[inline]
pub(crate) fn hat_factor(th: f64) -> f64 {
    if th.abs() < 1e-3 {
        let t2 = th * th;
        1.0 - t2 / 12.0 + t2 * t2 / 360.0
    } else {
        2.0 * (1.0 - th.cos()) / (th * th)
    }
}

/// `∫_0^1 e^{-iθs}(1 - s) ds`, the transform of the left half-hat over `dx`.
#[inline]
pub(crate) fn half_hat(th: f64) -> C64 {
    if th.abs() < 1e-3 {
        C64::new(0.5 - th * th / 24.0, -th / 6.0)
    } else {
        let e = C64::from_polar(1.0, -th);
        (C64::new(1.0, -th) - e) / (th * th)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn normal_pdf(x: f64) -> f64 {
        (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
    }

    #[test]
    fn dual_grid_spacing() {
        let g = UniformGrid::symmetric(10.0, 1024).unwrap();
        let d = g.dual();
        assert!((d.dx - 2.0 * PI / 20.0).abs() < 1e-14);
        assert!((d.x(512)).abs() < 1e-14);
    }

    #[test]
    fn rejects_bad_grids() {
        assert!(UniformGrid::new(0.0, 0.1, 1000).is_err());
        assert!(UniformGrid::new(0.0, -0.1, 1024).is_err());
        assert!(UniformGrid::symmetric(0.0, 1024).is_err());
    }

    #[test]
    fn inverse_of_gaussian_spectrum() {
        let g = UniformGrid::symmetric(20.0, 4096).unwrap();
        let s = SpectralFunction::from_fn(&g, |u| C64::new((-0.5 * u * u).exp(), 0.0));
        let f = inverse_fourier(&s).unwrap();
        for j in 0..g.n {
            assert!((f.values[j] - normal_pdf(g.x(j))).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_in_zero_out() {
        let g = UniformGrid::symmetric(5.0, 256).unwrap();
        let f = GridFunction::zeros(g);
        let s = fourier_transform(&f).unwrap();
        assert!(s.values.iter().all(|v| v.norm() == 0.0));
        assert!(inverse_fourier(&s)
            .unwrap()
            .values
            .iter()
            .all(|v| *v == 0.0));
    }

    #[test]
    fn nan_rejected() {
        let g = UniformGrid::symmetric(5.0, 256).unwrap();
        let mut f = GridFunction::zeros(g);
        f.values[3] = f64::NAN;
        assert!(fourier_transform(&f).is_err());
    }

    #[test]
    fn shift_off_lattice_matches_translate() {
        let g = UniformGrid::symmetric(20.0, 2048).unwrap();
        let f = GridFunction::from_fn(g, normal_pdf);
        let s = shift(&f, 0.3333);
        for j in 0..g.n {
            assert!((s.values[j] - normal_pdf(g.x(j) - 0.3333)).abs() < 1e-10);
        }
    }

    #[test]
    fn correlate_matches_direct_sum() {
        let g = UniformGrid::symmetric(4.0, 64).unwrap();
        let d = GridFunction::from_fn(g, |x| (-(x - 0.5) * (x - 0.5)).exp());
        let h = GridFunction::from_fn(g, |x| (x * 0.7).sin() * (-x * x / 4.0).exp());
        let c = correlate(&d, &h).unwrap();
        for k in 0..g.n {
            let mut s = 0.0;
            for j in 0..g.n {
                let x = g.x(k) + g.x(j);
                if let Some(i) = g.node_index(x) {
                    s += h.values[i] * d.values[j] * g.dx;
                }
            }
            assert!((c.values[k] - s).abs() < 1e-12, "{k}");
        }
    }

    #[test]
    fn filon_second_order_for_exponential_jump() {
        let g = UniformGrid::symmetric(16.0, 4096).unwrap();
        let i0 = g.node_index(0.0).unwrap();
        let vals: Vec<f64> = (0..g.n)
            .map(|j| if j > i0 { (-g.x(j)).exp() } else { 0.0 })
            .collect();
        let spec = filon_transform(&g, &vals, Some((i0, 0.0, 1.0)), 2);
        let du = g.du() / 2.0;
        for m in 0..200 {
            let u = m as f64 * du;
            let exact = C64::new(1.0, 0.0) / C64::new(1.0, -u);
            // interpolation error dx²/12 |∫ f''| with dx = 1/128
            assert!(
                (spec[m] - exact).norm() < 6e-6,
                "{m}: {}",
                (spec[m] - exact).norm()
            );
        }
    }
}
