//! Model descriptors: Lévy triplets, deconvolution pairs and white-noise
//! operators, with characteristic functions, marginal laws, the Fourier
//! multiplier check and samplers.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma as GammaDist, Normal, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{gamma_lr, ln_gamma};

use crate::error::{EffError, Result};
use crate::simulate::substream;
use crate::spectral_core::{
    convolve, filon_transform, fourier_transform, inverse_fourier, kahan_sum, measure_transform,
    shift, GridFunction, MixedMeasure, SpectralFunction, UniformGrid, C64,
};

/// Negative undershoot of inverted densities tolerated before clipping is refused.
pub const NEG_CLIP_TOL: f64 = 1e-8;
/// Largest renormalization of a marginal law accepted without flagging the grid.
pub const RENORM_TOL: f64 = 1e-6;

/// Smooth spectral taper `exp(-(|u| / (0.8 u_max))^8)` used whenever a
/// spectrum that does not decay is inverted on the grid.
pub fn spectral_taper(u: f64, nyquist: f64) -> f64 {
    (-(u.abs() / (0.8 * nyquist)).powi(8)).exp()
}

/// Finite or infinite jump activity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Activity {
    Finite { lambda: f64 },
    Infinite,
}

/// Parametric family a jump measure was built from, when known. Samplers and
/// singularity handling use it; `Gridded` means only the grid values exist.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum JumpFamily {
    Gamma {
        alpha: f64,
        rate: f64,
    },
    Normal {
        lambda: f64,
        mean: f64,
        sd: f64,
    },
    GammaPlusNormal {
        alpha: f64,
        rate: f64,
        lambda: f64,
        mean: f64,
        sd: f64,
    },
    Spike {
        lambda: f64,
        at: f64,
        width: f64,
    },
    Gridded,
}

/// Lévy measure on the grid.
///
/// For infinite activity the density is `k(x)/x` with `k = xν` bounded; the
/// origin node is set to zero (hard inner cutoff at `|x| < dx/2`) and the
/// one-sided limits `k(0-)`, `k(0+)` are kept for the transforms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JumpMeasure {
    pub density: GridFunction,
    pub activity: Activity,
    pub one_wedge_x_mass: f64,
    pub xnu_limits: (f64, f64),
    /// `∫_{|x|<dx/2} |x| ν(dx)` dropped by the inner cutoff.
    pub inner_cutoff_mass: f64,
    pub family: JumpFamily,
}

fn one_wedge(grid: &UniformGrid, dens: &[f64]) -> f64 {
    kahan_sum((0..grid.n).map(|j| grid.x(j).abs().min(1.0) * dens[j].abs() * grid.weight(j)))
}

impl JumpMeasure {
    /// Finite-activity measure from a bounded density.
    pub fn finite(grid: UniformGrid, f: impl Fn(f64) -> f64, family: JumpFamily) -> Result<Self> {
        let density = GridFunction::from_fn(grid, f);
        Self::finite_from_grid(density, family)
    }

    pub fn finite_from_grid(density: GridFunction, family: JumpFamily) -> Result<Self> {
        if density.values.iter().any(|v| !v.is_finite()) {
            return Err(EffError::NonFinite("jump density".into()));
        }
        if density.values.iter().any(|v| *v < 0.0) {
            return Err(EffError::InvalidInput(
                "jump density must be nonnegative".into(),
            ));
        }
        let lambda = density.integral();
        let one_wedge_x_mass = one_wedge(&density.grid, &density.values);
        Ok(Self {
            density,
            activity: Activity::Finite { lambda },
            one_wedge_x_mass,
            xnu_limits: (0.0, 0.0),
            inner_cutoff_mass: 0.0,
            family,
        })
    }

    /// Infinite-activity measure `ν(dx) = k(x)/x dx` from a bounded `k` with
    /// one-sided limits `limits = (k(0-), k(0+))`.
    pub fn infinite_from_xnu(
        grid: UniformGrid,
        k: impl Fn(f64) -> f64,
        limits: (f64, f64),
        family: JumpFamily,
    ) -> Result<Self> {
        if !limits.0.is_finite() || !limits.1.is_finite() {
            return Err(EffError::Divergent(
                "x·ν(x) is unbounded at the origin".into(),
            ));
        }
        let i0 = grid.node_index(0.0).ok_or_else(|| {
            EffError::InvalidGrid("infinite activity needs x = 0 on the grid".into())
        })?;
        let mut vals = vec![0.0; grid.n];
        for (j, v) in vals.iter_mut().enumerate() {
            if j != i0 {
                let x = grid.x(j);
                let kx = k(x);
                if !kx.is_finite() {
                    return Err(EffError::Divergent(format!("x·ν(x) not finite at x = {x}")));
                }
                *v = kx / x;
            }
        }
        if vals.iter().any(|v| *v < 0.0) {
            return Err(EffError::InvalidInput(
                "jump density must be nonnegative".into(),
            ));
        }
        let density = GridFunction::new(grid, vals)?;
        let inner = 0.5 * grid.dx * (limits.0.abs() + limits.1.abs()) * 0.5;
        let one_wedge_x_mass = one_wedge(&grid, &density.values) + inner;
        if !one_wedge_x_mass.is_finite() {
            return Err(EffError::Divergent("∫(1∧|x|)dν".into()));
        }
        Ok(Self {
            density,
            activity: Activity::Infinite,
            one_wedge_x_mass,
            xnu_limits: limits,
            inner_cutoff_mass: inner,
            family,
        })
    }

    /// `ν(dx) = α x^{-1} e^{-ρx} 1_{x>0} dx`.
    pub fn gamma(grid: UniformGrid, alpha: f64, rate: f64) -> Result<Self> {
        if !(alpha > 0.0 && rate > 0.0) {
            return Err(EffError::InvalidInput(
                "gamma jump measure needs alpha, rate > 0".into(),
            ));
        }
        Self::infinite_from_xnu(
            grid,
            |x| {
                if x > 0.0 {
                    alpha * (-rate * x).exp()
                } else {
                    0.0
                }
            },
            (0.0, alpha),
            JumpFamily::Gamma { alpha, rate },
        )
    }

    /// `λ · N(mean, sd²)` jump density.
    pub fn normal(grid: UniformGrid, lambda: f64, mean: f64, sd: f64) -> Result<Self> {
        if !(lambda >= 0.0 && sd > 0.0) {
            return Err(EffError::InvalidInput(
                "normal jump law needs lambda >= 0, sd > 0".into(),
            ));
        }
        Self::finite(
            grid,
            |x| lambda * normal_pdf(x, mean, sd),
            JumpFamily::Normal { lambda, mean, sd },
        )
    }

    /// Gamma jumps plus an independent compound Poisson part with normal jumps.
    pub fn gamma_plus_normal(
        grid: UniformGrid,
        alpha: f64,
        rate: f64,
        lambda: f64,
        mean: f64,
        sd: f64,
    ) -> Result<Self> {
        if !(alpha > 0.0 && rate > 0.0 && lambda >= 0.0 && sd > 0.0) {
            return Err(EffError::InvalidInput(
                "invalid gamma+normal parameters".into(),
            ));
        }
        Self::infinite_from_xnu(
            grid,
            |x| {
                let g = if x > 0.0 {
                    alpha * (-rate * x).exp()
                } else {
                    0.0
                };
                g + x * lambda * normal_pdf(x, mean, sd)
            },
            (0.0, alpha),
            JumpFamily::GammaPlusNormal {
                alpha,
                rate,
                lambda,
                mean,
                sd,
            },
        )
    }

    /// Unit bump `exp(-1/(1-r²))`, `r = (x - at)/width`, scaled to mass `lambda`
    /// on the grid: a mollified point mass.
    pub fn spike(grid: UniformGrid, lambda: f64, at: f64, width: f64) -> Result<Self> {
        if !(width > 0.0 && lambda > 0.0) {
            return Err(EffError::InvalidInput(
                "spike needs width, lambda > 0".into(),
            ));
        }
        let raw = GridFunction::from_fn(grid, |x| bump((x - at) / width));
        let mass = raw.integral();
        if !(mass > 0.0) {
            return Err(EffError::GridTooCoarse(format!(
                "spike of width {width} not resolved by dx = {}",
                grid.dx
            )));
        }
        Self::finite_from_grid(
            raw.scale(lambda / mass),
            JumpFamily::Spike { lambda, at, width },
        )
    }

    pub fn grid(&self) -> UniformGrid {
        self.density.grid
    }

    pub fn lambda(&self) -> Option<f64> {
        match self.activity {
            Activity::Finite { lambda } => Some(lambda),
            Activity::Infinite => None,
        }
    }

    pub fn is_finite_activity(&self) -> bool {
        matches!(self.activity, Activity::Finite { .. })
    }

    /// The measure as a (density-only) mixed measure.
    pub fn as_measure(&self) -> MixedMeasure {
        MixedMeasure::from_density(self.density.clone())
    }

    /// Node values of `xν(x)`; the origin node carries zero.
    pub fn xnu(&self) -> GridFunction {
        self.density.map(|x, v| x * v)
    }

    /// `ν_w(dx) = w(x) ν(dx)` for a positive weight; the limits of `xν` at the
    /// origin are multiplied by `w0 = (w(0-), w(0+))`.
    pub fn reweighted(&self, w: &GridFunction, w0: (f64, f64)) -> Result<Self> {
        let density = self.density.mul(w)?;
        match self.activity {
            Activity::Finite { .. } => Self::finite_from_grid(density, JumpFamily::Gridded),
            Activity::Infinite => {
                let limits = (self.xnu_limits.0 * w0.0, self.xnu_limits.1 * w0.1);
                let grid = self.grid();
                let one = one_wedge(&grid, &density.values);
                let inner = 0.25 * grid.dx * (limits.0.abs() + limits.1.abs());
                Ok(Self {
                    density,
                    activity: Activity::Infinite,
                    one_wedge_x_mass: one + inner,
                    xnu_limits: limits,
                    inner_cutoff_mass: inner,
                    family: JumpFamily::Gridded,
                })
            }
        }
    }
}

/// `exp(-1/(1-r²))` on `|r| < 1`, zero elsewhere.
pub fn bump(r: f64) -> f64 {
    if r.abs() >= 1.0 {
        0.0
    } else {
        (-1.0 / (1.0 - r * r)).exp()
    }
}

pub fn normal_pdf(x: f64, mean: f64, sd: f64) -> f64 {
    let z = (x - mean) / sd;
    (-0.5 * z * z).exp() / (sd * (2.0 * PI).sqrt())
}

/// Gamma density with shape `a`, rate `rho`.
pub fn gamma_pdf(x: f64, a: f64, rho: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    (a * rho.ln() + (a - 1.0) * x.ln() - rho * x - ln_gamma(a)).exp()
}

/// Gamma distribution function with shape `a`, rate `rho`.
pub fn gamma_cdf(x: f64, a: f64, rho: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        gamma_lr(a, rho * x)
    }
}

/// Lévy triplet `(γ, Δ, ν)` with no Gaussian part.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevyTriplet {
    pub gamma: f64,
    pub delta: f64,
    pub nu: JumpMeasure,
}

impl LevyTriplet {
    pub fn new(gamma: f64, delta: f64, nu: JumpMeasure) -> Result<Self> {
        if !(delta > 0.0) || !gamma.is_finite() {
            return Err(EffError::InvalidInput(format!(
                "delta = {delta} must be > 0, gamma finite"
            )));
        }
        if !nu.one_wedge_x_mass.is_finite() {
            return Err(EffError::Divergent("∫(1∧|x|)dν".into()));
        }
        Ok(Self { gamma, delta, nu })
    }

    pub fn grid(&self) -> UniformGrid {
        self.nu.grid()
    }

    /// Location `Δγ` of the drift.
    pub fn drift_location(&self) -> f64 {
        self.delta * self.gamma
    }
}

/// Spectrum of `xν` on the dual grid.
pub fn xnu_transform(t: &LevyTriplet) -> Result<SpectralFunction> {
    let grid = t.grid();
    match t.nu.activity {
        Activity::Finite { .. } => fourier_transform(&t.nu.xnu()),
        Activity::Infinite => {
            let i0 = grid.node_index(0.0).expect("checked at construction");
            let k = t.nu.xnu();
            let (l, r) = t.nu.xnu_limits;
            let fft_order = filon_transform(&grid, &k.values, Some((i0, l, r)), 1);
            let n = grid.n;
            let values = (0..n).map(|k| fft_order[(k + n / 2) % n]).collect();
            Ok(SpectralFunction {
                ugrid: grid.dual(),
                space_x0: grid.x0,
                values,
            })
        }
    }
}

/// Characteristic function `φ(u) = exp(Δ(iγu + ∫(e^{iux} - 1) ν(dx)))`.
///
/// Finite activity uses the trapezoid transform of ν. Infinite activity
/// integrates `Ψ'(u) = iΔγ + iΔ F[xν](u)` by cumulative Simpson on a twice
/// finer frequency grid, with `F[xν]` computed exactly for the
/// piecewise-linear interpolant of `xν` including its jump at the origin.
pub fn char_function(t: &LevyTriplet) -> Result<SpectralFunction> {
    let grid = t.grid();
    let n = grid.n;
    let ug = grid.dual();
    let d = t.delta;
    let mut values = vec![C64::new(0.0, 0.0); n];
    let half = n / 2;
    match t.nu.activity {
        Activity::Finite { .. } => {
            let f = fourier_transform(&t.nu.density)?;
            let lam = f.values[half].re;
            let psi = |k: usize| {
                let u = ug.x(k);
                d * (C64::new(0.0, t.gamma * u) + f.values[k] - lam)
            };
            values[0] = psi(0).exp();
            for k in half..n {
                let v = psi(k).exp();
                values[k] = v;
                if k > half {
                    values[n - k] = v.conj();
                }
            }
            values[half] = C64::new(1.0, 0.0);
        }
        Activity::Infinite => {
            let i0 = grid.node_index(0.0).expect("checked at construction");
            let k = t.nu.xnu();
            let (l, r) = t.nu.xnu_limits;
            // A one-sided jump of xν at the origin is split off as the exact
            // gamma exponent so only a continuous remainder is quadratured.
            let split = (l == 0.0 && r > 0.0).then(|| (r, singular_rate(t)));
            let fine = match split {
                Some((kr, rho)) => {
                    let rem: Vec<f64> = (0..n)
                        .map(|j| {
                            let x = grid.x(j);
                            if x > 0.0 {
                                k.values[j] - kr * (-rho * x).exp()
                            } else if j == i0 {
                                0.0
                            } else {
                                k.values[j]
                            }
                        })
                        .collect();
                    filon_transform(&grid, &rem, Some((i0, 0.0, 0.0)), 2)
                }
                None => filon_transform(&grid, &k.values, Some((i0, l, r)), 2),
            };
            // positive half, fine index m = 0..=n at spacing du/2
            let mut pos: Vec<C64> = fine[..n].to_vec();
            pos.push(fine[n].conj());
            let h = ug.dx / 2.0;
            let mut cum = vec![C64::new(0.0, 0.0); half + 1];
            for j in 1..=half {
                let seg = (pos[2 * j - 2] + pos[2 * j - 1] * 4.0 + pos[2 * j]) * (h / 3.0);
                cum[j] = cum[j - 1] + seg;
            }
            for (j, c) in cum.iter().enumerate() {
                let u = j as f64 * ug.dx;
                let mut psi = C64::new(0.0, d * t.gamma * u) + C64::new(0.0, d) * c;
                if let Some((kr, rho)) = split {
                    psi -= C64::new(1.0, -u / rho).ln() * (d * kr);
                }
                let v = psi.exp();
                if j < half {
                    values[half + j] = v;
                }
                values[half - j] = v.conj();
            }
            values[half] = C64::new(1.0, 0.0);
        }
    }
    Ok(SpectralFunction {
        ugrid: ug,
        space_x0: grid.x0,
        values,
    })
}

/// Marginal law together with the numerical bookkeeping behind it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalLaw {
    pub measure: MixedMeasure,
    /// Convolution-exponential truncation level (finite activity).
    pub truncation_k: Option<usize>,
    /// `|1 - mass|` before renormalization.
    pub renorm_adjustment: f64,
    pub clipped_nodes: usize,
    pub min_before_clip: f64,
    /// Node carrying the cell mass of a density singularity, if any.
    pub singular_node: Option<usize>,
    pub method: String,
}

/// Poisson tail `e^{-m} Σ_{k>K} m^k/k!`, computed from the complement.
fn poisson_tail_level(mean: f64, tol: f64) -> usize {
    let mut term = (-mean).exp();
    let mut cdf = term;
    let mut k = 0usize;
    while 1.0 - cdf > tol && k < 10_000 {
        k += 1;
        term *= mean / k as f64;
        cdf += term;
        // guard against the 1 - cdf cancellation floor
        if term < tol * 1e-3 && k as f64 > mean {
            break;
        }
    }
    k
}

/// Law `P_ν` of one increment.
///
/// Finite activity: the convolution exponential `δ_{Δγ} * e^{-Δλ} Σ_k Δ^k/k! ν^{*k}`
/// with the atom `e^{-Δλ}` at `Δγ` kept exact. Infinite activity: spectral
/// inversion of `φ`. When `xν` jumps only on one side of the origin, the
/// matching gamma-type singularity `c·γ_{Δk(0+)}(· - Δγ)` is subtracted in
/// the spectrum and added back in closed form.
pub fn marginal_law(t: &LevyTriplet) -> Result<MarginalLaw> {
    let grid = t.grid();
    let d = t.delta;
    let loc = t.drift_location();
    match t.nu.activity {
        Activity::Finite { lambda } => {
            let m = d * lambda;
            let big_k = poisson_tail_level(m, 1e-12).max(1);
            let atom_mass = (-m).exp();
            let mut power = t.nu.density.clone();
            let mut acc = power.scale(d);
            let mut coef = d;
            for k in 2..=big_k {
                power = convolve(&power, &t.nu.density)?;
                coef *= d / k as f64;
                acc = acc.add(&power.scale(coef))?;
            }
            let dens = shift(&acc.scale(atom_mass), loc);
            let mut measure = MixedMeasure::new(vec![(loc, atom_mass)], Some(dens))?;
            if !grid.contains(loc) {
                return Err(EffError::OutsideGrid {
                    x: loc,
                    lo: grid.x0,
                    hi: grid.x_max(),
                });
            }
            let adj = (measure.total_mass - 1.0).abs();
            if adj > RENORM_TOL {
                return Err(EffError::GridTooCoarse(format!(
                    "compound Poisson law loses mass {adj:e} off the grid"
                )));
            }
            let dm = measure.density.as_ref().map_or(0.0, |d| d.integral());
            if dm > 0.0 {
                let target = 1.0 - atom_mass;
                measure.density = measure.density.map(|f| f.scale(target / dm));
            }
            measure.refresh_mass();
            Ok(MarginalLaw {
                measure,
                truncation_k: Some(big_k),
                renorm_adjustment: adj,
                clipped_nodes: 0,
                min_before_clip: 0.0,
                singular_node: None,
                method: "convolution exponential".into(),
            })
        }
        Activity::Infinite => infinite_activity_law(t),
    }
}

fn infinite_activity_law(t: &LevyTriplet) -> Result<MarginalLaw> {
    let grid = t.grid();
    let n = grid.n;
    let d = t.delta;
    let loc = t.drift_location();
    let phi = char_function(t)?;
    let nyq = grid.nyquist();
    let (kl, kr) = t.nu.xnu_limits;
    let sing_node = grid.node_index(loc);
    let (mut p, singular_node, method) =
        if let (true, Some(i_s)) = (kl == 0.0 && kr > 0.0, sing_node) {
            let a = d * kr;
            let rho = singular_rate(t);
            let c = (-d * remainder_mass(t, rho)).exp();
            let resid = phi.map(|u, v| {
                let r = C64::from_polar(1.0, u * loc) * C64::new(1.0, -u / rho).powf(-a);
                (v - r * c) * spectral_taper(u, nyq)
            });
            let r = inverse_fourier(&resid)?;
            let mut sing = vec![0.0; n];
            let mut tail = 0.0;
            for j in (i_s + 1)..n {
                sing[j] = c * gamma_pdf(grid.x(j) - loc, a, rho);
                tail += sing[j] * grid.weight(j);
            }
            let exact = c * gamma_cdf(grid.x_max() - loc, a, rho);
            sing[i_s] = (exact - tail) / grid.weight(i_s);
            let vals: Vec<f64> = r.values.iter().zip(&sing).map(|(x, y)| x + y).collect();
            (
                vals,
                Some(i_s),
                "spectral inversion with gamma singularity subtraction".to_string(),
            )
        } else {
            let tapered = phi.map(|u, v| v * spectral_taper(u, nyq));
            (
                inverse_fourier(&tapered)?.values,
                None,
                "tapered spectral inversion".to_string(),
            )
        };
    let min_before_clip = p.iter().copied().fold(f64::INFINITY, f64::min);
    let mut clipped = 0;
    for v in p.iter_mut() {
        if *v < 0.0 {
            if *v < -NEG_CLIP_TOL {
                return Err(EffError::GridTooCoarse(format!(
                    "inverted density undershoots to {min_before_clip:e} (tolerance {NEG_CLIP_TOL:e})"
                )));
            }
            *v = 0.0;
            clipped += 1;
        }
    }
    let dens = GridFunction::new(grid, p)?;
    let mass = dens.integral();
    let adj = (mass - 1.0).abs();
    if adj > RENORM_TOL {
        return Err(EffError::GridTooCoarse(format!(
            "renormalization by {adj:e} exceeds {RENORM_TOL:e}"
        )));
    }
    let measure = MixedMeasure::from_density(dens.scale(1.0 / mass));
    Ok(MarginalLaw {
        measure,
        truncation_k: None,
        renorm_adjustment: adj,
        clipped_nodes: clipped,
        min_before_clip,
        singular_node,
        method,
    })
}

/// Decay rate of the gamma-type reference used to split off a one-sided
/// jump of `xν` at the origin.
fn singular_rate(t: &LevyTriplet) -> f64 {
    match t.nu.family {
        JumpFamily::Gamma { rate, .. } | JumpFamily::GammaPlusNormal { rate, .. } => rate,
        _ => 1.0,
    }
}

/// `∫ (ν(x) - k(0+) e^{-ρx}/x 1_{x>0}) dx`, a bounded integrand when `xν`
/// is Lipschitz on each side of the origin.
fn remainder_mass(t: &LevyTriplet, rho: f64) -> f64 {
    let grid = t.grid();
    let i0 = grid.node_index(0.0).expect("checked at construction");
    let kr = t.nu.xnu_limits.1;
    let rem = |j: usize| {
        let x = grid.x(j);
        let v = t.nu.density.values[j];
        if x > 0.0 {
            v - kr * (-rho * x).exp() / x
        } else {
            v
        }
    };
    let mut total = 0.0;
    let mut vals: Vec<f64> = (0..grid.n)
        .map(|j| if j == i0 { 0.0 } else { rem(j) })
        .collect();
    // origin node: average of the linearly extrapolated one-sided limits
    let right = if i0 + 2 < grid.n {
        2.0 * rem(i0 + 1) - rem(i0 + 2)
    } else {
        0.0
    };
    let left = if i0 >= 2 {
        2.0 * rem(i0 - 1) - rem(i0 - 2)
    } else {
        0.0
    };
    vals[i0] = 0.5 * (left + right);
    for (j, v) in vals.iter().enumerate() {
        total += v * grid.weight(j);
    }
    total
}

/// Outcome of the Fourier multiplier check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FourierMultCheck {
    /// Fitted decay exponent of `|φ|` over the top frequency decade.
    pub beta_hat: f64,
    /// `min_u |φ(u)| (1 + |u|)^{β̂}`.
    pub c_lower: f64,
    pub xnu_decay_ok: bool,
    /// `sup_u |F[xν](u)| (1 + |u|)` over the grid.
    pub xnu_constant: f64,
}

/// Least-squares slope of `log|s(u)|` against `log(1+u)` over `u ∈ [u_max/10, u_max]`.
pub fn decay_exponent(s: &SpectralFunction) -> Result<f64> {
    let half = s.zero_index();
    let umax = s.u(s.ugrid.n - 1);
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for k in half + 1..s.ugrid.n {
        let u = s.u(k);
        if u >= umax / 10.0 {
            let a = s.values[k].norm();
            if !(a > 1e-300) {
                return Err(EffError::Underflow { min_abs: a });
            }
            xs.push((1.0 + u).ln());
            ys.push(a.ln());
        }
    }
    let m = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / m;
    let my = ys.iter().sum::<f64>() / m;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    Ok(-sxy / sxx)
}

/// Check `|φ(u)| ≳ (1+|u|)^{-β}` and `|F[xν](u)| ≲ (1+|u|)^{-1}` on the grid.
pub fn check_fourier_mult(t: &LevyTriplet) -> Result<FourierMultCheck> {
    let phi = char_function(t)?;
    let min_abs = phi
        .values
        .iter()
        .map(|v| v.norm())
        .fold(f64::INFINITY, f64::min);
    if !(min_abs > 1e-300) {
        return Err(EffError::Underflow { min_abs });
    }
    let beta_hat = decay_exponent(&phi)?.max(0.0);
    let c_lower = phi
        .values
        .iter()
        .enumerate()
        .map(|(k, v)| v.norm() * (1.0 + phi.u(k).abs()).powf(beta_hat))
        .fold(f64::INFINITY, f64::min);
    let xs = xnu_transform(t)?;
    let weighted: Vec<f64> = xs
        .values
        .iter()
        .enumerate()
        .map(|(k, v)| v.norm() * (1.0 + xs.u(k).abs()))
        .collect();
    let xnu_constant = weighted.iter().copied().fold(0.0, f64::max);
    // bounded means: the top decade does not exceed twice the level below it
    let n = xs.ugrid.n;
    let half = n / 2;
    let umax = xs.u(n - 1);
    let (mut top, mut below) = (0.0f64, 0.0f64);
    for k in half..n {
        let u = xs.u(k);
        if u >= umax / 10.0 {
            top = top.max(weighted[k]);
        } else if u >= umax / 100.0 {
            below = below.max(weighted[k]);
        }
    }
    let xnu_decay_ok =
        xnu_constant.is_finite() && top <= 2.0 * below.max(1e-12 * xnu_constant) + 1e-12;
    Ok(FourierMultCheck {
        beta_hat,
        c_lower,
        xnu_decay_ok,
        xnu_constant,
    })
}

/// Parametric family of the error law in a deconvolution pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum ErrorFamily {
    Gamma { shape: f64, rate: f64 },
    Dirac { at: f64 },
    Gridded,
}

/// Parametric family of the signal law in a deconvolution pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum SignalFamily {
    Normal { mean: f64, sd: f64 },
    Gridded,
}

/// Deconvolution model `Y = X + ε`, `X ~ ν`, `ε ~ μ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeconvPair {
    pub nu: MixedMeasure,
    pub mu: MixedMeasure,
    pub nu_family: SignalFamily,
    pub mu_family: ErrorFamily,
}

impl DeconvPair {
    pub fn new(
        nu: MixedMeasure,
        mu: MixedMeasure,
        nu_family: SignalFamily,
        mu_family: ErrorFamily,
    ) -> Result<Self> {
        if nu.density.is_none() {
            return Err(EffError::InvalidInput(
                "the signal law must have a Lebesgue density".into(),
            ));
        }
        for (name, m) in [("signal", &nu), ("error", &mu)] {
            if !m.is_probability(1e-9) {
                return Err(EffError::NotNormalized { mass: m.total_mass })
                    .map_err(|e| EffError::InvalidInput(format!("{name} law: {e}")));
            }
        }
        Ok(Self {
            nu,
            mu,
            nu_family,
            mu_family,
        })
    }

    /// `ν = N(mean, sd²)`, `μ = Γ(shape, rate)`.
    pub fn gamma_error(
        grid: UniformGrid,
        mean: f64,
        sd: f64,
        shape: f64,
        rate: f64,
    ) -> Result<Self> {
        let nu = normal_law(grid, mean, sd)?;
        let mu = gamma_law_on_grid(grid, shape, rate)?;
        Self::new(
            nu,
            mu,
            SignalFamily::Normal { mean, sd },
            ErrorFamily::Gamma { shape, rate },
        )
    }

    /// `ν = N(mean, sd²)`, `μ = δ_0`.
    pub fn identity(grid: UniformGrid, mean: f64, sd: f64) -> Result<Self> {
        let nu = normal_law(grid, mean, sd)?;
        Self::new(
            nu,
            MixedMeasure::dirac(0.0),
            SignalFamily::Normal { mean, sd },
            ErrorFamily::Dirac { at: 0.0 },
        )
    }

    pub fn grid(&self) -> UniformGrid {
        self.nu
            .density
            .as_ref()
            .expect("checked at construction")
            .grid
    }
}

fn normal_law(grid: UniformGrid, mean: f64, sd: f64) -> Result<MixedMeasure> {
    if !(sd > 0.0) {
        return Err(EffError::InvalidInput("sd must be > 0".into()));
    }
    let d = GridFunction::from_fn(grid, |x| normal_pdf(x, mean, sd));
    let m = d.integral();
    Ok(MixedMeasure::from_density(d.scale(1.0 / m)))
}

/// Gamma law on the grid; the singular origin node carries the exact mass
/// of the part the trapezoid rule misses.
pub fn gamma_law_on_grid(grid: UniformGrid, shape: f64, rate: f64) -> Result<MixedMeasure> {
    if !(shape > 0.0 && rate > 0.0) {
        return Err(EffError::InvalidInput(
            "gamma law needs shape, rate > 0".into(),
        ));
    }
    let i0 = grid
        .node_index(0.0)
        .ok_or_else(|| EffError::InvalidGrid("gamma law needs x = 0 on the grid".into()))?;
    let mut vals = vec![0.0; grid.n];
    let mut tail = 0.0;
    for j in (i0 + 1)..grid.n {
        vals[j] = gamma_pdf(grid.x(j), shape, rate);
        tail += vals[j] * grid.weight(j);
    }
    let exact = gamma_cdf(grid.x_max(), shape, rate);
    vals[i0] = (exact - tail) / grid.weight(i0);
    if vals[i0] < 0.0 {
        return Err(EffError::GridTooCoarse("gamma law origin cell".into()));
    }
    let d = GridFunction::new(grid, vals)?;
    let m = d.integral();
    Ok(MixedMeasure::from_density(d.scale(1.0 / m)))
}

/// Characteristic function of the error law, analytic for known families.
pub fn error_cf(pair: &DeconvPair) -> Result<SpectralFunction> {
    let grid = pair.grid();
    Ok(match pair.mu_family {
        ErrorFamily::Gamma { shape, rate } => {
            SpectralFunction::from_fn(&grid, |u| C64::new(1.0, -u / rate).powf(-shape))
        }
        ErrorFamily::Dirac { at } => {
            SpectralFunction::from_fn(&grid, |u| C64::from_polar(1.0, u * at))
        }
        ErrorFamily::Gridded => measure_transform(&pair.mu, &grid)?,
    })
}

/// Observation law `P = ν * μ`.
///
/// Gridded error laws use `convolve_measure`; for a Dirac error the signal
/// is shifted exactly; for the gamma family the smooth product spectrum is
/// inverted, which avoids convolving against the singular gridded density.
pub fn obs_density(pair: &DeconvPair) -> Result<MixedMeasure> {
    let grid = pair.grid();
    match pair.mu_family {
        ErrorFamily::Dirac { at } => {
            let d = pair.nu.density.as_ref().expect("checked");
            let atoms = pair.nu.atoms.iter().map(|&(a, m)| (a + at, m)).collect();
            MixedMeasure::new(atoms, Some(shift(d, at)))
        }
        ErrorFamily::Gamma { .. } if pair.nu.atoms.is_empty() => {
            let fnu = measure_transform(&pair.nu, &grid)?;
            let fe = error_cf(pair)?;
            let prod = fnu.pointwise(&fe, |a, b| a * b)?;
            let mut p = inverse_fourier(&prod)?;
            for v in p.values.iter_mut() {
                if *v < 0.0 {
                    if *v < -NEG_CLIP_TOL {
                        return Err(EffError::GridTooCoarse(format!(
                            "observation density undershoot {v:e}"
                        )));
                    }
                    *v = 0.0;
                }
            }
            let m = p.integral();
            Ok(MixedMeasure::from_density(p.scale(1.0 / m)))
        }
        _ => crate::spectral_core::convolve_measure(&pair.nu, &pair.mu),
    }
}

/// Kind of white-noise forward operator.
#[derive(Debug, Clone, PartialEq)]
pub enum WhiteNoiseKind {
    Matrix {
        k: DMatrix<f64>,
    },
    FourierMultiplier {
        multiplier: SpectralFunction,
    },
    /// Linearization of `K(f)` solving `f' = -f + θ²` at the point `θ`.
    DiffeqNonlinear {
        theta: GridFunction,
    },
}

/// White-noise model `y = K θ + ε W`.
#[derive(Debug, Clone, PartialEq)]
pub struct WhiteNoiseOp {
    pub kind: WhiteNoiseKind,
    pub eps: f64,
    /// True parameter used by simulations (matrix kind).
    pub theta: Option<Vec<f64>>,
    /// Smallest singular value of `K` (matrix kind).
    pub min_singular_value: Option<f64>,
}

impl WhiteNoiseOp {
    pub fn matrix(k: DMatrix<f64>, theta: Vec<f64>, eps: f64) -> Result<Self> {
        if !(eps > 0.0) {
            return Err(EffError::InvalidInput("eps must be > 0".into()));
        }
        if theta.len() != k.ncols() {
            return Err(EffError::InvalidInput(
                "theta length must equal the column count of K".into(),
            ));
        }
        let sv = k.clone().svd(false, false).singular_values;
        let smin = sv.iter().copied().fold(f64::INFINITY, f64::min);
        if k.nrows() < k.ncols() || !(smin > 1e-12) {
            return Err(EffError::InvalidInput(format!(
                "K is not injective (smallest singular value {smin:e})"
            )));
        }
        Ok(Self {
            kind: WhiteNoiseKind::Matrix { k },
            eps,
            theta: Some(theta),
            min_singular_value: Some(smin),
        })
    }

    pub fn multiplier(multiplier: SpectralFunction, eps: f64) -> Result<Self> {
        let sup = multiplier
            .values
            .iter()
            .map(|v| v.norm())
            .fold(0.0, f64::max);
        if !sup.is_finite() {
            return Err(EffError::InvalidInput("multiplier must be bounded".into()));
        }
        Ok(Self {
            kind: WhiteNoiseKind::FourierMultiplier { multiplier },
            eps,
            theta: None,
            min_singular_value: None,
        })
    }

    pub fn diffeq(theta: GridFunction, eps: f64) -> Result<Self> {
        if theta.values.iter().any(|v| *v < 0.0) {
            return Err(EffError::InvalidInput("theta must be nonnegative".into()));
        }
        Ok(Self {
            kind: WhiteNoiseKind::DiffeqNonlinear { theta },
            eps,
            theta: None,
            min_singular_value: None,
        })
    }
}

/// Inverse-CDF sampler for a mixed measure on a grid.
///
/// Within each cell the density is linear, so the inverse is the root of a
/// quadratic.
#[derive(Debug, Clone)]
pub struct MeasureSampler {
    atoms: Vec<(f64, f64)>,
    atom_mass: f64,
    grid: Option<UniformGrid>,
    values: Vec<f64>,
    cdf: Vec<f64>,
    total: f64,
}

impl MeasureSampler {
    pub fn new(m: &MixedMeasure) -> Result<Self> {
        let atom_mass = m.atom_mass();
        let (grid, values, cdf) = match &m.density {
            Some(d) => {
                if d.values.iter().any(|v| *v < 0.0) {
                    return Err(EffError::InvalidInput(
                        "negative density cannot be sampled".into(),
                    ));
                }
                let g = d.grid;
                let mut cdf = vec![0.0; g.n];
                for j in 1..g.n {
                    cdf[j] = cdf[j - 1] + 0.5 * g.dx * (d.values[j - 1] + d.values[j]);
                }
                (Some(g), d.values.clone(), cdf)
            }
            None => (None, vec![], vec![]),
        };
        let dens_mass = cdf.last().copied().unwrap_or(0.0);
        let total = atom_mass + dens_mass;
        if !((total - 1.0).abs() < 1e-6) {
            return Err(EffError::NotNormalized { mass: total });
        }
        Ok(Self {
            atoms: m.atoms.clone(),
            atom_mass,
            grid,
            values,
            cdf,
            total,
        })
    }

    pub fn draw(&self, rng: &mut ChaCha8Rng) -> f64 {
        let mut u: f64 = rng.random::<f64>() * self.total;
        if u < self.atom_mass {
            for &(a, m) in &self.atoms {
                if u < m {
                    return a;
                }
                u -= m;
            }
            return self.atoms.last().map(|a| a.0).unwrap_or(0.0);
        }
        u -= self.atom_mass;
        let g = self.grid.expect("density present when atom mass < total");
        let j = match self.cdf.binary_search_by(|c| c.partial_cmp(&u).unwrap()) {
            Ok(j) => j.min(g.n - 2),
            Err(j) => j.saturating_sub(1).min(g.n - 2),
        };
        let r = u - self.cdf[j];
        let (a, b) = (self.values[j], self.values[j + 1]);
        let slope = (b - a) / g.dx;
        let s = if slope.abs() < 1e-14 * (a.abs() + b.abs() + 1e-300) {
            if a > 0.0 {
                r / a
            } else {
                0.5 * g.dx
            }
        } else {
            let disc = (a * a + 2.0 * slope * r).max(0.0);
            (disc.sqrt() - a) / slope
        };
        g.x(j) + s.clamp(0.0, g.dx)
    }
}

/// A boxed draw from a law, given the replication's RNG.
pub type Draw = Box<dyn Fn(&mut ChaCha8Rng) -> f64 + Send + Sync>;

/// Models that can produce i.i.d. observations.
pub trait Sampler {
    fn sampler(&self) -> Result<Draw>;

    /// `n` draws from the substream `(seed, 0)`.
    fn sample(&self, n: usize, seed: u64) -> Result<Vec<f64>> {
        let draw = self.sampler()?;
        let mut rng = substream(seed, 0);
        Ok((0..n).map(|_| draw(&mut rng)).collect())
    }
}

fn poisson_count(rng: &mut ChaCha8Rng, mean: f64) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    Poisson::new(mean).expect("positive mean").sample(rng) as u64
}

impl Sampler for LevyTriplet {
    fn sampler(&self) -> Result<Draw> {
        let d = self.delta;
        let loc = self.drift_location();
        match (&self.nu.family, self.nu.activity) {
            (JumpFamily::Gamma { alpha, rate }, _) => {
                let g = GammaDist::new(alpha * d, 1.0 / rate)
                    .map_err(|e| EffError::InvalidInput(e.to_string()))?;
                Ok(Box::new(move |rng| loc + g.sample(rng)))
            }
            (
                JumpFamily::GammaPlusNormal {
                    alpha,
                    rate,
                    lambda,
                    mean,
                    sd,
                },
                _,
            ) => {
                let g = GammaDist::new(alpha * d, 1.0 / rate)
                    .map_err(|e| EffError::InvalidInput(e.to_string()))?;
                let (lambda, mean, sd) = (*lambda, *mean, *sd);
                Ok(Box::new(move |rng| {
                    let k = poisson_count(rng, d * lambda) as f64;
                    let z: f64 = StandardNormal.sample(rng);
                    loc + g.sample(rng) + k * mean + (k.sqrt() * sd) * z
                }))
            }
            (JumpFamily::Normal { lambda, mean, sd }, _) => {
                let (lambda, mean, sd) = (*lambda, *mean, *sd);
                Ok(Box::new(move |rng| {
                    let k = poisson_count(rng, d * lambda) as f64;
                    let z: f64 = StandardNormal.sample(rng);
                    loc + k * mean + (k.sqrt() * sd) * z
                }))
            }
            (_, Activity::Finite { lambda }) => {
                let jumps = MeasureSampler::new(&MixedMeasure::from_density(
                    self.nu.density.scale(1.0 / lambda),
                ))?;
                Ok(Box::new(move |rng| {
                    let k = poisson_count(rng, d * lambda);
                    loc + (0..k).map(|_| jumps.draw(rng)).sum::<f64>()
                }))
            }
            (_, Activity::Infinite) => Err(EffError::Unsupported(
                "sampling a gridded infinite-activity law".into(),
            )),
        }
    }
}

impl Sampler for DeconvPair {
    fn sampler(&self) -> Result<Draw> {
        let signal: Box<dyn Fn(&mut ChaCha8Rng) -> f64 + Send + Sync> = match self.nu_family {
            SignalFamily::Normal { mean, sd } => {
                let nd =
                    Normal::new(mean, sd).map_err(|e| EffError::InvalidInput(e.to_string()))?;
                Box::new(move |rng| nd.sample(rng))
            }
            SignalFamily::Gridded => {
                let s = MeasureSampler::new(&self.nu)?;
                Box::new(move |rng| s.draw(rng))
            }
        };
        let error: Box<dyn Fn(&mut ChaCha8Rng) -> f64 + Send + Sync> = match self.mu_family {
            ErrorFamily::Gamma { shape, rate } => {
                let g = GammaDist::new(shape, 1.0 / rate)
                    .map_err(|e| EffError::InvalidInput(e.to_string()))?;
                Box::new(move |rng| g.sample(rng))
            }
            ErrorFamily::Dirac { at } => Box::new(move |_| at),
            ErrorFamily::Gridded => {
                let s = MeasureSampler::new(&self.mu)?;
                Box::new(move |rng| s.draw(rng))
            }
        };
        Ok(Box::new(move |rng| signal(rng) + error(rng)))
    }
}

/// Grid override in a model config.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub n: Option<usize>,
    /// Half-width `L` of the symmetric span `[-L, L)`.
    pub span: Option<f64>,
}

fn d_alpha() -> f64 {
    0.3
}
fn d_one() -> f64 {
    1.0
}
fn d_two() -> f64 {
    2.0
}
fn d_eps() -> f64 {
    0.1
}
fn d_width() -> f64 {
    1e-3
}

/// Built-in model configuration, as loaded from JSON or TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ModelSpec {
    /// Gamma jumps `α x^{-1} e^{-ρx}`, optionally plus `cp_lambda · N(cp_mean, cp_sd²)`.
    LevyGamma {
        #[serde(default = "d_alpha")]
        alpha: f64,
        #[serde(default = "d_one")]
        delta: f64,
        #[serde(default)]
        gamma: f64,
        #[serde(default = "d_one")]
        rate: f64,
        #[serde(default)]
        cp_lambda: f64,
        #[serde(default = "d_two")]
        cp_mean: f64,
        #[serde(default = "d_one")]
        cp_sd: f64,
        #[serde(default)]
        grid: GridSpec,
    },
    LevyCpNormal {
        #[serde(default = "d_one")]
        lambda: f64,
        #[serde(default = "d_one")]
        delta: f64,
        #[serde(default)]
        gamma: f64,
        #[serde(default = "d_two")]
        mean: f64,
        #[serde(default = "d_one")]
        sd: f64,
        #[serde(default)]
        grid: GridSpec,
    },
    /// Mollified Poisson process: unit jumps at `at` smoothed to `width`.
    LevyPoisson {
        #[serde(default = "d_one")]
        lambda: f64,
        #[serde(default = "d_one")]
        delta: f64,
        #[serde(default)]
        gamma: f64,
        #[serde(default = "d_one")]
        at: f64,
        #[serde(default = "d_width")]
        width: f64,
        #[serde(default)]
        grid: GridSpec,
    },
    DeconGammaError {
        #[serde(default = "d_alpha")]
        shape: f64,
        #[serde(default = "d_one")]
        rate: f64,
        #[serde(default)]
        nu_mean: f64,
        #[serde(default = "d_one")]
        nu_sd: f64,
        #[serde(default)]
        grid: GridSpec,
    },
    DeconIdentity {
        #[serde(default)]
        nu_mean: f64,
        #[serde(default = "d_one")]
        nu_sd: f64,
        #[serde(default)]
        grid: GridSpec,
    },
    WnMatrix {
        #[serde(default)]
        matrix: Option<Vec<Vec<f64>>>,
        #[serde(default)]
        theta: Option<Vec<f64>>,
        #[serde(default = "d_eps")]
        eps: f64,
    },
    /// Linearized `f' = -f + θ²` at a Gaussian bump `θ = scale · e^{-x²/(2 sd²)}`.
    WnDiffeq {
        #[serde(default = "d_one")]
        theta_scale: f64,
        #[serde(default = "d_one")]
        theta_sd: f64,
        #[serde(default = "d_eps")]
        eps: f64,
        #[serde(default)]
        grid: GridSpec,
    },
}

/// Names of the built-in models.
pub const BUILTIN_MODELS: [&str; 7] = [
    "levy-gamma",
    "levy-cp-normal",
    "levy-poisson",
    "decon-gamma-error",
    "decon-identity",
    "wn-matrix",
    "wn-diffeq",
];

/// A constructed model.
#[derive(Debug, Clone)]
pub enum BuiltModel {
    Levy(LevyTriplet),
    Decon(DeconvPair),
    WhiteNoise(WhiteNoiseOp),
}

impl ModelSpec {
    /// Spec with all defaults for a built-in name.
    pub fn default_for(name: &str) -> Result<Self> {
        serde_json::from_value(serde_json::json!({ "model": name }))
            .map_err(|e| EffError::InvalidInput(format!("unknown model {name:?}: {e}")))
    }

    pub fn name(&self) -> &'static str {
        match self {
            ModelSpec::LevyGamma { .. } => "levy-gamma",
            ModelSpec::LevyCpNormal { .. } => "levy-cp-normal",
            ModelSpec::LevyPoisson { .. } => "levy-poisson",
            ModelSpec::DeconGammaError { .. } => "decon-gamma-error",
            ModelSpec::DeconIdentity { .. } => "decon-identity",
            ModelSpec::WnMatrix { .. } => "wn-matrix",
            ModelSpec::WnDiffeq { .. } => "wn-diffeq",
        }
    }

    /// Default grid `(half span, n)` per model; chosen so the observation law
    /// and, for compound Poisson, the deconvolution series fit on the grid.
    pub fn default_grid(&self) -> (f64, usize) {
        match self {
            ModelSpec::LevyGamma { .. } => (16.0, 1 << 14),
            ModelSpec::LevyCpNormal { .. } => (64.0, 1 << 15),
            ModelSpec::LevyPoisson { .. } => (16.0, 1 << 16),
            ModelSpec::DeconGammaError { .. } | ModelSpec::DeconIdentity { .. } => (32.0, 1 << 15),
            ModelSpec::WnDiffeq { .. } => (16.0, 1 << 12),
            ModelSpec::WnMatrix { .. } => (1.0, 4),
        }
    }

    fn grid_spec(&self) -> GridSpec {
        match self {
            ModelSpec::LevyGamma { grid, .. }
            | ModelSpec::LevyCpNormal { grid, .. }
            | ModelSpec::LevyPoisson { grid, .. }
            | ModelSpec::DeconGammaError { grid, .. }
            | ModelSpec::DeconIdentity { grid, .. }
            | ModelSpec::WnDiffeq { grid, .. } => *grid,
            ModelSpec::WnMatrix { .. } => GridSpec::default(),
        }
    }

    pub fn grid(&self) -> Result<UniformGrid> {
        let (l, n) = self.default_grid();
        let gs = self.grid_spec();
        UniformGrid::symmetric(gs.span.unwrap_or(l), gs.n.unwrap_or(n))
    }

    pub fn build(&self) -> Result<BuiltModel> {
        let grid = self.grid()?;
        Ok(match self {
            ModelSpec::LevyGamma {
                alpha,
                delta,
                gamma,
                rate,
                cp_lambda,
                cp_mean,
                cp_sd,
                ..
            } => {
                let nu = if *cp_lambda > 0.0 {
                    JumpMeasure::gamma_plus_normal(
                        grid, *alpha, *rate, *cp_lambda, *cp_mean, *cp_sd,
                    )?
                } else {
                    JumpMeasure::gamma(grid, *alpha, *rate)?
                };
                BuiltModel::Levy(LevyTriplet::new(*gamma, *delta, nu)?)
            }
            ModelSpec::LevyCpNormal {
                lambda,
                delta,
                gamma,
                mean,
                sd,
                ..
            } => BuiltModel::Levy(LevyTriplet::new(
                *gamma,
                *delta,
                JumpMeasure::normal(grid, *lambda, *mean, *sd)?,
            )?),
            ModelSpec::LevyPoisson {
                lambda,
                delta,
                gamma,
                at,
                width,
                ..
            } => BuiltModel::Levy(LevyTriplet::new(
                *gamma,
                *delta,
                JumpMeasure::spike(grid, *lambda, *at, *width)?,
            )?),
            ModelSpec::DeconGammaError {
                shape,
                rate,
                nu_mean,
                nu_sd,
                ..
            } => BuiltModel::Decon(DeconvPair::gamma_error(
                grid, *nu_mean, *nu_sd, *shape, *rate,
            )?),
            ModelSpec::DeconIdentity { nu_mean, nu_sd, .. } => {
                BuiltModel::Decon(DeconvPair::identity(grid, *nu_mean, *nu_sd)?)
            }
            ModelSpec::WnMatrix { matrix, theta, eps } => {
                let rows = matrix.clone().unwrap_or_else(|| {
                    vec![
                        vec![1.0, 0.0, 0.0],
                        vec![0.0, 0.5, 0.0],
                        vec![0.0, 0.0, 0.25],
                    ]
                });
                let m = rows.len();
                let p = rows.first().map_or(0, |r| r.len());
                if m == 0 || p == 0 || rows.iter().any(|r| r.len() != p) {
                    return Err(EffError::InvalidInput(
                        "matrix must be a non-empty rectangle".into(),
                    ));
                }
                let k = DMatrix::from_fn(m, p, |i, j| rows[i][j]);
                let th = theta.clone().unwrap_or_else(|| vec![1.0; p]);
                BuiltModel::WhiteNoise(WhiteNoiseOp::matrix(k, th, *eps)?)
            }
            ModelSpec::WnDiffeq {
                theta_scale,
                theta_sd,
                eps,
                ..
            } => {
                let th = GridFunction::from_fn(grid, |x| {
                    theta_scale * (-0.5 * (x / theta_sd).powi(2)).exp()
                });
                BuiltModel::WhiteNoise(WhiteNoiseOp::diffeq(th, *eps)?)
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gamma_triplet(alpha: f64) -> LevyTriplet {
        let g = UniformGrid::symmetric(16.0, 1 << 14).unwrap();
        LevyTriplet::new(0.0, 1.0, JumpMeasure::gamma(g, alpha, 1.0).unwrap()).unwrap()
    }

    #[test]
    fn phi_at_zero_is_one() {
        let t = gamma_triplet(0.3);
        let phi = char_function(&t).unwrap();
        assert_eq!(phi.values[phi.zero_index()], C64::new(1.0, 0.0));
    }

    #[test]
    fn phi_hermitian_exactly() {
        let g = UniformGrid::symmetric(16.0, 1 << 12).unwrap();
        let t = LevyTriplet::new(0.5, 1.0, JumpMeasure::normal(g, 1.0, 2.0, 1.0).unwrap()).unwrap();
        let phi = char_function(&t).unwrap();
        let h = phi.zero_index();
        for j in 1..h {
            assert_eq!(phi.values[h + j], phi.values[h - j].conj());
        }
    }

    #[test]
    fn spec_parses_with_defaults_and_rejects_unknown_keys() {
        let s: ModelSpec =
            serde_json::from_str(r#"{"model":"levy-gamma","alpha":0.3,"delta":1.0,"gamma":0.0}"#)
                .unwrap();
        assert_eq!(s.name(), "levy-gamma");
        assert!(serde_json::from_str::<ModelSpec>(r#"{"model":"levy-gamma","bogus":1}"#).is_err());
        for name in BUILTIN_MODELS {
            assert!(ModelSpec::default_for(name).is_ok(), "{name}");
        }
    }

    #[test]
    fn measure_sampler_inverts_linear_cells() {
        let g = UniformGrid::symmetric(8.0, 1024).unwrap();
        let d = GridFunction::from_fn(g, |x| normal_pdf(x, 0.0, 1.0));
        let s = MeasureSampler::new(&MixedMeasure::from_density(d)).unwrap();
        let mut rng = substream(3, 0);
        let n = 200_000;
        let xs: Vec<f64> = (0..n).map(|_| s.draw(&mut rng)).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 4.0 / (n as f64).sqrt());
        assert!((var - 1.0).abs() < 0.02);
    }
}
