//! Efficient influence functions and information bounds `Σ`, the functional
//! classes they apply to, and the closed-form gamma-kernel reference.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{EffError, Result};
use crate::models::{
    gamma_cdf, gamma_pdf, DeconvPair, LevyTriplet, MarginalLaw, WhiteNoiseKind, WhiteNoiseOp,
};
use crate::operators::{
    inv_adjoint, pinv_matrix, DeconMeasure, InvAdjoint, ObsFunction, ScoreOperator, Stabilization,
};
use crate::spectral_core::{
    convolve, fourier_transform, integrate, GridFunction, MixedMeasure, SpectralFunction,
    UniformGrid, C64,
};

/// One coordinate of a linear functional `χ(ν) = ∫ ζ dν`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FunctionalKind {
    /// `1_{(-∞, t]}`.
    IndicatorLeft { t: f64 },
    /// `1_{[t, ∞)}`.
    IndicatorRight { t: f64 },
    /// Sampled `ζ`, optionally with a declared Sobolev index.
    Grid {
        zeta: GridFunction,
        #[serde(default)]
        smoothness: Option<f64>,
    },
}

impl FunctionalKind {
    /// Generalized distribution function at `t`: left tail for `t < 0`,
    /// right tail for `t > 0`.
    pub fn generalized_cdf(t: f64) -> Result<Self> {
        if !t.is_finite() || t == 0.0 {
            return Err(EffError::InvalidInput(format!(
                "t = {t}: the generalized distribution function needs t != 0"
            )));
        }
        Ok(if t < 0.0 {
            Self::IndicatorLeft { t }
        } else {
            Self::IndicatorRight { t }
        })
    }

    pub fn is_indicator(&self) -> bool {
        !matches!(self, Self::Grid { .. })
    }

    pub fn threshold(&self) -> Option<f64> {
        match self {
            Self::IndicatorLeft { t } | Self::IndicatorRight { t } => Some(*t),
            Self::Grid { .. } => None,
        }
    }

    pub fn validate(&self, grid: &UniformGrid) -> Result<()> {
        match self {
            Self::IndicatorLeft { t } | Self::IndicatorRight { t } => {
                if !t.is_finite() || *t == 0.0 {
                    return Err(EffError::InvalidInput(format!(
                        "indicator threshold t = {t} must be finite and nonzero"
                    )));
                }
                if !grid.contains(*t) {
                    return Err(EffError::OutsideGrid {
                        x: *t,
                        lo: grid.x0,
                        hi: grid.x_max(),
                    });
                }
                Ok(())
            }
            Self::Grid { zeta, .. } => grid.require_compatible(&zeta.grid, "functional"),
        }
    }

    /// Whether `ζ` is nonzero at the origin.
    pub fn contains_origin(&self) -> bool {
        match self {
            Self::IndicatorLeft { t } => *t > 0.0,
            Self::IndicatorRight { t } => *t < 0.0,
            Self::Grid { zeta, .. } => {
                zeta.interp_or_zero(0.0).abs() > 1e-12 * zeta.sup_norm().max(1e-300)
            }
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        match self {
            Self::IndicatorLeft { t } => f64::from(u8::from(x <= *t)),
            Self::IndicatorRight { t } => f64::from(u8::from(x >= *t)),
            Self::Grid { zeta, .. } => zeta.interp_or_zero(x),
        }
    }

    /// Jump node and one-sided limits of `ζ(· - a)` when the step falls on a node.
    fn jump_at(&self, grid: &UniformGrid, a: f64) -> Option<(usize, f64, f64)> {
        match self {
            Self::IndicatorLeft { t } => grid.node_index(t + a).map(|k| (k, 1.0, 0.0)),
            Self::IndicatorRight { t } => grid.node_index(t + a).map(|k| (k, 0.0, 1.0)),
            Self::Grid { .. } => None,
        }
    }

    /// Node values with the midpoint value at an on-node step, which makes
    /// the trapezoid rule exact for the step.
    pub fn on_grid(&self, grid: &UniformGrid) -> GridFunction {
        let mut g = GridFunction::from_fn(*grid, |x| self.eval(x));
        if let Some((k, l, r)) = self.jump_at(grid, 0.0) {
            g.values[k] = 0.5 * (l + r);
        }
        g
    }

    /// `y ↦ ζ(y - a)` as a function on the observation space of `p`.
    pub fn shifted_obs(&self, grid: &UniformGrid, a: f64, p: &MixedMeasure) -> Result<ObsFunction> {
        let mut values = GridFunction::from_fn(*grid, |y| self.eval(y - a));
        let jumps: Vec<_> = self.jump_at(grid, a).into_iter().collect();
        for &(k, l, r) in &jumps {
            values.values[k] = 0.5 * (l + r);
        }
        let atoms = p
            .atoms
            .iter()
            .map(|&(x, _)| (x, self.eval(x - a)))
            .collect();
        Ok(ObsFunction {
            values,
            atoms,
            jumps,
        })
    }

    /// `(d * ζ)(x) = ∫ ζ(x - y) d(y) dy`; indicators use the cumulative
    /// integral of `d`.
    pub fn convolve_with(&self, d: &GridFunction) -> Result<GridFunction> {
        let grid = d.grid;
        match self {
            Self::Grid { zeta, .. } => convolve(d, zeta),
            Self::IndicatorLeft { t } | Self::IndicatorRight { t } => {
                let mut cum = vec![0.0; grid.n];
                for j in 1..grid.n {
                    cum[j] = cum[j - 1] + 0.5 * grid.dx * (d.values[j - 1] + d.values[j]);
                }
                let total = cum[grid.n - 1];
                let cdf = GridFunction { grid, values: cum };
                let c_at = |s: f64| {
                    if s < grid.x0 {
                        0.0
                    } else if s > grid.x_max() {
                        total
                    } else {
                        cdf.interp_or_zero(s)
                    }
                };
                let left = matches!(self, Self::IndicatorLeft { .. });
                Ok(GridFunction::from_fn(grid, |x| {
                    if left {
                        total - c_at(x - t)
                    } else {
                        c_at(x - t)
                    }
                }))
            }
        }
    }

    /// `F ζ` on the dual grid. Indicators are truncated at a margin of
    /// `L/16` inside the grid edge and transformed analytically.
    pub fn transform(&self, grid: &UniformGrid) -> Result<SpectralFunction> {
        let margin = grid.n as f64 * grid.dx / 32.0;
        let (a, b) = match self {
            Self::Grid { zeta, .. } => return fourier_transform(zeta),
            Self::IndicatorLeft { t } => (grid.x0 + margin, *t),
            Self::IndicatorRight { t } => (*t, grid.x_max() - margin),
        };
        if a >= b {
            return Err(EffError::InvalidInput(
                "indicator threshold too close to the grid edge".into(),
            ));
        }
        Ok(SpectralFunction::from_fn(grid, |u| {
            if u == 0.0 {
                C64::new(b - a, 0.0)
            } else {
                (C64::from_polar(1.0, u * b) - C64::from_polar(1.0, u * a)) / C64::new(0.0, u)
            }
        }))
    }

    /// `∫ ζ dm`.
    pub fn integral(&self, m: &MixedMeasure) -> Result<f64> {
        let mut s = m.atoms.iter().map(|&(a, w)| self.eval(a) * w).sum::<f64>();
        if let Some(d) = &m.density {
            s += integrate(
                &self.on_grid(&d.grid),
                &MixedMeasure::from_density(d.clone()),
            )?;
        }
        Ok(s)
    }
}

/// Vector functional `(ζ^{(1)}, …, ζ^{(d)})`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Functional {
    pub components: Vec<FunctionalKind>,
    /// Optional split `ζ = ζ^s + ζ^c` per component.
    #[serde(default)]
    pub decomposition: Option<Vec<(GridFunction, GridFunction)>>,
}

impl Functional {
    pub fn new(components: Vec<FunctionalKind>) -> Result<Self> {
        if components.is_empty() {
            return Err(EffError::InvalidInput(
                "functional needs at least one component".into(),
            ));
        }
        Ok(Self {
            components,
            decomposition: None,
        })
    }

    /// Generalized distribution function at each `t`.
    pub fn generalized_cdf(ts: &[f64]) -> Result<Self> {
        Self::new(
            ts.iter()
                .map(|&t| FunctionalKind::generalized_cdf(t))
                .collect::<Result<_>>()?,
        )
    }

    pub fn dim(&self) -> usize {
        self.components.len()
    }

    /// Attach the split of every indicator component.
    pub fn with_decomposition(mut self, grid: &UniformGrid) -> Result<Self> {
        let parts = self
            .components
            .iter()
            .map(|c| match c {
                FunctionalKind::IndicatorLeft { t } | FunctionalKind::IndicatorRight { t } => {
                    decompose_indicator(*t, grid)
                }
                FunctionalKind::Grid { .. } => Err(EffError::Unsupported(
                    "split of a sampled functional".into(),
                )),
            })
            .collect::<Result<Vec<_>>>()?;
        self.decomposition = Some(parts);
        Ok(self)
    }
}

/// `ζ^s_t(x) = e^{t-x} 1_{[t,∞)}`, `ζ^c_t = (1 - e^{t-x}) 1_{[t,∞)}` for
/// `t > 0`, mirrored for `t < 0`.
pub fn decompose_indicator(t: f64, grid: &UniformGrid) -> Result<(GridFunction, GridFunction)> {
    if !t.is_finite() || t == 0.0 {
        return Err(EffError::InvalidInput("decomposition needs t != 0".into()));
    }
    let s = GridFunction::from_fn(*grid, |x| {
        if t > 0.0 && x >= t {
            (t - x).exp()
        } else if t < 0.0 && x <= t {
            (x - t).exp()
        } else {
            0.0
        }
    });
    let c = GridFunction::from_fn(*grid, |x| {
        if t > 0.0 && x >= t {
            1.0 - (t - x).exp()
        } else if t < 0.0 && x <= t {
            1.0 - (x - t).exp()
        } else {
            0.0
        }
    });
    Ok((s, c))
}

/// Extra output of the known-intensity compound Poisson bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnownLambda {
    pub sigma_unknown: Vec<Vec<f64>>,
    /// `Δ^{-2} (∫ζ_i dν)(∫ζ_j dν)`.
    pub gap: Vec<Vec<f64>>,
    /// `Σ - c cᵀ/‖ψ_λ‖²` with `c_i = ⟨ψ_i, ψ_λ⟩`: the variance of the
    /// influence functions after projecting out the intensity direction
    /// `ψ_λ = (A*)^{-1} 1`, which is the bound over scores with `∫ b dν = 0`.
    pub projection_bound: Vec<Vec<f64>>,
    /// `‖ψ_λ‖²_{L²(P)} = Δ^{-2}(e^{Δλ} - 1)`, the bound for the intensity itself.
    pub intensity_variance: f64,
}

/// `ψ_λ = (A*)^{-1} 1_{ℝ∖{0}}` for a compound Poisson model: `Δ^{-1}` off the
/// atom of `P` and `Δ^{-1}(1 - e^{Δλ})` on it.
fn intensity_influence(t: &LevyTriplet, p: &MixedMeasure) -> Result<ObsFunction> {
    let lambda =
        t.nu.lambda()
            .ok_or_else(|| EffError::Unsupported("known intensity needs finite activity".into()))?;
    let d = t.delta;
    let values = GridFunction::from_fn(t.grid(), |_| 1.0 / d);
    let atoms = p
        .atoms
        .iter()
        .map(|&(x, _)| (x, (1.0 - (d * lambda).exp()) / d))
        .collect();
    Ok(ObsFunction {
        values,
        atoms,
        jumps: vec![],
    })
}

/// Numerical diagnostics attached to a bound.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Diagnostics {
    pub method: Vec<String>,
    pub beta_hat: Option<f64>,
    pub c_lower: Option<f64>,
    pub stabilization: Vec<Option<Stabilization>>,
    pub masked_mass: f64,
    /// `∫ ζ^{(j)} dν`.
    pub functional_values: Vec<f64>,
    /// `∫ ψ^{(j)} dP`.
    pub influence_means: Vec<f64>,
    pub min_eigenvalue: f64,
    pub law: Option<MarginalLaw>,
    pub decon_series_k: Option<usize>,
    pub decon_series_error: Option<f64>,
    pub known_lambda: Option<KnownLambda>,
    /// `Var_ν(ζ)` per coordinate (deconvolution).
    pub direct_variance: Option<Vec<f64>>,
    pub oracle: Option<serde_json::Value>,
    pub monte_carlo: Option<serde_json::Value>,
}

/// Information bound and efficient influence functions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub sigma: Vec<Vec<f64>>,
    pub influence: Vec<GridFunction>,
    pub diagnostics: Diagnostics,
}

fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

/// Symmetrize and check positive semidefiniteness; returns the smallest eigenvalue.
fn psd_check(m: &mut DMatrix<f64>) -> Result<f64> {
    let t = m.transpose();
    *m = (&*m + t) * 0.5;
    if m.iter().any(|v| !v.is_finite()) {
        return Err(EffError::NonFinite("information matrix".into()));
    }
    let eig = m.clone().symmetric_eigen();
    let min = eig
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    let scale = m.iter().fold(1.0f64, |a, v| a.max(v.abs()));
    if min < -1e-10 * scale {
        return Err(EffError::GridTooCoarse(format!(
            "information matrix not PSD (eigenvalue {min:e})"
        )));
    }
    Ok(min)
}

/// Gram matrix `∫ψ_iψ_j dP`, Richardson-extrapolated along mollifier ladders.
fn gram(invs: &[InvAdjoint], p: &MixedMeasure) -> Result<DMatrix<f64>> {
    let d = invs.len();
    let pairs: Vec<(usize, usize)> = (0..d).flat_map(|i| (i..d).map(move |j| (i, j))).collect();
    let vals: Vec<f64> = pairs
        .par_iter()
        .map(|&(i, j)| {
            let (a, b) = (&invs[i], &invs[j]);
            if a.ladder.is_empty() || b.ladder.is_empty() {
                return a.psi.inner(&b.psi, p);
            }
            let levels: Vec<f64> = a
                .ladder
                .iter()
                .zip(&b.ladder)
                .map(|(x, y)| x.inner(y, p))
                .collect::<Result<_>>()?;
            let rate = [&a.stabilization, &b.stabilization]
                .iter()
                .filter_map(|s| s.as_ref().and_then(|s| s.richardson_rate))
                .fold(None, |m: Option<f64>, r| Some(m.map_or(r, |m| m.max(r))));
            let n = levels.len();
            let last = levels[n - 1];
            Ok(match rate {
                Some(r) if n >= 2 => last + (last - levels[n - 2]) * r / (1.0 - r),
                _ => last,
            })
        })
        .collect::<Result<_>>()?;
    let mut m = DMatrix::zeros(d, d);
    for (&(i, j), v) in pairs.iter().zip(vals) {
        m[(i, j)] = v;
        m[(j, i)] = v;
    }
    Ok(m)
}

fn inverse_all(a: &ScoreOperator, zeta: &Functional) -> Result<Vec<InvAdjoint>> {
    zeta.components
        .par_iter()
        .map(|c| inv_adjoint(a, c))
        .collect()
}

/// Bound for a Lévy model; with `known_lambda` (finite activity only) the
/// intensity is treated as known.
pub fn bound_levy(t: &LevyTriplet, zeta: &Functional, known_lambda: bool) -> Result<BoundReport> {
    if known_lambda && !t.nu.is_finite_activity() {
        return Err(EffError::Unsupported(
            "known intensity needs finite activity".into(),
        ));
    }
    let a = ScoreOperator::levy(t)?;
    let l = match &a {
        ScoreOperator::Levy(l) => l,
        _ => unreachable!(),
    };
    let p = l.law.measure.clone();
    let invs = inverse_all(&a, zeta)?;
    let mut sigma = gram(&invs, &p)?;
    let nu = t.nu.as_measure();
    let values: Vec<f64> = zeta
        .components
        .iter()
        .map(|c| c.integral(&nu))
        .collect::<Result<_>>()?;
    let means: Vec<f64> = invs.iter().map(|i| i.psi.mean(&p)).collect::<Result<_>>()?;
    let mut diag = Diagnostics {
        method: invs.iter().map(|i| format!("{:?}", i.method)).collect(),
        beta_hat: Some(l.fourier_check.beta_hat),
        c_lower: Some(l.fourier_check.c_lower),
        stabilization: invs.iter().map(|i| i.stabilization.clone()).collect(),
        functional_values: values.clone(),
        influence_means: means,
        law: Some(l.law.clone()),
        ..Default::default()
    };
    if t.nu.is_finite_activity() {
        let dm = DeconMeasure::new(t)?;
        diag.decon_series_k = Some(dm.truncation_k);
        diag.decon_series_error = Some(dm.inverse_error);
    }
    if known_lambda {
        let m = DVector::from_vec(values.clone());
        let gap = &m * m.transpose() / (t.delta * t.delta);
        let psi1 = intensity_influence(t, &p)?;
        let info = psi1.inner(&psi1, &p)?;
        let cross = DVector::from_vec(
            invs.iter()
                .map(|i| i.psi.inner(&psi1, &p))
                .collect::<Result<Vec<_>>>()?,
        );
        let proj = &sigma - &cross * cross.transpose() / info;
        let unknown = sigma.clone();
        sigma -= &gap;
        diag.known_lambda = Some(KnownLambda {
            sigma_unknown: to_rows(&unknown),
            gap: to_rows(&gap),
            projection_bound: to_rows(&proj),
            intensity_variance: info,
        });
    }
    diag.min_eigenvalue = psd_check(&mut sigma)?;
    Ok(BoundReport {
        sigma: to_rows(&sigma),
        influence: invs.into_iter().map(|i| i.psi.values).collect(),
        diagnostics: diag,
    })
}

/// Bound for a deconvolution model: `Σ_{jk} = ∫ψ_jψ_k dP - (∫ζ_j dν)(∫ζ_k dν)`.
pub fn bound_decon(pair: &DeconvPair, zeta: &Functional) -> Result<BoundReport> {
    let a = ScoreOperator::decon(pair)?;
    let s = match &a {
        ScoreOperator::Decon(s) => s,
        _ => unreachable!(),
    };
    let p = s.p.clone();
    let invs = inverse_all(&a, zeta)?;
    let g = gram(&invs, &p)?;
    let values: Vec<f64> = zeta
        .components
        .iter()
        .map(|c| c.integral(&pair.nu))
        .collect::<Result<_>>()?;
    let m = DVector::from_vec(values.clone());
    let mut sigma = g - &m * m.transpose();
    let direct: Vec<f64> = zeta
        .components
        .iter()
        .zip(&values)
        .map(|(c, v)| {
            let grid = pair.grid();
            let o = c.shifted_obs(&grid, 0.0, &pair.nu)?;
            Ok(o.inner(&o, &pair.nu)? - v * v)
        })
        .collect::<Result<_>>()?;
    let diag = Diagnostics {
        method: invs.iter().map(|i| format!("{:?}", i.method)).collect(),
        beta_hat: Some(s.beta_hat),
        stabilization: invs.iter().map(|i| i.stabilization.clone()).collect(),
        functional_values: values,
        influence_means: invs.iter().map(|i| i.psi.mean(&p)).collect::<Result<_>>()?,
        direct_variance: Some(direct),
        min_eigenvalue: psd_check(&mut sigma)?,
        ..Default::default()
    };
    Ok(BoundReport {
        sigma: to_rows(&sigma),
        influence: invs.into_iter().map(|i| i.psi.values).collect(),
        diagnostics: diag,
    })
}

/// Functional for a white-noise model: vectors for the matrix kind, sampled
/// functions for the operator kinds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum WnFunctional {
    Vectors(Vec<Vec<f64>>),
    Functions(Functional),
}

/// White-noise bound `‖(K*)^† ζ‖²` (Gram matrix for vector functionals).
pub fn bound_white_noise(op: &WhiteNoiseOp, zeta: &WnFunctional) -> Result<BoundReport> {
    match (&op.kind, zeta) {
        (WhiteNoiseKind::Matrix { k }, WnFunctional::Vectors(zs)) => {
            let psis: Vec<DVector<f64>> = zs
                .iter()
                .map(|z| pinv_matrix(k, &DVector::from_vec(z.clone())).map(|r| r.0))
                .collect::<Result<_>>()?;
            let d = psis.len();
            let mut sigma = DMatrix::from_fn(d, d, |i, j| psis[i].dot(&psis[j]));
            let min = psd_check(&mut sigma)?;
            let g = UniformGrid::new(0.0, 1.0, k.nrows().next_power_of_two().max(4))?;
            let influence = psis
                .iter()
                .map(|p| GridFunction::from_fn(g, |x| p.get(x as usize).copied().unwrap_or(0.0)))
                .collect();
            Ok(BoundReport {
                sigma: to_rows(&sigma),
                influence,
                diagnostics: Diagnostics {
                    method: vec!["moore_penrose".into(); d],
                    min_eigenvalue: min,
                    ..Default::default()
                },
            })
        }
        (WhiteNoiseKind::DiffeqNonlinear { theta }, WnFunctional::Functions(f)) => {
            let a = ScoreOperator::diffeq(theta)?;
            let invs = inverse_all(&a, f)?;
            let leb = MixedMeasure::from_density(GridFunction::from_fn(theta.grid, |_| 1.0));
            let mut sigma = gram(&invs, &leb)?;
            let min = psd_check(&mut sigma)?;
            Ok(BoundReport {
                sigma: to_rows(&sigma),
                influence: invs.iter().map(|i| i.psi.values.clone()).collect(),
                diagnostics: Diagnostics {
                    method: invs.iter().map(|i| format!("{:?}", i.method)).collect(),
                    stabilization: invs.iter().map(|i| i.stabilization.clone()).collect(),
                    min_eigenvalue: min,
                    ..Default::default()
                },
            })
        }
        _ => Err(EffError::InvalidInput(
            "functional does not match the white-noise operator kind".into(),
        )),
    }
}

/// Closed-form influence function for gamma-type deconvolution kernels.
///
/// With `1/φ(-u) = (1 + iu/ρ)^a`, `0 < a < 1`, and `g` the gamma density of
/// shape `1 - a` and rate `ρ`,
/// `ψ = Δ^{-1} g(-·) * (ζ - ζ'/ρ)`, which for indicators reads
/// `Δ^{-1}[(1 - G(t-x)) - g(t-x)/ρ]` (right tail) or
/// `Δ^{-1}[G(t-x) + g(t-x)/ρ]` (left tail).
pub fn gamma_kernel_psi(
    a: f64,
    rate: f64,
    delta: f64,
    zeta: &FunctionalKind,
    x: f64,
) -> Result<f64> {
    if !(a > 0.0 && a < 1.0) {
        return Err(EffError::InvalidInput(
            "gamma kernel needs 0 < a < 1".into(),
        ));
    }
    let s = 1.0 - a;
    Ok(match zeta {
        FunctionalKind::IndicatorRight { t } => {
            ((1.0 - gamma_cdf(t - x, s, rate)) - gamma_pdf(t - x, s, rate) / rate) / delta
        }
        FunctionalKind::IndicatorLeft { t } => {
            (gamma_cdf(t - x, s, rate) + gamma_pdf(t - x, s, rate) / rate) / delta
        }
        FunctionalKind::Grid { .. } => {
            return Err(EffError::Unsupported(
                "closed form for sampled functionals".into(),
            ))
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decomposition_sums_to_indicator() {
        let g = UniformGrid::symmetric(8.0, 1024).unwrap();
        for t in [1.0, -1.0] {
            let (s, c) = decompose_indicator(t, &g).unwrap();
            let k = g.node_index(t).unwrap();
            assert_eq!(s.values[k], 1.0);
            assert_eq!(c.values[k], 0.0);
            let f = FunctionalKind::generalized_cdf(t).unwrap();
            for j in 0..g.n {
                assert!((s.values[j] + c.values[j] - f.eval(g.x(j))).abs() < 1e-10);
            }
            let slope = c
                .values
                .windows(2)
                .map(|w| (w[1] - w[0]).abs() / g.dx)
                .fold(0.0, f64::max);
            assert!(slope <= 1.0 + g.dx);
        }
        assert!(decompose_indicator(0.0, &g).is_err());
    }

    #[test]
    fn indicator_transform_at_zero_is_length() {
        let g = UniformGrid::symmetric(16.0, 1024).unwrap();
        let f = FunctionalKind::IndicatorRight { t: 1.0 };
        let s = f.transform(&g).unwrap();
        let b = g.x_max() - 1.0;
        assert!((s.values[s.zero_index()].re - (b - 1.0)).abs() < 1e-12);
    }
}
