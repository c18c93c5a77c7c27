//! Independent checks of the bounds: Cramér–Rao suprema over finite
//! submodels, perturbation paths, the Gaussian-shift likelihood ratio and a
//! chi-square divergence diagnostic.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::FunctionalKind;
use crate::error::{EffError, Result};
use crate::models::{
    marginal_law, DeconvPair, JumpMeasure, LevyTriplet, WhiteNoiseKind, WhiteNoiseOp,
};
use crate::operators::{ObsFunction, ScoreOperator, DENSITY_FLOOR};
use crate::simulate::substream;
use crate::spectral_core::{kahan_sum, GridFunction, MixedMeasure, UniformGrid};

/// Directions `b_1, …, b_m` spanning a finite-dimensional submodel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubmodelBasis {
    pub directions: Vec<GridFunction>,
}

/// Step `1_{[lo, hi)}` with midpoint values at on-node edges.
fn cell(grid: &UniformGrid, lo: f64, hi: f64) -> GridFunction {
    let mut g = GridFunction::from_fn(*grid, |x| f64::from(u8::from(x >= lo && x < hi)));
    for e in [lo, hi] {
        if e.is_finite() {
            if let Some(k) = grid.node_index(e) {
                g.values[k] = 0.5;
            }
        }
    }
    g
}

impl SubmodelBasis {
    pub fn new(directions: Vec<GridFunction>) -> Result<Self> {
        if directions.is_empty() {
            return Err(EffError::InvalidInput("empty submodel basis".into()));
        }
        Ok(Self { directions })
    }

    /// Piecewise-linear cells: `dim/2` cells on `[center - half, center + half]`,
    /// the outer two extended to infinity, each contributing `1_C` and
    /// `(x - c) 1_C`. Bases for dyadic `dim` are nested.
    pub fn piecewise_linear(
        grid: &UniformGrid,
        center: f64,
        half: f64,
        dim: usize,
    ) -> Result<Self> {
        if dim < 4 || !dim.is_multiple_of(2) {
            return Err(EffError::InvalidInput(format!(
                "basis dimension {dim} must be even and >= 4"
            )));
        }
        let m = dim / 2;
        let h = 2.0 * half / m as f64;
        let edge = |i: usize| center - half + i as f64 * h;
        let mut dirs = Vec::with_capacity(dim);
        for i in 0..m {
            let lo = if i == 0 { f64::NEG_INFINITY } else { edge(i) };
            let hi = if i == m - 1 {
                f64::INFINITY
            } else {
                edge(i + 1)
            };
            let c = 0.5 * (edge(i) + edge(i + 1));
            let ind = cell(grid, lo, hi);
            let lin = ind.map(|x, v| v * (x - c));
            dirs.push(ind);
            dirs.push(lin);
        }
        Self::new(dirs)
    }

    /// Mollified indicator bumps on a dyadic partition of `[lo, hi]` plus
    /// `x^k`-times-bump directions for `k = 1..=degree`.
    pub fn bumps(
        grid: &UniformGrid,
        lo: f64,
        hi: f64,
        count: usize,
        degree: usize,
    ) -> Result<Self> {
        if count == 0 || !(hi > lo) {
            return Err(EffError::InvalidInput(
                "bump basis needs count > 0 and hi > lo".into(),
            ));
        }
        let w = (hi - lo) / count as f64;
        let mut dirs = Vec::new();
        for i in 0..count {
            let c = lo + (i as f64 + 0.5) * w;
            let b = GridFunction::from_fn(*grid, |x| crate::models::bump((x - c) / w));
            for k in 0..=degree {
                dirs.push(b.map(|x, v| v * ((x - c) / w).powi(k as i32)));
            }
        }
        Self::new(dirs)
    }

    /// Subtract the `m`-mean of each direction (`m` a probability or finite measure).
    pub fn centered(&self, m: &MixedMeasure) -> Result<Self> {
        let mass = m.total_mass;
        let dirs = self
            .directions
            .iter()
            .map(|b| {
                let mean = crate::spectral_core::integrate(b, m)? / mass;
                Ok(b.map(|_, v| v - mean))
            })
            .collect::<Result<_>>()?;
        Self::new(dirs)
    }

    pub fn dim(&self) -> usize {
        self.directions.len()
    }
}

/// Density of `ν_t` relative to `ν`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PathKind {
    /// `k(t b)`, `k(y) = 2/(1 + e^{-2y})`.
    MultiplicativeK,
    /// `1 + t b`.
    Linear,
}

/// Perturbation path `t ↦ ν_t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathSpec {
    pub b: GridFunction,
    pub t: f64,
    pub kind: PathKind,
}

/// `k(y) = 2/(1 + e^{-2y})`: positive, `k(0) = 1`, `k'(0) = 1`, bounded by 2.
pub fn path_k(y: f64) -> f64 {
    2.0 / (1.0 + (-2.0 * y).exp())
}

impl PathSpec {
    pub fn weight(&self, y: f64) -> f64 {
        match self.kind {
            PathKind::MultiplicativeK => path_k(self.t * y),
            PathKind::Linear => 1.0 + self.t * y,
        }
    }

    /// `dν_t/dν` on the grid.
    pub fn density_ratio(&self) -> Result<GridFunction> {
        let w = self.b.map(|_, v| self.weight(v));
        if w.values.iter().any(|v| !(*v > 0.0)) {
            return Err(EffError::InvalidInput(
                "perturbed density is not positive".into(),
            ));
        }
        Ok(w)
    }
}

/// Lévy path: `ν_t = (dν_t/dν) ν`, not renormalized.
pub fn perturb_levy(t: &LevyTriplet, p: &PathSpec) -> Result<LevyTriplet> {
    if p.t == 0.0 {
        return Ok(t.clone());
    }
    let w = p.density_ratio()?;
    let b0 = p.b.interp_or_zero(0.0);
    let w0 = p.weight(b0);
    let nu: JumpMeasure = t.nu.reweighted(&w, (w0, w0))?;
    LevyTriplet::new(t.gamma, t.delta, nu)
}

/// Deconvolution path: `ν_t = k(tb) ν / ∫ k(tb) dν`.
pub fn perturb_decon(d: &DeconvPair, p: &PathSpec) -> Result<DeconvPair> {
    if p.t == 0.0 {
        return Ok(d.clone());
    }
    let w = p.density_ratio()?;
    let nd = d.nu.density.as_ref().expect("checked at construction");
    let dens = nd.mul(&w)?;
    let atoms: Vec<(f64, f64)> =
        d.nu.atoms
            .iter()
            .map(|&(a, m)| (a, m * p.weight(p.b.interp_or_zero(a))))
            .collect();
    let raw = MixedMeasure::new(atoms, Some(dens))?;
    let nu = raw.scale(1.0 / raw.total_mass);
    DeconvPair::new(
        nu,
        d.mu.clone(),
        crate::models::SignalFamily::Gridded,
        d.mu_family.clone(),
    )
}

/// Outcome of a Cramér–Rao supremum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CramerRao {
    pub value: f64,
    pub rank: usize,
    /// Directions whose singular values fell below the relative cutoff.
    pub near_null: usize,
    pub masked_mass: f64,
}

/// `sup_{b ∈ span} ⟨ζ, b⟩²_ν / ‖A b‖²_P = m^T G^† m`, with
/// `G_ij = ⟨A b_i, A b_j⟩_P`, `m_i = ⟨ζ, b_i⟩_ν`.
pub fn cramer_rao_sup(
    a: &ScoreOperator,
    zeta: &FunctionalKind,
    basis: &SubmodelBasis,
) -> Result<CramerRao> {
    let p = a.observation_law();
    let nu = a.direction_measure();
    let grid = a.grid();
    let z = zeta.on_grid(&grid);
    let outs: Vec<(ObsFunction, f64)> = basis
        .directions
        .par_iter()
        .map(|b| a.score(b).map(|s| (s.score, s.masked_mass)))
        .collect::<Result<_>>()?;
    let masked_mass = outs.iter().map(|o| o.1).fold(0.0, f64::max);
    let d = outs.len();
    let pairs: Vec<(usize, usize)> = (0..d).flat_map(|i| (i..d).map(move |j| (i, j))).collect();
    let vals: Vec<f64> = pairs
        .par_iter()
        .map(|&(i, j)| outs[i].0.inner(&outs[j].0, &p))
        .collect::<Result<_>>()?;
    let mut g = DMatrix::zeros(d, d);
    for (&(i, j), v) in pairs.iter().zip(vals) {
        g[(i, j)] = v;
        g[(j, i)] = v;
    }
    let m = DVector::from_iterator(
        d,
        basis
            .directions
            .iter()
            .map(|b| crate::spectral_core::integrate(&z.mul(b)?, &nu))
            .collect::<Result<Vec<_>>>()?,
    );
    let svd = g.svd(true, true);
    let smax = svd.singular_values.iter().copied().fold(0.0, f64::max);
    if !(smax > 0.0) {
        return Err(EffError::InvalidInput(
            "all directions are null under the score operator".into(),
        ));
    }
    let u = svd.u.as_ref().expect("requested");
    let mut value = 0.0;
    let mut rank = 0;
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if s > 1e-10 * smax {
            let c = u.column(i).dot(&m);
            value += c * c / s;
            rank += 1;
        }
    }
    Ok(CramerRao {
        value,
        rank,
        near_null: d - rank,
        masked_mass,
    })
}

/// Cramér–Rao values along a ladder of nested bases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub dims: Vec<usize>,
    pub values: Vec<f64>,
    pub sigma_ref: f64,
    /// Largest decrease between consecutive values (0 when nondecreasing).
    pub max_decrease: f64,
    pub final_ratio: f64,
}

/// Run `cramer_rao_sup` on the bases `build(dim)` for each `dim`.
pub fn cr_ladder(
    a: &ScoreOperator,
    zeta: &FunctionalKind,
    dims: &[usize],
    sigma_ref: f64,
    build: impl Fn(usize) -> Result<SubmodelBasis>,
) -> Result<OracleReport> {
    if dims.is_empty() {
        return Err(EffError::InvalidInput("empty dimension ladder".into()));
    }
    let mut values = Vec::with_capacity(dims.len());
    for &dim in dims {
        values.push(cramer_rao_sup(a, zeta, &build(dim)?)?.value);
    }
    let max_decrease = values
        .windows(2)
        .map(|w| (w[0] - w[1]).max(0.0))
        .fold(0.0, f64::max);
    let final_ratio = values.last().copied().unwrap_or(0.0) / sigma_ref;
    Ok(OracleReport {
        dims: dims.to_vec(),
        values,
        sigma_ref,
        max_decrease,
        final_ratio,
    })
}

/// Comparison of the two log-likelihood-ratio computations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LanReport {
    pub reps: usize,
    pub max_discrepancy: f64,
    pub mean: f64,
    pub variance: f64,
    pub expected_mean: f64,
    pub expected_variance: f64,
    pub standard_error: f64,
}

/// Gaussian-shift check for `y = Kθ + εW` and the local alternative `θ + εb`.
pub fn lan_check_white_noise(
    op: &WhiteNoiseOp,
    b: &[f64],
    reps: usize,
    seed: u64,
) -> Result<LanReport> {
    let k = match &op.kind {
        WhiteNoiseKind::Matrix { k } => k,
        _ => {
            return Err(EffError::Unsupported(
                "LAN check needs the matrix kind".into(),
            ))
        }
    };
    if b.len() != k.ncols() || reps < 2 {
        return Err(EffError::InvalidInput(
            "direction length must match K; reps >= 2".into(),
        ));
    }
    let theta = DVector::from_vec(op.theta.clone().unwrap_or_else(|| vec![0.0; k.ncols()]));
    let bv = DVector::from_vec(b.to_vec());
    let eps = op.eps;
    let kt = k * &theta;
    let kb = k * &bv;
    let kt_alt = k * (&theta + &bv * eps);
    let kb2 = kb.norm_squared();
    let res: Vec<(f64, f64)> = (0..reps)
        .into_par_iter()
        .map(|r| {
            let mut rng = substream(seed, r as u64);
            let w = DVector::from_iterator(
                k.nrows(),
                (0..k.nrows()).map(|_| StandardNormal.sample(&mut rng)),
            );
            let y = &kt + &w * eps;
            let a = w.dot(&kb) - 0.5 * kb2;
            let direct =
                ((&y - &kt).norm_squared() - (&y - &kt_alt).norm_squared()) / (2.0 * eps * eps);
            (a, (a - direct).abs())
        })
        .collect();
    let n = reps as f64;
    let mean = kahan_sum(res.iter().map(|r| r.0)) / n;
    let variance = kahan_sum(res.iter().map(|r| (r.0 - mean).powi(2))) / (n - 1.0);
    Ok(LanReport {
        reps,
        max_discrepancy: res.iter().map(|r| r.1).fold(0.0, f64::max),
        mean,
        variance,
        expected_mean: -0.5 * kb2,
        expected_variance: kb2,
        standard_error: (kb2 / n).sqrt(),
    })
}

/// Chi-square divergence along a path against the exponential bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Chi2Report {
    /// `∫ (dP_t/dP)² dP`.
    pub lhs: f64,
    /// `exp(t²‖b‖²_ν / 2)`.
    pub rhs: f64,
    /// `exp(t²‖b‖²_ν)`.
    pub rhs_constant_one: f64,
}

/// Chi-square diagnostic for a finite-activity Lévy model. Both bounds are
/// reported; neither is asserted.
pub fn chi2_diagnostic(t: &LevyTriplet, p: &PathSpec) -> Result<Chi2Report> {
    if !t.nu.is_finite_activity() {
        return Err(EffError::Unsupported(
            "chi-square diagnostic needs finite activity".into(),
        ));
    }
    let base = marginal_law(t)?.measure;
    let pert = marginal_law(&perturb_levy(t, p)?)?.measure;
    let mut lhs = 0.0;
    for (&(a, m), &(a2, m2)) in base.atoms.iter().zip(&pert.atoms) {
        if (a - a2).abs() > 1e-12 {
            return Err(EffError::InvalidInput("atoms moved along the path".into()));
        }
        lhs += m2 * m2 / m;
    }
    let (pd, qd) = (
        base.density.as_ref().expect("density"),
        pert.density.as_ref().expect("density"),
    );
    let g = pd.grid;
    let mut orphan = 0.0;
    let mut terms = Vec::with_capacity(g.n);
    for j in 0..g.n {
        let (pv, qv) = (pd.values[j], qd.values[j]);
        if pv > DENSITY_FLOOR {
            terms.push(qv * qv / pv * g.weight(j));
        } else {
            orphan += qv.abs() * g.weight(j);
        }
    }
    if orphan > 1e-8 {
        return Err(EffError::InvalidInput(format!(
            "laws are singular on the grid (mass {orphan:e})"
        )));
    }
    lhs += kahan_sum(terms);
    let nu = t.nu.as_measure();
    let b2 = crate::spectral_core::integrate(&p.b.mul(&p.b)?, &nu)?;
    let s = p.t * p.t * b2;
    Ok(Chi2Report {
        lhs,
        rhs: (0.5 * s).exp(),
        rhs_constant_one: s.exp(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn k_path_shape() {
        assert_eq!(path_k(0.0), 1.0);
        let h = 1e-6;
        assert!(((path_k(h) - path_k(-h)) / (2.0 * h) - 1.0).abs() < 1e-8);
        for y in [-3.0, -0.5, 0.5, 3.0] {
            let prod = path_k(y) * path_k(-y);
            assert!(prod > 0.0 && prod <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn piecewise_basis_nests() {
        let g = UniformGrid::symmetric(16.0, 4096).unwrap();
        let b4 = SubmodelBasis::piecewise_linear(&g, 1.5, 5.0, 4).unwrap();
        let b8 = SubmodelBasis::piecewise_linear(&g, 1.5, 5.0, 8).unwrap();
        // each coarse direction is a combination of fine directions: the
        // least-squares residual vanishes
        let fine = DMatrix::from_fn(g.n, 8, |i, j| b8.directions[j].values[i]);
        for d in &b4.directions {
            let v = DVector::from_vec(d.values.clone());
            let sol = fine.clone().svd(true, true).solve(&v, 1e-12).unwrap();
            assert!((&fine * sol - v).norm() < 1e-8);
        }
    }
}
