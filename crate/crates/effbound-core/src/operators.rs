//! Score operators `A`, their adjoints `A*`, inverse adjoints by Fourier
//! deconvolution, and finite-dimensional pseudoinverses.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::bounds::FunctionalKind;
use crate::error::{EffError, Result};
use crate::models::{
    char_function, check_fourier_mult, decay_exponent, error_cf, marginal_law, obs_density,
    spectral_taper, Activity, DeconvPair, ErrorFamily, FourierMultCheck, LevyTriplet, MarginalLaw,
};
use crate::spectral_core::{
    convolve, correlate, fft_forward, fft_inverse, fourier_transform, inverse_fourier, kahan_sum,
    measure_transform, shift, GridFunction, MixedMeasure, SpectralFunction, UniformGrid, C64,
};

/// Floor on the observation density below which score ratios are masked.
pub const DENSITY_FLOOR: f64 = 1e-12;
/// Mollifier half-widths in grid cells, coarse to fine.
pub const MOLLIFIER_WIDTHS: [usize; 5] = [128, 64, 32, 16, 8];
/// Tail bound for the signed deconvolution series.
pub const DECON_SERIES_TOL: f64 = 1e-10;

/// Function on the observation space: grid values, values at the atoms of
/// the observation law, and one-sided limits at nodes where it jumps.
///
/// The jump data let the trapezoid rule treat a step exactly as a step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObsFunction {
    pub values: GridFunction,
    /// `(location, value)` aligned with the atoms of the law.
    pub atoms: Vec<(f64, f64)>,
    /// `(node, left limit, right limit)`, sorted by node.
    pub jumps: Vec<(usize, f64, f64)>,
}

impl ObsFunction {
    /// Continuous function; atom values by interpolation.
    pub fn from_grid(values: GridFunction, p: &MixedMeasure) -> Self {
        let atoms = p
            .atoms
            .iter()
            .map(|&(a, _)| (a, values.interp_or_zero(a)))
            .collect();
        Self {
            values,
            atoms,
            jumps: vec![],
        }
    }

    fn limits(&self, k: usize) -> (f64, f64) {
        match self.jumps.binary_search_by_key(&k, |j| j.0) {
            Ok(i) => (self.jumps[i].1, self.jumps[i].2),
            Err(_) => (self.values.values[k], self.values.values[k]),
        }
    }

    /// `⟨f, g⟩_{L²(P)}`.
    pub fn inner(&self, other: &ObsFunction, p: &MixedMeasure) -> Result<f64> {
        let mut terms = Vec::with_capacity(self.atoms.len() + 1);
        for (i, &(_, mass)) in p.atoms.iter().enumerate() {
            let a = self.atoms.get(i).map_or(0.0, |v| v.1);
            let b = other.atoms.get(i).map_or(0.0, |v| v.1);
            terms.push(a * b * mass);
        }
        if let Some(d) = &p.density {
            let g = d.grid;
            g.require_compatible(&self.values.grid, "inner product")?;
            g.require_compatible(&other.values.grid, "inner product")?;
            let mut s = kahan_sum((0..g.n).map(|j| {
                self.values.values[j] * other.values.values[j] * d.values[j] * g.weight(j)
            }));
            let mut nodes: Vec<usize> =
                self.jumps.iter().chain(&other.jumps).map(|j| j.0).collect();
            nodes.sort_unstable();
            nodes.dedup();
            for k in nodes {
                let (fl, fr) = self.limits(k);
                let (gl, gr) = other.limits(k);
                let w = d.values[k] * g.weight(k);
                s += (0.5 * (fl * gl + fr * gr) - self.values.values[k] * other.values.values[k])
                    * w;
            }
            terms.push(s);
        }
        Ok(kahan_sum(terms))
    }

    /// `∫ f dP`.
    pub fn mean(&self, p: &MixedMeasure) -> Result<f64> {
        let one = ObsFunction {
            values: GridFunction::from_fn(self.values.grid, |_| 1.0),
            atoms: p.atoms.iter().map(|&(a, _)| (a, 1.0)).collect(),
            jumps: vec![],
        };
        self.inner(&one, p)
    }

    /// Pointwise value at `y` by linear interpolation, honoring jumps and
    /// atoms. Points off the grid are clamped to the nearest end node;
    /// the second component reports whether that happened.
    pub fn eval(&self, y: f64) -> (f64, bool) {
        if let Some(&(_, v)) = self.atoms.iter().find(|a| a.0 == y) {
            return (v, false);
        }
        let g = self.values.grid;
        let pos = (y - g.x0) / g.dx;
        if !(pos >= 0.0 && pos <= (g.n - 1) as f64) {
            let j = if pos < 0.0 { 0 } else { g.n - 1 };
            return (self.values.values[j], true);
        }
        let j = (pos.floor() as usize).min(g.n - 2);
        let s = pos - j as f64;
        if s == 0.0 {
            return (self.values.values[j], false);
        }
        let a = self.limits(j).1;
        let b = self.limits(j + 1).0;
        (a + s * (b - a), false)
    }

    pub fn scale(&self, c: f64) -> Self {
        Self {
            values: self.values.scale(c),
            atoms: self.atoms.iter().map(|&(a, v)| (a, v * c)).collect(),
            jumps: self
                .jumps
                .iter()
                .map(|&(k, l, r)| (k, l * c, r * c))
                .collect(),
        }
    }
}

/// Score operator of a Lévy model, with the marginal law and spectra cached.
#[derive(Debug, Clone)]
pub struct LevyScore {
    pub triplet: LevyTriplet,
    pub law: MarginalLaw,
    pub phi: SpectralFunction,
    pub fourier_check: FourierMultCheck,
}

/// Score operator of a deconvolution model.
#[derive(Debug, Clone)]
pub struct DeconScore {
    pub pair: DeconvPair,
    pub p: MixedMeasure,
    pub phi_eps: SpectralFunction,
    pub beta_hat: f64,
}

/// Linearized operator of the nonlinear white-noise example at `θ`.
#[derive(Debug, Clone)]
pub struct DiffeqScore {
    pub theta: GridFunction,
}

/// Generalized score operator for each model kind.
#[derive(Debug, Clone)]
pub enum ScoreOperator {
    Levy(LevyScore),
    Decon(DeconScore),
    Diffeq(DiffeqScore),
}

/// Result of applying a score operator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreOutput {
    pub score: ObsFunction,
    /// Observation mass on nodes where the density fell below the floor.
    pub masked_mass: f64,
}

impl ScoreOperator {
    pub fn levy(t: &LevyTriplet) -> Result<Self> {
        let law = marginal_law(t)?;
        let phi = char_function(t)?;
        let fourier_check = check_fourier_mult(t)?;
        Ok(Self::Levy(LevyScore {
            triplet: t.clone(),
            law,
            phi,
            fourier_check,
        }))
    }

    pub fn decon(pair: &DeconvPair) -> Result<Self> {
        let p = obs_density(pair)?;
        let phi_eps = error_cf(pair)?;
        let min_abs = phi_eps
            .values
            .iter()
            .map(|v| v.norm())
            .fold(f64::INFINITY, f64::min);
        if !(min_abs > 1e-300) {
            return Err(EffError::Underflow { min_abs });
        }
        let beta_hat = match pair.mu_family {
            ErrorFamily::Dirac { .. } => 0.0,
            _ => decay_exponent(&phi_eps)?.max(0.0),
        };
        Ok(Self::Decon(DeconScore {
            pair: pair.clone(),
            p,
            phi_eps,
            beta_hat,
        }))
    }

    pub fn diffeq(theta: &GridFunction) -> Result<Self> {
        if theta.values.iter().any(|v| *v < 0.0) {
            return Err(EffError::InvalidInput("theta must be nonnegative".into()));
        }
        Ok(Self::Diffeq(DiffeqScore {
            theta: theta.clone(),
        }))
    }

    pub fn grid(&self) -> UniformGrid {
        match self {
            ScoreOperator::Levy(l) => l.triplet.grid(),
            ScoreOperator::Decon(d) => d.pair.grid(),
            ScoreOperator::Diffeq(d) => d.theta.grid,
        }
    }

    /// Observation law `P`; for white noise, Lebesgue measure on the grid.
    pub fn observation_law(&self) -> MixedMeasure {
        match self {
            ScoreOperator::Levy(l) => l.law.measure.clone(),
            ScoreOperator::Decon(d) => d.p.clone(),
            ScoreOperator::Diffeq(d) => {
                MixedMeasure::from_density(GridFunction::from_fn(d.theta.grid, |_| 1.0))
            }
        }
    }

    /// Measure on the direction space (`ν`, or Lebesgue for white noise).
    pub fn direction_measure(&self) -> MixedMeasure {
        match self {
            ScoreOperator::Levy(l) => l.triplet.nu.as_measure(),
            ScoreOperator::Decon(d) => d.pair.nu.clone(),
            ScoreOperator::Diffeq(d) => {
                MixedMeasure::from_density(GridFunction::from_fn(d.theta.grid, |_| 1.0))
            }
        }
    }

    /// `A b`.
    pub fn score(&self, b: &GridFunction) -> Result<ScoreOutput> {
        match self {
            ScoreOperator::Levy(l) => levy_score(l, b),
            ScoreOperator::Decon(d) => decon_score(d, b),
            ScoreOperator::Diffeq(d) => {
                let v = gateaux_diffeq(&d.theta, b)?;
                Ok(ScoreOutput {
                    score: ObsFunction {
                        values: v,
                        atoms: vec![],
                        jumps: vec![],
                    },
                    masked_mass: 0.0,
                })
            }
        }
    }

    /// `A* g`, requiring `∫ g dP = 0` within `1e-8` (scaled by `sup|g|`).
    pub fn adjoint(&self, g: &GridFunction) -> Result<GridFunction> {
        self.adjoint_with_tol(g, 1e-8)
    }

    /// `A* g` with an explicit centering tolerance.
    pub fn adjoint_with_tol(&self, g: &GridFunction, tol: f64) -> Result<GridFunction> {
        match self {
            ScoreOperator::Diffeq(d) => gateaux_diffeq_adjoint(&d.theta, g),
            ScoreOperator::Levy(l) => {
                let p = &l.law.measure;
                check_centered(g, p, tol)?;
                let mut out =
                    correlate(p.density.as_ref().expect("marginal law has a density"), g)?;
                for &(a, m) in &p.atoms {
                    out = out.add(&shift(g, -a).scale(m))?;
                }
                Ok(out.scale(l.triplet.delta))
            }
            ScoreOperator::Decon(d) => {
                check_centered(g, &d.p, tol)?;
                let mu = &d.pair.mu;
                let mut out = match &mu.density {
                    Some(md) => correlate(md, g)?,
                    None => GridFunction::zeros(g.grid),
                };
                for &(a, m) in &mu.atoms {
                    out = out.add(&shift(g, -a).scale(m))?;
                }
                Ok(out)
            }
        }
    }
}

fn check_centered(g: &GridFunction, p: &MixedMeasure, tol: f64) -> Result<()> {
    let mean = crate::spectral_core::integrate(g, p)?;
    let scale = g.sup_norm().max(1.0);
    if mean.abs() > tol * scale {
        return Err(EffError::NotCentered { mean, tol });
    }
    Ok(())
}

/// Divide `c` by the observation density, masking nodes below the floor.
fn ratio(c: &GridFunction, p: &GridFunction, offset: f64, scale: f64) -> (GridFunction, f64) {
    let g = p.grid;
    let mut masked = 0.0;
    let values = (0..g.n)
        .map(|j| {
            if p.values[j] > DENSITY_FLOOR {
                scale * (c.values[j] / p.values[j] - offset)
            } else {
                masked += p.values[j].max(0.0) * g.weight(j);
                0.0
            }
        })
        .collect();
    (GridFunction { grid: g, values }, masked)
}

fn levy_score(l: &LevyScore, b: &GridFunction) -> Result<ScoreOutput> {
    let p = &l.law.measure;
    let pd = p.density.as_ref().expect("marginal law has a density");
    let bnu = b.mul(&l.triplet.nu.density)?;
    let int_b = bnu.integral();
    if !int_b.is_finite() {
        return Err(EffError::InvalidInput("direction not in L¹(ν)".into()));
    }
    let mut c = convolve(pd, &bnu)?;
    for &(a, m) in &p.atoms {
        c = c.add(&shift(&bnu, a).scale(m))?;
    }
    let d = l.triplet.delta;
    let (values, masked_mass) = ratio(&c, pd, int_b, d);
    // P * (bν) has no atoms, so the density ratio vanishes at atoms of P
    let atoms = p.atoms.iter().map(|&(a, _)| (a, -d * int_b)).collect();
    Ok(ScoreOutput {
        score: ObsFunction {
            values,
            atoms,
            jumps: vec![],
        },
        masked_mass,
    })
}

fn decon_score(s: &DeconScore, b: &GridFunction) -> Result<ScoreOutput> {
    let nu = &s.pair.nu;
    let nd = nu.density.as_ref().expect("checked at construction");
    let mean = crate::spectral_core::integrate(b, nu)?;
    if mean.abs() > 1e-8 * b.sup_norm().max(1.0) {
        return Err(EffError::NotCentered { mean, tol: 1e-8 });
    }
    let bnu = b.mul(nd)?;
    let bm = MixedMeasure::from_density(bnu);
    let c = crate::spectral_core::convolve_measure(&bm, &s.pair.mu)?;
    let cd = c.density.expect("density in, density out");
    let pd =
        s.p.density
            .as_ref()
            .ok_or_else(|| EffError::Unsupported("observation law without density".into()))?;
    let (values, masked_mass) = ratio(&cd, pd, 0.0, 1.0);
    let atoms =
        s.p.atoms
            .iter()
            .map(|&(a, _)| (a, values.interp_or_zero(a)))
            .collect();
    Ok(ScoreOutput {
        score: ObsFunction {
            values,
            atoms,
            jumps: vec![],
        },
        masked_mass,
    })
}

/// Signed measure `F^{-1}[1/φ_ν(-·)]` of a compound Poisson model:
/// `δ_{Δγ} * e^{Δλ} Σ_{k≤K} (-Δ)^k/k! ν(-·)^{*k}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeconMeasure {
    pub measure: MixedMeasure,
    pub truncation_k: usize,
    /// `sup_u |F[D](u) φ_ν(-u) - 1|` over the grid.
    pub inverse_error: f64,
    pub total_variation: f64,
}

impl DeconMeasure {
    pub fn new(t: &LevyTriplet) -> Result<Self> {
        let lambda = match t.nu.activity {
            Activity::Finite { lambda } => lambda,
            Activity::Infinite => {
                return Err(EffError::Unsupported(
                    "deconvolution series needs finite activity".into(),
                ))
            }
        };
        let d = t.delta;
        let m = d * lambda;
        // alternating series: the first omitted term bounds the tail
        let mut k = 0usize;
        let mut term = m.exp() * m; // e^{Δλ}(Δλ)^{K+1}/(K+1)! at K = 0
        while term >= DECON_SERIES_TOL {
            k += 1;
            term *= m / (k + 1) as f64;
            if k > 10_000 {
                return Err(EffError::SeriesDivergence("deconvolution series".into()));
            }
        }
        let big_k = k.max(1);
        let nu_ref = t.nu.density.reflect();
        let mut power = nu_ref.clone();
        let mut coef = -d;
        let mut acc = power.scale(coef);
        for j in 2..=big_k {
            power = convolve(&power, &nu_ref)?;
            coef *= -d / j as f64;
            acc = acc.add(&power.scale(coef))?;
        }
        let e = m.exp();
        let loc = t.drift_location();
        let dens = shift(&acc.scale(e), loc);
        let measure = MixedMeasure::new(vec![(loc, e)], Some(dens))?;
        let grid = t.grid();
        let fd = measure_transform(&measure, &grid)?;
        let phi = char_function(t)?;
        let inverse_error = fd
            .values
            .iter()
            .zip(&phi.values)
            .map(|(a, b)| (a * b.conj() - 1.0).norm())
            .fold(0.0, f64::max);
        let total_variation = e + measure.density.as_ref().map_or(0.0, |g| {
            g.values.iter().map(|v| v.abs()).sum::<f64>() * g.grid.dx
        });
        Ok(Self {
            measure,
            truncation_k: big_k,
            inverse_error,
            total_variation,
        })
    }
}

/// How an inverse adjoint was computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InvMethod {
    /// Exact shift for a point-mass error law.
    DiracShift,
    /// Convolution with the compound Poisson deconvolution measure.
    CompoundPoissonSeries,
    /// Spectral division with a mollifier ladder.
    SpectralMollified,
    /// Regularized solve of the differential-equation adjoint.
    DiffeqRegularized,
}

/// Outcome of the stabilization test of a ladder of squared norms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stabilization {
    pub values: Vec<f64>,
    pub increments: Vec<f64>,
    pub ratios: Vec<f64>,
    pub converged: bool,
    /// Richardson rate `r` with `Σ - Σ_h ≈ C h^{p}`, `r = 2^{-p}`; `None` when unused.
    pub richardson_rate: Option<f64>,
    pub extrapolated: f64,
}

/// Convergence test on squared norms at successively finer levels.
///
/// A sequence whose increments shrink geometrically (all ratios below 1) or
/// whose last increment is negligible is accepted; otherwise the limit does
/// not exist on the grid and the functional is declared out of range.
pub fn stabilize(values: &[f64], richardson_rate: Option<f64>) -> Result<Stabilization> {
    let increments: Vec<f64> = values.windows(2).map(|w| w[1] - w[0]).collect();
    let ratios: Vec<f64> = increments
        .windows(2)
        .map(|w| {
            if w[0].abs() > 0.0 {
                (w[1] / w[0]).abs()
            } else {
                0.0
            }
        })
        .collect();
    let last = *values.last().unwrap_or(&0.0);
    let scale = values.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let negligible = increments.last().is_none_or(|d| d.abs() <= 1e-9 * scale);
    let geometric = !ratios.is_empty() && ratios.iter().all(|r| *r < 1.0);
    let converged = negligible || geometric;
    let extrapolated = match (richardson_rate, increments.last()) {
        (Some(r), Some(d)) if converged && !negligible => last + d * r / (1.0 - r),
        _ => last,
    };
    let out = Stabilization {
        values: values.to_vec(),
        increments,
        ratios,
        converged,
        richardson_rate,
        extrapolated,
    };
    if !converged {
        return Err(EffError::OutOfRange(format!(
            "mollification sequence does not stabilize (squared norms {:?})",
            out.values
        )));
    }
    Ok(out)
}

/// Inverse adjoint `(A*)^{-1} ζ` with the material needed for `∫ψψ' dP`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvAdjoint {
    /// Pointwise influence function.
    pub psi: ObsFunction,
    /// Mollified versions, coarse to fine; empty for exact paths.
    pub ladder: Vec<ObsFunction>,
    pub stabilization: Option<Stabilization>,
    pub method: InvMethod,
    pub beta_hat: Option<f64>,
}

/// `(A*)^{-1} ζ`.
///
/// Compound Poisson Lévy models use the exact deconvolution series; a point
/// mass error law is a shift; otherwise the transform of `ζ` is divided by
/// `Δ φ(-u)` and the square norm is tracked along a mollifier ladder.
pub fn inv_adjoint(a: &ScoreOperator, zeta: &FunctionalKind) -> Result<InvAdjoint> {
    let grid = a.grid();
    zeta.validate(&grid)?;
    match a {
        ScoreOperator::Decon(d) => match d.pair.mu_family {
            ErrorFamily::Dirac { at } => {
                let p = &d.p;
                let psi = zeta.shifted_obs(&grid, at, p)?;
                Ok(InvAdjoint {
                    psi,
                    ladder: vec![],
                    stabilization: None,
                    method: InvMethod::DiracShift,
                    beta_hat: Some(0.0),
                })
            }
            _ => spectral_inverse(a, zeta, &d.phi_eps, 1.0, d.beta_hat, &d.p),
        },
        ScoreOperator::Levy(l) => {
            if l.triplet.nu.is_finite_activity() {
                cp_inverse(l, zeta)
            } else {
                if zeta.contains_origin() {
                    return Err(EffError::InvalidInput(
                        "functional must vanish near 0 for infinite activity (not in L¹(ν))".into(),
                    ));
                }
                spectral_inverse(
                    a,
                    zeta,
                    &l.phi,
                    l.triplet.delta,
                    l.fourier_check.beta_hat,
                    &l.law.measure,
                )
            }
        }
        ScoreOperator::Diffeq(d) => diffeq_inverse(&d.theta, zeta),
    }
}

fn cp_inverse(l: &LevyScore, zeta: &FunctionalKind) -> Result<InvAdjoint> {
    let grid = l.triplet.grid();
    let dm = DeconMeasure::new(&l.triplet)?;
    let d = l.triplet.delta;
    let loc = l.triplet.drift_location();
    let atom_w = dm.measure.atoms[0].1;
    let dens = dm.measure.density.as_ref().expect("series has a density");
    // ψ = Δ^{-1}[e^{Δλ} ζ(x - Δγ) + (d * ζ)(x)], with ζ(0) := 0
    let smooth = zeta.convolve_with(dens)?;
    let mut shifted = zeta.shifted_obs(&grid, loc, &MixedMeasure::new(vec![], None)?)?;
    shifted = shifted.scale(atom_w);
    let mut values = shifted.values.add(&smooth)?;
    values = values.scale(1.0 / d);
    let jumps = shifted
        .jumps
        .iter()
        .map(|&(k, lft, rgt)| {
            (
                k,
                (lft + smooth.values[k]) / d,
                (rgt + smooth.values[k]) / d,
            )
        })
        .collect();
    let p = &l.law.measure;
    let atoms = p
        .atoms
        .iter()
        .map(|&(a, _)| {
            let at_atom = if (a - loc).abs() < 1e-12 {
                0.0
            } else {
                atom_w * zeta.eval(a - loc)
            };
            (a, (at_atom + smooth.interp_or_zero(a)) / d)
        })
        .collect();
    let _ = dm.inverse_error;
    Ok(InvAdjoint {
        psi: ObsFunction {
            values,
            atoms,
            jumps,
        },
        ladder: vec![],
        stabilization: None,
        method: InvMethod::CompoundPoissonSeries,
        beta_hat: Some(l.fourier_check.beta_hat),
    })
}

/// Normalized bump of half-width `m` cells and its transform.
pub fn mollifier_spectrum(grid: &UniformGrid, m: usize) -> Result<SpectralFunction> {
    let h = m as f64 * grid.dx;
    let b = GridFunction::from_fn(*grid, |x| crate::models::bump(x / h));
    let mass = b.integral();
    fourier_transform(&b.scale(1.0 / mass))
}

fn spectral_inverse(
    a: &ScoreOperator,
    zeta: &FunctionalKind,
    phi: &SpectralFunction,
    delta: f64,
    beta_hat: f64,
    p: &MixedMeasure,
) -> Result<InvAdjoint> {
    let grid = a.grid();
    if zeta.is_indicator() && beta_hat >= 0.5 {
        return Err(EffError::ParametricRateUnavailable { beta_hat });
    }
    let zhat = zeta.transform(&grid)?;
    let nyq = grid.nyquist();
    let quotient = zhat.pointwise(phi, |z, f| z / (f.conj() * delta))?;
    let tapered = quotient.map(|u, v| v * spectral_taper(u, nyq));
    let psi = ObsFunction::from_grid(inverse_fourier(&tapered)?, p);
    let mut ladder = Vec::with_capacity(MOLLIFIER_WIDTHS.len());
    let mut norms = Vec::with_capacity(MOLLIFIER_WIDTHS.len());
    for &m in &MOLLIFIER_WIDTHS {
        let bm = mollifier_spectrum(&grid, m)?;
        let q = quotient.pointwise(&bm, |v, b| v * b)?;
        let f = ObsFunction::from_grid(inverse_fourier(&q)?, p);
        norms.push(f.inner(&f, p)?);
        ladder.push(f);
    }
    let rate = if zeta.is_indicator() {
        Some(2f64.powf(-(1.0 - 2.0 * beta_hat)))
    } else {
        None
    };
    let stabilization = stabilize(&norms, rate)?;
    Ok(InvAdjoint {
        psi,
        ladder,
        stabilization: Some(stabilization),
        method: InvMethod::SpectralMollified,
        beta_hat: Some(beta_hat),
    })
}

/// Regularization levels for the white-noise differential-equation inverse.
pub const DIFFEQ_EPS_LADDER: [f64; 5] = [1e-2, 1e-3, 1e-4, 1e-5, 1e-6];

/// `(A*_θ)^{-1} ζ = f - f'` with `f = ζ/(2θ)`, regularized as
/// `ζθ/(2(θ² + ε²))` along a ladder of `ε` (relative to `sup θ`).
fn diffeq_inverse(theta: &GridFunction, zeta: &FunctionalKind) -> Result<InvAdjoint> {
    let grid = theta.grid;
    let z = zeta.on_grid(&grid);
    let tmax = theta.sup_norm();
    let lebesgue = MixedMeasure::from_density(GridFunction::from_fn(grid, |_| 1.0));
    let mut ladder = Vec::new();
    let mut norms = Vec::new();
    for &e in &DIFFEQ_EPS_LADDER {
        let eps = e * tmax;
        let f = GridFunction::new(
            grid,
            (0..grid.n)
                .map(|j| {
                    let t = theta.values[j];
                    z.values[j] * t / (2.0 * (t * t + eps * eps))
                })
                .collect(),
        )?;
        let h = f.add(&spectral_derivative(&f).scale(-1.0))?;
        let o = ObsFunction {
            values: h,
            atoms: vec![],
            jumps: vec![],
        };
        norms.push(o.inner(&o, &lebesgue)?);
        ladder.push(o);
    }
    let stabilization = stabilize(&norms, None)?;
    let psi = ladder.last().cloned().expect("non-empty ladder");
    Ok(InvAdjoint {
        psi,
        ladder,
        stabilization: Some(stabilization),
        method: InvMethod::DiffeqRegularized,
        beta_hat: None,
    })
}

/// Derivative by central differences (one-sided at the ends).
fn spectral_derivative(f: &GridFunction) -> GridFunction {
    let g = f.grid;
    let n = g.n;
    let v = &f.values;
    let values = (0..n)
        .map(|j| {
            if j == 0 {
                (v[1] - v[0]) / g.dx
            } else if j == n - 1 {
                (v[n - 1] - v[n - 2]) / g.dx
            } else {
                (v[j + 1] - v[j - 1]) / (2.0 * g.dx)
            }
        })
        .collect();
    GridFunction { grid: g, values }
}

/// Minimal-norm solution `ψ = (K^T)^† ζ` and the bound `‖ψ‖²`.
///
/// Singular values below `1e-12 σ_max` count as zero; a component of `ζ`
/// outside `ran K^T` larger than `1e-8 max(1, ‖ζ‖)` is rejected.
pub fn pinv_matrix(k: &DMatrix<f64>, zeta: &DVector<f64>) -> Result<(DVector<f64>, f64)> {
    if zeta.len() != k.ncols() {
        return Err(EffError::InvalidInput(format!(
            "functional has {} entries, K has {} columns",
            zeta.len(),
            k.ncols()
        )));
    }
    let svd = k.clone().svd(true, true);
    let u = svd.u.as_ref().expect("requested");
    let vt = svd.v_t.as_ref().expect("requested");
    let smax = svd.singular_values.iter().copied().fold(0.0, f64::max);
    let mut psi = DVector::zeros(k.nrows());
    let mut proj = DVector::zeros(k.ncols());
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if s > 1e-12 * smax && s > 0.0 {
            let vi = vt.row(i).transpose();
            let c = vi.dot(zeta);
            proj += &vi * c;
            psi += u.column(i) * (c / s);
        }
    }
    let residual = (zeta - proj).norm();
    if residual > 1e-8 * zeta.norm().max(1.0) {
        return Err(EffError::NotRegular { residual });
    }
    let bound = psi.norm_squared();
    Ok((psi, bound))
}

/// Multiply by a symbol on a `2n` zero-padded periodic grid. `symbol` takes
/// the standard-FFT angular frequency `ω` (transform kernel `e^{-iωx}`).
fn apply_symbol(f: &GridFunction, symbol: impl Fn(f64) -> C64) -> GridFunction {
    let g = f.grid;
    let m = 2 * g.n;
    let mut buf: Vec<C64> = (0..m)
        .map(|j| C64::new(if j < g.n { f.values[j] } else { 0.0 }, 0.0))
        .collect();
    fft_forward(&mut buf);
    let dw = 2.0 * std::f64::consts::PI / (m as f64 * g.dx);
    for (k, v) in buf.iter_mut().enumerate() {
        let kk = if k <= m / 2 {
            k as f64
        } else {
            k as f64 - m as f64
        };
        *v *= symbol(kk * dw);
    }
    fft_inverse(&mut buf);
    GridFunction {
        grid: g,
        values: (0..g.n).map(|j| buf[j].re / m as f64).collect(),
    }
}

/// `A_θ b = F^{-1}[(1 - iu)^{-1} F[2bθ]]`: the solution of `f' = -f + 2θb`.
pub fn gateaux_diffeq(theta: &GridFunction, b: &GridFunction) -> Result<GridFunction> {
    let s = b.mul(theta)?.scale(2.0);
    // symbol (1 - iu)^{-1} at u = -ω
    Ok(apply_symbol(&s, |w| C64::new(1.0, w).inv()))
}

/// Adjoint `A*_θ h = 2θ (k(-·) * h)`, `k = e^{-x} 1_{x>0}`.
pub fn gateaux_diffeq_adjoint(theta: &GridFunction, h: &GridFunction) -> Result<GridFunction> {
    theta.grid.require_compatible(&h.grid, "diffeq adjoint")?;
    let c = apply_symbol(h, |w| C64::new(1.0, -w).inv());
    c.mul(theta).map(|v| v.scale(2.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::JumpMeasure;

    #[test]
    fn pinv_examples() {
        let k = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 0.0, 0.5, 0.0, 0.0, 0.0, 0.25]);
        let (psi, b) = pinv_matrix(&k, &DVector::from_vec(vec![0.0, 1.0, 0.0])).unwrap();
        assert!((psi[1] - 2.0).abs() < 1e-12 && (b - 4.0).abs() < 1e-12);
        let k = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let (psi, b) = pinv_matrix(&k, &DVector::from_vec(vec![1.0, 0.0])).unwrap();
        assert!((psi - DVector::from_vec(vec![1.0, 0.0, 0.0])).norm() < 1e-12);
        assert!((b - 1.0).abs() < 1e-12);
        let err = pinv_matrix(&k, &DVector::from_vec(vec![0.0, 1.0])).unwrap_err();
        assert!(matches!(err, EffError::NotRegular { .. }));
    }

    #[test]
    fn decon_measure_inverts_phi() {
        let g = UniformGrid::symmetric(64.0, 1 << 15).unwrap();
        let t = LevyTriplet::new(0.0, 1.0, JumpMeasure::normal(g, 1.0, 2.0, 1.0).unwrap()).unwrap();
        let dm = DeconMeasure::new(&t).unwrap();
        assert_eq!(dm.truncation_k, 13);
        assert!(dm.inverse_error < 1e-8, "{}", dm.inverse_error);
    }

    #[test]
    fn stabilize_detects_growth() {
        assert!(stabilize(&[1.0, 1.5, 1.75, 1.875], None).is_ok());
        assert!(matches!(
            stabilize(&[1.0, 2.0, 3.5, 6.0], None),
            Err(EffError::OutOfRange(_))
        ));
    }

    #[test]
    fn diffeq_matches_ode_integration() {
        let g = UniformGrid::symmetric(16.0, 1 << 12).unwrap();
        let theta = GridFunction::from_fn(g, |x| (-0.5 * x * x).exp());
        let f = gateaux_diffeq(&theta, &theta).unwrap();
        // RK4 for f' = -f + 2θ², f(-16) = 0
        let rhs = |x: f64, y: f64| -y + 2.0 * (-x * x).exp();
        let mut y = 0.0;
        let mut max_err: f64 = 0.0;
        for j in 0..g.n - 1 {
            let x = g.x(j);
            let h = g.dx;
            let k1 = rhs(x, y);
            let k2 = rhs(x + h / 2.0, y + h * k1 / 2.0);
            let k3 = rhs(x + h / 2.0, y + h * k2 / 2.0);
            let k4 = rhs(x + h, y + h * k3);
            y += h * (k1 + 2.0 * k2 + 2.0 * k3 + k4) / 6.0;
            max_err = max_err.max((y - f.values[j + 1]).abs());
        }
        assert!(max_err < 1e-6, "{max_err}");
    }
}
