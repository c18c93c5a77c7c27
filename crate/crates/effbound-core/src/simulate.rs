//! Efficient estimators and the Monte Carlo comparison harness.
//!
//! Every replication draws from its own ChaCha substream, so results are
//! bit-identical for a given seed regardless of the thread count.

use std::sync::atomic::{AtomicUsize, Ordering};

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{gamma_lr, ln_gamma};

use crate::bounds::{Functional, FunctionalKind};
use crate::error::{EffError, Result};
use crate::models::{
    Activity, DeconvPair, ErrorFamily, LevyTriplet, Sampler, WhiteNoiseKind, WhiteNoiseOp,
};
use crate::operators::{inv_adjoint, pinv_matrix, ObsFunction, ScoreOperator};
use crate::spectral_core::{
    dft_sum, inverse_fourier, kahan_sum, measure_transform, GridFunction, MixedMeasure,
    SpectralFunction, UniformGrid, C64,
};

/// RNG substream for replication `rep` of an experiment seeded with `seed`.
pub fn substream(seed: u64, rep: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(rep);
    rng
}

/// Cutoffs tried by [`select_cutoff`], as fractions of the grid Nyquist frequency.
pub const CUTOFF_LADDER: [f64; 3] = [0.5, 0.75, 1.0];

/// A statistic computed from one sample.
pub trait Estimator: Sync {
    fn name(&self) -> String;
    fn dim(&self) -> usize;
    fn estimate(&self, sample: &[f64]) -> Result<Vec<f64>>;
    /// Counters accumulated over all calls so far.
    fn diagnostics(&self) -> serde_json::Value {
        serde_json::Value::Null
    }
}

/// Replication results compared against an information bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MCReport {
    pub estimator: String,
    pub n: usize,
    pub reps: usize,
    pub seed: u64,
    /// `reps × d`.
    pub estimates: Vec<Vec<f64>>,
    pub mean: Vec<f64>,
    pub truth: Option<Vec<f64>>,
    /// `(mean - truth) / SE` per coordinate.
    pub bias_z: Option<Vec<f64>>,
    /// `n ·` empirical covariance.
    pub scaled_var: Vec<Vec<f64>>,
    pub sigma_ref: Vec<Vec<f64>>,
    /// Diagonal ratios `scaled_var / sigma_ref`.
    pub ratio: Vec<f64>,
    pub skewness: Vec<f64>,
    pub excess_kurtosis: Vec<f64>,
    pub diagnostics: serde_json::Value,
}

impl MCReport {
    /// Summarize `estimates` (one row per replication). `scale` multiplies
    /// the empirical covariance, usually the sample size.
    pub fn from_estimates(
        estimator: String,
        n: usize,
        seed: u64,
        estimates: Vec<Vec<f64>>,
        scale: f64,
        sigma_ref: Vec<Vec<f64>>,
        truth: Option<Vec<f64>>,
    ) -> Result<Self> {
        let reps = estimates.len();
        if reps < 2 {
            return Err(EffError::InvalidInput(
                "at least two replications are needed".into(),
            ));
        }
        let d = estimates[0].len();
        if estimates.iter().any(|e| e.len() != d) {
            return Err(EffError::InvalidInput(
                "estimates of unequal dimension".into(),
            ));
        }
        if sigma_ref.len() != d || sigma_ref.iter().any(|r| r.len() != d) {
            return Err(EffError::InvalidInput(format!("sigma_ref must be {d}×{d}")));
        }
        let rf = reps as f64;
        let mean: Vec<f64> = (0..d)
            .map(|i| kahan_sum(estimates.iter().map(|e| e[i])) / rf)
            .collect();
        let mut cov = vec![vec![0.0; d]; d];
        for i in 0..d {
            for j in 0..=i {
                let c = kahan_sum(
                    estimates
                        .iter()
                        .map(|e| (e[i] - mean[i]) * (e[j] - mean[j])),
                ) / (rf - 1.0);
                cov[i][j] = c * scale;
                cov[j][i] = c * scale;
            }
        }
        let moment =
            |i: usize, k: i32| kahan_sum(estimates.iter().map(|e| (e[i] - mean[i]).powi(k))) / rf;
        let skewness = (0..d)
            .map(|i| moment(i, 3) / moment(i, 2).powf(1.5))
            .collect();
        let excess_kurtosis = (0..d)
            .map(|i| moment(i, 4) / moment(i, 2).powi(2) - 3.0)
            .collect();
        let bias_z = truth.as_ref().map(|tr| {
            (0..d)
                .map(|i| (mean[i] - tr[i]) / (cov[i][i] / scale / rf).sqrt())
                .collect()
        });
        let ratio = (0..d).map(|i| cov[i][i] / sigma_ref[i][i]).collect();
        Ok(Self {
            estimator,
            n,
            reps,
            seed,
            estimates,
            mean,
            truth,
            bias_z,
            scaled_var: cov,
            sigma_ref,
            ratio,
            skewness,
            excess_kurtosis,
            diagnostics: serde_json::Value::Null,
        })
    }

    /// One row per replication: `rep, estimate_1, …, estimate_d`.
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let d = self.mean.len();
        let mut header = vec!["rep".to_string()];
        header.extend((1..=d).map(|i| format!("estimate_{i}")));
        wr.write_record(&header)
            .map_err(|e| EffError::Io(e.to_string()))?;
        for (r, e) in self.estimates.iter().enumerate() {
            let mut row = vec![r.to_string()];
            row.extend(e.iter().map(|v| format!("{v:.17e}")));
            wr.write_record(&row)
                .map_err(|e| EffError::Io(e.to_string()))?;
        }
        wr.flush().map_err(|e| EffError::Io(e.to_string()))
    }
}

/// Run `reps` experiments of size `n`, replication `r` drawing from
/// `substream(seed, r)`.
pub fn mc_compare(
    model: &dyn Sampler,
    est: &dyn Estimator,
    n: usize,
    reps: usize,
    seed: u64,
    sigma_ref: Vec<Vec<f64>>,
    truth: Option<Vec<f64>>,
) -> Result<MCReport> {
    if n == 0 {
        return Err(EffError::InvalidInput(
            "sample size must be positive".into(),
        ));
    }
    let draw = model.sampler()?;
    let estimates: Vec<Vec<f64>> = (0..reps)
        .into_par_iter()
        .map(|r| {
            let mut rng = substream(seed, r as u64);
            let sample: Vec<f64> = (0..n).map(|_| draw(&mut rng)).collect();
            est.estimate(&sample)
        })
        .collect::<Result<_>>()?;
    let mut rep =
        MCReport::from_estimates(est.name(), n, seed, estimates, n as f64, sigma_ref, truth)?;
    rep.diagnostics = est.diagnostics();
    Ok(rep)
}

/// Closed-form influence function of an indicator under `Gamma(α, b)` errors:
/// `g(y) = P(1 - α, b(t - y)) + γ_{1-α}(b(t - y))` for `y < t` and zero above,
/// with `P` the regularized lower incomplete gamma function and `γ_{1-α}` the
/// unit-rate Gamma density. The right tail uses `1 - g`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaErrorIndicator {
    pub shape: f64,
    pub rate: f64,
    pub t: f64,
    pub left: bool,
}

impl GammaErrorIndicator {
    pub fn new(pair: &DeconvPair, zeta: &FunctionalKind) -> Option<Self> {
        let ErrorFamily::Gamma { shape, rate } = pair.mu_family else {
            return None;
        };
        if shape >= 1.0 {
            return None;
        }
        match *zeta {
            FunctionalKind::IndicatorLeft { t } => Some(Self {
                shape,
                rate,
                t,
                left: true,
            }),
            FunctionalKind::IndicatorRight { t } => Some(Self {
                shape,
                rate,
                t,
                left: false,
            }),
            FunctionalKind::Grid { .. } => None,
        }
    }

    pub fn eval(&self, y: f64) -> f64 {
        let r = self.rate * (self.t - y);
        let a = 1.0 - self.shape;
        let g = if r > 0.0 {
            gamma_lr(a, r) + ((a - 1.0) * r.ln() - r - ln_gamma(a)).exp()
        } else {
            0.0
        };
        if self.left {
            g
        } else {
            1.0 - g
        }
    }
}

/// Average of known influence functions over the sample.
#[derive(Debug)]
pub struct InfluenceAverage {
    pub psi: Vec<ObsFunction>,
    /// Exact replacements for `psi`, used where available.
    pub closed: Vec<Option<GammaErrorIndicator>>,
    clamped: AtomicUsize,
}

/// Result of [`estimate_decon_linear`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearEstimate {
    pub values: Vec<f64>,
    /// Sample points outside the grid, evaluated at the nearest end node.
    pub clamped: usize,
}

impl InfluenceAverage {
    pub fn new(psi: Vec<ObsFunction>) -> Self {
        let closed = vec![None; psi.len()];
        Self {
            psi,
            closed,
            clamped: AtomicUsize::new(0),
        }
    }

    /// Influence functions `(A*)^{-1} ζ` of a deconvolution model. Indicators
    /// under Gamma errors use the closed form: the gridded inverse resolves
    /// its `(t - y)^{-α}` singularity only down to the grid step and so loses
    /// a few percent of the variance.
    pub fn decon(pair: &DeconvPair, zeta: &Functional) -> Result<Self> {
        let a = ScoreOperator::decon(pair)?;
        let psi = zeta
            .components
            .iter()
            .map(|c| inv_adjoint(&a, c).map(|i| i.psi))
            .collect::<Result<_>>()?;
        let closed = zeta
            .components
            .iter()
            .map(|c| GammaErrorIndicator::new(pair, c))
            .collect();
        Ok(Self {
            psi,
            closed,
            clamped: AtomicUsize::new(0),
        })
    }

    /// The same estimator restricted to the gridded influence functions.
    pub fn gridded_only(mut self) -> Self {
        self.closed.iter_mut().for_each(|c| *c = None);
        self
    }

    pub fn evaluate(&self, sample: &[f64]) -> LinearEstimate {
        let mut clamped = 0;
        let values = self
            .psi
            .iter()
            .zip(&self.closed)
            .map(|(p, exact)| {
                let s = kahan_sum(sample.iter().map(|&y| match exact {
                    Some(g) => g.eval(y),
                    None => {
                        let (v, c) = p.eval(y);
                        clamped += c as usize;
                        v
                    }
                }));
                s / sample.len() as f64
            })
            .collect();
        LinearEstimate {
            values,
            clamped: clamped / self.psi.len().max(1),
        }
    }
}

impl Estimator for InfluenceAverage {
    fn name(&self) -> String {
        "influence-average".into()
    }
    fn dim(&self) -> usize {
        self.psi.len()
    }
    fn estimate(&self, sample: &[f64]) -> Result<Vec<f64>> {
        if sample.is_empty() {
            return Err(EffError::InvalidInput("empty sample".into()));
        }
        let e = self.evaluate(sample);
        self.clamped.fetch_add(e.clamped, Ordering::Relaxed);
        Ok(e.values)
    }
    fn diagnostics(&self) -> serde_json::Value {
        serde_json::json!({
            "clamped": self.clamped.load(Ordering::Relaxed),
            "closed_form": self.closed.iter().map(Option::is_some).collect::<Vec<_>>(),
        })
    }
}

/// `n^{-1} Σ ψ(Y_j)` with `ψ = (A*)^{-1} ζ` of the deconvolution model.
pub fn estimate_decon_linear(
    sample: &[f64],
    pair: &DeconvPair,
    zeta: &Functional,
) -> Result<LinearEstimate> {
    if sample.is_empty() {
        return Err(EffError::InvalidInput("empty sample".into()));
    }
    Ok(InfluenceAverage::decon(pair, zeta)?.evaluate(sample))
}

/// Linear binning: each point splits unit mass between its two neighbouring
/// nodes. Returns node masses normalized to one and the clamped count.
fn linear_bin(
    grid: &UniformGrid,
    sample: &[f64],
    weight: impl Fn(f64) -> f64,
) -> (Vec<f64>, Vec<f64>, usize) {
    let n = grid.n;
    let mut w = vec![0.0; n];
    let mut wx = vec![0.0; n];
    let mut clamped = 0;
    let top = (n - 1) as f64;
    for &y in sample {
        let mut pos = (y - grid.x0) / grid.dx;
        if !(pos >= 0.0 && pos <= top) {
            clamped += 1;
            pos = pos.clamp(0.0, top);
        }
        let j = (pos.floor() as usize).min(n - 2);
        let s = pos - j as f64;
        let f = weight(y);
        w[j] += 1.0 - s;
        w[j + 1] += s;
        wx[j] += (1.0 - s) * f;
        wx[j + 1] += s * f;
    }
    let m = sample.len() as f64;
    w.iter_mut().for_each(|v| *v /= m);
    wx.iter_mut().for_each(|v| *v /= m);
    (w, wx, clamped)
}

fn riemann_functional(
    grid: &UniformGrid,
    zeta: &FunctionalKind,
    f: &GridFunction,
    skip: Option<usize>,
) -> f64 {
    let z = zeta.on_grid(grid);
    kahan_sum(
        (0..grid.n)
            .filter(|j| Some(*j) != skip)
            .map(|j| z.values[j] * f.values[j]),
    ) * grid.dx
}

/// Decompounding estimator of `∫ ζ dν` for compound Poisson models with
/// known intensity.
///
/// The empirical law is linearly binned on the model grid. The jump
/// measure's transform is the distinguished logarithm
/// `Δ^{-1} log(e^{Δλ} φ̂(u) e^{-iuΔγ})`, unwrapped continuously from `u = 0`.
/// On the frequencies where the Mercator series for this logarithm
/// converges the two agree; the logarithm also covers `Δλ > log 2`, where
/// the series does not. The origin node, which absorbs the sampling error
/// of the atom, is replaced by its neighbours' mean and the result is
/// renormalized to the known `λ`.
#[derive(Debug)]
pub struct Decompounder {
    pub grid: UniformGrid,
    pub lambda: f64,
    pub delta: f64,
    pub gamma: f64,
    pub zeta: Vec<FunctionalKind>,
    /// Drop the origin spike and renormalize to `λ`; without it the
    /// estimator does not use the intensity beyond the atom correction.
    pub known_lambda: bool,
    clamped: AtomicUsize,
}

impl Decompounder {
    pub fn new(t: &LevyTriplet, zeta: &Functional) -> Result<Self> {
        let lambda = match t.nu.activity {
            Activity::Finite { lambda } => lambda,
            Activity::Infinite => {
                return Err(EffError::Unsupported(
                    "decompounding needs finite activity".into(),
                ));
            }
        };
        let grid = t.grid();
        for c in &zeta.components {
            c.validate(&grid)?;
        }
        grid.node_index(0.0)
            .ok_or_else(|| EffError::InvalidGrid("origin must be a grid node".into()))?;
        Ok(Self {
            grid,
            lambda,
            delta: t.delta,
            gamma: t.gamma,
            zeta: zeta.components.clone(),
            known_lambda: true,
            clamped: AtomicUsize::new(0),
        })
    }

    /// Jump density recovered from a characteristic function of the increment.
    pub fn jump_density(&self, phi: &SpectralFunction) -> Result<GridFunction> {
        let ug = phi.ugrid;
        let (d, lam, gam) = (self.delta, self.lambda, self.gamma);
        let z = |k: usize| {
            let u = ug.x(k);
            phi.values[k] * C64::from_polar((d * lam).exp(), -u * d * gam)
        };
        let n = ug.n;
        let half = n / 2;
        let mut log = vec![C64::new(0.0, 0.0); n];
        log[half] = z(half).ln();
        let unwrap = |prev: f64, v: C64| {
            let mut l = v.ln();
            let two_pi = 2.0 * std::f64::consts::PI;
            l.im += two_pi * ((prev - l.im) / two_pi).round();
            l
        };
        for k in half + 1..n {
            log[k] = unwrap(log[k - 1].im, z(k));
        }
        for k in (0..half).rev() {
            log[k] = unwrap(log[k + 1].im, z(k));
        }
        let spec = SpectralFunction {
            ugrid: ug,
            space_x0: phi.space_x0,
            values: log.iter().map(|l| l / d).collect(),
        };
        let mut nu = inverse_fourier(&spec)?;
        if !self.known_lambda {
            return Ok(nu);
        }
        let i0 = self.grid.node_index(0.0).expect("checked at construction");
        let nb = |j: usize| nu.values.get(j).copied().unwrap_or(0.0);
        nu.values[i0] = 0.5 * (nb(i0.wrapping_sub(1)) + nb(i0 + 1));
        let mass = nu.integral();
        if !(mass > 0.0) {
            return Err(EffError::NonFinite(
                "recovered jump measure has no mass".into(),
            ));
        }
        Ok(nu.scale(self.lambda / mass))
    }

    fn functionals(&self, nu: &GridFunction) -> Vec<f64> {
        self.zeta
            .iter()
            .map(|z| riemann_functional(&self.grid, z, nu, None))
            .collect()
    }

    /// Plug-in of an exact increment law instead of the empirical one.
    pub fn estimate_from_law(&self, p: &MixedMeasure) -> Result<Vec<f64>> {
        let phi = measure_transform(p, &self.grid)?;
        Ok(self.functionals(&self.jump_density(&phi)?))
    }
}

impl Estimator for Decompounder {
    fn name(&self) -> String {
        "decompounding".into()
    }
    fn dim(&self) -> usize {
        self.zeta.len()
    }
    fn estimate(&self, sample: &[f64]) -> Result<Vec<f64>> {
        if sample.is_empty() {
            return Err(EffError::InvalidInput("empty sample".into()));
        }
        let (w, _, c) = linear_bin(&self.grid, sample, |_| 0.0);
        self.clamped.fetch_add(c, Ordering::Relaxed);
        let dx = self.grid.dx;
        let phi = SpectralFunction {
            ugrid: self.grid.dual(),
            space_x0: self.grid.x0,
            values: dft_sum(&self.grid, |j| C64::new(w[j] / dx, 0.0)),
        };
        Ok(self.functionals(&self.jump_density(&phi)?))
    }
    fn diagnostics(&self) -> serde_json::Value {
        serde_json::json!({ "clamped": self.clamped.load(Ordering::Relaxed), "smoothing": "linear binning, bandwidth 2 dx" })
    }
}

/// Decompounding estimate of `∫ ζ dν` with the intensity known.
pub fn estimate_decompound(sample: &[f64], t: &LevyTriplet, zeta: &Functional) -> Result<Vec<f64>> {
    Decompounder::new(t, zeta)?.estimate(sample)
}

/// Spectral estimator of generalized distribution functions of a Lévy
/// jump measure from increments.
#[derive(Debug)]
pub struct SpectralLevyEstimator {
    pub grid: UniformGrid,
    pub delta: f64,
    pub gamma: f64,
    pub zeta: Vec<FunctionalKind>,
    /// Smooth cutoff frequency: weight one below `cutoff/2`, zero above `cutoff`.
    pub cutoff: f64,
    /// Binning refinement relative to `grid`.
    pub refine: usize,
    floored: AtomicUsize,
    clamped: AtomicUsize,
}

impl SpectralLevyEstimator {
    /// The empirical characteristic function `φ̂` and its derivative `φ̂'`
    /// come from linear binning on a grid `refine` times finer than
    /// `grid`. Then `F[xν]^ = φ̂'/(iΔφ̂) - γ` is inverted under a flat-top
    /// `cos²` cutoff, and the estimate is `∫ (ζ(x)/x) (xν)^(x) dx`. `|φ̂|` is
    /// floored at `n^{-1/2} log n`.
    pub fn new(t: &LevyTriplet, zeta: &Functional, grid: UniformGrid, cutoff: f64) -> Result<Self> {
        for c in &zeta.components {
            c.validate(&grid)?;
            if c.contains_origin() || !c.is_indicator() {
                return Err(EffError::InvalidInput(
                    "spectral estimator needs indicators away from the origin".into(),
                ));
            }
        }
        if !(cutoff > 0.0 && cutoff <= grid.nyquist() * (1.0 + 1e-12)) {
            return Err(EffError::InvalidInput(format!(
                "cutoff {cutoff} must lie in (0, {}] (grid Nyquist)",
                grid.nyquist()
            )));
        }
        Ok(Self {
            grid,
            delta: t.delta,
            gamma: t.gamma,
            zeta: zeta.components.clone(),
            cutoff,
            refine: 8,
            floored: AtomicUsize::new(0),
            clamped: AtomicUsize::new(0),
        })
    }

    fn weight(&self, u: f64) -> f64 {
        let (a, c) = (u.abs(), self.cutoff);
        if a <= 0.5 * c {
            1.0
        } else if a <= c {
            (std::f64::consts::PI * (a / c - 0.5)).cos().powi(2)
        } else {
            0.0
        }
    }

    /// Estimate from a transform of `xν` on the dual grid.
    fn functional_of_xnu(&self, fk: impl Fn(usize) -> C64) -> Result<Vec<f64>> {
        let ug = self.grid.dual();
        let spec = SpectralFunction {
            ugrid: ug,
            space_x0: self.grid.x0,
            values: (0..ug.n).map(|k| fk(k) * self.weight(ug.x(k))).collect(),
        };
        let k = inverse_fourier(&spec)?;
        let g = self.grid;
        Ok(self
            .zeta
            .iter()
            .map(|z| {
                let over_x = GridFunction::from_fn(g, |x| if x == 0.0 { 0.0 } else { 1.0 / x });
                riemann_functional(&g, z, &k.mul(&over_x).expect("same grid"), None)
            })
            .collect())
    }

    /// Population version with the exact characteristic function.
    pub fn estimate_population(&self, t: &LevyTriplet) -> Result<Vec<f64>> {
        if !self.grid.compatible(&t.grid()) {
            return Err(EffError::GridMismatch(
                "population estimate needs the model grid".into(),
            ));
        }
        let f = crate::models::xnu_transform(t)?;
        self.functional_of_xnu(|k| f.values[k])
    }
}

impl Estimator for SpectralLevyEstimator {
    fn name(&self) -> String {
        format!("spectral-levy(cutoff={})", self.cutoff)
    }
    fn dim(&self) -> usize {
        self.zeta.len()
    }
    fn estimate(&self, sample: &[f64]) -> Result<Vec<f64>> {
        let m = sample.len();
        if m < 2 {
            return Err(EffError::InvalidInput("sample too small".into()));
        }
        let g = self.grid;
        let fine = UniformGrid::new(g.x0, g.dx / self.refine as f64, g.n * self.refine)?;
        let (w, wx, c) = linear_bin(&fine, sample, |y| y);
        self.clamped.fetch_add(c, Ordering::Relaxed);
        let dxf = fine.dx;
        let phi = dft_sum(&fine, |j| C64::new(w[j] / dxf, 0.0));
        let dphi = dft_sum(&fine, |j| C64::new(0.0, wx[j] / dxf));
        let floor = (m as f64).powf(-0.5) * (m as f64).ln();
        let off = fine.n / 2 - g.n / 2;
        let mut floored = 0;
        let fk: Vec<C64> = (0..g.n)
            .map(|k| {
                let mut p = phi[off + k];
                let a = p.norm();
                if a < floor {
                    floored += 1;
                    p = if a > 0.0 {
                        p * (floor / a)
                    } else {
                        C64::new(floor, 0.0)
                    };
                }
                dphi[off + k] / (p * C64::new(0.0, self.delta)) - self.gamma
            })
            .collect();
        self.floored.fetch_add(floored, Ordering::Relaxed);
        self.functional_of_xnu(|k| fk[k])
    }
    fn diagnostics(&self) -> serde_json::Value {
        serde_json::json!({
            "cutoff": self.cutoff,
            "refine": self.refine,
            "floor": "n^{-1/2} log n",
            "floored_frequencies": self.floored.load(Ordering::Relaxed),
            "clamped": self.clamped.load(Ordering::Relaxed),
        })
    }
}

/// Spectral plug-in estimate of `∫ ζ dν` at a fixed cutoff.
pub fn estimate_spectral_levy(
    sample: &[f64],
    t: &LevyTriplet,
    zeta: &Functional,
    cutoff: f64,
) -> Result<Vec<f64>> {
    SpectralLevyEstimator::new(t, zeta, t.grid(), cutoff)?.estimate(sample)
}

/// Outcome of [`select_cutoff`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CutoffChoice {
    pub cutoff: f64,
    pub ladder: Vec<f64>,
    /// `n ·` MSE summed over coordinates, per ladder entry.
    pub scaled_mse: Vec<f64>,
}

/// Pick the cutoff from `fractions × Nyquist` minimizing a pilot Monte Carlo MSE.
#[allow(clippy::too_many_arguments)]
pub fn select_cutoff(
    t: &LevyTriplet,
    zeta: &Functional,
    grid: UniformGrid,
    fractions: &[f64],
    truth: &[f64],
    n: usize,
    reps: usize,
    seed: u64,
) -> Result<CutoffChoice> {
    let ladder: Vec<f64> = fractions.iter().map(|f| f * grid.nyquist()).collect();
    let ests: Vec<SpectralLevyEstimator> = ladder
        .iter()
        .map(|&u| SpectralLevyEstimator::new(t, zeta, grid, u))
        .collect::<Result<_>>()?;
    let draw = t.sampler()?;
    let errs: Vec<Vec<f64>> = (0..reps)
        .into_par_iter()
        .map(|r| {
            let mut rng = substream(seed, r as u64);
            let sample: Vec<f64> = (0..n).map(|_| draw(&mut rng)).collect();
            ests.iter()
                .map(|e| {
                    e.estimate(&sample)
                        .map(|v| v.iter().zip(truth).map(|(a, b)| (a - b).powi(2)).sum())
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    let scaled_mse: Vec<f64> = (0..ladder.len())
        .map(|i| n as f64 * kahan_sum(errs.iter().map(|e| e[i])) / reps as f64)
        .collect();
    let best = (0..ladder.len())
        .min_by(|&a, &b| scaled_mse[a].total_cmp(&scaled_mse[b]))
        .unwrap_or(0);
    Ok(CutoffChoice {
        cutoff: ladder[best],
        ladder,
        scaled_mse,
    })
}

/// Simulate `y = Kθ + εW` and the efficient estimator `χ̂ = ⟨(K^T)^† ζ, y⟩`
/// for each row of `zetas`. Variances are scaled by `ε^{-2}`; the truth is
/// `⟨ζ, θ⟩`.
pub fn estimate_white_noise(
    op: &WhiteNoiseOp,
    zetas: &[Vec<f64>],
    reps: usize,
    seed: u64,
) -> Result<MCReport> {
    let (k, theta) = match (&op.kind, &op.theta) {
        (WhiteNoiseKind::Matrix { k }, Some(th)) => (k, DVector::from_vec(th.clone())),
        _ => {
            return Err(EffError::Unsupported(
                "white-noise simulation needs the matrix kind".into(),
            ))
        }
    };
    if zetas.is_empty() {
        return Err(EffError::InvalidInput("empty functional".into()));
    }
    let psis: Vec<DVector<f64>> = zetas
        .iter()
        .map(|z| pinv_matrix(k, &DVector::from_vec(z.clone())).map(|r| r.0))
        .collect::<Result<_>>()?;
    let d = psis.len();
    let sigma = DMatrix::from_fn(d, d, |i, j| psis[i].dot(&psis[j]));
    let truth: Vec<f64> = zetas
        .iter()
        .map(|z| DVector::from_vec(z.clone()).dot(&theta))
        .collect();
    let mean_y = k * &theta;
    let eps = op.eps;
    let estimates: Vec<Vec<f64>> = (0..reps)
        .into_par_iter()
        .map(|r| {
            let mut rng = substream(seed, r as u64);
            let y = DVector::from_fn(mean_y.len(), |i, _| {
                let w: f64 = StandardNormal.sample(&mut rng);
                mean_y[i] + eps * w
            });
            psis.iter().map(|p| p.dot(&y)).collect()
        })
        .collect();
    let sigma_rows = (0..d)
        .map(|i| (0..d).map(|j| sigma[(i, j)]).collect())
        .collect();
    let mut rep = MCReport::from_estimates(
        "moore-penrose".into(),
        1,
        seed,
        estimates,
        eps.powi(-2),
        sigma_rows,
        Some(truth),
    )?;
    rep.diagnostics =
        serde_json::json!({ "eps": eps, "min_singular_value": op.min_singular_value });
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::JumpMeasure;

    #[test]
    fn substreams_differ() {
        use rand::Rng;
        let a: Vec<u64> = (0..4).map(|_| substream(1, 0).random()).collect();
        let b: u64 = substream(1, 1).random();
        assert!(a.iter().all(|v| *v == a[0]));
        assert_ne!(a[0], b);
    }

    #[test]
    fn obs_eval_honors_jump() {
        let g = UniformGrid::symmetric(4.0, 64).unwrap();
        let z = FunctionalKind::IndicatorLeft { t: 0.0 };
        let nu = MixedMeasure::from_density(GridFunction::from_fn(g, |x| {
            (-x * x / 2.0).exp() / (2.0 * std::f64::consts::PI).sqrt()
        }));
        let o = z.shifted_obs(&g, 0.0, &nu).unwrap();
        assert_eq!(o.eval(-1e-9).0, 1.0);
        assert_eq!(o.eval(1e-9).0, 0.0);
        assert_eq!(o.eval(0.0).0, 0.5);
        assert!(o.eval(10.0).1);
    }

    #[test]
    fn decompound_population_recovers_truth() {
        let g = UniformGrid::symmetric(64.0, 1 << 15).unwrap();
        let t = LevyTriplet::new(0.0, 1.0, JumpMeasure::normal(g, 1.0, 2.0, 1.0).unwrap()).unwrap();
        let z = Functional::new(vec![FunctionalKind::IndicatorLeft { t: 1.5 }]).unwrap();
        let law = crate::models::marginal_law(&t).unwrap();
        let est = Decompounder::new(&t, &z)
            .unwrap()
            .estimate_from_law(&law.measure)
            .unwrap();
        let truth = statrs::function::erf::erfc(0.5 / std::f64::consts::SQRT_2) / 2.0;
        assert!((est[0] - truth).abs() < 1e-3, "{} vs {truth}", est[0]);
    }

    #[test]
    fn gamma_error_closed_form_matches_gridded_inverse() {
        let spec: crate::models::ModelSpec =
            serde_json::from_value(serde_json::json!({ "model": "decon-gamma-error" })).unwrap();
        let crate::models::BuiltModel::Decon(pair) = spec.build().unwrap() else {
            panic!("decon model")
        };
        let z = Functional::new(vec![FunctionalKind::IndicatorLeft { t: 0.5 }]).unwrap();
        let ia = InfluenceAverage::decon(&pair, &z).unwrap();
        let exact = ia.closed[0].expect("gamma errors have a closed form");
        let mut worst = 0.0f64;
        for k in 0..400 {
            let y = -4.0 + 9.0 * k as f64 / 399.0;
            if (y - 0.5).abs() > 0.25 {
                worst = worst.max((ia.psi[0].eval(y).0 - exact.eval(y)).abs());
            }
        }
        assert!(worst < 1e-4, "sup error {worst}");
    }

    #[test]
    fn white_noise_identity_variance() {
        let k = DMatrix::<f64>::identity(3, 3);
        let op = WhiteNoiseOp::matrix(k, vec![1.0, -1.0, 0.5], 0.1).unwrap();
        let r = estimate_white_noise(&op, &[vec![1.0, 2.0, 2.0]], 10_000, 3).unwrap();
        assert!((r.ratio[0] - 1.0).abs() < 0.05, "{:?}", r.ratio);
        assert!(r.bias_z.unwrap()[0].abs() < 3.0);
    }
}
