//! Joint estimation of the trend, seasonal and outlier components of one
//! window by alternating updates, plus the MDL outlier selection.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::diffusion::{fit_lm, generate, Diffusion, FreeParams, LmOptions, RDParams};
use crate::error::{Error, Result};
use crate::mdl::{self, CostBreakdown, CostContext, EncodingModel, ModelCost};
use crate::seasonal::{cp_als, stl_decompose, update_seasonal_factor, SeasonalParams};
use crate::tensor::{Dims, Matrix, Mode, Tensor3};
use crate::trend::{ntd_init, update_trend_factor, TrendParams};

/// Latent ranks `(d_k, d_l, d_s)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Ranks {
    pub dk: usize,
    pub dl: usize,
    pub ds: usize,
}

impl Ranks {
    pub const fn new(dk: usize, dl: usize, ds: usize) -> Self {
        Self { dk, dl, ds }
    }
}

impl fmt::Display for Ranks {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.dk, self.dl, self.ds)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitQuality {
    Converged,
    IterationCap,
    /// An outer iteration would have raised the fit error; the previous
    /// iterate was kept.
    Stalled,
    /// The latent system diverged during fitting; the best iterate so far
    /// was kept.
    Diverged,
}

/// One window model: trend, seasonal and outlier components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub ranks: Ranks,
    pub trend: TrendParams,
    pub seasonal: SeasonalParams,
    /// Dense storage, mostly exact zeros.
    pub outliers: Tensor3,
    /// Absolute time of the first window sample.
    pub window_start: usize,
    pub window_len: usize,
    pub quality: FitQuality,
    /// Observed-space Frobenius error after initialisation and after every
    /// accepted outer iteration.
    pub fit_errors: Vec<f64>,
}

impl ModelParams {
    pub fn keys(&self) -> usize {
        self.outliers.dims().keys
    }

    pub fn locs(&self) -> usize {
        self.outliers.dims().locs
    }

    pub fn trend_part(&self) -> Result<Tensor3> {
        self.trend.reconstruct(self.window_len)
    }

    pub fn seasonal_part(&self) -> Result<Tensor3> {
        self.seasonal.reconstruct()
    }

    /// `X̂_d + X̂_s + X̂_o` over the window.
    pub fn reconstruct(&self) -> Result<Tensor3> {
        let mut out = self.trend_part()?;
        out.add_assign(&self.seasonal_part()?)?;
        out.add_assign(&self.outliers)?;
        Ok(out)
    }

    /// `X − X̂_d − X̂_s − X̂_o`.
    pub fn residual(&self, x: &Tensor3) -> Result<Tensor3> {
        x.sub(&self.reconstruct()?)
    }

    pub fn cost_context(&self, stream_len: usize) -> CostContext {
        CostContext {
            window: self.window_len,
            keys: self.keys(),
            locs: self.locs(),
            stream_len,
        }
    }

    pub fn model_cost(&self, stream_len: usize) -> ModelCost {
        mdl::model_cost(
            &self.trend,
            &self.seasonal,
            &self.outliers,
            &self.cost_context(stream_len),
        )
    }

    /// Single-model description length of `x`.
    pub fn cost(&self, x: &Tensor3, stream_len: usize) -> Result<CostBreakdown> {
        let coding = mdl::fitted_coding_cost(&self.residual(x)?);
        Ok(CostBreakdown::new(
            self.model_cost(stream_len).total(),
            coding,
        ))
    }
}

/// A model together with the absolute time it became active.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelEntry {
    pub activated_at: usize,
    pub params: ModelParams,
}

/// Every model used so far; the last one is active.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FullParamSet {
    pub models: Vec<ModelEntry>,
    pub active: usize,
}

impl FullParamSet {
    pub fn new(first: ModelParams, activated_at: usize) -> Self {
        Self {
            models: vec![ModelEntry {
                activated_at,
                params: first,
            }],
            active: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }

    pub fn active(&self) -> &ModelParams {
        &self.models[self.active].params
    }

    pub fn active_mut(&mut self) -> &mut ModelParams {
        &mut self.models[self.active].params
    }

    /// Appends a model and makes it active.
    pub fn push(&mut self, params: ModelParams, activated_at: usize) -> Result<()> {
        if let Some(last) = self.models.last() {
            if activated_at <= last.activated_at {
                return Err(Error::InvalidInput(format!(
                    "activation time {activated_at} does not follow {}",
                    last.activated_at
                )));
            }
        }
        self.models.push(ModelEntry {
            activated_at,
            params,
        });
        self.active = self.models.len() - 1;
        Ok(())
    }

    pub fn activation_times(&self) -> Vec<usize> {
        self.models.iter().map(|m| m.activated_at).collect()
    }

    /// `Σ_Θ CostM⟨Θ⟩`.
    pub fn model_bits(&self, stream_len: usize) -> f64 {
        self.models
            .iter()
            .map(|m| m.params.model_cost(stream_len).total())
            .sum()
    }

    /// Total description length of the window `x`: model bits of every
    /// stored model plus the coding bits of `x` under the active model.
    pub fn total_cost(&self, x: &Tensor3, stream_len: usize) -> Result<CostBreakdown> {
        let coding = mdl::fitted_coding_cost(&self.active().residual(x)?);
        Ok(CostBreakdown::new(self.model_bits(stream_len), coding))
    }
}

#[derive(Debug, Clone)]
pub struct EstimationConfig {
    pub period: usize,
    /// Stream length observed so far (enters the outlier index cost).
    pub stream_len: usize,
    /// Absolute time of the first window sample.
    pub window_start: usize,
    pub seed: u64,
    pub max_outer: usize,
    /// Outer loop stops once the relative fit-error decrease is below this.
    pub outer_tol: f64,
    pub lm_max_iter: usize,
    /// Multiplicative factor updates per outer iteration.
    pub factor_steps: usize,
    pub ntd_iters: usize,
    pub cp_sweeps: usize,
    pub cp_tol: f64,
}

impl EstimationConfig {
    pub fn new(period: usize, stream_len: usize) -> Self {
        Self {
            period,
            stream_len,
            window_start: 0,
            seed: 0,
            max_outer: 20,
            outer_tol: 1e-4,
            lm_max_iter: 10,
            factor_steps: 5,
            ntd_iters: 100,
            cp_sweeps: 50,
            cp_tol: 1e-6,
        }
    }
}

/// STL on every `(key, loc)` fibre.
fn stl_split(x: &Tensor3, period: usize) -> Result<(Tensor3, Tensor3)> {
    let dims = x.dims();
    let mut trend = Tensor3::zeros(dims);
    let mut seasonal = Tensor3::zeros(dims);
    for u in 0..dims.keys {
        for v in 0..dims.locs {
            let r = stl_decompose(&x.fiber(u, v), period)?;
            trend.set_fiber(u, v, &r.trend);
            seasonal.set_fiber(u, v, &r.seasonal);
        }
    }
    Ok((trend, seasonal))
}

/// Growth rate and initial value of each latent series from a log-linear
/// least-squares fit of the NTD core.
fn initial_dynamics(core: &Tensor3) -> Result<RDParams> {
    let d = core.dims();
    let (dk, dl) = (d.keys, d.locs);
    let mut growth = Matrix::zeros(dk, dl);
    let mut w0 = Matrix::zeros(dk, dl);
    let n = d.len as f64;
    let tm = (n - 1.0) / 2.0;
    let den: f64 = (0..d.len).map(|t| (t as f64 - tm).powi(2)).sum();
    for i in 0..dk {
        for j in 0..dl {
            let logs: Vec<f64> = (0..d.len)
                .map(|t| core.get(t, i, j).max(1e-12).ln())
                .collect();
            let lm = logs.iter().sum::<f64>() / n;
            let slope = if den > 0.0 {
                logs.iter()
                    .enumerate()
                    .map(|(t, y)| (t as f64 - tm) * (y - lm))
                    .sum::<f64>()
                    / den
            } else {
                0.0
            };
            let slope = slope.clamp(-0.1, 0.1);
            growth[(i, j)] = slope;
            w0[(i, j)] = (lm - slope * tm).exp();
        }
    }
    RDParams::new(growth, Diffusion::zeros(dk, dl), w0)
}

fn zero_model(dims: Dims, ranks: Ranks, cfg: &EstimationConfig) -> ModelParams {
    let rd = RDParams::zeros(ranks.dk, ranks.dl);
    let mut w_key = Matrix::zeros(ranks.dk, dims.keys);
    let mut w_loc = Matrix::zeros(ranks.dl, dims.locs);
    for i in 0..ranks.dk {
        w_key[(i, i % dims.keys)] = 1.0;
    }
    for j in 0..ranks.dl {
        w_loc[(j, j % dims.locs)] = 1.0;
    }
    ModelParams {
        ranks,
        trend: TrendParams { w_key, w_loc, rd },
        seasonal: SeasonalParams::empty(dims.len, dims.keys, dims.locs, cfg.period),
        outliers: Tensor3::zeros(dims),
        window_start: cfg.window_start,
        window_len: dims.len,
        quality: FitQuality::Converged,
        fit_errors: vec![0.0],
    }
}

/// Estimates one window model of ranks `ranks`.
///
/// Initialises from STL + nonnegative Tucker (trend) + CP (seasonal), then
/// alternates: LM fit of the latent system, keyword and location factor
/// updates, the three seasonal factor updates, and outlier selection. An
/// outer iteration that would raise the observed-space error is discarded
/// and the loop stops.
pub fn model_estimation(x: &Tensor3, ranks: Ranks, cfg: &EstimationConfig) -> Result<ModelParams> {
    let dims = x.dims();
    if !x.is_finite() {
        return Err(Error::InvalidInput(
            "window contains non-finite values".into(),
        ));
    }
    if ranks.dk == 0 || ranks.dl == 0 {
        return Err(Error::InvalidInput(format!(
            "trend ranks must be ≥ 1, got {ranks}"
        )));
    }
    if ranks.dk > dims.keys {
        return Err(Error::RankTooLarge {
            mode: "key",
            rank: ranks.dk,
            size: dims.keys,
        });
    }
    if ranks.dl > dims.locs {
        return Err(Error::RankTooLarge {
            mode: "loc",
            rank: ranks.dl,
            size: dims.locs,
        });
    }
    if ranks.ds > 0 && dims.len < 2 * cfg.period {
        return Err(Error::Initialization(format!(
            "window of {} samples is shorter than two periods ({}); use a larger window",
            dims.len,
            2 * cfg.period
        )));
    }
    if x.as_slice().iter().all(|v| *v == 0.0) {
        return Ok(zero_model(dims, ranks, cfg));
    }

    // Initialisation.
    let (trend_init, seasonal_init) = if ranks.ds > 0 {
        stl_split(x, cfg.period)?
    } else {
        (x.clone(), Tensor3::zeros(dims))
    };
    let ntd = ntd_init(&trend_init, ranks.dk, ranks.dl, cfg.ntd_iters, cfg.seed)?;
    // Dynamics seeded from a log-linear fit of the NTD core, then refined
    // against that core in latent space where the fit is cheap.
    let seed_rd = initial_dynamics(&ntd.core)?;
    let eye_k = Matrix::identity(ranks.dk);
    let eye_l = Matrix::identity(ranks.dl);
    let latent_opts = LmOptions {
        max_iter: cfg.lm_max_iter * 3,
        ..LmOptions::default()
    };
    let rd = match fit_lm(&ntd.core, &eye_k, &eye_l, &seed_rd, &latent_opts) {
        Ok(f) => f.params,
        Err(Error::Divergence { .. }) => seed_rd,
        Err(e) => return Err(e),
    };
    let mut trend = TrendParams {
        w_key: ntd.w_key,
        w_loc: ntd.w_loc,
        rd,
    };
    trend.normalize();
    let seasonal = cp_als(
        &seasonal_init,
        ranks.ds,
        cfg.period,
        cfg.cp_sweeps,
        cfg.cp_tol,
        cfg.seed,
    )?
    .params;

    let mut best = ModelParams {
        ranks,
        trend,
        seasonal,
        outliers: Tensor3::zeros(dims),
        window_start: cfg.window_start,
        window_len: dims.len,
        quality: FitQuality::IterationCap,
        fit_errors: Vec::new(),
    };
    let trend0 = match best.trend_part() {
        Ok(t) => t,
        Err(Error::Divergence { .. }) => {
            best.trend.rd.growth = Matrix::zeros(ranks.dk, ranks.dl);
            best.trend_part()?
        }
        Err(e) => return Err(e),
    };
    let mut seasonal_part = best.seasonal_part()?;
    let mut err_prev = x.sub(&trend0)?.sub(&seasonal_part)?.frobenius_norm();
    best.fit_errors.push(err_prev);

    let ctx = best.cost_context(cfg.stream_len);
    let lm_opts = LmOptions {
        free: FreeParams::All,
        max_iter: cfg.lm_max_iter,
        ..LmOptions::default()
    };

    for _ in 0..cfg.max_outer {
        let mut cand = best.clone();

        // trend: latent system, then the two factor matrices
        let target_d = x.sub(&seasonal_part)?.sub(&cand.outliers)?;
        let fit = match fit_lm(
            &target_d,
            &cand.trend.w_key,
            &cand.trend.w_loc,
            &cand.trend.rd,
            &lm_opts,
        ) {
            Ok(f) => f,
            Err(Error::Divergence { .. }) => {
                best.quality = FitQuality::Diverged;
                break;
            }
            Err(e) => return Err(e),
        };
        cand.trend.rd = fit.params;
        let traj = generate(&cand.trend.rd, dims.len)?;
        for _ in 0..cfg.factor_steps.max(1) {
            cand.trend.w_key = update_trend_factor(
                &target_d,
                &traj,
                &cand.trend.w_key,
                &cand.trend.w_loc,
                Mode::Key,
            )?;
            cand.trend.w_loc = update_trend_factor(
                &target_d,
                &traj,
                &cand.trend.w_key,
                &cand.trend.w_loc,
                Mode::Loc,
            )?;
        }
        cand.trend.normalize();
        let cand_trend = match cand.trend_part() {
            Ok(t) => t,
            Err(Error::Divergence { .. }) => {
                best.quality = FitQuality::Diverged;
                break;
            }
            Err(e) => return Err(e),
        };

        // seasonal: time, key, loc
        let mut cand_seasonal = seasonal_part.clone();
        if ranks.ds > 0 {
            let target_s = x.sub(&cand_trend)?.sub(&cand.outliers)?;
            for mode in Mode::ALL {
                let s = update_seasonal_factor(&target_s, &cand.seasonal, mode)?;
                match mode {
                    Mode::Time => cand.seasonal.s_time = s,
                    Mode::Key => cand.seasonal.s_key = s,
                    Mode::Loc => cand.seasonal.s_loc = s,
                }
            }
            cand_seasonal = cand.seasonal.reconstruct()?;
        }

        // outliers
        let resid = x.sub(&cand_trend)?.sub(&cand_seasonal)?;
        let enc = encoding_excluding(&resid, &cand.outliers);
        cand.outliers = sparsify_outliers(&resid, &ctx, &enc);

        let err = resid.sub(&cand.outliers)?.frobenius_norm();
        if !err.is_finite() || err > err_prev {
            best.quality = FitQuality::Stalled;
            break;
        }
        let rel = if err_prev > 0.0 {
            (err_prev - err) / err_prev
        } else {
            0.0
        };
        cand.fit_errors.push(err);
        best = cand;
        seasonal_part = cand_seasonal;
        err_prev = err;
        if rel < cfg.outer_tol {
            best.quality = FitQuality::Converged;
            break;
        }
    }
    Ok(best)
}

/// Residual model fitted on the entries not currently flagged as outliers.
pub fn encoding_excluding(residual: &Tensor3, flagged: &Tensor3) -> EncodingModel {
    let vals = residual
        .as_slice()
        .iter()
        .zip(flagged.as_slice())
        .filter(|(_, o)| **o == 0.0)
        .map(|(r, _)| *r);
    EncodingModel::fit_iter(vals)
}

/// Selects the outlier tensor for `residual = X − X̂_d − X̂_s`.
///
/// Every element gets a net gain: the coding bits it saves under `enc`
/// when moved into the outlier tensor, minus its index and value bits.
/// The best prefix of the gains sorted descending (accounting for the
/// `log*` count term) is taken as the starting set. Single-element flips
/// are then applied while any of them lowers the description length with
/// `(μ, σ)` refitted to the coded residual, so on return no single flip
/// can lower it.
pub fn sparsify_outliers(residual: &Tensor3, ctx: &CostContext, enc: &EncodingModel) -> Tensor3 {
    let r = residual.as_slice();
    let n = r.len();
    let elem = mdl::outlier_index_bits(ctx) + mdl::FLOAT_BITS;
    let zero_bits = enc.bits(0.0);
    let mut gains: Vec<(f64, usize)> = r
        .iter()
        .enumerate()
        .map(|(i, v)| (enc.bits(*v) - zero_bits - elem, i))
        .collect();
    gains.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut best_m = 0;
    let mut best_val = 0.0;
    let mut acc = 0.0;
    for (m, (g, _)) in gains.iter().enumerate() {
        if *g <= 0.0 {
            break;
        }
        acc += g;
        let val = acc - (mdl::log_star(m + 1) - mdl::log_star(0));
        if val > best_val {
            best_val = val;
            best_m = m + 1;
        }
    }
    let mut flagged = vec![false; n];
    for (_, i) in &gains[..best_m] {
        flagged[*i] = true;
    }
    refine_flags(r, &mut flagged, elem, enc.quantization_step);
    let mut out = Tensor3::zeros(residual.dims());
    for (i, f) in flagged.iter().enumerate() {
        if *f {
            out.as_mut_slice()[i] = r[i];
        }
    }
    out
}

/// Description length of the coded residual plus outlier bits, from the
/// residual's first two moments.
fn moment_cost(count: f64, s1: f64, s2: f64, m: usize, elem: f64, q: f64) -> f64 {
    let mu = s1 / count;
    let ss = (s2 - s1 * mu).max(0.0);
    let sigma = (ss / count).sqrt().max(mdl::SIGMA_FLOOR);
    let c0 = (sigma * (2.0 * std::f64::consts::PI).sqrt() / q).ln();
    let nats = count * c0 + ss / (2.0 * sigma * sigma);
    nats / std::f64::consts::LN_2 + mdl::structure_cost(m, elem - mdl::FLOAT_BITS)
}

fn refine_flags(r: &[f64], flagged: &mut [bool], elem: f64, q: f64) {
    let n = r.len();
    if n == 0 {
        return;
    }
    // Per-element bits are never floored when σ·√(2π) ≥ q, which makes the
    // coding cost a function of the moments alone.
    let closed_form = mdl::SIGMA_FLOOR * (2.0 * std::f64::consts::PI).sqrt() >= q;
    let direct = |flagged: &[bool]| -> f64 {
        let coded: Vec<f64> = r
            .iter()
            .zip(flagged)
            .map(|(v, f)| if *f { 0.0 } else { *v })
            .collect();
        let enc = EncodingModel {
            quantization_step: q,
            ..EncodingModel::fit(&coded)
        };
        let m = flagged.iter().filter(|f| **f).count();
        coded.iter().map(|v| enc.bits(*v)).sum::<f64>()
            + mdl::structure_cost(m, elem - mdl::FLOAT_BITS)
    };
    let count = n as f64;
    for _ in 0..n {
        let (mut s1, mut s2, mut m) = (0.0, 0.0, 0usize);
        for (v, f) in r.iter().zip(flagged.iter()) {
            if *f {
                m += 1;
            } else {
                s1 += v;
                s2 += v * v;
            }
        }
        let current = if closed_form {
            moment_cost(count, s1, s2, m, elem, q)
        } else {
            direct(flagged)
        };
        let mut best: Option<(f64, usize)> = None;
        for i in 0..n {
            let v = r[i];
            let cost = if closed_form {
                if flagged[i] {
                    moment_cost(count, s1 + v, s2 + v * v, m - 1, elem, q)
                } else {
                    moment_cost(count, s1 - v, s2 - v * v, m + 1, elem, q)
                }
            } else {
                flagged[i] = !flagged[i];
                let c = direct(flagged);
                flagged[i] = !flagged[i];
                c
            };
            if cost < current - 1e-9 * current.abs().max(1.0) && best.is_none_or(|(b, _)| cost < b)
            {
                best = Some((cost, i));
            }
        }
        match best {
            Some((_, i)) => flagged[i] = !flagged[i],
            None => break,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn ctx(dims: Dims) -> CostContext {
        CostContext {
            window: dims.len,
            keys: dims.keys,
            locs: dims.locs,
            stream_len: dims.len,
        }
    }

    fn noise(dims: Dims, sigma: f64, seed: u64) -> Tensor3 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = Normal::new(0.0, sigma).unwrap();
        Tensor3::from_fn(dims, |_, _, _| n.sample(&mut rng))
    }

    #[test]
    fn zero_residual_has_no_outliers() {
        let dims = Dims::new(10, 2, 3);
        let r = Tensor3::zeros(dims);
        let enc = EncodingModel::fit(r.as_slice());
        assert_eq!(sparsify_outliers(&r, &ctx(dims), &enc).count_nonzero(), 0);
    }

    #[test]
    fn single_large_spike_is_the_only_outlier() {
        let dims = Dims::new(20, 3, 4);
        let mut r = noise(dims, 0.01, 3);
        r.set(7, 1, 2, 0.5);
        let enc = EncodingModel::new(0.0, 0.01);
        let o = sparsify_outliers(&r, &ctx(dims), &enc);
        assert_eq!(o.count_nonzero(), 1);
        assert_eq!(o.get(7, 1, 2), 0.5);
    }

    #[test]
    fn residuals_within_one_sigma_stay_coded() {
        let dims = Dims::new(20, 3, 4);
        let r = noise(dims, 0.01, 5).map(|v| v.clamp(-0.01, 0.01));
        let enc = EncodingModel::new(0.0, 0.01);
        assert_eq!(sparsify_outliers(&r, &ctx(dims), &enc).count_nonzero(), 0);
    }

    #[test]
    fn zero_window_gives_zero_model() {
        let x = Tensor3::zeros(Dims::new(24, 3, 3));
        let cfg = EstimationConfig::new(6, 24);
        let m = model_estimation(&x, Ranks::new(2, 2, 1), &cfg).unwrap();
        assert!(m.trend.rd.w0.as_slice().iter().all(|v| *v == 0.0));
        assert_eq!(m.outliers.count_nonzero(), 0);
        assert_eq!(m.residual(&x).unwrap().frobenius_norm(), 0.0);
    }

    #[test]
    fn rank_zero_seasonal_is_identically_zero() {
        let x = Tensor3::from_fn(Dims::new(30, 3, 3), |t, u, v| {
            0.2 + 0.01 * t as f64 * (1 + u + v) as f64
        });
        let cfg = EstimationConfig::new(6, 30);
        let m = model_estimation(&x, Ranks::new(1, 1, 0), &cfg).unwrap();
        assert_eq!(m.seasonal.rank(), 0);
        assert_eq!(m.seasonal_part().unwrap().frobenius_norm(), 0.0);
    }

    #[test]
    fn short_window_with_seasonality_is_rejected() {
        let x = Tensor3::from_fn(Dims::new(10, 2, 2), |t, _, _| t as f64);
        let cfg = EstimationConfig::new(6, 10);
        assert!(matches!(
            model_estimation(&x, Ranks::new(1, 1, 1), &cfg),
            Err(Error::Initialization(_))
        ));
    }

    #[test]
    fn fit_errors_never_increase_and_are_deterministic() {
        let x = Tensor3::from_fn(Dims::new(36, 3, 4), |t, u, v| {
            0.3 + 0.1 * ((t as f64) * 0.05 * (u as f64 - 1.0)).exp() * (v + 1) as f64 / 4.0
                + 0.05 * (2.0 * std::f64::consts::PI * t as f64 / 6.0).sin()
        });
        let cfg = EstimationConfig::new(6, 36);
        let a = model_estimation(&x, Ranks::new(2, 2, 1), &cfg).unwrap();
        for w in a.fit_errors.windows(2) {
            assert!(w[1] <= w[0] + 1e-6);
        }
        let b = model_estimation(&x, Ranks::new(2, 2, 1), &cfg).unwrap();
        assert_eq!(a, b);
    }
}
