//! Description-length accounting: universal integer code, parameter costs
//! and the Gaussian data-encoding cost.

use serde::{Deserialize, Serialize};

use crate::diffusion::RDParams;
use crate::seasonal::SeasonalParams;
use crate::tensor::{Matrix, Tensor3};
use crate::trend::TrendParams;

/// Bits charged per stored floating-point value.
pub const FLOAT_BITS: f64 = 32.0;
/// Quantisation step of the residual code, on the normalised data scale.
pub const QUANTIZATION_STEP: f64 = 1e-4;
pub const SIGMA_FLOOR: f64 = 1e-4;

/// Rissanen's universal code length for a nonnegative integer:
/// `log₂ 2.865064 + log₂ n + log₂ log₂ n + …` over the positive terms.
/// An empty structure (`n = 0`) costs a single flag bit.
pub fn log_star(n: usize) -> f64 {
    if n == 0 {
        return 1.0;
    }
    let mut bits = 2.865064_f64.log2();
    let mut x = (n as f64).log2();
    while x > 0.0 {
        bits += x;
        x = x.log2();
    }
    bits
}

fn log2(n: usize) -> f64 {
    (n as f64).log2()
}

/// `nnz · (index_bits + c_F) + log*(nnz)`.
pub fn structure_cost(nonzeros: usize, index_bits: f64) -> f64 {
    nonzeros as f64 * (index_bits + FLOAT_BITS) + log_star(nonzeros)
}

/// Window geometry the index costs depend on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostContext {
    pub window: usize,
    pub keys: usize,
    pub locs: usize,
    /// Stream length observed so far.
    pub stream_len: usize,
}

/// Per-structure model bits.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ModelCost {
    pub w_key: f64,
    pub w_loc: f64,
    pub growth: f64,
    pub diffusion: f64,
    pub s_time: f64,
    pub s_key: f64,
    pub s_loc: f64,
    pub outliers: f64,
}

impl ModelCost {
    pub fn total(&self) -> f64 {
        self.w_key
            + self.w_loc
            + self.growth
            + self.diffusion
            + self.s_time
            + self.s_key
            + self.s_loc
            + self.outliers
    }
}

pub fn trend_cost(trend: &TrendParams, ctx: &CostContext) -> (f64, f64) {
    let (dk, dl) = (trend.dk(), trend.dl());
    let wk = structure_cost(trend.w_key.count_nonzero(), log2(dk) + log2(ctx.keys));
    let wl = structure_cost(trend.w_loc.count_nonzero(), log2(dl) + log2(ctx.locs));
    (wk, wl)
}

pub fn dynamics_cost(rd: &RDParams) -> (f64, f64) {
    let (dk, dl) = (rd.dk(), rd.dl());
    let a = structure_cost(rd.growth.count_nonzero(), log2(dk) + log2(dl));
    let d = structure_cost(rd.diffusion.count_nonzero(), log2(dk) + 2.0 * log2(dl));
    (a, d)
}

pub fn seasonal_cost(s: &SeasonalParams, ctx: &CostContext) -> (f64, f64, f64) {
    let ds = log2(s.rank().max(1));
    let f = |m: &Matrix, extent: usize| structure_cost(m.count_nonzero(), ds + log2(extent));
    (
        f(&s.s_time, ctx.window),
        f(&s.s_key, ctx.keys),
        f(&s.s_loc, ctx.locs),
    )
}

/// Index bits of one outlier entry: `log n + log k + log l`.
pub fn outlier_index_bits(ctx: &CostContext) -> f64 {
    log2(ctx.stream_len.max(1)) + log2(ctx.keys) + log2(ctx.locs)
}

pub fn outlier_cost(outliers: &Tensor3, ctx: &CostContext) -> f64 {
    structure_cost(outliers.count_nonzero(), outlier_index_bits(ctx))
}

/// Model bits of one parameter set.
pub fn model_cost(
    trend: &TrendParams,
    seasonal: &SeasonalParams,
    outliers: &Tensor3,
    ctx: &CostContext,
) -> ModelCost {
    let (w_key, w_loc) = trend_cost(trend, ctx);
    let (growth, diffusion) = dynamics_cost(&trend.rd);
    let (s_time, s_key, s_loc) = seasonal_cost(seasonal, ctx);
    ModelCost {
        w_key,
        w_loc,
        growth,
        diffusion,
        s_time,
        s_key,
        s_loc,
        outliers: outlier_cost(outliers, ctx),
    }
}

/// Gaussian residual model with a fixed quantisation step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EncodingModel {
    pub mu: f64,
    pub sigma: f64,
    pub quantization_step: f64,
}

impl EncodingModel {
    pub fn new(mu: f64, sigma: f64) -> Self {
        Self {
            mu,
            sigma: sigma.max(SIGMA_FLOOR),
            quantization_step: QUANTIZATION_STEP,
        }
    }

    /// Maximum-likelihood fit with the σ floor applied.
    pub fn fit(values: &[f64]) -> Self {
        Self::fit_iter(values.iter().copied())
    }

    pub fn fit_iter(values: impl Iterator<Item = f64> + Clone) -> Self {
        let (n, sum) = values
            .clone()
            .fold((0usize, 0.0), |(n, s), x| (n + 1, s + x));
        if n == 0 {
            return Self::new(0.0, SIGMA_FLOOR);
        }
        let mu = sum / n as f64;
        let var = values.map(|x| (x - mu) * (x - mu)).sum::<f64>() / n as f64;
        Self::new(mu, var.sqrt())
    }

    /// Bits for one residual: `max(0, −log₂(q · pdf(r)))`.
    pub fn bits(&self, r: f64) -> f64 {
        let z = (r - self.mu) / self.sigma;
        let nats = 0.5 * z * z + (self.sigma * (2.0 * std::f64::consts::PI).sqrt()).ln()
            - self.quantization_step.ln();
        (nats / std::f64::consts::LN_2).max(0.0)
    }
}

/// Data-encoding bits of a residual tensor under `enc`.
pub fn coding_cost(residual: &Tensor3, enc: &EncodingModel) -> f64 {
    residual.as_slice().iter().map(|r| enc.bits(*r)).sum()
}

/// Coding bits with `(μ, σ)` fitted to the residual itself.
pub fn fitted_coding_cost(residual: &Tensor3) -> f64 {
    coding_cost(residual, &EncodingModel::fit(residual.as_slice()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub model_bits: f64,
    pub coding_bits: f64,
    pub total_bits: f64,
}

impl CostBreakdown {
    pub fn new(model_bits: f64, coding_bits: f64) -> Self {
        Self {
            model_bits,
            coding_bits,
            total_bits: model_bits + coding_bits,
        }
    }
}
