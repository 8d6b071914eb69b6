//! Sliding-window stream processing: initial rank search, per-step model
//! refresh and candidate estimation, cost-based model switching, rank
//! neighbourhood search and forecasting.

use std::collections::BTreeSet;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::diffusion::{fit_lm, generate, FreeParams, LmOptions};
use crate::error::{Error, Result};
use crate::estimator::{
    encoding_excluding, model_estimation, sparsify_outliers, EstimationConfig, FullParamSet,
    ModelParams, Ranks,
};
use crate::mdl::CostBreakdown;
use crate::tensor::{Dims, Tensor3};
use crate::trend::expand;

/// Inclusive rank ranges searched at initialisation and bounding the
/// neighbour search.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankGrid {
    pub dk: (usize, usize),
    pub dl: (usize, usize),
    pub ds: (usize, usize),
}

impl Default for RankGrid {
    fn default() -> Self {
        Self {
            dk: (2, 4),
            dl: (2, 4),
            ds: (0, 4),
        }
    }
}

impl RankGrid {
    pub fn single(r: Ranks) -> Self {
        Self {
            dk: (r.dk, r.dk),
            dl: (r.dl, r.dl),
            ds: (r.ds, r.ds),
        }
    }

    pub fn contains(&self, r: Ranks) -> bool {
        (self.dk.0..=self.dk.1).contains(&r.dk)
            && (self.dl.0..=self.dl.1).contains(&r.dl)
            && (self.ds.0..=self.ds.1).contains(&r.ds)
    }

    /// Every triple, lexicographic in `(d_k, d_l, d_s)`.
    pub fn iter(&self) -> impl Iterator<Item = Ranks> + '_ {
        (self.dk.0..=self.dk.1).flat_map(move |dk| {
            (self.dl.0..=self.dl.1)
                .flat_map(move |dl| (self.ds.0..=self.ds.1).map(move |ds| Ranks::new(dk, dl, ds)))
        })
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |(lo, hi): (usize, usize)| lo <= hi;
        if !ok(self.dk) || !ok(self.dl) || !ok(self.ds) || self.dk.0 == 0 || self.dl.0 == 0 {
            return Err(Error::InvalidInput(format!(
                "empty or invalid rank grid {self:?}"
            )));
        }
        Ok(())
    }

    /// Parses `dk_lo-dk_hi,dl_lo-dl_hi,ds_lo-ds_hi`; a bare number is a
    /// one-point range.
    pub fn parse(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        if parts.len() != 3 {
            return Err(Error::InvalidInput(format!(
                "rank grid needs three ranges (dk,dl,ds), got {s:?}"
            )));
        }
        let range = |p: &str| -> Result<(usize, usize)> {
            let bad = || Error::InvalidInput(format!("bad rank range {p:?}"));
            match p.split_once('-') {
                Some((a, b)) => Ok((
                    a.trim().parse().map_err(|_| bad())?,
                    b.trim().parse().map_err(|_| bad())?,
                )),
                None => {
                    let v = p.parse().map_err(|_| bad())?;
                    Ok((v, v))
                }
            }
        };
        let g = Self {
            dk: range(parts[0])?,
            dl: range(parts[1])?,
            ds: range(parts[2])?,
        };
        g.validate()?;
        Ok(g)
    }
}

#[derive(Debug, Clone)]
pub struct StreamConfig {
    /// Window length `L_c`.
    pub window: usize,
    /// Forecast horizon `L_f`.
    pub horizon: usize,
    pub period: usize,
    pub rank_grid: RankGrid,
    /// Steps between candidate estimations.
    pub refit_stride: usize,
    pub seed: u64,
    /// LM iterations of the initial-state refresh.
    pub refresh_lm_iter: usize,
    /// Tuning for every window estimation; period, stream length and window
    /// start are filled in per call.
    pub estimation: EstimationConfig,
}

impl StreamConfig {
    pub fn new(window: usize, horizon: usize, period: usize) -> Self {
        Self {
            window,
            horizon,
            period,
            rank_grid: RankGrid::default(),
            refit_stride: 1,
            seed: 0,
            refresh_lm_iter: 10,
            estimation: EstimationConfig::new(period, window),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.period < 2 {
            return Err(Error::InvalidInput(format!(
                "period must be ≥ 2, got {}",
                self.period
            )));
        }
        if self.window < 2 * self.period {
            return Err(Error::InvalidInput(format!(
                "window {} must cover at least two periods ({})",
                self.window,
                2 * self.period
            )));
        }
        if self.horizon == 0 {
            return Err(Error::InvalidInput("horizon must be ≥ 1".into()));
        }
        if self.refit_stride == 0 {
            return Err(Error::InvalidInput("refit stride must be ≥ 1".into()));
        }
        self.rank_grid.validate()
    }

    fn estimation_for(&self, window_start: usize, stream_len: usize) -> EstimationConfig {
        EstimationConfig {
            period: self.period,
            stream_len,
            window_start,
            seed: self.seed,
            ..self.estimation.clone()
        }
    }
}

/// Result of the initial grid search.
#[derive(Debug, Clone)]
pub struct Initialization {
    pub model: ModelParams,
    pub ranks: Ranks,
    pub cost: CostBreakdown,
    /// Every evaluated triple with its total bits, or the error it raised.
    pub candidates: Vec<(Ranks, std::result::Result<f64, String>)>,
}

fn feasible(r: Ranks, dims: Dims) -> bool {
    r.dk >= 1
        && r.dl >= 1
        && r.dk <= dims.keys
        && r.dl <= dims.locs
        && r.ds <= dims.keys.min(dims.locs).min(dims.len)
}

/// Estimates a model for every feasible rank triple of the grid on the
/// first window and keeps the one with the smallest description length.
pub fn initialize(x0: &Tensor3, cfg: &StreamConfig) -> Result<Initialization> {
    cfg.validate()?;
    let dims = x0.dims();
    if dims.len != cfg.window {
        return Err(Error::InvalidInput(format!(
            "initial window has {} samples, expected {}",
            dims.len, cfg.window
        )));
    }
    let est = cfg.estimation_for(0, dims.len);
    let mut best: Option<(ModelParams, Ranks, CostBreakdown)> = None;
    let mut candidates = Vec::new();
    for r in cfg.rank_grid.iter().filter(|r| feasible(*r, dims)) {
        let outcome = model_estimation(x0, r, &est).and_then(|m| {
            let c = m.cost(x0, dims.len)?;
            Ok((m, c))
        });
        match outcome {
            Ok((m, c)) => {
                candidates.push((r, Ok(c.total_bits)));
                if c.total_bits.is_finite()
                    && best.as_ref().is_none_or(|b| c.total_bits < b.2.total_bits)
                {
                    best = Some((m, r, c));
                }
            }
            Err(e) => candidates.push((r, Err(e.to_string()))),
        }
    }
    match best {
        Some((model, ranks, cost)) => Ok(Initialization {
            model,
            ranks,
            cost,
            candidates,
        }),
        None => Err(Error::Initialization(format!(
            "no rank candidate could be estimated: {}",
            candidates
                .iter()
                .map(|(r, e)| format!(
                    "{r}: {}",
                    e.as_ref().err().map(String::as_str).unwrap_or("?")
                ))
                .collect::<Vec<_>>()
                .join("; ")
        ))),
    }
}

const REFRESH_ROUNDS: usize = 3;

/// Re-anchors `model` on the window starting at `window_start`: the seasonal
/// time factor and outliers are shifted, the initial state is refitted with
/// the dynamics and factors frozen, and outliers are reselected.
pub fn refresh_model(
    model: &mut ModelParams,
    x: &Tensor3,
    window_start: usize,
    stream_len: usize,
    lm_iter: usize,
) -> Result<()> {
    let dims = x.dims();
    if dims.len != model.window_len || dims.keys != model.keys() || dims.locs != model.locs() {
        return Err(Error::Dimension(format!(
            "window {dims:?} does not match the model's ({}, {}, {})",
            model.window_len,
            model.keys(),
            model.locs()
        )));
    }
    if window_start < model.window_start {
        return Err(Error::InvalidInput("windows only move forward".into()));
    }
    let offset = window_start - model.window_start;
    if offset > 0 {
        if let Ok(traj) = generate(&model.trend.rd, offset + 1) {
            let state = traj.state(offset);
            if state.is_finite() {
                model.trend.rd.w0 = state.clone();
                model
                    .trend
                    .rd
                    .w0
                    .as_mut_slice()
                    .iter_mut()
                    .for_each(|v| *v = v.max(0.0));
            }
        }
        model.seasonal = model.seasonal.shifted(offset);
        let mut shifted = Tensor3::zeros(dims);
        for t in offset..dims.len {
            shifted
                .slice_mut(t - offset)
                .copy_from_slice(model.outliers.slice(t));
        }
        model.outliers = shifted;
        model.window_start = window_start;
    }
    let seasonal = model.seasonal_part()?;
    let opts = LmOptions {
        free: FreeParams::InitialState,
        max_iter: lm_iter,
        ..LmOptions::default()
    };
    let ctx = model.cost_context(stream_len);
    // alternate state fit and outlier selection so fresh outliers do not
    // drag the state
    for _ in 0..REFRESH_ROUNDS {
        let target = x.sub(&seasonal)?.sub(&model.outliers)?;
        match fit_lm(
            &target,
            &model.trend.w_key,
            &model.trend.w_loc,
            &model.trend.rd,
            &opts,
        ) {
            Ok(fit) => model.trend.rd = fit.params,
            Err(Error::Divergence { .. }) => {}
            Err(e) => return Err(e),
        }
        let trend = model.trend_part()?;
        let resid = x.sub(&trend)?.sub(&seasonal)?;
        let enc = encoding_excluding(&resid, &model.outliers);
        let next = sparsify_outliers(&resid, &ctx, &enc);
        let unchanged = next == model.outliers;
        model.outliers = next;
        if unchanged {
            break;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastResult {
    /// Absolute time of the first forecast sample.
    pub start: usize,
    pub values: Tensor3,
    pub trend: Tensor3,
    pub seasonal: Tensor3,
    /// Index into the full parameter set of the model that produced it.
    pub model: usize,
    /// The latent system diverged; the trend holds its last window value.
    pub fallback: bool,
}

/// Forecasts the `horizon` samples following `model`'s window.
pub fn forecast_model(
    model: &ModelParams,
    horizon: usize,
    model_index: usize,
) -> Result<ForecastResult> {
    if horizon == 0 {
        return Err(Error::InvalidInput("horizon must be ≥ 1".into()));
    }
    let lc = model.window_len;
    let (k, l) = (model.keys(), model.locs());
    let seasonal = model.seasonal.extend(horizon)?;
    let (trend, fallback) = match generate(&model.trend.rd, lc + horizon) {
        Ok(traj) => {
            let core = traj.core.time_range(lc, lc + horizon)?;
            let t = expand(&core, &model.trend.w_key, &model.trend.w_loc)?;
            if t.is_finite() {
                (t, false)
            } else {
                (hold_last_trend(model, horizon)?, true)
            }
        }
        Err(Error::Divergence { .. }) => (hold_last_trend(model, horizon)?, true),
        Err(e) => return Err(e),
    };
    let values = trend.add(&seasonal)?;
    debug_assert_eq!(values.dims(), Dims::new(horizon, k, l));
    Ok(ForecastResult {
        start: model.window_start + lc,
        values,
        trend,
        seasonal,
        model: model_index,
        fallback,
    })
}

fn hold_last_trend(model: &ModelParams, horizon: usize) -> Result<Tensor3> {
    let (k, l) = (model.keys(), model.locs());
    let last = match model.trend_part() {
        Ok(t) => t.slice(model.window_len - 1).to_vec(),
        Err(_) => vec![0.0; k * l],
    };
    let mut out = Tensor3::zeros(Dims::new(horizon, k, l));
    for h in 0..horizon {
        out.slice_mut(h).copy_from_slice(&last);
    }
    Ok(out)
}

/// Forecast of the active model.
pub fn forecast(f: &FullParamSet, horizon: usize) -> Result<ForecastResult> {
    forecast_model(f.active(), horizon, f.active)
}

/// Outcome of one switch decision.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UpdateDecision {
    pub switched: bool,
    pub without: CostBreakdown,
    pub with_candidate: CostBreakdown,
}

impl UpdateDecision {
    /// Total bits of the alternative that was kept.
    pub fn total_bits(&self) -> f64 {
        if self.switched {
            self.with_candidate.total_bits
        } else {
            self.without.total_bits
        }
    }
}

/// Appends `candidate` when that lowers the description length of the
/// window `x`; the window is then coded by the candidate.
pub fn model_update(
    x: &Tensor3,
    f: &mut FullParamSet,
    candidate: ModelParams,
    activated_at: usize,
    stream_len: usize,
) -> Result<UpdateDecision> {
    let without = f.total_cost(x, stream_len)?;
    let cand_cost = candidate.cost(x, stream_len)?;
    let with_candidate = CostBreakdown::new(
        without.model_bits + cand_cost.model_bits,
        cand_cost.coding_bits,
    );
    let switched = with_candidate.total_bits < without.total_bits;
    if switched {
        f.push(candidate, activated_at)?;
    }
    Ok(UpdateDecision {
        switched,
        without,
        with_candidate,
    })
}

/// The six `±1` neighbours of `r` inside `grid` and the data shape, sorted
/// lexicographically.
pub fn rank_neighbors(r: Ranks, grid: &RankGrid, dims: Dims) -> Vec<Ranks> {
    let mut out = Vec::with_capacity(6);
    let moves: [(isize, isize, isize); 6] = [
        (-1, 0, 0),
        (1, 0, 0),
        (0, -1, 0),
        (0, 1, 0),
        (0, 0, -1),
        (0, 0, 1),
    ];
    for (a, b, c) in moves {
        let (dk, dl, ds) = (r.dk as isize + a, r.dl as isize + b, r.ds as isize + c);
        if dk < 1 || dl < 1 || ds < 0 {
            continue;
        }
        let n = Ranks::new(dk as usize, dl as usize, ds as usize);
        if grid.contains(n) && feasible(n, dims) {
            out.push(n);
        }
    }
    out.sort();
    out
}

/// Result of a neighbour search that found a better rank triple.
#[derive(Debug, Clone)]
pub struct RankChange {
    pub ranks: Ranks,
    pub model: ModelParams,
    pub cost: CostBreakdown,
}

/// Estimates each neighbour of `ranks` on `x` and returns the best one whose
/// single-model description length is strictly below `current_bits`.
pub fn rank_update(
    x: &Tensor3,
    ranks: Ranks,
    current_bits: f64,
    grid: &RankGrid,
    est: &EstimationConfig,
) -> Option<RankChange> {
    let mut best: Option<RankChange> = None;
    for n in rank_neighbors(ranks, grid, x.dims()) {
        let Ok(m) = model_estimation(x, n, est) else {
            continue;
        };
        let Ok(c) = m.cost(x, est.stream_len) else {
            continue;
        };
        let bar = best.as_ref().map_or(current_bits, |b| b.cost.total_bits);
        if c.total_bits < bar {
            best = Some(RankChange {
                ranks: n,
                model: m,
                cost: c,
            });
        }
    }
    best
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SwitchEvent {
    pub time: usize,
    pub model: usize,
    pub ranks_before: Ranks,
    pub ranks_after: Ranks,
    pub bits_without: f64,
    pub bits_with: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepRecord {
    /// The window is `[time − L_c, time)`.
    pub time: usize,
    #[serde(with = "duration_secs")]
    pub elapsed: Duration,
    pub switched: bool,
    pub rank_search: bool,
    pub total_bits: f64,
    pub error: Option<String>,
}

mod duration_secs {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        Ok(Duration::from_secs_f64(f64::deserialize(d)?))
    }
}

/// Sequential stream processor. It only ever sees the current window.
#[derive(Debug, Clone)]
pub struct StreamEngine {
    cfg: StreamConfig,
    pub params: FullParamSet,
    pub ranks: Ranks,
    /// Exclusive end of the last processed window.
    pub time: usize,
    pub forecasts: Vec<ForecastResult>,
    pub switches: Vec<SwitchEvent>,
    pub steps: Vec<StepRecord>,
    /// Absolute `(t, key, loc)` positions ever flagged by the active model.
    pub outlier_log: BTreeSet<(usize, usize, usize)>,
    pub init: Initialization,
}

impl StreamEngine {
    /// Runs the initial grid search on the first `L_c` samples.
    pub fn new(x0: &Tensor3, cfg: StreamConfig) -> Result<Self> {
        let init = initialize(x0, &cfg)?;
        let ranks = init.ranks;
        let params = FullParamSet::new(init.model.clone(), 0);
        let mut engine = Self {
            time: cfg.window,
            cfg,
            params,
            ranks,
            forecasts: Vec::new(),
            switches: Vec::new(),
            steps: Vec::new(),
            outlier_log: BTreeSet::new(),
            init,
        };
        engine.log_outliers();
        Ok(engine)
    }

    pub fn config(&self) -> &StreamConfig {
        &self.cfg
    }

    fn log_outliers(&mut self) {
        let m = self.params.active();
        let d = m.outliers.dims();
        for t in 0..d.len {
            for u in 0..d.keys {
                for v in 0..d.locs {
                    if m.outliers.get(t, u, v) != 0.0 {
                        self.outlier_log.insert((m.window_start + t, u, v));
                    }
                }
            }
        }
    }

    /// Processes the window ending at `time` (exclusive), which must be the
    /// step after the previous one.
    pub fn step(&mut self, window: &Tensor3, time: usize) -> Result<&ForecastResult> {
        let started = Instant::now();
        let lc = self.cfg.window;
        if time != self.time + 1 {
            return Err(Error::InvalidInput(format!(
                "stream steps must be consecutive: expected {}, got {time}",
                self.time + 1
            )));
        }
        if window.dims().len != lc {
            return Err(Error::InvalidInput(format!(
                "window has {} samples, expected {lc}",
                window.dims().len
            )));
        }
        let start = time - lc;
        let stream_len = time;
        let mut record = StepRecord {
            time,
            elapsed: Duration::ZERO,
            switched: false,
            rank_search: false,
            total_bits: f64::NAN,
            error: None,
        };

        if let Err(e) = refresh_model(
            self.params.active_mut(),
            window,
            start,
            stream_len,
            self.cfg.refresh_lm_iter,
        ) {
            record.error = Some(format!("refresh: {e}"));
        }

        let step_index = time - lc;
        if step_index % self.cfg.refit_stride == 0 {
            let est = self.cfg.estimation_for(start, stream_len);
            match model_estimation(window, self.ranks, &est) {
                Ok(candidate) => {
                    let cand_bits = candidate.cost(window, stream_len)?.total_bits;
                    let decision =
                        model_update(window, &mut self.params, candidate, time, stream_len)?;
                    record.total_bits = decision.total_bits();
                    if decision.switched {
                        record.switched = true;
                        record.rank_search = true;
                        let before = self.ranks;
                        if let Some(change) =
                            rank_update(window, self.ranks, cand_bits, &self.cfg.rank_grid, &est)
                        {
                            *self.params.active_mut() = change.model;
                            self.ranks = change.ranks;
                            record.total_bits =
                                self.params.total_cost(window, stream_len)?.total_bits;
                        }
                        self.switches.push(SwitchEvent {
                            time,
                            model: self.params.active,
                            ranks_before: before,
                            ranks_after: self.ranks,
                            bits_without: decision.without.total_bits,
                            bits_with: record.total_bits,
                        });
                    }
                }
                Err(e) => record.error = Some(e.to_string()),
            }
        }
        if record.total_bits.is_nan() {
            record.total_bits = self.params.total_cost(window, stream_len)?.total_bits;
        }
        self.log_outliers();
        let fc = forecast(&self.params, self.cfg.horizon)?;
        self.forecasts.push(fc);
        self.time = time;
        record.elapsed = started.elapsed();
        self.steps.push(record);
        Ok(self.forecasts.last().expect("just pushed"))
    }

    pub fn into_run(self) -> StreamRun {
        StreamRun {
            params: self.params,
            ranks: self.ranks,
            initial_ranks: self.init.ranks,
            forecasts: self.forecasts,
            switches: self.switches,
            steps: self.steps,
            outlier_log: self.outlier_log.into_iter().collect(),
        }
    }
}

/// Everything a completed stream run produced.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StreamRun {
    pub params: FullParamSet,
    pub ranks: Ranks,
    pub initial_ranks: Ranks,
    pub forecasts: Vec<ForecastResult>,
    pub switches: Vec<SwitchEvent>,
    pub steps: Vec<StepRecord>,
    pub outlier_log: Vec<(usize, usize, usize)>,
}

/// Runs the full loop over `x`: initialise on the first `L_c` samples,
/// then one step per further sample.
pub fn run_stream(x: &Tensor3, cfg: &StreamConfig) -> Result<StreamRun> {
    run_stream_with(x, cfg, |_| {})
}

/// [`run_stream`] with a callback after every step.
pub fn run_stream_with(
    x: &Tensor3,
    cfg: &StreamConfig,
    mut on_step: impl FnMut(&StepRecord),
) -> Result<StreamRun> {
    cfg.validate()?;
    let n = x.dims().len;
    if n <= cfg.window {
        return Err(Error::InvalidInput(format!(
            "stream of {n} samples needs more than the window length {}",
            cfg.window
        )));
    }
    let mut engine = StreamEngine::new(&x.time_range(0, cfg.window)?, cfg.clone())?;
    for t in cfg.window + 1..=n {
        let window = x.time_range(t - cfg.window, t)?;
        engine.step(&window, t)?;
        on_step(engine.steps.last().expect("step recorded"));
    }
    Ok(engine.into_run())
}
