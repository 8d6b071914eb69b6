//! Model documents (JSON) and plot-data tables (CSV).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{csv_error, csv_writer, write_text, LoggedForecast, Metadata, Normalization};
use crate::diffusion::{generate, Diffusion, RDParams};
use crate::error::{Error, Result};
use crate::estimator::{FitQuality, FullParamSet, ModelEntry, ModelParams, Ranks};
use crate::mdl::{CostBreakdown, ModelCost};
use crate::seasonal::SeasonalParams;
use crate::tensor::{Dims, Matrix, Tensor3};
use crate::trend::TrendParams;

/// Diffusion strengths at or below this fraction of the largest entry are
/// left out of edge lists. Presentation only.
pub const EDGE_FLOOR: f64 = 0.01;

const FORMAT: &str = "diffstream-model/1";

/// Latent group `group` receives from member `from` into member `to` at
/// rate `strength`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiffusionEdge {
    pub group: usize,
    pub from: usize,
    pub to: usize,
    pub strength: f64,
}

/// Edges `d_ijj' > EDGE_FLOOR · max(d)`.
pub fn diffusion_edges(d: &Diffusion) -> Vec<DiffusionEdge> {
    let floor = EDGE_FLOOR * d.max();
    let mut out = Vec::new();
    for i in 0..d.dk() {
        for j in 0..d.dl() {
            for jp in 0..d.dl() {
                let s = d.get(i, j, jp);
                if s > floor && s > 0.0 {
                    out.push(DiffusionEdge {
                        group: i,
                        from: jp,
                        to: j,
                        strength: s,
                    });
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutlierEntry {
    /// Absolute time.
    pub t: usize,
    pub key: usize,
    pub loc: usize,
    pub value: f64,
}

/// One model in readable form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRecord {
    pub activated_at: usize,
    pub ranks: Ranks,
    pub window_start: usize,
    pub window_len: usize,
    pub keys: usize,
    pub locs: usize,
    pub period: usize,
    pub quality: FitQuality,
    pub fit_errors: Vec<f64>,
    pub growth: Vec<Vec<f64>>,
    /// `diffusion[i][j][j']`.
    pub diffusion: Vec<Vec<Vec<f64>>>,
    pub w0: Vec<Vec<f64>>,
    pub w_key: Vec<Vec<f64>>,
    pub w_loc: Vec<Vec<f64>>,
    pub s_time: Vec<Vec<f64>>,
    pub s_key: Vec<Vec<f64>>,
    pub s_loc: Vec<Vec<f64>>,
    pub outliers: Vec<OutlierEntry>,
    pub diffusion_edges: Vec<DiffusionEdge>,
    pub model_cost: ModelCost,
    pub model_bits: f64,
}

/// A full parameter set with labels and costs, as written to disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDocument {
    pub format: String,
    pub active: usize,
    pub stream_len: usize,
    pub metadata: Option<Metadata>,
    pub normalization: Option<Normalization>,
    /// Cost of the last window under the active model, when it was supplied.
    pub window_cost: Option<CostBreakdown>,
    pub models: Vec<ModelRecord>,
}

fn rows(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.rows()).map(|r| m.row(r).to_vec()).collect()
}

fn matrix(name: &str, rows: &[Vec<f64>], r: usize, c: usize) -> Result<Matrix> {
    if rows.len() != r || rows.iter().any(|row| row.len() != c) {
        return Err(Error::InvalidInput(format!("{name} must be {r}x{c}")));
    }
    Matrix::from_vec(r, c, rows.concat())
}

impl ModelRecord {
    fn new(entry: &ModelEntry, stream_len: usize) -> Self {
        let m = &entry.params;
        let rd = &m.trend.rd;
        let d = &rd.diffusion;
        let diffusion = (0..d.dk())
            .map(|i| {
                (0..d.dl())
                    .map(|j| (0..d.dl()).map(|jp| d.get(i, j, jp)).collect())
                    .collect()
            })
            .collect();
        let od = m.outliers.dims();
        let mut outliers = Vec::new();
        for t in 0..od.len {
            for u in 0..od.keys {
                for v in 0..od.locs {
                    let value = m.outliers.get(t, u, v);
                    if value != 0.0 {
                        outliers.push(OutlierEntry {
                            t: m.window_start + t,
                            key: u,
                            loc: v,
                            value,
                        });
                    }
                }
            }
        }
        let model_cost = m.model_cost(stream_len);
        Self {
            activated_at: entry.activated_at,
            ranks: m.ranks,
            window_start: m.window_start,
            window_len: m.window_len,
            keys: m.keys(),
            locs: m.locs(),
            period: m.seasonal.period,
            quality: m.quality,
            fit_errors: m.fit_errors.clone(),
            growth: rows(&rd.growth),
            diffusion,
            w0: rows(&rd.w0),
            w_key: rows(&m.trend.w_key),
            w_loc: rows(&m.trend.w_loc),
            s_time: rows(&m.seasonal.s_time),
            s_key: rows(&m.seasonal.s_key),
            s_loc: rows(&m.seasonal.s_loc),
            outliers,
            diffusion_edges: diffusion_edges(d),
            model_cost,
            model_bits: model_cost.total(),
        }
    }

    fn to_entry(&self) -> Result<ModelEntry> {
        let Ranks { dk, dl, ds } = self.ranks;
        let (lc, k, l) = (self.window_len, self.keys, self.locs);
        if self.diffusion.len() != dk
            || self
                .diffusion
                .iter()
                .any(|m| m.len() != dl || m.iter().any(|r| r.len() != dl))
        {
            return Err(Error::InvalidInput(format!(
                "diffusion must be {dk}x{dl}x{dl}"
            )));
        }
        let mut diffusion = Diffusion::zeros(dk, dl);
        for (i, m) in self.diffusion.iter().enumerate() {
            for (j, r) in m.iter().enumerate() {
                for (jp, v) in r.iter().enumerate() {
                    if j != jp {
                        if *v < 0.0 {
                            return Err(Error::InvalidInput(
                                "diffusion strengths must be nonnegative".into(),
                            ));
                        }
                        diffusion.set(i, j, jp, *v);
                    }
                }
            }
        }
        let rd = RDParams::new(
            matrix("growth", &self.growth, dk, dl)?,
            diffusion,
            matrix("w0", &self.w0, dk, dl)?,
        )?;
        let trend = TrendParams {
            w_key: matrix("w_key", &self.w_key, dk, k)?,
            w_loc: matrix("w_loc", &self.w_loc, dl, l)?,
            rd,
        };
        let seasonal = SeasonalParams {
            s_time: matrix("s_time", &self.s_time, ds, lc)?,
            s_key: matrix("s_key", &self.s_key, ds, k)?,
            s_loc: matrix("s_loc", &self.s_loc, ds, l)?,
            period: self.period,
        };
        let mut outliers = Tensor3::zeros(Dims::new(lc, k, l));
        for o in &self.outliers {
            if o.t < self.window_start || o.t >= self.window_start + lc || o.key >= k || o.loc >= l
            {
                return Err(Error::InvalidInput(format!(
                    "outlier ({}, {}, {}) lies outside the model window",
                    o.t, o.key, o.loc
                )));
            }
            outliers.set(o.t - self.window_start, o.key, o.loc, o.value);
        }
        Ok(ModelEntry {
            activated_at: self.activated_at,
            params: ModelParams {
                ranks: self.ranks,
                trend,
                seasonal,
                outliers,
                window_start: self.window_start,
                window_len: lc,
                quality: self.quality,
                fit_errors: self.fit_errors.clone(),
            },
        })
    }
}

impl ModelDocument {
    /// `window`, when given, is the active model's current window and adds
    /// its cost breakdown.
    pub fn from_params(
        f: &FullParamSet,
        stream_len: usize,
        window: Option<&Tensor3>,
        metadata: Option<&Metadata>,
        normalization: Option<Normalization>,
    ) -> Result<Self> {
        if f.is_empty() {
            return Err(Error::InvalidInput("no models to export".into()));
        }
        let window_cost = window.map(|x| f.total_cost(x, stream_len)).transpose()?;
        Ok(Self {
            format: FORMAT.into(),
            active: f.active,
            stream_len,
            metadata: metadata.cloned(),
            normalization,
            window_cost,
            models: f
                .models
                .iter()
                .map(|e| ModelRecord::new(e, stream_len))
                .collect(),
        })
    }

    pub fn to_params(&self) -> Result<FullParamSet> {
        if self.models.is_empty() || self.active >= self.models.len() {
            return Err(Error::InvalidInput(
                "model document has no active model".into(),
            ));
        }
        let models = self
            .models
            .iter()
            .map(ModelRecord::to_entry)
            .collect::<Result<Vec<_>>>()?;
        if models
            .windows(2)
            .any(|w| w[0].activated_at >= w[1].activated_at)
        {
            return Err(Error::InvalidInput("activation times must increase".into()));
        }
        Ok(FullParamSet {
            models,
            active: self.active,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }
}

pub fn export_model(doc: &ModelDocument, path: &Path) -> Result<()> {
    write_text(path, &doc.to_json()?)
}

pub fn import_model(path: &Path) -> Result<ModelDocument> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let doc: ModelDocument = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })?;
    if doc.format != FORMAT {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            message: format!("unsupported format {:?}, expected {FORMAT:?}", doc.format),
        });
    }
    // shape checks
    doc.to_params()?;
    Ok(doc)
}

fn label(labels: Option<&[String]>, i: usize) -> String {
    labels
        .and_then(|l| l.get(i))
        .cloned()
        .unwrap_or_else(|| i.to_string())
}

/// Writes `trajectories.csv`, `factors.csv`, `edges.csv`, `switches.csv`
/// and, when `truth` is given, `series.csv` into `dir`. Returns the paths.
///
/// The fit at time `t` comes from the latest model whose window covers
/// `t`; `forecast_next` is the one-step forecast of `t` and
/// `forecast_last` the forecast made `L_f` steps earlier.
pub fn export_plotdata(
    f: &FullParamSet,
    log: &[LoggedForecast],
    truth: Option<&Tensor3>,
    metadata: Option<&Metadata>,
    dir: &Path,
) -> Result<Vec<PathBuf>> {
    if f.is_empty() {
        return Err(Error::InvalidInput("no models to export".into()));
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();

    let path = dir.join("trajectories.csv");
    let mut w = csv_writer(&path)?;
    w.write_record(["model", "t", "group", "member", "value"])
        .map_err(|e| csv_error(&path, e))?;
    for (mi, e) in f.models.iter().enumerate() {
        let m = &e.params;
        let core = generate(&m.trend.rd, m.window_len)
            .map(|tr| tr.core)
            .unwrap_or_else(|_| {
                Tensor3::from_fn(
                    Dims::new(m.window_len, m.ranks.dk, m.ranks.dl),
                    |_, _, _| f64::NAN,
                )
            });
        for t in 0..m.window_len {
            for i in 0..m.ranks.dk {
                for j in 0..m.ranks.dl {
                    w.write_record([
                        mi.to_string(),
                        (m.window_start + t).to_string(),
                        i.to_string(),
                        j.to_string(),
                        core.get(t, i, j).to_string(),
                    ])
                    .map_err(|e| csv_error(&path, e))?;
                }
            }
        }
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    written.push(path);

    let path = dir.join("factors.csv");
    let mut w = csv_writer(&path)?;
    w.write_record(["model", "factor", "row", "col", "value"])
        .map_err(|e| csv_error(&path, e))?;
    for (mi, e) in f.models.iter().enumerate() {
        let m = &e.params;
        let factors = [
            ("w_key", &m.trend.w_key),
            ("w_loc", &m.trend.w_loc),
            ("growth", &m.trend.rd.growth),
            ("w0", &m.trend.rd.w0),
            ("s_time", &m.seasonal.s_time),
            ("s_key", &m.seasonal.s_key),
            ("s_loc", &m.seasonal.s_loc),
        ];
        for (name, mat) in factors {
            for r in 0..mat.rows() {
                for c in 0..mat.cols() {
                    w.write_record([
                        mi.to_string(),
                        name.to_string(),
                        r.to_string(),
                        c.to_string(),
                        mat[(r, c)].to_string(),
                    ])
                    .map_err(|e| csv_error(&path, e))?;
                }
            }
        }
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    written.push(path);

    let path = dir.join("edges.csv");
    let mut w = csv_writer(&path)?;
    w.write_record(["model", "group", "from", "to", "strength"])
        .map_err(|e| csv_error(&path, e))?;
    for (mi, e) in f.models.iter().enumerate() {
        for edge in diffusion_edges(&e.params.trend.rd.diffusion) {
            w.write_record([
                mi.to_string(),
                edge.group.to_string(),
                edge.from.to_string(),
                edge.to.to_string(),
                edge.strength.to_string(),
            ])
            .map_err(|e| csv_error(&path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    written.push(path);

    let path = dir.join("switches.csv");
    let mut w = csv_writer(&path)?;
    w.write_record(["model", "activated_at", "dk", "dl", "ds"])
        .map_err(|e| csv_error(&path, e))?;
    for (mi, e) in f.models.iter().enumerate() {
        let r = e.params.ranks;
        w.write_record([mi, e.activated_at, r.dk, r.dl, r.ds].map(|v| v.to_string()))
            .map_err(|e| csv_error(&path, e))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    written.push(path);

    if let Some(x) = truth {
        let d = x.dims();
        let fits = f
            .models
            .iter()
            .map(|e| e.params.reconstruct())
            .collect::<Result<Vec<_>>>()?;
        let horizon = log.iter().map(LoggedForecast::horizon).max().unwrap_or(0);
        let next: std::collections::HashMap<usize, &LoggedForecast> =
            log.iter().map(|l| (l.start, l)).collect();
        let path = dir.join("series.csv");
        let mut w = csv_writer(&path)?;
        w.write_record([
            "timestamp",
            "keyword",
            "location",
            "truth",
            "fit",
            "residual",
            "forecast_next",
            "forecast_last",
        ])
        .map_err(|e| csv_error(&path, e))?;
        let kw = metadata.map(|m| m.keywords.as_slice());
        let loc = metadata.map(|m| m.locations.as_slice());
        for t in 0..d.len {
            let cover = f.models.iter().enumerate().rev().find(|(_, e)| {
                let m = &e.params;
                t >= m.window_start && t < m.window_start + m.window_len
            });
            for u in 0..d.keys {
                for v in 0..d.locs {
                    let y = x.get(t, u, v);
                    let (fit, resid) = match cover {
                        Some((mi, e)) if e.params.keys() == d.keys && e.params.locs() == d.locs => {
                            let fv = fits[mi].get(t - e.params.window_start, u, v);
                            (fv.to_string(), (y - fv).to_string())
                        }
                        _ => (String::new(), String::new()),
                    };
                    let fc_next = next
                        .get(&t)
                        .map(|l| l.values.get(0, u, v).to_string())
                        .unwrap_or_default();
                    let fc_last = (horizon > 0 && t + 1 >= horizon)
                        .then(|| next.get(&(t + 1 - horizon)))
                        .flatten()
                        .filter(|l| l.horizon() == horizon)
                        .map(|l| l.values.get(horizon - 1, u, v).to_string())
                        .unwrap_or_default();
                    w.write_record([
                        t.to_string(),
                        label(kw, u),
                        label(loc, v),
                        y.to_string(),
                        fit,
                        resid,
                        fc_next,
                        fc_last,
                    ])
                    .map_err(|e| csv_error(&path, e))?;
                }
            }
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}
