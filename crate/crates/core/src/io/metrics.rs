//! Forecast logs and MAE/RMSE reports.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{csv_error, csv_writer, Metadata};
use crate::error::{Error, Result};
use crate::stream::ForecastResult;
use crate::tensor::{Dims, Tensor3};

/// One logged forecast: `values` covers `[start, start + horizon)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoggedForecast {
    pub start: usize,
    /// Index of the producing model in the full parameter set.
    pub model: usize,
    pub values: Tensor3,
}

impl From<&ForecastResult> for LoggedForecast {
    fn from(f: &ForecastResult) -> Self {
        Self {
            start: f.start,
            model: f.model,
            values: f.values.clone(),
        }
    }
}

impl LoggedForecast {
    pub fn horizon(&self) -> usize {
        self.values.dims().len
    }

    fn end(&self) -> usize {
        self.start + self.horizon()
    }
}

/// Keeps the forecasts whose targets all lie before `len`.
pub fn realized(log: &[LoggedForecast], len: usize) -> Vec<LoggedForecast> {
    log.iter().filter(|f| f.end() <= len).cloned().collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricCell {
    pub mae: f64,
    pub rmse: f64,
    pub count: usize,
}

#[derive(Default, Clone, Copy)]
struct Acc {
    abs: f64,
    sq: f64,
    n: usize,
}

impl Acc {
    fn push(&mut self, e: f64) {
        self.abs += e.abs();
        self.sq += e * e;
        self.n += 1;
    }

    fn cell(&self) -> MetricCell {
        if self.n == 0 {
            return MetricCell::default();
        }
        let n = self.n as f64;
        MetricCell {
            mae: self.abs / n,
            rmse: (self.sq / n).sqrt(),
            count: self.n,
        }
    }
}

/// Errors of a forecast log against the realised stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    /// Longest logged horizon `L_f`.
    pub horizon: usize,
    pub forecasts: usize,
    /// Over every cell and every logged horizon step.
    pub overall: MetricCell,
    /// Entry `h − 1` covers the forecasts made `h` steps ahead.
    pub per_step: Vec<MetricCell>,
    pub per_keyword: Vec<(String, MetricCell)>,
}

/// MAE and RMSE of `log` against `truth`, overall, per horizon step and per
/// keyword. Every forecast target must exist in `truth`.
pub fn evaluate(
    log: &[LoggedForecast],
    truth: &Tensor3,
    keywords: &[String],
) -> Result<MetricReport> {
    if log.is_empty() {
        return Err(Error::Evaluation("the forecast log is empty".into()));
    }
    let d = truth.dims();
    if keywords.len() != d.keys {
        return Err(Error::Dimension(format!(
            "{} keyword labels for {} keys",
            keywords.len(),
            d.keys
        )));
    }
    let gaps: Vec<String> = log
        .iter()
        .filter(|f| f.end() > d.len)
        .map(|f| format!("[{}, {})", d.len.max(f.start), f.end()))
        .collect();
    if !gaps.is_empty() {
        return Err(Error::Evaluation(format!(
            "no truth after t={} for {} forecasts; missing spans: {}",
            d.len,
            gaps.len(),
            gaps.join(", ")
        )));
    }
    let horizon = log.iter().map(LoggedForecast::horizon).max().unwrap_or(0);
    let mut overall = Acc::default();
    let mut per_step = vec![Acc::default(); horizon];
    let mut per_key = vec![Acc::default(); d.keys];
    for f in log {
        let fd = f.values.dims();
        if fd.keys != d.keys || fd.locs != d.locs {
            return Err(Error::Dimension(format!(
                "forecast from t={} has shape {fd:?}, truth has {d:?}",
                f.start
            )));
        }
        for h in 0..fd.len {
            for u in 0..d.keys {
                for v in 0..d.locs {
                    let e = f.values.get(h, u, v) - truth.get(f.start + h, u, v);
                    overall.push(e);
                    per_step[h].push(e);
                    per_key[u].push(e);
                }
            }
        }
    }
    Ok(MetricReport {
        horizon,
        forecasts: log.len(),
        overall: overall.cell(),
        per_step: per_step.iter().map(Acc::cell).collect(),
        per_keyword: keywords
            .iter()
            .cloned()
            .zip(per_key.iter().map(Acc::cell))
            .collect(),
    })
}

impl fmt::Display for MetricReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let c = |m: &MetricCell| format!("{:>10.4} {:>10.4}", m.mae * 100.0, m.rmse * 100.0);
        writeln!(
            f,
            "forecast horizon L_f = {}, {} forecasts (values x10^-2)",
            self.horizon, self.forecasts
        )?;
        writeln!(f, "{:<16} {:>10} {:>10}", "", "MAE", "RMSE")?;
        writeln!(f, "{:<16} {}", "overall", c(&self.overall))?;
        for (h, m) in self.per_step.iter().enumerate() {
            writeln!(f, "{:<16} {}", format!("step +{}", h + 1), c(m))?;
        }
        for (k, m) in &self.per_keyword {
            writeln!(f, "{:<16} {}", k, c(m))?;
        }
        Ok(())
    }
}

const FORECAST_HEADER: [&str; 7] = [
    "origin",
    "step",
    "timestamp",
    "keyword",
    "location",
    "model",
    "value",
];

/// Long-format forecast log: one row per target cell.
pub fn write_forecasts(path: &Path, log: &[LoggedForecast], meta: &Metadata) -> Result<()> {
    let mut w = csv_writer(path)?;
    let io = |e: csv::Error| csv_error(path, e);
    w.write_record(FORECAST_HEADER).map_err(io)?;
    for f in log {
        let d = f.values.dims();
        if d.keys != meta.keywords.len() || d.locs != meta.locations.len() {
            return Err(Error::Dimension(
                "forecast shape does not match the metadata".into(),
            ));
        }
        for h in 0..d.len {
            for u in 0..d.keys {
                for v in 0..d.locs {
                    w.write_record([
                        f.start.to_string(),
                        (h + 1).to_string(),
                        (f.start + h).to_string(),
                        meta.keywords[u].clone(),
                        meta.locations[v].clone(),
                        f.model.to_string(),
                        f.values.get(h, u, v).to_string(),
                    ])
                    .map_err(io)?;
                }
            }
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Deserialize)]
struct ForecastRow {
    origin: usize,
    step: usize,
    keyword: String,
    location: String,
    model: usize,
    value: f64,
}

/// Reads a log written by [`write_forecasts`]; every origin must list a
/// full `step × keyword × location` block.
pub fn read_forecasts(path: &Path, meta: &Metadata) -> Result<Vec<LoggedForecast>> {
    let perr = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut rdr = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let header = rdr.headers().map_err(|e| perr(1, e.to_string()))?.clone();
    if header.iter().collect::<Vec<_>>() != FORECAST_HEADER {
        return Err(perr(
            1,
            format!("expected header {:?}", FORECAST_HEADER.join(",")),
        ));
    }
    let kw: HashMap<&str, usize> = meta
        .keywords
        .iter()
        .enumerate()
        .map(|(i, s)| (s.as_str(), i))
        .collect();
    let loc: HashMap<&str, usize> = meta
        .locations
        .iter()
        .enumerate()
        .map(|(i, s)| (s.as_str(), i))
        .collect();
    let mut blocks: BTreeMap<usize, (usize, HashMap<(usize, usize, usize), f64>)> = BTreeMap::new();
    for rec in rdr.records() {
        let rec =
            rec.map_err(|e| perr(e.position().map_or(0, |p| p.line() as usize), e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let row: ForecastRow = rec
            .deserialize(Some(&header))
            .map_err(|e| perr(line, e.to_string()))?;
        let u = *kw
            .get(row.keyword.as_str())
            .ok_or_else(|| perr(line, format!("unknown keyword {:?}", row.keyword)))?;
        let v = *loc
            .get(row.location.as_str())
            .ok_or_else(|| perr(line, format!("unknown location {:?}", row.location)))?;
        if row.step == 0 {
            return Err(perr(line, "forecast steps start at 1".into()));
        }
        let block = blocks
            .entry(row.origin)
            .or_insert((row.model, HashMap::new()));
        if block.1.insert((row.step - 1, u, v), row.value).is_some() {
            return Err(perr(
                line,
                format!("duplicate forecast cell at origin {}", row.origin),
            ));
        }
    }
    blocks
        .into_iter()
        .map(|(start, (model, cells))| {
            let horizon = cells.keys().map(|c| c.0 + 1).max().unwrap_or(0);
            let dims = Dims::new(horizon, meta.keywords.len(), meta.locations.len());
            if cells.len() != dims.count() {
                return Err(perr(
                    0,
                    format!("forecast from origin {start} is incomplete"),
                ));
            }
            let values = Tensor3::from_fn(dims, |h, u, v| cells[&(h, u, v)]);
            Ok(LoggedForecast {
                start,
                model,
                values,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn log1(start: usize, vals: Vec<f64>) -> LoggedForecast {
        let n = vals.len();
        LoggedForecast {
            start,
            model: 0,
            values: Tensor3::from_vec(Dims::new(n, 1, 1), vals).unwrap(),
        }
    }

    fn kw(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("k{i}")).collect()
    }

    #[test]
    fn perfect_forecast_scores_zero() {
        let truth = Tensor3::from_fn(Dims::new(6, 2, 2), |t, u, v| (t + u + v) as f64);
        let log = vec![LoggedForecast {
            start: 2,
            model: 0,
            values: truth.time_range(2, 5).unwrap(),
        }];
        let r = evaluate(&log, &truth, &kw(2)).unwrap();
        assert_eq!(r.overall.mae, 0.0);
        assert_eq!(r.overall.rmse, 0.0);
        assert_eq!(r.overall.count, 12);
        assert_eq!(r.per_step.len(), 3);
    }

    #[test]
    fn hand_arithmetic() {
        let truth = Tensor3::zeros(Dims::new(2, 1, 1));
        let r = evaluate(&[log1(0, vec![0.1, -0.1])], &truth, &kw(1)).unwrap();
        assert!((r.overall.mae - 0.1).abs() < 1e-15);
        assert!((r.overall.rmse - 0.1).abs() < 1e-15);
        let r = evaluate(&[log1(0, vec![0.0, 0.2])], &truth, &kw(1)).unwrap();
        assert!((r.overall.mae - 0.1).abs() < 1e-15);
        assert!((r.overall.rmse - 0.1414).abs() < 1e-4);
        assert_eq!(r.per_step[0].mae, 0.0);
        assert!((r.per_step[1].mae - 0.2).abs() < 1e-15);
    }

    #[test]
    fn missing_truth_lists_the_gaps() {
        let truth = Tensor3::zeros(Dims::new(4, 1, 1));
        let log = vec![
            log1(1, vec![0.0; 3]),
            log1(2, vec![0.0; 3]),
            log1(3, vec![0.0; 3]),
        ];
        match evaluate(&log, &truth, &kw(1)) {
            Err(Error::Evaluation(m)) => {
                assert!(m.contains("[4, 5)") && m.contains("[4, 6)"), "{m}")
            }
            other => panic!("{other:?}"),
        }
        assert_eq!(realized(&log, 4).len(), 1);
        assert!(evaluate(&[], &truth, &kw(1)).is_err());
    }

    #[test]
    fn report_prints_scaled_values() {
        let truth = Tensor3::zeros(Dims::new(2, 1, 1));
        let r = evaluate(&[log1(0, vec![0.0084, 0.0084])], &truth, &kw(1)).unwrap();
        let s = r.to_string();
        assert!(s.contains("x10^-2"));
        assert!(s.contains("0.8400"), "{s}");
    }

    #[test]
    fn forecast_log_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let meta = Metadata {
            keywords: kw(2),
            locations: vec!["x".into(), "y".into(), "z".into()],
            period: 4,
            sampling: String::new(),
        };
        let log: Vec<LoggedForecast> = (0..3)
            .map(|s| LoggedForecast {
                start: 10 + s,
                model: s / 2,
                values: Tensor3::from_fn(Dims::new(4, 2, 3), |h, u, v| {
                    0.1 * (h * 7 + u * 3 + v + s) as f64 + 1e-17
                }),
            })
            .collect();
        let p = dir.path().join("f.csv");
        write_forecasts(&p, &log, &meta).unwrap();
        assert_eq!(read_forecasts(&p, &meta).unwrap(), log);
    }

    proptest! {
        #[test]
        fn matches_a_scalar_oracle(
            errs in proptest::collection::vec(-1.0f64..1.0, 1..40),
            k in 1usize..4,
        ) {
            // lay errors out as forecasts of length 1 over a zero truth
            let n = errs.len();
            let dims = Dims::new(n, k, 1);
            let truth = Tensor3::zeros(dims);
            let log: Vec<LoggedForecast> = (0..n)
                .map(|t| LoggedForecast {
                    start: t,
                    model: 0,
                    values: Tensor3::from_fn(Dims::new(1, k, 1), |_, u, _| errs[t] * (u + 1) as f64),
                })
                .collect();
            let r = evaluate(&log, &truth, &kw(k)).unwrap();
            let all: Vec<f64> = (0..n).flat_map(|t| (0..k).map(move |u| (t, u))).map(|(t, u)| errs[t] * (u + 1) as f64).collect();
            let mae = all.iter().map(|e| e.abs()).sum::<f64>() / all.len() as f64;
            let rmse = (all.iter().map(|e| e * e).sum::<f64>() / all.len() as f64).sqrt();
            prop_assert!((r.overall.mae - mae).abs() <= 1e-12);
            prop_assert!((r.overall.rmse - rmse).abs() <= 1e-12);
            prop_assert!(r.overall.rmse >= r.overall.mae - 1e-15);
            for (_, c) in &r.per_keyword {
                prop_assert!(c.rmse >= c.mae - 1e-15 && c.mae >= 0.0);
            }
        }
    }
}
