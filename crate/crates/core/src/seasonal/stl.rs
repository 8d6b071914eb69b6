//! Seasonal-trend decomposition by loess with a periodic seasonal smoother.

use crate::error::{Error, Result};

/// Additive split of one series.
#[derive(Debug, Clone, PartialEq)]
pub struct StlResult {
    pub trend: Vec<f64>,
    pub seasonal: Vec<f64>,
    pub residual: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct StlOptions {
    /// Seasonal smoothing window; `None` selects the periodic variant where
    /// every cycle-subseries is replaced by its mean.
    pub seasonal_window: Option<usize>,
    pub inner_passes: usize,
}

impl Default for StlOptions {
    fn default() -> Self {
        Self {
            seasonal_window: None,
            inner_passes: 10,
        }
    }
}

fn next_odd(x: f64) -> usize {
    let n = x.ceil() as usize;
    if n % 2 == 0 {
        n + 1
    } else {
        n
    }
}

/// Trend window: smallest odd integer ≥ `1.5 p / (1 − 1.5 / n_s)`, or
/// `1.5 p` rounded up to odd when the seasonal smoother is periodic.
pub fn trend_window(period: usize, seasonal_window: Option<usize>) -> usize {
    let p = period as f64;
    match seasonal_window {
        Some(ns) if (ns as f64) > 1.5 => next_odd(1.5 * p / (1.0 - 1.5 / ns as f64)),
        _ => next_odd(1.5 * p),
    }
}

pub fn stl_decompose(series: &[f64], period: usize) -> Result<StlResult> {
    stl_decompose_with(series, period, &StlOptions::default())
}

pub fn stl_decompose_with(series: &[f64], period: usize, opts: &StlOptions) -> Result<StlResult> {
    let n = series.len();
    if period < 2 {
        return Err(Error::Initialization(format!(
            "seasonal period must be ≥ 2, got {period}"
        )));
    }
    if n < 2 * period {
        return Err(Error::Initialization(format!(
            "series of length {n} is shorter than two periods ({}); use a larger window",
            2 * period
        )));
    }
    if series.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidInput(
            "series contains non-finite values".into(),
        ));
    }
    let np = period;
    let n_l = next_odd(np as f64);
    let n_t = trend_window(np, opts.seasonal_window);

    let mut trend = vec![0.0; n];
    let mut seasonal = vec![0.0; n];
    let mut detrended = vec![0.0; n];
    let mut deseason = vec![0.0; n];
    for _ in 0..opts.inner_passes.max(1) {
        for i in 0..n {
            detrended[i] = series[i] - trend[i];
        }
        let cycle = cycle_subseries(&detrended, np, opts.seasonal_window);
        let low = low_pass(&cycle, np, n_l);
        for i in 0..n {
            seasonal[i] = cycle[np + i] - low[i];
            deseason[i] = series[i] - seasonal[i];
        }
        trend = loess(&deseason, n_t);
    }
    let residual = (0..n).map(|i| series[i] - trend[i] - seasonal[i]).collect();
    Ok(StlResult {
        trend,
        seasonal,
        residual,
    })
}

/// Smoothed cycle-subseries, extended by one period on each side
/// (length `n + 2·period`).
fn cycle_subseries(y: &[f64], period: usize, window: Option<usize>) -> Vec<f64> {
    let n = y.len();
    let mut out = vec![0.0; n + 2 * period];
    for phase in 0..period {
        let sub: Vec<f64> = y.iter().skip(phase).step_by(period).cloned().collect();
        let m = sub.len();
        match window {
            None => {
                let mean = sub.iter().sum::<f64>() / m as f64;
                // positions phase - period, phase, ..., extended both ways
                for j in 0..m + 2 {
                    let idx = phase + j * period;
                    if idx < out.len() {
                        out[idx] = mean;
                    }
                }
            }
            Some(ns) => {
                // loess over the subseries evaluated at -1..=m
                let smoothed = loess_at(&sub, ns, -1, m as isize);
                for (j, v) in smoothed.into_iter().enumerate() {
                    let idx = phase + j * period;
                    if idx < out.len() {
                        out[idx] = v;
                    }
                }
            }
        }
    }
    out
}

fn moving_average(x: &[f64], len: usize) -> Vec<f64> {
    if x.len() < len {
        return Vec::new();
    }
    let mut out = Vec::with_capacity(x.len() - len + 1);
    let mut acc: f64 = x[..len].iter().sum();
    out.push(acc / len as f64);
    for i in len..x.len() {
        acc += x[i] - x[i - len];
        out.push(acc / len as f64);
    }
    out
}

fn low_pass(cycle: &[f64], period: usize, n_l: usize) -> Vec<f64> {
    let a = moving_average(cycle, period);
    let b = moving_average(&a, period);
    let c = moving_average(&b, 3);
    loess(&c, n_l)
}

/// Degree-1 loess with tricube weights over a `window`-point neighbourhood,
/// evaluated at every sample.
pub fn loess(y: &[f64], window: usize) -> Vec<f64> {
    loess_at(y, window, 0, y.len() as isize - 1)
}

/// Loess evaluated at integer positions `from..=to` (which may lie outside
/// the data for extrapolation).
fn loess_at(y: &[f64], window: usize, from: isize, to: isize) -> Vec<f64> {
    let n = y.len();
    let q = window.max(2);
    let mut out = Vec::with_capacity((to - from + 1).max(0) as usize);
    let mut w = vec![0.0; n];
    for xs in from..=to {
        let (nleft, nright, extra) = if q >= n {
            (0usize, n - 1, ((q - n) / 2) as f64)
        } else {
            let half = (q / 2) as isize;
            let left = (xs - half).clamp(0, (n - q) as isize) as usize;
            (left, left + q - 1, 0.0)
        };
        let xsf = xs as f64;
        let h = (xsf - nleft as f64).max(nright as f64 - xsf) + extra;
        let mut total = 0.0;
        for j in nleft..=nright {
            let r = (j as f64 - xsf).abs();
            let wj = if h <= 0.0 || r <= 0.001 * h {
                1.0
            } else if r <= 0.999 * h {
                let z = r / h;
                let c = 1.0 - z * z * z;
                c * c * c
            } else {
                0.0
            };
            w[j] = wj;
            total += wj;
        }
        if total <= 0.0 {
            out.push(y[xs.clamp(0, n as isize - 1) as usize]);
            continue;
        }
        for wj in &mut w[nleft..=nright] {
            *wj /= total;
        }
        if h > 0.0 {
            let a: f64 = (nleft..=nright).map(|j| w[j] * j as f64).sum();
            let b: f64 = (nleft..=nright)
                .map(|j| w[j] * (j as f64 - a).powi(2))
                .sum();
            let range = (n - 1) as f64;
            if b.sqrt() > 0.001 * range {
                let bb = (xsf - a) / b;
                for j in nleft..=nright {
                    w[j] *= 1.0 + bb * (j as f64 - a);
                }
            }
        }
        out.push((nleft..=nright).map(|j| w[j] * y[j]).sum());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn rms(a: &[f64], b: &[f64]) -> f64 {
        (a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64).sqrt()
    }

    #[test]
    fn windows_follow_the_rules() {
        assert_eq!(trend_window(52, None), 79);
        assert_eq!(trend_window(7, None), 11);
        assert_eq!(trend_window(12, Some(7)), 23);
    }

    #[test]
    fn constant_series_is_all_trend() {
        let y = vec![3.5; 40];
        let r = stl_decompose(&y, 10).unwrap();
        for i in 0..40 {
            assert!((r.trend[i] - 3.5).abs() < 1e-9);
            assert!(r.seasonal[i].abs() < 1e-9);
            assert!(r.residual[i].abs() < 1e-9);
        }
    }

    #[test]
    fn pure_sinusoid_goes_to_seasonal() {
        let p = 12;
        let y: Vec<f64> = (0..4 * p)
            .map(|t| (2.0 * PI * t as f64 / p as f64).sin())
            .collect();
        let r = stl_decompose(&y, p).unwrap();
        let signal_rms = rms(&y, &vec![0.0; y.len()]);
        assert!(rms(&r.seasonal, &y) <= 0.05 * signal_rms);
        let mean = y.iter().sum::<f64>() / y.len() as f64;
        assert!(r.trend.iter().all(|t| (t - mean).abs() < 0.05));
    }

    #[test]
    fn ramp_slope_survives_in_trend() {
        let p = 12;
        let slope = 0.3;
        let y: Vec<f64> = (0..5 * p)
            .map(|t| slope * t as f64 + 2.0 * (2.0 * PI * t as f64 / p as f64).cos())
            .collect();
        let r = stl_decompose(&y, p).unwrap();
        let n = y.len();
        // least-squares slope of the recovered trend
        let tm = (n - 1) as f64 / 2.0;
        let ym = r.trend.iter().sum::<f64>() / n as f64;
        let num: f64 = r
            .trend
            .iter()
            .enumerate()
            .map(|(t, v)| (t as f64 - tm) * (v - ym))
            .sum();
        let den: f64 = (0..n).map(|t| (t as f64 - tm).powi(2)).sum();
        let est = num / den;
        assert!((est - slope).abs() <= 0.05 * slope, "slope {est}");
    }

    #[test]
    fn split_is_additive_and_cycles_have_zero_mean() {
        let p = 7;
        let y: Vec<f64> = (0..45)
            .map(|t| ((t * 37 % 11) as f64) * 0.3 + (t as f64 * 0.9).sin())
            .collect();
        let r = stl_decompose(&y, p).unwrap();
        let range =
            y.iter().cloned().fold(f64::MIN, f64::max) - y.iter().cloned().fold(f64::MAX, f64::min);
        for i in 0..y.len() {
            assert!((r.trend[i] + r.seasonal[i] + r.residual[i] - y[i]).abs() <= 1e-9);
        }
        for c in 0..y.len() / p {
            let m: f64 = r.seasonal[c * p..(c + 1) * p].iter().sum::<f64>() / p as f64;
            assert!(m.abs() <= 1e-6 * range);
        }
    }

    #[test]
    fn short_series_asks_for_a_longer_window() {
        let err = stl_decompose(&[1.0; 10], 6).unwrap_err();
        assert!(matches!(err, Error::Initialization(_)));
        assert!(err.to_string().contains("larger window"));
        assert!(stl_decompose(&[1.0; 10], 1).is_err());
    }

    #[test]
    fn loess_reproduces_lines() {
        let y: Vec<f64> = (0..30).map(|t| 2.0 - 0.5 * t as f64).collect();
        let s = loess(&y, 9);
        for (a, b) in s.iter().zip(&y) {
            assert!((a - b).abs() < 1e-9);
        }
        let s = loess(&y, 51);
        for (a, b) in s.iter().zip(&y) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn windowed_seasonal_variant_runs() {
        let p = 6;
        let y: Vec<f64> = (0..36)
            .map(|t| (2.0 * PI * t as f64 / p as f64).sin() + 0.01 * t as f64)
            .collect();
        let opts = StlOptions {
            seasonal_window: Some(7),
            inner_passes: 2,
        };
        let r = stl_decompose_with(&y, p, &opts).unwrap();
        for i in 0..y.len() {
            assert!((r.trend[i] + r.seasonal[i] + r.residual[i] - y[i]).abs() <= 1e-9);
        }
    }
}
