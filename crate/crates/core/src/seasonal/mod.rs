//! Seasonal tensor: a CP model whose time factor covers one window and is
//! extended periodically beyond it.

mod stl;

pub use stl::{loess, stl_decompose, stl_decompose_with, trend_window, StlOptions, StlResult};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Dims, Matrix, Mode, Tensor3};

/// CP factors of the seasonal tensor. All three matrices have `d_s` rows; a
/// rank of zero means no seasonal component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeasonalParams {
    /// `d_s × L_c`.
    pub s_time: Matrix,
    /// `d_s × k`.
    pub s_key: Matrix,
    /// `d_s × l`.
    pub s_loc: Matrix,
    pub period: usize,
}

impl SeasonalParams {
    pub fn empty(len: usize, keys: usize, locs: usize, period: usize) -> Self {
        Self {
            s_time: Matrix::zeros(0, len),
            s_key: Matrix::zeros(0, keys),
            s_loc: Matrix::zeros(0, locs),
            period,
        }
    }

    pub fn rank(&self) -> usize {
        self.s_time.rows()
    }

    pub fn len(&self) -> usize {
        self.s_time.cols()
    }

    pub fn is_empty(&self) -> bool {
        self.rank() == 0
    }

    fn check(&self) -> Result<()> {
        let d = self.rank();
        if self.s_key.rows() != d || self.s_loc.rows() != d {
            return Err(Error::Dimension(format!(
                "seasonal factors disagree on rank: {} / {} / {}",
                d,
                self.s_key.rows(),
                self.s_loc.rows()
            )));
        }
        Ok(())
    }

    /// `X_s(t,u,v) = Σ_r s_time(r, col(t)) · s_key(r,u) · s_loc(r,v)` over
    /// `len` samples, where `col` maps sample `t` (relative to the window
    /// start) to a stored column via [`seasonal_column`].
    pub fn reconstruct_span(&self, start: usize, len: usize) -> Result<Tensor3> {
        self.check()?;
        let (k, l) = (self.s_key.cols(), self.s_loc.cols());
        let mut out = Tensor3::zeros(Dims::new(len, k, l));
        if self.is_empty() {
            return Ok(out);
        }
        let lc = self.len();
        if self.period == 0 || self.period > lc {
            return Err(Error::Dimension(format!(
                "period {} does not fit a seasonal window of {lc}",
                self.period
            )));
        }
        let d = self.rank();
        let mut kl = vec![0.0; d * k * l];
        for r in 0..d {
            for u in 0..k {
                for v in 0..l {
                    kl[(r * k + u) * l + v] = self.s_key[(r, u)] * self.s_loc[(r, v)];
                }
            }
        }
        for t in 0..len {
            let col = seasonal_column(lc, self.period, start + t);
            let slice = out.slice_mut(t);
            for r in 0..d {
                let a = self.s_time[(r, col)];
                if a == 0.0 {
                    continue;
                }
                for (o, b) in slice.iter_mut().zip(&kl[r * k * l..(r + 1) * k * l]) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// Reconstruction over the stored window.
    pub fn reconstruct(&self) -> Result<Tensor3> {
        self.reconstruct_span(0, self.len())
    }

    /// The seasonal component for the `horizon` samples that follow the
    /// window, tiling its last period.
    pub fn extend(&self, horizon: usize) -> Result<Tensor3> {
        self.reconstruct_span(self.len(), horizon)
    }

    /// Time factor re-anchored `offset` samples later: column `τ` of the
    /// result holds the old column for relative time `offset + τ`.
    pub fn shifted(&self, offset: usize) -> SeasonalParams {
        let lc = self.len();
        let mut out = self.clone();
        if self.is_empty() || offset == 0 {
            return out;
        }
        for tau in 0..lc {
            let src = seasonal_column(lc, self.period, offset + tau);
            for r in 0..self.rank() {
                out.s_time[(r, tau)] = self.s_time[(r, src)];
            }
        }
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.s_time.count_nonzero() + self.s_key.count_nonzero() + self.s_loc.count_nonzero()
    }
}

/// Stored time column used for relative time `tau`: inside the window it is
/// `tau`; past it the last period repeats.
pub fn seasonal_column(window: usize, period: usize, tau: usize) -> usize {
    if tau < window {
        tau
    } else {
        window - period + (tau - window) % period
    }
}

fn factor(p: &SeasonalParams, mode: Mode) -> &Matrix {
    match mode {
        Mode::Time => &p.s_time,
        Mode::Key => &p.s_key,
        Mode::Loc => &p.s_loc,
    }
}

fn factor_mut(p: &mut SeasonalParams, mode: Mode) -> &mut Matrix {
    match mode {
        Mode::Time => &mut p.s_time,
        Mode::Key => &mut p.s_key,
        Mode::Loc => &mut p.s_loc,
    }
}

/// Least-squares update of one CP factor with the other two fixed:
/// `Sᵀ = X_(mode) · (B ⊙ C) · (BᵀB ∗ CᵀC)†`.
pub fn update_seasonal_factor(
    target: &Tensor3,
    params: &SeasonalParams,
    mode: Mode,
) -> Result<Matrix> {
    params.check()?;
    let dims = target.dims();
    if params.len() != dims.len
        || params.s_key.cols() != dims.keys
        || params.s_loc.cols() != dims.locs
    {
        return Err(Error::Dimension(format!(
            "seasonal factors ({}, {}, {}) do not match target {dims:?}",
            params.len(),
            params.s_key.cols(),
            params.s_loc.cols()
        )));
    }
    let d = params.rank();
    if d == 0 {
        return Ok(factor(params, mode).clone());
    }
    // the two remaining modes, in unfold column order
    let (b, c) = match mode {
        Mode::Time => (&params.s_key, &params.s_loc),
        Mode::Key => (&params.s_time, &params.s_loc),
        Mode::Loc => (&params.s_time, &params.s_key),
    };
    let bt = b.transpose();
    let ct = c.transpose();
    let kr = bt.khatri_rao(&ct)?;
    let v = bt.gram().hadamard(&ct.gram())?;
    let mttkrp = target.unfold(mode).matmul(&kr)?;
    let s = mttkrp.matmul(&v.pinv())?;
    Ok(s.transpose())
}

#[derive(Debug, Clone)]
pub struct CpResult {
    pub params: SeasonalParams,
    /// Frobenius reconstruction error after each sweep.
    pub errors: Vec<f64>,
}

/// Rank-`rank` CP decomposition by alternating least squares. Stops after
/// `max_sweeps` or once the relative error change falls below `tol`.
pub fn cp_als(
    x: &Tensor3,
    rank: usize,
    period: usize,
    max_sweeps: usize,
    tol: f64,
    seed: u64,
) -> Result<CpResult> {
    let dims = x.dims();
    for mode in Mode::ALL {
        if rank > dims.size(mode) {
            return Err(Error::RankTooLarge {
                mode: mode.name(),
                rank,
                size: dims.size(mode),
            });
        }
    }
    let mut params = SeasonalParams::empty(dims.len, dims.keys, dims.locs, period);
    if rank == 0 {
        return Ok(CpResult {
            params,
            errors: Vec::new(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut normal = |rows, cols| {
        Matrix::from_fn(rows, cols, |_, _| {
            let z: f64 = StandardNormal.sample(&mut rng);
            z
        })
    };
    params.s_time = Matrix::zeros(rank, dims.len);
    params.s_key = normal(rank, dims.keys);
    params.s_loc = normal(rank, dims.locs);

    let norm = x.frobenius_norm();
    let mut errors: Vec<f64> = Vec::new();
    for _ in 0..max_sweeps.max(1) {
        for mode in Mode::ALL {
            let s = update_seasonal_factor(x, &params, mode)?;
            *factor_mut(&mut params, mode) = s;
        }
        let err = x.sub(&params.reconstruct()?)?.frobenius_norm();
        let done = match errors.last() {
            Some(&prev) => (prev - err).abs() <= tol * norm.max(f64::MIN_POSITIVE),
            None => err <= tol * norm,
        };
        errors.push(err);
        if done {
            break;
        }
    }
    normalize_columns(&mut params);
    Ok(CpResult { params, errors })
}

/// Gives every key/loc component unit norm, pushing the scale into time.
fn normalize_columns(p: &mut SeasonalParams) {
    for r in 0..p.rank() {
        for mode in [Mode::Key, Mode::Loc] {
            let m = factor_mut(p, mode);
            let n = m.row(r).iter().map(|x| x * x).sum::<f64>().sqrt();
            if n > 0.0 && n.is_finite() {
                m.row_mut(r).iter_mut().for_each(|x| *x /= n);
                p.s_time.row_mut(r).iter_mut().for_each(|x| *x *= n);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rank_one(len: usize, k: usize, l: usize) -> (Tensor3, [Vec<f64>; 3]) {
        let a: Vec<f64> = (0..len).map(|t| (t as f64 * 0.7).sin() + 0.2).collect();
        let b: Vec<f64> = (0..k).map(|u| 1.0 + u as f64).collect();
        let c: Vec<f64> = (0..l).map(|v| 0.5 - 0.3 * v as f64).collect();
        let x = Tensor3::from_fn(Dims::new(len, k, l), |t, u, v| a[t] * b[u] * c[v]);
        (x, [a, b, c])
    }

    #[test]
    fn column_map_tiles_last_period() {
        assert_eq!(seasonal_column(10, 4, 3), 3);
        assert_eq!(seasonal_column(10, 4, 10), 6);
        assert_eq!(seasonal_column(10, 4, 13), 9);
        assert_eq!(seasonal_column(10, 4, 14), 6);
    }

    #[test]
    fn extension_repeats_with_period() {
        let (x, _) = rank_one(12, 2, 3);
        let cp = cp_als(&x, 1, 4, 50, 1e-9, 1).unwrap();
        let ext = cp.params.extend(9).unwrap();
        let full = cp.params.reconstruct().unwrap();
        for h in 0..9 {
            let src = 8 + h % 4;
            for (a, b) in ext.slice(h).iter().zip(full.slice(src)) {
                assert_eq!(a, b);
            }
        }
        for h in 0..5 {
            assert_eq!(ext.slice(h), ext.slice(h + 4));
        }
    }

    #[test]
    fn exact_rank_one_recovery() {
        let (x, _) = rank_one(20, 3, 4);
        let cp = cp_als(&x, 1, 5, 50, 1e-10, 7).unwrap();
        let err = x
            .sub(&cp.params.reconstruct().unwrap())
            .unwrap()
            .frobenius_norm();
        assert!(err <= 1e-8 * x.frobenius_norm());
    }

    #[test]
    fn sweep_errors_do_not_increase() {
        let x = Tensor3::from_fn(Dims::new(16, 4, 5), |t, u, v| {
            ((t * 7 + u * 3 + v * 11) % 13) as f64 / 13.0 + (t as f64).cos() * (u + v) as f64 * 0.1
        });
        let cp = cp_als(&x, 3, 4, 50, 0.0, 3).unwrap();
        let scale = x.frobenius_norm();
        for w in cp.errors.windows(2) {
            assert!(w[1] <= w[0] + 1e-9 * scale, "{:?}", cp.errors);
        }
    }

    #[test]
    fn zero_rank_and_zero_tensor() {
        let x = Tensor3::zeros(Dims::new(8, 2, 2));
        let cp = cp_als(&x, 0, 4, 50, 1e-6, 0).unwrap();
        assert!(cp.params.is_empty());
        assert_eq!(cp.params.reconstruct().unwrap(), x);
        let cp = cp_als(&x, 2, 4, 50, 1e-6, 0).unwrap();
        assert_eq!(cp.params.reconstruct().unwrap().frobenius_norm(), 0.0);
    }

    #[test]
    fn rank_beyond_a_mode_is_rejected() {
        let x = Tensor3::zeros(Dims::new(8, 2, 5));
        match cp_als(&x, 3, 4, 50, 1e-6, 0) {
            Err(Error::RankTooLarge { mode, rank, size }) => {
                assert_eq!((mode, rank, size), ("key", 3, 2));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn factor_update_is_least_squares_optimal() {
        let (x, _) = rank_one(10, 3, 3);
        let noisy = x.map(|v| v + 0.01 * (v * 37.0).sin());
        let cp = cp_als(&noisy, 2, 5, 3, 0.0, 9).unwrap();
        let base = cp.params.clone();
        let updated = update_seasonal_factor(&noisy, &base, Mode::Key).unwrap();
        let mut best = base.clone();
        best.s_key = updated;
        let e0 = noisy.sub(&best.reconstruct().unwrap()).unwrap().sq_norm();
        // perturbing the solution in any coordinate cannot help
        for i in 0..best.s_key.as_slice().len() {
            for delta in [1e-4, -1e-4] {
                let mut p = best.clone();
                p.s_key.as_mut_slice()[i] += delta;
                let e = noisy.sub(&p.reconstruct().unwrap()).unwrap().sq_norm();
                assert!(e >= e0 - 1e-12);
            }
        }
    }

    #[test]
    fn shift_rolls_the_time_factor() {
        let (x, _) = rank_one(12, 1, 1);
        let cp = cp_als(&x, 1, 4, 50, 1e-10, 2).unwrap();
        let s = cp.params.shifted(3);
        for tau in 0..12 {
            let src = seasonal_column(12, 4, 3 + tau);
            assert_eq!(s.s_time[(0, tau)], cp.params.s_time[(0, src)]);
        }
        // a shifted model continues the original extension
        let ext = cp.params.reconstruct_span(3, 20).unwrap();
        let ext2 = s.reconstruct_span(0, 20).unwrap();
        for t in 9..20 {
            assert!((ext.get(t, 0, 0) - ext2.get(t, 0, 0)).abs() < 1e-12);
        }
    }
}
