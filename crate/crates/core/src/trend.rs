//! Trend tensor: nonnegative keyword/location factors around the latent
//! reaction-diffusion core, their multiplicative updates, and the
//! nonnegative Tucker initialisation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffusion::{generate, RDParams, Trajectory};
use crate::error::{Error, Result};
use crate::tensor::{Contract, Dims, Matrix, Mode, Tensor3};

/// Floor used by the multiplicative updates.
pub const EPS: f64 = 1e-12;

/// Parameters of the trend tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendParams {
    /// `d_k × k`, nonnegative.
    pub w_key: Matrix,
    /// `d_l × l`, nonnegative.
    pub w_loc: Matrix,
    pub rd: RDParams,
}

impl TrendParams {
    pub fn dk(&self) -> usize {
        self.w_key.rows()
    }

    pub fn dl(&self) -> usize {
        self.w_loc.rows()
    }

    /// Trend reconstruction over `len` samples starting at `rd.w0`.
    pub fn reconstruct(&self, len: usize) -> Result<Tensor3> {
        let core = generate(&self.rd, len)?;
        expand(&core.core, &self.w_key, &self.w_loc)
    }

    /// Rescales each keyword-factor row to unit maximum, pushing the inverse
    /// scale into the matching row of `w0`. Keyword groups are decoupled in
    /// the latent system, so the reconstruction is unchanged.
    pub fn normalize(&mut self) {
        let dl = self.dl();
        for i in 0..self.dk() {
            let c = self.w_key.row(i).iter().cloned().fold(0.0, f64::max);
            if c <= 0.0 || !c.is_finite() {
                continue;
            }
            self.w_key.row_mut(i).iter_mut().for_each(|x| *x /= c);
            for j in 0..dl {
                self.rd.w0[(i, j)] *= c;
            }
        }
    }
}

/// Expands a latent core `(L, d_k, d_l)` into observed space:
/// `out(t,u,v) = Σ_ij core(t,i,j) · W_key(i,u) · W_loc(j,v)`.
pub fn expand(core: &Tensor3, w_key: &Matrix, w_loc: &Matrix) -> Result<Tensor3> {
    let cd = core.dims();
    if w_key.rows() != cd.keys || w_loc.rows() != cd.locs {
        return Err(Error::Dimension(format!(
            "core {cd:?} vs factors {}x{} / {}x{}",
            w_key.rows(),
            w_key.cols(),
            w_loc.rows(),
            w_loc.cols()
        )));
    }
    let (dk, dl) = (cd.keys, cd.locs);
    let (k, l) = (w_key.cols(), w_loc.cols());
    let mut out = Tensor3::zeros(Dims::new(cd.len, k, l));
    let mut tmp = vec![0.0; k * dl];
    for t in 0..cd.len {
        let c = core.slice(t);
        tmp.iter_mut().for_each(|x| *x = 0.0);
        for i in 0..dk {
            let wk = w_key.row(i);
            for j in 0..dl {
                let cij = c[i * dl + j];
                if cij == 0.0 {
                    continue;
                }
                for u in 0..k {
                    tmp[u * dl + j] += cij * wk[u];
                }
            }
        }
        let dst = out.slice_mut(t);
        for u in 0..k {
            let row = &mut dst[u * l..(u + 1) * l];
            for j in 0..dl {
                let a = tmp[u * dl + j];
                if a == 0.0 {
                    continue;
                }
                for (o, w) in row.iter_mut().zip(w_loc.row(j)) {
                    *o += a * w;
                }
            }
        }
    }
    Ok(out)
}

/// `G^(mode)`: the core expanded along the opposite mode, unfolded along `mode`.
fn partial_design(core: &Tensor3, w_key: &Matrix, w_loc: &Matrix, mode: Mode) -> Result<Matrix> {
    match mode {
        Mode::Key => Ok(core
            .mode_product(w_loc, Mode::Loc, Contract::Rows)?
            .unfold(Mode::Key)),
        Mode::Loc => Ok(core
            .mode_product(w_key, Mode::Key, Contract::Rows)?
            .unfold(Mode::Loc)),
        Mode::Time => Err(Error::InvalidInput(
            "trend factors exist only for key and loc".into(),
        )),
    }
}

/// One multiplicative update `W ← W ⊗ P ⊘ Q` of the `mode` factor with
/// `P = max(ε, G·Xᵀ)` and `Q = max(ε, G·Gᵀ·W)` (factors stored `d × size`).
fn multiplicative_step(w: &Matrix, g: &Matrix, x: &Matrix) -> Result<Matrix> {
    let p = g.matmul_t(x)?;
    let q = g.matmul_t(g)?.matmul(w)?;
    Ok(Matrix::from_fn(w.rows(), w.cols(), |r, c| {
        let num = p[(r, c)].max(EPS);
        let den = q[(r, c)].max(EPS);
        (w[(r, c)] * num / den).max(EPS)
    }))
}

/// Updates the keyword or location factor against `target` with the latent
/// core held fixed. The result is entrywise ≥ ε.
pub fn update_trend_factor(
    target: &Tensor3,
    core: &Trajectory,
    w_key: &Matrix,
    w_loc: &Matrix,
    mode: Mode,
) -> Result<Matrix> {
    let g = partial_design(&core.core, w_key, w_loc, mode)?;
    let x = target.unfold(mode);
    let w = match mode {
        Mode::Key => w_key,
        _ => w_loc,
    };
    if x.cols() != g.cols() || w.cols() != x.rows() {
        return Err(Error::Dimension(format!(
            "target {:?} incompatible with core {:?}",
            target.dims(),
            core.core.dims()
        )));
    }
    multiplicative_step(w, &g, &x)
}

/// Result of the nonnegative Tucker initialisation.
#[derive(Debug, Clone)]
pub struct NtdResult {
    pub w_key: Matrix,
    pub w_loc: Matrix,
    /// `(L, d_k, d_l)` nonnegative core; only used to seed `w0`.
    pub core: Tensor3,
    /// Frobenius reconstruction error after each iteration.
    pub errors: Vec<f64>,
}

/// Starting factor rows from the leading eigenvectors of `X·Xᵀ`: each row
/// is the larger-norm sign part of one eigenvector, lifted off zero by a
/// small seeded jitter so the multiplicative updates can move it.
fn spectral_start(unfolded: &Matrix, d: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let n = unfolded.rows();
    let g = unfolded
        .matmul_t(unfolded)
        .unwrap_or_else(|_| Matrix::identity(n));
    let eig = nalgebra::SymmetricEigen::new(nalgebra::DMatrix::from_row_slice(n, n, g.as_slice()));
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|a, b| {
        eig.eigenvalues[*b]
            .total_cmp(&eig.eigenvalues[*a])
            .then(a.cmp(b))
    });
    let mut w = Matrix::zeros(d, n);
    for (r, &c) in order.iter().take(d).enumerate() {
        let v = eig.eigenvectors.column(c);
        let pos: f64 = v.iter().map(|x| x.max(0.0).powi(2)).sum();
        let neg: f64 = v.iter().map(|x| x.min(0.0).powi(2)).sum();
        let sign = if pos >= neg { 1.0 } else { -1.0 };
        let peak = v
            .iter()
            .map(|x| (sign * x).max(0.0))
            .fold(0.0, f64::max)
            .max(EPS);
        for u in 0..n {
            let jitter: f64 = rng.random_range(0.01..0.05);
            w[(r, u)] = (sign * v[u]).max(0.0) / peak + jitter;
        }
    }
    w
}

/// Nonnegative Tucker-2 decomposition `X ≈ C ×_key W_key ×_loc W_loc` with
/// the time mode left unfactored. Negative inputs are clipped to zero.
pub fn ntd_init(x: &Tensor3, dk: usize, dl: usize, iters: usize, seed: u64) -> Result<NtdResult> {
    let dims = x.dims();
    if dk == 0 || dl == 0 {
        return Err(Error::InvalidInput("trend ranks must be ≥ 1".into()));
    }
    if dk > dims.keys {
        return Err(Error::RankTooLarge {
            mode: "key",
            rank: dk,
            size: dims.keys,
        });
    }
    if dl > dims.locs {
        return Err(Error::RankTooLarge {
            mode: "loc",
            rank: dl,
            size: dims.locs,
        });
    }
    let x = x.map(|v| v.max(0.0));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w_key = spectral_start(&x.unfold(Mode::Key), dk, &mut rng);
    let mut w_loc = spectral_start(&x.unfold(Mode::Loc), dl, &mut rng);

    // Core seeded by projecting the data and matching its scale.
    let mut core = x
        .mode_product(&w_key, Mode::Key, Contract::Cols)?
        .mode_product(&w_loc, Mode::Loc, Contract::Cols)?
        .map(|v| v.max(EPS));
    let recon = expand(&core, &w_key, &w_loc)?;
    let rr = recon.sq_norm();
    if rr > 0.0 {
        let xr: f64 = x
            .as_slice()
            .iter()
            .zip(recon.as_slice())
            .map(|(a, b)| a * b)
            .sum();
        core.scale((xr / rr).max(EPS));
    }

    let xk = x.unfold(Mode::Key);
    let xl = x.unfold(Mode::Loc);
    let mut errors = Vec::with_capacity(iters);
    for _ in 0..iters {
        let gk = core
            .mode_product(&w_loc, Mode::Loc, Contract::Rows)?
            .unfold(Mode::Key);
        w_key = multiplicative_step(&w_key, &gk, &xk)?;
        let gl = core
            .mode_product(&w_key, Mode::Key, Contract::Rows)?
            .unfold(Mode::Loc);
        w_loc = multiplicative_step(&w_loc, &gl, &xl)?;

        // Core update: C ⊗ (X ×_key W_key ×_loc W_loc) ⊘ (C ×_key W_kW_kᵀ ×_loc W_lW_lᵀ).
        let num = x
            .mode_product(&w_key, Mode::Key, Contract::Cols)?
            .mode_product(&w_loc, Mode::Loc, Contract::Cols)?;
        let den = core
            .mode_product(&w_key.matmul_t(&w_key)?, Mode::Key, Contract::Cols)?
            .mode_product(&w_loc.matmul_t(&w_loc)?, Mode::Loc, Contract::Cols)?;
        for ((c, n), d) in core
            .as_mut_slice()
            .iter_mut()
            .zip(num.as_slice())
            .zip(den.as_slice())
        {
            *c = (*c * n.max(EPS) / d.max(EPS)).max(EPS);
        }
        let recon = expand(&core, &w_key, &w_loc)?;
        errors.push(x.sub(&recon)?.frobenius_norm());
    }

    // Unit-max factor rows, scale moved into the core.
    for (w, mode) in [(&mut w_key, Mode::Key), (&mut w_loc, Mode::Loc)] {
        for i in 0..w.rows() {
            let c = w.row(i).iter().cloned().fold(0.0, f64::max);
            if c <= 0.0 {
                continue;
            }
            w.row_mut(i).iter_mut().for_each(|v| *v /= c);
            let cd = core.dims();
            for t in 0..cd.len {
                match mode {
                    Mode::Key => {
                        for j in 0..cd.locs {
                            let v = core.get(t, i, j) * c;
                            core.set(t, i, j, v);
                        }
                    }
                    _ => {
                        for r in 0..cd.keys {
                            let v = core.get(t, r, i) * c;
                            core.set(t, r, i, v);
                        }
                    }
                }
            }
        }
    }

    Ok(NtdResult {
        w_key,
        w_loc,
        core,
        errors,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::{rd_derivative, Diffusion};

    fn rng_matrix(rows: usize, cols: usize, seed: u64, lo: f64, hi: f64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Matrix::from_fn(rows, cols, |_, _| rng.random_range(lo..hi))
    }

    fn rng_tensor(dims: Dims, seed: u64, lo: f64, hi: f64) -> Tensor3 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor3::from_fn(dims, |_, _, _| rng.random_range(lo..hi))
    }

    #[test]
    fn expand_matches_mode_products() {
        let core = rng_tensor(Dims::new(4, 2, 3), 1, -1.0, 1.0);
        let wk = rng_matrix(2, 5, 2, 0.0, 1.0);
        let wl = rng_matrix(3, 4, 3, 0.0, 1.0);
        let a = expand(&core, &wk, &wl).unwrap();
        let b = core
            .mode_product(&wk, Mode::Key, Contract::Rows)
            .unwrap()
            .mode_product(&wl, Mode::Loc, Contract::Rows)
            .unwrap();
        assert!(a.sub(&b).unwrap().frobenius_norm() < 1e-12);
    }

    fn positive_instance() -> (Trajectory, Matrix, Matrix) {
        let mut d = Diffusion::zeros(2, 2);
        d.set(0, 0, 1, 0.05);
        let rd = RDParams::new(
            Matrix::from_rows(&[vec![0.01, -0.01], vec![0.02, 0.0]]).unwrap(),
            d,
            Matrix::from_rows(&[vec![0.5, 1.0], vec![0.8, 0.3]]).unwrap(),
        )
        .unwrap();
        let core = generate(&rd, 30).unwrap();
        (
            core,
            rng_matrix(2, 5, 7, 0.1, 1.0),
            rng_matrix(2, 6, 8, 0.1, 1.0),
        )
    }

    #[test]
    fn exact_factorization_is_a_fixed_point() {
        let (core, wk, wl) = positive_instance();
        let target = expand(&core.core, &wk, &wl).unwrap();
        let nk = update_trend_factor(&target, &core, &wk, &wl, Mode::Key).unwrap();
        let nl = update_trend_factor(&target, &core, &wk, &wl, Mode::Loc).unwrap();
        for (a, b) in nk.as_slice().iter().zip(wk.as_slice()) {
            assert!((a - b).abs() < 1e-9);
        }
        for (a, b) in nl.as_slice().iter().zip(wl.as_slice()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn updates_stay_nonnegative_with_signed_targets() {
        let (core, wk, wl) = positive_instance();
        let target = rng_tensor(Dims::new(30, 5, 6), 11, -1.0, 0.5);
        let nk = update_trend_factor(&target, &core, &wk, &wl, Mode::Key).unwrap();
        let nl = update_trend_factor(&target, &core, &nk, &wl, Mode::Loc).unwrap();
        assert!(nk.as_slice().iter().chain(nl.as_slice()).all(|x| *x >= 0.0));
    }

    #[test]
    fn alternating_updates_do_not_increase_error() {
        let (core, wk_true, wl_true) = positive_instance();
        let noise = rng_tensor(Dims::new(30, 5, 6), 5, 0.0, 0.05);
        let target = expand(&core.core, &wk_true, &wl_true)
            .unwrap()
            .add(&noise)
            .unwrap();
        let mut wk = rng_matrix(2, 5, 21, 0.1, 1.0);
        let mut wl = rng_matrix(2, 6, 22, 0.1, 1.0);
        let err = |wk: &Matrix, wl: &Matrix| {
            target
                .sub(&expand(&core.core, wk, wl).unwrap())
                .unwrap()
                .frobenius_norm()
        };
        let mut prev = err(&wk, &wl);
        for _ in 0..10 {
            wk = update_trend_factor(&target, &core, &wk, &wl, Mode::Key).unwrap();
            let e = err(&wk, &wl);
            assert!(e <= prev * (1.0 + 1e-12), "{e} > {prev}");
            prev = e;
            wl = update_trend_factor(&target, &core, &wk, &wl, Mode::Loc).unwrap();
            let e = err(&wk, &wl);
            assert!(e <= prev * (1.0 + 1e-12), "{e} > {prev}");
            prev = e;
        }
    }

    #[test]
    fn scale_gauge_leaves_reconstruction_unchanged() {
        let (core, wk, wl) = positive_instance();
        let base = expand(&core.core, &wk, &wl).unwrap();
        let mut wk2 = wk.clone();
        wk2.row_mut(1).iter_mut().for_each(|x| *x *= 3.5);
        let mut c2 = core.core.clone();
        for t in 0..30 {
            for j in 0..2 {
                let v = c2.get(t, 1, j) / 3.5;
                c2.set(t, 1, j, v);
            }
        }
        let other = expand(&c2, &wk2, &wl).unwrap();
        assert!(base.sub(&other).unwrap().frobenius_norm() <= 1e-12 * base.frobenius_norm());
    }

    #[test]
    fn normalization_preserves_reconstruction() {
        let (core, wk, wl) = positive_instance();
        let rd = RDParams::new(
            Matrix::from_rows(&[vec![0.01, -0.01], vec![0.02, 0.0]]).unwrap(),
            Diffusion::zeros(2, 2),
            core.state(0),
        )
        .unwrap();
        let mut tp = TrendParams {
            w_key: wk,
            w_loc: wl,
            rd,
        };
        let before = tp.reconstruct(30).unwrap();
        tp.normalize();
        let after = tp.reconstruct(30).unwrap();
        for i in 0..2 {
            let m = tp.w_key.row(i).iter().cloned().fold(0.0, f64::max);
            assert!((m - 1.0).abs() < 1e-15);
        }
        assert!(before.sub(&after).unwrap().frobenius_norm() <= 1e-12 * before.frobenius_norm());
    }

    #[test]
    fn projected_derivative_commutes_with_expansion() {
        let (core, wk, wl) = positive_instance();
        let mut d = Diffusion::zeros(2, 2);
        d.set(0, 0, 1, 0.05);
        d.set(1, 1, 0, 0.2);
        let rd = RDParams::new(
            Matrix::from_rows(&[vec![0.01, -0.01], vec![0.02, 0.0]]).unwrap(),
            d,
            core.state(0),
        )
        .unwrap();
        let state = core.state(7);
        let dw = rd_derivative(&state, &rd).unwrap();
        let dcore = Tensor3::from_vec(Dims::new(1, 2, 2), dw.as_slice().to_vec()).unwrap();
        let projected = expand(&dcore, &wk, &wl).unwrap();
        for u in 0..5 {
            for v in 0..6 {
                let mut want = 0.0;
                for i in 0..2 {
                    for j in 0..2 {
                        let mut inner = rd.growth[(i, j)] * state[(i, j)];
                        for jp in 0..2 {
                            inner += rd.diffusion.get(i, j, jp) * (state[(i, jp)] - state[(i, j)]);
                        }
                        want += wk[(i, u)] * wl[(j, v)] * inner;
                    }
                }
                assert!((projected.get(0, u, v) - want).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn ntd_recovers_exact_tucker_structure() {
        let core = rng_tensor(Dims::new(20, 2, 2), 3, 0.2, 1.0);
        let wk = Matrix::from_rows(&[vec![1.0, 0.8, 0.0, 0.0, 0.1], vec![0.0, 0.1, 1.0, 0.7, 0.0]])
            .unwrap();
        let wl = Matrix::from_rows(&[
            vec![1.0, 0.5, 0.0, 0.0, 0.0, 0.2],
            vec![0.0, 0.0, 0.9, 1.0, 0.6, 0.0],
        ])
        .unwrap();
        let x = expand(&core, &wk, &wl).unwrap();
        let res = ntd_init(&x, 2, 2, 500, 0).unwrap();
        let rel = res.errors.last().unwrap() / x.frobenius_norm();
        assert!(rel <= 1e-2, "relative error {rel}");
        assert!(res.w_key.as_slice().iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn ntd_on_zero_tensor_is_zero_safe() {
        let x = Tensor3::zeros(Dims::new(10, 4, 3));
        let res = ntd_init(&x, 2, 2, 20, 0).unwrap();
        let recon = expand(&res.core, &res.w_key, &res.w_loc).unwrap();
        assert!(recon.frobenius_norm() < 1e-9);
        assert!(res.errors.last().unwrap() < &1e-9);
    }

    #[test]
    fn ntd_error_decreases_on_random_data() {
        let x = rng_tensor(Dims::new(20, 6, 8), 99, 0.0, 1.0);
        let res = ntd_init(&x, 2, 3, 50, 4).unwrap();
        assert!(res.errors[49] <= res.errors[4]);
    }

    #[test]
    fn ntd_rejects_oversized_ranks() {
        let x = Tensor3::zeros(Dims::new(5, 2, 3));
        assert!(matches!(
            ntd_init(&x, 3, 1, 5, 0),
            Err(Error::RankTooLarge { .. })
        ));
        assert!(matches!(
            ntd_init(&x, 1, 4, 5, 0),
            Err(Error::RankTooLarge { .. })
        ));
    }
}
