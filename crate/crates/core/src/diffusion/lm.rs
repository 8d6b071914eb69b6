//! Levenberg-Marquardt fit of the latent system against an observed-space
//! target, with the trend factors held fixed.

use nalgebra::{DMatrix, DVector};

use super::{Diffusion, RDParams};
use crate::error::{Error, Result};
use crate::tensor::{Matrix, Tensor3};
use crate::trend::expand;

/// Which parameters the fit may move.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FreeParams {
    /// Growth rates, off-diagonal diffusion strengths and the initial state.
    #[default]
    All,
    /// Only the initial state; `A` and `𝒟` stay frozen.
    InitialState,
}

#[derive(Debug, Clone)]
pub struct LmOptions {
    pub free: FreeParams,
    pub max_iter: usize,
    /// Stop once the relative decrease of the squared residual drops below this.
    pub rel_tol: f64,
    pub initial_damping: f64,
    /// Forward-difference step is `fd_step · (1 + |p|)`.
    pub fd_step: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        Self {
            free: FreeParams::All,
            max_iter: 100,
            rel_tol: 1e-6,
            initial_damping: 1e-3,
            fd_step: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LmStatus {
    Converged,
    MaxIterations,
    /// No step ever decreased the residual; the initial parameters are returned.
    NoProgress,
}

#[derive(Debug, Clone)]
pub struct LmFit {
    pub params: RDParams,
    pub residual_norm: f64,
    pub initial_residual_norm: f64,
    pub iterations: usize,
    pub status: LmStatus,
}

/// Observed-space least-squares problem
/// `‖target − f(θ, w0, L) ×_key W_key ×_loc W_loc‖²` over a packed parameter
/// vector.
pub struct RdProblem<'a> {
    target: &'a Tensor3,
    w_key: &'a Matrix,
    w_loc: &'a Matrix,
    template: RDParams,
    free: FreeParams,
}

impl<'a> RdProblem<'a> {
    pub fn new(
        target: &'a Tensor3,
        w_key: &'a Matrix,
        w_loc: &'a Matrix,
        template: &RDParams,
        free: FreeParams,
    ) -> Result<Self> {
        let (dk, dl) = (template.dk(), template.dl());
        let dims = target.dims();
        if w_key.rows() != dk
            || w_loc.rows() != dl
            || w_key.cols() != dims.keys
            || w_loc.cols() != dims.locs
        {
            return Err(Error::Dimension(format!(
                "target {dims:?}, w_key {}x{}, w_loc {}x{}, latent {dk}x{dl}",
                w_key.rows(),
                w_key.cols(),
                w_loc.rows(),
                w_loc.cols()
            )));
        }
        Ok(Self {
            target,
            w_key,
            w_loc,
            template: template.clone(),
            free,
        })
    }

    fn latent(&self) -> (usize, usize) {
        (self.template.dk(), self.template.dl())
    }

    /// Indices `(i, j, j')` of the free off-diagonal diffusion entries.
    fn diffusion_slots(&self) -> impl Iterator<Item = (usize, usize, usize)> {
        let (dk, dl) = self.latent();
        (0..dk).flat_map(move |i| {
            (0..dl).flat_map(move |j| (0..dl).filter(move |jp| *jp != j).map(move |jp| (i, j, jp)))
        })
    }

    pub fn pack(&self, p: &RDParams) -> Vec<f64> {
        match self.free {
            FreeParams::All => {
                let mut x = p.growth.as_slice().to_vec();
                x.extend(
                    self.diffusion_slots()
                        .map(|(i, j, jp)| p.diffusion.get(i, j, jp)),
                );
                x.extend_from_slice(p.w0.as_slice());
                x
            }
            FreeParams::InitialState => p.w0.as_slice().to_vec(),
        }
    }

    pub fn unpack(&self, x: &[f64]) -> RDParams {
        let (dk, dl) = self.latent();
        let n = dk * dl;
        let mut p = self.template.clone();
        match self.free {
            FreeParams::All => {
                p.growth.as_mut_slice().copy_from_slice(&x[..n]);
                let mut d = Diffusion::zeros(dk, dl);
                for ((i, j, jp), v) in self.diffusion_slots().zip(&x[n..]) {
                    d.set(i, j, jp, *v);
                }
                p.diffusion = d;
                let w0_start = x.len() - n;
                p.w0.as_mut_slice().copy_from_slice(&x[w0_start..]);
            }
            FreeParams::InitialState => p.w0.as_mut_slice().copy_from_slice(x),
        }
        p
    }

    /// Clamps the nonnegative block (diffusion and initial state) onto `[0, ∞)`.
    pub fn project(&self, x: &mut [f64]) {
        let start = match self.free {
            FreeParams::All => {
                let (dk, dl) = self.latent();
                dk * dl
            }
            FreeParams::InitialState => 0,
        };
        for v in &mut x[start..] {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
    }

    /// Model prediction `f(θ) ×_key W_key ×_loc W_loc`, flattened.
    pub fn model(&self, x: &[f64]) -> Result<Vec<f64>> {
        let p = self.unpack(x);
        let core = p.integrate(p.w0.as_slice(), self.target.dims().len)?;
        Ok(expand(&core, self.w_key, self.w_loc)?.into_vec())
    }

    /// Residual vector `target − model`.
    pub fn residual(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut r = self.model(x)?;
        for (ri, t) in r.iter_mut().zip(self.target.as_slice()) {
            *ri = t - *ri;
        }
        Ok(r)
    }

    /// Forward-difference Jacobian of the model, one column per parameter,
    /// with step `rel_step · (1 + |p|)`.
    pub fn jacobian(&self, x: &[f64], rel_step: f64) -> Result<Vec<Vec<f64>>> {
        let base = self.model(x)?;
        self.jacobian_from(x, &base, rel_step)
    }

    fn jacobian_from(&self, x: &[f64], base: &[f64], rel_step: f64) -> Result<Vec<Vec<f64>>> {
        let mut cols = Vec::with_capacity(x.len());
        let mut xp = x.to_vec();
        for j in 0..x.len() {
            let h = rel_step * (1.0 + x[j].abs());
            xp[j] = x[j] + h;
            let col = match self.model(&xp) {
                Ok(m) => m.iter().zip(base).map(|(a, b)| (a - b) / h).collect(),
                // step off the divergence edge backwards
                Err(Error::Divergence { .. }) => {
                    xp[j] = x[j] - h;
                    match self.model(&xp) {
                        Ok(m) => m.iter().zip(base).map(|(a, b)| (b - a) / h).collect(),
                        Err(Error::Divergence { .. }) => vec![0.0; base.len()],
                        Err(e) => return Err(e),
                    }
                }
                Err(e) => return Err(e),
            };
            xp[j] = x[j];
            cols.push(col);
        }
        Ok(cols)
    }
}

/// Fits `{A, 𝒟, w0}` (or `w0` alone) by Levenberg-Marquardt.
///
/// Steps are taken unconstrained and then projected so that `𝒟, w0 ≥ 0`;
/// a projected step that does not lower the residual is rejected, as is any
/// trial step whose integration diverges. The returned residual never
/// exceeds the residual at `init`.
pub fn fit_lm(
    target: &Tensor3,
    w_key: &Matrix,
    w_loc: &Matrix,
    init: &RDParams,
    opts: &LmOptions,
) -> Result<LmFit> {
    if !target.is_finite() {
        return Err(Error::InvalidInput(
            "target contains non-finite values".into(),
        ));
    }
    let problem = RdProblem::new(target, w_key, w_loc, init, opts.free)?;
    let mut x = problem.pack(init);
    problem.project(&mut x);
    let mut model = problem.model(&x)?;
    let mut cost = residual_cost(target, &model);
    let initial_norm = cost.sqrt();

    let mut lambda = opts.initial_damping;
    let mut iterations = 0;
    let mut improved = false;
    let mut status = LmStatus::MaxIterations;
    let n_params = x.len();

    while iterations < opts.max_iter {
        if cost == 0.0 {
            status = LmStatus::Converged;
            break;
        }
        iterations += 1;
        let jac = problem.jacobian_from(&x, &model, opts.fd_step)?;
        let r: Vec<f64> = target
            .as_slice()
            .iter()
            .zip(&model)
            .map(|(t, m)| t - m)
            .collect();
        let mut h = DMatrix::<f64>::zeros(n_params, n_params);
        let mut g = DVector::<f64>::zeros(n_params);
        for a in 0..n_params {
            g[a] = crate::tensor::dot(&jac[a], &r);
            for b in 0..=a {
                let v = crate::tensor::dot(&jac[a], &jac[b]);
                h[(a, b)] = v;
                h[(b, a)] = v;
            }
        }
        let max_diag = (0..n_params).map(|a| h[(a, a)]).fold(0.0, f64::max);
        if max_diag == 0.0 {
            // Parameters have no influence on the model.
            status = LmStatus::Converged;
            break;
        }
        let floor = max_diag * 1e-12;

        let mut accepted = None;
        while lambda <= 1e16 {
            let mut damped = h.clone();
            for a in 0..n_params {
                damped[(a, a)] += lambda * h[(a, a)].max(floor);
            }
            let step = match damped.cholesky() {
                Some(ch) => ch.solve(&g),
                None => {
                    lambda *= 10.0;
                    continue;
                }
            };
            let mut trial: Vec<f64> = x.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
            problem.project(&mut trial);
            match problem.model(&trial) {
                Ok(m) => {
                    let c = residual_cost(target, &m);
                    if c < cost {
                        accepted = Some((trial, m, c));
                        lambda = (lambda / 10.0).max(1e-12);
                        break;
                    }
                }
                Err(Error::Divergence { .. }) => {}
                Err(e) => return Err(e),
            }
            lambda *= 10.0;
        }

        let Some((trial, m, c)) = accepted else {
            status = LmStatus::Converged;
            break;
        };
        improved = true;
        let rel = (cost - c) / cost;
        x = trial;
        model = m;
        cost = c;
        if rel < opts.rel_tol {
            status = LmStatus::Converged;
            break;
        }
    }

    if !improved && cost > 0.0 {
        status = LmStatus::NoProgress;
    }
    Ok(LmFit {
        params: problem.unpack(&x),
        residual_norm: cost.sqrt(),
        initial_residual_norm: initial_norm,
        iterations,
        status,
    })
}

fn residual_cost(target: &Tensor3, model: &[f64]) -> f64 {
    target
        .as_slice()
        .iter()
        .zip(model)
        .map(|(t, m)| (t - m) * (t - m))
        .sum()
}

/// Identity factor pair for fitting directly in latent space.
#[cfg(test)]
pub(crate) fn identity_factors(dk: usize, dl: usize) -> (Matrix, Matrix) {
    (Matrix::identity(dk), Matrix::identity(dl))
}
