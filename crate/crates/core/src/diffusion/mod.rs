//! Latent reaction-diffusion system.
//!
//! Each latent dynamics `w_ij` (keyword group `i`, location group `j`)
//! evolves as
//!
//! ```text
//! dw_ij/dt = a_ij · w_ij + Σ_j' d_ijj' · (w_ij' − w_ij)
//! ```
//!
//! Diffusion only couples location groups within the same keyword group.
//! Trajectories are integrated with classical RK4 at a fixed step of one
//! sample.

mod lm;

pub use lm::{fit_lm, FreeParams, LmFit, LmOptions, LmStatus, RdProblem};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Dims, Matrix, Tensor3};

/// States with magnitude above this abort integration.
pub const DIVERGENCE_LIMIT: f64 = 1e12;

/// Nonnegative diffusion strengths `d_ijj'`, stored `(i, j, j')` row-major.
/// Self-diffusion `d_ijj` has no effect on the system and is pinned at zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diffusion {
    dk: usize,
    dl: usize,
    data: Vec<f64>,
}

impl Diffusion {
    pub fn zeros(dk: usize, dl: usize) -> Self {
        Self {
            dk,
            dl,
            data: vec![0.0; dk * dl * dl],
        }
    }

    pub fn from_vec(dk: usize, dl: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != dk * dl * dl {
            return Err(Error::Dimension(format!(
                "diffusion tensor {dk}x{dl}x{dl} needs {} entries, got {}",
                dk * dl * dl,
                data.len()
            )));
        }
        let mut d = Self { dk, dl, data };
        d.enforce();
        Ok(d)
    }

    pub fn dk(&self) -> usize {
        self.dk
    }

    pub fn dl(&self) -> usize {
        self.dl
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, jp: usize) -> f64 {
        self.data[(i * self.dl + j) * self.dl + jp]
    }

    /// Sets `d_ijj'`. Negative values clamp to zero and the diagonal is ignored.
    pub fn set(&mut self, i: usize, j: usize, jp: usize, value: f64) {
        if j != jp {
            self.data[(i * self.dl + j) * self.dl + jp] = value.max(0.0);
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn count_nonzero(&self) -> usize {
        self.data.iter().filter(|x| **x != 0.0).count()
    }

    pub fn max(&self) -> f64 {
        self.data.iter().cloned().fold(0.0, f64::max)
    }

    fn enforce(&mut self) {
        for i in 0..self.dk {
            for j in 0..self.dl {
                for jp in 0..self.dl {
                    let x = &mut self.data[(i * self.dl + j) * self.dl + jp];
                    if j == jp || *x < 0.0 {
                        *x = 0.0;
                    }
                }
            }
        }
    }
}

/// Parameters of the latent system: growth rates `A`, diffusion strengths
/// `𝒟`, and the initial state `w0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RDParams {
    pub growth: Matrix,
    pub diffusion: Diffusion,
    pub w0: Matrix,
}

impl RDParams {
    pub fn new(growth: Matrix, diffusion: Diffusion, w0: Matrix) -> Result<Self> {
        let (dk, dl) = (growth.rows(), growth.cols());
        if w0.rows() != dk || w0.cols() != dl || diffusion.dk != dk || diffusion.dl != dl {
            return Err(Error::Dimension(format!(
                "growth {dk}x{dl}, w0 {}x{}, diffusion {}x{}",
                w0.rows(),
                w0.cols(),
                diffusion.dk,
                diffusion.dl
            )));
        }
        if w0.as_slice().iter().any(|x| *x < 0.0) {
            return Err(Error::InvalidInput(
                "initial state must be nonnegative".into(),
            ));
        }
        Ok(Self {
            growth,
            diffusion,
            w0,
        })
    }

    /// All-zero system of the given latent size.
    pub fn zeros(dk: usize, dl: usize) -> Self {
        Self {
            growth: Matrix::zeros(dk, dl),
            diffusion: Diffusion::zeros(dk, dl),
            w0: Matrix::zeros(dk, dl),
        }
    }

    pub fn dk(&self) -> usize {
        self.growth.rows()
    }

    pub fn dl(&self) -> usize {
        self.growth.cols()
    }

    /// Time derivative of `w` (a `dk·dl` row-major state) written into `out`.
    pub fn derivative_into(&self, w: &[f64], out: &mut [f64]) {
        let (dk, dl) = (self.dk(), self.dl());
        let a = self.growth.as_slice();
        let d = &self.diffusion.data;
        for i in 0..dk {
            let row = &w[i * dl..(i + 1) * dl];
            for j in 0..dl {
                let idx = i * dl + j;
                let wij = row[j];
                let coupling = &d[idx * dl..(idx + 1) * dl];
                let mut acc = a[idx] * wij;
                for (jp, dij) in coupling.iter().enumerate() {
                    if *dij != 0.0 {
                        acc += dij * (row[jp] - wij);
                    }
                }
                out[idx] = acc;
            }
        }
    }

    /// Runs RK4 from `start` and returns `len` states, the first being `start`.
    pub fn integrate(&self, start: &[f64], len: usize) -> Result<Tensor3> {
        let (dk, dl) = (self.dk(), self.dl());
        let n = dk * dl;
        assert_eq!(start.len(), n, "state size");
        let mut data = Vec::with_capacity(len * n);
        data.extend_from_slice(start);
        let mut state = start.to_vec();
        let (mut k1, mut k2, mut k3, mut k4) =
            (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
        let mut tmp = vec![0.0; n];
        for step in 1..len {
            self.derivative_into(&state, &mut k1);
            for i in 0..n {
                tmp[i] = state[i] + 0.5 * k1[i];
            }
            self.derivative_into(&tmp, &mut k2);
            for i in 0..n {
                tmp[i] = state[i] + 0.5 * k2[i];
            }
            self.derivative_into(&tmp, &mut k3);
            for i in 0..n {
                tmp[i] = state[i] + k3[i];
            }
            self.derivative_into(&tmp, &mut k4);
            for i in 0..n {
                state[i] += (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]) / 6.0;
                if !state[i].is_finite() || state[i].abs() > DIVERGENCE_LIMIT {
                    return Err(Error::Divergence { step });
                }
            }
            data.extend_from_slice(&state);
        }
        Tensor3::from_vec(Dims::new(len, dk, dl), data)
    }
}

/// Evaluates the reaction-diffusion right-hand side at state `w`.
pub fn rd_derivative(w: &Matrix, params: &RDParams) -> Result<Matrix> {
    if w.rows() != params.dk() || w.cols() != params.dl() {
        return Err(Error::Dimension(format!(
            "state {}x{} vs system {}x{}",
            w.rows(),
            w.cols(),
            params.dk(),
            params.dl()
        )));
    }
    let mut out = Matrix::zeros(w.rows(), w.cols());
    params.derivative_into(w.as_slice(), out.as_mut_slice());
    Ok(out)
}

/// Latent dynamics `𝒲^(core)` with dims `(len, dk, dl)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub core: Tensor3,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.core.dims().len
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// State at time `t` as a `dk × dl` matrix.
    pub fn state(&self, t: usize) -> Matrix {
        let d = self.core.dims();
        Matrix::from_vec(d.keys, d.locs, self.core.slice(t).to_vec())
            .expect("slice has dk*dl entries")
    }
}

/// Generates an `len`-long trajectory from `params.w0`.
pub fn generate(params: &RDParams, len: usize) -> Result<Trajectory> {
    if len == 0 {
        return Err(Error::InvalidInput("trajectory length must be ≥ 1".into()));
    }
    Ok(Trajectory {
        core: params.integrate(params.w0.as_slice(), len)?,
    })
}
