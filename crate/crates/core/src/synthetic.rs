//! Synthetic tensor streams drawn from a known model, for tests and demos.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::diffusion::{Diffusion, RDParams};
use crate::error::{Error, Result};
use crate::tensor::{Dims, Matrix, Tensor3};
use crate::trend::expand;

/// Ground truth for a synthetic stream.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub len: usize,
    pub w_key: Matrix,
    pub w_loc: Matrix,
    pub dynamics: RDParams,
    /// `(time, growth)` pairs: from `time` on the latent system runs with the
    /// new growth matrix, continuing from its current state.
    pub shifts: Vec<(usize, Matrix)>,
    pub period: usize,
    /// Rank-one sinusoidal seasonal component: amplitude and key/loc loadings.
    pub seasonal_amplitude: f64,
    pub seasonal_key: Vec<f64>,
    pub seasonal_loc: Vec<f64>,
    pub noise_sigma: f64,
    /// Additive `(t, key, loc, magnitude)` spikes.
    pub spikes: Vec<(usize, usize, usize, f64)>,
    pub seed: u64,
}

/// A generated stream and its noise-free parts.
#[derive(Debug, Clone)]
pub struct Synthetic {
    pub data: Tensor3,
    pub trend: Tensor3,
    pub seasonal: Tensor3,
    pub latent: Tensor3,
}

impl Scenario {
    /// Six keys, eight locations, ranks `(2, 2, 1)`: two keyword groups over
    /// two location groups with one diffusion link, decaying latent modes, a
    /// weekly-style seasonal cycle of period 52 and five spikes. With
    /// `shift`, the first mode's growth flips from decay to growth at t=180.
    pub fn regime_shift(len: usize, shift: bool, seed: u64) -> Self {
        let mut diffusion = Diffusion::zeros(2, 2);
        diffusion.set(1, 1, 0, 0.05);
        let growth = Matrix::from_rows(&[vec![-0.01, -0.004], vec![-0.006, -0.012]]).expect("2x2");
        let mut flipped = growth.clone();
        flipped[(0, 0)] = 0.01;
        let w0 = Matrix::from_rows(&[vec![0.5, 0.3], vec![0.4, 0.2]]).expect("2x2");
        Self {
            len,
            w_key: Matrix::from_rows(&[
                vec![1.0, 0.7, 0.4, 0.0, 0.05, 0.0],
                vec![0.0, 0.1, 0.0, 1.0, 0.6, 0.8],
            ])
            .expect("2x6"),
            w_loc: Matrix::from_rows(&[
                vec![1.0, 0.8, 0.5, 0.3, 0.0, 0.0, 0.1, 0.0],
                vec![0.0, 0.0, 0.1, 0.2, 1.0, 0.7, 0.9, 0.5],
            ])
            .expect("2x8"),
            dynamics: RDParams::new(growth, diffusion, w0).expect("valid dynamics"),
            shifts: if shift {
                vec![(180, flipped)]
            } else {
                Vec::new()
            },
            period: 52,
            seasonal_amplitude: 0.1,
            seasonal_key: vec![1.0, 0.8, 0.6, 0.9, 0.7, 0.5],
            seasonal_loc: vec![1.0, 0.9, 0.8, 0.7, 0.6, 0.9, 1.0, 0.8],
            noise_sigma: 0.01,
            spikes: vec![
                (40, 1, 2, 0.4),
                (150, 3, 5, 0.4),
                (200, 0, 0, 0.4),
                (240, 4, 6, 0.4),
                (270, 2, 7, 0.4),
            ]
            .into_iter()
            .filter(|s| s.0 < len)
            .collect(),
            seed,
        }
    }

    pub fn dims(&self) -> Dims {
        Dims::new(self.len, self.w_key.cols(), self.w_loc.cols())
    }

    pub fn generate(&self) -> Result<Synthetic> {
        let dims = self.dims();
        if self.seasonal_key.len() != dims.keys || self.seasonal_loc.len() != dims.locs {
            return Err(Error::Dimension(
                "seasonal loadings do not match the factor shapes".into(),
            ));
        }
        let mut shifts = self.shifts.clone();
        shifts.sort_by_key(|s| s.0);
        let (dk, dl) = (self.dynamics.dk(), self.dynamics.dl());
        let mut latent = Vec::with_capacity(self.len * dk * dl);
        let mut params = self.dynamics.clone();
        let mut state = params.w0.as_slice().to_vec();
        let mut t = 0;
        let mut bounds: Vec<usize> = shifts.iter().map(|s| s.0.min(self.len)).collect();
        bounds.push(self.len);
        for (seg, end) in bounds.iter().enumerate() {
            if seg > 0 {
                params.growth = shifts[seg - 1].1.clone();
            }
            if *end <= t {
                continue;
            }
            // integrate one extra step so the next segment starts from the
            // state reached at its first sample
            let piece = params.integrate(&state, end - t + 1)?;
            let n = dk * dl;
            latent.extend_from_slice(&piece.as_slice()[..(end - t) * n]);
            state = piece.slice(end - t).to_vec();
            t = *end;
        }
        let latent = Tensor3::from_vec(Dims::new(self.len, dk, dl), latent)?;
        let trend = expand(&latent, &self.w_key, &self.w_loc)?;
        let seasonal = Tensor3::from_fn(dims, |t, u, v| {
            let phase = 2.0 * std::f64::consts::PI * t as f64 / self.period as f64;
            self.seasonal_amplitude * phase.sin() * self.seasonal_key[u] * self.seasonal_loc[v]
        });
        let mut data = trend.add(&seasonal)?;
        if self.noise_sigma > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
            let normal = Normal::new(0.0, self.noise_sigma)
                .map_err(|e| Error::InvalidInput(format!("noise level: {e}")))?;
            data.as_mut_slice()
                .iter_mut()
                .for_each(|v| *v += normal.sample(&mut rng));
        }
        for &(t, u, v, m) in &self.spikes {
            if t < dims.len && u < dims.keys && v < dims.locs {
                let x = data.get(t, u, v) + m;
                data.set(t, u, v, x);
            }
        }
        Ok(Synthetic {
            data,
            trend,
            seasonal,
            latent,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn components_add_up() {
        let mut sc = Scenario::regime_shift(300, true, 4);
        sc.noise_sigma = 0.0;
        let s = sc.generate().unwrap();
        assert_eq!(s.data.dims(), Dims::new(300, 6, 8));
        assert_eq!(s.latent.slice(0), sc.dynamics.w0.as_slice());
        let mut sum = s.trend.add(&s.seasonal).unwrap();
        for &(t, u, v, m) in &sc.spikes {
            sum.set(t, u, v, sum.get(t, u, v) + m);
        }
        assert_eq!(sum, s.data);
    }

    #[test]
    fn shift_continues_from_the_current_state() {
        let with = Scenario::regime_shift(300, true, 0).generate().unwrap();
        let without = Scenario::regime_shift(300, false, 0).generate().unwrap();
        for t in 0..=180 {
            assert_eq!(with.latent.slice(t), without.latent.slice(t), "t={t}");
        }
        // the flipped mode grows afterwards
        assert!(with.latent.get(299, 0, 0) > 2.0 * with.latent.get(180, 0, 0));
        assert!(without.latent.get(299, 0, 0) < without.latent.get(180, 0, 0));
    }

    #[test]
    fn noise_is_seeded() {
        let a = Scenario::regime_shift(60, false, 9).generate().unwrap();
        let b = Scenario::regime_shift(60, false, 9).generate().unwrap();
        let c = Scenario::regime_shift(60, false, 10).generate().unwrap();
        assert_eq!(a.data, b.data);
        assert_ne!(a.data, c.data);
        assert_eq!(Scenario::regime_shift(60, false, 9).spikes.len(), 1);
    }
}
