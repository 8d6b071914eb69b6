use diffstream::diffusion::{Diffusion, RDParams};
use diffstream::estimator::{model_estimation, EstimationConfig, Ranks};
use diffstream::io::Normalization;
use diffstream::synthetic::Scenario;
use diffstream::tensor::Matrix;

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb).max(1e-300)
}

/// Fitted row → best matching true row.
fn align(fitted: &Matrix, truth: &Matrix) -> Vec<usize> {
    (0..fitted.rows())
        .map(|i| {
            (0..truth.rows())
                .max_by(|a, b| {
                    cosine(fitted.row(i), truth.row(*a))
                        .total_cmp(&cosine(fitted.row(i), truth.row(*b)))
                })
                .unwrap()
        })
        .collect()
}

fn exponential_scenario() -> Scenario {
    let mut diffusion = Diffusion::zeros(2, 2);
    diffusion.set(1, 0, 1, 0.2);
    let growth = Matrix::from_rows(&[vec![0.03, -0.03], vec![-0.03, 0.03]]).unwrap();
    let w0 = Matrix::from_rows(&[vec![0.1, 1.0], vec![1.0, 0.05]]).unwrap();
    let mut sc = Scenario::regime_shift(104, false, 21);
    sc.dynamics = RDParams::new(growth, diffusion, w0).unwrap();
    sc.seasonal_amplitude = 0.2;
    sc.spikes = vec![(20, 0, 1, 2.0), (55, 3, 4, 2.0), (90, 5, 7, 2.0)];
    sc
}

#[test]
fn recovers_a_known_model() {
    let sc = exponential_scenario();
    let syn = sc.generate().unwrap();
    let norm = Normalization::fit(syn.data.as_slice());
    let x = norm.apply_tensor(&syn.data);
    let m = model_estimation(&x, Ranks::new(2, 2, 1), &EstimationConfig::new(52, 104)).unwrap();

    let fit = m.reconstruct().unwrap();
    let mae = fit
        .as_slice()
        .iter()
        .zip(x.as_slice())
        .map(|(a, b)| (a - b).abs())
        .sum::<f64>()
        / x.as_slice().len() as f64;
    assert!(mae <= 0.02, "fit MAE {mae}");

    for &(t, u, v, _) in &sc.spikes {
        assert!(m.outliers.get(t, u, v) != 0.0, "spike ({t},{u},{v}) missed");
    }
    assert!(m.outliers.count_nonzero() <= x.as_slice().len() / 10);

    let rows = align(&m.trend.w_key, &sc.w_key);
    let cols = align(&m.trend.w_loc, &sc.w_loc);
    for i in 0..2 {
        for j in 0..2 {
            let want = sc.dynamics.growth[(rows[i], cols[j])];
            let got = m.trend.rd.growth[(i, j)];
            assert_eq!(
                got.signum(),
                want.signum(),
                "A[{i}][{j}] = {got}, truth {want}"
            );
        }
    }
}

#[test]
fn estimation_is_deterministic() {
    let syn = Scenario::regime_shift(104, false, 5).generate().unwrap();
    let x = Normalization::fit(syn.data.as_slice()).apply_tensor(&syn.data);
    let cfg = EstimationConfig::new(52, 104);
    let a = model_estimation(&x, Ranks::new(2, 2, 1), &cfg).unwrap();
    let b = model_estimation(&x, Ranks::new(2, 2, 1), &cfg).unwrap();
    assert_eq!(a, b);
}

#[test]
fn spike_mass_stays_out_of_the_smooth_parts() {
    let mut sc = Scenario::regime_shift(104, false, 8);
    sc.noise_sigma = 0.0;
    sc.spikes = vec![(30, 2, 3, 0.5), (70, 4, 1, 0.5)];
    let syn = sc.generate().unwrap();
    let m = model_estimation(
        &syn.data,
        Ranks::new(2, 2, 1),
        &EstimationConfig::new(52, 104),
    )
    .unwrap();
    let recovered: f64 = sc
        .spikes
        .iter()
        .map(|&(t, u, v, _)| m.outliers.get(t, u, v))
        .sum();
    assert!(recovered >= 0.9 * 1.0, "recovered spike mass {recovered}");
}
