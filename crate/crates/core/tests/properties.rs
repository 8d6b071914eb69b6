use diffstream::diffusion::{generate, Diffusion, RDParams};
use diffstream::estimator::{sparsify_outliers, FitQuality, ModelParams, Ranks};
use diffstream::mdl::{self, CostContext, EncodingModel};
use diffstream::seasonal::SeasonalParams;
use diffstream::tensor::{Dims, Matrix, Tensor3};
use diffstream::trend::TrendParams;
use proptest::prelude::*;

fn diffusion_from(dk: usize, dl: usize, vals: &[f64]) -> Diffusion {
    let mut d = Diffusion::zeros(dk, dl);
    let mut it = vals.iter().cycle();
    for i in 0..dk {
        for j in 0..dl {
            for jp in 0..dl {
                d.set(i, j, jp, *it.next().unwrap());
            }
        }
    }
    d
}

fn model(dims: Dims, vals: &[f64]) -> ModelParams {
    let (dk, dl, ds) = (2, 2, 1);
    let mut it = vals.iter().cycle().copied();
    let mut mat = |r: usize, c: usize, nonneg: bool| {
        Matrix::from_fn(r, c, |_, _| {
            let v = it.next().unwrap();
            if nonneg {
                v.abs()
            } else {
                v
            }
        })
    };
    let growth = mat(dk, dl, false);
    let w0 = mat(dk, dl, true);
    let w_key = mat(dk, dims.keys, true);
    let w_loc = mat(dl, dims.locs, true);
    let s_time = mat(ds, dims.len, false);
    let s_key = mat(ds, dims.keys, false);
    let s_loc = mat(ds, dims.locs, false);
    let slow = Matrix::from_fn(dk, dl, |r, c| 0.05 * growth[(r, c)]);
    let rd = RDParams::new(slow, diffusion_from(dk, dl, &[0.1, 0.0, 0.05]), w0).unwrap();
    ModelParams {
        ranks: Ranks::new(dk, dl, ds),
        trend: TrendParams { w_key, w_loc, rd },
        seasonal: SeasonalParams {
            s_time,
            s_key,
            s_loc,
            period: 2,
        },
        outliers: Tensor3::zeros(dims),
        window_start: 0,
        window_len: dims.len,
        quality: FitQuality::Converged,
        fit_errors: vec![],
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn diffusion_keeps_states_nonnegative(
        vals in proptest::collection::vec(0.0f64..0.25, 18),
        w0 in proptest::collection::vec(0.0f64..2.0, 6),
    ) {
        // each row of strengths sums to at most 0.5
        let d = diffusion_from(2, 3, &vals);
        let rd = RDParams::new(Matrix::zeros(2, 3), d, Matrix::from_vec(2, 3, w0).unwrap()).unwrap();
        let core = generate(&rd, 200).unwrap().core;
        prop_assert!(core.as_slice().iter().all(|v| *v >= -1e-9));
    }

    #[test]
    fn symmetric_diffusion_conserves_mass(
        vals in proptest::collection::vec(0.0f64..0.3, 3),
        w0 in proptest::collection::vec(0.1f64..2.0, 3),
    ) {
        let mut d = Diffusion::zeros(1, 3);
        for (k, (j, jp)) in [(0, 1), (0, 2), (1, 2)].into_iter().enumerate() {
            d.set(0, j, jp, vals[k]);
            d.set(0, jp, j, vals[k]);
        }
        let start: f64 = w0.iter().sum();
        let rd = RDParams::new(Matrix::zeros(1, 3), d, Matrix::from_vec(1, 3, w0).unwrap()).unwrap();
        let core = generate(&rd, 300).unwrap().core;
        for t in 0..300 {
            let s: f64 = core.slice(t).iter().sum();
            prop_assert!((s - start).abs() <= 1e-9 * start);
        }
    }

    #[test]
    fn zeroing_entries_never_raises_model_cost(
        vals in proptest::collection::vec(-1.0f64..1.0, 1..50),
        which in 0usize..7,
        pos in 0usize..1000,
    ) {
        let dims = Dims::new(6, 3, 4);
        let m = model(dims, &vals);
        let ctx = CostContext { window: 6, keys: 3, locs: 4, stream_len: 20 };
        let before = mdl::model_cost(&m.trend, &m.seasonal, &m.outliers, &ctx).total();
        let mut z = m.clone();
        let target = match which {
            0 => &mut z.trend.w_key,
            1 => &mut z.trend.w_loc,
            2 => &mut z.trend.rd.growth,
            3 => &mut z.seasonal.s_time,
            4 => &mut z.seasonal.s_key,
            5 => &mut z.seasonal.s_loc,
            _ => &mut z.trend.rd.w0,
        };
        let n = target.as_slice().len();
        target.as_mut_slice()[pos % n] = 0.0;
        let after = mdl::model_cost(&z.trend, &z.seasonal, &z.outliers, &ctx).total();
        prop_assert!(after <= before);
    }

    #[test]
    fn total_is_model_plus_coding(
        vals in proptest::collection::vec(-1.0f64..1.0, 1..50),
        data in proptest::collection::vec(-1.0f64..2.0, 72),
    ) {
        let dims = Dims::new(6, 3, 4);
        let m = model(dims, &vals);
        let x = Tensor3::from_vec(dims, data).unwrap();
        let c = m.cost(&x, 20).unwrap();
        prop_assert_eq!(c.total_bits, c.model_bits + c.coding_bits);
        prop_assert!(c.coding_bits >= 0.0);
    }

    #[test]
    fn no_single_flip_lowers_the_description_length(
        noise in proptest::collection::vec(-0.02f64..0.02, 60),
        spikes in proptest::collection::vec((0usize..60, 0.05f64..1.0), 0..6),
    ) {
        let dims = Dims::new(5, 3, 4);
        let mut r = noise;
        for (i, m) in &spikes {
            r[*i] += m;
        }
        let residual = Tensor3::from_vec(dims, r).unwrap();
        let ctx = CostContext { window: 5, keys: 3, locs: 4, stream_len: 30 };
        let enc = EncodingModel::fit(residual.as_slice());
        let o = sparsify_outliers(&residual, &ctx, &enc);
        let cost = |o: &Tensor3| {
            mdl::outlier_cost(o, &ctx) + mdl::fitted_coding_cost(&residual.sub(o).unwrap())
        };
        let base = cost(&o);
        prop_assert!(base <= cost(&Tensor3::zeros(dims)) + 1e-9 * base.abs());
        let mut f = o.clone();
        for i in 0..60 {
            let old = f.as_slice()[i];
            f.as_mut_slice()[i] = if old != 0.0 { 0.0 } else { residual.as_slice()[i] };
            prop_assert!(cost(&f) >= base - 1e-9 * base.abs(), "flip {} lowers the cost", i);
            f.as_mut_slice()[i] = old;
        }
    }
}
