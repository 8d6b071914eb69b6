use diffstream::estimator::Ranks;
use diffstream::io::Normalization;
use diffstream::stream::{run_stream, RankGrid, StreamConfig};
use diffstream::synthetic::Scenario;

#[test]
fn stationary_stream_keeps_few_models() {
    let mut sc = Scenario::regime_shift(600, false, 2);
    sc.period = 13;
    let syn = sc.generate().unwrap();
    let x = Normalization::fit(syn.data.as_slice()).apply_tensor(&syn.data);
    let mut cfg = StreamConfig::new(26, 4, 13);
    cfg.rank_grid = RankGrid::single(Ranks::new(2, 2, 1));
    let run = run_stream(&x, &cfg).unwrap();
    assert_eq!(run.steps.len(), 600 - 26);
    assert!(
        run.params.len() <= 3,
        "{} models, switches at {:?}",
        run.params.len(),
        run.params.activation_times()
    );
    assert!(run.steps.iter().all(|s| s.error.is_none()));
}
