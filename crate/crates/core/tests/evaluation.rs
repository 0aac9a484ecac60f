use mergefront::channel::ChannelSpec;
use mergefront::merging::MergeSchedule;
use mergefront::task::{fit_prototypes, generate_split, DatasetSpec, Evaluator};
use mergefront::{ModelDims, ModelWeights};

#[test]
fn snr_table_matches_single_evaluations() {
    let dims = ModelDims::toy();
    let weights = ModelWeights::random(dims, 4).unwrap();
    let calib = generate_split(&DatasetSpec::for_model(&dims, 8, 0.3), 9, 0).unwrap();
    let eval = generate_split(&DatasetSpec::for_model(&dims, 6, 0.3), 9, 1).unwrap();
    let head = fit_prototypes(&weights, &calib).unwrap();
    let evaluator = Evaluator::new(&weights, &head, &eval);
    let schedule = MergeSchedule::new(vec![0.1, 0.0, 0.3, 0.2]).unwrap();
    let channel = ChannelSpec::identity(0.0, 17);
    let snrs = [-10.0, 0.0, 20.0];
    let table = evaluator.accuracy_at_snrs(&schedule, &channel, &snrs).unwrap();
    for (snr, acc) in snrs.iter().zip(&table) {
        let single = evaluator
            .clone()
            .with_channel(Some(ChannelSpec { snr_db: *snr, ..channel.clone() }))
            .evaluate(&schedule)
            .unwrap();
        assert_eq!(single.accuracy, *acc, "snr {snr}");
    }
}

#[test]
fn noiseless_evaluation_is_deterministic() {
    let dims = ModelDims::toy();
    let weights = ModelWeights::random(dims, 2).unwrap();
    let data = generate_split(&DatasetSpec::for_model(&dims, 4, 0.3), 1, 0).unwrap();
    let head = fit_prototypes(&weights, &data).unwrap();
    let evaluator = Evaluator::new(&weights, &head, &data);
    let s = MergeSchedule::uniform(4, 0.2).unwrap();
    assert_eq!(evaluator.evaluate(&s).unwrap(), evaluator.evaluate(&s).unwrap());
}
