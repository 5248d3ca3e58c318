use chrono::NaiveDate;
use pcnn_core::domain::{CongestionSeries, NormalizationParams};
use pcnn_core::folding::FoldingConfig;
use pcnn_core::nn::{fit_network, Dataset};
use pcnn_core::pcnn::{build_model, folded_instances, train, PcnnConfig};
use pcnn_core::synth::{generate, SynthConfig};

fn small_cfg() -> PcnnConfig {
    PcnnConfig { folding: FoldingConfig::new(3, 3, 1).unwrap(), conv_layers: 2, epochs: 20, ..Default::default() }
}

fn synth_series() -> CongestionSeries {
    generate(&SynthConfig { segments: 1, slot_minutes: 30, ..Default::default() }).unwrap().remove(0)
}

fn dataset(series: &CongestionSeries, cfg: &PcnnConfig) -> Dataset {
    let norm = NormalizationParams::fit(series.slice_days(0..20).unwrap().values()).unwrap();
    let (x, y, _) = folded_instances(series, 1..20, &cfg.folding, &norm).unwrap();
    let len = cfg.folding.matrix_len();
    let mut data = Dataset::new(len);
    for (i, t) in y.iter().enumerate() {
        data.push(&x[i * len..(i + 1) * len], norm.normalize(*t)).unwrap();
    }
    data
}

// At the default step size RMSprop moves every weight by about the learning
// rate per batch, which is enough to bounce the epoch loss back up every few
// epochs on this data. A tenth of it keeps the descent steady.
#[test]
fn training_loss_mostly_decreases_at_a_small_step_size() {
    let mut cfg = small_cfg();
    cfg.optimizer.learning_rate = 5e-4;
    let (_, report) = train(&[synth_series()], &cfg).unwrap();
    let losses: Vec<f64> = report.groups[0].epochs.iter().map(|e| e.train_loss).collect();
    let down = losses.windows(2).filter(|w| w[1] <= w[0]).count();
    assert!(
        down * 10 >= (losses.len() - 1) * 9,
        "{down} of {} transitions non-increasing: {losses:?}",
        losses.len() - 1
    );
}

#[test]
fn huge_weight_decay_collapses_weights_and_predictions() {
    let series = synth_series();
    let cfg = PcnnConfig { l2_lambda: 1e6, epochs: 5, ..small_cfg() };
    let data = dataset(&series, &cfg);
    let mut net = build_model(&cfg).unwrap();
    let initial = net.weight_norm_sq();
    let mut norms = Vec::new();
    fit_network(&mut net, &data, &cfg.fit_options(cfg.seed), |_, net, _| {
        norms.push(net.weight_norm_sq());
        Ok(())
    })
    .unwrap();
    assert!(norms[0] < initial);
    assert!(*norms.last().unwrap() < 0.01 * initial, "{initial} -> {norms:?}");
    let preds = net.predict_batch(&data.features).unwrap();
    let spread =
        preds.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - preds.iter().cloned().fold(f64::INFINITY, f64::min);
    assert!(spread < 0.05, "prediction spread {spread}");
}

#[test]
fn constant_series_predicts_the_constant() {
    let k = 0.7;
    let d0 = NaiveDate::from_ymd_opt(2024, 1, 1).unwrap();
    let dates: Vec<NaiveDate> = (0..30).map(|i| d0 + chrono::Days::new(i)).collect();
    let s = CongestionSeries::new("flat", 30, 6, 24, dates, vec![k; 30 * 36], None).unwrap();
    let cfg = small_cfg();
    let (model, _) = train(std::slice::from_ref(&s), &cfg).unwrap();
    for (m, n) in [(25, 0), (26, 17), (29, 35)] {
        assert!((model.predict(&s, m, n, 1).unwrap().value - k).abs() < 0.05);
    }

    // Same fit against a non-degenerate scale, so the network has to learn it.
    let norm = NormalizationParams::new(0.0, 2.0).unwrap();
    let len = cfg.folding.matrix_len();
    let mut data = Dataset::new(len);
    for _ in 0..256 {
        data.push(&vec![norm.normalize(k); len], norm.normalize(k)).unwrap();
    }
    let mut net = build_model(&cfg).unwrap();
    let converge = PcnnConfig { epochs: 200, ..cfg };
    fit_network(&mut net, &data, &converge.fit_options(converge.seed), |_, _, _| Ok(())).unwrap();
    let pred = norm.denormalize(net.predict(data.features_of(0)).unwrap());
    assert!((pred - k).abs() < 0.05, "predicted {pred}");
}
