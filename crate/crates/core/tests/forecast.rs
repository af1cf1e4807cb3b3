use chrono::{Duration, TimeZone, Utc};
use sentinel_core::forecast::{ConvForecaster, ForecastModel, ModelFile, Model, TrainConfig};
use sentinel_core::pipeline::synth;

#[test]
fn conv_sigma_is_calibrated_on_white_noise() {
    let (mean, std) = (20.0, 3.0);
    let t0 = Utc.with_ymd_and_hms(2022, 1, 1, 0, 0, 0).unwrap();
    let series = synth::gaussian_series(8, 400, mean, std, t0, Duration::minutes(5), 5);
    let config = TrainConfig {
        context_length: 64,
        horizon: 4,
        epochs: 40,
        channels: 4,
        dilations: vec![1, 2, 4, 8],
        batch_size: 8,
        origins_per_crop: 32,
        season_length: 12,
        ..TrainConfig::default()
    };
    let mut model = ConvForecaster::new(config.clone()).unwrap();
    model.fit(&series, &config).unwrap();

    let fresh = synth::gaussian_series(20, 64, mean, std, t0, Duration::minutes(5), 99);
    let mut total = 0.0;
    let mut count = 0.0;
    for s in &fresh {
        let f = model.predict(s, 4).unwrap();
        total += f.sigma().iter().sum::<f64>();
        count += f.horizon() as f64;
    }
    let avg = total / count;
    assert!((0.8 * std..=1.25 * std).contains(&avg), "average sigma {avg}");
}

#[test]
fn model_file_round_trip() {
    let config = TrainConfig {
        context_length: 32,
        horizon: 2,
        channels: 2,
        dilations: vec![1, 2],
        ..TrainConfig::default()
    };
    let file = ModelFile::new(Model::Conv(ConvForecaster::new(config).unwrap()), Some("Availability".into()));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    file.save(&path).unwrap();
    let loaded = ModelFile::load(&path).unwrap();
    assert_eq!(loaded, file);
    assert_eq!(loaded.to_bytes(), file.to_bytes());
}
