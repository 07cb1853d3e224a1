//! CSV in, thresholded sample, fit, document round trip.

use kane_core::csv_io::{read_dataset, ColumnMapping};
use kane_core::evt::{build_threshold_sample, Outcomes, ThresholdOptions};
use kane_core::ordinal::fit_ordinal_canonical;
use kane_core::{FitConfig, Model, PocSurface};
use ndarray::array;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Two features on arbitrary scales, two competing triggers, an ordinal
/// follow-up with five levels whose odds rise with the first feature.
fn synthetic_csv(n: usize, seed: u64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = String::from("temp,pressure,flow_a,flow_b,severity\n");
    for _ in 0..n {
        let t: f64 = rng.random_range(-10.0..30.0);
        let p: f64 = rng.random_range(900.0..1100.0);
        let a: f64 = rng.random::<f64>().powf(-0.5);
        let b: f64 = rng.random::<f64>().powf(-0.5);
        let level = if a.min(b) > 1.5 {
            let shift = (t + 10.0) / 40.0;
            let u: f64 = rng.random();
            (1 + ((u + shift) * 2.5) as usize).min(5).to_string()
        } else if rng.random::<f64>() < 0.5 {
            "NA".into()
        } else {
            String::new()
        };
        s.push_str(&format!("{t},{p},{a},{b},{level}\n"));
    }
    s
}

fn mapping() -> ColumnMapping {
    serde_json::from_str(
        r#"{"features": ["temp", "pressure"], "triggers": ["flow_a", "flow_b"],
            "follow_up": {"kind": "ordinal", "column": "severity", "categories": 5}}"#,
    )
    .unwrap()
}

#[test]
fn ordinal_csv_to_frank_hall_model() {
    let raw = read_dataset(synthetic_csv(4000, 1).as_bytes(), &mapping()).unwrap();
    let sample = build_threshold_sample(&raw, 0.9, &ThresholdOptions::default()).unwrap();
    assert_eq!(sample.len(), 400);
    assert!(matches!(sample.outcomes, Outcomes::Ordinal { categories: 5, .. }));
    assert!(sample.features.iter().all(|v| (0.0..=1.0).contains(v)));

    let cfg = FitConfig { max_iterations: 25, ..Default::default() };
    let model = fit_ordinal_canonical(&sample, &cfg).unwrap();
    assert_eq!(model.sub_models.len(), 4);
    for row in sample.features.rows() {
        let p = model.evaluate(&row.to_vec()).unwrap();
        assert!(p.iter().all(|&v| v >= 0.0));
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    let doc = Model::FrankHall(model);
    let back = Model::from_json(&doc.to_json().unwrap()).unwrap();
    let pts = array![[-40.0, 1000.0], [12.5, 950.0], [29.0, 1080.0]];
    let (a, clipped) = doc.predict_raw(pts.view()).unwrap();
    let (b, _) = back.predict_raw(pts.view()).unwrap();
    assert_eq!(a, b);
    assert_eq!(clipped, 1, "the first temperature lies below the training range");
}

#[test]
fn continuous_follow_up_defaults_to_trigger_threshold() {
    let text = (0..100).map(|i| format!("{},{},{}\n", i as f64 / 99.0, i, 99 - i)).collect::<String>();
    let csv = format!("x,y,z\n{text}");
    let m: ColumnMapping =
        serde_json::from_str(r#"{"features": ["x"], "triggers": ["y"], "follow_up": {"kind": "continuous", "column": "z"}}"#)
            .unwrap();
    let raw = read_dataset(csv.as_bytes(), &m).unwrap();
    let s = build_threshold_sample(&raw, 0.5, &ThresholdOptions { min_retained: 10, ..Default::default() }).unwrap();
    // threshold is the 50th order statistic, 49; retained y = 50..99 so z = 49..0, none above 49
    assert_eq!(s.threshold, 49.0);
    let Outcomes::Binary(d) = &s.outcomes else { panic!("indicator outcomes expected") };
    assert_eq!(d.len(), 50);
    assert!(d.iter().all(|&v| v == 0.0));
}
