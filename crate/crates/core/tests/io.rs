use simec_core::fixtures;
use simec_core::io::{
    encode_idx_images, encode_idx_labels, format_float, load_csv_features, load_idx_images,
    load_idx_labels, load_model, parse_model, read_walk, save_model, write_model, write_walk,
    write_walk_csv, MinMax, WalkRecord,
};
use simec_core::linalg::{Matrix, Vector};
use simec_core::metric::OutputMetric;
use simec_core::network::{Activation, Dense, Layer, NetworkSpec, Ramp, SmoothKind};
use simec_core::walk::{run_walk, WalkConfig, WalkMode, WalkRng};
use simec_core::Error;

fn ramp_net() -> NetworkSpec {
    let ramp = Ramp::new(-1.0, 1.0, -1.0, 1.0, SmoothKind::Sigmoid).unwrap();
    NetworkSpec::new(vec![
        Layer::Dense(
            Dense::new(
                Matrix::from_rows(&[[0.5, -0.25], [1.5, 0.75]]),
                Vector::from([0.1, -0.2]),
                Activation::SaturatingRamp(ramp),
            )
            .unwrap(),
        ),
        Layer::Dense(Dense::linear(Matrix::from_rows(&[[1.0, -2.0]]), Activation::Identity).unwrap()),
    ])
    .unwrap()
}

fn outputs_bit_equal(a: &NetworkSpec, b: &NetworkSpec, seed: u64) {
    let mut rng = WalkRng::new(seed);
    for _ in 0..100 {
        let x: Vec<f64> = (0..a.input_dim()).map(|_| rng.normal()).collect();
        let (ya, yb) = (a.output(&x).unwrap(), b.output(&x).unwrap());
        assert!(ya.iter().zip(yb.iter()).all(|(u, v)| u.to_bits() == v.to_bits()));
    }
}

#[test]
fn models_round_trip_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let nets = [
        ("image", fixtures::image_net(3)),
        ("lstm", fixtures::lstm_net(4, 3, 5)),
        ("residual", fixtures::residual_net(5, 6)),
        ("leaky", fixtures::leaky_pair()),
        ("ramp", ramp_net()),
    ];
    for (name, net) in nets {
        let path = dir.path().join(format!("{name}.model"));
        save_model(&net, &path).unwrap();
        let back = load_model(&path).unwrap();
        assert_eq!(back, net, "{name}");
        assert_eq!(back.memory_dim(), net.memory_dim());
        assert_eq!(write_model(&back), std::fs::read_to_string(&path).unwrap());
        outputs_bit_equal(&net, &back, 17);
    }
}

#[test]
fn residual_inner_layers_are_labelled() {
    let text = write_model(&fixtures::residual_net(1, 3));
    assert!(text.lines().any(|l| l.starts_with("layer 0 residual inner=")));
    assert!(text.lines().any(|l| l.starts_with("layer 0.0 ")));
}

#[test]
fn truncated_blob_is_reported_with_its_layer() {
    let text = write_model(&fixtures::random_mlp(2, &[3, 4, 2], Activation::Tanh));
    let mut seen = 0;
    let bad: Vec<String> = text
        .lines()
        .map(|l| {
            if l.starts_with("blob weights") {
                seen += 1;
                if seen == 2 {
                    let cut = l.len() - 12;
                    return l[..cut].to_string();
                }
            }
            l.to_string()
        })
        .collect();
    let err = parse_model(&bad.join("\n")).unwrap_err();
    match &err {
        Error::BlobLength { layer, name, .. } => assert_eq!((*layer, name.as_str()), (1, "weights")),
        Error::Format(m) => assert!(m.contains("layer 1"), "{m}"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn long_walk_record_round_trips() {
    let net = fixtures::relu_line();
    let cfg = WalkConfig::new(WalkMode::Simec, 5000, 1e-3, 1e-8, 9);
    let res = run_walk(&net, &[-0.98, -2.45], &cfg, &OutputMetric::Identity).unwrap();
    assert_eq!(res.points.len(), 5001);
    let rec = WalkRecord::from_result(&cfg, &res);

    let dir = tempfile::tempdir().unwrap();
    let bin = dir.path().join("walk.bin");
    write_walk(&rec, &bin).unwrap();
    let back = read_walk(&bin).unwrap();
    assert_eq!(back, rec);
    // Per point: 2 inputs, 1 output, 2 increments, a hash and a kernel dim.
    let per_point = 8 * (2 + 1 + 2) + 8 + 4;
    let size = std::fs::metadata(&bin).unwrap().len() as usize;
    assert!(size >= 5001 * per_point && size < 5001 * per_point + 256, "{size}");

    let mut csv = Vec::new();
    write_walk_csv(&rec, &mut csv).unwrap();
    let text = String::from_utf8(csv).unwrap();
    assert_eq!(text.lines().count(), 5002);
    let last = text.lines().last().unwrap();
    assert!(last.starts_with("5000,"));
    let x0: f64 = last.split(',').nth(1).unwrap().parse().unwrap();
    assert_eq!(x0.to_bits(), rec.points[5000][0].to_bits());
}

#[test]
fn float_format_is_exact() {
    let mut rng = WalkRng::new(3);
    for _ in 0..1000 {
        let x = rng.normal() * 10f64.powi((rng.uniform() * 40.0) as i32 - 20);
        assert_eq!(format_float(x).parse::<f64>().unwrap().to_bits(), x.to_bits());
    }
}

#[test]
fn idx_files_with_ten_thousand_images() {
    let n = 10_000;
    let images: Vec<Vec<u8>> = (0..n).map(|i| (0..784).map(|p| ((i * 7 + p) % 256) as u8).collect()).collect();
    let labels: Vec<u8> = (0..n).map(|i| (i % 10) as u8).collect();
    let dir = tempfile::tempdir().unwrap();
    let img_path = dir.path().join("images.idx");
    let lbl_path = dir.path().join("labels.idx");
    std::fs::write(&img_path, encode_idx_images(&images, 28, 28).unwrap()).unwrap();
    std::fs::write(&lbl_path, encode_idx_labels(&labels)).unwrap();

    let loaded = load_idx_images(&img_path).unwrap();
    assert_eq!(loaded.len(), n);
    assert!(loaded.iter().all(|v| v.dim() == 784));
    assert_eq!(loaded[123][5], ((123 * 7 + 5) % 256) as f64 / 255.0);
    assert_eq!(load_idx_labels(&lbl_path).unwrap(), labels);

    let mut bytes = std::fs::read(&img_path).unwrap();
    bytes.truncate(bytes.len() - 1);
    assert!(simec_core::io::parse_idx_images(&bytes).is_err());
}

#[test]
fn csv_table_with_plant_sized_rows() {
    let rows = 9568;
    let mut text = String::from("AT,V,AP,RH,PE\n");
    let mut rng = WalkRng::new(4);
    for _ in 0..rows {
        let at = 2.0 + 35.0 * rng.uniform();
        let v = 25.0 + 57.0 * rng.uniform();
        let ap = 992.0 + 42.0 * rng.uniform();
        let rh = 25.0 + 75.0 * rng.uniform();
        let pe = 495.0 - 2.0 * at + 0.1 * rh;
        text.push_str(&format!("{at:.2},{v:.2},{ap:.2},{rh:.2},{pe:.2}\n"));
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("plant.csv");
    std::fs::write(&path, text).unwrap();

    let table = load_csv_features(&path, &["AT", "V", "AP", "RH"], Some("PE")).unwrap();
    assert_eq!(table.features.len(), rows);
    assert_eq!(table.targets.len(), rows);
    assert_eq!(table.feature_names, ["AT", "V", "AP", "RH"]);

    let scale = MinMax::fit(&table.features).unwrap();
    for f in table.features.iter().take(50) {
        let u = scale.apply(f);
        assert!(u.iter().all(|&c| (0.0..=1.0).contains(&c)));
        assert!(scale.invert(&u).sub(f).norm_inf() < 1e-9);
    }
    assert!(load_csv_features(&path, &["AT", "missing"], None).is_err());
}
