use std::f64::consts::PI;
use std::path::Path;

use proptest::prelude::*;
use statrs::distribution::{ContinuousCDF, StudentsT};

use super::*;
use crate::autodiff::Tensor;
use crate::error::Error;
use crate::models::Task;

fn t64(shape: &[usize], data: Vec<f64>) -> Tensor<f64> {
    Tensor::new(shape.to_vec(), data).unwrap()
}

fn pairs(items: &[(&str, &str)]) -> Vec<(String, String)> {
    items.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect()
}

#[test]
fn bit_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.bit");
    let t = Tensor::new(vec![2, 3], vec![1.5f32, -0.0, f32::MIN_POSITIVE, 3.25, 1e30, -7.0]).unwrap();
    write_bit_tensor(&path, &t).unwrap();
    let back: Tensor<f32> = read_bit_as(&path).unwrap();
    let bits = |t: &Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(back.shape(), [2, 3]);
    assert_eq!(bits(&back), bits(&t));

    let t = t64(&[4], vec![0.1, -0.2, 1e-300, 5.0]);
    write_bit_tensor(&path, &t).unwrap();
    let (back, header) = read_bit_tensor(&path).unwrap();
    assert_eq!(header.dtype, crate::autodiff::DType::F64);
    assert_eq!(header.byte_order, "LE");
    assert_eq!(back, BitTensor::F64(t));
}

#[test]
fn bit_layout_is_magic_length_header_payload() {
    let t = Tensor::new(vec![1], vec![1.0f32]).unwrap();
    let bytes = bit::encode_bit(&t);
    assert_eq!(&bytes[..4], b"BIT1");
    let hl = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let header: serde_json::Value = serde_json::from_slice(&bytes[8..8 + hl]).unwrap();
    assert_eq!(header["dtype"], "f32");
    assert_eq!(header["shape"], serde_json::json!([1]));
    assert_eq!(&bytes[8 + hl..], 1.0f32.to_le_bytes());
}

#[test]
fn bit_errors_are_distinct() {
    let t = Tensor::new(vec![2, 3], vec![0.0f32; 6]).unwrap();
    let bytes = bit::encode_bit(&t);
    let p = Path::new("x.bit");

    let short = &bytes[..bytes.len() - 4];
    assert!(matches!(
        bit::decode_bit(p, short),
        Err(Error::Truncated {
            expected: 24,
            found: 20,
            ..
        })
    ));

    let mut wrong = bytes.clone();
    wrong[0] = b'X';
    assert!(matches!(bit::decode_bit(p, &wrong), Err(Error::BadMagic { .. })));

    let mut long = bytes.clone();
    long.extend_from_slice(&[0; 4]);
    assert!(matches!(bit::decode_bit(p, &long), Err(Error::Format { .. })));
}

#[test]
fn manifest_parsing() {
    let p = Path::new("m.jsonl");
    let line = |id: &str| {
        format!(
            r#"{{"id":"{id}","path":"{id}.bit","modality":"ecg","fs_hz":500,"n_channels":12,"domain":"ptb","labels":["426783006"]}}"#
        )
    };
    let text = format!("{}\n{}\n", line("a"), line("b"));
    let metas = parse_manifest(p, &text).unwrap();
    assert_eq!(metas.len(), 2);
    assert_eq!(metas[1].modality, Modality::Ecg);

    let dup = format!("{}\n{}\n", line("a"), line("a"));
    match parse_manifest(p, &dup) {
        Err(Error::Manifest { line: 2, detail, .. }) => assert!(detail.contains("duplicate")),
        other => panic!("{other:?}"),
    }

    let missing = r#"{"id":"a","path":"a.bit","modality":"ecg","fs_hz":500,"n_channels":12,"labels":[]}"#;
    match parse_manifest(p, missing) {
        Err(Error::Manifest { line: 1, detail, .. }) => assert!(detail.contains("domain"), "{detail}"),
        other => panic!("{other:?}"),
    }

    let modality = line("a").replace("\"ecg\"", "\"emg\"");
    assert!(matches!(parse_manifest(p, &modality), Err(Error::Manifest { .. })));
}

#[test]
fn manifest_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.jsonl");
    let metas = vec![RecordingMeta {
        id: "r1".into(),
        path: "r1.bit".into(),
        modality: Modality::EegDe,
        fs_hz: 17.0,
        n_channels: 5,
        domain: "CHI".into(),
        labels: vec!["Positive".into()],
        duration_samples: None,
    }];
    write_manifest(&path, &metas).unwrap();
    assert_eq!(load_manifest(&path).unwrap(), metas);
}

#[test]
fn resample_identity_at_500hz() {
    let x = t64(&[2, 5], vec![0.1, 0.2, -0.3, 0.4, 0.5, 1.0, 2.0, 3.0, 4.0, 5.0]);
    let y = resample_to_500hz(&x, 500.0).unwrap();
    assert_eq!(y, x);
}

#[test]
fn resample_length_rule() {
    let x = t64(&[1, 100], vec![0.0; 100]);
    assert_eq!(resample_to_500hz(&x, 250.0).unwrap().shape(), [1, 200]);
    let x = t64(&[1, 257], vec![0.0; 257]);
    assert_eq!(resample_to_500hz(&x, 257.0).unwrap().shape(), [1, 500]);
    assert_eq!(resample_to_500hz(&x, 1000.0).unwrap().shape(), [1, 129]);
    assert!(matches!(resample_to_500hz(&x, 0.0), Err(Error::InvalidArgument { .. })));
    assert!(resample_to_500hz(&x, -5.0).is_err());
}

fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

#[test]
fn resampled_sine_matches_analytic_signal() {
    let sine = |fs: f64, n: usize| {
        (0..n)
            .map(|t| (2.0 * PI * 5.0 * t as f64 / fs).sin())
            .collect::<Vec<_>>()
    };
    let x = t64(&[1, 500], sine(250.0, 500));
    let y = resample_to_500hz(&x, 250.0).unwrap();
    let reference = sine(500.0, 1000);
    let interior = 64..1000 - 64;
    let r = correlation(&y.data()[interior.clone()], &reference[interior]);
    assert!(r > 0.999, "correlation {r}");

    // Downsampling keeps an in-band tone too.
    let x = t64(&[1, 2000], sine(1000.0, 2000));
    let y = resample_to_500hz(&x, 1000.0).unwrap();
    let interior = 64..1000 - 64;
    let r = correlation(&y.data()[interior.clone()], &reference[interior]);
    assert!(r > 0.999, "correlation {r}");
}

#[test]
fn ecg_windowing_rules() {
    let ramp = |l: usize| t64(&[12, l], (0..12 * l).map(|i| (i % l) as f64 + 1.0).collect());
    let w = window_ecg(&ramp(2000)).unwrap();
    assert_eq!(w.len(), 1);
    assert_eq!(w[0].shape(), [12, 5000]);
    for c in 0..12 {
        let row = &w[0].data()[c * 5000..(c + 1) * 5000];
        assert_eq!(row[1999], 2000.0);
        assert!(row[2000..].iter().all(|&v| v == 0.0));
    }
    assert_eq!(window_ecg(&ramp(12500)).unwrap().len(), 2);
    let x = ramp(5000);
    let w = window_ecg(&x).unwrap();
    assert_eq!(w, vec![x]);
}

proptest! {
    #[test]
    fn ecg_window_count(l in 1usize..40_000) {
        let x = t64(&[1, l], vec![0.5; l]);
        let n = window_signal(&x, ECG_WINDOW).unwrap().len();
        prop_assert_eq!(n, if l < 5000 { 1 } else { l / 5000 });
    }

    #[test]
    fn normalized_values_stay_in_range(data in prop::collection::vec(-1e6f64..1e6, 2..200)) {
        let n = data.len();
        let y = normalize_minmax(&t64(&[1, n], data)).unwrap();
        prop_assert!(y.data().iter().all(|v| (-1.0..=1.0).contains(v)));
    }
}

#[test]
fn minmax_examples() {
    let y = normalize_minmax(&t64(&[2, 3], vec![0.0, 5.0, 10.0, 4.0, 4.0, 4.0])).unwrap();
    assert_eq!(y.data(), [-1.0, 0.0, 1.0, 0.0, 0.0, 0.0]);
    let sym = vec![-1.0, -0.25, 0.5, 1.0, 0.0];
    let y = normalize_minmax(&t64(&[1, 5], sym.clone())).unwrap();
    for (a, b) in y.data().iter().zip(&sym) {
        assert!((a - b).abs() < 1e-7);
    }
    assert!(normalize_minmax(&t64(&[1, 2], vec![f64::NAN, 0.0])).is_err());
}

#[test]
fn eeg_windowing_rules() {
    let feats = |n: usize| t64(&[n, 5], (0..n * 5).map(|i| i as f64).collect());
    assert_eq!(window_eeg_de(&feats(340)).unwrap().len(), 2);
    assert_eq!(window_eeg_de(&feats(169)).unwrap().len(), 0);
    let x = feats(170);
    let w = window_eeg_de(&x).unwrap();
    assert_eq!(w[0].shape(), [5, 170]);
    for t in 0..170 {
        for b in 0..5 {
            assert_eq!(w[0].data()[b * 170 + t], x.data()[t * 5 + b]);
        }
    }
}

#[test]
fn label_mapping() {
    let reg = ClassRegistry::ecg_default();
    assert_eq!(reg.len(), 24);
    let sinus = reg.index_of_name("Sinus rhythm").unwrap();
    let m = map_labels(&["426783006".to_string()], &reg);
    let target = m.target.unwrap();
    assert_eq!(target.iter().sum::<f32>(), 1.0);
    assert_eq!(target[sinus], 1.0);

    let m = map_labels(&["000000".to_string(), "164865005".to_string()], &reg);
    assert_eq!(m.target, None);
    assert_eq!(m.unknown.len(), 2);

    let m = map_labels(
        &["426783006".to_string(), "164889003".to_string(), "999".to_string()],
        &reg,
    );
    assert_eq!(m.target.unwrap().iter().sum::<f32>(), 2.0);
    assert_eq!(m.unknown, vec!["999".to_string()]);

    // Many-to-one: both bundle-branch codes land on the same row.
    assert_eq!(reg.index_of_code("59118001"), reg.index_of_code("713427006"));

    let eeg = ClassRegistry::eeg();
    assert_eq!(eeg.index_of_code("Positive"), Some(2));
    assert_eq!(eeg.index_of_code("-1"), Some(0));
}

#[test]
fn class_map_rejects_unknown_names() {
    assert!(ClassRegistry::ecg_from_tsv("code\tname\n1\tNot a class\n").is_err());
    assert!(ClassRegistry::ecg_from_tsv("1 Sinus rhythm\n").is_err());
}

fn ecg_recordings() -> Vec<(String, String)> {
    let mut r = Vec::new();
    for (domain, n) in [
        ("cpsc", 100),
        ("ptb", 37),
        ("ptb-xl", 55),
        ("incart", 20),
        ("g12ec", 31),
    ] {
        for i in 0..n {
            r.push((format!("{domain}-{i}"), domain.to_string()));
        }
    }
    r
}

#[test]
fn ecg_split_ratios_and_targets() {
    let recs = ecg_recordings();
    let plan = make_ecg_split(&recs, 7).unwrap();
    assert_eq!(plan.assignments.len(), recs.len());
    for (id, domain) in &recs {
        let a = plan.get(id).unwrap();
        if domain == "incart" || domain == "g12ec" {
            assert_eq!(a, Assignment::Ood);
        } else {
            assert_ne!(a, Assignment::Ood);
        }
    }
    let count = |domain: &str, a: Assignment| {
        recs.iter()
            .filter(|(id, d)| d == domain && plan.get(id) == Some(a))
            .count()
    };
    assert_eq!(count("cpsc", Assignment::Train), 70);
    assert_eq!(count("cpsc", Assignment::Val), 10);
    assert_eq!(count("cpsc", Assignment::Test), 20);
    assert_eq!(make_ecg_split(&recs, 7).unwrap(), plan);
    assert_ne!(make_ecg_split(&recs, 8).unwrap(), plan);
}

#[test]
fn ecg_split_rejects_unknown_domain() {
    let recs = pairs(&[("a", "cpsc"), ("b", "mitdb")]);
    assert!(matches!(make_ecg_split(&recs, 0), Err(Error::Data(_))));
}

proptest! {
    #[test]
    fn split_ratios_within_one(n in 1usize..500) {
        let (train, val, test) = split_counts(n);
        prop_assert_eq!(train + val + test, n);
        let nf = n as f64;
        prop_assert!((train as f64 - 0.7 * nf).abs() <= 1.0);
        prop_assert!((val as f64 - 0.1 * nf).abs() <= 1.0);
        prop_assert!((test as f64 - 0.2 * nf).abs() <= 1.0);
    }
}

fn eeg_recordings() -> Vec<(String, String)> {
    let mut r = Vec::new();
    for (d, n) in [("CHI", 15), ("FRA", 8), ("GER", 8)] {
        for i in 0..n {
            r.push((format!("{d}-{i}"), d.to_string()));
        }
    }
    r
}

#[test]
fn lodo_iterations() {
    let recs = eeg_recordings();
    let plans = make_lodo_iterations(&recs, 3).unwrap();
    assert_eq!(plans.len(), 3);
    let targets: Vec<&str> = plans.iter().map(|p| p.targets[0].as_str()).collect();
    assert_eq!(targets, ["CHI", "FRA", "GER"]);
    assert_eq!(plans[0].sources, ["FRA", "GER"]);
    let mut ood: Vec<&String> = plans
        .iter()
        .flat_map(|p| {
            p.assignments
                .iter()
                .filter(|(_, &a)| a == Assignment::Ood)
                .map(|(id, _)| id)
        })
        .collect();
    ood.sort();
    let mut all: Vec<&String> = recs.iter().map(|(id, _)| id).collect();
    all.sort();
    assert_eq!(ood, all);

    let missing: Vec<_> = recs.iter().filter(|(_, d)| d != "GER").cloned().collect();
    assert!(make_lodo_iterations(&missing, 3).is_err());
}

fn synth_cfg(shift: f64, seed: u64) -> SynthConfig {
    SynthConfig {
        per_domain: 60,
        shift_strength: shift,
        seed,
        ..Default::default()
    }
}

#[test]
fn synthetic_data_is_deterministic() {
    let a = synth_domain_dataset(&synth_cfg(1.0, 4)).unwrap();
    let b = synth_domain_dataset(&synth_cfg(1.0, 4)).unwrap();
    assert_eq!(a, b);
    let c = synth_domain_dataset(&synth_cfg(1.0, 5)).unwrap();
    assert_ne!(a, c);
    assert_eq!(a.windows.len(), 180);
    assert_eq!(a.recordings().len(), 180);
}

#[test]
fn synthetic_config_validation() {
    for bad in [
        SynthConfig {
            n_domains: 1,
            ..Default::default()
        },
        SynthConfig {
            shift_strength: -1.0,
            ..Default::default()
        },
        SynthConfig {
            classes: 30,
            ..Default::default()
        },
        SynthConfig {
            per_domain: 0,
            ..Default::default()
        },
    ] {
        assert!(matches!(synth_domain_dataset(&bad), Err(Error::Config(_))));
    }
}

/// Welch two-sample t-test p-value.
fn welch_p(a: &[f64], b: &[f64]) -> f64 {
    let stats = |x: &[f64]| {
        let n = x.len() as f64;
        let m = x.iter().sum::<f64>() / n;
        let v = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0);
        (n, m, v)
    };
    let (na, ma, va) = stats(a);
    let (nb, mb, vb) = stats(b);
    let se2 = va / na + vb / nb;
    let t = (ma - mb) / se2.sqrt();
    let df = se2.powi(2) / ((va / na).powi(2) / (na - 1.0) + (vb / nb).powi(2) / (nb - 1.0));
    let dist = StudentsT::new(0.0, 1.0, df).unwrap();
    2.0 * (1.0 - dist.cdf(t.abs()))
}

fn window_rms(ds: &WindowDataset, domain: &str) -> Vec<f64> {
    ds.windows
        .iter()
        .filter(|w| w.domain == domain)
        .map(|w| (w.data.data().iter().map(|&v| (v as f64).powi(2)).sum::<f64>() / w.data.numel() as f64).sqrt())
        .collect()
}

#[test]
fn zero_shift_domains_are_indistinguishable() {
    let mut rejections = 0;
    for seed in 0..20 {
        let ds = synth_domain_dataset(&synth_cfg(0.0, seed)).unwrap();
        if welch_p(&window_rms(&ds, "d0"), &window_rms(&ds, "d1")) < 0.01 {
            rejections += 1;
        }
    }
    // Under the null, two or more rejections out of 20 happen with probability < 2%.
    assert!(rejections <= 1, "{rejections} rejections");

    // The same test has power once domains actually differ.
    let mut detected = 0;
    for seed in 0..20 {
        let ds = synth_domain_dataset(&synth_cfg(3.0, seed)).unwrap();
        if welch_p(&window_rms(&ds, "d0"), &window_rms(&ds, "d2")) < 0.01 {
            detected += 1;
        }
    }
    assert!(detected >= 15, "{detected} detections");
}

#[test]
fn matched_filter_recovers_every_class() {
    let cfg = SynthConfig {
        per_domain: 100,
        ..Default::default()
    };
    let ds = synth_domain_dataset(&cfg).unwrap();
    for w in &ds.windows {
        let Target::Class(c) = w.target else { unreachable!() };
        assert_eq!(matched_filter_class(&w.data, cfg.classes, cfg.fs_hz), c, "{}", w.id);
    }
}

#[test]
fn dataset_directory_round_trip() {
    let mut ds = synth_domain_dataset(&synth_cfg(1.0, 1)).unwrap();
    let plans = make_lodo_plans(&ds.recordings(), &["d0", "d1", "d2"], 9).unwrap();
    ds.apply_plan(&plans[1]).unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_dataset(dir.path(), &ds).unwrap();
    assert_eq!(load_dataset(dir.path()).unwrap(), ds);

    let mut ml = ds.clone();
    ml.info.task = Task::Multilabel;
    for w in &mut ml.windows {
        let Target::Class(c) = w.target else { unreachable!() };
        let mut v = vec![0.0; 4];
        v[c] = 1.0;
        v[(c + 1) % 4] = 1.0;
        w.target = Target::MultiHot(v);
    }
    let dir = tempfile::tempdir().unwrap();
    save_dataset(dir.path(), &ml).unwrap();
    assert_eq!(load_dataset(dir.path()).unwrap(), ml);
}

#[test]
fn windows_inherit_recording_split() {
    let recs = ecg_recordings();
    let plan = make_ecg_split(&recs, 2).unwrap();
    let mut ds = WindowDataset {
        info: DatasetInfo {
            task: Task::Multiclass,
            class_names: vec!["a".into(), "b".into()],
            channels: 1,
            length: 2,
            domains: vec![],
        },
        windows: Vec::new(),
    };
    for (id, domain) in &recs {
        for k in 0..3 {
            ds.windows.push(Window {
                id: format!("{id}_{k}"),
                recording: id.clone(),
                domain: domain.clone(),
                data: Tensor::zeros(vec![1, 2]),
                target: Target::Class(0),
                split: None,
            });
        }
    }
    ds.apply_plan(&plan).unwrap();
    for w in &ds.windows {
        assert_eq!(w.split, plan.get(&w.recording));
    }
}

fn write_ecg_fixture(dir: &Path) -> std::path::PathBuf {
    let mut lines = String::new();
    let domains = ["cpsc", "ptb", "ptb-xl", "incart", "g12ec"];
    for (i, domain) in domains.iter().cycle().take(12).enumerate() {
        let (fs, len) = if i % 2 == 0 { (500.0, 6000) } else { (250.0, 1500) };
        let data: Vec<f64> = (0..12 * len).map(|k| ((k * 7 + i) % 23) as f64 - 11.0).collect();
        write_bit_tensor(&dir.join(format!("r{i}.bit")), &t64(&[12, len], data)).unwrap();
        let labels = if i == 5 { r#"["000"]"# } else { r#"["426783006","999"]"# };
        lines.push_str(&format!(
            r#"{{"id":"r{i}","path":"r{i}.bit","modality":"ecg","fs_hz":{fs},"n_channels":12,"domain":"{domain}","labels":{labels}}}"#
        ));
        lines.push('\n');
    }
    let manifest = dir.join("manifest.jsonl");
    std::fs::write(&manifest, lines).unwrap();
    manifest
}

#[test]
fn ecg_ingest_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_ecg_fixture(dir.path());
    let (ds, report) = ingest_manifest(&manifest, None, 0).unwrap();
    assert_eq!(report.recordings, 12);
    assert_eq!(report.excluded, vec!["r5".to_string()]);
    assert_eq!(report.unknown_codes["999"], 11);
    assert_eq!(ds.windows.len(), 11);
    for w in &ds.windows {
        assert_eq!(w.data.shape(), [12, 5000]);
        assert!(w.data.data().iter().all(|v| (-1.0..=1.0).contains(v)));
        let ood = w.domain == "incart" || w.domain == "g12ec";
        assert_eq!(w.split == Some(Assignment::Ood), ood);
    }
    // Re-running is bit-identical.
    let (again, _) = ingest_manifest(&manifest, None, 0).unwrap();
    assert_eq!(again, ds);
}
