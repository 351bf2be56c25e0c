//! Feature files on disk: hand-assembled binary images, CSV and format
//! autodetection.

use idml::data::{self, Dataset, SynthConfig};
use idml::{IdmlError, LabelSet, Vector};

fn hand_built() -> Vec<u8> {
    let mut b = Vec::new();
    b.extend_from_slice(b"IDMD");
    for v in [1u32, 2, 3] {
        b.extend_from_slice(&v.to_le_bytes());
    }
    b.extend_from_slice(&7u64.to_le_bytes());
    b.extend_from_slice(&1u32.to_le_bytes());
    b.extend_from_slice(&4u32.to_le_bytes());
    b.extend_from_slice(&9u64.to_le_bytes());
    b.extend_from_slice(&2u32.to_le_bytes());
    b.extend_from_slice(&1u32.to_le_bytes());
    b.extend_from_slice(&5u32.to_le_bytes());
    for x in [0.5f64, -1.0, 2.25, 1e-300, 3.0, f64::MAX] {
        b.extend_from_slice(&x.to_le_bytes());
    }
    b
}

#[test]
fn hand_built_binary_image_decodes() {
    let ds = data::from_bytes(&hand_built()).unwrap();
    assert_eq!(ds.ids, vec![7, 9]);
    assert_eq!(ds.labels, vec![LabelSet::single(4), LabelSet::new([1, 5]).unwrap()]);
    assert_eq!(ds.features[0].as_slice(), &[0.5, -1.0, 2.25]);
    assert_eq!(ds.features[1].as_slice(), &[1e-300, 3.0, f64::MAX]);
    assert_eq!(data::to_bytes(&ds).unwrap(), hand_built());
}

#[test]
fn damaged_binary_images_are_rejected() {
    let good = hand_built();
    let mut bad_magic = good.clone();
    bad_magic[0] = b'X';
    let mut bad_version = good.clone();
    bad_version[4] = 2;
    let truncated = &good[..good.len() - 1];
    let mut trailing = good.clone();
    trailing.push(0);
    for bytes in [&bad_magic[..], &bad_version[..], truncated, &trailing[..]] {
        assert!(matches!(data::from_bytes(bytes), Err(IdmlError::Format { .. })));
    }
}

#[test]
fn files_round_trip_and_autodetect() {
    let dir = tempfile::tempdir().unwrap();
    let ds = data::generate(&SynthConfig {
        n_classes: 5,
        per_class: 8,
        input_dim: 3,
        ambiguous_frac: 0.25,
        mislabel_frac: 0.1,
        seed: 12,
        ..SynthConfig::default()
    })
    .unwrap();
    let csv = dir.path().join("d.csv");
    let bin = dir.path().join("d.idmd");
    data::save_csv(&ds, &csv).unwrap();
    data::save_binary(&ds, &bin).unwrap();
    assert_eq!(data::load(&csv).unwrap(), ds);
    assert_eq!(data::load(&bin).unwrap(), ds);
    assert_eq!(data::load_csv(&csv).unwrap(), data::load_binary(&bin).unwrap());
}

#[test]
fn csv_with_multi_label_rows() {
    let text = "id,label,f0,f1\n1,2,0.5,1\n2,0|3,-2,1e-3\n";
    let ds = data::read_csv(text.as_bytes()).unwrap();
    assert_eq!(ds.labels[1], LabelSet::new([0, 3]).unwrap());
    assert_eq!(ds.features[1].as_slice(), &[-2.0, 1e-3]);
    let mut out = Vec::new();
    data::write_csv(&ds, &mut out).unwrap();
    assert_eq!(String::from_utf8(out).unwrap(), "id,label,f0,f1\n1,2,0.5,1\n2,0|3,-2,0.001\n");
}

#[test]
fn missing_file_is_an_io_error() {
    assert!(matches!(data::load("/nonexistent/idml/data.csv"), Err(IdmlError::Io(_))));
}

#[test]
fn dataset_rejects_ragged_input() {
    let f = |v: Vec<f64>| Vector::new(v).unwrap();
    assert!(Dataset::new(vec![1, 2], vec![f(vec![1.0]), f(vec![1.0, 2.0])], vec![LabelSet::single(0); 2]).is_err());
    assert!(Dataset::new(vec![1], vec![f(vec![1.0])], vec![]).is_err());
}
