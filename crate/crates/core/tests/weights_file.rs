use dfr::dfrw::{self, DfrwFile};
use dfr::fixture;
use dfr::vgg::{VggWeights, LAYERS};
use dfr::Error;

fn synthetic_bytes() -> Vec<u8> {
    dfrw::encode(&fixture::synthetic_dfrw(3)).unwrap()
}

#[test]
fn round_trip_through_disk_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("vgg.dfrw");
    let original = fixture::synthetic_weights(3);
    dfrw::write(&path, &original.to_dfrw("abc123")).unwrap();
    let loaded = VggWeights::load(&path).unwrap();
    assert_eq!(loaded.mean(), original.mean());
    assert_eq!(loaded.std(), original.std());
    for spec in &LAYERS {
        assert_eq!(loaded.kernel(spec.name), original.kernel(spec.name), "{}", spec.name);
        assert_eq!(loaded.bias(spec.name), original.bias(spec.name), "{}", spec.name);
    }
    let raw = dfrw::read(&path).unwrap();
    assert_eq!(raw.manifest.source_checksum, "abc123");
    assert_eq!(raw.manifest.layer_order.len(), LAYERS.len());
}

#[test]
fn header_layout_is_stable() {
    let bytes = synthetic_bytes();
    assert_eq!(&bytes[..4], b"DFRW");
    assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
    let len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let manifest: serde_json::Value = serde_json::from_slice(&bytes[12..12 + len]).unwrap();
    assert_eq!(manifest["layer_order"][0], "conv1_1");
    assert_eq!(manifest["preprocess"]["mean"].as_array().unwrap().len(), 3);
    // First tensor record directly after the manifest.
    let name_len = u32::from_le_bytes(bytes[12 + len..16 + len].try_into().unwrap()) as usize;
    assert_eq!(&bytes[16 + len..16 + len + name_len], b"conv1_1.weight");
}

#[test]
fn bad_magic_is_a_format_error() {
    let mut bytes = synthetic_bytes();
    bytes[0] = b'X';
    let err = dfrw::parse(&bytes).unwrap_err();
    assert!(matches!(err, Error::Format { .. }), "{err}");
    assert!(err.to_string().contains("magic"));
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn missing_layer_is_named() {
    let mut file: DfrwFile = fixture::synthetic_dfrw(3);
    file.tensors.retain(|t| !t.name.starts_with("conv4_3"));
    let err = VggWeights::from_dfrw(file).unwrap_err();
    assert!(err.to_string().contains("conv4_3"), "{err}");
    assert!(matches!(err, Error::Format { .. }));
}

#[test]
fn wrong_shape_is_named() {
    let mut file = fixture::synthetic_dfrw(3);
    let t = file.tensors.iter_mut().find(|t| t.name == "conv2_1.bias").unwrap();
    t.dims = vec![t.data.len() - 1];
    t.data.pop();
    let err = VggWeights::from_dfrw(file).unwrap_err();
    assert!(err.to_string().contains("conv2_1.bias"), "{err}");
}

#[test]
fn truncated_file_is_a_format_error() {
    let bytes = synthetic_bytes();
    for cut in [3, 10, 20, bytes.len() / 2, bytes.len() - 1] {
        let err = dfrw::parse(&bytes[..cut]).unwrap_err();
        assert!(matches!(err, Error::Format { .. }), "cut {cut}: {err}");
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("short.dfrw");
    std::fs::write(&path, &bytes[..bytes.len() - 100]).unwrap();
    let err = VggWeights::load(&path).unwrap_err();
    assert!(err.to_string().contains("truncated"), "{err}");
}

#[test]
fn missing_file_is_an_io_error() {
    let err = VggWeights::load(std::path::Path::new("/nonexistent/vgg.dfrw")).unwrap_err();
    assert!(matches!(err, Error::Io { .. }));
    assert_eq!(err.exit_code(), 2);
}
