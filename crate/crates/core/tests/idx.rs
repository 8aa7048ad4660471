use llg_core::data::load_idx;
use llg_core::Error;

/// Writes IDX files byte by byte: big-endian magic, dimensions, then payload.
fn write_idx(
    dir: &std::path::Path,
    images: &[[u8; 4]],
    labels: &[u8],
) -> (std::path::PathBuf, std::path::PathBuf) {
    let mut img = vec![0x00, 0x00, 0x08, 0x03];
    img.extend((images.len() as u32).to_be_bytes());
    img.extend(2u32.to_be_bytes());
    img.extend(2u32.to_be_bytes());
    for im in images {
        img.extend(im);
    }
    let mut lab = vec![0x00, 0x00, 0x08, 0x01];
    lab.extend((labels.len() as u32).to_be_bytes());
    lab.extend(labels);
    let (ip, lp) = (dir.join("images.idx3"), dir.join("labels.idx1"));
    std::fs::write(&ip, img).unwrap();
    std::fs::write(&lp, lab).unwrap();
    (ip, lp)
}

#[test]
fn loads_images_and_labels() {
    let dir = tempfile::tempdir().unwrap();
    let (ip, lp) = write_idx(
        dir.path(),
        &[[0, 255, 51, 102], [255, 255, 0, 0], [1, 2, 3, 4]],
        &[2, 0, 1],
    );
    let data = load_idx(ip, lp).unwrap();
    assert_eq!(data.len(), 3);
    assert_eq!(data.n_classes, 3);
    assert_eq!(data.input_dim(), 4);
    assert_eq!(data.samples[0].features, vec![0.0, 1.0, 0.2, 0.4]);
    assert_eq!(data.samples[0].label, 2);
    assert_eq!(data.samples[2].label, 1);
}

#[test]
fn count_mismatch_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let (ip, lp) = write_idx(dir.path(), &[[0; 4], [1; 4]], &[0, 1, 1]);
    assert!(matches!(
        load_idx(ip, lp),
        Err(Error::CountMismatch {
            images: 2,
            labels: 3
        })
    ));
}

#[test]
fn swapped_files_fail_on_magic() {
    let dir = tempfile::tempdir().unwrap();
    let (ip, lp) = write_idx(dir.path(), &[[0; 4]], &[0]);
    assert!(matches!(load_idx(lp, ip), Err(Error::WrongMagic { .. })));
}

#[test]
fn truncated_payload_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let (ip, lp) = write_idx(dir.path(), &[[0; 4], [1; 4]], &[0, 1]);
    let mut bytes = std::fs::read(&ip).unwrap();
    bytes.truncate(bytes.len() - 3);
    std::fs::write(&ip, bytes).unwrap();
    assert!(matches!(load_idx(ip, lp), Err(Error::Truncated { .. })));
}

#[test]
fn missing_file_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(
        load_idx(dir.path().join("a"), dir.path().join("b")),
        Err(Error::Io(_))
    ));
}
