use tensor_engine::*;

#[test]
fn checkpoint_round_trip_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.rcnm");
    let ckpt = Checkpoint {
        descriptor: "kind=rcn;M=16;K=5;C=3;R=60;wide=0;shortcut=0;att=none;dil=1,2,3".into(),
        norm_mean: [0.1, -0.2, 0.3],
        norm_std: [1.0, 2.0, 0.5],
        entries: vec![
            TensorEntry {
                name: "conv1.weight".into(),
                shape: vec![2, 3, 3, 3],
                values: (0..54).map(|i| i as f32 * 0.25 - 3.0).collect(),
            },
            TensorEntry {
                name: "cls.bias".into(),
                shape: vec![3],
                values: vec![0.0, -1.5, 2.25],
            },
        ],
    };
    write_rcnm(&path, &ckpt).unwrap();
    let back = read_rcnm(&path).unwrap();
    assert_eq!(back, ckpt);

    let bytes = std::fs::read(&path).unwrap();
    assert_eq!(&bytes[..4], b"RCNM");
}

#[test]
fn truncated_or_garbled_files_error_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.rcnm");
    let ckpt = Checkpoint {
        descriptor: "kind=rcn;M=4;K=2;C=3;R=20;wide=0;shortcut=0;att=none;dil=1,2,3".into(),
        norm_mean: [0.0; 3],
        norm_std: [1.0; 3],
        entries: vec![TensorEntry {
            name: "w".into(),
            shape: vec![4],
            values: vec![1.0, 2.0, 3.0, 4.0],
        }],
    };
    write_rcnm(&path, &ckpt).unwrap();
    let bytes = std::fs::read(&path).unwrap();

    let truncated = dir.path().join("truncated.rcnm");
    std::fs::write(&truncated, &bytes[..bytes.len() - 5]).unwrap();
    assert!(matches!(read_rcnm(&truncated), Err(TensorError::Corrupt(_))));

    let garbled = dir.path().join("garbled.rcnm");
    let mut bad = bytes.clone();
    bad[0] = b'X';
    std::fs::write(&garbled, &bad).unwrap();
    assert!(matches!(read_rcnm(&garbled), Err(TensorError::Corrupt(_))));
}
