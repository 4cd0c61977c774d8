use std::fs;
use std::path::Path;

use scan_core::deptree::SAMPLE_CONLLU;
use scan_core::pipeline::io::{decode_feature_container, encode_feature_container};
use scan_core::pipeline::{load_dataset, read_feature_container, write_feature_container, EmbeddingTable};
use scan_core::Matrix;

fn fixture(dir: &Path, words: &[&str]) {
    fs::write(dir.join("q.conllu"), SAMPLE_CONLLU).unwrap();
    let mut t = EmbeddingTable::new(3);
    for (i, w) in words.iter().enumerate() {
        t.insert(w, &[i as f64, 1.0, -1.0]).unwrap();
    }
    t.write(&dir.join("emb.txt")).unwrap();
    write_feature_container(&dir.join("f.scnf"), &Matrix::filled(4, 2, 0.5)).unwrap();
    write_feature_container(&dir.join("c.scnf"), &Matrix::filled(2, 2, 0.25)).unwrap();
}

fn line(id: &str, answer: &str) -> String {
    format!(
        r#"{{"id":"{id}","task":"open_ended","question":"q.conllu#0","embeddings":"emb.txt","frames":"f.scnf","clips":"c.scnf","answer":"{answer}"}}"#
    )
}

const WORDS: [&str; 5] = ["girl", "in", "green", "sitting", "on"];

#[test]
fn empty_manifest_is_empty_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let m = dir.path().join("m.jsonl");
    fs::write(&m, "").unwrap();
    let ds = load_dataset(&m, None).unwrap();
    assert!(ds.is_empty());
    assert!(ds.answers.is_empty());
}

#[test]
fn one_line_gives_one_example_with_matching_dims() {
    let dir = tempfile::tempdir().unwrap();
    fixture(dir.path(), &WORDS);
    let m = dir.path().join("m.jsonl");
    fs::write(&m, line("a", "chair") + "\n").unwrap();
    let ds = load_dataset(&m, None).unwrap();
    assert_eq!(ds.len(), 1);
    let ex = &ds.examples[0];
    assert_eq!(ex.questions[0].q.shape(), (5, 3));
    assert_eq!(ex.questions[0].q.row(2), &[2.0, 1.0, -1.0]);
    assert_eq!(ex.frames.shape(), (4, 2));
    assert_eq!(ex.clips.shape(), (2, 2));
    assert_eq!(ds.dims().unwrap(), (3, 2));
    assert_eq!(ds.answers, ["chair"]);
}

#[test]
fn missing_token_error_names_token_and_line() {
    let dir = tempfile::tempdir().unwrap();
    fixture(dir.path(), &["girl", "in", "sitting", "on"]);
    let m = dir.path().join("m.jsonl");
    fs::write(&m, String::new() + "\n" + &line("b", "x") + "\n").unwrap();
    let err = load_dataset(&m, None).unwrap_err().to_string();
    assert!(err.contains("'green'"), "{err}");
    assert!(err.contains("line 2"), "{err}");
}

#[test]
fn unknown_answer_and_missing_file_are_descriptive() {
    let dir = tempfile::tempdir().unwrap();
    fixture(dir.path(), &WORDS);
    let m = dir.path().join("m.jsonl");
    fs::write(&m, line("a", "sofa")).unwrap();
    let err = load_dataset(&m, Some(&["chair".to_string()])).unwrap_err().to_string();
    assert!(err.contains("'sofa'"), "{err}");

    fs::remove_file(dir.path().join("c.scnf")).unwrap();
    let err = load_dataset(&m, None).unwrap_err().to_string();
    assert!(err.contains("c.scnf"), "{err}");
}

#[test]
fn malformed_record_reports_its_line() {
    let dir = tempfile::tempdir().unwrap();
    fixture(dir.path(), &WORDS);
    let m = dir.path().join("m.jsonl");
    fs::write(&m, line("a", "x") + "\n{\"id\": 3}\n").unwrap();
    let err = load_dataset(&m, None).unwrap_err().to_string();
    assert!(err.contains("line 2"), "{err}");
}

#[test]
fn large_container_reads_back() {
    let (rows, cols) = (10_000usize, 2048usize);
    let value = |k: usize| ((k % 1009) as f32 - 504.0) / 8.0;
    let m = Matrix::from_vec(rows, cols, (0..rows * cols).map(|k| value(k) as f64).collect()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("big.scnf");
    write_feature_container(&p, &m).unwrap();
    assert_eq!(fs::metadata(&p).unwrap().len(), 13 + 4 * (rows * cols) as u64);
    let back = read_feature_container(&p).unwrap();
    assert_eq!(back.shape(), (rows, cols));
    for k in [0, 1, cols, rows * cols / 2 + 17, rows * cols - 1] {
        assert_eq!(back.data()[k], value(k) as f64);
    }
}

#[test]
fn container_header_errors() {
    let mut bytes = encode_feature_container(&Matrix::filled(2, 3, 1.0)).unwrap();
    assert!(decode_feature_container(&bytes).is_ok());

    let mut wrong = bytes.clone();
    wrong[0] = b'X';
    let err = decode_feature_container(&wrong).unwrap_err().to_string();
    assert!(err.contains("not a feature container"), "{err}");

    bytes.truncate(bytes.len() - 1);
    assert!(decode_feature_container(&bytes).unwrap_err().to_string().contains("truncated"));

    let mut huge = b"SCNF\x01".to_vec();
    huge.extend_from_slice(&u32::MAX.to_le_bytes());
    huge.extend_from_slice(&u32::MAX.to_le_bytes());
    assert!(decode_feature_container(&huge).is_err());
}
