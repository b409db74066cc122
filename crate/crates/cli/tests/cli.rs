use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use hecnn::netcompile::{builtin, read_input, ModelWeights, CSV_HEADER};
use hecnn::refmodel::ref_forward;
use hecnn::verify::relative_error;

fn hecnn(args: &[&str], model_dir: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_hecnn"));
    cmd.args(args).env_remove("HECNN_MODEL_DIR");
    if let Some(dir) = model_dir {
        cmd.env("HECNN_MODEL_DIR", dir);
    }
    cmd.output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

#[test]
fn count_csv_schema() {
    let o = hecnn(&["count", "--model", "me", "--report", "csv"], None);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some(CSV_HEADER));
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert!(rows.iter().all(|r| r.len() == 7));
    assert_eq!(rows.first().unwrap()[0], "Conv1");
    let total = rows.last().unwrap();
    assert_eq!(total[0], "Total");
    for col in 1..7 {
        let sum: u64 = rows[..rows.len() - 1].iter().map(|r| r[col].parse::<u64>().unwrap()).sum();
        assert_eq!(sum, total[col].parse::<u64>().unwrap(), "column {col}");
    }
}

#[test]
fn count_table_lists_published_rows() {
    let o = hecnn(&["count", "--model", "cryptonets-hs"], None);
    let text = stdout(&o);
    assert!(text.starts_with("model cryptonets-hs (N = "), "{text}");
    assert!(text.contains("published, diagonal method:"));
    assert!(text.contains("LoLa-MNIST reference, row-major kernels:"));
}

#[test]
fn output_is_deterministic() {
    for args in [
        &["run", "--model", "me", "--seed", "4"][..],
        &["count", "--model", "cryptonets-hs", "--policy", "lola-dense", "--report", "csv"],
        &["sweep", "--n-range", "16:64", "--m-range", "4:16", "--measure", "--seed", "2"],
    ] {
        let a = hecnn(args, None);
        let b = hecnn(args, None);
        assert!(a.status.success());
        assert_eq!(a.stdout, b.stdout, "{args:?}");
    }
}

#[test]
fn different_seeds_change_logits() {
    let a = hecnn(&["run", "--model", "me", "--seed", "1"], None);
    let b = hecnn(&["run", "--model", "me", "--seed", "2"], None);
    assert_ne!(a.stdout, b.stdout);
}

#[test]
fn missing_file_exits_1() {
    let o = hecnn(&["count", "--model", "/nonexistent/model.json"], None);
    assert_eq!(o.status.code(), Some(1));
    let o = hecnn(&["count", "--model", "no-such-model"], None);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("no-such-model"));
}

#[test]
fn bad_json_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("broken.json");
    fs::write(&p, "{ \"name\": ").unwrap();
    let o = hecnn(&["count", "--model", p.to_str().unwrap()], None);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
}

#[test]
fn capacity_error_exits_2_and_names_stage() {
    let o = hecnn(&["count", "--model", "me", "--n-slots", "16"], None);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("Conv1"), "{err}");
}

#[test]
fn verification_failure_exits_3() {
    let o = hecnn(&["verify", "--cases", "5", "--inject-fault"], None);
    assert_eq!(o.status.code(), Some(3));
    assert!(stdout(&o).contains("FAIL"));
}

#[test]
fn short_verify_passes() {
    let o = hecnn(&["verify", "--cases", "20"], None);
    assert!(o.status.success(), "{}", stdout(&o));
    assert!(!stdout(&o).contains("FAIL"));
}

#[test]
fn model_dir_resolution() {
    let dir = tempfile::tempdir().unwrap();
    let mut model = builtin("me").unwrap();
    model.name = "tiny".into();
    fs::write(dir.path().join("tiny.json"), model.to_json()).unwrap();
    let o = hecnn(&["count", "--model", "tiny", "--report", "csv"], Some(dir.path()));
    assert!(o.status.success(), "{}", stderr(&o));
    let builtin_csv = stdout(&hecnn(&["count", "--model", "me", "--report", "csv"], None));
    assert_eq!(stdout(&o), builtin_csv);
    assert_eq!(hecnn(&["count", "--model", "tiny"], None).status.code(), Some(1));
}

#[test]
fn weights_and_input_files_round_trip() {
    let model = builtin("me").unwrap();
    let dir = tempfile::tempdir().unwrap();
    let (wp, xp) = (dir.path().join("w.bin"), dir.path().join("x.bin"));
    let mut bytes = Vec::new();
    ModelWeights::<f64>::random(&model, 9).unwrap().write_f32(&mut bytes).unwrap();
    fs::write(&wp, &bytes).unwrap();
    let [c, d, _] = model.input;
    let x: Vec<u8> = (0..c * d * d).flat_map(|i| (((i * 37) % 101) as f32 / 50.0 - 1.0).to_le_bytes()).collect();
    fs::write(&xp, &x).unwrap();

    let o = hecnn(&["run", "--model", "me", "--weights", wp.to_str().unwrap(), "--input", xp.to_str().unwrap()], None);
    assert!(o.status.success(), "{}", stderr(&o));
    let got: Vec<f64> = stdout(&o)
        .lines()
        .skip(1)
        .take_while(|l| l.starts_with("  "))
        .map(|l| l.split_once(": ").unwrap().1.parse().unwrap())
        .collect();

    let w = ModelWeights::<f64>::read_f32(&model, &mut bytes.as_slice()).unwrap();
    let input = read_input::<f64>(&model, &mut x.as_slice()).unwrap();
    let want = ref_forward(&model, &w, &input).unwrap();
    assert_eq!(got.len(), want.len());
    assert!(relative_error(&got, &want) < 1e-9);

    fs::write(&wp, &bytes[..bytes.len() - 4]).unwrap();
    let o = hecnn(&["run", "--model", "me", "--weights", wp.to_str().unwrap()], None);
    assert_ne!(o.status.code(), Some(0));
}

#[test]
fn sweep_small_grid() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sweep.csv");
    let o = hecnn(
        &["sweep", "--n-range", "16:32", "--m-range", "4:8", "--n-slots", "64", "--methods", "hs,lola-stacked", "--out", out.to_str().unwrap()],
        None,
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(&out).unwrap();
    let lines: Vec<_> = text.lines().collect();
    assert_eq!(lines[0], "method,n,m,N,rotations,multiplications,mask_multiplications");
    assert_eq!(lines.len(), 1 + 2 * 2 * 2);
    assert!(lines[1].starts_with("hs,16,4,64,"));
    assert!(hecnn(&["sweep", "--n-range", "3:9"], None).status.code() == Some(2));
}
