use std::io::Write;
use std::process::{Command, Output, Stdio};

fn dvnc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dvnc")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

const SMALL: &str = "kind = \"adding\"\ntask.train_samples = 16\ntask.test_samples = 8\ntask.seq_len = 3\ntask.test_gap = 4\ntrain.epochs = 0\nmodel.hidden = 4\n";

#[test]
fn run_prints_metrics_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("small.cfg");
    std::fs::write(&cfg, SMALL).unwrap();
    let o = dvnc(&["run", cfg.to_str().unwrap(), "--seed", "3"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "kind,seed,codebook_size,heads,split,mse");
    assert_eq!(lines.len(), 4);
    assert!(lines[1].starts_with("adding,3,16,2,iid,"));
}

#[test]
fn run_writes_output_directory() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("small.cfg");
    std::fs::write(&cfg, SMALL).unwrap();
    let out = dir.path().join("out");
    let o = dvnc(&["run", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    for f in ["epochs.csv", "metrics.csv", "records.json"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let first = std::fs::read(out.join("metrics.csv")).unwrap();
    assert_eq!(dvnc(&["run", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]).status.code(), Some(0));
    assert_eq!(std::fs::read(out.join("metrics.csv")).unwrap(), first);
}

#[test]
fn config_problems_exit_with_two() {
    assert_eq!(dvnc(&["run", "--set", "model.heads=3"]).status.code(), Some(2));
    assert_eq!(dvnc(&["run", "--set", "model.nonsense=1"]).status.code(), Some(2));
    assert_eq!(dvnc(&["run", "/definitely/missing.cfg"]).status.code(), Some(2));
    assert_eq!(dvnc(&["bounds", "--delta", "2"]).status.code(), Some(2));
    assert_eq!(dvnc(&["no-such-command"]).status.code(), Some(2));
    let o = dvnc(&["hoeffding", "--l", "64", "--g", "4"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("enumeration limit"));
}

#[test]
fn runtime_problems_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    std::fs::write(&blocker, "x").unwrap();
    let o = dvnc(&["bounds", "--out", blocker.join("sub/b.csv").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn bounds_subcommand() {
    let o = dvnc(&["bounds", "--g", "15", "--l", "30", "--n", "10000", "--m", "64"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    let value = |name: &str| -> f64 {
        text.lines().find_map(|l| l.strip_prefix(&format!("{name},"))).unwrap().parse().unwrap()
    };
    assert!((value("with_discretization") - 0.05230).abs() < 1e-4);
    assert!((value("without_discretization") - 0.16128).abs() < 1e-4);
}

#[test]
fn hoeffding_and_gaussian_subcommands() {
    let o = dvnc(&["hoeffding", "--n", "200", "--trials", "5"]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o).lines().count(), 6);
    assert!(String::from_utf8_lossy(&o.stderr).contains("violation rate"));
    let o = dvnc(&["gaussian", "--trials", "2", "--samples", "32", "--g-values", "1,2"]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o).lines().next(), Some("l,g,trial,variance"));
    assert_eq!(stdout(&o).lines().count(), 1 + 2 * 2 * 2);
}

#[test]
fn vector_field_subcommand() {
    let o = dvnc(&["vector-field", "--codes", "-1,0;1,0", "--steps", "3", "--lo", "-1", "--hi", "1"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    let codes: Vec<&str> = text.lines().skip(1).map(|l| l.rsplit(',').next().unwrap()).collect();
    assert_eq!(codes, ["0", "0", "1", "0", "0", "1", "0", "0", "1"]);
    assert_eq!(dvnc(&["vector-field"]).status.code(), Some(2));
    assert_eq!(dvnc(&["vector-field", "--codes", "1,2,3"]).status.code(), Some(2));
}

#[test]
fn quantize_reads_stdin() {
    let dir = tempfile::tempdir().unwrap();
    let cb = dir.path().join("cb.json");
    let cfg = dvnc::quantizer::QuantizerConfig::new(4, 2, 4).unwrap();
    let book = dvnc::quantizer::Codebook::from_rows(&[vec![0.0, 0.0], vec![1.0, 1.0], vec![-1.0, 0.0], vec![0.0, 2.0]]).unwrap();
    std::fs::write(&cb, dvnc::quantizer::codebook_to_json(&cfg, &book).unwrap()).unwrap();
    let mut child = Command::new(env!("CARGO_BIN_EXE_dvnc"))
        .args(["quantize", "--codebook", cb.to_str().unwrap()])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(b"0.9,1.2,-0.2,0.1\n\n").unwrap();
    let o = child.wait_with_output().unwrap();
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 2);
    let (idx, z) = lines[1].split_once(',').unwrap();
    assert_eq!(idx, "1 0");
    let z: Vec<f64> = z.split(' ').map(|v| v.parse().unwrap()).collect();
    assert_eq!(z, [1.0, 1.0, 0.0, 0.0]);

    let mut child = Command::new(env!("CARGO_BIN_EXE_dvnc"))
        .args(["quantize", "--codebook", cb.to_str().unwrap()])
        .stdin(Stdio::piped())
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(b"1,2\n").unwrap();
    assert_eq!(child.wait().unwrap().code(), Some(1));
}

#[test]
fn sweep_subcommand_counts_and_skips() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("small.cfg");
    std::fs::write(&cfg, SMALL).unwrap();
    let out = dir.path().join("sweep");
    let o = dvnc(&["sweep", cfg.to_str().unwrap(), "--l", "4,8", "--g", "1,3", "--seeds", "0,1", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let metrics = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 1 + 4 * 3);
    let skipped = std::fs::read_to_string(out.join("skipped.txt")).unwrap();
    assert_eq!(skipped.lines().count(), 4);
}
