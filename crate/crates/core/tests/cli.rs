use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use mmwave_usersel::cnn::{InputShape, NetworkConfig, NetworkState};
use mmwave_usersel::rng::{domain_seed, substream, Domain};

const TINY: &str = "\
array_rows = 2
array_cols = 2
n_users = 4
n_select = 2
n_samples = 200
epochs = 2
batch_size = 20
snr_grid_db = 0, 10
xi_list = 1.0, 0.7
trials = 20
seed = 5
";

fn usersel(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_usersel")).current_dir(dir).args(args).output().unwrap()
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("tiny.conf"), TINY).unwrap();
    dir
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn data_rows(csv: &str) -> Vec<Vec<String>> {
    csv.lines().filter(|l| !l.starts_with('#')).skip(1).map(|l| l.split(',').map(String::from).collect()).collect()
}

#[test]
fn complexity_prints_full_scale_counts() {
    let dir = setup();
    let out = usersel(dir.path(), &["complexity"]);
    assert!(out.status.success());
    let csv = stdout(&out);
    assert!(csv.starts_with("# array_rows = 12\n"));
    assert!(csv.contains("method,operations\nES,156764160\nBPSO,74649600\nGreedy,7464960\nCNN,5827584\n"), "{csv}");
}

#[test]
fn usage_errors_exit_with_one() {
    let dir = setup();
    fs::write(dir.path().join("bad.conf"), "no_such_key = 3\n").unwrap();
    assert_eq!(usersel(dir.path(), &["--config", "bad.conf", "complexity"]).status.code(), Some(1));
    assert_eq!(usersel(dir.path(), &["frobnicate"]).status.code(), Some(1));
    assert_eq!(usersel(dir.path(), &["--set", "n_select=11", "complexity"]).status.code(), Some(1));
    assert_eq!(usersel(dir.path(), &["--help"]).status.code(), Some(0));
}

#[test]
fn gen_dataset_refuses_overwrite_and_is_reproducible() {
    let dir = setup();
    let args = ["--config", "tiny.conf", "--out", "a.bin", "gen-dataset"];
    assert!(usersel(dir.path(), &args).status.success());
    let first = fs::read(dir.path().join("a.bin")).unwrap();
    assert_eq!(usersel(dir.path(), &args).status.code(), Some(1));
    let forced = usersel(dir.path(), &["--config", "tiny.conf", "--out", "a.bin", "--force", "gen-dataset"]);
    assert!(forced.status.success());
    assert_eq!(fs::read(dir.path().join("a.bin")).unwrap(), first);

    // --seed overrides the config file
    assert!(usersel(dir.path(), &["--config", "tiny.conf", "--seed", "6", "--out", "b.bin", "gen-dataset"]).status.success());
    assert_ne!(fs::read(dir.path().join("b.bin")).unwrap(), first);
}

#[test]
fn zero_epochs_writes_the_initial_network() {
    let dir = setup();
    assert!(usersel(dir.path(), &["--config", "tiny.conf", "gen-dataset"]).status.success());
    let out = usersel(dir.path(), &["--config", "tiny.conf", "--set", "epochs=0", "train"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let saved = NetworkState::<f32>::load(&dir.path().join("model.ckpt")).unwrap();
    let init = NetworkState::<f32>::new(
        NetworkConfig::new(6),
        InputShape::channel_planes(4, 4),
        &mut substream(domain_seed(5, Domain::Training), 0),
    )
    .unwrap();
    assert_eq!(saved, init);
    assert!(data_rows(&fs::read_to_string(dir.path().join("metrics.csv")).unwrap()).is_empty());
}

#[test]
fn train_then_evaluate() {
    let dir = setup();
    assert!(usersel(dir.path(), &["--config", "tiny.conf", "gen-dataset"]).status.success());
    let out = usersel(dir.path(), &["--config", "tiny.conf", "train"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let metrics = fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    assert!(metrics.contains("epoch,train_loss,train_acc,test_acc\n"));
    assert_eq!(data_rows(&metrics).len(), 2);

    // training refuses to clobber its checkpoint
    assert_eq!(usersel(dir.path(), &["--config", "tiny.conf", "train"]).status.code(), Some(1));

    let eval = usersel(dir.path(), &["--config", "tiny.conf", "eval-rate"]);
    assert!(eval.status.success(), "{}", String::from_utf8_lossy(&eval.stderr));
    let rows = data_rows(&stdout(&eval));
    assert_eq!(rows.len(), 8);
    assert!(stdout(&eval).contains("snr_db,method,mean_rate,std_rate\n"));
    for snr in rows.chunks(4) {
        let es: f64 = snr[0][2].parse().unwrap();
        assert_eq!(snr[0][1], "ES");
        for r in &snr[1..] {
            assert!(es >= r[2].parse::<f64>().unwrap());
        }
    }

    let sweep = usersel(dir.path(), &["--config", "tiny.conf", "--out", "csi.csv", "csi-sweep"]);
    assert!(sweep.status.success());
    let csi = data_rows(&fs::read_to_string(dir.path().join("csi.csv")).unwrap());
    assert_eq!(csi.len(), 4);
    // perfect CSI reproduces the CNN row of the rate evaluation
    for (snr_rows, csi_row) in rows.chunks(4).zip(csi.iter().filter(|r| r[1] == "1")) {
        assert_eq!(snr_rows[3][1], "CNN");
        assert_eq!(snr_rows[3][2], csi_row[2]);
    }
}

#[test]
fn mismatched_dataset_is_a_data_error() {
    let dir = setup();
    assert!(usersel(dir.path(), &["--config", "tiny.conf", "gen-dataset"]).status.success());
    let out = usersel(dir.path(), &["--config", "tiny.conf", "--set", "n_users=5", "train"]);
    assert_eq!(out.status.code(), Some(2));
    let missing = usersel(dir.path(), &["--config", "tiny.conf", "--set", "checkpoint=nope.ckpt", "eval-rate"]);
    assert_eq!(missing.status.code(), Some(2));
}
