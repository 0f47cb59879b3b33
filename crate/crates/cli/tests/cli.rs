use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = r#"
schema_version = 1
seeds = [1, 2]

[dataset]
kind = "synthetic"
class_count = 2
client_dims = 3
host_dims = 3
n_per_class = 40
cluster_spread = 0.3

[model]
bottom_hidden = [8]
cut_width = 4
top_hidden = [8]

[train]
epochs = 2
batch_size = 16

[defense]
kind = "discorloss"
lambda = 0.1

[attack]
kind = "model_completion"
aux_size = 10
references = true

[attack.shadow]
epochs = 2
"#;

fn cutlayer(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cutlayer")).args(args).output().unwrap()
}

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("exp.toml");
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn run_writes_json_and_csv_reports() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let out = dir.path().join("out");
    let o = cutlayer(&["run", &cfg, "--output", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["seeds"].as_array().unwrap().len(), 2);
    assert!(report["aggregates"]["r_lower"]["mean"].is_number());
    let csv = std::fs::read_to_string(out.join("report.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "seed,metric,value");
    assert_eq!(csv.lines().count(), 1 + 2 * 5);
}

#[test]
fn validate_config_reports_hash_or_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let good = write_config(dir.path(), TINY);
    let o = cutlayer(&["validate-config", &good]);
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stdout).contains("config hash"));

    let bad = write_config(dir.path(), &TINY.replace("lambda = 0.1", "lambda = -0.1"));
    assert_eq!(cutlayer(&["validate-config", &bad]).status.code(), Some(2));
    let garbage = write_config(dir.path(), "schema_version = [");
    assert_eq!(cutlayer(&["validate-config", &garbage]).status.code(), Some(2));
}

#[test]
fn missing_file_is_an_io_error() {
    assert_eq!(cutlayer(&["run", "/nonexistent/exp.toml"]).status.code(), Some(4));
}

#[test]
fn all_seeds_failing_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &TINY.replace("aux_size = 10", "aux_size = 5000"));
    let out = dir.path().join("out");
    assert_eq!(cutlayer(&["run", &cfg, "--output", out.to_str().unwrap()]).status.code(), Some(3));
}

#[test]
fn sweep_rejects_an_axis_the_config_lacks() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let o = cutlayer(&["sweep", &cfg, "--axis", "soft_label_count", "--values", "2,3"]);
    assert_eq!(o.status.code(), Some(2));
    let o = cutlayer(&["sweep", &cfg, "--axis", "depth", "--values", "2"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn lambda_sweep_writes_long_table() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &TINY.replace("seeds = [1, 2]", "seeds = [1]"));
    let out = dir.path().join("sweep");
    let o = cutlayer(&["sweep", &cfg, "--axis", "lambda", "--values", "0.0,0.5", "--output", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(out.join("sweep.csv")).unwrap();
    assert!(csv.starts_with("lambda,seed,metric,value"));
    assert_eq!(csv.lines().count(), 1 + 2 * 5);
}

#[test]
fn gen_softmap_writes_a_valid_secret() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("host_private/softmap.json");
    let o = cutlayer(&["gen-softmap", "--classes", "3", "--bins", "2", "--seed", "7", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(v["map"]["table"].as_array().unwrap().len(), 3);
    assert_eq!(v["rule"]["thresholds"], serde_json::json!([201]));
    let o = cutlayer(&["gen-softmap", "--classes", "1", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn dump_embeddings_writes_both_parties() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let out = dir.path().join("emb.csv");
    let o = cutlayer(&["dump-embeddings", &cfg, "--seed", "3", "--limit", "6", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&out).unwrap();
    let header = text.lines().next().unwrap();
    assert_eq!(header, "step,row_id,party,dim_0,dim_1,dim_2,dim_3,true_label");
    assert_eq!(text.lines().count(), 1 + 12);
}
