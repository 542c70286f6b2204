//! Drives the `utcs` binary end to end on a small two-group temporal graph.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;
use utcs_core::config::PipelineConfig;
use utcs_core::EmbeddingTable;

const CONFIG: &str = r#"
[walk]
walks_per_node = 3
walk_length = 8

[sgns]
dim = 8
epochs = 1

[train]
epochs = 4
batch_size = 64

[pretrain]
checkpoint_every = 2

[eval]
runs = 1
queries = 10
"#;

struct Fixture {
    dir: TempDir,
}

impl Fixture {
    /// Two groups of six nodes with original ids 100.. and 200.., dense
    /// interaction inside each group and a few cross edges.
    fn new() -> Self {
        let dir = TempDir::new().unwrap();
        let mut edges = String::from("# u v t\n");
        for t in 0..12u64 {
            for base in [100u64, 200] {
                for a in 0..6u64 {
                    for b in a + 1..6 {
                        if (a + b + t) % 3 != 0 {
                            edges.push_str(&format!("{} {} {}\n", base + a, base + b, 10 * t + a));
                        }
                    }
                }
            }
            if t % 4 == 0 {
                edges.push_str(&format!("{} {} {}\n", 100 + t % 6, 205, 10 * t + 7));
            }
        }
        fs::write(dir.path().join("edges.txt"), edges).unwrap();
        fs::write(
            dir.path().join("communities.txt"),
            "100 101 102 103 104 105\n200 201 202 203 204 205\n",
        )
        .unwrap();
        fs::write(dir.path().join("config.toml"), CONFIG).unwrap();
        Fixture { dir }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn out(&self) -> PathBuf {
        self.path("out")
    }

    fn run(&self, args: &[&str]) -> Output {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_utcs"));
        cmd.args(args)
            .arg("--config")
            .arg(self.path("config.toml"))
            .arg("--out")
            .arg(self.out())
            .env("RUST_LOG", "warn");
        cmd.output().unwrap()
    }

    fn ok(&self, args: &[&str]) -> String {
        let o = self.run(args);
        assert!(o.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&o.stderr));
        String::from_utf8(o.stdout).unwrap()
    }

    fn ingest(&self) {
        let edges = self.path("edges.txt");
        self.ok(&["ingest", "--edges", edges.to_str().unwrap()]);
    }

    fn table(&self, name: &str) -> EmbeddingTable {
        EmbeddingTable::open(self.out().join(name)).unwrap()
    }
}

fn jsonl(path: &Path) -> Vec<Value> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

#[test]
fn ingest_writes_stats_and_a_stable_partition() {
    let f = Fixture::new();
    f.ingest();
    let stats: Value = serde_json::from_str(&fs::read_to_string(f.out().join("stats.json")).unwrap()).unwrap();
    assert_eq!(stats["nodes"], 12);
    assert_eq!(stats["static_edges"], 30 + 1 + 1 + 1);
    for name in ["graph.bin", "detemporal.txt", "node_map.txt"] {
        assert!(f.out().join(name).exists(), "{name} missing");
    }
    let first = fs::read(f.out().join("partition.txt")).unwrap();
    f.ingest();
    assert_eq!(fs::read(f.out().join("partition.txt")).unwrap(), first);
}

#[test]
fn missing_input_fails_with_nonzero_exit() {
    let f = Fixture::new();
    let o = f.run(&["ingest", "--edges", "does-not-exist.txt"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("does-not-exist.txt"));
    let o = f.run(&["pretrain"]);
    assert!(!o.status.success());
}

#[test]
fn zero_epochs_returns_the_initialization() {
    let f = Fixture::new();
    f.ingest();
    f.ok(&["pretrain", "--epochs", "0"]);
    assert_eq!(f.table("embeddings.emb"), f.table("init.emb"));
}

#[test]
fn pretrain_logs_each_epoch_and_resumes_exactly() {
    let f = Fixture::new();
    f.ingest();
    f.ok(&["pretrain"]);
    let logs = jsonl(&f.out().join("train_log.jsonl"));
    assert_eq!(logs.len(), 4);
    for (i, l) in logs.iter().enumerate() {
        assert_eq!(l["epoch"], i + 1);
        assert!(l["total"].as_f64().unwrap().is_finite());
    }
    assert!(f.out().join("checkpoints/epoch_2.emb").exists());
    assert!(f.out().join("checkpoints/epoch_4.emb").exists());
    let full = f.table("embeddings.emb");

    f.ok(&["pretrain", "--resume-from-epoch", "2"]);
    assert_eq!(f.table("embeddings.emb"), full);
    let resumed = jsonl(&f.out().join("train_log.jsonl"));
    assert_eq!(resumed.len(), 4);
    for (a, b) in logs.iter().zip(&resumed) {
        for key in ["epoch", "l_tmp", "l_node", "l_batch", "total"] {
            assert_eq!(a[key], b[key], "{key}");
        }
    }
}

#[test]
fn search_reports_members_and_per_query_errors() {
    let f = Fixture::new();
    f.ingest();
    f.ok(&["pretrain"]);
    fs::write(f.path("queries.txt"), "100\n# comment\n100, 102\n999\n1x\n100\n").unwrap();
    let results = f.path("results.jsonl");
    let q = f.path("queries.txt");
    f.ok(&["search", "--queries", q.to_str().unwrap(), "--results", results.to_str().unwrap()]);
    let recs = jsonl(&results);
    assert_eq!(recs.len(), 5);
    for r in [&recs[0], &recs[1], &recs[4]] {
        let members: Vec<u64> = r["members"].as_array().unwrap().iter().map(|v| v.as_u64().unwrap()).collect();
        for id in r["query"].as_array().unwrap() {
            assert!(members.contains(&id.as_u64().unwrap()));
        }
        assert!(r.get("error").is_none());
    }
    assert_eq!(recs[2]["line"], 4);
    assert!(recs[2]["error"].as_str().unwrap().contains("999"));
    assert!(recs[3]["error"].as_str().unwrap().contains("1x"));
    assert_eq!(recs[0]["members"], recs[4]["members"]);
}

#[test]
fn oracle_evaluation_is_perfect() {
    let f = Fixture::new();
    fs::write(
        f.path("config.toml"),
        format!("{CONFIG}embedding = \"oracle\"\nquery_size_max = 1\n"),
    )
    .unwrap();
    let (e, c) = (f.path("edges.txt"), f.path("communities.txt"));
    f.ok(&["eval", "--edges", e.to_str().unwrap(), "--communities", c.to_str().unwrap()]);
    let lines = jsonl(&f.out().join("eval.jsonl"));
    let agg = lines.last().unwrap();
    assert_eq!(agg["record"], "aggregate");
    for m in ["f1", "jaccard", "nmi"] {
        assert_eq!(agg[m]["mean"], 1.0, "{m}");
    }
    assert_eq!(lines.iter().filter(|l| l["record"] == "query").count(), 10);
}

#[test]
fn missed_threshold_exits_with_code_two() {
    let f = Fixture::new();
    fs::write(
        f.path("config.toml"),
        format!("{CONFIG}embedding = \"oracle\"\n[eval.thresholds]\nf1 = 1.01\n"),
    )
    .unwrap();
    let (e, c) = (f.path("edges.txt"), f.path("communities.txt"));
    let o = f.run(&["eval", "--edges", e.to_str().unwrap(), "--communities", c.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("threshold missed: F1"));
}

#[test]
fn shipped_config_round_trips() {
    let cfg = PipelineConfig::from_toml_str(CONFIG).unwrap();
    let text = cfg.to_toml_string().unwrap();
    assert_eq!(PipelineConfig::from_toml_str(&text).unwrap(), cfg);
    assert_eq!(cfg.train.epochs, 4);
    assert_eq!(cfg.pretrain.checkpoint_every, 2);
}
