use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn permsep(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_permsep"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

struct Toy {
    test: usize,
    loss_mode: &'static str,
    gamma: f64,
    epochs: usize,
    extra: &'static str,
}

impl Default for Toy {
    fn default() -> Self {
        Self {
            test: 4,
            loss_mode: "pit",
            gamma: 0.0,
            epochs: 2,
            extra: "",
        }
    }
}

fn write_config(dir: &Path, name: &str, toy: &Toy) -> PathBuf {
    let text = format!(
        "seed = 7\n\
         [data]\ntrain = 10\ndev = 3\ntest = {}\nutterance_secs = 0.4\n\
         [model]\nhidden = 6\n\
         [train]\nepochs = {}\nlearning_rate = 0.01\nloss_mode = \"{}\"\ngamma_init = {}\n\
         {}\n\
         [io]\nout_dir = \"{}\"\n",
        toy.test,
        toy.epochs,
        toy.loss_mode,
        toy.gamma,
        toy.extra,
        dir.join("out").display()
    );
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn setup(toy: &Toy) -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    std::fs::create_dir(dir.path().join("out")).unwrap();
    let cfg = write_config(dir.path(), "config.toml", toy);
    let out = permsep(&["gen", "--config", s(&cfg)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    (dir, cfg)
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap()
}

/// Log contents without the wall-time column.
fn log_outcome(path: &Path) -> Vec<Vec<String>> {
    let text = read(path);
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let skip = header.iter().position(|h| *h == "wall_time_secs").unwrap();
    lines
        .map(|l| {
            l.split(',')
                .enumerate()
                .filter(|(i, _)| *i != skip)
                .map(|(_, v)| v.to_string())
                .collect()
        })
        .collect()
}

fn checkpoint_outcome(dir: &Path) -> serde_json::Value {
    let mut ck: serde_json::Value =
        serde_json::from_str(&read(&dir.join("checkpoint.json"))).unwrap();
    for r in ck["records"].as_array_mut().unwrap() {
        r.as_object_mut().unwrap().remove("wall_time_secs");
    }
    ck
}

#[test]
fn gen_is_deterministic_and_checks_its_inputs() {
    let (dir, cfg) = setup(&Toy::default());
    let manifest = dir.path().join("out/data/manifest_train.json");
    let first = read(&manifest);
    assert_eq!(first.matches("\"id\"").count(), 10);
    assert_eq!(code(&permsep(&["gen", "--config", s(&cfg)])), 0);
    assert_eq!(read(&manifest), first);

    let missing = permsep(&[
        "gen",
        "--config",
        s(&cfg),
        "--out",
        s(&dir.path().join("absent")),
    ]);
    assert_eq!(code(&missing), 3);

    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[train]\nepochz = 2\n").unwrap();
    let out = permsep(&["gen", "--config", s(&bad)]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("epochz"));
}

#[test]
fn train_requires_a_manifest() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::create_dir(dir.path().join("out")).unwrap();
    let cfg = write_config(dir.path(), "config.toml", &Toy::default());
    assert_eq!(code(&permsep(&["train", "--config", s(&cfg)])), 3);
}

#[test]
fn zero_gamma_training_log_matches_pit() {
    let (dir, pit_cfg) = setup(&Toy::default());
    let soft_cfg = write_config(
        dir.path(),
        "soft.toml",
        &Toy {
            loss_mode: "softmin_const",
            ..Toy::default()
        },
    );
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    // both runs read the dataset generated under out/data
    let data_line = format!("data_dir = \"{}\"\n", dir.path().join("out/data").display());
    for (cfg, run) in [(&pit_cfg, &a), (&soft_cfg, &b)] {
        let text = read(cfg).replace("[io]\n", &format!("[io]\n{data_line}"));
        std::fs::write(cfg, text).unwrap();
        let out = permsep(&["train", "--config", s(cfg), "--out", s(run)]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    }
    let la = log_outcome(&a.join("train_log.csv"));
    assert_eq!(la.len(), 2);
    assert_eq!(la, log_outcome(&b.join("train_log.csv")));
}

#[test]
fn trainable_run_logs_gamma_and_resumes() {
    let toy = Toy {
        loss_mode: "softmin_trainable",
        gamma: 1.0,
        epochs: 3,
        ..Toy::default()
    };
    let (dir, cfg) = setup(&toy);
    let full_dir = dir.path().join("full");
    let data_line = format!("data_dir = \"{}\"\n", dir.path().join("out/data").display());
    let text = read(&cfg).replace("[io]\n", &format!("[io]\n{data_line}"));
    std::fs::write(&cfg, &text).unwrap();
    assert_eq!(
        code(&permsep(&[
            "train",
            "--config",
            s(&cfg),
            "--out",
            s(&full_dir)
        ])),
        0
    );
    let full = log_outcome(&full_dir.join("train_log.csv"));
    assert_eq!(full.len(), 3);
    let header = read(&full_dir.join("train_log.csv"));
    assert!(header.lines().next().unwrap().contains("gamma"));

    let short = dir.path().join("short.toml");
    std::fs::write(&short, text.replace("epochs = 3", "epochs = 1")).unwrap();
    let part_dir = dir.path().join("part");
    assert_eq!(
        code(&permsep(&[
            "train",
            "--config",
            s(&short),
            "--out",
            s(&part_dir)
        ])),
        0
    );
    assert_eq!(log_outcome(&part_dir.join("train_log.csv")).len(), 1);
    let resumed = permsep(&[
        "train",
        "--config",
        s(&cfg),
        "--out",
        s(&part_dir),
        "--resume",
    ]);
    assert_eq!(
        code(&resumed),
        0,
        "{}",
        String::from_utf8_lossy(&resumed.stderr)
    );
    assert_eq!(log_outcome(&part_dir.join("train_log.csv")), full);
    assert_eq!(checkpoint_outcome(&part_dir), checkpoint_outcome(&full_dir));

    let other = dir.path().join("other.toml");
    std::fs::write(
        &other,
        text.replace("learning_rate = 0.01", "learning_rate = 0.02"),
    )
    .unwrap();
    assert_eq!(
        code(&permsep(&[
            "train",
            "--config",
            s(&other),
            "--out",
            s(&part_dir),
            "--resume"
        ])),
        2
    );
}

#[test]
fn eval_report_matches_its_rows() {
    let (dir, cfg) = setup(&Toy {
        extra: "[eval]\nexport_error_pairs = true\n",
        ..Toy::default()
    });
    assert_eq!(code(&permsep(&["train", "--config", s(&cfg)])), 0);
    let out = permsep(&["eval", "--config", s(&cfg)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let out_dir = dir.path().join("out");
    let report: serde_json::Value =
        serde_json::from_str(&read(&out_dir.join("report_test.json"))).unwrap();
    let csv = read(&out_dir.join("scores_test.csv"));
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let col = |name: &str| header.iter().position(|h| *h == name).unwrap();
    let rows: Vec<Vec<String>> = lines
        .map(|l| l.split(',').map(String::from).collect())
        .collect();
    assert_eq!(rows.len(), 8);
    for slot in 0..2 {
        let sdr: Vec<f64> = rows
            .iter()
            .filter(|r| r[col("slot")] == slot.to_string())
            .map(|r| r[col("sdr_db")].parse().unwrap())
            .collect();
        let mean = sdr.iter().sum::<f64>() / sdr.len() as f64;
        let reported = report["splits"]["test"]["slots"][slot]["sdr"]["mean"]
            .as_f64()
            .unwrap();
        assert!((mean - reported).abs() <= 1e-12 * mean.abs().max(1.0));
    }
    let hash = report["config_hash"].as_str().unwrap();
    assert!(rows.iter().all(|r| r[col("config_hash")] == hash));
    let pairs = read(&out_dir.join("error_pairs_test.csv"));
    assert_eq!(pairs.lines().count(), 5);
}

#[test]
fn oracle_eval_beats_the_mixture_on_every_example() {
    let (dir, cfg) = setup(&Toy::default());
    assert_eq!(
        code(&permsep(&["eval", "--config", s(&cfg), "--oracle"])),
        0
    );
    let csv = read(&dir.path().join("out/scores_test.csv"));
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let sdr = header.iter().position(|h| *h == "sdr_db").unwrap();
    let base = header.iter().position(|h| *h == "baseline_sdr_db").unwrap();
    for l in lines {
        let v: Vec<&str> = l.split(',').collect();
        assert!(v[sdr].parse::<f64>().unwrap() >= v[base].parse::<f64>().unwrap());
    }
}

#[test]
fn empty_split_gives_an_empty_report() {
    let (dir, cfg) = setup(&Toy {
        test: 0,
        ..Toy::default()
    });
    let out = permsep(&["eval", "--config", s(&cfg), "--oracle"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&read(&dir.path().join("out/report_test.json"))).unwrap();
    assert_eq!(report["splits"]["test"]["examples"], 0);
}

#[test]
fn gradcheck_passes_and_catches_a_fault() {
    let ok = permsep(&["gradcheck", "--seeds", "5"]);
    assert_eq!(code(&ok), 0);
    let table = String::from_utf8_lossy(&ok.stdout);
    for mode in ["pit", "softmin_const", "softmin_trainable"] {
        assert!(table.contains(mode), "{table}");
    }
    let bad = permsep(&["gradcheck", "--seeds", "5", "--inject-fault"]);
    assert_eq!(code(&bad), 5);
    assert!(String::from_utf8_lossy(&bad.stderr).contains("seed:index"));
}

#[test]
fn sweep_emits_one_row_per_gamma_and_seed() {
    let (dir, cfg) = setup(&Toy::default());
    let out = permsep(&[
        "sweep",
        "--config",
        s(&cfg),
        "--gammas",
        "0,1,2",
        "--seeds",
        "2",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let sweep = dir.path().join("out/sweep");
    assert_eq!(read(&sweep.join("rows.csv")).lines().count(), 1 + 3 * 2);
    assert_eq!(read(&sweep.join("table.csv")).lines().count(), 1 + 3);

    let pit_dir = dir.path().join("pit");
    std::fs::create_dir(&pit_dir).unwrap();
    let data_line = format!("data_dir = \"{}\"\n", dir.path().join("out/data").display());
    let text = read(&cfg).replace("[io]\n", &format!("[io]\n{data_line}"));
    std::fs::write(&cfg, text).unwrap();
    assert_eq!(
        code(&permsep(&[
            "train",
            "--config",
            s(&cfg),
            "--out",
            s(&pit_dir)
        ])),
        0
    );
    let zero_run = std::fs::read_dir(&sweep)
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.file_name().unwrap().to_str().unwrap().ends_with("_g0_s7"))
        .expect("gamma 0 run for seed 7");
    assert_eq!(
        log_outcome(&zero_run.join("train_log.csv")),
        log_outcome(&pit_dir.join("train_log.csv"))
    );
}
