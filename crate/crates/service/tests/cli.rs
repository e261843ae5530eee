use std::io::{BufRead, BufReader};
use std::path::Path;
use std::process::{Command, Output, Stdio};

use drumcritic::audio::synth::synth_library;
use drumcritic::features::MfccExtractor;
use drumcritic::pattern::random_loop;
use drumcritic::{loop_to_record, render_bar, save_checkpoint, CriticParams};
use drumcritic_service::ServiceConfig;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FAST: &str = r#"
[synth]
per_kind = 1
harsh = 1

[sampler]
burn_in_steps = 3
phase2_max_steps = 8
phase2_max_restarts = 1

[mfcc]
hop = 2048
n_mfcc = 8
n_mels = 16
"#;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_drumcritic"))
}

fn run(args: &[&str]) -> Output {
    let out = bin().args(args).output().unwrap();
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn write_config(dir: &Path, extra: &str) -> String {
    let path = dir.join("fast.toml");
    std::fs::write(&path, format!("{extra}\n{FAST}")).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn simulate_always_like_prints_unit_thetas() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let json = dir.path().join("summary.json");
    let out = run(&[
        "simulate", "--proxy", "always_like", "--seeds", "1", "--config", &cfg, "--json",
        json.to_str().unwrap(),
    ]);
    let stdout = String::from_utf8(out.stdout).unwrap();
    let row = stdout.lines().nth(1).unwrap();
    let cols: Vec<&str> = row.split_whitespace().collect();
    assert_eq!(&cols[..4], ["1", "1.000", "1.000", "+0.000"], "{stdout}");
    let summary: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(json).unwrap()).unwrap();
    assert_eq!(summary["seeds"][0]["theta_init"], 1.0);
    assert_eq!(summary["aggregate"]["median_delta_theta"], 0.0);
}

#[test]
fn rank_orders_two_loops_by_score_and_exports_them() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = write_config(dir.path(), "");
    let cfg = ServiceConfig::load(Some(Path::new(&cfg_path))).unwrap();
    let lib = synth_library(cfg.synth.seed, cfg.synth.per_kind, cfg.synth.harsh).unwrap();
    let critic = CriticParams::init(&cfg.session.arch(), &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
    let ckpts = dir.path().join("ckpts");
    let loops = dir.path().join("loops");
    std::fs::create_dir_all(&ckpts).unwrap();
    std::fs::create_dir_all(&loops).unwrap();
    save_checkpoint(&critic, ckpts.join("a.ckpt")).unwrap();

    let ex = MfccExtractor::new(cfg.session.mfcc).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut scored = Vec::new();
    for name in ["x", "y"] {
        let l = random_loop(&lib, &mut rng).unwrap();
        let s = critic.predict(&ex.compute(&render_bar(&l, &lib).unwrap()).unwrap()).unwrap();
        std::fs::write(loops.join(format!("{name}.json")), serde_json::to_string(&loop_to_record(&l)).unwrap()).unwrap();
        scored.push((l.id().to_string(), s));
    }
    scored.sort_by(|a, b| b.1.total_cmp(&a.1));

    let out_dir = dir.path().join("ranked");
    let out = run(&[
        "rank", "--checkpoints", ckpts.to_str().unwrap(), "--loops", loops.to_str().unwrap(), "--top", "1",
        "--bottom", "1", "--out", out_dir.to_str().unwrap(), "--config", &cfg_path,
    ]);
    let stdout = String::from_utf8(out.stdout).unwrap();
    let ids: Vec<&str> = stdout.lines().map(|l| l.split_whitespace().nth(2).unwrap()).collect();
    assert_eq!(ids, [scored[0].0.as_str(), scored[1].0.as_str()]);
    assert!(out_dir.join(format!("best_1_{}.wav", scored[0].0)).exists());
    assert!(out_dir.join(format!("worst_1_{}.wav", scored[1].0)).exists());
}

#[test]
fn config_dump_round_trips_and_serve_accepts_it() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "seed = 11");
    let dumped = String::from_utf8(run(&["config", "dump", "--config", &cfg]).stdout).unwrap();
    let again_path = dir.path().join("dumped.toml");
    std::fs::write(&again_path, &dumped).unwrap();
    let again = String::from_utf8(run(&["config", "dump", "--config", again_path.to_str().unwrap()]).stdout).unwrap();
    let a = ServiceConfig::from_toml(&dumped).unwrap();
    let b = ServiceConfig::from_toml(&again).unwrap();
    assert_eq!(a.session, b.session);
    assert_eq!((a.seed, a.port), (Some(11), 8080));

    let mut child = bin()
        .args(["serve", "--config", again_path.to_str().unwrap()])
        .env("DRUMCRITIC_PORT", "0")
        .env("DRUMCRITIC_DATA_DIR", dir.path().join("data"))
        .env("RUST_LOG", "info")
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let stderr = BufReader::new(child.stderr.take().unwrap());
    let mut seen = Vec::new();
    for line in stderr.lines() {
        let line = line.unwrap();
        let ready = line.contains("listening");
        seen.push(line);
        if ready {
            break;
        }
    }
    child.kill().unwrap();
    child.wait().unwrap();
    assert!(seen.iter().any(|l| l.contains("listening")), "{seen:?}");
}

#[test]
fn export_rerenders_a_session() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = write_config(dir.path(), "");
    let cfg = ServiceConfig::load(Some(Path::new(&cfg_path))).unwrap();
    let lib = std::sync::Arc::new(synth_library(cfg.synth.seed, cfg.synth.per_kind, cfg.synth.harsh).unwrap());
    let mut s = drumcritic::session::Session::create("e", cfg.session.clone(), lib, 1).unwrap();
    for _ in 0..3 {
        let n = s.next_loop().unwrap();
        s.submit_rating(n.loop_id.as_str(), drumcritic::Label::Like).unwrap();
    }
    let sdir = dir.path().join("session");
    s.persist(&sdir).unwrap();
    let out = dir.path().join("out");
    let stdout = String::from_utf8(
        run(&["export", "--session", sdir.to_str().unwrap(), "--out", out.to_str().unwrap(), "--config", &cfg_path])
            .stdout,
    )
    .unwrap();
    assert!(stdout.contains("wrote 3 WAV files"));
    for p in s.presented() {
        let a = std::fs::read(out.join(format!("{}.wav", p.drum_loop.id()))).unwrap();
        let b = std::fs::read(sdir.join("wav").join(format!("{}.wav", p.drum_loop.id()))).unwrap();
        assert_eq!(a, b);
    }
}

#[test]
fn bad_configuration_exits_nonzero_with_a_message() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, "[sampler]\ntemperature = -1.0\n").unwrap();
    let out = bin().args(["config", "dump", "--config", path.to_str().unwrap()]).output().unwrap();
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("temperature"), "{err}");
    let out = bin().args(["simulate", "--proxy", "nobody"]).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown proxy"));
    let out = bin().args(["config", "dump", "--config", "/nonexistent/x.toml"]).output().unwrap();
    assert!(!out.status.success());
}
