use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use genvc::checkpoint::Checkpoint;
use genvc::config::RunConfig;

fn genvc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_genvc")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = genvc(args);
    assert!(
        out.status.success(),
        "genvc {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

/// Nonzero exit and exactly one `error: <code>: ...` line on stderr.
fn fails_with(args: &[&str], code: &str) {
    let out = genvc(args);
    assert!(!out.status.success(), "genvc {args:?} should fail");
    let err = String::from_utf8(out.stderr).unwrap();
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(err.starts_with(&format!("error: {code}: ")), "{err}");
}

fn tiny_config() -> RunConfig {
    RunConfig {
        k_phonetic: 16,
        k_acoustic: 16,
        code_dim: 8,
        dvae_hidden: 16,
        dvae_resblocks: 1,
        dvae_steps: 20,
        dvae_lr: 1e-3,
        style_latents: 4,
        perceiver_blocks: 1,
        perceiver_heads: 2,
        perceiver_head_dim: 4,
        d_model: 8,
        lm_layers: 1,
        lm_heads: 2,
        max_positions: 256,
        lm_steps: 10,
        lm_epoch_steps: 5,
        lm_lr: 1e-3,
        prompt_min_secs: 0.5,
        prompt_max_secs: 1.0,
        clip_min_secs: 1.0,
        clip_max_secs: 2.0,
        max_gen_tokens: 20,
        vocoder_steps: 3,
        vocoder_channels: 8,
        vocoder_lr: 1e-3,
        batch_size: 2,
        ..RunConfig::default()
    }
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Fixture {
    _dir: tempfile::TempDir,
    data: PathBuf,
    config: PathBuf,
    ck: PathBuf,
}

/// Toy corpus plus every phase trained once with the tiny config.
fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let data = dir.path().join("data");
        ok(&["make-toy-corpus", "--seed", "1", "--out", s(&data)]);
        let config = dir.path().join("tiny.toml");
        std::fs::write(&config, tiny_config().to_toml()).unwrap();
        let ck = dir.path().join("ck");
        let manifest = data.join("manifest.csv");
        let common = ["--config", s(&config), "--seed", "3", "--manifest", s(&manifest), "--out", s(&ck)];
        for kind in ["phonetic", "acoustic"] {
            let mut a = vec!["train-dvae", "--kind", kind];
            a.extend(common);
            ok(&a);
        }
        for cmd in ["train-lm", "train-vocoder"] {
            let mut a = vec![cmd];
            a.extend(common);
            ok(&a);
        }
        Fixture {
            _dir: dir,
            data,
            config,
            ck,
        }
    })
}

fn wav(f: &Fixture, id: &str) -> PathBuf {
    f.data.join("wavs").join(format!("{id}.wav"))
}

#[test]
fn later_phases_report_missing_checkpoints() {
    let f = fixture();
    let empty = tempfile::tempdir().unwrap();
    let manifest = f.data.join("manifest.csv");
    for cmd in ["train-lm", "train-vocoder"] {
        fails_with(
            &[cmd, "--config", s(&f.config), "--manifest", s(&manifest), "--out", s(empty.path())],
            "dependency",
        );
    }
    fails_with(
        &[
            "convert",
            "--checkpoints",
            s(empty.path()),
            "--source",
            s(&wav(f, "spk_low_s0")),
            "--target",
            s(&wav(f, "spk_high_s0")),
            "--out",
            s(&empty.path().join("o.wav")),
        ],
        "dependency",
    );
}

#[test]
fn manifest_paths_must_exist() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dir.path().join("m.csv");
    std::fs::write(&manifest, "path,speaker,duration\nmissing.wav,a,1.0\n").unwrap();
    fails_with(
        &["train-dvae", "--kind", "phonetic", "--manifest", s(&manifest), "--out", s(dir.path())],
        "io",
    );
    fails_with(
        &["train-dvae", "--kind", "phonetic", "--manifest", s(&dir.path().join("nope.csv")), "--out", s(dir.path())],
        "io",
    );
}

#[test]
fn phonetic_dvae_on_three_files_gives_a_readable_checkpoint() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let full = std::fs::read_to_string(f.data.join("manifest.csv")).unwrap();
    let mut lines = full.lines();
    let mut small = format!("{}\n", lines.next().unwrap());
    for l in lines.take(3) {
        let (path, rest) = l.split_once(',').unwrap();
        small += &format!("{},{rest}\n", f.data.join(path).display());
    }
    let manifest = dir.path().join("three.csv");
    std::fs::write(&manifest, small).unwrap();
    let out = dir.path().join("ck");
    ok(&[
        "train-dvae", "--kind", "phonetic", "--config", s(&f.config), "--manifest", s(&manifest), "--out", s(&out),
    ]);
    let path = out.join("dvae-phonetic.gvck");
    assert_eq!(&std::fs::read(&path).unwrap()[..4], b"GVCK");
    let ck = Checkpoint::load(&path).unwrap();
    assert_eq!(ck.header.config, tiny_config());
}

#[test]
fn same_seed_gives_identical_loss_curves() {
    let f = fixture();
    let manifest = f.data.join("manifest.csv");
    let curve = |seed: &str| {
        let dir = tempfile::tempdir().unwrap();
        ok(&[
            "train-dvae", "--kind", "acoustic", "--config", s(&f.config), "--seed", seed, "--manifest", s(&manifest),
            "--out", s(dir.path()),
        ]);
        std::fs::read(dir.path().join("dvae-acoustic.loss.csv")).unwrap()
    };
    let a = curve("5");
    assert_eq!(a, curve("5"));
    assert_ne!(a, curve("6"));
}

#[test]
fn similarity_of_a_file_with_itself_is_one() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sim.jsonl");
    let a = wav(f, "spk_low_s1");
    ok(&["eval", "similarity", "--checkpoints", s(&f.ck), "--pair", s(&a), s(&a), "--out", s(&out)]);
    let line: serde_json::Value = serde_json::from_str(std::fs::read_to_string(&out).unwrap().trim()).unwrap();
    assert_eq!(line["metric"], "similarity");
    assert!((line["value"].as_f64().unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn convert_then_duration_report() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let mut pairs = String::new();
    for (i, (src, tgt)) in [("spk_low_s0", "spk_high_s1"), ("spk_high_s2", "spk_low_s3"), ("spk_low_s4", "spk_low_s0")]
        .iter()
        .enumerate()
    {
        let out = dir.path().join(format!("c{i}.wav"));
        let seed = i.to_string();
        ok(&[
            "convert", "--checkpoints", s(&f.ck), "--source", s(&wav(f, src)), "--target", s(&wav(f, tgt)), "--seed",
            &seed, "--out", s(&out),
        ]);
        let meta: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(out.with_extension("json")).unwrap()).unwrap();
        assert!(meta["duration_ratio"].as_f64().unwrap() > 0.0);
        pairs += &format!("{} c{i}.wav\n", wav(f, src).display());
    }
    let list = dir.path().join("pairs.txt");
    std::fs::write(&list, pairs).unwrap();
    let report = dir.path().join("dur.jsonl");
    ok(&["eval", "duration", "--list", s(&list), "--out", s(&report)]);
    let lines: Vec<serde_json::Value> = std::fs::read_to_string(&report)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 5);
    assert!(lines[..3].iter().all(|l| l["metric"] == "duration_ratio"));
    assert_eq!(lines[3]["metric"], "duration_ratio_mean");
    assert_eq!(lines[4]["metric"], "duration_ratio_variance");
    assert_eq!(lines[4]["count"], 3);
}

#[test]
fn convert_rejects_a_config_that_does_not_match_the_checkpoints() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let other = dir.path().join("other.toml");
    std::fs::write(
        &other,
        RunConfig {
            d_model: 16,
            ..tiny_config()
        }
        .to_toml(),
    )
    .unwrap();
    fails_with(
        &[
            "convert",
            "--config",
            s(&other),
            "--checkpoints",
            s(&f.ck),
            "--source",
            s(&wav(f, "spk_low_s0")),
            "--target",
            s(&wav(f, "spk_high_s0")),
            "--out",
            s(&dir.path().join("o.wav")),
        ],
        "checkpoint",
    );
}

#[test]
fn bad_inputs_exit_nonzero_with_one_line() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "temperature = -1.0\n").unwrap();
    fails_with(
        &[
            "train-dvae",
            "--kind",
            "acoustic",
            "--config",
            s(&bad),
            "--manifest",
            s(&f.data.join("manifest.csv")),
            "--out",
            s(dir.path()),
        ],
        "config",
    );
    fails_with(&["eval", "similarity", "--out", s(&dir.path().join("r.jsonl"))], "config");
    let list = dir.path().join("pairs.txt");
    std::fs::write(&list, "only-one-column.wav\n").unwrap();
    fails_with(&["eval", "duration", "--list", s(&list), "--out", s(&dir.path().join("r.jsonl"))], "parse");
}
