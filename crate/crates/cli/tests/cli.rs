//! Drives the `fsv` binary end to end: stage subcommands chained the way a
//! user would run them, score-file utilities checked against the library's
//! own math, and full experiment runs from a JSON config.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use fsv_core::augment::synth::{colored_noise, synth_utterance, VoiceProfile};
use fsv_core::io::{
    read_embeddings, read_scores, read_wav, write_scores, write_trial_key, write_wav, WavFormat,
};
use fsv_core::pipeline::{
    BackendSettings, DcfSettings, EmbedderSettings, ExperimentConfig, IvectorSettings,
    ManifestEntry, SystemConfig,
};
use fsv_core::score_norm::{as_norm, CohortScores};
use fsv_core::trials::{Trial, TrialLabel, TrialList, TrialScore};

fn fsv(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fsv"))
        .args(args)
        .output()
        .expect("spawn fsv")
}

fn fsv_ok(args: &[&str]) -> String {
    let out = fsv(args);
    assert!(
        out.status.success(),
        "fsv {:?} failed:\n{}",
        args,
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).expect("utf8 stdout")
}

fn path_str(p: &Path) -> &str {
    p.to_str().expect("utf8 path")
}

fn synth_wav(dir: &Path, name: &str, voice_seed: u64, utt_seed: u64, secs: f64) -> PathBuf {
    let path = dir.join(name);
    let audio = synth_utterance(&VoiceProfile::from_seed(voice_seed), utt_seed, secs, 16_000);
    write_wav(&path, &audio, WavFormat::Pcm16).unwrap();
    path
}

#[test]
fn feature_and_model_stages_chain_into_embeddings() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();

    // two speakers, four utterances each
    let mut fsv1 = Vec::new();
    let mut manifest = String::new();
    for spk in 0..2u64 {
        for utt in 0..4u64 {
            let name = format!("s{spk}u{utt}");
            let wav = synth_wav(d, &format!("{name}.wav"), 50 + spk, 7 * spk + utt, 2.5);
            let out = d.join(format!("{name}.fsv1"));
            let stdout = fsv_ok(&[
                "extract",
                "--kind",
                "mfcc30",
                "--in",
                path_str(&wav),
                "--out",
                path_str(&out),
            ]);
            assert!(stdout.contains("mfcc30"), "{stdout}");
            manifest.push_str(&format!("spk{spk} {name}.fsv1\n"));
            fsv1.push(out);
        }
    }
    let features: Vec<&str> = fsv1.iter().map(|p| path_str(p)).collect();

    // UBM -> T matrix -> i-vectors
    let ubm = d.join("ubm.fsvm");
    let mut args = vec!["train-ubm", "--components", "4", "--iters", "4", "--features"];
    args.extend(&features);
    args.extend(["--out", path_str(&ubm)]);
    fsv_ok(&args);

    let tv = d.join("tv.fsvm");
    let mut args = vec!["train-tv", "--rank", "8", "--iters", "2", "--features"];
    args.extend(&features);
    args.extend(["--ubm", path_str(&ubm), "--out", path_str(&tv)]);
    fsv_ok(&args);

    let ivecs = d.join("ivecs.fsve");
    let mut args = vec!["extract-ivector", "--model", path_str(&tv), "--features"];
    args.extend(&features);
    args.extend(["--out", path_str(&ivecs), "--dereverbed"]);
    fsv_ok(&args);
    let set = read_embeddings(&ivecs).unwrap();
    assert_eq!((set.len(), set.dim()), (8, 8));
    assert_eq!(set.extractor(), "ivector");
    assert!(set.dereverb());
    assert!(set.get("s0u0").is_some() && set.get("s1u3").is_some());

    // neural embedder from a labeled manifest
    let manifest_path = d.join("train.txt");
    std::fs::write(&manifest_path, manifest).unwrap();
    let net = d.join("net.fsvm");
    let stdout = fsv_ok(&[
        "train-embedder",
        "--manifest",
        path_str(&manifest_path),
        "--loss",
        "asoftmax",
        "--margin",
        "2",
        "--hidden",
        "16",
        "--embed",
        "8",
        "--steps",
        "30",
        "--batch",
        "4",
        "--seed",
        "5",
        "--out",
        path_str(&net),
    ]);
    assert!(stdout.contains("2 classes"), "{stdout}");

    let embs = d.join("embs.fsve");
    let mut args = vec!["extract-embedding", "--model", path_str(&net), "--features"];
    args.extend(&features);
    args.extend(["--out", path_str(&embs), "--tag", "xvec-toy"]);
    fsv_ok(&args);
    let set = read_embeddings(&embs).unwrap();
    assert_eq!((set.len(), set.dim()), (8, 8));
    assert_eq!(set.extractor(), "xvec-toy");
    assert!(!set.dereverb());
}

#[test]
fn rir_augment_and_wpe_commands_process_audio() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let speech = synth_wav(d, "speech.wav", 9, 1, 1.5);
    let noise_path = d.join("noise.wav");
    write_wav(
        &noise_path,
        &colored_noise(3, 2.0, 16_000, 0.1),
        WavFormat::Float32,
    )
    .unwrap();

    let room = d.join("room.json");
    std::fs::write(
        &room,
        r#"{
  "dimensions": [5.0, 4.0, 2.8],
  "absorption": 0.45,
  "source": [1.5, 2.0, 1.4],
  "mic": [3.5, 1.8, 1.2],
  "max_order": 2,
  "sample_rate": 16000,
  "c": 343.0
}"#,
    )
    .unwrap();
    let rir = d.join("rir.wav");
    fsv_ok(&["simulate-rir", "--room", path_str(&room), "--out", path_str(&rir)]);
    let rir_audio = read_wav(&rir).unwrap();
    assert_eq!(rir_audio.sample_rate(), 16_000);
    assert!(!rir_audio.is_empty());

    let far = d.join("far.wav");
    fsv_ok(&[
        "augment",
        "--in",
        path_str(&speech),
        "--rir",
        path_str(&rir),
        "--noise",
        path_str(&noise_path),
        "--snr",
        "10",
        "--out",
        path_str(&far),
    ]);
    // full convolution keeps the reverberant tail
    let far_audio = read_wav(&far).unwrap();
    assert!(far_audio.len() >= read_wav(&speech).unwrap().len());

    let clean = d.join("clean.wav");
    fsv_ok(&[
        "wpe",
        "--in",
        path_str(&far),
        "--out",
        path_str(&clean),
        "--iters",
        "2",
    ]);
    let clean_audio = read_wav(&clean).unwrap();
    assert_eq!(clean_audio.len(), far_audio.len());

    // noise without an SNR is a usage error
    let out = fsv(&[
        "augment",
        "--in",
        path_str(&speech),
        "--noise",
        path_str(&noise_path),
        "--out",
        path_str(&far),
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("--snr"));
}

/// Six labeled trials, separable but not perfectly ordered.
fn toy_scores(dir: &Path) -> (PathBuf, PathBuf) {
    let scores = vec![
        TrialScore::new("e1", "t1", 2.0),
        TrialScore::new("e1", "t2", -1.0),
        TrialScore::new("e1", "t3", -2.0),
        TrialScore::new("e2", "t1", -1.5),
        TrialScore::new("e2", "t2", 1.5),
        TrialScore::new("e2", "t3", 0.5),
    ];
    let labels = [
        TrialLabel::Target,
        TrialLabel::Impostor,
        TrialLabel::Impostor,
        TrialLabel::Impostor,
        TrialLabel::Target,
        TrialLabel::Impostor,
    ];
    let trials = TrialList::new(
        scores
            .iter()
            .zip(labels)
            .map(|(s, label)| Trial {
                enroll: s.enroll.clone(),
                test: s.test.clone(),
                label: Some(label),
            })
            .collect(),
    )
    .unwrap();
    let scores_path = dir.join("sysa.txt");
    let key_path = dir.join("key.txt");
    write_scores(&scores_path, &scores).unwrap();
    write_trial_key(&key_path, &trials).unwrap();
    (scores_path, key_path)
}

#[test]
fn eval_calibrate_fuse_work_on_score_files() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let (scores_a, key) = toy_scores(d);

    let det = d.join("det.svg");
    let stdout = fsv_ok(&[
        "eval",
        "--scores",
        path_str(&scores_a),
        "--key",
        path_str(&key),
        "--p-target",
        "0.05",
        "--det",
        path_str(&det),
    ]);
    assert!(stdout.contains("EER[%]") && stdout.contains("Cllr"), "{stdout}");
    assert!(stdout.contains("6 (2 target, 4 impostor)"), "{stdout}");
    assert!(std::fs::read_to_string(&det).unwrap().contains("<svg"));

    // calibrate system A, writing its params
    let cal_a = d.join("sysa.cal.txt");
    let params_a = d.join("params-a.json");
    fsv_ok(&[
        "calibrate",
        "--scores",
        path_str(&scores_a),
        "--key",
        path_str(&key),
        "--prior",
        "0.1",
        "--out",
        path_str(&cal_a),
        "--params-out",
        path_str(&params_a),
    ]);
    let parsed: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&params_a).unwrap()).unwrap();
    let a = parsed["sysa"]["a"].as_f64().unwrap();
    assert!(a > 0.0);

    // a second system: same ranking, different scale
    let scores_b_values: Vec<TrialScore> = read_scores(&scores_a)
        .unwrap()
        .into_iter()
        .map(|t| TrialScore::new(t.enroll, t.test, 3.0 * t.score + 1.0))
        .collect();
    let scores_b = d.join("sysb.txt");
    write_scores(&scores_b, &scores_b_values).unwrap();
    let params_b = d.join("params-b.json");
    fsv_ok(&[
        "calibrate",
        "--scores",
        path_str(&scores_b),
        "--key",
        path_str(&key),
        "--prior",
        "0.1",
        "--out",
        path_str(&d.join("sysb.cal.txt")),
        "--params-out",
        path_str(&params_b),
    ]);

    // merge both params documents, as a user would before fusing
    let mut merged: serde_json::Map<String, serde_json::Value> =
        serde_json::from_str(&std::fs::read_to_string(&params_a).unwrap()).unwrap();
    let other: serde_json::Map<String, serde_json::Value> =
        serde_json::from_str(&std::fs::read_to_string(&params_b).unwrap()).unwrap();
    merged.extend(other);
    let params = d.join("params.json");
    std::fs::write(&params, serde_json::to_string_pretty(&merged).unwrap()).unwrap();

    let fused = d.join("fused.txt");
    fsv_ok(&[
        "fuse",
        "--scores",
        path_str(&scores_a),
        path_str(&scores_b),
        "--params",
        path_str(&params),
        "--out",
        path_str(&fused),
    ]);
    let fused_scores = read_scores(&fused).unwrap();
    assert_eq!(fused_scores.len(), 6);

    // fusing with an unknown subsystem name fails loudly
    let rogue = d.join("sysc.txt");
    std::fs::copy(&scores_a, &rogue).unwrap();
    let out = fsv(&[
        "fuse",
        "--scores",
        path_str(&rogue),
        "--params",
        path_str(&params),
        "--out",
        path_str(&fused),
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("sysc"));
}

#[test]
fn asnorm_matches_the_library_formula() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let scores = vec![
        TrialScore::new("e1", "t1", 0.62),
        TrialScore::new("e1", "t2", -0.11),
        TrialScore::new("e2", "t1", 0.05),
    ];
    let scores_path = d.join("raw.txt");
    write_scores(&scores_path, &scores).unwrap();

    let enroll_rows = [("e1", vec![0.1, 0.9, 0.5, 0.3]), ("e2", vec![0.2, 0.8, 0.4, 0.6])];
    let test_rows = [
        ("t1", vec![0.0, 1.0, 0.5]),
        ("t2", vec![0.3, 0.7, 0.2]),
    ];
    let table = |rows: &[(&str, Vec<f64>)]| {
        rows.iter()
            .map(|(id, v)| {
                let nums: Vec<String> = v.iter().map(f64::to_string).collect();
                format!("{id} {}\n", nums.join(" "))
            })
            .collect::<String>()
    };
    let enroll_tab = d.join("enroll.mat");
    let test_tab = d.join("test.mat");
    std::fs::write(&enroll_tab, table(&enroll_rows)).unwrap();
    std::fs::write(&test_tab, table(&test_rows)).unwrap();

    let out_path = d.join("norm.txt");
    fsv_ok(&[
        "asnorm",
        "--scores",
        path_str(&scores_path),
        "--cohort-scores",
        path_str(&enroll_tab),
        path_str(&test_tab),
        "--top-x",
        "2",
        "--out",
        path_str(&out_path),
    ]);
    let got = read_scores(&out_path).unwrap();

    let stats: std::collections::HashMap<&str, CohortScores> = enroll_rows
        .iter()
        .chain(test_rows.iter())
        .map(|(id, v)| (*id, CohortScores::from_scores(v, 2).unwrap()))
        .collect();
    for (g, raw) in got.iter().zip(&scores) {
        let want = as_norm(raw.score, &stats[raw.enroll.as_str()], &stats[raw.test.as_str()])
            .unwrap();
        assert!(
            (g.score - want).abs() < 1e-12,
            "{} {}: got {} want {want}",
            g.enroll,
            g.test,
            g.score
        );
    }
}

#[test]
fn init_config_and_run_drive_a_full_experiment() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();

    // the reference config round-trips through the library's own parser
    let stdout = fsv_ok(&["init-config"]);
    let reference = ExperimentConfig::from_json(&stdout).unwrap();
    assert!(!reference.systems.is_empty());

    // a real, small experiment: 4 background speakers x 3 utterances,
    // 3 eval speakers with 1 enroll + 1 test each
    let wav = d.join("wav");
    std::fs::create_dir_all(&wav).unwrap();
    let mut train = Vec::new();
    for spk in 0..4u64 {
        for utt in 0..3u64 {
            let id = format!("bg{spk}-{utt}");
            let path = synth_wav(&wav, &format!("{id}.wav"), 60 + spk, 100 * spk + utt, 2.0);
            train.push(ManifestEntry::new(id, format!("bg{spk}"), path));
        }
    }
    let mut enroll = Vec::new();
    let mut test = Vec::new();
    for (spk, vseed) in [201u64, 217, 229].into_iter().enumerate() {
        let speaker = format!("spk{spk}");
        let e = synth_wav(&wav, &format!("enr{spk}.wav"), vseed, 900 + spk as u64, 2.0);
        enroll.push(ManifestEntry::new(format!("enr{spk}"), &speaker, e));
        let t = synth_wav(&wav, &format!("tst{spk}.wav"), vseed, 950 + spk as u64, 2.0);
        test.push(ManifestEntry::new(format!("tst{spk}"), &speaker, t));
    }
    let config = ExperimentConfig {
        seed: 11,
        output_dir: d.join("out"),
        train,
        enroll,
        test,
        cohort: Vec::new(),
        augment: None,
        systems: vec![SystemConfig {
            name: "ivector-cosine".into(),
            features: fsv_core::dsp::FeatureKind::Mfcc30,
            resample: false,
            wpe: false,
            embedder: EmbedderSettings::Ivector(IvectorSettings {
                ubm_components: 4,
                ubm_iterations: 3,
                tv_rank: 8,
                tv_iterations: 2,
            }),
            backend: BackendSettings::default(),
        }],
        asnorm: None,
        calibration: None,
        dcf: DcfSettings::default(),
    };
    let config_path = d.join("exp.json");
    std::fs::write(&config_path, config.to_json_pretty()).unwrap();

    let stdout = fsv_ok(&["run", "--config", path_str(&config_path)]);
    assert!(stdout.contains("ivector-cosine"), "{stdout}");
    assert!(stdout.contains("EER[%]"), "{stdout}");
    assert!(stdout.contains("9 trials (3 target, 6 impostor)"), "{stdout}");
    assert!(d.join("out/report.json").is_file());
    assert!(d.join("out/ivector-cosine.raw.txt").is_file());

    // a broken config reports its violations and produces nothing
    let mut broken = config;
    broken.output_dir = d.join("out-broken");
    broken.train[0].path = d.join("gone.wav");
    let broken_path = d.join("broken.json");
    std::fs::write(&broken_path, broken.to_json_pretty()).unwrap();
    let out = fsv(&["run", "--config", path_str(&broken_path)]);
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("invalid experiment config"), "{stderr}");
    assert!(stderr.contains("gone.wav"), "{stderr}");
    assert!(!broken.output_dir.exists());
}

#[test]
fn bad_usage_and_missing_files_fail_cleanly() {
    // unknown feature kind: clap usage error
    let out = fsv(&["extract", "--kind", "mfcc40", "--in", "x.wav", "--out", "y.fsv1"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("mfcc40"));

    // missing input file: runtime error, exit 1
    let out = fsv(&["eval", "--scores", "/nonexistent/s.txt", "--key", "/nonexistent/k.txt"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("fsv:"));
}
