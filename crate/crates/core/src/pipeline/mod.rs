//! End-to-end experiment orchestration.
//!
//! [`run_pipeline`] takes one [`ExperimentConfig`] and drives every
//! configured system through the full chain — augmentation, optional WPE,
//! feature extraction, embedder training and extraction, back-end
//! preprocessing and scoring, AS-Norm, calibration, fusion — then evaluates
//! all of them on a shared trial list and writes score files, a DET plot,
//! and a JSON + text report into the output directory.
//!
//! Every intermediate artifact is persisted in a content-addressed cache
//! (see [`cache`]), so re-running a half-finished experiment resumes from
//! whatever already exists, and re-running a finished one is a no-op apart
//! from re-deriving the report. All randomness is seeded from the config,
//! and cached artifacts are re-read before use, so two runs of the same
//! config produce byte-identical score files and reports.

mod cache;
pub mod config;

pub use config::{
    reference_config, validate_config, AsnormSettings, AugmentSettings, BackendSettings,
    CalibrationSettings, DcfSettings, EmbedderSettings, ExperimentConfig, IvectorSettings,
    LossSetting, ManifestEntry, NeuralSettings, PoolingSetting, ScoringKind, SystemConfig,
    WhiteningSource,
};

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::audio::AudioBuffer;
use crate::augment::synth::colored_noise;
use crate::augment::{convolve_rir, ism_rir, mix_at_snr};
use crate::backend::{coral_fit, cosine_score, plda_train_em, PldaScorer, Whitener};
use crate::dereverb::{wpe_dereverberate, WpeConfig};
use crate::dsp::resample_to_8k;
use crate::embedder::{
    extract_embedding, train_toy, LossKind, NetConfig, Pooling, ToyEmbedNet, TrainConfig,
};
use crate::embedding::{Embedding, EmbeddingSet};
use crate::error::{FsvError, Result};
use crate::eval::{act_dcf, det_points, det_svg, eer, min_dcf, DcfParams, DetCurve};
use crate::features::extract_features;
use crate::fusion::{calibrate_fit, cllr, fuse, CalibrationParams};
use crate::gmm::{accumulate_bw_stats, extract_ivector, train_tmatrix_em, ubm_train_em, BwStats};
use crate::io;
use crate::score_norm::normalize_trial_set;
use crate::trials::{LabeledScoreSet, Trial, TrialLabel, TrialList, TrialScore};

use cache::{file_digest, stage_key, ArtifactCache};

/// Metrics and artifacts for one evaluated system (or the fusion row).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SystemReport {
    pub name: String,
    /// Equal error rate as a fraction in [0, 1].
    pub eer: f64,
    pub min_dcf: f64,
    pub act_dcf: f64,
    pub cllr: f64,
    /// Final score file, relative to the output directory.
    pub score_file: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub calibration: Option<CalibrationParams>,
}

/// The whole experiment's outcome, as serialized to `report.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub n_trials: usize,
    pub n_target: usize,
    pub n_impostor: usize,
    pub dcf: DcfSettings,
    pub systems: Vec<SystemReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fusion: Option<SystemReport>,
}

/// Runs the experiment with the cache at `$FSV_CACHE_DIR`, or
/// `<output_dir>/cache` when the variable is unset.
pub fn run_pipeline(config: &ExperimentConfig) -> Result<ExperimentReport> {
    let env_cache = std::env::var_os("FSV_CACHE_DIR").map(PathBuf::from);
    run_pipeline_with_cache(config, env_cache.as_deref())
}

pub fn run_pipeline_with_cache(
    config: &ExperimentConfig,
    cache_dir: Option<&Path>,
) -> Result<ExperimentReport> {
    let violations = validate_config(config);
    if !violations.is_empty() {
        return Err(FsvError::config(format!(
            "invalid experiment config:\n  - {}",
            violations.join("\n  - ")
        )));
    }
    std::fs::create_dir_all(&config.output_dir)?;
    let cache_path = cache_dir
        .map(Path::to_path_buf)
        .unwrap_or_else(|| config.output_dir.join("cache"));
    let cache = ArtifactCache::open(&cache_path)?;

    let trial_list = build_trials(config)?;
    io::write_trial_key(&config.output_dir.join("trials.txt"), &trial_list)?;
    let dcf = config.dcf.to_params()?;

    let mut systems = Vec::new();
    let mut curves = Vec::new();
    let mut fusion_scores = Vec::new();
    let mut fusion_params = Vec::new();
    for sys in &config.systems {
        let outcome = run_system(config, sys, &cache, &trial_list, &dcf)?;
        curves.push(outcome.curve);
        if let Some(params) = &outcome.report.calibration {
            fusion_scores.push(outcome.precal_scores);
            fusion_params.push(*params);
        }
        systems.push(outcome.report);
    }

    let fusion = if fusion_scores.len() >= 2 {
        let fused = fuse(&fusion_scores, &fusion_params)
            .map_err(|e| e.in_stage("fusion", None))?;
        let file = "fusion.txt".to_string();
        io::write_scores(&config.output_dir.join(&file), &fused)?;
        let (report, curve) = evaluate_scores("fusion", &fused, &trial_list, &dcf, file, None)?;
        curves.push(curve);
        Some(report)
    } else {
        None
    };

    let (n_target, n_impostor) = class_counts(&trial_list);
    let report = ExperimentReport {
        n_trials: trial_list.len(),
        n_target,
        n_impostor,
        dcf: config.dcf,
        systems,
        fusion,
    };
    let json = serde_json::to_string_pretty(&report)
        .map_err(|e| FsvError::Format(format!("report: {e}")))?;
    std::fs::write(config.output_dir.join("report.json"), json + "\n")?;
    std::fs::write(config.output_dir.join("report.txt"), render_table(&report))?;
    std::fs::write(config.output_dir.join("det.svg"), det_svg(&curves))?;
    Ok(report)
}

/// The evaluation protocol: every enroll speaker (order of first appearance)
/// against every test utterance (manifest order), labeled by speaker match.
fn build_trials(config: &ExperimentConfig) -> Result<TrialList> {
    let mut speakers = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for e in &config.enroll {
        if seen.insert(e.speaker.as_str()) {
            speakers.push(e.speaker.clone());
        }
    }
    let mut trials = Vec::with_capacity(speakers.len() * config.test.len());
    for speaker in &speakers {
        for t in &config.test {
            let label = if &t.speaker == speaker {
                TrialLabel::Target
            } else {
                TrialLabel::Impostor
            };
            trials.push(Trial {
                enroll: speaker.clone(),
                test: t.id.clone(),
                label: Some(label),
            });
        }
    }
    TrialList::new(trials)
}

fn class_counts(trials: &TrialList) -> (usize, usize) {
    let n_target = trials
        .iter()
        .filter(|t| t.label == Some(TrialLabel::Target))
        .count();
    (n_target, trials.len() - n_target)
}

/// Formats the report as a fixed-width table (minC, actC, EER[%], Cllr).
pub fn render_table(report: &ExperimentReport) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<24} {:>8} {:>8} {:>8} {:>8}\n",
        "system", "minC", "actC", "EER[%]", "Cllr"
    ));
    out.push_str(&format!("{}\n", "-".repeat(60)));
    for r in report.systems.iter().chain(report.fusion.as_ref()) {
        out.push_str(&format!(
            "{:<24} {:>8.4} {:>8.4} {:>8.2} {:>8.4}\n",
            r.name,
            r.min_dcf,
            r.act_dcf,
            r.eer * 100.0,
            r.cllr
        ));
    }
    out
}

// ---------------------------------------------------------------------------
// per-system execution
// ---------------------------------------------------------------------------

struct SystemOutcome {
    report: SystemReport,
    curve: DetCurve,
    /// Scores before calibration; the inputs fusion works from.
    precal_scores: Vec<TrialScore>,
}

/// One utterance's front-end output together with its artifact key.
struct UttFeatures {
    id: String,
    speaker: String,
    key: String,
    feats: crate::dsp::FeatureMatrix,
}

fn run_system(
    config: &ExperimentConfig,
    sys: &SystemConfig,
    cache: &ArtifactCache,
    trial_list: &TrialList,
    dcf: &DcfParams,
) -> Result<SystemOutcome> {
    let needs_cohort = config.asnorm.is_some()
        || sys.backend.coral
        || sys.backend.whitening == WhiteningSource::Cohort;

    let train_feats = frontend_set(cache, config, sys, &config.train)?;
    let enroll_feats = frontend_set(cache, config, sys, &config.enroll)?;
    let test_feats = frontend_set(cache, config, sys, &config.test)?;
    let cohort_feats = if needs_cohort {
        Some(frontend_set(cache, config, sys, &config.cohort)?)
    } else {
        None
    };

    let embedded = match &sys.embedder {
        EmbedderSettings::Ivector(iv) => ivector_embeddings(
            cache,
            sys,
            iv,
            &train_feats,
            &enroll_feats,
            &test_feats,
            cohort_feats.as_deref(),
        )?,
        EmbedderSettings::Neural(n) => neural_embeddings(
            cache,
            config,
            sys,
            n,
            &train_feats,
            &enroll_feats,
            &test_feats,
            cohort_feats.as_deref(),
        )?,
    };

    let backend_stage = format!("{}/backend", sys.name);
    let in_backend = |e: FsvError| e.in_stage(&backend_stage, None);

    // CORAL-adapt the training embeddings toward the cohort domain, then fit
    // the whitener and preprocess every population identically.
    let dim = embedded.train.dim();
    let train_mat = set_matrix(&embedded.train);
    let train_mat = if sys.backend.coral {
        let cohort = embedded.cohort.as_ref().expect("validated: coral needs cohort");
        let transform = coral_fit(&train_mat, &set_matrix(cohort)).map_err(in_backend)?;
        transform.apply_rows(&train_mat).map_err(in_backend)?
    } else {
        train_mat
    };
    let whitener = match sys.backend.whitening {
        WhiteningSource::Train => Whitener::fit(&train_mat),
        WhiteningSource::Cohort => Whitener::fit(&set_matrix(
            embedded.cohort.as_ref().expect("validated: cohort whitening"),
        )),
    }
    .map_err(in_backend)?;

    let train_prep = whitener.apply_rows(&train_mat).map_err(in_backend)?;
    let enroll_prep = prep_set(&whitener, &embedded.enroll).map_err(in_backend)?;
    let test_prep = prep_set(&whitener, &embedded.test).map_err(in_backend)?;
    let cohort_prep = match &embedded.cohort {
        Some(set) => Some(prep_set(&whitener, set).map_err(in_backend)?),
        None => None,
    };

    let models = enroll_models(config, &enroll_prep).map_err(in_backend)?;

    let scorer = match sys.backend.scoring {
        ScoringKind::Cosine => Scorer::Cosine,
        ScoringKind::Plda => {
            let (labels, n_speakers) = speaker_indices(&train_feats);
            let rank = sys
                .backend
                .plda_rank
                .unwrap_or_else(|| dim.min(n_speakers.saturating_sub(1)).max(1));
            let model = plda_train_em(&train_prep, &labels, rank, sys.backend.plda_iterations)
                .map_err(|e| e.in_stage(&format!("{}/train-plda", sys.name), None))?;
            Scorer::Plda(PldaScorer::new(&model).map_err(in_backend)?)
        }
    };

    // Raw trial scores.
    let trial_digest = trials_digest(trial_list);
    let backend_json = settings_json(&sys.backend)?;
    let mut parts: Vec<&str> = vec!["scores-v1", &backend_json, &trial_digest];
    parts.push(&embedded.train_key);
    parts.push(&embedded.enroll_key);
    parts.push(&embedded.test_key);
    if let Some(k) = &embedded.cohort_key {
        parts.push(k);
    }
    let score_key = stage_key(&parts);
    let raw_scores = cache
        .get_or_create(
            &score_key,
            "txt",
            || compute_scores(trial_list, &models, &test_prep, &scorer),
            |p, s| io::write_scores(p, s),
            |p| io::read_scores(p),
        )
        .map_err(|e| e.in_stage(&format!("{}/score", sys.name), None))?;

    let mut file = format!("{}.raw.txt", sys.name);
    io::write_scores(&config.output_dir.join(&file), &raw_scores)?;
    let mut final_scores = raw_scores;

    // AS-Norm against the preprocessed cohort, using the same scorer.
    if let Some(asnorm) = &config.asnorm {
        let cohort = cohort_prep.as_ref().expect("validated: asnorm needs cohort");
        let sides = trial_side_set(&models, &test_prep)?;
        let top_x = asnorm.top_x.to_string();
        let key = stage_key(&["asnorm-v1", &score_key, &top_x]);
        let scorer_ref = &scorer;
        let normalized = cache
            .get_or_create(
                &key,
                "txt",
                || {
                    normalize_trial_set(
                        &final_scores,
                        &sides,
                        cohort,
                        &|e: &[f64], t: &[f64]| scorer_ref.score(e, t),
                        asnorm.top_x,
                    )
                },
                |p, s| io::write_scores(p, s),
                |p| io::read_scores(p),
            )
            .map_err(|e| e.in_stage(&format!("{}/asnorm", sys.name), None))?;
        file = format!("{}.asnorm.txt", sys.name);
        io::write_scores(&config.output_dir.join(&file), &normalized)?;
        final_scores = normalized;
    }

    // Calibration on this experiment's labeled trials.
    let precal_scores = final_scores.clone();
    let mut calibration = None;
    if let Some(cal) = &config.calibration {
        let stage = format!("{}/calibrate", sys.name);
        let labeled =
            LabeledScoreSet::join(&final_scores, trial_list).map_err(|e| e.in_stage(&stage, None))?;
        let params = calibrate_fit(&labeled, cal.prior).map_err(|e| e.in_stage(&stage, None))?;
        let calibrated = final_scores
            .iter()
            .map(|t| TrialScore::new(t.enroll.clone(), t.test.clone(), params.apply(t.score)))
            .collect::<Vec<_>>();
        file = format!("{}.cal.txt", sys.name);
        io::write_scores(&config.output_dir.join(&file), &calibrated)?;
        final_scores = calibrated;
        calibration = Some(params);
    }

    let (report, curve) =
        evaluate_scores(&sys.name, &final_scores, trial_list, dcf, file, calibration)?;
    Ok(SystemOutcome {
        report,
        curve,
        precal_scores,
    })
}

fn evaluate_scores(
    name: &str,
    scores: &[TrialScore],
    trial_list: &TrialList,
    dcf: &DcfParams,
    score_file: String,
    calibration: Option<CalibrationParams>,
) -> Result<(SystemReport, DetCurve)> {
    let stage = format!("{name}/eval");
    let labeled =
        LabeledScoreSet::join(scores, trial_list).map_err(|e| e.in_stage(&stage, None))?;
    let report = SystemReport {
        name: name.to_string(),
        eer: eer(&labeled).map_err(|e| e.in_stage(&stage, None))?,
        min_dcf: min_dcf(&labeled, dcf).map_err(|e| e.in_stage(&stage, None))?.0,
        act_dcf: act_dcf(&labeled, dcf).map_err(|e| e.in_stage(&stage, None))?,
        cllr: cllr(&labeled).map_err(|e| e.in_stage(&stage, None))?,
        score_file,
        calibration,
    };
    let curve = DetCurve {
        label: name.to_string(),
        points: det_points(&labeled).map_err(|e| e.in_stage(&stage, None))?,
    };
    Ok((report, curve))
}

// ---------------------------------------------------------------------------
// front-end stage
// ---------------------------------------------------------------------------

fn frontend_set(
    cache: &ArtifactCache,
    config: &ExperimentConfig,
    sys: &SystemConfig,
    entries: &[ManifestEntry],
) -> Result<Vec<UttFeatures>> {
    let stage = format!("{}/frontend", sys.name);
    let augment_json = match &config.augment {
        Some(aug) => settings_json(aug)?,
        None => "none".to_string(),
    };
    let seed = config.seed.to_string();
    entries
        .par_iter()
        .map(|entry| {
            let result = (|| -> Result<UttFeatures> {
                let wav_digest = file_digest(&entry.path)?;
                let key = stage_key(&[
                    "frontend-v1",
                    sys.features.name(),
                    if sys.wpe { "wpe" } else { "dry" },
                    if sys.resample { "8k" } else { "16k" },
                    &augment_json,
                    &seed,
                    &entry.id,
                    &wav_digest,
                ]);
                let feats = cache.get_or_create(
                    &key,
                    "fsv1",
                    || compute_frontend(config, sys, entry),
                    |p, m| io::write_features(p, m),
                    |p| io::read_features(p),
                )?;
                Ok(UttFeatures {
                    id: entry.id.clone(),
                    speaker: entry.speaker.clone(),
                    key,
                    feats,
                })
            })();
            result.map_err(|e| e.in_stage(&stage, Some(&entry.id)))
        })
        .collect()
}

fn compute_frontend(
    config: &ExperimentConfig,
    sys: &SystemConfig,
    entry: &ManifestEntry,
) -> Result<crate::dsp::FeatureMatrix> {
    let mut audio = io::read_wav(&entry.path)?;
    if let Some(aug) = &config.augment {
        audio = apply_augment(aug, config.seed, &entry.id, audio)?;
    }
    if sys.wpe {
        audio = wpe_dereverberate(&audio, &WpeConfig::default_at(audio.sample_rate()))?;
    }
    if sys.resample {
        audio = resample_to_8k(&audio)?;
    }
    extract_features(&audio, sys.features)
}

fn apply_augment(
    aug: &AugmentSettings,
    seed: u64,
    id: &str,
    audio: AudioBuffer,
) -> Result<AudioBuffer> {
    let utt_seed = utterance_seed(seed, id);
    let mut out = audio;
    if let Some(room) = &aug.room {
        let mut room = room.clone();
        room.sample_rate = out.sample_rate();
        if aug.source_jitter > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(utt_seed);
            for axis in 0..3 {
                let delta: f64 = rng.random_range(-aug.source_jitter..=aug.source_jitter);
                let len = room.dimensions[axis];
                let margin = (0.05f64).min(len / 4.0);
                room.source[axis] = (room.source[axis] + delta).clamp(margin, len - margin);
            }
        }
        let rir = ism_rir(&room)?;
        out = convolve_rir(&out, &rir)?;
    }
    if let Some(snr) = aug.snr_db {
        let noise = colored_noise(
            utt_seed ^ 0x6e01_5e,
            out.duration_secs() + 1.0,
            out.sample_rate(),
            1.0,
        );
        out = mix_at_snr(&out, &noise, snr)?;
    }
    Ok(out)
}

/// Stable per-utterance seed derived from the experiment seed and the id.
fn utterance_seed(seed: u64, id: &str) -> u64 {
    let digest = stage_key(&[&seed.to_string(), id]);
    u64::from_str_radix(&digest[..16], 16).expect("hex digest")
}

// ---------------------------------------------------------------------------
// embedder stages
// ---------------------------------------------------------------------------

/// Per-population embedding sets with the artifact keys they came from.
struct Embedded {
    train: EmbeddingSet,
    enroll: EmbeddingSet,
    test: EmbeddingSet,
    cohort: Option<EmbeddingSet>,
    train_key: String,
    enroll_key: String,
    test_key: String,
    cohort_key: Option<String>,
}

fn utt_keys<'a>(base: Vec<&'a str>, utts: &'a [UttFeatures]) -> Vec<&'a str> {
    let mut parts = base;
    for u in utts {
        parts.push(&u.id);
        parts.push(&u.key);
    }
    parts
}

#[allow(clippy::too_many_arguments)]
fn ivector_embeddings(
    cache: &ArtifactCache,
    sys: &SystemConfig,
    iv: &IvectorSettings,
    train: &[UttFeatures],
    enroll: &[UttFeatures],
    test: &[UttFeatures],
    cohort: Option<&[UttFeatures]>,
) -> Result<Embedded> {
    let cfg_json = settings_json(iv)?;

    let ubm_key = stage_key(&utt_keys(vec!["ubm-v1", &cfg_json], train));
    let ubm = cache
        .get_or_create(
            &ubm_key,
            "fsvm",
            || {
                let mats: Vec<DMatrix<f64>> =
                    train.iter().map(|u| u.feats.to_matrix()).collect();
                ubm_train_em(&mats, iv.ubm_components, iv.ubm_iterations)
            },
            |p, m| io::save_ubm(p, m),
            |p| io::load_ubm(p),
        )
        .map_err(|e| e.in_stage(&format!("{}/train-ubm", sys.name), None))?;

    let tv_key = stage_key(&utt_keys(vec!["tv-v1", &cfg_json, &ubm_key], train));
    let tv = cache
        .get_or_create(
            &tv_key,
            "fsvm",
            || {
                let stats: Vec<BwStats> = train
                    .par_iter()
                    .map(|u| accumulate_bw_stats(&ubm, &u.feats.to_matrix()))
                    .collect::<Result<_>>()?;
                train_tmatrix_em(&ubm, &stats, iv.tv_rank, iv.tv_iterations)
            },
            |p, m| io::save_ivector_extractor(p, m),
            |p| io::load_ivector_extractor(p),
        )
        .map_err(|e| e.in_stage(&format!("{}/train-tv", sys.name), None))?;

    let tag = format!("{}:ivector", sys.name);
    let extract = |utts: &[UttFeatures], set_name: &str| -> Result<(EmbeddingSet, String)> {
        let key = stage_key(&utt_keys(vec!["ivector-set-v1", &tag, &tv_key], utts));
        let set = cache
            .get_or_create(
                &key,
                "fsve",
                || {
                    let embs: Vec<Embedding> = utts
                        .par_iter()
                        .map(|u| {
                            let stats = accumulate_bw_stats(tv.ubm(), &u.feats.to_matrix())?;
                            extract_ivector(&tv, &stats)
                        })
                        .collect::<Result<_>>()?;
                    let mut set = EmbeddingSet::new(tag.clone(), sys.wpe, iv.tv_rank)?;
                    for (u, e) in utts.iter().zip(&embs) {
                        set.insert(u.id.clone(), e)?;
                    }
                    Ok(set)
                },
                |p, s| io::write_embeddings(p, s),
                |p| io::read_embeddings(p),
            )
            .map_err(|e| e.in_stage(&format!("{}/ivector-{set_name}", sys.name), None))?;
        Ok((set, key))
    };

    let (train_set, train_key) = extract(train, "train")?;
    let (enroll_set, enroll_key) = extract(enroll, "enroll")?;
    let (test_set, test_key) = extract(test, "test")?;
    let (cohort_set, cohort_key) = match cohort {
        Some(utts) => {
            let (s, k) = extract(utts, "cohort")?;
            (Some(s), Some(k))
        }
        None => (None, None),
    };
    Ok(Embedded {
        train: train_set,
        enroll: enroll_set,
        test: test_set,
        cohort: cohort_set,
        train_key,
        enroll_key,
        test_key,
        cohort_key,
    })
}

#[allow(clippy::too_many_arguments)]
fn neural_embeddings(
    cache: &ArtifactCache,
    config: &ExperimentConfig,
    sys: &SystemConfig,
    neural: &NeuralSettings,
    train: &[UttFeatures],
    enroll: &[UttFeatures],
    test: &[UttFeatures],
    cohort: Option<&[UttFeatures]>,
) -> Result<Embedded> {
    let (labels, n_classes) = speaker_indices(train);
    let cfg_json = settings_json(neural)?;
    let seed = config.seed.to_string();
    let labels_str = labels
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join(",");

    let net_key = stage_key(&utt_keys(
        vec!["embedder-net-v1", &cfg_json, &seed, &labels_str],
        train,
    ));
    let net = cache
        .get_or_create(
            &net_key,
            "fsvm",
            || {
                let net_cfg = NetConfig {
                    input_dim: sys.features.dim(),
                    hidden_dim: neural.hidden_dim,
                    embed_dim: neural.embed_dim,
                    pooling: match neural.pooling {
                        PoolingSetting::Mean => Pooling::Mean,
                        PoolingSetting::MeanStd => Pooling::MeanStd,
                    },
                    n_classes,
                };
                let init = ToyEmbedNet::init(&net_cfg, config.seed)?;
                let examples: Vec<(DMatrix<f64>, usize)> = train
                    .iter()
                    .zip(&labels)
                    .map(|(u, &label)| (u.feats.to_matrix(), label))
                    .collect();
                let train_cfg = TrainConfig {
                    loss: match neural.loss {
                        LossSetting::Softmax => LossKind::Softmax,
                        LossSetting::Asoftmax => LossKind::Asoftmax {
                            margin: neural.margin,
                        },
                    },
                    steps: neural.steps,
                    batch_size: neural.batch_size,
                    learning_rate: neural.learning_rate,
                    seed: config.seed,
                };
                let (trained, _losses) = train_toy(init, &examples, &train_cfg)?;
                Ok(trained)
            },
            |p, m| io::save_embedder(p, m),
            |p| io::load_embedder(p),
        )
        .map_err(|e| e.in_stage(&format!("{}/train-embedder", sys.name), None))?;

    let tag = format!("{}:neural", sys.name);
    let extract = |utts: &[UttFeatures], set_name: &str| -> Result<(EmbeddingSet, String)> {
        let key = stage_key(&utt_keys(vec!["neural-set-v1", &tag, &net_key], utts));
        let set = cache
            .get_or_create(
                &key,
                "fsve",
                || {
                    let embs: Vec<Embedding> = utts
                        .par_iter()
                        .map(|u| extract_embedding(&net, &u.feats.to_matrix()))
                        .collect::<Result<_>>()?;
                    let mut set = EmbeddingSet::new(tag.clone(), sys.wpe, neural.embed_dim)?;
                    for (u, e) in utts.iter().zip(&embs) {
                        set.insert(u.id.clone(), e)?;
                    }
                    Ok(set)
                },
                |p, s| io::write_embeddings(p, s),
                |p| io::read_embeddings(p),
            )
            .map_err(|e| e.in_stage(&format!("{}/embed-{set_name}", sys.name), None))?;
        Ok((set, key))
    };

    let (train_set, train_key) = extract(train, "train")?;
    let (enroll_set, enroll_key) = extract(enroll, "enroll")?;
    let (test_set, test_key) = extract(test, "test")?;
    let (cohort_set, cohort_key) = match cohort {
        Some(utts) => {
            let (s, k) = extract(utts, "cohort")?;
            (Some(s), Some(k))
        }
        None => (None, None),
    };
    Ok(Embedded {
        train: train_set,
        enroll: enroll_set,
        test: test_set,
        cohort: cohort_set,
        train_key,
        enroll_key,
        test_key,
        cohort_key,
    })
}

/// Speaker labels in first-appearance order, plus the speaker count.
fn speaker_indices(utts: &[UttFeatures]) -> (Vec<usize>, usize) {
    let mut order: HashMap<String, usize> = HashMap::new();
    let mut labels = Vec::with_capacity(utts.len());
    for u in utts {
        let next = order.len();
        let idx = *order.entry(u.speaker.clone()).or_insert(next);
        labels.push(idx);
    }
    let n = order.len();
    (labels, n)
}

// ---------------------------------------------------------------------------
// back-end helpers
// ---------------------------------------------------------------------------

enum Scorer {
    Cosine,
    Plda(PldaScorer),
}

impl Scorer {
    fn score(&self, enroll: &[f64], test: &[f64]) -> Result<f64> {
        match self {
            Scorer::Cosine => cosine_score(enroll, test),
            Scorer::Plda(scorer) => scorer.score(enroll, test),
        }
    }
}

/// Embedding set rows stacked into an N×D matrix, insertion order.
fn set_matrix(set: &EmbeddingSet) -> DMatrix<f64> {
    DMatrix::from_row_slice(set.len(), set.dim(), set.matrix_data())
}

/// Whiten + length-normalize every member of a set, keeping ids and order.
fn prep_set(whitener: &Whitener, set: &EmbeddingSet) -> Result<EmbeddingSet> {
    let mut out = EmbeddingSet::new(set.extractor(), set.dereverb(), set.dim())?;
    for (id, values) in set.iter() {
        let y = whitener.whiten_and_lnorm(&DVector::from_column_slice(values))?;
        out.insert(id, &Embedding::new(y.iter().copied().collect())?)?;
    }
    Ok(out)
}

/// Averages each enroll speaker's preprocessed embeddings into one model,
/// keyed by speaker name in first-appearance order.
fn enroll_models(config: &ExperimentConfig, enroll_prep: &EmbeddingSet) -> Result<EmbeddingSet> {
    let dim = enroll_prep.dim();
    let mut order: Vec<String> = Vec::new();
    let mut sums: HashMap<String, (Vec<f64>, usize)> = HashMap::new();
    for entry in &config.enroll {
        let values = enroll_prep.get(&entry.id).ok_or_else(|| {
            FsvError::TrialMismatch(format!("no embedding for enroll utterance '{}'", entry.id))
        })?;
        let slot = sums.entry(entry.speaker.clone()).or_insert_with(|| {
            order.push(entry.speaker.clone());
            (vec![0.0; dim], 0)
        });
        for (acc, v) in slot.0.iter_mut().zip(values) {
            *acc += v;
        }
        slot.1 += 1;
    }
    let mut models = EmbeddingSet::new(enroll_prep.extractor(), enroll_prep.dereverb(), dim)?;
    for speaker in order {
        let (sum, count) = sums.remove(&speaker).expect("accumulated above");
        let mean: Vec<f64> = sum.into_iter().map(|v| v / count as f64).collect();
        models.insert(speaker, &Embedding::new(mean)?)?;
    }
    Ok(models)
}

/// Enrollment models and test embeddings merged into one lookup set for
/// cohort-statistics computation.
fn trial_side_set(models: &EmbeddingSet, tests: &EmbeddingSet) -> Result<EmbeddingSet> {
    let mut sides = EmbeddingSet::new(models.extractor(), models.dereverb(), models.dim())?;
    for (id, values) in models.iter().chain(tests.iter()) {
        sides.insert(id, &Embedding::new(values.to_vec())?)?;
    }
    Ok(sides)
}

fn compute_scores(
    trial_list: &TrialList,
    models: &EmbeddingSet,
    tests: &EmbeddingSet,
    scorer: &Scorer,
) -> Result<Vec<TrialScore>> {
    trial_list
        .trials()
        .iter()
        .map(|t| {
            let e = models.get(&t.enroll).ok_or_else(|| {
                FsvError::TrialMismatch(format!("no enrollment model '{}'", t.enroll))
            })?;
            let x = tests.get(&t.test).ok_or_else(|| {
                FsvError::TrialMismatch(format!("no test embedding '{}'", t.test))
            })?;
            Ok(TrialScore::new(
                t.enroll.clone(),
                t.test.clone(),
                scorer.score(e, x)?,
            ))
        })
        .collect()
}

fn trials_digest(trials: &TrialList) -> String {
    let lines: Vec<String> = trials
        .trials()
        .iter()
        .map(|t| {
            format!(
                "{} {} {}",
                t.enroll,
                t.test,
                t.label.map(|l| l.as_str()).unwrap_or("?")
            )
        })
        .collect();
    let mut parts: Vec<&str> = vec!["trials-v1"];
    parts.extend(lines.iter().map(String::as_str));
    stage_key(&parts)
}

fn settings_json<T: Serialize>(value: &T) -> Result<String> {
    serde_json::to_string(value).map_err(|e| FsvError::Format(format!("settings: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(id: &str, speaker: &str) -> ManifestEntry {
        ManifestEntry::new(id, speaker, format!("/tmp/{id}.wav"))
    }

    #[test]
    fn trials_are_speaker_by_test_utterance_in_stable_order() {
        let mut config = reference_config();
        config.enroll = vec![
            entry("e1", "alice"),
            entry("e2", "bob"),
            entry("e3", "alice"),
        ];
        config.test = vec![entry("t1", "bob"), entry("t2", "carol")];
        let trials = build_trials(&config).unwrap();
        let got: Vec<(String, String, TrialLabel)> = trials
            .trials()
            .iter()
            .map(|t| (t.enroll.clone(), t.test.clone(), t.label.unwrap()))
            .collect();
        assert_eq!(
            got,
            vec![
                ("alice".into(), "t1".into(), TrialLabel::Impostor),
                ("alice".into(), "t2".into(), TrialLabel::Impostor),
                ("bob".into(), "t1".into(), TrialLabel::Target),
                ("bob".into(), "t2".into(), TrialLabel::Impostor),
            ]
        );
        let (n_tgt, n_imp) = class_counts(&trials);
        assert_eq!((n_tgt, n_imp), (1, 3));
    }

    #[test]
    fn utterance_seeds_are_stable_and_distinct() {
        assert_eq!(utterance_seed(7, "utt-1"), utterance_seed(7, "utt-1"));
        assert_ne!(utterance_seed(7, "utt-1"), utterance_seed(7, "utt-2"));
        assert_ne!(utterance_seed(7, "utt-1"), utterance_seed(8, "utt-1"));
    }

    #[test]
    fn table_lists_each_system_and_fusion() {
        let row = SystemReport {
            name: "ivector".into(),
            eer: 0.125,
            min_dcf: 0.61,
            act_dcf: 0.98,
            cllr: 0.7,
            score_file: "ivector.raw.txt".into(),
            calibration: None,
        };
        let mut fusion_row = row.clone();
        fusion_row.name = "fusion".into();
        let report = ExperimentReport {
            n_trials: 16,
            n_target: 4,
            n_impostor: 12,
            dcf: DcfSettings::default(),
            systems: vec![row],
            fusion: Some(fusion_row),
        };
        let table = render_table(&report);
        assert!(table.contains("ivector"));
        assert!(table.contains("fusion"));
        assert!(table.contains("12.50"), "{table}");
        let header = table.lines().next().unwrap();
        for column in ["minC", "actC", "EER[%]", "Cllr"] {
            assert!(header.contains(column), "{header}");
        }
    }

    #[test]
    fn speaker_indices_follow_first_appearance() {
        let utts: Vec<UttFeatures> = ["a", "b", "a", "c"]
            .iter()
            .enumerate()
            .map(|(i, s)| UttFeatures {
                id: format!("u{i}"),
                speaker: s.to_string(),
                key: String::new(),
                feats: crate::dsp::FeatureMatrix::new(
                    vec![vec![0.0; 30]],
                    0.01,
                    crate::dsp::FeatureKind::Mfcc30,
                )
                .unwrap(),
            })
            .collect();
        let (labels, n) = speaker_indices(&utts);
        assert_eq!(labels, vec![0, 1, 0, 2]);
        assert_eq!(n, 3);
    }
}
