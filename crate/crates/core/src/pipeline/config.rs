//! Experiment configuration: one JSON document describing the data, the
//! systems to build, and every stage setting, plus whole-document validation
//! that reports all violations at once.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::augment::RoomSpec;
use crate::dsp::FeatureKind;
use crate::error::{FsvError, Result};
use crate::eval::DcfParams;
use crate::score_norm::DEFAULT_TOP_X;

/// One utterance in a dataset manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    /// Unique utterance id; becomes the key of every derived artifact.
    pub id: String,
    /// Speaker label. On the enroll manifest this also names the speaker
    /// model, so it appears as the enroll side of every trial.
    pub speaker: String,
    pub path: PathBuf,
}

impl ManifestEntry {
    pub fn new(
        id: impl Into<String>,
        speaker: impl Into<String>,
        path: impl Into<PathBuf>,
    ) -> Self {
        Self {
            id: id.into(),
            speaker: speaker.into(),
            path: path.into(),
        }
    }
}

/// Optional data augmentation applied to every manifest utterance before
/// feature extraction: image-source reverberation and/or additive noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentSettings {
    /// Room for ISM reverberation; omit for no reverb.
    #[serde(default)]
    pub room: Option<RoomSpec>,
    /// Per-utterance jitter of the source position, in meters, drawn
    /// deterministically from the experiment seed and the utterance id so
    /// each utterance sees its own channel.
    #[serde(default)]
    pub source_jitter: f64,
    /// Mix colored noise at this SNR in dB; omit for no noise.
    #[serde(default)]
    pub snr_db: Option<f64>,
}

/// Loss selector for the toy neural embedder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossSetting {
    Softmax,
    Asoftmax,
}

/// Pooling selector for the toy neural embedder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolingSetting {
    Mean,
    MeanStd,
}

/// i-vector front-end stage settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IvectorSettings {
    #[serde(default = "default_ubm_components")]
    pub ubm_components: usize,
    #[serde(default = "default_ubm_iterations")]
    pub ubm_iterations: usize,
    #[serde(default = "default_tv_rank")]
    pub tv_rank: usize,
    #[serde(default = "default_tv_iterations")]
    pub tv_iterations: usize,
}

impl Default for IvectorSettings {
    fn default() -> Self {
        Self {
            ubm_components: default_ubm_components(),
            ubm_iterations: default_ubm_iterations(),
            tv_rank: default_tv_rank(),
            tv_iterations: default_tv_iterations(),
        }
    }
}

fn default_ubm_components() -> usize {
    8
}
fn default_ubm_iterations() -> usize {
    10
}
fn default_tv_rank() -> usize {
    16
}
fn default_tv_iterations() -> usize {
    5
}

/// Toy neural embedder stage settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NeuralSettings {
    pub loss: LossSetting,
    /// Angular margin, used only under the asoftmax loss.
    #[serde(default = "default_margin")]
    pub margin: u32,
    #[serde(default = "default_hidden_dim")]
    pub hidden_dim: usize,
    #[serde(default = "default_embed_dim")]
    pub embed_dim: usize,
    #[serde(default = "default_pooling")]
    pub pooling: PoolingSetting,
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
}

impl NeuralSettings {
    pub fn for_loss(loss: LossSetting) -> Self {
        Self {
            loss,
            margin: default_margin(),
            hidden_dim: default_hidden_dim(),
            embed_dim: default_embed_dim(),
            pooling: default_pooling(),
            steps: default_steps(),
            batch_size: default_batch_size(),
            learning_rate: default_learning_rate(),
        }
    }
}

fn default_margin() -> u32 {
    4
}
fn default_hidden_dim() -> usize {
    64
}
fn default_embed_dim() -> usize {
    16
}
fn default_pooling() -> PoolingSetting {
    PoolingSetting::MeanStd
}
fn default_steps() -> usize {
    300
}
fn default_batch_size() -> usize {
    16
}
fn default_learning_rate() -> f64 {
    0.1
}

/// Which embedder a system uses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum EmbedderSettings {
    Ivector(IvectorSettings),
    Neural(NeuralSettings),
}

/// Trial scoring rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoringKind {
    Cosine,
    Plda,
}

/// Which embedding population supplies the whitening statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WhiteningSource {
    Train,
    Cohort,
}

/// Back-end stage settings: optional CORAL adaptation of the training
/// embeddings toward the cohort domain, whitening + length-norm, and the
/// scoring rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendSettings {
    #[serde(default = "default_scoring")]
    pub scoring: ScoringKind,
    #[serde(default)]
    pub coral: bool,
    #[serde(default = "default_whitening")]
    pub whitening: WhiteningSource,
    /// Speaker-subspace rank for PLDA; omit for min(dim, speakers - 1).
    #[serde(default)]
    pub plda_rank: Option<usize>,
    #[serde(default = "default_plda_iterations")]
    pub plda_iterations: usize,
}

impl Default for BackendSettings {
    fn default() -> Self {
        Self {
            scoring: default_scoring(),
            coral: false,
            whitening: default_whitening(),
            plda_rank: None,
            plda_iterations: default_plda_iterations(),
        }
    }
}

fn default_scoring() -> ScoringKind {
    ScoringKind::Cosine
}
fn default_whitening() -> WhiteningSource {
    WhiteningSource::Train
}
fn default_plda_iterations() -> usize {
    10
}

/// One complete verification system; every system in an experiment is built
/// and evaluated on the same trial list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    /// Unique name, used in report rows and artifact file names.
    pub name: String,
    pub features: FeatureKind,
    /// Explicit 16 kHz to 8 kHz downsampling stage before extraction.
    /// Required by mfbank8k, forbidden for the 16 kHz feature kinds.
    #[serde(default)]
    pub resample: bool,
    /// Single-channel WPE dereverberation before feature extraction.
    #[serde(default)]
    pub wpe: bool,
    pub embedder: EmbedderSettings,
    #[serde(default)]
    pub backend: BackendSettings,
}

/// Adaptive symmetric score normalization settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AsnormSettings {
    #[serde(default = "default_top_x")]
    pub top_x: usize,
}

fn default_top_x() -> usize {
    DEFAULT_TOP_X
}

/// Score calibration settings. When present and the experiment has two or
/// more systems, their calibrated scores are also fused.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationSettings {
    /// Effective target prior the calibration is trained for.
    #[serde(default = "default_prior")]
    pub prior: f64,
}

fn default_prior() -> f64 {
    0.01
}

/// Detection-cost parameters used for minC/actC in the report.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DcfSettings {
    #[serde(default = "default_p_target")]
    pub p_target: f64,
    #[serde(default = "default_cost")]
    pub c_miss: f64,
    #[serde(default = "default_cost")]
    pub c_fa: f64,
}

impl Default for DcfSettings {
    fn default() -> Self {
        Self {
            p_target: default_p_target(),
            c_miss: default_cost(),
            c_fa: default_cost(),
        }
    }
}

impl DcfSettings {
    pub fn to_params(self) -> Result<DcfParams> {
        DcfParams::new(self.p_target, self.c_miss, self.c_fa)
    }
}

fn default_p_target() -> f64 {
    0.01
}
fn default_cost() -> f64 {
    1.0
}

/// The whole experiment: data manifests, per-stage settings, seed, output.
/// Trials are the full cross of enroll speakers against test utterances,
/// labeled by speaker identity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub train: Vec<ManifestEntry>,
    pub enroll: Vec<ManifestEntry>,
    pub test: Vec<ManifestEntry>,
    /// Cohort utterances for AS-Norm, CORAL, or cohort-sourced whitening.
    #[serde(default)]
    pub cohort: Vec<ManifestEntry>,
    #[serde(default)]
    pub augment: Option<AugmentSettings>,
    pub systems: Vec<SystemConfig>,
    #[serde(default)]
    pub asnorm: Option<AsnormSettings>,
    #[serde(default)]
    pub calibration: Option<CalibrationSettings>,
    #[serde(default)]
    pub dcf: DcfSettings,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text)
            .map_err(|e| FsvError::Format(format!("experiment config: {e}")))
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| FsvError::Format(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }
}

/// A complete example configuration with every default written out, suitable
/// as a starting point after replacing the manifest paths.
pub fn reference_config() -> ExperimentConfig {
    let systems = vec![
        SystemConfig {
            name: "ivector-cosine".into(),
            features: FeatureKind::Mfcc20,
            resample: false,
            wpe: true,
            embedder: EmbedderSettings::Ivector(IvectorSettings::default()),
            backend: BackendSettings::default(),
        },
        SystemConfig {
            name: "neural-asoftmax".into(),
            features: FeatureKind::Mfcc20,
            resample: false,
            wpe: true,
            embedder: EmbedderSettings::Neural(NeuralSettings::for_loss(LossSetting::Asoftmax)),
            backend: BackendSettings {
                scoring: ScoringKind::Plda,
                ..BackendSettings::default()
            },
        },
    ];
    // enough training utterances that the default embedding dims fit sanely
    let train = (0..24)
        .map(|i| {
            let speaker = ["spk-a", "spk-b", "spk-c"][i / 8];
            ManifestEntry::new(
                format!("train-{:04}", i + 1),
                speaker,
                format!("data/train/{:04}.wav", i + 1),
            )
        })
        .collect();
    ExperimentConfig {
        seed: 7,
        output_dir: "fsv-out".into(),
        train,
        enroll: vec![
            ManifestEntry::new("enroll-0001", "spk-c", "data/enroll/0001.wav"),
            ManifestEntry::new("enroll-0002", "spk-d", "data/enroll/0002.wav"),
        ],
        test: vec![
            ManifestEntry::new("test-0001", "spk-c", "data/test/0001.wav"),
            ManifestEntry::new("test-0002", "spk-d", "data/test/0002.wav"),
        ],
        cohort: vec![
            ManifestEntry::new("cohort-0001", "spk-e", "data/cohort/0001.wav"),
            ManifestEntry::new("cohort-0002", "spk-f", "data/cohort/0002.wav"),
        ],
        augment: Some(AugmentSettings {
            room: Some(RoomSpec {
                dimensions: [6.0, 5.0, 3.0],
                absorption: 0.38,
                source: [2.0, 2.5, 1.5],
                mic: [4.5, 2.0, 1.3],
                max_order: 3,
                sample_rate: 16000,
                c: 343.0,
            }),
            source_jitter: 0.2,
            snr_db: Some(10.0),
        }),
        systems,
        asnorm: Some(AsnormSettings {
            top_x: DEFAULT_TOP_X,
        }),
        calibration: Some(CalibrationSettings { prior: 0.01 }),
        dcf: DcfSettings::default(),
    }
}

/// Checks the whole document and returns every violation found, in a stable
/// order. An empty list means the config is runnable.
pub fn validate_config(config: &ExperimentConfig) -> Vec<String> {
    let mut v = Vec::new();

    check_manifest(&mut v, "train", &config.train);
    check_manifest(&mut v, "enroll", &config.enroll);
    check_manifest(&mut v, "test", &config.test);
    if !config.cohort.is_empty() {
        check_manifest(&mut v, "cohort", &config.cohort);
    }
    check_cross_manifest(&mut v, config);

    if let Some(aug) = &config.augment {
        if let Some(room) = &aug.room {
            if let Err(e) = room.validate() {
                v.push(format!("augment room: {e}"));
            }
        }
        if !(aug.source_jitter >= 0.0 && aug.source_jitter.is_finite()) {
            v.push("augment source_jitter must be finite and >= 0".into());
        }
        if aug.room.is_none() && aug.source_jitter > 0.0 {
            v.push("augment source_jitter set but no room configured".into());
        }
        if let Some(snr) = aug.snr_db {
            if !snr.is_finite() {
                v.push("augment snr_db must be finite".into());
            }
        }
        if aug.room.is_none() && aug.snr_db.is_none() {
            v.push("augment section present but configures neither room nor noise".into());
        }
    }

    if config.systems.is_empty() {
        v.push("no systems configured".into());
    }
    let mut names = HashMap::new();
    for (i, sys) in config.systems.iter().enumerate() {
        if let Some(prev) = names.insert(sys.name.clone(), i) {
            v.push(format!(
                "duplicate system name '{}' (positions {prev} and {i})",
                sys.name
            ));
        }
        check_system(&mut v, config, sys);
    }

    if let Some(asnorm) = &config.asnorm {
        if asnorm.top_x < 2 {
            v.push("asnorm top_x must be at least 2".into());
        }
        if config.cohort.len() < 2 {
            v.push("asnorm requires a cohort manifest with at least 2 utterances".into());
        }
    }
    if let Some(cal) = &config.calibration {
        if !(cal.prior > 0.0 && cal.prior < 1.0) {
            v.push(format!(
                "calibration prior must lie in (0,1), got {}",
                cal.prior
            ));
        }
    }
    if let Err(e) = config.dcf.to_params() {
        v.push(format!("dcf: {e}"));
    }

    v
}

fn valid_id(id: &str) -> bool {
    !id.is_empty() && !id.chars().any(char::is_whitespace)
}

fn check_manifest(v: &mut Vec<String>, name: &str, entries: &[ManifestEntry]) {
    if entries.is_empty() {
        v.push(format!("{name} manifest is empty"));
        return;
    }
    let mut seen = HashMap::new();
    for (i, e) in entries.iter().enumerate() {
        if !valid_id(&e.id) {
            v.push(format!(
                "{name} manifest entry {i}: id {:?} must be non-empty without whitespace",
                e.id
            ));
        }
        if !valid_id(&e.speaker) {
            v.push(format!(
                "{name} manifest entry {i}: speaker {:?} must be non-empty without whitespace",
                e.speaker
            ));
        }
        if let Some(prev) = seen.insert(e.id.clone(), i) {
            v.push(format!(
                "{name} manifest: duplicate utterance id '{}' (entries {prev} and {i})",
                e.id
            ));
        }
        if !e.path.is_file() {
            v.push(format!(
                "{name} manifest: wav for '{}' not found at {}",
                e.id,
                e.path.display()
            ));
        }
    }
}

fn check_cross_manifest(v: &mut Vec<String>, config: &ExperimentConfig) {
    // The same utterance id may appear in several manifests (cohorts are
    // often training utterances) but must mean the same recording.
    let mut by_id: HashMap<&str, (&str, &Path, &str)> = HashMap::new();
    for (set, entries) in [
        ("train", &config.train),
        ("enroll", &config.enroll),
        ("test", &config.test),
        ("cohort", &config.cohort),
    ] {
        for e in entries {
            match by_id.get(e.id.as_str()) {
                None => {
                    by_id.insert(&e.id, (&e.speaker, &e.path, set));
                }
                Some((spk, path, other)) if *spk != e.speaker || *path != e.path => {
                    v.push(format!(
                        "utterance id '{}' appears in {other} and {set} manifests with \
                         different speaker or path",
                        e.id
                    ));
                }
                Some(_) => {}
            }
        }
    }

    // Enroll speaker names become trial-side ids, so they must not collide
    // with test or cohort utterance ids.
    let enroll_speakers: std::collections::HashSet<&str> =
        config.enroll.iter().map(|e| e.speaker.as_str()).collect();
    for (set, entries) in [("test", &config.test), ("cohort", &config.cohort)] {
        for e in entries {
            if enroll_speakers.contains(e.id.as_str()) {
                v.push(format!(
                    "{set} utterance id '{}' collides with an enroll speaker name",
                    e.id
                ));
            }
        }
    }

    // Trials need both classes to be evaluable.
    let test_speakers: std::collections::HashSet<&str> =
        config.test.iter().map(|e| e.speaker.as_str()).collect();
    if !config.enroll.is_empty() && !config.test.is_empty() {
        let targets = enroll_speakers.iter().any(|s| test_speakers.contains(s));
        if !targets {
            v.push("trial list would contain no target trials".into());
        }
        let impostors = config
            .enroll
            .iter()
            .any(|e| config.test.iter().any(|t| t.speaker != e.speaker));
        if !impostors {
            v.push("trial list would contain no impostor trials".into());
        }
    }
}

fn n_speakers(entries: &[ManifestEntry]) -> usize {
    entries
        .iter()
        .map(|e| e.speaker.as_str())
        .collect::<std::collections::HashSet<_>>()
        .len()
}

fn has_multi_session_speaker(entries: &[ManifestEntry]) -> bool {
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for e in entries {
        *counts.entry(e.speaker.as_str()).or_default() += 1;
    }
    counts.values().any(|&c| c >= 2)
}

fn check_system(v: &mut Vec<String>, config: &ExperimentConfig, sys: &SystemConfig) {
    let tag = format!("system '{}'", sys.name);
    if sys.name.is_empty()
        || !sys
            .name
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
    {
        v.push(format!(
            "{tag}: name must be non-empty and use only [A-Za-z0-9_-]"
        ));
    }
    if sys.name == "fusion" {
        v.push(format!(
            "{tag}: the name 'fusion' is reserved for the fused system"
        ));
    }

    match (sys.features.sample_rate(), sys.resample) {
        (8000, false) => v.push(format!(
            "{tag}: {} requires the resample stage (set resample: true)",
            sys.features.name()
        )),
        (16000, true) => v.push(format!(
            "{tag}: {} runs at 16 kHz and cannot follow the resample stage",
            sys.features.name()
        )),
        _ => {}
    }

    let embed_dim = match &sys.embedder {
        EmbedderSettings::Ivector(iv) => {
            if iv.ubm_components == 0 || iv.ubm_iterations == 0 || iv.tv_iterations == 0 {
                v.push(format!(
                    "{tag}: ubm_components, ubm_iterations, tv_iterations must all be >= 1"
                ));
            }
            let supervector = iv.ubm_components * sys.features.dim();
            if iv.tv_rank == 0 || iv.tv_rank >= supervector {
                v.push(format!(
                    "{tag}: tv_rank must lie in [1, {}) for {} with {} components",
                    supervector,
                    sys.features.name(),
                    iv.ubm_components
                ));
            }
            iv.tv_rank
        }
        EmbedderSettings::Neural(n) => {
            if n.steps == 0 || n.batch_size == 0 || n.hidden_dim == 0 || n.embed_dim == 0 {
                v.push(format!(
                    "{tag}: steps, batch_size, hidden_dim, embed_dim must all be >= 1"
                ));
            }
            if !(n.learning_rate > 0.0 && n.learning_rate.is_finite()) {
                v.push(format!("{tag}: learning_rate must be finite and > 0"));
            }
            if n.loss == LossSetting::Asoftmax && n.margin == 0 {
                v.push(format!("{tag}: asoftmax margin must be >= 1"));
            }
            if n_speakers(&config.train) < 2 {
                v.push(format!(
                    "{tag}: neural embedder needs at least 2 training speakers"
                ));
            }
            n.embed_dim
        }
    };

    // whitening (and any later fit) degenerates when the fitting population
    // is not clearly larger than the embedding dimension
    if !config.train.is_empty() && config.train.len() <= embed_dim {
        v.push(format!(
            "{tag}: back-end fitting needs more train utterances than embedding \
             dims ({} <= {embed_dim})",
            config.train.len()
        ));
    }
    if sys.backend.whitening == WhiteningSource::Cohort
        && config.cohort.len() >= 2
        && config.cohort.len() <= embed_dim
    {
        v.push(format!(
            "{tag}: cohort-sourced whitening needs more cohort utterances than \
             embedding dims ({} <= {embed_dim})",
            config.cohort.len()
        ));
    }

    if sys.backend.scoring == ScoringKind::Plda {
        if n_speakers(&config.train) < 2 {
            v.push(format!("{tag}: plda needs at least 2 training speakers"));
        }
        if !has_multi_session_speaker(&config.train) {
            v.push(format!(
                "{tag}: plda needs at least one training speaker with 2+ utterances"
            ));
        }
        if sys.backend.plda_iterations == 0 {
            v.push(format!("{tag}: plda_iterations must be >= 1"));
        }
        if let Some(rank) = sys.backend.plda_rank {
            if rank == 0 || rank > embed_dim {
                v.push(format!(
                    "{tag}: plda_rank must lie in [1, {embed_dim}] for this embedder"
                ));
            }
        }
    }
    if sys.backend.coral && config.cohort.len() < 2 {
        v.push(format!(
            "{tag}: coral adaptation requires a cohort manifest with at least 2 utterances"
        ));
    }
    if sys.backend.whitening == WhiteningSource::Cohort && config.cohort.len() < 2 {
        v.push(format!(
            "{tag}: cohort-sourced whitening requires a cohort manifest with at least 2 utterances"
        ));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn touch(dir: &Path, name: &str) -> PathBuf {
        let path = dir.join(name);
        std::fs::write(&path, b"stub").unwrap();
        path
    }

    /// A config whose wav paths exist (content is never read by validation).
    fn valid_toy_config(dir: &Path) -> ExperimentConfig {
        let mut config = reference_config();
        config.output_dir = dir.join("out");
        for (set, prefix) in [
            (&mut config.train, "train"),
            (&mut config.enroll, "enroll"),
            (&mut config.test, "test"),
            (&mut config.cohort, "cohort"),
        ] {
            for (i, entry) in set.iter_mut().enumerate() {
                entry.path = touch(dir, &format!("{prefix}-{i}.wav"));
            }
        }
        config
    }

    #[test]
    fn reference_config_with_real_paths_has_zero_violations() {
        let dir = tempfile::tempdir().unwrap();
        let config = valid_toy_config(dir.path());
        let violations = validate_config(&config);
        assert!(violations.is_empty(), "{violations:?}");
    }

    #[test]
    fn mfbank8k_without_resample_is_a_named_violation() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = valid_toy_config(dir.path());
        config.systems[0].features = FeatureKind::Mfbank8k;
        config.systems[0].resample = false;
        let violations = validate_config(&config);
        assert_eq!(
            violations
                .iter()
                .filter(|m| m.contains("resample"))
                .count(),
            1,
            "{violations:?}"
        );
        // and the fix removes it
        config.systems[0].resample = true;
        assert!(validate_config(&config).is_empty());
    }

    #[test]
    fn empty_manifest_and_missing_wav_are_reported_together() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = valid_toy_config(dir.path());
        config.train.clear();
        config.test[0].path = dir.path().join("nope.wav");
        let violations = validate_config(&config);
        assert!(violations.iter().any(|m| m.contains("train manifest is empty")));
        assert!(violations.iter().any(|m| m.contains("nope.wav")));
        assert!(violations.len() >= 2);
    }

    #[test]
    fn catches_id_collisions_and_label_problems() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = valid_toy_config(dir.path());
        // duplicate id in one manifest
        config.train[1].id = config.train[0].id.clone();
        // enroll speaker name reused as a test utterance id
        config.test[0].id = config.enroll[0].speaker.clone();
        // all-impostor trial list
        for e in &mut config.test {
            e.speaker = "someone-else".into();
        }
        let violations = validate_config(&config);
        assert!(violations.iter().any(|m| m.contains("duplicate utterance id")));
        assert!(violations
            .iter()
            .any(|m| m.contains("collides with an enroll speaker name")));
        assert!(violations.iter().any(|m| m.contains("no target trials")));
    }

    #[test]
    fn bad_stage_parameters_are_reported() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = valid_toy_config(dir.path());
        if let EmbedderSettings::Ivector(iv) = &mut config.systems[0].embedder {
            iv.tv_rank = 100_000;
        }
        if let EmbedderSettings::Neural(n) = &mut config.systems[1].embedder {
            n.learning_rate = f64::NAN;
        }
        config.asnorm = Some(AsnormSettings { top_x: 1 });
        config.calibration = Some(CalibrationSettings { prior: 1.5 });
        config.dcf.p_target = 0.0;
        let violations = validate_config(&config);
        for needle in ["tv_rank", "learning_rate", "top_x", "prior", "p_target"] {
            assert!(
                violations.iter().any(|m| m.contains(needle)),
                "missing {needle} in {violations:?}"
            );
        }
    }

    #[test]
    fn json_roundtrip_preserves_config() {
        let config = reference_config();
        let text = config.to_json_pretty();
        let back = ExperimentConfig::from_json(&text).unwrap();
        assert_eq!(back, config);
        // unknown keys are rejected, catching typos
        let bad = text.replace("\"seed\"", "\"sede\"");
        assert!(ExperimentConfig::from_json(&bad).is_err());
    }
}
