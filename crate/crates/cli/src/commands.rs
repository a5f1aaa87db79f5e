use std::collections::HashMap;
use std::path::Path;

use anyhow::{bail, Context, Result};
use fsv_core::dereverb::{wpe_dereverberate, WpeConfig};
use fsv_core::dsp::{FeatureKind, FeatureMatrix};
use fsv_core::embedder::{
    extract_embedding as net_embedding, train_toy, LossKind, NetConfig, Pooling, ToyEmbedNet,
    TrainConfig,
};
use fsv_core::embedding::EmbeddingSet;
use fsv_core::eval::{act_dcf, det_points, det_svg, eer, min_dcf, DcfParams, DetCurve};
use fsv_core::fusion::{calibrate_fit, cllr, CalibrationParams};
use fsv_core::gmm::{
    accumulate_bw_stats, extract_ivector as ivector_from_stats, train_tmatrix_em, ubm_train_em,
};
use fsv_core::io::{
    load_embedder, load_ivector_extractor, load_ubm, read_features, read_scores, read_trial_key,
    read_wav, save_embedder, save_ivector_extractor, save_ubm, write_embeddings, write_features,
    write_scores, write_wav, WavFormat,
};
use fsv_core::pipeline::{reference_config, render_table, run_pipeline, ExperimentConfig};
use fsv_core::score_norm::{normalize_with_stats, CohortScores};
use fsv_core::trials::{LabeledScoreSet, TrialScore};

use crate::{
    AsnormArgs, AugmentArgs, CalibrateArgs, EvalArgs, ExtractArgs, ExtractEmbeddingArgs,
    ExtractIvectorArgs, FuseArgs, InitConfigArgs, RunArgs, SimulateRirArgs, TrainEmbedderArgs,
    TrainTvArgs, TrainUbmArgs, WpeArgs,
};

pub(crate) fn parse_kind(s: &str) -> Result<FeatureKind, String> {
    match s {
        "mfcc20" => Ok(FeatureKind::Mfcc20),
        "mfcc30" => Ok(FeatureKind::Mfcc30),
        "pncc" => Ok(FeatureKind::Pncc),
        "mfbank8k" => Ok(FeatureKind::Mfbank8k),
        "mfbank16k" => Ok(FeatureKind::Mfbank16k),
        "gfbank" => Ok(FeatureKind::Gfbank),
        other => Err(format!(
            "unknown feature kind '{other}' (want mfcc20, mfcc30, pncc, mfbank8k, \
             mfbank16k or gfbank)"
        )),
    }
}

#[derive(Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub(crate) enum LossArg {
    Softmax,
    Asoftmax,
}

#[derive(Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub(crate) enum PoolingArg {
    #[value(name = "mean")]
    Mean,
    #[value(name = "meanstd")]
    MeanStd,
}

pub(crate) fn extract(args: ExtractArgs) -> Result<()> {
    let audio = read_wav(&args.input)?;
    let feats = fsv_core::features::extract_features(&audio, args.kind)
        .with_context(|| format!("extracting {} from {}", args.kind.name(), args.input.display()))?;
    write_features(&args.out, &feats)?;
    println!(
        "{}: {} frames x {} dims -> {}",
        args.kind.name(),
        feats.n_frames(),
        args.kind.dim(),
        args.out.display()
    );
    Ok(())
}

pub(crate) fn wpe(args: WpeArgs) -> Result<()> {
    let audio = read_wav(&args.input)?;
    let mut config = WpeConfig::default_at(audio.sample_rate());
    if let Some(taps) = args.taps {
        config.taps = taps;
    }
    if let Some(delay) = args.delay {
        config.delay = delay;
    }
    if let Some(iters) = args.iters {
        config.iterations = iters;
    }
    let clean = wpe_dereverberate(&audio, &config)
        .with_context(|| format!("dereverberating {}", args.input.display()))?;
    write_wav(&args.out, &clean, WavFormat::Float32)?;
    println!(
        "wpe: taps {} delay {} iters {} -> {}",
        config.taps,
        config.delay,
        config.iterations,
        args.out.display()
    );
    Ok(())
}

fn read_feature_matrices(paths: &[std::path::PathBuf]) -> Result<Vec<FeatureMatrix>> {
    paths.iter().map(|p| Ok(read_features(p)?)).collect()
}

pub(crate) fn train_ubm(args: TrainUbmArgs) -> Result<()> {
    let feats = read_feature_matrices(&args.features)?;
    let mats: Vec<_> = feats.iter().map(FeatureMatrix::to_matrix).collect();
    let ubm = ubm_train_em(&mats, args.components, args.iters)
        .context("training the GMM-UBM")?;
    save_ubm(&args.out, &ubm)?;
    println!(
        "ubm: {} components x {} dims on {} utterances -> {}",
        ubm.n_components(),
        ubm.dim(),
        mats.len(),
        args.out.display()
    );
    Ok(())
}

pub(crate) fn train_tv(args: TrainTvArgs) -> Result<()> {
    let ubm = load_ubm(&args.ubm)?;
    let feats = read_feature_matrices(&args.features)?;
    let stats = feats
        .iter()
        .map(|f| accumulate_bw_stats(&ubm, &f.to_matrix()))
        .collect::<fsv_core::Result<Vec<_>>>()
        .context("accumulating Baum-Welch statistics")?;
    let tv = train_tmatrix_em(&ubm, &stats, args.rank, args.iters)
        .context("training the total-variability matrix")?;
    save_ivector_extractor(&args.out, &tv)?;
    println!(
        "tv: rank {} on {} utterances -> {}",
        tv.rank(),
        stats.len(),
        args.out.display()
    );
    Ok(())
}

/// File stem as the utterance id, rejecting duplicates across the list.
fn stem_ids(paths: &[std::path::PathBuf]) -> Result<Vec<String>> {
    let mut ids = Vec::with_capacity(paths.len());
    let mut seen = HashMap::new();
    for p in paths {
        let stem = p
            .file_stem()
            .and_then(|s| s.to_str())
            .with_context(|| format!("{}: no usable file stem", p.display()))?
            .to_string();
        if let Some(prev) = seen.insert(stem.clone(), p) {
            bail!(
                "duplicate utterance id '{stem}' from {} and {}",
                prev.display(),
                p.display()
            );
        }
        ids.push(stem);
    }
    Ok(ids)
}

pub(crate) fn extract_ivector(args: ExtractIvectorArgs) -> Result<()> {
    let tv = load_ivector_extractor(&args.model)?;
    let ids = stem_ids(&args.features)?;
    let mut set = EmbeddingSet::new(args.tag.clone(), args.dereverbed, tv.rank())?;
    for (path, id) in args.features.iter().zip(&ids) {
        let feats = read_features(path)?;
        let stats = accumulate_bw_stats(tv.ubm(), &feats.to_matrix())
            .with_context(|| format!("utterance {id}"))?;
        let ivec = ivector_from_stats(&tv, &stats).with_context(|| format!("utterance {id}"))?;
        set.insert(id.clone(), &ivec)?;
    }
    write_embeddings(&args.out, &set)?;
    println!(
        "i-vectors: {} x {} dims -> {}",
        set.len(),
        set.dim(),
        args.out.display()
    );
    Ok(())
}

/// Parses a training manifest: one `speaker path` pair per non-comment line.
fn parse_manifest(path: &Path) -> Result<Vec<(String, std::path::PathBuf)>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading manifest {}", path.display()))?;
    let base = path.parent().unwrap_or(Path::new(""));
    let mut entries = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((speaker, file)) = line.split_once(char::is_whitespace) else {
            bail!(
                "{}:{}: expected `speaker path`, got {line:?}",
                path.display(),
                idx + 1
            );
        };
        let file = file.trim();
        let resolved = if Path::new(file).is_absolute() {
            file.into()
        } else {
            base.join(file)
        };
        entries.push((speaker.to_string(), resolved));
    }
    if entries.is_empty() {
        bail!("{}: manifest has no entries", path.display());
    }
    Ok(entries)
}

pub(crate) fn train_embedder(args: TrainEmbedderArgs) -> Result<()> {
    let manifest = parse_manifest(&args.manifest)?;
    let mut label_of = HashMap::new();
    let mut examples = Vec::with_capacity(manifest.len());
    let mut input_dim = None;
    for (speaker, path) in &manifest {
        let feats = read_features(path)?;
        let mat = feats.to_matrix();
        match input_dim {
            None => input_dim = Some(mat.ncols()),
            Some(d) if d != mat.ncols() => bail!(
                "{}: feature dim {} differs from {} seen earlier",
                path.display(),
                mat.ncols(),
                d
            ),
            Some(_) => {}
        }
        let next = label_of.len();
        let label = *label_of.entry(speaker.clone()).or_insert(next);
        examples.push((mat, label));
    }
    let n_classes = label_of.len();
    if n_classes < 2 {
        bail!("manifest lists {n_classes} speaker(s); need at least 2 to train");
    }
    let net_config = NetConfig {
        input_dim: input_dim.expect("nonempty manifest"),
        hidden_dim: args.hidden,
        embed_dim: args.embed,
        pooling: match args.pooling {
            PoolingArg::Mean => Pooling::Mean,
            PoolingArg::MeanStd => Pooling::MeanStd,
        },
        n_classes,
    };
    let train_config = TrainConfig {
        loss: match args.loss {
            LossArg::Softmax => LossKind::Softmax,
            LossArg::Asoftmax => LossKind::Asoftmax {
                margin: args.margin,
            },
        },
        steps: args.steps,
        batch_size: args.batch,
        learning_rate: args.lr,
        seed: args.seed,
    };
    let net = ToyEmbedNet::init(&net_config, args.seed)?;
    let (net, losses) = train_toy(net, &examples, &train_config).context("training embedder")?;
    save_embedder(&args.out, &net)?;
    println!(
        "embedder: {} classes, loss {:.4} -> {:.4} over {} steps -> {}",
        n_classes,
        losses.first().copied().unwrap_or(f64::NAN),
        losses.last().copied().unwrap_or(f64::NAN),
        losses.len(),
        args.out.display()
    );
    Ok(())
}

pub(crate) fn extract_embedding(args: ExtractEmbeddingArgs) -> Result<()> {
    let net = load_embedder(&args.model)?;
    let ids = stem_ids(&args.features)?;
    let mut set = EmbeddingSet::new(args.tag.clone(), args.dereverbed, net.embed_dim())?;
    for (path, id) in args.features.iter().zip(&ids) {
        let feats = read_features(path)?;
        let emb = net_embedding(&net, &feats.to_matrix())
            .with_context(|| format!("utterance {id}"))?;
        set.insert(id.clone(), &emb)?;
    }
    write_embeddings(&args.out, &set)?;
    println!(
        "embeddings: {} x {} dims -> {}",
        set.len(),
        set.dim(),
        args.out.display()
    );
    Ok(())
}

/// Parses a cohort score table: each line is an utterance id followed by its
/// raw scores against every cohort member.
fn parse_cohort_table(path: &Path) -> Result<Vec<(String, Vec<f64>)>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading cohort scores {}", path.display()))?;
    let mut rows = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut fields = line.split_whitespace();
        let id = fields.next().expect("nonempty line").to_string();
        let scores = fields
            .map(|f| {
                f.parse::<f64>().map_err(|_| {
                    anyhow::anyhow!(
                        "{}:{}: bad cohort score {f:?} for {id}",
                        path.display(),
                        idx + 1
                    )
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        if scores.len() < 2 {
            bail!(
                "{}:{}: utterance {id} has {} cohort scores; need at least 2",
                path.display(),
                idx + 1,
                scores.len()
            );
        }
        rows.push((id, scores));
    }
    Ok(rows)
}

pub(crate) fn asnorm(args: AsnormArgs) -> Result<()> {
    let scores = read_scores(&args.scores)?;
    if args.cohort_scores.len() != 2 {
        bail!("--cohort-scores wants exactly two files: enroll-side then test-side");
    }
    let (enroll_tab, test_tab) = (&args.cohort_scores[0], &args.cohort_scores[1]);
    let mut stats: HashMap<String, CohortScores> = HashMap::new();
    for (side, table) in [("enroll", enroll_tab), ("test", test_tab)] {
        for (id, raw) in parse_cohort_table(table)? {
            let entry = CohortScores::from_scores(&raw, args.top_x)
                .with_context(|| format!("{side}-side cohort scores for {id}"))?;
            if stats.insert(id.clone(), entry).is_some() {
                bail!("utterance id '{id}' appears twice in the cohort score tables");
            }
        }
    }
    let normalized = normalize_with_stats(&scores, &stats)?;
    write_scores(&args.out, &normalized)?;
    println!(
        "asnorm: {} trials, top-{} -> {}",
        normalized.len(),
        args.top_x,
        args.out.display()
    );
    Ok(())
}

fn scores_stem(path: &Path) -> String {
    path.file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("scores")
        .to_string()
}

pub(crate) fn calibrate(args: CalibrateArgs) -> Result<()> {
    let scores = read_scores(&args.scores)?;
    let key = read_trial_key(&args.key)?;
    let labeled = LabeledScoreSet::join(&scores, &key)?;
    let params = calibrate_fit(&labeled, args.prior).context("fitting calibration")?;
    let calibrated: Vec<TrialScore> = scores
        .iter()
        .map(|t| TrialScore::new(t.enroll.clone(), t.test.clone(), params.apply(t.score)))
        .collect();
    write_scores(&args.out, &calibrated)?;
    if let Some(params_path) = &args.params_out {
        let name = args.name.clone().unwrap_or_else(|| scores_stem(&args.scores));
        let doc: HashMap<String, CalibrationParams> = [(name, params)].into();
        std::fs::write(params_path, serde_json::to_string_pretty(&doc)? + "\n")?;
    }
    println!(
        "calibrate: a {:.6} b {:.6} at prior {} -> {}",
        params.a,
        params.b,
        args.prior,
        args.out.display()
    );
    Ok(())
}

pub(crate) fn fuse(args: FuseArgs) -> Result<()> {
    let text = std::fs::read_to_string(&args.params)
        .with_context(|| format!("reading params {}", args.params.display()))?;
    let params_by_name: HashMap<String, CalibrationParams> =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", args.params.display()))?;
    let mut subsystems = Vec::with_capacity(args.scores.len());
    let mut params = Vec::with_capacity(args.scores.len());
    for path in &args.scores {
        let name = scores_stem(path);
        let p = params_by_name.get(&name).with_context(|| {
            let mut known: Vec<&str> = params_by_name.keys().map(String::as_str).collect();
            known.sort_unstable();
            format!(
                "no calibration params for subsystem '{name}' (params file has: {})",
                known.join(", ")
            )
        })?;
        subsystems.push(read_scores(path)?);
        params.push(*p);
    }
    let fused = fsv_core::fusion::fuse(&subsystems, &params)?;
    write_scores(&args.out, &fused)?;
    println!(
        "fuse: {} subsystems, {} trials -> {}",
        subsystems.len(),
        fused.len(),
        args.out.display()
    );
    Ok(())
}

pub(crate) fn eval(args: EvalArgs) -> Result<()> {
    let scores = read_scores(&args.scores)?;
    let key = read_trial_key(&args.key)?;
    let labeled = LabeledScoreSet::join(&scores, &key)?;
    let dcf = DcfParams::new(args.p_target, 1.0, 1.0)?;
    let eer_value = eer(&labeled)?;
    let (min_c, _threshold) = min_dcf(&labeled, &dcf)?;
    let act_c = act_dcf(&labeled, &dcf)?;
    let cllr_value = cllr(&labeled)?;
    println!(
        "trials: {} ({} target, {} impostor)",
        labeled.len(),
        labeled.target_scores().len(),
        labeled.impostor_scores().len()
    );
    println!("EER[%]: {:7.3}", eer_value * 100.0);
    println!("minC:   {:7.4}  (p_target {})", min_c, args.p_target);
    println!("actC:   {:7.4}", act_c);
    println!("Cllr:   {:7.4}", cllr_value);
    if let Some(det) = &args.det {
        let curve = DetCurve {
            label: scores_stem(&args.scores),
            points: det_points(&labeled)?,
        };
        std::fs::write(det, det_svg(&[curve]))?;
        println!("DET plot -> {}", det.display());
    }
    Ok(())
}

pub(crate) fn simulate_rir(args: SimulateRirArgs) -> Result<()> {
    let text = std::fs::read_to_string(&args.room)
        .with_context(|| format!("reading room spec {}", args.room.display()))?;
    let room: fsv_core::augment::RoomSpec =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", args.room.display()))?;
    let rir = fsv_core::augment::ism_rir(&room)?;
    write_wav(&args.out, &rir, WavFormat::Float32)?;
    println!(
        "rir: {} taps at {} Hz -> {}",
        rir.len(),
        rir.sample_rate(),
        args.out.display()
    );
    Ok(())
}

pub(crate) fn augment(args: AugmentArgs) -> Result<()> {
    if args.rir.is_none() && args.noise.is_none() {
        bail!("nothing to do: pass --rir and/or --noise");
    }
    if args.noise.is_some() != args.snr.is_some() {
        bail!("--noise and --snr must be given together");
    }
    let mut audio = read_wav(&args.input)?;
    if let Some(rir_path) = &args.rir {
        let rir = read_wav(rir_path)?;
        audio = fsv_core::augment::convolve_rir(&audio, &rir)
            .with_context(|| format!("convolving {}", rir_path.display()))?;
    }
    if let Some(noise_path) = &args.noise {
        let noise = read_wav(noise_path)?;
        let snr = args.snr.expect("checked above");
        audio = fsv_core::augment::mix_at_snr(&audio, &noise, snr)
            .with_context(|| format!("mixing {}", noise_path.display()))?;
    }
    write_wav(&args.out, &audio, WavFormat::Float32)?;
    println!("augment -> {}", args.out.display());
    Ok(())
}

pub(crate) fn run(args: RunArgs) -> Result<()> {
    let config = ExperimentConfig::from_path(&args.config)?;
    let report = run_pipeline(&config)?;
    print!("{}", render_table(&report));
    println!(
        "\n{} trials ({} target, {} impostor); artifacts in {}",
        report.n_trials,
        report.n_target,
        report.n_impostor,
        config.output_dir.display()
    );
    Ok(())
}

pub(crate) fn init_config(args: InitConfigArgs) -> Result<()> {
    let text = reference_config().to_json_pretty();
    match &args.out {
        Some(path) => {
            std::fs::write(path, text)?;
            println!("reference config -> {}", path.display());
        }
        None => print!("{text}"),
    }
    Ok(())
}
