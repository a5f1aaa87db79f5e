//! Toy utterance-level speaker embedder: a small frame encoder, statistics
//! pooling, and a linear classifier trained with softmax or angular-margin
//! softmax. The network body is deliberately tiny — the point is the pooling
//! and loss machinery with exact, testable gradients.

mod loss;

pub use loss::{annealed_lambda, asoftmax_loss, softmax_loss, AsoftmaxConfig};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::embedding::Embedding;
use crate::error::{FsvError, Result};

/// Default embedding dimensionality.
pub const DEFAULT_EMBED_DIM: usize = 256;

/// How frame-level outputs are collapsed to one utterance-level vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pooling {
    /// Column means only (H values).
    Mean,
    /// Column means followed by population standard deviations (2H values).
    MeanStd,
}

/// One dense layer `y = W·x + b`, stored row-major as out×in.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineLayer {
    w: DMatrix<f64>,
    b: DVector<f64>,
}

impl AffineLayer {
    pub fn new(w: DMatrix<f64>, b: DVector<f64>) -> Result<Self> {
        if w.nrows() != b.len() {
            return Err(FsvError::DimMismatch(format!(
                "layer weight has {} rows, bias has {}",
                w.nrows(),
                b.len()
            )));
        }
        if w.iter().chain(b.iter()).any(|v| !v.is_finite()) {
            return Err(FsvError::NonFinite("layer parameters".into()));
        }
        Ok(Self { w, b })
    }

    pub fn weight(&self) -> &DMatrix<f64> {
        &self.w
    }

    pub fn bias(&self) -> &DVector<f64> {
        &self.b
    }

    /// Applies the layer to every row of `input` (T×in → T×out).
    fn apply(&self, input: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = input * self.w.transpose();
        for t in 0..out.nrows() {
            for j in 0..out.ncols() {
                out[(t, j)] += self.b[j];
            }
        }
        out
    }
}

/// The embedder network: affine+ReLU frame encoder, pooling, affine embedding
/// layer, and a bias-free linear classifier used only during training.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyEmbedNet {
    encoder: Vec<AffineLayer>,
    pooling: Pooling,
    embed: AffineLayer,
    classifier: DMatrix<f64>,
}

/// Shape parameters for a fresh network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NetConfig {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub embed_dim: usize,
    pub pooling: Pooling,
    pub n_classes: usize,
}

impl NetConfig {
    pub fn new(input_dim: usize, n_classes: usize) -> Self {
        Self {
            input_dim,
            hidden_dim: 64,
            embed_dim: DEFAULT_EMBED_DIM,
            pooling: Pooling::MeanStd,
            n_classes,
        }
    }
}

/// Intermediate activations kept for backpropagation.
struct ForwardTrace {
    /// Input frames followed by the post-ReLU output of each encoder layer.
    activations: Vec<DMatrix<f64>>,
    /// Column means of the final frame activations.
    mean: DVector<f64>,
    /// Population standard deviations (only meaningful under MeanStd).
    std: DVector<f64>,
    pooled: DVector<f64>,
    embedding: DVector<f64>,
}

impl ToyEmbedNet {
    /// Random initialization with He-style scaling, deterministic in `seed`.
    /// Classifier rows start unit-normalized.
    pub fn init(config: &NetConfig, seed: u64) -> Result<Self> {
        if config.input_dim == 0 || config.hidden_dim == 0 || config.embed_dim == 0 {
            return Err(FsvError::config("network dimensions must be positive"));
        }
        if config.n_classes < 2 {
            return Err(FsvError::config("network needs at least 2 classes"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layer = |out: usize, inp: usize, rng: &mut ChaCha8Rng| -> AffineLayer {
            let scale = (2.0 / inp as f64).sqrt();
            let w = DMatrix::from_fn(out, inp, |_, _| scale * rng.sample::<f64, _>(StandardNormal));
            AffineLayer::new(w, DVector::zeros(out)).expect("finite init")
        };
        let encoder = vec![
            layer(config.hidden_dim, config.input_dim, &mut rng),
            layer(config.hidden_dim, config.hidden_dim, &mut rng),
        ];
        let pooled_dim = match config.pooling {
            Pooling::Mean => config.hidden_dim,
            Pooling::MeanStd => 2 * config.hidden_dim,
        };
        let embed = layer(config.embed_dim, pooled_dim, &mut rng);
        let mut classifier = DMatrix::from_fn(config.n_classes, config.embed_dim, |_, _| {
            rng.sample::<f64, _>(StandardNormal)
        });
        normalize_rows(&mut classifier);
        Ok(Self {
            encoder,
            pooling: config.pooling,
            embed,
            classifier,
        })
    }

    pub fn from_parts(
        encoder: Vec<AffineLayer>,
        pooling: Pooling,
        embed: AffineLayer,
        classifier: DMatrix<f64>,
    ) -> Result<Self> {
        if encoder.is_empty() {
            return Err(FsvError::config("encoder needs at least one layer"));
        }
        if classifier.ncols() != embed.w.nrows() {
            return Err(FsvError::DimMismatch(format!(
                "classifier dim {} does not match embedding dim {}",
                classifier.ncols(),
                embed.w.nrows()
            )));
        }
        Ok(Self {
            encoder,
            pooling,
            embed,
            classifier,
        })
    }

    pub fn encoder(&self) -> &[AffineLayer] {
        &self.encoder
    }

    pub fn pooling(&self) -> Pooling {
        self.pooling
    }

    pub fn embed_layer(&self) -> &AffineLayer {
        &self.embed
    }

    pub fn classifier(&self) -> &DMatrix<f64> {
        &self.classifier
    }

    pub fn input_dim(&self) -> usize {
        self.encoder[0].w.ncols()
    }

    pub fn embed_dim(&self) -> usize {
        self.embed.w.nrows()
    }

    pub fn n_classes(&self) -> usize {
        self.classifier.nrows()
    }

    fn forward(&self, frames: &DMatrix<f64>) -> Result<ForwardTrace> {
        if frames.nrows() == 0 {
            return Err(FsvError::InsufficientData("empty feature sequence".into()));
        }
        if frames.ncols() != self.input_dim() {
            return Err(FsvError::DimMismatch(format!(
                "features have dim {}, network expects {}",
                frames.ncols(),
                self.input_dim()
            )));
        }
        let mut activations = vec![frames.clone()];
        for layer in &self.encoder {
            let mut a = layer.apply(activations.last().unwrap());
            a.apply(|v| *v = v.max(0.0));
            activations.push(a);
        }
        let last = activations.last().unwrap();
        let (mean, std) = column_mean_std(last);
        let pooled = match self.pooling {
            Pooling::Mean => mean.clone(),
            Pooling::MeanStd => {
                if last.nrows() < 2 {
                    log::debug!("stats pooling over a single frame: std is 0 by convention");
                }
                let mut p = DVector::zeros(2 * mean.len());
                p.rows_mut(0, mean.len()).copy_from(&mean);
                p.rows_mut(mean.len(), std.len()).copy_from(&std);
                p
            }
        };
        let embedding = &self.embed.w * &pooled + &self.embed.b;
        Ok(ForwardTrace {
            activations,
            mean,
            std,
            pooled,
            embedding,
        })
    }

    /// Class prediction from the classifier logits; used by training accuracy
    /// checks, not by verification scoring.
    pub fn classify(&self, frames: &DMatrix<f64>) -> Result<usize> {
        let trace = self.forward(frames)?;
        let logits = &self.classifier * &trace.embedding;
        let mut best = 0;
        for j in 1..logits.len() {
            if logits[j] > logits[best] {
                best = j;
            }
        }
        Ok(best)
    }
}

/// Pools a T×H matrix of frame outputs to one vector: column means under
/// `Mean`, means followed by population standard deviations under `MeanStd`.
/// A single frame under `MeanStd` yields zero standard deviations.
pub fn stats_pool(frame_outputs: &DMatrix<f64>, pooling: Pooling) -> Result<DVector<f64>> {
    if frame_outputs.nrows() == 0 {
        return Err(FsvError::InsufficientData("cannot pool zero frames".into()));
    }
    let (mean, std) = column_mean_std(frame_outputs);
    Ok(match pooling {
        Pooling::Mean => mean,
        Pooling::MeanStd => {
            if frame_outputs.nrows() < 2 {
                log::debug!("stats pooling over a single frame: std is 0 by convention");
            }
            let h = mean.len();
            let mut p = DVector::zeros(2 * h);
            p.rows_mut(0, h).copy_from(&mean);
            p.rows_mut(h, h).copy_from(&std);
            p
        }
    })
}

fn column_mean_std(frames: &DMatrix<f64>) -> (DVector<f64>, DVector<f64>) {
    let t = frames.nrows() as f64;
    let h = frames.ncols();
    let mut mean = DVector::zeros(h);
    for r in 0..frames.nrows() {
        for j in 0..h {
            mean[j] += frames[(r, j)];
        }
    }
    mean /= t;
    let mut var = DVector::zeros(h);
    for r in 0..frames.nrows() {
        for j in 0..h {
            let d = frames[(r, j)] - mean[j];
            var[j] += d * d;
        }
    }
    var /= t;
    (mean, var.map(|v| v.max(0.0).sqrt()))
}

fn normalize_rows(m: &mut DMatrix<f64>) {
    for j in 0..m.nrows() {
        let n = m.row(j).norm();
        if n > 0.0 {
            for d in 0..m.ncols() {
                m[(j, d)] /= n;
            }
        }
    }
}

/// Runs the full forward pass on an untruncated feature sequence and returns
/// the penultimate-layer output as the utterance embedding.
pub fn extract_embedding(net: &ToyEmbedNet, frames: &DMatrix<f64>) -> Result<Embedding> {
    let trace = net.forward(frames)?;
    Embedding::new(trace.embedding.iter().copied().collect())
}

/// Which classification loss drives training.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    Softmax,
    Asoftmax { margin: u32 },
}

/// Plain-SGD training schedule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub loss: LossKind,
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(loss: LossKind) -> Self {
        Self {
            loss,
            steps: 200,
            batch_size: 16,
            learning_rate: 0.1,
            seed: 0x5eed_0e77,
        }
    }
}

/// Per-example parameter gradients produced by backpropagation.
struct ParamGrads {
    encoder: Vec<(DMatrix<f64>, DVector<f64>)>,
    embed_w: DMatrix<f64>,
    embed_b: DVector<f64>,
}

/// Backpropagates `d_embedding` through one utterance's forward trace.
fn backward(net: &ToyEmbedNet, trace: &ForwardTrace, d_embedding: &DVector<f64>) -> ParamGrads {
    let t = trace.activations[0].nrows() as f64;
    let h = trace.mean.len();

    let embed_w = d_embedding * trace.pooled.transpose();
    let embed_b = d_embedding.clone();
    let d_pooled = net.embed.w.transpose() * d_embedding;

    // Unpool to per-frame gradients on the last encoder activations.
    let last = trace.activations.last().unwrap();
    let mut d_frames = DMatrix::zeros(last.nrows(), h);
    match net.pooling {
        Pooling::Mean => {
            for r in 0..last.nrows() {
                for j in 0..h {
                    d_frames[(r, j)] = d_pooled[j] / t;
                }
            }
        }
        Pooling::MeanStd => {
            for r in 0..last.nrows() {
                for j in 0..h {
                    let d_mean = d_pooled[j] / t;
                    let sigma = trace.std[j];
                    let d_std = if sigma > 1e-12 {
                        d_pooled[h + j] * (last[(r, j)] - trace.mean[j]) / (t * sigma)
                    } else {
                        0.0
                    };
                    d_frames[(r, j)] = d_mean + d_std;
                }
            }
        }
    }

    // Walk the encoder in reverse: ReLU mask, then the affine layer.
    let mut encoder_grads = vec![(DMatrix::zeros(0, 0), DVector::zeros(0)); net.encoder.len()];
    let mut d_post = d_frames;
    for l in (0..net.encoder.len()).rev() {
        let post = &trace.activations[l + 1];
        let pre_input = &trace.activations[l];
        let mut d_pre = d_post;
        for r in 0..d_pre.nrows() {
            for j in 0..d_pre.ncols() {
                if post[(r, j)] <= 0.0 {
                    d_pre[(r, j)] = 0.0;
                }
            }
        }
        let d_w = d_pre.transpose() * pre_input;
        let mut d_b = DVector::zeros(d_pre.ncols());
        for r in 0..d_pre.nrows() {
            for j in 0..d_pre.ncols() {
                d_b[j] += d_pre[(r, j)];
            }
        }
        d_post = &d_pre * &net.encoder[l].w;
        encoder_grads[l] = (d_w, d_b);
    }

    ParamGrads {
        encoder: encoder_grads,
        embed_w,
        embed_b,
    }
}

/// Minibatch SGD over full forward/backward passes. Returns the trained
/// network and the per-step loss curve.
pub fn train_toy(
    net: ToyEmbedNet,
    examples: &[(DMatrix<f64>, usize)],
    config: &TrainConfig,
) -> Result<(ToyEmbedNet, Vec<f64>)> {
    if examples.is_empty() {
        return Err(FsvError::InsufficientData("no training examples".into()));
    }
    let mut seen = std::collections::HashSet::new();
    for (frames, label) in examples {
        if *label >= net.n_classes() {
            return Err(FsvError::LabelOutOfRange(format!(
                "label {label} with {} classes",
                net.n_classes()
            )));
        }
        if frames.ncols() != net.input_dim() {
            return Err(FsvError::DimMismatch(format!(
                "example has dim {}, network expects {}",
                frames.ncols(),
                net.input_dim()
            )));
        }
        seen.insert(*label);
    }
    if seen.len() < 2 {
        return Err(FsvError::InsufficientData(
            "training needs at least 2 distinct speakers".into(),
        ));
    }
    if config.batch_size == 0 {
        return Err(FsvError::config("batch size must be positive"));
    }

    let mut net = net;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut losses = Vec::with_capacity(config.steps);
    for step in 0..config.steps {
        let batch: Vec<usize> = (0..config.batch_size)
            .map(|_| rng.random_range(0..examples.len()))
            .collect();

        // Forward passes in parallel; order is preserved by collect so every
        // later accumulation is deterministic.
        let traces: Vec<ForwardTrace> = batch
            .par_iter()
            .map(|&i| net.forward(&examples[i].0))
            .collect::<Result<_>>()?;
        let mut embeddings = DMatrix::zeros(batch.len(), net.embed_dim());
        for (r, trace) in traces.iter().enumerate() {
            embeddings.row_mut(r).copy_from(&trace.embedding.transpose());
        }
        let labels: Vec<usize> = batch.iter().map(|&i| examples[i].1).collect();

        let (loss_value, d_emb, d_cls) = match config.loss {
            LossKind::Softmax => softmax_loss(&embeddings, &labels, &net.classifier)?,
            LossKind::Asoftmax { margin } => {
                let cfg = AsoftmaxConfig::new(margin, annealed_lambda(step))?;
                asoftmax_loss(&embeddings, &labels, &net.classifier, &cfg)?
            }
        };
        if !loss_value.is_finite() {
            return Err(FsvError::Diverged(format!(
                "loss became non-finite at step {step}"
            )));
        }
        losses.push(loss_value);

        let grads: Vec<ParamGrads> = traces
            .par_iter()
            .enumerate()
            .map(|(r, trace)| backward(&net, trace, &d_emb.row(r).transpose()))
            .collect();

        let lr = config.learning_rate;
        for g in &grads {
            for (l, (dw, db)) in g.encoder.iter().enumerate() {
                net.encoder[l].w -= dw * lr;
                net.encoder[l].b -= db * lr;
            }
            net.embed.w -= &g.embed_w * lr;
            net.embed.b -= &g.embed_b * lr;
        }
        net.classifier -= d_cls * lr;
        if matches!(config.loss, LossKind::Asoftmax { .. }) {
            normalize_rows(&mut net.classifier);
        }
    }
    Ok((net, losses))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn tiny_config() -> NetConfig {
        NetConfig {
            input_dim: 5,
            hidden_dim: 6,
            embed_dim: 4,
            pooling: Pooling::MeanStd,
            n_classes: 3,
        }
    }

    fn random_frames(rng: &mut ChaCha8Rng, t: usize, d: usize) -> DMatrix<f64> {
        DMatrix::from_fn(t, d, |_, _| rng.sample::<f64, _>(StandardNormal))
    }

    #[test]
    fn stats_pool_identical_frames() {
        let frame = [1.0, -2.0, 0.5];
        let m = DMatrix::from_fn(4, 3, |_, j| frame[j]);
        let pooled = stats_pool(&m, Pooling::MeanStd).unwrap();
        for j in 0..3 {
            assert_abs_diff_eq!(pooled[j], frame[j], epsilon = 1e-12);
            assert_abs_diff_eq!(pooled[3 + j], 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn stats_pool_two_point_example() {
        // Frames [0] and [2]: mean 1, population std 1.
        let m = DMatrix::from_column_slice(2, 1, &[0.0, 2.0]);
        let pooled = stats_pool(&m, Pooling::MeanStd).unwrap();
        assert_abs_diff_eq!(pooled[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(pooled[1], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn stats_pool_matches_two_pass_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(201);
        let m = random_frames(&mut rng, 50, 8);
        let pooled = stats_pool(&m, Pooling::MeanStd).unwrap();
        for j in 0..8 {
            let mut mean = 0.0;
            for t in 0..50 {
                mean += m[(t, j)];
            }
            mean /= 50.0;
            let mut var = 0.0;
            for t in 0..50 {
                var += (m[(t, j)] - mean).powi(2);
            }
            var /= 50.0;
            assert_abs_diff_eq!(pooled[j], mean, epsilon = 1e-12);
            assert_abs_diff_eq!(pooled[8 + j], var.sqrt(), epsilon = 1e-12);
        }
        let mean_only = stats_pool(&m, Pooling::Mean).unwrap();
        assert_eq!(mean_only.len(), 8);
        for j in 0..8 {
            assert_abs_diff_eq!(mean_only[j], pooled[j], epsilon = 1e-15);
        }
    }

    #[test]
    fn stats_pool_single_frame_std_is_zero() {
        let m = DMatrix::from_row_slice(1, 2, &[3.0, -1.0]);
        let pooled = stats_pool(&m, Pooling::MeanStd).unwrap();
        assert_eq!(pooled.as_slice(), &[3.0, -1.0, 0.0, 0.0]);
        assert!(stats_pool(&DMatrix::zeros(0, 2), Pooling::Mean).is_err());
    }

    #[test]
    fn extraction_is_deterministic_and_order_invariant_under_mean() {
        let mut cfg = tiny_config();
        cfg.pooling = Pooling::Mean;
        let net = ToyEmbedNet::init(&cfg, 77).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(202);
        let frames = random_frames(&mut rng, 20, 5);
        let e1 = extract_embedding(&net, &frames).unwrap();
        let e2 = extract_embedding(&net, &frames).unwrap();
        assert_eq!(e1.as_slice(), e2.as_slice());

        // Reverse the frame order; mean pooling cannot tell the difference.
        let mut reversed = frames.clone();
        for t in 0..20 {
            for j in 0..5 {
                reversed[(t, j)] = frames[(19 - t, j)];
            }
        }
        let e3 = extract_embedding(&net, &reversed).unwrap();
        for j in 0..e1.dim() {
            assert_abs_diff_eq!(e1.as_slice()[j], e3.as_slice()[j], epsilon = 1e-12);
        }

        // Concatenating the utterance with itself leaves the mean unchanged.
        let mut doubled = DMatrix::zeros(40, 5);
        doubled.rows_mut(0, 20).copy_from(&frames);
        doubled.rows_mut(20, 20).copy_from(&frames);
        let e4 = extract_embedding(&net, &doubled).unwrap();
        for j in 0..e1.dim() {
            assert_abs_diff_eq!(e1.as_slice()[j], e4.as_slice()[j], epsilon = 1e-12);
        }
    }

    #[test]
    fn forward_matches_layer_by_layer_recomputation() {
        let net = ToyEmbedNet::init(&tiny_config(), 31).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(203);
        let frames = random_frames(&mut rng, 7, 5);
        let emb = extract_embedding(&net, &frames).unwrap();

        // Recompute with explicit loops only.
        let mut acts: Vec<Vec<f64>> = (0..7)
            .map(|t| (0..5).map(|j| frames[(t, j)]).collect())
            .collect();
        for layer in net.encoder() {
            let mut next = Vec::new();
            for row in &acts {
                let mut out = vec![0.0; layer.weight().nrows()];
                for (o, out_v) in out.iter_mut().enumerate() {
                    let mut acc = layer.bias()[o];
                    for (i, v) in row.iter().enumerate() {
                        acc += layer.weight()[(o, i)] * v;
                    }
                    *out_v = acc.max(0.0);
                }
                next.push(out);
            }
            acts = next;
        }
        let h = acts[0].len();
        let t = acts.len() as f64;
        let mut pooled = vec![0.0; 2 * h];
        for j in 0..h {
            let mean: f64 = acts.iter().map(|r| r[j]).sum::<f64>() / t;
            let var: f64 = acts.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / t;
            pooled[j] = mean;
            pooled[h + j] = var.sqrt();
        }
        for (o, expect) in emb.as_slice().iter().enumerate() {
            let mut acc = net.embed_layer().bias()[o];
            for (i, v) in pooled.iter().enumerate() {
                acc += net.embed_layer().weight()[(o, i)] * v;
            }
            assert_abs_diff_eq!(acc, *expect, epsilon = 1e-10);
        }
    }

    #[test]
    fn rejects_empty_and_mismatched_input() {
        let net = ToyEmbedNet::init(&tiny_config(), 1).unwrap();
        assert!(matches!(
            extract_embedding(&net, &DMatrix::zeros(0, 5)).unwrap_err(),
            FsvError::InsufficientData(_)
        ));
        assert!(matches!(
            extract_embedding(&net, &DMatrix::zeros(3, 4)).unwrap_err(),
            FsvError::DimMismatch(_)
        ));
    }

    /// End-to-end gradient check: perturb every parameter of a tiny net and
    /// compare the training-loss finite difference against the analytic
    /// parameter gradients assembled by `backward`.
    #[test]
    fn full_network_gradients_match_finite_differences() {
        let cfg = NetConfig {
            input_dim: 3,
            hidden_dim: 4,
            embed_dim: 3,
            pooling: Pooling::MeanStd,
            n_classes: 3,
        };
        let net = ToyEmbedNet::init(&cfg, 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(204);
        let examples: Vec<(DMatrix<f64>, usize)> = (0..3)
            .map(|i| (random_frames(&mut rng, 6, 3), i % 3))
            .collect();

        let batch_loss = |net: &ToyEmbedNet| -> f64 {
            let mut embeddings = DMatrix::zeros(examples.len(), net.embed_dim());
            let labels: Vec<usize> = examples.iter().map(|(_, l)| *l).collect();
            for (r, (frames, _)) in examples.iter().enumerate() {
                let trace = net.forward(frames).unwrap();
                embeddings.row_mut(r).copy_from(&trace.embedding.transpose());
            }
            softmax_loss(&embeddings, &labels, net.classifier()).unwrap().0
        };

        // Assemble analytic parameter gradients.
        let labels: Vec<usize> = examples.iter().map(|(_, l)| *l).collect();
        let traces: Vec<ForwardTrace> = examples
            .iter()
            .map(|(f, _)| net.forward(f).unwrap())
            .collect();
        let mut embeddings = DMatrix::zeros(examples.len(), net.embed_dim());
        for (r, trace) in traces.iter().enumerate() {
            embeddings.row_mut(r).copy_from(&trace.embedding.transpose());
        }
        let (_, d_emb, _) = softmax_loss(&embeddings, &labels, net.classifier()).unwrap();
        let mut enc_w = vec![DMatrix::zeros(4, 3), DMatrix::zeros(4, 4)];
        let mut enc_b = vec![DVector::zeros(4), DVector::zeros(4)];
        let mut emb_w = DMatrix::zeros(3, 8);
        let mut emb_b = DVector::zeros(3);
        for (r, trace) in traces.iter().enumerate() {
            let g = backward(&net, trace, &d_emb.row(r).transpose());
            for l in 0..2 {
                enc_w[l] += &g.encoder[l].0;
                enc_b[l] += &g.encoder[l].1;
            }
            emb_w += &g.embed_w;
            emb_b += &g.embed_b;
        }

        let h = 1e-5;
        let check = |analytic: f64, perturb: &dyn Fn(&mut ToyEmbedNet, f64)| {
            let mut plus = net.clone();
            perturb(&mut plus, h);
            let mut minus = net.clone();
            perturb(&mut minus, -h);
            let fd = (batch_loss(&plus) - batch_loss(&minus)) / (2.0 * h);
            let rel = (analytic - fd).abs() / analytic.abs().max(fd.abs()).max(1e-3);
            assert!(rel < 1e-3, "param grad mismatch: analytic {analytic}, fd {fd}");
        };
        for l in 0..2 {
            for o in 0..4 {
                for i in 0..enc_w[l].ncols() {
                    check(enc_w[l][(o, i)], &|n, eps| n.encoder[l].w[(o, i)] += eps);
                }
                check(enc_b[l][o], &|n, eps| n.encoder[l].b[o] += eps);
            }
        }
        for o in 0..3 {
            for i in 0..8 {
                check(emb_w[(o, i)], &|n, eps| n.embed.w[(o, i)] += eps);
            }
            check(emb_b[o], &|n, eps| n.embed.b[o] += eps);
        }
    }

    fn gaussian_speaker_set(
        rng: &mut ChaCha8Rng,
        n_speakers: usize,
        per_speaker: usize,
        dim: usize,
        separation: f64,
    ) -> Vec<(DMatrix<f64>, usize)> {
        let centers: Vec<DVector<f64>> = (0..n_speakers)
            .map(|_| {
                let v = DVector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal));
                v.normalize() * separation
            })
            .collect();
        let mut out = Vec::new();
        for (s, center) in centers.iter().enumerate() {
            for _ in 0..per_speaker {
                let frames = DMatrix::from_fn(15, dim, |_, j| {
                    center[j] + rng.sample::<f64, _>(StandardNormal)
                });
                out.push((frames, s));
            }
        }
        out
    }

    #[test]
    fn separable_speakers_reach_high_accuracy() {
        let mut rng = ChaCha8Rng::seed_from_u64(205);
        let examples = gaussian_speaker_set(&mut rng, 2, 30, 6, 3.0);
        let cfg = NetConfig {
            input_dim: 6,
            hidden_dim: 8,
            embed_dim: 4,
            pooling: Pooling::MeanStd,
            n_classes: 2,
        };
        let net = ToyEmbedNet::init(&cfg, 9).unwrap();
        let train_cfg = TrainConfig {
            loss: LossKind::Softmax,
            steps: 200,
            batch_size: 8,
            learning_rate: 0.1,
            seed: 1,
        };
        let (trained, losses) = train_toy(net, &examples, &train_cfg).unwrap();
        assert_eq!(losses.len(), 200);
        let correct = examples
            .iter()
            .filter(|(f, l)| trained.classify(f).unwrap() == *l)
            .count();
        let accuracy = correct as f64 / examples.len() as f64;
        assert!(accuracy > 0.95, "training accuracy {accuracy}");
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let mut rng = ChaCha8Rng::seed_from_u64(206);
        let examples = gaussian_speaker_set(&mut rng, 2, 5, 5, 2.0);
        let net = ToyEmbedNet::init(&tiny_config(), 13).unwrap();
        let train_cfg = TrainConfig {
            loss: LossKind::Softmax,
            steps: 10,
            batch_size: 4,
            learning_rate: 0.0,
            seed: 2,
        };
        let (trained, _) = train_toy(net.clone(), &examples, &train_cfg).unwrap();
        assert_eq!(trained, net);
    }

    #[test]
    fn asoftmax_tightens_intra_class_cosine() {
        let mut rng = ChaCha8Rng::seed_from_u64(207);
        let examples = gaussian_speaker_set(&mut rng, 8, 12, 8, 2.5);
        let cfg = NetConfig {
            input_dim: 8,
            hidden_dim: 12,
            embed_dim: 6,
            pooling: Pooling::MeanStd,
            n_classes: 8,
        };
        let base = ToyEmbedNet::init(&cfg, 17).unwrap();
        let mut train_cfg = TrainConfig {
            loss: LossKind::Softmax,
            steps: 800,
            batch_size: 16,
            learning_rate: 0.05,
            seed: 3,
        };
        let (soft, _) = train_toy(base.clone(), &examples, &train_cfg).unwrap();
        train_cfg.loss = LossKind::Asoftmax { margin: 4 };
        let (asoft, _) = train_toy(base, &examples, &train_cfg).unwrap();

        let intra_cosine = |net: &ToyEmbedNet| -> f64 {
            let embs: Vec<(usize, DVector<f64>)> = examples
                .iter()
                .map(|(f, l)| {
                    (
                        *l,
                        DVector::from_vec(extract_embedding(net, f).unwrap().into_values()),
                    )
                })
                .collect();
            let mut total = 0.0;
            let mut count = 0usize;
            for i in 0..embs.len() {
                for j in (i + 1)..embs.len() {
                    if embs[i].0 == embs[j].0 {
                        total += embs[i].1.dot(&embs[j].1)
                            / (embs[i].1.norm() * embs[j].1.norm());
                        count += 1;
                    }
                }
            }
            total / count as f64
        };
        let soft_cos = intra_cosine(&soft);
        let asoft_cos = intra_cosine(&asoft);
        assert!(
            asoft_cos >= soft_cos - 1e-9,
            "A-softmax intra-class cosine {asoft_cos} below softmax {soft_cos}"
        );
    }

    #[test]
    fn training_rejects_degenerate_setups() {
        let mut rng = ChaCha8Rng::seed_from_u64(208);
        let net = ToyEmbedNet::init(&tiny_config(), 19).unwrap();
        let cfg = TrainConfig::new(LossKind::Softmax);
        assert!(matches!(
            train_toy(net.clone(), &[], &cfg).unwrap_err(),
            FsvError::InsufficientData(_)
        ));
        // Single speaker only.
        let one: Vec<(DMatrix<f64>, usize)> =
            (0..4).map(|_| (random_frames(&mut rng, 5, 5), 1)).collect();
        assert!(matches!(
            train_toy(net.clone(), &one, &cfg).unwrap_err(),
            FsvError::InsufficientData(_)
        ));
        // Label beyond the classifier.
        let bad = vec![
            (random_frames(&mut rng, 5, 5), 0),
            (random_frames(&mut rng, 5, 5), 9),
        ];
        assert!(matches!(
            train_toy(net, &bad, &cfg).unwrap_err(),
            FsvError::LabelOutOfRange(_)
        ));
    }
}
