//! The fusion network and the single-feature baseline.
//!
//! Three identical-shape convolutional paths (one per feature view) each
//! reduce a coefficients-by-frames matrix to a fixed 64-dim embedding:
//! conv(k=3) -> ReLU -> maxpool(2) -> conv(k=3) -> ReLU -> global average
//! pool. The embeddings are concatenated in the fixed order
//! [MFCC, LFCC, CHROMA] and passed through a dense ReLU layer into a single
//! spoof logit. The baseline runs one such path over MFCC only with a
//! smaller dense head.
//!
//! Models are bound to the feature extraction configuration they were
//! trained with: every forward pass checks the input's fingerprint.

mod checkpoint;

pub use checkpoint::{
    checkpoint_checksum, expect_kind, load_checkpoint, load_checkpoint_file, save_checkpoint,
    save_checkpoint_file, CheckpointError, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};

use crate::features::{
    FeatureConfig, FeatureFingerprints, FeatureKind, FeatureMatrix, N_CHROMA, STD_FLOOR,
};
use crate::nn::{
    global_avg_pool, global_avg_pool_backward, maxpool1d, maxpool1d_backward, relu, relu_backward,
    sigmoid, Conv1d, Dense, NnError, Scalar, Tensor,
};
use crate::rng::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("feature kind mismatch: expected {expected:?}, got {found:?}")]
    KindMismatch {
        expected: FeatureKind,
        found: FeatureKind,
    },
    #[error(
        "feature fingerprint mismatch for {kind}: model expects {expected:#018x}, input has {found:#018x}"
    )]
    FingerprintMismatch {
        kind: &'static str,
        expected: u64,
        found: u64,
    },
    #[error("input too short: {kind} matrix has {frames} frames, need at least {min}")]
    InputTooShort {
        kind: &'static str,
        frames: usize,
        min: usize,
    },
    #[error(transparent)]
    Nn(#[from] NnError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelKind {
    Mfaan,
    Baseline,
}

impl ModelKind {
    pub fn byte(self) -> u8 {
        match self {
            ModelKind::Mfaan => 1,
            ModelKind::Baseline => 2,
        }
    }

    pub fn from_byte(b: u8) -> Option<Self> {
        match b {
            1 => Some(ModelKind::Mfaan),
            2 => Some(ModelKind::Baseline),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Mfaan => "mfaan",
            ModelKind::Baseline => "baseline",
        }
    }
}

/// Layer widths. The defaults (32 -> 64 per path, 192 -> 64 -> 1 fusion,
/// 64 -> 32 -> 1 baseline head) are small enough for CPU training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArchConfig {
    pub conv1_out: usize,
    pub conv2_out: usize,
    pub kernel_size: usize,
    pub fusion_hidden: usize,
    pub baseline_hidden: usize,
}

impl Default for ArchConfig {
    fn default() -> Self {
        ArchConfig {
            conv1_out: 32,
            conv2_out: 64,
            kernel_size: 3,
            fusion_hidden: 64,
            baseline_hidden: 32,
        }
    }
}

impl ArchConfig {
    /// Path output width, independent of the input frame count.
    pub fn embedding_dim(&self) -> usize {
        self.conv2_out
    }

    pub fn fusion_input_dim(&self) -> usize {
        3 * self.conv2_out
    }

    /// Smallest frame count that survives conv -> pool -> conv: 8 frames at
    /// the default kernel size of 3.
    pub fn min_frames(&self) -> usize {
        3 * self.kernel_size - 1
    }
}

/// Per-row normalization parameters for one feature kind, stored in the
/// model's compute precision so training and inference normalize
/// identically.
#[derive(Debug, Clone, PartialEq)]
pub struct NormStats<S> {
    pub mean: Vec<S>,
    pub std: Vec<S>,
}

impl<S: Scalar> NormStats<S> {
    pub fn identity(rows: usize) -> Self {
        NormStats {
            mean: vec![S::zero(); rows],
            std: vec![S::one(); rows],
        }
    }
}

/// One convolutional path: conv -> ReLU -> maxpool(2) -> conv -> ReLU -> GAP.
#[derive(Debug, Clone, PartialEq)]
pub struct PathParams<S> {
    pub conv1: Conv1d<S>,
    pub conv2: Conv1d<S>,
}

/// Intermediate activations a path backward pass needs.
pub struct PathTrace<S> {
    input: Tensor<S>,
    pre1: Tensor<S>,
    relu1: Tensor<S>,
    pooled: Tensor<S>,
    argmax: Vec<usize>,
    pre2: Tensor<S>,
    relu2: Tensor<S>,
}

impl<S: Scalar> PathParams<S> {
    fn init(input_rows: usize, arch: &ArchConfig, rng: &mut Rng) -> Self {
        PathParams {
            conv1: Conv1d::init(input_rows, arch.conv1_out, arch.kernel_size, rng),
            conv2: Conv1d::init(arch.conv1_out, arch.conv2_out, arch.kernel_size, rng),
        }
    }

    fn forward(&self, input: &Tensor<S>) -> Result<(Tensor<S>, PathTrace<S>), NnError> {
        let pre1 = self.conv1.forward(input)?;
        let relu1 = relu(&pre1);
        let (pooled, argmax) = maxpool1d(&relu1)?;
        let pre2 = self.conv2.forward(&pooled)?;
        let relu2 = relu(&pre2);
        let embedding = global_avg_pool(&relu2)?;
        Ok((
            embedding,
            PathTrace {
                input: input.clone(),
                pre1,
                relu1,
                pooled,
                argmax,
                pre2,
                relu2,
            },
        ))
    }

    /// Accumulates parameter gradients for this path given the gradient of
    /// the loss w.r.t. the path embedding.
    fn backward(&mut self, trace: &PathTrace<S>, grad_embedding: &Tensor<S>) -> Result<(), NnError> {
        let d_relu2 = global_avg_pool_backward(grad_embedding, trace.relu2.shape())?;
        let d_pre2 = relu_backward(&trace.pre2, &d_relu2)?;
        let (d_pooled, gw2, gb2) = self.conv2.backward(&trace.pooled, &d_pre2)?;
        self.conv2.weights.add_grad(gw2.values())?;
        self.conv2.bias.add_grad(gb2.values())?;
        let d_relu1 = maxpool1d_backward(&trace.argmax, &d_pooled, trace.relu1.shape())?;
        let d_pre1 = relu_backward(&trace.pre1, &d_relu1)?;
        let (_, gw1, gb1) = self.conv1.backward(&trace.input, &d_pre1)?;
        self.conv1.weights.add_grad(gw1.values())?;
        self.conv1.bias.add_grad(gb1.values())?;
        Ok(())
    }

    fn n_params(&self) -> usize {
        self.conv1.n_params() + self.conv2.n_params()
    }
}

/// The three normalized feature tensors one clip contributes to a forward
/// pass (the baseline reads only the MFCC slot).
pub struct SampleTensors<S> {
    pub mfcc: Tensor<S>,
    pub lfcc: Tensor<S>,
    pub chroma: Tensor<S>,
}

const PATH_ORDER: [FeatureKind; 3] = [FeatureKind::Mfcc, FeatureKind::Lfcc, FeatureKind::Chroma];

/// Three-path fusion network.
#[derive(Debug, Clone, PartialEq)]
pub struct MfaanModel<S> {
    pub arch: ArchConfig,
    pub feature_config: FeatureConfig,
    pub fingerprints: FeatureFingerprints,
    pub seed: u64,
    /// Paths in the fixed concatenation order [MFCC, LFCC, CHROMA].
    pub paths: [PathParams<S>; 3],
    pub fuse_hidden: Dense<S>,
    pub fuse_out: Dense<S>,
    /// Per-kind normalization, set once training statistics are known.
    pub norm: Option<[NormStats<S>; 3]>,
}

pub struct MfaanTrace<S> {
    paths: [PathTrace<S>; 3],
    concat: Tensor<S>,
    hidden_pre: Tensor<S>,
    hidden_relu: Tensor<S>,
}

impl<S: Scalar> MfaanModel<S> {
    /// Fresh model with Kaiming-uniform weights drawn from the seed.
    pub fn init(
        arch: ArchConfig,
        feature_config: FeatureConfig,
        fingerprints: FeatureFingerprints,
        seed: u64,
    ) -> Self {
        let mut rng = Rng::seed_from(seed);
        let rows = [
            feature_config.rows_for(FeatureKind::Mfcc),
            feature_config.rows_for(FeatureKind::Lfcc),
            feature_config.rows_for(FeatureKind::Chroma),
        ];
        let paths = [
            PathParams::init(rows[0], &arch, &mut rng),
            PathParams::init(rows[1], &arch, &mut rng),
            PathParams::init(rows[2], &arch, &mut rng),
        ];
        let fuse_hidden = Dense::init(arch.fusion_input_dim(), arch.fusion_hidden, &mut rng);
        let fuse_out = Dense::init(arch.fusion_hidden, 1, &mut rng);
        MfaanModel {
            arch,
            feature_config,
            fingerprints,
            seed,
            paths,
            fuse_hidden,
            fuse_out,
            norm: None,
        }
    }

    fn path_index(kind: FeatureKind) -> usize {
        PATH_ORDER.iter().position(|&k| k == kind).unwrap()
    }

    /// Validates a feature matrix against the model contract and converts it
    /// into a normalized compute-precision tensor.
    pub fn prepare(&self, fm: &FeatureMatrix, expected: FeatureKind) -> Result<Tensor<S>, ModelError> {
        check_feature(fm, expected, &self.fingerprints, self.arch.min_frames())?;
        let norm = self.norm.as_ref().map(|n| &n[Self::path_index(expected)]);
        Ok(feature_to_tensor(fm, norm))
    }

    pub fn prepare_sample(
        &self,
        mfcc: &FeatureMatrix,
        lfcc: &FeatureMatrix,
        chroma: &FeatureMatrix,
    ) -> Result<SampleTensors<S>, ModelError> {
        Ok(SampleTensors {
            mfcc: self.prepare(mfcc, FeatureKind::Mfcc)?,
            lfcc: self.prepare(lfcc, FeatureKind::Lfcc)?,
            chroma: self.prepare(chroma, FeatureKind::Chroma)?,
        })
    }

    /// Full forward pass over validated features: returns (logit, probability).
    pub fn forward(
        &self,
        mfcc: &FeatureMatrix,
        lfcc: &FeatureMatrix,
        chroma: &FeatureMatrix,
    ) -> Result<(S, S), ModelError> {
        let sample = self.prepare_sample(mfcc, lfcc, chroma)?;
        let (logit, _) = self.forward_tensors(&sample)?;
        Ok((logit, sigmoid(logit)))
    }

    /// Forward over already-prepared tensors, keeping the trace for backward.
    pub fn forward_tensors(&self, s: &SampleTensors<S>) -> Result<(S, MfaanTrace<S>), NnError> {
        let (e0, t0) = self.paths[0].forward(&s.mfcc)?;
        let (e1, t1) = self.paths[1].forward(&s.lfcc)?;
        let (e2, t2) = self.paths[2].forward(&s.chroma)?;
        let mut concat = Vec::with_capacity(self.arch.fusion_input_dim());
        concat.extend_from_slice(e0.values());
        concat.extend_from_slice(e1.values());
        concat.extend_from_slice(e2.values());
        let concat = Tensor::new(vec![self.arch.fusion_input_dim()], concat);
        let hidden_pre = self.fuse_hidden.forward(&concat)?;
        let hidden_relu = relu(&hidden_pre);
        let out = self.fuse_out.forward(&hidden_relu)?;
        Ok((
            out.values()[0],
            MfaanTrace {
                paths: [t0, t1, t2],
                concat,
                hidden_pre,
                hidden_relu,
            },
        ))
    }

    /// Accumulates gradients of `d_logit * logit` into every parameter's
    /// gradient buffer.
    pub fn backward_tensors(&mut self, trace: &MfaanTrace<S>, d_logit: S) -> Result<(), NnError> {
        let d_out = Tensor::new(vec![1], vec![d_logit]);
        let (d_hidden_relu, gw, gb) = self.fuse_out.backward(&trace.hidden_relu, &d_out)?;
        self.fuse_out.weights.add_grad(gw.values())?;
        self.fuse_out.bias.add_grad(gb.values())?;
        let d_hidden_pre = relu_backward(&trace.hidden_pre, &d_hidden_relu)?;
        let (d_concat, gw, gb) = self.fuse_hidden.backward(&trace.concat, &d_hidden_pre)?;
        self.fuse_hidden.weights.add_grad(gw.values())?;
        self.fuse_hidden.bias.add_grad(gb.values())?;

        let dim = self.arch.embedding_dim();
        for (i, path) in self.paths.iter_mut().enumerate() {
            let grad_emb = Tensor::new(
                vec![dim],
                d_concat.values()[i * dim..(i + 1) * dim].to_vec(),
            );
            path.backward(&trace.paths[i], &grad_emb)?;
        }
        Ok(())
    }

    /// Pre-fusion embedding of a single path, for ablation inspection.
    pub fn path_embedding(
        &self,
        which: FeatureKind,
        fm: &FeatureMatrix,
    ) -> Result<Tensor<S>, ModelError> {
        let input = self.prepare(fm, which)?;
        let (embedding, _) = self.paths[Self::path_index(which)].forward(&input)?;
        Ok(embedding)
    }

    pub fn param_tensors_mut(&mut self) -> Vec<&mut Tensor<S>> {
        let mut v = Vec::with_capacity(16);
        for p in &mut self.paths {
            v.push(&mut p.conv1.weights);
            v.push(&mut p.conv1.bias);
            v.push(&mut p.conv2.weights);
            v.push(&mut p.conv2.bias);
        }
        v.push(&mut self.fuse_hidden.weights);
        v.push(&mut self.fuse_hidden.bias);
        v.push(&mut self.fuse_out.weights);
        v.push(&mut self.fuse_out.bias);
        v
    }

    pub fn named_params(&self) -> Vec<(String, &Tensor<S>)> {
        let mut v = Vec::with_capacity(16);
        for (i, p) in self.paths.iter().enumerate() {
            let name = PATH_ORDER[i].name();
            v.push((format!("path.{name}.conv1.weight"), &p.conv1.weights));
            v.push((format!("path.{name}.conv1.bias"), &p.conv1.bias));
            v.push((format!("path.{name}.conv2.weight"), &p.conv2.weights));
            v.push((format!("path.{name}.conv2.bias"), &p.conv2.bias));
        }
        v.push(("fusion.hidden.weight".into(), &self.fuse_hidden.weights));
        v.push(("fusion.hidden.bias".into(), &self.fuse_hidden.bias));
        v.push(("fusion.out.weight".into(), &self.fuse_out.weights));
        v.push(("fusion.out.bias".into(), &self.fuse_out.bias));
        v
    }

    pub fn param_count(&self) -> usize {
        self.paths.iter().map(PathParams::n_params).sum::<usize>()
            + self.fuse_hidden.n_params()
            + self.fuse_out.n_params()
    }
}

/// MFCC-only convolutional baseline with a 64 -> 32 -> 1 head.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineCnn<S> {
    pub arch: ArchConfig,
    pub feature_config: FeatureConfig,
    pub fingerprints: FeatureFingerprints,
    pub seed: u64,
    pub path: PathParams<S>,
    pub hidden: Dense<S>,
    pub out: Dense<S>,
    pub norm: Option<NormStats<S>>,
}

pub struct BaselineTrace<S> {
    path: PathTrace<S>,
    embedding: Tensor<S>,
    hidden_pre: Tensor<S>,
    hidden_relu: Tensor<S>,
}

impl<S: Scalar> BaselineCnn<S> {
    pub fn init(
        arch: ArchConfig,
        feature_config: FeatureConfig,
        fingerprints: FeatureFingerprints,
        seed: u64,
    ) -> Self {
        let mut rng = Rng::seed_from(seed);
        let path = PathParams::init(feature_config.rows_for(FeatureKind::Mfcc), &arch, &mut rng);
        let hidden = Dense::init(arch.embedding_dim(), arch.baseline_hidden, &mut rng);
        let out = Dense::init(arch.baseline_hidden, 1, &mut rng);
        BaselineCnn {
            arch,
            feature_config,
            fingerprints,
            seed,
            path,
            hidden,
            out,
            norm: None,
        }
    }

    pub fn prepare(&self, fm: &FeatureMatrix) -> Result<Tensor<S>, ModelError> {
        check_feature(fm, FeatureKind::Mfcc, &self.fingerprints, self.arch.min_frames())?;
        Ok(feature_to_tensor(fm, self.norm.as_ref()))
    }

    pub fn forward(&self, mfcc: &FeatureMatrix) -> Result<(S, S), ModelError> {
        let input = self.prepare(mfcc)?;
        let (logit, _) = self.forward_tensor(&input)?;
        Ok((logit, sigmoid(logit)))
    }

    pub fn forward_tensor(&self, input: &Tensor<S>) -> Result<(S, BaselineTrace<S>), NnError> {
        let (embedding, path) = self.path.forward(input)?;
        let hidden_pre = self.hidden.forward(&embedding)?;
        let hidden_relu = relu(&hidden_pre);
        let out = self.out.forward(&hidden_relu)?;
        Ok((
            out.values()[0],
            BaselineTrace {
                path,
                embedding,
                hidden_pre,
                hidden_relu,
            },
        ))
    }

    pub fn backward_tensor(&mut self, trace: &BaselineTrace<S>, d_logit: S) -> Result<(), NnError> {
        let d_out = Tensor::new(vec![1], vec![d_logit]);
        let (d_hidden_relu, gw, gb) = self.out.backward(&trace.hidden_relu, &d_out)?;
        self.out.weights.add_grad(gw.values())?;
        self.out.bias.add_grad(gb.values())?;
        let d_hidden_pre = relu_backward(&trace.hidden_pre, &d_hidden_relu)?;
        let (d_embedding, gw, gb) = self.hidden.backward(&trace.embedding, &d_hidden_pre)?;
        self.hidden.weights.add_grad(gw.values())?;
        self.hidden.bias.add_grad(gb.values())?;
        self.path.backward(&trace.path, &d_embedding)
    }

    pub fn param_tensors_mut(&mut self) -> Vec<&mut Tensor<S>> {
        vec![
            &mut self.path.conv1.weights,
            &mut self.path.conv1.bias,
            &mut self.path.conv2.weights,
            &mut self.path.conv2.bias,
            &mut self.hidden.weights,
            &mut self.hidden.bias,
            &mut self.out.weights,
            &mut self.out.bias,
        ]
    }

    pub fn named_params(&self) -> Vec<(String, &Tensor<S>)> {
        vec![
            ("path.mfcc.conv1.weight".into(), &self.path.conv1.weights),
            ("path.mfcc.conv1.bias".into(), &self.path.conv1.bias),
            ("path.mfcc.conv2.weight".into(), &self.path.conv2.weights),
            ("path.mfcc.conv2.bias".into(), &self.path.conv2.bias),
            ("head.hidden.weight".into(), &self.hidden.weights),
            ("head.hidden.bias".into(), &self.hidden.bias),
            ("head.out.weight".into(), &self.out.weights),
            ("head.out.bias".into(), &self.out.bias),
        ]
    }

    pub fn param_count(&self) -> usize {
        self.path.n_params() + self.hidden.n_params() + self.out.n_params()
    }
}

/// Either architecture behind one training/evaluation interface.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyModel<S> {
    Mfaan(MfaanModel<S>),
    Baseline(BaselineCnn<S>),
}

pub enum AnyTrace<S> {
    Mfaan(MfaanTrace<S>),
    Baseline(BaselineTrace<S>),
}

impl<S: Scalar> AnyModel<S> {
    pub fn init(
        kind: ModelKind,
        arch: ArchConfig,
        feature_config: FeatureConfig,
        fingerprints: FeatureFingerprints,
        seed: u64,
    ) -> Self {
        match kind {
            ModelKind::Mfaan => {
                AnyModel::Mfaan(MfaanModel::init(arch, feature_config, fingerprints, seed))
            }
            ModelKind::Baseline => {
                AnyModel::Baseline(BaselineCnn::init(arch, feature_config, fingerprints, seed))
            }
        }
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            AnyModel::Mfaan(_) => ModelKind::Mfaan,
            AnyModel::Baseline(_) => ModelKind::Baseline,
        }
    }

    pub fn arch(&self) -> &ArchConfig {
        match self {
            AnyModel::Mfaan(m) => &m.arch,
            AnyModel::Baseline(m) => &m.arch,
        }
    }

    pub fn feature_config(&self) -> &FeatureConfig {
        match self {
            AnyModel::Mfaan(m) => &m.feature_config,
            AnyModel::Baseline(m) => &m.feature_config,
        }
    }

    pub fn fingerprints(&self) -> FeatureFingerprints {
        match self {
            AnyModel::Mfaan(m) => m.fingerprints,
            AnyModel::Baseline(m) => m.fingerprints,
        }
    }

    pub fn seed(&self) -> u64 {
        match self {
            AnyModel::Mfaan(m) => m.seed,
            AnyModel::Baseline(m) => m.seed,
        }
    }

    pub fn prepare_sample(
        &self,
        mfcc: &FeatureMatrix,
        lfcc: &FeatureMatrix,
        chroma: &FeatureMatrix,
    ) -> Result<SampleTensors<S>, ModelError> {
        match self {
            AnyModel::Mfaan(m) => m.prepare_sample(mfcc, lfcc, chroma),
            AnyModel::Baseline(m) => Ok(SampleTensors {
                mfcc: m.prepare(mfcc)?,
                lfcc: Tensor::zeros(vec![1, 1]),
                chroma: Tensor::zeros(vec![1, 1]),
            }),
        }
    }

    pub fn forward_sample(&self, s: &SampleTensors<S>) -> Result<(S, AnyTrace<S>), NnError> {
        match self {
            AnyModel::Mfaan(m) => {
                let (logit, t) = m.forward_tensors(s)?;
                Ok((logit, AnyTrace::Mfaan(t)))
            }
            AnyModel::Baseline(m) => {
                let (logit, t) = m.forward_tensor(&s.mfcc)?;
                Ok((logit, AnyTrace::Baseline(t)))
            }
        }
    }

    pub fn backward_sample(&mut self, trace: &AnyTrace<S>, d_logit: S) -> Result<(), NnError> {
        match (self, trace) {
            (AnyModel::Mfaan(m), AnyTrace::Mfaan(t)) => m.backward_tensors(t, d_logit),
            (AnyModel::Baseline(m), AnyTrace::Baseline(t)) => m.backward_tensor(t, d_logit),
            _ => Err(NnError::ShapeMismatch(
                "trace does not belong to this model".into(),
            )),
        }
    }

    /// Spoof probability for one clip's feature triple.
    pub fn score(
        &self,
        mfcc: &FeatureMatrix,
        lfcc: &FeatureMatrix,
        chroma: &FeatureMatrix,
    ) -> Result<S, ModelError> {
        match self {
            AnyModel::Mfaan(m) => Ok(m.forward(mfcc, lfcc, chroma)?.1),
            AnyModel::Baseline(m) => Ok(m.forward(mfcc)?.1),
        }
    }

    pub fn param_tensors_mut(&mut self) -> Vec<&mut Tensor<S>> {
        match self {
            AnyModel::Mfaan(m) => m.param_tensors_mut(),
            AnyModel::Baseline(m) => m.param_tensors_mut(),
        }
    }

    pub fn param_sizes(&mut self) -> Vec<usize> {
        self.param_tensors_mut().iter().map(|t| t.len()).collect()
    }

    pub fn named_params(&self) -> Vec<(String, &Tensor<S>)> {
        match self {
            AnyModel::Mfaan(m) => m.named_params(),
            AnyModel::Baseline(m) => m.named_params(),
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            AnyModel::Mfaan(m) => m.param_count(),
            AnyModel::Baseline(m) => m.param_count(),
        }
    }

    /// Validates and normalizes raw f32 cache data for this model. Performs
    /// the same shape/frame checks as [`MfaanModel::prepare`]; fingerprint
    /// agreement is enforced at the cache level.
    pub fn prepare_cached(
        &self,
        kind: FeatureKind,
        rows: usize,
        cols: usize,
        data: &[f32],
    ) -> Result<Tensor<S>, ModelError> {
        let expect_rows = self.feature_config().rows_for(kind);
        if rows != expect_rows || rows * cols != data.len() {
            return Err(ModelError::Nn(NnError::ShapeMismatch(format!(
                "cached {} matrix is {rows}x{cols} with {} values, expected {expect_rows} rows",
                kind.name(),
                data.len()
            ))));
        }
        let min = self.arch().min_frames();
        if cols < min {
            return Err(ModelError::InputTooShort {
                kind: kind.name(),
                frames: cols,
                min,
            });
        }
        let norm = match self {
            AnyModel::Mfaan(m) => m.norm.as_ref().map(|n| &n[MfaanModel::<S>::path_index(kind)]),
            AnyModel::Baseline(m) => m.norm.as_ref(),
        };
        Ok(cache_entry_to_tensor(rows, cols, data, norm))
    }

    pub fn set_norm_stats(&mut self, stats: [NormStats<S>; 3]) {
        match self {
            AnyModel::Mfaan(m) => m.norm = Some(stats),
            AnyModel::Baseline(m) => {
                let [mfcc_stats, _, _] = stats;
                m.norm = Some(mfcc_stats);
            }
        }
    }
}

fn check_feature(
    fm: &FeatureMatrix,
    expected: FeatureKind,
    fingerprints: &FeatureFingerprints,
    min_frames: usize,
) -> Result<(), ModelError> {
    if fm.kind != expected {
        return Err(ModelError::KindMismatch {
            expected,
            found: fm.kind,
        });
    }
    let expect_fp = fingerprints.for_kind(expected);
    if fm.fingerprint != expect_fp {
        return Err(ModelError::FingerprintMismatch {
            kind: expected.name(),
            expected: expect_fp,
            found: fm.fingerprint,
        });
    }
    if fm.cols() < min_frames {
        return Err(ModelError::InputTooShort {
            kind: expected.name(),
            frames: fm.cols(),
            min: min_frames,
        });
    }
    Ok(())
}

/// Casts a feature matrix into compute precision and applies row z-scoring.
/// Cast happens first so that matrices read back from the f32 cache and
/// matrices extracted in-process produce identical tensors.
fn feature_to_tensor<S: Scalar>(fm: &FeatureMatrix, norm: Option<&NormStats<S>>) -> Tensor<S> {
    let (rows, cols) = (fm.rows(), fm.cols());
    let mut values: Vec<S> = fm
        .mat
        .data
        .iter()
        .map(|&v| S::cast_from(v as f32 as f64))
        .collect();
    if let Some(stats) = norm {
        let floor = S::cast_from(STD_FLOOR);
        for r in 0..rows {
            let mean = stats.mean[r];
            let std = stats.std[r].max(floor);
            for v in &mut values[r * cols..(r + 1) * cols] {
                *v = (*v - mean) / std;
            }
        }
    }
    Tensor::new(vec![rows, cols], values)
}

/// Normalizes raw f32 cache data into a compute-precision tensor using the
/// same arithmetic as [`feature_to_tensor`].
pub fn cache_entry_to_tensor<S: Scalar>(
    rows: usize,
    cols: usize,
    data: &[f32],
    norm: Option<&NormStats<S>>,
) -> Tensor<S> {
    let mut values: Vec<S> = data.iter().map(|&v| S::cast_from(v as f64)).collect();
    if let Some(stats) = norm {
        let floor = S::cast_from(STD_FLOOR);
        for r in 0..rows {
            let mean = stats.mean[r];
            let std = stats.std[r].max(floor);
            for v in &mut values[r * cols..(r + 1) * cols] {
                *v = (*v - mean) / std;
            }
        }
    }
    Tensor::new(vec![rows, cols], values)
}

/// Chroma rows are fixed by construction; expose the constant for head code.
pub const CHROMA_ROWS: usize = N_CHROMA;
