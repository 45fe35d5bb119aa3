//! Blind source separation: synthetic sources, linear and post-nonlinear
//! mixing, VCReg-based ICA trainers, a FastICA baseline, the max-correlation
//! metric, and dHSIC-based model selection.
//!
//! The linear trainer follows the single-branch scheme: whitened mixtures go
//! through a trainable linear map `M`, then a frozen random projector `g`
//! (one fully-connected layer of random weights followed by a ReLU by
//! default). The training loss pushes the batch's sample covariance —
//! embeddings as variables, features as observations — toward the identity
//! (`gram_identity_loss`), is backpropagated through the frozen projector
//! into `M`, and the projector is resampled after every step. The
//! post-nonlinear trainer swaps `M` for a small MLP encoder and adds a
//! reconstruction term through a learnable elementwise decoder.

use crate::kernel::dhsic_columns;
use crate::loss::{gram_identity_loss, LossTerms};
use crate::net::{Activation, DenseLayer, ElementwiseNet, Mlp, MlpGrads};
use crate::numerics::{center_columns, whiten, Optimizer, OptimizerKind, SeedRng};
use crate::projector::make_random_relu_stack;
use crate::{Error, Mat, Result, Vec64};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChannelTag {
    Signal,
    Noise,
}

/// Ground-truth sources with per-channel tags.
#[derive(Debug, Clone)]
pub struct SourceSet {
    /// N x D, every column zero-mean, unit-variance.
    pub s: Mat,
    pub tags: Vec<ChannelTag>,
    pub generators: Vec<String>,
    pub seed: u64,
}

impl SourceSet {
    pub fn signal_indices(&self) -> Vec<usize> {
        self.tags
            .iter()
            .enumerate()
            .filter(|(_, t)| **t == ChannelTag::Signal)
            .map(|(i, _)| i)
            .collect()
    }
}

/// The six-channel synthetic benchmark: four deterministic non-Gaussian
/// waveforms (sinusoid, amplitude-modulated sinusoid, sawtooth, square wave,
/// each with seeded frequency/phase jitter) plus two i.i.d. Gaussian noise
/// channels. Columns are standardized to zero mean and unit variance.
///
/// A jitter draw can land two waveforms on nearly coincident frequencies
/// (e.g. a sawtooth fundamental on top of the sinusoid), which makes the
/// channels strongly correlated and blind separation ill-posed regardless of
/// method. Draws are rejected and resampled until every off-diagonal channel
/// correlation is below 0.05.
pub fn generate_synthetic_sources(n: usize, rng: &mut SeedRng) -> Result<SourceSet> {
    for _ in 0..100 {
        let set = generate_sources_once(n, rng)?;
        let nm1 = (n - 1) as f64;
        let max_corr = (0..6)
            .flat_map(|a| ((a + 1)..6).map(move |b| (a, b)))
            .map(|(a, b)| (set.s.column(a).dot(&set.s.column(b)) / nm1).abs())
            .fold(0.0, f64::max);
        if max_corr < 0.05 {
            return Ok(set);
        }
    }
    Err(Error::InvalidParameter(
        "could not draw decorrelated sources in 100 attempts".into(),
    ))
}

fn generate_sources_once(n: usize, rng: &mut SeedRng) -> Result<SourceSet> {
    if n < 1000 {
        return Err(Error::InsufficientSamples { need: 1000, got: n });
    }
    let tau = std::f64::consts::TAU;
    let mut s = Mat::zeros(n, 6);
    let mut generators = Vec::new();

    let f = 0.011 + 0.008 * rng.uniform01();
    let phase = tau * rng.uniform01();
    for t in 0..n {
        s[(t, 0)] = (tau * f * t as f64 + phase).sin();
    }
    generators.push(format!("sinusoid(f={f:.6},phase={phase:.6})"));

    let fc = 0.027 + 0.012 * rng.uniform01();
    let fe = fc / 9.0;
    let pc = tau * rng.uniform01();
    let pe = tau * rng.uniform01();
    for t in 0..n {
        let carrier = (tau * fc * t as f64 + pc).sin();
        let envelope = 1.0 + 0.7 * (tau * fe * t as f64 + pe).sin();
        s[(t, 1)] = carrier * envelope;
    }
    generators.push(format!("am_sinusoid(fc={fc:.6},fe={fe:.6})"));

    let fs = 0.006 + 0.006 * rng.uniform01();
    let ps = rng.uniform01();
    for t in 0..n {
        let u = fs * t as f64 + ps;
        s[(t, 2)] = 2.0 * (u - u.floor()) - 1.0;
    }
    generators.push(format!("sawtooth(f={fs:.6})"));

    let fq = 0.014 + 0.01 * rng.uniform01();
    let pq = tau * rng.uniform01();
    for t in 0..n {
        s[(t, 3)] = if (tau * fq * t as f64 + pq).sin() >= 0.0 { 1.0 } else { -1.0 };
    }
    generators.push(format!("square(f={fq:.6})"));

    for k in [4usize, 5] {
        for t in 0..n {
            s[(t, k)] = rng.standard_normal();
        }
        generators.push("gaussian_noise".to_string());
    }

    // standardize: zero mean, unit (N-1) variance
    let nm1 = (n - 1) as f64;
    let mut s = center_columns(&s);
    for mut col in s.column_iter_mut() {
        let std = (col.norm_squared() / nm1).sqrt();
        col.scale_mut(1.0 / std);
    }

    let tags = vec![
        ChannelTag::Signal,
        ChannelTag::Signal,
        ChannelTag::Signal,
        ChannelTag::Signal,
        ChannelTag::Noise,
        ChannelTag::Noise,
    ];
    Ok(SourceSet { s, tags, generators, seed: rng.seed() })
}

/// 2-norm condition number via singular values.
pub fn condition_number(a: &Mat) -> f64 {
    let sv = a.clone().singular_values();
    let max = sv.max();
    let min = sv.min();
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Mixes with the given square matrix: `Y = S A`. Rejects near-singular `A`.
pub fn mix_with(s: &Mat, a: &Mat) -> Result<Mat> {
    if a.nrows() != s.ncols() || !a.is_square() {
        return Err(Error::ShapeMismatch(format!(
            "mixing matrix must be {0}x{0}, got {1}x{2}",
            s.ncols(),
            a.nrows(),
            a.ncols()
        )));
    }
    if condition_number(a) >= 1e6 {
        return Err(Error::IllConditionedMixing(1));
    }
    Ok(s * a)
}

/// Draws a standard-normal mixing matrix, redrawing until its condition
/// number is below 100 (at most 100 attempts), and mixes.
pub fn mix_linear(s: &Mat, rng: &mut SeedRng) -> Result<(Mat, Mat)> {
    let d = s.ncols();
    for _ in 0..100 {
        let a = Mat::from_fn(d, d, |_, _| rng.standard_normal());
        if condition_number(&a) < 100.0 {
            return Ok((s * &a, a));
        }
    }
    Err(Error::IllConditionedMixing(100))
}

/// Catalog of strictly monotone scalar nonlinearities for post-nonlinear
/// mixing.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum PnlNonlinearity {
    Identity,
    /// tanh(a x), a > 0
    Tanh { a: f64 },
    /// x + b x^3, b >= 0
    Cubic { b: f64 },
    /// sinh(a x) / a, a > 0
    Sinh { a: f64 },
}

impl PnlNonlinearity {
    /// Errors unless the entry is strictly monotone increasing.
    pub fn validate(&self) -> Result<()> {
        let ok = match self {
            PnlNonlinearity::Identity => true,
            PnlNonlinearity::Tanh { a } => *a > 0.0 && a.is_finite(),
            PnlNonlinearity::Cubic { b } => *b >= 0.0 && b.is_finite(),
            PnlNonlinearity::Sinh { a } => *a > 0.0 && a.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("non-monotone nonlinearity: {self:?}")))
        }
    }

    pub fn apply(&self, x: f64) -> f64 {
        match self {
            PnlNonlinearity::Identity => x,
            PnlNonlinearity::Tanh { a } => (a * x).tanh(),
            PnlNonlinearity::Cubic { b } => x + b * x * x * x,
            PnlNonlinearity::Sinh { a } => (a * x).sinh() / a,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MixingKind {
    Linear,
    Pnl,
}

#[derive(Debug, Clone)]
pub struct MixingSpec {
    pub kind: MixingKind,
    pub a: Mat,
    pub nonlinearities: Vec<PnlNonlinearity>,
}

/// Random post-nonlinear mixing spec: a well-conditioned linear mix followed
/// by a random catalog entry per channel with mild, seeded parameters.
pub fn random_pnl_spec(s: &Mat, rng: &mut SeedRng) -> Result<MixingSpec> {
    let d = s.ncols();
    let (_, a) = mix_linear(s, rng)?;
    let nonlinearities = (0..d)
        .map(|_| match rng.below(3) {
            0 => PnlNonlinearity::Tanh { a: 0.08 + 0.1 * rng.uniform01() },
            1 => PnlNonlinearity::Cubic { b: 0.02 + 0.06 * rng.uniform01() },
            _ => PnlNonlinearity::Sinh { a: 0.1 + 0.12 * rng.uniform01() },
        })
        .collect();
    Ok(MixingSpec { kind: MixingKind::Pnl, a, nonlinearities })
}

/// Post-nonlinear mixing: `Y[:,k] = f_k((S A)[:,k])`.
pub fn mix_pnl(s: &Mat, spec: &MixingSpec) -> Result<Mat> {
    if spec.kind != MixingKind::Pnl {
        return Err(Error::InvalidParameter("mixing spec is not post-nonlinear".into()));
    }
    if spec.nonlinearities.len() != s.ncols() {
        return Err(Error::ShapeMismatch(format!(
            "{} nonlinearities for {} channels",
            spec.nonlinearities.len(),
            s.ncols()
        )));
    }
    for f in &spec.nonlinearities {
        f.validate()?;
    }
    let mut y = mix_with(s, &spec.a)?;
    for (k, mut col) in y.column_iter_mut().enumerate() {
        let f = spec.nonlinearities[k];
        for v in col.iter_mut() {
            *v = f.apply(*v);
        }
    }
    Ok(y)
}

/// One seeded benchmark instance: sources, the mixing spec, and the observed
/// mixtures. Sources and mixing are drawn from separate sub-streams of
/// `seed`, so the same seed always produces the same instance regardless of
/// what is done with it afterwards.
pub fn synthetic_mixture(kind: MixingKind, n: usize, seed: u64) -> Result<(SourceSet, MixingSpec, Mat)> {
    let root = SeedRng::new(seed);
    let set = generate_synthetic_sources(n, &mut root.stream(11))?;
    let mut mix_rng = root.stream(12);
    match kind {
        MixingKind::Linear => {
            let (y, a) = mix_linear(&set.s, &mut mix_rng)?;
            let spec = MixingSpec { kind: MixingKind::Linear, a, nonlinearities: Vec::new() };
            Ok((set, spec, y))
        }
        MixingKind::Pnl => {
            let spec = random_pnl_spec(&set.s, &mut mix_rng)?;
            let y = mix_pnl(&set.s, &spec)?;
            Ok((set, spec, y))
        }
    }
}

/// Mean absolute Pearson correlation between the signal-tagged true channels
/// and the recovered channels, under the optimal one-to-one assignment.
/// Zero-variance recovered channels contribute zero correlation.
pub fn max_correlation(s_true: &Mat, tags: &[ChannelTag], s_rec: &Mat) -> Result<f64> {
    let corr = signal_correlation_matrix(s_true, tags, s_rec)?;
    let mut used = vec![false; corr.ncols()];
    let best = best_assignment(&corr, 0, &mut used);
    Ok(best / corr.nrows() as f64)
}

/// Largest single absolute Pearson correlation over all (signal channel,
/// recovered channel) pairs. A weaker score than [`max_correlation`]: it
/// reports how well the single best-recovered source matches, which is the
/// natural statistic for baselines (e.g. whitening) that recover only a
/// rotation-ambiguous mixture rather than all channels.
pub fn peak_correlation(s_true: &Mat, tags: &[ChannelTag], s_rec: &Mat) -> Result<f64> {
    let corr = signal_correlation_matrix(s_true, tags, s_rec)?;
    Ok(corr.iter().fold(0.0f64, |m, &v| m.max(v)))
}

/// |Pearson| matrix between signal-tagged true channels (rows) and recovered
/// channels (columns); zero-variance channels yield zero correlation.
fn signal_correlation_matrix(s_true: &Mat, tags: &[ChannelTag], s_rec: &Mat) -> Result<Mat> {
    if s_true.nrows() != s_rec.nrows() {
        return Err(Error::ShapeMismatch(format!(
            "sample counts differ: {} vs {}",
            s_true.nrows(),
            s_rec.nrows()
        )));
    }
    if tags.len() != s_true.ncols() {
        return Err(Error::ShapeMismatch("one tag per true channel required".into()));
    }
    let signals: Vec<usize> = tags
        .iter()
        .enumerate()
        .filter(|(_, t)| **t == ChannelTag::Signal)
        .map(|(i, _)| i)
        .collect();
    if signals.is_empty() {
        return Err(Error::InvalidParameter("no signal channels to score".into()));
    }
    if s_rec.ncols() < signals.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} recovered channels for {} signals",
            s_rec.ncols(),
            signals.len()
        )));
    }
    let tc = center_columns(s_true);
    let rc = center_columns(s_rec);
    Ok(Mat::from_fn(signals.len(), s_rec.ncols(), |i, j| {
        let a = tc.column(signals[i]);
        let b = rc.column(j);
        let denom = a.norm() * b.norm();
        if denom == 0.0 {
            0.0
        } else {
            (a.dot(&b) / denom).abs()
        }
    }))
}

fn best_assignment(c: &Mat, row: usize, used: &mut [bool]) -> f64 {
    if row == c.nrows() {
        return 0.0;
    }
    let mut best = f64::NEG_INFINITY;
    for j in 0..c.ncols() {
        if !used[j] {
            used[j] = true;
            best = best.max(c[(row, j)] + best_assignment(c, row + 1, used));
            used[j] = false;
        }
    }
    best
}

/// Picks the checkpoint whose recovered channels have the lowest dHSIC;
/// ties break toward the earliest entry.
pub fn select_model_by_dhsic(checkpoints: &[(usize, Mat)]) -> Result<usize> {
    if checkpoints.is_empty() {
        return Err(Error::EmptyCheckpoints);
    }
    let mut best_id = checkpoints[0].0;
    let mut best_value = f64::INFINITY;
    for (id, x) in checkpoints {
        let value = dhsic_columns(x)?;
        if value < best_value {
            best_value = value;
            best_id = *id;
        }
    }
    Ok(best_id)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FastIcaContrast {
    Tanh,
    Cube,
}

#[derive(Debug, Clone)]
pub struct FastIcaResult {
    /// n_components x D unmixing rows, orthonormal.
    pub w: Mat,
    pub converged: bool,
    pub iterations: usize,
}

impl FastIcaResult {
    /// Recovered sources for whitened data: `X W^T`.
    pub fn recover(&self, y_whitened: &Mat) -> Mat {
        y_whitened * self.w.transpose()
    }
}

fn symmetric_decorrelation(w: &Mat) -> Mat {
    let gram = w * w.transpose();
    let eig = gram.symmetric_eigen();
    let inv_sqrt = Mat::from_fn(w.nrows(), w.nrows(), |i, j| {
        let mut acc = 0.0;
        for k in 0..w.nrows() {
            acc += eig.eigenvectors[(i, k)] * eig.eigenvectors[(j, k)]
                / eig.eigenvalues[k].max(1e-300).sqrt();
        }
        acc
    });
    inv_sqrt * w
}

/// Fixed-point FastICA with symmetric decorrelation on whitened data.
/// Non-convergence after `max_iter` returns the best iterate with
/// `converged = false`.
pub fn fastica(
    y_whitened: &Mat,
    n_components: usize,
    contrast: FastIcaContrast,
    max_iter: usize,
    tol: f64,
    rng: &mut SeedRng,
) -> Result<FastIcaResult> {
    let (n, d) = y_whitened.shape();
    if n_components == 0 || n_components > d {
        return Err(Error::InvalidParameter(format!(
            "n_components must be in 1..={d}, got {n_components}"
        )));
    }
    if n < 2 {
        return Err(Error::InsufficientSamples { need: 2, got: n });
    }
    if max_iter == 0 || tol <= 0.0 {
        return Err(Error::InvalidParameter("need max_iter >= 1 and tol > 0".into()));
    }
    let mut w = Mat::from_fn(n_components, d, |_, _| rng.standard_normal());
    w = symmetric_decorrelation(&w);
    for iter in 1..=max_iter {
        // projections U = Y W^T  (N x k)
        let u = y_whitened * w.transpose();
        let (g, g_prime_mean): (Mat, Vec<f64>) = match contrast {
            FastIcaContrast::Tanh => {
                let g = u.map(|v| v.tanh());
                let means = (0..n_components)
                    .map(|k| g.column(k).iter().map(|t| 1.0 - t * t).sum::<f64>() / n as f64)
                    .collect();
                (g, means)
            }
            FastIcaContrast::Cube => {
                let g = u.map(|v| v * v * v);
                let means = (0..n_components)
                    .map(|k| u.column(k).iter().map(|v| 3.0 * v * v).sum::<f64>() / n as f64)
                    .collect();
                (g, means)
            }
        };
        // w_k <- E[y g(u_k)] - E[g'(u_k)] w_k
        let mut w_new = (g.transpose() * y_whitened) / n as f64;
        for k in 0..n_components {
            let mut row = w_new.row_mut(k);
            row -= w.row(k) * g_prime_mean[k];
        }
        w_new = symmetric_decorrelation(&w_new);
        let mut delta = 0.0f64;
        for k in 0..n_components {
            delta = delta.max((1.0 - w_new.row(k).dot(&w.row(k)).abs()).abs());
        }
        w = w_new;
        if delta < tol {
            return Ok(FastIcaResult { w, converged: true, iterations: iter });
        }
    }
    Ok(FastIcaResult { w, converged: false, iterations: max_iter })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Selection {
    Last,
    LowestDhsic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LrSchedule {
    Constant,
    Cosine,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderKind {
    Linear,
    Mlp,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct IcaRunConfig {
    pub encoder: EncoderKind,
    pub width: usize,
    pub layers: usize,
    pub with_bn: bool,
    pub var_weight: f64,
    pub cov_weight: f64,
    pub rec_weight: f64,
    pub optimizer: OptimizerKind,
    /// Base learning rate; the effective rate is `lr * batch / 256`.
    pub lr: f64,
    pub lr_schedule: LrSchedule,
    pub batch: usize,
    pub epochs: usize,
    pub resample_every_step: bool,
    pub selection: Selection,
    pub seed: u64,
}

impl Default for IcaRunConfig {
    fn default() -> Self {
        Self {
            encoder: EncoderKind::Linear,
            width: 1024,
            layers: 1,
            with_bn: false,
            var_weight: 1.0,
            cov_weight: 1.0,
            rec_weight: 1.0,
            optimizer: OptimizerKind::Sgd,
            lr: 100.0,
            lr_schedule: LrSchedule::Cosine,
            batch: 64,
            epochs: 100,
            resample_every_step: true,
            selection: Selection::LowestDhsic,
            seed: 0,
        }
    }
}

impl IcaRunConfig {
    pub fn effective_lr(&self) -> f64 {
        self.lr * self.batch as f64 / 256.0
    }

    /// Learning-rate multiplier for `epoch` in `1..=epochs`: 1 for the
    /// constant schedule, a half-cosine from 1 toward 0 otherwise.
    pub fn lr_factor(&self, epoch: usize) -> f64 {
        match self.lr_schedule {
            LrSchedule::Constant => 1.0,
            LrSchedule::Cosine => {
                0.5 * (1.0 + (std::f64::consts::PI * (epoch - 1) as f64 / self.epochs as f64).cos())
            }
        }
    }

    fn validate(&self, n: usize) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidParameter("epochs must be >= 1".into()));
        }
        if self.batch == 0 || self.batch > n {
            return Err(Error::InvalidParameter(format!(
                "batch must be in 1..={n}, got {}",
                self.batch
            )));
        }
        if self.lr <= 0.0 || self.var_weight < 0.0 || self.cov_weight < 0.0 || self.rec_weight < 0.0 {
            return Err(Error::InvalidParameter("weights must be >= 0 and lr > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub total: f64,
    pub terms: LossTerms,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub dhsic: f64,
    pub max_correlation: Option<f64>,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct TrainingHistory {
    pub steps: Vec<StepRecord>,
    /// Epoch 0 records the initialization state.
    pub epochs: Vec<EpochRecord>,
    pub selected_checkpoint: usize,
    /// Step index of the first non-finite loss, if training diverged; the
    /// returned state is the last finite one.
    pub diverged_at: Option<usize>,
}

/// Ground truth handed to trainers so histories can track max_correlation.
pub type GroundTruth<'a> = (&'a Mat, &'a [ChannelTag]);

/// Rows used for per-epoch dHSIC tracking, evenly strided and capped for
/// speed. An even stride covers whole periods of the oscillatory sources;
/// uniformly random subsets over-represent some phases and make the tracked
/// dHSIC too noisy to rank checkpoints.
fn tracking_rows(n: usize) -> Vec<usize> {
    const CAP: usize = 384;
    if n <= CAP {
        (0..n).collect()
    } else {
        let stride = n / CAP;
        (0..CAP).map(|i| i * stride).collect()
    }
}

fn dhsic_or_inf(x: &Mat) -> f64 {
    dhsic_columns(x).unwrap_or(f64::INFINITY)
}

pub struct LinearIcaResult {
    /// Unmixing map at the selected checkpoint (applied to whitened data).
    pub m: Mat,
    /// Whitening transform and the column means it removes.
    pub whitening: Mat,
    pub mean: Vec64,
    /// Full-data recovered sources at the selected checkpoint.
    pub recovered: Mat,
    pub history: TrainingHistory,
}

/// Linear ICA by VCReg: whiten, then train `M` so that the frozen random
/// projector's output decorrelates. See the module docs for the loop.
pub fn train_linear_ica(
    y: &Mat,
    cfg: &IcaRunConfig,
    ground_truth: Option<GroundTruth>,
) -> Result<LinearIcaResult> {
    let (n, d) = y.shape();
    cfg.validate(n)?;
    if cfg.encoder != EncoderKind::Linear {
        return Err(Error::InvalidParameter("linear trainer needs encoder = linear".into()));
    }
    let (white, whitening, mean) = whiten(y, 1e-8)?;

    let root = SeedRng::new(cfg.seed);
    let mut proj_rng = root.stream(1);
    let mut data_rng = root.stream(2);
    let mut bn_rng = root.stream(3);

    let mut projector = make_random_relu_stack(d, cfg.width, cfg.layers, cfg.with_bn, &mut proj_rng)?;
    let mut m = Mat::identity(d, d);
    let mut opt = match cfg.optimizer {
        OptimizerKind::Sgd => Optimizer::sgd(cfg.effective_lr(), 0.9)?,
        OptimizerKind::Adam => Optimizer::adam(cfg.effective_lr())?,
    };

    let track = tracking_rows(n);
    let track_white = Mat::from_fn(track.len(), d, |i, j| white[(track[i], j)]);

    let mut history = TrainingHistory {
        steps: Vec::new(),
        epochs: Vec::new(),
        selected_checkpoint: 0,
        diverged_at: None,
    };
    let mut checkpoints: Vec<(usize, Mat)> = Vec::new();
    let record_epoch = |epoch: usize,
                            m: &Mat,
                            history: &mut TrainingHistory,
                            checkpoints: &mut Vec<(usize, Mat)>| {
        let x_track = &track_white * m;
        let max_corr = ground_truth
            .map(|(s, tags)| max_correlation(s, tags, &(&white * m)))
            .transpose()
            .unwrap_or(None);
        history.epochs.push(EpochRecord { epoch, dhsic: dhsic_or_inf(&x_track), max_correlation: max_corr });
        checkpoints.push((epoch, m.clone()));
    };
    record_epoch(0, &m, &mut history, &mut checkpoints);

    let steps_per_epoch = n / cfg.batch;
    let mut step = 0usize;
    'training: for epoch in 1..=cfg.epochs {
        opt.set_learning_rate(cfg.effective_lr() * cfg.lr_factor(epoch))?;
        let mut order: Vec<usize> = (0..n).collect();
        data_rng.shuffle(&mut order);
        for b in 0..steps_per_epoch {
            let rows = &order[b * cfg.batch..(b + 1) * cfg.batch];
            let yb = Mat::from_fn(cfg.batch, d, |i, j| white[(rows[i], j)]);
            let x = &yb * &m;
            let (z, tape) = projector.forward(&x, &mut bn_rng)?;
            let loss = gram_identity_loss(&z, cfg.var_weight, cfg.cov_weight)?;
            if !loss.total.is_finite() {
                history.diverged_at = Some(step);
                break 'training;
            }
            let dx = projector.input_grad(&tape, &loss.grad)?;
            let dm = yb.transpose() * dx;
            opt.step("M", &mut m, &dm)?;
            if !m.iter().all(|v| v.is_finite()) {
                history.diverged_at = Some(step);
                break 'training;
            }
            history.steps.push(StepRecord { step, total: loss.total, terms: loss.terms });
            if cfg.resample_every_step {
                projector = projector.resample(&mut proj_rng);
            }
            step += 1;
        }
        record_epoch(epoch, &m, &mut history, &mut checkpoints);
    }

    let selected = match cfg.selection {
        Selection::Last => checkpoints.last().unwrap().0,
        Selection::LowestDhsic => {
            let mut best = (f64::INFINITY, 0usize);
            for rec in &history.epochs {
                if rec.dhsic < best.0 {
                    best = (rec.dhsic, rec.epoch);
                }
            }
            best.1
        }
    };
    history.selected_checkpoint = selected;
    let m_sel = checkpoints
        .iter()
        .find(|(id, _)| *id == selected)
        .map(|(_, m)| m.clone())
        .unwrap();
    let recovered = &white * &m_sel;
    Ok(LinearIcaResult { m: m_sel, whitening, mean, recovered, history })
}

/// Decoder for post-nonlinear ICA: a learnable elementwise nonlinearity per
/// channel followed by a fully-connected layer.
#[derive(Debug, Clone)]
pub struct PnlDecoder {
    pub elementwise: ElementwiseNet,
    pub linear: DenseLayer,
}

pub struct PnlDecoderCache {
    ew_cache: crate::net::ElementwiseCache,
    ew_out: Mat,
}

pub struct PnlDecoderGrads {
    pub ew: Vec<MlpGrads>,
    pub linear: DenseLayer,
}

impl PnlDecoder {
    pub fn new(d: usize, rng: &mut SeedRng) -> Result<Self> {
        let elementwise = ElementwiseNet::new(d, &[16, 16, 16], Activation::Tanh, rng)?;
        let bound = 1.0 / (d as f64).sqrt();
        let linear = DenseLayer {
            w: Mat::from_fn(d, d, |_, _| rng.uniform_symmetric(bound)),
            b: Mat::zeros(1, d),
        };
        Ok(Self { elementwise, linear })
    }

    pub fn forward(&self, x: &Mat) -> Result<(Mat, PnlDecoderCache)> {
        let (ew_out, ew_cache) = self.elementwise.forward(x)?;
        let mut out = &ew_out * &self.linear.w;
        for mut row in out.row_iter_mut() {
            row += self.linear.b.row(0);
        }
        Ok((out, PnlDecoderCache { ew_cache, ew_out }))
    }

    pub fn backward(&self, cache: &PnlDecoderCache, d_out: &Mat) -> Result<(Mat, PnlDecoderGrads)> {
        let dw = cache.ew_out.transpose() * d_out;
        let db = Mat::from_fn(1, d_out.ncols(), |_, j| d_out.column(j).sum());
        let d_ew_out = d_out * self.linear.w.transpose();
        let (d_in, ew) = self.elementwise.backward(&cache.ew_cache, &d_ew_out)?;
        Ok((d_in, PnlDecoderGrads { ew, linear: DenseLayer { w: dw, b: db } }))
    }

    pub fn apply_grads(&mut self, opt: &mut Optimizer, grads: &PnlDecoderGrads) -> Result<()> {
        self.elementwise.apply_grads(opt, "dec.ew", &grads.ew)?;
        opt.step("dec.w", &mut self.linear.w, &grads.linear.w)?;
        opt.step("dec.b", &mut self.linear.b, &grads.linear.b)?;
        Ok(())
    }
}

pub struct PnlIcaResult {
    /// Encoder at the selected checkpoint.
    pub encoder: Mlp,
    pub whitening: Mat,
    pub mean: Vec64,
    pub recovered: Mat,
    pub history: TrainingHistory,
}

/// Post-nonlinear ICA: a trainable MLP encoder feeds the frozen projector;
/// the loss adds `rec_weight` times the mean squared reconstruction error of
/// the (whitened) mixtures through a learnable elementwise decoder.
///
/// The encoder has an identity skip connection — `X = Y + mlp(Y)` — so the
/// whitened structure of the input survives initialization; a random dense
/// MLP at init scores well below the whitening baseline and dHSIC-based
/// selection can never climb back above it.
pub fn train_pnl_ica(
    y: &Mat,
    cfg: &IcaRunConfig,
    ground_truth: Option<GroundTruth>,
) -> Result<PnlIcaResult> {
    let (n, d) = y.shape();
    cfg.validate(n)?;
    if cfg.encoder != EncoderKind::Mlp {
        return Err(Error::InvalidParameter("post-nonlinear trainer needs encoder = mlp".into()));
    }
    let (white, whitening, mean) = whiten(y, 1e-8)?;

    let root = SeedRng::new(cfg.seed);
    let mut proj_rng = root.stream(1);
    let mut data_rng = root.stream(2);
    let mut bn_rng = root.stream(3);
    let mut net_rng = root.stream(5);

    let mut projector = make_random_relu_stack(d, cfg.width, cfg.layers, cfg.with_bn, &mut proj_rng)?;
    let mut encoder = Mlp::new(&[d, 128, 128, d], Activation::Tanh, &mut net_rng)?;
    // zero the output layer: with the identity skip the initial encoder is
    // exactly the whitening map, the strongest second-order starting point
    if let Some(last) = encoder.layers.last_mut() {
        last.w.fill(0.0);
        last.b.fill(0.0);
    }
    let mut decoder = PnlDecoder::new(d, &mut net_rng)?;
    let mut opt = match cfg.optimizer {
        OptimizerKind::Sgd => Optimizer::sgd(cfg.effective_lr(), 0.9)?,
        OptimizerKind::Adam => Optimizer::adam(cfg.effective_lr())?,
    };

    let track = tracking_rows(n);
    let track_white = Mat::from_fn(track.len(), d, |i, j| white[(track[i], j)]);

    let mut history = TrainingHistory {
        steps: Vec::new(),
        epochs: Vec::new(),
        selected_checkpoint: 0,
        diverged_at: None,
    };
    let mut checkpoints: Vec<(usize, Mlp)> = Vec::new();
    let record_epoch = |epoch: usize,
                            encoder: &Mlp,
                            history: &mut TrainingHistory,
                            checkpoints: &mut Vec<(usize, Mlp)>|
     -> Result<()> {
        let x_track = &track_white + encoder.forward(&track_white)?.0;
        let max_corr = match ground_truth {
            Some((s, tags)) => {
                Some(max_correlation(s, tags, &(&white + encoder.forward(&white)?.0))?)
            }
            None => None,
        };
        history.epochs.push(EpochRecord { epoch, dhsic: dhsic_or_inf(&x_track), max_correlation: max_corr });
        checkpoints.push((epoch, encoder.clone()));
        Ok(())
    };
    record_epoch(0, &encoder, &mut history, &mut checkpoints)?;

    let steps_per_epoch = n / cfg.batch;
    let inv_bd = 1.0 / (cfg.batch * d) as f64;
    let mut step = 0usize;
    'training: for epoch in 1..=cfg.epochs {
        opt.set_learning_rate(cfg.effective_lr() * cfg.lr_factor(epoch))?;
        let mut order: Vec<usize> = (0..n).collect();
        data_rng.shuffle(&mut order);
        for b in 0..steps_per_epoch {
            let rows = &order[b * cfg.batch..(b + 1) * cfg.batch];
            let yb = Mat::from_fn(cfg.batch, d, |i, j| white[(rows[i], j)]);
            let (res_x, enc_cache) = encoder.forward(&yb)?;
            let x = &yb + res_x;
            let (z, tape) = projector.forward(&x, &mut bn_rng)?;
            let vc = gram_identity_loss(&z, cfg.var_weight, cfg.cov_weight)?;
            let (y_rec, dec_cache) = decoder.forward(&x)?;
            let resid = &y_rec - &yb;
            let rec_loss = resid.norm_squared() * inv_bd;
            let total = vc.total + cfg.rec_weight * rec_loss;
            if !total.is_finite() {
                history.diverged_at = Some(step);
                break 'training;
            }
            // gradient into X from both heads
            let dx_proj = projector.input_grad(&tape, &vc.grad)?;
            let d_yrec = resid * (2.0 * cfg.rec_weight * inv_bd);
            let (dx_dec, dec_grads) = decoder.backward(&dec_cache, &d_yrec)?;
            let dx = dx_proj + dx_dec;
            let (_, enc_grads) = encoder.backward(&enc_cache, &dx)?;
            encoder.apply_grads(&mut opt, "enc", &enc_grads)?;
            decoder.apply_grads(&mut opt, &dec_grads)?;
            let finite = encoder.layers.iter().all(|l| {
                l.w.iter().all(|v| v.is_finite()) && l.b.iter().all(|v| v.is_finite())
            });
            if !finite {
                history.diverged_at = Some(step);
                break 'training;
            }
            history.steps.push(StepRecord {
                step,
                total,
                terms: LossTerms { reconstruction: rec_loss, ..vc.terms },
            });
            if cfg.resample_every_step {
                projector = projector.resample(&mut proj_rng);
            }
            step += 1;
        }
        record_epoch(epoch, &encoder, &mut history, &mut checkpoints)?;
    }

    let selected = match cfg.selection {
        Selection::Last => checkpoints.last().unwrap().0,
        Selection::LowestDhsic => {
            let mut best = (f64::INFINITY, 0usize);
            for rec in &history.epochs {
                if rec.dhsic < best.0 {
                    best = (rec.dhsic, rec.epoch);
                }
            }
            best.1
        }
    };
    history.selected_checkpoint = selected;
    let enc_sel = checkpoints
        .iter()
        .find(|(id, _)| *id == selected)
        .map(|(_, e)| e.clone())
        .unwrap();
    let recovered = &white + enc_sel.forward(&white)?.0;
    Ok(PnlIcaResult { encoder: enc_sel, whitening, mean, recovered, history })
}
