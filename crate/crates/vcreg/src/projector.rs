//! Frozen random projectors: random linear maps, elementwise random-feature
//! nonlinearities built from randomized batch normalization, and random MLPs.
//!
//! A projector is immutable after construction; `resample` returns a fresh
//! draw with the same shape. `forward` returns the embedding together with a
//! tape (ReLU masks, BN scales) that `input_grad` replays in reverse to get
//! the exact gradient with respect to the input. Randomized-BN statistics are
//! drawn fresh on every forward pass and are treated as constants by the
//! gradient (no gradient flows through the drawn mean or std).

use rand_distr::{Distribution, Gamma, Normal};

use crate::numerics::SeedRng;
use crate::{Error, Mat, Result, Vec64};

/// Hyper-distributions for randomized batch normalization.
///
/// Per feature, each forward pass draws a mean `m ~ Normal(mean_loc,
/// mean_scale)` and a std `s ~ Gamma(shape = std_mean^2/std_var, rate =
/// std_mean/std_var)`, then outputs `(x - m) / sqrt(s^2 + eps)`. A zero
/// `mean_scale` or `std_var` degenerates to deterministic draws.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RandomizedBnParams {
    pub mean_loc: f64,
    pub mean_scale: f64,
    pub std_mean: f64,
    pub std_var: f64,
    pub eps: f64,
}

impl Default for RandomizedBnParams {
    fn default() -> Self {
        Self { mean_loc: 0.0, mean_scale: 1.0, std_mean: 1.0, std_var: 0.25, eps: 1e-5 }
    }
}

impl RandomizedBnParams {
    pub fn validate(&self) -> Result<()> {
        let all = [self.mean_loc, self.mean_scale, self.std_mean, self.std_var, self.eps];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("randomized BN parameters must be finite".into()));
        }
        if self.std_mean <= 0.0 || self.std_var < 0.0 || self.mean_scale < 0.0 || self.eps <= 0.0 {
            return Err(Error::InvalidParameter(
                "randomized BN needs std_mean > 0, std_var >= 0, mean_scale >= 0, eps > 0".into(),
            ));
        }
        Ok(())
    }

    fn draw_mean(&self, rng: &mut SeedRng) -> f64 {
        if self.mean_scale == 0.0 {
            self.mean_loc
        } else {
            Normal::new(self.mean_loc, self.mean_scale).unwrap().sample(rng.inner())
        }
    }

    fn draw_std(&self, rng: &mut SeedRng) -> f64 {
        if self.std_var == 0.0 {
            self.std_mean
        } else {
            // shape = mean^2/var, rate = mean/var (rand_distr takes scale = 1/rate)
            let shape = self.std_mean * self.std_mean / self.std_var;
            let scale = self.std_var / self.std_mean;
            Gamma::new(shape, scale).unwrap().sample(rng.inner())
        }
    }
}

#[derive(Debug, Clone)]
pub enum Layer {
    Linear { w: Mat, bias: Vec64 },
    /// Tile the input features `copies` times side by side.
    Replicate { copies: usize },
    RandomizedBn { params: RandomizedBnParams },
    Relu,
}

/// Frozen random network. `version` invalidates tapes across resamples.
#[derive(Debug, Clone)]
pub struct Projector {
    pub layers: Vec<Layer>,
    pub input_dim: usize,
    pub output_dim: usize,
    pub seed: u64,
    version: u64,
}

/// Per-layer records from one forward pass, replayed by `input_grad`.
#[derive(Debug, Clone)]
enum TapeRecord {
    Linear,
    Replicate,
    ReluMask(Mat),
    /// Per-feature multiplier `1/sqrt(s^2 + eps)`.
    BnScale(Vec<f64>),
}

#[derive(Debug, Clone)]
pub struct Tape {
    version: u64,
    records: Vec<TapeRecord>,
    /// Smallest |pre-activation| seen at any ReLU; useful for rejecting
    /// kink-adjacent points in finite-difference checks.
    pub min_pre_activation_abs: f64,
}

fn random_linear_layer(fan_in: usize, fan_out: usize, rng: &mut SeedRng) -> Layer {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let w = Mat::from_fn(fan_in, fan_out, |_, _| rng.uniform_symmetric(bound));
    Layer::Linear { w, bias: Vec64::zeros(fan_out) }
}

/// Single linear layer, weights i.i.d. uniform on (-1/sqrt(D), 1/sqrt(D)), no bias.
pub fn make_random_linear(d: usize, p: usize, rng: &mut SeedRng) -> Projector {
    Projector {
        layers: vec![random_linear_layer(d, p, rng)],
        input_dim: d,
        output_dim: p,
        seed: rng.seed(),
        version: 0,
    }
}

/// Maps each of the D input features independently through L randomized-BN ->
/// ReLU channels; output dimension D * L. The per-channel randomness lives in
/// the BN draws, refreshed on every forward pass.
pub fn make_elementwise_random_feature(
    d: usize,
    l: usize,
    params: RandomizedBnParams,
    rng: &mut SeedRng,
) -> Result<Projector> {
    if d == 0 || l == 0 {
        return Err(Error::InvalidParameter("need D >= 1 and L >= 1".into()));
    }
    params.validate()?;
    Ok(Projector {
        layers: vec![
            Layer::Replicate { copies: l },
            Layer::RandomizedBn { params },
            Layer::Relu,
        ],
        input_dim: d,
        output_dim: d * l,
        seed: rng.seed(),
        version: 0,
    })
}

/// Random MLP: for each hidden width a linear layer (uniform +-1/sqrt(fan-in),
/// zero bias), optional randomized BN, then ReLU; final linear layer to P.
pub fn make_random_mlp(
    d: usize,
    widths: &[usize],
    p: usize,
    with_bn: bool,
    rng: &mut SeedRng,
) -> Result<Projector> {
    if widths.is_empty() {
        return Err(Error::InvalidParameter("widths must be non-empty".into()));
    }
    let mut layers = Vec::new();
    let mut fan_in = d;
    for &w in widths {
        layers.push(random_linear_layer(fan_in, w, rng));
        if with_bn {
            layers.push(Layer::RandomizedBn { params: RandomizedBnParams::default() });
        }
        layers.push(Layer::Relu);
        fan_in = w;
    }
    layers.push(random_linear_layer(fan_in, p, rng));
    Ok(Projector { layers, input_dim: d, output_dim: p, seed: rng.seed(), version: 0 })
}

/// Random feature stack without a final linear layer: each of `layers`
/// blocks is linear (uniform +-1/sqrt(fan-in)), optional randomized BN, then
/// ReLU; the last ReLU output is the embedding. This is the "fully-connected
/// layer followed by a ReLU" projector shape used by the ICA trainers.
pub fn make_random_relu_stack(
    d: usize,
    width: usize,
    layers: usize,
    with_bn: bool,
    rng: &mut SeedRng,
) -> Result<Projector> {
    if d == 0 || width == 0 || layers == 0 {
        return Err(Error::InvalidParameter("need D, width, layers >= 1".into()));
    }
    let mut stack = Vec::new();
    let mut fan_in = d;
    for _ in 0..layers {
        stack.push(random_linear_layer(fan_in, width, rng));
        if with_bn {
            stack.push(Layer::RandomizedBn { params: RandomizedBnParams::default() });
        }
        stack.push(Layer::Relu);
        fan_in = width;
    }
    Ok(Projector { layers: stack, input_dim: d, output_dim: width, seed: rng.seed(), version: 0 })
}

/// Randomized batch normalization as a standalone op: per feature, draw
/// (mean, std) and apply `(x - m)/sqrt(s^2 + eps)`.
pub fn randomized_bn_forward(x: &Mat, params: &RandomizedBnParams, rng: &mut SeedRng) -> Result<Mat> {
    params.validate()?;
    let (out, _) = bn_apply(x, params, rng);
    Ok(out)
}

fn bn_apply(x: &Mat, params: &RandomizedBnParams, rng: &mut SeedRng) -> (Mat, Vec<f64>) {
    let mut out = x.clone();
    let mut scales = Vec::with_capacity(x.ncols());
    for mut col in out.column_iter_mut() {
        let m = params.draw_mean(rng);
        let s = params.draw_std(rng);
        let scale = 1.0 / (s * s + params.eps).sqrt();
        col.add_scalar_mut(-m);
        col.scale_mut(scale);
        scales.push(scale);
    }
    (out, scales)
}

impl Projector {
    /// Forward pass; returns the embedding and a tape for `input_grad`.
    pub fn forward(&self, x: &Mat, rng: &mut SeedRng) -> Result<(Mat, Tape)> {
        if x.ncols() != self.input_dim {
            return Err(Error::ShapeMismatch(format!(
                "projector expects {} input columns, got {}",
                self.input_dim,
                x.ncols()
            )));
        }
        let mut cur = x.clone();
        let mut records = Vec::with_capacity(self.layers.len());
        let mut min_pre = f64::INFINITY;
        for layer in &self.layers {
            match layer {
                Layer::Linear { w, bias } => {
                    cur = &cur * w;
                    for mut row in cur.row_iter_mut() {
                        row += bias.transpose();
                    }
                    records.push(TapeRecord::Linear);
                }
                Layer::Replicate { copies } => {
                    let (n, f) = cur.shape();
                    let mut tiled = Mat::zeros(n, f * copies);
                    for c in 0..*copies {
                        tiled.columns_mut(c * f, f).copy_from(&cur);
                    }
                    cur = tiled;
                    records.push(TapeRecord::Replicate);
                }
                Layer::RandomizedBn { params } => {
                    let (out, scales) = bn_apply(&cur, params, rng);
                    cur = out;
                    records.push(TapeRecord::BnScale(scales));
                }
                Layer::Relu => {
                    for v in cur.iter() {
                        min_pre = min_pre.min(v.abs());
                    }
                    let mask = cur.map(|v| if v > 0.0 { 1.0 } else { 0.0 });
                    cur = cur.sup(&Mat::zeros(cur.nrows(), cur.ncols()));
                    records.push(TapeRecord::ReluMask(mask));
                }
            }
        }
        Ok((cur, Tape { version: self.version, records, min_pre_activation_abs: min_pre }))
    }

    /// Exact reverse-mode gradient of the forward pass with respect to the
    /// input. BN statistics are constants; the ReLU subgradient at 0 is 0.
    pub fn input_grad(&self, tape: &Tape, dl_dz: &Mat) -> Result<Mat> {
        if tape.version != self.version {
            return Err(Error::StaleTape);
        }
        if dl_dz.ncols() != self.output_dim {
            return Err(Error::ShapeMismatch(format!(
                "gradient has {} columns, projector outputs {}",
                dl_dz.ncols(),
                self.output_dim
            )));
        }
        let mut grad = dl_dz.clone();
        for (layer, record) in self.layers.iter().zip(tape.records.iter()).rev() {
            match (layer, record) {
                (Layer::Linear { w, .. }, TapeRecord::Linear) => {
                    grad = &grad * w.transpose();
                }
                (Layer::Replicate { copies }, TapeRecord::Replicate) => {
                    let f = grad.ncols() / copies;
                    let mut folded = grad.columns(0, f).clone_owned();
                    for c in 1..*copies {
                        folded += grad.columns(c * f, f);
                    }
                    grad = folded;
                }
                (Layer::RandomizedBn { .. }, TapeRecord::BnScale(scales)) => {
                    for (j, mut col) in grad.column_iter_mut().enumerate() {
                        col.scale_mut(scales[j]);
                    }
                }
                (Layer::Relu, TapeRecord::ReluMask(mask)) => {
                    grad.component_mul_assign(mask);
                }
                _ => return Err(Error::StaleTape),
            }
        }
        Ok(grad)
    }

    /// Fresh draw of all weights from the construction scheme; same shape,
    /// new version (old tapes become stale).
    pub fn resample(&self, rng: &mut SeedRng) -> Projector {
        let layers = self
            .layers
            .iter()
            .map(|layer| match layer {
                Layer::Linear { w, .. } => {
                    let (fan_in, fan_out) = w.shape();
                    random_linear_layer(fan_in, fan_out, rng)
                }
                other => other.clone(),
            })
            .collect();
        Projector {
            layers,
            input_dim: self.input_dim,
            output_dim: self.output_dim,
            seed: rng.seed(),
            version: self.version + 1,
        }
    }

    /// Compact per-layer description for run manifests.
    pub fn shape_summary(&self) -> Vec<String> {
        self.layers
            .iter()
            .map(|layer| match layer {
                Layer::Linear { w, .. } => format!("linear({}x{})", w.nrows(), w.ncols()),
                Layer::Replicate { copies } => format!("replicate(x{copies})"),
                Layer::RandomizedBn { .. } => "randomized_bn".to_string(),
                Layer::Relu => "relu".to_string(),
            })
            .collect()
    }
}
