//! Small trainable dense networks with hand-written reverse mode.
//!
//! Used for the post-nonlinear ICA pipeline: a trainable MLP encoder and a
//! decoder made of per-channel scalar networks behind a linear mix. Forward
//! passes return a cache that `backward` consumes to produce both the input
//! gradient and per-parameter gradients, which feed the named-parameter
//! optimizer.

use crate::numerics::{Optimizer, SeedRng};
use crate::{Error, Mat, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    fn apply(&self, v: f64) -> f64 {
        match self {
            Activation::Relu => v.max(0.0),
            Activation::Tanh => v.tanh(),
        }
    }

    /// Derivative as a function of the pre-activation (ReLU subgradient at 0 is 0).
    fn derivative(&self, pre: f64) -> f64 {
        match self {
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = pre.tanh();
                1.0 - t * t
            }
        }
    }
}

/// One trainable dense layer; bias kept as a 1 x fan_out matrix so the
/// optimizer can treat every parameter uniformly.
#[derive(Debug, Clone)]
pub struct DenseLayer {
    pub w: Mat,
    pub b: Mat,
}

/// Fully connected network: activation after every layer except the last.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<DenseLayer>,
    pub activation: Activation,
}

/// Per-layer inputs and pre-activations from one forward pass.
#[derive(Debug, Clone)]
pub struct MlpCache {
    inputs: Vec<Mat>,
    pre_activations: Vec<Mat>,
}

/// Gradients matching `Mlp::layers` ordering.
#[derive(Debug, Clone)]
pub struct MlpGrads {
    pub layers: Vec<DenseLayer>,
}

impl Mlp {
    /// `dims` lists every layer width including input and output, e.g.
    /// `[6, 128, 128, 128, 6]`. Weights start uniform on +-1/sqrt(fan_in),
    /// biases at zero.
    pub fn new(dims: &[usize], activation: Activation, rng: &mut SeedRng) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::InvalidParameter("an MLP needs at least one layer".into()));
        }
        let layers = dims
            .windows(2)
            .map(|d| {
                let bound = 1.0 / (d[0] as f64).sqrt();
                DenseLayer {
                    w: Mat::from_fn(d[0], d[1], |_, _| rng.uniform_symmetric(bound)),
                    b: Mat::zeros(1, d[1]),
                }
            })
            .collect();
        Ok(Self { layers, activation })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].w.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().w.ncols()
    }

    pub fn forward(&self, x: &Mat) -> Result<(Mat, MlpCache)> {
        if x.ncols() != self.input_dim() {
            return Err(Error::ShapeMismatch(format!(
                "MLP expects {} input columns, got {}",
                self.input_dim(),
                x.ncols()
            )));
        }
        let mut cur = x.clone();
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre_activations = Vec::with_capacity(self.layers.len());
        let last = self.layers.len() - 1;
        for (idx, layer) in self.layers.iter().enumerate() {
            inputs.push(cur.clone());
            let mut pre = &cur * &layer.w;
            for mut row in pre.row_iter_mut() {
                row += layer.b.row(0);
            }
            if idx < last {
                cur = pre.map(|v| self.activation.apply(v));
                pre_activations.push(pre);
            } else {
                pre_activations.push(pre.clone());
                cur = pre;
            }
        }
        Ok((cur, MlpCache { inputs, pre_activations }))
    }

    /// Reverse pass: returns the gradient with respect to the input and the
    /// per-layer parameter gradients.
    pub fn backward(&self, cache: &MlpCache, d_out: &Mat) -> Result<(Mat, MlpGrads)> {
        if cache.inputs.len() != self.layers.len() {
            return Err(Error::ShapeMismatch("cache does not match network depth".into()));
        }
        if d_out.ncols() != self.output_dim() {
            return Err(Error::ShapeMismatch(format!(
                "upstream gradient has {} columns, network outputs {}",
                d_out.ncols(),
                self.output_dim()
            )));
        }
        let last = self.layers.len() - 1;
        let mut grads: Vec<DenseLayer> = Vec::with_capacity(self.layers.len());
        let mut d_cur = d_out.clone();
        for idx in (0..self.layers.len()).rev() {
            let d_pre = if idx < last {
                let pre = &cache.pre_activations[idx];
                Mat::from_fn(d_cur.nrows(), d_cur.ncols(), |i, j| {
                    d_cur[(i, j)] * self.activation.derivative(pre[(i, j)])
                })
            } else {
                d_cur.clone()
            };
            let input = &cache.inputs[idx];
            let dw = input.transpose() * &d_pre;
            let db = Mat::from_fn(1, d_pre.ncols(), |_, j| d_pre.column(j).sum());
            grads.push(DenseLayer { w: dw, b: db });
            d_cur = &d_pre * self.layers[idx].w.transpose();
        }
        grads.reverse();
        Ok((d_cur, MlpGrads { layers: grads }))
    }

    /// Applies one optimizer update to every parameter; `prefix` namespaces
    /// the optimizer's moment buffers.
    pub fn apply_grads(&mut self, opt: &mut Optimizer, prefix: &str, grads: &MlpGrads) -> Result<()> {
        if grads.layers.len() != self.layers.len() {
            return Err(Error::ShapeMismatch("gradient set does not match network depth".into()));
        }
        for (idx, (layer, grad)) in self.layers.iter_mut().zip(grads.layers.iter()).enumerate() {
            opt.step(&format!("{prefix}.w{idx}"), &mut layer.w, &grad.w)?;
            opt.step(&format!("{prefix}.b{idx}"), &mut layer.b, &grad.b)?;
        }
        Ok(())
    }
}

/// Independent scalar networks, one per data channel: column k of the input
/// goes through `nets[k]` alone. Used as a learnable elementwise
/// nonlinearity stack.
#[derive(Debug, Clone)]
pub struct ElementwiseNet {
    pub nets: Vec<Mlp>,
}

#[derive(Debug, Clone)]
pub struct ElementwiseCache {
    caches: Vec<MlpCache>,
}

impl ElementwiseNet {
    /// `channels` scalar MLPs with hidden widths `hidden` (input and output
    /// dimension are both 1).
    pub fn new(channels: usize, hidden: &[usize], activation: Activation, rng: &mut SeedRng) -> Result<Self> {
        if channels == 0 {
            return Err(Error::InvalidParameter("need at least one channel".into()));
        }
        let mut dims = vec![1];
        dims.extend_from_slice(hidden);
        dims.push(1);
        let nets = (0..channels)
            .map(|_| Mlp::new(&dims, activation, rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { nets })
    }

    pub fn channels(&self) -> usize {
        self.nets.len()
    }

    pub fn forward(&self, x: &Mat) -> Result<(Mat, ElementwiseCache)> {
        if x.ncols() != self.nets.len() {
            return Err(Error::ShapeMismatch(format!(
                "elementwise net has {} channels, input has {} columns",
                self.nets.len(),
                x.ncols()
            )));
        }
        let mut out = Mat::zeros(x.nrows(), x.ncols());
        let mut caches = Vec::with_capacity(self.nets.len());
        for (k, net) in self.nets.iter().enumerate() {
            let col = Mat::from_column_slice(x.nrows(), 1, x.column(k).as_slice());
            let (y, cache) = net.forward(&col)?;
            out.column_mut(k).copy_from(&y.column(0));
            caches.push(cache);
        }
        Ok((out, ElementwiseCache { caches }))
    }

    pub fn backward(&self, cache: &ElementwiseCache, d_out: &Mat) -> Result<(Mat, Vec<MlpGrads>)> {
        let mut d_in = Mat::zeros(d_out.nrows(), d_out.ncols());
        let mut grads = Vec::with_capacity(self.nets.len());
        for (k, net) in self.nets.iter().enumerate() {
            let d_col = Mat::from_column_slice(d_out.nrows(), 1, d_out.column(k).as_slice());
            let (d_x, g) = net.backward(&cache.caches[k], &d_col)?;
            d_in.column_mut(k).copy_from(&d_x.column(0));
            grads.push(g);
        }
        Ok((d_in, grads))
    }

    pub fn apply_grads(
        &mut self,
        opt: &mut Optimizer,
        prefix: &str,
        grads: &[MlpGrads],
    ) -> Result<()> {
        for (k, (net, g)) in self.nets.iter_mut().zip(grads.iter()).enumerate() {
            net.apply_grads(opt, &format!("{prefix}.ch{k}"), g)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Optimizer;

    fn randn(n: usize, d: usize, seed: u64) -> Mat {
        let mut rng = SeedRng::new(seed);
        Mat::from_fn(n, d, |_, _| rng.standard_normal())
    }

    #[test]
    fn shapes_chain() {
        let mut rng = SeedRng::new(1);
        let net = Mlp::new(&[3, 8, 8, 2], Activation::Tanh, &mut rng).unwrap();
        let x = randn(5, 3, 2);
        let (y, _) = net.forward(&x).unwrap();
        assert_eq!(y.shape(), (5, 2));
    }

    #[test]
    fn same_seed_same_forward() {
        let x = randn(4, 3, 3);
        let a = Mlp::new(&[3, 8, 2], Activation::Relu, &mut SeedRng::new(4)).unwrap();
        let b = Mlp::new(&[3, 8, 2], Activation::Relu, &mut SeedRng::new(4)).unwrap();
        assert_eq!(a.forward(&x).unwrap().0, b.forward(&x).unwrap().0);
    }

    #[test]
    fn rejects_wrong_input_width() {
        let net = Mlp::new(&[3, 4, 2], Activation::Tanh, &mut SeedRng::new(5)).unwrap();
        assert!(matches!(net.forward(&randn(4, 2, 6)), Err(Error::ShapeMismatch(_))));
    }

    /// Finite-difference check of input and parameter gradients on
    /// L = ||f(X)||^2 / 2.
    fn check_mlp_grads(net: &Mlp, x: &Mat) {
        let (y, cache) = net.forward(x).unwrap();
        let (d_in, grads) = net.backward(&cache, &y).unwrap();
        let h = 1e-6;
        let loss = |n: &Mlp, x: &Mat| n.forward(x).unwrap().0.norm_squared() / 2.0;
        // input gradient
        for i in 0..x.nrows() {
            for j in 0..x.ncols() {
                let mut xp = x.clone();
                xp[(i, j)] += h;
                let mut xm = x.clone();
                xm[(i, j)] -= h;
                let fd = (loss(net, &xp) - loss(net, &xm)) / (2.0 * h);
                assert!(
                    (d_in[(i, j)] - fd).abs() / fd.abs().max(1e-6) < 1e-4,
                    "input ({i},{j}): {} vs {fd}",
                    d_in[(i, j)]
                );
            }
        }
        // parameter gradients
        for l in 0..net.layers.len() {
            for i in 0..net.layers[l].w.nrows() {
                for j in 0..net.layers[l].w.ncols() {
                    let mut np = net.clone();
                    np.layers[l].w[(i, j)] += h;
                    let mut nm = net.clone();
                    nm.layers[l].w[(i, j)] -= h;
                    let fd = (loss(&np, x) - loss(&nm, x)) / (2.0 * h);
                    let g = grads.layers[l].w[(i, j)];
                    assert!((g - fd).abs() / fd.abs().max(1e-6) < 1e-4, "w{l}({i},{j}): {g} vs {fd}");
                }
            }
            for j in 0..net.layers[l].b.ncols() {
                let mut np = net.clone();
                np.layers[l].b[(0, j)] += h;
                let mut nm = net.clone();
                nm.layers[l].b[(0, j)] -= h;
                let fd = (loss(&np, x) - loss(&nm, x)) / (2.0 * h);
                let g = grads.layers[l].b[(0, j)];
                assert!((g - fd).abs() / fd.abs().max(1e-6) < 1e-4, "b{l}({j}): {g} vs {fd}");
            }
        }
    }

    #[test]
    fn tanh_gradients_match_finite_differences() {
        let mut rng = SeedRng::new(7);
        let net = Mlp::new(&[3, 6, 6, 2], Activation::Tanh, &mut rng).unwrap();
        check_mlp_grads(&net, &randn(4, 3, 8));
    }

    #[test]
    fn relu_gradients_match_finite_differences_away_from_kinks() {
        // reject draws whose hidden pre-activations sit near a ReLU kink
        let mut rng = SeedRng::new(9);
        let net = Mlp::new(&[3, 6, 2], Activation::Relu, &mut rng).unwrap();
        let mut seed = 100;
        let x = loop {
            seed += 1;
            let cand = randn(4, 3, seed);
            let (_, cache) = net.forward(&cand).unwrap();
            if cache.pre_activations[0].iter().all(|v| v.abs() > 1e-3) {
                break cand;
            }
        };
        check_mlp_grads(&net, &x);
    }

    #[test]
    fn gradient_suite_many_points() {
        let mut rng = SeedRng::new(10);
        let net = Mlp::new(&[2, 5, 5, 2], Activation::Tanh, &mut rng).unwrap();
        for seed in 0..50 {
            check_mlp_grads(&net, &randn(3, 2, 200 + seed));
        }
    }

    #[test]
    fn sgd_training_reduces_regression_loss() {
        let mut rng = SeedRng::new(11);
        let mut net = Mlp::new(&[2, 16, 1], Activation::Tanh, &mut rng).unwrap();
        let x = randn(64, 2, 12);
        let target = Mat::from_fn(64, 1, |i, _| (x[(i, 0)] - 0.5 * x[(i, 1)]).sin());
        let mut opt = Optimizer::sgd(0.05, 0.9).unwrap();
        let loss_at = |n: &Mlp| (n.forward(&x).unwrap().0 - &target).norm_squared() / 64.0;
        let before = loss_at(&net);
        for _ in 0..200 {
            let (y, cache) = net.forward(&x).unwrap();
            let d_out = (y - &target) * (2.0 / 64.0);
            let (_, grads) = net.backward(&cache, &d_out).unwrap();
            net.apply_grads(&mut opt, "net", &grads).unwrap();
        }
        let after = loss_at(&net);
        assert!(after < before * 0.2, "before {before} after {after}");
    }

    #[test]
    fn elementwise_net_keeps_channels_separate() {
        let mut rng = SeedRng::new(13);
        let net = ElementwiseNet::new(3, &[8], Activation::Tanh, &mut rng).unwrap();
        let x = randn(6, 3, 14);
        let (y, _) = net.forward(&x).unwrap();
        // changing one input column leaves the other output columns untouched
        let mut x2 = x.clone();
        for i in 0..6 {
            x2[(i, 1)] += 1.0;
        }
        let (y2, _) = net.forward(&x2).unwrap();
        for k in [0usize, 2] {
            assert_eq!(
                y.column(k).clone_owned(),
                y2.column(k).clone_owned(),
                "channel {k} leaked"
            );
        }
        assert!((y.column(1).clone_owned() - y2.column(1).clone_owned()).abs().max() > 1e-8);
    }

    #[test]
    fn elementwise_net_gradients_match_finite_differences() {
        let mut rng = SeedRng::new(15);
        let net = ElementwiseNet::new(2, &[6, 6], Activation::Tanh, &mut rng).unwrap();
        let x = randn(4, 2, 16);
        let (y, cache) = net.forward(&x).unwrap();
        let (d_in, _) = net.backward(&cache, &y).unwrap();
        let h = 1e-6;
        for i in 0..4 {
            for j in 0..2 {
                let mut xp = x.clone();
                xp[(i, j)] += h;
                let mut xm = x.clone();
                xm[(i, j)] -= h;
                let fp = net.forward(&xp).unwrap().0.norm_squared() / 2.0;
                let fm = net.forward(&xm).unwrap().0.norm_squared() / 2.0;
                let fd = (fp - fm) / (2.0 * h);
                assert!((d_in[(i, j)] - fd).abs() / fd.abs().max(1e-6) < 1e-4);
            }
        }
    }
}
