use std::collections::HashMap;

use crate::{Error, Mat, Result};

/// First-order optimizer kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

/// SGD-with-momentum or Adam over named parameter matrices.
///
/// Moment buffers are keyed by parameter name and created lazily with the
/// shape of the first gradient seen for that name.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    momentum: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step_count: HashMap<String, u64>,
    m1: HashMap<String, Mat>,
    m2: HashMap<String, Mat>,
}

impl Optimizer {
    pub fn sgd(lr: f64, momentum: f64) -> Result<Self> {
        if lr <= 0.0 {
            return Err(Error::InvalidParameter("learning rate must be > 0".into()));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::InvalidParameter("momentum must be in [0,1)".into()));
        }
        Ok(Self {
            kind: OptimizerKind::Sgd,
            lr,
            momentum,
            beta1: 0.0,
            beta2: 0.0,
            eps: 0.0,
            step_count: HashMap::new(),
            m1: HashMap::new(),
            m2: HashMap::new(),
        })
    }

    pub fn adam(lr: f64) -> Result<Self> {
        if lr <= 0.0 {
            return Err(Error::InvalidParameter("learning rate must be > 0".into()));
        }
        Ok(Self {
            kind: OptimizerKind::Adam,
            lr,
            momentum: 0.0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step_count: HashMap::new(),
            m1: HashMap::new(),
            m2: HashMap::new(),
        })
    }

    pub fn new(kind: OptimizerKind, lr: f64) -> Result<Self> {
        match kind {
            OptimizerKind::Sgd => Self::sgd(lr, 0.9),
            OptimizerKind::Adam => Self::adam(lr),
        }
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn learning_rate(&self) -> f64 {
        self.lr
    }

    /// Changes the learning rate in place (for schedules); moment buffers
    /// are kept.
    pub fn set_learning_rate(&mut self, lr: f64) -> Result<()> {
        if lr <= 0.0 {
            return Err(Error::InvalidParameter("learning rate must be > 0".into()));
        }
        self.lr = lr;
        Ok(())
    }

    /// Applies one update to `params` in place.
    pub fn step(&mut self, name: &str, params: &mut Mat, grad: &Mat) -> Result<()> {
        if params.shape() != grad.shape() {
            return Err(Error::ShapeMismatch(format!(
                "params {:?} vs grad {:?}",
                params.shape(),
                grad.shape()
            )));
        }
        match self.kind {
            OptimizerKind::Sgd => {
                let v = self
                    .m1
                    .entry(name.to_string())
                    .or_insert_with(|| Mat::zeros(params.nrows(), params.ncols()));
                *v = &*v * self.momentum + grad;
                *params -= &*v * self.lr;
            }
            OptimizerKind::Adam => {
                let t = self.step_count.entry(name.to_string()).or_insert(0);
                *t += 1;
                let t = *t;
                let m = self
                    .m1
                    .entry(name.to_string())
                    .or_insert_with(|| Mat::zeros(params.nrows(), params.ncols()));
                *m = &*m * self.beta1 + grad * (1.0 - self.beta1);
                let v = self
                    .m2
                    .entry(name.to_string())
                    .or_insert_with(|| Mat::zeros(params.nrows(), params.ncols()));
                *v = &*v * self.beta2 + grad.map(|g| g * g) * (1.0 - self.beta2);
                let m_hat = &*self.m1.get(name).unwrap() / (1.0 - self.beta1.powi(t as i32));
                let v_hat = &*self.m2.get(name).unwrap() / (1.0 - self.beta2.powi(t as i32));
                for i in 0..params.nrows() {
                    for j in 0..params.ncols() {
                        params[(i, j)] -= self.lr * m_hat[(i, j)] / (v_hat[(i, j)].sqrt() + self.eps);
                    }
                }
            }
        }
        Ok(())
    }
}
