use crate::error::{Error, Result};

use super::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OptimizerKind {
    Adam { beta1: f64, beta2: f64 },
    RmsProp { rho: f64 },
}

impl OptimizerKind {
    pub const ADAM: Self = OptimizerKind::Adam { beta1: 0.9, beta2: 0.999 };
    pub const RMSPROP: Self = OptimizerKind::RmsProp { rho: 0.9 };

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "adam" => Some(Self::ADAM),
            "rmsprop" => Some(Self::RMSPROP),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            OptimizerKind::Adam { .. } => "adam",
            OptimizerKind::RmsProp { .. } => "rmsprop",
        }
    }
}

/// Adam / RMSprop state. Accumulators are allocated on the first step and
/// mirror the parameter shapes from then on.
#[derive(Clone, Debug)]
pub struct Optimizer<T = f32> {
    kind: OptimizerKind,
    lr: f64,
    eps: f64,
    step: u64,
    first: Vec<Vec<T>>,
    second: Vec<Vec<T>>,
}

impl<T: Scalar> Optimizer<T> {
    pub fn new(kind: OptimizerKind, lr: f64) -> Self {
        Self {
            kind,
            lr,
            eps: 1e-7,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn with_eps(mut self, eps: f64) -> Self {
        self.eps = eps;
        self
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: Vec<&mut Tensor<T>>, grads: &[Tensor<T>]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::Usage(format!("{} parameters but {} gradients", params.len(), grads.len())));
        }
        if self.second.is_empty() {
            self.first = params.iter().map(|p| vec![T::zero(); p.len()]).collect();
            self.second = self.first.clone();
        }
        if self.second.len() != params.len() {
            return Err(Error::Usage("parameter list changed between steps".into()));
        }
        for ((p, g), acc) in params.iter().zip(grads).zip(&self.second) {
            if p.shape() != g.shape() || acc.len() != p.len() {
                return Err(Error::Usage(format!(
                    "gradient shape {:?} does not match parameter {:?}",
                    g.shape(),
                    p.shape()
                )));
            }
        }
        self.step += 1;
        let eps = T::of(self.eps);
        match self.kind {
            OptimizerKind::Adam { beta1, beta2 } => {
                let t = self.step as i32;
                let rate = T::of(self.lr * (1.0 - beta2.powi(t)).sqrt() / (1.0 - beta1.powi(t)));
                let eps_hat = eps * T::of((1.0 - beta2.powi(t)).sqrt());
                let (b1, b2) = (T::of(beta1), T::of(beta2));
                let (c1, c2) = (T::one() - b1, T::one() - b2);
                for (i, (p, g)) in params.into_iter().zip(grads).enumerate() {
                    let (m, v) = (&mut self.first[i], &mut self.second[i]);
                    for (j, (w, &gj)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                        m[j] = b1 * m[j] + c1 * gj;
                        v[j] = b2 * v[j] + c2 * gj * gj;
                        *w = *w - rate * m[j] / (v[j].sqrt() + eps_hat);
                    }
                }
            }
            OptimizerKind::RmsProp { rho } => {
                let (r, c) = (T::of(rho), T::of(1.0 - rho));
                let lr = T::of(self.lr);
                for (i, (p, g)) in params.into_iter().zip(grads).enumerate() {
                    let v = &mut self.second[i];
                    for (j, (w, &gj)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                        v[j] = r * v[j] + c * gj * gj;
                        *w = *w - lr * gj / (v[j].sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }
}
