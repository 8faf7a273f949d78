use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

use super::{flatten, Parameters};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adam" => Ok(OptimizerKind::Adam),
            "sgd" => Ok(OptimizerKind::Sgd),
            other => Err(Error::Config(format!("unknown optimizer {other:?}"))),
        }
    }
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OptimizerKind::Adam => "adam",
            OptimizerKind::Sgd => "sgd",
        })
    }
}

/// Adam moments and hyperparameters. Moment buffers are allocated lazily
/// on the first step so one state can follow any parameter container.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamState {
    pub fn new(lr: f64) -> Self {
        AdamState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Optimizer {
    Adam(AdamState),
    Sgd { lr: f64 },
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64) -> Self {
        match kind {
            OptimizerKind::Adam => Optimizer::Adam(AdamState::new(lr)),
            OptimizerKind::Sgd => Optimizer::Sgd { lr },
        }
    }

    /// Applies one descent step; `grads` must have the same structure as `params`.
    pub fn step<P: Parameters>(&mut self, params: &mut P, grads: &P) {
        let g = flatten(grads);
        match self {
            Optimizer::Sgd { lr } => {
                let lr = *lr;
                let mut i = 0;
                params.for_each_param_mut(&mut |s| {
                    for p in s {
                        *p -= lr * g[i];
                        i += 1;
                    }
                });
                assert_eq!(i, g.len(), "gradient and parameter shapes differ");
            }
            Optimizer::Adam(st) => {
                if st.m.len() != g.len() {
                    assert_eq!(st.step, 0, "Adam state was built for a different model");
                    st.m = vec![0.0; g.len()];
                    st.v = vec![0.0; g.len()];
                }
                st.step += 1;
                let t = st.step as i32;
                let c1 = 1.0 - st.beta1.powi(t);
                let c2 = 1.0 - st.beta2.powi(t);
                let (b1, b2, lr, eps) = (st.beta1, st.beta2, st.lr, st.eps);
                let (m, v) = (&mut st.m, &mut st.v);
                let mut i = 0;
                params.for_each_param_mut(&mut |s| {
                    for p in s {
                        let gi = g[i];
                        m[i] = b1 * m[i] + (1.0 - b1) * gi;
                        v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
                        let m_hat = m[i] / c1;
                        let v_hat = v[i] / c2;
                        *p -= lr * m_hat / (v_hat.sqrt() + eps);
                        i += 1;
                    }
                });
                assert_eq!(i, g.len(), "gradient and parameter shapes differ");
            }
        }
    }
}
