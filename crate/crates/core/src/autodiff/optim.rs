use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected adaptive-moment optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub hyper: AdamHyper,
    pub step: u64,
    pub first: Vec<Vec<f64>>,
    pub second: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new<'a>(hyper: AdamHyper, params: impl IntoIterator<Item = &'a Tensor>) -> Self {
        let first: Vec<Vec<f64>> = params.into_iter().map(|p| vec![0.0; p.numel()]).collect();
        let second = first.clone();
        Self {
            hyper,
            step: 0,
            first,
            second,
        }
    }

    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Vec<f64>]) -> Result<()> {
        if params.len() != self.first.len() || grads.len() != params.len() {
            return Err(Error::shape(
                "adam_step",
                &[params.len(), grads.len()],
                &[self.first.len()],
            ));
        }
        self.step += 1;
        let AdamHyper {
            lr,
            beta1,
            beta2,
            eps,
        } = self.hyper;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(&mut self.first)
            .zip(&mut self.second)
        {
            if p.numel() != g.len() || m.len() != g.len() {
                return Err(Error::shape("adam_step", &p.shape, &[g.len()]));
            }
            for (((w, &g), m), v) in p.data.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Either optimizer behind one interface.
#[derive(Debug, Clone, PartialEq)]
pub enum Optimizer {
    Adam(AdamState),
    Sgd { lr: f64 },
}

impl Optimizer {
    pub fn new<'a>(
        kind: OptimizerKind,
        hyper: AdamHyper,
        params: impl IntoIterator<Item = &'a Tensor>,
    ) -> Self {
        match kind {
            OptimizerKind::Adam => Optimizer::Adam(AdamState::new(hyper, params)),
            OptimizerKind::Sgd => Optimizer::Sgd { lr: hyper.lr },
        }
    }

    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Vec<f64>]) -> Result<()> {
        match self {
            Optimizer::Adam(state) => state.step(params, grads),
            Optimizer::Sgd { lr } => {
                for (p, g) in params.iter_mut().zip(grads) {
                    if p.numel() != g.len() {
                        return Err(Error::shape("sgd_step", &p.shape, &[g.len()]));
                    }
                    for (w, g) in p.data.iter_mut().zip(g) {
                        *w -= *lr * g;
                    }
                }
                Ok(())
            }
        }
    }
}

/// Rescales `grads` in place so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [Vec<f64>], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flat_map(|g| g.iter())
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        grads.iter_mut().flat_map(|g| g.iter_mut()).for_each(|x| *x *= s);
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut w = Tensor::vector(vec![1.0, -2.0]);
        let mut adam = AdamState::new(AdamHyper::default(), [&w]);
        adam.step(&mut [&mut w], &[vec![0.0, 0.0]]).unwrap();
        assert_eq!(w.data, vec![1.0, -2.0]);
        assert_eq!(adam.step, 1);
    }

    #[test]
    fn first_step_moves_by_lr_against_sign() {
        let mut w = Tensor::vector(vec![0.0, 0.0]);
        let hyper = AdamHyper::default();
        let mut adam = AdamState::new(hyper, [&w]);
        adam.step(&mut [&mut w], &[vec![3.0, -0.5]]).unwrap();
        assert!((w.data[0] + hyper.lr).abs() < 1e-9);
        assert!((w.data[1] - hyper.lr).abs() < 1e-9);
    }

    #[test]
    fn converges_on_quadratic() {
        let mut w = Tensor::vector(vec![0.0]);
        let hyper = AdamHyper {
            lr: 0.1,
            ..AdamHyper::default()
        };
        let mut adam = AdamState::new(hyper, [&w]);
        for _ in 0..100 {
            let g = 2.0 * (w.data[0] - 3.0);
            adam.step(&mut [&mut w], &[vec![g]]).unwrap();
        }
        assert!((w.data[0] - 3.0).abs() < 0.5, "w = {}", w.data[0]);
    }

    #[test]
    fn sgd_and_shape_errors() {
        let mut w = Tensor::vector(vec![1.0]);
        let mut opt = Optimizer::new(OptimizerKind::Sgd, AdamHyper::default(), [&w]);
        opt.step(&mut [&mut w], &[vec![10.0]]).unwrap();
        assert!((w.data[0] - 0.99).abs() < 1e-12);
        assert!(opt.step(&mut [&mut w], &[vec![1.0, 2.0]]).is_err());
    }

    #[test]
    fn clipping() {
        let mut g = vec![vec![3.0], vec![4.0]];
        assert_eq!(clip_global_norm(&mut g, 5.0), 5.0);
        assert_eq!(g, vec![vec![3.0], vec![4.0]]);
        clip_global_norm(&mut g, 1.0);
        assert!((g[0][0] - 0.6).abs() < 1e-12 && (g[1][0] - 0.8).abs() < 1e-12);
    }
}
