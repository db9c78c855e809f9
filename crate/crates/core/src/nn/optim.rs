use serde::{Deserialize, Serialize};

use super::{Gradients, LayerParams, Network, Scalar};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam { beta1: f64, beta2: f64, eps: f64 },
    Sgd,
}

impl Default for OptimizerKind {
    fn default() -> Self {
        OptimizerKind::Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First-order optimizer state. Moments share the parameter layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Optimizer<T> {
    pub kind: OptimizerKind,
    pub m: Vec<LayerParams<T>>,
    pub v: Vec<LayerParams<T>>,
    pub t: u64,
}

impl<T: Scalar> Optimizer<T> {
    pub fn new(kind: OptimizerKind, net: &Network<T>) -> Self {
        let (m, v) = match kind {
            OptimizerKind::Adam { .. } => (net.zero_grads(), net.zero_grads()),
            OptimizerKind::Sgd => (Vec::new(), Vec::new()),
        };
        Self { kind, m, v, t: 0 }
    }

    /// Applies one update with learning rate `lr`.
    pub fn step(&mut self, net: &mut Network<T>, grads: &Gradients<T>, lr: f64) -> Result<()> {
        if grads.len() != net.params().len() {
            return Err(Error::Shape("gradient layer count differs from network".into()));
        }
        for (p, g) in net.params().iter().zip(grads) {
            if p.weight.len() != g.weight.len() || p.bias.len() != g.bias.len() {
                return Err(Error::Shape("gradient shape differs from network".into()));
            }
        }
        self.t += 1;
        match self.kind {
            OptimizerKind::Sgd => {
                let lr = T::from_f64(lr);
                for (p, g) in net.params_mut().iter_mut().zip(grads) {
                    for (w, &d) in p.weight.iter_mut().chain(p.bias.iter_mut()).zip(g.weight.iter().chain(&g.bias)) {
                        *w = *w - lr * d;
                    }
                }
            }
            OptimizerKind::Adam { beta1, beta2, eps } => {
                let t = self.t as i32;
                let step = lr * (1.0 - beta2.powi(t)).sqrt() / (1.0 - beta1.powi(t));
                let (b1, b2) = (T::from_f64(beta1), T::from_f64(beta2));
                let (one, step, eps) = (T::one(), T::from_f64(step), T::from_f64(eps));
                for (((p, g), m), v) in net.params_mut().iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
                    let params = p.weight.iter_mut().chain(p.bias.iter_mut());
                    let gs = g.weight.iter().chain(&g.bias);
                    let ms = m.weight.iter_mut().chain(m.bias.iter_mut());
                    let vs = v.weight.iter_mut().chain(v.bias.iter_mut());
                    for (((w, &d), mi), vi) in params.zip(gs).zip(ms).zip(vs) {
                        *mi = b1 * *mi + (one - b1) * d;
                        *vi = b2 * *vi + (one - b2) * d * d;
                        *w = *w - step * *mi / (vi.sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{ConvSpec, NetworkSpec};

    fn spec() -> NetworkSpec {
        NetworkSpec { input: [1, 4, 4], convs: vec![ConvSpec::new(2, 2, 2, 0)], fc: vec![8, 3], output: 4 }
    }

    #[test]
    fn zero_grads_leave_params_unchanged() {
        for kind in [OptimizerKind::default(), OptimizerKind::Sgd] {
            let mut net = Network::<f64>::new(spec(), 1).unwrap();
            let before = net.params().to_vec();
            let mut opt = Optimizer::new(kind, &net);
            let zero = net.zero_grads();
            opt.step(&mut net, &zero, 0.1).unwrap();
            assert_eq!(net.params(), &before[..]);
        }
    }

    #[test]
    fn descends_on_quadratic() {
        // f(w) = w^2 on the first weight, gradient 2w
        for kind in [OptimizerKind::default(), OptimizerKind::Sgd] {
            let mut net = Network::<f64>::new(spec(), 1).unwrap();
            *net.param_mut(0) = 1.0;
            let mut opt = Optimizer::new(kind, &net);
            let mut g = net.zero_grads();
            g[0].weight[0] = 2.0;
            opt.step(&mut net, &g, 0.01).unwrap();
            let w = net.params()[0].weight[0];
            assert!(w * w < 1.0);
        }
    }

    #[test]
    fn repeated_runs_are_identical() {
        let run = || {
            let mut net = Network::<f32>::new(spec(), 7).unwrap();
            let mut opt = Optimizer::new(OptimizerKind::default(), &net);
            let x: Vec<f32> = (0..32).map(|i| (i as f32 * 0.37).sin()).collect();
            for _ in 0..20 {
                let cache = net.forward_cached(&x, 2).unwrap();
                let og: Vec<f32> = cache.output().iter().map(|q| q - 1.0).collect();
                let g = net.backward(&cache, &og).unwrap();
                opt.step(&mut net, &g, 1e-3).unwrap();
            }
            net.params().to_vec()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mut net = Network::<f64>::new(spec(), 1).unwrap();
        let mut opt = Optimizer::new(OptimizerKind::Sgd, &net);
        let mut g = net.zero_grads();
        g[0].bias.pop();
        assert!(opt.step(&mut net, &g, 0.1).is_err());
    }
}
