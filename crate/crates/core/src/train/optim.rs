use std::collections::{BTreeMap, BTreeSet};

use candle_core::backprop::GradStore;
use candle_core::{DType, Tensor, Var};

use crate::Result;

/// Decoupled-weight-decay Adam over a named parameter table. Decay applies
/// only to names in `decay`. Parameters without a gradient are left alone.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub decay: BTreeSet<String>,
    pub m: BTreeMap<String, Tensor>,
    pub v: BTreeMap<String, Tensor>,
    /// Per-parameter update counts, for bias correction.
    pub t: BTreeMap<String, u64>,
}

impl AdamW {
    pub fn new(beta1: f64, beta2: f64, eps: f64, weight_decay: f64, decay: BTreeSet<String>) -> Self {
        AdamW {
            beta1,
            beta2,
            eps,
            weight_decay,
            decay,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
            t: BTreeMap::new(),
        }
    }

    pub fn step(&mut self, params: &BTreeMap<String, Var>, grads: &GradStore, lr: f64) -> Result<()> {
        for (name, var) in params {
            let Some(g) = grads.get(var.as_tensor()) else {
                continue;
            };
            let theta = var.as_tensor();
            let m = match self.m.get(name) {
                Some(m) => ((m * self.beta1)? + (g * (1.0 - self.beta1))?)?,
                None => (g * (1.0 - self.beta1))?,
            };
            let g2 = g.sqr()?;
            let v = match self.v.get(name) {
                Some(v) => ((v * self.beta2)? + (g2 * (1.0 - self.beta2))?)?,
                None => (g2 * (1.0 - self.beta2))?,
            };
            let t = self.t.get(name).copied().unwrap_or(0) + 1;
            let m_hat = (&m / (1.0 - self.beta1.powi(t as i32)))?;
            let v_hat = (&v / (1.0 - self.beta2.powi(t as i32)))?;
            let mut update = (m_hat / (v_hat.sqrt()? + self.eps)?)?;
            if self.decay.contains(name) && self.weight_decay > 0.0 {
                update = (update + (theta * self.weight_decay)?)?;
            }
            var.set(&(theta - (update * lr)?)?)?;
            self.m.insert(name.clone(), m);
            self.v.insert(name.clone(), v);
            self.t.insert(name.clone(), t);
        }
        Ok(())
    }
}

/// Scale every gradient so the global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm(params: &BTreeMap<String, Var>, grads: &mut GradStore, max_norm: f64) -> Result<f64> {
    let mut sq = 0.0f64;
    for var in params.values() {
        if let Some(g) = grads.get(var.as_tensor()) {
            sq += g.to_dtype(DType::F64)?.sqr()?.sum_all()?.to_scalar::<f64>()?;
        }
    }
    let norm = sq.sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let scale = max_norm / (norm + 1e-6);
        for var in params.values() {
            if let Some(g) = grads.remove(var.as_tensor()) {
                grads.insert(var.as_tensor(), (g * scale)?);
            }
        }
    }
    Ok(norm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::Device;

    fn quad_problem() -> (BTreeMap<String, Var>, Tensor) {
        let w = Var::from_tensor(&Tensor::new(&[3.0f64, -2.0], &Device::Cpu).unwrap()).unwrap();
        let target = Tensor::new(&[1.0f64, 1.0], &Device::Cpu).unwrap();
        (BTreeMap::from([("w".to_string(), w)]), target)
    }

    #[test]
    fn first_step_moves_each_coordinate_by_lr() {
        // bias-corrected Adam's first step is lr * sign(g)
        let (p, target) = quad_problem();
        let mut opt = AdamW::new(0.9, 0.95, 1e-12, 0.0, BTreeSet::new());
        let loss = (p["w"].as_tensor() - &target)
            .unwrap()
            .sqr()
            .unwrap()
            .sum_all()
            .unwrap();
        opt.step(&p, &loss.backward().unwrap(), 0.1).unwrap();
        let w = p["w"].as_tensor().to_vec1::<f64>().unwrap();
        assert!((w[0] - 2.9).abs() < 1e-9 && (w[1] + 1.9).abs() < 1e-9);
    }

    #[test]
    fn zero_lr_leaves_parameters_unchanged() {
        let (p, target) = quad_problem();
        let mut opt = AdamW::new(0.9, 0.95, 1e-8, 0.05, BTreeSet::from(["w".to_string()]));
        let before = p["w"].as_tensor().to_vec1::<f64>().unwrap();
        let loss = (p["w"].as_tensor() - &target)
            .unwrap()
            .sqr()
            .unwrap()
            .sum_all()
            .unwrap();
        opt.step(&p, &loss.backward().unwrap(), 0.0).unwrap();
        assert_eq!(p["w"].as_tensor().to_vec1::<f64>().unwrap(), before);
    }

    #[test]
    fn converges_on_a_quadratic() {
        let (p, target) = quad_problem();
        let mut opt = AdamW::new(0.9, 0.95, 1e-8, 0.0, BTreeSet::new());
        for _ in 0..500 {
            let loss = (p["w"].as_tensor() - &target)
                .unwrap()
                .sqr()
                .unwrap()
                .sum_all()
                .unwrap();
            opt.step(&p, &loss.backward().unwrap(), 0.05).unwrap();
        }
        let w = p["w"].as_tensor().to_vec1::<f64>().unwrap();
        assert!((w[0] - 1.0).abs() < 1e-2 && (w[1] - 1.0).abs() < 1e-2);
    }

    #[test]
    fn clipping_bounds_the_global_norm() {
        let (p, _) = quad_problem();
        let loss = (p["w"].as_tensor() * 100.0).unwrap().sum_all().unwrap();
        let mut grads = loss.backward().unwrap();
        let before = clip_grad_norm(&p, &mut grads, 1.0).unwrap();
        assert!((before - 100.0 * 2f64.sqrt()).abs() < 1e-9);
        let g = grads.get(p["w"].as_tensor()).unwrap().to_vec1::<f64>().unwrap();
        let n = g.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!(n <= 1.0 + 1e-9);
    }
}
