//! Gradient-step rules: plain SGD (optional momentum) and Adam behind a
//! config flag. Parameters with no gradient this step are skipped.

use ovgt_core::dtype::Real;
use ovgt_core::tensor::Parameter;

use crate::config::OptimKind;

pub struct Optimizer<T: Real> {
    kind: OptimKind,
    lr: f64,
    momentum: f64,
    step: usize,
    velocity: Vec<Vec<T>>,
    moment2: Vec<Vec<T>>,
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

impl<T: Real> Optimizer<T> {
    pub fn new(kind: OptimKind, lr: f64, momentum: f64, params: &[Parameter<T>]) -> Self {
        let zeros: Vec<Vec<T>> = params.iter().map(|p| vec![T::ZERO; p.numel()]).collect();
        Optimizer {
            kind,
            lr,
            momentum,
            step: 0,
            velocity: zeros.clone(),
            moment2: zeros,
        }
    }

    /// Apply one update from the accumulated gradients, then clear them.
    pub fn step(&mut self, params: &[Parameter<T>]) {
        self.step += 1;
        for (i, p) in params.iter().enumerate() {
            let grad = match p.grad() {
                Some(g) => g,
                None => continue,
            };
            match self.kind {
                OptimKind::Sgd => {
                    let lr = T::from_f64(self.lr);
                    if self.momentum > 0.0 {
                        let mu = T::from_f64(self.momentum);
                        let vel = &mut self.velocity[i];
                        p.tensor().with_data_mut(|data| {
                            for j in 0..data.len() {
                                vel[j] = mu * vel[j] + grad[j];
                                data[j] = data[j] - lr * vel[j];
                            }
                        });
                    } else {
                        p.tensor().with_data_mut(|data| {
                            for j in 0..data.len() {
                                data[j] = data[j] - lr * grad[j];
                            }
                        });
                    }
                }
                OptimKind::Adam => {
                    let b1 = T::from_f64(ADAM_BETA1);
                    let b2 = T::from_f64(ADAM_BETA2);
                    let one = T::ONE;
                    let corr1 = 1.0 - ADAM_BETA1.powi(self.step as i32);
                    let corr2 = 1.0 - ADAM_BETA2.powi(self.step as i32);
                    let lr = T::from_f64(self.lr * corr2.sqrt() / corr1);
                    let eps = T::from_f64(ADAM_EPS);
                    let m = &mut self.velocity[i];
                    let v = &mut self.moment2[i];
                    p.tensor().with_data_mut(|data| {
                        for j in 0..data.len() {
                            m[j] = b1 * m[j] + (one - b1) * grad[j];
                            v[j] = b2 * v[j] + (one - b2) * grad[j] * grad[j];
                            data[j] = data[j] - lr * m[j] / (v[j].sqrt() + eps);
                        }
                    });
                }
            }
            p.zero_grad();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ovgt_core::tensor::backward;

    #[test]
    fn sgd_descends_a_quadratic() {
        let p = Parameter::<f64>::new("x", &[2], vec![3.0, -2.0]);
        let mut opt = Optimizer::new(OptimKind::Sgd, 0.1, 0.0, std::slice::from_ref(&p));
        for _ in 0..100 {
            let loss = p.tensor().mul(p.tensor()).unwrap().sum_all();
            backward(&loss).unwrap();
            opt.step(std::slice::from_ref(&p));
        }
        assert!(p.tensor().to_vec().iter().all(|&v| v.abs() < 1e-6));
    }

    #[test]
    fn adam_descends_a_quadratic() {
        let p = Parameter::<f64>::new("x", &[2], vec![3.0, -2.0]);
        let mut opt = Optimizer::new(OptimKind::Adam, 0.1, 0.0, std::slice::from_ref(&p));
        for _ in 0..300 {
            let loss = p.tensor().mul(p.tensor()).unwrap().sum_all();
            backward(&loss).unwrap();
            opt.step(std::slice::from_ref(&p));
        }
        assert!(p.tensor().to_vec().iter().all(|&v| v.abs() < 1e-3));
    }
}
