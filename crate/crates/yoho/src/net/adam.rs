//! Adam optimizer with bias correction.

use super::Network;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-7;

/// First/second moment state per parameter tensor, keyed by the network's
/// parameter iteration order.
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(net: &Network, learning_rate: f64) -> Self {
        assert!(learning_rate > 0.0, "learning rate must be positive");
        let sizes: Vec<usize> = net.named_params().iter().map(|(_, p)| p.len()).collect();
        Adam {
            learning_rate,
            step: 0,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn step_index(&self) -> u64 {
        self.step
    }

    /// One update from the gradients currently held by the network.
    pub fn step(&mut self, net: &mut Network) {
        self.step += 1;
        let bc1 = 1.0 - BETA1.powi(self.step as i32);
        let bc2 = 1.0 - BETA2.powi(self.step as i32);
        let lr = self.learning_rate;
        for (idx, (_, param)) in net.named_params_mut().into_iter().enumerate() {
            let m = &mut self.m[idx];
            let v = &mut self.v[idx];
            let grad = param.grad.as_ref().expect("parameters carry gradients");
            for i in 0..grad.len() {
                let g = grad[i];
                m[i] = BETA1 * m[i] + (1.0 - BETA1) * g;
                v[i] = BETA2 * v[i] + (1.0 - BETA2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                param.data[i] -= lr * m_hat / (v_hat.sqrt() + EPSILON);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{build_yoho, BuildConfig};

    fn small_net() -> Network {
        build_yoho(
            32,
            8,
            1,
            BuildConfig {
                width_divisor: 8,
                seed: 7,
            },
        )
        .unwrap()
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut net = small_net();
        let before: Vec<f64> = net
            .named_params()
            .iter()
            .flat_map(|(_, p)| p.data.clone())
            .collect();
        let mut adam = Adam::new(&net, 0.001);
        net.zero_grads();
        adam.step(&mut net);
        let after: Vec<f64> = net
            .named_params()
            .iter()
            .flat_map(|(_, p)| p.data.clone())
            .collect();
        assert_eq!(before, after);
    }

    #[test]
    fn first_step_moves_by_learning_rate_against_gradient_sign() {
        let mut net = small_net();
        let lr = 0.01;
        let mut adam = Adam::new(&net, lr);
        net.zero_grads();
        // Constant gradient 0.5 on every parameter.
        for (_, p) in net.named_params_mut() {
            p.grad_mut().iter_mut().for_each(|g| *g = 0.5);
        }
        let before: Vec<f64> = net
            .named_params()
            .iter()
            .flat_map(|(_, p)| p.data.clone())
            .collect();
        adam.step(&mut net);
        let after: Vec<f64> = net
            .named_params()
            .iter()
            .flat_map(|(_, p)| p.data.clone())
            .collect();
        for (b, a) in before.iter().zip(after.iter()) {
            let delta = a - b;
            // Bias-corrected first step: delta ~ -lr * sign(g).
            assert!(
                (delta + lr).abs() < lr * 1e-3,
                "delta {delta}, expected about {}",
                -lr
            );
        }
    }

    #[test]
    fn constant_gradient_update_magnitude_approaches_learning_rate() {
        let mut net = small_net();
        let lr = 0.001;
        let mut adam = Adam::new(&net, lr);
        let g = -0.37;
        let mut last: Option<f64> = None;
        for step in 0..400 {
            net.zero_grads();
            for (_, p) in net.named_params_mut() {
                p.grad_mut().iter_mut().for_each(|gv| *gv = g);
            }
            let before = net.named_params()[0].1.data[0];
            adam.step(&mut net);
            let after = net.named_params()[0].1.data[0];
            if step > 300 {
                last = Some(after - before);
            }
        }
        let delta = last.unwrap();
        // Steady state: magnitude converges to lr, direction opposes g.
        assert!(
            (delta - lr).abs() < lr * 0.01,
            "steady-state delta {delta} vs lr {lr}"
        );
    }
}
