//! Adam with bias correction, plain gradient descent, and global-norm
//! gradient clipping.

use crate::numerics::tensor::{Parameter, Tensor};

#[derive(Debug, Clone)]
pub struct AdamState {
    pub m: Tensor,
    pub v: Tensor,
    pub t: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(shape: Vec<usize>, lr: f64) -> Self {
        AdamState {
            m: Tensor::zeros(shape.clone()),
            v: Tensor::zeros(shape),
            t: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// One Adam update for a single parameter. Grads are left untouched;
/// the caller zeroes them.
pub fn adam_step(state: &mut AdamState, param: &mut Parameter) {
    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    let g = param.grad.data();
    let m = state.m.data_mut();
    let v = state.v.data_mut();
    let p = param.value.data_mut();
    for i in 0..g.len() {
        m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
        v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        p[i] -= state.lr * m_hat / (v_hat.sqrt() + state.epsilon);
    }
}

/// Plain gradient descent: `p -= lr * g`.
pub fn sgd_step(param: &mut Parameter, lr: f64) {
    let g = param.grad.data().to_vec();
    let p = param.value.data_mut();
    for i in 0..g.len() {
        p[i] -= lr * g[i];
    }
}

/// Global L2-norm clipping over all given parameters' gradients.
/// Returns the scaling factor that was applied (1.0 when under the cap).
pub fn clip_gradients<'a>(params: impl Iterator<Item = &'a mut Parameter>, max_norm: f64) -> f64 {
    let mut params: Vec<&mut Parameter> = params.collect();
    let sq: f64 = params
        .iter()
        .map(|p| p.grad.data().iter().map(|g| g * g).sum::<f64>())
        .sum();
    let norm = sq.sqrt();
    if norm <= max_norm || norm == 0.0 {
        return 1.0;
    }
    let factor = max_norm / norm;
    for p in params.iter_mut() {
        for g in p.grad.data_mut() {
            *g *= factor;
        }
    }
    factor
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_magnitude_is_roughly_lr() {
        // bias-corrected first step is -lr * sign(g) when |g| >> epsilon
        let mut p = Parameter::new("w", Tensor::vector(vec![1.0]));
        p.grad = Tensor::vector(vec![0.3]);
        let mut st = AdamState::new(vec![1], 0.01);
        adam_step(&mut st, &mut p);
        let delta = p.value.data()[0] - 1.0;
        assert!((delta + 0.01).abs() < 1e-6, "delta = {delta}");
        assert_eq!(st.t, 1);
        // grads untouched
        assert_eq!(p.grad.data(), &[0.3]);
    }

    #[test]
    fn zero_grad_fresh_state_leaves_parameter_unchanged() {
        let mut p = Parameter::new("w", Tensor::vector(vec![2.5, -1.0]));
        let mut st = AdamState::new(vec![2], 0.01);
        adam_step(&mut st, &mut p);
        assert_eq!(p.value.data(), &[2.5, -1.0]);
    }

    #[test]
    fn identical_problems_give_identical_trajectories() {
        let run = || {
            let mut p = Parameter::new("w", Tensor::vector(vec![1.0]));
            let mut st = AdamState::new(vec![1], 0.05);
            let mut trace = Vec::new();
            for _ in 0..20 {
                // loss = (w - 3)^2
                p.grad = Tensor::vector(vec![2.0 * (p.value.data()[0] - 3.0)]);
                adam_step(&mut st, &mut p);
                trace.push(p.value.data()[0].to_bits());
            }
            trace
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn clip_scales_down_over_cap() {
        let mut p = Parameter::new("w", Tensor::vector(vec![0.0, 0.0]));
        p.grad = Tensor::vector(vec![2.0, 0.0]);
        let f = clip_gradients(std::iter::once(&mut p), 1.0);
        assert_eq!(f, 0.5);
        assert_eq!(p.grad.data(), &[1.0, 0.0]);
    }

    #[test]
    fn clip_leaves_small_grads_alone() {
        let mut p = Parameter::new("w", Tensor::vector(vec![0.0]));
        p.grad = Tensor::vector(vec![0.5]);
        let f = clip_gradients(std::iter::once(&mut p), 1.0);
        assert_eq!(f, 1.0);
        assert_eq!(p.grad.data(), &[0.5]);
    }

    #[test]
    fn clip_is_global_across_parameters() {
        // 3-4-5 triangle across two parameters
        let mut a = Parameter::new("a", Tensor::vector(vec![0.0]));
        let mut b = Parameter::new("b", Tensor::vector(vec![0.0]));
        a.grad = Tensor::vector(vec![3.0]);
        b.grad = Tensor::vector(vec![4.0]);
        let f = clip_gradients(vec![&mut a, &mut b].into_iter(), 1.0);
        assert!((f - 0.2).abs() < 1e-15);
        assert!((a.grad.data()[0] - 0.6).abs() < 1e-15);
        assert!((b.grad.data()[0] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn clip_never_increases_norm() {
        let mut state = 1234567u64;
        let mut next = move || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64 * 4.0 - 2.0
        };
        for _ in 0..50 {
            let mut p = Parameter::new("w", Tensor::vector(vec![0.0; 6]));
            p.grad = Tensor::vector((0..6).map(|_| next()).collect());
            clip_gradients(std::iter::once(&mut p), 1.0);
            let norm: f64 = p.grad.data().iter().map(|g| g * g).sum::<f64>().sqrt();
            assert!(norm <= 1.0 + 1e-12);
        }
    }
}
