//! AdamW with decoupled weight decay and the linear learning-rate
//! schedule.

use num_traits::Float;

use crate::labels::NUM_LABELS;
use crate::trainer::{Gradients, ModelState, TrainConfig, TrainError};

/// Linearly decayed learning rate: `lr0 * (1 - step / total_steps)` with
/// `step` counting completed steps (0-based), floored at zero.
pub fn linear_lr<T: Float>(step: u64, total_steps: u64, lr0: T) -> T {
    assert!(total_steps >= 1, "total_steps must be >= 1");
    let frac = T::from(step).unwrap() / T::from(total_steps).unwrap();
    (T::one() - frac).max(T::zero()) * lr0
}

/// Constants shared by every parameter within one optimizer step.
struct StepScale<T> {
    lr: T,
    beta1: T,
    beta2: T,
    bc1: T,
    bc2: T,
    eps: T,
    weight_decay: T,
}

#[inline]
fn adamw_update<T: Float>(theta: &mut T, m: &mut T, v: &mut T, g: T, s: &StepScale<T>) {
    *m = s.beta1 * *m + (T::one() - s.beta1) * g;
    *v = s.beta2 * *v + (T::one() - s.beta2) * g * g;
    let m_hat = *m / s.bc1;
    let v_hat = *v / s.bc2;
    *theta = *theta - s.lr * (m_hat / (v_hat.sqrt() + s.eps) + s.weight_decay * *theta);
}

/// One AdamW step over every parameter (weights and biases). Moments decay
/// even where the gradient is zero; weight decay is decoupled:
/// `theta <- theta - lr * (m_hat / (sqrt(v_hat) + eps) + lambda * theta)`.
pub fn adamw_step<T: Float>(
    model: &mut ModelState<T>,
    grads: &Gradients<T>,
    lr: T,
    config: &TrainConfig<T>,
) -> Result<(), TrainError> {
    if grads.dim() != model.dim() {
        return Err(TrainError::DimensionMismatch {
            expected: model.dim(),
            found: grads.dim(),
        });
    }
    let step = model.step_count() + 1;
    if grads.d_weights.iter().any(|g| !g.is_finite()) || grads.d_bias.iter().any(|g| !g.is_finite())
    {
        return Err(TrainError::NonFiniteGradient { step });
    }
    let t = i32::try_from(step).expect("step count fits i32");
    let scale = StepScale {
        lr,
        beta1: config.beta1,
        beta2: config.beta2,
        bc1: T::one() - config.beta1.powi(t),
        bc2: T::one() - config.beta2.powi(t),
        eps: config.eps,
        weight_decay: config.weight_decay,
    };
    let p = model.params_mut();
    for i in 0..p.weights.len() {
        adamw_update(
            &mut p.weights[i],
            &mut p.m_weights[i],
            &mut p.v_weights[i],
            grads.d_weights[i],
            &scale,
        );
    }
    for l in 0..NUM_LABELS {
        adamw_update(
            &mut p.bias[l],
            &mut p.m_bias[l],
            &mut p.v_bias[l],
            grads.d_bias[l],
            &scale,
        );
    }
    model.bump_step();
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::labels::BiasLabel;
    use approx::assert_relative_eq;

    #[test]
    fn linear_lr_endpoints_and_midpoint() {
        assert_relative_eq!(linear_lr(0, 10, 0.1), 0.1, epsilon = 1e-15);
        assert_relative_eq!(linear_lr(5, 10, 0.1), 0.05, epsilon = 1e-15);
        assert_relative_eq!(linear_lr(10, 10, 0.1), 0.0, epsilon = 1e-15);
        assert_eq!(linear_lr(20, 10, 0.1), 0.0);
    }

    #[test]
    fn linear_lr_is_monotone_nonincreasing() {
        let mut prev = f64::INFINITY;
        for step in 0..=50 {
            let lr = linear_lr(step, 50, 0.3);
            assert!(lr <= prev);
            assert!(lr >= 0.0);
            prev = lr;
        }
    }

    #[test]
    fn step_increments_counter_and_moves_against_gradient() {
        let config = TrainConfig::<f64> {
            weight_decay: 0.0,
            ..TrainConfig::default()
        };
        let mut model = ModelState::<f64>::new(4);
        let mut grads = Gradients::zeros(4);
        grads.d_bias[0] = 1.0;
        adamw_step(&mut model, &grads, 0.1, &config).unwrap();
        assert_eq!(model.step_count(), 1);
        // First step: m_hat/(sqrt(v_hat)+eps) ~ 1, so theta ~ -lr.
        assert_relative_eq!(model.bias(BiasLabel::Political), -0.1, epsilon = 1e-8);
        // Untouched parameters stay at zero when decay pulls on zero.
        assert_eq!(model.bias(BiasLabel::Gender), 0.0);
    }

    #[test]
    fn pure_decay_shrinks_parameters_geometrically() {
        // Zero gradients and zero moments: only the decoupled decay acts,
        // so theta_t = theta_0 * (1 - lr*lambda)^t exactly.
        let config = TrainConfig::<f64> {
            weight_decay: 0.5,
            ..TrainConfig::default()
        };
        let mut model = ModelState::<f64>::new(4);
        model.set_params(BiasLabel::Political, &[(2, -0.5)], 1.0);
        let grads = Gradients::zeros(4);

        let lr = 0.2;
        let mut expected_bias = 1.0;
        let mut expected_weight = -0.5;
        for _ in 0..5 {
            adamw_step(&mut model, &grads, lr, &config).unwrap();
            expected_bias *= 1.0 - lr * config.weight_decay;
            expected_weight *= 1.0 - lr * config.weight_decay;
            assert_relative_eq!(
                model.bias(BiasLabel::Political),
                expected_bias,
                epsilon = 1e-12
            );
            assert_relative_eq!(
                model.weight_row(BiasLabel::Political)[2],
                expected_weight,
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn zero_decay_matches_plain_adam_bitwise() {
        // lambda = 0 makes the decay term exactly zero, so trajectories are
        // bit-identical to an Adam implementation without the decay term.
        let config = TrainConfig::<f64> {
            weight_decay: 0.0,
            ..TrainConfig::default()
        };
        let mut model = ModelState::<f64>::new(2);
        let (mut theta, mut m, mut v) = (0.0_f64, 0.0_f64, 0.0_f64);
        let mut g = 0.7_f64;
        for t in 1..=200 {
            let mut grads = Gradients::zeros(2);
            grads.d_bias[0] = g;
            adamw_step(&mut model, &grads, 0.05, &config).unwrap();

            m = config.beta1 * m + (1.0 - config.beta1) * g;
            v = config.beta2 * v + (1.0 - config.beta2) * g * g;
            let m_hat = m / (1.0 - config.beta1.powi(t));
            let v_hat = v / (1.0 - config.beta2.powi(t));
            theta -= 0.05 * (m_hat / (v_hat.sqrt() + config.eps));
            assert_eq!(model.bias(BiasLabel::Political).to_bits(), theta.to_bits());
            g = -g * 0.99;
        }
    }

    #[test]
    fn non_finite_gradient_is_rejected() {
        let config = TrainConfig::<f64>::default();
        let mut model = ModelState::<f64>::new(4);
        let mut grads = Gradients::zeros(4);
        grads.d_weights[3] = f64::NAN;
        assert!(matches!(
            adamw_step(&mut model, &grads, 0.1, &config),
            Err(TrainError::NonFiniteGradient { step: 1 })
        ));
        // Failed steps leave the counter untouched.
        assert_eq!(model.step_count(), 0);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let config = TrainConfig::<f64>::default();
        let mut model = ModelState::<f64>::new(4);
        let grads = Gradients::zeros(8);
        assert!(matches!(
            adamw_step(&mut model, &grads, 0.1, &config),
            Err(TrainError::DimensionMismatch { .. })
        ));
    }
}
