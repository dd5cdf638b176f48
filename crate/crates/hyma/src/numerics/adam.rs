use super::tensor::Tensor;
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Adam optimizer state. `lr` is supplied per step from the schedule.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step_count: usize,
    pub first_moment: Vec<Vec<f64>>,
    pub second_moment: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(beta1: f64, beta2: f64, eps: f64, param_sizes: &[usize]) -> Result<Self> {
        if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) {
            return Err(Error::Argument("betas must lie in [0,1)".into()));
        }
        if eps <= 0.0 {
            return Err(Error::Argument("eps must be positive".into()));
        }
        Ok(AdamState {
            beta1,
            beta2,
            eps,
            step_count: 0,
            first_moment: param_sizes.iter().map(|&n| vec![0.0; n]).collect(),
            second_moment: param_sizes.iter().map(|&n| vec![0.0; n]).collect(),
        })
    }
}

/// One bias-corrected Adam update over a set of named parameter leaves.
/// `grads[i]` may be `None` for a leaf that did not participate this step;
/// its moments still decay.
pub fn adam_step(
    state: &mut AdamState,
    names: &[String],
    params: &mut [&mut Tensor],
    grads: &[Option<Tensor>],
    lr: f64,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.first_moment.len() {
        return Err(Error::Dimension("adam_step: param/grad count mismatch".into()));
    }
    for (i, g) in grads.iter().enumerate() {
        if let Some(g) = g {
            if g.data.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteGradient(names[i].clone()));
            }
            if g.shape != params[i].shape {
                return Err(Error::Dimension(format!(
                    "adam_step: grad shape mismatch for `{}`",
                    names[i]
                )));
            }
        }
    }
    state.step_count += 1;
    let t = state.step_count as f64;
    let bc1 = 1.0 - state.beta1.powf(t);
    let bc2 = 1.0 - state.beta2.powf(t);
    for i in 0..params.len() {
        let m = &mut state.first_moment[i];
        let v = &mut state.second_moment[i];
        let p = &mut params[i].data;
        let zero = vec![];
        let g = grads[i].as_ref().map(|g| g.data.as_slice()).unwrap_or(&zero);
        for j in 0..p.len() {
            let gj = if g.is_empty() { 0.0 } else { g[j] };
            m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * gj;
            v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * gj * gj;
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            p[j] -= lr * m_hat / (v_hat.sqrt() + state.eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("p{i}")).collect()
    }

    fn step(
        st: &mut AdamState,
        names: &[String],
        params: &mut [Tensor],
        grads: &[Option<Tensor>],
        lr: f64,
    ) -> Result<()> {
        let mut refs: Vec<&mut Tensor> = params.iter_mut().collect();
        adam_step(st, names, &mut refs, grads, lr)
    }

    #[test]
    fn zero_grads_leave_params_unchanged() {
        let mut st = AdamState::new(0.9, 0.999, 1e-8, &[3]).unwrap();
        let mut params = vec![Tensor::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap()];
        let grads = vec![Some(Tensor::zeros(vec![3]))];
        step(&mut st, &names(1), &mut params, &grads, 0.1).unwrap();
        assert_eq!(params[0].data, vec![1.0, -2.0, 0.5]);
        assert_eq!(st.step_count, 1);
    }

    #[test]
    fn first_step_is_a_unit_step_scaled_by_lr() {
        // Hand oracle: m̂ = 1, v̂ = 1 after one step with g = 1, so
        // Δ = −lr·1/(1+eps) ≈ −0.1.
        let mut st = AdamState::new(0.9, 0.999, 1e-8, &[1]).unwrap();
        let mut params = vec![Tensor::scalar(0.0)];
        let grads = vec![Some(Tensor::scalar(1.0))];
        step(&mut st, &names(1), &mut params, &grads, 0.1).unwrap();
        let expected = -0.1 / (1.0 + 1e-8);
        assert!((params[0].data[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn two_identical_steps_match_hand_oracle() {
        let (b1, b2, eps, lr) = (0.9, 0.999, 1e-8, 0.1);
        let mut st = AdamState::new(b1, b2, eps, &[1]).unwrap();
        let mut params = vec![Tensor::scalar(0.0)];
        let grads = vec![Some(Tensor::scalar(1.0))];
        step(&mut st, &names(1), &mut params, &grads, lr).unwrap();
        step(&mut st, &names(1), &mut params, &grads, lr).unwrap();

        // hand-computed second step
        let m2 = b1 * (1.0 - b1) + (1.0 - b1); // = (1-b1)(1+b1)
        let v2 = b2 * (1.0 - b2) + (1.0 - b2);
        let m_hat = m2 / (1.0 - b1 * b1);
        let v_hat = v2 / (1.0 - b2 * b2);
        let step1 = -lr * 1.0 / (1.0 + eps);
        let step2 = -lr * m_hat / (v_hat.sqrt() + eps);
        assert!((params[0].data[0] - (step1 + step2)).abs() < 1e-15);
    }

    #[test]
    fn non_finite_gradient_names_the_parameter() {
        let mut st = AdamState::new(0.9, 0.999, 1e-8, &[1]).unwrap();
        let mut params = vec![Tensor::scalar(0.0)];
        let grads = vec![Some(Tensor::scalar(f64::NAN))];
        let err = step(&mut st, &names(1), &mut params, &grads, 0.1).unwrap_err();
        assert!(err.to_string().contains("p0"));
    }

    #[test]
    fn deterministic_bytes_in_bytes_out() {
        let run = || {
            let mut st = AdamState::new(0.9, 0.999, 1e-8, &[2]).unwrap();
            let mut params = vec![Tensor::new(vec![2], vec![0.3, -0.7]).unwrap()];
            let grads = vec![Some(Tensor::new(vec![2], vec![0.11, -0.02]).unwrap())];
            for _ in 0..5 {
                step(&mut st, &names(1), &mut params, &grads, 0.05).unwrap();
            }
            (params[0].data.clone(), st)
        };
        let (p1, s1) = run();
        let (p2, s2) = run();
        assert!(p1.iter().zip(&p2).all(|(a, b)| a.to_bits() == b.to_bits()));
        assert_eq!(s1, s2);
    }

    #[test]
    fn second_moment_stays_nonnegative() {
        let mut st = AdamState::new(0.9, 0.999, 1e-8, &[1]).unwrap();
        let mut params = vec![Tensor::scalar(1.0)];
        for g in [-3.0, 2.0, -0.5] {
            let grads = vec![Some(Tensor::scalar(g))];
            step(&mut st, &names(1), &mut params, &grads, 0.01).unwrap();
            assert!(st.second_moment[0][0] >= 0.0);
        }
    }
}
