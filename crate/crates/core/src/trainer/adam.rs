use super::TrainConfig;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// First and second moments per parameter, plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub t: u64,
}

impl AdamState {
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Tensor>) -> Self {
        let m: Vec<Tensor> = params.into_iter().map(Tensor::zeros_like).collect();
        AdamState {
            v: m.clone(),
            m,
            t: 0,
        }
    }
}

/// One Adam update. Gradients are checked before anything is modified, so a
/// non-finite gradient leaves parameters and state untouched.
pub fn adam_step(
    params: &mut [(String, &mut Tensor)],
    grads: &[Tensor],
    state: &mut AdamState,
    config: &TrainConfig,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::invalid(format!(
            "{} parameters, {} gradients, {} optimizer slots",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for ((name, p), g) in params.iter().zip(grads) {
        if p.dims() != g.dims() {
            return Err(Error::ShapeMismatch {
                expected: p.dims().to_vec(),
                actual: g.dims().to_vec(),
            });
        }
        if !g.is_finite() {
            return Err(Error::NonFiniteGradient(name.clone()));
        }
    }
    state.t += 1;
    let (b1, b2) = (config.adam_beta1, config.adam_beta2);
    let c1 = 1.0 - b1.powf(state.t as f64);
    let c2 = 1.0 - b2.powf(state.t as f64);
    let lr = config.learning_rate;
    for (i, ((_, p), g)) in params.iter_mut().zip(grads).enumerate() {
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        for (((theta, &g), m), v) in p.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            let delta = lr * m_hat / (v_hat.sqrt() + config.adam_eps);
            // skipping keeps a zero learning rate bitwise neutral, even on −0.0
            if lr != 0.0 {
                *theta -= delta;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(g: f64, steps: usize, config: &TrainConfig) -> (Vec<f64>, AdamState) {
        let mut theta = Tensor::from_vec(&[3], vec![1.0, -2.0, 0.25]).unwrap();
        let mut state = AdamState::new([&theta]);
        let grad = Tensor::full(&[3], g).unwrap();
        let mut trace = vec![];
        for _ in 0..steps {
            let before = theta.data()[0];
            adam_step(&mut [("w".into(), &mut theta)], &[grad.clone()], &mut state, config).unwrap();
            trace.push(theta.data()[0] - before);
        }
        (trace, state)
    }

    #[test]
    fn first_step_moves_by_lr() {
        let (trace, state) = run(0.5, 1, &TrainConfig::default());
        // m̂ = 0.5, v̂ = 0.25, Δ = −1e-3 · 0.5 / (0.5 + 1e-8)
        let expected = -1e-3 * 0.5 / (0.5 + 1e-8);
        assert!((trace[0] - expected).abs() < 1e-15);
        assert!((trace[0] + 9.99999980e-4).abs() < 1e-12);
        assert_eq!(state.t, 1);
    }

    #[test]
    fn second_step_also_moves_by_lr() {
        let (trace, _) = run(0.5, 2, &TrainConfig::default());
        assert!((trace[1] + 1e-3).abs() < 1e-9);
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let (trace, state) = run(0.0, 5, &TrainConfig::default());
        assert!(trace.iter().all(|&d| d == 0.0));
        assert_eq!(state.t, 5);
    }

    #[test]
    fn zero_lr_keeps_params_but_advances_moments() {
        let config = TrainConfig { learning_rate: 0.0, ..Default::default() };
        let (trace, state) = run(0.3, 3, &config);
        assert!(trace.iter().all(|&d| d == 0.0));
        assert!(state.m[0].data().iter().all(|&m| m > 0.0));
    }

    #[test]
    fn non_finite_gradient_names_the_parameter() {
        let mut theta = Tensor::zeros(&[2]).unwrap();
        let mut state = AdamState::new([&theta]);
        let bad = Tensor::from_vec(&[2], vec![1.0, f64::NAN]).unwrap();
        let err = adam_step(&mut [("fc1.weight".into(), &mut theta)], &[bad], &mut state, &TrainConfig::default())
            .unwrap_err();
        assert!(err.to_string().contains("fc1.weight"));
        assert_eq!(state.t, 0);
    }
}
