use serde::{Deserialize, Serialize};

use super::{check_same_layout, NnError, Parameters};

/// `p <- p - lr * g`.
pub fn sgd_update<P: Parameters>(params: &mut P, grads: &P, lr: f64) -> Result<(), NnError> {
    check_same_layout(params, grads)?;
    let g = grads.to_flat();
    let mut offset = 0;
    params.visit_mut(&mut |_, data| {
        for (p, gi) in data.iter_mut().zip(&g[offset..]) {
            *p -= lr * gi;
        }
        offset += data.len();
    });
    if !params.all_finite() {
        return Err(NnError::NonFinite("sgd update"));
    }
    Ok(())
}

/// Adam moment estimates for one parameter set, stored flat in visiting order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(num_parameters: usize) -> Self {
        AdamState {
            first_moment: vec![0.0; num_parameters],
            second_moment: vec![0.0; num_parameters],
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    pub fn for_params<P: Parameters + ?Sized>(params: &P) -> Self {
        AdamState::new(params.num_parameters())
    }
}

/// One bias-corrected Adam step.
pub fn adam_update<P: Parameters>(params: &mut P, grads: &P, state: &mut AdamState, lr: f64) -> Result<(), NnError> {
    check_same_layout(params, grads)?;
    let g = grads.to_flat();
    if state.first_moment.len() != g.len() || state.second_moment.len() != g.len() {
        return Err(NnError::Shape(format!(
            "adam state holds {} moments for {} parameters",
            state.first_moment.len(),
            g.len()
        )));
    }
    state.step += 1;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.epsilon);
    let correction1 = 1.0 - b1.powi(state.step as i32);
    let correction2 = 1.0 - b2.powi(state.step as i32);
    let mut k = 0;
    let (m, v) = (&mut state.first_moment, &mut state.second_moment);
    params.visit_mut(&mut |_, data| {
        for p in data.iter_mut() {
            m[k] = b1 * m[k] + (1.0 - b1) * g[k];
            v[k] = b2 * v[k] + (1.0 - b2) * g[k] * g[k];
            let m_hat = m[k] / correction1;
            let v_hat = v[k] / correction2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
            k += 1;
        }
    });
    if !params.all_finite() {
        return Err(NnError::NonFinite("adam update"));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sgd_arithmetic() {
        let mut p = vec![1.0];
        sgd_update(&mut p, &vec![2.0], 0.1).unwrap();
        assert!((p[0] - 0.8).abs() < 1e-15);
        let mut q = vec![1.0, -3.0];
        sgd_update(&mut q, &vec![5.0, 7.0], 0.0).unwrap();
        assert_eq!(q, vec![1.0, -3.0]);
    }

    #[test]
    fn sgd_shape_mismatch() {
        let mut p = vec![1.0];
        assert!(matches!(sgd_update(&mut p, &vec![1.0, 2.0], 0.1), Err(NnError::Shape(_))));
    }

    #[test]
    fn sgd_on_quadratic_decays_geometrically() {
        let mut w = vec![1.0];
        for _ in 0..50 {
            let g = vec![2.0 * w[0]];
            sgd_update(&mut w, &g, 0.1).unwrap();
        }
        // w_n = 0.8^n
        assert!((w[0] - 0.8f64.powi(50)).abs() < 1e-15);
        assert!(w[0].abs() < 1e-4);
    }

    #[test]
    fn sgd_rejects_non_finite() {
        let mut p = vec![1.0];
        assert_eq!(sgd_update(&mut p, &vec![f64::INFINITY], 1.0), Err(NnError::NonFinite("sgd update")));
    }

    #[test]
    fn adam_zero_gradient_is_a_no_op() {
        let mut p = vec![0.3, -0.7];
        let mut s = AdamState::for_params(&p);
        for _ in 0..10 {
            adam_update(&mut p, &vec![0.0, 0.0], &mut s, 0.01).unwrap();
        }
        assert_eq!(p, vec![0.3, -0.7]);
        assert_eq!(s.step, 10);
    }

    #[test]
    fn adam_first_step() {
        let mut p = vec![0.0];
        let mut s = AdamState::for_params(&p);
        adam_update(&mut p, &vec![1.0], &mut s, 0.001).unwrap();
        assert!((p[0] + 0.001 / (1.0 + 1e-8)).abs() < 1e-15);
    }

    #[test]
    fn adam_converges_on_quadratic() {
        let mut w = vec![1.0];
        let mut s = AdamState::for_params(&w);
        for _ in 0..2000 {
            let g = vec![2.0 * w[0]];
            adam_update(&mut w, &g, &mut s, 0.01).unwrap();
        }
        assert!(w[0].abs() < 1e-2, "{}", w[0]);
    }

    #[test]
    fn adam_is_pure() {
        let p0 = vec![0.5, 0.25];
        let g = vec![0.1, -0.4];
        let s0 = AdamState::for_params(&p0);
        let (mut pa, mut sa) = (p0.clone(), s0.clone());
        let (mut pb, mut sb) = (p0.clone(), s0);
        adam_update(&mut pa, &g, &mut sa, 0.01).unwrap();
        adam_update(&mut pb, &g, &mut sb, 0.01).unwrap();
        assert_eq!(pa, pb);
        assert_eq!(sa, sb);
    }
}
