use crate::error::{Error, Result};
use crate::params::ParamStore;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Adam moments for every parameter of one store.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub m: Vec<Vec<f32>>,
    pub v: Vec<Vec<f32>>,
    pub t: u64,
}

impl OptimizerState {
    pub fn new(params: &ParamStore) -> Self {
        let zeros: Vec<Vec<f32>> = params.iter().map(|(_, _, t)| vec![0.0; t.len()]).collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }
}

/// One bias-corrected Adam update from the gradients stored on the
/// parameters; the gradients are zeroed afterwards.
pub fn adam_step(params: &mut ParamStore, state: &mut OptimizerState, lr: f64) -> Result<()> {
    if state.m.len() != params.len() {
        return Err(Error::Contract(format!(
            "optimizer state for {} parameters, store has {}",
            state.m.len(),
            params.len()
        )));
    }
    let ids: Vec<_> = params.ids().collect();
    for &id in &ids {
        if params.get(id).grad().is_none() {
            return Err(Error::Contract(format!(
                "parameter {} has no gradient",
                params.name(id)
            )));
        }
    }
    state.t += 1;
    let bc1 = 1.0 - BETA1.powi(state.t as i32);
    let bc2 = 1.0 - BETA2.powi(state.t as i32);
    let (b1, b2) = (BETA1 as f32, BETA2 as f32);
    for id in ids {
        let i = id.index();
        let t = params.get_mut(id);
        let grad = t.grad().expect("checked").to_vec();
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for (j, p) in t.data_mut().iter_mut().enumerate() {
            let g = grad[j];
            m[j] = b1 * m[j] + (1.0 - b1) * g;
            v[j] = b2 * v[j] + (1.0 - b2) * g * g;
            let m_hat = m[j] as f64 / bc1;
            let v_hat = v[j] as f64 / bc2;
            *p -= (lr * m_hat / (v_hat.sqrt() + ADAM_EPS)) as f32;
        }
        t.zero_grad();
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use approx::assert_abs_diff_eq;

    fn store(value: f32) -> ParamStore {
        let mut s = ParamStore::new();
        s.insert("w", Tensor::zeros(vec![3])).unwrap();
        let id = s.ids().next().unwrap();
        s.get_mut(id).set_grad(Some(vec![value; 3]));
        s
    }

    #[test]
    fn first_step_moves_by_lr() {
        for g in [0.3f32, -7.0, 1e-3] {
            let mut s = store(g);
            let mut st = OptimizerState::new(&s);
            adam_step(&mut s, &mut st, 0.01).unwrap();
            let w = s.by_name("w").unwrap();
            for &v in w.data() {
                assert_abs_diff_eq!(v, -0.01 * g.signum(), epsilon = 1e-5);
            }
            assert!(w.grad().unwrap().iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut s = store(0.0);
        let mut st = OptimizerState::new(&s);
        adam_step(&mut s, &mut st, 0.1).unwrap();
        assert!(s.by_name("w").unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn two_unit_steps() {
        let mut s = store(1.0);
        let mut st = OptimizerState::new(&s);
        adam_step(&mut s, &mut st, 0.001).unwrap();
        let id = s.ids().next().unwrap();
        s.get_mut(id).set_grad(Some(vec![1.0; 3]));
        adam_step(&mut s, &mut st, 0.001).unwrap();
        for &v in s.by_name("w").unwrap().data() {
            assert_abs_diff_eq!(v, -0.002, epsilon = 1e-5);
        }
        assert_eq!(st.t, 2);
    }

    #[test]
    fn missing_gradient_is_contract_error() {
        let mut s = ParamStore::new();
        s.insert("w", Tensor::zeros(vec![2])).unwrap();
        let mut st = OptimizerState::new(&s);
        assert!(matches!(
            adam_step(&mut s, &mut st, 0.1),
            Err(Error::Contract(_))
        ));
        assert_eq!(st.t, 0);
    }
}
