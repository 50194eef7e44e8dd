use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::{Scalar, Tensor, TensorError};

/// Step hyperparameters. `lr` is the already-scheduled rate for this step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled weight decay (AdamW form). Zero disables it.
    pub weight_decay: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// First and second moments per parameter, plus the step counter.
#[derive(Clone, Debug)]
pub struct AdamState<T: Scalar> {
    pub m: IndexMap<String, Tensor<T>>,
    pub v: IndexMap<String, Tensor<T>>,
    pub t: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &ParamStore<T>) -> Self {
        let zeros = || {
            params
                .iter()
                .map(|(k, p)| (k.to_string(), Tensor::zeros(p.shape().to_vec())))
                .collect()
        };
        Self {
            m: zeros(),
            v: zeros(),
            t: 0,
        }
    }
}

/// One bias-corrected Adam update:
///
/// ```text
/// m ← β1·m + (1−β1)·g        v ← β2·v + (1−β2)·g²
/// p ← p − lr · (m / (1−β1ᵗ)) / (√(v / (1−β2ᵗ)) + eps)
/// ```
///
/// Arithmetic runs in 64-bit and is rounded to `T` on store. A zero step
/// leaves the parameter bits untouched.
pub fn adam_step<T: Scalar>(
    params: &mut ParamStore<T>,
    grads: &IndexMap<String, Tensor<T>>,
    state: &mut AdamState<T>,
    hp: &AdamHyper,
) -> Result<()> {
    if !(0.0..1.0).contains(&hp.beta1) || !(0.0..1.0).contains(&hp.beta2) {
        return Err(Error::Config(format!(
            "Adam betas must lie in [0, 1), got {} and {}",
            hp.beta1, hp.beta2
        )));
    }
    for (name, p) in params.iter() {
        let g = grads
            .get(name)
            .ok_or_else(|| Error::Config(format!("no gradient for parameter {name:?}")))?;
        if g.shape() != p.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "adam_step",
                lhs: p.shape().to_vec(),
                rhs: g.shape().to_vec(),
            }
            .into());
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - hp.beta1.powi(t);
    let c2 = 1.0 - hp.beta2.powi(t);
    for (name, p) in params.iter_mut() {
        let g = grads[name].data();
        let m = state
            .m
            .get_mut(name)
            .expect("state mirrors params")
            .data_mut();
        let v = state
            .v
            .get_mut(name)
            .expect("state mirrors params")
            .data_mut();
        let p = p.data_mut();
        for i in 0..p.len() {
            let gi = g[i].to_f64();
            let mi = hp.beta1 * m[i].to_f64() + (1.0 - hp.beta1) * gi;
            let vi = hp.beta2 * v[i].to_f64() + (1.0 - hp.beta2) * gi * gi;
            m[i] = T::from_f64(mi);
            v[i] = T::from_f64(vi);
            let pi = p[i].to_f64();
            let delta = hp.lr * ((mi / c1) / ((vi / c2).sqrt() + hp.eps) + hp.weight_decay * pi);
            if delta != 0.0 {
                p[i] = T::from_f64(pi - delta);
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup(vals: &[f64]) -> (ParamStore<f64>, AdamState<f64>) {
        let mut p = ParamStore::new();
        p.insert("w", Tensor::from_f64([vals.len()], vals).unwrap())
            .unwrap();
        let s = AdamState::new(&p);
        (p, s)
    }

    fn grads(vals: &[f64]) -> IndexMap<String, Tensor<f64>> {
        [(
            "w".to_string(),
            Tensor::from_f64([vals.len()], vals).unwrap(),
        )]
        .into_iter()
        .collect()
    }

    #[test]
    fn zero_gradient_first_step_is_a_fixed_point() {
        let (mut p, mut s) = setup(&[0.5, -2.0]);
        let before = p.clone();
        adam_step(&mut p, &grads(&[0.0, 0.0]), &mut s, &AdamHyper::default()).unwrap();
        assert!(p.bit_eq(&before));
        assert_eq!(s.t, 1);
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        // m̂ = g, v̂ = g², so the step is lr·g/(|g|+eps).
        let (mut p, mut s) = setup(&[1.0, 1.0, 1.0]);
        let g = [3.0, -0.25, 1e-3];
        adam_step(&mut p, &grads(&g), &mut s, &AdamHyper::default()).unwrap();
        for (k, &gi) in g.iter().enumerate() {
            let expect = 1.0 - 1e-3 * gi / (gi.abs() + 1e-8);
            assert!((p.get("w").unwrap().data()[k] - expect).abs() < 1e-15);
            assert!((p.get("w").unwrap().data()[k] - (1.0 - 1e-3 * gi.signum())).abs() < 1e-8);
        }
    }

    #[test]
    fn zero_rate_keeps_bits_but_advances_state() {
        let (mut p, mut s) = setup(&[0.1, -0.0, 7.0]);
        let before = p.clone();
        let hp = AdamHyper {
            lr: 0.0,
            ..AdamHyper::default()
        };
        adam_step(&mut p, &grads(&[1.0, -1.0, 0.5]), &mut s, &hp).unwrap();
        assert!(p.bit_eq(&before));
        assert_eq!(s.t, 1);
        assert!((s.m["w"].data()[0] - 0.1).abs() < 1e-15);
        assert!((s.v["w"].data()[2] - 0.001 * 0.25).abs() < 1e-15);
    }

    #[test]
    fn second_step_matches_hand_evaluation() {
        let (mut p, mut s) = setup(&[0.0]);
        let hp = AdamHyper::default();
        adam_step(&mut p, &grads(&[1.0]), &mut s, &hp).unwrap();
        adam_step(&mut p, &grads(&[-2.0]), &mut s, &hp).unwrap();
        let m = 0.9 * 0.1 + 0.1 * -2.0;
        let v = 0.999 * 0.001 + 0.001 * 4.0;
        let step2 = 1e-3 * (m / (1.0 - 0.81)) / ((v / (1.0 - 0.999f64.powi(2))).sqrt() + 1e-8);
        let expect = -1e-3 / (1.0 + 1e-8) - step2;
        assert!((p.get("w").unwrap().data()[0] - expect).abs() < 1e-15);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let (mut p, mut s) = setup(&[1.0, 2.0]);
        assert!(adam_step(&mut p, &grads(&[1.0]), &mut s, &AdamHyper::default()).is_err());
        assert_eq!(s.t, 0);
    }
}
