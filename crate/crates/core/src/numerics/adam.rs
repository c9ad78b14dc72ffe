use super::params::ParamSet;
use crate::error::{DginError, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, ..Self::default() }
    }
}

/// Bias-corrected Adam update over every parameter, then zeroes the gradients.
///
/// All gradients are checked before anything is modified, so a non-finite
/// gradient leaves the whole set untouched.
pub fn adam_step(params: &mut ParamSet, cfg: &AdamConfig) -> Result<()> {
    for (_, p) in params.iter() {
        if !p.gradient.is_finite() {
            return Err(DginError::NonFiniteGradient { name: p.name.clone() });
        }
    }
    for p in params.iter_mut() {
        p.step_count += 1;
        let t = p.step_count as i32;
        let c1 = 1.0 - cfg.beta1.powi(t);
        let c2 = 1.0 - cfg.beta2.powi(t);
        let grid = p.grid.values_mut();
        let m = p.adam_m.values_mut();
        let v = p.adam_v.values_mut();
        for (i, g) in p.gradient.values_mut().iter_mut().enumerate() {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * *g;
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * *g * *g;
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            grid[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
            *g = 0.0;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{Parameter, ValueGrid};

    fn scalar_set(v: f64) -> ParamSet {
        let mut ps = ParamSet::new();
        ps.insert(Parameter::new("w", ValueGrid::scalar(v))).unwrap();
        ps
    }

    #[test]
    fn zero_gradient_leaves_parameter() {
        let mut ps = scalar_set(0.7);
        adam_step(&mut ps, &AdamConfig::default()).unwrap();
        assert_eq!(ps.get(ps.id("w").unwrap()).grid.item(), 0.7);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut ps = scalar_set(1.0);
        let id = ps.id("w").unwrap();
        ps.get_mut(id).gradient.fill(1.0);
        adam_step(&mut ps, &AdamConfig::default()).unwrap();
        // m_hat = 1, v_hat = 1 => delta = lr / (1 + eps)
        let expected = 1.0 - 1e-3 / (1.0 + 1e-8);
        assert!((ps.get(id).grid.item() - expected).abs() < 1e-15);
        assert_eq!(ps.get(id).step_count, 1);
        assert_eq!(ps.get(id).gradient.item(), 0.0);
    }

    #[test]
    fn two_steps_match_hand_trace() {
        let cfg = AdamConfig::default();
        let mut ps = scalar_set(0.5);
        let id = ps.id("w").unwrap();
        let grads = [0.3, -0.2];
        let (mut w, mut m, mut v) = (0.5f64, 0.0f64, 0.0f64);
        for (t, g) in grads.iter().enumerate() {
            ps.get_mut(id).gradient.fill(*g);
            adam_step(&mut ps, &cfg).unwrap();
            let t = (t + 1) as i32;
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let mh = m / (1.0 - 0.9f64.powi(t));
            let vh = v / (1.0 - 0.999f64.powi(t));
            w -= 1e-3 * mh / (vh.sqrt() + 1e-8);
        }
        assert!((ps.get(id).grid.item() - w).abs() < 1e-12);
    }

    #[test]
    fn non_finite_gradient_aborts_with_name() {
        let mut ps = scalar_set(1.0);
        ps.insert(Parameter::new("bad", ValueGrid::scalar(2.0))).unwrap();
        let w = ps.id("w").unwrap();
        ps.get_mut(w).gradient.fill(1.0);
        let bad = ps.id("bad").unwrap();
        ps.get_mut(bad).gradient.fill(f64::NAN);
        let err = adam_step(&mut ps, &AdamConfig::default()).unwrap_err();
        assert!(matches!(err, DginError::NonFiniteGradient { ref name } if name == "bad"));
        assert_eq!(ps.get(w).grid.item(), 1.0);
    }
}
