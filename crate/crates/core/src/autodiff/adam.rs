use super::array::DenseArray;
use super::params::ParamStore;
use super::AutodiffError;

/// Optimiser hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Coefficient of the `l2 * sum(p^2)` term the training loss carries.
    /// The optimiser itself never applies it; it is folded into the loss.
    pub l2_coefficient: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            l2_coefficient: 0.0,
        }
    }
}

/// Bias-corrected Adam moments for one [`ParamStore`].
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    step_count: u64,
    first_moment: Vec<DenseArray>,
    second_moment: Vec<DenseArray>,
}

impl AdamState {
    pub fn new(config: AdamConfig, params: &ParamStore) -> Result<Self, AutodiffError> {
        let AdamConfig { beta1, beta2, epsilon, .. } = config;
        if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || epsilon <= 0.0 {
            return Err(AutodiffError::InvalidConfig(format!(
                "adam requires 0 <= beta < 1 and epsilon > 0 (beta1={beta1}, beta2={beta2}, epsilon={epsilon})"
            )));
        }
        let zeros = || params.ids().map(|id| DenseArray::zeros(params.value(id).shape())).collect();
        Ok(Self {
            config,
            step_count: 0,
            first_moment: zeros(),
            second_moment: zeros(),
        })
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// Applies one update using the gradients currently held by `params`.
    pub fn step(&mut self, params: &mut ParamStore) -> Result<(), AutodiffError> {
        if params.len() != self.first_moment.len() {
            return Err(AutodiffError::ParamMismatch(format!(
                "optimiser tracks {} parameters, store has {}",
                self.first_moment.len(),
                params.len()
            )));
        }
        self.step_count += 1;
        let AdamConfig { learning_rate, beta1, beta2, epsilon, .. } = self.config;
        let t = self.step_count as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        let ids: Vec<_> = params.ids().collect();
        for (i, id) in ids.into_iter().enumerate() {
            let grad = params.grad(id).clone();
            if grad.shape() != self.first_moment[i].shape() {
                return Err(AutodiffError::ParamMismatch(format!(
                    "moment shape {:?} does not match parameter {} shape {:?}",
                    self.first_moment[i].shape(),
                    params.name(id),
                    grad.shape()
                )));
            }
            let m = self.first_moment[i].data_mut();
            let v = self.second_moment[i].data_mut();
            let p = params.value_mut(id).data_mut();
            for j in 0..p.len() {
                let g = grad.data()[j];
                m[j] = beta1 * m[j] + (1.0 - beta1) * g;
                v[j] = beta2 * v[j] + (1.0 - beta2) * g * g;
                let m_hat = m[j] / c1;
                let v_hat = v[j] / c2;
                p[j] -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
        Ok(())
    }
}
