use serde::{Deserialize, Serialize};

use super::layer::LayerSpec;
use super::network::{Gradients, Network};
use super::tensor::Scalar;
use super::NnError;

/// Piecewise-constant learning rate: `initial` until the first milestone,
/// then each milestone's rate from its step (inclusive) onwards.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub initial: f64,
    pub milestones: Vec<(u64, f64)>,
    pub stop: u64,
}

impl LrSchedule {
    pub fn new(initial: f64, milestones: Vec<(u64, f64)>, stop: u64) -> Result<Self, NnError> {
        let s = Self {
            initial,
            milestones,
            stop,
        };
        s.validate()?;
        Ok(s)
    }

    /// `initial`, multiplied by `factor` at each fraction of `stop`.
    pub fn step_decay(initial: f64, stop: u64, fractions: &[f64], factor: f64) -> Result<Self, NnError> {
        let mut rate = initial;
        let milestones = fractions
            .iter()
            .map(|f| {
                rate *= factor;
                ((f * stop as f64).round() as u64, rate)
            })
            .collect();
        Self::new(initial, milestones, stop)
    }

    pub fn validate(&self) -> Result<(), NnError> {
        if !(self.initial > 0.0 && self.initial.is_finite()) {
            return Err(NnError::Schedule(format!("initial rate {} must be positive", self.initial)));
        }
        let mut prev = None;
        for &(step, rate) in &self.milestones {
            if !(rate > 0.0 && rate.is_finite()) {
                return Err(NnError::Schedule(format!("rate {rate} at step {step} must be positive")));
            }
            if prev.is_some_and(|p| step <= p) {
                return Err(NnError::Schedule("milestone steps must be strictly increasing".into()));
            }
            prev = Some(step);
        }
        Ok(())
    }

    pub fn rate_at(&self, step: u64) -> f64 {
        self.milestones
            .iter()
            .take_while(|(s, _)| *s <= step)
            .last()
            .map_or(self.initial, |&(_, r)| r)
    }
}

/// Momentum buffers plus the optimizer hyper-parameters.
#[derive(Clone, Debug)]
pub struct OptimState<T = f32> {
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Vec<Vec<Vec<T>>>,
}

impl<T: Scalar> OptimState<T> {
    pub fn new(net: &Network<T>, momentum: f64, weight_decay: f64) -> Self {
        let velocity = net
            .params()
            .iter()
            .map(|ps| ps.iter().map(|p| vec![T::zero(); p.len()]).collect())
            .collect();
        Self {
            momentum,
            weight_decay,
            velocity,
        }
    }

    pub fn velocity(&self) -> &[Vec<Vec<T>>] {
        &self.velocity
    }
}

/// One SGD-with-momentum update, `v ← μv − lr·(g + λw); w ← w + v`, with the
/// learning rate read from `schedule` at `step`. Weight decay applies to
/// conv/linear weights only; biases and PReLU slopes are not decayed.
/// Returns the rate used.
pub fn sgd_step<T: Scalar>(
    net: &mut Network<T>,
    grads: &Gradients<T>,
    state: &mut OptimState<T>,
    schedule: &LrSchedule,
    step: u64,
) -> Result<f64, NnError> {
    let lr = schedule.rate_at(step);
    let compatible = grads.layers.len() == net.params().len()
        && state.velocity.len() == net.params().len()
        && net.params().iter().enumerate().all(|(i, ps)| {
            grads.layers[i].len() == ps.len()
                && state.velocity[i].len() == ps.len()
                && ps.iter().enumerate().all(|(j, p)| {
                    grads.layers[i][j].len() == p.len() && state.velocity[i][j].len() == p.len()
                })
        });
    if !compatible {
        return Err(NnError::Shape {
            layer: "optimizer".into(),
            reason: "gradients or momentum buffers do not match the parameters".into(),
        });
    }
    let mu = T::from_f64_lossy(state.momentum);
    let lr_t = T::from_f64_lossy(lr);
    let decayed: Vec<bool> = net
        .layers()
        .iter()
        .map(|l| matches!(l, LayerSpec::Conv { .. } | LayerSpec::Linear { .. }))
        .collect();
    let wd = T::from_f64_lossy(state.weight_decay);
    for (i, ps) in net.params_mut().iter_mut().enumerate() {
        for (j, p) in ps.iter_mut().enumerate() {
            let lambda = if decayed[i] && j == 0 { wd } else { T::zero() };
            let g = &grads.layers[i][j];
            let v = &mut state.velocity[i][j];
            for ((w, vel), &gr) in p.values_mut().iter_mut().zip(v.iter_mut()).zip(g) {
                *vel = mu * *vel - lr_t * (gr + lambda * *w);
                *w += *vel;
            }
        }
    }
    Ok(lr)
}
