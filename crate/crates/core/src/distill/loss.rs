use crate::nn::{softmax, Scalar, Tensor};

use super::{DistillConfig, DistillError};

const PROB_FLOOR: f64 = 1e-12;

/// Teacher and student distributions softened at the same temperature.
#[derive(Clone, Debug, PartialEq)]
pub struct SoftTargets<T = f32> {
    pub p_t: Vec<T>,
    pub p_s: Vec<T>,
}

impl<T: Scalar> SoftTargets<T> {
    pub fn new(teacher_logits: &[T], student_logits: &[T], temperature: f64) -> Result<Self, DistillError> {
        check_dims(teacher_logits.len(), student_logits.len())?;
        Ok(Self {
            p_t: soften(teacher_logits, temperature)?,
            p_s: soften(student_logits, temperature)?,
        })
    }

    pub fn k(&self) -> usize {
        self.p_t.len()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub l_tsl: f64,
    pub l_gt: f64,
    pub total: f64,
    pub w_used: f64,
}

impl LossBreakdown {
    fn compose(l_tsl: f64, l_gt: f64, w_used: f64) -> Self {
        Self {
            l_tsl,
            l_gt,
            total: l_tsl + w_used * l_gt,
            w_used,
        }
    }
}

/// Loss value plus gradients with respect to both logit vectors.
#[derive(Clone, Debug)]
pub struct LossOutput<T = f32> {
    pub breakdown: LossBreakdown,
    pub student_grad: Vec<T>,
    /// Always zero: the teacher is frozen.
    pub teacher_grad: Vec<T>,
}

fn check_dims(left: usize, right: usize) -> Result<(), DistillError> {
    if left != right || left == 0 {
        return Err(DistillError::DimensionMismatch { left, right });
    }
    Ok(())
}

fn check_temperature(temperature: f64) -> Result<(), DistillError> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(DistillError::InvalidTemperature(temperature));
    }
    Ok(())
}

/// `softmax(logits / temperature)`.
pub fn soften<T: Scalar>(logits: &[T], temperature: f64) -> Result<Vec<T>, DistillError> {
    check_temperature(temperature)?;
    if temperature == 1.0 {
        return Ok(softmax(logits)?);
    }
    let inv = T::from_f64_lossy(1.0 / temperature);
    let scaled: Vec<T> = logits.iter().map(|&z| z * inv).collect();
    Ok(softmax(&scaled)?)
}

/// `−Σ P_T(i)·log max(P_S(i), 1e-12)`.
pub fn loss_tsl<T: Scalar>(p_t: &[T], p_s: &[T]) -> Result<T, DistillError> {
    check_dims(p_t.len(), p_s.len())?;
    let floor = T::from_f64_lossy(PROB_FLOOR);
    Ok(-p_t
        .iter()
        .zip(p_s)
        .map(|(&t, &s)| t * s.max(floor).ln())
        .sum::<T>())
}

/// `−log max(probs[label], 1e-12)` on the unsoftened student distribution.
pub fn loss_gt<T: Scalar>(probs: &[T], label: usize) -> Result<T, DistillError> {
    if label >= probs.len() {
        return Err(DistillError::LabelOutOfRange {
            label,
            classes: probs.len(),
        });
    }
    Ok(-probs[label].max(T::from_f64_lossy(PROB_FLOOR)).ln())
}

/// `L = L_TSL(soften(teacher), soften(student)) + w·L_GT(softmax(student), label)`
/// with its gradient. The probability floor only guards the logarithm; the
/// gradient is that of the unclamped loss so saturated wrong predictions
/// still receive a corrective signal.
pub fn loss_combined<T: Scalar>(
    teacher_logits: &[T],
    student_logits: &[T],
    label: usize,
    cfg: &DistillConfig,
) -> Result<LossOutput<T>, DistillError> {
    cfg.validate()?;
    let k = student_logits.len();
    let soft = SoftTargets::new(teacher_logits, student_logits, cfg.temperature)?;
    let hard = if cfg.temperature == 1.0 {
        soft.p_s.clone()
    } else {
        softmax(student_logits)?
    };
    let l_tsl = loss_tsl(&soft.p_t, &soft.p_s)?;
    let l_gt = loss_gt(&hard, label)?;
    let w = cfg.w_used();

    let inv_t = T::from_f64_lossy(1.0 / cfg.temperature);
    let w_t = T::from_f64_lossy(w);
    let student_grad = (0..k)
        .map(|j| {
            let tsl = -inv_t * (soft.p_t[j] - soft.p_s[j]);
            let onehot = if j == label { T::one() } else { T::zero() };
            tsl + w_t * (hard[j] - onehot)
        })
        .collect();
    Ok(LossOutput {
        breakdown: LossBreakdown::compose(l_tsl.as_f64(), l_gt.as_f64(), w),
        student_grad,
        teacher_grad: vec![T::zero(); k],
    })
}

/// Batch-mean loss and gradient with respect to the student logits.
#[derive(Clone, Debug)]
pub struct BatchLoss<T = f32> {
    pub breakdown: LossBreakdown,
    pub grad: Tensor<T>,
    pub correct: usize,
}

/// Mean of [`loss_combined`] over the rows of an `N×k` batch. Without teacher
/// logits only the ground-truth term is used (`L = L_GT`, `w_used = 1`).
pub fn loss_combined_batch<T: Scalar>(
    teacher_logits: Option<&Tensor<T>>,
    student_logits: &Tensor<T>,
    labels: &[usize],
    cfg: &DistillConfig,
) -> Result<BatchLoss<T>, DistillError> {
    let (n, k) = (student_logits.shape()[0], student_logits.shape()[1]);
    check_dims(labels.len(), n)?;
    if let Some(t) = teacher_logits {
        check_dims(t.len(), student_logits.len())?;
    }
    let mut grad = Vec::with_capacity(n * k);
    let (mut l_tsl, mut l_gt) = (0.0, 0.0);
    let mut correct = 0;
    for (i, &label) in labels.iter().enumerate() {
        let s = student_logits.outer(i);
        let (b, g) = match teacher_logits {
            Some(t) => {
                let out = loss_combined(t.outer(i), s, label, cfg)?;
                (out.breakdown, out.student_grad)
            }
            None => {
                let probs = softmax(s)?;
                let l = loss_gt(&probs, label)?;
                let mut g = probs;
                g[label] -= T::one();
                (LossBreakdown::compose(0.0, l.as_f64(), 1.0), g)
            }
        };
        l_tsl += b.l_tsl;
        l_gt += b.l_gt;
        if argmax(s) == label {
            correct += 1;
        }
        grad.extend(g);
    }
    let inv = T::from_f64_lossy(1.0 / n as f64);
    grad.iter_mut().for_each(|g| *g *= inv);
    let w = if teacher_logits.is_some() { cfg.w_used() } else { 1.0 };
    Ok(BatchLoss {
        breakdown: LossBreakdown::compose(l_tsl / n as f64, l_gt / n as f64, w),
        grad: Tensor::from_vec(&[n, k], grad).expect("shape"),
        correct,
    })
}

/// Index of the largest value; ties go to the lower index.
pub fn argmax<T: PartialOrd + Copy>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distill::Strategy;

    const LN2: f64 = std::f64::consts::LN_2;

    fn cfg(t: f64, w: Option<f64>) -> DistillConfig {
        DistillConfig::new(t, w, Strategy::Combined).unwrap()
    }

    #[test]
    fn soften_examples() {
        let p = soften(&[4f64.ln(), 0.0], 2.0).unwrap();
        assert!((p[0] - 2.0 / 3.0).abs() < 1e-12 && (p[1] - 1.0 / 3.0).abs() < 1e-12);
        let z = [0.3f64, -1.2, 2.5, 0.0];
        assert_eq!(soften(&z, 1.0).unwrap(), softmax(&z).unwrap());
        for v in soften(&z, 1e6).unwrap() {
            assert!((v - 0.25).abs() < 1e-5);
        }
        assert!(matches!(soften(&z, 0.0), Err(DistillError::InvalidTemperature(_))));
        assert!(soften(&z, -1.0).is_err());
    }

    #[test]
    fn tsl_examples() {
        assert!((loss_tsl(&[0.5f64, 0.5], &[0.5, 0.5]).unwrap() - LN2).abs() < 1e-12);
        assert!((loss_tsl(&[0.9f64, 0.1], &[0.5, 0.5]).unwrap() - LN2).abs() < 1e-12);
        let p = [0.7f64, 0.2, 0.1];
        let entropy: f64 = -p.iter().map(|v| v * v.ln()).sum::<f64>();
        assert!((loss_tsl(&p, &p).unwrap() - entropy).abs() < 1e-12);
        assert!(matches!(
            loss_tsl(&[0.5f64, 0.5], &[1.0]),
            Err(DistillError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn gt_examples() {
        assert!((loss_gt(&[0.5f64, 0.5], 1).unwrap() - LN2).abs() < 1e-12);
        assert_eq!(loss_gt(&[1.0f64, 0.0], 0).unwrap(), 0.0);
        assert!((loss_gt(&[0.125f64; 8], 3).unwrap() - 8f64.ln()).abs() < 1e-12);
        assert!(matches!(loss_gt(&[0.5f64, 0.5], 2), Err(DistillError::LabelOutOfRange { .. })));
    }

    #[test]
    fn breakdown_composition() {
        let b = LossBreakdown::compose(0.2, 0.1, cfg(2.0, None).w_used());
        assert!((b.total - 0.6).abs() < 1e-12);
        let out = loss_combined(&[1.0f64, -0.5, 0.3], &[0.2, 0.1, -0.4], 2, &cfg(2.0, Some(0.0))).unwrap();
        assert_eq!(out.breakdown.total, out.breakdown.l_tsl);
        assert!(out.teacher_grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn batch_without_teacher_is_cross_entropy() {
        let logits = Tensor::from_vec(&[2, 3], vec![0.1f64, 0.5, -0.3, 1.0, 0.0, 0.2]).unwrap();
        let labels = [1, 0];
        let b = loss_combined_batch(None, &logits, &labels, &cfg(2.0, None)).unwrap();
        let (ce, g) = crate::nn::cross_entropy(&logits, &labels).unwrap();
        assert!((b.breakdown.total - ce).abs() < 1e-12);
        assert_eq!(b.breakdown.l_tsl, 0.0);
        for (a, b) in b.grad.values().iter().zip(g.values()) {
            assert!((a - b).abs() < 1e-15);
        }
        assert_eq!(b.correct, 2);
    }
}
