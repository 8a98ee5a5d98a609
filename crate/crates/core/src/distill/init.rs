use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::nn::{init_layer, LayerSpec, Network, Scalar};

use super::DistillError;

/// Student with the teacher's parameters. Layers must match exactly, except
/// that the first convolution may differ in input channel count: channels
/// below the smaller count are copied and the rest are freshly initialized
/// from `seed`.
pub fn teacher_init<T: Scalar>(
    teacher: &Network<T>,
    student: &Network<T>,
    seed: u64,
) -> Result<Network<T>, DistillError> {
    let (tl, sl) = (teacher.layers(), student.layers());
    if tl.len() != sl.len() {
        return Err(DistillError::Mismatch {
            layer: tl.len().min(sl.len()),
            reason: format!("teacher has {} layers, student {}", tl.len(), sl.len()),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = Vec::with_capacity(sl.len());
    for (i, (t, s)) in tl.iter().zip(sl).enumerate() {
        if t == s {
            params.push(teacher.params()[i].clone());
            continue;
        }
        let first_conv = tl.iter().position(|l| matches!(l, LayerSpec::Conv { .. }));
        match (t, s) {
            (
                LayerSpec::Conv {
                    in_channels: tc,
                    out_channels: to,
                    kernel: tk,
                    stride: ts,
                    pad: tp,
                },
                LayerSpec::Conv {
                    in_channels: sc,
                    out_channels: so,
                    kernel: sk,
                    stride: ss,
                    pad: sp,
                },
            ) if first_conv == Some(i) && (to, tk, ts, tp) == (so, sk, ss, sp) => {
                let mut fresh = init_layer::<T>(s, &mut rng);
                let kk = sk * sk;
                let copy = (*tc).min(*sc);
                let tw = teacher.params()[i][0].values();
                let sw = fresh[0].values_mut();
                for o in 0..*so {
                    for c in 0..copy {
                        let (src, dst) = ((o * tc + c) * kk, (o * sc + c) * kk);
                        sw[dst..dst + kk].copy_from_slice(&tw[src..src + kk]);
                    }
                }
                fresh[1] = teacher.params()[i][1].clone();
                params.push(fresh);
            }
            _ => {
                return Err(DistillError::Mismatch {
                    layer: i,
                    reason: format!("teacher {t:?} vs student {s:?}"),
                })
            }
        }
    }
    Ok(Network::from_parts(
        student.input_shape(),
        sl.to_vec(),
        student.num_classes(),
        params,
    )?)
}
