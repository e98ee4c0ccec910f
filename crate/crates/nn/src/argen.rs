//! Autoregressive baseline on the shared backbone: next-token training and
//! left-to-right decoding. PAD doubles as end of sequence.

use candle_core::{DType, Tensor, D};
use candle_nn::ops::log_softmax;
use symdiff_core::rng::PortableRng;

use crate::backbone::{Mode, SymbolicModel};
use crate::d3pm::{argmax, softmax};
use crate::error::{NnError, Result};

/// Shifts each row right by one behind BOS: `[BOS, x[0], .., x[S-2]]`.
pub fn ar_inputs(x0: &[u32], seq_len: usize, bos: u32) -> Vec<u32> {
    x0.chunks(seq_len).flat_map(|row| std::iter::once(bos).chain(row[..seq_len - 1].iter().copied())).collect()
}

/// Mean next-token cross-entropy over every position, PAD targets included.
pub fn ar_loss_from_logits(logits: &Tensor, targets: &[u32]) -> Result<Tensor> {
    let (b, s, k) = logits.dims3()?;
    if targets.len() != b * s {
        return Err(NnError::ShapeMismatch(format!("{} targets for {b} x {s} logits", targets.len())));
    }
    let mut onehot = vec![0.0f64; b * s * k];
    for (pos, &t) in targets.iter().enumerate() {
        if t as usize >= k {
            return Err(NnError::ShapeMismatch(format!("target id {t} outside 0..{k}")));
        }
        onehot[pos * k + t as usize] = 1.0;
    }
    let onehot = Tensor::from_vec(onehot, (b, s, k), logits.device())?.to_dtype(logits.dtype())?;
    let logp = log_softmax(logits, D::Minus1)?;
    Ok(((onehot * logp)?.sum_all()?.neg()? / (b * s) as f64)?)
}

fn bos_of(model: &SymbolicModel) -> Result<u32> {
    match (model.config().mode, model.config().bos()) {
        (Mode::Autoregressive, Some(bos)) => Ok(bos),
        _ => Err(NnError::InvalidConfig("autoregressive routine called on a diffusion model".into())),
    }
}

/// Training loss for a batch of clean sequences.
pub fn ar_loss(model: &SymbolicModel, x0: &[u32], batch: usize, points: &Tensor, rng: Option<&mut PortableRng>) -> Result<Tensor> {
    let bos = bos_of(model)?;
    if batch == 0 || x0.len() % batch != 0 {
        return Err(NnError::ShapeMismatch(format!("{} tokens for batch {batch}", x0.len())));
    }
    let inputs = ar_inputs(x0, x0.len() / batch, bos);
    let logits = model.forward(&inputs, batch, points, None, rng)?;
    ar_loss_from_logits(&logits, x0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Strategy {
    Greedy,
    Temperature(f64),
}

/// Decodes one sequence per condition row. Stops a row at its first PAD;
/// BOS is never emitted. Rows come back padded to `max_len`.
pub fn ar_sample(model: &SymbolicModel, cond: &Tensor, pad: u32, strategy: Strategy, rng: &mut PortableRng) -> Result<Vec<Vec<u32>>> {
    let bos = bos_of(model)?;
    let batch = cond.dim(0)?;
    let s = model.config().max_len;
    let k = model.config().model_vocab();
    let mut out = vec![pad; batch * s];
    let mut done = vec![false; batch];
    for i in 0..s {
        if done.iter().all(|d| *d) {
            break;
        }
        let inputs = ar_inputs(&out, s, bos);
        let logits = model.forward_with_condition(&inputs, batch, cond, None, None)?;
        let step: Vec<f64> = logits.narrow(1, i, 1)?.to_dtype(DType::F64)?.flatten_all()?.to_vec1()?;
        for (row, row_logits) in step.chunks(k).enumerate() {
            if done[row] {
                continue;
            }
            let mut l = row_logits.to_vec();
            l[bos as usize] = f64::NEG_INFINITY;
            let tok = match strategy {
                Strategy::Greedy => argmax(&l),
                Strategy::Temperature(tau) => {
                    let scaled: Vec<f64> = l.iter().map(|v| v / tau.max(1e-6)).collect();
                    rng.categorical(&softmax(&scaled))
                }
            } as u32;
            out[row * s + i] = tok;
            if tok == pad {
                done[row] = true;
            }
        }
    }
    Ok(out.chunks(s).map(|c| c.to_vec()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::{Architecture, BackboneConfig};
    use candle_core::Device;

    fn model() -> SymbolicModel {
        let arch = Architecture { embed_dim: 16, heads: 2, layers: 2, ff_dim: 32, dropout: 0.0 };
        SymbolicModel::new(BackboneConfig::new(&arch, 8, 15, Mode::Autoregressive, 0), 1, DType::F64, &Device::Cpu).unwrap()
    }

    #[test]
    fn input_shift() {
        assert_eq!(ar_inputs(&[1, 2, 3, 0, 4, 5, 6, 7], 4, 9), vec![9, 1, 2, 3, 9, 4, 5, 6]);
    }

    #[test]
    fn oracle_and_uniform_losses() {
        let targets = [1u32, 2, 0, 3];
        let mut l = vec![-1e4; 4 * 5];
        targets.iter().enumerate().for_each(|(i, &t)| l[i * 5 + t as usize] = 0.0);
        let t = Tensor::from_vec(l, (2, 2, 5), &Device::Cpu).unwrap();
        assert!(ar_loss_from_logits(&t, &targets).unwrap().to_scalar::<f64>().unwrap().abs() < 1e-12);
        let u = Tensor::zeros((2, 2, 16), DType::F64, &Device::Cpu).unwrap();
        let v = ar_loss_from_logits(&u, &targets).unwrap().to_scalar::<f64>().unwrap();
        assert!((v - 16f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn loss_prefix_ignores_tokens_after_first_pad() {
        let m = model();
        let pts = m.points_tensor(&[0.5, -1.0, 2.0, 1.0, 0.0, -0.5], 1, 2).unwrap();
        let base = [1u32, 3, 6, 0, 0, 0, 0, 0];
        let mut altered = base;
        altered[5] = 9;
        altered[7] = 4;
        let logits = |x: &[u32]| m.forward(&ar_inputs(x, 8, 15), 1, &pts, None, None).unwrap();
        let (a, b) = (logits(&base), logits(&altered));
        // Inputs differ from position 6 on, so positions 0..=5 must agree.
        let pa: Vec<f64> = a.narrow(1, 0, 6).unwrap().flatten_all().unwrap().to_vec1().unwrap();
        let pb: Vec<f64> = b.narrow(1, 0, 6).unwrap().flatten_all().unwrap().to_vec1().unwrap();
        assert_eq!(pa, pb);
        let la = ar_loss_from_logits(&a.narrow(1, 0, 4).unwrap(), &base[..4]).unwrap().to_scalar::<f64>().unwrap();
        let lb = ar_loss_from_logits(&b.narrow(1, 0, 4).unwrap(), &altered[..4]).unwrap().to_scalar::<f64>().unwrap();
        assert_eq!(la, lb);
    }

    #[test]
    fn greedy_is_deterministic_and_padded() {
        let m = model();
        let pts = m.points_tensor(&[0.5, -1.0, 2.0, 1.0, 0.0, -0.5, 0.1, 0.2, 0.3, 2.0, 2.0, 2.0], 2, 2).unwrap();
        let cond = m.encode(&pts, None).unwrap();
        let a = ar_sample(&m, &cond, 0, Strategy::Greedy, &mut PortableRng::new(0, 0)).unwrap();
        let b = ar_sample(&m, &cond, 0, Strategy::Greedy, &mut PortableRng::new(5, 0)).unwrap();
        assert_eq!(a, b);
        for row in &a {
            assert_eq!(row.len(), 8);
            assert!(row.iter().all(|&t| t < 15));
            if let Some(p) = row.iter().position(|&t| t == 0) {
                assert!(row[p..].iter().all(|&t| t == 0));
            }
        }
    }

    #[test]
    fn pad_first_gives_empty_sequence() {
        let m = model();
        // Push the output bias hard toward PAD.
        let bias = m.store().params().into_iter().find(|(k, _)| k == "out.bias").unwrap().1;
        let mut b = vec![0.0f64; 16];
        b[0] = 1e3;
        bias.set(&Tensor::from_vec(b, 16, &Device::Cpu).unwrap()).unwrap();
        let pts = m.points_tensor(&[0.5, -1.0, 2.0], 1, 1).unwrap();
        let cond = m.encode(&pts, None).unwrap();
        let out = ar_sample(&m, &cond, 0, Strategy::Greedy, &mut PortableRng::new(0, 0)).unwrap();
        assert_eq!(out, vec![vec![0; 8]]);
    }
}
