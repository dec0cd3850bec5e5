//! Slow (learned) parameters and their initialization.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::numerics::Array;

#[derive(Clone, Debug)]
pub struct LayerParams {
    pub norm_mixer: Array, // d
    pub wq: Array,         // d x df
    pub wk: Array,         // d x df
    pub wv: Array,         // d x df
    pub wo: Array,         // df x d
    pub norm_ffn: Array,   // d
    pub w_up: Array,       // d x 4d
    pub w_down: Array,     // 4d x d
}

#[derive(Clone, Debug)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub embed: Array, // V x d
    pub layers: Vec<LayerParams>,
    pub final_norm: Array, // d
    pub head: Array,       // d x V
}

/// Scaled uniform init: values in [-1/sqrt(fan_in), 1/sqrt(fan_in)),
/// deterministic for a fixed seed. Norm gains start at one.
pub fn init_params(config: &ModelConfig, seed: u64) -> Result<ModelParams> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (v, d, df, dff) = (config.vocab_size, config.d_model, config.d_fast, config.d_ff());
    let u = |shape: &[usize], fan_in: usize, rng: &mut ChaCha8Rng| {
        Array::uniform(shape, 1.0 / (fan_in as f32).sqrt(), rng)
    };

    let embed = u(&[v, d], d, &mut rng);
    let layers = (0..config.n_layers)
        .map(|_| LayerParams {
            norm_mixer: Array::filled(&[d], 1.0),
            wq: u(&[d, df], d, &mut rng),
            wk: u(&[d, df], d, &mut rng),
            wv: u(&[d, df], d, &mut rng),
            wo: u(&[df, d], df, &mut rng),
            norm_ffn: Array::filled(&[d], 1.0),
            w_up: u(&[d, dff], d, &mut rng),
            w_down: u(&[dff, d], dff, &mut rng),
        })
        .collect();
    let final_norm = Array::filled(&[d], 1.0);
    let head = u(&[d, v], d, &mut rng);

    Ok(ModelParams {
        config: config.clone(),
        embed,
        layers,
        final_norm,
        head,
    })
}

impl ModelParams {
    /// Tensors in canonical order, paired with their checkpoint names.
    pub fn named_tensors(&self) -> Vec<(String, &Array)> {
        let mut out: Vec<(String, &Array)> = vec![("embed".into(), &self.embed)];
        for (i, l) in self.layers.iter().enumerate() {
            out.push((format!("layers.{i}.norm_mixer"), &l.norm_mixer));
            out.push((format!("layers.{i}.wq"), &l.wq));
            out.push((format!("layers.{i}.wk"), &l.wk));
            out.push((format!("layers.{i}.wv"), &l.wv));
            out.push((format!("layers.{i}.wo"), &l.wo));
            out.push((format!("layers.{i}.norm_ffn"), &l.norm_ffn));
            out.push((format!("layers.{i}.w_up"), &l.w_up));
            out.push((format!("layers.{i}.w_down"), &l.w_down));
        }
        out.push(("final_norm".into(), &self.final_norm));
        out.push(("head".into(), &self.head));
        out
    }

    /// Tensors in canonical order.
    pub fn tensors(&self) -> Vec<&Array> {
        self.named_tensors().into_iter().map(|(_, a)| a).collect()
    }

    pub fn n_tensors(&self) -> usize {
        2 + 8 * self.layers.len() + 1
    }

    /// Rebuild from tensors in canonical order (the optimizer's inverse of
    /// [`ModelParams::tensors`]). Shapes are validated against the config.
    pub fn from_tensors(config: &ModelConfig, tensors: Vec<Array>) -> Result<Self> {
        let expected = 3 + 8 * config.n_layers;
        if tensors.len() != expected {
            return Err(Error::invalid(format!(
                "expected {expected} tensors, got {}",
                tensors.len()
            )));
        }
        let mut it = tensors.into_iter();
        let mut next = |name: &str, shape: &[usize]| -> Result<Array> {
            let a = it.next().expect("length checked above");
            if a.shape() != shape {
                return Err(Error::invalid(format!(
                    "tensor {name}: shape {:?} does not match expected {:?}",
                    a.shape(),
                    shape
                )));
            }
            Ok(a)
        };
        let (v, d, df, dff) = (config.vocab_size, config.d_model, config.d_fast, config.d_ff());
        let embed = next("embed", &[v, d])?;
        let mut layers = Vec::with_capacity(config.n_layers);
        for i in 0..config.n_layers {
            layers.push(LayerParams {
                norm_mixer: next(&format!("layers.{i}.norm_mixer"), &[d])?,
                wq: next(&format!("layers.{i}.wq"), &[d, df])?,
                wk: next(&format!("layers.{i}.wk"), &[d, df])?,
                wv: next(&format!("layers.{i}.wv"), &[d, df])?,
                wo: next(&format!("layers.{i}.wo"), &[df, d])?,
                norm_ffn: next(&format!("layers.{i}.norm_ffn"), &[d])?,
                w_up: next(&format!("layers.{i}.w_up"), &[d, dff])?,
                w_down: next(&format!("layers.{i}.w_down"), &[dff, d])?,
            });
        }
        let final_norm = next("final_norm", &[d])?;
        let head = next("head", &[d, v])?;
        Ok(ModelParams {
            config: config.clone(),
            embed,
            layers,
            final_norm,
            head,
        })
    }

    /// Copy with one coordinate of one tensor shifted by `delta`
    /// (finite-difference plumbing).
    pub fn perturbed(&self, tensor_idx: usize, coord: usize, delta: f32) -> Result<Self> {
        let mut tensors: Vec<Array> = self.tensors().into_iter().cloned().collect();
        let t = &tensors[tensor_idx];
        let mut data = t.data().to_vec();
        data[coord] += delta;
        tensors[tensor_idx] = Array::from_parts(t.shape().to_vec(), data);
        ModelParams::from_tensors(&self.config, tensors)
    }

    /// Bit-level equality across all tensors.
    pub fn bits_eq(&self, other: &ModelParams) -> bool {
        self.tensors()
            .iter()
            .zip(other.tensors())
            .all(|(a, b)| a.bits_eq(b))
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|a| a.all_finite())
    }
}
