//! Named parameter storage and seeded initialization.
//!
//! Parameters live in a sorted name -> tensor map so that checkpoint
//! serialization, optimizer iteration, and gradient checks all share one
//! canonical ordering. Each tensor draws from its own derived RNG stream
//! (seed, name), so adding or removing a parameter never shifts the noise
//! of the others.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::model::{DrPosition, ModelConfig};
use crate::tensor::{Scalar, Tensor};
use crate::util::rng_from;
use crate::{LexError, Result};

#[derive(Debug, Clone)]
pub struct ParamSet<S: Scalar> {
    pub cfg: ModelConfig,
    map: BTreeMap<String, Tensor<S>>,
}

fn normal_tensor<S: Scalar>(shape: Vec<usize>, mean_ident: bool, std: f64, rng_key: &[&str]) -> Tensor<S> {
    let mut rng = rng_from(rng_key);
    let dist = Normal::new(0.0f64, std).expect("std is finite and non-negative");
    let numel: usize = shape.iter().product();
    let mut data = vec![S::zero(); numel];
    for v in data.iter_mut() {
        *v = S::of_f64(dist.sample(&mut rng));
    }
    if mean_ident {
        let n = shape[0];
        debug_assert_eq!(shape.len(), 2);
        debug_assert_eq!(shape[0], shape[1]);
        for i in 0..n {
            data[i * n + i] = data[i * n + i] + S::one();
        }
    }
    Tensor::new(shape, data).expect("shape/data agree by construction").with_grad()
}

fn xavier_uniform<S: Scalar>(rows: usize, cols: usize, rng_key: &[&str]) -> Tensor<S> {
    let mut rng = rng_from(rng_key);
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    let data: Vec<S> = (0..rows * cols)
        .map(|_| S::of_f64(rng.random_range(-limit..limit)))
        .collect();
    Tensor::new(vec![rows, cols], data).expect("shape/data agree by construction").with_grad()
}

fn const_tensor<S: Scalar>(shape: Vec<usize>, v: f64) -> Tensor<S> {
    let numel: usize = shape.iter().product();
    Tensor::new(shape, vec![S::of_f64(v); numel])
        .expect("shape/data agree by construction")
        .with_grad()
}

/// The parameter names a config implies, in sorted order. Checkpoint
/// validation compares a stored manifest against this list.
pub fn expected_names(cfg: &ModelConfig) -> Vec<String> {
    let mut names = vec!["embed".to_string(), "out_proj".to_string()];
    for i in 0..cfg.n_enc_layers {
        for m in ["wq", "wk", "wv", "wo"] {
            names.push(format!("enc.{i}.san.{m}"));
        }
        for ln in ["ln1", "ln2"] {
            for a in ["gamma", "beta"] {
                names.push(format!("enc.{i}.{ln}.{a}"));
            }
        }
        for m in ["w1", "b1", "w2", "b2"] {
            names.push(format!("enc.{i}.ffn.{m}"));
        }
    }
    for i in 0..cfg.n_dec_layers {
        for att in ["san", "can"] {
            for m in ["wq", "wk", "wv", "wo"] {
                names.push(format!("dec.{i}.{att}.{m}"));
            }
        }
        for ln in ["ln1", "ln2", "ln3"] {
            for a in ["gamma", "beta"] {
                names.push(format!("dec.{i}.{ln}.{a}"));
            }
        }
        for m in ["w1", "b1", "w2", "b2"] {
            names.push(format!("dec.{i}.ffn.{m}"));
        }
    }
    if cfg.pre_norm {
        for stack in ["enc_final", "dec_final"] {
            for a in ["gamma", "beta"] {
                names.push(format!("{stack}.{a}"));
            }
        }
    }
    match cfg.dr_position {
        DrPosition::None => {}
        DrPosition::SharedOnly => names.push("dr.w_shared".to_string()),
        DrPosition::AfterSan | DrPosition::AfterCan => {
            names.push("dr.w_shared".to_string());
            names.push("dr.w_dom".to_string());
            names.push("dr.gate.w1".to_string());
            names.push("dr.gate.b".to_string());
            names.push("dr.gate.w2".to_string());
        }
    }
    names.sort();
    names
}

impl<S: Scalar> ParamSet<S> {
    /// Seeded random initialization.
    ///
    /// Embeddings ~ N(0, d^-1/2); output projection ~ N(0, 0.02^2) so the
    /// initial logits are near-uniform and the first loss sits at ln(V);
    /// attention and feed-forward weights Xavier-uniform; biases zero;
    /// layer-norm affines (1, 0). Routing: W_dom and W_shared are identity
    /// plus N(0, 0.02^2), the gate hidden layer is Xavier, its bias zero,
    /// and W_2 exactly zero, which makes the whole routing layer a
    /// near-identity map with gate 0.5 at step 0.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.d_model;
        let v = cfg.vocab_size;
        let gh = cfg.d_gate_hidden;
        let sd = seed.to_string();
        let mut map = BTreeMap::new();
        let put = |map: &mut BTreeMap<String, Tensor<S>>, name: String, t: Tensor<S>| {
            map.insert(name, t);
        };

        put(&mut map, "embed".into(), normal_tensor(vec![v, d], false, (d as f64).powf(-0.5), &["init", &sd, "embed"]));
        put(&mut map, "out_proj".into(), normal_tensor(vec![d, v], false, 0.02, &["init", &sd, "out_proj"]));

        for name in expected_names(cfg) {
            if map.contains_key(&name) {
                continue;
            }
            let t: Tensor<S> = if name.ends_with(".gamma") {
                const_tensor(vec![d], 1.0)
            } else if name.ends_with(".beta") {
                const_tensor(vec![d], 0.0)
            } else if name.ends_with(".ffn.b1") {
                const_tensor(vec![cfg.d_ff], 0.0)
            } else if name.ends_with(".ffn.b2") {
                const_tensor(vec![d], 0.0)
            } else if name.ends_with(".ffn.w1") {
                xavier_uniform(d, cfg.d_ff, &["init", &sd, &name])
            } else if name.ends_with(".ffn.w2") {
                xavier_uniform(cfg.d_ff, d, &["init", &sd, &name])
            } else if name == "dr.w_shared" || name == "dr.w_dom" {
                normal_tensor(vec![d, d], true, 0.02, &["init", &sd, &name])
            } else if name == "dr.gate.w1" {
                xavier_uniform(d, gh, &["init", &sd, &name])
            } else if name == "dr.gate.b" {
                const_tensor(vec![gh], 0.0)
            } else if name == "dr.gate.w2" {
                const_tensor(vec![gh, 1], 0.0)
            } else {
                // Attention projection, d x d.
                xavier_uniform(d, d, &["init", &sd, &name])
            };
            put(&mut map, name, t);
        }
        Ok(ParamSet { cfg: cfg.clone(), map })
    }

    /// Builds a set from already-materialized tensors (checkpoint load).
    /// The name list must match the config exactly.
    pub fn from_tensors(cfg: &ModelConfig, map: BTreeMap<String, Tensor<S>>) -> Result<Self> {
        cfg.validate()?;
        let expected = expected_names(cfg);
        let got: Vec<&String> = map.keys().collect();
        if got.len() != expected.len() || !expected.iter().zip(&got).all(|(e, g)| e == *g) {
            let missing: Vec<&String> =
                expected.iter().filter(|n| !map.contains_key(*n)).collect();
            let extra: Vec<&&String> =
                got.iter().filter(|n| !expected.contains(**n)).collect();
            return Err(LexError::Checkpoint(format!(
                "parameter set does not match dr_position={}: missing {missing:?}, unexpected {extra:?}",
                cfg.dr_position.as_str()
            )));
        }
        Ok(ParamSet { cfg: cfg.clone(), map })
    }

    pub fn get(&self, name: &str) -> &Tensor<S> {
        self.map
            .get(name)
            .unwrap_or_else(|| panic!("internal: no parameter named '{name}'"))
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Tensor<S> {
        self.map
            .get_mut(name)
            .unwrap_or_else(|| panic!("internal: no parameter named '{name}'"))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<S>)> {
        self.map.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor<S>)> {
        self.map.iter_mut()
    }

    pub fn names(&self) -> Vec<String> {
        self.map.keys().cloned().collect()
    }

    pub fn n_params(&self) -> usize {
        self.map.values().map(|t| t.numel()).sum()
    }

    pub fn cast<T: Scalar>(&self) -> ParamSet<T> {
        let map = self
            .map
            .iter()
            .map(|(k, t)| {
                let data: Vec<T> = t.data().iter().map(|v| T::of_f64(v.as_f64())).collect();
                let nt = Tensor::new(t.shape().to_vec(), data)
                    .expect("shape preserved by cast")
                    .with_grad();
                (k.clone(), nt)
            })
            .collect();
        ParamSet { cfg: self.cfg.clone(), map }
    }
}
