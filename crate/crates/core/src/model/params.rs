use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Every size the parameter shapes depend on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub vocab_size: usize,
    pub d_embed: usize,
    pub d_lstm: usize,
    pub d_tree: usize,
    pub d_leaf: usize,
    pub n_trees: usize,
    pub total_leaves: usize,
    pub n_labels: usize,
}

impl ModelDims {
    /// Width of a text vector: forward and backward states concatenated.
    pub fn d_text(&self) -> usize {
        2 * self.d_lstm
    }

    /// Width of a multimodal vector; equal to the text width.
    pub fn d_multimodal(&self) -> usize {
        self.d_text()
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("vocab_size", self.vocab_size),
            ("d_embed", self.d_embed),
            ("d_lstm", self.d_lstm),
            ("d_tree", self.d_tree),
            ("d_leaf", self.d_leaf),
            ("n_labels", self.n_labels),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Invalid(format!("{name} must be positive")));
            }
        }
        if self.total_leaves < self.n_trees {
            return Err(Error::Invalid("fewer leaves than trees".into()));
        }
        Ok(())
    }
}

/// Weights of one LSTM direction. Gate blocks are ordered input, forget,
/// cell, output along the last axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmParams {
    /// `d_embed x 4*d_lstm`
    pub w_input: Tensor,
    /// `d_lstm x 4*d_lstm`
    pub w_recurrent: Tensor,
    /// `4*d_lstm`
    pub bias: Tensor,
}

/// All learnable arrays. Projection matrices are stored input-major so that
/// row-vector activations multiply them directly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub dims: ModelDims,
    /// `vocab x d_embed`
    pub word_emb: Tensor,
    pub lstm_fwd: LstmParams,
    pub lstm_bwd: LstmParams,
    /// `d_text x d_tree`; maps a text vector to its tree query.
    pub w_query: Tensor,
    /// `d_tree x n_trees`; one key column per tree.
    pub tree_emb: Tensor,
    /// `total_leaves x d_leaf`; tree `t` owns rows `offsets[t]..offsets[t+1]`.
    pub leaf_emb: Tensor,
    /// `(d_text + d_leaf) x d_multimodal`
    pub w_out: Tensor,
    /// `d_multimodal x n_labels`
    pub label_attn: Tensor,
    /// `n_labels x d_multimodal`; one output vector per label.
    pub out_w: Tensor,
    /// `n_labels`
    pub out_b: Tensor,
}

fn uniform(shape: &[usize], bound: f64, rng: &mut impl Rng) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| if bound > 0.0 { rng.gen_range(-bound..bound) } else { 0.0 })
        .collect();
    Tensor {
        shape: shape.to_vec(),
        data,
    }
}

fn glorot(rows: usize, cols: usize, rng: &mut impl Rng) -> Tensor {
    let bound = (6.0 / (rows + cols).max(1) as f64).sqrt();
    uniform(&[rows, cols], bound, rng)
}

impl LstmParams {
    fn init(d_in: usize, d: usize, rng: &mut impl Rng) -> Self {
        let mut bias = Tensor::zeros(&[4 * d]);
        bias.data[d..2 * d].iter_mut().for_each(|b| *b = 1.0);
        Self {
            w_input: glorot(d_in, 4 * d, rng),
            w_recurrent: glorot(d, 4 * d, rng),
            bias,
        }
    }
}

pub const EMBEDDING_INIT_BOUND: f64 = 0.1;

impl ModelParams {
    /// Uniform(-0.1, 0.1) embeddings, Glorot-uniform matrices, zero biases and
    /// a forget-gate bias of 1.
    pub fn init(dims: ModelDims, rng: &mut impl Rng) -> Result<Self> {
        dims.validate()?;
        let d_h = dims.d_text();
        let d_m = dims.d_multimodal();
        let e = EMBEDDING_INIT_BOUND;
        Ok(Self {
            dims,
            word_emb: uniform(&[dims.vocab_size, dims.d_embed], e, rng),
            lstm_fwd: LstmParams::init(dims.d_embed, dims.d_lstm, rng),
            lstm_bwd: LstmParams::init(dims.d_embed, dims.d_lstm, rng),
            w_query: glorot(d_h, dims.d_tree, rng),
            tree_emb: uniform(&[dims.d_tree, dims.n_trees], e, rng),
            leaf_emb: uniform(&[dims.total_leaves, dims.d_leaf], e, rng),
            w_out: glorot(d_h + dims.d_leaf, d_m, rng),
            label_attn: glorot(d_m, dims.n_labels, rng),
            out_w: glorot(dims.n_labels, d_m, rng),
            out_b: Tensor::zeros(&[dims.n_labels]),
        })
    }

    /// All parameters set to zero.
    pub fn zeros(dims: ModelDims) -> Result<Self> {
        dims.validate()?;
        let d_h = dims.d_text();
        let d_m = dims.d_multimodal();
        let lstm = || LstmParams {
            w_input: Tensor::zeros(&[dims.d_embed, 4 * dims.d_lstm]),
            w_recurrent: Tensor::zeros(&[dims.d_lstm, 4 * dims.d_lstm]),
            bias: Tensor::zeros(&[4 * dims.d_lstm]),
        };
        Ok(Self {
            dims,
            word_emb: Tensor::zeros(&[dims.vocab_size, dims.d_embed]),
            lstm_fwd: lstm(),
            lstm_bwd: lstm(),
            w_query: Tensor::zeros(&[d_h, dims.d_tree]),
            tree_emb: Tensor::zeros(&[dims.d_tree, dims.n_trees]),
            leaf_emb: Tensor::zeros(&[dims.total_leaves, dims.d_leaf]),
            w_out: Tensor::zeros(&[d_h + dims.d_leaf, d_m]),
            label_attn: Tensor::zeros(&[d_m, dims.n_labels]),
            out_w: Tensor::zeros(&[dims.n_labels, d_m]),
            out_b: Tensor::zeros(&[dims.n_labels]),
        })
    }

    /// Overwrites word-embedding rows with pretrained vectors.
    pub fn load_word_vectors(&mut self, rows: &[(usize, Vec<f64>)]) -> Result<()> {
        let d = self.dims.d_embed;
        for (id, vec) in rows {
            if *id >= self.dims.vocab_size {
                return Err(Error::Index {
                    what: "word embedding",
                    index: *id,
                    size: self.dims.vocab_size,
                });
            }
            if vec.len() != d {
                return Err(Error::shape("load_word_vectors", &[vec.len()], &[d]));
            }
            self.word_emb.data[id * d..(id + 1) * d].copy_from_slice(vec);
        }
        Ok(())
    }

    pub const NAMES: [&'static str; 14] = [
        "word_emb",
        "lstm_fwd.w_input",
        "lstm_fwd.w_recurrent",
        "lstm_fwd.bias",
        "lstm_bwd.w_input",
        "lstm_bwd.w_recurrent",
        "lstm_bwd.bias",
        "w_query",
        "tree_emb",
        "leaf_emb",
        "w_out",
        "label_attn",
        "out_w",
        "out_b",
    ];

    /// Parameters in the fixed order of [`ModelParams::NAMES`].
    pub fn tensors(&self) -> [&Tensor; 14] {
        [
            &self.word_emb,
            &self.lstm_fwd.w_input,
            &self.lstm_fwd.w_recurrent,
            &self.lstm_fwd.bias,
            &self.lstm_bwd.w_input,
            &self.lstm_bwd.w_recurrent,
            &self.lstm_bwd.bias,
            &self.w_query,
            &self.tree_emb,
            &self.leaf_emb,
            &self.w_out,
            &self.label_attn,
            &self.out_w,
            &self.out_b,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor; 14] {
        [
            &mut self.word_emb,
            &mut self.lstm_fwd.w_input,
            &mut self.lstm_fwd.w_recurrent,
            &mut self.lstm_fwd.bias,
            &mut self.lstm_bwd.w_input,
            &mut self.lstm_bwd.w_recurrent,
            &mut self.lstm_bwd.bias,
            &mut self.w_query,
            &mut self.tree_emb,
            &mut self.leaf_emb,
            &mut self.w_out,
            &mut self.label_attn,
            &mut self.out_w,
            &mut self.out_b,
        ]
    }

    pub fn named(&self) -> impl Iterator<Item = (&'static str, &Tensor)> {
        Self::NAMES.into_iter().zip(self.tensors())
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.is_finite())
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|t| t.numel()).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dims() -> ModelDims {
        ModelDims {
            vocab_size: 10,
            d_embed: 4,
            d_lstm: 3,
            d_tree: 5,
            d_leaf: 2,
            n_trees: 2,
            total_leaves: 5,
            n_labels: 3,
        }
    }

    #[test]
    fn shapes_and_init_ranges() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = ModelParams::init(dims(), &mut rng).unwrap();
        assert_eq!(p.word_emb.shape, vec![10, 4]);
        assert_eq!(p.lstm_fwd.w_input.shape, vec![4, 12]);
        assert_eq!(p.w_out.shape, vec![8, 6]);
        assert_eq!(p.label_attn.shape, vec![6, 3]);
        assert!(p.word_emb.data.iter().all(|x| x.abs() < 0.1));
        assert_eq!(&p.lstm_fwd.bias.data[3..6], &[1.0, 1.0, 1.0]);
        assert_eq!(p.lstm_fwd.bias.data[0], 0.0);
        assert!(p.out_b.data.iter().all(|&b| b == 0.0));
        assert_eq!(p.named().count(), 14);
    }

    #[test]
    fn init_is_seeded() {
        let a = ModelParams::init(dims(), &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        let b = ModelParams::init(dims(), &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn word_vector_loading() {
        let mut p = ModelParams::zeros(dims()).unwrap();
        p.load_word_vectors(&[(2, vec![1.0, 2.0, 3.0, 4.0])]).unwrap();
        assert_eq!(&p.word_emb.data[8..12], &[1.0, 2.0, 3.0, 4.0]);
        assert!(p.load_word_vectors(&[(10, vec![0.0; 4])]).is_err());
        assert!(p.load_word_vectors(&[(0, vec![0.0; 3])]).is_err());
    }

    #[test]
    fn zero_dims_rejected() {
        let mut d = dims();
        d.d_leaf = 0;
        assert!(ModelParams::zeros(d).is_err());
    }
}
