//! Forward pass of the network on a [`Tape`].
//!
//! Activations are row-oriented: a document of `N` tokens yields an
//! `N x d_text` text matrix `H`, and the leaf matrix holds one activated leaf
//! embedding per tree as a row (`n_trees x d_leaf`).

use serde::{Deserialize, Serialize};

use super::params::ModelParams;
use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// How leaf embeddings are pooled into the per-token tree vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionMode {
    /// Query-dependent softmax over trees.
    Attention,
    /// Uniform mean over trees.
    Average,
    /// Element-wise max over trees.
    Maxpool,
    /// No tree features; the text matrix is passed through unchanged.
    TextOnly,
}

impl FusionMode {
    pub const ALL: [FusionMode; 4] = [
        FusionMode::TextOnly,
        FusionMode::Maxpool,
        FusionMode::Average,
        FusionMode::Attention,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FusionMode::Attention => "attention",
            FusionMode::Average => "average",
            FusionMode::Maxpool => "maxpool",
            FusionMode::TextOnly => "text_only",
        }
    }

    pub fn uses_trees(self) -> bool {
        self != FusionMode::TextOnly
    }
}

impl std::str::FromStr for FusionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Invalid(format!("unknown fusion mode {s}")))
    }
}

/// One document ready for the network.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub admission_id: String,
    pub tokens: Vec<usize>,
    /// Global leaf id per tree; empty in text-only runs.
    pub leaves: Vec<usize>,
    pub labels: Vec<f64>,
}

/// Tape handles for every parameter, in [`ModelParams::NAMES`] order.
#[derive(Debug, Clone, Copy)]
pub struct ParamVars {
    pub word_emb: Var,
    pub fwd: [Var; 3],
    pub bwd: [Var; 3],
    pub w_query: Var,
    pub tree_emb: Var,
    pub leaf_emb: Var,
    pub w_out: Var,
    pub label_attn: Var,
    pub out_w: Var,
    pub out_b: Var,
}

impl ParamVars {
    pub fn register<'a>(tape: &mut Tape<'a>, p: &'a ModelParams) -> Self {
        Self {
            word_emb: tape.param(&p.word_emb),
            fwd: [
                tape.param(&p.lstm_fwd.w_input),
                tape.param(&p.lstm_fwd.w_recurrent),
                tape.param(&p.lstm_fwd.bias),
            ],
            bwd: [
                tape.param(&p.lstm_bwd.w_input),
                tape.param(&p.lstm_bwd.w_recurrent),
                tape.param(&p.lstm_bwd.bias),
            ],
            w_query: tape.param(&p.w_query),
            tree_emb: tape.param(&p.tree_emb),
            leaf_emb: tape.param(&p.leaf_emb),
            w_out: tape.param(&p.w_out),
            label_attn: tape.param(&p.label_attn),
            out_w: tape.param(&p.out_w),
            out_b: tape.param(&p.out_b),
        }
    }

    pub fn all(&self) -> [Var; 14] {
        [
            self.word_emb,
            self.fwd[0],
            self.fwd[1],
            self.fwd[2],
            self.bwd[0],
            self.bwd[1],
            self.bwd[2],
            self.w_query,
            self.tree_emb,
            self.leaf_emb,
            self.w_out,
            self.label_attn,
            self.out_w,
            self.out_b,
        ]
    }
}

/// Runs one LSTM direction over precomputed input projections
/// (`N x 4d`, bias included). Returns the hidden state at each position.
fn lstm_direction(
    tape: &mut Tape<'_>,
    projected: Var,
    w_recurrent: Var,
    d: usize,
    order: impl Iterator<Item = usize>,
    n: usize,
) -> Result<Vec<Var>> {
    let mut hidden: Vec<Option<Var>> = vec![None; n];
    let mut state: Option<(Var, Var)> = None;
    for t in order {
        let mut gates = tape.slice(projected, 0, t, t + 1)?;
        if let Some((h_prev, _)) = state {
            let rec = tape.matmul(h_prev, w_recurrent)?;
            gates = tape.add(gates, rec)?;
        }
        let i = tape.slice(gates, 1, 0, d)?;
        let i = tape.sigmoid(i);
        let f = tape.slice(gates, 1, d, 2 * d)?;
        let f = tape.sigmoid(f);
        let g = tape.slice(gates, 1, 2 * d, 3 * d)?;
        let g = tape.tanh(g);
        let o = tape.slice(gates, 1, 3 * d, 4 * d)?;
        let o = tape.sigmoid(o);
        let mut c = tape.mul(i, g)?;
        if let Some((_, c_prev)) = state {
            let keep = tape.mul(f, c_prev)?;
            c = tape.add(c, keep)?;
        }
        let tc = tape.tanh(c);
        let h = tape.mul(o, tc)?;
        hidden[t] = Some(h);
        state = Some((h, c));
    }
    Ok(hidden.into_iter().map(|h| h.expect("every position visited")).collect())
}

/// Bidirectional LSTM over the document; returns `H` (`N x 2*d_lstm`).
pub fn encode_text(
    tape: &mut Tape<'_>,
    pv: &ParamVars,
    dims: &super::ModelDims,
    tokens: &[usize],
) -> Result<Var> {
    if tokens.is_empty() {
        return Err(Error::Invalid("cannot encode an empty document".into()));
    }
    if let Some(&bad) = tokens.iter().find(|&&t| t >= dims.vocab_size) {
        return Err(Error::Index {
            what: "token id",
            index: bad,
            size: dims.vocab_size,
        });
    }
    let n = tokens.len();
    let d = dims.d_lstm;
    let emb = tape.gather(pv.word_emb, tokens)?;

    let mut directions = Vec::with_capacity(2);
    for (params, reverse) in [(pv.fwd, false), (pv.bwd, true)] {
        let proj = tape.matmul(emb, params[0])?;
        let proj = tape.add_row(proj, params[2])?;
        let hidden = if reverse {
            lstm_direction(tape, proj, params[1], d, (0..n).rev(), n)?
        } else {
            lstm_direction(tape, proj, params[1], d, 0..n, n)?
        };
        directions.push(tape.concat(&hidden, 0)?);
    }
    tape.concat(&directions, 1)
}

/// Activated leaf embedding of each tree, one row per tree.
pub fn assemble_leaf_matrix(
    tape: &mut Tape<'_>,
    pv: &ParamVars,
    dims: &super::ModelDims,
    global_leaves: &[usize],
) -> Result<Var> {
    if global_leaves.len() != dims.n_trees {
        return Err(Error::shape(
            "assemble_leaf_matrix",
            &[global_leaves.len()],
            &[dims.n_trees],
        ));
    }
    tape.gather(pv.leaf_emb, global_leaves)
}

/// Output of [`fuse`].
#[derive(Debug, Clone, Copy)]
pub struct Fused {
    /// `N x d_multimodal`
    pub m: Var,
    /// `N x n_trees` attention weights, attention mode only.
    pub alpha: Option<Var>,
}

/// Combines the text matrix with the leaf matrix.
///
/// Attention: `q_i = W_q h_i`, `alpha_i = softmax(T^T q_i)`,
/// `s_i = sum_t alpha_it l_t`, `m_i = W_o [h_i ; s_i]`. Average and maxpool
/// replace `s_i` with the mean or element-wise max of the leaf rows. Text-only
/// returns `H` itself.
pub fn fuse(
    tape: &mut Tape<'_>,
    pv: &ParamVars,
    h: Var,
    leaf_rows: Option<Var>,
    mode: FusionMode,
) -> Result<Fused> {
    if mode == FusionMode::TextOnly {
        return Ok(Fused { m: h, alpha: None });
    }
    let leaf_rows = leaf_rows.ok_or_else(|| {
        Error::Invalid(format!("fusion mode {} needs a leaf matrix", mode.as_str()))
    })?;
    let n = tape.shape(h)[0];
    let (special, alpha) = match mode {
        FusionMode::Attention => {
            let q = tape.matmul(h, pv.w_query)?;
            let scores = tape.matmul(q, pv.tree_emb)?;
            let alpha = tape.softmax(scores)?;
            (tape.matmul(alpha, leaf_rows)?, Some(alpha))
        }
        FusionMode::Average => {
            // Uniform weights through the same product as attention, so equal
            // attention scores reproduce this mode bit for bit.
            let t = tape.shape(leaf_rows)[0];
            let uniform = tape.constant(Tensor::new(vec![n, t], vec![1.0 / t as f64; n * t])?);
            (tape.matmul(uniform, leaf_rows)?, None)
        }
        FusionMode::Maxpool => {
            let by_tree = tape.transpose(leaf_rows)?;
            let pooled = tape.maxpool_cols(by_tree)?;
            (tape.broadcast_rows(pooled, n)?, None)
        }
        FusionMode::TextOnly => unreachable!(),
    };
    let joined = tape.concat(&[h, special], 1)?;
    let m = tape.matmul(joined, pv.w_out)?;
    Ok(Fused { m, alpha })
}

/// Per-label attention over tokens. Returns `(A^T, V)` where `A^T` is
/// `n_labels x N` (each row a softmax over tokens) and `V = A^T M`.
pub fn label_attention(tape: &mut Tape<'_>, m: Var, u: Var) -> Result<(Var, Var)> {
    let scores = tape.matmul(m, u)?;
    let by_label = tape.transpose(scores)?;
    let attn = tape.softmax(by_label)?;
    let v = tape.matmul(attn, m)?;
    Ok((attn, v))
}

/// Per-label linear layer and sigmoid: `y_l = sigmoid(w_l . v_l + b_l)`.
pub fn predict(tape: &mut Tape<'_>, v: Var, out_w: Var, out_b: Var) -> Result<Var> {
    let prod = tape.mul(v, out_w)?;
    let logits = tape.sum_cols(prod)?;
    let logits = tape.add(logits, out_b)?;
    Ok(tape.sigmoid(logits))
}

/// Handles to the intermediate values of one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct Forward {
    pub h: Var,
    pub leaf_rows: Option<Var>,
    pub fused: Fused,
    pub label_attn: Var,
    pub v: Var,
    pub yhat: Var,
}

pub fn forward(
    tape: &mut Tape<'_>,
    pv: &ParamVars,
    dims: &super::ModelDims,
    example: &Example,
    mode: FusionMode,
) -> Result<Forward> {
    let h = encode_text(tape, pv, dims, &example.tokens)?;
    let leaf_rows = if mode.uses_trees() {
        Some(assemble_leaf_matrix(tape, pv, dims, &example.leaves)?)
    } else {
        None
    };
    let fused = fuse(tape, pv, h, leaf_rows, mode)?;
    let (label_attn, v) = label_attention(tape, fused.m, pv.label_attn)?;
    let yhat = predict(tape, v, pv.out_w, pv.out_b)?;
    Ok(Forward {
        h,
        leaf_rows,
        fused,
        label_attn,
        v,
        yhat,
    })
}

/// Loss and per-parameter gradients (zeros where a parameter is unused), in
/// [`ModelParams::NAMES`] order.
pub fn loss_and_gradients(
    params: &ModelParams,
    example: &Example,
    mode: FusionMode,
) -> Result<(f64, Vec<Vec<f64>>)> {
    let mut tape = Tape::new();
    let pv = ParamVars::register(&mut tape, params);
    let fwd = forward(&mut tape, &pv, &params.dims, example, mode)?;
    let loss = tape.bce(fwd.yhat, &example.labels)?;
    let value = tape.value(loss).data[0];
    let mut grads = tape.backward(loss)?;
    let out = pv
        .all()
        .iter()
        .zip(params.tensors())
        .map(|(v, t)| grads.take(*v).unwrap_or_else(|| vec![0.0; t.numel()]))
        .collect();
    Ok((value, out))
}

/// Predicted probabilities for one document.
pub fn predict_example(params: &ModelParams, example: &Example, mode: FusionMode) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let pv = ParamVars::register(&mut tape, params);
    let fwd = forward(&mut tape, &pv, &params.dims, example, mode)?;
    Ok(tape.value(fwd.yhat).data.clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelDims;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dims(n_trees: usize) -> ModelDims {
        ModelDims {
            vocab_size: 6,
            d_embed: 3,
            d_lstm: 2,
            d_tree: 3,
            d_leaf: 2,
            n_trees,
            total_leaves: 2 * n_trees,
            n_labels: 2,
        }
    }

    fn random(n_trees: usize, seed: u64) -> ModelParams {
        ModelParams::init(dims(n_trees), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    #[test]
    fn zero_params_give_zero_text_and_half_probabilities() {
        let p = ModelParams::zeros(dims(2)).unwrap();
        let mut tape = Tape::new();
        let pv = ParamVars::register(&mut tape, &p);
        let ex = Example {
            admission_id: "a".into(),
            tokens: vec![1, 2, 3],
            leaves: vec![0, 2],
            labels: vec![1.0, 0.0],
        };
        let fwd = forward(&mut tape, &pv, &p.dims, &ex, FusionMode::Attention).unwrap();
        assert!(tape.value(fwd.h).data.iter().all(|&x| x == 0.0));
        assert_eq!(tape.value(fwd.yhat).data, vec![0.5, 0.5]);
    }

    #[test]
    fn single_token_shapes() {
        let p = random(2, 1);
        let mut tape = Tape::new();
        let pv = ParamVars::register(&mut tape, &p);
        let h = encode_text(&mut tape, &pv, &p.dims, &[4]).unwrap();
        assert_eq!(tape.shape(h), &[1, 4]);
        assert!(encode_text(&mut tape, &pv, &p.dims, &[]).is_err());
        assert!(encode_text(&mut tape, &pv, &p.dims, &[6]).is_err());
    }

    #[test]
    fn text_only_is_identity() {
        let p = random(2, 3);
        let mut tape = Tape::new();
        let pv = ParamVars::register(&mut tape, &p);
        let h = encode_text(&mut tape, &pv, &p.dims, &[1, 2]).unwrap();
        let fused = fuse(&mut tape, &pv, h, None, FusionMode::TextOnly).unwrap();
        assert_eq!(fused.m, h);
        assert!(fuse(&mut tape, &pv, h, None, FusionMode::Average).is_err());
    }

    #[test]
    fn single_tree_modes_agree() {
        let p = random(1, 5);
        let mut tape = Tape::new();
        let pv = ParamVars::register(&mut tape, &p);
        let h = encode_text(&mut tape, &pv, &p.dims, &[1, 2, 3]).unwrap();
        let l = assemble_leaf_matrix(&mut tape, &pv, &p.dims, &[1]).unwrap();
        let att = fuse(&mut tape, &pv, h, Some(l), FusionMode::Attention).unwrap();
        let avg = fuse(&mut tape, &pv, h, Some(l), FusionMode::Average).unwrap();
        let max = fuse(&mut tape, &pv, h, Some(l), FusionMode::Maxpool).unwrap();
        assert!(tape.value(att.alpha.unwrap()).data.iter().all(|&a| a == 1.0));
        assert_eq!(tape.value(att.m), tape.value(avg.m));
        assert_eq!(tape.value(max.m), tape.value(avg.m));
    }

    #[test]
    fn identical_tree_keys_reduce_attention_to_average() {
        let mut p = random(3, 9);
        let col: Vec<f64> = (0..p.dims.d_tree).map(|i| 0.3 * i as f64 - 0.2).collect();
        for i in 0..p.dims.d_tree {
            for t in 0..3 {
                p.tree_emb.data[i * 3 + t] = col[i];
            }
        }
        let mut tape = Tape::new();
        let pv = ParamVars::register(&mut tape, &p);
        let h = encode_text(&mut tape, &pv, &p.dims, &[0, 5, 2, 2]).unwrap();
        let l = assemble_leaf_matrix(&mut tape, &pv, &p.dims, &[0, 3, 5]).unwrap();
        let att = fuse(&mut tape, &pv, h, Some(l), FusionMode::Attention).unwrap();
        let avg = fuse(&mut tape, &pv, h, Some(l), FusionMode::Average).unwrap();
        let a = &tape.value(att.m).data;
        let b = &tape.value(avg.m).data;
        assert_eq!(a, b);
    }

    #[test]
    fn leaf_matrix_errors() {
        let p = random(2, 0);
        let mut tape = Tape::new();
        let pv = ParamVars::register(&mut tape, &p);
        assert!(assemble_leaf_matrix(&mut tape, &pv, &p.dims, &[0]).is_err());
        assert!(assemble_leaf_matrix(&mut tape, &pv, &p.dims, &[0, 4]).is_err());
    }

    #[test]
    fn label_attention_single_token_and_zero_u() {
        let mut tape = Tape::new();
        let m1 = tape.leaf(Tensor::matrix(&[vec![1.0, -2.0]]).unwrap());
        let u = tape.leaf(Tensor::matrix(&[vec![0.3, -1.0, 2.0], vec![0.1, 0.0, 5.0]]).unwrap());
        let (a, v) = label_attention(&mut tape, m1, u).unwrap();
        assert_eq!(tape.value(a).data, vec![1.0, 1.0, 1.0]);
        assert_eq!(tape.value(v).data, vec![1.0, -2.0, 1.0, -2.0, 1.0, -2.0]);

        let m = tape.leaf(Tensor::matrix(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 9.0]]).unwrap());
        let u0 = tape.leaf(Tensor::zeros(&[2, 2]));
        let (_, v) = label_attention(&mut tape, m, u0).unwrap();
        let v = tape.value(v);
        for l in 0..2 {
            assert!((v.at(l, 0) - 3.0).abs() < 1e-15);
            assert!((v.at(l, 1) - 5.0).abs() < 1e-15);
        }
    }

    #[test]
    fn predict_extremes() {
        let mut tape = Tape::new();
        let v = tape.leaf(Tensor::matrix(&[vec![1.0, 1.0], vec![2.0, 2.0]]).unwrap());
        let w = tape.leaf(Tensor::zeros(&[2, 2]));
        let b = tape.leaf(Tensor::zeros(&[2]));
        let y = predict(&mut tape, v, w, b).unwrap();
        assert_eq!(tape.value(y).data, vec![0.5, 0.5]);
        let w = tape.leaf(Tensor::matrix(&[vec![400.0, 400.0], vec![-400.0, 0.0]]).unwrap());
        let y = predict(&mut tape, v, w, b).unwrap();
        let y = &tape.value(y).data;
        assert_eq!(y[0], 1.0);
        assert!(y[1] >= 0.0 && y[1] < 1e-300);
    }
}
