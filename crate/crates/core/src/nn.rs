//! Layers shared by the encoder and the answering heads.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::graph::PAD_ID;
use crate::tensor::{Matrix, ParamId, ParamStore, Scalar, Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, in_dim: usize, out_dim: usize, rng: &mut impl Rng) -> Self {
        let weight = store.add_glorot(format!("{name}.weight"), in_dim, out_dim, rng);
        let bias = store.add_zeros(format!("{name}.bias"), 1, out_dim);
        Self {
            weight,
            bias,
            in_dim,
            out_dim,
        }
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Var {
        let w = tape.param(store, self.weight);
        let b = tape.param(store, self.bias);
        let y = tape.matmul(x, w);
        tape.add_row(y, b)
    }

    pub fn params(&self) -> [ParamId; 2] {
        [self.weight, self.bias]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
    /// No nonlinearity; the two layers compose to an affine map.
    Identity,
}

/// Two fully-connected layers with a nonlinearity in between.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mlp {
    pub hidden: Linear,
    pub output: Linear,
    pub activation: Activation,
}

impl Mlp {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        dims: (usize, usize, usize),
        activation: Activation,
        rng: &mut impl Rng,
    ) -> Self {
        Self {
            hidden: Linear::new(store, &format!("{name}.0"), dims.0, dims.1, rng),
            output: Linear::new(store, &format!("{name}.1"), dims.1, dims.2, rng),
            activation,
        }
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Var {
        let h = self.hidden.forward(tape, store, x);
        let h = match self.activation {
            Activation::Relu => tape.relu(h),
            Activation::Identity => h,
        };
        self.output.forward(tape, store, h)
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut p = self.hidden.params().to_vec();
        p.extend(self.output.params());
        p
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LstmCell {
    pub input_weight: ParamId,
    pub hidden_weight: ParamId,
    pub bias: ParamId,
    pub hidden: usize,
}

impl LstmCell {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, input: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let input_weight = store.add_glorot(format!("{name}.wx"), input, 4 * hidden, rng);
        let hidden_weight = store.add_glorot(format!("{name}.wh"), hidden, 4 * hidden, rng);
        // Gate order is input, forget, cell, output; forget bias starts at 1.
        let mut b = Matrix::zeros(1, 4 * hidden);
        for j in hidden..2 * hidden {
            b.data_mut()[j] = T::one();
        }
        let bias = store.add(format!("{name}.bias"), b);
        Self {
            input_weight,
            hidden_weight,
            bias,
            hidden,
        }
    }

    fn params(&self) -> [ParamId; 3] {
        [self.input_weight, self.hidden_weight, self.bias]
    }

    /// Runs over `seqs` (already in processing order). Returns the hidden
    /// state after each step; rows past a sequence's end carry its last state.
    fn run<T: Scalar>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, embedding: Var, seqs: &[&[u32]]) -> Vec<Var> {
        let n = seqs.len();
        let h_dim = self.hidden;
        let wx = tape.param(store, self.input_weight);
        let wh = tape.param(store, self.hidden_weight);
        let b = tape.param(store, self.bias);
        let steps = seqs.iter().map(|s| s.len()).max().unwrap_or(0);
        let mut h = tape.constant(Matrix::zeros(n, h_dim));
        let mut c = tape.constant(Matrix::zeros(n, h_dim));
        let mut out = Vec::with_capacity(steps);
        for t in 0..steps {
            let ids: Arc<[usize]> = seqs
                .iter()
                .map(|s| s.get(t).copied().unwrap_or(PAD_ID) as usize)
                .collect();
            let mask: Arc<[bool]> = seqs.iter().map(|s| t < s.len()).collect();
            let x = tape.gather_rows(embedding, ids);
            let gx = tape.matmul(x, wx);
            let gates = if t == 0 {
                gx
            } else {
                let gh = tape.matmul(h, wh);
                tape.add(gx, gh)
            };
            let gates = tape.add_row(gates, b);
            let i = tape.slice_cols(gates, 0, h_dim);
            let i = tape.sigmoid(i);
            let f = tape.slice_cols(gates, h_dim, h_dim);
            let f = tape.sigmoid(f);
            let g = tape.slice_cols(gates, 2 * h_dim, h_dim);
            let g = tape.tanh(g);
            let o = tape.slice_cols(gates, 3 * h_dim, h_dim);
            let o = tape.sigmoid(o);
            let ig = tape.mul(i, g);
            let c_new = if t == 0 {
                ig
            } else {
                let fc = tape.mul(f, c);
                tape.add(fc, ig)
            };
            let tc = tape.tanh(c_new);
            let h_new = tape.mul(o, tc);
            h = tape.blend(h_new, h, mask.clone());
            c = tape.blend(c_new, c, mask);
            out.push(h);
        }
        out
    }
}

/// Output of [`BiLstm::encode`].
#[derive(Debug, Clone)]
pub struct SequenceEncoding {
    /// `n x 2h`: final forward state next to final backward state.
    pub finals: Var,
    /// `sum(len) x 2h` contextual states, present when requested.
    pub tokens: Option<Var>,
    /// Owning sequence of every token row.
    pub token_segments: Arc<[usize]>,
}

/// Single-layer bidirectional LSTM over token-id sequences.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BiLstm {
    pub forward: LstmCell,
    pub backward: LstmCell,
}

impl BiLstm {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, input: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        Self {
            forward: LstmCell::new(store, &format!("{name}.fwd"), input, hidden, rng),
            backward: LstmCell::new(store, &format!("{name}.bwd"), input, hidden, rng),
        }
    }

    pub fn output_dim(&self) -> usize {
        2 * self.forward.hidden
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut p = self.forward.params().to_vec();
        p.extend(self.backward.params());
        p
    }

    pub fn encode<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        embedding: Var,
        seqs: &[Vec<u32>],
        with_tokens: bool,
    ) -> SequenceEncoding {
        let n = seqs.len();
        let h_dim = self.forward.hidden;
        let fwd_seqs: Vec<&[u32]> = seqs.iter().map(Vec::as_slice).collect();
        let reversed: Vec<Vec<u32>> = seqs.iter().map(|s| s.iter().rev().copied().collect()).collect();
        let bwd_seqs: Vec<&[u32]> = reversed.iter().map(Vec::as_slice).collect();
        let fwd = self.forward.run(tape, store, embedding, &fwd_seqs);
        let bwd = self.backward.run(tape, store, embedding, &bwd_seqs);

        let zero = || Matrix::zeros(n, h_dim);
        let last_f = match fwd.last() {
            Some(&v) => v,
            None => tape.constant(zero()),
        };
        let last_b = match bwd.last() {
            Some(&v) => v,
            None => tape.constant(zero()),
        };
        let finals = tape.concat_cols(&[last_f, last_b]);

        let token_segments: Arc<[usize]> = seqs
            .iter()
            .enumerate()
            .flat_map(|(i, s)| std::iter::repeat_n(i, s.len()))
            .collect();
        let tokens = if with_tokens && !fwd.is_empty() {
            let all_f = tape.concat_rows(&fwd);
            let all_b = tape.concat_rows(&bwd);
            let mut idx_f = Vec::with_capacity(token_segments.len());
            let mut idx_b = Vec::with_capacity(token_segments.len());
            for (i, s) in seqs.iter().enumerate() {
                for t in 0..s.len() {
                    idx_f.push(t * n + i);
                    idx_b.push((s.len() - 1 - t) * n + i);
                }
            }
            let f = tape.gather_rows(all_f, idx_f.into());
            let b = tape.gather_rows(all_b, idx_b.into());
            Some(tape.concat_cols(&[f, b]))
        } else if with_tokens {
            Some(tape.constant(Matrix::zeros(0, 2 * h_dim)))
        } else {
            None
        };
        SequenceEncoding {
            finals,
            tokens,
            token_segments,
        }
    }
}
