//! LSTM cell step composed from tape primitives.

use crate::tape::{Tape, Var};

/// Weights (`hidden × (input + hidden)`) and bias (`hidden`) of one gate.
#[derive(Clone, Copy, Debug)]
pub struct GateVars {
    pub weights: Var,
    pub bias: Var,
}

/// The four gates of an LSTM cell, each applied to `[x; h_prev]`.
#[derive(Clone, Copy, Debug)]
pub struct LstmVars {
    pub input: GateVars,
    pub forget: GateVars,
    pub cell: GateVars,
    pub output: GateVars,
}

impl Tape {
    /// One LSTM step. `x`, `h_prev` and `c_prev` are vectors or share a
    /// leading batch axis. Returns `(h, c)`.
    ///
    /// ```text
    /// i = σ(W_i[x; h] + b_i)   f = σ(W_f[x; h] + b_f)
    /// g = tanh(W_g[x; h] + b_g) o = σ(W_o[x; h] + b_o)
    /// c' = f ⊙ c + i ⊙ g        h' = o ⊙ tanh(c')
    /// ```
    pub fn lstm_cell_step(&mut self, x: Var, h_prev: Var, c_prev: Var, params: &LstmVars) -> (Var, Var) {
        assert_eq!(
            self.shape(h_prev),
            self.shape(c_prev),
            "hidden and cell state shapes differ"
        );
        let joined = self.concat(&[x, h_prev]);
        let gate = |tape: &mut Tape, g: &GateVars| tape.affine(joined, g.weights, g.bias);
        let i_pre = gate(self, &params.input);
        let f_pre = gate(self, &params.forget);
        let g_pre = gate(self, &params.cell);
        let o_pre = gate(self, &params.output);
        assert_eq!(
            self.shape(i_pre),
            self.shape(c_prev),
            "gate width does not match the state width"
        );
        let i = self.sigmoid(i_pre);
        let f = self.sigmoid(f_pre);
        let g = self.tanh(g_pre);
        let o = self.sigmoid(o_pre);
        let kept = self.mul(f, c_prev);
        let written = self.mul(i, g);
        let c = self.add(kept, written);
        let squashed = self.tanh(c);
        let h = self.mul(o, squashed);
        (h, c)
    }
}
