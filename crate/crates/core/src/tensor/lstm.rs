use super::{Tape, Var};
use crate::error::{Error, Result};

/// Handles to one LSTM layer's weights on a tape.
///
/// Gate blocks are stacked in the order input, forget, cell, output:
/// `w_ih` is `4·d_h × d_in`, `w_hh` is `4·d_h × d_h`, `bias` is `4·d_h`.
#[derive(Clone, Copy, Debug)]
pub struct LstmWeights {
    pub w_ih: Var,
    pub w_hh: Var,
    pub bias: Var,
}

impl LstmWeights {
    pub fn hidden(&self, tape: &Tape) -> usize {
        tape.value(self.w_hh).shape()[1]
    }
}

/// Gate nonlinearities and state update from pre-activations
/// `z = W_ih·x + W_hh·h + b` (length `4·d_h`).
///
/// `i = σ(z_i)`, `f = σ(z_f)`, `g = tanh(z_g)`, `o = σ(z_o)`,
/// `c' = f⊙c + i⊙g`, `h' = o⊙tanh(c')`.
pub fn lstm_cell(tape: &mut Tape, z: Var, c: Var) -> Result<(Var, Var)> {
    let d = tape.value(c).len();
    if tape.value(z).len() != 4 * d {
        return Err(Error::Shape(format!(
            "lstm gate pre-activations have {} entries, expected {}",
            tape.value(z).len(),
            4 * d
        )));
    }
    let zi = tape.slice(z, 0, d)?;
    let zf = tape.slice(z, d, d)?;
    let zg = tape.slice(z, 2 * d, d)?;
    let zo = tape.slice(z, 3 * d, d)?;
    let i = tape.sigmoid(zi);
    let f = tape.sigmoid(zf);
    let g = tape.tanh(zg);
    let o = tape.sigmoid(zo);
    let keep = tape.mul(f, c)?;
    let write = tape.mul(i, g)?;
    let c_next = tape.add(keep, write)?;
    let squashed = tape.tanh(c_next);
    let h_next = tape.mul(o, squashed)?;
    Ok((h_next, c_next))
}

/// One LSTM time step from input `x`, hidden state `h` and cell state `c`.
pub fn lstm_step(tape: &mut Tape, x: Var, h: Var, c: Var, w: &LstmWeights) -> Result<(Var, Var)> {
    let from_x = tape.linear(x, w.w_ih, Some(w.bias))?;
    let from_h = tape.linear(h, w.w_hh, None)?;
    let z = tape.add(from_x, from_h)?;
    lstm_cell(tape, z, c)
}
