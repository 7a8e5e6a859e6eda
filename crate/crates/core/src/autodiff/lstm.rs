use super::graph::{Graph, Var};
use crate::error::{Error, Result};

/// Bound weights of one LSTM cell. Gate rows are stacked in the order
/// input, forget, candidate, output: `w_ih` is `[4h, n_in]`, `w_hh` is
/// `[4h, h]`, `bias` is `[4h]`.
#[derive(Clone, Copy, Debug)]
pub struct LstmWeights {
    pub w_ih: Var,
    pub w_hh: Var,
    pub bias: Var,
}

/// One LSTM step: `c' = f*c + i*g`, `h' = o*tanh(c')`.
/// Works on `[n]` or `[B, n]` operands; returns `(h', c')`.
pub fn lstm_cell(g: &mut Graph, x: Var, h: Var, c: Var, w: &LstmWeights) -> Result<(Var, Var)> {
    let four_h = g.shape(w.w_hh)[0];
    if !four_h.is_multiple_of(4) || g.shape(w.w_hh).get(1) != Some(&(four_h / 4)) {
        return Err(Error::shape("lstm_cell", format!("w_hh must be [4h, h], got {:?}", g.shape(w.w_hh))));
    }
    let hidden = four_h / 4;
    if g.shape(h).last() != Some(&hidden) || g.shape(c) != g.shape(h) {
        return Err(Error::shape(
            "lstm_cell",
            format!("state shapes {:?}/{:?} do not match hidden size {hidden}", g.shape(h), g.shape(c)),
        ));
    }
    let from_x = g.linear(x, w.w_ih, Some(w.bias))?;
    let from_h = g.linear(h, w.w_hh, None)?;
    let pre = g.add(from_x, from_h)?;

    let i = g.narrow(pre, 0, hidden)?;
    let f = g.narrow(pre, hidden, hidden)?;
    let cand = g.narrow(pre, 2 * hidden, hidden)?;
    let o = g.narrow(pre, 3 * hidden, hidden)?;
    let i = g.sigmoid(i);
    let f = g.sigmoid(f);
    let cand = g.tanh(cand);
    let o = g.sigmoid(o);

    let keep = g.mul(f, c)?;
    let write = g.mul(i, cand)?;
    let c_next = g.add(keep, write)?;
    let squashed = g.tanh(c_next);
    let h_next = g.mul(o, squashed)?;
    Ok((h_next, c_next))
}
