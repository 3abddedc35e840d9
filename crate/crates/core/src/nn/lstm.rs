use rand::Rng;

use crate::autograd::{glorot_uniform, Graph, ParamId, ParamStore, Tensor, Var};
use crate::error::Result;
use crate::scalar::Scalar;

/// Parameters of one LSTM layer. Gate blocks are laid out `[i | f | o | g]`
/// along the columns of the `4H`-wide weight and bias tensors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LstmCell {
    pub w_x: ParamId,
    pub w_h: ParamId,
    pub bias: ParamId,
    pub input_size: usize,
    pub hidden_size: usize,
}

impl LstmCell {
    /// Glorot-initialized weights, zero biases, forget-gate bias 1.
    pub fn new<T: Scalar, R: Rng>(store: &mut ParamStore<T>, prefix: &str, input_size: usize, hidden_size: usize, rng: &mut R) -> Result<Self> {
        let w_x = store.add(format!("{prefix}.w_x"), glorot_uniform(input_size, 4 * hidden_size, rng))?;
        let w_h = store.add(format!("{prefix}.w_h"), glorot_uniform(hidden_size, 4 * hidden_size, rng))?;
        let mut b = Tensor::zeros(&[1, 4 * hidden_size]);
        b.data_mut()[hidden_size..2 * hidden_size].iter_mut().for_each(|v| *v = T::one());
        let bias = store.add(format!("{prefix}.b"), b)?;
        Ok(LstmCell {
            w_x,
            w_h,
            bias,
            input_size,
            hidden_size,
        })
    }

    /// Looks up an existing cell by parameter names.
    pub fn from_store<T: Scalar>(store: &ParamStore<T>, prefix: &str) -> Option<Self> {
        let w_x = store.id(&format!("{prefix}.w_x"))?;
        let w_h = store.id(&format!("{prefix}.w_h"))?;
        let bias = store.id(&format!("{prefix}.b"))?;
        let (input_size, four_h) = store.value(w_x).dims2();
        Some(LstmCell {
            w_x,
            w_h,
            bias,
            input_size,
            hidden_size: four_h / 4,
        })
    }

    /// One batched step:
    ///
    /// ```text
    /// i = σ(x Wxi + h Whi + bi)   f = σ(...)   o = σ(...)   g = tanh(...)
    /// c' = f ⊙ c + i ⊙ g
    /// h' = o ⊙ tanh(c')
    /// ```
    pub fn step<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var, h: Var, c: Var) -> Result<(Var, Var)> {
        let hs = self.hidden_size;
        let w_x = g.param(store, self.w_x);
        let w_h = g.param(store, self.w_h);
        let b = g.param(store, self.bias);
        let zx = g.matmul(x, w_x)?;
        let zh = g.matmul(h, w_h)?;
        let z = g.add(zx, zh)?;
        let z = g.add(z, b)?;
        let zi = g.slice(z, 0, hs)?;
        let zf = g.slice(z, hs, 2 * hs)?;
        let zo = g.slice(z, 2 * hs, 3 * hs)?;
        let zg = g.slice(z, 3 * hs, 4 * hs)?;
        let i = g.sigmoid(zi);
        let f = g.sigmoid(zf);
        let o = g.sigmoid(zo);
        let cand = g.tanh(zg);
        let keep = g.mul(f, c)?;
        let write = g.mul(i, cand)?;
        let c_next = g.add(keep, write)?;
        let tc = g.tanh(c_next);
        let h_next = g.mul(o, tc)?;
        Ok((h_next, c_next))
    }
}

/// Single unbatched step on plain vectors, returning `(h_t, c_t)`.
pub fn lstm_step<T: Scalar>(cell: &LstmCell, store: &ParamStore<T>, x: &[T], h_prev: &[T], c_prev: &[T]) -> Result<(Vec<T>, Vec<T>)> {
    let mut g = Graph::new();
    let x = g.constant(Tensor::row(x.to_vec()));
    let h = g.constant(Tensor::row(h_prev.to_vec()));
    let c = g.constant(Tensor::row(c_prev.to_vec()));
    let (h, c) = cell.step(&mut g, store, x, h, c)?;
    Ok((g.value(h).data().to_vec(), g.value(c).data().to_vec()))
}
