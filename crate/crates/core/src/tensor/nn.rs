//! Layers built from tape primitives.

use rand::Rng;

use crate::error::{shape_err, Error, Result};
use crate::scalar::Scalar;

use super::{ParamStore, ParamVars, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Mlp2Dims {
    pub d_in: usize,
    pub d_hidden: usize,
    pub d_out: usize,
}

/// Adds `{name}.w` (`d_in×d_out`) and `{name}.b` (`1×d_out`), both uniform in
/// `[-1/√d_in, 1/√d_in]`.
pub fn init_linear<S: Scalar, R: Rng>(store: &mut ParamStore<S>, rng: &mut R, name: &str, d_in: usize, d_out: usize) {
    let bound = 1.0 / (d_in.max(1) as f64).sqrt();
    let mut draw = |n: usize| -> Vec<S> { (0..n).map(|_| S::lit(rng.gen_range(-bound..=bound))).collect() };
    let w = draw(d_in * d_out);
    let b = draw(d_out);
    store.insert(format!("{name}.w"), Tensor { shape: vec![d_in, d_out], data: w });
    store.insert(format!("{name}.b"), Tensor { shape: vec![1, d_out], data: b });
}

pub fn init_mlp2<S: Scalar, R: Rng>(store: &mut ParamStore<S>, rng: &mut R, prefix: &str, dims: Mlp2Dims) {
    init_linear(store, rng, &format!("{prefix}.l1"), dims.d_in, dims.d_hidden);
    init_linear(store, rng, &format!("{prefix}.l2"), dims.d_hidden, dims.d_out);
}

/// Bias-free projection weight `{name}.w`, same init as [`init_linear`].
pub fn init_projection<S: Scalar, R: Rng>(store: &mut ParamStore<S>, rng: &mut R, name: &str, d_in: usize, d_out: usize) {
    let bound = 1.0 / (d_in.max(1) as f64).sqrt();
    let w = (0..d_in * d_out).map(|_| S::lit(rng.gen_range(-bound..=bound))).collect();
    store.insert(format!("{name}.w"), Tensor { shape: vec![d_in, d_out], data: w });
}

/// `x · W` with `W = {name}.w`.
pub fn project<S: Scalar>(tape: &mut Tape<S>, vars: &ParamVars, name: &str, x: Var) -> Result<Var> {
    let w = vars.get(&format!("{name}.w"))?;
    tape.matmul(x, w)
}

/// `x · W + b`.
pub fn linear<S: Scalar>(tape: &mut Tape<S>, vars: &ParamVars, name: &str, x: Var) -> Result<Var> {
    let w = vars.get(&format!("{name}.w"))?;
    let b = vars.get(&format!("{name}.b"))?;
    let (_, d_in) = tape.value(x).dims2()?;
    let (w_in, _) = tape.value(w).dims2()?;
    if d_in != w_in {
        return shape_err("linear", format!("`{name}` expects width {w_in}, got {d_in}"));
    }
    let xw = tape.matmul(x, w)?;
    tape.add_row(xw, b)
}

/// Two-layer perceptron: `Linear → LayerNorm → ReLU → Linear`.
pub fn mlp2<S: Scalar>(tape: &mut Tape<S>, vars: &ParamVars, prefix: &str, x: Var) -> Result<Var> {
    let h = linear(tape, vars, &format!("{prefix}.l1"), x)?;
    let h = tape.layer_norm(h)?;
    let h = tape.relu(h)?;
    linear(tape, vars, &format!("{prefix}.l2"), h)
}

/// Scaled dot-product attention `softmax(Q Kᵀ / √d_k) V`.
pub fn attention<S: Scalar>(tape: &mut Tape<S>, q: Var, k: Var, v: Var) -> Result<Var> {
    let (_, dq) = tape.value(q).dims2()?;
    let (l, dk) = tape.value(k).dims2()?;
    let (lv, _) = tape.value(v).dims2()?;
    if l == 0 {
        return Err(Error::NoKeys);
    }
    if dq != dk {
        return shape_err("attention", format!("query width {dq}, key width {dk}"));
    }
    if lv != l {
        return shape_err("attention", format!("{l} keys, {lv} values"));
    }
    let scores = tape.matmul_nt(q, k)?;
    let scores = tape.scale(scores, S::one() / S::lit(dk as f64).sqrt())?;
    let weights = tape.softmax(scores, 1)?;
    tape.matmul(weights, v)
}
