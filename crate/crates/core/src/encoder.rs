//! Scene context encoding: a per-polyline subgraph shared by every branch and
//! a per-branch global self-attention graph over all polylines.

use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::scene::{VectorSeq, VECTOR_DIM};
use crate::tensor::{attention, init_linear, init_projection, linear, project, ParamStore, ParamVars, Tape, Tensor, Var};

/// Multiplier applied to every coordinate before it enters a network.
pub const COORD_SCALE: f64 = 0.05;

pub const SUBGRAPH_PREFIX: &str = "subgraph";

/// Encoded scene rows on a tape.
#[derive(Clone, Debug)]
pub struct SceneFeatures {
    /// `n_polylines × hidden`.
    pub l: Var,
    /// Row of the target agent.
    pub target_row: usize,
    /// Rows that belong to lane polylines.
    pub lane_rows: Vec<usize>,
}

pub fn init_subgraph<S: Scalar, R: Rng>(store: &mut ParamStore<S>, rng: &mut R, hidden: usize, depth: usize) {
    for layer in 0..depth {
        let d_in = if layer == 0 { VECTOR_DIM } else { hidden };
        init_linear(store, rng, &format!("{SUBGRAPH_PREFIX}.layer{layer}"), d_in, hidden / 2);
    }
}

pub fn init_global_graph<S: Scalar, R: Rng>(store: &mut ParamStore<S>, rng: &mut R, prefix: &str, hidden: usize, layers: usize) {
    for layer in 0..layers {
        for proj in ["q", "k", "v"] {
            init_projection(store, rng, &format!("{prefix}.global{layer}.{proj}"), hidden, hidden);
        }
    }
}

/// Vector feature matrix (`vectors × VECTOR_DIM`) of one polyline.
pub fn polyline_tensor<S: Scalar>(seq: &VectorSeq) -> Result<Tensor<S>> {
    if seq.vectors.is_empty() {
        return Err(Error::EmptyPolyline);
    }
    let data = seq
        .vectors
        .iter()
        .flat_map(|v| v.features(COORD_SCALE))
        .map(S::lit)
        .collect();
    Tensor::new(vec![seq.vectors.len(), VECTOR_DIM], data)
}

/// One polyline to a `1×hidden` feature: `depth` rounds of
/// (Linear → LayerNorm → ReLU → concat with the max-pooled rows), then a final max-pool.
pub fn subgraph_encode<S: Scalar>(tape: &mut Tape<S>, vars: &ParamVars, vectors: Var, depth: usize) -> Result<Var> {
    let (m, _) = tape.value(vectors).dims2()?;
    if m == 0 {
        return Err(Error::EmptyPolyline);
    }
    let mut x = vectors;
    for layer in 0..depth {
        let h = linear(tape, vars, &format!("{SUBGRAPH_PREFIX}.layer{layer}"), x)?;
        let h = tape.layer_norm(h)?;
        let h = tape.relu(h)?;
        let pooled = tape.max_rows(h)?;
        let pooled = tape.repeat_rows(pooled, m)?;
        x = tape.concat_cols(&[h, pooled])?;
    }
    tape.max_rows(x)
}

/// Self-attention over the stacked polyline features with a residual per layer.
pub fn global_graph<S: Scalar>(tape: &mut Tape<S>, vars: &ParamVars, prefix: &str, features: Var, layers: usize) -> Result<Var> {
    let mut x = features;
    for layer in 0..layers {
        let q = project(tape, vars, &format!("{prefix}.global{layer}.q"), x)?;
        let k = project(tape, vars, &format!("{prefix}.global{layer}.k"), x)?;
        let v = project(tape, vars, &format!("{prefix}.global{layer}.v"), x)?;
        let a = attention(tape, q, k, v)?;
        x = tape.add(a, x)?;
    }
    Ok(x)
}

/// Subgraph features of all polylines stacked into `n × hidden`.
pub fn encode_polylines<S: Scalar>(tape: &mut Tape<S>, vars: &ParamVars, polylines: &[VectorSeq], depth: usize) -> Result<Var> {
    if polylines.is_empty() {
        return Err(Error::InvalidArgument("scene has no polylines".into()));
    }
    let mut rows = Vec::with_capacity(polylines.len());
    for seq in polylines {
        let input = tape.constant(polyline_tensor(seq)?)?;
        rows.push(subgraph_encode(tape, vars, input, depth)?);
    }
    tape.concat_rows(&rows)
}
