use crate::error::{Error, Result};
use crate::guidance::GuidanceVector;
use crate::numerics::{Graph, Mask, Tensor, Var};

/// Context vectors and the row-stochastic matrix that produced them.
#[derive(Debug, Clone, Copy)]
pub struct Attention {
    pub context: Var,
    pub weights: Var,
}

/// `softmax(Q Kᵀ / √d_k)` with masked key columns.
pub fn attention_weights(g: &mut Graph, q: Var, k: Var, mask: Option<&Mask>) -> Result<Var> {
    let dk = g.value(q).cols();
    let scores = g.matmul_nt(q, k)?;
    let scaled = g.scale(scores, 1.0 / (dk as f64).sqrt());
    g.softmax(scaled, mask)
}

/// Standard scaled dot-product cross-attention; `pad_mask[j]` hides key `j`.
pub fn cross_attention(g: &mut Graph, q: Var, k: Var, v: Var, pad_mask: &[bool]) -> Result<Attention> {
    check_keys(g, k, v, pad_mask.len())?;
    let weights = attention_weights(g, q, k, Some(&Mask::Cols(pad_mask.to_vec())))?;
    let context = g.matmul(weights, v)?;
    Ok(Attention { context, weights })
}

/// `½ (softmax(Q Kᵀ / √d_k) + softmax(guidance)) V`.
///
/// The guidance distribution is taken over positions that are neither padding
/// nor masked in the guidance itself, and is the same row for every query.
pub fn topical_cross_attention(
    g: &mut Graph,
    q: Var,
    k: Var,
    v: Var,
    guidance: &GuidanceVector,
    pad_mask: &[bool],
) -> Result<Attention> {
    let dist = guidance_distribution(guidance, pad_mask)?;
    topical_with_distribution(g, q, k, v, &dist, pad_mask)
}

/// Softmax of the guidance over visible key positions (masked → exact 0).
pub fn guidance_distribution(guidance: &GuidanceVector, pad_mask: &[bool]) -> Result<Vec<f64>> {
    if guidance.len() != pad_mask.len() {
        return Err(Error::shape(
            "topical_cross_attention",
            format!("guidance of length {} for {} key positions", guidance.len(), pad_mask.len()),
        ));
    }
    let merged = GuidanceVector {
        scores: guidance.scores.clone(),
        mask: guidance.mask.iter().zip(pad_mask).map(|(&a, &b)| a || b).collect(),
    };
    merged.distribution()
}

/// Topical attention with an already-normalised guidance row `dist`.
pub fn topical_with_distribution(
    g: &mut Graph,
    q: Var,
    k: Var,
    v: Var,
    dist: &[f64],
    pad_mask: &[bool],
) -> Result<Attention> {
    check_keys(g, k, v, pad_mask.len())?;
    if dist.len() != pad_mask.len() {
        return Err(Error::shape(
            "topical_cross_attention",
            format!("guidance of length {} for {} key positions", dist.len(), pad_mask.len()),
        ));
    }
    let a = attention_weights(g, q, k, Some(&Mask::Cols(pad_mask.to_vec())))?;
    let rows = g.value(q).rows();
    let b = g.constant(Tensor::matrix(rows, dist.len(), dist.repeat(rows))?);
    let sum = g.add(a, b)?;
    let weights = g.scale(sum, 0.5);
    let context = g.matmul(weights, v)?;
    Ok(Attention { context, weights })
}

fn check_keys(g: &Graph, k: Var, v: Var, mask_len: usize) -> Result<()> {
    let (nk, nv) = (g.value(k).rows(), g.value(v).rows());
    if nk != nv || nk != mask_len {
        return Err(Error::shape(
            "cross_attention",
            format!("{nk} keys, {nv} values, {mask_len} mask flags"),
        ));
    }
    Ok(())
}
