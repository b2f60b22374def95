//! Compact generalized non-local attention and the three context modules
//! built on it: patch-to-patch (seeds), object-to-object (clusters) and the
//! global scene feature.

use crate::error::{ensure_width, Error, Result};
use crate::geom::FeatureMatrix;
use crate::grouping::{pool_members, ClusterSet, SeedSet, VoteSet};
use crate::nn::{channel_max_pool, init_weights, MlpWeights};

/// Transform weights of one attention block. Maps are stored right-multiply
/// (`[in × out]`), so `T = A·theta`.
#[derive(Clone, Debug, PartialEq)]
pub struct CgnlWeights {
    pub theta: FeatureMatrix,
    pub phi: FeatureMatrix,
    pub g: FeatureMatrix,
    pub out: FeatureMatrix,
    pub scale: f64,
    pub groups: usize,
}

impl CgnlWeights {
    pub fn new(
        theta: FeatureMatrix,
        phi: FeatureMatrix,
        g: FeatureMatrix,
        out: FeatureMatrix,
        scale: f64,
        groups: usize,
    ) -> Result<Self> {
        let c = theta.rows();
        let ct = theta.cols();
        for (name, m) in [("phi", &phi), ("g", &g)] {
            ensure_width(&format!("attention {name} input width"), c, m.rows())?;
            ensure_width(&format!("attention {name} output width"), ct, m.cols())?;
        }
        ensure_width("attention out input width", ct, out.rows())?;
        ensure_width("attention out output width", c, out.cols())?;
        if groups == 0 || ct % groups != 0 {
            return Err(Error::invalid(format!(
                "attention width {ct} is not divisible into {groups} groups"
            )));
        }
        if !scale.is_finite() {
            return Err(Error::NonFinite("attention scale".into()));
        }
        Ok(CgnlWeights {
            theta,
            phi,
            g,
            out,
            scale,
            groups,
        })
    }

    /// All transforms zero: the block reduces to its residual path.
    pub fn zeros(channels: usize, inner: usize) -> Self {
        CgnlWeights {
            theta: FeatureMatrix::zeros(channels, inner),
            phi: FeatureMatrix::zeros(channels, inner),
            g: FeatureMatrix::zeros(channels, inner),
            out: FeatureMatrix::zeros(inner, channels),
            scale: 1.0 / inner as f64,
            groups: 1,
        }
    }

    /// Glorot-initialized transforms with `scale = 1 / inner`.
    pub fn init(channels: usize, inner: usize, seed: u64, stream: u64) -> Self {
        let s = seed ^ stream.wrapping_mul(0xD6E8_FEB8_6659_FD93);
        CgnlWeights {
            theta: init_weights(channels, inner, s, 0),
            phi: init_weights(channels, inner, s, 1),
            g: init_weights(channels, inner, s, 2),
            out: init_weights(inner, channels, s, 3),
            scale: 1.0 / inner as f64,
            groups: 1,
        }
    }

    pub fn channels(&self) -> usize {
        self.theta.rows()
    }

    pub fn inner(&self) -> usize {
        self.theta.cols()
    }
}

/// Attention term `scale · T(ΦᵀG)` before the output map, computed per
/// channel group with the linear-cost association.
pub fn cgnl_attention(input: &FeatureMatrix, w: &CgnlWeights) -> Result<FeatureMatrix> {
    ensure_width("attention input width", w.channels(), input.cols())?;
    let t = input.matmul(&w.theta)?;
    let phi = input.matmul(&w.phi)?;
    let g = input.matmul(&w.g)?;
    let ct = w.inner();
    let gw = ct / w.groups;
    let mut y = FeatureMatrix::zeros(input.rows(), ct);
    for grp in 0..w.groups {
        let (lo, hi) = (grp * gw, (grp + 1) * gw);
        let (tg, pg, gg) = if w.groups == 1 {
            (t.clone(), phi.clone(), g.clone())
        } else {
            (t.slice_cols(lo, hi), phi.slice_cols(lo, hi), g.slice_cols(lo, hi))
        };
        let kernel = pg.t_matmul(&gg)?;
        let yg = tg.matmul(&kernel)?;
        for r in 0..y.rows() {
            y.row_mut(r)[lo..hi].copy_from_slice(yg.row(r));
        }
    }
    y.scale(w.scale);
    Ok(y)
}

/// `A' = out(scale · T(ΦᵀG)) + A`.
pub fn cgnl(input: &FeatureMatrix, w: &CgnlWeights) -> Result<FeatureMatrix> {
    let y = cgnl_attention(input, w)?;
    let mut out = y.matmul(&w.out)?;
    out.add_assign(input)?;
    Ok(out)
}

/// Patch-to-patch context over seed features; positions are untouched.
pub fn ppc(seeds: &SeedSet, w: &CgnlWeights) -> Result<SeedSet> {
    SeedSet::new(seeds.positions.clone(), cgnl(&seeds.features, w)?)
}

/// Per-cluster `max_i MLP(v_i)` over member vote features.
pub fn ooc_pool(votes: &VoteSet, clusters: &ClusterSet, vote_mlp: &MlpWeights) -> Result<FeatureMatrix> {
    let mut out = FeatureMatrix::zeros(clusters.len(), vote_mlp.out_width());
    for (c, members) in clusters.member_votes.iter().enumerate() {
        let rows = votes.features.select_rows(members);
        out.row_mut(c).copy_from_slice(&pool_members(&rows, vote_mlp)?);
    }
    Ok(out)
}

/// Object-to-object context: attention over the pooled cluster features.
pub fn ooc(
    votes: &VoteSet,
    clusters: &ClusterSet,
    vote_mlp: &MlpWeights,
    w: &CgnlWeights,
) -> Result<FeatureMatrix> {
    cgnl(&ooc_pool(votes, clusters, vote_mlp)?, w)
}

/// Scene-level feature shared by every proposal.
#[derive(Clone, Debug, PartialEq)]
pub struct GlobalContext {
    pub pooled_patches: Vec<f64>,
    pub pooled_clusters: Vec<f64>,
    pub aggregated: Vec<f64>,
}

pub fn global_context(
    patch_feats: &FeatureMatrix,
    cluster_feats: &FeatureMatrix,
    agg_mlp: &MlpWeights,
) -> Result<GlobalContext> {
    ensure_width(
        "global aggregation input (C_k + C_p)",
        cluster_feats.cols() + patch_feats.cols(),
        agg_mlp.in_width(),
    )?;
    ensure_width("global aggregation output", cluster_feats.cols(), agg_mlp.out_width())?;
    let pooled_clusters = channel_max_pool(cluster_feats)?;
    let pooled_patches = channel_max_pool(patch_feats)?;
    let mut x = pooled_clusters.clone();
    x.extend_from_slice(&pooled_patches);
    let aggregated = agg_mlp.forward_row(&x)?;
    Ok(GlobalContext {
        pooled_patches,
        pooled_clusters,
        aggregated,
    })
}

/// Global scene context: `MLP([max(C); max(P)])` broadcast-added to every
/// row of the object-level output.
pub fn gsc(
    patch_feats: &FeatureMatrix,
    cluster_feats: &FeatureMatrix,
    agg_mlp: &MlpWeights,
    ooc_out: &FeatureMatrix,
) -> Result<FeatureMatrix> {
    ensure_width("object context rows", cluster_feats.rows(), ooc_out.rows())?;
    ensure_width("object context width", cluster_feats.cols(), ooc_out.cols())?;
    let ctx = global_context(patch_feats, cluster_feats, agg_mlp)?;
    let mut out = ooc_out.clone();
    for r in 0..out.rows() {
        for (o, a) in out.row_mut(r).iter_mut().zip(&ctx.aggregated) {
            *o += a;
        }
    }
    Ok(out)
}
