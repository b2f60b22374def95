//! Ray-based coarse-to-fine grouping.
//!
//! Every vote cluster emits a fixed fan of rays. Anchors are placed at the
//! bin centers of each ray (coarse and fine levels), a local feature is
//! abstracted around each anchor, anchors are gated by a surface mask, and
//! the surviving features are fused per ray, per level and finally across
//! levels into one vector that is folded back into the cluster feature.

use std::fmt::Write as _;

use crate::error::{ensure_width, Error, Result};
use crate::geom::{AABox, FeatureMatrix, Point3, PointCloud};
use crate::grouping::{abstract_at, ball_query_positions};
use crate::nn::{sigmoid, softplus, MlpWeights};

pub const RAY_FEATURE_WIDTH: usize = 32;
pub const LEVEL_FEATURE_WIDTH: usize = 128;
pub const DEFAULT_RING_MULTIPLIER: usize = 4;

/// Standardized ray directions, ordered by (polar ring, azimuth index).
#[derive(Clone, Debug, PartialEq)]
pub struct RayFan {
    pub directions: Vec<Point3>,
    pub polar_index: Vec<usize>,
    pub azimuth_index: Vec<usize>,
    pub polar_angles: Vec<f64>,
    pub azimuth_angles: Vec<f64>,
    pub polar_count: usize,
}

impl RayFan {
    pub fn len(&self) -> usize {
        self.directions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.directions.is_empty()
    }

    /// Whitespace table `n p a dx dy dz`, one ray per line.
    pub fn to_table(&self) -> String {
        let mut s = String::from("# n p a dx dy dz\n");
        for (n, d) in self.directions.iter().enumerate() {
            let _ = writeln!(
                s,
                "{n} {} {} {} {} {}",
                self.polar_index[n], self.azimuth_index[n], d.x, d.y, d.z
            );
        }
        s
    }
}

/// Rays per polar ring: one at each pole, `multiplier·p` rings growing to the
/// equator and shrinking symmetrically after it.
pub fn ray_distribution_with(polar_count: usize, multiplier: usize) -> Result<Vec<usize>> {
    if polar_count < 2 {
        return Err(Error::invalid(format!("need at least 2 polar angles, got {polar_count}")));
    }
    if multiplier < 1 {
        return Err(Error::invalid("ring multiplier must be positive"));
    }
    let last = polar_count - 1;
    Ok((0..polar_count)
        .map(|p| {
            if p == 0 || p == last {
                1
            } else if 2 * p <= last {
                multiplier * p
            } else {
                multiplier * (last - p)
            }
        })
        .collect())
}

pub fn ray_distribution(polar_count: usize) -> Result<Vec<usize>> {
    ray_distribution_with(polar_count, DEFAULT_RING_MULTIPLIER)
}

pub fn generate_rays(polar_count: usize) -> Result<RayFan> {
    generate_rays_with(polar_count, DEFAULT_RING_MULTIPLIER)
}

/// Builds the fan. Poles and the equator are set exactly, and the southern
/// hemisphere mirrors the northern one, so z-components are exactly symmetric.
pub fn generate_rays_with(polar_count: usize, multiplier: usize) -> Result<RayFan> {
    let counts = ray_distribution_with(polar_count, multiplier)?;
    let last = polar_count - 1;
    let mut fan = RayFan {
        directions: Vec::new(),
        polar_index: Vec::new(),
        azimuth_index: Vec::new(),
        polar_angles: Vec::new(),
        azimuth_angles: Vec::new(),
        polar_count,
    };
    for (p, &count) in counts.iter().enumerate() {
        let theta = std::f64::consts::PI * p as f64 / last as f64;
        let (sin_t, cos_t) = if p == 0 {
            (0.0, 1.0)
        } else if p == last {
            (0.0, -1.0)
        } else if 2 * p == last {
            (1.0, 0.0)
        } else if 2 * p < last {
            theta.sin_cos()
        } else {
            let mirror = std::f64::consts::PI * (last - p) as f64 / last as f64;
            let (s, c) = mirror.sin_cos();
            (s, -c)
        };
        for a in 0..count {
            let psi = 2.0 * std::f64::consts::PI * a as f64 / count as f64;
            let (sin_p, cos_p) = psi.sin_cos();
            fan.directions.push(Point3::new(sin_t * cos_p, sin_t * sin_p, cos_t));
            fan.polar_index.push(p);
            fan.azimuth_index.push(a);
            fan.polar_angles.push(theta);
            fan.azimuth_angles.push(psi);
        }
    }
    Ok(fan)
}

/// Bin-center anchors: anchor k (1-based) of ray n sits at
/// `center + d_n · (k − ½)·length/bins`. Output is ray-major.
pub fn bin_anchors(center: Point3, fan: &RayFan, length: f64, bins: usize) -> Result<Vec<Point3>> {
    if !(length > 0.0) || !length.is_finite() {
        return Err(Error::invalid(format!("ray length must be positive, got {length}")));
    }
    if bins < 1 {
        return Err(Error::invalid("at least one bin per ray is required"));
    }
    let mut out = Vec::with_capacity(fan.len() * bins);
    for &d in &fan.directions {
        for k in 1..=bins {
            let t = (k as f64 - 0.5) * length / bins as f64;
            out.push(center + d * t);
        }
    }
    Ok(out)
}

pub fn coarse_anchors(center: Point3, fan: &RayFan, length: f64, kc: usize) -> Result<Vec<Point3>> {
    bin_anchors(center, fan, length, kc)
}

pub fn fine_anchors(center: Point3, fan: &RayFan, length: f64, kf: usize) -> Result<Vec<Point3>> {
    bin_anchors(center, fan, length, kf)
}

/// Local feature per anchor: set abstraction with the anchor as group center.
pub fn anchor_features(
    cloud: &PointCloud,
    anchors: &[Point3],
    radius: f64,
    max_group: usize,
    mlp: &MlpWeights,
) -> Result<FeatureMatrix> {
    abstract_at(cloud, anchors, radius, max_group, mlp)
}

/// Points of `cloud` inside `gt` and within `band` of one of its faces.
pub fn surface_points(cloud: &PointCloud, gt: &AABox, band: f64) -> Vec<Point3> {
    cloud
        .positions()
        .iter()
        .copied()
        .filter(|&p| gt.contains(p) && gt.face_distance(p) <= band)
        .collect()
}

/// Ground-truth mask: an anchor is positive iff some surface point lies
/// within `proximity` of it.
pub fn surface_mask_oracle(anchors: &[Point3], surface: &[Point3], proximity: f64) -> Result<Vec<bool>> {
    Ok(ball_query_positions(surface, anchors, proximity, 1)?
        .into_iter()
        .map(|g| !g.is_empty())
        .collect())
}

/// Predicted surface probability per anchor: `sigmoid(mlp(anchor ⊕ cluster))`.
/// The MLP yields a logit.
pub fn surface_mask_predict(
    anchor_feat: &FeatureMatrix,
    cluster_feat: &[f64],
    mlp: &MlpWeights,
) -> Result<Vec<f64>> {
    ensure_width(
        "mask MLP input (anchor + cluster)",
        anchor_feat.cols() + cluster_feat.len(),
        mlp.in_width(),
    )?;
    ensure_width("mask MLP output", 1, mlp.out_width())?;
    let mut row = Vec::with_capacity(mlp.in_width());
    anchor_feat
        .iter_rows()
        .map(|a| {
            row.clear();
            row.extend_from_slice(a);
            row.extend_from_slice(cluster_feat);
            Ok(sigmoid(mlp.forward_row(&row)?[0]))
        })
        .collect()
}

pub fn binarize(probs: &[f64]) -> Vec<bool> {
    probs.iter().map(|&p| p >= 0.5).collect()
}

/// One ray's anchor features, masked (negative anchors zeroed), concatenated
/// in anchor order and projected to a 32-wide ray feature.
pub fn fuse_point_features(feats: &FeatureMatrix, mask: &[bool], proj: &MlpWeights) -> Result<Vec<f64>> {
    ensure_width("point fusion mask length", feats.rows(), mask.len())?;
    ensure_width("point fusion input (K·F)", feats.rows() * feats.cols(), proj.in_width())?;
    ensure_width("point fusion output", RAY_FEATURE_WIDTH, proj.out_width())?;
    let mut concat = Vec::with_capacity(proj.in_width());
    for (row, &keep) in feats.iter_rows().zip(mask) {
        if keep {
            concat.extend_from_slice(row);
        } else {
            concat.extend(std::iter::repeat(0.0).take(row.len()));
        }
    }
    proj.forward_row(&concat)
}

/// All ray features of a level, concatenated in fan order, through a
/// two-hidden-layer MLP to a 128-wide level feature.
pub fn fuse_ray_features(ray_feats: &FeatureMatrix, mlp: &MlpWeights) -> Result<Vec<f64>> {
    ensure_width("ray feature width", RAY_FEATURE_WIDTH, ray_feats.cols())?;
    ensure_width("ray MLP layer count (two hidden + output)", 3, mlp.layers().len())?;
    ensure_width("ray MLP input (N·32)", ray_feats.rows() * RAY_FEATURE_WIDTH, mlp.in_width())?;
    ensure_width("ray MLP output", LEVEL_FEATURE_WIDTH, mlp.out_width())?;
    mlp.forward_row(ray_feats.as_slice())
}

/// `g = fuse(mu_c ⊕ mu_f)`.
pub fn fuse_levels(mu_c: &[f64], mu_f: &[f64], mlp: &MlpWeights) -> Result<Vec<f64>> {
    ensure_width("coarse level width", LEVEL_FEATURE_WIDTH, mu_c.len())?;
    ensure_width("fine level width", LEVEL_FEATURE_WIDTH, mu_f.len())?;
    ensure_width("level fusion input", 2 * LEVEL_FEATURE_WIDTH, mlp.in_width())?;
    let mut x = mu_c.to_vec();
    x.extend_from_slice(mu_f);
    mlp.forward_row(&x)
}

/// Folds `g` into the cluster feature: `proj(f ⊕ g)`, back to `|f|` channels.
pub fn combine_with_cluster(cluster_feat: &[f64], g: &[f64], proj: &MlpWeights) -> Result<Vec<f64>> {
    ensure_width("combine input (f + g)", cluster_feat.len() + g.len(), proj.in_width())?;
    ensure_width("combine output", cluster_feat.len(), proj.out_width())?;
    let mut x = cluster_feat.to_vec();
    x.extend_from_slice(g);
    proj.forward_row(&x)
}

/// Object scale (half box diagonal) from the cluster feature; softplus keeps
/// it positive.
pub fn predict_scale(cluster_feat: &[f64], mlp: &MlpWeights) -> Result<f64> {
    ensure_width("scale MLP output", 1, mlp.out_width())?;
    Ok(softplus(mlp.forward_row(cluster_feat)?[0]))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AnchorLevel {
    Coarse,
    Fine,
}

/// Anchors of one level for one cluster.
#[derive(Clone, Debug, PartialEq)]
pub struct AnchorGrid {
    pub level: AnchorLevel,
    pub n_rays: usize,
    pub per_ray: usize,
    /// Ray-major positions, `n_rays · per_ray` entries.
    pub positions: Vec<Point3>,
    /// One row per anchor, same order as `positions`.
    pub features: FeatureMatrix,
    pub mask: Vec<bool>,
}

impl AnchorGrid {
    pub fn ray_features(&self, n: usize) -> FeatureMatrix {
        let idx: Vec<usize> = (n * self.per_ray..(n + 1) * self.per_ray).collect();
        self.features.select_rows(&idx)
    }

    pub fn ray_mask(&self, n: usize) -> &[bool] {
        &self.mask[n * self.per_ray..(n + 1) * self.per_ray]
    }
}

/// Output of masked fusion for one level: per-ray features and the level vector.
#[derive(Clone, Debug, PartialEq)]
pub struct LevelFusion {
    pub ray_features: FeatureMatrix,
    pub level_feature: Vec<f64>,
}

pub fn fuse_level(grid: &AnchorGrid, point_proj: &MlpWeights, ray_mlp: &MlpWeights) -> Result<LevelFusion> {
    let mut ray_features = FeatureMatrix::zeros(grid.n_rays, RAY_FEATURE_WIDTH);
    for n in 0..grid.n_rays {
        let r = fuse_point_features(&grid.ray_features(n), grid.ray_mask(n), point_proj)?;
        ray_features.row_mut(n).copy_from_slice(&r);
    }
    let level_feature = fuse_ray_features(&ray_features, ray_mlp)?;
    Ok(LevelFusion {
        ray_features,
        level_feature,
    })
}

/// Coarse and fine fusion results plus the fused vector `g`.
#[derive(Clone, Debug, PartialEq)]
pub struct FusedFeature {
    pub coarse: LevelFusion,
    pub fine: LevelFusion,
    pub fused: Vec<f64>,
}

/// Learned blocks of the ray grouping stage.
#[derive(Clone, Debug, PartialEq)]
pub struct RayWeights {
    pub scale: MlpWeights,
    pub coarse_abstraction: MlpWeights,
    pub fine_abstraction: MlpWeights,
    pub coarse_mask: MlpWeights,
    pub fine_mask: MlpWeights,
    pub coarse_point: MlpWeights,
    pub fine_point: MlpWeights,
    pub coarse_ray: MlpWeights,
    pub fine_ray: MlpWeights,
    pub fuse: MlpWeights,
    pub combine: MlpWeights,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RayParams {
    pub polar_count: usize,
    pub ring_multiplier: usize,
    pub coarse_bins: usize,
    pub fine_bins: usize,
    /// Anchor grouping radius as a fraction of the level's bin length.
    pub radius_ratio: f64,
    pub max_group: usize,
}

impl Default for RayParams {
    fn default() -> Self {
        RayParams {
            polar_count: 5,
            ring_multiplier: DEFAULT_RING_MULTIPLIER,
            coarse_bins: 6,
            fine_bins: 12,
            radius_ratio: 0.5,
            max_group: 16,
        }
    }
}

/// Which masks gate fusion.
#[derive(Clone, Copy, Debug)]
pub enum MaskSource<'a> {
    /// Binarized predictions of the mask heads.
    Predicted,
    /// Ground-truth proximity to the given surface points.
    Oracle { surface: &'a [Point3], proximity: f64 },
}

/// Everything the ray stage computes for one cluster.
#[derive(Clone, Debug, PartialEq)]
pub struct RayClusterOutput {
    pub scale: f64,
    pub coarse: AnchorGrid,
    pub fine: AnchorGrid,
    pub coarse_probs: Vec<f64>,
    pub fine_probs: Vec<f64>,
    pub fusion: FusedFeature,
    pub combined: Vec<f64>,
}

fn build_level(
    level: AnchorLevel,
    cloud: &PointCloud,
    center: Point3,
    fan: &RayFan,
    length: f64,
    bins: usize,
    params: &RayParams,
    abstraction: &MlpWeights,
) -> Result<AnchorGrid> {
    let positions = bin_anchors(center, fan, length, bins)?;
    let radius = params.radius_ratio * length / bins as f64;
    let features = anchor_features(cloud, &positions, radius, params.max_group, abstraction)?;
    Ok(AnchorGrid {
        level,
        n_rays: fan.len(),
        per_ray: bins,
        mask: vec![false; positions.len()],
        positions,
        features,
    })
}

/// Runs the full ray stage for one cluster centered at `center` with feature
/// `cluster_feat`, grouping points of `cloud` (the upsampled seeds).
pub fn ray_group_cluster(
    cloud: &PointCloud,
    center: Point3,
    cluster_feat: &[f64],
    fan: &RayFan,
    params: &RayParams,
    w: &RayWeights,
    masks: MaskSource<'_>,
) -> Result<RayClusterOutput> {
    let scale = predict_scale(cluster_feat, &w.scale)?;
    let mut coarse = build_level(AnchorLevel::Coarse, cloud, center, fan, scale, params.coarse_bins, params, &w.coarse_abstraction)?;
    let mut fine = build_level(AnchorLevel::Fine, cloud, center, fan, scale, params.fine_bins, params, &w.fine_abstraction)?;
    let coarse_probs = surface_mask_predict(&coarse.features, cluster_feat, &w.coarse_mask)?;
    let fine_probs = surface_mask_predict(&fine.features, cluster_feat, &w.fine_mask)?;
    match masks {
        MaskSource::Predicted => {
            coarse.mask = binarize(&coarse_probs);
            fine.mask = binarize(&fine_probs);
        }
        MaskSource::Oracle { surface, proximity } => {
            coarse.mask = surface_mask_oracle(&coarse.positions, surface, proximity)?;
            fine.mask = surface_mask_oracle(&fine.positions, surface, proximity)?;
        }
    }
    let c = fuse_level(&coarse, &w.coarse_point, &w.coarse_ray)?;
    let f = fuse_level(&fine, &w.fine_point, &w.fine_ray)?;
    let g = fuse_levels(&c.level_feature, &f.level_feature, &w.fuse)?;
    let combined = combine_with_cluster(cluster_feat, &g, &w.combine)?;
    Ok(RayClusterOutput {
        scale,
        coarse,
        fine,
        coarse_probs,
        fine_probs,
        fusion: FusedFeature {
            coarse: c,
            fine: f,
            fused: g,
        },
        combined,
    })
}
