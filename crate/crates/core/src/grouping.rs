//! Set abstraction, feature propagation, vote offsets and vote clustering.

use std::collections::HashMap;

use crate::error::{ensure_width, Error, Result};
use crate::geom::{FeatureMatrix, Point3, PointCloud};
use crate::nn::{channel_max_pool, MlpWeights};
use crate::sampling::fps_positions;

/// Abstracted points (seeds) with one feature row each.
#[derive(Clone, Debug, PartialEq)]
pub struct SeedSet {
    pub positions: Vec<Point3>,
    pub features: FeatureMatrix,
}

impl SeedSet {
    pub fn new(positions: Vec<Point3>, features: FeatureMatrix) -> Result<Self> {
        if positions.is_empty() {
            return Err(Error::invalid("seed set must be non-empty"));
        }
        ensure_width("seed feature rows", positions.len(), features.rows())?;
        Ok(SeedSet {
            positions,
            features,
        })
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// View the seeds as a point cloud (for grouping around anchors).
    pub fn to_cloud(&self) -> Result<PointCloud> {
        PointCloud::new(self.positions.clone(), self.features.clone())
    }
}

/// Seeds shifted by predicted offsets in space and feature.
#[derive(Clone, Debug, PartialEq)]
pub struct VoteSet {
    pub positions: Vec<Point3>,
    pub features: FeatureMatrix,
    pub source_seed: Vec<usize>,
}

impl VoteSet {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

/// Vote clusters: one center vote per cluster plus its member votes.
#[derive(Clone, Debug, PartialEq)]
pub struct ClusterSet {
    pub centers: Vec<Point3>,
    /// Index (into the vote set) of the vote each cluster is centered on.
    pub center_votes: Vec<usize>,
    pub features: FeatureMatrix,
    pub member_votes: Vec<Vec<usize>>,
}

impl ClusterSet {
    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }
}

/// Uniform hash grid with cell edge equal to the query radius.
struct CellGrid {
    cell: f64,
    cells: HashMap<(i64, i64, i64), Vec<usize>>,
}

impl CellGrid {
    fn new(points: &[Point3], cell: f64) -> Self {
        let mut cells: HashMap<(i64, i64, i64), Vec<usize>> = HashMap::new();
        for (i, &p) in points.iter().enumerate() {
            cells.entry(Self::key(p, cell)).or_default().push(i);
        }
        CellGrid { cell, cells }
    }

    fn key(p: Point3, cell: f64) -> (i64, i64, i64) {
        (
            (p.x / cell).floor() as i64,
            (p.y / cell).floor() as i64,
            (p.z / cell).floor() as i64,
        )
    }

    fn for_each_near(&self, c: Point3, mut f: impl FnMut(usize)) {
        let (kx, ky, kz) = Self::key(c, self.cell);
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    if let Some(ids) = self.cells.get(&(kx + dx, ky + dy, kz + dz)) {
                        ids.iter().copied().for_each(&mut f);
                    }
                }
            }
        }
    }
}

fn sorted_neighbors(
    grid: &CellGrid,
    points: &[Point3],
    center: Point3,
    r2: f64,
    max_group: usize,
) -> Vec<usize> {
    let mut hits: Vec<(f64, usize)> = Vec::new();
    grid.for_each_near(center, |i| {
        let d = points[i].dist2(center);
        if d <= r2 {
            hits.push((d, i));
        }
    });
    hits.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    hits.truncate(max_group);
    hits.into_iter().map(|(_, i)| i).collect()
}

/// Indices of points within `radius` of each center (boundary inclusive),
/// nearest first with index tie-breaking, truncated at `max_group`.
pub fn ball_query_positions(
    points: &[Point3],
    centers: &[Point3],
    radius: f64,
    max_group: usize,
) -> Result<Vec<Vec<usize>>> {
    if !(radius > 0.0) || !radius.is_finite() {
        return Err(Error::invalid(format!("ball query radius must be positive, got {radius}")));
    }
    if max_group < 1 {
        return Err(Error::invalid("max_group must be at least 1"));
    }
    let grid = CellGrid::new(points, radius);
    let r2 = radius * radius;
    Ok(centers
        .iter()
        .map(|&c| sorted_neighbors(&grid, points, c, r2, max_group))
        .collect())
}

pub fn ball_query(
    cloud: &PointCloud,
    centers: &[Point3],
    radius: f64,
    max_group: usize,
) -> Result<Vec<Vec<usize>>> {
    ball_query_positions(cloud.positions(), centers, radius, max_group)
}

/// Runs `mlp` over every member row and max-pools channel-wise. An empty
/// group pools to the zero vector.
pub fn pool_members(members: &FeatureMatrix, mlp: &MlpWeights) -> Result<Vec<f64>> {
    if members.rows() == 0 {
        ensure_width("pooled member width", mlp.in_width(), members.cols())?;
        return Ok(vec![0.0; mlp.out_width()]);
    }
    channel_max_pool(&mlp.forward(members)?)
}

/// PointNet-style abstraction around arbitrary centers: group by ball query,
/// express members relative to their center, concatenate point features,
/// apply `mlp` per member and max-pool.
pub fn abstract_at(
    cloud: &PointCloud,
    centers: &[Point3],
    radius: f64,
    max_group: usize,
    mlp: &MlpWeights,
) -> Result<FeatureMatrix> {
    let c = cloud.channels();
    ensure_width("set abstraction MLP input (3 + C)", 3 + c, mlp.in_width())?;
    let groups = ball_query(cloud, centers, radius, max_group)?;
    let mut out = FeatureMatrix::zeros(centers.len(), mlp.out_width());
    let mut members = Vec::new();
    for (g, (center, group)) in centers.iter().zip(&groups).enumerate() {
        members.clear();
        for &i in group {
            let rel = cloud.position(i) - *center;
            members.extend_from_slice(&[rel.x, rel.y, rel.z]);
            members.extend_from_slice(cloud.features().row(i));
        }
        let m = FeatureMatrix::from_vec(group.len(), 3 + c, std::mem::take(&mut members))?;
        out.row_mut(g).copy_from_slice(&pool_members(&m, mlp)?);
        members = m.into_vec();
    }
    Ok(out)
}

/// Abstraction around sampled cloud points; the sampled points become seeds.
pub fn set_abstraction(
    cloud: &PointCloud,
    sample_indices: &[usize],
    radius: f64,
    max_group: usize,
    mlp: &MlpWeights,
) -> Result<SeedSet> {
    let centers: Vec<Point3> = sample_indices.iter().map(|&i| cloud.position(i)).collect();
    let features = abstract_at(cloud, &centers, radius, max_group, mlp)?;
    SeedSet::new(centers, features)
}

pub const PROPAGATION_EPS: f64 = 1e-8;

/// Normalized inverse-distance weights of the `k` nearest coarse points.
/// A coincident coarse point takes the full weight.
pub fn interpolation_weights(coarse: &[Point3], target: Point3, k: usize) -> Vec<(usize, f64)> {
    let mut d: Vec<(f64, usize)> = coarse
        .iter()
        .enumerate()
        .map(|(i, p)| (p.dist2(target), i))
        .collect();
    let k = k.min(d.len());
    if k < d.len() {
        d.select_nth_unstable_by(k - 1, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        d.truncate(k);
    }
    d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    if d[0].0 == 0.0 {
        return vec![(d[0].1, 1.0)];
    }
    let inv: Vec<f64> = d.iter().map(|(d2, _)| 1.0 / (d2.sqrt() + PROPAGATION_EPS)).collect();
    let total: f64 = inv.iter().sum();
    d.iter().zip(inv).map(|(&(_, i), w)| (i, w / total)).collect()
}

/// Interpolates coarse seed features onto denser target positions.
pub fn propagate_features(coarse: &SeedSet, targets: &[Point3], k: usize) -> Result<FeatureMatrix> {
    if k < 1 || k > coarse.len() {
        return Err(Error::invalid(format!(
            "propagation k = {k} must be in 1..={}",
            coarse.len()
        )));
    }
    let mut out = FeatureMatrix::zeros(targets.len(), coarse.features.cols());
    for (t, &target) in targets.iter().enumerate() {
        let row = out.row_mut(t);
        for (i, w) in interpolation_weights(&coarse.positions, target, k) {
            for (o, &f) in row.iter_mut().zip(coarse.features.row(i)) {
                *o += w * f;
            }
        }
    }
    Ok(out)
}

/// Adds spatial and feature offsets to each seed, producing one vote per seed.
pub fn apply_votes(
    seeds: &SeedSet,
    offsets_xyz: &FeatureMatrix,
    offsets_feat: &FeatureMatrix,
) -> Result<VoteSet> {
    let m = seeds.len();
    ensure_width("spatial offset rows", m, offsets_xyz.rows())?;
    ensure_width("spatial offset width", 3, offsets_xyz.cols())?;
    ensure_width("feature offset rows", m, offsets_feat.rows())?;
    ensure_width("feature offset width", seeds.features.cols(), offsets_feat.cols())?;
    let positions = seeds
        .positions
        .iter()
        .zip(offsets_xyz.iter_rows())
        .map(|(&p, d)| p + Point3::new(d[0], d[1], d[2]))
        .collect();
    let mut features = seeds.features.clone();
    features.add_assign(offsets_feat)?;
    Ok(VoteSet {
        positions,
        features,
        source_seed: (0..m).collect(),
    })
}

/// Picks `k` cluster centers by FPS over vote positions and gathers every vote
/// within `radius` of each (nearest first). The cluster feature is the
/// channel-wise max over member features, after `mlp` when one is given.
pub fn cluster_votes(
    votes: &VoteSet,
    k: usize,
    radius: f64,
    mlp: Option<&MlpWeights>,
) -> Result<ClusterSet> {
    let m = votes.len();
    if k < 1 || k > m {
        return Err(Error::invalid(format!("cluster count {k} outside 1..={m}")));
    }
    let center_votes = fps_positions(&votes.positions, k)?;
    let centers: Vec<Point3> = center_votes.iter().map(|&i| votes.positions[i]).collect();
    let mut member_votes = ball_query_positions(&votes.positions, &centers, radius, m)?;
    for (members, &own) in member_votes.iter_mut().zip(&center_votes) {
        if !members.contains(&own) {
            members.insert(0, own);
        }
    }
    let width = mlp.map_or(votes.features.cols(), |w| w.out_width());
    let mut features = FeatureMatrix::zeros(k, width);
    for (c, members) in member_votes.iter().enumerate() {
        let rows = votes.features.select_rows(members);
        let pooled = match mlp {
            Some(w) => channel_max_pool(&w.forward(&rows)?)?,
            None => channel_max_pool(&rows)?,
        };
        features.row_mut(c).copy_from_slice(&pooled);
    }
    Ok(ClusterSet {
        centers,
        center_votes,
        features,
        member_votes,
    })
}
