//! Farthest-point sampling and foreground-biased sampling.

use crate::error::{Error, Result};
use crate::geom::{AABox, Point3, PointCloud};

/// Per-point foreground probabilities in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ForegroundScores(Vec<f64>);

impl ForegroundScores {
    pub fn new(scores: Vec<f64>) -> Result<Self> {
        if let Some(bad) = scores.iter().find(|s| !(0.0..=1.0).contains(*s)) {
            return Err(Error::invalid(format!("foreground score {bad} outside [0, 1]")));
        }
        Ok(ForegroundScores(scores))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// The top-κ split of a score ranking.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitSample {
    pub foreground_indices: Vec<usize>,
    pub background_indices: Vec<usize>,
    pub kappa: usize,
}

/// Greedy farthest-point selection over positions.
///
/// Starts at index 0 and repeatedly adds the unselected point with the largest
/// distance to the selected set; equal distances go to the lowest index.
/// Returns indices in selection order.
pub fn fps_positions(positions: &[Point3], m: usize) -> Result<Vec<usize>> {
    let n = positions.len();
    if m < 1 || m > n {
        return Err(Error::invalid(format!("fps sample count {m} outside 1..={n}")));
    }
    let mut selected = vec![false; n];
    let mut min_d2 = vec![f64::INFINITY; n];
    let mut order = Vec::with_capacity(m);
    let mut current = 0usize;
    loop {
        selected[current] = true;
        order.push(current);
        if order.len() == m {
            break;
        }
        let c = positions[current];
        let mut best = usize::MAX;
        let mut best_d = f64::NEG_INFINITY;
        for (i, p) in positions.iter().enumerate() {
            if selected[i] {
                continue;
            }
            let d = p.dist2(c);
            if d < min_d2[i] {
                min_d2[i] = d;
            }
            if min_d2[i] > best_d {
                best_d = min_d2[i];
                best = i;
            }
        }
        current = best;
    }
    Ok(order)
}

/// Farthest-point sampling of `m` points of a (canonically sorted) cloud.
pub fn fps(cloud: &PointCloud, m: usize) -> Result<Vec<usize>> {
    fps_positions(cloud.positions(), m)
}

/// Ground-truth foreground labels: 1 inside any box (faces included), else 0.
pub fn oracle_foreground_scores(cloud: &PointCloud, boxes: &[AABox]) -> ForegroundScores {
    ForegroundScores(
        cloud
            .positions()
            .iter()
            .map(|&p| if boxes.iter().any(|b| b.contains(p)) { 1.0 } else { 0.0 })
            .collect(),
    )
}

/// Ranks points by descending score (ties by ascending index) and splits
/// the ranking after the first `kappa`.
pub fn split_by_score(scores: &ForegroundScores, kappa: usize) -> Result<SplitSample> {
    let n = scores.len();
    if kappa > n {
        return Err(Error::invalid(format!("kappa {kappa} exceeds point count {n}")));
    }
    let s = scores.as_slice();
    let mut ranked: Vec<usize> = (0..n).collect();
    ranked.sort_by(|&a, &b| s[b].total_cmp(&s[a]).then(a.cmp(&b)));
    let background_indices = ranked.split_off(kappa);
    Ok(SplitSample {
        foreground_indices: ranked,
        background_indices,
        kappa,
    })
}

fn fps_subset(cloud: &PointCloud, subset: &[usize], m: usize) -> Result<Vec<usize>> {
    if m == 0 {
        return Ok(Vec::new());
    }
    let mut ordered = subset.to_vec();
    ordered.sort_unstable();
    let pts: Vec<Point3> = ordered.iter().map(|&i| cloud.position(i)).collect();
    Ok(fps_positions(&pts, m)?.into_iter().map(|j| ordered[j]).collect())
}

/// Foreground-biased sampling: farthest-point sampling run separately on the
/// top-κ ranked points (`m_fore` samples) and on the rest (`m - m_fore`),
/// concatenated foreground first.
///
/// Each subset is sampled in canonical index order, so its FPS starts at the
/// subset's lowest index.
pub fn fbs(
    cloud: &PointCloud,
    scores: &ForegroundScores,
    m: usize,
    kappa: usize,
    m_fore: usize,
) -> Result<Vec<usize>> {
    let n = cloud.len();
    if scores.len() != n {
        return Err(Error::dim("foreground scores", n, scores.len()));
    }
    if kappa > n {
        return Err(Error::invalid(format!("kappa {kappa} exceeds point count {n}")));
    }
    if m_fore > m.min(kappa) {
        return Err(Error::invalid(format!(
            "m_fore {m_fore} exceeds min(m = {m}, kappa = {kappa})"
        )));
    }
    if m - m_fore > n - kappa {
        return Err(Error::invalid(format!(
            "background sample count {} exceeds background size {}",
            m - m_fore,
            n - kappa
        )));
    }
    let split = split_by_score(scores, kappa)?;
    let mut out = fps_subset(cloud, &split.foreground_indices, m_fore)?;
    out.extend(fps_subset(cloud, &split.background_indices, m - m_fore)?);
    Ok(out)
}
