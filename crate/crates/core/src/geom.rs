//! Domain types shared by every stage: points, clouds, boxes and dense
//! feature matrices.

use std::ops::{Add, Mul, Sub};

use crate::error::{Error, Result};

/// A location in scene space, in meters.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub const ORIGIN: Point3 = Point3 {
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Point3 { x, y, z }
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Point3::new(a[0], a[1], a[2])
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn dot(self, other: Point3) -> f64 {
        self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn dist2(self, other: Point3) -> f64 {
        (self - other).dot(self - other)
    }

    pub fn dist(self, other: Point3) -> f64 {
        self.dist2(other).sqrt()
    }

    /// Lexicographic (x, y, z) ordering under IEEE total order.
    pub fn lex_cmp(&self, other: &Point3) -> std::cmp::Ordering {
        self.x
            .total_cmp(&other.x)
            .then(self.y.total_cmp(&other.y))
            .then(self.z.total_cmp(&other.z))
    }
}

impl Add for Point3 {
    type Output = Point3;
    fn add(self, o: Point3) -> Point3 {
        Point3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Sub for Point3 {
    type Output = Point3;
    fn sub(self, o: Point3) -> Point3 {
        Point3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f64> for Point3 {
    type Output = Point3;
    fn mul(self, s: f64) -> Point3 {
        Point3::new(self.x * s, self.y * s, self.z * s)
    }
}

/// Dense row-major matrix of reals. Used for per-point features, pooled
/// features, offsets and layer weights alike.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl FeatureMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        FeatureMatrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::dim("matrix data length", rows * cols, data.len()));
        }
        Ok(FeatureMatrix { rows, cols, data })
    }

    /// Builds a matrix from equal-length rows. An empty slice gives a 0×0 matrix.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::dim("matrix row width", cols, r.len()));
            }
            data.extend_from_slice(r);
        }
        Ok(FeatureMatrix {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn single_row(row: Vec<f64>) -> Self {
        FeatureMatrix {
            rows: 1,
            cols: row.len(),
            data: row,
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = FeatureMatrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        (0..self.rows).map(move |i| self.row(i))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Gathers the listed rows, in the listed order.
    pub fn select_rows(&self, indices: &[usize]) -> FeatureMatrix {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        FeatureMatrix {
            rows: indices.len(),
            cols: self.cols,
            data,
        }
    }

    /// Horizontal concatenation `[self | other]`.
    pub fn hconcat(&self, other: &FeatureMatrix) -> Result<FeatureMatrix> {
        if self.rows != other.rows {
            return Err(Error::dim("hconcat row count", self.rows, other.rows));
        }
        let cols = self.cols + other.cols;
        let mut data = Vec::with_capacity(self.rows * cols);
        for i in 0..self.rows {
            data.extend_from_slice(self.row(i));
            data.extend_from_slice(other.row(i));
        }
        Ok(FeatureMatrix {
            rows: self.rows,
            cols,
            data,
        })
    }

    pub fn transpose(&self) -> FeatureMatrix {
        let mut out = FeatureMatrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    /// Matrix product `self · rhs`.
    pub fn matmul(&self, rhs: &FeatureMatrix) -> Result<FeatureMatrix> {
        if self.cols != rhs.rows {
            return Err(Error::dim("matmul inner width", self.cols, rhs.rows));
        }
        let mut out = FeatureMatrix::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * rhs.cols..(i + 1) * rhs.cols];
            for (k, &a) in self.row(i).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for (o, &b) in out_row.iter_mut().zip(rhs.row(k)) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// Product `selfᵀ · rhs` without materializing the transpose.
    pub fn t_matmul(&self, rhs: &FeatureMatrix) -> Result<FeatureMatrix> {
        if self.rows != rhs.rows {
            return Err(Error::dim("transposed matmul rows", self.rows, rhs.rows));
        }
        let mut out = FeatureMatrix::zeros(self.cols, rhs.cols);
        for r in 0..self.rows {
            let b = rhs.row(r);
            for (i, &a) in self.row(r).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let out_row = &mut out.data[i * rhs.cols..(i + 1) * rhs.cols];
                for (o, &bv) in out_row.iter_mut().zip(b) {
                    *o += a * bv;
                }
            }
        }
        Ok(out)
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|v| *v *= s);
    }

    pub fn add_assign(&mut self, other: &FeatureMatrix) -> Result<()> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::dim(
                "elementwise add shape",
                self.rows * self.cols,
                other.rows * other.cols,
            ));
        }
        self.data
            .iter_mut()
            .zip(&other.data)
            .for_each(|(a, b)| *a += b);
        Ok(())
    }

    /// Copies a column range into a new matrix.
    pub fn slice_cols(&self, start: usize, end: usize) -> FeatureMatrix {
        let cols = end - start;
        let mut data = Vec::with_capacity(self.rows * cols);
        for i in 0..self.rows {
            data.extend_from_slice(&self.row(i)[start..end]);
        }
        FeatureMatrix {
            rows: self.rows,
            cols,
            data,
        }
    }
}

impl std::ops::Index<(usize, usize)> for FeatureMatrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for FeatureMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

/// Scene points with per-point feature channels, stored column-separated.
#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    positions: Vec<Point3>,
    features: FeatureMatrix,
}

impl PointCloud {
    pub fn new(positions: Vec<Point3>, features: FeatureMatrix) -> Result<Self> {
        if positions.is_empty() {
            return Err(Error::invalid("point cloud must contain at least one point"));
        }
        if features.rows() != positions.len() {
            return Err(Error::dim(
                "feature rows vs point count",
                positions.len(),
                features.rows(),
            ));
        }
        if !positions.iter().all(|p| p.is_finite()) {
            return Err(Error::NonFinite("point positions".into()));
        }
        if !features.is_finite() {
            return Err(Error::NonFinite("point features".into()));
        }
        Ok(PointCloud {
            positions,
            features,
        })
    }

    /// A cloud with no feature channels.
    pub fn from_positions(positions: Vec<Point3>) -> Result<Self> {
        let n = positions.len();
        PointCloud::new(positions, FeatureMatrix::zeros(n, 0))
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.features.cols()
    }

    pub fn positions(&self) -> &[Point3] {
        &self.positions
    }

    pub fn features(&self) -> &FeatureMatrix {
        &self.features
    }

    pub fn position(&self, i: usize) -> Point3 {
        self.positions[i]
    }

    /// Subset of the cloud in the given index order.
    pub fn select(&self, indices: &[usize]) -> PointCloud {
        PointCloud {
            positions: indices.iter().map(|&i| self.positions[i]).collect(),
            features: self.features.select_rows(indices),
        }
    }

    pub fn into_parts(self) -> (Vec<Point3>, FeatureMatrix) {
        (self.positions, self.features)
    }
}

/// Reorders a cloud lexicographically by (x, y, z); ties keep original order.
///
/// Every index-based tie-break downstream refers to this order.
pub fn canonical_sort(cloud: &PointCloud) -> PointCloud {
    let mut order: Vec<usize> = (0..cloud.len()).collect();
    order.sort_by(|&a, &b| cloud.positions[a].lex_cmp(&cloud.positions[b]));
    cloud.select(&order)
}

/// Axis-aligned box given by center and full extents.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AABox {
    pub center: Point3,
    pub size: [f64; 3],
    pub class_id: usize,
}

impl AABox {
    pub fn new(center: Point3, size: [f64; 3], class_id: usize) -> Result<Self> {
        if !center.is_finite() || !size.iter().all(|s| s.is_finite()) {
            return Err(Error::NonFinite("box parameters".into()));
        }
        if size.iter().any(|&s| s <= 0.0) {
            return Err(Error::invalid(format!(
                "box size components must be positive, got {size:?}"
            )));
        }
        Ok(AABox {
            center,
            size,
            class_id,
        })
    }

    pub fn min_corner(&self) -> Point3 {
        self.center - Point3::from_array(self.size) * 0.5
    }

    pub fn max_corner(&self) -> Point3 {
        self.center + Point3::from_array(self.size) * 0.5
    }

    pub fn volume(&self) -> f64 {
        self.size[0] * self.size[1] * self.size[2]
    }

    /// Boundary-inclusive containment.
    pub fn contains(&self, p: Point3) -> bool {
        let lo = self.min_corner();
        let hi = self.max_corner();
        p.x >= lo.x && p.x <= hi.x && p.y >= lo.y && p.y <= hi.y && p.z >= lo.z && p.z <= hi.z
    }

    /// Distance from an interior point to the nearest face; negative outside.
    pub fn face_distance(&self, p: Point3) -> f64 {
        let lo = self.min_corner().to_array();
        let hi = self.max_corner().to_array();
        let p = p.to_array();
        (0..3)
            .map(|a| (p[a] - lo[a]).min(hi[a] - p[a]))
            .fold(f64::INFINITY, f64::min)
    }
}

/// Half the length of the box's space diagonal (the object scale target).
pub fn half_diagonal(b: &AABox) -> f64 {
    let [sx, sy, sz] = b.size;
    0.5 * (sx * sx + sy * sy + sz * sz).sqrt()
}
