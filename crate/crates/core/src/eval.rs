//! Axis-aligned IoU, greedy detection matching, all-point average precision
//! and per-class mAP reports.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geom::{AABox, Point3};

/// Short names of the 18 ScanNet detection classes, in label order.
pub const CLASS_NAMES: [&str; 18] = [
    "cbnt", "bed", "chair", "sofa", "table", "door", "wdw", "bkslf", "pic", "cntr", "desk",
    "crtn", "refrg", "shcrtn", "toilet", "sink", "tub", "gbin",
];

pub const NUM_CLASSES: usize = CLASS_NAMES.len();

pub const DEFAULT_IOU_THRESHOLD: f64 = 0.25;

/// One scored detection; the class is the box's class.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Detection {
    pub bbox: AABox,
    pub score: f64,
}

impl Detection {
    pub fn new(bbox: AABox, score: f64) -> Result<Self> {
        if !score.is_finite() {
            return Err(Error::NonFinite("detection score".into()));
        }
        Ok(Detection { bbox, score })
    }

    pub fn class_id(&self) -> usize {
        self.bbox.class_id
    }
}

pub fn iou_aabb(a: &AABox, b: &AABox) -> f64 {
    let (alo, ahi) = (a.min_corner().to_array(), a.max_corner().to_array());
    let (blo, bhi) = (b.min_corner().to_array(), b.max_corner().to_array());
    let mut inter = 1.0;
    for k in 0..3 {
        let e = ahi[k].min(bhi[k]) - alo[k].max(blo[k]);
        if e <= 0.0 {
            return 0.0;
        }
        inter *= e;
    }
    inter / (a.volume() + b.volume() - inter)
}

fn box_key_cmp(a: &AABox, b: &AABox) -> Ordering {
    a.center
        .lex_cmp(&b.center)
        .then_with(|| Point3::from_array(a.size).lex_cmp(&Point3::from_array(b.size)))
}

/// Detection indices by descending score. Equal scores fall back to box
/// geometry so the ranking does not depend on input order.
pub fn score_order(dets: &[Detection]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&i, &j| {
        dets[j]
            .score
            .total_cmp(&dets[i].score)
            .then_with(|| box_key_cmp(&dets[i].bbox, &dets[j].bbox))
    });
    order
}

/// Greedy score-ordered matching within one class. Returns TP flags in
/// [`score_order`]. Each detection takes its best-IoU unmatched ground truth
/// (lowest index on ties) and is a TP iff that IoU reaches `iou_thresh`.
pub fn match_detections(dets: &[Detection], gts: &[AABox], iou_thresh: f64) -> Vec<bool> {
    let mut taken = vec![false; gts.len()];
    score_order(dets)
        .into_iter()
        .map(|d| {
            let mut best: Option<(usize, f64)> = None;
            for (g, gt) in gts.iter().enumerate() {
                if taken[g] {
                    continue;
                }
                let iou = iou_aabb(&dets[d].bbox, gt);
                if best.map_or(true, |(_, b)| iou > b) {
                    best = Some((g, iou));
                }
            }
            match best {
                Some((g, iou)) if iou >= iou_thresh => {
                    taken[g] = true;
                    true
                }
                _ => false,
            }
        })
        .collect()
}

/// All-point interpolated AP: every true positive adds `1/num_gt` recall at
/// the best precision reached at that rank or later.
pub fn average_precision(flags: &[bool], num_gt: usize) -> f64 {
    if num_gt == 0 || flags.is_empty() {
        return 0.0;
    }
    let mut tp = 0usize;
    let precision: Vec<f64> = flags
        .iter()
        .enumerate()
        .map(|(rank, &f)| {
            tp += f as usize;
            tp as f64 / (rank + 1) as f64
        })
        .collect();
    let mut envelope = precision;
    for i in (0..envelope.len().saturating_sub(1)).rev() {
        if envelope[i + 1] > envelope[i] {
            envelope[i] = envelope[i + 1];
        }
    }
    flags
        .iter()
        .zip(&envelope)
        .filter(|(&f, _)| f)
        .map(|(_, &p)| p / num_gt as f64)
        .sum()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ClassCounts {
    pub num_gt: usize,
    pub num_det: usize,
    pub true_positives: usize,
}

/// Per-class AP and their mean over classes that have ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub per_class_ap: BTreeMap<usize, f64>,
    pub map_value: f64,
    pub counts: BTreeMap<usize, ClassCounts>,
    pub iou_threshold: f64,
}

impl EvalReport {
    /// Builds a report from known per-class AP values; every listed class
    /// counts as present.
    pub fn from_class_aps(aps: &[(usize, f64)], iou_threshold: f64) -> Self {
        let per_class_ap: BTreeMap<usize, f64> = aps.iter().copied().collect();
        let map_value = if per_class_ap.is_empty() {
            0.0
        } else {
            per_class_ap.values().sum::<f64>() / per_class_ap.len() as f64
        };
        let counts = per_class_ap
            .keys()
            .map(|&c| {
                (
                    c,
                    ClassCounts {
                        num_gt: 1,
                        ..Default::default()
                    },
                )
            })
            .collect();
        EvalReport {
            per_class_ap,
            map_value,
            counts,
            iou_threshold,
        }
    }

    /// Tab-separated table: header, mAP row, one row per class. Values are
    /// percentages with one decimal.
    pub fn to_table(&self) -> String {
        RunTable {
            runs: vec![self.clone()],
            with_summary: false,
        }
        .render()
    }
}

/// Evaluates detections of all classes against ground truth.
pub fn map_at(dets: &[Detection], gts: &[AABox], iou_thresh: f64) -> EvalReport {
    let mut classes: Vec<usize> = (0..NUM_CLASSES).collect();
    classes.extend(dets.iter().map(|d| d.class_id()).chain(gts.iter().map(|g| g.class_id)));
    classes.sort_unstable();
    classes.dedup();

    let mut per_class_ap = BTreeMap::new();
    let mut counts = BTreeMap::new();
    for c in classes {
        let cd: Vec<Detection> = dets.iter().copied().filter(|d| d.class_id() == c).collect();
        let cg: Vec<AABox> = gts.iter().copied().filter(|g| g.class_id == c).collect();
        let flags = match_detections(&cd, &cg, iou_thresh);
        per_class_ap.insert(c, average_precision(&flags, cg.len()));
        counts.insert(
            c,
            ClassCounts {
                num_gt: cg.len(),
                num_det: cd.len(),
                true_positives: flags.iter().filter(|&&f| f).count(),
            },
        );
    }
    let present: Vec<f64> = per_class_ap
        .iter()
        .filter(|(c, _)| counts[*c].num_gt > 0)
        .map(|(_, &ap)| ap)
        .collect();
    let map_value = if present.is_empty() {
        0.0
    } else {
        present.iter().sum::<f64>() / present.len() as f64
    };
    EvalReport {
        per_class_ap,
        map_value,
        counts,
        iou_threshold: iou_thresh,
    }
}

pub fn class_name(c: usize) -> String {
    CLASS_NAMES.get(c).map_or_else(|| format!("class{c}"), |s| s.to_string())
}

/// Several runs side by side (`R1..Rn`), optionally followed by `max` and
/// `avg` columns computed over the runs.
#[derive(Clone, Debug)]
pub struct RunTable {
    pub runs: Vec<EvalReport>,
    pub with_summary: bool,
}

impl RunTable {
    fn row_values(&self, pick: impl Fn(&EvalReport) -> Option<f64>) -> Vec<Option<f64>> {
        let mut vals: Vec<Option<f64>> = self.runs.iter().map(&pick).collect();
        if self.with_summary {
            let known: Vec<f64> = vals.iter().flatten().copied().collect();
            if known.is_empty() {
                vals.extend([None, None]);
            } else {
                vals.push(Some(known.iter().copied().fold(f64::NEG_INFINITY, f64::max)));
                vals.push(Some(known.iter().sum::<f64>() / known.len() as f64));
            }
        }
        vals
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        let mut header = vec![String::new()];
        if self.runs.len() == 1 && !self.with_summary {
            header.push("AP".into());
        } else {
            header.extend((1..=self.runs.len()).map(|i| format!("R{i}")));
        }
        if self.with_summary {
            header.extend(["max".to_string(), "avg".to_string()]);
        }
        let _ = writeln!(s, "{}", header.join("\t"));
        let mut emit = |name: &str, vals: Vec<Option<f64>>| {
            let cells: Vec<String> = vals
                .into_iter()
                .map(|v| v.map_or_else(|| "-".to_string(), |v| format!("{:.1}", 100.0 * v)))
                .collect();
            let _ = writeln!(s, "{name}\t{}", cells.join("\t"));
        };
        emit("mAP", self.row_values(|r| Some(r.map_value)));
        let mut classes: Vec<usize> = (0..NUM_CLASSES).collect();
        for r in &self.runs {
            classes.extend(r.per_class_ap.keys().copied());
        }
        classes.sort_unstable();
        classes.dedup();
        for c in classes {
            emit(&class_name(c), self.row_values(|r| r.per_class_ap.get(&c).copied()));
        }
        s
    }
}

/// Writes `report` as a tab-separated table.
pub fn report(eval: &EvalReport, path: &Path) -> Result<()> {
    crate::io::write_string(path, &eval.to_table())
}

/// Detection lines `cx cy cz sx sy sz class_id score`.
pub fn format_detections(dets: &[Detection]) -> String {
    dets.iter()
        .map(|d| {
            let b = &d.bbox;
            format!(
                "{} {} {} {} {} {} {} {}\n",
                b.center.x, b.center.y, b.center.z, b.size[0], b.size[1], b.size[2], b.class_id, d.score
            )
        })
        .collect()
}

pub fn parse_detections(path: &Path, text: &str) -> Result<Vec<Detection>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>().map_err(|_| err(format!("not a number: `{t}`"))))
            .collect::<Result<_>>()?;
        if vals.len() != 8 {
            return Err(err(format!("detection needs 8 values, found {}", vals.len())));
        }
        if vals[6] < 0.0 || vals[6].fract() != 0.0 {
            return Err(err(format!("class id `{}` is not a non-negative integer", vals[6])));
        }
        let bbox = AABox::new(
            Point3::new(vals[0], vals[1], vals[2]),
            [vals[3], vals[4], vals[5]],
            vals[6] as usize,
        )
        .map_err(|e| err(e.to_string()))?;
        out.push(Detection::new(bbox, vals[7]).map_err(|e| err(e.to_string()))?);
    }
    Ok(out)
}
