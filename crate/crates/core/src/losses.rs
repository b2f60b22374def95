//! Training-objective terms and their analytic gradients.

use crate::error::{ensure_width, Error, Result};
use crate::geom::FeatureMatrix;
use crate::nn::{clamp_prob, cross_entropy, smooth_l1, smooth_l1_grad, PROB_CLAMP};

/// Non-negative weights of every loss term.
#[derive(Clone, Debug, PartialEq)]
pub struct LossWeights {
    pub vote_reg: f64,
    pub fbs: f64,
    pub rbfg: f64,
    pub obj_cls: f64,
    pub box_reg: f64,
    pub sem_cls: f64,
    pub scale_reg: f64,
    pub c_cls: f64,
    pub f_cls: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights::uniform(1.0)
    }
}

impl LossWeights {
    pub fn uniform(v: f64) -> Self {
        LossWeights {
            vote_reg: v,
            fbs: v,
            rbfg: v,
            obj_cls: v,
            box_reg: v,
            sem_cls: v,
            scale_reg: v,
            c_cls: v,
            f_cls: v,
        }
    }

    fn values(&self) -> [(&'static str, f64); 9] {
        [
            ("vote_reg", self.vote_reg),
            ("fbs", self.fbs),
            ("rbfg", self.rbfg),
            ("obj_cls", self.obj_cls),
            ("box", self.box_reg),
            ("sem_cls", self.sem_cls),
            ("scale_reg", self.scale_reg),
            ("c_cls", self.c_cls),
            ("f_cls", self.f_cls),
        ]
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in self.values() {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::invalid(format!("loss weight {name} must be a finite value >= 0, got {v}")));
            }
        }
        Ok(())
    }

    /// Every weight multiplied by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        LossWeights {
            vote_reg: self.vote_reg * c,
            fbs: self.fbs * c,
            rbfg: self.rbfg * c,
            obj_cls: self.obj_cls * c,
            box_reg: self.box_reg * c,
            sem_cls: self.sem_cls * c,
            scale_reg: self.scale_reg * c,
            c_cls: self.c_cls * c,
            f_cls: self.f_cls * c,
        }
    }
}

/// A masked mean; `no_positives` flags the defined-zero case.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MaskedLoss {
    pub value: f64,
    pub no_positives: bool,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum VoteNorm {
    #[default]
    Euclidean,
    L1,
}

fn positives(mask: &[bool]) -> usize {
    mask.iter().filter(|&&m| m).count()
}

/// Mean offset error over on-object seeds.
pub fn vote_reg_loss(
    pred: &FeatureMatrix,
    gt: &FeatureMatrix,
    on_object: &[bool],
    norm: VoteNorm,
) -> Result<MaskedLoss> {
    check_offsets(pred, gt, on_object)?;
    let m_pos = positives(on_object);
    if m_pos == 0 {
        return Ok(MaskedLoss {
            value: 0.0,
            no_positives: true,
        });
    }
    let sum: f64 = (0..pred.rows())
        .filter(|&i| on_object[i])
        .map(|i| {
            let d = pred.row(i).iter().zip(gt.row(i)).map(|(a, b)| a - b);
            match norm {
                VoteNorm::Euclidean => d.map(|v| v * v).sum::<f64>().sqrt(),
                VoteNorm::L1 => d.map(f64::abs).sum(),
            }
        })
        .sum();
    Ok(MaskedLoss {
        value: sum / m_pos as f64,
        no_positives: false,
    })
}

fn check_offsets(pred: &FeatureMatrix, gt: &FeatureMatrix, on_object: &[bool]) -> Result<()> {
    ensure_width("vote offset width", 3, pred.cols())?;
    ensure_width("ground-truth offset width", 3, gt.cols())?;
    ensure_width("ground-truth offset rows", pred.rows(), gt.rows())?;
    ensure_width("on-object mask length", pred.rows(), on_object.len())
}

/// Gradient of [`vote_reg_loss`] w.r.t. `pred`; zero at the norm's kink.
pub fn vote_reg_grad(
    pred: &FeatureMatrix,
    gt: &FeatureMatrix,
    on_object: &[bool],
    norm: VoteNorm,
) -> Result<FeatureMatrix> {
    check_offsets(pred, gt, on_object)?;
    let mut grad = FeatureMatrix::zeros(pred.rows(), 3);
    let m_pos = positives(on_object);
    if m_pos == 0 {
        return Ok(grad);
    }
    let inv = 1.0 / m_pos as f64;
    for i in (0..pred.rows()).filter(|&i| on_object[i]) {
        let d: Vec<f64> = pred.row(i).iter().zip(gt.row(i)).map(|(a, b)| a - b).collect();
        let row = grad.row_mut(i);
        match norm {
            VoteNorm::Euclidean => {
                let n = d.iter().map(|v| v * v).sum::<f64>().sqrt();
                if n > 0.0 {
                    for (g, v) in row.iter_mut().zip(&d) {
                        *g = inv * v / n;
                    }
                }
            }
            VoteNorm::L1 => {
                for (g, v) in row.iter_mut().zip(&d) {
                    *g = if *v == 0.0 { 0.0 } else { inv * v.signum() };
                }
            }
        }
    }
    Ok(grad)
}

/// Mean smooth-ℓ1 scale error over positive clusters.
pub fn scale_reg_loss(pred: &[f64], gt: &[f64], positive: &[bool], beta: f64) -> Result<MaskedLoss> {
    ensure_width("ground-truth scale count", pred.len(), gt.len())?;
    ensure_width("positive mask length", pred.len(), positive.len())?;
    let n = positives(positive);
    if n == 0 {
        return Ok(MaskedLoss {
            value: 0.0,
            no_positives: true,
        });
    }
    let sum: f64 = (0..pred.len())
        .filter(|&i| positive[i])
        .map(|i| smooth_l1(pred[i] - gt[i], beta))
        .sum();
    Ok(MaskedLoss {
        value: sum / n as f64,
        no_positives: false,
    })
}

pub fn scale_reg_grad(pred: &[f64], gt: &[f64], positive: &[bool], beta: f64) -> Result<Vec<f64>> {
    ensure_width("ground-truth scale count", pred.len(), gt.len())?;
    ensure_width("positive mask length", pred.len(), positive.len())?;
    let n = positives(positive);
    Ok((0..pred.len())
        .map(|i| {
            if positive[i] {
                smooth_l1_grad(pred[i] - gt[i], beta) / n as f64
            } else {
                0.0
            }
        })
        .collect())
}

/// Gradient of mean binary cross-entropy w.r.t. the (unclamped) probabilities.
/// Saturated probabilities sit on the flat part of the clamp and get zero.
pub fn cross_entropy_grad(probs: &[f64], labels: &[bool]) -> Result<Vec<f64>> {
    ensure_width("cross-entropy labels", probs.len(), labels.len())?;
    let n = probs.len() as f64;
    Ok(probs
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            if p <= PROB_CLAMP || p >= 1.0 - PROB_CLAMP {
                return 0.0;
            }
            let p = clamp_prob(p);
            let y = if y { 1.0 } else { 0.0 };
            (p - y) / (p * (1.0 - p)) / n
        })
        .collect())
}

/// Inputs of the ray-grouping regularizer.
#[derive(Clone, Copy, Debug)]
pub struct RbfgInputs<'a> {
    pub coarse_probs: &'a [f64],
    pub coarse_labels: &'a [bool],
    pub fine_probs: &'a [f64],
    pub fine_labels: &'a [bool],
    pub pred_scales: &'a [f64],
    pub gt_scales: &'a [f64],
    pub positive: &'a [bool],
}

/// `λ_scale·L_scale + λ_c·CE(coarse) + λ_f·CE(fine)`.
pub fn rbfg_loss(x: &RbfgInputs<'_>, w: &LossWeights, beta: f64) -> Result<f64> {
    let scale = scale_reg_loss(x.pred_scales, x.gt_scales, x.positive, beta)?.value;
    let c = cross_entropy(x.coarse_probs, x.coarse_labels)?;
    let f = cross_entropy(x.fine_probs, x.fine_labels)?;
    Ok(w.scale_reg * scale + w.c_cls * c + w.f_cls * f)
}

/// Individual terms of the overall objective.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossComponents {
    pub vote_reg: f64,
    pub fbs: f64,
    pub rbfg: f64,
    pub obj_cls: f64,
    pub box_reg: f64,
    pub sem_cls: f64,
}

pub fn overall_loss(c: &LossComponents, w: &LossWeights) -> Result<f64> {
    w.validate()?;
    Ok(w.vote_reg * c.vote_reg
        + w.fbs * c.fbs
        + w.rbfg * c.rbfg
        + w.obj_cls * c.obj_cls
        + w.box_reg * c.box_reg
        + w.sem_cls * c.sem_cls)
}

/// Foreground-sampling loss: BCE of foreground scores against box membership.
pub fn fbs_loss(scores: &[f64], labels: &[bool]) -> Result<f64> {
    cross_entropy(scores, labels)
}

/// Objectness loss: BCE of per-cluster objectness against positivity.
pub fn obj_cls_loss(objectness: &[f64], positive: &[bool]) -> Result<f64> {
    cross_entropy(objectness, positive)
}

/// Box loss over positives: smooth-ℓ1 summed over center and size residuals,
/// averaged over positive proposals.
pub fn box_loss(
    pred_centers: &FeatureMatrix,
    gt_centers: &FeatureMatrix,
    pred_sizes: &FeatureMatrix,
    gt_sizes: &FeatureMatrix,
    positive: &[bool],
    beta: f64,
) -> Result<MaskedLoss> {
    let k = positive.len();
    for (name, m) in [
        ("predicted centers", pred_centers),
        ("ground-truth centers", gt_centers),
        ("predicted sizes", pred_sizes),
        ("ground-truth sizes", gt_sizes),
    ] {
        ensure_width(&format!("{name} rows"), k, m.rows())?;
        ensure_width(&format!("{name} width"), 3, m.cols())?;
    }
    let n = positives(positive);
    if n == 0 {
        return Ok(MaskedLoss {
            value: 0.0,
            no_positives: true,
        });
    }
    let mut sum = 0.0;
    for i in (0..k).filter(|&i| positive[i]) {
        for a in 0..3 {
            sum += smooth_l1(pred_centers[(i, a)] - gt_centers[(i, a)], beta);
            sum += smooth_l1(pred_sizes[(i, a)] - gt_sizes[(i, a)], beta);
        }
    }
    Ok(MaskedLoss {
        value: sum / n as f64,
        no_positives: false,
    })
}

/// Mean softmax cross-entropy of class logits over positive proposals.
pub fn sem_cls_loss(logits: &FeatureMatrix, labels: &[usize], positive: &[bool]) -> Result<MaskedLoss> {
    ensure_width("class label count", logits.rows(), labels.len())?;
    ensure_width("positive mask length", logits.rows(), positive.len())?;
    let n = positives(positive);
    if n == 0 {
        return Ok(MaskedLoss {
            value: 0.0,
            no_positives: true,
        });
    }
    let mut sum = 0.0;
    for i in (0..logits.rows()).filter(|&i| positive[i]) {
        let row = logits.row(i);
        if labels[i] >= row.len() {
            return Err(Error::invalid(format!("class label {} out of range", labels[i])));
        }
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        sum += lse - row[labels[i]];
    }
    Ok(MaskedLoss {
        value: sum / n as f64,
        no_positives: false,
    })
}
