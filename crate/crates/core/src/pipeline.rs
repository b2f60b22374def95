//! End-to-end inference: sampling, backbone, voting, clustering, ray
//! grouping, context modules and the proposal head.

use std::time::{Duration, Instant};

use rayon::prelude::*;

use crate::attention::{cgnl, gsc, ppc, CgnlWeights};
use crate::config::{MaskMode, PipelineConfig};
use crate::error::{ensure_width, Error, Result};
use crate::eval::{map_at, Detection, EvalReport, NUM_CLASSES};
use crate::geom::{canonical_sort, half_diagonal, AABox, FeatureMatrix, Point3, PointCloud};
use crate::grouping::{apply_votes, cluster_votes, propagate_features, set_abstraction, SeedSet};
use crate::io::WeightEntries;
use crate::losses::{
    box_loss, fbs_loss, obj_cls_loss, overall_loss, rbfg_loss, sem_cls_loss, vote_reg_loss,
    LossComponents, RbfgInputs,
};
use crate::nn::{sigmoid, softplus, Activation, Dense, MlpWeights};
use crate::rays::{
    generate_rays_with, ray_group_cluster, surface_mask_oracle, surface_points, MaskSource,
    RayClusterOutput, RayWeights, LEVEL_FEATURE_WIDTH, RAY_FEATURE_WIDTH,
};
use crate::sampling::{fbs, fps, oracle_foreground_scores};

/// Head output layout: objectness, center offset, size, class logits.
pub const HEAD_WIDTH: usize = 1 + 3 + 3 + NUM_CLASSES;
const MIN_BOX_SIZE: f64 = 1e-6;

/// Every learned block of the detector.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightBundle {
    pub sa1: MlpWeights,
    pub sa2: MlpWeights,
    pub ppc: CgnlWeights,
    pub vote: MlpWeights,
    pub cluster: MlpWeights,
    pub rays: RayWeights,
    pub ooc: CgnlWeights,
    pub gsc: MlpWeights,
    pub head: MlpWeights,
}

use Activation::{Identity, Relu};

impl WeightBundle {
    /// Deterministic initialization from `seed` for clouds with
    /// `in_channels` feature channels.
    pub fn init(cfg: &PipelineConfig, in_channels: usize, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let n_rays = cfg.ray_count()?;
        let mlp = |widths: &[usize], out: Activation, stream: u64| MlpWeights::init(widths, Relu, out, seed, stream);
        let (sw, cw, aw) = (cfg.seed_width, cfg.cluster_width, cfg.anchor_width);
        let mut ppc_w = CgnlWeights::init(sw, cfg.attention_inner, seed, 3);
        ppc_w.groups = cfg.attention_groups;
        let mut ooc_w = CgnlWeights::init(cw, cfg.attention_inner, seed, 7);
        ooc_w.groups = cfg.attention_groups;
        let ray_mlp = |stream| {
            mlp(
                &[n_rays * RAY_FEATURE_WIDTH, cfg.ray_hidden, cfg.ray_hidden, LEVEL_FEATURE_WIDTH],
                Identity,
                stream,
            )
        };
        Ok(WeightBundle {
            sa1: mlp(&[3 + in_channels, cfg.sa1_width, cfg.sa1_width], Relu, 1),
            sa2: mlp(&[3 + cfg.sa1_width, sw, sw], Relu, 2),
            ppc: ppc_w,
            vote: mlp(&[sw, cfg.vote_hidden, 3 + sw], Identity, 4),
            cluster: mlp(&[sw, cw, cw], Relu, 5),
            rays: RayWeights {
                scale: mlp(&[cw, 32, 1], Identity, 10),
                coarse_abstraction: mlp(&[3 + sw, aw, aw], Relu, 11),
                fine_abstraction: mlp(&[3 + sw, aw, aw], Relu, 12),
                coarse_mask: mlp(&[aw + cw, 32, 1], Identity, 13),
                fine_mask: mlp(&[aw + cw, 32, 1], Identity, 14),
                coarse_point: mlp(&[cfg.rays.coarse_bins * aw, RAY_FEATURE_WIDTH], Relu, 15),
                fine_point: mlp(&[cfg.rays.fine_bins * aw, RAY_FEATURE_WIDTH], Relu, 16),
                coarse_ray: ray_mlp(17),
                fine_ray: ray_mlp(18),
                fuse: mlp(&[2 * LEVEL_FEATURE_WIDTH, cfg.fuse_width], Relu, 19),
                combine: mlp(&[cw + cfg.fuse_width, cw], Relu, 20),
            },
            ooc: ooc_w,
            gsc: mlp(&[cw + sw, cw], Relu, 8),
            head: mlp(&[cw, cfg.head_hidden, HEAD_WIDTH], Identity, 9),
        })
    }

    /// Zeroes every attention and global-context weight, which makes the
    /// three context modules exact identities.
    pub fn zero_attention(&mut self) {
        self.ppc = CgnlWeights {
            groups: self.ppc.groups,
            ..CgnlWeights::zeros(self.ppc.channels(), self.ppc.inner())
        };
        self.ooc = CgnlWeights {
            groups: self.ooc.groups,
            ..CgnlWeights::zeros(self.ooc.channels(), self.ooc.inner())
        };
        for layer in self.gsc.layers_mut() {
            *layer = Dense::zeros(layer.in_width(), layer.out_width(), layer.activation);
        }
    }

    fn mlps(&self) -> Vec<(&'static str, &MlpWeights)> {
        let r = &self.rays;
        vec![
            ("sa1", &self.sa1),
            ("sa2", &self.sa2),
            ("vote", &self.vote),
            ("cluster", &self.cluster),
            ("ray.scale", &r.scale),
            ("ray.coarse_abstraction", &r.coarse_abstraction),
            ("ray.fine_abstraction", &r.fine_abstraction),
            ("ray.coarse_mask", &r.coarse_mask),
            ("ray.fine_mask", &r.fine_mask),
            ("ray.coarse_point", &r.coarse_point),
            ("ray.fine_point", &r.fine_point),
            ("ray.coarse_ray", &r.coarse_ray),
            ("ray.fine_ray", &r.fine_ray),
            ("ray.fuse", &r.fuse),
            ("ray.combine", &r.combine),
            ("gsc", &self.gsc),
            ("head", &self.head),
        ]
    }

    /// Flattens the bundle into named MLP entries. Each attention block is
    /// stored as four single-layer maps plus a 1×1 entry carrying the scale
    /// (weight) and group count (bias).
    pub fn to_entries(&self) -> WeightEntries {
        let mut out: WeightEntries = self.mlps().into_iter().map(|(n, m)| (n.to_string(), m.clone())).collect();
        for (name, w) in [("ppc", &self.ppc), ("ooc", &self.ooc)] {
            for (part, m) in [("theta", &w.theta), ("phi", &w.phi), ("g", &w.g), ("out", &w.out)] {
                let dense = Dense::new(m.transpose(), vec![0.0; m.cols()], Identity).expect("consistent shapes");
                out.push((format!("{name}.{part}"), MlpWeights::new(vec![dense]).expect("single layer")));
            }
            let meta = Dense::new(
                FeatureMatrix::single_row(vec![w.scale]),
                vec![w.groups as f64],
                Identity,
            )
            .expect("1x1 layer");
            out.push((format!("{name}.scale"), MlpWeights::new(vec![meta]).expect("single layer")));
        }
        out
    }

    /// Rebuilds a bundle from entries and checks every width against `cfg`
    /// and `in_channels`.
    pub fn from_entries(entries: &WeightEntries, cfg: &PipelineConfig, in_channels: usize) -> Result<Self> {
        let get = |name: &str| -> Result<MlpWeights> {
            entries
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, m)| m.clone())
                .ok_or_else(|| Error::invalid(format!("weight entry `{name}` missing")))
        };
        let attention = |name: &str| -> Result<CgnlWeights> {
            let map = |part: &str| -> Result<FeatureMatrix> {
                let m = get(&format!("{name}.{part}"))?;
                if m.layers().len() != 1 {
                    return Err(Error::invalid(format!("weight entry `{name}.{part}` must have one layer")));
                }
                Ok(m.layers()[0].weight.transpose())
            };
            let meta = get(&format!("{name}.scale"))?;
            let layer = &meta.layers()[0];
            if layer.weight.rows() != 1 || layer.weight.cols() != 1 {
                return Err(Error::invalid(format!("weight entry `{name}.scale` must be 1x1")));
            }
            let groups = layer.bias[0];
            if !(groups >= 1.0) || groups.fract() != 0.0 {
                return Err(Error::invalid(format!("weight entry `{name}.scale` has bad group count {groups}")));
            }
            CgnlWeights::new(map("theta")?, map("phi")?, map("g")?, map("out")?, layer.weight[(0, 0)], groups as usize)
        };
        let bundle = WeightBundle {
            sa1: get("sa1")?,
            sa2: get("sa2")?,
            ppc: attention("ppc")?,
            vote: get("vote")?,
            cluster: get("cluster")?,
            rays: RayWeights {
                scale: get("ray.scale")?,
                coarse_abstraction: get("ray.coarse_abstraction")?,
                fine_abstraction: get("ray.fine_abstraction")?,
                coarse_mask: get("ray.coarse_mask")?,
                fine_mask: get("ray.fine_mask")?,
                coarse_point: get("ray.coarse_point")?,
                fine_point: get("ray.fine_point")?,
                coarse_ray: get("ray.coarse_ray")?,
                fine_ray: get("ray.fine_ray")?,
                fuse: get("ray.fuse")?,
                combine: get("ray.combine")?,
            },
            ooc: attention("ooc")?,
            gsc: get("gsc")?,
            head: get("head")?,
        };
        bundle.check(cfg, in_channels)?;
        Ok(bundle)
    }

    /// Verifies that every block matches the widths implied by `cfg`.
    pub fn check(&self, cfg: &PipelineConfig, in_channels: usize) -> Result<()> {
        let reference = WeightBundle::init(cfg, in_channels, 0)?;
        for ((name, mine), (_, want)) in self.mlps().into_iter().zip(reference.mlps()) {
            ensure_width(&format!("weights `{name}` input width"), want.in_width(), mine.in_width())?;
            ensure_width(&format!("weights `{name}` output width"), want.out_width(), mine.out_width())?;
        }
        for (name, mine, want) in [("ppc", &self.ppc, &reference.ppc), ("ooc", &self.ooc, &reference.ooc)] {
            ensure_width(&format!("weights `{name}` channels"), want.channels(), mine.channels())?;
        }
        Ok(())
    }
}

/// One executed stage: output shape and wall time.
#[derive(Clone, Debug, PartialEq)]
pub struct StageRecord {
    pub name: &'static str,
    pub shape: Vec<usize>,
    pub elapsed: Duration,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Diagnostics {
    pub stages: Vec<StageRecord>,
    pub rays_per_cluster: usize,
    pub scales: Vec<f64>,
    pub positives: usize,
    pub losses: LossComponents,
    pub total_loss: f64,
    /// Loss terms that had no positive samples and were reported as zero.
    pub empty_terms: Vec<&'static str>,
}

impl Diagnostics {
    pub fn summary(&self) -> String {
        let mut s = String::new();
        for st in &self.stages {
            s.push_str(&format!(
                "{:<12} {:<16} {:>9.3} ms\n",
                st.name,
                format!("{:?}", st.shape),
                st.elapsed.as_secs_f64() * 1e3
            ));
        }
        let l = &self.losses;
        s.push_str(&format!("rays per cluster: {}\n", self.rays_per_cluster));
        s.push_str(&format!("positive clusters: {}\n", self.positives));
        s.push_str(&format!(
            "loss: total {:.4} vote {:.4} fbs {:.4} rbfg {:.4} obj {:.4} box {:.4} sem {:.4}\n",
            self.total_loss, l.vote_reg, l.fbs, l.rbfg, l.obj_cls, l.box_reg, l.sem_cls
        ));
        if !self.empty_terms.is_empty() {
            s.push_str(&format!("warning: no positives for {}\n", self.empty_terms.join(", ")));
        }
        s
    }
}

struct Recorder {
    stages: Vec<StageRecord>,
    last: Instant,
}

impl Recorder {
    fn new() -> Self {
        Recorder {
            stages: Vec::new(),
            last: Instant::now(),
        }
    }

    fn stage<T>(&mut self, name: &'static str, r: Result<T>, shape: impl FnOnce(&T) -> Vec<usize>) -> Result<T> {
        let v = r.map_err(|e| Error::Stage {
            stage: name,
            trace: self.stages.iter().map(|s| s.name).collect::<Vec<_>>().join(" > "),
            source: Box::new(e),
        })?;
        let now = Instant::now();
        self.stages.push(StageRecord {
            name,
            shape: shape(&v),
            elapsed: now - self.last,
        });
        self.last = now;
        Ok(v)
    }
}

/// Nearest ground-truth box by center distance, lowest index on ties.
fn nearest_box(p: Point3, boxes: &[AABox]) -> Option<usize> {
    (0..boxes.len()).min_by(|&a, &b| p.dist2(boxes[a].center).total_cmp(&p.dist2(boxes[b].center)))
}

fn resolve_fbs_counts(cfg: &PipelineConfig, n: usize, m: usize) -> Result<(usize, usize)> {
    let kappa = cfg.kappa.unwrap_or(n / 2).min(n);
    let m_fore = cfg.m_fore.unwrap_or(m / 2).min(kappa).min(m);
    if m - m_fore > n - kappa {
        return Err(Error::invalid(format!(
            "foreground sampling needs {} background samples but only {} background points exist",
            m - m_fore,
            n - kappa
        )));
    }
    Ok((kappa, m_fore))
}

/// Runs the detector on one scene. Ground-truth boxes, when present, feed
/// the oracle foreground scores and the diagnostic losses; they never touch
/// the predicted boxes except through the oracle mask mode.
pub fn run_pipeline(
    cloud: &PointCloud,
    boxes: &[AABox],
    cfg: &PipelineConfig,
    w: &WeightBundle,
) -> Result<(Vec<Detection>, Diagnostics)> {
    cfg.validate()?;
    w.check(cfg, cloud.channels())?;
    let mut rec = Recorder::new();

    let cloud = rec.stage("sort", Ok(canonical_sort(cloud)), |c| vec![c.len(), 3 + c.channels()])?;
    let n = cloud.len();
    let m1 = cfg.upsampled_seeds.min(n);
    let m2 = cfg.n_seeds.min(m1);
    let k = cfg.clusters.min(m2);

    let scores = oracle_foreground_scores(&cloud, boxes);
    let sample = if cfg.use_fbs {
        resolve_fbs_counts(cfg, n, m1).and_then(|(kappa, m_fore)| fbs(&cloud, &scores, m1, kappa, m_fore))
    } else {
        fps(&cloud, m1)
    };
    let sample = rec.stage("sample", sample, |s| vec![s.len()])?;
    let sa1 = rec.stage(
        "sa1",
        set_abstraction(&cloud, &sample, cfg.sa1_radius, cfg.sa1_max_group, &w.sa1),
        |s| vec![s.len(), s.features.cols()],
    )?;
    let sa1_cloud = sa1.to_cloud()?;
    let seeds = rec.stage(
        "sa2",
        fps(&sa1_cloud, m2).and_then(|idx| set_abstraction(&sa1_cloud, &idx, cfg.sa2_radius, cfg.sa2_max_group, &w.sa2)),
        |s| vec![s.len(), s.features.cols()],
    )?;
    let backbone = seeds.features.clone();
    let seeds = if cfg.ppc {
        rec.stage("ppc", ppc(&seeds, &w.ppc), |s| vec![s.len(), s.features.cols()])?
    } else {
        seeds
    };

    let vote_out = w.vote.forward(&seeds.features);
    let votes = rec.stage(
        "vote",
        vote_out.and_then(|o| apply_votes(&seeds, &o.slice_cols(0, 3), &o.slice_cols(3, o.cols()))),
        |v| vec![v.len(), v.features.cols()],
    )?;
    let clusters = rec.stage(
        "cluster",
        cluster_votes(&votes, k, cfg.cluster_radius, Some(&w.cluster)),
        |c| vec![c.len(), c.features.cols()],
    )?;

    let up_positions = sa1.positions.clone();
    let upsampled = rec.stage(
        "upsample",
        propagate_features(&seeds, &up_positions, cfg.propagate_k)
            .and_then(|f| PointCloud::new(up_positions.clone(), f)),
        |c| vec![c.len(), c.channels()],
    )?;

    let fan = generate_rays_with(cfg.rays.polar_count, cfg.rays.ring_multiplier)?;
    let surfaces: Vec<Vec<Point3>> = boxes.iter().map(|b| surface_points(&cloud, b, cfg.surface_band)).collect();
    let nearest: Vec<Option<usize>> = clusters.centers.iter().map(|&c| nearest_box(c, boxes)).collect();
    let empty: Vec<Point3> = Vec::new();
    let ray_out: Result<Vec<RayClusterOutput>> = (0..k)
        .into_par_iter()
        .map(|c| {
            let masks = match cfg.mask_mode {
                MaskMode::Predicted => MaskSource::Predicted,
                MaskMode::Oracle => MaskSource::Oracle {
                    surface: nearest[c].map_or(&empty, |b| &surfaces[b]),
                    proximity: cfg.surface_proximity,
                },
            };
            ray_group_cluster(
                &upsampled,
                clusters.centers[c],
                clusters.features.row(c),
                &fan,
                &cfg.rays,
                &w.rays,
                masks,
            )
        })
        .collect();
    let ray_out = rec.stage("rays", ray_out, |r| vec![r.len(), fan.len()])?;
    let mut combined = FeatureMatrix::zeros(k, cfg.cluster_width);
    for (c, r) in ray_out.iter().enumerate() {
        combined.row_mut(c).copy_from_slice(&r.combined);
    }

    let object = if cfg.ooc {
        rec.stage("ooc", cgnl(&combined, &w.ooc), |f| vec![f.rows(), f.cols()])?
    } else {
        combined.clone()
    };
    let context = if cfg.gsc {
        rec.stage("gsc", gsc(&backbone, &combined, &w.gsc, &object), |f| vec![f.rows(), f.cols()])?
    } else {
        object
    };
    let head = rec.stage("head", w.head.forward(&context), |f| vec![f.rows(), f.cols()])?;

    let mut dets = Vec::with_capacity(k);
    let mut obj_probs = Vec::with_capacity(k);
    let mut pred_centers = FeatureMatrix::zeros(k, 3);
    let mut pred_sizes = FeatureMatrix::zeros(k, 3);
    let logits = head.slice_cols(7, HEAD_WIDTH);
    for c in 0..k {
        let row = head.row(c);
        let obj = sigmoid(row[0]);
        let center = clusters.centers[c] + Point3::new(row[1], row[2], row[3]);
        let size = [
            softplus(row[4]).max(MIN_BOX_SIZE),
            softplus(row[5]).max(MIN_BOX_SIZE),
            softplus(row[6]).max(MIN_BOX_SIZE),
        ];
        let lr = logits.row(c);
        let class = (0..NUM_CLASSES).fold(0, |best, j| if lr[j] > lr[best] { j } else { best });
        let max = lr[class];
        let denom: f64 = lr.iter().map(|v| (v - max).exp()).sum();
        let score = obj / denom;
        pred_centers.row_mut(c).copy_from_slice(&center.to_array());
        pred_sizes.row_mut(c).copy_from_slice(&size);
        obj_probs.push(obj);
        dets.push(Detection::new(AABox::new(center, size, class)?, score)?);
    }
    let t_losses = Instant::now();

    // Diagnostic losses against labels derived from the ground-truth boxes.
    let mut diag = Diagnostics {
        rays_per_cluster: fan.len(),
        scales: ray_out.iter().map(|r| r.scale).collect(),
        ..Diagnostics::default()
    };
    let labels: Vec<bool> = scores.as_slice().iter().map(|&s| s > 0.5).collect();
    let on_object: Vec<Option<usize>> = seeds
        .positions
        .iter()
        .map(|&p| (0..boxes.len()).find(|&b| boxes[b].contains(p)))
        .collect();
    let mut gt_offsets = FeatureMatrix::zeros(m2, 3);
    let mut pred_offsets = FeatureMatrix::zeros(m2, 3);
    for (i, (&p, o)) in seeds.positions.iter().zip(&on_object).enumerate() {
        if let Some(b) = o {
            gt_offsets.row_mut(i).copy_from_slice(&(boxes[*b].center - p).to_array());
        }
        pred_offsets.row_mut(i).copy_from_slice(&(votes.positions[i] - p).to_array());
    }
    let on_mask: Vec<bool> = on_object.iter().map(Option::is_some).collect();
    let vote = vote_reg_loss(&pred_offsets, &gt_offsets, &on_mask, cfg.vote_norm)?;

    let positive: Vec<bool> = (0..k)
        .map(|c| nearest[c].is_some_and(|b| clusters.centers[c].dist(boxes[b].center) <= cfg.positive_radius))
        .collect();
    diag.positives = positive.iter().filter(|&&p| p).count();
    let mut gt_centers = FeatureMatrix::zeros(k, 3);
    let mut gt_sizes = FeatureMatrix::zeros(k, 3);
    let mut gt_classes = vec![0; k];
    let mut gt_scales = vec![0.0; k];
    let (mut c_probs, mut c_labels, mut f_probs, mut f_labels) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for c in 0..k {
        if let Some(b) = nearest[c] {
            let gt = &boxes[b];
            gt_centers.row_mut(c).copy_from_slice(&gt.center.to_array());
            gt_sizes.row_mut(c).copy_from_slice(&gt.size);
            gt_classes[c] = gt.class_id.min(NUM_CLASSES - 1);
            gt_scales[c] = half_diagonal(gt);
            if positive[c] {
                let r = &ray_out[c];
                c_probs.extend_from_slice(&r.coarse_probs);
                c_labels.extend(surface_mask_oracle(&r.coarse.positions, &surfaces[b], cfg.surface_proximity)?);
                f_probs.extend_from_slice(&r.fine_probs);
                f_labels.extend(surface_mask_oracle(&r.fine.positions, &surfaces[b], cfg.surface_proximity)?);
            }
        }
    }
    let rbfg = rbfg_loss(
        &RbfgInputs {
            coarse_probs: &c_probs,
            coarse_labels: &c_labels,
            fine_probs: &f_probs,
            fine_labels: &f_labels,
            pred_scales: &diag.scales,
            gt_scales: &gt_scales,
            positive: &positive,
        },
        &cfg.loss_weights,
        cfg.smooth_l1_beta,
    )?;
    let bx = box_loss(&pred_centers, &gt_centers, &pred_sizes, &gt_sizes, &positive, cfg.smooth_l1_beta)?;
    let sem = sem_cls_loss(&logits, &gt_classes, &positive)?;
    if vote.no_positives {
        diag.empty_terms.push("vote_reg");
    }
    if bx.no_positives {
        diag.empty_terms.push("box_reg");
    }
    if sem.no_positives {
        diag.empty_terms.push("sem_cls");
    }
    diag.losses = LossComponents {
        vote_reg: vote.value,
        fbs: fbs_loss(scores.as_slice(), &labels)?,
        rbfg,
        obj_cls: obj_cls_loss(&obj_probs, &positive)?,
        box_reg: bx.value,
        sem_cls: sem.value,
    };
    diag.total_loss = overall_loss(&diag.losses, &cfg.loss_weights)?;
    rec.stages.push(StageRecord {
        name: "losses",
        shape: vec![6],
        elapsed: t_losses.elapsed(),
    });
    diag.stages = rec.stages;
    Ok((dets, diag))
}

/// Module toggles compared by [`ablate`], in table order.
pub const ABLATION_CONFIGS: [(&str, bool, bool, bool); 4] = [
    ("baseline", false, false, false),
    ("+ppc", true, false, false),
    ("+ppc+ooc", true, true, false),
    ("+ppc+ooc+gsc", true, true, true),
];

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub name: &'static str,
    pub ppc: bool,
    pub ooc: bool,
    pub gsc: bool,
    pub detections: Vec<Detection>,
    pub eval: EvalReport,
    pub total_loss: f64,
}

/// Runs the four context configurations on one scene with shared weights.
pub fn ablate(cloud: &PointCloud, boxes: &[AABox], cfg: &PipelineConfig, w: &WeightBundle) -> Result<Vec<AblationRow>> {
    ABLATION_CONFIGS
        .iter()
        .map(|&(name, p, o, g)| {
            let c = PipelineConfig {
                ppc: p,
                ooc: o,
                gsc: g,
                ..cfg.clone()
            };
            let (detections, diag) = run_pipeline(cloud, boxes, &c, w)?;
            Ok(AblationRow {
                name,
                ppc: p,
                ooc: o,
                gsc: g,
                eval: map_at(&detections, boxes, cfg.iou_threshold),
                detections,
                total_loss: diag.total_loss,
            })
        })
        .collect()
}

pub fn ablation_table(rows: &[AblationRow]) -> String {
    let mut s = String::from("config\tppc\tooc\tgsc\tmAP\tloss\n");
    let mark = |b: bool| if b { "x" } else { "-" };
    for r in rows {
        s.push_str(&format!(
            "{}\t{}\t{}\t{}\t{:.1}\t{:.4}\n",
            r.name,
            mark(r.ppc),
            mark(r.ooc),
            mark(r.gsc),
            r.eval.map_value * 100.0,
            r.total_loss
        ));
    }
    s
}

/// Seeds of the backbone, exposed for callers that inspect intermediate
/// features without running the full detector.
pub fn backbone_seeds(cloud: &PointCloud, cfg: &PipelineConfig, w: &WeightBundle) -> Result<SeedSet> {
    let cloud = canonical_sort(cloud);
    let m1 = cfg.upsampled_seeds.min(cloud.len());
    let idx = fps(&cloud, m1)?;
    let sa1 = set_abstraction(&cloud, &idx, cfg.sa1_radius, cfg.sa1_max_group, &w.sa1)?.to_cloud()?;
    let idx2 = fps(&sa1, cfg.n_seeds.min(m1))?;
    set_abstraction(&sa1, &idx2, cfg.sa2_radius, cfg.sa2_max_group, &w.sa2)
}
