//! Evaluates each training loss term on a toy batch and the weighted total.

use sbmc::losses::{
    box_loss, fbs_loss, overall_loss, scale_reg_loss, sem_cls_loss, vote_reg_loss, LossComponents, LossWeights,
    VoteNorm,
};
use sbmc::FeatureMatrix;

fn main() -> sbmc::Result<()> {
    let positive = [true, true, false];
    let pred = FeatureMatrix::from_vec(3, 3, vec![0.1, 0.0, 0.0, 1.0, 1.0, 1.0, 9.0, 9.0, 9.0])?;
    let gt = FeatureMatrix::zeros(3, 3);
    let vote = vote_reg_loss(&pred, &gt, &positive, VoteNorm::Euclidean)?;
    println!("vote regression {:.4}", vote.value);

    let scale = scale_reg_loss(&[0.5, 2.0, 7.0], &[0.6, 1.0, 0.0], &positive, 1.0)?;
    println!("ray scale {:.4}", scale.value);

    let fg = fbs_loss(&[0.9, 0.2, 0.7], &[true, false, false])?;
    println!("foreground {fg:.4}");

    let boxes = box_loss(&pred, &gt, &pred, &pred, &positive, 1.0)?;
    let logits = FeatureMatrix::from_vec(3, 2, vec![2.0, -1.0, 0.0, 0.0, 5.0, 5.0])?;
    let sem = sem_cls_loss(&logits, &[0, 1, 0], &positive)?;
    println!("box {:.4}, semantic {:.4}", boxes.value, sem.value);

    let none = vote_reg_loss(&pred, &gt, &[false; 3], VoteNorm::Euclidean)?;
    println!("no positives: value {} flagged {}", none.value, none.no_positives);

    let comp = LossComponents {
        vote_reg: vote.value,
        fbs: fg,
        rbfg: scale.value,
        obj_cls: 0.3,
        box_reg: boxes.value,
        sem_cls: sem.value,
    };
    println!("total {:.4}", overall_loss(&comp, &LossWeights::default())?);
    Ok(())
}
