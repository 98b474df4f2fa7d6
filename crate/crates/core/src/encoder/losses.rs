use super::{HeadOutputs, MaskedBatch};
use crate::error::{Error, Result};
use crate::numcore::{Tensor, Var};

/// The three reconstruction terms and their weighted total.
pub struct PretrainLosses<'t> {
    pub type_loss: Var<'t>,
    pub dist_loss: Var<'t>,
    pub dir_loss: Var<'t>,
    pub total: Var<'t>,
}

/// `L_type + λ_d·Σ|d̂ − d| + λ_u·Σ‖ε̂ − ε‖²`, all summed over the masked set.
pub fn pretrain_losses<'t>(
    heads: &HeadOutputs<'t>,
    targets: &MaskedBatch,
    lambda_dist: f64,
    lambda_dir: f64,
) -> Result<PretrainLosses<'t>> {
    if targets.atoms.is_empty() {
        return Err(Error::NoMaskedAtoms);
    }
    let tape = heads.element_logits.tape();
    let supervised = vec![true; targets.atoms.len()];
    let type_loss = heads
        .element_logits
        .masked_nll(&targets.element_targets, &supervised)?;
    let e = targets.edges.len();
    let (dist_loss, dir_loss) = if e == 0 {
        (tape.scalar(0.0), tape.scalar(0.0))
    } else {
        let d = tape.constant(Tensor::column(targets.distances.clone()));
        let eps = tape.constant(Tensor::from_fn(e, 3, |k, c| targets.noise[k][c]));
        (
            heads.distances.sub(d)?.abs().sum(),
            heads.direction_noise.sub(eps)?.square().sum(),
        )
    };
    let total = type_loss
        .add(dist_loss.scale(lambda_dist))?
        .add(dir_loss.scale(lambda_dir))?;
    Ok(PretrainLosses {
        type_loss,
        dist_loss,
        dir_loss,
        total,
    })
}

/// Fraction of masked atoms whose arg-max class equals the target.
pub fn type_accuracy(logits: &Tensor, targets: &[usize]) -> f64 {
    if targets.is_empty() {
        return 0.0;
    }
    let hits = targets
        .iter()
        .enumerate()
        .filter(|&(r, &t)| {
            let row = logits.row(r);
            let best = (0..row.len())
                .max_by(|&a, &b| row[a].total_cmp(&row[b]).then(b.cmp(&a)))
                .unwrap_or(0);
            best == t
        })
        .count();
    hits as f64 / targets.len() as f64
}
