//! Central finite-difference verification of tape gradients.

use std::collections::BTreeMap;

use super::nn::{Bound, ParamSet};
use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Scalar objective plus the discrete choices made while computing it.
///
/// The selection (anchor indices, patch counts, ...) must be identical at every
/// perturbed point; otherwise the check is outside the smooth region.
pub struct Probe<'t> {
    pub loss: Var<'t>,
    pub selection: Vec<i64>,
}

impl<'t> Probe<'t> {
    pub fn smooth(loss: Var<'t>) -> Self {
        Self {
            loss,
            selection: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LeafReport {
    pub leaf: usize,
    /// Parameter name, or `#index` for anonymous leaves.
    pub label: String,
    pub coordinates: usize,
    pub max_rel_error: f64,
    /// Analytic gradient evaluated at the unperturbed point.
    pub analytic: Tensor,
    pub numeric: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradReport {
    pub leaves: Vec<LeafReport>,
    pub objective: f64,
}

impl GradReport {
    pub fn max_rel_error(&self) -> f64 {
        self.leaves.iter().map(|l| l.max_rel_error).fold(0.0, f64::max)
    }

    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_error() <= tolerance
    }
}

/// `|analytic - numeric| / max(1, |numeric|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / numeric.abs().max(1.0)
}

fn evaluate<F>(f: &F, params: &[Tensor]) -> Result<(f64, Vec<i64>)>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Probe<'t>>,
{
    let tape = Tape::new();
    let leaves: Vec<Var<'_>> = params.iter().map(|p| tape.constant(p.clone())).collect();
    let probe = f(&tape, &leaves)?;
    let value = scalar_of(&probe.loss)?;
    Ok((value, probe.selection))
}

fn scalar_of(loss: &Var<'_>) -> Result<f64> {
    let v = loss.value();
    if v.len() != 1 {
        return Err(Error::shape("finite_diff_check", "objective must be scalar"));
    }
    let x = v.item();
    if x.is_finite() {
        Ok(x)
    } else {
        Err(Error::ObjectiveNotFinite)
    }
}

/// Compares tape gradients of `f` at `params` with central differences of
/// step `h`, coordinate by coordinate.
pub fn finite_diff_check<F>(f: F, params: &[Tensor], h: f64) -> Result<GradReport>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Probe<'t>>,
{
    if h.is_nan() || h <= 0.0 {
        return Err(Error::InvalidArgument("finite-difference step must be positive".into()));
    }
    let tape = Tape::new();
    let leaves: Vec<Var<'_>> = params.iter().map(|p| tape.leaf(p.clone())).collect();
    let probe = f(&tape, &leaves)?;
    let objective = scalar_of(&probe.loss)?;
    let grads = tape.backward(probe.loss)?;
    let base_selection = probe.selection;

    let mut reports = Vec::with_capacity(params.len());
    let mut point: Vec<Tensor> = params.to_vec();
    for (leaf, var) in leaves.iter().enumerate() {
        let analytic = grads.wrt(*var);
        let [r, c] = params[leaf].shape();
        let mut numeric = Tensor::zeros(r, c);
        let mut worst = 0.0f64;
        for coord in 0..params[leaf].len() {
            let original = params[leaf].data()[coord];
            let mut side = |delta: f64| -> Result<f64> {
                point[leaf].data_mut()[coord] = original + delta;
                let (v, sel) = evaluate(&f, &point)?;
                if sel != base_selection {
                    return Err(Error::SelectionChanged { leaf, coord });
                }
                Ok(v)
            };
            let plus = side(h);
            let minus = side(-h);
            point[leaf].data_mut()[coord] = original;
            let n = (plus? - minus?) / (2.0 * h);
            numeric.data_mut()[coord] = n;
            worst = worst.max(relative_error(analytic.data()[coord], n));
        }
        reports.push(LeafReport {
            leaf,
            label: format!("#{leaf}"),
            coordinates: params[leaf].len(),
            max_rel_error: worst,
            analytic,
            numeric,
        });
    }
    Ok(GradReport {
        leaves: reports,
        objective,
    })
}

/// Checks every parameter of `params` plus the anonymous `extra` leaves.
///
/// `f` receives the parameters bound by name and the extra leaves in order.
pub fn check_params<F>(params: &ParamSet, extra: &[Tensor], h: f64, f: F) -> Result<GradReport>
where
    F: for<'t> Fn(&'t Tape, &Bound<'t>, &[Var<'t>]) -> Result<Probe<'t>>,
{
    let names: Vec<String> = params.names().map(String::from).collect();
    let mut values: Vec<Tensor> = params.iter().map(|(_, t)| t.clone()).collect();
    values.extend_from_slice(extra);
    let count = names.len();
    let mut report = finite_diff_check(
        |tape, leaves| {
            let vars: BTreeMap<String, Var<'_>> =
                names.iter().cloned().zip(leaves[..count].iter().copied()).collect();
            f(tape, &Bound::from_vars(vars), &leaves[count..])
        },
        &values,
        h,
    )?;
    for leaf in &mut report.leaves {
        if leaf.leaf < count {
            leaf.label = names[leaf.leaf].clone();
        }
    }
    Ok(report)
}

impl GradReport {
    /// Leaf with the largest relative error.
    pub fn worst(&self) -> Option<&LeafReport> {
        self.leaves
            .iter()
            .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
    }
}
