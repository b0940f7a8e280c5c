//! Classification-plus-masked-regression sum-squared error.
//!
//! Per step and class, the presence error `(p̂ - p)²` always counts; the
//! start/stop errors `(ŝ - s)² + (ê - e)²` count only where the target
//! marks the class present. Everything is summed over steps and classes
//! with no averaging.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::labels::YohoGrid;

/// Loss split into its classification and regression parts.
#[derive(Debug, Clone, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub classification: f64,
    pub regression: f64,
    pub per_class: BTreeMap<String, (f64, f64)>,
}

fn check_shapes(pred: &YohoGrid, target: &YohoGrid) -> Result<()> {
    if pred.n_steps != target.n_steps || pred.classes != target.classes {
        return Err(Error::ShapeMismatch(format!(
            "prediction grid {}x{} classes vs target {}x{}",
            pred.n_steps,
            pred.classes.len(),
            target.n_steps,
            target.classes.len()
        )));
    }
    Ok(())
}

/// Evaluate the loss of a predicted grid against an encoded target.
pub fn yoho_loss(pred: &YohoGrid, target: &YohoGrid) -> Result<LossBreakdown> {
    check_shapes(pred, target)?;
    let mut classification = 0.0;
    let mut regression = 0.0;
    let mut per_class: BTreeMap<String, (f64, f64)> = BTreeMap::new();
    for (ci, class) in pred.classes.iter().enumerate() {
        let mut cls = 0.0;
        let mut reg = 0.0;
        for k in 0..pred.n_steps {
            let (p1, p2, p3) = pred.cell(k, ci);
            let (t1, t2, t3) = target.cell(k, ci);
            cls += (p1 - t1) * (p1 - t1);
            if t1 == 1.0 {
                reg += (p2 - t2) * (p2 - t2) + (p3 - t3) * (p3 - t3);
            }
        }
        classification += cls;
        regression += reg;
        per_class.insert(class.clone(), (cls, reg));
    }
    Ok(LossBreakdown {
        total: classification + regression,
        classification,
        regression,
        per_class,
    })
}

/// Gradient of [`yoho_loss`] with respect to the prediction, as a grid of
/// the same shape. Masked coordinates get exactly zero.
pub fn yoho_loss_grad(pred: &YohoGrid, target: &YohoGrid) -> Result<YohoGrid> {
    check_shapes(pred, target)?;
    let mut grad = YohoGrid::zeros(
        pred.classes.clone(),
        pred.n_steps,
        pred.step_duration,
    );
    for ci in 0..pred.classes.len() {
        for k in 0..pred.n_steps {
            let (p1, p2, p3) = pred.cell(k, ci);
            let (t1, t2, t3) = target.cell(k, ci);
            let g1 = 2.0 * (p1 - t1);
            let (g2, g3) = if t1 == 1.0 {
                (2.0 * (p2 - t2), 2.0 * (p3 - t3))
            } else {
                (0.0, 0.0)
            };
            grad.set_cell(k, ci, (g1, g2, g3));
        }
    }
    Ok(grad)
}
