//! Overlap metrics between predicted and reference label masks.

use crate::error::{Error, Result};

/// 2|A∩B| / (|A|+|B|) for one class; 1.0 when the class is absent from both.
pub fn dice(pred: &[u8], reference: &[u8], class_id: u8, num_classes: u8) -> Result<f64> {
    if pred.len() != reference.len() {
        return Err(Error::ShapeMismatch {
            op: "dice",
            lhs: vec![pred.len()],
            rhs: vec![reference.len()],
        });
    }
    if class_id >= num_classes {
        return Err(Error::InvalidParameter(format!(
            "class {class_id} out of range for {num_classes} classes"
        )));
    }
    let mut inter = 0usize;
    let mut a = 0usize;
    let mut b = 0usize;
    for (&p, &r) in pred.iter().zip(reference) {
        let pa = p == class_id;
        let rb = r == class_id;
        a += pa as usize;
        b += rb as usize;
        inter += (pa && rb) as usize;
    }
    if a + b == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / (a + b) as f64)
}

/// Per-structure dice (classes 1..) and their mean; background is excluded
/// so an all-background prediction cannot score well.
#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub per_class: Vec<f64>,
    pub mean: f64,
}

impl Metrics {
    pub fn from_per_class(per_class: Vec<f64>) -> Self {
        let mean = per_class.iter().sum::<f64>() / per_class.len().max(1) as f64;
        Metrics { per_class, mean }
    }
}
