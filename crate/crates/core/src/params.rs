//! Flat views over trainable tensors, shared by the optimizers.

use crate::error::{Error, Result};

/// A collection of parameter tensors visited in a fixed order.
pub trait Parameters {
    fn tensors(&self) -> Vec<&[f64]>;
    fn tensors_mut(&mut self) -> Vec<&mut [f64]>;

    fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// Copies every parameter into one vector, in tensor order.
    fn flatten(&self) -> Vec<f64> {
        self.tensors().concat()
    }

    fn assign_flat(&mut self, flat: &[f64]) -> Result<()> {
        let n = self.num_params();
        if flat.len() != n {
            return Err(Error::shape("assign_flat", (n, 1), (flat.len(), 1)));
        }
        let mut off = 0;
        for t in self.tensors_mut() {
            t.copy_from_slice(&flat[off..off + t.len()]);
            off += t.len();
        }
        Ok(())
    }
}

/// Checks that two parameter sets have identically sized tensors.
pub fn check_compatible(op: &'static str, a: &impl Parameters, b: &impl Parameters) -> Result<()> {
    let ta = a.tensors();
    let tb = b.tensors();
    if ta.len() != tb.len() {
        return Err(Error::shape(op, (ta.len(), 0), (tb.len(), 0)));
    }
    for (x, y) in ta.iter().zip(&tb) {
        if x.len() != y.len() {
            return Err(Error::shape(op, (x.len(), 1), (y.len(), 1)));
        }
    }
    Ok(())
}
