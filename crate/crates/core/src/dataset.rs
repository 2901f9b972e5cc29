use crate::error::{Error, Result};
use alloc::string::String;
use alloc::vec::Vec;
use nalgebra::DMatrix;

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub x: Vec<f64>,
    pub label: usize,
}

/// A labeled classification dataset with inputs in `ℝ^dim` and labels in `[0, num_classes)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub name: String,
    pub dim: usize,
    pub num_classes: usize,
    pub samples: Vec<Sample>,
}

impl LabeledDataset {
    pub fn new(name: impl Into<String>, dim: usize, num_classes: usize, samples: Vec<Sample>) -> Result<Self> {
        let ds = Self { name: name.into(), dim, num_classes, samples };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.num_classes == 0 {
            return Err(Error::Config("dataset needs positive dim and class count".into()));
        }
        for (i, s) in self.samples.iter().enumerate() {
            if s.x.len() != self.dim {
                return Err(Error::DimMismatch { expected: self.dim, got: s.x.len() });
            }
            if s.label >= self.num_classes {
                return Err(Error::Config(alloc::format!(
                    "sample {i} has label {} outside [0, {})",
                    s.label,
                    self.num_classes
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Inputs selected by `indices`, one per row.
    pub fn batch(&self, indices: &[usize]) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(indices.len(), self.dim);
        for (r, &i) in indices.iter().enumerate() {
            for (c, &v) in self.samples[i].x.iter().enumerate() {
                m[(r, c)] = v;
            }
        }
        m
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = alloc::vec![0; self.num_classes];
        for s in &self.samples {
            counts[s.label] += 1;
        }
        counts
    }
}
