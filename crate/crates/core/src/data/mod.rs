//! Datasets, batching order and the evaluation subset.

pub mod cifar;
pub mod synth;

pub use cifar::{load_cifar10, CIFAR_MEAN, CIFAR_STD};
pub use synth::{bayes_accuracy, synth_dataset, SynthSpec};

use serde::{Deserialize, Serialize};

use crate::error::{PcnError, Result};
use crate::numerics::{RngStream, Tensor};

pub const EVAL_IMAGES: usize = 1280;
pub const EVAL_BATCH: usize = 128;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Cifar10,
    Synthetic,
}

/// Normalised images `[N, 3, 32, 32]` with integer labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub images: Tensor<f32>,
    pub labels: Vec<usize>,
    pub split: Split,
    pub provenance: Provenance,
    pub num_classes: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// The first `n` records in file order.
    pub fn head(&self, n: usize) -> Result<Self> {
        if n > self.len() {
            return Err(PcnError::Data(format!("requested {n} records but the dataset has {}", self.len())));
        }
        let idx: Vec<usize> = (0..n).collect();
        Ok(Self { images: self.images.select_items(&idx), labels: self.labels[..n].to_vec(), ..self.clone_meta() })
    }

    fn clone_meta(&self) -> Self {
        Self {
            images: Tensor::zeros(&[0, 3, 32, 32]),
            labels: Vec::new(),
            split: self.split,
            provenance: self.provenance,
            num_classes: self.num_classes,
        }
    }

    /// Images and labels at `indices`.
    pub fn batch(&self, indices: &[usize]) -> (Tensor<f32>, Vec<usize>) {
        (self.images.select_items(indices), indices.iter().map(|&i| self.labels[i]).collect())
    }

    /// Label counts per class.
    pub fn histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.num_classes.max(1)];
        for &l in &self.labels {
            h[l] += 1;
        }
        h
    }

    /// Evaluation set: the first 1280 records (10 batches of 128), or all
    /// of them when `n` is smaller.
    pub fn eval_subset(&self, n: usize) -> Result<Self> {
        self.head(n)
    }
}

/// Shuffled order for one epoch; a pure function of `(seed, epoch)`.
pub fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    RngStream::with_stream(seed, 0xda7a).derive(epoch as u64).permutation(n)
}

/// Consecutive batches of `order`; the last one may be short.
pub fn batches(order: &[usize], batch_size: usize) -> Vec<Vec<usize>> {
    order.chunks(batch_size.max(1)).map(|c| c.to_vec()).collect()
}
