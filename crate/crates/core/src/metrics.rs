//! Run-level measurements: arithmetic-operation counters and training traces.

use serde::{Deserialize, Serialize};

/// Additions and multiplications, split between the feature transform
/// (spikes times weights) and the sparse neighborhood aggregation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpCounters {
    pub transform_adds: u64,
    pub transform_muls: u64,
    pub aggregate_adds: u64,
    pub aggregate_muls: u64,
}

impl OpCounters {
    pub fn transform_ops(&self) -> u64 {
        self.transform_adds + self.transform_muls
    }

    pub fn total_adds(&self) -> u64 {
        self.transform_adds + self.aggregate_adds
    }

    pub fn total_muls(&self) -> u64 {
        self.transform_muls + self.aggregate_muls
    }

    pub fn reset(&mut self) {
        *self = OpCounters::default();
    }

    pub fn merge(&mut self, other: &OpCounters) {
        self.transform_adds += other.transform_adds;
        self.transform_muls += other.transform_muls;
        self.aggregate_adds += other.aggregate_adds;
        self.aggregate_muls += other.aggregate_muls;
    }
}

/// Global and local feature variance of one layer's rate-decoded output.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct VarianceStats {
    pub global_mean: f64,
    pub global_var: f64,
    pub local_var: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub loss_trace: Vec<f32>,
    pub train_acc_trace: Vec<f32>,
    pub val_acc_trace: Vec<f32>,
    pub val_loss_trace: Vec<f32>,
    pub lr_trace: Vec<f32>,
    pub best_epoch: usize,
    pub best_val_acc: f32,
    pub test_acc: f32,
    /// Mean spike probability per spiking layer, from the final evaluation pass.
    pub firing_rate: Vec<f64>,
    /// Counters of a single evaluation forward pass.
    pub ops: OpCounters,
    pub layer_feature_stats: Vec<VarianceStats>,
    /// Average decision step (1-based) on the test mask.
    pub inference_steps: f64,
}

impl RunMetrics {
    /// First epoch (1-based) whose validation accuracy reaches `target`.
    pub fn epochs_to_val_acc(&self, target: f32) -> Option<usize> {
        self.val_acc_trace.iter().position(|&a| a >= target).map(|e| e + 1)
    }
}
