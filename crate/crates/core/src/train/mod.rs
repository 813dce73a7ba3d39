//! Pretraining: per-step data flow, AdamW with warmup + half-cosine learning
//! rate, EMA teacher update, checkpoints and a JSONL metrics log.

mod augment;
mod checkpoint;
mod optim;
mod run;
mod state;
mod step;

pub use augment::random_resized_crop;
pub use checkpoint::{
    load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_FILE, CHECKPOINT_FORMAT, CHECKPOINT_VERSION,
};
pub use optim::{clip_grad_norm, AdamW};
pub use run::{load_training_data, pretrain, pretrain_on, read_metrics, TrainingData, METRICS_FILE};
pub use state::TrainState;
pub use step::{pretrain_step, Batch, BatchItem, StepMetrics};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub lr_start: f64,
    pub lr_peak: f64,
    pub lr_end: f64,
    pub warmup_steps: u64,
    pub total_steps: u64,
}

/// Linear warmup from `lr_start` to `lr_peak` over `warmup_steps`, then a
/// half cosine down to `lr_end` at step `total_steps - 1`. Later steps hold
/// `lr_end`.
pub fn lr_at(step: u64, s: &LrSchedule) -> f64 {
    if step < s.warmup_steps {
        return s.lr_start + (s.lr_peak - s.lr_start) * step as f64 / s.warmup_steps as f64;
    }
    let last = s.total_steps.saturating_sub(1);
    if step >= last {
        return s.lr_end;
    }
    let progress = (step - s.warmup_steps) as f64 / (last - s.warmup_steps) as f64;
    s.lr_end + (s.lr_peak - s.lr_end) * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const S: LrSchedule = LrSchedule {
        lr_start: 1e-6,
        lr_peak: 1.5e-4,
        lr_end: 1e-5,
        warmup_steps: 100,
        total_steps: 1000,
    };

    #[test]
    fn endpoints() {
        assert_eq!(lr_at(0, &S), 1e-6);
        assert_eq!(lr_at(100, &S), 1.5e-4);
        assert!((lr_at(999, &S) - 1e-5).abs() < 1e-9);
        assert_eq!(lr_at(5000, &S), 1e-5);
    }

    #[test]
    fn warmup_is_linear_and_decay_hits_the_midpoint() {
        assert!((lr_at(50, &S) - (1e-6 + 1.49e-4 / 2.0)).abs() < 1e-15);
        // halfway through the cosine the rate is the mean of peak and end
        let s = LrSchedule { total_steps: 301, ..S };
        assert!((lr_at(200, &s) - 8e-5).abs() < 1e-15);
    }

    #[test]
    fn degenerate_horizons() {
        let one = LrSchedule {
            warmup_steps: 0,
            total_steps: 1,
            ..S
        };
        assert_eq!(lr_at(0, &one), 1e-5);
        let no_warmup = LrSchedule { warmup_steps: 0, ..S };
        assert_eq!(lr_at(0, &no_warmup), 1.5e-4);
    }

    proptest! {
        #[test]
        fn stays_in_range_and_decays_monotonically(a in 100u64..1200, b in 100u64..1200) {
            let (lo, hi) = (a.min(b), a.max(b));
            prop_assert!(lr_at(lo, &S) >= lr_at(hi, &S));
            prop_assert!(lr_at(hi, &S) >= 1e-5 && lr_at(hi, &S) <= 1.5e-4);
        }
    }
}
