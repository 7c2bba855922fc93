//! Learning-rate schedules and the adaptive coordination-number schedule.
//!
//! A schedule is a contiguous table of epoch phases, each interpolating
//! linearly between a start and an end term. Terms are plain coefficients
//! optionally multiplied by the batch/degree scale factor
//! `s = batch_size * (degree + 1) / reference_batch` (linear scaling) or by
//! `sqrt(s)` (square-root scaling).

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScheduleError {
    #[error("epoch {epoch} outside the schedule's phase table")]
    EpochOutOfSchedule { epoch: usize },
    #[error("schedule has no phases")]
    EmptyPhases,
    #[error("phase {index} does not start where the previous phase ended")]
    NonContiguousPhases { index: usize },
    #[error("phase {index} has an empty or reversed epoch range")]
    EmptyPhase { index: usize },
    #[error("learning rate must stay positive (phase {index})")]
    NonPositiveLr { index: usize },
    #[error("milestones must be strictly increasing inside (warmup, total_epochs)")]
    BadMilestones,
    #[error("ada parameters: k0={k0} must satisfy k0 >= k_min={k_min} >= 1")]
    BadAdaBounds { k0: usize, k_min: usize },
    #[error("ada parameters: gamma_k must be positive, got {0}")]
    BadAdaDecay(f64),
    #[error("ada parameters: 2*k0={twice_k0} exceeds n-1={max} for n={n} workers")]
    AdaTooDenseForWorkers {
        twice_k0: usize,
        max: usize,
        n: usize,
    },
}

/// Coordination-number schedule of the adaptive ring lattice.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AdaParams {
    /// Initial coordination number.
    pub k0: usize,
    /// Per-epoch linear decay rate of k.
    pub gamma_k: f64,
    /// Lower clamp for k.
    pub k_min: usize,
}

impl AdaParams {
    pub const DEFAULT_K_MIN: usize = 2;

    pub fn new(k0: usize, gamma_k: f64, k_min: usize) -> Result<Self, ScheduleError> {
        if k_min < 1 || k0 < k_min {
            return Err(ScheduleError::BadAdaBounds { k0, k_min });
        }
        if gamma_k.is_nan() || gamma_k <= 0.0 {
            return Err(ScheduleError::BadAdaDecay(gamma_k));
        }
        Ok(AdaParams { k0, gamma_k, k_min })
    }

    /// The initial lattice must fit the worker count: `2 * k0 <= n - 1`.
    pub fn validate_for_workers(&self, n: usize) -> Result<(), ScheduleError> {
        if n >= 2 && 2 * self.k0 > n - 1 {
            return Err(ScheduleError::AdaTooDenseForWorkers {
                twice_k0: 2 * self.k0,
                max: n - 1,
                n,
            });
        }
        Ok(())
    }

    /// `k = max(k0 - int(gamma_k * epoch), k_min)` with truncation toward zero.
    pub fn degree_at(&self, epoch: usize) -> usize {
        ada_degree(self, epoch)
    }
}

/// The adaptive lattice coordination number at an epoch.
pub fn ada_degree(params: &AdaParams, epoch: usize) -> usize {
    let decay = (params.gamma_k * epoch as f64).trunc() as i64;
    let k = params.k0 as i64 - decay;
    k.max(params.k_min as i64) as usize
}

/// How the scale factor enters the learning rate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LrScaling {
    #[default]
    None,
    Linear,
    Sqrt,
}

/// A coefficient, optionally multiplied by the scale factor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LrTerm {
    pub coeff: f64,
    pub scaled: bool,
}

impl LrTerm {
    pub fn flat(coeff: f64) -> Self {
        LrTerm {
            coeff,
            scaled: false,
        }
    }

    pub fn scaled(coeff: f64) -> Self {
        LrTerm {
            coeff,
            scaled: true,
        }
    }

    fn value(&self, scale: f64) -> f64 {
        if self.scaled {
            self.coeff * scale
        } else {
            self.coeff
        }
    }
}

/// One epoch range interpolating from `start` to `end`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LrPhase {
    pub start_epoch: usize,
    /// Exclusive.
    pub end_epoch: usize,
    pub start: LrTerm,
    pub end: LrTerm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    Constant,
    WarmupMultiStep,
    OneCycle,
    Custom,
}

/// Learning-rate schedule: a contiguous phase table plus the scaling rule.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LrSchedule {
    pub kind: ScheduleKind,
    pub base_lr: f64,
    pub scaling: LrScaling,
    pub reference_batch: usize,
    pub phases: Vec<LrPhase>,
}

pub const DEFAULT_REFERENCE_BATCH: usize = 256;

impl LrSchedule {
    /// A single rate for every epoch.
    pub fn constant(base_lr: f64) -> Result<Self, ScheduleError> {
        let schedule = LrSchedule {
            kind: ScheduleKind::Constant,
            base_lr,
            scaling: LrScaling::None,
            reference_batch: DEFAULT_REFERENCE_BATCH,
            phases: vec![LrPhase {
                start_epoch: 0,
                end_epoch: usize::MAX,
                start: LrTerm::flat(base_lr),
                end: LrTerm::flat(base_lr),
            }],
        };
        schedule.validate()?;
        Ok(schedule)
    }

    /// Linear warmup from the unscaled base rate to the scaled one, then
    /// piecewise-constant scaled steps at the milestone factors.
    pub fn warmup_multistep(
        base_lr: f64,
        scaling: LrScaling,
        reference_batch: usize,
        warmup_epochs: usize,
        milestones: &[(usize, f64)],
        total_epochs: usize,
    ) -> Result<Self, ScheduleError> {
        let mut phases = Vec::new();
        if warmup_epochs > 0 {
            phases.push(LrPhase {
                start_epoch: 0,
                end_epoch: warmup_epochs,
                start: LrTerm::flat(base_lr),
                end: LrTerm::scaled(base_lr),
            });
        }
        let mut cursor = warmup_epochs;
        let mut factor = 1.0;
        for &(epoch, next_factor) in milestones {
            if epoch <= cursor || epoch >= total_epochs {
                return Err(ScheduleError::BadMilestones);
            }
            phases.push(LrPhase {
                start_epoch: cursor,
                end_epoch: epoch,
                start: LrTerm::scaled(base_lr * factor),
                end: LrTerm::scaled(base_lr * factor),
            });
            cursor = epoch;
            factor = next_factor;
        }
        phases.push(LrPhase {
            start_epoch: cursor,
            end_epoch: total_epochs.max(cursor + 1),
            start: LrTerm::scaled(base_lr * factor),
            end: LrTerm::scaled(base_lr * factor),
        });
        let schedule = LrSchedule {
            kind: ScheduleKind::WarmupMultiStep,
            base_lr,
            scaling,
            reference_batch,
            phases,
        };
        schedule.validate()?;
        Ok(schedule)
    }

    /// Ramp up from the unscaled base rate to a scaled peak, back down to the
    /// scaled base, then down to a scaled final rate.
    #[allow(clippy::too_many_arguments)]
    pub fn one_cycle(
        base_lr: f64,
        peak_lr: f64,
        final_lr: f64,
        scaling: LrScaling,
        reference_batch: usize,
        ramp_up_end: usize,
        ramp_down_end: usize,
        total_epochs: usize,
    ) -> Result<Self, ScheduleError> {
        if !(0 < ramp_up_end && ramp_up_end < ramp_down_end && ramp_down_end < total_epochs) {
            return Err(ScheduleError::BadMilestones);
        }
        let schedule = LrSchedule {
            kind: ScheduleKind::OneCycle,
            base_lr,
            scaling,
            reference_batch,
            phases: vec![
                LrPhase {
                    start_epoch: 0,
                    end_epoch: ramp_up_end,
                    start: LrTerm::flat(base_lr),
                    end: LrTerm::scaled(peak_lr),
                },
                LrPhase {
                    start_epoch: ramp_up_end,
                    end_epoch: ramp_down_end,
                    start: LrTerm::scaled(peak_lr),
                    end: LrTerm::scaled(base_lr),
                },
                LrPhase {
                    start_epoch: ramp_down_end,
                    end_epoch: total_epochs,
                    start: LrTerm::scaled(base_lr),
                    end: LrTerm::scaled(final_lr),
                },
            ],
        };
        schedule.validate()?;
        Ok(schedule)
    }

    /// A hand-built phase table.
    pub fn custom(
        base_lr: f64,
        scaling: LrScaling,
        reference_batch: usize,
        phases: Vec<LrPhase>,
    ) -> Result<Self, ScheduleError> {
        let schedule = LrSchedule {
            kind: ScheduleKind::Custom,
            base_lr,
            scaling,
            reference_batch,
            phases,
        };
        schedule.validate()?;
        Ok(schedule)
    }

    fn validate(&self) -> Result<(), ScheduleError> {
        if self.phases.is_empty() {
            return Err(ScheduleError::EmptyPhases);
        }
        let mut cursor = self.phases[0].start_epoch;
        if cursor != 0 {
            return Err(ScheduleError::NonContiguousPhases { index: 0 });
        }
        for (index, phase) in self.phases.iter().enumerate() {
            if phase.start_epoch != cursor {
                return Err(ScheduleError::NonContiguousPhases { index });
            }
            if phase.end_epoch <= phase.start_epoch {
                return Err(ScheduleError::EmptyPhase { index });
            }
            if phase.start.coeff <= 0.0 || phase.end.coeff <= 0.0 {
                return Err(ScheduleError::NonPositiveLr { index });
            }
            cursor = phase.end_epoch;
        }
        Ok(())
    }

    fn scale_factor(&self, batch_size: usize, degree_k: usize) -> f64 {
        let s = batch_size as f64 * (degree_k as f64 + 1.0) / self.reference_batch as f64;
        match self.scaling {
            LrScaling::None => 1.0,
            LrScaling::Linear => s,
            LrScaling::Sqrt => s.sqrt(),
        }
    }

    /// The learning rate at an epoch for the given batch size and graph degree.
    pub fn effective_lr(
        &self,
        epoch: usize,
        batch_size: usize,
        degree_k: usize,
    ) -> Result<f64, ScheduleError> {
        let phase = self
            .phases
            .iter()
            .find(|p| p.start_epoch <= epoch && epoch < p.end_epoch)
            .ok_or(ScheduleError::EpochOutOfSchedule { epoch })?;
        let scale = self.scale_factor(batch_size, degree_k);
        let start = phase.start.value(scale);
        let end = phase.end.value(scale);
        let span = (phase.end_epoch - phase.start_epoch) as f64;
        let t = (epoch - phase.start_epoch) as f64 / span;
        Ok(start + t * (end - start))
    }
}

/// Free-function form of [`LrSchedule::effective_lr`].
pub fn effective_lr(
    schedule: &LrSchedule,
    epoch: usize,
    batch_size: usize,
    degree_k: usize,
) -> Result<f64, ScheduleError> {
    schedule.effective_lr(epoch, batch_size, degree_k)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ada_degree_follows_the_clamped_linear_rule() {
        let p = AdaParams::new(10, 0.02, 2).unwrap();
        assert_eq!(ada_degree(&p, 0), 10);
        assert_eq!(ada_degree(&p, 100), 8);
        assert_eq!(ada_degree(&p, 299), 5);
        let p = AdaParams::new(112, 1.0, 2).unwrap();
        assert_eq!(ada_degree(&p, 200), 2);
        assert_eq!(ada_degree(&p, 110), 2);
        assert_eq!(ada_degree(&p, 109), 3);
    }

    #[test]
    fn ada_params_are_validated() {
        assert!(matches!(
            AdaParams::new(1, 0.5, 2),
            Err(ScheduleError::BadAdaBounds { .. })
        ));
        assert!(matches!(
            AdaParams::new(4, 0.0, 2),
            Err(ScheduleError::BadAdaDecay(_))
        ));
        let p = AdaParams::new(8, 1.0, 2).unwrap();
        assert!(p.validate_for_workers(17).is_ok());
        assert!(matches!(
            p.validate_for_workers(16),
            Err(ScheduleError::AdaTooDenseForWorkers { .. })
        ));
    }

    #[test]
    fn linear_scaling_matches_hand_computation() {
        // warmup 5 epochs, then constant scaled base
        let s = LrSchedule::warmup_multistep(0.1, LrScaling::Linear, 256, 5, &[], 90).unwrap();
        // post-warmup: s = 32 * (2 + 1) / 256 = 0.375
        let lr = s.effective_lr(10, 32, 2).unwrap();
        assert!((lr - 0.0375).abs() < 1e-15);
        // at epoch 0 the warmup starts from the unscaled base
        let lr0 = s.effective_lr(0, 32, 2).unwrap();
        assert!((lr0 - 0.1).abs() < 1e-15);
    }

    #[test]
    fn sqrt_scaling_takes_the_root_of_the_factor() {
        let s = LrSchedule::warmup_multistep(0.1, LrScaling::Sqrt, 256, 5, &[], 90).unwrap();
        let lr = s.effective_lr(10, 32, 2).unwrap();
        assert!((lr - 0.1 * 0.375f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn constant_schedule_covers_every_epoch() {
        let s = LrSchedule::constant(0.05).unwrap();
        assert_eq!(s.effective_lr(0, 8, 2).unwrap(), 0.05);
        assert_eq!(s.effective_lr(1_000_000, 128, 15).unwrap(), 0.05);
    }

    #[test]
    fn multistep_applies_milestone_factors() {
        let s = LrSchedule::warmup_multistep(
            0.1,
            LrScaling::None,
            256,
            5,
            &[(30, 0.1), (60, 0.01)],
            90,
        )
        .unwrap();
        assert!((s.effective_lr(20, 32, 2).unwrap() - 0.1).abs() < 1e-15);
        assert!((s.effective_lr(45, 32, 2).unwrap() - 0.01).abs() < 1e-15);
        assert!((s.effective_lr(89, 32, 2).unwrap() - 0.001).abs() < 1e-15);
        assert!(matches!(
            s.effective_lr(90, 32, 2),
            Err(ScheduleError::EpochOutOfSchedule { epoch: 90 })
        ));
    }

    #[test]
    fn one_cycle_ramps_through_the_three_phases() {
        let s =
            LrSchedule::one_cycle(0.15, 3.0, 0.015, LrScaling::Linear, 256, 23, 46, 300).unwrap();
        let scale = 128.0 * 3.0 / 256.0; // batch 128, degree 2
        assert!((s.effective_lr(0, 128, 2).unwrap() - 0.15).abs() < 1e-15);
        // end of ramp-up approaches the scaled peak
        let near_peak = s.effective_lr(22, 128, 2).unwrap();
        assert!(near_peak > 0.15 && near_peak < 3.0 * scale);
        assert!((s.effective_lr(23, 128, 2).unwrap() - 3.0 * scale).abs() < 1e-12);
        assert!((s.effective_lr(46, 128, 2).unwrap() - 0.15 * scale).abs() < 1e-12);
        let last = s.effective_lr(299, 128, 2).unwrap();
        assert!(last > 0.015 * scale && last < 0.15 * scale);
    }

    #[test]
    fn invalid_phase_tables_are_rejected() {
        assert!(matches!(
            LrSchedule::custom(0.1, LrScaling::None, 256, vec![]),
            Err(ScheduleError::EmptyPhases)
        ));
        let gap = vec![
            LrPhase {
                start_epoch: 0,
                end_epoch: 5,
                start: LrTerm::flat(0.1),
                end: LrTerm::flat(0.1),
            },
            LrPhase {
                start_epoch: 6,
                end_epoch: 10,
                start: LrTerm::flat(0.1),
                end: LrTerm::flat(0.1),
            },
        ];
        assert!(matches!(
            LrSchedule::custom(0.1, LrScaling::None, 256, gap),
            Err(ScheduleError::NonContiguousPhases { index: 1 })
        ));
        let negative = vec![LrPhase {
            start_epoch: 0,
            end_epoch: 5,
            start: LrTerm::flat(-0.1),
            end: LrTerm::flat(0.1),
        }];
        assert!(matches!(
            LrSchedule::custom(0.1, LrScaling::None, 256, negative),
            Err(ScheduleError::NonPositiveLr { index: 0 })
        ));
    }
}
