//! Three-phase training plan: initialization (warm-up), balanced (cosine
//! decay) and finalization (per-group reduced learning rate with per-domain
//! early stopping).

use std::collections::BTreeMap;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::corpus::DomainId;
use crate::error::{Error, Result};

pub const INIT_FRACTION: f64 = 0.2;
pub const BALANCED_FRACTION: f64 = 0.6;
pub const FINAL_FRACTION: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Init,
    Balanced,
    Final,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EarlyStopConfig {
    pub patience: usize,
    pub min_delta: f64,
}

impl Default for EarlyStopConfig {
    fn default() -> Self {
        EarlyStopConfig {
            patience: 3,
            min_delta: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhasePlan {
    pub total_steps: usize,
    pub init_fraction: f64,
    pub balanced_fraction: f64,
    pub final_fraction: f64,
    pub warmup_steps: usize,
    pub lr_max: f64,
    pub lr_min: f64,
    /// Multiplicative learning-rate factors applied per parameter group during
    /// finalization. The reference trainer uses `[weights, bias]`.
    pub layer_scales: Vec<f64>,
    pub early_stopping: EarlyStopConfig,
}

impl PhasePlan {
    /// Plan with default hyperparameters: `lr_max = 2e-4`, `lr_min = 0`,
    /// warm-up over the first tenth of the run, layer scales `[1.0, 0.5]`.
    pub fn new(total_steps: usize) -> Self {
        PhasePlan {
            total_steps,
            init_fraction: INIT_FRACTION,
            balanced_fraction: BALANCED_FRACTION,
            final_fraction: FINAL_FRACTION,
            warmup_steps: total_steps / 10,
            lr_max: 2e-4,
            lr_min: 0.0,
            layer_scales: vec![1.0, 0.5],
            early_stopping: EarlyStopConfig::default(),
        }
    }

    pub fn with_lr(mut self, lr_max: f64, lr_min: f64) -> Self {
        self.lr_max = lr_max;
        self.lr_min = lr_min;
        self
    }

    pub fn with_warmup(mut self, warmup_steps: usize) -> Self {
        self.warmup_steps = warmup_steps;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let sum = self.init_fraction + self.balanced_fraction + self.final_fraction;
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::Config(format!("phase fractions sum to {sum}, expected 1")));
        }
        if self.warmup_steps > self.init_boundary() {
            return Err(Error::Config(format!(
                "warmup_steps {} exceeds the initialization boundary {}",
                self.warmup_steps,
                self.init_boundary()
            )));
        }
        if !(self.lr_max > 0.0 && self.lr_min >= 0.0 && self.lr_min < self.lr_max) {
            return Err(Error::Config(format!(
                "need 0 <= lr_min < lr_max, got lr_min={} lr_max={}",
                self.lr_min, self.lr_max
            )));
        }
        if self.layer_scales.iter().any(|&s| !(s > 0.0 && s <= 1.0)) {
            return Err(Error::Config("layer scales must lie in (0, 1]".into()));
        }
        Ok(())
    }

    /// First step of the balanced phase, ⌊0.2·T⌋.
    pub fn init_boundary(&self) -> usize {
        (self.total_steps as f64 * self.init_fraction).floor() as usize
    }

    /// First step of the finalization phase, ⌊0.8·T⌋.
    pub fn final_boundary(&self) -> usize {
        (self.total_steps as f64 * (self.init_fraction + self.balanced_fraction)).floor() as usize
    }

    fn check_step(&self, step: usize) -> Result<()> {
        if step >= self.total_steps {
            return Err(Error::Contract(format!(
                "step {step} outside [0, {})",
                self.total_steps
            )));
        }
        Ok(())
    }

    pub fn phase_of(&self, step: usize) -> Result<Phase> {
        self.check_step(step)?;
        Ok(if step < self.init_boundary() {
            Phase::Init
        } else if step < self.final_boundary() {
            Phase::Balanced
        } else {
            Phase::Final
        })
    }

    /// Base learning rate at `step`, before any per-group scale.
    ///
    /// Linear warm-up from 0 to `lr_max` over `warmup_steps`, then a
    /// half-cosine from `lr_max` down to `lr_min` reached at the finalization
    /// boundary, held constant afterwards. With `warmup_steps == 0` step 0
    /// already returns `lr_max`.
    pub fn lr_at(&self, step: usize) -> Result<f64> {
        self.check_step(step)?;
        let w = self.warmup_steps;
        let f = self.final_boundary();
        if step < w {
            return Ok(self.lr_max * step as f64 / w as f64);
        }
        if step >= f || f == w {
            return Ok(self.lr_min);
        }
        let progress = (step - w) as f64 / (f - w) as f64;
        Ok(self.lr_min + 0.5 * (self.lr_max - self.lr_min) * (1.0 + (PI * progress).cos()))
    }

    /// Per-group multipliers in effect at `step`: all ones before the
    /// finalization phase, `layer_scales` within it.
    pub fn scales_at(&self, step: usize) -> Result<Vec<f64>> {
        Ok(match self.phase_of(step)? {
            Phase::Final => self.layer_scales.clone(),
            _ => vec![1.0; self.layer_scales.len()],
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainStopState {
    pub best_score: Option<f64>,
    pub evals_since_improvement: usize,
    pub frozen: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopUpdate {
    Improved,
    NoImprovement,
    /// This update froze the domain.
    Frozen,
    /// The domain was already frozen; nothing changed.
    AlreadyFrozen,
}

/// Per-domain early-stopping bookkeeping. Once frozen a domain stays frozen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EarlyStopState {
    pub config: EarlyStopConfig,
    pub domains: BTreeMap<DomainId, DomainStopState>,
}

impl EarlyStopState {
    pub fn new(config: EarlyStopConfig) -> Self {
        EarlyStopState {
            config,
            domains: BTreeMap::new(),
        }
    }

    pub fn is_frozen(&self, domain: &DomainId) -> bool {
        self.domains.get(domain).is_some_and(|s| s.frozen)
    }

    pub fn frozen_domains(&self) -> Vec<DomainId> {
        self.domains
            .iter()
            .filter(|(_, s)| s.frozen)
            .map(|(d, _)| d.clone())
            .collect()
    }

    /// Record a new validation macro F1 for `domain`.
    ///
    /// The score improves when it exceeds the best so far by more than
    /// `min_delta`; the first score always does. Non-improving evaluations
    /// increment a counter and the domain freezes once it reaches `patience`.
    pub fn update(&mut self, domain: &DomainId, score: f64) -> Result<StopUpdate> {
        if !(0.0..=1.0).contains(&score) {
            return Err(Error::Contract(format!("score {score} outside [0, 1]")));
        }
        let cfg = self.config;
        let st = self.domains.entry(domain.clone()).or_insert(DomainStopState {
            best_score: None,
            evals_since_improvement: 0,
            frozen: false,
        });
        if st.frozen {
            log::warn!("early-stop update on frozen domain `{domain}` ignored");
            return Ok(StopUpdate::AlreadyFrozen);
        }
        let improved = st.best_score.is_none_or(|best| score > best + cfg.min_delta);
        if improved {
            st.best_score = Some(score);
            st.evals_since_improvement = 0;
            return Ok(StopUpdate::Improved);
        }
        st.evals_since_improvement += 1;
        if st.evals_since_improvement >= cfg.patience {
            st.frozen = true;
            Ok(StopUpdate::Frozen)
        } else {
            Ok(StopUpdate::NoImprovement)
        }
    }
}
