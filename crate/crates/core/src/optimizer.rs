//! Adam with separate learning rates for the spectral weights and the rest,
//! element-wise clipping and step-decay schedules.

use serde::{Deserialize, Serialize};

use crate::autodiff::Gradients;
use crate::error::{Error, Result};
use crate::model::{ModelParams, TensorGroup};

/// Which tensors the element-wise clip touches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClipScope {
    #[default]
    SpectralOnly,
    All,
}

/// Whether the clip bounds the raw gradient entering the moments or the
/// normalized Adam direction before it is scaled by the learning rate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClipPlacement {
    #[default]
    Gradient,
    Update,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClipConfig {
    pub value: f64,
    #[serde(default)]
    pub scope: ClipScope,
    #[serde(default)]
    pub placement: ClipPlacement,
}

impl ClipConfig {
    pub fn spectral(value: f64) -> Self {
        Self {
            value,
            scope: ClipScope::SpectralOnly,
            placement: ClipPlacement::Gradient,
        }
    }
}

fn in_scope(scope: ClipScope, group: TensorGroup) -> bool {
    scope == ClipScope::All || group == TensorGroup::Spectral
}

/// Clamp every scalar component (real and imaginary parts separately) of the
/// in-scope gradients to `[-c, c]`.
pub fn clip_elementwise(grads: &Gradients, c: f64, scope: ClipScope) -> Gradients {
    let mut out = grads.clone();
    clip_in_place(&mut out, c, scope);
    out
}

pub(crate) fn clip_in_place(grads: &mut Gradients, c: f64, scope: ClipScope) {
    for t in grads.tensors_mut() {
        if in_scope(scope, t.group) {
            t.data.iter_mut().for_each(|g| *g = g.clamp(-c, c));
        }
    }
}

/// Multiplicative step decay at sorted milestones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LrSchedule {
    #[serde(default)]
    pub milestones: Vec<usize>,
    #[serde(default = "half")]
    pub factor: f64,
}

fn half() -> f64 {
    0.5
}

impl Default for LrSchedule {
    fn default() -> Self {
        Self {
            milestones: Vec::new(),
            factor: 0.5,
        }
    }
}

impl LrSchedule {
    pub fn new(milestones: Vec<usize>, factor: f64) -> Self {
        Self { milestones, factor }
    }

    /// Decay every `period` steps up to (excluding) `until`.
    pub fn every(period: usize, until: usize, factor: f64) -> Self {
        let milestones = if period == 0 {
            Vec::new()
        } else {
            (1..).map(|i| i * period).take_while(|&s| s < until).collect()
        };
        Self { milestones, factor }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.factor > 0.0 && self.factor <= 1.0) {
            return Err(Error::config(
                "train.schedule.factor",
                format!("must lie in (0, 1], got {}", self.factor),
            ));
        }
        if self.milestones.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::config(
                "train.schedule.milestones",
                "must be strictly increasing",
            ));
        }
        Ok(())
    }

    /// `base * factor^(number of milestones <= step)`.
    pub fn lr_at(&self, base_lr: f64, step: usize) -> f64 {
        let passed = self.milestones.iter().take_while(|&&m| m <= step).count();
        base_lr * self.factor.powi(passed as i32)
    }
}

/// Learning rates of the two parameter groups for one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrGroups {
    pub spectral: f64,
    pub other: f64,
}

impl LrGroups {
    fn of(&self, group: TensorGroup) -> f64 {
        match group {
            TensorGroup::Spectral => self.spectral,
            TensorGroup::Other => self.other,
        }
    }
}

/// First and second moments mirroring the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: ModelParams,
    pub v: ModelParams,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    update_clip: Option<(f64, ClipScope)>,
}

impl AdamState {
    pub fn new(params: &ModelParams, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
            beta1,
            beta2,
            eps,
            update_clip: None,
        }
    }

    /// Clamp the normalized direction `m_hat / (sqrt(v_hat) + eps)` of in-scope
    /// tensors to `[-c, c]` before scaling by the learning rate.
    pub fn with_update_clip(mut self, c: f64, scope: ClipScope) -> Self {
        self.update_clip = Some((c, scope));
        self
    }
}

/// One bias-corrected Adam step. Tensors are visited in declaration order.
/// Non-finite gradients reject the step and leave everything untouched.
pub fn adam_step(
    params: &mut ModelParams,
    grads: &Gradients,
    state: &mut AdamState,
    lr: LrGroups,
) -> Result<()> {
    if lr.spectral < 0.0 || lr.other < 0.0 {
        return Err(Error::Domain("learning rates must be non-negative".into()));
    }
    grads.check_finite()?;
    state.t += 1;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);
    let bias1 = 1.0 - b1.powi(state.t as i32);
    let bias2 = 1.0 - b2.powi(state.t as i32);
    let clip = state.update_clip;

    let mut ps = params.tensors_mut();
    let gs = grads.tensors();
    let mut ms = state.m.tensors_mut();
    let mut vs = state.v.tensors_mut();
    for (((p, g), m), v) in ps.iter_mut().zip(&gs).zip(ms.iter_mut()).zip(vs.iter_mut()) {
        let rate = lr.of(p.group);
        let bound = clip.filter(|(_, scope)| in_scope(*scope, p.group)).map(|(c, _)| c);
        for i in 0..p.data.len() {
            let gi = g.data[i];
            m.data[i] = b1 * m.data[i] + (1.0 - b1) * gi;
            v.data[i] = b2 * v.data[i] + (1.0 - b2) * gi * gi;
            let mut dir = (m.data[i] / bias1) / ((v.data[i] / bias2).sqrt() + eps);
            if let Some(c) = bound {
                dir = dir.clamp(-c, c);
            }
            p.data[i] -= rate * dir;
        }
    }
    drop(ps);
    params.enforce_constraints();
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_params, FnoConfig};
    use crate::numerics::SeededRng;
    use crate::parametrization::Parametrization;
    use proptest::prelude::*;

    fn small() -> (ModelParams, Gradients) {
        let config = FnoConfig::new(1, 2, 2);
        let p = init_params(&config, &Parametrization::standard(0.5), &SeededRng::new(1)).unwrap();
        let g = Gradients::zeros_like(&p);
        (p, g)
    }

    fn fill(g: &mut Gradients, value: f64) {
        for t in g.tensors_mut() {
            t.data.iter_mut().for_each(|v| *v = value);
        }
        g.enforce_constraints();
    }

    #[test]
    fn clip_examples() {
        let (_, mut g) = small();
        fill(&mut g, 0.5);
        let clipped = clip_elementwise(&g, 0.01, ClipScope::SpectralOnly);
        for t in clipped.tensors() {
            let expected = if t.group == TensorGroup::Spectral { 0.01 } else { 0.5 };
            assert!(t.data.iter().all(|v| *v == expected || *v == 0.0), "{}", t.name);
        }
        fill(&mut g, -0.003);
        let clipped = clip_elementwise(&g, 0.01, ClipScope::All);
        assert!(clipped.tensors().iter().all(|t| t.data.iter().all(|v| *v == -0.003 || *v == 0.0)));
        let (_, zero) = small();
        assert_eq!(clip_elementwise(&zero, 0.01, ClipScope::All), zero);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let (mut p, mut g) = small();
        for t in p.tensors_mut() {
            t.data.iter_mut().for_each(|v| *v = 0.0);
        }
        fill(&mut g, 0.5);
        let mut state = AdamState::new(&p, 0.9, 0.999, 1e-8);
        adam_step(&mut p, &g, &mut state, LrGroups { spectral: 0.1, other: 0.1 }).unwrap();
        assert!((p.lift.weight()[0] + 0.1).abs() < 1e-6);
        let r = p.blocks[0].spectral.raw();
        assert!((r[0] + 0.1).abs() < 1e-6);
        // DC imaginary part stays zero
        assert_eq!(r[1], 0.0);
    }

    #[test]
    fn zero_lr_updates_moments_only() {
        let (mut p, mut g) = small();
        fill(&mut g, 0.2);
        let before = p.clone();
        let mut state = AdamState::new(&p, 0.9, 0.999, 1e-8);
        adam_step(&mut p, &g, &mut state, LrGroups { spectral: 0.0, other: 0.0 }).unwrap();
        assert_eq!(p, before);
        assert!((state.m.lift.weight()[0] - 0.02).abs() < 1e-15);
        assert_eq!(state.t, 1);
    }

    #[test]
    fn group_learning_rates() {
        // first step: |update| = lr * g / (|g| + eps) per entry
        let (mut p, mut g) = small();
        fill(&mut g, 0.3);
        let before = p.clone();
        let mut state = AdamState::new(&p, 0.9, 0.999, 1e-8);
        adam_step(&mut p, &g, &mut state, LrGroups { spectral: 1e-3, other: 2e-3 }).unwrap();
        let ds = (p.blocks[0].spectral.raw()[0] - before.blocks[0].spectral.raw()[0]).abs();
        let dother = (p.lift.weight()[0] - before.lift.weight()[0]).abs();
        let oracle = |lr: f64| lr * 0.3 / (0.3 + 1e-8);
        assert!((ds - oracle(1e-3)).abs() < 1e-15);
        assert!((dother - oracle(2e-3)).abs() < 1e-15);
        assert!((ds / dother - 0.5).abs() < 1e-9);
    }

    #[test]
    fn rejects_nan() {
        let (mut p, mut g) = small();
        g.tensors_mut()[0].data[0] = f64::NAN;
        let before = p.clone();
        let mut state = AdamState::new(&p, 0.9, 0.999, 1e-8);
        let err = adam_step(&mut p, &g, &mut state, LrGroups { spectral: 1.0, other: 1.0 });
        assert!(matches!(err, Err(Error::NumericDivergence { .. })));
        assert_eq!(p, before);
        assert_eq!(state.t, 0);
    }

    #[test]
    fn schedule_examples() {
        let s = LrSchedule::new(vec![50, 100], 0.5);
        assert_eq!(s.lr_at(1e-3, 49), 1e-3);
        assert_eq!(s.lr_at(1e-3, 50), 5e-4);
        assert_eq!(s.lr_at(1e-3, 120), 2.5e-4);
        assert_eq!(LrSchedule::every(50, 160, 0.5).milestones, vec![50, 100, 150]);
        assert!(LrSchedule::new(vec![5, 5], 0.5).validate().is_err());
        assert!(LrSchedule::new(vec![], 1.5).validate().is_err());
    }

    proptest! {
        #[test]
        fn clipped_spectral_entries_are_bounded(seed in any::<u64>(), c in 1e-4f64..1.0) {
            let (_, mut g) = small();
            let mut rng = SeededRng::new(seed);
            for t in g.tensors_mut() {
                t.data.iter_mut().for_each(|v| *v = 10.0 * rng.normal());
            }
            let clipped = clip_elementwise(&g, c, ClipScope::SpectralOnly);
            for t in clipped.tensors() {
                if t.group == TensorGroup::Spectral {
                    prop_assert!(t.data.iter().all(|v| (-c..=c).contains(v)));
                }
            }
        }

        #[test]
        fn adam_updates_stay_bounded(seed in any::<u64>(), steps in 1usize..60) {
            let (mut p, mut g) = small();
            let mut rng = SeededRng::new(seed);
            let lr = 1e-2;
            let mut state = AdamState::new(&p, 0.9, 0.999, 1e-8);
            for _ in 0..steps {
                for t in g.tensors_mut() {
                    t.data.iter_mut().for_each(|v| *v = rng.normal() * 5.0);
                }
                g.enforce_constraints();
                let before = p.clone();
                adam_step(&mut p, &g, &mut state, LrGroups { spectral: lr, other: lr }).unwrap();
                for (a, b) in p.tensors().iter().zip(before.tensors()) {
                    for (x, y) in a.data.iter().zip(b.data) {
                        prop_assert!((x - y).abs() <= 3.0 * lr);
                    }
                }
            }
        }

        #[test]
        fn adam_is_deterministic(seed in any::<u64>()) {
            let (p0, mut g) = small();
            let mut rng = SeededRng::new(seed);
            for t in g.tensors_mut() {
                t.data.iter_mut().for_each(|v| *v = rng.normal());
            }
            let run = || {
                let mut p = p0.clone();
                let mut s = AdamState::new(&p, 0.9, 0.98, 1e-8);
                adam_step(&mut p, &g, &mut s, LrGroups { spectral: 1e-3, other: 3e-3 }).unwrap();
                p
            };
            let (a, b) = (run(), run());
            for (x, y) in a.tensors().iter().zip(b.tensors()) {
                for (u, v) in x.data.iter().zip(y.data) {
                    prop_assert_eq!(u.to_bits(), v.to_bits());
                }
            }
        }
    }
}
