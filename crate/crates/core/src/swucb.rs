//! Sliding-window UCB bandit used as the sight-range meta-controller.
//!
//! Every statistic is defined over the trailing window of the last
//! `min(e, w)` recorded `(arm, reward)` pairs, where `e` is the number of
//! updates so far. Counts are kept exactly; per-arm reward sums are kept
//! incrementally and re-summed from the window every `w` updates so that
//! floating-point drift stays bounded on long runs.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// A sight range in grid cells (Chebyshev radius).
pub type SightRange = u32;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BanditError {
    #[error("arm set is empty")]
    EmptyArms,
    #[error("arm set must be strictly increasing without duplicates, got {0:?}")]
    UnorderedArms(Vec<SightRange>),
    #[error("window size must be at least 1")]
    ZeroWindow,
    #[error("exploration coefficient must be finite and non-negative, got {0}")]
    InvalidExploration(f64),
    #[error("arm index {index} out of range for {len} arms")]
    ArmOutOfRange { index: usize, len: usize },
    #[error("reward must be finite, got {0}")]
    NonFiniteReward(f64),
    #[error("window is empty; no arm has a mean reward yet")]
    EmptyWindow,
    #[error("inconsistent snapshot: {0}")]
    InvalidSnapshot(&'static str),
}

/// Ordered set of candidate sight ranges.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<SightRange>", into = "Vec<SightRange>")]
pub struct ArmSet(Vec<SightRange>);

impl ArmSet {
    pub fn new(arms: Vec<SightRange>) -> Result<Self, BanditError> {
        if arms.is_empty() {
            return Err(BanditError::EmptyArms);
        }
        if arms.windows(2).any(|p| p[0] >= p[1]) {
            return Err(BanditError::UnorderedArms(arms));
        }
        Ok(Self(arms))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, index: usize) -> Option<SightRange> {
        self.0.get(index).copied()
    }

    pub fn as_slice(&self) -> &[SightRange] {
        &self.0
    }

    /// Largest sight range in the set.
    pub fn max(&self) -> SightRange {
        *self.0.last().expect("arm set is never empty")
    }

    pub fn index_of(&self, d: SightRange) -> Option<usize> {
        self.0.binary_search(&d).ok()
    }
}

impl TryFrom<Vec<SightRange>> for ArmSet {
    type Error = BanditError;

    fn try_from(arms: Vec<SightRange>) -> Result<Self, Self::Error> {
        Self::new(arms)
    }
}

impl From<ArmSet> for Vec<SightRange> {
    fn from(arms: ArmSet) -> Self {
        arms.0
    }
}

/// One recorded episode outcome.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowEntry {
    pub arm: usize,
    pub reward: f64,
}

/// Sliding-window UCB over an [`ArmSet`].
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "Snapshot", into = "Snapshot")]
pub struct MetaController {
    arms: ArmSet,
    c: f64,
    w: usize,
    window: VecDeque<WindowEntry>,
    sums: Vec<f64>,
    counts: Vec<usize>,
    episodes: u64,
    since_resum: usize,
}

/// JSON checkpoint form: the arm set, constants, and window in order.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct Snapshot {
    arms: ArmSet,
    c: f64,
    w: usize,
    episodes: u64,
    window: Vec<WindowEntry>,
}

impl MetaController {
    pub fn new(arms: ArmSet, c: f64, w: usize) -> Result<Self, BanditError> {
        if w == 0 {
            return Err(BanditError::ZeroWindow);
        }
        if !c.is_finite() || c < 0.0 {
            return Err(BanditError::InvalidExploration(c));
        }
        let m = arms.len();
        Ok(Self {
            arms,
            c,
            w,
            window: VecDeque::with_capacity(w.min(1 << 16)),
            sums: vec![0.0; m],
            counts: vec![0; m],
            episodes: 0,
            since_resum: 0,
        })
    }

    pub fn arms(&self) -> &ArmSet {
        &self.arms
    }

    pub fn exploration(&self) -> f64 {
        self.c
    }

    pub fn window_size(&self) -> usize {
        self.w
    }

    /// Total number of updates recorded so far (`e`).
    pub fn episodes(&self) -> u64 {
        self.episodes
    }

    pub fn window(&self) -> impl ExactSizeIterator<Item = &WindowEntry> {
        self.window.iter()
    }

    fn check_arm(&self, index: usize) -> Result<(), BanditError> {
        if index < self.arms.len() {
            Ok(())
        } else {
            Err(BanditError::ArmOutOfRange {
                index,
                len: self.arms.len(),
            })
        }
    }

    /// Number of entries for `arm` among the trailing window.
    pub fn windowed_count(&self, arm: usize) -> Result<usize, BanditError> {
        self.check_arm(arm)?;
        Ok(self.counts[arm])
    }

    /// Windowed mean reward, or `None` when the arm has no windowed entries.
    pub fn windowed_mean(&self, arm: usize) -> Result<Option<f64>, BanditError> {
        self.check_arm(arm)?;
        Ok(match self.counts[arm] {
            0 => None,
            n => Some(self.sums[arm] / n as f64),
        })
    }

    /// `mean + c * sqrt(ln(min(e, w)) / n)`; `+inf` for arms absent from the window.
    pub fn ucb_score(&self, arm: usize) -> Result<f64, BanditError> {
        self.check_arm(arm)?;
        Ok(self.score_unchecked(arm))
    }

    fn score_unchecked(&self, arm: usize) -> f64 {
        let n = self.counts[arm];
        if n == 0 {
            return f64::INFINITY;
        }
        let n = n as f64;
        let horizon = self.window.len() as f64;
        self.sums[arm] / n + self.c * (horizon.ln() / n).sqrt()
    }

    /// Arm with the highest UCB score; lowest index wins ties.
    pub fn select(&self) -> (usize, SightRange) {
        let mut best = 0;
        let mut best_score = self.score_unchecked(0);
        for arm in 1..self.arms.len() {
            let score = self.score_unchecked(arm);
            if score > best_score {
                best = arm;
                best_score = score;
            }
        }
        (best, self.arms.as_slice()[best])
    }

    /// Records the reward for `arm`, evicting the oldest entry past `w`.
    pub fn update(&mut self, arm: usize, reward: f64) -> Result<(), BanditError> {
        self.check_arm(arm)?;
        if !reward.is_finite() {
            return Err(BanditError::NonFiniteReward(reward));
        }
        self.window.push_back(WindowEntry { arm, reward });
        self.sums[arm] += reward;
        self.counts[arm] += 1;
        if self.window.len() > self.w {
            let old = self.window.pop_front().expect("window is non-empty");
            self.sums[old.arm] -= old.reward;
            self.counts[old.arm] -= 1;
            if self.counts[old.arm] == 0 {
                self.sums[old.arm] = 0.0;
            }
        }
        self.episodes += 1;
        self.since_resum += 1;
        if self.since_resum >= self.w {
            self.resum();
        }
        Ok(())
    }

    fn resum(&mut self) {
        self.sums.iter_mut().for_each(|s| *s = 0.0);
        for entry in &self.window {
            self.sums[entry.arm] += entry.reward;
        }
        self.since_resum = 0;
    }

    /// Execution-time choice: the arm with the highest windowed mean.
    pub fn best_by_mean(&self) -> Result<(usize, SightRange), BanditError> {
        let mut best: Option<(usize, f64)> = None;
        for arm in 0..self.arms.len() {
            let n = self.counts[arm];
            if n == 0 {
                continue;
            }
            let mean = self.sums[arm] / n as f64;
            if best.map_or(true, |(_, m)| mean > m) {
                best = Some((arm, mean));
            }
        }
        best.map(|(arm, _)| (arm, self.arms.as_slice()[arm]))
            .ok_or(BanditError::EmptyWindow)
    }
}

impl From<MetaController> for Snapshot {
    fn from(mc: MetaController) -> Self {
        Snapshot {
            arms: mc.arms,
            c: mc.c,
            w: mc.w,
            episodes: mc.episodes,
            window: mc.window.into_iter().collect(),
        }
    }
}

impl TryFrom<Snapshot> for MetaController {
    type Error = BanditError;

    fn try_from(snap: Snapshot) -> Result<Self, Self::Error> {
        let mut mc = MetaController::new(snap.arms, snap.c, snap.w)?;
        if snap.window.len() > snap.w || (snap.window.len() as u64) > snap.episodes {
            return Err(BanditError::InvalidSnapshot("window longer than w or episode count"));
        }
        for entry in &snap.window {
            mc.check_arm(entry.arm)?;
            if !entry.reward.is_finite() {
                return Err(BanditError::NonFiniteReward(entry.reward));
            }
            mc.counts[entry.arm] += 1;
        }
        mc.window = snap.window.into();
        mc.episodes = snap.episodes;
        mc.resum();
        Ok(mc)
    }
}
