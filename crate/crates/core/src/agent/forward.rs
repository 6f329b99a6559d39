use std::fmt;

use rand::{Rng, RngCore};

use crate::stream::FrameRecord;

/// Anything that picks a jump length from the current frame.
pub trait SkipPolicy: Send + Sync + fmt::Debug {
    /// Largest jump the policy may return.
    fn action_space(&self) -> usize;

    /// Jump length in `1..=action_space()`.
    fn choose(&self, frame: &FrameRecord, rng: &mut dyn RngCore) -> usize;
}

/// Constant stride; the uniform-sampling baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FixedSkip {
    pub stride: usize,
}

impl SkipPolicy for FixedSkip {
    fn action_space(&self) -> usize {
        self.stride.max(1)
    }

    fn choose(&self, _frame: &FrameRecord, _rng: &mut dyn RngCore) -> usize {
        self.stride.max(1)
    }
}

/// Uniformly random jump in `1..=max_skip`; the random-skip baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RandomSkip {
    pub max_skip: usize,
}

impl SkipPolicy for RandomSkip {
    fn action_space(&self) -> usize {
        self.max_skip.max(1)
    }

    fn choose(&self, _frame: &FrameRecord, rng: &mut dyn RngCore) -> usize {
        rng.random_range(1..=self.max_skip.max(1))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectedFrame {
    pub index: usize,
    pub feature: Vec<f32>,
}

/// Frames one agent kept during one adaptation period. Every selected frame
/// was processed and nothing else was, so `processed_count == selected.len()`.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionBuffer {
    pub view_id: usize,
    pub period: usize,
    pub selected: Vec<SelectedFrame>,
}

impl SelectionBuffer {
    pub fn new(view_id: usize, period: usize, selected: Vec<SelectedFrame>) -> Self {
        debug_assert!(selected.windows(2).all(|w| w[0].index < w[1].index));
        Self {
            view_id,
            period,
            selected,
        }
    }

    pub fn processed_count(&self) -> usize {
        self.selected.len()
    }

    pub fn is_empty(&self) -> bool {
        self.selected.is_empty()
    }

    pub fn len(&self) -> usize {
        self.selected.len()
    }

    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.selected.iter().map(|f| f.index)
    }
}

/// Runs `policy` over one period's `segment`, starting `start_offset` frames
/// into it. Returns the selection and how far the last jump overshot the
/// segment end (the next period's start offset).
pub fn fast_forward_period(
    policy: &dyn SkipPolicy,
    view_id: usize,
    period: usize,
    segment: &[FrameRecord],
    start_offset: usize,
    rng: &mut dyn RngCore,
) -> (SelectionBuffer, usize) {
    let max = policy.action_space().max(1);
    let mut pos = start_offset;
    let mut selected = Vec::new();
    while pos < segment.len() {
        let frame = &segment[pos];
        selected.push(SelectedFrame {
            index: frame.index,
            feature: frame.feature.clone(),
        });
        let action = policy.choose(frame, rng);
        debug_assert!((1..=max).contains(&action), "action {action} outside 1..={max}");
        pos += action.clamp(1, max);
    }
    let carryover = pos - segment.len();
    (SelectionBuffer::new(view_id, period, selected), carryover)
}
