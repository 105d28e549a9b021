//! Host-side SSVEP classification of a recorded or live EEG stream.

use biogap_core::ssvep::{classify_record, SlidingClassifier, SsvepConfig, SsvepError, WindowDecision};
use biogap_core::synth::StimulusSegment;
use biogap_core::runtime::TICK_RATE;
use serde::{Deserialize, Serialize};

use crate::reassembly::ExgBlock;

/// Runs the sliding classifier frame by frame, as the live gateway does.
pub fn host_classify(block: &ExgBlock, window_s: f64, hop_s: f64, config: &SsvepConfig) -> Result<Vec<WindowDecision>, SsvepError> {
    let mut clf = SlidingClassifier::new(block.data.len(), block.sample_rate as f64, window_s, hop_s, config.clone())?;
    let mut frame = vec![0.0; block.data.len()];
    let mut out = Vec::new();
    for i in 0..block.ticks.len() {
        for (v, col) in frame.iter_mut().zip(&block.data) {
            *v = col[i];
        }
        out.extend(clf.push(&frame)?);
    }
    Ok(out)
}

/// Batch classification of the whole block on the same window grid.
pub fn offline_classify(block: &ExgBlock, window_s: f64, hop_s: f64, config: &SsvepConfig) -> Result<Vec<WindowDecision>, SsvepError> {
    classify_record(&block.data, block.sample_rate as f64, window_s, hop_s, config)
}

/// Decisions of the windows lying inside one protocol segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentOutcome {
    pub segment: StimulusSegment,
    pub windows: usize,
    /// Windows per decided frequency, `None` meaning no detection.
    pub votes: Vec<(Option<f64>, usize)>,
    /// Most frequent decision; ties go to "none" then to the lower frequency.
    pub majority: Option<f64>,
}

impl SegmentOutcome {
    pub fn correct(&self) -> bool {
        let want = (!self.segment.is_rest()).then_some(self.segment.freq);
        self.windows > 0 && self.majority == want
    }
}

/// Groups window decisions by the segment containing each whole window.
/// `start_tick` is the tick of sample 0 of the classified block.
pub fn segment_outcomes(
    decisions: &[WindowDecision],
    sample_rate: f64,
    start_tick: u64,
    window_s: f64,
    segments: &[StimulusSegment],
) -> Vec<SegmentOutcome> {
    let t0 = start_tick as f64 / TICK_RATE as f64;
    segments
        .iter()
        .map(|seg| {
            let mut votes: Vec<(Option<f64>, usize)> = Vec::new();
            let mut windows = 0;
            for d in decisions {
                let end = t0 + d.end_sample as f64 / sample_rate;
                if end - window_s < seg.start - 1e-9 || end > seg.end + 1e-9 {
                    continue;
                }
                windows += 1;
                match votes.iter_mut().find(|(f, _)| *f == d.result.decision) {
                    Some((_, n)) => *n += 1,
                    None => votes.push((d.result.decision, 1)),
                }
            }
            votes.sort_by(|a, b| match (a.0, b.0) {
                (None, None) => std::cmp::Ordering::Equal,
                (None, _) => std::cmp::Ordering::Less,
                (_, None) => std::cmp::Ordering::Greater,
                (Some(x), Some(y)) => x.total_cmp(&y),
            });
            let majority = votes.iter().fold(None::<(Option<f64>, usize)>, |best, &(f, n)| match best {
                Some((_, bn)) if bn >= n => best,
                _ => Some((f, n)),
            });
            SegmentOutcome { segment: *seg, windows, majority: majority.and_then(|m| m.0), votes }
        })
        .collect()
}
