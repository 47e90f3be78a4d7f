use super::{classify, encode_step, DiscError, DiscriminatorParams};
use crate::nets::Scalar;
use crate::policy::{HeadSelector, SelectorInput, TASK_COUNT};
use crate::ppo::DatasetEpisode;
use crate::sim::{LegStatus, JOINTS};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrackerOutput {
    pub probabilities: [f64; TASK_COUNT],
    pub committed: LegStatus,
    /// The committed status changed on this tick.
    pub switched: bool,
}

/// Streaming discriminator for one robot: encoder state plus the hysteresis
/// selector that commits status changes.
#[derive(Clone, Debug)]
pub struct StatusTracker<T> {
    params: DiscriminatorParams<T>,
    hidden: Vec<T>,
    selector: HeadSelector,
}

impl<T: Scalar> StatusTracker<T> {
    pub fn new(params: DiscriminatorParams<T>, hysteresis: usize) -> Self {
        let hidden = params.initial_hidden();
        Self { params, hidden, selector: HeadSelector::new(hysteresis) }
    }

    /// Clears the encoder state and commits Health, as at an episode start.
    pub fn reset(&mut self) {
        self.hidden = self.params.initial_hidden();
        self.selector.reset();
    }

    pub fn committed(&self) -> LegStatus {
        self.selector.active().status()
    }

    /// Consumes one tick of joint angles and rates.
    pub fn push(&mut self, q: &[f64; JOINTS], qd: &[f64; JOINTS]) -> Result<TrackerOutput, DiscError> {
        let before = self.committed();
        let features = self.params.arch.features(q, qd);
        self.hidden = encode_step(&self.params, &features, &self.hidden)?;
        let probabilities = classify(&self.params, &self.hidden)?;
        let committed = self.selector.update(SelectorInput::Probabilities(probabilities))?.status();
        Ok(TrackerOutput { probabilities, committed, switched: committed != before })
    }
}

/// For every status change in `episodes`, the number of ticks until the
/// tracker commits the new status, or `None` if it does not before the next
/// change or the episode end.
pub fn switch_latencies<T: Scalar>(
    params: &DiscriminatorParams<T>,
    episodes: &[DatasetEpisode],
    hysteresis: usize,
) -> Result<Vec<Option<usize>>, DiscError> {
    let mut out = Vec::new();
    for ep in episodes {
        let mut tracker = StatusTracker::new(params.clone(), hysteresis);
        let committed: Vec<LegStatus> = ep
            .positions
            .iter()
            .zip(&ep.velocities)
            .map(|(q, qd)| tracker.push(q, qd).map(|o| o.committed))
            .collect::<Result<_, _>>()?;
        let changes: Vec<usize> = (1..ep.labels.len()).filter(|&t| ep.labels[t] != ep.labels[t - 1]).collect();
        for (k, &c) in changes.iter().enumerate() {
            let end = changes.get(k + 1).copied().unwrap_or(ep.labels.len());
            out.push((c..end).find(|&t| committed[t] == ep.labels[c]).map(|t| t - c));
        }
    }
    Ok(out)
}
