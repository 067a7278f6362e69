use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlateauMode {
    /// Compare the running best score across the window.
    BestSoFar,
    /// Compare each stage with the one right before it.
    Previous,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Plateau,
    MaxIterations,
    GeneratorFailure,
}

/// Whether the loop should stop after the last score in `scores`.
///
/// The last `window` stages must together add less than `epsilon`: in
/// best-so-far mode the running best over those stages rises by less than
/// `epsilon`; in previous mode every step between consecutive stages inside
/// the window is below `epsilon`. Nothing fires before stage `window + 1`.
pub fn plateau_reached(scores: &[f64], window: usize, epsilon: f64, mode: PlateauMode) -> bool {
    let t = scores.len();
    if window == 0 || t < window + 1 {
        return false;
    }
    let tail = &scores[t - window..];
    match mode {
        PlateauMode::BestSoFar => {
            let best_before = scores[..t - window + 1].iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let best_now = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            best_now - best_before < epsilon
        }
        PlateauMode::Previous => tail.windows(2).all(|w| w[1] - w[0] < epsilon),
    }
}

/// Replays a score sequence through the termination rule: the 1-based stage
/// at which the loop stops and why. `None` if the sequence ends first.
pub fn termination_stage(
    scores: &[f64],
    window: usize,
    epsilon: f64,
    mode: PlateauMode,
    max_iterations: usize,
) -> Option<(usize, Termination)> {
    for t in 1..=scores.len().min(max_iterations) {
        if plateau_reached(&scores[..t], window, epsilon, mode) {
            return Some((t, Termination::Plateau));
        }
        if t == max_iterations {
            return Some((t, Termination::MaxIterations));
        }
    }
    None
}

/// Index of the highest score, earliest on ties.
pub fn argmax_earliest(scores: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &s) in scores.iter().enumerate() {
        if best.is_none_or(|b| s > scores[b]) {
            best = Some(i);
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use PlateauMode::*;

    #[test]
    fn slow_gains_plateau_at_stage_five() {
        let s = [0.5, 0.6, 0.61, 0.612, 0.613];
        assert_eq!(termination_stage(&s, 3, 0.005, BestSoFar, 8), Some((5, Termination::Plateau)));
        assert_eq!(argmax_earliest(&s), Some(4));
    }

    #[test]
    fn steady_climb_hits_cap() {
        let s: Vec<f64> = (0..10).map(|i| 0.1 * i as f64).collect();
        assert_eq!(termination_stage(&s, 3, 0.005, BestSoFar, 8), Some((8, Termination::MaxIterations)));
    }

    #[test]
    fn flat_scores_stop_at_window_plus_one() {
        assert_eq!(termination_stage(&[0.3; 8], 3, 0.005, BestSoFar, 8), Some((4, Termination::Plateau)));
        assert_eq!(termination_stage(&[0.3; 8], 3, 0.005, Previous, 8), Some((4, Termination::Plateau)));
    }

    #[test]
    fn modes_differ_on_oscillation() {
        let s = [0.5, 0.7, 0.4, 0.72, 0.3, 0.71, 0.2, 0.9];
        assert_eq!(termination_stage(&s, 3, 0.005, BestSoFar, 8), Some((6, Termination::Plateau)));
        assert_eq!(termination_stage(&s, 3, 0.005, Previous, 8), Some((8, Termination::MaxIterations)));
    }

    #[test]
    fn ties_pick_earliest() {
        assert_eq!(argmax_earliest(&[0.2, 0.5, 0.5]), Some(1));
        assert_eq!(argmax_earliest(&[]), None);
    }
}
