use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{io_err, HarnessError, Result};
use crate::simcore::Metrics;
use crate::tune::TuneDecision;

/// One critique decision, and the tune step if the critique rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CtRecord {
    pub episode: usize,
    pub interval: usize,
    pub intersection: usize,
    pub dqn_phase: u8,
    pub predicted_reward: Option<f64>,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
    pub rejected: bool,
    pub tune: Option<TuneDecision>,
    pub applied_phase: u8,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EpisodeStats {
    pub episode: usize,
    pub eval: bool,
    pub epsilon: f64,
    pub metrics: Metrics,
    /// Mean reward per decision over all intersections.
    pub mean_reward: f64,
    pub intersection_rewards: Vec<f64>,
    pub decisions: usize,
    pub ct_active: bool,
    pub ct_decisions: usize,
    pub rejects: usize,
    pub overrides: usize,
    /// Critics that were fitted (not warm-up or degenerate).
    pub critics_ready: usize,
    pub td_loss: f64,
    pub prediction_loss: f64,
    pub wall_seconds: f64,
    /// Applied phases, interval-major then intersection order.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub actions: Option<Vec<u8>>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CtTotals {
    pub decisions: usize,
    pub rejects: usize,
    pub overrides: usize,
    pub reject_rate: f64,
    pub override_rate: f64,
}

impl CtTotals {
    pub fn from_episodes<'a>(eps: impl IntoIterator<Item = &'a EpisodeStats>) -> Self {
        let mut t = CtTotals::default();
        for e in eps {
            t.decisions += e.ct_decisions;
            t.rejects += e.rejects;
            t.overrides += e.overrides;
        }
        if t.decisions > 0 {
            t.reject_rate = t.rejects as f64 / t.decisions as f64;
            t.override_rate = t.overrides as f64 / t.decisions as f64;
        }
        t
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub controller: String,
    pub seed: u64,
    pub config_hash: String,
    pub episodes: Vec<EpisodeStats>,
    pub final_eval: Option<EpisodeStats>,
    /// Metrics of the final evaluation episode, or of the last training
    /// episode when there is none.
    pub final_metrics: Metrics,
    pub final_reward: f64,
    pub ct: CtTotals,
    pub wall_seconds: f64,
    /// Set when a component error stopped the run early.
    pub aborted: Option<String>,
}

impl RunReport {
    /// Copy with every wall-clock field zeroed, for determinism checks.
    pub fn without_timing(&self) -> Self {
        let mut r = self.clone();
        r.wall_seconds = 0.0;
        for e in r.episodes.iter_mut().chain(r.final_eval.iter_mut()) {
            e.wall_seconds = 0.0;
        }
        r
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| HarnessError::Serde(e.to_string()))
    }

    /// One row per episode (training then evaluation).
    pub fn episodes_csv(&self) -> String {
        let n = self
            .episodes
            .iter()
            .chain(&self.final_eval)
            .map(|e| e.intersection_rewards.len())
            .max()
            .unwrap_or(0);
        let mut s = String::from(
            "episode,eval,epsilon,att,aql,awt,mean_reward,decisions,ct_active,ct_decisions,rejects,overrides,critics_ready,td_loss,prediction_loss,wall_seconds",
        );
        for i in 0..n {
            let _ = write!(s, ",reward_{i}");
        }
        s.push('\n');
        for e in self.episodes.iter().chain(&self.final_eval) {
            let _ = write!(
                s,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                e.episode,
                e.eval,
                e.epsilon,
                e.metrics.att,
                e.metrics.aql,
                e.metrics.awt,
                e.mean_reward,
                e.decisions,
                e.ct_active,
                e.ct_decisions,
                e.rejects,
                e.overrides,
                e.critics_ready,
                e.td_loss,
                e.prediction_loss,
                e.wall_seconds
            );
            for i in 0..n {
                match e.intersection_rewards.get(i) {
                    Some(r) => {
                        let _ = write!(s, ",{r}");
                    }
                    None => s.push(','),
                }
            }
            s.push('\n');
        }
        s
    }

    /// `results.json` and `episodes.csv` in `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        let p = dir.join("results.json");
        std::fs::write(&p, self.to_json()?).map_err(io_err(&p))?;
        let p = dir.join("episodes.csv");
        std::fs::write(&p, self.episodes_csv()).map_err(io_err(&p))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_has_one_row_per_episode() {
        let e = EpisodeStats {
            episode: 1,
            intersection_rewards: vec![-1.0, -2.0],
            ..Default::default()
        };
        let r = RunReport {
            controller: "dqn".into(),
            seed: 0,
            config_hash: String::new(),
            episodes: vec![e.clone(), EpisodeStats { episode: 2, ..e.clone() }],
            final_eval: Some(EpisodeStats { eval: true, ..e }),
            final_metrics: Metrics::default(),
            final_reward: 0.0,
            ct: CtTotals::default(),
            wall_seconds: 1.0,
            aborted: None,
        };
        let csv = r.episodes_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 4);
        assert!(lines[0].ends_with("reward_0,reward_1"));
        assert!(lines[3].starts_with("1,true,"));
        let cols = lines[0].split(',').count();
        assert!(lines.iter().all(|l| l.split(',').count() == cols));
    }

    #[test]
    fn rates() {
        let e = EpisodeStats {
            ct_decisions: 10,
            rejects: 4,
            overrides: 3,
            ..Default::default()
        };
        let t = CtTotals::from_episodes([&e, &e]);
        assert_eq!((t.decisions, t.rejects, t.overrides), (20, 8, 6));
        assert_eq!(t.reject_rate, 0.4);
    }
}
