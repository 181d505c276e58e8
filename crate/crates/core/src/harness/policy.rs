//! Non-learning baseline controllers.

use rand::Rng;

use crate::dqn::NUM_ACTIONS;
use crate::netmodel::{phase_scheme, turn_target, LaneKind};
use crate::simcore::RawObservation;

/// Fixed cycle through phases 1..=8, one phase per control interval.
pub fn fixed_time(interval: usize) -> u8 {
    (interval % NUM_ACTIONS) as u8 + 1
}

/// Pressure of one controlled upstream lane: its queue minus the mean queue
/// on the road it discharges into.
fn lane_pressure(obs: &RawObservation, approach: usize, kind: LaneKind) -> f64 {
    let dir = crate::netmodel::Direction::ALL[approach];
    let exit = turn_target(dir, kind).index();
    let up = f64::from(obs.upstream[approach][kind.index()].waiting);
    let down: f64 = obs.downstream[exit].iter().map(|c| f64::from(c.waiting)).sum::<f64>() / 3.0;
    up - down
}

/// Summed movement pressure of every phase, in phase order.
pub fn phase_pressures(obs: &RawObservation) -> [f64; NUM_ACTIONS] {
    std::array::from_fn(|j| {
        phase_scheme(j as u8 + 1)
            .expect("phases 1..=8 exist")
            .iter()
            .map(|(d, k)| lane_pressure(obs, d.index(), *k))
            .sum()
    })
}

/// Phase with the largest summed pressure; lowest index on ties.
pub fn max_pressure(obs: &RawObservation) -> u8 {
    crate::dqn::argmax(&phase_pressures(obs)) as u8 + 1
}

pub fn random_phase<R: Rng + ?Sized>(rng: &mut R) -> u8 {
    rng.random_range(1..=NUM_ACTIONS as u8)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netmodel::{Direction, IntersectionId};
    use crate::simcore::LaneCounts;

    fn empty() -> RawObservation {
        RawObservation {
            intersection: IntersectionId(0),
            phase: 1,
            upstream: [[LaneCounts::default(); 3]; 4],
            downstream: [[LaneCounts::default(); 3]; 4],
            neighbor_queues: [0.0; 4],
        }
    }

    #[test]
    fn fixed_cycle() {
        let seq: Vec<u8> = (0..10).map(fixed_time).collect();
        assert_eq!(seq, vec![1, 2, 3, 4, 5, 6, 7, 8, 1, 2]);
    }

    #[test]
    fn max_pressure_follows_the_queue() {
        let mut o = empty();
        assert_eq!(max_pressure(&o), 1);
        // Heavy northbound-approach through queue: some phase serving it wins.
        o.upstream[Direction::N.index()][LaneKind::Straight.index()].waiting = 20;
        let p = max_pressure(&o);
        assert!(phase_scheme(p).unwrap().contains(&(Direction::N, LaneKind::Straight)));
        // A blocked exit lowers the pressure.
        let exit = turn_target(Direction::N, LaneKind::Straight).index();
        let before = phase_pressures(&o)[usize::from(p) - 1];
        o.downstream[exit] = [LaneCounts { waiting: 9, running: 0 }; 3];
        assert!(phase_pressures(&o)[usize::from(p) - 1] < before);
    }
}
