//! Air-interface link model.
//!
//! Each transmitted PDU experiences a fixed one-way latency (propagation
//! plus serialization plus the receive-side MAC turnaround) and an
//! independent Bernoulli erasure. Losses are drawn from a per-link named
//! RNG stream so the two directions and multiple cells never share dice.

use crate::engine::{EngineError, RngStreams, SimTime, StreamId};

/// Where a PDU handed to the link ends up.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Transit {
    Delivered { at: SimTime },
    Lost,
}

/// One direction of the radio link.
#[derive(Debug, Clone, Copy)]
pub struct LinkModel {
    delay_us: u64,
    loss_probability: f64,
    stream: StreamId,
}

impl LinkModel {
    pub fn new(delay_us: u64, loss_probability: f64, stream: StreamId) -> Self {
        LinkModel {
            delay_us,
            loss_probability,
            stream,
        }
    }

    pub fn delay_us(&self) -> u64 {
        self.delay_us
    }

    pub fn loss_probability(&self) -> f64 {
        self.loss_probability
    }

    /// Decides the fate of one PDU entering the link at `now`.
    pub fn transit(&self, now: SimTime, rng: &mut RngStreams) -> Result<Transit, EngineError> {
        if self.loss_probability > 0.0 && rng.bernoulli(self.stream, self.loss_probability)? {
            return Ok(Transit::Lost);
        }
        Ok(Transit::Delivered {
            at: now.advanced_by(self.delay_us),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lossless_link_delivers_after_the_fixed_delay() {
        let mut rng = RngStreams::new(1);
        let stream = rng.register("link");
        let link = LinkModel::new(1_000, 0.0, stream);
        for k in 0..50u64 {
            let now = SimTime::from_us(k * 5_000);
            assert_eq!(
                link.transit(now, &mut rng).unwrap(),
                Transit::Delivered {
                    at: now.advanced_by(1_000)
                }
            );
        }
    }

    #[test]
    fn certain_loss_drops_everything() {
        let mut rng = RngStreams::new(1);
        let stream = rng.register("link");
        let link = LinkModel::new(1_000, 1.0, stream);
        for _ in 0..50 {
            assert_eq!(link.transit(SimTime::ZERO, &mut rng).unwrap(), Transit::Lost);
        }
    }

    #[test]
    fn loss_rate_matches_the_configured_probability() {
        let mut rng = RngStreams::new(20_260_815);
        let stream = rng.register("link");
        let link = LinkModel::new(1_000, 0.3, stream);
        let n = 20_000;
        let lost = (0..n)
            .filter(|_| link.transit(SimTime::ZERO, &mut rng).unwrap() == Transit::Lost)
            .count();
        let rate = lost as f64 / n as f64;
        assert!((rate - 0.3).abs() < 0.01, "observed loss {rate}");
    }

    #[test]
    fn independent_links_draw_from_their_own_streams() {
        let outcomes = |flip: bool| -> Vec<bool> {
            let mut rng = RngStreams::new(5);
            let ul = rng.register("ul_link");
            let dl = rng.register("dl_link");
            let link = LinkModel::new(1_000, 0.5, if flip { dl } else { ul });
            let other = LinkModel::new(1_000, 0.5, if flip { ul } else { dl });
            // Interleave draws on the other link; they must not disturb ours.
            (0..200)
                .map(|i| {
                    if i % 3 == 0 {
                        let _ = other.transit(SimTime::ZERO, &mut rng);
                    }
                    link.transit(SimTime::ZERO, &mut rng).unwrap() == Transit::Lost
                })
                .collect()
        };
        // The first link's trace is a pure function of its stream name.
        assert_eq!(outcomes(false), outcomes(false));
    }
}
