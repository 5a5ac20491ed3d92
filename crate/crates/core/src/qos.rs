//! 802.16e MAC QoS object model: scheduling services, service classes,
//! per-connection service flows, and MAC PDUs.
//!
//! Byte accounting convention: every queue, grant, and statistic in this
//! simulator is denominated in *SDU payload bytes* (the packet handed to the
//! MAC, e.g. a 120-byte voice packet = 80 B codec + 40 B RTP/UDP/IP). The
//! fixed generic MAC header is carried on each PDU and reported as overhead,
//! but it does not consume grant bytes; the per-frame capacity parameter is
//! interpreted as SDU-carrying capacity with PHY/MAC framing abstracted out.
//! Keeping one byte plane end to end is what makes the conservation audit
//! (`offered == sent + dropped + queued`) exact.

use std::collections::VecDeque;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::SimTime;

/// The five 802.16e scheduling services, in strict priority order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SchedulingType {
    /// Unsolicited Grant Service: fixed periodic grants, no requests.
    Ugs,
    /// Extended real-time Polling Service: UGS-sized grants that shrink to a
    /// bandwidth-request slot while the source is silent.
    Ertps,
    /// Real-time Polling Service: periodic unicast polls, grants on request.
    Rtps,
    /// Non-real-time Polling Service: infrequent polls plus contention
    /// requests.
    Nrtps,
    /// Best Effort: contention requests only, served from leftover capacity.
    Be,
}

impl SchedulingType {
    pub const PRIORITY_ORDER: [SchedulingType; 5] = [
        SchedulingType::Ugs,
        SchedulingType::Ertps,
        SchedulingType::Rtps,
        SchedulingType::Nrtps,
        SchedulingType::Be,
    ];

    pub fn label(self) -> &'static str {
        match self {
            SchedulingType::Ugs => "UGS",
            SchedulingType::Ertps => "ertPS",
            SchedulingType::Rtps => "rtPS",
            SchedulingType::Nrtps => "nrtPS",
            SchedulingType::Be => "BE",
        }
    }
}

impl fmt::Display for SchedulingType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum QosError {
    #[error("service class {name}: min reserved rate {min_bps} bps exceeds max sustained rate {max_bps} bps")]
    MinAboveMax { name: String, min_bps: u64, max_bps: u64 },
    #[error("service class {name}: UGS requires min reserved == max sustained, got {min_bps} != {max_bps} bps")]
    UgsRatesDiffer { name: String, min_bps: u64, max_bps: u64 },
    #[error("PDU enqueued onto flow {flow:?} but is addressed to flow {pdu_flow:?}")]
    FlowMismatch { flow: FlowId, pdu_flow: FlowId },
}

/// A named QoS profile binding a scheduling service to its rate parameters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServiceClass {
    pub name: String,
    pub scheduling_type: SchedulingType,
    pub max_sustained_rate_bps: u64,
    pub min_reserved_rate_bps: u64,
}

impl ServiceClass {
    pub fn new(
        name: &str,
        scheduling_type: SchedulingType,
        max_sustained_rate_bps: u64,
        min_reserved_rate_bps: u64,
    ) -> Result<Self, QosError> {
        let class = ServiceClass {
            name: name.to_owned(),
            scheduling_type,
            max_sustained_rate_bps,
            min_reserved_rate_bps,
        };
        class.validate()?;
        Ok(class)
    }

    pub fn validate(&self) -> Result<(), QosError> {
        if self.min_reserved_rate_bps > self.max_sustained_rate_bps {
            return Err(QosError::MinAboveMax {
                name: self.name.clone(),
                min_bps: self.min_reserved_rate_bps,
                max_bps: self.max_sustained_rate_bps,
            });
        }
        if self.scheduling_type == SchedulingType::Ugs
            && self.min_reserved_rate_bps != self.max_sustained_rate_bps
        {
            return Err(QosError::UgsRatesDiffer {
                name: self.name.clone(),
                min_bps: self.min_reserved_rate_bps,
                max_bps: self.max_sustained_rate_bps,
            });
        }
        Ok(())
    }
}

/// Transmission direction relative to the base station.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Uplink,
    Downlink,
}

impl Direction {
    pub fn label(self) -> &'static str {
        match self {
            Direction::Uplink => "ul",
            Direction::Downlink => "dl",
        }
    }
}

/// Index of a service flow within the simulation's flow table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FlowId(pub usize);

/// What kind of application payload a PDU carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AppTag {
    Voice,
    DataRequest,
    DataResponse,
}

/// One MAC protocol data unit queued on a service flow.
#[derive(Debug, Clone, Copy)]
pub struct MacPdu {
    pub flow: FlowId,
    /// SDU payload size; the unit all grants and statistics are measured in.
    pub payload_bytes: u64,
    /// Fixed generic MAC header, reported as framing overhead.
    pub mac_header_bytes: u64,
    /// Instant the packet was produced by its application.
    pub created_at: SimTime,
    /// Instant it entered the MAC queue (set by `ServiceFlow::enqueue`).
    pub enqueued_at: SimTime,
    pub tag: AppTag,
    /// Per-source sequence number (voice packet index / data transaction id).
    pub seq: u64,
}

impl MacPdu {
    /// Payload plus MAC header: the PDU's on-air footprint for overhead
    /// reporting.
    pub fn total_bytes(&self) -> u64 {
        self.payload_bytes + self.mac_header_bytes
    }
}

/// Result of offering a PDU to a flow queue.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnqueueOutcome {
    Accepted,
    /// Queue byte cap would be exceeded; the PDU was counted as dropped.
    Dropped,
}

/// Snapshot of a flow's conservation counters, all in SDU payload bytes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct FlowCounters {
    pub bytes_offered: u64,
    pub bytes_sent: u64,
    pub bytes_dropped: u64,
    pub queued_bytes: u64,
}

impl FlowCounters {
    /// Conservation identity: everything offered is either sent, dropped, or
    /// still queued. Byte-exact, no tolerance.
    pub fn is_conserved(&self) -> bool {
        self.bytes_offered == self.bytes_sent + self.bytes_dropped + self.queued_bytes
    }
}

/// A unidirectional MAC connection with a FIFO queue and QoS profile.
#[derive(Debug, Clone)]
pub struct ServiceFlow {
    pub id: FlowId,
    pub name: String,
    pub station: usize,
    pub direction: Direction,
    pub class: ServiceClass,
    queue: VecDeque<MacPdu>,
    queued_bytes: u64,
    /// Optional cap on queued payload bytes; `None` means unbounded.
    pub queue_byte_cap: Option<u64>,
    bytes_offered: u64,
    bytes_sent: u64,
    bytes_dropped: u64,
    pdus_sent: u64,
    pdus_dropped: u64,
}

impl ServiceFlow {
    pub fn new(
        id: FlowId,
        name: &str,
        station: usize,
        direction: Direction,
        class: ServiceClass,
    ) -> Self {
        ServiceFlow {
            id,
            name: name.to_owned(),
            station,
            direction,
            class,
            queue: VecDeque::new(),
            queued_bytes: 0,
            queue_byte_cap: None,
            bytes_offered: 0,
            bytes_sent: 0,
            bytes_dropped: 0,
            pdus_sent: 0,
            pdus_dropped: 0,
        }
    }

    /// Offers a PDU to the queue, stamping its enqueue time. A full queue
    /// drops the PDU (counted, never silently lost).
    pub fn enqueue(&mut self, mut pdu: MacPdu, now: SimTime) -> Result<EnqueueOutcome, QosError> {
        if pdu.flow != self.id {
            return Err(QosError::FlowMismatch {
                flow: self.id,
                pdu_flow: pdu.flow,
            });
        }
        self.bytes_offered += pdu.payload_bytes;
        if let Some(cap) = self.queue_byte_cap {
            if self.queued_bytes + pdu.payload_bytes > cap {
                self.bytes_dropped += pdu.payload_bytes;
                self.pdus_dropped += 1;
                return Ok(EnqueueOutcome::Dropped);
            }
        }
        pdu.enqueued_at = now;
        self.queued_bytes += pdu.payload_bytes;
        self.queue.push_back(pdu);
        Ok(EnqueueOutcome::Accepted)
    }

    /// Removes whole PDUs head-first while they fit in `grant_bytes`.
    ///
    /// No fragmentation: a PDU rides in exactly one grant or not at all, so
    /// any residue of the grant smaller than the next head PDU is wasted (the
    /// caller accounts for it via the frame ledger).
    pub fn dequeue_up_to(&mut self, grant_bytes: u64) -> Vec<MacPdu> {
        let mut out = Vec::new();
        let mut budget = grant_bytes;
        while let Some(head) = self.queue.front() {
            if head.payload_bytes > budget {
                break;
            }
            let pdu = self.queue.pop_front().expect("front PDU vanished");
            budget -= pdu.payload_bytes;
            self.queued_bytes -= pdu.payload_bytes;
            self.bytes_sent += pdu.payload_bytes;
            self.pdus_sent += 1;
            out.push(pdu);
        }
        out
    }

    /// Payload bytes that the largest whole-PDU prefix of the queue would
    /// occupy within `budget_bytes`. This is the exact amount a grant of that
    /// size would carry.
    pub fn prefix_fit(&self, budget_bytes: u64) -> u64 {
        let mut used = 0;
        for pdu in &self.queue {
            if used + pdu.payload_bytes > budget_bytes {
                break;
            }
            used += pdu.payload_bytes;
        }
        used
    }

    /// Queued payload bytes (exact running sum, not recomputed).
    pub fn backlog_bytes(&self) -> u64 {
        self.queued_bytes
    }

    pub fn backlog_pdus(&self) -> usize {
        self.queue.len()
    }

    /// Payload size of the PDU at the head of the queue, if any.
    pub fn head_payload_bytes(&self) -> Option<u64> {
        self.queue.front().map(|p| p.payload_bytes)
    }

    pub fn counters(&self) -> FlowCounters {
        FlowCounters {
            bytes_offered: self.bytes_offered,
            bytes_sent: self.bytes_sent,
            bytes_dropped: self.bytes_dropped,
            queued_bytes: self.queued_bytes,
        }
    }

    pub fn pdus_sent(&self) -> u64 {
        self.pdus_sent
    }

    pub fn pdus_dropped(&self) -> u64 {
        self.pdus_dropped
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pdu(flow: FlowId, payload: u64, seq: u64) -> MacPdu {
        MacPdu {
            flow,
            payload_bytes: payload,
            mac_header_bytes: 6,
            created_at: SimTime::ZERO,
            enqueued_at: SimTime::ZERO,
            tag: AppTag::Voice,
            seq,
        }
    }

    fn flow() -> ServiceFlow {
        let class = ServiceClass::new("Gold", SchedulingType::Ugs, 96_000, 96_000).unwrap();
        ServiceFlow::new(FlowId(0), "ss1_ul_gold", 1, Direction::Uplink, class)
    }

    #[test]
    fn ugs_class_requires_equal_rates() {
        let err = ServiceClass::new("Gold", SchedulingType::Ugs, 96_000, 64_000).unwrap_err();
        assert!(matches!(err, QosError::UgsRatesDiffer { .. }));
        assert!(ServiceClass::new("Gold", SchedulingType::Ugs, 96_000, 96_000).is_ok());
    }

    #[test]
    fn min_rate_above_max_is_rejected() {
        let err = ServiceClass::new("Silver", SchedulingType::Rtps, 500_000, 1_000_000).unwrap_err();
        assert!(matches!(err, QosError::MinAboveMax { .. }));
    }

    #[test]
    fn enqueue_accepts_within_cap_and_drops_beyond() {
        let mut f = flow();
        f.queue_byte_cap = Some(250);
        assert_eq!(
            f.enqueue(pdu(FlowId(0), 120, 0), SimTime::from_ms(1)).unwrap(),
            EnqueueOutcome::Accepted
        );
        assert_eq!(
            f.enqueue(pdu(FlowId(0), 120, 1), SimTime::from_ms(2)).unwrap(),
            EnqueueOutcome::Accepted
        );
        // 240 queued; one more 120 B PDU would exceed the 250 B cap.
        assert_eq!(
            f.enqueue(pdu(FlowId(0), 120, 2), SimTime::from_ms(3)).unwrap(),
            EnqueueOutcome::Dropped
        );
        let c = f.counters();
        assert_eq!(c.bytes_offered, 360);
        assert_eq!(c.bytes_dropped, 120);
        assert_eq!(c.queued_bytes, 240);
        assert!(c.is_conserved());
    }

    #[test]
    fn enqueue_rejects_pdu_for_another_flow() {
        let mut f = flow();
        let err = f.enqueue(pdu(FlowId(9), 120, 0), SimTime::ZERO).unwrap_err();
        assert!(matches!(err, QosError::FlowMismatch { .. }));
        // A rejected PDU must not touch the counters.
        assert_eq!(f.counters(), FlowCounters::default());
    }

    #[test]
    fn dequeue_packs_whole_pdus_and_reports_residue_via_fit() {
        let mut f = flow();
        for seq in 0..3 {
            f.enqueue(pdu(FlowId(0), 120, seq), SimTime::ZERO).unwrap();
        }
        // Grant of 250 B fits exactly two 120 B PDUs; 10 B of residue cannot
        // carry the third.
        assert_eq!(f.prefix_fit(250), 240);
        let sent = f.dequeue_up_to(250);
        assert_eq!(sent.len(), 2);
        assert_eq!(sent.iter().map(|p| p.seq).collect::<Vec<_>>(), vec![0, 1]);
        assert_eq!(f.backlog_bytes(), 120);
    }

    #[test]
    fn dequeue_from_empty_queue_sends_nothing() {
        let mut f = flow();
        assert!(f.dequeue_up_to(60).is_empty());
        assert_eq!(f.prefix_fit(60), 0);
    }

    #[test]
    fn backlog_tracks_enqueue_and_dequeue_exactly() {
        let mut f = flow();
        for seq in 0..5 {
            f.enqueue(pdu(FlowId(0), 120, seq), SimTime::ZERO).unwrap();
        }
        assert_eq!(f.backlog_bytes(), 600);
        let sent = f.dequeue_up_to(250);
        assert_eq!(sent.len(), 2);
        assert_eq!(f.backlog_bytes(), 360);
        assert_eq!(f.backlog_pdus(), 3);
    }

    #[test]
    fn fifo_order_is_preserved() {
        let mut f = flow();
        for seq in 0..20 {
            f.enqueue(pdu(FlowId(0), 50, seq), SimTime::ZERO).unwrap();
        }
        let mut seen = Vec::new();
        while !seen.is_empty() || f.backlog_pdus() > 0 {
            let batch = f.dequeue_up_to(120);
            if batch.is_empty() {
                break;
            }
            seen.extend(batch.into_iter().map(|p| p.seq));
        }
        assert_eq!(seen, (0..20).collect::<Vec<_>>());
    }

    proptest! {
        /// Conservation holds after any interleaving of offers and services,
        /// with and without a queue cap.
        #[test]
        fn conservation_is_byte_exact(
            ops in proptest::collection::vec((0u8..2, 1u64..2_000), 1..200),
            cap in proptest::option::of(500u64..5_000),
        ) {
            let mut f = flow();
            f.queue_byte_cap = cap;
            let mut seq = 0;
            for (op, size) in ops {
                if op == 0 {
                    f.enqueue(pdu(FlowId(0), size, seq), SimTime::ZERO).unwrap();
                    seq += 1;
                } else {
                    let _ = f.dequeue_up_to(size);
                }
                prop_assert!(f.counters().is_conserved());
            }
            // Recount the queue from scratch; the running sum must agree.
            let drained: u64 = f.dequeue_up_to(u64::MAX).iter().map(|p| p.payload_bytes).sum();
            let c = f.counters();
            prop_assert_eq!(c.queued_bytes, 0);
            prop_assert_eq!(c.bytes_offered, c.bytes_sent + c.bytes_dropped);
            prop_assert!(drained <= c.bytes_sent);
        }

        /// `dequeue_up_to` never exceeds its grant and never splits a PDU.
        #[test]
        fn grants_are_never_exceeded(
            sizes in proptest::collection::vec(1u64..500, 1..50),
            grant in 0u64..2_000,
        ) {
            let mut f = flow();
            for (seq, s) in sizes.iter().enumerate() {
                f.enqueue(pdu(FlowId(0), *s, seq as u64), SimTime::ZERO).unwrap();
            }
            let fit = f.prefix_fit(grant);
            let sent = f.dequeue_up_to(grant);
            let sent_bytes: u64 = sent.iter().map(|p| p.payload_bytes).sum();
            prop_assert_eq!(sent_bytes, fit);
            prop_assert!(sent_bytes <= grant);
            // Whatever is left at the head genuinely did not fit.
            if let Some(head) = f.head_payload_bytes() {
                prop_assert!(sent_bytes + head > grant);
            }
        }
    }
}
