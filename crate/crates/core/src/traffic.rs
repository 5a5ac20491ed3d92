//! Application-layer traffic generators.
//!
//! Voice is a packetized full-rate codec: one fixed-size packet every frame
//! interval of the codec, wrapped in RTP/UDP/IP headers. The source
//! alternates exponentially distributed talk spurts and silences; with
//! silence suppression off (plain G.711) packets flow continuously and the
//! talk model is bypassed entirely, with it on (VAD) the silences emit
//! nothing and the scheduler can reclaim the bandwidth.
//!
//! Data is a closed-loop request/response client: think, send a request
//! upstream, wait for the response downstream, think again. A response
//! timeout re-issues the request, so a starved link accumulates retries
//! instead of silently stalling the loop.

use thiserror::Error;

use crate::engine::{EngineError, RngStreams, SimTime, StreamId};
use crate::qos::{AppTag, FlowId, MacPdu};

#[derive(Debug, Error)]
pub enum TrafficError {
    #[error(transparent)]
    Engine(#[from] EngineError),
}

/// Voice codec and talk-spurt parameters.
#[derive(Debug, Clone, Copy)]
pub struct VoiceConfig {
    /// Codec packetization interval.
    pub packet_interval_us: u64,
    /// Codec payload per packet.
    pub codec_payload_bytes: u64,
    /// RTP + UDP + IP header bytes carried inside the SDU.
    pub ip_overhead_bytes: u64,
    /// MAC framing bytes per PDU (outside the SDU payload).
    pub mac_header_bytes: u64,
    /// Mean talk-spurt length.
    pub mean_talk_us: u64,
    /// Mean silence length.
    pub mean_silence_us: u64,
    /// When false the codec sends during silences too (no VAD).
    pub silence_suppression: bool,
}

impl VoiceConfig {
    /// Payload bytes of one voice PDU as the MAC queues see it.
    pub fn sdu_bytes(&self) -> u64 {
        self.codec_payload_bytes + self.ip_overhead_bytes
    }

    /// Offered rate while emitting, in bits per second.
    pub fn active_rate_bps(&self) -> u64 {
        self.sdu_bytes() * 8 * 1_000_000 / self.packet_interval_us
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TalkState {
    Talking,
    Silent,
}

/// One direction of one conversation.
#[derive(Debug)]
pub struct VoiceSource {
    cfg: VoiceConfig,
    flow: FlowId,
    stream: StreamId,
    state: TalkState,
    state_until: SimTime,
    next_seq: u64,
    packets_emitted: u64,
}

impl VoiceSource {
    /// Creates a source that starts talking at `now`; spurt lengths come
    /// from the source's own named RNG stream.
    pub fn new(
        cfg: VoiceConfig,
        flow: FlowId,
        stream: StreamId,
        rng: &mut RngStreams,
        now: SimTime,
    ) -> Result<Self, TrafficError> {
        let mut source = VoiceSource {
            cfg,
            flow,
            stream,
            state: TalkState::Talking,
            state_until: now,
            next_seq: 0,
            packets_emitted: 0,
        };
        if cfg.silence_suppression {
            let talk = rng.exp_us(stream, cfg.mean_talk_us)?.max(1);
            source.state_until = now.advanced_by(talk);
        }
        Ok(source)
    }

    pub fn flow(&self) -> FlowId {
        self.flow
    }

    pub fn packet_interval_us(&self) -> u64 {
        self.cfg.packet_interval_us
    }

    pub fn packets_emitted(&self) -> u64 {
        self.packets_emitted
    }

    /// Rolls the talk/silence machine forward to `now`. Without silence
    /// suppression the machine is irrelevant and never draws randomness.
    fn advance(&mut self, now: SimTime, rng: &mut RngStreams) -> Result<(), TrafficError> {
        if !self.cfg.silence_suppression {
            return Ok(());
        }
        while now >= self.state_until {
            let (next, mean) = match self.state {
                TalkState::Talking => (TalkState::Silent, self.cfg.mean_silence_us),
                TalkState::Silent => (TalkState::Talking, self.cfg.mean_talk_us),
            };
            self.state = next;
            let hold = rng.exp_us(self.stream, mean)?.max(1);
            self.state_until = self.state_until.advanced_by(hold);
        }
        Ok(())
    }

    /// Whether the source is currently generating traffic (drives ertPS
    /// grant reduction; a non-suppressing source is always active).
    pub fn is_active(&mut self, now: SimTime, rng: &mut RngStreams) -> Result<bool, TrafficError> {
        self.advance(now, rng)?;
        Ok(!self.cfg.silence_suppression || self.state == TalkState::Talking)
    }

    /// Called on each codec packet boundary; returns the packet to enqueue,
    /// or `None` inside a suppressed silence.
    pub fn on_tick(
        &mut self,
        now: SimTime,
        rng: &mut RngStreams,
    ) -> Result<Option<MacPdu>, TrafficError> {
        if !self.is_active(now, rng)? {
            return Ok(None);
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.packets_emitted += 1;
        Ok(Some(MacPdu {
            flow: self.flow,
            payload_bytes: self.cfg.sdu_bytes(),
            mac_header_bytes: self.cfg.mac_header_bytes,
            created_at: now,
            enqueued_at: now,
            tag: AppTag::Voice,
            seq,
        }))
    }
}

/// Closed-loop data client parameters.
#[derive(Debug, Clone, Copy)]
pub struct DataConfig {
    pub request_bytes: u64,
    pub response_bytes: u64,
    pub mac_header_bytes: u64,
    /// Mean think time between a response and the next request.
    pub mean_think_us: u64,
    /// How long to wait for a response before re-issuing the request.
    pub response_timeout_us: u64,
    /// Independent request/response loops run by this client.
    pub concurrency: u32,
}

#[derive(Debug, Clone, Copy)]
enum SlotState {
    Thinking { until: SimTime },
    Awaiting { seq: u64, deadline: SimTime },
}

#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct DataClientStats {
    pub requests_sent: u64,
    pub responses_matched: u64,
    pub timeouts: u64,
    pub stale_responses: u64,
}

/// A subscriber station's web-like data application: each concurrency slot
/// cycles think → request (uplink BE) → response (downlink BE) → think.
#[derive(Debug)]
pub struct DataClient {
    cfg: DataConfig,
    ul_flow: FlowId,
    dl_flow: FlowId,
    stream: StreamId,
    slots: Vec<SlotState>,
    next_seq: u64,
    stats: DataClientStats,
}

impl DataClient {
    pub fn new(
        cfg: DataConfig,
        ul_flow: FlowId,
        dl_flow: FlowId,
        stream: StreamId,
        rng: &mut RngStreams,
        now: SimTime,
    ) -> Result<Self, TrafficError> {
        let mut slots = Vec::with_capacity(cfg.concurrency as usize);
        for _ in 0..cfg.concurrency.max(1) {
            let think = rng.exp_us(stream, cfg.mean_think_us)?;
            slots.push(SlotState::Thinking {
                until: now.advanced_by(think),
            });
        }
        Ok(DataClient {
            cfg,
            ul_flow,
            dl_flow,
            stream,
            slots,
            next_seq: 0,
            stats: DataClientStats::default(),
        })
    }

    pub fn ul_flow(&self) -> FlowId {
        self.ul_flow
    }

    pub fn dl_flow(&self) -> FlowId {
        self.dl_flow
    }

    pub fn stats(&self) -> DataClientStats {
        self.stats
    }

    /// The earliest instant at which some slot needs attention.
    pub fn next_wake(&self) -> Option<SimTime> {
        self.slots
            .iter()
            .map(|s| match s {
                SlotState::Thinking { until } => *until,
                SlotState::Awaiting { deadline, .. } => *deadline,
            })
            .min()
    }

    fn issue_request(&mut self, now: SimTime) -> (MacPdu, u64) {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.stats.requests_sent += 1;
        let pdu = MacPdu {
            flow: self.ul_flow,
            payload_bytes: self.cfg.request_bytes,
            mac_header_bytes: self.cfg.mac_header_bytes,
            created_at: now,
            enqueued_at: now,
            tag: AppTag::DataRequest,
            seq,
        };
        (pdu, seq)
    }

    /// Processes every slot whose timer has expired: finished thinks send a
    /// request, missed deadlines count a timeout and re-send. Returns the
    /// request PDUs to enqueue on the uplink flow.
    pub fn advance(&mut self, now: SimTime) -> Vec<MacPdu> {
        let mut out = Vec::new();
        for i in 0..self.slots.len() {
            match self.slots[i] {
                SlotState::Thinking { until } if now >= until => {
                    let (pdu, seq) = self.issue_request(now);
                    out.push(pdu);
                    self.slots[i] = SlotState::Awaiting {
                        seq,
                        deadline: now.advanced_by(self.cfg.response_timeout_us),
                    };
                }
                SlotState::Awaiting { deadline, .. } if now >= deadline => {
                    self.stats.timeouts += 1;
                    let (pdu, seq) = self.issue_request(now);
                    out.push(pdu);
                    self.slots[i] = SlotState::Awaiting {
                        seq,
                        deadline: now.advanced_by(self.cfg.response_timeout_us),
                    };
                }
                _ => {}
            }
        }
        out
    }

    /// Builds the server's response to a delivered request (the response
    /// echoes the request sequence number so the client can match it).
    pub fn make_response(&self, request: &MacPdu, now: SimTime) -> MacPdu {
        MacPdu {
            flow: self.dl_flow,
            payload_bytes: self.cfg.response_bytes,
            mac_header_bytes: self.cfg.mac_header_bytes,
            created_at: now,
            enqueued_at: now,
            tag: AppTag::DataResponse,
            seq: request.seq,
        }
    }

    /// Delivers a response to the client. Matching responses complete the
    /// transaction and start a new think; responses to superseded requests
    /// are counted and dropped.
    pub fn accept_response(
        &mut self,
        seq: u64,
        now: SimTime,
        rng: &mut RngStreams,
    ) -> Result<bool, TrafficError> {
        for slot in self.slots.iter_mut() {
            if let SlotState::Awaiting { seq: want, .. } = slot {
                if *want == seq {
                    self.stats.responses_matched += 1;
                    let think = rng.exp_us(self.stream, self.cfg.mean_think_us)?;
                    *slot = SlotState::Thinking {
                        until: now.advanced_by(think),
                    };
                    return Ok(true);
                }
            }
        }
        self.stats.stale_responses += 1;
        Ok(false)
    }
}
