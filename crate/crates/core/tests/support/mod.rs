//! Shared harness for driving `BsScheduler` + `SsRequestAgent` frame by
//! frame outside the full simulation, plus the three hand-enumerated golden
//! scheduling cases that both the golden-table tests and the acceptance gate
//! replay.

// Each integration-test target compiles its own copy of this module and uses
// a different subset of it.
#![allow(dead_code)]

use std::fmt::Write as _;

use wimaxsim::engine::SimTime;
use wimaxsim::qos::{
    AppTag, Direction, FlowId, MacPdu, SchedulingType, ServiceClass, ServiceFlow,
};
use wimaxsim::scheduler::{BsScheduler, FrameLedger, SchedulerConfig, SsRequestAgent};

pub const FRAME_US: u64 = 5_000;
pub const CAPACITY: u64 = 1_625;

pub fn scheduler_config() -> SchedulerConfig {
    SchedulerConfig {
        frame_us: FRAME_US,
        bw_request_size_bytes: 6,
        rtps_poll_interval_frames: 4,
        nrtps_poll_interval_frames: 200,
        emit_polls: true,
    }
}

pub fn make_flow(
    id: usize,
    name: &str,
    sched: SchedulingType,
    mstr: u64,
    mrtr: u64,
) -> ServiceFlow {
    let class = ServiceClass::new(name, sched, mstr, mrtr).unwrap();
    ServiceFlow::new(FlowId(id), name, id + 1, Direction::Uplink, class)
}

pub fn pdu(flow: usize, payload_bytes: u64, seq: u64) -> MacPdu {
    MacPdu {
        flow: FlowId(flow),
        payload_bytes,
        mac_header_bytes: 6,
        created_at: SimTime::ZERO,
        enqueued_at: SimTime::ZERO,
        tag: AppTag::Voice,
        seq,
    }
}

pub struct Harness {
    pub sched: BsScheduler,
    pub agent: SsRequestAgent,
    pub flows: Vec<ServiceFlow>,
    pub ledgers: Vec<FrameLedger>,
}

impl Harness {
    pub fn new(flows: Vec<ServiceFlow>) -> Self {
        let mut sched = BsScheduler::new(scheduler_config());
        let mut agent = SsRequestAgent::new(10, false);
        for flow in &flows {
            sched.register_flow(flow);
            agent.register_flow(flow, FRAME_US);
        }
        Harness {
            sched,
            agent,
            flows,
            ledgers: Vec::new(),
        }
    }

    /// Builds one frame and feeds the station's end-of-frame signals back,
    /// exactly as the full simulation loop does.
    pub fn run_frame(&mut self, frame: u64, source_active: &dyn Fn(FlowId) -> bool) {
        let out = self
            .sched
            .build_frame_map(frame, &mut self.flows, CAPACITY)
            .unwrap();
        let signals = self
            .agent
            .after_frame(frame, &self.flows, &out.ledger, source_active);
        for request in signals.requests {
            self.sched.submit_request(request).unwrap();
        }
        for change in signals.grant_changes {
            self.sched.submit_grant_change(change).unwrap();
        }
        self.ledgers.push(out.ledger);
    }

    pub fn render(&self) -> String {
        let mut out = String::from("frame,flow,kind,granted_bytes,used_bytes,wasted_bytes\n");
        for ledger in &self.ledgers {
            for grant in &ledger.grants {
                writeln!(
                    out,
                    "{},{},{},{},{},{}",
                    ledger.frame_index,
                    grant.flow.0,
                    grant.kind.label(),
                    grant.granted_bytes,
                    grant.used_bytes,
                    grant.wasted_bytes
                )
                .unwrap();
            }
        }
        out
    }
}

/// A golden case's replayed ledger rendering next to the committed table.
pub struct GoldenCase {
    pub name: &'static str,
    pub rendered: String,
    pub golden: &'static str,
}

/// One 64 kbps UGS flow against a queue of 120 B packets: the entitlement
/// banks for two frames and ships one whole PDU on every third.
pub fn golden_ugs_banking() -> GoldenCase {
    let mut h = Harness::new(vec![make_flow(0, "Gold", SchedulingType::Ugs, 64_000, 64_000)]);
    for seq in 0..6 {
        h.flows[0].enqueue(pdu(0, 120, seq), SimTime::ZERO).unwrap();
    }
    for frame in 0..9 {
        h.run_frame(frame, &|_| true);
    }
    GoldenCase {
        name: "ugs_banking",
        rendered: h.render(),
        golden: include_str!("../golden/ugs_banking.csv"),
    }
}

/// 96 kbps UGS voice next to a BE flow shaped at 384 kbps whose whole
/// backlog arrives via one contention request.
pub fn golden_ugs_be_shaping() -> GoldenCase {
    let mut h = Harness::new(vec![
        make_flow(0, "Gold", SchedulingType::Ugs, 96_000, 96_000),
        make_flow(1, "Bronze", SchedulingType::Be, 384_000, 0),
    ]);
    for seq in 0..12 {
        h.flows[0].enqueue(pdu(0, 120, seq), SimTime::ZERO).unwrap();
    }
    for seq in 0..4 {
        h.flows[1].enqueue(pdu(1, 500, seq), SimTime::ZERO).unwrap();
    }
    for frame in 0..20 {
        h.run_frame(frame, &|_| true);
    }
    GoldenCase {
        name: "ugs_be_shaping",
        rendered: h.render(),
        golden: include_str!("../golden/ugs_be_shaping.csv"),
    }
}

/// An ertPS voice flow through a talk/silence/talk cycle next to an rtPS
/// flow polled every fourth frame, exercising reduced-mode request slots and
/// the one-frame restore latency.
pub fn golden_ertps_rtps_cadence() -> GoldenCase {
    let mut h = Harness::new(vec![
        make_flow(0, "Gold", SchedulingType::Ertps, 96_000, 96_000),
        make_flow(1, "Silver", SchedulingType::Rtps, 1_000_000, 500_000),
    ]);
    h.flows[0].enqueue(pdu(0, 120, 0), SimTime::ZERO).unwrap();
    h.flows[1].enqueue(pdu(1, 120, 0), SimTime::ZERO).unwrap();
    h.flows[1].enqueue(pdu(1, 120, 1), SimTime::ZERO).unwrap();

    for frame in 0..12 {
        if frame == 6 {
            h.flows[0].enqueue(pdu(0, 120, 1), SimTime::ZERO).unwrap();
        }
        let talking = frame <= 1 || (6..=8).contains(&frame);
        h.run_frame(frame, &move |fid| fid.0 == 0 && talking);
    }
    GoldenCase {
        name: "ertps_rtps_cadence",
        rendered: h.render(),
        golden: include_str!("../golden/ertps_rtps_cadence.csv"),
    }
}

pub fn all_golden_cases() -> Vec<GoldenCase> {
    vec![
        golden_ugs_banking(),
        golden_ugs_be_shaping(),
        golden_ertps_rtps_cadence(),
    ]
}
