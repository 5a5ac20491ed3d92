//! Base-station grant scheduler: builds one UL-MAP/DL-MAP worth of grants per
//! frame under strict class priority, plus the subscriber-side agent that
//! answers polls, issues contention bandwidth requests, and drives ertPS
//! grant-change signaling.
//!
//! Priority is strict across scheduling services (UGS, then ertPS, rtPS,
//! nrtPS, BE) with round-robin inside a class starting from a cursor that
//! rotates every frame. Reserved services (UGS and active ertPS) earn a
//! per-frame byte entitlement from a [`GrantShaper`]; because PDUs are never
//! fragmented, entitlement banks up until the head PDU fits, and a flow with
//! an empty queue receives (and wastes) its grant — that waste is precisely
//! the UGS idle-period cost that ertPS exists to reclaim.
//!
//! Request-served services (rtPS, nrtPS, BE) are granted against their last
//! truthful bandwidth request, shaped to the class's maximum sustained rate
//! and packed whole-PDU round-robin from whatever capacity remains.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::qos::{FlowId, MacPdu, SchedulingType, ServiceFlow};

/// Converts a sustained rate into per-frame byte grants with no long-run
/// drift: the fractional-byte remainder carries forward in an integer
/// bit-microsecond accumulator, so granted bytes over any horizon equal
/// `rate * time / 8` to within one byte.
#[derive(Debug, Clone)]
pub struct GrantShaper {
    rate_bps: u64,
    frame_us: u64,
    acc_bit_us: u64,
}

const BIT_US_PER_BYTE: u64 = 8_000_000;

impl GrantShaper {
    pub fn new(rate_bps: u64, frame_us: u64) -> Self {
        GrantShaper {
            rate_bps,
            frame_us,
            acc_bit_us: 0,
        }
    }

    /// Bytes newly entitled for the next frame.
    pub fn next_frame_bytes(&mut self) -> u64 {
        self.acc_bit_us += self.rate_bps * self.frame_us;
        let bytes = self.acc_bit_us / BIT_US_PER_BYTE;
        self.acc_bit_us %= BIT_US_PER_BYTE;
        bytes
    }

    /// Whole bytes per frame ignoring the fractional carry (the "nominal"
    /// grant size used for ertPS restoration and MSTR caps).
    pub fn nominal_bytes_per_frame(rate_bps: u64, frame_us: u64) -> u64 {
        rate_bps * frame_us / BIT_US_PER_BYTE
    }
}

/// What a grant carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GrantKind {
    /// Uplink/downlink data allocation.
    Data,
    /// A bandwidth-request opportunity: rtPS/nrtPS unicast polls and the
    /// ertPS reduced-mode slot. Always exactly `bw_request_size` bytes.
    UnicastPoll,
}

impl GrantKind {
    pub fn label(self) -> &'static str {
        match self {
            GrantKind::Data => "data",
            GrantKind::UnicastPoll => "poll",
        }
    }
}

/// One per-flow allocation within a frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Grant {
    pub flow: FlowId,
    pub kind: GrantKind,
    pub granted_bytes: u64,
    pub used_bytes: u64,
    pub wasted_bytes: u64,
}

/// Complete record of one frame's allocations.
#[derive(Debug, Clone)]
pub struct FrameLedger {
    pub frame_index: u64,
    pub capacity_bytes: u64,
    pub grants: Vec<Grant>,
    /// Set when reserved commitments could not fit in the frame and grants
    /// had to be shed. A configuration (admission) problem, not a panic.
    pub admission_violation: bool,
    /// MAC framing bytes of the PDUs transmitted this frame (informational;
    /// grants and capacity are denominated in SDU payload bytes).
    pub header_overhead_bytes: u64,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SchedulerError {
    #[error("frame {frame}: granted {granted} B exceeds capacity {capacity} B")]
    CapacityExceeded {
        frame: u64,
        granted: u64,
        capacity: u64,
    },
    #[error("frame {frame}: grant for flow {flow:?} books {used} B used + {wasted} B wasted against {granted} B granted")]
    GrantAccounting {
        frame: u64,
        flow: FlowId,
        granted: u64,
        used: u64,
        wasted: u64,
    },
    #[error("flow {0:?} is not registered with this scheduler")]
    UnknownFlow(FlowId),
}

impl FrameLedger {
    fn new(frame_index: u64, capacity_bytes: u64) -> Self {
        FrameLedger {
            frame_index,
            capacity_bytes,
            grants: Vec::new(),
            admission_violation: false,
            header_overhead_bytes: 0,
        }
    }

    pub fn granted_total(&self) -> u64 {
        self.grants.iter().map(|g| g.granted_bytes).sum()
    }

    pub fn used_total(&self) -> u64 {
        self.grants.iter().map(|g| g.used_bytes).sum()
    }

    pub fn wasted_total(&self) -> u64 {
        self.grants.iter().map(|g| g.wasted_bytes).sum()
    }

    /// Capacity and bookkeeping audit; run on every frame the scheduler
    /// emits, and directly by tests on handcrafted ledgers.
    pub fn validate(&self) -> Result<(), SchedulerError> {
        if self.granted_total() > self.capacity_bytes {
            return Err(SchedulerError::CapacityExceeded {
                frame: self.frame_index,
                granted: self.granted_total(),
                capacity: self.capacity_bytes,
            });
        }
        for g in &self.grants {
            if g.used_bytes + g.wasted_bytes != g.granted_bytes {
                return Err(SchedulerError::GrantAccounting {
                    frame: self.frame_index,
                    flow: g.flow,
                    granted: g.granted_bytes,
                    used: g.used_bytes,
                    wasted: g.wasted_bytes,
                });
            }
        }
        Ok(())
    }

    /// Grants issued to one flow this frame.
    pub fn grants_for(&self, flow: FlowId) -> impl Iterator<Item = &Grant> {
        self.grants.iter().filter(move |g| g.flow == flow)
    }
}

/// A truthful bandwidth request: the flow's whole backlog at issue time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BwRequest {
    pub flow: FlowId,
    pub requested_bytes: u64,
    pub issued_frame: u64,
}

/// An ertPS in-band grant-change request (bytes per frame; 0 = go silent).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GrantChange {
    pub flow: FlowId,
    pub requested_per_frame_bytes: u64,
}

/// Dynamic grant state of one ertPS flow as the base station sees it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ErtpsGrantState {
    /// Grant size while the source is active: the UGS-equivalent allocation
    /// for the class's reserved rate.
    pub nominal_grant_bytes: u64,
    /// Current per-frame allocation.
    pub current_grant_bytes: u64,
    /// True while the allocation is shrunk to the request slot.
    pub reduced: bool,
}

impl ErtpsGrantState {
    pub fn new(nominal_grant_bytes: u64) -> Self {
        ErtpsGrantState {
            nominal_grant_bytes,
            current_grant_bytes: nominal_grant_bytes,
            reduced: false,
        }
    }

    /// Applies a grant-change request. A request for zero shrinks the grant
    /// to the bandwidth-request slot; any other request restores service at
    /// the requested size clamped to the maximum sustained rate.
    pub fn apply_request(
        &mut self,
        requested_per_frame_bytes: u64,
        mstr_per_frame_bytes: u64,
        bw_request_size: u64,
    ) {
        if requested_per_frame_bytes == 0 {
            self.current_grant_bytes = bw_request_size;
            self.reduced = true;
        } else {
            self.current_grant_bytes = requested_per_frame_bytes.min(mstr_per_frame_bytes);
            self.reduced = false;
        }
    }
}

/// Scheduler tuning knobs shared by both link directions.
#[derive(Debug, Clone, Copy)]
pub struct SchedulerConfig {
    pub frame_us: u64,
    pub bw_request_size_bytes: u64,
    pub rtps_poll_interval_frames: u64,
    pub nrtps_poll_interval_frames: u64,
    /// Uplink schedulers emit unicast poll slots; the downlink scheduler sees
    /// its own queues and needs none.
    pub emit_polls: bool,
}

#[derive(Debug)]
struct FlowSched {
    /// Entitlement shaper at the reserved rate (UGS only).
    reserve: GrantShaper,
    /// Banked entitlement, bounded by one head PDU while backlogged.
    allowance: u64,
    ertps: Option<ErtpsGrantState>,
    /// Outstanding requested bytes from the latest bandwidth request.
    outstanding_bytes: u64,
    /// Token bucket enforcing the maximum sustained rate for request-served
    /// grants; banks at most one head PDU beyond the per-frame rate.
    mstr_shaper: GrantShaper,
    mstr_allowance: u64,
    mstr_nominal: u64,
    /// Frames in which this ertPS flow ran reduced (for elasticity reports).
    reduced_frames: u64,
}

/// Outcome of scheduling one frame: the ledger plus the PDUs to put on the
/// air, in transmission order.
#[derive(Debug)]
pub struct FrameOutput {
    pub ledger: FrameLedger,
    pub transmissions: Vec<MacPdu>,
}

/// Per-direction grant scheduler at the base station.
pub struct BsScheduler {
    cfg: SchedulerConfig,
    flows: BTreeMap<usize, FlowSched>,
    class_flows: [Vec<FlowId>; 5],
    admission_violations: u64,
}

impl BsScheduler {
    pub fn new(cfg: SchedulerConfig) -> Self {
        BsScheduler {
            cfg,
            flows: BTreeMap::new(),
            class_flows: Default::default(),
            admission_violations: 0,
        }
    }

    pub fn config(&self) -> &SchedulerConfig {
        &self.cfg
    }

    /// Total frames in which reserved commitments had to be shed.
    pub fn admission_violations(&self) -> u64 {
        self.admission_violations
    }

    pub fn register_flow(&mut self, flow: &ServiceFlow) {
        let sched = flow.class.scheduling_type;
        let mstr_nominal =
            GrantShaper::nominal_bytes_per_frame(flow.class.max_sustained_rate_bps, self.cfg.frame_us);
        let ertps = (sched == SchedulingType::Ertps).then(|| {
            ErtpsGrantState::new(GrantShaper::nominal_bytes_per_frame(
                flow.class.min_reserved_rate_bps,
                self.cfg.frame_us,
            ))
        });
        let state = FlowSched {
            reserve: GrantShaper::new(flow.class.min_reserved_rate_bps, self.cfg.frame_us),
            allowance: 0,
            ertps,
            outstanding_bytes: 0,
            mstr_shaper: GrantShaper::new(flow.class.max_sustained_rate_bps, self.cfg.frame_us),
            mstr_allowance: 0,
            mstr_nominal,
            reduced_frames: 0,
        };
        let class_index = sched as usize;
        self.flows.insert(flow.id.0, state);
        self.class_flows[class_index].push(flow.id);
    }

    /// Records a bandwidth request; it governs grants from the next built
    /// frame onward. A fresh request replaces the previous one (requests
    /// report absolute backlog, they do not accumulate).
    pub fn submit_request(&mut self, req: BwRequest) -> Result<(), SchedulerError> {
        let st = self
            .flows
            .get_mut(&req.flow.0)
            .ok_or(SchedulerError::UnknownFlow(req.flow))?;
        st.outstanding_bytes = req.requested_bytes;
        Ok(())
    }

    /// Applies an ertPS grant-change request, effective from the next frame.
    pub fn submit_grant_change(&mut self, change: GrantChange) -> Result<(), SchedulerError> {
        let bw_slot = self.cfg.bw_request_size_bytes;
        let st = self
            .flows
            .get_mut(&change.flow.0)
            .ok_or(SchedulerError::UnknownFlow(change.flow))?;
        let mstr = st.mstr_nominal;
        if let Some(ertps) = st.ertps.as_mut() {
            ertps.apply_request(change.requested_per_frame_bytes, mstr, bw_slot);
        }
        Ok(())
    }

    pub fn ertps_state(&self, flow: FlowId) -> Option<&ErtpsGrantState> {
        self.flows.get(&flow.0).and_then(|st| st.ertps.as_ref())
    }

    /// Frames this ertPS flow spent in reduced (request-slot) mode.
    pub fn reduced_frames(&self, flow: FlowId) -> u64 {
        self.flows.get(&flow.0).map_or(0, |st| st.reduced_frames)
    }

    fn rotation(&self, class: SchedulingType, frame_index: u64) -> Vec<FlowId> {
        let ids = &self.class_flows[class as usize];
        if ids.is_empty() {
            return Vec::new();
        }
        let start = (frame_index % ids.len() as u64) as usize;
        let mut out = Vec::with_capacity(ids.len());
        out.extend_from_slice(&ids[start..]);
        out.extend_from_slice(&ids[..start]);
        out
    }

    /// Builds and serves the grant map for `frame_index`.
    ///
    /// Grants are packed in strict priority order; every grant is served
    /// immediately against the flow queues, so the returned ledger carries
    /// exact used/wasted accounting and `transmissions` holds the PDUs in the
    /// order they hit the air.
    pub fn build_frame_map(
        &mut self,
        frame_index: u64,
        flows: &mut [ServiceFlow],
        capacity_bytes: u64,
    ) -> Result<FrameOutput, SchedulerError> {
        let mut ledger = FrameLedger::new(frame_index, capacity_bytes);
        let mut transmissions: Vec<MacPdu> = Vec::new();
        let mut remaining = capacity_bytes;

        // UGS and active ertPS: reserved entitlements, highest priority.
        // Backlogged flows and reduced-mode request slots claim capacity
        // first; reservations that are idle this frame only waste what is
        // left afterwards, so grant quantisation (a 120 B voice burst next to
        // a near-capacity idle pipe) cannot shed real traffic.
        let mut idle: Vec<FlowId> = Vec::new();
        for class in [SchedulingType::Ugs, SchedulingType::Ertps] {
            for fid in self.rotation(class, frame_index) {
                self.serve_reserved(fid, flows, &mut remaining, &mut ledger, &mut transmissions, &mut idle)?;
            }
        }
        for fid in idle {
            self.waste_idle_reserved(fid, &mut remaining, &mut ledger)?;
        }

        // rtPS / nrtPS: unicast poll slots when due, then grants against
        // outstanding requests. BE: grants only.
        for class in [SchedulingType::Rtps, SchedulingType::Nrtps] {
            if self.cfg.emit_polls {
                let interval = match class {
                    SchedulingType::Rtps => self.cfg.rtps_poll_interval_frames,
                    _ => self.cfg.nrtps_poll_interval_frames,
                };
                if interval > 0 && frame_index % interval == 0 {
                    for fid in self.rotation(class, frame_index) {
                        self.emit_poll_slot(fid, &mut remaining, &mut ledger);
                    }
                }
            }
            self.serve_requests(class, frame_index, flows, &mut remaining, &mut ledger, &mut transmissions)?;
        }
        self.serve_requests(
            SchedulingType::Be,
            frame_index,
            flows,
            &mut remaining,
            &mut ledger,
            &mut transmissions,
        )?;

        ledger.header_overhead_bytes = transmissions.iter().map(|p| p.mac_header_bytes).sum();
        if ledger.admission_violation {
            self.admission_violations += 1;
            log::warn!(
                "frame {}: reserved grants exceed capacity {} B; shedding (admission violation)",
                frame_index,
                capacity_bytes
            );
        }
        ledger.validate()?;
        Ok(FrameOutput {
            ledger,
            transmissions,
        })
    }

    /// One UGS or ertPS flow's turn: accrue entitlement, then either bank it
    /// (head PDU does not fit yet) or grant-and-serve the largest whole-PDU
    /// prefix it covers. Banking stands in for fragmenting the head PDU
    /// across fixed-size grants, so it is only honored while there is a head
    /// PDU to fragment: entitlement left over after the queue drains goes
    /// out as padding waste on the same grant. Flows idle at frame start are
    /// deferred onto `idle` and wasted after every backlogged reservation
    /// has been served.
    fn serve_reserved(
        &mut self,
        fid: FlowId,
        flows: &mut [ServiceFlow],
        remaining: &mut u64,
        ledger: &mut FrameLedger,
        transmissions: &mut Vec<MacPdu>,
        idle: &mut Vec<FlowId>,
    ) -> Result<(), SchedulerError> {
        let st = self
            .flows
            .get_mut(&fid.0)
            .ok_or(SchedulerError::UnknownFlow(fid))?;
        let flow = &mut flows[fid.0];

        if let Some(ertps) = st.ertps {
            if ertps.reduced {
                st.reduced_frames += 1;
                // Reduced mode: just the request slot, kept open every frame
                // so the station can ask for restoration.
                let slot = ertps.current_grant_bytes.min(*remaining);
                if slot < ertps.current_grant_bytes {
                    ledger.admission_violation = true;
                }
                if slot > 0 {
                    *remaining -= slot;
                    ledger.grants.push(Grant {
                        flow: fid,
                        kind: GrantKind::UnicastPoll,
                        granted_bytes: slot,
                        used_bytes: slot,
                        wasted_bytes: 0,
                    });
                }
                return Ok(());
            }
            st.allowance += ertps.current_grant_bytes;
        } else {
            st.allowance += st.reserve.next_frame_bytes();
        }

        if flow.backlog_bytes() == 0 {
            idle.push(fid);
            return Ok(());
        }

        let target = flow.prefix_fit(st.allowance);
        let granted = flow.prefix_fit(target.min(*remaining));
        st.allowance -= target;
        if granted < target {
            // Capacity pressure: the claim is shed down to one head PDU, so
            // a persistent overcommit cannot bank an unbounded entitlement
            // but the squeezed flow recovers on its next first turn.
            ledger.admission_violation = true;
            let head = flow.head_payload_bytes().unwrap_or(0);
            st.allowance += (target - granted).min(head);
        }
        if granted > 0 {
            *remaining -= granted;
            let pdus = flow.dequeue_up_to(granted);
            let used: u64 = pdus.iter().map(|p| p.payload_bytes).sum();
            debug_assert_eq!(used, granted, "whole-PDU prefix mismatch");
            transmissions.extend(pdus);
            // Entitlement left over once the queue has drained has nothing
            // to fragment, so the grant goes out padded instead of banking
            // bandwidth the station was not offering.
            let padding = if flow.backlog_bytes() == 0 {
                let padding = st.allowance.min(*remaining);
                st.allowance = 0;
                *remaining -= padding;
                padding
            } else {
                0
            };
            ledger.grants.push(Grant {
                flow: fid,
                kind: GrantKind::Data,
                granted_bytes: granted + padding,
                used_bytes: used,
                wasted_bytes: padding,
            });
        }
        Ok(())
    }

    /// Grants an idle reservation its accrued entitlement as pure waste. The
    /// slot capacity is real (request-served classes still queue behind it)
    /// but it never banks, and coming up short here is not a violation: an
    /// idle pipe sheds nothing but placeholder bytes.
    fn waste_idle_reserved(
        &mut self,
        fid: FlowId,
        remaining: &mut u64,
        ledger: &mut FrameLedger,
    ) -> Result<(), SchedulerError> {
        let st = self
            .flows
            .get_mut(&fid.0)
            .ok_or(SchedulerError::UnknownFlow(fid))?;
        let granted = st.allowance.min(*remaining);
        st.allowance = 0;
        if granted > 0 {
            *remaining -= granted;
            ledger.grants.push(Grant {
                flow: fid,
                kind: GrantKind::Data,
                granted_bytes: granted,
                used_bytes: 0,
                wasted_bytes: granted,
            });
        }
        Ok(())
    }

    fn emit_poll_slot(&mut self, fid: FlowId, remaining: &mut u64, ledger: &mut FrameLedger) {
        let slot = self.cfg.bw_request_size_bytes.min(*remaining);
        if slot < self.cfg.bw_request_size_bytes {
            ledger.admission_violation = true;
        }
        if slot > 0 {
            *remaining -= slot;
            ledger.grants.push(Grant {
                flow: fid,
                kind: GrantKind::UnicastPoll,
                granted_bytes: slot,
                used_bytes: slot,
                wasted_bytes: 0,
            });
        }
    }

    /// Serves outstanding bandwidth requests for one class, whole PDU at a
    /// time round-robin, each flow limited by its request, its sustained-rate
    /// bucket, and the remaining frame capacity.
    fn serve_requests(
        &mut self,
        class: SchedulingType,
        frame_index: u64,
        flows: &mut [ServiceFlow],
        remaining: &mut u64,
        ledger: &mut FrameLedger,
        transmissions: &mut Vec<MacPdu>,
    ) -> Result<(), SchedulerError> {
        let rotation = self.rotation(class, frame_index);
        if rotation.is_empty() {
            return Ok(());
        }

        // Refresh each flow's sustained-rate bucket once per frame. The
        // bucket banks up to one head PDU beyond the per-frame rate so that
        // PDUs larger than a single frame's rate quantum can still flow.
        for &fid in &rotation {
            let st = self
                .flows
                .get_mut(&fid.0)
                .ok_or(SchedulerError::UnknownFlow(fid))?;
            let head = flows[fid.0].head_payload_bytes().unwrap_or(0);
            let cap = st.mstr_nominal.max(head);
            st.mstr_allowance = (st.mstr_allowance + st.mstr_shaper.next_frame_bytes()).min(cap);
        }

        let mut granted_order: Vec<FlowId> = Vec::new();
        let mut granted_bytes: BTreeMap<usize, u64> = BTreeMap::new();
        loop {
            let mut progress = false;
            for &fid in &rotation {
                let st = self.flows.get_mut(&fid.0).expect("registered above");
                let flow = &mut flows[fid.0];
                let Some(head) = flow.head_payload_bytes() else {
                    continue;
                };
                if st.outstanding_bytes < head
                    || st.mstr_allowance < head
                    || *remaining < head
                {
                    continue;
                }
                let mut pdus = flow.dequeue_up_to(head);
                debug_assert_eq!(pdus.len(), 1);
                st.outstanding_bytes -= head;
                st.mstr_allowance -= head;
                *remaining -= head;
                transmissions.append(&mut pdus);
                if !granted_bytes.contains_key(&fid.0) {
                    granted_order.push(fid);
                }
                *granted_bytes.entry(fid.0).or_insert(0) += head;
                progress = true;
            }
            if !progress {
                break;
            }
        }

        for fid in granted_order {
            let bytes = granted_bytes[&fid.0];
            ledger.grants.push(Grant {
                flow: fid,
                kind: GrantKind::Data,
                granted_bytes: bytes,
                used_bytes: bytes,
                wasted_bytes: 0,
            });
        }
        Ok(())
    }
}

/// Signals a subscriber station raises at the end of a frame, applied by the
/// base station from the next frame (one-frame signaling latency).
#[derive(Debug, Default)]
pub struct FrameSignals {
    pub requests: Vec<BwRequest>,
    pub grant_changes: Vec<GrantChange>,
}

#[derive(Debug)]
struct AgentFlowState {
    sched: SchedulingType,
    nominal_per_frame: u64,
    last_contention_frame: Option<u64>,
    /// What the station last told the base station about its ertPS mode.
    signaled_reduced: bool,
}

/// Subscriber-side request machinery for one scheduler direction.
///
/// In contention mode (uplink) a backlogged BE/nrtPS flow requests at most
/// once per contention period; the model is collision-free, so a request
/// issued in frame `k` is always heard and served from frame `k + 1`. In
/// auto mode (downlink, where the scheduler can see its own queues) every
/// backlogged request-served flow refreshes its request each frame.
pub struct SsRequestAgent {
    contention_period_frames: u64,
    auto_request_every_frame: bool,
    flows: BTreeMap<usize, AgentFlowState>,
}

impl SsRequestAgent {
    pub fn new(contention_period_frames: u64, auto_request_every_frame: bool) -> Self {
        SsRequestAgent {
            contention_period_frames,
            auto_request_every_frame,
            flows: BTreeMap::new(),
        }
    }

    pub fn register_flow(&mut self, flow: &ServiceFlow, frame_us: u64) {
        self.flows.insert(
            flow.id.0,
            AgentFlowState {
                sched: flow.class.scheduling_type,
                nominal_per_frame: GrantShaper::nominal_bytes_per_frame(
                    flow.class.min_reserved_rate_bps,
                    frame_us,
                ),
                last_contention_frame: None,
                signaled_reduced: false,
            },
        );
    }

    /// Runs after frame `frame_index` has been scheduled and served,
    /// producing the requests and grant changes the base station will apply
    /// to the next frame. `source_active` reports whether the application
    /// feeding a flow is currently generating traffic (a silent voice source
    /// or an absent source returns false).
    pub fn after_frame(
        &mut self,
        frame_index: u64,
        flows: &[ServiceFlow],
        ledger: &FrameLedger,
        source_active: &dyn Fn(FlowId) -> bool,
    ) -> FrameSignals {
        let mut signals = FrameSignals::default();

        // Poll replies: every polled flow reports its backlog, zero included
        // (a zero request truthfully clears any stale outstanding bytes).
        if !self.auto_request_every_frame {
            for grant in &ledger.grants {
                if grant.kind != GrantKind::UnicastPoll {
                    continue;
                }
                let Some(state) = self.flows.get(&grant.flow.0) else {
                    continue;
                };
                if matches!(state.sched, SchedulingType::Rtps | SchedulingType::Nrtps) {
                    signals.requests.push(BwRequest {
                        flow: grant.flow,
                        requested_bytes: flows[grant.flow.0].backlog_bytes(),
                        issued_frame: frame_index,
                    });
                }
            }
        }

        for (idx, state) in self.flows.iter_mut() {
            let flow = &flows[*idx];
            let backlog = flow.backlog_bytes();
            match state.sched {
                SchedulingType::Ertps => {
                    if state.signaled_reduced {
                        if backlog > 0 {
                            // Traffic resumed: ask for the nominal grant back
                            // through the standing request slot.
                            signals.grant_changes.push(GrantChange {
                                flow: flow.id,
                                requested_per_frame_bytes: state.nominal_per_frame,
                            });
                            state.signaled_reduced = false;
                        }
                    } else if backlog == 0 && !source_active(flow.id) {
                        signals.grant_changes.push(GrantChange {
                            flow: flow.id,
                            requested_per_frame_bytes: 0,
                        });
                        state.signaled_reduced = true;
                    }
                }
                SchedulingType::Be | SchedulingType::Nrtps => {
                    if backlog == 0 {
                        continue;
                    }
                    let due = if self.auto_request_every_frame {
                        true
                    } else {
                        state
                            .last_contention_frame
                            .map_or(true, |last| frame_index >= last + self.contention_period_frames)
                    };
                    if due {
                        signals.requests.push(BwRequest {
                            flow: flow.id,
                            requested_bytes: backlog,
                            issued_frame: frame_index,
                        });
                        state.last_contention_frame = Some(frame_index);
                    }
                }
                SchedulingType::Rtps if self.auto_request_every_frame => {
                    if backlog > 0 {
                        signals.requests.push(BwRequest {
                            flow: flow.id,
                            requested_bytes: backlog,
                            issued_frame: frame_index,
                        });
                    }
                }
                _ => {}
            }
        }
        signals
    }
}
