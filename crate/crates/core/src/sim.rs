//! Scenario assembly and the event loop.
//!
//! One [`Simulation`] models one cell: a flow table shared by the uplink and
//! downlink schedulers, the subscriber-side request agents, both link
//! directions, the traffic sources, and the recorder. Multi-cell runs execute
//! the cells sequentially with per-cell seeds and merge the outputs.
//!
//! Event ordering within an instant is insertion-order FIFO, and every
//! periodic chain re-schedules itself exactly one period ahead, so at any
//! shared instant the report tick runs first (its window excludes the
//! instant), then traffic arrivals, then the frame build that serves them.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::channel::{LinkModel, Transit};
use crate::config::{Config, StationRole};
use crate::engine::{EventQueue, FrameClock, RngStreams, SimTime};
use crate::metrics::{render_rows_csv, FlowMeta, FlowSummary, MetricRow, Recorder};
use crate::qos::{AppTag, Direction, FlowId, MacPdu, SchedulingType, ServiceFlow};
use crate::scheduler::{BsScheduler, FrameLedger, SchedulerConfig, SsRequestAgent};
use crate::traffic::{DataClient, DataClientStats, DataConfig, VoiceConfig, VoiceSource};
use crate::Error;

#[derive(Debug, Clone)]
enum EventKind {
    FrameStart,
    VoiceTick { source: usize },
    DataWake { client: usize },
    Delivery { pdu: MacPdu },
    ReportTick,
}

/// Everything specific to one transmission direction.
struct DirectionStack {
    direction: Direction,
    capacity_bytes: u64,
    scheduler: BsScheduler,
    agent: SsRequestAgent,
    link: LinkModel,
}

/// End-of-run aggregate for one flow.
#[derive(Debug, Clone)]
pub struct FlowReport {
    pub entity: String,
    pub station: usize,
    pub direction: Direction,
    pub class_name: String,
    pub scheduling: SchedulingType,
    pub role: StationRole,
    pub summary: FlowSummary,
    /// Frames this flow spent on the shrunk ertPS request slot.
    pub reduced_frames: u64,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct DataTotals {
    pub requests_sent: u64,
    pub responses_matched: u64,
    pub timeouts: u64,
    pub stale_responses: u64,
}

impl DataTotals {
    fn add(&mut self, stats: DataClientStats) {
        self.requests_sent += stats.requests_sent;
        self.responses_matched += stats.responses_matched;
        self.timeouts += stats.timeouts;
        self.stale_responses += stats.stale_responses;
    }
}

/// Everything measured in one cell.
#[derive(Debug, Clone)]
pub struct CellReport {
    pub cell_index: u32,
    pub seed: u64,
    pub flows: Vec<FlowReport>,
    pub ul_admission_violations: u64,
    pub dl_admission_violations: u64,
    pub data: DataTotals,
    pub rows: Vec<MetricRow>,
    frame_dump: Vec<(Direction, FrameLedger)>,
}

impl CellReport {
    pub fn flow(&self, entity: &str) -> Option<&FlowReport> {
        self.flows.iter().find(|f| f.entity == entity)
    }

    /// All `(time_s, value)` points recorded for one entity/metric pair.
    pub fn series(&self, entity: &str, metric: &str) -> Vec<(f64, f64)> {
        self.rows
            .iter()
            .filter(|r| r.entity == entity && r.metric == metric)
            .map(|r| (r.time_s, r.value))
            .collect()
    }
}

/// A finished run: reports per cell plus the rendered artifacts.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub scenario: String,
    pub seed: u64,
    pub duration_s: u64,
    pub warmup_s: u64,
    pub cells: Vec<CellReport>,
    pub metrics_csv: String,
    pub frames_csv: Option<String>,
    pub summary: String,
}

fn entity_name(cells: u32, cell_index: u32, station: usize, dir: Direction, class: &str) -> String {
    let base = format!("ss{station}_{}_{}", dir.label(), class.to_lowercase());
    if cells > 1 {
        format!("cell{}_{base}", cell_index + 1)
    } else {
        base
    }
}

/// One cell's worth of state.
pub struct Simulation {
    cell_index: u32,
    seed: u64,
    frame_clock: FrameClock,
    frame_us: u64,
    report_interval_us: u64,
    horizon: SimTime,
    rng: RngStreams,
    flows: Vec<ServiceFlow>,
    flow_roles: Vec<StationRole>,
    ul: DirectionStack,
    dl: DirectionStack,
    voice_sources: Vec<VoiceSource>,
    voice_source_by_flow: BTreeMap<usize, usize>,
    clients: Vec<DataClient>,
    client_by_ul_flow: BTreeMap<usize, usize>,
    client_by_dl_flow: BTreeMap<usize, usize>,
    recorder: Recorder,
    frame_dump: Option<Vec<(Direction, FrameLedger)>>,
}

impl Simulation {
    pub fn new(cfg: &Config, cell_index: u32, dump_frames: bool) -> Result<Self, Error> {
        let seed = cfg.sim.seed + cell_index as u64;
        let mut rng = RngStreams::new(seed);
        let frame_us = cfg.phy.frame_us;

        let sched_cfg = |emit_polls: bool| SchedulerConfig {
            frame_us,
            bw_request_size_bytes: cfg.phy.bw_request_size_bytes,
            rtps_poll_interval_frames: cfg.scheduler.rtps_poll_interval_frames,
            nrtps_poll_interval_frames: cfg.scheduler.nrtps_poll_interval_frames,
            emit_polls,
        };
        let ul_link_stream = rng.register("ul_link");
        let dl_link_stream = rng.register("dl_link");
        let mut ul = DirectionStack {
            direction: Direction::Uplink,
            capacity_bytes: cfg.phy.ul_capacity_bytes_per_frame,
            scheduler: BsScheduler::new(sched_cfg(true)),
            agent: SsRequestAgent::new(cfg.scheduler.contention_period_frames, false),
            link: LinkModel::new(cfg.channel.delay_us, cfg.channel.loss_probability, ul_link_stream),
        };
        let mut dl = DirectionStack {
            direction: Direction::Downlink,
            capacity_bytes: cfg.phy.dl_capacity_bytes_per_frame,
            scheduler: BsScheduler::new(sched_cfg(false)),
            agent: SsRequestAgent::new(cfg.scheduler.contention_period_frames, true),
            link: LinkModel::new(cfg.channel.delay_us, cfg.channel.loss_probability, dl_link_stream),
        };

        let mut recorder = Recorder::new(
            cfg.sim.report_interval_ms * 1_000,
            cfg.sim.voice_window_ms * 1_000,
            cfg.sim.warmup_s * 1_000_000,
        );

        let voice_cfg = VoiceConfig {
            packet_interval_us: cfg.voice.packet_interval_us,
            codec_payload_bytes: cfg.voice.codec_payload_bytes,
            ip_overhead_bytes: cfg.voice.ip_overhead_bytes,
            mac_header_bytes: cfg.phy.mac_header_bytes,
            mean_talk_us: cfg.voice.mean_talk_ms * 1_000,
            mean_silence_us: cfg.voice.mean_silence_ms * 1_000,
            silence_suppression: cfg.voice.silence_suppression,
        };
        let data_cfg = DataConfig {
            request_bytes: cfg.data.request_bytes,
            response_bytes: cfg.data.response_bytes,
            mac_header_bytes: cfg.phy.mac_header_bytes,
            mean_think_us: cfg.data.mean_think_ms * 1_000,
            response_timeout_us: cfg.data.response_timeout_ms * 1_000,
            concurrency: cfg.data.concurrency,
        };

        let mut flows: Vec<ServiceFlow> = Vec::new();
        let mut flow_roles: Vec<StationRole> = Vec::new();
        let mut voice_sources = Vec::new();
        let mut voice_source_by_flow = BTreeMap::new();
        let mut clients = Vec::new();
        let mut client_by_ul_flow = BTreeMap::new();
        let mut client_by_dl_flow = BTreeMap::new();

        for spec in cfg.station_plan() {
            let class = cfg.service_class(&spec.class_name)?;
            let mut ids = [FlowId(0); 2];
            for (i, dir) in [Direction::Uplink, Direction::Downlink].into_iter().enumerate() {
                let id = FlowId(flows.len());
                ids[i] = id;
                let entity = entity_name(cfg.sim.cells, cell_index, spec.station, dir, &class.name);
                let mut flow = ServiceFlow::new(id, &entity, spec.station, dir, class.clone());
                flow.queue_byte_cap = match spec.role {
                    StationRole::Voice => cfg.queues.voice_queue_cap_bytes,
                    StationRole::Data => cfg.queues.data_queue_cap_bytes,
                    StationRole::Reservation => None,
                };
                let stack = match dir {
                    Direction::Uplink => &mut ul,
                    Direction::Downlink => &mut dl,
                };
                stack.scheduler.register_flow(&flow);
                stack.agent.register_flow(&flow, frame_us);
                recorder.register_flow(FlowMeta {
                    id,
                    entity,
                    is_voice: spec.role == StationRole::Voice,
                });
                flows.push(flow);
                flow_roles.push(spec.role);
            }

            match spec.role {
                StationRole::Voice => {
                    for (i, dir) in ["ul", "dl"].into_iter().enumerate() {
                        let stream = rng.register(&format!("voice_ss{}_{dir}", spec.station));
                        let source =
                            VoiceSource::new(voice_cfg, ids[i], stream, &mut rng, SimTime::ZERO)?;
                        voice_source_by_flow.insert(ids[i].0, voice_sources.len());
                        voice_sources.push(source);
                    }
                }
                StationRole::Data => {
                    let stream = rng.register(&format!("data_ss{}", spec.station));
                    let client =
                        DataClient::new(data_cfg, ids[0], ids[1], stream, &mut rng, SimTime::ZERO)?;
                    client_by_ul_flow.insert(ids[0].0, clients.len());
                    client_by_dl_flow.insert(ids[1].0, clients.len());
                    clients.push(client);
                }
                StationRole::Reservation => {}
            }
        }

        Ok(Simulation {
            cell_index,
            seed,
            frame_clock: FrameClock::new(SimTime::from_us(frame_us)),
            frame_us,
            report_interval_us: cfg.sim.report_interval_ms * 1_000,
            horizon: cfg.duration(),
            rng,
            flows,
            flow_roles,
            ul,
            dl,
            voice_sources,
            voice_source_by_flow,
            clients,
            client_by_ul_flow,
            client_by_dl_flow,
            recorder,
            frame_dump: dump_frames.then(Vec::new),
        })
    }

    fn enqueue_pdu(&mut self, pdu: MacPdu, now: SimTime) -> Result<(), Error> {
        let flow = &mut self.flows[pdu.flow.0];
        let outcome = flow.enqueue(pdu, now)?;
        if outcome == crate::qos::EnqueueOutcome::Dropped {
            self.recorder.on_lost(&pdu, now);
        }
        self.recorder
            .observe_queue(pdu.flow, now, self.flows[pdu.flow.0].backlog_bytes());
        Ok(())
    }

    fn handle(
        &mut self,
        queue: &mut EventQueue<EventKind>,
        now: SimTime,
        kind: EventKind,
    ) -> Result<(), Error> {
        match kind {
            EventKind::ReportTick => {
                self.recorder.tick(now, &self.flows);
                queue.schedule(now.advanced_by(self.report_interval_us), EventKind::ReportTick)?;
            }
            EventKind::VoiceTick { source } => {
                if let Some(pdu) = self.voice_sources[source].on_tick(now, &mut self.rng)? {
                    self.enqueue_pdu(pdu, now)?;
                }
                let interval = self.voice_sources[source].packet_interval_us();
                queue.schedule(now.advanced_by(interval), EventKind::VoiceTick { source })?;
            }
            EventKind::DataWake { client } => {
                let pdus = self.clients[client].advance(now);
                if !pdus.is_empty() {
                    for pdu in pdus {
                        self.enqueue_pdu(pdu, now)?;
                    }
                    if let Some(wake) = self.clients[client].next_wake() {
                        queue.schedule(wake, EventKind::DataWake { client })?;
                    }
                }
            }
            EventKind::Delivery { pdu } => {
                self.recorder.on_delivered(&pdu, now);
                match pdu.tag {
                    AppTag::Voice => {}
                    AppTag::DataRequest => {
                        // The server answers a delivered request immediately
                        // on the station's downlink best-effort flow.
                        if let Some(&idx) = self.client_by_ul_flow.get(&pdu.flow.0) {
                            let response = self.clients[idx].make_response(&pdu, now);
                            self.enqueue_pdu(response, now)?;
                        }
                    }
                    AppTag::DataResponse => {
                        if let Some(&idx) = self.client_by_dl_flow.get(&pdu.flow.0) {
                            let matched =
                                self.clients[idx].accept_response(pdu.seq, now, &mut self.rng)?;
                            if matched {
                                if let Some(wake) = self.clients[idx].next_wake() {
                                    queue.schedule(wake, EventKind::DataWake { client: idx })?;
                                }
                            }
                        }
                    }
                }
            }
            EventKind::FrameStart => {
                let frame = self.frame_clock.frame_at(now);
                self.run_frame(queue, now, frame)?;
                queue.schedule(now.advanced_by(self.frame_us), EventKind::FrameStart)?;
            }
        }
        Ok(())
    }

    fn run_frame(
        &mut self,
        queue: &mut EventQueue<EventKind>,
        now: SimTime,
        frame: u64,
    ) -> Result<(), Error> {
        // Snapshot source activity once per frame; the request agents use it
        // to decide ertPS grant changes. Flows without a source (the
        // reservation pipe) count as silent.
        let mut active: BTreeMap<usize, bool> = BTreeMap::new();
        for (&flow_idx, &src_idx) in &self.voice_source_by_flow {
            let is_active = self.voice_sources[src_idx].is_active(now, &mut self.rng)?;
            active.insert(flow_idx, is_active);
        }

        for stack in [&mut self.ul, &mut self.dl] {
            let dir = stack.direction;
            let out = stack
                .scheduler
                .build_frame_map(frame, &mut self.flows, stack.capacity_bytes)?;
            for pdu in out.transmissions {
                match stack.link.transit(now, &mut self.rng)? {
                    Transit::Delivered { at } => {
                        queue.schedule(at, EventKind::Delivery { pdu })?;
                    }
                    Transit::Lost => self.recorder.on_lost(&pdu, now),
                }
            }
            for flow in self.flows.iter().filter(|f| f.direction == dir) {
                self.recorder.observe_queue(flow.id, now, flow.backlog_bytes());
            }
            let lookup = |fid: FlowId| active.get(&fid.0).copied().unwrap_or(false);
            let signals = stack.agent.after_frame(frame, &self.flows, &out.ledger, &lookup);
            for request in signals.requests {
                stack.scheduler.submit_request(request)?;
            }
            for change in signals.grant_changes {
                stack.scheduler.submit_grant_change(change)?;
            }
            if let Some(dump) = self.frame_dump.as_mut() {
                dump.push((dir, out.ledger));
            }
        }
        Ok(())
    }

    /// Runs the cell to its horizon and folds everything into a report.
    pub fn run(mut self) -> Result<CellReport, Error> {
        let mut queue = EventQueue::new();
        queue.schedule(SimTime::ZERO, EventKind::ReportTick)?;
        for source in 0..self.voice_sources.len() {
            queue.schedule(SimTime::ZERO, EventKind::VoiceTick { source })?;
        }
        for client in 0..self.clients.len() {
            if let Some(wake) = self.clients[client].next_wake() {
                queue.schedule(wake, EventKind::DataWake { client })?;
            }
        }
        queue.schedule(SimTime::ZERO, EventKind::FrameStart)?;

        while let Some(event) = queue.pop_due(self.horizon) {
            self.handle(&mut queue, event.fire_time, event.payload)?;
        }
        self.recorder.audit(&self.flows)?;

        let mut reports = Vec::with_capacity(self.flows.len());
        for flow in &self.flows {
            let summary = self.recorder.flow_summary(flow.id, &self.flows)?;
            let stack = match flow.direction {
                Direction::Uplink => &self.ul,
                Direction::Downlink => &self.dl,
            };
            reports.push(FlowReport {
                entity: summary.entity.clone(),
                station: flow.station,
                direction: flow.direction,
                class_name: flow.class.name.clone(),
                scheduling: flow.class.scheduling_type,
                role: self.flow_roles[flow.id.0],
                summary,
                reduced_frames: stack.scheduler.reduced_frames(flow.id),
            });
        }
        let mut data = DataTotals::default();
        for client in &self.clients {
            data.add(client.stats());
        }

        Ok(CellReport {
            cell_index: self.cell_index,
            seed: self.seed,
            flows: reports,
            ul_admission_violations: self.ul.scheduler.admission_violations(),
            dl_admission_violations: self.dl.scheduler.admission_violations(),
            data,
            rows: self.recorder.rows().to_vec(),
            frame_dump: self.frame_dump.unwrap_or_default(),
        })
    }
}

fn render_frames_csv(cells: &[CellReport]) -> String {
    let mut out = String::from("cell,frame,direction,flow,kind,granted_bytes,used_bytes,wasted_bytes\n");
    for cell in cells {
        for (dir, ledger) in &cell.frame_dump {
            for grant in &ledger.grants {
                let entity = cell
                    .flows
                    .get(grant.flow.0)
                    .map_or("?", |f| f.entity.as_str());
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{},{},{}",
                    cell.cell_index + 1,
                    ledger.frame_index,
                    dir.label(),
                    entity,
                    grant.kind.label(),
                    grant.granted_bytes,
                    grant.used_bytes,
                    grant.wasted_bytes,
                );
            }
        }
    }
    out
}

fn render_summary(scenario: &str, cfg: &Config, cells: &[CellReport]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "scenario: {scenario}");
    let _ = writeln!(s, "seed: {}", cfg.sim.seed);
    let _ = writeln!(
        s,
        "horizon: {} s (warmup {} s), cells: {}",
        cfg.sim.duration_s, cfg.sim.warmup_s, cfg.sim.cells
    );
    let _ = writeln!(
        s,
        "frame: {} us, uplink {} B/frame, downlink {} B/frame",
        cfg.phy.frame_us, cfg.phy.ul_capacity_bytes_per_frame, cfg.phy.dl_capacity_bytes_per_frame
    );
    if !cfg.metadata.is_empty() {
        let _ = writeln!(s, "metadata:");
        for (k, v) in &cfg.metadata {
            let _ = writeln!(s, "  {k}: {v}");
        }
    }

    for cell in cells {
        let _ = writeln!(s);
        let _ = writeln!(s, "== cell {} (seed {}) ==", cell.cell_index + 1, cell.seed);
        let _ = writeln!(
            s,
            "admission violations: uplink {} frames, downlink {} frames",
            cell.ul_admission_violations, cell.dl_admission_violations
        );
        let _ = writeln!(
            s,
            "{:<22} {:<9} {:<6} {:>12} {:>12} {:>10} {:>12} {:>9} {:>9}",
            "flow", "class", "sched", "offered_B", "delivered_B", "dropped_B", "queue_B", "mean_ms", "p95_ms"
        );
        for flow in &cell.flows {
            let fmt_ms = |v: Option<f64>| match v {
                Some(ms) => format!("{ms:.2}"),
                None => "-".to_string(),
            };
            let _ = writeln!(
                s,
                "{:<22} {:<9} {:<6} {:>12} {:>12} {:>10} {:>12} {:>9} {:>9}",
                flow.entity,
                flow.class_name,
                flow.scheduling.label(),
                flow.summary.offered_bytes,
                flow.summary.delivered_bytes,
                flow.summary.dropped_bytes,
                flow.summary.final_queue_bytes,
                fmt_ms(flow.summary.mean_delay_ms),
                fmt_ms(flow.summary.p95_delay_ms),
            );
        }

        let voice_flows: Vec<&FlowReport> = cell
            .flows
            .iter()
            .filter(|f| f.summary.voice.is_some())
            .collect();
        if !voice_flows.is_empty() {
            let _ = writeln!(s, "voice quality (post-warmup windows):");
            for flow in voice_flows {
                let v = flow.summary.voice.as_ref().expect("voice summary");
                if v.scored_windows == 0 {
                    let _ = writeln!(s, "  {}: no scored windows", flow.entity);
                } else {
                    let _ = writeln!(
                        s,
                        "  {}: windows {}, mean MOS {:.3}, min MOS {:.3}, mean R {:.1}, mean delay {:.1} ms, loss {:.4}",
                        flow.entity,
                        v.scored_windows,
                        v.mean_mos,
                        v.min_mos,
                        v.mean_r,
                        v.mean_delay_ms,
                        v.mean_loss_fraction,
                    );
                }
            }
        }

        let reduced: Vec<&FlowReport> =
            cell.flows.iter().filter(|f| f.reduced_frames > 0).collect();
        if !reduced.is_empty() {
            let _ = writeln!(s, "ertPS reduced-grant frames:");
            for flow in reduced {
                let _ = writeln!(s, "  {}: {}", flow.entity, flow.reduced_frames);
            }
        }

        let d = &cell.data;
        let _ = writeln!(
            s,
            "data transactions: requests {}, completed {}, timeouts {}, stale {}",
            d.requests_sent, d.responses_matched, d.timeouts, d.stale_responses
        );

        let mut warnings = Vec::new();
        for flow in &cell.flows {
            let reserved = matches!(flow.scheduling, SchedulingType::Ugs | SchedulingType::Ertps);
            if reserved && flow.summary.final_queue_bytes > 1_200 {
                warnings.push(format!(
                    "reserved service under-provisioned: {} ended with {} B queued",
                    flow.entity, flow.summary.final_queue_bytes
                ));
            }
        }
        if cell.ul_admission_violations + cell.dl_admission_violations > 0 {
            warnings.push("reserved commitments exceeded frame capacity; grants were shed".into());
        }
        if !warnings.is_empty() {
            let _ = writeln!(s, "warnings:");
            for w in warnings {
                let _ = writeln!(s, "  {w}");
            }
        }
    }
    s
}

/// Runs every cell of a scenario and renders the merged outputs.
pub fn run_scenario(cfg: &Config, scenario: &str, dump_frames: bool) -> Result<RunOutput, Error> {
    let mut cells = Vec::with_capacity(cfg.sim.cells as usize);
    for cell_index in 0..cfg.sim.cells {
        let sim = Simulation::new(cfg, cell_index, dump_frames)?;
        cells.push(sim.run()?);
    }

    let metrics_csv = render_rows_csv(cells.iter().flat_map(|c| c.rows.iter()))?;
    let frames_csv = dump_frames.then(|| render_frames_csv(&cells));
    let summary = render_summary(scenario, cfg, &cells);

    Ok(RunOutput {
        scenario: scenario.to_owned(),
        seed: cfg.sim.seed,
        duration_s: cfg.sim.duration_s,
        warmup_s: cfg.sim.warmup_s,
        cells,
        metrics_csv,
        frames_csv,
        summary,
    })
}
