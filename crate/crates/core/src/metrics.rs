//! Measurement pipeline.
//!
//! The recorder tracks every flow's offered/delivered/lost bytes, end-to-end
//! delays, and a time-weighted queue integral, and emits a long-format CSV
//! time series (`time_s,entity,metric,value`) at a fixed reporting interval.
//! Voice flows additionally get a sliding-window conversational-quality
//! score (R-factor and MOS) over the trailing window at each report tick.
//!
//! Windows are half-open `[t - w, t)`: a sample landing exactly on a report
//! tick belongs to the next window.

use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

use crate::emodel::{score_window, Codec, VoiceQualityScore, VoiceWindowStats, WindowScore};
use crate::engine::SimTime;
use crate::qos::{FlowId, MacPdu, ServiceFlow};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("flow {0:?} is not registered with the recorder")]
    UnknownFlow(FlowId),
    #[error("csv rendering failed: {0}")]
    Csv(String),
    #[error("conservation violated for {entity}: offered {offered} B != sent {sent} B + dropped {dropped} B + queued {queued} B")]
    Conservation {
        entity: String,
        offered: u64,
        sent: u64,
        dropped: u64,
        queued: u64,
    },
    #[error("{entity}: delivered {delivered} + lost {lost} PDUs exceeds the {sent} sent")]
    DeliveryExceedsSent {
        entity: String,
        delivered: u64,
        lost: u64,
        sent: u64,
    },
}

/// Static description of a flow as it appears in the output.
#[derive(Debug, Clone)]
pub struct FlowMeta {
    pub id: FlowId,
    pub entity: String,
    pub is_voice: bool,
}

/// One long-format output record.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct MetricRow {
    pub time_s: f64,
    pub entity: String,
    pub metric: String,
    pub value: f64,
}

#[derive(Debug, Clone, Copy)]
struct DeliveryRec {
    at: SimTime,
    delay_us: u64,
    bytes: u64,
}

#[derive(Debug)]
struct FlowTrack {
    meta: FlowMeta,
    delivered_bytes: u64,
    delivered_pdus: u64,
    lost_bytes: u64,
    lost_pdus: u64,
    deliveries: Vec<DeliveryRec>,
    losses: Vec<SimTime>,
    q_integral_byte_us: u128,
    q_last_at: SimTime,
    q_last_depth: u64,
    prev_offered_bytes: u64,
    prev_delivered_bytes: u64,
    tick_delivery_lo: usize,
    voice_scores: Vec<(SimTime, VoiceQualityScore)>,
}

impl FlowTrack {
    fn new(meta: FlowMeta) -> Self {
        FlowTrack {
            meta,
            delivered_bytes: 0,
            delivered_pdus: 0,
            lost_bytes: 0,
            lost_pdus: 0,
            deliveries: Vec::new(),
            losses: Vec::new(),
            q_integral_byte_us: 0,
            q_last_at: SimTime::ZERO,
            q_last_depth: 0,
            prev_offered_bytes: 0,
            prev_delivered_bytes: 0,
            tick_delivery_lo: 0,
            voice_scores: Vec::new(),
        }
    }

    fn fold_queue(&mut self, now: SimTime) {
        let span = now.since(self.q_last_at);
        self.q_integral_byte_us += self.q_last_depth as u128 * span as u128;
        self.q_last_at = now;
    }
}

/// Aggregated end-of-run view of one flow (post-warmup where noted).
#[derive(Debug, Clone)]
pub struct FlowSummary {
    pub entity: String,
    pub offered_bytes: u64,
    pub sent_bytes: u64,
    pub dropped_bytes: u64,
    pub final_queue_bytes: u64,
    pub delivered_bytes: u64,
    pub delivered_pdus: u64,
    pub lost_pdus: u64,
    /// Mean end-to-end delay over post-warmup deliveries.
    pub mean_delay_ms: Option<f64>,
    /// 95th-percentile end-to-end delay over post-warmup deliveries.
    pub p95_delay_ms: Option<f64>,
    pub voice: Option<VoiceSummary>,
}

/// Post-warmup voice quality aggregates.
#[derive(Debug, Clone, Copy)]
pub struct VoiceSummary {
    pub scored_windows: usize,
    pub mean_mos: f64,
    pub min_mos: f64,
    pub mean_r: f64,
    pub min_r: f64,
    pub mean_delay_ms: f64,
    pub mean_loss_fraction: f64,
}

/// Renders long-format rows as CSV with a `time_s,entity,metric,value`
/// header.
pub fn render_rows_csv<'a, I>(rows: I) -> Result<String, MetricsError>
where
    I: IntoIterator<Item = &'a MetricRow>,
{
    let mut writer = csv::Writer::from_writer(Vec::new());
    for row in rows {
        writer
            .serialize(row)
            .map_err(|e| MetricsError::Csv(e.to_string()))?;
    }
    let bytes = writer
        .into_inner()
        .map_err(|e| MetricsError::Csv(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| MetricsError::Csv(e.to_string()))
}

/// Collects measurements for one cell and renders them.
pub struct Recorder {
    report_interval_us: u64,
    voice_window_us: u64,
    warmup_us: u64,
    tracks: BTreeMap<usize, FlowTrack>,
    rows: Vec<MetricRow>,
    last_tick_at: Option<SimTime>,
}

impl Recorder {
    pub fn new(report_interval_us: u64, voice_window_us: u64, warmup_us: u64) -> Self {
        Recorder {
            report_interval_us,
            voice_window_us,
            warmup_us,
            tracks: BTreeMap::new(),
            rows: Vec::new(),
            last_tick_at: None,
        }
    }

    pub fn report_interval_us(&self) -> u64 {
        self.report_interval_us
    }

    pub fn register_flow(&mut self, meta: FlowMeta) {
        self.tracks.insert(meta.id.0, FlowTrack::new(meta));
    }

    pub fn entity(&self, flow: FlowId) -> Option<&str> {
        self.tracks.get(&flow.0).map(|t| t.meta.entity.as_str())
    }

    /// Records a PDU reaching its sink.
    pub fn on_delivered(&mut self, pdu: &MacPdu, now: SimTime) {
        if let Some(track) = self.tracks.get_mut(&pdu.flow.0) {
            track.delivered_bytes += pdu.payload_bytes;
            track.delivered_pdus += 1;
            track.deliveries.push(DeliveryRec {
                at: now,
                delay_us: now.since(pdu.created_at),
                bytes: pdu.payload_bytes,
            });
        }
    }

    /// Records a PDU that will never arrive (channel erasure or queue drop).
    pub fn on_lost(&mut self, pdu: &MacPdu, now: SimTime) {
        if let Some(track) = self.tracks.get_mut(&pdu.flow.0) {
            track.lost_bytes += pdu.payload_bytes;
            track.lost_pdus += 1;
            track.losses.push(now);
        }
    }

    /// Folds the time-weighted queue integral up to `now` and records the
    /// new depth. Call after every enqueue and after each frame's service.
    pub fn observe_queue(&mut self, flow: FlowId, now: SimTime, depth_bytes: u64) {
        if let Some(track) = self.tracks.get_mut(&flow.0) {
            track.fold_queue(now);
            track.q_last_depth = depth_bytes;
        }
    }

    /// Time-average queue depth in bytes from the start of the run to `now`.
    pub fn time_avg_queue_bytes(&self, flow: FlowId, now: SimTime) -> f64 {
        let Some(track) = self.tracks.get(&flow.0) else {
            return 0.0;
        };
        if now.as_us() == 0 {
            return 0.0;
        }
        let span = now.since(track.q_last_at);
        let integral = track.q_integral_byte_us + track.q_last_depth as u128 * span as u128;
        integral as f64 / now.as_us() as f64
    }

    pub fn delivered_bytes(&self, flow: FlowId) -> u64 {
        self.tracks.get(&flow.0).map_or(0, |t| t.delivered_bytes)
    }

    pub fn delivered_pdus(&self, flow: FlowId) -> u64 {
        self.tracks.get(&flow.0).map_or(0, |t| t.delivered_pdus)
    }

    pub fn lost_pdus(&self, flow: FlowId) -> u64 {
        self.tracks.get(&flow.0).map_or(0, |t| t.lost_pdus)
    }

    /// Bytes delivered in `[t0, t1)`.
    pub fn delivered_bytes_between(&self, flow: FlowId, t0: SimTime, t1: SimTime) -> u64 {
        let Some(track) = self.tracks.get(&flow.0) else {
            return 0;
        };
        let lo = track.deliveries.partition_point(|d| d.at < t0);
        let hi = track.deliveries.partition_point(|d| d.at < t1);
        track.deliveries[lo..hi].iter().map(|d| d.bytes).sum()
    }

    /// Scored voice windows, in report order.
    pub fn voice_scores(&self, flow: FlowId) -> &[(SimTime, VoiceQualityScore)] {
        self.tracks
            .get(&flow.0)
            .map_or(&[], |t| t.voice_scores.as_slice())
    }

    fn push_row(&mut self, now: SimTime, entity: &str, metric: &str, value: f64) {
        self.rows.push(MetricRow {
            time_s: now.as_secs_f64(),
            entity: entity.to_owned(),
            metric: metric.to_owned(),
            value,
        });
    }

    /// Emits one report for every flow: windowed rates since the previous
    /// tick, the instantaneous queue depth, and (for voice) the trailing
    /// sliding-window quality score.
    pub fn tick(&mut self, now: SimTime, flows: &[ServiceFlow]) {
        let prev = self.last_tick_at;
        let window_start = SimTime::from_us(now.as_us().saturating_sub(self.voice_window_us));
        let flow_ids: Vec<usize> = self.tracks.keys().copied().collect();

        for idx in flow_ids {
            let flow = &flows[idx];
            let track = self.tracks.get_mut(&idx).expect("registered flow");
            let entity = track.meta.entity.clone();
            let counters = flow.counters();

            // Keep the queue integral exact across the tick.
            track.fold_queue(now);
            track.q_last_depth = counters.queued_bytes;

            let mut pending: Vec<(&'static str, f64)> = Vec::new();
            if let Some(prev_at) = prev {
                let dt_s = now.since(prev_at) as f64 / 1e6;
                if dt_s > 0.0 {
                    let offered_delta = counters.bytes_offered - track.prev_offered_bytes;
                    let delivered_delta = track.delivered_bytes - track.prev_delivered_bytes;
                    pending.push(("load_bps", offered_delta as f64 * 8.0 / dt_s));
                    pending.push(("throughput_bps", delivered_delta as f64 * 8.0 / dt_s));
                }
            }
            pending.push(("queue_depth_bytes", counters.queued_bytes as f64));

            // Mean delay over deliveries since the previous tick.
            let hi = track.deliveries.partition_point(|d| d.at < now);
            let recent = &track.deliveries[track.tick_delivery_lo..hi];
            if !recent.is_empty() {
                let mean_us =
                    recent.iter().map(|d| d.delay_us).sum::<u64>() as f64 / recent.len() as f64;
                pending.push(("mean_delay_ms", mean_us / 1e3));
            }
            track.tick_delivery_lo = hi;
            track.prev_offered_bytes = counters.bytes_offered;
            track.prev_delivered_bytes = track.delivered_bytes;

            // Voice: score the trailing window.
            let mut voice_score = None;
            if track.meta.is_voice {
                let lo = track.deliveries.partition_point(|d| d.at < window_start);
                let in_window = &track.deliveries[lo..hi];
                let loss_lo = track.losses.partition_point(|&t| t < window_start);
                let loss_hi = track.losses.partition_point(|&t| t < now);
                let lost = (loss_hi - loss_lo) as u64;
                let delivered = in_window.len() as u64;
                let total = delivered + lost;
                let mean_delay_ms = if delivered > 0 {
                    in_window.iter().map(|d| d.delay_us).sum::<u64>() as f64
                        / delivered as f64
                        / 1e3
                } else {
                    0.0
                };
                let loss_fraction = if total > 0 { lost as f64 / total as f64 } else { 0.0 };
                let stats = VoiceWindowStats {
                    mean_delay_ms,
                    loss_fraction,
                    delivered_packets: delivered,
                };
                if let Ok(WindowScore::Scored(score)) = score_window(&stats, Codec::G711) {
                    track.voice_scores.push((now, score));
                    voice_score = Some(score);
                }
            }

            for (metric, value) in pending {
                self.push_row(now, &entity, metric, value);
            }
            if let Some(s) = voice_score {
                self.push_row(now, &entity, "voice_delay_ms", s.mean_delay_ms);
                self.push_row(now, &entity, "voice_loss_frac", s.loss_fraction);
                self.push_row(now, &entity, "voice_id", s.id_component);
                self.push_row(now, &entity, "voice_ie", s.ie_component);
                self.push_row(now, &entity, "voice_r", s.r_value);
                self.push_row(now, &entity, "voice_mos", s.mos);
            }
        }
        self.last_tick_at = Some(now);
    }

    pub fn rows(&self) -> &[MetricRow] {
        &self.rows
    }

    /// All `(time_s, value)` points for one entity/metric pair.
    pub fn series(&self, entity: &str, metric: &str) -> Vec<(f64, f64)> {
        self.rows
            .iter()
            .filter(|r| r.entity == entity && r.metric == metric)
            .map(|r| (r.time_s, r.value))
            .collect()
    }

    pub fn render_csv(&self) -> Result<String, MetricsError> {
        render_rows_csv(self.rows.iter())
    }

    /// End-of-run aggregates for one flow.
    pub fn flow_summary(
        &self,
        flow: FlowId,
        flows: &[ServiceFlow],
    ) -> Result<FlowSummary, MetricsError> {
        let track = self
            .tracks
            .get(&flow.0)
            .ok_or(MetricsError::UnknownFlow(flow))?;
        let counters = flows[flow.0].counters();
        let warmup = SimTime::from_us(self.warmup_us);

        let mut delays: Vec<u64> = track
            .deliveries
            .iter()
            .filter(|d| d.at >= warmup)
            .map(|d| d.delay_us)
            .collect();
        delays.sort_unstable();
        let mean_delay_ms = (!delays.is_empty())
            .then(|| delays.iter().sum::<u64>() as f64 / delays.len() as f64 / 1e3);
        let p95_delay_ms = (!delays.is_empty()).then(|| {
            let rank = (delays.len() as f64 * 0.95).ceil() as usize;
            delays[rank.saturating_sub(1).min(delays.len() - 1)] as f64 / 1e3
        });

        let voice = track.meta.is_voice.then(|| {
            let scored: Vec<&VoiceQualityScore> = track
                .voice_scores
                .iter()
                .filter(|(at, _)| *at >= warmup)
                .map(|(_, s)| s)
                .collect();
            let n = scored.len().max(1) as f64;
            VoiceSummary {
                scored_windows: scored.len(),
                mean_mos: scored.iter().map(|s| s.mos).sum::<f64>() / n,
                min_mos: scored.iter().map(|s| s.mos).fold(f64::INFINITY, f64::min),
                mean_r: scored.iter().map(|s| s.r_value).sum::<f64>() / n,
                min_r: scored.iter().map(|s| s.r_value).fold(f64::INFINITY, f64::min),
                mean_delay_ms: scored.iter().map(|s| s.mean_delay_ms).sum::<f64>() / n,
                mean_loss_fraction: scored.iter().map(|s| s.loss_fraction).sum::<f64>() / n,
            }
        });

        Ok(FlowSummary {
            entity: track.meta.entity.clone(),
            offered_bytes: counters.bytes_offered,
            sent_bytes: counters.bytes_sent,
            dropped_bytes: counters.bytes_dropped,
            final_queue_bytes: counters.queued_bytes,
            delivered_bytes: track.delivered_bytes,
            delivered_pdus: track.delivered_pdus,
            lost_pdus: track.lost_pdus,
            mean_delay_ms,
            p95_delay_ms,
            voice,
        })
    }

    /// Cross-checks flow counters against delivery records: every offered
    /// byte must be sent, dropped, or still queued, and nothing can arrive
    /// or vanish that was never transmitted.
    pub fn audit(&self, flows: &[ServiceFlow]) -> Result<(), MetricsError> {
        for (idx, track) in &self.tracks {
            let counters = flows[*idx].counters();
            if !counters.is_conserved() {
                return Err(MetricsError::Conservation {
                    entity: track.meta.entity.clone(),
                    offered: counters.bytes_offered,
                    sent: counters.bytes_sent,
                    dropped: counters.bytes_dropped,
                    queued: counters.queued_bytes,
                });
            }
            let sent_pdus = flows[*idx].pdus_sent();
            if track.delivered_pdus + track.lost_pdus > sent_pdus + flows[*idx].pdus_dropped() {
                return Err(MetricsError::DeliveryExceedsSent {
                    entity: track.meta.entity.clone(),
                    delivered: track.delivered_pdus,
                    lost: track.lost_pdus,
                    sent: sent_pdus,
                });
            }
        }
        Ok(())
    }
}
