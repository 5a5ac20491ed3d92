//! TOML run configuration.
//!
//! Every numeric key carries its unit in the name. Parsing is strict: keys
//! the schema does not know are collected (all of them, with full paths) and
//! reported together, and semantic validation likewise gathers every problem
//! in one pass instead of stopping at the first.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Deserialize;
use thiserror::Error;

use crate::engine::SimTime;
use crate::qos::{SchedulingType, ServiceClass};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("configuration parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("unknown configuration keys: {}", keys.join(", "))]
    UnknownKeys { keys: Vec<String> },
    #[error("invalid configuration:\n  - {}", problems.join("\n  - "))]
    Invalid { problems: Vec<String> },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimSection {
    pub duration_s: u64,
    pub warmup_s: u64,
    pub seed: u64,
    pub cells: u32,
    pub report_interval_ms: u64,
    pub voice_window_ms: u64,
}

impl Default for SimSection {
    fn default() -> Self {
        SimSection {
            duration_s: 400,
            warmup_s: 30,
            seed: 1,
            cells: 1,
            report_interval_ms: 1_000,
            voice_window_ms: 10_000,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhySection {
    pub frame_us: u64,
    /// Uplink subframe payload capacity per frame, in SDU bytes.
    pub ul_capacity_bytes_per_frame: u64,
    /// Downlink subframe payload capacity per frame, in SDU bytes.
    pub dl_capacity_bytes_per_frame: u64,
    pub mac_header_bytes: u64,
    pub bw_request_size_bytes: u64,
}

impl Default for PhySection {
    fn default() -> Self {
        PhySection {
            frame_us: 5_000,
            ul_capacity_bytes_per_frame: 1_625,
            dl_capacity_bytes_per_frame: 3_250,
            mac_header_bytes: 6,
            bw_request_size_bytes: 6,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChannelSection {
    pub delay_us: u64,
    pub loss_probability: f64,
}

impl Default for ChannelSection {
    fn default() -> Self {
        ChannelSection {
            delay_us: 1_000,
            loss_probability: 0.0,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SchedulerSection {
    pub rtps_poll_interval_frames: u64,
    pub nrtps_poll_interval_frames: u64,
    pub contention_period_frames: u64,
}

impl Default for SchedulerSection {
    fn default() -> Self {
        SchedulerSection {
            rtps_poll_interval_frames: 4,
            nrtps_poll_interval_frames: 200,
            contention_period_frames: 10,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TopologySection {
    /// Total subscriber stations, the reservation station included.
    pub nodes: u32,
    /// Stations carrying a voice call; defaults to ceil(nodes / 4).
    pub voice_nodes: Option<u32>,
    pub voice_class: String,
    pub data_class: String,
    /// Optional always-on reserved pipe (takes station 1, offers no traffic).
    pub reservation_class: Option<String>,
}

impl Default for TopologySection {
    fn default() -> Self {
        TopologySection {
            nodes: 4,
            voice_nodes: None,
            voice_class: "Gold".into(),
            data_class: "Bronze".into(),
            reservation_class: None,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassSection {
    pub name: String,
    pub scheduling: SchedulingType,
    pub max_sustained_rate_bps: u64,
    pub min_reserved_rate_bps: u64,
}

fn default_classes() -> Vec<ClassSection> {
    vec![
        ClassSection {
            name: "Gold".into(),
            scheduling: SchedulingType::Ugs,
            max_sustained_rate_bps: 64_000,
            min_reserved_rate_bps: 64_000,
        },
        ClassSection {
            name: "Silver".into(),
            scheduling: SchedulingType::Rtps,
            max_sustained_rate_bps: 1_000_000,
            min_reserved_rate_bps: 500_000,
        },
        ClassSection {
            name: "Bronze".into(),
            scheduling: SchedulingType::Be,
            max_sustained_rate_bps: 384_000,
            min_reserved_rate_bps: 0,
        },
        ClassSection {
            name: "Platinum".into(),
            scheduling: SchedulingType::Ugs,
            max_sustained_rate_bps: 2_500_000,
            min_reserved_rate_bps: 2_500_000,
        },
    ]
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VoiceSection {
    pub packet_interval_us: u64,
    pub codec_payload_bytes: u64,
    pub ip_overhead_bytes: u64,
    pub mean_talk_ms: u64,
    pub mean_silence_ms: u64,
    pub silence_suppression: bool,
}

impl Default for VoiceSection {
    fn default() -> Self {
        VoiceSection {
            packet_interval_us: 10_000,
            codec_payload_bytes: 80,
            ip_overhead_bytes: 40,
            mean_talk_ms: 1_200,
            mean_silence_ms: 800,
            silence_suppression: false,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub request_bytes: u64,
    pub response_bytes: u64,
    pub mean_think_ms: u64,
    pub response_timeout_ms: u64,
    pub concurrency: u32,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            request_bytes: 500,
            response_bytes: 2_000,
            mean_think_ms: 1_000,
            response_timeout_ms: 3_000,
            concurrency: 1,
        }
    }
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct QueueSection {
    /// Byte cap on each voice queue; absent means unbounded.
    pub voice_queue_cap_bytes: Option<u64>,
    /// Byte cap on each data queue; absent means unbounded.
    pub data_queue_cap_bytes: Option<u64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub sim: SimSection,
    pub phy: PhySection,
    pub channel: ChannelSection,
    pub scheduler: SchedulerSection,
    pub topology: TopologySection,
    #[serde(rename = "classes")]
    pub classes: Vec<ClassSection>,
    pub voice: VoiceSection,
    pub data: DataSection,
    pub queues: QueueSection,
    /// Free-form run annotations, echoed into the summary.
    pub metadata: BTreeMap<String, String>,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            sim: SimSection::default(),
            phy: PhySection::default(),
            channel: ChannelSection::default(),
            scheduler: SchedulerSection::default(),
            topology: TopologySection::default(),
            classes: default_classes(),
            voice: VoiceSection::default(),
            data: DataSection::default(),
            queues: QueueSection::default(),
            metadata: BTreeMap::new(),
        }
    }
}

/// What one subscriber station does.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StationRole {
    Reservation,
    Voice,
    Data,
}

#[derive(Debug, Clone)]
pub struct StationSpec {
    /// 1-based station number.
    pub station: usize,
    pub role: StationRole,
    pub class_name: String,
}

const SIM_KEYS: &[&str] = &[
    "duration_s",
    "warmup_s",
    "seed",
    "cells",
    "report_interval_ms",
    "voice_window_ms",
];
const PHY_KEYS: &[&str] = &[
    "frame_us",
    "ul_capacity_bytes_per_frame",
    "dl_capacity_bytes_per_frame",
    "mac_header_bytes",
    "bw_request_size_bytes",
];
const CHANNEL_KEYS: &[&str] = &["delay_us", "loss_probability"];
const SCHEDULER_KEYS: &[&str] = &[
    "rtps_poll_interval_frames",
    "nrtps_poll_interval_frames",
    "contention_period_frames",
];
const TOPOLOGY_KEYS: &[&str] = &[
    "nodes",
    "voice_nodes",
    "voice_class",
    "data_class",
    "reservation_class",
];
const CLASS_KEYS: &[&str] = &[
    "name",
    "scheduling",
    "max_sustained_rate_bps",
    "min_reserved_rate_bps",
];
const VOICE_KEYS: &[&str] = &[
    "packet_interval_us",
    "codec_payload_bytes",
    "ip_overhead_bytes",
    "mean_talk_ms",
    "mean_silence_ms",
    "silence_suppression",
];
const DATA_KEYS: &[&str] = &[
    "request_bytes",
    "response_bytes",
    "mean_think_ms",
    "response_timeout_ms",
    "concurrency",
];
const QUEUE_KEYS: &[&str] = &["voice_queue_cap_bytes", "data_queue_cap_bytes"];

fn check_table(value: &toml::Value, path: &str, allowed: &[&str], out: &mut Vec<String>) {
    if let Some(table) = value.as_table() {
        for key in table.keys() {
            if !allowed.contains(&key.as_str()) {
                out.push(format!("{path}.{key}"));
            }
        }
    }
}

/// Walks the raw document and lists every key the schema does not know.
/// `[metadata]` is free-form and exempt.
fn collect_unknown_keys(value: &toml::Value) -> Vec<String> {
    let mut unknown = Vec::new();
    let Some(table) = value.as_table() else {
        return unknown;
    };
    for (key, section) in table {
        match key.as_str() {
            "sim" => check_table(section, "sim", SIM_KEYS, &mut unknown),
            "phy" => check_table(section, "phy", PHY_KEYS, &mut unknown),
            "channel" => check_table(section, "channel", CHANNEL_KEYS, &mut unknown),
            "scheduler" => check_table(section, "scheduler", SCHEDULER_KEYS, &mut unknown),
            "topology" => check_table(section, "topology", TOPOLOGY_KEYS, &mut unknown),
            "voice" => check_table(section, "voice", VOICE_KEYS, &mut unknown),
            "data" => check_table(section, "data", DATA_KEYS, &mut unknown),
            "queues" => check_table(section, "queues", QUEUE_KEYS, &mut unknown),
            "classes" => {
                if let Some(items) = section.as_array() {
                    for (i, item) in items.iter().enumerate() {
                        check_table(item, &format!("classes[{i}]"), CLASS_KEYS, &mut unknown);
                    }
                }
            }
            "metadata" => {}
            _ => unknown.push(key.clone()),
        }
    }
    unknown.sort();
    unknown
}

impl Config {
    pub fn from_toml_str(text: &str) -> Result<Config, ConfigError> {
        let value: toml::Value = text.parse()?;
        let unknown = collect_unknown_keys(&value);
        if !unknown.is_empty() {
            return Err(ConfigError::UnknownKeys { keys: unknown });
        }
        let config: Config = value.try_into()?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_path(path: &Path) -> Result<Config, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Config::from_toml_str(&text)
    }

    pub fn duration(&self) -> SimTime {
        SimTime::from_secs(self.sim.duration_s)
    }

    pub fn warmup(&self) -> SimTime {
        SimTime::from_secs(self.sim.warmup_s)
    }

    /// Voice stations: explicit override or one per four stations, rounded up.
    pub fn voice_nodes(&self) -> u32 {
        self.topology
            .voice_nodes
            .unwrap_or_else(|| self.topology.nodes.div_ceil(4))
    }

    pub fn class_section(&self, name: &str) -> Option<&ClassSection> {
        self.classes.iter().find(|c| c.name == name)
    }

    /// Builds the validated scheduler-facing class for a named profile.
    pub fn service_class(&self, name: &str) -> Result<ServiceClass, ConfigError> {
        let section = self.class_section(name).ok_or_else(|| ConfigError::Invalid {
            problems: vec![format!("service class '{name}' is not defined")],
        })?;
        ServiceClass::new(
            &section.name,
            section.scheduling,
            section.max_sustained_rate_bps,
            section.min_reserved_rate_bps,
        )
        .map_err(|e| ConfigError::Invalid {
            problems: vec![e.to_string()],
        })
    }

    /// Assigns roles to stations: the reservation pipe (if any) is station 1,
    /// voice stations follow, data stations take the rest.
    pub fn station_plan(&self) -> Vec<StationSpec> {
        let mut plan = Vec::new();
        let mut station = 1;
        if let Some(class) = &self.topology.reservation_class {
            plan.push(StationSpec {
                station,
                role: StationRole::Reservation,
                class_name: class.clone(),
            });
            station += 1;
        }
        for _ in 0..self.voice_nodes() {
            plan.push(StationSpec {
                station,
                role: StationRole::Voice,
                class_name: self.topology.voice_class.clone(),
            });
            station += 1;
        }
        while plan.len() < self.topology.nodes as usize {
            plan.push(StationSpec {
                station,
                role: StationRole::Data,
                class_name: self.topology.data_class.clone(),
            });
            station += 1;
        }
        plan
    }

    fn validate(&self) -> Result<(), ConfigError> {
        let mut problems = Vec::new();
        let need = &mut problems;

        require(need, self.sim.duration_s >= 1, "sim.duration_s must be at least 1".into());
        require(
            need,
            self.sim.warmup_s < self.sim.duration_s,
            format!(
                "sim.warmup_s ({}) must be below sim.duration_s ({})",
                self.sim.warmup_s, self.sim.duration_s
            ),
        );
        require(need, self.sim.cells >= 1, "sim.cells must be at least 1".into());
        require(
            need,
            self.sim.report_interval_ms >= 1,
            "sim.report_interval_ms must be at least 1".into(),
        );
        require(
            need,
            self.sim.voice_window_ms >= self.sim.report_interval_ms,
            "sim.voice_window_ms must cover at least one report interval".into(),
        );

        require(need, self.phy.frame_us >= 1, "phy.frame_us must be at least 1".into());
        require(
            need,
            self.phy.ul_capacity_bytes_per_frame >= 1,
            "phy.ul_capacity_bytes_per_frame must be at least 1".into(),
        );
        require(
            need,
            self.phy.dl_capacity_bytes_per_frame >= 1,
            "phy.dl_capacity_bytes_per_frame must be at least 1".into(),
        );
        require(
            need,
            self.phy.bw_request_size_bytes >= 1,
            "phy.bw_request_size_bytes must be at least 1".into(),
        );

        require(
            need,
            self.channel.loss_probability >= 0.0 && self.channel.loss_probability <= 1.0,
            format!(
                "channel.loss_probability ({}) must lie in [0, 1]",
                self.channel.loss_probability
            ),
        );

        require(
            need,
            self.scheduler.rtps_poll_interval_frames >= 1,
            "scheduler.rtps_poll_interval_frames must be at least 1".into(),
        );
        require(
            need,
            self.scheduler.nrtps_poll_interval_frames >= 1,
            "scheduler.nrtps_poll_interval_frames must be at least 1".into(),
        );
        require(
            need,
            self.scheduler.contention_period_frames >= 1,
            "scheduler.contention_period_frames must be at least 1".into(),
        );

        require(need, self.topology.nodes >= 1, "topology.nodes must be at least 1".into());
        let reserved = self.topology.reservation_class.is_some() as u32;
        require(
            need,
            self.voice_nodes() + reserved <= self.topology.nodes,
            format!(
                "topology.voice_nodes ({}) plus the reservation station does not fit in {} nodes",
                self.voice_nodes(),
                self.topology.nodes
            ),
        );

        if self.classes.is_empty() {
            need.push("at least one [[classes]] entry is required".into());
        }
        for (i, class) in self.classes.iter().enumerate() {
            if self.classes[..i].iter().any(|c| c.name == class.name) {
                need.push(format!("duplicate service class name '{}'", class.name));
            }
            if let Err(e) = ServiceClass::new(
                &class.name,
                class.scheduling,
                class.max_sustained_rate_bps,
                class.min_reserved_rate_bps,
            ) {
                need.push(e.to_string());
            }
        }

        self.check_class_ref(
            need,
            "topology.voice_class",
            &self.topology.voice_class,
            &[SchedulingType::Ugs, SchedulingType::Ertps],
        );
        self.check_class_ref(
            need,
            "topology.data_class",
            &self.topology.data_class,
            &[SchedulingType::Rtps, SchedulingType::Nrtps, SchedulingType::Be],
        );
        if let Some(rc) = &self.topology.reservation_class {
            self.check_class_ref(
                need,
                "topology.reservation_class",
                rc,
                &[SchedulingType::Ugs, SchedulingType::Ertps],
            );
        }

        require(
            need,
            self.voice.packet_interval_us >= 1,
            "voice.packet_interval_us must be at least 1".into(),
        );
        require(
            need,
            self.voice.codec_payload_bytes >= 1,
            "voice.codec_payload_bytes must be at least 1".into(),
        );
        if self.voice.silence_suppression {
            require(
                need,
                self.voice.mean_talk_ms >= 1 && self.voice.mean_silence_ms >= 1,
                "voice.mean_talk_ms and voice.mean_silence_ms must be at least 1 when silence_suppression is on".into(),
            );
        }

        require(need, self.data.request_bytes >= 1, "data.request_bytes must be at least 1".into());
        require(
            need,
            self.data.response_bytes >= 1,
            "data.response_bytes must be at least 1".into(),
        );
        require(need, self.data.mean_think_ms >= 1, "data.mean_think_ms must be at least 1".into());
        require(
            need,
            self.data.response_timeout_ms >= 1,
            "data.response_timeout_ms must be at least 1".into(),
        );
        require(need, self.data.concurrency >= 1, "data.concurrency must be at least 1".into());

        if let Some(cap) = self.queues.voice_queue_cap_bytes {
            require(need, cap >= 1, "queues.voice_queue_cap_bytes must be at least 1".into());
        }
        if let Some(cap) = self.queues.data_queue_cap_bytes {
            require(need, cap >= 1, "queues.data_queue_cap_bytes must be at least 1".into());
        }

        if problems.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Invalid { problems })
        }
    }

    fn check_class_ref(
        &self,
        problems: &mut Vec<String>,
        key: &str,
        name: &str,
        wanted: &[SchedulingType],
    ) {
        match self.class_section(name) {
            None => problems.push(format!("{key} references undefined class '{name}'")),
            Some(c) if !wanted.contains(&c.scheduling) => problems.push(format!(
                "{key} class '{name}' must use one of {:?} scheduling, found {}",
                wanted.iter().map(|s| s.label()).collect::<Vec<_>>(),
                c.scheduling
            )),
            Some(_) => {}
        }
    }
}

fn require(problems: &mut Vec<String>, cond: bool, msg: String) {
    if !cond {
        problems.push(msg);
    }
}

/// Bundled scenario configurations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Preset {
    /// Voice on UGS provisioned at the talk-spurt rate only.
    Baseline,
    /// Voice on UGS provisioned at the full codec rate.
    ImproveVoice,
    /// Voice and the reserved pipe on ertPS with silence suppression.
    ImproveData,
}

impl Preset {
    pub fn name(self) -> &'static str {
        match self {
            Preset::Baseline => "baseline",
            Preset::ImproveVoice => "improve_voice",
            Preset::ImproveData => "improve_data",
        }
    }

    pub fn toml_str(self) -> &'static str {
        match self {
            Preset::Baseline => include_str!("../presets/baseline.toml"),
            Preset::ImproveVoice => include_str!("../presets/improve_voice.toml"),
            Preset::ImproveData => include_str!("../presets/improve_data.toml"),
        }
    }

    pub fn config(self) -> Result<Config, ConfigError> {
        Config::from_toml_str(self.toml_str())
    }
}
