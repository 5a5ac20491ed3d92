//! Deterministic discrete-event simulator of MAC-layer QoS scheduling in one
//! IEEE 802.16e (mobile WiMAX) cell, with conversational voice quality scored
//! by the ITU-T G.107 E-model.
//!
//! The cell carries packetized G.711 voice and closed-loop request/response
//! data over the five 802.16e scheduling services (UGS, ertPS, rtPS, nrtPS,
//! BE). A strict-priority grant scheduler builds each frame's allocation map,
//! and the recorder turns the resulting delays, losses, and queue depths into
//! a long-format CSV time series plus per-flow R-factor/MOS voice scores.
//!
//! Entry points:
//! - [`config::Config`] / [`config::Preset`] describe a scenario,
//! - [`sim::run_scenario`] executes it and returns a [`sim::RunOutput`],
//! - [`compare::compare_runs`] lines two finished runs up side by side.

pub mod channel;
pub mod compare;
pub mod config;
pub mod emodel;
pub mod engine;
pub mod metrics;
pub mod qos;
pub mod scheduler;
pub mod sim;
pub mod traffic;

use thiserror::Error;

/// Any failure the simulator can produce.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Config(#[from] config::ConfigError),
    #[error(transparent)]
    Engine(#[from] engine::EngineError),
    #[error(transparent)]
    Qos(#[from] qos::QosError),
    #[error(transparent)]
    Scheduler(#[from] scheduler::SchedulerError),
    #[error(transparent)]
    Traffic(#[from] traffic::TrafficError),
    #[error(transparent)]
    Metrics(#[from] metrics::MetricsError),
    #[error(transparent)]
    Emodel(#[from] emodel::EmodelError),
    #[error("failed to write {path}: {source}")]
    Write {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;
