//! Full-stack scenario tests through `run_scenario`: behaviors that only
//! emerge from the event loop, scheduler, traffic models, and channel
//! running together.

use wimaxsim::config::{Config, Preset};
use wimaxsim::sim::run_scenario;

/// With elastic reserved grants freeing the air interface during silences,
/// the closed-loop data clients complete every transaction they start: no
/// response deadline is ever missed.
#[test]
fn elastic_grant_scenario_completes_every_transaction() {
    let mut cfg = Preset::ImproveData.config().unwrap();
    cfg.sim.duration_s = 60;
    cfg.sim.warmup_s = 10;

    let out = run_scenario(&cfg, "improve_data", false).unwrap();
    let data = &out.cells[0].data;
    assert_eq!(data.timeouts, 0, "data totals: {data:?}");
    assert_eq!(data.stale_responses, 0, "data totals: {data:?}");
    assert!(data.responses_matched > 100, "data totals: {data:?}");
    // Closed loop with one request in flight per station: everything sent
    // is either answered or still awaiting its response at the horizon.
    assert!(
        data.requests_sent - data.responses_matched <= 2,
        "data totals: {data:?}"
    );
}

/// A data class on the real-time polling service moves its traffic through
/// poll slots instead of contention: the frame log shows periodic unicast
/// polls, and the request/response loop completes across the two planes.
#[test]
fn polling_service_carries_data_through_the_full_stack() {
    let cfg = Config::from_toml_str(
        r#"
        [sim]
        duration_s = 20
        warmup_s = 5
        seed = 3

        [topology]
        nodes = 3
        voice_nodes = 1
        voice_class = "Gold"
        data_class = "Silver"

        [[classes]]
        name = "Gold"
        scheduling = "ugs"
        max_sustained_rate_bps = 96000
        min_reserved_rate_bps = 96000

        [[classes]]
        name = "Silver"
        scheduling = "rtps"
        max_sustained_rate_bps = 1000000
        min_reserved_rate_bps = 500000
        "#,
    )
    .unwrap();

    let out = run_scenario(&cfg, "rtps_data", true).unwrap();
    let cell = &out.cells[0];

    for entity in ["ss2_ul_silver", "ss3_ul_silver", "ss2_dl_silver"] {
        let flow = cell.flow(entity).unwrap_or_else(|| panic!("missing {entity}"));
        assert!(
            flow.summary.delivered_bytes > 0,
            "{entity} delivered nothing"
        );
    }
    let data = &cell.data;
    assert!(data.responses_matched > 20, "data totals: {data:?}");
    assert_eq!(data.timeouts, 0, "data totals: {data:?}");

    // rtPS stations answer unicast poll slots rather than contending.
    let frames = out.frames_csv.as_deref().expect("frame dump requested");
    assert!(frames.contains(",ul,ss2_ul_silver,poll,6,"), "no poll slots in dump");
    assert!(frames.contains(",ul,ss3_ul_silver,poll,6,"), "no poll slots in dump");
}

/// Random channel loss reaches the voice score: packets vanish at the
/// configured rate and the E-model turns them into a visibly lower MOS than
/// the loss-free variant of the same scenario.
#[test]
fn channel_loss_degrades_the_voice_score() {
    let mut cfg = Preset::ImproveVoice.config().unwrap();
    cfg.sim.duration_s = 60;
    cfg.sim.warmup_s = 10;
    cfg.channel.loss_probability = 0.05;

    let out = run_scenario(&cfg, "lossy_voice", false).unwrap();
    let voice = out.cells[0]
        .flow("ss2_ul_gold")
        .unwrap()
        .summary
        .voice
        .expect("voice flow is scored");

    assert!(
        (voice.mean_loss_fraction - 0.05).abs() < 0.02,
        "measured loss {}",
        voice.mean_loss_fraction
    );
    // 5 % G.711 loss costs roughly 17 R-points: well below the clean ~4.4
    // but far from collapse.
    assert!(
        voice.mean_mos > 3.5 && voice.mean_mos < 4.2,
        "mean MOS {}",
        voice.mean_mos
    );

    let mut clean_cfg = Preset::ImproveVoice.config().unwrap();
    clean_cfg.sim.duration_s = 60;
    clean_cfg.sim.warmup_s = 10;
    let clean_out = run_scenario(&clean_cfg, "clean_voice", false).unwrap();
    let clean_voice = clean_out.cells[0]
        .flow("ss2_ul_gold")
        .unwrap()
        .summary
        .voice
        .expect("voice flow is scored");
    assert!(
        clean_voice.mean_mos > voice.mean_mos + 0.3,
        "clean {} vs lossy {}",
        clean_voice.mean_mos,
        voice.mean_mos
    );
}
