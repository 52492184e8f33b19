//! End-to-end streaming sessions over scripted fixtures: prefetch hits and
//! misses, endpointing, timeline causality, and report recomputability.

use cascade_core::decoder::{BeamConfig, Pass};
use cascade_core::fixture::{
    generate_encoder_outputs, generate_model, generate_ngram_lm, scripted_frames, scripted_model,
    FixtureDims, FrameScript,
};
use cascade_core::model::EncoderOutputs;
use cascade_core::streaming::{
    latency_report, run_session, EndpointConfig, EventKind, SessionConfig,
};

use FrameScript::{Emit, Silence};

fn scripted_session_config() -> SessionConfig {
    let beam = BeamConfig {
        beam_size: 4,
        max_expansions_per_frame: 1,
        ..BeamConfig::default()
    };
    SessionConfig {
        causal: beam,
        noncausal: beam,
        endpoint: EndpointConfig {
            blank_threshold: 0.9,
            consecutive_frames: 2,
        },
        frame_period_ms: 40,
        fetch_latency_ms: 200,
    }
}

fn scripted_session(
    causal: &[FrameScript],
    noncausal: &[FrameScript],
    vocab_size: usize,
    right_context: usize,
) -> EncoderOutputs {
    EncoderOutputs::new(
        scripted_frames(causal, vocab_size),
        scripted_frames(noncausal, vocab_size),
        right_context,
    )
    .unwrap()
}

#[test]
fn agreeing_passes_produce_a_prefetch_hit() {
    let params = scripted_model(2);
    let script = [Emit(0), Emit(1), Silence, Silence];
    let enc = scripted_session(&script, &script, 2, 1);
    let config = scripted_session_config();

    let (report, timeline, final_nbest) = run_session(&enc, &params, &config, None, None);

    // Causal partials: "a" at 40 ms, "a b" at 80 ms. Endpoint after the two
    // silence frames at 160 ms. The lagged non-causal pass has consumed
    // frames 0..=2 by then, agreeing on "a b".
    assert_eq!(report.final_text, "a b");
    assert_eq!(final_nbest.pass_source, Pass::Noncausal);
    assert_eq!(report.prefetch_hits, 1);
    assert_eq!(report.prefetch_misses, 1); // the early "a" prefetch
    assert_eq!(
        report.saved_latency_ms,
        config.fetch_latency_ms.min(160 - 80)
    );
    assert_eq!(report.endpoint_latency_ms, 160 - 80);

    let endpoint_time = timeline
        .events
        .iter()
        .find(|e| e.event == EventKind::EndpointDeclared)
        .unwrap()
        .time_ms;
    assert_eq!(endpoint_time, 160);

    // The non-causal duplicates of "a" and "a b" were issued and went stale.
    let issued: Vec<_> = timeline
        .events
        .iter()
        .filter(|e| e.event == EventKind::PrefetchIssued)
        .collect();
    assert_eq!(issued.len(), 4);
    assert_eq!(
        issued
            .iter()
            .filter(|e| e.pass == Some(Pass::Noncausal))
            .count(),
        2
    );
}

#[test]
fn disagreeing_passes_produce_a_miss_and_save_nothing() {
    let params = scripted_model(2);
    let enc = scripted_session(
        &[Emit(0), Emit(1), Silence, Silence],
        &[Emit(1), Silence, Silence, Silence],
        2,
        1,
    );
    let config = scripted_session_config();

    let (report, timeline, _) = run_session(&enc, &params, &config, None, None);

    // The non-causal "b" candidate is a substring of the latest valid
    // prefetch "a b", so it goes stale; the final "b" matches no valid
    // prefetch.
    assert_eq!(report.final_text, "b");
    assert_eq!(report.prefetch_hits, 0);
    assert_eq!(report.prefetch_misses, 2); // "a" and "a b"
    assert_eq!(report.saved_latency_ms, 0);
    assert_eq!(
        timeline
            .events
            .iter()
            .filter(|e| e.event == EventKind::PrefetchMiss)
            .count(),
        2
    );
}

#[test]
fn forced_blank_model_endpoints_after_k_frames_with_empty_final() {
    let params = scripted_model(2);
    let enc = scripted_session(
        &[Silence, Silence, Silence, Silence],
        &[Silence, Silence, Silence, Silence],
        2,
        1,
    );
    let config = scripted_session_config();

    let (report, timeline, final_nbest) = run_session(&enc, &params, &config, None, None);

    // Blank mass is exactly 1.0 per frame, so the endpoint fires after
    // consecutive_frames = 2 frames, at 2 * 40 ms.
    let endpoint_time = timeline
        .events
        .iter()
        .find(|e| e.event == EventKind::EndpointDeclared)
        .unwrap()
        .time_ms;
    assert_eq!(endpoint_time, 80);
    assert_eq!(report.final_text, "");
    assert!(final_nbest.top().labels.is_empty());
    assert_eq!(report.prefetch_hits, 0);
    assert_eq!(report.prefetch_misses, 0);
    assert_eq!(report.saved_latency_ms, 0);
    // No speech ever arrived: the endpoint latency spans the whole session.
    assert_eq!(report.endpoint_latency_ms, 80);
}

#[test]
fn session_without_endpoint_trigger_finishes_at_end_of_audio() {
    let params = scripted_model(2);
    let enc = scripted_session(
        &[Emit(0), Emit(1), Emit(0)],
        &[Emit(0), Emit(1), Emit(0)],
        2,
        1,
    );
    let config = scripted_session_config();
    let (report, timeline, _) = run_session(&enc, &params, &config, None, None);
    let endpoint_time = timeline
        .events
        .iter()
        .find(|e| e.event == EventKind::EndpointDeclared)
        .unwrap()
        .time_ms;
    assert_eq!(endpoint_time, 3 * 40);
    // Non-causal consumed frames 0..=1 by then.
    assert_eq!(report.final_text, "a b");
}

#[test]
fn timeline_respects_noncausal_availability() {
    let dims = FixtureDims {
        frames: 8,
        right_context: 2,
        ..FixtureDims::default()
    };
    let params = generate_model(23, &dims).unwrap();
    let enc = generate_encoder_outputs(23, &dims).unwrap();
    let config = SessionConfig::default();
    let (_, timeline, _) = run_session(&enc, &params, &config, None, None);

    let fp = timeline.frame_period_ms;
    for event in &timeline.events {
        if event.event == EventKind::FrameAvailable && event.pass == Some(Pass::Noncausal) {
            let frame = event.frame.expect("frame events carry the index") as u64;
            let causal_available = (frame + 1) * fp;
            assert!(
                event.time_ms >= causal_available + dims.right_context as u64 * fp,
                "noncausal frame {frame} surfaced at {} ms",
                event.time_ms
            );
        }
    }
    // Times never decrease.
    for pair in timeline.events.windows(2) {
        assert!(pair[0].time_ms <= pair[1].time_ms);
    }
}

#[test]
fn embedded_report_is_recomputable_from_the_timeline() {
    for seed in [2u64, 5, 23, 31] {
        let dims = FixtureDims {
            frames: 10,
            ..FixtureDims::default()
        };
        let params = generate_model(seed, &dims).unwrap();
        let enc = generate_encoder_outputs(seed, &dims).unwrap();
        let lm = generate_ngram_lm(seed, &dims).unwrap();
        let config = SessionConfig::default();
        let (report, timeline, _) = run_session(&enc, &params, &config, None, Some(&lm));
        let recomputed = latency_report(&timeline, &report.final_text, config.fetch_latency_ms);
        assert_eq!(report, recomputed, "seed {seed}");
    }
}

#[test]
fn rescoring_fills_lm_scores_in_the_final_list() {
    let dims = FixtureDims::default();
    let params = generate_model(3, &dims).unwrap();
    let enc = generate_encoder_outputs(3, &dims).unwrap();
    let lm = generate_ngram_lm(3, &dims).unwrap();
    let config = SessionConfig::default();
    let (_, _, final_nbest) = run_session(&enc, &params, &config, None, Some(&lm));
    for hyp in &final_nbest.entries {
        assert!(hyp.scores.log_lm.value() < 0.0, "log_lm left unfilled");
    }
}

#[test]
fn lookahead_beyond_the_audio_leaves_the_final_empty() {
    let params = scripted_model(2);
    let enc = scripted_session(&[Emit(0), Silence], &[Emit(0), Silence], 2, 5);
    let config = scripted_session_config();
    let (report, timeline, final_nbest) = run_session(&enc, &params, &config, None, None);

    // No non-causal frame ever becomes available, so the final result is
    // the empty hypothesis and the causal prefetch goes unused.
    assert!(final_nbest.top().labels.is_empty());
    assert_eq!(report.final_text, "");
    assert_eq!(report.prefetch_hits, 0);
    assert!(timeline
        .events
        .iter()
        .all(|e| !(e.event == EventKind::FrameAvailable && e.pass == Some(Pass::Noncausal))));
}
