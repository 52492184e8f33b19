//! Streaming session simulation on a logical millisecond clock.
//!
//! The causal pass owns partial emission and endpointing; the non-causal
//! pass trails it by the lookahead and owns the final result. Both passes
//! issue prefetch candidates whenever their top hypothesis text changes;
//! candidates that are substrings of the latest valid prefetch are stale
//! and dropped. Everything is deterministic: causal frame `t` arrives at
//! `(t+1) * frame_period`, the non-causal copy `right_context` frames
//! later, and same-time events order causal before non-causal.

use serde::Serialize;

use crate::biasing::ContextualModel;
use crate::decoder::{decode_step, BeamConfig, Hypothesis, NBestList, Pass};
use crate::joint::hat_scores;
use crate::lm::{rescore_nbest, CausalLmScorer};
use crate::model::{EncoderOutputs, ModelParams};
use crate::prediction::{predict, LabelHistory};

/// Case-folds, collapses runs of whitespace, and trims. All prefetch and
/// partial texts are compared in this form.
pub fn normalize_text(s: &str) -> String {
    s.to_lowercase()
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

/// Blank-mass endpoint heuristic: the top hypothesis's frame-level blank
/// probability must exceed `blank_threshold` for `consecutive_frames`
/// frames in a row.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct EndpointConfig {
    pub blank_threshold: f64,
    pub consecutive_frames: usize,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        EndpointConfig {
            blank_threshold: 0.9,
            consecutive_frames: 2,
        }
    }
}

/// True iff the last K blank masses all exceed the threshold.
pub fn detect_endpoint(recent_blank_mass: &[f64], config: &EndpointConfig) -> bool {
    assert!(
        !recent_blank_mass.is_empty(),
        "need at least one blank mass"
    );
    assert!(
        config.blank_threshold > 0.0 && config.blank_threshold < 1.0,
        "blank_threshold must be in (0, 1)"
    );
    assert!(config.consecutive_frames >= 1);
    let k = config.consecutive_frames;
    if recent_blank_mass.len() < k {
        return false;
    }
    recent_blank_mass[recent_blank_mass.len() - k..]
        .iter()
        .all(|&m| m > config.blank_threshold)
}

/// A prefetch candidate is stale iff its text is a contiguous substring of
/// the latest valid prefetch (texts normalized). A late duplicate counts as
/// a substring, so the earlier issue dominates.
pub fn is_stale(candidate_text: &str, latest_valid_prefetch: Option<&str>) -> bool {
    latest_valid_prefetch.is_some_and(|latest| latest.contains(candidate_text))
}

/// A timestamped partial/final text issued for prefetching.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PrefetchCandidate {
    pub text: String,
    pub source: Pass,
    pub issued_at: u64,
    pub stale: bool,
}

/// Folds a time-ordered candidate stream (ties causal-first) through the
/// staleness rule: stale candidates are dropped, every survivor becomes the
/// new latest valid prefetch. Returns the survivors.
pub fn hybrid_prefetch(candidates: &[PrefetchCandidate]) -> Vec<PrefetchCandidate> {
    for pair in candidates.windows(2) {
        assert!(
            pair[0].issued_at < pair[1].issued_at
                || (pair[0].issued_at == pair[1].issued_at
                    && !(pair[0].source == Pass::Noncausal && pair[1].source == Pass::Causal)),
            "candidates must be ordered by issue time, ties causal-first"
        );
    }
    let mut latest: Option<String> = None;
    let mut survivors = Vec::new();
    for candidate in candidates {
        if is_stale(&candidate.text, latest.as_deref()) {
            continue;
        }
        latest = Some(candidate.text.clone());
        survivors.push(PrefetchCandidate {
            stale: false,
            ..candidate.clone()
        });
    }
    survivors
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    FrameAvailable,
    PartialEmitted,
    EndpointDeclared,
    FinalEmitted,
    PrefetchIssued,
    PrefetchHit,
    PrefetchMiss,
}

/// One timeline record; serialized as
/// `{time_ms, event, pass, text, frame}` with nulls where not applicable.
#[derive(Debug, Clone, Serialize)]
pub struct TimelineEvent {
    pub time_ms: u64,
    pub event: EventKind,
    pub pass: Option<Pass>,
    pub text: Option<String>,
    pub frame: Option<usize>,
}

/// Ordered session trace. Event times are non-decreasing and a non-causal
/// frame never appears before `causal time + right_context * frame_period`.
#[derive(Debug, Clone, Serialize)]
pub struct StreamTimeline {
    pub frame_period_ms: u64,
    pub events: Vec<TimelineEvent>,
}

impl StreamTimeline {
    pub fn write_jsonl(&self, out: &mut impl std::io::Write) -> std::io::Result<()> {
        for event in &self.events {
            serde_json::to_writer(&mut *out, event)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Latency accounting for one session.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LatencyReport {
    pub endpoint_latency_ms: u64,
    pub prefetch_hits: usize,
    pub prefetch_misses: usize,
    pub saved_latency_ms: u64,
    pub final_text: String,
}

/// Full configuration of a simulated session.
#[derive(Debug, Clone, Serialize)]
pub struct SessionConfig {
    pub causal: BeamConfig,
    pub noncausal: BeamConfig,
    pub endpoint: EndpointConfig,
    pub frame_period_ms: u64,
    pub fetch_latency_ms: u64,
}

impl Default for SessionConfig {
    fn default() -> Self {
        SessionConfig {
            causal: BeamConfig::default(),
            noncausal: BeamConfig::default(),
            endpoint: EndpointConfig::default(),
            frame_period_ms: 40,
            fetch_latency_ms: 200,
        }
    }
}

struct PassState {
    beam: Vec<Hypothesis>,
    emitted_text: String,
}

impl PassState {
    fn new(context: Option<&ContextualModel>) -> Self {
        PassState {
            beam: vec![Hypothesis::start(context)],
            emitted_text: String::new(),
        }
    }

    fn top_text(&self, params: &ModelParams) -> String {
        normalize_text(&params.vocab.render(&self.beam[0].labels))
    }
}

/// Simulates frame-by-frame arrival of both passes, endpointing, prefetch
/// issuance, and final-result emission. Returns the latency report, the
/// full event timeline, and the final (optionally rescored) n-best list.
pub fn run_session(
    enc: &EncoderOutputs,
    params: &ModelParams,
    config: &SessionConfig,
    context: Option<&ContextualModel>,
    lm: Option<&dyn CausalLmScorer>,
) -> (LatencyReport, StreamTimeline, NBestList) {
    let fp = config.frame_period_ms;
    let lookahead = enc.right_context;
    let frames = enc.frames();
    let n = params.prediction.context_size();

    let mut events: Vec<TimelineEvent> = Vec::new();
    let mut causal = PassState::new(context);
    let mut noncausal = PassState::new(context);
    let mut blank_masses: Vec<f64> = Vec::new();
    let mut latest_valid: Option<String> = None;
    let mut endpoint_time: Option<u64> = None;

    let issue = |events: &mut Vec<TimelineEvent>,
                 latest: &mut Option<String>,
                 text: String,
                 source: Pass,
                 now: u64| {
        events.push(TimelineEvent {
            time_ms: now,
            event: EventKind::PrefetchIssued,
            pass: Some(source),
            text: Some(text.clone()),
            frame: None,
        });
        if !is_stale(&text, latest.as_deref()) {
            *latest = Some(text);
        }
    };

    for t in 0..frames {
        let now = (t as u64 + 1) * fp;

        events.push(TimelineEvent {
            time_ms: now,
            event: EventKind::FrameAvailable,
            pass: Some(Pass::Causal),
            text: None,
            frame: Some(t),
        });

        // Frame-level blank mass under the best hypothesis at the frame's
        // arrival; this is what the endpoint heuristic watches.
        let top = &causal.beam[0];
        let pred = predict(
            LabelHistory::from_recent(&top.labels, n),
            &params.prediction,
        );
        blank_masses.push(hat_scores(params, enc.causal.row(t), &pred).log_blank.exp());

        causal.beam = decode_step(
            &causal.beam,
            enc.causal.row(t),
            params,
            &config.causal,
            context,
        );

        let text = causal.top_text(params);
        if text != causal.emitted_text {
            causal.emitted_text = text.clone();
            events.push(TimelineEvent {
                time_ms: now,
                event: EventKind::PartialEmitted,
                pass: Some(Pass::Causal),
                text: Some(text.clone()),
                frame: None,
            });
            issue(&mut events, &mut latest_valid, text, Pass::Causal, now);
        }

        // The non-causal copy of frame (t - lookahead) arrives at the same
        // logical instant, after the causal events.
        if t >= lookahead {
            let nc_frame = t - lookahead;
            events.push(TimelineEvent {
                time_ms: now,
                event: EventKind::FrameAvailable,
                pass: Some(Pass::Noncausal),
                text: None,
                frame: Some(nc_frame),
            });
            noncausal.beam = decode_step(
                &noncausal.beam,
                enc.noncausal.row(nc_frame),
                params,
                &config.noncausal,
                context,
            );

            let text = noncausal.top_text(params);
            if text != noncausal.emitted_text {
                noncausal.emitted_text = text.clone();
                issue(&mut events, &mut latest_valid, text, Pass::Noncausal, now);
            }
        }

        if detect_endpoint(&blank_masses, &config.endpoint) {
            endpoint_time = Some(now);
            break;
        }
    }

    // End of audio doubles as the endpoint when the heuristic never fires.
    let endpoint_time = endpoint_time.unwrap_or(frames as u64 * fp);
    events.push(TimelineEvent {
        time_ms: endpoint_time,
        event: EventKind::EndpointDeclared,
        pass: Some(Pass::Causal),
        text: None,
        frame: None,
    });

    let final_nbest = NBestList {
        entries: noncausal.beam.clone(),
        pass_source: Pass::Noncausal,
    };
    let final_nbest = match lm {
        Some(lm) => rescore_nbest(&final_nbest, lm, &config.noncausal.weights, context),
        None => final_nbest,
    };
    let final_text = normalize_text(&params.vocab.render(&final_nbest.top().labels));
    events.push(TimelineEvent {
        time_ms: endpoint_time,
        event: EventKind::FinalEmitted,
        pass: Some(Pass::Noncausal),
        text: Some(final_text.clone()),
        frame: None,
    });

    // Classify every valid prefetch against the final text.
    let issued = issued_candidates(&events);
    for survivor in hybrid_prefetch(&issued) {
        events.push(TimelineEvent {
            time_ms: endpoint_time,
            event: if survivor.text == final_text {
                EventKind::PrefetchHit
            } else {
                EventKind::PrefetchMiss
            },
            pass: Some(survivor.source),
            text: Some(survivor.text),
            frame: None,
        });
    }

    let timeline = StreamTimeline {
        frame_period_ms: fp,
        events,
    };
    let report = latency_report(&timeline, &final_text, config.fetch_latency_ms);
    (report, timeline, final_nbest)
}

fn issued_candidates(events: &[TimelineEvent]) -> Vec<PrefetchCandidate> {
    events
        .iter()
        .filter(|e| e.event == EventKind::PrefetchIssued)
        .map(|e| PrefetchCandidate {
            text: e.text.clone().expect("prefetch events carry text"),
            source: e.pass.expect("prefetch events carry a pass"),
            issued_at: e.time_ms,
            stale: false,
        })
        .collect()
}

/// Recomputes the latency accounting from the timeline alone: refolds the
/// issued prefetches through the staleness rule, counts hits and misses
/// against the final text, and credits `min(fetch_latency, endpoint - issue)`
/// for the earliest matching prefetch. Panics on a malformed timeline
/// (decreasing times or no endpoint).
pub fn latency_report(
    timeline: &StreamTimeline,
    final_text: &str,
    fetch_latency_ms: u64,
) -> LatencyReport {
    let events = &timeline.events;
    for pair in events.windows(2) {
        assert!(
            pair[0].time_ms <= pair[1].time_ms,
            "timeline times must be non-decreasing"
        );
    }
    let endpoint_time = events
        .iter()
        .find(|e| e.event == EventKind::EndpointDeclared)
        .map(|e| e.time_ms)
        .expect("timeline must contain an endpoint");

    let last_partial = events
        .iter()
        .filter(|e| e.event == EventKind::PartialEmitted && e.time_ms <= endpoint_time)
        .map(|e| e.time_ms)
        .next_back()
        .unwrap_or(0);

    let final_text = normalize_text(final_text);
    let survivors = hybrid_prefetch(&issued_candidates(events));
    let hits = survivors.iter().filter(|c| c.text == final_text).count();
    let misses = survivors.len() - hits;
    let saved_latency_ms = survivors
        .iter()
        .find(|c| c.text == final_text)
        .map(|c| fetch_latency_ms.min(endpoint_time - c.issued_at))
        .unwrap_or(0);

    LatencyReport {
        endpoint_latency_ms: endpoint_time - last_partial,
        prefetch_hits: hits,
        prefetch_misses: misses,
        saved_latency_ms,
        final_text,
    }
}
