use std::collections::BTreeMap;
use std::fmt::Write as _;

use reminisce_core::dialogue::{question_progression, transcript_rows, Effect, FlowPolicy, TranscriptRow};
use reminisce_core::domain::{AgentOption, ChatSummary, Coercion, DialogueState, Profile, QaKind};
use reminisce_core::summary::ProfileDiff;
use serde::{Deserialize, Serialize};

use crate::simulate::EndReason;

pub const TEXT_HEADER: &str = "Round | Role | Question | Agent Choice | Message";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionReport {
    pub session_id: String,
    pub photo_id: String,
    pub transcript: Vec<TranscriptRow>,
    pub option_history: Vec<AgentOption>,
    pub question_progression: Vec<QaKind>,
    pub terminal_effect: Option<Effect>,
    pub end_reason: EndReason,
    pub constraint_violations: usize,
    pub coercions: Vec<Coercion>,
    pub fallbacks: u32,
    pub summary: Option<ChatSummary>,
}

impl SessionReport {
    pub fn new(
        state: &DialogueState,
        policy: FlowPolicy,
        terminal_effect: Option<Effect>,
        end_reason: EndReason,
        summary: Option<ChatSummary>,
    ) -> Self {
        Self {
            session_id: state.session_id.to_string(),
            photo_id: state.photo_id.to_string(),
            transcript: transcript_rows(state),
            option_history: state.option_history.clone(),
            question_progression: question_progression(state),
            terminal_effect,
            end_reason,
            constraint_violations: policy.violations(&state.option_history).len(),
            coercions: state.coercions.clone(),
            fallbacks: state.fallbacks,
            summary,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub sessions: Vec<SessionReport>,
    pub steps: u32,
    /// Count per option letter; options never chosen are absent.
    pub option_histogram: BTreeMap<String, u32>,
    pub max_consecutive_c: u32,
    pub constraint_violations: usize,
    pub coercion_count: usize,
    pub fallback_count: u32,
    pub target_person: Option<String>,
    pub profile_before: Profile,
    pub profile_after: Profile,
    pub profile_diff: ProfileDiff,
}

fn longest_c_run(history: &[AgentOption]) -> u32 {
    let (mut best, mut run) = (0, 0);
    for o in history {
        run = if *o == AgentOption::C { run + 1 } else { 0 };
        best = best.max(run);
    }
    best
}

impl SimulationReport {
    pub fn new(sessions: Vec<SessionReport>, steps: u32, before: &Profile, after: &Profile) -> Self {
        let mut histogram = BTreeMap::new();
        for o in sessions.iter().flat_map(|s| &s.option_history) {
            *histogram.entry(o.to_string()).or_insert(0) += 1;
        }
        let target_person = sessions
            .iter()
            .rev()
            .find_map(|s| s.summary.as_ref().and_then(|x| x.target_person.clone()));
        Self {
            max_consecutive_c: sessions
                .iter()
                .map(|s| longest_c_run(&s.option_history))
                .max()
                .unwrap_or(0),
            constraint_violations: sessions.iter().map(|s| s.constraint_violations).sum(),
            coercion_count: sessions.iter().map(|s| s.coercions.len()).sum(),
            fallback_count: sessions.iter().map(|s| s.fallbacks).sum(),
            option_histogram: histogram,
            target_person,
            profile_before: before.clone(),
            profile_after: after.clone(),
            profile_diff: ProfileDiff::between(before, after),
            sessions,
            steps,
        }
    }

    pub fn transcript_len(&self) -> usize {
        self.sessions.iter().map(|s| s.transcript.len()).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum ReportFormat {
    Text,
    Json,
}

pub fn emit_report(report: &SimulationReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Json => {
            let mut out = serde_json::to_string_pretty(report).expect("report serializes");
            out.push('\n');
            out
        }
        ReportFormat::Text => render_text(report),
    }
}

fn render_text(report: &SimulationReport) -> String {
    let mut out = format!("{TEXT_HEADER}\n");
    if report.sessions.is_empty() {
        return out;
    }
    for (i, session) in report.sessions.iter().enumerate() {
        if i > 0 {
            let _ = writeln!(out, "-- {} (photo {}) --", session.session_id, session.photo_id);
        }
        for row in &session.transcript {
            let _ = writeln!(
                out,
                "{} | {} | {} | {} | {}",
                row.round,
                row.role,
                row.question_kind.map(|k| k.to_string()).unwrap_or_default(),
                row.option.map(|o| o.to_string()).unwrap_or_default(),
                row.message.replace('\n', " "),
            );
        }
    }

    let histogram: Vec<String> = report
        .option_histogram
        .iter()
        .map(|(k, v)| format!("{k}:{v}"))
        .collect();
    let _ = writeln!(out);
    let _ = writeln!(out, "steps: {}", report.steps);
    let _ = writeln!(out, "option histogram: {{{}}}", histogram.join(", "));
    let _ = writeln!(out, "max consecutive C: {}", report.max_consecutive_c);
    let _ = writeln!(out, "constraint violations: {}", report.constraint_violations);
    let _ = writeln!(out, "coercions: {}", report.coercion_count);
    let _ = writeln!(out, "fallbacks: {}", report.fallback_count);
    for session in &report.sessions {
        if let Some(s) = &session.summary {
            let parsed = if s.parsed { "" } else { " (unparsed)" };
            let _ = writeln!(out, "summary {}{parsed}: {}", session.session_id, s.summary_text.replace('\n', " "));
        }
    }
    let _ = writeln!(out, "target person: {}", report.target_person.as_deref().unwrap_or("none"));
    let _ = writeln!(out, "profile before: {}", report.profile_before);
    let _ = writeln!(out, "profile after: {}", report.profile_after);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_report_is_header_only() {
        let report = SimulationReport::default();
        assert_eq!(emit_report(&report, ReportFormat::Text), format!("{TEXT_HEADER}\n"));
    }

    #[test]
    fn json_round_trips() {
        let report = SimulationReport::new(vec![], 0, &Profile::default(), &Profile::new(["tea"], ["noise"]));
        let json = emit_report(&report, ReportFormat::Json);
        let back: SimulationReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, report);
        assert_eq!(emit_report(&back, ReportFormat::Json), json);
    }

    #[test]
    fn longest_run() {
        use AgentOption::*;
        assert_eq!(longest_c_run(&[C, C, D, A, C]), 2);
        assert_eq!(longest_c_run(&[]), 0);
    }
}
