use std::fmt::Write;

use pace_core::pipeline::MemberStatus;
use pace_core::RunReport;

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |v| format!("{:.2}", 100.0 * v))
}

/// Plain-text table of member and ensemble accuracies.
pub fn render(report: &RunReport) -> String {
    let mut out = String::new();
    let cfg = &report.config;
    let _ = writeln!(
        out,
        "aligner {:?}, {} self-training rounds, {} member(s)",
        cfg.aligner,
        cfg.selftrain.rounds,
        report.members.len()
    );
    let _ = writeln!(
        out,
        "{:<4} {:<32} {:>9} {:>9} {:>9} {:>10}",
        "#", "member", "labeled", "target", "valid", "ms"
    );
    for m in &report.members {
        let name: String = m
            .name
            .chars()
            .rev()
            .take(32)
            .collect::<Vec<_>>()
            .into_iter()
            .rev()
            .collect();
        match m.status {
            MemberStatus::Ok => {
                let t = &m.timing_ms;
                let total = t.align + t.normalize + t.train_labeled + t.self_train + t.predict;
                let _ = writeln!(
                    out,
                    "{:<4} {:<32} {:>9} {:>9} {:>9} {:>10.0}",
                    m.member,
                    name,
                    pct(m.labeled_target_accuracy),
                    pct(m.target_accuracy),
                    pct(m.validation_accuracy),
                    total
                );
            }
            MemberStatus::Failed => {
                let _ = writeln!(
                    out,
                    "{:<4} {:<32} failed: {}",
                    m.member,
                    name,
                    m.error.as_deref().unwrap_or("?")
                );
            }
        }
    }
    let _ = writeln!(out, "mean member target accuracy: {}", pct(report.mean_member_accuracy));
    for c in &report.ensemble {
        match &c.error {
            None => {
                let _ = writeln!(out, "ensemble {:<20} {}", c.combiner.name(), pct(c.accuracy));
            }
            Some(e) => {
                let _ = writeln!(out, "ensemble {:<20} error: {e}", c.combiner.name());
            }
        }
    }
    out
}
