use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkernel::io::format_f64;

/// Accuracies measured after one session, micro-averaged over test samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionRecord {
    pub session: usize,
    /// All classes seen so far.
    pub acc_all: f64,
    pub acc_base: f64,
    /// `None` before any novel class exists.
    pub acc_novel: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub sessions: Vec<SessionRecord>,
    /// Mean of `acc_all` over sessions.
    pub avg: f64,
    /// `acc_all[0] − acc_all[last]`.
    pub pd: f64,
}

impl RunMetrics {
    pub fn acc_all(&self) -> Vec<f64> {
        self.sessions.iter().map(|s| s.acc_all).collect()
    }

    pub fn final_session(&self) -> &SessionRecord {
        self.sessions.last().expect("metrics hold at least one session")
    }

    /// `session,acc_all,acc_base,acc_novel`; `acc_novel` is empty for session 0.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("session,acc_all,acc_base,acc_novel\n");
        for s in &self.sessions {
            let _ = writeln!(
                out,
                "{},{},{},{}",
                s.session,
                format_f64(s.acc_all),
                format_f64(s.acc_base),
                s.acc_novel.map(format_f64).unwrap_or_default()
            );
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| Error::Format("empty metrics CSV".into()))?;
        if header.trim() != "session,acc_all,acc_base,acc_novel" {
            return Err(Error::Format(format!("unexpected metrics header `{header}`")));
        }
        let parse = |t: &str, line: &str| -> Result<f64> {
            t.trim()
                .parse::<f64>()
                .map_err(|_| Error::Format(format!("bad number `{t}` in `{line}`")))
        };
        let mut records = Vec::new();
        for line in lines {
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 4 {
                return Err(Error::Format(format!("expected 4 columns in `{line}`")));
            }
            records.push(SessionRecord {
                session: cols[0]
                    .trim()
                    .parse()
                    .map_err(|_| Error::Format(format!("bad session index in `{line}`")))?,
                acc_all: parse(cols[1], line)?,
                acc_base: parse(cols[2], line)?,
                acc_novel: if cols[3].trim().is_empty() {
                    None
                } else {
                    Some(parse(cols[3], line)?)
                },
            });
        }
        compute_metrics(&records)
    }
}

pub fn compute_metrics(history: &[SessionRecord]) -> Result<RunMetrics> {
    let (first, last) = match (history.first(), history.last()) {
        (Some(f), Some(l)) => (f, l),
        _ => return Err(Error::InvalidConfig("metrics need at least one session".into())),
    };
    let avg = history.iter().map(|s| s.acc_all).sum::<f64>() / history.len() as f64;
    Ok(RunMetrics {
        sessions: history.to_vec(),
        avg,
        pd: first.acc_all - last.acc_all,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(session: usize, acc: f64) -> SessionRecord {
        SessionRecord {
            session,
            acc_all: acc,
            acc_base: acc,
            acc_novel: (session > 0).then_some(acc),
        }
    }

    #[test]
    fn single_and_two_sessions() {
        let m = compute_metrics(&[rec(0, 0.8)]).unwrap();
        assert_eq!((m.avg, m.pd), (0.8, 0.0));
        let m = compute_metrics(&[rec(0, 0.9), rec(1, 0.7)]).unwrap();
        assert!((m.avg - 0.8).abs() < 1e-15);
        assert!((m.pd - 0.2).abs() < 1e-15);
        assert!(compute_metrics(&[]).is_err());
    }

    #[test]
    fn csv_round_trip_keeps_values() {
        let m = compute_metrics(&[rec(0, 0.91), rec(1, 0.875), rec(2, 1.0 / 3.0)]).unwrap();
        let csv = m.to_csv();
        assert!(csv.lines().nth(1).unwrap().ends_with(','));
        assert_eq!(RunMetrics::from_csv(&csv).unwrap(), m);
        assert!(RunMetrics::from_csv("a,b\n").is_err());
    }
}
