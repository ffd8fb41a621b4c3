//! The fixed-width state summary sent as the user message.
//!
//! ```text
//! Total MI = 12.43 bits, Power = 38.5 / 40.0
//!  ch |h|^2   MI   P_i   w_i
//!   1  0.25  1.02  3.20  0.125
//!   8  2.25  1.98  8.60  0.125
//! Policy: Maximize total throughput
//! ```

use thiserror::Error;

use super::Policy;
use crate::optimizer::StepRecord;

pub const COLUMN_HEADER: &str = " ch |h|^2   MI   P_i   w_i";

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    /// One-based channel index.
    pub index: usize,
    pub gain2: f64,
    pub mi: f64,
    pub power: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StateSummary {
    pub total_mi: f64,
    pub power_used: f64,
    pub p_total: f64,
    pub rows: Vec<SummaryRow>,
    pub policy_text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SummaryParseError {
    #[error("missing or malformed header line")]
    Header,
    #[error("malformed row {0}")]
    Row(usize),
    #[error("missing policy line")]
    Policy,
}

/// Fixed-point formatting that never prints a negative zero.
fn fixed(x: f64, prec: usize) -> String {
    let s = format!("{x:.prec$}");
    if s.starts_with('-') && s[1..].chars().all(|c| c == '0' || c == '.') {
        s[1..].to_string()
    } else {
        s
    }
}

impl StateSummary {
    pub fn from_record(record: &StepRecord, policy: &Policy) -> Self {
        let rows = (0..record.mi.len())
            .map(|i| SummaryRow {
                index: i + 1,
                gain2: record.gains2[i],
                mi: record.mi[i],
                power: record.powers[i],
                weight: record.weights[i],
            })
            .collect();
        Self {
            total_mi: record.sum_mi,
            power_used: record.total_power(),
            p_total: record.p_total,
            rows,
            policy_text: policy.text().to_string(),
        }
    }

    /// Renders the summary; identical inputs give identical bytes.
    pub fn render(&self) -> String {
        let mut out = format!(
            "Total MI = {} bits, Power = {} / {}\n{}\n",
            fixed(self.total_mi, 2),
            fixed(self.power_used, 1),
            fixed(self.p_total, 1),
            COLUMN_HEADER
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{:>3}{:>6}{:>6}{:>6}{:>7}\n",
                r.index,
                fixed(r.gain2, 2),
                fixed(r.mi, 2),
                fixed(r.power, 2),
                fixed(r.weight, 3)
            ));
        }
        out.push_str("Policy: ");
        out.push_str(&self.policy_text);
        out
    }

    /// Parses rendered text back into values (at the rendered precision).
    pub fn parse(text: &str) -> Result<Self, SummaryParseError> {
        let mut lines = text.lines();
        let header = lines.next().ok_or(SummaryParseError::Header)?;
        let (total_mi, power_used, p_total) = parse_header(header).ok_or(SummaryParseError::Header)?;
        if lines.next().map(str::trim) != Some(COLUMN_HEADER.trim()) {
            return Err(SummaryParseError::Header);
        }
        let mut rows = Vec::new();
        let mut policy_text = None;
        for line in lines.by_ref() {
            if let Some(rest) = line.strip_prefix("Policy: ") {
                policy_text = Some(rest.to_string());
                break;
            }
            let row = parse_row(line).ok_or(SummaryParseError::Row(rows.len() + 1))?;
            rows.push(row);
        }
        let mut policy_text = policy_text.ok_or(SummaryParseError::Policy)?;
        // Policy text may itself span lines.
        for line in lines {
            policy_text.push('\n');
            policy_text.push_str(line);
        }
        Ok(Self {
            total_mi,
            power_used,
            p_total,
            rows,
            policy_text,
        })
    }
}

fn parse_header(line: &str) -> Option<(f64, f64, f64)> {
    let rest = line.strip_prefix("Total MI = ")?;
    let (mi, rest) = rest.split_once(" bits, Power = ")?;
    let (used, cap) = rest.split_once(" / ")?;
    Some((mi.trim().parse().ok()?, used.trim().parse().ok()?, cap.trim().parse().ok()?))
}

fn parse_row(line: &str) -> Option<SummaryRow> {
    let mut it = line.split_whitespace();
    let row = SummaryRow {
        index: it.next()?.parse().ok()?,
        gain2: it.next()?.parse().ok()?,
        mi: it.next()?.parse().ok()?,
        power: it.next()?.parse().ok()?,
        weight: it.next()?.parse().ok()?,
    };
    if it.next().is_some() || row.index == 0 {
        return None;
    }
    Some(row)
}
