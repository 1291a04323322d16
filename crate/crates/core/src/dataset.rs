//! Per-subject trial records and the CSV interchange format.
//!
//! CSV layout (one row per subject per decision time):
//!
//! ```text
//! subject,t,avail,action,prob,outcome
//! 1,1,1,0,4.0000000000000002e-1,2.1380939469397227e0
//! 1,2,0,1,4.0000000000000002e-1,
//! ```
//!
//! `subject` and `t` are 1-based, `avail`/`action` are `0`/`1`, reals are
//! written with 17 significant digits so they read back bit-identically, and
//! `outcome` is empty whenever `avail = 0`.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CSV_HEADER: [&str; 6] = ["subject", "t", "avail", "action", "prob", "outcome"];

/// Observed history of one participant.
///
/// `outcome[t]` is `None` when the subject was unavailable; values stored at
/// unavailable times are ignored by every estimator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectRecord {
    pub avail: Vec<bool>,
    pub action: Vec<bool>,
    pub prob: Vec<f64>,
    pub outcome: Vec<Option<f64>>,
}

impl SubjectRecord {
    pub fn new(
        avail: Vec<bool>,
        action: Vec<bool>,
        prob: Vec<f64>,
        outcome: Vec<Option<f64>>,
    ) -> Result<Self> {
        let rec = Self {
            avail,
            action,
            prob,
            outcome,
        };
        rec.validate()?;
        Ok(rec)
    }

    pub fn len(&self) -> usize {
        self.avail.len()
    }

    pub fn is_empty(&self) -> bool {
        self.avail.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let t = self.avail.len();
        if self.action.len() != t || self.prob.len() != t || self.outcome.len() != t {
            return Err(Error::Dimension(format!(
                "record fields disagree on length (avail {t}, action {}, prob {}, outcome {})",
                self.action.len(),
                self.prob.len(),
                self.outcome.len()
            )));
        }
        for i in 0..t {
            let rho = self.prob[i];
            if !(rho > 0.0 && rho < 1.0) {
                return Err(Error::InvalidProbability { t: i + 1, value: rho });
            }
            if self.avail[i] {
                match self.outcome[i] {
                    Some(y) if y.is_finite() => {}
                    Some(y) => {
                        return Err(Error::InvalidData(format!(
                            "non-finite outcome {y} at available decision time {}",
                            i + 1
                        )))
                    }
                    None => {
                        return Err(Error::InvalidData(format!(
                            "missing outcome at available decision time {}",
                            i + 1
                        )))
                    }
                }
            }
        }
        Ok(())
    }

    /// Outcome if the subject was available at (0-based) index `i`.
    pub fn observed(&self, i: usize) -> Option<f64> {
        if self.avail[i] {
            self.outcome[i]
        } else {
            None
        }
    }
}

/// A trial's worth of subject records, all over the same decision grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialDataset {
    subjects: Vec<SubjectRecord>,
}

impl TrialDataset {
    pub fn new(subjects: Vec<SubjectRecord>) -> Result<Self> {
        if subjects.is_empty() {
            return Err(Error::InvalidData("dataset has no subjects".into()));
        }
        let t = subjects[0].len();
        if t == 0 {
            return Err(Error::InvalidData("subjects have no decision times".into()));
        }
        for (i, s) in subjects.iter().enumerate() {
            s.validate()?;
            if s.len() != t {
                return Err(Error::Dimension(format!(
                    "subject {} has {} decision times, expected {t}",
                    i + 1,
                    s.len()
                )));
            }
        }
        Ok(Self { subjects })
    }

    pub fn subjects(&self) -> &[SubjectRecord] {
        &self.subjects
    }

    pub fn len(&self) -> usize {
        self.subjects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subjects.is_empty()
    }

    pub fn decisions(&self) -> usize {
        self.subjects[0].len()
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let csv_err = |e: csv::Error| Error::Io(e.to_string());
        w.write_record(CSV_HEADER).map_err(csv_err)?;
        for (sid, s) in self.subjects.iter().enumerate() {
            for i in 0..s.len() {
                let outcome = match s.observed(i) {
                    Some(y) => format_real(y),
                    None => String::new(),
                };
                w.write_record([
                    (sid + 1).to_string(),
                    (i + 1).to_string(),
                    u8::from(s.avail[i]).to_string(),
                    u8::from(s.action[i]).to_string(),
                    format_real(s.prob[i]),
                    outcome,
                ])
                .map_err(csv_err)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        String::from_utf8(buf).map_err(|e| Error::Io(e.to_string()))
    }

    /// Parses the CSV format. Errors carry the 1-based line number.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let header = r
            .headers()
            .map_err(|e| Error::Csv { line: 1, message: e.to_string() })?
            .clone();
        if header.iter().collect::<Vec<_>>() != CSV_HEADER {
            return Err(Error::Csv {
                line: 1,
                message: format!("expected header {}", CSV_HEADER.join(",")),
            });
        }

        let mut rows: BTreeMap<u64, Vec<(u64, usize, RawRow)>> = BTreeMap::new();
        for rec in r.records() {
            let rec = rec.map_err(|e| Error::Csv {
                line: e.position().map_or(0, |p| p.line()),
                message: e.to_string(),
            })?;
            let line = rec.position().map_or(0, |p| p.line());
            let row = parse_row(&rec, line)?;
            rows.entry(row.subject).or_default().push((line, row.t, row));
        }
        if rows.is_empty() {
            return Err(Error::Csv { line: 2, message: "no data rows".into() });
        }

        let mut subjects = Vec::with_capacity(rows.len());
        let mut expected_t = None;
        for (sid, mut entries) in rows {
            entries.sort_by_key(|(_, t, _)| *t);
            let first_line = entries.iter().map(|(l, _, _)| *l).min().unwrap_or(0);
            let t_count = entries.len();
            match expected_t {
                None => expected_t = Some(t_count),
                Some(t) if t != t_count => {
                    return Err(Error::Csv {
                        line: first_line,
                        message: format!(
                            "subject {sid} has {t_count} decision times, expected {t}"
                        ),
                    })
                }
                _ => {}
            }
            let mut rec = SubjectRecord {
                avail: Vec::with_capacity(t_count),
                action: Vec::with_capacity(t_count),
                prob: Vec::with_capacity(t_count),
                outcome: Vec::with_capacity(t_count),
            };
            for (k, (line, t, row)) in entries.into_iter().enumerate() {
                if t != k + 1 {
                    return Err(Error::Csv {
                        line,
                        message: format!(
                            "subject {sid}: decision times must be 1..={t_count} without gaps or repeats"
                        ),
                    });
                }
                rec.avail.push(row.avail);
                rec.action.push(row.action);
                rec.prob.push(row.prob);
                rec.outcome.push(row.outcome);
            }
            subjects.push(rec);
        }
        TrialDataset::new(subjects)
    }
}

struct RawRow {
    subject: u64,
    t: usize,
    avail: bool,
    action: bool,
    prob: f64,
    outcome: Option<f64>,
}

fn parse_row(rec: &csv::StringRecord, line: u64) -> Result<RawRow> {
    let err = |message: String| Error::Csv { line, message };
    if rec.len() != CSV_HEADER.len() {
        return Err(err(format!("expected {} fields, got {}", CSV_HEADER.len(), rec.len())));
    }
    let int = |i: usize| -> Result<u64> {
        rec[i]
            .parse::<u64>()
            .map_err(|_| err(format!("{}: expected a positive integer, got {:?}", CSV_HEADER[i], &rec[i])))
    };
    let flag = |i: usize| -> Result<bool> {
        match &rec[i] {
            "0" => Ok(false),
            "1" => Ok(true),
            other => Err(err(format!("{}: expected 0 or 1, got {other:?}", CSV_HEADER[i]))),
        }
    };
    let subject = int(0)?;
    let t = int(1)?;
    if subject == 0 || t == 0 {
        return Err(err("subject and t are 1-based".into()));
    }
    let avail = flag(2)?;
    let action = flag(3)?;
    let prob: f64 = rec[4]
        .parse()
        .map_err(|_| err(format!("prob: not a number: {:?}", &rec[4])))?;
    if !(prob > 0.0 && prob < 1.0) {
        return Err(err(format!("prob must lie in (0, 1), got {prob}")));
    }
    let outcome = match (&rec[5], avail) {
        ("", false) => None,
        ("", true) => return Err(err("outcome is required when avail = 1".into())),
        (_, false) => return Err(err("outcome must be empty when avail = 0".into())),
        (s, true) => {
            let y: f64 = s
                .parse()
                .map_err(|_| err(format!("outcome: not a number: {s:?}")))?;
            if !y.is_finite() {
                return Err(err(format!("outcome must be finite, got {s}")));
            }
            Some(y)
        }
    };
    Ok(RawRow {
        subject,
        t: t as usize,
        avail,
        action,
        prob,
        outcome,
    })
}

/// Scientific notation with 17 significant digits.
pub fn format_real(v: f64) -> String {
    format!("{v:.16e}")
}
