//! Report files: JSON documents, CSV tables and the combined summary.
//!
//! Non-finite scores are written as the strings `inf`, `-inf` and `nan` in
//! both formats.

use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use super::{GroundingReport, MeanScores, SeparationReport};
use crate::error::{Error, Result};

/// Serde adapter for `f64` scores that may be infinite.
pub mod score {
    use serde::de::Error as _;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_str(&super::fmt_score(*v))
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(v),
            Raw::Text(t) => match t.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                other => Err(D::Error::custom(format!("invalid score `{other}`"))),
            },
        }
    }
}

pub mod score_opt {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    struct W(#[serde(with = "super::score")] f64);

    pub fn serialize<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
        v.map(W).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
        Ok(Option::<W>::deserialize(d)?.map(|w| w.0))
    }
}

/// Four decimals; non-finite values as `inf`, `-inf`, `nan`.
pub fn fmt_score(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v == f64::INFINITY {
        "inf".into()
    } else if v == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        format!("{v:.4}")
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, fmt_score)
}

pub fn to_json<T: Serialize>(v: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    Ok(s)
}

pub fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

pub fn grounding_csv(reports: &[GroundingReport]) -> String {
    let mut s = String::from("protocol,class,tp,fp,tn,fn,accuracy\n");
    for r in reports {
        for (class, c) in &r.per_class {
            let acc = c.correct() as f64 / c.total() as f64;
            let _ = writeln!(
                s,
                "{},{class},{},{},{},{},{}",
                r.protocol.name(),
                c.tp,
                c.fp,
                c.tn,
                c.fn_,
                fmt_score(acc)
            );
        }
        let _ = writeln!(s, "{},all,,,,,{}", r.protocol.name(), fmt_score(r.accuracy));
    }
    s
}

pub fn separation_csv(r: &SeparationReport) -> String {
    let mut s = String::from("table,sample_id,object_id,video,sdr,sir,sar\n");
    for (table, rows) in [("audible", &r.rows), ("silent", &r.silent_rows)] {
        for row in rows {
            let _ = writeln!(
                s,
                "{table},{},{},{},{},{},{}",
                row.sample_id,
                row.object_id,
                row.video + 1,
                fmt_score(row.sdr),
                fmt_score(row.sir),
                fmt_score(row.sar)
            );
        }
    }
    s
}

/// The combined table: grounding accuracy per protocol, then separation,
/// silent-object and ground-truth score rows.
pub fn summary_csv(grounding: &[GroundingReport], separation: Option<&SeparationReport>) -> String {
    let mut s = String::from("section,row,value\n");
    for r in grounding {
        let _ = writeln!(s, "grounding_accuracy,{},{}", r.protocol.name(), fmt_score(r.accuracy));
    }
    if let Some(r) = separation {
        let mut scores = |section: &str, m: &MeanScores| {
            let _ = writeln!(s, "{section},SDR,{}", fmt_opt(m.sdr));
            let _ = writeln!(s, "{section},SIR,{}", fmt_opt(m.sir));
        };
        scores("separation", &r.mean);
        scores("separation_per_sample", &r.per_sample_mean);
        scores("separation_ground_truth", &r.gt_mean);
        scores("silent", &r.silent_mean);
        scores("silent_ground_truth", &r.silent_gt_mean);
        let _ = writeln!(s, "silent,success_rate,{}", fmt_opt(r.silent_success_rate));
    }
    s
}
