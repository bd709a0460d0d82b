//! Run reports and their canonical serialization.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::schema::{Kind, Tolerances};
use crate::error::Result;
use crate::games::{ResilienceVerdict, SvVerdict};
use crate::mlf::RemedialVerdict;
use crate::vi::{SolutionCertificate, Verdict, ViolationCertificate};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Solved,
    Accepted,
    Rejected,
    /// The solver stopped without a certified answer.
    Unsolved,
    Violation,
    Empty,
    /// A reduction or gadget file was produced.
    Written,
}

impl Status {
    pub fn exit_code(self) -> i32 {
        match self {
            Status::Solved | Status::Accepted | Status::Written => 0,
            Status::Unsolved => 1,
            Status::Rejected => 2,
            Status::Violation => 3,
            Status::Empty => 4,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Status::Solved => "solved",
            Status::Accepted => "accepted",
            Status::Rejected => "rejected",
            Status::Unsolved => "unsolved",
            Status::Violation => "violation",
            Status::Empty => "empty",
            Status::Written => "written",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Certificate {
    Solution(SolutionCertificate),
    Checked {
        candidate: SolutionCertificate,
        verdict: Verdict,
    },
    Violation(ViolationCertificate),
    /// MVI verdict for the coalition conditions of size `t`.
    Resilience {
        candidate: SolutionCertificate,
        t: usize,
        verdict: Verdict,
    },
    /// Grid search for profitable coalition deviations.
    Deviation {
        profile: Vec<f64>,
        t: usize,
        eps: f64,
        resolution: f64,
        verdict: ResilienceVerdict,
    },
    Remedial {
        x_i: Vec<f64>,
        y_i: Vec<f64>,
        x_ii: Vec<f64>,
        y_ii: Vec<f64>,
        verdict: RemedialVerdict,
    },
    Gadget {
        assignment: Vec<bool>,
        verdict: SvVerdict,
    },
    Assignment {
        assignment: Vec<bool>,
        satisfied: bool,
    },
    /// Exhaustive search found no satisfying assignment.
    Unsatisfiable { variables: usize, clauses: usize },
    Reduction {
        kind: Kind,
        output_digest: String,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub command: String,
    pub kind: Kind,
    pub input_digest: String,
    pub status: Status,
    pub certificate: Certificate,
    pub iterations: Option<usize>,
    pub oracle_calls: BTreeMap<String, usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_time_ms: Option<f64>,
    pub seed: u64,
    pub tolerances: Tolerances,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, clap::ValueEnum)]
pub enum Format {
    #[default]
    Json,
    Text,
}

/// `%.12g`.
pub fn format_g(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{x:.11e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..12).contains(&exp) {
        let m = trim_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{m}e{sign}{:02}", exp.abs())
    } else {
        let decimals = (11 - exp) as usize;
        trim_zeros(&format!("{x:.decimals$}")).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// Compact JSON with sorted keys and `%.12g` floats.
pub fn canonical_json(v: &Value) -> String {
    let mut out = String::new();
    write_canonical(v, &mut out);
    out
}

fn write_canonical(v: &Value, out: &mut String) {
    match v {
        Value::Null => out.push_str("null"),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Number(n) => {
            if let Some(i) = n.as_i64() {
                let _ = write!(out, "{i}");
            } else if let Some(u) = n.as_u64() {
                let _ = write!(out, "{u}");
            } else {
                out.push_str(&format_g(n.as_f64().unwrap_or(f64::NAN)));
            }
        }
        Value::String(s) => out.push_str(&serde_json::to_string(s).expect("strings serialize")),
        Value::Array(items) => {
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_canonical(item, out);
            }
            out.push(']');
        }
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push('{');
            for (i, k) in keys.into_iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push_str(&serde_json::to_string(k).expect("strings serialize"));
                out.push(':');
                write_canonical(&map[k], out);
            }
            out.push('}');
        }
    }
}

pub fn emit_report(report: &RunReport, format: Format) -> Result<Vec<u8>> {
    Ok(match format {
        Format::Json => {
            let mut s = canonical_json(&serde_json::to_value(report)?);
            s.push('\n');
            s.into_bytes()
        }
        Format::Text => text_summary(report).into_bytes(),
    })
}

pub fn parse_report(bytes: &[u8]) -> Result<RunReport> {
    Ok(serde_json::from_slice(bytes)?)
}

fn text_summary(r: &RunReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "command:  {} ({})", r.command, r.kind.name());
    let _ = writeln!(s, "status:   {}", r.status.name());
    let _ = writeln!(s, "input:    sha256 {}", r.input_digest);
    let _ = writeln!(s, "seed:     {}", r.seed);
    let _ = writeln!(
        s,
        "beta:     {}  eps {}  delta {}  eta {}",
        format_g(r.tolerances.beta),
        format_g(r.tolerances.eps),
        format_g(r.tolerances.delta),
        format_g(r.tolerances.eta)
    );
    if let Some(it) = r.iterations {
        let _ = writeln!(s, "iterations: {it}");
    }
    if !r.oracle_calls.is_empty() {
        let calls: Vec<String> = r.oracle_calls.iter().map(|(k, v)| format!("{k}={v}")).collect();
        let _ = writeln!(s, "oracle calls: {}", calls.join(" "));
    }
    if let Some(ms) = r.wall_time_ms {
        let _ = writeln!(s, "wall time: {ms:.1} ms");
    }
    let _ = writeln!(s, "certificate: {}", describe(&r.certificate));
    for w in &r.warnings {
        let _ = writeln!(s, "warning: {w}");
    }
    s
}

fn describe(c: &Certificate) -> String {
    let min_residual = |c: &SolutionCertificate| c.residual.iter().copied().fold(f64::INFINITY, f64::min);
    match c {
        Certificate::Solution(c) => format!("solution x* = {:?}, min residual {}", c.x_star, format_g(min_residual(c))),
        Certificate::Checked { verdict, .. } | Certificate::Resilience { verdict, .. } => match verdict {
            Verdict::Accept => "candidate accepted".into(),
            Verdict::Reject(vs) => format!("candidate rejected with {} violated entries: {vs:?}", vs.len()),
        },
        Certificate::Violation(ViolationCertificate::Emptiness { which, certificate, .. }) => format!(
            "emptiness of set index {} ({which}) at margin {}",
            certificate.set_index,
            format_g(certificate.delta)
        ),
        Certificate::Violation(v) => format!("assumption violated: {v:?}"),
        Certificate::Deviation { verdict, .. } => format!("{verdict:?}"),
        Certificate::Remedial { verdict, .. } => format!("{verdict:?}"),
        Certificate::Gadget { verdict, .. } => format!("{verdict:?}"),
        Certificate::Assignment { assignment, satisfied } => format!("assignment {assignment:?}, satisfied {satisfied}"),
        Certificate::Unsatisfiable { variables, clauses } => {
            format!("no satisfying assignment over {variables} variables and {clauses} clauses")
        }
        Certificate::Reduction { kind, output_digest } => format!("{} file, sha256 {output_digest}", kind.name()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ellipsoid::EmptinessCertificate;
    use proptest::prelude::*;

    fn sample(cert: Certificate) -> RunReport {
        RunReport {
            command: "solve".into(),
            kind: Kind::Vi,
            input_digest: "00".into(),
            status: Status::Solved,
            certificate: cert,
            iterations: Some(3),
            oracle_calls: BTreeMap::from([("F".to_string(), 7)]),
            wall_time_ms: None,
            seed: 0,
            tolerances: Tolerances::default(),
            warnings: vec![],
        }
    }

    fn solution() -> Certificate {
        Certificate::Solution(SolutionCertificate {
            x: vec![0.1, 1.0 / 3.0],
            x_star: vec![0.1, -2.5e-7],
            w: None,
            w_star: None,
            residual: vec![-1.25e-4],
            closeness: 0.0,
        })
    }

    #[test]
    fn format_g_examples() {
        assert_eq!(format_g(1.0), "1");
        assert_eq!(format_g(0.1), "0.1");
        assert_eq!(format_g(1.0 / 3.0), "0.333333333333");
        assert_eq!(format_g(-2.5e-7), "-2.5e-07");
        assert_eq!(format_g(1e-4), "0.0001");
        assert_eq!(format_g(123456789012.0), "123456789012");
        assert_eq!(format_g(1234567890123.0), "1.23456789012e+12");
        assert_eq!(format_g(-0.0), "0");
        assert_eq!(format_g(9.9999999999999), "10");
    }

    #[test]
    fn serialization_is_byte_stable() {
        let r = sample(solution());
        assert_eq!(emit_report(&r, Format::Json).unwrap(), emit_report(&r, Format::Json).unwrap());
    }

    #[test]
    fn json_round_trip_is_identity() {
        let first = emit_report(&sample(solution()), Format::Json).unwrap();
        let again = emit_report(&parse_report(&first).unwrap(), Format::Json).unwrap();
        assert_eq!(first, again);
    }

    #[test]
    fn keys_are_sorted() {
        let s = String::from_utf8(emit_report(&sample(solution()), Format::Json).unwrap()).unwrap();
        let c = s.find("\"certificate\"").unwrap();
        let k = s.find("\"kind\"").unwrap();
        let t = s.find("\"tolerances\"").unwrap();
        assert!(c < k && k < t);
    }

    #[test]
    fn text_names_empty_set_index() {
        let cert = Certificate::Violation(ViolationCertificate::Emptiness {
            which: "R".into(),
            x: vec![0.0],
            certificate: EmptinessCertificate {
                set_index: 2,
                delta: 1e-4,
                reduced_dim: 1,
                probes: vec![0],
                final_log_volume: -10.0,
                threshold_log_volume: -9.0,
                inconsistent_hull: false,
            },
        });
        let mut r = sample(cert);
        r.status = Status::Empty;
        let text = String::from_utf8(emit_report(&r, Format::Text).unwrap()).unwrap();
        assert!(text.contains("set index 2"), "{text}");
    }

    proptest! {
        #[test]
        fn format_g_is_idempotent(x in proptest::num::f64::NORMAL) {
            let s = format_g(x);
            let back: f64 = s.parse().unwrap();
            prop_assert_eq!(format_g(back), s.clone());
            let reference = x.abs();
            prop_assert!((back - x).abs() <= reference * 1e-11);
        }
    }
}
