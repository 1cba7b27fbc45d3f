//! Append-only trial ledger, one JSON object per line:
//! `{"trial": t, "assignment": {...}, "feasible": bool, "ppl": number|null, "seconds": number}`.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde_json::{Map, Value};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct TrialRecord {
    pub trial: usize,
    /// `(dimension name, chosen value)` in dimension order.
    pub assignment: Vec<(String, f64)>,
    pub feasible: bool,
    /// Present iff the trial was feasible and evaluated.
    pub ppl: Option<f64>,
    pub seconds: f64,
}

fn number(v: f64) -> Value {
    // Integral values (bit-widths) are written without a fraction.
    if v.fract() == 0.0 && v.abs() < 9.0e15 {
        Value::from(v as i64)
    } else {
        Value::from(v)
    }
}

impl TrialRecord {
    pub fn to_json(&self) -> Value {
        let mut assignment = Map::new();
        for (k, v) in &self.assignment {
            assignment.insert(k.clone(), number(*v));
        }
        let mut obj = Map::new();
        obj.insert("trial".into(), Value::from(self.trial));
        obj.insert("assignment".into(), Value::Object(assignment));
        obj.insert("feasible".into(), Value::from(self.feasible));
        obj.insert("ppl".into(), self.ppl.map_or(Value::Null, Value::from));
        obj.insert("seconds".into(), Value::from(self.seconds));
        Value::Object(obj)
    }

    pub fn to_line(&self) -> String {
        self.to_json().to_string()
    }

    pub fn from_line(line: &str) -> std::result::Result<Self, String> {
        let v: Value = serde_json::from_str(line).map_err(|e| e.to_string())?;
        let obj = v.as_object().ok_or("record is not a JSON object")?;
        let field = |k: &str| obj.get(k).ok_or_else(|| format!("missing field `{k}`"));
        let trial = field("trial")?
            .as_u64()
            .ok_or("`trial` is not a non-negative integer")? as usize;
        let assignment = field("assignment")?
            .as_object()
            .ok_or("`assignment` is not an object")?
            .iter()
            .map(|(k, v)| {
                v.as_f64()
                    .map(|x| (k.clone(), x))
                    .ok_or_else(|| format!("assignment `{k}` is not a number"))
            })
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let feasible = field("feasible")?.as_bool().ok_or("`feasible` is not a boolean")?;
        let ppl = match field("ppl")? {
            Value::Null => None,
            p => Some(p.as_f64().ok_or("`ppl` is neither a number nor null")?),
        };
        let seconds = field("seconds")?.as_f64().ok_or("`seconds` is not a number")?;
        if ppl.is_some() && !feasible {
            return Err("infeasible trial carries a ppl".into());
        }
        Ok(Self {
            trial,
            assignment,
            feasible,
            ppl,
            seconds,
        })
    }
}

pub fn write_ledger(mut w: impl Write, records: &[TrialRecord]) -> std::io::Result<()> {
    for r in records {
        writeln!(w, "{}", r.to_line())?;
    }
    Ok(())
}

pub fn save_ledger(path: impl AsRef<Path>, records: &[TrialRecord]) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    write_ledger(&mut buf, records).expect("writing to memory");
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Parses a ledger; blank lines are skipped. Errors name the 1-based line.
pub fn read_ledger(r: impl Read) -> Result<Vec<TrialRecord>> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(r).lines().enumerate() {
        let line = line.map_err(|e| Error::Parse {
            line: i + 1,
            reason: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(TrialRecord::from_line(&line).map_err(|reason| Error::Parse { line: i + 1, reason })?);
    }
    Ok(out)
}

pub fn load_ledger(path: impl AsRef<Path>) -> Result<Vec<TrialRecord>> {
    let path = path.as_ref();
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_ledger(f)
}
