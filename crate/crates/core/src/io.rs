//! Trajectory CSV files.
//!
//! One row per knot: `time`, the 29 state entries and the 13 control entries.
//! The final knot has no control of its own and repeats the last one.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::harness::Trace;
use crate::multibody::{ControlInput, FullState};

pub fn trajectory_header() -> Vec<String> {
    let mut h = vec!["time".to_string()];
    let groups: [(&str, usize); 7] = [
        ("x_M", 7),
        ("xd_M", 7),
        ("x_E", 6),
        ("xd_E", 6),
        ("F_e", 3),
        ("W_u", 6),
        ("tau_u", 7),
    ];
    for (name, n) in groups {
        h.extend((0..n).map(|i| format!("{name}[{i}]")));
    }
    h
}

/// Shortest text that round-trips an `f64` (at most 17 significant digits).
pub fn fmt_f64(v: f64) -> String {
    format!("{:.16e}", v)
}

pub fn write_trace<W: Write>(trace: &Trace, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(trajectory_header())?;
    for (k, x) in trace.states.iter().enumerate() {
        let u = trace
            .controls
            .get(k)
            .or(trace.controls.last())
            .copied()
            .unwrap_or_default();
        let mut row = Vec::with_capacity(43);
        row.push(fmt_f64(k as f64 * trace.dt));
        row.extend(x.to_vector().iter().map(|v| fmt_f64(*v)));
        row.extend(u.to_vector().iter().map(|v| fmt_f64(*v)));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trace<R: Read>(input: R) -> Result<Trace> {
    let mut r = csv::Reader::from_reader(input);
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != trajectory_header() {
        return Err(Error::Domain("trajectory CSV header does not match the expected columns".into()));
    }
    let mut times = Vec::new();
    let mut states = Vec::new();
    let mut controls = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let values: Vec<f64> = rec
            .iter()
            .map(|s| s.trim().parse::<f64>().map_err(|e| Error::Domain(format!("bad number {s:?}: {e}"))))
            .collect::<Result<_>>()?;
        times.push(values[0]);
        states.push(FullState::from_slice(&values[1..30])?);
        controls.push(ControlInput::from_slice(&values[30..43])?);
    }
    if states.is_empty() {
        return Err(Error::Domain("trajectory CSV has no rows".into()));
    }
    controls.pop();
    let dt = if times.len() > 1 { times[1] - times[0] } else { 0.0 };
    Ok(Trace { dt, states, controls })
}
