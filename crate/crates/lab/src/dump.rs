//! Debug dumps of a finished learner run.
//!
//! * `buffer.csv`: one stored transition per row, oldest first, with columns
//!   `s,a,r,s_next,done,censored,trajectory_id,step_index,distance_to_end`
//!   (`distance_to_end` is empty while its episode is still open).
//! * `q.csv`, `delta.csv`, `kappa.csv`: one `(s, a, value)` row per legal pair.

use std::io::Write;
use std::path::Path;

use remer_core::learner::QlTrace;
use remer_core::replay::ReplayBuffer;
use remer_core::ActionLayout;

use crate::error::{LabError, Result};

pub fn write_buffer<W: Write>(out: W, buffer: &ReplayBuffer) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "s",
        "a",
        "r",
        "s_next",
        "done",
        "censored",
        "trajectory_id",
        "step_index",
        "distance_to_end",
    ])?;
    for t in buffer.iter_chronological() {
        w.write_record([
            t.s.to_string(),
            t.a.to_string(),
            t.r.to_string(),
            t.s_next.to_string(),
            t.done.to_string(),
            t.censored.to_string(),
            t.trajectory_id.to_string(),
            t.step_index.to_string(),
            t.distance_to_end.map(|h| h.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn write_table<W: Write>(out: W, layout: &ActionLayout, value: impl Fn(usize, usize) -> f64) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["s", "a", "value"])?;
    for (s, a, _) in layout.pairs() {
        w.write_record([s.to_string(), a.to_string(), value(s, a).to_string()])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Writes all four dumps of `trace` into `dir`.
pub fn dump_run(trace: &QlTrace, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| LabError::io(dir, e))?;
    let create = |name: &str| -> Result<std::io::BufWriter<std::fs::File>> {
        let path = dir.join(name);
        let f = std::fs::File::create(&path).map_err(|e| LabError::io(&path, e))?;
        Ok(std::io::BufWriter::new(f))
    };
    let layout = trace.q.layout();
    write_buffer(create("buffer.csv")?, &trace.buffer)?;
    write_table(create("q.csv")?, layout, |s, a| trace.q.get(s, a))?;
    write_table(create("delta.csv")?, layout, |s, a| trace.delta.get(s, a))?;
    write_table(create("kappa.csv")?, layout, |s, a| trace.kappa.kappa(s, a))?;
    Ok(())
}
