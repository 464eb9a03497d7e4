use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{SimObserver, World};

/// One JSON-lines trace record: a vehicle's state at the end of second `t`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub t: u64,
    pub vehicle: u64,
    pub segment: String,
    pub cell: u32,
    pub speed: u32,
}

/// Writes one [`TraceRecord`] per live vehicle per step.
pub struct TraceWriter<W: Write> {
    out: W,
    error: Option<std::io::Error>,
}

impl<W: Write> TraceWriter<W> {
    pub fn new(out: W) -> Self {
        Self { out, error: None }
    }

    pub fn finish(mut self) -> std::io::Result<W> {
        if let Some(e) = self.error.take() {
            return Err(e);
        }
        self.out.flush()?;
        Ok(self.out)
    }
}

impl<W: Write> SimObserver for TraceWriter<W> {
    fn on_step_end(&mut self, t: u64, world: &World<'_>) {
        if self.error.is_some() {
            return;
        }
        let mut vs: Vec<_> = world.vehicles().collect();
        vs.sort_by_key(|v| v.id);
        for v in vs {
            let rec = TraceRecord {
                t,
                vehicle: v.id,
                segment: world.simulator().segment_id(v.segment).to_string(),
                cell: v.cell,
                speed: v.speed,
            };
            let line = serde_json::to_string(&rec).expect("record serializes");
            if let Err(e) = writeln!(self.out, "{line}") {
                self.error = Some(e);
                return;
            }
        }
    }
}
