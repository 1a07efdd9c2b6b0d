use std::io::Write;
use std::time::Duration;

use serde::Serialize;

pub const REPORT_FORMAT_VERSION: u32 = 1;

#[derive(Serialize)]
pub struct Timing {
    pub wall_seconds: f64,
}

/// Everything except `timing` is a pure function of the flags and inputs.
#[derive(Serialize)]
pub struct RunReport<'a, C: Serialize, P: Serialize> {
    pub format_version: u32,
    pub command: &'static str,
    pub config: &'a C,
    pub seed: Option<u64>,
    pub payload: P,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timing: Option<Timing>,
}

impl<C: Serialize, P: Serialize> RunReport<'_, C, P> {
    pub fn print(&self) -> std::io::Result<()> {
        let mut out = std::io::stdout().lock();
        serde_json::to_writer_pretty(&mut out, self)?;
        out.write_all(b"\n")?;
        out.flush()
    }
}

pub fn timing(enabled: bool, elapsed: Duration) -> Option<Timing> {
    enabled.then_some(Timing {
        wall_seconds: elapsed.as_secs_f64(),
    })
}
