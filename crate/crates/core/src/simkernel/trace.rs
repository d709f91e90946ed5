use std::io::{self, Write};

use crate::protocol::StationId;
use crate::time::SimTime;

/// Line-oriented event trace:
/// `time<TAB>station<TAB>event_kind<TAB>seq<TAB>attempt<TAB>detail`.
pub struct TraceSink {
    out: Box<dyn Write + Send>,
}

impl TraceSink {
    pub fn new(out: Box<dyn Write + Send>) -> Self {
        TraceSink { out }
    }

    pub fn record(
        &mut self,
        time: SimTime,
        station: StationId,
        kind: &str,
        seq: u64,
        attempt: u32,
        detail: &str,
    ) -> io::Result<()> {
        writeln!(
            self.out,
            "{time}\t{station}\t{kind}\t{seq}\t{attempt}\t{detail}"
        )
    }

    pub fn flush(&mut self) -> io::Result<()> {
        self.out.flush()
    }
}

impl std::fmt::Debug for TraceSink {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("TraceSink")
    }
}
