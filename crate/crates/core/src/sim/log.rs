use std::fmt;

use serde::Serialize;

use super::VirtualTime;

/// One line of the append-only run log.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct LogRecord {
    pub t: VirtualTime,
    pub module: &'static str,
    pub event: String,
    pub details: String,
}

impl fmt::Display for LogRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} | {} | {} | {}",
            self.t, self.module, self.event, self.details
        )
    }
}

#[derive(Clone, Debug, Default)]
pub struct EventLog {
    records: Vec<LogRecord>,
}

impl EventLog {
    pub fn push(
        &mut self,
        t: VirtualTime,
        module: &'static str,
        event: impl Into<String>,
        details: impl Into<String>,
    ) {
        self.records.push(LogRecord {
            t,
            module,
            event: event.into(),
            details: details.into(),
        });
    }

    pub fn records(&self) -> &[LogRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn since(&self, index: usize) -> &[LogRecord] {
        &self.records[index.min(self.records.len())..]
    }

    /// Line-oriented rendering, one record per line.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&r.to_string());
            out.push('\n');
        }
        out
    }

    pub fn count(&self, module: &str, event: &str) -> usize {
        self.records
            .iter()
            .filter(|r| r.module == module && r.event == event)
            .count()
    }
}
