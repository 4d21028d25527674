//! Text and JSON rendering of command results and failures.

use clap::ValueEnum;
use lakekit::Error;
use serde_json::{json, Value as Json};

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Text,
    Json,
}

/// Result of a command that ran to completion. `exit` is 1 when the
/// command reports diagnostics, a conflict or an aborted run.
pub struct Output {
    pub text: String,
    pub json: Json,
    pub exit: u8,
    /// Extra lines for stderr in text mode.
    pub warnings: Vec<String>,
}

impl Output {
    pub fn ok(text: impl Into<String>, json: Json) -> Self {
        Output {
            text: text.into(),
            json,
            exit: 0,
            warnings: Vec::new(),
        }
    }

    pub fn with_exit(mut self, exit: u8) -> Self {
        self.exit = exit;
        self
    }

    pub fn warn(mut self, w: impl Into<String>) -> Self {
        self.warnings.push(w.into());
        self
    }

    pub fn print(&self, format: Format) {
        match format {
            Format::Text => {
                for w in &self.warnings {
                    eprintln!("warning: {w}");
                }
                print!("{}", self.text);
                if !self.text.is_empty() && !self.text.ends_with('\n') {
                    println!();
                }
            }
            Format::Json => println!("{}", serde_json::to_string_pretty(&self.json).expect("json")),
        }
    }
}

/// A command that could not complete.
#[derive(Debug)]
pub struct Failure {
    pub code: String,
    pub message: String,
    pub exit: u8,
}

impl Failure {
    pub fn usage(code: &str, message: impl Into<String>) -> Self {
        Failure {
            code: code.to_string(),
            message: message.into(),
            exit: 2,
        }
    }

    pub fn new(code: &str, message: impl Into<String>) -> Self {
        Failure {
            code: code.to_string(),
            message: message.into(),
            exit: 1,
        }
    }

    pub fn from_core(e: &Error) -> Self {
        Failure {
            code: e.code().to_string(),
            message: e.to_string(),
            exit: exit_code(e),
        }
    }

    pub fn print(&self, format: Format) {
        eprintln!("error[{}]: {}", self.code, self.message);
        if format == Format::Json {
            let doc = json!({"error": {"code": self.code, "message": self.message}});
            println!("{}", serde_json::to_string_pretty(&doc).expect("json"));
        }
    }
}

/// 2 for errors in what was asked for (names, refs, arguments), 1 for
/// everything the engine refused or failed at.
pub fn exit_code(e: &Error) -> u8 {
    use Error::*;
    match e {
        NotARepository(_)
        | AlreadyInitialized(_)
        | UnknownRef(_)
        | InvalidName { .. }
        | NoSuchTable { .. }
        | UnknownRun(_)
        | UnknownNode(_)
        | InvalidBounds(_)
        | UnknownInvariant(_)
        | TraceParse { .. } => 2,
        _ => 1,
    }
}

/// Left-aligned columns separated by two spaces; trailing padding trimmed.
pub fn text_table(headers: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = headers.iter().map(|h| h.chars().count()).collect();
    for r in rows {
        for (w, cell) in widths.iter_mut().zip(r) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let mut out = String::new();
    let mut line = |cells: Vec<&str>| {
        let mut l = String::new();
        for (i, (c, w)) in cells.iter().zip(&widths).enumerate() {
            if i > 0 {
                l.push_str("  ");
            }
            l.push_str(c);
            l.extend(std::iter::repeat_n(' ', w - c.chars().count()));
        }
        out.push_str(l.trim_end());
        out.push('\n');
    };
    line(headers.to_vec());
    for r in rows {
        line(r.iter().map(String::as_str).collect());
    }
    out
}
