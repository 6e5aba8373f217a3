//! Versioned one-line headers for files produced by the pipeline.
//!
//! Every file we write starts with `#artifact <kind> v<version>`. Readers of
//! pipeline-produced formats require the header and reject a kind or version
//! mismatch. Readers of user-supplied formats (knowledge base, surface forms,
//! corpora, lexicons) accept headerless files but still validate a header when
//! one is present.

use crate::error::{Error, Result};
use std::fmt::Display;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

pub const VERSION: u32 = 1;
const PREFIX: &str = "#artifact ";

pub fn header_line(kind: &str) -> String {
    format!("{PREFIX}{kind} v{VERSION}")
}

fn parse_header(line: &str) -> Option<(&str, &str)> {
    let rest = line.strip_prefix(PREFIX)?;
    let mut it = rest.split_whitespace();
    let kind = it.next()?;
    let version = it.next()?;
    Some((kind, version))
}

/// Checks `line` against the expected kind. Returns `true` when the line was a
/// header (and therefore consumed), `false` when the file is headerless.
pub fn validate_header(line: &str, kind: &str, path: impl Display) -> Result<bool> {
    match parse_header(line) {
        Some((k, v)) => {
            if k != kind {
                return Err(Error::parse(
                    path,
                    1,
                    format!("artifact kind mismatch: expected {kind}, found {k}"),
                ));
            }
            let expected = format!("v{VERSION}");
            if v != expected {
                return Err(Error::parse(
                    path,
                    1,
                    format!("unsupported {kind} artifact version {v} (supported: {expected})"),
                ));
            }
            Ok(true)
        }
        None => Ok(false),
    }
}

/// Line-oriented reader that consumes and validates the artifact header
/// before handing out payload lines. Lines are numbered 1-based from the
/// start of the file so parse errors point at the right place.
pub struct ArtifactReader {
    path: String,
    lines: std::io::Lines<BufReader<File>>,
    line_no: usize,
    /// First line held back when a headerless file was opened in non-strict mode.
    pending: Option<String>,
    pub had_header: bool,
}

impl ArtifactReader {
    /// `strict` demands the header (pipeline-produced formats); otherwise the
    /// header is optional (user-supplied formats).
    pub fn open(path: &Path, kind: &str, strict: bool) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut lines = BufReader::new(file).lines();
        let display = path.display().to_string();
        let mut pending = None;
        let mut had_header = false;
        let mut line_no = 0;
        if let Some(first) = lines.next() {
            let first = first.map_err(|e| Error::io(path, e))?;
            if validate_header(&first, kind, &display)? {
                had_header = true;
                line_no = 1;
            } else {
                if strict {
                    return Err(Error::parse(
                        &display,
                        1,
                        format!("missing artifact header (expected `{}`)", header_line(kind)),
                    ));
                }
                pending = Some(first);
            }
        }
        Ok(ArtifactReader { path: display, lines, line_no, pending, had_header })
    }

    pub fn next_line(&mut self) -> Result<Option<(usize, String)>> {
        if let Some(line) = self.pending.take() {
            self.line_no += 1;
            return Ok(Some((self.line_no, line)));
        }
        match self.lines.next() {
            None => Ok(None),
            Some(Ok(line)) => {
                self.line_no += 1;
                Ok(Some((self.line_no, line)))
            }
            Some(Err(e)) => Err(Error::io(&self.path, e)),
        }
    }

    pub fn path(&self) -> &str {
        &self.path
    }

    pub fn err(&self, line: usize, msg: impl Into<String>) -> Error {
        Error::parse(&self.path, line, msg)
    }
}

/// Buffered writer that emits the artifact header before any payload.
pub struct ArtifactWriter {
    path: String,
    out: BufWriter<File>,
}

impl ArtifactWriter {
    pub fn create(path: &Path, kind: &str) -> Result<Self> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        let display = path.display().to_string();
        writeln!(out, "{}", header_line(kind)).map_err(|e| Error::io(path, e))?;
        Ok(ArtifactWriter { path: display, out })
    }

    pub fn line(&mut self, line: impl Display) -> Result<()> {
        writeln!(self.out, "{line}").map_err(|e| Error::io(&self.path, e))
    }

    pub fn finish(mut self) -> Result<()> {
        self.out.flush().map_err(|e| Error::io(&self.path, e))
    }
}
