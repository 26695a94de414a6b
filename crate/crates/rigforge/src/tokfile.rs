//! Token files: a header naming the ordering, then one corpus line.

use std::path::Path;

use rigforge_core::sequencer::{Ordering, TokenSequence};

use crate::error::{Error, Result};
use crate::fsio::{read_string, write_atomic};

pub const TOKENS_VERSION: u32 = 1;
const MAGIC: &str = "rigforge-tokens";

pub fn emit_tokens(seq: &TokenSequence) -> String {
    format!("{MAGIC} {TOKENS_VERSION} {}\n{}\n", seq.ordering, seq.to_line())
}

/// Reads a token file. A bare corpus line without header is accepted and
/// takes `default_ordering`.
pub fn parse_tokens(text: &str, default_ordering: Ordering, context: &str) -> Result<TokenSequence> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let first = lines.next().ok_or_else(|| Error::parse(context, 1, "empty token file"))?;
    let header: Vec<&str> = first.split_whitespace().collect();
    if header.first() != Some(&MAGIC) {
        if lines.next().is_some() {
            return Err(Error::parse(context, 2, "expected a single token line"));
        }
        return Ok(TokenSequence::parse_line(first, default_ordering)?);
    }
    if header.len() != 3 {
        return Err(Error::parse(context, 1, "bad token header"));
    }
    let version: u32 = header[1].parse().map_err(|_| Error::parse(context, 1, "bad version"))?;
    crate::rigfile::check_version(version, TOKENS_VERSION, "token file")?;
    let ordering: Ordering = header[2].parse()?;
    let line = lines.next().unwrap_or("");
    if lines.next().is_some() {
        return Err(Error::parse(context, 3, "expected a single token line"));
    }
    Ok(TokenSequence::parse_line(line, ordering)?)
}

pub fn read_tokens(path: &Path, default_ordering: Ordering) -> Result<TokenSequence> {
    parse_tokens(&read_string(path)?, default_ordering, &path.display().to_string())
}

pub fn write_tokens(path: &Path, seq: &TokenSequence) -> Result<()> {
    write_atomic(path, emit_tokens(seq).as_bytes())
}
