//! Cue-format subtitle parsing.
//!
//! A cue is a blank-line separated block: an optional numeric index line, an
//! optional `HH:MM:SS,mmm --> HH:MM:SS,mmm` timing line, then text lines.

use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubtitleLine {
    pub doc_id: String,
    /// 0-based position among the lines kept from the file.
    pub index: usize,
    pub start_ms: Option<u64>,
    pub end_ms: Option<u64>,
    pub text: String,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParsedSubtitles {
    pub lines: Vec<SubtitleLine>,
    /// Cues dropped because their timing line could not be parsed.
    pub skipped: usize,
}

fn markup() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"</?[A-Za-z][^>]*>|\{\\[^}]*\}").unwrap())
}

fn is_timing_line(line: &str) -> bool {
    line.contains("-->") || line.contains('→')
}

/// Parses `HH:MM:SS,mmm` (a `.` millisecond separator is also accepted).
pub fn parse_timestamp(s: &str) -> Option<u64> {
    let s = s.trim();
    let (hms, ms) = s.split_once([',', '.'])?;
    let mut parts = hms.split(':');
    let (h, m, sec) = (parts.next()?, parts.next()?, parts.next()?);
    if parts.next().is_some() || ms.len() != 3 {
        return None;
    }
    let num = |p: &str| -> Option<u64> {
        if p.is_empty() || !p.bytes().all(|b| b.is_ascii_digit()) {
            None
        } else {
            p.parse().ok()
        }
    };
    let (h, m, sec, ms) = (num(h)?, num(m)?, num(sec)?, num(ms)?);
    if m >= 60 || sec >= 60 {
        return None;
    }
    Some(((h * 60 + m) * 60 + sec) * 1000 + ms)
}

pub fn format_timestamp(ms: u64) -> String {
    let (h, rest) = (ms / 3_600_000, ms % 3_600_000);
    let (m, rest) = (rest / 60_000, rest % 60_000);
    let (s, ms) = (rest / 1000, rest % 1000);
    format!("{h:02}:{m:02}:{s:02},{ms:03}")
}

fn parse_timing(line: &str) -> std::result::Result<(u64, u64), String> {
    let (a, b) = line
        .split_once("-->")
        .or_else(|| line.split_once('→'))
        .ok_or_else(|| "missing arrow".to_string())?;
    // Anything after the end timestamp (cue position settings) is ignored.
    let b = b.split_whitespace().next().unwrap_or("");
    let start = parse_timestamp(a).ok_or_else(|| format!("bad start timestamp `{}`", a.trim()))?;
    let end = parse_timestamp(b).ok_or_else(|| format!("bad end timestamp `{b}`"))?;
    if start > end {
        return Err(format!("start {start} ms after end {end} ms"));
    }
    Ok((start, end))
}

/// Strips formatting tags and collapses whitespace.
pub fn clean_cue_text(text: &str) -> String {
    let stripped = markup().replace_all(text, "");
    stripped.split_whitespace().collect::<Vec<_>>().join(" ")
}

pub fn parse_subtitle_file(raw: &[u8], doc_id: &str) -> Result<ParsedSubtitles> {
    let text = String::from_utf8_lossy(raw);
    let text = text.trim_start_matches('\u{feff}');
    let mut out = ParsedSubtitles::default();
    let mut first_bad: Option<(usize, String)> = None;
    let mut cue_no = 0usize;

    let mut block: Vec<&str> = Vec::new();
    let mut lines = text.lines().map(|l| l.trim_end_matches('\r')).peekable();
    loop {
        let next = lines.next();
        match next {
            Some(l) if !l.trim().is_empty() => {
                block.push(l);
                continue;
            }
            _ => {}
        }
        if !block.is_empty() {
            cue_no += 1;
            let mut rest = &block[..];
            if rest.len() > 1 && rest[0].trim().bytes().all(|b| b.is_ascii_digit()) {
                rest = &rest[1..];
            } else if rest.len() == 1
                && rest[0].trim().bytes().all(|b| b.is_ascii_digit())
            {
                rest = &[];
            }
            let mut timing = None;
            let mut bad = false;
            if let Some(first) = rest.first() {
                if is_timing_line(first) {
                    match parse_timing(first) {
                        Ok(t) => timing = Some(t),
                        Err(reason) => {
                            out.skipped += 1;
                            first_bad.get_or_insert((cue_no, reason));
                            bad = true;
                        }
                    }
                    rest = &rest[1..];
                }
            }
            if !bad {
                let joined = clean_cue_text(&rest.join(" "));
                if !joined.is_empty() {
                    out.lines.push(SubtitleLine {
                        doc_id: doc_id.to_string(),
                        index: out.lines.len(),
                        start_ms: timing.map(|t| t.0),
                        end_ms: timing.map(|t| t.1),
                        text: joined,
                    });
                }
            }
            block.clear();
        }
        if next.is_none() {
            break;
        }
    }

    if out.lines.is_empty() {
        if let Some((cue, reason)) = first_bad {
            return Err(Error::SubtitleParse {
                doc_id: doc_id.to_string(),
                cue,
                reason,
            });
        }
    }
    Ok(out)
}

/// Canonical cue serialisation; a line without both timestamps is written
/// without a timing line.
pub fn write_cues(lines: &[SubtitleLine]) -> String {
    let mut s = String::new();
    for (i, line) in lines.iter().enumerate() {
        s.push_str(&format!("{}\n", i + 1));
        if let (Some(a), Some(b)) = (line.start_ms, line.end_ms) {
            s.push_str(&format!("{} --> {}\n", format_timestamp(a), format_timestamp(b)));
        }
        s.push_str(&line.text);
        s.push_str("\n\n");
    }
    s
}
