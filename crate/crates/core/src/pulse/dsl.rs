//! Line-oriented pulse-sequence language.
//!
//! ```text
//! # spin T1: initialise on D1, wait, read on D2
//! duration 3ms
//! rise_fall 60ns
//! extinction 60dB
//! channel init laser D1 sat 0.03 linewidth 94MHz
//! channel read laser D2 sat 10 linewidth 94MHz detuning 0Hz
//! pulse init 0 1ms
//! gap 1ms
//! pulse read 1ms 3ms
//! record 1ms 3ms
//! ```
//!
//! Statements end at a newline or `;`. `#` starts a comment.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::rate_engine::{Laser, DEFAULT_LINEWIDTH};
use crate::units::{parse_quantity, Dimension};

use super::sequence::{PulseChannel, PulseSequence};

struct Token<'a> {
    text: &'a str,
    column: usize,
}

fn tokens(line: &str) -> Vec<Token<'_>> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, ch) in line.char_indices() {
        if ch.is_whitespace() {
            if let Some(s) = start.take() {
                out.push(Token { text: &line[s..i], column: line[..s].chars().count() + 1 });
            }
        } else if start.is_none() {
            start = Some(i);
        }
    }
    if let Some(s) = start {
        out.push(Token { text: &line[s..], column: line[..s].chars().count() + 1 });
    }
    out
}

fn err(line: usize, column: usize, message: impl Into<String>) -> Error {
    Error::Parse { line, column, message: message.into() }
}

/// `[A-D][1-4][+-]?` or a bare line letter.
pub fn is_valid_label(label: &str) -> bool {
    let b = label.as_bytes();
    let line_ok = |c: u8| (b'A'..=b'D').contains(&c);
    match b.len() {
        1 => line_ok(b[0]),
        2 => line_ok(b[0]) && (b'1'..=b'4').contains(&b[1]),
        3 => line_ok(b[0]) && (b'1'..=b'4').contains(&b[1]) && (b[2] == b'+' || b[2] == b'-'),
        _ => false,
    }
}

fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

pub fn parse_sequence(text: &str) -> Result<PulseSequence> {
    let mut seq = PulseSequence::new(0.0);
    let mut duration: Option<f64> = None;
    // Line of each pulse, for error messages after parsing.
    let mut pulse_lines: Vec<(String, f64, f64, usize)> = Vec::new();

    for (ln, raw) in text.lines().enumerate() {
        let line_no = ln + 1;
        let code = raw.split('#').next().unwrap_or("");
        let mut offset = 0;
        for stmt in code.split(';') {
            let stmt_offset = offset;
            offset += stmt.chars().count() + 1;
            let toks = tokens(stmt);
            let Some(head) = toks.first() else { continue };
            let col = |t: &Token| t.column + stmt_offset;
            let arg = |i: usize, what: &str| -> Result<&Token> {
                toks.get(i).ok_or_else(|| err(line_no, col(head), format!("`{}` expects {what}", head.text)))
            };
            let quantity = |t: &Token, dim: Dimension| -> Result<f64> {
                parse_quantity(t.text, dim).map_err(|m| err(line_no, col(t), m))
            };
            let expect_len = |n: usize| -> Result<()> {
                match toks.get(n) {
                    Some(t) => Err(err(line_no, col(t), format!("unexpected token `{}`", t.text))),
                    None => Ok(()),
                }
            };
            match head.text {
                "duration" => {
                    duration = Some(quantity(arg(1, "a time")?, Dimension::Time)?);
                    expect_len(2)?;
                }
                "rise_fall" => {
                    seq.rise_fall_time = quantity(arg(1, "a time")?, Dimension::Time)?;
                    expect_len(2)?;
                }
                "extinction" => {
                    let t = arg(1, "a value in dB")?;
                    seq.extinction_db = quantity(t, Dimension::Decibel)?;
                    if !(seq.extinction_db > 0.0) {
                        return Err(err(line_no, col(t), "extinction must be > 0 dB"));
                    }
                    expect_len(2)?;
                }
                "repeat" => {
                    let t = arg(1, "a count")?;
                    seq.repetitions = t
                        .text
                        .parse()
                        .ok()
                        .filter(|&n: &usize| n >= 1)
                        .ok_or_else(|| err(line_no, col(t), format!("repeat count must be a positive integer, got `{}`", t.text)))?;
                    expect_len(2)?;
                }
                "gap" => {
                    seq.gap_at = Some(quantity(arg(1, "a time")?, Dimension::Time)?);
                    expect_len(2)?;
                }
                "record" => {
                    let a = quantity(arg(1, "start and end times")?, Dimension::Time)?;
                    let b = quantity(arg(2, "start and end times")?, Dimension::Time)?;
                    if b <= a {
                        return Err(err(line_no, col(&toks[2]), format!("record end before start, line {line_no}")));
                    }
                    seq.record = Some((a, b));
                    expect_len(3)?;
                }
                "channel" => {
                    let name = arg(1, "a name")?;
                    if !is_identifier(name.text) {
                        return Err(err(line_no, col(name), format!("invalid channel name `{}`", name.text)));
                    }
                    if seq.channel(name.text).is_some() {
                        return Err(err(line_no, col(name), format!("channel {} defined twice", name.text)));
                    }
                    let mut laser: Option<String> = None;
                    let mut sat: Option<f64> = None;
                    let mut width = DEFAULT_LINEWIDTH;
                    let mut detuning = 0.0;
                    let mut i = 2;
                    while i < toks.len() {
                        let key = &toks[i];
                        let val = toks.get(i + 1).ok_or_else(|| err(line_no, col(key), format!("`{}` needs a value", key.text)))?;
                        match key.text {
                            "laser" => {
                                if !is_valid_label(val.text) {
                                    return Err(err(line_no, col(val), format!("unknown laser label `{}`", val.text)));
                                }
                                laser = Some(val.text.to_string());
                            }
                            "sat" => {
                                sat = Some(
                                    quantity(val, Dimension::Dimensionless)
                                        .ok()
                                        .filter(|v| *v >= 0.0)
                                        .ok_or_else(|| err(line_no, col(val), format!("invalid saturation `{}`", val.text)))?,
                                );
                            }
                            "linewidth" => {
                                width = quantity(val, Dimension::Frequency)?;
                                if !(width > 0.0) {
                                    return Err(err(line_no, col(val), "linewidth must be > 0"));
                                }
                            }
                            "detuning" => detuning = quantity(val, Dimension::Frequency)?,
                            other => return Err(err(line_no, col(key), format!("unknown channel option `{other}`"))),
                        }
                        i += 2;
                    }
                    let laser = laser.ok_or_else(|| err(line_no, col(head), "channel needs `laser <label>`"))?;
                    let sat = sat.ok_or_else(|| err(line_no, col(head), "channel needs `sat <x>`"))?;
                    seq.channels.push(PulseChannel {
                        name: name.text.to_string(),
                        laser: Laser::on(&laser, sat).detuned(detuning).with_linewidth(width),
                        events: Vec::new(),
                    });
                }
                "pulse" => {
                    let name = arg(1, "a channel and two times")?;
                    let on_t = arg(2, "a channel and two times")?;
                    let off_t = arg(3, "a channel and two times")?;
                    expect_len(4)?;
                    if seq.channel(name.text).is_none() {
                        return Err(err(line_no, col(name), format!("unknown channel `{}`", name.text)));
                    }
                    let on = quantity(on_t, Dimension::Time)?;
                    let off = quantity(off_t, Dimension::Time)?;
                    if off <= on {
                        return Err(err(line_no, col(off_t), format!("t_off before t_on, line {line_no}")));
                    }
                    pulse_lines.push((name.text.to_string(), on, off, line_no));
                }
                other => return Err(err(line_no, col(head), format!("unknown statement `{other}`"))),
            }
        }
    }

    for (name, on, off, _) in &pulse_lines {
        let c = seq.channels.iter_mut().find(|c| &c.name == name).expect("checked while parsing");
        c.events.push((*on, *off));
    }
    for c in &mut seq.channels {
        c.events.sort_by(|a, b| a.0.total_cmp(&b.0));
        for w in c.events.windows(2) {
            if w[1].0 < w[0].1 {
                let line = pulse_lines
                    .iter()
                    .find(|(n, on, _, _)| n == &c.name && *on == w[1].0)
                    .map_or(0, |p| p.3);
                return Err(err(
                    line,
                    1,
                    format!("channel {}: pulse [{}, {}] s overlaps pulse [{}, {}] s", c.name, w[1].0, w[1].1, w[0].0, w[0].1),
                ));
            }
        }
    }
    let last = pulse_lines.iter().map(|p| p.2).fold(0.0, f64::max);
    seq.total_duration = duration.unwrap_or(last);
    seq.validate().map_err(|e| match e {
        Error::Config(m) => err(0, 0, m),
        other => other,
    })?;
    Ok(seq)
}

/// Canonical text form; parses back to an equal sequence.
pub fn serialize_sequence(seq: &PulseSequence) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "duration {}s", seq.total_duration);
    let _ = writeln!(s, "repeat {}", seq.repetitions);
    let _ = writeln!(s, "rise_fall {}s", seq.rise_fall_time);
    let _ = writeln!(s, "extinction {}dB", seq.extinction_db);
    if let Some(g) = seq.gap_at {
        let _ = writeln!(s, "gap {g}s");
    }
    if let Some((a, b)) = seq.record {
        let _ = writeln!(s, "record {a}s {b}s");
    }
    for c in &seq.channels {
        let l = &c.laser;
        let _ = writeln!(
            s,
            "channel {} laser {} sat {} linewidth {}Hz detuning {}Hz",
            c.name, l.reference, l.saturation, l.linewidth_fwhm, l.detuning
        );
    }
    for c in &seq.channels {
        for (on, off) in &c.events {
            let _ = writeln!(s, "pulse {} {on}s {off}s", c.name);
        }
    }
    s
}
