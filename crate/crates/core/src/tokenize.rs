//! Whitespace tokenization with punctuation detachment.

use crate::error::{Error, Result};
use crate::types::{TokenizedInput, Unit, UnitKind};

/// Characters split off the edges of whitespace-delimited chunks.
pub const PUNCTUATION: &[char] = &['.', ',', '!', '?', ';', ':', '\'', '"', '(', ')'];

fn is_punct(c: char) -> bool {
    PUNCTUATION.contains(&c)
}

pub(crate) fn classify_surface(s: &str) -> UnitKind {
    if !s.is_empty() && s.chars().all(is_punct) {
        UnitKind::Punctuation
    } else {
        UnitKind::Word
    }
}

/// Splits `text` into word and punctuation units.
pub fn tokenize(text: &str) -> Result<TokenizedInput> {
    tokenize_with_id("", text)
}

pub fn tokenize_with_id(id: impl Into<String>, text: &str) -> Result<TokenizedInput> {
    if text.trim().is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut spans: Vec<(usize, usize)> = Vec::new();
    let mut chunk_start: Option<usize> = None;
    for (i, c) in text.char_indices().chain(std::iter::once((text.len(), ' '))) {
        match (c.is_whitespace(), chunk_start) {
            (true, Some(start)) => {
                split_chunk(text, start, i, &mut spans);
                chunk_start = None;
            }
            (false, None) => chunk_start = Some(i),
            _ => {}
        }
    }

    let mut units = Vec::with_capacity(spans.len());
    let mut spacing = Vec::with_capacity(spans.len() + 1);
    let mut prev_end = 0;
    for (start, end) in spans {
        spacing.push(text[prev_end..start].to_string());
        let surface = &text[start..end];
        units.push(Unit {
            surface: surface.to_string(),
            kind: classify_surface(surface),
            span: start..end,
        });
        prev_end = end;
    }
    spacing.push(text[prev_end..].to_string());

    Ok(TokenizedInput {
        id: id.into(),
        text: text.to_string(),
        units,
        spacing,
        gold_label: None,
    })
}

/// Peels punctuation off both ends of `text[start..end]`, one mark per unit.
fn split_chunk(text: &str, start: usize, end: usize, out: &mut Vec<(usize, usize)>) {
    let chunk = &text[start..end];
    let mut lead = Vec::new();
    let mut body_start = start;
    for (i, c) in chunk.char_indices() {
        if !is_punct(c) {
            break;
        }
        lead.push((start + i, start + i + c.len_utf8()));
        body_start = start + i + c.len_utf8();
    }
    out.extend(lead);
    if body_start == end {
        return;
    }

    let mut trail = Vec::new();
    let mut body_end = end;
    for (i, c) in text[body_start..end].char_indices().rev() {
        if !is_punct(c) {
            break;
        }
        trail.push((body_start + i, body_start + i + c.len_utf8()));
        body_end = body_start + i;
    }
    out.push((body_start, body_end));
    out.extend(trail.into_iter().rev());
}
