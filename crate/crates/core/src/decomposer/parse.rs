//! Structural extraction of a list of quoted strings from free-form model output.
//! Model output is never evaluated.

use std::iter::Peekable;
use std::str::CharIndices;

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
#[error("no list of quoted strings found in model output")]
pub struct ParseError {
    pub raw: String,
}

/// Returns the first `[...]` list of single- or double-quoted strings in `raw`.
/// Surrounding prose and code fences are ignored; string contents are kept as-is
/// apart from backslash escapes.
pub fn parse_subquestions(raw: &str) -> Result<Vec<String>, ParseError> {
    raw.char_indices()
        .filter(|&(_, c)| c == '[')
        .find_map(|(i, _)| parse_list(&raw[i..]))
        .ok_or_else(|| ParseError { raw: raw.to_string() })
}

type Cursor<'a> = Peekable<CharIndices<'a>>;

fn skip_ws(it: &mut Cursor<'_>) {
    while it.next_if(|&(_, c)| c.is_whitespace()).is_some() {}
}

fn parse_list(s: &str) -> Option<Vec<String>> {
    let mut it = s.char_indices().peekable();
    it.next_if(|&(_, c)| c == '[')?;
    let mut items = Vec::new();
    skip_ws(&mut it);
    if it.next_if(|&(_, c)| c == ']').is_some() {
        return Some(items);
    }
    loop {
        skip_ws(&mut it);
        let (_, quote) = it.next_if(|&(_, c)| c == '"' || c == '\'')?;
        items.push(parse_string(&mut it, quote)?);
        skip_ws(&mut it);
        match it.next()?.1 {
            ']' => return Some(items),
            ',' => {
                skip_ws(&mut it);
                if it.next_if(|&(_, c)| c == ']').is_some() {
                    return Some(items);
                }
            }
            _ => return None,
        }
    }
}

fn parse_string(it: &mut Cursor<'_>, quote: char) -> Option<String> {
    let mut out = String::new();
    loop {
        let (_, c) = it.next()?;
        match c {
            c if c == quote => return Some(out),
            '\n' => return None,
            '\\' => {
                let (_, e) = it.next()?;
                match e {
                    'n' => out.push('\n'),
                    't' => out.push('\t'),
                    'r' => out.push('\r'),
                    '\\' | '\'' | '"' => out.push(e),
                    other => {
                        out.push('\\');
                        out.push(other);
                    }
                }
            }
            c => out.push(c),
        }
    }
}
