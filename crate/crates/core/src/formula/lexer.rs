use alloc::string::String;
use alloc::vec::Vec;

use super::parser::ParseError;
use crate::value::ErrorCode;

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Tok {
    Number(f64),
    Str(String),
    /// Identifier-like word: function name, cell ref, name, TRUE/FALSE.
    Word(String),
    /// `'quoted sheet'`
    QuotedSheet(String),
    Error(ErrorCode),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    Amp,
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
    LParen,
    RParen,
    Comma,
    Colon,
    Bang,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Token {
    pub tok: Tok,
    pub offset: usize,
}

fn is_word_start(c: char) -> bool {
    c.is_ascii_alphabetic() || c == '_' || c == '$'
}

fn is_word_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_' || c == '.' || c == '$'
}

/// Tokenizes formula text (without the leading `=`). Offsets are byte
/// offsets into the full formula source, `=` included.
pub(crate) fn tokenize(src: &str, base: usize) -> Result<Vec<Token>, ParseError> {
    let mut out = Vec::new();
    let bytes = src.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        let c = src[i..].chars().next().unwrap_or('\0');
        let start = i;
        let push = |out: &mut Vec<Token>, tok| {
            out.push(Token {
                tok,
                offset: base + start,
            })
        };
        match c {
            ' ' | '\t' | '\r' | '\n' => {
                i += 1;
                continue;
            }
            '0'..='9' | '.' => {
                let mut j = i;
                while j < bytes.len() && bytes[j].is_ascii_digit() {
                    j += 1;
                }
                if j < bytes.len() && bytes[j] == b'.' {
                    j += 1;
                    while j < bytes.len() && bytes[j].is_ascii_digit() {
                        j += 1;
                    }
                }
                if j < bytes.len() && (bytes[j] == b'e' || bytes[j] == b'E') {
                    let mut k = j + 1;
                    if k < bytes.len() && (bytes[k] == b'+' || bytes[k] == b'-') {
                        k += 1;
                    }
                    if k < bytes.len() && bytes[k].is_ascii_digit() {
                        while k < bytes.len() && bytes[k].is_ascii_digit() {
                            k += 1;
                        }
                        j = k;
                    }
                }
                let text = &src[i..j];
                let value: f64 = text
                    .parse()
                    .map_err(|_| ParseError::new(base + i, "malformed number"))?;
                if !value.is_finite() {
                    return Err(ParseError::new(base + i, "number out of range"));
                }
                push(&mut out, Tok::Number(value));
                i = j;
            }
            '"' => {
                let mut s = String::new();
                let mut j = i + 1;
                loop {
                    match src[j..].chars().next() {
                        None => return Err(ParseError::new(base + i, "unterminated string")),
                        Some('"') if src[j + 1..].starts_with('"') => {
                            s.push('"');
                            j += 2;
                        }
                        Some('"') => {
                            j += 1;
                            break;
                        }
                        Some(ch) => {
                            s.push(ch);
                            j += ch.len_utf8();
                        }
                    }
                }
                push(&mut out, Tok::Str(s));
                i = j;
            }
            '\'' => {
                let mut s = String::new();
                let mut j = i + 1;
                loop {
                    match src[j..].chars().next() {
                        None => return Err(ParseError::new(base + i, "unterminated sheet name")),
                        Some('\'') if src[j + 1..].starts_with('\'') => {
                            s.push('\'');
                            j += 2;
                        }
                        Some('\'') => {
                            j += 1;
                            break;
                        }
                        Some(ch) => {
                            s.push(ch);
                            j += ch.len_utf8();
                        }
                    }
                }
                push(&mut out, Tok::QuotedSheet(s));
                i = j;
            }
            '#' => {
                let code = ErrorCode::ALL
                    .into_iter()
                    .find(|code| {
                        let lit = code.as_str();
                        src.len() >= i + lit.len()
                            && src.is_char_boundary(i + lit.len())
                            && src[i..i + lit.len()].eq_ignore_ascii_case(lit)
                    })
                    .ok_or_else(|| ParseError::new(base + i, "unknown error literal"))?;
                push(&mut out, Tok::Error(code));
                i += code.as_str().len();
            }
            c if is_word_start(c) => {
                let mut j = i;
                while let Some(ch) = src[j..].chars().next() {
                    if !is_word_char(ch) {
                        break;
                    }
                    j += ch.len_utf8();
                }
                push(&mut out, Tok::Word(String::from(&src[i..j])));
                i = j;
            }
            _ => {
                let two = src.get(i..i + 2).unwrap_or("");
                let (tok, len) = match (c, two) {
                    (_, "<>") => (Tok::Ne, 2),
                    (_, "<=") => (Tok::Le, 2),
                    (_, ">=") => (Tok::Ge, 2),
                    ('+', _) => (Tok::Plus, 1),
                    ('-', _) => (Tok::Minus, 1),
                    ('*', _) => (Tok::Star, 1),
                    ('/', _) => (Tok::Slash, 1),
                    ('^', _) => (Tok::Caret, 1),
                    ('&', _) => (Tok::Amp, 1),
                    ('=', _) => (Tok::Eq, 1),
                    ('<', _) => (Tok::Lt, 1),
                    ('>', _) => (Tok::Gt, 1),
                    ('(', _) => (Tok::LParen, 1),
                    (')', _) => (Tok::RParen, 1),
                    (',', _) => (Tok::Comma, 1),
                    (':', _) => (Tok::Colon, 1),
                    ('!', _) => (Tok::Bang, 1),
                    _ => return Err(ParseError::new(base + i, "unexpected character")),
                };
                push(&mut out, tok);
                i += len;
            }
        }
    }
    Ok(out)
}
