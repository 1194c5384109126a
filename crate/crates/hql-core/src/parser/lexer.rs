//! Hand-written lexer. Produces SQLite-style tokens plus `{{` / `}}`
//! ingredient delimiters, tracking byte spans for error reporting.

use super::ast::Span;
use crate::error::SyntaxError;

#[derive(Debug, Clone, PartialEq)]
pub enum Tok {
    /// Bare word: keyword, identifier, or function name.
    Word(String),
    /// Quoted identifier with its quote character preserved.
    QuotedIdent { value: String, quote: char },
    /// Single-quoted string literal, escapes resolved.
    Str(String),
    /// Numeric literal, verbatim.
    Number(String),
    LParen,
    RParen,
    Comma,
    Dot,
    Semicolon,
    Star,
    Plus,
    Minus,
    Slash,
    Percent,
    Eq,
    EqEq,
    NotEq,
    NotEqAngle,
    Lt,
    Gt,
    LtEq,
    GtEq,
    Concat,
    OpenIngredient,
    CloseIngredient,
}

impl Tok {
    pub fn describe(&self) -> String {
        match self {
            Tok::Word(w) => format!("'{w}'"),
            Tok::QuotedIdent { value, .. } => format!("identifier \"{value}\""),
            Tok::Str(_) => "string literal".to_string(),
            Tok::Number(n) => format!("number {n}"),
            Tok::LParen => "'('".to_string(),
            Tok::RParen => "')'".to_string(),
            Tok::Comma => "','".to_string(),
            Tok::Dot => "'.'".to_string(),
            Tok::Semicolon => "';'".to_string(),
            Tok::Star => "'*'".to_string(),
            Tok::Plus => "'+'".to_string(),
            Tok::Minus => "'-'".to_string(),
            Tok::Slash => "'/'".to_string(),
            Tok::Percent => "'%'".to_string(),
            Tok::Eq => "'='".to_string(),
            Tok::EqEq => "'=='".to_string(),
            Tok::NotEq => "'!='".to_string(),
            Tok::NotEqAngle => "'<>'".to_string(),
            Tok::Lt => "'<'".to_string(),
            Tok::Gt => "'>'".to_string(),
            Tok::LtEq => "'<='".to_string(),
            Tok::GtEq => "'>='".to_string(),
            Tok::Concat => "'||'".to_string(),
            Tok::OpenIngredient => "'{{'".to_string(),
            Tok::CloseIngredient => "'}}'".to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Token {
    pub tok: Tok,
    pub span: Span,
}

pub fn tokenize(input: &str) -> Result<Vec<Token>, SyntaxError> {
    let bytes = input.as_bytes();
    let mut tokens = Vec::new();
    let mut i = 0;

    while i < bytes.len() {
        let start = i;
        let b = bytes[i];

        match b {
            b' ' | b'\t' | b'\r' | b'\n' => {
                i += 1;
            }
            b'-' if bytes.get(i + 1) == Some(&b'-') => {
                while i < bytes.len() && bytes[i] != b'\n' {
                    i += 1;
                }
            }
            b'/' if bytes.get(i + 1) == Some(&b'*') => {
                let mut j = i + 2;
                loop {
                    if j + 1 >= bytes.len() {
                        return Err(SyntaxError::at(
                            "unterminated block comment",
                            input,
                            start,
                        ));
                    }
                    if bytes[j] == b'*' && bytes[j + 1] == b'/' {
                        i = j + 2;
                        break;
                    }
                    j += 1;
                }
            }
            b'{' => {
                if bytes.get(i + 1) == Some(&b'{') {
                    tokens.push(Token {
                        tok: Tok::OpenIngredient,
                        span: Span::new(start, start + 2),
                    });
                    i += 2;
                } else {
                    return Err(SyntaxError::at(
                        "stray '{': function calls use double braces",
                        input,
                        start,
                    ));
                }
            }
            b'}' => {
                if bytes.get(i + 1) == Some(&b'}') {
                    tokens.push(Token {
                        tok: Tok::CloseIngredient,
                        span: Span::new(start, start + 2),
                    });
                    i += 2;
                } else {
                    return Err(SyntaxError::at(
                        "stray '}': function calls use double braces",
                        input,
                        start,
                    ));
                }
            }
            b'\'' => {
                let (value, next) = read_single_quoted(input, i)?;
                tokens.push(Token {
                    tok: Tok::Str(value),
                    span: Span::new(start, next),
                });
                i = next;
            }
            b'"' | b'`' => {
                let quote = b as char;
                let (value, next) = read_quoted_ident(input, i, quote)?;
                tokens.push(Token {
                    tok: Tok::QuotedIdent { value, quote },
                    span: Span::new(start, next),
                });
                i = next;
            }
            b'[' => {
                let mut j = i + 1;
                while j < bytes.len() && bytes[j] != b']' {
                    j += 1;
                }
                if j >= bytes.len() {
                    return Err(SyntaxError::at("unterminated '[' identifier", input, start));
                }
                tokens.push(Token {
                    tok: Tok::QuotedIdent {
                        value: input[i + 1..j].to_string(),
                        quote: '[',
                    },
                    span: Span::new(start, j + 1),
                });
                i = j + 1;
            }
            b'(' => {
                tokens.push(Token { tok: Tok::LParen, span: Span::new(start, start + 1) });
                i += 1;
            }
            b')' => {
                tokens.push(Token { tok: Tok::RParen, span: Span::new(start, start + 1) });
                i += 1;
            }
            b',' => {
                tokens.push(Token { tok: Tok::Comma, span: Span::new(start, start + 1) });
                i += 1;
            }
            b';' => {
                tokens.push(Token { tok: Tok::Semicolon, span: Span::new(start, start + 1) });
                i += 1;
            }
            b'.' => {
                if bytes.get(i + 1).is_some_and(|c| c.is_ascii_digit()) {
                    let (num, next) = read_number(input, i);
                    tokens.push(Token { tok: Tok::Number(num), span: Span::new(start, next) });
                    i = next;
                } else {
                    tokens.push(Token { tok: Tok::Dot, span: Span::new(start, start + 1) });
                    i += 1;
                }
            }
            b'*' => {
                tokens.push(Token { tok: Tok::Star, span: Span::new(start, start + 1) });
                i += 1;
            }
            b'+' => {
                tokens.push(Token { tok: Tok::Plus, span: Span::new(start, start + 1) });
                i += 1;
            }
            b'-' => {
                tokens.push(Token { tok: Tok::Minus, span: Span::new(start, start + 1) });
                i += 1;
            }
            b'/' => {
                tokens.push(Token { tok: Tok::Slash, span: Span::new(start, start + 1) });
                i += 1;
            }
            b'%' => {
                tokens.push(Token { tok: Tok::Percent, span: Span::new(start, start + 1) });
                i += 1;
            }
            b'=' => {
                if bytes.get(i + 1) == Some(&b'=') {
                    tokens.push(Token { tok: Tok::EqEq, span: Span::new(start, start + 2) });
                    i += 2;
                } else {
                    tokens.push(Token { tok: Tok::Eq, span: Span::new(start, start + 1) });
                    i += 1;
                }
            }
            b'!' => {
                if bytes.get(i + 1) == Some(&b'=') {
                    tokens.push(Token { tok: Tok::NotEq, span: Span::new(start, start + 2) });
                    i += 2;
                } else {
                    return Err(SyntaxError::at("unexpected '!'", input, start));
                }
            }
            b'<' => match bytes.get(i + 1) {
                Some(&b'=') => {
                    tokens.push(Token { tok: Tok::LtEq, span: Span::new(start, start + 2) });
                    i += 2;
                }
                Some(&b'>') => {
                    tokens.push(Token { tok: Tok::NotEqAngle, span: Span::new(start, start + 2) });
                    i += 2;
                }
                _ => {
                    tokens.push(Token { tok: Tok::Lt, span: Span::new(start, start + 1) });
                    i += 1;
                }
            },
            b'>' => {
                if bytes.get(i + 1) == Some(&b'=') {
                    tokens.push(Token { tok: Tok::GtEq, span: Span::new(start, start + 2) });
                    i += 2;
                } else {
                    tokens.push(Token { tok: Tok::Gt, span: Span::new(start, start + 1) });
                    i += 1;
                }
            }
            b'|' => {
                if bytes.get(i + 1) == Some(&b'|') {
                    tokens.push(Token { tok: Tok::Concat, span: Span::new(start, start + 2) });
                    i += 2;
                } else {
                    return Err(SyntaxError::at("unexpected '|'", input, start));
                }
            }
            c if c.is_ascii_digit() => {
                let (num, next) = read_number(input, i);
                tokens.push(Token { tok: Tok::Number(num), span: Span::new(start, next) });
                i = next;
            }
            c if c.is_ascii_alphabetic() || c == b'_' => {
                let mut j = i + 1;
                while j < bytes.len()
                    && (bytes[j].is_ascii_alphanumeric() || bytes[j] == b'_' || bytes[j] == b'$')
                {
                    j += 1;
                }
                tokens.push(Token {
                    tok: Tok::Word(input[i..j].to_string()),
                    span: Span::new(start, j),
                });
                i = j;
            }
            _ => {
                let ch = input[i..].chars().next().unwrap_or('?');
                return Err(SyntaxError::at(
                    &format!("unexpected character '{ch}'"),
                    input,
                    start,
                ));
            }
        }
    }

    Ok(tokens)
}

/// Reads a `'...'` literal starting at `start`; `''` is an escaped quote.
fn read_single_quoted(input: &str, start: usize) -> Result<(String, usize), SyntaxError> {
    let bytes = input.as_bytes();
    let mut value = String::new();
    let mut i = start + 1;
    loop {
        if i >= bytes.len() {
            return Err(SyntaxError::at("unterminated string literal", input, start));
        }
        if bytes[i] == b'\'' {
            if bytes.get(i + 1) == Some(&b'\'') {
                value.push('\'');
                i += 2;
            } else {
                return Ok((value, i + 1));
            }
        } else {
            // Advance over one UTF-8 character.
            let ch_len = utf8_len(bytes[i]);
            value.push_str(&input[i..i + ch_len]);
            i += ch_len;
        }
    }
}

/// Reads a `"..."` or `` `...` `` identifier; doubling escapes the quote.
fn read_quoted_ident(input: &str, start: usize, quote: char) -> Result<(String, usize), SyntaxError> {
    let q = quote as u8;
    let bytes = input.as_bytes();
    let mut value = String::new();
    let mut i = start + 1;
    loop {
        if i >= bytes.len() {
            return Err(SyntaxError::at("unterminated quoted identifier", input, start));
        }
        if bytes[i] == q {
            if bytes.get(i + 1) == Some(&q) {
                value.push(quote);
                i += 2;
            } else {
                return Ok((value, i + 1));
            }
        } else {
            let ch_len = utf8_len(bytes[i]);
            value.push_str(&input[i..i + ch_len]);
            i += ch_len;
        }
    }
}

/// Reads an integer, decimal, or exponent-form number starting at `start`.
fn read_number(input: &str, start: usize) -> (String, usize) {
    let bytes = input.as_bytes();
    let mut i = start;
    while i < bytes.len() && bytes[i].is_ascii_digit() {
        i += 1;
    }
    if i < bytes.len() && bytes[i] == b'.' {
        i += 1;
        while i < bytes.len() && bytes[i].is_ascii_digit() {
            i += 1;
        }
    }
    if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
        let mut j = i + 1;
        if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
            j += 1;
        }
        if j < bytes.len() && bytes[j].is_ascii_digit() {
            while j < bytes.len() && bytes[j].is_ascii_digit() {
                j += 1;
            }
            i = j;
        }
    }
    (input[start..i].to_string(), i)
}

fn utf8_len(first_byte: u8) -> usize {
    match first_byte {
        b if b < 0x80 => 1,
        b if b >> 5 == 0b110 => 2,
        b if b >> 4 == 0b1110 => 3,
        _ => 4,
    }
}
