//! Tokenizer for the transformation language.

use std::fmt;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Keyword {
    Select,
    From,
    Where,
    Join,
    On,
    Group,
    By,
    As,
    Cast,
    Is,
    Not,
    Null,
    Sum,
    And,
    True,
    False,
    Timestamp,
}

impl Keyword {
    const ALL: [(Keyword, &'static str); 17] = [
        (Keyword::Select, "select"),
        (Keyword::From, "from"),
        (Keyword::Where, "where"),
        (Keyword::Join, "join"),
        (Keyword::On, "on"),
        (Keyword::Group, "group"),
        (Keyword::By, "by"),
        (Keyword::As, "as"),
        (Keyword::Cast, "cast"),
        (Keyword::Is, "is"),
        (Keyword::Not, "not"),
        (Keyword::Null, "null"),
        (Keyword::Sum, "sum"),
        (Keyword::And, "and"),
        (Keyword::True, "true"),
        (Keyword::False, "false"),
        (Keyword::Timestamp, "timestamp"),
    ];

    pub fn lookup(word: &str) -> Option<Keyword> {
        Keyword::ALL
            .iter()
            .find(|(_, w)| w.eq_ignore_ascii_case(word))
            .map(|(k, _)| *k)
    }

    pub fn as_str(self) -> &'static str {
        Keyword::ALL.iter().find(|(k, _)| *k == self).unwrap().1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Tok {
    Ident(String),
    Kw(Keyword),
    Int(String),
    Float(String),
    Str(String),
    Comma,
    LParen,
    RParen,
    Star,
    Minus,
    Lt,
    Question,
    ColonColon,
    Eof,
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tok::Ident(s) => write!(f, "identifier `{s}`"),
            Tok::Kw(k) => write!(f, "`{}`", k.as_str()),
            Tok::Int(s) | Tok::Float(s) => write!(f, "number `{s}`"),
            Tok::Str(s) => write!(f, "string '{s}'"),
            Tok::Comma => f.write_str("`,`"),
            Tok::LParen => f.write_str("`(`"),
            Tok::RParen => f.write_str("`)`"),
            Tok::Star => f.write_str("`*`"),
            Tok::Minus => f.write_str("`-`"),
            Tok::Lt => f.write_str("`<`"),
            Tok::Question => f.write_str("`?`"),
            Tok::ColonColon => f.write_str("`::`"),
            Tok::Eof => f.write_str("end of input"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Token {
    pub tok: Tok,
    pub line: usize,
    pub col: usize,
}

fn is_word_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_'
}

/// Length in bytes of the longest numeric literal at the start of `s`, and
/// whether it used a fraction or a signed exponent.
fn scan_number(s: &[u8]) -> (usize, bool, bool) {
    let digits = |from: usize| s[from..].iter().take_while(|b| b.is_ascii_digit()).count();
    let mut n = digits(0);
    let mut is_float = false;
    let mut rigid = false;
    if s.get(n) == Some(&b'.') && digits(n + 1) > 0 {
        n += 1 + digits(n + 1);
        is_float = true;
        rigid = true;
    }
    if matches!(s.get(n), Some(b'e' | b'E')) {
        let signed = matches!(s.get(n + 1), Some(b'+' | b'-'));
        let start = n + 1 + signed as usize;
        let d = digits(start);
        if d > 0 {
            n = start + d;
            is_float = true;
            rigid |= signed;
        }
    }
    (n, is_float, rigid)
}

/// True if `word` would lex as a number rather than an identifier.
pub(crate) fn is_numeric_word(word: &str) -> bool {
    let (n, _, _) = scan_number(word.as_bytes());
    n > 0 && n == word.len()
}

pub fn tokenize(src: &str) -> Result<Vec<Token>> {
    let chars: Vec<(usize, char)> = src.char_indices().collect();
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    let (mut line, mut col) = (1usize, 1usize);
    let err = |line, col, expected: &str, found: String| Error::Syntax {
        line,
        col,
        expected: expected.to_string(),
        found,
    };
    while i < chars.len() {
        let (off, c) = chars[i];
        let (tl, tc) = (line, col);
        let advance = |i: &mut usize, n: usize, line: &mut usize, col: &mut usize| {
            for _ in 0..n {
                if chars[*i].1 == '\n' {
                    *line += 1;
                    *col = 1;
                } else {
                    *col += 1;
                }
                *i += 1;
            }
        };
        if c.is_whitespace() {
            advance(&mut i, 1, &mut line, &mut col);
            continue;
        }
        if c == '-' && chars.get(i + 1).map(|p| p.1) == Some('-') {
            while i < chars.len() && chars[i].1 != '\n' {
                advance(&mut i, 1, &mut line, &mut col);
            }
            continue;
        }
        let single = match c {
            ',' => Some(Tok::Comma),
            '(' => Some(Tok::LParen),
            ')' => Some(Tok::RParen),
            '*' => Some(Tok::Star),
            '-' => Some(Tok::Minus),
            '<' => Some(Tok::Lt),
            '?' => Some(Tok::Question),
            _ => None,
        };
        if let Some(tok) = single {
            out.push(Token { tok, line: tl, col: tc });
            advance(&mut i, 1, &mut line, &mut col);
            continue;
        }
        if c == ':' {
            if chars.get(i + 1).map(|p| p.1) == Some(':') {
                out.push(Token {
                    tok: Tok::ColonColon,
                    line: tl,
                    col: tc,
                });
                advance(&mut i, 2, &mut line, &mut col);
                continue;
            }
            return Err(err(tl, tc, "`::`", "`:`".into()));
        }
        if c == '\'' || c == '"' {
            let mut text = String::new();
            let mut j = i + 1;
            loop {
                match chars.get(j) {
                    None => {
                        return Err(err(
                            tl,
                            tc,
                            if c == '\'' { "closing `'`" } else { "closing `\"`" },
                            "end of input".into(),
                        ))
                    }
                    Some(&(_, q)) if q == c => {
                        if chars.get(j + 1).map(|p| p.1) == Some(c) {
                            text.push(c);
                            j += 2;
                        } else {
                            j += 1;
                            break;
                        }
                    }
                    Some(&(_, ch)) => {
                        text.push(ch);
                        j += 1;
                    }
                }
            }
            let tok = if c == '\'' { Tok::Str(text) } else { Tok::Ident(text) };
            out.push(Token { tok, line: tl, col: tc });
            let n = j - i;
            advance(&mut i, n, &mut line, &mut col);
            continue;
        }
        if c.is_ascii_digit() {
            let (n, is_float, rigid) = scan_number(&bytes[off..]);
            let follows_word = bytes.get(off + n).is_some_and(|b| is_word_char(*b as char));
            if !follows_word {
                let text = src[off..off + n].to_string();
                let tok = if is_float { Tok::Float(text) } else { Tok::Int(text) };
                out.push(Token { tok, line: tl, col: tc });
                advance(&mut i, n, &mut line, &mut col);
                continue;
            }
            if rigid {
                return Err(err(
                    tl,
                    tc,
                    "a number or an identifier",
                    format!("`{}`", &src[off..off + n + 1]),
                ));
            }
            // a word that merely starts with digits, e.g. `4_grand`
        }
        if is_word_char(c) {
            let n = bytes[off..].iter().take_while(|b| is_word_char(**b as char)).count();
            let word = &src[off..off + n];
            let tok = match Keyword::lookup(word) {
                Some(k) => Tok::Kw(k),
                None => Tok::Ident(word.to_string()),
            };
            out.push(Token { tok, line: tl, col: tc });
            advance(&mut i, n, &mut line, &mut col);
            continue;
        }
        return Err(err(tl, tc, "a token", format!("`{c}`")));
    }
    out.push(Token {
        tok: Tok::Eof,
        line,
        col,
    });
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<Tok> {
        tokenize(s).unwrap().into_iter().map(|t| t.tok).collect()
    }

    #[test]
    fn digit_led_words_are_identifiers() {
        assert_eq!(toks("4_grand"), vec![Tok::Ident("4_grand".into()), Tok::Eof]);
        assert_eq!(toks("1e"), vec![Tok::Ident("1e".into()), Tok::Eof]);
        assert_eq!(toks("12"), vec![Tok::Int("12".into()), Tok::Eof]);
        assert_eq!(toks("1.5e-3"), vec![Tok::Float("1.5e-3".into()), Tok::Eof]);
        assert!(tokenize("1.5x").is_err());
    }

    #[test]
    fn comments_quotes_and_positions() {
        let t = tokenize("select -- note\n  \"a\"\"b\", 'it''s'").unwrap();
        assert_eq!(t[1].tok, Tok::Ident("a\"b".into()));
        assert_eq!((t[1].line, t[1].col), (2, 3));
        assert_eq!(t[3].tok, Tok::Str("it's".into()));
        assert_eq!(t[0].tok, Tok::Kw(Keyword::Select));
        assert_eq!(toks("SeLeCt"), vec![Tok::Kw(Keyword::Select), Tok::Eof]);
    }

    #[test]
    fn double_colon_and_minus() {
        assert_eq!(
            toks("null::int64?-1"),
            vec![
                Tok::Kw(Keyword::Null),
                Tok::ColonColon,
                Tok::Ident("int64".into()),
                Tok::Question,
                Tok::Minus,
                Tok::Int("1".into()),
                Tok::Eof
            ]
        );
    }
}
