//! Reader for the s-expression surface syntax.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

use crate::syntax::{
    Effect, Path, Pretype, QualPosition, QualifiedType, Qualifier, Term, VarSet, WellFormedError,
};

const RESERVED: &[&str] = &[
    "true", "false", "lam", "app", "ref", "seq", "fresh", "self", "Bool", "Ref",
];

/// Byte range in the source text.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}..{}", self.start, self.end)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("unexpected end of input, expected {expected}")]
    Eof { expected: &'static str },
    #[error("unexpected `{found}` at {span}, expected {expected}")]
    Unexpected { found: String, expected: &'static str, span: Span },
    #[error("unexpected character `{ch}` at offset {offset}")]
    BadChar { ch: char, offset: usize },
    #[error("trailing input at {span}")]
    Trailing { span: Span },
    #[error("ill-formed type at {span}: {source}")]
    IllFormed { source: WellFormedError, span: Span },
    #[error("marker `{marker}` in a lambda capture set at {span}")]
    MarkerInCaptures { marker: &'static str, span: Span },
}

impl ParseError {
    pub fn span(&self) -> Option<Span> {
        match self {
            ParseError::Eof { .. } => None,
            ParseError::BadChar { offset, .. } => Some(Span { start: *offset, end: offset + 1 }),
            ParseError::Unexpected { span, .. }
            | ParseError::Trailing { span }
            | ParseError::IllFormed { span, .. }
            | ParseError::MarkerInCaptures { span, .. } => Some(*span),
        }
    }

    /// True for well-formedness violations, as opposed to plain syntax errors.
    pub fn is_well_formedness(&self) -> bool {
        matches!(self, ParseError::IllFormed { .. } | ParseError::MarkerInCaptures { .. })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
enum Tok {
    LParen,
    RParen,
    LBrace,
    RBrace,
    Caret,
    Colon,
    Arrow,
    Slash,
    Bang,
    Walrus,
    Ident(String),
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tok::LParen => f.write_str("("),
            Tok::RParen => f.write_str(")"),
            Tok::LBrace => f.write_str("{"),
            Tok::RBrace => f.write_str("}"),
            Tok::Caret => f.write_str("^"),
            Tok::Colon => f.write_str(":"),
            Tok::Arrow => f.write_str("->"),
            Tok::Slash => f.write_str("/"),
            Tok::Bang => f.write_str("!"),
            Tok::Walrus => f.write_str(":="),
            Tok::Ident(s) => f.write_str(s),
        }
    }
}

fn is_ident_start(c: char) -> bool {
    c.is_ascii_alphabetic() || c == '_'
}

fn is_ident_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_' || c == '\''
}

fn lex(src: &str) -> Result<Vec<(Tok, Span)>, ParseError> {
    let mut out = Vec::new();
    let mut it = src.char_indices().peekable();
    while let Some((i, c)) = it.next() {
        let single = |t: Tok| (t, Span { start: i, end: i + 1 });
        match c {
            c if c.is_whitespace() => {}
            ';' => {
                // line comment
                while let Some(&(_, c)) = it.peek() {
                    if c == '\n' {
                        break;
                    }
                    it.next();
                }
            }
            '(' => out.push(single(Tok::LParen)),
            ')' => out.push(single(Tok::RParen)),
            '{' => out.push(single(Tok::LBrace)),
            '}' => out.push(single(Tok::RBrace)),
            '^' => out.push(single(Tok::Caret)),
            '/' => out.push(single(Tok::Slash)),
            '!' => out.push(single(Tok::Bang)),
            ':' => {
                if matches!(it.peek(), Some(&(_, '='))) {
                    it.next();
                    out.push((Tok::Walrus, Span { start: i, end: i + 2 }));
                } else {
                    out.push(single(Tok::Colon));
                }
            }
            '-' if matches!(it.peek(), Some(&(_, '>'))) => {
                it.next();
                out.push((Tok::Arrow, Span { start: i, end: i + 2 }));
            }
            c if is_ident_start(c) => {
                let mut end = i + c.len_utf8();
                while let Some(&(j, d)) = it.peek() {
                    if !is_ident_char(d) {
                        break;
                    }
                    end = j + d.len_utf8();
                    it.next();
                }
                out.push((Tok::Ident(src[i..end].to_string()), Span { start: i, end }));
            }
            ch => return Err(ParseError::BadChar { ch, offset: i }),
        }
    }
    Ok(out)
}

/// Source spans of every subterm, keyed by child-index path.
pub type SpanTable = BTreeMap<Path, Span>;

struct Parser {
    toks: Vec<(Tok, Span)>,
    pos: usize,
    spans: SpanTable,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(t, _)| t)
    }

    fn peek_at(&self, k: usize) -> Option<&Tok> {
        self.toks.get(self.pos + k).map(|(t, _)| t)
    }

    fn here(&self) -> Span {
        match self.toks.get(self.pos) {
            Some((_, s)) => *s,
            None => {
                let end = self.toks.last().map_or(0, |(_, s)| s.end);
                Span { start: end, end }
            }
        }
    }

    fn prev_end(&self) -> usize {
        self.pos.checked_sub(1).map_or(0, |p| self.toks[p].1.end)
    }

    fn next(&mut self, expected: &'static str) -> Result<(Tok, Span), ParseError> {
        let tok = self.toks.get(self.pos).cloned().ok_or(ParseError::Eof { expected })?;
        self.pos += 1;
        Ok(tok)
    }

    fn expect(&mut self, want: Tok, expected: &'static str) -> Result<Span, ParseError> {
        let (tok, span) = self.next(expected)?;
        if tok == want {
            Ok(span)
        } else {
            Err(ParseError::Unexpected { found: tok.to_string(), expected, span })
        }
    }

    fn expect_kw(&mut self, kw: &str, expected: &'static str) -> Result<(), ParseError> {
        let (tok, span) = self.next(expected)?;
        match tok {
            Tok::Ident(ref s) if s == kw => Ok(()),
            _ => Err(ParseError::Unexpected { found: tok.to_string(), expected, span }),
        }
    }

    fn ident(&mut self, expected: &'static str) -> Result<String, ParseError> {
        let (tok, span) = self.next(expected)?;
        match tok {
            Tok::Ident(s) if !RESERVED.contains(&s.as_str()) => Ok(s),
            _ => Err(ParseError::Unexpected { found: tok.to_string(), expected, span }),
        }
    }

    fn term(&mut self, path: &mut Path) -> Result<Term, ParseError> {
        let start = self.here().start;
        let t = self.term_inner(path)?;
        self.spans.insert(path.clone(), Span { start, end: self.prev_end() });
        Ok(t)
    }

    fn child(&mut self, path: &mut Path, i: usize) -> Result<Term, ParseError> {
        path.push(i);
        let t = self.term(path);
        path.pop();
        t
    }

    fn term_inner(&mut self, path: &mut Path) -> Result<Term, ParseError> {
        const EXPECTED: &str = "a term";
        let (tok, span) = self.next(EXPECTED)?;
        match tok {
            Tok::Ident(s) if s == "true" => Ok(Term::Const(true)),
            Tok::Ident(s) if s == "false" => Ok(Term::Const(false)),
            Tok::Ident(s) if !RESERVED.contains(&s.as_str()) => Ok(Term::Var(s)),
            Tok::LParen => {
                let (head, hspan) = self.next("a term form")?;
                let t = match head {
                    Tok::Ident(ref h) if h == "lam" => {
                        let qspan = self.here();
                        let q = self.qual()?;
                        if q.fresh || q.self_ref {
                            let marker = if q.fresh { "fresh" } else { "self" };
                            return Err(ParseError::MarkerInCaptures { marker, span: qspan });
                        }
                        self.expect(Tok::LParen, "`(`")?;
                        let param = self.ident("a parameter name")?;
                        self.expect(Tok::Colon, "`:`")?;
                        let tspan = self.here();
                        let ty = self.qtype()?;
                        ty.validate(QualPosition::Domain).map_err(|source| ParseError::IllFormed {
                            source,
                            span: Span { start: tspan.start, end: self.prev_end() },
                        })?;
                        self.expect(Tok::RParen, "`)`")?;
                        let body = self.child(path, 0)?;
                        Term::abs(q.vars, param, ty, body)
                    }
                    Tok::Ident(ref h) if h == "app" => {
                        let f = self.child(path, 0)?;
                        let a = self.child(path, 1)?;
                        Term::app(f, a)
                    }
                    Tok::Ident(ref h) if h == "ref" => Term::alloc(self.child(path, 0)?),
                    Tok::Ident(ref h) if h == "seq" => {
                        let a = self.child(path, 0)?;
                        let b = self.child(path, 1)?;
                        Term::seq(a, b)
                    }
                    Tok::Bang => Term::deref(self.child(path, 0)?),
                    Tok::Walrus => {
                        let a = self.child(path, 0)?;
                        let b = self.child(path, 1)?;
                        Term::assign(a, b)
                    }
                    other => {
                        return Err(ParseError::Unexpected {
                            found: other.to_string(),
                            expected: "one of lam, app, ref, !, :=, seq",
                            span: hspan,
                        })
                    }
                };
                self.expect(Tok::RParen, "`)`")?;
                Ok(t)
            }
            other => Err(ParseError::Unexpected { found: other.to_string(), expected: EXPECTED, span }),
        }
    }

    fn set_items(&mut self, allow_fresh: bool) -> Result<(VarSet, bool, bool), ParseError> {
        self.expect(Tok::LBrace, "`{`")?;
        let (mut vars, mut fresh, mut self_ref) = (VarSet::new(), false, false);
        loop {
            let (tok, span) = self.next("a qualifier element or `}`")?;
            match tok {
                Tok::RBrace => return Ok((vars, fresh, self_ref)),
                Tok::Ident(s) if s == "fresh" && allow_fresh => fresh = true,
                Tok::Ident(s) if s == "self" => self_ref = true,
                Tok::Ident(s) if !RESERVED.contains(&s.as_str()) => {
                    vars.insert(s);
                }
                other => {
                    return Err(ParseError::Unexpected {
                        found: other.to_string(),
                        expected: "a qualifier element or `}`",
                        span,
                    })
                }
            }
        }
    }

    fn qual(&mut self) -> Result<Qualifier, ParseError> {
        let (vars, fresh, self_ref) = self.set_items(true)?;
        Ok(Qualifier { vars, fresh, self_ref })
    }

    fn effect(&mut self) -> Result<Effect, ParseError> {
        let (vars, _, self_ref) = self.set_items(false)?;
        Ok(Effect { vars, self_ref })
    }

    fn qtype(&mut self) -> Result<QualifiedType, ParseError> {
        let pretype = self.pretype()?;
        self.expect(Tok::Caret, "`^`")?;
        let qual = self.qual()?;
        Ok(QualifiedType { pretype, qual })
    }

    fn pretype(&mut self) -> Result<Pretype, ParseError> {
        const EXPECTED: &str = "a type";
        match self.peek() {
            Some(Tok::Ident(s)) if s == "Bool" => {
                self.pos += 1;
                Ok(Pretype::Bool)
            }
            Some(Tok::LParen) if matches!(self.peek_at(1), Some(Tok::LParen)) => {
                self.pos += 2;
                let param = self.ident("a parameter name")?;
                self.expect(Tok::Colon, "`:`")?;
                let domain = self.qtype()?;
                self.expect(Tok::RParen, "`)`")?;
                self.expect(Tok::Arrow, "`->`")?;
                let codomain = self.qtype()?;
                self.expect(Tok::Slash, "`/`")?;
                let latent = self.effect()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(Pretype::Fun(Box::new(crate::syntax::FunType { param, domain, latent, codomain })))
            }
            Some(Tok::LParen) => {
                self.pos += 1;
                self.expect_kw("Ref", "`Ref`")?;
                let inner = self.qtype()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(Pretype::Ref(Box::new(inner)))
            }
            Some(_) => {
                let (tok, span) = self.next(EXPECTED)?;
                Err(ParseError::Unexpected { found: tok.to_string(), expected: EXPECTED, span })
            }
            None => Err(ParseError::Eof { expected: EXPECTED }),
        }
    }

    fn finish(&self) -> Result<(), ParseError> {
        match self.toks.get(self.pos) {
            None => Ok(()),
            Some((_, span)) => Err(ParseError::Trailing { span: *span }),
        }
    }
}

/// Parses one term, also returning the span of every subterm.
pub fn parse_term_spanned(src: &str) -> Result<(Term, SpanTable), ParseError> {
    let mut p = Parser { toks: lex(src)?, pos: 0, spans: SpanTable::new() };
    let t = p.term(&mut Vec::new())?;
    p.finish()?;
    Ok((t, p.spans))
}

pub fn parse_term(src: &str) -> Result<Term, ParseError> {
    parse_term_spanned(src).map(|(t, _)| t)
}

/// Parses a standalone qualified type. The top-level qualifier is validated
/// as a term qualifier.
pub fn parse_qtype(src: &str) -> Result<QualifiedType, ParseError> {
    let mut p = Parser { toks: lex(src)?, pos: 0, spans: SpanTable::new() };
    let ty = p.qtype()?;
    p.finish()?;
    ty.validate(QualPosition::Term)
        .map_err(|source| ParseError::IllFormed { source, span: Span { start: 0, end: src.len() } })?;
    Ok(ty)
}

/// Parses every non-blank, non-comment line as a separate term.
pub fn parse_corpus(src: &str) -> Result<Vec<Term>, (usize, ParseError)> {
    src.lines()
        .enumerate()
        .filter(|(_, l)| {
            let l = l.trim();
            !l.is_empty() && !l.starts_with(';')
        })
        .map(|(i, l)| parse_term(l).map_err(|e| (i + 1, e)))
        .collect()
}
