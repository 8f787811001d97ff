//! Model-formula mini-language.
//!
//! Grammar:
//! ```text
//! formula := ident "~" term ("+" term)*
//! term    := smooth | ident
//! smooth  := ("s" | "ti") "(" arg ("," arg)* ")"
//! arg     := ident | "k" "=" INT | "bs" "=" (ident | string) | "by" "=" ident
//! ```
//! Whitespace-insensitive; identifiers may contain dots (`log.size`).

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::{Error, Result};

pub const DEFAULT_K: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TermKind {
    Parametric,
    Smooth,
    Tensor,
    RandomEffect,
    Functional,
    VaryingCoefficient,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SmoothFunc {
    S,
    Ti,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TermSpec {
    pub kind: TermKind,
    pub func: Option<SmoothFunc>,
    pub covariates: Vec<String>,
    pub k: Option<usize>,
    pub bs: Option<String>,
    pub by: Option<String>,
}

impl TermSpec {
    /// Canonical printed form, also used as the term's display name.
    pub fn label(&self) -> String {
        match self.func {
            None => self.covariates[0].clone(),
            Some(f) => {
                let head = if f == SmoothFunc::S { "s" } else { "ti" };
                let mut parts: Vec<String> = self.covariates.clone();
                if let Some(k) = self.k {
                    parts.push(format!("k={k}"));
                }
                if let Some(bs) = &self.bs {
                    parts.push(format!("bs={bs}"));
                }
                if let Some(by) = &self.by {
                    parts.push(format!("by={by}"));
                }
                format!("{head}({})", parts.join(","))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub response: String,
    pub terms: Vec<TermSpec>,
}

impl ModelSpec {
    /// Canonical text form; `parse(print(spec))` is the identity.
    pub fn print(&self) -> String {
        let terms: Vec<String> = self.terms.iter().map(|t| t.label()).collect();
        format!("{} ~ {}", self.response, terms.join(" + "))
    }
}

/// Registered smooth-class codes.
pub const BS_CODES: &[&str] = &[
    "ps", "cr", "mpi", "mpd", "cx", "cv", "mpiBy", "mpdBy", "re", "tismi", "tismd", "tedmi",
    "tedmd", "tesmi", "tesmd",
];

// ---------------------------------------------------------------------------
// Lexer

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Int(usize),
    Tilde,
    Plus,
    LParen,
    RParen,
    Comma,
    Eq,
    Str(String),
    Eof,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Ident(s) => format!("`{s}`"),
            Tok::Int(v) => format!("`{v}`"),
            Tok::Tilde => "`~`".into(),
            Tok::Plus => "`+`".into(),
            Tok::LParen => "`(`".into(),
            Tok::RParen => "`)`".into(),
            Tok::Comma => "`,`".into(),
            Tok::Eq => "`=`".into(),
            Tok::Str(s) => format!("\"{s}\""),
            Tok::Eof => "end of input".into(),
        }
    }
}

struct Lexer<'a> {
    text: &'a [u8],
    pos: usize,
}

impl<'a> Lexer<'a> {
    fn new(text: &'a str) -> Self {
        Lexer {
            text: text.as_bytes(),
            pos: 0,
        }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.text.len() && self.text[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn next(&mut self) -> Result<(usize, Tok)> {
        self.skip_ws();
        let start = self.pos;
        if self.pos >= self.text.len() {
            return Ok((start, Tok::Eof));
        }
        let c = self.text[self.pos];
        let tok = match c {
            b'~' => {
                self.pos += 1;
                Tok::Tilde
            }
            b'+' => {
                self.pos += 1;
                Tok::Plus
            }
            b'(' => {
                self.pos += 1;
                Tok::LParen
            }
            b')' => {
                self.pos += 1;
                Tok::RParen
            }
            b',' => {
                self.pos += 1;
                Tok::Comma
            }
            b'=' => {
                self.pos += 1;
                Tok::Eq
            }
            b'"' | b'\'' => {
                let quote = c;
                self.pos += 1;
                let s0 = self.pos;
                while self.pos < self.text.len() && self.text[self.pos] != quote {
                    self.pos += 1;
                }
                if self.pos >= self.text.len() {
                    return Err(Error::Syntax {
                        offset: start,
                        expected: "closing quote".into(),
                        found: "end of input".into(),
                    });
                }
                let s = String::from_utf8_lossy(&self.text[s0..self.pos]).into_owned();
                self.pos += 1;
                Tok::Str(s)
            }
            b'0'..=b'9' => {
                let s0 = self.pos;
                while self.pos < self.text.len() && self.text[self.pos].is_ascii_digit() {
                    self.pos += 1;
                }
                let s = std::str::from_utf8(&self.text[s0..self.pos]).unwrap();
                Tok::Int(s.parse().unwrap())
            }
            c if c.is_ascii_alphabetic() || c == b'_' => {
                let s0 = self.pos;
                while self.pos < self.text.len()
                    && (self.text[self.pos].is_ascii_alphanumeric()
                        || self.text[self.pos] == b'_'
                        || self.text[self.pos] == b'.')
                {
                    self.pos += 1;
                }
                Tok::Ident(String::from_utf8_lossy(&self.text[s0..self.pos]).into_owned())
            }
            other => {
                return Err(Error::Syntax {
                    offset: start,
                    expected: "identifier, number or punctuation".into(),
                    found: (other as char).to_string(),
                })
            }
        };
        Ok((start, tok))
    }
}

// ---------------------------------------------------------------------------
// Parser

struct Parser<'a> {
    lexer: Lexer<'a>,
    look: (usize, Tok),
}

impl<'a> Parser<'a> {
    fn new(text: &'a str) -> Result<Self> {
        let mut lexer = Lexer::new(text);
        let look = lexer.next()?;
        Ok(Parser { lexer, look })
    }

    fn advance(&mut self) -> Result<(usize, Tok)> {
        let cur = std::mem::replace(&mut self.look, (0, Tok::Eof));
        self.look = self.lexer.next()?;
        Ok(cur)
    }

    fn expect(&mut self, want: Tok, expected: &str) -> Result<usize> {
        if self.look.1 == want {
            Ok(self.advance()?.0)
        } else {
            Err(Error::Syntax {
                offset: self.look.0,
                expected: expected.into(),
                found: self.look.1.describe(),
            })
        }
    }

    fn ident(&mut self, expected: &str) -> Result<String> {
        match &self.look.1 {
            Tok::Ident(_) => {
                let (_, tok) = self.advance()?;
                if let Tok::Ident(s) = tok {
                    Ok(s)
                } else {
                    unreachable!()
                }
            }
            other => Err(Error::Syntax {
                offset: self.look.0,
                expected: expected.into(),
                found: other.describe(),
            }),
        }
    }

    fn formula(&mut self) -> Result<ModelSpec> {
        let response = self.ident("response identifier")?;
        self.expect(Tok::Tilde, "`~`")?;
        let mut terms = vec![self.term()?];
        while self.look.1 == Tok::Plus {
            self.advance()?;
            terms.push(self.term()?);
        }
        self.expect(Tok::Eof, "`+` or end of formula")?;
        Ok(ModelSpec { response, terms })
    }

    fn term(&mut self) -> Result<TermSpec> {
        // `1` is the explicit intercept marker
        if self.look.1 == Tok::Int(1) {
            self.advance()?;
            return Ok(TermSpec {
                kind: TermKind::Parametric,
                func: None,
                covariates: vec!["1".into()],
                k: None,
                bs: None,
                by: None,
            });
        }
        let name = self.ident("term identifier")?;
        let func = match (name.as_str(), &self.look.1) {
            ("s", Tok::LParen) => Some(SmoothFunc::S),
            ("ti", Tok::LParen) => Some(SmoothFunc::Ti),
            _ => None,
        };
        let Some(func) = func else {
            return Ok(TermSpec {
                kind: TermKind::Parametric,
                func: None,
                covariates: vec![name],
                k: None,
                bs: None,
                by: None,
            });
        };
        self.expect(Tok::LParen, "`(`")?;
        let mut covariates = Vec::new();
        let mut named: BTreeMap<String, (usize, Tok)> = BTreeMap::new();
        loop {
            match self.look.1.clone() {
                Tok::Ident(id) => {
                    let (off, _) = self.advance()?;
                    if self.look.1 == Tok::Eq {
                        self.advance()?;
                        let val = self.advance()?;
                        if named.insert(id.clone(), val).is_some() {
                            return Err(Error::DuplicateArg(id));
                        }
                        let _ = off;
                    } else {
                        covariates.push(id);
                    }
                }
                other => {
                    return Err(Error::Syntax {
                        offset: self.look.0,
                        expected: "argument identifier".into(),
                        found: other.describe(),
                    })
                }
            }
            match self.look.1 {
                Tok::Comma => {
                    self.advance()?;
                }
                Tok::RParen => {
                    self.advance()?;
                    break;
                }
                _ => {
                    return Err(Error::Syntax {
                        offset: self.look.0,
                        expected: "`,` or `)`".into(),
                        found: self.look.1.describe(),
                    })
                }
            }
        }
        if covariates.is_empty() {
            return Err(Error::Syntax {
                offset: self.look.0,
                expected: "at least one covariate".into(),
                found: "none".into(),
            });
        }

        let mut k = None;
        let mut bs = None;
        let mut by = None;
        for (key, (off, val)) in named {
            match (key.as_str(), val) {
                ("k", Tok::Int(v)) => k = Some(v),
                ("k", other) => {
                    return Err(Error::Syntax {
                        offset: off,
                        expected: "integer for k".into(),
                        found: other.describe(),
                    })
                }
                ("bs", Tok::Ident(s)) | ("bs", Tok::Str(s)) => {
                    if !BS_CODES.contains(&s.as_str()) {
                        return Err(Error::UnknownConstraint(s));
                    }
                    bs = Some(s);
                }
                ("by", Tok::Ident(s)) => by = Some(s),
                (key, other) => {
                    return Err(Error::Syntax {
                        offset: off,
                        expected: format!("valid value for `{key}`"),
                        found: other.describe(),
                    })
                }
            }
        }

        // provisional kind; validate() refines it against the data schema
        let kind = match bs.as_deref() {
            Some("re") => TermKind::RandomEffect,
            Some("tismi") | Some("tismd") | Some("tedmi") | Some("tedmd") | Some("tesmi")
            | Some("tesmd") => TermKind::Tensor,
            _ if covariates.len() == 2 => TermKind::Tensor,
            _ if by.is_some() => TermKind::Functional,
            _ => TermKind::Smooth,
        };
        Ok(TermSpec {
            kind,
            func: Some(func),
            covariates,
            k,
            bs,
            by,
        })
    }
}

/// Parse a formula string into a [`ModelSpec`].
pub fn parse(text: &str) -> Result<ModelSpec> {
    Parser::new(text)?.formula()
}

// ---------------------------------------------------------------------------
// Schema validation

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ColumnType {
    Numeric,
    Factor,
    /// Matrix-group column `name[1..ncols]`.
    Matrix { ncols: usize },
}

/// Column names and types available for validation.
#[derive(Debug, Clone, Default)]
pub struct DataSchema {
    pub columns: Vec<(String, ColumnType)>,
}

impl DataSchema {
    pub fn get(&self, name: &str) -> Option<&ColumnType> {
        self.columns
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
    }
}

fn require(schema: &DataSchema, name: &str) -> Result<ColumnType> {
    schema
        .get(name)
        .cloned()
        .ok_or_else(|| Error::UnknownColumn(name.to_string()))
}

fn require_numeric(schema: &DataSchema, name: &str) -> Result<()> {
    match require(schema, name)? {
        ColumnType::Numeric => Ok(()),
        other => Err(Error::ColumnType {
            col: name.into(),
            expected: "numeric scalar".into(),
            found: format!("{other:?}"),
        }),
    }
}

/// Resolve term kinds against the data schema, apply defaults (k=10) and
/// check matrix/factor requirements.
pub fn validate(spec: &ModelSpec, schema: &DataSchema) -> Result<ModelSpec> {
    require_numeric(schema, &spec.response)?;
    let mut out = spec.clone();
    for term in &mut out.terms {
        match term.kind {
            TermKind::Parametric => {
                if term.covariates[0] != "1" {
                    require(schema, &term.covariates[0])?;
                }
            }
            TermKind::RandomEffect => {
                let col = &term.covariates[0];
                match require(schema, col)? {
                    ColumnType::Factor => {}
                    other => {
                        return Err(Error::ColumnType {
                            col: col.clone(),
                            expected: "factor".into(),
                            found: format!("{other:?}"),
                        })
                    }
                }
            }
            TermKind::Tensor => {
                if term.covariates.len() != 2 {
                    return Err(Error::Invalid(format!(
                        "tensor term `{}` needs exactly 2 covariates",
                        term.label()
                    )));
                }
                for c in &term.covariates {
                    require_numeric(schema, c)?;
                }
                term.k = Some(term.k.unwrap_or(5));
            }
            TermKind::Smooth | TermKind::Functional | TermKind::VaryingCoefficient => {
                let cov = term.covariates[0].clone();
                let cov_ty = require(schema, &cov)?;
                match (&cov_ty, &term.by) {
                    (ColumnType::Matrix { ncols }, Some(by)) => {
                        match require(schema, by)? {
                            ColumnType::Matrix { ncols: bn } if bn == *ncols => {}
                            ColumnType::Matrix { ncols: bn } => {
                                return Err(Error::MatrixShapeMismatch {
                                    a: cov.clone(),
                                    a_dims: format!("n x {ncols}"),
                                    b: by.clone(),
                                    b_dims: format!("n x {bn}"),
                                })
                            }
                            other => {
                                return Err(Error::ColumnType {
                                    col: by.clone(),
                                    expected: "matrix".into(),
                                    found: format!("{other:?}"),
                                })
                            }
                        }
                        term.kind = TermKind::Functional;
                    }
                    (ColumnType::Matrix { .. }, None) => {
                        return Err(Error::Invalid(format!(
                            "matrix covariate `{cov}` requires a `by` matrix"
                        )))
                    }
                    (ColumnType::Numeric, Some(by)) => {
                        require_numeric(schema, by)?;
                        term.kind = TermKind::VaryingCoefficient;
                    }
                    (ColumnType::Numeric, None) => {
                        term.kind = TermKind::Smooth;
                    }
                    (ColumnType::Factor, _) => {
                        return Err(Error::ColumnType {
                            col: cov.clone(),
                            expected: "numeric scalar or matrix".into(),
                            found: "Factor".into(),
                        })
                    }
                }
                let k = term.k.unwrap_or(DEFAULT_K);
                if k < 3 {
                    return Err(Error::BasisTooSmall {
                        q: k,
                        min: 3,
                        context: format!("term `{}`", term.label()),
                    });
                }
                term.k = Some(k);
            }
        }
    }
    Ok(out)
}
