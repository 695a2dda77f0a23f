//! S-expression reader for the program language.

use std::fmt;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Pos {
    pub line: usize,
    pub column: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Symbol(String, Pos),
    Int(i64, Pos),
    Real(f64, Pos),
    Str(String, Pos),
    /// `( ... )`
    List(Vec<Expr>, Pos),
    /// `[ ... ]`
    Vector(Vec<Expr>, Pos),
}

impl Expr {
    pub fn pos(&self) -> Pos {
        match self {
            Expr::Symbol(_, p)
            | Expr::Int(_, p)
            | Expr::Real(_, p)
            | Expr::Str(_, p)
            | Expr::List(_, p)
            | Expr::Vector(_, p) => *p,
        }
    }

    pub fn as_symbol(&self) -> Option<&str> {
        match self {
            Expr::Symbol(s, _) => Some(s),
            _ => None,
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let seq = |f: &mut fmt::Formatter<'_>, items: &[Expr], open: char, close: char| {
            write!(f, "{open}")?;
            for (i, e) in items.iter().enumerate() {
                if i > 0 {
                    write!(f, " ")?;
                }
                write!(f, "{e}")?;
            }
            write!(f, "{close}")
        };
        match self {
            Expr::Symbol(s, _) => write!(f, "{s}"),
            Expr::Int(v, _) => write!(f, "{v}"),
            Expr::Real(v, _) => write!(f, "{v:?}"),
            Expr::Str(s, _) => write!(f, "{s:?}"),
            Expr::List(items, _) => seq(f, items, '(', ')'),
            Expr::Vector(items, _) => seq(f, items, '[', ']'),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Defn {
    pub name: String,
    pub params: Vec<String>,
    pub body: Vec<Expr>,
}

/// Function definitions followed by one body expression.
#[derive(Debug, Clone, PartialEq)]
pub struct ProgramAst {
    pub defns: Vec<Defn>,
    pub body: Expr,
}

fn err(pos: Pos, message: impl Into<String>) -> Error {
    Error::Parse {
        line: pos.line,
        column: pos.column,
        message: message.into(),
    }
}

struct Reader<'a> {
    chars: std::iter::Peekable<std::str::Chars<'a>>,
    pos: Pos,
}

impl Reader<'_> {
    fn bump(&mut self) -> Option<char> {
        let c = self.chars.next()?;
        if c == '\n' {
            self.pos.line += 1;
            self.pos.column = 1;
        } else {
            self.pos.column += 1;
        }
        Some(c)
    }

    fn skip_space(&mut self) {
        while let Some(&c) = self.chars.peek() {
            if c == ';' {
                while let Some(c) = self.bump() {
                    if c == '\n' {
                        break;
                    }
                }
            } else if c.is_whitespace() || c == ',' {
                self.bump();
            } else {
                break;
            }
        }
    }

    fn expr(&mut self) -> Result<Option<Expr>> {
        self.skip_space();
        let start = self.pos;
        let Some(&c) = self.chars.peek() else { return Ok(None) };
        match c {
            '(' | '[' => {
                self.bump();
                let close = if c == '(' { ')' } else { ']' };
                let mut items = Vec::new();
                loop {
                    self.skip_space();
                    match self.chars.peek() {
                        None => return Err(err(self.pos, format!("unexpected end of input, expected '{close}'"))),
                        Some(&d) if d == close => {
                            self.bump();
                            break;
                        }
                        Some(&d) if d == ')' || d == ']' => {
                            return Err(err(self.pos, format!("mismatched '{d}', expected '{close}'")))
                        }
                        _ => items.push(self.expr()?.expect("input is not exhausted")),
                    }
                }
                Ok(Some(if c == '(' {
                    Expr::List(items, start)
                } else {
                    Expr::Vector(items, start)
                }))
            }
            ')' | ']' => Err(err(start, format!("unexpected '{c}'"))),
            '"' => {
                self.bump();
                let mut s = String::new();
                loop {
                    match self.bump() {
                        None => return Err(err(self.pos, "unterminated string")),
                        Some('"') => break,
                        Some('\\') => match self.bump() {
                            Some('n') => s.push('\n'),
                            Some(e @ ('"' | '\\')) => s.push(e),
                            _ => return Err(err(self.pos, "bad escape in string")),
                        },
                        Some(ch) => s.push(ch),
                    }
                }
                Ok(Some(Expr::Str(s, start)))
            }
            _ => {
                let mut tok = String::new();
                while let Some(&d) = self.chars.peek() {
                    if d.is_whitespace() || "()[]\",;".contains(d) {
                        break;
                    }
                    tok.push(d);
                    self.bump();
                }
                atom(&tok, start).map(Some)
            }
        }
    }
}

fn atom(tok: &str, pos: Pos) -> Result<Expr> {
    if let Ok(v) = tok.parse::<i64>() {
        return Ok(Expr::Int(v, pos));
    }
    let numeric_start = tok.starts_with(|c: char| c.is_ascii_digit())
        || (tok.len() > 1 && tok.starts_with(['-', '+', '.']) && tok[1..].starts_with(|c: char| c.is_ascii_digit() || c == '.'));
    if numeric_start {
        return tok
            .parse::<f64>()
            .map(|v| Expr::Real(v, pos))
            .map_err(|_| err(pos, format!("illegal numeric atom '{tok}'")));
    }
    let ok = tok
        .chars()
        .all(|c| c.is_alphanumeric() || "+-*/<>=!?_.&%$".contains(c));
    if tok.is_empty() || !ok {
        return Err(err(pos, format!("illegal atom '{tok}'")));
    }
    Ok(Expr::Symbol(tok.to_string(), pos))
}

/// Reads every top-level expression.
pub fn read_all(source: &str) -> Result<Vec<Expr>> {
    let mut r = Reader {
        chars: source.chars().peekable(),
        pos: Pos { line: 1, column: 1 },
    };
    let mut out = Vec::new();
    while let Some(e) = r.expr()? {
        out.push(e);
    }
    Ok(out)
}

/// Parses a program: `defn` forms followed by exactly one expression.
pub fn parse(source: &str) -> Result<ProgramAst> {
    let forms = read_all(source)?;
    let mut defns = Vec::new();
    let mut body = None;
    for form in forms {
        let pos = form.pos();
        let is_defn = matches!(&form, Expr::List(items, _) if items.first().and_then(Expr::as_symbol) == Some("defn"));
        if body.is_some() {
            return Err(err(pos, "a program ends with a single expression after its definitions"));
        }
        if is_defn {
            let Expr::List(items, _) = form else { unreachable!() };
            if items.len() < 4 {
                return Err(err(pos, "defn needs a name, a parameter vector and a body"));
            }
            let name = items[1]
                .as_symbol()
                .ok_or_else(|| err(items[1].pos(), "defn name must be a symbol"))?
                .to_string();
            let Expr::Vector(ps, _) = &items[2] else {
                return Err(err(items[2].pos(), "defn parameters must be a vector"));
            };
            let params = ps
                .iter()
                .map(|p| p.as_symbol().map(str::to_string).ok_or_else(|| err(p.pos(), "parameter must be a symbol")))
                .collect::<Result<Vec<_>>>()?;
            defns.push(Defn {
                name,
                params,
                body: items[3..].to_vec(),
            });
        } else {
            body = Some(form);
        }
    }
    let body = body.ok_or_else(|| {
        err(
            Pos {
                line: source.lines().count().max(1),
                column: 1,
            },
            "program has no body expression",
        )
    })?;
    Ok(ProgramAst { defns, body })
}
