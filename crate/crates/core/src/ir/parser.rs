//! Parser for the MiniMIR textual format.
//!
//! The concrete syntax is documented in `docs/minimir-format.md`. Parsing is
//! whitespace-insensitive; `//` starts a comment running to end of line.
//! After the syntactic pass the parser resolves names and projection types;
//! unresolved paths and ill-typed projections are parse errors, while the
//! remaining invariants are reported by [`crate::ir::check`].

use std::collections::BTreeSet;
use thiserror::Error;

use super::ast::*;
use super::check::{self, DiagCategory};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ParseError {
    #[error("{line}:{col}: expected {expected}, found {found}")]
    Syntax { line: u32, col: u32, expected: String, found: String },
    #[error("{0}")]
    Resolve(String),
}

// ---------------------------------------------------------------------------
// Lexer
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq)]
enum Tok {
    Ident(String),
    Int(i64),
    Str(String),
    ColonColon,
    Colon,
    Semi,
    Comma,
    LBrace,
    RBrace,
    LParen,
    RParen,
    Lt,
    Gt,
    Eq,
    Star,
    Amp,
    Plus,
    Minus,
    Arrow,
    Dot,
    Eof,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Ident(s) => format!("`{s}`"),
            Tok::Int(n) => format!("`{n}`"),
            Tok::Str(s) => format!("\"{s}\""),
            Tok::ColonColon => "`::`".into(),
            Tok::Colon => "`:`".into(),
            Tok::Semi => "`;`".into(),
            Tok::Comma => "`,`".into(),
            Tok::LBrace => "`{`".into(),
            Tok::RBrace => "`}`".into(),
            Tok::LParen => "`(`".into(),
            Tok::RParen => "`)`".into(),
            Tok::Lt => "`<`".into(),
            Tok::Gt => "`>`".into(),
            Tok::Eq => "`=`".into(),
            Tok::Star => "`*`".into(),
            Tok::Amp => "`&`".into(),
            Tok::Plus => "`+`".into(),
            Tok::Minus => "`-`".into(),
            Tok::Arrow => "`->`".into(),
            Tok::Dot => "`.`".into(),
            Tok::Eof => "end of input".into(),
        }
    }
}

struct Lexer {
    toks: Vec<(Tok, u32, u32)>,
    pos: usize,
}

fn lex(text: &str) -> Result<Lexer, ParseError> {
    let mut toks = Vec::new();
    let mut chars = text.chars().peekable();
    let mut line = 1u32;
    let mut col = 1u32;
    macro_rules! bump {
        () => {{
            let c = chars.next();
            if c == Some('\n') {
                line += 1;
                col = 1;
            } else if c.is_some() {
                col += 1;
            }
            c
        }};
    }
    loop {
        let (l0, c0) = (line, col);
        let c = match chars.peek().copied() {
            Some(c) => c,
            None => break,
        };
        match c {
            ' ' | '\t' | '\r' | '\n' => {
                bump!();
            }
            '/' => {
                bump!();
                if chars.peek() == Some(&'/') {
                    while let Some(&c) = chars.peek() {
                        if c == '\n' {
                            break;
                        }
                        bump!();
                    }
                } else {
                    return Err(ParseError::Syntax {
                        line: l0,
                        col: c0,
                        expected: "`//` comment".into(),
                        found: "`/`".into(),
                    });
                }
            }
            '"' => {
                bump!();
                let mut s = String::new();
                loop {
                    match bump!() {
                        Some('"') => break,
                        Some(c) => s.push(c),
                        None => {
                            return Err(ParseError::Syntax {
                                line: l0,
                                col: c0,
                                expected: "closing `\"`".into(),
                                found: "end of input".into(),
                            })
                        }
                    }
                }
                toks.push((Tok::Str(s), l0, c0));
            }
            c if c.is_ascii_digit() => {
                let mut s = String::new();
                while let Some(&c) = chars.peek() {
                    if c.is_ascii_digit() {
                        s.push(c);
                        bump!();
                    } else {
                        break;
                    }
                }
                let n: i64 = s.parse().map_err(|_| ParseError::Syntax {
                    line: l0,
                    col: c0,
                    expected: "integer".into(),
                    found: s.clone(),
                })?;
                toks.push((Tok::Int(n), l0, c0));
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let mut s = String::new();
                while let Some(&c) = chars.peek() {
                    if c.is_ascii_alphanumeric() || c == '_' {
                        s.push(c);
                        bump!();
                    } else {
                        break;
                    }
                }
                toks.push((Tok::Ident(s), l0, c0));
            }
            ':' => {
                bump!();
                if chars.peek() == Some(&':') {
                    bump!();
                    toks.push((Tok::ColonColon, l0, c0));
                } else {
                    toks.push((Tok::Colon, l0, c0));
                }
            }
            '-' => {
                bump!();
                if chars.peek() == Some(&'>') {
                    bump!();
                    toks.push((Tok::Arrow, l0, c0));
                } else {
                    toks.push((Tok::Minus, l0, c0));
                }
            }
            _ => {
                bump!();
                let t = match c {
                    ';' => Tok::Semi,
                    ',' => Tok::Comma,
                    '{' => Tok::LBrace,
                    '}' => Tok::RBrace,
                    '(' => Tok::LParen,
                    ')' => Tok::RParen,
                    '<' => Tok::Lt,
                    '>' => Tok::Gt,
                    '=' => Tok::Eq,
                    '*' => Tok::Star,
                    '&' => Tok::Amp,
                    '+' => Tok::Plus,
                    '.' => Tok::Dot,
                    other => {
                        return Err(ParseError::Syntax {
                            line: l0,
                            col: c0,
                            expected: "a token".into(),
                            found: format!("`{other}`"),
                        })
                    }
                };
                toks.push((t, l0, c0));
            }
        }
    }
    toks.push((Tok::Eof, line, col));
    Ok(Lexer { toks, pos: 0 })
}

impl Lexer {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].0
    }

    fn at(&self) -> (u32, u32) {
        (self.toks[self.pos].1, self.toks[self.pos].2)
    }

    fn next(&mut self) -> Tok {
        let t = self.toks[self.pos].0.clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn err(&self, expected: &str) -> ParseError {
        let (line, col) = self.at();
        ParseError::Syntax { line, col, expected: expected.into(), found: self.peek().describe() }
    }

    fn expect(&mut self, t: Tok) -> Result<(), ParseError> {
        if *self.peek() == t {
            self.next();
            Ok(())
        } else {
            Err(self.err(&t.describe()))
        }
    }

    fn ident(&mut self) -> Result<String, ParseError> {
        match self.peek() {
            Tok::Ident(_) => {
                if let Tok::Ident(s) = self.next() {
                    Ok(s)
                } else {
                    unreachable!()
                }
            }
            _ => Err(self.err("identifier")),
        }
    }

    fn keyword(&mut self, kw: &str) -> Result<(), ParseError> {
        match self.peek() {
            Tok::Ident(s) if s == kw => {
                self.next();
                Ok(())
            }
            _ => Err(self.err(&format!("`{kw}`"))),
        }
    }

    fn peek_keyword(&self, kw: &str) -> bool {
        matches!(self.peek(), Tok::Ident(s) if s == kw)
    }

    fn int(&mut self) -> Result<i64, ParseError> {
        match self.peek() {
            Tok::Int(_) => {
                if let Tok::Int(n) = self.next() {
                    Ok(n)
                } else {
                    unreachable!()
                }
            }
            _ => Err(self.err("integer")),
        }
    }
}

// ---------------------------------------------------------------------------
// Parser
// ---------------------------------------------------------------------------

struct Parser {
    lx: Lexer,
    current_crate: String,
}

/// Parse a complete MiniMIR source unit.
///
/// On success the program's paths resolve and every place's projection chain
/// is type-consistent. Remaining invariants are surfaced as diagnostics by
/// [`crate::ir::check::validate_program`].
pub fn parse_program(text: &str) -> Result<Program, ParseError> {
    parse_program_with_externals(text, &BTreeSet::new())
}

/// Like [`parse_program`], but treats paths in `externals` as known callees.
/// Instrumented programs reference wrapper functions defined in their
/// sidecar rather than in the source text.
pub fn parse_program_with_externals(
    text: &str,
    externals: &BTreeSet<String>,
) -> Result<Program, ParseError> {
    let lx = lex(text)?;
    let mut p = Parser { lx, current_crate: String::new() };
    let program = p.program()?;
    // Promote resolution-level diagnostics to parse errors.
    for d in check::validate_program_internal(&program, externals) {
        if matches!(
            d.category,
            DiagCategory::UnresolvedLocal
                | DiagCategory::UnresolvedFunction
                | DiagCategory::UnresolvedAggregate
                | DiagCategory::IllTypedProjection
        ) {
            return Err(ParseError::Resolve(d.to_string()));
        }
    }
    Ok(program)
}

impl Parser {
    fn program(&mut self) -> Result<Program, ParseError> {
        let mut program = Program::default();
        while !matches!(self.lx.peek(), Tok::Eof) {
            match self.lx.peek() {
                Tok::Ident(s) if s == "crate" => {
                    self.lx.next();
                    let name = self.lx.ident()?;
                    self.lx.expect(Tok::Semi)?;
                    self.current_crate = name.clone();
                    program.crates.push(CrateDef { name, aggregates: Vec::new(), functions: Vec::new() });
                }
                Tok::Ident(s) if s == "struct" => {
                    let agg = self.aggregate()?;
                    self.in_crate(&mut program)?.aggregates.push(agg);
                }
                Tok::Ident(s) if s == "pub" || s == "fn" => {
                    let func = self.function()?;
                    self.in_crate(&mut program)?.functions.push(func);
                }
                _ => return Err(self.lx.err("`crate`, `struct`, `pub` or `fn`")),
            }
        }
        Ok(program)
    }

    fn in_crate<'a>(&mut self, program: &'a mut Program) -> Result<&'a mut CrateDef, ParseError> {
        if self.current_crate.is_empty() {
            return Err(self.lx.err("a `crate <name>;` declaration first"));
        }
        Ok(program.crates.last_mut().expect("crate pushed"))
    }

    fn path(&mut self) -> Result<String, ParseError> {
        let mut s = self.lx.ident()?;
        while matches!(self.lx.peek(), Tok::ColonColon) {
            self.lx.next();
            s.push_str("::");
            s.push_str(&self.lx.ident()?);
        }
        Ok(s)
    }

    fn check_crate_prefix(&self, path: &str) -> Result<(), ParseError> {
        let first = path.split("::").next().unwrap_or(path);
        if first != self.current_crate {
            return Err(ParseError::Resolve(format!(
                "path `{path}` does not belong to the enclosing crate `{}`",
                self.current_crate
            )));
        }
        Ok(())
    }

    fn aggregate(&mut self) -> Result<AggregateDef, ParseError> {
        self.lx.keyword("struct")?;
        let path = self.path()?;
        self.check_crate_prefix(&path)?;
        self.lx.expect(Tok::LBrace)?;
        let mut fields = Vec::new();
        while !matches!(self.lx.peek(), Tok::RBrace) {
            let name = self.lx.ident()?;
            self.lx.expect(Tok::Colon)?;
            let ty = self.type_expr()?;
            self.lx.expect(Tok::Semi)?;
            fields.push((name, ty));
        }
        self.lx.expect(Tok::RBrace)?;
        Ok(AggregateDef { path, fields })
    }

    fn type_expr(&mut self) -> Result<TypeExpr, ParseError> {
        match self.lx.peek().clone() {
            Tok::Ident(s) if s == "bool" => {
                self.lx.next();
                Ok(TypeExpr::Bool)
            }
            Tok::Ident(s) if s == "i32" => {
                self.lx.next();
                Ok(TypeExpr::I32)
            }
            Tok::Ident(s) if s == "vec" || s == "ref" || s == "refmut" => {
                self.lx.next();
                self.lx.expect(Tok::Lt)?;
                let inner = self.type_expr()?;
                self.lx.expect(Tok::Gt)?;
                Ok(match s.as_str() {
                    "vec" => TypeExpr::vec_of(inner),
                    "ref" => TypeExpr::ref_of(inner),
                    _ => TypeExpr::refmut_of(inner),
                })
            }
            Tok::Ident(_) => Ok(TypeExpr::Aggregate(self.path()?)),
            _ => Err(self.lx.err("a type")),
        }
    }

    fn local_id(&mut self) -> Result<LocalId, ParseError> {
        let (line, col) = self.lx.at();
        let s = self.lx.ident()?;
        if let Some(rest) = s.strip_prefix('v') {
            if let Ok(n) = rest.parse::<u32>() {
                return Ok(LocalId(n));
            }
        }
        Err(ParseError::Syntax { line, col, expected: "local `v<N>`".into(), found: format!("`{s}`") })
    }

    fn function(&mut self) -> Result<FunctionDef, ParseError> {
        let visibility = if self.lx.peek_keyword("pub") {
            self.lx.next();
            Visibility::Public
        } else {
            Visibility::Private
        };
        self.lx.keyword("fn")?;
        let path = self.path()?;
        self.check_crate_prefix(&path)?;
        self.lx.expect(Tok::LParen)?;
        let mut locals = Vec::new();
        let mut param_count = 0u32;
        while !matches!(self.lx.peek(), Tok::RParen) {
            if param_count > 0 {
                self.lx.expect(Tok::Comma)?;
            }
            let id = self.local_id()?;
            if id.0 != param_count + 1 {
                return Err(ParseError::Resolve(format!(
                    "in `{path}`: parameter {} out of order, expected v{}",
                    id,
                    param_count + 1
                )));
            }
            self.lx.expect(Tok::Colon)?;
            let ty = self.type_expr()?;
            locals.push(LocalDecl { id, ty });
            param_count += 1;
        }
        self.lx.expect(Tok::RParen)?;
        self.lx.expect(Tok::Arrow)?;
        let ret_ty = self.type_expr()?;
        locals.insert(0, LocalDecl { id: LocalId(0), ty: ret_ty });
        let owner_type = if self.lx.peek_keyword("on") {
            self.lx.next();
            Some(self.path()?)
        } else {
            None
        };
        self.lx.expect(Tok::LBrace)?;
        if self.lx.peek_keyword("locals") {
            self.lx.next();
            self.lx.expect(Tok::LBrace)?;
            let mut next = param_count + 1;
            while !matches!(self.lx.peek(), Tok::RBrace) {
                let id = self.local_id()?;
                if id.0 != next {
                    return Err(ParseError::Resolve(format!(
                        "in `{path}`: local {} out of order, expected v{next}",
                        id
                    )));
                }
                self.lx.expect(Tok::Colon)?;
                let ty = self.type_expr()?;
                self.lx.expect(Tok::Semi)?;
                locals.push(LocalDecl { id, ty });
                next += 1;
            }
            self.lx.expect(Tok::RBrace)?;
        }
        let mut blocks = Vec::new();
        while !matches!(self.lx.peek(), Tok::RBrace) {
            blocks.push(self.block()?);
        }
        self.lx.expect(Tok::RBrace)?;
        if blocks.is_empty() {
            return Err(ParseError::Resolve(format!("function `{path}` has no body blocks")));
        }
        Ok(FunctionDef { path, visibility, owner_type, param_count, locals, blocks })
    }

    fn block(&mut self) -> Result<Block, ParseError> {
        let label = self.lx.ident()?;
        self.lx.expect(Tok::LBrace)?;
        let mut statements = Vec::new();
        while !matches!(self.lx.peek(), Tok::RBrace) {
            statements.push(self.statement()?);
        }
        self.lx.expect(Tok::RBrace)?;
        Ok(Block { label, statements })
    }

    fn place(&mut self) -> Result<Place, ParseError> {
        if matches!(self.lx.peek(), Tok::Star) {
            self.lx.next();
            let mut inner = self.place()?;
            inner.projections.push(Projection::Deref);
            return Ok(inner);
        }
        let mut place = if matches!(self.lx.peek(), Tok::LParen) {
            self.lx.next();
            let p = self.place()?;
            self.lx.expect(Tok::RParen)?;
            p
        } else {
            Place { base: self.local_id()?, projections: Vec::new() }
        };
        while matches!(self.lx.peek(), Tok::Dot) {
            self.lx.next();
            place.projections.push(Projection::Field(self.lx.ident()?));
        }
        Ok(place)
    }

    fn offset(&mut self) -> Result<i64, ParseError> {
        match self.lx.peek() {
            Tok::Plus => {
                self.lx.next();
                self.lx.int()
            }
            Tok::Minus => {
                self.lx.next();
                Ok(-self.lx.int()?)
            }
            _ => Ok(0),
        }
    }

    fn arg_places(&mut self) -> Result<Vec<Place>, ParseError> {
        let mut args = Vec::new();
        self.lx.expect(Tok::LParen)?;
        while !matches!(self.lx.peek(), Tok::RParen) {
            if !args.is_empty() {
                self.lx.expect(Tok::Comma)?;
            }
            args.push(self.place()?);
        }
        self.lx.expect(Tok::RParen)?;
        Ok(args)
    }

    fn statement(&mut self) -> Result<Statement, ParseError> {
        match self.lx.peek().clone() {
            Tok::Ident(kw) if kw == "call" => {
                self.lx.next();
                let dst = self.place()?;
                self.lx.expect(Tok::Eq)?;
                let callee = self.path()?;
                let args = self.arg_places()?;
                self.lx.expect(Tok::Semi)?;
                Ok(Statement::Call { dst, callee, args })
            }
            Tok::Ident(kw) if kw == "alloc" => {
                self.lx.next();
                let dst = self.place()?;
                self.lx.expect(Tok::Eq)?;
                let kind = self.lx.ident()?;
                self.lx.expect(Tok::Lt)?;
                let elem = self.type_expr()?;
                self.lx.expect(Tok::Gt)?;
                let len = if matches!(self.lx.peek(), Tok::Star) {
                    self.lx.next();
                    self.lx.int()? as u64
                } else {
                    DEFAULT_ALLOC_LEN
                };
                let domain = if self.lx.peek_keyword("in") {
                    self.lx.next();
                    self.lx.keyword("shared")?;
                    Some(self.lx.int()? as u64)
                } else {
                    None
                };
                self.lx.expect(Tok::Semi)?;
                Ok(Statement::Alloc { dst, kind, elem, len, domain })
            }
            Tok::Ident(kw) if kw == "syscall" => {
                self.lx.next();
                let dst = self.place()?;
                self.lx.expect(Tok::Eq)?;
                let name = self.lx.ident()?;
                self.lx.expect(Tok::LParen)?;
                let mut args = Vec::new();
                let mut path_arg = None;
                if let Tok::Str(s) = self.lx.peek().clone() {
                    self.lx.next();
                    path_arg = Some(s);
                } else {
                    while !matches!(self.lx.peek(), Tok::RParen) {
                        if !args.is_empty() {
                            self.lx.expect(Tok::Comma)?;
                        }
                        args.push(self.place()?);
                    }
                }
                self.lx.expect(Tok::RParen)?;
                self.lx.expect(Tok::Semi)?;
                Ok(Statement::Syscall { dst, name, args, path_arg })
            }
            Tok::Ident(kw) if kw == "branch" => {
                self.lx.next();
                let left = self.lx.ident()?;
                self.lx.expect(Tok::Comma)?;
                let right = self.lx.ident()?;
                self.lx.expect(Tok::Semi)?;
                Ok(Statement::Branch { left, right })
            }
            Tok::Ident(kw) if kw == "return" => {
                self.lx.next();
                self.lx.expect(Tok::Semi)?;
                Ok(Statement::Return)
            }
            Tok::Ident(kw) if kw == "rawstore" => {
                self.lx.next();
                let base = self.place()?;
                let offset = self.offset()?;
                self.lx.expect(Tok::Eq)?;
                let src = self.place()?;
                self.lx.expect(Tok::Semi)?;
                Ok(Statement::RawStore { base, offset, src })
            }
            Tok::Ident(kw) if kw == "rawload" => {
                self.lx.next();
                let dst = self.place()?;
                self.lx.expect(Tok::Eq)?;
                let base = self.place()?;
                let offset = self.offset()?;
                self.lx.expect(Tok::Semi)?;
                Ok(Statement::RawLoad { dst, base, offset })
            }
            _ => {
                let dst = self.place()?;
                self.lx.expect(Tok::Eq)?;
                let src = match self.lx.peek().clone() {
                    Tok::Amp => {
                        self.lx.next();
                        Rvalue::AddrOf(self.place()?)
                    }
                    Tok::Int(n) => {
                        self.lx.next();
                        Rvalue::LitInt(n as i32)
                    }
                    Tok::Minus => {
                        self.lx.next();
                        Rvalue::LitInt(-(self.lx.int()? as i32))
                    }
                    Tok::Ident(s) if s == "true" => {
                        self.lx.next();
                        Rvalue::LitBool(true)
                    }
                    Tok::Ident(s) if s == "false" => {
                        self.lx.next();
                        Rvalue::LitBool(false)
                    }
                    _ => Rvalue::Use(self.place()?),
                };
                self.lx.expect(Tok::Semi)?;
                Ok(Statement::Assign { dst, src })
            }
        }
    }
}
