//! The Gaussian language: syntax tree, concrete syntax, printer and types.
//!
//! ```text
//! program := seq
//! seq     := item ((';' | newline) item)*
//! item    := 'let' IDENT '=' seq 'in' seq
//!          | 'let' '(' IDENT (',' IDENT)+ ')' '=' seq 'in' seq
//!          | IDENT '=' expr SEP seq               -- binds the rest of the block
//!          | '(' IDENT (',' IDENT)+ ')' '=' expr SEP seq
//!          | expr
//! expr    := sum ('=:=' sum)?
//! sum     := prod (('+' | '-') prod)*
//! prod    := unary ('*' unary)*                   -- one factor must be a literal
//! unary   := '-' unary | atom
//! atom    := NUMBER | IDENT | '()' | '(' seq (',' seq)* ')'
//!          | 'normal' '(' ')' | 'normal' '(' expr ',' NUMBER ')'
//!          | '[' '[' NUMBER, .. ']' , .. ']' '*' unary
//! ```

use std::collections::BTreeSet;
use std::fmt;

use crate::error::{Error, ParseError, Result};

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Ty {
    R,
    Unit,
    Pair(Box<Ty>, Box<Ty>),
}

impl Ty {
    pub fn pair(a: Ty, b: Ty) -> Ty {
        Ty::Pair(Box::new(a), Box::new(b))
    }

    /// `R^n` as the right-nested product `R * (R * ...)`; `R^0` is unit.
    pub fn real_power(n: usize) -> Ty {
        match n {
            0 => Ty::Unit,
            1 => Ty::R,
            _ => Ty::pair(Ty::R, Ty::real_power(n - 1)),
        }
    }

    /// Number of real coordinates after flattening pairs.
    pub fn dim(&self) -> usize {
        match self {
            Ty::R => 1,
            Ty::Unit => 0,
            Ty::Pair(a, b) => a.dim() + b.dim(),
        }
    }
}

impl fmt::Display for Ty {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Ty::R => write!(f, "R"),
            Ty::Unit => write!(f, "I"),
            Ty::Pair(a, b) => {
                if matches!(**a, Ty::Pair(..)) {
                    write!(f, "({a}) * {b}")
                } else {
                    write!(f, "{a} * {b}")
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Term {
    Var(String),
    Add(Box<Term>, Box<Term>),
    Scale(f64, Box<Term>),
    Const(f64),
    Pair(Box<Term>, Box<Term>),
    UnitVal,
    Let(String, Box<Term>, Box<Term>),
    LetPair(String, String, Box<Term>, Box<Term>),
    Normal,
    Cond(Box<Term>, Box<Term>),
}

/// Binder name used by `s; t`.
pub const DISCARD: &str = "_";

impl Term {
    pub fn var(x: &str) -> Term {
        Term::Var(x.to_string())
    }

    pub fn add(a: Term, b: Term) -> Term {
        Term::Add(Box::new(a), Box::new(b))
    }

    pub fn sub(a: Term, b: Term) -> Term {
        Term::add(a, Term::scale(-1.0, b))
    }

    pub fn scale(alpha: f64, a: Term) -> Term {
        Term::Scale(alpha, Box::new(a))
    }

    pub fn pair(a: Term, b: Term) -> Term {
        Term::Pair(Box::new(a), Box::new(b))
    }

    /// Right-nested tuple; the empty tuple is `()`.
    pub fn tuple(mut items: Vec<Term>) -> Term {
        match items.len() {
            0 => Term::UnitVal,
            1 => items.pop().unwrap(),
            _ => {
                let first = items.remove(0);
                Term::pair(first, Term::tuple(items))
            }
        }
    }

    pub fn let_(x: &str, e: Term, body: Term) -> Term {
        Term::Let(x.to_string(), Box::new(e), Box::new(body))
    }

    pub fn let_pair(x: &str, y: &str, e: Term, body: Term) -> Term {
        Term::LetPair(x.to_string(), y.to_string(), Box::new(e), Box::new(body))
    }

    pub fn seq(s: Term, t: Term) -> Term {
        Term::let_(DISCARD, s, t)
    }

    pub fn cond(a: Term, b: Term) -> Term {
        Term::Cond(Box::new(a), Box::new(b))
    }

    /// `normal(mean, variance)` as `mean + sqrt(variance) * normal()`.
    pub fn normal_with(mean: Term, variance: f64) -> Term {
        Term::add(mean, Term::scale(variance.sqrt(), Term::Normal))
    }

    /// Values: variables, tuples, affine combinations, constants, unit.
    pub fn is_value(&self) -> bool {
        match self {
            Term::Var(_) | Term::Const(_) | Term::UnitVal => true,
            Term::Add(a, b) | Term::Pair(a, b) => a.is_value() && b.is_value(),
            Term::Scale(_, a) => a.is_value(),
            _ => false,
        }
    }

    pub fn free_vars(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.collect_free(&mut Vec::new(), &mut out);
        out
    }

    fn collect_free(&self, bound: &mut Vec<String>, out: &mut BTreeSet<String>) {
        match self {
            Term::Var(x) => {
                if !bound.contains(x) {
                    out.insert(x.clone());
                }
            }
            Term::Add(a, b) | Term::Pair(a, b) | Term::Cond(a, b) => {
                a.collect_free(bound, out);
                b.collect_free(bound, out);
            }
            Term::Scale(_, a) => a.collect_free(bound, out),
            Term::Const(_) | Term::UnitVal | Term::Normal => {}
            Term::Let(x, e, t) => {
                e.collect_free(bound, out);
                bound.push(x.clone());
                t.collect_free(bound, out);
                bound.pop();
            }
            Term::LetPair(x, y, e, t) => {
                e.collect_free(bound, out);
                bound.push(x.clone());
                bound.push(y.clone());
                t.collect_free(bound, out);
                bound.pop();
                bound.pop();
            }
        }
    }

    /// All identifiers, bound or free.
    pub fn names(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.visit(&mut |t| match t {
            Term::Var(x) => {
                out.insert(x.clone());
            }
            Term::Let(x, ..) => {
                out.insert(x.clone());
            }
            Term::LetPair(x, y, ..) => {
                out.insert(x.clone());
                out.insert(y.clone());
            }
            _ => {}
        });
        out
    }

    fn visit(&self, f: &mut impl FnMut(&Term)) {
        f(self);
        match self {
            Term::Add(a, b) | Term::Pair(a, b) | Term::Cond(a, b) => {
                a.visit(f);
                b.visit(f);
            }
            Term::Scale(_, a) => a.visit(f),
            Term::Let(_, e, t) | Term::LetPair(_, _, e, t) => {
                e.visit(f);
                t.visit(f);
            }
            _ => {}
        }
    }

    /// Counts `normal`, `=:=` and `let` symbols.
    pub fn redex_symbols(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |t| {
            if matches!(t, Term::Normal | Term::Cond(..) | Term::Let(..) | Term::LetPair(..)) {
                n += 1;
            }
        });
        n
    }

    /// `self[v/x]`. `v` must not mention binders of `self` (callers rename
    /// source binders away from the names they substitute).
    pub fn subst(&self, x: &str, v: &Term) -> Term {
        match self {
            Term::Var(y) if y == x => v.clone(),
            Term::Var(_) | Term::Const(_) | Term::UnitVal | Term::Normal => self.clone(),
            Term::Add(a, b) => Term::add(a.subst(x, v), b.subst(x, v)),
            Term::Pair(a, b) => Term::pair(a.subst(x, v), b.subst(x, v)),
            Term::Cond(a, b) => Term::cond(a.subst(x, v), b.subst(x, v)),
            Term::Scale(al, a) => Term::scale(*al, a.subst(x, v)),
            Term::Let(y, e, t) => {
                let body = if y == x { (**t).clone() } else { t.subst(x, v) };
                Term::Let(y.clone(), Box::new(e.subst(x, v)), Box::new(body))
            }
            Term::LetPair(y1, y2, e, t) => {
                let body = if y1 == x || y2 == x { (**t).clone() } else { t.subst(x, v) };
                Term::LetPair(y1.clone(), y2.clone(), Box::new(e.subst(x, v)), Box::new(body))
            }
        }
    }

    /// Renames every binder whose name satisfies `clash` to a fresh name.
    pub fn rename_binders(&self, clash: &dyn Fn(&str) -> bool) -> Term {
        let mut taken = self.names();
        self.rename_in(clash, &mut taken)
    }

    fn rename_in(&self, clash: &dyn Fn(&str) -> bool, taken: &mut BTreeSet<String>) -> Term {
        let fresh = |x: &str, taken: &mut BTreeSet<String>| {
            let mut y = format!("{x}'");
            while taken.contains(&y) || clash(&y) {
                y.push('\'');
            }
            taken.insert(y.clone());
            y
        };
        match self {
            Term::Var(_) | Term::Const(_) | Term::UnitVal | Term::Normal => self.clone(),
            Term::Add(a, b) => Term::add(a.rename_in(clash, taken), b.rename_in(clash, taken)),
            Term::Pair(a, b) => Term::pair(a.rename_in(clash, taken), b.rename_in(clash, taken)),
            Term::Cond(a, b) => Term::cond(a.rename_in(clash, taken), b.rename_in(clash, taken)),
            Term::Scale(al, a) => Term::scale(*al, a.rename_in(clash, taken)),
            Term::Let(x, e, t) => {
                let e = e.rename_in(clash, taken);
                let mut t = t.rename_in(clash, taken);
                let mut x = x.clone();
                if clash(&x) {
                    let y = fresh(&x, taken);
                    t = t.subst(&x, &Term::Var(y.clone()));
                    x = y;
                }
                Term::Let(x, Box::new(e), Box::new(t))
            }
            Term::LetPair(x1, x2, e, t) => {
                let e = e.rename_in(clash, taken);
                let mut t = t.rename_in(clash, taken);
                let mut names = [x1.clone(), x2.clone()];
                for name in names.iter_mut() {
                    if clash(name) {
                        let y = fresh(name, taken);
                        t = t.subst(name, &Term::Var(y.clone()));
                        *name = y;
                    }
                }
                let [x1, x2] = names;
                Term::LetPair(x1, x2, Box::new(e), Box::new(t))
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Printer

const P_SEQ: u8 = 0;
const P_ITEM: u8 = 1;
const P_SUM: u8 = 2;
const P_PROD: u8 = 3;
const P_ATOM: u8 = 4;

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&print_at(self, P_SEQ))
    }
}

fn num(x: f64) -> String {
    format!("{x:?}")
}

fn print_at(t: &Term, ctx: u8) -> String {
    let (s, prec) = match t {
        Term::Var(x) => (x.clone(), P_ATOM),
        Term::Const(c) => (num(*c), P_ATOM),
        Term::UnitVal => ("()".into(), P_ATOM),
        Term::Normal => ("normal()".into(), P_ATOM),
        Term::Pair(a, b) => {
            let mut items = vec![print_at(a, P_SEQ)];
            let mut rest = &**b;
            while let Term::Pair(x, y) = rest {
                items.push(print_at(x, P_SEQ));
                rest = y;
            }
            items.push(print_at(rest, P_SEQ));
            (format!("({})", items.join(", ")), P_ATOM)
        }
        Term::Scale(al, a) => (format!("{} * {}", num(*al), print_at(a, P_ATOM)), P_PROD),
        Term::Add(a, b) => (format!("{} + {}", print_at(a, P_SUM), print_at(b, P_PROD)), P_SUM),
        Term::Cond(a, b) => (format!("{} =:= {}", print_at(a, P_SUM), print_at(b, P_SUM)), P_ITEM),
        Term::Let(x, e, body) if x == DISCARD => {
            (format!("{}; {}", print_at(e, P_ITEM), print_at(body, P_SEQ)), P_SEQ)
        }
        Term::Let(x, e, body) => {
            (format!("let {x} = {} in {}", print_at(e, P_SEQ), print_at(body, P_SEQ)), P_SEQ)
        }
        Term::LetPair(x, y, e, body) => (
            format!("let ({x}, {y}) = {} in {}", print_at(e, P_SEQ), print_at(body, P_SEQ)),
            P_SEQ,
        ),
    };
    // A `let` in item position would swallow the rest of the sequence.
    if prec < ctx {
        format!("({s})")
    } else {
        s
    }
}

// ---------------------------------------------------------------------------
// Lexer (shared with the finite-program parser)

#[derive(Clone, Debug, PartialEq)]
pub enum Tok {
    Num(String),
    Ident(String),
    LParen,
    RParen,
    LBracket,
    RBracket,
    LBrace,
    RBrace,
    Comma,
    Semi,
    Newline,
    Eq,
    EqEq,
    CondEq,
    Plus,
    Minus,
    Star,
    Slash,
    Colon,
    Arrow,
    FatArrow,
    Eof,
}

impl Tok {
    pub fn describe(&self) -> String {
        match self {
            Tok::Num(s) => format!("number `{s}`"),
            Tok::Ident(s) => format!("`{s}`"),
            Tok::Newline => "newline".into(),
            Tok::Eof => "end of input".into(),
            other => format!("`{}`", other.symbol()),
        }
    }

    fn symbol(&self) -> &'static str {
        match self {
            Tok::LParen => "(",
            Tok::RParen => ")",
            Tok::LBracket => "[",
            Tok::RBracket => "]",
            Tok::LBrace => "{",
            Tok::RBrace => "}",
            Tok::Comma => ",",
            Tok::Semi => ";",
            Tok::Eq => "=",
            Tok::EqEq => "==",
            Tok::CondEq => "=:=",
            Tok::Plus => "+",
            Tok::Minus => "-",
            Tok::Star => "*",
            Tok::Slash => "/",
            Tok::Colon => ":",
            Tok::Arrow => "->",
            Tok::FatArrow => "=>",
            _ => "",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Spanned {
    pub tok: Tok,
    pub line: usize,
    pub column: usize,
}

/// Tokenizes source text. Newlines are significant only outside brackets;
/// runs of them collapse into one token.
pub fn lex(src: &str) -> std::result::Result<Vec<Spanned>, ParseError> {
    let chars: Vec<char> = src.chars().collect();
    let mut out: Vec<Spanned> = Vec::new();
    let (mut i, mut line, mut col) = (0, 1, 1);
    let mut depth = 0usize;
    while i < chars.len() {
        let c = chars[i];
        let (l0, c0) = (line, col);
        let push = |out: &mut Vec<Spanned>, tok: Tok| out.push(Spanned { tok, line: l0, column: c0 });
        if c == '\n' {
            if depth == 0 && !matches!(out.last().map(|s| &s.tok), Some(Tok::Newline) | None) {
                push(&mut out, Tok::Newline);
            }
            i += 1;
            line += 1;
            col = 1;
            continue;
        }
        if c.is_whitespace() {
            i += 1;
            col += 1;
            continue;
        }
        if c == '#' {
            while i < chars.len() && chars[i] != '\n' {
                i += 1;
            }
            continue;
        }
        if c.is_ascii_digit() || (c == '.' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit())) {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                i += 1;
            }
            if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                let mut j = i + 1;
                if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                    j += 1;
                }
                if j < chars.len() && chars[j].is_ascii_digit() {
                    i = j;
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let text: String = chars[start..i].iter().collect();
            if text.matches('.').count() > 1 {
                return Err(ParseError {
                    line: l0,
                    column: c0,
                    message: format!("malformed number `{text}`"),
                    expected: vec![],
                });
            }
            col += i - start;
            push(&mut out, Tok::Num(text));
            continue;
        }
        if c.is_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_' || chars[i] == '\'') {
                i += 1;
            }
            let text: String = chars[start..i].iter().collect();
            col += i - start;
            push(&mut out, Tok::Ident(text));
            continue;
        }
        let rest: String = chars[i..chars.len().min(i + 3)].iter().collect();
        let (tok, len) = if rest.starts_with("=:=") {
            (Tok::CondEq, 3)
        } else if rest.starts_with("==") {
            (Tok::EqEq, 2)
        } else if rest.starts_with("=>") {
            (Tok::FatArrow, 2)
        } else if rest.starts_with("->") {
            (Tok::Arrow, 2)
        } else {
            let t = match c {
                '(' => Tok::LParen,
                ')' => Tok::RParen,
                '[' => Tok::LBracket,
                ']' => Tok::RBracket,
                '{' => Tok::LBrace,
                '}' => Tok::RBrace,
                ',' => Tok::Comma,
                ';' => Tok::Semi,
                '=' => Tok::Eq,
                '+' => Tok::Plus,
                '-' => Tok::Minus,
                '*' => Tok::Star,
                '/' => Tok::Slash,
                ':' => Tok::Colon,
                _ => {
                    return Err(ParseError {
                        line: l0,
                        column: c0,
                        message: format!("unexpected character `{c}`"),
                        expected: vec![],
                    })
                }
            };
            (t, 1)
        };
        match tok {
            Tok::LParen | Tok::LBracket | Tok::LBrace => depth += 1,
            Tok::RParen | Tok::RBracket | Tok::RBrace => depth = depth.saturating_sub(1),
            _ => {}
        }
        i += len;
        col += len;
        push(&mut out, tok);
    }
    if matches!(out.last().map(|s| &s.tok), Some(Tok::Newline)) {
        out.pop();
    }
    out.push(Spanned { tok: Tok::Eof, line, column: col });
    Ok(out)
}

/// Token cursor with error helpers, shared by both parsers.
pub struct Cursor {
    toks: Vec<Spanned>,
    pos: usize,
}

impl Cursor {
    pub fn new(src: &str) -> std::result::Result<Self, ParseError> {
        Ok(Cursor { toks: lex(src)?, pos: 0 })
    }

    pub fn peek(&self) -> &Tok {
        &self.toks[self.pos].tok
    }

    pub fn peek_at(&self, k: usize) -> &Tok {
        &self.toks[(self.pos + k).min(self.toks.len() - 1)].tok
    }

    pub fn next(&mut self) -> Tok {
        let t = self.toks[self.pos].tok.clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    pub fn save(&self) -> usize {
        self.pos
    }

    pub fn restore(&mut self, pos: usize) {
        self.pos = pos;
    }

    pub fn skip_newlines(&mut self) {
        while *self.peek() == Tok::Newline {
            self.next();
        }
    }

    pub fn at_ident(&self, word: &str) -> bool {
        matches!(self.peek(), Tok::Ident(w) if w == word)
    }

    pub fn error(&self, message: impl Into<String>, expected: &[&str]) -> ParseError {
        let s = &self.toks[self.pos];
        ParseError {
            line: s.line,
            column: s.column,
            message: message.into(),
            expected: expected.iter().map(|e| e.to_string()).collect(),
        }
    }

    pub fn unexpected(&self, expected: &[&str]) -> ParseError {
        self.error(format!("unexpected {}", self.peek().describe()), expected)
    }

    pub fn expect(&mut self, tok: Tok) -> std::result::Result<(), ParseError> {
        if *self.peek() == tok {
            self.next();
            Ok(())
        } else {
            let want = tok.describe();
            Err(self.unexpected(&[want.as_str()]))
        }
    }

    pub fn expect_word(&mut self, word: &str) -> std::result::Result<(), ParseError> {
        if self.at_ident(word) {
            self.next();
            Ok(())
        } else {
            let want = format!("`{word}`");
            Err(self.unexpected(&[want.as_str()]))
        }
    }

    pub fn ident(&mut self, keywords: &[&str]) -> std::result::Result<String, ParseError> {
        match self.peek().clone() {
            Tok::Ident(w) if !keywords.contains(&w.as_str()) => {
                self.next();
                Ok(w)
            }
            _ => Err(self.unexpected(&["identifier"])),
        }
    }
}

// ---------------------------------------------------------------------------
// Parser

const KEYWORDS: &[&str] = &["let", "in", "normal"];

const EXPR_START: &[&str] = &["number", "identifier", "`(`", "`[`", "`-`", "`let`", "`normal`"];

pub fn parse(src: &str) -> std::result::Result<Term, ParseError> {
    let mut p = Parser { cur: Cursor::new(src)?, fresh: 0, names: BTreeSet::new() };
    p.names = p
        .cur
        .toks
        .iter()
        .filter_map(|s| match &s.tok {
            Tok::Ident(w) => Some(w.clone()),
            _ => None,
        })
        .collect();
    p.cur.skip_newlines();
    let t = p.seq()?;
    p.cur.skip_newlines();
    if *p.cur.peek() != Tok::Eof {
        return Err(p.cur.unexpected(&["`;`", "newline", "end of input"]));
    }
    Ok(t)
}

/// Parses a program preceded by optional `input x : T` declarations, one
/// per line, which form its context. Omitting `: T` means `R`.
pub fn parse_with_inputs(src: &str) -> std::result::Result<(Ctx, Term), ParseError> {
    let mut ctx = Ctx::new();
    let mut body = String::new();
    let mut in_header = true;
    for (n, line) in src.lines().enumerate() {
        let trimmed = line.trim_start();
        if in_header && (trimmed.starts_with("input ") || trimmed.starts_with("input\t")) {
            let mut cur = Cursor::new(line).map_err(|e| ParseError { line: n + 1, ..e })?;
            let decl = (|| {
                cur.expect_word("input")?;
                let mut names = vec![cur.ident(KEYWORDS)?];
                while *cur.peek() == Tok::Comma {
                    cur.next();
                    names.push(cur.ident(KEYWORDS)?);
                }
                let ty = if *cur.peek() == Tok::Colon {
                    cur.next();
                    parse_ty(&mut cur)?
                } else {
                    Ty::R
                };
                if *cur.peek() != Tok::Eof {
                    return Err(cur.unexpected(&["`,`", "`:`", "end of line"]));
                }
                Ok((names, ty))
            })()
            .map_err(|e| ParseError { line: n + 1, ..e })?;
            let (names, ty) = decl;
            for x in names {
                ctx.push(&x, ty.clone());
            }
            body.push('\n');
            continue;
        }
        if !(trimmed.is_empty() || trimmed.starts_with('#')) {
            in_header = false;
        }
        body.push_str(line);
        body.push('\n');
    }
    Ok((ctx, parse(&body)?))
}

fn parse_ty(cur: &mut Cursor) -> std::result::Result<Ty, ParseError> {
    match cur.peek().clone() {
        Tok::Ident(w) if w == "R" => {
            cur.next();
            Ok(Ty::R)
        }
        Tok::Ident(w) if w == "unit" => {
            cur.next();
            Ok(Ty::Unit)
        }
        Tok::LParen => {
            cur.next();
            let mut items = vec![parse_ty(cur)?];
            while *cur.peek() == Tok::Comma {
                cur.next();
                items.push(parse_ty(cur)?);
            }
            cur.expect(Tok::RParen)?;
            let last = items.pop().expect("nonempty");
            Ok(items.into_iter().rev().fold(last, |acc, t| Ty::pair(t, acc)))
        }
        _ => Err(cur.unexpected(&["`R`", "`unit`", "`(`"])),
    }
}

struct Parser {
    cur: Cursor,
    fresh: usize,
    names: BTreeSet<String>,
}

impl Parser {
    fn fresh_name(&mut self) -> String {
        loop {
            let name = format!("__t{}", self.fresh);
            self.fresh += 1;
            if !self.names.contains(&name) {
                return name;
            }
        }
    }

    fn starts_item(&self) -> bool {
        matches!(
            self.cur.peek(),
            Tok::Num(_) | Tok::LParen | Tok::LBracket | Tok::Minus
        ) || matches!(self.cur.peek(), Tok::Ident(w) if w != "in")
    }

    fn at_separator(&self) -> bool {
        matches!(self.cur.peek(), Tok::Semi | Tok::Newline)
    }

    /// Consumes a separator; returns whether another item follows.
    fn separator(&mut self) -> bool {
        let save = self.cur.save();
        while self.at_separator() {
            self.cur.next();
        }
        if self.starts_item() {
            true
        } else {
            // Trailing separators before `in`, `)` and the like.
            self.cur.restore(save);
            while self.at_separator() {
                self.cur.next();
            }
            false
        }
    }

    fn seq(&mut self) -> std::result::Result<Term, ParseError> {
        if self.cur.at_ident("let") {
            return self.let_form();
        }
        if let Some(binding) = self.statement()? {
            return Ok(binding);
        }
        let e = self.expr()?;
        if self.at_separator() && self.separator() {
            let rest = self.seq()?;
            return Ok(Term::seq(e, rest));
        }
        Ok(e)
    }

    fn let_form(&mut self) -> std::result::Result<Term, ParseError> {
        self.cur.expect_word("let")?;
        let pattern = self.pattern()?;
        self.cur.expect(Tok::Eq)?;
        self.cur.skip_newlines();
        let bound = self.seq()?;
        self.cur.skip_newlines();
        self.cur.expect_word("in")?;
        self.cur.skip_newlines();
        let body = self.seq()?;
        Ok(self.bind(pattern, bound, body))
    }

    fn pattern(&mut self) -> std::result::Result<Vec<String>, ParseError> {
        if *self.cur.peek() == Tok::LParen {
            self.cur.next();
            let mut names = vec![self.cur.ident(KEYWORDS)?];
            while *self.cur.peek() == Tok::Comma {
                self.cur.next();
                names.push(self.cur.ident(KEYWORDS)?);
            }
            self.cur.expect(Tok::RParen)?;
            if names.len() < 2 {
                return Err(self.cur.error("a tuple pattern needs at least two names", &["`,`"]));
            }
            Ok(names)
        } else {
            Ok(vec![self.cur.ident(KEYWORDS)?])
        }
    }

    fn bind(&mut self, mut names: Vec<String>, bound: Term, body: Term) -> Term {
        if names.len() == 1 {
            return Term::Let(names.pop().unwrap(), Box::new(bound), Box::new(body));
        }
        if names.len() == 2 {
            let y = names.pop().unwrap();
            let x = names.pop().unwrap();
            return Term::LetPair(x, y, Box::new(bound), Box::new(body));
        }
        let x = names.remove(0);
        let rest = self.fresh_name();
        let inner = self.bind(names, Term::Var(rest.clone()), body);
        Term::LetPair(x, rest, Box::new(bound), Box::new(inner))
    }

    /// `x = e` or `(x, y) = e` followed by the rest of the block.
    fn statement(&mut self) -> std::result::Result<Option<Term>, ParseError> {
        let save = self.cur.save();
        let is_stmt = match self.cur.peek() {
            Tok::Ident(w) if !KEYWORDS.contains(&w.as_str()) => *self.cur.peek_at(1) == Tok::Eq,
            Tok::LParen => self.pattern().is_ok() && *self.cur.peek() == Tok::Eq,
            _ => false,
        };
        self.cur.restore(save);
        if !is_stmt {
            return Ok(None);
        }
        let pattern = self.pattern()?;
        self.cur.expect(Tok::Eq)?;
        self.cur.skip_newlines();
        let bound = self.expr()?;
        if !(self.at_separator() && self.separator()) {
            return Err(self.cur.error("a binding must be followed by the rest of the block", &["`;`", "newline"]));
        }
        let body = self.seq()?;
        Ok(Some(self.bind(pattern, bound, body)))
    }

    fn expr(&mut self) -> std::result::Result<Term, ParseError> {
        let lhs = self.sum()?;
        if *self.cur.peek() == Tok::CondEq {
            self.cur.next();
            self.cur.skip_newlines();
            let rhs = self.sum()?;
            if *self.cur.peek() == Tok::CondEq {
                return Err(self.cur.error("`=:=` does not associate; add parentheses", &[]));
            }
            return Ok(Term::cond(lhs, rhs));
        }
        Ok(lhs)
    }

    fn sum(&mut self) -> std::result::Result<Term, ParseError> {
        let mut acc = self.prod()?;
        loop {
            match self.cur.peek() {
                Tok::Plus => {
                    self.cur.next();
                    self.cur.skip_newlines();
                    acc = Term::add(acc, self.prod()?);
                }
                Tok::Minus => {
                    self.cur.next();
                    self.cur.skip_newlines();
                    acc = Term::add(acc, negate(self.prod()?));
                }
                _ => return Ok(acc),
            }
        }
    }

    fn prod(&mut self) -> std::result::Result<Term, ParseError> {
        if *self.cur.peek() == Tok::LBracket {
            return self.matrix_product();
        }
        let mut acc = self.unary()?;
        while *self.cur.peek() == Tok::Star {
            self.cur.next();
            self.cur.skip_newlines();
            let rhs = self.unary()?;
            acc = match (acc, rhs) {
                (Term::Const(c), r) => Term::scale(c, r),
                (l, Term::Const(c)) => Term::scale(c, l),
                _ => {
                    return Err(self.cur.error(
                        "scalar multiplication needs a numeric literal on one side",
                        &["number"],
                    ))
                }
            };
        }
        Ok(acc)
    }

    fn unary(&mut self) -> std::result::Result<Term, ParseError> {
        if *self.cur.peek() == Tok::Minus {
            self.cur.next();
            return Ok(negate(self.unary()?));
        }
        self.atom()
    }

    fn number(&mut self) -> std::result::Result<f64, ParseError> {
        let neg = if *self.cur.peek() == Tok::Minus {
            self.cur.next();
            true
        } else {
            false
        };
        match self.cur.peek().clone() {
            Tok::Num(s) => {
                let v: f64 = s.parse().map_err(|_| self.cur.error(format!("malformed number `{s}`"), &[]))?;
                if !v.is_finite() {
                    return Err(self.cur.error(format!("number `{s}` is out of range"), &[]));
                }
                self.cur.next();
                Ok(if neg { -v } else { v })
            }
            _ => Err(self.cur.unexpected(&["number"])),
        }
    }

    fn atom(&mut self) -> std::result::Result<Term, ParseError> {
        match self.cur.peek().clone() {
            Tok::Num(_) => Ok(Term::Const(self.number()?)),
            Tok::Ident(w) if w == "normal" => {
                self.cur.next();
                self.cur.expect(Tok::LParen)?;
                if *self.cur.peek() == Tok::RParen {
                    self.cur.next();
                    return Ok(Term::Normal);
                }
                let mean = self.expr()?;
                self.cur.expect(Tok::Comma)?;
                let var = self.number()?;
                if var < 0.0 {
                    return Err(self.cur.error("variance of `normal` must be non-negative", &[]));
                }
                self.cur.expect(Tok::RParen)?;
                Ok(Term::normal_with(mean, var))
            }
            Tok::Ident(w) if w == "let" => self.let_form(),
            Tok::Ident(w) if w == DISCARD => {
                Err(self.cur.error("`_` can only be used as a binder", &["identifier"]))
            }
            Tok::Ident(w) if !KEYWORDS.contains(&w.as_str()) => {
                self.cur.next();
                Ok(Term::Var(w))
            }
            Tok::LParen => {
                self.cur.next();
                if *self.cur.peek() == Tok::RParen {
                    self.cur.next();
                    return Ok(Term::UnitVal);
                }
                let mut items = vec![self.seq()?];
                while *self.cur.peek() == Tok::Comma {
                    self.cur.next();
                    items.push(self.seq()?);
                }
                if *self.cur.peek() != Tok::RParen {
                    return Err(self.cur.unexpected(&["`,`", "`)`"]));
                }
                self.cur.next();
                Ok(Term::tuple(items))
            }
            _ => Err(self.cur.unexpected(EXPR_START)),
        }
    }

    /// `[[a, b], [c, d]] * e` with `e` a tuple of matching width.
    fn matrix_product(&mut self) -> std::result::Result<Term, ParseError> {
        self.cur.expect(Tok::LBracket)?;
        let mut rows: Vec<Vec<f64>> = Vec::new();
        loop {
            self.cur.expect(Tok::LBracket)?;
            let mut row = vec![self.number()?];
            while *self.cur.peek() == Tok::Comma {
                self.cur.next();
                row.push(self.number()?);
            }
            self.cur.expect(Tok::RBracket)?;
            rows.push(row);
            if *self.cur.peek() == Tok::Comma {
                self.cur.next();
            } else {
                break;
            }
        }
        self.cur.expect(Tok::RBracket)?;
        let width = rows[0].len();
        if rows.iter().any(|r| r.len() != width) {
            return Err(self.cur.error("matrix rows differ in length", &[]));
        }
        self.cur.expect(Tok::Star)?;
        let arg = self.unary()?;
        let names: Vec<String> = (0..width).map(|_| self.fresh_name()).collect();
        let entries: Vec<Term> = rows
            .iter()
            .map(|row| {
                row.iter()
                    .zip(&names)
                    .map(|(a, x)| Term::scale(*a, Term::Var(x.clone())))
                    .reduce(Term::add)
                    .expect("width ≥ 1")
            })
            .collect();
        let body = Term::tuple(entries);
        Ok(if width == 1 {
            Term::Let(names[0].clone(), Box::new(arg), Box::new(body))
        } else {
            self.bind(names, arg, body)
        })
    }
}

fn negate(t: Term) -> Term {
    match t {
        Term::Const(c) => Term::Const(-c),
        other => Term::scale(-1.0, other),
    }
}

// ---------------------------------------------------------------------------
// Types

/// A typing context: ordered, later entries shadow earlier ones.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Ctx(pub Vec<(String, Ty)>);

impl Ctx {
    pub fn new() -> Self {
        Ctx(Vec::new())
    }

    /// Context of `n` real variables with the given names.
    pub fn reals(names: &[&str]) -> Self {
        Ctx(names.iter().map(|n| (n.to_string(), Ty::R)).collect())
    }

    pub fn push(&mut self, x: &str, ty: Ty) {
        self.0.push((x.to_string(), ty));
    }

    pub fn lookup(&self, x: &str) -> Option<&Ty> {
        self.0.iter().rev().find(|(y, _)| y == x).map(|(_, t)| t)
    }

    pub fn dim(&self) -> usize {
        self.0.iter().map(|(_, t)| t.dim()).sum()
    }

    /// Coordinate ranges of each entry after flattening, left to right.
    pub fn layout(&self) -> Vec<(String, std::ops::Range<usize>)> {
        let mut off = 0;
        self.0
            .iter()
            .map(|(x, t)| {
                let r = off..off + t.dim();
                off = r.end;
                (x.clone(), r)
            })
            .collect()
    }
}

pub fn typecheck(ctx: &Ctx, t: &Term) -> Result<Ty> {
    let mut env = ctx.clone();
    infer(&mut env, t)
}

fn expect_real(env: &mut Ctx, t: &Term, rule: &str) -> Result<()> {
    let ty = infer(env, t)?;
    if ty != Ty::R {
        return Err(Error::Type(format!("rule {rule}: `{t}` has type {ty}, expected R")));
    }
    Ok(())
}

fn infer(env: &mut Ctx, t: &Term) -> Result<Ty> {
    match t {
        Term::Var(x) => env
            .lookup(x)
            .cloned()
            .ok_or_else(|| Error::Type(format!("rule var: unbound variable `{x}`"))),
        Term::Const(_) | Term::Normal => Ok(Ty::R),
        Term::UnitVal => Ok(Ty::Unit),
        Term::Add(a, b) => {
            expect_real(env, a, "add")?;
            expect_real(env, b, "add")?;
            Ok(Ty::R)
        }
        Term::Scale(_, a) => {
            expect_real(env, a, "scale")?;
            Ok(Ty::R)
        }
        Term::Cond(a, b) => {
            expect_real(env, a, "condition")?;
            expect_real(env, b, "condition")?;
            Ok(Ty::Unit)
        }
        Term::Pair(a, b) => Ok(Ty::pair(infer(env, a)?, infer(env, b)?)),
        Term::Let(x, e, body) => {
            let te = infer(env, e)?;
            env.push(x, te);
            let r = infer(env, body);
            env.0.pop();
            r
        }
        Term::LetPair(x, y, e, body) => match infer(env, e)? {
            Ty::Pair(a, b) => {
                env.push(x, *a);
                env.push(y, *b);
                let r = infer(env, body);
                env.0.pop();
                env.0.pop();
                r
            }
            other => Err(Error::Type(format!(
                "rule let-pair: `{e}` has type {other}, expected a pair"
            ))),
        },
    }
}

/// Flattened dimensions `(m, n)` of a context and a term's type.
pub fn flatten(ctx: &Ctx, t: &Term) -> Result<(usize, usize)> {
    Ok((ctx.dim(), typecheck(ctx, t)?.dim()))
}
