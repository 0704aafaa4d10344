//! Tokenizer and recursive-descent parser for the SQL subset:
//!
//! ```text
//! SELECT (* | SUM(col) | col, ...) FROM table
//!     [WHERE col op literal (AND col op literal)*]
//!     [ORDER BY col [ASC | DESC]] [LIMIT n] [;]
//! op      = "=" | "<" | "<=" | ">" | ">=" | CONTAINS
//! literal = -?digits[.digits] | 'text with '' for a quote'
//! ```

use super::QueryError;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PredOp {
    Eq,
    Lt,
    Le,
    Gt,
    Ge,
    Contains,
}

impl PredOp {
    pub fn as_str(self) -> &'static str {
        match self {
            PredOp::Eq => "=",
            PredOp::Lt => "<",
            PredOp::Le => "<=",
            PredOp::Gt => ">",
            PredOp::Ge => ">=",
            PredOp::Contains => "CONTAINS",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Literal {
    /// Raw digits as written, parsed later against the column type.
    Number(String),
    Text(String),
}

impl Literal {
    pub fn raw(&self) -> &str {
        match self {
            Literal::Number(s) | Literal::Text(s) => s,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Predicate {
    pub column: String,
    pub op: PredOp,
    pub literal: Literal,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Projection {
    All,
    Columns(Vec<String>),
    Sum(String),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OrderBy {
    pub column: String,
    pub desc: bool,
}

/// A parsed, not yet validated, query.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QueryPlan {
    pub table: String,
    pub projection: Projection,
    pub predicates: Vec<Predicate>,
    pub order_by: Option<OrderBy>,
    pub limit: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
enum Tok {
    Word(String),
    Number(String),
    Str(String),
    Sym(&'static str),
    End,
}

struct Lexer<'a> {
    src: &'a str,
    pos: usize,
}

fn syntax(pos: usize, msg: impl Into<String>) -> QueryError {
    QueryError::Syntax { pos, msg: msg.into() }
}

impl Lexer<'_> {
    fn next(&mut self) -> Result<(usize, Tok), QueryError> {
        let bytes = self.src.as_bytes();
        while self.pos < bytes.len() && bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        let start = self.pos;
        let Some(&c) = bytes.get(start) else {
            return Ok((start, Tok::End));
        };
        let take_while = |from: usize, f: &dyn Fn(u8) -> bool| {
            let mut i = from;
            while i < bytes.len() && f(bytes[i]) {
                i += 1;
            }
            i
        };
        let tok = match c {
            b'a'..=b'z' | b'A'..=b'Z' | b'_' => {
                self.pos = take_while(start, &|b| b.is_ascii_alphanumeric() || b == b'_');
                Tok::Word(self.src[start..self.pos].to_string())
            }
            b'0'..=b'9' | b'-' => {
                let digits = take_while(start + 1, &|b| b.is_ascii_digit());
                if c == b'-' && digits == start + 1 {
                    return Err(syntax(start, "expected digits after `-`"));
                }
                let mut end = digits;
                if bytes.get(end) == Some(&b'.') {
                    end = take_while(end + 1, &|b| b.is_ascii_digit());
                    if end == digits + 1 {
                        return Err(syntax(digits, "expected digits after `.`"));
                    }
                }
                self.pos = end;
                Tok::Number(self.src[start..end].to_string())
            }
            b'\'' => {
                let mut out = String::new();
                let mut i = start + 1;
                loop {
                    match self.src[i..].find('\'') {
                        None => return Err(syntax(start, "unterminated string literal")),
                        Some(off) => {
                            out.push_str(&self.src[i..i + off]);
                            i += off + 1;
                            if bytes.get(i) == Some(&b'\'') {
                                out.push('\'');
                                i += 1;
                            } else {
                                break;
                            }
                        }
                    }
                }
                self.pos = i;
                Tok::Str(out)
            }
            _ => {
                let two = self.src.get(start..start + 2);
                let sym = match (two, c) {
                    (Some("<="), _) => "<=",
                    (Some(">="), _) => ">=",
                    (_, b'<') => "<",
                    (_, b'>') => ">",
                    (_, b'=') => "=",
                    (_, b'(') => "(",
                    (_, b')') => ")",
                    (_, b',') => ",",
                    (_, b'*') => "*",
                    (_, b';') => ";",
                    _ => {
                        let ch = self.src[start..].chars().next().unwrap_or('?');
                        return Err(syntax(start, format!("unexpected character `{ch}`")));
                    }
                };
                self.pos = start + sym.len();
                Tok::Sym(sym)
            }
        };
        Ok((start, tok))
    }
}

struct Parser {
    toks: Vec<(usize, Tok)>,
    at: usize,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.at].1
    }

    fn pos(&self) -> usize {
        self.toks[self.at].0
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.at].1.clone();
        if self.at + 1 < self.toks.len() {
            self.at += 1;
        }
        t
    }

    fn is_keyword(&self, kw: &str) -> bool {
        matches!(self.peek(), Tok::Word(w) if w.eq_ignore_ascii_case(kw))
    }

    fn keyword(&mut self, kw: &str) -> Result<(), QueryError> {
        if self.is_keyword(kw) {
            self.bump();
            Ok(())
        } else {
            Err(syntax(self.pos(), format!("expected {kw}")))
        }
    }

    fn sym(&mut self, s: &str) -> Result<(), QueryError> {
        if matches!(self.peek(), Tok::Sym(x) if *x == s) {
            self.bump();
            Ok(())
        } else {
            Err(syntax(self.pos(), format!("expected `{s}`")))
        }
    }

    fn ident(&mut self) -> Result<String, QueryError> {
        const RESERVED: [&str; 11] = [
            "select", "from", "where", "and", "order", "by", "asc", "desc", "limit", "contains", "sum",
        ];
        match self.peek().clone() {
            Tok::Word(w) if !RESERVED.iter().any(|r| w.eq_ignore_ascii_case(r)) => {
                self.bump();
                Ok(w)
            }
            _ => Err(syntax(self.pos(), "expected a name")),
        }
    }

    fn query(&mut self) -> Result<QueryPlan, QueryError> {
        self.keyword("SELECT")?;
        let projection = if *self.peek() == Tok::Sym("*") {
            self.bump();
            Projection::All
        } else if self.is_keyword("SUM") && self.toks.get(self.at + 1).map(|t| &t.1) == Some(&Tok::Sym("(")) {
            self.bump();
            self.sym("(")?;
            let col = self.ident()?;
            self.sym(")")?;
            Projection::Sum(col)
        } else {
            let mut cols = vec![self.ident()?];
            while *self.peek() == Tok::Sym(",") {
                self.bump();
                cols.push(self.ident()?);
            }
            Projection::Columns(cols)
        };
        self.keyword("FROM")?;
        let table = self.ident()?;

        let mut predicates = Vec::new();
        if self.is_keyword("WHERE") {
            self.bump();
            predicates.push(self.predicate()?);
            while self.is_keyword("AND") {
                self.bump();
                predicates.push(self.predicate()?);
            }
        }

        let mut order_by = None;
        if self.is_keyword("ORDER") {
            self.bump();
            self.keyword("BY")?;
            let column = self.ident()?;
            let desc = if self.is_keyword("DESC") {
                self.bump();
                true
            } else {
                if self.is_keyword("ASC") {
                    self.bump();
                }
                false
            };
            order_by = Some(OrderBy { column, desc });
        }

        let mut limit = None;
        if self.is_keyword("LIMIT") {
            self.bump();
            let pos = self.pos();
            match self.bump() {
                Tok::Number(n) => {
                    limit = Some(
                        n.parse()
                            .map_err(|_| syntax(pos, "LIMIT takes a non-negative integer"))?,
                    );
                }
                _ => return Err(syntax(pos, "LIMIT takes a non-negative integer")),
            }
        }

        if *self.peek() == Tok::Sym(";") {
            self.bump();
        }
        if *self.peek() != Tok::End {
            return Err(syntax(self.pos(), "unexpected input after the query"));
        }
        Ok(QueryPlan {
            table,
            projection,
            predicates,
            order_by,
            limit,
        })
    }

    fn predicate(&mut self) -> Result<Predicate, QueryError> {
        let column = self.ident()?;
        let pos = self.pos();
        let op = match self.bump() {
            Tok::Sym("=") => PredOp::Eq,
            Tok::Sym("<") => PredOp::Lt,
            Tok::Sym("<=") => PredOp::Le,
            Tok::Sym(">") => PredOp::Gt,
            Tok::Sym(">=") => PredOp::Ge,
            Tok::Word(w) if w.eq_ignore_ascii_case("contains") => PredOp::Contains,
            _ => return Err(syntax(pos, "expected a comparison operator")),
        };
        let pos = self.pos();
        let literal = match self.bump() {
            Tok::Number(n) => Literal::Number(n),
            Tok::Str(s) => Literal::Text(s),
            _ => return Err(syntax(pos, "expected a number or a quoted string")),
        };
        Ok(Predicate { column, op, literal })
    }
}

pub fn parse_query(text: &str) -> Result<QueryPlan, QueryError> {
    let mut lexer = Lexer { src: text, pos: 0 };
    let mut toks = Vec::new();
    loop {
        let (pos, tok) = lexer.next()?;
        let end = tok == Tok::End;
        toks.push((pos, tok));
        if end {
            break;
        }
    }
    Parser { toks, at: 0 }.query()
}
