//! Lexer and recursive-descent parser for `.jsub` files.

use super::ast::*;
use super::CorpusError;

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Int(i64),
    Str(String),
    Punct(&'static str),
    Eof,
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    line: u32,
    col: u32,
}

// two-character operators first so `!=` wins over `!`
const PUNCTS: [&str; 23] = [
    "&&", "||", "==", "!=", "<=", ">=", "(", ")", "{", "}", ";", ",", ".", "=", "<", ">", "+",
    "-", "*", "/", "%", ":", "!",
];

fn lex(file: &str, src: &str) -> Result<Vec<Token>, CorpusError> {
    let chars: Vec<char> = src.chars().collect();
    let mut toks = Vec::new();
    let (mut i, mut line, mut col) = (0usize, 1u32, 1u32);
    let err = |line, col, msg: String| CorpusError::Syntax {
        file: file.to_string(),
        line,
        column: col,
        message: msg,
    };
    while i < chars.len() {
        let c = chars[i];
        if c == '\n' {
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
        if c == '/' && chars.get(i + 1) == Some(&'/') {
            while i < chars.len() && chars[i] != '\n' {
                i += 1;
            }
            continue;
        }
        if c == '/' && chars.get(i + 1) == Some(&'*') {
            let (sl, sc) = (line, col);
            i += 2;
            col += 2;
            loop {
                if i >= chars.len() {
                    return Err(err(sl, sc, "unterminated block comment".into()));
                }
                if chars[i] == '*' && chars.get(i + 1) == Some(&'/') {
                    i += 2;
                    col += 2;
                    break;
                }
                if chars[i] == '\n' {
                    line += 1;
                    col = 1;
                } else {
                    col += 1;
                }
                i += 1;
            }
            continue;
        }
        let (tl, tc) = (line, col);
        if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            let word: String = chars[start..i].iter().collect();
            col += (i - start) as u32;
            toks.push(Token {
                tok: Tok::Ident(word),
                line: tl,
                col: tc,
            });
            continue;
        }
        if c.is_ascii_digit() {
            let start = i;
            while i < chars.len() && chars[i].is_ascii_digit() {
                i += 1;
            }
            let text: String = chars[start..i].iter().collect();
            col += (i - start) as u32;
            let value = text
                .parse::<i64>()
                .map_err(|_| err(tl, tc, format!("integer literal out of range: {text}")))?;
            toks.push(Token {
                tok: Tok::Int(value),
                line: tl,
                col: tc,
            });
            continue;
        }
        if c == '"' {
            i += 1;
            col += 1;
            let mut s = String::new();
            loop {
                match chars.get(i) {
                    None | Some('\n') => {
                        return Err(err(tl, tc, "unterminated string literal".into()))
                    }
                    Some('"') => {
                        i += 1;
                        col += 1;
                        break;
                    }
                    Some('\\') => {
                        let esc = chars.get(i + 1).copied();
                        let ch = match esc {
                            Some('n') => '\n',
                            Some('t') => '\t',
                            Some('"') => '"',
                            Some('\\') => '\\',
                            _ => return Err(err(line, col, "invalid escape sequence".into())),
                        };
                        s.push(ch);
                        i += 2;
                        col += 2;
                    }
                    Some(&ch) => {
                        s.push(ch);
                        i += 1;
                        col += 1;
                    }
                }
            }
            toks.push(Token {
                tok: Tok::Str(s),
                line: tl,
                col: tc,
            });
            continue;
        }
        let rest: String = chars[i..(i + 2).min(chars.len())].iter().collect();
        let p = PUNCTS
            .iter()
            .find(|p| rest.starts_with(**p))
            .ok_or_else(|| err(tl, tc, format!("unexpected character {c:?}")))?;
        i += p.len();
        col += p.len() as u32;
        toks.push(Token {
            tok: Tok::Punct(p),
            line: tl,
            col: tc,
        });
    }
    toks.push(Token {
        tok: Tok::Eof,
        line,
        col,
    });
    Ok(toks)
}

const KEYWORDS: [&str; 19] = [
    "class", "static", "if", "else", "while", "for", "switch", "case", "default", "try", "catch",
    "finally", "throw", "new", "return", "calldyn", "true", "false", "void",
];

pub(crate) struct Parser<'a> {
    file: &'a str,
    toks: Vec<Token>,
    pos: usize,
    class: String,
}

impl<'a> Parser<'a> {
    pub(crate) fn new(file: &'a str, src: &str) -> Result<Self, CorpusError> {
        let toks = lex(file, src)?;
        Ok(Parser {
            file,
            toks,
            pos: 0,
            class: String::new(),
        })
    }

    fn peek(&self) -> &Tok {
        &self.toks[self.pos].tok
    }

    fn peek_at(&self, n: usize) -> &Tok {
        let i = (self.pos + n).min(self.toks.len() - 1);
        &self.toks[i].tok
    }

    fn here(&self) -> (u32, u32) {
        let t = &self.toks[self.pos];
        (t.line, t.col)
    }

    fn error<T>(&self, message: impl Into<String>) -> Result<T, CorpusError> {
        let (line, column) = self.here();
        Err(CorpusError::Syntax {
            file: self.file.to_string(),
            line,
            column,
            message: message.into(),
        })
    }

    fn bump(&mut self) -> Token {
        let t = self.toks[self.pos].clone();
        if self.pos < self.toks.len() - 1 {
            self.pos += 1;
        }
        t
    }

    fn is_punct(&self, p: &str) -> bool {
        matches!(self.peek(), Tok::Punct(q) if *q == p)
    }

    fn is_kw(&self, kw: &str) -> bool {
        matches!(self.peek(), Tok::Ident(w) if w == kw)
    }

    fn expect_punct(&mut self, p: &str) -> Result<(), CorpusError> {
        if self.is_punct(p) {
            self.bump();
            Ok(())
        } else {
            self.error(format!("expected `{p}`, found {}", describe(self.peek())))
        }
    }

    fn expect_kw(&mut self, kw: &str) -> Result<(), CorpusError> {
        if self.is_kw(kw) {
            self.bump();
            Ok(())
        } else {
            self.error(format!("expected `{kw}`, found {}", describe(self.peek())))
        }
    }

    fn ident(&mut self) -> Result<String, CorpusError> {
        match self.peek().clone() {
            Tok::Ident(w) if !KEYWORDS.contains(&w.as_str()) && parse_type(&w).is_none() => {
                self.bump();
                Ok(w)
            }
            other => self.error(format!("expected identifier, found {}", describe(&other))),
        }
    }

    fn peek_type(&self) -> Option<Type> {
        match self.peek() {
            Tok::Ident(w) => parse_type(w),
            _ => None,
        }
    }

    pub(crate) fn parse_file(&mut self) -> Result<Vec<(ClassDecl, Vec<MethodSource>)>, CorpusError> {
        let mut out = Vec::new();
        while !matches!(self.peek(), Tok::Eof) {
            out.push(self.class_decl()?);
        }
        Ok(out)
    }

    fn class_decl(&mut self) -> Result<(ClassDecl, Vec<MethodSource>), CorpusError> {
        self.expect_kw("class")?;
        let name = self.ident()?;
        self.class = name.clone();
        self.expect_punct("{")?;
        let mut methods = Vec::new();
        while !self.is_punct("}") {
            if matches!(self.peek(), Tok::Eof) {
                return self.error("unexpected end of file inside class body");
            }
            methods.push(self.method()?);
        }
        self.expect_punct("}")?;
        let decl = ClassDecl {
            name,
            file: self.file.to_string(),
            methods: methods.iter().map(|m: &MethodSource| m.fq_name.clone()).collect(),
        };
        Ok((decl, methods))
    }

    fn method(&mut self) -> Result<MethodSource, CorpusError> {
        let (start_line, _) = self.here();
        let is_static = if self.is_kw("static") {
            self.bump();
            true
        } else {
            false
        };
        let ret = match self.peek_type() {
            Some(t) => {
                self.bump();
                t
            }
            None => return self.error("expected return type"),
        };
        let name = self.ident()?;
        self.expect_punct("(")?;
        let mut params = Vec::new();
        if !self.is_punct(")") {
            loop {
                let ty = match self.peek_type() {
                    Some(Type::Void) | None => return self.error("expected parameter type"),
                    Some(t) => {
                        self.bump();
                        t
                    }
                };
                let pname = self.ident()?;
                params.push(Param { name: pname, ty });
                if self.is_punct(",") {
                    self.bump();
                } else {
                    break;
                }
            }
        }
        self.expect_punct(")")?;
        let body = self.block()?;
        let end_line = self.toks[self.pos.saturating_sub(1)].line;
        let mut body = body;
        number_statements(&mut body);
        Ok(MethodSource {
            fq_name: format!("{}.{}/{}", self.class, name, params.len()),
            class: self.class.clone(),
            name,
            is_static,
            ret,
            params,
            body,
            span: SourceSpan {
                file: self.file.to_string(),
                start_line,
                end_line,
            },
        })
    }

    fn block(&mut self) -> Result<Block, CorpusError> {
        self.expect_punct("{")?;
        let mut stmts = Vec::new();
        while !self.is_punct("}") {
            if matches!(self.peek(), Tok::Eof) {
                return self.error("unexpected end of file inside block");
            }
            stmts.push(self.stmt()?);
        }
        self.expect_punct("}")?;
        Ok(stmts)
    }

    fn stmt(&mut self) -> Result<Stmt, CorpusError> {
        let (line, _) = self.here();
        let kind = match self.peek().clone() {
            Tok::Ident(w) => match w.as_str() {
                "if" => self.if_stmt()?,
                "while" => {
                    self.bump();
                    self.expect_punct("(")?;
                    let cond = self.expr()?;
                    self.expect_punct(")")?;
                    let body = self.block()?;
                    StmtKind::While { cond, body }
                }
                "for" => self.for_stmt()?,
                "switch" => self.switch_stmt()?,
                "try" => self.try_stmt()?,
                "throw" => {
                    self.bump();
                    self.expect_kw("new")?;
                    let exception = self.ident()?;
                    self.expect_punct("(")?;
                    self.expect_punct(")")?;
                    self.expect_punct(";")?;
                    StmtKind::Throw { exception }
                }
                "return" => {
                    self.bump();
                    let value = if self.is_punct(";") {
                        None
                    } else {
                        Some(self.expr()?)
                    };
                    self.expect_punct(";")?;
                    StmtKind::Return(value)
                }
                "log" if matches!(self.peek_at(1), Tok::Punct(".")) => self.log_stmt()?,
                _ => {
                    let kind = self.simple_stmt()?;
                    self.expect_punct(";")?;
                    kind
                }
            },
            other => return self.error(format!("expected statement, found {}", describe(&other))),
        };
        Ok(Stmt { id: 0, line, kind })
    }

    /// Assignment, declaration, or call without the trailing `;`.
    fn simple_stmt(&mut self) -> Result<StmtKind, CorpusError> {
        if let Some(ty) = self.peek_type() {
            if ty == Type::Void {
                return self.error("`void` is not a variable type");
            }
            self.bump();
            let target = self.ident()?;
            self.expect_punct("=")?;
            return self.assign_rhs(Some(ty), target);
        }
        if self.is_kw("calldyn") || self.looks_like_call() {
            let call = self.call(None)?;
            return Ok(StmtKind::Call(call));
        }
        let target = self.ident()?;
        self.expect_punct("=")?;
        self.assign_rhs(None, target)
    }

    fn looks_like_call(&self) -> bool {
        match (self.peek(), self.peek_at(1), self.peek_at(2), self.peek_at(3)) {
            (Tok::Ident(_), Tok::Punct("("), _, _) => true,
            (Tok::Ident(_), Tok::Punct("."), Tok::Ident(_), Tok::Punct("(")) => true,
            _ => false,
        }
    }

    fn assign_rhs(&mut self, ty: Option<Type>, target: String) -> Result<StmtKind, CorpusError> {
        if self.is_kw("calldyn") || self.looks_like_call() {
            let call = self.call(Some((ty, target)))?;
            return Ok(StmtKind::Call(call));
        }
        let value = self.expr()?;
        Ok(StmtKind::Assign { ty, target, value })
    }

    fn call(&mut self, assign: Option<(Option<Type>, String)>) -> Result<CallStmt, CorpusError> {
        let dynamic = if self.is_kw("calldyn") {
            self.bump();
            true
        } else {
            false
        };
        let first = self.ident()?;
        let (qualifier, name) = if self.is_punct(".") {
            self.bump();
            let second = self.ident()?;
            (Some(first), second)
        } else {
            (None, first)
        };
        self.expect_punct("(")?;
        let args = self.args()?;
        self.expect_punct(")")?;
        let (target, written) = if dynamic {
            let Some(iface) = qualifier else {
                return self.error("calldyn requires an `Interface.method` target");
            };
            let key = format!("{iface}.{name}");
            (CallTarget::Dynamic(key.clone()), format!("calldyn {key}"))
        } else {
            match qualifier {
                Some(q) => (
                    CallTarget::Static(format!("{q}.{name}/{}", args.len())),
                    format!("{q}.{name}"),
                ),
                None => (
                    CallTarget::Static(format!("{}.{name}/{}", self.class, args.len())),
                    name,
                ),
            }
        };
        Ok(CallStmt {
            target,
            written,
            args,
            assign,
        })
    }

    fn args(&mut self) -> Result<Vec<Expr>, CorpusError> {
        let mut args = Vec::new();
        if self.is_punct(")") {
            return Ok(args);
        }
        loop {
            args.push(self.expr()?);
            if self.is_punct(",") {
                self.bump();
            } else {
                return Ok(args);
            }
        }
    }

    fn log_stmt(&mut self) -> Result<StmtKind, CorpusError> {
        let (_, column) = self.here();
        self.bump(); // log
        self.expect_punct(".")?;
        let level_name = match self.peek().clone() {
            Tok::Ident(w) => w,
            other => return self.error(format!("expected log level, found {}", describe(&other))),
        };
        let Some(level) = LogLevel::from_method_name(&level_name) else {
            return self.error(format!("unknown log level `{level_name}`"));
        };
        self.bump();
        self.expect_punct("(")?;
        let template = match self.peek().clone() {
            Tok::Str(s) => {
                self.bump();
                s
            }
            other => {
                return self.error(format!("expected template string, found {}", describe(&other)))
            }
        };
        let mut args = Vec::new();
        while self.is_punct(",") {
            self.bump();
            args.push(self.expr()?);
        }
        let placeholders = template.matches("{}").count();
        if placeholders != args.len() {
            return self.error(format!(
                "template has {placeholders} placeholder(s) but {} argument(s)",
                args.len()
            ));
        }
        self.expect_punct(")")?;
        self.expect_punct(";")?;
        Ok(StmtKind::Log(LogCall {
            level,
            template,
            args,
            column,
        }))
    }

    fn if_stmt(&mut self) -> Result<StmtKind, CorpusError> {
        self.expect_kw("if")?;
        self.expect_punct("(")?;
        let cond = self.expr()?;
        self.expect_punct(")")?;
        let then_branch = self.block()?;
        let else_branch = if self.is_kw("else") {
            self.bump();
            if self.is_kw("if") {
                let (line, _) = self.here();
                let nested = self.if_stmt()?;
                Some(vec![Stmt {
                    id: 0,
                    line,
                    kind: nested,
                }])
            } else {
                Some(self.block()?)
            }
        } else {
            None
        };
        Ok(StmtKind::If {
            cond,
            then_branch,
            else_branch,
        })
    }

    fn for_stmt(&mut self) -> Result<StmtKind, CorpusError> {
        self.expect_kw("for")?;
        self.expect_punct("(")?;
        let init = if self.is_punct(";") {
            None
        } else {
            let (line, _) = self.here();
            let kind = self.simple_stmt()?;
            if !matches!(kind, StmtKind::Assign { .. }) {
                return self.error("for-loop initializer must be an assignment");
            }
            Some(Box::new(Stmt { id: 0, line, kind }))
        };
        self.expect_punct(";")?;
        let cond = self.expr()?;
        self.expect_punct(";")?;
        let update = if self.is_punct(")") {
            None
        } else {
            let (line, _) = self.here();
            let target = self.ident()?;
            self.expect_punct("=")?;
            let value = self.expr()?;
            Some(Box::new(Stmt {
                id: 0,
                line,
                kind: StmtKind::Assign {
                    ty: None,
                    target,
                    value,
                },
            }))
        };
        self.expect_punct(")")?;
        let body = self.block()?;
        Ok(StmtKind::For {
            init,
            cond,
            update,
            body,
        })
    }

    fn switch_stmt(&mut self) -> Result<StmtKind, CorpusError> {
        self.expect_kw("switch")?;
        self.expect_punct("(")?;
        let scrutinee = self.expr()?;
        self.expect_punct(")")?;
        self.expect_punct("{")?;
        let mut cases = Vec::new();
        let mut default = None;
        loop {
            if self.is_kw("case") {
                if default.is_some() {
                    return self.error("`case` after `default`");
                }
                self.bump();
                let label = self.literal()?;
                self.expect_punct(":")?;
                cases.push((label, self.block()?));
            } else if self.is_kw("default") {
                if default.is_some() {
                    return self.error("duplicate `default`");
                }
                self.bump();
                self.expect_punct(":")?;
                default = Some(self.block()?);
            } else {
                break;
            }
        }
        self.expect_punct("}")?;
        Ok(StmtKind::Switch {
            scrutinee,
            cases,
            default,
        })
    }

    fn literal(&mut self) -> Result<Expr, CorpusError> {
        let neg = if self.is_punct("-") {
            self.bump();
            true
        } else {
            false
        };
        match self.peek().clone() {
            Tok::Int(i) => {
                self.bump();
                Ok(Expr::Int(if neg { -i } else { i }))
            }
            Tok::Str(s) if !neg => {
                self.bump();
                Ok(Expr::Str(s))
            }
            Tok::Ident(w) if !neg && (w == "true" || w == "false") => {
                self.bump();
                Ok(Expr::Bool(w == "true"))
            }
            other => self.error(format!("expected literal, found {}", describe(&other))),
        }
    }

    fn try_stmt(&mut self) -> Result<StmtKind, CorpusError> {
        self.expect_kw("try")?;
        let body = self.block()?;
        let mut catches = Vec::new();
        while self.is_kw("catch") {
            let (line, _) = self.here();
            self.bump();
            self.expect_punct("(")?;
            let exception = self.ident()?;
            let var = self.ident()?;
            self.expect_punct(")")?;
            let cbody = self.block()?;
            catches.push(CatchClause {
                exception,
                var,
                line,
                body: cbody,
            });
        }
        let finally = if self.is_kw("finally") {
            self.bump();
            Some(self.block()?)
        } else {
            None
        };
        if catches.is_empty() && finally.is_none() {
            return self.error("`try` without `catch` or `finally`");
        }
        Ok(StmtKind::Try {
            body,
            catches,
            finally,
        })
    }

    pub(crate) fn expr(&mut self) -> Result<Expr, CorpusError> {
        self.binary(1)
    }

    fn binary(&mut self, min_prec: u8) -> Result<Expr, CorpusError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Tok::Punct(p) => match binary_op(p) {
                    Some(op) if op.precedence() >= min_prec => op,
                    _ => break,
                },
                _ => break,
            };
            self.bump();
            let rhs = self.binary(op.precedence() + 1)?;
            lhs = Expr::binary(op, lhs, rhs);
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr, CorpusError> {
        if self.is_punct("!") {
            self.bump();
            let e = self.unary()?;
            return Ok(Expr::Unary(UnaryOp::Not, Box::new(e)));
        }
        if self.is_punct("-") {
            self.bump();
            if let Tok::Int(i) = self.peek().clone() {
                self.bump();
                return Ok(Expr::Int(-i));
            }
            let e = self.unary()?;
            return Ok(Expr::Unary(UnaryOp::Neg, Box::new(e)));
        }
        self.primary()
    }

    fn primary(&mut self) -> Result<Expr, CorpusError> {
        match self.peek().clone() {
            Tok::Int(i) => {
                self.bump();
                Ok(Expr::Int(i))
            }
            Tok::Str(s) => {
                self.bump();
                Ok(Expr::Str(s))
            }
            Tok::Punct("(") => {
                self.bump();
                let e = self.expr()?;
                self.expect_punct(")")?;
                Ok(e)
            }
            Tok::Ident(w) if w == "true" || w == "false" => {
                self.bump();
                Ok(Expr::Bool(w == "true"))
            }
            Tok::Ident(_) => {
                if matches!(self.peek_at(1), Tok::Punct("(")) {
                    return self.error("method calls are only allowed as statements or assignment right-hand sides");
                }
                Ok(Expr::Var(self.ident()?))
            }
            other => self.error(format!("expected expression, found {}", describe(&other))),
        }
    }
}

fn binary_op(p: &str) -> Option<BinaryOp> {
    Some(match p {
        "||" => BinaryOp::Or,
        "&&" => BinaryOp::And,
        "==" => BinaryOp::Eq,
        "!=" => BinaryOp::Ne,
        "<" => BinaryOp::Lt,
        "<=" => BinaryOp::Le,
        ">" => BinaryOp::Gt,
        ">=" => BinaryOp::Ge,
        "+" => BinaryOp::Add,
        "-" => BinaryOp::Sub,
        "*" => BinaryOp::Mul,
        "/" => BinaryOp::Div,
        "%" => BinaryOp::Rem,
        _ => return None,
    })
}

fn parse_type(w: &str) -> Option<Type> {
    Some(match w {
        "int" => Type::Int,
        "boolean" => Type::Boolean,
        "String" => Type::Str,
        "void" => Type::Void,
        _ => return None,
    })
}

fn describe(t: &Tok) -> String {
    match t {
        Tok::Ident(w) => format!("`{w}`"),
        Tok::Int(i) => format!("integer {i}"),
        Tok::Str(_) => "string literal".to_string(),
        Tok::Punct(p) => format!("`{p}`"),
        Tok::Eof => "end of file".to_string(),
    }
}

/// Assigns preorder ids matching [`walk_block`] order.
fn number_statements(body: &mut Block) {
    let mut next = 0u32;
    number_block(body, &mut next);
}

fn number_block(block: &mut Block, next: &mut u32) {
    for s in block {
        number_stmt(s, next);
    }
}

fn number_stmt(s: &mut Stmt, next: &mut u32) {
    s.id = *next;
    *next += 1;
    match &mut s.kind {
        StmtKind::If {
            then_branch,
            else_branch,
            ..
        } => {
            number_block(then_branch, next);
            if let Some(e) = else_branch {
                number_block(e, next);
            }
        }
        StmtKind::While { body, .. } => number_block(body, next),
        StmtKind::For {
            init, update, body, ..
        } => {
            if let Some(i) = init {
                number_stmt(i, next);
            }
            number_block(body, next);
            if let Some(u) = update {
                number_stmt(u, next);
            }
        }
        StmtKind::Switch { cases, default, .. } => {
            for (_, b) in cases {
                number_block(b, next);
            }
            if let Some(d) = default {
                number_block(d, next);
            }
        }
        StmtKind::Try {
            body,
            catches,
            finally,
        } => {
            number_block(body, next);
            for c in catches {
                number_block(&mut c.body, next);
            }
            if let Some(f) = finally {
                number_block(f, next);
            }
        }
        _ => {}
    }
}

/// Parses a standalone expression, used when reading expressions back from serialized payloads.
pub fn parse_expr(text: &str) -> Result<Expr, CorpusError> {
    let mut p = Parser::new("<expr>", text)?;
    let e = p.expr()?;
    if !matches!(p.peek(), Tok::Eof) {
        return p.error("trailing input after expression");
    }
    Ok(e)
}
