use std::collections::HashSet;

use super::ast::*;
use super::lexer::{tokenize, Tok};
use super::{Diagnostic, SourceUnit};

/// Parses one `.vex` file into a module.
pub fn parse_module(source: &SourceUnit) -> Result<ModuleAst, Vec<Diagnostic>> {
    let with_origin = |d: Diagnostic| vec![d.with_origin(&source.origin)];
    if !is_identifier(&source.module_name) {
        return Err(with_origin(Diagnostic::at(
            Span::new(1, 1),
            format!("`{}` is not a valid module name", source.module_name),
        )));
    }
    let tokens = tokenize(&source.text).map_err(with_origin)?;
    let mut p = Parser {
        tokens,
        pos: 0,
        next_site: 0,
        next_branch: 0,
    };
    let functions = p.module().map_err(with_origin)?;

    let mut seen = HashSet::new();
    let mut diags = Vec::new();
    for f in &functions {
        if !seen.insert(f.name.as_str()) {
            diags.push(
                Diagnostic::at(f.span, format!("duplicate function `{}`", f.name))
                    .with_origin(&source.origin),
            );
        }
    }
    if !diags.is_empty() {
        return Err(diags);
    }
    Ok(ModuleAst {
        name: source.module_name.clone(),
        functions,
    })
}

/// Parses a standalone expression (used for literals in manifests).
pub fn parse_expr(text: &str) -> Result<Expr, Diagnostic> {
    let mut p = Parser {
        tokens: tokenize(text)?,
        pos: 0,
        next_site: 0,
        next_branch: 0,
    };
    let e = p.expr()?;
    p.expect(Tok::Eof)?;
    Ok(e)
}

struct Parser {
    tokens: Vec<(Tok, Span)>,
    pos: usize,
    next_site: u32,
    next_branch: u32,
}

type PResult<T> = Result<T, Diagnostic>;

impl Parser {
    fn peek(&self) -> &Tok {
        &self.tokens[self.pos].0
    }

    fn span(&self) -> Span {
        self.tokens[self.pos].1
    }

    fn bump(&mut self) -> Tok {
        let t = self.tokens[self.pos].0.clone();
        if self.pos < self.tokens.len() - 1 {
            self.pos += 1;
        }
        t
    }

    fn eat(&mut self, t: &Tok) -> bool {
        if self.peek() == t {
            self.bump();
            true
        } else {
            false
        }
    }

    fn unexpected(&self, wanted: &str) -> Diagnostic {
        Diagnostic::at(
            self.span(),
            format!("expected {wanted}, found {}", self.peek().describe()),
        )
    }

    fn expect(&mut self, t: Tok) -> PResult<()> {
        if self.eat(&t) {
            Ok(())
        } else {
            Err(self.unexpected(&t.describe()))
        }
    }

    fn ident(&mut self) -> PResult<String> {
        match self.peek() {
            Tok::Ident(_) => match self.bump() {
                Tok::Ident(s) => Ok(s),
                _ => unreachable!(),
            },
            _ => Err(self.unexpected("identifier")),
        }
    }

    fn module(&mut self) -> PResult<Vec<FunctionDecl>> {
        let mut fns = Vec::new();
        while *self.peek() != Tok::Eof {
            fns.push(self.function()?);
        }
        Ok(fns)
    }

    fn function(&mut self) -> PResult<FunctionDecl> {
        let span = self.span();
        let visibility = if self.eat(&Tok::Pub) {
            Visibility::Public
        } else {
            Visibility::Private
        };
        self.expect(Tok::Fn)?;
        let name = self.ident()?;
        self.expect(Tok::LParen)?;
        let mut params: Vec<Param> = Vec::new();
        if !self.eat(&Tok::RParen) {
            loop {
                let pspan = self.span();
                let pname = match self.peek() {
                    Tok::Ident(_) => self.ident()?,
                    _ => return Err(self.unexpected("parameter name or `)`")),
                };
                if params.iter().any(|p| p.name == pname) {
                    return Err(Diagnostic::at(pspan, format!("duplicate parameter `{pname}`")));
                }
                let annotation = if self.eat(&Tok::Colon) {
                    let tspan = self.span();
                    let kw = self.ident()?;
                    Some(TypeAnnot::from_keyword(&kw).ok_or_else(|| {
                        Diagnostic::at(tspan, format!("unknown type annotation `{kw}`"))
                    })?)
                } else {
                    None
                };
                params.push(Param {
                    name: pname,
                    annotation,
                });
                if self.eat(&Tok::RParen) {
                    break;
                }
                self.expect(Tok::Comma)?;
            }
        }
        let body = self.block()?;
        Ok(FunctionDecl {
            name,
            visibility,
            params,
            body,
            span,
        })
    }

    fn block(&mut self) -> PResult<Vec<Stmt>> {
        self.expect(Tok::LBrace)?;
        let mut stmts = Vec::new();
        while !self.eat(&Tok::RBrace) {
            if *self.peek() == Tok::Eof {
                return Err(self.unexpected("`}`"));
            }
            stmts.push(self.stmt()?);
        }
        Ok(stmts)
    }

    fn stmt(&mut self) -> PResult<Stmt> {
        let span = self.span();
        let kind = match self.peek() {
            Tok::Let => {
                self.bump();
                let name = self.ident()?;
                self.expect(Tok::Assign)?;
                let value = self.expr()?;
                self.expect(Tok::Semi)?;
                StmtKind::Let { name, value }
            }
            Tok::If => return self.if_stmt(),
            Tok::While => {
                self.bump();
                let id = self.branch_id();
                let cond = self.expr()?;
                let body = self.block()?;
                StmtKind::While { id, cond, body }
            }
            Tok::Return => {
                self.bump();
                let value = if *self.peek() == Tok::Semi {
                    None
                } else {
                    Some(self.expr()?)
                };
                self.expect(Tok::Semi)?;
                StmtKind::Return(value)
            }
            Tok::Throw => {
                self.bump();
                let value = self.expr()?;
                self.expect(Tok::Semi)?;
                StmtKind::Throw(value)
            }
            Tok::Try => {
                self.bump();
                let body = self.block()?;
                self.expect(Tok::Catch)?;
                let catch_var = self.ident()?;
                let handler = self.block()?;
                StmtKind::Try {
                    body,
                    catch_var,
                    handler,
                }
            }
            _ => {
                let e = self.expr()?;
                if *self.peek() == Tok::Assign {
                    let target = lvalue_of(&e).ok_or_else(|| {
                        Diagnostic::at(span, "left side of `=` is not assignable")
                    })?;
                    self.bump();
                    let value = self.expr()?;
                    self.expect(Tok::Semi)?;
                    StmtKind::Assign { target, value }
                } else {
                    self.expect(Tok::Semi)?;
                    StmtKind::Expr(e)
                }
            }
        };
        Ok(Stmt { kind, span })
    }

    fn if_stmt(&mut self) -> PResult<Stmt> {
        let span = self.span();
        self.expect(Tok::If)?;
        let id = self.branch_id();
        let cond = self.expr()?;
        let then_body = self.block()?;
        let else_body = if self.eat(&Tok::Else) {
            if *self.peek() == Tok::If {
                Some(vec![self.if_stmt()?])
            } else {
                Some(self.block()?)
            }
        } else {
            None
        };
        Ok(Stmt {
            kind: StmtKind::If {
                id,
                cond,
                then_body,
                else_body,
            },
            span,
        })
    }

    fn branch_id(&mut self) -> u32 {
        let id = self.next_branch;
        self.next_branch += 1;
        id
    }

    fn expr(&mut self) -> PResult<Expr> {
        self.binary(1)
    }

    fn binary(&mut self, min_prec: u8) -> PResult<Expr> {
        let mut lhs = self.unary()?;
        loop {
            let Some(op) = binop_of(self.peek()) else {
                break;
            };
            let prec = op.precedence();
            if prec < min_prec {
                break;
            }
            let span = self.span();
            self.bump();
            let rhs = self.binary(prec + 1)?;
            lhs = Expr {
                kind: ExprKind::Binary(op, Box::new(lhs), Box::new(rhs)),
                span,
            };
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> PResult<Expr> {
        let span = self.span();
        let op = match self.peek() {
            Tok::Minus => UnaryOp::Neg,
            Tok::Not => UnaryOp::Not,
            _ => return self.postfix(),
        };
        self.bump();
        let inner = self.unary()?;
        Ok(Expr {
            kind: ExprKind::Unary(op, Box::new(inner)),
            span,
        })
    }

    fn postfix(&mut self) -> PResult<Expr> {
        let mut e = self.primary()?;
        loop {
            let span = self.span();
            match self.peek() {
                Tok::Dot => {
                    self.bump();
                    let name = self.ident()?;
                    e = Expr {
                        kind: ExprKind::Field(Box::new(e), name),
                        span,
                    };
                }
                Tok::LBracket => {
                    self.bump();
                    let idx = self.expr()?;
                    self.expect(Tok::RBracket)?;
                    e = Expr {
                        kind: ExprKind::Index(Box::new(e), Box::new(idx)),
                        span,
                    };
                }
                _ => return Ok(e),
            }
        }
    }

    fn args(&mut self) -> PResult<Vec<Expr>> {
        self.expect(Tok::LParen)?;
        let mut args = Vec::new();
        if self.eat(&Tok::RParen) {
            return Ok(args);
        }
        loop {
            args.push(self.expr()?);
            if self.eat(&Tok::RParen) {
                return Ok(args);
            }
            self.expect(Tok::Comma)?;
        }
    }

    fn call_site(&mut self) -> u32 {
        let id = self.next_site;
        self.next_site += 1;
        id
    }

    fn primary(&mut self) -> PResult<Expr> {
        let span = self.span();
        let lit = |l: Literal| Expr {
            kind: ExprKind::Literal(l),
            span,
        };
        match self.peek().clone() {
            Tok::Int(i) => {
                self.bump();
                Ok(lit(Literal::Int(i)))
            }
            Tok::Float(x) => {
                self.bump();
                Ok(lit(Literal::Float(x)))
            }
            Tok::Str(s) => {
                self.bump();
                Ok(lit(Literal::Str(s)))
            }
            Tok::True => {
                self.bump();
                Ok(lit(Literal::Bool(true)))
            }
            Tok::False => {
                self.bump();
                Ok(lit(Literal::Bool(false)))
            }
            Tok::Null => {
                self.bump();
                Ok(lit(Literal::Null))
            }
            Tok::LParen => {
                self.bump();
                let e = self.expr()?;
                self.expect(Tok::RParen)?;
                Ok(e)
            }
            Tok::LBracket => {
                self.bump();
                let mut items = Vec::new();
                if !self.eat(&Tok::RBracket) {
                    loop {
                        items.push(self.expr()?);
                        if self.eat(&Tok::RBracket) {
                            break;
                        }
                        self.expect(Tok::Comma)?;
                    }
                }
                Ok(Expr {
                    kind: ExprKind::List(items),
                    span,
                })
            }
            Tok::LBrace => {
                self.bump();
                let mut fields: Vec<(String, Expr)> = Vec::new();
                if !self.eat(&Tok::RBrace) {
                    loop {
                        let kspan = self.span();
                        let key = match self.bump() {
                            Tok::Ident(s) | Tok::Str(s) => s,
                            _ => {
                                self.pos -= 1;
                                return Err(self.unexpected("record field name"));
                            }
                        };
                        if fields.iter().any(|(k, _)| *k == key) {
                            return Err(Diagnostic::at(kspan, format!("duplicate field `{key}`")));
                        }
                        self.expect(Tok::Colon)?;
                        fields.push((key, self.expr()?));
                        if self.eat(&Tok::RBrace) {
                            break;
                        }
                        self.expect(Tok::Comma)?;
                    }
                }
                Ok(Expr {
                    kind: ExprKind::Record(fields),
                    span,
                })
            }
            Tok::At => {
                self.bump();
                let nspan = self.span();
                let name = self.ident()?;
                let builtin = Builtin::from_name(&name)
                    .ok_or_else(|| Diagnostic::at(nspan, format!("unknown builtin `@{name}`")))?;
                let args = self.args()?;
                Ok(Expr {
                    kind: ExprKind::Builtin {
                        name: builtin,
                        args,
                    },
                    span,
                })
            }
            Tok::Ident(name) => {
                self.bump();
                if *self.peek() == Tok::ColonColon {
                    self.bump();
                    let function = self.ident()?;
                    if *self.peek() != Tok::LParen {
                        return Err(self.unexpected("`(` after qualified name"));
                    }
                    let site = self.call_site();
                    let args = self.args()?;
                    Ok(Expr {
                        kind: ExprKind::Call {
                            site,
                            callee: Callee::Qualified(QualifiedName::new(name, function)),
                            args,
                        },
                        span,
                    })
                } else if *self.peek() == Tok::LParen {
                    let site = self.call_site();
                    let args = self.args()?;
                    Ok(Expr {
                        kind: ExprKind::Call {
                            site,
                            callee: Callee::Local(name),
                            args,
                        },
                        span,
                    })
                } else {
                    Ok(Expr {
                        kind: ExprKind::Var(name),
                        span,
                    })
                }
            }
            _ => Err(self.unexpected("expression")),
        }
    }
}

fn binop_of(t: &Tok) -> Option<BinOp> {
    Some(match t {
        Tok::Plus => BinOp::Add,
        Tok::Minus => BinOp::Sub,
        Tok::Star => BinOp::Mul,
        Tok::Slash => BinOp::Div,
        Tok::Percent => BinOp::Rem,
        Tok::EqEq => BinOp::Eq,
        Tok::NotEq => BinOp::Ne,
        Tok::Lt => BinOp::Lt,
        Tok::Le => BinOp::Le,
        Tok::Gt => BinOp::Gt,
        Tok::Ge => BinOp::Ge,
        Tok::And => BinOp::And,
        Tok::Or => BinOp::Or,
        _ => return None,
    })
}

fn lvalue_of(e: &Expr) -> Option<LValue> {
    match &e.kind {
        ExprKind::Var(name) => Some(LValue {
            root: name.clone(),
            path: Vec::new(),
        }),
        ExprKind::Field(base, field) => {
            let mut lv = lvalue_of(base)?;
            lv.path.push(Accessor::Field(field.clone()));
            Some(lv)
        }
        ExprKind::Index(base, idx) => {
            let mut lv = lvalue_of(base)?;
            lv.path.push(Accessor::Index((**idx).clone()));
            Some(lv)
        }
        _ => None,
    }
}
