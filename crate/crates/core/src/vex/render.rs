//! Canonical pretty-printer. `parse(render(m))` is structurally equal to `m`.

use std::fmt::Write;

use super::ast::*;

pub fn render_module(m: &ModuleAst) -> String {
    let mut out = String::new();
    for (i, f) in m.functions.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        render_function(f, &mut out);
    }
    out
}

fn render_function(f: &FunctionDecl, out: &mut String) {
    if f.is_public() {
        out.push_str("pub ");
    }
    out.push_str("fn ");
    out.push_str(&f.name);
    out.push('(');
    for (i, p) in f.params.iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        out.push_str(&p.name);
        if let Some(t) = p.annotation {
            out.push_str(": ");
            out.push_str(t.keyword());
        }
    }
    out.push_str(") ");
    render_block(&f.body, 0, out);
    out.push('\n');
}

fn indent(level: usize, out: &mut String) {
    for _ in 0..level {
        out.push_str("    ");
    }
}

fn render_block(stmts: &[Stmt], level: usize, out: &mut String) {
    out.push_str("{\n");
    for s in stmts {
        indent(level + 1, out);
        render_stmt(s, level + 1, out);
        out.push('\n');
    }
    indent(level, out);
    out.push('}');
}

fn render_stmt(s: &Stmt, level: usize, out: &mut String) {
    match &s.kind {
        StmtKind::Let { name, value } => {
            let _ = write!(out, "let {name} = {};", render_expr(value));
        }
        StmtKind::Assign { target, value } => {
            out.push_str(&target.root);
            for acc in &target.path {
                match acc {
                    Accessor::Field(f) => {
                        out.push('.');
                        out.push_str(f);
                    }
                    Accessor::Index(e) => {
                        let _ = write!(out, "[{}]", render_expr(e));
                    }
                }
            }
            let _ = write!(out, " = {};", render_expr(value));
        }
        StmtKind::If {
            cond,
            then_body,
            else_body,
            ..
        } => {
            let _ = write!(out, "if {} ", render_expr(cond));
            render_block(then_body, level, out);
            if let Some(else_body) = else_body {
                out.push_str(" else ");
                match else_body.as_slice() {
                    [only @ Stmt {
                        kind: StmtKind::If { .. },
                        ..
                    }] => render_stmt(only, level, out),
                    _ => render_block(else_body, level, out),
                }
            }
        }
        StmtKind::While { cond, body, .. } => {
            let _ = write!(out, "while {} ", render_expr(cond));
            render_block(body, level, out);
        }
        StmtKind::Return(None) => out.push_str("return;"),
        StmtKind::Return(Some(e)) => {
            let _ = write!(out, "return {};", render_expr(e));
        }
        StmtKind::Throw(e) => {
            let _ = write!(out, "throw {};", render_expr(e));
        }
        StmtKind::Try {
            body,
            catch_var,
            handler,
        } => {
            out.push_str("try ");
            render_block(body, level, out);
            let _ = write!(out, " catch {catch_var} ");
            render_block(handler, level, out);
        }
        StmtKind::Expr(e) => {
            let _ = write!(out, "{};", render_expr(e));
        }
    }
}

pub fn render_expr(e: &Expr) -> String {
    let mut out = String::new();
    expr_into(e, &mut out);
    out
}

// Unary and postfix bind tighter than any binary operator.
const UNARY_PREC: u8 = 7;

fn prec_of(e: &Expr) -> u8 {
    match &e.kind {
        ExprKind::Binary(op, _, _) => op.precedence(),
        ExprKind::Unary(_, _) => UNARY_PREC,
        ExprKind::Literal(Literal::Int(i)) if *i < 0 => UNARY_PREC,
        ExprKind::Literal(Literal::Float(x)) if x.is_sign_negative() || !x.is_finite() => {
            UNARY_PREC
        }
        _ => 8,
    }
}

fn child_into(e: &Expr, min: u8, out: &mut String) {
    if prec_of(e) < min {
        out.push('(');
        expr_into(e, out);
        out.push(')');
    } else {
        expr_into(e, out);
    }
}

fn args_into(args: &[Expr], out: &mut String) {
    out.push('(');
    for (i, a) in args.iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        expr_into(a, out);
    }
    out.push(')');
}

fn expr_into(e: &Expr, out: &mut String) {
    match &e.kind {
        ExprKind::Literal(l) => literal_into(l, out),
        ExprKind::Var(v) => out.push_str(v),
        ExprKind::List(items) => {
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push_str(", ");
                }
                expr_into(item, out);
            }
            out.push(']');
        }
        ExprKind::Record(fields) => {
            out.push('{');
            for (i, (k, v)) in fields.iter().enumerate() {
                if i > 0 {
                    out.push_str(", ");
                }
                if is_identifier(k) && !super::lexer::is_keyword(k) {
                    out.push_str(k);
                } else {
                    out.push_str(&quote(k));
                }
                out.push_str(": ");
                expr_into(v, out);
            }
            out.push('}');
        }
        ExprKind::Field(base, name) => {
            child_into(base, 8, out);
            out.push('.');
            out.push_str(name);
        }
        ExprKind::Index(base, idx) => {
            child_into(base, 8, out);
            out.push('[');
            expr_into(idx, out);
            out.push(']');
        }
        ExprKind::Unary(op, inner) => {
            out.push_str(match op {
                UnaryOp::Neg => "-",
                UnaryOp::Not => "not ",
            });
            // `- -x` must not lex as a single token run; parenthesize nested unaries.
            child_into(inner, UNARY_PREC + 1, out);
        }
        ExprKind::Binary(op, lhs, rhs) => {
            let p = op.precedence();
            child_into(lhs, p, out);
            out.push(' ');
            out.push_str(op.symbol());
            out.push(' ');
            child_into(rhs, p + 1, out);
        }
        ExprKind::Call { callee, args, .. } => {
            match callee {
                Callee::Local(name) => out.push_str(name),
                Callee::Qualified(q) => {
                    let _ = write!(out, "{q}");
                }
            }
            args_into(args, out);
        }
        ExprKind::Builtin { name, args } => {
            out.push('@');
            out.push_str(name.name());
            args_into(args, out);
        }
    }
}

fn literal_into(l: &Literal, out: &mut String) {
    match l {
        Literal::Null => out.push_str("null"),
        Literal::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Literal::Int(i) => {
            let _ = write!(out, "{i}");
        }
        Literal::Float(x) => out.push_str(&render_float(*x)),
        Literal::Str(s) => out.push_str(&quote(s)),
    }
}

/// Float text that re-lexes to the same bits (finite values only).
pub fn render_float(x: f64) -> String {
    if x.is_nan() {
        return "(0.0 / 0.0)".to_string();
    }
    if x.is_infinite() {
        return if x > 0.0 { "(1.0 / 0.0)" } else { "(-1.0 / 0.0)" }.to_string();
    }
    let s = format!("{x:?}");
    if s.contains('.') || s.contains('e') {
        // `1e300` lexes as float; `5e-7` too. Ensure a digit follows any '.'.
        s
    } else {
        format!("{s}.0")
    }
}

pub fn quote(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            '\r' => out.push_str("\\r"),
            '\0' => out.push_str("\\0"),
            c if c.is_control() => {
                let _ = write!(out, "\\u{{{:x}}}", c as u32);
            }
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

#[cfg(test)]
mod tests {
    use super::super::{parse_module, SourceUnit};
    use super::*;

    fn round_trip(text: &str) {
        let m = parse_module(&SourceUnit::new("m", text, "m.vex")).unwrap();
        let rendered = render_module(&m);
        let again = parse_module(&SourceUnit::new("m", &rendered, "m.vex"))
            .unwrap_or_else(|e| panic!("re-parse failed: {e:?}\n{rendered}"));
        assert_eq!(m.without_spans(), again.without_spans(), "\n{rendered}");
    }

    #[test]
    fn renders_control_flow() {
        round_trip(
            r#"
            pub fn f(x: str, n) {
                let acc = [];
                while n > 0 { n = n - 1; acc[0] = {a: 1, "@k": -2.5}; }
                if x == "a" { return 1; } else if x == "b" { return 2; } else { throw "no"; }
                try { m::g(x); } catch e { @log(e); }
                return -(1 - 2) - (3 - 4) * 5 / -x.len;
            }
            fn g() { return not (true and false) or 1 - -1 == 2; }
            "#,
        );
    }

    #[test]
    fn float_text_round_trips() {
        for x in [0.1, 1.0, 1e300, -2.5e-7, 123456789.125] {
            let e = super::super::parser::parse_expr(&render_float(x)).unwrap();
            let v = match e.kind {
                ExprKind::Literal(Literal::Float(v)) => v,
                ExprKind::Unary(UnaryOp::Neg, inner) => match inner.kind {
                    ExprKind::Literal(Literal::Float(v)) => -v,
                    _ => panic!(),
                },
                _ => panic!(),
            };
            assert_eq!(v.to_bits(), x.to_bits());
        }
    }

    #[test]
    fn quoting_escapes() {
        assert_eq!(quote("a\"b\\\n"), r#""a\"b\\\n""#);
    }
}
