use std::collections::HashMap;
use std::sync::Arc;

use super::*;
use crate::vex::{Accessor, BinOp, ExprKind, Expr, Literal, Stmt, StmtKind, UnaryOp};

pub(super) enum Unwind {
    Throw(Value),
    StepBudget,
    DepthBudget,
}

enum Flow {
    Normal,
    Return(Value),
}

type EResult<T> = Result<T, Unwind>;

pub(super) struct Interp<'a> {
    program: &'a Program,
    budgets: Budgets,
    hooks: &'a mut dyn Hooks,
    pub(super) sandbox: &'a Sandbox,
    pub(super) sinks: SinkLog,
    steps: u64,
    depth: usize,
    max_depth_seen: usize,
}

struct Frame {
    module: usize,
    vars: HashMap<String, Value>,
}

pub(super) fn throw<T>(msg: impl Into<String>) -> EResult<T> {
    Err(Unwind::Throw(Value::str(msg.into())))
}

pub(super) fn run(
    program: &Program,
    entry: FnId,
    args: Vec<Value>,
    budgets: Budgets,
    hooks: &mut dyn Hooks,
    sandbox: &Sandbox,
) -> ExecutionOutcome {
    let mut it = Interp {
        program,
        budgets,
        hooks,
        sandbox,
        sinks: SinkLog::default(),
        steps: 0,
        depth: 0,
        max_depth_seen: 0,
    };
    let kind = match it.call(entry, args) {
        Ok(value) => OutcomeKind::Returned { value },
        Err(Unwind::Throw(v)) => OutcomeKind::UncaughtException { message: v.display() },
        Err(Unwind::StepBudget) => OutcomeKind::StepBudgetExceeded,
        Err(Unwind::DepthBudget) => OutcomeKind::DepthBudgetExceeded,
    };
    ExecutionOutcome {
        kind,
        steps_used: it.steps,
        max_depth_seen: it.max_depth_seen,
        sinks: it.sinks,
    }
}

fn is_scalar(v: &Value) -> bool {
    matches!(
        v,
        Value::Int(_) | Value::Float(_) | Value::Bool(_) | Value::Str(_)
    )
}

impl<'a> Interp<'a> {
    fn tick(&mut self) -> EResult<()> {
        if self.steps >= self.budgets.max_steps {
            return Err(Unwind::StepBudget);
        }
        self.steps += 1;
        Ok(())
    }

    fn call(&mut self, func: FnId, mut args: Vec<Value>) -> EResult<Value> {
        if self.depth >= self.budgets.max_call_depth {
            return Err(Unwind::DepthBudget);
        }
        self.depth += 1;
        self.max_depth_seen = self.max_depth_seen.max(self.depth);
        let depth = self.depth;
        self.hooks.on_enter(self.program, func, &mut args, depth);

        let program = self.program;
        let decl = program.decl(func);
        let mut frame = Frame {
            module: program.info(func).module,
            vars: decl
                .params
                .iter()
                .map(|p| p.name.clone())
                .zip(args)
                .collect(),
        };
        let result = stacker::maybe_grow(64 * 1024, 2 * 1024 * 1024, || {
            self.exec_block(&decl.body, &mut frame)
        });
        let result = match result {
            Ok(Flow::Return(v)) => Ok(v),
            Ok(Flow::Normal) => Ok(Value::Null),
            Err(u) => Err(u),
        };
        match &result {
            Ok(v) => self.hooks.on_exit(func, CallExit::Returned(v), depth),
            Err(Unwind::Throw(_)) => self.hooks.on_exit(func, CallExit::Threw, depth),
            Err(_) => self.hooks.on_exit(func, CallExit::Aborted, depth),
        }
        self.depth -= 1;
        result
    }

    fn exec_block(&mut self, stmts: &[Stmt], frame: &mut Frame) -> EResult<Flow> {
        for s in stmts {
            if let Flow::Return(v) = self.exec(s, frame)? {
                return Ok(Flow::Return(v));
            }
        }
        Ok(Flow::Normal)
    }

    fn exec(&mut self, stmt: &Stmt, frame: &mut Frame) -> EResult<Flow> {
        self.tick()?;
        match &stmt.kind {
            StmtKind::Let { name, value } => {
                let v = self.eval(value, frame)?;
                frame.vars.insert(name.clone(), v);
            }
            StmtKind::Assign { target, value } => {
                let mut keys = Vec::with_capacity(target.path.len());
                for acc in &target.path {
                    keys.push(match acc {
                        Accessor::Field(f) => Key::Field(f),
                        Accessor::Index(e) => Key::Index(self.eval(e, frame)?),
                    });
                }
                let v = self.eval(value, frame)?;
                let Some(slot) = frame.vars.get_mut(&target.root) else {
                    return throw(format!("undefined variable `{}`", target.root));
                };
                assign_into(slot, &keys, v)?;
            }
            StmtKind::If {
                id,
                cond,
                then_body,
                else_body,
            } => {
                let taken = self.condition(*id, cond, frame)?;
                if taken {
                    return self.exec_block(then_body, frame);
                } else if let Some(b) = else_body {
                    return self.exec_block(b, frame);
                }
            }
            StmtKind::While { id, cond, body } => loop {
                if !self.condition(*id, cond, frame)? {
                    break;
                }
                if let Flow::Return(v) = self.exec_block(body, frame)? {
                    return Ok(Flow::Return(v));
                }
                self.tick()?;
            },
            StmtKind::Return(e) => {
                let v = match e {
                    Some(e) => self.eval(e, frame)?,
                    None => Value::Null,
                };
                return Ok(Flow::Return(v));
            }
            StmtKind::Throw(e) => {
                let v = self.eval(e, frame)?;
                return Err(Unwind::Throw(v));
            }
            StmtKind::Try {
                body,
                catch_var,
                handler,
            } => match self.exec_block(body, frame) {
                Err(Unwind::Throw(v)) => {
                    self.hooks.on_catch();
                    frame.vars.insert(catch_var.clone(), v);
                    return self.exec_block(handler, frame);
                }
                other => return other,
            },
            StmtKind::Expr(e) => {
                self.eval(e, frame)?;
            }
        }
        Ok(Flow::Normal)
    }

    fn condition(&mut self, id: u32, cond: &Expr, frame: &mut Frame) -> EResult<bool> {
        let site = BranchSite {
            module: frame.module,
            id,
        };
        if let ExprKind::Binary(op, l, r) = &cond.kind {
            if op.is_comparison() {
                self.tick()?;
                let lv = self.eval(l, frame)?;
                let rv = self.eval(r, frame)?;
                let taken = match binary(*op, &lv, &rv)? {
                    Value::Bool(b) => b,
                    _ => unreachable!("comparisons yield bool"),
                };
                let cmp = (is_scalar(&lv) && is_scalar(&rv)).then_some(Comparison {
                    op: *op,
                    lhs: &lv,
                    rhs: &rv,
                });
                self.hooks.on_branch(site, taken, cmp);
                return Ok(taken);
            }
        }
        match self.eval(cond, frame)? {
            Value::Bool(b) => {
                self.hooks.on_branch(site, b, None);
                Ok(b)
            }
            other => throw(format!("condition is {}, not bool", other.kind().name())),
        }
    }

    fn eval(&mut self, e: &Expr, frame: &mut Frame) -> EResult<Value> {
        self.tick()?;
        match &e.kind {
            ExprKind::Literal(l) => Ok(match l {
                Literal::Null => Value::Null,
                Literal::Bool(b) => Value::Bool(*b),
                Literal::Int(i) => Value::Int(*i),
                Literal::Float(x) => Value::Float(*x),
                Literal::Str(s) => Value::str(s),
            }),
            ExprKind::Var(name) => match frame.vars.get(name) {
                Some(v) => Ok(v.clone()),
                None => throw(format!("undefined variable `{name}`")),
            },
            ExprKind::List(items) => {
                let mut out = Vec::with_capacity(items.len());
                for i in items {
                    out.push(self.eval(i, frame)?);
                }
                Ok(Value::list(out))
            }
            ExprKind::Record(fields) => {
                let mut r = Record::with_capacity(fields.len());
                for (k, v) in fields {
                    let v = self.eval(v, frame)?;
                    r.insert(k.clone(), v);
                }
                Ok(Value::Record(Arc::new(r)))
            }
            ExprKind::Field(base, name) => {
                let b = self.eval(base, frame)?;
                get_field(&b, name)
            }
            ExprKind::Index(base, idx) => {
                let b = self.eval(base, frame)?;
                let i = self.eval(idx, frame)?;
                index(&b, &i)
            }
            ExprKind::Unary(op, inner) => {
                let v = self.eval(inner, frame)?;
                match (op, v) {
                    (UnaryOp::Neg, Value::Int(i)) => Ok(Value::Int(i.wrapping_neg())),
                    (UnaryOp::Neg, Value::Float(x)) => Ok(Value::Float(-x)),
                    (UnaryOp::Not, Value::Bool(b)) => Ok(Value::Bool(!b)),
                    (op, v) => throw(format!(
                        "type error: cannot apply `{}` to {}",
                        if *op == UnaryOp::Neg { "-" } else { "not" },
                        v.kind().name()
                    )),
                }
            }
            ExprKind::Binary(op @ (BinOp::And | BinOp::Or), l, r) => {
                let lv = self.eval(l, frame)?;
                let Value::Bool(lb) = lv else {
                    return throw(format!("type error: `{}` on {}", op.symbol(), lv.kind().name()));
                };
                if (*op == BinOp::And && !lb) || (*op == BinOp::Or && lb) {
                    return Ok(Value::Bool(lb));
                }
                match self.eval(r, frame)? {
                    Value::Bool(rb) => Ok(Value::Bool(rb)),
                    other => throw(format!(
                        "type error: `{}` on {}",
                        op.symbol(),
                        other.kind().name()
                    )),
                }
            }
            ExprKind::Binary(op, l, r) => {
                let lv = self.eval(l, frame)?;
                let rv = self.eval(r, frame)?;
                binary(*op, &lv, &rv)
            }
            ExprKind::Call { site, args, .. } => {
                let target = self
                    .program
                    .resolve_call(frame.module, *site)
                    .expect("program was resolved at build time");
                let mut vals = Vec::with_capacity(args.len());
                for a in args {
                    vals.push(self.eval(a, frame)?);
                }
                self.call(target, vals)
            }
            ExprKind::Builtin { name, args } => {
                let mut vals = Vec::with_capacity(args.len());
                for a in args {
                    vals.push(self.eval(a, frame)?);
                }
                self.builtin(*name, vals)
            }
        }
    }
}

enum Key<'e> {
    Field(&'e str),
    Index(Value),
}

fn assign_into(slot: &mut Value, keys: &[Key<'_>], v: Value) -> EResult<()> {
    let Some((first, rest)) = keys.split_first() else {
        *slot = v;
        return Ok(());
    };
    match (slot, first) {
        (Value::Record(r), Key::Field(f)) => {
            let r = Arc::make_mut(r);
            if rest.is_empty() {
                r.insert(f.to_string(), v);
                Ok(())
            } else {
                match r.get_mut(*f) {
                    Some(inner) => assign_into(inner, rest, v),
                    None => throw(format!("missing field `{f}`")),
                }
            }
        }
        (Value::Record(r), Key::Index(Value::Str(k))) => {
            let r = Arc::make_mut(r);
            if rest.is_empty() {
                r.insert(k.to_string(), v);
                Ok(())
            } else {
                match r.get_mut(&**k) {
                    Some(inner) => assign_into(inner, rest, v),
                    None => throw(format!("missing field `{k}`")),
                }
            }
        }
        (Value::List(items), Key::Index(Value::Int(i))) => {
            let len = items.len();
            if *i < 0 || *i as usize >= len {
                return throw(format!("index {i} out of range for list of length {len}"));
            }
            let items = Arc::make_mut(items);
            assign_into(&mut items[*i as usize], rest, v)
        }
        (other, _) => throw(format!("type error: cannot assign into {}", other.kind().name())),
    }
}

pub(super) fn get_field(b: &Value, name: &str) -> EResult<Value> {
    match b {
        Value::Record(r) => match r.get(name) {
            Some(v) => Ok(v.clone()),
            None => throw(format!("missing field `{name}`")),
        },
        other => throw(format!("type error: field `{name}` on {}", other.kind().name())),
    }
}

pub(super) fn char_count(s: &str) -> usize {
    if s.is_ascii() {
        s.len()
    } else {
        s.chars().count()
    }
}

pub(super) fn char_at(s: &str, i: i64) -> Option<&str> {
    if i < 0 {
        return None;
    }
    let i = i as usize;
    if s.is_ascii() {
        return s.get(i..i + 1);
    }
    let (start, c) = s.char_indices().nth(i)?;
    Some(&s[start..start + c.len_utf8()])
}

fn index(b: &Value, i: &Value) -> EResult<Value> {
    match (b, i) {
        (Value::List(items), Value::Int(n)) => {
            if *n < 0 || *n as usize >= items.len() {
                throw(format!("index {n} out of range for list of length {}", items.len()))
            } else {
                Ok(items[*n as usize].clone())
            }
        }
        (Value::Str(s), Value::Int(n)) => match char_at(s, *n) {
            Some(c) => Ok(Value::str(c)),
            None => throw(format!("index {n} out of range for string")),
        },
        (Value::Record(_), Value::Str(k)) => get_field(b, k),
        (b, i) => throw(format!(
            "type error: cannot index {} with {}",
            b.kind().name(),
            i.kind().name()
        )),
    }
}

fn num_pair(a: &Value, b: &Value) -> Option<(f64, f64)> {
    let f = |v: &Value| match v {
        Value::Int(i) => Some(*i as f64),
        Value::Float(x) => Some(*x),
        _ => None,
    };
    Some((f(a)?, f(b)?))
}

pub(super) fn binary(op: BinOp, l: &Value, r: &Value) -> EResult<Value> {
    use Value::*;
    let type_error = || {
        throw(format!(
            "type error: {} {} {}",
            l.kind().name(),
            op.symbol(),
            r.kind().name()
        ))
    };
    match op {
        BinOp::Eq => return Ok(Bool(l.vex_eq(r))),
        BinOp::Ne => return Ok(Bool(!l.vex_eq(r))),
        BinOp::Lt | BinOp::Le | BinOp::Gt | BinOp::Ge => {
            let ord = match (l, r) {
                (Int(a), Int(b)) => a.partial_cmp(b),
                (Str(a), Str(b)) => a.partial_cmp(b),
                _ => match num_pair(l, r) {
                    Some((a, b)) => a.partial_cmp(&b),
                    None => return type_error(),
                },
            };
            let res = match ord {
                None => false,
                Some(o) => match op {
                    BinOp::Lt => o.is_lt(),
                    BinOp::Le => o.is_le(),
                    BinOp::Gt => o.is_gt(),
                    _ => o.is_ge(),
                },
            };
            return Ok(Bool(res));
        }
        _ => {}
    }
    match (op, l, r) {
        (BinOp::Add, Str(a), b) => Ok(Value::str(format!("{a}{}", b.display()))),
        (BinOp::Add, a, Str(b)) => Ok(Value::str(format!("{}{b}", a.display()))),
        (BinOp::Add, List(a), List(b)) => {
            let mut v = Vec::with_capacity(a.len() + b.len());
            v.extend(a.iter().cloned());
            v.extend(b.iter().cloned());
            Ok(Value::list(v))
        }
        (BinOp::Add, Int(a), Int(b)) => Ok(Int(a.wrapping_add(*b))),
        (BinOp::Sub, Int(a), Int(b)) => Ok(Int(a.wrapping_sub(*b))),
        (BinOp::Mul, Int(a), Int(b)) => Ok(Int(a.wrapping_mul(*b))),
        (BinOp::Div | BinOp::Rem, Int(_), Int(0)) => throw("division by zero"),
        (BinOp::Div, Int(a), Int(b)) => Ok(Int(a.wrapping_div(*b))),
        (BinOp::Rem, Int(a), Int(b)) => Ok(Int(a.wrapping_rem(*b))),
        (BinOp::Add | BinOp::Sub | BinOp::Mul | BinOp::Div | BinOp::Rem, _, _) => {
            match num_pair(l, r) {
                Some((a, b)) => Ok(Float(match op {
                    BinOp::Add => a + b,
                    BinOp::Sub => a - b,
                    BinOp::Mul => a * b,
                    BinOp::Div => a / b,
                    _ => a % b,
                })),
                None => type_error(),
            }
        }
        _ => type_error(),
    }
}
