use std::sync::Arc;

use super::eval::{char_at, char_count, throw, Interp, Unwind};
use super::*;
use crate::vex::Builtin;

fn arity(name: Builtin, args: &[Value], min: usize, max: usize) -> Result<(), Unwind> {
    if args.len() < min || args.len() > max {
        let want = if min == max {
            min.to_string()
        } else if max == usize::MAX {
            format!("at least {min}")
        } else {
            format!("{min}..{max}")
        };
        return throw(format!(
            "@{} takes {want} argument(s), got {}",
            name.name(),
            args.len()
        ));
    }
    Ok(())
}

fn type_error<T>(name: Builtin, args: &[Value]) -> Result<T, Unwind> {
    let kinds: Vec<_> = args.iter().map(|a| a.kind().name()).collect();
    throw(format!(
        "type error: @{}({})",
        name.name(),
        kinds.join(", ")
    ))
}

impl Interp<'_> {
    pub(super) fn builtin(&mut self, name: Builtin, args: Vec<Value>) -> Result<Value, Unwind> {
        use Value::*;
        match name {
            Builtin::Len => {
                arity(name, &args, 1, 1)?;
                Ok(Int(match &args[0] {
                    Str(s) => char_count(s) as i64,
                    List(l) => l.len() as i64,
                    Record(r) => r.len() as i64,
                    File(f) => char_count(&f.content) as i64,
                    _ => return type_error(name, &args),
                }))
            }
            Builtin::Substr => {
                arity(name, &args, 2, 3)?;
                let (Str(s), Int(start)) = (&args[0], &args[1]) else {
                    return type_error(name, &args);
                };
                let count = match args.get(2) {
                    None => None,
                    Some(Int(c)) => Some(*c),
                    Some(_) => return type_error(name, &args),
                };
                if *start < 0 || count.is_some_and(|c| c < 0) {
                    return throw("@substr: negative argument");
                }
                let start = *start as usize;
                let count = count.map(|c| c as usize).unwrap_or(usize::MAX);
                if s.is_ascii() {
                    let a = start.min(s.len());
                    let b = a.saturating_add(count).min(s.len());
                    Ok(Value::str(&s[a..b]))
                } else {
                    Ok(Value::str(s.chars().skip(start).take(count).collect::<String>()))
                }
            }
            Builtin::Concat => {
                if args.iter().all(|a| matches!(a, List(_))) && !args.is_empty() {
                    let mut out = Vec::new();
                    for a in &args {
                        if let List(l) = a {
                            out.extend(l.iter().cloned());
                        }
                    }
                    Ok(Value::list(out))
                } else {
                    let mut out = String::new();
                    for a in &args {
                        out.push_str(&a.display());
                    }
                    Ok(Value::str(out))
                }
            }
            Builtin::Contains => {
                arity(name, &args, 2, 2)?;
                Ok(Bool(match (&args[0], &args[1]) {
                    (Str(h), Str(n)) => h.contains(&**n),
                    (List(l), x) => l.iter().any(|e| e.vex_eq(x)),
                    (Record(r), Str(k)) => r.contains_key(&**k),
                    _ => return type_error(name, &args),
                }))
            }
            Builtin::StartsWith => {
                arity(name, &args, 2, 2)?;
                match (&args[0], &args[1]) {
                    (Str(s), Str(p)) => Ok(Bool(s.starts_with(&**p))),
                    _ => type_error(name, &args),
                }
            }
            Builtin::ToInt => {
                arity(name, &args, 1, 1)?;
                match &args[0] {
                    Int(i) => Ok(Int(*i)),
                    Float(x) if x.is_finite() => Ok(Int(*x as i64)),
                    Bool(b) => Ok(Int(*b as i64)),
                    Str(s) => match s.trim().parse::<i64>() {
                        Ok(i) => Ok(Int(i)),
                        Err(_) => throw("bad int"),
                    },
                    _ => throw("bad int"),
                }
            }
            Builtin::ToFloat => {
                arity(name, &args, 1, 1)?;
                match &args[0] {
                    Int(i) => Ok(Float(*i as f64)),
                    Float(x) => Ok(Float(*x)),
                    Str(s) => match s.trim().parse::<f64>() {
                        Ok(x) => Ok(Float(x)),
                        Err(_) => throw("bad float"),
                    },
                    _ => throw("bad float"),
                }
            }
            Builtin::ToStr => {
                arity(name, &args, 1, 1)?;
                Ok(Value::str(args[0].display()))
            }
            Builtin::CharAt => {
                arity(name, &args, 2, 2)?;
                let (Str(s), Int(i)) = (&args[0], &args[1]) else {
                    return type_error(name, &args);
                };
                match char_at(s, *i) {
                    Some(c) => Ok(Value::str(c)),
                    None => throw(format!("index {i} out of range for string")),
                }
            }
            Builtin::Open => {
                arity(name, &args, 1, 1)?;
                let Str(requested) = &args[0] else {
                    return type_error(name, &args);
                };
                let resolved = self.sandbox.resolve(requested);
                self.sinks.file_events.push(FileEvent {
                    requested: requested.to_string(),
                    resolved: resolved.relative.clone(),
                    allowed: resolved.allowed,
                });
                if !resolved.allowed {
                    return throw(format!("access denied: {requested}"));
                }
                match std::fs::read(self.sandbox.host_path(&resolved.relative)) {
                    Ok(bytes) => Ok(File(FileRef {
                        path: Arc::from(resolved.relative.as_str()),
                        content: Arc::from(String::from_utf8_lossy(&bytes).as_ref()),
                    })),
                    Err(_) => throw(format!("no such file: {requested}")),
                }
            }
            Builtin::ReadFile => {
                arity(name, &args, 1, 1)?;
                match &args[0] {
                    File(f) => Ok(Str(f.content.clone())),
                    _ => type_error(name, &args),
                }
            }
            Builtin::NetSend => {
                arity(name, &args, 2, 2)?;
                self.sinks.net_events.push(NetEvent {
                    url: args[0].display(),
                    body: args[1].display(),
                });
                Ok(Null)
            }
            Builtin::SqlExec => {
                arity(name, &args, 1, 1)?;
                self.sinks.sql_events.push(SqlEvent {
                    query: args[0].display(),
                });
                Ok(Null)
            }
            Builtin::Log => {
                arity(name, &args, 1, 1)?;
                self.sinks.console.push(args[0].display());
                Ok(Null)
            }
        }
    }
}
