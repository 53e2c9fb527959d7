use rand::seq::SliceRandom;
use rand::Rng;

use super::GaConfig;
use crate::analysis::EntryCandidate;
use crate::extract::ExploitPayload;
use crate::interp::{Record, Value, ValueKind};
use crate::test_case::TestCase;
use crate::vex::{Literal, ModuleKind, Program, TypeAnnot};

/// Longest payload fragment a single mutation may splice in.
pub const MAX_PAYLOAD_FRAGMENT: usize = 8;

const ALPHABET: &[u8] = b"abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789 _-.:/{}[]\"'=<>$@!%&*()+,;?#\\";

/// Literals harvested from the project, plus fragments of the payload.
#[derive(Debug, Clone, Default)]
pub struct SearchSpace {
    pub strings: Vec<String>,
    pub ints: Vec<i64>,
    pub floats: Vec<f64>,
    pub payload_strings: Vec<String>,
    pub payload_numbers: Vec<Value>,
    pub payload_fields: Vec<String>,
    pub payload_kind: Option<ValueKind>,
}

impl SearchSpace {
    pub fn new(program: &Program, payload: &ExploitPayload) -> Self {
        let mut s = SearchSpace {
            strings: program.string_literals(ModuleKind::Project),
            ..Default::default()
        };
        let project_fns: Vec<_> = program
            .function_ids()
            .filter(|&f| program.kind_of(f) == ModuleKind::Project)
            .collect();
        for lit in program.literals_in(&project_fns) {
            match lit {
                Literal::Int(i) => s.ints.push(i),
                Literal::Float(x) => s.floats.push(x),
                _ => {}
            }
        }
        s.ints.sort_unstable();
        s.ints.dedup();
        s.floats.sort_by(f64::total_cmp);
        s.floats.dedup();
        for v in &payload.values {
            s.harvest(v);
        }
        s.payload_kind = payload.values.get(payload.primary_index).map(Value::kind);
        s
    }

    fn harvest(&mut self, v: &Value) {
        match v {
            Value::Str(x) if !x.is_empty() => self.payload_strings.push(x.to_string()),
            Value::Int(_) | Value::Float(_) => self.payload_numbers.push(v.clone()),
            Value::List(items) => items.iter().for_each(|i| self.harvest(i)),
            Value::Record(r) => {
                for (k, x) in r.iter() {
                    self.payload_fields.push(k.clone());
                    self.harvest(x);
                }
            }
            Value::File(f) if !f.content.is_empty() => self.payload_strings.push(f.content.to_string()),
            _ => {}
        }
    }

    /// A random contiguous slice of a payload string, at most
    /// [`MAX_PAYLOAD_FRAGMENT`] characters.
    fn payload_fragment(&self, rng: &mut impl Rng) -> Option<String> {
        let s = self.payload_strings.choose(rng)?;
        let chars: Vec<char> = s.chars().collect();
        let len = rng.gen_range(1..=MAX_PAYLOAD_FRAGMENT.min(chars.len()));
        let start = rng.gen_range(0..=chars.len() - len);
        Some(chars[start..start + len].iter().collect())
    }
}

fn random_char(rng: &mut impl Rng) -> char {
    ALPHABET[rng.gen_range(0..ALPHABET.len())] as char
}

fn random_string(rng: &mut impl Rng) -> String {
    let n = rng.gen_range(0..=8);
    (0..n).map(|_| random_char(rng)).collect()
}

fn random_kind(space: &SearchSpace, rng: &mut impl Rng) -> ValueKind {
    if let Some(k) = space.payload_kind {
        if rng.gen_bool(0.3) {
            return k;
        }
    }
    match rng.gen_range(0..20) {
        0..=9 => ValueKind::Str,
        10..=13 => ValueKind::Int,
        14..=15 => ValueKind::Record,
        16..=17 => ValueKind::List,
        18 => ValueKind::Bool,
        _ => ValueKind::Float,
    }
}

fn annot_kind(a: TypeAnnot) -> ValueKind {
    match a {
        TypeAnnot::Int => ValueKind::Int,
        TypeAnnot::Float => ValueKind::Float,
        TypeAnnot::Bool => ValueKind::Bool,
        TypeAnnot::Str => ValueKind::Str,
        TypeAnnot::List => ValueKind::List,
        TypeAnnot::Record => ValueKind::Record,
        TypeAnnot::File => ValueKind::File,
    }
}

fn file_path(slot: usize) -> String {
    format!("tmp/arg{slot}.dat")
}

/// A fresh value of the annotated kind, or of a weighted random kind.
pub fn random_value(annot: Option<TypeAnnot>, slot: usize, space: &SearchSpace, rng: &mut impl Rng) -> Value {
    let kind = match annot {
        Some(a) => annot_kind(a),
        None => random_kind(space, rng),
    };
    random_of_kind(kind, slot, space, rng, 0)
}

fn random_of_kind(kind: ValueKind, slot: usize, space: &SearchSpace, rng: &mut impl Rng, nesting: u32) -> Value {
    match kind {
        ValueKind::Null => Value::Null,
        ValueKind::Bool => Value::Bool(rng.gen()),
        ValueKind::Int => match space.ints.choose(rng) {
            Some(i) if rng.gen_bool(0.3) => Value::Int(*i),
            _ => Value::Int(rng.gen_range(-10..=100)),
        },
        ValueKind::Float => match space.floats.choose(rng) {
            Some(x) if rng.gen_bool(0.3) => Value::Float(*x),
            _ => Value::Float(f64::from(rng.gen_range(-1000..=1000)) / 10.0),
        },
        ValueKind::Str => match space.strings.choose(rng) {
            Some(s) if rng.gen_bool(0.3) => Value::str(s),
            _ => Value::str(random_string(rng)),
        },
        ValueKind::List => {
            let n = if nesting > 0 { 0 } else { rng.gen_range(0..=3) };
            Value::list(
                (0..n)
                    .map(|_| {
                        let k = random_scalar_kind(rng);
                        random_of_kind(k, slot, space, rng, nesting + 1)
                    })
                    .collect(),
            )
        }
        ValueKind::Record => {
            let mut r = Record::new();
            if nesting == 0 {
                for _ in 0..rng.gen_range(0..=2) {
                    let name = field_name(space, rng);
                    let k = random_scalar_kind(rng);
                    r.insert(name, random_of_kind(k, slot, space, rng, nesting + 1));
                }
            }
            Value::Record(r.into())
        }
        ValueKind::File => Value::file(file_path(slot), random_string(rng)),
    }
}

fn random_scalar_kind(rng: &mut impl Rng) -> ValueKind {
    [ValueKind::Str, ValueKind::Str, ValueKind::Int, ValueKind::Bool][rng.gen_range(0..4)]
}

fn field_name(space: &SearchSpace, rng: &mut impl Rng) -> String {
    let idents: Vec<&String> = space
        .strings
        .iter()
        .filter(|s| crate::vex::is_identifier(s))
        .collect();
    if !space.payload_fields.is_empty() && rng.gen_bool(0.5) {
        return space.payload_fields.choose(rng).expect("non-empty").clone();
    }
    match idents.choose(rng) {
        Some(s) if rng.gen_bool(0.5) => (*s).clone(),
        _ => ["a", "b", "id", "name", "value"][rng.gen_range(0..5)].to_string(),
    }
}

/// Random arguments for every parameter of `candidate`'s function.
pub fn random_test(program: &Program, candidate: &EntryCandidate, space: &SearchSpace, rng: &mut impl Rng) -> TestCase {
    let id = program.lookup(&candidate.function).expect("candidate exists");
    let args = program
        .decl(id)
        .params
        .iter()
        .enumerate()
        .map(|(i, p)| random_value(p.annotation, i, space, rng))
        .collect();
    TestCase::new(candidate.function.clone(), args)
}

/// Mutates each argument with `per_arg_mutation_rate` (at least one when any
/// exist), and re-draws the entry with probability 0.05.
pub fn mutate(
    test: &TestCase,
    program: &Program,
    candidates: &[EntryCandidate],
    space: &SearchSpace,
    cfg: &GaConfig,
    rng: &mut impl Rng,
) -> TestCase {
    if candidates.len() > 1 && rng.gen_bool(0.05) {
        let c = candidates.choose(rng).expect("non-empty");
        return random_test(program, c, space, rng);
    }
    if test.args.is_empty() {
        return test.clone();
    }
    let id = program.lookup(&test.entry).expect("entry exists");
    let params = &program.decl(id).params;
    let mut args = test.args.clone();
    let mut changed = false;
    for (i, a) in args.iter_mut().enumerate() {
        if rng.gen_bool(cfg.per_arg_mutation_rate) {
            *a = mutate_value(a, params[i].annotation, i, space, cfg, rng);
            changed = true;
        }
    }
    if !changed {
        let i = rng.gen_range(0..args.len());
        args[i] = mutate_value(&args[i], params[i].annotation, i, space, cfg, rng);
    }
    test.with_args(args)
}

pub fn mutate_value(
    v: &Value,
    annot: Option<TypeAnnot>,
    slot: usize,
    space: &SearchSpace,
    cfg: &GaConfig,
    rng: &mut impl Rng,
) -> Value {
    if annot.is_none() && rng.gen_bool(0.05) {
        return random_value(None, slot, space, rng);
    }
    match v {
        Value::Null => random_value(annot, slot, space, rng),
        Value::Bool(b) => Value::Bool(!b),
        Value::Int(i) => {
            if rng.gen_bool(cfg.payload_seed_prob) {
                if let Some(n) = space.payload_numbers.choose(rng) {
                    return match n {
                        Value::Float(x) => Value::Int(*x as i64),
                        other => other.clone(),
                    };
                }
            }
            if rng.gen_bool(0.1) {
                if let Some(c) = space.ints.choose(rng) {
                    return Value::Int(*c);
                }
            }
            Value::Int(i.wrapping_add(geometric_step(rng)))
        }
        Value::Float(x) => {
            if rng.gen_bool(cfg.payload_seed_prob) {
                if let Some(n) = space.payload_numbers.choose(rng) {
                    return match n {
                        Value::Int(i) => Value::Float(*i as f64),
                        other => other.clone(),
                    };
                }
            }
            let step = geometric_step(rng) as f64;
            Value::Float(if rng.gen_bool(0.5) { x + step } else { x + step / 10.0 })
        }
        Value::Str(s) => Value::str(mutate_string(s, space, cfg, rng)),
        Value::File(f) => Value::file(&*f.path, mutate_string(&f.content, space, cfg, rng)),
        Value::List(items) => {
            let mut items = (**items).clone();
            match rng.gen_range(0..3) {
                0 if !items.is_empty() => {
                    let i = rng.gen_range(0..items.len());
                    items[i] = mutate_value(&items[i], None, slot, space, cfg, rng);
                }
                1 if !items.is_empty() => {
                    items.remove(rng.gen_range(0..items.len()));
                }
                _ => {
                    let k = random_scalar_kind(rng);
                    let at = rng.gen_range(0..=items.len());
                    items.insert(at, random_of_kind(k, slot, space, rng, 1));
                }
            }
            Value::list(items)
        }
        Value::Record(r) => {
            let mut r = (**r).clone();
            match rng.gen_range(0..4) {
                0 | 1 if !r.is_empty() => {
                    let i = rng.gen_range(0..r.len());
                    let (_, x) = r.get_index_mut(i).expect("in range");
                    *x = mutate_value(x, None, slot, space, cfg, rng);
                }
                2 if !r.is_empty() => {
                    r.shift_remove_index(rng.gen_range(0..r.len()));
                }
                _ => {
                    let name = field_name(space, rng);
                    let k = random_scalar_kind(rng);
                    r.insert(name, random_of_kind(k, slot, space, rng, 1));
                }
            }
            Value::Record(r.into())
        }
    }
}

fn geometric_step(rng: &mut impl Rng) -> i64 {
    let mut mag = 1i64;
    while mag < 1 << 40 && rng.gen_bool(0.5) {
        mag *= 2;
    }
    let step = rng.gen_range(1..=mag);
    if rng.gen_bool(0.5) {
        step
    } else {
        -step
    }
}

fn mutate_string(s: &str, space: &SearchSpace, cfg: &GaConfig, rng: &mut impl Rng) -> String {
    if rng.gen_bool(cfg.payload_seed_prob) {
        if let Some(frag) = space.payload_fragment(rng) {
            let mut chars: Vec<char> = s.chars().collect();
            if rng.gen_bool(0.5) || chars.is_empty() {
                chars.extend(frag.chars());
            } else {
                let at = rng.gen_range(0..chars.len());
                let end = (at + frag.chars().count()).min(chars.len());
                chars.splice(at..end, frag.chars());
            }
            return chars.into_iter().collect();
        }
    }
    if rng.gen_bool(0.1) {
        if let Some(c) = space.strings.choose(rng) {
            return c.clone();
        }
    }
    let mut chars: Vec<char> = s.chars().collect();
    let pick = |rng: &mut dyn rand::RngCore, space: &SearchSpace| -> char {
        if rng.gen_bool(0.5) {
            if let Some(p) = space.payload_strings.choose(rng) {
                let n = p.chars().count();
                if let Some(c) = p.chars().nth(rng.gen_range(0..n)) {
                    return c;
                }
            }
        }
        ALPHABET[rng.gen_range(0..ALPHABET.len())] as char
    };
    match rng.gen_range(0..3) {
        0 if !chars.is_empty() => {
            chars.remove(rng.gen_range(0..chars.len()));
        }
        1 if !chars.is_empty() => {
            let i = rng.gen_range(0..chars.len());
            chars[i] = pick(rng, space);
        }
        _ => {
            let at = rng.gen_range(0..=chars.len());
            let c = pick(rng, space);
            chars.insert(at, c);
        }
    }
    chars.into_iter().collect()
}

/// Single-point crossover over the argument vectors when entries match.
pub fn crossover(a: &TestCase, b: &TestCase, rng: &mut impl Rng) -> (TestCase, TestCase) {
    if a.entry != b.entry || a.args.len() < 2 {
        return (a.clone(), b.clone());
    }
    let point = rng.gen_range(1..a.args.len());
    cross_at(a, b, point)
}

pub fn cross_at(a: &TestCase, b: &TestCase, point: usize) -> (TestCase, TestCase) {
    let mut x = a.args[..point].to_vec();
    x.extend_from_slice(&b.args[point..]);
    let mut y = b.args[..point].to_vec();
    y.extend_from_slice(&a.args[point..]);
    (a.with_args(x), b.with_args(y))
}
