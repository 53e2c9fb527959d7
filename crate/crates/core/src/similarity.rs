//! Type-directed similarity between a received value and an exploit payload.

use std::collections::HashMap;

use crate::interp::{FileRef, Record, Value};

const FLOAT_REL_TOL: f64 = 1e-9;

/// Score in `[0, 1]`, dispatched on the kind of `expected`.
pub fn similarity(actual: &Value, expected: &Value) -> f64 {
    match (actual, expected) {
        (_, Value::Int(_) | Value::Float(_) | Value::Bool(_)) => number_similarity(actual, expected),
        (Value::Str(a), Value::Str(b)) => string_similarity(a, b),
        (Value::File(f), Value::Str(b)) => string_similarity(&f.content, b),
        (Value::Record(a), Value::Record(b)) => object_similarity(a, b),
        (_, Value::File(f)) => file_similarity(actual, f),
        (Value::List(a), Value::List(b)) => list_similarity(a, b),
        (Value::Null, Value::Null) => 1.0,
        _ => 0.0,
    }
}

/// 1 when equal, 0 otherwise. Ints and floats compare numerically with a
/// relative tolerance; booleans only match booleans.
pub fn number_similarity(a: &Value, b: &Value) -> f64 {
    let eq = match (a, b) {
        (Value::Bool(x), Value::Bool(y)) => x == y,
        (Value::Int(x), Value::Int(y)) => x == y,
        (Value::Int(x), Value::Float(y)) | (Value::Float(y), Value::Int(x)) => floats_close(*x as f64, *y),
        (Value::Float(x), Value::Float(y)) => floats_close(*x, *y),
        _ => false,
    };
    if eq {
        1.0
    } else {
        0.0
    }
}

fn floats_close(a: f64, b: f64) -> bool {
    if a == b || (a.is_nan() && b.is_nan()) {
        return true;
    }
    (a - b).abs() <= FLOAT_REL_TOL * a.abs().max(b.abs())
}

/// `1 - levenshtein(a, b) / max(len(a), len(b))`, lengths in Unicode scalars.
pub fn string_similarity(a: &str, b: &str) -> f64 {
    let la = a.chars().count();
    let lb = b.chars().count();
    let longer = la.max(lb);
    if longer == 0 {
        return 1.0;
    }
    1.0 - levenshtein(a, b) as f64 / longer as f64
}

/// Mean field similarity over the fields of `expected`; absent fields score 0.
pub fn object_similarity(actual: &Record, expected: &Record) -> f64 {
    if expected.is_empty() {
        return if actual.is_empty() { 1.0 } else { 0.0 };
    }
    let total: f64 = expected
        .iter()
        .map(|(k, e)| actual.get(k).map_or(0.0, |a| similarity(a, e)))
        .sum();
    total / expected.len() as f64
}

/// Compares against the materialized `{content, size}` view of `expected`.
pub fn file_similarity(actual: &Value, expected: &FileRef) -> f64 {
    match actual {
        Value::Str(s) => string_similarity(s, &expected.content),
        Value::File(f) => object_similarity(&materialize(f), &materialize(expected)),
        _ => 0.0,
    }
}

pub fn materialize(f: &FileRef) -> Record {
    let mut r = Record::new();
    r.insert("content".into(), Value::Str(f.content.clone()));
    r.insert("size".into(), Value::Int(f.content.len() as i64));
    r
}

/// Mean element similarity over the shorter length, scaled by `min/max` length.
pub fn list_similarity(actual: &[Value], expected: &[Value]) -> f64 {
    let longer = actual.len().max(expected.len());
    let shorter = actual.len().min(expected.len());
    if longer == 0 {
        return 1.0;
    }
    if shorter == 0 {
        return 0.0;
    }
    let mean: f64 = actual
        .iter()
        .zip(expected)
        .map(|(a, e)| similarity(a, e))
        .sum::<f64>()
        / shorter as f64;
    mean * shorter as f64 / longer as f64
}

/// Unit-cost edit distance over Unicode scalar values.
pub fn levenshtein(a: &str, b: &str) -> usize {
    if a == b {
        return 0;
    }
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let prefix = a.iter().zip(&b).take_while(|(x, y)| x == y).count();
    let (a, b) = (&a[prefix..], &b[prefix..]);
    let suffix = a
        .iter()
        .rev()
        .zip(b.iter().rev())
        .take_while(|(x, y)| x == y)
        .count();
    let (a, b) = (&a[..a.len() - suffix], &b[..b.len() - suffix]);
    let (pattern, text) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    if pattern.is_empty() {
        return text.len();
    }
    bit_parallel(pattern, text)
}

/// Myers/Hyyrö bit-vector edit distance, with the column vectors spread over
/// as many 64-bit words as the pattern needs. Addition and shifts carry
/// across words, so this is the single-word recurrence on wide integers.
fn bit_parallel(pattern: &[char], text: &[char]) -> usize {
    let m = pattern.len();
    let words = m.div_ceil(64);
    let mut ascii = vec![0u64; 128 * words];
    let mut other: HashMap<char, Vec<u64>> = HashMap::new();
    for (i, &c) in pattern.iter().enumerate() {
        let (w, bit) = (i / 64, 1u64 << (i % 64));
        if (c as u32) < 128 {
            ascii[c as usize * words + w] |= bit;
        } else {
            other.entry(c).or_insert_with(|| vec![0; words])[w] |= bit;
        }
    }
    let zero = vec![0u64; words];
    let last_word = words - 1;
    let last_bit = 1u64 << ((m - 1) % 64);

    let mut vp = vec![!0u64; words];
    let mut vn = vec![0u64; words];
    let mut score = m;
    for &c in text {
        let peq: &[u64] = if (c as u32) < 128 {
            &ascii[c as usize * words..(c as usize + 1) * words]
        } else {
            other.get(&c).map_or(&zero[..], |v| &v[..])
        };
        let mut add_carry = false;
        let mut hp_carry = 1u64;
        let mut hn_carry = 0u64;
        for w in 0..words {
            let x = peq[w] | vn[w];
            let (sum, c1) = (x & vp[w]).overflowing_add(vp[w]);
            let (sum, c2) = sum.overflowing_add(add_carry as u64);
            add_carry = c1 || c2;
            let d0 = (sum ^ vp[w]) | x;
            let hp = vn[w] | !(d0 | vp[w]);
            let hn = d0 & vp[w];
            if w == last_word {
                if hp & last_bit != 0 {
                    score += 1;
                }
                if hn & last_bit != 0 {
                    score -= 1;
                }
            }
            let hp_shift = (hp << 1) | hp_carry;
            let hn_shift = (hn << 1) | hn_carry;
            hp_carry = hp >> 63;
            hn_carry = hn >> 63;
            vp[w] = hn_shift | !(d0 | hp_shift);
            vn[w] = hp_shift & d0;
        }
    }
    score
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dp(a: &str, b: &str) -> usize {
        let a: Vec<char> = a.chars().collect();
        let b: Vec<char> = b.chars().collect();
        let mut prev: Vec<usize> = (0..=b.len()).collect();
        for i in 1..=a.len() {
            let mut cur = vec![i; b.len() + 1];
            for j in 1..=b.len() {
                let sub = prev[j - 1] + usize::from(a[i - 1] != b[j - 1]);
                cur[j] = sub.min(prev[j] + 1).min(cur[j - 1] + 1);
            }
            prev = cur;
        }
        prev[b.len()]
    }

    #[test]
    fn spot_values() {
        assert_eq!(levenshtein("", "abc"), 3);
        assert_eq!(levenshtein("kitten", "sitting"), 3);
        assert_eq!(levenshtein("flaw", "lawn"), 2);
        assert_eq!(levenshtein("héllo", "hello"), 1);
        assert!((string_similarity("kitten", "sitting") - (1.0 - 3.0 / 7.0)).abs() < 1e-12);
        assert_eq!(string_similarity("abc", ""), 0.0);
        assert_eq!(string_similarity("", ""), 1.0);
    }

    #[test]
    fn multi_word_matches_dp() {
        let mut state = 0x9e3779b97f4a7c15u64;
        let mut next = || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            state
        };
        for _ in 0..300 {
            let la = (next() % 300) as usize;
            let lb = (next() % 300) as usize;
            let gen = |n: usize, r: &mut dyn FnMut() -> u64| -> String {
                (0..n).map(|_| ['a', 'b', 'c', 'é'][(r() % 4) as usize]).collect()
            };
            let a = gen(la, &mut next);
            let b = gen(lb, &mut next);
            assert_eq!(levenshtein(&a, &b), dp(&a, &b), "{a} / {b}");
        }
    }

    #[test]
    fn long_payloads_are_fast() {
        let a = "{\"a\":".repeat(10_000);
        let mut b = a.clone();
        b.replace_range(25_000..25_001, "x");
        assert_eq!(levenshtein(&a, &b), 1);
        assert_eq!(levenshtein(&a, &a[..30_000]), 20_000);
        let c: String = a.chars().rev().collect();
        assert!(levenshtein(&a, &c) <= 50_000);
    }

    #[test]
    fn numbers() {
        assert_eq!(number_similarity(&Value::Int(7), &Value::Int(7)), 1.0);
        assert_eq!(number_similarity(&Value::Int(7), &Value::Int(8)), 0.0);
        assert_eq!(number_similarity(&Value::Bool(true), &Value::Bool(true)), 1.0);
        assert_eq!(similarity(&Value::Float(0.1 + 0.2), &Value::Float(0.3)), 1.0);
        assert_eq!(similarity(&Value::Int(3), &Value::Float(3.0)), 1.0);
    }

    #[test]
    fn objects_and_files() {
        let r = |a: &str, b: i64| Value::record([("a", Value::str(a)), ("b", Value::Int(b))]);
        assert_eq!(similarity(&r("xy", 3), &r("xz", 3)), 0.75);
        assert_eq!(similarity(&Value::str("abc"), &Value::Int(3)), 0.0);
        let x1 = Value::record([("x", Value::Int(1))]);
        let xy = Value::record([("x", Value::Int(1)), ("y", Value::str("q"))]);
        assert_eq!(similarity(&x1, &xy), 0.5);
        let nested = |s: &str| Value::record([("p", Value::record([("x", Value::str(s))]))]);
        assert_eq!(similarity(&nested("ab"), &nested("ad")), 0.5);
        let empty = Value::record(Vec::<(String, Value)>::new());
        assert_eq!(similarity(&empty, &empty), 1.0);
        assert_eq!(similarity(&x1, &empty), 0.0);

        let f1 = Value::file("a", "0123456789");
        let f2 = Value::file("b", "0123456780");
        assert_eq!(similarity(&f1, &f1), 1.0);
        assert!((similarity(&f2, &f1) - 0.95).abs() < 1e-12);
        assert_eq!(similarity(&Value::str("0123456789"), &f1), 1.0);
        assert_eq!(similarity(&f1, &Value::str("0123456789")), 1.0);
    }

    #[test]
    fn lists() {
        let l = |v: Vec<i64>| Value::list(v.into_iter().map(Value::Int).collect());
        assert_eq!(similarity(&l(vec![]), &l(vec![])), 1.0);
        assert_eq!(similarity(&l(vec![1, 2]), &l(vec![1, 2, 3, 4])), 0.5);
        assert_eq!(similarity(&l(vec![1, 9]), &l(vec![1, 2])), 0.5);
        assert_eq!(similarity(&l(vec![]), &l(vec![1])), 0.0);
    }
}
