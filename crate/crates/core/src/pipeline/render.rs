use std::collections::BTreeMap;

use crate::instrument::DynamicCallGraph;
use crate::interp::{Budgets, Value};
use crate::migration::{MigratedTest, MigrationRule, TriggerKind, Verdict};

/// Header lines of a rendered test. Vex treats `#` lines as comments, so the
/// directives ride along without affecting the program.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Directives {
    pub project: Option<String>,
    pub vuln: Option<String>,
    pub attacker_host: Option<String>,
    pub budgets: Option<Budgets>,
    /// Sandbox-relative path to content.
    pub files: BTreeMap<String, String>,
}

fn collect_files(v: &Value, out: &mut BTreeMap<String, String>) {
    match v {
        Value::File(f) => {
            out.insert(f.path.to_string(), f.content.to_string());
        }
        Value::List(items) => items.iter().for_each(|i| collect_files(i, out)),
        Value::Record(r) => r.values().for_each(|i| collect_files(i, out)),
        _ => {}
    }
}

fn describe(rule: &MigrationRule) -> String {
    match rule {
        MigrationRule::TypeConvert { target } => format!("type_convert({})", target.name()),
        MigrationRule::AffixString { prefix, suffix } => format!("affix({prefix:?}, {suffix:?})"),
        MigrationRule::Template { pattern } => format!("template({pattern:?})"),
        MigrationRule::FileMaterialize => "file_materialize".into(),
        MigrationRule::MarkerSubstitute => "marker_substitute".into(),
    }
}

/// A standalone Vex program whose `main` replays the migrated test.
#[allow(clippy::too_many_arguments)]
pub fn render_test(
    migrated: Option<&MigratedTest>,
    project: &str,
    vuln: &str,
    attacker_host: &str,
    verdict: Verdict,
    trigger: TriggerKind,
    budgets: Budgets,
    similarity: f64,
    call_path: Option<&DynamicCallGraph>,
) -> String {
    let mut out = String::new();
    out.push_str(&format!("#! project: {project}\n#! vuln: {vuln}\n#! attacker: {attacker_host}\n"));
    out.push_str(&format!(
        "#! budgets: steps={} depth={}\n",
        budgets.max_steps, budgets.max_call_depth
    ));
    let case = migrated.map(MigratedTest::replay_case);
    let mut files = BTreeMap::new();
    if let Some(m) = migrated {
        for f in &m.files {
            files.insert(f.path.clone(), f.content.clone());
        }
    }
    if let Some(c) = &case {
        c.args.iter().for_each(|a| collect_files(a, &mut files));
    }
    for (path, content) in &files {
        out.push_str(&format!(
            "#! file: {} {}\n",
            serde_json::to_string(path).expect("strings serialize"),
            serde_json::to_string(content).expect("strings serialize")
        ));
    }
    match verdict {
        Verdict::Exploitable => out.push_str(&format!("# exploit: triggers {}\n", trigger.name())),
        Verdict::Inconclusive => out.push_str(&format!("# inconclusive: {} needs manual confirmation\n", trigger.name())),
        Verdict::NotExploitable => out.push_str(&format!(
            "# not exploitable: best near miss, received similarity {similarity:.4}\n"
        )),
    }
    if let Some(g) = call_path {
        let path: Vec<String> = g.path.iter().map(ToString::to_string).collect();
        out.push_str(&format!("# call path: {}\n", path.join(" -> ")));
    }
    if let Some(m) = migrated {
        let rules: Vec<String> = m.rule_chain.iter().map(describe).collect();
        out.push_str(&format!(
            "# payload at argument {} of {}, rules: [{}]\n",
            m.substitution.position,
            m.test.entry,
            rules.join(", ")
        ));
    }
    out.push_str("pub fn main() {\n");
    match &case {
        Some(c) => out.push_str(&format!("  return {};\n", c.call_text())),
        None => out.push_str("  return null;\n"),
    }
    out.push_str("}\n");
    out
}

/// Reads the `#!` header of a rendered test.
pub fn parse_directives(text: &str) -> Result<Directives, String> {
    let mut d = Directives::default();
    for (n, line) in text.lines().enumerate() {
        let Some(rest) = line.strip_prefix("#!") else { continue };
        let rest = rest.trim();
        let (key, value) = rest
            .split_once(':')
            .ok_or_else(|| format!("line {}: directive without `:`", n + 1))?;
        let value = value.trim();
        match key.trim() {
            "project" => d.project = Some(value.to_string()),
            "vuln" => d.vuln = Some(value.to_string()),
            "attacker" => d.attacker_host = Some(value.to_string()),
            "budgets" => {
                let mut b = Budgets::default();
                for part in value.split_whitespace() {
                    let (k, v) = part
                        .split_once('=')
                        .ok_or_else(|| format!("line {}: bad budget `{part}`", n + 1))?;
                    let bad = |_| format!("line {}: bad budget `{part}`", n + 1);
                    match k {
                        "steps" => b.max_steps = v.parse().map_err(bad)?,
                        "depth" => b.max_call_depth = v.parse().map_err(bad)?,
                        _ => return Err(format!("line {}: unknown budget `{k}`", n + 1)),
                    }
                }
                d.budgets = Some(b);
            }
            "file" => {
                let mut stream = serde_json::Deserializer::from_str(value).into_iter::<String>();
                let path = stream.next();
                let content = stream.next();
                match (path, content) {
                    (Some(Ok(p)), Some(Ok(c))) => {
                        d.files.insert(p, c);
                    }
                    _ => return Err(format!("line {}: file directive needs two JSON strings", n + 1)),
                }
            }
            other => return Err(format!("line {}: unknown directive `{other}`", n + 1)),
        }
    }
    Ok(d)
}
