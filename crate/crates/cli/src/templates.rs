//! Prompt templates and prompts-file loading.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use qalign_core::Prompt;
use serde_json::Value;

const GSM8K: &str = include_str!("../assets/templates/gsm8k.txt");
const MATH_BOXED: &str = include_str!("../assets/templates/math_boxed.txt");
const MULTIPLE_CHOICE: &str = include_str!("../assets/templates/multiple_choice.txt");

pub const TEMPLATE_IDS: [&str; 3] = ["gsm8k", "math_boxed", "multiple_choice"];

pub fn template(id: &str) -> Result<&'static str> {
    Ok(match id {
        "gsm8k" => GSM8K,
        "math_boxed" => MATH_BOXED,
        "multiple_choice" => MULTIPLE_CHOICE,
        other => bail!("unknown template {other:?}; expected one of {TEMPLATE_IDS:?}"),
    })
}

/// Replace every `{field}` whose name is an identifier. Braces around
/// anything else (`\boxed{Your answer}`) are left alone.
pub fn fill(template: &str, fields: &BTreeMap<String, String>) -> Result<String> {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let name_len = after
            .find(|c: char| !(c.is_ascii_alphanumeric() || c == '_'))
            .unwrap_or(after.len());
        let name = &after[..name_len];
        let is_field = name_len > 0
            && after[name_len..].starts_with('}')
            && !name.starts_with(|c: char| c.is_ascii_digit());
        if is_field {
            let v = fields
                .get(name)
                .with_context(|| format!("template field {name:?} missing from prompt record"))?;
            out.push_str(v);
            rest = &after[name_len + 1..];
        } else {
            out.push('{');
            rest = after;
        }
    }
    out.push_str(rest);
    Ok(out)
}

/// Read a prompts file: JSONL of `{id, question, gold?, ...}`. Extra string
/// fields are available to templates. Without a template the question is the
/// prompt text.
pub fn load_prompts(path: &Path, template_id: Option<&str>) -> Result<Vec<Prompt>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading prompts {}", path.display()))?;
    let tpl = template_id.map(template).transpose()?;
    let mut prompts = Vec::new();
    let mut seen = std::collections::BTreeSet::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let ctx = || format!("{}:{}", path.display(), lineno + 1);
        let v: Value = serde_json::from_str(line).with_context(ctx)?;
        let obj = v.as_object().with_context(|| format!("{}: expected a JSON object", ctx()))?;
        let mut fields = BTreeMap::new();
        for (k, v) in obj {
            let s = match v {
                Value::String(s) => s.clone(),
                Value::Number(n) => n.to_string(),
                Value::Null => continue,
                _ => bail!("{}: field {k:?} must be a string or number", ctx()),
            };
            fields.insert(k.clone(), s);
        }
        let id = fields.remove("id").with_context(|| format!("{}: missing id", ctx()))?;
        if !seen.insert(id.clone()) {
            bail!("{}: duplicate prompt id {id:?}", ctx());
        }
        if id.is_empty() || id.contains(['/', '\\']) || id == "." || id == ".." {
            bail!("{}: prompt id {id:?} cannot name a directory", ctx());
        }
        let question = fields
            .get("question")
            .with_context(|| format!("{}: missing question", ctx()))?
            .clone();
        let text = match tpl {
            Some(t) => fill(t, &fields).with_context(ctx)?,
            None => question,
        };
        let mut p = Prompt::new(id, text).with_context(ctx)?;
        p.template_id = template_id.map(str::to_owned);
        if let Some(g) = fields.remove("gold") {
            p = p.with_metadata("gold", g);
        }
        prompts.push(p);
    }
    if prompts.is_empty() {
        bail!("{} holds no prompts", path.display());
    }
    Ok(prompts)
}
