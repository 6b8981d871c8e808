//! Prompt templates and the bits of Python formatting they rely on.

use std::collections::BTreeMap;
use std::io;

use serde::Serialize;
use serde_json::ser::Formatter;
use serde_json::{json, Value};

use super::{ProposerError, StateContext};
use crate::asset::JointKind;
use crate::collision::{localize_focus_joints, ContactReport, Severity};

pub const URDF_EXPERT_SYSTEM_PROMPT: &str = include_str!("../../prompts/urdf_expert_system.txt");
pub const STATE_REFINER_SYSTEM_PROMPT: &str =
    include_str!("../../prompts/state_refiner_system.txt");
pub const OVERLAY_GENERATION_PROMPT: &str = include_str!("../../prompts/overlay_generation.txt");
pub const STATE_REFINEMENT_PROMPT_TEMPLATE: &str =
    include_str!("../../prompts/state_refinement.txt");

#[derive(Debug, Clone, PartialEq)]
pub enum Arg {
    Str(String),
    Float(f64),
    Int(i64),
}

impl From<&str> for Arg {
    fn from(s: &str) -> Self {
        Arg::Str(s.to_string())
    }
}

impl From<String> for Arg {
    fn from(s: String) -> Self {
        Arg::Str(s)
    }
}

impl From<f64> for Arg {
    fn from(v: f64) -> Self {
        Arg::Float(v)
    }
}

impl From<usize> for Arg {
    fn from(v: usize) -> Self {
        Arg::Int(v as i64)
    }
}

/// `str.format` restricted to `{{`, `}}`, `{name}` and `{name:.Nf}`.
pub fn format_template(
    template: &str,
    args: &BTreeMap<&str, Arg>,
) -> Result<String, ProposerError> {
    let bad = |msg: String| ProposerError::Template(msg);
    let mut out = String::with_capacity(template.len() + 256);
    let mut chars = template.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        match c {
            '{' if chars.peek().map(|p| p.1) == Some('{') => {
                chars.next();
                out.push('{');
            }
            '}' if chars.peek().map(|p| p.1) == Some('}') => {
                chars.next();
                out.push('}');
            }
            '}' => return Err(bad(format!("single '}}' at byte {i}"))),
            '{' => {
                let rest = &template[i + 1..];
                let end = rest
                    .find('}')
                    .ok_or_else(|| bad(format!("unclosed '{{' at byte {i}")))?;
                let field = &rest[..end];
                for _ in 0..field.chars().count() + 1 {
                    chars.next();
                }
                let (name, spec) = field.split_once(':').unwrap_or((field, ""));
                let arg = args
                    .get(name)
                    .ok_or_else(|| bad(format!("no value for `{name}`")))?;
                out.push_str(&render_arg(arg, spec).map_err(bad)?);
            }
            _ => out.push(c),
        }
    }
    Ok(out)
}

fn render_arg(arg: &Arg, spec: &str) -> Result<String, String> {
    if spec.is_empty() {
        return Ok(match arg {
            Arg::Str(s) => s.clone(),
            Arg::Float(v) => py_float(*v),
            Arg::Int(v) => v.to_string(),
        });
    }
    let digits = spec
        .strip_prefix('.')
        .and_then(|s| s.strip_suffix('f'))
        .and_then(|d| d.parse::<usize>().ok())
        .ok_or_else(|| format!("unsupported format spec `{spec}`"))?;
    match arg {
        Arg::Float(v) => Ok(format!("{v:.digits$}")),
        Arg::Int(v) => Ok(format!("{:.digits$}", *v as f64)),
        Arg::Str(_) => Err(format!("format spec `{spec}` applied to a string")),
    }
}

/// Python's `repr(float)`.
pub fn py_float(v: f64) -> String {
    if v.is_nan() {
        return "NaN".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "Infinity" } else { "-Infinity" }.into();
    }
    let sci = format!("{v:e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-4..16).contains(&exp) {
        let s = format!("{v}");
        if s.contains('.') {
            s
        } else {
            s + ".0"
        }
    } else {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{mantissa}e{sign}{:02}", exp.abs())
    }
}

/// Formatter producing the same bytes as Python's `json.dumps` with default
/// arguments (`indent = None`) or with `indent = n`.
struct PyFormatter {
    indent: Option<usize>,
    level: usize,
    has_value: bool,
}

impl PyFormatter {
    fn newline<W: ?Sized + io::Write>(&self, w: &mut W) -> io::Result<()> {
        if let Some(n) = self.indent {
            w.write_all(b"\n")?;
            for _ in 0..self.level * n {
                w.write_all(b" ")?;
            }
        }
        Ok(())
    }

    fn open<W: ?Sized + io::Write>(&mut self, w: &mut W, b: &[u8]) -> io::Result<()> {
        self.level += 1;
        self.has_value = false;
        w.write_all(b)
    }

    fn close<W: ?Sized + io::Write>(&mut self, w: &mut W, b: &[u8]) -> io::Result<()> {
        self.level -= 1;
        if self.has_value {
            self.newline(w)?;
        }
        w.write_all(b)
    }

    fn item<W: ?Sized + io::Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        if !first {
            w.write_all(if self.indent.is_some() { b"," } else { b", " })?;
        }
        self.newline(w)
    }
}

impl Formatter for PyFormatter {
    fn write_f64<W: ?Sized + io::Write>(&mut self, w: &mut W, value: f64) -> io::Result<()> {
        w.write_all(py_float(value).as_bytes())
    }

    fn write_f32<W: ?Sized + io::Write>(&mut self, w: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(w, value as f64)
    }

    fn write_string_fragment<W: ?Sized + io::Write>(
        &mut self,
        w: &mut W,
        fragment: &str,
    ) -> io::Result<()> {
        for c in fragment.chars() {
            if c.is_ascii() {
                w.write_all(&[c as u8])?;
            } else {
                let mut buf = [0u16; 2];
                for unit in c.encode_utf16(&mut buf) {
                    write!(w, "\\u{unit:04x}")?;
                }
            }
        }
        Ok(())
    }

    fn begin_array<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.open(w, b"[")
    }

    fn end_array<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.close(w, b"]")
    }

    fn begin_array_value<W: ?Sized + io::Write>(
        &mut self,
        w: &mut W,
        first: bool,
    ) -> io::Result<()> {
        self.item(w, first)
    }

    fn end_array_value<W: ?Sized + io::Write>(&mut self, _w: &mut W) -> io::Result<()> {
        self.has_value = true;
        Ok(())
    }

    fn begin_object<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.open(w, b"{")
    }

    fn end_object<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.close(w, b"}")
    }

    fn begin_object_key<W: ?Sized + io::Write>(
        &mut self,
        w: &mut W,
        first: bool,
    ) -> io::Result<()> {
        self.item(w, first)
    }

    fn begin_object_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        w.write_all(b": ")
    }

    fn end_object_value<W: ?Sized + io::Write>(&mut self, _w: &mut W) -> io::Result<()> {
        self.has_value = true;
        Ok(())
    }
}

/// `json.dumps(value)` or `json.dumps(value, indent=n)`.
pub fn py_json<T: Serialize + ?Sized>(value: &T, indent: Option<usize>) -> String {
    let mut buf = Vec::new();
    let fmt = PyFormatter {
        indent,
        level: 0,
        has_value: false,
    };
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, fmt);
    value.serialize(&mut ser).expect("JSON values serialize");
    String::from_utf8(buf).expect("ASCII output")
}

/// Fills the overlay-generation prompt.
pub fn overlay_prompt(object_info: &serde_json::Value) -> String {
    let args = BTreeMap::from([("object_info", Arg::Str(py_json(object_info, Some(2))))]);
    format_template(OVERLAY_GENERATION_PROMPT, &args).expect("shipped template is well formed")
}

/// Fills the state-refinement prompt from one iteration's context.
pub fn state_prompt(ctx: &StateContext<'_>) -> String {
    let model = ctx.model;
    let report = ctx.report;
    let label = |link: &str| {
        ctx.semantics
            .and_then(|s| s.label(link))
            .map(str::to_string)
    };
    let focus: Vec<&String> = ctx.focus.iter().take(8).collect();
    let mut focus_info = serde_json::Map::new();
    for name in &focus {
        let j = model.joint(name);
        let child = j.map(|j| j.child.clone());
        let limits = j.and_then(|j| j.limits);
        let cur = ctx.q.get(name);
        let unit = match j.map(|j| j.kind) {
            Some(JointKind::Revolute | JointKind::Continuous) => "radians",
            Some(JointKind::Prismatic) => "meters",
            _ => "units",
        };
        focus_info.insert(
            (*name).clone(),
            json!({
                "name": name,
                "type": j.map(|j| j.kind.as_str()),
                "child_link": child,
                "semantic": child.as_deref().and_then(label),
                "limit": limits.map(|l| json!({"lower": l.lower, "upper": l.upper})),
                "range": limits.filter(|l| l.upper > l.lower).map(|l| l.upper - l.lower),
                "unit": unit,
                "current": cur,
                "target": ctx.target.values.get(*name).copied().unwrap_or(cur),
            }),
        );
    }
    let pairs = &report.per_pair_penetration;
    let top_pen_sums: Vec<Value> = pairs
        .iter()
        .take(6)
        .map(|p| json!([p.pair.a, p.pair.b.as_deref().unwrap_or("ground"), p.depth]))
        .collect();
    let resolved_pairs: Vec<Value> = pairs
        .iter()
        .take(6)
        .map(|p| {
            let single = ContactReport {
                per_pair_penetration: vec![p.clone()],
                ..Default::default()
            };
            json!({
                "links": [p.pair.a, p.pair.b.as_deref().unwrap_or("ground")],
                "joints": localize_focus_joints(model, &single, usize::MAX),
            })
        })
        .collect();
    let mut direct: Vec<String> = Vec::new();
    for p in pairs {
        for link in std::iter::once(&p.pair.a).chain(p.pair.b.as_ref()) {
            if let Some(j) = model.parent_joint_of(link).filter(|j| j.kind.is_active()) {
                if !direct.contains(&j.name) {
                    direct.push(j.name.clone());
                }
            }
        }
    }
    let description = match pairs.first() {
        Some(p) => format!(
            "{} penetrating pair(s); deepest {} at {:.6} m",
            pairs.len(),
            p.pair,
            p.depth
        ),
        None => "no penetrating pairs".to_string(),
    };
    let hint = if ctx.hint.is_empty() {
        "Not specified"
    } else {
        ctx.hint
    };
    let args = BTreeMap::from([
        ("user_hint", Arg::from(hint)),
        ("penetration_sum", Arg::Float(report.total)),
        ("severity", Arg::from(Severity::of(report.total).as_str())),
        ("contact_count", Arg::from(report.contact_count())),
        ("collision_description", Arg::from(description)),
        ("top_pen_sums", Arg::from(py_json(&top_pen_sums, Some(2)))),
        (
            "resolved_pairs",
            Arg::from(py_json(&resolved_pairs, Some(2))),
        ),
        ("direct_colliding_joints", Arg::from(py_json(&direct, None))),
        ("focus_joints_list", Arg::from(py_json(&focus, None))),
        ("focus_info", Arg::from(py_json(&focus_info, Some(2)))),
    ]);
    format_template(STATE_REFINEMENT_PROMPT_TEMPLATE, &args)
        .expect("shipped template is well formed")
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn python_float_repr() {
        assert_eq!(py_float(0.1), "0.1");
        assert_eq!(py_float(1.0), "1.0");
        assert_eq!(py_float(1e-6), "1e-06");
        assert_eq!(py_float(1.5e-5), "1.5e-05");
        assert_eq!(py_float(0.0001), "0.0001");
        assert_eq!(py_float(1e16), "1e+16");
        assert_eq!(py_float(123456789012345.0), "123456789012345.0");
        assert_eq!(py_float(-0.0), "-0.0");
    }

    #[test]
    fn json_matches_python_layout() {
        let v = json!({"a": [1, 2.5], "b": {}, "c": [], "é": null});
        assert_eq!(
            py_json(&v, None),
            r#"{"a": [1, 2.5], "b": {}, "c": [], "\u00e9": null}"#
        );
        assert_eq!(
            py_json(&v, Some(2)),
            "{\n  \"a\": [\n    1,\n    2.5\n  ],\n  \"b\": {},\n  \"c\": [],\n  \"\\u00e9\": null\n}"
        );
    }

    #[test]
    fn template_placeholders() {
        let args = BTreeMap::from([
            ("x", Arg::Float(0.0123456789)),
            ("n", Arg::Str("lid".into())),
        ]);
        assert_eq!(
            format_template("{{\"v\": {x:.6f}}} {n}", &args).unwrap(),
            "{\"v\": 0.012346} lid"
        );
        assert!(format_template("{missing}", &args).is_err());
        assert!(format_template("oops }", &args).is_err());
    }

    #[test]
    fn shipped_templates_have_expected_fields() {
        assert!(OVERLAY_GENERATION_PROMPT.contains("{object_info}"));
        let prompt = overlay_prompt(&json!({"name": "box"}));
        assert!(prompt.contains("\"global_modifications\": {\n"));
        assert!(!prompt.contains("{object_info}"));
        for field in [
            "{user_hint}",
            "{penetration_sum:.6f}",
            "{severity}",
            "{contact_count}",
            "{collision_description}",
            "{top_pen_sums}",
            "{resolved_pairs}",
            "{direct_colliding_joints}",
            "{focus_joints_list}",
            "{focus_info}",
        ] {
            assert!(STATE_REFINEMENT_PROMPT_TEMPLATE.contains(field), "{field}");
        }
    }
}
