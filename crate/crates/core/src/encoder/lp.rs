//! CPLEX-style LP text format (`Minimize / Subject To / Bounds / Binaries /
//! End`). Numbers are written with 17 significant digits so that a parse of
//! the file reproduces every coefficient bit for bit.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::system::{MiConstraintSystem, Objective, Sense, VarId, VarKind};
use crate::error::{Error, Result};

const TERMS_PER_LINE: usize = 6;

fn num(v: f64) -> String {
    if v == f64::INFINITY {
        "+inf".into()
    } else if v == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        format!("{v:.16e}")
    }
}

fn push_linear(out: &mut String, names: &[&str], terms: &[(VarId, f64)]) {
    for (n, (v, c)) in terms.iter().enumerate() {
        if n > 0 && n % TERMS_PER_LINE == 0 {
            out.push_str("\n   ");
        }
        let sign = if *c < 0.0 { '-' } else { '+' };
        let _ = write!(out, " {sign} {} {}", num(c.abs()), names[v.0]);
    }
}

/// Renders `sys` in LP format.
pub fn write_lp(sys: &MiConstraintSystem) -> String {
    let names: Vec<&str> = sys.variables().iter().map(|v| v.name.as_str()).collect();
    let mut out = String::new();
    let _ = writeln!(
        out,
        "\\ {} variables, {} rows, {} binaries",
        sys.num_variables(),
        sys.rows().len(),
        sys.binary_count()
    );
    out.push_str("Minimize\n obj:");
    let obj = sys.objective();
    push_linear(&mut out, &names, &obj.linear);
    if !obj.quadratic.is_empty() {
        out.push_str("\n    + [");
        for (n, (a, b, q)) in obj.quadratic.iter().enumerate() {
            if n > 0 && n % TERMS_PER_LINE == 0 {
                out.push_str("\n   ");
            }
            let sign = if *q < 0.0 { '-' } else { '+' };
            // The bracket is halved by the trailing `/ 2`.
            let c = num(2.0 * q.abs());
            if a == b {
                let _ = write!(out, " {sign} {c} {} ^ 2", names[a.0]);
            } else {
                let _ = write!(out, " {sign} {c} {} * {}", names[a.0], names[b.0]);
            }
        }
        out.push_str(" ] / 2");
    }
    if obj.constant != 0.0 || (obj.linear.is_empty() && obj.quadratic.is_empty()) {
        let sign = if obj.constant < 0.0 { '-' } else { '+' };
        let _ = write!(out, " {sign} {}", num(obj.constant.abs()));
    }
    out.push_str("\nSubject To\n");
    for row in sys.rows() {
        let _ = write!(out, " {}:", row.name);
        push_linear(&mut out, &names, &row.terms);
        if row.terms.is_empty() {
            // An empty left-hand side still needs a term.
            let _ = write!(out, " + 0 {}", names.first().copied().unwrap_or("_"));
        }
        let op = match row.sense {
            Sense::Le => "<=",
            Sense::Ge => ">=",
            Sense::Eq => "=",
        };
        let _ = writeln!(out, " {op} {}", num(row.rhs));
    }
    out.push_str("Bounds\n");
    for v in sys.variables() {
        if v.kind == VarKind::Binary {
            if v.is_fixed() {
                let _ = writeln!(out, " {} = {}", v.name, num(v.lower));
            }
            continue;
        }
        if v.is_fixed() {
            let _ = writeln!(out, " {} = {}", v.name, num(v.lower));
        } else if v.lower == f64::NEG_INFINITY && v.upper == f64::INFINITY {
            let _ = writeln!(out, " {} free", v.name);
        } else {
            let _ = writeln!(out, " {} <= {} <= {}", num(v.lower), v.name, num(v.upper));
        }
    }
    let binaries: Vec<&str> = sys
        .variables()
        .iter()
        .filter(|v| v.kind == VarKind::Binary)
        .map(|v| v.name.as_str())
        .collect();
    if !binaries.is_empty() {
        out.push_str("Binaries\n");
        for chunk in binaries.chunks(8) {
            let _ = writeln!(out, " {}", chunk.join(" "));
        }
    }
    out.push_str("End\n");
    out
}

pub fn export_lp(sys: &MiConstraintSystem, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, write_lp(sys)).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Name(String),
    Op(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Section {
    Objective,
    Constraints,
    Bounds,
    Binaries,
    Generals,
    End,
}

fn section_header(line: &str) -> Option<Section> {
    let l = line.trim().to_ascii_lowercase();
    match l.as_str() {
        "minimize" | "minimise" | "minimum" | "min" => Some(Section::Objective),
        "subject to" | "such that" | "st" | "s.t." | "st." => Some(Section::Constraints),
        "bounds" | "bound" => Some(Section::Bounds),
        "binaries" | "binary" | "bin" => Some(Section::Binaries),
        "generals" | "general" | "gen" => Some(Section::Generals),
        "end" => Some(Section::End),
        _ => None,
    }
}

fn is_name_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || "_.!\"#$%&(),;?@'{}|~".contains(c)
}

fn tokenize(text: &str, line: usize) -> Result<Vec<Tok>> {
    let chars: Vec<char> = text.chars().collect();
    let mut toks = Vec::new();
    let mut i = 0;
    let err = |m: String| Error::LpParse { line, message: m };
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        if c.is_ascii_digit() || (c == '.' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit()))
        {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                i += 1;
            }
            if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                let mut j = i + 1;
                if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                    j += 1;
                }
                if j < chars.len() && chars[j].is_ascii_digit() {
                    i = j;
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let s: String = chars[start..i].iter().collect();
            toks.push(Tok::Num(
                s.parse().map_err(|_| err(format!("bad number `{s}`")))?,
            ));
            continue;
        }
        let two: String = chars[i..(i + 2).min(chars.len())].iter().collect();
        let op = match two.as_str() {
            "<=" | "=<" => Some(("<=", 2)),
            ">=" | "=>" => Some((">=", 2)),
            _ => match c {
                '<' => Some(("<=", 1)),
                '>' => Some((">=", 1)),
                '=' => Some(("=", 1)),
                '+' => Some(("+", 1)),
                '-' => Some(("-", 1)),
                ':' => Some((":", 1)),
                '[' => Some(("[", 1)),
                ']' => Some(("]", 1)),
                '^' => Some(("^", 1)),
                '*' => Some(("*", 1)),
                '/' => Some(("/", 1)),
                _ => None,
            },
        };
        if let Some((op, len)) = op {
            toks.push(Tok::Op(op));
            i += len;
            continue;
        }
        if is_name_char(c) {
            let start = i;
            while i < chars.len() && is_name_char(chars[i]) {
                i += 1;
            }
            toks.push(Tok::Name(chars[start..i].iter().collect()));
            continue;
        }
        return Err(err(format!("unexpected character `{c}`")));
    }
    Ok(toks)
}

struct Builder {
    sys: MiConstraintSystem,
    index: HashMap<String, VarId>,
}

impl Builder {
    fn var(&mut self, name: &str) -> VarId {
        if let Some(v) = self.index.get(name) {
            return *v;
        }
        // LP default bounds are [0, +inf).
        let id = self.sys.add_continuous(name, 0.0, f64::INFINITY);
        self.index.insert(name.to_string(), id);
        id
    }
}

fn is_infinity(name: &str) -> bool {
    matches!(name.to_ascii_lowercase().as_str(), "inf" | "infinity")
}

/// Parses one linear/quadratic expression starting at `pos`; stops at a
/// comparison operator or end of tokens.
fn parse_expression(
    b: &mut Builder,
    toks: &[Tok],
    pos: &mut usize,
    line: usize,
    allow_quadratic: bool,
) -> Result<(Vec<(VarId, f64)>, Vec<(VarId, VarId, f64)>, f64)> {
    let err = |m: &str| Error::LpParse {
        line,
        message: m.to_string(),
    };
    let mut linear = Vec::new();
    let mut quad = Vec::new();
    let mut constant = 0.0;
    while *pos < toks.len() {
        let mut sign = 1.0;
        let mut saw_sign = false;
        while let Some(Tok::Op(op @ ("+" | "-"))) = toks.get(*pos) {
            if *op == "-" {
                sign = -sign;
            }
            saw_sign = true;
            *pos += 1;
        }
        match toks.get(*pos) {
            Some(Tok::Op("<=" | ">=" | "=")) | None => {
                if saw_sign {
                    return Err(err("dangling sign"));
                }
                break;
            }
            Some(Tok::Op("[")) if allow_quadratic => {
                *pos += 1;
                let mut bracket = Vec::new();
                loop {
                    let mut s = sign;
                    while let Some(Tok::Op(op @ ("+" | "-"))) = toks.get(*pos) {
                        if *op == "-" {
                            s = -s;
                        }
                        *pos += 1;
                    }
                    if let Some(Tok::Op("]")) = toks.get(*pos) {
                        *pos += 1;
                        break;
                    }
                    let mut coef = 1.0;
                    if let Some(Tok::Num(c)) = toks.get(*pos) {
                        coef = *c;
                        *pos += 1;
                    }
                    let Some(Tok::Name(a)) = toks.get(*pos).cloned() else {
                        return Err(err("expected variable in quadratic term"));
                    };
                    *pos += 1;
                    let va = b.var(&a);
                    match toks.get(*pos) {
                        Some(Tok::Op("^")) => {
                            *pos += 1;
                            match toks.get(*pos) {
                                Some(Tok::Num(p)) if *p == 2.0 => *pos += 1,
                                _ => return Err(err("only squares are supported")),
                            }
                            bracket.push((va, va, s * coef));
                        }
                        Some(Tok::Op("*")) => {
                            *pos += 1;
                            let Some(Tok::Name(c)) = toks.get(*pos).cloned() else {
                                return Err(err("expected variable after `*`"));
                            };
                            *pos += 1;
                            let vb = b.var(&c);
                            bracket.push((va, vb, s * coef));
                        }
                        _ => return Err(err("expected `^ 2` or `*` in quadratic term")),
                    }
                    s = 1.0;
                    let _ = s;
                }
                let mut divisor = 1.0;
                if let Some(Tok::Op("/")) = toks.get(*pos) {
                    *pos += 1;
                    match toks.get(*pos) {
                        Some(Tok::Num(d)) => {
                            divisor = *d;
                            *pos += 1;
                        }
                        _ => return Err(err("expected number after `/`")),
                    }
                }
                quad.extend(bracket.into_iter().map(|(a, c, q)| (a, c, q / divisor)));
            }
            Some(Tok::Num(c)) => {
                let c = *c;
                *pos += 1;
                if let Some(Tok::Name(n)) = toks.get(*pos).cloned() {
                    *pos += 1;
                    let v = b.var(&n);
                    linear.push((v, sign * c));
                } else {
                    constant += sign * c;
                }
            }
            Some(Tok::Name(n)) => {
                let n = n.clone();
                *pos += 1;
                let v = b.var(&n);
                linear.push((v, sign));
            }
            Some(t) => return Err(err(&format!("unexpected token {t:?}"))),
        }
    }
    Ok((linear, quad, constant))
}

fn signed_number(toks: &[Tok], pos: &mut usize, line: usize) -> Result<f64> {
    let mut sign = 1.0;
    while let Some(Tok::Op(op @ ("+" | "-"))) = toks.get(*pos) {
        if *op == "-" {
            sign = -sign;
        }
        *pos += 1;
    }
    match toks.get(*pos) {
        Some(Tok::Num(v)) => {
            *pos += 1;
            Ok(sign * v)
        }
        Some(Tok::Name(n)) if is_infinity(n) => {
            *pos += 1;
            Ok(sign * f64::INFINITY)
        }
        other => Err(Error::LpParse {
            line,
            message: format!("expected number, found {other:?}"),
        }),
    }
}

/// Parses LP text produced by [`write_lp`] (and the common subset of the
/// format used by other tools: ranged/one-sided bounds, `free`, binaries).
pub fn parse_lp(text: &str) -> Result<MiConstraintSystem> {
    let mut b = Builder {
        sys: MiConstraintSystem::new(),
        index: HashMap::new(),
    };
    // Gather each section's text with the line number where it starts.
    let mut sections: Vec<(Section, usize, String)> = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('\\').next().unwrap_or("");
        if let Some(sec) = section_header(line) {
            sections.push((sec, n + 1, String::new()));
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        match sections.last_mut() {
            Some((_, _, body)) => {
                body.push_str(line);
                body.push('\n');
            }
            None => {
                return Err(Error::LpParse {
                    line: n + 1,
                    message: "content before the objective section".into(),
                })
            }
        }
    }

    for (sec, line, body) in sections {
        match sec {
            Section::Objective => {
                let toks = tokenize(&body, line)?;
                let mut pos = 0;
                if let (Some(Tok::Name(_)), Some(Tok::Op(":"))) = (toks.first(), toks.get(1)) {
                    pos = 2;
                }
                let (linear, quadratic, constant) =
                    parse_expression(&mut b, &toks, &mut pos, line, true)?;
                if pos != toks.len() {
                    return Err(Error::LpParse {
                        line,
                        message: "trailing tokens in objective".into(),
                    });
                }
                b.sys.set_objective(Objective {
                    linear,
                    quadratic,
                    constant,
                });
            }
            Section::Constraints => {
                let toks = tokenize(&body, line)?;
                let mut pos = 0;
                let mut count = 0;
                while pos < toks.len() {
                    let name = if let (Some(Tok::Name(n)), Some(Tok::Op(":"))) =
                        (toks.get(pos), toks.get(pos + 1))
                    {
                        pos += 2;
                        n.clone()
                    } else {
                        format!("R{count}")
                    };
                    let (terms, quad, constant) =
                        parse_expression(&mut b, &toks, &mut pos, line, false)?;
                    if !quad.is_empty() {
                        return Err(Error::LpParse {
                            line,
                            message: "quadratic constraints are not supported".into(),
                        });
                    }
                    let sense = match toks.get(pos) {
                        Some(Tok::Op("<=")) => Sense::Le,
                        Some(Tok::Op(">=")) => Sense::Ge,
                        Some(Tok::Op("=")) => Sense::Eq,
                        other => {
                            return Err(Error::LpParse {
                                line,
                                message: format!(
                                    "row {name}: expected comparison, found {other:?}"
                                ),
                            })
                        }
                    };
                    pos += 1;
                    let rhs = signed_number(&toks, &mut pos, line)? - constant;
                    b.sys.add_row(name, terms, sense, rhs);
                    count += 1;
                }
            }
            Section::Bounds => {
                for (offset, text) in body.lines().enumerate() {
                    parse_bound(&mut b, text, line + offset + 1)?;
                }
            }
            Section::Binaries => {
                for tok in tokenize(&body, line)? {
                    let Tok::Name(n) = tok else {
                        return Err(Error::LpParse {
                            line,
                            message: "expected variable names in Binaries".into(),
                        });
                    };
                    let id = b.var(&n);
                    let v = b.sys.variable(id).clone();
                    let (lo, hi) = if v.is_fixed() && b.index.contains_key(&n) && v.lower != 0.0
                        || v.upper == v.lower
                    {
                        (v.lower, v.upper)
                    } else {
                        (0.0, 1.0)
                    };
                    set_kind_binary(&mut b.sys, id, lo, hi);
                }
            }
            Section::Generals => {
                return Err(Error::LpParse {
                    line,
                    message: "general integers are not supported".into(),
                })
            }
            Section::End => break,
        }
    }
    Ok(b.sys)
}

fn set_kind_binary(sys: &mut MiConstraintSystem, id: VarId, lower: f64, upper: f64) {
    let mut rebuilt = MiConstraintSystem::new();
    for (i, v) in sys.variables().iter().enumerate() {
        if i == id.0 {
            rebuilt.add_variable(v.name.clone(), VarKind::Binary, lower, upper);
        } else {
            rebuilt.add_variable(v.name.clone(), v.kind, v.lower, v.upper);
        }
    }
    for r in sys.rows() {
        rebuilt.add_row(r.name.clone(), r.terms.clone(), r.sense, r.rhs);
    }
    rebuilt.set_objective(sys.objective().clone());
    *sys = rebuilt;
}

fn parse_bound(b: &mut Builder, text: &str, line: usize) -> Result<()> {
    let toks = tokenize(text, line)?;
    let err = |m: &str| Error::LpParse {
        line,
        message: m.to_string(),
    };
    let mut pos = 0;
    // `x free`
    if let [Tok::Name(n), Tok::Name(kw)] = toks.as_slice() {
        if kw.eq_ignore_ascii_case("free") {
            let id = b.var(n);
            b.sys.set_bounds(id, f64::NEG_INFINITY, f64::INFINITY);
            return Ok(());
        }
    }
    let starts_with_number = matches!(toks.first(), Some(Tok::Num(_)) | Some(Tok::Op("+" | "-")))
        || matches!(toks.first(), Some(Tok::Name(n)) if is_infinity(n));
    if starts_with_number {
        // `l <= x [<= u]` or `l >= x [>= u]`
        let l = signed_number(&toks, &mut pos, line)?;
        let op = toks.get(pos).cloned();
        pos += 1;
        let Some(Tok::Name(n)) = toks.get(pos).cloned() else {
            return Err(err("expected variable name in bound"));
        };
        pos += 1;
        let id = b.var(&n);
        let (mut lo, mut hi) = (b.sys.variable(id).lower, b.sys.variable(id).upper);
        match op {
            Some(Tok::Op("<=")) => lo = l,
            Some(Tok::Op(">=")) => hi = l,
            Some(Tok::Op("=")) => {
                lo = l;
                hi = l;
            }
            _ => return Err(err("expected comparison in bound")),
        }
        if pos < toks.len() {
            let op2 = toks.get(pos).cloned();
            pos += 1;
            let u = signed_number(&toks, &mut pos, line)?;
            match op2 {
                Some(Tok::Op("<=")) => hi = u,
                Some(Tok::Op(">=")) => lo = u,
                _ => return Err(err("expected comparison in bound")),
            }
        }
        b.sys.set_bounds(id, lo, hi);
    } else {
        let Some(Tok::Name(n)) = toks.first().cloned() else {
            return Err(err("expected variable name in bound"));
        };
        pos = 1;
        let id = b.var(&n);
        let op = toks.get(pos).cloned();
        pos += 1;
        let val = signed_number(&toks, &mut pos, line)?;
        let (mut lo, mut hi) = (b.sys.variable(id).lower, b.sys.variable(id).upper);
        match op {
            Some(Tok::Op("<=")) => hi = val,
            Some(Tok::Op(">=")) => lo = val,
            Some(Tok::Op("=")) => {
                lo = val;
                hi = val;
            }
            _ => return Err(err("expected comparison in bound")),
        }
        b.sys.set_bounds(id, lo, hi);
    }
    if pos != toks.len() {
        return Err(err("trailing tokens in bound"));
    }
    Ok(())
}
