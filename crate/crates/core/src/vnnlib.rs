//! VNN-LIB property files: an input box over `X_i` and disjunctive linear
//! constraints `C y <= t` over the outputs `Y_i`.
//!
//! Supported subset: `declare-const`, `assert`, `and`, `or`, `<=`, `>=`,
//! `+`, `-`, `*`. Conjunctions mixing input and output atoms are split; input
//! atoms under an `or` are rejected.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{BoundedTensor, Tensor};

/// Upper limit on the number of branches produced by distributing `and`
/// over `or`.
const MAX_BRANCHES: usize = 100_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TokenKind {
    LParen,
    RParen,
    Symbol,
    Number,
    Operator,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Token {
    pub kind: TokenKind,
    pub text: String,
}

const OPERATORS: &[&str] = &["<=", ">=", "<", ">", "=", "and", "or", "not", "assert", "declare-const", "+", "-", "*"];

fn err(msg: impl Into<String>) -> Error {
    Error::VnnLib(msg.into())
}

fn strip_comments(text: &str) -> String {
    text.lines().map(|line| line.split(';').next().unwrap_or("")).collect::<Vec<_>>().join("\n")
}

fn is_symbol_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || "_.-+*/<>=!?$%&^~@:".contains(c)
}

fn looks_numeric(s: &str) -> bool {
    let body = s.strip_prefix(['-', '+']).unwrap_or(s);
    let mut chars = body.chars();
    match chars.next() {
        Some(c) if c.is_ascii_digit() => true,
        Some('.') => chars.next().is_some_and(|c| c.is_ascii_digit()),
        _ => false,
    }
}

/// Split VNN-LIB text into tokens. Comments (`;` to end of line) are removed
/// first.
pub fn tokenize(text: &str) -> Result<Vec<Token>> {
    let text = strip_comments(text);
    let mut tokens = Vec::new();
    let mut chars = text.char_indices().peekable();
    while let Some(&(start, c)) = chars.peek() {
        match c {
            '(' => {
                tokens.push(Token { kind: TokenKind::LParen, text: "(".into() });
                chars.next();
            }
            ')' => {
                tokens.push(Token { kind: TokenKind::RParen, text: ")".into() });
                chars.next();
            }
            c if c.is_whitespace() => {
                chars.next();
            }
            c if is_symbol_char(c) => {
                let mut end = start;
                while let Some(&(i, c)) = chars.peek() {
                    if !is_symbol_char(c) {
                        break;
                    }
                    end = i + c.len_utf8();
                    chars.next();
                }
                let word = &text[start..end];
                let kind = if OPERATORS.contains(&word) {
                    TokenKind::Operator
                } else if looks_numeric(word) {
                    match word.parse::<f64>() {
                        Ok(v) if v.is_finite() => TokenKind::Number,
                        _ => return Err(err(format!("malformed numeric literal '{word}'"))),
                    }
                } else {
                    TokenKind::Symbol
                };
                tokens.push(Token { kind, text: word.to_string() });
            }
            other => return Err(err(format!("illegal character '{other}'"))),
        }
    }
    Ok(tokens)
}

#[derive(Clone, Debug, PartialEq)]
pub enum SExpr {
    Atom(Token),
    List(Vec<SExpr>),
}

impl SExpr {
    fn head(&self) -> Option<&str> {
        match self {
            SExpr::List(items) => match items.first() {
                Some(SExpr::Atom(t)) => Some(t.text.as_str()),
                _ => None,
            },
            SExpr::Atom(_) => None,
        }
    }
}

/// Build s-expressions from a token stream.
pub fn parse_sexprs(tokens: &[Token]) -> Result<Vec<SExpr>> {
    let mut stack: Vec<Vec<SExpr>> = vec![Vec::new()];
    for t in tokens {
        match t.kind {
            TokenKind::LParen => stack.push(Vec::new()),
            TokenKind::RParen => {
                let list = stack.pop().expect("non-empty stack");
                let parent = stack.last_mut().ok_or_else(|| err("unbalanced ')'"))?;
                parent.push(SExpr::List(list));
            }
            _ => stack.last_mut().expect("non-empty stack").push(SExpr::Atom(t.clone())),
        }
    }
    if stack.len() != 1 {
        return Err(err("unbalanced '(': unexpected end of input"));
    }
    Ok(stack.pop().unwrap())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum VarKind {
    X,
    Y,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Variable {
    pub kind: VarKind,
    pub index: usize,
}

fn parse_variable(name: &str) -> Option<Variable> {
    let (kind, rest) = if let Some(r) = name.strip_prefix("X_") {
        (VarKind::X, r)
    } else if let Some(r) = name.strip_prefix("Y_") {
        (VarKind::Y, r)
    } else {
        return None;
    };
    if rest.is_empty() || !rest.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    rest.parse().ok().map(|index| Variable { kind, index })
}

/// A term `coeff · Y_index` of an output constraint.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinearTerm {
    pub index: usize,
    pub coeff: f64,
}

/// Sparse affine expression over input and output variables.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LinearExpr {
    pub terms: BTreeMap<Variable, f64>,
    pub constant: f64,
}

impl LinearExpr {
    fn constant(c: f64) -> Self {
        LinearExpr { terms: BTreeMap::new(), constant: c }
    }

    fn add_scaled(&mut self, other: &LinearExpr, s: f64) {
        for (&v, &c) in &other.terms {
            *self.terms.entry(v).or_insert(0.0) += s * c;
        }
        self.constant += s * other.constant;
    }

    fn prune(mut self) -> Self {
        self.terms.retain(|_, c| *c != 0.0);
        self
    }

    fn has(&self, kind: VarKind) -> bool {
        self.terms.keys().any(|v| v.kind == kind)
    }

    fn is_constant(&self) -> bool {
        self.terms.is_empty()
    }
}

fn linear_expr(e: &SExpr) -> Result<LinearExpr> {
    match e {
        SExpr::Atom(t) => match t.kind {
            TokenKind::Number => Ok(LinearExpr::constant(t.text.parse().expect("validated numeric"))),
            TokenKind::Symbol => {
                let v = parse_variable(&t.text).ok_or_else(|| err(format!("unknown symbol '{}'", t.text)))?;
                let mut terms = BTreeMap::new();
                terms.insert(v, 1.0);
                Ok(LinearExpr { terms, constant: 0.0 })
            }
            _ => Err(err(format!("unexpected '{}' in expression", t.text))),
        },
        SExpr::List(items) => {
            let op = e.head().ok_or_else(|| err("expression must start with an operator"))?;
            let args = items[1..].iter().map(linear_expr).collect::<Result<Vec<_>>>()?;
            if args.is_empty() {
                return Err(err(format!("operator '{op}' needs arguments")));
            }
            match op {
                "+" => {
                    let mut acc = LinearExpr::default();
                    for a in &args {
                        acc.add_scaled(a, 1.0);
                    }
                    Ok(acc.prune())
                }
                "-" => {
                    let mut acc = LinearExpr::default();
                    if args.len() == 1 {
                        acc.add_scaled(&args[0], -1.0);
                    } else {
                        acc.add_scaled(&args[0], 1.0);
                        for a in &args[1..] {
                            acc.add_scaled(a, -1.0);
                        }
                    }
                    Ok(acc.prune())
                }
                "*" => {
                    let mut scale = 1.0;
                    let mut var_part: Option<&LinearExpr> = None;
                    for a in &args {
                        if a.is_constant() {
                            scale *= a.constant;
                        } else if var_part.is_some() {
                            return Err(err("product of two variables is not linear"));
                        } else {
                            var_part = Some(a);
                        }
                    }
                    let mut acc = LinearExpr::default();
                    match var_part {
                        Some(v) => acc.add_scaled(v, scale),
                        None => acc.constant = scale,
                    }
                    Ok(acc.prune())
                }
                other => Err(err(format!("unsupported operator '{other}' in expression"))),
            }
        }
    }
}

/// Parse a linear expression over the outputs `Y_i`, combining like terms.
pub fn parse_linear_expression(tokens: &[Token]) -> Result<(Vec<LinearTerm>, f64)> {
    let exprs = parse_sexprs(tokens)?;
    let [e] = exprs.as_slice() else {
        return Err(err(format!("expected one expression, found {}", exprs.len())));
    };
    let lin = linear_expr(e)?;
    if lin.has(VarKind::X) {
        return Err(err("input variable in an output expression"));
    }
    let terms = lin.terms.iter().map(|(v, &coeff)| LinearTerm { index: v.index, coeff }).collect();
    Ok((terms, lin.constant))
}

/// `Σ coeff·Y_index <= rhs`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConstraintRow {
    pub terms: Vec<LinearTerm>,
    pub rhs: f64,
}

impl ConstraintRow {
    pub fn evaluate(&self, y: &[f64]) -> f64 {
        self.terms.iter().map(|t| t.coeff * y[t.index]).sum()
    }

    pub fn is_satisfied(&self, y: &[f64]) -> bool {
        self.evaluate(y) <= self.rhs
    }
}

/// Disjunction of conjunctions of output constraint rows.
#[derive(Clone, Debug, PartialEq)]
pub struct OutputConstraintSet {
    branches: Vec<Vec<ConstraintRow>>,
}

impl OutputConstraintSet {
    pub fn new(branches: Vec<Vec<ConstraintRow>>) -> Result<Self> {
        if branches.is_empty() {
            return Err(err("constraint set needs at least one branch"));
        }
        if let Some(i) = branches.iter().position(Vec::is_empty) {
            return Err(err(format!("branch {i} has no constraints")));
        }
        Ok(OutputConstraintSet { branches })
    }

    pub fn branches(&self) -> &[Vec<ConstraintRow>] {
        &self.branches
    }
}

/// Input box plus optional output constraints parsed from one file.
#[derive(Clone, Debug, PartialEq)]
pub struct VnnLibSpec {
    pub input: BoundedTensor,
    pub output: Option<OutputConstraintSet>,
}

enum Comparison {
    Le,
    Ge,
}

#[derive(Default)]
struct Collected {
    declared: Vec<Variable>,
    input_bounds: BTreeMap<usize, (f64, f64)>,
    /// Disjunction of conjunctions; `None` when no output atom was seen.
    branches: Option<Vec<Vec<ConstraintRow>>>,
}

fn comparison(e: &SExpr) -> Result<(Comparison, &SExpr, &SExpr)> {
    let SExpr::List(items) = e else { return Err(err("expected a comparison")) };
    let op = match e.head() {
        Some("<=") => Comparison::Le,
        Some(">=") => Comparison::Ge,
        Some(op @ ("<" | ">" | "=" | "not")) => return Err(err(format!("unsupported connective '{op}'"))),
        Some(op) => return Err(err(format!("unsupported formula head '{op}'"))),
        None => return Err(err("malformed formula")),
    };
    if items.len() != 3 {
        return Err(err("comparison takes exactly two operands"));
    }
    Ok((op, &items[1], &items[2]))
}

fn tighten(bounds: &mut BTreeMap<usize, (f64, f64)>, index: usize, lo: f64, hi: f64) {
    let e = bounds.entry(index).or_insert((f64::NEG_INFINITY, f64::INFINITY));
    e.0 = e.0.max(lo);
    e.1 = e.1.min(hi);
}

fn cross(a: Vec<Vec<ConstraintRow>>, b: Vec<Vec<ConstraintRow>>) -> Result<Vec<Vec<ConstraintRow>>> {
    if a.len().saturating_mul(b.len()) > MAX_BRANCHES {
        return Err(err(format!("more than {MAX_BRANCHES} branches after distributing 'and' over 'or'")));
    }
    let mut out = Vec::with_capacity(a.len() * b.len());
    for x in &a {
        for y in &b {
            out.push(x.iter().chain(y).cloned().collect());
        }
    }
    Ok(out)
}

impl Collected {
    /// Disjunctive normal form of the output atoms of `f`; input atoms are
    /// recorded into the box. `None` means the formula has no output atoms.
    fn formula(&mut self, f: &SExpr, under_or: bool) -> Result<Option<Vec<Vec<ConstraintRow>>>> {
        let SExpr::List(items) = f else { return Err(err("expected a formula")) };
        match f.head() {
            Some("and") => {
                let mut acc: Option<Vec<Vec<ConstraintRow>>> = None;
                for child in &items[1..] {
                    if let Some(b) = self.formula(child, under_or)? {
                        acc = Some(match acc {
                            None => b,
                            Some(a) => cross(a, b)?,
                        });
                    }
                }
                Ok(acc)
            }
            Some("or") => {
                let mut out = Vec::new();
                for child in &items[1..] {
                    match self.formula(child, true)? {
                        Some(b) => out.extend(b),
                        None => return Err(err("disjunct without output constraints")),
                    }
                }
                if out.is_empty() {
                    return Err(err("empty 'or'"));
                }
                Ok(Some(out))
            }
            _ => {
                let (op, lhs, rhs) = comparison(f)?;
                let (l, r) = (linear_expr(lhs)?, linear_expr(rhs)?);
                // normalized: diff <= 0
                let mut diff = LinearExpr::default();
                match op {
                    Comparison::Le => {
                        diff.add_scaled(&l, 1.0);
                        diff.add_scaled(&r, -1.0);
                    }
                    Comparison::Ge => {
                        diff.add_scaled(&r, 1.0);
                        diff.add_scaled(&l, -1.0);
                    }
                }
                let diff = diff.prune();
                let (has_x, has_y) = (diff.has(VarKind::X), diff.has(VarKind::Y));
                for v in diff.terms.keys() {
                    if !self.declared.contains(v) {
                        let prefix = if v.kind == VarKind::X { "X" } else { "Y" };
                        return Err(err(format!("variable {prefix}_{} used before declaration", v.index)));
                    }
                }
                match (has_x, has_y) {
                    (true, true) => Err(err("comparison mixes input and output variables")),
                    (true, false) => {
                        if under_or {
                            return Err(err("disjunctive input constraints are not supported"));
                        }
                        if diff.terms.len() != 1 {
                            return Err(err("input constraint must bound a single variable by a constant"));
                        }
                        let (v, c) = diff.terms.iter().next().map(|(v, c)| (*v, *c)).unwrap();
                        let bound = -diff.constant / c;
                        if c > 0.0 {
                            tighten(&mut self.input_bounds, v.index, f64::NEG_INFINITY, bound);
                        } else {
                            tighten(&mut self.input_bounds, v.index, bound, f64::INFINITY);
                        }
                        Ok(None)
                    }
                    (false, true) => {
                        let terms = diff.terms.iter().map(|(v, &coeff)| LinearTerm { index: v.index, coeff }).collect();
                        Ok(Some(vec![vec![ConstraintRow { terms, rhs: -diff.constant }]]))
                    }
                    (false, false) => Err(err("comparison without variables")),
                }
            }
        }
    }

    fn collect(tokens: &[Token]) -> Result<Self> {
        let mut c = Collected::default();
        for form in parse_sexprs(tokens)? {
            let SExpr::List(items) = &form else {
                return Err(err("top-level atoms are not allowed"));
            };
            match form.head() {
                Some("declare-const") => {
                    let name = match items.get(1) {
                        Some(SExpr::Atom(t)) => t.text.as_str(),
                        _ => return Err(err("malformed declare-const")),
                    };
                    let v = parse_variable(name)
                        .ok_or_else(|| err(format!("variable '{name}' is not of the form X_i or Y_i")))?;
                    match items.get(2) {
                        Some(SExpr::Atom(t)) if t.text == "Real" && items.len() == 3 => {}
                        _ => return Err(err(format!("declare-const {name} must have sort Real"))),
                    }
                    if !c.declared.contains(&v) {
                        c.declared.push(v);
                    }
                }
                Some("assert") => {
                    if items.len() != 2 {
                        return Err(err("assert takes one formula"));
                    }
                    if let Some(b) = c.formula(&items[1], false)? {
                        c.branches = Some(match c.branches.take() {
                            None => b,
                            Some(a) => cross(a, b)?,
                        });
                    }
                }
                Some("set-logic" | "set-info" | "check-sat" | "get-model" | "exit") => {}
                Some(other) => return Err(err(format!("unsupported command '{other}'"))),
                None => return Err(err("malformed top-level form")),
            }
        }
        Ok(c)
    }

    fn input_box(&self, n: usize) -> Result<BoundedTensor> {
        if let Some(v) = self.declared.iter().find(|v| v.kind == VarKind::X && v.index >= n) {
            return Err(err(format!("X_{} is out of range for {n} inputs", v.index)));
        }
        if let Some(&i) = self.input_bounds.keys().find(|&&i| i >= n) {
            return Err(err(format!("X_{i} is out of range for {n} inputs")));
        }
        let mut lo = vec![f64::NEG_INFINITY; n];
        let mut hi = vec![f64::INFINITY; n];
        for (&i, &(l, h)) in &self.input_bounds {
            if l > h {
                return Err(err(format!("contradictory bounds on X_{i}: [{l}, {h}]")));
            }
            lo[i] = l;
            hi[i] = h;
        }
        BoundedTensor::new(Tensor::new(vec![n], lo)?, Tensor::new(vec![n], hi)?)
    }

    fn output_set(&self, m: usize) -> Result<Option<OutputConstraintSet>> {
        let Some(branches) = &self.branches else { return Ok(None) };
        for row in branches.iter().flatten() {
            if let Some(t) = row.terms.iter().find(|t| t.index >= m) {
                return Err(err(format!("Y_{} is out of range for {m} outputs", t.index)));
            }
        }
        OutputConstraintSet::new(branches.clone()).map(Some)
    }
}

pub fn parse_input_bounds(tokens: &[Token], expected_input_size: usize) -> Result<BoundedTensor> {
    Collected::collect(tokens)?.input_box(expected_input_size)
}

pub fn parse_output_constraints(tokens: &[Token], expected_output_size: usize) -> Result<OutputConstraintSet> {
    Collected::collect(tokens)?
        .output_set(expected_output_size)?
        .ok_or_else(|| err("no output constraints"))
}

pub fn parse_input_and_output(tokens: &[Token], input_size: usize, output_size: usize) -> Result<VnnLibSpec> {
    let c = Collected::collect(tokens)?;
    Ok(VnnLibSpec { input: c.input_box(input_size)?, output: c.output_set(output_size)? })
}

pub fn parse_str(text: &str, input_size: usize, output_size: usize) -> Result<VnnLibSpec> {
    parse_input_and_output(&tokenize(text)?, input_size, output_size)
}

pub fn read_vnnlib(path: impl AsRef<Path>, input_size: usize, output_size: usize) -> Result<VnnLibSpec> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
    parse_str(&text, input_size, output_size)
}

fn num(v: f64) -> String {
    format!("{v:?}")
}

fn row_text(row: &ConstraintRow) -> String {
    let mut s = String::from("(<= (+");
    for t in &row.terms {
        let _ = write!(s, " (* {} Y_{})", num(t.coeff), t.index);
    }
    let _ = write!(s, ") {})", num(row.rhs));
    s
}

/// Canonical text for a parsed spec; parsing it back yields the same value.
pub fn to_canonical_text(spec: &VnnLibSpec, output_size: usize) -> String {
    let mut s = String::new();
    let n = spec.input.numel();
    for i in 0..n {
        let _ = writeln!(s, "(declare-const X_{i} Real)");
    }
    for j in 0..output_size {
        let _ = writeln!(s, "(declare-const Y_{j} Real)");
    }
    for i in 0..n {
        let (l, h) = (spec.input.lower().data()[i], spec.input.upper().data()[i]);
        if l.is_finite() {
            let _ = writeln!(s, "(assert (>= X_{i} {}))", num(l));
        }
        if h.is_finite() {
            let _ = writeln!(s, "(assert (<= X_{i} {}))", num(h));
        }
    }
    if let Some(out) = &spec.output {
        match out.branches() {
            [single] => {
                for row in single {
                    let _ = writeln!(s, "(assert {})", row_text(row));
                }
            }
            many => {
                s.push_str("(assert (or");
                for branch in many {
                    s.push_str(" (and");
                    for row in branch {
                        s.push(' ');
                        s.push_str(&row_text(row));
                    }
                    s.push(')');
                }
                s.push_str("))\n");
            }
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kinds(ts: &[Token]) -> Vec<TokenKind> {
        ts.iter().map(|t| t.kind).collect()
    }

    const DECL: &str = "(declare-const X_0 Real)(declare-const X_1 Real)(declare-const Y_0 Real)(declare-const Y_1 Real)";

    #[test]
    fn tokenize_examples() {
        use TokenKind::*;
        let ts = tokenize("(assert (<= X_0 1.0))").unwrap();
        assert_eq!(kinds(&ts), vec![LParen, Operator, LParen, Operator, Symbol, Number, RParen, RParen]);
        assert_eq!(ts[4].text, "X_0");
        assert_eq!(ts[5].text, "1.0");

        let ts = tokenize("; comment (assert\n(assert (>= X_0 -2e-3)) ; trailing").unwrap();
        assert_eq!(ts.len(), 8);
        assert_eq!(ts[5].text, "-2e-3");

        assert!(matches!(tokenize("(<= X_0 1..0)"), Err(Error::VnnLib(m)) if m.contains("numeric")));
        assert!(tokenize("(<= X_0 #1)").is_err());
    }

    #[test]
    fn input_bounds_examples() {
        let text = format!("{DECL}(assert (>= X_0 -1.0))(assert (<= X_0 1.0))");
        let b = parse_input_bounds(&tokenize(&text).unwrap(), 2).unwrap();
        assert_eq!(b.lower().data(), &[-1.0, f64::NEG_INFINITY]);
        assert_eq!(b.upper().data(), &[1.0, f64::INFINITY]);

        let text = format!("{DECL}(assert (and (<= X_0 2) (>= X_0 0)))");
        let b = parse_input_bounds(&tokenize(&text).unwrap(), 2).unwrap();
        assert_eq!((b.lower().data()[0], b.upper().data()[0]), (0.0, 2.0));

        // duplicate bounds intersect
        let text = format!("{DECL}(assert (<= X_1 3))(assert (<= X_1 2))(assert (>= 1 X_0))");
        let b = parse_input_bounds(&tokenize(&text).unwrap(), 2).unwrap();
        assert_eq!(b.upper().data(), &[1.0, 2.0]);
    }

    #[test]
    fn input_bound_errors() {
        let text = "(declare-const X_5 Real)(assert (<= X_5 1))";
        assert!(parse_input_bounds(&tokenize(text).unwrap(), 2).is_err());
        let text = format!("{DECL}(assert (<= X_0 0))(assert (>= X_0 1))");
        assert!(parse_input_bounds(&tokenize(&text).unwrap(), 2).is_err());
        let text = format!("{DECL}(assert (<= X_0 X_1))");
        assert!(parse_input_bounds(&tokenize(&text).unwrap(), 2).is_err());
        let text = format!("{DECL}(assert (or (<= X_0 1) (<= Y_0 1)))");
        assert!(parse_input_bounds(&tokenize(&text).unwrap(), 2).is_err());
        let text = "(assert (<= X_0 1))";
        assert!(parse_input_bounds(&tokenize(text).unwrap(), 2).is_err());
    }

    #[test]
    fn linear_expression_examples() {
        let (terms, c) = parse_linear_expression(&tokenize("(- Y_0 Y_1)").unwrap()).unwrap();
        assert_eq!(terms, vec![LinearTerm { index: 0, coeff: 1.0 }, LinearTerm { index: 1, coeff: -1.0 }]);
        assert_eq!(c, 0.0);
        let (terms, c) = parse_linear_expression(&tokenize("(+ (* 2 Y_0) 3)").unwrap()).unwrap();
        assert_eq!(terms, vec![LinearTerm { index: 0, coeff: 2.0 }]);
        assert_eq!(c, 3.0);
        assert!(parse_linear_expression(&tokenize("(* Y_0 Y_1)").unwrap()).is_err());
        assert!(parse_linear_expression(&tokenize("(+ Z_0 1)").unwrap()).is_err());
        let (terms, _) = parse_linear_expression(&tokenize("(+ Y_1 (- Y_1) Y_0)").unwrap()).unwrap();
        assert_eq!(terms, vec![LinearTerm { index: 0, coeff: 1.0 }]);
    }

    #[test]
    fn output_constraint_examples() {
        let set = parse_output_constraints(&tokenize(&format!("{DECL}(assert (>= Y_0 Y_1))")).unwrap(), 2).unwrap();
        assert_eq!(
            set.branches(),
            &[vec![ConstraintRow {
                terms: vec![LinearTerm { index: 0, coeff: -1.0 }, LinearTerm { index: 1, coeff: 1.0 }],
                rhs: 0.0
            }]]
        );
        let set = parse_output_constraints(
            &tokenize(&format!("{DECL}(assert (or (<= Y_0 0) (<= Y_1 0)))")).unwrap(),
            2,
        )
        .unwrap();
        assert_eq!(set.branches().len(), 2);
        let set =
            parse_output_constraints(&tokenize(&format!("{DECL}(assert (<= (- Y_0 Y_1) 0.5))")).unwrap(), 2).unwrap();
        assert_eq!(set.branches()[0][0].rhs, 0.5);
        assert_eq!(set.branches()[0][0].terms[1], LinearTerm { index: 1, coeff: -1.0 });
    }

    #[test]
    fn output_constraint_errors() {
        let out_of_range = format!("{DECL}(declare-const Y_7 Real)(assert (<= Y_7 0))");
        assert!(parse_output_constraints(&tokenize(&out_of_range).unwrap(), 2).is_err());
        let mixed = format!("{DECL}(assert (<= Y_0 X_0))");
        assert!(parse_output_constraints(&tokenize(&mixed).unwrap(), 2).is_err());
        let strict = format!("{DECL}(assert (< Y_0 1))");
        assert!(parse_output_constraints(&tokenize(&strict).unwrap(), 2).is_err());
        let none = format!("{DECL}(assert (<= X_0 1))");
        assert!(parse_output_constraints(&tokenize(&none).unwrap(), 2).is_err());
    }

    #[test]
    fn combined_conjunction_is_split() {
        let text = format!("{DECL}(assert (and (>= X_0 0) (<= X_0 1) (<= Y_0 Y_1)))");
        let spec = parse_str(&text, 2, 2).unwrap();
        assert_eq!((spec.input.lower().data()[0], spec.input.upper().data()[0]), (0.0, 1.0));
        assert_eq!(spec.output.unwrap().branches()[0].len(), 1);
    }

    #[test]
    fn and_distributes_over_or() {
        let text = format!("{DECL}(assert (<= Y_0 5))(assert (or (<= Y_0 0) (and (<= Y_1 0) (>= Y_1 -1))))");
        let set = parse_str(&text, 2, 2).unwrap().output.unwrap();
        assert_eq!(set.branches().len(), 2);
        assert_eq!(set.branches()[0].len(), 2);
        assert_eq!(set.branches()[1].len(), 3);
    }

    #[test]
    fn canonical_text_round_trips() {
        let text = format!(
            "{DECL}(assert (>= X_0 -1e-7))(assert (<= X_0 0.3))(assert (or (<= Y_0 0) (and (>= Y_1 Y_0) (<= (* 3 Y_1) 2.5))))"
        );
        let spec = parse_str(&text, 2, 2).unwrap();
        let again = parse_str(&to_canonical_text(&spec, 2), 2, 2).unwrap();
        assert_eq!(spec, again);
    }
}
