//! The s-expression PDDL subset: typed parameters, constants, conjunctive
//! preconditions and effects over positive or negated atoms.

use std::fmt::{self, Write as _};

use crate::sexpr::{parse_one, ParseError, Pos, Sexp};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PddlError {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("{pos}: undeclared {kind} `{name}`")]
    UndeclaredPredicate { kind: &'static str, name: String, pos: Pos },
    #[error("{pos}: `{name}` takes {expected} arguments, found {found}")]
    ArityMismatch {
        name: String,
        expected: usize,
        found: usize,
        pos: Pos,
    },
}

/// `?name - type`; untyped parameters carry the type `object`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TypedName {
    pub name: String,
    pub ty: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PredicateDecl {
    pub name: String,
    pub params: Vec<TypedName>,
}

/// A possibly negated atom whose arguments are variables (`?x`) or objects.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Literal {
    pub positive: bool,
    pub predicate: String,
    pub args: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActionSchema {
    pub name: String,
    pub params: Vec<TypedName>,
    pub precondition: Vec<Literal>,
    pub effect: Vec<Literal>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Domain {
    pub name: String,
    pub constants: Vec<TypedName>,
    pub predicates: Vec<PredicateDecl>,
    pub actions: Vec<ActionSchema>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Problem {
    pub name: String,
    pub domain: String,
    pub objects: Vec<TypedName>,
    pub init: Vec<Literal>,
    pub goal: Vec<Literal>,
}

impl Domain {
    pub fn predicate(&self, name: &str) -> Option<&PredicateDecl> {
        self.predicates.iter().find(|p| p.name == name)
    }

    pub fn action(&self, name: &str) -> Option<&ActionSchema> {
        self.actions.iter().find(|a| a.name == name)
    }

    pub fn constants_of<'a>(&'a self, ty: &'a str) -> impl Iterator<Item = &'a str> + 'a {
        self.constants.iter().filter(move |c| c.ty == ty).map(|c| c.name.as_str())
    }
}

impl Problem {
    pub fn objects_of<'a>(&'a self, ty: &'a str) -> impl Iterator<Item = &'a str> + 'a {
        self.objects.iter().filter(move |c| c.ty == ty).map(|c| c.name.as_str())
    }
}

fn err(at: &Sexp, msg: impl Into<String>) -> PddlError {
    ParseError::at(at.pos(), msg).into()
}

/// Splits `(define (kind name) sections...)`.
fn define<'a>(root: &'a Sexp, kind: &str) -> Result<(String, &'a [Sexp]), PddlError> {
    let items = root.expect_list("(define ...)")?;
    if root.head() != Some("define") || items.len() < 2 {
        return Err(err(root, "expected (define ...)"));
    }
    let header = items[1].expect_list("header")?;
    if items[1].head() != Some(kind) || header.len() != 2 {
        return Err(err(&items[1], format!("expected ({kind} <name>)")));
    }
    let name = header[1].expect_atom("name")?.to_string();
    Ok((name, &items[2..]))
}

/// `a b - t c - u d` style list; trailing names are `object`.
fn typed_list(items: &[Sexp], vars: bool) -> Result<Vec<TypedName>, PddlError> {
    let mut out = Vec::new();
    let mut pending: Vec<String> = Vec::new();
    let mut i = 0;
    while i < items.len() {
        let s = items[i].expect_atom("name")?;
        if s == "-" {
            let ty = items
                .get(i + 1)
                .ok_or_else(|| err(&items[i], "missing type after `-`"))?
                .expect_atom("type")?;
            if pending.is_empty() {
                return Err(err(&items[i], "type without names"));
            }
            out.extend(pending.drain(..).map(|name| TypedName { name, ty: ty.to_string() }));
            i += 2;
            continue;
        }
        if vars != s.starts_with('?') {
            let want = if vars { "a ?variable" } else { "an object name" };
            return Err(err(&items[i], format!("expected {want}, found `{s}`")));
        }
        pending.push(s.to_string());
        i += 1;
    }
    out.extend(pending.into_iter().map(|name| TypedName { name, ty: "object".into() }));
    Ok(out)
}

fn literal(e: &Sexp) -> Result<Literal, PddlError> {
    let items = e.expect_list("atom")?;
    if e.head() == Some("not") {
        if items.len() != 2 {
            return Err(err(e, "(not ...) takes one atom"));
        }
        let mut l = literal(&items[1])?;
        if !l.positive {
            return Err(err(e, "double negation"));
        }
        l.positive = false;
        return Ok(l);
    }
    let predicate = items
        .first()
        .ok_or_else(|| err(e, "empty atom"))?
        .expect_atom("predicate")?
        .to_string();
    let args = items[1..]
        .iter()
        .map(|a| a.expect_atom("argument").map(str::to_string))
        .collect::<Result<_, _>>()?;
    Ok(Literal {
        positive: true,
        predicate,
        args,
    })
}

/// An atom or an `(and ...)` of atoms.
fn conjunction(e: &Sexp) -> Result<Vec<(Literal, Pos)>, PddlError> {
    let items = e.expect_list("formula")?;
    if e.head() == Some("and") {
        items[1..].iter().map(|x| Ok((literal(x)?, x.pos()))).collect()
    } else if items.is_empty() {
        Ok(Vec::new())
    } else {
        Ok(vec![(literal(e)?, e.pos())])
    }
}

fn check_arity(decl: &PredicateDecl, l: &Literal, pos: Pos, allow_short: bool) -> Result<(), PddlError> {
    let n = decl.params.len();
    let ok = l.args.len() == n || (allow_short && l.args.len() + 1 == n);
    if ok {
        Ok(())
    } else {
        Err(PddlError::ArityMismatch {
            name: l.predicate.clone(),
            expected: n,
            found: l.args.len(),
            pos,
        })
    }
}

fn declared<'d>(decls: &'d [PredicateDecl], l: &Literal, pos: Pos) -> Result<&'d PredicateDecl, PddlError> {
    decls
        .iter()
        .find(|p| p.name == l.predicate)
        .ok_or_else(|| PddlError::UndeclaredPredicate {
            kind: "predicate",
            name: l.predicate.clone(),
            pos,
        })
}

pub fn parse_domain(text: &str) -> Result<Domain, PddlError> {
    let root = parse_one(text)?;
    let (name, sections) = define(&root, "domain")?;
    let mut d = Domain {
        name,
        constants: Vec::new(),
        predicates: Vec::new(),
        actions: Vec::new(),
    };
    // Actions are checked after every section is read so order does not matter.
    let mut raw_actions = Vec::new();
    for s in sections {
        let items = s.expect_list("section")?;
        match s.head() {
            Some(":requirements") | Some(":types") => {}
            Some(":constants") => d.constants.extend(typed_list(&items[1..], false)?),
            Some(":predicates") => {
                for p in &items[1..] {
                    let pi = p.expect_list("predicate declaration")?;
                    let name = pi
                        .first()
                        .ok_or_else(|| err(p, "empty predicate declaration"))?
                        .expect_atom("predicate name")?;
                    d.predicates.push(PredicateDecl {
                        name: name.to_string(),
                        params: typed_list(&pi[1..], true)?,
                    });
                }
            }
            Some(":action") => raw_actions.push(s),
            _ => return Err(err(s, "unknown domain section")),
        }
    }
    for s in raw_actions {
        d.actions.push(action(s, &d)?);
    }
    Ok(d)
}

fn action(s: &Sexp, d: &Domain) -> Result<ActionSchema, PddlError> {
    let items = s.expect_list("action")?;
    let name = items
        .get(1)
        .ok_or_else(|| err(s, "action without a name"))?
        .expect_atom("action name")?
        .to_string();
    let mut a = ActionSchema {
        name,
        params: Vec::new(),
        precondition: Vec::new(),
        effect: Vec::new(),
    };
    let mut parts = Vec::new();
    let mut i = 2;
    while i < items.len() {
        let key = items[i].expect_atom("action keyword")?;
        let value = items.get(i + 1).ok_or_else(|| err(&items[i], format!("missing value for {key}")))?;
        match key {
            ":parameters" => a.params = typed_list(value.expect_list("parameter list")?, true)?,
            ":precondition" => parts.push((true, conjunction(value)?)),
            ":effect" => parts.push((false, conjunction(value)?)),
            _ => return Err(err(&items[i], format!("unknown action keyword {key}"))),
        }
        i += 2;
    }
    for (is_pre, lits) in parts {
        for (l, pos) in lits {
            check_arity(declared(&d.predicates, &l, pos)?, &l, pos, false)?;
            for arg in &l.args {
                if !arg.starts_with('?') && !d.constants.iter().any(|c| &c.name == arg) {
                    return Err(PddlError::UndeclaredPredicate {
                        kind: "constant",
                        name: arg.clone(),
                        pos,
                    });
                }
            }
            if is_pre {
                a.precondition.push(l);
            } else {
                a.effect.push(l);
            }
        }
    }
    Ok(a)
}

/// Parses a problem against its domain. `on` atoms may omit the cell
/// argument: in the initial state this binds the body's scene pose, in the
/// goal it stands for any cell of the region.
pub fn parse_problem(text: &str, domain: &Domain) -> Result<Problem, PddlError> {
    let root = parse_one(text)?;
    let (name, sections) = define(&root, "problem")?;
    let mut p = Problem {
        name,
        domain: String::new(),
        objects: Vec::new(),
        init: Vec::new(),
        goal: Vec::new(),
    };
    let mut formulas = Vec::new();
    for s in sections {
        let items = s.expect_list("section")?;
        match s.head() {
            Some(":domain") => {
                if items.len() != 2 {
                    return Err(err(s, "(:domain <name>)"));
                }
                p.domain = items[1].expect_atom("domain name")?.to_string();
                if p.domain != domain.name {
                    return Err(err(&items[1], format!("problem is for domain `{}`", p.domain)));
                }
            }
            Some(":objects") => p.objects.extend(typed_list(&items[1..], false)?),
            Some(":init") => {
                for x in &items[1..] {
                    formulas.push((true, literal(x)?, x.pos()));
                }
            }
            Some(":goal") => {
                if items.len() != 2 {
                    return Err(err(s, "(:goal <formula>)"));
                }
                for (l, pos) in conjunction(&items[1])? {
                    formulas.push((false, l, pos));
                }
            }
            _ => return Err(err(s, "unknown problem section")),
        }
    }
    for (is_init, l, pos) in formulas {
        if !l.positive {
            return Err(err_at(pos, "negated atoms are not allowed here"));
        }
        let decl = declared(&domain.predicates, &l, pos)?;
        check_arity(decl, &l, pos, l.predicate == "on")?;
        for arg in &l.args {
            let known = p.objects.iter().chain(&domain.constants).any(|o| &o.name == arg);
            if !known {
                return Err(PddlError::UndeclaredPredicate {
                    kind: "object",
                    name: arg.clone(),
                    pos,
                });
            }
        }
        if is_init {
            p.init.push(l);
        } else {
            p.goal.push(l);
        }
    }
    Ok(p)
}

fn err_at(pos: Pos, msg: &str) -> PddlError {
    ParseError::at(pos, msg).into()
}

struct Typed<'a>(&'a [TypedName]);

impl fmt::Display for Typed<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for t in self.0 {
            if !first {
                f.write_char(' ')?;
            }
            first = false;
            if t.ty == "object" {
                write!(f, "{}", t.name)?;
            } else {
                write!(f, "{} - {}", t.name, t.ty)?;
            }
        }
        Ok(())
    }
}

impl fmt::Display for Literal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if !self.positive {
            f.write_str("(not ")?;
        }
        write!(f, "({}", self.predicate)?;
        for a in &self.args {
            write!(f, " {a}")?;
        }
        f.write_char(')')?;
        if !self.positive {
            f.write_char(')')?;
        }
        Ok(())
    }
}

fn write_and(out: &mut String, lits: &[Literal]) {
    out.push_str("(and");
    for l in lits {
        let _ = write!(out, " {l}");
    }
    out.push(')');
}

pub fn write_domain(d: &Domain) -> String {
    let mut out = format!("(define (domain {})\n", d.name);
    if !d.constants.is_empty() {
        let _ = writeln!(out, "  (:constants {})", Typed(&d.constants));
    }
    out.push_str("  (:predicates");
    for p in &d.predicates {
        if p.params.is_empty() {
            let _ = write!(out, "\n    ({})", p.name);
        } else {
            let _ = write!(out, "\n    ({} {})", p.name, Typed(&p.params));
        }
    }
    out.push(')');
    for a in &d.actions {
        let _ = write!(out, "\n  (:action {}\n    :parameters ({})\n    :precondition ", a.name, Typed(&a.params));
        write_and(&mut out, &a.precondition);
        out.push_str("\n    :effect ");
        write_and(&mut out, &a.effect);
        out.push(')');
    }
    out.push_str(")\n");
    out
}

pub fn write_problem(p: &Problem) -> String {
    let mut out = format!("(define (problem {})\n  (:domain {})\n", p.name, p.domain);
    let _ = writeln!(out, "  (:objects {})", Typed(&p.objects));
    out.push_str("  (:init");
    for l in &p.init {
        let _ = write!(out, " {l}");
    }
    out.push_str(")\n  (:goal ");
    write_and(&mut out, &p.goal);
    out.push_str("))\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const DOMAIN: &str = include_str!("../../fixtures/pickplace.domain");
    const PROBLEM: &str = include_str!("../../fixtures/unpack.problem");

    #[test]
    fn shipped_domain() {
        let d = parse_domain(DOMAIN).unwrap();
        let names: Vec<_> = d.actions.iter().map(|a| a.name.as_str()).collect();
        assert_eq!(names, ["pick", "place"]);
        assert_eq!(d.constants_of("direction").count(), 5);
        assert_eq!(d.action("place").unwrap().params.len(), 4);
    }

    #[test]
    fn round_trip() {
        let d = parse_domain(DOMAIN).unwrap();
        assert_eq!(parse_domain(&write_domain(&d)).unwrap(), d);
        let p = parse_problem(PROBLEM, &d).unwrap();
        assert_eq!(parse_problem(&write_problem(&p), &d).unwrap(), p);
    }

    #[test]
    fn unknown_goal_body() {
        let d = parse_domain(DOMAIN).unwrap();
        let text = PROBLEM.replace("(on green r2)", "(on purple r2)");
        assert!(matches!(
            parse_problem(&text, &d),
            Err(PddlError::UndeclaredPredicate { kind: "object", ref name, .. }) if name == "purple"
        ));
        let text = PROBLEM.replace("(on green r2)", "(inside green r2)");
        assert!(matches!(parse_problem(&text, &d), Err(PddlError::UndeclaredPredicate { kind: "predicate", .. })));
    }

    #[test]
    fn arity_and_syntax_errors() {
        let d = parse_domain(DOMAIN).unwrap();
        let text = PROBLEM.replace("(on green r2)", "(holding green)");
        assert!(matches!(parse_problem(&text, &d), Err(PddlError::ArityMismatch { expected: 2, found: 1, .. })));
        let bad = DOMAIN.replace("(not (handempty))", "(not (handempty green))");
        assert!(matches!(parse_domain(&bad), Err(PddlError::ArityMismatch { .. })));
        match parse_domain("(define (domain x)\n  (:predicates (p ?a)") {
            Err(PddlError::Parse(e)) => assert_eq!((e.line, e.col), (2, 3)),
            other => panic!("{other:?}"),
        }
    }
}
