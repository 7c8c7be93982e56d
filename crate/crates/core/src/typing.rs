//! Coverage types, triple types, typing contexts, and the local-variable
//! elimination that turns a per-call derivation into a top-level judgment.

use std::collections::BTreeSet;
use std::fmt;

use crate::error::{Error, ParseError, Result};
use crate::guards::{self, Atom, AtomKind, ConstraintStore, Scope, Sort, Term, Var};
use crate::lexer::{Cursor, Tok};
use crate::sre::Sre;

/// `{base | qualifier}` where the qualifier is a conjunction over `nu`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CoverageType {
    pub base: Sort,
    pub qual: ConstraintStore,
}

impl CoverageType {
    pub fn top(base: Sort) -> Self {
        CoverageType {
            base,
            qual: ConstraintStore::new(),
        }
    }

    pub fn new(base: Sort, qual: ConstraintStore) -> Self {
        CoverageType { base, qual }
    }

    pub fn nu(&self) -> Var {
        Var::nu(self.base)
    }

    /// The qualifier with `nu` replaced by `t`.
    pub fn instantiate(&self, t: &Term) -> ConstraintStore {
        self.qual.subst(&self.nu(), t)
    }

    pub fn subst(&self, x: &Var, t: &Term) -> CoverageType {
        CoverageType {
            base: self.base,
            qual: self.qual.subst(x, t),
        }
    }

    pub fn mentions(&self, x: &Var) -> bool {
        self.qual.atoms().any(|a| a.mentions(x))
    }

    pub fn parse(text: &str, scope: &Scope) -> Result<CoverageType, ParseError> {
        let mut cur = Cursor::new(text)?;
        let t = parse_coverage_in(&mut cur, scope)?;
        cur.expect_eof()?;
        Ok(t)
    }
}

impl fmt::Display for CoverageType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{{} | {}}}", self.base, QualDisplay(&self.qual))
    }
}

struct QualDisplay<'a>(&'a ConstraintStore);

impl fmt::Display for QualDisplay<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return f.write_str("true");
        }
        let parts: Vec<String> = self
            .0
            .atoms()
            .map(|a| match a.rhs.as_var() {
                Some(v) if v.is_nu() => {
                    let op = if a.kind == AtomKind::Eq { "=" } else { "!=" };
                    format!("{} {op} {}", a.rhs, a.lhs)
                }
                _ => a.to_string(),
            })
            .collect();
        f.write_str(&parts.join(" && "))
    }
}

/// `true` or `atom && atom ...`.
pub(crate) fn parse_qualifier_in(
    cur: &mut Cursor,
    scope: &Scope,
) -> Result<ConstraintStore, ParseError> {
    if cur.eat_keyword("true") {
        return Ok(ConstraintStore::new());
    }
    let mut store = ConstraintStore::new();
    loop {
        store.insert(guards::parse_atom_in(cur, scope)?);
        if !cur.eat(&Tok::AndAnd) {
            return Ok(store);
        }
    }
}

fn parse_sort(cur: &mut Cursor) -> Result<Sort, ParseError> {
    let pos = cur.pos();
    let name = cur.ident()?;
    Sort::parse(&name).ok_or_else(|| ParseError::new(pos, format!("unknown sort `{name}`")))
}

/// A bare sort or `{sort | qualifier}`. `nu` is added to the scope.
pub(crate) fn parse_coverage_in(
    cur: &mut Cursor,
    scope: &Scope,
) -> Result<CoverageType, ParseError> {
    if !cur.eat(&Tok::LBrace) {
        return Ok(CoverageType::top(parse_sort(cur)?));
    }
    let base = parse_sort(cur)?;
    cur.expect(&Tok::Bar)?;
    let mut vars = scope.vars.to_vec();
    vars.push(Var::nu(base));
    let inner = Scope::new(scope.alphabet, &vars);
    let qual = parse_qualifier_in(cur, &inner)?;
    cur.expect(&Tok::RBrace)?;
    check_qualifier_sorts(&qual, base).map_err(|e| cur.error(e.to_string()))?;
    Ok(CoverageType { base, qual })
}

fn check_qualifier_sorts(qual: &ConstraintStore, base: Sort) -> Result<()> {
    if base == Sort::Unit && qual.vars().iter().any(Var::is_nu) {
        return Err(Error::Sort("a unit qualifier cannot constrain `nu`".into()));
    }
    qual.check_sorts()
}

pub(crate) fn parse_sort_in(cur: &mut Cursor) -> Result<Sort, ParseError> {
    parse_sort(cur)
}

/// `⟨context⟩ {result} ⟨effect⟩`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TripleType {
    pub context: Sre,
    pub result: CoverageType,
    pub effect: Sre,
}

impl TripleType {
    pub fn subst(&self, x: &Var, t: &Term) -> TripleType {
        TripleType {
            context: self.context.subst(x, t),
            result: self.result.subst(x, t),
            effect: self.effect.subst(x, t),
        }
    }

    pub fn mentions(&self, x: &Var) -> bool {
        self.context.vars().contains(x) || self.effect.vars().contains(x) || self.result.mentions(x)
    }
}

impl fmt::Display for TripleType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}] {} [{}]", self.context, self.result, self.effect)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CtxEntry {
    pub var: Var,
    pub ty: CoverageType,
    pub ghost: bool,
}

/// Ordered bindings; later qualifiers may mention earlier variables.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TypingContext {
    entries: Vec<CtxEntry>,
}

impl TypingContext {
    pub fn new() -> Self {
        TypingContext::default()
    }

    pub fn entries(&self) -> &[CtxEntry] {
        &self.entries
    }

    pub fn push(&mut self, var: Var, ty: CoverageType, ghost: bool) -> Result<()> {
        if self.get(var.name()).is_some() {
            return Err(Error::Invalid(format!("`{}` is bound twice", var.name())));
        }
        self.entries.push(CtxEntry { var, ty, ghost });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&CtxEntry> {
        self.entries.iter().find(|e| e.var.name() == name)
    }

    pub fn vars(&self) -> Vec<Var> {
        self.entries.iter().map(|e| e.var.clone()).collect()
    }

    fn position(&self, v: &Var) -> Option<usize> {
        self.entries.iter().position(|e| e.var == *v)
    }

    /// All qualifiers with `nu` instantiated to their own variable.
    pub fn to_store(&self) -> ConstraintStore {
        let mut s = ConstraintStore::new();
        for e in &self.entries {
            for a in e.ty.instantiate(&Term::Var(e.var.clone())).atoms() {
                s.insert(a.clone());
            }
        }
        s
    }

    /// Records `atom` on the latest-declared variable it mentions.
    pub fn attach(&mut self, atom: &Atom) -> Result<()> {
        let idx = atom
            .vars()
            .filter_map(|v| self.position(v))
            .max()
            .ok_or_else(|| Error::Unbound(atom.to_string()))?;
        let entry = &mut self.entries[idx];
        let nu = Term::Var(entry.ty.nu());
        let lifted = atom.subst(&entry.var, &nu);
        if lifted.decided() != Some(true) {
            entry.ty.qual.insert(lifted);
        }
        Ok(())
    }

    pub fn subst(&self, x: &Var, t: &Term) -> TypingContext {
        TypingContext {
            entries: self
                .entries
                .iter()
                .map(|e| CtxEntry {
                    var: e.var.clone(),
                    ty: e.ty.subst(x, t),
                    ghost: e.ghost,
                })
                .collect(),
        }
    }

    fn remove(&mut self, x: &Var) -> Option<CtxEntry> {
        let i = self.position(x)?;
        Some(self.entries.remove(i))
    }
}

impl fmt::Display for TypingContext {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self
            .entries
            .iter()
            .map(|e| {
                let tag = if e.ghost { "ghost " } else { "" };
                format!("{tag}{}:{}", e.var, e.ty)
            })
            .collect();
        f.write_str(&parts.join(", "))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Judgment {
    pub ctx: TypingContext,
    /// Name of the program (or program suffix) being typed.
    pub subject: String,
    pub ty: TripleType,
}

impl fmt::Display for Judgment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} |- {} : {}", self.ctx, self.subject, self.ty)
    }
}

fn check_subst_sort(x: &Var, t: &Term) -> Result<()> {
    match t.sort() {
        Some(s) if s != x.sort() => Err(Error::Sort(format!(
            "cannot substitute {s}-sorted `{t}` for {}-sorted `{x}`",
            x.sort()
        ))),
        None if x.sort() == Sort::Unit => {
            Err(Error::Sort(format!("unit variable `{x}` cannot take a constant")))
        }
        _ => Ok(()),
    }
}

/// Substitution through qualifiers and both regexes of `j`.
pub fn subst(j: &Judgment, x: &Var, t: &Term) -> Result<Judgment> {
    check_subst_sort(x, t)?;
    Ok(Judgment {
        ctx: j.ctx.subst(x, t),
        subject: j.subject.clone(),
        ty: j.ty.subst(x, t),
    })
}

/// Removes `locals` from `j`.
///
/// A local the store equates with a remaining variable (earliest declared
/// first) or a constant is substituted away; its own qualifier moves to the
/// latest-declared variable it still mentions. A local nothing refers to is
/// dropped, provided its disequalities can always be met. Anything else is
/// an elimination failure.
pub fn eliminate_locals(
    j: &Judgment,
    locals: &[Var],
    store: &ConstraintStore,
    domain_size: u32,
) -> Result<Judgment> {
    let mut j = j.clone();
    let mut store = store.clone();
    let pending: BTreeSet<&Var> = locals.iter().collect();
    for x in locals {
        let Some(entry) = j.ctx.get(x.name()).cloned() else {
            continue;
        };
        let mut candidates: Vec<Term> = j
            .ctx
            .entries()
            .iter()
            .map(|e| &e.var)
            .filter(|v| !pending.contains(v) && v.sort() == x.sort())
            .map(|v| Term::Var(v.clone()))
            .collect();
        candidates.extend(store.constants().into_iter().map(Term::Const));
        let x_term = Term::Var(x.clone());
        let mut rep = None;
        if x.sort() != Sort::Unit {
            for c in candidates {
                if store.entails(&Atom::eq(x_term.clone(), c.clone()), domain_size)? {
                    rep = Some(c);
                    break;
                }
            }
        }
        let own = entry.ty.instantiate(&x_term);
        j.ctx.remove(x);
        match rep {
            Some(t) => {
                j = subst(&j, x, &t)?;
                store = store.subst(x, &t);
                for a in own.subst(x, &t).atoms() {
                    if a.decided() != Some(true) {
                        j.ctx.attach(a)?;
                    }
                }
            }
            None => {
                let used = j.ty.mentions(x) || j.ctx.entries().iter().any(|e| e.ty.mentions(x));
                let eqs = store.atoms().any(|a| a.mentions(x) && a.kind == AtomKind::Eq);
                let neqs = store.atoms().filter(|a| a.mentions(x)).count();
                if used || eqs || neqs as u64 >= u64::from(domain_size) {
                    return Err(Error::Elimination(x.name().to_string()));
                }
                store = ConstraintStore::from_atoms(store.atoms().filter(|a| !a.mentions(x)).cloned());
            }
        }
    }
    Ok(j)
}

/// Singleton coverage: under every assignment satisfying `store`, every
/// value the type denotes equals `v`.
pub fn check_value(v: &Term, ty: &CoverageType, store: &ConstraintStore, domain_size: u32) -> Result<bool> {
    if let Some(s) = v.sort() {
        if s != ty.base {
            return Err(Error::Sort(format!("`{v}` is {s}-sorted, type is {}", ty.base)));
        }
    }
    if ty.base == Sort::Unit {
        return Ok(true);
    }
    let nu = Term::Var(ty.nu());
    let with_type = store.union(&ty.qual);
    let counter = with_type.with(Atom::neq(nu, v.clone()));
    Ok(!counter.satisfiable(domain_size)?)
}
