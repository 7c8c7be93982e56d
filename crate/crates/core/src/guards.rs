//! Qualified events and the equality/disequality logic over addresses.
//!
//! Everything the analysis decides about symbolic events goes through this
//! module: matching a pattern against a concrete event, deciding a
//! conjunction of `=`/`≠` atoms over a finite address domain, and abducing
//! the atoms under which two (or more) patterns describe a common event.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use crate::error::{Error, ParseError, Result};
use crate::lexer::{Cursor, Tok};

/// A concrete node address.
pub type Addr = u32;

/// Default number of addresses in the analysis domain.
pub const DEFAULT_DOMAIN: u32 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Sort {
    Addr,
    Unit,
    Int,
}

impl Sort {
    pub fn parse(name: &str) -> Option<Sort> {
        match name {
            "addr" => Some(Sort::Addr),
            "unit" => Some(Sort::Unit),
            "int" => Some(Sort::Int),
            _ => None,
        }
    }
}

impl fmt::Display for Sort {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Sort::Addr => "addr",
            Sort::Unit => "unit",
            Sort::Int => "int",
        })
    }
}

#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var {
    name: Arc<str>,
    sort: Sort,
}

/// Prefix reserved for the per-event slot variables introduced by
/// [`overlap`]; the tokenizer never produces it.
const SLOT_PREFIX: char = '$';

impl Var {
    pub fn new(name: &str, sort: Sort) -> Self {
        Var {
            name: Arc::from(name),
            sort,
        }
    }

    pub fn addr(name: &str) -> Self {
        Var::new(name, Sort::Addr)
    }

    /// The refinement binder `nu` of a coverage type.
    pub fn nu(sort: Sort) -> Self {
        Var::new("nu", sort)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn sort(&self) -> Sort {
        self.sort
    }

    pub fn is_nu(&self) -> bool {
        &*self.name == "nu"
    }

    fn slot(i: usize) -> Self {
        Var::addr(&format!("{SLOT_PREFIX}{i}"))
    }

    fn is_slot(&self) -> bool {
        self.name.starts_with(SLOT_PREFIX)
    }
}

impl fmt::Debug for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name)
    }
}

impl fmt::Display for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Term {
    Var(Var),
    Const(Addr),
}

impl Term {
    pub fn var(name: &str) -> Term {
        Term::Var(Var::addr(name))
    }

    pub fn as_var(&self) -> Option<&Var> {
        match self {
            Term::Var(v) => Some(v),
            Term::Const(_) => None,
        }
    }

    pub fn eval(&self, asg: &Assignment) -> Result<Addr> {
        match self {
            Term::Const(c) => Ok(*c),
            Term::Var(v) => asg.get(v).ok_or_else(|| Error::Unbound(v.name().to_string())),
        }
    }

    pub fn subst(&self, x: &Var, t: &Term) -> Term {
        match self {
            Term::Var(v) if v == x => t.clone(),
            _ => self.clone(),
        }
    }

    /// Sort of a variable term; constants fit any value sort.
    pub fn sort(&self) -> Option<Sort> {
        self.as_var().map(Var::sort)
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Var(v) => write!(f, "{v}"),
            Term::Const(c) => write!(f, "{c}"),
        }
    }
}

/// A variable-to-address valuation.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Assignment(BTreeMap<Var, Addr>);

impl Assignment {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, v: &Var) -> Option<Addr> {
        self.0.get(v).copied()
    }

    pub fn insert(&mut self, v: Var, a: Addr) {
        self.0.insert(v, a);
    }

    pub fn with(mut self, v: Var, a: Addr) -> Self {
        self.insert(v, a);
        self
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Var, &Addr)> {
        self.0.iter()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn restrict(&self, keep: &[Var]) -> Assignment {
        Assignment(
            self.0
                .iter()
                .filter(|(v, _)| keep.contains(v))
                .map(|(v, a)| (v.clone(), *a))
                .collect(),
        )
    }
}

impl FromIterator<(Var, Addr)> for Assignment {
    fn from_iter<I: IntoIterator<Item = (Var, Addr)>>(iter: I) -> Self {
        Assignment(iter.into_iter().collect())
    }
}

impl fmt::Display for Assignment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|(v, a)| format!("{v}={a}")).collect();
        write!(f, "{{{}}}", parts.join(", "))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ArgConstraint {
    Wildcard,
    Eq(Term),
    Neq(Term),
}

impl ArgConstraint {
    pub fn holds(&self, value: Addr, asg: &Assignment) -> Result<bool> {
        Ok(match self {
            ArgConstraint::Wildcard => true,
            ArgConstraint::Eq(t) => t.eval(asg)? == value,
            ArgConstraint::Neq(t) => t.eval(asg)? != value,
        })
    }

    pub fn term(&self) -> Option<&Term> {
        match self {
            ArgConstraint::Wildcard => None,
            ArgConstraint::Eq(t) | ArgConstraint::Neq(t) => Some(t),
        }
    }

    /// Atom stating that `slot` satisfies this constraint.
    fn atom_for(&self, slot: &Term) -> Option<Atom> {
        match self {
            ArgConstraint::Wildcard => None,
            ArgConstraint::Eq(t) => Some(Atom::eq(slot.clone(), t.clone())),
            ArgConstraint::Neq(t) => Some(Atom::neq(slot.clone(), t.clone())),
        }
    }

    /// Atom stating that `slot` violates this constraint.
    fn violation_for(&self, slot: &Term) -> Option<Atom> {
        match self {
            ArgConstraint::Wildcard => None,
            ArgConstraint::Eq(t) => Some(Atom::neq(slot.clone(), t.clone())),
            ArgConstraint::Neq(t) => Some(Atom::eq(slot.clone(), t.clone())),
        }
    }

    fn subst(&self, x: &Var, t: &Term) -> ArgConstraint {
        match self {
            ArgConstraint::Wildcard => ArgConstraint::Wildcard,
            ArgConstraint::Eq(u) => ArgConstraint::Eq(u.subst(x, t)),
            ArgConstraint::Neq(u) => ArgConstraint::Neq(u.subst(x, t)),
        }
    }
}

impl fmt::Display for ArgConstraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ArgConstraint::Wildcard => f.write_str("_"),
            ArgConstraint::Eq(t) => write!(f, "{t}"),
            ArgConstraint::Neq(t) => write!(f, "!{t}"),
        }
    }
}

/// A positive qualified event `<r <- op x y>`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LitPattern {
    pub op: Arc<str>,
    pub args: Vec<ArgConstraint>,
    pub result: Option<ArgConstraint>,
}

impl LitPattern {
    pub fn new(op: &str, args: Vec<ArgConstraint>, result: Option<ArgConstraint>) -> Self {
        LitPattern {
            op: Arc::from(op),
            args,
            result,
        }
    }

    pub fn matches(&self, e: &Event, asg: &Assignment) -> Result<bool> {
        if self.op != e.op || self.args.len() != e.args.len() {
            // Unbound variables are still reported for mismatching events.
            self.check_bound(asg)?;
            return Ok(false);
        }
        let mut ok = true;
        for (c, v) in self.args.iter().zip(&e.args) {
            ok &= c.holds(*v, asg)?;
        }
        ok &= match (&self.result, e.result) {
            (None, _) => true,
            (Some(c), Some(v)) => c.holds(v, asg)?,
            (Some(c), None) => {
                c.term().map(|t| t.eval(asg)).transpose()?;
                matches!(c, ArgConstraint::Wildcard)
            }
        };
        Ok(ok)
    }

    fn check_bound(&self, asg: &Assignment) -> Result<()> {
        for t in self.terms() {
            t.eval(asg)?;
        }
        Ok(())
    }

    pub fn terms(&self) -> impl Iterator<Item = &Term> {
        self.args
            .iter()
            .chain(self.result.iter())
            .filter_map(ArgConstraint::term)
    }

    /// True when every slot is pinned by an equality, i.e. the pattern names
    /// exactly one event under any assignment.
    pub fn is_determined(&self) -> bool {
        self.args
            .iter()
            .chain(self.result.iter())
            .all(|c| matches!(c, ArgConstraint::Eq(_)))
    }

    pub fn subst(&self, x: &Var, t: &Term) -> LitPattern {
        LitPattern {
            op: self.op.clone(),
            args: self.args.iter().map(|c| c.subst(x, t)).collect(),
            result: self.result.as_ref().map(|c| c.subst(x, t)),
        }
    }
}

impl fmt::Display for LitPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("<")?;
        if let Some(r) = &self.result {
            write!(f, "{r} <- ")?;
        }
        f.write_str(&self.op)?;
        for a in &self.args {
            write!(f, " {a}")?;
        }
        f.write_str(">")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EventPattern {
    /// `.`
    Any,
    Lit(LitPattern),
    /// `~<...>`: every event of the alphabet the literal does not match.
    Not(LitPattern),
}

impl EventPattern {
    pub fn lit(&self) -> Option<&LitPattern> {
        match self {
            EventPattern::Any => None,
            EventPattern::Lit(l) | EventPattern::Not(l) => Some(l),
        }
    }

    pub fn vars(&self) -> BTreeSet<Var> {
        self.lit()
            .into_iter()
            .flat_map(|l| l.terms())
            .filter_map(|t| t.as_var().cloned())
            .collect()
    }

    pub fn subst(&self, x: &Var, t: &Term) -> EventPattern {
        match self {
            EventPattern::Any => EventPattern::Any,
            EventPattern::Lit(l) => EventPattern::Lit(l.subst(x, t)),
            EventPattern::Not(l) => EventPattern::Not(l.subst(x, t)),
        }
    }
}

impl fmt::Display for EventPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EventPattern::Any => f.write_str("."),
            EventPattern::Lit(l) => write!(f, "{l}"),
            EventPattern::Not(l) => write!(f, "~{l}"),
        }
    }
}

/// A concrete API invocation.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Event {
    pub op: Arc<str>,
    pub args: Vec<Addr>,
    pub result: Option<Addr>,
}

impl Event {
    pub fn new(op: &str, args: Vec<Addr>, result: Option<Addr>) -> Self {
        Event {
            op: Arc::from(op),
            args,
            result,
        }
    }
}

impl fmt::Display for Event {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("<")?;
        if let Some(r) = self.result {
            write!(f, "{r} <- ")?;
        }
        f.write_str(&self.op)?;
        for a in &self.args {
            write!(f, " {a}")?;
        }
        f.write_str(">")
    }
}

pub fn match_concrete(p: &EventPattern, e: &Event, asg: &Assignment) -> Result<bool> {
    match p {
        EventPattern::Any => Ok(true),
        EventPattern::Lit(l) => l.matches(e, asg),
        EventPattern::Not(l) => Ok(!l.matches(e, asg)?),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AtomKind {
    Eq,
    Neq,
}

/// `lhs = rhs` or `lhs ≠ rhs`, stored with `lhs <= rhs`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Atom {
    pub kind: AtomKind,
    pub lhs: Term,
    pub rhs: Term,
}

impl Atom {
    pub fn new(kind: AtomKind, a: Term, b: Term) -> Self {
        let (lhs, rhs) = if a <= b { (a, b) } else { (b, a) };
        Atom { kind, lhs, rhs }
    }

    pub fn eq(a: Term, b: Term) -> Self {
        Atom::new(AtomKind::Eq, a, b)
    }

    pub fn neq(a: Term, b: Term) -> Self {
        Atom::new(AtomKind::Neq, a, b)
    }

    pub fn negate(&self) -> Atom {
        let kind = match self.kind {
            AtomKind::Eq => AtomKind::Neq,
            AtomKind::Neq => AtomKind::Eq,
        };
        Atom::new(kind, self.lhs.clone(), self.rhs.clone())
    }

    pub fn holds(&self, asg: &Assignment) -> Result<bool> {
        let (l, r) = (self.lhs.eval(asg)?, self.rhs.eval(asg)?);
        Ok(match self.kind {
            AtomKind::Eq => l == r,
            AtomKind::Neq => l != r,
        })
    }

    /// `Some(b)` when the atom's truth does not depend on any variable.
    pub fn decided(&self) -> Option<bool> {
        match (&self.lhs, &self.rhs) {
            (l, r) if l == r => Some(self.kind == AtomKind::Eq),
            (Term::Const(_), Term::Const(_)) => Some(self.kind == AtomKind::Neq),
            _ => None,
        }
    }

    pub fn mentions(&self, v: &Var) -> bool {
        self.lhs.as_var() == Some(v) || self.rhs.as_var() == Some(v)
    }

    pub fn vars(&self) -> impl Iterator<Item = &Var> {
        self.lhs.as_var().into_iter().chain(self.rhs.as_var())
    }

    pub fn subst(&self, x: &Var, t: &Term) -> Atom {
        Atom::new(self.kind, self.lhs.subst(x, t), self.rhs.subst(x, t))
    }

    fn check_sorts(&self) -> Result<()> {
        for t in [&self.lhs, &self.rhs] {
            if t.sort() == Some(Sort::Unit) {
                return Err(Error::Sort(format!("unit-sorted term `{t}` in atom `{self}`")));
            }
        }
        match (self.lhs.sort(), self.rhs.sort()) {
            (Some(a), Some(b)) if a != b => Err(Error::Sort(format!(
                "atom `{self}` relates {a} and {b} terms"
            ))),
            _ => Ok(()),
        }
    }
}

impl fmt::Display for Atom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let op = match self.kind {
            AtomKind::Eq => "=",
            AtomKind::Neq => "!=",
        };
        write!(f, "{} {op} {}", self.lhs, self.rhs)
    }
}

/// A conjunction of equality/disequality atoms.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ConstraintStore {
    atoms: BTreeSet<Atom>,
}

impl ConstraintStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_atoms(atoms: impl IntoIterator<Item = Atom>) -> Self {
        let mut s = Self::new();
        for a in atoms {
            s.insert(a);
        }
        s
    }

    /// Adds an atom; atoms that are trivially true are not stored.
    pub fn insert(&mut self, atom: Atom) {
        if atom.decided() != Some(true) {
            self.atoms.insert(atom);
        }
    }

    pub fn with(&self, atom: Atom) -> Self {
        let mut s = self.clone();
        s.insert(atom);
        s
    }

    pub fn union(&self, other: &ConstraintStore) -> Self {
        let mut s = self.clone();
        for a in &other.atoms {
            s.insert(a.clone());
        }
        s
    }

    pub fn atoms(&self) -> impl Iterator<Item = &Atom> {
        self.atoms.iter()
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn contains(&self, atom: &Atom) -> bool {
        self.atoms.contains(atom)
    }

    pub fn is_superset(&self, other: &ConstraintStore) -> bool {
        self.atoms.is_superset(&other.atoms)
    }

    /// Atoms of `self` not present in `base`.
    pub fn difference(&self, base: &ConstraintStore) -> Vec<Atom> {
        self.atoms.difference(&base.atoms).cloned().collect()
    }

    pub fn vars(&self) -> BTreeSet<Var> {
        self.atoms.iter().flat_map(|a| a.vars().cloned()).collect()
    }

    pub fn constants(&self) -> BTreeSet<Addr> {
        self.atoms
            .iter()
            .flat_map(|a| [&a.lhs, &a.rhs])
            .filter_map(|t| match t {
                Term::Const(c) => Some(*c),
                Term::Var(_) => None,
            })
            .collect()
    }

    pub fn subst(&self, x: &Var, t: &Term) -> Self {
        Self::from_atoms(self.atoms.iter().map(|a| a.subst(x, t)))
    }

    pub fn holds(&self, asg: &Assignment) -> Result<bool> {
        for a in &self.atoms {
            if !a.holds(asg)? {
                return Ok(false);
            }
        }
        Ok(true)
    }

    pub fn check_sorts(&self) -> Result<()> {
        self.atoms.iter().try_for_each(Atom::check_sorts)
    }

    pub fn satisfiable(&self, domain_size: u32) -> Result<bool> {
        Ok(self.model(domain_size)?.is_some())
    }

    /// A satisfying assignment over `{0..domain_size} ∪ constants(self)`,
    /// covering every variable of the store.
    pub fn model(&self, domain_size: u32) -> Result<Option<Assignment>> {
        self.check_sorts()?;
        Ok(solve(&self.atoms, domain_size))
    }

    pub fn entails(&self, atom: &Atom, domain_size: u32) -> Result<bool> {
        atom.check_sorts()?;
        if !self.satisfiable(domain_size)? {
            return Err(Error::Unsatisfiable);
        }
        Ok(!self.with(atom.negate()).satisfiable(domain_size)?)
    }
}

impl fmt::Display for ConstraintStore {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.atoms.iter().map(ToString::to_string).collect();
        write!(f, "{{{}}}", parts.join(", "))
    }
}

fn find(parent: &mut [usize], i: usize) -> usize {
    let mut root = i;
    while parent[root] != root {
        root = parent[root];
    }
    let mut cur = i;
    while parent[cur] != root {
        let next = parent[cur];
        parent[cur] = root;
        cur = next;
    }
    root
}

/// Union-find over the equalities, then an exact colouring of the
/// disequality graph between classes. Free classes only distinguish
/// "which constant" and "which fresh address", so fresh addresses are tried
/// in canonical order.
fn solve(atoms: &BTreeSet<Atom>, domain_size: u32) -> Option<Assignment> {
    let mut index: BTreeMap<&Term, usize> = BTreeMap::new();
    for a in atoms {
        for t in [&a.lhs, &a.rhs] {
            let n = index.len();
            index.entry(t).or_insert(n);
        }
    }
    let terms: Vec<&Term> = {
        let mut v = vec![None; index.len()];
        for (t, i) in &index {
            v[*i] = Some(*t);
        }
        v.into_iter().map(Option::unwrap).collect()
    };
    let mut parent: Vec<usize> = (0..terms.len()).collect();
    for a in atoms.iter().filter(|a| a.kind == AtomKind::Eq) {
        let (l, r) = (find(&mut parent, index[&a.lhs]), find(&mut parent, index[&a.rhs]));
        if l != r {
            parent[l] = r;
        }
    }

    let mut fixed: BTreeMap<usize, Addr> = BTreeMap::new();
    for (i, t) in terms.iter().enumerate() {
        if let Term::Const(c) = t {
            let root = find(&mut parent, i);
            if fixed.insert(root, *c).is_some_and(|prev| prev != *c) {
                return None;
            }
        }
    }

    let mut adj: BTreeMap<usize, BTreeSet<usize>> = BTreeMap::new();
    for a in atoms.iter().filter(|a| a.kind == AtomKind::Neq) {
        let (l, r) = (find(&mut parent, index[&a.lhs]), find(&mut parent, index[&a.rhs]));
        if l == r {
            return None;
        }
        adj.entry(l).or_default().insert(r);
        adj.entry(r).or_default().insert(l);
    }
    for (&c, &v) in &fixed {
        let clash = adj
            .get(&c)
            .is_some_and(|ns| ns.iter().any(|n| fixed.get(n) == Some(&v)));
        if clash {
            return None;
        }
    }

    let roots: BTreeSet<usize> = (0..terms.len()).map(|i| find(&mut parent, i)).collect();
    let mut free: Vec<usize> = roots.into_iter().filter(|r| !fixed.contains_key(r)).collect();
    free.sort_by_key(|r| std::cmp::Reverse(adj.get(r).map_or(0, BTreeSet::len)));

    let consts: BTreeSet<Addr> = fixed.values().copied().collect();
    let fresh: Vec<Addr> = (0..domain_size).filter(|a| !consts.contains(a)).collect();
    let mut value: BTreeMap<usize, Addr> = fixed.clone();

    fn colour(
        k: usize,
        free: &[usize],
        adj: &BTreeMap<usize, BTreeSet<usize>>,
        consts: &BTreeSet<Addr>,
        fresh: &[Addr],
        fresh_used: usize,
        value: &mut BTreeMap<usize, Addr>,
    ) -> bool {
        let Some(&class) = free.get(k) else {
            return true;
        };
        let blocked: BTreeSet<Addr> = adj
            .get(&class)
            .into_iter()
            .flatten()
            .filter_map(|n| value.get(n).copied())
            .collect();
        let limit = (fresh_used + 1).min(fresh.len());
        let candidates = consts
            .iter()
            .copied()
            .chain(fresh[..limit].iter().copied());
        for v in candidates {
            if blocked.contains(&v) {
                continue;
            }
            let used = match fresh[..limit].iter().position(|f| *f == v) {
                Some(p) => fresh_used.max(p + 1),
                None => fresh_used,
            };
            value.insert(class, v);
            if colour(k + 1, free, adj, consts, fresh, used, value) {
                return true;
            }
            value.remove(&class);
        }
        false
    }

    if !colour(0, &free, &adj, &consts, &fresh, 0, &mut value) {
        return None;
    }
    let mut asg = Assignment::new();
    for (i, t) in terms.iter().enumerate() {
        if let Term::Var(v) = t {
            let root = find(&mut parent, i);
            asg.insert(v.clone(), value[&root]);
        }
    }
    Some(asg)
}

/// An operation of the event alphabet.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct OpSig {
    pub name: Arc<str>,
    pub arity: usize,
    pub returns: bool,
}

impl OpSig {
    pub fn new(name: &str, arity: usize, returns: bool) -> Self {
        OpSig {
            name: Arc::from(name),
            arity,
            returns,
        }
    }
}

/// The declared operations; `~` complements are taken over all of them.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct Alphabet {
    ops: Vec<OpSig>,
}

impl Alphabet {
    pub fn new(ops: Vec<OpSig>) -> Self {
        Alphabet { ops }
    }

    /// `put : addr → addr → unit` and `get : addr → addr`.
    pub fn key_value() -> Self {
        Alphabet::new(vec![OpSig::new("put", 2, false), OpSig::new("get", 1, true)])
    }

    pub fn ops(&self) -> &[OpSig] {
        &self.ops
    }

    pub fn get(&self, name: &str) -> Option<&OpSig> {
        self.ops.iter().find(|o| &*o.name == name)
    }

    pub fn add(&mut self, op: OpSig) {
        match self.ops.iter_mut().find(|o| o.name == op.name) {
            Some(existing) => *existing = op,
            None => self.ops.push(op),
        }
    }

    pub fn op_index(&self, name: &str) -> Option<usize> {
        self.ops.iter().position(|o| &*o.name == name)
    }
}

/// Alphabet plus address domain: everything needed to decide overlaps.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Universe {
    pub alphabet: Alphabet,
    pub domain_size: u32,
}

impl Universe {
    pub fn new(alphabet: Alphabet, domain_size: u32) -> Self {
        Universe {
            alphabet,
            domain_size,
        }
    }

    /// The address values in play: `0..domain_size` plus any extra constants.
    pub fn values(&self, extra: impl IntoIterator<Item = Addr>) -> Vec<Addr> {
        let mut v: BTreeSet<Addr> = (0..self.domain_size).collect();
        v.extend(extra);
        v.into_iter().collect()
    }

    /// All events over `values`, ordered by operation then arguments.
    pub fn events(&self, values: &[Addr]) -> Vec<Event> {
        let mut out = Vec::new();
        for op in self.alphabet.ops() {
            let results: Vec<Option<Addr>> = if op.returns {
                values.iter().map(|v| Some(*v)).collect()
            } else {
                vec![None]
            };
            for args in tuples(values, op.arity) {
                for r in &results {
                    out.push(Event {
                        op: op.name.clone(),
                        args: args.clone(),
                        result: *r,
                    });
                }
            }
        }
        out
    }
}

impl Default for Universe {
    fn default() -> Self {
        Universe::new(Alphabet::key_value(), DEFAULT_DOMAIN)
    }
}

pub(crate) fn tuples(values: &[Addr], n: usize) -> Vec<Vec<Addr>> {
    let mut out = vec![Vec::new()];
    for _ in 0..n {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                values.iter().map(move |v| {
                    let mut p = prefix.clone();
                    p.push(*v);
                    p
                })
            })
            .collect();
    }
    out
}

/// Abduction for a pair of patterns: every minimal extension of `store`
/// under which some event satisfies both `p` and `q`.
pub fn unify_symbolic(
    p: &EventPattern,
    q: &EventPattern,
    store: &ConstraintStore,
    universe: &Universe,
) -> Vec<ConstraintStore> {
    overlap(&[p, q], store, universe)
}

/// Abduction for a conjunction of patterns.
///
/// The common event is encoded with one fresh slot variable per argument
/// (and result); each positive pattern contributes atoms on the slots, each
/// complemented pattern a disjunction of violated slots. Satisfiable
/// branches are projected back onto the caller's variables. The result is
/// sorted: branches adding equalities first, then disequalities only, then
/// branches adding nothing.
pub fn overlap(
    patterns: &[&EventPattern],
    store: &ConstraintStore,
    universe: &Universe,
) -> Vec<ConstraintStore> {
    let positives: Vec<&LitPattern> = patterns
        .iter()
        .filter_map(|p| match p {
            EventPattern::Lit(l) => Some(l),
            _ => None,
        })
        .collect();
    let negatives: Vec<&LitPattern> = patterns
        .iter()
        .filter_map(|p| match p {
            EventPattern::Not(l) => Some(l),
            _ => None,
        })
        .collect();

    let candidates: Vec<OpSig> = match positives.first() {
        Some(first) => {
            if positives.iter().any(|l| l.op != first.op) {
                return Vec::new();
            }
            let sig = universe.alphabet.get(&first.op).cloned().unwrap_or_else(|| {
                OpSig::new(&first.op, first.args.len(), first.result.is_some())
            });
            vec![sig]
        }
        None => universe.alphabet.ops().to_vec(),
    };

    let mut branches: Vec<ConstraintStore> = Vec::new();
    for op in &candidates {
        let arg_slots: Vec<Term> = (0..op.arity).map(|i| Term::Var(Var::slot(i))).collect();
        let result_slot = Term::Var(Var::slot(op.arity));
        let mut slot_vars: Vec<Var> = (0..op.arity).map(Var::slot).collect();
        if op.returns {
            slot_vars.push(Var::slot(op.arity));
        }

        let slot_atoms = |l: &LitPattern, f: fn(&ArgConstraint, &Term) -> Option<Atom>| {
            let mut v: Vec<Atom> = l
                .args
                .iter()
                .zip(&arg_slots)
                .filter_map(|(c, s)| f(c, s))
                .collect();
            if let (Some(c), true) = (&l.result, op.returns) {
                v.extend(f(c, &result_slot));
            }
            v
        };

        let mut base = store.clone();
        for l in &positives {
            for a in slot_atoms(l, ArgConstraint::atom_for) {
                base.insert(a);
            }
        }
        let mut disjunctions: Vec<Vec<Atom>> = Vec::new();
        let mut infeasible = false;
        for l in negatives.iter().filter(|l| l.op == op.name) {
            let d = slot_atoms(l, ArgConstraint::violation_for);
            if d.is_empty() {
                infeasible = true;
                break;
            }
            disjunctions.push(d);
        }
        if infeasible {
            continue;
        }

        let mut raw = vec![base];
        for d in &disjunctions {
            raw = raw
                .into_iter()
                .flat_map(|s| d.iter().map(move |a| s.with(a.clone())))
                .collect();
        }
        for s in raw {
            if !matches!(s.satisfiable(universe.domain_size), Ok(true)) {
                continue;
            }
            for projected in project(s, &slot_vars, universe) {
                if !branches.contains(&projected) {
                    branches.push(projected);
                }
            }
        }
    }
    let minimal: Vec<ConstraintStore> = branches
        .iter()
        .filter(|b| {
            !branches
                .iter()
                .any(|o| o != *b && b.is_superset(o))
        })
        .cloned()
        .collect();
    order_branches(minimal, store)
}

/// Stable sort of abduced extensions: equality-introducing first, then
/// disequality-only, then no new atoms.
pub fn order_branches(
    mut branches: Vec<ConstraintStore>,
    base: &ConstraintStore,
) -> Vec<ConstraintStore> {
    branches.sort_by_key(|b| branch_class(b, base));
    branches
}

pub fn branch_class(b: &ConstraintStore, base: &ConstraintStore) -> u8 {
    let new = b.difference(base);
    if new.iter().any(|a| a.kind == AtomKind::Eq) {
        0
    } else if !new.is_empty() {
        1
    } else {
        2
    }
}

/// Existentially quantifies the slot variables out of a satisfiable store.
///
/// A slot equal to some caller term is replaced by it. A slot constrained
/// only by `k` disequalities is dropped when `k < domain_size` (a distinct
/// address always remains); otherwise it is split over concrete values.
fn project(store: ConstraintStore, slots: &[Var], universe: &Universe) -> Vec<ConstraintStore> {
    let mut current = vec![store];
    for x in slots {
        let mut next = Vec::new();
        for s in current {
            let x_term = Term::Var(x.clone());
            let class = eq_class(&s, &x_term);
            let rep = class
                .iter()
                .filter(|t| !t.as_var().is_some_and(Var::is_slot))
                .min()
                .cloned();
            if let Some(rep) = rep {
                next.push(s.subst(x, &rep));
                continue;
            }
            let excluded: BTreeSet<&Term> = s
                .atoms()
                .filter(|a| a.kind == AtomKind::Neq && a.mentions(x))
                .map(|a| if a.lhs == x_term { &a.rhs } else { &a.lhs })
                .collect();
            if (excluded.len() as u64) < u64::from(universe.domain_size) {
                next.push(ConstraintStore::from_atoms(
                    s.atoms().filter(|a| !a.mentions(x)).cloned(),
                ));
            } else {
                for v in universe.values(s.constants()) {
                    let pinned = s.subst(x, &Term::Const(v));
                    if matches!(pinned.satisfiable(universe.domain_size), Ok(true)) {
                        next.push(pinned);
                    }
                }
            }
        }
        current = next;
    }
    current
}

fn eq_class(store: &ConstraintStore, t: &Term) -> BTreeSet<Term> {
    let mut class: BTreeSet<Term> = BTreeSet::from([t.clone()]);
    loop {
        let before = class.len();
        for a in store.atoms().filter(|a| a.kind == AtomKind::Eq) {
            if class.contains(&a.lhs) {
                class.insert(a.rhs.clone());
            }
            if class.contains(&a.rhs) {
                class.insert(a.lhs.clone());
            }
        }
        if class.len() == before {
            return class;
        }
    }
}

/// Resolves identifiers while parsing patterns.
#[derive(Debug, Clone, Copy)]
pub struct Scope<'a> {
    pub alphabet: &'a Alphabet,
    pub vars: &'a [Var],
}

impl<'a> Scope<'a> {
    pub fn new(alphabet: &'a Alphabet, vars: &'a [Var]) -> Self {
        Scope { alphabet, vars }
    }

    fn var(&self, name: &str) -> Option<Var> {
        self.vars.iter().find(|v| v.name() == name).cloned()
    }
}

fn parse_term(cur: &mut Cursor, scope: &Scope) -> Result<Term, ParseError> {
    let pos = cur.pos();
    match cur.next() {
        Tok::Num(n) => Ok(Term::Const(n)),
        Tok::Ident(name) => scope
            .var(&name)
            .map(Term::Var)
            .ok_or_else(|| ParseError::new(pos, format!("unknown variable `{name}`"))),
        other => Err(ParseError::new(
            pos,
            format!("expected a variable or address, found {}", other.describe()),
        )),
    }
}

fn parse_arg(cur: &mut Cursor, scope: &Scope) -> Result<ArgConstraint, ParseError> {
    if cur.eat(&Tok::Underscore) {
        Ok(ArgConstraint::Wildcard)
    } else if cur.eat(&Tok::Bang) {
        Ok(ArgConstraint::Neq(parse_term(cur, scope)?))
    } else {
        Ok(ArgConstraint::Eq(parse_term(cur, scope)?))
    }
}

/// Parses `<op a b>` or `<r <- op a>` after the caller has seen `<`.
pub(crate) fn parse_lit(cur: &mut Cursor, scope: &Scope) -> Result<LitPattern, ParseError> {
    let start = cur.pos();
    cur.expect(&Tok::Lt)?;
    let arrow_at = if *cur.peek() == Tok::Bang { 2 } else { 1 };
    let result = if *cur.peek_at(arrow_at) == Tok::LArrow {
        let r = parse_arg(cur, scope)?;
        cur.expect(&Tok::LArrow)?;
        Some(r)
    } else {
        None
    };
    let op_pos = cur.pos();
    let op = cur.ident()?;
    let mut args = Vec::new();
    while *cur.peek() != Tok::Gt {
        if cur.at_eof() {
            return Err(cur.unexpected("`>`"));
        }
        args.push(parse_arg(cur, scope)?);
    }
    cur.expect(&Tok::Gt)?;
    let sig = scope
        .alphabet
        .get(&op)
        .ok_or_else(|| ParseError::new(op_pos, format!("unknown operation `{op}`")))?;
    if sig.arity != args.len() {
        return Err(ParseError::new(
            start,
            format!(
                "arity mismatch: `{op}` takes {} argument(s), got {}",
                sig.arity,
                args.len()
            ),
        ));
    }
    if result.is_some() && !sig.returns {
        return Err(ParseError::new(
            start,
            format!("`{op}` returns no value to bind"),
        ));
    }
    Ok(LitPattern::new(&op, args, result))
}

pub(crate) fn parse_event_in(cur: &mut Cursor, alphabet: &Alphabet) -> Result<Event, ParseError> {
    let scope = Scope::new(alphabet, &[]);
    let pos = cur.pos();
    let lit = parse_lit(cur, &scope)?;
    let value = |c: &ArgConstraint| match c {
        ArgConstraint::Eq(Term::Const(v)) => Ok(*v),
        _ => Err(ParseError::new(pos, "events carry concrete addresses only")),
    };
    let args = lit.args.iter().map(value).collect::<Result<Vec<_>, _>>()?;
    let result = lit.result.as_ref().map(value).transpose()?;
    let sig = alphabet.get(&lit.op).expect("checked by parse_lit");
    if sig.returns && result.is_none() {
        return Err(ParseError::new(pos, format!("`{}` event needs a result", lit.op)));
    }
    Ok(Event::new(&lit.op, args, result))
}

/// Parses a single pattern: `.`, `<...>`, or `~<...>`.
pub fn parse_pattern(text: &str, scope: &Scope) -> Result<EventPattern, ParseError> {
    let mut cur = Cursor::new(text)?;
    let p = if cur.eat(&Tok::Dot) {
        EventPattern::Any
    } else if cur.eat(&Tok::Tilde) {
        EventPattern::Not(parse_lit(&mut cur, scope)?)
    } else {
        EventPattern::Lit(parse_lit(&mut cur, scope)?)
    };
    cur.expect_eof()?;
    Ok(p)
}

pub fn parse_event(text: &str, alphabet: &Alphabet) -> Result<Event, ParseError> {
    let mut cur = Cursor::new(text)?;
    let e = parse_event_in(&mut cur, alphabet)?;
    cur.expect_eof()?;
    Ok(e)
}

/// Parses `t1 = t2` / `t1 != t2`.
pub fn parse_atom(text: &str, scope: &Scope) -> Result<Atom, ParseError> {
    let mut cur = Cursor::new(text)?;
    let a = parse_atom_in(&mut cur, scope)?;
    cur.expect_eof()?;
    Ok(a)
}

pub(crate) fn parse_atom_in(cur: &mut Cursor, scope: &Scope) -> Result<Atom, ParseError> {
    let lhs = parse_term(cur, scope)?;
    let kind = match cur.next() {
        Tok::Eq => AtomKind::Eq,
        Tok::NotEq => AtomKind::Neq,
        other => {
            return Err(cur.error(format!("expected `=` or `!=`, found {}", other.describe())))
        }
    };
    let rhs = parse_term(cur, scope)?;
    Ok(Atom::new(kind, lhs, rhs))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(n: &str) -> Term {
        Term::var(n)
    }

    fn store(atoms: &[Atom]) -> ConstraintStore {
        ConstraintStore::from_atoms(atoms.iter().cloned())
    }

    fn pat(text: &str, vars: &[&str]) -> EventPattern {
        let vars: Vec<Var> = vars.iter().map(|n| Var::addr(n)).collect();
        let alphabet = Alphabet::key_value();
        parse_pattern(text, &Scope::new(&alphabet, &vars)).unwrap()
    }

    #[test]
    fn empty_store_is_satisfiable() {
        assert!(ConstraintStore::new().satisfiable(4).unwrap());
    }

    #[test]
    fn direct_contradiction() {
        let s = store(&[Atom::eq(v("a"), v("b")), Atom::neq(v("a"), v("b"))]);
        assert!(!s.satisfiable(4).unwrap());
    }

    #[test]
    fn linked_list_store_is_satisfiable() {
        let s = store(&[
            Atom::eq(v("n1"), v("a")),
            Atom::eq(v("n2"), v("b")),
            Atom::neq(v("n0"), v("a")),
            Atom::neq(v("b"), v("a")),
        ]);
        let m = s.model(4).unwrap().unwrap();
        assert!(s.holds(&m).unwrap());
    }

    #[test]
    fn odd_cycle_needs_three_addresses() {
        let names = ["x0", "x1", "x2", "x3", "x4"];
        let s = store(
            &(0..5)
                .map(|i| Atom::neq(v(names[i]), v(names[(i + 1) % 5])))
                .collect::<Vec<_>>(),
        );
        assert!(!s.satisfiable(2).unwrap());
        assert!(s.satisfiable(3).unwrap());
    }

    #[test]
    fn constants_are_distinct() {
        let s = store(&[Atom::eq(v("a"), Term::Const(1)), Atom::eq(v("a"), Term::Const(2))]);
        assert!(!s.satisfiable(4).unwrap());
        let s = store(&[Atom::neq(v("a"), Term::Const(1)), Atom::eq(v("a"), Term::Const(7))]);
        assert_eq!(s.model(4).unwrap().unwrap().get(&Var::addr("a")), Some(7));
    }

    #[test]
    fn unit_terms_are_ill_sorted() {
        let s = store(&[Atom::eq(Term::Var(Var::new("u", Sort::Unit)), v("a"))]);
        assert!(matches!(s.satisfiable(4), Err(Error::Sort(_))));
    }

    #[test]
    fn entailment_examples() {
        let s = store(&[Atom::eq(v("n1"), v("a"))]);
        assert!(s.entails(&Atom::eq(v("a"), v("n1")), 4).unwrap());
        assert!(!ConstraintStore::new().entails(&Atom::eq(v("a"), v("b")), 4).unwrap());
        let s = store(&[Atom::neq(v("b"), v("a")), Atom::eq(v("n2"), v("b"))]);
        assert!(s.entails(&Atom::neq(v("n2"), v("a")), 4).unwrap());
    }

    #[test]
    fn entailment_requires_satisfiable_store() {
        let s = store(&[Atom::neq(v("a"), v("a"))]);
        assert_eq!(s.entails(&Atom::eq(v("a"), v("b")), 4), Err(Error::Unsatisfiable));
    }

    #[test]
    fn concrete_matching() {
        let a = Var::addr("a");
        let b = Var::addr("b");
        let asg = Assignment::new().with(a.clone(), 1).with(b.clone(), 2);
        let put12 = Event::new("put", vec![1, 2], None);
        let put32 = Event::new("put", vec![3, 2], None);
        let get = Event::new("get", vec![2], Some(3));
        assert!(match_concrete(&pat("<put a b>", &["a", "b"]), &put12, &asg).unwrap());
        assert!(match_concrete(&pat("~<put a _>", &["a"]), &get, &asg).unwrap());
        assert!(match_concrete(&pat("<put !a b>", &["a", "b"]), &put32, &asg).unwrap());
        assert!(!match_concrete(&pat("<put !a b>", &["a", "b"]), &put12, &asg).unwrap());
    }

    #[test]
    fn unbound_variable_is_reported() {
        let e = Event::new("get", vec![2], Some(3));
        let err = match_concrete(&pat("<put a b>", &["a", "b"]), &e, &Assignment::new());
        assert_eq!(err, Err(Error::Unbound("a".into())));
    }

    #[test]
    fn abduce_aligned_edges() {
        let u = Universe::default();
        let out = unify_symbolic(
            &pat("<put n1 n2>", &["n1", "n2"]),
            &pat("<put a b>", &["a", "b"]),
            &ConstraintStore::new(),
            &u,
        );
        assert_eq!(
            out,
            vec![store(&[Atom::eq(v("n1"), v("a")), Atom::eq(v("n2"), v("b"))])]
        );
    }

    #[test]
    fn abduce_disequality() {
        let u = Universe::default();
        let base = store(&[Atom::eq(v("n2"), v("b"))]);
        let out = unify_symbolic(
            &pat("<put n0 n2>", &["n0", "n2"]),
            &pat("<put !a b>", &["a", "b"]),
            &base,
            &u,
        );
        assert_eq!(out, vec![base.with(Atom::neq(v("n0"), v("a")))]);
    }

    #[test]
    fn any_overlaps_everything() {
        let u = Universe::default();
        let out = unify_symbolic(
            &EventPattern::Any,
            &pat("<put a b>", &["a", "b"]),
            &ConstraintStore::new(),
            &u,
        );
        assert_eq!(out, vec![ConstraintStore::new()]);
    }

    #[test]
    fn complement_of_other_op_is_free() {
        let u = Universe::default();
        let out = unify_symbolic(
            &pat("<n1 <- get n0>", &["n0", "n1"]),
            &pat("~<put a _>", &["a"]),
            &ConstraintStore::new(),
            &u,
        );
        assert_eq!(out, vec![ConstraintStore::new()]);
    }

    #[test]
    fn full_complement_is_empty() {
        let u = Universe::new(Alphabet::new(vec![OpSig::new("put", 2, false)]), 4);
        let out = overlap(
            &[&EventPattern::Any, &pat("~<put _ _>", &[])],
            &ConstraintStore::new(),
            &u,
        );
        assert!(out.is_empty());
    }

    #[test]
    fn different_ops_never_overlap() {
        let u = Universe::default();
        let out = unify_symbolic(
            &pat("<put a b>", &["a", "b"]),
            &pat("<get a>", &["a"]),
            &ConstraintStore::new(),
            &u,
        );
        assert!(out.is_empty());
    }

    #[test]
    fn pattern_display_round_trips() {
        for text in ["<put a !b>", "~<put a _>", "<v <- get k>", ".", "<!v <- get 3>"] {
            assert_eq!(pat(text, &["a", "b", "v", "k"]).to_string(), text);
        }
    }

    #[test]
    fn parse_errors() {
        let alphabet = Alphabet::key_value();
        let vars = [Var::addr("a")];
        let scope = Scope::new(&alphabet, &vars);
        assert!(parse_pattern("<put a>", &scope).unwrap_err().msg.contains("arity"));
        assert!(parse_pattern("<del a>", &scope).unwrap_err().msg.contains("unknown operation"));
        assert!(parse_pattern("<put a z>", &scope).unwrap_err().msg.contains("unknown variable"));
        assert!(parse_pattern("<r <- put a a>", &scope).is_err());
    }
}
