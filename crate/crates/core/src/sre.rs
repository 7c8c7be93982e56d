//! Symbolic regular expressions over qualified events.

use std::collections::BTreeSet;
use std::fmt;
use std::sync::Arc;

use crate::error::{Error, ParseError, Result};
use crate::guards::{
    self, match_concrete, Alphabet, Assignment, ConstraintStore, Event, EventPattern, LitPattern,
    Scope, Term, Universe, Var,
};
use crate::lexer::{Cursor, Tok};

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Sre {
    Empty,
    Epsilon,
    Lit(EventPattern),
    Concat(Arc<Sre>, Arc<Sre>),
    Union(Arc<Sre>, Arc<Sre>),
    Star(Arc<Sre>),
    Inter(Arc<Sre>, Arc<Sre>),
}

impl Sre {
    pub fn lit(p: EventPattern) -> Sre {
        Sre::Lit(p)
    }

    pub fn any() -> Sre {
        Sre::Lit(EventPattern::Any)
    }

    /// `.*`, the universal language.
    pub fn top() -> Sre {
        Sre::Star(Arc::new(Sre::any()))
    }

    pub fn is_top(&self) -> bool {
        matches!(self, Sre::Star(b) if **b == Sre::Lit(EventPattern::Any))
    }

    pub fn concat(a: Sre, b: Sre) -> Sre {
        match (a, b) {
            (Sre::Empty, _) | (_, Sre::Empty) => Sre::Empty,
            (Sre::Epsilon, r) | (r, Sre::Epsilon) => r,
            (Sre::Concat(x, y), r) => Sre::concat((*x).clone(), Sre::concat((*y).clone(), r)),
            (a, b) => Sre::Concat(Arc::new(a), Arc::new(b)),
        }
    }

    pub fn seq(items: impl IntoIterator<Item = Sre>) -> Sre {
        let items: Vec<Sre> = items.into_iter().collect();
        items
            .into_iter()
            .rev()
            .fold(Sre::Epsilon, |acc, r| Sre::concat(r, acc))
    }

    pub fn union(a: Sre, b: Sre) -> Sre {
        let mut leaves = Vec::new();
        a.flatten_union(&mut leaves);
        b.flatten_union(&mut leaves);
        leaves.retain(|r| *r != Sre::Empty);
        if leaves.iter().any(Sre::is_top) {
            return Sre::top();
        }
        leaves.sort();
        leaves.dedup();
        fold_right(leaves, Sre::Empty, Sre::Union)
    }

    pub fn inter(a: Sre, b: Sre) -> Sre {
        let mut leaves = Vec::new();
        a.flatten_inter(&mut leaves);
        b.flatten_inter(&mut leaves);
        if leaves.contains(&Sre::Empty) {
            return Sre::Empty;
        }
        leaves.retain(|r| !r.is_top());
        if leaves.contains(&Sre::Epsilon) {
            return if leaves.iter().all(Sre::nullable) {
                Sre::Epsilon
            } else {
                Sre::Empty
            };
        }
        leaves.sort();
        leaves.dedup();
        fold_right(leaves, Sre::top(), Sre::Inter)
    }

    pub fn star(r: Sre) -> Sre {
        match r {
            Sre::Empty | Sre::Epsilon => Sre::Epsilon,
            s @ Sre::Star(_) => s,
            r => Sre::Star(Arc::new(r)),
        }
    }

    fn flatten_union(self, out: &mut Vec<Sre>) {
        match self {
            Sre::Union(a, b) => {
                (*a).clone().flatten_union(out);
                (*b).clone().flatten_union(out);
            }
            r => out.push(r),
        }
    }

    fn flatten_inter(self, out: &mut Vec<Sre>) {
        match self {
            Sre::Inter(a, b) => {
                (*a).clone().flatten_inter(out);
                (*b).clone().flatten_inter(out);
            }
            r => out.push(r),
        }
    }

    pub fn nullable(&self) -> bool {
        match self {
            Sre::Empty | Sre::Lit(_) => false,
            Sre::Epsilon | Sre::Star(_) => true,
            Sre::Concat(a, b) | Sre::Inter(a, b) => a.nullable() && b.nullable(),
            Sre::Union(a, b) => a.nullable() || b.nullable(),
        }
    }

    pub fn vars(&self) -> BTreeSet<Var> {
        let mut out = BTreeSet::new();
        self.collect_vars(&mut out);
        out
    }

    fn collect_vars(&self, out: &mut BTreeSet<Var>) {
        match self {
            Sre::Empty | Sre::Epsilon => {}
            Sre::Lit(p) => out.extend(p.vars()),
            Sre::Star(a) => a.collect_vars(out),
            Sre::Concat(a, b) | Sre::Union(a, b) | Sre::Inter(a, b) => {
                a.collect_vars(out);
                b.collect_vars(out);
            }
        }
    }

    /// All constants mentioned by literals.
    pub fn constants(&self) -> BTreeSet<u32> {
        let mut out = BTreeSet::new();
        self.visit_lits(&mut |p| {
            if let Some(l) = p.lit() {
                for t in l.terms() {
                    if let Term::Const(c) = t {
                        out.insert(*c);
                    }
                }
            }
        });
        out
    }

    pub fn visit_lits(&self, f: &mut impl FnMut(&EventPattern)) {
        match self {
            Sre::Empty | Sre::Epsilon => {}
            Sre::Lit(p) => f(p),
            Sre::Star(a) => a.visit_lits(f),
            Sre::Concat(a, b) | Sre::Union(a, b) | Sre::Inter(a, b) => {
                a.visit_lits(f);
                b.visit_lits(f);
            }
        }
    }

    /// Capture-free substitution: regexes bind no variables.
    pub fn subst(&self, x: &Var, t: &Term) -> Sre {
        match self {
            Sre::Empty | Sre::Epsilon => self.clone(),
            Sre::Lit(p) => Sre::Lit(p.subst(x, t)),
            Sre::Star(a) => Sre::star(a.subst(x, t)),
            Sre::Concat(a, b) => Sre::concat(a.subst(x, t), b.subst(x, t)),
            Sre::Union(a, b) => Sre::union(a.subst(x, t), b.subst(x, t)),
            Sre::Inter(a, b) => Sre::inter(a.subst(x, t), b.subst(x, t)),
        }
    }

    fn check_bound(&self, asg: &Assignment) -> Result<()> {
        match self.vars().into_iter().find(|v| asg.get(v).is_none()) {
            Some(v) => Err(Error::Unbound(v.name().to_string())),
            None => Ok(()),
        }
    }

    /// Brzozowski derivative with respect to a concrete event.
    pub fn deriv(&self, e: &Event, asg: &Assignment) -> Result<Sre> {
        self.check_bound(asg)?;
        self.deriv_unchecked(e, asg)
    }

    pub(crate) fn deriv_unchecked(&self, e: &Event, asg: &Assignment) -> Result<Sre> {
        Ok(match self {
            Sre::Empty | Sre::Epsilon => Sre::Empty,
            Sre::Lit(p) => {
                if match_concrete(p, e, asg)? {
                    Sre::Epsilon
                } else {
                    Sre::Empty
                }
            }
            Sre::Concat(a, b) => {
                let head = Sre::concat(a.deriv_unchecked(e, asg)?, (**b).clone());
                if a.nullable() {
                    Sre::union(head, b.deriv_unchecked(e, asg)?)
                } else {
                    head
                }
            }
            Sre::Union(a, b) => Sre::union(a.deriv_unchecked(e, asg)?, b.deriv_unchecked(e, asg)?),
            Sre::Inter(a, b) => Sre::inter(a.deriv_unchecked(e, asg)?, b.deriv_unchecked(e, asg)?),
            Sre::Star(a) => Sre::concat(a.deriv_unchecked(e, asg)?, self.clone()),
        })
    }

    pub fn accepts(&self, trace: &[Event], asg: &Assignment) -> Result<bool> {
        self.check_bound(asg)?;
        let mut r = self.clone();
        for e in trace {
            r = r.deriv_unchecked(e, asg)?;
            if r == Sre::Empty {
                return Ok(false);
            }
        }
        Ok(r.nullable())
    }

    /// Derivative with respect to a symbolic program event.
    ///
    /// `produced` must be determined (every slot an equality), so under any
    /// assignment it denotes a single event. Each returned pair is a residual
    /// regex together with the abduced extension of `store` under which that
    /// event can be consumed; residuals reached under the same store are
    /// merged.
    pub fn deriv_symbolic(
        &self,
        produced: &LitPattern,
        store: &ConstraintStore,
        universe: &Universe,
    ) -> Vec<(Sre, ConstraintStore)> {
        let raw = self.sym_deriv(&EventPattern::Lit(produced.clone()), store, universe);
        let mut merged: Vec<(Sre, ConstraintStore)> = Vec::new();
        for (r, s) in raw {
            if r == Sre::Empty {
                continue;
            }
            match merged.iter_mut().find(|(_, t)| *t == s) {
                Some(slot) => slot.0 = Sre::union(slot.0.clone(), r),
                None => merged.push((r, s)),
            }
        }
        merged.sort_by_key(|(_, s)| guards::branch_class(s, store));
        merged
    }

    fn sym_deriv(
        &self,
        p: &EventPattern,
        store: &ConstraintStore,
        universe: &Universe,
    ) -> Vec<(Sre, ConstraintStore)> {
        match self {
            Sre::Empty | Sre::Epsilon => Vec::new(),
            Sre::Lit(q) => guards::unify_symbolic(p, q, store, universe)
                .into_iter()
                .map(|s| (Sre::Epsilon, s))
                .collect(),
            Sre::Concat(a, b) => {
                let mut out: Vec<_> = a
                    .sym_deriv(p, store, universe)
                    .into_iter()
                    .map(|(r, s)| (Sre::concat(r, (**b).clone()), s))
                    .collect();
                if a.nullable() {
                    out.extend(b.sym_deriv(p, store, universe));
                }
                out
            }
            Sre::Union(a, b) => {
                let mut out = a.sym_deriv(p, store, universe);
                out.extend(b.sym_deriv(p, store, universe));
                out
            }
            Sre::Inter(a, b) => {
                let mut out = Vec::new();
                for (ra, sa) in a.sym_deriv(p, store, universe) {
                    for (rb, sb) in b.sym_deriv(p, &sa, universe) {
                        out.push((Sre::inter(ra.clone(), rb), sb));
                    }
                }
                out
            }
            Sre::Star(a) => a
                .sym_deriv(p, store, universe)
                .into_iter()
                .map(|(r, s)| (Sre::concat(r, self.clone()), s))
                .collect(),
        }
    }

    fn prec(&self) -> u8 {
        match self {
            Sre::Union(..) => 0,
            Sre::Inter(..) => 1,
            Sre::Concat(..) => 2,
            Sre::Lit(EventPattern::Not(_)) => 3,
            Sre::Star(_) => 3,
            _ => 4,
        }
    }

    fn fmt_prec(&self, f: &mut fmt::Formatter<'_>, min: u8) -> fmt::Result {
        if self.prec() < min {
            f.write_str("(")?;
            self.fmt_prec(f, 0)?;
            return f.write_str(")");
        }
        match self {
            Sre::Empty => f.write_str("0"),
            Sre::Epsilon => f.write_str("1"),
            Sre::Lit(p) => write!(f, "{p}"),
            Sre::Star(a) => {
                a.fmt_prec(f, 4)?;
                f.write_str("*")
            }
            Sre::Concat(..) => self.fmt_joined(f, " ", 3),
            Sre::Inter(..) => self.fmt_joined(f, " & ", 2),
            Sre::Union(..) => self.fmt_joined(f, " | ", 1),
        }
    }

    fn fmt_joined(&self, f: &mut fmt::Formatter<'_>, sep: &str, min: u8) -> fmt::Result {
        let mut parts = Vec::new();
        self.same_kind_leaves(&mut parts);
        for (i, p) in parts.iter().enumerate() {
            if i > 0 {
                f.write_str(sep)?;
            }
            p.fmt_prec(f, min)?;
        }
        Ok(())
    }

    fn same_kind_leaves<'a>(&'a self, out: &mut Vec<&'a Sre>) {
        let (a, b) = match self {
            Sre::Concat(a, b) | Sre::Inter(a, b) | Sre::Union(a, b) => (a, b),
            _ => unreachable!("only called on binary nodes"),
        };
        for child in [a, b] {
            if std::mem::discriminant(&**child) == std::mem::discriminant(self) {
                child.same_kind_leaves(out);
            } else {
                out.push(child);
            }
        }
    }
}

fn fold_right(mut leaves: Vec<Sre>, unit: Sre, node: fn(Arc<Sre>, Arc<Sre>) -> Sre) -> Sre {
    let Some(mut acc) = leaves.pop() else {
        return unit;
    };
    while let Some(r) = leaves.pop() {
        acc = node(Arc::new(r), Arc::new(acc));
    }
    acc
}

impl fmt::Display for Sre {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.fmt_prec(f, 0)
    }
}

/// A finite sequence of concrete events.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Trace(pub Vec<Event>);

impl Trace {
    pub fn new(events: Vec<Event>) -> Self {
        Trace(events)
    }

    pub fn events(&self) -> &[Event] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn concat(&self, other: &Trace) -> Trace {
        Trace(self.0.iter().chain(&other.0).cloned().collect())
    }

    /// Parses `;`-separated events, e.g. `<put 1 2>;<3 <- get 2>`.
    pub fn parse(text: &str, alphabet: &Alphabet) -> Result<Trace, ParseError> {
        let mut cur = Cursor::new(text)?;
        let mut events = Vec::new();
        if cur.at_eof() {
            return Ok(Trace(events));
        }
        loop {
            events.push(guards::parse_event_in(&mut cur, alphabet)?);
            if !cur.eat(&Tok::Semi) {
                break;
            }
        }
        cur.expect_eof()?;
        Ok(Trace(events))
    }
}

impl fmt::Display for Trace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, e) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(";")?;
            }
            write!(f, "{e}")?;
        }
        Ok(())
    }
}

/// Parses a regex in the DSL: juxtaposition, `|`, `&`, postfix `*`, `.`,
/// `~<...>`, `0`, `1`, and parentheses.
pub fn parse_sre(text: &str, scope: &Scope) -> Result<Sre, ParseError> {
    let mut cur = Cursor::new(text)?;
    let r = parse_sre_in(&mut cur, scope)?;
    cur.expect_eof()?;
    Ok(r)
}

/// Parses a regex prefix; stops at the first token that cannot continue it
/// (a keyword in declaration files).
pub(crate) fn parse_sre_in(cur: &mut Cursor, scope: &Scope) -> Result<Sre, ParseError> {
    let mut r = parse_inter(cur, scope)?;
    while cur.eat(&Tok::Bar) {
        r = Sre::union(r, parse_inter(cur, scope)?);
    }
    Ok(r)
}

fn parse_inter(cur: &mut Cursor, scope: &Scope) -> Result<Sre, ParseError> {
    let mut r = parse_concat(cur, scope)?;
    while cur.eat(&Tok::Amp) {
        r = Sre::inter(r, parse_concat(cur, scope)?);
    }
    Ok(r)
}

fn starts_atom(t: &Tok) -> bool {
    matches!(
        t,
        Tok::LParen | Tok::Dot | Tok::Lt | Tok::Tilde | Tok::Num(0) | Tok::Num(1)
    )
}

fn parse_concat(cur: &mut Cursor, scope: &Scope) -> Result<Sre, ParseError> {
    if !starts_atom(cur.peek()) {
        return Err(cur.unexpected("a regex"));
    }
    let mut items = Vec::new();
    while starts_atom(cur.peek()) {
        let mut a = parse_atom(cur, scope)?;
        while cur.eat(&Tok::Star) {
            a = Sre::star(a);
        }
        items.push(a);
    }
    Ok(Sre::seq(items))
}

fn parse_atom(cur: &mut Cursor, scope: &Scope) -> Result<Sre, ParseError> {
    match cur.peek() {
        Tok::LParen => {
            cur.next();
            let r = parse_sre_in(cur, scope)?;
            cur.expect(&Tok::RParen)?;
            Ok(r)
        }
        Tok::Dot => {
            cur.next();
            Ok(Sre::any())
        }
        Tok::Tilde => {
            cur.next();
            Ok(Sre::Lit(EventPattern::Not(guards::parse_lit(cur, scope)?)))
        }
        Tok::Lt => Ok(Sre::Lit(EventPattern::Lit(guards::parse_lit(cur, scope)?))),
        Tok::Num(0) => {
            cur.next();
            Ok(Sre::Empty)
        }
        Tok::Num(1) => {
            cur.next();
            Ok(Sre::Epsilon)
        }
        _ => Err(cur.unexpected("a regex")),
    }
}
