#![allow(dead_code)]

use proptest::prelude::*;
use tracewit::guards::{ArgConstraint, OpSig};
use tracewit::{Addr, Alphabet, Assignment, Atom, AtomKind, Event, EventPattern, LitPattern, Sre, Term, Var};

pub const VALUES: [Addr; 3] = [0, 1, 2];

/// Two unary operations, small enough for exhaustive trace enumeration.
pub fn toy_alphabet() -> Alphabet {
    Alphabet::new(vec![OpSig::new("acq", 1, false), OpSig::new("rel", 1, false)])
}

pub fn vars() -> Vec<Var> {
    vec![Var::addr("a"), Var::addr("b")]
}

pub fn assignments() -> Vec<Assignment> {
    let mut out = Vec::new();
    for a in VALUES {
        for b in VALUES {
            out.push(Assignment::new().with(Var::addr("a"), a).with(Var::addr("b"), b));
        }
    }
    out
}

pub fn toy_events() -> Vec<Event> {
    let mut out = Vec::new();
    for op in ["acq", "rel"] {
        for v in VALUES {
            out.push(Event::new(op, vec![v], None));
        }
    }
    out
}

/// Every trace over `events` of length at most `n`.
pub fn traces(events: &[Event], n: usize) -> Vec<Vec<Event>> {
    let mut out = vec![Vec::new()];
    let mut layer = vec![Vec::new()];
    for _ in 0..n {
        let mut next = Vec::new();
        for t in &layer {
            for e in events {
                let mut u: Vec<Event> = t.clone();
                u.push(e.clone());
                next.push(u);
            }
        }
        out.extend(next.iter().cloned());
        layer = next;
    }
    out
}

pub fn eval(t: &Term, asg: &Assignment) -> Addr {
    match t {
        Term::Const(c) => *c,
        Term::Var(v) => asg.get(v).expect("assigned"),
    }
}

pub fn atom_holds(a: &Atom, asg: &Assignment) -> bool {
    let (l, r) = (eval(&a.lhs, asg), eval(&a.rhs, asg));
    match a.kind {
        AtomKind::Eq => l == r,
        AtomKind::Neq => l != r,
    }
}

fn arg_ok(c: &ArgConstraint, v: Addr, asg: &Assignment) -> bool {
    match c {
        ArgConstraint::Wildcard => true,
        ArgConstraint::Eq(t) => eval(t, asg) == v,
        ArgConstraint::Neq(t) => eval(t, asg) != v,
    }
}

fn lit_ok(l: &LitPattern, e: &Event, asg: &Assignment) -> bool {
    *l.op == *e.op
        && l.args.len() == e.args.len()
        && l.args.iter().zip(&e.args).all(|(c, v)| arg_ok(c, *v, asg))
        && match (&l.result, e.result) {
            (None, _) => true,
            (Some(c), Some(v)) => arg_ok(c, v, asg),
            (Some(_), None) => false,
        }
}

pub fn pattern_ok(p: &EventPattern, e: &Event, asg: &Assignment) -> bool {
    match p {
        EventPattern::Any => true,
        EventPattern::Lit(l) => lit_ok(l, e, asg),
        EventPattern::Not(l) => !lit_ok(l, e, asg),
    }
}

/// Membership by trying every way to cut the trace, with no derivatives.
pub fn naive(r: &Sre, t: &[Event], asg: &Assignment) -> bool {
    match r {
        Sre::Empty => false,
        Sre::Epsilon => t.is_empty(),
        Sre::Lit(p) => t.len() == 1 && pattern_ok(p, &t[0], asg),
        Sre::Concat(a, b) => (0..=t.len()).any(|i| naive(a, &t[..i], asg) && naive(b, &t[i..], asg)),
        Sre::Union(a, b) => naive(a, t, asg) || naive(b, t, asg),
        Sre::Inter(a, b) => naive(a, t, asg) && naive(b, t, asg),
        Sre::Star(a) => t.is_empty() || (1..=t.len()).any(|i| naive(a, &t[..i], asg) && naive(r, &t[i..], asg)),
    }
}

pub fn term() -> impl Strategy<Value = Term> + Clone {
    prop_oneof![
        Just(Term::var("a")),
        Just(Term::var("b")),
        (0u32..3).prop_map(Term::Const),
    ]
}

fn arg() -> impl Strategy<Value = ArgConstraint> + Clone {
    prop_oneof![
        Just(ArgConstraint::Wildcard),
        term().prop_map(ArgConstraint::Eq),
        term().prop_map(ArgConstraint::Neq),
    ]
}

pub fn pattern() -> impl Strategy<Value = EventPattern> + Clone {
    let lit = (prop_oneof![Just("acq"), Just("rel")], arg()).prop_map(|(op, a)| LitPattern::new(op, vec![a], None));
    prop_oneof![
        1 => Just(EventPattern::Any),
        3 => lit.clone().prop_map(EventPattern::Lit),
        2 => lit.prop_map(EventPattern::Not),
    ]
}

/// Regexes of depth at most 4 built through the smart constructors.
pub fn sre() -> impl Strategy<Value = Sre> + Clone {
    let leaf = prop_oneof![
        1 => Just(Sre::Epsilon),
        1 => Just(Sre::Empty),
        6 => pattern().prop_map(Sre::lit),
    ];
    leaf.prop_recursive(4, 24, 2, |inner| {
        prop_oneof![
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Sre::concat(a, b)),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Sre::union(a, b)),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Sre::inter(a, b)),
            inner.prop_map(Sre::star),
        ]
    })
}

pub fn trace(max_len: usize) -> impl Strategy<Value = Vec<Event>> {
    let events = toy_events();
    prop::collection::vec(prop::sample::select(events), 0..=max_len)
}

pub fn assignment() -> impl Strategy<Value = Assignment> {
    prop::sample::select(assignments())
}
