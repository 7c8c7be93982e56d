//! Client programs (straight-line let-chains over API calls), API signature
//! tables, incorrectness spec declarations, and the concrete interpreter.

use std::collections::BTreeMap;
use std::fmt;

use crate::error::{Error, ParseError, Result};
use crate::guards::{self, Addr, Alphabet, Assignment, ConstraintStore, Event, LitPattern, OpSig, Scope, Sort, Term, Var};
use crate::lexer::{Cursor, Tok};
use crate::sre::{self, Sre, Trace};
use crate::typing::{self, CoverageType};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ApiSig {
    pub name: String,
    pub params: Vec<Var>,
    pub ret: Sort,
    /// Variables bound by the signature's outer quantifier.
    pub ghosts: Vec<Var>,
    pub requires: Sre,
    /// Qualifier on the result, over `nu`, params, and ghosts.
    pub ensures: ConstraintStore,
    pub effect: LitPattern,
}

impl ApiSig {
    pub fn op_sig(&self) -> OpSig {
        OpSig::new(&self.name, self.params.len(), self.ret != Sort::Unit)
    }

    pub fn result_type(&self) -> CoverageType {
        CoverageType::new(self.ret, self.ensures.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ApiTable {
    alphabet: Alphabet,
    sigs: Vec<ApiSig>,
    source: String,
}

impl ApiTable {
    pub fn alphabet(&self) -> &Alphabet {
        &self.alphabet
    }

    pub fn get(&self, name: &str) -> Option<&ApiSig> {
        self.sigs.iter().find(|s| s.name == name)
    }

    pub fn sigs(&self) -> &[ApiSig] {
        &self.sigs
    }

    /// The text this table was parsed from.
    pub fn source(&self) -> &str {
        &self.source
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Call {
    pub op: String,
    pub args: Vec<Term>,
}

impl fmt::Display for Call {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.op)?;
        for a in &self.args {
            write!(f, " {a}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LetStep {
    pub bind: Var,
    pub call: Call,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Tail {
    Call(Call),
    Term(Term),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Program {
    pub name: String,
    pub params: Vec<Var>,
    pub steps: Vec<LetStep>,
    pub tail: Tail,
}

impl Program {
    /// Every call in program order, with its binder if it has one.
    pub fn calls(&self) -> Vec<(Option<&Var>, &Call)> {
        let mut out: Vec<(Option<&Var>, &Call)> =
            self.steps.iter().map(|s| (Some(&s.bind), &s.call)).collect();
        if let Tail::Call(c) = &self.tail {
            out.push((None, c));
        }
        out
    }

    pub fn locals(&self) -> Vec<Var> {
        self.steps.iter().map(|s| s.bind.clone()).collect()
    }
}

impl fmt::Display for Program {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let params: Vec<String> = self
            .params
            .iter()
            .map(|p| format!("{}: {}", p, p.sort()))
            .collect();
        write!(f, "fun {}({}) =", self.name, params.join(", "))?;
        for s in &self.steps {
            write!(f, " let {} = {} in", s.bind, s.call)?;
        }
        match &self.tail {
            Tail::Call(c) => write!(f, " {c}"),
            Tail::Term(t) => write!(f, " {t}"),
        }
    }
}

/// A named incorrectness specification with its qualified variables.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpecDecl {
    pub name: String,
    pub vars: Vec<(Var, CoverageType)>,
    pub pattern: Sre,
}

impl SpecDecl {
    pub fn var_list(&self) -> Vec<Var> {
        self.vars.iter().map(|(v, _)| v.clone()).collect()
    }

    /// Declared qualifiers, instantiated on their variables.
    pub fn store(&self) -> ConstraintStore {
        let mut s = ConstraintStore::new();
        for (v, t) in &self.vars {
            for a in t.instantiate(&Term::Var(v.clone())).atoms() {
                s.insert(a.clone());
            }
        }
        s
    }
}

impl fmt::Display for SpecDecl {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "spec {}", self.name)?;
        for (v, t) in &self.vars {
            writeln!(f, "var {v} : {t}")?;
        }
        writeln!(f, "pattern {}", self.pattern)
    }
}

const RESERVED: &[&str] = &[
    "nu", "api", "fun", "let", "in", "spec", "var", "pattern", "ghost", "requires", "ensures",
    "effect", "true", "addr", "unit", "int",
];

fn fresh_name(cur: &Cursor, name: &str, taken: &[Var]) -> Result<(), ParseError> {
    if RESERVED.contains(&name) {
        return Err(cur.error(format!("`{name}` is reserved")));
    }
    if taken.iter().any(|v| v.name() == name) {
        return Err(cur.error(format!("`{name}` is already bound")));
    }
    Ok(())
}

fn binder(cur: &mut Cursor, taken: &[Var]) -> Result<String, ParseError> {
    let probe = cur.clone();
    let name = cur.ident()?;
    fresh_name(&probe, &name, taken)?;
    Ok(name)
}

fn typed_params(cur: &mut Cursor, taken: &[Var]) -> Result<Vec<Var>, ParseError> {
    let mut out: Vec<Var> = Vec::new();
    cur.expect(&Tok::LParen)?;
    if cur.eat(&Tok::RParen) {
        return Ok(out);
    }
    loop {
        let all: Vec<Var> = taken.iter().chain(&out).cloned().collect();
        let name = binder(cur, &all)?;
        cur.expect(&Tok::Colon)?;
        let sort = typing::parse_sort_in(cur)?;
        out.push(Var::new(&name, sort));
        if cur.eat(&Tok::RParen) {
            return Ok(out);
        }
        cur.expect(&Tok::Comma)?;
    }
}

struct Header {
    name: String,
    params: Vec<Var>,
    ret: Sort,
}

fn parse_header(cur: &mut Cursor) -> Result<Header, ParseError> {
    cur.expect_keyword("api")?;
    let name = binder(cur, &[])?;
    let params = typed_params(cur, &[])?;
    cur.expect(&Tok::Colon)?;
    let ret = typing::parse_sort_in(cur)?;
    Ok(Header { name, params, ret })
}

/// Parses an API table. Headers are read first so every block can mention
/// any declared operation.
pub fn parse_apis(text: &str) -> Result<ApiTable> {
    let mut cur = Cursor::new(text)?;
    let mut scan = cur.clone();
    let mut alphabet = Alphabet::new(Vec::new());
    while !scan.at_eof() {
        let pos = scan.pos();
        let h = parse_header(&mut scan)?;
        if alphabet.get(&h.name).is_some() {
            return Err(ParseError::new(pos, format!("api `{}` declared twice", h.name)).into());
        }
        alphabet.add(OpSig::new(&h.name, h.params.len(), h.ret != Sort::Unit));
        while !scan.at_eof() && !scan.is_keyword("api") {
            scan.next();
        }
    }
    let mut sigs = Vec::new();
    while !cur.at_eof() {
        sigs.push(parse_api_block(&mut cur, &alphabet)?);
    }
    Ok(ApiTable {
        alphabet,
        sigs,
        source: text.to_string(),
    })
}

fn parse_api_block(cur: &mut Cursor, alphabet: &Alphabet) -> Result<ApiSig> {
    let start = cur.pos();
    let h = parse_header(cur)?;
    let mut ghosts: Vec<Var> = Vec::new();
    while cur.eat_keyword("ghost") {
        loop {
            let taken: Vec<Var> = h.params.iter().chain(&ghosts).cloned().collect();
            let name = binder(cur, &taken)?;
            cur.expect(&Tok::Colon)?;
            ghosts.push(Var::new(&name, typing::parse_sort_in(cur)?));
            if !cur.eat(&Tok::Comma) {
                break;
            }
        }
    }
    let vars: Vec<Var> = h.params.iter().chain(&ghosts).cloned().collect();
    let scope = Scope::new(alphabet, &vars);
    let mut requires = None;
    let mut ensures = None;
    let mut effect = None;
    loop {
        if cur.eat_keyword("requires") {
            requires = Some(sre::parse_sre_in(cur, &scope)?);
        } else if cur.eat_keyword("ensures") {
            let mut with_nu = vars.clone();
            with_nu.push(Var::nu(h.ret));
            ensures = Some(typing::parse_qualifier_in(cur, &Scope::new(alphabet, &with_nu))?);
        } else if cur.eat_keyword("effect") {
            effect = Some((cur.pos(), sre::parse_sre_in(cur, &scope)?));
        } else {
            break;
        }
    }
    let (epos, effect) =
        effect.ok_or_else(|| ParseError::new(start, format!("api `{}` has no effect", h.name)))?;
    let effect = match effect {
        Sre::Lit(guards::EventPattern::Lit(l)) if l.is_determined() && *l.op == *h.name => l,
        _ => {
            return Err(ParseError::new(
                epos,
                format!("effect of `{}` must be one fully determined `{}` event", h.name, h.name),
            )
            .into())
        }
    };
    let ensures = ensures.unwrap_or_default();
    if h.ret == Sort::Unit && ensures.vars().iter().any(Var::is_nu) {
        return Err(Error::Sort(format!("`{}` returns unit; `ensures` cannot constrain nu", h.name)));
    }
    ensures.check_sorts()?;
    Ok(ApiSig {
        name: h.name,
        params: h.params,
        ret: h.ret,
        ghosts,
        requires: requires.unwrap_or_else(Sre::top),
        ensures,
        effect,
    })
}

fn parse_arg(cur: &mut Cursor, bound: &[Var]) -> Result<Term, ParseError> {
    let pos = cur.pos();
    match cur.next() {
        Tok::Num(n) => Ok(Term::Const(n)),
        Tok::Ident(name) => bound
            .iter()
            .find(|v| v.name() == name)
            .map(|v| Term::Var(v.clone()))
            .ok_or_else(|| ParseError::new(pos, format!("unbound variable `{name}`"))),
        other => Err(ParseError::new(pos, format!("expected an argument, found {}", other.describe()))),
    }
}

fn parse_call(cur: &mut Cursor, apis: &ApiTable, bound: &[Var]) -> Result<Call, ParseError> {
    let pos = cur.pos();
    let op = cur.ident()?;
    let sig = apis
        .get(&op)
        .ok_or_else(|| ParseError::new(pos, format!("unknown api `{op}`")))?;
    let mut args = Vec::new();
    for p in &sig.params {
        let apos = cur.pos();
        let a = parse_arg(cur, bound)?;
        let ok = match &a {
            Term::Var(v) => v.sort() == p.sort(),
            Term::Const(_) => p.sort() != Sort::Unit,
        };
        if !ok {
            return Err(ParseError::new(apos, format!("argument `{a}` of `{op}` must have sort {}", p.sort())));
        }
        args.push(a);
    }
    Ok(Call { op, args })
}

fn is_call_start(cur: &Cursor, apis: &ApiTable) -> bool {
    matches!(cur.peek(), Tok::Ident(n) if apis.get(n).is_some())
}

/// Parses `fun name(p: sort, ...) = let x = op args in ... tail`.
pub fn parse_program(text: &str, apis: &ApiTable) -> Result<Program> {
    let mut cur = Cursor::new(text)?;
    cur.expect_keyword("fun")?;
    let name = cur.ident()?;
    let params = typed_params(&mut cur, &[])?;
    cur.expect(&Tok::Eq)?;
    let mut bound = params.clone();
    let mut steps = Vec::new();
    while cur.eat_keyword("let") {
        let probe = cur.clone();
        let x = binder(&mut cur, &bound)?;
        if apis.get(&x).is_some() {
            return Err(probe.error(format!("`{x}` names an api")).into());
        }
        cur.expect(&Tok::Eq)?;
        let call = parse_call(&mut cur, apis, &bound)?;
        cur.expect_keyword("in")?;
        let sort = apis.get(&call.op).expect("checked by parse_call").ret;
        let bind = Var::new(&x, sort);
        bound.push(bind.clone());
        steps.push(LetStep { bind, call });
    }
    let tail = if is_call_start(&cur, apis) {
        Tail::Call(parse_call(&mut cur, apis, &bound)?)
    } else {
        Tail::Term(parse_arg(&mut cur, &bound)?)
    };
    cur.expect_eof()?;
    Ok(Program {
        name,
        params,
        steps,
        tail,
    })
}

/// Parses `spec name`, `var x : type` lines, and one `pattern`.
pub fn parse_spec(text: &str, apis: &ApiTable) -> Result<SpecDecl> {
    let mut cur = Cursor::new(text)?;
    cur.expect_keyword("spec")?;
    let name = cur.ident()?;
    let mut vars: Vec<(Var, CoverageType)> = Vec::new();
    while cur.eat_keyword("var") {
        let names: Vec<Var> = vars.iter().map(|(v, _)| v.clone()).collect();
        let x = binder(&mut cur, &names)?;
        cur.expect(&Tok::Colon)?;
        let ty = typing::parse_coverage_in(&mut cur, &Scope::new(apis.alphabet(), &names))?;
        vars.push((Var::new(&x, ty.base), ty));
    }
    cur.expect_keyword("pattern")?;
    let names: Vec<Var> = vars.iter().map(|(v, _)| v.clone()).collect();
    let pattern = sre::parse_sre_in(&mut cur, &Scope::new(apis.alphabet(), &names))?;
    cur.expect_eof()?;
    Ok(SpecDecl {
        name,
        vars,
        pattern,
    })
}

/// The single key-value store the `put`/`get` operations act on.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct KvStore(BTreeMap<Addr, Addr>);

impl KvStore {
    pub fn new() -> Self {
        KvStore::default()
    }

    pub fn replay(trace: &[Event]) -> Self {
        let mut s = KvStore::new();
        for e in trace {
            s.apply(e);
        }
        s
    }

    /// Records a `put`; other events leave the store unchanged.
    pub fn apply(&mut self, e: &Event) {
        if &*e.op == "put" && e.args.len() == 2 {
            self.0.insert(e.args[0], e.args[1]);
        }
    }

    pub fn get(&self, k: Addr) -> Option<Addr> {
        self.0.get(&k).copied()
    }

    /// Whether `e` could have been observed in this state.
    pub fn coherent(&self, e: &Event) -> bool {
        match (&*e.op, e.args.as_slice(), e.result) {
            ("get", [k], Some(v)) => self.get(*k) == Some(v),
            _ => true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Outcome {
    Done { produced: Trace, result: Option<Addr> },
    /// A `get` hit an unbound key at call `call` (0-based).
    Stuck { produced: Trace, call: usize },
}

impl Outcome {
    pub fn produced(&self) -> &Trace {
        match self {
            Outcome::Done { produced, .. } | Outcome::Stuck { produced, .. } => produced,
        }
    }
}

/// Replays `prefix`, then runs the body. The returned trace holds only the
/// program's own events.
pub fn run_concrete(prog: &Program, prefix: &[Event], args: &Assignment) -> Result<Outcome> {
    run_from(prog, &KvStore::replay(prefix), args)
}

pub fn run_from(prog: &Program, store: &KvStore, args: &Assignment) -> Result<Outcome> {
    let mut store = store.clone();
    let mut env = Assignment::new();
    for p in &prog.params {
        let v = args.get(p).ok_or_else(|| Error::Unbound(p.name().to_string()))?;
        env.insert(p.clone(), v);
    }
    let mut produced = Vec::new();
    for (i, (bind, call)) in prog.calls().into_iter().enumerate() {
        let vals = call
            .args
            .iter()
            .map(|a| a.eval(&env))
            .collect::<Result<Vec<_>>>()?;
        let result = match (call.op.as_str(), vals.as_slice()) {
            ("put", [k, v]) => {
                produced.push(Event::new("put", vals.clone(), None));
                store.0.insert(*k, *v);
                None
            }
            ("get", [k]) => match store.get(*k) {
                Some(v) => {
                    produced.push(Event::new("get", vals.clone(), Some(v)));
                    Some(v)
                }
                None => {
                    return Ok(Outcome::Stuck {
                        produced: Trace::new(produced),
                        call: i,
                    })
                }
            },
            _ => return Err(Error::NoSemantics(call.op.clone())),
        };
        match bind {
            Some(x) => {
                if let Some(v) = result {
                    env.insert(x.clone(), v);
                }
            }
            None => {
                return Ok(Outcome::Done {
                    produced: Trace::new(produced),
                    result,
                })
            }
        }
    }
    let result = match &prog.tail {
        Tail::Term(Term::Var(v)) if v.sort() == Sort::Unit => None,
        Tail::Term(t) => Some(t.eval(&env)?),
        Tail::Call(_) => unreachable!("tail call returns above"),
    };
    Ok(Outcome::Done {
        produced: Trace::new(produced),
        result,
    })
}
