//! Witness inference: split the incorrectness automaton into a hypothesized
//! context and effect, then push the program through it call by call,
//! abducing the atoms that make each step fit.

use std::time::{Duration, Instant};

use crate::error::{Error, Result};
use crate::guards::{self, Atom, ConstraintStore, EventPattern, LitPattern, Term, Universe, Var};
use crate::lang::{ApiSig, ApiTable, Call, Program, SpecDecl, Tail};
use crate::sfa::{Sfa, Split, Witness};
use crate::sre::Sre;
use crate::typing::{self, CoverageType, Judgment, TripleType, TypingContext};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Budgets {
    pub max_hypotheses: usize,
    pub max_branches: usize,
    pub timeout: Duration,
}

impl Default for Budgets {
    fn default() -> Self {
        Budgets {
            max_hypotheses: 16,
            max_branches: 10_000,
            timeout: Duration::from_secs(10),
        }
    }
}

/// Cap on the abduced stores kept per intersection.
const STORES_PER_STEP: usize = 64;

#[derive(Debug, Clone)]
pub struct Hypothesis {
    pub index: usize,
    pub split: Split,
    pub prefix: Sre,
    pub suffix: Sre,
    pub spec_vars: Vec<(Var, CoverageType)>,
}

/// One hypothesis per split of the compiled spec, earliest pivots first.
pub fn enumerate_hypotheses(spec: &SpecDecl) -> Vec<Hypothesis> {
    Sfa::compile(&spec.pattern)
        .enumerate_splits()
        .into_iter()
        .enumerate()
        .map(|(index, split)| Hypothesis {
            index,
            prefix: split.prefix_sre(),
            suffix: split.suffix_sre(),
            split,
            spec_vars: spec.vars.clone(),
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct InferState {
    pub store: ConstraintStore,
    pub ctx: TypingContext,
    /// Traces leading to the current program point.
    pub ctx_sre: Sre,
    /// The part of the hypothesized effect still to be produced.
    pub eff_remainder: Sre,
    pub produced: Vec<LitPattern>,
    /// `ctx_sre` as it was before the latest call's event.
    pub last_ctx: Sre,
    pub last_result: CoverageType,
    pub ghosts: Vec<Var>,
}

impl InferState {
    pub fn initial(h: &Hypothesis, prog: &Program) -> Result<InferState> {
        let mut ctx = TypingContext::new();
        for (v, t) in &h.spec_vars {
            ctx.push(v.clone(), t.clone(), false)?;
        }
        for p in &prog.params {
            ctx.push(p.clone(), CoverageType::top(p.sort()), false)
                .map_err(|_| clash(p))?;
        }
        for x in prog.locals() {
            if ctx.get(x.name()).is_some() {
                return Err(clash(&x));
            }
        }
        Ok(InferState {
            store: ctx.to_store(),
            ctx,
            ctx_sre: h.prefix.clone(),
            eff_remainder: h.suffix.clone(),
            produced: Vec::new(),
            last_ctx: h.prefix.clone(),
            last_result: CoverageType::top(guards::Sort::Unit),
            ghosts: Vec::new(),
        })
    }
}

fn clash(v: &Var) -> Error {
    Error::Invalid(format!(
        "program variable `{}` clashes with a spec variable",
        v.name()
    ))
}

/// Simultaneous renaming through a temporary namespace, so api parameter
/// names never capture program variables.
struct Instance {
    requires: Sre,
    ensures: ConstraintStore,
    effect: LitPattern,
}

fn instantiate(api: &ApiSig, targets: &[(Var, Term)]) -> Instance {
    let temp = |v: &Var| Var::new(&format!("%{}", v.name()), v.sort());
    let mut requires = api.requires.clone();
    let mut ensures = api.ensures.clone();
    let mut effect = api.effect.clone();
    for (v, _) in targets {
        let t = Term::Var(temp(v));
        requires = requires.subst(v, &t);
        ensures = ensures.subst(v, &t);
        effect = effect.subst(v, &t);
    }
    for (v, target) in targets {
        let tv = temp(v);
        requires = requires.subst(&tv, target);
        ensures = ensures.subst(&tv, target);
        effect = effect.subst(&tv, target);
    }
    Instance {
        requires,
        ensures,
        effect,
    }
}

fn fresh_ghost(g: &Var, call: usize, s: &InferState, prog: &Program) -> Var {
    let mut name = format!("{}_{}", g.name(), call + 1);
    let taken = |n: &str| {
        s.ctx.get(n).is_some()
            || prog.locals().iter().any(|v| v.name() == n)
            || prog.params.iter().any(|v| v.name() == n)
    };
    while taken(&name) {
        name.push('\'');
    }
    Var::new(&name, g.sort())
}

/// Advances `s` over one call. Returns the successor states, most
/// constrained abductions first.
pub fn step_call(
    s: &InferState,
    bind: Option<&Var>,
    api: &ApiSig,
    args: &[Term],
    call_index: usize,
    prog: &Program,
    universe: &Universe,
) -> Result<Vec<InferState>> {
    let mut base = s.clone();
    let mut targets: Vec<(Var, Term)> = api.params.iter().cloned().zip(args.iter().cloned()).collect();
    let nu = Var::nu(api.ret);
    for g in &api.ghosts {
        let names_result = api.ensures.contains(&Atom::eq(Term::Var(nu.clone()), Term::Var(g.clone())));
        match bind {
            // The binder names the stored value itself.
            Some(x) if names_result && x.sort() == g.sort() => {
                targets.push((g.clone(), Term::Var(x.clone())));
            }
            _ => {
                let fresh = fresh_ghost(g, call_index, &base, prog);
                base.ctx.push(fresh.clone(), CoverageType::top(g.sort()), true)?;
                base.ghosts.push(fresh.clone());
                targets.push((g.clone(), Term::Var(fresh)));
            }
        }
    }
    let inst = instantiate(api, &targets);

    let (ctx_after, stores) = if inst.requires.is_top() {
        (base.ctx_sre.clone(), vec![base.store.clone()])
    } else {
        let ctx_after = Sre::inter(base.ctx_sre.clone(), inst.requires.clone());
        let a = Sfa::compile(&ctx_after);
        let stores = a.accepting_stores(&base.store, universe, a.search_bound(universe), STORES_PER_STEP);
        (ctx_after, guards::order_branches(stores, &base.store))
    };

    if let Some(x) = bind {
        base.ctx.push(x.clone(), CoverageType::top(x.sort()), false)?;
        for a in inst.ensures.subst(&nu, &Term::Var(x.clone())).atoms() {
            if a.decided() != Some(true) {
                base.ctx.attach(a)?;
            }
        }
    }
    let lit = Sre::Lit(EventPattern::Lit(inst.effect.clone()));
    let mut out = Vec::new();
    for store in stores {
        let store = store.union(&inst.ensures_binding(bind, &nu));
        for (rest, st) in base.eff_remainder.deriv_symbolic(&inst.effect, &store, universe) {
            let mut next = base.clone();
            next.store = st;
            next.last_ctx = ctx_after.clone();
            next.ctx_sre = Sre::concat(ctx_after.clone(), lit.clone());
            next.eff_remainder = rest;
            next.produced.push(inst.effect.clone());
            next.last_result = CoverageType::new(api.ret, inst.ensures.clone());
            out.push(next);
        }
    }
    Ok(out)
}

impl Instance {
    /// The result qualifier instantiated on the binder, as store atoms.
    fn ensures_binding(&self, bind: Option<&Var>, nu: &Var) -> ConstraintStore {
        match bind {
            Some(x) => self.ensures.subst(nu, &Term::Var(x.clone())),
            None => ConstraintStore::new(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Success {
    pub hypothesis: Hypothesis,
    pub judgment: Judgment,
    /// Atoms added on top of the declared qualifiers.
    pub abduced: Vec<Atom>,
    pub store: ConstraintStore,
    /// A concrete trace of the final context, found by the leaf check.
    pub sample: Witness,
    pub produced: Vec<LitPattern>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Stats {
    pub hypotheses_tried: usize,
    pub branches: usize,
    pub elapsed: Duration,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exhausted {
    Hypotheses,
    Branches,
    Time,
}

#[derive(Debug, Clone)]
pub struct InferOutcome {
    pub success: Option<Success>,
    pub stats: Stats,
    /// Set when the search stopped on a budget rather than running out of
    /// candidates.
    pub exhausted: Option<Exhausted>,
}

struct Search<'a> {
    prog: &'a Program,
    apis: &'a ApiTable,
    universe: &'a Universe,
    budgets: Budgets,
    start: Instant,
    branches: usize,
    exhausted: Option<Exhausted>,
}

/// Depth-first search over hypotheses and per-call branches; the first
/// leaf that closes the effect and survives local elimination wins.
pub fn infer_witness(
    prog: &Program,
    apis: &ApiTable,
    spec: &SpecDecl,
    budgets: Budgets,
    universe: &Universe,
) -> Result<InferOutcome> {
    let mut search = Search {
        prog,
        apis,
        universe,
        budgets,
        start: Instant::now(),
        branches: 0,
        exhausted: None,
    };
    for (_, call) in prog.calls() {
        if apis.get(&call.op).is_none() {
            return Err(Error::Unbound(call.op.clone()));
        }
    }
    let hyps = enumerate_hypotheses(spec);
    let mut tried = 0;
    let mut success = None;
    for h in hyps {
        if tried >= budgets.max_hypotheses {
            search.exhausted = Some(Exhausted::Hypotheses);
            break;
        }
        tried += 1;
        let init = InferState::initial(&h, prog)?;
        if let Some(found) = search.explore(&h, init, 0)? {
            success = Some(found);
            break;
        }
        if search.exhausted.is_some() {
            break;
        }
    }
    Ok(InferOutcome {
        success,
        stats: Stats {
            hypotheses_tried: tried,
            branches: search.branches,
            elapsed: search.start.elapsed(),
        },
        exhausted: search.exhausted,
    })
}

impl Search<'_> {
    fn over_budget(&mut self) -> bool {
        if self.exhausted.is_some() {
            return true;
        }
        if self.branches >= self.budgets.max_branches {
            self.exhausted = Some(Exhausted::Branches);
        } else if self.start.elapsed() >= self.budgets.timeout {
            self.exhausted = Some(Exhausted::Time);
        }
        self.exhausted.is_some()
    }

    fn explore(&mut self, h: &Hypothesis, s: InferState, depth: usize) -> Result<Option<Success>> {
        let calls = self.prog.calls();
        if depth == calls.len() {
            return self.leaf(h, s);
        }
        let (bind, call): (Option<&Var>, &Call) = calls[depth];
        let api = self.apis.get(&call.op).expect("checked in infer_witness");
        let next = step_call(&s, bind, api, &call.args, depth, self.prog, self.universe)?;
        for n in next {
            if self.over_budget() {
                return Ok(None);
            }
            self.branches += 1;
            if let Some(found) = self.explore(h, n, depth + 1)? {
                return Ok(Some(found));
            }
        }
        Ok(None)
    }

    fn leaf(&mut self, h: &Hypothesis, s: InferState) -> Result<Option<Success>> {
        if !s.eff_remainder.nullable() {
            return Ok(None);
        }
        let a = Sfa::compile(&s.ctx_sre);
        let Some(sample) = a.is_empty(&s.store, self.universe) else {
            return Ok(None);
        };
        let declared = {
            let mut g = TypingContext::new();
            for (v, t) in &h.spec_vars {
                g.push(v.clone(), t.clone(), false)?;
            }
            g.to_store()
        };
        let mut ctx = s.ctx.clone();
        let known = ctx.to_store();
        for atom in s.store.atoms() {
            if !known.contains(atom) {
                ctx.attach(atom)?;
            }
        }
        let (context, result, effect) = match &self.prog.tail {
            Tail::Call(_) => (
                s.last_ctx.clone(),
                s.last_result.clone(),
                Sre::Lit(EventPattern::Lit(s.produced.last().expect("tail call produced").clone())),
            ),
            Tail::Term(t) => {
                let sort = t.sort().unwrap_or(guards::Sort::Addr);
                let nu = Term::Var(Var::nu(sort));
                let qual = if sort == guards::Sort::Unit {
                    ConstraintStore::new()
                } else {
                    ConstraintStore::from_atoms([Atom::eq(nu, t.clone())])
                };
                (s.ctx_sre.clone(), CoverageType::new(sort, qual), Sre::Epsilon)
            }
        };
        let mut j = Judgment {
            ctx,
            subject: self.prog.name.clone(),
            ty: TripleType {
                context,
                result,
                effect,
            },
        };
        let domain = self.universe.domain_size;
        j = match typing::eliminate_locals(&j, &self.prog.locals(), &s.store, domain) {
            Ok(j) => j,
            Err(Error::Elimination(_)) => return Ok(None),
            Err(e) => return Err(e),
        };
        for g in &s.ghosts {
            if let Ok(k) = typing::eliminate_locals(&j, std::slice::from_ref(g), &j.ctx.to_store(), domain) {
                j = k;
            }
        }
        j.ty.context = absorb(&j.ty.context);
        let abduced = s
            .store
            .atoms()
            .filter(|a| !declared.contains(a))
            .cloned()
            .collect();
        Ok(Some(Success {
            hypothesis: h.clone(),
            judgment: j,
            abduced,
            store: s.store,
            sample,
            produced: s.produced,
        }))
    }
}

fn seq_items(r: &Sre) -> Vec<&Sre> {
    match r {
        Sre::Concat(a, b) => {
            let mut v = vec![&**a];
            v.extend(seq_items(b));
            v
        }
        _ => vec![r],
    }
}

fn conjuncts(r: &Sre) -> Vec<&Sre> {
    match r {
        Sre::Inter(a, b) => {
            let mut v = conjuncts(a);
            v.extend(conjuncts(b));
            v
        }
        _ => vec![r],
    }
}

/// Whether `c` is `Z e1 .. ek` with `x` a conjunct of `Z` and `x` ending in
/// a loop every `ei` is guaranteed to match, so that `L(c) ⊆ L(x)`.
fn extends(c: &Sre, x: &Sre) -> bool {
    let items = seq_items(c);
    let [z, rest @ ..] = items.as_slice() else {
        return false;
    };
    if rest.is_empty() || !conjuncts(z).contains(&x) {
        return false;
    }
    let Some(Sre::Star(body)) = seq_items(x).last().copied() else {
        return false;
    };
    rest.iter().all(|e| match (e, &**body) {
        (Sre::Lit(EventPattern::Lit(_)), Sre::Lit(EventPattern::Any)) => true,
        (Sre::Lit(EventPattern::Lit(ev)), Sre::Lit(EventPattern::Not(l))) => ev.op != l.op,
        _ => false,
    })
}

/// Drops intersection conjuncts implied by a sibling that extends them
/// with events their trailing loop always admits. Language preserving;
/// used to tidy the reported context.
fn absorb(r: &Sre) -> Sre {
    match r {
        Sre::Inter(..) => {
            let cs: Vec<Sre> = conjuncts(r).into_iter().map(absorb).collect();
            cs.iter()
                .filter(|x| !cs.iter().any(|c| c != *x && extends(c, x)))
                .cloned()
                .reduce(Sre::inter)
                .unwrap_or_else(Sre::top)
        }
        Sre::Concat(a, b) => Sre::concat(absorb(a), absorb(b)),
        Sre::Union(a, b) => Sre::union(absorb(a), absorb(b)),
        Sre::Star(a) => Sre::star(absorb(a)),
        _ => r.clone(),
    }
}
