//! Ground truth by bounded enumeration: coherent traces, concrete replay,
//! witness validation, and a brute-force witness search that shares no code
//! with inference.

use std::collections::{BTreeSet, HashMap, HashSet, VecDeque};

use crate::error::{Error, Result};
use crate::guards::{self, Addr, Alphabet, Assignment, ConstraintStore, Event, Sort, Term, Universe, Var};
use crate::lang::{run_from, KvStore, Outcome, Program, SpecDecl};
use crate::sre::{Sre, Trace};
use crate::typing::Judgment;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OracleConfig {
    pub domain_size: u32,
    pub max_prefix_len: usize,
    pub max_assignments: usize,
    /// Search nodes allowed per assignment.
    pub max_nodes: usize,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            domain_size: guards::DEFAULT_DOMAIN,
            max_prefix_len: 6,
            max_assignments: 100_000,
            max_nodes: 200_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Evidence {
    pub assignment: Assignment,
    pub prefix: Trace,
    pub produced: Trace,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Validation {
    Validated(Evidence),
    /// Every candidate within the bounds was checked and none worked.
    Refuted,
    /// A budget ran out before the search finished.
    Exhausted,
}

impl Validation {
    pub fn evidence(&self) -> Option<&Evidence> {
        match self {
            Validation::Validated(e) => Some(e),
            _ => None,
        }
    }
}

/// Events that may follow a trace whose replay left `store`: every non-get
/// event, and each get that reads the current binding.
fn next_events(alphabet: &Alphabet, values: &[Addr], store: &KvStore) -> Vec<Event> {
    Universe::new(alphabet.clone(), 0)
        .events(values)
        .into_iter()
        .filter(|e| &*e.op != "get" || store.coherent(e))
        .collect()
}

/// All store-coherent traces up to `cfg.max_prefix_len`, shortest first and
/// lexicographic within a length.
pub fn enumerate_traces(alphabet: &Alphabet, cfg: &OracleConfig) -> impl Iterator<Item = Trace> {
    let alphabet = alphabet.clone();
    let values: Vec<Addr> = (0..cfg.domain_size).collect();
    (0..=cfg.max_prefix_len).flat_map(move |len| traces_of_len(&alphabet, &values, len))
}

fn traces_of_len(alphabet: &Alphabet, values: &[Addr], len: usize) -> Vec<Trace> {
    let mut out = Vec::new();
    let mut cur = Vec::new();
    fn go(
        alphabet: &Alphabet,
        values: &[Addr],
        len: usize,
        store: &KvStore,
        cur: &mut Vec<Event>,
        out: &mut Vec<Trace>,
    ) {
        if cur.len() == len {
            out.push(Trace::new(cur.clone()));
            return;
        }
        for e in next_events(alphabet, values, store) {
            let mut s = store.clone();
            s.apply(&e);
            cur.push(e);
            go(alphabet, values, len, &s, cur, out);
            cur.pop();
        }
    }
    go(alphabet, values, len, &KvStore::new(), &mut cur, &mut out);
    out
}

/// Assignments of `vars` over `values` satisfying `store`, in lexicographic
/// order. `None` when there are more than `limit`.
fn assignments(
    vars: &[Var],
    values: &[Addr],
    store: &ConstraintStore,
    limit: usize,
) -> Result<Option<Vec<Assignment>>> {
    let mut out = Vec::new();
    let mut idx = vec![0usize; vars.len()];
    let addr_vars: Vec<&Var> = vars.iter().filter(|v| v.sort() != Sort::Unit).collect();
    idx.truncate(addr_vars.len());
    loop {
        let asg: Assignment = addr_vars
            .iter()
            .zip(&idx)
            .map(|(v, i)| ((*v).clone(), values[*i]))
            .collect();
        if store.holds(&asg)? {
            if out.len() == limit {
                return Ok(None);
            }
            out.push(asg);
        }
        let mut k = idx.len();
        loop {
            if k == 0 {
                return Ok(Some(out));
            }
            k -= 1;
            idx[k] += 1;
            if idx[k] < values.len() {
                break;
            }
            idx[k] = 0;
        }
    }
}

/// Interns regexes so derivative results can be memoized by index.
#[derive(Default)]
struct Memo {
    ids: HashMap<Sre, usize>,
    terms: Vec<Sre>,
    deriv: HashMap<(usize, usize), usize>,
}

impl Memo {
    fn id(&mut self, r: Sre) -> usize {
        if let Some(i) = self.ids.get(&r) {
            return *i;
        }
        self.terms.push(r.clone());
        self.ids.insert(r, self.terms.len() - 1);
        self.terms.len() - 1
    }

    fn deriv(&mut self, r: usize, e: usize, events: &[Event], asg: &Assignment) -> Result<usize> {
        if let Some(d) = self.deriv.get(&(r, e)) {
            return Ok(*d);
        }
        let d = self.terms[r].deriv_unchecked(&events[e], asg)?;
        let d = self.id(d);
        self.deriv.insert((r, e), d);
        Ok(d)
    }
}

fn values_for(cfg: &OracleConfig, consts: impl IntoIterator<Item = Addr>) -> Vec<Addr> {
    let mut v: BTreeSet<Addr> = (0..cfg.domain_size).collect();
    v.extend(consts);
    v.into_iter().collect()
}

fn params_of(prog: &Program, asg: &Assignment) -> Assignment {
    prog.params
        .iter()
        .filter_map(|p| asg.get(p).map(|v| (p.clone(), v)))
        .collect()
}

fn result_ok(j: &Judgment, result: Option<Addr>, asg: &Assignment) -> Result<bool> {
    let ty = &j.ty.result;
    match result {
        Some(v) if ty.base != Sort::Unit => ty.instantiate(&Term::Const(v)).holds(asg),
        _ => Ok(true),
    }
}

/// Searches for an assignment of the judgment's context and a prefix from
/// the hypothesized context after which the program produces an effect
/// trace in `suffix`, with the whole run inside the judgment's own
/// context-then-effect language.
pub fn validate_witness(
    j: &Judgment,
    prog: &Program,
    alphabet: &Alphabet,
    prefix: &Sre,
    suffix: &Sre,
    cfg: &OracleConfig,
) -> Result<Validation> {
    let store = j.ctx.to_store();
    if !store.satisfiable(cfg.domain_size)? {
        return Ok(Validation::Refuted);
    }
    let full = Sre::concat(j.ty.context.clone(), j.ty.effect.clone());
    let mut consts = store.constants();
    for r in [&full, prefix, suffix] {
        consts.extend(r.constants());
    }
    let values = values_for(cfg, consts);
    let mut vars = j.ctx.vars();
    for v in full.vars().into_iter().chain(prefix.vars()).chain(suffix.vars()) {
        if !vars.contains(&v) {
            return Err(Error::Unbound(v.name().to_string()));
        }
    }
    vars.retain(|v| v.sort() != Sort::Unit);
    let Some(sigmas) = assignments(&vars, &values, &store, cfg.max_assignments)? else {
        return Ok(Validation::Exhausted);
    };
    let mut exhausted = false;
    for sigma in sigmas {
        match search_prefix(j, prog, alphabet, prefix, suffix, &full, &values, &sigma, cfg)? {
            Validation::Validated(e) => return Ok(Validation::Validated(e)),
            Validation::Exhausted => exhausted = true,
            Validation::Refuted => {}
        }
    }
    Ok(if exhausted {
        Validation::Exhausted
    } else {
        Validation::Refuted
    })
}

struct Node {
    kv: KvStore,
    pre: usize,
    full: usize,
    parent: Option<(usize, usize)>,
    depth: usize,
}

fn path(nodes: &[Node], mut i: usize, events: &[Event]) -> Trace {
    let mut out = Vec::new();
    while let Some((p, e)) = nodes[i].parent {
        out.push(events[e].clone());
        i = p;
    }
    out.reverse();
    Trace::new(out)
}

#[allow(clippy::too_many_arguments)]
fn search_prefix(
    j: &Judgment,
    prog: &Program,
    alphabet: &Alphabet,
    prefix: &Sre,
    suffix: &Sre,
    full: &Sre,
    values: &[Addr],
    sigma: &Assignment,
    cfg: &OracleConfig,
) -> Result<Validation> {
    let args = params_of(prog, sigma);
    let universe = Universe::new(alphabet.clone(), 0);
    let events = universe.events(values);
    let mut memo = Memo::default();
    let root_pre = memo.id(prefix.clone());
    let root_full = memo.id(full.clone());
    let empty_id = memo.id(Sre::Empty);
    let mut nodes = vec![Node {
        kv: KvStore::new(),
        pre: root_pre,
        full: root_full,
        parent: None,
        depth: 0,
    }];
    let mut seen: HashSet<(KvStore, usize, usize)> = HashSet::new();
    seen.insert((KvStore::new(), root_pre, root_full));
    let mut runs: HashMap<KvStore, Outcome> = HashMap::new();
    let mut queue = VecDeque::from([0usize]);
    while let Some(i) = queue.pop_front() {
        if memo.terms[nodes[i].pre].nullable() {
            let kv = nodes[i].kv.clone();
            let out = match runs.get(&kv) {
                Some(o) => o.clone(),
                None => {
                    let o = run_from(prog, &kv, &args)?;
                    runs.insert(kv, o.clone());
                    o
                }
            };
            if let Outcome::Done { produced, result } = &out {
                let rest = &memo.terms[nodes[i].full];
                if suffix.accepts(produced.events(), sigma)?
                    && rest.accepts(produced.events(), sigma)?
                    && result_ok(j, *result, sigma)?
                {
                    return Ok(Validation::Validated(Evidence {
                        assignment: sigma.clone(),
                        prefix: path(&nodes, i, &events),
                        produced: produced.clone(),
                    }));
                }
            }
        }
        if nodes[i].depth >= cfg.max_prefix_len {
            continue;
        }
        for (ei, e) in events.iter().enumerate() {
            if &*e.op == "get" && !nodes[i].kv.coherent(e) {
                continue;
            }
            let pre = memo.deriv(nodes[i].pre, ei, &events, sigma)?;
            let full = memo.deriv(nodes[i].full, ei, &events, sigma)?;
            if pre == empty_id || full == empty_id {
                continue;
            }
            let mut kv = nodes[i].kv.clone();
            kv.apply(e);
            if !seen.insert((kv.clone(), pre, full)) {
                continue;
            }
            if nodes.len() >= cfg.max_nodes {
                return Ok(Validation::Exhausted);
            }
            nodes.push(Node {
                kv,
                pre,
                full,
                parent: Some((i, ei)),
                depth: nodes[i].depth + 1,
            });
            queue.push_back(nodes.len() - 1);
        }
    }
    Ok(Validation::Refuted)
}

/// Replays `ev` and re-checks every condition `validate_witness` imposes.
pub fn check_evidence(
    j: &Judgment,
    prog: &Program,
    prefix: &Sre,
    suffix: &Sre,
    ev: &Evidence,
) -> Result<bool> {
    let sigma = &ev.assignment;
    if !j.ctx.to_store().holds(sigma)? || !prefix.accepts(ev.prefix.events(), sigma)? {
        return Ok(false);
    }
    let store = KvStore::replay(ev.prefix.events());
    if ev.prefix.events().iter().enumerate().any(|(i, e)| {
        &*e.op == "get" && !KvStore::replay(&ev.prefix.events()[..i]).coherent(e)
    }) {
        return Ok(false);
    }
    let Outcome::Done { produced, result } = run_from(prog, &store, &params_of(prog, sigma))? else {
        return Ok(false);
    };
    let full = Sre::concat(j.ty.context.clone(), j.ty.effect.clone());
    Ok(produced == ev.produced
        && suffix.accepts(produced.events(), sigma)?
        && full.accepts(ev.prefix.concat(&produced).events(), sigma)?
        && result_ok(j, result, sigma)?)
}

/// Concrete partial derivatives, written independently of the automaton
/// construction.
fn partial(r: &Sre, e: &Event, sigma: &Assignment) -> Result<Vec<Sre>> {
    Ok(match r {
        Sre::Empty | Sre::Epsilon => Vec::new(),
        Sre::Lit(p) => {
            if guards::match_concrete(p, e, sigma)? {
                vec![Sre::Epsilon]
            } else {
                Vec::new()
            }
        }
        Sre::Concat(a, b) => {
            let mut v: Vec<Sre> = partial(a, e, sigma)?
                .into_iter()
                .map(|d| Sre::concat(d, (**b).clone()))
                .collect();
            if a.nullable() {
                v.extend(partial(b, e, sigma)?);
            }
            v
        }
        Sre::Union(a, b) => {
            let mut v = partial(a, e, sigma)?;
            v.extend(partial(b, e, sigma)?);
            v
        }
        Sre::Star(a) => partial(a, e, sigma)?
            .into_iter()
            .map(|d| Sre::concat(d, r.clone()))
            .collect(),
        Sre::Inter(a, b) => {
            let pb = partial(b, e, sigma)?;
            let mut v = Vec::new();
            for x in partial(a, e, sigma)? {
                for y in &pb {
                    v.push(Sre::inter(x.clone(), y.clone()));
                }
            }
            v
        }
    })
}

/// Exhaustive search over assignments of spec variables and parameters and
/// coherent prefixes: succeeds when some prefix stops the spec in a
/// non-accepting partial-derivative state from which the program's own
/// trace is accepted.
pub fn brute_force_witness(
    prog: &Program,
    alphabet: &Alphabet,
    spec: &SpecDecl,
    cfg: &OracleConfig,
) -> Result<Option<Evidence>> {
    let mut vars = spec.var_list();
    for p in &prog.params {
        if vars.iter().any(|v| v.name() == p.name()) {
            return Err(Error::Invalid(format!("parameter `{p}` clashes with a spec variable")));
        }
        vars.push(p.clone());
    }
    vars.retain(|v| v.sort() != Sort::Unit);
    let store = spec.store();
    let mut consts = store.constants();
    consts.extend(spec.pattern.constants());
    for (_, c) in prog.calls() {
        consts.extend(c.args.iter().filter_map(|a| match a {
            Term::Const(v) => Some(*v),
            Term::Var(_) => None,
        }));
    }
    let values = values_for(cfg, consts);
    let events = Universe::new(alphabet.clone(), 0).events(&values);
    let Some(sigmas) = assignments(&vars, &values, &store, cfg.max_assignments)? else {
        return Ok(None);
    };
    for sigma in sigmas {
        if let Some(ev) = brute_one(prog, spec, &events, &sigma, cfg)? {
            return Ok(Some(ev));
        }
    }
    Ok(None)
}

fn brute_one(
    prog: &Program,
    spec: &SpecDecl,
    events: &[Event],
    sigma: &Assignment,
    cfg: &OracleConfig,
) -> Result<Option<Evidence>> {
    let args = params_of(prog, sigma);
    let mut ids: HashMap<Sre, usize> = HashMap::new();
    let mut terms: Vec<Sre> = Vec::new();
    let mut intern = |r: Sre, terms: &mut Vec<Sre>| -> usize {
        *ids.entry(r.clone()).or_insert_with(|| {
            terms.push(r);
            terms.len() - 1
        })
    };
    let root = BTreeSet::from([intern(spec.pattern.clone(), &mut terms)]);
    let mut step: HashMap<(BTreeSet<usize>, usize), BTreeSet<usize>> = HashMap::new();
    let mut verdict: HashMap<(usize, Trace), bool> = HashMap::new();
    let mut runs: HashMap<KvStore, Outcome> = HashMap::new();

    type Key = (KvStore, BTreeSet<usize>);
    let mut parents: HashMap<Key, Option<(Key, usize)>> = HashMap::new();
    let start: Key = (KvStore::new(), root);
    parents.insert(start.clone(), None);
    let mut queue = VecDeque::from([(start, 0usize)]);
    while let Some((key, depth)) = queue.pop_front() {
        let out = match runs.get(&key.0) {
            Some(o) => o.clone(),
            None => {
                let o = run_from(prog, &key.0, &args)?;
                runs.insert(key.0.clone(), o.clone());
                o
            }
        };
        if let Outcome::Done { produced, .. } = &out {
            for &t in &key.1 {
                if terms[t].nullable() {
                    continue;
                }
                let ok = match verdict.get(&(t, produced.clone())) {
                    Some(b) => *b,
                    None => {
                        let b = terms[t].accepts(produced.events(), sigma)?;
                        verdict.insert((t, produced.clone()), b);
                        b
                    }
                };
                if ok {
                    let mut prefix = Vec::new();
                    let mut cur = key.clone();
                    while let Some(Some((p, e))) = parents.get(&cur) {
                        prefix.push(events[*e].clone());
                        cur = p.clone();
                    }
                    prefix.reverse();
                    return Ok(Some(Evidence {
                        assignment: sigma.clone(),
                        prefix: Trace::new(prefix),
                        produced: produced.clone(),
                    }));
                }
            }
        }
        if depth >= cfg.max_prefix_len {
            continue;
        }
        for (ei, e) in events.iter().enumerate() {
            if &*e.op == "get" && !key.0.coherent(e) {
                continue;
            }
            let next_set = match step.get(&(key.1.clone(), ei)) {
                Some(s) => s.clone(),
                None => {
                    let mut s = BTreeSet::new();
                    for &t in &key.1 {
                        for d in partial(&terms[t].clone(), e, sigma)? {
                            s.insert(intern(d, &mut terms));
                        }
                    }
                    step.insert((key.1.clone(), ei), s.clone());
                    s
                }
            };
            if next_set.is_empty() {
                continue;
            }
            let mut kv = key.0.clone();
            kv.apply(e);
            let next: Key = (kv, next_set);
            if parents.contains_key(&next) {
                continue;
            }
            if parents.len() >= cfg.max_nodes {
                return Ok(None);
            }
            parents.insert(next.clone(), Some((key.clone(), ei)));
            queue.push_back((next, depth + 1));
        }
    }
    Ok(None)
}
