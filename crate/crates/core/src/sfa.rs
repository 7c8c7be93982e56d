//! Symbolic finite automata: compilation from regexes, products, emptiness
//! with witness extraction, and splitting at a pivot state.

use std::collections::{BTreeSet, HashMap, HashSet, VecDeque};
use std::fmt::{self, Write as _};

use crate::error::Result;
use crate::guards::{self, Assignment, ConstraintStore, Event, EventPattern, Universe, Var};
use crate::sre::{Sre, Trace};

/// Conjunction of event patterns labelling one edge. Empty means `.`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Guard(Vec<EventPattern>);

impl Guard {
    pub fn single(p: EventPattern) -> Guard {
        Guard::from_patterns(vec![p])
    }

    fn from_patterns(mut ps: Vec<EventPattern>) -> Guard {
        ps.retain(|p| *p != EventPattern::Any);
        ps.sort();
        ps.dedup();
        Guard(ps)
    }

    pub fn patterns(&self) -> &[EventPattern] {
        &self.0
    }

    /// Conjunction; `None` when the two guards obviously share no event.
    pub fn and(&self, other: &Guard) -> Option<Guard> {
        let g = Guard::from_patterns(self.0.iter().chain(&other.0).cloned().collect());
        let mut ops = g.0.iter().filter_map(|p| match p {
            EventPattern::Lit(l) => Some(&l.op),
            _ => None,
        });
        if let Some(first) = ops.next() {
            if ops.any(|o| o != first) {
                return None;
            }
        }
        let contradicts = g.0.iter().any(|p| match p {
            EventPattern::Lit(l) => g.0.contains(&EventPattern::Not(l.clone())),
            _ => false,
        });
        (!contradicts).then_some(g)
    }

    pub fn matches(&self, e: &Event, asg: &Assignment) -> Result<bool> {
        for p in &self.0 {
            if !guards::match_concrete(p, e, asg)? {
                return Ok(false);
            }
        }
        Ok(true)
    }

    /// Abduced extensions of `store` under which the guard admits an event.
    pub fn branches(&self, store: &ConstraintStore, universe: &Universe) -> Vec<ConstraintStore> {
        if self.0.is_empty() {
            return guards::overlap(&[&EventPattern::Any], store, universe);
        }
        let refs: Vec<&EventPattern> = self.0.iter().collect();
        guards::overlap(&refs, store, universe)
    }

    pub fn to_sre(&self) -> Sre {
        self.0
            .iter()
            .map(|p| Sre::Lit(p.clone()))
            .reduce(Sre::inter)
            .unwrap_or_else(Sre::any)
    }

    fn vars(&self) -> BTreeSet<Var> {
        self.0.iter().flat_map(EventPattern::vars).collect()
    }
}

impl fmt::Display for Guard {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return f.write_str(".");
        }
        let parts: Vec<String> = self.0.iter().map(ToString::to_string).collect();
        f.write_str(&parts.join(" & "))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Edge {
    pub src: usize,
    pub guard: Guard,
    /// Atoms over the automaton's variables that this edge assumes.
    pub atoms: ConstraintStore,
    pub dst: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sfa {
    num_states: usize,
    initial: usize,
    accepting: BTreeSet<usize>,
    edges: Vec<Edge>,
    vars: Vec<Var>,
    labels: Vec<String>,
}

/// A concrete accepted trace with the assignment it was found under.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Witness {
    pub trace: Trace,
    pub assignment: Assignment,
}

/// The automaton cut at `pivot`: traces reaching the pivot, and traces
/// leaving it towards acceptance.
#[derive(Debug, Clone)]
pub struct Split {
    pub prefix: Sfa,
    pub suffix: Sfa,
    pub pivot: usize,
}

impl Split {
    pub fn prefix_sre(&self) -> Sre {
        self.prefix.to_sre()
    }

    pub fn suffix_sre(&self) -> Sre {
        self.suffix.to_sre()
    }
}

/// Antimirov linear form: the (guard, partial derivative) pairs of `r`.
fn linear_form(r: &Sre) -> Vec<(Guard, Sre)> {
    let mut out: Vec<(Guard, Sre)> = match r {
        Sre::Empty | Sre::Epsilon => Vec::new(),
        Sre::Lit(p) => vec![(Guard::single(p.clone()), Sre::Epsilon)],
        Sre::Concat(a, b) => {
            let mut v: Vec<_> = linear_form(a)
                .into_iter()
                .map(|(g, d)| (g, Sre::concat(d, (**b).clone())))
                .collect();
            if a.nullable() {
                v.extend(linear_form(b));
            }
            v
        }
        Sre::Union(a, b) => {
            let mut v = linear_form(a);
            v.extend(linear_form(b));
            v
        }
        Sre::Star(a) => linear_form(a)
            .into_iter()
            .map(|(g, d)| (g, Sre::concat(d, r.clone())))
            .collect(),
        Sre::Inter(a, b) => {
            let lb = linear_form(b);
            let mut v = Vec::new();
            for (ga, da) in linear_form(a) {
                for (gb, db) in &lb {
                    if let Some(g) = ga.and(gb) {
                        v.push((g, Sre::inter(da.clone(), db.clone())));
                    }
                }
            }
            v
        }
    };
    out.retain(|(_, d)| *d != Sre::Empty);
    let mut seen = HashSet::new();
    out.retain(|pair| seen.insert(pair.clone()));
    out
}

impl Sfa {
    /// Partial-derivative construction; one state per derivative term.
    pub fn compile(r: &Sre) -> Sfa {
        let mut terms: Vec<Sre> = vec![r.clone()];
        let mut index: HashMap<Sre, usize> = HashMap::from([(r.clone(), 0)]);
        let mut edges = Vec::new();
        let mut i = 0;
        while i < terms.len() {
            for (guard, d) in linear_form(&terms[i].clone()) {
                let dst = *index.entry(d.clone()).or_insert_with(|| {
                    terms.push(d);
                    terms.len() - 1
                });
                edges.push(Edge {
                    src: i,
                    guard,
                    atoms: ConstraintStore::new(),
                    dst,
                });
            }
            i += 1;
        }
        let accepting = terms
            .iter()
            .enumerate()
            .filter(|(_, t)| t.nullable())
            .map(|(i, _)| i)
            .collect();
        Sfa {
            num_states: terms.len(),
            initial: 0,
            accepting,
            edges,
            vars: r.vars().into_iter().collect(),
            labels: terms.iter().map(ToString::to_string).collect(),
        }
        .trim()
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn initial(&self) -> usize {
        self.initial
    }

    pub fn accepting(&self) -> &BTreeSet<usize> {
        &self.accepting
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    pub fn is_trivially_empty(&self) -> bool {
        self.accepting.is_empty()
    }

    fn out_edges(&self, s: usize) -> impl Iterator<Item = (usize, &Edge)> {
        self.edges.iter().enumerate().filter(move |(_, e)| e.src == s)
    }

    /// Keeps the states lying on some initial-to-accepting path.
    fn trim(self) -> Sfa {
        let mut fwd = BTreeSet::from([self.initial]);
        let mut stack = vec![self.initial];
        while let Some(s) = stack.pop() {
            for (_, e) in self.out_edges(s) {
                if fwd.insert(e.dst) {
                    stack.push(e.dst);
                }
            }
        }
        let mut bwd: BTreeSet<usize> = self.accepting.clone();
        let mut stack: Vec<usize> = bwd.iter().copied().collect();
        while let Some(s) = stack.pop() {
            for e in self.edges.iter().filter(|e| e.dst == s) {
                if bwd.insert(e.src) {
                    stack.push(e.src);
                }
            }
        }
        let keep: Vec<usize> = fwd.intersection(&bwd).copied().collect();
        if !keep.contains(&self.initial) {
            return Sfa {
                num_states: 1,
                initial: 0,
                accepting: BTreeSet::new(),
                edges: Vec::new(),
                vars: self.vars,
                labels: vec![self.labels[self.initial].clone()],
            };
        }
        let renum: HashMap<usize, usize> = keep.iter().enumerate().map(|(n, o)| (*o, n)).collect();
        Sfa {
            num_states: keep.len(),
            initial: renum[&self.initial],
            accepting: self
                .accepting
                .iter()
                .filter_map(|s| renum.get(s).copied())
                .collect(),
            edges: self
                .edges
                .iter()
                .filter(|e| renum.contains_key(&e.src) && renum.contains_key(&e.dst))
                .map(|e| Edge {
                    src: renum[&e.src],
                    guard: e.guard.clone(),
                    atoms: e.atoms.clone(),
                    dst: renum[&e.dst],
                })
                .collect(),
            vars: self.vars,
            labels: keep.iter().map(|s| self.labels[*s].clone()).collect(),
        }
    }

    /// Product automaton. Each pair of edges is refined into one edge per
    /// abduced branch of their joint guard.
    pub fn intersect(&self, other: &Sfa, universe: &Universe) -> Sfa {
        let start = (self.initial, other.initial);
        let mut states = vec![start];
        let mut index = HashMap::from([(start, 0usize)]);
        let mut edges = Vec::new();
        let mut i = 0;
        while i < states.len() {
            let (p, q) = states[i];
            for (_, ea) in self.out_edges(p) {
                for (_, eb) in other.out_edges(q) {
                    let Some(guard) = ea.guard.and(&eb.guard) else {
                        continue;
                    };
                    let local = ea.atoms.union(&eb.atoms);
                    let branches = guard.branches(&local, universe);
                    if branches.is_empty() {
                        continue;
                    }
                    let key = (ea.dst, eb.dst);
                    let dst = *index.entry(key).or_insert_with(|| {
                        states.push(key);
                        states.len() - 1
                    });
                    for atoms in branches {
                        edges.push(Edge {
                            src: i,
                            guard: guard.clone(),
                            atoms,
                            dst,
                        });
                    }
                }
            }
            i += 1;
        }
        let accepting = states
            .iter()
            .enumerate()
            .filter(|(_, (p, q))| self.accepting.contains(p) && other.accepting.contains(q))
            .map(|(i, _)| i)
            .collect();
        let vars: BTreeSet<Var> = self.vars.iter().chain(&other.vars).cloned().collect();
        Sfa {
            num_states: states.len(),
            initial: 0,
            accepting,
            edges,
            vars: vars.into_iter().collect(),
            labels: states
                .iter()
                .map(|(p, q)| format!("({} & {})", self.labels[*p], other.labels[*q]))
                .collect(),
        }
        .trim()
    }

    /// Concrete run under a full assignment.
    pub fn accepts(&self, trace: &[Event], asg: &Assignment) -> Result<bool> {
        let mut current = BTreeSet::from([self.initial]);
        for e in trace {
            let mut next = BTreeSet::new();
            for &s in &current {
                for (_, edge) in self.out_edges(s) {
                    if edge.atoms.holds(asg)? && edge.guard.matches(e, asg)? {
                        next.insert(edge.dst);
                    }
                }
            }
            if next.is_empty() {
                return Ok(false);
            }
            current = next;
        }
        Ok(current.iter().any(|s| self.accepting.contains(s)))
    }

    /// States reachable from the initial state by `trace`.
    pub fn run(&self, trace: &[Event], asg: &Assignment) -> Result<BTreeSet<usize>> {
        let mut current = BTreeSet::from([self.initial]);
        for e in trace {
            let mut next = BTreeSet::new();
            for &s in &current {
                for (_, edge) in self.out_edges(s) {
                    if edge.atoms.holds(asg)? && edge.guard.matches(e, asg)? {
                        next.insert(edge.dst);
                    }
                }
            }
            current = next;
        }
        Ok(current)
    }

    /// Default bound on witness length: `|states| × (d² + d)`.
    pub fn search_bound(&self, universe: &Universe) -> usize {
        let d = universe.domain_size as usize;
        self.num_states.max(1) * (d * d + d)
    }

    /// `None` when no trace is accepted under any extension of `store`
    /// within the default bound; otherwise a shortest concrete witness.
    pub fn is_empty(&self, store: &ConstraintStore, universe: &Universe) -> Option<Witness> {
        self.sample_trace(store, universe, self.search_bound(universe))
    }

    /// A shortest accepted concrete trace of length at most `max_len`.
    pub fn sample_trace(
        &self,
        store: &ConstraintStore,
        universe: &Universe,
        max_len: usize,
    ) -> Option<Witness> {
        let mut found = None;
        self.search(store, universe, max_len, |nodes, idx| {
            found = Some(self.concretize(nodes, idx, universe));
            false
        });
        found.flatten()
    }

    /// Distinct stores under which some accepting path exists, in
    /// breadth-first discovery order, at most `limit` of them.
    pub fn accepting_stores(
        &self,
        store: &ConstraintStore,
        universe: &Universe,
        max_len: usize,
        limit: usize,
    ) -> Vec<ConstraintStore> {
        let mut out: Vec<ConstraintStore> = Vec::new();
        self.search(store, universe, max_len, |nodes, idx| {
            let s = &nodes[idx].store;
            if !out.contains(s) {
                out.push(s.clone());
            }
            out.len() < limit
        });
        out
    }

    /// Breadth-first search over (state, accumulated store) pairs. `visit`
    /// is called on every node at an accepting state and returns whether to
    /// keep searching.
    fn search(
        &self,
        store: &ConstraintStore,
        universe: &Universe,
        max_len: usize,
        mut visit: impl FnMut(&[Node], usize) -> bool,
    ) {
        if self.accepting.is_empty() || !matches!(store.satisfiable(universe.domain_size), Ok(true))
        {
            return;
        }
        let mut nodes = vec![Node {
            state: self.initial,
            store: store.clone(),
            parent: None,
            depth: 0,
        }];
        let mut seen: HashSet<(usize, ConstraintStore)> =
            HashSet::from([(self.initial, store.clone())]);
        let mut queue = VecDeque::from([0usize]);
        while let Some(idx) = queue.pop_front() {
            if self.accepting.contains(&nodes[idx].state) && !visit(&nodes, idx) {
                return;
            }
            if nodes[idx].depth >= max_len {
                continue;
            }
            let (state, depth) = (nodes[idx].state, nodes[idx].depth);
            let base = nodes[idx].store.clone();
            for (eidx, edge) in self.out_edges(state) {
                let local = base.union(&edge.atoms);
                for branch in edge.guard.branches(&local, universe) {
                    let key = (edge.dst, branch);
                    if seen.contains(&key) {
                        continue;
                    }
                    seen.insert(key.clone());
                    nodes.push(Node {
                        state: key.0,
                        store: key.1,
                        parent: Some((idx, eidx)),
                        depth: depth + 1,
                    });
                    queue.push_back(nodes.len() - 1);
                }
            }
        }
    }

    fn concretize(&self, nodes: &[Node], idx: usize, universe: &Universe) -> Option<Witness> {
        let store = &nodes[idx].store;
        let mut asg = store.model(universe.domain_size).ok()??;
        let mut path = Vec::new();
        let mut cur = idx;
        while let Some((parent, eidx)) = nodes[cur].parent {
            path.push(eidx);
            cur = parent;
        }
        path.reverse();
        let mut needed: BTreeSet<Var> = self.vars.iter().cloned().collect();
        for &e in &path {
            needed.extend(self.edges[e].guard.vars());
            needed.extend(self.edges[e].atoms.vars());
        }
        for v in needed {
            if asg.get(&v).is_none() {
                asg.insert(v, 0);
            }
        }
        let mut consts = store.constants();
        for &e in &path {
            consts.extend(self.edges[e].guard.to_sre().constants());
        }
        let candidates = universe.events(&universe.values(consts));
        let mut trace = Vec::new();
        for &e in &path {
            let edge = &self.edges[e];
            let ev = candidates.iter().find(|ev| {
                edge.atoms.holds(&asg).unwrap_or(false)
                    && edge.guard.matches(ev, &asg).unwrap_or(false)
            });
            debug_assert!(ev.is_some(), "projected branch admits no event");
            trace.push(ev?.clone());
        }
        Some(Witness {
            trace: Trace::new(trace),
            assignment: asg,
        })
    }

    /// One split per non-accepting state, pivots ordered by breadth-first
    /// distance from the initial state.
    pub fn enumerate_splits(&self) -> Vec<Split> {
        if self.accepting.is_empty() {
            return Vec::new();
        }
        let mut order = vec![self.initial];
        let mut seen = BTreeSet::from([self.initial]);
        let mut i = 0;
        while i < order.len() {
            for (_, e) in self.out_edges(order[i]) {
                if seen.insert(e.dst) {
                    order.push(e.dst);
                }
            }
            i += 1;
        }
        order
            .into_iter()
            .filter(|s| !self.accepting.contains(s))
            .map(|pivot| Split {
                prefix: Sfa {
                    accepting: BTreeSet::from([pivot]),
                    ..self.clone()
                }
                .trim(),
                suffix: Sfa {
                    initial: pivot,
                    ..self.clone()
                }
                .trim(),
                pivot,
            })
            .collect()
    }

    /// Regex for the language, by state elimination in state order. Edge
    /// atoms are dropped: the branches of one guard jointly cover it.
    pub fn to_sre(&self) -> Sre {
        if self.accepting.is_empty() {
            return Sre::Empty;
        }
        let n = self.num_states;
        let (start, fin) = (n, n + 1);
        let mut m: Vec<Vec<Sre>> = vec![vec![Sre::Empty; n + 2]; n + 2];
        m[start][self.initial] = Sre::Epsilon;
        for &a in &self.accepting {
            m[a][fin] = Sre::Epsilon;
        }
        let mut seen = HashSet::new();
        for e in &self.edges {
            if seen.insert((e.src, e.guard.clone(), e.dst)) {
                m[e.src][e.dst] = Sre::union(m[e.src][e.dst].clone(), e.guard.to_sre());
            }
        }
        let mut alive: Vec<usize> = (0..n + 2).collect();
        for k in 0..n {
            alive.retain(|s| *s != k);
            let loop_k = Sre::star(m[k][k].clone());
            for &i in &alive {
                if m[i][k] == Sre::Empty {
                    continue;
                }
                for &j in &alive {
                    if m[k][j] == Sre::Empty {
                        continue;
                    }
                    let via = Sre::concat(
                        m[i][k].clone(),
                        Sre::concat(loop_k.clone(), m[k][j].clone()),
                    );
                    m[i][j] = Sre::union(m[i][j].clone(), via);
                }
            }
        }
        m[start][fin].clone()
    }

    /// Graphviz rendering for debugging.
    pub fn to_dot(&self, name: &str) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "digraph \"{}\" {{", name.replace('"', "'"));
        let _ = writeln!(out, "  rankdir=LR;");
        let _ = writeln!(out, "  init [shape=point];");
        for s in 0..self.num_states {
            let shape = if self.accepting.contains(&s) {
                "doublecircle"
            } else {
                "circle"
            };
            let tip = self.labels.get(s).map(|l| l.replace('"', "'")).unwrap_or_default();
            let _ = writeln!(out, "  q{s} [shape={shape}, tooltip=\"{tip}\"];");
        }
        let _ = writeln!(out, "  init -> q{};", self.initial);
        for e in &self.edges {
            let mut label = e.guard.to_string();
            if !e.atoms.is_empty() {
                let _ = write!(label, " / {}", e.atoms);
            }
            let _ = writeln!(
                out,
                "  q{} -> q{} [label=\"{}\"];",
                e.src,
                e.dst,
                label.replace('"', "'")
            );
        }
        out.push_str("}\n");
        out
    }
}

#[derive(Debug)]
struct Node {
    state: usize,
    store: ConstraintStore,
    parent: Option<(usize, usize)>,
    depth: usize,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::guards::{Atom, Term};
    use crate::sre::tests::{sre, BAD_LINK, LINK_TO, NOT_UNIQUE};

    #[test]
    fn literal_compiles_to_two_states() {
        let a = Sfa::compile(&sre("<put a b>"));
        assert_eq!(a.num_states(), 2);
        assert_eq!(a.edges().len(), 1);
    }

    #[test]
    fn link_to_shape() {
        let a = Sfa::compile(&sre(LINK_TO));
        assert_eq!(a.num_states(), 2);
        assert_eq!(a.accepting(), &BTreeSet::from([1]));
        let show: Vec<(usize, String, usize)> = a
            .edges()
            .iter()
            .map(|e| (e.src, e.guard.to_string(), e.dst))
            .collect();
        assert_eq!(
            show,
            vec![
                (0, ".".to_string(), 0),
                (0, "<put a b>".to_string(), 1),
                (1, "~<put a _>".to_string(), 1)
            ]
        );
    }

    #[test]
    fn empty_language() {
        let a = Sfa::compile(&Sre::Empty);
        assert!(a.is_trivially_empty());
        assert!(a.is_empty(&ConstraintStore::new(), &Universe::default()).is_none());
        assert!(a
            .sample_trace(&ConstraintStore::new(), &Universe::default(), 6)
            .is_none());
        assert!(a.enumerate_splits().is_empty());
    }

    #[test]
    fn witness_under_pinned_store() {
        let a = Sfa::compile(&sre(LINK_TO));
        let store = ConstraintStore::from_atoms([
            Atom::eq(Term::var("a"), Term::Const(1)),
            Atom::eq(Term::var("b"), Term::Const(2)),
        ]);
        let w = a.is_empty(&store, &Universe::default()).unwrap();
        assert_eq!(w.trace.to_string(), "<put 1 2>");
    }

    #[test]
    fn shortest_violation_sample() {
        let a = Sfa::compile(&sre(NOT_UNIQUE));
        let w = a
            .sample_trace(&ConstraintStore::new(), &Universe::default(), 6)
            .unwrap();
        let ev = w.trace.events();
        assert_eq!(ev.len(), 2);
        assert_eq!(ev[0].args[1], ev[1].args[1]);
        assert_ne!(ev[0].args[0], ev[1].args[0]);
        assert!(sre(NOT_UNIQUE).accepts(ev, &w.assignment).unwrap());
    }

    #[test]
    fn split_recovers_context_and_effect() {
        let a = Sfa::compile(&sre(NOT_UNIQUE));
        let splits = a.enumerate_splits();
        assert_eq!(splits.len(), 2);
        assert_eq!(splits[0].suffix_sre(), sre(NOT_UNIQUE));
        assert_eq!(splits[1].prefix_sre(), sre(LINK_TO));
        assert_eq!(splits[1].suffix_sre(), sre(BAD_LINK));
        assert!(splits.iter().all(|s| !s.suffix.accepts(&[], &Assignment::new()).unwrap()));
    }

    #[test]
    fn product_of_contexts_is_nonempty() {
        let u = Universe::default();
        let p = Sfa::compile(&sre(LINK_TO)).intersect(&Sfa::compile(&sre(".* <put n0 n1> (~<put n0 _>)*")), &u);
        let w = p.is_empty(&ConstraintStore::new(), &u).unwrap();
        assert!(p.accepts(w.trace.events(), &w.assignment).unwrap());
        let store = ConstraintStore::from_atoms([Atom::eq(Term::var("n1"), Term::var("a"))]);
        let w = p.is_empty(&store, &u).unwrap();
        assert!(store.holds(&w.assignment).unwrap());
        assert!(sre(LINK_TO).accepts(w.trace.events(), &w.assignment).unwrap());
    }

    #[test]
    fn product_edges_carry_abduced_atoms() {
        let u = Universe::default();
        let p = Sfa::compile(&sre(LINK_TO))
            .intersect(&Sfa::compile(&sre(".* <put n0 n1> (~<put n0 _>)*")), &u);
        let aligned = ConstraintStore::from_atoms([
            Atom::eq(Term::var("n0"), Term::var("a")),
            Atom::eq(Term::var("n1"), Term::var("b")),
        ]);
        assert!(p.edges().iter().any(|e| e.atoms == aligned));
    }

    #[test]
    fn dot_export_mentions_every_state() {
        let a = Sfa::compile(&sre(NOT_UNIQUE));
        let dot = a.to_dot("spec");
        for s in 0..a.num_states() {
            assert!(dot.contains(&format!("q{s} [")));
        }
    }
}
