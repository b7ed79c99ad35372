//! Sparsity graphs, chordal extension and clique plans.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::poly::{Poly, TermKey};
use crate::pop::{Field, Pop};

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct SparsityGraph {
    pub n: usize,
    pub edges: BTreeSet<(usize, usize)>,
}

impl SparsityGraph {
    pub fn empty(n: usize) -> Self {
        SparsityGraph { n, edges: BTreeSet::new() }
    }

    pub fn add_edge(&mut self, i: usize, j: usize) {
        if i != j {
            self.edges.insert((i.min(j), i.max(j)));
        }
    }

    pub fn add_clique(&mut self, vars: &BTreeSet<usize>) {
        let v: Vec<usize> = vars.iter().copied().collect();
        for a in 0..v.len() {
            for b in a + 1..v.len() {
                self.add_edge(v[a], v[b]);
            }
        }
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.edges.contains(&(i.min(j), i.max(j)))
    }

    pub fn adjacency(&self) -> Vec<BTreeSet<usize>> {
        let mut adj = vec![BTreeSet::new(); self.n];
        for &(i, j) in &self.edges {
            adj[i].insert(j);
            adj[j].insert(i);
        }
        adj
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CliquePlan {
    pub cliques: Vec<Vec<usize>>,
    /// Elimination ordering that produced the chordal extension.
    pub order: Vec<usize>,
    /// High-order constraint → clique.
    pub assignment: BTreeMap<usize, usize>,
    /// Relaxation order per constraint.
    pub orders: Vec<u32>,
    /// Moment order per clique.
    pub clique_orders: Vec<u32>,
}

fn key_vars(k: &TermKey) -> BTreeSet<usize> {
    k.vars()
}

/// Monomial sparsity plus the correlative sparsity of each high-order constraint.
pub fn build_graphs(pop: &Pop, high_order: &BTreeSet<usize>) -> SparsityGraph {
    let mut g = SparsityGraph::empty(pop.n);
    let add_mono = |p: &Poly, g: &mut SparsityGraph| {
        for k in p.terms.keys() {
            g.add_clique(&key_vars(k));
        }
    };
    add_mono(&pop.objective, &mut g);
    for s in &pop.squares {
        add_mono(&s.poly, &mut g);
    }
    for c in &pop.constraints {
        add_mono(&c.poly, &mut g);
        if let Some(m) = &c.modulus {
            add_mono(&m.h, &mut g);
        }
    }
    for &i in high_order {
        g.add_clique(&pop.constraints[i].poly.vars());
    }
    g
}

/// Minimum-degree elimination (lowest index on ties); maximal cliques of the
/// filled graph, ordered to satisfy running intersection.
pub fn chordal_cliques(g: &SparsityGraph) -> CliquePlan {
    let mut adj = g.adjacency();
    let mut alive: BTreeSet<usize> = (0..g.n).collect();
    let mut order = Vec::with_capacity(g.n);
    let mut candidates: Vec<BTreeSet<usize>> = Vec::new();
    while !alive.is_empty() {
        let v = *alive
            .iter()
            .min_by_key(|&&v| (adj[v].len(), v))
            .expect("nonempty");
        let nb: Vec<usize> = adj[v].iter().copied().collect();
        let mut cand: BTreeSet<usize> = nb.iter().copied().collect();
        cand.insert(v);
        candidates.push(cand);
        for a in 0..nb.len() {
            for b in a + 1..nb.len() {
                adj[nb[a]].insert(nb[b]);
                adj[nb[b]].insert(nb[a]);
            }
        }
        for &u in &nb {
            adj[u].remove(&v);
        }
        adj[v].clear();
        alive.remove(&v);
        order.push(v);
    }
    let mut maximal: Vec<BTreeSet<usize>> = Vec::new();
    for c in &candidates {
        if candidates.iter().any(|o| o.len() > c.len() && c.is_subset(o)) {
            continue;
        }
        if !maximal.contains(c) {
            maximal.push(c.clone());
        }
    }
    let cliques = running_intersection_order(maximal);
    CliquePlan {
        cliques: cliques.into_iter().map(|c| c.into_iter().collect()).collect(),
        order,
        assignment: BTreeMap::new(),
        orders: vec![],
        clique_orders: vec![],
    }
}

/// Order cliques along a maximum-weight spanning forest of the clique
/// intersection graph (Prim from the clique holding the lowest vertex).
fn running_intersection_order(mut cliques: Vec<BTreeSet<usize>>) -> Vec<BTreeSet<usize>> {
    cliques.sort_by(|a, b| a.iter().next().cmp(&b.iter().next()).then(b.len().cmp(&a.len())));
    let p = cliques.len();
    let mut placed = vec![false; p];
    let mut out = Vec::with_capacity(p);
    while out.len() < p {
        let root = (0..p).find(|&k| !placed[k]).expect("unplaced clique");
        placed[root] = true;
        out.push(cliques[root].clone());
        let mut component = vec![root];
        loop {
            let mut best: Option<(usize, usize)> = None;
            for &a in &component {
                for b in 0..p {
                    if placed[b] {
                        continue;
                    }
                    let w = cliques[a].intersection(&cliques[b]).count();
                    if w > 0 && best.is_none_or(|(bw, bb)| w > bw || (w == bw && b < bb)) {
                        best = Some((w, b));
                    }
                }
            }
            match best {
                Some((_, b)) => {
                    placed[b] = true;
                    component.push(b);
                    out.push(cliques[b].clone());
                }
                None => break,
            }
        }
    }
    out
}

/// Check the running-intersection property for the given clique order.
pub fn has_running_intersection(cliques: &[Vec<usize>]) -> bool {
    for k in 1..cliques.len() {
        let ck: BTreeSet<usize> = cliques[k].iter().copied().collect();
        let union: BTreeSet<usize> = cliques[..k].iter().flatten().copied().collect();
        let inter: BTreeSet<usize> = ck.intersection(&union).copied().collect();
        if inter.is_empty() {
            continue;
        }
        if !cliques[..k].iter().any(|c| inter.iter().all(|v| c.contains(v))) {
            return false;
        }
    }
    true
}

/// Smallest clique (then lowest index) containing `vars`.
pub fn containing_clique(cliques: &[Vec<usize>], vars: &BTreeSet<usize>) -> Option<usize> {
    cliques
        .iter()
        .enumerate()
        .filter(|(_, c)| vars.iter().all(|v| c.contains(v)))
        .min_by_key(|(k, c)| (c.len(), *k))
        .map(|(k, _)| k)
}

/// Assign high-order constraints to cliques and fix per-clique orders.
///
/// A clique's order is the largest `d_i` among its assigned constraints, and
/// at least large enough to index every objective or scalar-row monomial whose
/// support it is the smallest container of (and at least 1).
pub fn assign_constraints(
    plan: &CliquePlan,
    pop: &Pop,
    high_order: &BTreeSet<usize>,
    orders: &[u32],
) -> Result<CliquePlan> {
    let mut out = plan.clone();
    out.orders = orders.to_vec();
    out.assignment.clear();
    out.clique_orders = vec![1; plan.cliques.len()];
    for &i in high_order {
        let vars = pop.constraints[i].poly.vars();
        let k = containing_clique(&plan.cliques, &vars).ok_or(Error::NoContainingClique(i))?;
        out.assignment.insert(i, k);
        out.clique_orders[k] = out.clique_orders[k].max(orders[i]);
    }
    let mut need = |p: &Poly| -> Result<()> {
        for key in p.terms.keys() {
            let h = match pop.field {
                Field::Complex => key.alpha.degree().max(key.beta.degree()),
                Field::Real => (key.alpha.degree() + key.beta.degree()).div_ceil(2),
            };
            let k = containing_clique(&plan.cliques, &key.vars())
                .ok_or_else(|| Error::UnindexedMoment(format!("{key:?}")))?;
            out.clique_orders[k] = out.clique_orders[k].max(h);
        }
        Ok(())
    };
    need(&pop.objective)?;
    for (i, c) in pop.constraints.iter().enumerate() {
        if high_order.contains(&i) {
            continue;
        }
        match &c.modulus {
            // Schur-complement block: only the moments of h are needed.
            Some(m) => need(&m.h)?,
            None => need(&c.poly)?,
        }
    }
    for s in &pop.squares {
        need(&s.poly)?;
    }
    Ok(out)
}

impl CliquePlan {
    /// Single clique over all variables at order `d` for every constraint.
    pub fn dense(pop: &Pop, d: u32) -> Result<CliquePlan> {
        let m = pop.constraints.len();
        for i in 0..m {
            if d < pop.k_constraint(i) {
                return Err(Error::OrderTooLow(i));
            }
        }
        let high: BTreeMap<usize, usize> =
            (0..m).filter(|&i| d > pop.k_constraint(i)).map(|i| (i, 0)).collect();
        Ok(CliquePlan {
            cliques: vec![(0..pop.n).collect()],
            order: (0..pop.n).collect(),
            assignment: high,
            orders: vec![d; m],
            clique_orders: vec![d],
        })
    }

    /// Sparse plan for the given per-constraint orders; constraints with
    /// `d_i > k_i` are high-order.
    pub fn sparse(pop: &Pop, orders: &[u32]) -> Result<CliquePlan> {
        for (i, &d) in orders.iter().enumerate() {
            if d < pop.k_constraint(i) {
                return Err(Error::OrderTooLow(i));
            }
        }
        let high = high_order_set(pop, orders);
        let g = build_graphs(pop, &high);
        let plan = chordal_cliques(&g);
        assign_constraints(&plan, pop, &high, orders)
    }

    pub fn is_high_order(&self, i: usize) -> bool {
        self.assignment.contains_key(&i)
    }

    pub fn clique_of_var(&self, v: usize) -> Option<usize> {
        self.cliques.iter().position(|c| c.contains(&v))
    }
}

pub fn high_order_set(pop: &Pop, orders: &[u32]) -> BTreeSet<usize> {
    (0..orders.len()).filter(|&i| orders[i] > pop.k_constraint(i)).collect()
}

#[derive(Serialize)]
pub struct AnalyzeReport {
    pub edges: Vec<[usize; 2]>,
    pub cliques: Vec<Vec<usize>>,
    pub assignment: BTreeMap<String, usize>,
    pub clique_orders: Vec<u32>,
}

pub fn analyze(pop: &Pop, plan: &CliquePlan) -> AnalyzeReport {
    let high: BTreeSet<usize> = plan.assignment.keys().copied().collect();
    let g = build_graphs(pop, &high);
    AnalyzeReport {
        edges: g.edges.iter().map(|&(i, j)| [i, j]).collect(),
        cliques: plan.cliques.clone(),
        assignment: plan.assignment.iter().map(|(i, k)| (i.to_string(), *k)).collect(),
        clique_orders: plan.clique_orders.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn graph(n: usize, edges: &[(usize, usize)]) -> SparsityGraph {
        let mut g = SparsityGraph::empty(n);
        for &(i, j) in edges {
            g.add_edge(i, j);
        }
        g
    }

    fn sets(cl: &[Vec<usize>]) -> BTreeSet<Vec<usize>> {
        cl.iter().cloned().collect()
    }

    #[test]
    fn complete_graph_single_clique() {
        let g = graph(4, &[(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]);
        assert_eq!(chordal_cliques(&g).cliques, vec![vec![0, 1, 2, 3]]);
    }

    #[test]
    fn path_two_cliques() {
        let g = graph(3, &[(0, 1), (1, 2)]);
        let p = chordal_cliques(&g);
        assert_eq!(sets(&p.cliques), sets(&[vec![0, 1], vec![1, 2]]));
        assert!(has_running_intersection(&p.cliques));
    }

    #[test]
    fn isolated_vertices_become_singletons() {
        let g = graph(3, &[]);
        assert_eq!(sets(&chordal_cliques(&g).cliques), sets(&[vec![0], vec![1], vec![2]]));
    }

    #[test]
    fn tie_break_prefers_fewest_variables() {
        let cl = vec![vec![0, 1, 2], vec![0, 2]];
        let vars: BTreeSet<usize> = [0, 2].into_iter().collect();
        assert_eq!(containing_clique(&cl, &vars), Some(1));
    }

    #[test]
    fn cycle_gets_chord() {
        let g = graph(4, &[(0, 1), (1, 2), (2, 3), (0, 3)]);
        let p = chordal_cliques(&g);
        assert_eq!(p.cliques.len(), 2);
        assert!(p.cliques.iter().all(|c| c.len() == 3));
        assert!(has_running_intersection(&p.cliques));
    }

    use proptest::prelude::*;

    fn random_graph(n: usize, mask: &[bool]) -> SparsityGraph {
        let mut g = SparsityGraph::empty(n);
        let mut it = mask.iter().cycle();
        for i in 0..n {
            for j in i + 1..n {
                if *it.next().unwrap() {
                    g.add_edge(i, j);
                }
            }
        }
        g
    }

    fn is_clique(g: &SparsityGraph, vs: &[usize]) -> bool {
        vs.iter().enumerate().all(|(a, &u)| vs[a + 1..].iter().all(|&v| g.has_edge(u, v)))
    }

    proptest! {
        #[test]
        fn chordal_extension_properties(n in 1usize..=8, mask in prop::collection::vec(prop::bool::weighted(0.35), 28)) {
            let g = random_graph(n, &mask);
            let plan = chordal_cliques(&g);

            // filled graph: union of the output cliques
            let mut fill = SparsityGraph::empty(n);
            for c in &plan.cliques {
                fill.add_clique(&c.iter().copied().collect());
            }
            for i in 0..n {
                for j in i + 1..n {
                    prop_assert!(!g.has_edge(i, j) || fill.has_edge(i, j));
                }
            }

            // perfect elimination ordering: later neighbours form a clique
            prop_assert_eq!(plan.order.len(), n);
            for (pos, &v) in plan.order.iter().enumerate() {
                let later: Vec<usize> = plan.order[pos + 1..].iter().copied().filter(|&u| fill.has_edge(u, v)).collect();
                prop_assert!(is_clique(&fill, &later));
            }

            // maximal cliques of the input are covered
            for bits in 1u32..(1 << n) {
                let vs: Vec<usize> = (0..n).filter(|&v| bits >> v & 1 == 1).collect();
                if is_clique(&g, &vs) {
                    prop_assert!(plan.cliques.iter().any(|c| vs.iter().all(|v| c.contains(v))));
                }
            }
            prop_assert!(has_running_intersection(&plan.cliques));
            let covered: BTreeSet<usize> = plan.cliques.iter().flatten().copied().collect();
            prop_assert_eq!(covered.len(), n);
        }
    }
}
