//! Per-constraint order escalation driven by mismatches against a closest
//! Dirac measure.

use std::collections::{BTreeMap, VecDeque};
use std::time::Instant;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::Serialize;

use crate::certify::{extract_atoms, Certificate, CertKind, MomentTable};
use crate::error::{Error, Result};
use crate::poly::{evaluate, MultiIndex};
use crate::pop::{Field, Pop, Sense};
use crate::relaxation::{assemble_with, hermitian_to_real, RelaxOptions};
use crate::sdp::{solve_sdp, SdpOptions, SdpStatus};
use crate::sparsity::{containing_clique, CliquePlan};

#[derive(Clone, Debug)]
pub struct LoopParams {
    /// Mismatch tolerance in problem units; `None` picks `1e-4·(1+|bound|)`.
    pub eps: Option<f64>,
    pub h: usize,
    pub delta_max_min: u32,
    pub max_iters: usize,
    pub relax: RelaxOptions,
    pub sdp: SdpOptions,
}

impl Default for LoopParams {
    fn default() -> Self {
        LoopParams {
            eps: None,
            h: 2,
            delta_max_min: 2,
            max_iters: 10,
            relax: RelaxOptions::default(),
            sdp: SdpOptions::default(),
        }
    }
}

impl LoopParams {
    pub fn validate(&self) -> Result<()> {
        if self.eps.is_some_and(|e| !(e > 0.0)) || self.h == 0 || self.max_iters == 0 {
            return Err(Error::InvalidInput("loop parameters need eps > 0, h ≥ 1, max_iters ≥ 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct IterRecord {
    pub iteration: usize,
    pub orders: Vec<u32>,
    pub cliques: Vec<Vec<usize>>,
    pub clique_orders: Vec<u32>,
    pub bound: f64,
    pub status: SdpStatus,
    pub sdp_vars: usize,
    pub max_mismatch: Option<f64>,
    pub incremented: Vec<usize>,
    pub certified: bool,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default)]
pub struct LoopState {
    pub orders: Vec<u32>,
    pub bumped: Vec<bool>,
    pub history: Vec<IterRecord>,
}

impl LoopState {
    pub fn initial(pop: &Pop) -> Self {
        let orders: Vec<u32> = (0..pop.constraints.len()).map(|i| pop.k_constraint(i).max(1)).collect();
        LoopState { bumped: vec![false; orders.len()], orders, history: vec![] }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Certified,
    MismatchBelowEps,
}

#[derive(Debug)]
pub struct LoopOutcome {
    pub bound: f64,
    pub point: Vec<Complex64>,
    pub termination: Termination,
    pub certificate: Option<Certificate>,
    pub mismatches: Vec<f64>,
    pub state: LoopState,
    pub plan: CliquePlan,
}

// ---- closest Dirac ----

/// Proxy point plus the cliques whose degree-one block vanished.
#[derive(Clone, Debug)]
pub struct DiracProxy {
    pub point: Vec<Complex64>,
    pub degenerate: Vec<usize>,
}

fn top_eigvec(table: &MomentTable, k: usize) -> (Vec<Complex64>, bool) {
    let n = table.n;
    let vars = &table.cliques[k];
    let s = vars.len();
    let w = DMatrix::from_fn(s, s, |i, j| {
        table.get(&MultiIndex::unit(n, vars[i]), &MultiIndex::unit(n, vars[j])).unwrap_or_default()
    });
    let h = (&w + w.adjoint()) * Complex64::new(0.5, 0.0);
    let eig = h.symmetric_eigen();
    let (imax, lmax) = eig.eigenvalues.iter().enumerate().fold((0, f64::NEG_INFINITY), |acc, (i, &l)| {
        if l > acc.1 {
            (i, l)
        } else {
            acc
        }
    });
    if !(lmax > 1e-10) {
        return (vec![Complex64::new(0.0, 0.0); s], true);
    }
    let sc = lmax.sqrt();
    let mut u: Vec<Complex64> = (0..s).map(|i| eig.eigenvectors[(i, imax)] * sc).collect();
    if table.field == Field::Real {
        // the eigenvector of a real symmetric matrix is real up to phase
        let j = (0..s).max_by(|&a, &b| u[a].norm().partial_cmp(&u[b].norm()).unwrap()).unwrap();
        let ph = u[j] / u[j].norm();
        u.iter_mut().for_each(|v| *v = Complex64::new((*v / ph).re, 0.0));
    }
    (u, false)
}

/// Synchronized top eigenvectors of each clique's degree-one block.
pub fn closest_dirac_detail(table: &MomentTable) -> DiracProxy {
    let n = table.n;
    let m = table.cliques.len();
    let mut us = vec![];
    let mut degenerate = vec![];
    for k in 0..m {
        let (u, deg) = top_eigvec(table, k);
        if deg {
            degenerate.push(k);
        }
        us.push(u);
    }
    let pos = |k: usize, v: usize| table.cliques[k].iter().position(|&x| x == v);
    // spanning forest on the overlap graph, weighted by overlap size
    let mut seen = vec![false; m];
    for root in 0..m {
        if seen[root] {
            continue;
        }
        seen[root] = true;
        let mut queue = VecDeque::from([root]);
        while let Some(p) = queue.pop_front() {
            let mut nbrs: Vec<(usize, usize)> = (0..m)
                .filter(|&k| !seen[k])
                .map(|k| (k, table.cliques[k].iter().filter(|v| table.cliques[p].contains(v)).count()))
                .filter(|&(_, c)| c > 0)
                .collect();
            nbrs.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
            for (k, _) in nbrs {
                let mut acc = Complex64::new(0.0, 0.0);
                for &v in &table.cliques[k] {
                    if let (Some(a), Some(b)) = (pos(k, v), pos(p, v)) {
                        acc += us[k][a].conj() * us[p][b];
                    }
                }
                if acc.norm() > 1e-14 {
                    let rot = match table.field {
                        Field::Complex => acc / acc.norm(),
                        Field::Real => Complex64::new(acc.re.signum(), 0.0),
                    };
                    us[k].iter_mut().for_each(|x| *x *= rot);
                }
                seen[k] = true;
                queue.push_back(k);
            }
        }
    }
    // per-coordinate least squares over all clique copies
    let mut point = vec![Complex64::new(0.0, 0.0); n];
    let mut count = vec![0usize; n];
    for k in 0..m {
        if degenerate.contains(&k) {
            continue;
        }
        for (i, &v) in table.cliques[k].iter().enumerate() {
            point[v] += us[k][i];
            count[v] += 1;
        }
    }
    for v in 0..n {
        if count[v] > 0 {
            point[v] /= count[v] as f64;
        }
    }
    // global phase: first-order moments if informative, else first coordinate real ≥ 0
    let zero = MultiIndex::zero(n);
    let mut acc = Complex64::new(0.0, 0.0);
    for (v, z) in point.iter().enumerate() {
        if let Some(y) = table.get(&MultiIndex::unit(n, v), &zero) {
            acc += z.conj() * y;
        }
    }
    let norm: f64 = point.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    let rot = if acc.norm() > 1e-6 * norm.max(1e-300) * norm {
        match table.field {
            Field::Complex => acc / acc.norm(),
            Field::Real => Complex64::new(acc.re.signum(), 0.0),
        }
    } else if let Some(z) = point.iter().find(|z| z.norm() > 1e-9 * norm.max(1e-300)) {
        z.conj() / z.norm()
    } else {
        Complex64::new(1.0, 0.0)
    };
    point.iter_mut().for_each(|z| *z *= rot);
    if table.field == Field::Real {
        point.iter_mut().for_each(|z| z.im = 0.0);
    }
    DiracProxy { point, degenerate }
}

pub fn closest_dirac(table: &MomentTable) -> Result<Vec<Complex64>> {
    let p = closest_dirac_detail(table);
    if !p.degenerate.is_empty() && p.degenerate.len() == table.cliques.len() {
        return Err(Error::DegenerateClique(p.degenerate[0]));
    }
    Ok(p.point)
}

// ---- mismatches and order updates ----

/// `|L_y(g_i) − g_i(point)|` per constraint; modulus constraints are measured
/// on their inner form `h`.
pub fn mismatches(table: &MomentTable, pop: &Pop, point: &[Complex64]) -> Vec<f64> {
    pop.constraints
        .iter()
        .map(|c| {
            if let Some(m) = &c.modulus {
                let ly = table.riesz(&m.h);
                let hz = m.h.eval_complex(point);
                return ly.map_or(f64::NAN, |v| (v - hz).norm());
            }
            let gz = evaluate(&c.poly, point).unwrap_or(f64::NAN);
            table.riesz(&c.poly).map_or(f64::NAN, |v| (v.re - gz).abs())
        })
        .collect()
}

/// Apply one round of the increment rules; returns the indices whose order
/// grew (empty when every mismatch is within `eps`).
pub fn update_orders(state: &mut LoopState, mism: &[f64], eps: f64, params: &LoopParams, pop: &Pop) -> Result<Vec<usize>> {
    // two-sided rows of one quantity (`X_lo`, `X_hi`) count as one constraint
    let mut groups: Vec<(String, Vec<usize>)> = vec![];
    for i in 0..mism.len() {
        let label = pop.label(i);
        let stem = label.strip_suffix("_lo").or_else(|| label.strip_suffix("_hi")).unwrap_or(&label).to_string();
        match groups.iter_mut().find(|g| g.0 == stem) {
            Some(g) => g.1.push(i),
            None => groups.push((stem, vec![i])),
        }
    }
    let worst = |g: &[usize]| g.iter().map(|&i| if mism[i].is_nan() { f64::INFINITY } else { mism[i] }).fold(0.0, f64::max);
    let exceeds = |g: &[usize]| g.iter().any(|&i| mism[i].is_nan() || mism[i] > pop.constraint_tol(i, eps).min(eps));
    let above: Vec<&Vec<usize>> = groups.iter().map(|g| &g.1).filter(|g| exceeds(g)).collect();
    if above.is_empty() {
        return Ok(vec![]);
    }
    let fresh: Vec<&Vec<usize>> = above.iter().copied().filter(|g| g.iter().all(|&i| !state.bumped[i])).collect();
    let mut pool = if fresh.is_empty() { above } else { fresh };
    pool.sort_by(|a, b| worst(b).partial_cmp(&worst(a)).unwrap().then(a[0].cmp(&b[0])));
    let selected: Vec<usize> = pool.into_iter().take(params.h).flatten().copied().collect();
    let before = state.orders.clone();
    for &i in &selected {
        state.orders[i] += 1;
    }
    // closure: constraints living in the host cliques of the selected ones
    // are raised to the host's new order
    let plan = CliquePlan::sparse(pop, &state.orders)?;
    let mut target: BTreeMap<usize, u32> = BTreeMap::new();
    for &i in &selected {
        if let Some(&k) = plan.assignment.get(&i) {
            let t = target.entry(k).or_insert(0);
            *t = (*t).max(state.orders[i]);
        }
    }
    for i in 0..pop.constraints.len() {
        let vars = pop.constraints[i].poly.vars();
        if vars.is_empty() {
            continue;
        }
        if let Some(t) = containing_clique(&plan.cliques, &vars).and_then(|k| target.get(&k)) {
            state.orders[i] = state.orders[i].max(*t);
        }
    }
    // spread rule
    loop {
        let (lo, hi) = (
            *state.orders.iter().min().unwrap_or(&0),
            *state.orders.iter().max().unwrap_or(&0),
        );
        if hi - lo <= params.delta_max_min {
            break;
        }
        for i in 0..state.orders.len() {
            if state.orders[i] == lo {
                state.orders[i] += 1;
            }
        }
    }
    let grew: Vec<usize> = (0..before.len()).filter(|&i| state.orders[i] > before[i]).collect();
    if grew.is_empty() {
        return Err(Error::NoProgress);
    }
    for &i in &grew {
        state.bumped[i] = true;
    }
    Ok(grew)
}

/// Relative objective gap accepted when declaring a proxy point optimal.
pub const GAP_REL: f64 = 5e-4;

/// A point is declared optimal when its objective is within `GAP_REL` of the
/// bound and every constraint holds up to its tolerance (`eps` by default).
pub fn declared_optimal(pop: &Pop, bound: f64, point: &[Complex64], eps: f64) -> bool {
    let Ok(f) = pop.objective_value(point) else { return false };
    if (f - bound).abs() > GAP_REL * bound.abs().max(1.0) {
        return false;
    }
    pop.constraints.iter().enumerate().all(|(i, c)| {
        let v = evaluate(&c.poly, point).unwrap_or(f64::NAN);
        let tol = pop.constraint_tol(i, eps);
        match c.sense {
            Sense::Ge => v >= -tol,
            Sense::Eq => v.abs() <= tol,
        }
    })
}

// ---- outer loop ----

/// Solve, certify, and escalate orders until a certificate or a mismatch-free
/// proxy point appears. `on_iter` sees every iteration record.
pub fn solve_global(pop: &Pop, params: &LoopParams, mut on_iter: impl FnMut(&IterRecord)) -> Result<LoopOutcome> {
    params.validate()?;
    pop.validate()?;
    let mut state = LoopState::initial(pop);
    let mut last_bound = f64::NAN;
    for iter in 0..params.max_iters {
        let t0 = Instant::now();
        let plan = CliquePlan::sparse(pop, &state.orders)?;
        let sdp = assemble_with(pop, &plan, &params.relax)?;
        let emb = hermitian_to_real(&sdp);
        let sol = solve_sdp(&emb, &params.sdp)?;
        match sol.status {
            SdpStatus::Infeasible => return Err(Error::Infeasible),
            SdpStatus::Unbounded => return Err(Error::Unbounded),
            _ => {}
        }
        let bound = sol.primal_obj;
        last_bound = bound;
        let table = MomentTable::from_solution(&sdp, &sol.y);
        let mut rec = IterRecord {
            iteration: iter,
            orders: state.orders.clone(),
            cliques: plan.cliques.clone(),
            clique_orders: plan.clique_orders.clone(),
            bound,
            status: sol.status,
            sdp_vars: emb.num_vars,
            max_mismatch: None,
            incremented: vec![],
            certified: false,
            seconds: 0.0,
        };
        let cert = extract_atoms(&table, pop).ok().filter(|c| c.kind != CertKind::None && !c.atoms.is_empty());
        if let Some(cert) = cert {
            rec.certified = true;
            rec.seconds = t0.elapsed().as_secs_f64();
            on_iter(&rec);
            state.history.push(rec);
            let point = cert.atoms[0].point.clone();
            let mism = mismatches(&table, pop, &point);
            return Ok(LoopOutcome {
                bound,
                point,
                termination: Termination::Certified,
                certificate: Some(cert),
                mismatches: mism,
                state,
                plan,
            });
        }
        let point = closest_dirac(&table)?;
        let mism = mismatches(&table, pop, &point);
        rec.max_mismatch = Some(mism.iter().copied().fold(0.0, f64::max));
        let eps = params.eps.unwrap_or(1e-4 * (1.0 + bound.abs()));
        let grew = update_orders(&mut state, &mism, eps, params, pop)?;
        rec.incremented = grew.clone();
        rec.seconds = t0.elapsed().as_secs_f64();
        on_iter(&rec);
        state.history.push(rec);
        if grew.is_empty() {
            return Ok(LoopOutcome {
                bound,
                point,
                termination: Termination::MismatchBelowEps,
                certificate: None,
                mismatches: mism,
                state,
                plan,
            });
        }
    }
    Err(Error::MaxItersExceeded { iters: params.max_iters, bound: last_bound })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::certify::Atom;
    use crate::poly::{monomials, Poly, TermKey};
    use crate::symmetry::SymmetryKind;
    use std::collections::BTreeMap;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn clique_table(z: &[Complex64], cliques: Vec<Vec<usize>>) -> MomentTable {
        let n = z.len();
        let zc: Vec<Complex64> = z.iter().map(|v| v.conj()).collect();
        let mut values = BTreeMap::new();
        for cl in &cliques {
            let bas = monomials(n, cl, 1);
            for a in &bas {
                for b in &bas {
                    let key = TermKey::new(a.clone(), b.clone());
                    let key = if key.mirror() < key { key.mirror() } else { key };
                    values.insert(key.clone(), key.alpha.pow(z) * key.beta.pow(&zc));
                }
            }
        }
        MomentTable { n, field: Field::Complex, values, mask: SymmetryKind::None, cliques, orders: vec![1; 2] }
    }

    fn equal_up_to_phase(a: &[Complex64], b: &[Complex64], tol: f64) -> bool {
        let acc: Complex64 = a.iter().zip(b).map(|(x, y)| x.conj() * y).sum();
        let rot = acc / acc.norm();
        a.iter().zip(b).all(|(x, y)| (x * rot - y).norm() < tol)
    }

    #[test]
    fn single_clique_dirac_recovered() {
        let z = vec![c(0.3, -1.2), c(-0.7, 0.4)];
        let t = MomentTable::from_atoms(2, Field::Complex, &[Atom { point: z.clone(), weight: 1.0 }], 1);
        let p = closest_dirac(&t).unwrap();
        for (a, b) in p.iter().zip(&z) {
            assert!((a - b).norm() < 1e-9);
        }
    }

    #[test]
    fn two_cliques_stitch() {
        let z = vec![c(1.0, 0.5), c(-0.3, 0.8), c(0.2, -0.9)];
        let mut t = clique_table(&z, vec![vec![0, 1], vec![1, 2]]);
        // drop first-order information so only the second-order block speaks
        t.mask = SymmetryKind::Balanced;
        let p = closest_dirac(&t).unwrap();
        assert!(equal_up_to_phase(&p, &z, 1e-9));
        assert!(p[0].im.abs() < 1e-12 && p[0].re > 0.0);
    }

    #[test]
    fn dirac_mismatch_zero_and_arithmetic() {
        let z = vec![c(0.6, 0.1)];
        let pop = Pop::new(1, Field::Complex, Poly::abs2(1, 0)).ge(Poly::constant(1, 1.0).sub(&Poly::abs2(1, 0)));
        let t = MomentTable::from_atoms(1, Field::Complex, &[Atom { point: z.clone(), weight: 1.0 }], 1);
        assert!(mismatches(&t, &pop, &z)[0] < 1e-14);
        // L_y(g) = 1 − y11 = 3 with y11 = −2, while g(0) = 1
        let mut t2 = t.clone();
        t2.values.insert(TermKey::new(MultiIndex(vec![1]), MultiIndex(vec![1])), c(-2.0, 0.0));
        let m = mismatches(&t2, &pop, &[c(0.0, 0.0)]);
        assert!((m[0] - 2.0).abs() < 1e-14);
    }

    #[test]
    fn spread_rule_lifts_minimum() {
        let n = 3;
        let pop = Pop::new(n, Field::Complex, Poly::abs2(n, 0))
            .ge(Poly::constant(n, 1.0).sub(&Poly::abs2(n, 0)))
            .ge(Poly::constant(n, 1.0).sub(&Poly::abs2(n, 1)))
            .ge(Poly::constant(n, 1.0).sub(&Poly::abs2(n, 2)));
        let mut st = LoopState::initial(&pop);
        st.orders = vec![3, 1, 2];
        st.bumped = vec![true, false, true];
        let params = LoopParams { h: 1, delta_max_min: 2, ..Default::default() };
        let grew = update_orders(&mut st, &[5.0, 0.0, 0.0], 1.0, &params, &pop).unwrap();
        assert_eq!(st.orders, vec![4, 2, 2]);
        assert_eq!(grew, vec![0, 1]);
    }

    #[test]
    fn below_eps_is_terminal() {
        let pop = Pop::new(1, Field::Complex, Poly::abs2(1, 0)).ge(Poly::constant(1, 1.0).sub(&Poly::abs2(1, 0)));
        let mut st = LoopState::initial(&pop);
        let grew = update_orders(&mut st, &[1e-9], 1e-6, &LoopParams::default(), &pop).unwrap();
        assert!(grew.is_empty());
        assert_eq!(st.orders, vec![1]);
    }

    use proptest::prelude::*;

    fn consistent(t: &MomentTable, p: &[Complex64]) -> bool {
        let pc: Vec<Complex64> = p.iter().map(|v| v.conj()).collect();
        t.values.iter().all(|(k, v)| (k.alpha.pow(p) * k.beta.pow(&pc) - v).norm() <= 1e-6)
    }

    proptest! {
        #[test]
        fn closest_dirac_exact_on_rank_one(pts in prop::collection::vec((0.1..1.5f64, -3.0..3.0f64), 3), n in 1usize..=3) {
            let z: Vec<Complex64> = pts[..n].iter().map(|&(r, t)| Complex64::from_polar(r, t)).collect();
            let t = MomentTable::from_atoms(n, Field::Complex, &[Atom { point: z.clone(), weight: 1.0 }], 2);
            let p = closest_dirac(&t).unwrap();
            prop_assert!(equal_up_to_phase(&p, &z, 1e-6));
            prop_assert!(consistent(&t, &p));
        }

        #[test]
        fn closest_dirac_stitches_cliques(pts in prop::collection::vec((0.1..1.5f64, -3.0..3.0f64), 3)) {
            let z: Vec<Complex64> = pts.iter().map(|&(r, t)| Complex64::from_polar(r, t)).collect();
            let t = clique_table(&z, vec![vec![0, 1], vec![1, 2]]);
            let p = closest_dirac(&t).unwrap();
            prop_assert!(equal_up_to_phase(&p, &z, 1e-6));
            prop_assert!(consistent(&t, &p));
        }

        #[test]
        fn real_tables_recover_up_to_sign(xs in prop::collection::vec(0.1..1.5f64, 3), signs in prop::collection::vec(any::<bool>(), 3)) {
            let z: Vec<Complex64> = xs.iter().zip(&signs).map(|(&x, &s)| Complex64::new(if s { x } else { -x }, 0.0)).collect();
            let t = MomentTable::from_atoms(3, Field::Real, &[Atom { point: z.clone(), weight: 1.0 }], 2);
            let p = closest_dirac(&t).unwrap();
            let flipped: Vec<Complex64> = z.iter().map(|v| -v).collect();
            prop_assert!(p.iter().all(|v| v.im == 0.0));
            prop_assert!(max_err(&p, &z) <= 1e-6 || max_err(&p, &flipped) <= 1e-6);
            prop_assert!(consistent(&t, &p));
        }
    }

    fn max_err(a: &[Complex64], b: &[Complex64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
    }
}
