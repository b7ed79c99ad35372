//! Moment relaxation assembly: bases, moment/localizing blocks, scalar rows.

use std::collections::{BTreeMap, BTreeSet};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::poly::{monomials, MultiIndex, Poly, TermKey};
use crate::pop::{Constraint, Field, Pop, Sense};
use crate::sparsity::{containing_clique, CliquePlan};
use crate::symmetry::{detect_invariance, SymmetryKind, SymmetryReport};

// ---- affine expressions ----

/// `constant + Σ c_i y_i` over real SDP variables.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Affine {
    pub constant: f64,
    pub terms: Vec<(usize, f64)>,
}

impl Affine {
    pub fn constant(c: f64) -> Self {
        Affine { constant: c, terms: vec![] }
    }

    pub fn var(i: usize) -> Self {
        Affine { constant: 0.0, terms: vec![(i, 1.0)] }
    }

    pub fn push(&mut self, i: usize, c: f64) {
        if c != 0.0 {
            self.terms.push((i, c));
        }
    }

    /// Sort by variable, merge duplicates, drop zeros.
    pub fn normalize(mut self) -> Self {
        self.terms.sort_by_key(|t| t.0);
        let mut out: Vec<(usize, f64)> = Vec::with_capacity(self.terms.len());
        for (i, c) in self.terms {
            match out.last_mut() {
                Some(last) if last.0 == i => last.1 += c,
                _ => out.push((i, c)),
            }
        }
        out.retain(|t| t.1 != 0.0);
        Affine { constant: self.constant, terms: out }
    }

    pub fn scale(&self, s: f64) -> Affine {
        Affine {
            constant: self.constant * s,
            terms: self.terms.iter().map(|&(i, c)| (i, c * s)).collect(),
        }
    }

    pub fn add(&self, other: &Affine) -> Affine {
        let mut t = self.terms.clone();
        t.extend_from_slice(&other.terms);
        Affine { constant: self.constant + other.constant, terms: t }.normalize()
    }

    pub fn eval(&self, y: &[f64]) -> f64 {
        self.constant + self.terms.iter().map(|&(i, c)| c * y[i]).sum::<f64>()
    }

    pub fn is_zero(&self) -> bool {
        self.constant == 0.0 && self.terms.is_empty()
    }
}

/// Complex-valued affine expression (real and imaginary parts).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CAffine {
    pub re: Affine,
    pub im: Affine,
}

impl CAffine {
    pub fn real(re: Affine) -> Self {
        CAffine { re, im: Affine::default() }
    }

    pub fn eval(&self, y: &[f64]) -> Complex64 {
        Complex64::new(self.re.eval(y), self.im.eval(y))
    }

    pub fn is_zero(&self) -> bool {
        self.re.is_zero() && self.im.is_zero()
    }
}

// ---- problem types ----

#[derive(Clone, Debug)]
pub struct MomentBasis {
    pub cliques: Vec<Vec<MultiIndex>>,
}

pub fn moment_basis(n: usize, cliques: &[Vec<usize>], orders: &[u32]) -> MomentBasis {
    MomentBasis {
        cliques: cliques.iter().zip(orders).map(|(c, &d)| monomials(n, c, d)).collect(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum BlockKind {
    Moment { clique: usize },
    Localizing { constraint: usize, clique: usize },
    Hyponormal { clique: usize, i: usize, j: usize },
    Schur { constraint: usize },
    Epigraph { square: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Cone {
    Psd,
    /// Matrix pinned to zero (equality localizing constraint).
    Zero,
}

/// Polynomial content of a block entry: `L_y(poly) + Σ c·aux`.
#[derive(Clone, Debug, PartialEq)]
pub struct Entry {
    pub poly: Poly,
    pub aux: Vec<(usize, f64)>,
}

impl Entry {
    fn poly(poly: Poly) -> Self {
        Entry { poly, aux: vec![] }
    }
}

#[derive(Clone, Debug)]
pub struct SdpBlock {
    pub kind: BlockKind,
    pub cone: Cone,
    pub size: usize,
    /// Complex Hermitian (true) or real symmetric (false).
    pub hermitian: bool,
    /// Upper triangle, row-major.
    pub entries: Vec<CAffine>,
    /// Polynomial form of `entries` (same layout); empty after embedding.
    pub polys: Vec<Entry>,
    /// Row labels (basis monomials) where meaningful.
    pub basis: Vec<MultiIndex>,
    /// For embedded blocks: index of the Hermitian block in the source problem.
    pub embedded_from: Option<usize>,
}

pub fn upper_index(size: usize, i: usize, j: usize) -> usize {
    let (i, j) = if i <= j { (i, j) } else { (j, i) };
    i * size - i * (i + 1) / 2 + j
}

impl SdpBlock {
    /// Entry `(i, j)` of the complex matrix.
    pub fn entry(&self, i: usize, j: usize) -> (CAffine, bool) {
        let e = self.entries[upper_index(self.size, i, j)].clone();
        (e, i > j)
    }

    pub fn eval(&self, y: &[f64]) -> nalgebra::DMatrix<Complex64> {
        let s = self.size;
        let mut m = nalgebra::DMatrix::zeros(s, s);
        for i in 0..s {
            for j in i..s {
                let v = self.entries[upper_index(s, i, j)].eval(y);
                m[(i, j)] = v;
                m[(j, i)] = v.conj();
            }
        }
        m
    }
}

#[derive(Clone, Debug)]
pub struct ScalarRow {
    pub label: String,
    pub sense: Sense,
    pub expr: Affine,
    /// Hermitian polynomial whose Riesz value is `expr` (minus aux parts).
    pub poly: Poly,
    pub constraint: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum VarSlot {
    Re,
    Im,
    Aux,
}

#[derive(Clone, Debug)]
pub struct SdpProblem {
    pub field: Field,
    pub n: usize,
    pub num_vars: usize,
    /// Per variable: which canonical moment (or aux index) and which part.
    pub slots: Vec<(VarSlot, Option<TermKey>, usize)>,
    /// Canonical moment key → (real-part var, imaginary-part var).
    pub index: BTreeMap<TermKey, (usize, Option<usize>)>,
    pub aux_vars: Vec<usize>,
    pub mask: SymmetryReport,
    pub blocks: Vec<SdpBlock>,
    pub rows: Vec<ScalarRow>,
    pub objective: Affine,
    /// Polynomial part of the objective (squares handled by aux vars excluded).
    pub objective_poly: Poly,
    pub plan: CliquePlan,
    pub basis: MomentBasis,
}

impl SdpProblem {
    pub fn psd_blocks(&self) -> impl Iterator<Item = &SdpBlock> {
        self.blocks.iter().filter(|b| b.cone == Cone::Psd)
    }

    /// Sizes of the PSD blocks making up clique `k`'s moment matrix.
    pub fn moment_block_sizes(&self, k: usize) -> Vec<usize> {
        self.blocks
            .iter()
            .filter(|b| b.kind == BlockKind::Moment { clique: k })
            .map(|b| b.size)
            .collect()
    }
}

// ---- options ----

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlowMode {
    /// Schur block when the containing clique has order 1, Riesz row otherwise.
    Auto,
    Riesz,
    Schur,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveMode {
    Epigraph,
    Native,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RelaxOptions {
    /// Apply the balanced/even zero mask when detected.
    pub symmetry: bool,
    pub flow_mode: FlowMode,
    pub objective_mode: ObjectiveMode,
    /// Impose the hyponormality blocks of order `t − d_K`.
    pub hypo_strengthen: Option<u32>,
}

impl Default for RelaxOptions {
    fn default() -> Self {
        RelaxOptions {
            symmetry: false,
            flow_mode: FlowMode::Auto,
            objective_mode: ObjectiveMode::Epigraph,
            hypo_strengthen: None,
        }
    }
}

/// `d_K = max{2, k_i}` for n > 1, `max{1, k_i}` for n = 1.
pub fn d_k(pop: &Pop) -> u32 {
    let base = if pop.n > 1 { 2 } else { 1 };
    (0..pop.constraints.len()).map(|i| pop.k_constraint(i)).fold(base, u32::max)
}

// ---- assembly ----

struct Builder<'a> {
    pop: &'a Pop,
    mask: SymmetryReport,
}

impl Builder<'_> {
    /// Canonical key and whether the requested key is its mirror.
    fn canonical(&self, key: &TermKey) -> (TermKey, bool) {
        match self.pop.field {
            Field::Real => (TermKey::new(key.alpha.add(&key.beta), MultiIndex::zero(self.pop.n)), false),
            Field::Complex => {
                let m = key.mirror();
                if m < *key {
                    (m, true)
                } else {
                    (key.clone(), false)
                }
            }
        }
    }

    fn masked(&self, key: &TermKey) -> bool {
        self.mask.is_zero(key)
    }

    fn entry_for(&self, a: &MultiIndex, b: &MultiIndex, g: Option<&Poly>) -> Poly {
        let n = self.pop.n;
        match (self.pop.field, g) {
            (Field::Complex, None) => Poly::monomial(a.clone(), b.clone(), Complex64::new(1.0, 0.0)),
            (Field::Complex, Some(g)) => g.shift(a, b),
            (Field::Real, None) => Poly::monomial(a.add(b), MultiIndex::zero(n), Complex64::new(1.0, 0.0)),
            (Field::Real, Some(g)) => g.shift(&a.add(b), &MultiIndex::zero(n)),
        }
    }
}

struct RawBlock {
    kind: BlockKind,
    cone: Cone,
    size: usize,
    polys: Vec<Entry>,
    basis: Vec<MultiIndex>,
}

struct RawRow {
    label: String,
    sense: Sense,
    entry: Entry,
    constraint: Option<usize>,
}

/// Assemble with default options; `mask` enables the symmetry reduction.
pub fn assemble(pop: &Pop, plan: &CliquePlan, mask: Option<&SymmetryReport>) -> Result<SdpProblem> {
    let mut opts = RelaxOptions::default();
    if let Some(m) = mask {
        opts.symmetry = m.kind != SymmetryKind::None;
    }
    assemble_with(pop, plan, &opts)
}

pub fn assemble_with(pop: &Pop, plan: &CliquePlan, opts: &RelaxOptions) -> Result<SdpProblem> {
    pop.validate()?;
    let pop = match opts.objective_mode {
        ObjectiveMode::Native => pop.with_native_squares(),
        ObjectiveMode::Epigraph => pop.clone(),
    };
    let pop = &pop;
    let m = pop.constraints.len();
    if plan.orders.len() != m {
        return Err(Error::InvalidInput(format!(
            "plan has {} constraint orders, problem has {m} constraints",
            plan.orders.len()
        )));
    }
    for i in 0..m {
        if plan.orders[i] < pop.k_constraint(i) {
            return Err(Error::OrderTooLow(i));
        }
    }
    let mask = if opts.symmetry { detect_invariance(pop) } else { SymmetryReport::none() };
    let b = Builder { pop, mask };
    let basis = moment_basis(pop.n, &plan.cliques, &plan.clique_orders);

    let mut raw_blocks: Vec<RawBlock> = vec![];
    let mut raw_rows: Vec<RawRow> = vec![];

    // moment blocks
    for (k, bas) in basis.cliques.iter().enumerate() {
        let s = bas.len();
        let mut polys = Vec::with_capacity(s * (s + 1) / 2);
        for i in 0..s {
            for j in i..s {
                polys.push(Entry::poly(b.entry_for(&bas[i], &bas[j], None)));
            }
        }
        raw_blocks.push(RawBlock { kind: BlockKind::Moment { clique: k }, cone: Cone::Psd, size: s, polys, basis: bas.clone() });
    }

    // constraints
    for (i, c) in pop.constraints.iter().enumerate() {
        let constant = c.poly.terms.keys().all(|k| k.degree() == 0);
        if let (false, Some(&k)) = (constant, plan.assignment.get(&i)) {
            let ord = plan.orders[i] - pop.k_constraint(i);
            if ord > plan.clique_orders[k] {
                return Err(Error::UnindexedMoment(format!("localizing order {ord} for constraint {i}")));
            }
            let bas = monomials(pop.n, &plan.cliques[k], ord);
            let s = bas.len();
            let mut polys = Vec::with_capacity(s * (s + 1) / 2);
            for a in 0..s {
                for bb in a..s {
                    polys.push(Entry::poly(b.entry_for(&bas[a], &bas[bb], Some(&c.poly))));
                }
            }
            let cone = match c.sense {
                Sense::Ge => Cone::Psd,
                Sense::Eq => Cone::Zero,
            };
            raw_blocks.push(RawBlock { kind: BlockKind::Localizing { constraint: i, clique: k }, cone, size: s, polys, basis: bas });
            continue;
        }
        if let (Some(md), Sense::Ge) = (&c.modulus, c.sense) {
            let use_schur = match opts.flow_mode {
                FlowMode::Schur => true,
                FlowMode::Riesz => false,
                FlowMode::Auto => {
                    let k = containing_clique(&plan.cliques, &c.poly.vars());
                    k.is_none_or(|k| plan.clique_orders[k] < pop.k_constraint(i))
                }
            };
            if use_schur {
                let n = pop.n;
                raw_blocks.push(RawBlock {
                    kind: BlockKind::Schur { constraint: i },
                    cone: Cone::Psd,
                    size: 2,
                    polys: vec![
                        Entry::poly(Poly::constant(n, md.bound_sq)),
                        Entry::poly(md.h.clone()),
                        Entry::poly(Poly::constant(n, 1.0)),
                    ],
                    basis: vec![],
                });
                continue;
            }
        }
        raw_rows.push(RawRow { label: pop.label(i), sense: c.sense, entry: Entry::poly(c.poly.clone()), constraint: Some(i) });
    }

    // epigraph blocks for squared objective terms
    let mut aux_count = 0usize;
    for (si, sq) in pop.squares.iter().enumerate() {
        if sq.weight < 0.0 {
            return Err(Error::InvalidInput("objective square weights must be nonnegative".into()));
        }
        let n = pop.n;
        raw_blocks.push(RawBlock {
            kind: BlockKind::Epigraph { square: si },
            cone: Cone::Psd,
            size: 2,
            polys: vec![
                Entry { poly: Poly::zero(n), aux: vec![(aux_count, 1.0)] },
                Entry::poly(sq.poly.scale_re(sq.weight.sqrt())),
                Entry::poly(Poly::constant(n, 1.0)),
            ],
            basis: vec![],
        });
        aux_count += 1;
    }

    // imposed hyponormality
    if let Some(t) = opts.hypo_strengthen {
        if pop.field == Field::Real {
            return Err(Error::InvalidInput("hyponormality blocks apply to complex problems".into()));
        }
        let dk = d_k(pop);
        if t < dk {
            return Err(Error::InsufficientOrder { t, dk });
        }
        let ord = t - dk;
        for (k, clique) in plan.cliques.iter().enumerate() {
            if ord + 1 > plan.clique_orders[k] {
                return Err(Error::UnindexedMoment(format!("hyponormality order {ord} on clique {k}")));
            }
            for (i, j, rb) in hyponormal_blocks(pop.n, clique, ord) {
                raw_blocks.push(RawBlock { kind: BlockKind::Hyponormal { clique: k, i, j }, cone: Cone::Psd, size: rb.0, polys: rb.1.into_iter().map(Entry::poly).collect(), basis: rb.2 });
            }
        }
    }

    // available moments
    let mut covered: BTreeSet<TermKey> = BTreeSet::new();
    for bas in &basis.cliques {
        for a in bas {
            for bb in bas {
                covered.insert(b.canonical(&TermKey::new(a.clone(), bb.clone())).0);
            }
        }
    }

    // referenced moments → variables
    let mut used: BTreeSet<TermKey> = BTreeSet::new();
    let note = |p: &Poly, used: &mut BTreeSet<TermKey>| -> Result<()> {
        for key in p.terms.keys() {
            let (ck, _) = b.canonical(key);
            if b.masked(&ck) {
                continue;
            }
            if !covered.contains(&ck) {
                return Err(Error::UnindexedMoment(format!("{key:?}")));
            }
            used.insert(ck);
        }
        Ok(())
    };
    used.insert(TermKey::constant(pop.n));
    note(&pop.objective, &mut used)?;
    for rb in &raw_blocks {
        for e in &rb.polys {
            note(&e.poly, &mut used)?;
        }
    }
    for r in &raw_rows {
        note(&r.entry.poly, &mut used)?;
    }

    let mut index = BTreeMap::new();
    let mut slots = vec![];
    for key in &used {
        let re = slots.len();
        slots.push((VarSlot::Re, Some(key.clone()), 0));
        let im = if pop.field == Field::Complex && key.alpha != key.beta {
            slots.push((VarSlot::Im, Some(key.clone()), 0));
            Some(re + 1)
        } else {
            None
        };
        index.insert(key.clone(), (re, im));
    }
    let mut aux_vars = vec![];
    for a in 0..aux_count {
        aux_vars.push(slots.len());
        slots.push((VarSlot::Aux, None, a));
    }

    let riesz = |e: &Entry| -> CAffine {
        let mut re = Affine::default();
        let mut im = Affine::default();
        for (key, c) in &e.poly.terms {
            let (ck, mirrored) = b.canonical(key);
            if b.masked(&ck) {
                continue;
            }
            let (vr, vi) = index[&ck];
            let s = if mirrored { -1.0 } else { 1.0 };
            re.push(vr, c.re);
            im.push(vr, c.im);
            if let Some(vi) = vi {
                re.push(vi, -c.im * s);
                im.push(vi, c.re * s);
            }
        }
        for &(a, c) in &e.aux {
            re.push(aux_vars[a], c);
        }
        CAffine { re: re.normalize(), im: im.normalize() }
    };

    let hermitian = pop.field == Field::Complex;
    let mut blocks = vec![];
    for rb in raw_blocks {
        let entries: Vec<CAffine> = rb.polys.iter().map(&riesz).collect();
        let block = SdpBlock {
            kind: rb.kind,
            cone: rb.cone,
            size: rb.size,
            hermitian,
            entries,
            polys: rb.polys,
            basis: rb.basis,
            embedded_from: None,
        };
        if opts.symmetry && b.mask.kind != SymmetryKind::None && block.cone == Cone::Psd {
            blocks.extend(split_block(block));
        } else {
            blocks.push(block);
        }
    }

    let mut rows = vec![];
    let y00 = index[&TermKey::constant(pop.n)].0;
    rows.push(ScalarRow {
        label: "normalization".into(),
        sense: Sense::Eq,
        expr: Affine { constant: -1.0, terms: vec![(y00, 1.0)] },
        poly: Poly::constant(pop.n, 1.0),
        constraint: None,
    });
    for r in raw_rows {
        let e = riesz(&r.entry);
        rows.push(ScalarRow { label: r.label, sense: r.sense, expr: e.re, poly: r.entry.poly, constraint: r.constraint });
    }

    let mut objective = riesz(&Entry::poly(pop.objective.clone())).re;
    for &v in &aux_vars {
        objective.push(v, 1.0);
    }
    let objective = objective.normalize();

    Ok(SdpProblem {
        field: pop.field,
        n: pop.n,
        num_vars: slots.len(),
        slots,
        index,
        aux_vars,
        mask: b.mask,
        blocks,
        rows,
        objective,
        objective_poly: pop.objective.clone(),
        plan: plan.clone(),
        basis,
    })
}

/// Hyponormality block rows `(r, α)`, r ∈ {0, i, j}; entry
/// `((r,α),(c,β)) = z^{α+e_c} z̄^{β+e_r}` with `e_0 = 0`.
#[allow(clippy::type_complexity)]
fn hyponormal_blocks(
    n: usize,
    clique: &[usize],
    ord: u32,
) -> Vec<(usize, usize, (usize, Vec<Poly>, Vec<MultiIndex>))> {
    let bas = monomials(n, clique, ord);
    let shifts: Vec<Vec<Option<usize>>> = if clique.len() == 1 {
        vec![vec![None, Some(clique[0])]]
    } else {
        let mut v = vec![];
        for a in 0..clique.len() {
            for bb in a + 1..clique.len() {
                v.push(vec![None, Some(clique[a]), Some(clique[bb])]);
            }
        }
        v
    };
    let unit = |s: Option<usize>| s.map_or(MultiIndex::zero(n), |k| MultiIndex::unit(n, k));
    let mut out = vec![];
    for sh in shifts {
        let rows: Vec<(MultiIndex, MultiIndex)> = sh
            .iter()
            .flat_map(|&r| bas.iter().map(move |a| (a.clone(), unit(r))))
            .collect();
        let s = rows.len();
        let mut polys = vec![];
        for p in 0..s {
            for q in p..s {
                let (a, er) = &rows[p];
                let (bb, ec) = &rows[q];
                polys.push(Poly::monomial(a.add(ec), bb.add(er), Complex64::new(1.0, 0.0)));
            }
        }
        let i = sh[1].unwrap();
        let j = sh.get(2).copied().flatten().unwrap_or(i);
        out.push((i, j, (s, polys, rows.into_iter().map(|r| r.0).collect())));
    }
    out
}

/// Split a block into the connected components of its nonzero pattern.
fn split_block(block: SdpBlock) -> Vec<SdpBlock> {
    let s = block.size;
    let mut parent: Vec<usize> = (0..s).collect();
    fn find(p: &mut Vec<usize>, x: usize) -> usize {
        let mut r = x;
        while p[r] != r {
            r = p[r];
        }
        let mut c = x;
        while p[c] != r {
            let nx = p[c];
            p[c] = r;
            c = nx;
        }
        r
    }
    for i in 0..s {
        for j in i + 1..s {
            if !block.entries[upper_index(s, i, j)].is_zero() {
                let (a, bb) = (find(&mut parent, i), find(&mut parent, j));
                if a != bb {
                    parent[a.max(bb)] = a.min(bb);
                }
            }
        }
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..s {
        let r = find(&mut parent, i);
        groups.entry(r).or_default().push(i);
    }
    if groups.len() == 1 {
        return vec![block];
    }
    groups
        .into_values()
        .map(|idx| {
            let t = idx.len();
            let mut entries = Vec::with_capacity(t * (t + 1) / 2);
            let mut polys = Vec::with_capacity(t * (t + 1) / 2);
            for a in 0..t {
                for bb in a..t {
                    let u = upper_index(s, idx[a], idx[bb]);
                    entries.push(block.entries[u].clone());
                    polys.push(block.polys[u].clone());
                }
            }
            SdpBlock {
                kind: block.kind.clone(),
                cone: block.cone,
                size: t,
                hermitian: block.hermitian,
                entries,
                polys,
                basis: idx.iter().filter_map(|&i| block.basis.get(i).cloned()).collect(),
                embedded_from: None,
            }
        })
        .collect()
}

/// Append a slack variable and the sphere `Σ|z_k|² = R²` (complex) or
/// `Σ x_k² = R²` (real).
pub fn add_sphere_slack(pop: &Pop, r: f64) -> Pop {
    let all: Vec<usize> = (0..pop.n).collect();
    add_sphere_slack_cliques(pop, &[all], r)
}

/// One slack and one sphere per clique.
pub fn add_sphere_slack_cliques(pop: &Pop, cliques: &[Vec<usize>], r: f64) -> Pop {
    let n2 = pop.n + cliques.len();
    let ext = |p: &Poly| p.extend(n2);
    let mut out = Pop {
        n: n2,
        field: pop.field,
        objective: ext(&pop.objective),
        squares: pop
            .squares
            .iter()
            .map(|s| crate::pop::SquareTerm { weight: s.weight, poly: ext(&s.poly) })
            .collect(),
        constraints: pop
            .constraints
            .iter()
            .map(|c| Constraint {
                poly: ext(&c.poly),
                sense: c.sense,
                label: c.label.clone(),
                tol: c.tol,
                modulus: c.modulus.as_ref().map(|m| crate::pop::Modulus { h: ext(&m.h), bound_sq: m.bound_sq }),
            })
            .collect(),
        ball_radius: pop.ball_radius,
    };
    let sq = |k: usize| match pop.field {
        Field::Complex => Poly::abs2(n2, k),
        Field::Real => Poly::var(n2, k).mul(&Poly::var(n2, k)),
    };
    for (c, clique) in cliques.iter().enumerate() {
        let slack = pop.n + c;
        let mut g = Poly::constant(n2, r * r);
        for &k in clique.iter().chain(std::iter::once(&slack)) {
            g = g.sub(&sq(k));
        }
        out.constraints.push(Constraint::new(g, Sense::Eq).labeled(format!("sphere{c}")));
    }
    out
}

// ---- complex → real embedding ----

/// Replace each Hermitian PSD block `H = A + iB` by `[[A, −B], [B, A]]`.
/// Pinned (zero-cone) blocks are left as they are: their real and imaginary
/// parts become separate equality rows downstream.
pub fn hermitian_to_real(sdp: &SdpProblem) -> SdpProblem {
    let mut out = sdp.clone();
    out.blocks = sdp
        .blocks
        .iter()
        .enumerate()
        .map(|(bi, b)| {
            if !b.hermitian || b.cone == Cone::Zero {
                return b.clone();
            }
            let s = b.size;
            let t = 2 * s;
            let mut entries = vec![CAffine::default(); t * (t + 1) / 2];
            let get = |i: usize, j: usize| -> (Affine, Affine) {
                let (e, lower) = b.entry(i, j);
                if lower {
                    (e.re, e.im.scale(-1.0))
                } else {
                    (e.re, e.im)
                }
            };
            for i in 0..t {
                for j in i..t {
                    let (bi_, bj) = (i / s, j / s);
                    let (a, c) = get(i % s, j % s);
                    let v = match (bi_, bj) {
                        (0, 0) | (1, 1) => a,
                        (0, 1) => c.scale(-1.0),
                        _ => c,
                    };
                    entries[upper_index(t, i, j)] = CAffine::real(v);
                }
            }
            SdpBlock {
                kind: b.kind.clone(),
                cone: b.cone,
                size: t,
                hermitian: false,
                entries,
                polys: vec![],
                basis: b.basis.clone(),
                embedded_from: Some(bi),
            }
        })
        .collect();
    out
}

/// `H ↦ [[Re H, −Im H], [Im H, Re H]]`.
pub fn embed_matrix(h: &nalgebra::DMatrix<Complex64>) -> nalgebra::DMatrix<f64> {
    let s = h.nrows();
    let mut r = nalgebra::DMatrix::zeros(2 * s, 2 * s);
    for i in 0..s {
        for j in 0..s {
            let v = h[(i, j)];
            r[(i, j)] = v.re;
            r[(i + s, j + s)] = v.re;
            r[(i, j + s)] = -v.im;
            r[(i + s, j)] = v.im;
        }
    }
    r
}

/// Inverse of the Gram embedding: `Q = (X11 + X22) + i(X21 − X12)`.
pub fn compress_gram(x: &nalgebra::DMatrix<f64>) -> nalgebra::DMatrix<Complex64> {
    let s = x.nrows() / 2;
    nalgebra::DMatrix::from_fn(s, s, |i, j| {
        Complex64::new(x[(i, j)] + x[(i + s, j + s)], x[(i + s, j)] - x[(i, j + s)])
    })
}

/// Real SDP variables holding the Dirac moments `z^α z̄^β` of a point.
pub fn dirac_vars(sdp: &SdpProblem, z: &[Complex64]) -> Vec<f64> {
    let mut y = vec![0.0; sdp.num_vars];
    for (key, &(re, im)) in &sdp.index {
        let v = key.alpha.pow(z) * key.beta.pow(&z.iter().map(|c| c.conj()).collect::<Vec<_>>());
        y[re] = v.re;
        if let Some(im) = im {
            y[im] = v.im;
        }
    }
    y
}
