//! Finite-convergence certificates: rank tests, flat extension, joint
//! hyponormality, atom extraction via shift operators, SOS recovery.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::poly::{evaluate, monomials, MultiIndex, Poly, TermKey};
use crate::pop::{Field, Pop, Sense};
use crate::relaxation::{compress_gram, d_k, upper_index, BlockKind, Cone, SdpProblem};
use crate::sdp::{SdpSolution, TOL_PSD};
use crate::symmetry::{detect_invariance, SymmetryKind};

pub const TAU_RANK: f64 = 1e-5;
pub const TOL_COMMUTE: f64 = 1e-6;
pub const TOL_ATOM: f64 = 1e-6;
pub const FEAS_TOL: f64 = 1e-4;
pub const CERT_TOL: f64 = 1e-6;

type CMat = DMatrix<Complex64>;

fn c(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}

// ---- moment tables ----

/// Solved pseudo-moments, keyed canonically.
#[derive(Clone, Debug)]
pub struct MomentTable {
    pub n: usize,
    pub field: Field,
    pub values: BTreeMap<TermKey, Complex64>,
    pub mask: SymmetryKind,
    pub cliques: Vec<Vec<usize>>,
    pub orders: Vec<u32>,
}

impl MomentTable {
    fn canonical(&self, key: &TermKey) -> (TermKey, bool) {
        match self.field {
            Field::Real => (TermKey::new(key.alpha.add(&key.beta), MultiIndex::zero(self.n)), false),
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
        crate::symmetry::SymmetryReport { kind: self.mask }.is_zero(key)
    }

    /// `y_{α,β}` (for real tables, `y_{α+β}`).
    pub fn get(&self, alpha: &MultiIndex, beta: &MultiIndex) -> Option<Complex64> {
        let key = TermKey::new(alpha.clone(), beta.clone());
        let (ck, mirrored) = self.canonical(&key);
        if self.masked(&ck) {
            return Some(Complex64::new(0.0, 0.0));
        }
        self.values.get(&ck).map(|v| if mirrored { v.conj() } else { *v })
    }

    pub fn from_solution(sdp: &SdpProblem, y: &[f64]) -> Self {
        let mut values = BTreeMap::new();
        for (k, &(re, im)) in &sdp.index {
            values.insert(k.clone(), Complex64::new(y[re], im.map_or(0.0, |i| y[i])));
        }
        MomentTable {
            n: sdp.n,
            field: sdp.field,
            values,
            mask: sdp.mask.kind,
            cliques: sdp.plan.cliques.clone(),
            orders: sdp.plan.clique_orders.clone(),
        }
    }

    /// Table of an atomic measure `Σ w_j δ_{z_j}` on a single clique of order `d`.
    pub fn from_atoms(n: usize, field: Field, atoms: &[Atom], d: u32) -> Self {
        let all: Vec<usize> = (0..n).collect();
        let bas = monomials(n, &all, d);
        let mut values = BTreeMap::new();
        let mut t = MomentTable { n, field, values: BTreeMap::new(), mask: SymmetryKind::None, cliques: vec![all], orders: vec![d] };
        for a in &bas {
            for b in &bas {
                let key = TermKey::new(a.clone(), b.clone());
                let (ck, _) = t.canonical(&key);
                let v: Complex64 = atoms
                    .iter()
                    .map(|at| {
                        let zc: Vec<Complex64> = at.point.iter().map(|v| v.conj()).collect();
                        match field {
                            Field::Complex => ck.alpha.pow(&at.point) * ck.beta.pow(&zc) * at.weight,
                            Field::Real => ck.alpha.pow(&at.point) * at.weight,
                        }
                    })
                    .sum();
                values.insert(ck, v);
            }
        }
        t.values = values;
        t
    }

    pub fn riesz(&self, p: &Poly) -> Option<Complex64> {
        let mut acc = Complex64::new(0.0, 0.0);
        for (k, cf) in &p.terms {
            acc += cf * self.get(&k.alpha, &k.beta)?;
        }
        Some(acc)
    }

    /// Moment matrix of order t on clique k (rows `z^α`, columns `z̄^β`).
    pub fn moment_matrix(&self, k: usize, t: u32) -> Option<CMat> {
        let bas = monomials(self.n, &self.cliques[k], t);
        self.matrix_on(&bas)
    }

    fn matrix_on(&self, bas: &[MultiIndex]) -> Option<CMat> {
        let s = bas.len();
        let mut m = CMat::zeros(s, s);
        for i in 0..s {
            for j in 0..s {
                m[(i, j)] = self.get(&bas[i], &bas[j])?;
            }
        }
        Some(m)
    }

    /// Hyponormality block of order `o` for the pair (i, j); `i == j` gives
    /// the univariate 2×2 form.
    pub fn hyponormal_matrix(&self, clique: usize, i: usize, j: usize, o: u32) -> Option<CMat> {
        let n = self.n;
        let bas = monomials(n, &self.cliques[clique], o);
        let shifts: Vec<MultiIndex> = if i == j {
            vec![MultiIndex::zero(n), MultiIndex::unit(n, i)]
        } else {
            vec![MultiIndex::zero(n), MultiIndex::unit(n, i), MultiIndex::unit(n, j)]
        };
        let rows: Vec<(&MultiIndex, &MultiIndex)> =
            shifts.iter().flat_map(|e| bas.iter().map(move |a| (a, e))).collect();
        let s = rows.len();
        let mut m = CMat::zeros(s, s);
        for p in 0..s {
            for q in 0..s {
                let (a, er) = rows[p];
                let (b, ec) = rows[q];
                m[(p, q)] = self.get(&a.add(ec), &b.add(er))?;
            }
        }
        Some(m)
    }
}

// ---- JSON ----

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MomentJson {
    pub alpha: Vec<u32>,
    pub beta: Vec<u32>,
    pub re: f64,
    pub im: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MomentTableJson {
    pub n: usize,
    pub field: Field,
    pub mask: SymmetryKind,
    pub cliques: Vec<Vec<usize>>,
    pub orders: Vec<u32>,
    pub moments: Vec<MomentJson>,
}

impl MomentTable {
    pub fn to_json(&self) -> MomentTableJson {
        MomentTableJson {
            n: self.n,
            field: self.field,
            mask: self.mask,
            cliques: self.cliques.clone(),
            orders: self.orders.clone(),
            moments: self
                .values
                .iter()
                .map(|(k, v)| MomentJson { alpha: k.alpha.0.clone(), beta: k.beta.0.clone(), re: v.re, im: v.im })
                .collect(),
        }
    }

    pub fn from_json(j: &MomentTableJson) -> Result<Self> {
        let mut values = BTreeMap::new();
        for m in &j.moments {
            if m.alpha.len() != j.n || m.beta.len() != j.n {
                return Err(Error::DimensionMismatch { expected: j.n, got: m.alpha.len() });
            }
            values.insert(
                TermKey::new(MultiIndex(m.alpha.clone()), MultiIndex(m.beta.clone())),
                Complex64::new(m.re, m.im),
            );
        }
        if j.cliques.len() != j.orders.len() {
            return Err(Error::InvalidInput("cliques and orders differ in length".into()));
        }
        Ok(MomentTable { n: j.n, field: j.field, values, mask: j.mask, cliques: j.cliques.clone(), orders: j.orders.clone() })
    }
}

// ---- rank and verdicts ----

/// Number of singular values above `τ·σ_max`.
pub fn numeric_rank(m: &CMat, tau: f64) -> usize {
    if m.nrows() == 0 {
        return 0;
    }
    let sv = m.clone().singular_values();
    let smax = sv.max();
    if smax <= 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > tau * smax).count()
}

pub fn min_eig(m: &CMat) -> f64 {
    let h = (m + m.adjoint()) * c(0.5);
    h.symmetric_eigenvalues().min()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CertKind {
    RankOne,
    FlatHyponormal,
    Toeplitz,
    Hankel,
    None,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Verdict {
    pub clique: usize,
    pub t: u32,
    pub rank: Option<usize>,
    pub rank_low: Option<usize>,
    pub rank_one: bool,
    /// Every homogeneous (or parity) block has rank ≤ 1: a Dirac orbit.
    pub rank_one_orbit: bool,
    pub flat: bool,
    pub hypo_min_eig: Option<f64>,
    pub hyponormal: Option<bool>,
    pub certified: Option<CertKind>,
}

/// Which hyponormality shortcut the constraints allow.
pub fn shortcut(pop: &Pop) -> Option<CertKind> {
    if pop.field == Field::Real {
        return Some(CertKind::Hankel);
    }
    let n = pop.n;
    let mut torus = vec![false; n];
    let mut line = vec![false; n];
    for cst in pop.constraints.iter().filter(|c| c.sense == Sense::Eq) {
        let p = &cst.poly;
        for k in 0..n {
            let t = Poly::abs2(n, k).sub(&Poly::constant(n, 1.0));
            if proportional(p, &t) {
                torus[k] = true;
            }
            let h = Poly::var(n, k).sub(&Poly::var(n, k).conj()).scale(Complex64::new(0.0, 1.0));
            if proportional(p, &h) {
                line[k] = true;
            }
        }
    }
    if n > 0 && torus.iter().all(|&b| b) {
        Some(CertKind::Toeplitz)
    } else if n > 0 && line.iter().all(|&b| b) {
        Some(CertKind::Hankel)
    } else {
        None
    }
}

fn proportional(p: &Poly, q: &Poly) -> bool {
    if p.terms.len() != q.terms.len() || q.is_zero() {
        return false;
    }
    let (k0, q0) = q.terms.iter().next().unwrap();
    let r = p.coeff(k0) / q0;
    if r.norm() == 0.0 {
        return false;
    }
    q.terms.iter().all(|(k, v)| (p.coeff(k) - v * r).norm() <= 1e-12 * (1.0 + r.norm()))
}

fn graded_blocks_rank_one(m: &CMat, bas: &[MultiIndex], kind: SymmetryKind, tau: f64) -> bool {
    let grade = |a: &MultiIndex| match kind {
        SymmetryKind::Even => a.degree() % 2,
        _ => a.degree(),
    };
    let mut grades: Vec<u32> = bas.iter().map(grade).collect();
    grades.sort();
    grades.dedup();
    let smax = m.clone().singular_values().max();
    grades.iter().all(|&g| {
        let idx: Vec<usize> = (0..bas.len()).filter(|&i| grade(&bas[i]) == g).collect();
        let sub = CMat::from_fn(idx.len(), idx.len(), |a, b| m[(idx[a], idx[b])]);
        let sv = sub.singular_values();
        sv.iter().filter(|&&s| s > tau * smax).count() <= 1
    })
}

/// Rank / flatness / hyponormality verdicts for every admissible t.
pub fn check_certificate_conditions(table: &MomentTable, pop: &Pop) -> Result<Vec<Verdict>> {
    check_conditions_tau(table, pop, TAU_RANK)
}

pub fn check_conditions_tau(table: &MomentTable, pop: &Pop, tau: f64) -> Result<Vec<Verdict>> {
    let dk = d_k(pop);
    let dmin = pop.d_min();
    let sym = detect_invariance(pop).kind;
    let short = shortcut(pop);
    let mut out = vec![];
    for (k, clique) in table.cliques.iter().enumerate() {
        let d = table.orders[k];
        if d < dmin && table.cliques.len() == 1 {
            return Err(Error::InsufficientOrder { t: d, dk });
        }
        let lo_t = dmin.min(d).max(1);
        for t in lo_t..=(d + dk - 1) {
            let mut v = Verdict {
                clique: k,
                t,
                rank: None,
                rank_low: None,
                rank_one: false,
                rank_one_orbit: false,
                flat: false,
                hypo_min_eig: None,
                hyponormal: None,
                certified: None,
            };
            if t <= d {
                let m = table.moment_matrix(k, t).ok_or_else(|| Error::UnindexedMoment(format!("M_{t}")))?;
                let r = numeric_rank(&m, tau);
                v.rank = Some(r);
                v.rank_one = r == 1;
                if sym != SymmetryKind::None {
                    let bas = monomials(table.n, clique, t);
                    v.rank_one_orbit = graded_blocks_rank_one(&m, &bas, sym, tau);
                }
                if t >= dk {
                    let ml = table.moment_matrix(k, t - dk).unwrap();
                    let rl = numeric_rank(&ml, tau);
                    v.rank_low = Some(rl);
                    v.flat = rl == r;
                }
            }
            if t >= dk && t - dk < d {
                let o = t - dk;
                let mut worst = f64::INFINITY;
                let mut any = false;
                if table.field == Field::Complex {
                    if clique.len() == 1 {
                        if let Some(h) = table.hyponormal_matrix(k, clique[0], clique[0], o) {
                            worst = worst.min(min_eig(&h));
                            any = true;
                        }
                    } else {
                        for a in 0..clique.len() {
                            for b in a + 1..clique.len() {
                                if let Some(h) = table.hyponormal_matrix(k, clique[a], clique[b], o) {
                                    worst = worst.min(min_eig(&h));
                                    any = true;
                                }
                            }
                        }
                    }
                }
                if any {
                    v.hypo_min_eig = Some(worst);
                    v.hyponormal = Some(worst >= -TOL_PSD * 10.0);
                }
            }
            if t <= d && t >= dmin {
                v.certified = if v.rank_one {
                    Some(CertKind::RankOne)
                } else if v.flat && short.is_some() {
                    short
                } else if v.flat && v.hyponormal == Some(true) {
                    Some(CertKind::FlatHyponormal)
                } else {
                    None
                };
            }
            out.push(v);
        }
    }
    Ok(out)
}

// ---- certificates ----

#[derive(Clone, Debug, PartialEq)]
pub struct Atom {
    pub point: Vec<Complex64>,
    pub weight: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GramBlock {
    pub block: BlockKind,
    pub basis: Vec<Vec<u32>>,
    pub re: Vec<Vec<f64>>,
    pub im: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SosCertificate {
    pub lambda: f64,
    pub grams: Vec<GramBlock>,
    /// Scalar-row and equality multipliers by label.
    pub multipliers: Vec<(String, f64)>,
    pub residual: f64,
}

#[derive(Clone, Debug)]
pub struct Certificate {
    pub kind: CertKind,
    pub rank: usize,
    pub t: Option<u32>,
    /// Atoms are representatives of torus (or sign) orbits.
    pub orbit: bool,
    pub atoms: Vec<Atom>,
    pub sos: Option<SosCertificate>,
    pub verdicts: Vec<Verdict>,
    pub diagnostics: Vec<String>,
}

impl Certificate {
    pub fn none(verdicts: Vec<Verdict>, diagnostics: Vec<String>) -> Self {
        Certificate { kind: CertKind::None, rank: 0, t: None, orbit: false, atoms: vec![], sos: None, verdicts, diagnostics }
    }
}

#[derive(Serialize)]
struct AtomJson {
    re: Vec<f64>,
    im: Vec<f64>,
    weight: f64,
}

#[derive(Serialize)]
struct CertificateJson<'a> {
    kind: CertKind,
    rank: usize,
    t: Option<u32>,
    orbit: bool,
    atoms: Vec<AtomJson>,
    weights: Vec<f64>,
    verdicts: &'a [Verdict],
    sos: &'a Option<SosCertificate>,
    diagnostics: &'a [String],
}

impl Serialize for Certificate {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        CertificateJson {
            kind: self.kind,
            rank: self.rank,
            t: self.t,
            orbit: self.orbit,
            atoms: self
                .atoms
                .iter()
                .map(|a| AtomJson {
                    re: a.point.iter().map(|v| v.re).collect(),
                    im: a.point.iter().map(|v| v.im).collect(),
                    weight: a.weight,
                })
                .collect(),
            weights: self.atoms.iter().map(|a| a.weight).collect(),
            verdicts: &self.verdicts,
            sos: &self.sos,
            diagnostics: &self.diagnostics,
        }
        .serialize(s)
    }
}

/// Shift operators and the atoms they encode, for one clique at order t.
pub struct ShiftSystem {
    /// Gram factor; column α is `x_α`.
    pub x: CMat,
    pub shifts: Vec<CMat>,
    pub vars: Vec<usize>,
    pub commutator: f64,
}

pub fn shift_system(table: &MomentTable, k: usize, t: u32, rank: usize) -> Option<ShiftSystem> {
    let n = table.n;
    let vars = table.cliques[k].clone();
    let bas = monomials(n, &vars, t);
    let m = table.matrix_on(&bas)?;
    let h = (&m + m.adjoint()) * c(0.5);
    let eig = h.symmetric_eigen();
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap());
    let s = rank;
    // X = Λ^{1/2} U*, so that X*X = M.
    let mut x = CMat::zeros(s, bas.len());
    for (r, &idx) in order.iter().take(s).enumerate() {
        let l = eig.eigenvalues[idx].max(0.0).sqrt();
        for col in 0..bas.len() {
            x[(r, col)] = eig.eigenvectors[(col, idx)].conj() * l;
        }
    }
    let pos: BTreeMap<&MultiIndex, usize> = bas.iter().enumerate().map(|(i, a)| (a, i)).collect();
    let low: Vec<usize> = (0..bas.len()).filter(|&i| bas[i].degree() < t).collect();
    let xl = CMat::from_fn(s, low.len(), |r, cc| x[(r, low[cc])]);
    let pinv = xl.clone().pseudo_inverse(1e-10).ok()?;
    let mut shifts = vec![];
    for &v in &vars {
        let e = MultiIndex::unit(n, v);
        let xs = CMat::from_fn(s, low.len(), |r, cc| x[(r, pos[&bas[low[cc]].add(&e)])]);
        shifts.push(&xs * &pinv);
    }
    let mut comm: f64 = 0.0;
    for a in 0..shifts.len() {
        for b in a + 1..shifts.len() {
            let cm = &shifts[a] * &shifts[b] - &shifts[b] * &shifts[a];
            let nrm = (shifts[a].norm() * shifts[b].norm()).max(1e-300);
            comm = comm.max(cm.norm() / nrm);
        }
    }
    Some(ShiftSystem { x, shifts, vars, commutator: comm })
}

/// Joint eigenvalues via the Schur form of a random combination; atoms are
/// their conjugates (complex) or the values themselves (real).
fn joint_eigen(sys: &ShiftSystem, field: Field) -> Result<Vec<Vec<Complex64>>> {
    let s = sys.x.nrows();
    let mut last_err = Error::CommutationFailure(sys.commutator);
    for seed in 0..3u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed + seed);
        let coef: Vec<f64> = sys.shifts.iter().map(|_| rng.gen_range(0.5..1.5)).collect();
        let mut comb = CMat::zeros(s, s);
        for (cf, t) in coef.iter().zip(&sys.shifts) {
            comb += t * c(*cf);
        }
        let schur = nalgebra::linalg::Schur::new(comb);
        let (q, tri) = schur.unpack();
        let ev: Vec<Complex64> = (0..s).map(|i| tri[(i, i)]).collect();
        let mut min_sep = f64::INFINITY;
        for a in 0..s {
            for b in a + 1..s {
                min_sep = min_sep.min((ev[a] - ev[b]).norm());
            }
        }
        let spread = ev.iter().map(|v| v.norm()).fold(1.0, f64::max);
        if s > 1 && min_sep < 1e-6 * spread {
            last_err = Error::NumericalFailure("eigenvalue clustering in joint diagonalization".into());
            continue;
        }
        let mut atoms = vec![vec![Complex64::new(0.0, 0.0); sys.vars.len()]; s];
        for (kk, t) in sys.shifts.iter().enumerate() {
            let d = q.adjoint() * t * &q;
            for (j, atom) in atoms.iter_mut().enumerate() {
                atom[kk] = match field {
                    Field::Complex => d[(j, j)].conj(),
                    Field::Real => Complex64::new(d[(j, j)].re, 0.0),
                };
            }
        }
        return Ok(atoms);
    }
    Err(last_err)
}

/// Weights by least squares on the moment matrix entries.
fn fit_weights(table: &MomentTable, k: usize, t: u32, pts: &[Vec<Complex64>]) -> Vec<f64> {
    let n = table.n;
    let vars = &table.cliques[k];
    let bas = monomials(n, vars, t);
    let full = |p: &Vec<Complex64>| {
        let mut z = vec![Complex64::new(0.0, 0.0); n];
        for (i, &v) in vars.iter().enumerate() {
            z[v] = p[i];
        }
        z
    };
    let zs: Vec<Vec<Complex64>> = pts.iter().map(full).collect();
    let mut rows = vec![];
    let mut rhs = vec![];
    for a in &bas {
        for b in &bas {
            let y = table.get(a, b).unwrap_or_default();
            let vals: Vec<Complex64> = zs
                .iter()
                .map(|z| {
                    let zc: Vec<Complex64> = z.iter().map(|v| v.conj()).collect();
                    match table.field {
                        Field::Complex => a.pow(z) * b.pow(&zc),
                        Field::Real => a.add(b).pow(z),
                    }
                })
                .collect();
            rows.push(vals.iter().map(|v| v.re).collect::<Vec<_>>());
            rhs.push(y.re);
            rows.push(vals.iter().map(|v| v.im).collect::<Vec<_>>());
            rhs.push(y.im);
        }
    }
    let a = DMatrix::from_fn(rows.len(), pts.len(), |i, j| rows[i][j]);
    let b = DVector::from_vec(rhs);
    let svd = a.svd(true, true);
    match svd.solve(&b, 1e-12) {
        Ok(w) => w.iter().copied().collect(),
        Err(_) => vec![0.0; pts.len()],
    }
}

/// Atoms of clique k at order t given the verdict.
fn clique_atoms(table: &MomentTable, k: usize, v: &Verdict) -> Result<(Vec<Vec<Complex64>>, Vec<f64>)> {
    let n = table.n;
    let vars = &table.cliques[k];
    let y00 = table.get(&MultiIndex::zero(n), &MultiIndex::zero(n)).unwrap_or(c(1.0)).re;
    if v.rank_one {
        let p: Vec<Complex64> = vars
            .iter()
            .map(|&i| table.get(&MultiIndex::unit(n, i), &MultiIndex::zero(n)).unwrap_or_default() / y00)
            .collect();
        return Ok((vec![p], vec![y00]));
    }
    let r = v.rank.unwrap_or(0);
    let sys = shift_system(table, k, v.t, r).ok_or_else(|| Error::NumericalFailure("shift system".into()))?;
    if sys.commutator > TOL_COMMUTE * 100.0 {
        return Err(Error::CommutationFailure(sys.commutator));
    }
    let pts = joint_eigen(&sys, table.field)?;
    let w = fit_weights(table, k, v.t, &pts);
    Ok((pts, w))
}

/// Extract atoms from the lowest certified order of each clique.
pub fn extract_atoms(table: &MomentTable, pop: &Pop) -> Result<Certificate> {
    let verdicts = check_certificate_conditions(table, pop)?;
    extract_with_verdicts(table, pop, verdicts)
}

pub fn extract_with_verdicts(table: &MomentTable, pop: &Pop, verdicts: Vec<Verdict>) -> Result<Certificate> {
    let mut diags = vec![];
    let mut kinds = vec![];
    let mut per_clique: Vec<(Vec<Vec<Complex64>>, Vec<f64>)> = vec![];
    let mut t_used = None;
    let sym = detect_invariance(pop).kind;
    let orbit_ok = table.cliques.len() == 1
        && verdicts.iter().any(|v| v.rank_one_orbit && v.t >= pop.d_min() && v.rank.is_some());
    for k in 0..table.cliques.len() {
        let cert = verdicts
            .iter()
            .filter(|v| v.clique == k && v.certified.is_some())
            .min_by_key(|v| (v.certified != Some(CertKind::RankOne), v.t));
        match cert {
            Some(v) => {
                kinds.push(v.certified.unwrap());
                t_used = Some(t_used.map_or(v.t, |t: u32| t.max(v.t)));
                per_clique.push(clique_atoms(table, k, v)?);
            }
            None => {
                if orbit_ok {
                    let p = crate::multiorder::closest_dirac(table)?;
                    let atoms = vec![Atom { point: p, weight: 1.0 }];
                    check_feasible(pop, &atoms, &mut diags)?;
                    // an orbit is only a minimizer if it attains the relaxation value
                    if let Some(ly) = table.riesz(&pop.objective) {
                        let fz = evaluate(&pop.objective, &atoms[0].point)?;
                        if (fz - ly.re).abs() > 1e-5 * (1.0 + ly.re.abs()) {
                            diags.push(format!("orbit point objective {fz:.8} differs from L_y(f) = {:.8}", ly.re));
                            return Ok(Certificate::none(verdicts, diags));
                        }
                    }
                    let t = verdicts.iter().filter(|v| v.rank_one_orbit).map(|v| v.t).max();
                    diags.push(format!("{sym:?} orbit: atom is defined up to the symmetry group"));
                    return Ok(Certificate {
                        kind: CertKind::RankOne,
                        rank: 1,
                        t,
                        orbit: true,
                        atoms,
                        sos: None,
                        verdicts,
                        diagnostics: diags,
                    });
                }
                return Ok(Certificate::none(verdicts, vec![format!("clique {k}: no certified order")]));
            }
        }
    }
    if pop.ball_radius.is_none() && kinds.iter().any(|&k| k != CertKind::RankOne) {
        diags.push("no ball constraint declared; rank-S certificate assumes a bounded feasible set".into());
    }
    let atoms = stitch(table, &per_clique)?;
    check_feasible(pop, &atoms, &mut diags)?;
    let kind = if kinds.iter().all(|&k| k == CertKind::RankOne) {
        CertKind::RankOne
    } else {
        *kinds.iter().find(|&&k| k != CertKind::RankOne).unwrap()
    };
    Ok(Certificate { kind, rank: atoms.len(), t: t_used, orbit: false, atoms, sos: None, verdicts, diagnostics: diags })
}

fn check_feasible(pop: &Pop, atoms: &[Atom], diags: &mut Vec<String>) -> Result<()> {
    for (j, a) in atoms.iter().enumerate() {
        for (i, cst) in pop.constraints.iter().enumerate() {
            let g = evaluate(&cst.poly, &a.point).unwrap_or(f64::NAN);
            let tol = pop.constraint_tol(i, FEAS_TOL * (1.0 + cst.poly.max_coeff()));
            let bad = match cst.sense {
                Sense::Ge => g < -tol,
                Sense::Eq => g.abs() > tol,
            };
            if bad || g.is_nan() {
                diags.push(format!("atom {j} violates {} by {g:.3e}", pop.label(i)));
                return Err(Error::NumericalFailure(format!("extracted atom {j} is infeasible for {}", pop.label(i))));
            }
        }
    }
    Ok(())
}

fn stitch(table: &MomentTable, per: &[(Vec<Vec<Complex64>>, Vec<f64>)]) -> Result<Vec<Atom>> {
    let n = table.n;
    let (p0, w0) = &per[0];
    let mut atoms: Vec<(Vec<Option<Complex64>>, f64)> = p0
        .iter()
        .zip(w0)
        .map(|(p, &w)| {
            let mut z = vec![None; n];
            for (i, &v) in table.cliques[0].iter().enumerate() {
                z[v] = Some(p[i]);
            }
            (z, w)
        })
        .collect();
    for (k, (pk, _)) in per.iter().enumerate().skip(1) {
        let vars = &table.cliques[k];
        if pk.len() != atoms.len() {
            return Err(Error::StitchFailure);
        }
        let shared: Vec<usize> = (0..vars.len()).filter(|&i| atoms[0].0[vars[i]].is_some()).collect();
        if shared.is_empty() && atoms.len() > 1 {
            return Err(Error::StitchFailure);
        }
        let mut used = vec![false; pk.len()];
        for atom in atoms.iter_mut() {
            let mut best: Option<(f64, usize)> = None;
            for (j, p) in pk.iter().enumerate() {
                if used[j] {
                    continue;
                }
                let dist = shared.iter().map(|&i| (atom.0[vars[i]].unwrap() - p[i]).norm()).fold(0.0, f64::max);
                if best.is_none_or(|b| dist < b.0) {
                    best = Some((dist, j));
                }
            }
            let (dist, j) = best.ok_or(Error::StitchFailure)?;
            if dist > 1e-4 {
                return Err(Error::StitchFailure);
            }
            used[j] = true;
            for (i, &v) in vars.iter().enumerate() {
                if atom.0[v].is_none() {
                    atom.0[v] = Some(pk[j][i]);
                }
            }
        }
    }
    let mut out: Vec<Atom> = atoms
        .into_iter()
        .map(|(z, w)| Atom { point: z.into_iter().map(|v| v.unwrap_or_default()).collect(), weight: w })
        .collect();
    out.retain(|a| a.weight > TOL_ATOM);
    Ok(out)
}

// ---- SOS ----

/// Hermitian (or real) Gram matrices of the dual blocks, in source-block order.
pub fn gram_matrices(sdp: &SdpProblem, embedded: &SdpProblem, sol: &SdpSolution) -> Vec<Option<CMat>> {
    embedded
        .blocks
        .iter()
        .enumerate()
        .map(|(b, blk)| {
            let x = sol.block_duals.get(b)?.as_ref()?;
            Some(if blk.embedded_from.is_some() {
                compress_gram(x)
            } else {
                let _ = &sdp.blocks[b];
                x.map(|v| Complex64::new(v, 0.0))
            })
        })
        .collect()
}

/// Rebuild `f − λ = Σ σ_b + Σ x_r g_r + Σ u_e p_e` from the dual and check it
/// coefficient-wise (ignoring masked monomials).
pub fn extract_sos(sdp: &SdpProblem, embedded: &SdpProblem, sol: &SdpSolution) -> Result<SosCertificate> {
    let sos = sos_identity(sdp, embedded, sol);
    let scale = 1.0 + sdp.objective_poly.max_coeff();
    if sos.residual > CERT_TOL * scale {
        return Err(Error::IdentityResidualTooLarge(sos.residual));
    }
    Ok(sos)
}

pub fn sos_identity(sdp: &SdpProblem, embedded: &SdpProblem, sol: &SdpSolution) -> SosCertificate {
    let n = sdp.n;
    let grams = gram_matrices(sdp, embedded, sol);
    let mut r = sdp.objective_poly.clone();
    let mut out_grams = vec![];
    let complex = sdp.field == Field::Complex;
    for (b, blk) in sdp.blocks.iter().enumerate() {
        let s = blk.size;
        match blk.cone {
            Cone::Psd => {
                let Some(q) = &grams[b] else { continue };
                for i in 0..s {
                    for j in i..s {
                        let p = &blk.polys[upper_index(s, i, j)].poly;
                        if i == j {
                            r = r.sub(&p.scale(q[(i, i)]));
                        } else if complex {
                            r = r.sub(&p.scale(q[(i, j)].conj()));
                            r = r.sub(&p.conj().scale(q[(i, j)]));
                        } else {
                            r = r.sub(&p.scale(q[(i, j)] * 2.0));
                        }
                    }
                }
                out_grams.push(GramBlock {
                    block: blk.kind.clone(),
                    basis: blk.basis.iter().map(|a| a.0.clone()).collect(),
                    re: (0..s).map(|i| (0..s).map(|j| q[(i, j)].re).collect()).collect(),
                    im: (0..s).map(|i| (0..s).map(|j| q[(i, j)].im).collect()).collect(),
                });
            }
            Cone::Zero => {
                for &(idx, ur, ui) in &sol.zero_duals[b] {
                    let p = &blk.polys[idx].poly;
                    if complex {
                        let re = p.add(&p.conj()).scale_re(0.5);
                        let im = p.sub(&p.conj()).scale(Complex64::new(0.0, -0.5));
                        r = r.sub(&re.scale_re(ur)).sub(&im.scale_re(ui));
                    } else {
                        r = r.sub(&p.scale_re(ur));
                    }
                }
            }
        }
    }
    let mut multipliers = vec![];
    let mut lambda = 0.0;
    for (ri, row) in sdp.rows.iter().enumerate() {
        let u = sol.row_duals[ri];
        if row.constraint.is_none() && row.label == "normalization" {
            lambda = u;
        }
        multipliers.push((row.label.clone(), u));
        r = r.sub(&row.poly.scale_re(u));
    }
    let mask = crate::symmetry::SymmetryReport { kind: sdp.mask.kind };
    let residual = r
        .terms
        .iter()
        .filter(|(k, _)| {
            let key = if complex { (*k).clone() } else { TermKey::new(k.alpha.add(&k.beta), MultiIndex::zero(n)) };
            !mask.is_zero(&key)
        })
        .map(|(_, v)| v.norm())
        .fold(0.0, f64::max);
    SosCertificate { lambda, grams: out_grams, multipliers, residual }
}
