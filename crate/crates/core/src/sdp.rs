//! Primal-dual interior-point solver for block SDPs in inequality form:
//!
//! ```text
//!   minimize  cᵀy
//!   s.t.      F_b(y) = F_b0 + Σ y_i F_bi ⪰ 0     (PSD blocks)
//!             a_r(y) ≥ 0                        (scalar rows)
//!             e_r(y) = 0                        (equalities, pinned blocks)
//! ```
//!
//! Infeasible path-following with Nesterov–Todd scaling and a Mehrotra
//! predictor-corrector. Blocks are dense; the Schur complement is assembled
//! from sparse coefficient matrices.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pop::Sense;
use crate::relaxation::{upper_index, Affine, Cone, SdpProblem};

pub const TOL_SDP: f64 = 1e-8;
pub const TOL_PSD: f64 = 1e-7;
/// Relative residual along a normalized Farkas ray.
const RAY_TOL: f64 = 1e-8;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SdpOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub step: f64,
    pub verbose: bool,
}

impl Default for SdpOptions {
    fn default() -> Self {
        SdpOptions { tol: TOL_SDP, max_iter: 150, step: 0.95, verbose: false }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SdpStatus {
    Optimal,
    NearOptimal,
    Infeasible,
    Unbounded,
    Stalled,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct Residuals {
    pub primal: f64,
    pub dual: f64,
    pub gap: f64,
}

#[derive(Clone, Debug)]
pub struct SdpSolution {
    pub y: Vec<f64>,
    /// Dual matrix per problem block (PSD cones only).
    pub block_duals: Vec<Option<DMatrix<f64>>>,
    /// Multipliers of pinned blocks: (upper index, real-part, imaginary-part).
    pub zero_duals: Vec<Vec<(usize, f64, f64)>>,
    /// Multiplier per scalar row.
    pub row_duals: Vec<f64>,
    pub primal_obj: f64,
    pub dual_obj: f64,
    pub status: SdpStatus,
    pub residuals: Residuals,
    pub iterations: usize,
}

// ---- standard form ----

type Triplets = Vec<(usize, usize, f64)>;

struct PsdData {
    size: usize,
    f0: DMatrix<f64>,
    /// (variable, upper-triangle triplets)
    fi: Vec<(usize, Triplets)>,
    src: usize,
    scale: f64,
}

#[derive(Clone, Copy)]
enum EqSrc {
    Row(usize),
    Block { block: usize, idx: usize, imag: bool },
}

struct Std {
    m: usize,
    c: DVector<f64>,
    cscale: f64,
    psd: Vec<PsdData>,
    lp: Vec<(Affine, usize, f64)>,
    eq: Vec<(Affine, EqSrc, f64)>,
}

fn affine_norm(a: &Affine) -> f64 {
    a.terms.iter().map(|t| t.1 * t.1).sum::<f64>().sqrt()
}

fn build_std(sdp: &SdpProblem) -> Result<Std> {
    let m = sdp.num_vars;
    let mut c = DVector::zeros(m);
    for &(i, v) in &sdp.objective.terms {
        c[i] += v;
    }
    let cn = c.amax();
    let cscale = if cn > 0.0 { cn } else { 1.0 };
    let mut psd = vec![];
    let mut eq = vec![];
    for (bi, b) in sdp.blocks.iter().enumerate() {
        match b.cone {
            Cone::Psd => {
                if b.hermitian {
                    return Err(Error::InvalidInput("solver needs real symmetric blocks; embed first".into()));
                }
                let s = b.size;
                let mut f0 = DMatrix::zeros(s, s);
                let mut per_var: std::collections::BTreeMap<usize, Triplets> = Default::default();
                let mut maxc: f64 = 0.0;
                for i in 0..s {
                    for j in i..s {
                        let e = &b.entries[upper_index(s, i, j)].re;
                        f0[(i, j)] = e.constant;
                        f0[(j, i)] = e.constant;
                        for &(v, cf) in &e.terms {
                            per_var.entry(v).or_default().push((i, j, cf));
                            maxc = maxc.max(cf.abs());
                        }
                    }
                }
                let scale = if maxc > 0.0 { maxc } else { 1.0 };
                f0 /= scale;
                let fi = per_var
                    .into_iter()
                    .map(|(v, t)| (v, t.into_iter().map(|(i, j, x)| (i, j, x / scale)).collect()))
                    .collect();
                psd.push(PsdData { size: s, f0, fi, src: bi, scale });
            }
            Cone::Zero => {
                let s = b.size;
                for i in 0..s {
                    for j in i..s {
                        let idx = upper_index(s, i, j);
                        let e = &b.entries[idx];
                        for (part, imag) in [(&e.re, false), (&e.im, true)] {
                            if part.terms.is_empty() {
                                continue;
                            }
                            let nrm = affine_norm(part);
                            eq.push((part.scale(1.0 / nrm), EqSrc::Block { block: bi, idx, imag }, nrm));
                        }
                    }
                }
            }
        }
    }
    let mut lp = vec![];
    for (ri, r) in sdp.rows.iter().enumerate() {
        let nrm = affine_norm(&r.expr);
        if nrm == 0.0 {
            // constant row: feasible or not, nothing to optimize
            let ok = match r.sense {
                Sense::Ge => r.expr.constant >= -TOL_SDP,
                Sense::Eq => r.expr.constant.abs() <= TOL_SDP,
            };
            if !ok {
                return Err(Error::InvalidInput(format!("constant row `{}` is infeasible", r.label)));
            }
            continue;
        }
        match r.sense {
            Sense::Ge => lp.push((r.expr.scale(1.0 / nrm), ri, nrm)),
            Sense::Eq => eq.push((r.expr.scale(1.0 / nrm), EqSrc::Row(ri), nrm)),
        }
    }
    let eq = independent_rows(eq, m);
    Ok(Std { m, c: c / cscale, cscale, psd, lp, eq })
}

/// Drop linearly dependent equality rows (modified Gram–Schmidt, twice).
fn independent_rows(rows: Vec<(Affine, EqSrc, f64)>, m: usize) -> Vec<(Affine, EqSrc, f64)> {
    let mut basis: Vec<DVector<f64>> = vec![];
    let mut keep = vec![];
    for r in rows {
        let mut v = DVector::zeros(m);
        for &(i, c) in &r.0.terms {
            v[i] += c;
        }
        let n0 = v.norm();
        if n0 == 0.0 {
            continue;
        }
        for _ in 0..2 {
            for q in &basis {
                let d = q.dot(&v);
                v.axpy(-d, q, 1.0);
            }
        }
        let n1 = v.norm();
        if n1 > 1e-9 * n0 {
            basis.push(v / n1);
            keep.push(r);
        }
    }
    keep
}

// ---- dense helpers ----

fn sym(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

fn apply_f(p: &PsdData, dy: &DVector<f64>, with_const: bool) -> DMatrix<f64> {
    let mut out = if with_const { p.f0.clone() } else { DMatrix::zeros(p.size, p.size) };
    for (v, t) in &p.fi {
        let a = dy[*v];
        if a == 0.0 {
            continue;
        }
        for &(i, j, c) in t {
            out[(i, j)] += a * c;
            if i != j {
                out[(j, i)] += a * c;
            }
        }
    }
    out
}

/// `⟨F_v, X⟩` for every variable touching the block, accumulated into `out`.
fn adjoint(p: &PsdData, x: &DMatrix<f64>, out: &mut DVector<f64>) {
    for (v, t) in &p.fi {
        let mut acc = 0.0;
        for &(i, j, c) in t {
            acc += if i == j { c * x[(i, i)] } else { c * (x[(i, j)] + x[(j, i)]) };
        }
        out[*v] += acc;
    }
}

fn affine_eval(a: &Affine, y: &DVector<f64>) -> f64 {
    a.constant + a.terms.iter().map(|&(i, c)| c * y[i]).sum::<f64>()
}

fn affine_lin(a: &Affine, y: &DVector<f64>) -> f64 {
    a.terms.iter().map(|&(i, c)| c * y[i]).sum::<f64>()
}

/// Largest α ≤ 1/step-cap with `X + αΔX ⪰ 0`, given a Cholesky factor of X.
fn max_step(lx: &DMatrix<f64>, dx: &DMatrix<f64>) -> f64 {
    let linv = match lx.clone().try_inverse() {
        Some(v) => v,
        None => return 0.0,
    };
    let t = sym(&(&linv * dx * linv.transpose()));
    let lmin = t.symmetric_eigenvalues().min();
    if lmin >= 0.0 {
        f64::INFINITY
    } else {
        -1.0 / lmin
    }
}

fn chol(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    nalgebra::linalg::Cholesky::new(sym(m)).map(|c| c.l())
}

struct Scaling {
    g: DMatrix<f64>,
    ginv: DMatrix<f64>,
    w: DMatrix<f64>,
    lam: DVector<f64>,
    lx: DMatrix<f64>,
    ls: DMatrix<f64>,
}

fn nt_scaling(x: &DMatrix<f64>, s: &DMatrix<f64>) -> Option<Scaling> {
    let lx = chol(x)?;
    let ls = chol(s)?;
    let svd = (ls.transpose() * &lx).svd(true, true);
    let u_t = svd.v_t?;
    let v = u_t.transpose();
    let sv = svd.singular_values;
    let k = sv.len();
    let mut isq = DMatrix::zeros(k, k);
    let mut sq = DMatrix::zeros(k, k);
    for i in 0..k {
        if sv[i] <= 0.0 {
            return None;
        }
        isq[(i, i)] = 1.0 / sv[i].sqrt();
        sq[(i, i)] = sv[i].sqrt();
    }
    let g = &lx * &v * &isq;
    let linv = lx.clone().try_inverse()?;
    let ginv = &sq * v.transpose() * linv;
    let w = &g * g.transpose();
    Some(Scaling { g, ginv, w, lam: sv, lx, ls })
}

// ---- linear algebra for the Newton system ----

/// Orthonormal splitting of y-space by the equality rows `E`:
/// `Eᵀ = Q1 R`, and `N` spans the null space of `E`.
struct EqSpace {
    q1: DMatrix<f64>,
    r: DMatrix<f64>,
    n: DMatrix<f64>,
}

impl EqSpace {
    fn new(eq: &[(Affine, EqSrc, f64)], m: usize) -> Option<Self> {
        if eq.is_empty() {
            return None;
        }
        let mut et = DMatrix::<f64>::zeros(m, eq.len());
        for (r, a) in eq.iter().enumerate() {
            for &(i, c) in &a.0.terms {
                et[(i, r)] += c;
            }
        }
        let qr = et.qr();
        let q1 = qr.q();
        let r = qr.r();
        let proj = DMatrix::<f64>::identity(m, m) - &q1 * q1.transpose();
        let eig = sym(&proj).symmetric_eigen();
        let cols: Vec<usize> = (0..m).filter(|&i| eig.eigenvalues[i] > 0.5).collect();
        let n = DMatrix::from_fn(m, cols.len(), |i, j| eig.eigenvectors[(i, cols[j])]);
        Some(EqSpace { q1, r, n })
    }
}

fn regularized_cholesky(a: &DMatrix<f64>) -> Option<nalgebra::linalg::Cholesky<f64, nalgebra::Dyn>> {
    let scale = a.diagonal().amax().max(1e-300);
    let mut reg = 0.0;
    for _ in 0..8 {
        let mut b = sym(a);
        for i in 0..b.nrows() {
            b[(i, i)] += reg * scale;
        }
        if let Some(c) = nalgebra::linalg::Cholesky::new(b) {
            return Some(c);
        }
        reg = if reg == 0.0 { 1e-14 } else { reg * 100.0 };
    }
    None
}

/// Solve with a (possibly regularized) factor, refining against `a`.
fn refine(chol: &nalgebra::linalg::Cholesky<f64, nalgebra::Dyn>, a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let mut x = chol.solve(b);
    let bn = b.norm();
    for _ in 0..3 {
        let r = b - a * &x;
        if r.norm() <= 1e-15 * bn {
            break;
        }
        x += chol.solve(&r);
    }
    x
}

// ---- solver ----

struct Iterate {
    y: DVector<f64>,
    xs: Vec<DMatrix<f64>>,
    ss: Vec<DMatrix<f64>>,
    xl: DVector<f64>,
    sl: DVector<f64>,
    u: DVector<f64>,
}

pub fn solve_sdp(sdp: &SdpProblem, opts: &SdpOptions) -> Result<SdpSolution> {
    if sdp.num_vars == 0 {
        return Err(Error::InvalidInput("SDP has no variables".into()));
    }
    let st = build_std(sdp)?;
    let m = st.m;
    let nb = st.psd.len();
    let nl = st.lp.len();
    let ne = st.eq.len();
    let nu: usize = st.psd.iter().map(|p| p.size).sum::<usize>() + nl;
    let nu = nu.max(1) as f64;

    let init = 1.0;
    let mut it = Iterate {
        y: DVector::zeros(m),
        xs: st.psd.iter().map(|p| DMatrix::identity(p.size, p.size) * init).collect(),
        ss: st.psd.iter().map(|p| DMatrix::identity(p.size, p.size) * init).collect(),
        xl: DVector::from_element(nl, init),
        sl: DVector::from_element(nl, init),
        u: DVector::zeros(ne),
    };

    let bnorm = 1.0
        + st.psd.iter().map(|p| p.f0.norm()).fold(0.0, f64::max)
        + st.lp.iter().map(|r| r.0.constant.abs()).fold(0.0, f64::max)
        + st.eq.iter().map(|r| r.0.constant.abs()).fold(0.0, f64::max);
    let cnorm = 1.0 + st.c.norm();

    let eqs = EqSpace::new(&st.eq, m);
    let mut status = SdpStatus::Stalled;
    let mut iters = 0;
    let mut res = Residuals::default();
    let mut best: Option<(f64, Iterate)> = None;
    let mut stall = 0usize;

    for iter in 0..opts.max_iter {
        iters = iter;
        // residuals
        let rp: Vec<DMatrix<f64>> =
            st.psd.iter().zip(&it.ss).map(|(p, s)| apply_f(p, &it.y, true) - s).collect();
        let rpl = DVector::from_iterator(nl, st.lp.iter().enumerate().map(|(r, a)| affine_eval(&a.0, &it.y) - it.sl[r]));
        let rpe = DVector::from_iterator(ne, st.eq.iter().map(|a| -affine_eval(&a.0, &it.y)));
        let mut rd = st.c.clone();
        {
            let mut at = DVector::zeros(m);
            for (p, x) in st.psd.iter().zip(&it.xs) {
                adjoint(p, x, &mut at);
            }
            for (r, a) in st.lp.iter().enumerate() {
                for &(i, c) in &a.0.terms {
                    at[i] += c * it.xl[r];
                }
            }
            for (r, a) in st.eq.iter().enumerate() {
                for &(i, c) in &a.0.terms {
                    at[i] += c * it.u[r];
                }
            }
            rd -= at;
        }
        let gap_c: f64 = it.xs.iter().zip(&it.ss).map(|(x, s)| x.dot(s)).sum::<f64>() + it.xl.dot(&it.sl);
        let mu = gap_c / nu;
        let pobj = st.c.dot(&it.y);
        let dobj = -it.xs.iter().zip(&st.psd).map(|(x, p)| x.dot(&p.f0)).sum::<f64>()
            - st.lp.iter().enumerate().map(|(r, a)| a.0.constant * it.xl[r]).sum::<f64>()
            - st.eq.iter().enumerate().map(|(r, a)| a.0.constant * it.u[r]).sum::<f64>();
        let pinf = rp.iter().map(|r| r.norm()).fold(0.0, f64::max).max(rpl.amax()).max(rpe.amax()) / bnorm;
        let dinf = rd.norm() / cnorm;
        let gap = (pobj - dobj).abs() / (1.0 + pobj.abs() + dobj.abs());
        res = Residuals { primal: pinf, dual: dinf, gap };
        if opts.verbose {
            eprintln!("{iter:3} pobj {pobj:+.9e} dobj {dobj:+.9e} pinf {pinf:.2e} dinf {dinf:.2e} gap {gap:.2e} mu {mu:.2e}");
        }
        let merit = pinf.max(dinf).max(gap);
        if best.as_ref().is_none_or(|b| merit < b.0) {
            best = Some((merit, Iterate { y: it.y.clone(), xs: it.xs.clone(), ss: it.ss.clone(), xl: it.xl.clone(), sl: it.sl.clone(), u: it.u.clone() }));
            stall = 0;
        } else if !(pinf <= opts.tol && pobj < -1e3 * bnorm) {
            // a feasible primal running off to −∞ is progress towards a ray
            stall += 1;
        }
        if pinf <= opts.tol && dinf <= opts.tol && gap <= opts.tol {
            status = SdpStatus::Optimal;
            break;
        }
        if !(pobj.is_finite() && dobj.is_finite() && mu.is_finite()) {
            break;
        }
        // Farkas rays: a dual iterate with A*(X) ≈ 0 and −⟨F0, X⟩ → +∞ proves
        // primal infeasibility; a primal one with F_lin(y) ⪰ 0 and c·y → −∞
        // proves unboundedness. Residuals are measured along the normalized ray.
        let c_abs = st.c.norm();
        if pinf > 1e-6 && dobj > 0.0 && (c_abs + dinf * cnorm) / dobj < RAY_TOL {
            status = SdpStatus::Infeasible;
            break;
        }
        if dinf > 1e-6 && pobj < 0.0 && (1.0 + pinf) * bnorm / -pobj < RAY_TOL {
            status = SdpStatus::Unbounded;
            break;
        }
        if stall > 20 {
            break;
        }

        // scaling
        let mut scal = Vec::with_capacity(nb);
        for b in 0..nb {
            match nt_scaling(&it.xs[b], &it.ss[b]) {
                Some(s) => scal.push(s),
                None => {
                    status = SdpStatus::Stalled;
                    return finish(sdp, &st, best.map(|b| b.1).unwrap_or(it), status, res, iters, opts);
                }
            }
        }
        // Schur complement
        let mut h = DMatrix::<f64>::zeros(m, m);
        for (p, sc) in st.psd.iter().zip(&scal) {
            let w = &sc.w;
            let s = p.size;
            for (jj, (vj, tj)) in p.fi.iter().enumerate() {
                let mut pj = DMatrix::<f64>::zeros(s, s);
                for &(k, l, c) in tj {
                    let wk = w.column(k);
                    let wl = w.column(l);
                    if k == l {
                        pj.ger(c, &wk, &wk, 1.0);
                    } else {
                        pj.ger(c, &wk, &wl, 1.0);
                        pj.ger(c, &wl, &wk, 1.0);
                    }
                }
                for (vi, ti) in p.fi.iter().take(jj + 1) {
                    let mut acc = 0.0;
                    for &(k, l, c) in ti {
                        acc += if k == l { c * pj[(k, k)] } else { c * (pj[(k, l)] + pj[(l, k)]) };
                    }
                    h[(*vi, *vj)] += acc;
                    if vi != vj {
                        h[(*vj, *vi)] += acc;
                    }
                }
            }
        }
        for (r, a) in st.lp.iter().enumerate() {
            let d = it.xl[r] / it.sl[r];
            for &(i, ci) in &a.0.terms {
                for &(j, cj) in &a.0.terms {
                    h[(i, j)] += d * ci * cj;
                }
            }
        }
        let hn0 = match &eqs {
            Some(e) => e.n.transpose() * &h * &e.n,
            None => h.clone(),
        };
        let Some(chol) = regularized_cholesky(&hn0) else {
            status = SdpStatus::Stalled;
            break;
        };
        // one Newton solve for a given complementarity target
        let direction = |rc_scaled: &[DMatrix<f64>], rc_lp: &DVector<f64>| -> Option<(DVector<f64>, Vec<DMatrix<f64>>, Vec<DMatrix<f64>>, DVector<f64>, DVector<f64>, DVector<f64>)> {
            let mut rhs = DVector::zeros(m);
            let mut ds_scaled = vec![];
            for (b, (p, sc)) in st.psd.iter().zip(&scal).enumerate() {
                let s = p.size;
                let lam = &sc.lam;
                let dmat = DMatrix::from_fn(s, s, |i, j| 2.0 * rc_scaled[b][(i, j)] / (lam[i] + lam[j]));
                let gdg = &sc.g * &dmat * sc.g.transpose();
                let wrw = &sc.w * &rp[b] * &sc.w;
                let t = gdg - wrw;
                let mut acc = DVector::zeros(m);
                adjoint(p, &t, &mut acc);
                for i in 0..m {
                    rhs[i] += acc[i];
                }
                ds_scaled.push(dmat);
            }
            for (r, a) in st.lp.iter().enumerate() {
                let coef = rc_lp[r] / it.sl[r] - it.xl[r] / it.sl[r] * rpl[r];
                for &(i, c) in &a.0.terms {
                    rhs[i] += c * coef;
                }
            }
            for i in 0..m {
                rhs[i] -= rd[i];
            }
            let (dy, du) = match &eqs {
                Some(e) => {
                    let w = e.r.transpose().solve_lower_triangular(&rpe)?;
                    let dy_p = &e.q1 * w;
                    let b = e.n.transpose() * (&rhs - &h * &dy_p);
                    let dz = refine(&chol, &hn0, &b);
                    let dy = dy_p + &e.n * dz;
                    let du = e.r.solve_upper_triangular(&(e.q1.transpose() * (&h * &dy - &rhs)))?;
                    (dy, du)
                }
                None => (refine(&chol, &hn0, &rhs), DVector::zeros(0)),
            };
            let mut dss = vec![];
            let mut dxs = vec![];
            for (b, (p, sc)) in st.psd.iter().zip(&scal).enumerate() {
                let ds = sym(&(apply_f(p, &dy, false) + &rp[b]));
                let dx = sym(&(&sc.g * &ds_scaled[b] * sc.g.transpose() - &sc.w * &ds * &sc.w));
                dss.push(ds);
                dxs.push(dx);
            }
            let dsl = DVector::from_iterator(nl, st.lp.iter().enumerate().map(|(r, a)| affine_lin(&a.0, &dy) + rpl[r]));
            let dxl = DVector::from_iterator(nl, (0..nl).map(|r| (rc_lp[r] - it.xl[r] * dsl[r]) / it.sl[r]));
            Some((dy, dss, dxs, dsl, dxl, du))
        };

        let steps = |dss: &[DMatrix<f64>], dxs: &[DMatrix<f64>], dsl: &DVector<f64>, dxl: &DVector<f64>| -> (f64, f64) {
            let mut ap = f64::INFINITY;
            let mut ad = f64::INFINITY;
            for (b, sc) in scal.iter().enumerate() {
                ap = ap.min(max_step(&sc.ls, &dss[b]));
                ad = ad.min(max_step(&sc.lx, &dxs[b]));
            }
            for r in 0..nl {
                if dsl[r] < 0.0 {
                    ap = ap.min(-it.sl[r] / dsl[r]);
                }
                if dxl[r] < 0.0 {
                    ad = ad.min(-it.xl[r] / dxl[r]);
                }
            }
            (ap, ad)
        };

        // predictor
        let rc_aff: Vec<DMatrix<f64>> =
            scal.iter().map(|sc| DMatrix::from_diagonal(&sc.lam.map(|l| -l * l))).collect();
        let rcl_aff = DVector::from_iterator(nl, (0..nl).map(|r| -it.xl[r] * it.sl[r]));
        let Some((_, dss_a, dxs_a, dsl_a, dxl_a, _)) = direction(&rc_aff, &rcl_aff) else {
            status = SdpStatus::Stalled;
            break;
        };
        let (ap, ad) = steps(&dss_a, &dxs_a, &dsl_a, &dxl_a);
        let (ap, ad) = (ap.min(1.0), ad.min(1.0));
        let mut gap_aff = 0.0;
        for b in 0..nb {
            gap_aff += (&it.xs[b] + &dxs_a[b] * ad).dot(&(&it.ss[b] + &dss_a[b] * ap));
        }
        gap_aff += (&it.xl + &dxl_a * ad).dot(&(&it.sl + &dsl_a * ap));
        let sigma = ((gap_aff / nu) / mu).clamp(0.0, 1.0).powi(3);

        // corrector
        let mut rc = vec![];
        for (b, sc) in scal.iter().enumerate() {
            let dxt = &sc.ginv * &dxs_a[b] * sc.ginv.transpose();
            let dst = sc.g.transpose() * &dss_a[b] * &sc.g;
            let corr = (&dxt * &dst + &dst * &dxt) * 0.5;
            let mut r = -corr;
            for i in 0..sc.lam.len() {
                r[(i, i)] += sigma * mu - sc.lam[i] * sc.lam[i];
            }
            rc.push(r);
        }
        let rcl = DVector::from_iterator(nl, (0..nl).map(|r| sigma * mu - it.xl[r] * it.sl[r] - dxl_a[r] * dsl_a[r]));
        let Some((dy, dss, dxs, dsl, dxl, du)) = direction(&rc, &rcl) else {
            status = SdpStatus::Stalled;
            break;
        };
        let (ap, ad) = steps(&dss, &dxs, &dsl, &dxl);
        let ap = (opts.step * ap).min(1.0);
        let ad = (opts.step * ad).min(1.0);
        if ap < 1e-12 && ad < 1e-12 {
            status = SdpStatus::Stalled;
            break;
        }
        if opts.verbose {
            eprintln!("    step p {ap:.3e} d {ad:.3e} sigma {sigma:.2e}");
        }
        it.y.axpy(ap, &dy, 1.0);
        for b in 0..nb {
            it.ss[b] = sym(&(&it.ss[b] + &dss[b] * ap));
            it.xs[b] = sym(&(&it.xs[b] + &dxs[b] * ad));
        }
        it.sl.axpy(ap, &dsl, 1.0);
        it.xl.axpy(ad, &dxl, 1.0);
        it.u.axpy(ad, &du, 1.0);
        iters = iter + 1;
    }
    let final_it = if status == SdpStatus::Optimal {
        it
    } else {
        match best {
            Some((_, b)) => b,
            None => it,
        }
    };
    finish(sdp, &st, final_it, status, res, iters, opts)
}

fn finish(
    sdp: &SdpProblem,
    st: &Std,
    it: Iterate,
    mut status: SdpStatus,
    _res: Residuals,
    iters: usize,
    opts: &SdpOptions,
) -> Result<SdpSolution> {
    let mut block_duals: Vec<Option<DMatrix<f64>>> = vec![None; sdp.blocks.len()];
    for (p, x) in st.psd.iter().zip(&it.xs) {
        block_duals[p.src] = Some(x * (st.cscale / p.scale));
    }
    let mut zero_duals: Vec<Vec<(usize, f64, f64)>> = vec![vec![]; sdp.blocks.len()];
    let mut row_duals = vec![0.0; sdp.rows.len()];
    for (r, (_, ri, nrm)) in st.lp.iter().enumerate() {
        row_duals[*ri] = it.xl[r] * st.cscale / nrm;
    }
    for (r, (_, src, nrm)) in st.eq.iter().enumerate() {
        let v = it.u[r] * st.cscale / nrm;
        match *src {
            EqSrc::Row(ri) => row_duals[ri] = v,
            EqSrc::Block { block, idx, imag } => {
                let list = &mut zero_duals[block];
                match list.iter_mut().find(|e| e.0 == idx) {
                    Some(e) => {
                        if imag {
                            e.2 = v
                        } else {
                            e.1 = v
                        }
                    }
                    None => list.push(if imag { (idx, 0.0, v) } else { (idx, v, 0.0) }),
                }
            }
        }
    }
    let y: Vec<f64> = it.y.iter().copied().collect();
    let primal_obj = sdp.objective.eval(&y);
    let mut dual_obj = sdp.objective.constant;
    for (b, blk) in sdp.blocks.iter().enumerate() {
        if let Some(x) = &block_duals[b] {
            let s = blk.size;
            for i in 0..s {
                for j in 0..s {
                    dual_obj -= x[(i, j)] * blk.entries[upper_index(s, i, j)].re.constant;
                }
            }
        }
        for &(idx, ur, ui) in &zero_duals[b] {
            let e = &blk.entries[idx];
            dual_obj -= ur * e.re.constant + ui * e.im.constant;
        }
    }
    for (r, row) in sdp.rows.iter().enumerate() {
        dual_obj -= row_duals[r] * row.expr.constant;
    }
    let mut sol = SdpSolution {
        y,
        block_duals,
        zero_duals,
        row_duals,
        primal_obj,
        dual_obj,
        status,
        residuals: Residuals::default(),
        iterations: iters,
    };
    let rep = check_solution(sdp, &sol);
    sol.residuals = Residuals { primal: rep.primal, dual: rep.dual, gap: rep.gap };
    if matches!(status, SdpStatus::Stalled | SdpStatus::Optimal) {
        let worst = rep.primal.max(rep.dual).max(rep.gap);
        status = if worst <= opts.tol * 10.0 {
            SdpStatus::Optimal
        } else if worst <= 1e-5 {
            SdpStatus::NearOptimal
        } else {
            SdpStatus::Stalled
        };
    }
    sol.status = status;
    if status == SdpStatus::Stalled && !sol.primal_obj.is_finite() {
        return Err(Error::NumericalFailure("non-finite iterate".into()));
    }
    Ok(sol)
}

/// Independent residual check on the original (unscaled) problem.
#[derive(Clone, Debug, Serialize)]
pub struct ResidualReport {
    /// Max violation of equalities / scalar inequalities (absolute).
    pub primal: f64,
    /// Relative dual stationarity residual.
    pub dual: f64,
    /// Relative duality gap.
    pub gap: f64,
    /// Minimum eigenvalue per PSD block.
    pub min_eig: Vec<f64>,
    /// Blocks whose minimum eigenvalue is below −tol_psd.
    pub flagged: Vec<usize>,
}

pub fn check_solution(sdp: &SdpProblem, sol: &SdpSolution) -> ResidualReport {
    let y = &sol.y;
    let mut primal: f64 = 0.0;
    let mut min_eig = vec![];
    let mut flagged = vec![];
    for (b, blk) in sdp.blocks.iter().enumerate() {
        match blk.cone {
            Cone::Psd => {
                let m = blk.eval(y);
                let e = if blk.hermitian {
                    m.symmetric_eigenvalues().min()
                } else {
                    m.map(|c| c.re).symmetric_eigenvalues().min()
                };
                let scale = 1.0 + m.iter().map(|c| c.norm()).fold(0.0, f64::max);
                min_eig.push(e);
                if e < -TOL_PSD * scale {
                    flagged.push(b);
                }
            }
            Cone::Zero => {
                for e in &blk.entries {
                    primal = primal.max(e.eval(y).norm());
                }
            }
        }
    }
    for r in &sdp.rows {
        let v = r.expr.eval(y);
        primal = primal.max(match r.sense {
            Sense::Ge => (-v).max(0.0),
            Sense::Eq => v.abs(),
        });
    }
    // stationarity: c − Σ A*(X) − Σ row multipliers
    let m = sdp.num_vars;
    let mut g = vec![0.0; m];
    for &(i, c) in &sdp.objective.terms {
        g[i] += c;
    }
    for (b, blk) in sdp.blocks.iter().enumerate() {
        let s = blk.size;
        if let Some(x) = &sol.block_duals[b] {
            for i in 0..s {
                for j in i..s {
                    let w = if i == j { x[(i, i)] } else { x[(i, j)] + x[(j, i)] };
                    for &(v, c) in &blk.entries[upper_index(s, i, j)].re.terms {
                        g[v] -= w * c;
                    }
                }
            }
        }
        for &(idx, ur, ui) in &sol.zero_duals[b] {
            let e = &blk.entries[idx];
            for &(v, c) in &e.re.terms {
                g[v] -= ur * c;
            }
            for &(v, c) in &e.im.terms {
                g[v] -= ui * c;
            }
        }
    }
    for (r, row) in sdp.rows.iter().enumerate() {
        for &(v, c) in &row.expr.terms {
            g[v] -= sol.row_duals[r] * c;
        }
    }
    let cnorm = 1.0 + sdp.objective.terms.iter().map(|t| t.1 * t.1).sum::<f64>().sqrt();
    let dual = g.iter().map(|v| v * v).sum::<f64>().sqrt() / cnorm;
    let pobj = sdp.objective.eval(y);
    let gap = (pobj - sol.dual_obj).abs() / (1.0 + pobj.abs() + sol.dual_obj.abs());
    // a negative PSD eigenvalue counts as primal infeasibility
    let worst_eig = min_eig.iter().fold(0.0f64, |a, &e| a.max(-e));
    ResidualReport { primal: primal.max(worst_eig), dual, gap, min_eig, flagged }
}
