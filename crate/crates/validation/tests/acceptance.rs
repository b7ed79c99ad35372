//! Acceptance criteria. One PASS/FAIL line per criterion, details indented.
//! Exits nonzero when any criterion fails.

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::PI;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use cmoment::certify::{
    check_certificate_conditions, extract_atoms, min_eig, numeric_rank, sos_identity, Atom, CertKind, MomentTable,
    TAU_RANK,
};
use cmoment::multiorder::{solve_global, LoopParams};
use cmoment::opf::{build_opf_pop, parse_case, preprocess, OpfModel, PreprocessOptions};
use cmoment::poly::{evaluate, evaluate_real, monomials, MultiIndex, Poly, TermKey};
use cmoment::pop::{parse_pop, Field, Pop, Sense};
use cmoment::relaxation::{
    add_sphere_slack, assemble_with, dirac_vars, embed_matrix, hermitian_to_real, Affine, BlockKind, CAffine, Cone,
    MomentBasis, RelaxOptions, SdpBlock, SdpProblem, VarSlot,
};
use cmoment::sdp::{solve_sdp, SdpOptions, SdpSolution, SdpStatus};
use cmoment::sparsity::CliquePlan;
use cmoment::symmetry::SymmetryReport;
use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Cx = Complex64;

fn cx(re: f64, im: f64) -> Cx {
    Cx::new(re, im)
}

// ---- harness ----

#[derive(Default)]
struct Crit {
    checks: Vec<(bool, String)>,
    notes: Vec<String>,
}

impl Crit {
    fn check(&mut self, ok: bool, msg: impl Into<String>) -> bool {
        self.checks.push((ok, msg.into()));
        ok
    }

    fn note(&mut self, msg: impl Into<String>) {
        self.notes.push(msg.into());
    }
}

fn run(id: &str, title: &str, f: impl FnOnce(&mut Crit)) -> bool {
    let start = Instant::now();
    let mut c = Crit::default();
    let res = catch_unwind(AssertUnwindSafe(|| f(&mut c)));
    if let Err(p) = res {
        let msg = p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panic".into());
        c.check(false, format!("panicked: {msg}"));
    }
    let ok = !c.checks.is_empty() && c.checks.iter().all(|x| x.0);
    println!("{} {id} {title} ({:.1}s)", if ok { "PASS" } else { "FAIL" }, start.elapsed().as_secs_f64());
    for (good, msg) in &c.checks {
        println!("    {} {msg}", if *good { "ok  " } else { "FAIL" });
    }
    for n in &c.notes {
        println!("    note {n}");
    }
    ok
}

fn within(x: f64, target: f64, tol: f64) -> bool {
    (x - target).abs() <= tol
}

// ---- pipeline helpers ----

fn fixture(name: &str) -> String {
    let path = format!("{}/../../fixtures/{name}", env!("CARGO_MANIFEST_DIR"));
    std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{path}: {e}"))
}

fn load_pop(name: &str) -> Pop {
    parse_pop(&fixture(name)).expect("fixture parses")
}

fn load_case(name: &str) -> (Pop, OpfModel) {
    let case = parse_case(&fixture(name)).expect("case parses");
    let case = preprocess(&case, &PreprocessOptions::default());
    build_opf_pop(&case).expect("opf model")
}

struct Solved {
    sdp: SdpProblem,
    sol: SdpSolution,
}

impl Solved {
    fn bound(&self) -> f64 {
        self.sol.primal_obj
    }

    fn table(&self) -> MomentTable {
        MomentTable::from_solution(&self.sdp, &self.sol.y)
    }
}

fn solve_plan(pop: &Pop, plan: &CliquePlan, opts: &RelaxOptions) -> Solved {
    let sdp = assemble_with(pop, plan, opts).expect("assemble");
    let emb = hermitian_to_real(&sdp);
    let sol = solve_sdp(&emb, &SdpOptions::default()).expect("sdp solve");
    Solved { sdp, sol }
}

fn solve_dense(pop: &Pop, d: u32, opts: &RelaxOptions) -> Solved {
    solve_plan(pop, &CliquePlan::dense(pop, d).expect("plan"), opts)
}

fn solved_ok(s: &Solved) -> bool {
    matches!(s.sol.status, SdpStatus::Optimal | SdpStatus::NearOptimal)
}

/// Rotate `z` by the unit phase that best aligns it with `target`.
fn align_phase(z: &[Cx], target: &[Cx]) -> Vec<Cx> {
    let s: Cx = z.iter().zip(target).map(|(a, b)| a.conj() * b).sum();
    let ph = if s.norm() > 0.0 { s / s.norm() } else { cx(1.0, 0.0) };
    z.iter().map(|a| a * ph).collect()
}

fn max_dist(a: &[Cx], b: &[Cx]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

fn fmt_point(z: &[Cx]) -> String {
    let parts: Vec<String> = z.iter().map(|v| format!("{:.4}{:+.4}i", v.re, v.im)).collect();
    format!("({})", parts.join(", "))
}

// ---- random problems ----

fn unif(rng: &mut ChaCha8Rng) -> f64 {
    rng.gen_range(-1.0..1.0)
}

fn random_hermitian(rng: &mut ChaCha8Rng, n: usize, k: u32) -> Poly {
    let all: Vec<usize> = (0..n).collect();
    let bas = monomials(n, &all, k);
    let mut p = Poly::zero(n);
    for (i, a) in bas.iter().enumerate() {
        p.add_term(TermKey::new(a.clone(), a.clone()), cx(unif(rng), 0.0));
        for b in &bas[i + 1..] {
            let v = cx(unif(rng), unif(rng));
            p.add_term(TermKey::new(a.clone(), b.clone()), v);
            p.add_term(TermKey::new(b.clone(), a.clone()), v.conj());
        }
    }
    p
}

fn random_real(rng: &mut ChaCha8Rng, n: usize, deg: u32) -> Poly {
    let all: Vec<usize> = (0..n).collect();
    let mut p = Poly::zero(n);
    for a in monomials(n, &all, deg) {
        p.add_term(TermKey::new(a, MultiIndex::zero(n)), cx(unif(rng), 0.0));
    }
    p
}

fn random_point(rng: &mut ChaCha8Rng, n: usize) -> Vec<Cx> {
    (0..n)
        .map(|_| {
            let r = rng.gen_range(0.0..1.0f64).sqrt();
            let t = rng.gen_range(0.0..2.0 * PI);
            Cx::from_polar(r, t)
        })
        .collect()
}

/// Split `α` into `p + q` with `|p|` and `|q|` as equal as possible.
fn split(alpha: &MultiIndex) -> (MultiIndex, MultiIndex) {
    let n = alpha.len();
    let mut p = vec![0u32; n];
    let mut q = vec![0u32; n];
    let mut take_p = true;
    for (k, &e) in alpha.0.iter().enumerate() {
        for _ in 0..e {
            if take_p {
                p[k] += 1;
            } else {
                q[k] += 1;
            }
            take_p = !take_p;
        }
    }
    (MultiIndex(p), MultiIndex(q))
}

/// Hermitian polynomial agreeing with the real polynomial `p` on `z ∈ R^n`:
/// `x^α ↦ ½(z^p z̄^q + z^q z̄^p)` with `p + q = α`.
fn complexify(p: &Poly) -> Poly {
    let mut out = Poly::zero(p.n);
    for (key, c) in &p.terms {
        let (a, b) = split(&key.alpha);
        out.add_term(TermKey::new(a.clone(), b.clone()), c * 0.5);
        out.add_term(TermKey::new(b, a), c * 0.5);
    }
    out
}

fn line_constraint(n: usize, k: usize) -> Poly {
    Poly::var(n, k).sub(&Poly::var(n, k).conj()).scale(cx(0.0, 1.0))
}

// ---- criteria ----

fn torus(c: &mut Crit) {
    let pop = load_pop("torus_linear.json");
    let s = solve_dense(&pop, 1, &RelaxOptions::default());
    c.check(within(s.bound(), -2.0, 1e-6), format!("order-1 bound {:.9} (target -2 ± 1e-6)", s.bound()));
    let cert = extract_atoms(&s.table(), &pop).expect("extraction");
    c.check(cert.kind == CertKind::RankOne, format!("certificate {:?} (want RankOne)", cert.kind));
    let atom = cert.atoms.first().map(|a| a.point[0]);
    c.check(
        atom.is_some_and(|z| (z - cx(-1.0, 0.0)).norm() <= 1e-6),
        format!("atom {:?} (target -1 ± 1e-6)", atom.map(|z| format!("{:.9}{:+.9}i", z.re, z.im))),
    );
}

fn disc(c: &mut Crit) {
    let pop = load_pop("disc.json");
    c.note(format!("d_min = {} (objective has |z|^4); the hierarchy starts at d_min", pop.d_min()));
    if let Err(e) = CliquePlan::dense(&pop, 1).and_then(|p| assemble_with(&pop, &p, &RelaxOptions::default())) {
        c.note(format!("order 1: {e}"));
    }
    for d in 2..=4 {
        let s = solve_dense(&pop, d, &RelaxOptions::default());
        c.check(
            within(s.bound(), -1.0 / 3.0, 1e-4),
            format!("order {d} without slack: {:.7} (target -1/3 ± 1e-4)", s.bound()),
        );
    }
    let sp = add_sphere_slack(&pop, 1.0);
    let s = solve_dense(&sp, 2, &RelaxOptions::default());
    c.check(within(s.bound(), 1.0 / 18.0, 1e-5), format!("order 2 with slack: {:.8} (target 1/18 ± 1e-5)", s.bound()));
    let emb = hermitian_to_real(&s.sdp);
    let sos = sos_identity(&s.sdp, &emb, &s.sol);
    c.check(sos.residual <= 1e-6, format!("SOS identity residual {:.2e} (≤ 1e-6)", sos.residual));
}

fn ellipse(c: &mut Crit) {
    let pop = load_pop("ellipse.json");
    let opts = RelaxOptions::default();

    let s2 = solve_dense(&pop, 2, &opts);
    c.check(within(s2.bound(), 0.155089, 1e-3), format!("order 2 bound {:.6} (target 0.155089 ± 1e-3)", s2.bound()));
    let t2 = s2.table();
    let ranks: Vec<usize> = (0..=2).map(|t| numeric_rank(&t2.moment_matrix(0, t).unwrap(), TAU_RANK)).collect();
    c.check(ranks == vec![1, 3, 3], format!("order 2 ranks of M0, M1, M2 = {ranks:?} (want [1, 3, 3])"));
    let hypo = check_certificate_conditions(&t2, &pop)
        .expect("conditions")
        .into_iter()
        .find(|v| v.t == 3)
        .and_then(|v| v.hypo_min_eig);
    c.check(
        hypo.is_some_and(|e| within(e, -1.5874, 5e-2)),
        format!("t=3 hyponormality min eigenvalue {hypo:?} (target -1.5874 ± 5e-2)"),
    );

    let s3 = solve_dense(&pop, 3, &opts);
    c.check(within(s3.bound(), 0.428175, 1e-3), format!("order 3 bound {:.6} (target 0.428175 ± 1e-3)", s3.bound()));
    let r3 = numeric_rank(&s3.table().moment_matrix(0, 3).unwrap(), TAU_RANK);
    c.check(r3 == 1, format!("order 3 rank M3 = {r3} (want 1)"));

    let hopts = RelaxOptions { hypo_strengthen: Some(3), ..RelaxOptions::default() };
    let sh = solve_dense(&pop, 2, &hopts);
    c.note(format!("strengthened solve status {:?}, residuals {:?}", sh.sol.status, sh.sol.residuals));
    c.check(
        within(sh.bound(), 0.428175, 1e-3),
        format!("order 2 + t=3 hyponormality bound {:.6} (target 0.428175 ± 1e-3)", sh.bound()),
    );
    let th = sh.table();
    let rh = numeric_rank(&th.moment_matrix(0, 2).unwrap(), TAU_RANK);
    c.check(rh == 1, format!("strengthened rank M2 = {rh} (want 1)"));
    let z = match extract_atoms(&th, &pop) {
        Ok(cert) if !cert.atoms.is_empty() => cert.atoms[0].point.clone(),
        _ => {
            let y00 = th.get(&MultiIndex::zero(2), &MultiIndex::zero(2)).unwrap();
            (0..2).map(|k| th.get(&MultiIndex::unit(2, k), &MultiIndex::zero(2)).unwrap() / y00).collect()
        }
    };
    let target = [cx(0.0, -0.8165), cx(1.5275, 0.0)];
    let za = align_phase(&z, &target);
    c.check(
        max_dist(&za, &target) <= 1e-3,
        format!("atom {} up to phase (target (-0.8165i, 1.5275) ± 1e-3)", fmt_point(&za)),
    );
}

fn wb2(c: &mut Crit) {
    let (cpop, _) = load_case("wb2.m");
    let rpop = cpop.realify();
    let targets = [888.1, 894.3, 905.7];
    for (name, pop, blocks) in [("complex", &cpop, 4usize), ("real", &rpop, 2usize)] {
        for d in 1..=3u32 {
            let t = targets[d as usize - 1];
            let s = solve_dense(pop, d, &RelaxOptions::default());
            c.check(
                solved_ok(&s) && within(s.bound(), t, 0.5),
                format!("{name} order {d}: {:.4} [{:?}] (target {t} ± 0.5)", s.bound(), s.sol.status),
            );
            let m = solve_dense(pop, d, &RelaxOptions { symmetry: true, ..RelaxOptions::default() });
            let rel = (m.bound() - s.bound()).abs() / s.bound().abs().max(1.0);
            c.check(rel <= 1e-3, format!("{name} order {d} masked: {:.4} (relative difference {rel:.1e} ≤ 1e-3)", m.bound()));
            if d == 3 {
                let sizes = m.sdp.moment_block_sizes(0);
                c.check(
                    sizes.len() == blocks,
                    format!("{name} masked M3 blocks {sizes:?} (want {blocks} blocks)"),
                );
            }
        }
    }
}

fn wb5(c: &mut Crit) {
    let (pop, model) = load_case("wb5.m");
    let params = LoopParams { eps: Some(1.0), h: 2, delta_max_min: 2, ..LoopParams::default() };
    let out = solve_global(&pop, &params, |_| {}).expect("multi-order loop");
    c.check(within(out.bound, 946.6, 0.5), format!("bound {:.4} MW (target 946.6 ± 0.5)", out.bound));

    let want: BTreeSet<&str> =
        ["P4", "Q4", "P5_lo", "P5_hi", "Q5_lo", "Q5_hi", "V4_lo", "V4_hi", "V5_lo", "V5_hi"].into_iter().collect();
    let at2: BTreeSet<&str> = out
        .state
        .orders
        .iter()
        .enumerate()
        .filter(|(_, &o)| o == 2)
        .map(|(i, _)| model.labels[i].as_str())
        .collect();
    let others_one = out.state.orders.iter().all(|&o| o <= 2);
    c.check(at2 == want && others_one, format!("order-2 rows {at2:?} (want {want:?}, all others at 1)"));

    let cliques: BTreeSet<Vec<usize>> = out.plan.cliques.iter().cloned().collect();
    let want_cl: BTreeSet<Vec<usize>> = [vec![0, 1, 2], vec![1, 2, 3, 4]].into_iter().collect();
    c.check(cliques == want_cl, format!("cliques (0-based) {cliques:?} (want {want_cl:?})"));

    let reference = [
        cx(1.0467, 0.0),
        cx(0.9550, -0.0578),
        cx(0.9485, -0.0533),
        cx(0.7791, 0.6011),
        cx(0.7362, 0.7487),
    ];
    let z = align_phase(&model.fix_angle(&out.point), &reference);
    c.check(max_dist(&z, &reference) <= 1e-2, format!("point {} (± 1e-2 up to phase)", fmt_point(&z)));
    c.note(format!(
        "terminated {:?} after {} iterations; orders {:?}",
        out.termination,
        out.state.history.len(),
        out.state.orders
    ));

    let tight = LoopParams { eps: Some(0.1), ..params };
    if let Ok(o) = solve_global(&pop, &tight, |_| {}) {
        let at2: Vec<&str> = o
            .state
            .orders
            .iter()
            .enumerate()
            .filter(|(_, &d)| d == 2)
            .map(|(i, _)| model.labels[i].as_str())
            .collect();
        c.note(format!(
            "diagnostic eps=0.1: bound {:.4}, order-2 rows {at2:?}, cliques {:?}, point {}",
            o.bound,
            o.plan.cliques,
            fmt_point(&model.fix_angle(&o.point))
        ));
    }
}

/// (a) real POPs against the complex pipeline restricted to the real line.
fn hankel_suite(rng: &mut ChaCha8Rng) -> (usize, usize, f64) {
    let mut pass = 0;
    let total = 50;
    let mut worst: f64 = 0.0;
    for i in 0..total {
        let n = 1 + i % 3;
        let f = random_real(rng, n, 4);
        let mut ball = Poly::constant(n, 1.0);
        for k in 0..n {
            ball = ball.sub(&Poly::var(n, k).mul(&Poly::var(n, k)));
        }
        let real = Pop::new(n, Field::Real, f.clone()).ge(ball);
        let mut cplx = Pop::new(n, Field::Complex, complexify(&f)).ge({
            let mut g = Poly::constant(n, 1.0);
            for k in 0..n {
                g = g.sub(&Poly::abs2(n, k));
            }
            g
        });
        for k in 0..n {
            cplx = cplx.eq(line_constraint(n, k));
        }
        let d = real.d_min();
        let a = solve_dense(&real, d, &RelaxOptions::default());
        let b = solve_dense(&cplx, d, &RelaxOptions::default());
        let diff = (a.bound() - b.bound()).abs() / a.bound().abs().max(1.0);
        worst = worst.max(diff);
        if solved_ok(&a) && solved_ok(&b) && diff <= 1e-6 {
            pass += 1;
        }
    }
    (pass, total, worst)
}

fn dirac_check(sdp: &SdpProblem, y: &[f64]) -> f64 {
    let mut worst: f64 = 0.0;
    for b in &sdp.blocks {
        let m = b.eval(y);
        match b.cone {
            Cone::Psd => {
                let scale = m.iter().map(|v| v.norm()).fold(1.0, f64::max);
                worst = worst.max((-min_eig(&m) / scale).max(0.0));
            }
            Cone::Zero => worst = worst.max(m.iter().map(|v| v.norm()).fold(0.0, f64::max)),
        }
    }
    for r in &sdp.rows {
        let v = r.expr.eval(y);
        worst = worst.max(match r.sense {
            Sense::Ge => (-v).max(0.0),
            Sense::Eq => v.abs(),
        });
    }
    worst
}

/// (b) Dirac moments of feasible points satisfy the relaxation and certify.
fn dirac_suite(rng: &mut ChaCha8Rng) -> (usize, usize, f64, f64) {
    let total = 50;
    let mut pass = 0;
    let (mut worst_feas, mut worst_atom): (f64, f64) = (0.0, 0.0);
    for i in 0..total {
        let n = 1 + i % 3;
        let real = i % 5 == 4;
        let (field, z, gen): (Field, Vec<Cx>, Box<dyn Fn(&mut ChaCha8Rng) -> Poly>) = if real {
            let x: Vec<Cx> = (0..n).map(|_| cx(unif(rng), 0.0)).collect();
            (Field::Real, x, Box::new(move |r: &mut ChaCha8Rng| random_real(r, n, 2)))
        } else {
            (Field::Complex, random_point(rng, n), Box::new(move |r: &mut ChaCha8Rng| random_hermitian(r, n, 1)))
        };
        let value = |p: &Poly| -> f64 {
            match field {
                Field::Complex => evaluate(p, &z).unwrap(),
                Field::Real => evaluate_real(p, &z.iter().map(|v| v.re).collect::<Vec<_>>()),
            }
        };
        let mut pop = Pop::new(n, field, gen(rng));
        for j in 0..3 {
            let h = gen(rng);
            let slack = if j == 0 { 0.0 } else { rng.gen_range(0.0..1.0) };
            let g = h.sub(&Poly::constant(n, value(&h) - slack));
            pop = if j == 2 { pop.eq(h.sub(&Poly::constant(n, value(&h)))) } else { pop.ge(g) };
        }
        let d = pop.d_min() + (i as u32 / 3) % 2;
        let plan = CliquePlan::dense(&pop, d).unwrap();
        let sdp = assemble_with(&pop, &plan, &RelaxOptions::default()).unwrap();
        let y = dirac_vars(&sdp, &z);
        let emb = hermitian_to_real(&sdp);
        let feas = dirac_check(&sdp, &y).max(dirac_check(&emb, &y));
        let obj = (sdp.objective.eval(&y) - value(&pop.objective)).abs();
        worst_feas = worst_feas.max(feas).max(obj);
        let table = MomentTable::from_solution(&sdp, &y);
        let err = match extract_atoms(&table, &pop) {
            Ok(cert) if cert.kind == CertKind::RankOne && cert.atoms.len() == 1 => max_dist(&cert.atoms[0].point, &z),
            _ => f64::INFINITY,
        };
        worst_atom = worst_atom.max(err);
        if feas <= 1e-9 && obj <= 1e-9 && err <= 1e-8 {
            pass += 1;
        }
    }
    (pass, total, worst_feas, worst_atom)
}

/// Coordinate search from `x0`, shrinking the step until `1e-10`.
fn polish(f: &dyn Fn(&[f64]) -> f64, x0: &[f64], step: f64) -> (Vec<f64>, f64) {
    let mut x = x0.to_vec();
    let mut fx = f(&x);
    let mut h = step;
    while h > 1e-10 {
        let mut moved = false;
        for k in 0..x.len() {
            for s in [h, -h] {
                let mut t = x.clone();
                t[k] += s;
                let ft = f(&t);
                if ft < fx {
                    x = t;
                    fx = ft;
                    moved = true;
                }
            }
        }
        if !moved {
            h *= 0.5;
        }
    }
    (x, fx)
}

/// Grid minimum followed by local polish from the best grid points.
fn brute_force(f: &dyn Fn(&[f64]) -> f64, grid: &[Vec<f64>], step: f64) -> f64 {
    let mut vals: Vec<(f64, usize)> = grid.iter().enumerate().map(|(i, x)| (f(x), i)).collect();
    vals.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    vals.iter().take(8).map(|&(_, i)| polish(f, &grid[i], step).1).fold(f64::INFINITY, f64::min)
}

/// (c) certified hierarchy values against grid search.
fn oracle_suite(rng: &mut ChaCha8Rng, c: &mut Crit) -> (usize, usize, f64) {
    let total = 20;
    let mut pass = 0;
    let mut worst: f64 = 0.0;
    for i in 0..total {
        let (pop, f, grid, step): (Pop, Box<dyn Fn(&[f64]) -> f64>, Vec<Vec<f64>>, f64) = if i % 2 == 0 {
            // one variable on the closed unit disc
            let obj = random_hermitian(rng, 1, 2);
            let pop = Pop::new(1, Field::Complex, obj.clone())
                .ge(Poly::constant(1, 1.0).sub(&Poly::abs2(1, 0)));
            let f = move |x: &[f64]| {
                let z = cx(x[0], x[1]);
                let z = if z.norm() > 1.0 { z / z.norm() } else { z };
                evaluate(&obj, &[z]).unwrap()
            };
            let mut grid = vec![];
            for a in 0..=200 {
                for b in 0..720 {
                    let z = Cx::from_polar(a as f64 / 200.0, b as f64 * PI / 360.0);
                    grid.push(vec![z.re, z.im]);
                }
            }
            (pop, Box::new(f), grid, 1e-2)
        } else {
            // two variables on the unit torus
            let obj = random_hermitian(rng, 2, 2);
            let pop = Pop::new(2, Field::Complex, obj.clone())
                .eq(Poly::abs2(2, 0).sub(&Poly::constant(2, 1.0)))
                .eq(Poly::abs2(2, 1).sub(&Poly::constant(2, 1.0)));
            let f = move |t: &[f64]| evaluate(&obj, &[Cx::from_polar(1.0, t[0]), Cx::from_polar(1.0, t[1])]).unwrap();
            let mut grid = vec![];
            for a in 0..360 {
                for b in 0..360 {
                    grid.push(vec![a as f64 * PI / 180.0, b as f64 * PI / 180.0]);
                }
            }
            (pop, Box::new(f), grid, 1e-2)
        };
        let reference = brute_force(&*f, &grid, step);
        let mut got = None;
        for d in pop.d_min()..=pop.d_min() + 3 {
            let s = solve_dense(&pop, d, &RelaxOptions::default());
            if !solved_ok(&s) {
                continue;
            }
            if let Ok(cert) = extract_atoms(&s.table(), &pop) {
                if cert.kind != CertKind::None {
                    got = Some((d, s.bound(), cert.kind));
                    break;
                }
            }
        }
        match got {
            Some((_, b, _)) => {
                let diff = (b - reference).abs();
                worst = worst.max(diff);
                if diff <= 1e-3 {
                    pass += 1;
                } else {
                    c.note(format!("oracle problem {i}: hierarchy {b:.6} vs grid {reference:.6}"));
                }
            }
            None => c.note(format!("oracle problem {i}: not certified up to order d_min + 3 (grid {reference:.6})")),
        }
    }
    (pass, total, worst)
}

/// (d) ½δ₊₁ + ½δ₋₁ on the real line, complex and real fields.
fn two_atom(c: &mut Crit) -> bool {
    let atoms = [Atom { point: vec![cx(1.0, 0.0)], weight: 0.5 }, Atom { point: vec![cx(-1.0, 0.0)], weight: 0.5 }];
    let cpop = Pop::new(1, Field::Complex, Poly::abs2(1, 0)).eq(line_constraint(1, 0));
    let sq = Poly::var(1, 0).mul(&Poly::var(1, 0));
    let rpop = Pop::new(1, Field::Real, sq.clone()).eq(sq.sub(&Poly::constant(1, 1.0)));
    let mut ok = true;
    for (name, pop, field) in [("complex", &cpop, Field::Complex), ("real", &rpop, Field::Real)] {
        let t = MomentTable::from_atoms(1, field, &atoms, 2);
        let cert = extract_atoms(&t, pop);
        let mut got: Vec<(f64, f64, f64)> = match &cert {
            Ok(cert) => cert.atoms.iter().map(|a| (a.point[0].re, a.point[0].im, a.weight)).collect(),
            Err(_) => vec![],
        };
        got.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        let good = got.len() == 2
            && within(got[0].0, -1.0, 1e-6)
            && within(got[1].0, 1.0, 1e-6)
            && got.iter().all(|g| g.1.abs() <= 1e-6 && within(g.2, 0.5, 1e-6));
        if !good {
            c.note(format!("two-atom {name}: {:?}", cert.map(|c| c.kind)));
        }
        ok &= good;
    }
    ok
}

/// (e) hyponormality blocks of genuine 3-atom measures are PSD.
fn hypo_suite(rng: &mut ChaCha8Rng) -> (usize, usize, f64) {
    let total = 30;
    let mut pass = 0;
    let mut worst = f64::INFINITY;
    for i in 0..total {
        let n = 1 + i % 3;
        let mut w: Vec<f64> = (0..3).map(|_| rng.gen_range(0.1..1.0)).collect();
        let s: f64 = w.iter().sum();
        w.iter_mut().for_each(|v| *v /= s);
        let atoms: Vec<Atom> = w.iter().map(|&weight| Atom { point: random_point(rng, n), weight }).collect();
        let d = 3;
        let t = MomentTable::from_atoms(n, Field::Complex, &atoms, d);
        let mut e = f64::INFINITY;
        for o in 0..d {
            for a in 0..n {
                for b in a..n {
                    if n > 1 && a == b {
                        continue;
                    }
                    e = e.min(min_eig(&t.hyponormal_matrix(0, a, b, o).unwrap()));
                }
            }
        }
        worst = worst.min(e);
        if e >= -1e-8 {
            pass += 1;
        }
    }
    (pass, total, worst)
}

fn properties(c: &mut Crit) {
    let mut rng = ChaCha8Rng::seed_from_u64(20260601);
    let (p, t, w) = hankel_suite(&mut rng);
    c.check(p == t, format!("(a) Hankel equivalence {p}/{t} within 1e-6 (worst relative difference {w:.1e})"));
    let (p, t, wf, wa) = dirac_suite(&mut rng);
    c.check(
        p == t,
        format!("(b) Dirac feasibility {p}/{t} (worst violation {wf:.1e} ≤ 1e-9, worst atom error {wa:.1e} ≤ 1e-8)"),
    );
    let (p, t, w) = oracle_suite(&mut rng, c);
    c.check(p == t, format!("(c) brute-force oracle {p}/{t} within 1e-3 (worst difference {w:.1e})"));
    let ok = two_atom(c);
    c.check(ok, "(d) two-atom fixture recovers ±1 with weights 1/2 to 1e-6 (complex and real fields)");
    let (p, t, w) = hypo_suite(&mut rng);
    c.check(p == t, format!("(e) hyponormality of 3-atom measures {p}/{t} (worst min eigenvalue {w:.1e} ≥ -1e-8)"));
}

// ---- embedding invariance ----

fn random_unitary(rng: &mut ChaCha8Rng, s: usize) -> DMatrix<Cx> {
    let g = DMatrix::from_fn(s, s, |_, _| cx(unif(rng), unif(rng)));
    g.qr().q()
}

fn random_herm(rng: &mut ChaCha8Rng, s: usize) -> DMatrix<Cx> {
    let g = DMatrix::from_fn(s, s, |_, _| cx(unif(rng), unif(rng)));
    (&g + g.adjoint()) * cx(0.5, 0.0)
}

fn block_from(mats: &[DMatrix<Cx>], constant: &DMatrix<Cx>) -> SdpBlock {
    let s = constant.nrows();
    let mut entries = vec![];
    for i in 0..s {
        for j in i..s {
            let mut re = Affine::constant(constant[(i, j)].re);
            let mut im = Affine::constant(constant[(i, j)].im);
            for (v, a) in mats.iter().enumerate() {
                re.push(v, a[(i, j)].re);
                im.push(v, a[(i, j)].im);
            }
            entries.push(CAffine { re, im });
        }
    }
    SdpBlock {
        kind: BlockKind::Moment { clique: 0 },
        cone: Cone::Psd,
        size: s,
        hermitian: true,
        entries,
        polys: vec![],
        basis: vec![],
        embedded_from: None,
    }
}

/// Hermitian SDP `min c·y s.t. H_b(y) ⪰ 0` with a planted optimum: `H(y*)`
/// and the dual `Z` are complementary, `c_i = Σ_b ⟨A_bi, Z_b⟩`.
fn planted_sdp(rng: &mut ChaCha8Rng) -> (SdpProblem, f64, Vec<f64>) {
    let m = rng.gen_range(2..=6);
    let nblocks = rng.gen_range(1..=2);
    let ystar: Vec<f64> = (0..m).map(|_| unif(rng)).collect();
    let mut c = vec![0.0; m];
    let mut blocks = vec![];
    for _ in 0..nblocks {
        let s = rng.gen_range(2..=5);
        let r = rng.gen_range(1..s);
        let u = random_unitary(rng, s);
        let sig = DMatrix::from_fn(s, s, |i, j| if i == j && i < r { cx(rng.gen_range(0.5..2.0), 0.0) } else { cx(0.0, 0.0) });
        let zet = DMatrix::from_fn(s, s, |i, j| if i == j && i >= r { cx(rng.gen_range(0.5..2.0), 0.0) } else { cx(0.0, 0.0) });
        let sstar = &u * sig * u.adjoint();
        let z = &u * zet * u.adjoint();
        // the first variable carries the identity, so the primal is strictly feasible
        let mats: Vec<DMatrix<Cx>> =
            (0..m).map(|v| if v == 0 { DMatrix::identity(s, s) } else { random_herm(rng, s) }).collect();
        let mut h0 = sstar.clone();
        for (v, a) in mats.iter().enumerate() {
            h0 -= a * cx(ystar[v], 0.0);
            c[v] += (a * &z).trace().re;
        }
        blocks.push(block_from(&mats, &h0));
    }
    let mut objective = Affine::default();
    for (v, &cv) in c.iter().enumerate() {
        objective.push(v, cv);
    }
    let opt = objective.eval(&ystar);
    let sdp = SdpProblem {
        field: Field::Complex,
        n: 0,
        num_vars: m,
        slots: (0..m).map(|v| (VarSlot::Aux, None, v)).collect(),
        index: BTreeMap::new(),
        aux_vars: (0..m).collect(),
        mask: SymmetryReport::none(),
        blocks,
        rows: vec![],
        objective,
        objective_poly: Poly::zero(0),
        plan: CliquePlan {
            cliques: vec![],
            order: vec![],
            assignment: BTreeMap::new(),
            orders: vec![],
            clique_orders: vec![],
        },
        basis: MomentBasis { cliques: vec![] },
    };
    (sdp, opt, ystar)
}

fn embedding(c: &mut Crit) {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let total = 30;
    let (mut pass_val, mut pass_eig) = (0, 0);
    let (mut worst_val, mut worst_eig): (f64, f64) = (0.0, 0.0);
    for _ in 0..total {
        let (sdp, opt, ystar) = planted_sdp(&mut rng);
        let emb = hermitian_to_real(&sdp);
        let sol = solve_sdp(&emb, &SdpOptions::default()).expect("sdp solve");
        let diff = (sol.primal_obj - opt).abs() / opt.abs().max(1.0);
        worst_val = worst_val.max(diff);
        if sol.status == SdpStatus::Optimal && diff <= 1e-7 {
            pass_val += 1;
        }
        let probe: Vec<f64> = ystar.iter().map(|v| v + 0.3 * unif(&mut rng)).collect();
        let mut ok = true;
        for y in [&ystar, &sol.y, &probe] {
            for (b, e) in sdp.blocks.iter().zip(&emb.blocks) {
                let h = b.eval(y);
                let mut want: Vec<f64> = h.clone().symmetric_eigenvalues().iter().flat_map(|&v| [v, v]).collect();
                let real = e.eval(y).map(|v| v.re);
                let direct = embed_matrix(&h);
                let mut got: Vec<f64> = real.clone().symmetric_eigen().eigenvalues.iter().copied().collect();
                want.sort_by(|a, b| a.partial_cmp(b).unwrap());
                got.sort_by(|a, b| a.partial_cmp(b).unwrap());
                let scale = h.iter().map(|v| v.norm()).fold(1.0, f64::max);
                let err = want.iter().zip(&got).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) / scale;
                let same = (&real - &direct).amax() / scale;
                worst_eig = worst_eig.max(err).max(same);
                ok &= err <= 1e-10 && same <= 1e-12;
            }
        }
        if ok {
            pass_eig += 1;
        }
    }
    c.check(pass_val == total, format!("optimal values {pass_val}/{total} within 1e-7 (worst relative {worst_val:.1e})"));
    c.check(
        pass_eig == total,
        format!("eigenvalue multiplicities doubled {pass_eig}/{total} (worst deviation {worst_eig:.1e})"),
    );
}

fn main() {
    let start = Instant::now();
    let results = [
        run("1", "torus linear problem: order-1 bound -2, rank-one atom -1", torus),
        run("2", "disc problem: -1/3 without slack, 1/18 with sphere slack and SOS identity", disc),
        run("3", "ellipse problem: ranks, hyponormality, order 3 and strengthened order 2", ellipse),
        run("4", "WB2: real and complex hierarchies with and without the zero mask", wb2),
        run("5", "WB5: multi-order loop with eps = 1 MVA, h = 2, delta = 2", wb5),
        run("6", "property suites: Hankel, Dirac, brute force, two atoms, hyponormality", properties),
        run("7", "embedding invariance on 30 planted Hermitian SDPs", embedding),
    ];
    let failed = results.iter().filter(|ok| !**ok).count();
    println!(
        "{} of {} criteria passed ({:.1}s)",
        results.len() - failed,
        results.len(),
        start.elapsed().as_secs_f64()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
