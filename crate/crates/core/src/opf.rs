//! Optimal power flow as a complex QCQP over bus voltages.
//!
//! Case files use the MATPOWER matrix layout (`mpc.bus`, `mpc.gen`,
//! `mpc.branch`, `mpc.gencost`, `mpc.baseMVA`). Powers stay in MW/MVAr,
//! impedances in per-unit.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::poly::{MultiIndex, Poly, TermKey};
use crate::pop::{Constraint, Field, Modulus, Pop, Sense, SquareTerm};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bus {
    pub id: usize,
    pub kind: u32,
    pub pd: f64,
    pub qd: f64,
    pub gs: f64,
    pub bs: f64,
    pub vmax: f64,
    pub vmin: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Generator {
    pub bus: usize,
    pub pmax: f64,
    pub pmin: f64,
    pub qmax: f64,
    pub qmin: f64,
    pub status: bool,
    /// Polynomial cost `c2 P² + c1 P + c0`, P in MW.
    pub c2: f64,
    pub c1: f64,
    pub c0: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub from: usize,
    pub to: usize,
    pub r: f64,
    pub x: f64,
    pub b: f64,
    /// MVA rating, 0 = unlimited.
    pub rate_a: f64,
    /// Off-nominal tap ratio, 0 read as 1.
    pub ratio: f64,
    /// Phase shift in degrees.
    pub angle: f64,
    pub status: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkCase {
    pub base_mva: f64,
    pub buses: Vec<Bus>,
    pub generators: Vec<Generator>,
    pub branches: Vec<Branch>,
    /// Minimize active losses instead of generation cost.
    #[serde(default)]
    pub loss_objective: bool,
}

// ---- parsing ----

fn strip_comment(line: &str) -> &str {
    line.split('%').next().unwrap_or("")
}

fn parse_matrix(lines: &[&str], start: usize, name: &str) -> Result<(Vec<(usize, Vec<f64>)>, usize)> {
    let mut rows = vec![];
    let first = strip_comment(lines[start]);
    let mut rest = first[first.find('[').unwrap() + 1..].to_string();
    let mut ln = start;
    loop {
        let (body, done) = match rest.find(']') {
            Some(p) => (rest[..p].to_string(), true),
            None => (rest.clone(), false),
        };
        for chunk in body.split(';') {
            let toks: Vec<&str> = chunk.split(|c: char| c.is_whitespace() || c == ',').filter(|t| !t.is_empty()).collect();
            if toks.is_empty() {
                continue;
            }
            let mut vals = vec![];
            for t in toks {
                vals.push(t.parse::<f64>().map_err(|_| Error::ParseError {
                    line: ln + 1,
                    msg: format!("bad number '{t}' in {name}"),
                })?);
            }
            rows.push((ln + 1, vals));
        }
        if done {
            return Ok((rows, ln));
        }
        ln += 1;
        if ln >= lines.len() {
            return Err(Error::ParseError { line: ln, msg: format!("unterminated matrix {name}") });
        }
        rest = strip_comment(lines[ln]).to_string();
    }
}

fn need(row: &(usize, Vec<f64>), k: usize, what: &str) -> Result<()> {
    if row.1.len() < k {
        return Err(Error::ParseError { line: row.0, msg: format!("{what} row needs at least {k} columns") });
    }
    Ok(())
}

pub fn parse_case(text: &str) -> Result<NetworkCase> {
    let lines: Vec<&str> = text.lines().collect();
    let mut base = None;
    let mut mats: BTreeMap<String, Vec<(usize, Vec<f64>)>> = BTreeMap::new();
    let mut i = 0;
    while i < lines.len() {
        let l = strip_comment(lines[i]).trim();
        if let Some(rest) = l.strip_prefix("mpc.") {
            let (name, rhs) = rest.split_once('=').map(|(a, b)| (a.trim(), b.trim())).unwrap_or((rest, ""));
            if name == "baseMVA" {
                let v = rhs.trim_end_matches(';').trim();
                base = Some(v.parse::<f64>().map_err(|_| Error::ParseError { line: i + 1, msg: "bad baseMVA".into() })?);
            } else if rhs.starts_with('[') {
                let (rows, end) = parse_matrix(&lines, i, name)?;
                mats.insert(name.to_string(), rows);
                i = end;
            }
        }
        i += 1;
    }
    let base_mva = base.ok_or_else(|| Error::MissingSection("baseMVA".into()))?;
    let get = |k: &str| -> Result<&Vec<(usize, Vec<f64>)>> {
        mats.get(k).filter(|m| !m.is_empty()).ok_or_else(|| Error::MissingSection(k.into()))
    };
    let mut buses = vec![];
    for r in get("bus")? {
        need(r, 13, "bus")?;
        let v = &r.1;
        buses.push(Bus { id: v[0] as usize, kind: v[1] as u32, pd: v[2], qd: v[3], gs: v[4], bs: v[5], vmax: v[11], vmin: v[12] });
    }
    let mut generators = vec![];
    for r in get("gen")? {
        need(r, 10, "gen")?;
        let v = &r.1;
        generators.push(Generator {
            bus: v[0] as usize,
            qmax: v[3],
            qmin: v[4],
            status: v[7] > 0.0,
            pmax: v[8],
            pmin: v[9],
            c2: 0.0,
            c1: 0.0,
            c0: 0.0,
        });
    }
    let costs = get("gencost")?;
    if costs.len() < generators.len() {
        return Err(Error::ParseError { line: costs.last().map_or(0, |r| r.0), msg: "fewer gencost rows than generators".into() });
    }
    for (g, r) in generators.iter_mut().zip(costs) {
        need(r, 4, "gencost")?;
        let v = &r.1;
        if v[0] as u32 != 2 {
            return Err(Error::ParseError { line: r.0, msg: "only polynomial costs (model 2) are supported".into() });
        }
        let k = v[3] as usize;
        need(r, 4 + k, "gencost")?;
        let c = &v[4..4 + k];
        if k > 3 {
            return Err(Error::ParseError { line: r.0, msg: "cost polynomials above degree 2 are not supported".into() });
        }
        let coef = |p: usize| if p < k { c[k - 1 - p] } else { 0.0 };
        g.c0 = coef(0);
        g.c1 = coef(1);
        g.c2 = coef(2);
    }
    let mut branches = vec![];
    for r in get("branch")? {
        need(r, 11, "branch")?;
        let v = &r.1;
        branches.push(Branch {
            from: v[0] as usize,
            to: v[1] as usize,
            r: v[2],
            x: v[3],
            b: v[4],
            rate_a: v[5],
            ratio: v[8],
            angle: v[9],
            status: v[10] > 0.0,
        });
    }
    let case = NetworkCase { base_mva, buses, generators, branches, loss_objective: false };
    case.validate()?;
    Ok(case)
}

impl NetworkCase {
    pub fn validate(&self) -> Result<()> {
        let ids: BTreeSet<usize> = self.buses.iter().map(|b| b.id).collect();
        if ids.len() != self.buses.len() {
            return Err(Error::InvalidInput("duplicate bus ids".into()));
        }
        for g in &self.generators {
            if !ids.contains(&g.bus) {
                return Err(Error::InvalidInput(format!("generator at unknown bus {}", g.bus)));
            }
        }
        for br in &self.branches {
            if !ids.contains(&br.from) || !ids.contains(&br.to) {
                return Err(Error::InvalidInput(format!("branch {}-{} references an unknown bus", br.from, br.to)));
            }
            if br.rate_a < 0.0 {
                return Err(Error::InvalidInput("negative branch rating".into()));
            }
        }
        if !(self.base_mva > 0.0) {
            return Err(Error::InvalidInput("baseMVA must be positive".into()));
        }
        Ok(())
    }

    fn bus_pos(&self) -> BTreeMap<usize, usize> {
        self.buses.iter().enumerate().map(|(i, b)| (b.id, i)).collect()
    }

    pub fn is_connected(&self) -> bool {
        let pos = self.bus_pos();
        let nb = self.buses.len();
        if nb == 0 {
            return true;
        }
        let mut adj = vec![vec![]; nb];
        for br in self.branches.iter().filter(|b| b.status) {
            let (f, t) = (pos[&br.from], pos[&br.to]);
            adj[f].push(t);
            adj[t].push(f);
        }
        let mut seen = vec![false; nb];
        seen[0] = true;
        let mut q = VecDeque::from([0]);
        while let Some(u) = q.pop_front() {
            for &v in &adj[u] {
                if !seen[v] {
                    seen[v] = true;
                    q.push_back(v);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }
}

// ---- preprocessing ----

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct PreprocessOptions {
    /// Merge the endpoints of branches with `|r + jx|` below this (p.u.).
    pub min_impedance: Option<f64>,
    /// Raise every branch resistance to at least this (p.u.).
    pub min_resistance: Option<f64>,
    pub loss_objective: bool,
}

pub fn preprocess(case: &NetworkCase, opts: &PreprocessOptions) -> NetworkCase {
    let mut c = case.clone();
    if let Some(thr) = opts.min_impedance {
        loop {
            let Some(k) = c.branches.iter().position(|b| b.status && b.from != b.to && b.r.hypot(b.x) < thr) else {
                break;
            };
            let br = c.branches.remove(k);
            let (keep, gone) = (br.from, br.to);
            merge_bus(&mut c, keep, gone);
        }
    }
    if let Some(mr) = opts.min_resistance {
        for b in &mut c.branches {
            if b.r < mr {
                b.r = mr;
            }
        }
    }
    if opts.loss_objective {
        c.loss_objective = true;
    }
    c
}

fn merge_bus(c: &mut NetworkCase, keep: usize, gone: usize) {
    let Some(gi) = c.buses.iter().position(|b| b.id == gone) else { return };
    let g = c.buses.remove(gi);
    if let Some(k) = c.buses.iter_mut().find(|b| b.id == keep) {
        k.pd += g.pd;
        k.qd += g.qd;
        k.gs += g.gs;
        k.bs += g.bs;
        k.vmin = k.vmin.max(g.vmin);
        k.vmax = k.vmax.min(g.vmax);
        k.kind = k.kind.max(g.kind);
    }
    for gen in &mut c.generators {
        if gen.bus == gone {
            gen.bus = keep;
        }
    }
    for b in &mut c.branches {
        if b.from == gone {
            b.from = keep;
        }
        if b.to == gone {
            b.to = keep;
        }
    }
    c.branches.retain(|b| b.from != b.to);
}

// ---- model ----

/// π-model terminal admittances `(Y_ff, Y_ft, Y_tf, Y_tt)`.
pub fn branch_admittance(br: &Branch) -> (Complex64, Complex64, Complex64, Complex64) {
    let ys = Complex64::new(1.0, 0.0) / Complex64::new(br.r, br.x);
    let bc = Complex64::new(0.0, br.b / 2.0);
    let ratio = if br.ratio == 0.0 { 1.0 } else { br.ratio };
    let t = Complex64::from_polar(ratio, br.angle.to_radians());
    let yff = (ys + bc) / (ratio * ratio);
    let yft = -ys / t.conj();
    let ytf = -ys / t;
    (yff, yft, ytf, ys + bc)
}

/// Bus admittance matrix (indexed by bus position).
pub fn admittance_matrix(case: &NetworkCase) -> Vec<Vec<Complex64>> {
    let pos = case.bus_pos();
    let nb = case.buses.len();
    let mut y = vec![vec![Complex64::new(0.0, 0.0); nb]; nb];
    for br in case.branches.iter().filter(|b| b.status) {
        let (f, t) = (pos[&br.from], pos[&br.to]);
        let (yff, yft, ytf, ytt) = branch_admittance(br);
        y[f][f] += yff;
        y[f][t] += yft;
        y[t][f] += ytf;
        y[t][t] += ytt;
    }
    for (i, b) in case.buses.iter().enumerate() {
        y[i][i] += Complex64::new(b.gs, b.bs) / case.base_mva;
    }
    y
}

fn mono(n: usize, i: usize, j: usize, c: Complex64) -> Poly {
    Poly::monomial(MultiIndex::unit(n, i), MultiIndex::unit(n, j), c)
}

/// Injected power `(P_i, Q_i)` in per-unit as Hermitian forms.
pub fn injections(y: &[Vec<Complex64>], i: usize) -> (Poly, Poly) {
    let n = y.len();
    let mut p = Poly::zero(n);
    let mut q = Poly::zero(n);
    let half = Complex64::new(0.5, 0.0);
    let two_i = Complex64::new(0.0, 2.0);
    for (j, &yij) in y[i].iter().enumerate() {
        if yij == Complex64::new(0.0, 0.0) {
            continue;
        }
        // S_i = Σ_j conj(Y_ij) z_i z̄_j
        p = p.add(&mono(n, i, j, yij.conj() * half)).add(&mono(n, j, i, yij * half));
        q = q.add(&mono(n, i, j, yij.conj() / two_i)).add(&mono(n, j, i, -yij / two_i));
    }
    (p.prune(0.0), q.prune(0.0))
}

/// Labels of the emitted constraints, in order.
#[derive(Clone, Debug, Serialize)]
pub struct OpfModel {
    pub bus_ids: Vec<usize>,
    pub labels: Vec<String>,
    /// Position of the angle reference (first type-3 bus, else the first bus).
    pub reference: usize,
}

impl OpfModel {
    /// Rotate voltages so the reference bus has angle zero.
    pub fn fix_angle(&self, z: &[Complex64]) -> Vec<Complex64> {
        let r = z.get(self.reference).copied().unwrap_or_default();
        if r.norm() == 0.0 {
            return z.to_vec();
        }
        let rot = r.conj() / r.norm();
        z.iter().map(|v| v * rot).collect()
    }
}

/// Voltage feasibility tolerance in p.u. (applied to |V|² as 2·Vmax·tol).
pub const VOLTAGE_TOL: f64 = 0.005;

fn bounds(pop: &mut Pop, expr: &Poly, lo: f64, hi: f64, label: &str, tol: Option<f64>) {
    let n = expr.n;
    let start = pop.constraints.len();
    if lo == hi {
        pop.constraints.push(Constraint::new(expr.sub(&Poly::constant(n, lo)), Sense::Eq).labeled(label));
    } else {
        if lo.is_finite() {
            pop.constraints.push(Constraint::new(expr.sub(&Poly::constant(n, lo)), Sense::Ge).labeled(format!("{label}_lo")));
        }
        if hi.is_finite() {
            pop.constraints.push(Constraint::new(Poly::constant(n, hi).sub(expr), Sense::Ge).labeled(format!("{label}_hi")));
        }
    }
    if let Some(t) = tol {
        pop.constraints[start..].iter_mut().for_each(|c| c.tol = Some(t));
    }
}

/// Complex QCQP: objective in $/h, power rows in MW/MVAr, voltage rows in p.u.².
pub fn build_opf_pop(case: &NetworkCase) -> Result<(Pop, OpfModel)> {
    case.validate()?;
    if !case.is_connected() {
        return Err(Error::DisconnectedNetwork);
    }
    let n = case.buses.len();
    let base = case.base_mva;
    let y = admittance_matrix(case);
    let pos = case.bus_pos();
    let mut gen_at: BTreeMap<usize, &Generator> = BTreeMap::new();
    for g in case.generators.iter().filter(|g| g.status) {
        if gen_at.insert(pos[&g.bus], g).is_some() {
            return Err(Error::InvalidInput(format!("more than one generator at bus {}", g.bus)));
        }
    }
    let inj: Vec<(Poly, Poly)> = (0..n).map(|i| injections(&y, i)).collect();
    let mut objective = Poly::zero(n);
    let mut squares = vec![];
    if case.loss_objective {
        for (p, _) in &inj {
            objective = objective.add(&p.scale_re(base));
        }
    } else {
        for (&i, g) in &gen_at {
            let b = &case.buses[i];
            // generation in MW
            let pg = inj[i].0.scale_re(base).add(&Poly::constant(n, b.pd));
            objective = objective.add(&pg.scale_re(g.c1)).add(&Poly::constant(n, g.c0));
            if g.c2 != 0.0 {
                squares.push(SquareTerm { weight: g.c2, poly: pg });
            }
        }
    }
    let mut pop = Pop::new(n, Field::Complex, objective.prune(0.0));
    pop.squares = squares;
    for (i, b) in case.buses.iter().enumerate() {
        let (p, q) = &inj[i];
        let (pl, ph, ql, qh) = match gen_at.get(&i) {
            Some(g) => (g.pmin, g.pmax, g.qmin, g.qmax),
            None => (0.0, 0.0, 0.0, 0.0),
        };
        // base·P_i = P_g − P_d
        bounds(&mut pop, &p.scale_re(base), pl - b.pd, ph - b.pd, &format!("P{}", b.id), None);
        bounds(&mut pop, &q.scale_re(base), ql - b.qd, qh - b.qd, &format!("Q{}", b.id), None);
    }
    for (i, b) in case.buses.iter().enumerate() {
        bounds(&mut pop, &Poly::abs2(n, i), b.vmin * b.vmin, b.vmax * b.vmax, &format!("V{}", b.id), Some(VOLTAGE_TOL * 2.0 * b.vmax));
    }
    for br in case.branches.iter().filter(|b| b.status && b.rate_a > 0.0) {
        let (yff, yft, ytf, ytt) = branch_admittance(br);
        let (f, t) = (pos[&br.from], pos[&br.to]);
        for (i, j, yii, yij, tag) in [(f, t, yff, yft, "ft"), (t, f, ytt, ytf, "tf")] {
            // conj(S_ij) = base·(Y_ii |z_i|² + Y_ij z_j z̄_i)
            let h = mono(n, i, i, yii * base).add(&mono(n, j, i, yij * base));
            let s2 = br.rate_a * br.rate_a;
            let g = Poly::constant(n, s2).sub(&h.mul(&h.conj())).prune(0.0);
            let mut c = Constraint::new(g, Sense::Ge).labeled(format!("S{}_{}_{tag}", br.from, br.to));
            c.modulus = Some(Modulus { h, bound_sq: s2 });
            pop.constraints.push(c);
        }
    }
    pop.validate()?;
    let labels = (0..pop.constraints.len()).map(|i| pop.label(i)).collect();
    let reference = case.buses.iter().position(|b| b.kind == 3).unwrap_or(0);
    Ok((pop, OpfModel { bus_ids: case.buses.iter().map(|b| b.id).collect(), labels, reference }))
}

/// Generation cost (or losses) at a voltage vector, straight from the network.
pub fn evaluate_cost(case: &NetworkCase, z: &[Complex64]) -> f64 {
    let y = admittance_matrix(case);
    let base = case.base_mva;
    let s: Vec<Complex64> =
        (0..z.len()).map(|i| z[i] * (0..z.len()).map(|j| y[i][j] * z[j]).sum::<Complex64>().conj() * base).collect();
    if case.loss_objective {
        return s.iter().map(|v| v.re).sum();
    }
    let pos = case.bus_pos();
    case.generators
        .iter()
        .filter(|g| g.status)
        .map(|g| {
            let i = pos[&g.bus];
            let pg = s[i].re + case.buses[i].pd;
            g.c2 * pg * pg + g.c1 * pg + g.c0
        })
        .sum()
}

/// Coefficient of `z^α z̄^β` for `α = e_i, β = e_j`.
pub fn cross_coeff(p: &Poly, i: usize, j: usize) -> Complex64 {
    let n = p.n;
    p.coeff(&TermKey::new(MultiIndex::unit(n, i), MultiIndex::unit(n, j)))
}
