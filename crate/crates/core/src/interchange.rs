//! Sparse SDP interchange files for external solvers.
//!
//! A problem file describes a real-symmetric SDP in the variables `y`:
//!
//! ```text
//! minimize  c0 + Σ c_i y_i
//! s.t.      F_b(y) = F_b0 + Σ y_i F_bi ⪰ 0     for every block b
//!           r_k(y) = r_k0 + Σ a_ki y_i ≥ 0 or = 0
//! ```
//!
//! and a solution file carries `y` (plus optional duals). Certification
//! always runs on the re-ingested `y`; see `docs/sdp-format.md`.

use crate::error::{Error, Result};
use crate::pop::Sense;
use crate::relaxation::{upper_index, Affine, Cone, SdpProblem};
use crate::sdp::{check_solution, Residuals, SdpSolution, SdpStatus, TOL_SDP};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

pub const FORMAT: &str = "cmoment-sdp";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct LinearJson {
    pub constant: f64,
    /// `[variable, coefficient]` pairs.
    pub coefs: Vec<(usize, f64)>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct BlockJson {
    pub size: usize,
    /// Upper-triangle `[row, col, value]` of the constant matrix.
    pub constant: Vec<(usize, usize, f64)>,
    /// Upper-triangle `[variable, row, col, value]` of the coefficient matrices.
    pub coefs: Vec<(usize, usize, usize, f64)>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct RowJson {
    pub label: String,
    /// `"ge"` (≥ 0) or `"eq"` (= 0).
    pub sense: String,
    pub constant: f64,
    pub coefs: Vec<(usize, f64)>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct SdpFile {
    pub format: String,
    pub version: u32,
    pub num_vars: usize,
    pub objective: LinearJson,
    pub blocks: Vec<BlockJson>,
    pub rows: Vec<RowJson>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize, PartialEq)]
pub struct SolutionFile {
    pub y: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dual_obj: Option<f64>,
    /// Full dual matrix per file block, if the solver reports them.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub block_duals: Option<Vec<Vec<Vec<f64>>>>,
    /// Multiplier per file row.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub row_duals: Option<Vec<f64>>,
}

fn linear(a: &Affine) -> LinearJson {
    LinearJson { constant: a.constant, coefs: a.terms.clone() }
}

/// Where each file row comes from.
enum RowSource {
    Row(usize),
    Pinned { block: usize, idx: usize, imag: bool },
}

fn layout(sdp: &SdpProblem) -> (Vec<usize>, Vec<RowSource>) {
    let psd: Vec<usize> = (0..sdp.blocks.len()).filter(|&b| sdp.blocks[b].cone == Cone::Psd).collect();
    let mut rows: Vec<RowSource> = (0..sdp.rows.len()).map(RowSource::Row).collect();
    for (b, blk) in sdp.blocks.iter().enumerate().filter(|(_, b)| b.cone == Cone::Zero) {
        for (idx, e) in blk.entries.iter().enumerate() {
            if !e.re.is_zero() {
                rows.push(RowSource::Pinned { block: b, idx, imag: false });
            }
            if !e.im.is_zero() {
                rows.push(RowSource::Pinned { block: b, idx, imag: true });
            }
        }
    }
    (psd, rows)
}

/// Export a real-symmetric (embedded) problem.
pub fn to_file(sdp: &SdpProblem) -> Result<SdpFile> {
    if sdp.psd_blocks().any(|b| b.hermitian) {
        return Err(Error::InvalidInput("interchange export needs the real embedding".into()));
    }
    let (psd, sources) = layout(sdp);
    let blocks = psd
        .iter()
        .map(|&b| {
            let blk = &sdp.blocks[b];
            let mut constant = vec![];
            let mut coefs = vec![];
            for i in 0..blk.size {
                for j in i..blk.size {
                    let e = &blk.entries[upper_index(blk.size, i, j)].re;
                    if e.constant != 0.0 {
                        constant.push((i, j, e.constant));
                    }
                    coefs.extend(e.terms.iter().map(|&(v, c)| (v, i, j, c)));
                }
            }
            coefs.sort_by_key(|t| (t.0, t.1, t.2));
            BlockJson { size: blk.size, constant, coefs }
        })
        .collect();
    let rows = sources
        .iter()
        .map(|s| match *s {
            RowSource::Row(r) => {
                let row = &sdp.rows[r];
                RowJson {
                    label: row.label.clone(),
                    sense: if row.sense == Sense::Eq { "eq" } else { "ge" }.into(),
                    constant: row.expr.constant,
                    coefs: row.expr.terms.clone(),
                }
            }
            RowSource::Pinned { block, idx, imag } => {
                let e = &sdp.blocks[block].entries[idx];
                let a = if imag { &e.im } else { &e.re };
                RowJson {
                    label: format!("block{block}[{idx}].{}", if imag { "im" } else { "re" }),
                    sense: "eq".into(),
                    constant: a.constant,
                    coefs: a.terms.clone(),
                }
            }
        })
        .collect();
    Ok(SdpFile {
        format: FORMAT.into(),
        version: VERSION,
        num_vars: sdp.num_vars,
        objective: linear(&sdp.objective),
        blocks,
        rows,
    })
}

pub fn write_problem(sdp: &SdpProblem) -> Result<String> {
    Ok(serde_json::to_string(&to_file(sdp)?)?)
}

/// Package an internal solution in the solution-file layout.
pub fn solution_file(sdp: &SdpProblem, sol: &SdpSolution) -> SolutionFile {
    let (psd, sources) = layout(sdp);
    let block_duals = psd
        .iter()
        .map(|&b| {
            sol.block_duals[b]
                .as_ref()
                .map(|x| (0..x.nrows()).map(|i| x.row(i).iter().copied().collect()).collect())
        })
        .collect::<Option<Vec<Vec<Vec<f64>>>>>();
    let row_duals = sources
        .iter()
        .map(|s| match *s {
            RowSource::Row(r) => sol.row_duals[r],
            RowSource::Pinned { block, idx, imag } => sol.zero_duals[block]
                .iter()
                .find(|t| t.0 == idx)
                .map(|t| if imag { t.2 } else { t.1 })
                .unwrap_or(0.0),
        })
        .collect();
    SolutionFile { y: sol.y.clone(), dual_obj: Some(sol.dual_obj), block_duals, row_duals: Some(row_duals) }
}

/// Re-ingest an external solution; residuals and status are recomputed here.
pub fn read_solution(sdp: &SdpProblem, text: &str) -> Result<SdpSolution> {
    let f: SolutionFile = serde_json::from_str(text)?;
    if f.y.len() != sdp.num_vars {
        return Err(Error::InvalidInput(format!("solution has {} values, problem has {} variables", f.y.len(), sdp.num_vars)));
    }
    if f.y.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("solution contains non-finite values".into()));
    }
    let (psd, sources) = layout(sdp);
    let mut block_duals = vec![None; sdp.blocks.len()];
    if let Some(bd) = &f.block_duals {
        if bd.len() != psd.len() {
            return Err(Error::InvalidInput("block_duals length does not match the block list".into()));
        }
        for (&b, m) in psd.iter().zip(bd) {
            let s = sdp.blocks[b].size;
            if m.len() != s || m.iter().any(|r| r.len() != s) {
                return Err(Error::InvalidInput(format!("dual of block {b} is not {s}×{s}")));
            }
            block_duals[b] = Some(DMatrix::from_fn(s, s, |i, j| m[i][j]));
        }
    }
    let mut row_duals = vec![0.0; sdp.rows.len()];
    let mut zero_duals: Vec<Vec<(usize, f64, f64)>> = vec![vec![]; sdp.blocks.len()];
    if let Some(rd) = &f.row_duals {
        if rd.len() != sources.len() {
            return Err(Error::InvalidInput("row_duals length does not match the row list".into()));
        }
        for (s, &u) in sources.iter().zip(rd) {
            match *s {
                RowSource::Row(r) => row_duals[r] = u,
                RowSource::Pinned { block, idx, imag } => {
                    let list = &mut zero_duals[block];
                    let pos = match list.iter().position(|t| t.0 == idx) {
                        Some(p) => p,
                        None => {
                            list.push((idx, 0.0, 0.0));
                            list.len() - 1
                        }
                    };
                    if imag {
                        list[pos].2 = u;
                    } else {
                        list[pos].1 = u;
                    }
                }
            }
        }
    }
    let primal_obj = sdp.objective.eval(&f.y);
    let has_duals = f.block_duals.is_some() && f.dual_obj.is_some();
    let mut sol = SdpSolution {
        y: f.y,
        block_duals,
        zero_duals,
        row_duals,
        primal_obj,
        dual_obj: f.dual_obj.unwrap_or(f64::NAN),
        status: SdpStatus::Stalled,
        residuals: Residuals::default(),
        iterations: 0,
    };
    let rep = check_solution(sdp, &sol);
    let scale = 1.0 + primal_obj.abs();
    sol.residuals = Residuals { primal: rep.primal / scale, dual: if has_duals { rep.dual } else { f64::NAN }, gap: rep.gap };
    sol.status = if has_duals && rep.primal <= TOL_SDP * scale && rep.dual <= TOL_SDP && rep.gap <= TOL_SDP {
        SdpStatus::Optimal
    } else if rep.primal <= 1e-6 * scale && (!has_duals || (rep.dual <= 1e-6 && rep.gap <= 1e-6)) {
        SdpStatus::NearOptimal
    } else {
        SdpStatus::Stalled
    };
    Ok(sol)
}
