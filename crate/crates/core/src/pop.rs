//! Polynomial optimization problems and their JSON form.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::poly::{evaluate, hermitian_from_poly, realify, MultiIndex, Poly, TermKey, TOL_HERM};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Field {
    Complex,
    Real,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sense {
    Ge,
    Eq,
}

/// Constraint of the form `bound_sq − |h|² ≥ 0`, kept factored so that
/// low-order relaxations can use a Schur-complement block.
#[derive(Clone, Debug, PartialEq)]
pub struct Modulus {
    pub h: Poly,
    pub bound_sq: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Constraint {
    pub poly: Poly,
    pub sense: Sense,
    pub label: Option<String>,
    /// Feasibility/mismatch tolerance in the constraint's own units.
    pub tol: Option<f64>,
    pub modulus: Option<Modulus>,
}

impl Constraint {
    pub fn new(poly: Poly, sense: Sense) -> Self {
        Constraint { poly, sense, label: None, tol: None, modulus: None }
    }

    pub fn labeled(mut self, label: impl Into<String>) -> Self {
        self.label = Some(label.into());
        self
    }

    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = Some(tol);
        self
    }
}

/// Objective term `weight · p²` with `p` real-valued.
#[derive(Clone, Debug, PartialEq)]
pub struct SquareTerm {
    pub weight: f64,
    pub poly: Poly,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Pop {
    pub n: usize,
    pub field: Field,
    pub objective: Poly,
    pub squares: Vec<SquareTerm>,
    pub constraints: Vec<Constraint>,
    pub ball_radius: Option<f64>,
}

impl Pop {
    pub fn new(n: usize, field: Field, objective: Poly) -> Self {
        Pop { n, field, objective, squares: vec![], constraints: vec![], ball_radius: None }
    }

    pub fn ge(mut self, g: Poly) -> Self {
        self.constraints.push(Constraint::new(g, Sense::Ge));
        self
    }

    pub fn eq(mut self, g: Poly) -> Self {
        self.constraints.push(Constraint::new(g, Sense::Eq));
        self
    }

    /// Check dimensions and the field-specific coefficient structure.
    pub fn validate(&self) -> Result<()> {
        let polys = std::iter::once(&self.objective)
            .chain(self.constraints.iter().map(|c| &c.poly))
            .chain(self.squares.iter().map(|s| &s.poly));
        for p in polys {
            if p.n != self.n {
                return Err(Error::DimensionMismatch { expected: self.n, got: p.n });
            }
            match self.field {
                Field::Complex => {
                    hermitian_from_poly(p)?;
                }
                Field::Real => {
                    if !p.is_real_form(TOL_HERM) {
                        return Err(Error::InvalidInput(
                            "real-field polynomials need beta = 0 and real coefficients".into(),
                        ));
                    }
                }
            }
        }
        if let Some(r) = self.ball_radius {
            if r <= 0.0 {
                return Err(Error::InvalidInput("ball_radius must be positive".into()));
            }
        }
        Ok(())
    }

    /// Half-degree of a polynomial under this problem's field.
    pub fn half_degree(&self, p: &Poly) -> u32 {
        match self.field {
            Field::Complex => p.complex_half_degree(),
            Field::Real => p.degree().div_ceil(2),
        }
    }

    pub fn k_objective(&self) -> u32 {
        let sq = self
            .squares
            .iter()
            .map(|s| 2 * self.half_degree(&s.poly))
            .max()
            .unwrap_or(0);
        self.half_degree(&self.objective).max(sq)
    }

    pub fn k_constraint(&self, i: usize) -> u32 {
        self.half_degree(&self.constraints[i].poly)
    }

    /// `max{k_0, k_i} ≥ 1`.
    pub fn d_min(&self) -> u32 {
        (0..self.constraints.len())
            .map(|i| self.k_constraint(i))
            .chain(std::iter::once(self.k_objective()))
            .max()
            .unwrap_or(0)
            .max(1)
    }

    /// Objective with squared terms expanded.
    pub fn full_objective(&self) -> Poly {
        let mut f = self.objective.clone();
        for s in &self.squares {
            f = f.add(&s.poly.mul(&s.poly).scale_re(s.weight));
        }
        f
    }

    /// Problem with squared objective terms folded into the objective.
    pub fn with_native_squares(&self) -> Pop {
        let mut p = self.clone();
        p.objective = self.full_objective();
        p.squares.clear();
        p
    }

    pub fn objective_value(&self, z: &[Complex64]) -> Result<f64> {
        evaluate(&self.full_objective(), z)
    }

    pub fn constraint_tol(&self, i: usize, default: f64) -> f64 {
        self.constraints[i].tol.unwrap_or(default)
    }

    /// Largest violation over all constraints at `z`.
    pub fn max_violation(&self, z: &[Complex64]) -> Result<f64> {
        let mut worst = 0.0f64;
        for c in &self.constraints {
            let v = evaluate(&c.poly, z)?;
            let viol = match c.sense {
                Sense::Ge => (-v).max(0.0),
                Sense::Eq => v.abs(),
            };
            worst = worst.max(viol);
        }
        Ok(worst)
    }

    /// Real image under `z_k = x_k + i x_{k+n}`.
    pub fn realify(&self) -> Pop {
        assert_eq!(self.field, Field::Complex);
        Pop {
            n: 2 * self.n,
            field: Field::Real,
            objective: realify(&self.objective),
            squares: self
                .squares
                .iter()
                .map(|s| SquareTerm { weight: s.weight, poly: realify(&s.poly) })
                .collect(),
            constraints: self
                .constraints
                .iter()
                .map(|c| Constraint {
                    poly: realify(&c.poly),
                    sense: c.sense,
                    label: c.label.clone(),
                    tol: c.tol,
                    modulus: c.modulus.as_ref().map(|m| Modulus { h: realify_complex(&m.h), bound_sq: m.bound_sq }),
                })
                .collect(),
            ball_radius: self.ball_radius,
        }
    }

    /// Labels default to `g<i>` (0-based).
    pub fn label(&self, i: usize) -> String {
        self.constraints[i].label.clone().unwrap_or_else(|| format!("g{i}"))
    }
}

/// Realify a not-necessarily-Hermitian polynomial, keeping complex coefficients.
fn realify_complex(p: &Poly) -> Poly {
    let re = realify(&p.add(&p.conj()).scale_re(0.5));
    let im = realify(&p.sub(&p.conj()).scale(Complex64::new(0.0, -0.5)));
    re.add(&im.scale(Complex64::new(0.0, 1.0)))
}

// ---- JSON ----

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TermJson {
    pub alpha: Vec<u32>,
    #[serde(default)]
    pub beta: Vec<u32>,
    pub re: f64,
    #[serde(default)]
    pub im: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModulusJson {
    pub terms: Vec<TermJson>,
    pub bound_sq: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConstraintJson {
    pub terms: Vec<TermJson>,
    pub sense: Sense,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub modulus: Option<ModulusJson>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SquareJson {
    pub weight: f64,
    pub terms: Vec<TermJson>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PopJson {
    pub n: usize,
    pub field: Field,
    pub objective: Vec<TermJson>,
    #[serde(default)]
    pub constraints: Vec<ConstraintJson>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ball_radius: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub objective_squares: Vec<SquareJson>,
}

fn poly_from_terms(n: usize, terms: &[TermJson]) -> Result<Poly> {
    let mut p = Poly::zero(n);
    for t in terms {
        let beta = if t.beta.is_empty() { vec![0; n] } else { t.beta.clone() };
        for len in [t.alpha.len(), beta.len()] {
            if len != n {
                return Err(Error::DimensionMismatch { expected: n, got: len });
            }
        }
        p.add_term(TermKey::new(MultiIndex(t.alpha.clone()), MultiIndex(beta)), Complex64::new(t.re, t.im));
    }
    Ok(p)
}

fn terms_from_poly(p: &Poly) -> Vec<TermJson> {
    p.terms
        .iter()
        .map(|(k, c)| TermJson { alpha: k.alpha.0.clone(), beta: k.beta.0.clone(), re: c.re, im: c.im })
        .collect()
}

impl PopJson {
    pub fn into_pop(&self) -> Result<Pop> {
        let n = self.n;
        let mut pop = Pop::new(n, self.field, poly_from_terms(n, &self.objective)?);
        for c in &self.constraints {
            let modulus = match &c.modulus {
                Some(m) => Some(Modulus { h: poly_from_terms(n, &m.terms)?, bound_sq: m.bound_sq }),
                None => None,
            };
            pop.constraints.push(Constraint {
                poly: poly_from_terms(n, &c.terms)?,
                sense: c.sense,
                label: c.label.clone(),
                tol: c.tol,
                modulus,
            });
        }
        for s in &self.objective_squares {
            pop.squares.push(SquareTerm { weight: s.weight, poly: poly_from_terms(n, &s.terms)? });
        }
        pop.ball_radius = self.ball_radius;
        pop.validate()?;
        Ok(pop)
    }

    pub fn from_pop(pop: &Pop) -> PopJson {
        PopJson {
            n: pop.n,
            field: pop.field,
            objective: terms_from_poly(&pop.objective),
            constraints: pop
                .constraints
                .iter()
                .map(|c| ConstraintJson {
                    terms: terms_from_poly(&c.poly),
                    sense: c.sense,
                    label: c.label.clone(),
                    tol: c.tol,
                    modulus: c
                        .modulus
                        .as_ref()
                        .map(|m| ModulusJson { terms: terms_from_poly(&m.h), bound_sq: m.bound_sq }),
                })
                .collect(),
            ball_radius: pop.ball_radius,
            objective_squares: pop
                .squares
                .iter()
                .map(|s| SquareJson { weight: s.weight, terms: terms_from_poly(&s.poly) })
                .collect(),
        }
    }
}

pub fn parse_pop(text: &str) -> Result<Pop> {
    let j: PopJson = serde_json::from_str(text)?;
    j.into_pop()
}

pub fn pop_to_json(pop: &Pop) -> String {
    serde_json::to_string_pretty(&PopJson::from_pop(pop)).expect("pop serializes")
}
