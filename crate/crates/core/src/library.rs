//! Monomial candidate-function library.
//!
//! Terms are ordered by total degree, then by descending exponent vector, so
//! for two states the degree-2 library reads `1, x1, x2, x1^2, x1*x2, x2^2`.
//! Checkpoints and ground-truth tables depend on this order; do not change it.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::linalg::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LibrarySpec {
    pub state_dim: usize,
    pub max_degree: usize,
    pub include_constant: bool,
}

impl LibrarySpec {
    pub fn new(state_dim: usize, max_degree: usize, include_constant: bool) -> Result<Self> {
        let spec = Self {
            state_dim,
            max_degree,
            include_constant,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.state_dim == 0 || self.max_degree == 0 {
            return Err(Error::Config(format!(
                "library needs state_dim >= 1 and max_degree >= 1, got {} and {}",
                self.state_dim, self.max_degree
            )));
        }
        Ok(())
    }

    /// Cubic library used for each benchmark; Lorenz omits the constant.
    pub fn for_system(kind: crate::dynamics::SystemKind, state_dim: usize) -> Result<Self> {
        let include_constant = kind != crate::dynamics::SystemKind::Lorenz;
        Self::new(state_dim, 3, include_constant)
    }

    /// `C(n + d, d)`, minus one without the constant term.
    pub fn term_count(&self) -> usize {
        let (n, d) = (self.state_dim as u128, self.max_degree as u128);
        let mut c: u128 = 1;
        for i in 1..=d {
            c = c * (n + i) / i;
        }
        c as usize - usize::from(!self.include_constant)
    }
}

/// A monomial `prod_i x_i^{e_i}`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Term {
    pub exponents: Vec<u32>,
}

impl Term {
    pub fn degree(&self) -> u32 {
        self.exponents.iter().sum()
    }

    pub fn is_constant(&self) -> bool {
        self.degree() == 0
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.exponents
            .iter()
            .zip(x)
            .map(|(&e, &v)| v.powi(e as i32))
            .product()
    }

    /// Human-readable form using 1-based variable names, e.g. `x1^2*x3`.
    pub fn display(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_constant() {
            return write!(f, "1");
        }
        let mut first = true;
        for (i, &e) in self.exponents.iter().enumerate() {
            if e == 0 {
                continue;
            }
            if !first {
                write!(f, "*")?;
            }
            first = false;
            write!(f, "x{}", i + 1)?;
            if e > 1 {
                write!(f, "^{e}")?;
            }
        }
        Ok(())
    }
}

/// All monomials of total degree `<= max_degree` in canonical order.
pub fn build_library(spec: &LibrarySpec) -> Result<Vec<Term>> {
    spec.validate()?;
    let mut terms = Vec::with_capacity(spec.term_count());
    let start = if spec.include_constant { 0 } else { 1 };
    for degree in start..=spec.max_degree as u32 {
        let mut current = vec![0u32; spec.state_dim];
        push_degree(&mut terms, &mut current, 0, degree);
    }
    Ok(terms)
}

fn push_degree(out: &mut Vec<Term>, current: &mut [u32], pos: usize, remaining: u32) {
    if pos + 1 == current.len() {
        current[pos] = remaining;
        out.push(Term {
            exponents: current.to_vec(),
        });
        return;
    }
    for e in (0..=remaining).rev() {
        current[pos] = e;
        push_degree(out, current, pos + 1, remaining - e);
    }
    current[pos] = 0;
}

/// An instantiated library with fast term lookup.
#[derive(Clone, Debug, PartialEq)]
pub struct Library {
    spec: LibrarySpec,
    terms: Vec<Term>,
    index: HashMap<Vec<u32>, usize>,
}

impl Library {
    pub fn new(spec: LibrarySpec) -> Result<Self> {
        let terms = build_library(&spec)?;
        let index = terms
            .iter()
            .enumerate()
            .map(|(i, t)| (t.exponents.clone(), i))
            .collect();
        Ok(Self { spec, terms, index })
    }

    pub fn spec(&self) -> &LibrarySpec {
        &self.spec
    }

    pub fn terms(&self) -> &[Term] {
        &self.terms
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn term_index(&self, exponents: &[u32]) -> Result<usize> {
        if exponents.len() != self.spec.state_dim {
            return Err(Error::Lookup(format!(
                "exponent vector of length {} for a {}-dimensional library",
                exponents.len(),
                self.spec.state_dim
            )));
        }
        self.index.get(exponents).copied().ok_or_else(|| {
            Error::Lookup(format!(
                "no term with exponents {exponents:?} (max degree {}, constant {})",
                self.spec.max_degree, self.spec.include_constant
            ))
        })
    }

    /// Evaluates every term on every row of `states` (b x n) giving b x l.
    pub fn evaluate(&self, states: &Matrix) -> Result<Matrix> {
        let n = self.spec.state_dim;
        if states.cols() != n {
            return Err(shape_err(
                "evaluate_library",
                format!("states have {} columns, library expects {n}", states.cols()),
            ));
        }
        let l = self.terms.len();
        let d = self.spec.max_degree;
        let mut out = Matrix::zeros(states.rows(), l);
        let mut powers = vec![0.0; n * (d + 1)];
        for r in 0..states.rows() {
            let x = states.row(r);
            for (i, &xi) in x.iter().enumerate() {
                let p = &mut powers[i * (d + 1)..(i + 1) * (d + 1)];
                p[0] = 1.0;
                for e in 1..=d {
                    p[e] = p[e - 1] * xi;
                }
            }
            let row = out.row_mut(r);
            for (slot, term) in row.iter_mut().zip(&self.terms) {
                let mut v = 1.0;
                for (i, &e) in term.exponents.iter().enumerate() {
                    if e > 0 {
                        v *= powers[i * (d + 1) + e as usize];
                    }
                }
                *slot = v;
            }
        }
        Ok(out)
    }

    /// Evaluates the library at a single state.
    pub fn evaluate_row(&self, x: &[f64], out: &mut [f64]) {
        for (slot, term) in out.iter_mut().zip(&self.terms) {
            *slot = term.eval(x);
        }
    }

    pub fn display_names(&self) -> Vec<String> {
        self.terms.iter().map(Term::display).collect()
    }
}

pub fn evaluate_library(spec: &LibrarySpec, states: &Matrix) -> Result<Matrix> {
    Library::new(*spec)?.evaluate(states)
}

pub fn term_index(spec: &LibrarySpec, exponents: &[u32]) -> Result<usize> {
    Library::new(*spec)?.term_index(exponents)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn spec(n: usize, d: usize, c: bool) -> LibrarySpec {
        LibrarySpec::new(n, d, c).unwrap()
    }

    /// Brute force: every exponent vector in [0, d]^n with sum <= d.
    fn brute_force_count(n: usize, d: usize, constant: bool) -> usize {
        let mut count = 0;
        let mut e = vec![0usize; n];
        loop {
            let s: usize = e.iter().sum();
            if s <= d && (constant || s > 0) {
                count += 1;
            }
            let mut i = 0;
            loop {
                if i == n {
                    return count;
                }
                e[i] += 1;
                if e[i] <= d {
                    break;
                }
                e[i] = 0;
                i += 1;
            }
        }
    }

    #[test]
    fn matrix_shape_table_counts() {
        assert_eq!(build_library(&spec(3, 3, false)).unwrap().len(), 19);
        assert_eq!(build_library(&spec(3, 3, true)).unwrap().len(), 20);
        assert_eq!(build_library(&spec(2, 3, true)).unwrap().len(), 10);
        assert_eq!(build_library(&spec(10, 3, true)).unwrap().len(), 286);
    }

    #[test]
    fn count_formula_matches_enumeration() {
        for n in 1..=12 {
            for d in 1..=4 {
                for c in [false, true] {
                    let s = spec(n, d, c);
                    let expected = brute_force_count(n, d, c);
                    assert_eq!(s.term_count(), expected, "n={n} d={d} c={c}");
                    assert_eq!(build_library(&s).unwrap().len(), expected);
                }
            }
        }
    }

    #[test]
    fn graded_order_and_display() {
        let names: Vec<String> = build_library(&spec(2, 2, true))
            .unwrap()
            .iter()
            .map(Term::display)
            .collect();
        assert_eq!(names, ["1", "x1", "x2", "x1^2", "x1*x2", "x2^2"]);
        let terms = build_library(&spec(3, 3, false)).unwrap();
        assert_eq!(terms[3].display(), "x1^2");
        assert_eq!(terms.last().unwrap().display(), "x3^3");
    }

    #[test]
    fn constant_present_iff_configured() {
        let with = build_library(&spec(3, 2, true)).unwrap();
        let without = build_library(&spec(3, 2, false)).unwrap();
        assert_eq!(with.iter().filter(|t| t.is_constant()).count(), 1);
        assert!(with[0].is_constant());
        assert_eq!(without.iter().filter(|t| t.is_constant()).count(), 0);
    }

    #[test]
    fn evaluation_example() {
        let lib = Library::new(spec(2, 2, true)).unwrap();
        let x = Matrix::from_rows(&[vec![2.0, 3.0]]).unwrap();
        assert_eq!(lib.evaluate(&x).unwrap().row(0), &[1.0, 2.0, 3.0, 4.0, 6.0, 9.0]);
    }

    #[test]
    fn evaluation_at_origin() {
        let with = Library::new(spec(3, 3, true)).unwrap();
        let without = Library::new(spec(3, 3, false)).unwrap();
        let zero = Matrix::zeros(1, 3);
        let row = with.evaluate(&zero).unwrap();
        assert_eq!(row.get(0, 0), 1.0);
        assert!(row.row(0)[1..].iter().all(|&v| v == 0.0));
        assert!(without.evaluate(&zero).unwrap().row(0).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identical_rows_give_identical_outputs() {
        let lib = Library::new(spec(3, 3, false)).unwrap();
        let x = Matrix::from_rows(&vec![vec![0.3, -1.2, 2.5]; 4]).unwrap();
        let theta = lib.evaluate(&x).unwrap();
        for r in 1..4 {
            assert_eq!(theta.row(r), theta.row(0));
        }
    }

    #[test]
    fn evaluation_rejects_wrong_width() {
        let lib = Library::new(spec(3, 2, false)).unwrap();
        assert!(matches!(
            lib.evaluate(&Matrix::zeros(2, 2)),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn term_index_examples() {
        let s = spec(3, 3, true);
        assert_eq!(term_index(&s, &[0, 0, 0]).unwrap(), 0);
        let s = spec(3, 3, false);
        assert_eq!(term_index(&s, &[0, 1, 0]).unwrap(), 1);
        assert!(matches!(term_index(&s, &[2, 2, 0]), Err(Error::Lookup(_))));
        assert!(matches!(term_index(&s, &[0, 0, 0]), Err(Error::Lookup(_))));
    }

    #[test]
    fn term_index_inverts_enumeration() {
        for (n, d, c) in [(3, 3, false), (2, 3, true), (10, 3, true), (4, 4, false)] {
            let lib = Library::new(spec(n, d, c)).unwrap();
            for (k, t) in lib.terms().iter().enumerate() {
                assert_eq!(lib.term_index(&t.exponents).unwrap(), k);
            }
        }
    }

    #[test]
    fn invalid_spec_is_rejected() {
        assert!(LibrarySpec::new(0, 3, true).is_err());
        assert!(LibrarySpec::new(3, 0, true).is_err());
    }

    proptest! {
        #[test]
        fn columns_are_independent_monomial_products(
            x in prop::collection::vec(-3.0f64..3.0, 3),
        ) {
            let lib = Library::new(spec(3, 3, true)).unwrap();
            let theta = lib.evaluate(&Matrix::from_rows(std::slice::from_ref(&x)).unwrap()).unwrap();
            for (j, t) in lib.terms().iter().enumerate() {
                let mut direct = 1.0;
                for (i, &e) in t.exponents.iter().enumerate() {
                    for _ in 0..e {
                        direct *= x[i];
                    }
                }
                prop_assert!((theta.get(0, j) - direct).abs() <= 1e-12 * direct.abs().max(1.0));
            }
        }
    }
}
