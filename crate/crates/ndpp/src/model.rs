//! Kernel data types: the low-rank model triple (V, B, C), item subsets, and
//! the determinant-evaluation counter used as a system-independent cost metric.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative tolerance on the skew-symmetry residual of C.
pub const SKEW_TOL_REL: f64 = 1e-12;

/// Low-rank kernel L = V^T V + B^T C B with V, B of shape d x n and C a
/// d x d skew-symmetric matrix. Immutable dimensions; the learning module
/// mutates entries through [`NdppModel::columns_mut`] style accessors.
#[derive(Clone, Debug, PartialEq)]
pub struct NdppModel {
    d: usize,
    n: usize,
    v: DMatrix<f64>,
    b: DMatrix<f64>,
    c: DMatrix<f64>,
}

/// One invariant violation found by [`NdppModel::validate`].
#[derive(Clone, Debug, PartialEq)]
pub enum ModelDiagnostic {
    SkewResidual { residual: f64, tol: f64 },
    ShapeMismatch(String),
    NonFinite { matrix: &'static str },
    OddDimension { d: usize },
}

impl std::fmt::Display for ModelDiagnostic {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ModelDiagnostic::SkewResidual { residual, tol } => {
                write!(f, "C skew-symmetry residual {residual:.3e} exceeds {tol:.3e}")
            }
            ModelDiagnostic::ShapeMismatch(msg) => write!(f, "shape mismatch: {msg}"),
            ModelDiagnostic::NonFinite { matrix } => {
                write!(f, "{matrix} contains a non-finite entry")
            }
            ModelDiagnostic::OddDimension { d } => {
                write!(f, "embedding dimension d = {d} is odd")
            }
        }
    }
}

impl NdppModel {
    /// Builds a model and rejects any invariant violation.
    pub fn new(v: DMatrix<f64>, b: DMatrix<f64>, c: DMatrix<f64>) -> Result<Self> {
        let model = Self::new_unchecked(v, b, c)?;
        let diags = model.validate();
        if diags.is_empty() {
            Ok(model)
        } else {
            let msgs: Vec<String> = diags.iter().map(|d| d.to_string()).collect();
            Err(Error::Shape(msgs.join("; ")))
        }
    }

    fn new_unchecked(v: DMatrix<f64>, b: DMatrix<f64>, c: DMatrix<f64>) -> Result<Self> {
        let d = v.nrows();
        let n = v.ncols();
        if b.nrows() != d || b.ncols() != n {
            return Err(Error::Shape(format!(
                "V is {d}x{n} but B is {}x{}",
                b.nrows(),
                b.ncols()
            )));
        }
        if c.nrows() != d || c.ncols() != d {
            return Err(Error::Shape(format!(
                "C must be {d}x{d}, got {}x{}",
                c.nrows(),
                c.ncols()
            )));
        }
        Ok(NdppModel { d, n, v, b, c })
    }

    /// Diagnostics, not exceptions: returns every invariant violation found.
    pub fn validate(&self) -> Vec<ModelDiagnostic> {
        let mut out = Vec::new();
        if !self.d.is_multiple_of(2) {
            out.push(ModelDiagnostic::OddDimension { d: self.d });
        }
        let cmax = self.c.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let tol = SKEW_TOL_REL * (1.0 + cmax);
        let mut residual = 0.0f64;
        for i in 0..self.d {
            for j in 0..self.d {
                residual = residual.max((self.c[(i, j)] + self.c[(j, i)]).abs());
            }
        }
        if residual > tol {
            out.push(ModelDiagnostic::SkewResidual { residual, tol });
        }
        for (name, m) in [("V", &self.v), ("B", &self.b), ("C", &self.c)] {
            if m.iter().any(|x| !x.is_finite()) {
                out.push(ModelDiagnostic::NonFinite { matrix: name });
            }
        }
        out
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn v(&self) -> &DMatrix<f64> {
        &self.v
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }

    /// Column pair (v_i, b_i) for item i.
    pub fn column(&self, i: usize) -> (DVector<f64>, DVector<f64>) {
        (self.v.column(i).into_owned(), self.b.column(i).into_owned())
    }

    /// Submatrices V_S, B_S formed by the columns named in `s`.
    pub fn subset_columns(&self, s: &Subset) -> (DMatrix<f64>, DMatrix<f64>) {
        let m = s.len();
        let mut vs = DMatrix::zeros(self.d, m);
        let mut bs = DMatrix::zeros(self.d, m);
        for (j, &i) in s.indices().iter().enumerate() {
            vs.set_column(j, &self.v.column(i));
            bs.set_column(j, &self.b.column(i));
        }
        (vs, bs)
    }

    /// In-place column update used by the learning step. Caller is
    /// responsible for re-validating afterwards.
    pub(crate) fn add_to_columns(
        &mut self,
        s: &Subset,
        dv: &DMatrix<f64>,
        db: &DMatrix<f64>,
        eta: f64,
    ) {
        for (j, &i) in s.indices().iter().enumerate() {
            for r in 0..self.d {
                self.v[(r, i)] += eta * dv[(r, j)];
                self.b[(r, i)] += eta * db[(r, j)];
            }
        }
    }

    pub(crate) fn c_mut(&mut self) -> &mut DMatrix<f64> {
        &mut self.c
    }

    /// Appends `extra` freshly initialized item columns (lazy-growth mode).
    pub(crate) fn grow(&mut self, extra: usize, mut init: impl FnMut() -> f64) {
        let n_new = self.n + extra;
        let mut v = DMatrix::zeros(self.d, n_new);
        let mut b = DMatrix::zeros(self.d, n_new);
        v.view_mut((0, 0), (self.d, self.n)).copy_from(&self.v);
        b.view_mut((0, 0), (self.d, self.n)).copy_from(&self.b);
        for j in self.n..n_new {
            for r in 0..self.d {
                v[(r, j)] = init();
                b[(r, j)] = init();
            }
        }
        self.v = v;
        self.b = b;
        self.n = n_new;
    }

    /// Serializes to the flat row-major JSON schema.
    pub fn to_json(&self) -> String {
        let doc = ModelJson {
            d: self.d,
            n: self.n,
            v: row_major(&self.v),
            b: row_major(&self.b),
            c: row_major(&self.c),
        };
        serde_json::to_string(&doc).expect("model serialization cannot fail")
    }

    /// Parses the JSON schema and re-validates all invariants, including
    /// skew-symmetry of C.
    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ModelJson = serde_json::from_str(text).map_err(|e| Error::Format {
            path: "<json>".into(),
            msg: e.to_string(),
        })?;
        if doc.v.len() != doc.d * doc.n || doc.b.len() != doc.d * doc.n {
            return Err(Error::Shape(format!(
                "V/B arrays must have d*n = {} entries",
                doc.d * doc.n
            )));
        }
        if doc.c.len() != doc.d * doc.d {
            return Err(Error::Shape(format!(
                "C array must have d*d = {} entries",
                doc.d * doc.d
            )));
        }
        NdppModel::new(
            from_row_major(doc.d, doc.n, &doc.v),
            from_row_major(doc.d, doc.n, &doc.b),
            from_row_major(doc.d, doc.d, &doc.c),
        )
    }

    pub fn write_json_file(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn read_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Format { msg, .. } => Error::Format {
                path: path.display().to_string(),
                msg,
            },
            other => other,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct ModelJson {
    d: usize,
    n: usize,
    #[serde(rename = "V")]
    v: Vec<f64>,
    #[serde(rename = "B")]
    b: Vec<f64>,
    #[serde(rename = "C")]
    c: Vec<f64>,
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.nrows() * m.ncols());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.push(m[(i, j)]);
        }
    }
    out
}

fn from_row_major(rows: usize, cols: usize, data: &[f64]) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |i, j| data[i * cols + j])
}

/// Ordered set of distinct item indices, strictly increasing.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Subset(Vec<usize>);

impl Subset {
    pub fn empty() -> Self {
        Subset(Vec::new())
    }

    /// Requires strictly increasing indices.
    pub fn new(ids: Vec<usize>) -> Result<Self> {
        if ids.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Shape(
                "subset indices must be strictly increasing".into(),
            ));
        }
        Ok(Subset(ids))
    }

    /// Sorts the ids; errors on duplicates.
    pub fn from_unsorted(mut ids: Vec<usize>) -> Result<Self> {
        ids.sort_unstable();
        Subset::new(ids)
    }

    pub fn indices(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, i: usize) -> bool {
        self.0.binary_search(&i).is_ok()
    }

    pub fn max_index(&self) -> Option<usize> {
        self.0.last().copied()
    }
}

impl std::fmt::Display for Subset {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{{")?;
        for (i, id) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{id}")?;
        }
        write!(f, "}}")
    }
}

/// Count of determinant evaluations performed during one run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct DetCounter {
    evaluations: u64,
}

impl DetCounter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn bump(&mut self) {
        self.evaluations += 1;
    }

    pub fn evaluations(&self) -> u64 {
        self.evaluations
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    fn skew2(lambda: f64) -> DMatrix<f64> {
        dmatrix![0.0, lambda; -lambda, 0.0]
    }

    #[test]
    fn valid_model_has_no_diagnostics() {
        let v = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let b = v.clone();
        let m = NdppModel::new(v, b, skew2(0.7)).unwrap();
        assert!(m.validate().is_empty());
    }

    #[test]
    fn symmetric_c_reports_skew_violation() {
        let v = DMatrix::zeros(2, 2);
        let mut c = DMatrix::zeros(2, 2);
        c[(0, 1)] = 1.0;
        c[(1, 0)] = 1.0;
        let m = NdppModel::new_unchecked(v.clone(), v, c).unwrap();
        assert!(m
            .validate()
            .iter()
            .any(|d| matches!(d, ModelDiagnostic::SkewResidual { .. })));
    }

    #[test]
    fn non_finite_entry_is_reported() {
        let mut v = DMatrix::zeros(2, 2);
        v[(0, 0)] = f64::NAN;
        let b = DMatrix::zeros(2, 2);
        let m = NdppModel::new_unchecked(v, b, skew2(1.0)).unwrap();
        assert!(m
            .validate()
            .iter()
            .any(|d| matches!(d, ModelDiagnostic::NonFinite { matrix: "V" })));
    }

    #[test]
    fn json_round_trip() {
        let v = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let b = DMatrix::from_row_slice(2, 3, &[0.1, 0.2, 0.3, 0.4, 0.5, 0.6]);
        let m = NdppModel::new(v, b, skew2(1.25)).unwrap();
        let back = NdppModel::from_json(&m.to_json()).unwrap();
        assert_eq!(m, back);
    }

    #[test]
    fn json_load_revalidates_skew() {
        let text = r#"{"d":2,"n":1,"V":[0.0,0.0],"B":[0.0,0.0],"C":[0.0,1.0,1.0,0.0]}"#;
        assert!(NdppModel::from_json(text).is_err());
    }

    #[test]
    fn subset_rejects_duplicates_and_disorder() {
        assert!(Subset::new(vec![0, 2, 2]).is_err());
        assert!(Subset::new(vec![2, 0]).is_err());
        assert!(Subset::from_unsorted(vec![2, 0]).is_ok());
        assert!(Subset::from_unsorted(vec![2, 2]).is_err());
    }
}
