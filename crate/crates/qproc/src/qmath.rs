//! Dense complex linear algebra and quantum-state primitives.
//!
//! Everything downstream (Haar sampling, Weingarten sums, process tensors, equilibration
//! bounds) is built on the containers in this module: [`ComplexMatrix`] (row-major dense),
//! [`PureState`] / [`DensityMatrix`] with a [`SubsystemLayout`] describing their tensor
//! factors, and [`Povm`].
//!
//! Conventions fixed here once and for all:
//! * row-major storage; for multi-factor spaces the **leftmost label is the slowest-varying
//!   index** (so `kron(a, b)` puts `a` on the slow index),
//! * all logarithms are base 2,
//! * Hermiticity / positivity / trace checks use the global tolerance [`TOL`] = 1e-9,
//! * eigenvalues below [`EIG_CLIP`] = 1e-12 are treated as zero inside entropies and
//!   matrix logarithms.

use nalgebra::DMatrix;
use num_complex::Complex64;
use thiserror::Error;

/// Global tolerance for Hermiticity, positivity, trace and unitarity checks.
pub const TOL: f64 = 1e-9;

/// Eigenvalue cutoff used in entropy / matrix-log computations.
pub const EIG_CLIP: f64 = 1e-12;

/// Errors produced by the linear-algebra and state primitives.
#[derive(Debug, Error)]
pub enum QmathError {
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix is not Hermitian within {0:e}")]
    NotHermitian(f64),
    #[error("matrix is not positive semidefinite (minimum eigenvalue {0})")]
    NotPsd(f64),
    #[error("trace {0} differs from 1 beyond tolerance")]
    NotUnitTrace(f64),
    #[error("vector norm {0} differs from 1 beyond tolerance")]
    NotNormalized(f64),
    #[error("unknown subsystem label `{0}`")]
    UnknownLabel(String),
    #[error("invalid subsystem layout: {0}")]
    InvalidLayout(String),
    #[error("invalid permutation: {0}")]
    InvalidPermutation(String),
    #[error("invalid POVM: {0}")]
    InvalidPovm(String),
    #[error("non-finite matrix entry")]
    NonFinite,
}

type Result<T> = std::result::Result<T, QmathError>;

// ---------------------------------------------------------------------------
// ComplexMatrix
// ---------------------------------------------------------------------------

/// Dense row-major matrix of `Complex64` entries.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexMatrix {
    rows: usize,
    cols: usize,
    data: Vec<Complex64>,
}

impl ComplexMatrix {
    /// Builds a matrix from row-major data. Fails on length mismatch or non-finite entries.
    pub fn new(rows: usize, cols: usize, data: Vec<Complex64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(QmathError::DimMismatch(format!(
                "data length {} != {rows}x{cols}",
                data.len()
            )));
        }
        if data.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(QmathError::NonFinite);
        }
        Ok(Self { rows, cols, data })
    }

    /// All-zero matrix.
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![Complex64::new(0.0, 0.0); rows * cols],
        }
    }

    /// Identity matrix of dimension `d`.
    pub fn identity(d: usize) -> Self {
        let mut m = Self::zeros(d, d);
        for i in 0..d {
            m.set(i, i, Complex64::new(1.0, 0.0));
        }
        m
    }

    /// Builds a matrix entrywise from a closure.
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> Complex64) -> Self {
        let mut m = Self::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m.set(i, j, f(i, j));
            }
        }
        m
    }

    /// Diagonal matrix from real entries.
    pub fn diag(entries: &[f64]) -> Self {
        let d = entries.len();
        let mut m = Self::zeros(d, d);
        for (i, &x) in entries.iter().enumerate() {
            m.set(i, i, Complex64::new(x, 0.0));
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    /// Row-major entry access.
    #[inline]
    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: Complex64) {
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn add_at(&mut self, i: usize, j: usize, v: Complex64) {
        self.data[i * self.cols + j] += v;
    }

    /// Raw row-major data slice.
    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.check_same_shape(other)?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + b)
            .collect();
        Self::new(self.rows, self.cols, data)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.check_same_shape(other)?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a - b)
            .collect();
        Self::new(self.rows, self.cols, data)
    }

    pub fn scale(&self, s: Complex64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|z| z * s).collect(),
        }
    }

    pub fn scale_re(&self, s: f64) -> Self {
        self.scale(Complex64::new(s, 0.0))
    }

    /// Matrix product `self * other`.
    pub fn mul(&self, other: &Self) -> Result<Self> {
        if self.cols != other.rows {
            return Err(QmathError::DimMismatch(format!(
                "{}x{} * {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for l in 0..self.cols {
                let a = self.get(i, l);
                if a.norm_sqr() == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    out.data[i * other.cols + j] += a * other.get(l, j);
                }
            }
        }
        Ok(out)
    }

    /// Matrix-vector product.
    pub fn mul_vec(&self, v: &[Complex64]) -> Result<Vec<Complex64>> {
        if self.cols != v.len() {
            return Err(QmathError::DimMismatch(format!(
                "{}x{} * vec {}",
                self.rows,
                self.cols,
                v.len()
            )));
        }
        let mut out = vec![Complex64::new(0.0, 0.0); self.rows];
        for i in 0..self.rows {
            let mut acc = Complex64::new(0.0, 0.0);
            for j in 0..self.cols {
                acc += self.get(i, j) * v[j];
            }
            out[i] = acc;
        }
        Ok(out)
    }

    /// Conjugate transpose $A^\dagger$.
    pub fn dagger(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self.get(j, i).conj())
    }

    /// Transpose in the computational basis.
    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    /// Entrywise complex conjugate.
    pub fn conj(&self) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|z| z.conj()).collect(),
        }
    }

    pub fn trace(&self) -> Complex64 {
        let d = self.rows.min(self.cols);
        (0..d).map(|i| self.get(i, i)).sum()
    }

    /// Frobenius norm $\|A\|_2 = \sqrt{\sum |a_{ij}|^2}$.
    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Largest entrywise absolute difference to `other`.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.rows, other.rows);
        assert_eq!(self.cols, other.cols);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    /// Hermiticity check $\|A - A^\dagger\|_\max \le$ `tol`.
    pub fn is_hermitian(&self, tol: f64) -> bool {
        if !self.is_square() {
            return false;
        }
        for i in 0..self.rows {
            for j in i..self.cols {
                if (self.get(i, j) - self.get(j, i).conj()).norm() > tol {
                    return false;
                }
            }
        }
        true
    }

    /// Replaces the matrix by its Hermitian part $(A + A^\dagger)/2$.
    pub fn hermitian_part(&self) -> Self {
        Self::from_fn(self.rows, self.cols, |i, j| {
            (self.get(i, j) + self.get(j, i).conj()) * 0.5
        })
    }

    fn check_same_shape(&self, other: &Self) -> Result<()> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(QmathError::DimMismatch(format!(
                "{}x{} vs {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        Ok(())
    }

    pub(crate) fn to_nalgebra(&self) -> DMatrix<Complex64> {
        DMatrix::from_fn(self.rows, self.cols, |i, j| self.get(i, j))
    }

    pub(crate) fn from_nalgebra(m: &DMatrix<Complex64>) -> Self {
        Self::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
    }
}

/// Kronecker product; `a` occupies the slower-varying index so that
/// entry $(i_1 d_b + i_2,\; j_1 d_b + j_2) = a_{i_1 j_1} b_{i_2 j_2}$.
pub fn kron(a: &ComplexMatrix, b: &ComplexMatrix) -> ComplexMatrix {
    let mut out = ComplexMatrix::zeros(a.rows() * b.rows(), a.cols() * b.cols());
    for i1 in 0..a.rows() {
        for j1 in 0..a.cols() {
            let av = a.get(i1, j1);
            if av.norm_sqr() == 0.0 {
                continue;
            }
            for i2 in 0..b.rows() {
                for j2 in 0..b.cols() {
                    out.set(i1 * b.rows() + i2, j1 * b.cols() + j2, av * b.get(i2, j2));
                }
            }
        }
    }
    out
}

/// Kronecker product of a list of factors, left to right (leftmost slowest).
pub fn kron_all(factors: &[&ComplexMatrix]) -> ComplexMatrix {
    assert!(!factors.is_empty());
    let mut acc = factors[0].clone();
    for f in &factors[1..] {
        acc = kron(&acc, f);
    }
    acc
}

// ---------------------------------------------------------------------------
// Mixed-radix index helpers (crate-internal)
// ---------------------------------------------------------------------------

/// Decodes a flat index into per-factor digits, leftmost factor slowest.
pub(crate) fn decode_index(mut idx: usize, dims: &[usize], out: &mut [usize]) {
    for f in (0..dims.len()).rev() {
        out[f] = idx % dims[f];
        idx /= dims[f];
    }
}

/// Encodes per-factor digits into a flat index, leftmost factor slowest.
pub(crate) fn encode_index(digits: &[usize], dims: &[usize]) -> usize {
    digits.iter().zip(dims).fold(0, |acc, (d, s)| acc * s + d)
}

// ---------------------------------------------------------------------------
// SubsystemLayout
// ---------------------------------------------------------------------------

/// Ordered list of labelled tensor factors annotating a state or matrix.
///
/// The leftmost label is the slowest-varying index of the flat representation.
#[derive(Clone, Debug, PartialEq)]
pub struct SubsystemLayout {
    labels: Vec<String>,
    dims: Vec<usize>,
}

impl SubsystemLayout {
    pub fn new(labels: Vec<String>, dims: Vec<usize>) -> Result<Self> {
        if labels.len() != dims.len() {
            return Err(QmathError::InvalidLayout(format!(
                "{} labels vs {} dims",
                labels.len(),
                dims.len()
            )));
        }
        if dims.iter().any(|&d| d == 0) {
            return Err(QmathError::InvalidLayout("zero dimension".into()));
        }
        for (i, l) in labels.iter().enumerate() {
            if labels[..i].contains(l) {
                return Err(QmathError::InvalidLayout(format!("duplicate label `{l}`")));
            }
        }
        Ok(Self { labels, dims })
    }

    /// Convenience constructor from `(label, dim)` pairs.
    pub fn of(pairs: &[(&str, usize)]) -> Result<Self> {
        Self::new(
            pairs.iter().map(|(l, _)| l.to_string()).collect(),
            pairs.iter().map(|(_, d)| *d).collect(),
        )
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn total_dim(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn index_of(&self, label: &str) -> Result<usize> {
        self.labels
            .iter()
            .position(|l| l == label)
            .ok_or_else(|| QmathError::UnknownLabel(label.into()))
    }

    pub fn dim_of(&self, label: &str) -> Result<usize> {
        Ok(self.dims[self.index_of(label)?])
    }

    /// Layout restricted to `keep`, preserving the original factor order.
    pub fn restricted(&self, keep: &[&str]) -> Result<Self> {
        for l in keep {
            self.index_of(l)?;
        }
        let pairs: Vec<(String, usize)> = self
            .labels
            .iter()
            .zip(&self.dims)
            .filter(|(l, _)| keep.contains(&l.as_str()))
            .map(|(l, d)| (l.clone(), *d))
            .collect();
        Self::new(
            pairs.iter().map(|(l, _)| l.clone()).collect(),
            pairs.iter().map(|(_, d)| *d).collect(),
        )
    }
}

/// Partial trace over all factors of `layout` not listed in `keep`;
/// kept factors retain their original relative order.
pub fn partial_trace(
    m: &ComplexMatrix,
    layout: &SubsystemLayout,
    keep: &[&str],
) -> Result<ComplexMatrix> {
    if !m.is_square() || m.rows() != layout.total_dim() {
        return Err(QmathError::DimMismatch(format!(
            "matrix {}x{} vs layout dim {}",
            m.rows(),
            m.cols(),
            layout.total_dim()
        )));
    }
    for l in keep {
        layout.index_of(l)?;
    }
    let n = layout.len();
    let dims = layout.dims();
    let keep_pos: Vec<usize> = (0..n)
        .filter(|&f| keep.contains(&layout.labels()[f].as_str()))
        .collect();
    let trace_pos: Vec<usize> = (0..n).filter(|f| !keep_pos.contains(f)).collect();
    let keep_dims: Vec<usize> = keep_pos.iter().map(|&f| dims[f]).collect();
    let trace_dims: Vec<usize> = trace_pos.iter().map(|&f| dims[f]).collect();
    let dk: usize = keep_dims.iter().product();
    let dt: usize = trace_dims.iter().product();

    let mut out = ComplexMatrix::zeros(dk, dk);
    let mut row_digits = vec![0usize; n];
    let mut col_digits = vec![0usize; n];
    let mut ka = vec![0usize; keep_pos.len()];
    let mut kb = vec![0usize; keep_pos.len()];
    let mut td = vec![0usize; trace_pos.len()];
    for a in 0..dk {
        decode_index(a, &keep_dims, &mut ka);
        for b in 0..dk {
            decode_index(b, &keep_dims, &mut kb);
            let mut acc = Complex64::new(0.0, 0.0);
            for t in 0..dt {
                decode_index(t, &trace_dims, &mut td);
                for (slot, &f) in keep_pos.iter().enumerate() {
                    row_digits[f] = ka[slot];
                    col_digits[f] = kb[slot];
                }
                for (slot, &f) in trace_pos.iter().enumerate() {
                    row_digits[f] = td[slot];
                    col_digits[f] = td[slot];
                }
                acc += m.get(encode_index(&row_digits, dims), encode_index(&col_digits, dims));
            }
            out.set(a, b, acc);
        }
    }
    Ok(out)
}

/// Reorders the tensor factors of a square matrix to `new_order` (a permutation of the
/// layout's labels). Returns the permuted matrix together with its new layout.
pub fn permute_matrix_subsystems(
    m: &ComplexMatrix,
    layout: &SubsystemLayout,
    new_order: &[&str],
) -> Result<(ComplexMatrix, SubsystemLayout)> {
    let map = permutation_index_map(layout, new_order)?;
    let d = layout.total_dim();
    if !m.is_square() || m.rows() != d {
        return Err(QmathError::DimMismatch(format!(
            "matrix {}x{} vs layout dim {d}",
            m.rows(),
            m.cols()
        )));
    }
    let mut out = ComplexMatrix::zeros(d, d);
    for i in 0..d {
        for j in 0..d {
            out.set(i, j, m.get(map[i], map[j]));
        }
    }
    let new_layout = SubsystemLayout::new(
        new_order.iter().map(|s| s.to_string()).collect(),
        new_order
            .iter()
            .map(|s| layout.dim_of(s))
            .collect::<Result<Vec<_>>>()?,
    )?;
    Ok((out, new_layout))
}

/// For each flat index of the reordered space, the corresponding flat index in the
/// original factor order.
fn permutation_index_map(layout: &SubsystemLayout, new_order: &[&str]) -> Result<Vec<usize>> {
    let n = layout.len();
    if new_order.len() != n {
        return Err(QmathError::InvalidPermutation(format!(
            "{} labels given, layout has {n}",
            new_order.len()
        )));
    }
    let positions: Vec<usize> = new_order
        .iter()
        .map(|l| layout.index_of(l))
        .collect::<Result<Vec<_>>>()?;
    {
        let mut seen = vec![false; n];
        for &p in &positions {
            if seen[p] {
                return Err(QmathError::InvalidPermutation("label repeated".into()));
            }
            seen[p] = true;
        }
    }
    let new_dims: Vec<usize> = positions.iter().map(|&p| layout.dims()[p]).collect();
    let d = layout.total_dim();
    let mut map = vec![0usize; d];
    let mut new_digits = vec![0usize; n];
    let mut old_digits = vec![0usize; n];
    for idx in 0..d {
        decode_index(idx, &new_dims, &mut new_digits);
        for (slot, &p) in positions.iter().enumerate() {
            old_digits[p] = new_digits[slot];
        }
        map[idx] = encode_index(&old_digits, layout.dims());
    }
    Ok(map)
}

// ---------------------------------------------------------------------------
// PureState / DensityMatrix / Povm
// ---------------------------------------------------------------------------

/// A normalized state vector $|\psi\rangle$ with tensor-factor bookkeeping.
#[derive(Clone, Debug)]
pub struct PureState {
    amplitudes: Vec<Complex64>,
    layout: SubsystemLayout,
}

impl PureState {
    pub fn new(amplitudes: Vec<Complex64>, layout: SubsystemLayout) -> Result<Self> {
        if amplitudes.len() != layout.total_dim() {
            return Err(QmathError::DimMismatch(format!(
                "{} amplitudes vs layout dim {}",
                amplitudes.len(),
                layout.total_dim()
            )));
        }
        let norm = amplitudes.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > TOL {
            return Err(QmathError::NotNormalized(norm));
        }
        Ok(Self { amplitudes, layout })
    }

    /// Computational basis state $|i\rangle$.
    pub fn basis(index: usize, layout: SubsystemLayout) -> Result<Self> {
        let d = layout.total_dim();
        if index >= d {
            return Err(QmathError::DimMismatch(format!("basis index {index} >= {d}")));
        }
        let mut amps = vec![Complex64::new(0.0, 0.0); d];
        amps[index] = Complex64::new(1.0, 0.0);
        Self::new(amps, layout)
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amplitudes
    }

    pub fn layout(&self) -> &SubsystemLayout {
        &self.layout
    }

    pub fn dim(&self) -> usize {
        self.amplitudes.len()
    }

    /// Outer product $|\psi\rangle\langle\psi|$ as a DensityMatrix.
    pub fn to_density(&self) -> DensityMatrix {
        let d = self.dim();
        let m = ComplexMatrix::from_fn(d, d, |i, j| {
            self.amplitudes[i] * self.amplitudes[j].conj()
        });
        DensityMatrix {
            matrix: m,
            layout: self.layout.clone(),
        }
    }
}

/// Reorders the tensor factors of a pure state: the amplitude at multi-index
/// $(i_{\pi(1)},\dots,i_{\pi(n)})$ equals the original at $(i_1,\dots,i_n)$.
pub fn permute_subsystems(s: &PureState, new_order: &[&str]) -> Result<PureState> {
    let map = permutation_index_map(&s.layout, new_order)?;
    let amps: Vec<Complex64> = map.iter().map(|&old| s.amplitudes[old]).collect();
    let layout = SubsystemLayout::new(
        new_order.iter().map(|s| s.to_string()).collect(),
        new_order
            .iter()
            .map(|l| s.layout.dim_of(l))
            .collect::<Result<Vec<_>>>()?,
    )?;
    PureState::new(amps, layout)
}

/// A density matrix: Hermitian, positive semidefinite, unit trace (all within [`TOL`]).
#[derive(Clone, Debug)]
pub struct DensityMatrix {
    matrix: ComplexMatrix,
    layout: SubsystemLayout,
}

impl DensityMatrix {
    pub fn new(matrix: ComplexMatrix, layout: SubsystemLayout) -> Result<Self> {
        if !matrix.is_square() || matrix.rows() != layout.total_dim() {
            return Err(QmathError::DimMismatch(format!(
                "matrix {}x{} vs layout dim {}",
                matrix.rows(),
                matrix.cols(),
                layout.total_dim()
            )));
        }
        if !matrix.is_hermitian(TOL) {
            return Err(QmathError::NotHermitian(TOL));
        }
        let tr = matrix.trace();
        if (tr.re - 1.0).abs() > TOL || tr.im.abs() > TOL {
            return Err(QmathError::NotUnitTrace(tr.re));
        }
        let (eigs, _) = eig_hermitian(&matrix.hermitian_part())?;
        if let Some(&min) = eigs.first() {
            if min < -TOL {
                return Err(QmathError::NotPsd(min));
            }
        }
        Ok(Self { matrix, layout })
    }

    /// Crate-internal constructor for matrices already known to be valid states
    /// (e.g. outputs of trace-preserving maps applied to checked inputs); skips the
    /// eigendecomposition-based PSD check.
    pub(crate) fn from_parts_unchecked(matrix: ComplexMatrix, layout: SubsystemLayout) -> Self {
        Self { matrix, layout }
    }

    /// Single unlabelled factor of dimension `d`, labelled `"S"`.
    pub fn on_single(matrix: ComplexMatrix) -> Result<Self> {
        let d = matrix.rows();
        Self::new(matrix, SubsystemLayout::of(&[("S", d)])?)
    }

    /// Maximally mixed state $\mathbb{1}/d$ on the given layout.
    pub fn maximally_mixed(layout: SubsystemLayout) -> Self {
        let d = layout.total_dim();
        Self {
            matrix: ComplexMatrix::identity(d).scale_re(1.0 / d as f64),
            layout,
        }
    }

    pub fn matrix(&self) -> &ComplexMatrix {
        &self.matrix
    }

    pub fn layout(&self) -> &SubsystemLayout {
        &self.layout
    }

    pub fn dim(&self) -> usize {
        self.matrix.rows()
    }

    /// Partial trace keeping the listed labels.
    pub fn reduce(&self, keep: &[&str]) -> Result<DensityMatrix> {
        let m = partial_trace(&self.matrix, &self.layout, keep)?;
        Ok(DensityMatrix {
            matrix: m.hermitian_part(),
            layout: self.layout.restricted(keep)?,
        })
    }
}

/// A positive operator-valued measure: Hermitian PSD elements summing to the identity.
#[derive(Clone, Debug)]
pub struct Povm {
    elements: Vec<ComplexMatrix>,
}

impl Povm {
    pub fn new(elements: Vec<ComplexMatrix>) -> Result<Self> {
        if elements.is_empty() {
            return Err(QmathError::InvalidPovm("no elements".into()));
        }
        let d = elements[0].rows();
        let mut sum = ComplexMatrix::zeros(d, d);
        for e in &elements {
            if !e.is_square() || e.rows() != d {
                return Err(QmathError::InvalidPovm("element dimension mismatch".into()));
            }
            if !e.is_hermitian(TOL) {
                return Err(QmathError::InvalidPovm("element not Hermitian".into()));
            }
            let (eigs, _) = eig_hermitian(&e.hermitian_part())
                .map_err(|err| QmathError::InvalidPovm(err.to_string()))?;
            if eigs.first().copied().unwrap_or(0.0) < -TOL {
                return Err(QmathError::InvalidPovm("element not PSD".into()));
            }
            sum = sum.add(e).unwrap();
        }
        if sum.max_abs_diff(&ComplexMatrix::identity(d)) > TOL {
            return Err(QmathError::InvalidPovm("elements do not sum to identity".into()));
        }
        Ok(Self { elements })
    }

    pub fn elements(&self) -> &[ComplexMatrix] {
        &self.elements
    }
}

// ---------------------------------------------------------------------------
// Spectral operations
// ---------------------------------------------------------------------------

/// Eigendecomposition of a Hermitian matrix: ascending real eigenvalues and the
/// corresponding unitary of column eigenvectors, with $m = V\,\mathrm{diag}(\lambda)\,V^\dagger$.
pub fn eig_hermitian(m: &ComplexMatrix) -> Result<(Vec<f64>, ComplexMatrix)> {
    if !m.is_square() {
        return Err(QmathError::NotSquare {
            rows: m.rows(),
            cols: m.cols(),
        });
    }
    if !m.is_hermitian(TOL) {
        return Err(QmathError::NotHermitian(TOL));
    }
    let se = nalgebra::SymmetricEigen::new(m.hermitian_part().to_nalgebra());
    let d = m.rows();
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| se.eigenvalues[a].partial_cmp(&se.eigenvalues[b]).unwrap());
    let eigs: Vec<f64> = order.iter().map(|&i| se.eigenvalues[i]).collect();
    let vecs = ComplexMatrix::from_fn(d, d, |i, j| se.eigenvectors[(i, order[j])]);
    Ok((eigs, vecs))
}

/// Singular values of a (square) matrix, descending.
pub fn singular_values(m: &ComplexMatrix) -> Result<Vec<f64>> {
    // Singular values are the square roots of the eigenvalues of m† m, which is
    // Hermitian PSD; this avoids a complex SVD while staying in pure Rust.
    let gram = m.dagger().mul(m)?;
    let (eigs, _) = eig_hermitian(&gram.hermitian_part())?;
    let mut sv: Vec<f64> = eigs.iter().map(|&l| l.max(0.0).sqrt()).collect();
    sv.reverse();
    Ok(sv)
}

/// Which Schatten norm to evaluate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SchattenP {
    One,
    Two,
    Inf,
}

/// Schatten $p$-norm for $p \in \{1, 2, \infty\}$: sum of singular values, Frobenius,
/// or largest singular value.
pub fn schatten_norm(m: &ComplexMatrix, p: SchattenP) -> Result<f64> {
    if !m.is_square() {
        return Err(QmathError::NotSquare {
            rows: m.rows(),
            cols: m.cols(),
        });
    }
    match p {
        SchattenP::Two => Ok(m.frobenius_norm()),
        SchattenP::One => Ok(singular_values(m)?.iter().sum()),
        SchattenP::Inf => Ok(singular_values(m)?.first().copied().unwrap_or(0.0)),
    }
}

/// Trace distance $D(\rho,\sigma) = \tfrac12\|\rho-\sigma\|_1 \in [0,1]$.
pub fn trace_distance(rho: &DensityMatrix, sigma: &DensityMatrix) -> Result<f64> {
    if rho.dim() != sigma.dim() {
        return Err(QmathError::DimMismatch(format!(
            "{} vs {}",
            rho.dim(),
            sigma.dim()
        )));
    }
    let diff = rho.matrix().sub(sigma.matrix())?;
    Ok(0.5 * schatten_norm(&diff, SchattenP::One)?)
}

/// Distinguishability under a fixed POVM: $\tfrac12 \sum_i |\mathrm{tr}\,M_i(\rho-\sigma)|$.
/// Never exceeds the trace distance.
pub fn povm_distance(rho: &DensityMatrix, sigma: &DensityMatrix, povm: &Povm) -> Result<f64> {
    if rho.dim() != sigma.dim() || rho.dim() != povm.elements()[0].rows() {
        return Err(QmathError::DimMismatch("POVM/state dims".into()));
    }
    let diff = rho.matrix().sub(sigma.matrix())?;
    let mut acc = 0.0;
    for m in povm.elements() {
        acc += m.mul(&diff)?.trace().re.abs();
    }
    Ok(0.5 * acc)
}

/// Purity $\mathrm{tr}(\rho^2) \in [1/d, 1]$.
pub fn purity(rho: &DensityMatrix) -> f64 {
    // tr(ρ²) = ‖ρ‖₂² for Hermitian ρ.
    let f = rho.matrix().frobenius_norm();
    f * f
}

/// Maximally entangled state on $d \times d$: normalized $|\Psi\rangle\langle\Psi|$ with
/// $|\Psi\rangle = d^{-1/2}\sum_i |ii\rangle$, or the unnormalized
/// $\tilde\Psi = \sum_{ij} |ii\rangle\langle jj|$ with trace $d$.
///
/// Returned as a plain matrix because the unnormalized variant is not a density matrix.
pub fn max_entangled(d: usize, normalized: bool) -> ComplexMatrix {
    let mut m = ComplexMatrix::zeros(d * d, d * d);
    let w = if normalized { 1.0 / d as f64 } else { 1.0 };
    for i in 0..d {
        for j in 0..d {
            m.set(i * d + i, j * d + j, Complex64::new(w, 0.0));
        }
    }
    m
}

/// Von Neumann entropy $S(\rho) = -\sum_i \lambda_i \log_2 \lambda_i$ (with $0\log 0 := 0$;
/// eigenvalues below [`EIG_CLIP`] are treated as exactly zero).
pub fn vn_entropy(rho: &DensityMatrix) -> f64 {
    let (eigs, _) = eig_hermitian(rho.matrix()).expect("density matrix is Hermitian");
    -eigs
        .iter()
        .filter(|&&l| l > EIG_CLIP)
        .map(|&l| l * l.log2())
        .sum::<f64>()
}

/// Relative entropy $S(\rho\|\sigma) = \mathrm{tr}[\rho(\log_2\rho - \log_2\sigma)]$,
/// returning `f64::INFINITY` when the support of $\rho$ is not contained in that of
/// $\sigma$ (support decided with the [`EIG_CLIP`] cutoff).
pub fn relative_entropy(rho: &DensityMatrix, sigma: &DensityMatrix) -> Result<f64> {
    if rho.dim() != sigma.dim() {
        return Err(QmathError::DimMismatch(format!(
            "{} vs {}",
            rho.dim(),
            sigma.dim()
        )));
    }
    let (ls, vs) = eig_hermitian(sigma.matrix())?;
    let d = rho.dim();
    // Support check: ⟨v_i| ρ |v_i⟩ must vanish whenever λ_i(σ) ≈ 0.
    let rho_in_sigma_basis = vs.dagger().mul(rho.matrix())?.mul(&vs)?;
    for i in 0..d {
        if ls[i] <= EIG_CLIP && rho_in_sigma_basis.get(i, i).re > 1e-10 {
            return Ok(f64::INFINITY);
        }
    }
    // tr[ρ log σ] in σ's eigenbasis.
    let mut tr_rho_log_sigma = 0.0;
    for i in 0..d {
        if ls[i] > EIG_CLIP {
            tr_rho_log_sigma += rho_in_sigma_basis.get(i, i).re * ls[i].log2();
        }
    }
    let (lr, _) = eig_hermitian(rho.matrix())?;
    let tr_rho_log_rho: f64 = lr
        .iter()
        .filter(|&&l| l > EIG_CLIP)
        .map(|&l| l * l.log2())
        .sum();
    Ok((tr_rho_log_rho - tr_rho_log_sigma).max(0.0))
}

/// SWAP operator on $d \otimes d$: $\sum_{ij} |ij\rangle\langle ji|$.
pub fn swap_operator(d: usize) -> ComplexMatrix {
    let mut m = ComplexMatrix::zeros(d * d, d * d);
    for i in 0..d {
        for j in 0..d {
            m.set(i * d + j, j * d + i, Complex64::new(1.0, 0.0));
        }
    }
    m
}
