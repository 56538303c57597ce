//! Exact moments of the unitary group.
//!
//! Symmetric-group machinery, Weingarten values $\mathrm{Wg}(\sigma, d)$ obtained by
//! Gram-matrix inversion, analytic 1- and 2-twirls, and the constant-interaction process
//! averages: the averaged Choi state and the averaged purity, both evaluated as double
//! sums over permutation pairs with delta-system contractions counted by union-find.

use std::collections::HashMap;

use num_complex::Complex64;
use thiserror::Error;

use crate::qmath::{
    kron, permute_matrix_subsystems, swap_operator, ComplexMatrix, DensityMatrix,
    SubsystemLayout,
};

/// Errors from the exact-moment machinery.
#[derive(Debug, Error)]
pub enum WeingartenError {
    #[error("unsupported regime: {0}")]
    Unsupported(String),
    #[error("Gram matrix inversion failed (n={n}, d={d})")]
    GramInversion { n: usize, d: usize },
    #[error("index {index} out of range for dimension {d}")]
    IndexOutOfRange { index: usize, d: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Qmath(#[from] crate::qmath::QmathError),
}

type Result<T> = std::result::Result<T, WeingartenError>;

// ---------------------------------------------------------------------------
// Permutations
// ---------------------------------------------------------------------------

/// A permutation of $\{0, \dots, n-1\}$ stored as its mapping array.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Permutation {
    map: Vec<usize>,
}

impl Permutation {
    pub fn new(map: Vec<usize>) -> Result<Self> {
        let n = map.len();
        let mut seen = vec![false; n];
        for &v in &map {
            if v >= n || seen[v] {
                return Err(WeingartenError::InvalidArgument(format!(
                    "mapping {map:?} is not a bijection"
                )));
            }
            seen[v] = true;
        }
        Ok(Self { map })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            map: (0..n).collect(),
        }
    }

    pub fn degree(&self) -> usize {
        self.map.len()
    }

    #[inline]
    pub fn apply(&self, i: usize) -> usize {
        self.map[i]
    }

    pub fn mapping(&self) -> &[usize] {
        &self.map
    }

    /// Composition `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Self) -> Self {
        Self {
            map: (0..self.map.len()).map(|i| self.map[other.map[i]]).collect(),
        }
    }

    pub fn inverse(&self) -> Self {
        let mut inv = vec![0; self.map.len()];
        for (i, &v) in self.map.iter().enumerate() {
            inv[v] = i;
        }
        Self { map: inv }
    }

    pub fn is_identity(&self) -> bool {
        self.map.iter().enumerate().all(|(i, &v)| i == v)
    }

    /// Number of cycles, counting fixed points.
    pub fn cycle_count(&self) -> usize {
        self.cycle_lengths().len()
    }

    fn cycle_lengths(&self) -> Vec<usize> {
        let n = self.map.len();
        let mut seen = vec![false; n];
        let mut lengths = Vec::new();
        for start in 0..n {
            if seen[start] {
                continue;
            }
            let mut len = 0;
            let mut cur = start;
            while !seen[cur] {
                seen[cur] = true;
                cur = self.map[cur];
                len += 1;
            }
            lengths.push(len);
        }
        lengths
    }

    pub fn cycle_type(&self) -> CycleType {
        let mut parts = self.cycle_lengths();
        parts.sort_unstable_by(|a, b| b.cmp(a));
        CycleType { parts }
    }
}

/// Number of cycles of `p`, counting fixed points.
pub fn cycle_count(p: &Permutation) -> usize {
    p.cycle_count()
}

/// Descending-sorted cycle lengths of a permutation; $\mathrm{Wg}$ depends only on this.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct CycleType {
    parts: Vec<usize>,
}

impl CycleType {
    pub fn parts(&self) -> &[usize] {
        &self.parts
    }

    pub fn n(&self) -> usize {
        self.parts.iter().sum()
    }
}

impl std::fmt::Display for CycleType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "[{}]",
            self.parts
                .iter()
                .map(|p| p.to_string())
                .collect::<Vec<_>>()
                .join(",")
        )
    }
}

/// All permutations of degree `n` in lexicographic order of their mapping arrays.
pub fn all_permutations(n: usize) -> Vec<Permutation> {
    let mut out = Vec::new();
    let mut current = Vec::with_capacity(n);
    let mut used = vec![false; n];
    fn rec(n: usize, current: &mut Vec<usize>, used: &mut Vec<bool>, out: &mut Vec<Permutation>) {
        if current.len() == n {
            out.push(Permutation {
                map: current.clone(),
            });
            return;
        }
        for v in 0..n {
            if !used[v] {
                used[v] = true;
                current.push(v);
                rec(n, current, used, out);
                current.pop();
                used[v] = false;
            }
        }
    }
    rec(n, &mut current, &mut used, &mut out);
    out
}

// ---------------------------------------------------------------------------
// Weingarten table
// ---------------------------------------------------------------------------

/// Table of Weingarten values $\mathrm{Wg}(\sigma, d)$ for all $\sigma \in \mathfrak{G}_n$.
///
/// Built by inverting the Gram matrix $G[\sigma][\tau] = d^{\#(\sigma\tau^{-1})}$ and
/// reading the row of $G^{-1}$ at the identity; the defining linear system
/// $\sum_\tau d^{\#(\sigma\tau^{-1})}\mathrm{Wg}(\tau) = \delta_{\sigma,\mathrm{id}}$ is
/// verified and its largest residual stored.
#[derive(Clone, Debug)]
pub struct WeingartenTable {
    n: usize,
    d: usize,
    perms: Vec<Permutation>,
    values: Vec<f64>,
    index: HashMap<Vec<usize>, usize>,
    residual: f64,
}

impl WeingartenTable {
    /// Builds the table; requires `d >= n` so the Gram matrix is invertible.
    pub fn build(n: usize, d: usize) -> Result<Self> {
        if n == 0 {
            return Err(WeingartenError::InvalidArgument("n = 0".into()));
        }
        if d < n {
            return Err(WeingartenError::Unsupported(format!(
                "Weingarten table needs d >= n (got n={n}, d={d})"
            )));
        }
        if n > 6 {
            return Err(WeingartenError::Unsupported(format!(
                "moment order {n} > 6 not supported"
            )));
        }
        let perms = all_permutations(n);
        let size = perms.len();
        let index: HashMap<Vec<usize>, usize> = perms
            .iter()
            .enumerate()
            .map(|(i, p)| (p.map.clone(), i))
            .collect();
        let id_idx = index[&Permutation::identity(n).map];

        let gram = nalgebra::DMatrix::<f64>::from_fn(size, size, |i, j| {
            let c = perms[i].compose(&perms[j].inverse()).cycle_count();
            (d as f64).powi(c as i32)
        });
        let residual_of = |values: &[f64]| -> f64 {
            let mut worst: f64 = 0.0;
            for i in 0..size {
                let mut acc = 0.0;
                for j in 0..size {
                    acc += gram[(i, j)] * values[j];
                }
                let target = if i == id_idx { 1.0 } else { 0.0 };
                worst = worst.max((acc - target).abs());
            }
            worst
        };

        let mut values: Vec<f64> = gram
            .clone()
            .try_inverse()
            .ok_or(WeingartenError::GramInversion { n, d })?
            .row(id_idx)
            .iter()
            .copied()
            .collect();
        let mut residual = residual_of(&values);
        if residual > 1e-8 {
            // Fall back to solving the defining linear system with partial pivoting.
            let mut rhs = nalgebra::DVector::<f64>::zeros(size);
            rhs[id_idx] = 1.0;
            let solved = gram
                .clone()
                .lu()
                .solve(&rhs)
                .ok_or(WeingartenError::GramInversion { n, d })?;
            values = solved.iter().copied().collect();
            residual = residual_of(&values);
        }
        Ok(Self {
            n,
            d,
            perms,
            values,
            index,
            residual,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn perms(&self) -> &[Permutation] {
        &self.perms
    }

    /// Largest residual of the defining linear system.
    pub fn residual(&self) -> f64 {
        self.residual
    }

    /// $\mathrm{Wg}(p, d)$.
    pub fn wg(&self, p: &Permutation) -> f64 {
        self.values[self.index[&p.map]]
    }

    pub fn value_at(&self, idx: usize) -> f64 {
        self.values[idx]
    }

    /// Value for any permutation of the given cycle type.
    pub fn wg_by_cycle_type(&self, ct: &CycleType) -> Option<f64> {
        self.perms
            .iter()
            .position(|p| &p.cycle_type() == ct)
            .map(|i| self.values[i])
    }

    /// Distinct cycle types with their Weingarten values, in first-occurrence order.
    pub fn by_cycle_type(&self) -> Vec<(CycleType, f64)> {
        let mut out: Vec<(CycleType, f64)> = Vec::new();
        for (i, p) in self.perms.iter().enumerate() {
            let ct = p.cycle_type();
            if !out.iter().any(|(c, _)| c == &ct) {
                out.push((ct, self.values[i]));
            }
        }
        out
    }
}

/// Public entry point matching the table constructor.
pub fn weingarten_table(n: usize, d: usize) -> Result<WeingartenTable> {
    WeingartenTable::build(n, d)
}

/// Exact balanced moment
/// $\mathbb{E}[\prod_\ell U_{i_\ell j_\ell} U^*_{i'_\ell j'_\ell}]
///  = \sum_{\sigma,\tau} \prod_\ell \delta_{i_\ell i'_{\sigma(\ell)}}
///    \delta_{j_\ell j'_{\tau(\ell)}}\, \mathrm{Wg}(\tau\sigma^{-1}, d)$.
pub fn haar_moment_tensor(
    n: usize,
    d: usize,
    rows: &[usize],
    cols: &[usize],
    rows_conj: &[usize],
    cols_conj: &[usize],
) -> Result<f64> {
    if rows.len() != n || cols.len() != n || rows_conj.len() != n || cols_conj.len() != n {
        return Err(WeingartenError::InvalidArgument(format!(
            "index lists must all have length {n}"
        )));
    }
    for &ix in rows.iter().chain(cols).chain(rows_conj).chain(cols_conj) {
        if ix >= d {
            return Err(WeingartenError::IndexOutOfRange { index: ix, d });
        }
    }
    let table = WeingartenTable::build(n, d)?;
    let perms = table.perms().to_vec();
    let mut total = 0.0;
    for sigma in &perms {
        if (0..n).any(|l| rows[l] != rows_conj[sigma.apply(l)]) {
            continue;
        }
        for tau in &perms {
            if (0..n).any(|l| cols[l] != cols_conj[tau.apply(l)]) {
                continue;
            }
            total += table.wg(&tau.compose(&sigma.inverse()));
        }
    }
    Ok(total)
}

/// Analytic Haar twirl for moment orders 1 and 2.
///
/// $n=1$: $\mathrm{tr}(x)\,\mathbb{1}/d$. $n=2$: $\alpha\,\mathbb{1} + \beta\,\mathrm{SWAP}$
/// with
/// $\alpha = \frac{\mathrm{tr}\,x}{d^2-1} - \frac{\mathrm{tr}(\mathrm{SWAP}\,x)}{d(d^2-1)}$,
/// $\beta = \frac{\mathrm{tr}(\mathrm{SWAP}\,x)}{d^2-1} - \frac{\mathrm{tr}\,x}{d(d^2-1)}$.
pub fn analytic_twirl(n: usize, x: &ComplexMatrix, d: usize) -> Result<ComplexMatrix> {
    match n {
        1 => {
            if x.rows() != d {
                return Err(WeingartenError::InvalidArgument(format!(
                    "matrix dim {} != d = {d}",
                    x.rows()
                )));
            }
            Ok(ComplexMatrix::identity(d).scale(x.trace() / d as f64))
        }
        2 => {
            if x.rows() != d * d {
                return Err(WeingartenError::InvalidArgument(format!(
                    "matrix dim {} != d^2 = {}",
                    x.rows(),
                    d * d
                )));
            }
            let swap = swap_operator(d);
            let tr_x = x.trace();
            let tr_sx = swap.mul(x)?.trace();
            let df = d as f64;
            let denom = df * df - 1.0;
            let alpha = tr_x / denom - tr_sx / (df * denom);
            let beta = tr_sx / denom - tr_x / (df * denom);
            ComplexMatrix::identity(d * d)
                .scale(alpha)
                .add(&swap.scale(beta))
                .map_err(WeingartenError::Qmath)
        }
        _ => Err(WeingartenError::Unsupported(format!(
            "analytic twirl only for n <= 2 (got {n}); use haar_moment_tensor"
        ))),
    }
}

// ---------------------------------------------------------------------------
// Delta systems
// ---------------------------------------------------------------------------

/// A system of index variables with Kronecker-delta equalities and constant pins,
/// evaluated by union-find component counting.
///
/// The value of the fully-summed delta product is (alphabet size)^(number of unpinned
/// components); merging two variables pinned to different constants makes the whole
/// system evaluate to zero.
#[derive(Clone, Debug)]
pub struct DeltaSystem {
    parent: Vec<usize>,
    rank: Vec<u8>,
    alphabet: Vec<usize>,
    pin: Vec<Option<usize>>,
    contradictory: bool,
}

impl DeltaSystem {
    /// One variable per entry of `alphabets`, each ranging over its own alphabet size.
    pub fn new(alphabets: Vec<usize>) -> Self {
        let n = alphabets.len();
        Self {
            parent: (0..n).collect(),
            rank: vec![0; n],
            alphabet: alphabets,
            pin: vec![None; n],
            contradictory: false,
        }
    }

    fn find(&mut self, mut v: usize) -> usize {
        while self.parent[v] != v {
            self.parent[v] = self.parent[self.parent[v]];
            v = self.parent[v];
        }
        v
    }

    /// Imposes $\delta_{ab}$.
    pub fn equate(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return;
        }
        debug_assert_eq!(self.alphabet[ra], self.alphabet[rb], "mixed-alphabet merge");
        let (hi, lo) = if self.rank[ra] >= self.rank[rb] {
            (ra, rb)
        } else {
            (rb, ra)
        };
        self.parent[lo] = hi;
        if self.rank[hi] == self.rank[lo] {
            self.rank[hi] += 1;
        }
        match (self.pin[hi], self.pin[lo]) {
            (Some(x), Some(y)) if x != y => self.contradictory = true,
            (None, Some(y)) => self.pin[hi] = Some(y),
            _ => {}
        }
    }

    /// Fixes a variable to a constant value.
    pub fn pin(&mut self, v: usize, value: usize) {
        let r = self.find(v);
        match self.pin[r] {
            Some(x) if x != value => self.contradictory = true,
            None => self.pin[r] = Some(value),
            _ => {}
        }
    }

    /// Evaluates the fully summed system (0 on contradictory pins).
    pub fn degree(&mut self) -> f64 {
        if self.contradictory {
            return 0.0;
        }
        let n = self.parent.len();
        let mut value = 1.0;
        for v in 0..n {
            if self.find(v) == v && self.pin[v].is_none() {
                value *= self.alphabet[v] as f64;
            }
        }
        value
    }
}

/// Free-function form of [`DeltaSystem::degree`].
pub fn delta_degree(sys: &mut DeltaSystem) -> f64 {
    sys.degree()
}

// ---------------------------------------------------------------------------
// Constant-interaction averages
// ---------------------------------------------------------------------------

/// The averaged Choi state of a constant-interaction process.
///
/// `matrix` is the literal permutation-pair sum, whose trace is $d_S^k$ (the convention
/// with unnormalized entangled ancillas); `unit_trace()` rescales to the trace-1
/// convention used by the measures. Legs are ordered `[S_out, A_k, B_k, ..., A_1, B_1]`.
#[derive(Clone, Debug)]
pub struct ConstantAverage {
    pub matrix: ComplexMatrix,
    pub layout: SubsystemLayout,
    /// Trace of the literal sum (equals $d_S^k$ up to roundoff); also the conversion
    /// factor to the unit-trace convention.
    pub raw_trace: f64,
}

impl ConstantAverage {
    pub fn unit_trace(&self) -> ComplexMatrix {
        self.matrix.scale_re(1.0 / self.raw_trace)
    }
}

/// Nonzero matrix elements of a state, as `(row, col, value)` triples.
fn nonzero_elements(rho: &DensityMatrix) -> Vec<(usize, usize, Complex64)> {
    let d = rho.dim();
    let mut out = Vec::new();
    for i in 0..d {
        for j in 0..d {
            let v = rho.matrix().get(i, j);
            if v.norm() > 1e-15 {
                out.push((i, j, v));
            }
        }
    }
    out
}

/// Standard leg labels `[S_out, A_k, B_k, ..., A_1, B_1]` for a `k`-step process on
/// system dimension `d_s`.
pub fn process_leg_layout(k: usize, d_s: usize) -> SubsystemLayout {
    let mut pairs: Vec<(String, usize)> = vec![("Sout".to_string(), d_s)];
    for i in (1..=k).rev() {
        pairs.push((format!("A{i}"), d_s));
        pairs.push((format!("B{i}"), d_s));
    }
    SubsystemLayout::new(
        pairs.iter().map(|(l, _)| l.clone()).collect(),
        pairs.iter().map(|(_, d)| *d).collect(),
    )
    .expect("labels are unique")
}

/// Average Choi state of a `k`-step process whose interaction unitary is the *same*
/// Haar draw at every step, computed exactly as a double sum over
/// $\sigma, \tau \in \mathfrak{G}_{k+1}$ with Weingarten weights and environment-index
/// delta contractions.
///
/// `rho` is the joint fiducial state on $E \otimes S$ (composite basis $|es\rangle$,
/// environment slowest). Supported for `k <= 2`.
pub fn avg_process_constant(
    k: usize,
    d_s: usize,
    d_e: usize,
    rho: &DensityMatrix,
) -> Result<ConstantAverage> {
    if k > 2 {
        return Err(WeingartenError::Unsupported(format!(
            "constant-interaction average supports k <= 2 (got {k})"
        )));
    }
    let d_se = d_s * d_e;
    if rho.dim() != d_se {
        return Err(WeingartenError::InvalidArgument(format!(
            "fiducial state dim {} != d_S*d_E = {d_se}",
            rho.dim()
        )));
    }
    if d_se < k + 1 {
        return Err(WeingartenError::Unsupported(format!(
            "need d_SE >= k+1 (got d_SE={d_se}, k={k})"
        )));
    }
    let table = WeingartenTable::build(k + 1, d_se)?;
    let perms = table.perms().to_vec();
    let elems = nonzero_elements(rho);
    let dim = d_s.pow(2 * k as u32 + 1);
    // Working factor order: [S_out, A_1, B_1, ..., A_k, B_k]; permuted to the standard
    // layout at the end.
    let mut acc = ComplexMatrix::zeros(dim, dim);

    // Variable indexing inside the delta system: eps_i -> i, epsp_i -> (k+1)+i.
    let eps = |i: usize| i;
    let epsp = |i: usize| (k + 1) + i;
    let n_env_vars = 2 * (k + 1);

    // System-index enumeration: sig_0..sig_k always free; sigp_j free unless pinned by
    // the fiducial matrix element.
    let mut sig = vec![0usize; k + 1];
    let mut sigp = vec![0usize; k + 1];
    let mut row_digits = vec![0usize; 2 * k + 1];
    let mut col_digits = vec![0usize; 2 * k + 1];
    let dims_row = vec![d_s; 2 * k + 1];

    for sigma in &perms {
        for tau in &perms {
            let wg = table.wg(&tau.compose(&sigma.inverse()));
            for &(x, y, val) in &elems {
                let (ex, sx) = (x / d_s, x % d_s);
                let (ey, sy) = (y / d_s, y % d_s);
                // Environment part: count the delta contractions.
                let mut sys = DeltaSystem::new(vec![d_e; n_env_vars]);
                sys.equate(eps(sigma.apply(k)), eps(k));
                for l in 1..=k {
                    sys.equate(eps(sigma.apply(l - 1)), epsp(tau.apply(l)));
                    sys.equate(eps(l - 1), epsp(l));
                }
                sys.pin(epsp(tau.apply(0)), ex);
                sys.pin(epsp(0), ey);
                let env = sys.degree();
                if env == 0.0 {
                    continue;
                }
                // System-part pins on the primed indices.
                let pin_t0 = tau.apply(0);
                if pin_t0 == 0 && sx != sy {
                    continue;
                }
                let weight = val * wg * env;
                let free_sigp: Vec<usize> =
                    (0..=k).filter(|&j| j != 0 && j != pin_t0).collect();
                sigp[pin_t0] = sx;
                sigp[0] = sy;
                // Enumerate all free system indices and scatter into the operator.
                let n_free = (k + 1) + free_sigp.len();
                let total: usize = d_s.pow(n_free as u32);
                let mut digits = vec![0usize; n_free];
                let free_dims = vec![d_s; n_free];
                for flat in 0..total {
                    crate::qmath::decode_index(flat, &free_dims, &mut digits);
                    sig[..(k + 1)].copy_from_slice(&digits[..(k + 1)]);
                    for (slot, &j) in free_sigp.iter().enumerate() {
                        sigp[j] = digits[k + 1 + slot];
                    }
                    // Row (ket): [sig_{σ(k)}, then (sig_{σ(l-1)}, sigp_{τ(l)}) for l=1..k].
                    row_digits[0] = sig[sigma.apply(k)];
                    col_digits[0] = sig[k];
                    for l in 1..=k {
                        row_digits[2 * l - 1] = sig[sigma.apply(l - 1)];
                        row_digits[2 * l] = sigp[tau.apply(l)];
                        col_digits[2 * l - 1] = sig[l - 1];
                        col_digits[2 * l] = sigp[l];
                    }
                    let r = crate::qmath::encode_index(&row_digits, &dims_row);
                    let c = crate::qmath::encode_index(&col_digits, &dims_row);
                    acc.add_at(r, c, weight);
                }
            }
        }
    }

    // Reorder from [S_out, A_1, B_1, ..., A_k, B_k] to [S_out, A_k, B_k, ..., A_1, B_1].
    let mut work_pairs: Vec<(String, usize)> = vec![("Sout".into(), d_s)];
    for i in 1..=k {
        work_pairs.push((format!("A{i}"), d_s));
        work_pairs.push((format!("B{i}"), d_s));
    }
    let work_layout = SubsystemLayout::new(
        work_pairs.iter().map(|(l, _)| l.clone()).collect(),
        work_pairs.iter().map(|(_, d)| *d).collect(),
    )
    .map_err(WeingartenError::Qmath)?;
    let target = process_leg_layout(k, d_s);
    let order: Vec<&str> = target.labels().iter().map(|s| s.as_str()).collect();
    let (matrix, layout) =
        permute_matrix_subsystems(&acc, &work_layout, &order).map_err(WeingartenError::Qmath)?;
    let raw_trace = matrix.trace().re;
    Ok(ConstantAverage {
        matrix,
        layout,
        raw_trace,
    })
}

/// Closed-form averaged superprocess ($k=1$) for a constant interaction:
/// $\frac{1}{d_E^2 d_S^2 - 1}\big[\frac{d_E^2}{d_S}\mathbb{1}
///  + \frac{\mathrm{SWAP}}{d_S}\otimes\rho_S^T
///  - \frac{\mathrm{SWAP}}{d_S}\otimes\frac{\mathbb{1}}{d_S}
///  - \frac{\mathbb{1}}{d_S^2}\otimes\rho_S^T\big]$,
/// with SWAP acting on the (S_out, A_1) pair and the last factor on B_1; returned in the
/// standard `[S_out, A_1, B_1]` leg order (unit trace).
pub fn avg_process_constant_k1_closed_form(
    d_s: usize,
    d_e: usize,
    rho_s: &ComplexMatrix,
) -> Result<ComplexMatrix> {
    if rho_s.rows() != d_s {
        return Err(WeingartenError::InvalidArgument(
            "system state dimension mismatch".into(),
        ));
    }
    let ds = d_s as f64;
    let de = d_e as f64;
    let denom = de * de * ds * ds - 1.0;
    let swap = swap_operator(d_s);
    let one_s = ComplexMatrix::identity(d_s);
    let rho_t = rho_s.transpose();
    let term1 = ComplexMatrix::identity(d_s.pow(3)).scale_re(de * de / ds);
    let term2 = kron(&swap.scale_re(1.0 / ds), &rho_t);
    let term3 = kron(&swap.scale_re(1.0 / ds), &one_s.scale_re(1.0 / ds));
    let term4 = kron(&kron(&one_s, &one_s).scale_re(1.0 / (ds * ds)), &rho_t);
    let m = term1
        .add(&term2)
        .map_err(WeingartenError::Qmath)?
        .sub(&term3)
        .map_err(WeingartenError::Qmath)?
        .sub(&term4)
        .map_err(WeingartenError::Qmath)?;
    Ok(m.scale_re(1.0 / denom))
}

/// Closed-form purity of the *averaged* superprocess ($k=1$, constant interaction):
/// $\frac{2}{(d_E^2 d_S^2-1)^2}\big[\frac{1}{d_S^3}
///  + \mathrm{tr}(\rho_S^2)\frac{d_S^2 - d_S - 1}{2 d_S^2} - \frac{d_E^2}{d_S}
///  + \frac{d_E^4 d_S}{2}\big]$.
pub fn avg_state_purity_constant_k1_closed_form(d_s: usize, d_e: usize, tr_rho_s_sq: f64) -> f64 {
    let ds = d_s as f64;
    let de = d_e as f64;
    let denom = de * de * ds * ds - 1.0;
    2.0 / (denom * denom)
        * (1.0 / ds.powi(3) + tr_rho_s_sq * (ds * ds - ds - 1.0) / (2.0 * ds * ds)
            - de * de / ds
            + de.powi(4) * ds / 2.0)
}

/// Average purity $\mathbb{E}[\mathrm{tr}(\Upsilon^2)]$ of a `k`-step constant-interaction
/// process (unit-trace convention), evaluated exactly:
///
/// $d_S^{-2k}\sum_{\sigma,\tau\in\mathfrak{G}_{2k+2}}
///  \mathrm{Wg}(\tau\sigma^{-1})\,\rho_{\tau(0);k+1}\rho_{\tau(k+1);0}\,
///  \Delta^{(d_E,d_S)}_{k,\sigma,\tau}$,
///
/// with the delta systems contracted by union-find. Requires a *pure* fiducial state,
/// `k <= 2` and $d_{SE} \ge 2k+2$.
pub fn avg_purity_constant(k: usize, d_s: usize, d_e: usize, rho: &DensityMatrix) -> Result<f64> {
    if k > 2 {
        return Err(WeingartenError::Unsupported(format!(
            "constant-interaction purity supports k <= 2 (got {k})"
        )));
    }
    let d_se = d_s * d_e;
    let n = 2 * k + 2;
    if d_se < n {
        return Err(WeingartenError::Unsupported(format!(
            "need d_SE >= 2k+2 = {n} (got {d_se})"
        )));
    }
    if rho.dim() != d_se {
        return Err(WeingartenError::InvalidArgument(format!(
            "fiducial state dim {} != d_S*d_E = {d_se}",
            rho.dim()
        )));
    }
    {
        let p = crate::qmath::purity(rho);
        if (p - 1.0).abs() > 1e-6 {
            return Err(WeingartenError::InvalidArgument(format!(
                "fiducial state must be pure (purity {p})"
            )));
        }
    }
    let table = WeingartenTable::build(n, d_se)?;
    let perms = table.perms().to_vec();
    let elems = nonzero_elements(rho);

    // Variable indexing: eps_i -> i, epsp_i -> n+i, sig_i -> 2n+i, sigp_i -> 3n+i.
    let eps = |i: usize| i;
    let epsp = |i: usize| n + i;
    let sig = |i: usize| 2 * n + i;
    let sigp = |i: usize| 3 * n + i;
    let mut alphabets = vec![d_e; 2 * n];
    alphabets.extend(vec![d_s; 2 * n]);

    let mut total = Complex64::new(0.0, 0.0);
    for sigma in &perms {
        for tau in &perms {
            let wg = table.wg(&tau.compose(&sigma.inverse()));
            // Skeleton of equalities shared by all fiducial matrix elements.
            let mut base = DeltaSystem::new(alphabets.clone());
            base.equate(eps(k), eps(sigma.apply(2 * k + 1)));
            base.equate(eps(2 * k + 1), eps(sigma.apply(k)));
            for l in 1..=(2 * k + 1) {
                if l == k + 1 {
                    continue;
                }
                base.equate(eps(l - 1), epsp(l));
                base.equate(eps(sigma.apply(l - 1)), epsp(tau.apply(l)));
                base.equate(sigp(l), sigp(tau.apply(l)));
            }
            for m in 0..n {
                base.equate(sig(m), sig(sigma.apply(m)));
            }
            for &(x1, y1, v1) in &elems {
                for &(x2, y2, v2) in &elems {
                    let mut sys = base.clone();
                    // ⟨ε'_{τ(0)} ς'_{τ(0)}| ρ |ε'_{k+1} ς'_{k+1}⟩ ⟨ε'_{τ(k+1)} ς'_{τ(k+1)}| ρ |ε'_0 ς'_0⟩
                    sys.pin(epsp(tau.apply(0)), x1 / d_s);
                    sys.pin(sigp(tau.apply(0)), x1 % d_s);
                    sys.pin(epsp(k + 1), y1 / d_s);
                    sys.pin(sigp(k + 1), y1 % d_s);
                    sys.pin(epsp(tau.apply(k + 1)), x2 / d_s);
                    sys.pin(sigp(tau.apply(k + 1)), x2 % d_s);
                    sys.pin(epsp(0), y2 / d_s);
                    sys.pin(sigp(0), y2 % d_s);
                    let deg = sys.degree();
                    if deg != 0.0 {
                        total += v1 * v2 * wg * deg;
                    }
                }
            }
        }
    }
    let value = total / (d_s as f64).powi(2 * k as i32);
    debug_assert!(value.im.abs() < 1e-9);
    Ok(value.re)
}
