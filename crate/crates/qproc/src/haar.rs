//! Haar-measure sampling and Monte Carlo estimators.
//!
//! Unitaries are drawn by QR-decomposing a Ginibre matrix and fixing the phases from the
//! diagonal of $R$, which makes $U = Q\Lambda$ Haar distributed. All sampling is driven by
//! explicit, splittable [`RngStream`] descriptors so that parallel experiments are exactly
//! reproducible: trial $t$ of experiment $e$ runs on `stream_id = hash(e, t)` and two runs
//! with the same `(master_seed, stream_id)` produce bit-identical samples.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::qmath::{
    eig_hermitian, kron, partial_trace, purity, trace_distance, ComplexMatrix, DensityMatrix,
    PureState, SubsystemLayout, TOL,
};

/// Errors from the sampling layer.
#[derive(Debug, Error)]
pub enum HaarError {
    #[error("dimension {dim} is not a perfect {n}-th power")]
    NotAPower { dim: usize, n: usize },
    #[error("need at least {need} samples, got {got}")]
    TooFewSamples { need: usize, got: usize },
    #[error("restricted dimension {d_r} out of range (1..={max})")]
    RestrictionOutOfRange { d_r: usize, max: usize },
    #[error("matrix is not unitary (residual {0:e})")]
    NotUnitary(f64),
    #[error(transparent)]
    Qmath(#[from] crate::qmath::QmathError),
}

type Result<T> = std::result::Result<T, HaarError>;

/// Concrete generator type backing an [`RngStream`].
pub type StreamRng = ChaCha12Rng;

/// A reproducible random stream: a master seed plus a stream identifier.
///
/// Identical `(master_seed, stream_id)` pairs yield identical sample sequences; distinct
/// stream ids give statistically independent streams (ChaCha streams).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RngStream {
    pub master_seed: u64,
    pub stream_id: u64,
}

impl RngStream {
    pub fn new(master_seed: u64, stream_id: u64) -> Self {
        Self {
            master_seed,
            stream_id,
        }
    }

    /// Stream for trial `trial` of the named experiment: `stream_id = hash(name, trial)`
    /// (FNV-1a, folded with this stream's id so derived streams do not collide across
    /// parents).
    pub fn derive(&self, name: &str, trial: u64) -> Self {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |byte: u8| {
            h ^= byte as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        };
        for b in name.as_bytes() {
            eat(*b);
        }
        for b in trial.to_le_bytes() {
            eat(b);
        }
        for b in self.stream_id.to_le_bytes() {
            eat(b);
        }
        Self {
            master_seed: self.master_seed,
            stream_id: h,
        }
    }

    /// Instantiates the generator positioned at the start of this stream.
    pub fn rng(&self) -> StreamRng {
        let mut rng = ChaCha12Rng::seed_from_u64(self.master_seed);
        rng.set_stream(self.stream_id);
        rng
    }
}

/// A unitary matrix: $UU^\dagger = \mathbb{1}$ within [`TOL`] (Frobenius).
#[derive(Clone, Debug)]
pub struct UnitaryMatrix {
    matrix: ComplexMatrix,
}

impl UnitaryMatrix {
    pub fn new(matrix: ComplexMatrix) -> Result<Self> {
        let d = matrix.rows();
        let residual = matrix
            .mul(&matrix.dagger())
            .map_err(HaarError::Qmath)?
            .sub(&ComplexMatrix::identity(d))
            .map_err(HaarError::Qmath)?
            .frobenius_norm();
        if residual > TOL {
            return Err(HaarError::NotUnitary(residual));
        }
        Ok(Self { matrix })
    }

    pub fn matrix(&self) -> &ComplexMatrix {
        &self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.rows()
    }
}

/// One complex standard-normal variate: real and imaginary parts independent
/// $\mathcal{N}(0, 1/2)$, so $\mathbb{E}|z|^2 = 1$.
fn complex_normal(rng: &mut StreamRng) -> Complex64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

/// A $d \times d$ Ginibre matrix: i.i.d. complex standard-normal entries.
pub fn ginibre(d: usize, rng: &mut StreamRng) -> ComplexMatrix {
    ComplexMatrix::from_fn(d, d, |_, _| complex_normal(rng))
}

/// A Haar-random unitary: QR-decompose a Ginibre draw and multiply $Q$ by
/// $\Lambda = \mathrm{diag}(r_{ii}/|r_{ii}|)$, which forces $R$ to have positive diagonal
/// and makes the result Haar distributed.
pub fn haar_unitary(d: usize, rng: &mut StreamRng) -> UnitaryMatrix {
    let z = ginibre(d, rng).to_nalgebra();
    let qr = z.qr();
    let q = qr.q();
    let r = qr.r();
    let mut u = ComplexMatrix::from_nalgebra(&q);
    for j in 0..d {
        let rjj = r[(j, j)];
        let phase = if rjj.norm() > 0.0 {
            rjj / rjj.norm()
        } else {
            Complex64::new(1.0, 0.0)
        };
        for i in 0..d {
            u.set(i, j, u.get(i, j) * phase);
        }
    }
    UnitaryMatrix::new(u).expect("QR of a Ginibre draw is unitary")
}

/// `n`-fold tensor power $U^{\otimes n}$.
fn tensor_power(u: &ComplexMatrix, n: usize) -> ComplexMatrix {
    let mut acc = u.clone();
    for _ in 1..n {
        acc = kron(&acc, u);
    }
    acc
}

/// Monte Carlo estimate of a twirl together with its entrywise standard errors.
#[derive(Clone, Debug)]
pub struct TwirlEstimate {
    /// Sample mean of $U^{\otimes n} X U^{\dagger\otimes n}$.
    pub mean: ComplexMatrix,
    /// Entrywise standard error (sample standard deviation of the complex entry divided
    /// by $\sqrt{N}$), stored as a real-valued matrix.
    pub std_err: ComplexMatrix,
    pub samples: usize,
}

/// Monte Carlo `n`-twirl: mean of $U^{\otimes n} X U^{\dagger\otimes n}$ over Haar samples.
///
/// Unbiased estimator of the projection of $X$ onto the commutant of $\{U^{\otimes n}\}$.
pub fn mc_twirl(n: usize, x: &ComplexMatrix, samples: usize, rng: &mut StreamRng) -> Result<TwirlEstimate> {
    assert!(n >= 1);
    let dim = x.rows();
    let d = nth_root(dim, n).ok_or(HaarError::NotAPower { dim, n })?;
    if samples < 2 {
        return Err(HaarError::TooFewSamples {
            need: 2,
            got: samples,
        });
    }
    let mut sum = ComplexMatrix::zeros(dim, dim);
    let mut sum_sq = vec![0.0f64; dim * dim]; // accumulates |entry|² for the variance
    let mut draws: Vec<ComplexMatrix> = Vec::with_capacity(samples);
    for _ in 0..samples {
        let u = tensor_power(haar_unitary(d, rng).matrix(), n);
        let t = u.mul(x)?.mul(&u.dagger())?;
        sum = sum.add(&t)?;
        draws.push(t);
    }
    let mean = sum.scale_re(1.0 / samples as f64);
    for t in &draws {
        for (idx, z) in t.data().iter().enumerate() {
            let dlt = z - mean.data()[idx];
            sum_sq[idx] += dlt.norm_sqr();
        }
    }
    let std_err = ComplexMatrix::from_fn(dim, dim, |i, j| {
        let var = sum_sq[i * dim + j] / (samples as f64 - 1.0);
        Complex64::new((var / samples as f64).sqrt(), 0.0)
    });
    Ok(TwirlEstimate {
        mean,
        std_err,
        samples,
    })
}

fn nth_root(dim: usize, n: usize) -> Option<usize> {
    let d = (dim as f64).powf(1.0 / n as f64).round() as usize;
    for c in d.saturating_sub(1)..=d + 1 {
        if c >= 1 && c.pow(n as u32) == dim {
            return Some(c);
        }
    }
    None
}

/// Mean and standard error of a scalar sample.
fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Mean purity of the reduced state $\mathrm{tr}_B\, U|0\rangle\langle 0|U^\dagger$ over
/// Haar-random $U$ on $d_A d_B$; converges to $(d_A + d_B)/(d_A d_B + 1)$.
///
/// Returns `(mean, standard error)`.
pub fn reduced_purity_experiment(
    d_a: usize,
    d_b: usize,
    samples: usize,
    rng: &mut StreamRng,
) -> Result<(f64, f64)> {
    if samples < 2 {
        return Err(HaarError::TooFewSamples {
            need: 2,
            got: samples,
        });
    }
    let layout = SubsystemLayout::of(&[("A", d_a), ("B", d_b)])?;
    let mut purities = Vec::with_capacity(samples);
    for _ in 0..samples {
        let u = haar_unitary(d_a * d_b, rng);
        // First column of U is U|0⟩.
        let psi: Vec<Complex64> = (0..d_a * d_b).map(|i| u.matrix().get(i, 0)).collect();
        let state = PureState::new(psi, layout.clone())?;
        let rho_a = state.to_density().reduce(&["A"])?;
        purities.push(purity(&rho_a));
    }
    Ok(mean_and_se(&purities))
}

/// Result of a canonical-typicality run.
#[derive(Clone, Debug)]
pub struct CanonicalTypicalityResult {
    /// Mean trace distance $D(\rho_S, \Omega_S)$ over the sampled subspace states.
    pub mean_distance: f64,
    pub std_err: f64,
    /// The typicality bound $\tfrac12\sqrt{d_S\,\mathrm{tr}(\Omega_E^2)}$.
    pub bound: f64,
    /// $\mathrm{tr}(\Omega_E^2)$ of the environment canonical state (always $\le d_S/d_R$).
    pub omega_e_purity: f64,
}

/// Samples Haar-random pure states from the restriction subspace spanned by the first
/// `d_r` computational basis vectors of $\mathcal{H}_E \otimes \mathcal{H}_S$ and compares
/// each reduced system state with the canonical state $\Omega_S = \mathrm{tr}_E(\mathbb{1}_R)/d_R$.
pub fn canonical_typicality_experiment(
    d_s: usize,
    d_e: usize,
    d_r: usize,
    samples: usize,
    rng: &mut StreamRng,
) -> Result<CanonicalTypicalityResult> {
    let d = d_e * d_s;
    if d_r == 0 || d_r > d {
        return Err(HaarError::RestrictionOutOfRange { d_r, max: d });
    }
    if samples < 2 {
        return Err(HaarError::TooFewSamples {
            need: 2,
            got: samples,
        });
    }
    let layout = SubsystemLayout::of(&[("E", d_e), ("S", d_s)])?;
    // 1_R = projector on the first d_r computational basis vectors.
    let mut one_r = ComplexMatrix::zeros(d, d);
    for i in 0..d_r {
        one_r.set(i, i, Complex64::new(1.0, 0.0));
    }
    let omega_s_m = partial_trace(&one_r, &layout, &["S"])?.scale_re(1.0 / d_r as f64);
    let omega_s = DensityMatrix::new(omega_s_m, layout.restricted(&["S"])?)?;
    let omega_e_m = partial_trace(&one_r, &layout, &["E"])?.scale_re(1.0 / d_r as f64);
    let omega_e_purity = {
        let f = omega_e_m.frobenius_norm();
        f * f
    };
    let bound = 0.5 * (d_s as f64 * omega_e_purity).sqrt();

    let mut dists = Vec::with_capacity(samples);
    for _ in 0..samples {
        // Haar-uniform pure state in the subspace: normalized Gaussian vector on the
        // first d_r coordinates.
        let mut amps = vec![Complex64::new(0.0, 0.0); d];
        loop {
            let mut norm_sq = 0.0;
            for a in amps.iter_mut().take(d_r) {
                *a = complex_normal(rng);
                norm_sq += a.norm_sqr();
            }
            if norm_sq > 1e-12 {
                let inv = 1.0 / norm_sq.sqrt();
                for a in amps.iter_mut().take(d_r) {
                    *a *= inv;
                }
                break;
            }
        }
        let state = PureState::new(amps, layout.clone())?;
        let rho_s = state.to_density().reduce(&["S"])?;
        dists.push(trace_distance(&rho_s, &omega_s)?);
    }
    let (mean_distance, std_err) = mean_and_se(&dists);
    Ok(CanonicalTypicalityResult {
        mean_distance,
        std_err,
        bound,
        omega_e_purity,
    })
}

/// Concentration tail $2\exp(-d\,\delta^2/(9\pi^3 L^2))$ for an $L$-Lipschitz function of a
/// Haar-random pure state in dimension $d$.
pub fn levy_tail(d: usize, delta: f64, lipschitz: f64) -> f64 {
    assert!(delta > 0.0 && lipschitz > 0.0);
    2.0 * (-(d as f64) * delta * delta / (9.0 * std::f64::consts::PI.powi(3) * lipschitz * lipschitz))
        .exp()
}

/// Tail variant used for entanglement concentration on a bipartite space of total
/// dimension $d_{AB}$: $2\exp(-2 d_{AB}\,\delta^2/(9\pi^3))$.
///
/// Kept verbatim alongside [`levy_tail`]; the two constants are not unified.
pub fn levy_tail_entanglement(d_ab: usize, delta: f64) -> f64 {
    assert!(delta > 0.0);
    2.0 * (-2.0 * (d_ab as f64) * delta * delta / (9.0 * std::f64::consts::PI.powi(3))).exp()
}

/// Entrywise mean of Haar samples $f(U)$ — helper for invariance tests and first-moment
/// oracles.
pub fn mean_of_unitary_fn(
    d: usize,
    samples: usize,
    rng: &mut StreamRng,
    mut f: impl FnMut(&UnitaryMatrix) -> ComplexMatrix,
) -> ComplexMatrix {
    let mut sum: Option<ComplexMatrix> = None;
    for _ in 0..samples {
        let u = haar_unitary(d, rng);
        let v = f(&u);
        sum = Some(match sum {
            None => v,
            Some(s) => s.add(&v).unwrap(),
        });
    }
    sum.unwrap().scale_re(1.0 / samples as f64)
}

/// Convenience: eigenvalue range of a Hermitian matrix (used by property tests).
pub fn eig_range(m: &ComplexMatrix) -> Result<(f64, f64)> {
    let (e, _) = eig_hermitian(m)?;
    Ok((*e.first().unwrap(), *e.last().unwrap()))
}
