//! Monte Carlo side of the project: Haar-unitary sampling, assembly of
//! Y = U Sigma V* + A ensembles, singular-value and eigenvalue extraction,
//! empirical Cauchy transforms on the imaginary axis, least-singular-value
//! tail statistics, approximate subordination estimators, and the structured
//! checks for shift (Jordan) blocks.

use ndarray::{Array2, ArrayView2};
use ndarray_linalg::{Determinant, EigVals, EigValsh, JobSvd, SVDDC, QR, UPLO};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measures::AtomicMeasure;

/// Independent RNG substream roles so each consumer of randomness inside a
/// trial draws from its own counter stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    HaarU = 0,
    HaarV = 1,
    HaarW = 2,
    Cloud = 3,
    Probe = 4,
}

/// Counter-based substream keyed by (seed, trial, role): reproducible and
/// safe to evaluate in any order.
pub fn substream(seed: u64, trial: u64, role: Role) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((trial << 3) | role as u64);
    rng
}

/// Haar-distributed unitary matrix: QR of an i.i.d. complex Gaussian matrix
/// with the R-diagonal phases folded back into Q so the law is exactly
/// invariant (not just unitary).
pub fn haar_unitary(n: usize, rng: &mut ChaCha8Rng) -> Result<Array2<Complex64>> {
    if n == 0 {
        return Err(Error::Domain("haar_unitary needs n >= 1".into()));
    }
    let mut g = Array2::<Complex64>::zeros((n, n));
    for elt in g.iter_mut() {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        *elt = Complex64::new(re, im);
    }
    let (q, r) = g.qr()?;
    let mut u = q;
    for j in 0..n {
        let rjj = r[(j, j)];
        let mag = rjj.norm();
        let phase = if mag == 0.0 {
            Complex64::new(1.0, 0.0)
        } else {
            rjj / mag
        };
        for i in 0..n {
            u[(i, j)] *= phase;
        }
    }
    Ok(u)
}

/// Generator for the nonnegative diagonal Sigma.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SigmaSpec {
    /// Full explicit diagonal, length must equal the dimension.
    Explicit { values: Vec<f64> },
    /// `fraction` of the entries at `high`, the rest at `low`.
    TwoLevel { high: f64, low: f64, fraction: f64 },
    /// Diagonal filled with mid-cell quantiles of a fixed law.
    Quantiles { law: AtomicMeasure<f64> },
}

/// Generator for the deterministic summand A.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ASpec {
    Zero,
    /// Real diagonal; `values` is cycled to fill the dimension.
    HermitianDiag { values: Vec<f64> },
    /// Cyclic shift permutation matrix (unitary).
    UnitaryPerm,
    /// Nilpotent single shift block (ones on the superdiagonal).
    JordanBlock,
    /// JSON file holding an n x n matrix as rows of [re, im] pairs.
    File { path: String },
}

/// Full description of one matrix ensemble: dimension, Sigma and A
/// generators, declared norm bound, seed, and trial count.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EnsembleSpec {
    pub n: usize,
    pub sigma: SigmaSpec,
    pub a: ASpec,
    /// Declared bound M: every Sigma entry and the operator norm of A must
    /// stay within it.
    pub norm_bound: f64,
    pub seed: u64,
    pub trials: usize,
    /// When set to alpha, the spec claims min Sigma_ii >= n^-alpha and
    /// validation enforces it.
    #[serde(default)]
    pub inverse_norm_alpha: Option<f64>,
}

impl EnsembleSpec {
    /// The Sigma diagonal for this dimension.
    pub fn sigma_diag(&self) -> Result<Vec<f64>> {
        let n = self.n;
        match &self.sigma {
            SigmaSpec::Explicit { values } => {
                if values.len() != n {
                    return Err(Error::Domain(format!(
                        "explicit sigma has {} entries for dimension {n}",
                        values.len()
                    )));
                }
                Ok(values.clone())
            }
            SigmaSpec::TwoLevel {
                high,
                low,
                fraction,
            } => {
                if !(0.0..=1.0).contains(fraction) {
                    return Err(Error::Domain(format!(
                        "two-level fraction {fraction} outside [0, 1]"
                    )));
                }
                let k = (fraction * n as f64).round() as usize;
                let mut d = vec![*low; n];
                for slot in d.iter_mut().take(k) {
                    *slot = *high;
                }
                Ok(d)
            }
            SigmaSpec::Quantiles { law } => {
                let mut d = Vec::with_capacity(n);
                for i in 0..n {
                    d.push(law.quantile((i as f64 + 0.5) / n as f64));
                }
                Ok(d)
            }
        }
    }

    /// Atomic law of the Sigma diagonal (equal weights); this is the sigma
    /// the matching operator model should carry.
    pub fn sigma_law(&self) -> Result<AtomicMeasure<f64>> {
        AtomicMeasure::from_samples(&self.sigma_diag()?)
    }

    /// The deterministic summand as a dense matrix.
    pub fn a_matrix(&self) -> Result<Array2<Complex64>> {
        let n = self.n;
        let mut m = Array2::<Complex64>::zeros((n, n));
        match &self.a {
            ASpec::Zero => {}
            ASpec::HermitianDiag { values } => {
                if values.is_empty() {
                    return Err(Error::Domain("hermitian_diag needs at least one value".into()));
                }
                for i in 0..n {
                    m[(i, i)] = Complex64::new(values[i % values.len()], 0.0);
                }
            }
            ASpec::UnitaryPerm => {
                for i in 0..n {
                    m[(i, (i + 1) % n)] = Complex64::new(1.0, 0.0);
                }
            }
            ASpec::JordanBlock => {
                m = jordan_matrix(n)?;
            }
            ASpec::File { path } => {
                let text = std::fs::read_to_string(path)?;
                let rows: Vec<Vec<[f64; 2]>> = serde_json::from_str(&text)?;
                if rows.len() != n || rows.iter().any(|r| r.len() != n) {
                    return Err(Error::Domain(format!(
                        "matrix file {path} is not {n} x {n}"
                    )));
                }
                for (i, row) in rows.iter().enumerate() {
                    for (j, val) in row.iter().enumerate() {
                        m[(i, j)] = Complex64::new(val[0], val[1]);
                    }
                }
            }
        }
        Ok(m)
    }

    /// Operator norm of the deterministic summand (closed form where the
    /// structure gives it, dense SVD otherwise).
    pub fn a_norm(&self) -> Result<f64> {
        match &self.a {
            ASpec::Zero => Ok(0.0),
            ASpec::HermitianDiag { values } => Ok(values
                .iter()
                .fold(0.0f64, |acc, v| acc.max(v.abs()))),
            ASpec::UnitaryPerm => Ok(1.0),
            ASpec::JordanBlock => Ok(1.0),
            ASpec::File { .. } => {
                let m = self.a_matrix()?;
                let s = singular_values(m.view())?;
                Ok(s.first().copied().unwrap_or(0.0))
            }
        }
    }

    /// Checks every declared invariant; runners must call this before any
    /// sampling so rejected configurations never execute.
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Domain("ensemble dimension must be >= 1".into()));
        }
        if self.trials == 0 {
            return Err(Error::Domain("ensemble needs at least one trial".into()));
        }
        if !(self.norm_bound.is_finite() && self.norm_bound > 0.0) {
            return Err(Error::Domain(format!(
                "norm bound {} must be finite and positive",
                self.norm_bound
            )));
        }
        let diag = self.sigma_diag()?;
        for &v in &diag {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Domain(format!("sigma entry {v} is not nonnegative")));
            }
            if v > self.norm_bound {
                return Err(Error::Domain(format!(
                    "sigma entry {v} exceeds the declared norm bound {}",
                    self.norm_bound
                )));
            }
        }
        if let Some(alpha) = self.inverse_norm_alpha {
            let floor = (self.n as f64).powf(-alpha);
            let min = diag.iter().copied().fold(f64::INFINITY, f64::min);
            if min < floor {
                return Err(Error::Domain(format!(
                    "invertibility claim violated: min sigma entry {min:e} < n^-{alpha} = {floor:e}"
                )));
            }
        }
        let an = self.a_norm()?;
        if an > self.norm_bound * (1.0 + 1e-12) {
            return Err(Error::Domain(format!(
                "deterministic part norm {an} exceeds the declared norm bound {}",
                self.norm_bound
            )));
        }
        Ok(())
    }
}

/// One assembled draw Y = U Sigma V* + A together with its factors.
#[derive(Clone, Debug)]
pub struct Assembled {
    pub y: Array2<Complex64>,
    pub u: Array2<Complex64>,
    pub v: Array2<Complex64>,
    pub sigma: Vec<f64>,
    pub a: Array2<Complex64>,
}

/// Samples trial number `trial` of the ensemble. U and V come from disjoint
/// substreams so the draw is reproducible per (seed, trial).
pub fn assemble(spec: &EnsembleSpec, trial: usize) -> Result<Assembled> {
    let n = spec.n;
    let sigma = spec.sigma_diag()?;
    let a = spec.a_matrix()?;
    let mut rng_u = substream(spec.seed, trial as u64, Role::HaarU);
    let mut rng_v = substream(spec.seed, trial as u64, Role::HaarV);
    let u = haar_unitary(n, &mut rng_u)?;
    let v = haar_unitary(n, &mut rng_v)?;
    let mut us = u.clone();
    for (j, &s) in sigma.iter().enumerate() {
        us.column_mut(j).mapv_inplace(|c| c * s);
    }
    let vh = v.t().mapv(|c| c.conj());
    let y = us.dot(&vh) + &a;
    Ok(Assembled { y, u, v, sigma, a })
}

/// Singular values of a complex matrix, sorted descending.
pub fn singular_values(m: ArrayView2<'_, Complex64>) -> Result<Vec<f64>> {
    let (_, sv, _) = m.to_owned().svddc(JobSvd::None)?;
    Ok(sv.to_vec())
}

/// Singular values of Y - lambda, i.e. the nonnegative eigenvalues of the
/// doubled self-adjoint block matrix built from Y - lambda.
pub fn hermitize_svals(y: ArrayView2<'_, Complex64>, lambda: Complex64) -> Result<Vec<f64>> {
    let n = y.nrows();
    if y.ncols() != n {
        return Err(Error::Domain("hermitize_svals needs a square matrix".into()));
    }
    let mut b = y.to_owned();
    for i in 0..n {
        b[(i, i)] -= lambda;
    }
    singular_values(b.view())
}

/// Empirical Cauchy transform of the symmetrized singular-value set at
/// z = i eta. Exactly purely imaginary by construction.
pub fn empirical_cauchy(svals: &[f64], eta: f64) -> Complex64 {
    let n = svals.len().max(1) as f64;
    let mut acc = 0.0;
    for &s in svals {
        acc += 1.0 / (eta * eta + s * s);
    }
    Complex64::new(0.0, -eta * acc / n)
}

/// Cap on dense nonsymmetric eigensolves.
pub const MAX_EIG_DIM: usize = 4096;

/// Eigenvalues of a dense complex matrix (no eigenvectors; LAPACK balances
/// internally).
pub fn eigenvalues(m: ArrayView2<'_, Complex64>) -> Result<Vec<Complex64>> {
    let n = m.nrows();
    if m.ncols() != n {
        return Err(Error::Domain("eigenvalues needs a square matrix".into()));
    }
    if n > MAX_EIG_DIM {
        return Err(Error::Domain(format!(
            "dimension {n} exceeds the dense eigensolve cap {MAX_EIG_DIM}"
        )));
    }
    let vals = m.to_owned().eigvals()?;
    Ok(vals.to_vec())
}

/// Spectral data of one trial: eigenvalues plus per-probe singular values.
#[derive(Clone, Debug)]
pub struct SpectrumSample {
    pub trial: usize,
    pub seed: u64,
    pub eigenvalues: Vec<Complex64>,
    /// (probe point, singular values of Y - probe sorted descending).
    pub probes: Vec<(Complex64, Vec<f64>)>,
}

/// Draws one trial and extracts its spectra. Eigenvalues are checked against
/// the 2M bound implied by the declared norms.
pub fn spectrum_sample(
    spec: &EnsembleSpec,
    trial: usize,
    probes: &[Complex64],
    want_eigenvalues: bool,
) -> Result<SpectrumSample> {
    let asm = assemble(spec, trial)?;
    let eigs = if want_eigenvalues {
        let e = eigenvalues(asm.y.view())?;
        let bound = 2.0 * spec.norm_bound + 1e-9 * (1.0 + spec.norm_bound);
        if let Some(bad) = e.iter().find(|l| l.norm() > bound) {
            return Err(Error::Numeric(format!(
                "eigenvalue {bad} exceeds the norm budget {bound}"
            )));
        }
        e
    } else {
        Vec::new()
    };
    let mut pr = Vec::with_capacity(probes.len());
    for &l in probes {
        pr.push((l, hermitize_svals(asm.y.view(), l)?));
    }
    Ok(SpectrumSample {
        trial,
        seed: spec.seed,
        eigenvalues: eigs,
        probes: pr,
    })
}

/// Empirical tail of the least singular value of Y - probe.
#[derive(Clone, Debug)]
pub struct SminTail {
    pub probe: Complex64,
    /// Ascending thresholds.
    pub thresholds: Vec<f64>,
    /// P(s_min < t_k) over the trials, aligned with `thresholds`.
    pub exceedance: Vec<f64>,
    pub trials: usize,
    /// Smallest s_min seen across all trials.
    pub min_smin: f64,
}

/// Geometric threshold ladder for tail curves.
pub fn geometric_thresholds(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    assert!(lo > 0.0 && hi > lo && count >= 2);
    let step = (hi / lo).powf(1.0 / (count - 1) as f64);
    (0..count).map(|k| lo * step.powi(k as i32)).collect()
}

/// Sweeps the ensemble's trials recording how often s_min(Y - probe) falls
/// below each threshold. The run is rejected unless either Sigma carries a
/// declared invertibility floor or A - probe is itself invertible.
pub fn smin_tail(spec: &EnsembleSpec, probe: Complex64, thresholds: &[f64]) -> Result<SminTail> {
    if spec.inverse_norm_alpha.is_none() {
        let mut shifted = spec.a_matrix()?;
        for i in 0..spec.n {
            shifted[(i, i)] -= probe;
        }
        let s = singular_values(shifted.view())?;
        let smin = s.last().copied().unwrap_or(0.0);
        if smin <= 0.0 {
            return Err(Error::Domain(
                "smin_tail needs an invertibility claim on sigma or an invertible A - probe"
                    .into(),
            ));
        }
    }
    let mut ts = thresholds.to_vec();
    ts.sort_by(|a, b| a.partial_cmp(b).expect("finite thresholds"));
    let mut counts = vec![0usize; ts.len()];
    let mut min_smin = f64::INFINITY;
    for trial in 0..spec.trials {
        let asm = assemble(spec, trial)?;
        let s = hermitize_svals(asm.y.view(), probe)?;
        let smin = s.last().copied().unwrap_or(0.0);
        min_smin = min_smin.min(smin);
        for (k, &t) in ts.iter().enumerate() {
            if smin < t {
                counts[k] += 1;
            }
        }
    }
    let trials = spec.trials;
    let exceedance = counts
        .iter()
        .map(|&c| c as f64 / trials as f64)
        .collect();
    Ok(SminTail {
        probe,
        thresholds: ts,
        exceedance,
        trials,
        min_smin,
    })
}

/// Multiplicativity floor for least singular values:
/// s_min(A1 A2) >= s_min(A1) s_min(A2) up to 1e-12 slack.
pub fn product_smin_property(
    a1: ArrayView2<'_, Complex64>,
    a2: ArrayView2<'_, Complex64>,
) -> Result<bool> {
    let s1 = singular_values(a1)?;
    let s2 = singular_values(a2)?;
    let prod = a1.dot(&a2);
    let sp = singular_values(prod.view())?;
    let lhs = sp.last().copied().unwrap_or(0.0);
    let rhs = s1.last().copied().unwrap_or(0.0) * s2.last().copied().unwrap_or(0.0);
    Ok(lhs >= rhs - 1e-12)
}

/// Monte Carlo estimates of the two approximate subordination functions at
/// z = i eta, with the per-trial spread of the estimates as diagnostics.
#[derive(Clone, Debug)]
pub struct ApproxSubordination {
    pub omega_a: Complex64,
    pub omega_b: Complex64,
    /// Trial-mean empirical Cauchy transform of the doubled matrix.
    pub g_mean: Complex64,
    /// Standard error of the mean of the per-trial real parts.
    pub omega_a_re_se: f64,
    pub omega_b_re_se: f64,
    pub trials: usize,
}

/// Estimates omega_A(z) = z + (E g)^{-1} (1/2n) E Tr[(z-H)^{-1} B-hat] and
/// the analogous omega_B with the A-part block, where H is the doubled
/// self-adjoint matrix of Y - probe, B-hat doubles the U Sigma V* summand,
/// and the Xi-hat block doubles A - probe. Resolvent traces are evaluated
/// through the SVD of Y - probe, which keeps the trace against a doubled
/// block exactly real and g exactly imaginary for every realization.
pub fn approx_subordination(
    spec: &EnsembleSpec,
    probe: Complex64,
    eta: f64,
    trials: usize,
) -> Result<ApproxSubordination> {
    if eta < 1e-12 {
        return Err(Error::Domain(format!(
            "spectral parameter eta = {eta:e} below the 1e-12 resolvent floor"
        )));
    }
    if trials == 0 {
        return Err(Error::Domain("approx_subordination needs trials >= 1".into()));
    }
    let n = spec.n;
    let z = Complex64::new(0.0, eta);
    let mut g_sum = 0.0f64;
    let mut ta_sum = 0.0f64;
    let mut tb_sum = 0.0f64;
    let mut re_a = Vec::with_capacity(trials);
    let mut re_b = Vec::with_capacity(trials);
    for trial in 0..trials {
        let asm = assemble(spec, trial)?;
        let mut m = asm.y.clone();
        for i in 0..n {
            m[(i, i)] -= probe;
        }
        let (p_opt, d, qh_opt) = m.svddc(JobSvd::All)?;
        let p = p_opt.ok_or_else(|| Error::Linalg("svd returned no left vectors".into()))?;
        let qh = qh_opt.ok_or_else(|| Error::Linalg("svd returned no right vectors".into()))?;
        let q = qh.t().mapv(|c| c.conj());
        let b = &asm.y - &asm.a;
        let mut xi = asm.a.clone();
        for i in 0..n {
            xi[(i, i)] -= probe;
        }
        // diag_k(P^H S Q) via one product S Q and a column-dot against P.
        let diag_of = |s: &Array2<Complex64>| -> Vec<Complex64> {
            let w = s.dot(&q);
            (0..n)
                .map(|k| {
                    let mut acc = Complex64::new(0.0, 0.0);
                    for i in 0..n {
                        acc += p[(i, k)].conj() * w[(i, k)];
                    }
                    acc
                })
                .collect()
        };
        let diag_b = diag_of(&b);
        let diag_xi = diag_of(&xi);
        let mut g_t = 0.0;
        let mut ta_t = 0.0;
        let mut tb_t = 0.0;
        for k in 0..n {
            let dk = d[k];
            let denom = eta * eta + dk * dk;
            g_t -= 2.0 * eta / denom;
            ta_t -= dk * 2.0 * diag_b[k].re / denom;
            tb_t -= dk * 2.0 * diag_xi[k].re / denom;
        }
        let scale = 1.0 / (2.0 * n as f64);
        g_t *= scale;
        ta_t *= scale;
        tb_t *= scale;
        g_sum += g_t;
        ta_sum += ta_t;
        tb_sum += tb_t;
        let g_c = Complex64::new(0.0, g_t);
        re_a.push((z + Complex64::new(ta_t, 0.0) / g_c).re);
        re_b.push((z + Complex64::new(tb_t, 0.0) / g_c).re);
    }
    let tf = trials as f64;
    let g_mean = Complex64::new(0.0, g_sum / tf);
    let omega_a = z + Complex64::new(ta_sum / tf, 0.0) / g_mean;
    let omega_b = z + Complex64::new(tb_sum / tf, 0.0) / g_mean;
    let se = |xs: &[f64]| -> f64 {
        if xs.len() < 2 {
            return 0.0;
        }
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>()
            / (xs.len() - 1) as f64;
        (var / xs.len() as f64).sqrt()
    };
    Ok(ApproxSubordination {
        omega_a,
        omega_b,
        g_mean,
        omega_a_re_se: se(&re_a),
        omega_b_re_se: se(&re_b),
        trials,
    })
}

/// Nilpotent single shift block: ones on the superdiagonal.
pub fn jordan_matrix(n: usize) -> Result<Array2<Complex64>> {
    if n < 2 {
        return Err(Error::Domain("shift block needs n >= 2".into()));
    }
    let mut m = Array2::<Complex64>::zeros((n, n));
    for i in 0..n - 1 {
        m[(i, i + 1)] = Complex64::new(1.0, 0.0);
    }
    Ok(m)
}

fn tridiagonal_eigenvalues(d: &mut [f64], e: &mut [f64]) -> Result<()> {
    let n = d.len() as i32;
    let mut info: i32 = 0;
    unsafe {
        lapack_sys::dsterf_(&n, d.as_mut_ptr(), e.as_mut_ptr(), &mut info);
    }
    if info != 0 {
        return Err(Error::Linalg(format!(
            "tridiagonal eigenvalue routine failed with info {info}"
        )));
    }
    Ok(())
}

/// Singular values of jordan_matrix(n) - lambda, sorted descending, in
/// O(n^2): the Gram matrix is tridiagonal with diagonal
/// (r^2, r^2+1, ..., r^2+1) and off-diagonal magnitude r = |lambda|, and a
/// diagonal phase change makes it real symmetric.
pub fn jordan_singular_values(n: usize, lambda: Complex64) -> Result<Vec<f64>> {
    if n < 2 {
        return Err(Error::Domain("shift block needs n >= 2".into()));
    }
    let r = lambda.norm();
    let mut d = vec![r * r + 1.0; n];
    d[0] = r * r;
    let mut e = vec![r; n - 1];
    tridiagonal_eigenvalues(&mut d, &mut e)?;
    let mut s: Vec<f64> = d.iter().map(|&x| x.max(0.0).sqrt()).collect();
    s.reverse();
    Ok(s)
}

/// Structured floor on the singular values of the shift block minus lambda:
/// inside the unit disk all but one stay above 1 - |lambda|, outside all of
/// them stay above |lambda| - 1 (1e-10 slack).
pub fn jordan_sv_check(n: usize, lambda: Complex64) -> Result<bool> {
    let s = jordan_singular_values(n, lambda)?;
    let r = lambda.norm();
    let slack = 1e-10;
    if r < 1.0 {
        Ok(s[..n - 1].iter().all(|&v| v >= 1.0 - r - slack))
    } else {
        Ok(s.iter().all(|&v| v >= r - 1.0 - slack))
    }
}

/// Weyl interlacing across a low-rank completion: with k = rank(L - U_ref),
/// checks s_n(L - lambda) >= s_{n+k}(U_ref - lambda) - 1e-10 for all valid n.
/// Rank is decided at 1e-10 of the difference norm; singular values falling
/// in the ambiguous band [1e-12, 1e-8] of the norm abort the decision.
pub fn interlacing_check(
    l: ArrayView2<'_, Complex64>,
    u_ref: ArrayView2<'_, Complex64>,
    lambda: Complex64,
) -> Result<bool> {
    let n = l.nrows();
    if l.ncols() != n || u_ref.nrows() != n || u_ref.ncols() != n {
        return Err(Error::Domain("interlacing_check needs equal square matrices".into()));
    }
    let diff = l.to_owned() - &u_ref;
    let sd = singular_values(diff.view())?;
    let norm = sd.first().copied().unwrap_or(0.0);
    let k = if norm == 0.0 {
        0
    } else {
        for &v in &sd {
            if v >= 1e-12 * norm && v <= 1e-8 * norm {
                return Err(Error::IndeterminateRank(format!(
                    "difference singular value {v:e} sits in the ambiguous band of norm {norm:e}"
                )));
            }
        }
        sd.iter().filter(|&&v| v >= 1e-10 * norm).count()
    };
    let sl = hermitize_svals(l, lambda)?;
    let su = hermitize_svals(u_ref, lambda)?;
    for i in 0..n - k {
        if sl[i] < su[i + k] - 1e-10 {
            return Ok(false);
        }
    }
    Ok(true)
}

/// log |det m| through triangular factorization.
pub fn log_abs_determinant(m: ArrayView2<'_, Complex64>) -> Result<f64> {
    let (_sign, ln) = m.to_owned().sln_det()?;
    Ok(ln)
}

/// Eigenvalues of the doubled self-adjoint block matrix of m (test oracle
/// for the SVD route).
pub fn doubled_matrix_eigenvalues(m: ArrayView2<'_, Complex64>) -> Result<Vec<f64>> {
    let n = m.nrows();
    let mut h = Array2::<Complex64>::zeros((2 * n, 2 * n));
    for i in 0..n {
        for j in 0..n {
            h[(i, n + j)] = m[(i, j)];
            h[(n + j, i)] = m[(i, j)].conj();
        }
    }
    let vals = h.eigvalsh(UPLO::Lower)?;
    Ok(vals.to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::kolmogorov_distance;
    use ndarray::Array2;

    fn max_unitarity_defect(u: &Array2<Complex64>) -> f64 {
        let n = u.nrows();
        let uh = u.t().mapv(|c| c.conj());
        let prod = uh.dot(u);
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((prod[(i, j)] - target).norm());
            }
        }
        worst
    }

    fn gaussian_matrix(n: usize, rng: &mut ChaCha8Rng) -> Array2<Complex64> {
        let mut g = Array2::<Complex64>::zeros((n, n));
        for elt in g.iter_mut() {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            *elt = Complex64::new(re, im);
        }
        g
    }

    #[test]
    fn haar_unit_modulus_at_dimension_one() {
        let mut rng = substream(7, 0, Role::HaarU);
        let u = haar_unitary(1, &mut rng).unwrap();
        assert!((u[(0, 0)].norm() - 1.0).abs() <= 1e-14);
    }

    #[test]
    fn haar_matrices_are_unitary() {
        for (i, n) in [1usize, 2, 50].into_iter().enumerate() {
            let mut rng = substream(11, i as u64, Role::HaarU);
            let u = haar_unitary(n, &mut rng).unwrap();
            assert!(max_unitarity_defect(&u) <= 1e-12, "defect at n = {n}");
        }
    }

    #[test]
    fn haar_corner_phase_is_uniform() {
        let trials = 10_000;
        let mut args = Vec::with_capacity(trials);
        for t in 0..trials {
            let mut rng = substream(9, t as u64, Role::HaarU);
            let u = haar_unitary(2, &mut rng).unwrap();
            args.push(u[(0, 0)].arg());
        }
        args.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n = trials as f64;
        let mut ks = 0.0f64;
        for (i, &x) in args.iter().enumerate() {
            let f = (x + std::f64::consts::PI) / (2.0 * std::f64::consts::PI);
            ks = ks.max((f - i as f64 / n).abs());
            ks = ks.max(((i + 1) as f64 / n - f).abs());
        }
        assert!(ks < 0.02, "phase KS statistic {ks}");
    }

    #[test]
    fn haar_law_is_left_invariant() {
        let n = 8;
        let trials = 10_000;
        let w = haar_unitary(n, &mut substream(1, 0, Role::HaarW)).unwrap();
        let mut with_w = Vec::with_capacity(trials);
        let mut plain = Vec::with_capacity(trials);
        for t in 0..trials {
            let u = haar_unitary(n, &mut substream(2, t as u64, Role::HaarU)).unwrap();
            with_w.push(w.dot(&u)[(0, 0)].re);
            let u2 = haar_unitary(n, &mut substream(3, t as u64, Role::HaarU)).unwrap();
            plain.push(u2[(0, 0)].re);
        }
        let a = AtomicMeasure::from_samples(&with_w).unwrap();
        let b = AtomicMeasure::from_samples(&plain).unwrap();
        let ks = kolmogorov_distance(&a, &b);
        assert!(ks < 0.03, "left-invariance KS statistic {ks}");
    }

    #[test]
    fn assemble_identity_sigma_gives_unitary_product() {
        let spec = EnsembleSpec {
            n: 40,
            sigma: SigmaSpec::Explicit { values: vec![1.0; 40] },
            a: ASpec::Zero,
            norm_bound: 1.0,
            seed: 5,
            trials: 1,
        inverse_norm_alpha: Some(0.0),
        };
        spec.validate().unwrap();
        let asm = assemble(&spec, 0).unwrap();
        let s = singular_values(asm.y.view()).unwrap();
        for v in s {
            assert!((v - 1.0).abs() <= 1e-12);
        }
        let vh = asm.v.t().mapv(|c| c.conj());
        let direct = asm.u.dot(&vh);
        let worst = asm
            .y
            .iter()
            .zip(direct.iter())
            .fold(0.0f64, |acc, (a, b)| acc.max((a - b).norm()));
        assert!(worst <= 1e-12);
    }

    #[test]
    fn assemble_zero_sigma_returns_deterministic_part_exactly() {
        let spec = EnsembleSpec {
            n: 12,
            sigma: SigmaSpec::Explicit { values: vec![0.0; 12] },
            a: ASpec::HermitianDiag { values: vec![-1.0, 1.0] },
            norm_bound: 1.0,
            seed: 6,
            trials: 1,
            inverse_norm_alpha: None,
        };
        let asm = assemble(&spec, 0).unwrap();
        for (y, a) in asm.y.iter().zip(asm.a.iter()) {
            assert_eq!(y, a);
        }
    }

    #[test]
    fn assemble_is_deterministic_per_seed_and_trial() {
        let spec = EnsembleSpec {
            n: 16,
            sigma: SigmaSpec::TwoLevel { high: 1.0, low: 0.5, fraction: 0.5 },
            a: ASpec::UnitaryPerm,
            norm_bound: 1.0,
            seed: 42,
            trials: 2,
            inverse_norm_alpha: None,
        };
        let a = assemble(&spec, 1).unwrap();
        let b = assemble(&spec, 1).unwrap();
        for (x, y) in a.y.iter().zip(b.y.iter()) {
            assert_eq!(x, y);
        }
        let c = assemble(&spec, 0).unwrap();
        assert!(a.y.iter().zip(c.y.iter()).any(|(x, y)| x != y));
    }

    #[test]
    fn hermitized_singular_values_match_block_eigenvalues() {
        let zero = Array2::<Complex64>::zeros((5, 5));
        let s = hermitize_svals(zero.view(), Complex64::new(1.0, 0.0)).unwrap();
        for v in &s {
            assert!((v - 1.0).abs() <= 1e-14);
        }
        let mut d = Array2::<Complex64>::zeros((2, 2));
        d[(0, 0)] = Complex64::new(2.0, 0.0);
        let s = hermitize_svals(d.view(), Complex64::new(0.0, 0.0)).unwrap();
        assert!((s[0] - 2.0).abs() <= 1e-14 && s[1].abs() <= 1e-14);

        let n = 30;
        let mut rng = substream(13, 0, Role::Probe);
        let y = gaussian_matrix(n, &mut rng);
        let lambda = Complex64::new(0.3, -0.2);
        let sv = hermitize_svals(y.view(), lambda).unwrap();
        let mut b = y.clone();
        for i in 0..n {
            b[(i, i)] -= lambda;
        }
        let eigs = doubled_matrix_eigenvalues(b.view()).unwrap();
        // Ascending eigenvalues come in +-s pairs; the top n are the svals.
        let mut top: Vec<f64> = eigs[n..].to_vec();
        top.reverse();
        let worst = sv
            .iter()
            .zip(top.iter())
            .fold(0.0f64, |acc, (a, b)| acc.max((a - b).abs()));
        assert!(worst <= 1e-10, "cross-check gap {worst}");
    }

    #[test]
    fn empirical_cauchy_matches_closed_forms_and_resolvent_sum() {
        let g = empirical_cauchy(&[1.0, 1.0, 1.0], 1.0);
        assert_eq!(g.re, 0.0);
        assert!((g.im + 0.5).abs() <= 1e-15);
        let g0 = empirical_cauchy(&[0.0], 0.25);
        assert!((g0.im + 4.0).abs() <= 1e-15);

        let svals = [3.0, 1.4, 0.9, 0.2, 0.0];
        let eta = 0.7;
        let z = Complex64::new(0.0, eta);
        let mut oracle = Complex64::new(0.0, 0.0);
        for &s in &svals {
            oracle += (z - s).inv() + (z + s).inv();
        }
        oracle /= 2.0 * svals.len() as f64;
        let fast = empirical_cauchy(&svals, eta);
        assert!((fast - oracle).norm() <= 1e-10);
        assert!(fast.norm() <= 1.0 / eta);
    }

    #[test]
    fn unitary_product_smin_never_drops_below_one() {
        let spec = EnsembleSpec {
            n: 50,
            sigma: SigmaSpec::Explicit { values: vec![1.0; 50] },
            a: ASpec::Zero,
            norm_bound: 1.0,
            seed: 21,
            trials: 20,
            inverse_norm_alpha: Some(0.0),
        };
        let tail = smin_tail(&spec, Complex64::new(0.0, 0.0), &[1e-6, 1e-3, 0.5, 0.99]).unwrap();
        for e in &tail.exceedance {
            assert_eq!(*e, 0.0);
        }
        assert!(tail.min_smin >= 1.0 - 1e-12);
    }

    #[test]
    fn unitary_shift_smin_tail_is_small_at_tiny_thresholds() {
        let spec = EnsembleSpec {
            n: 200,
            sigma: SigmaSpec::Explicit { values: vec![1.0; 200] },
            a: ASpec::Zero,
            norm_bound: 1.0,
            seed: 33,
            trials: 500,
            inverse_norm_alpha: Some(0.0),
        };
        let tail = smin_tail(&spec, Complex64::new(1.0, 0.0), &geometric_thresholds(1e-6, 1e-2, 5))
            .unwrap();
        assert!(tail.exceedance[0] < 0.01, "exceedance {}", tail.exceedance[0]);
        for w in tail.exceedance.windows(2) {
            assert!(w[0] <= w[1], "tail curve must be monotone");
        }
    }

    #[test]
    fn product_of_smallest_singular_values_bounds_product_matrix() {
        let eye = Array2::<Complex64>::eye(4);
        assert!(product_smin_property(eye.view(), eye.view()).unwrap());
        let mut singular = Array2::<Complex64>::zeros((4, 4));
        singular[(0, 0)] = Complex64::new(1.0, 0.0);
        assert!(product_smin_property(singular.view(), eye.view()).unwrap());
        let mut rng = substream(17, 0, Role::Probe);
        for _ in 0..500 {
            let a1 = gaussian_matrix(50, &mut rng);
            let a2 = gaussian_matrix(50, &mut rng);
            assert!(product_smin_property(a1.view(), a2.view()).unwrap());
        }
    }

    #[test]
    fn approximate_subordination_self_consistency_with_identity_sigma() {
        let n = 500;
        let trials = 50;
        let eta = 0.5;
        let spec = EnsembleSpec {
            n,
            sigma: SigmaSpec::Explicit { values: vec![1.0; n] },
            a: ASpec::Zero,
            norm_bound: 1.0,
            seed: 77,
            trials,
            inverse_norm_alpha: Some(0.0),
        };
        let est = approx_subordination(&spec, Complex64::new(0.0, 0.0), eta, trials).unwrap();
        let z = Complex64::new(0.0, eta);
        // A - probe = 0, so the second trace vanishes and omega_b is exactly z.
        assert_eq!(est.omega_b, z);
        assert_eq!(est.omega_a.re, 0.0);
        assert_eq!(est.g_mean.re, 0.0);
        // Symmetrized singular-value law of the unitary product is the +-1
        // pair law with transform z/(z^2 - 1); at omega_b = 0.5i that is -0.4i.
        let target = Complex64::new(0.0, -0.4);
        let budget = 5.0 / (n as f64 * eta.sqrt() * (trials as f64).sqrt());
        let gap = (est.g_mean - target).norm();
        assert!(gap < budget, "self-consistency gap {gap:e} vs budget {budget:e}");
    }

    #[test]
    fn approximate_subordination_far_field_asymptote() {
        let n = 100;
        let spec = EnsembleSpec {
            n,
            sigma: SigmaSpec::TwoLevel { high: 1.0, low: 0.5, fraction: 0.5 },
            a: ASpec::HermitianDiag { values: vec![-1.0, 1.0] },
            norm_bound: 1.0,
            seed: 41,
            trials: 3,
            inverse_norm_alpha: None,
        };
        let eta = 1e3;
        let est = approx_subordination(&spec, Complex64::new(0.4, 0.1), eta, 3).unwrap();
        let z = Complex64::new(0.0, eta);
        let rel = (est.omega_a / z - Complex64::new(1.0, 0.0)).norm();
        assert!(rel <= 1e-4, "far-field relative error {rel:e}");
        assert!(approx_subordination(&spec, Complex64::new(0.0, 0.0), 1e-13, 1).is_err());
    }

    #[test]
    fn jordan_block_singular_value_floors() {
        let s = jordan_singular_values(100, Complex64::new(0.5, 0.0)).unwrap();
        for &v in &s[..99] {
            assert!(v >= 0.5 - 1e-10);
        }
        assert!(jordan_sv_check(100, Complex64::new(0.5, 0.0)).unwrap());

        let s = jordan_singular_values(100, Complex64::new(2.0, 0.0)).unwrap();
        assert!(s[99] >= 1.0 - 1e-10);
        assert!(jordan_sv_check(100, Complex64::new(2.0, 0.0)).unwrap());

        let s = jordan_singular_values(2, Complex64::new(0.0, 0.0)).unwrap();
        assert!((s[0] - 1.0).abs() <= 1e-14 && s[1].abs() <= 1e-14);

        let lambda = Complex64::new(0.37, 0.21);
        let fast = jordan_singular_values(60, lambda).unwrap();
        let j = jordan_matrix(60).unwrap();
        let dense = hermitize_svals(j.view(), lambda).unwrap();
        let worst = fast
            .iter()
            .zip(dense.iter())
            .fold(0.0f64, |acc, (a, b)| acc.max((a - b).abs()));
        assert!(worst <= 1e-10, "tridiagonal vs dense gap {worst}");
    }

    #[test]
    fn low_rank_completions_interlace() {
        let n = 40;
        let l = jordan_matrix(n).unwrap();
        let mut u_ref = l.clone();
        u_ref[(n - 1, 0)] = Complex64::new(1.0, 0.0);
        let lambda = Complex64::new(0.3, 0.4);
        assert!(interlacing_check(l.view(), u_ref.view(), lambda).unwrap());
        assert!(interlacing_check(l.view(), l.view(), lambda).unwrap());

        let mut rng = substream(19, 0, Role::Probe);
        for _ in 0..10 {
            let base = gaussian_matrix(n, &mut rng);
            let mut pert = base.clone();
            for trial_col in 0..2 {
                let u = gaussian_matrix(n, &mut rng);
                let v = gaussian_matrix(n, &mut rng);
                for i in 0..n {
                    for j in 0..n {
                        pert[(i, j)] += u[(i, trial_col)] * v[(j, trial_col)].conj();
                    }
                }
            }
            assert!(interlacing_check(base.view(), pert.view(), Complex64::new(0.1, -0.3)).unwrap());
        }
    }

    #[test]
    fn ambiguous_rank_is_reported_not_guessed() {
        let mut l = Array2::<Complex64>::zeros((2, 2));
        l[(0, 0)] = Complex64::new(1.0, 0.0);
        l[(1, 1)] = Complex64::new(5e-10, 0.0);
        let u_ref = Array2::<Complex64>::zeros((2, 2));
        let err = interlacing_check(l.view(), u_ref.view(), Complex64::new(0.0, 0.0));
        assert!(matches!(err, Err(Error::IndeterminateRank(_))));
    }

    #[test]
    fn log_determinant_matches_singular_value_sum() {
        let n = 50;
        let mut rng = substream(23, 0, Role::Probe);
        let y = gaussian_matrix(n, &mut rng);
        let s = singular_values(y.view()).unwrap();
        let lhs = s.iter().map(|v| v.ln()).sum::<f64>() / n as f64;
        let rhs = log_abs_determinant(y.view()).unwrap() / n as f64;
        assert!((lhs - rhs).abs() <= 1e-8, "gap {}", (lhs - rhs).abs());
    }

    #[test]
    fn eigenvalues_stay_inside_norm_budget() {
        let spec = EnsembleSpec {
            n: 80,
            sigma: SigmaSpec::TwoLevel { high: 1.0, low: 0.5, fraction: 0.5 },
            a: ASpec::HermitianDiag { values: vec![-1.0, 1.0] },
            norm_bound: 1.0,
            seed: 3,
            trials: 1,
            inverse_norm_alpha: None,
        };
        spec.validate().unwrap();
        let sample = spectrum_sample(&spec, 0, &[Complex64::new(0.5, 0.5)], true).unwrap();
        assert_eq!(sample.eigenvalues.len(), 80);
        for l in &sample.eigenvalues {
            assert!(l.norm() <= 2.0 + 1e-6);
        }
        assert_eq!(sample.probes.len(), 1);
        assert_eq!(sample.probes[0].1.len(), 80);
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let bad_sigma = EnsembleSpec {
            n: 4,
            sigma: SigmaSpec::Explicit { values: vec![1.0, 2.0, 1.0, 1.0] },
            a: ASpec::Zero,
            norm_bound: 1.5,
            seed: 0,
            trials: 1,
            inverse_norm_alpha: None,
        };
        assert!(bad_sigma.validate().is_err());
        let bad_claim = EnsembleSpec {
            n: 4,
            sigma: SigmaSpec::TwoLevel { high: 1.0, low: 1e-9, fraction: 0.5 },
            a: ASpec::Zero,
            norm_bound: 1.0,
            seed: 0,
            trials: 1,
            inverse_norm_alpha: Some(2.0),
        };
        assert!(bad_claim.validate().is_err());
        let big_a = EnsembleSpec {
            n: 4,
            sigma: SigmaSpec::Explicit { values: vec![1.0; 4] },
            a: ASpec::HermitianDiag { values: vec![3.0] },
            norm_bound: 1.0,
            seed: 0,
            trials: 1,
            inverse_norm_alpha: None,
        };
        assert!(big_a.validate().is_err());
    }
}
