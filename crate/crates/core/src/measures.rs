//! Atomic probability measures on the real line, symmetric measures stored as
//! half-line data, Cauchy/F transforms, the Levy metric, and logarithmic
//! moments computed by adaptive quadrature on the imaginary axis.

use crate::error::{Error, Result};
use crate::scalar::{Cplx, HalfPlanePoint, Real};
use ndarray::ArrayView2;
use ndarray_linalg::{JobSvd, SVDDC};
use num_complex::Complex;
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Relative gap below which two atom locations are considered identical.
const MERGE_REL_TOL: f64 = 1e-12;
/// Allowed drift of the total mass from 1.
const MASS_TOL: f64 = 1e-12;

/// A finitely supported probability measure: sorted atoms with positive
/// weights summing to 1.
#[derive(Clone, Debug, PartialEq)]
pub struct AtomicMeasure<S: Real> {
    atoms: Vec<(S, S)>,
    cum: Vec<S>,
}

impl<S: Real> AtomicMeasure<S> {
    /// Builds a measure from (location, weight) pairs. Locations closer than
    /// `1e-12 * support_bound` are merged (weight-averaged); weights must be
    /// positive and sum to 1 within `1e-12`.
    pub fn new(pairs: Vec<(S, S)>) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::Measure("no atoms".into()));
        }
        let mut bound = S::zero();
        for &(t, w) in &pairs {
            if !t.is_finite() || !w.is_finite() {
                return Err(Error::Measure("non-finite atom".into()));
            }
            if w <= S::zero() {
                return Err(Error::Measure(format!("non-positive weight {w}")));
            }
            bound = bound.max(t.abs());
        }
        let total: S = pairs.iter().map(|&(_, w)| w).sum();
        if (total - S::one()).abs() > S::of(MASS_TOL) {
            return Err(Error::Measure(format!("weights sum to {total}, not 1")));
        }
        let mut sorted = pairs;
        sorted.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite locations"));
        let tol = S::of(MERGE_REL_TOL) * bound;
        let mut atoms: Vec<(S, S)> = Vec::with_capacity(sorted.len());
        for (t, w) in sorted {
            match atoms.last_mut() {
                Some(last) if t - last.0 <= tol => {
                    let wsum = last.1 + w;
                    last.0 = (last.0 * last.1 + t * w) / wsum;
                    last.1 = wsum;
                }
                _ => atoms.push((t, w)),
            }
        }
        let mut cum = Vec::with_capacity(atoms.len());
        let mut acc = S::zero();
        for &(_, w) in &atoms {
            acc += w;
            cum.push(acc);
        }
        Ok(AtomicMeasure { atoms, cum })
    }

    /// Empirical measure with equal weights on the given values.
    pub fn from_samples(values: &[S]) -> Result<Self> {
        let n = values.len();
        if n == 0 {
            return Err(Error::Measure("no samples".into()));
        }
        let w = S::one() / S::of(n as f64);
        Self::new(values.iter().map(|&t| (t, w)).collect())
    }

    pub fn atoms(&self) -> &[(S, S)] {
        &self.atoms
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Largest |t| over the support.
    pub fn support_bound(&self) -> S {
        self.atoms
            .iter()
            .map(|&(t, _)| t.abs())
            .fold(S::zero(), S::max)
    }

    pub fn min_location(&self) -> S {
        self.atoms[0].0
    }

    pub fn max_location(&self) -> S {
        self.atoms[self.atoms.len() - 1].0
    }

    pub fn is_point_mass(&self) -> bool {
        self.atoms.len() == 1
    }

    /// Mass of atoms with |t| below `tol`.
    pub fn mass_near_zero(&self, tol: S) -> S {
        self.atoms
            .iter()
            .filter(|&&(t, _)| t.abs() <= tol)
            .map(|&(_, w)| w)
            .sum()
    }

    /// Right-continuous distribution function.
    pub fn cdf(&self, x: S) -> S {
        let idx = self.atoms.partition_point(|&(t, _)| t <= x);
        if idx == 0 {
            S::zero()
        } else {
            self.cum[idx - 1]
        }
    }

    /// Smallest atom location t with cdf(t) >= p.
    pub fn quantile(&self, p: S) -> S {
        let idx = self.cum.partition_point(|&c| c < p);
        self.atoms[idx.min(self.atoms.len() - 1)].0
    }

    pub fn moment(&self, k: u32) -> S {
        self.atoms
            .iter()
            .map(|&(t, w)| w * t.powi(k as i32))
            .sum()
    }

    /// Second moment of 1/t; infinite when an atom sits at 0.
    pub fn inverse_second_moment(&self) -> S {
        if self.atoms.iter().any(|&(t, _)| t == S::zero()) {
            return S::infinity();
        }
        self.atoms.iter().map(|&(t, w)| w / (t * t)).sum()
    }

    /// Integral of log|t|; -inf when an atom sits at 0.
    pub fn log_abs_moment(&self) -> S {
        if self.atoms.iter().any(|&(t, _)| t == S::zero()) {
            return S::neg_infinity();
        }
        self.atoms.iter().map(|&(t, w)| w * t.abs().ln()).sum()
    }

    /// G(z) = sum w / (z - t) for z strictly in the upper half plane.
    pub fn cauchy_transform(&self, z: HalfPlanePoint<S>) -> Cplx<S> {
        let z = z.get();
        let mut g = Complex::new(S::zero(), S::zero());
        for &(t, w) in &self.atoms {
            g += Complex::new(w, S::zero()) / (z - Complex::new(t, S::zero()));
        }
        g
    }

    /// Pushforward under t -> |t|.
    pub fn abs(&self) -> Self {
        let pairs = self.atoms.iter().map(|&(t, w)| (t.abs(), w)).collect();
        Self::new(pairs).expect("abs preserves validity")
    }
}

#[derive(Serialize, Deserialize)]
struct AtomsRepr<S> {
    atoms: Vec<(S, S)>,
}

impl<S: Real + Serialize> Serialize for AtomicMeasure<S> {
    fn serialize<Sz: Serializer>(&self, s: Sz) -> std::result::Result<Sz::Ok, Sz::Error> {
        AtomsRepr {
            atoms: self.atoms.clone(),
        }
        .serialize(s)
    }
}

impl<'de, S: Real + Deserialize<'de>> Deserialize<'de> for AtomicMeasure<S> {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let repr = AtomsRepr::<S>::deserialize(d)?;
        AtomicMeasure::new(repr.atoms).map_err(D::Error::custom)
    }
}

/// A symmetric measure on the real line, stored as the mass at zero plus one
/// entry per atom pair {-t, t} with t > 0 carrying the total pair mass.
///
/// Storing half the support keeps Cauchy-transform values at purely imaginary
/// arguments exactly purely imaginary in floating point.
#[derive(Clone, Debug, PartialEq)]
pub struct SymmetricMeasure<S: Real> {
    zero_mass: S,
    pairs: Vec<(S, S)>,
}

impl<S: Real> SymmetricMeasure<S> {
    /// Symmetrization of a measure supported on [0, inf): each atom at t > 0
    /// splits into a pair at -t and t.
    pub fn symmetrize(half: &AtomicMeasure<S>) -> Result<Self> {
        let mut zero_mass = S::zero();
        let mut pairs = Vec::new();
        for &(t, w) in half.atoms() {
            if t < S::zero() {
                return Err(Error::Measure(format!(
                    "symmetrize requires nonnegative support, got {t}"
                )));
            }
            if t == S::zero() {
                zero_mass += w;
            } else {
                pairs.push((t, w));
            }
        }
        Ok(SymmetricMeasure { zero_mass, pairs })
    }

    pub fn mass_at_zero(&self) -> S {
        self.zero_mass
    }

    /// Pairs (t, total pair mass) with t > 0.
    pub fn pairs(&self) -> &[(S, S)] {
        &self.pairs
    }

    pub fn is_point_mass_at_zero(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn support_bound(&self) -> S {
        self.pairs
            .iter()
            .map(|&(t, _)| t)
            .fold(S::zero(), S::max)
    }

    pub fn second_moment(&self) -> S {
        self.pairs.iter().map(|&(t, w)| w * t * t).sum()
    }

    pub fn fourth_moment(&self) -> S {
        self.pairs.iter().map(|&(t, w)| w * t.powi(4)).sum()
    }

    /// Integral of log|t|; -inf as soon as there is mass at zero.
    pub fn log_abs_moment(&self) -> S {
        if self.zero_mass > S::zero() {
            return S::neg_infinity();
        }
        self.pairs.iter().map(|&(t, w)| w * t.ln()).sum()
    }

    /// The full signed-support atomic measure.
    pub fn to_atomic(&self) -> AtomicMeasure<S> {
        let mut pairs = Vec::with_capacity(2 * self.pairs.len() + 1);
        let half = S::of(0.5);
        for &(t, w) in self.pairs.iter().rev() {
            pairs.push((-t, w * half));
        }
        if self.zero_mass > S::zero() {
            pairs.push((S::zero(), self.zero_mass));
        }
        for &(t, w) in &self.pairs {
            pairs.push((t, w * half));
        }
        AtomicMeasure::new(pairs).expect("symmetric data is valid")
    }

    /// G(z) = zero_mass/z + sum w z/(z^2 - t^2); for z = iv the result has an
    /// exactly zero real part in floating point.
    pub fn cauchy(&self, z: Cplx<S>) -> Cplx<S> {
        let z2 = z * z;
        let mut g = Complex::new(self.zero_mass, S::zero()) / z;
        for &(t, w) in &self.pairs {
            g += z.scale(w) / (z2 - Complex::new(t * t, S::zero()));
        }
        g
    }

    /// F(z) = 1/G(z), the reciprocal Cauchy transform.
    pub fn f(&self, z: Cplx<S>) -> Cplx<S> {
        self.cauchy(z).inv()
    }
}

/// A symmetric law usable by the subordination solver: either finitely
/// supported, or the symmetrized distance-to-the-unit-circle law which has a
/// closed-form Cauchy transform.
#[derive(Clone, Debug)]
pub enum SymmetricLaw<S: Real> {
    Atomic(SymmetricMeasure<S>),
    /// Symmetrization of the law of |u - lambda| with u uniform on the unit
    /// circle and radius = |lambda|. Support is [|1-r|, 1+r] (doubled by
    /// symmetry) and G(z) = z / sqrt((z^2-(1+r)^2)(z^2-(1-r)^2)).
    CircleDistance { radius: S },
}

impl<S: Real> SymmetricLaw<S> {
    pub fn from_half(half: &AtomicMeasure<S>) -> Result<Self> {
        Ok(SymmetricLaw::Atomic(SymmetricMeasure::symmetrize(half)?))
    }

    pub fn cauchy(&self, z: Cplx<S>) -> Cplx<S> {
        match self {
            SymmetricLaw::Atomic(m) => m.cauchy(z),
            SymmetricLaw::CircleDistance { radius } => {
                let r = *radius;
                let (p, q) = (S::one() + r, (S::one() - r).abs());
                if z.re == S::zero() {
                    // Exact on the imaginary axis: both quadratic factors are
                    // negative reals, the product is positive.
                    let v2 = z.im * z.im;
                    let d = ((v2 + p * p) * (v2 + q * q)).sqrt();
                    Complex::new(S::zero(), -z.im / d)
                } else {
                    let z2 = z * z;
                    let s = ((z2 - Complex::new(p * p, S::zero()))
                        * (z2 - Complex::new(q * q, S::zero())))
                    .sqrt();
                    let g = z / s;
                    if g.im > S::zero() {
                        -g
                    } else {
                        g
                    }
                }
            }
        }
    }

    pub fn f(&self, z: Cplx<S>) -> Cplx<S> {
        self.cauchy(z).inv()
    }

    pub fn mass_at_zero(&self) -> S {
        match self {
            SymmetricLaw::Atomic(m) => m.mass_at_zero(),
            SymmetricLaw::CircleDistance { .. } => S::zero(),
        }
    }

    pub fn second_moment(&self) -> S {
        match self {
            SymmetricLaw::Atomic(m) => m.second_moment(),
            SymmetricLaw::CircleDistance { radius } => S::one() + *radius * *radius,
        }
    }

    pub fn fourth_moment(&self) -> S {
        match self {
            SymmetricLaw::Atomic(m) => m.fourth_moment(),
            SymmetricLaw::CircleDistance { radius } => {
                let r2 = *radius * *radius;
                (S::one() + r2) * (S::one() + r2) + S::of(2.0) * r2
            }
        }
    }

    pub fn support_bound(&self) -> S {
        match self {
            SymmetricLaw::Atomic(m) => m.support_bound(),
            SymmetricLaw::CircleDistance { radius } => S::one() + *radius,
        }
    }

    /// Integral of 1/t^2; +inf when there is mass at (or arbitrarily near)
    /// zero. For the circle-distance law the closed form is 1/|1 - r^2|.
    pub fn inverse_second_moment(&self) -> S {
        match self {
            SymmetricLaw::Atomic(m) => {
                if m.mass_at_zero() > S::zero() {
                    S::infinity()
                } else {
                    m.pairs().iter().map(|&(t, w)| w / (t * t)).sum()
                }
            }
            SymmetricLaw::CircleDistance { radius } => {
                let d = (S::one() - *radius * *radius).abs();
                if d == S::zero() {
                    S::infinity()
                } else {
                    d.recip()
                }
            }
        }
    }

    pub fn is_point_mass_at_zero(&self) -> bool {
        match self {
            SymmetricLaw::Atomic(m) => m.is_point_mass_at_zero(),
            SymmetricLaw::CircleDistance { .. } => false,
        }
    }
}

/// Quantile discretization of the law of |u - lambda|, u uniform on the unit
/// circle, |lambda| = radius: n atoms at sqrt(1 + r^2 - 2 r cos psi_k) with
/// psi_k the midpoints of a uniform partition of (0, pi).
pub fn circle_distance_quantiles<S: Real>(radius: S, n: usize) -> Result<AtomicMeasure<S>> {
    if n == 0 {
        return Err(Error::Domain("need at least one quantile atom".into()));
    }
    let r = radius;
    let vals: Vec<S> = (0..n)
        .map(|k| {
            let psi = S::PI() * (S::of(k as f64) + S::of(0.5)) / S::of(n as f64);
            (S::one() + r * r - S::of(2.0) * r * psi.cos()).max(S::zero()).sqrt()
        })
        .collect();
    AtomicMeasure::from_samples(&vals)
}

/// Levy distance between two distribution functions, computed by bisection to
/// absolute accuracy 1e-10 (or 64 halvings at f32).
pub fn levy_distance<S: Real>(a: &AtomicMeasure<S>, b: &AtomicMeasure<S>) -> S {
    let feasible = |eps: S| -> bool {
        let ok = |f: &AtomicMeasure<S>, g: &AtomicMeasure<S>| {
            f.atoms()
                .iter()
                .all(|&(t, _)| f.cdf(t) <= g.cdf(t + eps) + eps)
        };
        ok(a, b) && ok(b, a)
    };
    if feasible(S::zero()) {
        return S::zero();
    }
    let (mut lo, mut hi) = (S::zero(), S::one());
    let tol = S::of(1e-10).max(S::epsilon() * S::of(8.0));
    while hi - lo > tol {
        let mid = (lo + hi) * S::of(0.5);
        if feasible(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

/// Kolmogorov (sup-CDF) distance evaluated at the atoms of both measures.
pub fn kolmogorov_distance<S: Real>(a: &AtomicMeasure<S>, b: &AtomicMeasure<S>) -> S {
    let mut d = S::zero();
    for &(t, _) in a.atoms().iter().chain(b.atoms()) {
        d = d.max((a.cdf(t) - b.cdf(t)).abs());
    }
    d
}

/// Law of the singular values of a complex matrix (equal weights).
pub fn singular_value_law(a: ArrayView2<'_, Complex<f64>>) -> Result<AtomicMeasure<f64>> {
    let (_, sv, _) = a.to_owned().svddc(JobSvd::None)?;
    AtomicMeasure::from_samples(sv.as_slice().expect("contiguous"))
}

// ---------------------------------------------------------------------------
// Logarithmic moments via quadrature on the imaginary axis.
// ---------------------------------------------------------------------------

/// Settings for the log-moment quadrature.
#[derive(Clone, Copy, Debug)]
pub struct QuadratureSettings<S: Real> {
    /// Lower end of the eta ladder; [0, eta_min] is covered by a one-term
    /// tail estimate.
    pub eta_min: S,
    /// Upper cutoff for the log|u - i| reconstruction.
    pub lambda_max: S,
    /// Absolute tolerance certified by the adaptive rule.
    pub abs_tol: S,
    /// Maximum bisection depth per decade segment.
    pub max_depth: u32,
    /// Estimated point mass at 0 above which the integral is declared
    /// divergent and the -inf sentinel is returned.
    pub atom_threshold: S,
    /// Running values below this floor are treated as divergent.
    pub floor: S,
}

impl<S: Real> Default for QuadratureSettings<S> {
    fn default() -> Self {
        QuadratureSettings {
            eta_min: S::of(1e-8).max(S::epsilon() * S::of(64.0)),
            lambda_max: S::of(1e3),
            abs_tol: S::of(1e-9).max(S::epsilon() * S::of(100.0)),
            max_depth: 16,
            atom_threshold: S::of(1e-4),
            floor: S::of(-1e3),
        }
    }
}

const GL8_NODES: [f64; 4] = [
    0.18343464249564980494,
    0.52553240991632898582,
    0.79666647741362673959,
    0.96028985649753623168,
];
const GL8_WEIGHTS: [f64; 4] = [
    0.36268378337836198297,
    0.31370664587788728734,
    0.22238103445337447054,
    0.10122853629037625915,
];
const GL16_NODES: [f64; 8] = [
    0.09501250983763744019,
    0.28160355077925891323,
    0.45801677765722738634,
    0.61787624440264374845,
    0.75540440835500303390,
    0.86563120238783174388,
    0.94457502307323257608,
    0.98940093499164993260,
];
const GL16_WEIGHTS: [f64; 8] = [
    0.18945061045506849629,
    0.18260341504492358887,
    0.16915651939500253819,
    0.14959598881657673208,
    0.12462897125553387205,
    0.09515851168249278481,
    0.06225352393864789286,
    0.02715245941175409485,
];

/// One Gauss-Legendre 16/8 pair on [a, b]: returns the GL16 value and the
/// |GL16 - GL8| error estimate.
fn gl_pair<S: Real>(
    f: &mut impl FnMut(S) -> Result<S>,
    a: S,
    b: S,
) -> Result<(S, S)> {
    let c = (a + b) * S::of(0.5);
    let h = (b - a) * S::of(0.5);
    let mut i16 = S::zero();
    for k in 0..8 {
        let x = S::of(GL16_NODES[k]) * h;
        let w = S::of(GL16_WEIGHTS[k]);
        i16 += w * (f(c - x)? + f(c + x)?);
    }
    i16 *= h;
    let mut i8 = S::zero();
    for k in 0..4 {
        let x = S::of(GL8_NODES[k]) * h;
        let w = S::of(GL8_WEIGHTS[k]);
        i8 += w * (f(c - x)? + f(c + x)?);
    }
    i8 *= h;
    Ok((i16, (i16 - i8).abs()))
}

fn adaptive_segment<S: Real>(
    f: &mut impl FnMut(S) -> Result<S>,
    a: S,
    b: S,
    tol: S,
    depth: u32,
) -> Result<(S, S)> {
    let (i, e) = gl_pair(f, a, b)?;
    if e <= tol || depth == 0 {
        return Ok((i, e));
    }
    let mid = (a + b) * S::of(0.5);
    let half_tol = tol * S::of(0.5);
    let (il, el) = adaptive_segment(f, a, mid, half_tol, depth - 1)?;
    let (ir, er) = adaptive_segment(f, mid, b, half_tol, depth - 1)?;
    Ok((il + ir, el + er))
}

/// Integrates f over [lo, hi] splitting into geometric (decade) segments,
/// certifying absolute accuracy `abs_tol`.
fn integrate_geometric<S: Real>(
    f: &mut impl FnMut(S) -> Result<S>,
    lo: S,
    hi: S,
    abs_tol: S,
    max_depth: u32,
) -> Result<S> {
    debug_assert!(lo > S::zero() && hi > lo);
    let ten = S::of(10.0);
    let mut cuts = vec![lo];
    let mut x = lo;
    loop {
        x = x * ten;
        if x >= hi * S::of(1.0 - 1e-12) {
            break;
        }
        cuts.push(x);
    }
    cuts.push(hi);
    let nseg = cuts.len() - 1;
    let tol_seg = abs_tol / S::of(nseg as f64);
    let mut total = S::zero();
    let mut err = S::zero();
    for w in cuts.windows(2) {
        let (i, e) = adaptive_segment(f, w[0], w[1], tol_seg, max_depth)?;
        total += i;
        err += e;
    }
    if err > abs_tol {
        return Err(Error::Quadrature {
            estimate: err.to_f64_lossy(),
            tol: abs_tol.to_f64_lossy(),
        });
    }
    Ok(total)
}

/// Integral of log|u| against a symmetric atomic measure, computed through
/// the imaginary-axis identity
///   int log|u| dmu = int (1/2)log(1 + u^2) dmu + int_0^1 Im G(i eta) d eta
/// with the atom part summed exactly and the eta integral done by adaptive
/// Gauss-Legendre plus a one-term tail below eta_min.
///
/// Returns -inf when the measure has positive mass at 0.
pub fn log_moment<S: Real>(mu: &SymmetricMeasure<S>, q: &QuadratureSettings<S>) -> Result<S> {
    if mu.mass_at_zero() > S::zero() {
        return Ok(S::neg_infinity());
    }
    let exact: S = mu
        .pairs()
        .iter()
        .map(|&(t, w)| w * S::of(0.5) * (S::one() + t * t).ln())
        .sum();
    let mut f = |eta: S| -> Result<S> { Ok(mu.cauchy(Complex::new(S::zero(), eta)).im) };
    let integral = integrate_geometric(&mut f, q.eta_min, S::one(), q.abs_tol, q.max_depth)?;
    let tail = f(q.eta_min)? * q.eta_min;
    Ok(exact + integral + tail)
}

/// Same integral for a measure known only through its Cauchy transform on the
/// imaginary axis. `m2` and `m4` are the second and fourth moments, used to
/// correct the upper cutoff at `lambda_max`:
///   int log|u - i| dmu = int_1^L [Im G(i eta) + 1/eta] d eta
///                        + m2/(2 L^2) - m4/(4 L^4) + O(m6/L^6).
///
/// Returns -inf (divergence sentinel) when the estimated mass at 0,
/// -eta_min * Im G(i eta_min), exceeds `atom_threshold`, or when the running
/// value falls below `floor`.
pub fn log_moment_from_cauchy<S: Real>(
    cauchy_im: &mut impl FnMut(S) -> Result<S>,
    m2: S,
    m4: S,
    q: &QuadratureSettings<S>,
) -> Result<S> {
    let g_min = cauchy_im(q.eta_min)?;
    if -q.eta_min * g_min > q.atom_threshold {
        return Ok(S::neg_infinity());
    }
    let half_tol = q.abs_tol * S::of(0.5);
    let lower = integrate_geometric(cauchy_im, q.eta_min, S::one(), half_tol, q.max_depth)?;
    let tail = g_min * q.eta_min;
    let mut upper_f = |eta: S| -> Result<S> { Ok(cauchy_im(eta)? + eta.recip()) };
    let upper =
        integrate_geometric(&mut upper_f, S::one(), q.lambda_max, half_tol, q.max_depth)?;
    let l2 = q.lambda_max * q.lambda_max;
    let correction = m2 / (S::of(2.0) * l2) - m4 / (S::of(4.0) * l2 * l2);
    let value = lower + tail + upper + correction;
    if !value.is_finite() {
        return Err(Error::Numeric("log moment evaluated to non-finite".into()));
    }
    if value < q.floor {
        return Ok(S::neg_infinity());
    }
    Ok(value)
}
