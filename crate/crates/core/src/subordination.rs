//! Free additive convolution of two symmetric laws via analytic
//! subordination.
//!
//! For laws mu1, mu2 with reciprocal Cauchy transforms F1, F2, the
//! subordination functions omega1, omega2 satisfy
//!   F1(omega1(z)) = F2(omega2(z)),  omega1(z) + omega2(z) = z + F1(omega1(z)),
//! and F of the convolution is F1 o omega1. omega1(z) is found as the fixed
//! point of w -> F2(F1(w) - w + z) - (F1(w) - w + z) + z, a self-map of the
//! upper half plane, using a damped iteration accelerated by secant steps.

use crate::error::{Error, Result};
use crate::measures::SymmetricLaw;
use crate::scalar::{Cplx, Real};
use num_complex::Complex;

/// Stopping and robustness parameters for the fixed-point solver.
#[derive(Clone, Copy, Debug)]
pub struct SolverSettings<S: Real> {
    /// Residual target is `tol * (1 + |z|)` in |F1(omega1) - F2(omega2)|.
    pub tol: S,
    pub max_iter: usize,
}

impl<S: Real> Default for SolverSettings<S> {
    fn default() -> Self {
        SolverSettings {
            tol: S::of(1e-12).max(S::epsilon() * S::of(50.0)),
            max_iter: 100_000,
        }
    }
}

/// Converged subordination data at one point z.
#[derive(Clone, Copy, Debug)]
pub struct SubordinationResult<S: Real> {
    pub omega1: Cplx<S>,
    pub omega2: Cplx<S>,
    /// F1(omega1) = F2(omega2) = F of the convolution at z.
    pub f_value: Cplx<S>,
    pub residual: S,
    pub iterations: usize,
}

impl<S: Real> SubordinationResult<S> {
    /// Cauchy transform of the convolution at z.
    pub fn cauchy(&self) -> Cplx<S> {
        self.f_value.inv()
    }
}

/// Classification of |omega_j(i eta)| as eta -> 0.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BoundaryClass {
    Zero,
    FinitePositive,
    Infinite,
}

#[derive(Clone, Copy, Debug)]
pub struct BoundaryValue<S: Real> {
    pub class: BoundaryClass,
    /// Extrapolated limit: 0, a finite positive value, or +inf.
    pub magnitude: S,
}

/// One warm-started descent of the dyadic ladder: magnitudes of omega1,
/// omega2 and of the convolved Cauchy transform per rung, plus the top-rung
/// omega1 for seeding a neighbouring sweep.
#[derive(Clone, Debug)]
pub struct LadderSweep<S: Real> {
    pub v1: Vec<S>,
    pub v2: Vec<S>,
    pub g_mag: Vec<S>,
    pub first_omega1: Cplx<S>,
}

/// Dyadic ladder exponents: eta_k = 2^-k for k in 10..=26.
pub const LADDER_K_MIN: i32 = 10;
pub const LADDER_K_MAX: i32 = 26;

const DIVERGE_HARD: f64 = 1e6;
const DIVERGE_SOFT: f64 = 1e4;
const RATIO_UP: f64 = 1.5;
const RATIO_DOWN: f64 = 0.95;
const ZERO_EXTRAP: f64 = 1e-6;
/// Mass-ladder decay ratio above which a point is treated as singular
/// (a pure bulk point decays by 0.5 per rung, an atom holds at 1.0, a
/// power-law density singularity sits in between, e.g. 2^(-2/3) ~ 0.63).
const SINGULAR_RATIO: f64 = 0.55;

/// The free additive convolution mu1 ⊞ mu2 of two symmetric laws, evaluated
/// pointwise through the subordination fixed point.
#[derive(Clone, Debug)]
pub struct ConvolvedLaw<S: Real> {
    pub mu1: SymmetricLaw<S>,
    pub mu2: SymmetricLaw<S>,
    pub settings: SolverSettings<S>,
}

impl<S: Real> ConvolvedLaw<S> {
    pub fn new(mu1: SymmetricLaw<S>, mu2: SymmetricLaw<S>) -> Self {
        ConvolvedLaw {
            mu1,
            mu2,
            settings: SolverSettings::default(),
        }
    }

    pub fn second_moment(&self) -> S {
        self.mu1.second_moment() + self.mu2.second_moment()
    }

    /// Fourth moment via additivity of free cumulants:
    /// k4 = m4 - 2 m2^2 per law, m4 = k4_1 + k4_2 + 2 (m2_1 + m2_2)^2.
    pub fn fourth_moment(&self) -> S {
        let (m21, m22) = (self.mu1.second_moment(), self.mu2.second_moment());
        let k41 = self.mu1.fourth_moment() - S::of(2.0) * m21 * m21;
        let k42 = self.mu2.fourth_moment() - S::of(2.0) * m22 * m22;
        let m2 = m21 + m22;
        k41 + k42 + S::of(2.0) * m2 * m2
    }

    /// The support of the convolution is contained in the sum of supports.
    pub fn support_bound(&self) -> S {
        self.mu1.support_bound() + self.mu2.support_bound()
    }

    /// The same convolution with the factor roles exchanged; solving it
    /// iterates in omega2 coordinates, which is numerically necessary when
    /// omega1 is the divergent branch (the subtraction F1(omega1) - omega1
    /// destroys omega2 once |omega1| is large).
    pub fn swapped(&self) -> ConvolvedLaw<S> {
        ConvolvedLaw {
            mu1: self.mu2.clone(),
            mu2: self.mu1.clone(),
            settings: self.settings,
        }
    }

    /// Solves the subordination fixed point at z (Im z > 0). `warm` seeds the
    /// iteration; the residual target is `tol * (1 + |z|) + abs_slack`
    /// (`abs_slack = 0` for the documented contract; ladder callers pass a
    /// scale proportional to |F| to stay within f64 resolution).
    pub fn solve_with_slack(
        &self,
        z: Cplx<S>,
        warm: Option<Cplx<S>>,
        abs_slack: S,
    ) -> Result<SubordinationResult<S>> {
        debug_assert!(z.im > S::zero());
        // A point mass (delta_0 for symmetric laws) is the convolution
        // identity; callers handle it directly instead of solving.
        if self.mu1.is_point_mass_at_zero() || self.mu2.is_point_mass_at_zero() {
            return Err(Error::Domain(
                "point-mass input: free convolution with delta_0 is the identity; \
                 use the other law directly"
                    .into(),
            ));
        }
        let target = self.settings.tol * (S::one() + z.norm()) + abs_slack;
        // On the imaginary axis both omegas are purely imaginary, so the
        // fixed point reduces to a bracketed scalar root and the damped
        // complex iteration (which can crawl sublinearly at near-tangential
        // points deep in the bulk) is never needed.
        if z.re == S::zero() {
            return self.solve_axis(z.im, warm, target);
        }
        // Below roughly 128 eps |F| the residual is quantization noise of the
        // F-evaluations themselves (the deep-ladder divergent branches reach
        // |F| ~ 1e8, where 1e-12 is not representable in the difference).
        // This extra slack applies only once progress has genuinely stalled:
        // early iterates can combine huge |F| with a small residual without
        // being anywhere near the fixed point.
        let resolution = S::epsilon() * S::of(128.0);
        const STALL_WINDOW: usize = 200;
        // One evaluation: given w, compute omega2 = F1(w) - w + z,
        // residual |F1(w) - F2(omega2)|, and the fixed-point step
        // phi(w) - w = F2(omega2) - omega2 + z - w.
        let eval = |w: Cplx<S>| -> (S, Cplx<S>, Cplx<S>, Cplx<S>) {
            let f1 = self.mu1.f(w);
            let omega2 = f1 - w + z;
            let f2 = self.mu2.f(omega2);
            let r = (f1 - f2).norm();
            let step = f2 - omega2 + z - w;
            (r, step, f1, omega2)
        };
        let mut w = warm.unwrap_or(z);
        if !(w.im > S::zero()) {
            w = z;
        }
        let (mut r, mut g, mut f1, mut om2) = eval(w);
        if !r.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite residual at initial iterate for z = {z}"
            )));
        }
        let mut prev: Option<(Cplx<S>, Cplx<S>)> = None;
        let mut theta = S::one();
        let theta_min = S::of(1e-4);
        let mut iterations = 0usize;
        let mut best = r;
        let mut stalled = 0usize;
        while r > target {
            let at_resolution = r <= target + resolution * f1.norm();
            if stalled >= STALL_WINDOW && at_resolution {
                break;
            }
            if iterations >= self.settings.max_iter {
                if at_resolution {
                    break;
                }
                return Err(Error::NonConvergence {
                    residual: r.to_f64_lossy(),
                    iterations,
                });
            }
            iterations += 1;
            // Secant step on g(w) = phi(w) - w, accepted only if it strictly
            // reduces the residual.
            if let Some((wp, gp)) = prev {
                let denom = g - gp;
                if denom.norm() > S::zero() {
                    let ws = w - g * ((w - wp) / denom);
                    if ws.im > S::zero() && ws.re.is_finite() && ws.im.is_finite() {
                        let (rs, gs, f1s, om2s) = eval(ws);
                        if rs < r {
                            prev = Some((w, g));
                            w = ws;
                            r = rs;
                            g = gs;
                            f1 = f1s;
                            om2 = om2s;
                            if r < best * S::of(0.999) {
                                best = r;
                                stalled = 0;
                            } else {
                                stalled += 1;
                            }
                            continue;
                        }
                    }
                }
            }
            // Damped fixed-point step; always taken. The residual is not
            // monotone along the convergent path, so theta reacts to step
            // direction reversals (oscillation) instead: aligned steps
            // restore theta toward 1, reversals halve it.
            if let Some((_, gp)) = prev {
                let align = g.re * gp.re + g.im * gp.im;
                if align < S::zero() {
                    theta = (theta * S::of(0.5)).max(theta_min);
                } else {
                    theta = (theta * S::of(1.25)).min(S::one());
                }
            }
            let wd = w + g.scale(theta);
            let (rd, gd, f1d, om2d) = eval(wd);
            if !rd.is_finite() {
                // Poisoned step (an intermediate F blew up); retry shorter.
                theta = (theta * S::of(0.5)).max(theta_min);
                stalled += 1;
                continue;
            }
            prev = Some((w, g));
            w = wd;
            r = rd;
            g = gd;
            f1 = f1d;
            om2 = om2d;
            if r < best * S::of(0.999) {
                best = r;
                stalled = 0;
            } else {
                stalled += 1;
            }
        }
        Ok(SubordinationResult {
            omega1: w,
            omega2: om2,
            f_value: f1,
            residual: r,
            iterations,
        })
    }

    /// Fixed point at z = i eta. Both laws are symmetric, so both omegas are
    /// purely imaginary and the subordination equation reduces to the scalar
    /// root of
    ///   h(v) = f2(f1(v) - v + eta) - f1(v),   f_j(v) = Im F_j(i v),
    /// which equals the signed residual F2(omega2) - F1(omega1) on the axis.
    /// h has exactly one sign change on (0, inf) (the interior Denjoy-Wolff
    /// point is unique and attracting, so the crossing is strict), h(eta) >= 0
    /// because Im F >= Im z, and h(v) ~ -v for large v, so a safeguarded
    /// regula falsi (Illinois) between the brackets converges unconditionally;
    /// the damped complex iteration can crawl sublinearly here when the bulk
    /// fixed point is nearly tangential.
    fn solve_axis(
        &self,
        eta: S,
        warm: Option<Cplx<S>>,
        target: S,
    ) -> Result<SubordinationResult<S>> {
        // When the iterated branch is the divergent one (v1 huge, v2 ~ eta),
        // v2 = f1(v1) - v1 + eta cancels catastrophically and the residual
        // floor rises to eps |f1| |f2| / v2; iterating the small branch
        // instead removes the cancellation entirely.
        let first = match self.solve_axis_oriented(eta, warm, target) {
            Ok(res) => return Ok(res),
            Err(e) => e,
        };
        match self.swapped().solve_axis_oriented(eta, None, target) {
            Ok(res) => Ok(SubordinationResult {
                omega1: res.omega2,
                omega2: res.omega1,
                f_value: res.f_value,
                residual: res.residual,
                iterations: res.iterations,
            }),
            Err(_) => Err(first),
        }
    }

    fn solve_axis_oriented(
        &self,
        eta: S,
        warm: Option<Cplx<S>>,
        target: S,
    ) -> Result<SubordinationResult<S>> {
        let two = S::of(2.0);
        let resolution = S::epsilon() * S::of(128.0);
        // (h, v2, f1) at the iterate v. A nonpositive or non-finite inner
        // point only arises from catastrophic cancellation far beyond the
        // root (f1(v) - v underflows relative to v), where h is genuinely
        // negative; a large negative sentinel keeps the bracket sound there.
        let eval = |v: S| -> (S, S, S) {
            let f1 = self.mu1.f(Complex::new(S::zero(), v)).im;
            let v2 = f1 - v + eta;
            if !(v2 > S::zero()) || !v2.is_finite() {
                return (-(S::one() + v), v2, f1);
            }
            let h = self.mu2.f(Complex::new(S::zero(), v2)).im - f1;
            if !h.is_finite() {
                return (-(S::one() + v), v2, f1);
            }
            (h, v2, f1)
        };
        let finish = |v: S, h: S, v2: S, f1: S, evals: usize| SubordinationResult {
            omega1: Complex::new(S::zero(), v),
            omega2: Complex::new(S::zero(), v2),
            f_value: Complex::new(S::zero(), f1),
            residual: h.abs(),
            iterations: evals,
        };
        let mut evals = 0usize;
        let mut lo = eta;
        let (h0, v20, f10) = eval(lo);
        evals += 1;
        if h0.abs() <= target {
            return Ok(finish(lo, h0, v20, f10, evals));
        }
        if h0 < S::zero() {
            // Mathematically h(eta) >= 0; a negative value here is rounding
            // noise at a fixed point sitting on the bracket edge.
            if h0.abs() <= target + resolution * f10.abs() {
                return Ok(finish(lo, h0, v20, f10, evals));
            }
            return Err(Error::NonConvergence {
                residual: h0.abs().to_f64_lossy(),
                iterations: evals,
            });
        }
        let mut h_lo = h0;
        let mut hi = S::zero();
        let mut h_hi = S::zero();
        let mut have_hi = false;
        if let Some(w) = warm {
            let vw = w.im;
            if vw > lo && vw.is_finite() {
                let (h, v2, f1) = eval(vw);
                evals += 1;
                if h.abs() <= target {
                    return Ok(finish(vw, h, v2, f1, evals));
                }
                if h > S::zero() {
                    lo = vw;
                    h_lo = h;
                } else {
                    hi = vw;
                    h_hi = h;
                    have_hi = true;
                }
            }
        }
        if !have_hi {
            let mut cand = (lo.max(S::one())) * two;
            for _ in 0..200 {
                let (h, v2, f1) = eval(cand);
                evals += 1;
                if h.abs() <= target {
                    return Ok(finish(cand, h, v2, f1, evals));
                }
                if h < S::zero() {
                    hi = cand;
                    h_hi = h;
                    have_hi = true;
                    break;
                }
                lo = cand;
                h_lo = h;
                cand = cand * two;
            }
            if !have_hi {
                return Err(Error::NonConvergence {
                    residual: h_lo.to_f64_lossy(),
                    iterations: evals,
                });
            }
        }
        let mut best: Option<(S, S, S, S)> = None;
        let mut side = 0i8;
        let cap = self.settings.max_iter.min(4096);
        while evals < cap {
            let denom = h_lo - h_hi;
            let mut v = if denom > S::zero() {
                (lo * (-h_hi) + hi * h_lo) / denom
            } else {
                (lo + hi) * S::of(0.5)
            };
            if !(v > lo && v < hi) {
                v = (lo + hi) * S::of(0.5);
            }
            let (h, v2, f1) = eval(v);
            evals += 1;
            if h.abs() <= target {
                return Ok(finish(v, h, v2, f1, evals));
            }
            if best.map_or(true, |(bh, ..)| h.abs() < bh.abs()) {
                best = Some((h, v, v2, f1));
            }
            if h > S::zero() {
                lo = v;
                h_lo = h;
                if side == 1 {
                    h_hi = h_hi * S::of(0.5);
                }
                side = 1;
            } else {
                hi = v;
                h_hi = h;
                if side == -1 {
                    h_lo = h_lo * S::of(0.5);
                }
                side = -1;
            }
            if hi - lo <= S::epsilon() * two * two * (lo.abs() + hi.abs()) {
                break;
            }
        }
        // Bracket exhausted at f64 resolution: accept the best point if its
        // residual is quantization noise of the F evaluations.
        if let Some((h, v, v2, f1)) = best {
            if h.abs() <= target + resolution * f1.abs() {
                return Ok(finish(v, h, v2, f1, evals));
            }
            return Err(Error::NonConvergence {
                residual: h.abs().to_f64_lossy(),
                iterations: evals,
            });
        }
        Err(Error::NonConvergence {
            residual: h_lo.min(h_hi.abs()).to_f64_lossy(),
            iterations: evals,
        })
    }

    pub fn solve_at(&self, z: Cplx<S>) -> Result<SubordinationResult<S>> {
        self.solve_with_slack(z, None, S::zero())
    }

    pub fn solve_warm(&self, z: Cplx<S>, warm: Cplx<S>) -> Result<SubordinationResult<S>> {
        self.solve_with_slack(z, Some(warm), S::zero())
    }

    /// Cauchy transform of the convolution at z.
    pub fn cauchy_at(&self, z: Cplx<S>) -> Result<Cplx<S>> {
        Ok(self.solve_at(z)?.cauchy())
    }

    /// Walks the dyadic ladder z = i 2^-k, k = 10..=26, warm-starting each
    /// rung from the previous one (the first rung from `seed` when given),
    /// and records |omega1|, |omega2| and |G| along it. Each rung iterates
    /// in the coordinates of whichever branch stayed smaller on the previous
    /// rung, so a divergent branch never enters the cancellation-prone
    /// subtraction.
    pub fn ladder_sweep(&self, seed: Option<Cplx<S>>) -> Result<LadderSweep<S>> {
        let cap = (LADDER_K_MAX - LADDER_K_MIN + 1) as usize;
        let mut sweep = LadderSweep {
            v1: Vec::with_capacity(cap),
            v2: Vec::with_capacity(cap),
            g_mag: Vec::with_capacity(cap),
            first_omega1: Complex::new(S::zero(), S::zero()),
        };
        let rev = self.swapped();
        let mut swap = false;
        let mut warm = seed;
        for k in LADDER_K_MIN..=LADDER_K_MAX {
            let eta = S::of(2.0).powi(-k);
            let z = Complex::new(S::zero(), eta);
            let law = if swap { &rev } else { self };
            // Recovery ladder: a poisoned warm start can drive the iteration
            // into the divergent basin, so drop the seed before flipping the
            // iteration orientation.
            let res = match law.solve_with_slack(z, warm, S::zero()) {
                Ok(res) => res,
                Err(first) => match if warm.is_some() {
                    law.solve_with_slack(z, None, S::zero())
                } else {
                    Err(first)
                } {
                    Ok(res) => res,
                    Err(_) => {
                        swap = !swap;
                        let law = if swap { &rev } else { self };
                        law.solve_with_slack(z, None, S::zero())?
                    }
                },
            };
            let (o1, o2) = if swap {
                (res.omega2, res.omega1)
            } else {
                (res.omega1, res.omega2)
            };
            if k == LADDER_K_MIN {
                sweep.first_omega1 = o1;
            }
            sweep.v1.push(o1.norm());
            sweep.v2.push(o2.norm());
            sweep.g_mag.push(res.cauchy().norm());
            swap = o1.norm() > o2.norm();
            warm = Some(if swap { o2 } else { o1 });
        }
        Ok(sweep)
    }

    /// Classifies the boundary limits |omega_j(i 0+)| for j = 1, 2 from one
    /// shared ladder sweep.
    pub fn boundary_pair(&self) -> Result<(BoundaryValue<S>, BoundaryValue<S>)> {
        let sweep = self.ladder_sweep(None)?;
        Ok((classify_ladder(&sweep.v1)?, classify_ladder(&sweep.v2)?))
    }

    /// Density of the absolutely continuous part at x, via one Richardson
    /// step from eta = 2^-25 to 2^-26 (removes the O(eta) Hilbert-term bias).
    pub fn density_at(&self, x: S) -> Result<S> {
        let eta1 = S::of(2.0).powi(-(LADDER_K_MAX - 1));
        let eta2 = S::of(2.0).powi(-LADDER_K_MAX);
        let r1 = self.solve_with_slack(Complex::new(x, eta1), None, S::zero())?;
        let r2 = self.solve_with_slack(Complex::new(x, eta2), Some(r1.omega1), S::zero())?;
        let d1 = -r1.cauchy().im / S::PI();
        let d2 = -r2.cauchy().im / S::PI();
        Ok(S::of(2.0) * d2 - d1)
    }

    /// True when x lies in the open bulk: no point mass or density blow-up at
    /// x (mass ladder eta |Im G| must decay like a regular point) and the
    /// recovered density lies in (delta, 1/delta).
    pub fn is_bulk(&self, x: S, delta: S) -> Result<bool> {
        if !(delta > S::zero()) || delta >= S::one() {
            return Err(Error::Domain(format!("delta {delta} outside (0, 1)")));
        }
        let mut warm: Option<Cplx<S>> = None;
        let mut masses = Vec::new();
        let mut last = Complex::new(S::zero(), S::zero());
        for k in LADDER_K_MIN..=LADDER_K_MAX {
            let eta = S::of(2.0).powi(-k);
            let res = self.solve_with_slack(Complex::new(x, eta), warm, S::zero())?;
            warm = Some(res.omega1);
            last = res.cauchy();
            masses.push(eta * last.im.abs());
        }
        let n = masses.len();
        let mut ratio_sum = S::zero();
        for k in n - 4..n {
            let denom = masses[k - 1];
            if denom == S::zero() {
                return Ok(false);
            }
            ratio_sum += masses[k] / denom;
        }
        if ratio_sum / S::of(4.0) > S::of(SINGULAR_RATIO) {
            return Ok(false);
        }
        // Richardson pair using the final rung and one solve above it.
        let eta_prev = S::of(2.0).powi(-(LADDER_K_MAX - 1));
        let res_prev = self.solve_with_slack(Complex::new(x, eta_prev), warm, S::zero())?;
        let d_prev = -res_prev.cauchy().im / S::PI();
        let d_last = -last.im / S::PI();
        let d = S::of(2.0) * d_last - d_prev;
        Ok(d > delta && d < delta.recip())
    }
}

/// Extrapolates a ladder of positive magnitudes v_k = v(2^-k) to eta -> 0 and
/// classifies the limit, aware of power-law decay and divergence.
pub fn classify_ladder<S: Real>(vals: &[S]) -> Result<BoundaryValue<S>> {
    let n = vals.len();
    assert!(n >= 6, "ladder too short");
    for &v in vals {
        if !v.is_finite() || v < S::zero() {
            return Err(Error::Numeric(format!("bad ladder value {v}")));
        }
    }
    // Oscillation guard over the last half of the ladder.
    let mut flips = 0;
    for k in n / 2..n - 1 {
        let d1 = vals[k] - vals[k - 1];
        let d2 = vals[k + 1] - vals[k];
        let scale = S::of(1e-9) * (S::one() + vals[k]);
        if d1 * d2 < S::zero() && d1.abs() > scale && d2.abs() > scale {
            flips += 1;
        }
    }
    if flips > 3 {
        return Err(Error::Numeric(
            "boundary ladder oscillates; no stable limit".into(),
        ));
    }
    let last = vals[n - 1];
    let prev = vals[n - 2];
    if last > S::of(DIVERGE_HARD) {
        return Ok(BoundaryValue {
            class: BoundaryClass::Infinite,
            magnitude: S::infinity(),
        });
    }
    let ratios: Vec<S> = (n - 4..n)
        .map(|k| {
            if vals[k - 1] == S::zero() {
                S::one()
            } else {
                vals[k] / vals[k - 1]
            }
        })
        .collect();
    if last > S::of(DIVERGE_SOFT) && ratios.iter().all(|&r| r > S::of(RATIO_UP)) {
        return Ok(BoundaryValue {
            class: BoundaryClass::Infinite,
            magnitude: S::infinity(),
        });
    }
    if ratios.iter().all(|&r| r < S::of(RATIO_DOWN)) {
        // Persistent geometric decay under eta halving: the limit is 0 even
        // if the raw last value is far above any fixed threshold (power laws
        // like eta^(1/3) decay slowly in absolute terms).
        return Ok(BoundaryValue {
            class: BoundaryClass::Zero,
            magnitude: S::zero(),
        });
    }
    let extrap = (S::of(2.0) * last - prev).max(S::zero());
    if extrap < S::of(ZERO_EXTRAP) {
        Ok(BoundaryValue {
            class: BoundaryClass::Zero,
            magnitude: S::zero(),
        })
    } else if extrap > S::of(DIVERGE_HARD) {
        Ok(BoundaryValue {
            class: BoundaryClass::Infinite,
            magnitude: S::infinity(),
        })
    } else {
        Ok(BoundaryValue {
            class: BoundaryClass::FinitePositive,
            magnitude: extrap,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::AtomicMeasure;
    use approx::assert_abs_diff_eq;
    use num_complex::Complex64;

    fn bernoulli(a: f64) -> SymmetricLaw<f64> {
        SymmetricLaw::from_half(&AtomicMeasure::new(vec![(a, 1.0)]).unwrap()).unwrap()
    }

    fn s_case_law() -> SymmetricLaw<f64> {
        // Half-mass at 0 plus a symmetric pair at +-2.
        SymmetricLaw::from_half(&AtomicMeasure::new(vec![(0.0, 0.5), (2.0, 0.5)]).unwrap())
            .unwrap()
    }

    /// Root of z w^2 - (a1^2 - a2^2 + z^2) w + a1^2 z = 0 that satisfies the
    /// subordination equations (picked by residual).
    fn quadratic_omega1(a1: f64, a2: f64, z: Complex64) -> Complex64 {
        let b = Complex64::new(a1 * a1 - a2 * a2, 0.0) + z * z;
        let disc = (b * b - z * z * Complex64::new(4.0 * a1 * a1, 0.0)).sqrt();
        let roots = [(b + disc) / (2.0 * z), (b - disc) / (2.0 * z)];
        let resid = |w: Complex64| -> f64 {
            if w.im <= 0.0 {
                return f64::INFINITY;
            }
            let f1 = w - a1 * a1 / w;
            let om2 = f1 - w + z;
            if om2.im <= 0.0 {
                return f64::INFINITY;
            }
            let f2 = om2 - a2 * a2 / om2;
            (f1 - f2).norm()
        };
        if resid(roots[0]) < resid(roots[1]) {
            roots[0]
        } else {
            roots[1]
        }
    }

    #[test]
    fn golden_ratio_fixed_point() {
        let conv = ConvolvedLaw::new(bernoulli(1.0), bernoulli(1.0));
        let res = conv.solve_at(Complex64::new(0.0, 1.0)).unwrap();
        let expected = (1.0 + 5f64.sqrt()) / 2.0;
        assert_abs_diff_eq!(res.omega1.im, expected, epsilon = 1e-12);
        assert_eq!(res.omega1.re, 0.0);
        assert_abs_diff_eq!(res.omega2.im, expected, epsilon = 1e-12);
    }

    #[test]
    fn bernoulli_convolution_matches_arcsine_cauchy() {
        // G(i eta) = -i / sqrt(eta^2 + 4) for Bernoulli(1) ⊞ Bernoulli(1).
        let conv = ConvolvedLaw::new(bernoulli(1.0), bernoulli(1.0));
        for j in 0..50 {
            let eta = 10f64.powf(-4.0 + 7.0 * (j as f64) / 49.0);
            let g = conv.cauchy_at(Complex64::new(0.0, eta)).unwrap();
            assert_eq!(g.re, 0.0);
            assert_abs_diff_eq!(g.im, -1.0 / (eta * eta + 4.0).sqrt(), epsilon = 1e-10);
        }
    }

    #[test]
    fn asymmetric_pair_matches_quadratic_oracle() {
        let (a1, a2) = (2.0, 0.5);
        let conv = ConvolvedLaw::new(bernoulli(a1), bernoulli(a2));
        for z in [
            Complex64::new(0.3, 0.7),
            Complex64::new(-1.1, 0.05),
            Complex64::new(2.4, 1.3),
            Complex64::new(0.0, 0.001),
        ] {
            let res = conv.solve_at(z).unwrap();
            let oracle = quadratic_omega1(a1, a2, z);
            assert_abs_diff_eq!(res.omega1.re, oracle.re, epsilon = 1e-9);
            assert_abs_diff_eq!(res.omega1.im, oracle.im, epsilon = 1e-9);
            assert!(res.residual <= conv.settings.tol * (1.0 + z.norm()));
            assert!(res.omega1.im >= z.im * (1.0 - 1e-12));
        }
    }

    #[test]
    fn iterates_stay_exactly_imaginary_on_axis() {
        let conv = ConvolvedLaw::new(bernoulli(1.5), s_case_law());
        for k in [10, 18, 26] {
            let z = Complex64::new(0.0, 2f64.powi(-k));
            let res = conv.solve_at(z).unwrap();
            assert_eq!(res.omega1.re, 0.0);
            assert_eq!(res.omega2.re, 0.0);
            assert_eq!(res.cauchy().re, 0.0);
        }
    }

    #[test]
    fn interior_boundary_is_finite_positive() {
        let conv = ConvolvedLaw::new(bernoulli(1.0), bernoulli(1.0));
        let (b1, b2) = conv.boundary_pair().unwrap();
        assert_eq!(b1.class, BoundaryClass::FinitePositive);
        assert_eq!(b2.class, BoundaryClass::FinitePositive);
        // omega(i eta) -> i at eta -> 0 here.
        assert_abs_diff_eq!(b1.magnitude, 1.0, epsilon = 1e-4);
        assert_abs_diff_eq!(b2.magnitude, 1.0, epsilon = 1e-4);
    }

    #[test]
    fn gapped_pair_gives_exactly_one_divergent_branch() {
        // Bernoulli(3) ⊞ Bernoulli(1): omega1 ~ 1.125 i eta -> 0 while
        // omega2 ~ 8 i / eta diverges.
        let conv = ConvolvedLaw::new(bernoulli(3.0), bernoulli(1.0));
        let (b1, b2) = conv.boundary_pair().unwrap();
        assert_eq!(b1.class, BoundaryClass::Zero);
        assert_eq!(b2.class, BoundaryClass::Infinite);
    }

    #[test]
    fn half_atom_pair_sends_both_branches_to_zero() {
        // mu1 = mu2 = delta_0/2 + (delta_{-2} + delta_2)/4: omega ~ i (2
        // eta)^(1/3), far above any naive threshold at the last rung.
        let conv = ConvolvedLaw::new(s_case_law(), s_case_law());
        let (b1, b2) = conv.boundary_pair().unwrap();
        assert_eq!(b1.class, BoundaryClass::Zero);
        assert_eq!(b2.class, BoundaryClass::Zero);
        // Confirm the cube-root law on the final rung.
        let eta = 2f64.powi(-26);
        let res = conv.solve_at(Complex64::new(0.0, eta)).unwrap();
        assert_abs_diff_eq!(res.omega1.im, (2.0 * eta).powf(1.0 / 3.0), epsilon = 1e-4);
        assert!(res.omega1.im > 1e-3);
    }

    #[test]
    fn arcsine_density_values() {
        let conv = ConvolvedLaw::new(bernoulli(1.0), bernoulli(1.0));
        let d0 = conv.density_at(0.0).unwrap();
        assert_abs_diff_eq!(d0, 1.0 / (2.0 * std::f64::consts::PI), epsilon = 1e-8);
        let d1 = conv.density_at(1.0).unwrap();
        assert_abs_diff_eq!(d1, 1.0 / (std::f64::consts::PI * 3f64.sqrt()), epsilon = 1e-7);
    }

    #[test]
    fn second_moment_from_large_eta_matches_free_formula() {
        let conv = ConvolvedLaw::new(bernoulli(2.0), s_case_law());
        let eta = 1e3;
        let g = conv.cauchy_at(Complex64::new(0.0, eta)).unwrap();
        let m2 = eta * eta * (1.0 - eta * g.im.abs());
        assert_abs_diff_eq!(m2, conv.second_moment(), epsilon = 1e-3);
        // Free fourth moment sanity for Bernoulli(1) ⊞ Bernoulli(1):
        // arcsine on [-2, 2] has m4 = 6.
        let arcsine = ConvolvedLaw::new(bernoulli(1.0), bernoulli(1.0));
        assert_abs_diff_eq!(arcsine.fourth_moment(), 6.0, epsilon = 1e-12);
    }

    #[test]
    fn bulk_membership() {
        let arcsine = ConvolvedLaw::new(bernoulli(1.0), bernoulli(1.0));
        assert!(arcsine.is_bulk(0.0, 0.01).unwrap());
        assert!(arcsine.is_bulk(1.9, 0.01).unwrap());
        assert!(!arcsine.is_bulk(2.1, 0.01).unwrap());
        // Divergent density at 0 (x^(-1/3) singularity) is not bulk.
        let s = ConvolvedLaw::new(s_case_law(), s_case_law());
        assert!(!s.is_bulk(0.0, 0.01).unwrap());
        // Spectral gap at 0 is not bulk.
        let gapped = ConvolvedLaw::new(bernoulli(3.0), bernoulli(1.0));
        assert!(!gapped.is_bulk(0.0, 0.01).unwrap());
    }

    #[test]
    fn non_convergence_is_reported() {
        let mut conv = ConvolvedLaw::new(bernoulli(1.0), bernoulli(1.0));
        conv.settings.max_iter = 2;
        let err = conv.solve_at(Complex64::new(0.0, 1e-6)).unwrap_err();
        match err {
            Error::NonConvergence { iterations, .. } => assert_eq!(iterations, 2),
            other => panic!("expected NonConvergence, got {other}"),
        }
    }

    #[test]
    fn warm_start_reduces_iterations() {
        let conv = ConvolvedLaw::new(bernoulli(1.0), bernoulli(0.7));
        let z1 = Complex64::new(0.4, 1e-4);
        let cold = conv.solve_at(z1).unwrap();
        let near = conv
            .solve_warm(Complex64::new(0.4001, 1e-4), cold.omega1)
            .unwrap();
        assert!(near.iterations <= cold.iterations);
    }

    #[test]
    fn point_mass_factor_is_rejected() {
        let delta0 = SymmetricLaw::from_half(&AtomicMeasure::new(vec![(0.0, 1.0)]).unwrap())
            .unwrap();
        let conv = ConvolvedLaw::new(delta0, bernoulli(1.0));
        let err = conv.solve_at(Complex64::new(0.3, 0.5)).unwrap_err();
        assert!(matches!(err, Error::Domain(_)), "got {err:?}");
    }

    #[test]
    fn near_point_mass_factor_gives_near_identity_subordination() {
        // mu2 concentrated at +-1e-9 with a dominant zero atom behaves like
        // the identity for the convolution: omega1(z) stays within 1e-6 of z.
        let half = AtomicMeasure::new(vec![(0.0, 1.0 - 1e-9), (1e-9, 1e-9)]).unwrap();
        let tiny = SymmetricLaw::from_half(&half).unwrap();
        let conv = ConvolvedLaw::new(bernoulli(1.0), tiny);
        for z in [Complex64::new(0.0, 1.0), Complex64::new(0.4, 0.02)] {
            let res = conv.solve_at(z).unwrap();
            assert!((res.omega1 - z).norm() < 1e-6, "omega1 {} vs z {}", res.omega1, z);
        }
    }

    #[test]
    fn ladder_classifier_synthetic_sequences() {
        let etas: Vec<f64> = (LADDER_K_MIN..=LADDER_K_MAX)
            .map(|k| 2f64.powi(-k))
            .collect();
        let zero_power: Vec<f64> = etas.iter().map(|e| e.powf(1.0 / 3.0)).collect();
        assert_eq!(
            classify_ladder(&zero_power).unwrap().class,
            BoundaryClass::Zero
        );
        let finite: Vec<f64> = etas.iter().map(|e| 0.8 + 0.3 * e).collect();
        let b = classify_ladder(&finite).unwrap();
        assert_eq!(b.class, BoundaryClass::FinitePositive);
        assert_abs_diff_eq!(b.magnitude, 0.8, epsilon = 1e-7);
        let diverging: Vec<f64> = etas.iter().map(|e| 0.05 / e).collect();
        assert_eq!(
            classify_ladder(&diverging).unwrap().class,
            BoundaryClass::Infinite
        );
        let osc: Vec<f64> = (0..17)
            .map(|k| if k % 2 == 0 { 1.0 } else { 2.0 })
            .collect();
        assert!(classify_ladder(&osc).is_err());
    }
}
