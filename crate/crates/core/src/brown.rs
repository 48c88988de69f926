//! Brown-measure prediction for y = T + a: T is an R-diagonal operator with
//! singular-value law sigma, a is a deterministic operator. For each probe
//! lambda the symmetrized law of |y - lambda| is the free convolution of the
//! symmetrized law of |a - lambda| with the symmetrization of sigma; the
//! limiting eigenvalue density is (1/2pi) times the Laplacian in lambda of
//! h(lambda) = int log|x| d mu_{|y-lambda|}(x).

use crate::error::{Error, Result};
use crate::measures::{
    circle_distance_quantiles, log_moment_from_cauchy, singular_value_law, AtomicMeasure,
    QuadratureSettings, SymmetricLaw,
};
use crate::subordination::{
    classify_ladder, BoundaryClass, BoundaryValue, ConvolvedLaw, SolverSettings, LADDER_K_MAX,
    LADDER_K_MIN,
};
use ndarray::Array2;
use num_complex::Complex64;
use rayon::prelude::*;

/// Deterministic summand a, described by the data that determines the law of
/// |a - lambda|: a spectral measure for normal parts, or a fixed matrix used
/// as a finite-dimensional surrogate.
#[derive(Clone, Debug)]
pub enum DeterministicPart {
    /// a = 0.
    ScalarZero,
    /// Self-adjoint a with the given real spectral measure.
    Hermitian(AtomicMeasure<f64>),
    /// Haar-distributed unitary; |a - lambda| has the closed-form
    /// distance-to-circle law with radius |lambda|.
    HaarUnitary,
    /// Normal a with finitely many eigenvalues (location, weight).
    Normal(Vec<(Complex64, f64)>),
    /// Fixed square matrix; |a - lambda| is replaced by the empirical
    /// singular-value law of A - lambda I.
    General(Array2<Complex64>),
}

/// The operator model y = T + a. `sigma` is the singular-value law of T; it
/// must have nonnegative support and must not be a point mass at zero.
#[derive(Clone, Debug)]
pub struct OperatorModel {
    sigma: AtomicMeasure<f64>,
    sigma_law: SymmetricLaw<f64>,
    a: DeterministicPart,
    a_bound: f64,
    /// Number of quantile atoms used when a Haar-unitary part must be
    /// discretized (quantile output only; the solver uses the closed form).
    pub haar_points: usize,
    pub solver: SolverSettings<f64>,
    pub quad: QuadratureSettings<f64>,
}

/// L2 norms attached to a probe point: ||a - lambda||, ||(a - lambda)^-1||,
/// ||T||, ||T^-1||, all as square roots of (inverse) second moments; the
/// inverse norms are +inf when the relevant law has mass at zero.
#[derive(Clone, Copy, Debug)]
pub struct L2Data {
    pub norm_a: f64,
    pub inv_norm_a: f64,
    pub norm_t: f64,
    pub inv_norm_t: f64,
}

/// Trichotomy of a probe point.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Region {
    /// Exactly one subordination branch diverges: no limiting mass here.
    Exterior,
    /// Both branches have finite limits, at least one positive.
    Interior,
    /// Both branches vanish: candidate point mass of the limit law.
    Singular,
}

impl Region {
    pub fn as_u8(self) -> u8 {
        match self {
            Region::Exterior => 0,
            Region::Interior => 1,
            Region::Singular => 2,
        }
    }

    pub fn from_u8(v: u8) -> Region {
        match v {
            0 => Region::Exterior,
            1 => Region::Interior,
            _ => Region::Singular,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Region::Exterior => "exterior",
            Region::Interior => "interior",
            Region::Singular => "singular",
        }
    }
}

/// Classification of one probe point: the region, the extrapolated boundary
/// values of both subordination branches, the independent second-moment
/// membership check, and whether the two disagree.
#[derive(Clone, Copy, Debug)]
pub struct RegionLabel {
    pub region: Region,
    pub omega1: BoundaryValue<f64>,
    pub omega2: BoundaryValue<f64>,
    /// Non-strict moment criterion:
    /// ||(a-lambda)^-1|| ||T|| >= 1 and ||a-lambda|| ||T^-1|| >= 1.
    pub in_support_by_moments: bool,
    /// True when the trichotomy and the moment criterion point different
    /// ways (or when both branches diverged, which should not happen).
    pub disagreement: bool,
}

/// Output of one probe evaluation inside a field sweep.
struct NodeEval {
    label: RegionLabel,
    potential: f64,
    seed: Option<Complex64>,
}

const REGION_EXTERIOR: u8 = 0;
const REGION_SINGULAR: u8 = 2;

impl OperatorModel {
    pub fn new(sigma: AtomicMeasure<f64>, a: DeterministicPart) -> Result<Self> {
        if sigma.min_location() < 0.0 {
            return Err(Error::Domain(
                "singular-value law must have nonnegative support".into(),
            ));
        }
        if sigma.is_point_mass() && sigma.min_location() == 0.0 {
            return Err(Error::Domain(
                "sigma = delta_0 means T = 0; drop the random part instead".into(),
            ));
        }
        let a_bound = match &a {
            DeterministicPart::ScalarZero => 0.0,
            DeterministicPart::Hermitian(m) => m.support_bound(),
            DeterministicPart::HaarUnitary => 1.0,
            DeterministicPart::Normal(pts) => {
                if pts.is_empty() {
                    return Err(Error::Domain("normal part needs eigenvalues".into()));
                }
                let mass: f64 = pts.iter().map(|&(_, w)| w).sum();
                if pts.iter().any(|&(c, w)| !c.is_finite() || !(w > 0.0))
                    || (mass - 1.0).abs() > 1e-12
                {
                    return Err(Error::Domain(
                        "normal part needs finite eigenvalues with positive weights summing to 1"
                            .into(),
                    ));
                }
                pts.iter().map(|&(c, _)| c.norm()).fold(0.0, f64::max)
            }
            DeterministicPart::General(m) => {
                if m.nrows() != m.ncols() || m.nrows() == 0 {
                    return Err(Error::Domain("general part must be square".into()));
                }
                singular_value_law(m.view())?.max_location()
            }
        };
        let sigma_law = SymmetricLaw::from_half(&sigma)?;
        Ok(OperatorModel {
            sigma,
            sigma_law,
            a,
            a_bound,
            haar_points: 4096,
            solver: SolverSettings::default(),
            quad: QuadratureSettings::default(),
        })
    }

    pub fn sigma(&self) -> &AtomicMeasure<f64> {
        &self.sigma
    }

    pub fn deterministic_part(&self) -> &DeterministicPart {
        &self.a
    }

    /// Operator-norm bound of the deterministic part.
    pub fn a_bound(&self) -> f64 {
        self.a_bound
    }

    /// Operator-norm bound of the random part.
    pub fn sigma_bound(&self) -> f64 {
        self.sigma.support_bound()
    }

    /// The law of |a - lambda| as an atomic measure (quantile discretization
    /// for the Haar-unitary part).
    pub fn lambda_family(&self, lambda: Complex64) -> Result<AtomicMeasure<f64>> {
        match &self.a {
            DeterministicPart::ScalarZero => AtomicMeasure::new(vec![(lambda.norm(), 1.0)]),
            DeterministicPart::Hermitian(m) => AtomicMeasure::new(
                m.atoms()
                    .iter()
                    .map(|&(x, w)| ((Complex64::new(x, 0.0) - lambda).norm(), w))
                    .collect(),
            ),
            DeterministicPart::HaarUnitary => {
                circle_distance_quantiles(lambda.norm(), self.haar_points)
            }
            DeterministicPart::Normal(pts) => AtomicMeasure::new(
                pts.iter().map(|&(c, w)| ((c - lambda).norm(), w)).collect(),
            ),
            DeterministicPart::General(m) => {
                let mut shifted = m.clone();
                for k in 0..shifted.nrows() {
                    shifted[(k, k)] -= lambda;
                }
                singular_value_law(shifted.view())
            }
        }
    }

    /// The symmetrized law of |a - lambda| in solver form; the Haar-unitary
    /// part keeps its exact closed-form Cauchy transform.
    pub fn family_law(&self, lambda: Complex64) -> Result<SymmetricLaw<f64>> {
        match &self.a {
            DeterministicPart::HaarUnitary => Ok(SymmetricLaw::CircleDistance {
                radius: lambda.norm(),
            }),
            _ => SymmetricLaw::from_half(&self.lambda_family(lambda)?),
        }
    }

    /// Free convolution of the symmetrized lambda-family with the
    /// symmetrization of sigma, carrying the model's solver settings.
    pub fn convolved_at(&self, lambda: Complex64) -> Result<ConvolvedLaw<f64>> {
        Ok(self.convolved_from(self.family_law(lambda)?))
    }

    fn convolved_from(&self, fam: SymmetricLaw<f64>) -> ConvolvedLaw<f64> {
        let mut conv = ConvolvedLaw::new(fam, self.sigma_law.clone());
        conv.settings = self.solver;
        conv
    }

    pub fn l2_data(&self, lambda: Complex64) -> Result<L2Data> {
        let fam = self.family_law(lambda)?;
        Ok(L2Data {
            norm_a: fam.second_moment().sqrt(),
            inv_norm_a: fam.inverse_second_moment().sqrt(),
            norm_t: self.sigma_law.second_moment().sqrt(),
            inv_norm_t: self.sigma_law.inverse_second_moment().sqrt(),
        })
    }

    /// The moment membership criterion, non-strict on both factors.
    pub fn in_support_by_moments(&self, lambda: Complex64) -> Result<bool> {
        let d = self.l2_data(lambda)?;
        Ok(ge_one(d.inv_norm_a, d.norm_t) && ge_one(d.norm_a, d.inv_norm_t))
    }

    pub fn classify(&self, lambda: Complex64) -> Result<RegionLabel> {
        Ok(self.classify_seeded(lambda, None)?.0)
    }

    fn classify_seeded(
        &self,
        lambda: Complex64,
        seed: Option<Complex64>,
    ) -> Result<(RegionLabel, Option<Complex64>)> {
        let fam = self.family_law(lambda)?;
        let (omega1, omega2, next_seed) = if fam.is_point_mass_at_zero() {
            // a = lambda almost surely: the convolution is sigma-tilde itself,
            // omega1(z) = F_sigma(z) and omega2(z) = z.
            let v1: Vec<f64> = (LADDER_K_MIN..=LADDER_K_MAX)
                .map(|k| {
                    let eta = 2f64.powi(-k);
                    self.sigma_law.f(Complex64::new(0.0, eta)).norm()
                })
                .collect();
            let b1 = classify_ladder(&v1)?;
            let b2 = BoundaryValue {
                class: BoundaryClass::Zero,
                magnitude: 0.0,
            };
            (b1, b2, None)
        } else {
            let conv = self.convolved_from(fam);
            let sweep = conv.ladder_sweep(seed)?;
            let b1 = classify_ladder(&sweep.v1)?;
            let b2 = classify_ladder(&sweep.v2)?;
            (b1, b2, Some(sweep.first_omega1))
        };
        let n_inf = [omega1.class, omega2.class]
            .iter()
            .filter(|&&c| c == BoundaryClass::Infinite)
            .count();
        let region = match n_inf {
            0 => {
                if omega1.class == BoundaryClass::Zero && omega2.class == BoundaryClass::Zero {
                    Region::Singular
                } else {
                    Region::Interior
                }
            }
            _ => Region::Exterior,
        };
        let in_moments = self.in_support_by_moments(lambda)?;
        let disagreement = n_inf == 2 || in_moments != (region != Region::Exterior);
        Ok((
            RegionLabel {
                region,
                omega1,
                omega2,
                in_support_by_moments: in_moments,
                disagreement,
            },
            next_seed,
        ))
    }

    /// h(lambda) = int log|x| d mu_{|y - lambda|}(x), computed from the
    /// convolved Cauchy transform on the imaginary axis. Returns -inf when
    /// the convolution carries an atom at zero.
    pub fn log_potential(&self, lambda: Complex64) -> Result<f64> {
        let fam = self.family_law(lambda)?;
        if fam.is_point_mass_at_zero() {
            return Ok(self.sigma_log_moment());
        }
        self.potential_from(&self.convolved_from(fam))
    }

    fn sigma_log_moment(&self) -> f64 {
        match &self.sigma_law {
            SymmetricLaw::Atomic(m) => m.log_abs_moment(),
            SymmetricLaw::CircleDistance { .. } => unreachable!("sigma is atomic"),
        }
    }

    fn potential_from(&self, conv: &ConvolvedLaw<f64>) -> Result<f64> {
        // The cutoff must dominate the support for the tail correction to be
        // in its asymptotic regime; scale it with the convolution's bound.
        let mut q = self.quad;
        q.lambda_max = q.lambda_max.max(50.0 * (conv.support_bound() + 1.0));
        // Iterate in the coordinates of the branch that stayed smaller on the
        // previous evaluation; at exterior points one branch diverges as
        // eta -> 0 and must not be the iteration variable.
        let rev = conv.swapped();
        let mut swap = false;
        let mut warm: Option<Complex64> = None;
        let mut g_im = |eta: f64| -> Result<f64> {
            let z = Complex64::new(0.0, eta);
            let law = if swap { &rev } else { conv };
            // Same recovery ladder as the classification sweep: shed a
            // possibly poisoned warm start before flipping orientation.
            let res = match law.solve_with_slack(z, warm, 0.0) {
                Ok(res) => res,
                Err(first) => match if warm.is_some() {
                    law.solve_with_slack(z, None, 0.0)
                } else {
                    Err(first)
                } {
                    Ok(res) => res,
                    Err(_) => {
                        swap = !swap;
                        let law = if swap { &rev } else { conv };
                        law.solve_with_slack(z, None, 0.0)?
                    }
                },
            };
            let (o1, o2) = if swap {
                (res.omega2, res.omega1)
            } else {
                (res.omega1, res.omega2)
            };
            swap = o1.norm() > o2.norm();
            warm = Some(if swap { o2 } else { o1 });
            Ok(res.cauchy().im)
        };
        log_moment_from_cauchy(
            &mut g_im,
            conv.second_moment(),
            conv.fourth_moment(),
            &q,
        )
    }

    fn node_eval(&self, lambda: Complex64, seed: Option<Complex64>) -> Result<NodeEval> {
        let fam = self.family_law(lambda)?;
        if fam.is_point_mass_at_zero() {
            let (label, _) = self.classify_seeded(lambda, None)?;
            return Ok(NodeEval {
                label,
                potential: self.sigma_log_moment(),
                seed: None,
            });
        }
        let conv = self.convolved_from(fam);
        let sweep = conv.ladder_sweep(seed)?;
        let omega1 = classify_ladder(&sweep.v1)?;
        let omega2 = classify_ladder(&sweep.v2)?;
        let n_inf = [omega1.class, omega2.class]
            .iter()
            .filter(|&&c| c == BoundaryClass::Infinite)
            .count();
        let region = match n_inf {
            0 => {
                if omega1.class == BoundaryClass::Zero && omega2.class == BoundaryClass::Zero {
                    Region::Singular
                } else {
                    Region::Interior
                }
            }
            _ => Region::Exterior,
        };
        let in_moments = self.in_support_by_moments(lambda)?;
        let label = RegionLabel {
            region,
            omega1,
            omega2,
            in_support_by_moments: in_moments,
            disagreement: n_inf == 2 || in_moments != (region != Region::Exterior),
        };
        let potential = self.potential_from(&conv)?;
        Ok(NodeEval {
            label,
            potential,
            seed: Some(sweep.first_omega1),
        })
    }
}

/// x * y >= 1 with inf-aware products (an infinite factor wins; the
/// indeterminate 0 * inf arises only at candidate atoms, which belong to the
/// support closure).
fn ge_one(x: f64, y: f64) -> bool {
    if x.is_infinite() || y.is_infinite() {
        return true;
    }
    x * y >= 1.0
}

/// Square probe grid: n x n nodes covering
/// [center - half_side, center + half_side]^2.
#[derive(Clone, Copy, Debug)]
pub struct GridSpec {
    pub n: usize,
    pub center: Complex64,
    pub half_side: f64,
}

impl GridSpec {
    pub fn square(n: usize, center: Complex64, half_side: f64) -> Result<Self> {
        if n < 5 {
            return Err(Error::Domain("grid needs at least 5 nodes per side".into()));
        }
        if !(half_side > 0.0) || !half_side.is_finite() || !center.is_finite() {
            return Err(Error::Domain("grid extent must be finite and positive".into()));
        }
        Ok(GridSpec {
            n,
            center,
            half_side,
        })
    }

    /// Default field window: 201 x 201 over a square of side
    /// 2 (bound(a) + bound(T)) + 1 centered at the origin, which contains the
    /// support with a half-cell-free margin.
    pub fn default_for(model: &OperatorModel) -> Self {
        GridSpec {
            n: 201,
            center: Complex64::new(0.0, 0.0),
            half_side: model.a_bound() + model.sigma_bound() + 0.5,
        }
    }

    pub fn spacing(&self) -> f64 {
        2.0 * self.half_side / (self.n - 1) as f64
    }

    /// Node at row i (imaginary direction), column j (real direction).
    pub fn node(&self, i: usize, j: usize) -> Complex64 {
        let sp = self.spacing();
        self.center
            + Complex64::new(
                -self.half_side + j as f64 * sp,
                -self.half_side + i as f64 * sp,
            )
    }
}

/// Discretized Brown-measure prediction over a grid: log-potential,
/// 5-point-Laplacian density, region labels, extrapolated subordination
/// boundary magnitudes, and detected point masses. The potential is clamped
/// below at the quadrature floor; density rows/columns touching the grid
/// boundary or a singular node are zeroed, and any mass deficit is assigned
/// to the singular nodes as atoms.
#[derive(Clone, Debug)]
pub struct BrownField {
    pub grid: GridSpec,
    pub potential: Array2<f64>,
    pub density: Array2<f64>,
    pub region: Array2<u8>,
    pub omega1_mag: Array2<f64>,
    pub omega2_mag: Array2<f64>,
    pub atoms: Vec<(Complex64, f64)>,
    pub mass: f64,
}

impl BrownField {
    pub fn node(&self, i: usize, j: usize) -> Complex64 {
        self.grid.node(i, j)
    }

    pub fn region_at(&self, i: usize, j: usize) -> Region {
        Region::from_u8(self.region[(i, j)])
    }

    /// Cell area used to convert density values to mass.
    pub fn cell_area(&self) -> f64 {
        let sp = self.grid.spacing();
        sp * sp
    }

    /// Mass (clamped density plus atoms) carried by nodes satisfying the
    /// predicate.
    pub fn mass_where(&self, mut pred: impl FnMut(Complex64) -> bool) -> f64 {
        let cell = self.cell_area();
        let mut total = 0.0;
        for i in 0..self.grid.n {
            for j in 0..self.grid.n {
                let d = self.density[(i, j)];
                if d > 0.0 && pred(self.node(i, j)) {
                    total += d * cell;
                }
            }
        }
        for &(loc, w) in &self.atoms {
            if pred(loc) {
                total += w;
            }
        }
        total
    }

    /// Nodes where both subordination boundary magnitudes lie in
    /// (eps, 1/eps): the region where the classification is quantitatively
    /// stable.
    pub fn stable_mask(&self, eps: f64) -> Array2<bool> {
        let mut mask = Array2::from_elem(self.region.dim(), false);
        for i in 0..self.grid.n {
            for j in 0..self.grid.n {
                let (m1, m2) = (self.omega1_mag[(i, j)], self.omega2_mag[(i, j)]);
                mask[(i, j)] = m1 > eps && m1 < eps.recip() && m2 > eps && m2 < eps.recip();
            }
        }
        mask
    }

    /// Exterior nodes whose full (2 radius + 1)-square neighbourhood is
    /// exterior and stays inside the grid; on these the density stencil only
    /// sees exterior potential values.
    pub fn exterior_core_mask(&self, radius: usize) -> Array2<bool> {
        let n = self.grid.n;
        let mut mask = Array2::from_elem(self.region.dim(), false);
        for i in radius..n.saturating_sub(radius) {
            for j in radius..n - radius {
                let mut all_ext = true;
                'scan: for di in 0..=2 * radius {
                    for dj in 0..=2 * radius {
                        if self.region[(i + di - radius, j + dj - radius)] != REGION_EXTERIOR {
                            all_ext = false;
                            break 'scan;
                        }
                    }
                }
                mask[(i, j)] = all_ext;
            }
        }
        mask
    }
}

struct RowOut {
    potential: Vec<f64>,
    region: Vec<u8>,
    om1: Vec<f64>,
    om2: Vec<f64>,
}

/// Evaluates the model over the grid: classification ladder and log-potential
/// at every node (rows in parallel, warm-started along each row), then the
/// 5-point Laplacian density, atom detection at singular nodes, and the mass
/// tally.
pub fn brown_field(model: &OperatorModel, grid: &GridSpec) -> Result<BrownField> {
    let n = grid.n;
    let floor = model.quad.floor;
    let rows: Vec<RowOut> = (0..n)
        .into_par_iter()
        .map(|i| -> Result<RowOut> {
            let mut out = RowOut {
                potential: Vec::with_capacity(n),
                region: Vec::with_capacity(n),
                om1: Vec::with_capacity(n),
                om2: Vec::with_capacity(n),
            };
            let mut seed: Option<Complex64> = None;
            for j in 0..n {
                let lambda = grid.node(i, j);
                // A warm start carried along the row can land in the wrong
                // basin near region boundaries; retry the node cold before
                // giving up.
                let ev = model
                    .node_eval(lambda, seed)
                    .or_else(|e| {
                        if seed.is_some() {
                            model.node_eval(lambda, None)
                        } else {
                            Err(e)
                        }
                    })
                    .map_err(|e| {
                        Error::Numeric(format!(
                            "field evaluation failed at node ({:.6}, {:.6}): {e}",
                            lambda.re, lambda.im
                        ))
                    })?;
                if ev.seed.is_some() {
                    seed = ev.seed;
                }
                out.potential.push(ev.potential.max(floor));
                out.region.push(ev.label.region.as_u8());
                out.om1.push(ev.label.omega1.magnitude);
                out.om2.push(ev.label.omega2.magnitude);
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut potential = Array2::zeros((n, n));
    let mut region = Array2::zeros((n, n));
    let mut omega1_mag = Array2::zeros((n, n));
    let mut omega2_mag = Array2::zeros((n, n));
    for (i, row) in rows.into_iter().enumerate() {
        for j in 0..n {
            potential[(i, j)] = row.potential[j];
            region[(i, j)] = row.region[j];
            omega1_mag[(i, j)] = row.om1[j];
            omega2_mag[(i, j)] = row.om2[j];
        }
    }

    let sp = grid.spacing();
    let mut density = Array2::zeros((n, n));
    let two_pi_h2 = 2.0 * std::f64::consts::PI * sp * sp;
    for i in 1..n - 1 {
        for j in 1..n - 1 {
            let stencil_singular = [(i, j), (i - 1, j), (i + 1, j), (i, j - 1), (i, j + 1)]
                .iter()
                .any(|&(a, b)| region[(a, b)] == REGION_SINGULAR);
            if stencil_singular {
                continue;
            }
            let lap = potential[(i - 1, j)]
                + potential[(i + 1, j)]
                + potential[(i, j - 1)]
                + potential[(i, j + 1)]
                - 4.0 * potential[(i, j)];
            density[(i, j)] = lap / two_pi_h2;
        }
    }

    let cell = sp * sp;
    let mut integral = 0.0;
    for &d in density.iter() {
        if d > 0.0 {
            integral += d * cell;
        }
    }

    // Mass not captured by the absolutely continuous part is carried by point
    // masses at singular nodes, split by the theoretical atom weights
    // max(0, m_fam(0) + m_sigma(0) - 1) when those are informative.
    let singular: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| (0..n).map(move |j| (i, j)))
        .filter(|&(i, j)| region[(i, j)] == REGION_SINGULAR)
        .collect();
    let deficit = (1.0 - integral).max(0.0);
    let mut atoms = Vec::new();
    if !singular.is_empty() && deficit > 0.0 {
        let sigma_zero = model.sigma.mass_near_zero(0.0);
        let mut weights = Vec::with_capacity(singular.len());
        for &(i, j) in &singular {
            let fam = model.family_law(grid.node(i, j))?;
            weights.push((fam.mass_at_zero() + sigma_zero - 1.0).max(0.0));
        }
        let wsum: f64 = weights.iter().sum();
        for (k, &(i, j)) in singular.iter().enumerate() {
            let share = if wsum > 0.0 {
                weights[k] / wsum
            } else {
                1.0 / singular.len() as f64
            };
            if share > 0.0 {
                atoms.push((grid.node(i, j), deficit * share));
            }
        }
    }
    let atom_mass: f64 = atoms.iter().map(|&(_, w)| w).sum();

    Ok(BrownField {
        grid: *grid,
        potential,
        density,
        region,
        omega1_mag,
        omega2_mag,
        atoms,
        mass: integral + atom_mass,
    })
}

/// Supremum of the convolved Cauchy transform over the dyadic eta ladder at
/// probe points expected to be exterior. `misclassified` collects indices
/// whose trichotomy label came out non-exterior (their ladder still enters
/// the sup when available).
#[derive(Clone, Debug)]
pub struct ExteriorBound {
    pub sup: f64,
    pub per_node: Vec<f64>,
    pub misclassified: Vec<usize>,
}

pub fn exterior_cauchy_bound(
    model: &OperatorModel,
    nodes: &[Complex64],
) -> Result<ExteriorBound> {
    if nodes.is_empty() {
        return Err(Error::Domain("need at least one probe node".into()));
    }
    let mut per_node = Vec::with_capacity(nodes.len());
    let mut misclassified = Vec::new();
    let mut sup = 0.0f64;
    for (idx, &lam) in nodes.iter().enumerate() {
        let fam = model.family_law(lam)?;
        if fam.is_point_mass_at_zero() {
            misclassified.push(idx);
            per_node.push(f64::INFINITY);
            continue;
        }
        let conv = model.convolved_from(fam);
        let sweep = conv.ladder_sweep(None)?;
        let b1 = classify_ladder(&sweep.v1)?;
        let b2 = classify_ladder(&sweep.v2)?;
        let n_inf = [b1.class, b2.class]
            .iter()
            .filter(|&&c| c == BoundaryClass::Infinite)
            .count();
        if n_inf != 1 {
            misclassified.push(idx);
        }
        let node_sup = sweep.g_mag.iter().copied().fold(0.0, f64::max);
        per_node.push(node_sup);
        sup = sup.max(node_sup);
    }
    Ok(ExteriorBound {
        sup,
        per_node,
        misclassified,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn annulus_model() -> OperatorModel {
        let sigma = AtomicMeasure::new(vec![(0.5, 0.5), (1.0, 0.5)]).unwrap();
        OperatorModel::new(sigma, DeterministicPart::ScalarZero).unwrap()
    }

    fn ring_model() -> OperatorModel {
        let sigma = AtomicMeasure::new(vec![(1.0, 1.0)]).unwrap();
        OperatorModel::new(sigma, DeterministicPart::ScalarZero).unwrap()
    }

    #[test]
    fn model_rejects_degenerate_sigma() {
        let d0 = AtomicMeasure::new(vec![(0.0, 1.0)]).unwrap();
        assert!(OperatorModel::new(d0, DeterministicPart::ScalarZero).is_err());
        let neg = AtomicMeasure::new(vec![(-1.0, 0.5), (1.0, 0.5)]).unwrap();
        assert!(OperatorModel::new(neg, DeterministicPart::ScalarZero).is_err());
    }

    #[test]
    fn l2_data_matches_hand_values() {
        let m = OperatorModel::new(
            AtomicMeasure::new(vec![(1.0, 1.0)]).unwrap(),
            DeterministicPart::ScalarZero,
        )
        .unwrap();
        let d = m.l2_data(Complex64::new(2.0, 0.0)).unwrap();
        assert_abs_diff_eq!(d.norm_a, 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(d.inv_norm_a, 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(d.norm_t, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(d.inv_norm_t, 1.0, epsilon = 1e-15);

        let ann = annulus_model();
        let d = ann.l2_data(Complex64::new(0.0, 0.0)).unwrap();
        assert_abs_diff_eq!(d.norm_t, 0.625f64.sqrt(), epsilon = 1e-15);
        assert_abs_diff_eq!(d.inv_norm_t, 2.5f64.sqrt(), epsilon = 1e-15);
        assert_abs_diff_eq!(d.norm_a, 0.0, epsilon = 1e-15);
        assert!(d.inv_norm_a.is_infinite());

        let haar = OperatorModel::new(
            AtomicMeasure::new(vec![(1.0, 1.0)]).unwrap(),
            DeterministicPart::HaarUnitary,
        )
        .unwrap();
        let d = haar.l2_data(Complex64::new(0.0, 0.0)).unwrap();
        assert_abs_diff_eq!(d.norm_a, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(d.inv_norm_a, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn annulus_classification() {
        // sigma = (delta_1/2 + delta_1)/2, a = 0: support is the annulus
        // 1/sqrt(2.5) <= |lambda| <= sqrt(0.625).
        let m = annulus_model();
        let inner = 2.5f64.sqrt().recip();
        let outer = 0.625f64.sqrt();

        let mid = m.classify(Complex64::new(0.7, 0.0)).unwrap();
        assert_eq!(mid.region, Region::Interior);
        assert!(mid.in_support_by_moments);
        assert!(!mid.disagreement);

        let out = m.classify(Complex64::new(2.0, 0.0)).unwrap();
        assert_eq!(out.region, Region::Exterior);
        assert!(!out.in_support_by_moments);
        assert!(!out.disagreement);

        let hole = m.classify(Complex64::new(0.3, 0.2)).unwrap();
        assert_eq!(hole.region, Region::Exterior);
        assert!(!hole.in_support_by_moments);
        assert!(!hole.disagreement);

        // Radii straddling the boundaries agree with the moment criterion.
        assert!(m
            .in_support_by_moments(Complex64::new(inner + 1e-3, 0.0))
            .unwrap());
        assert!(!m
            .in_support_by_moments(Complex64::new(inner - 1e-3, 0.0))
            .unwrap());
        assert!(m
            .in_support_by_moments(Complex64::new(0.0, outer - 1e-3))
            .unwrap());
        assert!(!m
            .in_support_by_moments(Complex64::new(0.0, outer + 1e-3))
            .unwrap());
    }

    #[test]
    fn haar_sum_classification() {
        // y = u + v with u, v free Haar unitaries: support is |lambda| <= 2.
        let m = OperatorModel::new(
            AtomicMeasure::new(vec![(1.0, 1.0)]).unwrap(),
            DeterministicPart::HaarUnitary,
        )
        .unwrap();
        assert_eq!(
            m.classify(Complex64::new(1.0, 0.0)).unwrap().region,
            Region::Interior
        );
        assert_eq!(
            m.classify(Complex64::new(2.5, 0.0)).unwrap().region,
            Region::Exterior
        );
        assert_eq!(
            m.classify(Complex64::new(0.0, 0.0)).unwrap().region,
            Region::Interior
        );
    }

    #[test]
    fn ring_potential_matches_circle_law() {
        // sigma = delta_1, a = 0: y is Haar unitary in law, and
        // h(lambda) = log max(|lambda|, 1).
        let m = ring_model();
        let h2 = m.log_potential(Complex64::new(2.0, 0.0)).unwrap();
        assert_abs_diff_eq!(h2, 2f64.ln(), epsilon = 1e-6);
        let h_half = m.log_potential(Complex64::new(0.0, 0.5)).unwrap();
        assert_abs_diff_eq!(h_half, 0.0, epsilon = 1e-6);
        let h0 = m.log_potential(Complex64::new(0.0, 0.0)).unwrap();
        assert_abs_diff_eq!(h0, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn far_field_potential_is_log_lambda() {
        let m = annulus_model();
        let r = 1e4 * (m.a_bound() + m.sigma_bound());
        let h = m.log_potential(Complex64::new(r, 0.0)).unwrap();
        assert_abs_diff_eq!(h, r.ln(), epsilon = 1e-3);
    }

    #[test]
    fn potential_at_singular_point_is_sigma_log_moment() {
        // a = 0, lambda = 0: the convolution is sigma-tilde, whose log moment
        // is (ln(1/2) + ln 1)/2.
        let m = annulus_model();
        let h = m.log_potential(Complex64::new(0.0, 0.0)).unwrap();
        assert_abs_diff_eq!(h, 0.5 * 0.5f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn circle_distance_law_agrees_with_free_convolution_of_pairs() {
        // The distance-to-circle law at radius r equals the free convolution
        // of the two-point laws at r and at 1; compare Cauchy transforms.
        let r = 0.6;
        let pair_r = SymmetricLaw::from_half(&AtomicMeasure::new(vec![(r, 1.0)]).unwrap())
            .unwrap();
        let pair_1 = SymmetricLaw::from_half(&AtomicMeasure::new(vec![(1.0, 1.0)]).unwrap())
            .unwrap();
        let conv = ConvolvedLaw::new(pair_r, pair_1);
        let circ = SymmetricLaw::CircleDistance { radius: r };
        for &eta in &[0.05, 0.3, 1.0, 10.0] {
            let z = Complex64::new(0.0, eta);
            let g1 = conv.solve_at(z).unwrap().cauchy();
            let g2 = circ.cauchy(z);
            assert_abs_diff_eq!(g1.im, g2.im, epsilon = 1e-9);
            assert_abs_diff_eq!(g1.re, 0.0, epsilon = 0.0);
        }
    }

    #[test]
    fn translation_covariance_of_potential() {
        // Shifting a hermitian part and the probe together leaves h fixed.
        let base = AtomicMeasure::new(vec![(-1.0, 0.5), (1.0, 0.5)]).unwrap();
        let shifted = AtomicMeasure::new(vec![(-0.6, 0.5), (1.4, 0.5)]).unwrap();
        let sigma = AtomicMeasure::new(vec![(0.5, 0.5), (1.0, 0.5)]).unwrap();
        let m0 =
            OperatorModel::new(sigma.clone(), DeterministicPart::Hermitian(base)).unwrap();
        let m1 = OperatorModel::new(sigma, DeterministicPart::Hermitian(shifted)).unwrap();
        for &(re, im) in &[(0.3, 0.4), (-0.9, 0.1), (1.5, -0.7)] {
            let lam = Complex64::new(re, im);
            let shift = Complex64::new(0.4, 0.0);
            let h0 = m0.log_potential(lam).unwrap();
            let h1 = m1.log_potential(lam + shift).unwrap();
            assert_abs_diff_eq!(h0, h1, epsilon = 1e-8);
        }
    }

    #[test]
    fn small_field_masses_and_regions() {
        let m = annulus_model();
        let grid = GridSpec::square(41, Complex64::new(0.0, 0.0), 1.2).unwrap();
        let field = brown_field(&m, &grid).unwrap();
        assert!(
            (field.mass - 1.0).abs() < 0.02,
            "total mass {} out of range",
            field.mass
        );
        let inner = 2.5f64.sqrt().recip();
        let outer = 0.625f64.sqrt();
        let sp = grid.spacing();
        let annulus_mass = field.mass_where(|lam| {
            let r = lam.norm();
            r > inner - 2.0 * sp && r < outer + 2.0 * sp
        });
        assert!(
            annulus_mass > 0.95,
            "annulus mass {annulus_mass} too small"
        );
        // Region labels at hand-picked nodes.
        let center = (grid.n - 1) / 2;
        assert_eq!(field.region_at(center, center), Region::Exterior);
        // Node nearest to 0.7 on the real axis.
        let j = ((0.7 + grid.half_side) / sp).round() as usize;
        assert_eq!(field.region_at(center, j), Region::Interior);
        // Subharmonicity of the potential away from the frame.
        let mut min_lap = f64::INFINITY;
        for i in 1..grid.n - 1 {
            for j in 1..grid.n - 1 {
                let lap = field.potential[(i - 1, j)]
                    + field.potential[(i + 1, j)]
                    + field.potential[(i, j - 1)]
                    + field.potential[(i, j + 1)]
                    - 4.0 * field.potential[(i, j)];
                min_lap = min_lap.min(lap);
            }
        }
        // Tolerance reflects quadrature noise amplified by the second difference.
        assert!(min_lap > -1e-4, "discrete Laplacian dips to {min_lap}");
        // Exterior-core nodes carry (numerically) no density.
        let core = field.exterior_core_mask(2);
        let mut worst: f64 = 0.0;
        for i in 0..grid.n {
            for j in 0..grid.n {
                if core[(i, j)] {
                    worst = worst.max(field.density[(i, j)].abs());
                }
            }
        }
        assert!(worst < 3e-3, "exterior density {worst} too large");
    }

    #[test]
    fn zero_atom_sigma_creates_point_mass_at_probe() {
        // sigma = (delta_0 + delta_2)/2, a = 0: mass at 0 of the limit law is
        // max(0, 1/2 + 1 - 1) = 1/2.
        let sigma = AtomicMeasure::new(vec![(0.0, 0.5), (2.0, 0.5)]).unwrap();
        let m = OperatorModel::new(sigma, DeterministicPart::ScalarZero).unwrap();
        let label = m.classify(Complex64::new(0.0, 0.0)).unwrap();
        assert_eq!(label.region, Region::Singular);

        let grid = GridSpec::square(31, Complex64::new(0.0, 0.0), 2.6).unwrap();
        let field = brown_field(&m, &grid).unwrap();
        let atom_total: f64 = field.atoms.iter().map(|&(_, w)| w).sum();
        assert!(
            (atom_total - 0.5).abs() < 0.1,
            "atom mass {atom_total} should be near 1/2"
        );
        assert!((field.mass - 1.0).abs() < 0.05);
        for &(loc, _) in &field.atoms {
            assert!(loc.norm() < 2.0 * grid.spacing());
        }
    }

    #[test]
    fn stable_mask_tracks_boundary_magnitudes() {
        let m = annulus_model();
        let grid = GridSpec::square(21, Complex64::new(0.0, 0.0), 1.2).unwrap();
        let field = brown_field(&m, &grid).unwrap();
        let mask = field.stable_mask(1e-3);
        let mut any_interior = false;
        for i in 0..grid.n {
            for j in 0..grid.n {
                if field.region[(i, j)] == 1 {
                    any_interior = true;
                    assert!(
                        mask[(i, j)],
                        "interior node {:?} outside stable region",
                        field.node(i, j)
                    );
                }
            }
        }
        assert!(any_interior);
    }

    #[test]
    fn exterior_bound_finite_far_out_and_flags_interior() {
        // For sigma = delta_1, a = 0 the support is the unit circle itself:
        // |lambda| = 1 is the only support point of the radial profile.
        let m = ring_model();
        let probes = vec![
            Complex64::new(1.5, 0.0),
            Complex64::new(0.0, 1e3),
            Complex64::new(1.0, 0.0),
        ];
        let out = exterior_cauchy_bound(&m, &probes).unwrap();
        assert_eq!(out.misclassified, vec![2]);
        assert!(out.per_node[0].is_finite() && out.per_node[0] <= 2.0);
        assert!(out.per_node[1] <= 2e-3, "far bound {}", out.per_node[1]);
    }
}
