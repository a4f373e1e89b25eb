//! Confidence regions over transition perturbations and their support functions.
//!
//! A region `U ⊂ ℝⁿ` perturbs a nominal row `p`; the adversary picks
//! `q = p + x`, `x ∈ U`. Four shapes are supported, each optionally intersected
//! with the zero-sum hyperplane `Σx = 0` (on by default):
//!
//! | kind             | set                      |
//! |------------------|--------------------------|
//! | `l2`             | `‖x‖₂ ≤ r`               |
//! | `l1`             | `‖x‖₁ ≤ r`               |
//! | `ellipsoid`      | `xᵀAx ≤ r²`              |
//! | `parallelepiped` | `‖Bx‖₁ ≤ r`              |
//!
//! The ball radius is a radius, not a squared radius: `A = r⁻¹I` in the
//! ellipsoid form corresponds to an `l2` ball of radius `√r`.
//!
//! [`ConfidenceRegion::support`] evaluates the proxy support `σ_Û(v)` in
//! closed form. [`ConfidenceRegion::support_simplex_constrained`] adds the box
//! `0 ≤ p + x ≤ 1`, giving the support of the true uncertainty set.

use std::fmt;

use microlp::{ComparisonOp, OptimizationDirection, Problem};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, check_index, Error, Result};
use crate::linalg::{argmax, argmin, centered, dot, norm2, norm_inf, project_box_hyperplane, project_l1_ball};
use crate::mdp::TabularMdp;
use crate::rng::SimRng;

/// Relative size below which a centred vector is treated as constant.
const KINK_REL: f64 = 1e-13;
const MEMBERSHIP_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegionKind {
    L2,
    L1,
    Ellipsoid,
    Parallelepiped,
}

impl fmt::Display for RegionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RegionKind::L2 => "l2",
            RegionKind::L1 => "l1",
            RegionKind::Ellipsoid => "ellipsoid",
            RegionKind::Parallelepiped => "parallelepiped",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MatrixSpec {
    Rows(Vec<Vec<f64>>),
    RowMajor(Vec<f64>),
}

impl MatrixSpec {
    fn to_matrix(&self) -> Result<DMatrix<f64>> {
        match self {
            MatrixSpec::Rows(rows) => {
                let n = rows.len();
                if n == 0 || rows.iter().any(|r| r.len() != n) {
                    return Err(Error::InvalidRegion("matrix must be square and nonempty".into()));
                }
                Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
            }
            MatrixSpec::RowMajor(flat) => {
                let n = (flat.len() as f64).sqrt().round() as usize;
                if n == 0 || n * n != flat.len() {
                    return Err(Error::InvalidRegion(format!(
                        "row-major matrix of length {} is not square",
                        flat.len()
                    )));
                }
                Ok(DMatrix::from_row_slice(n, n, flat))
            }
        }
    }

    fn from_matrix(m: &DMatrix<f64>) -> Self {
        MatrixSpec::Rows((0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect())
    }
}

/// Declarative region description; the JSON form of a [`ConfidenceRegion`].
///
/// For the matrix kinds `radius` scales the set (default 1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionSpec {
    pub kind: RegionKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matrix: Option<MatrixSpec>,
    #[serde(default = "default_true")]
    pub zero_sum: bool,
}

fn default_true() -> bool {
    true
}

impl RegionSpec {
    pub fn ball(kind: RegionKind, radius: f64) -> Self {
        Self { kind, radius: Some(radius), matrix: None, zero_sum: true }
    }

    /// Same family with a different radius.
    pub fn with_radius(&self, radius: f64) -> Self {
        Self { radius: Some(radius), ..self.clone() }
    }

    pub fn build(&self) -> Result<ConfidenceRegion> {
        ConfidenceRegion::from_spec(self.clone())
    }
}

#[derive(Debug, Clone)]
struct EllipsoidData {
    a: DMatrix<f64>,
    m: DMatrix<f64>,
    m_one: Vec<f64>,
    one_m_one: f64,
    eigenvalues: Vec<f64>,
    eigenvectors: DMatrix<f64>,
}

#[derive(Debug, Clone)]
struct ParallelepipedData {
    b: DMatrix<f64>,
    b_inv: DMatrix<f64>,
    /// `B⁻ᵀ 1`: the zero-sum constraint in `u = Bx` coordinates.
    h: Vec<f64>,
    /// `‖B‖₂²`, the Lipschitz constant of the projection dual.
    lipschitz: f64,
}

#[derive(Debug, Clone)]
enum Shape {
    L2(f64),
    L1(f64),
    Ellipsoid(Box<EllipsoidData>),
    Parallelepiped(Box<ParallelepipedData>),
}

/// A convex, compact, origin-symmetric perturbation set.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "RegionSpec", into = "RegionSpec")]
pub struct ConfidenceRegion {
    shape: Shape,
    zero_sum: bool,
    spec: RegionSpec,
}

impl PartialEq for ConfidenceRegion {
    fn eq(&self, other: &Self) -> bool {
        self.spec == other.spec
    }
}

impl TryFrom<RegionSpec> for ConfidenceRegion {
    type Error = Error;

    fn try_from(spec: RegionSpec) -> Result<Self> {
        ConfidenceRegion::from_spec(spec)
    }
}

impl From<ConfidenceRegion> for RegionSpec {
    fn from(r: ConfidenceRegion) -> Self {
        r.spec
    }
}

/// Support value with a point attaining it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupportResult {
    pub value: f64,
    pub maximizer: Vec<f64>,
}

impl SupportResult {
    fn zero(n: usize) -> Self {
        Self { value: 0.0, maximizer: vec![0.0; n] }
    }
}

impl ConfidenceRegion {
    pub fn l2(radius: f64) -> Result<Self> {
        Self::from_spec(RegionSpec::ball(RegionKind::L2, radius))
    }

    pub fn l1(radius: f64) -> Result<Self> {
        Self::from_spec(RegionSpec::ball(RegionKind::L1, radius))
    }

    /// `{x : xᵀAx ≤ 1}` for symmetric positive definite `A`.
    pub fn ellipsoid(a: &DMatrix<f64>) -> Result<Self> {
        Self::from_spec(RegionSpec {
            kind: RegionKind::Ellipsoid,
            radius: None,
            matrix: Some(MatrixSpec::from_matrix(a)),
            zero_sum: true,
        })
    }

    /// `{x : ‖Bx‖₁ ≤ 1}` for invertible `B`.
    pub fn parallelepiped(b: &DMatrix<f64>) -> Result<Self> {
        Self::from_spec(RegionSpec {
            kind: RegionKind::Parallelepiped,
            radius: None,
            matrix: Some(MatrixSpec::from_matrix(b)),
            zero_sum: true,
        })
    }

    /// The degenerate region `{0}`.
    pub fn zero() -> Self {
        Self::l2(0.0).expect("radius 0 is valid")
    }

    pub fn with_zero_sum(mut self, zero_sum: bool) -> Self {
        self.zero_sum = zero_sum;
        self.spec.zero_sum = zero_sum;
        self
    }

    pub fn from_spec(spec: RegionSpec) -> Result<Self> {
        let radius = spec.radius;
        if let Some(r) = radius {
            if !(r.is_finite() && r >= 0.0) {
                return Err(Error::InvalidRegion(format!("radius {r} must be finite and nonnegative")));
            }
        }
        let shape = match spec.kind {
            RegionKind::L2 | RegionKind::L1 => {
                if spec.matrix.is_some() {
                    return Err(Error::InvalidRegion(format!("{} ball takes no matrix", spec.kind)));
                }
                let r = radius.ok_or_else(|| {
                    Error::InvalidRegion(format!("{} ball needs a radius", spec.kind))
                })?;
                if spec.kind == RegionKind::L2 {
                    Shape::L2(r)
                } else {
                    Shape::L1(r)
                }
            }
            RegionKind::Ellipsoid | RegionKind::Parallelepiped => {
                let m = spec
                    .matrix
                    .as_ref()
                    .ok_or_else(|| Error::InvalidRegion(format!("{} needs a matrix", spec.kind)))?
                    .to_matrix()?;
                if m.iter().any(|x| !x.is_finite()) {
                    return Err(Error::InvalidRegion("matrix has non-finite entries".into()));
                }
                let r = radius.unwrap_or(1.0);
                if r == 0.0 {
                    Shape::L2(0.0)
                } else if spec.kind == RegionKind::Ellipsoid {
                    Shape::Ellipsoid(Box::new(ellipsoid_data(m / (r * r))?))
                } else {
                    Shape::Parallelepiped(Box::new(parallelepiped_data(m / r)?))
                }
            }
        };
        Ok(Self { shape, zero_sum: spec.zero_sum, spec })
    }

    pub fn spec(&self) -> &RegionSpec {
        &self.spec
    }

    pub fn kind(&self) -> RegionKind {
        self.spec.kind
    }

    pub fn zero_sum(&self) -> bool {
        self.zero_sum
    }

    /// Fixed ambient dimension for the matrix shapes; balls accept any.
    pub fn dim(&self) -> Option<usize> {
        match &self.shape {
            Shape::L2(_) | Shape::L1(_) => None,
            Shape::Ellipsoid(e) => Some(e.a.nrows()),
            Shape::Parallelepiped(p) => Some(p.b.nrows()),
        }
    }

    /// True when the region is `{0}`.
    pub fn is_trivial(&self) -> bool {
        matches!(self.shape, Shape::L2(r) | Shape::L1(r) if r == 0.0)
    }

    fn check_len(&self, n: usize) -> Result<()> {
        match self.dim() {
            Some(d) => check_dim(d, n),
            None if n == 0 => Err(Error::InvalidArgument("empty vector".into())),
            None => Ok(()),
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        if self.check_len(x.len()).is_err() {
            return false;
        }
        let mag = norm2(x);
        if self.zero_sum && x.iter().sum::<f64>().abs() > MEMBERSHIP_TOL * (1.0 + mag) {
            return false;
        }
        let (lhs, rhs) = match &self.shape {
            Shape::L2(r) => (mag, *r),
            Shape::L1(r) => (x.iter().map(|v| v.abs()).sum(), *r),
            Shape::Ellipsoid(e) => {
                let xv = DVector::from_column_slice(x);
                ((&e.a * &xv).dot(&xv), 1.0)
            }
            Shape::Parallelepiped(p) => {
                let xv = DVector::from_column_slice(x);
                ((&p.b * xv).iter().map(|v| v.abs()).sum(), 1.0)
            }
        };
        lhs <= rhs + MEMBERSHIP_TOL * (1.0 + rhs)
    }

    /// `σ_Û(v) = sup_{x ∈ Û} xᵀv` with a maximiser.
    ///
    /// When `v` is constant on the zero-sum hyperplane every point is optimal
    /// and the maximiser is `0`. Ties between ℓ1 vertices go to the lowest
    /// coordinate index.
    pub fn support(&self, v: &[f64]) -> Result<SupportResult> {
        self.check_len(v.len())?;
        let n = v.len();
        let zs = self.zero_sum;
        Ok(match &self.shape {
            Shape::L2(r) => {
                let u = if zs { centered(v) } else { v.to_vec() };
                let nu = norm2(&u);
                if *r == 0.0 || nu <= KINK_REL * norm2(v) || nu == 0.0 {
                    SupportResult::zero(n)
                } else {
                    SupportResult { value: r * nu, maximizer: u.iter().map(|x| r * x / nu).collect() }
                }
            }
            Shape::L1(r) => {
                let mut y = vec![0.0; n];
                if zs {
                    let (hi, lo) = (argmax(v), argmin(v));
                    let spread = v[hi] - v[lo];
                    if *r == 0.0 || spread <= KINK_REL * norm_inf(v) || spread == 0.0 {
                        return Ok(SupportResult::zero(n));
                    }
                    y[hi] = r / 2.0;
                    y[lo] = -r / 2.0;
                    SupportResult { value: r / 2.0 * spread, maximizer: y }
                } else {
                    let abs: Vec<f64> = v.iter().map(|x| x.abs()).collect();
                    let k = argmax(&abs);
                    if *r == 0.0 || abs[k] == 0.0 {
                        return Ok(SupportResult::zero(n));
                    }
                    y[k] = r * v[k].signum();
                    SupportResult { value: r * abs[k], maximizer: y }
                }
            }
            Shape::Ellipsoid(e) => {
                let vv = DVector::from_column_slice(v);
                let full = (&e.m * &vv).dot(&vv).max(0.0).sqrt();
                let w = if zs {
                    let lambda = dot(&e.m_one, v) / e.one_m_one;
                    vv.map(|x| x - lambda)
                } else {
                    vv
                };
                let mw = &e.m * &w;
                let sigma = mw.dot(&w).max(0.0).sqrt();
                if sigma <= KINK_REL * full || sigma == 0.0 {
                    SupportResult::zero(n)
                } else {
                    SupportResult {
                        value: sigma,
                        maximizer: mw.iter().map(|x| x / sigma).collect(),
                    }
                }
            }
            Shape::Parallelepiped(p) => parallelepiped_support(p, v, zs),
        })
    }

    /// `sup { (p + x)ᵀv : x ∈ Û, 0 ≤ p + x ≤ 1 }`.
    pub fn support_simplex_constrained(&self, p: &[f64], v: &[f64]) -> Result<f64> {
        Ok(self.support_simplex_constrained_full(p, v)?.value)
    }

    /// As [`Self::support_simplex_constrained`]; the maximiser is the
    /// perturbation `x`, so the adversarial row is `p + x`.
    pub fn support_simplex_constrained_full(&self, p: &[f64], v: &[f64]) -> Result<SupportResult> {
        self.check_len(v.len())?;
        check_dim(v.len(), p.len())?;
        check_distribution(p)?;
        let lower: Vec<f64> = p.iter().map(|&x| -x).collect();
        let upper: Vec<f64> = p.iter().map(|&x| 1.0 - x).collect();
        let zs = self.zero_sum;
        let x = match &self.shape {
            _ if self.is_trivial() => vec![0.0; v.len()],
            Shape::L1(r) => box_transport(v, &lower, &upper, r / 2.0, zs),
            Shape::L2(r) => l2_box(*r, v, &lower, &upper, zs),
            Shape::Ellipsoid(e) => ellipsoid_box(e, v, &lower, &upper, zs),
            Shape::Parallelepiped(d) => parallelepiped_box_lp(d, v, &lower, &upper, zs)?,
        };
        Ok(SupportResult { value: dot(p, v) + dot(&x, v), maximizer: x })
    }

    /// Upper bound on `max_{x ∈ Û} ‖x‖₂`.
    pub fn diameter_bound(&self) -> f64 {
        match &self.shape {
            Shape::L2(r) | Shape::L1(r) => *r,
            Shape::Ellipsoid(e) => 1.0 / e.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min).sqrt(),
            // ‖x‖₂ = ‖B⁻¹u‖₂ ≤ max column norm of B⁻¹ for ‖u‖₁ ≤ 1.
            Shape::Parallelepiped(p) => (0..p.b_inv.ncols())
                .map(|k| p.b_inv.column(k).norm())
                .fold(0.0, f64::max),
        }
    }

    /// Euclidean projection onto the proxy shape, ignoring the hyperplane.
    fn project_shape(&self, y: &[f64]) -> Vec<f64> {
        match &self.shape {
            Shape::L2(r) => {
                let ny = norm2(y);
                if ny <= *r {
                    y.to_vec()
                } else {
                    y.iter().map(|x| x * r / ny).collect()
                }
            }
            Shape::L1(r) => project_l1_ball(y, *r),
            Shape::Ellipsoid(e) => project_ellipsoid(e, y),
            Shape::Parallelepiped(p) => project_parallelepiped(p, y),
        }
    }

    /// Euclidean projection of `y` onto `Û ∩ {lower ≤ x ≤ upper}` by Dykstra's
    /// alternating projections.
    pub(crate) fn project_true(&self, y: &[f64], lower: &[f64], upper: &[f64], tol: f64) -> Vec<f64> {
        const MAX_CYCLES: usize = 100_000;
        let n = y.len();
        let mut x = y.to_vec();
        let mut inc_a = vec![0.0; n];
        let mut inc_b = vec![0.0; n];
        let scale = 1.0 + norm_inf(y);
        for _ in 0..MAX_CYCLES {
            let prev = x.clone();
            let sa: Vec<f64> = x.iter().zip(&inc_a).map(|(a, b)| a + b).collect();
            let pa = self.project_shape(&sa);
            inc_a = sa.iter().zip(&pa).map(|(a, b)| a - b).collect();
            let sb: Vec<f64> = pa.iter().zip(&inc_b).map(|(a, b)| a + b).collect();
            let pb = project_box_hyperplane(&sb, lower, upper, self.zero_sum);
            inc_b = sb.iter().zip(&pb).map(|(a, b)| a - b).collect();
            x = pb;
            let change = x.iter().zip(&prev).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            if change <= tol * scale {
                break;
            }
        }
        // The last step lands in the box; pull back into the shape if the
        // cycle stopped slightly outside it.
        if !self.contains_shape(&x) {
            let s = self.shape_gauge(&x);
            if s > 1.0 {
                x.iter_mut().for_each(|v| *v /= s);
            }
        }
        x
    }

    fn contains_shape(&self, x: &[f64]) -> bool {
        self.shape_gauge(x) <= 1.0
    }

    /// Minkowski gauge of the proxy shape (ignores the hyperplane).
    fn shape_gauge(&self, x: &[f64]) -> f64 {
        match &self.shape {
            Shape::L2(r) => norm2(x) / r,
            Shape::L1(r) => x.iter().map(|v| v.abs()).sum::<f64>() / r,
            Shape::Ellipsoid(e) => {
                let xv = DVector::from_column_slice(x);
                (&e.a * &xv).dot(&xv).max(0.0).sqrt()
            }
            Shape::Parallelepiped(p) => {
                let xv = DVector::from_column_slice(x);
                (&p.b * xv).iter().map(|v| v.abs()).sum()
            }
        }
    }
}

fn ellipsoid_data(a: DMatrix<f64>) -> Result<EllipsoidData> {
    let n = a.nrows();
    let scale = a.amax().max(f64::MIN_POSITIVE);
    if (&a - a.transpose()).amax() > 1e-12 * scale {
        return Err(Error::InvalidRegion("ellipsoid matrix is not symmetric".into()));
    }
    let a = (&a + a.transpose()) * 0.5;
    let chol = a
        .clone()
        .cholesky()
        .ok_or_else(|| Error::InvalidRegion("ellipsoid matrix is not positive definite".into()))?;
    let eig = SymmetricEigen::new(a.clone());
    let min_eig = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(min_eig > 0.0) {
        return Err(Error::InvalidRegion(format!(
            "ellipsoid matrix has minimum eigenvalue {min_eig}"
        )));
    }
    let m = chol.inverse();
    let m = (&m + m.transpose()) * 0.5;
    let m_one: Vec<f64> = (0..n).map(|i| m.row(i).sum()).collect();
    let one_m_one = m_one.iter().sum();
    Ok(EllipsoidData {
        a,
        m,
        m_one,
        one_m_one,
        eigenvalues: eig.eigenvalues.iter().copied().collect(),
        eigenvectors: eig.eigenvectors,
    })
}

fn parallelepiped_data(b: DMatrix<f64>) -> Result<ParallelepipedData> {
    let sv = b.clone().singular_values();
    let (smax, smin) = (sv.max(), sv.min());
    if !(smin > 1e-12 * smax) {
        return Err(Error::InvalidRegion("parallelepiped matrix is singular".into()));
    }
    let b_inv = b
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::InvalidRegion("parallelepiped matrix is singular".into()))?;
    let h: Vec<f64> = (0..b.nrows()).map(|k| b_inv.column(k).sum()).collect();
    Ok(ParallelepipedData { b, b_inv, h, lipschitz: smax * smax })
}

/// LP over `{u : ‖u‖₁ ≤ 1, hᵀu = 0}` by enumerating its vertices: points where
/// an edge of the cross-polytope crosses the hyperplane, plus vertices `±e_i`
/// lying on it.
fn parallelepiped_support(p: &ParallelepipedData, v: &[f64], zero_sum: bool) -> SupportResult {
    let n = v.len();
    let vv = DVector::from_column_slice(v);
    let g: Vec<f64> = (p.b_inv.transpose() * vv).iter().copied().collect();
    let gmax = norm_inf(&g);
    let mut u = vec![0.0; n];
    if gmax == 0.0 {
        return SupportResult::zero(n);
    }
    let mut best = 0.0;
    if !zero_sum {
        let k = argmax(&g.iter().map(|x| x.abs()).collect::<Vec<_>>());
        u[k] = g[k].signum();
        best = g[k].abs();
    } else {
        let h = &p.h;
        let htol = 1e-14 * norm_inf(h);
        let mut arg: Option<(usize, f64, usize, f64)> = None;
        for i in 0..n {
            if h[i].abs() <= htol && g[i].abs() > best {
                best = g[i].abs();
                arg = Some((i, g[i].signum(), i, 0.0));
            }
        }
        for i in 0..n {
            if h[i].abs() <= htol {
                continue;
            }
            for k in (i + 1)..n {
                if h[k].abs() <= htol {
                    continue;
                }
                for si in [1.0, -1.0] {
                    let ai = si * h[i];
                    let sk = -ai.signum() * h[k].signum();
                    let ak = sk * h[k];
                    let t = ai / (ai - ak);
                    let val = (1.0 - t) * si * g[i] + t * sk * g[k];
                    if val > best {
                        best = val;
                        arg = Some((i, (1.0 - t) * si, k, t * sk));
                    }
                }
            }
        }
        if best <= KINK_REL * gmax {
            return SupportResult::zero(n);
        }
        let (i, ui, k, uk) = arg.expect("positive value has a vertex");
        u[i] += ui;
        u[k] += uk;
    }
    let y = &p.b_inv * DVector::from_vec(u);
    SupportResult { value: best, maximizer: y.iter().copied().collect() }
}

fn check_distribution(p: &[f64]) -> Result<()> {
    if p.iter().any(|&x| !(-1e-12..=1.0 + 1e-12).contains(&x)) {
        return Err(Error::InvalidArgument("nominal row has entries outside [0, 1]".into()));
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!("nominal row sums to {s}")));
    }
    Ok(())
}

/// Exact LP `max vᵀx` over `lower ≤ x ≤ upper` with `Σ x⁺ ≤ budget`, and
/// `Σx = 0` when `zero_sum` (then `‖x‖₁ = 2 Σx⁺`).
///
/// Zero-sum: mass moves from the lowest-valued coordinates to the
/// highest-valued ones while that gains. Otherwise each coordinate is a
/// fractional-knapsack item worth `|v_j|` per unit of ℓ1 budget.
pub(crate) fn box_transport(v: &[f64], lower: &[f64], upper: &[f64], budget: f64, zero_sum: bool) -> Vec<f64> {
    let n = v.len();
    let mut x = vec![0.0; n];
    if zero_sum {
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| v[b].total_cmp(&v[a]));
        let mut donors: Vec<usize> = (0..n).collect();
        donors.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let mut cap_up: Vec<f64> = upper.to_vec();
        let mut cap_down: Vec<f64> = lower.iter().map(|l| -l).collect();
        let mut left = budget;
        let (mut r, mut d) = (0, 0);
        while left > 0.0 && r < n && d < n {
            let (jr, jd) = (order[r], donors[d]);
            if v[jr] <= v[jd] {
                break;
            }
            if cap_up[jr] <= 0.0 {
                r += 1;
                continue;
            }
            if cap_down[jd] <= 0.0 {
                d += 1;
                continue;
            }
            let amt = left.min(cap_up[jr]).min(cap_down[jd]);
            x[jr] += amt;
            x[jd] -= amt;
            cap_up[jr] -= amt;
            cap_down[jd] -= amt;
            left -= amt;
        }
    } else {
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| v[b].abs().total_cmp(&v[a].abs()));
        let mut left = budget;
        for j in order {
            if left <= 0.0 || v[j] == 0.0 {
                break;
            }
            let cap = if v[j] > 0.0 { upper[j] } else { -lower[j] };
            let amt = left.min(cap.max(0.0));
            x[j] = amt * v[j].signum();
            left -= amt;
        }
    }
    x
}

/// `max vᵀx` over `‖x‖₂ ≤ r ∩ C` with `C` the box (∩ hyperplane).
///
/// KKT: the optimum is `P_C(s v)` for the multiplier `s ≥ 0` at which the ball
/// becomes tight, or the LP optimum over `C` if the ball never binds. `s` is
/// located by bisection on `‖P_C(s v)‖₂ = r`.
fn l2_box(r: f64, v: &[f64], lower: &[f64], upper: &[f64], zero_sum: bool) -> Vec<f64> {
    let n = v.len();
    let dir = if zero_sum { centered(v) } else { v.to_vec() };
    let nd = norm2(&dir);
    if nd == 0.0 || nd <= KINK_REL * norm2(v) {
        return vec![0.0; n];
    }
    let lp = box_transport(&dir, lower, upper, f64::INFINITY, zero_sum);
    if norm2(&lp) <= r {
        return lp;
    }
    let proj = |s: f64| -> Vec<f64> {
        let y: Vec<f64> = dir.iter().map(|d| s * d).collect();
        project_box_hyperplane(&y, lower, upper, zero_sum)
    };
    let mut lo = r / nd;
    let at_lo = proj(lo);
    if norm2(&at_lo) >= r * (1.0 - 1e-15) {
        return at_lo;
    }
    let mut hi = 2.0 * lo;
    let cap = lo * 1e15;
    loop {
        let x = proj(hi);
        if norm2(&x) >= r {
            break;
        }
        if hi >= cap {
            return x;
        }
        lo = hi;
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if norm2(&proj(mid)) >= r {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    proj(lo)
}

/// `max vᵀx` over `{xᵀAx ≤ 1} ∩ C` with `C` the box (∩ hyperplane).
///
/// For a multiplier `μ > 0` the relaxed problem
/// `x(μ) = argmin_{x ∈ C} (μ/2)xᵀAx − vᵀx` is a strongly convex QP, solved by
/// accelerated projected gradient with exact projections onto `C`.
/// `x(μ)ᵀAx(μ)` is nonincreasing in `μ`, so the `μ` that makes the ellipsoid
/// tight is found by bisection. If the LP optimum over `C` already lies inside
/// the ellipsoid it is returned directly.
fn ellipsoid_box(e: &EllipsoidData, v: &[f64], lower: &[f64], upper: &[f64], zero_sum: bool) -> Vec<f64> {
    let n = v.len();
    let quad = |x: &[f64]| {
        let xv = DVector::from_column_slice(x);
        (&e.a * &xv).dot(&xv)
    };
    let dir = if zero_sum { centered(v) } else { v.to_vec() };
    if norm2(&dir) <= KINK_REL * norm2(v) || norm2(&dir) == 0.0 {
        return vec![0.0; n];
    }
    let lp = box_transport(&dir, lower, upper, f64::INFINITY, zero_sum);
    if quad(&lp) <= 1.0 {
        return lp;
    }
    let lmax = e.eigenvalues.iter().cloned().fold(0.0, f64::max);
    let mut warm = vec![0.0; n];
    let relaxed = |mu: f64, warm: &mut Vec<f64>| -> Vec<f64> {
        const MAX_ITER: usize = 100_000;
        let step = 1.0 / (mu * lmax);
        let mut x = warm.clone();
        let mut y = x.clone();
        let mut t = 1.0f64;
        for _ in 0..MAX_ITER {
            let ay = &e.a * DVector::from_column_slice(&y);
            let trial: Vec<f64> = (0..n).map(|k| y[k] - step * (mu * ay[k] - dir[k])).collect();
            let next = project_box_hyperplane(&trial, lower, upper, zero_sum);
            let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
            let moved = next.iter().zip(&x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            let mom = (t - 1.0) / t_next;
            y = next.iter().zip(&x).map(|(a, b)| a + mom * (a - b)).collect();
            x = next;
            t = t_next;
            if moved <= 1e-15 * (1.0 + norm_inf(&x)) {
                break;
            }
        }
        *warm = x.clone();
        x
    };
    let full = (&e.m * DVector::from_column_slice(&dir)).dot(&DVector::from_column_slice(&dir));
    let mut hi = full.max(0.0).sqrt().max(f64::MIN_POSITIVE);
    let mut lo = 0.0;
    let mut x_hi = relaxed(hi, &mut warm);
    while quad(&x_hi) > 1.0 {
        lo = hi;
        hi *= 2.0;
        x_hi = relaxed(hi, &mut warm);
    }
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi || (hi - lo) <= 1e-13 * hi {
            break;
        }
        let x = relaxed(mid, &mut warm);
        if quad(&x) > 1.0 {
            lo = mid;
        } else {
            hi = mid;
            x_hi = x;
        }
    }
    x_hi
}

/// Exact LP via microlp: variables `x` (box bounds) and `t ≥ 0` with
/// `-t ≤ Bx ≤ t`, `Σt ≤ 1`, optional `Σx = 0`.
fn parallelepiped_box_lp(
    p: &ParallelepipedData,
    v: &[f64],
    lower: &[f64],
    upper: &[f64],
    zero_sum: bool,
) -> Result<Vec<f64>> {
    let n = v.len();
    let mut lp = Problem::new(OptimizationDirection::Maximize);
    let xs: Vec<_> = (0..n).map(|j| lp.add_var(v[j], (lower[j], upper[j]))).collect();
    let ts: Vec<_> = (0..n).map(|_| lp.add_var(0.0, (0.0, f64::INFINITY))).collect();
    for k in 0..n {
        let mut pos: Vec<_> = (0..n).map(|j| (xs[j], p.b[(k, j)])).collect();
        pos.push((ts[k], -1.0));
        lp.add_constraint(&pos[..], ComparisonOp::Le, 0.0);
        let mut neg: Vec<_> = (0..n).map(|j| (xs[j], -p.b[(k, j)])).collect();
        neg.push((ts[k], -1.0));
        lp.add_constraint(&neg[..], ComparisonOp::Le, 0.0);
    }
    let total: Vec<_> = ts.iter().map(|&t| (t, 1.0)).collect();
    lp.add_constraint(&total[..], ComparisonOp::Le, 1.0);
    if zero_sum {
        let sum: Vec<_> = xs.iter().map(|&x| (x, 1.0)).collect();
        lp.add_constraint(&sum[..], ComparisonOp::Eq, 0.0);
    }
    let sol = lp
        .solve()
        .map_err(|e| Error::Lp(e.to_string()))?
        .into_solution()
        .map_err(|_| Error::Lp("solve interrupted".into()))?;
    Ok(xs.iter().map(|&x| sol.var_value(x)).collect())
}

fn project_ellipsoid(e: &EllipsoidData, y: &[f64]) -> Vec<f64> {
    let yv = DVector::from_column_slice(y);
    if (&e.a * &yv).dot(&yv) <= 1.0 {
        return y.to_vec();
    }
    // x = (I + μA)⁻¹ y with μ > 0 chosen so that xᵀAx = 1.
    let z = e.eigenvectors.transpose() * &yv;
    let lam = &e.eigenvalues;
    let excess = |mu: f64| -> f64 {
        z.iter()
            .zip(lam)
            .map(|(zk, lk)| lk * zk * zk / (1.0 + mu * lk).powi(2))
            .sum::<f64>()
            - 1.0
    };
    let mut lo = 0.0;
    let mut hi = z.iter().zip(lam).map(|(zk, lk)| zk * zk / lk).sum::<f64>().sqrt();
    while excess(hi) > 0.0 {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if excess(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let xt = DVector::from_iterator(z.len(), z.iter().zip(lam).map(|(zk, lk)| zk / (1.0 + hi * lk)));
    (&e.eigenvectors * xt).iter().copied().collect()
}

/// Projection onto `{x : ‖Bx‖₁ ≤ 1}` through FISTA on the dual
/// `min_z ½‖Bᵀz‖² − zᵀBy + ‖z‖_∞`, recovering `x = y − Bᵀz`.
fn project_parallelepiped(p: &ParallelepipedData, y: &[f64]) -> Vec<f64> {
    const MAX_ITER: usize = 100_000;
    let n = y.len();
    let yv = DVector::from_column_slice(y);
    if (&p.b * &yv).iter().map(|v| v.abs()).sum::<f64>() <= 1.0 {
        return y.to_vec();
    }
    let bt = p.b.transpose();
    let l = p.lipschitz;
    let mut z = DVector::zeros(n);
    let mut w = z.clone();
    let mut t = 1.0f64;
    for _ in 0..MAX_ITER {
        let x = &yv - &bt * &w;
        let u: Vec<f64> = (&w + (&p.b * x) / l).iter().copied().collect();
        let scaled: Vec<f64> = u.iter().map(|v| v * l).collect();
        let ball = project_l1_ball(&scaled, 1.0);
        let z_next = DVector::from_iterator(n, u.iter().zip(&ball).map(|(a, b)| a - b / l));
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        w = &z_next + (&z_next - &z) * ((t - 1.0) / t_next);
        let step = (&z_next - &z).amax();
        z = z_next;
        t = t_next;
        if step <= 1e-15 * (1.0 + z.amax()) {
            break;
        }
    }
    let mut x = &yv - &bt * &z;
    let g: f64 = (&p.b * &x).iter().map(|v| v.abs()).sum();
    if g > 1.0 {
        x /= g;
    }
    x.iter().copied().collect()
}

/// `μ = Φᵀ y*` where `y*` is the support maximiser at `v = Φθ`; the gradient
/// of `θ ↦ σ_Û(Φθ)` wherever it is differentiable.
pub fn support_gradient_mu(region: &ConfidenceRegion, phi: &DMatrix<f64>, theta: &[f64]) -> Result<Vec<f64>> {
    check_dim(phi.ncols(), theta.len())?;
    let v = phi * DVector::from_column_slice(theta);
    let y = region.support(v.as_slice())?.maximizer;
    Ok((phi.transpose() * DVector::from_vec(y)).iter().copied().collect())
}

/// Norm used for the discrepancy between proxy and true regions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BetaNorm {
    L1,
    /// `‖x‖_ξ / ξ_min` with `‖x‖_ξ = (Σ ξ_j x_j²)^{1/2}`.
    Weighted(Vec<f64>),
}

impl BetaNorm {
    fn eval(&self, d: &[f64]) -> f64 {
        match self {
            BetaNorm::L1 => d.iter().map(|x| x.abs()).sum(),
            BetaNorm::Weighted(xi) => {
                let xi_min = xi.iter().cloned().fold(f64::INFINITY, f64::min);
                xi.iter().zip(d).map(|(w, x)| w * x * x).sum::<f64>().sqrt() / xi_min
            }
        }
    }
}

/// Sampled lower bound on `β = max_{y ∈ Û} min_{x ∈ U} ‖y − x‖` where
/// `U = Û ∩ {0 ≤ p + x ≤ 1}`.
///
/// Returns exactly 0 when `Û` already lies inside the box (checked through
/// `σ_Û(±e_j)`), in which case `U = Û`. Otherwise boundary points of `Û` are
/// generated as support maximisers, first for the directions `±e_j` and then
/// for Gaussian directions, and each is measured against its Euclidean
/// projection onto `U`. For the ℓ1 norm that distance can exceed the true
/// inner minimum, so on general shapes the result is a diagnostic rather than
/// a bound in either direction. With a fixed generator state the estimate is
/// nondecreasing in `samples`.
pub fn beta_estimate(
    proxy: &ConfidenceRegion,
    p: &[f64],
    samples: usize,
    norm: &BetaNorm,
    rng: &mut SimRng,
) -> Result<f64> {
    let n = p.len();
    proxy.check_len(n)?;
    check_distribution(p)?;
    if let BetaNorm::Weighted(xi) = norm {
        check_dim(n, xi.len())?;
        if xi.iter().any(|&w| !(w > 0.0)) {
            return Err(Error::InvalidArgument("weights must be positive".into()));
        }
    }
    if beta_is_zero(proxy, p)? {
        return Ok(0.0);
    }
    let lower: Vec<f64> = p.iter().map(|&x| -x).collect();
    let upper: Vec<f64> = p.iter().map(|&x| 1.0 - x).collect();
    let mut best = 0.0f64;
    for k in 0..samples {
        let dir: Vec<f64> = if k < 2 * n {
            let mut e = vec![0.0; n];
            e[k / 2] = if k % 2 == 0 { 1.0 } else { -1.0 };
            e
        } else {
            (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
        };
        let y = proxy.support(&dir)?.maximizer;
        let x = proxy.project_true(&y, &lower, &upper, 1e-12);
        let d: Vec<f64> = y.iter().zip(&x).map(|(a, b)| a - b).collect();
        best = best.max(norm.eval(&d));
    }
    Ok(best)
}

/// True when `p + Û` lies inside the unit box, so proxy and true sets agree.
pub fn beta_is_zero(proxy: &ConfidenceRegion, p: &[f64]) -> Result<bool> {
    let n = p.len();
    for j in 0..n {
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        let up = proxy.support(&e)?.value;
        e[j] = -1.0;
        let down = proxy.support(&e)?.value;
        if up > 1.0 - p[j] + 1e-12 || down > p[j] + 1e-12 {
            return Ok(false);
        }
    }
    Ok(true)
}

/// ε of the robust Q-learning guarantee: `ϑβ / (1 − ϑ(1 + β))`.
pub fn epsilon_bound_q(discount: f64, beta: f64) -> Result<f64> {
    epsilon_bound_td(discount, beta, 1.0)
}

/// ε of the robust TD(λ) guarantee: `ϑβ / (1 − ϑ(1 + ρβ))`.
pub fn epsilon_bound_td(discount: f64, beta: f64, rho: f64) -> Result<f64> {
    if !(beta >= 0.0 && rho >= 0.0) {
        return Err(Error::InvalidArgument(format!("β = {beta} and ρ = {rho} must be nonnegative")));
    }
    let denom = 1.0 - discount * (1.0 + rho * beta);
    if !(denom > 0.0) {
        return Err(Error::DiscountTooLarge(format!(
            "ϑ = {discount}, β = {beta}, ρ = {rho} gives ϑ(1 + ρβ) = {} ≥ 1",
            1.0 - denom
        )));
    }
    Ok(discount * beta / denom)
}

/// `ρ = ϑλ / (1 − ϑλ)` for regular (every-visit) TD(λ).
pub fn rho_regular(discount: f64, lambda: f64) -> f64 {
    let x = discount * lambda;
    x / (1.0 - x)
}

/// One region for every state-action pair, or an explicit table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regions {
    Shared(ConfidenceRegion),
    /// Indexed `regions[i * n_actions + a]`.
    PerPair { n_actions: usize, regions: Vec<ConfidenceRegion> },
}

impl Regions {
    pub fn shared(region: ConfidenceRegion) -> Self {
        Regions::Shared(region)
    }

    pub fn get(&self, i: usize, a: usize) -> &ConfidenceRegion {
        match self {
            Regions::Shared(r) => r,
            Regions::PerPair { n_actions, regions } => &regions[i * n_actions + a],
        }
    }

    pub fn validate(&self, mdp: &TabularMdp) -> Result<()> {
        let n = mdp.n_states();
        let check = |r: &ConfidenceRegion| match r.dim() {
            Some(d) => check_dim(n, d),
            None => Ok(()),
        };
        match self {
            Regions::Shared(r) => check(r),
            Regions::PerPair { n_actions, regions } => {
                check_dim(mdp.n_actions(), *n_actions)?;
                check_dim(n * mdp.n_actions(), regions.len())?;
                regions.iter().try_for_each(check)
            }
        }
    }

    /// Proxy backup `σ_{Û(i,a)}(v)`.
    pub fn sigma(&self, i: usize, a: usize, v: &[f64]) -> Result<f64> {
        Ok(self.get(i, a).support(v)?.value)
    }

    pub fn is_trivial(&self) -> bool {
        match self {
            Regions::Shared(r) => r.is_trivial(),
            Regions::PerPair { regions, .. } => regions.iter().all(|r| r.is_trivial()),
        }
    }
}

/// Largest `β` over all state-action pairs of an MDP; 0 when every pair is certified.
pub fn max_beta(
    mdp: &TabularMdp,
    regions: &Regions,
    samples: usize,
    norm: &BetaNorm,
    rng: &mut SimRng,
) -> Result<f64> {
    regions.validate(mdp)?;
    let mut best = 0.0f64;
    for i in 0..mdp.n_states() {
        for a in 0..mdp.n_actions() {
            check_index("action", a, mdp.n_actions())?;
            best = best.max(beta_estimate(regions.get(i, a), mdp.row(i, a), samples, norm, rng)?);
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::Rng;

    fn sample_regions(n: usize) -> Vec<ConfidenceRegion> {
        let a = DMatrix::from_fn(n, n, |i, j| if i == j { 2.0 + i as f64 } else { 0.3 / (1.0 + (i + j) as f64) });
        let b = DMatrix::from_fn(n, n, |i, j| if i == j { 1.5 } else { 0.2 * ((i * 3 + j) % 5) as f64 - 0.4 });
        vec![
            ConfidenceRegion::l2(0.7).unwrap(),
            ConfidenceRegion::l1(0.9).unwrap(),
            ConfidenceRegion::ellipsoid(&a).unwrap(),
            ConfidenceRegion::parallelepiped(&b).unwrap(),
        ]
    }

    #[test]
    fn constant_vectors_have_zero_support() {
        for r in sample_regions(4) {
            let s = r.support(&[2.5; 4]).unwrap();
            assert!(s.value.abs() < 1e-12, "{:?}: {}", r.kind(), s.value);
            assert!(s.maximizer.iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn closed_form_examples() {
        let l2 = ConfidenceRegion::l2(1.0).unwrap().support(&[1.0, 0.0, -1.0]).unwrap();
        assert_abs_diff_eq!(l2.value, 2f64.sqrt(), epsilon = 1e-12);
        let l1 = ConfidenceRegion::l1(1.0).unwrap().support(&[1.0, 0.0, -1.0]).unwrap();
        assert_abs_diff_eq!(l1.value, 1.0, epsilon = 1e-12);
        assert_eq!(l1.maximizer, vec![0.5, 0.0, -0.5]);
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 4.0]));
        let e = ConfidenceRegion::ellipsoid(&a).unwrap().support(&[1.0, 0.0]).unwrap();
        assert_abs_diff_eq!(e.value, 0.2f64.sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn l1_ties_take_lowest_index() {
        let s = ConfidenceRegion::l1(2.0).unwrap().support(&[3.0, 3.0, 0.0, 0.0]).unwrap();
        assert_eq!(s.maximizer, vec![1.0, 0.0, -1.0, 0.0]);
    }

    #[test]
    fn maximizers_are_members_and_attain_value() {
        let mut rng = seeded(4);
        for r in sample_regions(5) {
            for _ in 0..50 {
                let v: Vec<f64> = (0..5).map(|_| rng.random_range(-2.0..2.0)).collect();
                let s = r.support(&v).unwrap();
                assert!(r.contains(&s.maximizer), "{:?}", r.kind());
                assert!(dot(&s.maximizer, &v) >= s.value - 1e-9);
            }
        }
    }

    #[test]
    fn parallelepiped_identity_matches_l1() {
        let p = ConfidenceRegion::parallelepiped(&DMatrix::identity(4, 4)).unwrap();
        let l1 = ConfidenceRegion::l1(1.0).unwrap();
        let v = [0.3, -1.2, 2.0, 0.1];
        assert_abs_diff_eq!(p.support(&v).unwrap().value, l1.support(&v).unwrap().value, epsilon = 1e-12);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let e = ConfidenceRegion::ellipsoid(&DMatrix::identity(3, 3)).unwrap();
        assert!(matches!(e.support(&[1.0, 2.0]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn construction_rejects_bad_matrices() {
        let not_sym = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(ConfidenceRegion::ellipsoid(&not_sym).is_err());
        let indefinite = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(ConfidenceRegion::ellipsoid(&indefinite).is_err());
        let singular = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        assert!(ConfidenceRegion::parallelepiped(&singular).is_err());
        assert!(ConfidenceRegion::l2(-0.1).is_err());
    }

    #[test]
    fn json_forms() {
        let r: ConfidenceRegion = serde_json::from_str(r#"{"kind":"l2","radius":0.3}"#).unwrap();
        assert_eq!(r, ConfidenceRegion::l2(0.3).unwrap());
        let e: ConfidenceRegion =
            serde_json::from_str(r#"{"kind":"ellipsoid","matrix":[1,0,0,4]}"#).unwrap();
        assert_eq!(e.dim(), Some(2));
        let back: ConfidenceRegion = serde_json::from_str(&serde_json::to_string(&e).unwrap()).unwrap();
        assert_abs_diff_eq!(
            back.support(&[1.0, 0.0]).unwrap().value,
            e.support(&[1.0, 0.0]).unwrap().value
        );
        assert!(serde_json::from_str::<ConfidenceRegion>(r#"{"kind":"l1"}"#).is_err());
        assert!(serde_json::from_str::<ConfidenceRegion>(r#"{"kind":"cube","radius":1}"#).is_err());
    }

    #[test]
    fn radius_scales_matrix_shapes() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let unit = ConfidenceRegion::ellipsoid(&a).unwrap();
        let spec = unit.spec().with_radius(0.25);
        let small = spec.build().unwrap();
        let v = [0.4, -1.0];
        assert_abs_diff_eq!(
            small.support(&v).unwrap().value,
            0.25 * unit.support(&v).unwrap().value,
            epsilon = 1e-14
        );
        assert!(unit.spec().with_radius(0.0).build().unwrap().is_trivial());
    }

    #[test]
    fn non_zero_sum_variants() {
        let v = [1.0, 2.0, -3.0];
        let l2 = ConfidenceRegion::l2(0.5).unwrap().with_zero_sum(false);
        assert_abs_diff_eq!(l2.support(&v).unwrap().value, 0.5 * 14f64.sqrt(), epsilon = 1e-12);
        let l1 = ConfidenceRegion::l1(0.5).unwrap().with_zero_sum(false);
        assert_abs_diff_eq!(l1.support(&v).unwrap().value, 1.5, epsilon = 1e-12);
        let p = ConfidenceRegion::parallelepiped(&DMatrix::identity(3, 3)).unwrap().with_zero_sum(false);
        assert_abs_diff_eq!(p.support(&v).unwrap().value, 3.0, epsilon = 1e-12);
    }

    #[test]
    fn constrained_examples() {
        let tiny = ConfidenceRegion::l2(1e-12).unwrap();
        let p = [0.2, 0.5, 0.3];
        let v = [1.0, -2.0, 0.5];
        assert_abs_diff_eq!(tiny.support_simplex_constrained(&p, &v).unwrap(), dot(&p, &v), epsilon = 1e-10);

        let r = ConfidenceRegion::l2(0.1).unwrap();
        let s = r.support_simplex_constrained(&[0.5, 0.5], &[1.0, 0.0]).unwrap();
        assert_abs_diff_eq!(s, 0.5 + 0.1 / 2f64.sqrt(), epsilon = 1e-12);

        let l1 = ConfidenceRegion::l1(0.5).unwrap();
        let s = l1.support_simplex_constrained(&[1.0, 0.0], &[0.0, 1.0]).unwrap();
        assert_abs_diff_eq!(s, 0.25, epsilon = 1e-12);
    }

    #[test]
    fn constrained_box_binds() {
        // p = (0.95, 0.05): the ball would move 0.2/√2 ≈ 0.141 of mass, but
        // coordinate 0 can gain only 0.05.
        let r = ConfidenceRegion::l2(0.2).unwrap();
        let full = r.support_simplex_constrained_full(&[0.05, 0.95], &[1.0, 0.0]).unwrap();
        assert_abs_diff_eq!(full.value, 0.05 + 0.2 / 2f64.sqrt(), epsilon = 1e-12);
        let full = r.support_simplex_constrained_full(&[0.95, 0.05], &[1.0, 0.0]).unwrap();
        assert_abs_diff_eq!(full.value, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(full.maximizer[0], 0.05, epsilon = 1e-12);
    }

    #[test]
    fn ellipsoid_constrained_matches_ball() {
        let r = 0.3;
        let ball = ConfidenceRegion::l2(r).unwrap();
        let e = ConfidenceRegion::ellipsoid(&(DMatrix::identity(4, 4) / (r * r))).unwrap();
        let p = [0.05, 0.4, 0.35, 0.2];
        let v = [2.0, -1.0, 0.3, 0.7];
        let a = ball.support_simplex_constrained(&p, &v).unwrap();
        let b = e.support_simplex_constrained(&p, &v).unwrap();
        assert_abs_diff_eq!(a, b, epsilon = 1e-8);
    }

    #[test]
    fn mu_examples() {
        let r = ConfidenceRegion::l2(1.0).unwrap();
        let phi = DMatrix::identity(3, 3);
        assert_eq!(support_gradient_mu(&r, &phi, &[0.0; 3]).unwrap(), vec![0.0; 3]);
        let mu = support_gradient_mu(&r, &phi, &[1.0, 0.0, -1.0]).unwrap();
        let s = 1.0 / 2f64.sqrt();
        for (m, e) in mu.iter().zip([s, 0.0, -s]) {
            assert_abs_diff_eq!(*m, e, epsilon = 1e-12);
        }
    }

    #[test]
    fn mu_matches_finite_differences() {
        let mut rng = seeded(9);
        let phi = DMatrix::from_fn(6, 3, |_, _| rng.random_range(-1.0..1.0));
        for r in sample_regions(6).into_iter().take(3) {
            let theta: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mu = support_gradient_mu(&r, &phi, &theta).unwrap();
            let sigma = |t: &[f64]| {
                let v = &phi * DVector::from_column_slice(t);
                r.support(v.as_slice()).unwrap().value
            };
            for k in 0..3 {
                let h = 1e-5;
                let mut tp = theta.clone();
                let mut tm = theta.clone();
                tp[k] += h;
                tm[k] -= h;
                let fd = (sigma(&tp) - sigma(&tm)) / (2.0 * h);
                assert!((fd - mu[k]).abs() <= 1e-5 * (1.0 + mu[k].abs()), "{:?} {fd} {}", r.kind(), mu[k]);
            }
        }
    }

    #[test]
    fn beta_certified_zero_in_interior() {
        let r = ConfidenceRegion::l2(0.05).unwrap();
        let mut rng = seeded(0);
        let b = beta_estimate(&r, &[0.3, 0.3, 0.4], 50, &BetaNorm::L1, &mut rng).unwrap();
        assert_eq!(b, 0.0);
    }

    /// Û is the segment x = (t, −t), |t| ≤ 0.5; U keeps t ∈ [−0.5, 0].
    /// The farthest proxy point (0.5, −0.5) is at ℓ1 distance 1 from U.
    #[test]
    fn beta_on_a_segment_matches_grid() {
        let r = ConfidenceRegion::l1(1.0).unwrap();
        let mut rng = seeded(0);
        let b = beta_estimate(&r, &[1.0, 0.0], 20, &BetaNorm::L1, &mut rng).unwrap();
        let grid = (0..=10_000)
            .map(|k| -0.5 + k as f64 / 10_000.0)
            .map(|t| {
                (0..=10_000)
                    .map(|m| -0.5 * m as f64 / 10_000.0)
                    .map(|s| 2.0 * (t - s).abs())
                    .fold(f64::INFINITY, f64::min)
            })
            .fold(0.0, f64::max);
        assert!((b - grid).abs() <= 1e-4, "{b} vs {grid}");
    }

    #[test]
    fn beta_monotone_in_samples() {
        let r = ConfidenceRegion::l2(0.4).unwrap();
        let p = [0.1, 0.6, 0.3];
        let mut last = 0.0;
        for samples in [1, 4, 10, 40, 200] {
            let b = beta_estimate(&r, &p, samples, &BetaNorm::L1, &mut seeded(77)).unwrap();
            assert!(b >= last);
            last = b;
        }
        assert!(last > 0.0);
    }

    #[test]
    fn epsilon_bounds() {
        assert_eq!(epsilon_bound_q(0.9, 0.0).unwrap(), 0.0);
        assert_abs_diff_eq!(epsilon_bound_q(0.5, 0.2).unwrap(), 0.25, epsilon = 1e-15);
        assert!(matches!(epsilon_bound_q(0.9, 0.2), Err(Error::DiscountTooLarge(_))));
        assert_abs_diff_eq!(rho_regular(0.5, 0.5), 1.0 / 3.0, epsilon = 1e-15);
        assert_eq!(epsilon_bound_td(0.9, 0.0, 5.0).unwrap(), 0.0);
        assert_abs_diff_eq!(epsilon_bound_td(0.5, 0.3, 1.0 / 3.0).unwrap(), 1.0 / 3.0, epsilon = 1e-12);
    }

    proptest! {
        #[test]
        fn positive_homogeneity(v in prop::collection::vec(-5.0f64..5.0, 5), c in 0.01f64..50.0) {
            for r in sample_regions(5) {
                let a = r.support(&v).unwrap().value;
                let cv: Vec<f64> = v.iter().map(|x| c * x).collect();
                let b = r.support(&cv).unwrap().value;
                prop_assert!((b - c * a).abs() <= 1e-12 * (1.0 + (c * a).abs()));
            }
        }

        #[test]
        fn subadditivity(
            v in prop::collection::vec(-5.0f64..5.0, 4),
            w in prop::collection::vec(-5.0f64..5.0, 4),
        ) {
            for r in sample_regions(4) {
                let vw: Vec<f64> = v.iter().zip(&w).map(|(a, b)| a + b).collect();
                let lhs = r.support(&vw).unwrap().value;
                let rhs = r.support(&v).unwrap().value + r.support(&w).unwrap().value;
                prop_assert!(lhs <= rhs + 1e-9);
            }
        }

        #[test]
        fn constrained_never_exceeds_proxy(
            v in prop::collection::vec(-3.0f64..3.0, 4),
            raw in prop::collection::vec(0.01f64..1.0, 4),
        ) {
            let s: f64 = raw.iter().sum();
            let p: Vec<f64> = raw.iter().map(|x| x / s).collect();
            for r in sample_regions(4) {
                let proxy = dot(&p, &v) + r.support(&v).unwrap().value;
                let full = r.support_simplex_constrained_full(&p, &v).unwrap();
                prop_assert!(full.value <= proxy + 1e-9);
                prop_assert!(full.value >= dot(&p, &v) - 1e-9);
                for (pj, xj) in p.iter().zip(&full.maximizer) {
                    prop_assert!(pj + xj >= -1e-9 && pj + xj <= 1.0 + 1e-9);
                }
            }
        }
    }
}
