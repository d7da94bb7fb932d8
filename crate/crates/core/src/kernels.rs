//! Symmetric jump kernels of order `sigma` and the classes they belong to.
//!
//! Every kernel has a principal part
//! `c * (2 - sigma) * m(y) / |y|^(n + sigma)` with a multiplier `m` between the
//! ellipticity bounds, and truncated kernels add an integrable remainder.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::grid::{norm, Point};
use crate::scalar::{sphere_measure, Real};

pub type Sym2<T> = [[T; 2]; 2];

/// Order of the operator, `0 < sigma < 2`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct Order<T>(T);

impl<T: Real> Order<T> {
    pub fn new(sigma: T) -> Result<Self> {
        if sigma > T::zero() && sigma < T::lit(2.0) {
            Ok(Self(sigma))
        } else {
            Err(Error::InvalidKernel(format!("order must lie in (0, 2), got {sigma}")))
        }
    }

    pub fn get(self) -> T {
        self.0
    }

    /// The factor `2 - sigma`.
    pub fn damping(self) -> T {
        T::lit(2.0) - self.0
    }
}

/// Ellipticity bounds `0 < lower <= upper`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ellipticity<T> {
    lower: T,
    upper: T,
}

impl<T: Real> Ellipticity<T> {
    pub fn new(lower: T, upper: T) -> Result<Self> {
        if lower > T::zero() && lower <= upper && upper.is_finite() {
            Ok(Self { lower, upper })
        } else {
            Err(Error::InvalidKernel(format!(
                "ellipticity bounds need 0 < lambda <= Lambda, got ({lower}, {upper})"
            )))
        }
    }

    pub fn unit() -> Self {
        Self {
            lower: T::one(),
            upper: T::one(),
        }
    }

    pub fn lower(&self) -> T {
        self.lower
    }

    pub fn upper(&self) -> T {
        self.upper
    }

    pub fn contains(&self, a: T) -> bool {
        let tol = self.upper * T::lit(1e-12);
        a >= self.lower - tol && a <= self.upper + tol
    }
}

/// Even multiplier over directions: `values[k]` is attached to the angle
/// `k * pi / len` (its antipode shares the entry). One entry in 1D.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectionTable<T> {
    values: Vec<T>,
}

impl<T: Real> DirectionTable<T> {
    pub fn new(values: Vec<T>) -> Result<Self> {
        if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidKernel("direction table needs finite entries".into()));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn lookup(&self, y: &Point<T>, n: usize) -> T {
        if n == 1 || self.values.len() == 1 {
            return self.values[0];
        }
        let m = self.values.len();
        let mut angle = y[1].atan2(y[0]);
        if angle < T::zero() {
            angle = angle + T::PI();
        }
        let k = (angle / T::PI() * T::from_usize(m).unwrap()).round().to_usize().unwrap_or(0) % m;
        self.values[k]
    }
}

pub type MultiplierFn<T> = Arc<dyn Fn(&Point<T>) -> T + Send + Sync>;

/// Arbitrary measurable multiplier with declared bounds. It must be even in `y`.
#[derive(Clone)]
pub struct CustomMultiplier<T> {
    pub f: MultiplierFn<T>,
    pub label: String,
}

impl<T> fmt::Debug for CustomMultiplier<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "CustomMultiplier({})", self.label)
    }
}

#[derive(Debug, Clone)]
pub enum Multiplier<T> {
    Constant(T),
    Table(DirectionTable<T>),
    Custom(CustomMultiplier<T>),
}

impl<T: Real> Multiplier<T> {
    pub fn custom(label: &str, f: impl Fn(&Point<T>) -> T + Send + Sync + 'static) -> Self {
        Multiplier::Custom(CustomMultiplier {
            f: Arc::new(f),
            label: label.to_string(),
        })
    }

    pub fn eval(&self, y: &Point<T>, n: usize) -> T {
        match self {
            Multiplier::Constant(c) => *c,
            Multiplier::Table(t) => t.lookup(y, n),
            Multiplier::Custom(c) => {
                let v = (c.f)(y);
                let w = (c.f)(&[-y[0], -y[1]]);
                // enforce evenness so that antipodal symmetry is exact
                (v + w) / T::lit(2.0)
            }
        }
    }
}

/// Integrable remainder `K2` of a truncated kernel.
#[derive(Clone)]
pub enum L1Part<T> {
    Zero,
    /// `height` on `inner <= |y| <= outer`.
    Annulus { inner: T, outer: T, height: T },
    /// `-c (2 - sigma) level / |y|^(n+sigma)` for `|y| > radius`: cuts the
    /// principal part off outside a ball.
    NegatedOutside { radius: T, level: T },
    /// `c (2 - sigma) level (exp(-|y|^2) - 1) / |y|^(n+sigma)`: turns the
    /// principal part into a Gaussian-tapered kernel.
    GaussianTaper { level: T },
    /// Compactly supported custom density with known discontinuity radii.
    Custom {
        f: MultiplierFn<T>,
        support: T,
        breaks: Vec<T>,
        label: String,
    },
}

impl<T: fmt::Debug> fmt::Debug for L1Part<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            L1Part::Zero => write!(f, "Zero"),
            L1Part::Annulus { inner, outer, height } => {
                write!(f, "Annulus({inner:?}, {outer:?}, {height:?})")
            }
            L1Part::NegatedOutside { radius, level } => write!(f, "NegatedOutside({radius:?}, {level:?})"),
            L1Part::GaussianTaper { level } => write!(f, "GaussianTaper({level:?})"),
            L1Part::Custom { label, .. } => write!(f, "Custom({label})"),
        }
    }
}

impl<T: Real> L1Part<T> {
    /// `scale` is `c (2 - sigma)` of the principal part.
    pub fn eval(&self, y: &Point<T>, n: usize, sigma: T, scale: T) -> T {
        let r = norm(y, n);
        match self {
            L1Part::Zero => T::zero(),
            L1Part::Annulus { inner, outer, height } => {
                if r >= *inner && r <= *outer {
                    *height
                } else {
                    T::zero()
                }
            }
            L1Part::NegatedOutside { radius, level } => {
                if r > *radius {
                    -scale * *level * r.powf(-(T::from_usize(n).unwrap() + sigma))
                } else {
                    T::zero()
                }
            }
            L1Part::GaussianTaper { level } => {
                if r == T::zero() {
                    return T::zero();
                }
                let em1 = (-r * r).exp_m1();
                scale * *level * em1 * r.powf(-(T::from_usize(n).unwrap() + sigma))
            }
            L1Part::Custom { f, .. } => f(y),
        }
    }

    /// Radii where the density jumps or changes formula.
    fn breaks(&self) -> Vec<T> {
        match self {
            L1Part::Zero | L1Part::GaussianTaper { .. } => vec![],
            L1Part::Annulus { inner, outer, .. } => vec![*inner, *outer],
            L1Part::NegatedOutside { radius, .. } => vec![*radius],
            L1Part::Custom { breaks, support, .. } => {
                let mut b = breaks.clone();
                b.push(*support);
                b
            }
        }
    }

    /// Closed-form `L1` mass beyond radius `r` (for the radial tail), and
    /// below radius `r` near the origin.
    fn far_mass(&self, r: T, n: usize, sigma: T, scale: T) -> T {
        let s = sphere_measure::<T>(n);
        match self {
            L1Part::NegatedOutside { radius, level } => {
                let r = r.max(*radius);
                scale * level.abs() * s * r.powf(-sigma) / sigma
            }
            // 1 - exp(-r^2) = 1 to double precision beyond the cutoff used
            L1Part::GaussianTaper { level } => scale * level.abs() * s * r.powf(-sigma) / sigma,
            _ => T::zero(),
        }
    }

    fn near_mass(&self, r: T, n: usize, sigma: T, scale: T) -> T {
        match self {
            // |K2| ~ scale level |y|^(2-n-sigma) at the origin
            L1Part::GaussianTaper { level } => {
                scale * level.abs() * sphere_measure::<T>(n) * r.powf(T::lit(2.0) - sigma) / (T::lit(2.0) - sigma)
            }
            _ => T::zero(),
        }
    }

    /// Numerical `||K2||_1` by radial Gauss-Legendre on geometric panels
    /// split at the known breaks, plus closed-form end pieces.
    pub fn l1_norm(&self, n: usize, sigma: T, scale: T) -> T {
        if matches!(self, L1Part::Zero) {
            return T::zero();
        }
        let lo = T::lit(1e-10);
        let hi = match self {
            L1Part::Annulus { outer, .. } => *outer,
            L1Part::Custom { support, .. } => *support,
            _ => T::lit(1e8),
        };
        let mut knots: Vec<T> = Vec::new();
        let mut r = lo;
        while r < hi {
            knots.push(r);
            r = r * T::lit(10.0);
        }
        knots.push(hi);
        for b in self.breaks() {
            if b > lo && b < hi {
                knots.push(b);
            }
        }
        knots.sort_by(|a, b| a.partial_cmp(b).unwrap());
        knots.dedup();
        let dirs = crate::quadrature::sphere_rule::<T>(n, 64);
        let (nodes, weights) = crate::quadrature::gauss_legendre::<T>(32);
        let mut total = T::zero();
        for w in knots.windows(2) {
            let (a, b) = (w[0], w[1]);
            let half = (b - a) / T::lit(2.0);
            let mid = (a + b) / T::lit(2.0);
            for (&t, &gw) in nodes.iter().zip(&weights) {
                let r = mid + half * t;
                let shell = r.powi(n as i32 - 1);
                let ang: T = dirs
                    .iter()
                    .map(|&(th, om)| om * self.eval(&[r * th[0], r * th[1]], n, sigma, scale).abs())
                    .sum();
                total = total + gw * half * shell * ang;
            }
        }
        total + self.near_mass(lo, n, sigma, scale) + self.far_mass(hi, n, sigma, scale)
    }
}

#[derive(Debug, Clone)]
pub enum KernelShape<T> {
    /// `(2 - sigma) a(y) / |y|^(n+sigma)`
    Fractional(Multiplier<T>),
    /// `(2 - sigma) y^T A y / |y|^(n+2+sigma)`
    Matrix(Sym2<T>),
    /// Pullback of the fractional kernel under `y -> A y`:
    /// `(2 - sigma) / (det A |A^{-1} y|^(n+sigma))`.
    LinearImage { inverse: Sym2<T>, det: T },
    Truncated {
        base: Box<Kernel<T>>,
        remainder: L1Part<T>,
        kappa: T,
    },
}

#[derive(Debug, Clone)]
pub struct Kernel<T> {
    dim: usize,
    order: Order<T>,
    bounds: Ellipticity<T>,
    normalization: T,
    shape: KernelShape<T>,
}

fn check_dim(dim: usize) -> Result<()> {
    if dim == 1 || dim == 2 {
        Ok(())
    } else {
        Err(Error::InvalidKernel(format!("dimension must be 1 or 2, got {dim}")))
    }
}

/// Eigenvalues of a symmetric matrix restricted to the leading `n x n` block,
/// ascending.
pub fn sym_eigenvalues<T: Real>(a: &Sym2<T>, n: usize) -> (T, T) {
    if n == 1 {
        return (a[0][0], a[0][0]);
    }
    let tr = a[0][0] + a[1][1];
    let diff = a[0][0] - a[1][1];
    let disc = (diff * diff + T::lit(4.0) * a[0][1] * a[0][1]).sqrt();
    ((tr - disc) / T::lit(2.0), (tr + disc) / T::lit(2.0))
}

fn quad_form<T: Real>(a: &Sym2<T>, y: &Point<T>, n: usize) -> T {
    if n == 1 {
        a[0][0] * y[0] * y[0]
    } else {
        a[0][0] * y[0] * y[0] + T::lit(2.0) * a[0][1] * y[0] * y[1] + a[1][1] * y[1] * y[1]
    }
}

fn mat_vec<T: Real>(a: &Sym2<T>, y: &Point<T>, n: usize) -> Point<T> {
    if n == 1 {
        [a[0][0] * y[0], T::zero()]
    } else {
        [a[0][0] * y[0] + a[0][1] * y[1], a[1][0] * y[0] + a[1][1] * y[1]]
    }
}

fn check_symmetric<T: Real>(a: &Sym2<T>, n: usize) -> Result<()> {
    if n == 2 && (a[0][1] - a[1][0]).abs() > T::lit(1e-12) * (a[0][1].abs() + T::one()) {
        return Err(Error::InvalidKernel("matrix must be symmetric".into()));
    }
    Ok(())
}

impl<T: Real> Kernel<T> {
    pub fn fractional(dim: usize, sigma: T, bounds: Ellipticity<T>, multiplier: Multiplier<T>) -> Result<Self> {
        check_dim(dim)?;
        let order = Order::new(sigma)?;
        let k = Self {
            dim,
            order,
            bounds,
            normalization: T::one(),
            shape: KernelShape::Fractional(multiplier),
        };
        k.check_multiplier_bounds()?;
        Ok(k)
    }

    /// `a = 1`, `lambda = Lambda = 1`.
    pub fn fractional_laplacian(dim: usize, sigma: T) -> Result<Self> {
        Self::fractional(dim, sigma, Ellipticity::unit(), Multiplier::Constant(T::one()))
    }

    /// Matrix kernel; the bounds are the extreme eigenvalues of `a`.
    pub fn matrix(dim: usize, sigma: T, a: Sym2<T>) -> Result<Self> {
        check_dim(dim)?;
        check_symmetric(&a, dim)?;
        let (lo, hi) = sym_eigenvalues(&a, dim);
        let bounds = Ellipticity::new(lo, hi)?;
        Ok(Self {
            dim,
            order: Order::new(sigma)?,
            bounds,
            normalization: T::one(),
            shape: KernelShape::Matrix(a),
        })
    }

    /// Kernel of `u -> int delta(u, x, A y) (2 - sigma) / |y|^(n+sigma) dy`.
    pub fn linear_image(dim: usize, sigma: T, a: Sym2<T>) -> Result<Self> {
        check_dim(dim)?;
        check_symmetric(&a, dim)?;
        let (det, inverse) = if dim == 1 {
            if a[0][0] <= T::zero() {
                return Err(Error::InvalidKernel("matrix must be positive definite".into()));
            }
            (a[0][0], [[T::one() / a[0][0], T::zero()], [T::zero(), T::zero()]])
        } else {
            let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
            let (lo, _) = sym_eigenvalues(&a, 2);
            if lo <= T::zero() {
                return Err(Error::InvalidKernel("matrix must be positive definite".into()));
            }
            (
                det,
                [[a[1][1] / det, -a[0][1] / det], [-a[1][0] / det, a[0][0] / det]],
            )
        };
        let (lo, hi) = sym_eigenvalues(&a, dim);
        let p = T::from_usize(dim).unwrap() + sigma;
        // multiplier range: 1/det * |A^{-1} theta|^{-(n+sigma)}, |A^{-1} theta| in [1/hi, 1/lo]
        let bounds = Ellipticity::new(lo.powf(p) / det, hi.powf(p) / det)?;
        Ok(Self {
            dim,
            order: Order::new(sigma)?,
            bounds,
            normalization: T::one(),
            shape: KernelShape::LinearImage { inverse, det },
        })
    }

    /// Truncated kernel `base + remainder`. Rejects remainders that make the
    /// kernel negative at any of 10^4 sampled points.
    pub fn truncated(base: Kernel<T>, remainder: L1Part<T>, kappa: T) -> Result<Self> {
        if matches!(base.shape, KernelShape::Truncated { .. }) {
            return Err(Error::InvalidKernel("base of a truncated kernel must be untruncated".into()));
        }
        if !(kappa >= T::zero()) {
            return Err(Error::InvalidKernel(format!("kappa must be nonnegative, got {kappa}")));
        }
        let k = Self {
            dim: base.dim,
            order: base.order,
            bounds: base.bounds,
            normalization: base.normalization,
            shape: KernelShape::Truncated {
                base: Box::new(base),
                remainder,
                kappa,
            },
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0x6b65726e);
        for _ in 0..10_000 {
            let y = random_point(&mut rng, k.dim);
            let v = k.value(&y)?;
            if v < -T::lit(1e-12) * k.principal_value(&y).abs() {
                return Err(Error::InvalidKernel(format!(
                    "truncated kernel is negative ({v}) at y = {:?}",
                    &y[..k.dim]
                )));
            }
        }
        Ok(k)
    }

    pub fn with_normalization(mut self, c: T) -> Self {
        self.normalization = c;
        if let KernelShape::Truncated { base, .. } = &mut self.shape {
            base.normalization = c;
        }
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn order(&self) -> Order<T> {
        self.order
    }

    pub fn sigma(&self) -> T {
        self.order.get()
    }

    pub fn bounds(&self) -> Ellipticity<T> {
        self.bounds
    }

    pub fn normalization(&self) -> T {
        self.normalization
    }

    pub fn shape(&self) -> &KernelShape<T> {
        &self.shape
    }

    /// The untruncated part.
    pub fn principal(&self) -> &Kernel<T> {
        match &self.shape {
            KernelShape::Truncated { base, .. } => base,
            _ => self,
        }
    }

    pub fn remainder(&self) -> Option<(&L1Part<T>, T)> {
        match &self.shape {
            KernelShape::Truncated { remainder, kappa, .. } => Some((remainder, *kappa)),
            _ => None,
        }
    }

    /// Multiplier `m(y)` of the principal part, so that the principal part
    /// equals `c (2 - sigma) m(y) / |y|^(n+sigma)`.
    pub fn multiplier_at(&self, y: &Point<T>) -> T {
        let n = self.dim;
        match &self.shape {
            KernelShape::Fractional(m) => m.eval(y, n),
            KernelShape::Matrix(a) => {
                let r2 = if n == 1 { y[0] * y[0] } else { y[0] * y[0] + y[1] * y[1] };
                quad_form(a, y, n) / r2
            }
            KernelShape::LinearImage { inverse, det } => {
                let r = norm(y, n);
                let z = mat_vec(inverse, y, n);
                let rz = norm(&z, n) / r;
                rz.powf(-(T::from_usize(n).unwrap() + self.sigma())) / *det
            }
            KernelShape::Truncated { base, .. } => base.multiplier_at(y),
        }
    }

    /// `c (2 - sigma)`.
    pub fn scale(&self) -> T {
        self.normalization * self.order.damping()
    }

    pub fn principal_value(&self, y: &Point<T>) -> T {
        let r = norm(y, self.dim);
        self.scale() * self.multiplier_at(y) * r.powf(-(T::from_usize(self.dim).unwrap() + self.sigma()))
    }

    /// Kernel value at `y != 0`.
    pub fn value(&self, y: &Point<T>) -> Result<T> {
        if norm(y, self.dim) == T::zero() {
            return Err(Error::SingularKernel);
        }
        let mut v = self.principal_value(y);
        if let KernelShape::Truncated { remainder, .. } = &self.shape {
            v = v + remainder.eval(y, self.dim, self.sigma(), self.scale());
        }
        Ok(v)
    }

    fn check_multiplier_bounds(&self) -> Result<()> {
        let mut rng = ChaCha8Rng::seed_from_u64(0x626f756e);
        if let KernelShape::Fractional(Multiplier::Table(t)) = &self.shape {
            if let Some(v) = t.values().iter().find(|&&v| !self.bounds.contains(v)) {
                return Err(Error::InvalidKernel(format!(
                    "multiplier {v} outside [{}, {}]",
                    self.bounds.lower, self.bounds.upper
                )));
            }
            return Ok(());
        }
        for _ in 0..2_000 {
            let y = random_point(&mut rng, self.dim);
            let m = self.multiplier_at(&y);
            if !self.bounds.contains(m) {
                return Err(Error::InvalidKernel(format!(
                    "multiplier {m} at y = {:?} outside [{}, {}]",
                    &y[..self.dim],
                    self.bounds.lower,
                    self.bounds.upper
                )));
            }
        }
        Ok(())
    }
}

/// Random point with log-uniform radius in `[1e-3, 1e3]` and uniform direction.
pub fn random_point<T: Real, R: Rng>(rng: &mut R, n: usize) -> Point<T> {
    let r = 10f64.powf(rng.gen_range(-3.0..3.0));
    if n == 1 {
        let s = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        [T::lit(s * r), T::zero()]
    } else {
        let a = rng.gen_range(0.0..std::f64::consts::TAU);
        [T::lit(r * a.cos()), T::lit(r * a.sin())]
    }
}

/// Decomposition `K = K1 + K2` of a truncated kernel together with the
/// numerically integrated `||K2||_1`, which must not exceed the stored bound.
pub fn truncated_split<T: Real>(k: &Kernel<T>) -> Result<(Kernel<T>, L1Part<T>, T)> {
    match &k.shape {
        KernelShape::Truncated { base, remainder, kappa } => {
            let mass = remainder.l1_norm(k.dim, k.sigma(), k.scale());
            if mass > *kappa * (T::one() + T::lit(1e-6)) {
                return Err(Error::InvalidKernel(format!(
                    "||K2||_1 = {mass} exceeds the declared bound {kappa}"
                )));
            }
            Ok(((**base).clone(), remainder.clone(), mass))
        }
        _ => Err(Error::Precondition("kernel is not truncated".into())),
    }
}

#[derive(Debug, Clone)]
pub enum KernelClass<T> {
    L0 {
        dim: usize,
        order: Order<T>,
        bounds: Ellipticity<T>,
        normalization: T,
    },
    /// Kernels of `L0` whose smoothness modulus away from `B_rho0` is at most
    /// `smoothness`. The extremal operators coincide with those of `L0` at
    /// quadrature level.
    L1 {
        dim: usize,
        order: Order<T>,
        bounds: Ellipticity<T>,
        normalization: T,
        rho0: T,
        smoothness: T,
    },
    /// `K1 + K2 >= 0` with `K1` in `L0` and `||K2||_1 <= kappa`.
    Truncated {
        dim: usize,
        order: Order<T>,
        bounds: Ellipticity<T>,
        normalization: T,
        kappa: T,
    },
    Finite(Vec<Kernel<T>>),
}

impl<T: Real> KernelClass<T> {
    pub fn l0(dim: usize, sigma: T, bounds: Ellipticity<T>) -> Result<Self> {
        check_dim(dim)?;
        Ok(KernelClass::L0 {
            dim,
            order: Order::new(sigma)?,
            bounds,
            normalization: T::one(),
        })
    }

    pub fn truncated(dim: usize, sigma: T, bounds: Ellipticity<T>, kappa: T) -> Result<Self> {
        check_dim(dim)?;
        if !(kappa >= T::zero()) {
            return Err(Error::InvalidKernel(format!("kappa must be nonnegative, got {kappa}")));
        }
        Ok(KernelClass::Truncated {
            dim,
            order: Order::new(sigma)?,
            bounds,
            normalization: T::one(),
            kappa,
        })
    }

    pub fn finite(kernels: Vec<Kernel<T>>) -> Result<Self> {
        let first = kernels
            .first()
            .ok_or_else(|| Error::InvalidKernel("finite family is empty".into()))?;
        let (d, s) = (first.dim(), first.sigma());
        if kernels.iter().any(|k| k.dim() != d || k.sigma() != s) {
            return Err(Error::InvalidKernel("family members must share dimension and order".into()));
        }
        Ok(KernelClass::Finite(kernels))
    }

    pub fn with_normalization(self, c: T) -> Self {
        match self {
            KernelClass::L0 { dim, order, bounds, .. } => KernelClass::L0 {
                dim,
                order,
                bounds,
                normalization: c,
            },
            KernelClass::L1 {
                dim,
                order,
                bounds,
                rho0,
                smoothness,
                ..
            } => KernelClass::L1 {
                dim,
                order,
                bounds,
                normalization: c,
                rho0,
                smoothness,
            },
            KernelClass::Truncated {
                dim, order, bounds, kappa, ..
            } => KernelClass::Truncated {
                dim,
                order,
                bounds,
                normalization: c,
                kappa,
            },
            KernelClass::Finite(ks) => {
                KernelClass::Finite(ks.into_iter().map(|k| k.with_normalization(c)).collect())
            }
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            KernelClass::L0 { dim, .. } | KernelClass::L1 { dim, .. } | KernelClass::Truncated { dim, .. } => *dim,
            KernelClass::Finite(ks) => ks[0].dim(),
        }
    }

    pub fn sigma(&self) -> T {
        match self {
            KernelClass::L0 { order, .. }
            | KernelClass::L1 { order, .. }
            | KernelClass::Truncated { order, .. } => order.get(),
            KernelClass::Finite(ks) => ks[0].sigma(),
        }
    }

    /// Bounds covering every member.
    pub fn bounds(&self) -> Ellipticity<T> {
        match self {
            KernelClass::L0 { bounds, .. }
            | KernelClass::L1 { bounds, .. }
            | KernelClass::Truncated { bounds, .. } => *bounds,
            KernelClass::Finite(ks) => {
                let lo = ks.iter().map(|k| k.bounds().lower()).fold(T::infinity(), T::min);
                let hi = ks.iter().map(|k| k.bounds().upper()).fold(T::zero(), T::max);
                Ellipticity { lower: lo, upper: hi }
            }
        }
    }
}

/// Settings of the annular midpoint rule used by [`smoothness_modulus`].
#[derive(Debug, Clone, Copy)]
pub struct ModulusRule {
    pub radial_cells_per_step: usize,
    pub angles: usize,
    pub growth: f64,
    pub rel_tol: f64,
    pub max_steps: usize,
}

impl Default for ModulusRule {
    fn default() -> Self {
        Self {
            radial_cells_per_step: 48,
            angles: 256,
            growth: 1.5,
            rel_tol: 1e-4,
            max_steps: 80,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModulusEstimate<T> {
    /// Quadrature value over `rho0 < |y| < outer_radius`.
    pub value: T,
    /// Analytic bound on the part beyond `outer_radius`.
    pub tail_bound: T,
    pub outer_radius: T,
}

impl<T: Real> ModulusEstimate<T> {
    pub fn total(&self) -> T {
        self.value + self.tail_bound
    }
}

/// `int_{|y| > rho0} |K(y) - K(y - h)| / |h| dy` for a kernel.
pub fn smoothness_modulus<T: Real>(
    k: &Kernel<T>,
    rho0: T,
    h: &Point<T>,
    rule: &ModulusRule,
) -> Result<ModulusEstimate<T>> {
    let n = k.dim();
    let hn = norm(h, n);
    // |grad K| <= (n + sigma) c (2 - sigma) Lambda / |y|^(n+sigma+1) for the principal part
    let p = T::from_usize(n).unwrap() + k.sigma();
    let grad_scale = p * k.scale() * k.bounds().upper();
    let tail = move |r: T| {
        let shrink = (r / (r - hn)).powf(p + T::one());
        grad_scale * sphere_measure::<T>(n) * r.powf(-k.sigma() - T::one()) / (T::one() + k.sigma()) * shrink
    };
    modulus_of(|y| k.value(y).unwrap_or(T::zero()), n, rho0, h, rule, tail)
}

/// Smoothness modulus of a remainder density alone (no principal part).
pub fn remainder_modulus<T: Real>(
    part: &L1Part<T>,
    n: usize,
    sigma: T,
    scale: T,
    rho0: T,
    h: &Point<T>,
    rule: &ModulusRule,
) -> Result<ModulusEstimate<T>> {
    modulus_of(|y| part.eval(y, n, sigma, scale), n, rho0, h, rule, |_| T::zero())
}

fn modulus_of<T: Real>(
    k: impl Fn(&Point<T>) -> T,
    n: usize,
    rho0: T,
    h: &Point<T>,
    rule: &ModulusRule,
    tail: impl Fn(T) -> T,
) -> Result<ModulusEstimate<T>> {
    let hn = norm(h, n);
    if !(hn > T::zero()) || hn >= rho0 / T::lit(2.0) {
        return Err(Error::Precondition(format!(
            "offset length {hn} must lie in (0, rho0/2) with rho0 = {rho0}"
        )));
    }
    let dirs: Vec<(Point<T>, T)> = if n == 1 {
        vec![([T::one(), T::zero()], T::one()), ([-T::one(), T::zero()], T::one())]
    } else {
        let m = rule.angles;
        let dt = T::lit(std::f64::consts::TAU / m as f64);
        (0..m)
            .map(|j| {
                let a = (T::from_usize(j).unwrap() + T::lit(0.5)) * dt;
                ([a.cos(), a.sin()], dt)
            })
            .collect()
    };
    let growth = T::lit(rule.growth);
    let cells = rule.radial_cells_per_step;
    let ratio = growth.powf(T::one() / T::from_usize(cells).unwrap());
    let shell = |r_in: T| -> T {
        let mut s = T::zero();
        let mut a = r_in;
        for _ in 0..cells {
            let b = a * ratio;
            let mid = (a * b).sqrt();
            let meas = if n == 1 { b - a } else { (b * b - a * a) / T::lit(2.0) };
            let ang: T = dirs
                .iter()
                .map(|&(th, om)| {
                    let y = [mid * th[0], mid * th[1]];
                    let z = [y[0] - h[0], y[1] - h[1]];
                    om * (k(&y) - k(&z)).abs()
                })
                .sum();
            s = s + meas * ang;
            a = b;
        }
        s / hn
    };
    let mut value = T::zero();
    let mut r = rho0;
    for _ in 0..rule.max_steps {
        let inc = shell(r);
        value = value + inc;
        r = r * growth;
        if value == T::zero() && r > rho0 * T::lit(1e6) {
            return Ok(ModulusEstimate {
                value,
                tail_bound: tail(r),
                outer_radius: r,
            });
        }
        if value > T::zero() && inc <= T::lit(rule.rel_tol) * value {
            let tb = tail(r);
            if !tb.is_finite() {
                break;
            }
            return Ok(ModulusEstimate {
                value,
                tail_bound: tb,
                outer_radius: r,
            });
        }
    }
    Err(Error::NotIntegrable(format!(
        "smoothness modulus did not settle by radius {r} (current value {value})"
    )))
}
