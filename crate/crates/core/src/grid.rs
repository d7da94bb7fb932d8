//! Uniform grids over the box `[-R, R]^n` (`n = 1, 2`) and grid functions
//! that are defined on all of `R^n`.
//!
//! A [`GridFunction`] stores one value per node and an analytic
//! [`ExteriorClosure`] that supplies values outside the box. Nonlocal
//! operators integrate over the whole space, so evaluation must be total:
//! nodes return the stored value bit-for-bit, points between nodes are
//! interpolated multilinearly, and points outside the box use the closure.
//!
//! Points are `[T; 2]`; in one dimension the second component is ignored.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::scalar::Real;

pub type Point<T> = [T; 2];

/// Norm of the first `n` components.
#[inline]
pub fn norm<T: Real>(x: &Point<T>, n: usize) -> T {
    if n == 1 {
        x[0].abs()
    } else {
        (x[0] * x[0] + x[1] * x[1]).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec<T> {
    dim: usize,
    h: T,
    half: usize,
}

impl<T: Real> GridSpec<T> {
    /// Builds a grid with spacing `h` covering `[-R, R]^n`. `R` is snapped to
    /// the nearest multiple of `h`, so the origin is always a node.
    pub fn new(dim: usize, box_radius: T, h: T) -> Result<Self> {
        if dim != 1 && dim != 2 {
            return Err(Error::InvalidGrid(format!("dimension must be 1 or 2, got {dim}")));
        }
        if !(h > T::zero()) || !h.is_finite() {
            return Err(Error::InvalidGrid(format!("spacing must be positive, got {h}")));
        }
        let min_radius = T::lit(4.0) * T::from_usize(dim).unwrap().sqrt();
        let half = (box_radius / h).round().to_usize().unwrap_or(0);
        if T::from_usize(half).unwrap() * h < min_radius - T::lit(1e-12) {
            return Err(Error::InvalidGrid(format!(
                "box radius {box_radius} is below 4*sqrt(n) = {min_radius}"
            )));
        }
        Ok(Self { dim, h, half })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn h(&self) -> T {
        self.h
    }

    /// Number of nodes on each side of the origin along one axis.
    pub fn half(&self) -> usize {
        self.half
    }

    pub fn box_radius(&self) -> T {
        T::from_usize(self.half).unwrap() * self.h
    }

    pub fn points_per_axis(&self) -> usize {
        2 * self.half + 1
    }

    pub fn num_nodes(&self) -> usize {
        self.points_per_axis().pow(self.dim as u32)
    }

    #[inline]
    pub fn coord(&self, i: usize) -> T {
        (T::from_usize(i).unwrap() - T::from_usize(self.half).unwrap()) * self.h
    }

    #[inline]
    pub fn flat(&self, idx: [usize; 2]) -> usize {
        if self.dim == 1 {
            idx[0]
        } else {
            idx[0] + self.points_per_axis() * idx[1]
        }
    }

    #[inline]
    pub fn unflat(&self, flat: usize) -> [usize; 2] {
        if self.dim == 1 {
            [flat, 0]
        } else {
            let m = self.points_per_axis();
            [flat % m, flat / m]
        }
    }

    #[inline]
    pub fn node_point(&self, flat: usize) -> Point<T> {
        let idx = self.unflat(flat);
        if self.dim == 1 {
            [self.coord(idx[0]), T::zero()]
        } else {
            [self.coord(idx[0]), self.coord(idx[1])]
        }
    }

    /// Index of the node at `x`, if `x` lies on a node inside the box.
    pub fn node_at(&self, x: &Point<T>) -> Option<usize> {
        let mut idx = [0usize; 2];
        for (k, slot) in idx.iter_mut().enumerate().take(self.dim) {
            let t = x[k] / self.h + T::from_usize(self.half).unwrap();
            let r = t.round();
            if (t - r).abs() > T::lit(1e-9) || r < T::zero() {
                return None;
            }
            let i = r.to_usize()?;
            if i >= self.points_per_axis() {
                return None;
            }
            *slot = i;
        }
        Some(self.flat(idx))
    }

    pub fn origin(&self) -> usize {
        self.flat([self.half, self.half])
    }

    /// Sup-distance from a node to the box boundary.
    pub fn boundary_margin(&self, flat: usize) -> T {
        let idx = self.unflat(flat);
        let mut m = usize::MAX;
        for &i in idx.iter().take(self.dim) {
            m = m.min(i.min(2 * self.half - i));
        }
        T::from_usize(m).unwrap() * self.h
    }

    pub fn contains(&self, x: &Point<T>) -> bool {
        let r = self.box_radius() * (T::one() + T::lit(1e-12));
        (0..self.dim).all(|k| x[k].abs() <= r)
    }

    pub fn nodes(&self) -> impl Iterator<Item = usize> {
        0..self.num_nodes()
    }

    /// Nodes inside the closed Euclidean ball of radius `r` centered at 0.
    pub fn nodes_in_ball(&self, r: T) -> Vec<usize> {
        let tol = r * T::lit(1e-12);
        self.nodes()
            .filter(|&i| norm(&self.node_point(i), self.dim) <= r + tol)
            .collect()
    }

    /// Cell volume `h^n`.
    pub fn cell_volume(&self) -> T {
        self.h.powi(self.dim as i32)
    }
}

/// Analytic values of a grid function outside its box.
#[derive(Debug, Clone, PartialEq)]
pub enum ExteriorClosure<T> {
    Zero,
    Constant(T),
    /// `amplitude * |x|^(-exponent)`
    PowerDecay { amplitude: T, exponent: T },
    /// `amplitude * sign(x[axis])`
    SignStep { axis: usize, amplitude: T },
    /// Radial profile, linearly interpolated in `|x|`, constant beyond the ends.
    RadialTable { radii: Vec<T>, values: Vec<T> },
}

impl<T: Real> ExteriorClosure<T> {
    /// Samples `profile` on `count` radii spaced geometrically in `[r_min, r_max]`.
    pub fn radial_table(profile: impl Fn(T) -> T, r_min: T, r_max: T, count: usize) -> Self {
        let ratio = (r_max / r_min).ln();
        let radii: Vec<T> = (0..count)
            .map(|k| {
                let t = T::from_usize(k).unwrap() / T::from_usize(count - 1).unwrap();
                r_min * (ratio * t).exp()
            })
            .collect();
        let values = radii.iter().map(|&r| profile(r)).collect();
        ExteriorClosure::RadialTable { radii, values }
    }

    pub fn eval(&self, x: &Point<T>, n: usize) -> T {
        match self {
            ExteriorClosure::Zero => T::zero(),
            ExteriorClosure::Constant(c) => *c,
            ExteriorClosure::PowerDecay { amplitude, exponent } => {
                *amplitude * norm(x, n).powf(-*exponent)
            }
            ExteriorClosure::SignStep { axis, amplitude } => {
                let s = x[*axis];
                if s > T::zero() {
                    *amplitude
                } else if s < T::zero() {
                    -*amplitude
                } else {
                    T::zero()
                }
            }
            ExteriorClosure::RadialTable { radii, values } => {
                let r = norm(x, n);
                let last = radii.len() - 1;
                if r <= radii[0] {
                    return values[0];
                }
                if r >= radii[last] {
                    return values[last];
                }
                let k = radii.partition_point(|&ri| ri <= r).min(last) - 1;
                let t = (r - radii[k]) / (radii[k + 1] - radii[k]);
                values[k] + t * (values[k + 1] - values[k])
            }
        }
    }

    /// A bound `B_ext` with `|closure(x)| <= B_ext` whenever `|x| > box_radius`.
    pub fn bound(&self, box_radius: T) -> T {
        match self {
            ExteriorClosure::Zero => T::zero(),
            ExteriorClosure::Constant(c) => c.abs(),
            ExteriorClosure::PowerDecay { amplitude, exponent } => {
                amplitude.abs() * box_radius.powf(-*exponent)
            }
            ExteriorClosure::SignStep { amplitude, .. } => amplitude.abs(),
            ExteriorClosure::RadialTable { values, .. } => {
                values.iter().fold(T::zero(), |m, v| m.max(v.abs()))
            }
        }
    }

    /// An upper bound for `closure(x)` (signed) whenever `|x| > box_radius`.
    pub fn upper_bound_outside(&self, box_radius: T) -> T {
        match self {
            ExteriorClosure::Zero => T::zero(),
            ExteriorClosure::Constant(c) => *c,
            ExteriorClosure::PowerDecay { amplitude, exponent } => {
                (*amplitude * box_radius.powf(-*exponent)).max(T::zero())
            }
            ExteriorClosure::SignStep { amplitude, .. } => amplitude.abs(),
            ExteriorClosure::RadialTable { values, .. } => {
                values.iter().fold(T::neg_infinity(), |m, &v| m.max(v))
            }
        }
    }

    /// Mean of `closure(z) + closure(-z)` over directions as `|z| -> inf`, halved.
    pub fn far_limit(&self) -> T {
        match self {
            ExteriorClosure::Zero
            | ExteriorClosure::PowerDecay { .. }
            | ExteriorClosure::SignStep { .. } => T::zero(),
            ExteriorClosure::Constant(c) => *c,
            ExteriorClosure::RadialTable { values, .. } => *values.last().unwrap(),
        }
    }

    /// True when the closure equals its far limit everywhere outside the box.
    pub fn is_constant(&self) -> bool {
        matches!(self, ExteriorClosure::Zero | ExteriorClosure::Constant(_))
    }

    pub fn negated(&self) -> Self {
        self.scaled_values(-T::one())
    }

    /// Multiplies closure values by `s`.
    pub fn scaled_values(&self, s: T) -> Self {
        match self {
            ExteriorClosure::Zero => ExteriorClosure::Zero,
            ExteriorClosure::Constant(c) => ExteriorClosure::Constant(*c * s),
            ExteriorClosure::PowerDecay { amplitude, exponent } => ExteriorClosure::PowerDecay {
                amplitude: *amplitude * s,
                exponent: *exponent,
            },
            ExteriorClosure::SignStep { axis, amplitude } => ExteriorClosure::SignStep {
                axis: *axis,
                amplitude: *amplitude * s,
            },
            ExteriorClosure::RadialTable { radii, values } => ExteriorClosure::RadialTable {
                radii: radii.clone(),
                values: values.iter().map(|&v| v * s).collect(),
            },
        }
    }

    /// Closure of `x -> u(s x)`.
    pub fn dilated(&self, s: T) -> Self {
        match self {
            ExteriorClosure::PowerDecay { amplitude, exponent } => ExteriorClosure::PowerDecay {
                amplitude: *amplitude * s.powf(-*exponent),
                exponent: *exponent,
            },
            ExteriorClosure::RadialTable { radii, values } => ExteriorClosure::RadialTable {
                radii: radii.iter().map(|&r| r / s).collect(),
                values: values.clone(),
            },
            other => other.clone(),
        }
    }

    /// Adds a constant to every closure value, when representable.
    pub fn shifted(&self, c: T) -> Option<Self> {
        match self {
            ExteriorClosure::Zero => Some(ExteriorClosure::Constant(c)),
            ExteriorClosure::Constant(v) => Some(ExteriorClosure::Constant(*v + c)),
            ExteriorClosure::RadialTable { radii, values } => Some(ExteriorClosure::RadialTable {
                radii: radii.clone(),
                values: values.iter().map(|&v| v + c).collect(),
            }),
            _ => None,
        }
    }

    pub fn tag(&self) -> &'static str {
        match self {
            ExteriorClosure::Zero => "zero",
            ExteriorClosure::Constant(_) => "constant",
            ExteriorClosure::PowerDecay { .. } => "power_decay",
            ExteriorClosure::SignStep { .. } => "sign_step",
            ExteriorClosure::RadialTable { .. } => "radial_table",
        }
    }

    fn params_string(&self) -> String {
        let f = |x: T| format!("{:.16e}", x.as_f64());
        match self {
            ExteriorClosure::Zero => String::new(),
            ExteriorClosure::Constant(c) => f(*c),
            ExteriorClosure::PowerDecay { amplitude, exponent } => {
                format!("{};{}", f(*amplitude), f(*exponent))
            }
            ExteriorClosure::SignStep { axis, amplitude } => format!("{axis};{}", f(*amplitude)),
            ExteriorClosure::RadialTable { radii, values } => radii
                .iter()
                .zip(values)
                .map(|(&r, &v)| format!("{}:{}", f(r), f(v)))
                .collect::<Vec<_>>()
                .join(";"),
        }
    }

    fn parse(tag: &str, params: &str) -> Result<Self> {
        let num = |s: &str| -> Result<T> {
            s.trim()
                .parse::<f64>()
                .map(T::lit)
                .map_err(|e| Error::Parse(format!("bad number {s:?}: {e}")))
        };
        let parts: Vec<&str> = params.split(';').filter(|s| !s.trim().is_empty()).collect();
        let want = |k: usize| -> Result<()> {
            if parts.len() == k {
                Ok(())
            } else {
                Err(Error::Parse(format!("closure {tag} expects {k} params, got {}", parts.len())))
            }
        };
        Ok(match tag {
            "zero" => ExteriorClosure::Zero,
            "constant" => {
                want(1)?;
                ExteriorClosure::Constant(num(parts[0])?)
            }
            "power_decay" => {
                want(2)?;
                ExteriorClosure::PowerDecay {
                    amplitude: num(parts[0])?,
                    exponent: num(parts[1])?,
                }
            }
            "sign_step" => {
                want(2)?;
                ExteriorClosure::SignStep {
                    axis: parts[0]
                        .trim()
                        .parse()
                        .map_err(|e| Error::Parse(format!("bad axis: {e}")))?,
                    amplitude: num(parts[1])?,
                }
            }
            "radial_table" => {
                let mut radii = Vec::new();
                let mut values = Vec::new();
                for p in parts {
                    let (r, v) = p
                        .split_once(':')
                        .ok_or_else(|| Error::Parse(format!("bad table entry {p:?}")))?;
                    radii.push(num(r)?);
                    values.push(num(v)?);
                }
                if radii.len() < 2 {
                    return Err(Error::Parse("radial table needs two entries".into()));
                }
                ExteriorClosure::RadialTable { radii, values }
            }
            other => return Err(Error::Parse(format!("unknown closure tag {other:?}"))),
        })
    }
}

/// Values on the nodes of a [`GridSpec`] plus an exterior closure.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction<T> {
    spec: GridSpec<T>,
    values: Vec<T>,
    exterior: ExteriorClosure<T>,
    ext_bound: T,
}

impl<T: Real> GridFunction<T> {
    pub fn from_values(spec: GridSpec<T>, values: Vec<T>, exterior: ExteriorClosure<T>) -> Result<Self> {
        if values.len() != spec.num_nodes() {
            return Err(Error::InvalidGrid(format!(
                "expected {} values, got {}",
                spec.num_nodes(),
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(non_finite(&spec, i, values[i]));
        }
        let ext_bound = exterior.bound(spec.box_radius());
        if !ext_bound.is_finite() {
            return Err(Error::InvalidGrid("exterior closure is unbounded".into()));
        }
        Ok(Self {
            spec,
            values,
            exterior,
            ext_bound,
        })
    }

    pub fn zeros(spec: GridSpec<T>) -> Self {
        Self::from_values(spec, vec![T::zero(); spec.num_nodes()], ExteriorClosure::Zero).unwrap()
    }

    pub fn spec(&self) -> &GridSpec<T> {
        &self.spec
    }

    pub fn dim(&self) -> usize {
        self.spec.dim
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn exterior(&self) -> &ExteriorClosure<T> {
        &self.exterior
    }

    pub fn exterior_bound(&self) -> T {
        self.ext_bound
    }

    #[inline]
    pub fn node_value(&self, flat: usize) -> T {
        self.values[flat]
    }

    /// `max(max |values|, B_ext)`: a bound for `|u|` on all of `R^n`.
    pub fn sup_norm(&self) -> T {
        self.values.iter().fold(self.ext_bound, |m, v| m.max(v.abs()))
    }

    pub fn max_abs_value(&self) -> T {
        self.values.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }

    /// Total evaluation on `R^n`.
    pub fn eval_at(&self, x: &Point<T>) -> T {
        let n = self.spec.dim;
        if !self.spec.contains(x) {
            return self.exterior.eval(x, n);
        }
        let m = self.spec.points_per_axis();
        let half = T::from_usize(self.spec.half).unwrap();
        let mut base = [0usize; 2];
        let mut frac = [T::zero(); 2];
        for k in 0..n {
            let t = x[k] / self.spec.h + half;
            let mut i0 = t.floor();
            let mut f = t - i0;
            if f < T::lit(1e-9) {
                f = T::zero();
            } else if f > T::one() - T::lit(1e-9) {
                f = T::zero();
                i0 = i0 + T::one();
            }
            let mut i = i0.to_usize().unwrap_or(0).min(m - 1);
            if i == m - 1 && f > T::zero() {
                i = m - 2;
                f = T::one();
            }
            base[k] = i;
            frac[k] = f;
        }
        if n == 1 {
            let i = base[0];
            if frac[0] == T::zero() {
                return self.values[i];
            }
            let f = frac[0];
            (T::one() - f) * self.values[i] + f * self.values[i + 1]
        } else {
            let (i, j) = (base[0], base[1]);
            let (fx, fy) = (frac[0], frac[1]);
            let at = |a: usize, b: usize| self.values[a + m * b];
            if fx == T::zero() && fy == T::zero() {
                return at(i, j);
            }
            if fy == T::zero() {
                return (T::one() - fx) * at(i, j) + fx * at(i + 1, j);
            }
            if fx == T::zero() {
                return (T::one() - fy) * at(i, j) + fy * at(i, j + 1);
            }
            (T::one() - fy) * ((T::one() - fx) * at(i, j) + fx * at(i + 1, j))
                + fy * ((T::one() - fx) * at(i, j + 1) + fx * at(i + 1, j + 1))
        }
    }

    /// Value at the integer lattice point `idx` (relative to the origin
    /// node), which may lie outside the box.
    #[inline]
    pub fn lattice_value(&self, idx: [isize; 2]) -> T {
        let half = self.spec.half as isize;
        let inside = (0..self.spec.dim).all(|k| idx[k].abs() <= half);
        if inside {
            let i = (idx[0] + half) as usize;
            let j = if self.spec.dim == 2 { (idx[1] + half) as usize } else { 0 };
            self.values[self.spec.flat([i, j])]
        } else {
            let h = self.spec.h;
            let p = [
                T::from_isize(idx[0]).unwrap() * h,
                T::from_isize(idx[1]).unwrap() * h,
            ];
            self.exterior.eval(&p, self.spec.dim)
        }
    }

    pub fn map_values(&self, f: impl Fn(&Point<T>, T) -> T) -> Result<Self> {
        let values = (0..self.values.len())
            .map(|i| f(&self.spec.node_point(i), self.values[i]))
            .collect();
        Self::from_values(self.spec, values, self.exterior.clone())
    }

    pub fn with_exterior(&self, exterior: ExteriorClosure<T>) -> Result<Self> {
        Self::from_values(self.spec, self.values.clone(), exterior)
    }

    pub fn negated(&self) -> Self {
        Self {
            spec: self.spec,
            values: self.values.iter().map(|&v| -v).collect(),
            exterior: self.exterior.negated(),
            ext_bound: self.ext_bound,
        }
    }

    /// Node-wise difference. The closure of the result is the difference of
    /// closures when it has a tagged form (both constant-like), otherwise the
    /// closure of `self` minus the far limit of `other`.
    pub fn sub(&self, other: &Self) -> Result<Self> {
        if self.spec != other.spec {
            return Err(Error::InvalidGrid("grid mismatch in subtraction".into()));
        }
        let values = self.values.iter().zip(&other.values).map(|(&a, &b)| a - b).collect();
        let exterior = match (&self.exterior, &other.exterior) {
            (a, ExteriorClosure::Zero) => a.clone(),
            (ExteriorClosure::Zero, b) => b.negated(),
            (a, b) if a == b => ExteriorClosure::Zero,
            (a, b) => a
                .shifted(-b.far_limit())
                .unwrap_or_else(|| a.clone()),
        };
        Self::from_values(self.spec, values, exterior)
    }

    pub fn add_constant(&self, c: T) -> Result<Self> {
        let exterior = self
            .exterior
            .shifted(c)
            .ok_or_else(|| Error::Precondition("closure cannot absorb a constant shift".into()))?;
        let values = self.values.iter().map(|&v| v + c).collect();
        Self::from_values(self.spec, values, exterior)
    }

    /// Writes the grid CSV format: two header lines (schema and values)
    /// followed by `i1[,i2],x1[,x2],value` rows with 17 significant digits.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let s = &self.spec;
        writeln!(out, "# n,h,R_box,ext_tag,ext_params").unwrap();
        writeln!(
            out,
            "# {},{:.16e},{:.16e},{},{}",
            s.dim,
            s.h.as_f64(),
            s.box_radius().as_f64(),
            self.exterior.tag(),
            self.exterior.params_string()
        )
        .unwrap();
        for i in s.nodes() {
            let idx = s.unflat(i);
            let p = s.node_point(i);
            if s.dim == 1 {
                writeln!(out, "{},{:.16e},{:.16e}", idx[0], p[0].as_f64(), self.values[i].as_f64())
            } else {
                writeln!(
                    out,
                    "{},{},{:.16e},{:.16e},{:.16e}",
                    idx[0],
                    idx[1],
                    p[0].as_f64(),
                    p[1].as_f64(),
                    self.values[i].as_f64()
                )
            }
            .unwrap();
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut header: Option<(usize, T, T, ExteriorClosure<T>)> = None;
        let mut rows = Vec::new();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                let rest = rest.trim();
                if header.is_some() || rest.starts_with("n,") || rest.starts_with("provenance") {
                    continue;
                }
                let fields: Vec<&str> = rest.splitn(5, ',').collect();
                if fields.len() < 4 {
                    return Err(Error::Parse(format!("bad grid header {line:?}")));
                }
                let parse = |s: &str| -> Result<f64> {
                    s.trim().parse::<f64>().map_err(|e| Error::Parse(format!("{s:?}: {e}")))
                };
                let n: usize = fields[0]
                    .trim()
                    .parse()
                    .map_err(|e| Error::Parse(format!("bad dimension: {e}")))?;
                let ext = ExteriorClosure::parse(fields[3].trim(), fields.get(4).copied().unwrap_or(""))?;
                header = Some((n, T::lit(parse(fields[1])?), T::lit(parse(fields[2])?), ext));
                continue;
            }
            rows.push(line.to_string());
        }
        let (n, h, r, ext) = header.ok_or_else(|| Error::Parse("missing grid header".into()))?;
        let spec = GridSpec::new(n, r, h)?;
        if rows.len() != spec.num_nodes() {
            return Err(Error::Parse(format!(
                "expected {} rows, found {}",
                spec.num_nodes(),
                rows.len()
            )));
        }
        let mut values = vec![T::zero(); spec.num_nodes()];
        for row in rows {
            let cols: Vec<&str> = row.split(',').collect();
            if cols.len() != 2 * n + 1 {
                return Err(Error::Parse(format!("bad row {row:?}")));
            }
            let mut idx = [0usize; 2];
            for k in 0..n {
                idx[k] = cols[k]
                    .trim()
                    .parse()
                    .map_err(|e| Error::Parse(format!("bad index in {row:?}: {e}")))?;
            }
            let v: f64 = cols[2 * n]
                .trim()
                .parse()
                .map_err(|e| Error::Parse(format!("bad value in {row:?}: {e}")))?;
            values[spec.flat(idx)] = T::lit(v);
        }
        Self::from_values(spec, values, ext)
    }
}

fn non_finite<T: Real>(spec: &GridSpec<T>, flat: usize, value: T) -> Error {
    let idx = spec.unflat(flat);
    let p = spec.node_point(flat);
    Error::NonFinite {
        node: idx[..spec.dim()].to_vec(),
        point: p[..spec.dim()].iter().map(|v| v.as_f64()).collect(),
        value: value.as_f64(),
    }
}

/// Samples `f` at every node.
pub fn sample_function<T: Real>(
    spec: GridSpec<T>,
    f: impl Fn(&Point<T>) -> T,
    exterior: ExteriorClosure<T>,
) -> Result<GridFunction<T>> {
    let mut values = Vec::with_capacity(spec.num_nodes());
    for i in spec.nodes() {
        let v = f(&spec.node_point(i));
        if !v.is_finite() {
            return Err(non_finite(&spec, i, v));
        }
        values.push(v);
    }
    GridFunction::from_values(spec, values, exterior)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn spec1(h: f64, r: f64) -> GridSpec<f64> {
        GridSpec::new(1, r, h).unwrap()
    }

    #[test]
    fn rejects_small_box_and_bad_spacing() {
        assert!(GridSpec::<f64>::new(1, 3.0, 0.5).is_err());
        assert!(GridSpec::<f64>::new(2, 5.0, 0.5).is_err());
        assert!(GridSpec::<f64>::new(1, 4.0, 0.0).is_err());
        assert!(GridSpec::<f64>::new(3, 8.0, 0.5).is_err());
        let s = GridSpec::<f64>::new(2, 6.0, 0.25).unwrap();
        assert_eq!(s.points_per_axis() % 2, 1);
        assert_eq!(s.node_point(s.origin()), [0.0, 0.0]);
    }

    #[test]
    fn zero_function() {
        let u = sample_function(spec1(0.5, 4.0), |_| 0.0, ExteriorClosure::Zero).unwrap();
        assert!(u.values().iter().all(|&v| v == 0.0));
        assert_eq!(u.eval_at(&[17.0, 0.0]), 0.0);
    }

    #[test]
    fn squares_on_nodes() {
        let s = spec1(0.5, 4.0);
        let u = sample_function(s, |x| x[0] * x[0], ExteriorClosure::PowerDecay { amplitude: 1.0, exponent: 2.0 })
            .unwrap();
        let expect = [(-1.0, 1.0), (-0.5, 0.25), (0.0, 0.0), (0.5, 0.25), (1.0, 1.0)];
        for (x, v) in expect {
            let i = s.node_at(&[x, 0.0]).unwrap();
            assert_eq!(u.node_value(i), v);
            assert_eq!(u.eval_at(&[x, 0.0]), v);
        }
        // outside the box the closure answers, not an extrapolation of x^2
        assert_eq!(u.eval_at(&[10.0, 0.0]), 0.01);
    }

    #[test]
    fn interpolation_between_nodes() {
        let s = spec1(0.5, 4.0);
        let u = sample_function(
            s,
            |x| (-x[0] * x[0]).exp(),
            ExteriorClosure::PowerDecay { amplitude: (-16.0f64).exp() * 16.0, exponent: 2.0 },
        )
        .unwrap();
        let expect = 0.5 * (1.0 + (-0.25f64).exp());
        assert!((u.eval_at(&[0.25, 0.0]) - expect).abs() < 1e-15);
    }

    #[test]
    fn bilinear_2d() {
        let s = GridSpec::new(2, 6.0, 0.5).unwrap();
        let u = sample_function(s, |x| 1.0 + 2.0 * x[0] - x[1] + x[0] * x[1], ExteriorClosure::Zero).unwrap();
        // bilinear functions are reproduced exactly
        let p: Point<f64> = [0.3, -0.7];
        let exact = 1.0 + 2.0 * p[0] - p[1] + p[0] * p[1];
        assert!((u.eval_at(&p) - exact).abs() < 1e-13);
    }

    #[test]
    fn constant_everywhere() {
        let s = GridSpec::new(2, 6.0, 0.5).unwrap();
        let u = sample_function(s, |_| 3.5, ExteriorClosure::Constant(3.5)).unwrap();
        for p in [[0.1, 0.2], [5.9, -6.0], [100.0, 3.0], [-7.0, -7.0]] {
            assert_eq!(u.eval_at(&p), 3.5);
        }
    }

    #[test]
    fn non_finite_sample_is_rejected_with_node() {
        let err = sample_function(spec1(0.5, 4.0), |x| 1.0 / x[0], ExteriorClosure::Zero).unwrap_err();
        match err {
            Error::NonFinite { node, point, .. } => {
                assert_eq!(node, vec![8]);
                assert_eq!(point, vec![0.0]);
            }
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn csv_round_trip_2d() {
        let s = GridSpec::new(2, 6.0, 0.5).unwrap();
        let u = sample_function(s, |x: &Point<f64>| x[0].sin() * x[1].cos(), ExteriorClosure::SignStep { axis: 0, amplitude: 0.5 })
            .unwrap();
        let text = u.to_csv();
        assert!(text.starts_with("# n,h,R_box,ext_tag,ext_params\n# 2,"));
        let v = GridFunction::<f64>::from_csv(&text).unwrap();
        assert_eq!(u, v);
    }

    #[test]
    fn radial_table_closure_interpolates() {
        let c = ExteriorClosure::<f64>::radial_table(|r| (-r * r).exp(), 1.0, 10.0, 200);
        let v = c.eval(&[2.0, 0.0], 1);
        assert!((v - (-4.0f64).exp()).abs() < 1e-3);
        assert!((c.eval(&[50.0, 0.0], 1) / (-100.0f64).exp() - 1.0).abs() < 1e-10);
    }

    proptest! {
        #[test]
        fn nodes_are_identity_and_cells_are_lipschitz(
            vals in proptest::collection::vec(-5.0f64..5.0, 17),
            a in 0.0f64..1.0, b in 0.0f64..1.0, cell in 0usize..16,
        ) {
            let s = spec1(0.5, 4.0);
            let u = GridFunction::from_values(s, vals.clone(), ExteriorClosure::Constant(2.0)).unwrap();
            for i in s.nodes() {
                prop_assert_eq!(u.eval_at(&s.node_point(i)), vals[i]);
            }
            let x0 = s.coord(cell);
            let (x, y) = (x0 + 0.5 * a, x0 + 0.5 * b);
            let slope = (vals[cell + 1] - vals[cell]).abs() / 0.5;
            let d = (u.eval_at(&[x, 0.0]) - u.eval_at(&[y, 0.0])).abs();
            prop_assert!(d <= slope * (x - y).abs() + 1e-12);
            // boundedness: interior and exterior samples stay below sup_norm
            for p in [x, y, 9.0, -13.0] {
                prop_assert!(u.eval_at(&[p, 0.0]).abs() <= u.sup_norm() + 1e-12);
            }
        }
    }
}
