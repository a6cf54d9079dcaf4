use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::NodeIndex;

/// Where a generator is evaluated: grid time plus lattice node.
///
/// Plain generators only look at `t`; penalized generators also read the
/// barrier values at `node`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Site {
    pub t: f64,
    pub node: NodeIndex,
}

impl Site {
    pub fn new(t: f64, node: NodeIndex) -> Self {
        Self { t, node }
    }

    /// A site detached from any lattice node.
    pub fn at_time(t: f64) -> Self {
        Self {
            t,
            node: NodeIndex::ROOT,
        }
    }
}

/// A driver `f(t, y, z)` together with its structural constants.
pub trait Generator: Sync {
    fn value(&self, at: Site, y: f64, z: f64) -> f64;

    /// Derivative in `y` (any element of the subdifferential at kinks).
    fn dy(&self, at: Site, y: f64, z: f64) -> f64;

    /// One-sided Lipschitz constant `mu` in `y`.
    fn monotonicity(&self) -> f64;

    /// Lipschitz constant `lambda` in `z`.
    fn z_lipschitz(&self) -> f64;
}

/// A deterministic function of time: a constant or linear interpolation
/// between `(t, value)` knots, flat outside the knot range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TimeFunction {
    Constant(f64),
    Knots(Vec<(f64, f64)>),
}

impl Default for TimeFunction {
    fn default() -> Self {
        TimeFunction::Constant(0.0)
    }
}

impl TimeFunction {
    pub fn eval(&self, t: f64) -> f64 {
        match self {
            TimeFunction::Constant(c) => *c,
            TimeFunction::Knots(knots) => interpolate(knots, t),
        }
    }

    pub fn validate(&self, what: &str) -> Result<()> {
        match self {
            TimeFunction::Constant(c) if c.is_finite() => Ok(()),
            TimeFunction::Constant(c) => Err(Error::InvalidConfiguration(format!(
                "{what}: constant {c} is not finite"
            ))),
            TimeFunction::Knots(knots) => validate_knots(knots, what),
        }
    }

    fn min_value(&self) -> f64 {
        match self {
            TimeFunction::Constant(c) => *c,
            TimeFunction::Knots(k) => k.iter().map(|p| p.1).fold(f64::INFINITY, f64::min),
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            TimeFunction::Constant(c) => *c == 0.0,
            TimeFunction::Knots(k) => k.iter().all(|p| p.1 == 0.0),
        }
    }
}

pub(crate) fn validate_knots(knots: &[(f64, f64)], what: &str) -> Result<()> {
    if knots.is_empty() {
        return Err(Error::InvalidConfiguration(format!("{what}: no knots")));
    }
    if knots.iter().any(|(t, v)| !t.is_finite() || !v.is_finite()) {
        return Err(Error::InvalidConfiguration(format!(
            "{what}: knots must be finite"
        )));
    }
    if knots.windows(2).any(|w| w[1].0 <= w[0].0) {
        return Err(Error::InvalidConfiguration(format!(
            "{what}: knot times must be strictly increasing"
        )));
    }
    Ok(())
}

pub(crate) fn interpolate(knots: &[(f64, f64)], t: f64) -> f64 {
    let first = knots[0];
    let last = knots[knots.len() - 1];
    if t <= first.0 {
        return first.1;
    }
    if t >= last.0 {
        return last.1;
    }
    let k = knots.partition_point(|p| p.0 <= t);
    let (t0, v0) = knots[k - 1];
    let (t1, v1) = knots[k];
    if t == t0 {
        return v0;
    }
    v0 + (v1 - v0) * (t - t0) / (t1 - t0)
}

/// Parameters of the sublinear-in-`z` growth condition (Z).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ZCondition {
    pub alpha: f64,
    pub gamma: f64,
    #[serde(default)]
    pub g: TimeFunction,
}

/// Closed forms for `f(t, y, z)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case")]
pub enum GeneratorForm {
    /// `a * y + b * z + c(t)`.
    Linear {
        a: f64,
        b: f64,
        #[serde(default)]
        c: TimeFunction,
    },
    /// `-y^3 + mu_tilde * y + c(t)`.
    MonotonePoly {
        mu_tilde: f64,
        #[serde(default)]
        c: TimeFunction,
    },
    /// `-d(t) y^3 + a(t) y + b(t) z + c(t)` with coefficients held constant on
    /// `[times[k], times[k + 1])`. Empty coefficient lists mean zero.
    Tabulated {
        times: Vec<f64>,
        #[serde(default)]
        cubic: Vec<f64>,
        #[serde(default)]
        linear: Vec<f64>,
        #[serde(default)]
        z: Vec<f64>,
        #[serde(default)]
        constant: Vec<f64>,
    },
}

/// A generator with declared monotonicity (`mu`) and `z`-Lipschitz (`lambda`)
/// constants. Undeclared constants default to the sharp values of the form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    #[serde(flatten)]
    pub form: GeneratorForm,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z_condition: Option<ZCondition>,
}

fn coeff(v: &[f64], k: usize) -> f64 {
    v.get(k).copied().unwrap_or(0.0)
}

impl GeneratorSpec {
    pub fn new(form: GeneratorForm) -> Self {
        Self {
            form,
            mu: None,
            lambda: None,
            z_condition: None,
        }
    }

    pub fn zero() -> Self {
        Self::linear(0.0, 0.0, 0.0)
    }

    pub fn linear(a: f64, b: f64, c: f64) -> Self {
        Self::new(GeneratorForm::Linear {
            a,
            b,
            c: TimeFunction::Constant(c),
        })
    }

    pub fn monotone_poly(mu_tilde: f64, c: f64) -> Self {
        Self::new(GeneratorForm::MonotonePoly {
            mu_tilde,
            c: TimeFunction::Constant(c),
        })
    }

    pub fn with_constants(mut self, mu: f64, lambda: f64) -> Self {
        self.mu = Some(mu);
        self.lambda = Some(lambda);
        self
    }

    pub fn with_z_condition(mut self, z: ZCondition) -> Self {
        self.z_condition = Some(z);
        self
    }

    fn sharp_mu(&self) -> f64 {
        match &self.form {
            GeneratorForm::Linear { a, .. } => *a,
            GeneratorForm::MonotonePoly { mu_tilde, .. } => *mu_tilde,
            GeneratorForm::Tabulated { linear, .. } => {
                linear.iter().copied().reduce(f64::max).unwrap_or(0.0)
            }
        }
    }

    fn sharp_lambda(&self) -> f64 {
        match &self.form {
            GeneratorForm::Linear { b, .. } => b.abs(),
            GeneratorForm::MonotonePoly { .. } => 0.0,
            GeneratorForm::Tabulated { z, .. } => z.iter().map(|b| b.abs()).fold(0.0, f64::max),
        }
    }

    pub fn mu(&self) -> f64 {
        self.mu.unwrap_or_else(|| self.sharp_mu())
    }

    pub fn lambda(&self) -> f64 {
        self.lambda.unwrap_or_else(|| self.sharp_lambda())
    }

    fn tab_index(times: &[f64], t: f64) -> usize {
        times.partition_point(|&s| s <= t).saturating_sub(1)
    }

    /// `f(t, y, z)` without input checks.
    pub fn value_at(&self, t: f64, y: f64, z: f64) -> f64 {
        match &self.form {
            GeneratorForm::Linear { a, b, c } => a * y + b * z + c.eval(t),
            GeneratorForm::MonotonePoly { mu_tilde, c } => -y * y * y + mu_tilde * y + c.eval(t),
            GeneratorForm::Tabulated {
                times,
                cubic,
                linear,
                z: zc,
                constant,
            } => {
                let k = Self::tab_index(times, t);
                -coeff(cubic, k) * y * y * y
                    + coeff(linear, k) * y
                    + coeff(zc, k) * z
                    + coeff(constant, k)
            }
        }
    }

    fn dy_at(&self, t: f64, y: f64) -> f64 {
        match &self.form {
            GeneratorForm::Linear { a, .. } => *a,
            GeneratorForm::MonotonePoly { mu_tilde, .. } => -3.0 * y * y + mu_tilde,
            GeneratorForm::Tabulated {
                times,
                cubic,
                linear,
                ..
            } => {
                let k = Self::tab_index(times, t);
                -3.0 * coeff(cubic, k) * y * y + coeff(linear, k)
            }
        }
    }

    /// `f(t, y, z)`; non-finite inputs or outputs are a numeric-domain error.
    pub fn eval(&self, t: f64, y: f64, z: f64) -> Result<f64> {
        if !(t.is_finite() && y.is_finite() && z.is_finite()) {
            return Err(Error::NumericDomain(format!(
                "generator arguments must be finite: t = {t}, y = {y}, z = {z}"
            )));
        }
        let v = self.value_at(t, y, z);
        if !v.is_finite() {
            return Err(Error::NumericDomain(format!(
                "generator value is not finite at t = {t}, y = {y}, z = {z}"
            )));
        }
        Ok(v)
    }

    /// True when `f` does not depend on `(y, z)`.
    pub fn is_exogenous(&self) -> bool {
        match &self.form {
            GeneratorForm::Linear { a, b, .. } => *a == 0.0 && *b == 0.0,
            GeneratorForm::MonotonePoly { .. } => false,
            GeneratorForm::Tabulated {
                cubic, linear, z, ..
            } => cubic.iter().chain(linear).chain(z).all(|&c| c == 0.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfiguration(msg));
        match &self.form {
            GeneratorForm::Linear { a, b, c } => {
                if !(a.is_finite() && b.is_finite()) {
                    return bad("linear generator coefficients must be finite".into());
                }
                c.validate("generator c(t)")?;
            }
            GeneratorForm::MonotonePoly { mu_tilde, c } => {
                if !mu_tilde.is_finite() {
                    return bad("mu_tilde must be finite".into());
                }
                c.validate("generator c(t)")?;
            }
            GeneratorForm::Tabulated {
                times,
                cubic,
                linear,
                z,
                constant,
            } => {
                if times.is_empty() || times.windows(2).any(|w| w[1] <= w[0]) {
                    return bad("tabulated generator times must be nonempty and strictly increasing".into());
                }
                for (name, v) in [("cubic", cubic), ("linear", linear), ("z", z), ("constant", constant)] {
                    if !v.is_empty() && v.len() != times.len() {
                        return bad(format!(
                            "tabulated coefficient `{name}` has {} entries, expected {}",
                            v.len(),
                            times.len()
                        ));
                    }
                    if v.iter().any(|c| !c.is_finite()) {
                        return bad(format!("tabulated coefficient `{name}` must be finite"));
                    }
                }
                if cubic.iter().any(|&d| d < 0.0) {
                    return bad("tabulated cubic coefficients must be nonnegative".into());
                }
            }
        }
        if let Some(mu) = self.mu {
            if !mu.is_finite() {
                return bad(format!("declared mu {mu} is not finite"));
            }
        }
        if let Some(l) = self.lambda {
            if !(l.is_finite() && l >= 0.0) {
                return bad(format!("declared lambda {l} must be finite and nonnegative"));
            }
        }
        if let Some(zc) = &self.z_condition {
            if !(zc.alpha > 0.0 && zc.alpha < 1.0) {
                return bad(format!("z-condition alpha {} must lie in (0, 1)", zc.alpha));
            }
            if !(zc.gamma >= 0.0) {
                return bad(format!("z-condition gamma {} must be nonnegative", zc.gamma));
            }
            zc.g.validate("z-condition g")?;
            if zc.g.min_value() < 0.0 {
                return bad("z-condition g must be nonnegative".into());
            }
        }
        Ok(())
    }
}

impl Generator for GeneratorSpec {
    fn value(&self, at: Site, y: f64, z: f64) -> f64 {
        self.value_at(at.t, y, z)
    }

    fn dy(&self, at: Site, y: f64, _z: f64) -> f64 {
        self.dy_at(at.t, y)
    }

    fn monotonicity(&self) -> f64 {
        self.mu()
    }

    fn z_lipschitz(&self) -> f64 {
        self.lambda()
    }
}

/// Sampling box for [`generator_structure_check`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleBox {
    pub t: (f64, f64),
    pub y: (f64, f64),
    pub z: (f64, f64),
}

impl SampleBox {
    pub fn new(horizon: f64, y_range: f64, z_range: f64) -> Self {
        Self {
            t: (0.0, horizon),
            y: (-y_range, y_range),
            z: (-z_range, z_range),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructureReport {
    pub h2_ok: bool,
    pub h3_ok: bool,
    pub h5_ok: bool,
    /// Largest of the signed h2 and h3 violations; nonpositive means no violation.
    pub worst_violation: f64,
    pub worst_h2: f64,
    pub worst_h3: f64,
    /// Largest sampled `|f(t, y, 0) - f(t, 0, 0)|`.
    pub h5_sup: f64,
}

const STRUCTURE_TOL: f64 = 1e-12;

/// Samples `samples` point pairs in `bounds` and checks the declared constants:
/// `(f(y) - f(y'))(y - y') <= mu (y - y')^2` and `|f(z) - f(z')| <= lambda |z - z'|`.
pub fn generator_structure_check(
    gen: &GeneratorSpec,
    bounds: &SampleBox,
    samples: usize,
) -> Result<StructureReport> {
    if samples < 2 {
        return Err(Error::InvalidArgument(format!(
            "structure check needs at least 2 samples, got {samples}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_2024);
    let draw = |rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)| {
        if hi > lo {
            rng.random_range(lo..hi)
        } else {
            lo
        }
    };
    let mu = gen.mu();
    let lambda = gen.lambda();
    let mut worst_h3 = f64::NEG_INFINITY;
    let mut worst_h2 = f64::NEG_INFINITY;
    let mut h5_sup = 0.0f64;
    for _ in 0..samples {
        let t = draw(&mut rng, bounds.t);
        let (y1, y2) = (draw(&mut rng, bounds.y), draw(&mut rng, bounds.y));
        let (z1, z2) = (draw(&mut rng, bounds.z), draw(&mut rng, bounds.z));

        let dy = y1 - y2;
        let h3 = (gen.value_at(t, y1, z1) - gen.value_at(t, y2, z1)) * dy - mu * dy * dy;
        worst_h3 = worst_h3.max(h3);

        let h2 = (gen.value_at(t, y1, z1) - gen.value_at(t, y1, z2)).abs() - lambda * (z1 - z2).abs();
        worst_h2 = worst_h2.max(h2);

        h5_sup = h5_sup.max((gen.value_at(t, y1, 0.0) - gen.value_at(t, 0.0, 0.0)).abs());
    }
    Ok(StructureReport {
        h2_ok: worst_h2 <= STRUCTURE_TOL,
        h3_ok: worst_h3 <= STRUCTURE_TOL,
        h5_ok: h5_sup.is_finite(),
        worst_violation: worst_h2.max(worst_h3),
        worst_h2,
        worst_h3,
        h5_sup,
    })
}
