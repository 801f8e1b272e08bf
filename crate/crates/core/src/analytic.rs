//! Closed-form profiles with hand-coded derivatives: exact radial solutions,
//! the power-law counterexample to non-degeneracy, the exponential barrier and
//! the comparison profile `A |x|^beta`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::{Coefficient, Expr};
use crate::grid::{CartesianGrid, ScalarField};
use crate::model::{
    beta_exponent, pow, BoundaryData, CoefficientFields, Domain, EllipticityPair, ExponentTriple,
    OperatorKind, ProblemSpec, SymMatrix,
};

/// Value, gradient and Hessian at one point. Only the first `hess.dim()`
/// gradient entries are meaningful.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jet {
    pub value: f64,
    pub grad: [f64; 2],
    pub hess: SymMatrix,
}

impl Jet {
    pub fn grad_norm(&self) -> f64 {
        self.grad.iter().map(|g| g * g).sum::<f64>().sqrt()
    }

    pub fn dim(&self) -> usize {
        self.hess.dim()
    }
}

/// A closed-form function with exact first and second derivatives.
pub trait Profile {
    fn dim(&self) -> usize;
    fn value(&self, x: &[f64]) -> f64;
    fn jet(&self, x: &[f64]) -> Result<Jet>;
}

/// Samples a profile at the nodes of a grid.
pub fn sample_profile(grid: &CartesianGrid, profile: &impl Profile) -> Result<ScalarField> {
    ScalarField::from_fn(*grid, |x| profile.value(x))
}

/// Deterministic uniform samples of the annulus `r_in <= |x - center| <= r_out`
/// (uniform in area for `n = 2`, random sign and radius for `n = 1`).
pub fn annulus_samples(n: usize, center: [f64; 2], r_in: f64, r_out: f64, count: usize, seed: u64) -> Vec<[f64; 2]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            if n == 1 {
                let r = rng.gen_range(r_in..=r_out);
                let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
                [center[0] + sign * r, 0.0]
            } else {
                let t: f64 = rng.gen_range(0.0..1.0);
                let r = (r_in * r_in + t * (r_out * r_out - r_in * r_in)).sqrt();
                let th = rng.gen_range(0.0..std::f64::consts::TAU);
                [center[0] + r * th.cos(), center[1] + r * th.sin()]
            }
        })
        .collect()
}

fn offset(x: &[f64], center: [f64; 2], n: usize) -> Result<[f64; 2]> {
    if x.len() < n {
        return Err(Error::Precondition(format!("point has {} coordinates, need {n}", x.len())));
    }
    let mut y = [0.0; 2];
    for k in 0..n {
        y[k] = x[k] - center[k];
    }
    Ok(y)
}

fn norm(y: &[f64; 2]) -> f64 {
    (y[0] * y[0] + y[1] * y[1]).sqrt()
}

fn hess_from(n: usize, f: impl Fn(usize, usize) -> f64) -> SymMatrix {
    if n == 1 {
        SymMatrix::diag(&[f(0, 0)])
    } else {
        SymMatrix::sym2(f(0, 0), f(0, 1), f(1, 1))
    }
}

/// Jet of `c |y|^b` at `y != 0`.
fn power_jet(c: f64, b: f64, y: [f64; 2], n: usize) -> Jet {
    let r = norm(&y);
    let rb2 = c * b * r.powf(b - 2.0);
    let rb4 = c * b * (b - 2.0) * r.powf(b - 4.0);
    Jet {
        value: c * r.powf(b),
        grad: [rb2 * y[0], rb2 * y[1]],
        hess: hess_from(n, |i, j| rb4 * y[i] * y[j] + if i == j { rb2 } else { 0.0 }),
    }
}

fn power_jet_at_origin(c: f64, b: f64, n: usize) -> Result<Jet> {
    let h = if b == 2.0 {
        2.0 * c
    } else if b > 2.0 {
        0.0
    } else {
        return Err(Error::Precondition(format!(
            "|x|^{b} has no second derivative at the origin"
        )));
    };
    Ok(Jet {
        value: 0.0,
        grad: [0.0; 2],
        hess: hess_from(n, |i, j| if i == j { h } else { 0.0 }),
    })
}

fn check_dim(n: usize) -> Result<()> {
    if (1..=2).contains(&n) {
        Ok(())
    } else {
        Err(Error::Precondition(format!("dimension {n} not in {{1, 2}}")))
    }
}

/// `c |x|^beta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadialProfile {
    pub c: f64,
    pub beta: f64,
    pub n: usize,
}

/// The profile `c |x|^beta` with `beta = (p+2)/(p+1-mu)` solving
/// `|Du|^p Lap u = lambda0 u^mu` for constant `lambda0 > 0`.
pub fn radial_exact(n: usize, p: f64, mu: f64, lambda0_const: f64) -> Result<RadialProfile> {
    check_dim(n)?;
    // q plays no role without a Hamiltonian term; 0 is always admissible.
    ExponentTriple::new(p, 0.0, mu)?;
    if !(lambda0_const > 0.0 && lambda0_const.is_finite()) {
        return Err(Error::Precondition(format!("lambda0 = {lambda0_const} must be positive")));
    }
    let beta = (p + 2.0) / (p + 1.0 - mu);
    let k = beta.powf(p + 1.0) * (beta + n as f64 - 2.0);
    assert!(k > 0.0, "beta + n - 2 must be positive");
    let c = (lambda0_const / k).powf(1.0 / (p + 1.0 - mu));
    Ok(RadialProfile { c, beta, n })
}

impl RadialProfile {
    /// Dirichlet problem on `domain` solved by this profile: Laplacian, `a = 0`,
    /// constant `lambda0`, `g = c |x|^beta`.
    pub fn spec(&self, p: f64, mu: f64, lambda0_const: f64, domain: Domain) -> Result<ProblemSpec> {
        let spec = ProblemSpec {
            exponents: ExponentTriple::new(p, 0.0, mu)?,
            ellipticity: EllipticityPair::new(1.0, 1.0)?,
            operator: OperatorKind::Trace,
            coeff: CoefficientFields {
                a: Coefficient::constant(0.0),
                lambda0: Coefficient::constant(lambda0_const),
            },
            boundary: BoundaryData {
                g: Coefficient::new(Expr::power_law(self.c, self.beta)),
            },
            domain,
        };
        spec.validate()?;
        Ok(spec)
    }
}

impl Profile for RadialProfile {
    fn dim(&self) -> usize {
        self.n
    }

    fn value(&self, x: &[f64]) -> f64 {
        let r = x.iter().take(self.n).map(|v| v * v).sum::<f64>().sqrt();
        self.c * pow(r, self.beta)
    }

    fn jet(&self, x: &[f64]) -> Result<Jet> {
        let y = offset(x, [0.0; 2], self.n)?;
        if norm(&y) == 0.0 {
            return power_jet_at_origin(self.c, self.beta, self.n);
        }
        Ok(power_jet(self.c, self.beta, y, self.n))
    }
}

/// Parameters of the power-law family that solves the equation with `q = mu`
/// but decays strictly faster than `|x|^beta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CounterexampleParams {
    pub n: usize,
    pub p: f64,
    pub mu: f64,
    pub eps: f64,
    pub gamma: f64,
}

impl CounterexampleParams {
    pub fn new(n: usize, p: f64, mu: f64, eps: f64, gamma: f64) -> Result<Self> {
        let params = Self { n, p, mu, eps, gamma };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        check_dim(self.n)?;
        ExponentTriple::new(self.p, self.mu, self.mu)?;
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return Err(Error::Precondition(format!("eps = {} must be positive", self.eps)));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::Precondition(format!("gamma = {} must be positive", self.gamma)));
        }
        Ok(())
    }

    pub fn exponents(&self) -> ExponentTriple {
        ExponentTriple {
            p: self.p,
            q: self.mu,
            mu: self.mu,
        }
    }

    /// `(p+2)/(p+1-mu)`
    pub fn beta(&self) -> f64 {
        (self.p + 2.0) / (self.p + 1.0 - self.mu)
    }

    /// Exponent of `u`, `beta + eps`.
    pub fn power(&self) -> f64 {
        self.beta() + self.eps
    }

    pub fn c_bar(&self) -> f64 {
        let b = self.power();
        (b + self.n as f64 - 2.0) * b.powf(self.p + 1.0) + b.powf(self.mu)
    }

    pub fn c_0(&self) -> f64 {
        self.gamma * self.power().powf(-self.mu)
    }

    fn a_exponent(&self) -> f64 {
        self.mu + self.eps * (self.p + 1.0 - self.mu)
    }

    fn lambda_exponent(&self) -> f64 {
        self.eps * (self.p + 1.0 - self.mu)
    }
}

/// Evaluators of the counterexample `u = |x|^(beta+eps)` and its coefficients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Counterexample {
    pub params: CounterexampleParams,
}

pub fn counterexample(params: CounterexampleParams) -> Result<Counterexample> {
    params.validate()?;
    Ok(Counterexample { params })
}

impl Counterexample {
    fn radius(&self, x: &[f64]) -> f64 {
        x.iter().take(self.params.n).map(|v| v * v).sum::<f64>().sqrt()
    }

    /// `|x|^(mu + eps(p+1-mu)) + c_0 |x|^mu`
    pub fn a(&self, x: &[f64]) -> f64 {
        let r = self.radius(x);
        pow(r, self.params.a_exponent()) + self.params.c_0() * pow(r, self.params.mu)
    }

    /// `c_bar |x|^(eps(p+1-mu)) + gamma`
    pub fn lambda0(&self, x: &[f64]) -> f64 {
        self.params.c_bar() * pow(self.radius(x), self.params.lambda_exponent()) + self.params.gamma
    }

    /// `|Du|^p Lap u + a |Du|^mu - lambda0 u^mu` from the closed-form derivatives.
    pub fn residual(&self, x: &[f64]) -> Result<f64> {
        let j = self.jet(x)?;
        let m = j.grad_norm();
        let pr = self.params;
        Ok(pow(m, pr.p) * j.hess.trace() + self.a(x) * pow(m, pr.mu) - self.lambda0(x) * pow(j.value, pr.mu))
    }

    /// The Dirichlet problem on `domain` with `g = u`, Laplacian and `q = mu`.
    pub fn spec(&self, domain: Domain) -> Result<ProblemSpec> {
        let pr = self.params;
        let sum = |a: Expr, b: Expr| Expr::Add(Box::new(a), Box::new(b));
        let spec = ProblemSpec {
            exponents: pr.exponents(),
            ellipticity: EllipticityPair::new(1.0, 1.0)?,
            operator: OperatorKind::Trace,
            coeff: CoefficientFields {
                a: Coefficient::new(sum(
                    Expr::power_law(1.0, pr.a_exponent()),
                    Expr::power_law(pr.c_0(), pr.mu),
                )),
                lambda0: Coefficient::new(sum(
                    Expr::power_law(pr.c_bar(), pr.lambda_exponent()),
                    Expr::constant(pr.gamma),
                )),
            },
            boundary: BoundaryData {
                g: Coefficient::new(Expr::power_law(1.0, pr.power())),
            },
            domain,
        };
        spec.validate()?;
        Ok(spec)
    }
}

impl Profile for Counterexample {
    fn dim(&self) -> usize {
        self.params.n
    }

    fn value(&self, x: &[f64]) -> f64 {
        pow(self.radius(x), self.params.power())
    }

    /// Rejects the origin, where `|Du|^p` or the coefficients may be singular.
    fn jet(&self, x: &[f64]) -> Result<Jet> {
        let y = offset(x, [0.0; 2], self.params.n)?;
        if norm(&y) == 0.0 {
            return Err(Error::Precondition("counterexample evaluated at the origin".into()));
        }
        Ok(power_jet(1.0, self.params.power(), y, self.params.n))
    }
}

/// The barrier `eta (e^(-s|x-x0|^2/d0^2) - e^(-s)) / (e^(-s/4) - e^(-s))` on the
/// annulus `d0/2 <= |x - x0| <= d0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BarrierParams {
    pub eta: f64,
    pub s: f64,
    pub d0: f64,
    pub x0: [f64; 2],
    pub n: usize,
}

impl BarrierParams {
    pub fn new(eta: f64, s: f64, d0: f64, x0: [f64; 2], n: usize) -> Result<Self> {
        check_dim(n)?;
        if !(eta > 0.0 && eta.is_finite()) {
            return Err(Error::Precondition(format!("eta = {eta} must be positive")));
        }
        if !(s > 2.0 && s.is_finite()) {
            return Err(Error::Precondition(format!("s = {s} must exceed 2")));
        }
        if !(d0 > 0.0 && d0.is_finite()) {
            return Err(Error::Precondition(format!("d0 = {d0} must be positive")));
        }
        Ok(Self { eta, s, d0, x0, n })
    }

    fn denominator(&self) -> f64 {
        (-self.s / 4.0).exp() - (-self.s).exp()
    }

    /// `5 eta s e^(-s) / (dist (e^(-s/4) - e^(-s)))` where `dist` is the distance
    /// from `x0` to the boundary. A lower bound for `|D theta|` on the annulus
    /// whenever `d0 <= dist / 5`.
    pub fn sigma_lower(&self, dist: f64) -> Result<f64> {
        if !(dist > 0.0) {
            return Err(Error::Precondition(format!("distance to the boundary {dist} must be positive")));
        }
        Ok(5.0 * self.eta * self.s * (-self.s).exp() / (dist * self.denominator()))
    }

    /// Exact minimum of `|D theta|` over the annulus, attained on the outer circle.
    pub fn grad_min_exact(&self) -> f64 {
        2.0 * self.eta * self.s * (-self.s).exp() / (self.d0 * self.denominator())
    }

    pub fn in_annulus(&self, x: &[f64]) -> bool {
        match offset(x, self.x0, self.n) {
            Ok(y) => {
                let r = norm(&y);
                let slack = 1e-12 * self.d0;
                r >= self.d0 / 2.0 - slack && r <= self.d0 + slack
            }
            Err(_) => false,
        }
    }

    /// `s^(p+1) (-lambda + lambda s/2 - Lambda) - sup_lambda0 / (A^p 2^(p+1))`
    /// with `A^p = min(d0^p, (d0/2)^p)`. Non-negative means the sign condition holds.
    pub fn sign_condition_margin(&self, p: f64, ell: EllipticityPair, sup_lambda0: f64) -> f64 {
        sign_margin(self.s, p, ell.lambda, ell.upper, sup_lambda0, self.d0)
    }

    /// The sign condition holds and `d0 <= 1`, so that `L[theta] >= 0` on the annulus.
    pub fn is_admissible(&self, p: f64, ell: EllipticityPair, sup_lambda0: f64) -> bool {
        self.d0 <= 1.0 && self.n <= 2 && self.sign_condition_margin(p, ell, sup_lambda0) >= 0.0
    }

    /// `|D theta|^p F(D^2 theta) + a |D theta|^q - lambda0 theta_+^(p+1)` with the
    /// operator, `p`, `q`, `a` and `lambda0` of `spec`. The absorption exponent is
    /// `p + 1` regardless of `spec.exponents.mu`.
    pub fn barrier_operator(&self, x: &[f64], spec: &ProblemSpec) -> Result<f64> {
        let j = self.jet(x)?;
        let ExponentTriple { p, q, .. } = spec.exponents;
        let m = j.grad_norm();
        let f = spec.operator.apply(&j.hess, spec.ellipticity);
        Ok(pow(m, p) * f + spec.a(x) * pow(m, q) - spec.lambda0(x) * pow(j.value.max(0.0), p + 1.0))
    }
}

impl Profile for BarrierParams {
    fn dim(&self) -> usize {
        self.n
    }

    fn value(&self, x: &[f64]) -> f64 {
        let r2: f64 = x.iter().zip(self.x0).take(self.n).map(|(a, b)| (a - b) * (a - b)).sum();
        self.eta * ((-self.s * r2 / (self.d0 * self.d0)).exp() - (-self.s).exp()) / self.denominator()
    }

    fn jet(&self, x: &[f64]) -> Result<Jet> {
        if !self.in_annulus(x) {
            return Err(Error::Precondition(format!(
                "{x:?} is outside the annulus {} <= |x - x0| <= {}",
                self.d0 / 2.0,
                self.d0
            )));
        }
        let y = offset(x, self.x0, self.n)?;
        let d2 = self.d0 * self.d0;
        let e = (-self.s * (y[0] * y[0] + y[1] * y[1]) / d2).exp();
        let k = 2.0 * self.eta * self.s / d2 * e / self.denominator();
        let w = 2.0 * self.s / d2;
        Ok(Jet {
            value: self.value(x),
            grad: [-k * y[0], -k * y[1]],
            hess: hess_from(self.n, |i, j| k * (w * y[i] * y[j] - if i == j { 1.0 } else { 0.0 })),
        })
    }
}

fn sign_margin(s: f64, p: f64, lambda: f64, upper: f64, sup_lambda0: f64, d0: f64) -> f64 {
    let a_p = d0.powf(p).min((d0 / 2.0).powf(p));
    s.powf(p + 1.0) * (-lambda + lambda * s / 2.0 - upper) - sup_lambda0 / (a_p * 2f64.powf(p + 1.0))
}

/// Smallest `s` in `[2, 1000]` satisfying the barrier sign condition, by bisection.
/// The returned value always satisfies the condition.
pub fn barrier_admissible(p: f64, lambda: f64, upper: f64, sup_lambda0: f64, d0: f64) -> Result<f64> {
    const LO: f64 = 2.0;
    const HI: f64 = 1e3;
    if !(p > -1.0 && p.is_finite()) {
        return Err(Error::ExponentRange(format!("p = {p} must exceed -1")));
    }
    EllipticityPair::new(lambda, upper)?;
    if !(sup_lambda0 >= 0.0 && sup_lambda0.is_finite()) {
        return Err(Error::Precondition(format!("sup lambda0 = {sup_lambda0} must be non-negative")));
    }
    if !(d0 > 0.0 && d0.is_finite()) {
        return Err(Error::Precondition(format!("d0 = {d0} must be positive")));
    }
    let margin = |s: f64| sign_margin(s, p, lambda, upper, sup_lambda0, d0);
    if margin(HI) < 0.0 {
        return Err(Error::NotAdmissible(format!("sign condition fails up to s = {HI}")));
    }
    // The margin is negative on [2, 2(lambda + Lambda)/lambda] and increasing beyond.
    let (mut lo, mut hi) = (LO, HI);
    while hi - lo > 1e-13 * hi {
        let mid = 0.5 * (lo + hi);
        if margin(mid) >= 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// Data entering the amplitude bound of the comparison profile `A |x|^beta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct XiData {
    pub exponents: ExponentTriple,
    pub n: usize,
    pub ellipticity: EllipticityPair,
    pub sup_a: f64,
    pub inf_lambda0: f64,
}

impl XiData {
    /// `(p+2)/(p+1-mu)`
    pub fn beta(&self) -> f64 {
        let ExponentTriple { p, mu, .. } = self.exponents;
        (p + 2.0) / (p + 1.0 - mu)
    }

    /// `Lambda A^(p+1) beta^(p+1) (beta+n-2) + sup_a A^q beta^q - inf_lambda0 A^mu`
    pub fn bracket(&self, amp: f64) -> f64 {
        let ExponentTriple { p, q, mu } = self.exponents;
        let b = self.beta();
        self.ellipticity.upper * pow(amp, p + 1.0) * b.powf(p + 1.0) * (b + self.n as f64 - 2.0)
            + self.sup_a * pow(amp, q) * pow(b, q)
            - self.inf_lambda0 * pow(amp, mu)
    }
}

/// Largest `A = 2^-k <= 1` with a non-positive bracket. Requires the
/// non-degeneracy condition on the exponents.
pub fn xi_admissible_amplitude(data: &XiData) -> Result<f64> {
    check_dim(data.n)?;
    data.ellipticity.validate()?;
    let derived = beta_exponent(data.exponents)?;
    if !derived.nondegenerate {
        return Err(Error::NotAdmissible(format!(
            "non-degeneracy condition fails: beta_absorption = {} > beta_hamiltonian = {}",
            derived.beta_absorption, derived.beta_hamiltonian
        )));
    }
    if !(data.sup_a >= 0.0 && data.inf_lambda0 > 0.0) {
        return Err(Error::Precondition(format!(
            "need sup a >= 0 and inf lambda0 > 0, got {} and {}",
            data.sup_a, data.inf_lambda0
        )));
    }
    (0..=200)
        .map(|k| 2f64.powi(-k))
        .find(|&amp| data.bracket(amp) <= 0.0)
        .ok_or_else(|| Error::NotAdmissible("no dyadic amplitude down to 2^-200".into()))
}

/// The comparison profile `A |x|^beta` on the unit ball.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComparisonProfile {
    pub amplitude: f64,
    pub beta: f64,
    pub data: XiData,
}

impl ComparisonProfile {
    /// Profile with the amplitude from [`xi_admissible_amplitude`].
    pub fn admissible(data: XiData) -> Result<Self> {
        let amplitude = xi_admissible_amplitude(&data)?;
        Ok(Self {
            amplitude,
            beta: data.beta(),
            data,
        })
    }

    /// Worst case of the rescaled equation on the unit ball: upper Pucci operator,
    /// `a = sup_a`, `lambda0 = inf_lambda0`, boundary data `A` on the unit sphere.
    pub fn spec(&self) -> Result<ProblemSpec> {
        let d = self.data;
        let spec = ProblemSpec {
            exponents: d.exponents,
            ellipticity: d.ellipticity,
            operator: OperatorKind::PucciPlus,
            coeff: CoefficientFields {
                a: Coefficient::constant(d.sup_a),
                lambda0: Coefficient::constant(d.inf_lambda0),
            },
            boundary: BoundaryData {
                g: Coefficient::new(Expr::power_law(self.amplitude, self.beta)),
            },
            domain: Domain::ball(&vec![0.0; d.n], 1.0),
        };
        spec.validate()?;
        Ok(spec)
    }
}

impl Profile for ComparisonProfile {
    fn dim(&self) -> usize {
        self.data.n
    }

    fn value(&self, x: &[f64]) -> f64 {
        let r = x.iter().take(self.data.n).map(|v| v * v).sum::<f64>().sqrt();
        self.amplitude * pow(r, self.beta)
    }

    fn jet(&self, x: &[f64]) -> Result<Jet> {
        let y = offset(x, [0.0; 2], self.data.n)?;
        if norm(&y) == 0.0 {
            return power_jet_at_origin(self.amplitude, self.beta, self.data.n);
        }
        Ok(power_jet(self.amplitude, self.beta, y, self.data.n))
    }
}
