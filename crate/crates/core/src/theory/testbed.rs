use crate::error::{Error, Result};

/// Primal base function `h` of a testbed client.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PrimalBase {
    /// `w^2 + 3 sin^2 w`: nonconvex, satisfies the PL inequality.
    #[default]
    PlSine,
    /// `w^2`.
    Quadratic,
}

impl PrimalBase {
    pub fn value(&self, w: f64) -> f64 {
        match self {
            PrimalBase::PlSine => w * w + 3.0 * w.sin().powi(2),
            PrimalBase::Quadratic => w * w,
        }
    }

    pub fn derivative(&self, w: f64) -> f64 {
        match self {
            PrimalBase::PlSine => 2.0 * w + 3.0 * (2.0 * w).sin(),
            PrimalBase::Quadratic => 2.0 * w,
        }
    }

    pub fn second_derivative(&self, w: f64) -> f64 {
        match self {
            PrimalBase::PlSine => 2.0 + 6.0 * (2.0 * w).cos(),
            PrimalBase::Quadratic => 2.0,
        }
    }
}

/// `F_i(w, lambda) = a * h(w - shift) + lambda * c * w - rho/2 * lambda^2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TestbedClient {
    pub a: f64,
    pub c: f64,
    pub shift: f64,
}

impl TestbedClient {
    pub fn new(a: f64, c: f64) -> Self {
        TestbedClient { a, c, shift: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TestbedProblem {
    pub clients: Vec<TestbedClient>,
    pub coefficients: Vec<f64>,
    pub rho: f64,
    pub base: PrimalBase,
}

impl TestbedProblem {
    pub fn new(clients: Vec<TestbedClient>, coefficients: Vec<f64>, rho: f64, base: PrimalBase) -> Result<Self> {
        if clients.is_empty() || clients.len() != coefficients.len() {
            return Err(Error::LengthMismatch(format!(
                "{} clients, {} coefficients",
                clients.len(),
                coefficients.len()
            )));
        }
        let sum: f64 = coefficients.iter().sum();
        if (sum - 1.0).abs() > 1e-9 || coefficients.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::invalid(format!(
                "coefficients must lie in [0, 1] and sum to 1, got {sum}"
            )));
        }
        if !(rho > 0.0) {
            return Err(Error::invalid(format!("rho must be positive, got {rho}")));
        }
        if clients
            .iter()
            .any(|c| !(c.a > 0.0) || !c.c.is_finite() || !c.shift.is_finite())
        {
            return Err(Error::invalid("every client needs a > 0 and finite c, shift"));
        }
        Ok(TestbedProblem {
            clients,
            coefficients,
            rho,
            base,
        })
    }

    /// Equal-weight problem.
    pub fn uniform(clients: Vec<TestbedClient>, rho: f64, base: PrimalBase) -> Result<Self> {
        let n = clients.len().max(1);
        let p = vec![1.0 / n as f64; clients.len()];
        Self::new(clients, p, rho, base)
    }

    /// Four heterogeneous clients used by the rate check.
    pub fn reference() -> Self {
        let clients = vec![
            TestbedClient {
                a: 0.5,
                c: 1.0,
                shift: 0.3,
            },
            TestbedClient {
                a: 1.0,
                c: -0.5,
                shift: -0.2,
            },
            TestbedClient {
                a: 1.5,
                c: 2.0,
                shift: 0.1,
            },
            TestbedClient {
                a: 0.8,
                c: 0.5,
                shift: -0.4,
            },
        ];
        Self::new(clients, vec![0.1, 0.2, 0.3, 0.4], 1.0, PrimalBase::PlSine).expect("valid reference testbed")
    }

    pub fn n_clients(&self) -> usize {
        self.clients.len()
    }

    /// `sum_i p_i c_i`.
    pub fn mean_coupling(&self) -> f64 {
        self.clients.iter().zip(&self.coefficients).map(|(c, p)| p * c.c).sum()
    }

    pub fn client_value(&self, i: usize, w: f64, lambda: f64) -> f64 {
        let c = &self.clients[i];
        c.a * self.base.value(w - c.shift) + lambda * c.c * w - 0.5 * self.rho * lambda * lambda
    }

    pub fn grad_w(&self, i: usize, w: f64, lambda: f64) -> f64 {
        let c = &self.clients[i];
        c.a * self.base.derivative(w - c.shift) + lambda * c.c
    }

    pub fn grad_lambda(&self, i: usize, w: f64, lambda: f64) -> f64 {
        self.clients[i].c * w - self.rho * lambda
    }

    /// `F_S(w, lambda) = sum_i p_i F_i(w, lambda)`.
    pub fn global_value(&self, w: f64, lambda: f64) -> f64 {
        (0..self.n_clients())
            .map(|i| self.coefficients[i] * self.client_value(i, w, lambda))
            .sum()
    }

    /// Maximizing multiplier of the global problem at `w`.
    pub fn lambda_hat(&self, w: f64) -> f64 {
        self.mean_coupling() * w / self.rho
    }

    /// `max_lambda F_i(w, lambda)`.
    pub fn client_risk(&self, i: usize, w: f64) -> f64 {
        let c = &self.clients[i];
        c.a * self.base.value(w - c.shift) + (c.c * w).powi(2) / (2.0 * self.rho)
    }

    fn risk_derivative(&self, w: f64) -> f64 {
        let smooth: f64 = self
            .clients
            .iter()
            .zip(&self.coefficients)
            .map(|(c, p)| p * c.a * self.base.derivative(w - c.shift))
            .sum();
        smooth + self.mean_coupling().powi(2) * w / self.rho
    }
}

/// `R_S(w) = max_lambda F_S(w, lambda)` in closed form.
pub fn primal_risk(problem: &TestbedProblem, w: f64) -> f64 {
    let smooth: f64 = problem
        .clients
        .iter()
        .zip(&problem.coefficients)
        .map(|(c, p)| p * c.a * problem.base.value(w - c.shift))
        .sum();
    smooth + (problem.mean_coupling() * w).powi(2) / (2.0 * problem.rho)
}

const SEARCH_LO: f64 = -10.0;
const SEARCH_HI: f64 = 10.0;
const GRID_STEP: f64 = 1e-3;
const GOLDEN_TOL: f64 = 1e-10;

/// Global minimizer of `f` on `[lo, hi]`: dense grid, then golden-section
/// refinement around the best grid point until the bracket is below 1e-10.
pub fn minimize_scalar<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64, step: f64) -> (f64, f64) {
    let n = ((hi - lo) / step).round() as usize;
    let (mut best_w, mut best_f) = (lo, f(lo));
    for k in 1..=n {
        let w = lo + k as f64 * step;
        let v = f(w);
        if v < best_f {
            best_w = w;
            best_f = v;
        }
    }
    let mut a = (best_w - step).max(lo);
    let mut b = (best_w + step).min(hi);
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = b - inv_phi * (b - a);
    let mut x2 = a + inv_phi * (b - a);
    let (mut f1, mut f2) = (f(x1), f(x2));
    while b - a > GOLDEN_TOL {
        if f1 <= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - inv_phi * (b - a);
            f1 = f(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + inv_phi * (b - a);
            f2 = f(x2);
        }
    }
    let w = 0.5 * (a + b);
    let v = f(w);
    if v <= best_f {
        (w, v)
    } else {
        (best_w, best_f)
    }
}

/// `(w*, R_S*)` over `[-10, 10]`.
pub fn solve_primal_star(problem: &TestbedProblem) -> (f64, f64) {
    minimize_scalar(|w| primal_risk(problem, w), SEARCH_LO, SEARCH_HI, GRID_STEP)
}

/// Heterogeneity gap `F_S* - sum_i p_i F_i*`.
pub fn gamma(problem: &TestbedProblem) -> f64 {
    let (_, global) = solve_primal_star(problem);
    let local: f64 = (0..problem.n_clients())
        .map(|i| {
            let (_, v) = minimize_scalar(|w| problem.client_risk(i, w), SEARCH_LO, SEARCH_HI, GRID_STEP);
            problem.coefficients[i] * v
        })
        .sum();
    global - local
}

/// Grid estimate of the PL constant of `f` on `domain`:
/// `inf 0.5 f'(w)^2 / (f(w) - f_min)` over grid points more than 1e-9 above
/// the grid minimum.
pub fn estimate_pl_constant<F, D>(f: F, df: D, domain: (f64, f64), step: f64) -> Result<f64>
where
    F: Fn(f64) -> f64,
    D: Fn(f64) -> f64,
{
    let (lo, hi) = domain;
    if !(hi > lo) || !(step > 0.0) {
        return Err(Error::invalid("PL estimation needs lo < hi and a positive step"));
    }
    let n = ((hi - lo) / step).round() as usize;
    let grid: Vec<f64> = (0..=n).map(|k| lo + k as f64 * step).collect();
    let values: Vec<f64> = grid.iter().map(|&w| f(w)).collect();
    let f_min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let f_max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if f_max - f_min <= 1e-9 {
        return Err(Error::invalid("function is constant on the domain"));
    }
    Ok(grid
        .iter()
        .zip(&values)
        .filter(|(_, &v)| v - f_min > 1e-9)
        .map(|(&w, &v)| 0.5 * df(w).powi(2) / (v - f_min))
        .fold(f64::INFINITY, f64::min))
}

/// Constants appearing in the convergence analysis, measured on a testbed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TheoryConstants {
    pub smoothness: f64,
    pub pl_mu: f64,
    pub rho: f64,
    pub bound_w: f64,
    pub bound_lambda: f64,
    pub dissimilarity_beta: f64,
    pub kappa: f64,
    pub gamma: f64,
}

/// Fit `sum_i p_i g_i^2 <= beta^2 (sum_i p_i g_i)^2 + kappa^2` for the
/// primal gradients `g_i` over a `(w, lambda)` grid: `beta^2` is the
/// least-squares slope (floored at 1), `kappa^2` the smallest intercept that
/// makes the bound hold at every grid point.
pub fn measure_dissimilarity(
    problem: &TestbedProblem,
    w_range: (f64, f64),
    lambda_range: (f64, f64),
    points: usize,
) -> (f64, f64) {
    let points = points.max(2);
    let mut xs = Vec::with_capacity(points * points);
    let mut ys = Vec::with_capacity(points * points);
    for a in 0..points {
        let w = w_range.0 + (w_range.1 - w_range.0) * a as f64 / (points - 1) as f64;
        for b in 0..points {
            let l = lambda_range.0 + (lambda_range.1 - lambda_range.0) * b as f64 / (points - 1) as f64;
            let grads: Vec<f64> = (0..problem.n_clients()).map(|i| problem.grad_w(i, w, l)).collect();
            let mean: f64 = grads.iter().zip(&problem.coefficients).map(|(g, p)| p * g).sum();
            let second: f64 = grads.iter().zip(&problem.coefficients).map(|(g, p)| p * g * g).sum();
            xs.push(mean * mean);
            ys.push(second);
        }
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let beta_sq = if sxx > 0.0 { (sxy / sxx).max(1.0) } else { 1.0 };
    let kappa_sq = xs.iter().zip(&ys).map(|(x, y)| y - beta_sq * x).fold(0.0, f64::max);
    (beta_sq.sqrt(), kappa_sq.sqrt())
}

/// Measure the analysis constants of `problem`. The variance bounds are the
/// configured noise levels.
pub fn theory_constants(problem: &TestbedProblem, sigma_w: f64, sigma_lambda: f64) -> Result<TheoryConstants> {
    let n = ((SEARCH_HI - SEARCH_LO) / 1e-2).round() as usize;
    let mut smoothness: f64 = 0.0;
    for k in 0..=n {
        let w = SEARCH_LO + k as f64 * 1e-2;
        for c in &problem.clients {
            // Spectral norm of [[a h''(w - s), c], [c, -rho]].
            let (p, q, r) = (c.a * problem.base.second_derivative(w - c.shift), c.c, -problem.rho);
            let mid = 0.5 * (p + r);
            let rad = (0.25 * (p - r).powi(2) + q * q).sqrt();
            smoothness = smoothness.max((mid + rad).abs()).max((mid - rad).abs());
        }
    }
    let (_, r_star) = solve_primal_star(problem);
    let pl_mu = estimate_pl_constant(
        |w| primal_risk(problem, w) - r_star,
        |w| problem.risk_derivative(w),
        (SEARCH_LO, SEARCH_HI),
        GRID_STEP,
    )?;
    let lam = problem.clients.iter().map(|c| c.c.abs()).fold(0.0, f64::max) * 3.0 / problem.rho;
    let (dissimilarity_beta, kappa) = measure_dissimilarity(problem, (-3.0, 3.0), (-lam.max(1.0), lam.max(1.0)), 61);
    Ok(TheoryConstants {
        smoothness,
        pl_mu,
        rho: problem.rho,
        bound_w: sigma_w,
        bound_lambda: sigma_lambda,
        dissimilarity_beta,
        kappa,
        gamma: gamma(problem),
    })
}
