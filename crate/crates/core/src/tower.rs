//! The approximating towers f_{k,n}(z) = E_(k,n)(b_n + z/(b_0...b_{n-1})):
//! backbone construction b_n = 2 pi m_n i + Log b_{n-1} - Log lambda_n with
//! m_n chosen adaptively against the dyadic sup-norm budget, stable
//! evaluation of the truncations and their derivatives, and the certified
//! limit evaluation.
//!
//! Numerically everything runs on the deviation recursion
//! u_{j-1} = b_{j-1}(e^{u_j} - 1): it is algebraically identical to the
//! direct composition (it consumes the identity E_{lambda_j}(b_j) =
//! b_{j-1}) but avoids the catastrophic cancellation near the backbone
//! points. Backbone values are stored period-reduced as (m_n, c_n) with
//! b_n = c_n + 2 pi m_n i, and exponentials of backbone points are always
//! taken with the reduced exponent c_n: the full imaginary part 2 pi m_n
//! would cost ~2 pi m_n epsilon of accuracy, which already violates the
//! 1e-12 backbone budget for m_n over a few thousand.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;

use crate::analytic::{orbit_of_zero, principal_log, OrbitPrefix};
use crate::branches::{budget_probe_samples, dyadic_gap, tail_family_value, INVERSE_BUDGET_FACTOR};
use crate::error::{CoreError, CoreResult};
use crate::numeric::{cexpm1, Eval, EscapeInfo, LogScale, NumericContract, MAX_EXP_ARG, PRODUCT_LOG_CAP};

/// Default number of boundary samples for sup-norm estimates.
pub const DEFAULT_BOUNDARY_SAMPLES: usize = 4096;

/// Largest admitted m_n; the gap budget is provably attainable well below
/// this, so hitting it indicates a defect.
pub const M_CAP: u64 = 1 << 40;

/// Radius schedule r_n (increasing positive integers).
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RadiiRule {
    /// r_n = n.
    Unit,
    /// r_n = base + n - 1; used to pin a compact K inside Delta_{r_1}.
    FromBase(u32),
}

impl RadiiRule {
    pub fn radius(&self, n: usize) -> u32 {
        match self {
            RadiiRule::Unit => n as u32,
            RadiiRule::FromBase(base) => base + n as u32 - 1,
        }
    }
}

/// Gap budget schedule eps_n with eps_n <= 2^-n.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum EpsRule {
    /// eps_n = 2^-n.
    Dyadic,
    /// eps_n = scale * 2^-n with 0 < scale <= 1; summing over n >= 1 gives
    /// a total budget of `scale`, which pins a uniform approximation error.
    ScaledDyadic(f64),
}

impl EpsRule {
    pub fn eps(&self, n: usize) -> f64 {
        let dyadic = 2f64.powi(-(n as i32));
        match self {
            EpsRule::Dyadic => dyadic,
            EpsRule::ScaledDyadic(scale) => scale * dyadic,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct BuildOptions {
    pub radii: RadiiRule,
    pub eps: EpsRule,
    pub boundary_samples: usize,
    /// Also enforce the inverse-branch Cauchy budget on forecast
    /// certification probes while choosing m_n (canonical and index-shifted
    /// families). Costs little and makes certification deterministic.
    pub certification_budget: bool,
    pub contract: NumericContract,
}

impl Default for BuildOptions {
    fn default() -> Self {
        BuildOptions {
            radii: RadiiRule::Unit,
            eps: EpsRule::Dyadic,
            boundary_samples: DEFAULT_BOUNDARY_SAMPLES,
            certification_budget: true,
            contract: NumericContract::DEFAULT,
        }
    }
}

/// Per-level build evidence.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TowerBuildDiagnostics {
    /// M_n: max over k <= n of the Lipschitz constant of f_{k,n} on the
    /// sampled circle |z| = r_n.
    pub lipschitz_estimates: Vec<f64>,
    /// Accepted max-over-k measured sup |f_{k,n+1} - f_{k,n}| per level.
    pub gap_norms: Vec<f64>,
    /// M_n r_n^2 / (2 |b_0...b_{n-1}|), the m_n-independent constant in the
    /// gap bound; recorded, never asserted.
    pub cn_estimates: Vec<f64>,
    /// Number of doublings used per level before the budgets held.
    pub mn_trials: Vec<u32>,
    /// Worst inverse-branch gap at acceptance per level (0 when the budget
    /// is disabled or no probe survived the stand-off rule).
    pub inverse_budget_gaps: Vec<f64>,
}

/// The constructed tower: lambda- and m-sequences plus the derived
/// backbone (b_n) and log-form prefix products.
#[derive(Clone, Debug, PartialEq)]
pub struct TowerModel {
    lambdas: Vec<Complex64>,
    m: Vec<u64>,
    c: Vec<Complex64>,
    radii: Vec<u32>,
    eps: Vec<f64>,
    contract: NumericContract,
    b: Vec<Complex64>,
    prod: Vec<LogScale>,
}

/// f_{k,level}(z) split into its base b_k and the deviation from it; the
/// running sum of intermediate deviations determines the derivative.
#[derive(Clone, Copy, Debug)]
pub enum DevEval {
    Finite {
        base: Complex64,
        dev: Complex64,
        u_sum: Complex64,
    },
    Escaped {
        stage: usize,
        log_magnitude: f64,
    },
}

impl DevEval {
    pub fn to_eval(self) -> Eval {
        match self {
            DevEval::Finite { base, dev, .. } => Eval::Value(base + dev),
            DevEval::Escaped { stage, log_magnitude } => {
                Eval::Escaped(EscapeInfo { stage, log_magnitude })
            }
        }
    }
}

/// Borrowed view of a (possibly partially built) backbone: b = [b_0..b_N],
/// prod[j] = b_0...b_j in log form.
pub(crate) struct Backbone<'a> {
    pub b: &'a [Complex64],
    pub prod: &'a [LogScale],
    pub contract: &'a NumericContract,
}

impl<'a> Backbone<'a> {
    /// Evaluates f_{k,level}; `level` may exceed the stored levels by one,
    /// since the next level's values are already determined by the current
    /// backbone (only b_0..b_{level-1} enter the recursion).
    pub fn deviation_eval(&self, k: usize, level: usize, z: Complex64) -> DevEval {
        debug_assert!(k <= level && level <= self.b.len() && k < self.b.len());
        let mut u = if level == 0 {
            z
        } else {
            self.prod[level - 1].div_into(z)
        };
        let mut u_sum = Complex64::new(0.0, 0.0);
        for j in (k + 1..=level).rev() {
            u_sum += u;
            let bj = self.b[j - 1];
            let ln_b = bj.norm().ln();
            if u.re > MAX_EXP_ARG || u.re + ln_b > self.contract.ln_overflow() {
                return DevEval::Escaped { stage: j, log_magnitude: u.re + ln_b };
            }
            u = bj * cexpm1(u);
        }
        DevEval::Finite { base: self.b[k], dev: u, u_sum }
    }

    /// f'_{0,level}(z); the product formula collapses to e^{u_1+...+u_level},
    /// which is nonzero whenever it is finite.
    pub fn derivative(&self, level: usize, z: Complex64) -> Eval {
        match self.deviation_eval(0, level, z) {
            DevEval::Finite { u_sum, .. } => {
                if u_sum.re > MAX_EXP_ARG {
                    Eval::Escaped(EscapeInfo { stage: 0, log_magnitude: u_sum.re })
                } else {
                    Eval::Value(u_sum.exp())
                }
            }
            DevEval::Escaped { stage, log_magnitude } => {
                Eval::Escaped(EscapeInfo { stage, log_magnitude })
            }
        }
    }

    /// sup over |z| = radius of |f_{k,n+1} - f_{k,n}| by boundary sampling
    /// (the difference is holomorphic, so its sup over the disk is attained
    /// on the circle). The shared base b_k cancels exactly: only the
    /// deviations are subtracted.
    pub fn boundary_gap(&self, k: usize, n: usize, radius: f64, samples: usize) -> CoreResult<f64> {
        let mut worst = 0.0f64;
        for s in 0..samples {
            let z = Complex64::from_polar(radius, TAU * s as f64 / samples as f64);
            let hi = self.deviation_eval(k, n + 1, z);
            let lo = self.deviation_eval(k, n, z);
            match (hi, lo) {
                (DevEval::Finite { dev: a, .. }, DevEval::Finite { dev: b, .. }) => {
                    worst = worst.max((a - b).norm());
                }
                (DevEval::Escaped { stage, .. }, _) | (_, DevEval::Escaped { stage, .. }) => {
                    return Err(CoreError::UnboundedOnDisk { stage });
                }
            }
        }
        Ok(worst)
    }

    /// max over k <= n of sup |f'_{k,n}| on the circle |z| = radius.
    /// |f'_{k,n}(z)| = e^{Re(u_{k+1}+...+u_n)} / |b_0...b_{k-1}|.
    pub fn lipschitz_max(&self, n: usize, radius: f64, samples: usize) -> f64 {
        let mut worst = 0.0f64;
        for k in 0..=n {
            let ln_prefix = if k == 0 { 0.0 } else { self.prod[k - 1].ln_mag };
            for s in 0..samples {
                let z = Complex64::from_polar(radius, TAU * s as f64 / samples as f64);
                if let DevEval::Finite { u_sum, .. } = self.deviation_eval(k, n, z) {
                    worst = worst.max((u_sum.re - ln_prefix).exp());
                }
            }
        }
        worst
    }
}

/// f_{0,depth}(z) together with the certified tail bound (None when |z|
/// exceeds r_depth and the bound does not apply).
#[derive(Clone, Copy, Debug)]
pub struct LimitEval {
    pub value: Eval,
    pub certified_bound: Option<f64>,
}

impl TowerModel {
    pub fn depth(&self) -> usize {
        self.lambdas.len()
    }

    pub fn lambdas(&self) -> &[Complex64] {
        &self.lambdas
    }

    pub fn m(&self) -> &[u64] {
        &self.m
    }

    /// Backbone values b_0..b_N (value form; b_n = c_n + 2 pi m_n i).
    pub fn b(&self) -> &[Complex64] {
        &self.b
    }

    /// Period-reduced backbone offsets c_1..c_N.
    pub fn c(&self) -> &[Complex64] {
        &self.c
    }

    pub fn radii(&self) -> &[u32] {
        &self.radii
    }

    pub fn eps(&self) -> &[f64] {
        &self.eps
    }

    pub fn contract(&self) -> &NumericContract {
        &self.contract
    }

    pub fn radius_at(&self, n: usize) -> f64 {
        self.radii[n - 1] as f64
    }

    pub fn eps_at(&self, n: usize) -> f64 {
        self.eps[n - 1]
    }

    pub(crate) fn backbone(&self) -> Backbone<'_> {
        Backbone { b: &self.b, prod: &self.prod, contract: &self.contract }
    }

    pub(crate) fn prod(&self) -> &[LogScale] {
        &self.prod
    }

    /// Rebuilds a model from stored components, revalidating every
    /// structural invariant.
    pub fn from_stored(
        lambdas: Vec<Complex64>,
        m: Vec<u64>,
        c: Vec<Complex64>,
        radii: Vec<u32>,
        eps: Vec<f64>,
        contract: NumericContract,
    ) -> CoreResult<Self> {
        let depth = lambdas.len();
        if m.len() != depth || c.len() != depth || radii.len() != depth || eps.len() != depth {
            return Err(CoreError::Artifact("tower component lengths disagree".into()));
        }
        for (index, lam) in lambdas.iter().enumerate() {
            if !(lam.norm() > contract.log_puncture()) {
                return Err(CoreError::ZeroLambda { index });
            }
        }
        for w in m.windows(2) {
            if w[1] <= w[0] {
                return Err(CoreError::Artifact("m must be strictly increasing".into()));
            }
        }
        for w in radii.windows(2) {
            if w[1] <= w[0] {
                return Err(CoreError::Artifact("radii must be increasing".into()));
            }
        }
        for (i, &e) in eps.iter().enumerate() {
            if !(e > 0.0 && e <= 2f64.powi(-(i as i32 + 1))) {
                return Err(CoreError::Artifact("eps must satisfy 0 < eps_n <= 2^-n".into()));
            }
        }
        let mut b = vec![Complex64::new(1.0, 0.0)];
        let mut prod = vec![LogScale::ONE];
        for n in 1..=depth {
            let b_n = Complex64::new(c[n - 1].re, c[n - 1].im + TAU * m[n - 1] as f64);
            prod.push(prod[n - 1].mul_complex(b_n));
            b.push(b_n);
        }
        let model = TowerModel { lambdas, m, c, radii, eps, contract, b, prod };
        for n in 1..=depth {
            let resid = model.recompute_offset_residual(n)?;
            if resid > 1e-9 * model.c[n - 1].norm().max(1.0) {
                return Err(CoreError::Artifact(format!(
                    "backbone offset at level {n} inconsistent (residual {resid:.3e})"
                )));
            }
        }
        Ok(model)
    }

    /// Assembles a model from (lambdas, m) alone, recomputing the backbone
    /// offsets; intended for tests and hand-built towers.
    pub fn from_raw_parts(
        lambdas: Vec<Complex64>,
        m: Vec<u64>,
        radii: Vec<u32>,
        eps: Vec<f64>,
        contract: NumericContract,
    ) -> CoreResult<Self> {
        let mut b_prev = Complex64::new(1.0, 0.0);
        let mut c = Vec::with_capacity(lambdas.len());
        for (i, &lam) in lambdas.iter().enumerate() {
            let c_n = principal_log(&contract, b_prev)? - principal_log(&contract, lam)?;
            c.push(c_n);
            b_prev = Complex64::new(c_n.re, c_n.im + TAU * m[i] as f64);
        }
        Self::from_stored(lambdas, m, c, radii, eps, contract)
    }

    /// Relative backbone residual |E_{lambda_n}(b_n) - b_{n-1}| / |b_{n-1}|,
    /// with the exponential taken at the period-reduced exponent.
    pub fn backbone_residual(&self, n: usize) -> f64 {
        let via = self.lambdas[n - 1] * self.c[n - 1].exp();
        (via - self.b[n - 1]).norm() / self.b[n - 1].norm()
    }

    /// |c_n - (Log b_{n-1} - Log lambda_n)|: the stored offset against a
    /// fresh recomputation.
    pub fn recompute_offset_residual(&self, n: usize) -> CoreResult<f64> {
        let fresh = principal_log(&self.contract, self.b[n - 1])?
            - principal_log(&self.contract, self.lambdas[n - 1])?;
        Ok((fresh - self.c[n - 1]).norm())
    }

    /// f_{k,n}(z) by the deviation recursion (0 <= k <= n <= depth).
    pub fn eval_truncation(&self, k: usize, n: usize, z: Complex64) -> CoreResult<Eval> {
        if !(k <= n && n <= self.depth()) {
            return Err(CoreError::Precondition(format!(
                "eval_truncation wants k <= n <= depth, got k={k}, n={n}, depth={}",
                self.depth()
            )));
        }
        Ok(self.backbone().deviation_eval(k, n, z).to_eval())
    }

    /// f'_{0,n}(z) via the product formula (1 <= n <= depth).
    pub fn eval_derivative(&self, n: usize, z: Complex64) -> CoreResult<Eval> {
        if !(1 <= n && n <= self.depth()) {
            return Err(CoreError::Precondition(format!(
                "eval_derivative wants 1 <= n <= depth, got n={n}"
            )));
        }
        Ok(self.backbone().derivative(n, z))
    }

    /// sup over Delta_{r_n} of |f_{k,n+1} - f_{k,n}| (1 <= n < depth).
    pub fn sup_norm_gap(&self, k: usize, n: usize, samples: usize) -> CoreResult<f64> {
        if !(k <= n && n >= 1 && n < self.depth()) {
            return Err(CoreError::Precondition(format!(
                "sup_norm_gap wants k <= n, 1 <= n < depth, got k={k}, n={n}"
            )));
        }
        self.backbone().boundary_gap(k, n, self.radius_at(n), samples)
    }

    /// f_{0,depth}(z) with the certified tail bound 2 eps_N (the geometric
    /// tail of the dyadic budgets) when |z| <= r_depth.
    pub fn eval_limit(&self, z: Complex64) -> LimitEval {
        let depth = self.depth();
        let value = self.backbone().deviation_eval(0, depth, z).to_eval();
        let certified = depth >= 1 && z.norm() <= self.radius_at(depth);
        LimitEval {
            value,
            certified_bound: certified.then(|| 2.0 * self.eps[depth - 1]),
        }
    }

    /// Relative residual of f_{k,n}(z) against E_{lambda_{k+1}}(f_{k+1,n}(z)),
    /// the two sides evaluated along different code paths.
    pub fn semiconjugacy_residual(&self, k: usize, n: usize, z: Complex64) -> CoreResult<f64> {
        if !(k < n && n <= self.depth()) {
            return Err(CoreError::Precondition(format!(
                "semiconjugacy_residual wants k < n <= depth, got k={k}, n={n}"
            )));
        }
        let bb = self.backbone();
        let direct = match bb.deviation_eval(k, n, z) {
            DevEval::Finite { base, dev, .. } => base + dev,
            DevEval::Escaped { stage, .. } => return Err(CoreError::EscapedValue { stage }),
        };
        let inner_dev = match bb.deviation_eval(k + 1, n, z) {
            DevEval::Finite { dev, .. } => dev,
            DevEval::Escaped { stage, .. } => return Err(CoreError::EscapedValue { stage }),
        };
        // E_{lambda_{k+1}}(b_{k+1} + u), exponent reduced by the period
        let expo = self.c[k] + inner_dev;
        if expo.re > MAX_EXP_ARG {
            return Err(CoreError::EscapedValue { stage: k + 1 });
        }
        let via = self.lambdas[k] * expo.exp();
        Ok((direct - via).norm() / direct.norm().max(1.0))
    }

    /// The orbit prefix E_(0,k)(0), k = 0..depth.
    pub fn orbit_prefix(&self) -> CoreResult<OrbitPrefix> {
        orbit_of_zero(&self.contract, &self.lambdas, self.depth())
    }
}

/// Builds a depth-`depth` tower over the given lambda-sequence. Each m_n
/// starts at max(m_{n-1}+1, 2) and doubles until the measured sup-norm gap
/// to the next level is within eps_n for every k <= n (plus the
/// inverse-branch budget when enabled), then b_n is fixed.
pub fn build_tower(
    lambdas: &[Complex64],
    depth: usize,
    opts: &BuildOptions,
) -> CoreResult<(TowerModel, TowerBuildDiagnostics)> {
    if lambdas.len() < depth {
        return Err(CoreError::Precondition(format!(
            "need {depth} lambdas, got {}",
            lambdas.len()
        )));
    }
    let contract = opts.contract;
    let lams = &lambdas[..depth];
    for (index, lam) in lams.iter().enumerate() {
        if !(lam.norm() > contract.log_puncture()) {
            return Err(CoreError::ZeroLambda { index });
        }
    }
    if let EpsRule::ScaledDyadic(scale) = opts.eps {
        if !(scale > 0.0 && scale <= 1.0) {
            return Err(CoreError::Precondition("eps scale must lie in (0, 1]".into()));
        }
    }

    let budget_samples = if opts.certification_budget && depth > 0 {
        let orbit = orbit_of_zero(&contract, lams, depth)?;
        budget_probe_samples(&orbit.points)
    } else {
        Vec::new()
    };

    let mut b = vec![Complex64::new(1.0, 0.0)];
    let mut prod = vec![LogScale::ONE];
    let mut m_vec: Vec<u64> = Vec::new();
    let mut c_vec: Vec<Complex64> = Vec::new();
    let mut radii = Vec::new();
    let mut eps = Vec::new();
    let mut diag = TowerBuildDiagnostics::default();

    for n in 1..=depth {
        let r_n = opts.radii.radius(n) as f64;
        let eps_n = opts.eps.eps(n);
        radii.push(opts.radii.radius(n));
        eps.push(eps_n);
        let c_n = principal_log(&contract, b[n - 1])? - principal_log(&contract, lams[n - 1])?;

        // Inverse-branch family values at level n are m_n-independent;
        // compute them once per level. shift=j bumps the stage-j index by
        // one (Lemma-8 style fixed prefix), required only for n > j.
        let mut family_values: Vec<Vec<Complex64>> = Vec::new();
        if !budget_samples.is_empty() {
            let bb = Backbone { b: &b, prod: &prod, contract: &contract };
            for shift in [None, Some(1), Some(2)] {
                if let Some(j) = shift {
                    if n <= j || prod[j - 1].ln_mag > 300.0 {
                        continue;
                    }
                }
                let vals: Vec<Complex64> = budget_samples
                    .iter()
                    .filter_map(|&z| tail_family_value(&bb, shift, n, z).ok())
                    .collect();
                family_values.push(vals);
            }
        }

        let mut m = m_vec.last().map(|&p| p + 1).unwrap_or(2).max(2);
        let mut trials = 0u32;
        let inverse_budget = INVERSE_BUDGET_FACTOR * 2f64.powi(-(n as i32));
        loop {
            let b_n = Complex64::new(c_n.re, c_n.im + TAU * m as f64);
            b.push(b_n);
            prod.push(prod[n - 1].mul_complex(b_n));
            let bb = Backbone { b: &b, prod: &prod, contract: &contract };

            let mut worst_forward = 0.0f64;
            let mut sampling_error = None;
            for k in 0..=n {
                match bb.boundary_gap(k, n, r_n, opts.boundary_samples) {
                    Ok(g) => worst_forward = worst_forward.max(g),
                    Err(e) => {
                        sampling_error = Some(e);
                        break;
                    }
                }
            }
            if let Some(e) = sampling_error {
                return Err(e);
            }
            let prod_n = prod[n];
            let worst_inverse = family_values
                .iter()
                .flatten()
                .map(|&g| dyadic_gap(g, prod_n))
                .fold(0.0f64, f64::max);

            if worst_forward <= eps_n && worst_inverse <= inverse_budget {
                diag.gap_norms.push(worst_forward);
                diag.inverse_budget_gaps.push(worst_inverse);
                diag.mn_trials.push(trials);
                break;
            }
            b.pop();
            prod.pop();
            trials += 1;
            let next = m.saturating_mul(2);
            if next > M_CAP {
                return Err(CoreError::BuildBudgetExhausted {
                    level: n,
                    last_gap: worst_forward.max(worst_inverse),
                    budget: eps_n.min(inverse_budget),
                });
            }
            m = next;
        }
        m_vec.push(m);
        c_vec.push(c_n);

        if prod[n].ln_mag > PRODUCT_LOG_CAP {
            return Err(CoreError::ProductOverflow { level: n, log_mag: prod[n].ln_mag });
        }

        let bb = Backbone { b: &b, prod: &prod, contract: &contract };
        let lipschitz = bb.lipschitz_max(n, r_n, opts.boundary_samples.min(512));
        diag.lipschitz_estimates.push(lipschitz);
        let cn = (lipschitz.ln() + 2.0 * r_n.ln() - 2f64.ln() - prod[n - 1].ln_mag).exp();
        diag.cn_estimates.push(cn);
    }

    let model = TowerModel {
        lambdas: lams.to_vec(),
        m: m_vec,
        c: c_vec,
        radii,
        eps,
        contract,
        b,
        prod,
    };
    Ok((model, diag))
}

#[cfg(test)]
mod tests {
    use super::*;

    const C: NumericContract = NumericContract::DEFAULT;

    fn cx(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn small_lambdas() -> Vec<Complex64> {
        vec![cx(1.0, 0.0), cx(0.0, TAU), cx(0.0, TAU), cx(0.0, TAU), cx(0.0, TAU)]
    }

    fn quick_opts() -> BuildOptions {
        BuildOptions { boundary_samples: 512, ..BuildOptions::default() }
    }

    #[test]
    fn forced_m_reproduces_the_backbone_formula() {
        // lambda_1 = 1, m_1 = 3 gives b_1 = 6 pi i, and E_1(6 pi i) = 1 = b_0
        let model = TowerModel::from_raw_parts(
            vec![cx(1.0, 0.0)],
            vec![3],
            vec![1],
            vec![0.5],
            C,
        )
        .unwrap();
        assert_eq!(model.b()[1], cx(0.0, 3.0 * TAU));
        assert!(model.backbone_residual(1) <= 1e-14);
    }

    #[test]
    fn truncation_examples() {
        let (model, _) = build_tower(&small_lambdas(), 3, &quick_opts()).unwrap();
        let e = std::f64::consts::E;

        // f_{0,1} is the plain exponential
        let got = model.eval_truncation(0, 1, cx(1.0, 0.0)).unwrap().value().unwrap();
        assert!((got - cx(e, 0.0)).norm() < 1e-14);

        // f_{0,n}(0) = 1 for every n
        for n in 0..=3 {
            let got = model.eval_truncation(0, n, cx(0.0, 0.0)).unwrap().value().unwrap();
            assert_eq!(got, cx(1.0, 0.0));
        }

        // f_{k,k}(0) = b_k
        let got = model.eval_truncation(2, 2, cx(0.0, 0.0)).unwrap().value().unwrap();
        assert_eq!(got, model.b()[2]);
    }

    #[test]
    fn deviation_recursion_matches_direct_composition() {
        use crate::analytic::forward_tower;
        let (model, _) = build_tower(&small_lambdas(), 4, &quick_opts()).unwrap();
        let mut rng_state = 0x2545F491u64;
        let mut next = || {
            rng_state = rng_state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (rng_state >> 11) as f64 / (1u64 << 53) as f64 * 4.0 - 2.0
        };
        for n in 1..=4usize {
            // direct product b_0...b_{n-1} stays small enough here
            let mut p = cx(1.0, 0.0);
            for j in 0..n {
                p *= model.b()[j];
            }
            for _ in 0..24 {
                let z = cx(next(), next());
                for k in 0..=n {
                    let via_dev =
                        model.eval_truncation(k, n, z).unwrap().value().unwrap();
                    let arg = model.b()[n] + z / p;
                    let direct = forward_tower(&C, &model.lambdas()[k..n], arg)
                        .unwrap()
                        .value()
                        .unwrap();
                    let rel = (via_dev - direct).norm() / via_dev.norm().max(1.0);
                    assert!(rel <= 1e-9, "k={k} n={n} rel={rel:.3e}");
                }
            }
        }
    }

    #[test]
    fn derivative_examples_and_finite_difference_oracle() {
        let (model, _) = build_tower(&small_lambdas(), 5, &quick_opts()).unwrap();
        for n in 1..=5 {
            let got = model.eval_derivative(n, cx(0.0, 0.0)).unwrap().value().unwrap();
            assert_eq!(got, cx(1.0, 0.0));
        }
        let e = std::f64::consts::E;
        let got = model.eval_derivative(1, cx(1.0, 0.0)).unwrap().value().unwrap();
        assert!((got - cx(e, 0.0)).norm() < 1e-14);

        let h = 1e-6;
        let mut rng_state = 0xABCD_1234u64;
        let mut next = || {
            rng_state = rng_state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (rng_state >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
        };
        for n in 1..=5usize {
            for _ in 0..8 {
                let z = cx(next(), next());
                let d = model.eval_derivative(n, z).unwrap().value().unwrap();
                let up = model.eval_truncation(0, n, z + cx(h, 0.0)).unwrap().value().unwrap();
                let dn = model.eval_truncation(0, n, z - cx(h, 0.0)).unwrap().value().unwrap();
                let fd = (up - dn) / cx(2.0 * h, 0.0);
                assert!((d - fd).norm() <= 1e-6, "n={n} diff={:.3e}", (d - fd).norm());
            }
        }
    }

    #[test]
    fn builder_respects_budgets_and_monotone_m() {
        let lams = vec![cx(1.0, 0.0); 3];
        let (model, diag) = build_tower(&lams, 3, &quick_opts()).unwrap();
        for w in model.m().windows(2) {
            assert!(w[1] > w[0]);
        }
        for (i, gap) in diag.gap_norms.iter().enumerate() {
            assert!(*gap <= model.eps_at(i + 1), "level {} gap {gap}", i + 1);
        }
        for n in 1..=3 {
            assert!(model.backbone_residual(n) <= 1e-12);
        }
    }

    #[test]
    fn depth_zero_build_is_vacuous() {
        let (model, diag) = build_tower(&[], 0, &quick_opts()).unwrap();
        assert_eq!(model.depth(), 0);
        assert!(diag.gap_norms.is_empty());
        // f_{0,0}(z) = 1 + z, uncertified
        let out = model.eval_limit(cx(0.25, 0.5));
        assert_eq!(out.value.value().unwrap(), cx(1.25, 0.5));
        assert!(out.certified_bound.is_none());
    }

    #[test]
    fn gap_depends_on_the_level_m_not_the_next_one() {
        // two towers sharing m_1 but with different m_2 report the same
        // level-1 gap; doubling m_1 shrinks it
        let lams = vec![cx(1.0, 0.0), cx(1.0, 0.0)];
        let base = TowerModel::from_raw_parts(lams.clone(), vec![2, 3], vec![1, 2], vec![0.5, 0.25], C).unwrap();
        let other_m2 = TowerModel::from_raw_parts(lams.clone(), vec![2, 9], vec![1, 2], vec![0.5, 0.25], C).unwrap();
        let big_m1 = TowerModel::from_raw_parts(lams, vec![4, 9], vec![1, 2], vec![0.5, 0.25], C).unwrap();
        let g_base = base.sup_norm_gap(1, 1, 512).unwrap();
        let g_other = other_m2.sup_norm_gap(1, 1, 512).unwrap();
        let g_big = big_m1.sup_norm_gap(1, 1, 512).unwrap();
        assert_eq!(g_base, g_other);
        assert!(g_big < 0.6 * g_base, "doubling m_1: {g_base} -> {g_big}");
    }

    #[test]
    fn gaps_unchanged_by_deeper_levels() {
        let lams = small_lambdas();
        let (shallow, _) = build_tower(&lams, 3, &quick_opts()).unwrap();
        let (deep, _) = build_tower(&lams, 5, &quick_opts()).unwrap();
        assert_eq!(&shallow.m()[..3], &deep.m()[..3]);
        for n in 1..3 {
            for k in 0..=n {
                let a = shallow.sup_norm_gap(k, n, 256).unwrap();
                let b = deep.sup_norm_gap(k, n, 256).unwrap();
                assert_eq!(a, b);
            }
        }
    }

    #[test]
    fn consecutive_depth_difference_within_eps() {
        let lams = small_lambdas();
        let (model, _) = build_tower(&lams, 4, &quick_opts()).unwrap();
        let (shallower, _) = build_tower(&lams, 3, &quick_opts()).unwrap();
        let r = model.radius_at(3);
        for s in 0..64 {
            let z = Complex64::from_polar(r, TAU * s as f64 / 64.0);
            let a = model.eval_truncation(0, 4, z).unwrap().value().unwrap();
            let b = shallower.eval_truncation(0, 3, z).unwrap().value().unwrap();
            assert!((a - b).norm() <= model.eps_at(3) * 1.0001);
        }
    }

    #[test]
    fn scaled_build_tracks_the_plain_exponential() {
        let lams = vec![cx(1.0, 0.0), cx(0.0, TAU), cx(0.0, TAU), cx(0.0, TAU), cx(0.0, TAU)];
        let opts = BuildOptions {
            radii: RadiiRule::FromBase(2),
            eps: EpsRule::ScaledDyadic(5e-4),
            boundary_samples: 1024,
            ..BuildOptions::default()
        };
        let (model, _) = build_tower(&lams, 5, &opts).unwrap();
        for s in 0..128 {
            let z = Complex64::from_polar(2.0, TAU * s as f64 / 128.0);
            let got = model.eval_limit(z).value.value().unwrap();
            assert!((got - z.exp()).norm() <= 1e-3);
        }
    }

    #[test]
    fn semiconjugacy_residual_detects_tampering() {
        let (model, _) = build_tower(&small_lambdas(), 4, &quick_opts()).unwrap();
        let mut rng_state = 77u64;
        let mut next = || {
            rng_state = rng_state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (rng_state >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
        };
        for n in 1..=4usize {
            for k in 0..n {
                for _ in 0..8 {
                    let z = cx(next(), next());
                    let r = model.semiconjugacy_residual(k, n, z).unwrap();
                    assert!(r <= 1e-10, "k={k} n={n} r={r:.3e}");
                }
            }
        }

        let mut tampered = model.clone();
        tampered.c[1] += cx(0.1, 0.0);
        let r = tampered.semiconjugacy_residual(1, 3, cx(0.3, 0.2)).unwrap();
        assert!(r > 1e-3, "tampering visible: {r:.3e}");
    }

    #[test]
    fn local_univalence_witness_on_a_grid() {
        let (model, _) = build_tower(&small_lambdas(), 4, &quick_opts()).unwrap();
        let r = model.radius_at(1);
        let mut min_mod = f64::INFINITY;
        for i in 0..101 {
            for j in 0..101 {
                let z = cx(
                    -r + 2.0 * r * i as f64 / 100.0,
                    -r + 2.0 * r * j as f64 / 100.0,
                );
                if z.norm() > r {
                    continue;
                }
                let d = model.eval_derivative(4, z).unwrap().value().unwrap();
                min_mod = min_mod.min(d.norm());
            }
        }
        assert!(min_mod > 0.0);
    }

    #[test]
    fn stored_roundtrip_preserves_the_model() {
        let (model, _) = build_tower(&small_lambdas(), 3, &quick_opts()).unwrap();
        let again = TowerModel::from_stored(
            model.lambdas().to_vec(),
            model.m().to_vec(),
            model.c().to_vec(),
            model.radii().to_vec(),
            model.eps().to_vec(),
            *model.contract(),
        )
        .unwrap();
        assert_eq!(model, again);
    }
}
