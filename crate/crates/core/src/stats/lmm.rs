//! Linear mixed model with random intercepts and slopes for scenes and for
//! trajectories nested in scenes:
//!
//! `y = (β + u_scene + v_traj)·I + α + a_scene + b_traj + ε`
//!
//! All random effects are independent. Variance components are estimated by
//! minimizing the profiled (REML or ML) deviance over relative variances
//! `θ = σ²_term / σ²_ε`; fixed effects and `σ²_ε` are profiled out through the
//! penalized least-squares solution of the mixed-model equations.
//!
//! Every quantity needed per deviance evaluation reduces to the 3×3 moment
//! matrix of `(1, I, y)` within each trajectory, and the random-effects
//! system is solved scene by scene, eliminating the 2×2 trajectory blocks
//! first. One evaluation costs O(number of trajectories).

use nalgebra::{DMatrix, DVector, Matrix2, Matrix2x3, Matrix3};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use super::dataset::EffectDataset;
use super::optim::{nelder_mead, NelderMeadOptions};
use super::StatsError;

const LOWER_LOG_THETA: f64 = -27.6; // ≈ ln 1e-12
const UPPER_LOG_THETA: f64 = 18.4; // ≈ ln 1e8
const SNAP_TOL: f64 = 1e-9;
const LRT_SLACK: f64 = 1e-8;

/// Which terms enter the model. Random terms switched off have θ fixed at 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelTerms {
    pub fixed_slope: bool,
    pub scene_intercept: bool,
    pub scene_slope: bool,
    pub traj_intercept: bool,
    pub traj_slope: bool,
}

impl ModelTerms {
    pub fn full() -> Self {
        ModelTerms {
            fixed_slope: true,
            scene_intercept: true,
            scene_slope: true,
            traj_intercept: true,
            traj_slope: true,
        }
    }

    /// The full model with the fixed intervention effect removed.
    pub fn without_fixed_slope(self) -> Self {
        ModelTerms { fixed_slope: false, ..self }
    }

    /// Intercept plus a random scene intercept.
    pub fn one_way() -> Self {
        ModelTerms {
            fixed_slope: false,
            scene_intercept: true,
            scene_slope: false,
            traj_intercept: false,
            traj_slope: false,
        }
    }

    fn active(&self) -> [bool; 4] {
        [self.scene_intercept, self.scene_slope, self.traj_intercept, self.traj_slope]
    }

    fn n_fixed(&self) -> usize {
        1 + self.fixed_slope as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Criterion {
    Reml,
    Ml,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceComponents {
    /// Scene random slope on I.
    pub scene_slope: f64,
    pub scene_intercept: f64,
    /// Trajectory random slope on I.
    pub traj_slope: f64,
    pub traj_intercept: f64,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmmFit {
    pub terms: ModelTerms,
    /// Fixed intervention effect; 0 when the model has none.
    pub beta_fixed: f64,
    pub intercept_fixed: f64,
    pub variance_components: VarianceComponents,
    pub log_likelihood_reml: f64,
    /// Maximized ML log-likelihood of the same model.
    pub log_likelihood_ml: f64,
    pub converged: bool,
    /// Names of components fitted exactly at 0.
    pub boundary: Vec<String>,
    pub n_obs: usize,
    pub n_scenes: usize,
    pub n_trajectories: usize,
    pub optimizer_evals: usize,
    pub trace_len: usize,
    /// REML deviance after each optimizer iteration.
    #[serde(skip)]
    pub trace: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrtResult {
    pub effect: f64,
    pub statistic: f64,
    pub p_value: f64,
    pub log_likelihood_full: f64,
    pub log_likelihood_reduced: f64,
}

/// Per-trajectory moments of `(1, I, y)`, grouped by scene.
#[derive(Debug, Clone)]
pub struct Moments {
    scenes: Vec<Vec<Matrix3<f64>>>,
    total: Matrix3<f64>,
    n: usize,
}

impl Moments {
    pub fn new(data: &EffectDataset) -> Self {
        let rows = data.rows();
        let mut total = Matrix3::zeros();
        let scenes: Vec<Vec<Matrix3<f64>>> = data
            .groups()
            .into_values()
            .map(|trajs| {
                trajs
                    .into_values()
                    .map(|idx| {
                        let mut p = Matrix3::zeros();
                        for i in idx {
                            let r = nalgebra::Vector3::new(1.0, rows[i].intervention as f64, rows[i].response);
                            p += r * r.transpose();
                        }
                        total += p;
                        p
                    })
                    .collect()
            })
            .collect();
        Moments { scenes, total, n: rows.len() }
    }

    pub fn n_scenes(&self) -> usize {
        self.scenes.len()
    }

    pub fn n_trajectories(&self) -> usize {
        self.scenes.iter().map(Vec::len).sum()
    }
}

/// Profiled solution at a fixed θ.
#[derive(Debug, Clone)]
pub struct Profile {
    pub deviance: f64,
    pub beta: Vec<f64>,
    pub sigma2: f64,
}

fn inv2(m: &Matrix2<f64>) -> Option<(Matrix2<f64>, f64)> {
    let det = m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)];
    if (det.is_nan() || det <= 0.0) || m[(0, 0)] <= 0.0 {
        return None;
    }
    let inv = Matrix2::new(m[(1, 1)], -m[(0, 1)], -m[(1, 0)], m[(0, 0)]) / det;
    Some((inv, det.ln()))
}

/// Evaluates the profiled deviance at relative variances
/// `θ = [scene_intercept, scene_slope, traj_intercept, traj_slope]`.
pub fn profile(m: &Moments, terms: &ModelTerms, theta: &[f64; 4], criterion: Criterion) -> Option<Profile> {
    let ls = Matrix2::from_diagonal(&nalgebra::Vector2::new(theta[0].sqrt(), theta[1].sqrt()));
    let lt = Matrix2::from_diagonal(&nalgebra::Vector2::new(theta[2].sqrt(), theta[3].sqrt()));
    let mut logdet = 0.0;
    let mut q = Matrix3::<f64>::zeros();
    for scene in &m.scenes {
        let mut s_sum = Matrix2::<f64>::zeros();
        let mut f_sum = Matrix2x3::<f64>::zeros();
        let mut s_corr = Matrix2::<f64>::zeros();
        let mut b_corr = Matrix2x3::<f64>::zeros();
        for p in scene {
            let mk: Matrix2<f64> = p.fixed_view::<2, 2>(0, 0).into_owned();
            let fk: Matrix2x3<f64> = p.fixed_view::<2, 3>(0, 0).into_owned();
            s_sum += mk;
            f_sum += fk;
            let d = lt * mk * lt + Matrix2::identity();
            let (d_inv, ld) = inv2(&d)?;
            logdet += ld;
            let c = lt * mk * ls;
            let b = lt * fk;
            let ct_dinv = c.transpose() * d_inv;
            s_corr += ct_dinv * c;
            b_corr += ct_dinv * b;
            q += b.transpose() * d_inv * b;
        }
        let s = ls * s_sum * ls + Matrix2::identity() - s_corr;
        let bs = ls * f_sum - b_corr;
        let (s_inv, ld) = inv2(&s)?;
        logdet += ld;
        q += bs.transpose() * s_inv * bs;
    }
    let g = m.total - q;

    let p = terms.n_fixed();
    let gxx = g.view((0, 0), (p, p)).into_owned();
    let gxy = g.view((0, 2), (p, 1)).into_owned();
    let chol = gxx.clone().cholesky()?;
    let beta = chol.solve(&gxy);
    let yy_floor = 1e-15 * m.total[(2, 2)] + 1e-300;
    let r2 = (g[(2, 2)] - (gxy.transpose() * &beta)[(0, 0)]).max(yy_floor);
    let n = m.n as f64;
    let two_pi = 2.0 * std::f64::consts::PI;
    let (deviance, sigma2) = match criterion {
        Criterion::Ml => (logdet + n * (1.0 + (two_pi * r2 / n).ln()), r2 / n),
        Criterion::Reml => {
            let dof = n - p as f64;
            let ldx = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
            (logdet + ldx + dof * (1.0 + (two_pi * r2 / dof).ln()), r2 / dof)
        }
    };
    deviance.is_finite().then(|| Profile { deviance, beta: beta.iter().copied().collect(), sigma2 })
}

#[derive(Debug, Clone)]
struct Optimum {
    theta: [f64; 4],
    deviance: f64,
    converged: bool,
    evals: usize,
    trace: Vec<f64>,
}

fn expand(active: &[bool; 4], phi: &[f64], zeroed: &[bool; 4]) -> [f64; 4] {
    let mut theta = [0.0; 4];
    let mut it = phi.iter();
    for i in 0..4 {
        if active[i] {
            let v = *it.next().expect("one parameter per active term");
            theta[i] = if zeroed[i] { 0.0 } else { v.exp() };
        }
    }
    theta
}

fn dev_at(m: &Moments, terms: &ModelTerms, crit: Criterion, theta: &[f64; 4]) -> f64 {
    profile(m, terms, theta, crit).map_or(f64::INFINITY, |p| p.deviance)
}

/// Newton steps on log θ using central differences; only improving steps are taken.
#[allow(clippy::too_many_arguments)]
fn polish(
    m: &Moments,
    terms: &ModelTerms,
    crit: Criterion,
    free: &[usize],
    theta: &mut [f64; 4],
    best: &mut f64,
    evals: &mut usize,
    trace: &mut Vec<f64>,
) {
    let k = free.len();
    if k == 0 {
        return;
    }
    let h = 1e-4;
    let f = |phi: &DVector<f64>, evals: &mut usize| {
        *evals += 1;
        let mut t = *theta;
        for (j, &i) in free.iter().enumerate() {
            t[i] = phi[j].clamp(LOWER_LOG_THETA, UPPER_LOG_THETA).exp();
        }
        dev_at(m, terms, crit, &t)
    };
    let mut phi = DVector::from_iterator(k, free.iter().map(|&i| theta[i].ln()));
    for _ in 0..30 {
        let f0 = *best;
        let mut g = DVector::zeros(k);
        let mut hess = DMatrix::zeros(k, k);
        for a in 0..k {
            let mut e = DVector::zeros(k);
            e[a] = h;
            let fp = f(&(&phi + &e), evals);
            let fm = f(&(&phi - &e), evals);
            g[a] = (fp - fm) / (2.0 * h);
            hess[(a, a)] = (fp - 2.0 * f0 + fm) / (h * h);
            for b in 0..a {
                let mut e2 = DVector::zeros(k);
                e2[b] = h;
                let fpp = f(&(&phi + &e + &e2), evals);
                let fpm = f(&(&phi + &e - &e2), evals);
                let fmp = f(&(&phi - &e + &e2), evals);
                let fmm = f(&(&phi - &e - &e2), evals);
                let v = (fpp - fpm - fmp + fmm) / (4.0 * h * h);
                hess[(a, b)] = v;
                hess[(b, a)] = v;
            }
        }
        if !g.iter().chain(hess.iter()).all(|v| v.is_finite()) {
            return;
        }
        let Some(chol) = hess.cholesky() else { return };
        let mut step = -chol.solve(&g);
        let mut improved = false;
        for _ in 0..20 {
            let trial = (&phi + &step).map(|v| v.clamp(LOWER_LOG_THETA, UPPER_LOG_THETA));
            let ft = f(&trial, evals);
            if ft < *best {
                phi = trial;
                *best = ft;
                trace.push(ft);
                improved = true;
                break;
            }
            step *= 0.5;
        }
        if !improved || step.norm() < 1e-12 {
            break;
        }
    }
    for (j, &i) in free.iter().enumerate() {
        theta[i] = phi[j].clamp(LOWER_LOG_THETA, UPPER_LOG_THETA).exp();
    }
}

/// Sets components to exactly 0 when doing so does not raise the deviance
/// beyond a small tolerance. Returns the indices snapped.
fn snap(m: &Moments, terms: &ModelTerms, crit: Criterion, theta: &mut [f64; 4], best: &mut f64) -> Vec<usize> {
    let active = terms.active();
    let mut snapped = Vec::new();
    let mut order: Vec<usize> = (0..4).filter(|&i| active[i] && theta[i] > 0.0).collect();
    order.sort_by(|&a, &b| theta[a].total_cmp(&theta[b]));
    for i in order {
        let mut t = *theta;
        t[i] = 0.0;
        let d = dev_at(m, terms, crit, &t);
        if d <= *best + SNAP_TOL {
            *theta = t;
            *best = best.min(d);
            snapped.push(i);
        }
    }
    snapped
}

fn optimize(m: &Moments, terms: &ModelTerms, crit: Criterion, starts: &[[f64; 4]]) -> Optimum {
    let active = terms.active();
    let dim = active.iter().filter(|&&a| a).count();
    let none = [false; 4];
    let lower = vec![LOWER_LOG_THETA; dim];
    let upper = vec![UPPER_LOG_THETA; dim];
    let objective = |phi: &[f64]| dev_at(m, terms, crit, &expand(&active, phi, &none));

    let mut best: Option<Optimum> = None;
    for start in starts {
        let phi0: Vec<f64> = (0..4)
            .filter(|&i| active[i])
            .map(|i| start[i].max(1e-12).ln().clamp(LOWER_LOG_THETA, UPPER_LOG_THETA))
            .collect();
        let mut evals = 0;
        let mut trace = Vec::new();
        let mut phi = phi0;
        let mut f_prev = f64::INFINITY;
        let mut converged = false;
        for (round, step) in [1.0, 0.5, 0.25, 0.25, 0.25].into_iter().enumerate() {
            let opts = NelderMeadOptions { step, ..Default::default() };
            let r = nelder_mead(objective, &phi, &lower, &upper, &opts);
            evals += r.evals;
            // restarts begin at the previous best, so the concatenated trace stays monotone
            trace.extend(r.trace.iter().copied().filter(|&v| v <= f_prev));
            converged = r.converged;
            let gain = f_prev - r.f;
            phi = r.x;
            f_prev = f_prev.min(r.f);
            if round > 0 && gain.abs() < 1e-10 {
                break;
            }
        }
        let cand = Optimum { theta: expand(&active, &phi, &none), deviance: f_prev, converged, evals, trace };
        if best.as_ref().is_none_or(|b| cand.deviance < b.deviance) {
            best = Some(cand);
        }
    }
    let mut opt = best.expect("at least one start");
    if dim == 0 {
        opt.deviance = dev_at(m, terms, crit, &[0.0; 4]);
        opt.converged = opt.deviance.is_finite();
        return opt;
    }

    let mut dev = opt.deviance;
    let snapped = snap(m, terms, crit, &mut opt.theta, &mut dev);
    let free: Vec<usize> = (0..4)
        .filter(|&i| active[i] && !snapped.contains(&i) && opt.theta[i] < UPPER_LOG_THETA.exp() * 0.999)
        .collect();
    polish(m, terms, crit, &free, &mut opt.theta, &mut dev, &mut opt.evals, &mut opt.trace);
    snap(m, terms, crit, &mut opt.theta, &mut dev);
    opt.deviance = dev;
    opt.converged &= dev.is_finite();
    opt
}

const NAMES: [&str; 4] = ["scene_intercept", "scene_slope", "traj_intercept", "traj_slope"];

fn check_identifiable(m: &Moments, terms: &ModelTerms) -> Result<(), StatsError> {
    let p = terms.n_fixed();
    if m.n <= p {
        return Err(StatsError::NonIdentifiable(format!("{} observations for {} fixed effects", m.n, p)));
    }
    let xtx = m.total.view((0, 0), (p, p)).into_owned();
    let eig = xtx.symmetric_eigen().eigenvalues;
    let (lo, hi) = eig.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if lo.is_nan() || hi.is_nan() || lo <= 1e-10 * hi {
        return Err(StatsError::NonIdentifiable(
            "fixed-effect design is rank deficient (is the intervention flag constant?)".into(),
        ));
    }
    Ok(())
}

fn default_starts() -> Vec<[f64; 4]> {
    vec![[1.0; 4], [0.1; 4]]
}

fn summarize(m: &Moments, terms: ModelTerms, reml: &Optimum, ml: &Optimum) -> Result<LmmFit, StatsError> {
    let pr = profile(m, &terms, &reml.theta, Criterion::Reml)
        .ok_or_else(|| StatsError::NonConvergence("REML deviance is not finite at the optimum".into()))?;
    let s2 = pr.sigma2;
    let t = reml.theta;
    let active = terms.active();
    Ok(LmmFit {
        terms,
        beta_fixed: if terms.fixed_slope { pr.beta[1] } else { 0.0 },
        intercept_fixed: pr.beta[0],
        variance_components: VarianceComponents {
            scene_intercept: t[0] * s2,
            scene_slope: t[1] * s2,
            traj_intercept: t[2] * s2,
            traj_slope: t[3] * s2,
            residual: s2,
        },
        log_likelihood_reml: -0.5 * reml.deviance,
        log_likelihood_ml: -0.5 * ml.deviance,
        converged: reml.converged && ml.converged,
        boundary: (0..4).filter(|&i| active[i] && t[i] == 0.0).map(|i| NAMES[i].to_owned()).collect(),
        n_obs: m.n,
        n_scenes: m.n_scenes(),
        n_trajectories: m.n_trajectories(),
        optimizer_evals: reml.evals + ml.evals,
        trace_len: reml.trace.len(),
        trace: reml.trace.clone(),
    })
}

/// Fits the model with the given terms by REML, then refits under ML from
/// the REML estimates.
pub fn fit_model(data: &EffectDataset, terms: ModelTerms) -> Result<LmmFit, StatsError> {
    if data.is_empty() {
        return Err(StatsError::Empty);
    }
    let m = Moments::new(data);
    check_identifiable(&m, &terms)?;
    let reml = optimize(&m, &terms, Criterion::Reml, &default_starts());
    let ml = optimize(&m, &terms, Criterion::Ml, &[reml.theta]);
    summarize(&m, terms, &reml, &ml)
}

/// Fits the full model: fixed intercept and intervention effect, random
/// intercepts and slopes for scenes and trajectories.
pub fn fit_lmm(data: &EffectDataset) -> Result<LmmFit, StatsError> {
    fit_model(data, ModelTerms::full())
}

/// Likelihood-ratio test of `reduced` against `full` under ML, with the
/// given degrees of freedom.
pub fn lrt(
    data: &EffectDataset,
    full: ModelTerms,
    reduced: ModelTerms,
    df: f64,
) -> Result<(LmmFit, LrtResult), StatsError> {
    if data.is_empty() {
        return Err(StatsError::Empty);
    }
    let m = Moments::new(data);
    check_identifiable(&m, &full)?;
    check_identifiable(&m, &reduced)?;
    let reml = optimize(&m, &full, Criterion::Reml, &default_starts());
    let red = optimize(&m, &reduced, Criterion::Ml, &[reml.theta, [1.0; 4]]);
    // start the full ML fit from the reduced optimum too, so ℓ_full ≥ ℓ_reduced
    let ml = optimize(&m, &full, Criterion::Ml, &[reml.theta, red.theta]);
    if !(reml.converged && red.converged && ml.converged) {
        return Err(StatsError::NonConvergence("mixed model fit did not converge".into()));
    }
    let fit = summarize(&m, full, &reml, &ml)?;
    let ll_full = -0.5 * ml.deviance;
    let ll_red = -0.5 * red.deviance;
    let raw = 2.0 * (ll_full - ll_red);
    if raw < -LRT_SLACK * (1.0 + ll_full.abs()) {
        log::warn!("negative likelihood-ratio statistic {raw}; treating as 0");
    }
    let statistic = raw.max(0.0);
    let p_value = if df == 0.0 { 1.0 } else { ChiSquared::new(df).expect("positive degrees of freedom").sf(statistic) };
    Ok((
        fit.clone(),
        LrtResult {
            effect: fit.beta_fixed,
            statistic,
            p_value,
            log_likelihood_full: ll_full,
            log_likelihood_reduced: ll_red,
        },
    ))
}

/// Tests the fixed intervention effect: full model against the model
/// without it, χ²(1).
pub fn lrt_fixed_effect(data: &EffectDataset) -> Result<(LmmFit, LrtResult), StatsError> {
    let full = ModelTerms::full();
    lrt(data, full, full.without_fixed_slope(), 1.0)
}
