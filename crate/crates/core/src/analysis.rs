//! Equilibrium classification, brute-force Nash enumeration and run
//! summaries.
//!
//! # Why deterministic deviations suffice
//!
//! Fix the other players' policies `π_{−i}`. Player `i` then faces a
//! single-agent episodic MDP on the same states, whose rewards and
//! transitions are the game's averaged over `π_{−i}`, and whose stopping
//! probabilities stay positive. `V_{i,ρ}(·; π_{−i})` is that MDP's value
//! from `ρ`. A finite MDP with positive stopping everywhere has an optimal
//! stationary policy that is deterministic (optimality equations, then
//! pick any maximiser in each state), and that policy is optimal from every
//! starting state simultaneously. So `π` is Nash exactly when no
//! deterministic `π'_i` improves `V_{i,ρ}`, which is the finite check done
//! by [`is_nash_by_deviation`]. It uses values only, never gradients, and
//! so serves as an independent witness for the first-order test.
//!
//! "Stable" equilibria are not certified directly: the defining inequality
//! quantifies over a neighbourhood and is not finitely checkable. Only the
//! second-order and strictness certificates are reported.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::exact::{jacobian, policy_gradient, values_rho, JacobianScheme, FD_STEP};
use crate::game::GameSpec;
use crate::geometry::{fos_residual_from, sos_certificate, vertex_drift_margin, SosCertificate, SosOptions};
use crate::learners::{IterRecord, RunLog};
use crate::policy::PolicyProfile;

/// Residual threshold for the brute-force enumeration.
pub const BRUTE_FORCE_TOL: f64 = 1e-10;
/// Cap on deterministic profiles enumerated by the brute-force oracle.
pub const BRUTE_FORCE_CAP: u128 = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Classification {
    NotNash,
    Nash,
    SosNash,
    StrictNash,
}

#[derive(Debug, Clone, Serialize)]
pub struct StrictGap {
    pub player: usize,
    pub state: usize,
    /// `v_{a*} − max_{a≠a*} v_a`; absent for single-action blocks.
    pub gap: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct EquilibriumReport {
    pub fos_residual: f64,
    pub is_nash: bool,
    pub is_deterministic: bool,
    pub strict_gaps: Option<Vec<StrictGap>>,
    /// Absent when no finite-difference scheme applies at the policy.
    pub sos: Option<SosCertificate>,
    pub jacobian_scheme: Option<JacobianScheme>,
    /// Sharp-form margin over vertices, reported for deterministic Nash
    /// profiles.
    pub vertex_margin: Option<f64>,
    pub classification: Classification,
}

/// Classifies a profile along the chain
/// strict ⟹ second-order ⟹ stable ⟹ first-order = Nash.
///
/// A profile is `strict_nash` when it is deterministic, Nash and every
/// block gap exceeds `tol`; `sos_nash` when it is Nash and the tested
/// quadratic form is negative. The second-order certificate is computed
/// and reported in every case.
pub fn classify_equilibrium(game: &GameSpec, pi: &PolicyProfile, tol: f64) -> Result<EquilibriumReport> {
    let v = policy_gradient(game, pi)?;
    let fos_residual = fos_residual_from(&v, pi);
    let is_nash = fos_residual <= tol;
    let choices = pi.deterministic_choices();
    let shape = game.shape();
    let strict_gaps = choices.as_ref().map(|choices| {
        shape
            .blocks()
            .zip(choices)
            .map(|((i, s), &star)| {
                let block = &v[shape.block_range(i, s)];
                let gap = block
                    .iter()
                    .enumerate()
                    .filter(|(a, _)| *a != star)
                    .map(|(_, x)| block[star] - x)
                    .reduce(f64::min);
                StrictGap {
                    player: i,
                    state: s,
                    gap,
                }
            })
            .collect::<Vec<_>>()
    });
    let (sos, jacobian_scheme) = match jacobian(game, pi, FD_STEP) {
        Ok(j) => (
            Some(sos_certificate(&j.matrix, pi, SosOptions::default())?),
            Some(j.scheme),
        ),
        Err(Error::BoundaryPolicy(_)) => (None, None),
        Err(e) => return Err(e),
    };
    let strict = is_nash
        && strict_gaps
            .as_ref()
            .is_some_and(|gaps| gaps.iter().all(|g| g.gap.is_none_or(|c| c > tol)));
    let vertex_margin = if is_nash && choices.is_some() {
        match vertex_drift_margin(game, pi) {
            Ok(m) => Some(m),
            Err(Error::TooLarge { .. }) => None,
            Err(e) => return Err(e),
        }
    } else {
        None
    };
    let classification = if !is_nash {
        Classification::NotNash
    } else if strict {
        Classification::StrictNash
    } else if sos.is_some_and(|c| c.max_quad < 0.0) {
        Classification::SosNash
    } else {
        Classification::Nash
    };
    Ok(EquilibriumReport {
        fos_residual,
        is_nash,
        is_deterministic: choices.is_some(),
        strict_gaps,
        sos,
        jacobian_scheme,
        vertex_margin,
        classification,
    })
}

/// Value-based Nash test: no deterministic unilateral deviation raises any
/// player's `V_{i,ρ}` by more than `tol`.
pub fn is_nash_by_deviation(game: &GameSpec, pi: &PolicyProfile, tol: f64) -> Result<bool> {
    let shape = game.shape();
    let base = values_rho(game, pi)?;
    let n_states = shape.n_states();
    for i in 0..shape.n_players() {
        let a = shape.n_actions(i) as u128;
        let count = a.pow(n_states as u32);
        for k in 0..count {
            let mut probs = pi.as_slice().to_vec();
            let mut rem = k;
            for s in (0..n_states).rev() {
                let choice = (rem % a) as usize;
                rem /= a;
                for (off, c) in shape.block_range(i, s).enumerate() {
                    probs[c] = if off == choice { 1.0 } else { 0.0 };
                }
            }
            let deviant = PolicyProfile::from_flat(shape, probs)?;
            if values_rho(game, &deviant)?[i] > base[i] + tol {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

/// Every deterministic profile whose first-order residual is at most
/// [`BRUTE_FORCE_TOL`] and that survives the deviation check.
pub fn brute_force_deterministic_nash(game: &GameSpec) -> Result<Vec<PolicyProfile>> {
    let shape = game.shape();
    let count = shape.deterministic_count().unwrap_or(u128::MAX);
    if count > BRUTE_FORCE_CAP {
        return Err(Error::TooLarge {
            count,
            cap: BRUTE_FORCE_CAP,
        });
    }
    let mut found = Vec::new();
    for k in 0..count {
        let pi = PolicyProfile::deterministic(shape, &shape.deterministic_choices(k))?;
        let v = policy_gradient(game, &pi)?;
        if fos_residual_from(&v, &pi) <= BRUTE_FORCE_TOL && is_nash_by_deviation(game, &pi, BRUTE_FORCE_TOL)? {
            found.push(pi);
        }
    }
    Ok(found)
}

/// Smallest `n₀` such that every record from `n₀` on is an exact hit.
pub fn n0_from_hits(records: &[IterRecord]) -> Option<usize> {
    let mut n0 = None;
    for r in records.iter().rev() {
        if r.exact_hit == Some(true) {
            n0 = Some(r.n);
        } else {
            break;
        }
    }
    n0
}

/// Finite-convergence index of a run towards its deterministic target.
pub fn detect_finite_convergence(log: &RunLog) -> Result<Option<usize>> {
    match &log.target {
        Some(t) if t.is_deterministic() => Ok(n0_from_hits(&log.records)),
        _ => Err(Error::NotDeterministicTarget),
    }
}

/// Order-of-magnitude scale `(M·|S|·A / (c·γ))^{1/(1−p)}` of the
/// finite-convergence index; `None` for `p ≥ 1`.
pub fn n0_scale(margin: f64, n_states: usize, total_actions: usize, gap: f64, gamma: f64, p: f64) -> Option<f64> {
    (p < 1.0).then(|| (margin * n_states as f64 * total_actions as f64 / (gap * gamma)).powf(1.0 / (1.0 - p)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RateFit {
    pub slope: f64,
    pub std_err: f64,
    pub intercept: f64,
    pub points: usize,
    /// Window entries dropped because the mean was zero.
    pub zeros_dropped: usize,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct FitOptions {
    /// Average the curve within this many log-spaced bins before fitting.
    pub log_bins: Option<usize>,
}

/// Ordinary least squares `y = a + b x`, returning `(b, se(b), a)`.
pub fn least_squares(xs: &[f64], ys: &[f64]) -> Result<(f64, f64, f64)> {
    let n = xs.len();
    if n < 3 || ys.len() != n {
        return Err(Error::InsufficientData(format!("{n} points")));
    }
    let nf = n as f64;
    let mx = xs.iter().sum::<f64>() / nf;
    let my = ys.iter().sum::<f64>() / nf;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InsufficientData("no spread in n".into()));
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    Ok((slope, (rss / (nf - 2.0) / sxx).sqrt(), intercept))
}

/// Log-log slope of the mean of `curves` (index `k` holds `n = k + 1`) over
/// `n ∈ [lo, hi]`.
pub fn fit_rate(curves: &[Vec<f64>], window: (usize, usize), opts: FitOptions) -> Result<RateFit> {
    let (lo, hi) = window;
    if curves.is_empty() || lo == 0 || hi < lo {
        return Err(Error::InsufficientData("empty input or bad window".into()));
    }
    let len = curves.iter().map(Vec::len).min().unwrap_or(0);
    if len < hi {
        return Err(Error::InsufficientData(format!(
            "window ends at {hi} but curves have {len} entries"
        )));
    }
    let mean: Vec<f64> = (lo..=hi)
        .map(|n| curves.iter().map(|c| c[n - 1]).sum::<f64>() / curves.len() as f64)
        .collect();
    let ns: Vec<f64> = (lo..=hi).map(|n| n as f64).collect();
    let (ns, mean) = match opts.log_bins {
        Some(bins) if bins >= 3 => {
            let (a, b) = ((lo as f64).ln(), (hi as f64 + 1.0).ln());
            let mut bx = Vec::new();
            let mut by = Vec::new();
            for k in 0..bins {
                let left = (a + (b - a) * k as f64 / bins as f64).exp();
                let right = (a + (b - a) * (k + 1) as f64 / bins as f64).exp();
                let members: Vec<usize> = ns
                    .iter()
                    .enumerate()
                    .filter(|(_, n)| **n >= left && **n < right)
                    .map(|(idx, _)| idx)
                    .collect();
                if members.is_empty() {
                    continue;
                }
                let m = members.len() as f64;
                bx.push(members.iter().map(|&j| ns[j].ln()).sum::<f64>() / m);
                by.push(members.iter().map(|&j| mean[j]).sum::<f64>() / m);
            }
            (bx.into_iter().map(f64::exp).collect::<Vec<_>>(), by)
        }
        _ => (ns, mean),
    };
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut zeros_dropped = 0;
    for (n, m) in ns.iter().zip(&mean) {
        if *m > 0.0 {
            xs.push(n.ln());
            ys.push(m.ln());
        } else {
            zeros_dropped += 1;
        }
    }
    let (slope, std_err, intercept) = least_squares(&xs, &ys)?;
    Ok(RateFit {
        slope,
        std_err,
        intercept,
        points: xs.len(),
        zeros_dropped,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct BasinRateReport {
    pub fit: Option<RateFit>,
    pub runs: usize,
    pub excluded: usize,
    pub exclusion_fraction: f64,
}

/// Fits the rate over runs that never left the ball of radius
/// `basin_radius` around the target; the others are counted as exits.
pub fn fit_rate_in_basin(
    logs: &[RunLog],
    window: (usize, usize),
    basin_radius: f64,
    opts: FitOptions,
) -> Result<BasinRateReport> {
    let mut curves = Vec::new();
    let mut excluded = 0;
    for log in logs {
        let series = log
            .dist_sq_series()
            .ok_or_else(|| Error::InsufficientData("run has no target".into()))?;
        if log.failure.is_some() || series.iter().any(|d| d.sqrt() > basin_radius) {
            excluded += 1;
        } else {
            curves.push(series);
        }
    }
    let fit = if curves.is_empty() {
        None
    } else {
        Some(fit_rate(&curves, window, opts)?)
    };
    Ok(BasinRateReport {
        fit,
        runs: logs.len(),
        excluded,
        exclusion_fraction: if logs.is_empty() { 0.0 } else { excluded as f64 / logs.len() as f64 },
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ContractionReport {
    pub checked: usize,
    pub violations: usize,
    /// Largest `E_{n+1} / E_n` seen over steps with `E_n > 0`.
    pub worst_ratio: f64,
}

/// Checks `E_{n+1} ≤ (1 − 2 μ γ_n + γ_n² L²) E_n` along a logged run.
pub fn energy_contraction(log: &RunLog, mu: f64, lipschitz: f64) -> Result<ContractionReport> {
    let mut checked = 0;
    let mut violations = 0;
    let mut worst_ratio: f64 = 0.0;
    for pair in log.records.windows(2) {
        let (Some(e0), Some(e1)) = (pair[0].energy, pair[1].energy) else {
            return Err(Error::InsufficientData("run has no target".into()));
        };
        let g = pair[0].gamma_n;
        let factor = 1.0 - 2.0 * mu * g + g * g * lipschitz * lipschitz;
        checked += 1;
        if e1 > factor * e0 + f64::EPSILON * e0 {
            violations += 1;
        }
        if e0 > 0.0 {
            worst_ratio = worst_ratio.max(e1 / e0);
        }
    }
    Ok(ContractionReport {
        checked,
        violations,
        worst_ratio,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct AbsorptionReport {
    /// First iterate at which the target is hit with enough score margin to
    /// absorb every later realised step.
    pub certified_at: Option<usize>,
    /// The run indeed stayed at the target after `certified_at`.
    pub consistent: bool,
}

/// Post-hoc absorption check for lazy runs. The projection of a score block
/// is the vertex `a*` iff `y_{a*} − y_a ≥ 1` for all `a ≠ a*`, and one step
/// moves any such gap by at most `2 γ_k sup|v̂_k|`. If at some hit the gap
/// exceeds `threshold` plus the sum of those realised moves over the rest of
/// the run, the run must stay at the target.
pub fn lpg_absorption(log: &RunLog, threshold: f64) -> Result<AbsorptionReport> {
    let records = &log.records;
    if records.iter().any(|r| r.min_score_gap.is_none()) {
        return Err(Error::InsufficientData("run has no score gaps".into()));
    }
    let mut tail = vec![0.0; records.len() + 1];
    for k in (0..records.len()).rev() {
        tail[k] = tail[k + 1] + 2.0 * records[k].gamma_n * records[k].signal_sup.unwrap_or(0.0);
    }
    for (k, r) in records.iter().enumerate() {
        let gap = r.min_score_gap.unwrap_or(f64::NEG_INFINITY);
        if r.exact_hit == Some(true) && gap - tail[k] >= threshold {
            let consistent = records[k..].iter().all(|x| x.exact_hit == Some(true));
            return Ok(AbsorptionReport {
                certified_at: Some(r.n),
                consistent,
            });
        }
    }
    Ok(AbsorptionReport {
        certified_at: None,
        consistent: true,
    })
}
