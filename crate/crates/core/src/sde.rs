//! Controlled diffusion models and discretized path ensembles.
//!
//! Two coupled system shapes are supported, differing in where the
//! interaction term `v` enters each agent's dynamics:
//!
//! ```text
//! variant A:  dX^i = (b(X^i, U^i) + v^i) dt + sigma(X^i) dB^i
//! variant B:  dX^i = (b(X^i, U^i) + sigma(X^i) v^i) dt + sigma(X^i) dB^i
//! ```
//!
//! Dropping `v` gives the nominal (decoupled) model driven by i.i.d.
//! Brownian motions. Trajectories are integrated with explicit
//! Euler-Maruyama, evaluating drift, diffusion, controls, and `v` at the
//! left endpoint of each step so that the recorded paths line up exactly
//! with the Ito integrals used for measure reweighting.
//!
//! State dimension is one scalar per agent. Brownian increments come from
//! counter-based streams keyed by (path, agent, step), which makes every
//! ensemble reproducible independent of thread scheduling, and means the
//! coupled and nominal ensembles for the same seed share identical noise.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::Error;
use crate::rng::CounterRng;
use crate::Result;

/// Relative tolerance for `n_steps * dt == horizon` checks.
const GRID_REL_TOL: f64 = 1e-9;

// ---------------------------------------------------------------------------
// Time grid
// ---------------------------------------------------------------------------

/// Uniform time discretization of `[0, horizon]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TimeGrid {
    horizon: f64,
    dt: f64,
    n_steps: usize,
}

impl TimeGrid {
    /// Build a grid from a horizon and step; errors unless the horizon is an
    /// integer number of steps (to within rounding).
    pub fn new(horizon: f64, dt: f64) -> Result<Self> {
        if !(dt > 0.0) || !horizon.is_finite() || horizon <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "time grid requires horizon > 0 and dt > 0 (got horizon = {horizon}, dt = {dt})"
            )));
        }
        let n_steps = (horizon / dt).round() as usize;
        if n_steps < 1
            || ((n_steps as f64) * dt - horizon).abs() > GRID_REL_TOL * horizon.max(1.0)
        {
            return Err(Error::GridMismatch {
                horizon,
                dt,
                n_steps,
            });
        }
        Ok(TimeGrid {
            horizon,
            dt,
            n_steps,
        })
    }

    pub fn from_steps(n_steps: usize, dt: f64) -> Result<Self> {
        Self::new(n_steps as f64 * dt, dt)
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn time(&self, step: usize) -> f64 {
        step as f64 * self.dt
    }
}

// ---------------------------------------------------------------------------
// Model catalog
// ---------------------------------------------------------------------------

/// Per-agent drift `b(x, u)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Drift {
    Zero,
    /// `b = state_coeff * x + control_coeff * u`; covers Ornstein-Uhlenbeck
    /// and linear-quadratic benchmarks.
    Linear {
        state_coeff: f64,
        control_coeff: f64,
    },
    /// `b = sin(x)`; bounded and 1-Lipschitz, for regularity diagnostics.
    Sine,
    /// `b = x^2`; intentionally non-Lipschitz, for regularity diagnostics.
    QuadraticState,
}

impl Drift {
    #[inline(always)]
    pub fn eval(&self, x: f64, u: f64) -> f64 {
        match self {
            Drift::Zero => 0.0,
            Drift::Linear {
                state_coeff,
                control_coeff,
            } => state_coeff * x + control_coeff * u,
            Drift::Sine => x.sin(),
            Drift::QuadraticState => x * x,
        }
    }
}

/// Per-agent diffusion coefficient `sigma(x)`.
///
/// `Constant { sigma: 0.0 }` disables the noise entirely; that combination
/// fails [`validate_model`] but is accepted by the integrator as a test hook
/// for deterministic-dynamics checks.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Diffusion {
    Constant { sigma: f64 },
    /// `sigma = base + slope * |x|`.
    Affine { base: f64, slope: f64 },
}

impl Diffusion {
    #[inline(always)]
    pub fn eval(&self, x: f64) -> f64 {
        match self {
            Diffusion::Constant { sigma } => *sigma,
            Diffusion::Affine { base, slope } => base + slope * x.abs(),
        }
    }

    /// The constant value if the coefficient does not depend on the state.
    pub fn as_constant(&self) -> Option<f64> {
        match self {
            Diffusion::Constant { sigma } => Some(*sigma),
            Diffusion::Affine { base, slope } => (*slope == 0.0).then_some(*base),
        }
    }

    fn min_on_probe(&self, lo: f64, hi: f64) -> f64 {
        match self {
            Diffusion::Constant { sigma } => *sigma,
            Diffusion::Affine { base, slope } => {
                let candidates = [lo, hi, 0.0_f64.clamp(lo, hi)];
                candidates
                    .iter()
                    .map(|x| base + slope * x.abs())
                    .fold(f64::INFINITY, f64::min)
            }
        }
    }
}

/// Interaction term `v^i` of the coupled model.
///
/// Variant A admits forms that read the current ensemble state; variant B
/// admits forms that read the agent's own noise record. Deterministic forms
/// (constants and time tables) are valid in both.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Interaction {
    None,
    /// Same constant shift for every agent.
    Constant { level: f64 },
    /// Per-agent constant shifts, e.g. geometrically decaying magnitudes.
    PerAgent { levels: Vec<f64> },
    /// Deterministic piecewise-constant-in-time shift shared by all agents;
    /// entry `j` applies on the j-th equal sub-interval of the horizon.
    TimePiecewise { levels: Vec<f64> },
    /// `v^i = kappa * (ensemble mean - x^i)`: symmetric mean-field pull.
    MeanFieldAttraction { kappa: f64 },
    /// `v^i = gain * x^i`.
    StateProportional { gain: f64 },
    /// `v^i = eps * u^i`: control-proportional coupling for stability sweeps.
    ControlScaled { eps: f64 },
    /// `v^i = gain * B^i_t` (the agent's accumulated noise); variant B only.
    NoiseProportional { gain: f64 },
}

impl Interaction {
    pub fn is_none(&self) -> bool {
        matches!(self, Interaction::None)
    }

    /// Whether the form reads the ensemble state history (variant A).
    pub fn reads_state(&self) -> bool {
        matches!(
            self,
            Interaction::MeanFieldAttraction { .. }
                | Interaction::StateProportional { .. }
                | Interaction::ControlScaled { .. }
        )
    }

    /// Whether the form reads the noise history (variant B).
    pub fn reads_noise(&self) -> bool {
        matches!(self, Interaction::NoiseProportional { .. })
    }

    /// Value of a deterministic (state- and noise-free) form; 0 for `None`.
    /// Callers must check `reads_state` / `reads_noise` first.
    pub fn deterministic_value(&self, agent: usize, step: usize, n_steps: usize) -> f64 {
        self.value(agent, step, n_steps, 0.0, 0.0, 0.0, 0.0)
    }

    #[inline(always)]
    fn value(
        &self,
        agent: usize,
        step: usize,
        n_steps: usize,
        x: f64,
        ensemble_mean: f64,
        u: f64,
        own_noise: f64,
    ) -> f64 {
        match self {
            Interaction::None => 0.0,
            Interaction::Constant { level } => *level,
            Interaction::PerAgent { levels } => levels[agent],
            Interaction::TimePiecewise { levels } => {
                let idx = (step * levels.len()) / n_steps;
                levels[idx.min(levels.len() - 1)]
            }
            Interaction::MeanFieldAttraction { kappa } => kappa * (ensemble_mean - x),
            Interaction::StateProportional { gain } => gain * x,
            Interaction::ControlScaled { eps } => eps * u,
            Interaction::NoiseProportional { gain } => gain * own_noise,
        }
    }
}

/// Where the interaction enters the dynamics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ModelVariant {
    /// `v` added to the drift.
    A,
    /// `v` premultiplied by the diffusion coefficient.
    B,
}

/// Measure-dependent drift `b(x, m, u)` restricted to the first moment `m`
/// of the law, for mean-field-limit models.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeanFieldDrift {
    pub state_coeff: f64,
    pub mean_coeff: f64,
    pub control_coeff: f64,
}

impl MeanFieldDrift {
    #[inline(always)]
    pub fn eval(&self, x: f64, mean: f64, u: f64) -> f64 {
        self.state_coeff * x + self.mean_coeff * mean + self.control_coeff * u
    }
}

/// Full ensemble model description.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelSpec {
    pub n_agents: usize,
    pub drift: Drift,
    pub diffusion: Diffusion,
    pub interaction: Interaction,
    pub variant: ModelVariant,
    /// Present only for mean-field-limit models (see [`crate::meanfield`]).
    pub meanfield_drift: Option<MeanFieldDrift>,
    /// One entry per agent, or a single entry broadcast to all agents.
    pub initial_states: Vec<f64>,
}

impl ModelSpec {
    #[inline(always)]
    pub fn initial_state(&self, agent: usize) -> f64 {
        if self.initial_states.len() == 1 {
            self.initial_states[0]
        } else {
            self.initial_states[agent]
        }
    }

    /// Clone with a different agent count (initial state broadcast).
    pub fn with_agents(&self, n_agents: usize) -> ModelSpec {
        let mut spec = self.clone();
        spec.n_agents = n_agents;
        if spec.initial_states.len() != 1 && spec.initial_states.len() != n_agents {
            spec.initial_states = vec![spec.initial_states[0]];
        }
        spec
    }
}

// ---------------------------------------------------------------------------
// Policies
// ---------------------------------------------------------------------------

/// Information available to each agent's feedback law.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum InfoPattern {
    /// Agent i reads only its own state.
    Local,
    /// Agent i may additionally read the ensemble mean state.
    Global,
}

/// Clamped affine feedback: `u = clamp(intercept + state_gain * x
/// [+ mean_gain * ensemble_mean])`. The mean term is only legal under
/// [`InfoPattern::Global`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AffinePolicy {
    pub intercept: f64,
    pub state_gain: f64,
    pub mean_gain: f64,
}

impl AffinePolicy {
    pub fn new(intercept: f64, state_gain: f64) -> Self {
        AffinePolicy {
            intercept,
            state_gain,
            mean_gain: 0.0,
        }
    }
}

/// Shared parameters give the symmetric policy; per-agent parameters allow
/// deliberate asymmetry.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum PolicyParams {
    Shared(AffinePolicy),
    PerAgent(Vec<AffinePolicy>),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PolicySpec {
    pub params: PolicyParams,
    pub action_min: f64,
    pub action_max: f64,
    pub information: InfoPattern,
}

impl PolicySpec {
    /// Symmetric local feedback with a common parameter pair.
    pub fn shared(intercept: f64, state_gain: f64, action_min: f64, action_max: f64) -> Self {
        PolicySpec {
            params: PolicyParams::Shared(AffinePolicy::new(intercept, state_gain)),
            action_min,
            action_max,
            information: InfoPattern::Local,
        }
    }

    /// The always-zero control.
    pub fn zero() -> Self {
        Self::shared(0.0, 0.0, -1.0, 1.0)
    }

    pub fn is_shared(&self) -> bool {
        matches!(self.params, PolicyParams::Shared(_))
    }

    fn agent_params(&self, agent: usize) -> &AffinePolicy {
        match &self.params {
            PolicyParams::Shared(p) => p,
            PolicyParams::PerAgent(ps) => &ps[agent],
        }
    }

    fn structural_errors(&self, n_agents: usize) -> Option<String> {
        if self.action_min > self.action_max {
            return Some(format!(
                "action interval is empty: [{}, {}]",
                self.action_min, self.action_max
            ));
        }
        if let PolicyParams::PerAgent(ps) = &self.params {
            if ps.len() != n_agents {
                return Some(format!(
                    "policy declares {} per-agent parameter sets for {} agents",
                    ps.len(),
                    n_agents
                ));
            }
        }
        if self.information == InfoPattern::Local {
            let reads_mean = match &self.params {
                PolicyParams::Shared(p) => p.mean_gain != 0.0,
                PolicyParams::PerAgent(ps) => ps.iter().any(|p| p.mean_gain != 0.0),
            };
            if reads_mean {
                return Some("local policy must not read the ensemble mean".to_string());
            }
        }
        None
    }
}

/// Feedback law interface used by the integrator. The ensemble mean argument
/// is only meaningful for global-information policies; local policies ignore
/// it by construction.
pub trait Controller: Sync {
    fn control(&self, agent: usize, x: f64, ensemble_mean: f64) -> f64;
}

impl Controller for PolicySpec {
    #[inline(always)]
    fn control(&self, agent: usize, x: f64, ensemble_mean: f64) -> f64 {
        let p = self.agent_params(agent);
        let raw = match self.information {
            InfoPattern::Local => p.intercept + p.state_gain * x,
            InfoPattern::Global => p.intercept + p.state_gain * x + p.mean_gain * ensemble_mean,
        };
        raw.clamp(self.action_min, self.action_max)
    }
}

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

/// One named structural check.
#[derive(Debug, Clone, Serialize)]
pub struct ValidationCheck {
    pub name: &'static str,
    pub passed: bool,
    pub message: String,
}

/// Outcome of [`validate_model`]: structural failures are errors; regularity
/// diagnostics appear here only as warnings.
#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub checks: Vec<ValidationCheck>,
    pub warnings: Vec<String>,
}

/// Domain on which state-dependent coefficients are probed during
/// validation. Wide enough for every catalog scenario at desk scale.
const PROBE_DOMAIN: (f64, f64) = (-10.0, 10.0);

/// Check the structural invariants of a model: positive diffusion, a
/// populated ensemble, a consistent grid, and interaction/variant agreement.
/// Regularity of the drift is probed heuristically and reported as warnings.
pub fn validate_model(spec: &ModelSpec, grid: &TimeGrid) -> Result<ValidationReport> {
    let mut checks = Vec::new();
    let mut push = |name: &'static str, passed: bool, message: String| {
        checks.push(ValidationCheck {
            name,
            passed,
            message,
        });
    };

    if spec.n_agents == 0 {
        return Err(Error::EmptyEnsemble);
    }
    push("n_agents", true, format!("{} agents", spec.n_agents));

    let sigma_min = spec.diffusion.min_on_probe(PROBE_DOMAIN.0, PROBE_DOMAIN.1);
    if !(sigma_min > 0.0) {
        return Err(Error::NonPositiveDiffusion { sigma_min });
    }
    push(
        "diffusion_lower_bound",
        true,
        format!("sigma >= {sigma_min} on probe domain"),
    );

    if spec.initial_states.len() != 1 && spec.initial_states.len() != spec.n_agents {
        return Err(Error::InvalidParameter(format!(
            "{} initial states for {} agents",
            spec.initial_states.len(),
            spec.n_agents
        )));
    }
    if spec.initial_states.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidParameter(
            "initial states must be finite".to_string(),
        ));
    }
    push("initial_states", true, "finite and shape-consistent".into());

    if let Interaction::PerAgent { levels } = &spec.interaction {
        if levels.len() != spec.n_agents {
            return Err(Error::InvalidParameter(format!(
                "{} per-agent interaction levels for {} agents",
                levels.len(),
                spec.n_agents
            )));
        }
    }
    match spec.variant {
        ModelVariant::A => {
            if spec.interaction.reads_noise() {
                return Err(Error::UnsupportedInteraction {
                    reason: "variant A interaction must depend on ensemble state, not noise"
                        .to_string(),
                });
            }
        }
        ModelVariant::B => {
            if spec.interaction.reads_state() {
                return Err(Error::UnsupportedInteraction {
                    reason: "variant B interaction must depend on noise, not ensemble state"
                        .to_string(),
                });
            }
        }
    }
    push("interaction_variant", true, "form matches variant".into());

    // Grid was already range-checked on construction; re-derive the step
    // count to surface mismatches introduced by manual construction.
    if ((grid.n_steps as f64) * grid.dt - grid.horizon).abs()
        > GRID_REL_TOL * grid.horizon.max(1.0)
    {
        return Err(Error::GridMismatch {
            horizon: grid.horizon,
            dt: grid.dt,
            n_steps: grid.n_steps,
        });
    }
    push("grid", true, format!("{} steps of {}", grid.n_steps, grid.dt));

    // Regularity diagnostics: warnings only, never structural failures.
    let mut warnings = Vec::new();
    let reg = check_regularity(spec, PROBE_DOMAIN, 512, 0x5eed_cafe);
    if reg.flagged {
        warnings.push(format!(
            "drift regularity suspect: Lipschitz ratio grew {:?} across nested probe domains \
             (heuristic, not conclusive)",
            reg.tier_lipschitz
        ));
    }

    Ok(ValidationReport { checks, warnings })
}

// ---------------------------------------------------------------------------
// Regularity diagnostics
// ---------------------------------------------------------------------------

/// Sampled Lipschitz and affine-growth ratios for the drift and diffusion.
///
/// The probe evaluates max ratios over random triples on three nested
/// sub-domains; a ratio that keeps growing as the domain widens is flagged.
/// This is a heuristic: boundedness cannot be established from samples.
#[derive(Debug, Clone, Serialize)]
pub struct RegularityReport {
    /// Max observed `|b(x,u) - b(y,u)| / |x - y|` on the full domain.
    pub lipschitz_ratio: f64,
    /// Max observed `(|b(x,u) * x| + sigma(x)^2) / (1 + x^2)`.
    pub growth_ratio: f64,
    /// Lipschitz maxima on the nested probe domains (innermost first).
    pub tier_lipschitz: Vec<f64>,
    /// Growth maxima on the nested probe domains.
    pub tier_growth: Vec<f64>,
    pub flagged: bool,
}

const PROBE_CONTROL_RANGE: (f64, f64) = (-2.0, 2.0);
const TIER_SCALES: [f64; 3] = [0.25, 0.5, 1.0];
const TIER_GROWTH_FACTOR: f64 = 1.5;

/// Probe the drift and diffusion for Lipschitz continuity and affine growth
/// on the given domain with `n_probe` random triples per tier.
pub fn check_regularity(
    spec: &ModelSpec,
    domain: (f64, f64),
    n_probe: usize,
    seed: u64,
) -> RegularityReport {
    let rng = CounterRng::new(seed);
    let center = 0.5 * (domain.0 + domain.1);
    let half = 0.5 * (domain.1 - domain.0);

    let mut tier_lipschitz = Vec::with_capacity(TIER_SCALES.len());
    let mut tier_growth = Vec::with_capacity(TIER_SCALES.len());
    for (tier, scale) in TIER_SCALES.iter().enumerate() {
        let lo = center - half * scale;
        let hi = center + half * scale;
        let mut max_lip: f64 = 0.0;
        let mut max_growth: f64 = 0.0;
        for i in 0..n_probe.max(2) {
            let x = rng.uniform(i, tier, 0, lo, hi);
            let y = rng.uniform(i, tier, 1, lo, hi);
            let u = rng.uniform(i, tier, 2, PROBE_CONTROL_RANGE.0, PROBE_CONTROL_RANGE.1);
            if (x - y).abs() > 1e-12 {
                let lip = (spec.drift.eval(x, u) - spec.drift.eval(y, u)).abs() / (x - y).abs();
                max_lip = max_lip.max(lip);
            }
            let sig = spec.diffusion.eval(x);
            let growth = ((spec.drift.eval(x, u) * x).abs() + sig * sig) / (1.0 + x * x);
            max_growth = max_growth.max(growth);
        }
        tier_lipschitz.push(max_lip);
        tier_growth.push(max_growth);
    }

    let grows = |tiers: &[f64]| {
        tiers.windows(2).all(|w| w[1] > w[0])
            && tiers[tiers.len() - 1] > TIER_GROWTH_FACTOR * tiers[0]
    };
    let flagged = grows(&tier_lipschitz) || grows(&tier_growth);

    RegularityReport {
        lipschitz_ratio: *tier_lipschitz.last().unwrap(),
        growth_ratio: *tier_growth.last().unwrap(),
        tier_lipschitz,
        tier_growth,
        flagged,
    }
}

// ---------------------------------------------------------------------------
// Simulation
// ---------------------------------------------------------------------------

/// Test instrumentation for noise streams. `ZeroAgent(j)` silences agent
/// j's Brownian increments; `SharedAcrossAgents` gives every agent the same
/// stream (used to exercise exact-symmetry cases).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseHook {
    None,
    ZeroAgent(usize),
    SharedAcrossAgents,
}

/// One simulated path of the full ensemble. States are stored agent-major:
/// agent `a` occupies `states[a * (n_steps + 1)..][..n_steps + 1]`.
#[derive(Debug, Clone)]
pub struct PathRecord {
    pub path_index: usize,
    pub n_agents: usize,
    pub n_steps: usize,
    states: Vec<f64>,
    controls: Vec<f64>,
    increments: Vec<f64>,
    interactions: Vec<f64>,
}

impl PathRecord {
    #[inline(always)]
    pub fn state(&self, agent: usize, step: usize) -> f64 {
        self.states[agent * (self.n_steps + 1) + step]
    }

    #[inline(always)]
    pub fn control(&self, agent: usize, step: usize) -> f64 {
        self.controls[agent * self.n_steps + step]
    }

    #[inline(always)]
    pub fn increment(&self, agent: usize, step: usize) -> f64 {
        self.increments[agent * self.n_steps + step]
    }

    #[inline(always)]
    pub fn interaction(&self, agent: usize, step: usize) -> f64 {
        self.interactions[agent * self.n_steps + step]
    }

    /// Mean state across agents at one step.
    pub fn ensemble_mean(&self, step: usize) -> f64 {
        (0..self.n_agents).map(|a| self.state(a, step)).sum::<f64>() / self.n_agents as f64
    }

    pub fn terminal_state(&self, agent: usize) -> f64 {
        self.state(agent, self.n_steps)
    }
}

fn integrate_path<C: Controller + ?Sized>(
    spec: &ModelSpec,
    controller: &C,
    grid: &TimeGrid,
    rng: &CounterRng,
    path: usize,
    with_interaction: bool,
    hook: NoiseHook,
) -> Result<PathRecord> {
    let n = spec.n_agents;
    let steps = grid.n_steps();
    let dt = grid.dt();
    let sqrt_dt = dt.sqrt();

    let mut states = vec![0.0; n * (steps + 1)];
    let mut controls = vec![0.0; n * steps];
    let mut increments = vec![0.0; n * steps];
    let mut interactions = vec![0.0; n * steps];

    let mut cur: Vec<f64> = (0..n).map(|a| spec.initial_state(a)).collect();
    // Accumulated own noise, read by noise-dependent interactions before the
    // current step's increment is added.
    let mut own_noise = vec![0.0; n];
    for (a, x) in cur.iter().enumerate() {
        states[a * (steps + 1)] = *x;
    }

    for k in 0..steps {
        let ensemble_mean = cur.iter().sum::<f64>() / n as f64;
        for a in 0..n {
            let x = cur[a];
            let u = controller.control(a, x, ensemble_mean);
            let sigma = spec.diffusion.eval(x);
            let z = match hook {
                NoiseHook::None => rng.normal(path, a, k),
                NoiseHook::ZeroAgent(j) if j == a => 0.0,
                NoiseHook::ZeroAgent(_) => rng.normal(path, a, k),
                NoiseHook::SharedAcrossAgents => rng.normal(path, 0, k),
            };
            let db = z * sqrt_dt;
            let v = if with_interaction {
                spec.interaction
                    .value(a, k, steps, x, ensemble_mean, u, own_noise[a])
            } else {
                0.0
            };
            let coupling = match spec.variant {
                ModelVariant::A => v,
                ModelVariant::B => sigma * v,
            };
            let next = x + (spec.drift.eval(x, u) + coupling) * dt + sigma * db;
            if !next.is_finite() {
                return Err(Error::NumericOverflow {
                    path,
                    agent: a,
                    step: k,
                });
            }
            controls[a * steps + k] = u;
            increments[a * steps + k] = db;
            interactions[a * steps + k] = v;
            states[a * (steps + 1) + k + 1] = next;
            cur[a] = next;
            own_noise[a] += db;
        }
    }

    Ok(PathRecord {
        path_index: path,
        n_agents: n,
        n_steps: steps,
        states,
        controls,
        increments,
        interactions,
    })
}

/// Simulate `n_paths` ensembles and map each finished path through `f`,
/// discarding the trajectory afterwards. This is the streaming workhorse:
/// memory stays at one path per worker thread no matter the ensemble size.
///
/// Output order follows path index, and every draw is counter-based, so the
/// result is identical across thread counts.
pub fn simulate_paths<C, T, F>(
    spec: &ModelSpec,
    controller: &C,
    grid: &TimeGrid,
    n_paths: usize,
    seed: u64,
    with_interaction: bool,
    f: F,
) -> Result<Vec<T>>
where
    C: Controller + ?Sized,
    T: Send,
    F: Fn(&PathRecord) -> T + Sync,
{
    simulate_paths_hooked(
        spec,
        controller,
        grid,
        n_paths,
        seed,
        with_interaction,
        NoiseHook::None,
        f,
    )
}

/// [`simulate_paths`] with a noise instrumentation hook.
#[allow(clippy::too_many_arguments)]
pub fn simulate_paths_hooked<C, T, F>(
    spec: &ModelSpec,
    controller: &C,
    grid: &TimeGrid,
    n_paths: usize,
    seed: u64,
    with_interaction: bool,
    hook: NoiseHook,
    f: F,
) -> Result<Vec<T>>
where
    C: Controller + ?Sized,
    T: Send,
    F: Fn(&PathRecord) -> T + Sync,
{
    if n_paths == 0 {
        return Err(Error::EmptySample);
    }
    let rng = CounterRng::new(seed);
    let results: Vec<Result<T>> = (0..n_paths)
        .into_par_iter()
        .with_min_len(8)
        .map(|p| {
            integrate_path(spec, controller, grid, &rng, p, with_interaction, hook)
                .map(|rec| f(&rec))
        })
        .collect();
    // Surface the lowest-index failure so error reports are deterministic.
    let mut out = Vec::with_capacity(n_paths);
    for r in results {
        out.push(r?);
    }
    Ok(out)
}

/// A fully materialized, immutable ensemble of simulated paths.
#[derive(Debug, Clone)]
pub struct PathBundle {
    pub seed: u64,
    pub grid: TimeGrid,
    pub n_paths: usize,
    pub n_agents: usize,
    pub with_interaction: bool,
    records: Vec<PathRecord>,
}

impl PathBundle {
    pub fn record(&self, path: usize) -> &PathRecord {
        &self.records[path]
    }

    pub fn records(&self) -> &[PathRecord] {
        &self.records
    }

    pub fn state(&self, path: usize, agent: usize, step: usize) -> f64 {
        self.records[path].state(agent, step)
    }

    pub fn control(&self, path: usize, agent: usize, step: usize) -> f64 {
        self.records[path].control(agent, step)
    }

    pub fn increment(&self, path: usize, agent: usize, step: usize) -> f64 {
        self.records[path].increment(agent, step)
    }

    pub fn interaction(&self, path: usize, agent: usize, step: usize) -> f64 {
        self.records[path].interaction(agent, step)
    }

    /// Columnar debug dump: one row per (path, agent, step) with the
    /// left-endpoint state, the applied control, the Brownian increment, the
    /// recorded interaction value, and the resulting state.
    pub fn write_csv<W: std::io::Write>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(w, "path,agent,step,t,state,control,dB,interaction,state_next")?;
        for rec in &self.records {
            for a in 0..rec.n_agents {
                for k in 0..rec.n_steps {
                    writeln!(
                        w,
                        "{},{},{},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e}",
                        rec.path_index,
                        a,
                        k,
                        self.grid.time(k),
                        rec.state(a, k),
                        rec.control(a, k),
                        rec.increment(a, k),
                        rec.interaction(a, k),
                        rec.state(a, k + 1),
                    )?;
                }
            }
        }
        Ok(())
    }
}

/// Simulate and keep every trajectory. Intended for modest ensembles
/// (debug dumps, reweighting at dump scale); the statistical pipelines use
/// [`simulate_paths`] instead.
pub fn simulate(
    spec: &ModelSpec,
    policy: &PolicySpec,
    grid: &TimeGrid,
    n_paths: usize,
    seed: u64,
    with_interaction: bool,
) -> Result<PathBundle> {
    simulate_hooked(spec, policy, grid, n_paths, seed, with_interaction, NoiseHook::None)
}

/// [`simulate`] with a noise instrumentation hook.
pub fn simulate_hooked(
    spec: &ModelSpec,
    policy: &PolicySpec,
    grid: &TimeGrid,
    n_paths: usize,
    seed: u64,
    with_interaction: bool,
    hook: NoiseHook,
) -> Result<PathBundle> {
    if let Some(msg) = policy.structural_errors(spec.n_agents) {
        return Err(Error::InvalidParameter(msg));
    }
    let records = simulate_paths_hooked(
        spec,
        policy,
        grid,
        n_paths,
        seed,
        with_interaction,
        hook,
        |rec| rec.clone(),
    )?;
    Ok(PathBundle {
        seed,
        grid: *grid,
        n_paths,
        n_agents: spec.n_agents,
        with_interaction,
        records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ou_spec(n_agents: usize) -> ModelSpec {
        ModelSpec {
            n_agents,
            drift: Drift::Linear {
                state_coeff: -1.0,
                control_coeff: 1.0,
            },
            diffusion: Diffusion::Constant { sigma: 1.0 },
            interaction: Interaction::None,
            variant: ModelVariant::A,
            meanfield_drift: None,
            initial_states: vec![1.0],
        }
    }

    fn grid_01() -> TimeGrid {
        TimeGrid::new(1.0, 0.01).unwrap()
    }

    #[test]
    fn grid_rejects_incommensurate_step() {
        assert!(matches!(
            TimeGrid::new(1.0, 0.3),
            Err(Error::GridMismatch { .. })
        ));
        assert!(TimeGrid::new(1.0, 0.001).is_ok());
    }

    #[test]
    fn validate_accepts_ou_pair() {
        let report = validate_model(&ou_spec(2), &grid_01()).unwrap();
        assert!(report.checks.iter().all(|c| c.passed));
        assert!(report.warnings.is_empty());
    }

    #[test]
    fn validate_rejects_zero_diffusion() {
        let mut spec = ou_spec(2);
        spec.diffusion = Diffusion::Constant { sigma: 0.0 };
        assert!(matches!(
            validate_model(&spec, &grid_01()),
            Err(Error::NonPositiveDiffusion { .. })
        ));
    }

    #[test]
    fn validate_rejects_empty_ensemble() {
        let mut spec = ou_spec(2);
        spec.n_agents = 0;
        assert!(matches!(
            validate_model(&spec, &grid_01()),
            Err(Error::EmptyEnsemble)
        ));
    }

    #[test]
    fn validate_rejects_variant_mismatch() {
        let mut spec = ou_spec(2);
        spec.interaction = Interaction::MeanFieldAttraction { kappa: 0.5 };
        spec.variant = ModelVariant::B;
        assert!(matches!(
            validate_model(&spec, &grid_01()),
            Err(Error::UnsupportedInteraction { .. })
        ));
        spec.variant = ModelVariant::A;
        assert!(validate_model(&spec, &grid_01()).is_ok());
    }

    #[test]
    fn frozen_dynamics_stay_put() {
        let spec = ModelSpec {
            n_agents: 3,
            drift: Drift::Zero,
            diffusion: Diffusion::Constant { sigma: 0.0 },
            interaction: Interaction::None,
            variant: ModelVariant::A,
            meanfield_drift: None,
            initial_states: vec![1.0],
        };
        let bundle = simulate(&spec, &PolicySpec::zero(), &grid_01(), 4, 9, false).unwrap();
        for p in 0..4 {
            for a in 0..3 {
                for k in 0..=grid_01().n_steps() {
                    assert_eq!(bundle.state(p, a, k), 1.0);
                }
            }
        }
    }

    #[test]
    fn pure_brownian_terminal_matches_increment_sum() {
        let spec = ModelSpec {
            n_agents: 1,
            drift: Drift::Zero,
            diffusion: Diffusion::Constant { sigma: 1.0 },
            interaction: Interaction::None,
            variant: ModelVariant::A,
            meanfield_drift: None,
            initial_states: vec![0.5],
        };
        let grid = grid_01();
        let bundle = simulate(&spec, &PolicySpec::zero(), &grid, 16, 77, false).unwrap();
        for p in 0..16 {
            let sum: f64 = (0..grid.n_steps()).map(|k| bundle.increment(p, 0, k)).sum();
            let terminal = bundle.state(p, 0, grid.n_steps());
            assert!(
                (terminal - (0.5 + sum)).abs() < 1e-12,
                "path {p}: terminal {terminal} vs x0 + sum {}",
                0.5 + sum
            );
        }
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let spec = ou_spec(3);
        let grid = grid_01();
        let a = simulate(&spec, &PolicySpec::zero(), &grid, 8, 1234, true).unwrap();
        let b = simulate(&spec, &PolicySpec::zero(), &grid, 8, 1234, true).unwrap();
        for p in 0..8 {
            for ag in 0..3 {
                for k in 0..=grid.n_steps() {
                    assert_eq!(a.state(p, ag, k).to_bits(), b.state(p, ag, k).to_bits());
                }
            }
        }
    }

    #[test]
    fn coupled_and_nominal_share_noise() {
        let mut spec = ou_spec(2);
        spec.interaction = Interaction::MeanFieldAttraction { kappa: 0.4 };
        let grid = grid_01();
        let coupled = simulate(&spec, &PolicySpec::zero(), &grid, 6, 55, true).unwrap();
        let nominal = simulate(&spec, &PolicySpec::zero(), &grid, 6, 55, false).unwrap();
        for p in 0..6 {
            for a in 0..2 {
                for k in 0..grid.n_steps() {
                    assert_eq!(
                        coupled.increment(p, a, k).to_bits(),
                        nominal.increment(p, a, k).to_bits()
                    );
                }
            }
        }
        // And the nominal bundle must carry no interaction record.
        assert!(nominal
            .records()
            .iter()
            .all(|r| (0..2).all(|a| (0..grid.n_steps()).all(|k| r.interaction(a, k) == 0.0))));
    }

    #[test]
    fn increment_variance_matches_dt() {
        let spec = ou_spec(1);
        let grid = TimeGrid::new(1.0, 0.005).unwrap();
        let n_paths = 100;
        let bundle = simulate(&spec, &PolicySpec::zero(), &grid, n_paths, 31, false).unwrap();
        let n = (n_paths * grid.n_steps()) as f64;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for p in 0..n_paths {
            for k in 0..grid.n_steps() {
                let db = bundle.increment(p, 0, k);
                sum += db;
                sum_sq += db * db;
            }
        }
        let mean = sum / n;
        let var = sum_sq / n - mean * mean;
        let dt = grid.dt();
        let band = 5.0 / n.sqrt();
        assert!(
            var >= dt * (1.0 - band) && var <= dt * (1.0 + band),
            "variance {var} outside [{}, {}]",
            dt * (1.0 - band),
            dt * (1.0 + band)
        );
        assert!(mean.abs() < 5.0 * (dt / n).sqrt());
    }

    #[test]
    fn local_policy_controls_ignore_other_agents_noise() {
        // Nominal decoupled model: zeroing agent 1's noise must not change
        // agent 0's controls.
        let spec = ou_spec(2);
        let policy = PolicySpec::shared(0.1, -0.5, -2.0, 2.0);
        let grid = grid_01();
        let base = simulate(&spec, &policy, &grid, 5, 813, false).unwrap();
        let zeroed =
            simulate_hooked(&spec, &policy, &grid, 5, 813, false, NoiseHook::ZeroAgent(1))
                .unwrap();
        for p in 0..5 {
            for k in 0..grid.n_steps() {
                assert_eq!(
                    base.control(p, 0, k).to_bits(),
                    zeroed.control(p, 0, k).to_bits()
                );
            }
        }
    }

    #[test]
    fn euler_error_shrinks_first_order_in_dt() {
        // Deterministic part only (sigma = 0): compare against a dt/10
        // reference at two step sizes; the error ratio should be ~10.
        let spec = ModelSpec {
            n_agents: 1,
            drift: Drift::Linear {
                state_coeff: -1.0,
                control_coeff: 0.0,
            },
            diffusion: Diffusion::Constant { sigma: 0.0 },
            interaction: Interaction::None,
            variant: ModelVariant::A,
            meanfield_drift: None,
            initial_states: vec![2.0],
        };
        let policy = PolicySpec::zero();
        let terminal = |dt: f64| {
            let grid = TimeGrid::new(1.0, dt).unwrap();
            let b = simulate(&spec, &policy, &grid, 1, 0, false).unwrap();
            b.state(0, 0, grid.n_steps())
        };
        let reference = terminal(0.0001);
        let err_coarse = (terminal(0.01) - reference).abs();
        let err_fine = (terminal(0.001) - reference).abs();
        let ratio = err_coarse / err_fine;
        assert!(
            (5.0..20.0).contains(&ratio),
            "expected first-order decay, got ratio {ratio}"
        );
    }

    #[test]
    fn overflow_reports_location() {
        let spec = ModelSpec {
            n_agents: 1,
            drift: Drift::QuadraticState,
            diffusion: Diffusion::Constant { sigma: 0.0 },
            interaction: Interaction::None,
            variant: ModelVariant::A,
            meanfield_drift: None,
            initial_states: vec![50.0],
        };
        let grid = TimeGrid::new(1.0, 0.1).unwrap();
        match simulate(&spec, &PolicySpec::zero(), &grid, 2, 0, false) {
            Err(Error::NumericOverflow { path, .. }) => assert_eq!(path, 0),
            other => panic!("expected overflow, got {other:?}"),
        }
    }

    #[test]
    fn regularity_flags_quadratic_not_affine() {
        let mut spec = ou_spec(1);
        let affine = check_regularity(&spec, (-3.0, 3.0), 2000, 7);
        assert!(!affine.flagged);
        assert!((affine.lipschitz_ratio - 1.0).abs() < 0.05);

        spec.drift = Drift::QuadraticState;
        let quad = check_regularity(&spec, (-3.0, 3.0), 2000, 7);
        assert!(quad.flagged, "report: {quad:?}");
    }

    #[test]
    fn regularity_sine_is_one_lipschitz() {
        let mut spec = ou_spec(1);
        spec.drift = Drift::Sine;
        let rep = check_regularity(&spec, (-3.0, 3.0), 4000, 11);
        assert!(rep.lipschitz_ratio <= 1.0 + 1e-9, "{}", rep.lipschitz_ratio);
        assert!(rep.lipschitz_ratio > 0.5);
        assert!(!rep.flagged);
    }

    #[test]
    fn shared_noise_hook_duplicates_streams() {
        let spec = ou_spec(3);
        let grid = grid_01();
        let b = simulate_hooked(
            &spec,
            &PolicySpec::zero(),
            &grid,
            2,
            99,
            false,
            NoiseHook::SharedAcrossAgents,
        )
        .unwrap();
        for p in 0..2 {
            for k in 0..=grid.n_steps() {
                let x0 = b.state(p, 0, k);
                assert_eq!(x0, b.state(p, 1, k));
                assert_eq!(x0, b.state(p, 2, k));
            }
        }
    }
}
