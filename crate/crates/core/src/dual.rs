//! The dual bound engine.
//!
//! For a network with output constraints folded into its last layer
//! (`z = H·f(x) + d`, constraint `z ≤ 0`), the function `g(α, γ)` computed
//! here lower-bounds the triangle-relaxed LP for any objective that is
//! linear in the input and the hidden pre-activations, for every
//! `0 ≤ α ≤ 1`, `γ ≥ 0`. The backward recursion is
//!
//! ```text
//! ν_out = −γ − c_out
//! ν̂⁽ᵏ⁾ = ν⁽ᵏ⁺¹⁾ᵀ W⁽ᵏ⁺¹⁾
//! ν⁽ᵏ⁾_j = ν̂_j − c_j            (active)
//!        = −c_j                  (inactive)
//!        = (u/(u−l))·[ν̂_j]₊ − α_j·[ν̂_j]₋ − c_j   (unstable)
//!
//! g = [c⁽⁰⁾ − ν⁽¹⁾ᵀW⁽¹⁾]₊·l⁽⁰⁾ − [c⁽⁰⁾ − ν⁽¹⁾ᵀW⁽¹⁾]₋·u⁽⁰⁾
//!     − Σ_i ν⁽ⁱ⁾ᵀ b⁽ⁱ⁾ + Σ_unstable (u·l/(u−l))·[ν̂_j]₊
//! ```
//!
//! Setting `γ = 0` ignores the output constraint and recovers the standard
//! backward bound; a positive `γ` is what lets output information tighten
//! input-side and intermediate bounds. Every dual point yields a certified
//! bound, so projected gradient ascent only improves tightness, never
//! soundness. [`tighten_all`] re-optimizes every neuron bound against the
//! current store until the tracked objectives stop improving, which is what
//! closes most of the gap on preimage problems.

use crate::bounds::{classify, BoundStore, NeuronClass, Phase};
use crate::error::{Error, Result};
use crate::geometry::HalfSpace;
use crate::network::{Network, OutputSet};
use crate::scalar::Scalar;
use ndarray::Array1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Objective `c0ᵀ·x + Σ_k c[k]ᵀ·pre_k (+ c_outᵀ·z)`, linear in the input,
/// the hidden pre-activations, and optionally the (folded) output.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearObjective<F> {
    pub c0: Array1<F>,
    /// Per hidden stage; empty arrays mean no coefficient there.
    pub c: Vec<Array1<F>>,
    /// Optional coefficients on the folded network's output, used for plain
    /// forward verification bounds.
    pub c_out: Option<Array1<F>>,
}

impl<F: Scalar> LinearObjective<F> {
    /// Objective over the input only: `c0ᵀ·x`.
    pub fn input(c0: Array1<F>, net: &Network<F>) -> Result<Self> {
        let obj = Self {
            c0,
            c: vec![Array1::zeros(0); net.hidden_stages()],
            c_out: None,
        };
        obj.validate(net)?;
        Ok(obj)
    }

    /// `±e_j` over hidden stage `k`: `+1` bounds the neuron from below,
    /// `−1` yields an upper bound after negating the result.
    pub fn neuron(net: &Network<F>, stage: usize, j: usize, sign: F) -> Result<Self> {
        if stage >= net.hidden_stages() || j >= net.hidden_width(stage) {
            return Err(Error::invalid(format!(
                "neuron ({stage},{j}) out of range"
            )));
        }
        let mut c = vec![Array1::zeros(0); net.hidden_stages()];
        let mut row = Array1::zeros(net.hidden_width(stage));
        row[j] = sign;
        c[stage] = row;
        Ok(Self {
            c0: Array1::zeros(net.input_dim()),
            c,
            c_out: None,
        })
    }

    /// `±e_j` over the (folded) output; bounds the output itself.
    pub fn output(net: &Network<F>, j: usize, sign: F) -> Result<Self> {
        if j >= net.output_dim() {
            return Err(Error::invalid(format!("output index {j} out of range")));
        }
        let mut co = Array1::zeros(net.output_dim());
        co[j] = sign;
        Ok(Self {
            c0: Array1::zeros(net.input_dim()),
            c: vec![Array1::zeros(0); net.hidden_stages()],
            c_out: Some(co),
        })
    }

    pub fn validate(&self, net: &Network<F>) -> Result<()> {
        if self.c0.len() != net.input_dim() {
            return Err(Error::dim("objective c0 length != input dim"));
        }
        if self.c.len() != net.hidden_stages() {
            return Err(Error::dim("objective stage count mismatch"));
        }
        for (k, ck) in self.c.iter().enumerate() {
            if !ck.is_empty() && ck.len() != net.hidden_width(k) {
                return Err(Error::dim(format!("objective c[{k}] width mismatch")));
            }
        }
        if let Some(co) = &self.c_out {
            if co.len() != net.output_dim() {
                return Err(Error::dim("objective c_out length mismatch"));
            }
        }
        let any_nonzero = self.c0.iter().any(|v| *v != F::zero())
            || self
                .c
                .iter()
                .any(|ck| ck.iter().any(|v| *v != F::zero()))
            || self
                .c_out
                .as_ref()
                .is_some_and(|co| co.iter().any(|v| *v != F::zero()));
        if !any_nonzero {
            return Err(Error::invalid("objective has no nonzero coefficient"));
        }
        Ok(())
    }

    #[inline]
    fn c_at(&self, stage: usize, j: usize) -> F {
        let ck = &self.c[stage];
        if ck.is_empty() {
            F::zero()
        } else {
            ck[j]
        }
    }
}

/// Optimizable dual variables: one relaxation slope per hidden neuron
/// (meaningful on unstable ones) and one multiplier per folded output row.
#[derive(Debug, Clone, PartialEq)]
pub struct DualState<F> {
    pub alpha: Vec<Array1<F>>,
    pub gamma: Array1<F>,
    /// When set, `γ` is pinned at zero: the run ignores output constraints
    /// and reduces to the standard backward bound.
    pub gamma_frozen: bool,
}

impl<F: Scalar> DualState<F> {
    /// Fresh state for a folded network, per-config initial values.
    pub fn init(folded: &Network<F>, config: &TightenConfig) -> Self {
        let alpha = (0..folded.hidden_stages())
            .map(|k| Array1::from_elem(folded.hidden_width(k), F::of(config.alpha_init)))
            .collect();
        let gamma = if config.gamma_frozen {
            Array1::zeros(folded.output_dim())
        } else {
            Array1::from_elem(folded.output_dim(), F::of(config.gamma_init))
        };
        Self {
            alpha,
            gamma,
            gamma_frozen: config.gamma_frozen,
        }
    }

    /// Clamp back into the feasible dual box `0 ≤ α ≤ 1`, `γ ≥ 0`.
    pub fn project(&mut self) {
        for a in &mut self.alpha {
            a.mapv_inplace(|v| v.max(F::zero()).min(F::one()));
        }
        if self.gamma_frozen {
            self.gamma.fill(F::zero());
        } else {
            self.gamma.mapv_inplace(|v| v.max(F::zero()));
        }
    }

    fn validate(&self, folded: &Network<F>) -> Result<()> {
        if self.alpha.len() != folded.hidden_stages() {
            return Err(Error::dim("dual alpha stage count mismatch"));
        }
        for (k, a) in self.alpha.iter().enumerate() {
            if a.len() != folded.hidden_width(k) {
                return Err(Error::dim(format!("dual alpha[{k}] width mismatch")));
            }
        }
        if self.gamma.len() != folded.output_dim() {
            return Err(Error::dim("dual gamma length mismatch"));
        }
        Ok(())
    }
}

/// Dual state with the closed-form relaxation slopes and `γ = 0`; evaluating
/// `g` at this state reproduces the reverse-symbolic backward pass.
pub fn closed_form_dual<F: Scalar>(
    folded: &Network<F>,
    store: &BoundStore<F>,
    class: &NeuronClass,
) -> DualState<F> {
    let alpha = (0..folded.hidden_stages())
        .map(|k| {
            Array1::from_shape_fn(folded.hidden_width(k), |j| match class.phase(k, j) {
                Phase::Unstable => {
                    crate::bounds::closed_form_alpha(store.pre_lo[k][j], store.pre_hi[k][j])
                }
                _ => F::zero(),
            })
        })
        .collect();
    DualState {
        alpha,
        gamma: Array1::zeros(folded.output_dim()),
        gamma_frozen: true,
    }
}

/// Everything the backward recursion produced for one evaluation.
#[derive(Debug, Clone)]
pub struct DualTrace<F> {
    /// ν over each hidden stage's pre-activations.
    pub nu: Vec<Array1<F>>,
    /// ν̂ over each hidden stage (before the three-case rule).
    pub nu_hat: Vec<Array1<F>>,
    /// ν over the folded output (`−γ − c_out`).
    pub nu_out: Array1<F>,
    /// The certified lower bound `g`.
    pub bound: F,
}

/// Gradient of `g` with respect to every dual variable. At the kinks of
/// `[·]₊ / [·]₋`, the subgradient from the positive side is used.
#[derive(Debug, Clone)]
pub struct DualGrad<F> {
    pub alpha: Vec<Array1<F>>,
    pub gamma: Array1<F>,
}

struct EvalOutput<F> {
    trace: DualTrace<F>,
    grad: Option<DualGrad<F>>,
}

/// Shared forward (and optional adjoint) pass. `net` must be folded.
fn eval_inner<F: Scalar>(
    net: &Network<F>,
    store: &BoundStore<F>,
    class: &NeuronClass,
    obj: &LinearObjective<F>,
    dual: &DualState<F>,
    want_grad: bool,
) -> Result<EvalOutput<F>> {
    let stages = net.hidden_stages();
    if store.stages() != stages || class.stages() != stages {
        return Err(Error::dim(
            "bound store / classification does not match the network",
        ));
    }

    let mut nu_out = dual.gamma.mapv(|g| -g);
    if let Some(co) = &obj.c_out {
        nu_out = nu_out - co;
    }

    let mut nu: Vec<Array1<F>> = Vec::with_capacity(stages);
    let mut nu_hat: Vec<Array1<F>> = Vec::with_capacity(stages);
    nu.resize(stages, Array1::zeros(0));
    nu_hat.resize(stages, Array1::zeros(0));

    let mut bound = F::zero();
    let mut carry = nu_out.clone();
    for k in (0..stages).rev() {
        let above = &net.layers()[k + 1];
        let hat = above.weights.t().dot(&carry);
        let width = net.hidden_width(k);
        let mut v = Array1::zeros(width);
        for j in 0..width {
            let cj = obj.c_at(k, j);
            v[j] = match class.phase(k, j) {
                Phase::Active => hat[j] - cj,
                Phase::Inactive => -cj,
                Phase::Unstable => {
                    let l = store.pre_lo[k][j];
                    let u = store.pre_hi[k][j];
                    let slope = u / (u - l);
                    bound += u * l / (u - l) * hat[j].pos();
                    slope * hat[j].pos() - dual.alpha[k][j] * hat[j].neg_part() - cj
                }
            };
        }
        nu_hat[k] = hat;
        carry = v.clone();
        nu[k] = v;
    }

    // Bias terms: every ν multiplies the bias of the layer that feeds it.
    bound -= nu_out.dot(&net.layers()[stages].bias);
    for k in 0..stages {
        bound -= nu[k].dot(&net.layers()[k].bias);
    }

    // Concretize the input coefficient against the box.
    let first = &net.layers()[0];
    let t = &obj.c0 - &first.weights.t().dot(&carry);
    for j in 0..t.len() {
        bound += t[j].pos() * store.input_lo[j] - t[j].neg_part() * store.input_hi[j];
    }

    if !bound.is_finite() {
        return Err(Error::NonFinite("dual bound".into()));
    }

    let grad = if want_grad {
        // Adjoint sweep, input side back up to the output multipliers.
        let dgdt = Array1::from_shape_fn(t.len(), |j| {
            if t[j] >= F::zero() {
                store.input_lo[j]
            } else {
                store.input_hi[j]
            }
        });
        let mut lam = first.weights.dot(&dgdt).mapv(|v| -v) - &first.bias;
        let mut grad_alpha: Vec<Array1<F>> = Vec::with_capacity(stages);
        for k in 0..stages {
            let width = net.hidden_width(k);
            let mut ds = Array1::zeros(width);
            let mut ga = Array1::zeros(width);
            for j in 0..width {
                match class.phase(k, j) {
                    Phase::Active => ds[j] = lam[j],
                    Phase::Inactive => {}
                    Phase::Unstable => {
                        let l = store.pre_lo[k][j];
                        let u = store.pre_hi[k][j];
                        let slope = u / (u - l);
                        let q = u * l / (u - l);
                        let s = nu_hat[k][j];
                        if s >= F::zero() {
                            ds[j] = lam[j] * slope + q;
                        } else {
                            ds[j] = lam[j] * dual.alpha[k][j];
                        }
                        ga[j] = lam[j] * (-s.neg_part());
                    }
                }
            }
            grad_alpha.push(ga);
            let above = &net.layers()[k + 1];
            lam = above.weights.dot(&ds) - &above.bias;
        }
        // ν_out = −γ − c_out, so dg/dγ = −(dg/dν_out).
        let grad_gamma = lam.mapv(|v| -v);
        Some(DualGrad {
            alpha: grad_alpha,
            gamma: grad_gamma,
        })
    } else {
        None
    };

    Ok(EvalOutput {
        trace: DualTrace {
            nu,
            nu_hat,
            nu_out,
            bound,
        },
        grad,
    })
}

/// Evaluate the dual bound `g(α, γ)` on a folded network.
pub fn eval_g<F: Scalar>(
    net: &Network<F>,
    store: &BoundStore<F>,
    obj: &LinearObjective<F>,
    dual: &DualState<F>,
) -> Result<DualTrace<F>> {
    obj.validate(net)?;
    dual.validate(net)?;
    let class = classify(store);
    Ok(eval_inner(net, store, &class, obj, dual, false)?.trace)
}

/// Subgradient of `g` with respect to every `α` and `γ` entry.
pub fn grad_g<F: Scalar>(
    net: &Network<F>,
    store: &BoundStore<F>,
    obj: &LinearObjective<F>,
    dual: &DualState<F>,
) -> Result<DualGrad<F>> {
    obj.validate(net)?;
    dual.validate(net)?;
    let class = classify(store);
    Ok(eval_inner(net, store, &class, obj, dual, true)?
        .grad
        .expect("gradient requested"))
}

// ----------------------------------------------------------------------------
// Projected gradient ascent
// ----------------------------------------------------------------------------

/// Tuning knobs for the ascent and the tightening loop. The JSON config file
/// uses exactly these field names.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TightenConfig {
    /// Ascent iterations per objective per sweep.
    #[serde(default = "default_iters")]
    pub iters: usize,
    /// Base step size.
    #[serde(default = "default_lr")]
    pub lr: f64,
    /// Step decay applied every 10 iterations.
    #[serde(default = "default_lr_decay")]
    pub lr_decay: f64,
    /// Sweep-level stop: summed relative improvement of tracked bounds.
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    #[serde(default = "default_max_sweeps")]
    pub max_sweeps: usize,
    #[serde(default = "default_alpha_init")]
    pub alpha_init: f64,
    #[serde(default = "default_gamma_init")]
    pub gamma_init: f64,
    /// Plateau-detection cadence inside one ascent run.
    #[serde(default = "default_check_every")]
    pub check_every: usize,
    /// Pin `γ = 0` (ignore output constraints; standard forward bounds).
    #[serde(default)]
    pub gamma_frozen: bool,
}

fn default_iters() -> usize {
    400
}
fn default_lr() -> f64 {
    0.5
}
fn default_lr_decay() -> f64 {
    0.92
}
fn default_tolerance() -> f64 {
    1e-4
}
fn default_max_sweeps() -> usize {
    50
}
fn default_alpha_init() -> f64 {
    0.5
}
fn default_gamma_init() -> f64 {
    0.025
}
fn default_check_every() -> usize {
    10
}

impl Default for TightenConfig {
    fn default() -> Self {
        Self {
            iters: default_iters(),
            lr: default_lr(),
            lr_decay: default_lr_decay(),
            tolerance: default_tolerance(),
            max_sweeps: default_max_sweeps(),
            alpha_init: default_alpha_init(),
            gamma_init: default_gamma_init(),
            check_every: default_check_every(),
            gamma_frozen: false,
        }
    }
}

/// Maximize `g` over the dual box by projected gradient ascent with
/// per-parameter adaptive steps (first/second moment estimates, bias
/// corrected). Returns the best bound seen — every iterate is a certified
/// bound, so the reported value is monotone even when iterates oscillate.
/// `dual` is left at the final iterate for warm starting.
fn ascend<F: Scalar>(
    net: &Network<F>,
    store: &BoundStore<F>,
    class: &NeuronClass,
    obj: &LinearObjective<F>,
    dual: &mut DualState<F>,
    config: &TightenConfig,
    iters: usize,
) -> Result<F> {
    let eps = F::of(1e-12);
    let b1 = F::of(0.9);
    let b2 = F::of(0.999);
    let mut m_alpha: Vec<Array1<F>> = dual.alpha.iter().map(|a| Array1::zeros(a.len())).collect();
    let mut v_alpha = m_alpha.clone();
    let mut m_gamma: Array1<F> = Array1::zeros(dual.gamma.len());
    let mut v_gamma = m_gamma.clone();
    let mut best = F::neg_infinity();
    let mut last_check = F::neg_infinity();
    let mut stalled_checks = 0usize;

    for it in 0..iters {
        let out = eval_inner(net, store, class, obj, dual, true)?;
        let val = out.trace.bound;
        if val > best {
            best = val;
        }
        // Plateau stop: three consecutive measurement windows without
        // meaningful improvement of the best bound.
        if config.check_every > 0 && (it + 1) % config.check_every == 0 {
            let floor = F::of(1e-9) * (F::one() + best.abs());
            if last_check.is_finite() && best - last_check < floor {
                stalled_checks += 1;
                if stalled_checks >= ASCENT_PATIENCE {
                    break;
                }
            } else {
                stalled_checks = 0;
            }
            last_check = best;
        }
        let grad = out.grad.expect("gradient requested");
        let lr = F::of(config.lr * config.lr_decay.powi((it / 10) as i32));
        let bc1 = F::one() - b1.powi(it as i32 + 1);
        let bc2 = F::one() - b2.powi(it as i32 + 1);
        for k in 0..dual.alpha.len() {
            for j in 0..dual.alpha[k].len() {
                let gje = grad.alpha[k][j];
                m_alpha[k][j] = b1 * m_alpha[k][j] + (F::one() - b1) * gje;
                v_alpha[k][j] = b2 * v_alpha[k][j] + (F::one() - b2) * gje * gje;
                dual.alpha[k][j] +=
                    lr * (m_alpha[k][j] / bc1) / ((v_alpha[k][j] / bc2).sqrt() + eps);
            }
        }
        if !dual.gamma_frozen {
            for r in 0..dual.gamma.len() {
                let gje = grad.gamma[r];
                m_gamma[r] = b1 * m_gamma[r] + (F::one() - b1) * gje;
                v_gamma[r] = b2 * v_gamma[r] + (F::one() - b2) * gje * gje;
                dual.gamma[r] += lr * (m_gamma[r] / bc1) / ((v_gamma[r] / bc2).sqrt() + eps);
            }
        }
        dual.project();
    }
    // Count the final iterate as well.
    let val = eval_inner(net, store, class, obj, dual, false)?.trace.bound;
    if val > best {
        best = val;
    }
    Ok(best)
}

/// Projected gradient ascent on a fresh dual state. `net` must be folded.
pub fn optimize_bound<F: Scalar>(
    net: &Network<F>,
    store: &BoundStore<F>,
    obj: &LinearObjective<F>,
    config: &TightenConfig,
) -> Result<(F, DualState<F>)> {
    obj.validate(net)?;
    let class = classify(store);
    let mut dual = DualState::init(net, config);
    let bound = ascend(net, store, &class, obj, &mut dual, config, config.iters)?;
    Ok((bound, dual))
}

// ----------------------------------------------------------------------------
// Iterative tightening
// ----------------------------------------------------------------------------

/// Extra ascent iterations given to tracked half-space objectives each sweep
/// before improvements are measured.
const HALFSPACE_EXTRA_ITERS: usize = 10;

/// Consecutive stalled measurement windows tolerated before an ascent run
/// stops early.
const ASCENT_PATIENCE: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ObjKind {
    NeuronLo { stage: usize, j: usize },
    NeuronHi { stage: usize, j: usize },
    InputLo { j: usize },
    InputHi { j: usize },
    Direction { idx: usize },
}

struct Tracked<F> {
    kind: ObjKind,
    obj: LinearObjective<F>,
    dual: DualState<F>,
    best: F,
    extra_iters: usize,
}

/// What one tightening run did, sweep by sweep.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TightenReport<F> {
    pub sweeps: usize,
    pub converged: bool,
    pub infeasible: bool,
    /// Total bound width (hidden stages + input box) before the first sweep
    /// and after each sweep; non-increasing by construction.
    pub width_sums: Vec<F>,
    /// Summed relative improvement of the tracked objectives per sweep.
    pub tracked_improvements: Vec<F>,
    /// Certified bound per direction after each sweep (monotone
    /// non-decreasing rows); empty when no directions were tracked.
    pub halfspace_lb_history: Vec<Vec<F>>,
}

/// Result of a tightening run that also certifies half-space directions.
pub struct HalfSpaceRun<F> {
    pub halfspaces: Vec<HalfSpace<F>>,
    pub report: TightenReport<F>,
}

fn run_tightening<F: Scalar>(
    net: &Network<F>,
    store: &mut BoundStore<F>,
    out_set: &OutputSet<F>,
    directions: &[Array1<F>],
    dir_floor: Option<&[F]>,
    config: &TightenConfig,
) -> Result<(Vec<F>, TightenReport<F>)> {
    let folded = net.fold_output_constraints(out_set)?;
    let stages = folded.hidden_stages();

    let mut objectives: Vec<Tracked<F>> = Vec::new();
    for stage in (0..stages).rev() {
        for j in 0..folded.hidden_width(stage) {
            objectives.push(Tracked {
                kind: ObjKind::NeuronLo { stage, j },
                obj: LinearObjective::neuron(&folded, stage, j, F::one())?,
                dual: DualState::init(&folded, config),
                best: F::neg_infinity(),
                extra_iters: 0,
            });
            objectives.push(Tracked {
                kind: ObjKind::NeuronHi { stage, j },
                obj: LinearObjective::neuron(&folded, stage, j, -F::one())?,
                dual: DualState::init(&folded, config),
                best: F::neg_infinity(),
                extra_iters: 0,
            });
        }
    }
    for j in 0..folded.input_dim() {
        let mut lo = Array1::zeros(folded.input_dim());
        lo[j] = F::one();
        objectives.push(Tracked {
            kind: ObjKind::InputLo { j },
            obj: LinearObjective::input(lo, &folded)?,
            dual: DualState::init(&folded, config),
            best: F::neg_infinity(),
            extra_iters: 0,
        });
        let mut hi = Array1::zeros(folded.input_dim());
        hi[j] = -F::one();
        objectives.push(Tracked {
            kind: ObjKind::InputHi { j },
            obj: LinearObjective::input(hi, &folded)?,
            dual: DualState::init(&folded, config),
            best: F::neg_infinity(),
            extra_iters: 0,
        });
    }
    for (idx, c) in directions.iter().enumerate() {
        // A certified floor from a parent region stays valid on any subset.
        let best = dir_floor
            .map(|f| f[idx])
            .unwrap_or_else(F::neg_infinity);
        objectives.push(Tracked {
            kind: ObjKind::Direction { idx },
            obj: LinearObjective::input(c.clone(), &folded)?,
            dual: DualState::init(&folded, config),
            best,
            extra_iters: HALFSPACE_EXTRA_ITERS,
        });
    }

    // Convergence is measured on the half-space objectives; without any,
    // fall back to the input-neuron bounds (their box sides).
    let tracked_kind = |k: &ObjKind| {
        if directions.is_empty() {
            matches!(k, ObjKind::InputLo { .. } | ObjKind::InputHi { .. })
        } else {
            matches!(k, ObjKind::Direction { .. })
        }
    };

    let mut report = TightenReport {
        sweeps: 0,
        converged: false,
        infeasible: store.infeasible(),
        width_sums: vec![store.width_sum()],
        tracked_improvements: Vec::new(),
        halfspace_lb_history: Vec::new(),
    };

    for _sweep in 0..config.max_sweeps {
        if store.infeasible() {
            break;
        }
        let class = classify(store);
        let snapshot = store.clone();
        let prev_tracked: Vec<F> = objectives
            .iter()
            .filter(|o| tracked_kind(&o.kind))
            .map(|o| o.best)
            .collect();

        objectives.par_iter_mut().try_for_each(|o| -> Result<()> {
            let iters = config.iters + o.extra_iters;
            let b = ascend(&folded, &snapshot, &class, &o.obj, &mut o.dual, config, iters)?;
            if b > o.best {
                o.best = b;
            }
            Ok(())
        })?;

        // Serial commit in construction order keeps runs deterministic.
        for o in &objectives {
            if !o.best.is_finite() {
                continue;
            }
            match o.kind {
                ObjKind::NeuronLo { stage, j } => {
                    store.tighten_pre_lo(stage, j, o.best);
                }
                ObjKind::NeuronHi { stage, j } => {
                    store.tighten_pre_hi(stage, j, -o.best);
                }
                ObjKind::InputLo { j } => {
                    store.tighten_input_lo(j, o.best);
                }
                ObjKind::InputHi { j } => {
                    store.tighten_input_hi(j, -o.best);
                }
                ObjKind::Direction { .. } => {}
            }
        }

        report.sweeps += 1;
        report.width_sums.push(store.width_sum());
        if !directions.is_empty() {
            let mut row = vec![F::neg_infinity(); directions.len()];
            for o in &objectives {
                if let ObjKind::Direction { idx } = o.kind {
                    row[idx] = o.best;
                }
            }
            report.halfspace_lb_history.push(row);
        }

        let improvement: F = objectives
            .iter()
            .filter(|o| tracked_kind(&o.kind))
            .zip(prev_tracked.iter())
            .map(|(o, &prev)| {
                if !prev.is_finite() {
                    F::infinity()
                } else {
                    (o.best - prev).max(F::zero()) / (F::one() + o.best.abs())
                }
            })
            .sum();
        report.tracked_improvements.push(improvement);

        if store.infeasible() {
            break;
        }
        if improvement < F::of(config.tolerance) {
            report.converged = true;
            break;
        }
    }

    report.infeasible = store.infeasible();
    let mut lbs = vec![F::neg_infinity(); directions.len()];
    for o in &objectives {
        if let ObjKind::Direction { idx } = o.kind {
            lbs[idx] = o.best;
        }
    }
    Ok((lbs, report))
}

/// Iteratively re-tighten every neuron bound (hidden stages back to the
/// input box) against the output constraint until the tracked bounds stop
/// improving or the sweep budget is exhausted. Commits are tighten-only; a
/// crossing sets the store's infeasibility flag and stops the run.
pub fn tighten_all<F: Scalar>(
    net: &Network<F>,
    store: &mut BoundStore<F>,
    out_set: &OutputSet<F>,
    config: &TightenConfig,
) -> Result<TightenReport<F>> {
    let (_, report) = run_tightening(net, store, out_set, &[], None, config)?;
    Ok(report)
}

/// Certify `cᵀx ≥ lb` for each direction over the preimage restricted to
/// the store's box, sharing one tightening run across all directions.
pub fn bound_halfspaces<F: Scalar>(
    net: &Network<F>,
    store: &mut BoundStore<F>,
    out_set: &OutputSet<F>,
    directions: &[Array1<F>],
    config: &TightenConfig,
) -> Result<HalfSpaceRun<F>> {
    bound_halfspaces_with_floor(net, store, out_set, directions, None, config)
}

/// As [`bound_halfspaces`], seeding each direction's bound with a floor
/// certified on a superset region (used by branch-and-bound so child leaves
/// never report looser than their parent).
pub(crate) fn bound_halfspaces_with_floor<F: Scalar>(
    net: &Network<F>,
    store: &mut BoundStore<F>,
    out_set: &OutputSet<F>,
    directions: &[Array1<F>],
    dir_floor: Option<&[F]>,
    config: &TightenConfig,
) -> Result<HalfSpaceRun<F>> {
    if directions.is_empty() {
        return Err(Error::invalid("need at least one direction"));
    }
    for c in directions {
        if c.len() != net.input_dim() {
            return Err(Error::dim("direction length != input dim"));
        }
        if c.iter().all(|v| *v == F::zero()) {
            return Err(Error::invalid("zero direction"));
        }
    }
    let (lbs, report) = run_tightening(net, store, out_set, directions, dir_floor, config)?;
    let halfspaces = directions
        .iter()
        .zip(lbs.iter())
        .map(|(c, &lb)| HalfSpace::new(c.clone(), lb))
        .collect::<Result<Vec<_>>>()?;
    Ok(HalfSpaceRun { halfspaces, report })
}
