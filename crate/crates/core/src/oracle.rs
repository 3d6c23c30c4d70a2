//! Exact ground truth on small instances.
//!
//! Three independent checks back the dual engine:
//! - [`lp_solve`]: a textbook dense two-phase simplex with Bland's
//!   anti-cycling rule. Deliberately simple; correctness over speed.
//! - [`exact_min_milp`]: the exact constrained minimum over the preimage by
//!   enumerating activation patterns of the unstable neurons — each pattern
//!   fixes every ReLU to an affine piece, leaving a small LP over the input.
//! - [`exact_lp_relaxation`]: the exact optimum of the triangle-relaxed
//!   program the dual ascent approaches from below.
//!
//! These never share code with the bound-propagation path they validate.

use crate::bounds::{classify, interval_propagate, rsip_init, BoundStore, NeuronClass, Phase};
use crate::dual::LinearObjective;
use crate::error::{Error, Result};
use crate::network::{InputBox, Network, OutputSet};
use crate::scalar::Scalar;
use ndarray::{Array1, Array2};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

/// Hard cap on unstable neurons for pattern enumeration (2^14 patterns).
pub const PATTERN_CAP: usize = 14;

/// Numerical tolerance for simplex pivoting and feasibility decisions.
const LP_EPS: f64 = 1e-9;

/// Constraint sense in a [`DenseLp`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    Le,
    Ge,
    Eq,
}

/// One linear constraint `coeffs · x (≤|≥|=) rhs`.
#[derive(Debug, Clone)]
pub struct LpConstraint<F> {
    pub coeffs: Vec<F>,
    pub rel: Relation,
    pub rhs: F,
}

/// A dense linear program: minimize `objective · x` subject to constraint
/// rows and per-variable bounds (`None` = unbounded on that side).
#[derive(Debug, Clone)]
pub struct DenseLp<F> {
    pub num_vars: usize,
    pub objective: Vec<F>,
    pub constraints: Vec<LpConstraint<F>>,
    pub lower: Vec<Option<F>>,
    pub upper: Vec<Option<F>>,
}

impl<F: Scalar> DenseLp<F> {
    pub fn new(num_vars: usize) -> Self {
        Self {
            num_vars,
            objective: vec![F::zero(); num_vars],
            constraints: Vec::new(),
            lower: vec![None; num_vars],
            upper: vec![None; num_vars],
        }
    }

    pub fn constrain(&mut self, coeffs: Vec<F>, rel: Relation, rhs: F) {
        debug_assert_eq!(coeffs.len(), self.num_vars);
        self.constraints.push(LpConstraint { coeffs, rel, rhs });
    }

    fn validate(&self) -> Result<()> {
        if self.objective.len() != self.num_vars
            || self.lower.len() != self.num_vars
            || self.upper.len() != self.num_vars
        {
            return Err(Error::dim("LP field lengths disagree with num_vars"));
        }
        let finite = |v: &F| v.is_finite();
        if !self.objective.iter().all(finite) {
            return Err(Error::NonFinite("LP objective".into()));
        }
        for c in &self.constraints {
            if c.coeffs.len() != self.num_vars {
                return Err(Error::dim("LP constraint width"));
            }
            if !c.coeffs.iter().all(finite) || !c.rhs.is_finite() {
                return Err(Error::NonFinite("LP constraint".into()));
            }
        }
        Ok(())
    }
}

/// Result of [`lp_solve`].
#[derive(Debug, Clone, PartialEq)]
pub enum LpOutcome<F> {
    Optimal { value: F, point: Vec<F> },
    Infeasible,
    Unbounded,
}

/// Solve a [`DenseLp`] with a dense two-phase simplex using Bland's rule
/// throughout. An exceeded pivot cap is an explicit error, never a silent
/// wrong answer.
pub fn lp_solve<F: Scalar>(lp: &DenseLp<F>) -> Result<LpOutcome<F>> {
    lp.validate()?;
    let eps = F::of(LP_EPS);

    // --- Transform to standard form: minimize c·z, A z = b, z ≥ 0. ---
    // Variable mapping: x_j = shift_j + sign_j·z_p (one column) or
    // x_j = z_p − z_q (free split).
    enum VarMap<F> {
        Shifted { col: usize, shift: F, sign: F },
        Split { pos: usize, neg: usize },
    }

    let mut maps: Vec<VarMap<F>> = Vec::with_capacity(lp.num_vars);
    let mut ncols = 0usize;
    let mut extra_rows: Vec<LpConstraint<F>> = Vec::new();
    for j in 0..lp.num_vars {
        match (lp.lower[j], lp.upper[j]) {
            (Some(lo), up) => {
                maps.push(VarMap::Shifted {
                    col: ncols,
                    shift: lo,
                    sign: F::one(),
                });
                ncols += 1;
                if let Some(up) = up {
                    if up < lo - eps {
                        return Ok(LpOutcome::Infeasible);
                    }
                    // x_j ≤ up as a row in original variables.
                    let mut coeffs = vec![F::zero(); lp.num_vars];
                    coeffs[j] = F::one();
                    extra_rows.push(LpConstraint {
                        coeffs,
                        rel: Relation::Le,
                        rhs: up,
                    });
                }
            }
            (None, Some(up)) => {
                maps.push(VarMap::Shifted {
                    col: ncols,
                    shift: up,
                    sign: -F::one(),
                });
                ncols += 1;
            }
            (None, None) => {
                maps.push(VarMap::Split {
                    pos: ncols,
                    neg: ncols + 1,
                });
                ncols += 2;
            }
        }
    }

    let all_rows: Vec<&LpConstraint<F>> = lp.constraints.iter().chain(extra_rows.iter()).collect();
    let nrows = all_rows.len();
    // Columns: structural | slack/surplus | artificial.
    let mut slack_count = 0usize;
    for c in &all_rows {
        if c.rel != Relation::Eq {
            slack_count += 1;
        }
    }
    let total = ncols + slack_count + nrows;
    let mut tab = vec![vec![F::zero(); total + 1]; nrows];
    let mut basis = vec![0usize; nrows];
    let art_start = ncols + slack_count;

    let mut slack_idx = 0usize;
    for (i, c) in all_rows.iter().enumerate() {
        let mut rhs = c.rhs;
        for (j, &a) in c.coeffs.iter().enumerate() {
            match &maps[j] {
                VarMap::Shifted { col, shift, sign } => {
                    tab[i][*col] += a * *sign;
                    rhs -= a * *shift;
                }
                VarMap::Split { pos, neg } => {
                    tab[i][*pos] += a;
                    tab[i][*neg] -= a;
                }
            }
        }
        match c.rel {
            Relation::Le => {
                tab[i][ncols + slack_idx] = F::one();
                slack_idx += 1;
            }
            Relation::Ge => {
                tab[i][ncols + slack_idx] = -F::one();
                slack_idx += 1;
            }
            Relation::Eq => {}
        }
        if rhs < F::zero() {
            for v in tab[i].iter_mut() {
                *v = -*v;
            }
            rhs = -rhs;
        }
        tab[i][total] = rhs;
        tab[i][art_start + i] = F::one();
        basis[i] = art_start + i;
    }

    // Standard-form objective.
    let mut cost = vec![F::zero(); total];
    for (j, &cj) in lp.objective.iter().enumerate() {
        match &maps[j] {
            VarMap::Shifted { col, sign, .. } => cost[*col] += cj * *sign,
            VarMap::Split { pos, neg } => {
                cost[*pos] += cj;
                cost[*neg] -= cj;
            }
        }
    }
    let mut obj_shift = F::zero();
    for (j, &cj) in lp.objective.iter().enumerate() {
        if let VarMap::Shifted { shift, .. } = &maps[j] {
            obj_shift += cj * *shift;
        }
    }

    let pivot_cap = 2_000 + 200 * (nrows + total);
    let mut pivots = 0usize;

    // Reduced-cost row for a given cost vector under the current basis.
    let reduced = |tab: &Vec<Vec<F>>, basis: &Vec<usize>, cost: &Vec<F>| -> Vec<F> {
        let mut red = cost.clone();
        for (i, &b) in basis.iter().enumerate() {
            let cb = cost[b];
            if cb != F::zero() {
                for j in 0..total {
                    red[j] -= cb * tab[i][j];
                }
            }
        }
        red
    };

    // One Bland-rule simplex run over the allowed column range.
    let mut run = |tab: &mut Vec<Vec<F>>,
                   basis: &mut Vec<usize>,
                   cost: &Vec<F>,
                   allowed: usize|
     -> Result<bool> {
        loop {
            let red = reduced(tab, basis, cost);
            // Bland: smallest-index column with negative reduced cost.
            let entering = (0..allowed).find(|&j| red[j] < -eps);
            let Some(e) = entering else {
                return Ok(true); // optimal
            };
            // Min-ratio test; Bland ties broken by smallest basic variable.
            let mut leave: Option<(usize, F)> = None;
            for i in 0..nrows {
                let a = tab[i][e];
                if a > eps {
                    let ratio = tab[i][total] / a;
                    let better = match leave {
                        None => true,
                        Some((li, lr)) => {
                            ratio < lr - eps || (ratio < lr + eps && basis[i] < basis[li])
                        }
                    };
                    if better {
                        leave = Some((i, ratio));
                    }
                }
            }
            let Some((li, _)) = leave else {
                return Ok(false); // unbounded in this phase
            };
            // Pivot on (li, e).
            let p = tab[li][e];
            for v in tab[li].iter_mut() {
                *v /= p;
            }
            for i in 0..nrows {
                if i != li {
                    let f = tab[i][e];
                    if f != F::zero() {
                        for j in 0..=total {
                            let delta = f * tab[li][j];
                            tab[i][j] -= delta;
                        }
                        tab[i][e] = F::zero();
                    }
                }
            }
            basis[li] = e;
            pivots += 1;
            if pivots > pivot_cap {
                return Err(Error::LpIterationLimit { pivots });
            }
        }
    };

    // --- Phase 1: minimize the sum of artificials. ---
    let mut phase1_cost = vec![F::zero(); total];
    for c in phase1_cost.iter_mut().skip(art_start) {
        *c = F::one();
    }
    let optimal = run(&mut tab, &mut basis, &phase1_cost, total)?;
    debug_assert!(optimal, "phase 1 is bounded below by zero");
    let phase1_val: F = (0..nrows)
        .filter(|&i| basis[i] >= art_start)
        .map(|i| tab[i][total])
        .sum();
    if phase1_val > F::of(1e-7) {
        return Ok(LpOutcome::Infeasible);
    }

    // Drive any basic artificials out; rows with no eligible pivot are
    // redundant and harmless (their rhs is ~0), leave them be.
    for i in 0..nrows {
        if basis[i] >= art_start {
            if let Some(e) = (0..art_start).find(|&j| tab[i][j].abs() > F::of(1e-7)) {
                let p = tab[i][e];
                for v in tab[i].iter_mut() {
                    *v /= p;
                }
                let row: Vec<F> = tab[i].clone();
                for r in 0..nrows {
                    if r != i {
                        let f = tab[r][e];
                        if f != F::zero() {
                            for j in 0..=total {
                                let delta = f * row[j];
                                tab[r][j] -= delta;
                            }
                            tab[r][e] = F::zero();
                        }
                    }
                }
                basis[i] = e;
            }
        }
    }

    // --- Phase 2: original objective, artificial columns frozen. ---
    let optimal = run(&mut tab, &mut basis, &cost, art_start)?;
    if !optimal {
        return Ok(LpOutcome::Unbounded);
    }

    // Recover the solution point.
    let mut z = vec![F::zero(); total];
    for i in 0..nrows {
        z[basis[i]] = tab[i][total];
    }
    let mut point = vec![F::zero(); lp.num_vars];
    for (j, m) in maps.iter().enumerate() {
        point[j] = match m {
            VarMap::Shifted { col, shift, sign } => *shift + *sign * z[*col],
            VarMap::Split { pos, neg } => z[*pos] - z[*neg],
        };
    }
    let value: F = lp
        .objective
        .iter()
        .zip(point.iter())
        .map(|(&c, &x)| c * x)
        .sum();
    debug_assert!((value - (obj_shift + (0..total).map(|j| cost[j] * z[j]).sum())).abs()
        < F::of(1e-5) * (F::one() + value.abs()));
    Ok(LpOutcome::Optimal { value, point })
}

// ----------------------------------------------------------------------------
// Activation-pattern enumeration
// ----------------------------------------------------------------------------

/// Phase assignment for every unstable neuron; stable neurons stay fixed by
/// their classification.
#[derive(Debug, Clone)]
pub struct ActivationPattern {
    /// One bit per unstable neuron, in `(stage, neuron)` order: true = active.
    pub bits: Vec<bool>,
}

/// Result of [`exact_min_milp`].
#[derive(Debug, Clone, PartialEq)]
pub enum MilpOutcome<F> {
    Min { value: F, point: Vec<F> },
    /// Every pattern was infeasible: the preimage is empty within the box.
    Empty,
}

/// Affine maps of every stage for one fixed activation pattern, used to
/// build the per-pattern LP over the input variables alone.
struct PatternAffine<F> {
    /// For each unstable neuron (in order): its pre-activation row and
    /// constant, plus the phase bit that applies.
    sign_rows: Vec<(Array1<F>, F, bool)>,
    /// Output map `y = w·x + b`.
    out_w: Array2<F>,
    out_b: Array1<F>,
}

fn pattern_affine<F: Scalar>(
    net: &Network<F>,
    class: &NeuronClass,
    pattern: &ActivationPattern,
) -> PatternAffine<F> {
    let n0 = net.input_dim();
    let mut w = Array2::eye(n0);
    let mut b = Array1::zeros(n0);
    let mut sign_rows = Vec::new();
    let mut bit = 0usize;
    let depth = net.depth();
    for (i, layer) in net.layers().iter().enumerate() {
        let pre_w = layer.weights.dot(&w);
        let pre_b = layer.weights.dot(&b) + &layer.bias;
        if i + 1 == depth {
            return PatternAffine {
                sign_rows,
                out_w: pre_w,
                out_b: pre_b,
            };
        }
        let mut post_w = pre_w.clone();
        let mut post_b = pre_b.clone();
        for j in 0..layer.out_dim() {
            let active = match class.phase(i, j) {
                Phase::Active => true,
                Phase::Inactive => false,
                Phase::Unstable => {
                    let a = pattern.bits[bit];
                    sign_rows.push((pre_w.row(j).to_owned(), pre_b[j], a));
                    bit += 1;
                    a
                }
            };
            if !active {
                post_w.row_mut(j).fill(F::zero());
                post_b[j] = F::zero();
            }
        }
        w = post_w;
        b = post_b;
    }
    unreachable!("loop returns at the last layer")
}

fn pattern_lp<F: Scalar>(
    aff: &PatternAffine<F>,
    bx: &InputBox<F>,
    out_set: &OutputSet<F>,
    c: &Array1<F>,
) -> DenseLp<F> {
    let n0 = bx.dim();
    let mut lp = DenseLp::new(n0);
    lp.objective = c.to_vec();
    for j in 0..n0 {
        lp.lower[j] = Some(bx.lo[j]);
        lp.upper[j] = Some(bx.hi[j]);
    }
    for (row, cst, active) in &aff.sign_rows {
        // active: row·x + cst ≥ 0;  inactive: row·x + cst ≤ 0.
        let rel = if *active { Relation::Ge } else { Relation::Le };
        lp.constrain(row.to_vec(), rel, -*cst);
    }
    // H·(Wx + b) + d ≤ 0.
    let hw = out_set.h.dot(&aff.out_w);
    let hb = out_set.h.dot(&aff.out_b) + &out_set.d;
    for (r, row) in hw.rows().into_iter().enumerate() {
        lp.constrain(row.to_vec(), Relation::Le, -hb[r]);
    }
    lp
}

/// Exact `min cᵀx` over `{x ∈ box : H·f(x) + d ≤ 0}` by enumerating the
/// activation patterns of all unstable neurons (after interval + reverse
/// symbolic stabilization). Errors if more than [`PATTERN_CAP`] neurons stay
/// unstable.
pub fn exact_min_milp<F: Scalar>(
    net: &Network<F>,
    bx: &InputBox<F>,
    out_set: &OutputSet<F>,
    c: &Array1<F>,
) -> Result<MilpOutcome<F>> {
    let mut store = interval_propagate(net, bx)?;
    rsip_init(net, &mut store);
    exact_min_milp_with(net, &store, out_set, c)
}

/// As [`exact_min_milp`] but classifying from a caller-supplied store (the
/// bounds must be sound for the box they encode).
pub fn exact_min_milp_with<F: Scalar>(
    net: &Network<F>,
    store: &BoundStore<F>,
    out_set: &OutputSet<F>,
    c: &Array1<F>,
) -> Result<MilpOutcome<F>> {
    if c.len() != net.input_dim() {
        return Err(Error::dim("objective length != input dim"));
    }
    let class = classify(store);
    let unstable = class.unstable_count();
    if unstable > PATTERN_CAP {
        return Err(Error::PatternBudget {
            unstable,
            cap: PATTERN_CAP,
        });
    }
    let bx = InputBox::new(store.input_lo.clone(), store.input_hi.clone())?;
    let count = 1usize << unstable;
    let results: Vec<Option<(F, Vec<F>)>> = (0..count)
        .into_par_iter()
        .map(|code| {
            let pattern = ActivationPattern {
                bits: (0..unstable).map(|b| (code >> b) & 1 == 1).collect(),
            };
            let aff = pattern_affine(net, &class, &pattern);
            let lp = pattern_lp(&aff, &bx, out_set, c);
            match lp_solve(&lp) {
                Ok(LpOutcome::Optimal { value, point }) => Some((value, point)),
                Ok(_) => None,
                Err(_) => None,
            }
        })
        .collect();

    let mut best: Option<(F, Vec<F>)> = None;
    for r in results.into_iter().flatten() {
        best = match best {
            None => Some(r),
            Some(b) if r.0 < b.0 => Some(r),
            Some(b) => Some(b),
        };
    }
    Ok(match best {
        Some((value, point)) => MilpOutcome::Min { value, point },
        None => MilpOutcome::Empty,
    })
}

/// Result of [`exact_lp_relaxation`].
#[derive(Debug, Clone, PartialEq)]
pub enum RelaxOutcome<F> {
    Value(F),
    /// The relaxed constraint set is already empty.
    Infeasible,
}

/// Exact optimum of the triangle-relaxed program built from the store's
/// current bounds: the target that dual ascent approaches from below.
pub fn exact_lp_relaxation<F: Scalar>(
    net: &Network<F>,
    store: &BoundStore<F>,
    out_set: &OutputSet<F>,
    obj: &LinearObjective<F>,
) -> Result<RelaxOutcome<F>> {
    obj.validate(net)?;
    let class = classify(store);
    let n0 = net.input_dim();
    let unstable = class.unstable_indices();
    let nvars = n0 + unstable.len();
    // Column index of the post-activation variable for each unstable neuron.
    let var_of = |stage: usize, j: usize| -> usize {
        n0 + unstable
            .iter()
            .position(|&(s, jj)| s == stage && jj == j)
            .unwrap()
    };

    let mut lp = DenseLp::new(nvars);
    for j in 0..n0 {
        lp.lower[j] = Some(store.input_lo[j]);
        lp.upper[j] = Some(store.input_hi[j]);
    }
    for (i, &(s, j)) in unstable.iter().enumerate() {
        let _ = (s, j);
        lp.lower[n0 + i] = Some(F::zero());
    }

    // Affine maps of pre-activations in LP variables: rows over nvars.
    let mut w = Array2::zeros((n0, nvars));
    for j in 0..n0 {
        w[(j, j)] = F::one();
    }
    let mut b = Array1::zeros(n0);
    let mut objective = vec![F::zero(); nvars];
    let mut obj_const = F::zero();
    for (j, &cj) in obj.c0.iter().enumerate() {
        objective[j] += cj;
    }

    let depth = net.depth();
    for (i, layer) in net.layers().iter().enumerate() {
        let pre_w = layer.weights.dot(&w);
        let pre_b = layer.weights.dot(&b) + &layer.bias;
        if i + 1 == depth {
            // Output constraints H·(pre) + d ≤ 0.
            let hw = out_set.h.dot(&pre_w);
            let hb = out_set.h.dot(&pre_b) + &out_set.d;
            for (r, row) in hw.rows().into_iter().enumerate() {
                lp.constrain(row.to_vec(), Relation::Le, -hb[r]);
            }
            if let Some(co) = &obj.c_out {
                for (r, &cr) in co.iter().enumerate() {
                    if cr != F::zero() {
                        for (jj, &wv) in pre_w.row(r).iter().enumerate() {
                            objective[jj] += cr * wv;
                        }
                        obj_const += cr * pre_b[r];
                    }
                }
            }
            break;
        }

        // Objective contribution of this stage's pre-activations.
        if let Some(ci) = obj.c.get(i) {
            for (j, &cj) in ci.iter().enumerate() {
                if cj != F::zero() {
                    for (jj, &wv) in pre_w.row(j).iter().enumerate() {
                        objective[jj] += cj * wv;
                    }
                    obj_const += cj * pre_b[j];
                }
            }
        }

        let mut post_w = pre_w.clone();
        let mut post_b = pre_b.clone();
        for j in 0..layer.out_dim() {
            match class.phase(i, j) {
                Phase::Active => {}
                Phase::Inactive => {
                    post_w.row_mut(j).fill(F::zero());
                    post_b[j] = F::zero();
                }
                Phase::Unstable => {
                    let v = var_of(i, j);
                    let l = store.pre_lo[i][j];
                    let u = store.pre_hi[i][j];
                    // x̂ ≥ pre  →  x̂ − pre ≥ 0.
                    let mut row: Vec<F> = pre_w.row(j).iter().map(|&x| -x).collect();
                    row[v] += F::one();
                    lp.constrain(row, Relation::Ge, pre_b[j]);
                    // (u−l)·x̂ ≤ u·pre − u·l.
                    let mut row: Vec<F> = pre_w.row(j).iter().map(|&x| -u * x).collect();
                    row[v] += u - l;
                    lp.constrain(row, Relation::Le, u * pre_b[j] - u * l);
                    // Post-activation is the fresh variable.
                    post_w.row_mut(j).fill(F::zero());
                    post_w[(j, v)] = F::one();
                    post_b[j] = F::zero();
                }
            }
        }
        w = post_w;
        b = post_b;
    }

    lp.objective = objective;
    match lp_solve(&lp)? {
        LpOutcome::Optimal { value, .. } => Ok(RelaxOutcome::Value(value + obj_const)),
        LpOutcome::Infeasible => Ok(RelaxOutcome::Infeasible),
        LpOutcome::Unbounded => Err(Error::invalid(
            "triangle relaxation unbounded despite box-bounded inputs",
        )),
    }
}

/// Uniform box samples whose forward image satisfies the output set within
/// `1e−9`. Deterministic for a given seed; may be empty.
pub fn sample_feasible<F: Scalar>(
    net: &Network<F>,
    bx: &InputBox<F>,
    out_set: &OutputSet<F>,
    n: usize,
    seed: u64,
) -> Vec<Array1<F>> {
    let tol = F::of(1e-9);
    let dim = bx.dim();
    let shard = 65_536usize;
    let shards: Vec<(u64, usize)> = (0..n.div_ceil(shard))
        .map(|s| (s as u64, shard.min(n - s * shard)))
        .collect();
    shards
        .par_iter()
        .map(|&(s, count)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (0x9e37_79b9_7f4a_7c15u64.wrapping_mul(s + 1)));
            let mut kept = Vec::new();
            for _ in 0..count {
                let x = Array1::from_shape_fn(dim, |j| {
                    let u: f64 = rng.random();
                    bx.lo[j] + (bx.hi[j] - bx.lo[j]) * F::of(u)
                });
                let y = net.forward(&x).expect("dims fixed");
                if out_set.contains(&y, tol) {
                    kept.push(x);
                }
            }
            kept
        })
        .reduce(Vec::new, |mut a, mut b| {
            a.append(&mut b);
            a
        })
}
