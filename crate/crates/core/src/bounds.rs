//! Per-layer pre-activation bounds: interval propagation, reverse symbolic
//! (backward-pass) initialization, neuron classification, and the
//! tighten-only update discipline.
//!
//! A [`BoundStore`] holds the input box `[l⁽⁰⁾, u⁽⁰⁾]` and, for every hidden
//! stage `i`, the pre-activation bounds `[l⁽ⁱ⁾, u⁽ⁱ⁾]`. Updates only ever
//! shrink intervals; if an update crosses (`lo > hi`) the store is flagged
//! infeasible, which callers consume as an emptiness certificate for the
//! region under analysis.

use crate::error::{Error, Result};
use crate::network::{InputBox, Network};
use crate::scalar::Scalar;
use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Margin used when deciding that crossed bounds certify infeasibility.
/// Both sides of a crossing are certified bounds, so anything beyond
/// floating-point noise is a genuine emptiness proof.
pub const INFEASIBILITY_MARGIN: f64 = 1e-7;

/// Activation phase of one neuron given its pre-activation bounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    /// `u ≤ 0`: the ReLU is the zero map.
    Inactive,
    /// `l ≥ 0`: the ReLU is the identity.
    Active,
    /// `l < 0 < u`: the ReLU needs relaxation.
    Unstable,
}

/// Per-stage partition of neuron indices into inactive / active / unstable.
#[derive(Debug, Clone, PartialEq)]
pub struct NeuronClass {
    phases: Vec<Vec<Phase>>,
}

impl NeuronClass {
    pub fn stages(&self) -> usize {
        self.phases.len()
    }

    pub fn phase(&self, stage: usize, j: usize) -> Phase {
        self.phases[stage][j]
    }

    pub fn stage(&self, stage: usize) -> &[Phase] {
        &self.phases[stage]
    }

    /// Total number of unstable neurons across all stages.
    pub fn unstable_count(&self) -> usize {
        self.phases
            .iter()
            .map(|s| s.iter().filter(|p| **p == Phase::Unstable).count())
            .sum()
    }

    /// `(stage, neuron)` indices of all unstable neurons, in layer order.
    pub fn unstable_indices(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (k, stage) in self.phases.iter().enumerate() {
            for (j, p) in stage.iter().enumerate() {
                if *p == Phase::Unstable {
                    out.push((k, j));
                }
            }
        }
        out
    }
}

/// Classify every hidden neuron from the store's current bounds. Boundary
/// neurons (`l = 0` or `u = 0`) go to the stable sets.
pub fn classify<F: Scalar>(store: &BoundStore<F>) -> NeuronClass {
    let phases = store
        .pre_lo
        .iter()
        .zip(store.pre_hi.iter())
        .map(|(lo, hi)| {
            lo.iter()
                .zip(hi.iter())
                .map(|(&l, &u)| {
                    if u <= F::zero() {
                        Phase::Inactive
                    } else if l >= F::zero() {
                        Phase::Active
                    } else {
                        Phase::Unstable
                    }
                })
                .collect()
        })
        .collect();
    NeuronClass { phases }
}

/// Pre-activation bounds for every stage of a network plus the input box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundStore<F> {
    pub input_lo: Array1<F>,
    pub input_hi: Array1<F>,
    /// Hidden pre-activation lower bounds, one vector per ReLU stage.
    pub pre_lo: Vec<Array1<F>>,
    /// Hidden pre-activation upper bounds, one vector per ReLU stage.
    pub pre_hi: Vec<Array1<F>>,
    /// Optional output bounds of the (unfolded) network.
    pub out_lo: Option<Array1<F>>,
    pub out_hi: Option<Array1<F>>,
    /// Set when a tighten-only update crossed; certifies the analyzed
    /// region is empty.
    infeasible: bool,
}

impl<F: Scalar> BoundStore<F> {
    pub fn stages(&self) -> usize {
        self.pre_lo.len()
    }

    pub fn infeasible(&self) -> bool {
        self.infeasible
    }

    pub fn set_infeasible(&mut self) {
        self.infeasible = true;
    }

    /// Width sum over all hidden stages plus the input box; the quantity
    /// that must be non-increasing across tightening sweeps.
    pub fn width_sum(&self) -> F {
        let hidden: F = self
            .pre_lo
            .iter()
            .zip(self.pre_hi.iter())
            .flat_map(|(lo, hi)| lo.iter().zip(hi.iter()).map(|(&l, &h)| h - l))
            .sum();
        let input: F = self
            .input_lo
            .iter()
            .zip(self.input_hi.iter())
            .map(|(&l, &h)| h - l)
            .sum();
        hidden + input
    }

    /// Width sum of a single hidden stage.
    pub fn stage_width_sum(&self, k: usize) -> F {
        self.pre_lo[k]
            .iter()
            .zip(self.pre_hi[k].iter())
            .map(|(&l, &h)| h - l)
            .sum()
    }

    /// Tighten-only update of a hidden lower bound. Returns the improvement
    /// (0 when the existing bound was already at least as tight).
    pub fn tighten_pre_lo(&mut self, stage: usize, j: usize, value: F) -> F {
        let old = self.pre_lo[stage][j];
        if value > old {
            self.pre_lo[stage][j] = value;
            if value > self.pre_hi[stage][j] + F::of(INFEASIBILITY_MARGIN) {
                self.infeasible = true;
            }
            value - old
        } else {
            F::zero()
        }
    }

    /// Tighten-only update of a hidden upper bound.
    pub fn tighten_pre_hi(&mut self, stage: usize, j: usize, value: F) -> F {
        let old = self.pre_hi[stage][j];
        if value < old {
            self.pre_hi[stage][j] = value;
            if self.pre_lo[stage][j] > value + F::of(INFEASIBILITY_MARGIN) {
                self.infeasible = true;
            }
            old - value
        } else {
            F::zero()
        }
    }

    /// Tighten-only update of the input box.
    pub fn tighten_input_lo(&mut self, j: usize, value: F) -> F {
        let old = self.input_lo[j];
        if value > old {
            self.input_lo[j] = value;
            if value > self.input_hi[j] + F::of(INFEASIBILITY_MARGIN) {
                self.infeasible = true;
            }
            value - old
        } else {
            F::zero()
        }
    }

    pub fn tighten_input_hi(&mut self, j: usize, value: F) -> F {
        let old = self.input_hi[j];
        if value < old {
            self.input_hi[j] = value;
            if self.input_lo[j] > value + F::of(INFEASIBILITY_MARGIN) {
                self.infeasible = true;
            }
            old - value
        } else {
            F::zero()
        }
    }

    /// Elementwise intersection with another store over the same network;
    /// used to warm-start a child region from its parent.
    pub fn intersect(&mut self, other: &BoundStore<F>) -> Result<()> {
        if other.stages() != self.stages() || other.input_lo.len() != self.input_lo.len() {
            return Err(Error::dim("bound stores cover different networks"));
        }
        for j in 0..self.input_lo.len() {
            self.tighten_input_lo(j, other.input_lo[j]);
            self.tighten_input_hi(j, other.input_hi[j]);
        }
        for k in 0..self.stages() {
            for j in 0..self.pre_lo[k].len() {
                self.tighten_pre_lo(k, j, other.pre_lo[k][j]);
                self.tighten_pre_hi(k, j, other.pre_hi[k][j]);
            }
        }
        if other.infeasible {
            self.infeasible = true;
        }
        Ok(())
    }

    /// Serialize to JSON (used to carry bounds across stacked-network runs).
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self).expect("bound store serializes");
        std::fs::write(path, text).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }
}

/// Interval image of an affine layer: positive weights take the lower input
/// end for the lower bound, negative weights the upper end, and vice versa.
pub fn affine_interval<F: Scalar>(
    weights: &Array2<F>,
    bias: &Array1<F>,
    lo: &Array1<F>,
    hi: &Array1<F>,
) -> (Array1<F>, Array1<F>) {
    let mut out_lo = bias.clone();
    let mut out_hi = bias.clone();
    for (r, row) in weights.rows().into_iter().enumerate() {
        let mut acc_lo = F::zero();
        let mut acc_hi = F::zero();
        for (j, &w) in row.iter().enumerate() {
            if w >= F::zero() {
                acc_lo += w * lo[j];
                acc_hi += w * hi[j];
            } else {
                acc_lo += w * hi[j];
                acc_hi += w * lo[j];
            }
        }
        out_lo[r] += acc_lo;
        out_hi[r] += acc_hi;
    }
    (out_lo, out_hi)
}

/// Sound pre-activation bounds at every stage via interval arithmetic,
/// clamping at each ReLU. Also fills the output bounds.
pub fn interval_propagate<F: Scalar>(net: &Network<F>, bx: &InputBox<F>) -> Result<BoundStore<F>> {
    if bx.dim() != net.input_dim() {
        return Err(Error::dim(format!(
            "box dim {} != network input dim {}",
            bx.dim(),
            net.input_dim()
        )));
    }
    let mut pre_lo = Vec::with_capacity(net.hidden_stages());
    let mut pre_hi = Vec::with_capacity(net.hidden_stages());
    let mut lo = bx.lo.clone();
    let mut hi = bx.hi.clone();
    let depth = net.depth();
    let mut out = None;
    for (i, layer) in net.layers().iter().enumerate() {
        let (l, h) = affine_interval(&layer.weights, &layer.bias, &lo, &hi);
        if i + 1 < depth {
            pre_lo.push(l.clone());
            pre_hi.push(h.clone());
            lo = l.mapv(|v| v.pos());
            hi = h.mapv(|v| v.pos());
        } else {
            out = Some((l, h));
        }
    }
    let (out_lo, out_hi) = out.unwrap();
    Ok(BoundStore {
        input_lo: bx.lo.clone(),
        input_hi: bx.hi.clone(),
        pre_lo,
        pre_hi,
        out_lo: Some(out_lo),
        out_hi: Some(out_hi),
        infeasible: false,
    })
}

/// Interval bounds of the network output given the store's current bounds
/// (clamped hidden intervals pushed through the remaining layers).
pub fn output_interval<F: Scalar>(net: &Network<F>, store: &BoundStore<F>) -> (Array1<F>, Array1<F>) {
    let depth = net.depth();
    let mut lo = store.input_lo.clone();
    let mut hi = store.input_hi.clone();
    for (i, layer) in net.layers().iter().enumerate() {
        let (mut l, mut h) = affine_interval(&layer.weights, &layer.bias, &lo, &hi);
        if i + 1 < depth {
            // Intersect with the store's (possibly tighter) bounds.
            for j in 0..l.len() {
                l[j] = l[j].max(store.pre_lo[i][j]);
                h[j] = h[j].min(store.pre_hi[i][j]);
            }
            lo = l.mapv(|v| v.pos());
            hi = h.mapv(|v| v.pos());
        } else {
            return (l, h);
        }
    }
    unreachable!("network has at least one layer")
}

/// The closed-form relaxation slope used by the backward pass when no
/// gradient ascent is involved: the lower-line slope that minimizes the
/// relaxation area (`α = 1` when `u ≥ |l|`, else `0`).
pub fn closed_form_alpha<F: Scalar>(l: F, u: F) -> F {
    if u >= -l {
        F::one()
    } else {
        F::zero()
    }
}

/// One batched backward (reverse symbolic) pass bounding every neuron of
/// hidden stage `k` from the input box, using the store's bounds for the
/// stages before `k` and the closed-form relaxation slope. Returns the raw
/// `(lower, upper)` bounds of the pass, *not* intersected with the store.
pub fn rsip_stage_bounds<F: Scalar>(
    net: &Network<F>,
    store: &BoundStore<F>,
    class: &NeuronClass,
    k: usize,
) -> (Array1<F>, Array1<F>) {
    let width = net.hidden_width(k);
    // Rows 0..width bound +e_j from below (lower bounds); rows width..2width
    // bound −e_j from below (upper bounds after negation). The recursion
    // starts from ν at stage k equal to −c.
    let mut nu = Array2::zeros((2 * width, width));
    for j in 0..width {
        nu[(j, j)] = -F::one();
        nu[(width + j, j)] = F::one();
    }

    let mut bias_acc = Array1::<F>::zeros(2 * width);
    // Walk back from stage k to the input through layers k..0.
    // Invariant: `nu` holds ν over the pre-activations of stage `s`.
    let mut s = k;
    loop {
        // Bias of the affine layer producing stage s.
        let layer = &net.layers()[s];
        for (r, nrow) in nu.rows().into_iter().enumerate() {
            bias_acc[r] -= nrow.dot(&layer.bias);
        }
        if s == 0 {
            break;
        }
        // ν̂ over stage s−1 post-activations: ν̂ = ν·W.
        let hat = nu.dot(&layer.weights);
        let prev = s - 1;
        let mut next = Array2::zeros((2 * width, net.hidden_width(prev)));
        for j in 0..net.hidden_width(prev) {
            match class.phase(prev, j) {
                Phase::Active => {
                    for r in 0..2 * width {
                        next[(r, j)] = hat[(r, j)];
                    }
                }
                Phase::Inactive => {}
                Phase::Unstable => {
                    let l = store.pre_lo[prev][j];
                    let u = store.pre_hi[prev][j];
                    let slope = u / (u - l);
                    let alpha = closed_form_alpha(l, u);
                    let q = u * l / (u - l);
                    for r in 0..2 * width {
                        let h = hat[(r, j)];
                        next[(r, j)] = slope * h.pos() - alpha * h.neg_part();
                        bias_acc[r] += q * h.pos();
                    }
                }
            }
        }
        nu = next;
        s = prev;
    }

    // Concretize against the input box. The loop left `nu` over stage 0 with
    // its bias already accumulated; the input coefficient is −νᵀW⁽¹⁾.
    let first = &net.layers()[0];
    let coeff = nu.dot(&first.weights);
    let mut g = bias_acc;
    for (r, crow) in coeff.rows().into_iter().enumerate() {
        for (j, &t) in crow.iter().enumerate() {
            let t = -t;
            g[r] += t.pos() * store.input_lo[j] - t.neg_part() * store.input_hi[j];
        }
    }

    let lower = Array1::from_shape_fn(width, |j| g[j]);
    let upper = Array1::from_shape_fn(width, |j| -g[width + j]);
    (lower, upper)
}

/// Tighten a store in place with one reverse-symbolic pass per stage,
/// processing stages front to back so each pass sees the tightened bounds
/// of its predecessors. Bounds are intersected with the existing store, so
/// the result is elementwise at least as tight as interval propagation.
pub fn rsip_init<F: Scalar>(net: &Network<F>, store: &mut BoundStore<F>) {
    for k in 0..store.stages() {
        let class = classify(store);
        let (lo, hi) = rsip_stage_bounds(net, store, &class, k);
        for j in 0..lo.len() {
            store.tighten_pre_lo(k, j, lo[j]);
            store.tighten_pre_hi(k, j, hi[j]);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{AffineLayer, InputBox, Network};
    use approx::assert_abs_diff_eq;
    use ndarray::{arr1, arr2};
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn toy_net() -> Network<f64> {
        Network::new(vec![
            AffineLayer::new(arr2(&[[1.0], [1.0]]), arr1(&[0.0, 1.0])).unwrap(),
            AffineLayer::new(arr2(&[[1.0, 1.0]]), arr1(&[0.0])).unwrap(),
        ])
        .unwrap()
    }

    fn random_net(rng: &mut StdRng, dims: &[usize]) -> Network<f64> {
        let layers = dims
            .windows(2)
            .map(|w| {
                let (i, o) = (w[0], w[1]);
                let scale = 1.5 / (i as f64).sqrt();
                AffineLayer::new(
                    ndarray::Array2::from_shape_fn((o, i), |_| rng.random_range(-1.0..1.0) * scale),
                    ndarray::Array1::from_shape_fn(o, |_| rng.random_range(-0.5..0.5)),
                )
                .unwrap()
            })
            .collect();
        Network::new(layers).unwrap()
    }

    #[test]
    fn toy_interval_bounds() {
        let net = toy_net();
        let bx = InputBox::new(arr1(&[-2.0]), arr1(&[2.0])).unwrap();
        let store = interval_propagate(&net, &bx).unwrap();
        assert_eq!(store.pre_lo[0], arr1(&[-2.0, -1.0]));
        assert_eq!(store.pre_hi[0], arr1(&[2.0, 3.0]));
        assert_eq!(store.out_lo.as_ref().unwrap(), &arr1(&[0.0]));
        assert_eq!(store.out_hi.as_ref().unwrap(), &arr1(&[5.0]));
    }

    #[test]
    fn zero_weight_layer_gives_bias_bounds() {
        let net = Network::new(vec![
            AffineLayer::new(arr2(&[[0.0], [0.0]]), arr1(&[1.5, -0.5])).unwrap(),
            AffineLayer::new(arr2(&[[1.0, 1.0]]), arr1(&[0.0])).unwrap(),
        ])
        .unwrap();
        let bx = InputBox::new(arr1(&[-7.0]), arr1(&[7.0])).unwrap();
        let store = interval_propagate(&net, &bx).unwrap();
        assert_eq!(store.pre_lo[0], arr1(&[1.5, -0.5]));
        assert_eq!(store.pre_hi[0], arr1(&[1.5, -0.5]));
    }

    #[test]
    fn identity_layer_bounds_equal_box() {
        let net = Network::new(vec![AffineLayer::identity(2), AffineLayer::identity(2)]).unwrap();
        let bx = InputBox::new(arr1(&[-1.0, 0.5]), arr1(&[2.0, 3.0])).unwrap();
        let store = interval_propagate(&net, &bx).unwrap();
        assert_eq!(store.pre_lo[0], arr1(&[-1.0, 0.5]));
        assert_eq!(store.pre_hi[0], arr1(&[2.0, 3.0]));
    }

    #[test]
    fn classify_boundaries_go_stable() {
        let store = BoundStore {
            input_lo: arr1(&[0.0]),
            input_hi: arr1(&[1.0]),
            pre_lo: vec![arr1(&[-1.0, 0.0, -3.0])],
            pre_hi: vec![arr1(&[2.0, 2.0, 0.0])],
            out_lo: None,
            out_hi: None,
            infeasible: false,
        };
        let class = classify(&store);
        assert_eq!(class.phase(0, 0), Phase::Unstable);
        assert_eq!(class.phase(0, 1), Phase::Active);
        assert_eq!(class.phase(0, 2), Phase::Inactive);
        assert_eq!(class.unstable_count(), 1);
    }

    #[test]
    fn toy_rsip_keeps_box_bounds() {
        // Without the output constraint the first stage is a pure affine
        // image of the box, so the backward pass cannot improve on it.
        let net = toy_net();
        let bx = InputBox::new(arr1(&[-2.0]), arr1(&[2.0])).unwrap();
        let mut store = interval_propagate(&net, &bx).unwrap();
        rsip_init(&net, &mut store);
        assert_abs_diff_eq!(store.pre_lo[0][0], -2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(store.pre_hi[0][0], 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(store.pre_lo[0][1], -1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(store.pre_hi[0][1], 3.0, epsilon = 1e-12);
    }

    #[test]
    fn single_affine_stage_rsip_equals_interval() {
        let mut rng = StdRng::seed_from_u64(21);
        let net = random_net(&mut rng, &[3, 4, 2]);
        let bx = InputBox::new(arr1(&[-1.0, -1.0, -1.0]), arr1(&[1.0, 1.0, 1.0])).unwrap();
        let mut store = interval_propagate(&net, &bx).unwrap();
        let before = store.clone();
        rsip_init(&net, &mut store);
        // Stage 0 is exact either way.
        for j in 0..4 {
            assert_abs_diff_eq!(store.pre_lo[0][j], before.pre_lo[0][j], epsilon = 1e-12);
            assert_abs_diff_eq!(store.pre_hi[0][j], before.pre_hi[0][j], epsilon = 1e-12);
        }
    }

    #[test]
    fn rsip_dominates_intervals_and_is_sound() {
        let mut rng = StdRng::seed_from_u64(22);
        for trial in 0..10 {
            let net = random_net(&mut rng, &[2, 8, 8, 1]);
            let bx = InputBox::new(arr1(&[-1.0, -1.0]), arr1(&[1.0, 1.0])).unwrap();
            let interval = interval_propagate(&net, &bx).unwrap();
            let mut store = interval.clone();
            rsip_init(&net, &mut store);
            for k in 0..store.stages() {
                for j in 0..store.pre_lo[k].len() {
                    assert!(
                        store.pre_lo[k][j] >= interval.pre_lo[k][j] - 1e-12,
                        "trial {trial}: rsip lower looser at ({k},{j})"
                    );
                    assert!(
                        store.pre_hi[k][j] <= interval.pre_hi[k][j] + 1e-12,
                        "trial {trial}: rsip upper looser at ({k},{j})"
                    );
                }
            }
            // Soundness of both stores against sampled executions.
            for _ in 0..1000 {
                let x = arr1(&[rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]);
                let (pre, _) = net.forward_with_preacts(&x).unwrap();
                for k in 0..store.stages() {
                    for j in 0..pre[k].len() {
                        assert!(pre[k][j] >= store.pre_lo[k][j] - 1e-7);
                        assert!(pre[k][j] <= store.pre_hi[k][j] + 1e-7);
                    }
                }
            }
        }
    }

    #[test]
    fn tighten_only_discipline_and_infeasibility_flag() {
        let net = toy_net();
        let bx = InputBox::new(arr1(&[-2.0]), arr1(&[2.0])).unwrap();
        let mut store = interval_propagate(&net, &bx).unwrap();
        // A looser bound is a no-op.
        assert_eq!(store.tighten_pre_lo(0, 0, -5.0), 0.0);
        assert_eq!(store.pre_lo[0][0], -2.0);
        // A tighter bound commits and reports the improvement.
        assert_abs_diff_eq!(store.tighten_pre_lo(0, 0, -1.0), 1.0);
        assert!(!store.infeasible());
        // Crossing flags infeasibility.
        store.tighten_pre_lo(0, 0, 3.0);
        assert!(store.infeasible());
    }

    #[test]
    fn width_sum_shrinks_under_tightening() {
        let net = toy_net();
        let bx = InputBox::new(arr1(&[-2.0]), arr1(&[2.0])).unwrap();
        let mut store = interval_propagate(&net, &bx).unwrap();
        let w0 = store.width_sum();
        store.tighten_pre_hi(0, 1, 2.5);
        assert!(store.width_sum() < w0);
    }

    #[test]
    fn bound_store_json_round_trip() {
        let net = toy_net();
        let bx = InputBox::new(arr1(&[-2.0]), arr1(&[2.0])).unwrap();
        let store = interval_propagate(&net, &bx).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("store.json");
        store.save(&path).unwrap();
        let back = BoundStore::<f64>::load(&path).unwrap();
        assert_eq!(store, back);
    }
}
