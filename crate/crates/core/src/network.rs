//! Feed-forward ReLU networks and the structural encodings built on them.
//!
//! A [`Network`] is a chain of affine layers with ReLU applied after every
//! layer except the last. All transforms in this module (`fuse_affine`,
//! `stack`, `encode_closed_loop`, `encode_max_gap`,
//! `fold_output_constraints`) produce new networks; existing networks are
//! never mutated, so they can be shared read-only across worker threads.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use std::path::Path;

/// A dense affine map `x ↦ W·x + b` (rows of `weights` = output dim).
#[derive(Debug, Clone, PartialEq)]
pub struct AffineLayer<F> {
    pub weights: Array2<F>,
    pub bias: Array1<F>,
}

impl<F: Scalar> AffineLayer<F> {
    /// Build a layer, checking that the bias length matches the weight rows
    /// and that every entry is finite.
    pub fn new(weights: Array2<F>, bias: Array1<F>) -> Result<Self> {
        if weights.nrows() != bias.len() {
            return Err(Error::dim(format!(
                "bias length {} does not match weight rows {}",
                bias.len(),
                weights.nrows()
            )));
        }
        if weights.iter().any(|w| !w.is_finite()) || bias.iter().any(|b| !b.is_finite()) {
            return Err(Error::NonFinite("affine layer entry".into()));
        }
        Ok(Self { weights, bias })
    }

    pub fn in_dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.nrows()
    }

    /// `W·x + b`.
    pub fn apply(&self, x: &Array1<F>) -> Array1<F> {
        self.weights.dot(x) + &self.bias
    }

    /// Identity layer of the given dimension.
    pub fn identity(dim: usize) -> Self {
        Self {
            weights: Array2::eye(dim),
            bias: Array1::zeros(dim),
        }
    }
}

/// Composition of two affine layers: `fuse_affine(a, b)` computes `b(a(x))`
/// as a single layer with weights `b.W·a.W` and bias `b.W·a.b + b.b`.
pub fn fuse_affine<F: Scalar>(a: &AffineLayer<F>, b: &AffineLayer<F>) -> Result<AffineLayer<F>> {
    if a.out_dim() != b.in_dim() {
        return Err(Error::dim(format!(
            "cannot fuse {}-output layer into {}-input layer",
            a.out_dim(),
            b.in_dim()
        )));
    }
    Ok(AffineLayer {
        weights: b.weights.dot(&a.weights),
        bias: b.weights.dot(&a.bias) + &b.bias,
    })
}

/// Feed-forward ReLU network: ReLU after every affine layer except the last.
#[derive(Debug, Clone, PartialEq)]
pub struct Network<F> {
    layers: Vec<AffineLayer<F>>,
    input_dim: usize,
    output_dim: usize,
}

impl<F: Scalar> Network<F> {
    /// Build a network, validating that consecutive layer dimensions chain.
    pub fn new(layers: Vec<AffineLayer<F>>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::invalid("network needs at least one layer"));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(Error::Layer {
                    layer: i + 1,
                    message: format!(
                        "input dim {} does not match previous layer output dim {}",
                        pair[1].in_dim(),
                        pair[0].out_dim()
                    ),
                });
            }
        }
        let input_dim = layers[0].in_dim();
        let output_dim = layers.last().unwrap().out_dim();
        Ok(Self {
            layers,
            input_dim,
            output_dim,
        })
    }

    pub fn layers(&self) -> &[AffineLayer<F>] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    /// Number of affine layers (`L`); hidden ReLU stages are `L - 1`.
    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    /// Number of ReLU stages (pre-activation vectors with bounds).
    pub fn hidden_stages(&self) -> usize {
        self.layers.len() - 1
    }

    /// Width of hidden stage `k` (0-based).
    pub fn hidden_width(&self, k: usize) -> usize {
        self.layers[k].out_dim()
    }

    /// Evaluate the network on `x`.
    pub fn forward(&self, x: &Array1<F>) -> Result<Array1<F>> {
        if x.len() != self.input_dim {
            return Err(Error::dim(format!(
                "input length {} != network input dim {}",
                x.len(),
                self.input_dim
            )));
        }
        let mut cur = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            cur = layer.apply(&cur);
            if i + 1 < self.layers.len() {
                cur.mapv_inplace(|v| v.pos());
            }
        }
        Ok(cur)
    }

    /// Evaluate and record every hidden pre-activation alongside the output.
    pub fn forward_with_preacts(&self, x: &Array1<F>) -> Result<(Vec<Array1<F>>, Array1<F>)> {
        if x.len() != self.input_dim {
            return Err(Error::dim(format!(
                "input length {} != network input dim {}",
                x.len(),
                self.input_dim
            )));
        }
        let mut pre = Vec::with_capacity(self.hidden_stages());
        let mut cur = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            cur = layer.apply(&cur);
            if i + 1 < self.layers.len() {
                pre.push(cur.clone());
                cur.mapv_inplace(|v| v.pos());
            }
        }
        Ok((pre, cur))
    }

    /// The t-fold composition of a square network, fusing the affine pair at
    /// every seam, so the result has `t·(L−1) + 1` affine layers.
    pub fn stack(&self, t: usize) -> Result<Network<F>> {
        if self.input_dim != self.output_dim {
            return Err(Error::dim(format!(
                "cannot stack a {}→{} network",
                self.input_dim, self.output_dim
            )));
        }
        if t < 1 {
            return Err(Error::invalid("stack count must be at least 1"));
        }
        let mut layers: Vec<AffineLayer<F>> = self.layers.clone();
        for _ in 1..t {
            let seam = layers.pop().unwrap();
            layers.push(fuse_affine(&seam, &self.layers[0])?);
            layers.extend(self.layers[1..].iter().cloned());
        }
        Network::new(layers)
    }

    /// Pre-compose the final layer with `(H, d)`: the new output is
    /// `H·f(x) + d`, so an output set `H·y + d ≤ 0` becomes `z ≤ 0` on the
    /// returned copy.
    pub fn fold_output_constraints(&self, out_set: &OutputSet<F>) -> Result<Network<F>> {
        if out_set.h.ncols() != self.output_dim {
            return Err(Error::dim(format!(
                "output set has {} columns but network output dim is {}",
                out_set.h.ncols(),
                self.output_dim
            )));
        }
        let mut layers = self.layers.clone();
        let last = layers.pop().unwrap();
        let fold = AffineLayer {
            weights: out_set.h.clone(),
            bias: out_set.d.clone(),
        };
        layers.push(fuse_affine(&last, &fold)?);
        Network::new(layers)
    }
}

/// Linear output constraints `H·y + d ≤ 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputSet<F> {
    pub h: Array2<F>,
    pub d: Array1<F>,
}

impl<F: Scalar> OutputSet<F> {
    pub fn new(h: Array2<F>, d: Array1<F>) -> Result<Self> {
        if h.nrows() != d.len() {
            return Err(Error::dim(format!(
                "H has {} rows but d has length {}",
                h.nrows(),
                d.len()
            )));
        }
        if h.iter().any(|v| !v.is_finite()) || d.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("output set entry".into()));
        }
        Ok(Self { h, d })
    }

    pub fn rows(&self) -> usize {
        self.d.len()
    }

    /// `max_k (H·y + d)_k ≤ tol` membership test.
    pub fn contains(&self, y: &Array1<F>, tol: F) -> bool {
        let z = self.h.dot(y) + &self.d;
        z.iter().all(|&v| v <= tol)
    }

    /// A box `lo ≤ y ≤ hi` in output space as `2n` constraint rows.
    pub fn from_box(lo: &Array1<F>, hi: &Array1<F>) -> Result<Self> {
        if lo.len() != hi.len() {
            return Err(Error::dim("box lo/hi length mismatch"));
        }
        let n = lo.len();
        let mut h = Array2::zeros((2 * n, n));
        let mut d = Array1::zeros(2 * n);
        for i in 0..n {
            // y_i ≤ hi_i  →  y_i − hi_i ≤ 0
            h[(2 * i, i)] = F::one();
            d[2 * i] = -hi[i];
            // y_i ≥ lo_i  →  −y_i + lo_i ≤ 0
            h[(2 * i + 1, i)] = -F::one();
            d[2 * i + 1] = lo[i];
        }
        OutputSet::new(h, d)
    }
}

/// Axis-aligned input region `lo ≤ x ≤ hi`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputBox<F> {
    pub lo: Array1<F>,
    pub hi: Array1<F>,
}

impl<F: Scalar> InputBox<F> {
    pub fn new(lo: Array1<F>, hi: Array1<F>) -> Result<Self> {
        if lo.len() != hi.len() {
            return Err(Error::dim("box lo/hi length mismatch"));
        }
        if lo.iter().any(|v| !v.is_finite()) || hi.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("input box entry".into()));
        }
        if lo.iter().zip(hi.iter()).any(|(l, h)| l > h) {
            return Err(Error::invalid("input box has lo > hi"));
        }
        Ok(Self { lo, hi })
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn contains(&self, x: &Array1<F>, tol: F) -> bool {
        x.iter()
            .zip(self.lo.iter().zip(self.hi.iter()))
            .all(|(&v, (&l, &h))| v >= l - tol && v <= h + tol)
    }

    /// Index of the widest dimension (first on ties).
    pub fn widest_dim(&self) -> usize {
        let mut best = 0;
        let mut best_w = self.hi[0] - self.lo[0];
        for i in 1..self.dim() {
            let w = self.hi[i] - self.lo[i];
            if w > best_w {
                best_w = w;
                best = i;
            }
        }
        best
    }
}

// ----------------------------------------------------------------------------
// JSON formats
// ----------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct LayerJson {
    weights: Vec<Vec<f64>>,
    bias: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct NetworkJson {
    layers: Vec<LayerJson>,
}

#[derive(Serialize, Deserialize)]
struct OutputSetJson {
    #[serde(rename = "H")]
    h: Vec<Vec<f64>>,
    d: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct BoxJson {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

fn matrix_from_rows<F: Scalar>(rows: &[Vec<f64>], what: &str) -> Result<Array2<F>> {
    if rows.is_empty() {
        return Err(Error::invalid(format!("{what}: empty matrix")));
    }
    let ncols = rows[0].len();
    if ncols == 0 {
        return Err(Error::invalid(format!("{what}: zero-width matrix")));
    }
    let mut flat = Vec::with_capacity(rows.len() * ncols);
    for row in rows {
        if row.len() != ncols {
            return Err(Error::dim(format!("{what}: ragged rows")));
        }
        flat.extend(row.iter().map(|&v| F::of(v)));
    }
    Array2::from_shape_vec((rows.len(), ncols), flat)
        .map_err(|e| Error::invalid(format!("{what}: {e}")))
}

/// Load a network from the JSON layer-list format
/// `{"layers":[{"weights":[[...]],"bias":[...]},...]}`.
pub fn load_network<F: Scalar>(path: &Path) -> Result<Network<F>> {
    let raw: NetworkJson = read_json(path)?;
    let mut layers = Vec::with_capacity(raw.layers.len());
    for (i, l) in raw.layers.iter().enumerate() {
        let weights = matrix_from_rows::<F>(&l.weights, &format!("layer {i} weights"))?;
        let bias = Array1::from_iter(l.bias.iter().map(|&v| F::of(v)));
        let layer = AffineLayer::new(weights, bias).map_err(|e| Error::Layer {
            layer: i,
            message: e.to_string(),
        })?;
        layers.push(layer);
    }
    Network::new(layers)
}

/// Serialize a network to the JSON layer-list format.
pub fn save_network<F: Scalar>(net: &Network<F>, path: &Path) -> Result<()> {
    let raw = NetworkJson {
        layers: net
            .layers()
            .iter()
            .map(|l| LayerJson {
                weights: l
                    .weights
                    .rows()
                    .into_iter()
                    .map(|r| r.iter().map(|v| v.to_f64().unwrap()).collect())
                    .collect(),
                bias: l.bias.iter().map(|v| v.to_f64().unwrap()).collect(),
            })
            .collect(),
    };
    let text = serde_json::to_string_pretty(&raw).expect("network serializes");
    std::fs::write(path, text).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Load an output set from `{"H":[[...]],"d":[...]}`.
pub fn load_output_set<F: Scalar>(path: &Path) -> Result<OutputSet<F>> {
    let raw: OutputSetJson = read_json(path)?;
    let h = matrix_from_rows::<F>(&raw.h, "output set H")?;
    let d = Array1::from_iter(raw.d.iter().map(|&v| F::of(v)));
    OutputSet::new(h, d)
}

/// Load an input box from `{"lo":[...],"hi":[...]}`.
pub fn load_box<F: Scalar>(path: &Path) -> Result<InputBox<F>> {
    let raw: BoxJson = read_json(path)?;
    InputBox::new(
        Array1::from_iter(raw.lo.iter().map(|&v| F::of(v))),
        Array1::from_iter(raw.hi.iter().map(|&v| F::of(v))),
    )
}

// ----------------------------------------------------------------------------
// Structural encodings
// ----------------------------------------------------------------------------

/// Slack subtracted from passthrough shift constants so carried channels sit
/// strictly inside the active regime rather than on the ReLU kink.
pub const SHIFT_SLACK: f64 = 1e-6;

/// Encode the closed loop `x ↦ A·x + B·π(x)` as a plain affine/ReLU network.
///
/// The state is carried through every ReLU stage of the policy as extra
/// channels `max(x − M, 0)` with `M` a lower bound of the state over
/// `state_box`, added back in the final layer. With `M` strictly below the
/// box the carried channels are always active, so the encoding is exact on
/// the box.
pub fn encode_closed_loop<F: Scalar>(
    a: &Array2<F>,
    b: &Array2<F>,
    policy: &Network<F>,
    state_box: &InputBox<F>,
) -> Result<Network<F>> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::dim("dynamics matrix A must be square"));
    }
    if b.nrows() != n {
        return Err(Error::dim(format!(
            "B has {} rows but state dim is {n}",
            b.nrows()
        )));
    }
    if policy.input_dim() != n {
        return Err(Error::dim(format!(
            "policy input dim {} != state dim {n}",
            policy.input_dim()
        )));
    }
    if policy.output_dim() != b.ncols() {
        return Err(Error::dim(format!(
            "policy output dim {} != B columns {}",
            policy.output_dim(),
            b.ncols()
        )));
    }
    if state_box.dim() != n {
        return Err(Error::dim("state box dim != state dim"));
    }

    let shift = state_box.lo.mapv(|v| v - F::of(SHIFT_SLACK));
    if shift.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("passthrough shift constant".into()));
    }

    let p = policy.layers();
    let last = p.len() - 1;
    if p.len() == 1 {
        // Affine policy: the closed loop is a single affine layer.
        let weights = a + &b.dot(&p[0].weights);
        let bias = b.dot(&p[0].bias);
        return Network::new(vec![AffineLayer::new(weights, bias)?]);
    }

    let mut layers = Vec::with_capacity(p.len());
    // First stage: policy layer on top, shifted state passthrough below.
    let h0 = p[0].out_dim();
    let mut w0 = Array2::zeros((h0 + n, n));
    let mut b0 = Array1::zeros(h0 + n);
    w0.slice_mut(ndarray::s![..h0, ..]).assign(&p[0].weights);
    b0.slice_mut(ndarray::s![..h0]).assign(&p[0].bias);
    for i in 0..n {
        w0[(h0 + i, i)] = F::one();
        b0[h0 + i] = -shift[i];
    }
    layers.push(AffineLayer::new(w0, b0)?);

    // Middle stages: block-diagonal policy layer + identity passthrough.
    for k in 1..last {
        let (hi, ho) = (p[k].in_dim(), p[k].out_dim());
        let mut w = Array2::zeros((ho + n, hi + n));
        let mut bv = Array1::zeros(ho + n);
        w.slice_mut(ndarray::s![..ho, ..hi]).assign(&p[k].weights);
        bv.slice_mut(ndarray::s![..ho]).assign(&p[k].bias);
        for i in 0..n {
            w[(ho + i, hi + i)] = F::one();
        }
        layers.push(AffineLayer::new(w, bv)?);
    }

    // Final stage: A·(carried state + shift) + B·(policy output).
    let hl = p[last].in_dim();
    let mut wl = Array2::zeros((n, hl + n));
    wl.slice_mut(ndarray::s![.., ..hl])
        .assign(&b.dot(&p[last].weights));
    wl.slice_mut(ndarray::s![.., hl..]).assign(a);
    let bl = b.dot(&p[last].bias) + a.dot(&shift);
    layers.push(AffineLayer::new(wl, bl)?);

    Network::new(layers)
}

/// Append one ReLU stage computing the scalar `max(y_a, y_b) − y_ood` on top
/// of `net`'s outputs, using `max(y_a, y_b) = max(y_a − y_b, 0) + y_b` and
/// shift passthroughs for `y_b` and `y_ood`. `lower_shift` must hold interval
/// lower bounds for `(y_b, y_ood)` over the analysis region.
pub fn encode_max_gap<F: Scalar>(
    net: &Network<F>,
    idx_a: usize,
    idx_b: usize,
    idx_ood: usize,
    lower_shift: &Array1<F>,
) -> Result<Network<F>> {
    let m = net.output_dim();
    for &idx in &[idx_a, idx_b, idx_ood] {
        if idx >= m {
            return Err(Error::invalid(format!(
                "output index {idx} out of range for {m} outputs"
            )));
        }
    }
    if idx_a == idx_b || idx_a == idx_ood || idx_b == idx_ood {
        return Err(Error::invalid("max-gap indices must be distinct"));
    }
    if lower_shift.len() != 2 {
        return Err(Error::dim("lower_shift must have length 2"));
    }
    if lower_shift.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("max-gap shift".into()));
    }
    let shift_b = lower_shift[0] - F::of(SHIFT_SLACK);
    let shift_ood = lower_shift[1] - F::of(SHIFT_SLACK);

    // Stage rows over y: [y_a − y_b, y_b − M_b, y_ood − M_o], then ReLU,
    // then 1·r0 + 1·r1 − 1·r2 + (M_b − M_o).
    let mut gap_w = Array2::zeros((3, m));
    gap_w[(0, idx_a)] = F::one();
    gap_w[(0, idx_b)] = -F::one();
    gap_w[(1, idx_b)] = F::one();
    gap_w[(2, idx_ood)] = F::one();
    let gap_b = Array1::from(vec![F::zero(), -shift_b, -shift_ood]);
    let gap_stage = AffineLayer::new(gap_w, gap_b)?;

    let mut read_w = Array2::zeros((1, 3));
    read_w[(0, 0)] = F::one();
    read_w[(0, 1)] = F::one();
    read_w[(0, 2)] = -F::one();
    let read = AffineLayer::new(read_w, Array1::from(vec![shift_b - shift_ood]))?;

    let mut layers = net.layers().to_vec();
    let base_last = layers.pop().unwrap();
    layers.push(fuse_affine(&base_last, &gap_stage)?);
    layers.push(read);
    Network::new(layers)
}

/// Reduce a classifier to the scalar robustness margin
/// `min_{j≠label}(y_label − y_j)` by cascading pairwise-max stages over the
/// rival differences `y_j − y_label` (with shift passthroughs), then
/// negating.
///
/// For three or more outputs, `lower_shift[j]` must lower-bound the
/// difference `y_j − y_label` over the analysis region (interval propagation
/// provides this); the `label` entry is ignored. Two-output networks reduce
/// to a single affine row and ignore `lower_shift` values entirely.
pub fn encode_margin_min<F: Scalar>(
    net: &Network<F>,
    label: usize,
    lower_shift: &Array1<F>,
) -> Result<Network<F>> {
    let m = net.output_dim();
    if label >= m {
        return Err(Error::invalid(format!(
            "label {label} out of range for {m} outputs"
        )));
    }
    if m < 2 {
        return Err(Error::invalid("margin needs at least two outputs"));
    }
    if lower_shift.len() != m {
        return Err(Error::dim("lower_shift length must match outputs"));
    }

    // Margin = y_label − max_{j≠label} y_j. Track the channels
    // [rival_max, remaining rivals..., y_label] as diffs d_j = y_j − y_label;
    // then margin = −max_j d_j, and each pairwise max is one ReLU stage.
    let rivals: Vec<usize> = (0..m).filter(|&j| j != label).collect();
    let mut layers = net.layers().to_vec();

    // Differences stage (pure affine, fused into the base last layer):
    // rows d_j = y_j − y_label for each rival.
    let mut diff_w = Array2::zeros((rivals.len(), m));
    for (r, &j) in rivals.iter().enumerate() {
        diff_w[(r, j)] = F::one();
        diff_w[(r, label)] = -F::one();
    }
    let diff = AffineLayer::new(diff_w, Array1::zeros(rivals.len()))?;
    let base_last = layers.pop().unwrap();
    layers.push(fuse_affine(&base_last, &diff)?);

    if rivals.len() == 1 {
        // margin is already −d; append the negating read-out.
        let mut neg = Array2::zeros((1, 1));
        neg[(0, 0)] = -F::one();
        let read = AffineLayer::new(neg, Array1::zeros(1))?;
        let last = layers.pop().unwrap();
        layers.push(fuse_affine(&last, &read)?);
        return Network::new(layers);
    }

    let mut shifts: Vec<F> = rivals
        .iter()
        .map(|&j| lower_shift[j] - F::of(SHIFT_SLACK))
        .collect();

    // Cascade: current channel 0 holds the running max, channels 1.. hold
    // pending diffs. Each stage folds channel 1 into the running max.
    let mut width = rivals.len();
    while width > 1 {
        // ReLU stage rows over current channels c:
        //   [c0 − c1, c1 − s1, c2 − s2, ..., c_{w−1} − s_{w−1}]
        let mut w = Array2::zeros((width, width));
        let mut bv = Array1::zeros(width);
        w[(0, 0)] = F::one();
        w[(0, 1)] = -F::one();
        for ch in 1..width {
            w[(ch, ch)] = F::one();
            bv[ch] = -shifts[ch];
        }
        let stage = AffineLayer::new(w, bv)?;
        let last = layers.pop().unwrap();
        layers.push(fuse_affine(&last, &stage)?);

        // Affine read-back: new c0 = r0 + r1 + s1 = max(c0, c1); shift the
        // remaining channels back and drop channel 1.
        let mut rb = Array2::zeros((width - 1, width));
        let mut rbb = Array1::zeros(width - 1);
        rb[(0, 0)] = F::one();
        rb[(0, 1)] = F::one();
        rbb[0] = shifts[1];
        for ch in 2..width {
            rb[(ch - 1, ch)] = F::one();
            rbb[ch - 1] = shifts[ch];
        }
        layers.push(AffineLayer::new(rb, rbb)?);

        // Running max of lower bounds is a sound lower bound for the max.
        shifts = {
            let mut next = Vec::with_capacity(width - 1);
            next.push(if shifts[0] > shifts[1] {
                shifts[0]
            } else {
                shifts[1]
            });
            next.extend_from_slice(&shifts[2..]);
            next
        };
        width -= 1;
    }

    // margin = −running_max.
    let mut neg = Array2::zeros((1, 1));
    neg[(0, 0)] = -F::one();
    let read = AffineLayer::new(neg, Array1::zeros(1))?;
    let last = layers.pop().unwrap();
    layers.push(fuse_affine(&last, &read)?);
    Network::new(layers)
}
