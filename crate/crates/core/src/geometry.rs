//! Half-space sets, membership, direction generation, and Monte-Carlo
//! volume / approximation-ratio estimation.

use crate::error::{Error, Result};
use crate::network::{InputBox, Network, OutputSet};
use crate::scalar::Scalar;
use ndarray::Array1;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;

/// Arithmetic slack for membership tests.
const MEMBER_EPS: f64 = 1e-9;

/// A certified half-space `cᵀx ≥ lb`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HalfSpace<F> {
    pub c: Array1<F>,
    pub lb: F,
}

impl<F: Scalar> HalfSpace<F> {
    pub fn new(c: Array1<F>, lb: F) -> Result<Self> {
        if c.iter().all(|v| *v == F::zero()) {
            return Err(Error::invalid("half-space normal is zero"));
        }
        if c.iter().any(|v| !v.is_finite()) || !lb.is_finite() {
            return Err(Error::NonFinite("half-space".into()));
        }
        Ok(Self { c, lb })
    }

    pub fn contains(&self, x: &Array1<F>, tol: F) -> bool {
        self.c.dot(x) >= self.lb - tol
    }
}

/// Union of per-region polytopes: a point is a member if it lies in some
/// leaf's box and satisfies all of that leaf's half-spaces.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolytopeUnion<F> {
    pub leaves: Vec<(InputBox<F>, Vec<HalfSpace<F>>)>,
}

impl<F: Scalar> PolytopeUnion<F> {
    pub fn single(bx: InputBox<F>, halfspaces: Vec<HalfSpace<F>>) -> Self {
        Self {
            leaves: vec![(bx, halfspaces)],
        }
    }

    pub fn contains(&self, x: &Array1<F>) -> bool {
        let tol = F::of(MEMBER_EPS);
        self.leaves.iter().any(|(bx, hs)| {
            bx.contains(x, tol) && hs.iter().all(|h| h.contains(x, tol))
        })
    }
}

/// `k` unit vectors in the plane at equal angular spacing starting at 0.
pub fn gen_directions_2d<F: Scalar>(k: usize) -> Result<Vec<Array1<F>>> {
    if k == 0 {
        return Err(Error::invalid("need at least one direction"));
    }
    Ok((0..k)
        .map(|j| {
            let theta = 2.0 * std::f64::consts::PI * j as f64 / k as f64;
            Array1::from(vec![F::of(theta.cos()), F::of(theta.sin())])
        })
        .collect())
}

/// The `2d` axis-aligned directions `±e_i` (box bounds in every dimension).
pub fn gen_directions_box<F: Scalar>(d: usize) -> Result<Vec<Array1<F>>> {
    if d == 0 {
        return Err(Error::invalid("dimension must be at least 1"));
    }
    let mut dirs = Vec::with_capacity(2 * d);
    for i in 0..d {
        let mut plus = Array1::zeros(d);
        plus[i] = F::one();
        let mut minus = Array1::zeros(d);
        minus[i] = -F::one();
        dirs.push(plus);
        dirs.push(minus);
    }
    Ok(dirs)
}

/// Outcome of the Monte-Carlo approximation-ratio estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum RatioEstimate {
    Ratio {
        /// vol(S_over) / vol(preimage), both as box-sample fractions.
        ratio: f64,
        contained: usize,
        feasible: usize,
        samples: usize,
        seed: u64,
    },
    /// No sampled input satisfied the output set.
    EmpiricallyEmptyPreimage { samples: usize, seed: u64 },
}

/// Estimate vol(set)/vol(preimage) with `n` uniform box samples. The same
/// sample set feeds numerator and denominator so sampler variance cancels.
/// Also verifies soundness pointwise: any feasible sample outside the set is
/// reported in the returned violation count.
pub fn approx_ratio<F: Scalar>(
    set: &PolytopeUnion<F>,
    net: &Network<F>,
    out_set: &OutputSet<F>,
    bx: &InputBox<F>,
    n: usize,
    seed: u64,
) -> Result<(RatioEstimate, usize)> {
    if n == 0 {
        return Err(Error::invalid("need at least one sample"));
    }
    if bx.dim() != net.input_dim() {
        return Err(Error::dim("box dim != network input dim"));
    }
    let tol = F::of(MEMBER_EPS);
    let dim = bx.dim();
    let shard = 65_536usize;
    let shards: Vec<(u64, usize)> = (0..n.div_ceil(shard))
        .map(|s| (s as u64, shard.min(n - s * shard)))
        .collect();
    let (contained, feasible, violations) = shards
        .par_iter()
        .map(|&(s, count)| {
            let mut rng =
                ChaCha8Rng::seed_from_u64(seed ^ (0x9e37_79b9_7f4a_7c15u64.wrapping_mul(s + 1)));
            let mut contained = 0usize;
            let mut feasible = 0usize;
            let mut violations = 0usize;
            for _ in 0..count {
                let x = Array1::from_shape_fn(dim, |j| {
                    let u: f64 = rng.random();
                    bx.lo[j] + (bx.hi[j] - bx.lo[j]) * F::of(u)
                });
                let inside = set.contains(&x);
                if inside {
                    contained += 1;
                }
                let y = net.forward(&x).expect("dims fixed");
                if out_set.contains(&y, tol) {
                    feasible += 1;
                    if !inside {
                        violations += 1;
                    }
                }
            }
            (contained, feasible, violations)
        })
        .reduce(|| (0, 0, 0), |a, b| (a.0 + b.0, a.1 + b.1, a.2 + b.2));

    let estimate = if feasible == 0 {
        RatioEstimate::EmpiricallyEmptyPreimage { samples: n, seed }
    } else {
        RatioEstimate::Ratio {
            ratio: contained as f64 / feasible as f64,
            contained,
            feasible,
            samples: n,
            seed,
        }
    };
    Ok((estimate, violations))
}

// ----------------------------------------------------------------------------
// 2D polygon extraction and emitters
// ----------------------------------------------------------------------------

/// Clip a leaf's box against its half-spaces, returning the polygon boundary
/// (counter-clockwise) or `None` when the region is empty. 2D only.
pub fn leaf_polygon<F: Scalar>(bx: &InputBox<F>, halfspaces: &[HalfSpace<F>]) -> Option<Vec<(f64, f64)>> {
    assert_eq!(bx.dim(), 2, "polygon extraction is 2D only");
    let f = |v: F| v.to_f64().unwrap();
    let mut poly: Vec<(f64, f64)> = vec![
        (f(bx.lo[0]), f(bx.lo[1])),
        (f(bx.hi[0]), f(bx.lo[1])),
        (f(bx.hi[0]), f(bx.hi[1])),
        (f(bx.lo[0]), f(bx.hi[1])),
    ];
    for h in halfspaces {
        let (a, b) = (f(h.c[0]), f(h.c[1]));
        let lb = f(h.lb);
        // Keep side a·x + b·y ≥ lb (Sutherland–Hodgman).
        let mut next = Vec::with_capacity(poly.len() + 4);
        for i in 0..poly.len() {
            let p = poly[i];
            let q = poly[(i + 1) % poly.len()];
            let fp = a * p.0 + b * p.1 - lb;
            let fq = a * q.0 + b * q.1 - lb;
            if fp >= 0.0 {
                next.push(p);
            }
            if (fp > 0.0 && fq < 0.0) || (fp < 0.0 && fq > 0.0) {
                let t = fp / (fp - fq);
                next.push((p.0 + t * (q.0 - p.0), p.1 + t * (q.1 - p.1)));
            }
        }
        poly = next;
        if poly.is_empty() {
            return None;
        }
    }
    Some(poly)
}

/// Scene description for the 2D SVG emitter.
pub struct SvgScene<'a, F> {
    /// Drawing frame (usually the analysis box).
    pub frame: &'a InputBox<F>,
    /// Sampled preimage points (drawn as dots; subsampled if large).
    pub samples: &'a [Array1<F>],
    /// The certified union (leaf polygons drawn as outlines).
    pub union: &'a PolytopeUnion<F>,
    /// Optional obstacle / target box to overlay.
    pub obstacle: Option<(&'a Array1<F>, &'a Array1<F>)>,
}

/// Render a Figure-style panel: preimage samples, polytope boundaries, and
/// the obstacle box. Pure text output; no plotting dependencies.
pub fn render_svg<F: Scalar>(scene: &SvgScene<'_, F>) -> String {
    let f = |v: F| v.to_f64().unwrap();
    let (x0, x1) = (f(scene.frame.lo[0]), f(scene.frame.hi[0]));
    let (y0, y1) = (f(scene.frame.lo[1]), f(scene.frame.hi[1]));
    let w = 640.0;
    let h = 640.0;
    let pad = 40.0;
    let sx = (w - 2.0 * pad) / (x1 - x0);
    let sy = (h - 2.0 * pad) / (y1 - y0);
    let tx = |x: f64| pad + (x - x0) * sx;
    let ty = |y: f64| h - pad - (y - y0) * sy;

    let mut out = String::new();
    out.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n"
    ));
    out.push_str(&format!(
        "  <rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"white\" stroke=\"black\"/>\n",
        pad,
        pad,
        w - 2.0 * pad,
        h - 2.0 * pad
    ));

    // Samples (green), capped to keep files small.
    let cap = 4000;
    let step = (scene.samples.len() / cap).max(1);
    for x in scene.samples.iter().step_by(step) {
        out.push_str(&format!(
            "  <circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"1.2\" fill=\"#2a9d2a\" fill-opacity=\"0.5\"/>\n",
            tx(f(x[0])),
            ty(f(x[1]))
        ));
    }

    // Obstacle (red).
    if let Some((lo, hi)) = scene.obstacle {
        let (ox0, ox1) = (f(lo[0]), f(hi[0]));
        let (oy0, oy1) = (f(lo[1]), f(hi[1]));
        out.push_str(&format!(
            "  <rect x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"#d62728\" fill-opacity=\"0.35\" stroke=\"#d62728\"/>\n",
            tx(ox0),
            ty(oy1),
            (ox1 - ox0) * sx,
            (oy1 - oy0) * sy
        ));
    }

    // Leaf polygons (blue outlines).
    for (bx, hs) in &scene.union.leaves {
        if let Some(poly) = leaf_polygon(bx, hs) {
            let pts: Vec<String> = poly
                .iter()
                .map(|(x, y)| format!("{:.2},{:.2}", tx(*x), ty(*y)))
                .collect();
            out.push_str(&format!(
                "  <polygon points=\"{}\" fill=\"#1f77b4\" fill-opacity=\"0.12\" stroke=\"#1f77b4\" stroke-width=\"1.5\"/>\n",
                pts.join(" ")
            ));
        }
    }

    out.push_str("</svg>\n");
    out
}

/// Write all half-spaces of a union as CSV rows `c_1,...,c_d,lb`.
pub fn write_halfspace_csv<F: Scalar, W: Write>(union: &PolytopeUnion<F>, mut w: W) -> std::io::Result<()> {
    let d = union
        .leaves
        .first()
        .map(|(bx, _)| bx.dim())
        .unwrap_or(0);
    let header: Vec<String> = (1..=d).map(|i| format!("c_{i}")).collect();
    writeln!(w, "{},lb", header.join(","))?;
    for (_, hs) in &union.leaves {
        for h in hs {
            let coeffs: Vec<String> = h.c.iter().map(|v| format!("{}", v)).collect();
            writeln!(w, "{},{}", coeffs.join(","), h.lb)?;
        }
    }
    Ok(())
}
