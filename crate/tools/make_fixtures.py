#!/usr/bin/env python3
"""Regenerate the bundled network fixtures.

Trains two tiny ReLU networks with fixed seeds and writes them, together
with their dynamics/region files, into crates/cli/fixtures/:

- double_integrator/: a 2-10-5-1 policy behavior-cloned from a saturated
  linear state-feedback controller, plus dynamics, obstacle, and analysis
  box. After the closed-loop encoding this yields the familiar 12-7-2
  step network.
- ood/: a 2-16-16-3 classifier trained on two in-distribution clusters and
  an out-of-distribution rejection class, plus its analysis box.

Also prints the sampled per-step preimage hulls used to size the analysis
box, and asserts every preimage stays populated and inside the box.
"""

import json
import pathlib

import numpy as np
import torch
import torch.nn as nn

ROOT = pathlib.Path(__file__).resolve().parent.parent
FIXTURES = ROOT / "crates" / "cli" / "fixtures"

A = np.array([[1.0, 1.0], [0.0, 1.0]])
B = np.array([[0.5], [1.0]])
K = np.array([0.06, 0.40])
U_MAX = 1.0

OBSTACLE_LO = np.array([4.5, -0.25])
OBSTACLE_HI = np.array([5.0, 0.25])


def target_controller(x: np.ndarray) -> np.ndarray:
    return np.clip(-(x @ K), -U_MAX, U_MAX)


def net_to_json(model: nn.Sequential) -> dict:
    layers = []
    for mod in model:
        if isinstance(mod, nn.Linear):
            layers.append(
                {
                    "weights": [[float(v) for v in row] for row in mod.weight.detach().numpy()],
                    "bias": [float(v) for v in mod.bias.detach().numpy()],
                }
            )
    return {"layers": layers}


def forward_np(net_json: dict, x: np.ndarray) -> np.ndarray:
    cur = x
    layers = net_json["layers"]
    for i, layer in enumerate(layers):
        w = np.array(layer["weights"])
        b = np.array(layer["bias"])
        cur = cur @ w.T + b
        if i + 1 < len(layers):
            cur = np.maximum(cur, 0.0)
    return cur


def train_policy() -> dict:
    torch.manual_seed(0)
    model = nn.Sequential(
        nn.Linear(2, 10), nn.ReLU(), nn.Linear(10, 5), nn.ReLU(), nn.Linear(5, 1)
    )
    opt = torch.optim.Adam(model.parameters(), lr=2e-3)
    rng = np.random.default_rng(0)
    for step in range(4000):
        x = rng.uniform(-22.0, 22.0, size=(2048, 2))
        u = target_controller(x)
        xt = torch.tensor(x, dtype=torch.float32)
        ut = torch.tensor(u, dtype=torch.float32).unsqueeze(1)
        loss = nn.functional.mse_loss(model(xt), ut)
        opt.zero_grad()
        loss.backward()
        opt.step()
        if step % 1000 == 0:
            print(f"policy step {step}: mse {loss.item():.5f}")
    print(f"policy final mse {loss.item():.5f}")
    return net_to_json(model)


def step_states(policy: dict, x: np.ndarray) -> np.ndarray:
    u = forward_np(policy, x)
    return x @ A.T + u @ B.T


def choose_box(policy: dict, steps: int = 10) -> tuple[np.ndarray, np.ndarray]:
    """Sample per-step preimages of the obstacle and report their hull."""
    rng = np.random.default_rng(7)
    lo = np.array([-50.0, -5.0])
    hi = np.array([10.0, 14.0])
    n = 6_000_000
    x = rng.uniform(lo, hi, size=(n, 2))
    cur = x.copy()
    hull_lo = np.full(2, np.inf)
    hull_hi = np.full(2, -np.inf)
    for t in range(1, steps + 1):
        cur = step_states(policy, cur)
        hit = np.all((cur >= OBSTACLE_LO) & (cur <= OBSTACLE_HI), axis=1)
        count = int(hit.sum())
        if count == 0:
            raise SystemExit(f"step {t}: empty sampled preimage, adjust the setup")
        pts = x[hit]
        plo, phi = pts.min(axis=0), pts.max(axis=0)
        hull_lo = np.minimum(hull_lo, plo)
        hull_hi = np.maximum(hull_hi, phi)
        frac = count / n
        print(
            f"t={t:2d}: {count:7d} hits ({frac:.2e}) hull "
            f"[{plo[0]:7.2f},{phi[0]:7.2f}] x [{plo[1]:7.2f},{phi[1]:7.2f}]"
        )
    pad = 0.15 * (hull_hi - hull_lo)
    return hull_lo - pad, hull_hi + pad


def train_ood() -> dict:
    torch.manual_seed(1)
    rng = np.random.default_rng(1)
    centers = np.array([[-2.0, 0.0], [2.0, 0.0]])

    def batch(n):
        xin = []
        yin = []
        for label, c in enumerate(centers):
            pts = rng.normal(c, 0.6, size=(n, 2))
            xin.append(pts)
            yin.append(np.full(n, label))
        # OOD: uniform points rejected near either cluster.
        ood = []
        while len(ood) < 2 * n:
            cand = rng.uniform(-6.0, 6.0, size=(4 * n, 2))
            d = np.minimum(
                np.linalg.norm(cand - centers[0], axis=1),
                np.linalg.norm(cand - centers[1], axis=1),
            )
            ood.extend(cand[d > 1.8][: 2 * n - len(ood)])
        xin.append(np.array(ood))
        yin.append(np.full(len(ood), 2))
        x = np.concatenate(xin)
        y = np.concatenate(yin)
        return torch.tensor(x, dtype=torch.float32), torch.tensor(y, dtype=torch.long)

    model = nn.Sequential(
        nn.Linear(2, 16), nn.ReLU(), nn.Linear(16, 16), nn.ReLU(), nn.Linear(16, 3)
    )
    opt = torch.optim.Adam(model.parameters(), lr=3e-3)
    for step in range(3000):
        x, y = batch(512)
        loss = nn.functional.cross_entropy(model(x), y)
        opt.zero_grad()
        loss.backward()
        opt.step()
        if step % 1000 == 0:
            print(f"ood step {step}: ce {loss.item():.4f}")
    print(f"ood final ce {loss.item():.4f}")
    net = net_to_json(model)

    # Report the size of the confident-ID region max(y0,y1) >= y2.
    rng2 = np.random.default_rng(2)
    xs = rng2.uniform(-6, 6, size=(1_000_000, 2))
    ys = forward_np(net, xs)
    frac = float(np.mean(np.maximum(ys[:, 0], ys[:, 1]) >= ys[:, 2]))
    print(f"ood: ID-confident fraction over box {frac:.3f}")
    assert 0.02 < frac < 0.6, "ID region should be a small nonempty part of the box"
    return net


def write_json(path: pathlib.Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=1) + "\n")
    print(f"wrote {path.relative_to(ROOT)}")


def main() -> None:
    policy = train_policy()
    box_lo, box_hi = choose_box(policy)
    print(f"analysis box [{box_lo[0]:.2f},{box_hi[0]:.2f}] x [{box_lo[1]:.2f},{box_hi[1]:.2f}]")
    di = FIXTURES / "double_integrator"
    write_json(di / "policy.json", policy)
    write_json(
        di / "dynamics.json",
        {"A": [[1.0, 1.0], [0.0, 1.0]], "B": [[0.5], [1.0]]},
    )
    write_json(di / "obstacle.json", {"lo": list(OBSTACLE_LO), "hi": list(OBSTACLE_HI)})
    write_json(
        di / "box.json",
        {"lo": [round(float(v), 2) for v in box_lo], "hi": [round(float(v), 2) for v in box_hi]},
    )

    ood = train_ood()
    write_json(FIXTURES / "ood" / "net.json", ood)
    write_json(FIXTURES / "ood" / "box.json", {"lo": [-6.0, -6.0], "hi": [6.0, 6.0]})


if __name__ == "__main__":
    main()
