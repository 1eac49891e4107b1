"""Generate the synthetic LFP-like stand-in shipped in this directory.

The files mimic the shape of discharge-capacity-difference curves
(cycle 100 minus cycle 10) on a 1000-point voltage grid from 3.5 V down to
2.0 V, with a log cycle life that depends linearly on the curve amplitude.
They are not measurements. Split sizes and low/high cycle-life counts
(threshold 1200 cycles) follow the published train / primary test /
secondary test partition: 41 (39/2), 42 (39/3), 40 (34/6).

Usage: python3 make_lfp_standin.py [output_dir]
"""

import csv
import sys
from pathlib import Path

import numpy as np

P = 1000
SEED = 20190325
SPLITS = [("train", 39, 2), ("test1", 39, 3), ("test2", 34, 6)]


def sigmoid(z):
    return 1.0 / (1.0 + np.exp(-z))


def shapes(v):
    """Basis curves: a plateau step, two bumps on the plateaus, a slow tail."""
    step = sigmoid((3.28 - v) / 0.035)
    bump1 = np.exp(-0.5 * ((v - 3.18) / 0.04) ** 2)
    bump2 = np.exp(-0.5 * ((v - 3.02) / 0.07) ** 2)
    tail = (3.5 - v) / 1.5
    return step, bump1, bump2, tail


def cycle_lives(rng, low, high):
    lo = np.exp(rng.uniform(np.log(350), np.log(1190), low))
    hi = np.exp(rng.uniform(np.log(1250), np.log(2200), high))
    life = np.concatenate([lo, hi])
    return np.round(rng.permutation(life))


def curves(rng, v, life):
    step, bump1, bump2, tail = shapes(v)
    n = life.size
    # Larger capacity fade between the two cycles means a shorter life.
    amp = 0.012 * (life / 1000.0) ** -1.3 * np.exp(0.08 * rng.standard_normal(n))
    w1 = 0.6 + 0.15 * rng.standard_normal(n)
    w2 = 0.4 + 0.10 * rng.standard_normal(n)
    wt = 0.002 * rng.standard_normal(n)
    x = -(amp[:, None] * (step + w1[:, None] * bump1 + w2[:, None] * bump2)) + wt[:, None] * tail
    # Noise is strongest where the signal is weakest (above 3.2 V).
    scale = 2e-5 * (1.0 + 4.0 * sigmoid((v - 3.25) / 0.03))
    x += scale * rng.standard_normal((n, P))
    return x


def write_split(out, name, ids, v, x, life):
    with open(out / f"lfp_{name}_x.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["sample_id"] + [f"v{j}" for j in range(P)])
        w.writerow(["domain"] + [repr(float(t)) for t in v])
        for i, cell in enumerate(ids):
            w.writerow([cell] + [repr(float(t)) for t in np.round(x[i], 8)])
    with open(out / f"lfp_{name}_cycles.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["sample_id", "cycle_life"])
        for cell, life_i in zip(ids, life):
            w.writerow([cell, repr(float(life_i))])


def main():
    out = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(__file__).parent
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(SEED)
    v = np.round(np.linspace(3.5, 2.0, P), 10)
    for name, low, high in SPLITS:
        life = cycle_lives(rng, low, high)
        ids = [f"{name}-{i:02d}" for i in range(life.size)]
        write_split(out, name, ids, v, curves(rng, v, life), life)


if __name__ == "__main__":
    main()
