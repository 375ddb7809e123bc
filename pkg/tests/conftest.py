import numpy as np
import pytest

from vexplain import Layer, Network


def forward_oracle(network, x):
    """Independent straight-line evaluation of the layer chain, used as the
    reference for infer and for bound soundness checks."""
    v = np.array(x, dtype=np.float64)
    for layer in network.layers:
        if layer.kind == "dense":
            out = np.zeros(layer.weights.shape[0])
            for r in range(layer.weights.shape[0]):
                acc = layer.bias[r]
                for cidx in range(layer.weights.shape[1]):
                    acc += layer.weights[r, cidx] * v[cidx]
                out[r] = acc
            v = out
        else:
            v = np.array([max(u, 0.0) for u in v])
    return v


def forward_batch_oracle(network, points):
    """Vectorized reference forward pass for sampling-based bound checks."""
    v = np.asarray(points, dtype=np.float64)
    for layer in network.layers:
        if layer.kind == "dense":
            v = v @ layer.weights.T + layer.bias
        else:
            v = np.maximum(v, 0.0)
    return v


def random_network(rng, m=None, n=None, max_hidden_layers=2, max_units=8,
                   weight_scale=1.0, input_bounds=None):
    """Small random dense/relu classifier for property tests."""
    m = m if m is not None else int(rng.integers(1, 17))
    n = n if n is not None else int(rng.integers(2, 5))
    depth = int(rng.integers(0, max_hidden_layers + 1))
    widths = [m] + [int(rng.integers(1, max_units + 1)) for _ in range(depth)] + [n]
    layers = []
    for k in range(len(widths) - 1):
        w = rng.normal(0, weight_scale / np.sqrt(widths[k]), size=(widths[k + 1], widths[k]))
        b = rng.normal(0, 0.1, size=widths[k + 1])
        layers.append(Layer.dense(w, b))
        if k < len(widths) - 2:
            layers.append(Layer.relu())
    return Network(
        name="random",
        input_dim=m,
        labels=tuple(f"c{i}" for i in range(n)),
        layers=tuple(layers),
        input_bounds=input_bounds,
    )


def counterexample_attack(network, lo, hi, c, j, rng, samples=10_000, sweeps=30):
    """Independent adversarial search for y_j > y_c over a box: dense uniform
    sampling followed by coordinate ascent from the best candidates. Returns
    a violating point or None."""
    def gap(points):
        ys = forward_batch_oracle(network, points)
        return ys[:, j] - ys[:, c]

    pts = rng.uniform(lo, hi, size=(samples, len(lo)))
    pts = np.vstack([pts, lo[None, :], hi[None, :], (lo + hi)[None, :] / 2.0])
    gaps = gap(pts)
    if gaps.max() > 0:
        return pts[int(np.argmax(gaps))]
    order = np.argsort(-gaps)[:5]
    for start in pts[order]:
        point = start.copy()
        best = float(gap(point[None, :])[0])
        for _ in range(sweeps):
            improved = False
            for col in range(len(lo)):
                if lo[col] == hi[col]:
                    continue
                cand = np.tile(point, (4, 1))
                cand[0, col] = lo[col]
                cand[1, col] = hi[col]
                cand[2, col] = (lo[col] + hi[col]) / 2.0
                cand[3, col] = rng.uniform(lo[col], hi[col])
                vals = gap(cand)
                k = int(np.argmax(vals))
                if vals[k] > best:
                    best = float(vals[k])
                    point = cand[k]
                    improved = True
            if best > 0:
                return point
            if not improved:
                break
    return None


@pytest.fixture
def sign_network():
    """One feature, logits (x, -x): prediction flips with the sign of x."""
    return Network(
        name="sign",
        input_dim=1,
        labels=("pos", "neg"),
        layers=(Layer.dense([[1.0], [-1.0]], [0.0, 0.0]),),
    )


@pytest.fixture
def identity3_network():
    """Two features, logits (x1, x2, 0)."""
    return Network(
        name="id3",
        input_dim=2,
        labels=("a", "b", "c"),
        layers=(Layer.dense([[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]], [0.0, 0.0, 0.0]),),
    )


@pytest.fixture
def relu_gap_network():
    """Logit gap y1 - y0 = 2*relu(x) - relu(2x) - 0.1, identically -0.1:
    interval and linear relaxations both leave positive slack at the root,
    so it needs splitting (or budget) to resolve."""
    return Network(
        name="gap",
        input_dim=1,
        labels=("a", "b"),
        layers=(
            Layer.dense([[1.0], [2.0]], [0.0, 0.0]),
            Layer.relu(),
            Layer.dense([[0.0, 0.0], [2.0, -1.0]], [0.1, 0.0]),
        ),
    )
