"""Small fixtures shared by several test modules."""

import numpy as np

from sofd import graph as G
from sofd.nnet import GcnModel


def path_basis(m=3, order=2):
    w = np.zeros((m, m))
    for i in range(m - 1):
        w[i, i + 1] = w[i + 1, i] = 1.0
    return G.LaplacianBundle.from_graph(G.SensorGraph(w, 10.0, 0.5)).basis(order)


def small_model(seed=0, m=3, conv=(4, 3), fc=(5, 3), order=2, bias_scale=0.1):
    """Tiny model with nonzero biases so ReLUs switch on and off."""
    model = GcnModel(path_basis(m, order), conv, fc, seed=seed)
    rng = np.random.default_rng(seed + 1000)
    for k, v in model.params.items():
        if k.endswith("bias"):
            model.params[k] = rng.normal(scale=bias_scale, size=v.shape)
    return model


def fd_check(model, x, y, h=1e-6):
    """Worst relative error between analytic and central-difference gradients."""
    from oracles import numeric_grad
    from sofd.nnet import ce_loss

    _, grads = model.loss_and_grads(x, y)
    worst = 0.0
    for name, p in model.params.items():
        num = numeric_grad(lambda: ce_loss(model.forward(x).probs, y), p, h)
        scale = max(np.abs(num).max(), np.abs(grads[name]).max(), 1e-8)
        worst = max(worst, float(np.abs(num - grads[name]).max() / scale))
    return worst


ROOT = __import__("pathlib").Path(__file__).resolve().parents[1]
SYNTHETIC_TOML = ROOT / "configs" / "synthetic.toml"

QUICK = [
    "dataset.per_class=120",
    "model.conv_widths=[4, 4]",
    'model.fc_hidden={default=[16, 8]}',
    "train_m0.epochs=4",
    "train_m1.epochs=4",
    "train_m0.lr=1e-2",
    "train_m1.lr=1e-2",
]


def quick_config(output_dir, *extra):
    """Small synthetic config that runs the whole pipeline in well under a second."""
    from sofd.config import load_config

    return load_config(SYNTHETIC_TOML, QUICK + [f'output_dir="{output_dir}"', *extra])


def kink_free_batch(model, rng, n, margin=1e-3, max_draws=1000):
    """Draw an input batch whose ReLU pre-activations all sit at least ``margin`` from zero.

    Central differences only approximate the derivative where the loss is
    smooth over the whole step, so a batch that straddles a ReLU kink tests
    the oracle rather than the gradient.
    """
    for _ in range(max_draws):
        x = rng.normal(size=(n, model.m))
        tr = model.forward(x)
        hidden = tr.conv_pre + tr.fc_pre[:-1]
        if min(float(np.abs(p).min()) for p in hidden) > margin:
            return x
    raise RuntimeError("no kink-free batch found")
