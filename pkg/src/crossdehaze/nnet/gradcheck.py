"""Finite-difference verification of the analytic gradients."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..rng import Rng
from . import autograd as ag
from .model import DehazeUNet, NetConfig


@dataclass
class GradCheckReport:
    max_rel_err: float
    max_param_err: float
    max_input_err: float
    worst: str
    n_params: int
    n_inputs: int

    def passed(self, tol):
        return self.max_rel_err < tol


def rel_err(analytic, numeric, floor):
    return np.abs(analytic - numeric) / np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)


def _probe_loss(net, x, probe):
    return float(np.sum(net(ag.Tensor(x)).data * probe))


def grad_check(net, x, epsilon=1e-5, n_params=200, seed=0, floor_scale=1e-5):
    """Compare tape gradients of ``sum(net(x) * R)`` with central differences.

    ``R`` is a fixed random probe. Every input pixel and ``n_params`` sampled
    parameter coordinates are checked. For float32 networks the numerical
    side runs on a float64 copy so it is not swamped by rounding.

    The relative error of a coordinate is taken against
    ``max(|analytic|, |numeric|, floor_scale * max|gradient|)`` so that
    near-zero coordinates are judged on the gradient's overall scale.
    """
    rng = Rng(seed, ("gradcheck",))
    x = np.asarray(x)
    if x.ndim == 3:
        x = x[None]
    probe = rng.normal(size=x.shape)

    xt = ag.Tensor(x.astype(net.dtype), requires_grad=True)
    net.zero_grad()
    with ag.Tape() as tape:
        loss = ag.sum_(net(xt) * probe.astype(net.dtype))
        tape.backward(loss)
    analytic_params = {name: p.grad.copy() for name, p in net.named_parameters()}
    analytic_input = xt.grad.astype(np.float64)
    net.zero_grad()
    scale = max(float(np.abs(analytic_input).max()), max(float(np.abs(g).max()) for g in analytic_params.values()))
    floor = max(floor_scale * scale, 1e-12)

    ref = net
    if net.dtype != np.float64:
        ref = DehazeUNet(net.config)
        for (_, dst), (_, src) in zip(ref.named_parameters(), net.named_parameters()):
            dst.data = src.data.astype(np.float64)
        ref.config = NetConfig(**{**ref.config.__dict__, "dtype": "float64"})
    x64 = x.astype(np.float64)

    numeric_input = np.zeros_like(x64)
    flat = x64.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + epsilon
        fp = _probe_loss(ref, x64, probe)
        flat[i] = old - epsilon
        fm = _probe_loss(ref, x64, probe)
        flat[i] = old
        numeric_input.reshape(-1)[i] = (fp - fm) / (2 * epsilon)

    params = list(ref.named_parameters())
    sizes = np.array([p.size for _, p in params])
    total = int(sizes.sum())
    picks = np.sort(rng.choice(total, size=min(n_params, total), replace=False))
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    worst, worst_err = "", -1.0
    param_errs = []
    for flat_idx in picks:
        k = int(np.searchsorted(offsets, flat_idx, side="right") - 1)
        name, p = params[k]
        j = int(flat_idx - offsets[k])
        view = p.data.reshape(-1)
        old = view[j]
        view[j] = old + epsilon
        fp = _probe_loss(ref, x64, probe)
        view[j] = old - epsilon
        fm = _probe_loss(ref, x64, probe)
        view[j] = old
        num = (fp - fm) / (2 * epsilon)
        ana = float(analytic_params[name].reshape(-1)[j])
        e = float(rel_err(ana, num, floor))
        param_errs.append(e)
        if e > worst_err:
            worst, worst_err = f"{name}[{j}]", e

    input_errs = rel_err(analytic_input, numeric_input, floor)
    max_in = float(input_errs.max())
    max_p = max(param_errs) if param_errs else 0.0
    if max_in > worst_err:
        worst = f"input[{int(input_errs.argmax())}]"
    return GradCheckReport(max(max_in, max_p), max_p, max_in, worst, len(picks), flat.size)


def desk_gradcheck(seed=1, bits=64, size=8, n_params=200):
    """Randomly initialised desk network on a ``size`` x ``size`` input."""
    dtype = "float64" if bits == 64 else "float32"
    net = DehazeUNet(NetConfig(seed=seed, zero_residual=False, dtype=dtype))
    x = Rng(seed, ("gradcheck-input",)).uniform(0.0, 1.0, size=(1, 3, size, size))
    eps = 1e-5 if bits == 64 else 1e-4
    return grad_check(net, x, epsilon=eps, n_params=n_params, seed=seed)
