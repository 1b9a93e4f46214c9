"""Finite-difference gradient suite over every primitive op and the full model.

Each primitive is probed at random points: the scalar objective is a fixed
random weighting of the op output, so non-uniform output gradients reach every
backward rule. The full-model check samples a few coordinates per trainable
parameter against the batch training loss.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .data import SignalMode, gen_synthetic, synth_spec_for
from .model import build_model, preset
from .rng import SplitMix64, derive_seed
from .tensor import GradCheckReport, Tensor, grad_check
from .training import grad_check_model

PRIMITIVE_TOL = 1e-4


def _t(stream: SplitMix64, shape: tuple[int, ...], requires_grad: bool = True,
       scale: float = 1.0, shift: float = 0.0) -> Tensor:
    n = int(np.prod(shape)) if shape else 1
    data = (stream.normal(n).reshape(shape) * scale + shift) if shape else \
        np.asarray(stream.normal(1)[0] * scale + shift)
    return Tensor(data, requires_grad=requires_grad)


def _weighted_sum(out: Tensor, stream: SplitMix64) -> Tensor:
    w = Tensor(stream.normal(out.size).reshape(out.shape))
    return T.tensor_sum(T.mul(out, w))


def primitive_cases(seed: int = 0):
    """Yield (name, f, x) triples: f is scalar-valued in the probed tensor x."""

    def stream(tag: str) -> SplitMix64:
        return SplitMix64(derive_seed(seed, "case", tag))

    s = stream("add")
    b = _t(s, (3, 4), requires_grad=False)
    x = _t(s, (3, 4))
    yield "add", (lambda t, _b=b, _s=s: _weighted_sum(T.add(t, _b), stream("add.w"))), x

    s = stream("add_broadcast")
    b = _t(s, (4,), requires_grad=False)
    yield "add_broadcast", (lambda t, _b=b: _weighted_sum(T.add(t, _b), stream("ab.w"))), _t(s, (3, 4))

    s = stream("mul")
    b = _t(s, (3, 4), requires_grad=False)
    yield "mul", (lambda t, _b=b: _weighted_sum(T.mul(t, _b), stream("mul.w"))), _t(s, (3, 4))

    s = stream("div")
    b = _t(s, (3, 4), requires_grad=False, scale=0.5, shift=2.0)
    yield "div", (lambda t, _b=b: _weighted_sum(T.div(t, _b), stream("div.w"))), _t(s, (3, 4))
    yield "div_denom", (lambda t, _n=_t(s, (3, 4), requires_grad=False):
                        _weighted_sum(T.div(_n, t), stream("divd.w"))), \
        _t(s, (3, 4), scale=0.5, shift=2.0)

    s = stream("matmul")
    b = _t(s, (4, 5), requires_grad=False)
    yield "matmul_lhs", (lambda t, _b=b: _weighted_sum(T.matmul(t, _b), stream("mm.w"))), _t(s, (3, 4))
    a = _t(s, (3, 4), requires_grad=False)
    yield "matmul_rhs", (lambda t, _a=a: _weighted_sum(T.matmul(_a, t), stream("mm2.w"))), _t(s, (4, 5))
    yield "matmul_batched", (lambda t, _b=_t(s, (2, 4, 3), requires_grad=False):
                             _weighted_sum(T.matmul(t, _b), stream("mmb.w"))), _t(s, (2, 3, 4))

    s = stream("permute")
    yield "permute", (lambda t: _weighted_sum(T.permute(t, (2, 0, 1)), stream("pm.w"))), _t(s, (2, 3, 4))

    s = stream("reshape")
    yield "reshape", (lambda t: _weighted_sum(T.reshape(t, (4, 3)), stream("rs.w"))), _t(s, (3, 4))

    s = stream("concat")
    b = _t(s, (2, 4), requires_grad=False)
    yield "concat", (lambda t, _b=b: _weighted_sum(T.concat([t, _b], axis=0),
                                                   stream("cc.w"))), _t(s, (3, 4))

    s = stream("narrow")
    yield "narrow", (lambda t: _weighted_sum(T.narrow(t, 1, 1, 2), stream("nr.w"))), _t(s, (3, 4))

    s = stream("sum")
    yield "sum_all", (lambda t: T.tensor_sum(T.mul(t, t))), _t(s, (3, 4))
    yield "sum_axis", (lambda t: _weighted_sum(T.tensor_sum(t, axis=1), stream("sa.w"))), _t(s, (3, 4))

    s = stream("clamp")
    yield "clamp_min", (lambda t: _weighted_sum(T.clamp_min(t, 0.1), stream("cl.w"))), \
        _t(s, (3, 4), shift=1.0)

    s = stream("pow")
    yield "pow", (lambda t: _weighted_sum(T.pow_scalar(t, 2.0), stream("pw.w"))), _t(s, (3, 4))

    s = stream("exp")
    yield "exp", (lambda t: _weighted_sum(T.exp(t), stream("ex.w"))), _t(s, (3, 4), scale=0.5)

    s = stream("log")
    yield "log", (lambda t: _weighted_sum(T.log(t), stream("lg.w"))), \
        _t(s, (3, 4), scale=0.25, shift=2.0)

    s = stream("sigmoid")
    yield "sigmoid", (lambda t: _weighted_sum(T.sigmoid(t), stream("sg.w"))), _t(s, (3, 4))

    s = stream("relu")
    yield "relu", (lambda t: _weighted_sum(T.relu(t), stream("rl.w"))), \
        _t(s, (3, 4), shift=0.7)

    s = stream("gelu")
    yield "gelu", (lambda t: _weighted_sum(T.gelu(t), stream("gl.w"))), _t(s, (3, 4))

    s = stream("softmax")
    yield "softmax", (lambda t: _weighted_sum(T.softmax(t), stream("sm.w"))), _t(s, (3, 5))

    s = stream("layer_norm")
    gamma = _t(s, (6,), requires_grad=False, shift=1.0, scale=0.2)
    beta = _t(s, (6,), requires_grad=False, scale=0.2)
    yield "layer_norm_x", (lambda t, _g=gamma, _b=beta:
                           _weighted_sum(T.layer_norm(t, _g, _b), stream("ln.w"))), _t(s, (4, 6))
    x = _t(s, (4, 6), requires_grad=False)
    yield "layer_norm_gamma", (lambda t, _x=x, _b=beta:
                               _weighted_sum(T.layer_norm(_x, t, _b), stream("lng.w"))), \
        _t(s, (6,), shift=1.0, scale=0.2)
    yield "layer_norm_beta", (lambda t, _x=x, _g=gamma:
                              _weighted_sum(T.layer_norm(_x, _g, t), stream("lnb.w"))), \
        _t(s, (6,), scale=0.2)

    s = stream("conv1d")
    w = _t(s, (3, 2, 3), requires_grad=False)
    bias = _t(s, (3,), requires_grad=False)
    yield "conv1d_x", (lambda t, _w=w, _b=bias:
                       _weighted_sum(T.conv1d_temporal(t, _w, _b, padding=1),
                                     stream("c1.w"))), _t(s, (2, 7))
    x = _t(s, (2, 7), requires_grad=False)
    yield "conv1d_w", (lambda t, _x=x, _b=bias:
                       _weighted_sum(T.conv1d_temporal(_x, t, _b, padding=1),
                                     stream("c1w.w"))), _t(s, (3, 2, 3))
    yield "conv1d_b", (lambda t, _x=x, _w=w:
                       _weighted_sum(T.conv1d_temporal(_x, _w, t, padding=1),
                                     stream("c1b.w"))), _t(s, (3,))

    s = stream("conv2d")
    w = _t(s, (3, 2, 3, 3), requires_grad=False)
    bias = _t(s, (3,), requires_grad=False)
    yield "conv2d_x", (lambda t, _w=w, _b=bias:
                       _weighted_sum(T.conv2d(t, _w, _b, stride=2, padding=1),
                                     stream("c2.w"))), _t(s, (2, 6, 6))
    x = _t(s, (2, 6, 6), requires_grad=False)
    yield "conv2d_w", (lambda t, _x=x, _b=bias:
                       _weighted_sum(T.conv2d(_x, t, _b, stride=2, padding=1),
                                     stream("c2w.w"))), _t(s, (3, 2, 3, 3))
    yield "conv2d_b", (lambda t, _x=x, _w=w:
                       _weighted_sum(T.conv2d(_x, _w, t, stride=2, padding=1),
                                     stream("c2b.w"))), _t(s, (3,))


def check_primitives(seed: int = 0, points: int = 10,
                     tol: float = PRIMITIVE_TOL) -> list[tuple[str, GradCheckReport]]:
    """Check every primitive at `points` random input draws; returns the
    worst report per op."""
    results: list[tuple[str, GradCheckReport]] = []
    for point in range(points):
        for name, f, x in primitive_cases(seed=derive_seed(seed, "point", point)):
            report = grad_check(f, x, tol=tol)
            results.append((name, report))
    worst: dict[str, GradCheckReport] = {}
    for name, report in results:
        if name not in worst or report.max_rel_err > worst[name].max_rel_err:
            worst[name] = report
    return sorted(worst.items())


def check_model(preset_name: str = "test", seed: int = 0, n_coords: int = 4,
                batch: int = 2) -> dict[str, float]:
    """Finite-difference check of the full-model training loss at a preset."""
    cfg = preset(preset_name)
    model = build_model(cfg, seed=derive_seed(seed, "model"))
    data = gen_synthetic(synth_spec_for(cfg, SignalMode.XOR, batch,
                                        seed=derive_seed(seed, "data")))
    return grad_check_model(model, data.samples, n_coords=n_coords, seed=seed)


def run_suite(preset_name: str = "test", seed: int = 0, printer=print) -> bool:
    """Run the whole gradient suite; one line per check. True if all pass."""
    ok = True
    for name, report in check_primitives(seed=seed):
        status = "ok" if report.passed else "FAIL"
        printer(f"primitive {name:<18} max_rel_err={report.max_rel_err:.3e} [{status}]")
        ok = ok and report.passed
    model_errs = check_model(preset_name=preset_name, seed=seed)
    worst_name = max(model_errs, key=model_errs.get)
    worst = model_errs[worst_name]
    status = "ok" if worst < 1e-3 else "FAIL"
    printer(f"model({preset_name}) worst={worst:.3e} at {worst_name} "
            f"({len(model_errs)} parameters) [{status}]")
    ok = ok and worst < 1e-3
    return ok
