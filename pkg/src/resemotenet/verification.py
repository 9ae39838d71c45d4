"""Gradient-integrity battery: re-derive every backward pass numerically.

Each differentiable primitive and each assembled layer (conv+BN block,
channel gate, residual block, classifier head, cross-entropy) is checked
against central finite differences on freshly sampled shapes, many trials
per component, all in float64.  Non-scalar outputs are read out through a
fixed random projection ``sum(out * c)`` — a plain sum has zero sensitivity
to some inputs (e.g. anything upstream of train-mode batch norm), which
would starve the numeric side.

Composite blocks run with eval-mode batch norm.  In train mode a conv bias
feeding batch norm has an *exactly zero* true gradient (batch statistics
absorb per-channel constants), which finite differences can only bound, not
confirm; the train-mode variants therefore check weights and norm
parameters, and bias handling is covered by the eval-mode passes.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, grad_check, using_dtype
from .layers import (EVAL, TRAIN, BatchNorm2d, Conv2dLayer, LinearLayer,
                     ResidualBlock, SEBlock, conv_block_forward, residual_forward,
                     se_forward)
from .optim import cross_entropy


def _signed_uniform(rng, shape, low=0.2, high=1.0):
    """Magnitudes bounded away from zero, random signs: keeps relu/max-pool
    arguments clear of kinks and ties at finite-difference scale."""
    magnitude = rng.uniform(low, high, size=shape)
    sign = rng.choice([-1.0, 1.0], size=shape)
    return magnitude * sign


def _projection(rng, shape) -> Tensor:
    """Fixed random readout weights, bounded away from zero so every output
    element contributes to the checked scalar."""
    return Tensor(_signed_uniform(rng, shape, 0.5, 1.5))


# --- samplers: name -> rng -> (f, named inputs) ----------------------------

def _sample_conv2d(rng):
    n, ci, co = int(rng.integers(1, 3)), int(rng.integers(1, 3)), int(rng.integers(1, 4))
    k = int(rng.integers(1, 4))
    stride = int(rng.integers(1, 3))
    padding = int(rng.integers(0, 2))
    size = int(rng.integers(k, k + 4))
    x = Tensor(rng.standard_normal((n, ci, size, size)), requires_grad=True)
    w = Tensor(rng.standard_normal((co, ci, k, k)), requires_grad=True)
    b = Tensor(rng.standard_normal(co), requires_grad=True)
    out_size = (size + 2 * padding - k) // stride + 1
    c = _projection(rng, (n, co, out_size, out_size))

    def f(x, w, b):
        return ad.tensor_sum(ad.mul(ad.conv2d(x, w, b, stride, padding), c))

    return f, [("x", x), ("weight", w), ("bias", b)]


def _sample_max_pool2d(rng):
    n, ch = int(rng.integers(1, 3)), int(rng.integers(1, 3))
    k = int(rng.integers(2, 4))
    size = k * int(rng.integers(1, 3)) + int(rng.integers(0, 2))
    # distinct multiples of 0.1 with jitter: window maxima stay unique and
    # separated by far more than the finite-difference step
    base = rng.permutation(n * ch * size * size).astype(np.float64)
    values = 0.1 * base + rng.uniform(-0.01, 0.01, size=base.shape)
    x = Tensor(values.reshape(n, ch, size, size), requires_grad=True)
    out_size = (size - k) // k + 1
    c = _projection(rng, (n, ch, out_size, out_size))

    def f(x):
        return ad.tensor_sum(ad.mul(ad.max_pool2d(x, k, k), c))

    return f, [("x", x)]


def _sample_global_avg_pool(rng):
    n, ch, size = int(rng.integers(1, 3)), int(rng.integers(1, 4)), int(rng.integers(1, 6))
    x = Tensor(rng.standard_normal((n, ch, size, size)), requires_grad=True)
    c = _projection(rng, (n, ch))

    def f(x):
        return ad.tensor_sum(ad.mul(ad.global_avg_pool(x), c))

    return f, [("x", x)]


def _sample_adaptive_avg_pool(rng):
    n, ch = int(rng.integers(1, 3)), int(rng.integers(1, 3))
    size = int(rng.integers(2, 7))
    out_h = int(rng.integers(1, size + 1))
    out_w = int(rng.integers(1, size + 1))
    x = Tensor(rng.standard_normal((n, ch, size, size)), requires_grad=True)
    c = _projection(rng, (n, ch, out_h, out_w))

    def f(x):
        return ad.tensor_sum(ad.mul(ad.adaptive_avg_pool(x, out_h, out_w), c))

    return f, [("x", x)]


def _sample_linear(rng):
    n, din, dout = (int(rng.integers(1, 4)), int(rng.integers(1, 6)),
                    int(rng.integers(1, 5)))
    x = Tensor(rng.standard_normal((n, din)), requires_grad=True)
    w = Tensor(rng.standard_normal((dout, din)), requires_grad=True)
    b = Tensor(rng.standard_normal(dout), requires_grad=True)
    c = _projection(rng, (n, dout))

    def f(x, w, b):
        return ad.tensor_sum(ad.mul(ad.linear(x, w, b), c))

    return f, [("x", x), ("weight", w), ("bias", b)]


def _sample_relu(rng):
    shape = tuple(int(rng.integers(1, 5)) for _ in range(2))
    x = Tensor(_signed_uniform(rng, shape), requires_grad=True)
    c = _projection(rng, shape)

    def f(x):
        return ad.tensor_sum(ad.mul(ad.relu(x), c))

    return f, [("x", x)]


def _sample_sigmoid(rng):
    shape = tuple(int(rng.integers(1, 5)) for _ in range(2))
    x = Tensor(rng.standard_normal(shape) * 2.0, requires_grad=True)
    c = _projection(rng, shape)

    def f(x):
        return ad.tensor_sum(ad.mul(ad.sigmoid(x), c))

    return f, [("x", x)]


def _sample_add(rng):
    shape = tuple(int(rng.integers(1, 5)) for _ in range(3))
    a = Tensor(rng.standard_normal(shape), requires_grad=True)
    b = Tensor(rng.standard_normal(shape), requires_grad=True)
    c = _projection(rng, shape)

    def f(a, b):
        return ad.tensor_sum(ad.mul(ad.add(a, b), c))

    return f, [("a", a), ("b", b)]


def _sample_mul(rng):
    shape = tuple(int(rng.integers(1, 5)) for _ in range(2))
    a = Tensor(rng.standard_normal(shape), requires_grad=True)
    b = Tensor(rng.standard_normal(shape), requires_grad=True)
    c = _projection(rng, shape)

    def f(a, b):
        return ad.tensor_sum(ad.mul(ad.mul(a, b), c))

    return f, [("a", a), ("b", b)]


def _sample_mul_broadcast_channel(rng):
    n, ch, size = int(rng.integers(1, 3)), int(rng.integers(1, 4)), int(rng.integers(1, 5))
    x = Tensor(rng.standard_normal((n, ch, size, size)), requires_grad=True)
    s = Tensor(rng.standard_normal((n, ch)), requires_grad=True)
    c = _projection(rng, (n, ch, size, size))

    def f(x, s):
        return ad.tensor_sum(ad.mul(ad.mul_broadcast_channel(x, s), c))

    return f, [("x", x), ("gate", s)]


def _sample_reshape(rng):
    n, ch, size = int(rng.integers(1, 3)), int(rng.integers(1, 4)), int(rng.integers(1, 4))
    x = Tensor(rng.standard_normal((n, ch, size, size)), requires_grad=True)
    c = _projection(rng, (n, ch * size * size))

    def f(x):
        return ad.tensor_sum(ad.mul(ad.reshape(x, (x.shape[0], -1)), c))

    return f, [("x", x)]


def _sample_sum(rng):
    shape = tuple(int(rng.integers(1, 5)) for _ in range(2))
    x = Tensor(rng.standard_normal(shape), requires_grad=True)

    def f(x):
        return ad.tensor_sum(x)

    return f, [("x", x)]


def _sample_batch_norm_train(rng):
    n, ch, size = int(rng.integers(2, 4)), int(rng.integers(1, 3)), int(rng.integers(2, 5))
    x = Tensor(rng.standard_normal((n, ch, size, size)), requires_grad=True)
    gamma = Tensor(rng.uniform(0.5, 1.5, size=ch), requires_grad=True)
    beta = Tensor(rng.standard_normal(ch), requires_grad=True)
    c = _projection(rng, (n, ch, size, size))

    def f(x, gamma, beta):
        y, _, _ = ad.batch_norm2d_train(x, gamma, beta, 1e-5)
        return ad.tensor_sum(ad.mul(y, c))

    return f, [("x", x), ("gamma", gamma), ("beta", beta)]


def _sample_batch_norm_eval(rng):
    n, ch, size = int(rng.integers(1, 3)), int(rng.integers(1, 3)), int(rng.integers(2, 5))
    x = Tensor(rng.standard_normal((n, ch, size, size)), requires_grad=True)
    gamma = Tensor(rng.uniform(0.5, 1.5, size=ch), requires_grad=True)
    beta = Tensor(rng.standard_normal(ch), requires_grad=True)
    running_mean = rng.standard_normal(ch)
    running_var = rng.uniform(0.5, 2.0, size=ch)
    c = _projection(rng, (n, ch, size, size))

    def f(x, gamma, beta):
        y = ad.batch_norm2d_eval(x, gamma, beta, running_mean, running_var, 1e-5)
        return ad.tensor_sum(ad.mul(y, c))

    return f, [("x", x), ("gamma", gamma), ("beta", beta)]


def _sample_cross_entropy(rng):
    n, k = int(rng.integers(2, 5)), int(rng.integers(2, 6))
    logits = Tensor(rng.standard_normal((n, k)) * 2.0, requires_grad=True)
    labels = rng.integers(0, k, size=n)

    def f(logits):
        return cross_entropy(logits, labels).loss

    return f, [("logits", logits)]


def _randomize_batch_norm(bn: BatchNorm2d, rng, mode: str) -> None:
    bn.mode = mode
    bn.gamma.data[...] = rng.uniform(0.5, 1.5, size=bn.gamma.shape)
    bn.beta.data[...] = rng.standard_normal(bn.beta.shape)
    if mode == EVAL:
        bn.running_mean[...] = rng.standard_normal(bn.running_mean.shape)
        bn.running_var[...] = rng.uniform(0.5, 2.0, size=bn.running_var.shape)


def _sample_conv_bn_block(rng, mode=EVAL, include_bias=True):
    n, ci, co, size = 2, 2, 2, 4
    conv = Conv2dLayer(ci, co, 3, stride=1, padding=1, rng=rng)
    bn = BatchNorm2d(co)
    conv.weight.data[...] = rng.standard_normal(conv.weight.shape) * 0.5
    conv.bias.data[...] = rng.standard_normal(conv.bias.shape) * 0.1
    _randomize_batch_norm(bn, rng, mode)
    x = Tensor(rng.standard_normal((n, ci, size, size)), requires_grad=True)
    c = _projection(rng, (n, co, size, size))

    def f(*_):
        return ad.tensor_sum(ad.mul(conv_block_forward(conv, bn, x), c))

    inputs = [("x", x), ("conv.weight", conv.weight)]
    if include_bias:
        inputs.append(("conv.bias", conv.bias))
    inputs += [("bn.gamma", bn.gamma), ("bn.beta", bn.beta)]
    return f, inputs


def _sample_conv_bn_block_train(rng):
    return _sample_conv_bn_block(rng, mode=TRAIN, include_bias=False)


def _sample_se_block(rng):
    n, ch, size = 2, 4, 3
    se = SEBlock(ch, reduction_ratio=2, rng=rng)
    se.w1.data[...] = rng.standard_normal(se.w1.shape)
    se.w2.data[...] = rng.standard_normal(se.w2.shape)
    x = Tensor(rng.standard_normal((n, ch, size, size)), requires_grad=True)
    c = _projection(rng, (n, ch, size, size))

    def f(*_):
        return ad.tensor_sum(ad.mul(se_forward(se, x), c))

    return f, [("x", x), ("w1", se.w1), ("w2", se.w2)]


def _residual_inputs(block: ResidualBlock, x: Tensor, include_bias=True):
    inputs = [("x", x)]
    for name, tensor in block.named_parameters():
        if not include_bias and name.endswith(".bias"):
            continue
        inputs.append((name, tensor))
    return inputs


def _sample_residual_identity(rng, mode=EVAL, include_bias=True):
    n, ch, size = 2, 2, 4
    block = ResidualBlock(ch, ch, stride=1, rng=rng)
    for conv in (block.conv_a, block.conv_b):
        conv.weight.data[...] = rng.standard_normal(conv.weight.shape) * 0.5
        conv.bias.data[...] = rng.standard_normal(conv.bias.shape) * 0.1
    _randomize_batch_norm(block.bn_a, rng, mode)
    _randomize_batch_norm(block.bn_b, rng, mode)
    x = Tensor(_signed_uniform(rng, (n, ch, size, size)), requires_grad=True)
    c = _projection(rng, (n, ch, size, size))

    def f(*_):
        return ad.tensor_sum(ad.mul(residual_forward(block, x), c))

    return f, _residual_inputs(block, x, include_bias)


def _sample_residual_identity_train(rng):
    return _sample_residual_identity(rng, mode=TRAIN, include_bias=False)


def _sample_residual_projection(rng):
    n, cin, cout, size = 2, 2, 4, 4
    block = ResidualBlock(cin, cout, stride=2, rng=rng)
    for conv in (block.conv_a, block.conv_b, block.shortcut_conv):
        conv.weight.data[...] = rng.standard_normal(conv.weight.shape) * 0.5
        if conv.bias is not None:
            conv.bias.data[...] = rng.standard_normal(conv.bias.shape) * 0.1
    for bn in (block.bn_a, block.bn_b, block.shortcut_bn):
        _randomize_batch_norm(bn, rng, EVAL)
    x = Tensor(rng.standard_normal((n, cin, size, size)), requires_grad=True)
    c = _projection(rng, (n, cout, size // 2, size // 2))

    def f(*_):
        return ad.tensor_sum(ad.mul(residual_forward(block, x), c))

    return f, _residual_inputs(block, x)


def _sample_classifier(rng):
    n, din, k = 3, 6, 4
    head = LinearLayer(din, k, rng=rng)
    head.weight.data[...] = rng.standard_normal(head.weight.shape)
    head.bias.data[...] = rng.standard_normal(head.bias.shape)
    x = Tensor(rng.standard_normal((n, din)), requires_grad=True)
    labels = rng.integers(0, k, size=n)

    def f(*_):
        return cross_entropy(head.forward(x), labels).loss

    return f, [("x", x), ("weight", head.weight), ("bias", head.bias)]


COMPONENTS: dict[str, Callable] = {
    "conv2d": _sample_conv2d,
    "max_pool2d": _sample_max_pool2d,
    "global_avg_pool": _sample_global_avg_pool,
    "adaptive_avg_pool": _sample_adaptive_avg_pool,
    "linear": _sample_linear,
    "relu": _sample_relu,
    "sigmoid": _sample_sigmoid,
    "add": _sample_add,
    "mul": _sample_mul,
    "mul_broadcast_channel": _sample_mul_broadcast_channel,
    "reshape": _sample_reshape,
    "sum": _sample_sum,
    "batch_norm_train": _sample_batch_norm_train,
    "batch_norm_eval": _sample_batch_norm_eval,
    "cross_entropy": _sample_cross_entropy,
    "conv_bn_block": _sample_conv_bn_block,
    "conv_bn_block_train": _sample_conv_bn_block_train,
    "se_block": _sample_se_block,
    "residual_identity": _sample_residual_identity,
    "residual_identity_train": _sample_residual_identity_train,
    "residual_projection": _sample_residual_projection,
    "classifier": _sample_classifier,
}


@dataclass
class ComponentResult:
    name: str
    trials: int
    max_rel_err: float
    failures: list[str]  # "trial 17: conv.weight rel_err=2.3e-3"

    @property
    def passed(self) -> bool:
        return not self.failures

    def line(self) -> str:
        status = "ok" if self.passed else f"FAIL ({len(self.failures)} trials)"
        return (f"{self.name:<24} trials={self.trials} "
                f"max_rel_err={self.max_rel_err:.3e} {status}")


@dataclass
class VerificationReport:
    results: list[ComponentResult]
    tol: float
    elapsed_seconds: float

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)

    @property
    def max_rel_err(self) -> float:
        return max((r.max_rel_err for r in self.results), default=0.0)


def run_gradient_checks(seed: int = 0, trials_per_component: int = 50,
                        tol: float = ad.GRADCHECK_TOL,
                        components: list[str] | None = None,
                        log: Callable[[str], None] | None = None
                        ) -> VerificationReport:
    """Run the whole battery (or a named subset) and report per-component
    maximum relative error.  Deterministic for a given seed."""
    emit = log if log is not None else lambda line: None
    names = list(COMPONENTS) if components is None else components
    for name in names:
        if name not in COMPONENTS:
            raise KeyError(f"unknown component {name!r}; known: "
                           f"{', '.join(COMPONENTS)}")
    started = time.perf_counter()
    results = []
    with using_dtype(np.float64):
        for name in names:
            sampler = COMPONENTS[name]
            rng = np.random.default_rng([seed, len(name), *name.encode()])
            worst = 0.0
            failures = []
            for trial in range(trials_per_component):
                f, inputs = sampler(rng)
                report = grad_check(f, inputs, tol=tol)
                worst = max(worst, report.max_rel_err)
                for entry in report.failures:
                    failures.append(
                        f"trial {trial}: {entry.name} rel_err={entry.max_rel_err:.3e}")
            result = ComponentResult(name, trials_per_component, worst, failures)
            results.append(result)
            emit(result.line())
    elapsed = time.perf_counter() - started
    return VerificationReport(results=results, tol=tol, elapsed_seconds=elapsed)
