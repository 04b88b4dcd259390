"""Finite-difference suite over every differentiable op and the composed pipelines.

Each case builds a fresh scalar function from a seeded generator.  Inputs to
non-smooth ops (abs, maximum, minimum, GIoU clamps) are kept away from their
kinks so central differences are meaningful.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import tensor as T
from .actl import ACTLParams, actl_loss, actl_loss_from_logits, pool_and_normalize, similarity_matrix
from .fusion import FusionInput, FusionParams, bi_cross_attention, fuse, spectral_filter_branch
from .matching import focal_cls_loss, focal_cls_loss_logits, giou_tensor, track_loss
from .spectral import inverse_spectrum, spectrum_of
from .tensor import Tensor, parameter

DEFAULT_SEEDS = (0, 1, 2, 3, 4)
TOLERANCE = 1e-4

Builder = Callable[[np.random.Generator], tuple[Callable[[], Tensor], list[Tensor]]]
CASES: dict[str, Builder] = {}


def case(name: str):
    def register(fn: Builder) -> Builder:
        CASES[name] = fn
        return fn
    return register


def _p(rng, shape, name, low=None, high=None):
    if low is None:
        return parameter(rng.standard_normal(shape), name)
    return parameter(rng.uniform(low, high, size=shape), name)


def _away_from_zero(rng, shape, name, margin=0.2):
    v = rng.uniform(margin, 2.0, size=shape) * rng.choice([-1.0, 1.0], size=shape)
    return parameter(v, name)


def _unary(op, low=None, high=None, shape=(3, 4)):
    def build(rng):
        x = _p(rng, shape, "x", low, high)
        w = rng.standard_normal(op(x).shape)
        return (lambda: T.sum(op(x) * Tensor(w))), [x]
    return build


def _binary(op, b_low=None, b_high=None, b_shape=(3, 4)):
    def build(rng):
        a = _p(rng, (3, 4), "a")
        b = _p(rng, b_shape, "b", b_low, b_high)
        w = rng.standard_normal((3, 4))
        return (lambda: T.sum(op(a, b) * Tensor(w))), [a, b]
    return build


# -- elementwise ------------------------------------------------------------

case("add")(_binary(T.add))
case("add_broadcast")(_binary(T.add, b_shape=(1, 4)))
case("sub")(_binary(T.sub))
case("mul")(_binary(T.mul))
case("mul_broadcast")(_binary(T.mul, b_shape=(3, 1)))
case("div")(_binary(T.div, 0.5, 2.0))
case("power")(_unary(lambda x: T.power(x, 2.5), 0.2, 2.0))
case("exp")(_unary(T.exp))
case("log")(_unary(T.log, 0.2, 3.0))
case("tanh")(_unary(T.tanh))
case("sigmoid")(_unary(T.sigmoid))
case("softplus")(_unary(T.softplus))
case("log_sigmoid")(_unary(T.log_sigmoid))


@case("abs")
def _abs(rng):
    x = _away_from_zero(rng, (3, 4), "x")
    w = rng.standard_normal((3, 4))
    return (lambda: T.sum(T.abs(x) * Tensor(w))), [x]


def _extremum(op):
    def build(rng):
        a = _p(rng, (3, 4), "a")
        gap = rng.uniform(0.2, 1.0, size=(3, 4)) * rng.choice([-1.0, 1.0], size=(3, 4))
        b = parameter(a.data + gap, "b")
        w = rng.standard_normal((3, 4))
        return (lambda: T.sum(op(a, b) * Tensor(w))), [a, b]
    return build


case("maximum")(_extremum(T.maximum))
case("minimum")(_extremum(T.minimum))


# -- shape ops and reductions -----------------------------------------------

case("transpose")(_unary(T.transpose))
case("reshape")(_unary(lambda x: T.reshape(x, (2, 6))))
case("index_rows")(_unary(lambda x: x[np.array([0, 2, 2])]))
case("index_column")(_unary(lambda x: x[:, 1]))
case("sum_axis")(_unary(lambda x: T.sum(x, axis=0)))
case("mean_axis")(_unary(lambda x: T.mean(x, axis=1, keepdims=True)))
case("softmax")(_unary(lambda x: T.softmax(x, axis=-1)))
case("l2_normalize")(_unary(lambda x: T.l2_normalize(x, axis=1)))


@case("concat")
def _concat(rng):
    a, b = _p(rng, (2, 3), "a"), _p(rng, (4, 3), "b")
    w = rng.standard_normal((6, 3))
    return (lambda: T.sum(T.concat([a, b], axis=0) * Tensor(w))), [a, b]


@case("matmul")
def _matmul(rng):
    a, b = _p(rng, (3, 5), "a"), _p(rng, (5, 2), "b")
    w = rng.standard_normal((3, 2))
    return (lambda: T.sum((a @ b) * Tensor(w))), [a, b]


@case("layer_norm")
def _layer_norm(rng):
    x, g, b = _p(rng, (4, 6), "x"), _p(rng, (6,), "gain"), _p(rng, (6,), "bias")
    w = rng.standard_normal((4, 6))
    return (lambda: T.sum(T.layer_norm(x, g, b) * Tensor(w))), [x, g, b]


def _conv(padding):
    def build(rng):
        x, k = _p(rng, (7, 3), "x"), _p(rng, (3, 3), "kernel")
        w = rng.standard_normal((7, 3))
        return (lambda: T.sum(T.conv1d(x, k, padding) * Tensor(w))), [x, k]
    return build


case("conv1d_zeros")(_conv("zeros"))
case("conv1d_circular")(_conv("circular"))


@case("composite")
def _composite(rng):
    # matmul -> softmax -> layer_norm -> mean
    x, wm = _p(rng, (4, 5), "x"), _p(rng, (5, 6), "w")
    g, b = _p(rng, (6,), "gain"), _p(rng, (6,), "bias")
    w = rng.standard_normal((4, 6))
    return (lambda: T.mean(T.layer_norm(T.softmax(x @ wm, axis=-1), g, b) * Tensor(w))), [x, wm, g, b]


# -- spectral ---------------------------------------------------------------


@case("spectrum")
def _spectrum(rng):
    x = _p(rng, (8, 3), "x")
    wr, wi = rng.standard_normal((8, 3)), rng.standard_normal((8, 3))

    def f():
        re, im = spectrum_of(x)
        return T.sum(re * Tensor(wr)) + T.sum(im * Tensor(wi))
    return f, [x]


@case("inverse_spectrum")
def _inverse_spectrum(rng):
    re, im = _p(rng, (8, 2), "re"), _p(rng, (8, 2), "im")
    w = rng.standard_normal((8, 2))
    return (lambda: T.sum(inverse_spectrum(re, im)[0] * Tensor(w))), [re, im]


# -- fusion -----------------------------------------------------------------


def _fusion_setup(rng, channels=6, t_v=8, t_a=4):
    params = FusionParams.init(channels, rng)
    inp = FusionInput(parameter(rng.standard_normal((t_v, channels)), "f_v"),
                      parameter(rng.standard_normal((t_a, channels)), "f_a"))
    return params, inp


@case("bi_cross_attention")
def _attention(rng):
    params, inp = _fusion_setup(rng)
    wv, wa = rng.standard_normal((8, 6)), rng.standard_normal((4, 6))

    def f():
        v2a, a2v = bi_cross_attention(inp, params)
        return T.sum(v2a * Tensor(wv)) + T.sum(a2v * Tensor(wa))
    return f, [inp.f_v, inp.f_a, params.w_v, params.w_a, params.w_v_value, params.w_a_value]


@case("spectral_filter_branch")
def _branch(rng):
    params, _ = _fusion_setup(rng)
    x = _p(rng, (8, 6), "f")
    w = rng.standard_normal((8, 6))

    def f():
        out, _ = spectral_filter_branch(x, params, params.conv_v2a)
        return T.sum(out * Tensor(w))
    return f, [x, params.mlp_w1, params.mlp_b1, params.mlp_w2, params.mlp_b2, params.conv_v2a]


@case("fusion_pipeline")
def _fusion(rng):
    params, inp = _fusion_setup(rng)
    wv, wa = rng.standard_normal((8, 6)), rng.standard_normal((4, 6))

    def f():
        out = fuse(inp, params)
        return T.sum(out.f_v_fused * Tensor(wv)) + T.sum(out.f_a_fused * Tensor(wa))
    return f, params.parameters() + [inp.f_v, inp.f_a]


# -- contrastive and tracking losses ------------------------------------------


def _actl_setup(rng, channels=5, traj=4, n=3, m=2):
    params = ACTLParams.init(channels, traj, rng)
    params.phi.data[:] = rng.uniform(-0.5, 0.5)
    params.b_rho.data[:] = rng.uniform(-0.5, 0.5)
    audio = [parameter(rng.standard_normal((4, channels)), f"audio{i}") for i in range(m)]
    queries = _p(rng, (n, traj), "queries")
    labels = rng.random((n, m)) < 0.4
    return params, audio, queries, labels


@case("actl_pipeline")
def _actl(rng):
    params, audio, queries, labels = _actl_setup(rng)

    def f():
        z_a, z_t = pool_and_normalize(audio, queries, params)
        return actl_loss(similarity_matrix(z_t, z_a, params), labels, params.gamma)
    return f, params.parameters() + audio + [queries]


@case("actl_pipeline_logits")
def _actl_logits(rng):
    params, audio, queries, labels = _actl_setup(rng)

    def f():
        z_a, z_t = pool_and_normalize(audio, queries, params)
        return actl_loss_from_logits(similarity_matrix(z_t, z_a, params), labels, params.gamma)
    return f, params.parameters() + audio + [queries]


@case("focal_cls_loss")
def _focal(rng):
    p = _p(rng, (6,), "p", 0.05, 0.95)
    y = rng.random(6) < 0.5
    return (lambda: T.sum(focal_cls_loss(p, y))), [p]


@case("focal_cls_loss_logits")
def _focal_logits(rng):
    z = _p(rng, (6,), "z")
    y = rng.random(6) < 0.5
    return (lambda: T.sum(focal_cls_loss_logits(z, y))), [z]


def _boxes(rng, k):
    return np.column_stack([rng.uniform(0.3, 0.7, (k, 2)), rng.uniform(0.1, 0.3, (k, 2))])


@case("giou")
def _giou(rng):
    # targets are shifted by a fraction of the extent: boxes overlap, no edges coincide
    pred = _boxes(rng, 4)
    target = pred + np.column_stack([rng.uniform(-0.3, 0.3, (4, 2)) * pred[:, 2:],
                                     rng.uniform(-0.2, 0.2, (4, 2)) * pred[:, 2:]])
    p, t = parameter(pred, "pred"), parameter(target, "target")
    return (lambda: T.sum(giou_tensor(p, t)[1])), [p, t]


@case("track_loss")
def _track(rng):
    logits = _p(rng, (5, 1), "class_logit")
    pred = _boxes(rng, 5)
    target = pred[[3, 0, 4]] + 0.05 * rng.uniform(0.2, 1.0, (3, 4)) * rng.choice([-1.0, 1.0], (3, 4))
    boxes = parameter(pred, "boxes")
    act = _p(rng, (1, 1), "act")
    assignment = [(0, 1), (3, 0), (4, 2)]
    return (lambda: track_loss(logits, boxes, target, assignment, actl=T.sum(act * act),
                               from_logits=True)[0]), [logits, boxes, act]


# -- runner -----------------------------------------------------------------


@dataclass
class CaseResult:
    name: str
    seed: int
    max_rel_error: float
    worst: tuple
    seconds: float

    def passed(self, tol: float = TOLERANCE) -> bool:
        return self.max_rel_error < tol


def run_case(name: str, seed: int, h: float = 1e-5) -> CaseResult:
    rng = np.random.default_rng(seed)
    start = time.perf_counter()
    f, params = CASES[name](rng)
    report = T.finite_diff_check(f, params, h=h)
    return CaseResult(name, seed, report.max_rel_error, report.worst(), time.perf_counter() - start)


def run_suite(seeds=DEFAULT_SEEDS, names=None) -> list[CaseResult]:
    names = list(CASES) if names is None else list(names)
    unknown = [n for n in names if n not in CASES]
    if unknown:
        raise KeyError(f"unknown gradient cases: {unknown}")
    return [run_case(n, s) for n in names for s in seeds]
