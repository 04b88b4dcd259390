"""Bidirectional frequency-domain cross-attention fusion of visual and audio tokens.

Naming follows the query side first: ``v2a`` is the stream whose queries are
visual tokens attending to audio keys/values, ``a2v`` the reverse.  Pipeline:

1. cross-attention in both directions,
2. per stream, an adaptive spectral filter along the token axis with a
   residual connection,
3. each attended stream is gated per channel by the token-mean of the
   *opposite* filtered stream,
4. the gated stream is added to the layer-normalized input.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from . import tensor as T
from .spectral import GaussianKernelSpec, gaussian_kernel, inverse_spectrum, spectrum_of
from .tensor import Tensor, as_tensor, parameter

# Folds a width-3 kernel [a, b, c] into [(a+c)/2, b, (a+c)/2].  A real kernel
# slid over frequency bins keeps a real signal real only if it is symmetric.
_SYMMETRIZE3 = np.array([[0.5, 0.0, 0.5], [0.0, 1.0, 0.0], [0.5, 0.0, 0.5]])


@dataclass
class FusionParams:
    w_v: Tensor
    w_a: Tensor
    w_v_value: Tensor
    w_a_value: Tensor
    mlp_w1: Tensor
    mlp_b1: Tensor
    mlp_w2: Tensor
    mlp_b2: Tensor
    conv_v2a: Tensor
    conv_a2v: Tensor
    norm_gain: Tensor
    norm_bias: Tensor
    mu: float = 0.0
    sigma: float = 1.0
    norm_eps: float = 1e-5

    @property
    def channels(self) -> int:
        return self.w_v.shape[0]

    @property
    def d_k(self) -> int:
        return self.channels

    @classmethod
    def init(cls, channels: int, rng: np.random.Generator, hidden: int = 16,
             mu: float = 0.0, sigma: float = 1.0) -> "FusionParams":
        c = channels
        scale = 1.0 / math.sqrt(c)
        conv = np.tile([0.0, 1.0, 0.0], (c, 1)) + 0.05 * rng.standard_normal((c, 3))
        return cls(
            w_v=parameter(scale * rng.standard_normal((c, c)), "w_v"),
            w_a=parameter(scale * rng.standard_normal((c, c)), "w_a"),
            w_v_value=parameter(scale * rng.standard_normal((c, c)), "w_v_value"),
            w_a_value=parameter(scale * rng.standard_normal((c, c)), "w_a_value"),
            # small MLP so the initial filter coefficient sits near sigmoid(0) = 0.5
            mlp_w1=parameter(0.1 * rng.standard_normal((1, hidden)), "mlp_w1"),
            mlp_b1=parameter(np.zeros((1, hidden)), "mlp_b1"),
            mlp_w2=parameter(0.1 * rng.standard_normal((hidden, 1)), "mlp_w2"),
            mlp_b2=parameter(np.zeros((1, 1)), "mlp_b2"),
            conv_v2a=parameter(conv.copy(), "conv_v2a"),
            conv_a2v=parameter(np.tile([0.0, 1.0, 0.0], (c, 1)) + 0.05 * rng.standard_normal((c, 3)), "conv_a2v"),
            norm_gain=parameter(np.ones(c), "norm_gain"),
            norm_bias=parameter(np.zeros(c), "norm_bias"),
            mu=mu,
            sigma=sigma,
        )

    def parameters(self) -> list[Tensor]:
        return [getattr(self, f.name) for f in fields(self) if f.type == "Tensor"]

    def validate(self) -> None:
        c = self.channels
        for w in (self.w_v, self.w_a, self.w_v_value, self.w_a_value):
            if w.shape != (c, c):
                raise ValueError(f"projection {w.name} must be {c}x{c}, got {w.shape}")
        for k in (self.conv_v2a, self.conv_a2v):
            if k.shape[0] != c or k.shape[1] % 2 == 0:
                raise ValueError(f"conv kernel {k.name} must be ({c}, odd), got {k.shape}")


@dataclass
class FusionInput:
    f_v: Tensor
    f_a: Tensor

    def __post_init__(self):
        self.f_v, self.f_a = as_tensor(self.f_v), as_tensor(self.f_a)
        if self.f_v.ndim != 2 or self.f_a.ndim != 2:
            raise ValueError("token features must be 2-D (tokens, channels)")
        if self.f_v.shape[0] < 1 or self.f_a.shape[0] < 1:
            raise ValueError("each stream needs at least one token")
        if self.f_v.shape[1] != self.f_a.shape[1]:
            raise ValueError(f"channel mismatch: visual {self.f_v.shape[1]} vs audio {self.f_a.shape[1]}")


@dataclass
class BranchDiagnostics:
    epsilon: float
    kernel: np.ndarray
    spectrum: np.ndarray        # complex bins after kernel and conv, (T, C)
    imag_residue: float


@dataclass
class FusionOutput:
    f_v_fused: Tensor
    f_a_fused: Tensor
    diagnostics: dict[str, BranchDiagnostics] = field(default_factory=dict)


def bi_cross_attention(inp: FusionInput, params: FusionParams) -> tuple[Tensor, Tensor]:
    """Scaled dot-product cross-attention in both directions.

    Returns ``(f_v2a, f_a2v)``: visual queries over audio keys/values, shaped
    like ``f_v``; and audio queries over visual keys/values, shaped like ``f_a``.
    """
    if inp.f_v.shape[1] != params.channels:
        raise ValueError(f"features have {inp.f_v.shape[1]} channels, params expect {params.channels}")
    scale = 1.0 / math.sqrt(params.d_k)
    q_v = inp.f_v @ params.w_v
    q_a = inp.f_a @ params.w_a
    attn_v = T.softmax((q_v @ q_a.T) * scale, axis=1)
    attn_a = T.softmax((q_a @ q_v.T) * scale, axis=1)
    f_v2a = attn_v @ (inp.f_a @ params.w_a_value)
    f_a2v = attn_a @ (inp.f_v @ params.w_v_value)
    return f_v2a, f_a2v


def filter_coefficient(f: Tensor, params: FusionParams) -> Tensor:
    """Sample-adaptive coefficient in (0, 1): sigmoid(MLP(global average pool))."""
    pooled = T.reshape(T.mean(f), (1, 1))
    hidden = T.tanh(pooled @ params.mlp_w1 + params.mlp_b1)
    return T.sigmoid(hidden @ params.mlp_w2 + params.mlp_b2)


def spectral_filter_branch(f, params: FusionParams, conv: Tensor,
                           kernel_override: np.ndarray | None = None,
                           symmetrize_conv: bool = True) -> tuple[Tensor, BranchDiagnostics]:
    """Filter each channel of ``f`` along the token axis in the frequency domain.

    The spectrum is scaled by the adaptive Gaussian kernel, smoothed across
    neighbouring bins by ``conv`` (circular, shared for real and imaginary
    parts), transformed back, and added to ``f``.  ``kernel_override`` replaces
    the Gaussian kernel with fixed per-bin values (used for bypass checks).
    """
    f = as_tensor(f)
    n = f.shape[0]
    eps = filter_coefficient(f, params)
    if kernel_override is None:
        shape = gaussian_kernel(GaussianKernelSpec(params.mu, params.sigma, 1.0), n)
        kernel = eps * Tensor(shape.reshape(n, 1))
    else:
        kernel = Tensor(np.asarray(kernel_override, dtype=np.float64).reshape(n, 1))

    re, im = spectrum_of(f)
    re, im = re * kernel, im * kernel
    weight = conv @ Tensor(_SYMMETRIZE3) if symmetrize_conv and conv.shape[1] == 3 else conv
    re = T.conv1d(re, weight, padding="circular")
    im = T.conv1d(im, weight, padding="circular")
    restored, residue = inverse_spectrum(re, im)

    diag = BranchDiagnostics(
        epsilon=eps.item(),
        kernel=kernel.data.reshape(-1).copy(),
        spectrum=re.data + 1j * im.data,
        imag_residue=residue,
    )
    return restored + f, diag


def cross_gate(gate_source, target) -> Tensor:
    """Scale each channel of ``target`` by the token-mean of ``gate_source``."""
    gate_source, target = as_tensor(gate_source), as_tensor(target)
    if gate_source.shape[1] != target.shape[1]:
        raise ValueError(f"channel mismatch: gate {gate_source.shape[1]} vs target {target.shape[1]}")
    return T.mean(gate_source, axis=0, keepdims=True) * target


def fuse(inp: FusionInput, params: FusionParams) -> FusionOutput:
    f_v2a, f_a2v = bi_cross_attention(inp, params)
    filt_v2a, diag_v2a = spectral_filter_branch(f_v2a, params, params.conv_v2a)
    filt_a2v, diag_a2v = spectral_filter_branch(f_a2v, params, params.conv_a2v)
    gated_v = cross_gate(filt_a2v, f_v2a)    # (T_v, C)
    gated_a = cross_gate(filt_v2a, f_a2v)    # (T_a, C)
    out_v = gated_v + T.layer_norm(inp.f_v, params.norm_gain, params.norm_bias, params.norm_eps)
    out_a = gated_a + T.layer_norm(inp.f_a, params.norm_gain, params.norm_bias, params.norm_eps)
    return FusionOutput(out_v, out_a, {"v2a": diag_v2a, "a2v": diag_a2v})


# ---------------------------------------------------------------------------
# Parameter files: {"format": ..., "params": [{"name", "shape", "values"}, ...]}

PARAMS_FORMAT = "artrack.params/v1"


def params_to_json(named: list[tuple[str, Tensor]], extra: dict | None = None) -> str:
    doc = {
        "format": PARAMS_FORMAT,
        "params": [
            {"name": name, "shape": list(t.shape), "values": t.data.reshape(-1).tolist()}
            for name, t in named
        ],
    }
    if extra:
        doc["meta"] = extra
    return json.dumps(doc, indent=1)


def params_from_json(text: str) -> dict[str, np.ndarray]:
    doc = json.loads(text)
    if doc.get("format") != PARAMS_FORMAT:
        raise ValueError(f"unrecognized parameter container format {doc.get('format')!r}")
    out = {}
    for entry in doc["params"]:
        values = np.asarray(entry["values"], dtype=np.float64)
        shape = tuple(entry["shape"])
        if values.size != int(np.prod(shape)):
            raise ValueError(f"parameter {entry['name']}: {values.size} values for shape {shape}")
        out[entry["name"]] = values.reshape(shape)
    return out


def save_fusion_params(params: FusionParams, path: str | Path) -> None:
    named = [(t.name, t) for t in params.parameters()]
    meta = {"mu": params.mu, "sigma": params.sigma, "norm_eps": params.norm_eps}
    Path(path).write_text(params_to_json(named, meta) + "\n", encoding="utf-8")


def load_fusion_params(path: str | Path) -> FusionParams:
    text = Path(path).read_text(encoding="utf-8")
    arrays = params_from_json(text)
    meta = json.loads(text).get("meta", {})
    tensors = {f.name: parameter(arrays[f.name], f.name) for f in fields(FusionParams) if f.type == "Tensor"}
    return FusionParams(**tensors, **meta)
