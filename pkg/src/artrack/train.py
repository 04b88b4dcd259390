"""Toy referring tracker trained end to end on synthetic scenes.

Each visual token acts as one track query.  The fused visual stream feeds a
linear head for objectness, boxes and trajectory embeddings; the trajectory
embeddings are compared with the pooled fused audio stream to give the
referring score.  Queries are matched to ground-truth objects per frame and
trained with the lambda-weighted tracking + contrastive loss, by plain
gradient descent.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .actl import ACTLParams, actl_loss_from_logits, pool_and_normalize, similarity_matrix
from .fusion import FusionInput, FusionParams, fuse, params_to_json
from .matching import (Box, LossWeights, Prediction, hungarian, matching_cost, select_referred,
                       track_loss)
from .metrics import TrackRecord
from .synth import (ExpressionSpec, Scene, SceneSpec, generate_scene, make_expressions,
                    synth_features, to_pixels)
from .tensor import Tensor, parameter

log = logging.getLogger(__name__)

BOX_PRIOR = np.array([0.5, 0.5, 0.1, 0.2])


@dataclass
class TrainConfig:
    seed: int = 0
    steps: int = 300
    lr: float = 0.3
    noise: float = 0.05
    t_v: int = 16
    t_a: int = 8
    channels: int = 32
    n_objects: int = 6
    n_frames: int = 10
    frames_per_step: int = 2
    lr_drop_at: float = 0.5          # fraction of steps after which lr is divided by 10
    weights: LossWeights = field(default_factory=LossWeights)
    class_threshold: float = 0.7
    referring_threshold: float = 0.5

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        if not 0.0 <= self.lr_drop_at <= 1.0:
            raise ValueError("lr_drop_at is a fraction of the run in [0, 1]")
        if self.noise < 0:
            raise ValueError("noise must be non-negative")

    def lr_at(self, step: int) -> float:
        return self.lr if step < self.lr_drop_at * self.steps else 0.1 * self.lr

    @property
    def n_queries(self) -> int:
        return self.t_v

    @classmethod
    def from_dict(cls, doc: dict) -> "TrainConfig":
        known = {"seed", "steps", "lr", "lr_drop_at", "noise", "dims", "lambdas", "thresholds", "scene"}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        dims = doc.get("dims", {})
        lam = doc.get("lambdas", {})
        thr = doc.get("thresholds", {})
        scene = doc.get("scene", {})
        base = cls()
        return cls(
            seed=int(doc.get("seed", base.seed)),
            steps=int(doc.get("steps", base.steps)),
            lr=float(doc.get("lr", base.lr)),
            lr_drop_at=float(doc.get("lr_drop_at", base.lr_drop_at)),
            noise=float(doc.get("noise", base.noise)),
            t_v=int(dims.get("T_v", base.t_v)),
            t_a=int(dims.get("T_a", base.t_a)),
            channels=int(dims.get("C", base.channels)),
            n_objects=int(scene.get("n_objects", base.n_objects)),
            n_frames=int(scene.get("n_frames", base.n_frames)),
            frames_per_step=int(scene.get("frames_per_step", base.frames_per_step)),
            weights=LossWeights(
                lambda_cls=float(lam.get("cls", 2.0)), lambda_l1=float(lam.get("l1", 5.0)),
                lambda_iou=float(lam.get("iou", 2.0)), lambda_act=float(lam.get("act", 2.0))),
            class_threshold=float(thr.get("class", base.class_threshold)),
            referring_threshold=float(thr.get("referring", base.referring_threshold)),
        )

    def to_dict(self) -> dict:
        w = self.weights
        return {
            "seed": self.seed, "steps": self.steps, "lr": self.lr, "lr_drop_at": self.lr_drop_at, "noise": self.noise,
            "dims": {"T_v": self.t_v, "T_a": self.t_a, "C": self.channels},
            "lambdas": {"cls": w.lambda_cls, "l1": w.lambda_l1, "iou": w.lambda_iou, "act": w.lambda_act},
            "thresholds": {"class": self.class_threshold, "referring": self.referring_threshold},
            "scene": {"n_objects": self.n_objects, "n_frames": self.n_frames,
                      "frames_per_step": self.frames_per_step},
        }


@dataclass
class ToyModel:
    fusion: FusionParams
    actl: ACTLParams
    w_cls: Tensor
    b_cls: Tensor
    w_box: Tensor
    b_box: Tensor
    w_traj: Tensor

    @classmethod
    def init(cls, channels: int, rng: np.random.Generator) -> "ToyModel":
        s = 1.0 / np.sqrt(channels)
        return cls(
            fusion=FusionParams.init(channels, rng),
            actl=ACTLParams.init(channels, channels, rng),
            w_cls=parameter(s * rng.standard_normal((channels, 1)), "w_cls"),
            b_cls=parameter(np.zeros((1, 1)), "b_cls"),
            w_box=parameter(s * rng.standard_normal((channels, 4)), "w_box"),
            # start boxes near a typical object (center of frame, small extent)
            b_box=parameter(np.log(BOX_PRIOR / (1.0 - BOX_PRIOR)).reshape(1, 4), "b_box"),
            w_traj=parameter(s * rng.standard_normal((channels, channels)), "w_traj"),
        )

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        named = [(f"fusion.{p.name}", p) for p in self.fusion.parameters()]
        named += [(f"actl.{p.name}", p) for p in self.actl.parameters()]
        named += [(n, getattr(self, n)) for n in ("w_cls", "b_cls", "w_box", "b_box", "w_traj")]
        return named

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def forward(self, visual: np.ndarray, audio: np.ndarray) -> dict:
        out = fuse(FusionInput(Tensor(visual), Tensor(audio)), self.fusion)
        fv = out.f_v_fused
        class_logit = fv @ self.w_cls + self.b_cls
        boxes = T.sigmoid(fv @ self.w_box + self.b_box)
        queries = fv @ self.w_traj
        z_a, z_t = pool_and_normalize([out.f_a_fused], queries, self.actl)
        sim = similarity_matrix(z_t, z_a, self.actl)
        return {"class_logit": class_logit, "class_prob": T.sigmoid(class_logit), "boxes": boxes,
                "sim": sim, "fusion": out}


def frame_targets(scene: Scene, frame: int) -> np.ndarray:
    return np.array([o.box_at(frame).as_array() for o in scene.objects])


def frame_loss(model: ToyModel, scene: Scene, expression: ExpressionSpec, feats, cfg: TrainConfig):
    pred = model.forward(feats.visual, feats.audio)
    targets = frame_targets(scene, feats.frame)
    cost = matching_cost(pred["class_prob"].data, pred["boxes"].data, targets, cfg.weights)
    assignment = hungarian(cost)
    referents = set(expression.referents(scene))
    labels = np.zeros((cfg.n_queries, 1), dtype=bool)
    for q, g in assignment:
        labels[q, 0] = scene.objects[g].track_id in referents
    l_act = actl_loss_from_logits(pred["sim"], labels, model.actl.gamma)
    total, parts = track_loss(pred["class_logit"], pred["boxes"], targets, assignment, cfg.weights,
                              l_act, from_logits=True)
    return total, parts, pred, assignment


@dataclass
class TrainResult:
    config: TrainConfig
    model: ToyModel
    expression: ExpressionSpec
    loss_trace: list[float]
    predictions: list[TrackRecord]
    referring_accuracy: float
    mean_positive_similarity: float
    mean_negative_similarity: float
    per_object: list[dict] = field(default_factory=list)

    def summary(self) -> dict:
        return {
            "expression_id": self.expression.expression_id,
            "expression": self.expression.predicate,
            "referents": sorted({r["track_id"] for r in self.per_object if r["referent"]}),
            "initial_loss": self.loss_trace[0],
            "final_loss": self.loss_trace[-1],
            "referring_accuracy": self.referring_accuracy,
            "mean_positive_similarity": self.mean_positive_similarity,
            "mean_negative_similarity": self.mean_negative_similarity,
        }


def train_toy(cfg: TrainConfig, scene: Scene | None = None,
              expression: ExpressionSpec | None = None) -> TrainResult:
    rng = np.random.default_rng(cfg.seed)
    if scene is None:
        scene = generate_scene(SceneSpec(cfg.n_objects, cfg.n_frames, cfg.seed))
    if expression is None:
        expression = make_expressions(scene, 1, rng)[0]
    model = ToyModel.init(cfg.channels, rng)
    params = model.parameters()
    trace = []
    for step in range(cfg.steps):
        frames = rng.choice(np.arange(1, scene.spec.n_frames + 1), size=min(cfg.frames_per_step, scene.spec.n_frames),
                            replace=False)
        losses = []
        for f in sorted(int(v) for v in frames):
            feats = synth_features(scene, expression, f, cfg.noise, rng, cfg.t_v, cfg.t_a, cfg.channels)
            losses.append(frame_loss(model, scene, expression, feats, cfg)[0])
        loss = losses[0]
        for extra in losses[1:]:
            loss = loss + extra
        loss = loss / len(losses)
        value = loss.item()
        if not np.isfinite(value):
            raise FloatingPointError(f"non-finite loss at step {step}")
        trace.append(value)
        grads = T.backward(loss, params)
        lr = cfg.lr_at(step)
        for p, g in zip(params, grads):
            p.data -= lr * g
    return _evaluate(cfg, model, scene, expression, trace)


def _evaluate(cfg: TrainConfig, model: ToyModel, scene: Scene, expression: ExpressionSpec,
              trace: list[float]) -> TrainResult:
    rng = np.random.default_rng(cfg.seed + 1_000_003)
    referents = set(expression.referents(scene))
    predictions, per_object = [], []
    pos, neg = [], []
    correct = total = 0
    for f in range(1, scene.spec.n_frames + 1):
        feats = synth_features(scene, expression, f, cfg.noise, rng, cfg.t_v, cfg.t_a, cfg.channels)
        out = model.forward(feats.visual, feats.audio)
        prob = out["class_prob"].data.reshape(-1)
        chi = out["sim"].chi.data.reshape(-1)
        boxes = out["boxes"].data
        targets = frame_targets(scene, f)
        assignment = dict(hungarian(matching_cost(prob, boxes, targets, cfg.weights)))
        matched_to = {g: q for q, g in assignment.items()}
        for q in range(cfg.n_queries):
            g = assignment.get(q)
            is_pos = g is not None and scene.objects[g].track_id in referents
            (pos if is_pos else neg).append(chi[q])
            p = Prediction(float(prob[q]), float(chi[q]), Box(*np.clip(boxes[q], 0.0, None)))
            if select_referred(p, cfg.class_threshold, cfg.referring_threshold):
                x, y, w, h = to_pixels(p.box, scene.spec)
                predictions.append(TrackRecord(f, q + 1, x, y, w, h, float(prob[q] * chi[q])))
        for g, obj in enumerate(scene.objects):
            q = matched_to.get(g)
            said = q is not None and select_referred(
                Prediction(float(prob[q]), float(chi[q])), cfg.class_threshold, cfg.referring_threshold)
            truth = obj.track_id in referents
            correct += said == truth
            total += 1
            per_object.append({"frame": f, "track_id": obj.track_id, "query": q, "referent": truth,
                               "predicted": said})
    return TrainResult(
        cfg, model, expression, trace, predictions,
        referring_accuracy=correct / total,
        mean_positive_similarity=float(np.mean(pos)) if pos else float("nan"),
        mean_negative_similarity=float(np.mean(neg)) if neg else float("nan"),
        per_object=per_object,
    )


def save_model(model: ToyModel, path: str | Path) -> None:
    meta = {"mu": model.fusion.mu, "sigma": model.fusion.sigma, "gamma": model.actl.gamma}
    Path(path).write_text(params_to_json(model.named_parameters(), meta) + "\n", encoding="utf-8")


def load_config(path: str | Path) -> TrainConfig:
    return TrainConfig.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
