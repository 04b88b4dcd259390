"""Synthetic attribute-tagged scenes, referring expressions and token features.

Objects move linearly in a normalized [0, 1]^2 image.  Each carries four
categorical attributes; an expression is a conjunction of attribute
equalities, and its referents are exactly the objects satisfying it.

Feature layout per token (C channels)::

    [ class(6) | color(6) | motion(5) | side(4) | cx cy w h | background | 0 ... ]

Visual token ``i`` describes object ``i``; the remaining visual tokens are
background (the background channel set to 1).  Audio tokens repeat the
one-hot encoding of the expression's predicate.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .matching import Box
from .metrics import TrackRecord

VOCAB: dict[str, tuple[str, ...]] = {
    "class": ("pedestrian", "car", "motorcycle", "truck", "bus", "bicycle"),
    "color": ("red", "black", "blue", "gray", "yellow", "white"),
    "motion": ("turning", "driving", "stopping", "walking", "standing"),
    "side": ("left", "right", "forward", "opposite"),
}
ATTRIBUTES = tuple(VOCAB)

_offsets = np.cumsum([0] + [len(v) for v in VOCAB.values()])
BLOCK = {name: (int(_offsets[i]), int(_offsets[i + 1])) for i, name in enumerate(VOCAB)}
POS_START = int(_offsets[-1])            # 21
BACKGROUND_CHANNEL = POS_START + 4       # 25
MIN_CHANNELS = BACKGROUND_CHANNEL + 1


@dataclass
class SceneSpec:
    n_objects: int = 6
    n_frames: int = 10
    seed: int = 0
    image_width: float = 1280.0
    image_height: float = 384.0

    def __post_init__(self):
        if self.n_objects < 1:
            raise ValueError("a scene needs at least one object")
        if self.n_frames < 1:
            raise ValueError("a scene needs at least one frame")


@dataclass
class SceneObject:
    track_id: int
    attributes: dict[str, str]
    start: np.ndarray        # (cx, cy, w, h) at frame 1, normalized
    velocity: np.ndarray     # (dcx, dcy) per frame

    def box_at(self, frame: int) -> Box:
        cx, cy, w, h = self.start
        dx, dy = self.velocity
        return Box(cx + dx * (frame - 1), cy + dy * (frame - 1), w, h)


@dataclass
class Scene:
    spec: SceneSpec
    objects: list[SceneObject]
    records: list[TrackRecord]

    def attribute_table(self) -> list[dict[str, str]]:
        return [dict(o.attributes) for o in self.objects]

    def to_dict(self) -> dict:
        return {
            "n_frames": self.spec.n_frames,
            "seed": self.spec.seed,
            "image_size": [self.spec.image_width, self.spec.image_height],
            "objects": [
                {"id": o.track_id, "attributes": o.attributes,
                 "start": [round(float(v), 6) for v in o.start],
                 "velocity": [round(float(v), 6) for v in o.velocity]}
                for o in self.objects
            ],
        }


@dataclass
class ExpressionSpec:
    expression_id: str
    predicate: dict[str, str]

    def matches(self, attributes: dict[str, str]) -> bool:
        return all(attributes[k] == v for k, v in self.predicate.items())

    def referents(self, scene: Scene) -> list[int]:
        return [o.track_id for o in scene.objects if self.matches(o.attributes)]

    def text(self) -> str:
        a = self.predicate
        words = [a.get("side"), a.get("color"), a.get("motion"), a.get("class")]
        return " ".join(w for w in words if w)


@dataclass
class FrameFeatures:
    frame: int
    visual: np.ndarray       # (T_v, C)
    audio: np.ndarray        # (T_a, C)
    slots: list[int] = field(default_factory=list)   # visual token -> track id (objects only)


def to_pixels(box: Box, spec: SceneSpec) -> tuple[float, float, float, float]:
    """Normalized center-size box -> top-left pixel (x, y, w, h)."""
    w, h = box.w * spec.image_width, box.h * spec.image_height
    return box.cx * spec.image_width - w / 2, box.cy * spec.image_height - h / 2, w, h


def generate_scene(spec: SceneSpec) -> Scene:
    rng = np.random.default_rng(spec.seed)
    objects = []
    span = max(spec.n_frames - 1, 1)
    for i in range(spec.n_objects):
        attrs = {name: str(rng.choice(values)) for name, values in VOCAB.items()}
        w, h = rng.uniform(0.05, 0.15), rng.uniform(0.1, 0.3)
        start = np.array([rng.uniform(0.2, 0.8), rng.uniform(0.3, 0.7), w, h])
        # bounded drift keeps every center inside [0.05, 0.95] over the clip
        velocity = rng.uniform(-0.15, 0.15, size=2) / span
        objects.append(SceneObject(i + 1, attrs, start, velocity))
    records = []
    for f in range(1, spec.n_frames + 1):
        for o in objects:
            records.append(TrackRecord(f, o.track_id, *to_pixels(o.box_at(f), spec), 1.0))
    return Scene(spec, objects, records)


def make_expressions(scene: Scene, n: int, rng: np.random.Generator, n_terms: int = 2) -> list[ExpressionSpec]:
    """``n`` predicates, each copied from a random object's attributes so it has a referent."""
    out = []
    for k in range(n):
        anchor = scene.objects[int(rng.integers(len(scene.objects)))]
        picked = rng.choice(ATTRIBUTES, size=n_terms, replace=False)
        keys = sorted((str(a) for a in picked), key=ATTRIBUTES.index)
        out.append(ExpressionSpec(f"expr_{k:02d}", {key: anchor.attributes[key] for key in keys}))
    return out


def referent_records(scene: Scene, expression: ExpressionSpec) -> list[TrackRecord]:
    keep = set(expression.referents(scene))
    return [r for r in scene.records if r.track_id in keep]


def attribute_code(attributes: dict[str, str], channels: int) -> np.ndarray:
    """One-hot blocks for whatever attributes are present."""
    v = np.zeros(channels)
    for name, value in attributes.items():
        v[BLOCK[name][0] + VOCAB[name].index(value)] = 1.0
    return v


POS_SCALE = 2.0


def position_code(box: Box) -> np.ndarray:
    """Centered, scaled box coordinates so position is on par with the one-hot blocks."""
    return POS_SCALE * (box.as_array() - np.array([0.5, 0.5, 0.1, 0.2]))


def synth_features(scene: Scene, expression: ExpressionSpec, frame: int, noise: float,
                   rng: np.random.Generator, t_v: int = 16, t_a: int = 8, channels: int = 32) -> FrameFeatures:
    if channels < MIN_CHANNELS:
        raise ValueError(f"need at least {MIN_CHANNELS} channels, got {channels}")
    if t_v < len(scene.objects):
        raise ValueError(f"{len(scene.objects)} objects do not fit in {t_v} visual tokens")
    visual = np.zeros((t_v, channels))
    slots = []
    for i, obj in enumerate(scene.objects):
        visual[i] = attribute_code(obj.attributes, channels)
        visual[i, POS_START:POS_START + 4] = position_code(obj.box_at(frame))
        slots.append(obj.track_id)
    visual[len(scene.objects):, BACKGROUND_CHANNEL] = 1.0
    audio = np.tile(attribute_code(expression.predicate, channels), (t_a, 1))
    if noise > 0:
        visual += noise * rng.standard_normal(visual.shape)
        audio += noise * rng.standard_normal(audio.shape)
    return FrameFeatures(frame, visual, audio, slots)
