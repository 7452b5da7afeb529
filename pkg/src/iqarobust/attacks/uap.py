"""Universal adversarial perturbations: three trainers, application and file I/O.

A :class:`Perturbation` pattern is normalised to unit L-infinity at the end
of training and applied as ``clip(image + amplitude * pattern, 0, 1)``, so
one amplitude sweep means the same thing for every trainer.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from iqarobust.attacks.loss import attack_loss_and_gradient
from iqarobust.attacks.spec import AttackError, AttackResult, AttackSpec
from iqarobust.gradcore import AdamState, Evaluation, Graph, adam_step
from iqarobust.metrics import MetricFault, proxy_scores, score, score_and_gradient

FORMAT = "iqarobust-uap/1"


@dataclass
class Perturbation:
    pattern: np.ndarray
    trained_on: str
    target_metric: str
    amplitude: float
    kind: str
    seed: int
    flags: list[str] = field(default_factory=list)
    history: list[float] = field(default_factory=list)

    def header(self):
        return {
            "format": FORMAT,
            "kind": self.kind,
            "target_metric": self.target_metric,
            "trained_on": self.trained_on,
            "amplitude": self.amplitude,
            "seed": self.seed,
            "shape": list(self.pattern.shape),
            "dtype": "<f8",
            "flags": list(self.flags),
            "history": list(self.history),
        }

    def save(self, path):
        """Write ``<path>`` (JSON header) and ``<path stem>.bin`` (little-endian float64)."""
        path = Path(path)
        blob = path.with_suffix(".bin")
        header = self.header()
        header["blob"] = blob.name
        blob.write_bytes(np.ascontiguousarray(self.pattern, dtype="<f8").tobytes())
        path.write_text(json.dumps(header, indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path):
        path = Path(path)
        header = json.loads(path.read_text())
        if header.get("format") != FORMAT:
            raise ValueError(f"{path}: not a {FORMAT} file")
        raw = (path.parent / header["blob"]).read_bytes()
        shape = tuple(header["shape"])
        if len(raw) != 8 * math.prod(shape):
            raise ValueError(f"{path}: pattern blob has {len(raw)} bytes, expected {8 * math.prod(shape)}")
        pattern = np.frombuffer(raw, dtype="<f8").reshape(shape).astype(np.float64)
        return cls(pattern, header["trained_on"], header["target_metric"], header["amplitude"],
                   header["kind"], header["seed"], header["flags"], header["history"])


def _stack(trainset):
    images = [np.asarray(im, dtype=np.float64) for im in trainset]
    if not images:
        raise AttackError("UAP training set is empty")
    shape = images[0].shape
    for im in images:
        if im.shape != shape:
            raise AttackError(f"UAP training images must share one resolution; got {shape} and {im.shape}")
    return images


def unit_linf(pattern):
    """Scale to max-abs 1; a zero pattern stays zero."""
    peak = np.abs(pattern).max()
    return pattern / peak if peak > 0 else pattern


def fit_pattern(pattern, shape):
    """Tile (if smaller) then centre-crop ``pattern`` to the spatial size of ``shape``."""
    h, w = shape[:2]
    ph, pw = pattern.shape[:2]
    reps = (-(-h // ph), -(-w // pw)) + (1,) * (pattern.ndim - 2)
    tiled = np.tile(pattern, reps)
    th, tw = tiled.shape[:2]
    top, left = (th - h) // 2, (tw - w) // 2
    return tiled[top:top + h, left:left + w]


def apply_uap(perturbation, image, amplitude=None):
    """clip(image + amplitude * pattern, 0, 1) with the pattern tiled/cropped to the image."""
    amplitude = perturbation.amplitude if amplitude is None else amplitude
    image = np.asarray(image, dtype=np.float64)
    pattern = fit_pattern(perturbation.pattern, image.shape)
    return np.clip(image + amplitude * pattern, 0.0, 1.0)


def uap_attack(metric, image, perturbation, spec: AttackSpec, image_id="image", amplitude=None):
    """Apply a trained perturbation to one image and score it like any other attack."""
    original = np.asarray(image, dtype=np.float64)
    attacked = apply_uap(perturbation, original, amplitude)
    flags = ["no-op"] if np.array_equal(attacked, original) else []
    return AttackResult(
        image_id=image_id,
        score_before=score(metric, original),
        score_after=score(metric, attacked),
        proxy=proxy_scores(original, attacked),
        steps_used=0,
        spec_digest=spec.digest(),
        flags=flags,
        extra={"amplitude": perturbation.amplitude if amplitude is None else amplitude},
        attacked=attacked,
    )


def train_uap_cumulative(metric, trainset, spec: AttackSpec, trainset_id="train"):
    """Mean of the per-image one-step perturbations -alpha * sign(grad J)."""
    images = _stack(trainset)
    total = np.zeros_like(images[0])
    for im in images:
        _, grad = attack_loss_and_gradient(metric, im)
        total += -spec.alpha * np.sign(grad)
    pattern = unit_linf(total / len(images))
    flags = [] if pattern.any() else ["degenerate"]
    return Perturbation(pattern, trainset_id, metric.name, spec.amplitude, spec.kind, spec.seed,
                        flags)


def _batch_pattern_gradient(metric, batch, pattern, amplitude, history):
    """Mean score of clip(I + a * p) over ``batch`` and its gradient with respect to p."""
    total_score = 0.0
    grad = np.zeros_like(pattern)
    for im in batch:
        pre = im + amplitude * pattern
        try:
            s, g = score_and_gradient(metric, np.clip(pre, 0.0, 1.0))
        except MetricFault as exc:
            raise AttackError(f"UAP training diverged: {exc}", history) from exc
        total_score += s
        grad += amplitude * np.where((pre > 0.0) & (pre < 1.0), g, 0.0)
    return total_score / len(batch), grad / len(batch)


def _training_options(spec):
    epochs = int(spec.extra.get("epochs", 5))
    batch_size = int(spec.extra.get("batch_size", 4))
    lr = float(spec.extra.get("lr", 1e-3))
    if epochs < 0 or batch_size < 1:
        raise ValueError("UAP training needs epochs >= 0 and batch_size >= 1")
    return epochs, batch_size, lr


def _batches(rng, n, batch_size):
    order = rng.permutation(n)
    return [order[i:i + batch_size] for i in range(0, n, batch_size)]


def train_uap_optimized(metric, trainset, spec: AttackSpec, trainset_id="train"):
    """Adam on the pattern, maximising the mean score of clip(I + a * p); p clamped to [-1, 1].

    Options in ``spec.extra``: epochs (5), batch_size (4), lr (1e-3).
    ``history`` holds the mean training loss (negated score) per epoch.
    """
    images = _stack(trainset)
    epochs, batch_size, lr = _training_options(spec)
    rng = np.random.default_rng(spec.seed)
    pattern = np.zeros_like(images[0])
    state = AdamState(lr=lr)
    history = []
    for _ in range(epochs):
        losses = []
        for idx in _batches(rng, len(images), batch_size):
            mean_score, grad = _batch_pattern_gradient(metric, [images[i] for i in idx], pattern,
                                                       spec.amplitude, history + losses)
            losses.append(-mean_score)
            if not (math.isfinite(mean_score) and np.all(np.isfinite(grad))):
                raise AttackError("optimized UAP training diverged", history + losses)
            pattern = np.clip(adam_step(state, pattern, -grad), -1.0, 1.0)
        history.append(float(np.mean(losses)))
    pattern = unit_linf(pattern)
    flags = [] if pattern.any() else ["degenerate"]
    return Perturbation(pattern, trainset_id, metric.name, spec.amplitude, spec.kind, spec.seed,
                        flags, history)


class Generator:
    """Small U-Net: ``depth`` avg-pool levels down, nearest-upsample + concat skips back up.

    Channel widths double per level from ``width``, capped at 16.  The final
    1x1 convolution starts at zero, so an untrained generator emits a zero
    pattern; its output is clamped to [-1, 1].
    """

    def __init__(self, shape, width=8, depth=2, noise_channels=3, rng=None):
        h, w, c = shape
        if depth < 1:
            raise ValueError("generator depth must be >= 1")
        if h % (2 ** depth) or w % (2 ** depth):
            raise ValueError(f"training resolution {h}x{w} must be divisible by {2 ** depth}")
        rng = rng or np.random.default_rng(0)
        self.shape = shape
        self.noise_channels = noise_channels
        widths = [min(width * 2 ** k, 16) for k in range(depth + 1)]
        self.params = {}
        g = Graph()
        z = g.input("noise")

        def conv(name, x, cin, cout, k=3, zero=False):
            wshape = (k, k, cin, cout)
            self.params[f"{name}.w"] = (np.zeros(wshape) if zero else
                                        rng.standard_normal(wshape) * math.sqrt(2.0 / (k * k * cin)))
            self.params[f"{name}.b"] = np.zeros(cout)
            return g.conv2d(x, g.input(f"{name}.w"), g.input(f"{name}.b"), padding=k // 2,
                            pad_mode="zero")

        skips = []
        x, cin = z, noise_channels
        for k in range(depth):
            x = g.relu(conv(f"enc{k}", x, cin, widths[k]))
            skips.append((x, widths[k]))
            x = g.avgpool(x, 2)
            cin = widths[k]
        x = g.relu(conv("mid", x, cin, widths[depth]))
        cin = widths[depth]
        for k in reversed(range(depth)):
            skip, cskip = skips[k]
            x = g.concat(g.upsample(x, 2), skip)
            x = g.relu(conv(f"dec{k}", x, cin + cskip, widths[k]))
            cin = widths[k]
        g.set_output(g.clamp(conv("head", x, cin, c, k=1, zero=True), -1.0, 1.0))
        self.graph = g

    def noise(self, rng):
        h, w, _ = self.shape
        return rng.uniform(-1.0, 1.0, size=(h, w, self.noise_channels))

    def evaluate(self, z):
        ev = Evaluation(self.graph)
        ev.forward({"noise": z, **self.params})
        return ev


def train_uap_generative(metric, trainset, spec: AttackSpec, trainset_id="train"):
    """Train a noise-to-pattern generator to maximise the mean attacked score, then freeze one pattern.

    Options in ``spec.extra``: epochs (5), batch_size (4), lr (1e-3),
    width (8), depth (2), noise_channels (3).  Each batch draws fresh
    uniform noise; the frozen pattern comes from a separate seeded draw.
    """
    images = _stack(trainset)
    epochs, batch_size, lr = _training_options(spec)
    rng = np.random.default_rng(spec.seed)
    gen = Generator(images[0].shape, width=int(spec.extra.get("width", 8)),
                    depth=int(spec.extra.get("depth", 2)),
                    noise_channels=int(spec.extra.get("noise_channels", 3)), rng=rng)
    names = sorted(gen.params)
    states = {n: AdamState(lr=lr) for n in names}
    history = []
    for _ in range(epochs):
        losses = []
        for idx in _batches(rng, len(images), batch_size):
            ev = gen.evaluate(gen.noise(rng))
            pattern = ev.output
            mean_score, grad_p = _batch_pattern_gradient(metric, [images[i] for i in idx], pattern,
                                                         spec.amplitude, history + losses)
            losses.append(-mean_score)
            if not (math.isfinite(mean_score) and np.all(np.isfinite(grad_p))):
                raise AttackError("generative UAP training diverged", history + losses)
            grads = ev.backward(names, seed=-grad_p)
            for n in names:
                gen.params[n] = adam_step(states[n], gen.params[n], grads[n])
        history.append(float(np.mean(losses)))
    final_noise = gen.noise(np.random.default_rng([spec.seed, 1]))
    pattern = unit_linf(gen.evaluate(final_noise).output)
    flags = [] if pattern.any() else ["degenerate"]
    return Perturbation(pattern, trainset_id, metric.name, spec.amplitude, spec.kind, spec.seed,
                        flags, history)


TRAINERS = {
    "uap-cumulative": train_uap_cumulative,
    "uap-optimized": train_uap_optimized,
    "uap-generative": train_uap_generative,
}


def train_uap(metric, trainset, spec: AttackSpec, trainset_id="train"):
    if spec.kind not in TRAINERS:
        raise AttackError(f"{spec.kind} is not a UAP trainer")
    return TRAINERS[spec.kind](metric, trainset, spec, trainset_id)
