"""Explicit op graphs with reverse-mode differentiation.

A :class:`Graph` is a build-once list of op records.  Node ids are plain
integers and nodes are appended in topological order, so evaluation is a
single forward sweep and differentiation a single reverse sweep.  All
per-call state lives in an :class:`Evaluation`, which keeps graphs safe to
share between threads.

Example::

    g = Graph()
    x = g.input("image")
    g.set_output(g.mean(g.square(x)))
    ev = Evaluation(g)
    ev.forward({"image": img})
    grad = ev.backward("image")
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from iqarobust.gradcore.ops import OPS, SOBEL_H, SOBEL_V


class GraphError(Exception):
    """Malformed graph or misuse of the evaluation protocol."""


class ShapeError(GraphError):
    pass


class NonFiniteError(FloatingPointError):
    """A forward or backward value contained NaN or Inf."""

    def __init__(self, node, kind, phase):
        super().__init__(f"non-finite value in {phase} pass at node {node} ({kind})")
        self.node = node
        self.kind = kind
        self.phase = phase


@dataclass(frozen=True)
class Node:
    kind: str
    inputs: tuple = ()
    attrs: dict = field(default_factory=dict)


def _frozen(value):
    arr = np.array(value, dtype=np.float64)
    arr.setflags(write=False)
    return arr


class Graph:
    """Append-only op graph.  Builder methods return integer node ids."""

    def __init__(self):
        self.nodes: list[Node] = []
        self.input_names: dict[str, int] = {}
        self.output: int | None = None

    def _add(self, kind, inputs=(), **attrs):
        for i in inputs:
            if i is not None and not (0 <= i < len(self.nodes)):
                raise GraphError(f"node {i} referenced by {kind} does not exist")
        self.nodes.append(Node(kind, tuple(inputs), attrs))
        return len(self.nodes) - 1

    # leaves
    def input(self, name):
        if name in self.input_names:
            raise GraphError(f"duplicate input name {name!r}")
        nid = self._add("input", name=name)
        self.input_names[name] = nid
        return nid

    def const(self, value):
        return self._add("const", value=_frozen(value))

    def set_output(self, node):
        if not 0 <= node < len(self.nodes):
            raise GraphError(f"output node {node} does not exist")
        self.output = node
        return node

    # elementwise
    def add(self, a, b):
        return self._add("add", (a, b))

    def sub(self, a, b):
        return self._add("sub", (a, b))

    def mul(self, a, b):
        return self._add("mul", (a, b))

    def div(self, a, b):
        return self._add("div", (a, b))

    def scale(self, x, factor):
        return self._add("scale", (x,), factor=float(factor))

    def shift(self, x, offset):
        return self._add("shift", (x,), offset=float(offset))

    def square(self, x):
        return self._add("square", (x,))

    def sqrt(self, x, floor=1e-12):
        return self._add("sqrt", (x,), floor=float(floor))

    def relu(self, x):
        return self._add("relu", (x,))

    def sigmoid(self, x):
        return self._add("sigmoid", (x,))

    def clamp(self, x, lo, hi):
        if not lo < hi:
            raise GraphError(f"clamp bounds must satisfy lo < hi, got ({lo}, {hi})")
        return self._add("clamp", (x,), lo=float(lo), hi=float(hi))

    # reductions
    def sum(self, x, axis=None):
        return self._add("sum", (x,), axis=axis)

    def mean(self, x, axis=None):
        return self._add("mean", (x,), axis=axis)

    # spatial
    def conv2d(self, x, weight, bias=None, stride=1, padding=None, pad_mode="reflect"):
        """``weight`` and ``bias`` are node ids (inputs or consts)."""
        if padding is None:
            padding = 0
        if pad_mode not in ("reflect", "zero", "replicate"):
            raise GraphError(f"unknown pad mode {pad_mode!r}")
        return self._add("conv2d", (x, weight, bias), stride=int(stride), padding=int(padding),
                         pad_mode=pad_mode)

    def sobel_h(self, x, pad_mode="reflect"):
        """Horizontal derivative (responds to vertical edges)."""
        return self._add("depthwise3x3", (x,), kernel=SOBEL_H, pad_mode=pad_mode)

    def sobel_v(self, x, pad_mode="reflect"):
        """Vertical derivative (responds to horizontal edges)."""
        return self._add("depthwise3x3", (x,), kernel=SOBEL_V, pad_mode=pad_mode)

    def maxpool(self, x, size=2, stride=None):
        return self._add("maxpool", (x,), size=int(size), stride=int(stride or size))

    def avgpool(self, x, size=2, stride=None):
        return self._add("avgpool", (x,), size=int(size), stride=int(stride or size))

    def global_avg_pool(self, x):
        return self._add("global_avg_pool", (x,))

    def affine(self, x, weight, bias=None):
        return self._add("affine", (x, weight, bias))

    def crop(self, x, top, left, height, width):
        return self._add("crop", (x,), top=int(top), left=int(left), height=int(height),
                         width=int(width))

    def resize(self, x, height, width):
        return self._add("resize", (x,), height=int(height), width=int(width))

    def upsample(self, x, factor=2):
        return self._add("upsample", (x,), factor=int(factor))

    def concat(self, a, b):
        return self._add("concat", (a, b))

    def __len__(self):
        return len(self.nodes)


class Evaluation:
    """One forward/backward context over a shared :class:`Graph`."""

    def __init__(self, graph: Graph):
        if graph.output is None:
            raise GraphError("graph has no output node")
        self.graph = graph
        self.values: list | None = None
        self.caches: list | None = None

    def forward(self, inputs):
        g = self.graph
        missing = set(g.input_names) - set(inputs)
        if missing:
            raise GraphError(f"unbound graph inputs: {sorted(missing)}")
        values: list = [None] * len(g.nodes)
        caches: list = [None] * len(g.nodes)
        for nid, node in enumerate(g.nodes):
            if node.kind == "input":
                val = np.asarray(inputs[node.attrs["name"]], dtype=np.float64)
                if not np.all(np.isfinite(val)):
                    raise NonFiniteError(nid, "input", "forward")
                values[nid] = val
                continue
            if node.kind == "const":
                values[nid] = node.attrs["value"]
                continue
            op = OPS[node.kind]
            ins = [None if i is None else values[i] for i in node.inputs]
            try:
                with np.errstate(over="ignore", invalid="ignore"):
                    out, cache = op.forward(ins, node.attrs)
            except (ValueError, IndexError) as exc:
                raise ShapeError(f"node {nid} ({node.kind}): {exc}") from exc
            except FloatingPointError as exc:
                raise NonFiniteError(nid, node.kind, "forward") from exc
            if not np.all(np.isfinite(out)):
                raise NonFiniteError(nid, node.kind, "forward")
            values[nid] = out
            caches[nid] = cache
        self.values, self.caches = values, caches
        return values[g.output]

    @property
    def output(self):
        if self.values is None:
            raise GraphError("forward has not been run")
        return self.values[self.graph.output]

    def branch_signature(self):
        """Digest of the active piece of every piecewise op (ReLU, max-pool, clamp, sqrt floor).

        Two inputs with equal signatures lie on the same smooth piece of the
        graph, so finite differences between them are meaningful.
        """
        if self.values is None:
            raise GraphError("forward has not been run")
        h = hashlib.sha256()
        for nid, node in enumerate(self.graph.nodes):
            op = OPS.get(node.kind)
            if op is None:
                continue
            ins = [None if i is None else self.values[i] for i in node.inputs]
            pattern = op.branch(ins, self.values[nid], self.caches[nid], node.attrs)
            if pattern is not None:
                h.update(nid.to_bytes(8, "little"))
                h.update(np.ascontiguousarray(pattern).tobytes())
        return h.hexdigest()

    def backward(self, wrt, seed=None):
        """Vector-Jacobian product of the output with respect to named inputs.

        ``wrt`` is an input name or a list of names; the return value mirrors
        it (one array, or a dict).  Without ``seed`` the output must be scalar.
        """
        if self.values is None:
            raise GraphError("backward called before forward")
        g = self.graph
        names = [wrt] if isinstance(wrt, str) else list(wrt)
        for name in names:
            if name not in g.input_names:
                raise GraphError(f"unknown input {name!r}")
        out_val = self.values[g.output]
        if seed is None:
            if out_val.size != 1:
                raise GraphError(f"backward needs a scalar output, got shape {out_val.shape}")
            seed = np.ones_like(out_val)
        else:
            seed = np.asarray(seed, dtype=np.float64)
            if seed.shape != out_val.shape:
                raise ShapeError(f"seed shape {seed.shape} != output shape {out_val.shape}")

        # only propagate through nodes that depend on a requested input
        targets = {g.input_names[n] for n in names}
        live = [False] * len(g.nodes)
        for nid, node in enumerate(g.nodes):
            live[nid] = nid in targets or any(i is not None and live[i] for i in node.inputs)

        grads: list = [None] * len(g.nodes)
        grads[g.output] = seed
        for nid in range(g.output, -1, -1):
            node = g.nodes[nid]
            gout = grads[nid]
            if gout is None or not live[nid] or node.kind in ("input", "const"):
                continue
            ins = [None if i is None else self.values[i] for i in node.inputs]
            in_grads = OPS[node.kind].backward(gout, ins, self.values[nid], self.caches[nid],
                                               node.attrs)
            for i, gi in zip(node.inputs, in_grads):
                if i is None or gi is None or not live[i]:
                    continue
                if not np.all(np.isfinite(gi)):
                    raise NonFiniteError(nid, node.kind, "backward")
                grads[i] = gi if grads[i] is None else grads[i] + gi

        result = {}
        for name in names:
            nid = g.input_names[name]
            gr = grads[nid]
            result[name] = np.zeros_like(self.values[nid]) if gr is None else gr
        return result[names[0]] if isinstance(wrt, str) else result


def forward(graph, inputs):
    """Evaluate ``graph``; returns ``(output, evaluation)`` for a later backward."""
    ev = Evaluation(graph)
    out = ev.forward(inputs)
    return out, ev


def value_and_grad(graph, inputs, wrt):
    ev = Evaluation(graph)
    out = ev.forward(inputs)
    return out, ev.backward(wrt)
