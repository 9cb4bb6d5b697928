"""Declarative model specs, construction, forward execution and weight files.

A :class:`ModelSpec` is an ordered list of :class:`LayerSpec` entries; a
``branch_concat`` layer carries parallel sub-lists that are evaluated on the
same input and concatenated along channels. :func:`build` validates the shape
chain and turns the spec into an executable :class:`Model`.

Parameters live in a plain dict keyed by *parameter slot*: every convolution,
including the two inside each residual block, gets the next integer in
depth-first layer order.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from . import tensor_ops as T
from .tensor_ops import ConvGeometry

LAYER_KINDS = ("conv", "residual_block", "pool", "upsample", "branch_concat", "activation")
DIMENSIONALITIES = ("one_d", "two_d")

WEIGHTS_MAGIC = b"E2CW"
WEIGHTS_VERSION = 1

ParamStore = dict  # slot -> (weights, bias)


class SpecError(ValueError):
    """A model spec failed validation; ``path`` locates the offending layer."""

    def __init__(self, message: str, path: str | None = None):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path


class WeightsFileError(ValueError):
    """A weights file is corrupt, truncated, or does not match the spec."""


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    geometry: ConvGeometry | None = None
    activation: str = "linear"
    pool: str = "max"
    factor: tuple[int, ...] = ()
    branches: tuple[tuple["LayerSpec", ...], ...] = ()

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise SpecError(f"unknown layer kind {self.kind!r}")
        if self.activation not in T.ACTIVATIONS:
            raise SpecError(f"unknown activation {self.activation!r}")
        if self.kind in ("conv", "residual_block", "pool") and self.geometry is None:
            raise SpecError(f"{self.kind} layer needs a geometry")
        if self.kind == "residual_block":
            g = self.geometry
            if g.in_channels != g.out_channels or any(s != 1 for s in g.stride):
                raise SpecError("residual_block needs equal in/out channels and stride 1")
            if any(p != k // 2 or k % 2 == 0 for p, k in zip(g.padding, g.kernel)):
                raise SpecError("residual_block needs odd kernels with 'same' padding")
        if self.kind == "upsample" and (not self.factor or any(f < 1 for f in self.factor)):
            raise SpecError("upsample layer needs positive factors")
        if self.kind == "branch_concat" and not self.branches:
            raise SpecError("branch_concat needs at least one branch")

    def to_dict(self) -> dict:
        d: dict = {"kind": self.kind}
        g = self.geometry
        if g is not None:
            d["kernel"] = list(g.kernel)
            d["stride"] = list(g.stride)
            d["padding"] = list(g.padding)
            if self.kind != "pool":
                d["in_channels"] = g.in_channels
                d["out_channels"] = g.out_channels
        if self.kind in ("conv", "activation"):
            d["activation"] = self.activation
        if self.kind == "pool":
            d["pool"] = self.pool
        if self.kind == "upsample":
            d["factor"] = list(self.factor)
        if self.kind == "branch_concat":
            d["branches"] = [[layer.to_dict() for layer in b] for b in self.branches]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "LayerSpec":
        geom = None
        if "kernel" in d:
            geom = ConvGeometry(
                tuple(d["kernel"]),
                tuple(d.get("stride", ())),
                tuple(d.get("padding", ())),
                d.get("in_channels", 1),
                d.get("out_channels", 1),
            )
        return cls(
            kind=d["kind"],
            geometry=geom,
            activation=d.get("activation", "linear"),
            pool=d.get("pool", "max"),
            factor=tuple(d.get("factor", ())),
            branches=tuple(tuple(cls.from_dict(x) for x in b) for b in d.get("branches", ())),
        )


# Constructors for the common 1-D layer shapes.


def conv(c_in: int, c_out: int, k: int, stride: int = 1, pad: int | None = None, act: str = "relu"):
    pad = k // 2 if pad is None else pad
    return LayerSpec("conv", ConvGeometry((k,), (stride,), (pad,), c_in, c_out), activation=act)


def residual_block(channels: int, k: int) -> LayerSpec:
    return LayerSpec("residual_block", ConvGeometry.same(k, channels, channels))


def upsample(f: int) -> LayerSpec:
    return LayerSpec("upsample", factor=(f,))


def pool(kind: str, window: int, stride: int | None = None) -> LayerSpec:
    return LayerSpec("pool", ConvGeometry((window,), (stride or window,)), pool=kind)


def branch_concat(*branches: Sequence[LayerSpec]) -> LayerSpec:
    return LayerSpec("branch_concat", branches=tuple(tuple(b) for b in branches))


def activation(kind: str) -> LayerSpec:
    return LayerSpec("activation", activation=kind)


@dataclass(frozen=True)
class ModelSpec:
    name: str
    dimensionality: str
    input_shape: tuple[int, ...]
    layers: tuple[LayerSpec, ...]
    seed: int = 0

    def __post_init__(self):
        if self.dimensionality not in DIMENSIONALITIES:
            raise SpecError(f"unknown dimensionality {self.dimensionality!r}")
        object.__setattr__(self, "input_shape", tuple(int(v) for v in self.input_shape))
        object.__setattr__(self, "layers", tuple(self.layers))

    @property
    def spatial_dims(self) -> int:
        return 1 if self.dimensionality == "one_d" else 2

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "dimensionality": self.dimensionality,
            "input_shape": list(self.input_shape),
            "seed": self.seed,
            "layers": [layer.to_dict() for layer in self.layers],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        return cls(
            name=d["name"],
            dimensionality=d["dimensionality"],
            input_shape=tuple(d["input_shape"]),
            layers=tuple(LayerSpec.from_dict(x) for x in d["layers"]),
            seed=int(d.get("seed", 0)),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "ModelSpec":
        return cls.from_dict(json.loads(text))

    def with_seed(self, seed: int) -> "ModelSpec":
        return ModelSpec(self.name, self.dimensionality, self.input_shape, self.layers, seed)


# --- shape validation -------------------------------------------------------


def _layer_output_shape(layer: LayerSpec, shape: tuple[int, ...], nd: int, path: str):
    c, spatial = shape[0], shape[1:]
    g = layer.geometry
    if g is not None and g.ndim != nd:
        raise SpecError(f"{g.ndim}-D geometry in a {nd}-D model", path)
    try:
        if layer.kind == "conv":
            if c != g.in_channels:
                raise SpecError(f"conv expects {g.in_channels} input channels, got {c}", path)
            return (g.out_channels,) + g.output_size(spatial)
        if layer.kind == "residual_block":
            if c != g.in_channels:
                raise SpecError(f"residual_block expects {g.in_channels} channels, got {c}", path)
            return shape
        if layer.kind == "pool":
            return (c,) + g.output_size(spatial)
    except T.GeometryError as exc:
        raise SpecError(str(exc), path) from None
    if layer.kind == "upsample":
        if len(layer.factor) != nd:
            raise SpecError(f"upsample needs {nd} factors, got {layer.factor}", path)
        return (c,) + tuple(n * f for n, f in zip(spatial, layer.factor))
    if layer.kind == "activation":
        return shape
    # branch_concat
    outs = [
        _chain_shapes(branch, shape, nd, f"{path}.branches[{i}]")[-1]
        for i, branch in enumerate(layer.branches)
    ]
    if len({o[1:] for o in outs}) != 1:
        raise SpecError(f"branches disagree on spatial shape: {outs}", path)
    return (sum(o[0] for o in outs),) + outs[0][1:]


def _chain_shapes(layers, shape, nd, prefix) -> list[tuple[int, ...]]:
    shapes = [tuple(shape)]
    for i, layer in enumerate(layers):
        shapes.append(_layer_output_shape(layer, shapes[-1], nd, f"{prefix}[{i}]"))
    return shapes


def infer_shapes(spec: ModelSpec) -> list[tuple[int, ...]]:
    """Input shape followed by the output shape of every top-level layer."""
    nd = spec.spatial_dims
    if len(spec.input_shape) != nd + 1:
        raise SpecError(f"input shape {spec.input_shape} is not [C, ...{nd} spatial]")
    if nd == 2 and spec.input_shape[1] != 1:
        raise SpecError("two_d models take [C, 1, L] inputs")
    for layer, path in _walk(spec.layers, "layers"):
        if nd == 2 and layer.geometry is not None and layer.geometry.kernel[0] != 1:
            raise SpecError("two_d layers must have unit height", path)
    shapes = _chain_shapes(spec.layers, spec.input_shape, nd, "layers")
    if shapes[-1] != spec.input_shape:
        raise SpecError(f"output shape {shapes[-1]} differs from input shape {spec.input_shape}", "layers")
    return shapes


def _walk(layers, prefix) -> Iterator[tuple[LayerSpec, str]]:
    for i, layer in enumerate(layers):
        path = f"{prefix}[{i}]"
        yield layer, path
        for j, branch in enumerate(layer.branches):
            yield from _walk(branch, f"{path}.branches[{j}]")


def param_shapes(spec: ModelSpec) -> dict[int, tuple[tuple[int, ...], tuple[int, ...]]]:
    """Slot -> (weight shape, bias shape) in depth-first order."""
    shapes = {}
    for layer, _ in _walk(spec.layers, "layers"):
        g = layer.geometry
        if layer.kind == "conv":
            shapes[len(shapes)] = ((g.out_channels, g.in_channels) + g.kernel, (g.out_channels,))
        elif layer.kind == "residual_block":
            for _ in range(2):
                shapes[len(shapes)] = ((g.out_channels, g.in_channels) + g.kernel, (g.out_channels,))
    return shapes


def count_params(spec: ModelSpec) -> int:
    return sum(int(np.prod(w)) + int(np.prod(b)) for w, b in param_shapes(spec).values())


# --- executable ops ---------------------------------------------------------
#
# Ops run on the channel-first layout [C, N, ...spatial]. Each forward takes
# an array and returns (y, cache); backward
# takes (dy, cache, params, grads) and returns dx, accumulating parameter
# gradients into ``grads``.


class ActivationPattern:
    """Records ReLU masks and max-pool choices on one pass and replays them on later passes.

    Replaying freezes the network on the piecewise-linear region of the
    recorded input, which agrees with the true function in a neighbourhood of
    that point; gradient checks use it so finite differences never straddle a
    kink.
    """

    def __init__(self):
        self.entries: list[np.ndarray] = []
        self.replaying = False
        self._pos = 0

    def replay(self) -> "ActivationPattern":
        self.replaying, self._pos = True, 0
        return self

    def _next(self, make):
        if self.replaying:
            e = self.entries[self._pos]
            self._pos += 1
            return e
        e = make()
        self.entries.append(e)
        return e

    def relu(self, z):
        return z * self._next(lambda: z > 0)

    def argmax(self, make):
        return self._next(make)


def _relu(z, pattern):
    return np.maximum(z, 0) if pattern is None else pattern.relu(z)


class _ConvOp:
    def __init__(self, slot: int, geom: ConvGeometry, act: str):
        self.slot, self.geom, self.act = slot, geom, act
        if geom.ndim == 1:
            self._fwd, self._bwd = T.conv1d_cn, T.conv1d_cn_backward
        else:
            self._fwd, self._bwd = T.conv2d_cn, T.conv2d_cn_backward

    def forward(self, x, params, pattern=None):
        w, b = params[self.slot]
        z, cols = self._fwd(x, w, b, self.geom)
        y = _relu(z, pattern) if self.act == "relu" else z
        return y, (cols, x.shape, y)

    def backward(self, dy, cache, params, grads):
        cols, x_shape, y = cache
        dz = T.activation_backward(dy, y, self.act)
        w, _ = params[self.slot]
        dx, dw, db = self._bwd(dz, cols, x_shape, w, self.geom)
        grads[self.slot] = (dw, db)
        return dx


class _ResidualOp:
    def __init__(self, slot: int, geom: ConvGeometry):
        self.inner = _ConvOp(slot, geom, "relu")
        self.outer = _ConvOp(slot + 1, geom, "linear")

    def forward(self, x, params, pattern=None):
        h, c1 = self.inner.forward(x, params, pattern)
        z, c2 = self.outer.forward(h, params, pattern)
        y = _relu(z + x, pattern)
        return y, (c1, c2, y)

    def backward(self, dy, cache, params, grads):
        c1, c2, y = cache
        dz = dy * (y > 0)
        dh = self.outer.backward(dz, c2, params, grads)
        return dz + self.inner.backward(dh, c1, params, grads)


class _PoolOp:
    def __init__(self, geom: ConvGeometry, kind: str):
        self.geom, self.kind = geom, kind

    def forward(self, x, params, pattern=None):
        if pattern is not None and self.kind == "max":
            idx = pattern.argmax(lambda: T.pool_forward(x, "max", self.geom)[1])
            y, idx = T.pool_forward(x, self.kind, self.geom, index=idx)
        else:
            y, idx = T.pool_forward(x, self.kind, self.geom)
        return y, (idx, x.shape)

    def backward(self, dy, cache, params, grads):
        idx, x_shape = cache
        return T.pool_backward(dy, idx, x_shape, self.kind, self.geom)


class _UpsampleOp:
    def __init__(self, factor):
        self.factor = factor

    def forward(self, x, params, pattern=None):
        return T.upsample(x, self.factor), None

    def backward(self, dy, cache, params, grads):
        return T.upsample_backward(dy, self.factor)


class _ActivationOp:
    def __init__(self, kind: str):
        self.kind = kind

    def forward(self, x, params, pattern=None):
        y = _relu(x, pattern) if self.kind == "relu" else x
        return y, y

    def backward(self, dy, cache, params, grads):
        return T.activation_backward(dy, cache, self.kind)


class _BranchOp:
    def __init__(self, branches: list[list]):
        self.branches = branches

    def forward(self, x, params, pattern=None):
        outs, caches = [], []
        for ops in self.branches:
            y, c = run_forward(ops, x, params, pattern)
            outs.append(y)
            caches.append(c)
        return np.concatenate(outs, axis=0), (caches, [o.shape[0] for o in outs])

    def backward(self, dy, cache, params, grads):
        caches, widths = cache
        dx = None
        start = 0
        for ops, c, w in zip(self.branches, caches, widths):
            part = run_backward(ops, c, dy[start : start + w], params, grads)
            dx = part if dx is None else dx + part
            start += w
        return dx


def _compile(layers, counter: list[int]) -> list:
    ops = []
    for layer in layers:
        if layer.kind == "conv":
            ops.append(_ConvOp(counter[0], layer.geometry, layer.activation))
            counter[0] += 1
        elif layer.kind == "residual_block":
            ops.append(_ResidualOp(counter[0], layer.geometry))
            counter[0] += 2
        elif layer.kind == "pool":
            ops.append(_PoolOp(layer.geometry, layer.pool))
        elif layer.kind == "upsample":
            ops.append(_UpsampleOp(layer.factor))
        elif layer.kind == "activation":
            ops.append(_ActivationOp(layer.activation))
        else:
            ops.append(_BranchOp([_compile(b, counter) for b in layer.branches]))
    return ops


def run_forward(ops, x, params, pattern=None):
    caches = []
    for op in ops:
        x, c = op.forward(x, params, pattern)
        caches.append(c)
    return x, caches


def run_backward(ops, caches, dy, params, grads):
    for op, c in zip(reversed(ops), reversed(caches)):
        dy = op.backward(dy, c, params, grads)
    return dy


class Model:
    """A validated spec plus its parameters, executable on batched or single inputs."""

    def __init__(self, spec: ModelSpec, params: ParamStore, dtype=np.float32):
        self.spec = spec
        self.dtype = np.dtype(dtype)
        self.shapes = infer_shapes(spec)
        expected = param_shapes(spec)
        _check_store(expected, params)
        self.params: ParamStore = {
            k: (np.ascontiguousarray(w, self.dtype), np.ascontiguousarray(b, self.dtype))
            for k, (w, b) in sorted(params.items())
        }
        self.ops = _compile(spec.layers, [0])

    @property
    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in self.params.values())

    def _to_cn(self, x) -> tuple[np.ndarray, bool]:
        x = np.asarray(x, dtype=self.dtype)
        ishape = self.spec.input_shape
        if x.shape == ishape:
            return x[:, None], True
        if x.ndim == len(ishape) + 1 and x.shape[1:] == ishape:
            return np.ascontiguousarray(np.swapaxes(x, 0, 1)), False
        raise T.ShapeError(f"input shape {x.shape} does not match spec input {ishape}", axis="input")

    def forward(self, x, pattern: ActivationPattern | None = None) -> np.ndarray:
        """``[C, ...]`` -> ``[C', ...]``, or batched ``[N, C, ...]`` -> ``[N, C', ...]``."""
        xcn, squeeze = self._to_cn(x)
        y, _ = run_forward(self.ops, xcn, self.params, pattern)
        return T._from_cn(y, squeeze)

    __call__ = forward

    def forward_with_cache(self, x):
        """Batched forward that keeps the activations needed by :meth:`backward_from`."""
        xcn, squeeze = self._to_cn(x)
        if squeeze:
            raise T.ShapeError("forward_with_cache needs a batched [N, C, ...] input", axis="batch")
        y, caches = run_forward(self.ops, xcn, self.params)
        return T._from_cn(y, False), caches

    def backward_from(self, caches, dy) -> tuple[np.ndarray, ParamStore]:
        """Reverse pass for a batched ``dy``; returns ``(dx, grads)``."""
        grads: ParamStore = {}
        dycn = np.ascontiguousarray(np.swapaxes(np.asarray(dy, self.dtype), 0, 1))
        dx = run_backward(self.ops, caches, dycn, self.params, grads)
        return T._from_cn(dx, False), dict(sorted(grads.items()))

    def astype(self, dtype) -> "Model":
        return Model(self.spec, self.params, dtype)

    def copy(self) -> "Model":
        return Model(self.spec, {k: (w.copy(), b.copy()) for k, (w, b) in self.params.items()}, self.dtype)


def _check_store(expected, params):
    problems = []
    for k in sorted(set(expected) | set(params)):
        if k not in params:
            problems.append(f"slot {k}: missing (expected weights {expected[k][0]})")
        elif k not in expected:
            problems.append(f"slot {k}: unexpected entry with weights {tuple(np.shape(params[k][0]))}")
        else:
            found = (tuple(np.shape(params[k][0])), tuple(np.shape(params[k][1])))
            if found != expected[k]:
                problems.append(f"slot {k}: expected {expected[k]}, found {found}")
    if problems:
        raise WeightsFileError("parameter store does not match spec:\n  " + "\n  ".join(problems))


def init_params(spec: ModelSpec) -> ParamStore:
    """He-normal weights (std sqrt(2 / fan_in)) and zero biases from ``spec.seed``.

    Values are drawn once and rounded to float32 so 32- and 64-bit builds of
    the same spec share identical parameters.
    """
    rng = np.random.default_rng(spec.seed)
    params = {}
    for slot, (wshape, bshape) in param_shapes(spec).items():
        fan_in = int(np.prod(wshape[1:]))
        w = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=wshape).astype(np.float32)
        params[slot] = (w, np.zeros(bshape, dtype=np.float32))
    return params


def build(spec: ModelSpec, dtype=np.float32) -> Model:
    infer_shapes(spec)
    return Model(spec, init_params(spec), dtype)


def forward(model: Model, x) -> np.ndarray:
    return model.forward(x)


# --- weights file -----------------------------------------------------------


def _pack_tensor(arr: np.ndarray) -> bytes:
    arr = np.ascontiguousarray(arr, dtype="<f4")
    head = struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + arr.tobytes()


def weights_to_bytes(params: ParamStore) -> bytes:
    out = bytearray(WEIGHTS_MAGIC)
    out += struct.pack("<HH", WEIGHTS_VERSION, len(params))
    for slot in sorted(params):
        w, b = params[slot]
        out += struct.pack("<H", slot)
        out += _pack_tensor(w)
        out += _pack_tensor(b)
    return bytes(out)


class _Reader:
    def __init__(self, data: bytes):
        self.data, self.pos = data, 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise WeightsFileError(
                f"truncated weights file: need {n} bytes for {what} at offset {self.pos}, "
                f"only {len(self.data) - self.pos} left"
            )
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))

    def tensor(self, what: str) -> np.ndarray:
        (rank,) = self.unpack("<B", f"{what} rank")
        dims = self.unpack(f"<{rank}I", f"{what} dims") if rank else ()
        n = int(np.prod(dims)) if dims else 1
        raw = self.take(4 * n, f"{what} data")
        return np.frombuffer(raw, dtype="<f4").reshape(dims).astype(np.float32)


def weights_from_bytes(data: bytes) -> ParamStore:
    r = _Reader(data)
    magic = r.take(4, "magic")
    if magic != WEIGHTS_MAGIC:
        raise WeightsFileError(f"bad magic {magic!r}, expected {WEIGHTS_MAGIC!r}")
    version, count = r.unpack("<HH", "header")
    if version != WEIGHTS_VERSION:
        raise WeightsFileError(f"unsupported weights format version {version}")
    params = {}
    for _ in range(count):
        (slot,) = r.unpack("<H", "layer index")
        if slot in params:
            raise WeightsFileError(f"duplicate layer index {slot}")
        w = r.tensor(f"layer {slot} weights")
        b = r.tensor(f"layer {slot} bias")
        params[slot] = (w, b)
    if r.pos != len(data):
        raise WeightsFileError(f"{len(data) - r.pos} trailing bytes after {count} layers")
    return params


def save_weights(model: Model, path) -> None:
    Path(path).write_bytes(weights_to_bytes(model.params))


def load_weights(spec: ModelSpec, path, dtype=np.float32) -> Model:
    infer_shapes(spec)
    params = weights_from_bytes(Path(path).read_bytes())
    return Model(spec, params, dtype)


# --- reference architectures -------------------------------------------------

REFERENCE_NAMES = ("cnn_ref", "resnet_ref", "dae_ref", "e2car_ref")
SEGMENT_LENGTH = 800


def _dae_layers(c_in: int) -> list[LayerSpec]:
    return [
        conv(c_in, 32, 5, stride=2, pad=2),
        conv(32, 64, 5, stride=2, pad=2),
        conv(64, 64, 5, stride=2, pad=2),
        upsample(2),
        conv(64, 64, 5),
        upsample(2),
        conv(64, 32, 5),
        upsample(2),
        conv(32, 16, 5),
        conv(16, 1, 1, act="linear"),
    ]


def reference_spec(name: str, seed: int = 0) -> ModelSpec:
    """One of the four shipped 1-D architectures, all mapping [1, 800] -> [1, 800]."""
    if name == "cnn_ref":
        layers = [conv(1, 16, 5), conv(16, 16, 5), conv(16, 16, 5), conv(16, 1, 5, act="linear")]
    elif name == "resnet_ref":
        layers = [conv(1, 16, 5)] + [residual_block(16, 5) for _ in range(4)]
        layers.append(conv(16, 1, 1, act="linear"))
    elif name == "dae_ref":
        layers = _dae_layers(1)
    elif name == "e2car_ref":
        branches = [[residual_block(16, k), residual_block(16, k)] for k in (3, 5, 7)]
        layers = [conv(1, 16, 3), branch_concat(*branches), conv(48, 16, 1)] + _dae_layers(16)
    else:
        raise SpecError(f"unknown reference model {name!r}; known: {', '.join(REFERENCE_NAMES)}")
    return ModelSpec(name, "one_d", (1, SEGMENT_LENGTH), tuple(layers), seed)


def load_spec(name_or_path: str, seed: int | None = None) -> ModelSpec:
    """Resolve a reference name or a JSON spec file path."""
    if name_or_path in REFERENCE_NAMES:
        spec = reference_spec(name_or_path)
    else:
        p = Path(name_or_path)
        if not p.is_file():
            raise SpecError(
                f"unknown spec {name_or_path!r}: not a reference name "
                f"({', '.join(REFERENCE_NAMES)}) or an existing file"
            )
        spec = ModelSpec.from_json(p.read_text())
    return spec if seed is None else spec.with_seed(seed)
