"""Rewrite a 1-D conv model into the equivalent 2-D model over 1 x L images.

Every spatial quantity gains a leading unit axis: a kernel ``K`` becomes
``(1, K)``, stride ``s`` becomes ``(1, s)``, padding ``p`` becomes ``(0, p)``,
an upsampling factor ``f`` becomes ``(1, f)``; inputs ``[C, L]`` become
``[C, 1, L]``. Weights are reshaped ``[O, I, K] -> [O, I, 1, K]`` without
touching a single value, so the rewritten model computes the same function.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from .model_graph import LayerSpec, Model, ModelSpec, ParamStore, SpecError, param_shapes
from .tensor_ops import ConvGeometry

_MAPPED_KINDS = frozenset({"conv", "residual_block", "pool", "upsample", "branch_concat", "activation"})


def _expand_geom(g: ConvGeometry) -> ConvGeometry:
    return ConvGeometry((1,) + g.kernel, (1,) + g.stride, (0,) + g.padding, g.in_channels, g.out_channels)


def _describe(layer: LayerSpec) -> str:
    g = layer.geometry
    if layer.kind == "upsample":
        return f"upsample x{layer.factor}"
    if layer.kind == "activation":
        return f"activation {layer.activation}"
    if layer.kind == "branch_concat":
        return f"branch_concat ({len(layer.branches)} branches)"
    extra = f" {layer.activation}" if layer.kind == "conv" else ""
    extra = f" {layer.pool}" if layer.kind == "pool" else extra
    return f"{layer.kind}{extra} k={g.kernel} s={g.stride} p={g.padding} {g.in_channels}->{g.out_channels}"


def _expand_layer(layer: LayerSpec, path: str, table: list) -> LayerSpec:
    if layer.kind not in _MAPPED_KINDS:
        raise SpecError(f"no 2-D mapping for layer kind {layer.kind!r}", path)
    row = len(table)
    table.append(None)
    branches = tuple(
        tuple(_expand_layer(sub, f"{path}.branches[{i}][{j}]", table) for j, sub in enumerate(b))
        for i, b in enumerate(layer.branches)
    )
    new = replace(
        layer,
        geometry=_expand_geom(layer.geometry) if layer.geometry is not None else None,
        factor=(1,) + layer.factor if layer.kind == "upsample" else layer.factor,
        branches=branches,
    )
    table[row] = (path, _describe(layer), _describe(new))
    return new


def expand_spec_with_table(spec: ModelSpec) -> tuple[ModelSpec, list[tuple[str, str, str]]]:
    if spec.dimensionality != "one_d":
        raise SpecError(f"spec {spec.name!r} is already {spec.dimensionality}; expansion needs one_d")
    table: list = []
    layers = tuple(_expand_layer(layer, f"layers[{i}]", table) for i, layer in enumerate(spec.layers))
    c, length = spec.input_shape
    return ModelSpec(spec.name, "two_d", (c, 1, length), layers, spec.seed), table


def expand_spec(spec: ModelSpec) -> ModelSpec:
    """The 2-D counterpart of a 1-D spec (same layers, channels, activations, branches)."""
    return expand_spec_with_table(spec)[0]


def expand_weights(store: ParamStore, spec_1d: ModelSpec | None = None) -> ParamStore:
    """Insert a unit height axis into every kernel: ``[O, I, K] -> [O, I, 1, K]``."""
    if spec_1d is not None:
        expected = param_shapes(spec_1d)
        if set(expected) != set(store):
            raise SpecError(f"weight slots {sorted(store)} do not match spec slots {sorted(expected)}")
    out = {}
    for slot, (w, b) in store.items():
        w = np.asarray(w)
        if w.ndim != 3:
            raise SpecError(f"slot {slot}: expected 1-D conv weights [O, I, K], got shape {w.shape}")
        if spec_1d is not None and (w.shape, np.shape(b)) != param_shapes(spec_1d)[slot]:
            raise SpecError(f"slot {slot}: shape {w.shape} does not match spec")
        out[slot] = (w.reshape(w.shape[0], w.shape[1], 1, w.shape[2]), np.asarray(b))
    return out


def collapse_weights(store: ParamStore) -> ParamStore:
    """Inverse of :func:`expand_weights`."""
    out = {}
    for slot, (w, b) in store.items():
        if w.ndim != 4 or w.shape[2] != 1:
            raise SpecError(f"slot {slot}: expected [O, I, 1, K] weights, got {w.shape}")
        out[slot] = (w.reshape(w.shape[0], w.shape[1], w.shape[3]), b)
    return out


def expand_model(model: Model) -> Model:
    return Model(expand_spec(model.spec), expand_weights(model.params, model.spec), model.dtype)


@dataclass
class ExpansionReport:
    model: str
    mapping: list[tuple[str, str, str]]
    n_test_inputs: int
    max_abs_difference: float
    tolerance: float
    dtype: str = "float32"
    passed: bool = field(init=False)
    vacuous: bool = field(init=False)

    def __post_init__(self):
        self.passed = bool(self.max_abs_difference <= self.tolerance)
        self.vacuous = self.n_test_inputs == 0

    def to_dict(self) -> dict:
        return {
            "model": self.model,
            "dtype": self.dtype,
            "n_test_inputs": self.n_test_inputs,
            "max_abs_difference": self.max_abs_difference,
            "tolerance": self.tolerance,
            "pass": self.passed,
            "vacuous": self.vacuous,
            "mapping": [{"path": p, "one_d": a, "two_d": b} for p, a, b in self.mapping],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def __str__(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        if self.vacuous:
            status += " (vacuous: no inputs tested)"
        head = (f"{self.model}: {status}  max|diff|={self.max_abs_difference:.3e} "
                f"tol={self.tolerance:g} n={self.n_test_inputs} dtype={self.dtype}")
        width = max((len(p) for p, _, _ in self.mapping), default=0)
        rows = [f"  {p:<{width}}  {a}  ->  {b}" for p, a, b in self.mapping]
        return "\n".join([head] + rows)


def verify_equivalence(model_1d: Model, model_2d: Model, n_inputs: int = 100, tolerance: float = 1e-5,
                       seed: int = 0, batch_size: int = 50) -> ExpansionReport:
    """Run seeded uniform(-1, 1) inputs through both models and record the worst output gap."""
    _, mapping = expand_spec_with_table(model_1d.spec)
    rng = np.random.default_rng(seed)
    ishape = model_1d.spec.input_shape
    worst = 0.0
    for start in range(0, n_inputs, batch_size):
        n = min(batch_size, n_inputs - start)
        x = rng.uniform(-1.0, 1.0, (n,) + ishape).astype(model_1d.dtype)
        y1 = model_1d.forward(x)
        y2 = model_2d.forward(x.reshape((n,) + model_2d.spec.input_shape))
        diff = np.abs(y2.reshape(y1.shape).astype(np.float64) - y1.astype(np.float64))
        worst = max(worst, float(diff.max()))
    return ExpansionReport(model_1d.spec.name, mapping, n_inputs, worst, tolerance, model_1d.dtype.name)
