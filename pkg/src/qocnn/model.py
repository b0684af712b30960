"""Model graphs: layer stacks, parameter initialization, forward/backward."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import layers
from .layers import LayerSpec, TapeNode

ARCHITECTURES = ("onn", "qonn", "qocnn")

DEFAULT_LAM = 0.2


@dataclass
class ModelGraph:
    """Ordered layers plus their trainable parameter arrays.

    Trainable parameters are stored as complex128 arrays; each exposes
    2 * size independent real degrees of freedom through its float64 view.
    """

    arch: str
    specs: list[LayerSpec]
    params: list[dict[str, np.ndarray]]
    seed: int = 0
    meta: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.arch not in ARCHITECTURES:
            raise ValueError(f"unknown architecture {self.arch!r}")
        if len(self.specs) != len(self.params):
            raise ValueError("one parameter dict required per layer")
        for i in range(1, len(self.specs)):
            prev, cur = self.specs[i - 1], self.specs[i]
            if prev.out_dim != cur.in_dim:
                raise ValueError(
                    f"layer {i - 1} ({prev.kind}) outputs {prev.out_dim} but "
                    f"layer {i} ({cur.kind}) expects {cur.in_dim}"
                )
        for spec, p in zip(self.specs, self.params):
            expected = param_shapes(spec)
            got = {name: arr.shape for name, arr in p.items()}
            if got != expected:
                raise ValueError(
                    f"{spec.kind} parameter shapes {got} do not match {expected}"
                )

    @property
    def in_dim(self) -> int:
        return self.specs[0].in_dim if self.specs else 0

    @property
    def out_dim(self) -> int:
        return self.specs[-1].out_dim if self.specs else 0

    def num_params(self) -> int:
        """Count of real trainable parameters (re and im counted separately)."""
        return sum(2 * arr.size for p in self.params for arr in p.values())

    def param_views(self) -> list[dict[str, np.ndarray]]:
        """float64 views of every parameter array, interleaved re/im."""
        return [
            {name: arr.view(np.float64) for name, arr in p.items()}
            for p in self.params
        ]

    def copy(self) -> "ModelGraph":
        return ModelGraph(
            arch=self.arch,
            specs=list(self.specs),
            params=[
                {name: arr.copy() for name, arr in p.items()} for p in self.params
            ],
            seed=self.seed,
            meta=dict(self.meta),
        )


def param_shapes(spec: LayerSpec) -> dict[str, tuple[int, ...]]:
    if spec.kind == "complex_linear":
        return {"M": (spec.in_dim, spec.out_dim)}
    if spec.kind == "quantum_conv":
        return {"K": (spec.k, spec.k)}
    return {}


def init_layer_params(spec: LayerSpec, rng: np.random.Generator) -> dict[str, np.ndarray]:
    """Uniform init scaled by fan-in; re and im drawn independently."""
    if spec.kind == "complex_linear":
        bound = 1.0 / np.sqrt(spec.in_dim)
        shape = (spec.in_dim, spec.out_dim)
        m = rng.uniform(-bound, bound, shape) + 1j * rng.uniform(-bound, bound, shape)
        return {"M": m}
    if spec.kind == "quantum_conv":
        bound = 1.0 / spec.k
        shape = (spec.k, spec.k)
        k = rng.uniform(-bound, bound, shape) + 1j * rng.uniform(-bound, bound, shape)
        return {"K": k}
    return {}


def architecture_specs(
    arch: str,
    in_dim: int = 392,
    hidden: int | None = None,
    classes: int = 10,
    lam: float = DEFAULT_LAM,
    conv_k: int = 4,
    conv_s: int = 2,
    pool_w: int = 2,
    pool_p: int = 2,
) -> list[LayerSpec]:
    """Default layer stacks for the three architectures, dims overridable."""
    if arch == "onn":
        h = 128 if hidden is None else hidden
        return [
            layers.linear_spec(in_dim, h),
            layers.mod_softplus_spec(h),
            layers.linear_spec(h, classes),
            layers.mod_squared_spec(classes),
            layers.log_softmax_spec(classes),
        ]
    if arch == "qonn":
        h = 128 if hidden is None else hidden
        return [
            layers.linear_spec(in_dim, h),
            layers.sinusoid_spec(h, lam),
            layers.linear_spec(h, classes),
            layers.mod_squared_spec(classes),
            layers.log_softmax_spec(classes),
        ]
    if arch == "qocnn":
        h = 64 if hidden is None else hidden
        conv = layers.conv_spec(in_dim, conv_k, conv_s)
        pool = layers.pool_spec(in_dim, pool_w, pool_p)
        return [
            conv,
            pool,
            layers.linear_spec(pool.out_dim, h),
            layers.sinusoid_spec(h, lam),
            layers.linear_spec(h, classes),
            layers.mod_squared_spec(classes),
            layers.log_softmax_spec(classes),
        ]
    raise ValueError(f"unknown architecture {arch!r}")


def new_model(arch: str, seed: int = 0, **kwargs) -> ModelGraph:
    """Freshly initialized model of the named architecture."""
    specs = architecture_specs(arch, **kwargs)
    rng = np.random.default_rng(seed)
    params = [init_layer_params(spec, rng) for spec in specs]
    meta = {"lam": kwargs.get("lam", DEFAULT_LAM)}
    return ModelGraph(arch=arch, specs=specs, params=params, seed=seed, meta=meta)


def model_forward(model: ModelGraph, x: np.ndarray) -> tuple[np.ndarray, list[TapeNode]]:
    """Run the full stack; an empty model is the identity."""
    tape: list[TapeNode] = []
    out = x
    for i, (spec, p) in enumerate(zip(model.specs, model.params)):
        try:
            out, node = layers.layer_forward(spec, p, out)
        except ValueError as exc:
            raise ValueError(f"layer {i} ({spec.kind}): {exc}") from exc
        tape.append(node)
    return out, tape


def model_backward(
    model: ModelGraph, tape: list[TapeNode], grad_out: np.ndarray
) -> list[dict[str, np.ndarray]]:
    """Reverse sweep; returns one gradient dict per layer (complex packed)."""
    if len(tape) != len(model.specs):
        raise ValueError(
            f"tape has {len(tape)} nodes for {len(model.specs)} layers"
        )
    grads: list[dict[str, np.ndarray]] = [None] * len(model.specs)
    g = grad_out
    for i in range(len(model.specs) - 1, -1, -1):
        g, grads[i] = layers.layer_backward(model.specs[i], tape[i], g)
    return grads
