"""Low-rank adapter modules over the frozen encoder.

A module is the pair of adapter matrices (A, B) applied as a delta on the
frozen projection, plus a linear classification head. The same structure
serves task-specific experts, the selector (module id 0) and the single
continually-trained head of the static engine. Training is by hand-derived
analytic gradients checked against finite differences; all numerics are
64-bit.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .data import PreprocessedInput
from .encoder import Encoder
from .errors import (
    FrozenModuleError,
    InvalidArgumentError,
    NumericalError,
)

SELECTOR_ID = 0
PARAM_NAMES = ("A", "B", "head_W", "head_b")


@dataclass
class PetModule:
    module_id: int
    rank: int
    A: np.ndarray  # (rank, feature_dim)
    B: np.ndarray  # (hidden_dim, rank)
    head_W: np.ndarray  # (n_classes, hidden_dim)
    head_b: np.ndarray  # (n_classes,)
    class_ids: tuple
    frozen: bool = False
    _label_index: dict = field(init=False, repr=False)

    def __post_init__(self):
        if self.A.shape[0] != self.rank or self.B.shape[1] != self.rank:
            raise InvalidArgumentError("adapter shapes inconsistent with rank")
        if self.head_W.shape != (len(self.class_ids), self.B.shape[0]):
            raise InvalidArgumentError("head shape inconsistent with class_ids")
        if self.head_b.shape != (len(self.class_ids),):
            raise InvalidArgumentError("head bias shape inconsistent with class_ids")
        self._label_index = {c: i for i, c in enumerate(self.class_ids)}

    @property
    def n_classes(self) -> int:
        return self.head_W.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.A.shape[1]

    @property
    def hidden_dim(self) -> int:
        return self.B.shape[0]

    def label_index(self, class_id) -> int:
        try:
            return self._label_index[class_id]
        except KeyError:
            raise InvalidArgumentError(
                f"module {self.module_id}: unknown class {class_id!r}"
            ) from None

    def parameters(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in PARAM_NAMES}

    def checksum(self) -> str:
        digest = hashlib.sha256()
        for name in PARAM_NAMES:
            digest.update(np.ascontiguousarray(getattr(self, name)).tobytes())
        return digest.hexdigest()


@dataclass(frozen=True)
class LogitVector:
    values: np.ndarray
    owner_module: int
    class_ids: tuple


@dataclass(frozen=True)
class PredictionRecord:
    """Predicted label plus the logit vector it was taken from."""

    label: object
    logits: np.ndarray
    class_ids: tuple
    active: tuple[int, ...] = ()


def tunable_parameter_count(module: PetModule) -> int:
    return sum(p.size for p in module.parameters().values())


def init_module(
    module_id: int,
    rank: int,
    feature_dim: int,
    hidden_dim: int,
    class_ids,
    seed: int,
) -> PetModule:
    """Fresh module. A is Gaussian with variance 1/rank; B and the head start
    at zero so the initial logits coincide with a zero head on the frozen
    backbone representation."""
    if rank < 1:
        raise InvalidArgumentError("rank must be >= 1")
    class_ids = tuple(class_ids)
    if not class_ids:
        raise InvalidArgumentError("module needs at least one class")
    rng = np.random.default_rng(seed)
    return PetModule(
        module_id=module_id,
        rank=rank,
        A=rng.standard_normal((rank, feature_dim)) / np.sqrt(rank),
        B=np.zeros((hidden_dim, rank)),
        head_W=np.zeros((len(class_ids), hidden_dim)),
        head_b=np.zeros(len(class_ids)),
        class_ids=class_ids,
    )


def _check_dims(module: PetModule, encoder: Encoder) -> None:
    if (
        module.feature_dim != encoder.config.feature_dim
        or module.hidden_dim != encoder.config.hidden_dim
    ):
        raise InvalidArgumentError(
            f"module {module.module_id} dims "
            f"({module.hidden_dim}x{module.feature_dim}) do not match encoder "
            f"({encoder.config.hidden_dim}x{encoder.config.feature_dim})"
        )


@dataclass
class ForwardTrace:
    """Per-example intermediates kept for the backward pass."""

    idx: np.ndarray
    val: np.ndarray
    u: np.ndarray  # adapter bottleneck activation, A @ phi
    h: np.ndarray  # tanh of the adapted projection
    logits: np.ndarray


def forward_trace(module: PetModule, encoder: Encoder, inp: PreprocessedInput) -> ForwardTrace:
    _check_dims(module, encoder)
    idx, val, z0 = encoder.forward(inp)
    u = module.A[:, idx] @ val
    h = np.tanh(z0 + module.B @ u)
    logits = module.head_W @ h + module.head_b
    return ForwardTrace(idx=idx, val=val, u=u, h=h, logits=logits)


def pet_forward(module: PetModule, encoder: Encoder, inp: PreprocessedInput) -> LogitVector:
    """Logits for the module's own classes on one input."""
    trace = forward_trace(module, encoder, inp)
    return LogitVector(
        values=trace.logits,
        owner_module=module.module_id,
        class_ids=module.class_ids,
    )


def softmax_xent(logits: np.ndarray, label: int) -> tuple[float, np.ndarray]:
    """Cross-entropy and its gradient w.r.t. the logits."""
    m = logits.max()
    exp = np.exp(logits - m)
    total = exp.sum()
    loss = -(logits[label] - m - np.log(total))
    grad = exp / total
    grad[label] -= 1.0
    return float(loss), grad


def grads_from_logit_grads(
    module: PetModule,
    traces: list[ForwardTrace],
    logit_grads: list[np.ndarray],
) -> dict[str, np.ndarray]:
    """Backpropagate already-scaled per-example dL/dlogits into the tunable
    parameters. The frozen projection receives no gradient by construction."""
    g_A = np.zeros_like(module.A)
    g_B = np.zeros_like(module.B)
    g_W = np.zeros_like(module.head_W)
    g_b = np.zeros_like(module.head_b)
    for trace, g_s in zip(traces, logit_grads):
        g_b += g_s
        g_W += np.outer(g_s, trace.h)
        g_h = module.head_W.T @ g_s
        g_z = g_h * (1.0 - trace.h * trace.h)
        g_B += np.outer(g_z, trace.u)
        g_u = module.B.T @ g_z
        # phi is sparse; only its nonzero columns of A receive gradient.
        g_A[:, trace.idx] += np.outer(g_u, trace.val)
    return {"A": g_A, "B": g_B, "head_W": g_W, "head_b": g_b}


def loss_and_grads(
    module: PetModule,
    encoder: Encoder,
    batch: list[tuple[PreprocessedInput, int]],
) -> tuple[float, dict[str, np.ndarray]]:
    """Mean cross-entropy over the batch with analytic gradients."""
    if module.frozen:
        raise FrozenModuleError(f"module {module.module_id} is frozen")
    if not batch:
        raise InvalidArgumentError("empty batch")
    traces: list[ForwardTrace] = []
    logit_grads: list[np.ndarray] = []
    total = 0.0
    scale = 1.0 / len(batch)
    for inp, label in batch:
        if not 0 <= label < module.n_classes:
            raise InvalidArgumentError(
                f"label index {label} out of range for {module.n_classes} classes"
            )
        trace = forward_trace(module, encoder, inp)
        loss, grad = softmax_xent(trace.logits, label)
        total += loss
        traces.append(trace)
        logit_grads.append(grad * scale)
    mean_loss = total * scale
    if not np.isfinite(mean_loss):
        raise NumericalError(f"non-finite loss {mean_loss}")
    return mean_loss, grads_from_logit_grads(module, traces, logit_grads)


@dataclass
class AdamState:
    """Adam with decoupled weight decay."""

    lr: float
    weight_decay: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def optimizer_step(
    module: PetModule, state: AdamState, grads: dict[str, np.ndarray]
) -> tuple[PetModule, AdamState]:
    """Update the module in place and return it with the advanced state."""
    if module.frozen:
        raise FrozenModuleError(f"module {module.module_id} is frozen")
    params = module.parameters()
    for name in PARAM_NAMES:
        grad = grads.get(name)
        if grad is None or grad.shape != params[name].shape:
            raise InvalidArgumentError(f"gradient for {name!r} missing or misshaped")
        if not np.all(np.isfinite(grad)):
            raise NumericalError(f"non-finite gradient in {name!r}")
    state.step += 1
    t = state.step
    for name in PARAM_NAMES:
        param = params[name]
        grad = grads[name]
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(param)
            state.v[name] = np.zeros_like(param)
        v = state.v[name]
        if m.shape != param.shape:
            raise InvalidArgumentError(
                f"optimizer moment shape for {name!r} does not match the "
                "parameter; use a fresh state after expansion"
            )
        m *= state.beta1
        m += (1.0 - state.beta1) * grad
        v *= state.beta2
        v += (1.0 - state.beta2) * grad * grad
        m_hat = m / (1.0 - state.beta1**t)
        v_hat = v / (1.0 - state.beta2**t)
        param -= state.lr * (m_hat / (np.sqrt(v_hat) + state.eps) + state.weight_decay * param)
    return module, state


def dimension_expand(module: PetModule, new_class_ids) -> PetModule:
    """Grow the head to cover more classes.

    Adapters and existing head rows are copied verbatim; new rows start at
    zero, so old-class logits are bit-identical on every input and the new
    classes emit exactly zero until trained. Only the selector / shared head
    (module id 0) ever expands.
    """
    if module.module_id != SELECTOR_ID:
        raise InvalidArgumentError("only module id 0 (selector/shared head) expands")
    new_class_ids = tuple(new_class_ids)
    if len(new_class_ids) <= module.n_classes:
        raise InvalidArgumentError("dimension_expand cannot shrink or stay equal")
    if new_class_ids[: module.n_classes] != module.class_ids:
        raise InvalidArgumentError("existing class ordering must be preserved")
    grown = len(new_class_ids) - module.n_classes
    head_W = np.vstack([module.head_W.copy(), np.zeros((grown, module.hidden_dim))])
    head_b = np.concatenate([module.head_b.copy(), np.zeros(grown)])
    return PetModule(
        module_id=module.module_id,
        rank=module.rank,
        A=module.A.copy(),
        B=module.B.copy(),
        head_W=head_W,
        head_b=head_b,
        class_ids=new_class_ids,
        frozen=False,
    )


def freeze(module: PetModule) -> PetModule:
    """Mark the module immutable; idempotent. Frozen modules are cache-eligible."""
    module.frozen = True
    return module


# ---------------------------------------------------------------------------
# checkpoint format: one JSON header line, then the four tensors as raw
# row-major 64-bit little-endian bytes in PARAM_NAMES order.


def save_module(module: PetModule, path) -> None:
    header = {
        "module_id": module.module_id,
        "rank": module.rank,
        "feature_dim": module.feature_dim,
        "hidden_dim": module.hidden_dim,
        "n_classes": module.n_classes,
        "frozen": module.frozen,
        "class_ids": list(module.class_ids),
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        for name in PARAM_NAMES:
            tensor = np.ascontiguousarray(getattr(module, name), dtype="<f8")
            fh.write(tensor.tobytes())


def load_module(path) -> PetModule:
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode("utf-8"))
        n = header["n_classes"]
        shapes = {
            "A": (header["rank"], header["feature_dim"]),
            "B": (header["hidden_dim"], header["rank"]),
            "head_W": (n, header["hidden_dim"]),
            "head_b": (n,),
        }
        tensors = {}
        for name in PARAM_NAMES:
            shape = shapes[name]
            count = int(np.prod(shape))
            raw = fh.read(count * 8)
            if len(raw) != count * 8:
                raise InvalidArgumentError(f"checkpoint truncated in tensor {name!r}")
            tensors[name] = (
                np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(shape)
            )
    class_ids = tuple(header["class_ids"])
    return PetModule(
        module_id=header["module_id"],
        rank=header["rank"],
        A=tensors["A"],
        B=tensors["B"],
        head_W=tensors["head_W"],
        head_b=tensors["head_b"],
        class_ids=class_ids,
        frozen=header["frozen"],
    )
