"""Learning-rate self-regulation driven by the objects being classified.

Every class carries an effect on the learner's learning rate: inhibitory
(-1) or excitatory (+1). After classifying a sample the homeostatic learner
decides whether to ingest it, i.e. to let the sample's effect act on its
learning rate. The decision is counterfactual: two copies of the network
are trained for one pass over a replay store of recent samples, one at the
learning rate the learner *expects* after ingesting (effect of the predicted
class) and one at the current rate, and the copy with lower store loss wins.
If it ingests, the effect that actually lands comes from the sample's true
class, so a misclassification can push the learning rate the wrong way.

Two controls share the same step shape: a random walk on the learning rate,
and a constant learning rate.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from homeonet import _kernels
from homeonet.nn import MLP, N_PIXELS, predict_label, train_sample, train_then_score

CONTROLLERS = ("homeostatic", "random", "constant")
STEP_RULES = ("additive", "multiplicative")
INGEST = "ingest"
REJECT = "reject"


def default_effect_map() -> np.ndarray:
    """Classes 0-4 inhibitory, 5-9 excitatory."""
    return np.array([-1] * 5 + [1] * 5, dtype=np.int64)


def effect_of(label: int, effects: np.ndarray | None = None) -> int:
    effects = default_effect_map() if effects is None else effects
    return int(effects[label])


class ReplayStore:
    """Fixed-capacity ring buffer of ``(image, label)`` pairs, oldest evicted first.

    Labels are kept as served at push time. Nonzero-pixel indices are cached
    alongside each image for the compiled kernels.
    """

    def __init__(self, capacity: int = 100, n_inputs: int = N_PIXELS):
        if capacity < 1:
            raise ValueError("store capacity must be at least 1")
        self.capacity = capacity
        self.images = np.zeros((capacity, n_inputs))
        self.nz = np.zeros((capacity, n_inputs), dtype=np.int64)
        self.nnz = np.zeros(capacity, dtype=np.int64)
        self.labels = np.zeros(capacity, dtype=np.int64)
        self._head = 0
        self._size = 0

    def __len__(self):
        return self._size

    def push(self, image, label: int, sparse=None) -> None:
        nz, nnz = _kernels.nonzero_index(image) if sparse is None else sparse
        h = self._head
        self.images[h] = image
        self.nz[h] = nz
        self.nnz[h] = nnz
        self.labels[h] = label
        self._head = (h + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)

    def order(self) -> np.ndarray:
        """Slot indices from oldest to newest."""
        start = (self._head - self._size) % self.capacity
        return (start + np.arange(self._size)) % self.capacity

    def items(self):
        return [(self.images[k].copy(), int(self.labels[k])) for k in self.order()]

    def copy(self) -> "ReplayStore":
        out = ReplayStore.__new__(ReplayStore)
        out.__dict__.update({k: (v.copy() if isinstance(v, np.ndarray) else v)
                             for k, v in self.__dict__.items()})
        return out


@dataclass
class HomeostatState:
    controller: str = "homeostatic"
    lr_init: float = 0.005
    lr_min: float = 1e-5
    lr_max: float = 0.5
    delta: float = 0.2
    step_rule: str = "additive"
    store: ReplayStore = field(default_factory=ReplayStore)
    effects: np.ndarray = field(default_factory=default_effect_map)
    realized_effect: str = "true_label"
    store_passes: int = 1
    rng: np.random.Generator = field(default_factory=np.random.default_rng)
    lr: float = math.nan
    workspace: MLP | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.controller not in CONTROLLERS:
            raise ValueError(f"unknown controller {self.controller!r}")
        if self.step_rule not in STEP_RULES:
            raise ValueError(f"unknown step rule {self.step_rule!r}")
        if self.realized_effect not in ("true_label", "predicted_label"):
            raise ValueError(f"unknown realized_effect {self.realized_effect!r}")
        if not 0 < self.lr_min <= self.lr_init <= self.lr_max:
            raise ValueError("need 0 < lr_min <= lr_init <= lr_max")
        if self.delta <= 0:
            raise ValueError("delta must be positive")
        if self.store_passes < 1:
            raise ValueError("store_passes must be at least 1")
        if math.isnan(self.lr):
            self.lr = self.lr_init


def apply_effect(lr: float, direction: int, state: HomeostatState) -> float:
    """Move ``lr`` one step in ``direction`` and clamp to the state's bounds.

    ``additive`` steps by ``delta * lr_init``; ``multiplicative`` scales by
    ``1 + direction * delta``.
    """
    if state.step_rule == "additive":
        new = lr + direction * state.delta * state.lr_init
    else:
        new = lr * (1.0 + direction * state.delta)
    return min(max(new, state.lr_min), state.lr_max)


@dataclass
class Decision:
    choice: str
    predicted_label: int
    expected_direction: int
    lr_ingest: float
    lr_reject: float
    loss_ingest: float = math.nan
    loss_reject: float = math.nan
    realized_direction: int | None = None

    @property
    def ingested(self) -> bool:
        return self.choice == INGEST


@dataclass
class StepLog:
    presentation_index: int
    predicted_label: int
    true_label: int
    correct: bool
    decision: Decision | None
    lr_before: float
    lr_after: float
    loss: float


def branch_store_loss(net: MLP, store: ReplayStore, lr: float, passes: int = 1,
                      workspace: MLP | None = None) -> float:
    """Store loss of a copy of ``net`` after ``passes`` SGD passes over the store.

    ``workspace`` is an optional preallocated network of the same shape that
    receives the copy; ``net`` is never modified.
    """
    if workspace is None or workspace.layer_dims != net.layer_dims:
        workspace = net.copy()
    else:
        workspace.params[...] = net.params
    return train_then_score(workspace, store.images, store.nz, store.nnz,
                            store.labels, store.order(), lr, passes)


def counterfactual_decide(net: MLP, state: HomeostatState, predicted_label: int) -> Decision:
    """Compare the ingest and reject versions of the learner on the replay store.

    Ingest only if its store loss is strictly lower; an empty store rejects.
    """
    expected = effect_of(predicted_label, state.effects)
    lr_a = apply_effect(state.lr, expected, state)
    lr_b = state.lr
    decision = Decision(REJECT, int(predicted_label), expected, lr_a, lr_b)
    if len(state.store) == 0:
        return decision
    if state.workspace is None or state.workspace.layer_dims != net.layer_dims:
        state.workspace = net.copy()
    ws = state.workspace
    decision.loss_ingest = branch_store_loss(net, state.store, lr_a, state.store_passes, ws)
    decision.loss_reject = branch_store_loss(net, state.store, lr_b, state.store_passes, ws)
    if decision.loss_ingest < decision.loss_reject:
        decision.choice = INGEST
    return decision


def homeostat_step(net: MLP, state: HomeostatState, sample, index: int = 0) -> StepLog:
    image, label = sample
    sparse = _kernels.nonzero_index(image)
    predicted = predict_label(net, image, sparse)
    decision = counterfactual_decide(net, state, predicted)
    decision.realized_direction = effect_of(label, state.effects)
    lr_before = state.lr
    if decision.ingested:
        applied = (decision.realized_direction if state.realized_effect == "true_label"
                   else decision.expected_direction)
        state.lr = apply_effect(state.lr, applied, state)
    loss = train_sample(net, image, label, state.lr, sparse)
    state.store.push(image, label, sparse)
    return StepLog(index, predicted, int(label), predicted == label, decision,
                   lr_before, state.lr, loss)


def random_step(net: MLP, state: HomeostatState, sample, index: int = 0) -> StepLog:
    image, label = sample
    sparse = _kernels.nonzero_index(image)
    predicted = predict_label(net, image, sparse)
    lr_before = state.lr
    direction = 1 if state.rng.random() < 0.5 else -1
    state.lr = apply_effect(state.lr, direction, state)
    loss = train_sample(net, image, label, state.lr, sparse)
    state.store.push(image, label, sparse)
    return StepLog(index, predicted, int(label), predicted == label, None,
                   lr_before, state.lr, loss)


def constant_step(net: MLP, state: HomeostatState, sample, index: int = 0) -> StepLog:
    image, label = sample
    sparse = _kernels.nonzero_index(image)
    predicted = predict_label(net, image, sparse)
    loss = train_sample(net, image, label, state.lr_init, sparse)
    return StepLog(index, predicted, int(label), predicted == label, None,
                   state.lr_init, state.lr_init, loss)


STEP_FUNCTIONS = {
    "homeostatic": homeostat_step,
    "random": random_step,
    "constant": constant_step,
}


class Learner:
    """A network plus its learning-rate controller."""

    def __init__(self, net: MLP, state: HomeostatState):
        self.net = net
        self.state = state
        self._step = STEP_FUNCTIONS[state.controller]

    @property
    def lr(self) -> float:
        return self.state.lr

    def step(self, image, label: int, index: int = 0) -> StepLog:
        return self._step(self.net, self.state, (image, label), index)
