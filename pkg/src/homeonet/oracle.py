"""Reference checks that share no code path with the compiled kernels.

``oracle_decide`` recomputes the ingest/reject choice with the plain numpy
forward/backward on dense inputs, one stored sample at a time.
"""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from homeonet import nn
from homeonet.homeostat import (INGEST, REJECT, HomeostatState, ReplayStore,
                                apply_effect, counterfactual_decide, effect_of)


def _branch_loss(net: nn.MLP, samples, lr: float, passes: int) -> float:
    trial = nn.snapshot(net)
    for _ in range(passes):
        for image, label in samples:
            x = image[None, :]
            y = np.array([label])
            _, grads = nn.backward(trial, x, y)
            nn.sgd_step(trial, grads, lr)
    xs = np.stack([s[0] for s in samples])
    ys = np.array([s[1] for s in samples])
    loss, _ = nn.softmax_xent(nn.forward(trial, xs), ys)
    return float(loss)


def oracle_decide(net: nn.MLP, state: HomeostatState, predicted_label: int):
    """(choice, loss_ingest, loss_reject) by brute force."""
    samples = state.store.items()
    if not samples:
        return REJECT, float("nan"), float("nan")
    lr_a = apply_effect(state.lr, effect_of(predicted_label, state.effects), state)
    loss_a = _branch_loss(net, samples, lr_a, state.store_passes)
    loss_b = _branch_loss(net, samples, state.lr, state.store_passes)
    return (INGEST if loss_a < loss_b else REJECT), loss_a, loss_b


@dataclass
class OracleReport:
    n_cases: int
    mismatches: int
    n_ingest: int
    max_loss_diff: float
    seconds: float


def random_case(rng: np.random.Generator, layer_dims=(784, 16, 12, 10)):
    """A random (net, state, predicted label) triple.

    Stores hold between 0 and 12 samples, some with sparse images, and the
    learning rate spans several orders of magnitude so both choices occur.
    """
    net = nn.init_mlp(layer_dims, rng)
    state = HomeostatState(
        lr=float(10 ** rng.uniform(-4, -0.5)),
        lr_min=1e-5, lr_max=0.5, lr_init=0.005,
        step_rule=str(rng.choice(["additive", "multiplicative"])),
        store=ReplayStore(int(rng.integers(1, 13)), layer_dims[0]))
    for _ in range(int(rng.integers(0, state.store.capacity + 4))):
        image = rng.random(layer_dims[0]) * (rng.random(layer_dims[0]) < 0.3)
        state.store.push(image, int(rng.integers(0, 10)))
    return net, state, int(rng.integers(0, 10))


def oracle_check(n_cases: int = 1000, seed: int = 0, layer_dims=(784, 16, 12, 10)) -> OracleReport:
    rng = np.random.default_rng(seed)
    start = time.perf_counter()
    mismatches = ingests = 0
    worst = 0.0
    for _ in range(n_cases):
        net, state, pred = random_case(rng, layer_dims)
        before = net.params.copy()
        got = counterfactual_decide(net, state, pred)
        want, loss_a, loss_b = oracle_decide(net, state, pred)
        if got.choice != want or not np.array_equal(before, net.params):
            mismatches += 1
        ingests += want == INGEST
        if not np.isnan(loss_a):
            worst = max(worst, abs(got.loss_ingest - loss_a), abs(got.loss_reject - loss_b))
    return OracleReport(n_cases, mismatches, ingests, worst, time.perf_counter() - start)


@dataclass
class GradcheckReport:
    n_instances: int
    max_rel_error: float
    seconds: float


def gradcheck_suite(n_instances: int = 20, seed: int = 0, eps: float = 1e-5,
                    max_coords: int = 200) -> GradcheckReport:
    """Finite-difference check of ``nn.backward`` on random nets and batches.

    Shapes vary from tiny nets (every coordinate checked) to the full
    784-80-60-10 network (all biases plus a random sample of weights).
    """
    rng = np.random.default_rng(seed)
    start = time.perf_counter()
    worst = 0.0
    for i in range(n_instances):
        if i % 4 == 3:
            dims = nn.DEFAULT_DIMS
        else:
            dims = (int(rng.integers(2, 12)), *rng.integers(2, 9, size=int(rng.integers(1, 3))), 10)
            dims = tuple(int(d) for d in dims)
        net = nn.init_mlp(dims, rng)
        net.biases[0][...] = rng.normal(0, 0.1, size=net.biases[0].shape)
        batch = int(rng.integers(1, 5))
        x = rng.random((batch, dims[0]))
        y = rng.integers(0, 10, size=batch)
        worst = max(worst, nn.gradcheck(net, x, y, eps=eps, max_coords=max_coords, rng=rng))
    return GradcheckReport(n_instances, worst, time.perf_counter() - start)
