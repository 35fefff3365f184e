"""Client-side runtime: per-task strategy selection, knowledge-migration
regularization against frozen task-start snapshots, and local SGD rounds.

Snapshot policy: at task start, every pool model except the one bound to
the new task is frozen as a migration anchor, weighted by its matching
intensity. A config switch (`km_include_self`) additionally anchors a
frozen copy of the bound model itself.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import nn
from .matching import (DECISION_NEW, MatchingReport, NegativeSynthesisSpec,
                       matching_intensity, select_strategy, synthesize_negatives)
from .seeding import rng_for


@dataclass
class ClientState:
    client_id: int
    pool: list[nn.PersonalModel] = field(default_factory=list)
    pool_snapshots: list[nn.PersonalModel] = field(default_factory=list)
    snapshot_rho: np.ndarray = field(default_factory=lambda: np.zeros(0))
    task_bindings: dict[int, int] = field(default_factory=dict)
    current_task: int | None = None
    active: bool = True
    rho_history: list[dict] = field(default_factory=list)

    def bound_model(self, task_id: int) -> nn.PersonalModel:
        return self.pool[self.task_bindings[task_id]]


@dataclass
class LocalUpdate:
    client_id: int
    task_id: int
    parameters: nn.PersonalModel
    num_samples: int
    train_loss: float = 0.0  # round-mean joint loss, for the event log


def begin_task(state: ClientState, shard_x: np.ndarray, task_id: int, lam: float,
               max_pool_size: int, arch: nn.ArchSpec, init_seed,
               km_include_self: bool = False) -> MatchingReport | None:
    """Match the new task against the pool and pick a strategy.

    Empty shard: the client sits the task out (no binding, no training).
    Otherwise computes matching intensities, reuses or initializes a model,
    binds it to the task, and freezes the migration anchors. Returns the
    MatchingReport, or None for an inactive client.
    """
    state.current_task = int(task_id)
    shard_x = np.asarray(shard_x, dtype=np.float64)
    if shard_x.shape[0] == 0:
        state.active = False
        state.pool_snapshots = []
        state.snapshot_rho = np.zeros(0)
        state.rho_history.append({"task": int(task_id), "inactive": True})
        return None
    state.active = True

    rho = matching_intensity(state.pool, shard_x)
    report = select_strategy(rho, lam, len(state.pool), max_pool_size)
    if report.decision == DECISION_NEW:
        state.pool.append(nn.init_model(arch, init_seed))
        bound = len(state.pool) - 1
    else:
        bound = int(report.model_index)
    state.task_bindings[int(task_id)] = bound

    snapshots, weights = [], []
    for i, model in enumerate(state.pool):
        if i == bound and not km_include_self:
            continue
        if i >= len(rho):
            continue  # the freshly added model has no intensity entry
        snapshots.append(nn.clone_model(model))
        weights.append(rho[i])
    state.pool_snapshots = snapshots
    state.snapshot_rho = np.asarray(weights, dtype=np.float64)
    state.rho_history.append({"task": int(task_id), **report.to_record()})
    return report


def migration_loss(model: nn.PersonalModel, snapshots, rho) -> float:
    """Sum_i rho_i * ||w - w_i||^2 over all parameters."""
    rho = np.asarray(rho, dtype=np.float64)
    if len(snapshots) != rho.shape[0]:
        raise ValueError("one weight per snapshot required")
    total = 0.0
    for r, snap in zip(rho, snapshots):
        sq = 0.0
        for p, ps in zip(nn.iter_arrays(model), nn.iter_arrays(snap)):
            diff = p - ps
            sq += float((diff * diff).sum())
        total += float(r) * sq
    return total


def add_migration_grads(grads: nn.GradientSet, model: nn.PersonalModel,
                        snapshots, rho) -> None:
    """Accumulate 2 * rho_i * (w - w_i) into an existing gradient set."""
    for r, snap in zip(rho, snapshots):
        for g, p, ps in zip(nn.iter_arrays(grads), nn.iter_arrays(model),
                            nn.iter_arrays(snap)):
            g += (2.0 * float(r)) * (p - ps)


def local_train_round(state: ClientState, global_params: nn.PersonalModel | None,
                      shard_x: np.ndarray, shard_y: np.ndarray, task_id: int,
                      epochs: int, lr: float, weight_decay: float, batch_size: int,
                      neg_spec: NegativeSynthesisSpec,
                      round_entropy: tuple[int, ...]) -> LocalUpdate | None:
    """One communication round of local training.

    The bound model first adopts the broadcast global parameters (if any;
    the first round of a task starts from the strategy-selected state).
    Then `epochs` epochs of minibatch SGD on the joint objective: CE on the
    task batch, BCE on the batch plus equally many synthesized negatives,
    and the knowledge-migration pull toward the frozen anchors. All three
    streams hit the shared trunk in a single step.

    Epoch RNG derives from round_entropy + epoch index, so the outcome does
    not depend on scheduling or on any other client.
    """
    if not state.active:
        return None
    model = state.pool[state.task_bindings[int(task_id)]]
    if global_params is not None:
        nn.copy_into(model, global_params)

    X = np.asarray(shard_x, dtype=np.float64)
    y = np.asarray(shard_y, dtype=np.int64)
    n = X.shape[0]
    feat_std = X.std(axis=0)
    has_anchors = len(state.pool_snapshots) > 0

    loss_sum = 0.0
    steps = 0
    for epoch in range(epochs):
        rng = rng_for(*round_entropy, epoch)
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            rows = order[start:start + batch_size]
            Xb, yb = X[rows], y[rows]
            grads, cls_loss = nn._grads_and_loss(model, Xb, y_cls=yb, loss_spec=nn.LOSS_CLS)
            Xn = synthesize_negatives(Xb, feat_std, neg_spec, rng)
            Xa = np.concatenate([Xb, Xn])
            ya = np.concatenate([np.ones(len(Xb)), np.zeros(len(Xn))])
            aux_grads, aux_loss = nn._grads_and_loss(model, Xa, y_aux=ya, loss_spec=nn.LOSS_AUX)
            nn.grads_add(grads, aux_grads)
            step_loss = cls_loss + aux_loss
            if has_anchors:
                add_migration_grads(grads, model, state.pool_snapshots, state.snapshot_rho)
                step_loss += migration_loss(model, state.pool_snapshots, state.snapshot_rho)
            nn.sgd_step(model, grads, lr=lr, weight_decay=weight_decay)
            loss_sum += step_loss
            steps += 1

    mean_loss = loss_sum / steps if steps else 0.0
    return LocalUpdate(client_id=state.client_id, task_id=int(task_id),
                       parameters=nn.clone_model(model), num_samples=n,
                       train_loss=mean_loss)
