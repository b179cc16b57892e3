"""Multi-task recurrent model over gated feature interactions.

Every ordered feature pair (i < j) carries one of four interaction
operations; a relevance scalar gates each feature (alpha) and each pair
(beta).  The trunk input concatenates alpha-gated embeddings with
beta-gated interaction vectors in a fixed canonical layout, so pruning a
pair (beta exactly 0) zeroes its slot without changing dimensionality.

Sequences are processed time-major: a batch of B sequences of length L
becomes arrays with N = L * B rows, row t * B + b holding step t of
sequence b.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .optim import RdaState
from .recurrent import (RecurrentCellWeights, init_cell_weights,
                        sequence_scan)
from .tensor import Parameter, Tensor


class OperationKind(enum.IntEnum):
    """Pairwise interaction operations with their stable export codes."""

    SUM = 0          # elementwise sum
    PRODUCT = 1      # elementwise product
    PRODUCT_FF = 2   # elementwise product followed by a feed-forward map
    CONCAT_FF = 3    # concatenation followed by a feed-forward map


def canonical_pairs(m: int) -> list[tuple[int, int]]:
    return [(i, j) for i in range(m) for j in range(i + 1, m)]


@dataclass
class InteractionGenome:
    """Operation assignment and relevance values for one model."""

    m: int
    ops: np.ndarray     # (P,) int codes over canonical_pairs(m)
    alpha: np.ndarray   # (m,) relevance values
    beta: np.ndarray    # (P,) relevance values

    def __post_init__(self):
        self.ops = np.asarray(self.ops, dtype=np.int64)
        self.alpha = np.asarray(self.alpha, dtype=np.float64)
        self.beta = np.asarray(self.beta, dtype=np.float64)
        p = len(canonical_pairs(self.m))
        if self.ops.shape != (p,) or self.beta.shape != (p,):
            raise ValueError("genome: ops/beta must cover the strict upper triangle")
        if self.alpha.shape != (self.m,):
            raise ValueError("genome: alpha must have one entry per field")
        if not np.all((self.ops >= 0) & (self.ops <= 3)):
            raise ValueError("genome: unknown operation code")
        if not (np.all(np.isfinite(self.alpha)) and np.all(np.isfinite(self.beta))):
            raise ValueError("genome: relevance values must be finite")

    @property
    def pairs(self) -> list[tuple[int, int]]:
        return canonical_pairs(self.m)

    @property
    def pruned_pairs(self) -> np.ndarray:
        return self.beta == 0.0

    def copy(self) -> "InteractionGenome":
        return InteractionGenome(self.m, self.ops.copy(), self.alpha.copy(),
                                 self.beta.copy())


def random_genome(m: int, rng: np.random.Generator) -> InteractionGenome:
    p = len(canonical_pairs(m))
    ops = rng.integers(0, 4, size=p)
    return InteractionGenome(m=m, ops=ops, alpha=np.ones(m), beta=np.ones(p))


@dataclass
class FieldStats:
    """Standardization statistics plus head-bias targets."""

    means: np.ndarray
    stds: np.ndarray
    target_means: dict

    @classmethod
    def identity(cls, m: int) -> "FieldStats":
        return cls(np.zeros(m), np.ones(m),
                   {"temperature": 0.0, "do_epi": 0.0, "do_hyp": 0.0,
                    "do_total": 0.0})

    def standardize(self, fields: np.ndarray) -> np.ndarray:
        return (fields - self.means) / self.stds


TEMPERATURE_TASK = "temperature"
OXYGEN_TASK = "do"


@dataclass
class InputInstance:
    """One sequence: raw field values, task tag and optional labels."""

    fields: np.ndarray            # (L, m) raw units
    task: str                     # TEMPERATURE_TASK or OXYGEN_TASK
    labels: np.ndarray | None = None      # (L,) temperature or (L, 3) oxygen
    stratified: np.ndarray | None = None  # (L,) bool, oxygen task only
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.fields = np.asarray(self.fields, dtype=np.float64)
        if self.fields.ndim != 2:
            raise ValueError("instance fields must be (length, m)")
        if self.task not in (TEMPERATURE_TASK, OXYGEN_TASK):
            raise ValueError(f"unknown task tag {self.task!r}")


class ModelGenome:
    """A genome plus every trainable parameter and its RDA state."""

    def __init__(self, genome: InteractionGenome, embed_dim: int, hidden: int,
                 stats: FieldStats, rng: np.random.Generator,
                 rda_gamma: float = 3e-3, rda_kappa: float = 1e-3):
        m, e = genome.m, embed_dim
        p = len(genome.pairs)
        self.genome = genome
        self.embed_dim = e
        self.hidden = hidden
        self.stats = stats
        self.fitness = float("inf")

        self.embed_w = Parameter(rng.normal(0.0, 0.5, (m, 1, e)), "embed_w")
        self.embed_b = Parameter(rng.normal(0.0, 0.1, (m, 1, e)), "embed_b")
        self.pff_w = Parameter(rng.normal(0.0, 1.0 / np.sqrt(e), (p, e, e)),
                               "pff_w")
        self.pff_b = Parameter(np.zeros((p, 1, e)), "pff_b")
        self.cff_w = Parameter(rng.normal(0.0, 1.0 / np.sqrt(2 * e),
                                          (p, 2 * e, e)), "cff_w")
        self.cff_b = Parameter(np.zeros((p, 1, e)), "cff_b")
        self.alpha = Parameter(genome.alpha.reshape(m, 1, 1).copy(), "alpha")
        self.beta = Parameter(genome.beta.reshape(p, 1, 1).copy(), "beta")
        self.trunk = init_cell_weights((m + p) * e, hidden, rng)
        self.head_temp_w = Parameter(
            rng.normal(0.0, 1.0 / np.sqrt(hidden), (hidden, 1)), "head_temp_w")
        self.head_temp_b = Parameter(
            np.array([stats.target_means["temperature"]]), "head_temp_b")
        self.head_do_w = Parameter(
            rng.normal(0.0, 1.0 / np.sqrt(hidden), (hidden, 3)), "head_do_w")
        self.head_do_b = Parameter(
            np.array([stats.target_means["do_epi"],
                      stats.target_means["do_hyp"],
                      stats.target_means["do_total"]]), "head_do_b")

        names = [f"alpha[{i}]" for i in range(m)] \
            + [f"beta[{i},{j}]" for i, j in genome.pairs]
        self.relevance_state = RdaState(names, gamma=rda_gamma,
                                        kappa=rda_kappa)

    # -- parameter groups ---------------------------------------------------
    def weight_parameters(self) -> list[Parameter]:
        return [self.embed_w, self.embed_b, self.pff_w, self.pff_b,
                self.cff_w, self.cff_b, *self.trunk.parameters(),
                self.head_temp_w, self.head_temp_b, self.head_do_w,
                self.head_do_b]

    def relevance_parameters(self) -> list[Parameter]:
        return [self.alpha, self.beta]

    def all_parameters(self) -> list[Parameter]:
        return self.weight_parameters() + self.relevance_parameters()

    def sync_relevances_from_state(self):
        values = self.relevance_state.values()
        m = self.genome.m
        self.genome.alpha = values[:m].copy()
        self.genome.beta = values[m:].copy()
        self.alpha.values[...] = values[:m].reshape(-1, 1, 1)
        self.beta.values[...] = values[m:].reshape(-1, 1, 1)

    def apply_relevance_gradients(self):
        """One dual-averaging step from the accumulated alpha/beta grads."""
        grads = np.concatenate([self.alpha.grad.reshape(-1),
                                self.beta.grad.reshape(-1)])
        self.relevance_state.step(grads)
        self.sync_relevances_from_state()
        self.alpha.zero_grad()
        self.beta.zero_grad()

    def reinit_pair_weights(self, pair_index: int, rng: np.random.Generator):
        e = self.embed_dim
        self.pff_w.values[pair_index] = rng.normal(0.0, 1.0 / np.sqrt(e),
                                                   (e, e))
        self.pff_b.values[pair_index] = 0.0
        self.cff_w.values[pair_index] = rng.normal(0.0, 1.0 / np.sqrt(2 * e),
                                                   (2 * e, e))
        self.cff_b.values[pair_index] = 0.0

    def clone(self) -> "ModelGenome":
        out = ModelGenome.__new__(ModelGenome)
        out.genome = self.genome.copy()
        out.embed_dim = self.embed_dim
        out.hidden = self.hidden
        out.stats = self.stats
        out.fitness = self.fitness
        for name in ("embed_w", "embed_b", "pff_w", "pff_b", "cff_w", "cff_b",
                     "alpha", "beta", "head_temp_w", "head_temp_b",
                     "head_do_w", "head_do_b"):
            src = getattr(self, name)
            setattr(out, name, Parameter(src.values.copy(), src.identifier))
        out.trunk = RecurrentCellWeights(
            Parameter(self.trunk.w_input.values.copy(), "trunk.w_input"),
            Parameter(self.trunk.w_hidden.values.copy(), "trunk.w_hidden"),
            Parameter(self.trunk.bias.values.copy(), "trunk.bias"))
        out.relevance_state = self.relevance_state.clone()
        return out


# ---------------------------------------------------------------------------
# forward machinery


def embed(model: ModelGenome, fields: np.ndarray) -> Tensor:
    """Per-field affine embeddings of standardized inputs.

    ``fields`` is (N, m) raw; the result is (m, N, E).
    """
    m = model.genome.m
    if fields.ndim != 2 or fields.shape[1] != m:
        raise ValueError(
            f"embed: expected (N, {m}) fields, got {fields.shape}")
    x = model.stats.standardize(fields).T[:, :, None]  # (m, N, 1)
    return T.add(T.multiply(T.constant(x), model.embed_w), model.embed_b)


def apply_operation(kind: OperationKind, f_i: Tensor, f_j: Tensor,
                    ff_w: Tensor | None = None,
                    ff_b: Tensor | None = None) -> Tensor:
    """Single-pair interaction; all kinds return dimension E."""
    kind = OperationKind(kind)
    if kind == OperationKind.SUM:
        return T.add(f_i, f_j)
    if kind == OperationKind.PRODUCT:
        return T.multiply(f_i, f_j)
    if kind == OperationKind.PRODUCT_FF:
        return T.add(T.matmul(T.multiply(f_i, f_j), ff_w), ff_b)
    return T.add(T.matmul(T.concatenate([f_i, f_j], axis=-1), ff_w), ff_b)


def interaction_block(model: ModelGenome, f: Tensor,
                      removed_pairs: set | None = None) -> Tensor:
    """Beta-gated interaction vectors for all pairs, canonical order (P, N, E).

    ``removed_pairs`` (indices into the canonical pair list) zero their
    slots without evaluating them; used to verify pruning equivalence.
    """
    genome = model.genome
    p = len(genome.pairs)
    idx_i = np.fromiter((i for i, _ in genome.pairs), dtype=np.intp, count=p)
    idx_j = np.fromiter((j for _, j in genome.pairs), dtype=np.intp, count=p)
    f_i = T.gather(f, idx_i, axis=0)
    f_j = T.gather(f, idx_j, axis=0)

    groups = []
    order = []
    for kind in OperationKind:
        sel = np.nonzero(genome.ops == int(kind))[0]
        if sel.size == 0:
            continue
        gi = T.gather(f_i, sel, axis=0)
        gj = T.gather(f_j, sel, axis=0)
        if kind == OperationKind.SUM:
            out = T.add(gi, gj)
        elif kind == OperationKind.PRODUCT:
            out = T.multiply(gi, gj)
        elif kind == OperationKind.PRODUCT_FF:
            w = T.gather(model.pff_w, sel, axis=0)
            b = T.gather(model.pff_b, sel, axis=0)
            out = T.add(T.matmul(T.multiply(gi, gj), w), b)
        else:
            w = T.gather(model.cff_w, sel, axis=0)
            b = T.gather(model.cff_b, sel, axis=0)
            out = T.add(T.matmul(T.concatenate([gi, gj], axis=2), w), b)
        groups.append(out)
        order.append(sel)
    grouped = groups[0] if len(groups) == 1 else T.concatenate(groups, axis=0)
    perm = np.concatenate(order)
    inverse = np.argsort(perm, kind="stable")
    canonical = T.gather(grouped, inverse, axis=0)

    beta = model.beta
    if removed_pairs:
        mask = np.ones((p, 1, 1))
        for k in removed_pairs:
            mask[k] = 0.0
        beta = T.multiply(beta, T.constant(mask))
    return T.multiply(beta, canonical)


def assemble_input(model: ModelGenome, f: Tensor,
                   removed_pairs: set | None = None) -> Tensor:
    """Concatenate alpha-gated features and beta-gated interactions (N, D)."""
    m = model.genome.m
    p = len(model.genome.pairs)
    e = model.embed_dim
    n = f.values.shape[1]
    gated = T.multiply(model.alpha, f)
    feat_flat = T.reshape(T.transpose(gated, (1, 0, 2)), (n, m * e))
    if p == 0:
        return feat_flat
    inter = interaction_block(model, f, removed_pairs)
    inter_flat = T.reshape(T.transpose(inter, (1, 0, 2)), (n, p * e))
    return T.concatenate([feat_flat, inter_flat], axis=1)


def forward_hidden(model: ModelGenome, fields: np.ndarray,
                   removed_pairs: set | None = None) -> Tensor:
    """Trunk hidden states for B sequences of length L, (L * B, H) rows
    time-major (row t * B + b belongs to step t of sequence b)."""
    if fields.ndim != 3:
        raise ValueError(f"forward: fields must be (B, L, m), got "
                         f"{fields.shape}")
    batch, length, m = fields.shape
    if length < 1:
        raise ValueError("forward: sequence length must be >= 1")
    flat = fields.transpose(1, 0, 2).reshape(length * batch, m)
    f = embed(model, flat)
    x = assemble_input(model, f, removed_pairs)
    x_gates = T.matmul(x, model.trunk.w_input)
    return sequence_scan(x_gates, model.trunk.w_hidden, model.trunk.bias,
                         batch, length)


def _head(model: ModelGenome, h_all: Tensor, task: str) -> Tensor:
    if task == TEMPERATURE_TASK:
        return T.add(T.matmul(h_all, model.head_temp_w), model.head_temp_b)
    if task == OXYGEN_TASK:
        return T.add(T.matmul(h_all, model.head_do_w), model.head_do_b)
    raise ValueError(f"unknown task tag {task!r}")


def forward_batch(model: ModelGenome, fields: np.ndarray, task: str,
                  removed_pairs: set | None = None) -> Tensor:
    """Run B sequences of length L; returns (L * B, out_dim) predictions."""
    return _head(model, forward_hidden(model, fields, removed_pairs), task)


def forward_sequence(model: ModelGenome, instance: InputInstance) -> Tensor:
    """Predictions for a single instance, shape (L, out_dim)."""
    return forward_batch(model, instance.fields[None, :, :], instance.task)


# ---------------------------------------------------------------------------
# multi-task pretraining loss


@dataclass
class TaskBatch:
    """Arrays for one mixed minibatch of the pretraining stream."""

    temp_fields: np.ndarray | None = None    # (Bt, L, m)
    temp_labels: np.ndarray | None = None    # (Bt, L)
    do_fields: np.ndarray | None = None      # (Bd, L, m)
    do_labels: np.ndarray | None = None      # (Bd, L, 3) epi, hyp, total
    do_stratified: np.ndarray | None = None  # (Bd, L) bool

    @classmethod
    def from_instances(cls, instances: list[InputInstance]) -> "TaskBatch":
        temp = [i for i in instances if i.task == TEMPERATURE_TASK]
        do = [i for i in instances if i.task == OXYGEN_TASK]
        out = cls()
        if temp:
            out.temp_fields = np.stack([i.fields for i in temp])
            out.temp_labels = np.stack([i.labels for i in temp])
        if do:
            out.do_fields = np.stack([i.fields for i in do])
            out.do_labels = np.stack([i.labels for i in do])
            out.do_stratified = np.stack([i.stratified for i in do])
        return out

    @property
    def empty(self) -> bool:
        return self.temp_fields is None and self.do_fields is None


def _time_major_flat(arr: np.ndarray) -> np.ndarray:
    """(B, L, ...) -> (L * B, ...) matching forward_batch's row order."""
    return arr.transpose(1, 0, *range(2, arr.ndim)).reshape(
        arr.shape[0] * arr.shape[1], *arr.shape[2:])


def multitask_loss(model: ModelGenome, batch: TaskBatch,
                   w_do: float = 1.0) -> Tensor:
    """Pretraining objective over simulated labels.

    Temperature: MSE over every cell.  Oxygen: MSE of the epi and hyp
    heads on stratified days plus MSE of the total head on mixed days;
    masked-out terms are excluded from their means entirely.
    """
    if batch.empty:
        raise ValueError("multitask_loss: empty batch")
    # both tasks ride one trunk pass when their lengths agree
    temp_h = do_h = None
    if batch.temp_fields is not None and batch.do_fields is not None \
            and batch.temp_fields.shape[1] == batch.do_fields.shape[1]:
        n_temp = batch.temp_fields.shape[0]
        n_do = batch.do_fields.shape[0]
        length = batch.temp_fields.shape[1]
        both = np.concatenate([batch.temp_fields, batch.do_fields], axis=0)
        h_all = forward_hidden(model, both)
        width = n_temp + n_do
        steps = np.arange(length)[:, None] * width
        temp_h = T.gather(h_all, (steps + np.arange(n_temp)).ravel(), axis=0)
        do_h = T.gather(h_all, (steps + n_temp + np.arange(n_do)).ravel(),
                        axis=0)
    terms = []
    if batch.temp_fields is not None:
        if temp_h is None:
            temp_h = forward_hidden(model, batch.temp_fields)
        preds = _head(model, temp_h, TEMPERATURE_TASK)
        labels = _time_major_flat(batch.temp_labels)[:, None]
        terms.append(T.mse(preds, labels))
    if batch.do_fields is not None:
        if do_h is None:
            do_h = forward_hidden(model, batch.do_fields)
        preds = _head(model, do_h, OXYGEN_TASK)
        labels = _time_major_flat(batch.do_labels)
        strat = _time_major_flat(batch.do_stratified).astype(np.float64)
        mixed = 1.0 - strat
        do_terms = []
        if strat.sum() > 0:
            for col in (0, 1):
                do_terms.append(T.mse(T.gather(preds, [col], axis=1),
                                      labels[:, col:col + 1],
                                      weights=strat[:, None]))
        if mixed.sum() > 0:
            do_terms.append(T.mse(T.gather(preds, [2], axis=1),
                                  labels[:, 2:3], weights=mixed[:, None]))
        if do_terms:
            do_sum = do_terms[0]
            for extra in do_terms[1:]:
                do_sum = T.add(do_sum, extra)
            terms.append(T.multiply(T.constant(w_do), do_sum))
    total = terms[0]
    for extra in terms[1:]:
        total = T.add(total, extra)
    return total
