"""Population-based pretraining: n parents, one offspring per generation.

Each generation every member trains for tau steps (Adam for weights,
dual averaging for relevances), crossover + mutation produce an
offspring which also trains tau steps, and the offspring replaces the
least-fit parent iff its validation loss is at most the worst parent's.
Mutation probability adapts by the 1/5 success rule.  Fitness is the
multi-task loss on a validation split fixed for the whole run.
"""

from __future__ import annotations

import concurrent.futures
import csv
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .data import FIELD_NAMES, PretrainData
from .model import ModelGenome, OperationKind, multitask_loss, random_genome
from .optim import Adam


@dataclass
class TrainSettings:
    """Per-member stream and optimizer settings."""

    learning_rate: float = 3e-3
    batch_temperature: int = 2
    batch_oxygen: int = 1
    w_do: float = 1.0
    rda_gamma: float = 3e-3
    rda_kappa: float = 1e-3
    embed_dim: int = 8
    hidden: int = 32


@dataclass
class EvolutionConfig:
    n: int = 4
    tau: int = 200
    sigma0: float = 0.2
    sigma_min: float = 0.01
    sigma_max: float = 0.5
    lambda_mut: float = 0.05
    window: int = 5
    factor: float = 0.85
    max_generations: int = 30
    seed: int = 0
    train: TrainSettings = field(default_factory=TrainSettings)

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("population size must be >= 2")
        if not 0.0 < self.factor < 1.0:
            raise ValueError("one-fifth factor must lie in (0, 1)")
        if not self.sigma_min <= self.sigma0 <= self.sigma_max:
            raise ValueError("sigma0 outside [sigma_min, sigma_max]")


@dataclass
class Member:
    model: ModelGenome
    adam: Adam


@dataclass
class Population:
    members: list[Member]
    generation: int = 0
    success_history: list[bool] = field(default_factory=list)
    sigma: float = 0.2
    best_model: ModelGenome | None = None   # best-ever snapshot
    best_loss: float = float("inf")


def _member_rng(seed: int, *key) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence((seed, 0xE7,) + key))


def evaluate_fitness(model: ModelGenome, data: PretrainData,
                     w_do: float = 1.0) -> float:
    with T.no_tape():
        losses = [multitask_loss(model, b, w_do=w_do).item()
                  for b in data.val_batches]
    return float(np.mean(losses))


def train_member(member: Member, data: PretrainData, steps: int,
                 rng: np.random.Generator, settings: TrainSettings):
    """tau optimization steps on the multitask stream (in place)."""
    for _ in range(steps):
        batch = data.sample_batch(rng, settings.batch_temperature,
                                  settings.batch_oxygen)
        T.clear_tape()
        loss = multitask_loss(member.model, batch, w_do=settings.w_do)
        T.backward(loss)
        member.adam.step()
        member.model.apply_relevance_gradients()
    T.clear_tape()


def init_population(config: EvolutionConfig, data: PretrainData) -> Population:
    members = []
    m = len(FIELD_NAMES) if data is None else data.train_tables[0] \
        .temp_fields.shape[1]
    for k in range(config.n):
        rng = _member_rng(config.seed, 0, k)
        genome = random_genome(m, rng)
        model = ModelGenome(genome, config.train.embed_dim,
                            config.train.hidden, data.stats, rng,
                            rda_gamma=config.train.rda_gamma,
                            rda_kappa=config.train.rda_kappa)
        model.fitness = evaluate_fitness(model, data, config.train.w_do)
        members.append(Member(model, Adam(model.weight_parameters(),
                                          lr=config.train.learning_rate)))
    pop = Population(members=members, sigma=config.sigma0)
    _update_best(pop)
    return pop


def _update_best(pop: Population):
    idx = int(np.argmin([m.model.fitness for m in pop.members]))
    fit = pop.members[idx].model.fitness
    if fit <= pop.best_loss:
        pop.best_loss = fit
        pop.best_model = pop.members[idx].model.clone()
        pop.best_model.fitness = fit


def mutate(model: ModelGenome, sigma: float, lambda_mut: float,
           rng: np.random.Generator) -> tuple[ModelGenome, list[int]]:
    """Mutate low-relevance pairs with probability sigma (returns a copy).

    A mutated pair gets a uniformly random different operation, its
    relevance history is reset and its feed-forward weights reinitialized.
    """
    out = model.clone()
    genome = out.genome
    m = genome.m
    mutated = []
    for k in range(len(genome.pairs)):
        if genome.beta[k] < lambda_mut and rng.random() < sigma:
            old = int(genome.ops[k])
            choices = [op for op in range(4) if op != old]
            genome.ops[k] = choices[int(rng.integers(3))]
            out.relevance_state.reset_coordinate(m + k)
            out.reinit_pair_weights(k, rng)
            mutated.append(k)
    if mutated:
        out.sync_relevances_from_state()
    return out, mutated


def crossover(members: list[Member] | list[ModelGenome]) -> ModelGenome:
    """Build the offspring: per pair the operation of the member with the
    largest beta (ties to the lowest member index), alpha from the member
    with the largest |alpha|, network weights cloned from the fittest.

    Inherited relevance values are anchored into the offspring's own
    dual-averaging state, so they match the winning parents' values and
    keep evolving from there (an accepted offspring has trained more
    steps than its peers, so raw gradient histories are not comparable).
    """
    models = [m.model if isinstance(m, Member) else m for m in members]
    if len(models) < 2:
        raise ValueError("crossover needs at least 2 members")
    fittest = int(np.argmin([m.fitness for m in models]))
    out = models[fittest].clone()

    betas = np.stack([m.genome.beta for m in models])      # (n, P)
    alphas = np.stack([m.genome.alpha for m in models])    # (n, m)
    beta_winner = np.argmax(betas, axis=0)
    alpha_winner = np.argmax(np.abs(alphas), axis=0)

    m_fields = out.genome.m
    for k, win in enumerate(beta_winner):
        out.genome.ops[k] = models[win].genome.ops[k]
        out.relevance_state.anchor_coordinate(m_fields + k, betas[win, k])
    for i, win in enumerate(alpha_winner):
        out.relevance_state.anchor_coordinate(i, alphas[win, i])
    out.sync_relevances_from_state()
    out.fitness = float("inf")
    return out


def adapt_sigma(history: list[bool], sigma: float,
                config: EvolutionConfig) -> float:
    """1/5 success rule over the last ``window`` generations."""
    if len(history) < config.window:
        return sigma
    rate = float(np.mean(history[-config.window:]))
    if rate < 0.2:
        return max(sigma * config.factor, config.sigma_min)
    if rate > 0.2:
        return min(sigma / config.factor, config.sigma_max)
    return sigma


# -- worker-pool plumbing (members train independently per generation) ------
_WORKER_DATA: PretrainData | None = None


def _init_worker(data: PretrainData):
    global _WORKER_DATA
    import os
    os.environ.setdefault("OMP_NUM_THREADS", "1")
    _WORKER_DATA = data


def _train_and_score(member: Member, steps: int, seed_key: tuple,
                     settings: TrainSettings, w_do: float) -> Member:
    rng = _member_rng(*seed_key)
    train_member(member, _WORKER_DATA, steps, rng, settings)
    member.model.fitness = evaluate_fitness(member.model, _WORKER_DATA, w_do)
    return member


def _run_members(members: list[Member], steps: int, seed_keys: list[tuple],
                 config: EvolutionConfig, data: PretrainData, pool):
    if pool is None:
        global _WORKER_DATA
        _WORKER_DATA = data
        return [_train_and_score(m, steps, key, config.train, config.train.w_do)
                for m, key in zip(members, seed_keys)]
    futures = [pool.submit(_train_and_score, m, steps, key, config.train,
                           config.train.w_do)
               for m, key in zip(members, seed_keys)]
    return [f.result() for f in futures]


def generation_step(pop: Population, config: EvolutionConfig,
                    data: PretrainData, pool=None) -> Population:
    """One generation: train members, breed, train offspring, select."""
    g = pop.generation
    seed_keys = [(config.seed, 1, g, k) for k in range(len(pop.members))]
    pop.members = _run_members(pop.members, config.tau, seed_keys, config,
                               data, pool)

    rng_mut = _member_rng(config.seed, 2, g)
    offspring_model, _ = mutate(crossover(pop.members), pop.sigma,
                                config.lambda_mut, rng_mut)
    offspring = Member(offspring_model,
                       Adam(offspring_model.weight_parameters(),
                            lr=config.train.learning_rate))
    offspring = _run_members([offspring], config.tau,
                             [(config.seed, 3, g)], config, data, pool)[0]

    pop.members, accepted = apply_selection(pop.members, offspring)
    pop.success_history.append(accepted)
    pop.generation += 1
    _update_best(pop)
    return pop


def apply_selection(members: list[Member],
                    offspring: Member) -> tuple[list[Member], bool]:
    """Worst-replacement: the offspring joins iff its loss is at most the
    least-fit member's (ties accept); population size never changes."""
    losses = [m.model.fitness for m in members]
    worst = int(np.argmax(losses))
    accepted = offspring.model.fitness <= losses[worst]
    out = list(members)
    if accepted:
        out[worst] = offspring
    return out, accepted


@dataclass
class GenerationRecord:
    generation: int
    best_loss: float
    worst_loss: float
    sigma: float
    accepted: bool


def run_pretraining(config: EvolutionConfig, data: PretrainData,
                    workers: int = 1):
    """Full pretraining loop.

    Returns (best model snapshot, gene map, list of GenerationRecord).
    The best snapshot is the lowest validation loss ever observed, so its
    trace is non-increasing by construction.
    """
    pop = init_population(config, data)
    trace: list[GenerationRecord] = []
    pool = None
    try:
        if workers > 1:
            pool = concurrent.futures.ProcessPoolExecutor(
                max_workers=workers, initializer=_init_worker,
                initargs=(data,))
        for _ in range(config.max_generations):
            pop = generation_step(pop, config, data, pool)
            trace.append(GenerationRecord(
                generation=pop.generation,
                best_loss=pop.best_loss,
                worst_loss=max(m.model.fitness for m in pop.members),
                sigma=pop.sigma,
                accepted=pop.success_history[-1]))
            pop.sigma = adapt_sigma(pop.success_history, pop.sigma, config)
    finally:
        if pool is not None:
            pool.shutdown()
    best = pop.best_model
    return best, build_gene_map(best), trace


# ---------------------------------------------------------------------------
# gene maps


@dataclass
class GeneMap:
    """Symmetric operation-code and relevance-magnitude matrices.

    Codes: -1 pruned, otherwise the OperationKind code.  The diagonal
    holds the feature-level entries: relevance |alpha_i| with code 0 when
    active, -1 when alpha_i is exactly zero.
    """

    codes: np.ndarray
    relevance: np.ndarray
    feature_names: list[str]

    def validate(self):
        if not np.array_equal(self.codes, self.codes.T):
            raise ValueError("gene map: codes matrix must be symmetric")
        if not np.array_equal(self.relevance, self.relevance.T):
            raise ValueError("gene map: relevance matrix must be symmetric")
        if not np.all(np.isin(self.codes, [-1, 0, 1, 2, 3])):
            raise ValueError("gene map: invalid operation code")
        if not np.array_equal(self.codes == -1, self.relevance == 0.0):
            raise ValueError("gene map: -1 entries must match zero relevance")


def build_gene_map(model: ModelGenome,
                   feature_names: list[str] | None = None) -> GeneMap:
    genome = model.genome
    m = genome.m
    codes = np.zeros((m, m), dtype=np.int64)
    relevance = np.zeros((m, m))
    for i in range(m):
        relevance[i, i] = abs(genome.alpha[i])
        codes[i, i] = -1 if genome.alpha[i] == 0.0 else 0
    for k, (i, j) in enumerate(genome.pairs):
        pruned = genome.beta[k] == 0.0
        codes[i, j] = codes[j, i] = -1 if pruned else int(genome.ops[k])
        relevance[i, j] = relevance[j, i] = abs(genome.beta[k])
    if feature_names is None:
        feature_names = list(FIELD_NAMES[:m]) if m <= len(FIELD_NAMES) \
            else [f"f{i}" for i in range(m)]
    out = GeneMap(codes, relevance, list(feature_names))
    out.validate()
    return out


def export_gene_map(model: ModelGenome, path_stem,
                    metadata: dict | None = None) -> tuple[str, str]:
    """Write ``<stem>_codes.csv`` and ``<stem>_relevance.csv``."""
    gm = build_gene_map(model)
    paths = (f"{path_stem}_codes.csv", f"{path_stem}_relevance.csv")
    for path, matrix, fmt in zip(paths, (gm.codes, gm.relevance),
                                 ("%d", "%.17g")):
        with open(path, "w", newline="") as fh:
            if metadata:
                joined = " ".join(f"{k}={v}" for k, v in sorted(metadata.items()))
                fh.write(f"# {joined}\n")
            writer = csv.writer(fh)
            writer.writerow([""] + gm.feature_names)
            for name, row in zip(gm.feature_names, matrix):
                writer.writerow([name] + [fmt % x for x in row])
    return paths


def export_fitness_trace(trace: list[GenerationRecord], path,
                         metadata: dict | None = None):
    with open(path, "w", newline="") as fh:
        if metadata:
            joined = " ".join(f"{k}={v}" for k, v in sorted(metadata.items()))
            fh.write(f"# {joined}\n")
        writer = csv.writer(fh)
        writer.writerow(["generation", "best_loss", "worst_loss", "sigma",
                         "accepted"])
        for rec in trace:
            writer.writerow([rec.generation, "%.17g" % rec.best_loss,
                             "%.17g" % rec.worst_loss, "%.17g" % rec.sigma,
                             int(rec.accepted)])
