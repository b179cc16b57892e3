"""End-to-end experiment orchestration shared by the CLI and the tests.

Stages: simulate a pretraining world, evolve the foundation model in it,
build a fine-tuning world (truth-variant simulator + sparse noisy
observations on fresh lakes), fine-tune the comparison variants and
evaluate them on held-out lakes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import FIELD_NAMES, PretrainData
from .evolution import (EvolutionConfig, TrainSettings, run_pretraining)
from .finetune import (FinetuneConfig, LakeFinetuneInputs, ObservationSet,
                       build_lake_inputs, evaluate, finetune_task,
                       generate_observations)
from .lake import SimParams, generate_drivers, sample_lakes, simulate
from .model import (OXYGEN_TASK, TEMPERATURE_TASK, ModelGenome, random_genome)
from .runconfig import RunConfig
from .seeding import derive_seed

VARIANTS = ("pgfm", "no_pretrain", "no_physics", "no_that", "baseline")


def simulate_pretrain_world(config: RunConfig) -> list:
    """Sample lakes and integrate the pretraining simulator."""
    lakes = sample_lakes(config.sim.n_lakes,
                         derive_seed(config.seed, "pretrain-lakes"),
                         depth_range=(config.sim.depth_min,
                                      config.sim.depth_max),
                         area_range=(config.sim.area_min,
                                     config.sim.area_max))
    days = config.sim.years * 365
    out = []
    for k, lake in enumerate(lakes):
        drivers = generate_drivers(lake, days,
                                   derive_seed(config.seed, "pretrain-drv", k),
                                   noise_scale=config.sim.driver_noise)
        out.append(simulate(lake, drivers,
                            derive_seed(config.seed, "pretrain-sim", k)))
    return out


def build_pretrain_data(config: RunConfig, trajectories) -> PretrainData:
    return PretrainData(trajectories, window=config.model.sequence_length,
                        val_fraction=config.evolution.val_fraction,
                        seed=derive_seed(config.seed, "split"),
                        depths_per_lake=config.model.depths_per_lake)


def evolution_config(config: RunConfig) -> EvolutionConfig:
    e = config.evolution
    return EvolutionConfig(
        n=e.n, tau=e.tau, sigma0=e.sigma0, sigma_min=e.sigma_min,
        sigma_max=e.sigma_max, lambda_mut=e.lambda_mut, window=e.window,
        factor=e.factor, max_generations=e.max_generations,
        seed=derive_seed(config.seed, "evolution"),
        train=TrainSettings(
            learning_rate=e.learning_rate,
            batch_temperature=e.batch_temperature,
            batch_oxygen=e.batch_oxygen,
            w_do=config.model.w_do,
            rda_gamma=config.rda.gamma,
            rda_kappa=config.rda.kappa,
            embed_dim=config.model.embed_dim,
            hidden=config.model.hidden))


def pretrain(config: RunConfig, data: PretrainData, workers: int = 1):
    return run_pretraining(evolution_config(config), data, workers=workers)


@dataclass
class ExperimentWorld:
    """Fine-tuning and evaluation material on fresh lakes."""

    train: list[LakeFinetuneInputs]
    eval: list[LakeFinetuneInputs]
    obs_temperature: ObservationSet
    obs_oxygen: ObservationSet


def build_experiment_world(config: RunConfig) -> ExperimentWorld:
    f = config.finetune
    lakes = sample_lakes(f.n_lakes + f.n_eval_lakes,
                         derive_seed(config.seed, "exp-lakes"),
                         depth_range=(f.depth_min, f.depth_max),
                         area_range=(config.sim.area_min,
                                     config.sim.area_max))
    days = f.years * 365
    truth_params = SimParams().perturbed(derive_seed(config.seed, "truth"),
                                         scale=f.truth_perturbation)
    inputs = []
    for k, lake in enumerate(lakes):
        drivers = generate_drivers(lake, days,
                                   derive_seed(config.seed, "exp-drv", k),
                                   noise_scale=config.sim.driver_noise)
        sim_seed = derive_seed(config.seed, "exp-sim", k)
        features = simulate(lake, drivers, sim_seed, params=SimParams())
        truth = simulate(lake, drivers, sim_seed, params=truth_params)
        inputs.append(build_lake_inputs(truth, features))
    train, evaluation = inputs[:f.n_lakes], inputs[f.n_lakes:]
    truth_by_id = {x.lake_id: x.truth for x in train}
    obs_t = generate_observations(truth_by_id, TEMPERATURE_TASK,
                                  f.obs_fraction, f.obs_noise_temperature,
                                  derive_seed(config.seed, "obs-t"))
    obs_o = generate_observations(truth_by_id, OXYGEN_TASK, f.obs_fraction,
                                  f.obs_noise_oxygen,
                                  derive_seed(config.seed, "obs-o"))
    return ExperimentWorld(train=train, eval=evaluation,
                           obs_temperature=obs_t, obs_oxygen=obs_o)


def finetune_config(config: RunConfig, lambda_phy=None) -> FinetuneConfig:
    f = config.finetune
    return FinetuneConfig(
        lambda_phy=f.lambda_phy if lambda_phy is None else lambda_phy,
        tau_ec_fraction=f.tau_ec_fraction, tau_mc=f.tau_mc,
        epochs=f.epochs, learning_rate=f.learning_rate,
        window=config.model.sequence_length,
        window_stride=config.model.sequence_length,
        per_lake=f.per_lake)


def fresh_model(config: RunConfig, stats, tag: str,
                zero_interactions: bool = False) -> ModelGenome:
    rng = np.random.default_rng(
        np.random.SeedSequence(derive_seed(config.seed, tag)))
    genome = random_genome(len(FIELD_NAMES), rng)
    model = ModelGenome(genome, config.model.embed_dim, config.model.hidden,
                        stats, rng, rda_gamma=config.rda.gamma,
                        rda_kappa=config.rda.kappa)
    if zero_interactions:
        model.beta.values[...] = 0.0
        model.genome.beta[...] = 0.0
    return model


def run_variant(variant: str, config: RunConfig, pretrained: ModelGenome,
                world: ExperimentWorld) -> dict:
    """Fine-tune one comparison variant; returns its models.

    pgfm        : pretrained genome, physics on, oxygen consumes the
                  fine-tuned temperature predictions
    no_pretrain : random genome, otherwise like pgfm
    no_physics  : pretrained genome, lambda_phy = 0
    no_that     : like pgfm but oxygen keeps the simulator temperatures
                  (no temperature model of its own)
    baseline    : random genome with all interactions removed, no
                  physics, simulator temperatures
    """
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}")
    if variant == "no_that":
        raise ValueError("no_that is derived from pgfm in run_experiment")
    fc = finetune_config(config)
    seed_t = derive_seed(config.seed, "ft", variant, "t")
    seed_o = derive_seed(config.seed, "ft", variant, "o")

    if variant == "no_pretrain":
        start = fresh_model(config, pretrained.stats, f"fresh-{variant}")
    elif variant == "baseline":
        start = fresh_model(config, pretrained.stats, f"fresh-{variant}",
                            zero_interactions=True)
        fc = finetune_config(config, lambda_phy=0.0)
    else:
        start = pretrained
        if variant == "no_physics":
            fc = finetune_config(config, lambda_phy=0.0)

    temp_model, temp_trace = finetune_task(
        start, TEMPERATURE_TASK, world.train, world.obs_temperature, fc,
        seed_t)
    temp_for_do = None if variant == "baseline" else temp_model
    do_model, do_trace = finetune_task(
        start, OXYGEN_TASK, world.train, world.obs_oxygen, fc, seed_o,
        temp_model=temp_for_do)
    return {"temp_model": temp_model, "do_model": do_model,
            "temp_for_do": temp_for_do, "config": fc,
            "temp_trace": temp_trace, "do_trace": do_trace}


def run_experiment(config: RunConfig, pretrained: ModelGenome,
                   world: ExperimentWorld | None = None,
                   variants=None) -> dict:
    """Fine-tune and evaluate the requested variants on held-out lakes."""
    if world is None:
        world = build_experiment_world(config)
    variants = list(variants or config.finetune.variants)
    fitted = {}
    for variant in variants:
        if variant == "no_that":
            # pretrained start, physics on, but the oxygen inputs keep the
            # simulator temperatures; no temperature model of its own
            fc = finetune_config(config)
            do_model, do_trace = finetune_task(
                pretrained, OXYGEN_TASK, world.train, world.obs_oxygen, fc,
                derive_seed(config.seed, "ft", "no_that", "o"),
                temp_model=None)
            fitted[variant] = {"temp_model": None, "do_model": do_model,
                               "temp_for_do": None, "config": fc,
                               "do_trace": do_trace}
        else:
            fitted[variant] = run_variant(variant, config, pretrained, world)

    metrics = {}
    for variant in variants:
        fit = fitted[variant]
        metrics[variant] = evaluate(fit["temp_model"], fit["do_model"],
                                    world.eval,
                                    temp_model_for_do=fit["temp_for_do"],
                                    window=config.eval.window)
    return {"metrics": metrics, "fitted": fitted, "world": world}
