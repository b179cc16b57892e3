"""Exact round-trip persistence of model genomes (npz container)."""

from __future__ import annotations

import json

import numpy as np

from .model import FieldStats, InteractionGenome, ModelGenome
from .optim import RdaState
from .recurrent import RecurrentCellWeights
from .tensor import Parameter

_PARAM_KEYS = ("embed_w", "embed_b", "pff_w", "pff_b", "cff_w", "cff_b",
               "alpha", "beta", "head_temp_w", "head_temp_b", "head_do_w",
               "head_do_b")


def save_model(model: ModelGenome, path, metadata: dict | None = None):
    arrays = {
        "genome_ops": model.genome.ops,
        "genome_alpha": model.genome.alpha,
        "genome_beta": model.genome.beta,
        "trunk_w_input": model.trunk.w_input.values,
        "trunk_w_hidden": model.trunk.w_hidden.values,
        "trunk_bias": model.trunk.bias.values,
        "rda_gsum": model.relevance_state.gsum,
        "stats_means": model.stats.means,
        "stats_stds": model.stats.stds,
    }
    for key in _PARAM_KEYS:
        arrays[f"param_{key}"] = getattr(model, key).values
    scalars = {
        "m": model.genome.m,
        "embed_dim": model.embed_dim,
        "hidden": model.hidden,
        "fitness": model.fitness,
        "rda_t": model.relevance_state.t,
        "rda_gamma": model.relevance_state.gamma,
        "rda_kappa": model.relevance_state.kappa,
        "rda_w0": model.relevance_state.w0,
        "target_means": model.stats.target_means,
        "metadata": metadata or {},
    }
    arrays["scalars_json"] = np.array(json.dumps(scalars, sort_keys=True))
    np.savez(path, **arrays)


def load_model(path) -> tuple[ModelGenome, dict]:
    """Returns (model, metadata); arrays round-trip bitwise."""
    with np.load(path, allow_pickle=False) as data:
        scalars = json.loads(str(data["scalars_json"]))
        genome = InteractionGenome(
            m=int(scalars["m"]),
            ops=data["genome_ops"],
            alpha=data["genome_alpha"],
            beta=data["genome_beta"])
        stats = FieldStats(means=data["stats_means"].copy(),
                           stds=data["stats_stds"].copy(),
                           target_means=scalars["target_means"])
        model = ModelGenome.__new__(ModelGenome)
        model.genome = genome
        model.embed_dim = int(scalars["embed_dim"])
        model.hidden = int(scalars["hidden"])
        model.stats = stats
        model.fitness = float(scalars["fitness"])
        for key in _PARAM_KEYS:
            setattr(model, key, Parameter(data[f"param_{key}"].copy(), key))
        model.trunk = RecurrentCellWeights(
            Parameter(data["trunk_w_input"].copy(), "trunk.w_input"),
            Parameter(data["trunk_w_hidden"].copy(), "trunk.w_hidden"),
            Parameter(data["trunk_bias"].copy(), "trunk.bias"))
        names = [f"alpha[{i}]" for i in range(genome.m)] \
            + [f"beta[{i},{j}]" for i, j in genome.pairs]
        state = RdaState(names, gamma=float(scalars["rda_gamma"]),
                         kappa=float(scalars["rda_kappa"]),
                         w0=float(scalars["rda_w0"]))
        state.gsum = data["rda_gsum"].copy()
        state.t = int(scalars["rda_t"])
        model.relevance_state = state
        return model, scalars["metadata"]
