"""Fine-tuning: masked loss, input coupling, structure freeze, evaluation."""

import numpy as np
import pytest

from limnolearn import tensor as T
from limnolearn.data import FIELD_NAMES, TEMP_SLOTS
from limnolearn.evolution import build_gene_map
from limnolearn.finetune import (FinetuneConfig, build_do_inputs,
                                 build_lake_inputs, evaluate, finetune_task,
                                 generate_observations, masked_ml_loss,
                                 pooled_rmse, predict_full_temperature,
                                 seasonal_squared_errors,
                                 temperature_aggregates)
from limnolearn.lake import SimParams, generate_drivers, sample_lakes, simulate
from limnolearn.model import (OXYGEN_TASK, TEMPERATURE_TASK, FieldStats,
                              ModelGenome, random_genome)


@pytest.fixture(scope="module")
def world():
    lakes = sample_lakes(2, seed=31, depth_range=(4.0, 6.0))
    out = []
    for k, lake in enumerate(lakes):
        drivers = generate_drivers(lake, 365, seed=40 + k)
        features = simulate(lake, drivers, seed=k)
        truth = simulate(lake, drivers, seed=k,
                         params=SimParams().perturbed(99))
        out.append(build_lake_inputs(truth, features))
    return out


@pytest.fixture(scope="module")
def stats(world):
    m = len(FIELD_NAMES)
    fields = np.concatenate([lk.do_fields for lk in world])
    means = np.zeros(m)
    stds = np.ones(m)
    means[:] = fields.mean(axis=0)
    s = fields.std(axis=0)
    stds[s > 1e-9] = s[s > 1e-9]
    return FieldStats(means, stds, {"temperature": 10.0, "do_epi": 9.0,
                                    "do_hyp": 7.0, "do_total": 10.0})


def make_model(stats, seed=0) -> ModelGenome:
    rng = np.random.default_rng(seed)
    return ModelGenome(random_genome(len(FIELD_NAMES), rng), 4, 8, stats, rng)


class TestMaskedMlLoss:
    def test_perfect_predictions(self):
        preds = T.constant(np.array([[1.0, 2.0], [3.0, 4.0]]))
        mask = np.array([[1.0, 0.0], [1.0, 1.0]])
        loss = masked_ml_loss(preds, np.array([[1.0, 9.9], [3.0, 4.0]]), mask)
        assert loss.item() == 0.0

    def test_single_cell_residual(self):
        preds = T.constant(np.array([[5.0]]))
        loss = masked_ml_loss(preds, np.array([[3.0]]), np.array([[1.0]]))
        assert loss.item() == 4.0

    def test_unobserved_days_do_not_matter(self):
        preds = T.constant(np.array([[5.0], [7.0]]))
        obs = np.array([[3.0], [0.0]])
        mask = np.array([[1.0], [0.0]])
        a = masked_ml_loss(preds, obs, mask).item()
        obs2 = obs.copy()
        obs2[1] = 123.0
        b = masked_ml_loss(preds, obs2, mask).item()
        assert a == b == 4.0

    def test_empty_observation_set(self):
        with pytest.raises(ValueError, match="empty"):
            masked_ml_loss(T.constant(np.ones((2, 2))), np.ones((2, 2)),
                           np.zeros((2, 2)))


class TestObservations:
    def test_fraction_and_determinism(self, world):
        truth = {lk.lake_id: lk.truth for lk in world}
        a = generate_observations(truth, TEMPERATURE_TASK, 0.05, 0.5, seed=1)
        b = generate_observations(truth, TEMPERATURE_TASK, 0.05, 0.5, seed=1)
        for lid in truth:
            assert np.array_equal(a.values[lid], b.values[lid])
        days = int(a.mask[world[0].lake_id][:, 0].sum())
        assert days == max(1, round(0.05 * world[0].truth.n_days))

    def test_oxygen_masks_follow_regime(self, world):
        truth = {lk.lake_id: lk.truth for lk in world}
        obs = generate_observations(truth, OXYGEN_TASK, 0.1, 0.4, seed=2)
        for lk in world:
            mask = obs.mask[lk.lake_id]
            strat = lk.truth.stratified
            observed = mask.sum(axis=1) > 0
            assert np.all(mask[observed & strat][:, 2] == 0)
            assert np.all(mask[observed & ~strat][:, :2] == 0)

    def test_invalid_fraction(self, world):
        truth = {lk.lake_id: lk.truth for lk in world}
        with pytest.raises(ValueError):
            generate_observations(truth, OXYGEN_TASK, 0.0, 0.4, seed=2)


class TestBuildDoInputs:
    def test_identity_when_predictions_equal_simulator(self, world, stats):
        # a model that reproduces the feature simulator's aggregates leaves
        # the input fields untouched
        lake = world[0]
        base = build_do_inputs(lake, None)
        assert np.array_equal(base, lake.do_fields)

    def test_slot_replacement_preserves_field_count(self, world, stats):
        lake = world[0]
        model = make_model(stats, seed=3)
        fields = build_do_inputs(lake, model)
        assert fields.shape == lake.do_fields.shape
        untouched = [i for i in range(len(FIELD_NAMES))
                     if i not in TEMP_SLOTS]
        assert np.array_equal(fields[:, untouched],
                              lake.do_fields[:, untouched])
        assert not np.array_equal(fields[:, list(TEMP_SLOTS)],
                                  lake.do_fields[:, list(TEMP_SLOTS)])

    def test_aggregates_are_local_in_time(self, world):
        lake = world[0]
        temps = lake.truth.temps.copy()
        a = temperature_aggregates(temps, lake.truth, 0)
        temps2 = temps.copy()
        temps2[10] += 2.0
        b = temperature_aggregates(temps2, lake.truth, 0)
        changed = np.nonzero(np.any(a != b, axis=1))[0]
        assert np.array_equal(changed, [10])


class TestFinetuneTask:
    def _obs(self, world, task, fraction=0.3):
        truth = {lk.lake_id: lk.truth for lk in world}
        noise = 0.5 if task == TEMPERATURE_TASK else 0.4
        return generate_observations(truth, task, fraction, noise, seed=5)

    def test_lambda_zero_total_equals_ml(self, world, stats):
        model = make_model(stats, seed=4)
        config = FinetuneConfig(lambda_phy=0.0, epochs=1, window=20,
                                window_stride=120)
        out, trace = finetune_task(model, TEMPERATURE_TASK, world,
                                   self._obs(world, TEMPERATURE_TASK),
                                   config, seed=0)
        for row in trace.steps:
            assert row["loss_total"] == row["loss_ml"]

    def test_total_is_ml_plus_lambda_phy(self, world, stats):
        model = make_model(stats, seed=4)
        config = FinetuneConfig(lambda_phy=0.25, epochs=1, window=20,
                                window_stride=120)
        out, trace = finetune_task(model, OXYGEN_TASK, world,
                                   self._obs(world, OXYGEN_TASK),
                                   config, seed=0)
        for row in trace.steps:
            assert row["loss_total"] == pytest.approx(
                row["loss_ml"] + 0.25 * row["loss_phy"], abs=1e-12)

    def test_zero_learning_rate_is_fixed_point(self, world, stats):
        model = make_model(stats, seed=6)
        obs = self._obs(world, TEMPERATURE_TASK, fraction=0.2)
        # observations generated from the model's own noiseless predictions;
        # 73-day windows tile the 365-day year exactly, so the training
        # rollouts see the same state resets the stitched predictions used
        for lk in world:
            preds = predict_full_temperature(model, lk, window=73)
            obs.values[lk.lake_id] = preds * obs.mask[lk.lake_id]
        config = FinetuneConfig(lambda_phy=0.0, epochs=1, learning_rate=0.0,
                                window=73, window_stride=73)
        _, trace = finetune_task(model, TEMPERATURE_TASK, world, obs, config,
                                 seed=0)
        for row in trace.steps:
            assert row["loss_ml"] == pytest.approx(0.0, abs=1e-18)

    def test_structure_frozen(self, world, stats):
        model = make_model(stats, seed=7)
        model.beta.values[::3] = 0.0
        model.genome.beta[::3] = 0.0
        before = build_gene_map(model)
        config = FinetuneConfig(lambda_phy=0.1, epochs=1, window=20,
                                window_stride=60, learning_rate=1e-2)
        out, _ = finetune_task(model, OXYGEN_TASK, world,
                               self._obs(world, OXYGEN_TASK), config, seed=1)
        after = build_gene_map(out)
        assert np.array_equal(before.codes, after.codes)
        assert np.array_equal(before.relevance == 0, after.relevance == 0)
        # magnitudes are allowed to move
        assert not np.array_equal(before.relevance, after.relevance)

    def test_empty_observations_rejected(self, world, stats):
        model = make_model(stats, seed=8)
        obs = self._obs(world, OXYGEN_TASK)
        for lid in obs.mask:
            obs.mask[lid][...] = 0.0
        with pytest.raises(ValueError, match="empty"):
            finetune_task(model, OXYGEN_TASK, world, obs,
                          FinetuneConfig(epochs=1), seed=0)


class TestEvaluate:
    def test_seasonal_routing_partitions_cells(self, world):
        lake = world[0]
        truth = lake.truth
        rng = np.random.default_rng(0)
        temp_preds = truth.temps + rng.normal(0, 1, truth.temps.shape)
        do_preds = np.column_stack([truth.do_epi, truth.do_hyp,
                                    truth.do_total]) + 0.5
        buckets = seasonal_squared_errors(truth, temp_preds, do_preds)
        n_temp = buckets["temperature_stratified"].size \
            + buckets["temperature_mixed"].size
        assert n_temp == truth.temps.size
        n_do = buckets["do_epi"].size + buckets["do_hyp"].size \
            + buckets["do_total"].size
        assert n_do == 2 * truth.stratified.sum() \
            + (~truth.stratified).sum()

    def test_constant_bias_gives_bias_rmse(self, world):
        lake = world[0]
        truth = lake.truth
        buckets = seasonal_squared_errors(truth, truth.temps + 1.5, None)
        rmse = pooled_rmse([buckets["temperature_stratified"],
                            buckets["temperature_mixed"]])
        assert rmse == pytest.approx(1.5, rel=1e-12)

    def test_hand_built_three_observation_rmse(self):
        # [DERIVED] rmse of residuals {1, 2, 3} = sqrt(14 / 3)
        chunks = [np.array([1.0, 4.0]), np.array([9.0])]
        assert pooled_rmse(chunks) == pytest.approx(np.sqrt(14.0 / 3.0),
                                                    rel=1e-12)

    def test_perfect_predictions_zero_rmse(self, world):
        lake = world[0]
        buckets = seasonal_squared_errors(
            lake.truth, lake.truth.temps,
            np.column_stack([lake.truth.do_epi, lake.truth.do_hyp,
                             lake.truth.do_total]))
        for chunk in buckets.values():
            assert np.all(chunk == 0.0)

    def test_evaluate_emits_all_buckets(self, world, stats):
        temp_model = make_model(stats, seed=9)
        do_model = make_model(stats, seed=10)
        out = evaluate(temp_model, do_model, world,
                       temp_model_for_do=temp_model, window=20)
        assert set(out["temperature"]) == {"stratified", "mixed", "all"}
        assert set(out["do"]) >= {"epi_stratified", "hyp_stratified",
                                  "total_mixed", "stratified", "all"}
        assert "energy_inconsistency" in out
        assert "mass_inconsistency" in out
        assert "surface_temp_do_correlation" in out

    def test_empty_split_rejected(self, stats):
        with pytest.raises(ValueError, match="empty"):
            evaluate(make_model(stats), None, [])
