"""Evolution unit laws: mutation, crossover, selection, 1/5 rule, gene map."""

import numpy as np
import pytest

from limnolearn.evolution import (EvolutionConfig, Member, TrainSettings,
                                  adapt_sigma, apply_selection,
                                  build_gene_map, crossover, export_gene_map,
                                  init_population, mutate, run_pretraining)
from limnolearn.model import FieldStats, ModelGenome, random_genome
from limnolearn.optim import Adam

N_CASES = 200


def tiny_model(m=5, seed=0, fitness=1.0) -> ModelGenome:
    rng = np.random.default_rng(seed)
    model = ModelGenome(random_genome(m, rng), 2, 3, FieldStats.identity(m),
                        rng)
    model.fitness = fitness
    return model


class TestMutation:
    def test_mutated_operation_differs(self):
        for case in range(N_CASES):
            rng = np.random.default_rng(case)
            model = tiny_model(seed=case)
            model.beta.values[...] = 0.0
            model.genome.beta[...] = 0.0   # every pair is a candidate
            out, mutated = mutate(model, sigma=1.0, lambda_mut=0.05, rng=rng)
            assert len(mutated) == len(model.genome.pairs)
            assert np.all(out.genome.ops != model.genome.ops)

    def test_sigma_zero_is_identity(self):
        for case in range(N_CASES):
            rng = np.random.default_rng(case)
            model = tiny_model(seed=case)
            model.genome.beta[:] = rng.uniform(-0.2, 0.2,
                                               len(model.genome.pairs))
            out, mutated = mutate(model, sigma=0.0, lambda_mut=0.5, rng=rng)
            assert mutated == []
            assert np.array_equal(out.genome.ops, model.genome.ops)
            assert np.array_equal(out.genome.beta, model.genome.beta)

    def test_high_relevance_pairs_untouched(self):
        for case in range(50):
            rng = np.random.default_rng(case)
            model = tiny_model(seed=case)
            model.genome.beta[:] = 1.0   # all above threshold
            out, mutated = mutate(model, sigma=1.0, lambda_mut=0.5, rng=rng)
            assert mutated == []
            assert np.array_equal(out.genome.ops, model.genome.ops)

    def test_mutation_keeps_shape_and_pairs(self):
        rng = np.random.default_rng(9)
        model = tiny_model(seed=9)
        model.genome.beta[:] = 0.0
        out, _ = mutate(model, sigma=1.0, lambda_mut=0.1, rng=rng)
        assert out.genome.m == model.genome.m
        assert out.genome.pairs == model.genome.pairs
        assert out.pff_w.values.shape == model.pff_w.values.shape

    def test_mutation_resets_relevance_history(self):
        rng = np.random.default_rng(11)
        model = tiny_model(seed=11)
        model.relevance_state.gsum[:] = 5.0
        model.sync_relevances_from_state()
        out, mutated = mutate(model, sigma=1.0, lambda_mut=0.5, rng=rng)
        for k in mutated:
            assert out.relevance_state.gsum[model.genome.m + k] == 0.0


class TestCrossover:
    def test_argmax_beta_with_tie_break(self):
        for case in range(N_CASES):
            rng = np.random.default_rng(10_000 + case)
            models = [tiny_model(seed=3 * case + i, fitness=rng.uniform(1, 2))
                      for i in range(3)]
            for m in models:
                m.genome.beta[:] = rng.choice(
                    [0.1, 0.4, 0.4, 0.9], size=len(m.genome.pairs))
            child = crossover(models)
            betas = np.stack([m.genome.beta for m in models])
            expected_winner = np.argmax(betas, axis=0)  # first max = lowest
            for k, win in enumerate(expected_winner):
                assert child.genome.ops[k] == models[win].genome.ops[k]
                assert child.genome.beta[k] == pytest.approx(
                    betas[win, k], abs=1e-12)

    def test_identical_parents_reproduce(self):
        base = tiny_model(seed=42, fitness=1.0)
        clones = [base.clone() for _ in range(3)]
        for c in clones:
            c.fitness = 1.0
        child = crossover(clones)
        assert np.array_equal(child.genome.ops, base.genome.ops)
        assert np.allclose(child.genome.beta, base.genome.beta, atol=1e-12)
        assert np.allclose(child.genome.alpha, base.genome.alpha, atol=1e-12)

    def test_dominant_parent_wins_everywhere(self):
        models = [tiny_model(seed=i, fitness=float(i + 1)) for i in range(3)]
        models[1].genome.beta[:] = 2.0   # strictly dominant
        models[0].genome.beta[:] = 0.5
        models[2].genome.beta[:] = 0.5
        child = crossover(models)
        assert np.array_equal(child.genome.ops, models[1].genome.ops)

    def test_alpha_from_largest_magnitude(self):
        models = [tiny_model(seed=i, fitness=1.0 + i) for i in range(2)]
        models[0].genome.alpha[:] = 0.3
        models[1].genome.alpha[:] = -0.8
        child = crossover(models)
        assert np.allclose(child.genome.alpha, -0.8, atol=1e-12)

    def test_weights_cloned_from_fittest(self):
        models = [tiny_model(seed=i, fitness=f)
                  for i, f in enumerate([2.0, 0.5, 1.0])]
        child = crossover(models)
        assert np.array_equal(child.trunk.w_input.values,
                              models[1].trunk.w_input.values)

    def test_order_invariance_up_to_tie_breaks(self):
        models = [tiny_model(seed=i, fitness=float(i + 1)) for i in range(3)]
        rng = np.random.default_rng(0)
        for m in models:
            m.genome.beta[:] = rng.uniform(0.1, 1.0, len(m.genome.pairs))
        child = crossover(models)
        # distinct betas: any ordering with the same members and fitness
        # ordering must give the same operations and relevances
        reordered = crossover(models[::-1])
        assert np.array_equal(child.genome.ops, reordered.genome.ops)
        assert np.allclose(child.genome.beta, reordered.genome.beta,
                           atol=1e-12)

    def test_needs_two_members(self):
        with pytest.raises(ValueError):
            crossover([tiny_model()])


class TestSelection:
    def _member(self, fitness) -> Member:
        model = tiny_model(seed=0, fitness=fitness)
        return Member(model, Adam(model.weight_parameters()))

    def test_acceptance_iff_not_worse_than_worst(self):
        rng = np.random.default_rng(7)
        for _ in range(N_CASES):
            losses = rng.uniform(0.0, 2.0, size=4)
            members = [self._member(f) for f in losses]
            off_loss = float(rng.uniform(0.0, 2.5))
            offspring = self._member(off_loss)
            out, accepted = apply_selection(members, offspring)
            assert accepted == (off_loss <= losses.max())
            assert len(out) == 4
            if accepted:
                assert offspring in out
                assert members[int(np.argmax(losses))] not in out
            else:
                assert out == members

    def test_equal_loss_is_accepted(self):
        members = [self._member(f) for f in (0.5, 1.0, 2.0)]
        offspring = self._member(2.0)
        _, accepted = apply_selection(members, offspring)
        assert accepted

    def test_rescaling_losses_preserves_decisions(self):
        rng = np.random.default_rng(8)
        for _ in range(100):
            losses = rng.uniform(0.1, 2.0, size=3)
            off = float(rng.uniform(0.1, 2.5))
            scale = float(rng.uniform(0.5, 10.0))
            a = apply_selection([self._member(f) for f in losses],
                                self._member(off))[1]
            b = apply_selection([self._member(f * scale) for f in losses],
                                self._member(off * scale))[1]
            assert a == b

    def test_best_loss_bookkeeping_non_increasing(self):
        # selection + best-ever tracking: the recorded best never rises
        rng = np.random.default_rng(9)
        for _ in range(N_CASES):
            best = float("inf")
            losses = list(rng.uniform(0.5, 2.0, size=4))
            trace = []
            for _ in range(12):
                losses = [max(0.0, f + rng.normal(0, 0.2)) for f in losses]
                off = float(rng.uniform(0.0, 2.5))
                worst = int(np.argmax(losses))
                if off <= losses[worst]:
                    losses[worst] = off
                best = min(best, min(losses))
                trace.append(best)
            assert all(a >= b for a, b in zip(trace, trace[1:]))


class TestOneFifthRule:
    config = EvolutionConfig(n=2, window=10, factor=0.85, sigma0=0.2,
                             sigma_min=0.01, sigma_max=0.5)

    def test_hand_value(self):
        # [DERIVED] 0 successes in window 10 -> sigma * 0.85
        sigma = adapt_sigma([False] * 10, 0.2, self.config)
        assert sigma == pytest.approx(0.17, rel=1e-12)

    def test_exact_one_fifth_fixed_point(self):
        history = [True] * 2 + [False] * 8
        assert adapt_sigma(history, 0.2, self.config) == 0.2

    def test_clamped_at_bounds(self):
        sigma = 0.2
        for _ in range(100):
            sigma = adapt_sigma([False] * 10, sigma, self.config)
        assert sigma == self.config.sigma_min
        sigma = 0.2
        for _ in range(100):
            sigma = adapt_sigma([True] * 10, sigma, self.config)
        assert sigma == self.config.sigma_max

    def test_arithmetic_over_random_histories(self):
        rng = np.random.default_rng(3)
        for _ in range(N_CASES):
            history = [bool(b) for b in rng.integers(0, 2, size=10)]
            sigma = float(rng.uniform(0.02, 0.4))
            rate = np.mean(history)
            out = adapt_sigma(history, sigma, self.config)
            if rate < 0.2:
                assert out == max(sigma * 0.85, 0.01)
            elif rate > 0.2:
                assert out == min(sigma / 0.85, 0.5)
            else:
                assert out == sigma

    def test_incomplete_window_unchanged(self):
        assert adapt_sigma([True] * 4, 0.3, self.config) == 0.3


class TestGeneMap:
    def test_codes_match_operations_and_pruning(self):
        for case in range(N_CASES):
            rng = np.random.default_rng(20_000 + case)
            model = tiny_model(seed=case)
            mask = rng.random(len(model.genome.pairs)) < 0.4
            model.genome.beta[mask] = 0.0
            model.genome.beta[~mask] = rng.uniform(0.1, 1.0, (~mask).sum())
            gm = build_gene_map(model)
            assert np.array_equal(gm.codes, gm.codes.T)
            assert set(np.unique(gm.codes)) <= {-1, 0, 1, 2, 3}
            for k, (i, j) in enumerate(model.genome.pairs):
                if model.genome.beta[k] == 0.0:
                    assert gm.codes[i, j] == -1
                    assert gm.relevance[i, j] == 0.0
                else:
                    assert gm.codes[i, j] == model.genome.ops[k]
                    assert gm.relevance[i, j] == abs(model.genome.beta[k])

    def test_export_symmetric_and_round(self, tmp_path):
        model = tiny_model(seed=5)
        model.genome.beta[0] = 0.0
        codes_path, rel_path = export_gene_map(model, tmp_path / "gm")
        rows = [line.split(",") for line in
                open(codes_path).read().strip().splitlines()[1:]]
        matrix = np.array([[int(x) for x in r[1:]] for r in rows])
        assert np.array_equal(matrix, matrix.T)
        i, j = model.genome.pairs[0]
        assert matrix[i, j] == -1


class TestPopulationRun:
    def _data(self):
        from limnolearn.data import PretrainData
        from limnolearn.lake import generate_drivers, sample_lakes, simulate
        lakes = sample_lakes(2, seed=4, depth_range=(4.0, 6.0))
        trajs = [simulate(lk, generate_drivers(lk, 365, seed=i), seed=i)
                 for i, lk in enumerate(lakes)]
        return PretrainData(trajs, window=20, seed=0, depths_per_lake=2)

    def test_init_population_deterministic_and_uniform(self):
        import scipy.stats
        data = self._data()
        config = EvolutionConfig(
            n=3, tau=1, max_generations=1, seed=12,
            train=TrainSettings(embed_dim=2, hidden=3))
        pop_a = init_population(config, data)
        pop_b = init_population(config, data)
        assert len(pop_a.members) == 3
        for a, b in zip(pop_a.members, pop_b.members):
            assert np.array_equal(a.model.genome.ops, b.model.genome.ops)
            assert np.isfinite(a.model.fitness)
        # operation codes uniform over a large sample of pairs
        rng = np.random.default_rng(0)
        ops = np.concatenate([random_genome(16, rng).ops for _ in range(10)])
        counts = np.bincount(ops, minlength=4)
        assert counts.sum() == 1200
        p = scipy.stats.chisquare(counts).pvalue
        assert p > 0.01

    def test_run_pretraining_trace_and_degenerate_run(self):
        data = self._data()
        config = EvolutionConfig(
            n=2, tau=2, max_generations=3, seed=5,
            train=TrainSettings(embed_dim=2, hidden=3,
                                batch_temperature=1, batch_oxygen=1))
        best, genemap, trace = run_pretraining(config, data)
        assert len(trace) == 3
        best_losses = [r.best_loss for r in trace]
        assert all(a >= b for a, b in zip(best_losses, best_losses[1:]))
        genemap.validate()

        config0 = EvolutionConfig(
            n=2, tau=2, max_generations=0, seed=5,
            train=TrainSettings(embed_dim=2, hidden=3))
        best0, _, trace0 = run_pretraining(config0, data)
        assert trace0 == []
        assert np.isfinite(best0.fitness)

    def test_fixed_seed_reproduces_gene_map(self):
        data = self._data()
        config = EvolutionConfig(
            n=2, tau=2, max_generations=2, seed=7,
            train=TrainSettings(embed_dim=2, hidden=3,
                                batch_temperature=1, batch_oxygen=1))
        _, gm_a, _ = run_pretraining(config, data)
        _, gm_b, _ = run_pretraining(config, data)
        assert np.array_equal(gm_a.codes, gm_b.codes)
        assert np.array_equal(gm_a.relevance, gm_b.relevance)
