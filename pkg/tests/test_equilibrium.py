"""Tests for equilibrium computation, shock models, and panel simulation."""

import numpy as np
import pytest

from netprice.equilibrium import (
    PanelData,
    ShockModel,
    UniformPriceSampler,
    best_response_iterate,
    export_panel_csv,
    load_panel,
    panel_from_dict,
    panel_to_dict,
    residual_shocks,
    save_panel,
    simulate_panel,
    solve_equilibrium,
)
from netprice.errors import (
    ConfigurationError,
    ModelViolationError,
    StructuralError,
)
from netprice.network import NetworkInstance, derive, generate_banded

from conftest import make_chain_instance


def decoupled_instance(n=3, a=2.0, b=1.0, p_bar=1.0):
    return NetworkInstance(
        g=np.zeros((n, n)),
        a=np.full(n, a),
        b=np.full(n, b),
        observable=tuple(range(n)),
        p_bar=p_bar,
        zeta=2.0 * b,
    )


class TestSolveEquilibrium:
    def test_decoupled_closed_form(self):
        d = derive(decoupled_instance())
        y = solve_equilibrium(d, np.ones(3), np.zeros(3))
        assert y == pytest.approx([0.5, 0.5, 0.5], abs=1e-14)

    def test_chain_consistency_of_two_formulas(self):
        inst = make_chain_instance()
        d = derive(inst)
        p = np.array([1.0, 1.0, 1.5])
        y = solve_equilibrium(d, p, np.zeros(3))
        direct = np.linalg.solve(d.m, inst.a - p)
        assert np.max(np.abs(y - direct)) < 1e-12
        y_obs_formula = d.v_o - d.h_inv @ p[:2]
        assert np.max(np.abs(y[:2] - y_obs_formula)) < 1e-12

    def test_linearity_in_surplus(self):
        inst = make_chain_instance()
        d = derive(inst)
        p = np.array([1.0, 0.8, 1.5])
        y1 = solve_equilibrium(d, p, np.zeros(3))
        # doubling a - p (via shocks equal to the surplus) doubles y
        xi = inst.a - p
        y2 = solve_equilibrium(d, p, xi)
        assert np.max(np.abs(y2 - 2.0 * y1)) < 1e-12

    def test_sup_norm_bound(self):
        inst = generate_banded(20, 2, seed=3)
        d = derive(inst)
        p = np.full(20, inst.p_bar * 0.5)
        xi = np.zeros(20)
        y = solve_equilibrium(d, p, xi)
        assert np.max(np.abs(y)) <= np.max(np.abs(inst.a - p)) / inst.zeta + 1e-12

    def test_precondition_violations(self):
        d = derive(decoupled_instance())
        with pytest.raises(ModelViolationError):
            solve_equilibrium(d, np.full(3, 2.0), np.zeros(3))  # price above p_bar
        with pytest.raises(ModelViolationError):
            solve_equilibrium(d, np.zeros(3), np.full(3, -1.5))  # value below outside
        with pytest.raises(StructuralError):
            solve_equilibrium(d, np.zeros(2), np.zeros(3))


class TestBestResponse:
    def test_decoupled_converges_fast(self):
        inst = decoupled_instance()
        y, iters = best_response_iterate(inst, np.ones(3), np.zeros(3))
        assert y == pytest.approx([0.5, 0.5, 0.5], abs=1e-12)
        assert iters <= 2

    def test_chain_matches_closed_form(self):
        inst = make_chain_instance()
        d = derive(inst)
        p = np.array([1.0, 1.0, 1.5])
        y_closed = solve_equilibrium(d, p, np.zeros(3))
        y_iter, iters = best_response_iterate(inst, p, np.zeros(3), tol=1e-10)
        assert np.max(np.abs(y_iter - y_closed)) < 1e-8
        assert iters < 100

    def test_monotone_iterates_from_zero(self):
        inst = generate_banded(15, 2, seed=5)
        p = np.full(15, 0.5 * inst.p_bar)
        xi = np.zeros(15)
        base = inst.a + xi - p
        y = np.zeros(15)
        for _ in range(200):
            y_next = np.maximum(0.0, (base + inst.g @ y) / (2.0 * inst.b))
            assert np.all(y_next >= y - 1e-15)
            if np.max(np.abs(y_next - y)) <= 1e-12:
                break
            y = y_next

    def test_agreement_on_random_triples(self):
        rng = np.random.default_rng(0)
        for trial in range(100):
            inst = generate_banded(
                8 + trial % 10, 1 + trial % 3, latent_fraction=0.0, seed=trial
            )
            d = derive(inst)
            n = inst.n_nodes
            p = rng.uniform(0.0, inst.p_bar, n)
            bound = 0.9 * float(np.min(inst.a) - inst.p_bar)
            xi = rng.uniform(-bound, bound, n)
            y_closed = solve_equilibrium(d, p, xi)
            y_iter, _ = best_response_iterate(inst, p, xi, tol=1e-10)
            assert np.max(np.abs(y_iter - y_closed)) <= 1e-8

    def test_max_iter_raises(self):
        inst = make_chain_instance()
        from netprice.errors import DivergenceError

        with pytest.raises(DivergenceError):
            best_response_iterate(
                inst, np.array([1.0, 1.0, 1.5]), np.zeros(3), tol=1e-12, max_iter=2
            )


class TestShockModel:
    def test_bad_parameters(self):
        with pytest.raises(ConfigurationError):
            ShockModel(family="laplace")
        with pytest.raises(ConfigurationError):
            ShockModel(sigma=-0.1)
        with pytest.raises(ConfigurationError):
            ShockModel(rho=1.0)

    def test_truncation_respected(self):
        model = ShockModel(sigma=0.15, rho=0.3)
        gen = np.random.default_rng(1)
        bound = 0.6
        draws = np.array([model.draw(gen, 50, bound) for _ in range(200)])
        assert np.max(np.abs(draws)) < bound

    def test_zero_scale(self):
        model = ShockModel(sigma=0.0)
        gen = np.random.default_rng(1)
        assert not model.draw(gen, 5, 1.0).any()

    def test_uniform_family(self):
        model = ShockModel(family="uniform", sigma=0.2)
        gen = np.random.default_rng(2)
        draws = np.array([model.draw(gen, 20, 5.0) for _ in range(2000)])
        assert abs(draws.mean()) < 0.01
        assert draws.std() == pytest.approx(0.2, rel=0.05)

    def test_impossible_truncation(self):
        model = ShockModel(sigma=50.0)
        gen = np.random.default_rng(3)
        with pytest.raises(ConfigurationError):
            model.draw(gen, 40, 0.01)

    def test_mean_zero(self):
        model = ShockModel(sigma=0.3, rho=0.2)
        gen = np.random.default_rng(4)
        draws = np.array([model.draw(gen, 10, 0.9) for _ in range(20000)])
        se = draws.std() / np.sqrt(draws.size)
        assert abs(draws.mean()) < 5 * se + 1e-12


class TestPriceSampler:
    def test_range(self):
        sampler = UniformPriceSampler()
        gen = np.random.default_rng(0)
        draws = sampler.sample(gen, 1000, 2.0)
        assert draws.min() >= 0.4 and draws.max() <= 2.0

    def test_bad_fractions(self):
        with pytest.raises(ConfigurationError):
            UniformPriceSampler(low_frac=0.9, high_frac=0.5)
        with pytest.raises(ConfigurationError):
            UniformPriceSampler(low_frac=-0.1)


class TestSimulatePanel:
    def test_shapes_and_determinism(self):
        inst = make_chain_instance()
        p1 = simulate_panel(inst, 40, seed=9)
        p2 = simulate_panel(inst, 40, seed=9)
        assert p1.prices.shape == (40, 2)
        assert np.array_equal(p1.prices, p2.prices)
        assert np.array_equal(p1.consumption, p2.consumption)
        p3 = simulate_panel(inst, 40, seed=10)
        assert not np.array_equal(p1.prices, p3.prices)

    def test_panel_invariants(self):
        inst = generate_banded(20, 2, latent_fraction=0.3, seed=6)
        panel = simulate_panel(inst, 200, seed=1)
        assert panel.consumption.min() > 0.0
        assert panel.prices.min() >= 0.0
        assert panel.prices.max() <= inst.p_bar

    def test_noiseless_panel_is_affine(self):
        inst = make_chain_instance()
        d = derive(inst)
        panel = simulate_panel(
            inst, 50, shock_model=ShockModel(sigma=0.0), seed=3
        )
        x = np.column_stack([np.ones(50), panel.prices])
        coef, *_ = np.linalg.lstsq(x, panel.consumption, rcond=None)
        assert np.max(np.abs(coef[0] - d.v_o)) < 1e-8
        assert np.max(np.abs(coef[1:] + d.h_inv.T)) < 1e-8

    def test_affine_identity_on_rows(self):
        inst = generate_banded(15, 2, latent_fraction=0.4, seed=8)
        d = derive(inst)
        panel = simulate_panel(inst, 100, seed=5)
        eps = residual_shocks(panel, d)
        recon = d.v_o - panel.prices @ d.h_inv.T + eps
        assert np.max(np.abs(recon - panel.consumption)) < 1e-9

    def test_extension_of_observation_count_is_prefix_stable(self):
        # per-observation streams: the first rows of a longer panel match
        # the shorter panel exactly
        inst = make_chain_instance()
        short = simulate_panel(inst, 10, seed=2)
        long = simulate_panel(inst, 25, seed=2)
        assert np.array_equal(short.prices, long.prices[:10])
        assert np.array_equal(short.consumption, long.consumption[:10])

    @pytest.mark.slow
    def test_shock_means_and_exogeneity(self):
        inst = generate_banded(10, 2, latent_fraction=0.3, seed=11)
        d = derive(inst)
        n = 100000
        panel = simulate_panel(inst, n, seed=13)
        eps = residual_shocks(panel, d)
        sd = eps.std(axis=0)
        assert np.max(np.abs(eps.mean(axis=0))) <= 5 * sd.max() / np.sqrt(n)
        # exogeneity: sample covariance between prices and residuals
        pc = panel.prices - panel.prices.mean(axis=0)
        cov = pc.T @ eps / n
        scale = panel.prices.std(axis=0).max() * sd.max()
        assert np.max(np.abs(cov)) <= 5 * scale / np.sqrt(n)

    def test_too_large_shocks_rejected(self):
        inst = make_chain_instance()  # a - p_bar = 0.5
        with pytest.raises((ConfigurationError, ModelViolationError)):
            simulate_panel(
                inst, 10, shock_model=ShockModel(sigma=5.0, truncation=10.0), seed=1
            )

    def test_bad_observation_count(self):
        with pytest.raises(ConfigurationError):
            simulate_panel(make_chain_instance(), 0, seed=1)


class TestPanelSerialization:
    def test_round_trip(self, tmp_path):
        inst = generate_banded(12, 2, latent_fraction=0.25, seed=17)
        panel = simulate_panel(inst, 30, seed=21)
        path = tmp_path / "panel.json"
        save_panel(panel, path)
        loaded = load_panel(path)
        assert loaded.n == panel.n
        assert loaded.observable == panel.observable
        assert np.array_equal(loaded.prices, panel.prices)
        assert np.array_equal(loaded.consumption, panel.consumption)
        assert loaded.seed == panel.seed
        assert loaded.instance is None  # blind after round trip
        assert loaded.shock_meta["p_bar"] == inst.p_bar

    def test_csv_export(self, tmp_path):
        inst = make_chain_instance()
        panel = simulate_panel(inst, 5, seed=2)
        path = tmp_path / "panel.csv"
        export_panel_csv(panel, path)
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "t,node,price,consumption"
        assert len(lines) == 1 + 5 * 2
        first = lines[1].split(",")
        assert first[0] == "0" and first[1] == "0"
        assert float(first[2]) == panel.prices[0, 0]
        assert float(first[3]) == panel.consumption[0, 0]

    def test_malformed_panels(self):
        with pytest.raises(StructuralError):
            panel_from_dict({"n": 2})
        good = panel_to_dict(simulate_panel(make_chain_instance(), 3, seed=1))
        bad = dict(good)
        bad["prices"] = bad["prices"][:-1]
        with pytest.raises(StructuralError):
            panel_from_dict(bad)

    def test_panel_type_invariants(self):
        with pytest.raises(StructuralError):
            PanelData(
                prices=np.array([[0.5]]),
                consumption=np.array([[-1.0]]),
                observable=(0,),
                seed=0,
            )
        with pytest.raises(StructuralError):
            PanelData(
                prices=np.array([[-0.5]]),
                consumption=np.array([[1.0]]),
                observable=(0,),
                seed=0,
            )
        with pytest.raises(StructuralError):
            PanelData(
                prices=np.array([[0.5, 0.2]]),
                consumption=np.array([[1.0, 1.0]]),
                observable=(0,),
                seed=0,
            )
