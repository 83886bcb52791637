"""Tests for network construction, validation, derivation, generation,
centrality, and serialization."""

import json

import numpy as np
import pytest

from netprice.errors import (
    ConfigurationError,
    DefinitionViolatedError,
    DivergenceError,
    SingularityError,
    StructuralError,
)
from netprice.network import (
    NetworkInstance,
    bonacich,
    derive,
    generate_banded,
    generate_bounded_growth,
    generate_polynomial_decay,
    is_strongly_connected,
    load_network,
    network_from_dict,
    network_to_dict,
    save_network,
    validate,
    verify_growth,
)

from conftest import make_chain_instance


def simple_instance(**overrides):
    base = dict(
        g=np.zeros((2, 2)),
        a=[2.0, 2.0],
        b=[1.0, 1.0],
        observable=(0, 1),
        p_bar=1.0,
        zeta=2.0,
    )
    base.update(overrides)
    return NetworkInstance(**base)


class TestValidate:
    def test_empty_graph_ok(self):
        report = validate(simple_instance())
        assert report.ok and report.violations == ()

    def test_row_dominance_violation(self):
        g = np.array([[0.0, 2.1], [0.0, 0.0]])
        report = validate(simple_instance(g=g, zeta=0.1))
        assert not report.ok
        assert any("row dominance" in v and "node 0" in v for v in report.violations)

    def test_column_dominance_violation(self):
        g = np.array([[0.0, 2.1], [0.0, 0.0]])
        report = validate(simple_instance(g=g, zeta=0.1))
        assert any("column dominance" in v and "node 1" in v for v in report.violations)

    def test_chain_instance_ok(self):
        assert validate(make_chain_instance()).ok

    def test_nonzero_diagonal(self):
        g = np.array([[0.3, 0.0], [0.0, 0.0]])
        report = validate(simple_instance(g=g))
        assert any("self-influence" in v for v in report.violations)

    def test_negative_weight(self):
        g = np.array([[0.0, -0.2], [0.0, 0.0]])
        report = validate(simple_instance(g=g))
        assert any("nonnegative" in v for v in report.violations)

    def test_value_below_outside_price(self):
        report = validate(simple_instance(a=[0.5, 2.0]))
        assert any("outside price" in v and "node 0" in v for v in report.violations)

    def test_nonpositive_gap_and_price(self):
        assert not validate(simple_instance(zeta=0.0)).ok
        assert not validate(simple_instance(p_bar=-1.0, zeta=2.0)).ok

    def test_structural_errors_raise(self):
        with pytest.raises(StructuralError):
            validate(simple_instance(a=[1.0, 2.0, 3.0]))
        with pytest.raises(StructuralError):
            validate(simple_instance(observable=()))
        with pytest.raises(StructuralError):
            validate(simple_instance(observable=(1, 0)))
        with pytest.raises(StructuralError):
            validate(simple_instance(observable=(0, 5)))
        with pytest.raises(StructuralError):
            validate(simple_instance(g=np.full((2, 2), np.nan)))
        with pytest.raises(StructuralError):
            validate(simple_instance(labeling=(0, 0)))

    def test_dominance_equality_is_allowed(self):
        # 2b_i = sum_j G_ij + zeta exactly: the inequality is not strict
        g = np.array([[0.0, 1.0], [1.0, 0.0]])
        report = validate(simple_instance(g=g, zeta=1.0))
        assert report.ok


class TestDerive:
    def test_chain_schur_complement(self):
        d = derive(make_chain_instance())
        expected_h = np.array([[1.875, -0.125], [-0.125, 1.875]])
        assert np.max(np.abs(d.h - expected_h)) < 1e-12
        assert np.max(np.abs(d.s_ol - np.array([[-0.25], [-0.25]]))) < 1e-12
        # v_O solves H v = a_O - S_OL (a_L - p_bar): (2,2) + 0.25*0.5 each
        expected_v = np.full(2, 2.125 / 1.75)
        assert np.max(np.abs(d.v_o - expected_v)) < 1e-12

    def test_inverse_routes_agree(self):
        d = derive(make_chain_instance())
        assert np.max(np.abs(d.h @ d.h_inv - np.eye(2))) < 1e-12
        assert np.max(np.abs(d.m @ d.m_inv - np.eye(3))) < 1e-12

    def test_no_latent_nodes(self):
        inst = simple_instance(
            g=np.array([[0.0, 0.5], [0.5, 0.0]]), zeta=1.0, observable=(0, 1)
        )
        d = derive(inst)
        assert np.array_equal(d.h, d.m)
        assert d.s_ol.shape == (2, 0) and d.s_lo.shape == (0, 2)

    def test_decoupled_nodes(self):
        inst = simple_instance()
        d = derive(inst)
        assert np.max(np.abs(d.h_inv - 0.5 * np.eye(2))) < 1e-14
        assert np.max(np.abs(d.v_o - 0.5 * inst.a)) < 1e-14

    def test_invalid_instance_rejected(self):
        bad = simple_instance(g=np.array([[0.0, 5.0], [0.0, 0.0]]), zeta=0.1)
        with pytest.raises(ConfigurationError):
            derive(bad)

    def test_near_singular_latent_block(self):
        # Valid instance (tiny declared gap) whose latent block is
        # ill-conditioned beyond the 1e12 limit.
        eps = 1e-13
        g = np.zeros((3, 3))
        g[1, 2] = g[2, 1] = 2.0 - eps
        inst = NetworkInstance(
            g=g,
            a=[2.0, 2.0, 2.0],
            b=[1.0, 1.0, 1.0],
            observable=(0,),
            p_bar=1.0,
            zeta=eps / 2,
        )
        assert validate(inst).ok
        with pytest.raises(SingularityError):
            derive(inst)


class TestGenerateBanded:
    def test_support_respects_bandwidth(self):
        inst = generate_banded(30, 3, seed=11)
        idx = np.arange(30)
        outside = np.abs(idx[:, None] - idx[None, :]) > 3
        assert np.all(inst.g[outside] == 0.0)
        assert np.all(np.diag(inst.g) == 0.0)
        assert np.all(inst.g[~outside & (idx[:, None] != idx[None, :])] > 0.0)

    def test_zero_bandwidth_is_empty_graph(self):
        inst = generate_banded(10, 0, seed=3)
        assert not inst.g.any()

    def test_determinism(self):
        one = generate_banded(50, 2, seed=7)
        two = generate_banded(50, 2, seed=7)
        assert one.equals(two)
        assert not one.equals(generate_banded(50, 2, seed=8))

    def test_always_valid_across_seeds(self):
        for seed in range(100):
            inst = generate_banded(50, 2, seed=seed)
            assert validate(inst).ok, seed

    def test_latent_fraction_and_floor(self):
        inst = generate_banded(50, 2, latent_fraction=0.2, seed=1)
        assert len(inst.observable) == 40
        all_obs = generate_banded(50, 2, latent_fraction=0.0, seed=1)
        assert len(all_obs.observable) == 50
        nearly_all_latent = generate_banded(50, 2, latent_fraction=0.99, seed=1)
        assert len(nearly_all_latent.observable) >= 1

    def test_weights_never_scaled_up(self):
        inst = generate_banded(20, 2, weight_scale=0.01, b_value=1.0, seed=5)
        assert inst.g.max() <= 0.01

    def test_jitter_keeps_validity(self):
        inst = generate_banded(30, 2, jitter=0.1, seed=9)
        assert validate(inst).ok
        assert len(np.unique(inst.b)) > 1

    def test_bad_parameters(self):
        with pytest.raises(ConfigurationError):
            generate_banded(0, 1)
        with pytest.raises(ConfigurationError):
            generate_banded(10, -1)
        with pytest.raises(ConfigurationError):
            generate_banded(10, 1, weight_scale=0.0)
        with pytest.raises(ConfigurationError):
            generate_banded(10, 1, latent_fraction=1.0)
        with pytest.raises(ConfigurationError):
            generate_banded(10, 1, a_value=0.5, p_bar=1.0)


class TestGeneratePolynomialDecay:
    def test_envelope_bound(self):
        theta, c_scale = 2.5, 0.8
        inst = generate_polynomial_decay(40, theta, c_scale, seed=13)
        idx = np.arange(40)
        dist = np.abs(idx[:, None] - idx[None, :]).astype(float)
        envelope = c_scale / (1.0 + dist) ** theta
        np.fill_diagonal(envelope, 0.0)
        assert np.all(inst.g <= envelope + 1e-15)

    def test_steep_decay_kills_long_links(self):
        inst = generate_polynomial_decay(20, theta=50.0, c_scale=1.0, seed=2)
        idx = np.arange(20)
        far = np.abs(idx[:, None] - idx[None, :]) >= 2
        assert np.all(inst.g[far] < 1e-15)

    def test_determinism(self):
        assert generate_polynomial_decay(30, 2.0, seed=4).equals(
            generate_polynomial_decay(30, 2.0, seed=4)
        )

    def test_theta_must_exceed_one(self):
        with pytest.raises(ConfigurationError):
            generate_polynomial_decay(10, theta=1.0)
        with pytest.raises(ConfigurationError):
            generate_polynomial_decay(10, theta=0.5)


class TestGenerateBoundedGrowth:
    def test_exponential_growth_verified(self):
        inst = generate_bounded_growth(
            60, {"kind": "exponential", "C": 4.0, "d": 3.0}, seed=21
        )
        ok, worst, _ = verify_growth(inst.g, "exponential", 4.0, 3.0)
        assert ok, worst
        assert validate(inst).ok

    def test_polynomial_growth_is_a_lattice_path(self):
        inst = generate_bounded_growth(
            40, {"kind": "polynomial", "C": 3.0, "d": 1.0}, seed=22
        )
        # 1-dimensional lattice: balls grow like 2k+1
        ok, _, _ = verify_growth(inst.g, "polynomial", 3.0, 1.0)
        assert ok
        idx = np.arange(40)
        off_path = np.abs(idx[:, None] - idx[None, :]) > 1
        assert np.all(inst.g[off_path] == 0.0)

    def test_path_ball_bound(self):
        inst = generate_bounded_growth(
            25, {"kind": "polynomial", "C": 3.0, "d": 1.0}, seed=1
        )
        support = inst.g > 0
        # explicit scan: |{j: within k hops either way}| <= 2k+1 on a path
        n = 25
        for i in range(n):
            for k in range(1, n):
                lo, hi = max(0, i - k), min(n - 1, i + k)
                assert hi - lo + 1 <= 2 * k + 1
        assert is_strongly_connected(inst.g)
        assert support.sum(axis=1).max() <= 2

    def test_unachievable_bound(self):
        with pytest.raises(ConfigurationError):
            generate_bounded_growth(
                50, {"kind": "exponential", "C": 1.0, "d": 1.01}, seed=3
            )

    def test_determinism(self):
        spec = {"kind": "exponential", "C": 4.0, "d": 2.0}
        assert generate_bounded_growth(30, spec, seed=5).equals(
            generate_bounded_growth(30, spec, seed=5)
        )

    def test_growth_dict_validation(self):
        with pytest.raises(ConfigurationError):
            generate_bounded_growth(10, {"kind": "cubic", "C": 1.0, "d": 1.0})
        with pytest.raises(ConfigurationError):
            generate_bounded_growth(10, {"kind": "exponential", "C": -1.0, "d": 1.0})
        with pytest.raises(ConfigurationError):
            generate_bounded_growth(10, {"C": 1.0, "d": 1.0})


class TestBonacich:
    def test_zero_parameter(self):
        g = np.array([[0.0, 1.0], [1.0, 0.0]])
        assert np.array_equal(bonacich(0.0, g), np.ones(2))

    def test_two_node_closed_form(self):
        g_val, alpha = 2.0, 0.3
        g = np.array([[0.0, g_val], [g_val, 0.0]])
        k = bonacich(alpha, g)
        assert k == pytest.approx([1.0 / (1 - alpha * g_val)] * 2, rel=1e-12)

    def test_single_node(self):
        assert np.array_equal(bonacich(0.5, np.zeros((1, 1))), np.ones(1))

    def test_entries_at_least_one(self):
        inst = generate_banded(15, 2, seed=3)
        k = bonacich(0.2, inst.g)
        assert np.all(k >= 1.0 - 1e-12)

    def test_divergence(self):
        g = np.array([[0.0, 2.0], [2.0, 0.0]])
        with pytest.raises(DivergenceError):
            bonacich(0.6, g)

    def test_negative_weights_detected(self):
        g = np.array([[0.0, 1.0], [1.0, 0.0]])
        with pytest.raises(DefinitionViolatedError):
            bonacich(-0.9, g)


def _random_instances(count, max_nodes=30):
    """Mix of generators for property sweeps."""
    out = []
    for i in range(count):
        n = 5 + (i * 7) % (max_nodes - 4)
        if i % 3 == 0:
            out.append(generate_banded(n, 1 + i % 4, latent_fraction=0.3, seed=i))
        elif i % 3 == 1:
            out.append(
                generate_polynomial_decay(n, 1.5 + (i % 5), latent_fraction=0.3, seed=i)
            )
        else:
            out.append(
                generate_bounded_growth(
                    n,
                    {"kind": "exponential", "C": 6.0, "d": 2.0},
                    latent_fraction=0.3,
                    seed=i,
                )
            )
    return out


class TestMatrixIdentities:
    def test_block_inverse_identity(self):
        for inst in _random_instances(200):
            d = derive(inst)
            o = np.array(inst.observable)
            assert np.max(np.abs(d.m_inv[np.ix_(o, o)] - d.h_inv)) <= 1e-9

    def test_full_block_formula(self):
        for inst in _random_instances(40):
            d = derive(inst)
            o = np.array(inst.observable)
            l = np.array(inst.latent, dtype=int)
            n = inst.n_nodes
            m_ll = d.m[np.ix_(l, l)]
            assembled = np.zeros((n, n))
            assembled[np.ix_(o, o)] = d.h_inv
            assembled[np.ix_(o, l)] = -d.h_inv @ d.s_ol
            assembled[np.ix_(l, o)] = -d.s_lo @ d.h_inv
            assembled[np.ix_(l, l)] = np.linalg.inv(m_ll) + d.s_lo @ d.h_inv @ d.s_ol
            assert np.max(np.abs(assembled - d.m_inv)) <= 1e-9

    def test_inverse_norm_bounds(self):
        for inst in _random_instances(60):
            d = derive(inst)
            bound = 1.0 / inst.zeta + 1e-9
            assert np.linalg.norm(d.m_inv, 1) <= bound
            assert np.linalg.norm(d.m_inv, np.inf) <= bound
            assert np.linalg.norm(d.h_inv, 1) <= bound
            assert np.linalg.norm(d.h_inv, np.inf) <= bound

    def test_singular_value_range(self):
        for inst in _random_instances(60):
            d = derive(inst)
            sv = np.linalg.svd(d.m, compute_uv=False)
            assert sv.min() >= inst.zeta - 1e-9
            assert sv.max() <= 4.0 * inst.b.max() - inst.zeta + 1e-9

    def test_positivity_when_strongly_connected(self):
        found = 0
        for inst in _random_instances(30):
            if is_strongly_connected(inst.g):
                d = derive(inst)
                assert d.m_inv.min() > 0.0
                assert d.h_inv.min() > 0.0
                found += 1
        assert found >= 5

    def test_baseline_consumption_bound(self):
        for inst in _random_instances(40):
            d = derive(inst)
            bound = (2.0 * inst.a.max() + inst.p_bar) / inst.zeta
            assert np.max(np.abs(d.v_o)) <= bound + 1e-9

    def test_neumann_series_converges_monotonically(self):
        for inst in _random_instances(10):
            d = derive(inst)
            lam_inv = np.diag(1.0 / (2.0 * inst.b))
            ratio = lam_inv @ inst.g
            term = lam_inv.copy()
            acc = term.copy()
            errs = [np.linalg.norm(d.m_inv - acc, np.inf)]
            for _ in range(60):
                term = ratio @ term
                acc += term
                errs.append(np.linalg.norm(d.m_inv - acc, np.inf))
            assert all(b <= a + 1e-15 for a, b in zip(errs, errs[1:]))
            assert errs[-1] < 1e-8


class TestSerialization:
    @pytest.mark.parametrize("maker", ["banded", "poly", "growth"])
    def test_round_trip_bit_identical(self, tmp_path, maker):
        if maker == "banded":
            inst = generate_banded(25, 2, jitter=0.05, seed=31)
        elif maker == "poly":
            inst = generate_polynomial_decay(25, 1.7, seed=32)
        else:
            inst = generate_bounded_growth(
                25, {"kind": "exponential", "C": 5.0, "d": 2.0}, seed=33
            )
        path = tmp_path / "net.json"
        save_network(inst, path)
        loaded = load_network(path)
        assert loaded.equals(inst)
        # a second write must produce identical bytes
        path2 = tmp_path / "net2.json"
        save_network(loaded, path2)
        assert path.read_bytes() == path2.read_bytes()

    def test_dict_shape(self):
        inst = make_chain_instance()
        payload = network_to_dict(inst)
        assert payload["nodes"] == [0, 1, 2]
        assert payload["observable"] == [0, 1]
        assert len(payload["g"]) == 9
        assert payload["g"][2] == 0.5  # row-major: entry (0,2)
        assert payload["labeling"] == [0, 1, 2]
        rebuilt = network_from_dict(payload)
        assert rebuilt.equals(inst)

    def test_malformed_payloads(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text("{not json")
        with pytest.raises(StructuralError):
            load_network(bad)
        payload = network_to_dict(make_chain_instance())
        del payload["p_bar"]
        with pytest.raises(StructuralError):
            network_from_dict(payload)
        payload2 = network_to_dict(make_chain_instance())
        payload2["g"] = payload2["g"][:-1]
        with pytest.raises(StructuralError):
            network_from_dict(payload2)
        payload3 = network_to_dict(make_chain_instance())
        payload3["nodes"] = [0, 1, 5]
        with pytest.raises(StructuralError):
            network_from_dict(payload3)

    def test_metadata_preserved(self, tmp_path):
        inst = generate_banded(10, 1, seed=44)
        path = tmp_path / "n.json"
        save_network(inst, path)
        loaded = load_network(path)
        assert loaded.metadata["generator"] == "banded"
        assert loaded.metadata["seed"] == 44
        assert loaded.metadata["params"]["bandwidth"] == 1


class TestImmutability:
    def test_arrays_are_readonly(self):
        inst = make_chain_instance()
        with pytest.raises(ValueError):
            inst.g[0, 1] = 9.0
        with pytest.raises(ValueError):
            inst.a[0] = 9.0
        d = derive(inst)
        with pytest.raises(ValueError):
            d.h_inv[0, 0] = 9.0
