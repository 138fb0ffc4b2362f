"""Model assembly: shapes, ablations, determinism, and parameter counts."""

import numpy as np
import pytest

from dataclasses import replace

from ltsgat.config import preset_config
from ltsgat.errors import ConfigError, ShapeError
from ltsgat.model import Model, analytic_param_count
from ltsgat.verification import tiny_config, tiny_model, tiny_region_map


def tiny_input(seed=0, batch=1):
    rng = np.random.default_rng(seed)
    return rng.standard_normal((batch, 4, 3, 2))


class TestShapes:
    def test_hci_dependent_preset_output(self):
        cfg = preset_config("hci-dep")
        model = Model(cfg)
        x = np.random.default_rng(0).standard_normal((32, 10, 4))
        z = model.feedforward(x)
        assert z.value.shape == (32, 28)

    def test_bad_input_shape_rejected(self):
        model = tiny_model(0)
        with pytest.raises(ShapeError):
            model.forward_batch(np.zeros((1, 4, 3, 3)))

    def test_topology_config_mismatch_rejected(self):
        from ltsgat.graph import full_topology
        cfg = tiny_config(0)
        with pytest.raises(ConfigError):
            Model(cfg, region_map=tiny_region_map(), topology=full_topology(5))


class TestAblations:
    def base(self, **kw):
        cfg = tiny_config(0)
        return replace(cfg, **kw)

    def test_no_temporal_runs_and_drops_parameters(self):
        model = Model(self.base(disable_temporal=True),
                      region_map=tiny_region_map())
        assert not any(n.startswith("temporal/") for n in model.registry.names())
        z = model.feedforward(tiny_input()[0])
        assert z.value.shape == (4, 3)

    def test_no_spatial_uses_projector(self):
        model = Model(self.base(disable_spatial=True),
                      region_map=tiny_region_map())
        names = model.registry.names()
        assert not any(n.startswith("lstm/") for n in names)
        assert not any(n.startswith("region/") for n in names)
        assert any(n.startswith("projector/") for n in names)
        z = model.feedforward(tiny_input()[0])
        assert z.value.shape == (4, 3)

    def test_classical_gat_path(self):
        model = Model(self.base(disable_temporal=True, disable_spatial=True),
                      region_map=tiny_region_map())
        prefixes = {n.split("/")[0] for n in model.registry.names()}
        assert prefixes == {"projector", "gat", "classifier"}
        z = model.feedforward(tiny_input()[0])
        assert z.value.shape == (4, 3)

    def test_domain_head_optional(self):
        with_da = Model(self.base(disable_domain_adaptation=False),
                        region_map=tiny_region_map())
        without = Model(self.base(disable_domain_adaptation=True),
                        region_map=tiny_region_map())
        assert any(n.startswith("discriminator/") for n in with_da.registry.names())
        assert not any(n.startswith("discriminator/") for n in without.registry.names())
        with pytest.raises(ConfigError):
            without.domain_probabilities(
                without.feedforward(tiny_input()[0]), 0.5)

    def test_shared_parameters_identical_with_and_without_domain_head(self):
        # per-name seeding: theta_p initialization cannot depend on
        # whether the discriminator exists
        with_da = Model(self.base(disable_domain_adaptation=False),
                        region_map=tiny_region_map())
        without = Model(self.base(disable_domain_adaptation=True),
                        region_map=tiny_region_map())
        for name, node in without.registry.items():
            np.testing.assert_array_equal(node.value,
                                          with_da.registry[name].value)


class TestDeterminism:
    def test_same_seed_same_parameters_and_outputs(self):
        a = tiny_model(5)
        b = tiny_model(5)
        for (na, pa), (nb, pb) in zip(a.registry.items(), b.registry.items()):
            assert na == nb
            np.testing.assert_array_equal(pa.value, pb.value)
        x = tiny_input(3)
        za = a.forward_batch(x).z_prime[0].value
        zb = b.forward_batch(x).z_prime[0].value
        np.testing.assert_array_equal(za, zb)

    def test_different_seed_different_parameters(self):
        a, b = tiny_model(1), tiny_model(2)
        assert any(not np.array_equal(pa.value, b.registry[n].value)
                   for n, pa in a.registry.items())

    def test_forward_repeatable_bitwise(self):
        model = tiny_model(7)
        x = tiny_input(11)
        one = model.forward_batch(x).z_prime[0].value
        two = model.forward_batch(x).z_prime[0].value
        np.testing.assert_array_equal(one, two)


class TestBatching:
    def test_batched_forward_matches_per_sample(self):
        model = tiny_model(9)
        xs = tiny_input(13, batch=5)
        batched = model.forward_batch(xs)
        for i in range(5):
            single = model.feedforward(xs[i])
            np.testing.assert_allclose(batched.z_prime[i].value, single.value,
                                       atol=1e-10)

    def test_batched_attention_weights_match(self):
        model = tiny_model(9)
        xs = tiny_input(17, batch=3)
        batched = model.forward_batch(xs)
        for i in range(3):
            single = model.forward_batch(xs[i:i + 1])
            for wb, ws in zip(batched.temporal_weights[i],
                              single.temporal_weights[0]):
                np.testing.assert_allclose(wb.value, ws.value, atol=1e-12)
            np.testing.assert_allclose(batched.region_weights[i].value,
                                       single.region_weights[0].value,
                                       atol=1e-10)


class TestParamCount:
    @pytest.mark.parametrize("kw", [
        {},
        {"disable_temporal": True},
        {"disable_spatial": True},
        {"disable_temporal": True, "disable_spatial": True},
        {"disable_domain_adaptation": False},
        {"gat_layers": 1, "attention_heads": 3},
    ])
    def test_registry_matches_closed_form(self, kw):
        cfg = replace(tiny_config(0), **kw)
        model = Model(cfg, region_map=tiny_region_map())
        assert model.registry.count_entries() == analytic_param_count(
            cfg, tiny_region_map())

    def test_preset_configs_count(self):
        for name in ("hci-dep", "deap-indep"):
            cfg = preset_config(name)
            model = Model(cfg)
            assert model.registry.count_entries() == analytic_param_count(cfg)

    def test_duplicate_parameter_name_rejected(self):
        from ltsgat.model import ParamRegistry
        reg = ParamRegistry(0)
        reg.weight("w", 2, 2)
        with pytest.raises(ConfigError):
            reg.weight("w", 2, 2)


class TestPooledFeatures:
    def test_matches_mean_of_z_prime(self):
        model = tiny_model(4)
        xs = tiny_input(19, batch=2)
        pooled = model.pooled_features(xs)
        fwd = model.forward_batch(xs)
        for i in range(2):
            np.testing.assert_allclose(pooled[i],
                                       fwd.z_prime[i].value.mean(axis=0),
                                       atol=1e-12)

    def test_predict_argmax_consistency(self):
        model = tiny_model(4)
        xs = tiny_input(23, batch=3)
        preds = model.predict(xs)
        fwd = model.forward_batch(xs)
        expected = [int(np.argmax(model.class_probabilities(z).value))
                    for z in fwd.z_prime]
        assert list(preds) == expected
