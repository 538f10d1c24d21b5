import copy
import json

import numpy as np
import pytest

from containsim import config
from containsim.config import ConfigError
from conftest import load_scenario_doc

SCENARIOS = ("benchmark_fullstate", "benchmark_outputfb", "benchmark_nonlinear",
             "oscillator_harmonic", "cascade_estimates")


class TestBundledScenarios:
    @pytest.mark.parametrize("name", SCENARIOS)
    def test_validates_and_builds(self, name):
        doc = load_scenario_doc(name)
        config.validate_config(doc)
        scen = config.build_scenario(doc)
        scen.validate()
        assert scen.topo.n == 10 and scen.topo.m == 6

    def test_cascade_section_builds(self):
        cas = config.build_cascade(load_scenario_doc("cascade_estimates"))
        cas.validate()
        assert cas.sigma == 2
        assert cas.alpha == 1.0

    def test_cascade_missing_section(self):
        with pytest.raises(ConfigError):
            config.build_cascade(load_scenario_doc("benchmark_fullstate"))


class TestStrictness:
    def test_unknown_top_level_key(self):
        doc = load_scenario_doc("benchmark_fullstate")
        doc["extra"] = 1
        with pytest.raises(ConfigError, match="unknown keys"):
            config.validate_config(doc)

    def test_unknown_nested_key(self):
        doc = load_scenario_doc("benchmark_fullstate")
        doc["comm"]["latency"] = 0.5
        with pytest.raises(ConfigError, match="unknown keys"):
            config.validate_config(doc)

    def test_unknown_gain(self):
        doc = load_scenario_doc("benchmark_fullstate")
        doc["controllers"]["gains"]["k_i"] = 1.0
        with pytest.raises(ConfigError, match="unknown keys"):
            config.validate_config(doc)

    def test_missing_required_key(self):
        doc = load_scenario_doc("benchmark_fullstate")
        del doc["sim"]["dt_seconds"]
        with pytest.raises(ConfigError, match="missing keys"):
            config.validate_config(doc)

    def test_invalid_json_reported(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{not json")
        with pytest.raises(ConfigError, match="invalid JSON"):
            config.load_config(str(path))

    def test_load_roundtrip(self, tmp_path):
        doc = load_scenario_doc("benchmark_fullstate")
        path = tmp_path / "ok.json"
        path.write_text(json.dumps(doc))
        loaded = config.load_config(str(path))
        assert loaded == doc


class TestBuilding:
    def test_edge_ids_validated(self):
        doc = load_scenario_doc("benchmark_fullstate")
        doc["topology"]["edges"].append([11, 1])
        with pytest.raises(ConfigError, match="agent ids"):
            config.build_topology(doc)

    def test_edge_weight_default_and_explicit(self):
        doc = copy.deepcopy(load_scenario_doc("benchmark_fullstate"))
        doc["topology"]["edges"][0] = [3, 1, 2.5]
        topo = config.build_topology(doc)
        assert topo.weights[0, 2] == 2.5
        assert topo.weights[0, 6] == 1.0

    def test_auto_initial_velocity(self):
        doc = load_scenario_doc("benchmark_fullstate")
        scen = config.build_scenario(doc)
        # followers start at rest; leaders match the trajectory offsets
        assert np.array_equal(scen.v0[:6], np.zeros((6, 2)))
        assert np.allclose(scen.v0[6], [1.0 - 7.0, 0.1 - 7.0])
        assert np.allclose(scen.v0[7], [1.0 + 8.0, 0.1 + 8.0])

    def test_explicit_initial_velocity_shape(self):
        doc = copy.deepcopy(load_scenario_doc("benchmark_fullstate"))
        doc["agents"]["initial"]["v"] = [[0.0, 0.0]] * 9
        with pytest.raises(ConfigError):
            config.build_scenario(doc)

    def test_gain_broadcast_from_config(self):
        doc = load_scenario_doc("benchmark_fullstate")
        scen = config.build_scenario(doc)
        assert np.array_equal(scen.gains.k_p, np.full(6, 4.0))
        assert np.array_equal(scen.gains.L_p, np.full(6, 4.0))

    def test_perturbation_builder(self):
        pert = config.build_perturbation(
            {"kind": "sinusoid", "amplitude": [1.0, 2.0], "omega": 0.5})
        assert pert.kind == "sinusoid"
        assert np.allclose(pert.value(np.pi), np.array([1.0, 2.0])
                           * np.sin(0.5 * np.pi))
