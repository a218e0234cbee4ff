"""Scenario loading, validation error reporting, and the builders."""

import textwrap

import numpy as np
import pytest

from switchid.scenario import (ScenarioError, flagship_config, load_scenario,
                               scenario_from_dict, variant_config)

MINIMAL = """
name: minimal
dims: {n: 2, m: 1, subsystems: 1}
plant:
  matrices:
    - A: [[0.0, 1.0], [-2.0, -3.0]]
      B: [[0.0], [1.0]]
excitation:
  kind: multisine
  amplitudes: [[1.0]]
  frequencies: [[2.0]]
sim: {dt: 1.0e-3, t_end: 1.0}
"""


def write(tmp_path, text):
    path = tmp_path / "scn.yaml"
    path.write_text(textwrap.dedent(text))
    return path


def test_minimal_config_loads_with_defaults(tmp_path):
    cfg = load_scenario(write(tmp_path, MINIMAL))
    assert cfg.name == "minimal"
    assert cfg.num_subsystems == 1
    assert cfg.filter_gains.k_layer1 == 2.0
    assert cfg.k_snap is None
    assert cfg.learn_inactive
    plant = cfg.build_plant()
    assert plant.dims.n == 2
    sched = cfg.build_schedule()
    assert sched.events == ()


def test_shipped_flagship_yaml_matches_builtin():
    cfg_file = load_scenario("configs/flagship.yaml")
    cfg = flagship_config()
    assert cfg_file.t_end == cfg.t_end
    assert cfg_file.eps_pd == cfg.eps_pd
    assert cfg_file.schedule_periodic == cfg.schedule_periodic
    assert cfg_file.rate_target == cfg.rate_target
    file_plant = cfg_file.build_plant()
    builtin_plant = cfg.build_plant()
    for i in (1, 2):
        fa, fb = file_plant.matrices(i)
        ba, bb = builtin_plant.matrices(i)
        assert np.array_equal(fa, ba)
        assert np.array_equal(fb, bb)


def test_off_grid_event_rejected(tmp_path):
    text = MINIMAL.replace("subsystems: 1", "subsystems: 2") + textwrap.dedent("""
    schedule:
      events: [[0.0015, 2]]
    """)
    # needs a second subsystem block to be shape-consistent
    text = text.replace(
        "      B: [[0.0], [1.0]]\n",
        "      B: [[0.0], [1.0]]\n    - A: [[0.0, 1.0], [-1.0, -1.0]]\n"
        "      B: [[0.0], [2.0]]\n",
    )
    with pytest.raises(ScenarioError, match="off-grid"):
        load_scenario(write(tmp_path, text))


def test_negative_filter_gain_rejected(tmp_path):
    text = MINIMAL + "filter_gains: {k_layer1: -1.0}\n"
    with pytest.raises(ScenarioError, match="k_layer1: must be positive"):
        load_scenario(write(tmp_path, text))


def test_non_pd_learning_gain_rejected():
    raw = {
        "dims": {"n": 1, "m": 1, "subsystems": 1},
        "plant": {"matrices": [{"A": [[-1.0]], "B": [[1.0]]}]},
        "estimator_gains": {"learning_gain": [[1.0, 2.0], [2.0, 1.0]]},
        "sim": {"dt": 1e-3, "t_end": 1.0},
    }
    with pytest.raises(ScenarioError, match="symmetric PD"):
        scenario_from_dict(raw)


def test_all_errors_collected_at_once():
    raw = {
        "dims": {"n": 2, "m": 1, "subsystems": 2},
        "plant": {"matrices": [{"A": [[0.0]], "B": [[1.0]]}]},
        "schedule": {"events": [[0.0015, 3]]},
        "filter_gains": {"k_layer1": -2.0},
        "eps_pd": 0.0,
        "sim": {"dt": 1e-3, "t_end": 1.0},
    }
    with pytest.raises(ScenarioError) as err:
        scenario_from_dict(raw)
    messages = "\n".join(err.value.errors)
    for fragment in ("plant.matrices", "off-grid", "index 3", "k_layer1", "eps_pd"):
        assert fragment in messages, f"missing {fragment}:\n{messages}"


def test_parse_error_reported(tmp_path):
    path = tmp_path / "broken.yaml"
    path.write_text("dims: {n: 2, m: 1\n")
    with pytest.raises(ScenarioError, match="parse error"):
        load_scenario(path)


def test_flagship_matches_rehearsed_numbers():
    cfg = flagship_config()
    assert cfg.dt == 1e-3 and cfg.t_end == 40.0
    assert cfg.num_subsystems == 2
    A1, B1 = cfg.plant_matrices[0]
    assert np.array_equal(A1, [[0.0, 1.0], [-2.0, -3.0]])
    assert np.array_equal(B1, [[0.0], [1.0]])
    # the multisine carries at least ceil(p/2) = 3 distinct tones
    assert len(cfg.excitation.frequencies[0]) >= 3


def test_variant_reproducible_and_stable():
    a = variant_config(7).build_plant()
    b = variant_config(7).build_plant()
    for i in (1, 2):
        assert np.array_equal(a.matrices(i)[0], b.matrices(i)[0])
        assert np.array_equal(a.matrices(i)[1], b.matrices(i)[1])
        eig = np.linalg.eigvals(a.matrices(i)[0])
        assert np.max(eig.real) <= -0.3 + 1e-9


def test_variants_differ_across_seeds():
    a = variant_config(1).build_plant()
    b = variant_config(2).build_plant()
    assert not np.array_equal(a.matrices(1)[0], b.matrices(1)[0])


def test_replace_produces_independent_config():
    cfg = flagship_config()
    short = cfg.replace(t_end=5.0)
    assert cfg.t_end == 40.0 and short.t_end == 5.0
