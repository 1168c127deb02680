import json

import numpy as np
import pytest
from numpy.testing import assert_allclose

from iidshell import io
from iidshell.config import PRESETS, RunConfig, load_config, parse_override
from iidshell.diffeo import Diffeomorphism
from iidshell.errors import ConfigError, DataError, TooFewSamples
from iidshell.estimation import estimate_family
from iidshell.geometry import ScaleFactor, ShellFamily, cholesky_factor
from iidshell.modes import modal_decomposition
from iidshell.perfect import IidSample
from iidshell.pipeline import posterior_predictive, predictive_grid
from iidshell.targets import GaussianMixtureTarget, MixtureModelParams, gaussian_spec, predictive_density


def test_defaults_mirror_reference_settings():
    c = RunConfig()
    assert (c.b, c.b_evidence, c.sqrt_c1, c.delta, c.M) == (0.01, 0.3, 0.05, 9.5e-5, 100_000)
    assert (c.mc_size, c.eta, c.delta_evidence) == (5000, 1e-10, 3e-5)
    assert c.target == {"kind": "reference_bimodal", "dim": 50}


def test_validation():
    with pytest.raises(ConfigError):
        RunConfig(b=0.0)
    with pytest.raises(ConfigError):
        RunConfig(eps_grid=[0.5, 1.2])
    with pytest.raises(ConfigError):
        RunConfig(ratio_mode="other")
    with pytest.raises(ConfigError):
        RunConfig.from_dict({"nonsense": 1})


def test_hash_tracks_semantic_fields_only():
    c = RunConfig()
    assert c.hash() == RunConfig().hash()
    assert c.replace(workers=8, out="elsewhere", backend="process").hash() == c.hash()
    for change in ({"seed": 1}, {"b": 0.02}, {"K": 5}, {"eps_grid": [0.1]}):
        assert c.replace(**change).hash() != c.hash()
    assert c.meta() == {"config_hash": c.hash(), "seed": 0}


def test_load_config_layers(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"K": 77, "seed": 3}))
    c = load_config(str(path), "desk", {"seed": 5})
    assert c.K == 77 and c.seed == 5 and c.M == PRESETS["desk"]["M"]
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigError):
        load_config(str(bad))
    with pytest.raises(ConfigError):
        load_config(preset="nope")


def test_parse_override():
    assert parse_override("K=12") == ("K", 12)
    assert parse_override('target={"kind":"gaussian"}') == ("target", {"kind": "gaussian"})
    assert parse_override("out=dir") == ("out", "dir")
    with pytest.raises(ConfigError):
        parse_override("K")


def test_config_roundtrip():
    c = load_config(preset="acidity-desk")
    assert RunConfig.from_dict(json.loads(json.dumps(c.to_dict()))) == c


def test_chain_csv_roundtrip(tmp_path):
    x = np.random.default_rng(0).normal(size=(20, 3)) * 1e5
    io.write_chain_csv(tmp_path / "c.csv", x, ["a", "b", "c"], {"config_hash": "abc", "seed": 4})
    y, labels, meta = io.read_chain_csv(tmp_path / "c.csv")
    assert np.array_equal(x, y) and labels == ["a", "b", "c"]
    assert meta == {"config_hash": "abc", "seed": "4"}


def test_decomposition_roundtrip(tmp_path):
    x = np.random.default_rng(1).normal(size=(300, 2))
    dec = modal_decomposition(x, [np.zeros(2), np.ones(2)], [2.0, 1.5])
    io.save_json(tmp_path / "d.json", io.decomposition_to_dict(dec))
    assert io.decomposition_from_dict(io.load_json(tmp_path / "d.json")) == dec


def test_estimates_roundtrip(tmp_path):
    t = GaussianMixtureTarget(gaussian_spec([0.0, 0.0], np.eye(2)))
    fam = ShellFamily.from_schedule(np.zeros(2), cholesky_factor([[1.0, 0.2], [0.2, 1.0]]), 0.1, 0.2, 12)
    tab = estimate_family(t, Diffeomorphism(0.01), fam, 100)
    io.save_estimates(tmp_path / "e.json", [fam, fam], [tab, tab], {"seed": 0})
    fams, tabs, meta = io.load_estimates(tmp_path / "e.json")
    assert fams == [fam, fam] and tabs == [tab, tab] and meta == {"seed": 0}


def test_evidence_roundtrip(tmp_path):
    io.save_evidence(tmp_path / "ev.json", {1: -244.5, 2: -203.25}, {1: 0.0, 2: 1.0})
    ev, _ = io.load_evidence(tmp_path / "ev.json")
    assert ev == {1: -244.5, 2: -203.25}


def test_samples_roundtrip(tmp_path):
    samples = [IidSample(i, np.array([0.1 * i, 1 / 3]), 0, i + 1, 2, k=2) for i in range(5)]
    io.write_samples(tmp_path / "s.jsonl", samples, {"config_hash": "h", "seed": 1})
    back, meta = io.read_samples(tmp_path / "s.jsonl")
    assert [s.record() for s in back] == [s.record() for s in samples]
    assert meta == {"config_hash": "h", "seed": 1}


def test_density_grid_examples(tmp_path):
    z = np.random.default_rng(2).standard_normal(5000)
    x, dens = io.emit_density_grid(z, tmp_path / "g.tsv", meta={"seed": 0})
    assert x.size == 256
    assert abs(x[np.argmax(dens)]) < 0.1
    assert abs(np.trapezoid(dens, x) - 1) < 0.02
    header, rows, meta = io.read_tsv(tmp_path / "g.tsv")
    assert header == ["x", "density"] and rows.shape == (256, 2) and meta == {"seed": "0"}
    assert np.array_equal(rows[:, 1], dens)
    with pytest.raises(DataError):
        io.emit_density_grid(np.ones(200))
    with pytest.raises(TooFewSamples):
        io.emit_density_grid(z[:50])


def test_predictive_grid_and_mean():
    grid = predictive_grid(RunConfig())
    assert grid.size == 100
    assert_allclose(grid[[0, 1, 99]], [2.0, 2.06, 7.94])
    params = [MixtureModelParams([4.0, 6.0], [1.0, 0.5], [0.2, 0.0]), MixtureModelParams([5.0], [0.0], [0.0])]
    samples = [IidSample(i, p.to_vector(), 0, 1, 1, k=p.k) for i, p in enumerate(params)]
    dens, mean = posterior_predictive(samples, grid)
    assert dens.shape == (2, 100)
    assert_allclose(mean, 0.5 * (predictive_density(params[0], grid) + predictive_density(params[1], grid)))
