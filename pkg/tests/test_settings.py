from __future__ import annotations

import logging

import pytest

from geoflow.errors import ConfigError
from geoflow.settings import (
    THREADS_ENV,
    RunConfig,
    attr_to_key,
    key_to_attr,
    load_config,
    parse_pairs,
    save_config,
    threads_from_env,
)


def test_defaults() -> None:
    cfg = load_config()
    assert cfg == RunConfig()
    assert cfg.grid_h == pytest.approx(1.0 / 32.0)
    assert cfg.velocities == ("normal", "linear", "trig")


def test_key_mapping() -> None:
    assert key_to_attr("grid.h") == "grid_h"
    assert key_to_attr(" output.vtk_stride ") == "output_vtk_stride"
    assert attr_to_key("output_vtk_stride") == "output.vtk_stride"
    assert attr_to_key("shape") == "shape"
    assert attr_to_key("velocities") == "velocities"


def test_parse_pairs_skips_comments() -> None:
    pairs = parse_pairs(["# header", "", "shape = torus  # ring", "grid.h=0.05"])
    assert pairs == {"shape": "torus", "grid.h": "0.05"}
    with pytest.raises(ConfigError):
        parse_pairs(["just words"])


def test_file_then_overrides(tmp_path) -> None:
    path = tmp_path / "run.cfg"
    path.write_text("shape = ellipsoid\ngrid.h = 1/64\nflow.steps = 7\n", encoding="utf-8")
    cfg = load_config(str(path), ["flow.steps=9", "shape.semi_axes = 0.4, 0.3, 0.2"])
    assert cfg.shape == "ellipsoid"
    assert cfg.grid_h == pytest.approx(1.0 / 64.0)
    assert cfg.flow_steps == 9
    assert cfg.shape_semi_axes == (0.4, 0.3, 0.2)


def test_single_value_broadcasts_to_three_axes() -> None:
    cfg = load_config(overrides=["grid.lower=-1", "grid.upper=1"])
    assert cfg.grid_lower == (-1.0, -1.0, -1.0)
    assert cfg.grid_upper == (1.0, 1.0, 1.0)


def test_booleans_paths_and_lists() -> None:
    cfg = load_config(overrides=["validate.refine=yes", "output.vtk=out/vtk", "velocities=normal, tangential"])
    assert cfg.validate_refine is True
    assert cfg.output_vtk == "out/vtk"
    assert RunConfig().output_vtk == ""
    assert cfg.velocities == ("normal", "tangential")


def test_missing_file() -> None:
    with pytest.raises(ConfigError):
        load_config("/nonexistent/geoflow.cfg")


@pytest.mark.parametrize(
    "override",
    [
        "colour=red",
        "grid.h=0",
        "grid.h=abc",
        "grid.lower=1",
        "shape=cube",
        "shape.perturb=wobble",
        "functional=volume",
        "kernel.ratio=1.5",
        "flow.steps=-1",
        "flow.redistance_every=0",
        "flow.stop_grad_norm=-1",
        "flow.scheme=implicit",
        "flow.dt_scale=0.5",
        "flow.dt_scale=10",
        "validate.refine=maybe",
        "grid.h=1/0",
        "grid.lower=-1/0",
        "shape.center=1,2",
    ],
)
def test_rejects_bad_values(override: str) -> None:
    with pytest.raises(ConfigError):
        load_config(overrides=[override])


def test_dt_safety_is_clamped(caplog) -> None:
    with caplog.at_level(logging.WARNING, logger="geoflow.settings"):
        cfg = load_config(overrides=["flow.dt_safety=3"])
    assert cfg.flow_dt_safety == 1.0
    assert caplog.records
    assert "超出范围" in caplog.records[0].getMessage()
    assert load_config(overrides=["flow.dt_safety=-1"]).flow_dt_safety == 0.05


def test_semi_implicit_scheme_accepts_a_step_scale() -> None:
    cfg = load_config(overrides=["flow.scheme=semi_implicit", "flow.dt_scale=400"])
    assert cfg.flow_scheme == "semi_implicit"
    assert cfg.flow_dt_scale == 400.0
    assert RunConfig().flow_scheme == "explicit"


def test_vtk_stride_reset() -> None:
    assert load_config(overrides=["output.vtk_stride=0"]).output_vtk_stride == 10


def test_save_and_reload(tmp_path) -> None:
    cfg = load_config(
        overrides=["run=demo", "shape=torus", "output.vtk=dumps", "velocities=trig", "grid.h=0.05"]
    )
    path = tmp_path / "out" / "demo_config.txt"
    save_config(cfg, str(path))
    text = path.read_text(encoding="utf-8")
    assert "output.vtk = dumps" in text
    assert "shape = torus" in text
    assert load_config(str(path)) == cfg


def test_threads_from_env(monkeypatch) -> None:
    monkeypatch.delenv(THREADS_ENV, raising=False)
    assert threads_from_env() == 0
    monkeypatch.setenv(THREADS_ENV, "4")
    assert threads_from_env() == 4
    monkeypatch.setenv(THREADS_ENV, "-2")
    assert threads_from_env() == 0
    monkeypatch.setenv(THREADS_ENV, "many")
    assert threads_from_env() == 0
