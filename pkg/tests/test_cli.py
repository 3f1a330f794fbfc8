import json
import re

import numpy as np
import pytest

from igapeec.cli import DEFAULTS, ConfigError, load_config, main, svg_plot
from igapeec.geometry import geometry_to_dict, load_geometry
from igapeec.models import cube, strip_dipole, tapered_dipole
from igapeec.solve import Port, frequency_sweep, goal
from igapeec.spaces import build_spaces

DIPOLE = {
    "geometry": "builtin:strip_dipole",
    "discretization": {"degree": 1, "refinement": 1},
    "ports": [{"patch": 1, "axis": "u", "t": 0.5}],
    "band": {"f_min": 8e9, "f_max": 12e9, "n": 3},
}


def _config(tmp_path, doc, name="run.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc), encoding="utf-8")
    return path


def test_check_cube(capsys):
    assert main(["check", "builtin:cube"]) == 0
    assert capsys.readouterr().out.startswith("OK, 6 patches, 12 interior edges")


def test_check_gapped_file(tmp_path, capsys):
    doc = geometry_to_dict(cube())
    doc["patches"][0]["control_points"] = (
        np.array(doc["patches"][0]["control_points"]) + [0, 0, 1e-3, 0]).tolist()
    path = tmp_path / "gap.json"
    path.write_text(json.dumps(doc))
    assert main(["check", str(path)]) == 3
    err = capsys.readouterr().err
    assert "gap" in err and "patches 0 and" in err


def test_check_missing_file(tmp_path, capsys):
    assert main(["check", str(tmp_path / "none.json")]) == 5
    assert "cannot read" in capsys.readouterr().err


@pytest.mark.parametrize("doc", [
    {"geometry": "builtin:strip_dipole", "bogus": 1},
    {"geometry": "builtin:strip_dipole", "band": {"f_min": 2e9, "f_max": 1e9}},
    {"geometry": "builtin:strip_dipole", "q": 0.5},
    {"band": {"f_min": 1e9, "f_max": 2e9}},
    {"geometry": "builtin:strip_dipole", "ports": [{"patch": 1, "axis": "u", "t": 0.3}]},
    {"geometry": "builtin:strip_dipole"},
])
def test_bad_config_exit_code(tmp_path, doc, capsys):
    assert main(["sweep", str(_config(tmp_path, doc)), "-o", str(tmp_path)]) == 2
    assert capsys.readouterr().err


def test_invalid_json_is_config_error(tmp_path):
    path = tmp_path / "x.json"
    path.write_text("{not json")
    with pytest.raises(ConfigError):
        load_config(path)


def test_precedence_flags_over_file_over_defaults(tmp_path):
    path = _config(tmp_path, dict(DIPOLE, q=4.0))
    cfg = load_config(path)
    assert cfg["q"] == 4.0 and cfg["band"]["n"] == 3
    assert cfg["trust_region"] == DEFAULTS["trust_region"]
    cfg = load_config(path, {"q": 2.0, "band.n": 1})
    assert cfg["q"] == 2.0 and cfg["band"]["n"] == 1 and cfg["band"]["f_min"] == 8e9


def test_defaults_band_and_order():
    assert DEFAULTS["band"]["f_min"] == 8e9 and DEFAULTS["band"]["f_max"] == 18e9
    assert DEFAULTS["q"] == 8.0
    tr = DEFAULTS["trust_region"]
    assert (tr["rho_beg"], tr["rho_end"], tr["restart_scale"]) == (0.2, 0.01, 1.2)


def test_sweep_single_frequency(tmp_path, capsys):
    path = _config(tmp_path, DIPOLE)
    assert main(["sweep", str(path), "-o", str(tmp_path / "o"), "--n-freq", "1"]) == 0
    lines = (tmp_path / "o" / "sweep.csv").read_text().splitlines()
    assert lines[0].startswith("# generated")
    assert len(lines) == 3
    assert float(lines[2].split(",")[0]) == 8e9
    assert (tmp_path / "o" / "sweep.svg").read_text().startswith("<svg")


def test_sweep_matches_library_and_q_override(tmp_path, capsys):
    path = _config(tmp_path, DIPOLE)
    assert main(["sweep", str(path), "-o", str(tmp_path / "o"), "--q", "3"]) == 0
    out = capsys.readouterr().out
    printed = float(re.search(r"goal \(q=3\): (\S+)", out).group(1))
    surf = strip_dipole()
    sw = frequency_sweep(surf, build_spaces(surf, 1, 1), ports=[Port(1, "u", 0.5)],
                         omegas=2 * np.pi * np.array([8e9, 10e9, 12e9]))
    assert printed == pytest.approx(goal(sw, 3), rel=1e-5)


def test_sweep_is_reproducible_without_timestamp(tmp_path):
    path = _config(tmp_path, DIPOLE)
    for d in ("a", "b"):
        assert main(["sweep", str(path), "-o", str(tmp_path / d), "--no-timestamp",
                     "--dump-matrices", "--threads", "1"]) == 0
    for name in ("sweep.csv", "sweep.svg", "L.mtx", "P.mtx", "G.mtx", "M.mtx"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_relative_output_follows_config(tmp_path):
    path = _config(tmp_path, dict(DIPOLE, output="res"), name="cfg.json")
    assert main(["sweep", str(path), "--n-freq", "1"]) == 0
    assert (tmp_path / "res" / "sweep.csv").is_file()


def test_plot_overlay_of_identical_csvs(tmp_path):
    path = _config(tmp_path, DIPOLE)
    main(["sweep", str(path), "-o", str(tmp_path)])
    csv = str(tmp_path / "sweep.csv")
    svg = tmp_path / "both.svg"
    assert main(["plot", csv, csv, "-o", str(svg)]) == 0
    text = svg.read_text()
    assert 'viewBox="0 0 800 500"' in text
    lines = re.findall(r'<polyline[^>]*points="([^"]*)"', text)
    assert len(lines) == 2 and lines[0] == lines[1] and lines[0]
    assert main(["plot", csv, csv, csv, "-o", str(svg)]) == 2


def test_svg_axes(tmp_path):
    path = tmp_path / "p.svg"
    svg_plot([("a", [8e9, 18e9], [-3.0, -21.0])], path)
    text = path.read_text()
    assert "frequency [GHz]" in text and "dB" in text
    assert ">-20<" in text and ">10<" in text


def test_optimize_without_design(tmp_path, capsys):
    path = _config(tmp_path, DIPOLE)
    assert main(["optimize", str(path), "-o", str(tmp_path)]) == 2
    assert "nothing to optimize" in capsys.readouterr().out


def test_optimize_small_run(tmp_path, capsys):
    doc = {
        "geometry": "builtin:tapered_dipole",
        "discretization": {"degree": 1, "refinement": [1, 0]},
        "ports": [{"patch": 1, "axis": "u", "t": 0.0}],
        "band": {"f_min": 8e9, "f_max": 18e9, "n": 3},
        "trust_region": {"maxfun": 4},
        "verification_samples": 2,
    }
    path = _config(tmp_path, doc)
    out = tmp_path / "o"
    assert main(["optimize", str(path), "-o", str(out), "--q", "4", "--no-timestamp"]) == 0
    text = capsys.readouterr().out
    m = re.search(r"goal \(q=4, 3 samples\): initial (\S+), final (\S+), ratio (\S+)", text)
    assert m
    initial, final = float(m.group(1).rstrip(",")), float(m.group(2).rstrip(","))
    assert final <= initial
    surf, _ = tapered_dipole()
    sw = frequency_sweep(surf, build_spaces(surf, 1, (1, 0)), ports=[Port(1, "u", 0.0)],
                         omegas=2 * np.pi * np.linspace(8e9, 18e9, 3))
    assert initial == pytest.approx(goal(sw, 4), rel=1e-5)
    trace = (out / "trace.csv").read_text().splitlines()
    assert len(trace) == 5
    for name in ("sweep_initial.csv", "sweep_optimized.csv", "sweep.svg"):
        assert (out / name).is_file()
    opt, design = load_geometry(out / "optimized_geometry.json", with_design=True)
    assert design.n == 3 and len(opt) == 2
