"""Prescription parsing/serialization, SVG rendering, bundled designs,
and the command-line interface."""

import json
import pathlib
import subprocess
import sys

import numpy as np
import pytest

from lensmc import presets
from lensmc.cli import cli_dispatch
from lensmc.paraxial import focal_length
from lensmc.prescription import (PrescriptionError, PrescriptionMeta,
                                 parse_prescription, serialize_prescription)
from lensmc.render import render_svg, sag

from conftest import biconvex_singlet, random_lens

DATA = pathlib.Path(__file__).resolve().parent.parent / "data"


# ---------------------------------------------------------------------------
# prescription round trips
# ---------------------------------------------------------------------------

def test_round_trip_bit_exact(rng):
    for _ in range(20):
        lens = random_lens(rng)
        text = serialize_prescription(lens)
        back, _ = parse_prescription(text)
        assert back == lens


def test_round_trip_keeps_meta():
    lens = biconvex_singlet()
    meta = PrescriptionMeta(name="example", focal_length_mm=200.0,
                            sensor_format="full-frame")
    _, back = parse_prescription(serialize_prescription(lens, meta))
    assert back == meta


def test_parse_locates_json_error():
    with pytest.raises(PrescriptionError) as exc:
        parse_prescription('{"elements": [}')
    assert exc.value.line == 1
    assert exc.value.column is not None


def test_parse_locates_bad_surface_row():
    doc = {"elements": ["singlet"],
           "surfaces": [[0.0, 10.0, 2.0, 1.5], [0.0, 10.0, 50.0]]}
    with pytest.raises(PrescriptionError) as exc:
        parse_prescription(json.dumps(doc))
    assert exc.value.field == "surfaces[1]"


def test_parse_locates_invariant_violation():
    doc = {"elements": ["singlet"],
           "surfaces": [[0.0, 10.0, 2.0, 0.5], [0.0, 10.0, 50.0, 1.0]]}
    with pytest.raises(PrescriptionError) as exc:
        parse_prescription(json.dumps(doc))
    assert exc.value.field == "surfaces[0]"


def test_parse_rejects_unknown_element_kind():
    doc = {"elements": ["triplet"], "surfaces": []}
    with pytest.raises(PrescriptionError) as exc:
        parse_prescription(json.dumps(doc))
    assert exc.value.field == "elements[0]"


def test_parse_requires_keys():
    with pytest.raises(PrescriptionError):
        parse_prescription('{"elements": []}')


# ---------------------------------------------------------------------------
# bundled designs
# ---------------------------------------------------------------------------

def test_bundled_prescriptions_load():
    from lensmc.prescription import load_prescription
    for name in presets.PRESET_NAMES:
        lens, meta = load_prescription(DATA / f"{name}.json")
        assert lens == presets.preset(name)
        assert meta.focal_length_mm == pytest.approx(focal_length(lens),
                                                     abs=1e-3)


def test_preset_focal_lengths_near_nominal():
    nominal = {"prime28": 28.0, "prime50": 50.0, "prime105": 105.0,
               "prime135": 135.0}
    for name, f in nominal.items():
        assert focal_length(presets.preset(name)) == pytest.approx(f,
                                                                   rel=0.02)


def test_preset_unknown_name():
    with pytest.raises(KeyError):
        presets.preset("zoom")


# ---------------------------------------------------------------------------
# rendering
# ---------------------------------------------------------------------------

def test_sag_oracle():
    # Exact spherical sag r - sqrt(r^2 - y^2) for kappa = 0.1, y = 3.
    y = np.array([0.0, 3.0])
    z = sag(0.1, y)
    assert z[0] == 0.0
    assert z[1] == pytest.approx(10.0 - np.sqrt(100.0 - 9.0), rel=1e-3)


def test_sag_flat_surface():
    assert np.array_equal(sag(0.0, np.linspace(-5, 5, 11)), np.zeros(11))


def test_render_svg_deterministic():
    lens = biconvex_singlet()
    assert render_svg(lens) == render_svg(lens)


def test_render_svg_structure():
    lens = biconvex_singlet()
    svg = render_svg(lens)
    assert svg.startswith("<svg")
    assert svg.rstrip().endswith("</svg>")
    assert "polygon" in svg    # the element body


def test_render_svg_empty_lens():
    from lensmc.core import LensSystem
    svg = render_svg(LensSystem((), (), 500.0))
    assert svg.startswith("<svg")


def test_render_svg_with_rays():
    from lensmc.trace import sample_cone
    lens = biconvex_singlet()
    origin = np.array([0.0, 0.0, -500.0])
    grid = sample_cone(origin, lens, 8)
    origins = np.broadcast_to(origin, (grid.directions.shape[0], 3))
    svg = render_svg(lens, rays=(origins, grid.directions))
    assert "polyline" in svg


# ---------------------------------------------------------------------------
# CLI
# ---------------------------------------------------------------------------

def test_cli_no_command_is_usage_error(capsys):
    assert cli_dispatch([]) == 1
    capsys.readouterr()


def test_cli_unknown_command_is_usage_error(capsys):
    assert cli_dispatch(["frobnicate"]) == 1
    capsys.readouterr()


def test_cli_bad_preset_is_input_error(capsys):
    assert cli_dispatch(["render", "--preset", "nope"]) == 2
    capsys.readouterr()


def test_cli_missing_prescription_is_input_error(capsys):
    assert cli_dispatch(["render", "--prescription", "/no/such.json"]) == 2
    capsys.readouterr()


def test_cli_trace_writes_csv(tmp_path, capsys):
    out = tmp_path / "spot.csv"
    code = cli_dispatch(["trace", "--preset", "prime50", "--rays", "16",
                         "--out", str(out)])
    assert code == 0
    lines = out.read_text().splitlines()
    assert lines[0].startswith("ray,dx,dy,dz,hit_x,hit_y")
    assert len(lines) == 17
    capsys.readouterr()


def test_cli_project_converges(tmp_path, capsys):
    code = cli_dispatch(["project", "--preset", "prime50",
                         "--mutation", "add", "--site", "1", "--seed", "0"])
    assert code == 0
    capsys.readouterr()


def test_cli_render_deterministic(tmp_path, capsys):
    a, b = tmp_path / "a.svg", tmp_path / "b.svg"
    for path in (a, b):
        assert cli_dispatch(["render", "--preset", "prime28", "--rays", "8",
                             "--out", str(path)]) == 0
    assert a.read_bytes() == b.read_bytes()
    capsys.readouterr()


def test_cli_optimize_seeded_rerun_byte_identical(tmp_path, capsys):
    outs = []
    for tag in ("a", "b"):
        log = tmp_path / f"log-{tag}.csv"
        lens = tmp_path / f"lens-{tag}.json"
        code = cli_dispatch(["optimize", "--preset", "prime50",
                             "--iters", "15", "--seed", "42",
                             "--rays", "8",
                             "--out-log", str(log),
                             "--out-lens", str(lens)])
        assert code == 0
        outs.append((log.read_bytes(), lens.read_bytes()))
    assert outs[0] == outs[1]
    capsys.readouterr()


def test_cli_toy_short_run(capsys):
    code = cli_dispatch(["toy", "--variant", "1d", "--iters", "300",
                         "--seed", "1", "--bins", "6"])
    assert code == 0
    out = capsys.readouterr().out
    assert "tv" in out


def test_cli_entry_point_installed():
    proc = subprocess.run([sys.executable, "-m", "lensmc.cli", "--help"],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert "optimize" in proc.stdout
