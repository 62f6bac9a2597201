import json
import math
import subprocess
import sys

import numpy as np
import pytest

from scfield.cli import EXIT_NUMERICAL, EXIT_OK, EXIT_VALIDATION, main
from scfield.io import read_csv

pytestmark = pytest.mark.filterwarnings("ignore::scfield.acoustic_discrete.RegimeWarning")


def scenario(tmp_path, text, name="s.toml"):
    path = tmp_path / name
    path.write_text(text)
    return path


def run(path, *args, command="solve"):
    return main([command, "--config", str(path), *args])


SOFT_CLOUD = """
mode = "acoustic-discrete"
seed = 1
[body]
radius = 0.1
refinement = 1
[ensemble]
count = 250
min_separation = 1.05
[physics]
k = 0.3
[output]
formats = ["json", "csv"]
probes = [[0.0, 0.0, 9.0], [2.0, -1.0, -9.0]]
[[output.lines]]
start = [0.0, 0.0, -5.0]
end = [0.0, 0.0, 5.0]
samples = 21
name = "axis"
"""


def test_polarizability_unit_sphere(tmp_path):
    cfg = scenario(tmp_path, 'mode = "polarizability"\n[body]\nrefinement = 3\n[physics]\ngamma = 0.3\n')
    assert run(cfg, "--out", str(tmp_path / "o"), command="polarizability") == EXIT_OK
    doc = json.loads((tmp_path / "o" / "polarizability.json").read_text())
    assert doc["capacitance"] == pytest.approx(4 * math.pi, rel=0.01)
    assert np.allclose(np.diag(doc["alpha"]), 6 * 0.3 / 2.7, rtol=0.03)


def test_empty_ensemble_probes_are_incident(tmp_path):
    cfg = scenario(tmp_path, """
mode = "acoustic-discrete"
[ensemble]
count = 0
[physics]
k = 1.3
direction = [0.0, 0.6, 0.8]
[output]
probes = [[1.0, 2.0, 3.0], [-4.0, 0.5, 9.0], [0.0, 0.0, 0.0]]
""")
    assert run(cfg, "--out", str(tmp_path / "o")) == EXIT_OK
    header, data = read_csv(tmp_path / "o" / "probes.csv")
    u = data[:, 4] + 1j * data[:, 5]
    assert np.allclose(u, np.exp(1.3j * (data[:, :3] @ [0.0, 0.6, 0.8])), rtol=0, atol=1e-15)


def test_emit_empty_line_and_plane(tmp_path):
    cfg = scenario(tmp_path, """
mode = "acoustic-discrete"
[ensemble]
count = 0
[output]
formats = ["csv"]
[[output.lines]]
start = [-5.0, 0.0, 0.0]
end = [5.0, 0.0, 0.0]
samples = 30
[[output.planes]]
axis = 2
value = 1.0
shape = [50, 50]
""")
    assert run(cfg, "--out", str(tmp_path / "o"), command="emit") == EXIT_OK
    _, line = read_csv(tmp_path / "o" / "line.csv")
    assert np.allclose(line[:, 3], 1.0, rtol=0, atol=1e-15)
    _, plane = read_csv(tmp_path / "o" / "plane.csv")
    assert plane.shape == (2500, 6)


def test_shadow_behind_soft_cloud(tmp_path):
    cfg = scenario(tmp_path, SOFT_CLOUD)
    assert run(cfg, "--out", str(tmp_path / "o"), command="emit") == EXIT_OK
    _, axis = read_csv(tmp_path / "o" / "axis.csv")
    behind = axis[axis[:, 2] >= 4.0, 3]
    assert np.all(behind < 1.0)
    assert behind.mean() < 0.5


def test_deterministic_and_seeded(tmp_path):
    cfg = scenario(tmp_path, SOFT_CLOUD)
    for out in ("a", "b"):
        assert run(cfg, "--out", str(tmp_path / out)) == EXIT_OK
    assert run(cfg, "--out", str(tmp_path / "c"), "--seed", "2") == EXIT_OK
    for name in ("solution.json", "probes.csv", "polarizability.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    assert (tmp_path / "a" / "solution.json").read_bytes() != (tmp_path / "c" / "solution.json").read_bytes()


def test_ensemble_file(tmp_path):
    bodies = [{"position": [0, 0, 0], "C": 0.5, "V": 0.0, "area": 0.0, "beta": np.zeros((3, 3)).tolist(), "h": 0.0}]
    (tmp_path / "ens.json").write_text(json.dumps(bodies))
    cfg = scenario(tmp_path, """
mode = "acoustic-discrete"
[ensemble]
file = "ens.json"
[output]
probes = [[0.0, 0.0, 4.0]]
""")
    assert run(cfg, "--out", str(tmp_path / "o")) == EXIT_OK
    _, data = read_csv(tmp_path / "o" / "probes.csv")
    expected = np.exp(4j) - np.exp(4j) / (16 * math.pi) * 0.5
    assert data[0, 4] + 1j * data[0, 5] == pytest.approx(expected, rel=1e-14)


def test_mesh_body(tmp_path):
    (tmp_path / "tet.off").write_text("OFF\n4 4 0\n0 0 0\n1 0 0\n0 1 0\n0 0 1\n3 0 2 1\n3 0 1 3\n3 0 3 2\n3 1 2 3\n")
    cfg = scenario(tmp_path, 'mode = "polarizability"\n[body]\nshape = "mesh"\nmesh = "tet.off"\n[numerics]\norder = 2\n')
    assert run(cfg, "--out", str(tmp_path / "o"), command="polarizability") == EXIT_OK
    doc = json.loads((tmp_path / "o" / "polarizability.json").read_text())
    assert doc["volume"] == pytest.approx(1 / 6)


def test_continuum_neumann_grid(tmp_path):
    cfg = scenario(tmp_path, """
mode = "acoustic-continuum"
[density]
kind = "gaussian"
amplitude = 0.02
width = 2.0
[physics]
boundary = "neumann"
[numerics]
grid = [6, 6, 6]
[output]
formats = ["json", "csv"]
""")
    assert run(cfg, "--out", str(tmp_path / "o")) == EXIT_OK
    header, data = read_csv(tmp_path / "o" / "grid.csv")
    assert data.shape == (216, 11) and header[5] == "re_grad_x"
    assert "closure" in json.loads((tmp_path / "o" / "solution.json").read_text())


def test_continuum_soft_residual(tmp_path):
    cfg = scenario(tmp_path, """
mode = "acoustic-continuum"
[density]
kind = "uniform"
amplitude = 0.01
[numerics]
grid = [8, 8, 8]
""")
    assert run(cfg, "--out", str(tmp_path / "o")) == EXIT_OK
    doc = json.loads((tmp_path / "o" / "solution.json").read_text())
    assert 0 < doc["schrodinger_residual"] < 0.5


EM = """
mode = "{mode}"
[body]
radius = 0.05
refinement = 1
[ensemble]
count = 6
min_separation = {sep}
region = {{ lower = [-{half}, -{half}, -{half}], upper = [{half}, {half}, {half}] }}
[physics]
k = 1.0
eps = 3.0
[numerics]
order = 3
grid = [4, 4, 4]
"""


def test_em_discrete(tmp_path):
    cfg = scenario(tmp_path, EM.format(mode="em-discrete", sep=7.0, half=20.0))
    assert run(cfg, "--out", str(tmp_path / "o")) == EXIT_OK
    doc = json.loads((tmp_path / "o" / "solution.json").read_text())
    assert len(doc["sites"]) == 6 and doc["metadata"]["green_function"] == "exp(ikr)/r"


def test_em_near_zone_refused(tmp_path, capsys):
    cfg = scenario(tmp_path, EM.format(mode="em-discrete", sep=0.6, half=2.0))
    assert run(cfg, "--out", str(tmp_path / "o"), "--seed", "3") == EXIT_VALIDATION
    assert "allow_near_zone" in capsys.readouterr().err


def test_em_continuum(tmp_path):
    cfg = scenario(tmp_path, EM.format(mode="em-continuum", sep=1.0, half=20.0))
    assert run(cfg, "--out", str(tmp_path / "o")) == EXIT_OK
    doc = json.loads((tmp_path / "o" / "solution.json").read_text())
    assert len(doc["sites"]) == 64 and doc["metadata"]["self_cell"] == "zero"


def test_compare_report(tmp_path):
    cfg = scenario(tmp_path, """
mode = "compare"
[ensemble]
counts = [8, 27]
seeds = 2
[density]
kind = "gaussian"
amplitude = 0.2
width = 2.0
[physics]
k = 0.3
[numerics]
grid = [8, 8, 8]
""")
    assert run(cfg, "--out", str(tmp_path / "o"), command="compare") == EXIT_OK
    doc = json.loads((tmp_path / "o" / "compare.json").read_text())
    assert doc["counts"] == [8, 27] and len(doc["relative_l2_distance"]) == 2
    assert all(d > 0 for d in doc["relative_l2_distance"])


@pytest.mark.parametrize("text,command", [
    ('mode = "nonsense"\n', "solve"),
    ('mode = "polarizability"\nextra = 1\n', "solve"),
    ('mode = "polarizability"\n', "emit"),
    ('mode = "polarizability"\n', "compare"),
    ('mode = "acoustic-discrete"\n[ensemble]\ncount = 3\nmin_separation = 0.5\n', "solve"),
])
def test_validation_exit(tmp_path, text, command, capsys):
    cfg = scenario(tmp_path, text)
    assert run(cfg, "--out", str(tmp_path / "o"), command=command) == EXIT_VALIDATION
    assert "error" in capsys.readouterr().err


def test_missing_config(tmp_path):
    assert run(tmp_path / "absent.toml") == EXIT_VALIDATION


def test_numerical_exit(tmp_path, capsys):
    cfg = scenario(tmp_path, """
mode = "acoustic-continuum"
[density]
kind = "uniform"
amplitude = 0.5
[numerics]
grid = [6, 6, 6]
continuum_tol = 1e-300
""")
    assert run(cfg, "--out", str(tmp_path / "o")) == EXIT_NUMERICAL
    assert "numerical failure" in capsys.readouterr().err


def test_console_entry(tmp_path):
    cfg = scenario(tmp_path, 'mode = "polarizability"\n[body]\nrefinement = 1\n')
    proc = subprocess.run([sys.executable, "-m", "scfield.cli", "polarizability", "--config", str(cfg),
                           "--out", str(tmp_path / "o"), "--threads", "1"], capture_output=True, text=True)
    assert proc.returncode == 0
    assert "capacitance" in proc.stdout
