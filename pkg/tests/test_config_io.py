import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nlch.config import (ConfigError, build_grid, build_model, initial_state, load_config, parse_config,
                         thread_count)
from nlch.grid import TorusGrid
from nlch.io import (MAGIC, SnapshotError, diagnostics_header, read_snapshot, write_diagnostics,
                     write_snapshot)
from nlch.model import State
from nlch.studies import simulate

BASE = """\
# comment line
[grid]
d = 1
points = 64        # trailing comment
[model]
species = 3
eps = 0.2
L = 2.0
C = [[1, 0, 0], [0, 1, 0], [0, 0, 1]]
[scheme]
tau = 1e-4
[initial]
preset = dirichlet_random
seed = 3
[run]
t_final = 3e-4
[output]
directory = runs/out_1
"""


def test_parse_full_example():
    cfg = parse_config(BASE)
    assert cfg.grid["points"] == 64
    assert cfg.output["directory"] == "runs/out_1"
    p = build_model(cfg)
    assert np.array_equal(p.L, [[0, 2, 2], [2, 0, 2], [2, 2, 0]])
    assert np.array_equal(p.C, np.eye(3))
    assert initial_state(cfg).species == 3


def test_defaults_fill_missing_keys():
    cfg = parse_config("[scheme]\ntau = 0.01\n")
    assert cfg.grid["d"] == 1 and cfg.model["species"] == 2 and cfg.output["strict"] is True


@pytest.mark.parametrize("text,pattern,line", [
    ("[scheme]\ntua = 1\n", "unknown key scheme.tua", 2),
    ("[scheme]\ntau = 1\ntau = 2\n", "at lines 2 and 3", 3),
    ("[grid]\n[grid]\n[scheme]\ntau=1\n", "repeated", 2),
    ("[physics]\n", "unknown section", 1),
    ("tau = 1\n", "before any", 1),
    ("[scheme]\ntau 1\n", "key = value", 2),
    ("[model]\nC = [[1, 3], [3, 1]]\n[scheme]\ntau = 1\n", "eigenvalue -2", 2),
    ("[model]\neps = 0.01\n[scheme]\ntau = 1\n", "use at least N=", 2),
    ("[grid]\npoints = 63\n[scheme]\ntau = 1\n", "even", 2),
    ("[grid]\npoints = (1,\n", "cannot parse", 2),
])
def test_errors_report_line(text, pattern, line):
    with pytest.raises(ConfigError, match=pattern) as info:
        parse_config(text)
    assert info.value.line == line
    assert str(info.value).startswith(f"line {line}:")


def test_tau_is_required():
    with pytest.raises(ConfigError, match="tau"):
        parse_config("[grid]\nd = 1\n")


def test_interaction_warning_is_kept():
    cfg = parse_config("[model]\nspecies = 3\nC = [[1, 0.6, 0], [0.6, 1, 0], [0, 0, 1]]\n[scheme]\ntau = 1\n")
    assert cfg.warnings


def test_thread_override(monkeypatch):
    cfg = parse_config("[scheme]\ntau = 1\n[output]\nstrict = false\nthreads = 2\n")
    monkeypatch.setenv("NLCH_THREADS", "3")
    assert thread_count(cfg) == 3
    assert thread_count(cfg.with_values("output", strict=True)) == 1
    monkeypatch.delenv("NLCH_THREADS")
    assert thread_count(cfg) == 2


def test_with_values_rejects_unknown_keys():
    cfg = parse_config("[scheme]\ntau = 1\n")
    with pytest.raises(ConfigError):
        cfg.with_values("scheme", taux=2)


def test_load_from_file(tmp_path):
    path = tmp_path / "a.cfg"
    path.write_text(BASE)
    assert load_config(path).initial["preset"] == "dirichlet_random"


@settings(max_examples=20, deadline=None)
@given(d=st.integers(1, 2), n=st.sampled_from([4, 8, 16]), species=st.integers(2, 4),
       time=st.floats(0.0, 10.0, allow_nan=False), seed=st.integers(0, 2 ** 32))
def test_snapshot_roundtrip_is_bit_exact(tmp_path_factory, d, n, species, time, seed):
    g = TorusGrid(d, n, extent=1.5)
    u = np.random.default_rng(seed).dirichlet(np.ones(species), size=g.shape)
    s = State(g, np.moveaxis(u, -1, 0), time)
    path = tmp_path_factory.mktemp("snap") / "s.bin"
    write_snapshot(s, path)
    back = read_snapshot(path)
    assert back.grid == g and back.time == time and np.array_equal(back.u, s.u)
    assert path.stat().st_size == len(MAGIC) + 2 + 1 + 1 + 8 + 8 + 8 + 8 * s.u.size


def test_snapshot_errors(tmp_path):
    g = TorusGrid(1, 8)
    path = tmp_path / "s.bin"
    write_snapshot(State(g, np.full((2, 8), 0.5)), path)
    data = path.read_bytes()
    (tmp_path / "short.bin").write_bytes(data[:-8])
    with pytest.raises(SnapshotError, match=f"expected {len(data)} bytes, got {len(data) - 8}"):
        read_snapshot(tmp_path / "short.bin")
    (tmp_path / "magic.bin").write_bytes(b"XXXXXX" + data[6:])
    with pytest.raises(SnapshotError, match="magic"):
        read_snapshot(tmp_path / "magic.bin")


def test_diagnostics_csv(tmp_path):
    cfg = parse_config(BASE)
    sim = simulate(cfg)
    path = tmp_path / "d.csv"
    write_diagnostics(sim.records, path)
    rows = path.read_text().splitlines()
    header = rows[0].split(",")
    assert header == diagnostics_header(3)
    assert "energy_nonlocal" in header and "mass_2" in header
    assert len(rows) == 1 + 1 + 3
    values = rows[-1].split(",")
    assert len(values) == len(header)
    assert float(values[header.index("energy_total")]) == sim.records[-1].energy_total
    assert float(values[header.index("time")]) == pytest.approx(3e-4)


def test_local_header():
    assert "energy_dirichlet" in diagnostics_header(2, "local")
