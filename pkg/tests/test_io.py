import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qstate import io
from qstate.detection import (
    HomodyneDataset,
    ProbeConfig,
    equidistant_phases,
    sample_homodyne,
    simulate_displaced_counts,
    simulate_quadrature_probe,
    smeared_distribution,
)
from qstate.errors import InvalidSpec
from qstate.patterns import pattern_function_table
from qstate.states import DEFAULT_GRID, Coherent, Fock, Grid1D, PhaseSpaceGrid, build_state, phase_space_function
from qstate.tomography import ReconstructionReport, fbp_phase_space, sample_density_fock


@settings(max_examples=200)
@given(st.floats(allow_nan=False))
def test_float_format_round_trips(v):
    assert float(io.fmt(v)) == v


def test_float_format_specials():
    assert io.fmt(math.inf) == "inf"
    assert io.fmt(-math.inf) == "-inf"
    assert io.fmt(math.nan) == "nan"


class TestJson:
    def test_dumps_is_valid_json(self):
        obj = {"a": [1, 2.5, 1e-300], "b": {"c": None, "d": True}, "z": 1 + 2j, "arr": np.eye(2)}
        back = json.loads(io.dumps(obj))
        assert back == {"a": [1, 2.5, 1e-300], "b": {"c": None, "d": True}, "z": [1.0, 2.0], "arr": [[1.0, 0.0], [0.0, 1.0]]}

    def test_infinity_travels_as_string(self):
        assert json.loads(io.dumps({"x": math.inf})) == {"x": "inf"}

    def test_digest_ignores_key_order(self):
        assert io.digest({"a": 1, "b": [1.0, 2.0]}) == io.digest({"b": [1.0, 2.0], "a": 1})
        assert io.digest({"a": 1}) != io.digest({"a": 2})

    def test_dumps_preserves_insertion_order(self):
        text = io.dumps({"b": 1, "a": 2})
        assert text.index('"b"') < text.index('"a"')

    def test_write_read(self, tmp_path):
        io.write_json({"k": [0.1, 0.2]}, tmp_path / "x.json")
        assert io.read_json(tmp_path / "x.json") == {"k": [0.1, 0.2]}


class TestDatasets:
    def test_homodyne_round_trip(self, tmp_path):
        ds = sample_homodyne(build_state(Coherent(0.8), 12), equidistant_phases(3), 200, eta=0.9, rng_seed=5)
        io.write_homodyne(ds, tmp_path / "h.csv")
        back = io.read_homodyne(tmp_path / "h.csv")
        assert np.array_equal(back.phases, ds.phases)
        assert all(np.array_equal(a, b) for a, b in zip(back.samples, ds.samples))
        assert (back.eta, back.lo_photon_number, back.rng_seed) == (0.9, math.inf, 5)

    def test_homodyne_bytes_stable(self, tmp_path):
        ds = sample_homodyne(build_state(Fock(1), 3), equidistant_phases(2), 50, rng_seed=1)
        io.write_homodyne(ds, tmp_path / "a.csv")
        io.write_homodyne(io.read_homodyne(tmp_path / "a.csv"), tmp_path / "b.csv")
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
        assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()

    def test_homodyne_bad_header(self, tmp_path):
        ds = HomodyneDataset([0.0], (np.array([0.1]),))
        io.write_homodyne(ds, tmp_path / "h.csv")
        (tmp_path / "h.csv").write_text("k,phi,x\n0,0,0.1\n")
        with pytest.raises(InvalidSpec):
            io.read_homodyne(tmp_path / "h.csv")

    def test_homodyne_unknown_scaling(self, tmp_path):
        ds = HomodyneDataset([0.0], (np.array([0.1]),))
        io.write_homodyne(ds, tmp_path / "h.csv")
        meta = io.read_json(tmp_path / "h.json")
        meta["scaling"] = "other"
        io.write_json(meta, tmp_path / "h.json")
        with pytest.raises(InvalidSpec):
            io.read_homodyne(tmp_path / "h.csv")

    def test_counts_round_trip(self, tmp_path):
        al = [0.0, 0.5j, 0.0, -0.3 + 0.1j]
        ds = simulate_displaced_counts(build_state(Fock(1), 3), al, 0.85, 300, 4, 2)
        io.write_counts(ds, tmp_path / "c.csv")
        back = io.read_counts(tmp_path / "c.csv")
        assert np.array_equal(back.alphas, ds.alphas)
        assert all(np.array_equal(a, b) for a, b in zip(back.counts, ds.counts))
        assert (back.eta, back.chopping_N, back.shots, back.rng_seed) == (0.85, 4, 300, 2)

    def test_probe_round_trip(self, tmp_path):
        sig = simulate_quadrature_probe(build_state(Fock(1), 3), ProbeConfig(np.linspace(0, 3, 7), phi=0.4))
        io.write_probe(sig, tmp_path / "p.csv", {"phi": 0.4})
        back = io.read_probe(tmp_path / "p.csv")
        assert [s.channel for s in back] == [s.channel for s in sig]
        assert all(np.array_equal(a.values, b.values) and np.array_equal(a.times, b.times) for a, b in zip(back, sig))
        assert io.read_json(tmp_path / "p.json")["kind"] == "probe"


def test_pattern_table_round_trip(tmp_path):
    t = pattern_function_table(3, Grid1D(-6, 6, 300))
    io.write_pattern_table(t, tmp_path / "t.csv")
    back = io.read_pattern_table(tmp_path / "t.csv")
    assert np.array_equal(back.values, t.values)
    assert back.grid == t.grid and back.meta == t.meta


def test_cache_key():
    a = io.table_cache_key(6, DEFAULT_GRID, 1.0, "1")
    assert a == io.table_cache_key(6, DEFAULT_GRID, 1.0, "1")
    assert a != io.table_cache_key(6, DEFAULT_GRID, 0.9, "1")


class TestReports:
    def test_density_report_round_trip(self):
        rho = build_state(Coherent(0.4j), 10)
        rep = sample_density_fock(smeared_distribution(rho, equidistant_phases(5)), 4, pattern_function_table(4))
        back = io.report_from_dict(json.loads(io.dumps(io.report_to_dict(rep))))
        assert np.array_equal(back.estimate.elements, rep.estimate.elements)
        assert np.array_equal(back.std_errors, rep.std_errors)
        assert back.method == json.loads(io.dumps(rep.method))

    def test_phase_space_report_round_trip(self):
        ax = np.linspace(-1, 1, 3)
        g = phase_space_function(build_state(Fock(1), 3), 0.0, PhaseSpaceGrid(ax, ax, convention="qp"))
        rep = ReconstructionReport(g, None, {"tag": "wigner"})
        back = io.report_from_dict(json.loads(io.dumps(io.report_to_dict(rep))))
        assert np.array_equal(back.estimate.values, g.values)
        assert back.estimate.convention == "qp" and back.std_errors is None

    def test_library_version_preserved(self):
        d = io.report_to_dict(ReconstructionReport(1.5, None, {"tag": "x"}))
        d["method"]["library_version"] = "0.0.1"
        assert io.report_from_dict(d).method["library_version"] == "0.0.1"

    def test_malformed(self):
        with pytest.raises(InvalidSpec):
            io.report_from_dict({"estimate": {}})

    def test_phase_space_csv_units(self, tmp_path):
        ax = np.array([-0.5, 0.0, 0.5])
        g = phase_space_function(build_state(Fock(0), 2), 0.0, PhaseSpaceGrid(ax, ax))
        io.write_phase_space_csv(g, tmp_path / "w.csv")
        rows = np.loadtxt(tmp_path / "w.csv", delimiter=",", skiprows=1)
        # the vacuum peak in (q, p) units is 1/pi
        assert rows[4] == pytest.approx([0.0, 0.0, 1 / math.pi])
        assert rows[0, :2] == pytest.approx([-0.5 * math.sqrt(2), -0.5 * math.sqrt(2)])

    def test_fbp_report_bytes_stable(self):
        ds = sample_homodyne(build_state(Fock(0), 2), equidistant_phases(4), 100, rng_seed=0)
        out = PhaseSpaceGrid([0.0, 0.5], [0.0], convention="qp")
        a = io.dumps(io.report_to_dict(fbp_phase_space(ds, out=out)))
        b = io.dumps(io.report_to_dict(fbp_phase_space(ds, out=out)))
        assert a == b
