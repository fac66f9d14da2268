import json
import math

import numpy as np
import pytest

from cohwork import ising, sweep
from cohwork.errors import CapacityError, ConfigError

MINIMAL = {"engine": "ising", "N": 10, "lambda0": 0, "delta_lambda": 0.5, "T": 100,
           "p": 1, "phi": "pi", "outputs": ["distribution"]}

ALL_SCALARS = ["average_work", "fluctuation", "fluctuation_relation", "delta_f", "w_irr",
               "decomposition"]


def doc(drop=(), **kw):
    d = {k: v for k, v in MINIMAL.items() if k not in drop}
    d.update(kw)
    return d


# ---------------------------------------------------------------------------
# parsing
# ---------------------------------------------------------------------------

def test_parse_minimal():
    cfg = sweep.parse_config(json.dumps(MINIMAL))
    assert cfg.phi == math.pi
    assert cfg.N == 10
    assert cfg.merge_tolerance == 1e-9
    assert cfg.format == "csv"
    assert cfg.outputs == ("distribution",)
    assert len(cfg.points()) == 1


@pytest.mark.parametrize("text,value", [("0", 0.0), ("pi", math.pi), ("pi/2", math.pi / 2),
                                        ("-pi/4", -math.pi / 4), ("2pi", 2 * math.pi),
                                        ("3*pi/2", 1.5 * math.pi), (0.25, 0.25)])
def test_parse_phase(text, value):
    assert sweep.parse_phase(text) == pytest.approx(value, abs=1e-15)


def test_parse_phase_rejects_garbage():
    with pytest.raises(ConfigError):
        sweep.parse_phase("tau")


def test_sweep_unknown_parameter_is_named():
    with pytest.raises(ConfigError, match="'q'|\"q\"|\\bq\\b"):
        sweep.config_from_dict(doc(sweep=[{"param": "q", "values": [1, 2]}]))


@pytest.mark.parametrize("bad,fragment", [
    (doc(N=9), "N"),
    (doc(colour="red"), "colour"),
    (doc(outputs=["nonsense"]), "outputs"),
    (doc(outputs=["histogram"]), "histogram"),
    (doc(histogram={"sigma": 0.1, "w_min": -1, "w_max": 1, "n_points": 10}), "histogram"),
    (doc(format="xml"), "format"),
    (doc(p=1.5), "p"),
    (doc(sweep=[{"param": "p", "values": [0]}, {"param": "T", "values": [1]},
                {"param": "phi", "values": [0]}]), "sweep"),
    ({k: v for k, v in MINIMAL.items() if k != "T"}, "T"),
])
def test_config_errors_carry_key_path(bad, fragment):
    with pytest.raises(ConfigError) as info:
        sweep.config_from_dict(bad)
    assert fragment in str(info.value)


def test_malformed_json():
    with pytest.raises(ConfigError):
        sweep.parse_config("{not json")


def test_range_is_inclusive():
    cfg = sweep.config_from_dict(doc(drop=("p",), sweep=[{"param": "p", "range": {"from": 0, "to": 1, "step": 0.05}}]))
    values = dict(cfg.sweep)["p"]
    assert len(values) == 21
    assert values[0] == 0 and values[-1] == 1
    assert values[7] == 0.35


def test_points_are_lexicographic():
    cfg = sweep.config_from_dict(doc(sweep=[{"param": "lambda0", "values": [0, 1]},
                                            {"param": "p", "values": [0, 0.5, 1]}]))
    pts = [(pt["lambda0"], pt["p"]) for pt in cfg.points()]
    assert pts == [(0, 0), (0, 0.5), (0, 1), (1, 0), (1, 0.5), (1, 1)]


# ---------------------------------------------------------------------------
# presets
# ---------------------------------------------------------------------------

FIG1 = {"N": 10, "delta_lambda": 0.5, "phi": math.pi}
FIG1_ROWS = {"a": (0.01, 0.0), "b": (100.0, 0.0), "c": (100.0, 1.0)}
FIG1_COLS = {"1": 0.0, "2": 1.0, "3": 2.0}


@pytest.mark.parametrize("row", "abc")
@pytest.mark.parametrize("col", "123")
def test_fig1_presets(row, col):
    (cfg,) = sweep.expand_preset(f"fig1{row}{col}")
    for key, value in FIG1.items():
        assert getattr(cfg, key) == value
    assert (cfg.T, cfg.p) == FIG1_ROWS[row]
    assert cfg.lambda0 == FIG1_COLS[col]
    assert cfg.histogram == sweep.HistogramSpec(0.1, -10.0, 10.0, 2001)


def test_fig2_preset():
    cfgs = sweep.expand_preset("fig2")
    assert sorted(c.phi for c in cfgs) == [0.0, math.pi]
    for c in cfgs:
        assert (c.N, c.delta_lambda, c.T) == (100, 0.1, 100)
        axes = dict(c.sweep)
        assert axes["lambda0"] == (0, 0.5, 1, 1.5, 2)
        assert len(axes["p"]) == 21 and axes["p"][1] == 0.05
        assert set(c.outputs) == {"average_work", "fluctuation"}


def test_fig3_preset():
    cfgs = sweep.expand_preset("fig3")
    assert {c.T for c in cfgs} == {0.01, 100.0}
    for c in cfgs:
        assert (c.N, c.delta_lambda) == (100, 0.1)
        lam = dict(c.sweep)["lambda0"]
        assert lam[0] == 0 and lam[-1] == 2 and len(lam) == 101


def test_fig4_preset():
    (c,) = sweep.expand_preset("fig4")
    assert (c.T, c.lambda0, c.delta_lambda, c.N, c.phi) == (100, 0, 0.1, 100, 0)
    assert set(c.outputs) == {"delta_f", "w_irr"}


def test_fig5_preset():
    cfgs = sweep.expand_preset("fig5")
    assert {c.phi for c in cfgs} == {0.0, math.pi}
    for c in cfgs:
        assert (c.N, c.delta_lambda) == (100, 0.1)


def test_unknown_preset():
    with pytest.raises(ConfigError):
        sweep.expand_preset("fig9")


# ---------------------------------------------------------------------------
# running
# ---------------------------------------------------------------------------

def test_run_fig4():
    tables = sweep.run_experiment(sweep.expand_preset("fig4"))
    t = tables["scalars"]
    assert t.columns == ("p", "delta_f", "w_irr")
    assert len(t.rows) == 21
    assert t.column("p")[0] == 0 and t.column("p")[-1] == 1


def test_run_single_point_fluctuation_relation():
    cfg = sweep.config_from_dict(doc(p=0, outputs=["fluctuation_relation"]))
    t = sweep.run_experiment(cfg)["scalars"]
    assert len(t.rows) == 1
    s = ising.IsingQuenchSpec(N=10, lambda0=0, delta_lambda=0.5, T=100, p=0)
    assert t.rows[0][0] == pytest.approx(ising.jarzynski_ratio(s), rel=1e-12)


@pytest.mark.parametrize("engine", ["ising", "generic"])
def test_run_all_outputs_one_row(engine):
    cfg = sweep.config_from_dict(doc(engine=engine, N=6, p=0.6, phi=0.4, T=2.0,
                                     outputs=ALL_SCALARS + ["distribution", "histogram"],
                                     histogram={"sigma": 0.1, "w_min": -15, "w_max": 15,
                                                "n_points": 301}))
    tables = sweep.run_experiment(cfg)
    t = tables["scalars"]
    assert len(t.rows) == 1
    assert all(math.isfinite(v) for v in t.rows[0])
    assert len(t.columns) == 5 + len(sweep.DECOMPOSITION_COLUMNS)
    assert sum(tables["distribution"].column("weight")) == pytest.approx(1.0, abs=1e-9)
    assert len(tables["histogram"].rows) == 301


def test_generic_engine_agrees_with_ising_engine():
    base = doc(N=8, p=0.7, phi=0.3, T=1.5, outputs=ALL_SCALARS + ["distribution"])
    a = sweep.run_experiment(sweep.config_from_dict(base))
    b = sweep.run_experiment(sweep.config_from_dict(dict(base, engine="generic")))
    np.testing.assert_allclose(a["scalars"].rows[0], b["scalars"].rows[0], rtol=1e-8, atol=1e-9)
    wa = dict(zip(a["distribution"].column("w"), a["distribution"].column("weight")))
    wb = dict(zip(b["distribution"].column("w"), b["distribution"].column("weight")))
    assert len(wa) == len(wb)
    np.testing.assert_allclose(sorted(wa), sorted(wb), atol=1e-9)
    np.testing.assert_allclose([wa[k] for k in sorted(wa)], [wb[k] for k in sorted(wb)], atol=1e-9)


def test_distribution_tables_normalised_per_point():
    cfg = sweep.config_from_dict(doc(drop=("p",), sweep=[{"param": "p", "values": [0, 0.5, 1]}]))
    t = sweep.run_experiment(cfg)["distribution"]
    assert t.columns == ("p", "w", "weight")
    for p in (0, 0.5, 1):
        total = sum(wt for pp, _, wt in t.rows if pp == p)
        assert total == pytest.approx(1.0, abs=1e-9)


def test_capacity_refusal_names_point():
    cfg = sweep.config_from_dict(doc(N=30))
    with pytest.raises(CapacityError, match="N=30"):
        sweep.run_experiment(cfg)


def test_threads_do_not_change_rows(monkeypatch):
    cfg = sweep.expand_preset("fig2")
    a = sweep.run_experiment(cfg, threads=1)["scalars"]
    b = sweep.run_experiment(cfg, threads=4)["scalars"]
    assert a.rows == b.rows
    assert a.columns[:3] == ("lambda0", "p", "phi")
    monkeypatch.setenv("COHWORK_THREADS", "3")
    assert sweep._threads() == 3


# ---------------------------------------------------------------------------
# emission
# ---------------------------------------------------------------------------

def test_emit_one_row_csv(tmp_path):
    cfg = sweep.config_from_dict(doc(outputs=["average_work"]))
    t = sweep.run_experiment(cfg)["scalars"]
    path = tmp_path / "out.csv"
    sweep.emit(t, path, "csv")
    raw = path.read_bytes()
    assert raw.count(b"\r\n") == 2
    lines = raw.decode().splitlines()
    assert lines[0] == "average_work"
    assert float(lines[1]) == t.rows[0][0]
    meta = json.loads((tmp_path / "out.csv.meta.json").read_text())
    assert "conventions" in meta and "timestamp" in meta


def test_emit_csv_seventeen_digits():
    t = sweep.ResultTable(("x",), [(0.1 + 0.2,)])
    assert sweep.table_to_csv(t).splitlines()[1] == "0.30000000000000004"


def test_fig1c1_histogram_table():
    tables = sweep.run_experiment(sweep.expand_preset("fig1c1"))
    h = tables["histogram"]
    assert h.columns[-2:] == ("w", "density")
    assert len(h.rows) == 2001
    assert min(h.column("density")) < 0


def test_json_round_trip(tmp_path):
    t = sweep.run_experiment(sweep.expand_preset("fig4"))["scalars"]
    path = tmp_path / "t.json"
    sweep.emit(t, path, "json")
    back = sweep.read_table(path, "json")
    assert back.columns == t.columns
    assert back.rows == t.rows
    assert back.metadata == json.loads(json.dumps(t.metadata))


def test_csv_round_trip(tmp_path):
    t = sweep.run_experiment(sweep.expand_preset("fig4"))["scalars"]
    sweep.emit(t, tmp_path / "t.csv", "csv")
    back = sweep.read_table(tmp_path / "t.csv")
    assert back.rows == [tuple(float(v) for v in r) for r in t.rows]


def test_deterministic_bytes(tmp_path):
    cfg = sweep.expand_preset("fig2")
    for i in range(2):
        sweep.emit(sweep.run_experiment(cfg)["scalars"], tmp_path / f"r{i}.csv")
    assert (tmp_path / "r0.csv").read_bytes() == (tmp_path / "r1.csv").read_bytes()


def test_emit_io_error_has_path(tmp_path):
    t = sweep.ResultTable(("x",), [(1.0,)])
    target = tmp_path / "missing" / "x.csv"
    with pytest.raises(OSError, match="missing"):
        sweep.emit(t, target)


def test_table_paths():
    paths = sweep.table_paths("out/res.csv", ["scalars", "histogram"])
    assert str(paths["scalars"]) == "out/res.csv"
    assert str(paths["histogram"]) == "out/res_histogram.csv"
