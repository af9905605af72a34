import xml.etree.ElementTree as ET

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dynadmm.diagnostics import (CSV_COLUMNS, IterationRecord, RunManifest, rate_report, read_csv,
                                 write_csv, write_svg)

finite = st.floats(allow_nan=False, allow_infinity=False, width=64)


def _rec(k, steps=(0.0,), **kw):
    base = dict(objective=1.0, constraint_inf=0.5, constraint_sq=0.25, auglag=1.0, lyapunov=1.0,
                primal_step=0.1, dual_step=0.1, kkt_stat=0.1)
    base.update(kw)
    return IterationRecord(iteration=k, block_step_sq=np.asarray(steps, dtype=float), **base)


def test_empty_log_is_header_only(tmp_path):
    path = tmp_path / "it.csv"
    write_csv([], path)
    assert path.read_bytes() == (",".join(CSV_COLUMNS) + "\n").encode()
    assert read_csv(path) == []


def test_csv_format(tmp_path):
    path = tmp_path / "it.csv"
    write_csv([_rec(1), _rec(2, objective=1 / 3)], path)
    raw = path.read_bytes()
    assert b"\r" not in raw
    lines = raw.decode().splitlines()
    assert lines[0] == "iter,objective,constraint_inf,constraint_sq,auglag,lyapunov," \
                       "primal_step,dual_step,kkt_stat,wall_ms"
    assert all(len(line.split(",")) == 10 for line in lines)
    assert lines[2].split(",")[1] == format(1 / 3, ".17g")


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(*[finite] * 9), max_size=6))
def test_csv_round_trip(tmp_path_factory, rows):
    path = tmp_path_factory.mktemp("csv") / "it.csv"
    recs = [IterationRecord(k + 1, *vals) for k, vals in enumerate(rows)]
    write_csv(recs, path)
    back = read_csv(path)
    assert [r.csv_row() for r in back] == [r.csv_row() for r in recs]


def test_read_rejects_foreign_header(tmp_path):
    path = tmp_path / "x.csv"
    path.write_text("a,b\n1,2\n")
    with pytest.raises(ValueError):
        read_csv(path)


def test_rate_constant_iterates():
    recs = [_rec(k, steps=(0.0, 0.0)) for k in range(1, 6)]
    rep = rate_report(recs, [1.0, 1.0], [1.0, 1.0])
    assert np.all(rep.running_min == 0)
    assert np.all(rep.scaled == 0)


def test_rate_geometric_decay():
    recs = [_rec(k, steps=(2.0 ** -k,)) for k in range(1, 40)]
    rep = rate_report(recs, [0.5], [0.5])
    np.testing.assert_allclose(rep.running_min, 2.0 ** -np.arange(1, 40))
    assert rep.scaled[-1] < rep.scaled[0]
    assert rep.slope < 0
    assert rep.at(10) == 2.0 ** -10


def test_rate_is_pure():
    recs = [_rec(k, steps=(1.0 / k, 2.0 / k)) for k in range(1, 20)]
    a = rate_report(recs, [1.0, 2.0], [0.5, 0.5])
    b = rate_report(recs, [1.0, 2.0], [0.5, 0.5])
    assert np.array_equal(a.scaled, b.scaled) and a.slope == b.slope
    with pytest.raises(ValueError):
        rate_report(recs[:1], [1.0, 2.0], [0.5, 0.5])


def test_svg_has_two_charts(tmp_path):
    path = tmp_path / "plot.svg"
    write_svg([_rec(k, constraint_inf=10.0 ** -k, objective=1 + 1 / k) for k in range(1, 30)], path)
    root = ET.parse(path).getroot()
    assert root.get("version") == "1.1"
    lines = root.findall(".//{http://www.w3.org/2000/svg}polyline")
    assert len(lines) == 2


def test_svg_empty_log(tmp_path):
    path = tmp_path / "plot.svg"
    write_svg([], path)
    ET.parse(path)


def test_manifest_round_trip(tmp_path):
    path = tmp_path / "manifest.json"
    m = RunManifest(config={"kind": "lq", "rho": np.array([1.0, 2.0])}, seed=7,
                    certificate={"passed": True}, revision="abc")
    m.write(path)
    back = RunManifest.read(path)
    assert back.seed == 7 and back.config["rho"] == [1.0, 2.0]
    assert back.certificate == {"passed": True}
