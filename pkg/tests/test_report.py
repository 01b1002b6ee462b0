import asyncio
import json

import numpy as np
import pytest

from services.discretization import Field, Grid
from services.report_service import SWEEP_COLUMNS, ReportError, render_json, report_service, sweep_table
from states.run_states import RunConfig, RunReport


def _report(mode: str = "verify", rows=()) -> RunReport:
    report = RunReport.for_config(RunConfig.from_dict({"mode": "verify"}))
    report.mode = mode
    report.rows.extend(rows)
    return report


def test_sweep_table_header_only():
    assert sweep_table([]) == ",".join(SWEEP_COLUMNS) + "\n"


def test_sweep_table_rows_and_missing_columns():
    rows = [{"p": 3.0, "lambda": 1.0, "mu": 50.0, "energy": 0.5, "unused": 1}]
    lines = sweep_table([_report("solve", rows)]).splitlines()
    assert len(lines) == 2
    values = dict(zip(SWEEP_COLUMNS, lines[1].split(",")))
    assert values["mode"] == "solve"
    assert values["energy"] == "0.5"
    assert values["decay_slope"] == ""


def test_sweep_table_rejects_mixed_modes():
    with pytest.raises(ReportError):
        sweep_table([_report("solve"), _report("mu-sweep")])


def test_render_json_is_sorted_and_unicode():
    text = render_json({"b": 1, "a": "Ω₀"})
    assert text.index('"a"') < text.index('"b"')
    assert "Ω₀" in text


def test_write_report(tmp_path):
    report = _report("solve", [{"p": 3.0, "energy": 1.0}])
    report.timings["solve"] = 0.25
    asyncio.run(report_service.write_report(report, str(tmp_path / "out")))

    data = json.loads((tmp_path / "out" / "report.json").read_text(encoding="utf-8"))
    assert data["mode"] == "solve"
    assert "timings" not in data
    assert json.loads((tmp_path / "out" / "timings.json").read_text(encoding="utf-8")) == {"solve": 0.25}
    assert (tmp_path / "out" / "sweep.csv").read_text(encoding="utf-8").startswith("mode,p,lambda")


def test_write_report_without_rows(tmp_path):
    asyncio.run(report_service.write_report(_report(), str(tmp_path)))
    assert (tmp_path / "report.json").exists()
    assert not (tmp_path / "sweep.csv").exists()


def test_field_dump_and_read(tmp_path):
    grid = Grid("radial", 2.0, 101)
    u = Field(grid, np.random.default_rng(5).standard_normal(grid.shape))
    path = asyncio.run(report_service.write_field(u, str(tmp_path), "u"))
    assert path.endswith("fields/u.bin")
    assert json.loads((tmp_path / "fields" / "u.json").read_text(encoding="utf-8"))["n"] == 101
    restored = asyncio.run(report_service.read_field(path))
    assert restored.grid == grid
    assert np.array_equal(restored.values, u.values)
