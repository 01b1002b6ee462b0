import csv
import io
import json
import logging
import os
from typing import TYPE_CHECKING

import aiofiles

from services.discretization import Field, dump_field, load_field

if TYPE_CHECKING:
    from states.run_states import RunReport

logger = logging.getLogger(__name__)

SWEEP_COLUMNS = [
    "mode", "p", "lambda", "mu", "k", "energy", "norm", "sup_norm",
    "decay_slope", "g_mass", "mu_g_mass", "mass_outside", "checks_passed", "checks_failed",
]


class ReportError(ValueError):
    """Несовместимые отчёты"""


def sweep_table(reports: list["RunReport"]) -> str:
    """CSV: одна строка на решение; отчёты должны быть одного режима"""
    modes = {r.mode for r in reports}
    if len(modes) > 1:
        raise ReportError(f"cannot tabulate mixed modes: {sorted(modes)}")
    buffer = io.StringIO()
    writer = csv.DictWriter(buffer, fieldnames=SWEEP_COLUMNS, extrasaction="ignore", lineterminator="\n")
    writer.writeheader()
    for report in reports:
        for row in report.rows:
            writer.writerow({"mode": report.mode, **row})
    return buffer.getvalue()


def render_json(data: dict) -> str:
    return json.dumps(data, ensure_ascii=False, indent=2, sort_keys=True)


class ReportService:
    async def _write_text(self, path: str, text: str):
        async with aiofiles.open(path, "w", encoding="utf-8") as f:
            await f.write(text)

    async def write_report(self, report: "RunReport", out_dir: str) -> str:
        """report.json без таймингов, timings.json отдельно, sweep.csv если есть строки"""
        os.makedirs(out_dir, exist_ok=True)
        path = os.path.join(out_dir, "report.json")
        await self._write_text(path, render_json(report.to_dict()))
        await self._write_text(os.path.join(out_dir, "timings.json"), render_json(report.timings))
        if report.rows:
            await self._write_text(os.path.join(out_dir, "sweep.csv"), sweep_table([report]))
        logger.info(f"Report written: {path}")
        return path

    async def write_field(self, u: Field, out_dir: str, name: str) -> str:
        fields_dir = os.path.join(out_dir, "fields")
        os.makedirs(fields_dir, exist_ok=True)
        data, sidecar = dump_field(u)
        bin_path = os.path.join(fields_dir, f"{name}.bin")
        async with aiofiles.open(bin_path, "wb") as f:
            await f.write(data)
        await self._write_text(os.path.join(fields_dir, f"{name}.json"), render_json(sidecar))
        return bin_path

    async def read_field(self, bin_path: str) -> Field:
        """Читает дамп и JSON-описание рядом с ним (<name>.bin + <name>.json)"""
        sidecar_path = os.path.splitext(bin_path)[0] + ".json"
        async with aiofiles.open(bin_path, "rb") as f:
            data = await f.read()
        async with aiofiles.open(sidecar_path, "r", encoding="utf-8") as f:
            sidecar = json.loads(await f.read())
        return load_field(data, sidecar)


report_service = ReportService()
