import asyncio
import json

import pytest

from handlers import MODE_HANDLERS
from handlers.base import trend_check
from main import EXIT_OK, EXIT_USAGE, build_parser, load_config, main, run_mode
from middlewares.regime import check_regime, regime_warnings
from states.run_states import RunConfig, RunMode, RunReport

SOLVE = {
    "mode": "solve",
    "params": {"p": 3.0, "lambda": 1.0, "mu": 50.0},
    "grid": {"kind": "radial", "k": 4.0, "n": 401},
}


def _cfg(**changes) -> RunConfig:
    return RunConfig.from_dict({**SOLVE, **changes})


def test_parser_requires_command():
    with pytest.raises(SystemExit):
        build_parser().parse_args([])
    with pytest.raises(SystemExit):
        build_parser().parse_args(["solve"])
    args = build_parser().parse_args(["verify", "--seed", "3", "--out", "x"])
    assert (args.command, args.seed, args.out, args.config) == ("verify", 3, "x", None)
    assert args.handler is MODE_HANDLERS[RunMode.VERIFY]


def test_bad_config_exits_with_usage(tmp_path):
    path = tmp_path / "run.json"
    path.write_text(json.dumps({**SOLVE, "mode": "nope"}), encoding="utf-8")
    assert asyncio.run(main(["solve", "--config", str(path), "--out", str(tmp_path / "out")])) == EXIT_USAGE
    assert asyncio.run(main(["solve", "--config", str(tmp_path / "missing.json")])) == EXIT_USAGE
    assert not (tmp_path / "out").exists()


def test_every_mode_has_a_handler_and_command():
    assert set(MODE_HANDLERS) == set(RunMode)
    parser = build_parser()
    for mode in RunMode:
        argv = [mode.value] if mode == RunMode.VERIFY else [mode.value, "--config", "run.json"]
        args = parser.parse_args(argv)
        if mode == RunMode.SOLVE:
            assert args.mode is None and args.handler is None
        else:
            assert args.mode == mode and args.handler is MODE_HANDLERS[mode]


def test_mode_command_overrides_config_mode(tmp_path):
    path = tmp_path / "run.json"
    path.write_text(json.dumps({**SOLVE, "schedule": [20.0, 40.0]}), encoding="utf-8")
    args = build_parser().parse_args(["mu-sweep", "--config", str(path), "--seed", "9"])
    cfg = load_config(args)
    assert cfg.mode == RunMode.MU_SWEEP
    assert cfg.seed == 9
    solve_args = build_parser().parse_args(["solve", "--config", str(path)])
    assert load_config(solve_args).mode == RunMode.SOLVE


def test_verify_command_ignores_config_mode(tmp_path):
    path = tmp_path / "run.json"
    path.write_text(json.dumps({**SOLVE, "params": {"p": 1.5, "lambda": 0.02, "mu": 10.0}}), encoding="utf-8")
    cfg = load_config(build_parser().parse_args(["verify", "--config", str(path)]))
    assert cfg.mode == RunMode.VERIFY
    assert cfg.params.lam == 0.02


def test_handler_crash_becomes_failure():
    async def crash(cfg, report):
        report.extras["reached"] = True
        raise FloatingPointError("overflow in flow")

    report = asyncio.run(run_mode(crash, _cfg(params={"p": 2.5, "lambda": 1.0, "mu": 50.0})))
    assert isinstance(report, RunReport)
    assert report.extras == {"reached": True}
    assert report.failures[0]["type"] == "FloatingPointError"
    assert any("[2, 3)" in w for w in report.warnings)
    assert not report.passed


def test_check_regime_writes_warnings_before_handler():
    cfg = _cfg(params={"p": 1.5, "lambda": 0.05, "mu": 50.0})
    report = RunReport.for_config(cfg)
    warnings = check_regime(cfg, report)
    assert warnings and report.warnings == warnings
    assert check_regime(_cfg(), RunReport.for_config(_cfg())) == []


def test_regime_warnings():
    assert regime_warnings(_cfg()) == []
    assert regime_warnings(_cfg(params={"p": 1.5, "lambda": 0.0, "mu": 50.0}))
    assert any("c(p)" in w for w in regime_warnings(_cfg(params={"p": 1.5, "lambda": 0.05, "mu": 50.0})))
    sweep = _cfg(mode="lambda-sweep", params={"p": 1.5, "lambda": 0.001, "mu": 50.0}, schedule=[0.001, 0.05])
    assert any("c(p)" in w for w in regime_warnings(sweep))
    assert regime_warnings(RunConfig.from_dict({"mode": "verify", "params": {"p": 2.5, "lambda": 1.0, "mu": 1.0}})) == []


def test_trend_check_is_soft():
    assert trend_check("up", [1.0, 2.0, 3.0], increasing=True, tol=0.0).passed
    down = trend_check("up", [1.0, 0.5], increasing=True, tol=0.1)
    assert not down.passed and not down.hard
    assert trend_check("down", [3.0, 2.0], increasing=False, tol=0.0).passed
    assert trend_check("single", [1.0], increasing=True, tol=0.0).passed


@pytest.mark.slow
def test_verify_passes_and_is_deterministic(tmp_path):
    first, second = tmp_path / "a", tmp_path / "b"
    assert asyncio.run(main(["verify", "--seed", "5", "--out", str(first)])) == EXIT_OK
    assert asyncio.run(main(["verify", "--seed", "5", "--out", str(second)])) == EXIT_OK
    a = (first / "report.json").read_bytes()
    assert a == (second / "report.json").read_bytes()

    report = json.loads(a)
    assert report["summary"]["passed"]
    names = {c["name"] for c in report["checks"]}
    assert {"C_forms_agreement_50x50", "uniform_ball_phi0", "s0_grid_convergence"} <= names
    assert report["constants"]["c_p"] == pytest.approx(0.25)


@pytest.mark.slow
def test_solve_writes_outputs_and_restarts_from_dump(tmp_path):
    config_path = tmp_path / "run.json"
    config_path.write_text(json.dumps({**SOLVE, "flow_oracle": False}), encoding="utf-8")
    out = tmp_path / "first"
    asyncio.run(main(["solve", "--config", str(config_path), "--out", str(out)]))

    report = json.loads((out / "report.json").read_text(encoding="utf-8"))
    assert report["failures"] == []
    assert len(report["solutions"]) == 1
    residual = next(c for c in report["checks"] if c["name"] == "relative_residual")
    assert residual["passed"]
    assert (out / "sweep.csv").exists()
    assert (out / "timings.json").exists()
    assert report["extras"]["fields"] == ["fields/u.bin", "fields/phi.bin"]

    seeded_path = tmp_path / "seeded.json"
    seeded_path.write_text(json.dumps({
        **SOLVE, "flow_oracle": False, "seed_field": str(out / "fields" / "u.bin"),
    }), encoding="utf-8")
    asyncio.run(main(["solve", "--config", str(seeded_path), "--out", str(tmp_path / "second")]))
    seeded = json.loads((tmp_path / "second" / "report.json").read_text(encoding="utf-8"))
    assert seeded["solutions"][0]["provenance"] == "seed-field"
    assert seeded["solutions"][0]["energy"]["total"] == pytest.approx(
        report["solutions"][0]["energy"]["total"], rel=1e-9)
