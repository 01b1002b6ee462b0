import argparse
import asyncio
import logging
import sys
from typing import Optional

from config import config
from handlers import MODE_HANDLERS
from handlers.base import Handler
from middlewares.regime import check_regime
from services.report_service import report_service
from states.run_states import ConfigError, RunConfig, RunMode, RunReport

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_USAGE = 2

MODE_HELP = {
    RunMode.GROUND_STATE: "least-energy solution over seeded restarts",
    RunMode.DOMAIN_APPROX: "solutions on growing balls B_k",
    RunMode.LAMBDA_SWEEP: "continuation or scan over a lambda schedule",
    RunMode.MU_SWEEP: "concentration in the well as mu grows",
    RunMode.NONEXISTENCE: "random starts above the lambda threshold",
}


async def run_mode(handler: Handler, cfg: RunConfig) -> RunReport:
    """Предупреждения о режиме, обработчик; сбой обработчика - в частичный отчёт"""
    report = RunReport.for_config(cfg)
    check_regime(cfg, report)
    try:
        return await handler(cfg, report)
    except Exception as e:
        logger.error(f"Обработчик {cfg.mode.value} упал: {e}", exc_info=True)
        report.add_failure(cfg.mode.value, e)
        return report


async def run(cfg: RunConfig, handler: Optional[Handler] = None) -> RunReport:
    """Запуск режима и запись report.json, timings.json, sweep.csv"""
    report = await run_mode(handler or MODE_HANDLERS[cfg.mode], cfg)
    await report_service.write_report(report, cfg.output_dir)
    return report


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sp-well", description="Schrödinger-Poisson steep-well solver")
    sub = parser.add_subparsers(dest="command", required=True)

    # solve запускает режим, названный в конфиге
    solve_cmd = sub.add_parser("solve", help="run the mode named in a JSON run config")
    solve_cmd.add_argument("--config", required=True, help="path to run.json")
    solve_cmd.set_defaults(mode=None, handler=None)
    commands = [solve_cmd]

    for mode, help_text in MODE_HELP.items():
        cmd = sub.add_parser(mode.value, help=help_text)
        cmd.add_argument("--config", required=True, help="path to run.json; its mode field is ignored")
        cmd.set_defaults(mode=mode, handler=MODE_HANDLERS[mode])
        commands.append(cmd)

    verify_cmd = sub.add_parser("verify", help="constants and oracle suite, no PDE solves")
    verify_cmd.add_argument("--config", help="optional run.json supplying (p, lambda, mu)")
    verify_cmd.set_defaults(mode=RunMode.VERIFY, handler=MODE_HANDLERS[RunMode.VERIFY])
    commands.append(verify_cmd)

    for cmd in commands:
        cmd.add_argument("--seed", type=int, help="override the config seed")
        cmd.add_argument("--out", help="output directory")
    return parser


def load_config(args: argparse.Namespace) -> RunConfig:
    data = RunConfig.read(args.config) if args.config else {}
    if args.mode is not None and isinstance(data, dict):
        data = {**data, "mode": args.mode.value}
    cfg = RunConfig.from_dict(data)
    return cfg.with_overrides(seed=args.seed, output_dir=args.out)

async def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)

    invalid = config.get_invalid_keys()
    if invalid:
        logger.warning(f"Некорректные настройки: {', '.join(invalid)}")

    try:
        cfg = load_config(args)
    except ConfigError as e:
        logger.error(f"Ошибка конфига ({e.path}): {e}")
        return EXIT_USAGE

    report = await run(cfg, args.handler)
    if report.passed:
        logger.info(f"Готово: все обязательные проверки пройдены ({cfg.output_dir})")
        return EXIT_OK
    if report.failures:
        logger.error(f"Сбои: {[f['stage'] for f in report.failures]}")
    if report.hard_failures:
        logger.error(f"Не пройдены проверки: {', '.join(report.hard_failures)}")
    return EXIT_FAILED


if __name__ == "__main__":
    logging.basicConfig(
        level=getattr(logging, config.LOG_LEVEL.upper(), logging.INFO),
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s"
    )
    sys.exit(asyncio.run(main()))
