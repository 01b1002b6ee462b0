import logging

from services.bounds_service import c_of_p
from states.run_states import RunConfig, RunMode, RunReport

logger = logging.getLogger(__name__)

EXISTENCE_MODES = (RunMode.SOLVE, RunMode.GROUND_STATE, RunMode.DOMAIN_APPROX, RunMode.LAMBDA_SWEEP, RunMode.MU_SWEEP)


def regime_warnings(cfg: RunConfig) -> list[str]:
    """Параметры вне условий теорем существования: предупреждение, не ошибка"""
    if cfg.mode not in EXISTENCE_MODES:
        return []
    p, lam = cfg.params.p, cfg.params.lam
    lams = cfg.schedule if cfg.mode == RunMode.LAMBDA_SWEEP else (lam,)
    warnings = []
    if 2.0 <= p < 3.0:
        warnings.append(f"p = {p:g} lies in [2, 3): no existence theorem covers this range")
    elif p < 2.0:
        threshold = c_of_p(p)
        if any(l <= 0 for l in lams):
            warnings.append("subquadratic existence needs lambda > 0")
        if any(l >= threshold for l in lams):
            warnings.append(f"lambda >= c(p) = {threshold:.6g}: no nontrivial solution is expected")
    if cfg.mode == RunMode.GROUND_STATE and p >= 2.0:
        warnings.append("ground-state search is defined for p in (1, 2)")
    return warnings


def check_regime(cfg: RunConfig, report: RunReport) -> list[str]:
    """Записывает предупреждения о режиме в отчёт перед запуском обработчика"""
    warnings = regime_warnings(cfg)
    for message in warnings:
        logger.warning(message)
        report.warnings.append(message)
    logger.info(f"Режим {cfg.mode.value}: {cfg.params.to_dict()}")
    return warnings
