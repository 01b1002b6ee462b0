import os
from dataclasses import dataclass
from dotenv import load_dotenv
load_dotenv()


def _float(name: str, default: str) -> float:
    return float(os.getenv(name, default))


def _int(name: str, default: str) -> int:
    return int(os.getenv(name, default))


@dataclass
class Config:
    # Общие
    LOG_LEVEL: str = os.getenv("SP_LOG_LEVEL", "INFO")
    OUTPUT_DIR: str = os.getenv("SP_OUTPUT_DIR", "runs")
    SWEEP_WORKERS: int = _int("SP_SWEEP_WORKERS", "4")

    # Пуассон
    POISSON_RTOL: float = _float("SP_POISSON_RTOL", "1e-10")
    POISSON_MAXITER: int = _int("SP_POISSON_MAXITER", "5000")

    # Ньютон / градиентный поток
    NEWTON_TOL: float = _float("SP_NEWTON_TOL", "1e-10")
    NEWTON_MAXITER: int = _int("SP_NEWTON_MAXITER", "30")
    NEWTON_BASIN: float = _float("SP_NEWTON_BASIN", "1e-3")
    FLOW_TOL: float = _float("SP_FLOW_TOL", "1e-8")
    FLOW_MAXITER: int = _int("SP_FLOW_MAXITER", "4000")
    REG_EPS: float = _float("SP_REG_EPS", "1e-8")
    ZERO_NORM: float = _float("SP_ZERO_NORM", "1e-6")

    # Горный перевал
    MP_SAMPLES: int = _int("SP_MP_SAMPLES", "33")
    MP_MAX_SWEEPS: int = _int("SP_MP_MAX_SWEEPS", "400")
    MP_LEVEL_TOL: float = _float("SP_MP_LEVEL_TOL", "1e-8")

    # Проверки оценок
    NEHARI_TOL: float = _float("SP_NEHARI_TOL", "1e-6")
    POINTWISE_TOL: float = _float("SP_POINTWISE_TOL", "1e-8")
    CLOSED_FORM_TOL: float = _float("SP_CLOSED_FORM_TOL", "1e-12")

    def validate(self) -> dict[str, bool]:
        """Проверка согласованности настроек"""
        return {
            "workers": self.SWEEP_WORKERS >= 1,
            "poisson": self.POISSON_RTOL > 0 and self.POISSON_MAXITER > 0,
            "newton": self.NEWTON_TOL > 0 and self.NEWTON_MAXITER >= 0 and self.NEWTON_BASIN > 0,
            "flow": self.FLOW_TOL > 0 and self.FLOW_MAXITER > 0,
            "mountain_pass": self.MP_SAMPLES >= 3 and self.MP_MAX_SWEEPS >= 0,
            "checks": min(self.NEHARI_TOL, self.POINTWISE_TOL, self.CLOSED_FORM_TOL) > 0,
        }

    def get_invalid_keys(self) -> list[str]:
        """Возвращает список некорректных групп настроек"""
        validation = self.validate()
        return [k for k, v in validation.items() if not v]

    def tolerances(self) -> dict[str, float]:
        """Допуски по умолчанию для RunConfig"""
        return {
            "poisson": self.POISSON_RTOL,
            "residual": self.NEWTON_TOL,
            "basin": self.NEWTON_BASIN,
            "flow": self.FLOW_TOL,
            "nehari": self.NEHARI_TOL,
            "pointwise": self.POINTWISE_TOL,
            "closed_form": self.CLOSED_FORM_TOL,
            "zero_norm": self.ZERO_NORM,
        }


config = Config()
