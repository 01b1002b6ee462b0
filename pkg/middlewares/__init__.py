from .regime import check_regime, regime_warnings

__all__ = ["check_regime", "regime_warnings"]
