"""Risk-aware stock ranking with split variational adversarial training."""

from .backtest import BacktestReport, Strategy, evaluate, run_backtest
from .diffcore import ParameterStore, Tape, Tensor, backward
from .market import SplitSpec, StockPanel, ingest_csv, synth_market
from .risk import EntropyConfig, quantify
from .trainer import Checkpoint, SvatModel, TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "BacktestReport", "Checkpoint", "EntropyConfig", "ParameterStore", "SplitSpec", "StockPanel",
    "Strategy", "SvatModel", "Tape", "Tensor", "TrainConfig", "backward", "evaluate", "ingest_csv",
    "quantify", "run_backtest", "synth_market", "train",
]
