"""Per-day choice between deterministic and stochastic hydropower bidding."""

from .dataset import DailyRecord, LabeledDay, SplitPlan, label_day, load_records, split
from .errors import (
    BidSelectError,
    ColumnMismatchError,
    NoCrossingError,
    TrainingDivergedError,
    ValidationError,
)
from .policy import Decision, DecisionPolicy, accuracy, realistic_gap

__all__ = [
    "BidSelectError",
    "ColumnMismatchError",
    "DailyRecord",
    "Decision",
    "DecisionPolicy",
    "LabeledDay",
    "NoCrossingError",
    "SplitPlan",
    "TrainingDivergedError",
    "ValidationError",
    "accuracy",
    "label_day",
    "load_records",
    "realistic_gap",
    "split",
]
__version__ = "0.1.0"
