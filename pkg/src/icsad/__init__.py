"""Attack detection for industrial process logs with depthwise 1D CNN predictors."""

__version__ = "0.1.0"
