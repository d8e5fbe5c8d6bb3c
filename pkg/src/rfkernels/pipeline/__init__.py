"""Data ingestion, preprocessing and experiment orchestration."""
from .config import ConfigError, load_config
from .experiments import (
    RUNNERS, forest_variant, run_gvi_benchmark, run_kpca_experiment, split_train_test,
)
from .synthetic import make_circles, make_linear_sine, make_moons
from .tables import (
    CsvFormatError, PreprocessState, RawTable, TableSpec, fit_preprocess, load_csv,
    preprocess_fit_transform, table_from_arrays,
)

__all__ = [
    "ConfigError", "load_config", "RUNNERS", "forest_variant", "run_gvi_benchmark",
    "run_kpca_experiment", "split_train_test", "make_circles", "make_linear_sine", "make_moons",
    "CsvFormatError", "PreprocessState", "RawTable", "TableSpec", "fit_preprocess", "load_csv",
    "preprocess_fit_transform", "table_from_arrays",
]
