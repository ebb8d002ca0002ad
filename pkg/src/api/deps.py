from functools import lru_cache

from src.harness.runner import ExperimentRunner


@lru_cache()
def get_runner() -> ExperimentRunner:
    return ExperimentRunner()
