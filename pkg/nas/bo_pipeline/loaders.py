"""
Loaders for the resources a search run depends on: the search space, the
oracle and the optional set of cells the search is restricted to.
"""

import logging

import numpy as np

from nas.bo_pipeline.config import ConfigError, RunConfig
from nas.cost_model import load_profile
from nas.oracle import LookupOracle, Oracle, SubprocessOracle, SyntheticOracle
from nas.search_space import SearchSpace, SearchSpaceError, decode_arch, load_space

logger = logging.getLogger(__name__)


def load_run_space(config: RunConfig) -> SearchSpace:
    return load_space(config.resolve_data_path(config.space, ".json"))


def build_oracle(config: RunConfig, space: SearchSpace) -> Oracle:
    """Instantiate the oracle named by ``config.oracle``."""
    oracle_config = config.oracle
    if oracle_config.kind == "synthetic":
        profile = None
        if oracle_config.benchmark == "conflicting":
            profile = load_profile(config.resolve_data_path(oracle_config.profile, ".csv"))
        planted = decode_arch(oracle_config.planted, space) if oracle_config.planted else None
        return SyntheticOracle(
            oracle_config.benchmark, space, config.oracle_seed, profile=profile, planted=planted
        )
    if oracle_config.kind == "lookup":
        return LookupOracle.from_file(config.resolve_data_path(oracle_config.table, ".csv"))
    if oracle_config.kind == "subprocess":
        if not oracle_config.command:
            raise ConfigError("oracle.command", "is required for the subprocess oracle")
        return SubprocessOracle(oracle_config.command, oracle_config.timeout_s)
    raise ConfigError("oracle.kind", f"unsupported oracle {oracle_config.kind!r}")


def allowed_cells(
    config: RunConfig, space: SearchSpace, oracle: Oracle | None = None
) -> np.ndarray | None:
    """Sorted (k, 6) index array of the cells a run may visit, or None for all.

    A lookup oracle without an explicit ``restrict_to`` limits the run to the
    table's architectures; every other cell would be a miss.
    """
    archs = list(config.restrict_to)
    if not archs and isinstance(oracle, LookupOracle):
        for arch in oracle.archs():
            try:
                decode_arch(arch, space)
            except SearchSpaceError:
                logger.warning("Lookup architecture %s is outside space %s", arch, space.name)
                continue
            archs.append(arch)
        logger.warning(
            "Lookup oracle without restrict_to: limiting the search to its %d architectures",
            len(archs),
        )
    if not archs:
        return None
    cells = sorted({decode_arch(arch, space).indices for arch in archs})
    return np.array(cells, dtype=np.int64)
