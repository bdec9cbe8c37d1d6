"""Linear attention with a non-causal prefix region, plus the set-disjointness
synthetic task, its streaming and kernelized solvers, and a small training and
benchmarking toolkit built on a tape-based autodiff core.
"""

from prefixla.featmaps import (
    Taylor2Map,
    DataDependentMap,
    RandomizedMap,
    ExponentialMap,
    measure_epsilon,
)
from prefixla.linatt import (
    LAState,
    FlopParams,
    la_parallel,
    la_prefill,
    la_decode_step,
    flops_causal_la,
)
from prefixla.pla import (
    PLAConfig,
    PLAInputs,
    pla_parallel,
    pla_init_state,
    two_pass_prefill,
    prepare_prompt,
    iterative_decode,
    flops_pla,
)
from prefixla.prompts import PromptPair, jrt_transform, jrp_repeat

__all__ = [
    "Taylor2Map",
    "DataDependentMap",
    "RandomizedMap",
    "ExponentialMap",
    "measure_epsilon",
    "LAState",
    "FlopParams",
    "la_parallel",
    "la_prefill",
    "la_decode_step",
    "flops_causal_la",
    "PLAConfig",
    "PLAInputs",
    "pla_parallel",
    "pla_init_state",
    "two_pass_prefill",
    "prepare_prompt",
    "iterative_decode",
    "flops_pla",
    "PromptPair",
    "jrt_transform",
    "jrp_repeat",
]
