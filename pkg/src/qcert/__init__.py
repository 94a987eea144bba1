"""Randomness certification for overlap-bounded time-bin QRNGs."""

__version__ = "0.1.0"

from .combinatorics import (  # noqa: F401
    ClickPattern,
    Codeword,
    ConfigurationSpec,
    GramMatrix,
    StateGroup,
    coincidence,
    constant_gram,
    construct_lower_bound_code,
    enumerate_states,
    gram_matrix,
    hamming_from_s,
    ideal_outcome_set,
    lower_bound_size,
    max_constant_s_group,
    outcome_count_closed_form,
    overlap_delta,
    subset_count,
)
