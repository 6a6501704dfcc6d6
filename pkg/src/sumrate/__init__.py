"""Sum-rate optimal resource allocation for restricted FDMA, TDMA and multi-code CDMA."""

from .model import (CorrelationPair, InvalidInstanceError, SystemConstants, UserOrder,
                    UserProfile, canonicalize, order_users)
from .fdma import (AllocationResult, Classification, KktCertificate, Label,
                   allocate_closed_form, allocate_iterative, classify, extend_zero_power,
                   fdma_sum_rate, mac_sum_capacity, oracle_solve, solve_tdma, verify_kkt)
from .cdma import (CdmaInstance, CdmaSolution, StreamCounts, achieves_mac_capacity,
                   async_sum_rate, choose_stream_split, classify_multicode,
                   minimal_upper_limit_profile, solve_cdma, stream_count_extremes)
from .sequences import (build_virtual_users, construct_sequences, logdet_sum_rate,
                        optimal_system, verify_gram)
from .analysis import (FadingStudyConfig, rayleigh_fading_study, single_user_efficiency,
                       symmetric_efficiency, symmetric_sum_rate_check)

__all__ = [name for name in dir() if not name.startswith("_")]
