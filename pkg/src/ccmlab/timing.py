"""Frame timing: covariance blocks subdivided into channel-coherence slots.

One covariance block of length ``t_co`` starts with an overhead stage of
length ``t_o`` (location/speed upload plus covariance estimation) followed
by ``n_cct`` channel-coherence slots of length ``t_c`` each. The channel
used during slot q (1-based) is the one at elapsed time

    T_q = t_o + (q - 1) * t_c

after the block start.
"""

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class FrameTiming:
    t_o: float
    t_c: float
    n_cct: int
    t_co: float = field(default=None)

    def __post_init__(self):
        if self.t_co is None:
            object.__setattr__(self, "t_co", self.t_o + self.n_cct * self.t_c)
        if self.t_o <= 0 or self.t_c <= 0 or self.n_cct < 1 or self.t_co <= 0:
            raise ValueError("timing parameters must be positive")
        if self.t_o + self.n_cct * self.t_c > self.t_co * (1 + 1e-12):
            raise ValueError(
                "block too short: t_o + n_cct*t_c = %g exceeds t_co = %g"
                % (self.t_o + self.n_cct * self.t_c, self.t_co)
            )

    def slot_offsets(self):
        """Elapsed times T_q, q = 1..n_cct, from the block start (seconds)."""
        return self.t_o + np.arange(self.n_cct) * self.t_c

    @property
    def t_last(self):
        """Offset of the final slot, T_N."""
        return self.t_o + (self.n_cct - 1) * self.t_c


DEFAULT_TIMING = FrameTiming(t_o=0.005, t_c=0.005, n_cct=50)
