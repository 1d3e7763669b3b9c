"""Desk-scale lab for location-conditioned channel covariance estimation.

A synthetic multipath scene defines a deterministic position -> channel
map; small from-scratch networks learn position -> covariance and
channel -> position; a Gaussian fusion step denoises uploaded positions
across covariance blocks; and a water-filling/LMMSE pipeline measures the
downstream channel-estimation payoff against classical baselines.
"""

__version__ = "0.1.0"
