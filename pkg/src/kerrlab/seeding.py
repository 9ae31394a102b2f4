"""Deterministic seed derivation for parallel, order-independent ensembles.

Every random stream in a sweep is keyed by a stateless mix of
(master_seed, point_index, trajectory_index, stream_tag), so any single
trajectory can be recomputed in isolation and results never depend on
scheduling order.  The mixer chains the splitmix64 finalizer, which has
full avalanche on 64-bit words.
"""

from __future__ import annotations

__all__ = ["derive_seed", "STREAM_TAGS"]

_MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15

# distinct sub-streams drawn at one (point, trajectory)
STREAM_TAGS = {
    "eta": 0x45544121,      # jump thresholds
    "psi_r": 0x50534952,    # auxiliary-state perturbation vectors
    "init": 0x494E4954,     # initial-condition perturbations
    "point": 0x504F494E,    # per-grid-point master streams
}


def _splitmix64(z: int) -> int:
    z = (z + _GOLDEN) & _MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def derive_seed(master_seed: int, point_index: int, trajectory_index: int,
                stream_tag: str | int) -> int:
    """Stateless 64-bit seed for one stream of one trajectory of one point."""
    if isinstance(stream_tag, str):
        try:
            tag = STREAM_TAGS[stream_tag]
        except KeyError:
            raise ValueError(
                f"unknown stream tag {stream_tag!r}; known: {sorted(STREAM_TAGS)}"
            ) from None
    else:
        tag = int(stream_tag)
    s = _splitmix64(master_seed & _MASK)
    for word in (point_index, trajectory_index, tag):
        s = _splitmix64(s ^ (word & _MASK))
    return s
