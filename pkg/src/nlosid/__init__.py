"""Around-the-corner person identification from single-photon time-of-flight data.

Subpackages cover the full pipeline: scene geometry and discretization
(:mod:`nlosid.scene`), transient simulation (:mod:`nlosid.transient`),
the on-disk histogram format (:mod:`nlosid.nlsh`), dataset assembly
(:mod:`nlosid.dataset`), the two-head classifier (:mod:`nlosid.ann`),
cross-validated evaluation (:mod:`nlosid.eval`), and the command line
(:mod:`nlosid.cli`).
"""

__version__ = "1.0.0"

SPEED_OF_LIGHT_M_PER_NS = 0.299792458
"""Propagation speed used for every time/distance conversion, in m/ns."""
