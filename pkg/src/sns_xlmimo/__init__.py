"""Visibility-region detection and channel estimation for spatially
non-stationary XL-MIMO.

The package splits into a numerical library (channel synthesis, pilot
observation, turbo visibility detection, belief-weighted sparse estimation,
brute-force oracles, metrics) and a reproducible Monte Carlo experiment layer
with a CLI front end.
"""

__version__ = "0.1.0"

from .channel import (  # noqa: F401
    ArrayGeometry,
    ChannelRealization,
    UserLocation,
    VisibilityRegion,
    WavenumberCodebook,
    apply_vr,
    build_codebook,
    effective_bandwidth,
    near_field_response,
    realize_channel,
    sample_vr,
    sns_codebook,
    synthesize_stationary,
    wavenumber_transform,
)
from .observation import (  # noqa: F401
    CombinerMatrix,
    PilotObservation,
    build_combiner,
    observe,
    snr_to_noise,
)
from .vrdomp import (  # noqa: F401
    DetectorConfig,
    Hyperparams,
    TurboState,
    VrBelief,
    VrdompResult,
    run_vrdomp,
)
from .bbomp import (  # noqa: F401
    SensingMatrix,
    SparseEstimate,
    bb_omp,
    belief_omp_estimate,
    build_sensing,
    ls_estimate,
    reconstruct,
    rfeb_detect,
)
from .metrics import TrialRecord, nmse, se, vrer  # noqa: F401
