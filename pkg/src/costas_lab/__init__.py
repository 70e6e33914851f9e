"""costas-lab: carrier-recovery loop models, design, and simulation."""

from .core import (
    CONVENTIONAL_BPSK,
    CONVENTIONAL_QPSK,
    MODIFIED_BPSK,
    MODIFIED_QPSK,
    LoopParams,
    LoopVariant,
    PdFlavor,
    PhaseState,
    SimResult,
    VariantTag,
    pd_period,
    validate_params,
    wrap_phase,
)
from .analysis import (
    DesignSpec,
    PredictionReport,
    design,
    hold_in_leadlag,
    hold_in_pi,
    lock_in_range,
    lock_time,
    predict,
    pull_in_range,
    pull_in_range_numeric,
    pull_in_time,
    pull_in_time_formula,
)
from .detectors import (
    PdCharacteristic,
    pd_conventional_bpsk,
    pd_conventional_qpsk,
    pd_modified_bpsk,
    pd_modified_qpsk,
    pd_modified_imag,
    phi_bpsk,
    phi_qpsk,
)
from .filters import (
    DiscreteFilter,
    RationalTF,
    StateSpaceFilter,
    bilinear,
    freq_response,
    make_leadlag,
    make_lpf1,
    make_pi_filter,
    routh_hurwitz_stable,
    step_filter,
)
from .baseband import (
    AveragedModel,
    ClassicPhaseModel,
    DelayModel,
    averaged_rhs,
    averaged_ud,
    classic_rhs,
    delay_rhs,
)

__version__ = "0.1.0"
