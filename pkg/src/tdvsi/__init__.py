"""Three-phase Thevenin-equivalent estimation and voltage-stability indices
for combined transmission/distribution systems."""

from .errors import (
    BaseCaseDiverged,
    DeadChannel,
    EmptyInput,
    IllConditioned,
    NonPositiveFactor,
    NotBalanced,
    NotConverged,
    ParseError,
    TdvsiError,
    UnknownBus,
    ValidationError,
    WindowTooSmall,
    ZeroLoadImpedance,
    ZeroLoadPower,
)
from .phasors import (
    BalancedSpec,
    ImpedanceMatrix3,
    Phasor3,
    balanced_current,
    balanced_matrix,
    positive_sequence,
    quadratic_form,
)
from .network import (
    Branch,
    Feeder,
    LoadSpec,
    NetworkModel,
    Shunt,
    load_network,
    save_network,
    scale_feeder,
    scale_loading,
)
from .powerflow import (
    NoseResult,
    SolveResult,
    SolverOptions,
    add_line,
    apply_var_support,
    cosim_solve,
    find_lambda_max,
    monolithic_solve,
    power_balance,
    solve_feeder,
    solve_transmission,
)
from .measurement import (
    Channel,
    MeasurementFrame,
    MeasurementWindow,
    add_noise,
    read_frames,
    sample_trajectory,
    windows_by_substation,
    write_frames,
)
from .estimator import (
    EstimatorConfig,
    TheveninEquivalent,
    build_delta_system,
    estimate,
    load_impedance,
    recover_e_eq,
)
from .indices import (
    StabilityReport,
    build_report,
    losses_3ph,
    tddi,
    vsi_1ph,
    vsi_3ph,
    vsi_t_crit_closed_form,
)

__version__ = "0.1.0"
