"""Distribution-grid voltage estimation from sparse sensor data.

Completes a structured measurement matrix under a low-rank prior with
network-physics side constraints, alongside conventional power-flow and
weighted-least-squares baselines for the same feeder models.
"""

__version__ = "0.1.0"

from .network import (  # noqa: F401
    AdmittanceBlocks, Branch, Bus, BusCategory, CaseError, Network,
    build_admittance, parse_case, parse_matpower, serialize_case,
)
from .powerflow import (  # noqa: F401
    PowerFlowError, PowerFlowSolution, branch_currents, slack_injection,
    solve_power_flow,
)
from .linear import (  # noqa: F401
    LinearModel, build_linear_model, predict_voltages, zero_load_voltage,
)
from .dmatrix import (  # noqa: F401
    AugmentedObservability, DataDriven, DataMatrix, FixedPlacement,
    Formulation, MatrixLayout, NoiseClass, ObservedMatrix, Quantity,
    QuantityKind, RandomSampling, apply_observation_model,
    build_branch_matrix, build_bus_matrix, duplication_pairs,
    observe_quantities, potentially_known_quantities, remove_quantities,
    singular_value_profile,
)
from .mc import (  # noqa: F401
    CompletedMatrix, ConstraintSet, PlainObservation, SolverConfig,
    VoltageEstimate, assemble_constraints, extract_state, nuclear_norm,
    observation_from_matrix, solve_mc, svt,
)
from .wls import (  # noqa: F401
    EstimationError, Measurement, MeasurementKind, MeasurementSet,
    UnobservableError, check_observability, measurements_from_observation,
    wls_estimate,
)
from .cases import load_case  # noqa: F401
from .bench import (  # noqa: F401
    FeederContext, bench_solver_config, estimate_once, run_scenario,
)
