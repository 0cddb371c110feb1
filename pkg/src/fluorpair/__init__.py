"""Stochastic quantum trajectories of two remote qubits whose mixed spontaneous
emission is continuously monitored (photodetection, homodyne, heterodyne, mixed
and inefficient variants), with the entanglement analytics that go with them."""

__version__ = "0.1.0"

from .states import (  # noqa: F401
    BellAmplitudes,
    BlochVector15,
    PureState,
    TwoQubitState,
    bell_from_computational,
    bloch_from_density,
    density_from_bloch,
    density_from_pure,
    purity,
    pure_state_from_label,
)
from .entanglement import (  # noqa: F401
    concurrence_bell,
    concurrence_mixed,
    concurrence_pure,
    disentangling_local_unitary,
)
from .kraus import (  # noqa: F401
    KrausSet,
    MeasurementSettings,
    heterodyne_op,
    homodyne_op,
    inefficient_homodyne_ops,
    inefficient_photodetection_ops,
    mixed_het_pd_ops,
    photodetection_ops,
    povm_check,
)
from .trajectory import (  # noqa: F401
    EnsembleSummary,
    TrajectoryConfig,
    TrajectoryRecord,
    run_ensemble,
    run_trajectory,
)
