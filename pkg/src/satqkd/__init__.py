"""satqkd: simulator and key-rate engine for a satellite-to-ground
decoy-state BB84 link with phase-encoded double pulses."""

__version__ = "0.1.0"

from .link import (  # noqa: F401
    LinkBudget,
    LossProfile,
    PassGeometry,
    diffraction_loss_db,
    pass_profile,
    slant_range,
)
from .postprocessing import (  # noqa: F401
    BoundInvalid,
    ClassicalBudget,
    DecoyBounds,
    GainStats,
    KeyRateResult,
    MissingIntensityClass,
    SiftedBlock,
    UnmatchedSlot,
    binary_entropy,
    classical_budget,
    decoy_bounds,
    estimate_gains,
    expected_gains,
    secret_key_rate,
    sift,
)
from .protocol import (  # noqa: F401
    Basis,
    DoublePulse,
    Intensity,
    ProtocolParams,
    PulseTrain,
    RandomnessBudget,
    SymbolRecord,
    build_frame,
    effective_symbol_rate,
    encode_symbol,
    generate_train,
    randomness_budget,
)
from .receiver import (  # noqa: F401
    ClickRecord,
    ClickSet,
    DetectorConfig,
    Detector,
    DliConfig,
    ReceiverConfig,
    TimeBin,
    analytic_rates,
    bin_means,
    click_probability,
    simulate_detection,
)
from .scenario import (  # noqa: F401
    ParseError,
    Scenario,
    ValidationError,
    default_scenario_path,
    load_scenario,
)
from .sync import (  # noqa: F401
    ClockModel,
    SyncEstimate,
    SyncFailed,
    recover_clock,
)
from .harness import RunSummary, run, write_outputs  # noqa: F401
