"""asrkit: accelerated share repurchase pricing on a pentanomial lattice."""

from .bounds import BoundsReport, LowerBoundCoeffs, check_surface, lower_coeffs, upper_bound
from .contract import (
    PENTANOMIAL,
    ContractSpec,
    ExecutionCostModel,
    MarketModel,
    PentanomialLaw,
    RiskPreference,
    TerminalPenalty,
)
from .impact import (
    IntradayNoise,
    PermanentImpactModel,
    backward_solve_permanent,
    permanent_dynamics_step,
    price_permanent,
    stage_value_permanent,
)
from .lattice import QGrid, child, level_size, total_nodes, z_of, zeta_of, zeta_range
from .sim import (
    ExecutionRecord,
    PricePath,
    batch_playback,
    gen_path,
    lemma_y_check,
    path_from_prices,
    playback,
    playback_permanent,
    run_fixed_strategy,
)
from .solver import (
    Policy,
    PriceResult,
    SolveConfig,
    ValueSurface,
    apply_stopping,
    backward_solve,
    certainty_equivalent,
    price,
    recover_u,
    stage_value,
    surface_to_csv,
    terminal_layer,
    theta_continuous,
)
from .sweep import SweepResult, SweepSpec, buyonly_compare, run_sweep

__version__ = "0.1.0"
