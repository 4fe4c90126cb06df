"""Collective correlation structure and diversification sampling for crypto price panels."""

__version__ = "0.1.0"
FORMAT_VERSION = "1"

from .config import AnalysisConfig, ConfigError, load_config
from .correlation import (
    CorrelationMatrix,
    StandardizedBlock,
    WindowSpec,
    correlation_matrix,
    rolling_correlations,
    standardize_window,
)
from .ingest import (
    DecileMap,
    IngestError,
    PricePanel,
    PriceRecord,
    RecordSet,
    ReturnsMatrix,
    align_panel,
    assign_deciles,
    load_deciles,
    load_prices,
    log_returns,
)
from .spectra import (
    SpectralSummary,
    normalized_leading_eigenvalue,
    rolling_spectra,
    symmetric_eigen,
    uniformity,
)
from .sampling import (
    GreedyPath,
    MedianTrajectory,
    MuTable,
    PortfolioSpec,
    draw_portfolio,
    greedy_path,
    median_trajectory,
    mu,
    mu_table,
    run_grid,
)
from .cluster import (
    Dendrogram,
    DistanceMatrix,
    average_linkage,
    cut_clusters,
    distance_matrix,
    to_newick,
    trajectory_distance,
)
