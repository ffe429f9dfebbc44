from .distributions import (
    clipped_histogram,
    coarsen_histogram,
    jsd,
    kld,
    spatial_histogram,
    wasserstein2,
)
from .entropy import (
    UserEntropies,
    location_entropies,
    lz_entropy,
    lz_match_lengths,
    mean_location_entropy,
    random_location_entropy,
    user_entropies,
    user_sequences,
)
from .geometry import (
    EARTH_RADIUS_KM,
    TrajectoryMeasures,
    azimuth_deg,
    haversine_km,
    jump_length,
    location_switches,
    radius_of_gyration,
    tortuosity,
    trajectory_measures,
)
from .flows import SSIM_SIGMAS, mean_ssim, od_matrix, ssim
