from .grid import GridSystem, encode_point, encode_points
from .trajectory import DailyTrajectory, TrajectoryRecord, interpolate_missing, user_centroid
from .mobility import MobilityMatrix, aggregate_trajectories, aggregate_user
from .io import (
    DATASET_COLUMNS,
    frame_from_records,
    load_matrix,
    read_dataset,
    records_from_frame,
    save_matrix,
    write_dataset,
)

__all__ = [
    "GridSystem",
    "encode_point",
    "encode_points",
    "DailyTrajectory",
    "TrajectoryRecord",
    "interpolate_missing",
    "user_centroid",
    "MobilityMatrix",
    "aggregate_user",
    "aggregate_trajectories",
    "DATASET_COLUMNS",
    "read_dataset",
    "write_dataset",
    "records_from_frame",
    "frame_from_records",
    "save_matrix",
    "load_matrix",
]
