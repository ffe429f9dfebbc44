from .tul import (
    TULReport,
    TulClassifier,
    TulConfig,
    classification_report,
    macro_precision_recall,
    split_three_one_one,
    tul_train_eval,
)
from .hlc import (
    HLCReport,
    HomeCluster,
    dbscan_clusters,
    hlc_eps_sweep,
    hlc_report,
    home_location_clusters,
    nighttime_mask,
)
from .fm import (
    FMModel,
    FactorizationMachine,
    FeatureSpace,
    auc,
    fm_predict,
    fm_predict_batch,
    fm_predict_naive,
    fm_train,
    recommendation_examples,
)
