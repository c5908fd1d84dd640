"""Functional connectivity feature learning with an age-conditioned VAE."""

from .analysis import StatsReport, build_report, pearson_with_p, roc_auc, select_asd_feature, ttest_ind
from .connectome import (
    ConnectivityTransformer,
    assemble_input,
    build_connectivity,
    devectorize,
    fcs,
    pearson_corr,
    vectorize_upper,
)
from .estimator import ConnectomeVAE
from .generator import fcs_delta, feature_delta, generate_matrix, manifold_grid
from .vae import (
    TrainConfig,
    VaeModel,
    decode,
    elbo_loss,
    encode,
    extract_features,
    load_checkpoint,
    reparameterize,
    save_checkpoint,
    split_dataset,
    train,
)

__version__ = "0.1.0"
