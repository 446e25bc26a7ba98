"""Knowledge-graph driven per-user autoencoders for top-N recommendation."""

from .autoencoder import (
    SemanticAutoencoder,
    SparseTopology,
    TrainConfig,
    TrainTrace,
    UserAutoencoder,
    aggregate_feature_weights,
    build_topology,
    compute_gradients,
    forward,
    gradcheck,
    train,
)
from .data import (
    InteractionDataset,
    Rating,
    SplitPair,
    holdout_split,
    normalize_rating,
    parse_genres,
    parse_movielens,
)
from .evaluation import (
    ColdScenario,
    EvaluationReport,
    ExperimentConfig,
    make_cold_scenario,
    restore_n_ratings,
    run_cold_experiment,
    select_cold_candidates,
)
from .exceptions import (
    ContractError,
    EmptyFeatureMapError,
    FormatError,
    ParseError,
    SparqlError,
    TrainingDiverged,
    UserNotTrainable,
)
from .kg import (
    ItemFeatureMap,
    extract_features,
    fetch_features_sparql,
    load_feature_map,
    parse_mapping,
    save_feature_map,
)
from .metrics import err_ia_at, f1_at, ndcg_at, precision_at, recall_at
from .profiles import (
    FeatureProfile,
    NeighborSet,
    build_profile,
    complete_profile,
    cosine_similarity,
    top_k_neighbors,
)
from .recommender import RankedList, SemAutoRecommender, recommend_top_n, score_item

__version__ = "0.1.0"
