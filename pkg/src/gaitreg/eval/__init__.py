from .evaluate import evaluate, read_cmc, write_report
from .features import MODE_COMPONENTS, FeatureTable, MissingComponent, extract_features, load_models
from .kernels import rank_queries
from .metrics import Metrics, NoValidPositives, cmc_map, euclidean_distance, protocol_filter
