"""Modular proximity-graph vector search with an ablation benchmark harness."""

from .bench import RunRecord, recall, run_workload, write_records
from .build import (BuildParams, BuildStats, GraphIndex, NPParams, build_dc,
                    build_ii, build_vamana2r, knng_recall, nndescent)
from .data import (Dataset, QueryProvenance, QuerySet, SyntheticSpec,
                   gen_powerlaw, gen_powerlaw_queries, load_vectors,
                   make_noise_queries, sample_subset, save_vectors)
from .diversify import NDStrategy, prune, pruning_ratio
from .errors import (DataError, FormatError, ParameterError, ProxgraphError,
                     StorageError)
from .graph import (Graph, PartitionedIndex, degree_stats, reachable_fraction,
                    read_index, write_index)
from .metrics import (ComplexityReport, DistanceCounter, dataset_complexity,
                      euclidean, lid, lrc)
from .oracle import (GroundTruth, dataset_ground_truth, exact_knn, ground_truth,
                     load_ground_truth, save_ground_truth)
from .search import ResultSet, SearchStats, beam_search, search_partitioned
from .seeds import (SeedIndex, SeedStrategy, build_seed_index, compute_medoid,
                    sample_level, select_seeds)

__version__ = "0.1.0"
