"""Semi-supervised metric learning with episodic similarity-representation
meta-learning, plus a retrieval / re-ID evaluation harness."""

__version__ = "0.1.0"

from .autodiff import (
    DimensionError,
    GradTape,
    Tensor,
    backward,
    cosine_similarity,
    euclidean_distance,
    finite_diff_check,
    l2_normalize,
    matmul,
    relu,
)
from .data import (
    DataFormatError,
    Sample,
    SynthSpec,
    SyntheticData,
    export_embeddings,
    generate_synthetic,
    hide_labels,
    load_dataset,
    save_dataset,
    split_by_label_ratio,
)
from .episodes import (
    EpisodeSplit,
    LabeledSet,
    PairBatch,
    ReferenceBank,
    default_c_mt,
    sample_pk_batch,
    sample_references,
    split_episode,
    unlabeled_pair_batch,
)
from .evaluation import (
    EvalProtocol,
    EvalReport,
    GallerySet,
    Ranking,
    cmc,
    evaluate,
    kmeans_cluster,
    mean_average_precision,
    nmi,
    nmi_from_assignments,
    rank_gallery,
    recall_at_k,
)
from .losses import (
    SimilarityMeasure,
    SimilarityRepresentation,
    batch_loss,
    contrastive_over_pairs,
    feat_contrastive,
    sim_contrastive,
    similarity_matrix,
    similarity_representation,
)
from .model import (
    AdamState,
    EmbeddingModel,
    LrSchedule,
    adam_step,
    load_checkpoint,
    lr_at,
    save_checkpoint,
)
from .pseudo import (
    PairAudit,
    PseudoPairSet,
    assign_pseudo_pairs,
    audit_pairs,
    audit_table,
    sweep_threshold,
)
from .training import (
    NumericalError,
    TrainConfig,
    TrainLog,
    train_meta,
    train_semi,
    train_supervised,
)
