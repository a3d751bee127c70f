"""Kernels for bag-of-words data derived from the observation likelihood,
with an SMO trainer over precomputed Gram matrices, text and
spatial-pyramid feature pipelines, and brute-force verification oracles.
"""

from .counts import CountVector, FrequencyVector
from .errors import ConfigError, DataError, UsageError
from .gram import GramMatrix, build_gram, load_gram, load_gram_text, save_gram, save_gram_text
from .kernels import (
    FAMILIES,
    KernelSpec,
    kernel_ppk,
    kernel_rbf,
    kernel_sensing0,
    kernel_sensing1,
    kernel_sensing2,
    kernel_value,
    log_kernel_exact,
    resample_counts,
)
from .svm import (
    MulticlassModel,
    SvmModel,
    TrainConfig,
    decision_values,
    load_model,
    load_multiclass,
    predict_multiclass,
    save_model,
    save_multiclass,
    train_binary,
    train_one_vs_all,
)
from .text import (
    Corpus,
    RawDoc,
    TokenDoc,
    Vocabulary,
    build_corpus,
    build_vocabulary,
    load_corpus,
    load_stoplist,
    load_vocabulary,
    prepare_documents,
    read_class_dirs,
    read_tsv,
    remove_stopwords,
    save_corpus,
    save_vocabulary,
    strip_headers,
    tokenize,
    vectorize,
)
from .pyramid import (
    DescriptorSet,
    PyramidDoc,
    VisualVocabulary,
    build_pyramid,
    default_pyramid_weights,
    kmeans_fit,
    load_descriptors,
    load_descriptors_text,
    load_visual_vocabulary,
    pyramid_kernel,
    pyramid_level_kernel,
    quantize,
    save_descriptors,
    save_descriptors_text,
    save_visual_vocabulary,
)
from .oracles import (
    DirichletMixture,
    SyntheticModel,
    bayes_decision_closed,
    bayes_decision_quadrature,
    bayes_rule_closed,
    bayes_rule_numeric,
    generate_corpus,
    mc_expected_log_kernel,
    qp_oracle,
    simplex_integral_oracle,
)
from .harness import (
    AutoRbf,
    CvResult,
    CvRow,
    DocSet,
    ExperimentConfig,
    PrecomputedFeaturizer,
    Report,
    TextFeaturizer,
    assign_folds,
    cross_validate,
    median_frequency_distance,
    resolve_kernel,
    run_experiment,
    write_report,
)

__version__ = "0.1.0"
