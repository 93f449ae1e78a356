"""MI-code labeling and conversation analytics for chat-counseling transcripts."""

from .codes import (
    ALL_CODES,
    COVARIATE_CODES,
    MiCategory,
    MiCode,
    SatisfactionClass,
    SpeakerRole,
    TenureBucket,
)
from .corpus import (
    Conversation,
    ContextualUtterance,
    Corpus,
    Utterance,
    binarize_rating,
    build_context,
    filter_active_listeners,
    filter_min_length,
    parse_corpus,
    tenure_bucket,
    write_corpus,
)
from .features import FeatureVector, featurize
from .classifier import (
    CodeClassifier,
    EvalReport,
    ExternalModelRef,
    Hyper,
    ModelRegistry,
    evaluate,
    external_predict,
    load_registry,
    predict_code,
    predict_labels,
    save_registry,
    train_code_classifier,
    train_one_vs_all,
)
from .annotation import (
    AgreementReport,
    AlphaResult,
    LabelRecord,
    LabelStore,
    SuggestionQueue,
    agreement_report,
    krippendorff_alpha,
    record_decision,
    suggest,
    validation_sample,
)
from .satisfaction import (
    DesignRow,
    RegressionFit,
    WeightVector,
    build_design,
    class_weights,
    fit_weighted_logistic,
    odds_ratio,
    satisfaction_table,
    significance_stars,
)
from .trends import (
    CorrMatrix,
    TrendSeries,
    code_fraction_by_bucket,
    conversation_corr,
    cooccurrence_matrix,
    listener_corr,
    proportion_ci,
    tfidf_top_words,
)
from .simgen import GeneratorSpec, generate_corpus

__version__ = "0.1.0"
