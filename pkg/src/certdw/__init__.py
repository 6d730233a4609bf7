"""certdw: certified dataset ownership verification.

Watermarked datasets are audited through a suspicious model's prediction
behaviour under additive noise: the watermark-robustness statistic of the
suspicious model is ranked, by conformal prediction, against the principal
probabilities of a population of benign models, and the decision carries a
certified region of trigger perturbations under which it provably survives.
"""

from .backend import backend_name
from .classifiers import (
    Classifier,
    LinearClassifier,
    MLPClassifier,
    TableClassifier,
    input_gradient,
    load_model,
    logits,
    predict,
    save_model,
)
from .conformal import (
    CalibrationSet,
    VerificationDecision,
    build_calibration_set,
    calibration_threshold,
    load_calibration,
    p_value,
    save_calibration,
    verify,
)
from .certify import (
    CertifiedRadius,
    CertifiedRegion,
    beta2_star_gaussian,
    beta2_star_uniform,
    certified_region,
    gaussian_certified_radius,
    gaussian_condition,
    generic_condition,
    save_region,
    tau_certified,
    uniform_condition,
    wca,
)
from .errors import (
    CertDWError,
    DegenerateTriggerError,
    DomainError,
    InsufficientCalibrationError,
    RepresentativeUnavailableError,
    TrainingFailureError,
    UnsupportedOperationError,
)
from .harness import (
    ExperimentConfig,
    VerificationReport,
    emit_report,
    load_report,
    perturbation_grid_sweep,
    run_pipeline,
)
from .numerics import (
    SeededStream,
    argmax_first,
    l2_rescale,
    std_normal_cdf,
    std_normal_quantile,
)
from .smoothing import (
    NoiseSpec,
    PredictionDistribution,
    analytic_pd_linear,
    estimate_pd,
    sample_noise,
)
from .stats import (
    ClassRepresentatives,
    principal_probability,
    select_class_representatives,
    stability,
    watermark_robustness,
)
from .toytrain import (
    LabeledDataset,
    evaluate_ba,
    evaluate_wsr,
    gen_toy_dataset,
    load_dataset,
    save_dataset,
    train_model,
)
from .watermark import (
    TriggerSpec,
    WatermarkedDataset,
    apply_trigger,
    load_trigger,
    make_badnets_trigger,
    make_blended_noise_trigger,
    make_blended_patch_trigger,
    poison_dataset,
    save_trigger,
    trigger_radius,
)

__version__ = "0.1.0"
