"""Corrosion-assessment toolkit: regression-tree ensembles with variable
importance, Levenberg-Marquardt networks with NARX forecasting, closed-form
ingress baselines, and hygrothermal risk classification."""

from .baselines import (
    CarbonationCoefficient,
    ChlorideErfParams,
    DnssAgingParams,
    FibCarbonationParams,
    baseline_comparison,
    carbonation_fib,
    carbonation_sqrt,
    chloride_erf,
    dnss_at,
    erf,
    fit_k,
    write_comparison_csv,
)
from .data import (
    CONTINUOUS,
    IGNORED,
    INPUT,
    NOMINAL,
    TARGET,
    Column,
    Dataset,
    NormalizationSpec,
    Partition,
    Schema,
    apply_normalization,
    drop_columns,
    encode_one_of_n,
    filter_rows,
    fit_normalization,
    ingest_csv,
    invert_normalization,
    kfold,
    moving_average_fill,
    normalize_dataset,
    read_schema,
    schema,
    split_holdout,
    write_csv,
    write_schema,
)
from .durability import (
    CorrosionStatus,
    HygroSample,
    PALETTE,
    RiskGrid,
    RiskLevel,
    build_risk_grid,
    classify_chemical,
    classify_corrosion,
    classify_frost,
    corrosion_rate,
    humidity_factor,
    render_grid,
    temperature_factor,
)
from .ensemble import (
    EnsembleModel,
    ImportanceReport,
    Scenario,
    load_ensemble,
    oob_error,
    permutation_importance,
    ranked_rows,
    save_ensemble,
    scenario_importance,
    splitgain_importance,
    top_k_share,
    train_bagged,
    train_lsboost,
    write_importance_csv,
)
from .errors import DuracastError
from .metrics import EvalReport, evaluate, repeated_evaluation, write_report_csv
from .neural import (
    Activation,
    LmState,
    MlpNetwork,
    NarxModel,
    early_stopping_curve,
    forward,
    jacobian,
    load_mlp,
    load_narx,
    make_mlp,
    narx_predict,
    narx_prepare,
    save_mlp,
    save_narx,
    sweep_hidden,
    train_lm,
    train_narx,
)
from .tree import (
    Internal,
    Leaf,
    SplitRule,
    StoppingCriteria,
    association,
    grow,
    load_tree,
    predict,
    predict_batch,
    save_tree,
)

__version__ = "0.1.0"
