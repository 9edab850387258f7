"""Python bindings for the dvme fusion toolkit."""

from ._dvme import (  # noqa: F401
    CapacityError,
    ConfigError,
    CrcError,
    DataError,
    Dataset,
    Error,
    FormatError,
    MagicError,
    NumericError,
    TruncationError,
    UndefinedMetricError,
    VersionError,
    aggregate,
    auc_binary,
    auc_macro_ovr,
    cohen_kappa,
    combine_leaderboard,
    count_params,
    count_probe_params,
    decode_embx,
    inspect_embx,
    make_folds,
    read_embx,
    run_dvme_cv,
    run_grad_suite,
    run_probe_cv,
    synth,
    write_embx,
)

__version__ = "0.1.0"
