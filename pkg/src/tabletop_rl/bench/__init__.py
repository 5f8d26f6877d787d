from .config import ALGORITHMS, RunConfig, run_config_from_file
from .curves import (
    AggregateRow,
    EvalRecord,
    aggregate_dir,
    aggregate_records,
    emit_curve,
    plot_success,
    read_aggregate,
    read_curve,
    write_aggregate,
)
from .harness import FinalSummary, RunArtifacts, evaluate, final_test, summarize_successes, train
from .oracle import IdlePolicy, ScriptedPicker, ScriptedPusher, scripted_policy
