"""Warm-starting encoder-decoder models from pre-trained checkpoints, at toy scale."""

from ._core import (
    Error,
    TrainedModel,
    Vocabulary,
    archive_names,
    compute_metric,
    convert,
    count_params,
    count_params_table,
    evaluate,
    exit_code,
    generate_data,
    generate_task,
    glob_match,
    learning_rate,
    length_penalty,
    load_archive,
    parse_layer_list,
    predict,
    pretrain,
    rouge_pair,
    sari_sentence,
    scheme_names,
    train,
)

__all__ = [name for name in dir() if not name.startswith("_")]
