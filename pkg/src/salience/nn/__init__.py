from salience.nn.gradcheck import gradient_check, relative_error
from salience.nn.graph import LayerGraph, load_params, save_params
from salience.nn.layers import (LSTM, Dense, Embedding, dense_param_count, embedding_param_count,
                                lstm_param_count)
from salience.nn.optim import AdamState, adam_step

__all__ = [
    "LSTM", "Dense", "Embedding", "LayerGraph", "AdamState", "adam_step", "gradient_check",
    "relative_error", "save_params", "load_params", "dense_param_count", "lstm_param_count",
    "embedding_param_count",
]
