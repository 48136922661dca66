"""Sequential label decoder over a bag-of-embeddings document encoder."""

from .model import (DecoderConfig, DecoderModel, DecoderTrace, Batch, allowed_mask, attention_output,
                    decode_batch, decode_gru, encode, encoding_matrix, forward_backward, forward_label_attention,
                    forward_linear, init_model, loss_boll, loss_ill, make_batch, mask_logits,
                    teacher_forced_trace)
from .nn import bce_loss, sigmoid
from .train import (DivergenceError, GradientCheckError, TrainingHistory, dataset_loss, gradient_check,
                    load, predict_batch, predict_decoder, relative_error, save, trace_labels,
                    train_decoder)

__all__ = [
    "Batch", "DecoderConfig", "DecoderModel", "DecoderTrace", "DivergenceError", "GradientCheckError",
    "TrainingHistory", "allowed_mask", "attention_output", "bce_loss", "dataset_loss", "decode_batch",
    "decode_gru", "encode", "encoding_matrix", "forward_backward", "forward_label_attention", "forward_linear",
    "gradient_check", "init_model", "load", "loss_boll", "loss_ill", "make_batch", "mask_logits",
    "predict_batch", "predict_decoder", "relative_error", "save", "sigmoid", "teacher_forced_trace",
    "trace_labels", "train_decoder",
]
