# Components module: network building blocks and the speech model
from components.attention import AttentionParams, mha, self_attention
from components.convolution import AdaptorParams, ConvLayer, conv_stack, postnet, variance_adaptor
from components.feedforward import FfnParams, ffn
from components.layout import (
    MODEL_D,
    UNMASKED,
    DimSpec,
    TensorSpec,
    dimension_specs,
    parameter_layout,
    parameter_shapes,
)
from components.speech_model import ModelOutput, ParameterView, SpeechModel
from components.transformer import BlockParams, block_params, sinusoidal_encoding, transformer_block

__all__ = [
    "AttentionParams",
    "mha",
    "self_attention",
    "AdaptorParams",
    "ConvLayer",
    "conv_stack",
    "postnet",
    "variance_adaptor",
    "FfnParams",
    "ffn",
    "MODEL_D",
    "UNMASKED",
    "DimSpec",
    "TensorSpec",
    "dimension_specs",
    "parameter_layout",
    "parameter_shapes",
    "ModelOutput",
    "ParameterView",
    "SpeechModel",
    "BlockParams",
    "block_params",
    "sinusoidal_encoding",
    "transformer_block",
]
