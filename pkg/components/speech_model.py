"""
Speech Model
Desk-scale non-autoregressive acoustic model: token + positional + speaker
embeddings, encoder stack, variance adaptor, decoder stack, output linear and
a residual post-net.
"""

import copy
from dataclasses import dataclass
from typing import Dict, Optional

import numpy as np
from loguru import logger

from components.convolution import AdaptorParams, ConvLayer, postnet, variance_adaptor
from components.layout import parameter_layout, parameter_shapes
from components.transformer import block_params, sinusoidal_encoding, transformer_block
from config.settings import ModelConfig
from core.functional import linear
from core.tensor import Tensor, embedding, reshape
from utils.errors import DataError, UsageError
from utils.validators import validate_tensor_shapes

EMBEDDING_STD = 0.5
PADDING_BIAS = -1e9


@dataclass
class ModelOutput:
    """mel_before / mel_after are (..., L, n_mel); aux is (..., L)"""
    mel_before: Tensor
    mel_after: Tensor
    aux: Tensor


@dataclass
class ParameterView:
    """
    The tensors a forward pass reads

    A plain view holds the model's own tensors. A masked view (built by the
    prune plan) holds W * z products and, when model_d is gated, the model_d
    gate used to weight layer-norm statistics.
    """
    params: Dict[str, Tensor]
    channel_weight: Optional[Tensor] = None


def _initial_value(spec, config: ModelConfig, rng: np.random.Generator) -> np.ndarray:
    if spec.init == "zeros":
        return np.zeros(spec.shape)
    if spec.init == "ones":
        return np.ones(spec.shape)
    if spec.init == "embedding":
        return rng.normal(0.0, EMBEDDING_STD, spec.shape)
    if spec.init == "sinusoid":
        return sinusoidal_encoding(config.max_len, spec.shape[1])
    fan_in = int(np.prod(spec.shape[:-1]))
    return rng.normal(0.0, 1.0 / np.sqrt(fan_in), spec.shape)


class SpeechModel:
    """
    Parameter store plus forward pass

    Tensors are keyed by layout name. Buffers (the positional table) live in
    the same mapping but are excluded from `parameters()` and never train.
    """

    def __init__(self, config: ModelConfig, tensors: Dict[str, Tensor]):
        result = validate_tensor_shapes(
            parameter_shapes(config),
            {name: tensor.shape for name, tensor in tensors.items()}
        )
        if not result:
            raise DataError(f"model tensors do not match config: {result.message}")
        self.config = config
        self.tensors = tensors
        self._buffers = {spec.name for spec in parameter_layout(config) if spec.buffer}

    @classmethod
    def initialize(cls, config: ModelConfig, seed: int) -> "SpeechModel":
        """
        Fresh model with deterministic random weights

        Args:
            config: Architecture
            seed: Initialization seed

        Returns:
            SpeechModel
        """
        rng = np.random.default_rng(seed)
        tensors = {}
        for spec in parameter_layout(config):
            tensors[spec.name] = Tensor(
                _initial_value(spec, config, rng),
                requires_grad=not spec.buffer,
                name=spec.name
            )
        model = cls(config, tensors)
        logger.debug(f"Initialized model with {model.parameter_count()} parameters (seed={seed})")
        return model

    def parameters(self) -> Dict[str, Tensor]:
        """Trainable tensors in layout order"""
        return {name: t for name, t in self.tensors.items() if name not in self._buffers}

    def parameter_count(self) -> int:
        return sum(t.size for t in self.parameters().values())

    def view(self) -> ParameterView:
        return ParameterView(dict(self.tensors))

    def copy(self) -> "SpeechModel":
        tensors = {
            name: Tensor(t.data.copy(), requires_grad=t.requires_grad, name=name, dtype=t.data.dtype)
            for name, t in self.tensors.items()
        }
        return SpeechModel(copy.deepcopy(self.config), tensors)

    def add_speaker(self, init: str = "mean", rng: Optional[np.random.Generator] = None) -> int:
        """
        Append a speaker row for a new voice

        Args:
            init: "mean" of existing rows, or "random"
            rng: Generator for the random initialization

        Returns:
            Id of the new speaker
        """
        table = self.tensors["embed.speaker"]
        if init == "mean":
            row = table.data.mean(axis=0, keepdims=True)
        elif init == "random":
            rng = rng or np.random.default_rng(0)
            row = rng.normal(0.0, EMBEDDING_STD, (1, table.shape[1]))
        else:
            raise UsageError(f"unknown speaker init {init!r}; expected 'mean' or 'random'")
        data = np.concatenate([table.data, row.astype(table.data.dtype)], axis=0)
        self.tensors["embed.speaker"] = Tensor(data, requires_grad=True, name="embed.speaker", dtype=table.data.dtype)
        self.config.n_speakers += 1
        return self.config.n_speakers - 1

    # ------------------------------------------------------------------
    # forward
    # ------------------------------------------------------------------

    def _check_inputs(self, tokens: np.ndarray, speakers: np.ndarray) -> None:
        if tokens.ndim != 2:
            raise UsageError(f"forward_batch expects (B, L) token ids, got shape {tokens.shape}")
        length = tokens.shape[1]
        if length == 0:
            raise DataError("forward: empty sequence")
        if length > self.config.max_len:
            raise DataError(f"forward: sequence length {length} exceeds max_len {self.config.max_len}")
        if tokens.size and (tokens.min() < 0 or tokens.max() >= self.config.vocab_size):
            raise DataError(f"token id out of range [0, {self.config.vocab_size})")
        if speakers.shape != (tokens.shape[0],):
            raise UsageError(f"expected {tokens.shape[0]} speaker ids, got shape {speakers.shape}")
        n_speakers = self.tensors["embed.speaker"].shape[0]
        bad = speakers[(speakers < 0) | (speakers >= n_speakers)]
        if bad.size:
            raise DataError(f"unknown speaker id {int(bad[0])} (table has {n_speakers} rows)")

    def forward_batch(
        self,
        tokens: np.ndarray,
        speakers: np.ndarray,
        mask: Optional[np.ndarray] = None,
        view: Optional[ParameterView] = None
    ) -> ModelOutput:
        """
        Batched forward over padded sequences

        Args:
            tokens: (B, L) token ids
            speakers: (B,) speaker ids
            mask: (B, L) validity mask; None means no padding
            view: Tensors to read (defaults to the model's own)

        Returns:
            ModelOutput with batch-leading shapes
        """
        tokens = np.asarray(tokens, dtype=np.int64)
        speakers = np.asarray(speakers, dtype=np.int64).reshape(-1)
        self._check_inputs(tokens, speakers)
        batch, length = tokens.shape
        config = self.config
        view = view or self.view()
        p = view.params

        if mask is None:
            mask = np.ones((batch, length), dtype=bool)
            key_bias = None
        else:
            mask = np.asarray(mask, dtype=bool)
            key_bias = np.where(mask, 0.0, PADDING_BIAS)[:, None, :]

        d = p["embed.token"].shape[1]
        x = embedding(p["embed.token"], tokens) + p["pos_enc"][:length]
        x = x + reshape(embedding(p["embed.speaker"], speakers), (batch, 1, d))

        for prefix in config.layer_prefixes():
            if prefix.startswith("dec."):
                continue
            x = transformer_block(
                block_params(p, prefix, config.heads(prefix)), x,
                config.attention_scale, key_bias, view.channel_weight, config.ln_eps
            )

        adaptor = AdaptorParams(
            convs=[
                ConvLayer(p[f"adaptor.conv{j}.weight"], p[f"adaptor.conv{j}.bias"])
                for j in range(config.adaptor_layers)
            ],
            head_weight=p["adaptor.head.weight"],
            head_bias=p["adaptor.head.bias"],
            proj_weight=p["adaptor.proj.weight"],
            proj_bias=p["adaptor.proj.bias"],
        )
        x, aux = variance_adaptor(adaptor, x, mask)

        for prefix in config.layer_prefixes():
            if not prefix.startswith("dec."):
                continue
            x = transformer_block(
                block_params(p, prefix, config.heads(prefix)), x,
                config.attention_scale, key_bias, view.channel_weight, config.ln_eps
            )

        mel_before = linear(x, p["out.weight"], p["out.bias"])
        mel_after = postnet(
            [
                ConvLayer(p[f"postnet.conv{j}.weight"], p[f"postnet.conv{j}.bias"])
                for j in range(config.postnet_layers)
            ],
            mel_before,
            mask
        )
        return ModelOutput(mel_before, mel_after, aux)

    def forward(
        self,
        token_ids: np.ndarray,
        speaker_id: int,
        view: Optional[ParameterView] = None
    ) -> ModelOutput:
        """Single unpadded sequence; outputs are (L, n_mel) and (L,)"""
        tokens = np.asarray(token_ids, dtype=np.int64).reshape(1, -1)
        out = self.forward_batch(tokens, np.array([speaker_id]), None, view)
        return ModelOutput(out.mel_before[0], out.mel_after[0], out.aux[0])
