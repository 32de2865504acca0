"""The three forecasting architectures: a vanilla Transformer, QASA_classical, and QASA.

All of them embed a univariate window of shape `(L, 1)` into `(L, d)`, add a
sinusoidal positional encoding, run a stack of post-norm encoder layers, and map the
representation of the last time step to a scalar prediction. QASA replaces the last
encoder layer with a quantum encoder layer, whose residual quantum projection runs a
parameterized circuit on every token.

The layer functions take the parameter registry of a :class:`Model` (a mapping from
parameter path to :class:`~qasa.autodiff.Tensor`) and the path prefix of their layer.
Every function accepts inputs with additional leading batch axes.
"""
import warnings
from dataclasses import asdict, dataclass, fields
from functools import lru_cache
from typing import Any, Dict, List, Mapping, Optional, Tuple, Union

import numpy as np

from . import circuit
from ._variants import (
    VARIANT_PARAMS_DOC,
    VARIANT_TYPES,
    SCALE_TYPES,
    scale_defaults,
    variant_traits,
)
from .autodiff import (
    Tensor,
    add,
    gelu,
    layer_norm,
    linear,
    matmul,
    reshape,
    scale,
    slice_last_timestep,
    softmax_last,
    swapaxes,
    tanh,
)
from .errors import ConfigurationError, ContractViolation, DimensionError

__all__ = [
    "ModelConfig",
    "Model",
    "instantiate_config",
    "parameter_shapes",
    "count_parameters",
    "sinusoidal_pe",
    "embed",
    "multi_head_attention",
    "ffn",
    "transformer_layer",
    "quantum_layer",
    "quantum_encoder_layer",
    "forward",
    "trace_shapes",
]

Params = Mapping[str, Tensor]
ShapeRow = Tuple[str, Tuple[int, ...], Tuple[int, ...]]

# angle slots per token above which selecting parameter shift warns
PARAMETER_SHIFT_SLOT_LIMIT = 64


@dataclass
class ModelConfig:
    """Hyperparameters of a model.

    Parameters
    ----------
    variant : {"transformer", "qasa_classical", "qasa"}, default "qasa"
        The architecture.

    seq_len : int, default 50
        Window length `L`.

    d_model : int, default 256
        Hidden dimension `d`.

    num_heads : int, default 4
        Attention heads `H`. Must divide `d_model`.

    d_ff : int, default 1024
        Hidden dimension of the feed-forward networks.

    num_layers : int, default 4
        Number of encoder layers `N`, including the quantum encoder layer of QASA.

    n_qubits : int, default 8
        Data wires `n` of the circuit (QASA only).

    n_qlayers : int, default 4
        Circuit layers `L_q` (QASA only).

    seed : int, default 42
        Seed of the parameter initialization.

    t_reference : float, default 50.0
        The sequence-length conditioning added to the circuit inputs is
        ``seq_len / t_reference``.

    diff_method : {"adjoint", "parameter_shift"}, default "adjoint"
        Gradient engine of the circuit.

    layer_norm_eps : float, default 1e-5
        Epsilon of every LayerNorm.

    init_std : float, default 0.02
        Standard deviation of the initial weight matrices. Biases start at zero,
        LayerNorm gains at one.

    theta_std : float, default 0.1
        Standard deviation of the initial circuit angles.
    """

    variant: VARIANT_TYPES = "qasa"
    seq_len: int = 50
    d_model: int = 256
    num_heads: int = 4
    d_ff: int = 1024
    num_layers: int = 4
    n_qubits: int = 8
    n_qlayers: int = 4
    seed: int = 42
    t_reference: float = 50.0
    diff_method: circuit.DIFF_METHOD_TYPES = "adjoint"
    layer_norm_eps: float = 1e-5
    init_std: float = 0.02
    theta_std: float = 0.1

    def validate(self) -> "ModelConfig":
        variant_traits(self.variant)
        for name in ("seq_len", "d_model", "num_heads", "d_ff", "num_layers"):
            if getattr(self, name) < 1:
                raise ConfigurationError(
                    f"{name} must be positive, got {getattr(self, name)}.",
                    field=f"model.{name}",
                )
        if self.d_model % self.num_heads:
            raise ConfigurationError(
                f"d_model ({self.d_model}) must be divisible by num_heads ({self.num_heads}).",
                field="model.num_heads",
            )
        if self.d_model % 2:
            raise ConfigurationError(
                f"The positional encoding needs an even d_model, got {self.d_model}.",
                field="model.d_model",
            )
        if self.is_quantum:
            for name in ("n_qubits", "n_qlayers"):
                if getattr(self, name) < 1:
                    raise ConfigurationError(
                        f"{name} must be positive, got {getattr(self, name)}.",
                        field=f"model.{name}",
                    )
        if self.diff_method not in circuit.DIFF_METHODS:
            raise ConfigurationError(
                f"Unknown diff_method '{self.diff_method}'. "
                f"Available options: {', '.join(circuit.DIFF_METHODS)}.",
                field="model.diff_method",
            )
        if not self.t_reference > 0:
            raise ConfigurationError(
                f"t_reference must be positive, got {self.t_reference}.",
                field="model.t_reference",
            )
        if not self.layer_norm_eps >= 0:
            raise ConfigurationError(
                f"layer_norm_eps must be non-negative, got {self.layer_norm_eps}.",
                field="model.layer_norm_eps",
            )
        return self

    @property
    def is_quantum(self) -> bool:
        return bool(variant_traits(self.variant)["quantum"])

    @property
    def t_scaled(self) -> float:
        return self.seq_len / self.t_reference

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any]) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        for key in raw:
            if key not in known:
                raise ConfigurationError(f"Unknown field 'model.{key}'.", field=f"model.{key}")
        return cls(**raw).validate()


def instantiate_config(
    variant: VARIANT_TYPES = "qasa", scale: SCALE_TYPES = "full", **overrides
) -> ModelConfig:
    return ModelConfig(variant=variant, **{**scale_defaults(variant, scale), **overrides}).validate()


instantiate_config.__doc__ = f"""Create a validated :class:`ModelConfig` from a preset.

    Parameters
    ----------
    {VARIANT_PARAMS_DOC}

    **overrides
        Any other :class:`ModelConfig` field.

    Returns
    -------
    ModelConfig
"""


def parameter_shapes(config: ModelConfig) -> List[Tuple[str, Tuple[int, ...]]]:
    """Ordered manifest of parameter paths and shapes.

    The order is fixed and defines the layout of checkpoint files.
    Weight matrices are stored input-major (applied as ``x @ W``).
    """
    d, d_ff = config.d_model, config.d_ff
    shapes: List[Tuple[str, Tuple[int, ...]]] = [
        ("embed.linear.weight", (1, d)),
        ("embed.linear.bias", (d,)),
    ]
    if variant_traits(config.variant)["embed_norm"]:
        shapes += [("embed.norm.gain", (d,)), ("embed.norm.bias", (d,))]
    for layer in range(config.num_layers):
        prefix = f"layers.{layer}"
        shapes += [
            (f"{prefix}.attn.{name}.weight", (d, d))
            for name in ("query", "key", "value", "output")
        ]
        shapes += [(f"{prefix}.norm1.gain", (d,)), (f"{prefix}.norm1.bias", (d,))]
        if config.is_quantum and layer == config.num_layers - 1:
            n = config.n_qubits
            shapes += [
                (f"{prefix}.quantum.down.weight", (d, n)),
                (f"{prefix}.quantum.up.weight", (n, d)),
                (f"{prefix}.quantum.theta", (config.n_qlayers, 2 * n + 1)),
            ]
        shapes += [
            (f"{prefix}.ffn.linear1.weight", (d, d_ff)),
            (f"{prefix}.ffn.linear1.bias", (d_ff,)),
            (f"{prefix}.ffn.linear2.weight", (d_ff, d)),
            (f"{prefix}.ffn.linear2.bias", (d,)),
            (f"{prefix}.norm2.gain", (d,)),
            (f"{prefix}.norm2.bias", (d,)),
        ]
    if variant_traits(config.variant)["mlp_head"]:
        shapes += [
            ("head.hidden.weight", (d, d)),
            ("head.hidden.bias", (d,)),
            ("head.out.weight", (d, 1)),
            ("head.out.bias", (1,)),
        ]
    else:
        shapes += [("head.weight", (d, 1)), ("head.bias", (1,))]
    return shapes


def count_parameters(config: ModelConfig) -> int:
    """Number of trainable scalars of a model built from `config`."""
    return sum(int(np.prod(shape)) for _, shape in parameter_shapes(config))


def _init_parameters(config: ModelConfig) -> Dict[str, Tensor]:
    rng = np.random.default_rng(config.seed)
    parameters = {}
    for path, shape in parameter_shapes(config):
        if path.endswith(".gain"):
            values = np.ones(shape)
        elif path.endswith(".bias"):
            values = np.zeros(shape)
        elif path.endswith(".theta"):
            values = circuit.init_theta(
                config.n_qubits, config.n_qlayers, rng, std=config.theta_std
            )
        else:
            values = rng.normal(0.0, config.init_std, size=shape)
        parameters[path] = Tensor(values, requires_grad=True)
    return parameters


class Model:
    """A model instance: its configuration and its named parameters.

    Parameters
    ----------
    config : ModelConfig
        The hyperparameters. Validated on construction.

    state : dict, optional
        Parameter arrays by path, e.g. as returned by :meth:`state_dict`. If not given,
        the parameters are initialized from `config.seed`.
    """

    def __init__(self, config: ModelConfig, state: Optional[Mapping[str, np.ndarray]] = None):
        self.config = config.validate()
        if config.is_quantum and config.diff_method == "parameter_shift":
            slots = config.n_qlayers * (2 * config.n_qubits + 1) + config.n_qubits
            if slots > PARAMETER_SHIFT_SLOT_LIMIT:
                warnings.warn(
                    f"The parameter-shift rule runs the circuit twice per angle slot "
                    f"({slots} slots here). Consider diff_method='adjoint'.",
                    UserWarning,
                )
        self.parameters: Dict[str, Tensor] = _init_parameters(config)
        if state is not None:
            self.load_state_dict(state)

    def __call__(self, x) -> Tensor:
        return forward(self, x)

    def __repr__(self):
        return f"Model(variant={self.config.variant!r}, parameters={self.num_parameters()})"

    def named_parameters(self) -> List[Tuple[str, Tensor]]:
        return list(self.parameters.items())

    def num_parameters(self) -> int:
        return sum(t.size for t in self.parameters.values())

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {path: t.values.copy() for path, t in self.parameters.items()}

    def load_state_dict(self, state: Mapping[str, np.ndarray]):
        missing = [path for path in self.parameters if path not in state]
        unexpected = [path for path in state if path not in self.parameters]
        if missing or unexpected:
            raise ConfigurationError(
                f"Parameters do not match the '{self.config.variant}' variant. "
                f"Missing: {missing}. Unexpected: {unexpected}."
            )
        for path, tensor in self.parameters.items():
            values = np.asarray(state[path], dtype=np.float64)
            if values.shape != tensor.shape:
                raise DimensionError(
                    f"Parameter '{path}' has shape {values.shape}, expected {tensor.shape}."
                )
            tensor.values = values.copy()


@lru_cache(maxsize=32)
def _pe_table(seq_len: int, d_model: int) -> np.ndarray:
    position = np.arange(seq_len)[:, None]
    frequency = 10000.0 ** (np.arange(0, d_model, 2) / d_model)
    table = np.empty((seq_len, d_model))
    table[:, 0::2] = np.sin(position / frequency)
    table[:, 1::2] = np.cos(position / frequency)
    table.flags.writeable = False
    return table


def sinusoidal_pe(seq_len: int, d_model: int) -> Tensor:
    """Fixed sinusoidal positional encoding of shape `(seq_len, d_model)`.

    ``PE[pos, 2i] = sin(pos / 10000**(2i / d))`` and
    ``PE[pos, 2i + 1] = cos(pos / 10000**(2i / d))``.
    """
    if d_model % 2:
        raise ContractViolation(f"The positional encoding needs an even d_model, got {d_model}.")
    return Tensor(_pe_table(seq_len, d_model))


def embed(x: Tensor, params: Params, config: ModelConfig) -> Tensor:
    """``LayerNorm(x @ W_e + b_e) + PE`` for windows `x` of shape `(..., L, 1)`.

    The classical baselines skip the LayerNorm and return ``x @ W_e + b_e + PE``.
    """
    if x.ndim < 2 or x.shape[-2:] != (config.seq_len, 1):
        raise DimensionError(
            f"Expected windows of shape (..., {config.seq_len}, 1), got {x.shape}."
        )
    h = linear(x, params["embed.linear.weight"], params["embed.linear.bias"])
    if variant_traits(config.variant)["embed_norm"]:
        h = layer_norm(
            h, params["embed.norm.gain"], params["embed.norm.bias"], eps=config.layer_norm_eps
        )
    pe = sinusoidal_pe(config.seq_len, config.d_model).values
    return add(h, Tensor(np.broadcast_to(pe, h.shape)))


def multi_head_attention(
    x: Tensor, params: Params, prefix: str, num_heads: int, return_weights: bool = False
) -> Union[Tensor, Tuple[Tensor, Tensor]]:
    """Multi-head scaled dot-product self-attention without masking.

    Head `j` uses columns ``[j * d_k, (j + 1) * d_k)`` of the query, key, and value
    projections, with ``d_k = d / num_heads``. The heads are concatenated and projected
    by the output matrix.

    Parameters
    ----------
    x : Tensor
        Tokens of shape `(..., L, d)`.

    params : mapping
        Parameter registry holding ``{prefix}.{query,key,value,output}.weight``.

    prefix : str
        Path prefix of the attention block, e.g. ``"layers.0.attn"``.

    num_heads : int
        Number of heads.

    return_weights : bool, default False
        Also return the attention weights of shape `(..., num_heads, L, L)`.

    Returns
    -------
    Tensor
        Array of shape `(..., L, d)`; followed by the attention weights if requested.
    """
    d = x.shape[-1]
    if d % num_heads:
        raise DimensionError(f"d={d} is not divisible by num_heads={num_heads}.")
    d_k = d // num_heads

    def split_heads(t: Tensor) -> Tensor:
        return swapaxes(reshape(t, t.shape[:-1] + (num_heads, d_k)), -3, -2)

    query = split_heads(linear(x, params[f"{prefix}.query.weight"]))
    key = split_heads(linear(x, params[f"{prefix}.key.weight"]))
    value = split_heads(linear(x, params[f"{prefix}.value.weight"]))

    weights = softmax_last(scale(matmul(query, swapaxes(key, -1, -2)), 1.0 / np.sqrt(d_k)))
    heads = matmul(weights, value)
    merged = reshape(swapaxes(heads, -3, -2), x.shape)
    out = linear(merged, params[f"{prefix}.output.weight"])
    return (out, weights) if return_weights else out


def ffn(x: Tensor, params: Params, prefix: str) -> Tensor:
    """Position-wise ``GELU(x @ W_1 + b_1) @ W_2 + b_2``."""
    hidden = gelu(
        linear(x, params[f"{prefix}.linear1.weight"], params[f"{prefix}.linear1.bias"])
    )
    return linear(hidden, params[f"{prefix}.linear2.weight"], params[f"{prefix}.linear2.bias"])


def _norm(x: Tensor, params: Params, prefix: str, eps: float) -> Tensor:
    return layer_norm(x, params[f"{prefix}.gain"], params[f"{prefix}.bias"], eps=eps)


def transformer_layer(h: Tensor, params: Params, prefix: str, config: ModelConfig) -> Tensor:
    """Post-norm encoder layer: ``z = LN(h + MHSA(h))``, then ``LN(z + FFN(z))``."""
    eps = config.layer_norm_eps
    attended = multi_head_attention(h, params, f"{prefix}.attn", config.num_heads)
    z = _norm(add(h, attended), params, f"{prefix}.norm1", eps)
    return _norm(add(z, ffn(z, params, f"{prefix}.ffn")), params, f"{prefix}.norm2", eps)


def quantum_layer(
    x: Tensor, t: float, params: Params, prefix: str, config: ModelConfig
) -> Tensor:
    """Residual quantum projection, applied to every token independently.

    ``h_q = tanh(x @ W_q) + t`` is fed to the circuit and the Pauli-Z expectation
    values are projected back: ``x + QC(h_q) @ W_o``.
    """
    if not np.isfinite(t):
        raise ContractViolation(f"The conditioning t must be finite, got {t}.")
    h_q = add(tanh(linear(x, params[f"{prefix}.down.weight"])), Tensor(t))
    expectations = circuit.quantum_node(
        h_q, params[f"{prefix}.theta"], config.n_qlayers, config.diff_method
    )
    return add(x, linear(expectations, params[f"{prefix}.up.weight"]))


def quantum_encoder_layer(
    h: Tensor,
    t: float,
    params: Params,
    prefix: str,
    config: ModelConfig,
    trace: Optional[List[ShapeRow]] = None,
) -> Tensor:
    """Encoder layer with the quantum projection between attention and FFN.

    ``h' = LN(h + MHSA(h))``, ``z = QuantumLayer(h', t)``, output ``LN(z + FFN(z))``.
    """
    eps = config.layer_norm_eps
    attended = multi_head_attention(h, params, f"{prefix}.attn", config.num_heads)
    h_prime = _norm(add(h, attended), params, f"{prefix}.norm1", eps)
    z = quantum_layer(h_prime, t, params, f"{prefix}.quantum", config)
    if trace is not None:
        trace.append(("QuantumLayer (QNN)", h_prime.shape, z.shape))
    return _norm(add(z, ffn(z, params, f"{prefix}.ffn")), params, f"{prefix}.norm2", eps)


def _head(h_last: Tensor, params: Params, config: ModelConfig) -> Tensor:
    if variant_traits(config.variant)["mlp_head"]:
        hidden = gelu(linear(h_last, params["head.hidden.weight"], params["head.hidden.bias"]))
        return linear(hidden, params["head.out.weight"], params["head.out.bias"])
    return linear(h_last, params["head.weight"], params["head.bias"])


def forward(model: Model, x, trace: Optional[List[ShapeRow]] = None) -> Tensor:
    """Predict the value following each window.

    Parameters
    ----------
    model : Model
        The model.

    x : Tensor or array_like
        A window of shape `(L, 1)` or a batch of windows of shape `(B, L, 1)`.

    trace : list, optional
        If given, `(layer, input shape, output shape)` rows are appended to it.

    Returns
    -------
    Tensor
        A scalar tensor for a single window, shape `(B,)` for a batch.
    """
    config, params = model.config, model.parameters
    x = x if isinstance(x, Tensor) else Tensor(x)
    if set(params) != {path for path, _ in parameter_shapes(config)}:
        raise ConfigurationError(
            f"The parameters of this model do not match the '{config.variant}' variant."
        )

    def record(layer: str, before: Tensor, after: Tensor):
        if trace is not None:
            trace.append((layer, before.shape, after.shape))

    record("Input", x, x)
    h = embed(x, params, config)
    if trace is not None:
        trace.append(("Linear Embedding", x.shape, h.shape))
        trace.append(("Positional Encoding", h.shape, h.shape))

    classical_layers = config.num_layers - 1 if config.is_quantum else config.num_layers
    for layer in range(classical_layers):
        before = h
        h = transformer_layer(h, params, f"layers.{layer}", config)
        record("Transformer Layer", before, h)

    if config.is_quantum:
        before = h
        h = quantum_encoder_layer(
            h, config.t_scaled, params, f"layers.{config.num_layers - 1}", config, trace
        )
        record("Quantum Encoder Layer", before, h)

    h_last = slice_last_timestep(h)
    prediction = _head(h_last, params, config)
    record("Final Linear", h_last, prediction)
    return reshape(prediction, prediction.shape[:-1])


def trace_shapes(model: Model) -> List[ShapeRow]:
    """Run one window of zeros through `model` and list the shapes at each layer."""
    trace: List[ShapeRow] = []
    forward(model, np.zeros((model.config.seq_len, 1)), trace=trace)
    return trace
