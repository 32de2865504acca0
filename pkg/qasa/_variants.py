from typing import Any, Dict, Literal

from .errors import ConfigurationError

VARIANT_TYPES = Literal["transformer", "qasa_classical", "qasa"]

SCALE_TYPES = Literal["full", "desk", "tiny"]

# Hyperparameters per scale. `None` entries fall back to the variant defaults below.
SCALES: Dict[SCALE_TYPES, Dict[str, Any]] = {
    "full": {
        "seq_len": 50,
        "d_model": 256,
        "num_heads": None,
        "d_ff": 1024,
        "num_layers": 4,
        "n_qubits": 8,
        "n_qlayers": 4,
    },
    "desk": {
        "seq_len": 32,
        "d_model": 64,
        "num_heads": 4,
        "d_ff": 128,
        "num_layers": 3,
        "n_qubits": 4,
        "n_qlayers": 2,
    },
    "tiny": {
        "seq_len": 4,
        "d_model": 8,
        "num_heads": 2,
        "d_ff": 16,
        "num_layers": 2,
        "n_qubits": 2,
        "n_qlayers": 1,
    },
}

VARIANTS: Dict[VARIANT_TYPES, Dict[str, Any]] = {
    "transformer": {"num_heads": 8, "quantum": False, "mlp_head": True, "embed_norm": False},
    "qasa_classical": {"num_heads": 4, "quantum": False, "mlp_head": True, "embed_norm": False},
    "qasa": {"num_heads": 4, "quantum": True, "mlp_head": False, "embed_norm": True},
}

VARIANT_PARAMS_DOC = f"""variant : str
        The architecture.
        Available options are: `"{'"`, `"'.join(list(VARIANTS.keys())[:-1])}"`,
        and `"{list(VARIANTS.keys())[-1]}"`.

        `"transformer"` and `"qasa_classical"` stack classical encoder layers on an
        unnormalized input projection and predict with a two-layer GELU MLP; `"qasa"`
        normalizes the input projection, replaces the last encoder layer with the
        quantum encoder layer and predicts with a single linear map.

    scale : str, default "full"
        The hyperparameter preset.
        Available options are: `"{'"`, `"'.join(list(SCALES.keys())[:-1])}"`,
        and `"{list(SCALES.keys())[-1]}"`."""


def variant_traits(variant: VARIANT_TYPES) -> Dict[str, Any]:
    try:
        return VARIANTS[variant]
    except KeyError:
        raise ConfigurationError(
            f"Unknown variant '{variant}'. Available options: {', '.join(VARIANTS)}.",
            field="model.variant",
        )


def scale_defaults(variant: VARIANT_TYPES, scale: SCALE_TYPES) -> Dict[str, Any]:
    traits = variant_traits(variant)
    try:
        preset = SCALES[scale]
    except KeyError:
        raise ConfigurationError(
            f"Unknown scale '{scale}'. Available options: {', '.join(SCALES)}."
        )
    return {
        key: traits[key] if value is None else value for key, value in preset.items()
    }
