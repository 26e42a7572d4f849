from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import ModelConfig, ModelPresets
from .mae import (LatentTokens, MaskedAutoencoder, count_parameters, decode, encode, init_model,
                  visible_ids_tensor)

__all__ = [
    'ModelConfig', 'ModelPresets', 'MaskedAutoencoder', 'LatentTokens',
    'init_model', 'encode', 'decode', 'count_parameters', 'visible_ids_tensor',
    'Checkpoint', 'save_checkpoint', 'load_checkpoint',
]
