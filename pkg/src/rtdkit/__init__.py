"""Replaced-token-detection pretraining and biomedical task fine-tuning on numpy."""

__version__ = "0.1.0"

from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig, default_config, load_config
from .data import read_bioasq, read_conll, read_re_tsv, read_squad
from .encoder import EncoderConfig, encode_batch, init_params
from .finetune import Recipe, finetune, load_model, predict_qa, save_model
from .metrics import entity_prf, f1, qa_metrics, relation_prf, score_table
from .pretraining import JointLossConfig, export_discriminator, pack_sequences, pretrain
from .text import Vocabulary, encode, load_vocabulary, wordpiece

__all__ = [
    "__version__",
    "EncoderConfig", "encode_batch", "init_params",
    "JointLossConfig", "pack_sequences", "pretrain", "export_discriminator",
    "Recipe", "finetune", "predict_qa", "save_model", "load_model",
    "RunConfig", "default_config", "load_config",
    "Vocabulary", "encode", "wordpiece", "load_vocabulary",
    "read_conll", "read_re_tsv", "read_squad", "read_bioasq",
    "entity_prf", "relation_prf", "qa_metrics", "f1", "score_table",
    "save_checkpoint", "load_checkpoint",
]
