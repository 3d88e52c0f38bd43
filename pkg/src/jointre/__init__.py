"""Joint clinical entity and relation extraction with five-segment context pooling."""
from .autodiff import Tensor, backward, adam_step, AdamState, no_grad
from .config import EncoderConfig, NerConfig, ReConfig, TrainConfig, RunConfig, PRESETS, load_config
from .schema import DEFAULT_SCHEMA, RelationSchema
from .text import EntitySpan, RelationInstance, Sentence, Vocabulary, tokenize, encode_bio, decode_spans
from .i2b2 import StandoffDocument, generate_synthetic_corpus, parse_document, serialize
from .relation import segment_sentence, average_pool, relation_representation, generate_candidate_pairs, \
    downsample_negatives
from .metrics import PRF, ner_f1, re_f1
from .model import ModelBundle, evaluate, predict, predict_entities
from .trainer import fit, train_step, joint_loss, split_train_val

__version__ = "0.1.0"
